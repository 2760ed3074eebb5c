mod common;

use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;
use regretlab_core::confidence::{self, kl_bernoulli, kl_categorical, log_term, region_radius, RadiusKind};
use regretlab_core::envs;
use regretlab_core::evi::{self, ExtendedMdp, KernelRegion};
use regretlab_core::mdp::{self, Mdp};
use regretlab_core::rng::RunStreams;
use regretlab_core::{AmbientSet, Family, RegionSpec, VisitStats};

use common::{random_mdp, rng};

const P_HAT: [f64; 3] = [0.5, 0.3, 0.2];
const V: [f64; 3] = [1.0, 0.0, -1.0];

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Every point of the simplex on a grid of step `1 / k`.
fn simplex_grid(k: usize) -> impl Iterator<Item = [f64; 3]> {
    (0..=k).flat_map(move |i| {
        (0..=k - i).map(move |j| {
            let a = i as f64 / k as f64;
            let b = j as f64 / k as f64;
            [a, b, (1.0 - a - b).max(0.0)]
        })
    })
}

fn grid_max(feasible: impl Fn(&[f64; 3]) -> bool) -> f64 {
    simplex_grid(1000).filter(|q| feasible(q)).map(|q| dot(&q, &V)).fold(f64::NEG_INFINITY, f64::max)
}

fn all_true(n: usize) -> Vec<bool> {
    vec![true; n]
}

#[test]
fn divergence_examples() {
    assert_abs_diff_eq!(kl_bernoulli(0.5, 0.75), 0.5 * (4.0f64 / 3.0).ln(), epsilon = 1e-15);
    assert_eq!(kl_bernoulli(0.3, 0.3), 0.0);
    assert_eq!(kl_bernoulli(0.3, 0.0), f64::INFINITY);
    assert_eq!(kl_bernoulli(0.0, 0.0), 0.0);
    assert_abs_diff_eq!(kl_bernoulli(0.0, 0.5), 2.0f64.ln(), epsilon = 1e-15);
    assert_abs_diff_eq!(kl_categorical(&[0.5, 0.5], &[0.25, 0.75]), 0.5 * (2.0f64).ln() + 0.5 * (2.0f64 / 3.0).ln(), epsilon = 1e-15);
    assert_eq!(kl_categorical(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
    assert_eq!(kl_categorical(&[1.0, 0.0], &[0.5, 0.5]), 2.0f64.ln());
    assert_abs_diff_eq!(log_term(1), 1.0 + 2.0f64.ln(), epsilon = 1e-15);
}

#[test]
fn kl_maximizer_matches_grid_search() {
    let eps = 0.05;
    let region = KernelRegion::Kl { p_hat: P_HAT.to_vec(), allowed: all_true(3), eps };
    let mut q = [0.0; 3];
    let value = region.maximize(&V, &mut q);
    let oracle = grid_max(|q| kl_categorical(&P_HAT, q) <= eps);
    assert!(value >= oracle - 1e-12, "{value} < {oracle}");
    assert!(value <= oracle + 3e-3, "{value} vs {oracle}");
    assert!(region.residual(&q) <= 1e-9);
}

#[test]
fn l1_maximizer_matches_grid_search() {
    let radius = 0.3;
    let region = KernelRegion::L1 { p_hat: P_HAT.to_vec(), allowed: all_true(3), radius };
    let mut q = [0.0; 3];
    let value = region.maximize(&V, &mut q);
    let oracle = grid_max(|q| q.iter().zip(&P_HAT).map(|(a, b)| (a - b).abs()).sum::<f64>() <= radius + 1e-12);
    assert_abs_diff_eq!(value, 0.6, epsilon = 1e-12);
    assert!(value >= oracle - 1e-12 && value <= oracle + 3e-3);
}

#[test]
fn box_maximizer_matches_grid_search() {
    let lower = vec![0.3, 0.1, 0.1];
    let upper = vec![0.6, 0.5, 0.4];
    let region = KernelRegion::Box { lower: lower.clone(), upper: upper.clone() };
    let mut q = [0.0; 3];
    let value = region.maximize(&V, &mut q);
    let oracle = grid_max(|q| (0..3).all(|i| q[i] >= lower[i] - 1e-12 && q[i] <= upper[i] + 1e-12));
    assert!(value >= oracle - 1e-12 && value <= oracle + 3e-3);
    assert_abs_diff_eq!(value, 0.5, epsilon = 1e-12);
}

#[test]
fn support_restriction_is_respected() {
    let allowed = vec![false, true, true];
    let region = KernelRegion::Kl { p_hat: vec![0.0, 0.6, 0.4], allowed: allowed.clone(), eps: 0.5 };
    let mut q = [0.0; 3];
    region.maximize(&V, &mut q);
    assert_eq!(q[0], 0.0);
    let ambient = KernelRegion::Ambient(allowed);
    assert_eq!(ambient.maximize(&V, &mut q), 0.0);
    assert_eq!(q, [0.0, 1.0, 0.0]);
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n).prop_map(|w| {
        let w: Vec<f64> = w.into_iter().map(|x| if x < 0.2 { 0.0 } else { x }).collect();
        let total: f64 = w.iter().sum();
        if total == 0.0 {
            let mut e = vec![0.0; w.len()];
            e[0] = 1.0;
            e
        } else {
            w.iter().map(|x| x / total).collect()
        }
    })
}

fn region_of(family: u8, p_hat: &[f64], size: f64) -> KernelRegion {
    let n = p_hat.len();
    match family {
        0 => KernelRegion::Kl { p_hat: p_hat.to_vec(), allowed: all_true(n), eps: size },
        1 => KernelRegion::L1 { p_hat: p_hat.to_vec(), allowed: all_true(n), radius: size },
        _ => KernelRegion::Box {
            lower: p_hat.iter().map(|p| (p - size).max(0.0)).collect(),
            upper: p_hat.iter().map(|p| (p + size).min(1.0)).collect(),
        },
    }
}

proptest! {
    #[test]
    fn maximizers_are_feasible(
        family in 0u8..3,
        p_hat in distribution(5),
        v in prop::collection::vec(-3.0f64..3.0, 5),
        size in 0.0f64..2.0,
    ) {
        let region = region_of(family, &p_hat, size);
        let mut q = vec![0.0; 5];
        let value = region.maximize(&v, &mut q);
        prop_assert!(region.residual(&q) <= 1e-9, "residual {}", region.residual(&q));
        prop_assert!((value - dot(&q, &v)).abs() <= 1e-12);
        // p̂ itself is feasible, so the maximum dominates it
        prop_assert!(value >= dot(&p_hat, &v) - 1e-9);
        prop_assert!(value <= v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 1e-12);
    }

    #[test]
    fn value_grows_with_region_size(
        family in 0u8..3,
        p_hat in distribution(4),
        v in prop::collection::vec(-3.0f64..3.0, 4),
        small in 0.0f64..1.0,
        extra in 0.0f64..1.0,
    ) {
        let mut q = vec![0.0; 4];
        let a = region_of(family, &p_hat, small).maximize(&v, &mut q);
        let b = region_of(family, &p_hat, small + extra).maximize(&v, &mut q);
        prop_assert!(b >= a - 1e-9, "{} < {}", b, a);
    }

    #[test]
    fn value_is_monotone_in_v(
        family in 0u8..3,
        p_hat in distribution(4),
        v in prop::collection::vec(-3.0f64..3.0, 4),
        bump in prop::collection::vec(0.0f64..1.0, 4),
        size in 0.0f64..1.0,
    ) {
        let region = region_of(family, &p_hat, size);
        let w: Vec<f64> = v.iter().zip(&bump).map(|(a, b)| a + b).collect();
        let mut q = vec![0.0; 4];
        let a = region.maximize(&v, &mut q);
        let b = region.maximize(&w, &mut q);
        prop_assert!(b >= a - 1e-9);
        // shifting v by a constant shifts the value by the same constant
        let shifted: Vec<f64> = v.iter().map(|x| x + 0.7).collect();
        let c = region.maximize(&shifted, &mut q);
        prop_assert!((c - a - 0.7).abs() <= 1e-8);
    }

    #[test]
    fn radii_shrink_with_visits_and_grow_with_scale(
        family in 0u8..3,
        t in 1u64..1_000_000,
        n in 1u64..10_000,
        scale in 0.1f64..10.0,
    ) {
        let family = [Family::Kl, Family::L1, Family::Bernstein][family as usize];
        let layout = mdp::Layout::new(&[2, 2, 2]).unwrap();
        let spec = RegionSpec::new(family, AmbientSet::free(&layout));
        let wide = spec.clone().with_scale(scale.max(1.0));
        let narrow = spec.with_scale(scale.min(1.0));
        for kind in [RadiusKind::Reward, RadiusKind::Kernel] {
            let r = region_radius(&narrow, kind, t, n, 3);
            prop_assert!(region_radius(&narrow, kind, t, n + 1, 3) <= r);
            prop_assert!(region_radius(&narrow, kind, t + 1, n, 3) >= r);
            prop_assert!(region_radius(&wide, kind, t, n, 3) >= r);
        }
    }
}

fn simulate_stats(m: &Mdp, steps: u64, seed: u64) -> VisitStats {
    let mut streams = RunStreams::new(seed);
    let mut stats = VisitStats::new(m.layout());
    let mut r = rng(seed ^ 0xABCD);
    let mut s = 0;
    for _ in 0..steps {
        let a = r.gen_range(0..m.layout().n_actions(s));
        let z = m.layout().pair(s, a);
        let (reward, next) = envs::step(m, z, &mut streams);
        stats.update(z, reward, next);
        s = next;
    }
    stats
}

#[test]
fn visit_statistics_track_updates() {
    let layout = mdp::Layout::new(&[1, 2]).unwrap();
    let mut stats = VisitStats::new(&layout);
    assert_eq!(stats.t(), 1);
    stats.update(1, true, 1);
    stats.update(1, false, 0);
    stats.update(2, true, 0);
    assert_eq!(stats.t(), 4);
    assert_eq!(stats.all_visits(), &[0, 2, 1]);
    assert_eq!(stats.reward_sum(1), 1);
    assert_abs_diff_eq!(stats.mean_reward(1), 0.5);
    assert_eq!(stats.mean_kernel(1), vec![0.5, 0.5]);
    assert_eq!(stats.trans_counts(2), &[1, 0]);
}

#[test]
fn sampled_rewards_follow_their_means() {
    let m = envs::figure7().unwrap();
    let stats = simulate_stats(&m, 200_000, 8);
    for z in 0..m.n_pairs() {
        let n = stats.visits(z) as f64;
        let se = (m.reward(z) * (1.0 - m.reward(z)) / n).sqrt();
        assert!((stats.mean_reward(z) - m.reward(z)).abs() <= 4.0 * se + 1e-12, "pair {z}");
    }
}

#[test]
fn regions_cover_the_true_model() {
    let m = envs::riverswim(4).unwrap();
    for family in [Family::Kl, Family::L1, Family::Bernstein] {
        let spec = RegionSpec::new(family, AmbientSet::free(m.layout()));
        let covered = (0..50).filter(|&seed| confidence::contains(&spec, &simulate_stats(&m, 5_000, seed), &m)).count();
        assert!(covered >= 48, "{family:?} covered {covered}/50");
    }
}

#[test]
fn evi_is_optimistic_and_its_model_is_in_the_region() {
    let mut r = rng(12);
    for case in 0..40 {
        let m = random_mdp(&mut r, 3, 2, case % 2 == 0);
        let family = [Family::Kl, Family::L1, Family::Bernstein][case % 3];
        let spec = RegionSpec::new(family, AmbientSet::free(m.layout()));
        let stats = simulate_stats(&m, 2_000 + 500 * case as u64, case as u64);
        let t = stats.t();
        let eps = 1e-8;
        let result = evi::evi_solve(&spec, &stats, m.layout(), t, eps).unwrap();
        assert!(result.final_span < eps);
        assert!(confidence::contains(&spec, &stats, &result.optimistic_model), "case {case}");
        if confidence::contains(&spec, &stats, &m) {
            let g_star = mdp::optimal_solve(&m, 1e-10).unwrap().optimal_gain();
            assert!(result.optimistic_gain >= g_star - eps, "case {case}: {} < {g_star}", result.optimistic_gain);
        }
        // the returned policy is near-optimal in the returned model
        let v = mdp::policy_eval(&result.optimistic_model, &result.policy).unwrap();
        assert!(v.gain.iter().all(|&g| g >= result.optimistic_gain - 1e-6), "case {case}");
    }
}

#[test]
fn unvisited_pairs_are_fully_optimistic() {
    let m = envs::riverswim(3).unwrap();
    let spec = RegionSpec::new(Family::Kl, AmbientSet::free(m.layout()));
    let stats = VisitStats::new(m.layout());
    let result = evi::evi_solve(&spec, &stats, m.layout(), 1, 1e-10).unwrap();
    assert_abs_diff_eq!(result.optimistic_gain, 1.0, epsilon = 1e-9);
    let ext = ExtendedMdp::from_region(&spec, &stats, m.layout(), 1).unwrap();
    assert!((0..m.n_pairs()).all(|z| ext.reward_max(z) == 1.0));
}
