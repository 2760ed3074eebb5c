//! Visit statistics and confidence regions.
//!
//! Radii follow one union-bound budget, `f(t) = ln(2 e t)`, for every family:
//!
//! | family    | reward                               | kernel                                      |
//! |-----------|--------------------------------------|---------------------------------------------|
//! | KL        | `n kl(r̂, r) <= f(t)`                 | `n KL(p̂ ‖ q) <= |S| f(t)`                    |
//! | L1        | `|r - r̂| <= sqrt(f(t) / 2n)`          | `‖q - p̂‖₁ <= sqrt(2 (|S| ln 2 + f(t)) / n)`  |
//! | Bernstein | per-coordinate `sqrt(2 v f/n) + 7f/3n` with `v = p̂(1 - p̂)`                          |
//!
//! All thresholds are multiplied by `radius_scale`. A pair with no visits has
//! the full ambient set as its region.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::mdp::{Layout, Mdp};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RegionError {
    #[error("pair {0} has an empty allowed kernel support")]
    EmptySupport(usize),
    #[error("pair {pair} has an invalid reward interval [{lo}, {hi}]")]
    BadRewardInterval { pair: usize, lo: f64, hi: f64 },
    #[error("ambient set covers {got} pairs, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("pair {0}: constraint vector has the wrong length")]
    RowLength(usize),
    #[error("radius scale must be positive and finite, got {0}")]
    BadScale(f64),
}

/// Sufficient statistics of a run: `t` is the index of the next step, so
/// `sum_z visits(z) = t - 1`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VisitStats {
    n_states: usize,
    t: u64,
    visits: Vec<u64>,
    reward_ones: Vec<u64>,
    trans_counts: Vec<u64>,
}

impl VisitStats {
    pub fn new(layout: &Layout) -> Self {
        let n_pairs = layout.n_pairs();
        let n_states = layout.n_states();
        Self {
            n_states,
            t: 1,
            visits: vec![0; n_pairs],
            reward_ones: vec![0; n_pairs],
            trans_counts: vec![0; n_pairs * n_states],
        }
    }

    pub fn update(&mut self, z: usize, reward: bool, next: usize) {
        self.t += 1;
        self.visits[z] += 1;
        self.reward_ones[z] += u64::from(reward);
        self.trans_counts[z * self.n_states + next] += 1;
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_pairs(&self) -> usize {
        self.visits.len()
    }

    pub fn visits(&self, z: usize) -> u64 {
        self.visits[z]
    }

    pub fn all_visits(&self) -> &[u64] {
        &self.visits
    }

    pub fn reward_sum(&self, z: usize) -> u64 {
        self.reward_ones[z]
    }

    pub fn trans_counts(&self, z: usize) -> &[u64] {
        &self.trans_counts[z * self.n_states..(z + 1) * self.n_states]
    }

    /// Empirical reward mean; `0.5` before the first visit.
    pub fn mean_reward(&self, z: usize) -> f64 {
        match self.visits[z] {
            0 => 0.5,
            n => self.reward_ones[z] as f64 / n as f64,
        }
    }

    /// Empirical next-state distribution; uniform before the first visit.
    pub fn mean_kernel(&self, z: usize) -> Vec<f64> {
        let n = self.visits[z];
        if n == 0 {
            return vec![1.0 / self.n_states as f64; self.n_states];
        }
        self.trans_counts(z).iter().map(|&c| c as f64 / n as f64).collect()
    }
}

/// Prior constraint on a pair's next-state distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelConstraint {
    /// Any distribution over all states.
    Free,
    /// Any distribution supported inside the mask.
    Support(Vec<bool>),
    /// The kernel row is known exactly.
    Fixed(Vec<f64>),
}

impl KernelConstraint {
    /// States that may receive mass.
    pub fn allowed(&self, n_states: usize) -> Vec<bool> {
        match self {
            Self::Free => vec![true; n_states],
            Self::Support(mask) => mask.clone(),
            Self::Fixed(row) => row.iter().map(|&p| p > 0.0).collect(),
        }
    }

    pub fn admits(&self, row: &[f64]) -> bool {
        match self {
            Self::Free => true,
            Self::Support(mask) => row.iter().zip(mask).all(|(&p, &ok)| ok || p == 0.0),
            Self::Fixed(fixed) => row.iter().zip(fixed).all(|(p, q)| (p - q).abs() <= 1e-12),
        }
    }
}

/// Product-form prior set: one reward interval and one kernel constraint per
/// pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientSet {
    pub reward_bounds: Vec<(f64, f64)>,
    pub kernel: Vec<KernelConstraint>,
}

impl AmbientSet {
    /// Rewards in `[0, 1]`, kernels anywhere on the simplex.
    pub fn free(layout: &Layout) -> Self {
        Self {
            reward_bounds: vec![(0.0, 1.0); layout.n_pairs()],
            kernel: vec![KernelConstraint::Free; layout.n_pairs()],
        }
    }

    /// Rewards free, kernel known and equal to `m`'s.
    pub fn fixed_kernel(m: &Mdp) -> Self {
        Self {
            reward_bounds: vec![(0.0, 1.0); m.n_pairs()],
            kernel: (0..m.n_pairs()).map(|z| KernelConstraint::Fixed(m.row(z).to_vec())).collect(),
        }
    }

    /// Rewards free, kernel supports restricted to those of `m`.
    pub fn support_of(m: &Mdp) -> Self {
        Self {
            reward_bounds: vec![(0.0, 1.0); m.n_pairs()],
            kernel: (0..m.n_pairs())
                .map(|z| KernelConstraint::Support(m.row(z).iter().map(|&p| p > 0.0).collect()))
                .collect(),
        }
    }

    pub fn validate(&self, layout: &Layout) -> Result<(), RegionError> {
        let expected = layout.n_pairs();
        if self.reward_bounds.len() != expected || self.kernel.len() != expected {
            return Err(RegionError::Shape {
                expected,
                got: self.reward_bounds.len().min(self.kernel.len()),
            });
        }
        for (pair, &(lo, hi)) in self.reward_bounds.iter().enumerate() {
            if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
                return Err(RegionError::BadRewardInterval { pair, lo, hi });
            }
        }
        let n = layout.n_states();
        for (pair, constraint) in self.kernel.iter().enumerate() {
            match constraint {
                KernelConstraint::Free => {}
                KernelConstraint::Support(mask) => {
                    if mask.len() != n {
                        return Err(RegionError::RowLength(pair));
                    }
                    if !mask.iter().any(|&ok| ok) {
                        return Err(RegionError::EmptySupport(pair));
                    }
                }
                KernelConstraint::Fixed(row) => {
                    let sum: f64 = row.iter().sum();
                    if row.len() != n || row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > 1e-12 {
                        return Err(RegionError::RowLength(pair));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, m: &Mdp) -> bool {
        (0..m.n_pairs()).all(|z| {
            let (lo, hi) = self.reward_bounds[z];
            (lo..=hi).contains(&m.reward(z)) && self.kernel[z].admits(m.row(z))
        })
    }

    pub fn is_fixed_kernel(&self) -> bool {
        self.kernel.iter().all(|k| matches!(k, KernelConstraint::Fixed(_)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Kl,
    L1,
    Bernstein,
}

/// How the reward part of the region is built.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RewardRule {
    /// The reward test of the region's family.
    Family,
    /// Hoeffding interval `|r - r̂| <= sqrt(2 ln(c t) / n)`; UCYCLE uses
    /// `c = |S| |A|`.
    Hoeffding { log_scale: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RadiusKind {
    Reward,
    Kernel,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionSpec {
    pub family: Family,
    pub ambient: AmbientSet,
    pub radius_scale: f64,
    pub reward_rule: RewardRule,
}

impl RegionSpec {
    pub fn new(family: Family, ambient: AmbientSet) -> Self {
        Self {
            family,
            ambient,
            radius_scale: 1.0,
            reward_rule: RewardRule::Family,
        }
    }

    /// Hoeffding rewards with the kernel known exactly.
    pub fn ucycle(m: &Mdp) -> Self {
        let layout = m.layout();
        Self {
            family: Family::L1,
            ambient: AmbientSet::fixed_kernel(m),
            radius_scale: 1.0,
            reward_rule: RewardRule::Hoeffding {
                log_scale: (layout.n_states() * layout.max_actions()) as f64,
            },
        }
    }

    pub fn with_scale(mut self, radius_scale: f64) -> Self {
        self.radius_scale = radius_scale;
        self
    }

    pub fn validate(&self, layout: &Layout) -> Result<(), RegionError> {
        if !(self.radius_scale > 0.0 && self.radius_scale.is_finite()) {
            return Err(RegionError::BadScale(self.radius_scale));
        }
        self.ambient.validate(layout)
    }
}

/// `ln(2 e t)`.
pub fn log_term(t: u64) -> f64 {
    1.0 + core::f64::consts::LN_2 + libm::log(t.max(1) as f64)
}

/// Bernoulli divergence `kl(p, q)`, `+inf` when `q` sits on a boundary that
/// `p` does not share.
pub fn kl_bernoulli(p: f64, q: f64) -> f64 {
    let term = |a: f64, b: f64| -> f64 {
        if a <= 0.0 {
            0.0
        } else if b <= 0.0 {
            f64::INFINITY
        } else {
            a * libm::log(a / b)
        }
    };
    (term(p, q) + term(1.0 - p, 1.0 - q)).max(0.0)
}

/// `KL(p ‖ q)`, `+inf` unless `supp(p) ⊆ supp(q)`.
pub fn kl_categorical(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        if a <= 0.0 {
            continue;
        }
        if b <= 0.0 {
            return f64::INFINITY;
        }
        total += a * libm::log(a / b);
    }
    total.max(0.0)
}

/// Bernstein half-width for one coordinate with empirical mean `p_hat`.
pub fn bernstein_halfwidth(p_hat: f64, t: u64, n: u64, scale: f64) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let f = log_term(t);
    let n = n as f64;
    scale * (libm::sqrt(2.0 * p_hat * (1.0 - p_hat) * f / n) + 7.0 * f / (3.0 * n))
}

/// Region threshold for one pair with `n` visits at step `t`.
///
/// KL: bound on the divergence. L1: reward half-width or kernel L1 radius.
/// Bernstein: per-coordinate half-width at the widest variance `p̂ = 1/2`
/// (the exact per-coordinate value is [`bernstein_halfwidth`]).
pub fn region_radius(spec: &RegionSpec, kind: RadiusKind, t: u64, n: u64, s_count: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    let f = log_term(t);
    let nf = n as f64;
    let c = spec.radius_scale;
    if let (RadiusKind::Reward, RewardRule::Hoeffding { log_scale }) = (kind, spec.reward_rule) {
        return c * libm::sqrt(2.0 * libm::log(log_scale * t.max(1) as f64).max(0.0) / nf);
    }
    match (spec.family, kind) {
        (Family::Kl, RadiusKind::Reward) => c * f / nf,
        (Family::Kl, RadiusKind::Kernel) => c * s_count as f64 * f / nf,
        (Family::L1, RadiusKind::Reward) => c * libm::sqrt(f / (2.0 * nf)),
        (Family::L1, RadiusKind::Kernel) => {
            c * libm::sqrt(2.0 * (s_count as f64 * core::f64::consts::LN_2 + f) / nf)
        }
        (Family::Bernstein, _) => bernstein_halfwidth(0.5, t, n, c),
    }
}

/// Reward interval `[lo, hi]` of a pair before intersecting with the ambient
/// interval, for the interval-shaped rules (everything but KL).
pub(crate) fn reward_halfwidth(spec: &RegionSpec, stats: &VisitStats, z: usize) -> f64 {
    let n = stats.visits(z);
    match (spec.family, spec.reward_rule) {
        (Family::Bernstein, RewardRule::Family) => {
            bernstein_halfwidth(stats.mean_reward(z), stats.t(), n, spec.radius_scale)
        }
        _ => region_radius(spec, RadiusKind::Reward, stats.t(), n, stats.n_states()),
    }
}

// Guards against rejecting points that sit exactly on a region boundary.
const BOUNDARY_SLACK: f64 = 1e-12;

/// Whether `m` lies in the confidence region built from `stats`.
pub fn contains(spec: &RegionSpec, stats: &VisitStats, m: &Mdp) -> bool {
    if !spec.ambient.contains(m) {
        return false;
    }
    let n_states = m.n_states();
    (0..m.n_pairs()).all(|z| {
        let n = stats.visits(z);
        if n == 0 {
            return true;
        }
        let r_hat = stats.mean_reward(z);
        let reward_ok = match (spec.family, spec.reward_rule) {
            (Family::Kl, RewardRule::Family) => {
                kl_bernoulli(r_hat, m.reward(z)) <= region_radius(spec, RadiusKind::Reward, stats.t(), n, n_states) + BOUNDARY_SLACK
            }
            _ => (m.reward(z) - r_hat).abs() <= reward_halfwidth(spec, stats, z) + BOUNDARY_SLACK,
        };
        if !reward_ok {
            return false;
        }
        if matches!(spec.ambient.kernel[z], KernelConstraint::Fixed(_)) {
            return true;
        }
        let p_hat = stats.mean_kernel(z);
        let q = m.row(z);
        let radius = region_radius(spec, RadiusKind::Kernel, stats.t(), n, n_states);
        match spec.family {
            Family::Kl => kl_categorical(&p_hat, q) <= radius + BOUNDARY_SLACK,
            Family::L1 => {
                let l1: f64 = p_hat.iter().zip(q).map(|(a, b)| (a - b).abs()).sum();
                l1 <= radius + BOUNDARY_SLACK
            }
            Family::Bernstein => p_hat.iter().zip(q).all(|(&a, &b)| {
                (a - b).abs() <= bernstein_halfwidth(a, stats.t(), n, spec.radius_scale) + BOUNDARY_SLACK
            }),
        }
    })
}
