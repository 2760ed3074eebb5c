//! Extended value iteration over a confidence region.

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::confidence::{
    self, bernstein_halfwidth, kl_bernoulli, region_radius, Family, KernelConstraint, RadiusKind,
    RegionError, RegionSpec, RewardRule, VisitStats,
};
use crate::mdp::{min_max, span, Layout, Mdp, Policy};

pub const DEFAULT_MAX_SWEEPS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EviError {
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error("extended value iteration did not converge after {iterations} sweeps (span {span:e})")]
    NoConvergence { iterations: usize, span: f64 },
}

/// Upper end of the reward confidence interval of pair `z`.
pub fn inner_max_reward(spec: &RegionSpec, stats: &VisitStats, z: usize, t: u64) -> f64 {
    let (lo, hi) = spec.ambient.reward_bounds[z];
    let n = stats.visits(z);
    if n == 0 {
        return hi;
    }
    let r_hat = stats.mean_reward(z);
    match (spec.family, spec.reward_rule) {
        (Family::Kl, RewardRule::Family) => {
            let radius = region_radius(spec, RadiusKind::Reward, t, n, stats.n_states());
            kl_upper(r_hat, radius, lo, hi)
        }
        (Family::Bernstein, RewardRule::Family) => {
            let w = bernstein_halfwidth(r_hat, t, n, spec.radius_scale);
            (r_hat + w).min(hi).max(lo)
        }
        _ => {
            let w = region_radius(spec, RadiusKind::Reward, t, n, stats.n_states());
            (r_hat + w).min(hi).max(lo)
        }
    }
}

/// Largest `q` in `[lo, hi]` with `kl(p, q) <= radius`.
fn kl_upper(p: f64, radius: f64, lo: f64, hi: f64) -> f64 {
    if radius <= 0.0 {
        return p.clamp(lo, hi);
    }
    if kl_bernoulli(p, hi) <= radius || p >= hi {
        return hi;
    }
    let mut a = p.max(lo);
    if kl_bernoulli(p, a) > radius {
        // the interval misses the region; its nearest point is the best we have
        return a;
    }
    let mut b = hi;
    while b - a > 1e-12 {
        let mid = 0.5 * (a + b);
        if kl_bernoulli(p, mid) <= radius {
            a = mid;
        } else {
            b = mid;
        }
    }
    a
}

/// Feasible set for one pair's next-state distribution.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelRegion {
    /// Exactly this row.
    Fixed(Vec<f64>),
    /// Any distribution on the allowed states.
    Ambient(Vec<bool>),
    /// `KL(p̂ ‖ q) <= eps` with `supp(q)` inside the allowed states.
    Kl { p_hat: Vec<f64>, allowed: Vec<bool>, eps: f64 },
    /// `‖q - p̂‖₁ <= radius`.
    L1 { p_hat: Vec<f64>, allowed: Vec<bool>, radius: f64 },
    /// Per-coordinate box intersected with the simplex.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl KernelRegion {
    /// Writes a maximizer of `q . v` into `q` and returns the maximum.
    pub fn maximize(&self, v: &[f64], q: &mut [f64]) -> f64 {
        match self {
            Self::Fixed(row) => {
                q.copy_from_slice(row);
            }
            Self::Ambient(allowed) => {
                q.fill(0.0);
                q[best_allowed(v, allowed)] = 1.0;
            }
            Self::Kl { p_hat, allowed, eps } => kl_maximize(p_hat, allowed, *eps, v, q),
            Self::L1 { p_hat, allowed, radius } => l1_maximize(p_hat, allowed, *radius, v, q),
            Self::Box { lower, upper } => box_maximize(lower, upper, v, q),
        }
        q.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Amount by which `q` violates the region (0 when feasible).
    pub fn residual(&self, q: &[f64]) -> f64 {
        let sum: f64 = q.iter().sum();
        let mut worst = (sum - 1.0).abs().max(q.iter().fold(0.0, |acc: f64, &x| acc.max(-x)));
        let outside = |allowed: &[bool]| {
            q.iter()
                .zip(allowed)
                .filter(|(_, &ok)| !ok)
                .fold(0.0, |acc: f64, (&x, _)| acc.max(x.abs()))
        };
        match self {
            Self::Fixed(row) => {
                worst = worst.max(q.iter().zip(row).fold(0.0, |acc: f64, (a, b)| acc.max((a - b).abs())));
            }
            Self::Ambient(allowed) => worst = worst.max(outside(allowed)),
            Self::Kl { p_hat, allowed, eps } => {
                worst = worst.max(outside(allowed));
                worst = worst.max(confidence::kl_categorical(p_hat, q) - eps);
            }
            Self::L1 { p_hat, allowed, radius } => {
                worst = worst.max(outside(allowed));
                let l1: f64 = q.iter().zip(p_hat).map(|(a, b)| (a - b).abs()).sum();
                worst = worst.max(l1 - radius);
            }
            Self::Box { lower, upper } => {
                for ((&x, &lo), &hi) in q.iter().zip(lower).zip(upper) {
                    worst = worst.max(lo - x).max(x - hi);
                }
            }
        }
        worst.max(0.0)
    }
}

/// Lowest-index allowed state with the largest value.
fn best_allowed(v: &[f64], allowed: &[bool]) -> usize {
    let mut best = usize::MAX;
    for (i, &ok) in allowed.iter().enumerate() {
        if ok && (best == usize::MAX || v[i] > v[best]) {
            best = i;
        }
    }
    best
}

/// `f(nu) = sum_Z p_i ln(nu - v_i) + ln sum_Z p_i / (nu - v_i)` and its
/// derivative.
fn kl_dual(p_hat: &[f64], v: &[f64], nu: f64) -> (f64, f64) {
    let mut log_part = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (&p, &x) in p_hat.iter().zip(v) {
        if p > 0.0 {
            let d = nu - x;
            log_part += p * libm::log(d);
            s1 += p / d;
            s2 += p / (d * d);
        }
    }
    (log_part + libm::log(s1), s1 - s2 / s1)
}

fn kl_maximize(p_hat: &[f64], allowed: &[bool], eps: f64, v: &[f64], q: &mut [f64]) {
    let mut v_max = f64::NEG_INFINITY;
    let mut v_min = f64::INFINITY;
    for (&p, &x) in p_hat.iter().zip(v) {
        if p > 0.0 {
            v_max = v_max.max(x);
            v_min = v_min.min(x);
        }
    }
    // best allowed state outside the empirical support
    let mut star = usize::MAX;
    for (i, (&ok, &p)) in allowed.iter().zip(p_hat).enumerate() {
        if ok && p == 0.0 && (star == usize::MAX || v[i] > v[star]) {
            star = i;
        }
    }
    let fill = |nu: f64, outside: f64, q: &mut [f64]| {
        let total: f64 = p_hat
            .iter()
            .zip(v)
            .filter(|(&p, _)| p > 0.0)
            .map(|(&p, &x)| p / (nu - x))
            .sum();
        for i in 0..q.len() {
            q[i] = if p_hat[i] > 0.0 {
                (1.0 - outside) * p_hat[i] / (nu - v[i]) / total
            } else {
                0.0
            };
        }
    };

    if eps <= 0.0 {
        q.copy_from_slice(p_hat);
        return;
    }
    if star != usize::MAX && v[star] > v_max {
        let (f_star, _) = kl_dual(p_hat, v, v[star]);
        if f_star < eps {
            let outside = 1.0 - libm::exp(f_star - eps);
            fill(v[star], outside, q);
            q[star] = outside;
            return;
        }
    }
    let scale = (v_max - v_min).max(1e-300);
    if v_max - v_min <= 1e-15 * (1.0 + v_max.abs()) {
        // flat on the support: the value cannot improve without outside mass
        q.copy_from_slice(p_hat);
        return;
    }
    // bracket the root of f(nu) = eps on (v_max, inf); f decreases to 0
    let mut lo = v_max;
    let mut hi = v_max + scale;
    while kl_dual(p_hat, v, hi).0 > eps {
        lo = hi;
        hi = v_max + 2.0 * (hi - v_max);
    }
    let tol = 1e-12 * scale;
    let mut x = hi;
    for _ in 0..200 {
        let (f, df) = kl_dual(p_hat, v, x);
        if f > eps {
            lo = x;
        } else {
            hi = x;
        }
        if (f - eps).abs() <= 1e-14 * (1.0 + eps) || hi - lo <= tol {
            break;
        }
        let newton = x - (f - eps) / df;
        x = if df < 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    // a Newton iterate may overshoot by rounding error; otherwise take the
    // feasible end of the closed bracket
    let (f_x, _) = kl_dual(p_hat, v, x);
    let nu = if f_x <= eps + 1e-13 * (1.0 + eps) { x } else { hi };
    fill(nu, 0.0, q);
}

fn l1_maximize(p_hat: &[f64], allowed: &[bool], radius: f64, v: &[f64], q: &mut [f64]) {
    q.copy_from_slice(p_hat);
    let best = best_allowed(v, allowed);
    let moved = (0.5 * radius).min(1.0 - q[best]);
    if moved <= 0.0 {
        return;
    }
    q[best] += moved;
    let mut order: Vec<usize> = (0..q.len()).filter(|&i| i != best).collect();
    // lowest value first; among equal values drain the highest index first
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(b.cmp(&a)));
    let mut excess = moved;
    for i in order {
        if excess <= 0.0 {
            break;
        }
        // relative slack absorbs the rounding of the running excess
        if q[i] <= excess * (1.0 + 1e-12) {
            excess -= q[i];
            q[i] = 0.0;
        } else {
            q[i] -= excess;
            excess = 0.0;
        }
    }
}

fn box_maximize(lower: &[f64], upper: &[f64], v: &[f64], q: &mut [f64]) {
    q.copy_from_slice(lower);
    let mut remaining = 1.0 - lower.iter().sum::<f64>();
    let mut order: Vec<usize> = (0..q.len()).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    for i in order {
        if remaining <= 0.0 {
            break;
        }
        let add = (upper[i] - lower[i]).min(remaining);
        q[i] += add;
        remaining -= add;
    }
}

/// Kernel region of pair `z` under `spec`.
pub fn kernel_region(spec: &RegionSpec, stats: &VisitStats, z: usize, t: u64) -> Result<KernelRegion, RegionError> {
    let n_states = stats.n_states();
    let constraint = &spec.ambient.kernel[z];
    if let KernelConstraint::Fixed(row) = constraint {
        return Ok(KernelRegion::Fixed(row.clone()));
    }
    let mut allowed = constraint.allowed(n_states);
    if !allowed.iter().any(|&ok| ok) {
        return Err(RegionError::EmptySupport(z));
    }
    let n = stats.visits(z);
    if n == 0 {
        return Ok(KernelRegion::Ambient(allowed));
    }
    let p_hat = stats.mean_kernel(z);
    // observed transitions are possible whatever the prior said
    for (ok, &p) in allowed.iter_mut().zip(&p_hat) {
        *ok |= p > 0.0;
    }
    let radius = region_radius(spec, RadiusKind::Kernel, t, n, n_states);
    Ok(match spec.family {
        Family::Kl => KernelRegion::Kl { p_hat, allowed, eps: radius },
        Family::L1 => KernelRegion::L1 { p_hat, allowed, radius },
        Family::Bernstein => {
            let mut lower = vec![0.0; n_states];
            let mut upper = vec![0.0; n_states];
            for i in 0..n_states {
                if allowed[i] {
                    let w = bernstein_halfwidth(p_hat[i], t, n, spec.radius_scale);
                    lower[i] = (p_hat[i] - w).max(0.0);
                    upper[i] = (p_hat[i] + w).min(1.0);
                }
            }
            KernelRegion::Box { lower, upper }
        }
    })
}

/// Maximizer and value of `q . v` over the kernel region of pair `z`.
pub fn inner_max_kernel(
    spec: &RegionSpec,
    stats: &VisitStats,
    z: usize,
    t: u64,
    v: &[f64],
) -> Result<(Vec<f64>, f64), RegionError> {
    let region = kernel_region(spec, stats, z, t)?;
    let mut q = vec![0.0; v.len()];
    let value = region.maximize(v, &mut q);
    Ok((q, value))
}

/// An extended MDP: per pair, an optimistic reward and a kernel region.
#[derive(Clone, Debug)]
pub struct ExtendedMdp {
    layout: Layout,
    reward_max: Vec<f64>,
    kernels: Vec<KernelRegion>,
}

impl ExtendedMdp {
    pub fn new(layout: Layout, reward_max: Vec<f64>, kernels: Vec<KernelRegion>) -> Self {
        assert_eq!(reward_max.len(), layout.n_pairs());
        assert_eq!(kernels.len(), layout.n_pairs());
        Self {
            layout,
            reward_max,
            kernels,
        }
    }

    /// The confidence region of `spec` at step `t`.
    pub fn from_region(spec: &RegionSpec, stats: &VisitStats, layout: &Layout, t: u64) -> Result<Self, RegionError> {
        let reward_max = (0..layout.n_pairs()).map(|z| inner_max_reward(spec, stats, z, t)).collect();
        let kernels = (0..layout.n_pairs())
            .map(|z| kernel_region(spec, stats, z, t))
            .collect::<Result<_, _>>()?;
        Ok(Self::new(layout.clone(), reward_max, kernels))
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn reward_max(&self, z: usize) -> f64 {
        self.reward_max[z]
    }

    pub fn kernel(&self, z: usize) -> &KernelRegion {
        &self.kernels[z]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopRule {
    /// `span(B u - u) < epsilon`: the usual rule for communicating models.
    Span,
    /// The increment vector stabilizes: `max |d_n - d_{n-1}| < epsilon`.
    /// Needed when the evaluated chain may have several recurrent classes.
    GainVector,
}

#[derive(Clone, Debug)]
pub struct EviOptions<'a> {
    pub epsilon: f64,
    pub max_sweeps: usize,
    /// Evaluate this policy instead of maximizing over actions.
    pub policy: Option<&'a Policy>,
    pub stop: StopRule,
}

impl EviOptions<'_> {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            max_sweeps: DEFAULT_MAX_SWEEPS,
            policy: None,
            stop: StopRule::Span,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EviResult {
    pub policy: Policy,
    /// Midpoint of the range of the last increment `B u - u`.
    pub optimistic_gain: f64,
    /// Last increment, one entry per state.
    pub increments: Vec<f64>,
    pub optimistic_bias: Vec<f64>,
    /// Optimistic reward and maximizing kernel row of every pair at the
    /// final iterate.
    pub optimistic_model: Mdp,
    pub iterations: usize,
    pub final_span: f64,
}

/// Runs extended value iteration on the confidence region of `spec`.
pub fn evi_solve(spec: &RegionSpec, stats: &VisitStats, layout: &Layout, t: u64, epsilon: f64) -> Result<EviResult, EviError> {
    let ext = ExtendedMdp::from_region(spec, stats, layout, t)?;
    evi_solve_extended(&ext, &EviOptions::new(epsilon))
}

pub fn evi_solve_extended(ext: &ExtendedMdp, opts: &EviOptions<'_>) -> Result<EviResult, EviError> {
    let layout = ext.layout();
    let n = layout.n_states();
    let n_pairs = layout.n_pairs();
    let mut u = vec![0.0; n];
    let mut bu = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut prev_diff = vec![f64::NAN; n];
    let mut choice = vec![0usize; n];
    let mut q = vec![0.0; n];
    let mut sweeps = 0;
    let mut last_span;
    loop {
        sweeps += 1;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            let mut best_z = 0;
            let candidates = match opts.policy {
                Some(pi) => {
                    let z = pi.pair(layout, s);
                    z..z + 1
                }
                None => layout.pairs_of(s),
            };
            for z in candidates {
                let value = ext.reward_max[z] + ext.kernels[z].maximize(&u, &mut q);
                if value > best {
                    best = value;
                    best_z = z;
                }
            }
            bu[s] = best;
            choice[s] = best_z;
            diff[s] = bu[s] - u[s];
        }
        last_span = match opts.stop {
            StopRule::Span => span(&diff),
            StopRule::GainVector => diff
                .iter()
                .zip(&prev_diff)
                .fold(0.0, |acc: f64, (a, b)| if b.is_nan() { f64::INFINITY } else { acc.max((a - b).abs()) }),
        };
        if last_span < opts.epsilon {
            break;
        }
        if sweeps >= opts.max_sweeps {
            return Err(EviError::NoConvergence {
                iterations: sweeps,
                span: last_span,
            });
        }
        prev_diff.copy_from_slice(&diff);
        for s in 0..n {
            u[s] = 0.5 * (bu[s] + u[s]);
        }
        let (lo, _) = min_max(&u);
        u.iter_mut().for_each(|x| *x -= lo);
    }

    let (lo, hi) = min_max(&diff);
    let mut rewards = Vec::with_capacity(n_pairs);
    let mut kernel = Vec::with_capacity(n_pairs * n);
    for z in 0..n_pairs {
        rewards.push(ext.reward_max[z]);
        ext.kernels[z].maximize(&u, &mut q);
        kernel.extend_from_slice(&q);
    }
    let optimistic_model = Mdp::from_parts(layout.clone(), rewards, kernel)
        .expect("maximizers are valid rewards and distributions");
    let policy = Policy::new(choice.iter().map(|&z| layout.action_of(z)).collect());
    Ok(EviResult {
        policy,
        optimistic_gain: 0.5 * (lo + hi),
        increments: diff,
        optimistic_bias: u,
        optimistic_model,
        iterations: sweeps,
        final_span: last_span,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::AmbientSet;
    use approx::assert_abs_diff_eq;

    fn kl_region(p_hat: &[f64], eps: f64) -> KernelRegion {
        KernelRegion::Kl {
            p_hat: p_hat.to_vec(),
            allowed: vec![true; p_hat.len()],
            eps,
        }
    }

    #[test]
    fn kl_reward_inversion() {
        let r = kl_upper(0.5, 0.5 * (4.0f64 / 3.0).ln(), 0.0, 1.0);
        assert_abs_diff_eq!(r, 0.75, epsilon = 1e-10);
        assert_eq!(kl_upper(0.5, 0.0, 0.0, 1.0), 0.5);
        assert_eq!(kl_upper(0.3, 0.1, 0.0, 0.4), 0.4);
    }

    #[test]
    fn zero_radius_returns_empirical() {
        let p = [0.5, 0.3, 0.2];
        let v = [1.0, 0.0, -1.0];
        let mut q = [0.0; 3];
        let value = kl_region(&p, 0.0).maximize(&v, &mut q);
        assert_eq!(q, p);
        assert_abs_diff_eq!(value, 0.3, epsilon = 1e-15);
        let l1 = KernelRegion::L1 {
            p_hat: p.to_vec(),
            allowed: vec![true; 3],
            radius: 0.0,
        };
        l1.maximize(&v, &mut q);
        assert_eq!(q, p);
    }

    #[test]
    fn wide_l1_is_dirac() {
        let region = KernelRegion::L1 {
            p_hat: vec![0.5, 0.3, 0.2],
            allowed: vec![true; 3],
            radius: 2.0,
        };
        let mut q = [0.0; 3];
        let value = region.maximize(&[0.0, 2.0, 1.0], &mut q);
        assert_eq!(q, [0.0, 1.0, 0.0]);
        assert_eq!(value, 2.0);
    }

    #[test]
    fn kl_constraint_is_tight_and_respected() {
        let p = [0.5, 0.3, 0.2];
        let v = [1.0, 0.0, -1.0];
        let region = kl_region(&p, 0.05);
        let mut q = [0.0; 3];
        let value = region.maximize(&v, &mut q);
        let kl = confidence::kl_categorical(&p, &q);
        assert!(kl <= 0.05 + 1e-12, "{kl}");
        assert!(kl >= 0.05 - 1e-9, "{kl}");
        assert!(value > 0.3);
        assert!(region.residual(&q) <= 1e-9);
    }

    #[test]
    fn kl_puts_mass_outside_support_when_worth_it() {
        let p = [0.5, 0.5, 0.0];
        let v = [0.0, 0.0, 1.0];
        let mut q = [0.0; 3];
        kl_region(&p, 0.1).maximize(&v, &mut q);
        assert_abs_diff_eq!(q[2], 1.0 - (-0.1f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(confidence::kl_categorical(&p, &q), 0.1, epsilon = 1e-12);
    }

    #[test]
    fn bernstein_box_fills_best_first() {
        let region = KernelRegion::Box {
            lower: vec![0.2, 0.1, 0.3],
            upper: vec![0.6, 0.5, 0.4],
        };
        let mut q = [0.0; 3];
        region.maximize(&[0.0, 1.0, 0.5], &mut q);
        assert_abs_diff_eq!(q[1], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(q[2], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(q[0], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn no_data_gives_gain_one() {
        let layout = Layout::new(&[2, 2, 2]).unwrap();
        let stats = VisitStats::new(&layout);
        let spec = RegionSpec::new(Family::Kl, AmbientSet::free(&layout));
        let res = evi_solve(&spec, &stats, &layout, 1, 1e-10).unwrap();
        assert_abs_diff_eq!(res.optimistic_gain, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn exact_region_recovers_optimal_gain() {
        let m = Mdp::new(
            &[2, 2],
            vec![0.49, 0.09, 0.51, 0.08],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]],
        )
        .unwrap();
        let ext = ExtendedMdp::new(
            m.layout().clone(),
            m.rewards().to_vec(),
            (0..m.n_pairs()).map(|z| KernelRegion::Fixed(m.row(z).to_vec())).collect(),
        );
        let res = evi_solve_extended(&ext, &EviOptions::new(1e-10)).unwrap();
        assert_abs_diff_eq!(res.optimistic_gain, 0.51, epsilon = 2e-10);
        assert_eq!(res.policy, Policy::new(vec![1, 0]));
    }
}
