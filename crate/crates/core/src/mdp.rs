//! Exact planning and structural analysis of known finite MDPs.
//!
//! Pairs `(s, a)` are addressed by a canonical pair-major index: all actions of
//! state 0 first, then state 1, and so on. Every per-pair vector in the crate
//! (rewards, kernel rows, visit counts, gaps, CSV columns) uses that order.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write as _;
use core::ops::Range;

use thiserror::Error;

use crate::chain::{self, ChainValue, Gauge};

/// Tolerance on kernel row sums.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Default tolerance for `optimal_solve`.
pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;
/// Default iteration budget for value iteration.
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;
/// Above this many deterministic policies, Bellman-optimality enumeration is
/// restricted to weakly-optimal actions.
pub const POLICY_ENUMERATION_CAP: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("state {0} has no actions")]
    NoActions(usize),
    #[error("kernel row of pair {pair} is not a probability vector (sum {sum})")]
    InvalidRow { pair: usize, sum: f64 },
    #[error("reward mean {value} of pair {pair} is outside [0, 1]")]
    RewardOutOfRange { pair: usize, value: f64 },
    #[error("model is not communicating: state {to} is unreachable from state {from}")]
    NotCommunicating { from: usize, to: usize },
    #[error("policy picks action {action} in state {state}, which does not exist")]
    InvalidPolicy { state: usize, action: usize },
    #[error("singular linear system while evaluating a policy")]
    Singular,
    #[error("value iteration did not converge after {iterations} iterations (span {span:e})")]
    NoConvergence { iterations: usize, span: f64 },
}

/// Shape of a tabular state-action space.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    offsets: Vec<usize>,
    pair_state: Vec<usize>,
}

impl Layout {
    /// `actions[s]` is the number of actions available in state `s`.
    pub fn new(actions: &[usize]) -> Result<Self, MdpError> {
        if actions.is_empty() {
            return Err(MdpError::Shape("at least one state is required".into()));
        }
        let mut offsets = Vec::with_capacity(actions.len() + 1);
        let mut pair_state = Vec::new();
        offsets.push(0);
        for (s, &count) in actions.iter().enumerate() {
            if count == 0 {
                return Err(MdpError::NoActions(s));
            }
            pair_state.extend(core::iter::repeat(s).take(count));
            offsets.push(pair_state.len());
        }
        Ok(Self {
            offsets,
            pair_state,
        })
    }

    pub fn n_states(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn n_pairs(&self) -> usize {
        self.pair_state.len()
    }

    pub fn n_actions(&self, s: usize) -> usize {
        self.offsets[s + 1] - self.offsets[s]
    }

    pub fn max_actions(&self) -> usize {
        (0..self.n_states()).map(|s| self.n_actions(s)).max().unwrap_or(0)
    }

    pub fn actions_per_state(&self) -> Vec<usize> {
        (0..self.n_states()).map(|s| self.n_actions(s)).collect()
    }

    pub fn pair(&self, s: usize, a: usize) -> usize {
        debug_assert!(a < self.n_actions(s));
        self.offsets[s] + a
    }

    pub fn pairs_of(&self, s: usize) -> Range<usize> {
        self.offsets[s]..self.offsets[s + 1]
    }

    pub fn state_of(&self, z: usize) -> usize {
        self.pair_state[z]
    }

    pub fn action_of(&self, z: usize) -> usize {
        z - self.offsets[self.pair_state[z]]
    }

    /// Number of deterministic stationary policies, saturating.
    pub fn policy_count(&self) -> usize {
        (0..self.n_states()).fold(1usize, |acc, s| acc.saturating_mul(self.n_actions(s)))
    }
}

/// A deterministic stationary policy: one action index per state.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Policy(pub Vec<usize>);

impl Policy {
    pub fn new(choice: Vec<usize>) -> Self {
        Self(choice)
    }

    /// Action 0 in every state.
    pub fn first_actions(layout: &Layout) -> Self {
        Self(vec![0; layout.n_states()])
    }

    pub fn action(&self, s: usize) -> usize {
        self.0[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.0
    }

    pub fn pair(&self, layout: &Layout, s: usize) -> usize {
        layout.pair(s, self.0[s])
    }

    pub fn validate(&self, layout: &Layout) -> Result<(), MdpError> {
        if self.0.len() != layout.n_states() {
            return Err(MdpError::Shape(format!(
                "policy has {} entries for {} states",
                self.0.len(),
                layout.n_states()
            )));
        }
        for (state, &action) in self.0.iter().enumerate() {
            if action >= layout.n_actions(state) {
                return Err(MdpError::InvalidPolicy { state, action });
            }
        }
        Ok(())
    }

    /// 64-bit FNV-1a over the action table; stable across platforms.
    pub fn hash64(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for &a in &self.0 {
            for byte in (a as u64).to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// Enumerates deterministic policies whose actions pass `allowed`, in
/// lexicographic order (state 0 varies slowest).
pub fn enumerate_policies(
    layout: &Layout,
    mut allowed: impl FnMut(usize, usize) -> bool,
) -> Vec<Policy> {
    let choices: Vec<Vec<usize>> = (0..layout.n_states())
        .map(|s| (0..layout.n_actions(s)).filter(|&a| allowed(s, a)).collect())
        .collect();
    if choices.iter().any(|c| c.is_empty()) {
        return Vec::new();
    }
    let n = choices.len();
    let mut digits = vec![0usize; n];
    let mut out = Vec::new();
    loop {
        out.push(Policy((0..n).map(|s| choices[s][digits[s]]).collect()));
        let mut s = n;
        loop {
            if s == 0 {
                return out;
            }
            s -= 1;
            digits[s] += 1;
            if digits[s] < choices[s].len() {
                break;
            }
            digits[s] = 0;
        }
    }
}

/// Ground-truth environment: Bernoulli reward means and categorical kernels.
#[derive(Clone, Debug, PartialEq)]
pub struct Mdp {
    layout: Layout,
    rewards: Vec<f64>,
    kernel: Vec<f64>,
}

impl Mdp {
    /// Builds and validates a communicating MDP.
    pub fn new(actions: &[usize], rewards: Vec<f64>, kernel: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        let m = Self::stochastic(actions, rewards, kernel)?;
        m.check_communicating()?;
        Ok(m)
    }

    /// Builds an MDP with valid rewards and stochastic rows but without
    /// requiring it to be communicating (optimistic models, witnesses).
    pub fn stochastic(actions: &[usize], rewards: Vec<f64>, kernel: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        let layout = Layout::new(actions)?;
        let n = layout.n_states();
        if kernel.len() != layout.n_pairs() {
            return Err(MdpError::Shape(format!(
                "{} kernel rows for {} pairs",
                kernel.len(),
                layout.n_pairs()
            )));
        }
        let mut flat = Vec::with_capacity(n * kernel.len());
        for row in &kernel {
            if row.len() != n {
                return Err(MdpError::Shape(format!("kernel row of length {} for {} states", row.len(), n)));
            }
            flat.extend_from_slice(row);
        }
        Self::from_parts(layout, rewards, flat)
    }

    pub fn from_parts(layout: Layout, rewards: Vec<f64>, kernel: Vec<f64>) -> Result<Self, MdpError> {
        let n = layout.n_states();
        if rewards.len() != layout.n_pairs() {
            return Err(MdpError::Shape(format!(
                "{} rewards for {} pairs",
                rewards.len(),
                layout.n_pairs()
            )));
        }
        if kernel.len() != layout.n_pairs() * n {
            return Err(MdpError::Shape("flat kernel has the wrong length".into()));
        }
        for (pair, &value) in rewards.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(MdpError::RewardOutOfRange { pair, value });
            }
        }
        for pair in 0..layout.n_pairs() {
            let row = &kernel[pair * n..(pair + 1) * n];
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(MdpError::InvalidRow { pair, sum });
            }
        }
        Ok(Self {
            layout,
            rewards,
            kernel,
        })
    }

    pub fn check_communicating(&self) -> Result<(), MdpError> {
        let n = self.n_states();
        let support = self.support_graph();
        for from in 0..n {
            let seen = chain::reachable(n, &support, from);
            if let Some(to) = seen.iter().position(|&x| !x) {
                return Err(MdpError::NotCommunicating { from, to });
            }
        }
        Ok(())
    }

    pub fn is_communicating(&self) -> bool {
        self.check_communicating().is_ok()
    }

    /// State graph with an edge wherever some action moves with positive
    /// probability, as a 0/1 matrix.
    fn support_graph(&self) -> Vec<f64> {
        let n = self.n_states();
        let mut g = vec![0.0; n * n];
        for z in 0..self.n_pairs() {
            let s = self.layout.state_of(z);
            for (j, &p) in self.row(z).iter().enumerate() {
                if p > 0.0 {
                    g[s * n + j] = 1.0;
                }
            }
        }
        g
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn n_states(&self) -> usize {
        self.layout.n_states()
    }

    pub fn n_pairs(&self) -> usize {
        self.layout.n_pairs()
    }

    pub fn reward(&self, z: usize) -> f64 {
        self.rewards[z]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn row(&self, z: usize) -> &[f64] {
        let n = self.n_states();
        &self.kernel[z * n..(z + 1) * n]
    }

    pub fn kernel_flat(&self) -> &[f64] {
        &self.kernel
    }

    pub fn kernel_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_pairs()).map(|z| self.row(z).to_vec()).collect()
    }

    /// Same kernel, new reward means.
    pub fn with_rewards(&self, rewards: Vec<f64>) -> Result<Self, MdpError> {
        Self::from_parts(self.layout.clone(), rewards, self.kernel.clone())
    }

    pub fn is_deterministic(&self) -> bool {
        (0..self.n_pairs()).all(|z| self.row(z).iter().all(|&p| p == 0.0 || p == 1.0))
    }

    /// `r(z) + p(z) . v`
    pub fn q_value(&self, z: usize, v: &[f64]) -> f64 {
        self.rewards[z] + dot(self.row(z), v)
    }

    /// Transition matrix and reward vector of the chain induced by `pi`.
    pub fn policy_chain(&self, pi: &Policy) -> (Vec<f64>, Vec<f64>) {
        let n = self.n_states();
        let mut p = Vec::with_capacity(n * n);
        let mut r = Vec::with_capacity(n);
        for s in 0..n {
            let z = pi.pair(&self.layout, s);
            p.extend_from_slice(self.row(z));
            r.push(self.rewards[z]);
        }
        (p, r)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn span(v: &[f64]) -> f64 {
    let (lo, hi) = min_max(v);
    hi - lo
}

pub(crate) fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Gain and bias of `pi` with `h = 0` at the lowest-index state of every
/// recurrent class.
pub fn policy_eval(m: &Mdp, pi: &Policy) -> Result<ChainValue, MdpError> {
    policy_eval_gauge(m, pi, Gauge::LowestState)
}

pub fn policy_eval_gauge(m: &Mdp, pi: &Policy, gauge: Gauge) -> Result<ChainValue, MdpError> {
    pi.validate(m.layout())?;
    let (p, r) = m.policy_chain(pi);
    chain::evaluate(m.n_states(), &p, &r, gauge).ok_or(MdpError::Singular)
}

/// Pairs `(s, pi(s))` over states reachable from `s0` under `pi`, sorted.
pub fn reach_set(m: &Mdp, pi: &Policy, s0: usize) -> Vec<usize> {
    let (p, _) = m.policy_chain(pi);
    chain::reachable(m.n_states(), &p, s0)
        .iter()
        .enumerate()
        .filter(|(_, &seen)| seen)
        .map(|(s, _)| pi.pair(m.layout(), s))
        .collect()
}

/// Whether `value` (the Cesàro evaluation of some policy) satisfies both
/// optimality equations within `tol`.
fn satisfies_optimality(m: &Mdp, value: &ChainValue, tol: f64) -> bool {
    let layout = m.layout();
    (0..m.n_states()).all(|s| {
        layout.pairs_of(s).all(|z| {
            let first = dot(m.row(z), &value.gain);
            let second = m.q_value(z, &value.bias);
            first <= value.gain[s] + tol && second <= value.gain[s] + value.bias[s] + tol
        })
    })
}

#[derive(Clone, Copy, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_SOLVE_TOL,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

/// Optimal gain, bias, Bellman gaps and optimal-pair structure of a model.
#[derive(Clone, Debug)]
pub struct SolveResult {
    /// Constant optimal gain vector (value-iteration estimate).
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
    /// `g* + h*(s) - r(s,a) - p(s,a) h*`, indexed by pair.
    pub gaps: Vec<f64>,
    pub weak_optimal_pairs: BTreeSet<usize>,
    /// Pairs recurrent under some gain-optimal policy built from weakly
    /// optimal actions.
    pub optimal_pairs: BTreeSet<usize>,
    pub bellman_policies: Vec<Policy>,
    pub bellman_policy_count: usize,
    pub unichain_flag: bool,
    /// Threshold used for weak optimality, `1e-9 (1 + span h*)`.
    pub weak_tol: f64,
    pub iterations: usize,
}

impl SolveResult {
    pub fn optimal_gain(&self) -> f64 {
        self.gain[0]
    }

    pub fn gap(&self, z: usize) -> f64 {
        self.gaps[z]
    }

    pub fn is_weak_optimal(&self, z: usize) -> bool {
        self.weak_optimal_pairs.contains(&z)
    }

    pub fn is_optimal_pair(&self, z: usize) -> bool {
        self.optimal_pairs.contains(&z)
    }

    /// Per-pair regret increments: the gap, with weakly-optimal pairs pinned
    /// to exactly zero.
    pub fn regret_gaps(&self) -> Vec<f64> {
        (0..self.gaps.len())
            .map(|z| if self.is_weak_optimal(z) { 0.0 } else { self.gaps[z].max(0.0) })
            .collect()
    }

    /// Whether the pair has a strictly positive Bellman gap.
    pub fn is_suboptimal(&self, z: usize) -> bool {
        !self.is_weak_optimal(z)
    }
}

pub fn optimal_solve(m: &Mdp, tol: f64) -> Result<SolveResult, MdpError> {
    optimal_solve_with(
        m,
        SolveOptions {
            tol,
            ..SolveOptions::default()
        },
    )
}

/// Relative value iteration on `(B + Id) / 2`, followed by an exact
/// re-evaluation of the greedy policy to obtain gaps at machine precision.
pub fn optimal_solve_with(m: &Mdp, opts: SolveOptions) -> Result<SolveResult, MdpError> {
    let n = m.n_states();
    let layout = m.layout();
    let mut u = vec![0.0; n];
    let mut bu = vec![0.0; n];
    let mut diff = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut last_span = f64::INFINITY;
    while iterations < opts.max_iters {
        iterations += 1;
        for s in 0..n {
            bu[s] = layout
                .pairs_of(s)
                .map(|z| m.q_value(z, &u))
                .fold(f64::NEG_INFINITY, f64::max);
            diff[s] = bu[s] - u[s];
        }
        last_span = span(&diff);
        if last_span < opts.tol {
            converged = true;
            break;
        }
        for s in 0..n {
            u[s] = 0.5 * (bu[s] + u[s]);
        }
        let (lo, _) = min_max(&u);
        u.iter_mut().for_each(|x| *x -= lo);
    }
    if !converged {
        return Err(MdpError::NoConvergence {
            iterations,
            span: last_span,
        });
    }
    let (lo, hi) = min_max(&diff);
    let g_vi = 0.5 * (lo + hi);

    // Greedy policy w.r.t. the value-iteration iterate, lowest index on ties.
    let tie_tol = 1e-9 * (1.0 + span(&u));
    let greedy = Policy(
        (0..n)
            .map(|s| {
                let best = bu[s];
                layout
                    .pairs_of(s)
                    .position(|z| m.q_value(z, &u) >= best - tie_tol)
                    .unwrap_or(0)
            })
            .collect(),
    );
    let polished = policy_eval_gauge(m, &greedy, Gauge::Cesaro)?;
    let polish_tol = 1e-9 * (1.0 + span(&polished.bias));
    let usable = polished.gain.iter().all(|g| (g - g_vi).abs() <= 1e-7)
        && satisfies_optimality(m, &polished, polish_tol);

    let (g_exact, mut bias) = if usable {
        (polished.gain[0], polished.bias.clone())
    } else {
        (g_vi, u.clone())
    };
    // Pin h = 0 at the lowest recurrent state of the greedy policy's first class.
    let anchor = if usable {
        polished.recurrent_classes[0][0]
    } else {
        0
    };
    let shift = bias[anchor];
    bias.iter_mut().for_each(|h| *h -= shift);

    let gaps: Vec<f64> = (0..m.n_pairs())
        .map(|z| g_exact + bias[layout.state_of(z)] - m.q_value(z, &bias))
        .collect();
    let weak_tol = 1e-9 * (1.0 + span(&bias));
    let weak_optimal_pairs: BTreeSet<usize> = (0..m.n_pairs()).filter(|&z| gaps[z] <= weak_tol).collect();

    // Bellman-optimal policies: every deterministic policy when affordable.
    let all = layout.policy_count() <= POLICY_ENUMERATION_CAP;
    let candidates = enumerate_policies(layout, |s, a| all || weak_optimal_pairs.contains(&layout.pair(s, a)));
    let mut bellman_policies = Vec::new();
    let mut unichain_flag = false;
    for pi in candidates {
        let value = policy_eval_gauge(m, &pi, Gauge::Cesaro)?;
        let tol = 1e-9 * (1.0 + span(&value.bias));
        if satisfies_optimality(m, &value, tol) {
            if bellman_policies.is_empty() {
                unichain_flag = value.is_unichain();
            }
            bellman_policies.push(pi);
        }
    }
    let bellman_policy_count = bellman_policies.len();
    if bellman_policy_count != 1 {
        unichain_flag = false;
    }

    let mut optimal_pairs = BTreeSet::new();
    for pi in enumerate_policies(layout, |s, a| weak_optimal_pairs.contains(&layout.pair(s, a))) {
        let value = policy_eval(m, &pi)?;
        for class in &value.recurrent_classes {
            if value.gain[class[0]] >= g_exact - weak_tol.max(1e-9) {
                optimal_pairs.extend(class.iter().map(|&s| pi.pair(layout, s)));
            }
        }
    }

    Ok(SolveResult {
        gain: vec![g_vi; n],
        bias,
        gaps,
        weak_optimal_pairs,
        optimal_pairs,
        bellman_policies,
        bellman_policy_count,
        unichain_flag,
        weak_tol,
        iterations,
    })
}

/// `max_{s != s'} min_pi E_s[hitting time of s']`.
pub fn diameter(m: &Mdp) -> Result<f64, MdpError> {
    let n = m.n_states();
    let mut worst: f64 = 0.0;
    for target in 0..n {
        let h = hitting_times(m, target, DEFAULT_MAX_ITERS)?;
        worst = worst.max(h.iter().copied().fold(0.0, f64::max));
    }
    Ok(worst)
}

/// Minimal expected hitting times of `target` from every state
/// (`h(target) = 0`).
pub fn hitting_times(m: &Mdp, target: usize, max_iters: usize) -> Result<Vec<f64>, MdpError> {
    let n = m.n_states();
    let layout = m.layout();
    let mut h = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let mut change: f64 = 0.0;
        for s in 0..n {
            next[s] = if s == target {
                0.0
            } else {
                1.0 + layout
                    .pairs_of(s)
                    .map(|z| dot(m.row(z), &h))
                    .fold(f64::INFINITY, f64::min)
            };
            change = change.max((next[s] - h[s]).abs());
        }
        core::mem::swap(&mut h, &mut next);
        let scale = 1.0 + h.iter().copied().fold(0.0, f64::max);
        if change <= 1e-13 * scale {
            break;
        }
        if iterations >= max_iters {
            return Err(MdpError::NoConvergence {
                iterations,
                span: change,
            });
        }
    }
    // Exact solve for the greedy policy; keep it only if it is consistent.
    let greedy: Vec<usize> = (0..n)
        .map(|s| {
            let best = layout.pairs_of(s).map(|z| dot(m.row(z), &h)).fold(f64::INFINITY, f64::min);
            layout
                .pairs_of(s)
                .find(|&z| dot(m.row(z), &h) <= best + 1e-9 * (1.0 + best.abs()))
                .unwrap_or(layout.pairs_of(s).start)
        })
        .collect();
    let others: Vec<usize> = (0..n).filter(|&s| s != target).collect();
    let k = others.len();
    let mut a = vec![0.0; k * k];
    let b = vec![1.0; k];
    for (row, &s) in others.iter().enumerate() {
        for (col, &j) in others.iter().enumerate() {
            let identity = if s == j { 1.0 } else { 0.0 };
            a[row * k + col] = identity - m.row(greedy[s])[j];
        }
    }
    if let Some(x) = crate::linalg::solve(k, &a, &b) {
        let mut exact = vec![0.0; n];
        for (&s, v) in others.iter().zip(&x) {
            exact[s] = *v;
        }
        let consistent = others
            .iter()
            .all(|&s| exact[s] >= 0.0 && (exact[s] - h[s]).abs() <= 1e-6 * (1.0 + h[s]));
        if consistent {
            return Ok(exact);
        }
    }
    Ok(h)
}

/// Non-degeneracy check with a human-readable report.
pub fn non_degenerate(m: &Mdp, tol: f64) -> Result<(bool, String), MdpError> {
    let solved = optimal_solve(m, tol)?;
    Ok(non_degenerate_report(m, &solved))
}

pub fn non_degenerate_report(m: &Mdp, solved: &SolveResult) -> (bool, String) {
    let flag = solved.bellman_policy_count == 1 && solved.unichain_flag;
    let mut report = String::new();
    let _ = writeln!(
        report,
        "optimal gain {:.12}; {} Bellman-optimal polic{}",
        solved.optimal_gain(),
        solved.bellman_policy_count,
        if solved.bellman_policy_count == 1 { "y" } else { "ies" }
    );
    for pi in &solved.bellman_policies {
        let classes = policy_eval(m, pi)
            .map(|v| format!("{:?}", v.recurrent_classes))
            .unwrap_or_else(|e| format!("<{e}>"));
        let _ = writeln!(report, "  policy {:?}: recurrent classes {}", pi.actions(), classes);
    }
    let _ = writeln!(report, "non-degenerate: {flag}");
    (flag, report)
}
