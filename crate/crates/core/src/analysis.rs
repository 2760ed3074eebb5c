//! Static classification of instances: interiority, confusing-set emptiness
//! (and hence explorativity), and the gain deviation bound.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::chain::Gauge;
use crate::confidence::{AmbientSet, KernelConstraint};
use crate::evi::{self, EviError, EviOptions, ExtendedMdp, KernelRegion, StopRule};
use crate::mdp::{self, Mdp, MdpError, Policy, SolveResult, POLICY_ENUMERATION_CAP};

/// Default tolerance on gain comparisons.
pub const DEFAULT_TOL: f64 = 1e-7;
/// EVI precision for the per-policy suprema.
pub const ANALYSIS_EVI_EPSILON: f64 = 1e-10;
/// Weight of the true model in a witness, ensuring absolute continuity.
pub const BLEND_WEIGHT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("the model is degenerate; the characterization needs a unique unichain optimal policy\n{0}")]
    Degenerate(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("{0} deterministic policies are too many to enumerate")]
    TooManyPolicies(usize),
    #[error("ambient set does not match the model: {0}")]
    Ambient(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error(transparent)]
    Evi(#[from] EviError),
}

/// Rewards strictly inside `(0, 1)` and their ambient interval, kernel
/// supports as large as anything the ambient set allows.
pub fn interior_check(m: &Mdp, ambient: &AmbientSet) -> bool {
    let n = m.n_states();
    (0..m.n_pairs()).all(|z| {
        let r = m.reward(z);
        let (lo, hi) = ambient.reward_bounds[z];
        let reward_ok = r > 0.0 && r < 1.0 && r > lo && r < hi;
        let support: Vec<bool> = m.row(z).iter().map(|&p| p > 0.0).collect();
        let kernel_ok = match &ambient.kernel[z] {
            KernelConstraint::Free => support.iter().all(|&x| x),
            KernelConstraint::Support(mask) => *mask == support,
            KernelConstraint::Fixed(row) => row.len() == n && row.iter().map(|&p| p > 0.0).eq(support.iter().copied()),
        };
        reward_ok && kernel_ok
    })
}

/// A model certifying a non-empty confusing set.
#[derive(Clone, Debug, PartialEq)]
pub struct Witness {
    pub model: Mdp,
    /// Policy whose optimistic gain beats the optimal gain.
    pub policy: Policy,
    /// State from which the improvement was found.
    pub state: usize,
    pub improved_gain: f64,
    /// Optimal gain of the witness model.
    pub witness_gain: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConfusingSetVerdict {
    Empty,
    NonEmpty(Witness),
    /// Some policy beats the optimal gain but no candidate passed the
    /// witness post-check.
    Inconclusive(String),
}

impl ConfusingSetVerdict {
    pub fn is_empty(&self) -> bool {
        matches!(self, Self::Empty)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Empty => "empty",
            Self::NonEmpty(_) => "non-empty",
            Self::Inconclusive(_) => "inconclusive",
        }
    }
}

/// Decides whether some ambient model agreeing with `m` on its optimal pairs
/// makes a different policy strictly better.
pub fn confusing_set_empty(m: &Mdp, ambient: &AmbientSet, tol: f64) -> Result<ConfusingSetVerdict, AnalysisError> {
    let solved = mdp::optimal_solve(m, mdp::DEFAULT_SOLVE_TOL)?;
    confusing_set_with(m, ambient, &solved, tol)
}

pub fn confusing_set_with(
    m: &Mdp,
    ambient: &AmbientSet,
    solved: &SolveResult,
    tol: f64,
) -> Result<ConfusingSetVerdict, AnalysisError> {
    let layout = m.layout();
    ambient.validate(layout).map_err(|e| AnalysisError::Ambient(format!("{e}")))?;
    let (non_degenerate, report) = mdp::non_degenerate_report(m, solved);
    if !non_degenerate {
        return Err(AnalysisError::Degenerate(report));
    }
    let count = layout.policy_count();
    if count > POLICY_ENUMERATION_CAP {
        return Err(AnalysisError::TooManyPolicies(count));
    }
    let g_star = solved.optimal_gain();
    let n = m.n_states();

    // optimal pairs are frozen; everything else ranges over the ambient set
    let mut reward_max = Vec::with_capacity(m.n_pairs());
    let mut kernels = Vec::with_capacity(m.n_pairs());
    for z in 0..m.n_pairs() {
        if solved.is_optimal_pair(z) {
            reward_max.push(m.reward(z));
            kernels.push(KernelRegion::Fixed(m.row(z).to_vec()));
        } else {
            reward_max.push(ambient.reward_bounds[z].1);
            kernels.push(match &ambient.kernel[z] {
                KernelConstraint::Fixed(row) => KernelRegion::Fixed(row.clone()),
                other => KernelRegion::Ambient(other.allowed(n)),
            });
        }
    }
    let ext = ExtendedMdp::new(layout.clone(), reward_max, kernels);

    let mut beaten_without_witness = Vec::new();
    for pi in mdp::enumerate_policies(layout, |_, _| true) {
        if solved.bellman_policies.contains(&pi) {
            continue;
        }
        let opts = EviOptions {
            epsilon: ANALYSIS_EVI_EPSILON,
            max_sweeps: evi::DEFAULT_MAX_SWEEPS,
            policy: Some(&pi),
            stop: StopRule::GainVector,
        };
        let res = evi::evi_solve_extended(&ext, &opts)?;
        let Some(state) = (0..n).find(|&s| res.increments[s] > g_star + tol) else {
            continue;
        };
        let improved_gain = res.increments[state];
        // optimistic rows on the policy's pairs, the truth elsewhere
        let mut rewards = m.rewards().to_vec();
        let mut rows = m.kernel_rows();
        for s in 0..n {
            let z = pi.pair(layout, s);
            if !solved.is_optimal_pair(z) {
                rewards[z] = res.optimistic_model.reward(z);
                rows[z] = res.optimistic_model.row(z).to_vec();
            }
        }
        let witness = blend(m, &rewards, &rows)?;
        match validate_witness(m, ambient, solved, &witness) {
            Ok(witness_gain) => {
                return Ok(ConfusingSetVerdict::NonEmpty(Witness {
                    model: witness,
                    policy: pi,
                    state,
                    improved_gain,
                    witness_gain,
                }))
            }
            Err(reason) => beaten_without_witness.push(format!("policy {:?}: {reason}", pi.actions())),
        }
    }
    if beaten_without_witness.is_empty() {
        Ok(ConfusingSetVerdict::Empty)
    } else {
        Ok(ConfusingSetVerdict::Inconclusive(beaten_without_witness.join("; ")))
    }
}

/// `(1 - w) candidate + w m` on every pair.
fn blend(m: &Mdp, rewards: &[f64], rows: &[Vec<f64>]) -> Result<Mdp, MdpError> {
    let w = BLEND_WEIGHT;
    let mixed_rewards = rewards
        .iter()
        .zip(m.rewards())
        .map(|(a, b)| if a == b { *a } else { ((1.0 - w) * a + w * b).clamp(0.0, 1.0) })
        .collect();
    let mixed_rows = rows
        .iter()
        .enumerate()
        .map(|(z, row)| {
            let truth = m.row(z);
            if row.as_slice() == truth {
                return row.clone();
            }
            let mut mixed: Vec<f64> = row.iter().zip(truth).map(|(a, b)| (1.0 - w) * a + w * b).collect();
            let drift = 1.0 - mixed.iter().sum::<f64>();
            let j = (0..mixed.len()).max_by(|&a, &b| mixed[a].total_cmp(&mixed[b])).unwrap_or(0);
            mixed[j] += drift;
            mixed
        })
        .collect();
    Mdp::new(m.layout().actions_per_state().as_slice(), mixed_rewards, mixed_rows)
}

/// Returns the witness's optimal gain when it is a genuine confusing model.
fn validate_witness(m: &Mdp, ambient: &AmbientSet, solved: &SolveResult, witness: &Mdp) -> Result<f64, String> {
    if !ambient.contains(witness) {
        return Err("witness leaves the ambient set".into());
    }
    for z in 0..m.n_pairs() {
        let dominated = m.row(z).iter().zip(witness.row(z)).all(|(&p, &q)| p == 0.0 || q > 0.0);
        if !dominated {
            return Err(format!("pair {z} loses support"));
        }
        if solved.is_optimal_pair(z) {
            let same_reward = (m.reward(z) - witness.reward(z)).abs() <= 1e-12;
            let same_row = m.row(z).iter().zip(witness.row(z)).all(|(a, b)| (a - b).abs() <= 1e-12);
            if !same_reward || !same_row {
                return Err(format!("optimal pair {z} was modified"));
            }
        }
    }
    let witness_solved = mdp::optimal_solve(witness, mdp::DEFAULT_SOLVE_TOL).map_err(|e| format!("{e}"))?;
    let g_true = solved.optimal_gain();
    let g_witness = witness_solved.optimal_gain();
    let gain_tol = 1e-9 * (1.0 + g_true.abs().max(g_witness.abs()));
    let layout = m.layout();
    for pi in mdp::enumerate_policies(layout, |_, _| true) {
        let in_true = mdp::policy_eval(m, &pi).map_err(|e| format!("{e}"))?;
        if in_true.gain.iter().any(|&g| g < g_true - gain_tol) {
            continue;
        }
        let in_witness = mdp::policy_eval(witness, &pi).map_err(|e| format!("{e}"))?;
        if in_witness.gain.iter().all(|&g| g >= g_witness - gain_tol) {
            return Err(format!("policy {:?} is optimal in both models", pi.actions()));
        }
    }
    Ok(g_witness)
}

/// Outcome of the gain deviation check.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GainDeviation {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `‖g(m2) - g(m)‖∞ <= max_s |Δr| + span(h)/2 ‖Δp‖₁` for a policy with
/// constant gain on `m`.
pub fn gain_deviation_bound(m: &Mdp, m2: &Mdp, pi: &Policy) -> Result<GainDeviation, AnalysisError> {
    if m.layout() != m2.layout() {
        return Err(AnalysisError::Precondition("models have different state-action spaces".into()));
    }
    let base = mdp::policy_eval_gauge(m, pi, Gauge::Cesaro)?;
    let gain_span = mdp::span(&base.gain);
    if gain_span > 1e-9 {
        return Err(AnalysisError::Precondition(format!(
            "policy gain is not constant on the reference model (span {gain_span:e})"
        )));
    }
    let other = mdp::policy_eval(m2, pi)?;
    let lhs = base
        .gain
        .iter()
        .zip(&other.gain)
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
    let half_span = 0.5 * mdp::span(&base.bias);
    let layout = m.layout();
    let rhs = (0..m.n_states())
        .map(|s| {
            let z = pi.pair(layout, s);
            let dr = (m2.reward(z) - m.reward(z)).abs();
            let dp: f64 = m2.row(z).iter().zip(m.row(z)).map(|(a, b)| (a - b).abs()).sum();
            dr + half_span * dp
        })
        .fold(0.0f64, f64::max);
    Ok(GainDeviation {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-9,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassificationReport {
    pub non_degenerate: bool,
    pub interior: bool,
    pub optimal_gain: f64,
    pub bellman_policies: Vec<Policy>,
    pub optimal_pairs: Vec<usize>,
    pub degeneracy_report: String,
    /// `None` for degenerate models, where the question is not decided.
    pub confusing_set: Option<ConfusingSetVerdict>,
}

impl ClassificationReport {
    pub fn confusing_set_empty(&self) -> Option<bool> {
        match &self.confusing_set {
            Some(ConfusingSetVerdict::Empty) => Some(true),
            Some(ConfusingSetVerdict::NonEmpty(_)) => Some(false),
            _ => None,
        }
    }

    /// Explorative iff the confusing set is non-empty (non-degenerate models).
    pub fn explorative(&self) -> Option<bool> {
        self.confusing_set_empty().map(|empty| !empty)
    }
}

pub fn classify(m: &Mdp, ambient: &AmbientSet, tol: f64) -> Result<ClassificationReport, AnalysisError> {
    let solved = mdp::optimal_solve(m, mdp::DEFAULT_SOLVE_TOL)?;
    let (non_degenerate, degeneracy_report) = mdp::non_degenerate_report(m, &solved);
    let confusing_set = if non_degenerate {
        Some(confusing_set_with(m, ambient, &solved, tol)?)
    } else {
        None
    };
    Ok(ClassificationReport {
        non_degenerate,
        interior: interior_check(m, ambient),
        optimal_gain: solved.optimal_gain(),
        bellman_policies: solved.bellman_policies.clone(),
        optimal_pairs: solved.optimal_pairs.iter().copied().collect(),
        degeneracy_report,
        confusing_set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs;
    use alloc::vec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn figure7_has_empty_confusing_set() {
        let m = envs::figure7().unwrap();
        let ambient = AmbientSet::fixed_kernel(&m);
        assert!(interior_check(&m, &ambient));
        for tol in [1e-9, 1e-7, 1e-5] {
            assert_eq!(confusing_set_empty(&m, &ambient, tol).unwrap(), ConfusingSetVerdict::Empty);
        }
    }

    #[test]
    fn degenerate_input_is_refused() {
        let m = envs::figure2(0.5, 0.1, 0.5, 0.1).unwrap();
        let err = confusing_set_empty(&m, &AmbientSet::free(m.layout()), DEFAULT_TOL).unwrap_err();
        assert!(matches!(err, AnalysisError::Degenerate(_)));
    }

    #[test]
    fn single_action_model_has_nothing_to_confuse() {
        let m = Mdp::new(&[1, 1], vec![0.3, 0.6], vec![vec![0.5, 0.5], vec![0.2, 0.8]]).unwrap();
        let verdict = confusing_set_empty(&m, &AmbientSet::free(m.layout()), DEFAULT_TOL).unwrap();
        assert_eq!(verdict, ConfusingSetVerdict::Empty);
    }

    #[test]
    fn free_figure2_right_is_explorative() {
        let m = envs::figure2(0.49, 0.09, 0.51, 0.08).unwrap();
        let verdict = confusing_set_empty(&m, &AmbientSet::free(m.layout()), DEFAULT_TOL).unwrap();
        let ConfusingSetVerdict::NonEmpty(w) = verdict else {
            panic!("expected a witness, got {verdict:?}");
        };
        assert!(w.witness_gain > 0.51);
    }

    #[test]
    fn reward_shift_deviation_is_tight() {
        let m = envs::figure2(0.49, 0.09, 0.51, 0.08).unwrap();
        let m2 = envs::figure2(0.49, 0.09, 0.52, 0.08).unwrap();
        let pi = Policy::new(vec![1, 0]);
        let dev = gain_deviation_bound(&m, &m2, &pi).unwrap();
        assert_abs_diff_eq!(dev.lhs, 0.01, epsilon = 1e-12);
        assert!(dev.rhs >= 0.01 - 1e-12);
        assert!(dev.holds);
        let same = gain_deviation_bound(&m, &m, &pi).unwrap();
        assert_eq!((same.lhs, same.rhs), (0.0, 0.0));
    }

    #[test]
    fn non_constant_gain_is_a_precondition_error() {
        let m = envs::figure2(0.49, 0.09, 0.51, 0.08).unwrap();
        let err = gain_deviation_bound(&m, &m, &Policy::new(vec![0, 0])).unwrap_err();
        assert!(matches!(err, AnalysisError::Precondition(_)));
    }
}
