//! Measurements on run traces: pseudo-regret, exploration episodes, the
//! regret-of-exploration proxy and visit-rate regimes.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::learner::{EpisodeRule, RunTrace};
use crate::mdp::{self, Mdp, MdpError, Policy, SolveResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("cannot recover the policy of episode {episode}: state {state} was never visited")]
    Reconstruction { episode: usize, state: usize },
    #[error("trace horizon {horizon} is shorter than {needed} steps required by the analysis")]
    TooShort { horizon: u64, needed: u64 },
    #[error("trace and model disagree: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

/// `curve[t - 1] = R(1, t)`.
pub fn regret_curve(trace: &RunTrace) -> Vec<f64> {
    let mut total = 0.0;
    trace
        .gaps()
        .map(|g| {
            total += g;
            total
        })
        .collect()
}

/// Episodes flagged as exploration episodes, with their start times.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExplorationLog {
    pub episodes: Vec<(usize, u64)>,
}

impl ExplorationLog {
    pub fn times(&self) -> impl Iterator<Item = u64> + '_ {
        self.episodes.iter().map(|&(_, t)| t)
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }
}

/// Recovers each episode's policy from the actions it took. Every state must
/// have been visited during the episode.
pub fn reconstruct_policies(trace: &RunTrace) -> Result<Vec<Policy>, MetricsError> {
    let layout = &trace.layout;
    let mut tables: Vec<Vec<Option<usize>>> = vec![vec![None; layout.n_states()]; trace.episodes.len()];
    for (i, &z) in trace.pairs.iter().enumerate() {
        let z = z as usize;
        tables[trace.episode_of_step[i] as usize][layout.state_of(z)] = Some(layout.action_of(z));
    }
    tables
        .into_iter()
        .enumerate()
        .map(|(e, table)| {
            table
                .iter()
                .enumerate()
                .map(|(state, a)| {
                    a.ok_or(MetricsError::Reconstruction {
                        episode: e + 1,
                        state,
                    })
                })
                .collect::<Result<Vec<_>, _>>()
                .map(Policy::new)
        })
        .collect()
}

/// Episode `k >= 2` is an exploration episode when the previous policy is
/// gain-optimal from `S_{t_k}` and the new one can reach a pair with a
/// positive gap from there.
pub fn detect_exploration_episodes(trace: &RunTrace, m: &Mdp) -> Result<ExplorationLog, MetricsError> {
    let solved = mdp::optimal_solve(m, mdp::DEFAULT_SOLVE_TOL)?;
    detect_with(trace, m, &solved)
}

pub fn detect_with(trace: &RunTrace, m: &Mdp, solved: &SolveResult) -> Result<ExplorationLog, MetricsError> {
    if trace.layout != *m.layout() {
        return Err(MetricsError::Mismatch("state-action layouts differ".into()));
    }
    let g_star = solved.optimal_gain();
    let gain_tol = 1e-9 * (1.0 + g_star.abs());
    let mut gains: BTreeMap<&Policy, Vec<f64>> = BTreeMap::new();
    let mut log = ExplorationLog::default();
    for pair in trace.episodes.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        let s = trace.state(next.t_start);
        if !gains.contains_key(&prev.policy) {
            let value = mdp::policy_eval(m, &prev.policy)?;
            gains.insert(&prev.policy, value.gain);
        }
        if gains[&prev.policy][s] < g_star - gain_tol {
            continue;
        }
        let reaches_gap = mdp::reach_set(m, &next.policy, s)
            .into_iter()
            .any(|z| solved.is_suboptimal(z));
        if reaches_gap {
            log.episodes.push((next.index, next.t_start));
        }
    }
    Ok(log)
}

/// Regret-of-exploration proxy as a function of the forward offset
/// `w = 1..=window`: for an exploration time `τ`, the forward regret is
/// `R(τ, min(τ + w, T))`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProxyCurve {
    /// Per trace, the max over its exploration times; averaged over traces.
    pub mean_of_max: Vec<f64>,
    /// Per exploration rank `i`, the mean over traces having an `i`-th
    /// exploration time after the threshold; max over ranks.
    pub max_of_mean: Vec<f64>,
    /// Traces with no exploration time after the threshold; they contribute
    /// zero to `mean_of_max`.
    pub traces_without_exploration: usize,
}

/// Forward regret curves of one trace, one per exploration time `τ >= psi`
/// in increasing order.
pub fn forward_regret_curves(trace: &RunTrace, times: &[u64], window: u64, psi: u64) -> Result<Vec<Vec<f64>>, MetricsError> {
    let horizon = trace.horizon();
    if horizon < psi + window || psi >= horizon {
        return Err(MetricsError::TooShort {
            horizon,
            needed: psi + window,
        });
    }
    let mut starts: Vec<u64> = times.iter().copied().filter(|&t| t >= psi && t <= horizon).collect();
    starts.sort_unstable();
    if starts.is_empty() {
        return Ok(Vec::new());
    }
    // prefix[t] = R(1, t)
    let mut prefix = Vec::with_capacity(horizon as usize + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for g in trace.gaps() {
        acc += g;
        prefix.push(acc);
    }
    Ok(starts
        .iter()
        .map(|&tau| {
            let base = prefix[(tau - 1) as usize];
            (1..=window)
                .map(|w| prefix[(tau + w).min(horizon) as usize] - base)
                .collect()
        })
        .collect())
}

/// Combines the per-trace output of [`forward_regret_curves`].
pub fn aggregate_proxy(per_trace: &[Vec<Vec<f64>>], window: u64) -> ProxyCurve {
    let w_len = window as usize;
    let mut sum_of_max = vec![0.0; w_len];
    let mut rank_sums: Vec<Vec<f64>> = Vec::new();
    let mut rank_counts: Vec<usize> = Vec::new();
    let mut without = 0;
    for curves in per_trace {
        if curves.is_empty() {
            without += 1;
            continue;
        }
        let mut best = vec![0.0f64; w_len];
        for (rank, curve) in curves.iter().enumerate() {
            if rank_sums.len() <= rank {
                rank_sums.push(vec![0.0; w_len]);
                rank_counts.push(0);
            }
            rank_counts[rank] += 1;
            for w in 0..w_len {
                best[w] = best[w].max(curve[w]);
                rank_sums[rank][w] += curve[w];
            }
        }
        for (total, b) in sum_of_max.iter_mut().zip(&best) {
            *total += b;
        }
    }
    let n = per_trace.len().max(1) as f64;
    let mut max_of_mean = vec![0.0f64; w_len];
    for (sums, &count) in rank_sums.iter().zip(&rank_counts) {
        for (m, s) in max_of_mean.iter_mut().zip(sums) {
            *m = m.max(s / count as f64);
        }
    }
    ProxyCurve {
        mean_of_max: sum_of_max.into_iter().map(|s| s / n).collect(),
        max_of_mean,
        traces_without_exploration: without,
    }
}

/// `inputs` pairs every trace with its exploration times.
pub fn regexp_proxy(inputs: &[(&RunTrace, &[u64])], window: u64, psi: u64) -> Result<ProxyCurve, MetricsError> {
    let per_trace = inputs
        .iter()
        .map(|(trace, times)| forward_regret_curves(trace, times, window, psi))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(aggregate_proxy(&per_trace, window))
}

/// Minimal horizon accepted by [`visit_regime`].
pub const REGIME_MIN_HORIZON: u64 = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regime {
    Linear,
    Logarithmic,
    Ambiguous,
}

impl Regime {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Logarithmic => "logarithmic",
            Self::Ambiguous => "ambiguous",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PairRegime {
    pub pair: usize,
    pub visits: u64,
    pub per_log_t: f64,
    pub per_t: f64,
    /// `(N(T) - N(T/2)) / ln 2`: the constant of a `λ ln t` fit on the
    /// second half of the run.
    pub lambda_hat: f64,
    pub regime: Regime,
}

/// Classifies each pair's visit count as linear or logarithmic in `T`.
///
/// Linear when `N(T)/T >= 1/(50 |Z|)`; otherwise logarithmic when
/// `N(T)/ln T <= 50 |Z| max(λ̂, 1)`; otherwise ambiguous.
pub fn visit_regime(trace: &RunTrace) -> Result<Vec<PairRegime>, MetricsError> {
    let horizon = trace.horizon();
    if horizon < REGIME_MIN_HORIZON {
        return Err(MetricsError::TooShort {
            horizon,
            needed: REGIME_MIN_HORIZON,
        });
    }
    let n_pairs = trace.layout.n_pairs();
    let at_end = trace.visits_until(horizon);
    let at_half = trace.visits_until(horizon / 2);
    let t = horizon as f64;
    let log_t = libm::log(t);
    let scale = 50.0 * n_pairs as f64;
    Ok((0..n_pairs)
        .map(|pair| {
            let visits = at_end[pair];
            let per_t = visits as f64 / t;
            let per_log_t = visits as f64 / log_t;
            let lambda_hat = (visits - at_half[pair]) as f64 / core::f64::consts::LN_2;
            let regime = if per_t >= 1.0 / scale {
                Regime::Linear
            } else if per_log_t <= scale * lambda_hat.max(1.0) {
                Regime::Logarithmic
            } else {
                Regime::Ambiguous
            };
            PairRegime {
                pair,
                visits,
                per_log_t,
                per_t,
                lambda_hat,
                regime,
            }
        })
        .collect())
}

/// Ceiling on the number of episodes started by step `t`.
pub fn episode_count_bound(rule: &EpisodeRule, t: u64, n_pairs: usize) -> f64 {
    let z = n_pairs as f64;
    let t = t as f64;
    match rule {
        EpisodeRule::Dt => z * libm::log2(8.0 * t / z) + z,
        EpisodeRule::Vm(schedule) => {
            let f = schedule.f(t as u64);
            z * libm::log((2.0 * t + 64.0) / z) / libm::log1p(f)
        }
    }
}

/// First episode start at which the episode count exceeds the ceiling, as
/// `(episode, t_start, bound)`.
pub fn episode_bound_violation(trace: &RunTrace, rule: &EpisodeRule) -> Option<(usize, u64, f64)> {
    let n_pairs = trace.layout.n_pairs();
    trace.episodes.iter().find_map(|e| {
        let bound = episode_count_bound(rule, e.t_start, n_pairs);
        (e.index as f64 > bound).then_some((e.index, e.t_start, bound))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::VisitStats;
    use crate::learner::EpisodeRecord;
    use crate::envs;
    use crate::mdp::Layout;
    use approx::assert_abs_diff_eq;

    /// A trace on figure2_right assembled by hand.
    fn handmade(pairs: &[u32], episodes: &[(u64, Vec<usize>)]) -> RunTrace {
        let m = envs::figure2(0.49, 0.09, 0.51, 0.08).unwrap();
        let solved = mdp::optimal_solve(&m, 1e-10).unwrap();
        let starts: Vec<u64> = episodes.iter().map(|e| e.0).collect();
        let episode_of_step = (1..=pairs.len() as u64)
            .map(|t| (starts.iter().filter(|&&s| s <= t).count() - 1) as u32)
            .collect();
        RunTrace {
            env_id: "figure2_right".into(),
            config_fingerprint: 0,
            layout: m.layout().clone(),
            gap_table: solved.gaps.iter().map(|g| if g.abs() < 1e-9 { 0.0 } else { *g }).collect(),
            pairs: pairs.to_vec(),
            episode_of_step,
            episodes: episodes
                .iter()
                .enumerate()
                .map(|(i, (t, policy))| EpisodeRecord {
                    index: i + 1,
                    t_start: *t,
                    policy: Policy::new(policy.clone()),
                    optimistic_gain: 0.0,
                    evi_iterations: 0,
                })
                .collect(),
            final_stats: VisitStats::new(m.layout()),
        }
    }

    #[test]
    fn regret_steps_once_by_the_switch_gap() {
        // pairs: 1 = (0, switch), 2 = (1, loop), 3 = (1, switch)
        let trace = handmade(&[1, 2, 3, 1, 2], &[(1, vec![1, 0])]);
        let curve = regret_curve(&trace);
        assert_abs_diff_eq!(curve[1], 0.0);
        assert_abs_diff_eq!(curve[2], 0.85, epsilon = 1e-9);
        assert_abs_diff_eq!(curve[4], 0.85, epsilon = 1e-9);
    }

    #[test]
    fn loop_at_first_state_after_optimal_episode_is_exploration() {
        // episode 1 plays the optimal policy, episode 2 loops in state 0
        // and starts there
        let m = envs::figure2(0.49, 0.09, 0.51, 0.08).unwrap();
        let trace = handmade(&[1, 2, 3, 0, 0], &[(1, vec![1, 0]), (4, vec![0, 0])]);
        let log = detect_exploration_episodes(&trace, &m).unwrap();
        assert_eq!(log.episodes, vec![(2, 4)]);

        let steady = handmade(&[1, 2, 2, 2], &[(1, vec![1, 0]), (3, vec![1, 0])]);
        assert!(detect_exploration_episodes(&steady, &m).unwrap().is_empty());
    }

    #[test]
    fn reconstruction_names_the_episode() {
        let trace = handmade(&[1, 2, 2, 2], &[(1, vec![1, 0]), (3, vec![1, 0])]);
        let err = reconstruct_policies(&trace).unwrap_err();
        assert_eq!(err, MetricsError::Reconstruction { episode: 2, state: 0 });
    }

    #[test]
    fn proxy_takes_the_max_window() {
        // gaps 0.85 at steps 3 and 6..=7
        let trace = handmade(&[2, 2, 3, 2, 2, 3, 3, 2, 2, 2], &[(1, vec![1, 0])]);
        let starts = [3u64, 6];
        let curve = regexp_proxy(&[(&trace, &starts[..])], 3, 1).unwrap();
        // offset 1 covers two steps from the start
        assert_abs_diff_eq!(curve.mean_of_max[0], 1.7, epsilon = 1e-9);
        assert_abs_diff_eq!(curve.max_of_mean[0], 1.7, epsilon = 1e-9);
        assert!(curve.mean_of_max.windows(2).all(|w| w[0] <= w[1]));
        let empty = regexp_proxy(&[(&trace, &[][..])], 3, 1).unwrap();
        assert_eq!(empty.traces_without_exploration, 1);
        assert!(empty.mean_of_max.iter().all(|&x| x == 0.0));
        assert!(regexp_proxy(&[(&trace, &starts[..])], 10, 5).is_err());
    }

    #[test]
    fn single_pair_regime_is_linear() {
        let layout = Layout::new(&[1]).unwrap();
        let trace = RunTrace {
            env_id: "one".into(),
            config_fingerprint: 0,
            layout: layout.clone(),
            gap_table: vec![0.0],
            pairs: vec![0; 20_000],
            episode_of_step: vec![0; 20_000],
            episodes: vec![],
            final_stats: VisitStats::new(&layout),
        };
        let report = visit_regime(&trace).unwrap();
        assert_eq!(report[0].regime, Regime::Linear);
        assert_eq!(report[0].per_t, 1.0);
    }
}
