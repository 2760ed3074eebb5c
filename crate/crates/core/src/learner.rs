//! The episodic optimistic learner and UCYCLE.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

use crate::confidence::{RegionError, RegionSpec, VisitStats};
use crate::envs;
use crate::evi::{self, EviError};
use crate::mdp::{self, Layout, Mdp, MdpError, Policy};
use crate::rng::RunStreams;

/// Vanishing growth factor `f` of the VM rule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Schedule {
    /// `sqrt(ln(1 + t) / (1 + t))`, non-increasing from `t = 2` on
    SqrtLogOverT,
    /// `1 / (1 + ln(1 + t))^2`
    InvLogSq,
    /// A constant `c` in `(0, 1]`.
    Const(f64),
}

impl Schedule {
    pub fn f(&self, t: u64) -> f64 {
        let t = t as f64;
        match *self {
            Self::SqrtLogOverT => libm::sqrt(libm::log1p(t) / (1.0 + t)),
            Self::InvLogSq => {
                let d = 1.0 + libm::log1p(t);
                1.0 / (d * d)
            }
            Self::Const(c) => c,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::SqrtLogOverT => "sqrt_log_over_t".into(),
            Self::InvLogSq => "inv_log_sq".into(),
            Self::Const(c) => format!("const_{c}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EpisodeRule {
    /// Doubling trick.
    Dt,
    /// Vanishing multiplicative growth.
    Vm(Schedule),
}

impl Default for EpisodeRule {
    fn default() -> Self {
        Self::Dt
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EviEpsilon {
    /// `1 / sqrt(t_k)` at the start of episode `k`.
    OneOverSqrtTk,
    Fixed(f64),
}

impl EviEpsilon {
    pub fn at(&self, t_k: u64) -> f64 {
        match *self {
            Self::OneOverSqrtTk => 1.0 / libm::sqrt(t_k as f64),
            Self::Fixed(eps) => eps,
        }
    }
}

/// The running episode.
#[derive(Clone, Debug)]
pub struct EpisodeState {
    pub k: usize,
    pub t_k: u64,
    pub snapshot_visits: Vec<u64>,
    pub policy: Policy,
    pub optimistic_gain: f64,
}

/// Whether the episode must end before acting in `current` at step
/// `stats.t()`.
pub fn should_stop(rule: &EpisodeRule, ep: &EpisodeState, stats: &VisitStats, layout: &Layout, current: usize) -> bool {
    let z = ep.policy.pair(layout, current);
    let now = stats.visits(z);
    let then = ep.snapshot_visits[z];
    match rule {
        EpisodeRule::Dt => now >= (2 * then).max(1),
        EpisodeRule::Vm(schedule) => now as f64 > (1.0 + schedule.f(ep.t_k)) * then.max(1) as f64,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub horizon: u64,
    pub seed: u64,
    pub region: RegionSpec,
    pub rule: EpisodeRule,
    pub evi_epsilon: EviEpsilon,
    pub initial_state: usize,
}

impl RunConfig {
    pub fn new(horizon: u64, seed: u64, region: RegionSpec, rule: EpisodeRule) -> Self {
        Self {
            horizon,
            seed,
            region,
            rule,
            evi_epsilon: EviEpsilon::OneOverSqrtTk,
            initial_state: 0,
        }
    }

    /// FNV-1a over the debug rendering; any field change changes it.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(format!("{self:?}").as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LearnError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Region(#[from] RegionError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("seed {seed}, step {t}: {source}")]
    Evi {
        seed: u64,
        t: u64,
        #[source]
        source: EviError,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    /// 1-based episode index.
    pub index: usize,
    pub t_start: u64,
    pub policy: Policy,
    pub optimistic_gain: f64,
    pub evi_iterations: usize,
}

/// One seeded run. Steps are numbered from 1; per-step vectors are indexed
/// by `t - 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub env_id: String,
    pub config_fingerprint: u64,
    pub layout: Layout,
    /// Bellman gap of every pair in the environment.
    pub gap_table: Vec<f64>,
    pub pairs: Vec<u32>,
    /// 0-based position in `episodes` of the episode containing each step.
    pub episode_of_step: Vec<u32>,
    pub episodes: Vec<EpisodeRecord>,
    pub final_stats: VisitStats,
}

/// One row of a trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Step {
    pub t: u64,
    pub state: usize,
    pub action: usize,
    pub pair: usize,
    pub gap: f64,
    pub episode: usize,
    pub episode_start: bool,
    pub optimistic_gain: f64,
}

impl RunTrace {
    pub fn horizon(&self) -> u64 {
        self.pairs.len() as u64
    }

    pub fn pair(&self, t: u64) -> usize {
        self.pairs[(t - 1) as usize] as usize
    }

    pub fn gap(&self, t: u64) -> f64 {
        self.gap_table[self.pair(t)]
    }

    pub fn state(&self, t: u64) -> usize {
        self.layout.state_of(self.pair(t))
    }

    pub fn step(&self, t: u64) -> Step {
        let i = (t - 1) as usize;
        let pair = self.pairs[i] as usize;
        let e = self.episode_of_step[i] as usize;
        let record = &self.episodes[e];
        Step {
            t,
            state: self.layout.state_of(pair),
            action: self.layout.action_of(pair),
            pair,
            gap: self.gap_table[pair],
            episode: record.index,
            episode_start: record.t_start == t,
            optimistic_gain: record.optimistic_gain,
        }
    }

    pub fn steps(&self) -> impl Iterator<Item = Step> + '_ {
        (1..=self.horizon()).map(move |t| self.step(t))
    }

    pub fn gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.pairs.iter().map(move |&z| self.gap_table[z as usize])
    }

    /// Pseudo-regret over the whole run.
    pub fn total_regret(&self) -> f64 {
        self.gaps().sum()
    }

    /// Visit counts of every pair after the first `t` steps.
    pub fn visits_until(&self, t: u64) -> Vec<u64> {
        let mut counts = alloc::vec![0u64; self.layout.n_pairs()];
        for &z in &self.pairs[..t as usize] {
            counts[z as usize] += 1;
        }
        counts
    }
}

fn gap_table(m: &Mdp) -> Result<Vec<f64>, MdpError> {
    Ok(mdp::optimal_solve(m, mdp::DEFAULT_SOLVE_TOL)?.regret_gaps())
}

/// Runs the episodic optimistic learner on `m`.
pub fn run_learner(m: &Mdp, cfg: &RunConfig, env_id: &str) -> Result<RunTrace, LearnError> {
    let layout = m.layout();
    cfg.region.validate(layout)?;
    if cfg.horizon == 0 {
        return Err(LearnError::Config("horizon must be at least 1".into()));
    }
    if cfg.initial_state >= m.n_states() {
        return Err(LearnError::Config(format!(
            "initial state {} out of range for {} states",
            cfg.initial_state,
            m.n_states()
        )));
    }
    if let EpisodeRule::Vm(Schedule::Const(c)) = cfg.rule {
        if !(c > 0.0 && c <= 1.0) {
            return Err(LearnError::Config(format!("constant schedule must lie in (0, 1], got {c}")));
        }
    }
    if let EviEpsilon::Fixed(eps) = cfg.evi_epsilon {
        if !(eps > 0.0) {
            return Err(LearnError::Config(format!("EVI epsilon must be positive, got {eps}")));
        }
    }

    let gap_table = gap_table(m)?;
    let horizon = cfg.horizon as usize;
    let mut stats = VisitStats::new(layout);
    let mut streams = RunStreams::new(cfg.seed);
    let mut pairs = Vec::with_capacity(horizon);
    let mut episode_of_step = Vec::with_capacity(horizon);
    let mut episodes: Vec<EpisodeRecord> = Vec::new();
    let mut current: Option<EpisodeState> = None;
    let mut s = cfg.initial_state;

    for t in 1..=cfg.horizon {
        debug_assert_eq!(stats.t(), t);
        let renew = match &current {
            None => true,
            Some(ep) => should_stop(&cfg.rule, ep, &stats, layout, s),
        };
        if renew {
            let eps = cfg.evi_epsilon.at(t);
            let res = evi::evi_solve(&cfg.region, &stats, layout, t, eps).map_err(|source| LearnError::Evi {
                seed: cfg.seed,
                t,
                source,
            })?;
            let k = episodes.len() + 1;
            episodes.push(EpisodeRecord {
                index: k,
                t_start: t,
                policy: res.policy.clone(),
                optimistic_gain: res.optimistic_gain,
                evi_iterations: res.iterations,
            });
            current = Some(EpisodeState {
                k,
                t_k: t,
                snapshot_visits: stats.all_visits().to_vec(),
                policy: res.policy,
                optimistic_gain: res.optimistic_gain,
            });
        }
        let ep = current.as_ref().expect("an episode is always running");
        let z = ep.policy.pair(layout, s);
        let (reward, next) = envs::step(m, z, &mut streams);
        stats.update(z, reward, next);
        pairs.push(z as u32);
        episode_of_step.push((ep.k - 1) as u32);
        s = next;
    }

    Ok(RunTrace {
        env_id: env_id.into(),
        config_fingerprint: cfg.fingerprint(),
        layout: layout.clone(),
        gap_table,
        pairs,
        episode_of_step,
        episodes,
        final_stats: stats,
    })
}

/// UCYCLE: known deterministic transitions, Hoeffding reward intervals,
/// doubling-trick episodes. The region and rule of `cfg` are replaced
/// accordingly; only its radius scale is kept.
pub fn run_ucycle(m: &Mdp, cfg: &RunConfig, env_id: &str) -> Result<RunTrace, LearnError> {
    if !m.is_deterministic() {
        return Err(LearnError::Config("UCYCLE requires deterministic transitions".into()));
    }
    let mut cfg = cfg.clone();
    cfg.region = RegionSpec::ucycle(m).with_scale(cfg.region.radius_scale);
    cfg.rule = EpisodeRule::Dt;
    run_learner(m, &cfg, env_id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::confidence::{AmbientSet, Family};
    use alloc::vec;

    fn episode(snapshot: Vec<u64>) -> EpisodeState {
        EpisodeState {
            k: 1,
            t_k: 1,
            snapshot_visits: snapshot,
            policy: Policy::new(vec![0]),
            optimistic_gain: 0.0,
        }
    }

    fn stats_with(visits: u64) -> (Layout, VisitStats) {
        let layout = Layout::new(&[1]).unwrap();
        let mut stats = VisitStats::new(&layout);
        for _ in 0..visits {
            stats.update(0, false, 0);
        }
        (layout, stats)
    }

    #[test]
    fn doubling_trick_condition() {
        let (layout, stats) = stats_with(2);
        assert!(should_stop(&EpisodeRule::Dt, &episode(vec![1]), &stats, &layout, 0));
        let (layout, stats) = stats_with(3);
        assert!(!should_stop(&EpisodeRule::Dt, &episode(vec![2]), &stats, &layout, 0));
        let (layout, stats) = stats_with(0);
        assert!(!should_stop(&EpisodeRule::Dt, &episode(vec![0]), &stats, &layout, 0));
    }

    #[test]
    fn vanishing_condition() {
        let rule = EpisodeRule::Vm(Schedule::Const(0.5));
        let (layout, stats) = stats_with(6);
        assert!(!should_stop(&rule, &episode(vec![4]), &stats, &layout, 0));
        let (layout, stats) = stats_with(7);
        assert!(should_stop(&rule, &episode(vec![4]), &stats, &layout, 0));
    }

    #[test]
    fn schedules_are_bounded_and_non_increasing() {
        for schedule in [Schedule::SqrtLogOverT, Schedule::InvLogSq, Schedule::Const(0.3)] {
            // ln(1 + t) / (1 + t) peaks below t = 2
            let mut prev = f64::INFINITY;
            for t in 2..10_000u64 {
                let f = schedule.f(t);
                assert!((0.0..=1.0).contains(&f));
                assert!(f <= prev + 1e-15);
                prev = f;
            }
        }
    }

    #[test]
    fn single_pair_run_has_no_regret() {
        let m = Mdp::new(&[1], vec![0.4], vec![vec![1.0]]).unwrap();
        let cfg = RunConfig::new(1000, 5, RegionSpec::new(Family::Kl, AmbientSet::free(m.layout())), EpisodeRule::Dt);
        let trace = run_learner(&m, &cfg, "single").unwrap();
        assert_eq!(trace.total_regret(), 0.0);
        // starts at 1, 2, 3, 5, 9, ...: one per doubling
        let starts: Vec<u64> = trace.episodes.iter().map(|e| e.t_start).collect();
        assert_eq!(&starts[..5], &[1, 2, 3, 5, 9]);
    }

    #[test]
    fn ucycle_rejects_stochastic_kernels() {
        let m = crate::envs::riverswim(3).unwrap();
        let cfg = RunConfig::new(10, 0, RegionSpec::new(Family::Kl, AmbientSet::free(m.layout())), EpisodeRule::Dt);
        assert!(matches!(run_ucycle(&m, &cfg, "rs"), Err(LearnError::Config(_))));
    }
}
