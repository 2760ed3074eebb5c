//! Post-hoc analyses over a set of traces and their CSV outputs.
//!
//! Per algorithm directory:
//! * `regret.csv`: `t,mean,stderr,min,max` over seeds, on a grid of at most
//!   about 10⁴ steps ending at the horizon
//! * `regexp_proxy.csv`: `offset,mean_of_max,max_of_mean`
//! * `visit_regime.csv`: `seed,pair,state,action,visits,per_log_t,per_t,lambda_hat,regime`
//! * `exploration_times.csv`: `seed,episode,t_start`

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use regretlab_core::metrics::{self, PairRegime};
use regretlab_core::mdp::{self, SolveResult};
use regretlab_core::{Mdp, RunTrace};
use serde::{Deserialize, Serialize};

use crate::config::AnalysisSpec;
use crate::{fmt_f64, LabError};

const REGRET_GRID_POINTS: u64 = 10_000;

/// Which analyses to compute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Analyses {
    pub regret: bool,
    pub proxy: Option<(u64, u64)>,
    pub visit_regime: bool,
    pub exploration_times: bool,
}

impl Analyses {
    pub fn from_specs(specs: &[AnalysisSpec]) -> Self {
        let mut a = Self::default();
        for s in specs {
            match *s {
                AnalysisSpec::Regret => a.regret = true,
                AnalysisSpec::RegexpProxy { psi, window } => a.proxy = Some((psi, window)),
                AnalysisSpec::VisitRegime => a.visit_regime = true,
                AnalysisSpec::ExplorationTimes => a.exploration_times = true,
            }
        }
        a
    }

    fn needs_exploration(&self) -> bool {
        self.exploration_times || self.proxy.is_some()
    }
}

/// Steps at which the regret curve is reported.
pub fn regret_grid(horizon: u64) -> Vec<u64> {
    let stride = horizon.div_ceil(REGRET_GRID_POINTS).max(1);
    let mut grid: Vec<u64> = (1..=horizon).step_by(stride as usize).collect();
    if grid.last() != Some(&horizon) {
        grid.push(horizon);
    }
    grid
}

/// Everything the aggregate outputs need from one trace.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceSummary {
    pub seed: u64,
    pub regret: Vec<f64>,
    pub exploration: Vec<(usize, u64)>,
    pub proxy: Vec<Vec<f64>>,
    pub regimes: Vec<PairRegime>,
}

pub fn summarize(trace: &RunTrace, m: &Mdp, solved: &SolveResult, seed: u64, which: &Analyses) -> Result<TraceSummary, LabError> {
    let mut out = TraceSummary {
        seed,
        regret: Vec::new(),
        exploration: Vec::new(),
        proxy: Vec::new(),
        regimes: Vec::new(),
    };
    if which.regret {
        let curve = metrics::regret_curve(trace);
        out.regret = regret_grid(trace.horizon()).iter().map(|&t| curve[(t - 1) as usize]).collect();
    }
    if which.needs_exploration() {
        out.exploration = metrics::detect_with(trace, m, solved)?.episodes;
    }
    if let Some((psi, window)) = which.proxy {
        let times: Vec<u64> = out.exploration.iter().map(|&(_, t)| t).collect();
        out.proxy = metrics::forward_regret_curves(trace, &times, window, psi)?;
    }
    if which.visit_regime {
        out.regimes = metrics::visit_regime(trace)?;
    }
    Ok(out)
}

/// Warnings and counts worth recording in the manifest.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisNote {
    pub algorithm: String,
    pub files: Vec<String>,
    /// Traces with no exploration time after the proxy threshold.
    pub traces_without_exploration: Option<usize>,
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, LabError> {
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<(), LabError>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = writer(path)?;
    w.write_record(header).map_err(|e| LabError::csv(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| LabError::csv(path, e))?;
    }
    w.flush().map_err(|e| LabError::io(path, e))
}

/// Writes the requested CSVs for one algorithm into `dir`.
pub fn write_outputs(
    dir: &Path,
    algorithm: &str,
    horizon: u64,
    m: &Mdp,
    which: &Analyses,
    summaries: &[TraceSummary],
) -> Result<AnalysisNote, LabError> {
    let mut note = AnalysisNote {
        algorithm: algorithm.into(),
        ..Default::default()
    };
    if which.regret {
        let grid = regret_grid(horizon);
        let n = summaries.len() as f64;
        let rows = grid.iter().enumerate().map(|(i, &t)| {
            let values: Vec<f64> = summaries.iter().map(|s| s.regret[i]).collect();
            let mean = values.iter().sum::<f64>() / n;
            let var = if values.len() > 1 {
                values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            vec![t.to_string(), fmt_f64(mean), fmt_f64((var / n).sqrt()), fmt_f64(min), fmt_f64(max)]
        });
        write_rows(&dir.join("regret.csv"), &["t", "mean", "stderr", "min", "max"], rows)?;
        note.files.push("regret.csv".into());
    }
    if which.exploration_times {
        let rows = summaries.iter().flat_map(|s| {
            s.exploration
                .iter()
                .map(move |&(k, t)| vec![s.seed.to_string(), k.to_string(), t.to_string()])
        });
        write_rows(&dir.join("exploration_times.csv"), &["seed", "episode", "t_start"], rows)?;
        note.files.push("exploration_times.csv".into());
    }
    if let Some((_, window)) = which.proxy {
        let per_trace: Vec<Vec<Vec<f64>>> = summaries.iter().map(|s| s.proxy.clone()).collect();
        let curve = metrics::aggregate_proxy(&per_trace, window);
        let rows = (0..window as usize).map(|w| {
            vec![(w + 1).to_string(), fmt_f64(curve.mean_of_max[w]), fmt_f64(curve.max_of_mean[w])]
        });
        write_rows(&dir.join("regexp_proxy.csv"), &["offset", "mean_of_max", "max_of_mean"], rows)?;
        note.files.push("regexp_proxy.csv".into());
        note.traces_without_exploration = Some(curve.traces_without_exploration);
    }
    if which.visit_regime {
        let layout = m.layout();
        let rows = summaries.iter().flat_map(|s| {
            s.regimes.iter().map(move |r| {
                vec![
                    s.seed.to_string(),
                    r.pair.to_string(),
                    layout.state_of(r.pair).to_string(),
                    layout.action_of(r.pair).to_string(),
                    r.visits.to_string(),
                    fmt_f64(r.per_log_t),
                    fmt_f64(r.per_t),
                    fmt_f64(r.lambda_hat),
                    r.regime.name().to_string(),
                ]
            })
        });
        write_rows(
            &dir.join("visit_regime.csv"),
            &["seed", "pair", "state", "action", "visits", "per_log_t", "per_t", "lambda_hat", "regime"],
            rows,
        )?;
        note.files.push("visit_regime.csv".into());
    }
    Ok(note)
}

/// Solves `m` once for every analysis that needs Bellman gaps.
pub fn solve(m: &Mdp) -> Result<SolveResult, LabError> {
    Ok(mdp::optimal_solve(m, mdp::DEFAULT_SOLVE_TOL)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ends_at_the_horizon() {
        assert_eq!(regret_grid(5), vec![1, 2, 3, 4, 5]);
        let g = regret_grid(1_000_000);
        assert_eq!(g.len(), 10_001);
        assert_eq!(*g.last().unwrap(), 1_000_000);
        assert_eq!(g[1] - g[0], 100);
        assert_eq!(regret_grid(10_001).last(), Some(&10_001));
    }
}
