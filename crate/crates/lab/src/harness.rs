//! Seeded sweeps: `<root>/<name>/<algorithm>/<seed>.csv` plus
//! `<root>/<name>/manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyze::{self, Analyses, AnalysisNote, TraceSummary};
use crate::config::{Environment, ExperimentConfig};
use crate::instance::{self, AmbientFile, InstanceFile};
use crate::traces::{self, TracePaths};
use crate::LabError;

#[derive(Clone, Debug, Default)]
pub struct SweepOptions {
    /// Worker threads; all available cores when `None`.
    pub jobs: Option<usize>,
    /// Output root; takes precedence over `REGRETLAB_OUT` and the config.
    pub root: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub algorithm: String,
    pub seed: u64,
    /// Paths relative to the experiment directory.
    pub trace: String,
    pub episodes_csv: String,
    pub policies_csv: String,
    pub horizon: u64,
    pub episodes: usize,
    pub total_regret: f64,
    /// Core run-configuration fingerprint, hex.
    pub run_fingerprint: String,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub env_id: String,
    /// SHA-256 of the canonical configuration.
    pub fingerprint: String,
    pub config: ExperimentConfig,
    pub instance: InstanceFile,
    pub ambient: AmbientFile,
    pub versions: BTreeMap<String, String>,
    pub runs: Vec<RunEntry>,
    pub analyses: Vec<AnalysisNote>,
    pub wall_time_s: f64,
}

pub const MANIFEST: &str = "manifest.json";

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, LabError> {
        instance::read_json(&dir.join(MANIFEST))
    }

    pub fn environment(&self) -> Result<Environment, LabError> {
        let mdp = self.instance.to_mdp()?;
        let ambient = self.ambient.to_set(&mdp)?;
        Ok(Environment {
            id: self.env_id.clone(),
            mdp,
            ambient,
        })
    }
}

fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("regretlab".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("regretlab-core".to_string(), regretlab_core::VERSION.to_string()),
    ])
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool, LabError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        if n == 0 {
            return Err(LabError::Invalid("--jobs must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| LabError::Invalid(format!("cannot start worker pool: {e}")))
}

fn mkdir(path: &Path) -> Result<(), LabError> {
    fs::create_dir_all(path).map_err(|e| LabError::io(path, e))
}

/// Runs every (algorithm, seed) pair, writes traces, analyses and the
/// manifest. Returns the experiment directory and the manifest.
pub fn run_experiment(cfg: &ExperimentConfig, opts: &SweepOptions) -> Result<(PathBuf, Manifest), LabError> {
    cfg.validate()?;
    let started = Instant::now();
    let env = cfg.env.build()?;
    let solved = analyze::solve(&env.mdp)?;
    let which = Analyses::from_specs(&cfg.analyses);
    let root = opts.root.clone().unwrap_or_else(|| cfg.output_root());
    let dir = root.join(&cfg.name);
    for a in &cfg.algorithms {
        mkdir(&dir.join(&a.name))?;
    }

    let seeds = cfg.seeds.seeds();
    let jobs: Vec<(usize, u64)> = (0..cfg.algorithms.len())
        .flat_map(|a| seeds.iter().map(move |&s| (a, s)))
        .collect();
    let results: Vec<Result<(RunEntry, TraceSummary), LabError>> = pool(opts.jobs)?.install(|| {
        jobs.par_iter()
            .map(|&(a, seed)| {
                let algo = &cfg.algorithms[a];
                let t0 = Instant::now();
                let trace = algo.run(&env, cfg.horizon, seed).map_err(|source| LabError::Run {
                    run: format!("{}/{seed}", algo.name),
                    source,
                })?;
                let paths = TracePaths::new(&dir.join(&algo.name), seed);
                traces::write_trace(&trace, &paths)?;
                let summary = analyze::summarize(&trace, &env.mdp, &solved, seed, &which)?;
                let rel = |p: &Path| format!("{}/{}", algo.name, p.file_name().unwrap().to_string_lossy());
                let entry = RunEntry {
                    algorithm: algo.name.clone(),
                    seed,
                    trace: rel(&paths.steps),
                    episodes_csv: rel(&paths.episodes),
                    policies_csv: rel(&paths.policies),
                    horizon: trace.horizon(),
                    episodes: trace.episodes.len(),
                    total_regret: trace.total_regret(),
                    run_fingerprint: format!("{:016x}", trace.config_fingerprint),
                    wall_time_s: t0.elapsed().as_secs_f64(),
                };
                Ok((entry, summary))
            })
            .collect()
    });

    let mut runs = Vec::with_capacity(results.len());
    let mut summaries: BTreeMap<String, Vec<TraceSummary>> = BTreeMap::new();
    for r in results {
        let (entry, summary) = r?;
        summaries.entry(entry.algorithm.clone()).or_default().push(summary);
        runs.push(entry);
    }
    let mut notes = Vec::new();
    for a in &cfg.algorithms {
        let sums = &summaries[&a.name];
        notes.push(analyze::write_outputs(&dir.join(&a.name), &a.name, cfg.horizon, &env.mdp, &which, sums)?);
    }

    let manifest = Manifest {
        name: cfg.name.clone(),
        env_id: env.id.clone(),
        fingerprint: cfg.fingerprint(),
        config: cfg.clone(),
        instance: InstanceFile::from_mdp(&env.mdp),
        ambient: AmbientFile::from_set(&env.ambient),
        versions: versions(),
        runs,
        analyses: notes,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    instance::write_json(&dir.join(MANIFEST), &manifest)?;
    Ok((dir, manifest))
}

/// Recomputes analyses from the trace files of a finished experiment.
/// The manifest is rewritten with the new notes.
pub fn analyze_dir(dir: &Path, which: &Analyses, jobs: Option<usize>) -> Result<Vec<AnalysisNote>, LabError> {
    let mut manifest = Manifest::read(dir)?;
    let env = manifest.environment()?;
    let solved = analyze::solve(&env.mdp)?;
    let gap_table = solved.regret_gaps();
    let horizon = manifest.config.horizon;
    if let Some((psi, window)) = which.proxy {
        if window == 0 || psi >= horizon || psi + window > horizon {
            return Err(LabError::Invalid(format!(
                "proxy needs window >= 1 and psi + window <= horizon ({horizon}), got psi {psi}, window {window}"
            )));
        }
    }
    let mut which = *which;
    if which.visit_regime && horizon < regretlab_core::metrics::REGIME_MIN_HORIZON {
        which.visit_regime = false;
    }

    let results: Vec<Result<(String, TraceSummary), LabError>> = pool(jobs)?.install(|| {
        manifest
            .runs
            .par_iter()
            .map(|run| {
                let algo_dir = dir.join(&run.algorithm);
                let paths = TracePaths::new(&algo_dir, run.seed);
                let trace = traces::read_trace(&paths, &env.id, env.mdp.layout(), &gap_table)?;
                let summary = analyze::summarize(&trace, &env.mdp, &solved, run.seed, &which)?;
                Ok((run.algorithm.clone(), summary))
            })
            .collect()
    });
    let mut summaries: BTreeMap<String, Vec<TraceSummary>> = BTreeMap::new();
    for r in results {
        let (algo, summary) = r?;
        summaries.entry(algo).or_default().push(summary);
    }
    let mut notes = Vec::new();
    for a in &manifest.config.algorithms {
        if let Some(sums) = summaries.get(&a.name) {
            notes.push(analyze::write_outputs(&dir.join(&a.name), &a.name, horizon, &env.mdp, &which, sums)?);
        }
    }
    manifest.analyses = notes.clone();
    instance::write_json(&dir.join(MANIFEST), &manifest)?;
    Ok(notes)
}
