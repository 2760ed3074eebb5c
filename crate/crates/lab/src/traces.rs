//! Per-run CSV files.
//!
//! * `<seed>.csv`: `t,state,action,gap,episode,episode_start,optimistic_gain`
//! * `<seed>.episodes.csv`: `episode,t_start,policy_hash,optimistic_gain`
//! * `<seed>.policies.csv`: `policy_hash,actions`, one row per distinct
//!   policy, actions space-separated in state order.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use regretlab_core::learner::EpisodeRecord;
use regretlab_core::mdp::Layout;
use regretlab_core::{Policy, RunTrace, VisitStats};

use crate::{fmt_f64, LabError};

pub const TRACE_HEADER: [&str; 7] = ["t", "state", "action", "gap", "episode", "episode_start", "optimistic_gain"];
pub const EPISODE_HEADER: [&str; 4] = ["episode", "t_start", "policy_hash", "optimistic_gain"];
pub const POLICY_HEADER: [&str; 2] = ["policy_hash", "actions"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TracePaths {
    pub steps: PathBuf,
    pub episodes: PathBuf,
    pub policies: PathBuf,
}

impl TracePaths {
    pub fn new(dir: &Path, seed: u64) -> Self {
        Self {
            steps: dir.join(format!("{seed}.csv")),
            episodes: dir.join(format!("{seed}.episodes.csv")),
            policies: dir.join(format!("{seed}.policies.csv")),
        }
    }
}

fn writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, LabError> {
    let file = File::create(path).map_err(|e| LabError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::with_capacity(1 << 20, file)))
}

fn hash_hex(pi: &Policy) -> String {
    format!("{:016x}", pi.hash64())
}

pub fn write_trace(trace: &RunTrace, paths: &TracePaths) -> Result<(), LabError> {

    let mut w = writer(&paths.steps)?;
    w.write_record(TRACE_HEADER).map_err(|e| LabError::csv(&paths.steps, e))?;
    let gains: Vec<String> = trace.episodes.iter().map(|e| fmt_f64(e.optimistic_gain)).collect();
    let gaps: Vec<String> = trace.gap_table.iter().map(|&g| fmt_f64(g)).collect();
    for step in trace.steps() {
        let e = step.episode - 1;
        w.write_record([
            step.t.to_string().as_str(),
            step.state.to_string().as_str(),
            step.action.to_string().as_str(),
            gaps[step.pair].as_str(),
            step.episode.to_string().as_str(),
            if step.episode_start { "1" } else { "0" },
            gains[e].as_str(),
        ])
        .map_err(|e| LabError::csv(&paths.steps, e))?;
    }
    w.flush().map_err(|e| LabError::io(&paths.steps, e))?;

    let mut w = writer(&paths.episodes)?;
    w.write_record(EPISODE_HEADER).map_err(|e| LabError::csv(&paths.episodes, e))?;
    for e in &trace.episodes {
        w.write_record([
            e.index.to_string(),
            e.t_start.to_string(),
            hash_hex(&e.policy),
            fmt_f64(e.optimistic_gain),
        ])
        .map_err(|e| LabError::csv(&paths.episodes, e))?;
    }
    w.flush().map_err(|e| LabError::io(&paths.episodes, e))?;

    let mut w = writer(&paths.policies)?;
    w.write_record(POLICY_HEADER).map_err(|e| LabError::csv(&paths.policies, e))?;
    let mut seen = BTreeSet::new();
    for e in &trace.episodes {
        let key = hash_hex(&e.policy);
        if seen.insert(key.clone()) {
            let actions: Vec<String> = e.policy.actions().iter().map(|a| a.to_string()).collect();
            w.write_record([key, actions.join(" ")]).map_err(|e| LabError::csv(&paths.policies, e))?;
        }
    }
    w.flush().map_err(|e| LabError::io(&paths.policies, e))?;
    Ok(())
}

fn reader(path: &Path, header: &[&str]) -> Result<csv::Reader<File>, LabError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| LabError::csv(path, e))?;
    let got = r.headers().map_err(|e| LabError::csv(path, e))?;
    if !got.iter().eq(header.iter().copied()) {
        return Err(LabError::Invalid(format!(
            "{}: expected header `{}`, found `{}`",
            path.display(),
            header.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    Ok(r)
}

fn field<T: std::str::FromStr>(record: &csv::StringRecord, i: usize, path: &Path, line: u64) -> Result<T, LabError> {
    record
        .get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| LabError::Invalid(format!("{}: line {line}: bad value in column {i}", path.display())))
}

/// Loads a trace written by [`write_trace`]. Rewards and next states are not
/// logged, so the loaded trace carries empty final statistics.
pub fn read_trace(paths: &TracePaths, env_id: &str, layout: &Layout, gap_table: &[f64]) -> Result<RunTrace, LabError> {
    let mut policies = BTreeMap::new();
    let mut r = reader(&paths.policies, &POLICY_HEADER)?;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| LabError::csv(&paths.policies, e))?;
        let line = i as u64 + 2;
        let hash: String = field(&rec, 0, &paths.policies, line)?;
        let actions = rec[1]
            .split_whitespace()
            .map(|a| a.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| LabError::Invalid(format!("{}: line {line}: bad action list", paths.policies.display())))?;
        let pi = Policy::new(actions);
        pi.validate(layout)?;
        policies.insert(hash, pi);
    }

    let mut episodes = Vec::new();
    let mut r = reader(&paths.episodes, &EPISODE_HEADER)?;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| LabError::csv(&paths.episodes, e))?;
        let line = i as u64 + 2;
        let hash: String = field(&rec, 2, &paths.episodes, line)?;
        let policy = policies
            .get(&hash)
            .cloned()
            .ok_or_else(|| LabError::Invalid(format!("{}: line {line}: unknown policy {hash}", paths.episodes.display())))?;
        episodes.push(EpisodeRecord {
            index: field(&rec, 0, &paths.episodes, line)?,
            t_start: field(&rec, 1, &paths.episodes, line)?,
            policy,
            optimistic_gain: field(&rec, 3, &paths.episodes, line)?,
            evi_iterations: 0,
        });
    }

    let mut pairs = Vec::new();
    let mut episode_of_step = Vec::new();
    let mut r = reader(&paths.steps, &TRACE_HEADER)?;
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while r.read_record(&mut rec).map_err(|e| LabError::csv(&paths.steps, e))? {
        line += 1;
        let t: u64 = field(&rec, 0, &paths.steps, line)?;
        let state: usize = field(&rec, 1, &paths.steps, line)?;
        let action: usize = field(&rec, 2, &paths.steps, line)?;
        let gap: f64 = field(&rec, 3, &paths.steps, line)?;
        let episode: usize = field(&rec, 4, &paths.steps, line)?;
        if t != line - 1 || state >= layout.n_states() || action >= layout.n_actions(state) || episode == 0 || episode > episodes.len() {
            return Err(LabError::Invalid(format!("{}: line {line}: inconsistent row", paths.steps.display())));
        }
        let z = layout.pair(state, action);
        if (gap - gap_table[z]).abs() > 1e-9 {
            return Err(LabError::Invalid(format!(
                "{}: line {line}: logged gap {gap} differs from the model's {}",
                paths.steps.display(),
                gap_table[z]
            )));
        }
        pairs.push(z as u32);
        episode_of_step.push((episode - 1) as u32);
    }

    Ok(RunTrace {
        env_id: env_id.into(),
        config_fingerprint: 0,
        layout: layout.clone(),
        gap_table: gap_table.to_vec(),
        final_stats: VisitStats::new(layout),
        pairs,
        episode_of_step,
        episodes,
    })
}
