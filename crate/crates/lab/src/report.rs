//! JSON rendering of a classification report.

use regretlab_core::{ClassificationReport, ConfusingSetVerdict};
use serde::{Deserialize, Serialize};

use crate::instance::InstanceFile;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WitnessJson {
    pub policy: Vec<usize>,
    pub state: usize,
    pub improved_gain: f64,
    pub witness_gain: f64,
    pub model: InstanceFile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportJson {
    pub non_degenerate: bool,
    pub interior: bool,
    pub optimal_gain: f64,
    pub bellman_policies: Vec<Vec<usize>>,
    pub optimal_pairs: Vec<usize>,
    pub degeneracy_report: String,
    /// `empty`, `non-empty`, `inconclusive`, or absent for degenerate models.
    pub confusing_set: Option<String>,
    pub confusing_set_empty: Option<bool>,
    pub explorative: Option<bool>,
    /// How `explorative` was decided.
    pub explorative_basis: String,
    pub witness: Option<WitnessJson>,
    pub inconclusive_reason: Option<String>,
}

impl From<&ClassificationReport> for ReportJson {
    fn from(r: &ClassificationReport) -> Self {
        let (witness, inconclusive_reason) = match &r.confusing_set {
            Some(ConfusingSetVerdict::NonEmpty(w)) => (
                Some(WitnessJson {
                    policy: w.policy.actions().to_vec(),
                    state: w.state,
                    improved_gain: w.improved_gain,
                    witness_gain: w.witness_gain,
                    model: InstanceFile::from_mdp(&w.model),
                }),
                None,
            ),
            Some(ConfusingSetVerdict::Inconclusive(why)) => (None, Some(why.clone())),
            _ => (None, None),
        };
        Self {
            non_degenerate: r.non_degenerate,
            interior: r.interior,
            optimal_gain: r.optimal_gain,
            bellman_policies: r.bellman_policies.iter().map(|p| p.actions().to_vec()).collect(),
            optimal_pairs: r.optimal_pairs.clone(),
            degeneracy_report: r.degeneracy_report.clone(),
            confusing_set: r.confusing_set.as_ref().map(|v| v.label().to_string()),
            confusing_set_empty: r.confusing_set_empty(),
            explorative: r.explorative(),
            explorative_basis: "non-empty confusing set, decided for non-degenerate models only".into(),
            witness,
            inconclusive_reason,
        }
    }
}
