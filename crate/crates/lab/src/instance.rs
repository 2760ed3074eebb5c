//! JSON instance and ambient-set files.

use std::fs;
use std::path::Path;

use regretlab_core::confidence::KernelConstraint;
use regretlab_core::{AmbientSet, Mdp};
use serde::{Deserialize, Serialize};

use crate::LabError;

/// Pair-major instance file: `rewards[z]` and `kernel[z]` for `z` ordered by
/// state, then action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub states: usize,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub kernel: Vec<Vec<f64>>,
}

impl InstanceFile {
    pub fn from_mdp(m: &Mdp) -> Self {
        Self {
            states: m.n_states(),
            actions: m.layout().actions_per_state(),
            rewards: m.rewards().to_vec(),
            kernel: m.kernel_rows(),
        }
    }

    /// Builds the model; it must be communicating.
    pub fn to_mdp(&self) -> Result<Mdp, LabError> {
        if self.actions.len() != self.states {
            return Err(LabError::Invalid(format!(
                "instance: `actions` has {} entries for {} states",
                self.actions.len(),
                self.states
            )));
        }
        Ok(Mdp::new(&self.actions, self.rewards.clone(), self.kernel.clone())?)
    }

    pub fn read(path: &Path) -> Result<Self, LabError> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        write_json(path, self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelEntry {
    Free,
    Support(Vec<bool>),
    Fixed(Vec<f64>),
}

/// Ambient set, one entry per pair in pair-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmbientFile {
    pub reward_bounds: Vec<(f64, f64)>,
    pub kernel: Vec<KernelEntry>,
}

impl AmbientFile {
    pub fn from_set(ambient: &AmbientSet) -> Self {
        Self {
            reward_bounds: ambient.reward_bounds.clone(),
            kernel: ambient
                .kernel
                .iter()
                .map(|k| match k {
                    KernelConstraint::Free => KernelEntry::Free,
                    KernelConstraint::Support(mask) => KernelEntry::Support(mask.clone()),
                    KernelConstraint::Fixed(row) => KernelEntry::Fixed(row.clone()),
                })
                .collect(),
        }
    }

    pub fn to_set(&self, m: &Mdp) -> Result<AmbientSet, LabError> {
        let set = AmbientSet {
            reward_bounds: self.reward_bounds.clone(),
            kernel: self
                .kernel
                .iter()
                .map(|k| match k {
                    KernelEntry::Free => KernelConstraint::Free,
                    KernelEntry::Support(mask) => KernelConstraint::Support(mask.clone()),
                    KernelEntry::Fixed(row) => KernelConstraint::Fixed(row.clone()),
                })
                .collect(),
        };
        set.validate(m.layout()).map_err(|e| LabError::Invalid(format!("ambient: {e}")))?;
        Ok(set)
    }
}

/// The named ambient presets accepted wherever an ambient file is.
pub fn ambient_preset(name: &str, m: &Mdp) -> Option<AmbientSet> {
    match name {
        "free" => Some(AmbientSet::free(m.layout())),
        "fixed-kernel" | "fixed_kernel" => Some(AmbientSet::fixed_kernel(m)),
        "support" => Some(AmbientSet::support_of(m)),
        _ => None,
    }
}

/// A preset name or the path of an ambient file.
pub fn load_ambient(arg: &str, m: &Mdp) -> Result<AmbientSet, LabError> {
    match ambient_preset(arg, m) {
        Some(set) => Ok(set),
        None if !Path::new(arg).exists() => Err(LabError::Invalid(format!(
            "ambient `{arg}` is neither a preset (free, fixed-kernel, support) nor an existing file"
        ))),
        None => AmbientFile::read(Path::new(arg))?.to_set(m),
    }
}

impl AmbientFile {
    pub fn read(path: &Path) -> Result<Self, LabError> {
        read_json(path)
    }

    pub fn write(&self, path: &Path) -> Result<(), LabError> {
        write_json(path, self)
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, LabError> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| LabError::Json {
        path: path.display().to_string(),
        source: e,
    })
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), LabError> {
    let mut text = serde_json::to_string_pretty(value).expect("plain data serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| LabError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use regretlab_core::envs;

    #[test]
    fn instance_round_trip() {
        let m = envs::riverswim(3).unwrap();
        let file = InstanceFile::from_mdp(&m);
        let text = serde_json::to_string(&file).unwrap();
        let back: InstanceFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_mdp().unwrap(), m);
    }

    #[test]
    fn ambient_round_trip() {
        let m = envs::figure7().unwrap();
        for set in [AmbientSet::free(m.layout()), AmbientSet::fixed_kernel(&m), AmbientSet::support_of(&m)] {
            let file = AmbientFile::from_set(&set);
            let text = serde_json::to_string(&file).unwrap();
            let back: AmbientFile = serde_json::from_str(&text).unwrap();
            assert_eq!(back.to_set(&m).unwrap(), set);
        }
    }

    #[test]
    fn mismatched_actions_are_rejected() {
        let file = InstanceFile {
            states: 2,
            actions: vec![1],
            rewards: vec![0.5],
            kernel: vec![vec![1.0, 0.0]],
        };
        assert!(matches!(file.to_mdp(), Err(LabError::Invalid(_))));
    }
}
