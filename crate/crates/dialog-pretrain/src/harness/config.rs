//! Experiment configuration: serializable, content-hashed, overridable
//! from the command line.

use crate::error::{Error, Result};
use crate::training::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_lowercase().as_str() {
            "f32" => Some(Precision::F32),
            "f64" => Some(Precision::F64),
            _ => None,
        }
    }
}

/// Which (pretraining, task) cells the experiment matrix skips.
///
/// `Matched` drops the retrieval task for the three objectives whose
/// pretraining is candidate discrimination against the negative pool
/// (retrieval, masked retrieval, inconsistency) plus the generation
/// self-pair, one cell per objective row. `SelfOnly` drops only the two
/// literal self-pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionPolicy {
    Matched,
    SelfOnly,
}

impl ExclusionPolicy {
    pub fn excludes(self, objective: &str, task: &str) -> bool {
        match self {
            ExclusionPolicy::Matched => match task {
                "nur" => matches!(objective, "nur" | "mur" | "ini"),
                "nug" => objective == "nug",
                _ => false,
            },
            ExclusionPolicy::SelfOnly => objective == task,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ExperimentConfig {
    pub pipeline: PipelineConfig,
    pub precision: Precision,
    pub seeds: Vec<u64>,
    /// Fine-tuning data fractions for the limited-data protocol.
    pub fractions: Vec<f64>,
    /// New-domain protocol parameters.
    pub target_domain: String,
    pub n_in: usize,
    pub n_out: usize,
    pub exclusion: ExclusionPolicy,
    /// Stream id freezing evaluation candidate sets.
    pub eval_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            pipeline: PipelineConfig::default(),
            precision: Precision::F64,
            seeds: vec![1, 2, 3],
            fractions: vec![0.01, 0.02, 0.05, 0.1, 0.5],
            target_domain: "restaurant".into(),
            n_in: 50,
            n_out: 1000,
            exclusion: ExclusionPolicy::Matched,
            eval_seed: crate::downstream::DEFAULT_EVAL_SEED,
        }
    }
}

impl ExperimentConfig {
    /// A reduced configuration suited to quick desk-scale runs.
    pub fn small() -> Self {
        ExperimentConfig {
            pipeline: PipelineConfig::small(),
            ..Default::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        super::write_atomic(path, text.as_bytes())
    }

    /// Content hash identifying this configuration in every artifact.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
