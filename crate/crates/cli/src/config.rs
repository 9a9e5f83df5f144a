use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voltshm::detection::FeatureKind;
use voltshm::montecarlo::EnsembleConfig;
use voltshm::volterra::{IdentificationSetup, PoleRelations};
use voltshm::StochasticPlantSpec;

use crate::CliError;

pub const DESK_REALIZATIONS: usize = 256;
pub const FULL_REALIZATIONS: usize = 2048;

pub const DEFAULT_SEVERITIES: [f64; 7] = [0.98, 0.96, 0.94, 0.92, 0.90, 0.88, 0.86];
pub const DEFAULT_BETAS: [f64; 3] = [0.005, 0.01, 0.02];

/// Everything a pipeline run needs. Every field has a default, so `{}` is a
/// valid config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// JSON file holding a `StochasticPlantSpec`; the reference spec if unset.
    pub plant: Option<PathBuf>,
    pub seed: u64,
    /// Realizations per condition; 256 unless `--full` is given.
    pub n_realizations: Option<usize>,
    /// Damaged crack severities.
    pub severities: Vec<f64>,
    pub kinds: Vec<FeatureKind>,
    pub betas: Vec<f64>,
    /// Measurement SNR; `null` gives noise-free records.
    pub snr_db: Option<f64>,
    /// Pole relations; fitted on the nominal plant when unset.
    pub relations: Option<PoleRelations>,
    pub setup: IdentificationSetup,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            plant: None,
            seed: 0,
            n_realizations: None,
            severities: DEFAULT_SEVERITIES.to_vec(),
            kinds: FeatureKind::ALL.to_vec(),
            betas: DEFAULT_BETAS.to_vec(),
            snr_db: Some(30.0),
            relations: None,
            setup: IdentificationSetup::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(n) = self.n_realizations {
            if n < 16 {
                return Err(CliError::Config(format!(
                    "n_realizations must be at least 16 for bandwidth selection, got {n}"
                )));
            }
        }
        for &a in &self.severities {
            if !(a > 0.0 && a <= 1.0) {
                return Err(CliError::Config(format!("severity {a} outside (0, 1]")));
            }
        }
        let mut labels: Vec<String> = self.severities.iter().map(|a| severity_label(*a)).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.severities.len() {
            return Err(CliError::Config(
                "severities must be distinct at two decimals".into(),
            ));
        }
        for &b in &self.betas {
            if !(b > 0.0 && b <= 0.5) {
                return Err(CliError::Config(format!("beta {b} outside (0, 0.5]")));
            }
        }
        if self.kinds.is_empty() || self.betas.is_empty() {
            return Err(CliError::Config("kinds and betas must be non-empty".into()));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(CliError::Config("snr_db must be finite".into()));
            }
        }
        if let Some(r) = &self.relations {
            r.validate()?;
        }
        self.setup.validate()?;
        Ok(())
    }

    pub fn realizations(&self, full: bool) -> usize {
        if full {
            FULL_REALIZATIONS
        } else {
            self.n_realizations.unwrap_or(DESK_REALIZATIONS)
        }
    }

    pub fn plant_spec(&self) -> Result<StochasticPlantSpec, CliError> {
        let spec = match &self.plant {
            None => StochasticPlantSpec::reference(),
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Reference training and test sets followed by the damaged severities.
    pub fn conditions(&self) -> Vec<ConditionId> {
        let mut c = vec![ConditionId::ReferenceTrain, ConditionId::ReferenceTest];
        c.extend(self.severities.iter().map(|&a| ConditionId::Damaged(a)));
        c
    }

    pub fn ensemble_config(
        &self,
        condition: ConditionId,
        n: usize,
        relations: PoleRelations,
    ) -> EnsembleConfig {
        EnsembleConfig {
            n_realizations: n,
            base_seed: condition.base_seed(self.seed),
            relations,
            snr_db: self.snr_db,
            setup: self.setup,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConditionId {
    ReferenceTrain,
    ReferenceTest,
    Damaged(f64),
}

impl ConditionId {
    pub fn name(self) -> String {
        match self {
            ConditionId::ReferenceTrain => "reference_train".into(),
            ConditionId::ReferenceTest => "reference_test".into(),
            ConditionId::Damaged(a) => format!("alpha_{}", severity_label(a)),
        }
    }

    pub fn severity(self) -> f64 {
        match self {
            ConditionId::Damaged(a) => a,
            _ => 1.0,
        }
    }

    /// First seed of the condition: `seed + offset·2³²` with offset 0 for
    /// the training set, 1 for the test set and `2 + round(10⁴·(1 − α))` for
    /// a damaged severity. Realization `i` then uses `first + i`.
    pub fn base_seed(self, seed: u64) -> u64 {
        let offset = match self {
            ConditionId::ReferenceTrain => 0,
            ConditionId::ReferenceTest => 1,
            ConditionId::Damaged(a) => 2 + ((1.0 - a) * 1e4).round() as u64,
        };
        seed.wrapping_add(offset << 32)
    }
}

pub fn severity_label(a: f64) -> String {
    format!("{a:.2}")
}
