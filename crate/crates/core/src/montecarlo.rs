//! Monte Carlo identification of the stochastic Volterra model.
//!
//! Each realization draws `k1` and `c` from their priors, simulates the low-
//! and high-amplitude chirp tests, corrupts both responses with measurement
//! noise, estimates the modal parameters from the low-amplitude record, maps
//! them to Kautz poles through the pole relations and identifies a Volterra
//! model. Realization `i` is seeded with `base_seed + i`; the parameter draw
//! and the two noise records use separate ChaCha streams of that seed.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{
    estimate_modal, realization_params, simulate, ModalEstimate, PlantParams, StochasticPlantSpec,
};
use crate::signals::{add_noise_snr_with_rng, TimeSeries};
use crate::volterra::{
    basis_from_modal, identify_two_step, IdentificationSetup, PoleRelations, VolterraModel,
    VolterraModelFile,
};

/// Fraction of failed realizations above which a run is aborted.
pub const MAX_FAILURE_FRACTION: f64 = 0.05;

const NOISE_STREAM_LOW: u64 = 1;
const NOISE_STREAM_HIGH: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_realizations: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub relations: PoleRelations,
    /// Measurement SNR in dB; `None` gives noise-free records.
    #[serde(default = "default_snr")]
    pub snr_db: Option<f64>,
    #[serde(flatten)]
    pub setup: IdentificationSetup,
}

fn default_snr() -> Option<f64> {
    Some(30.0)
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            n_realizations: 2048,
            base_seed: 0,
            relations: PoleRelations::reference(),
            snr_db: default_snr(),
            setup: IdentificationSetup::default(),
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_realizations < 2 {
            return Err(Error::validation(
                "an ensemble needs at least 2 realizations",
            ));
        }
        if let Some(snr) = self.snr_db {
            if !snr.is_finite() {
                return Err(Error::validation("SNR must be finite"));
            }
        }
        self.relations.validate()?;
        self.setup.validate()
    }

    pub fn seed_of(&self, index: usize) -> u64 {
        self.base_seed.wrapping_add(index as u64)
    }
}

/// Records of one realization, as fed to the identification.
#[derive(Debug, Clone)]
pub struct RealizationData {
    pub params: PlantParams,
    pub u_low: TimeSeries,
    pub y_low: TimeSeries,
    pub u_high: TimeSeries,
    pub y_high: TimeSeries,
}

/// Simulates realization `index` of `spec` (noise included).
pub fn simulate_realization(
    spec: &StochasticPlantSpec,
    cfg: &EnsembleConfig,
    index: usize,
) -> Result<RealizationData> {
    let seed = cfg.seed_of(index);
    let params = realization_params(spec, seed)?;
    let u_low = cfg.setup.low_input()?;
    let u_high = cfg.setup.high_input()?;
    let mut y_low = simulate(&params, &u_low, &cfg.setup.sim)?;
    let mut y_high = simulate(&params, &u_high, &cfg.setup.sim)?;
    if let Some(snr) = cfg.snr_db {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(NOISE_STREAM_LOW);
        y_low = add_noise_snr_with_rng(&y_low, snr, &mut rng)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(NOISE_STREAM_HIGH);
        y_high = add_noise_snr_with_rng(&y_high, snr, &mut rng)?;
    }
    Ok(RealizationData {
        params,
        u_low,
        y_low,
        u_high,
        y_high,
    })
}

#[derive(Debug, Clone)]
pub struct RealizationResult {
    pub index: usize,
    pub params: PlantParams,
    pub modal: ModalEstimate,
    pub model: VolterraModel,
}

/// Identifies a model from already simulated records.
pub fn identify_realization(
    data: &RealizationData,
    cfg: &EnsembleConfig,
) -> Result<(ModalEstimate, VolterraModel)> {
    let modal = estimate_modal(&data.y_low, &data.u_low)?;
    let basis = basis_from_modal(
        &modal,
        &cfg.relations,
        cfg.setup.n_functions,
        cfg.setup.sim.sample_rate_hz,
        cfg.setup.sim.n_samples,
    )?;
    let model = identify_two_step(&basis, &data.u_low, &data.y_low, &data.u_high, &data.y_high)?;
    Ok((modal, model))
}

/// Full pipeline for realization `index`.
pub fn run_realization(
    spec: &StochasticPlantSpec,
    cfg: &EnsembleConfig,
    index: usize,
) -> Result<RealizationResult> {
    let data = simulate_realization(spec, cfg, index)?;
    let (modal, model) = identify_realization(&data, cfg)?;
    Ok(RealizationResult {
        index,
        params: data.params,
        modal,
        model,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealizationFailure {
    pub index: usize,
    pub message: String,
}

/// Identified models of the successful realizations, in realization order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelEnsemble {
    pub config: EnsembleConfig,
    pub spec: StochasticPlantSpec,
    /// Realization index of each member.
    pub indices: Vec<usize>,
    pub models: Vec<VolterraModel>,
    pub modal: Vec<ModalEstimate>,
    pub params: Vec<PlantParams>,
    pub failures: Vec<RealizationFailure>,
}

impl ModelEnsemble {
    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Members `range` of this ensemble as a new ensemble.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ModelEnsemble {
        ModelEnsemble {
            config: self.config,
            spec: self.spec,
            indices: self.indices[range.clone()].to_vec(),
            models: self.models[range.clone()].to_vec(),
            modal: self.modal[range.clone()].to_vec(),
            params: self.params[range].to_vec(),
            failures: Vec::new(),
        }
    }

    /// Builds an ensemble from per-realization outcomes, applying the failure
    /// budget.
    pub fn from_results(
        spec: StochasticPlantSpec,
        config: EnsembleConfig,
        results: Vec<Result<RealizationResult>>,
    ) -> Result<ModelEnsemble> {
        let total = results.len();
        let mut ens = ModelEnsemble {
            config,
            spec,
            indices: Vec::with_capacity(total),
            models: Vec::with_capacity(total),
            modal: Vec::with_capacity(total),
            params: Vec::with_capacity(total),
            failures: Vec::new(),
        };
        for (i, r) in results.into_iter().enumerate() {
            match r {
                Ok(r) => {
                    ens.indices.push(r.index);
                    ens.models.push(r.model);
                    ens.modal.push(r.modal);
                    ens.params.push(r.params);
                }
                Err(e) => ens.failures.push(RealizationFailure {
                    index: i,
                    message: e.to_string(),
                }),
            }
        }
        let failed = ens.failures.len();
        if failed as f64 > MAX_FAILURE_FRACTION * total as f64 || ens.models.len() < 2 {
            return Err(Error::EnsembleAborted {
                failed,
                total,
                first: ens
                    .failures
                    .first()
                    .map(|f| format!("realization {}: {}", f.index, f.message))
                    .unwrap_or_default(),
            });
        }
        Ok(ens)
    }
}

/// Runs all realizations on the current rayon pool. Results are ordered by
/// realization index whatever the completion order.
pub fn run_ensemble(spec: &StochasticPlantSpec, cfg: &EnsembleConfig) -> Result<ModelEnsemble> {
    spec.validate()?;
    cfg.validate()?;
    let results: Vec<Result<RealizationResult>> = (0..cfg.n_realizations)
        .into_par_iter()
        .map(|i| run_realization(spec, cfg, i))
        .collect();
    ModelEnsemble::from_results(*spec, *cfg, results)
}

/// `conv(N) = sqrt((1/N) Σ_{n≤N} Σ_k h_n(k)² Δt)` for `N = 1..len`.
pub fn convergence_metric(functions: &[Vec<f64>], dt: f64) -> Result<Vec<f64>> {
    let Some(first) = functions.first() else {
        return Err(Error::validation(
            "convergence metric needs at least one member",
        ));
    };
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation("time step must be positive"));
    }
    if functions.iter().any(|h| h.len() != first.len()) {
        return Err(Error::validation("members must share a length"));
    }
    let mut acc = 0.0;
    Ok(functions
        .iter()
        .enumerate()
        .map(|(n, h)| {
            acc += h.iter().map(|v| v * v).sum::<f64>() * dt;
            (acc / (n + 1) as f64).sqrt()
        })
        .collect())
}

/// Convergence curve of kernel `order` over the ensemble members: the first
/// kernel's impulse response, or the main diagonal of kernels 2 and 3.
pub fn ensemble_convergence(ensemble: &ModelEnsemble, order: usize) -> Result<Vec<f64>> {
    if !(1..=3).contains(&order) {
        return Err(Error::validation(format!(
            "kernel order must be 1, 2 or 3, got {order}"
        )));
    }
    let functions: Vec<Vec<f64>> = ensemble
        .models
        .par_iter()
        .map(|m| m.kernel_time_function(order))
        .collect();
    convergence_metric(&functions, 1.0 / ensemble.config.setup.sim.sample_rate_hz)
}

/// Largest relative deviation from the final value over the last quarter.
pub fn last_quartile_variation(curve: &[f64]) -> f64 {
    let Some(&last) = curve.last() else {
        return f64::NAN;
    };
    let start = curve.len() - curve.len().div_ceil(4);
    curve[start..]
        .iter()
        .map(|v| ((v - last) / last).abs())
        .fold(0.0, f64::max)
}

pub const ENSEMBLE_FORMAT_VERSION: &str = "model_ensemble_v1";
const ENSEMBLE_FILE: &str = "ensemble.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleFile {
    version: String,
    config: EnsembleConfig,
    spec: StochasticPlantSpec,
    members: Vec<MemberRecord>,
    failures: Vec<RealizationFailure>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MemberRecord {
    index: usize,
    omega_n_rad_s: f64,
    zeta: f64,
    params: PlantParams,
}

pub fn model_file_name(index: usize) -> String {
    format!("model_{index}.json")
}

impl ModelEnsemble {
    /// Writes `ensemble.json` and one `model_<i>.json` per member into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let file = EnsembleFile {
            version: ENSEMBLE_FORMAT_VERSION.into(),
            config: self.config,
            spec: self.spec,
            members: self
                .indices
                .iter()
                .zip(&self.modal)
                .zip(&self.params)
                .map(|((&index, m), &params)| MemberRecord {
                    index,
                    omega_n_rad_s: m.omega_n_rad_s,
                    zeta: m.zeta,
                    params,
                })
                .collect(),
            failures: self.failures.clone(),
        };
        write_json(&dir.join(ENSEMBLE_FILE), &file)?;
        self.indices
            .par_iter()
            .zip(&self.models)
            .try_for_each(|(&i, m)| write_json(&dir.join(model_file_name(i)), &m.to_file()))
    }

    pub fn load(dir: &Path) -> Result<ModelEnsemble> {
        let file: EnsembleFile = read_json(&dir.join(ENSEMBLE_FILE))?;
        if file.version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::Format {
                path: dir.join(ENSEMBLE_FILE),
                message: format!("unsupported ensemble version {:?}", file.version),
            });
        }
        let models = file
            .members
            .par_iter()
            .map(|m| {
                let path = dir.join(model_file_name(m.index));
                let f: VolterraModelFile = read_json(&path)?;
                VolterraModel::from_file(&f).map_err(|e| Error::Format {
                    path,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelEnsemble {
            config: file.config,
            spec: file.spec,
            indices: file.members.iter().map(|m| m.index).collect(),
            modal: file
                .members
                .iter()
                .map(|m| ModalEstimate {
                    omega_n_rad_s: m.omega_n_rad_s,
                    zeta: m.zeta,
                })
                .collect(),
            params: file.members.iter().map(|m| m.params).collect(),
            models,
            failures: file.failures,
        })
    }

    /// Paths `load` expects in `dir`, for error messages.
    pub fn expected_paths(dir: &Path) -> Vec<PathBuf> {
        vec![dir.join(ENSEMBLE_FILE), dir.join("model_<i>.json")]
    }
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}
