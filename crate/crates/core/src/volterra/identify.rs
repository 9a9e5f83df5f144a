use serde::{Deserialize, Serialize};

use super::regression::{build_regression, fit_least_squares, LeastSquaresFit};
use super::{predict, VolterraModel};
use crate::error::{Error, Result};
use crate::kautz::KautzBasis;
use crate::plant::SimConfig;
use crate::signals::{generate_chirp, ChirpSpec, TimeSeries};

/// Excitation and basis sizing shared by every identification run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentificationSetup {
    pub sim: SimConfig,
    /// Chirp amplitude used to fit the linear kernel.
    pub low_amplitude_n: f64,
    /// Chirp amplitude used to fit the quadratic and cubic kernels.
    pub high_amplitude_n: f64,
    pub chirp_f0_hz: f64,
    pub chirp_f1_hz: f64,
    /// Kautz functions per kernel order.
    pub n_functions: [usize; 3],
}

impl Default for IdentificationSetup {
    fn default() -> Self {
        IdentificationSetup {
            sim: SimConfig::default(),
            low_amplitude_n: 0.1,
            high_amplitude_n: 1.0,
            chirp_f0_hz: 15.0,
            chirp_f1_hz: 30.0,
            n_functions: [2, 4, 6],
        }
    }
}

impl IdentificationSetup {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.chirp(1.0).validate()?;
        if !(self.low_amplitude_n > 0.0 && self.high_amplitude_n > 0.0) {
            return Err(Error::validation("excitation amplitudes must be positive"));
        }
        if self.n_functions.iter().any(|&j| j < 2 || j % 2 != 0) {
            return Err(Error::validation(
                "Kautz function counts must be even and at least 2",
            ));
        }
        Ok(())
    }

    pub fn chirp(&self, amplitude_n: f64) -> ChirpSpec {
        ChirpSpec {
            amplitude_n,
            f0_hz: self.chirp_f0_hz,
            f1_hz: self.chirp_f1_hz,
            duration_s: self.sim.duration_s(),
        }
    }

    pub fn low_input(&self) -> Result<TimeSeries> {
        self.excitation(self.low_amplitude_n)
    }

    pub fn high_input(&self) -> Result<TimeSeries> {
        self.excitation(self.high_amplitude_n)
    }

    fn excitation(&self, amplitude_n: f64) -> Result<TimeSeries> {
        let s = generate_chirp(&self.chirp(amplitude_n), self.sim.sample_rate_hz)?;
        if s.len() != self.sim.n_samples {
            return Err(Error::validation(format!(
                "chirp produced {} samples, expected {}",
                s.len(),
                self.sim.n_samples
            )));
        }
        Ok(s)
    }
}

/// Model plus the diagnostics of both regression steps.
#[derive(Debug, Clone)]
pub struct Identification {
    pub model: VolterraModel,
    pub linear_fit: LeastSquaresFit,
    pub nonlinear_fit: LeastSquaresFit,
}

/// Two-step kernel estimation: the linear kernel from the low-amplitude pair,
/// then the quadratic and cubic kernels from the high-amplitude residual with
/// the linear kernel held fixed.
pub fn identify_two_step(
    basis: &KautzBasis,
    u_low: &TimeSeries,
    y_low: &TimeSeries,
    u_high: &TimeSeries,
    y_high: &TimeSeries,
) -> Result<VolterraModel> {
    identify_two_step_detailed(basis, u_low, y_low, u_high, y_high).map(|id| id.model)
}

pub fn identify_two_step_detailed(
    basis: &KautzBasis,
    u_low: &TimeSeries,
    y_low: &TimeSeries,
    u_high: &TimeSeries,
    y_high: &TimeSeries,
) -> Result<Identification> {
    if (u_low.sample_rate_hz() - u_high.sample_rate_hz()).abs() > 1e-9 * u_low.sample_rate_hz() {
        return Err(Error::validation(
            "low and high amplitude records must share a sample rate",
        ));
    }
    let linear = build_regression(basis, u_low, y_low, &[1])?;
    let linear_fit = fit_least_squares(&linear)?;
    let linear_model = VolterraModel::zeros(basis.clone()).with_b1(linear_fit.coefficients.clone());

    let y1 = predict(&linear_model, u_high)?.y1;
    let residual = y_high.with_samples(
        y_high
            .samples()
            .iter()
            .zip(y1.samples())
            .map(|(y, l)| y - l)
            .collect(),
    )?;
    let nonlinear = build_regression(basis, u_high, &residual, &[2, 3])?;
    let nonlinear_fit = fit_least_squares(&nonlinear)?;

    let mut keys = linear.column_index().to_vec();
    keys.extend_from_slice(nonlinear.column_index());
    let coefficients: Vec<f64> = linear_fit
        .coefficients
        .iter()
        .chain(&nonlinear_fit.coefficients)
        .copied()
        .collect();
    let model = VolterraModel::from_reduced(basis.clone(), &keys, &coefficients)?;
    Ok(Identification {
        model,
        linear_fit,
        nonlinear_fit,
    })
}
