//! Duffing oscillator with an optional bilinear breathing crack.
//!
//! The equation of motion is
//!
//! ```text
//! m·ẍ + c·ẋ + F(x) + k2·x² + k3·x³ = U(t),   F(x) = k1·x (x ≥ 0), α·k1·x (x < 0)
//! ```
//!
//! and the measured output is the velocity `ẋ`. Uncertainty enters through
//! gamma-distributed `k1` and `c`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::signals::TimeSeries;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    pub m_kg: f64,
    pub c_ns_per_m: f64,
    pub k1_n_per_m: f64,
    pub k2_n_per_m2: f64,
    pub k3_n_per_m3: f64,
    /// Crack severity; 1 is the healthy reference condition.
    pub alpha: f64,
}

impl PlantParams {
    /// Nominal identified parameters of the beam/magnet rig, healthy.
    pub fn nominal() -> Self {
        PlantParams {
            m_kg: 0.26,
            c_ns_per_m: 1.36,
            k1_n_per_m: 5.49e3,
            k2_n_per_m2: 3.24e4,
            k3_n_per_m3: 4.68e7,
            alpha: 1.0,
        }
    }

    pub fn with_alpha(self, alpha: f64) -> Self {
        PlantParams { alpha, ..self }
    }

    /// Drops the polynomial stiffness terms.
    pub fn linearized(self) -> Self {
        PlantParams {
            k2_n_per_m2: 0.0,
            k3_n_per_m3: 0.0,
            ..self
        }
    }

    pub fn is_healthy(&self) -> bool {
        self.alpha == 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [
            self.m_kg,
            self.c_ns_per_m,
            self.k1_n_per_m,
            self.k2_n_per_m2,
            self.k3_n_per_m3,
            self.alpha,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::validation("plant parameters must be finite"));
        }
        if self.m_kg <= 0.0 {
            return Err(Error::validation("mass must be positive"));
        }
        if self.c_ns_per_m < 0.0 {
            return Err(Error::validation("damping must be non-negative"));
        }
        if self.k1_n_per_m <= 0.0 {
            return Err(Error::validation("linear stiffness must be positive"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::validation(format!(
                "crack severity must lie in (0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Natural frequency and damping ratio of the linear part (healthy side stiffness).
    pub fn linear_modal(&self) -> ModalEstimate {
        let omega = (self.k1_n_per_m / self.m_kg).sqrt();
        ModalEstimate {
            omega_n_rad_s: omega,
            zeta: self.c_ns_per_m / (2.0 * (self.k1_n_per_m * self.m_kg).sqrt()),
        }
    }
}

/// Gamma prior parameterized by mean and dispersion (coefficient of variation).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub mean: f64,
    pub dispersion: f64,
}

impl GammaParams {
    pub fn new(mean: f64, dispersion: f64) -> Result<Self> {
        let p = GammaParams { mean, dispersion };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean > 0.0 && self.mean.is_finite()) {
            return Err(Error::validation("gamma mean must be positive"));
        }
        if !(self.dispersion > 0.0 && self.dispersion.is_finite()) {
            return Err(Error::validation("gamma dispersion must be positive"));
        }
        Ok(())
    }

    pub fn shape(&self) -> f64 {
        1.0 / (self.dispersion * self.dispersion)
    }

    pub fn scale(&self) -> f64 {
        self.mean * self.dispersion * self.dispersion
    }

    fn distribution(&self) -> Result<Gamma<f64>> {
        self.validate()?;
        Gamma::new(self.shape(), self.scale()).map_err(|e| Error::validation(e.to_string()))
    }
}

/// Nominal plant plus independent priors on `k1` and `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StochasticPlantSpec {
    pub nominal: PlantParams,
    pub k1_prior: GammaParams,
    pub c_prior: GammaParams,
}

impl StochasticPlantSpec {
    /// Nominal plant with 1% dispersion on both `k1` and `c`.
    pub fn reference() -> Self {
        let nominal = PlantParams::nominal();
        StochasticPlantSpec {
            nominal,
            k1_prior: GammaParams {
                mean: nominal.k1_n_per_m,
                dispersion: 0.01,
            },
            c_prior: GammaParams {
                mean: nominal.c_ns_per_m,
                dispersion: 0.01,
            },
        }
    }

    /// Same priors, different crack severity.
    pub fn with_alpha(self, alpha: f64) -> Self {
        StochasticPlantSpec {
            nominal: self.nominal.with_alpha(alpha),
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.nominal.validate()?;
        self.k1_prior.validate()?;
        self.c_prior.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub sample_rate_hz: f64,
    pub n_samples: usize,
    /// RK4 substeps per output sample.
    pub oversample: usize,
    /// `(x0 [m], v0 [m/s])`
    pub initial_state: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sample_rate_hz: 512.0,
            n_samples: 2048,
            oversample: 16,
            initial_state: (0.0, 0.0),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::validation("sample rate must be positive"));
        }
        if self.n_samples < 2 {
            return Err(Error::validation("need at least two samples"));
        }
        if self.oversample < 1 {
            return Err(Error::validation("oversample must be at least 1"));
        }
        if !(self.initial_state.0.is_finite() && self.initial_state.1.is_finite()) {
            return Err(Error::validation("initial state must be finite"));
        }
        Ok(())
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples as f64 / self.sample_rate_hz
    }
}

/// Bilinear crack force: `k1·x` when open (x ≥ 0), `α·k1·x` when closed.
pub fn restoring_force(params: &PlantParams, x_m: f64) -> f64 {
    if x_m >= 0.0 {
        params.k1_n_per_m * x_m
    } else {
        params.alpha * params.k1_n_per_m * x_m
    }
}

#[inline]
fn acceleration(p: &PlantParams, x: f64, v: f64, u: f64) -> f64 {
    (u - p.c_ns_per_m * v
        - restoring_force(p, x)
        - p.k2_n_per_m2 * x * x
        - p.k3_n_per_m3 * x * x * x)
        / p.m_kg
}

/// Integrates the plant with fixed-step RK4 and returns the velocity at the
/// input sample instants.
///
/// The force is linearly interpolated between input samples; each output
/// interval is split into `cfg.oversample` RK4 steps.
pub fn simulate(params: &PlantParams, input: &TimeSeries, cfg: &SimConfig) -> Result<TimeSeries> {
    params.validate()?;
    cfg.validate()?;
    if (input.sample_rate_hz() - cfg.sample_rate_hz).abs() > 1e-9 * cfg.sample_rate_hz {
        return Err(Error::validation(format!(
            "input sampled at {} Hz, simulation configured for {} Hz",
            input.sample_rate_hz(),
            cfg.sample_rate_hz
        )));
    }
    if input.len() != cfg.n_samples {
        return Err(Error::validation(format!(
            "input has {} samples, simulation configured for {}",
            input.len(),
            cfg.n_samples
        )));
    }
    let u = input.samples();
    let n = u.len();
    let sub = cfg.oversample;
    let h = 1.0 / (cfg.sample_rate_hz * sub as f64);
    let (mut x, mut v) = cfg.initial_state;
    let mut out = Vec::with_capacity(n);
    out.push(v);
    for k in 0..n - 1 {
        let (u0, u1) = (u[k], u[k + 1]);
        let du = (u1 - u0) / sub as f64;
        for s in 0..sub {
            let ua = u0 + du * s as f64;
            let um = ua + 0.5 * du;
            let ub = ua + du;
            let a1 = acceleration(params, x, v, ua);
            let (x2, v2) = (x + 0.5 * h * v, v + 0.5 * h * a1);
            let a2 = acceleration(params, x2, v2, um);
            let (x3, v3) = (x + 0.5 * h * v2, v + 0.5 * h * a2);
            let a3 = acceleration(params, x3, v3, um);
            let (x4, v4) = (x + h * v3, v + h * a3);
            let a4 = acceleration(params, x4, v4, ub);
            x += h / 6.0 * (v + 2.0 * v2 + 2.0 * v3 + v4);
            v += h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4);
        }
        if !(x.is_finite() && v.is_finite()) {
            return Err(Error::Divergence { step: k + 1 });
        }
        out.push(v);
    }
    TimeSeries::with_start(out, cfg.sample_rate_hz, input.start_time_s())
}

/// `n` iid draws from the gamma prior, one generator seeded with `rng_seed`.
pub fn sample_gamma(prior: &GammaParams, rng_seed: u64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::validation("need at least one draw"));
    }
    let dist = prior.distribution()?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..n).map(|_| dist.sample(&mut rng)).collect())
}

/// Draws one parameter set per realization. Realization `i` uses its own
/// generator seeded with `rng_seed + i`, so draws are independent of `n`.
pub fn sample_realizations(
    spec: &StochasticPlantSpec,
    n: usize,
    rng_seed: u64,
) -> Result<Vec<PlantParams>> {
    if n == 0 {
        return Err(Error::validation("need at least one realization"));
    }
    spec.validate()?;
    (0..n as u64)
        .map(|i| realization_params(spec, rng_seed.wrapping_add(i)))
        .collect()
}

/// Parameter set of a single realization drawn with `seed`.
pub fn realization_params(spec: &StochasticPlantSpec, seed: u64) -> Result<PlantParams> {
    let k1 = spec.k1_prior.distribution()?;
    let c = spec.c_prior.distribution()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(PlantParams {
        k1_n_per_m: k1.sample(&mut rng),
        c_ns_per_m: c.sample(&mut rng),
        ..spec.nominal
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModalEstimate {
    pub omega_n_rad_s: f64,
    pub zeta: f64,
}

impl ModalEstimate {
    pub fn natural_frequency_hz(&self) -> f64 {
        self.omega_n_rad_s / (2.0 * PI)
    }
}

const MODAL_BAND_HZ: (f64, f64) = (5.0, 100.0);
const ZERO_PAD: usize = 16;

/// SDOF modal parameters from a low-amplitude input/velocity record.
///
/// A frequency-response estimate ([`estimate_modal_frf`]) gives the starting
/// point. It is then refined by fitting a discrete SDOF velocity model to the
/// time records (output error, numerator solved by least squares for each
/// trial pole pair). The refinement removes the bias that truncating the
/// response at the end of a record puts on the FRF peak.
pub fn estimate_modal(
    low_amp_response: &TimeSeries,
    low_amp_input: &TimeSeries,
) -> Result<ModalEstimate> {
    let start = estimate_modal_frf(low_amp_response, low_amp_input)?;
    let u = low_amp_input.samples();
    let y = low_amp_response.samples();
    let dt = low_amp_input.dt();
    let x0 = [start.omega_n_rad_s.ln(), start.zeta.ln()];
    let bounds = [
        (x0[0] + 0.8_f64.ln(), x0[0] + 1.25_f64.ln()),
        (
            x0[1] + 0.2_f64.ln(),
            (x0[1] + 5.0_f64.ln()).min(0.95_f64.ln()),
        ),
    ];
    let fit = nelder_mead(
        |p: &[f64]| sdof_output_error(u, y, p[0].exp(), p[1].exp(), dt),
        &x0,
        &bounds,
        &NelderMeadOptions {
            max_evaluations: 300,
            initial_step: 0.002,
            f_tol: 1e-12,
            x_tol: 1e-9,
        },
    );
    Ok(ModalEstimate {
        omega_n_rad_s: fit.x[0].exp(),
        zeta: fit.x[1].exp(),
    })
}

/// Residual sum of squares of the best discrete SDOF fit with poles fixed by
/// `(omega, zeta)`: `y ≈ (b0 + b1·q⁻¹ + b2·q⁻²) / A(q) · u`.
fn sdof_output_error(u: &[f64], y: &[f64], omega: f64, zeta: f64, dt: f64) -> f64 {
    let r = (-zeta * omega * dt).exp();
    let wd = omega * (1.0 - zeta * zeta).max(0.0).sqrt();
    let a1 = -2.0 * r * (wd * dt).cos();
    let a2 = r * r;
    let mut w = vec![0.0; u.len()];
    for k in 0..u.len() {
        let w1 = if k >= 1 { w[k - 1] } else { 0.0 };
        let w2 = if k >= 2 { w[k - 2] } else { 0.0 };
        w[k] = u[k] - a1 * w1 - a2 * w2;
    }
    let col = |lag: usize, k: usize| if k >= lag { w[k - lag] } else { 0.0 };
    let mut gram = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for k in 0..u.len() {
        let phi = Vector3::new(col(0, k), col(1, k), col(2, k));
        gram += phi * phi.transpose();
        rhs += phi * y[k];
    }
    let Some(b) = gram.cholesky().map(|c| c.solve(&rhs)) else {
        return f64::INFINITY;
    };
    (0..u.len())
        .map(|k| (y[k] - b[0] * col(0, k) - b[1] * col(1, k) - b[2] * col(2, k)).powi(2))
        .sum()
}

/// Peak-picking estimate from the frequency response.
///
/// The frequency response `Y/U` is formed from zero-padded transforms of the
/// full records. Because the output is a velocity, this is a mobility, whose
/// magnitude peaks exactly at the undamped natural frequency and whose
/// half-power bandwidth is exactly `2ζω_n`; no damped-to-natural correction
/// is required.
pub fn estimate_modal_frf(
    low_amp_response: &TimeSeries,
    low_amp_input: &TimeSeries,
) -> Result<ModalEstimate> {
    low_amp_response.ensure_compatible(low_amp_input)?;
    if low_amp_response.samples().iter().all(|v| *v == 0.0) {
        return Err(Error::Estimation("response is identically zero".into()));
    }
    let fs = low_amp_input.sample_rate_hz();
    let nfft = low_amp_input.len().next_power_of_two() * ZERO_PAD;
    let fft = FftPlanner::new().plan_fft_forward(nfft);
    let transform = |x: &[f64]| {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|v| Complex::new(*v, 0.0)).collect();
        buf.resize(nfft, Complex::new(0.0, 0.0));
        fft.process(&mut buf);
        buf
    };
    let uf = transform(low_amp_input.samples());
    let yf = transform(low_amp_response.samples());
    let df = fs / nfft as f64;

    let lo = (MODAL_BAND_HZ.0 / df).ceil() as usize;
    let hi = ((MODAL_BAND_HZ.1.min(fs / 2.0)) / df).floor() as usize;
    if hi <= lo + 2 {
        return Err(Error::Estimation(
            "sample rate too low for the modal search band".into(),
        ));
    }
    let u_max = uf[lo..=hi].iter().map(|c| c.norm_sqr()).fold(0.0, f64::max);
    if u_max <= 0.0 {
        return Err(Error::Estimation(
            "input has no energy in the 5-100 Hz band".into(),
        ));
    }
    // |H|² where the input is energetic enough for the ratio to be meaningful
    let mag2: Vec<Option<f64>> = (0..=hi)
        .map(|k| {
            let u2 = uf[k].norm_sqr();
            (k >= lo && u2 >= 1e-2 * u_max).then(|| yf[k].norm_sqr() / u2)
        })
        .collect();

    let (peak_bin, peak) = mag2
        .iter()
        .enumerate()
        .filter_map(|(k, m)| m.map(|m| (k, m)))
        .fold(
            (0, -1.0),
            |best, cur| if cur.1 > best.1 { cur } else { best },
        );
    if peak <= 0.0 {
        return Err(Error::Estimation("no resonance peak found".into()));
    }
    let neighbours = (
        peak_bin.checked_sub(1).and_then(|k| mag2[k]),
        mag2.get(peak_bin + 1).copied().flatten(),
    );
    let (left, right) = match neighbours {
        (Some(l), Some(r)) => (l, r),
        _ => {
            return Err(Error::Estimation(
                "resonance peak lies on the edge of the usable band".into(),
            ))
        }
    };
    // parabolic refinement on |H|
    let (a, b, c) = (left.sqrt(), peak.sqrt(), right.sqrt());
    let denom = a - 2.0 * b + c;
    let offset = if denom != 0.0 {
        0.5 * (a - c) / denom
    } else {
        0.0
    };
    let f_peak = (peak_bin as f64 + offset.clamp(-0.5, 0.5)) * df;
    let peak_mag2 = (b - 0.25 * (a - c) * offset).powi(2);

    let half = 0.5 * peak_mag2;
    let crossing = |step: isize| -> Result<f64> {
        let mut k = peak_bin as isize;
        let mut prev = peak;
        loop {
            let next = k + step;
            let m = usize::try_from(next)
                .ok()
                .and_then(|i| mag2.get(i).copied().flatten())
                .ok_or_else(|| {
                    Error::Estimation("half-power point outside the usable band".into())
                })?;
            if m < half {
                // linear interpolation of |H|² between bins k and next
                let frac = (prev - half) / (prev - m);
                return Ok((k as f64 + frac * step as f64) * df);
            }
            prev = m;
            k = next;
        }
    };
    let f1 = crossing(-1)?;
    let f2 = crossing(1)?;
    let zeta = (f2 - f1) / (2.0 * f_peak);
    if !(zeta > 0.0 && zeta < 1.0 && f_peak > 0.0) {
        return Err(Error::Estimation(format!(
            "implausible estimate f = {f_peak} Hz, zeta = {zeta}"
        )));
    }
    Ok(ModalEstimate {
        omega_n_rad_s: 2.0 * PI * f_peak,
        zeta,
    })
}
