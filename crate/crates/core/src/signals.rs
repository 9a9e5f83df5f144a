//! Excitation signals, measurement noise and spectral diagnostics.
//!
//! [`TimeSeries`] is the sample container used by every other module. Its
//! on-disk form is a two-column CSV (`time_s,value`).

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniformly sampled, finite, real-valued signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    start_time_s: f64,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        Self::with_start(samples, sample_rate_hz, 0.0)
    }

    pub fn with_start(samples: Vec<f64>, sample_rate_hz: f64, start_time_s: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::validation(
                "time series must contain at least one sample",
            ));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::validation(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if !start_time_s.is_finite() {
            return Err(Error::validation("start time must be finite"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("sample {i} is not finite")));
        }
        Ok(TimeSeries {
            samples,
            sample_rate_hz,
            start_time_s,
        })
    }

    /// All-zero series of the given length.
    pub fn zeros(len: usize, sample_rate_hz: f64) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate_hz)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn start_time_s(&self) -> f64 {
        self.start_time_s
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate_hz
    }

    pub fn time_at(&self, index: usize) -> f64 {
        self.start_time_s + index as f64 / self.sample_rate_hz
    }

    pub fn mean_square(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn rms(&self) -> f64 {
        self.mean_square().sqrt()
    }

    /// Multiplies every sample by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::with_start(
            self.samples.iter().map(|v| v * factor).collect(),
            self.sample_rate_hz,
            self.start_time_s,
        )
    }

    /// Same timing, different samples. Lengths must agree.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        if samples.len() != self.samples.len() {
            return Err(Error::validation(format!(
                "length mismatch: {} vs {}",
                samples.len(),
                self.samples.len()
            )));
        }
        Self::with_start(samples, self.sample_rate_hz, self.start_time_s)
    }

    /// Checks that two series share rate and length.
    pub fn ensure_compatible(&self, other: &TimeSeries) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::validation(format!(
                "series lengths differ: {} vs {}",
                self.len(),
                other.len()
            )));
        }
        if (self.sample_rate_hz - other.sample_rate_hz).abs() > 1e-9 * self.sample_rate_hz {
            return Err(Error::validation(format!(
                "sample rates differ: {} Hz vs {} Hz",
                self.sample_rate_hz, other.sample_rate_hz
            )));
        }
        Ok(())
    }

    /// Renders the `time_s,value` CSV representation (LF line endings).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 32 + 16);
        out.push_str("time_s,value\n");
        for (i, v) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{},{}", self.time_at(i), v);
        }
        out
    }

    /// Parses the `time_s,value` CSV representation. At least two rows are
    /// needed to recover the sample rate, and the time column must be uniform.
    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next().map(str::trim) {
            Some("time_s,value") => {}
            other => {
                return Err(Error::validation(format!(
                    "expected header `time_s,value`, found {other:?}"
                )))
            }
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (row, line) in lines.enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (t, v) = line.split_once(',').ok_or_else(|| {
                Error::validation(format!("row {}: expected two columns", row + 1))
            })?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::validation(format!("row {}: {e}", row + 1)))
            };
            times.push(parse(t)?);
            values.push(parse(v)?);
        }
        if times.len() < 2 {
            return Err(Error::validation(
                "need at least two rows to infer the sample rate",
            ));
        }
        let n = times.len();
        let span = times[n - 1] - times[0];
        if span <= 0.0 {
            return Err(Error::validation("time column must be increasing"));
        }
        let mut rate = (n - 1) as f64 / span;
        let rounded = rate.round();
        if (rate - rounded).abs() <= 1e-9 * rate {
            rate = rounded;
        }
        let dt = 1.0 / rate;
        for (i, t) in times.iter().enumerate() {
            if (t - times[0] - i as f64 * dt).abs()
                > 1e-6 * dt.max(1e-12) * (1.0 + i as f64).sqrt() + 1e-9
            {
                return Err(Error::validation(format!(
                    "row {}: non-uniform sampling",
                    i + 1
                )));
            }
        }
        Self::with_start(values, rate, times[0])
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_csv_str(&text).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// Linear frequency sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChirpSpec {
    pub amplitude_n: f64,
    pub f0_hz: f64,
    pub f1_hz: f64,
    pub duration_s: f64,
}

impl ChirpSpec {
    /// 15 to 30 Hz in 4 s, the sweep covering the first mode of the plant.
    pub fn first_mode(amplitude_n: f64) -> Self {
        ChirpSpec {
            amplitude_n,
            f0_hz: 15.0,
            f1_hz: 30.0,
            duration_s: 4.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.amplitude_n.is_finite() {
            return Err(Error::validation("chirp amplitude must be finite"));
        }
        if !(self.f0_hz > 0.0 && self.f0_hz.is_finite()) {
            return Err(Error::validation(format!(
                "chirp f0 must be positive, got {}",
                self.f0_hz
            )));
        }
        if !(self.f1_hz > self.f0_hz && self.f1_hz.is_finite()) {
            return Err(Error::validation(format!(
                "chirp f1 ({}) must exceed f0 ({})",
                self.f1_hz, self.f0_hz
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::validation("chirp duration must be positive"));
        }
        Ok(())
    }
}

/// `A·sin(2π(f0·t + (f1−f0)·t²/(2T)))` sampled at `sample_rate_hz`.
pub fn generate_chirp(spec: &ChirpSpec, sample_rate_hz: f64) -> Result<TimeSeries> {
    spec.validate()?;
    check_rate(sample_rate_hz)?;
    let n = (spec.duration_s * sample_rate_hz).round();
    if n < 2.0 {
        return Err(Error::validation("chirp must span at least two samples"));
    }
    let sweep = (spec.f1_hz - spec.f0_hz) / (2.0 * spec.duration_s);
    let samples = (0..n as usize)
        .map(|i| {
            let t = i as f64 / sample_rate_hz;
            spec.amplitude_n * (2.0 * PI * (spec.f0_hz * t + sweep * t * t)).sin()
        })
        .collect();
    TimeSeries::new(samples, sample_rate_hz)
}

/// Single tone `A·sin(2πft)`.
pub fn generate_sine(
    amplitude_n: f64,
    freq_hz: f64,
    duration_s: f64,
    sample_rate_hz: f64,
) -> Result<TimeSeries> {
    check_rate(sample_rate_hz)?;
    if !amplitude_n.is_finite() {
        return Err(Error::validation("sine amplitude must be finite"));
    }
    if !(freq_hz >= 0.0 && freq_hz < sample_rate_hz / 2.0) {
        return Err(Error::validation(format!(
            "frequency {freq_hz} Hz violates Nyquist for {sample_rate_hz} Hz sampling"
        )));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::validation("sine duration must be positive"));
    }
    let n = ((duration_s * sample_rate_hz).round() as usize).max(1);
    let samples = (0..n)
        .map(|i| amplitude_n * (2.0 * PI * freq_hz * i as f64 / sample_rate_hz).sin())
        .collect();
    TimeSeries::new(samples, sample_rate_hz)
}

/// Adds white Gaussian noise scaled so that the record-wide SNR equals `snr_db`.
pub fn add_noise_snr(signal: &TimeSeries, snr_db: f64, rng_seed: u64) -> Result<TimeSeries> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    add_noise_snr_with_rng(signal, snr_db, &mut rng)
}

/// As [`add_noise_snr`] but drawing from a caller-supplied generator.
pub fn add_noise_snr_with_rng<R: Rng + ?Sized>(
    signal: &TimeSeries,
    snr_db: f64,
    rng: &mut R,
) -> Result<TimeSeries> {
    if !snr_db.is_finite() {
        return Err(Error::validation("SNR must be finite"));
    }
    let power = signal.mean_square();
    if power <= 0.0 {
        return Err(Error::validation(
            "SNR is undefined for a zero-power signal",
        ));
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::validation(e.to_string()))?;
    let noisy = signal
        .samples()
        .iter()
        .map(|v| v + normal.sample(rng))
        .collect();
    signal.with_samples(noisy)
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq)]
pub struct Psd {
    pub freqs: Vec<f64>,
    pub psd: Vec<f64>,
}

impl Psd {
    pub fn df(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }

    /// Total power (`Σ psd · Δf`).
    pub fn total_power(&self) -> f64 {
        self.psd.iter().sum::<f64>() * self.df()
    }

    /// Power inside `[lo, hi]` Hz.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        self.freqs
            .iter()
            .zip(&self.psd)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(_, p)| p)
            .sum::<f64>()
            * self.df()
    }
}

/// Welch-averaged one-sided PSD with a Hann window.
pub fn power_spectral_density(
    signal: &TimeSeries,
    segment_len: usize,
    overlap_fraction: f64,
) -> Result<Psd> {
    if segment_len < 2 || segment_len > signal.len() {
        return Err(Error::validation(format!(
            "segment length {segment_len} must lie in [2, {}]",
            signal.len()
        )));
    }
    if !(0.0..1.0).contains(&overlap_fraction) {
        return Err(Error::validation("overlap fraction must lie in [0, 1)"));
    }
    let fs = signal.sample_rate_hz();
    let step = ((segment_len as f64 * (1.0 - overlap_fraction)).round() as usize).max(1);
    // periodic Hann
    let window: Vec<f64> = (0..segment_len)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment_len as f64).cos())
        .collect();
    let window_power: f64 = window.iter().map(|w| w * w).sum();

    let fft = FftPlanner::new().plan_fft_forward(segment_len);
    let n_bins = segment_len / 2 + 1;
    let mut acc = vec![0.0; n_bins];
    let mut buf = vec![Complex::new(0.0, 0.0); segment_len];
    let x = signal.samples();
    let mut segments = 0usize;
    let mut start = 0usize;
    while start + segment_len <= x.len() {
        for (b, (v, w)) in buf
            .iter_mut()
            .zip(x[start..start + segment_len].iter().zip(&window))
        {
            *b = Complex::new(v * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (fs * window_power * segments as f64);
    let psd = acc
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let one_sided = if k == 0 || (segment_len % 2 == 0 && k == segment_len / 2) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let freqs = (0..n_bins)
        .map(|k| k as f64 * fs / segment_len as f64)
        .collect();
    Ok(Psd { freqs, psd })
}

fn check_rate(sample_rate_hz: f64) -> Result<()> {
    if sample_rate_hz.is_finite() && sample_rate_hz > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(format!(
            "sample rate must be positive, got {sample_rate_hz}"
        )))
    }
}
