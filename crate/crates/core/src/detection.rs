//! Novelty detection on identified Volterra models.
//!
//! Features are either diagonal kernel coefficients or the order-wise output
//! contributions under a probe input. A reference ensemble fixes their mean
//! and covariance; Mahalanobis distances of the reference members feed a
//! Gaussian KDE whose upper-tail mass `β` sets the threshold `Λ`. A model is
//! healthy when `D ≤ Λ`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::montecarlo::{write_json, ModelEnsemble};
use crate::signals::TimeSeries;
use crate::volterra::{extract_indexes, predict, VolterraModel};

/// Relative ridge added to the covariance: `Σ + ε·tr(Σ)/dim·I`.
pub const COVARIANCE_RIDGE: f64 = 1e-8;
/// Variance fraction kept by the principal subspace of contribution features.
pub const PCA_VARIANCE_FRACTION: f64 = 0.999;
pub const BANDWIDTH_GRID_POINTS: usize = 25;
pub const BANDWIDTH_GRID_SPAN: (f64, f64) = (0.05, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    CoeffLambda1,
    CoeffLambda2,
    CoeffLambda3,
    CoeffLambdaNl,
    ContribY1,
    ContribY2,
    ContribY3,
    ContribYnl,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 8] = [
        FeatureKind::CoeffLambda1,
        FeatureKind::CoeffLambda2,
        FeatureKind::CoeffLambda3,
        FeatureKind::CoeffLambdaNl,
        FeatureKind::ContribY1,
        FeatureKind::ContribY2,
        FeatureKind::ContribY3,
        FeatureKind::ContribYnl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::CoeffLambda1 => "coeff_lambda1",
            FeatureKind::CoeffLambda2 => "coeff_lambda2",
            FeatureKind::CoeffLambda3 => "coeff_lambda3",
            FeatureKind::CoeffLambdaNl => "coeff_lambda_nl",
            FeatureKind::ContribY1 => "contrib_y1",
            FeatureKind::ContribY2 => "contrib_y2",
            FeatureKind::ContribY3 => "contrib_y3",
            FeatureKind::ContribYnl => "contrib_ynl",
        }
    }

    pub fn is_contribution(self) -> bool {
        matches!(
            self,
            FeatureKind::ContribY1
                | FeatureKind::ContribY2
                | FeatureKind::ContribY3
                | FeatureKind::ContribYnl
        )
    }

    /// True for the indexes built only from the linear kernel.
    pub fn is_linear(self) -> bool {
        matches!(self, FeatureKind::CoeffLambda1 | FeatureKind::ContribY1)
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown feature kind {s:?}")))
    }
}

/// Feature vector of one model.
pub fn feature_vector(
    model: &VolterraModel,
    kind: FeatureKind,
    probe: Option<&TimeSeries>,
) -> Result<Vec<f64>> {
    if kind.is_contribution() {
        let probe = probe
            .ok_or_else(|| Error::validation(format!("{kind} features need a probe input")))?;
        let p = predict(model, probe)?;
        return Ok(match kind {
            FeatureKind::ContribY1 => p.y1.into_samples(),
            FeatureKind::ContribY2 => p.y2.into_samples(),
            FeatureKind::ContribY3 => p.y3.into_samples(),
            _ => p.nonlinear().into_samples(),
        });
    }
    let idx = extract_indexes(model);
    Ok(match kind {
        FeatureKind::CoeffLambda1 => idx.lambda1,
        FeatureKind::CoeffLambda2 => idx.lambda2,
        FeatureKind::CoeffLambda3 => idx.lambda3,
        _ => idx.lambda_nl,
    })
}

pub fn feature_vectors(
    models: &[VolterraModel],
    kind: FeatureKind,
    probe: Option<&TimeSeries>,
) -> Result<Vec<Vec<f64>>> {
    models
        .par_iter()
        .map(|m| feature_vector(m, kind, probe))
        .collect()
}

/// Reference feature statistics with a factored, regularized covariance.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    kind: FeatureKind,
    rows: Vec<Vec<f64>>,
    mean: DVector<f64>,
    /// Orthonormal principal directions (`dim × r`), contribution kinds only.
    projection: Option<DMatrix<f64>>,
    /// Covariance in the working space (projected for contribution kinds).
    covariance: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
}

/// Features of the ensemble members.
pub fn build_features(
    ensemble: &ModelEnsemble,
    kind: FeatureKind,
    probe: Option<&TimeSeries>,
) -> Result<FeatureMatrix> {
    FeatureMatrix::from_rows(kind, feature_vectors(&ensemble.models, kind, probe)?)
}

impl FeatureMatrix {
    pub fn from_rows(kind: FeatureKind, rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::with_projection(kind, rows, kind.is_contribution())
    }

    /// As [`FeatureMatrix::from_rows`] with the principal-subspace projection
    /// forced on or off.
    pub fn with_projection(kind: FeatureKind, rows: Vec<Vec<f64>>, project: bool) -> Result<Self> {
        let n = rows.len();
        if n < 2 {
            return Err(Error::validation("feature statistics need at least 2 rows"));
        }
        let dim = rows[0].len();
        if dim == 0 || rows.iter().any(|r| r.len() != dim) {
            return Err(Error::validation(
                "feature rows must share a nonzero dimension",
            ));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("feature rows must be finite"));
        }
        let x = DMatrix::from_fn(n, dim, |i, j| rows[i][j]);
        let mean = DVector::from_fn(dim, |j, _| x.column(j).mean());
        let mut centered = x;
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-mean[j]);
        }
        let scale = 1.0 / (n - 1) as f64;

        let (projection, covariance) = if project {
            let (dirs, variances) = principal_subspace(&centered, scale)?;
            (Some(dirs), DMatrix::from_diagonal(&variances))
        } else {
            (None, centered.transpose() * &centered * scale)
        };
        let factor = regularized_cholesky(&covariance)?;
        Ok(FeatureMatrix {
            kind,
            rows,
            mean,
            projection,
            covariance,
            factor,
        })
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// Unregularized covariance in the working space.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    /// Dimension of the space distances are computed in.
    pub fn working_dim(&self) -> usize {
        self.covariance.nrows()
    }

    pub fn mahalanobis_sq(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::validation(format!(
                "feature vector has dimension {}, expected {}",
                x.len(),
                self.dim()
            )));
        }
        let diff = DVector::from_fn(x.len(), |i, _| x[i] - self.mean[i]);
        let z = match &self.projection {
            Some(p) => p.tr_mul(&diff),
            None => diff,
        };
        let w = self
            .factor
            .l()
            .solve_lower_triangular(&z)
            .expect("factor is nonsingular");
        Ok(w.norm_squared())
    }

    pub fn distances(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter().map(|r| self.mahalanobis_sq(r)).collect()
    }

    /// Distance of each reference row from the statistics of the other
    /// rows. In-sample distances are biased low; these behave like distances
    /// of new healthy data.
    ///
    /// Uses the rank-one downdate identity
    /// `D₋ᵢ = N²(N−2)·Dᵢ / ((N−1)·((N−1)² − N·Dᵢ))`; the projection, when
    /// present, is not refitted.
    pub fn leave_one_out_distances(&self) -> Result<Vec<f64>> {
        let n = self.rows.len() as f64;
        if self.rows.len() < 3 {
            return Err(Error::validation(
                "leave-one-out distances need at least 3 rows",
            ));
        }
        Ok(self
            .distances(&self.rows)?
            .into_iter()
            .map(|d| {
                let denom = (n - 1.0) * ((n - 1.0).powi(2) - n * d);
                if denom > 0.0 {
                    n * n * (n - 2.0) * d / denom
                } else {
                    f64::INFINITY
                }
            })
            .collect())
    }
}

/// Free-function form of [`FeatureMatrix::mahalanobis_sq`].
pub fn mahalanobis_sq(features: &FeatureMatrix, x: &[f64]) -> Result<f64> {
    features.mahalanobis_sq(x)
}

fn regularized_cholesky(cov: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let d = cov.nrows();
    let mut reg = cov.clone();
    let mut ridge = COVARIANCE_RIDGE * cov.trace() / d as f64;
    if !(ridge > 0.0) {
        return Err(Error::Estimation(
            "reference features have zero variance".into(),
        ));
    }
    // the ridge is normally enough; grow it only if rounding defeats it
    for _ in 0..8 {
        for i in 0..d {
            reg[(i, i)] = cov[(i, i)] + ridge;
        }
        if let Some(c) = reg.clone().cholesky() {
            return Ok(c);
        }
        ridge *= 10.0;
    }
    Err(Error::Estimation("covariance could not be factored".into()))
}

/// Leading principal directions of the centered rows and their variances,
/// keeping [`PCA_VARIANCE_FRACTION`] of the total variance.
fn principal_subspace(centered: &DMatrix<f64>, scale: f64) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let (n, dim) = centered.shape();
    let (values, vectors, gram) = if dim <= n {
        let e = SymmetricEigen::new(centered.transpose() * centered * scale);
        (e.eigenvalues, e.eigenvectors, false)
    } else {
        // n×n Gram matrix shares the nonzero spectrum with the covariance
        let e = SymmetricEigen::new(centered * centered.transpose() * scale);
        (e.eigenvalues, e.eigenvectors, true)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let total: f64 = values.iter().filter(|v| **v > 0.0).sum();
    if !(total > 0.0) {
        return Err(Error::Estimation(
            "reference features have zero variance".into(),
        ));
    }
    let mut kept = Vec::new();
    let mut acc = 0.0;
    for &i in &order {
        if values[i] <= 0.0 {
            break;
        }
        kept.push(i);
        acc += values[i];
        if acc >= PCA_VARIANCE_FRACTION * total {
            break;
        }
    }
    let r = kept.len();
    let mut dirs = DMatrix::zeros(dim, r);
    for (c, &i) in kept.iter().enumerate() {
        let mut v = if gram {
            centered.tr_mul(&vectors.column(i))
        } else {
            vectors.column(i).into_owned()
        };
        v /= v.norm();
        dirs.set_column(c, &v);
    }
    let variances = DVector::from_iterator(r, kept.iter().map(|&i| values[i]));
    Ok((dirs, variances))
}

/// Gaussian kernel density estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kde {
    samples: Vec<f64>,
    bandwidth: f64,
}

pub const MIN_KDE_SAMPLES: usize = 8;
pub const MIN_CV_SAMPLES: usize = 16;

impl Kde {
    pub fn new(samples: &[f64], bandwidth: f64) -> Result<Self> {
        if samples.len() < MIN_KDE_SAMPLES {
            return Err(Error::validation(format!(
                "a KDE needs at least {MIN_KDE_SAMPLES} samples"
            )));
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::validation(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("KDE samples must be finite"));
        }
        let mut samples = samples.to_vec();
        samples.sort_by(f64::total_cmp);
        Ok(Kde { samples, bandwidth })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn pdf(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let norm = 1.0 / (self.samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
        norm * self
            .samples
            .iter()
            .map(|s| (-0.5 * ((x - s) / h).powi(2)).exp())
            .sum::<f64>()
    }

    /// Mass above `x`.
    pub fn upper_tail(&self, x: f64) -> f64 {
        let k = 1.0 / (self.bandwidth * std::f64::consts::SQRT_2);
        self.samples
            .iter()
            .map(|s| 0.5 * erfc((x - s) * k))
            .sum::<f64>()
            / self.samples.len() as f64
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let k = 1.0 / (self.bandwidth * std::f64::consts::SQRT_2);
        self.samples
            .iter()
            .map(|s| 0.5 * erfc((s - x) * k))
            .sum::<f64>()
            / self.samples.len() as f64
    }

    /// Mean of the density; equals the sample mean.
    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }
}

pub fn kde_pdf(samples: &[f64], bandwidth: f64) -> Result<Kde> {
    Kde::new(samples, bandwidth)
}

fn sample_std(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `1.06·σ·N^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::validation("need at least 2 samples"));
    }
    let sigma = sample_std(samples);
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Estimation("samples have zero variance".into()));
    }
    Ok(1.06 * sigma * (samples.len() as f64).powf(-0.2))
}

/// Candidate bandwidths: log-spaced over the grid span times Silverman's.
pub fn bandwidth_grid(samples: &[f64]) -> Result<Vec<f64>> {
    let hs = silverman_bandwidth(samples)?;
    let (lo, hi) = BANDWIDTH_GRID_SPAN;
    let n = BANDWIDTH_GRID_POINTS;
    Ok((0..n)
        .map(|i| hs * lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
        .collect())
}

/// Leave-one-out log-likelihood of the Gaussian KDE with bandwidth `h`.
pub fn loo_log_likelihood(sorted: &[f64], h: f64) -> f64 {
    let n = sorted.len();
    let reach = 9.0 * h;
    let log_norm = -((n - 1) as f64 * h * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let mut total = 0.0;
    let mut lo = 0;
    for i in 0..n {
        let x = sorted[i];
        while sorted[lo] < x - reach {
            lo += 1;
        }
        let mut sum = 0.0;
        for (j, s) in sorted.iter().enumerate().skip(lo) {
            if *s > x + reach {
                break;
            }
            if j != i {
                sum += (-0.5 * ((x - s) / h).powi(2)).exp();
            }
        }
        let log_density = if sum > 0.0 {
            sum.ln()
        } else {
            // isolated point: exact log-sum-exp over every other sample
            let exps: Vec<f64> = sorted
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, s)| -0.5 * ((x - s) / h).powi(2))
                .collect();
            let m = exps.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln()
        };
        total += log_density + log_norm;
    }
    total
}

/// Bandwidth maximizing the leave-one-out log-likelihood over
/// [`bandwidth_grid`].
pub fn select_bandwidth_cv(samples: &[f64]) -> Result<f64> {
    if samples.len() < MIN_CV_SAMPLES {
        return Err(Error::validation(format!(
            "bandwidth selection needs at least {MIN_CV_SAMPLES} samples"
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("samples must be finite"));
    }
    let grid = bandwidth_grid(samples)?;
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let scores: Vec<f64> = grid
        .par_iter()
        .map(|&h| loo_log_likelihood(&sorted, h))
        .collect();
    let best = scores
        .iter()
        .enumerate()
        .fold(0, |b, (i, s)| if *s > scores[b] { i } else { b });
    Ok(grid[best])
}

/// `Λ` with `∫_Λ^∞ p̂ = β`, by bisection on the exact mixture CDF.
pub fn threshold_from_kde(kde: &Kde, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta <= 0.5) {
        return Err(Error::validation(format!(
            "beta must lie in (0, 0.5], got {beta}"
        )));
    }
    let h = kde.bandwidth;
    let s = &kde.samples;
    let mut lo = s[0] - 10.0 * h;
    let mut hi = s[s.len() - 1] + 40.0 * h;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kde.upper_tail(mid) > beta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSpec {
    pub beta: f64,
    pub bandwidth: Bandwidth,
}

impl ThresholdSpec {
    pub fn new(beta: f64) -> Self {
        ThresholdSpec {
            beta,
            bandwidth: Bandwidth::Auto,
        }
    }

    pub fn kde(&self, distances: &[f64]) -> Result<Kde> {
        let h = match self.bandwidth {
            Bandwidth::Auto => select_bandwidth_cv(distances)?,
            Bandwidth::Fixed(h) => h,
        };
        Kde::new(distances, h)
    }

    pub fn threshold(&self, distances: &[f64]) -> Result<f64> {
        threshold_from_kde(&self.kde(distances)?, self.beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// `H₀`: `D ≤ Λ`.
    Healthy,
    /// `H₁`: `D > Λ`.
    Damaged,
}

impl Verdict {
    pub fn from_distance(distance: f64, threshold: f64) -> Self {
        if distance <= threshold {
            Verdict::Healthy
        } else {
            Verdict::Damaged
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub distance: f64,
    pub verdict: Verdict,
}

pub fn classify(
    features: &FeatureMatrix,
    threshold: f64,
    unknown: &[f64],
) -> Result<Classification> {
    let distance = features.mahalanobis_sq(unknown)?;
    Ok(Classification {
        distance,
        verdict: Verdict::from_distance(distance, threshold),
    })
}

/// Fraction of distances above the threshold.
pub fn detection_rate(distances: &[f64], threshold: f64) -> f64 {
    if distances.is_empty() {
        return f64::NAN;
    }
    distances.iter().filter(|d| **d > threshold).count() as f64 / distances.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC of the rule `D > Λ` with `Λ` swept over every observed distance,
/// from `(0, 0)` to `(1, 1)`; AUC by the trapezoid rule.
pub fn roc_from_distances(reference: &[f64], damaged: &[f64]) -> Result<Roc> {
    if reference.is_empty() || damaged.is_empty() {
        return Err(Error::validation(
            "ROC needs reference and damaged distances",
        ));
    }
    let mut thresholds: Vec<f64> = reference.iter().chain(damaged).copied().collect();
    if thresholds.iter().any(|v| v.is_nan()) {
        return Err(Error::validation("distances must not be NaN"));
    }
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut r = reference.to_vec();
    let mut d = damaged.to_vec();
    r.sort_by(f64::total_cmp);
    d.sort_by(f64::total_cmp);
    let above = |sorted: &[f64], t: f64| {
        (sorted.len() - sorted.partition_point(|v| *v <= t)) as f64 / sorted.len() as f64
    };

    let mut points = Vec::with_capacity(thresholds.len() + 1);
    points.push(RocPoint {
        threshold: f64::INFINITY,
        fpr: 0.0,
        tpr: 0.0,
    });
    for &t in &thresholds {
        points.push(RocPoint {
            threshold: t,
            fpr: above(&r, t),
            tpr: above(&d, t),
        });
    }
    points.push(RocPoint {
        threshold: f64::NEG_INFINITY,
        fpr: 1.0,
        tpr: 1.0,
    });
    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * 0.5 * (w[1].tpr + w[0].tpr))
        .sum();
    Ok(Roc { points, auc })
}

pub fn roc_curve(
    features: &FeatureMatrix,
    reference_test: &[Vec<f64>],
    damaged: &[Vec<f64>],
) -> Result<Roc> {
    roc_from_distances(
        &features.distances(reference_test)?,
        &features.distances(damaged)?,
    )
}

/// Central interval of rates containing at least `level` of the
/// Binomial(`n`, `p`) mass.
pub fn binomial_interval(n: u64, p: f64, level: f64) -> Result<(f64, f64)> {
    if n == 0 || !(0.0..=1.0).contains(&p) || !(level > 0.0 && level < 1.0) {
        return Err(Error::validation("invalid binomial interval arguments"));
    }
    let dist = Binomial::new(p, n).map_err(|e| Error::validation(e.to_string()))?;
    let tail = 0.5 * (1.0 - level);
    let lo = (0..=n).find(|&k| dist.cdf(k) > tail).unwrap_or(0);
    let hi = (0..=n).find(|&k| dist.cdf(k) >= 1.0 - tail).unwrap_or(n);
    Ok((lo as f64 / n as f64, hi as f64 / n as f64))
}

/// Tukey boxplot summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub n_outliers: usize,
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    if values.is_empty() || values.iter().any(|v| v.is_nan()) {
        return Err(Error::validation("boxplot needs non-empty, non-NaN data"));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&s, 0.25);
    let median = quantile_sorted(&s, 0.5);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    let (fence_lo, fence_hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = s
        .iter()
        .copied()
        .filter(|v| *v >= fence_lo && *v <= fence_hi)
        .collect();
    Ok(BoxplotStats {
        q1,
        median,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        n_outliers: s.len() - inside.len(),
    })
}

/// An ensemble identified under one condition.
#[derive(Debug, Clone)]
pub struct Condition<'a> {
    pub severity: f64,
    pub ensemble: &'a ModelEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub beta: f64,
    pub threshold: f64,
    /// Fraction of held-out reference models flagged as damaged.
    pub false_alarm_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub severity: f64,
    pub realizations: Vec<usize>,
    pub distances: Vec<f64>,
    /// Detection rate per entry of the report's `betas`.
    pub rates: Vec<f64>,
    pub boxplot: BoxplotStats,
    pub roc: Roc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexReport {
    pub kind: FeatureKind,
    pub working_dim: usize,
    pub bandwidth: f64,
    pub train_realizations: Vec<usize>,
    pub train_distances: Vec<f64>,
    pub test_realizations: Vec<usize>,
    pub test_distances: Vec<f64>,
    pub train_boxplot: BoxplotStats,
    pub test_boxplot: BoxplotStats,
    pub thresholds: Vec<ThresholdEntry>,
    pub conditions: Vec<ConditionReport>,
}

impl IndexReport {
    pub fn condition(&self, severity: f64) -> Option<&ConditionReport> {
        self.conditions
            .iter()
            .find(|c| (c.severity - severity).abs() < 1e-9)
    }

    pub fn beta_position(&self, beta: f64) -> Option<usize> {
        self.thresholds
            .iter()
            .position(|t| (t.beta - beta).abs() < 1e-12)
    }

    /// Detection rate at `beta` for `severity`.
    pub fn rate(&self, beta: f64, severity: f64) -> Option<f64> {
        let b = self.beta_position(beta)?;
        self.condition(severity).map(|c| c.rates[b])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub betas: Vec<f64>,
    pub indexes: Vec<IndexReport>,
}

impl DetectionReport {
    pub fn index(&self, kind: FeatureKind) -> Option<&IndexReport> {
        self.indexes.iter().find(|i| i.kind == kind)
    }
}

/// Fits every index on `train`, calibrates the thresholds, and evaluates the
/// held-out `test` members and each damaged condition.
pub fn detection_experiment(
    train: &ModelEnsemble,
    test: &ModelEnsemble,
    conditions: &[Condition<'_>],
    kinds: &[FeatureKind],
    betas: &[f64],
    probe: Option<&TimeSeries>,
) -> Result<DetectionReport> {
    if conditions.is_empty() {
        return Err(Error::validation("at least one condition is required"));
    }
    if kinds.is_empty() || betas.is_empty() {
        return Err(Error::validation(
            "at least one feature kind and one beta are required",
        ));
    }
    for &b in betas {
        if !(b > 0.0 && b <= 0.5) {
            return Err(Error::validation(format!(
                "beta must lie in (0, 0.5], got {b}"
            )));
        }
    }
    let indexes = kinds
        .iter()
        .map(|&kind| evaluate_index(train, test, conditions, kind, betas, probe))
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectionReport {
        betas: betas.to_vec(),
        indexes,
    })
}

fn evaluate_index(
    train: &ModelEnsemble,
    test: &ModelEnsemble,
    conditions: &[Condition<'_>],
    kind: FeatureKind,
    betas: &[f64],
    probe: Option<&TimeSeries>,
) -> Result<IndexReport> {
    let features = build_features(train, kind, probe)?;
    let train_distances = features.leave_one_out_distances()?;
    let test_distances = features.distances(&feature_vectors(&test.models, kind, probe)?)?;
    let bandwidth = select_bandwidth_cv(&train_distances)?;
    let kde = Kde::new(&train_distances, bandwidth)?;
    let thresholds = betas
        .iter()
        .map(|&beta| {
            let threshold = threshold_from_kde(&kde, beta)?;
            Ok(ThresholdEntry {
                beta,
                threshold,
                false_alarm_rate: detection_rate(&test_distances, threshold),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let conditions = conditions
        .iter()
        .map(|c| {
            let distances =
                features.distances(&feature_vectors(&c.ensemble.models, kind, probe)?)?;
            Ok(ConditionReport {
                severity: c.severity,
                realizations: c.ensemble.indices.clone(),
                rates: thresholds
                    .iter()
                    .map(|t| detection_rate(&distances, t.threshold))
                    .collect(),
                boxplot: boxplot_stats(&distances)?,
                roc: roc_from_distances(&test_distances, &distances)?,
                distances,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IndexReport {
        kind,
        working_dim: features.working_dim(),
        bandwidth,
        train_realizations: train.indices.clone(),
        train_boxplot: boxplot_stats(&train_distances)?,
        train_distances,
        test_realizations: test.indices.clone(),
        test_boxplot: boxplot_stats(&test_distances)?,
        test_distances,
        thresholds,
        conditions,
    })
}

/// Severity labels are printed with two decimals so that file contents do
/// not depend on how the value was parsed.
fn severity_label(s: f64) -> String {
    format!("{s:.2}")
}

impl DetectionReport {
    /// `kind,beta,severity,rate`; the held-out reference appears as severity
    /// 1.00.
    pub fn rates_csv(&self) -> String {
        let mut out = String::from("kind,beta,severity,rate\n");
        for idx in &self.indexes {
            for (b, t) in idx.thresholds.iter().enumerate() {
                out += &format!(
                    "{},{},{},{}\n",
                    idx.kind,
                    t.beta,
                    severity_label(1.0),
                    t.false_alarm_rate
                );
                for c in &idx.conditions {
                    out += &format!(
                        "{},{},{},{}\n",
                        idx.kind,
                        t.beta,
                        severity_label(c.severity),
                        c.rates[b]
                    );
                }
            }
        }
        out
    }

    /// `severity,fpr,tpr`, one curve per condition.
    pub fn roc_csv(&self, kind: FeatureKind) -> Option<String> {
        let idx = self.index(kind)?;
        let mut out = String::from("severity,fpr,tpr\n");
        for c in &idx.conditions {
            for p in &c.roc.points {
                out += &format!("{},{},{}\n", severity_label(c.severity), p.fpr, p.tpr);
            }
        }
        Some(out)
    }

    /// `realization,severity,set,distance` with set `train`, `test` or
    /// `condition`.
    pub fn distances_csv(&self, kind: FeatureKind) -> Option<String> {
        let idx = self.index(kind)?;
        let mut out = String::from("realization,severity,set,distance\n");
        let healthy = severity_label(1.0);
        for (r, d) in idx.train_realizations.iter().zip(&idx.train_distances) {
            out += &format!("{r},{healthy},train,{d}\n");
        }
        for (r, d) in idx.test_realizations.iter().zip(&idx.test_distances) {
            out += &format!("{r},{healthy},test,{d}\n");
        }
        for c in &idx.conditions {
            for (r, d) in c.realizations.iter().zip(&c.distances) {
                out += &format!("{r},{},condition,{d}\n", severity_label(c.severity));
            }
        }
        Some(out)
    }

    /// `kind,set,severity,q1,median,q3,whisker_low,whisker_high,n_outliers`
    pub fn boxplot_csv(&self) -> String {
        let mut out =
            String::from("kind,set,severity,q1,median,q3,whisker_low,whisker_high,n_outliers\n");
        let mut row = |kind: FeatureKind, set: &str, sev: f64, b: &BoxplotStats| {
            out += &format!(
                "{kind},{set},{},{},{},{},{},{},{}\n",
                severity_label(sev),
                b.q1,
                b.median,
                b.q3,
                b.whisker_low,
                b.whisker_high,
                b.n_outliers
            );
        };
        for idx in &self.indexes {
            row(idx.kind, "train", 1.0, &idx.train_boxplot);
            row(idx.kind, "test", 1.0, &idx.test_boxplot);
            for c in &idx.conditions {
                row(idx.kind, "condition", c.severity, &c.boxplot);
            }
        }
        out
    }

    /// Writes `report.json`, `rates.csv`, `boxplots.csv`, and per index
    /// `distances_<kind>.csv` and `roc_<kind>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        write_json(&dir.join("report.json"), self)?;
        let write = |name: String, text: String| {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
        };
        write("rates.csv".into(), self.rates_csv())?;
        write("boxplots.csv".into(), self.boxplot_csv())?;
        for idx in &self.indexes {
            write(
                format!("distances_{}.csv", idx.kind),
                self.distances_csv(idx.kind).unwrap_or_default(),
            )?;
            write(
                format!("roc_{}.csv", idx.kind),
                self.roc_csv(idx.kind).unwrap_or_default(),
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal_samples(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn kind_names_round_trip() {
        for k in FeatureKind::ALL {
            assert_eq!(k.as_str().parse::<FeatureKind>().unwrap(), k);
            assert_eq!(
                serde_json::to_string(&k).unwrap(),
                format!("\"{}\"", k.as_str())
            );
        }
        assert!("lambda9".parse::<FeatureKind>().is_err());
    }

    #[test]
    fn identity_covariance_unit_step() {
        // rows ±e_i give covariance (2/(n-1))·I per axis pair; rescale so Σ = I
        let n = 2 * 3;
        let s = (((n - 1) as f64) / 2.0).sqrt();
        let mut rows = Vec::new();
        for i in 0..3 {
            let mut a = vec![0.0; 3];
            a[i] = s;
            rows.push(a.clone());
            a[i] = -s;
            rows.push(a);
        }
        let f = FeatureMatrix::from_rows(FeatureKind::CoeffLambda1, rows).unwrap();
        assert!(f.mahalanobis_sq(&[0.0, 0.0, 0.0]).unwrap().abs() < 1e-15);
        let d = f.mahalanobis_sq(&[1.0, 0.0, 0.0]).unwrap();
        assert!((d - 1.0).abs() < 1e-7, "{d}");
        assert!(f.mahalanobis_sq(&[1.0, 0.0]).is_err());
    }

    #[test]
    fn roc_perfect_separation() {
        let roc = roc_from_distances(&[0.1, 0.2, 0.3], &[1.0, 2.0]).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(roc.points.first().map(|p| (p.fpr, p.tpr)), Some((0.0, 0.0)));
        assert_eq!(roc.points.last().map(|p| (p.fpr, p.tpr)), Some((1.0, 1.0)));
        let flipped = roc_from_distances(&[1.0, 2.0], &[0.1, 0.2]).unwrap();
        assert_eq!(flipped.auc, 0.0);
        let tied = roc_from_distances(&[1.0], &[1.0]).unwrap();
        assert_eq!(tied.auc, 0.5);
    }

    #[test]
    fn boundary_is_healthy() {
        assert_eq!(Verdict::from_distance(2.0, 2.0), Verdict::Healthy);
        assert_eq!(Verdict::from_distance(2.0 + 1e-12, 2.0), Verdict::Damaged);
    }

    #[test]
    fn kde_tail_and_median() {
        let s = normal_samples(2000, 3);
        let kde = Kde::new(&s, 0.3).unwrap();
        let med = threshold_from_kde(&kde, 0.5).unwrap();
        assert!((kde.cdf(med) - 0.5).abs() < 1e-9);
        let t = threshold_from_kde(&kde, 0.01).unwrap();
        assert!((kde.upper_tail(t) - 0.01).abs() < 1e-9);
        assert!(threshold_from_kde(&kde, 0.0).is_err());
        assert!(threshold_from_kde(&kde, 0.6).is_err());
        assert!(Kde::new(&s[..4], 0.3).is_err());
        assert!(Kde::new(&s, 0.0).is_err());
    }

    #[test]
    fn binomial_interval_brackets_mean() {
        let (lo, hi) = binomial_interval(1024, 0.01, 0.95).unwrap();
        assert!(lo < 0.01 && hi > 0.01);
        assert!(lo >= 3.0 / 1024.0 && hi <= 18.0 / 1024.0, "{lo} {hi}");
    }

    #[test]
    fn boxplot_quartiles() {
        let b = boxplot_stats(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0]).unwrap();
        assert_eq!(b.median, 3.5);
        assert_eq!(b.q1, 2.25);
        assert_eq!(b.q3, 4.75);
        assert_eq!(b.whisker_high, 5.0);
        assert_eq!(b.n_outliers, 1);
    }

    #[test]
    fn leave_one_out_matches_refit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|_| (0..3).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let f = FeatureMatrix::from_rows(FeatureKind::CoeffLambda3, rows.clone()).unwrap();
        let loo = f.leave_one_out_distances().unwrap();
        for i in [0, 7, 29] {
            let mut others = rows.clone();
            let held = others.remove(i);
            let refit = FeatureMatrix::from_rows(FeatureKind::CoeffLambda3, others).unwrap();
            let direct = refit.mahalanobis_sq(&held).unwrap();
            assert!(
                (loo[i] - direct).abs() < 1e-6 * direct.max(1.0),
                "{} vs {direct}",
                loo[i]
            );
        }
    }

    #[test]
    fn pca_matches_full_space_on_full_rank_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let full =
            FeatureMatrix::with_projection(FeatureKind::ContribY1, rows.clone(), false).unwrap();
        let proj =
            FeatureMatrix::with_projection(FeatureKind::ContribY1, rows.clone(), true).unwrap();
        assert_eq!(proj.working_dim(), 5);
        for r in &rows {
            let a = full.mahalanobis_sq(r).unwrap();
            let b = proj.mahalanobis_sq(r).unwrap();
            assert!((a - b).abs() < 1e-6 * a.max(1.0), "{a} {b}");
        }
    }
}
