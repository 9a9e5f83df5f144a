//! Least-squares regression for orthonormal Volterra kernel coefficients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kautz::KautzBasis;
use crate::signals::TimeSeries;

/// Identifies one regression column: kernel order and a non-decreasing
/// multi-index of Kautz functions (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColumnKey {
    pub order: usize,
    pub index: Vec<usize>,
}

impl ColumnKey {
    /// Number of distinct permutations of the multi-index.
    pub fn multiplicity(&self) -> f64 {
        multiplicity(&self.index)
    }
}

pub(crate) fn multiplicity(index: &[usize]) -> f64 {
    let mut total = factorial(index.len());
    let mut run = 1;
    for w in index.windows(2) {
        if w[0] == w[1] {
            run += 1;
        } else {
            total /= factorial(run);
            run = 1;
        }
    }
    (total / factorial(run)) as f64
}

fn factorial(n: usize) -> usize {
    (1..=n).product()
}

/// All non-decreasing multi-indexes of length `order` over `0..n`.
pub fn sorted_multi_indices(order: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(order: usize, n: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == order {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(order, n, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(order, n, 0, &mut Vec::with_capacity(order), &mut out);
    out
}

/// Number of symmetric-reduced columns for the given function counts.
pub fn column_count(n_functions: [usize; 3], orders: &[usize]) -> usize {
    orders
        .iter()
        .map(|&o| {
            let j = n_functions[o - 1];
            match o {
                1 => j,
                2 => j * (j + 1) / 2,
                _ => j * (j + 1) * (j + 2) / 6,
            }
        })
        .sum()
}

/// Design matrix (column-major) and target of a kernel regression.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionProblem {
    columns: Vec<Vec<f64>>,
    keys: Vec<ColumnKey>,
    target: Vec<f64>,
}

impl RegressionProblem {
    /// Builds a problem from explicit columns, mostly useful for testing the solver.
    pub fn from_columns(
        columns: Vec<Vec<f64>>,
        keys: Vec<ColumnKey>,
        target: Vec<f64>,
    ) -> Result<Self> {
        if columns.len() != keys.len() {
            return Err(Error::validation("one key per column required"));
        }
        if columns.iter().any(|c| c.len() != target.len()) {
            return Err(Error::validation("columns must match the target length"));
        }
        Ok(RegressionProblem {
            columns,
            keys,
            target,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.target.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn column_index(&self) -> &[ColumnKey] {
        &self.keys
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    /// `Γ·φ`
    pub fn apply(&self, coefficients: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_samples()];
        for (col, &c) in self.columns.iter().zip(coefficients) {
            for (o, v) in out.iter_mut().zip(col) {
                *o += c * v;
            }
        }
        out
    }
}

fn normalized_orders(orders: &[usize]) -> Result<Vec<usize>> {
    let mut o = orders.to_vec();
    o.sort_unstable();
    o.dedup();
    if o.is_empty() || o.iter().any(|&x| !(1..=3).contains(&x)) {
        return Err(Error::validation(format!(
            "kernel orders must be a non-empty subset of {{1, 2, 3}}, got {orders:?}"
        )));
    }
    Ok(o)
}

/// Products of filtered inputs for sorted multi-indexes. Each column is
/// scaled by its permutation multiplicity, so the fitted coefficient is the
/// value of the symmetric kernel at any permutation of the index.
pub fn build_regression(
    basis: &KautzBasis,
    input: &TimeSeries,
    target: &TimeSeries,
    orders: &[usize],
) -> Result<RegressionProblem> {
    input.ensure_compatible(target)?;
    check_rate(basis, input)?;
    let orders = normalized_orders(orders)?;
    let n = input.len();
    let mut columns = Vec::new();
    let mut keys = Vec::new();
    for &order in &orders {
        let filtered = basis.bank(order).filter(input.samples());
        for index in sorted_multi_indices(order, filtered.len()) {
            let m = multiplicity(&index);
            let mut col = vec![m; n];
            for &i in &index {
                for (c, l) in col.iter_mut().zip(&filtered[i]) {
                    *c *= l;
                }
            }
            columns.push(col);
            keys.push(ColumnKey { order, index });
        }
    }
    Ok(RegressionProblem {
        columns,
        keys,
        target: target.samples().to_vec(),
    })
}

pub(crate) fn check_rate(basis: &KautzBasis, input: &TimeSeries) -> Result<()> {
    let fs = basis.sample_rate_hz();
    if (input.sample_rate_hz() - fs).abs() > 1e-9 * fs {
        return Err(Error::validation(format!(
            "signal sampled at {} Hz but basis built for {} Hz",
            input.sample_rate_hz(),
            fs
        )));
    }
    Ok(())
}

/// Solution of a [`RegressionProblem`] plus fit diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LeastSquaresFit {
    pub coefficients: Vec<f64>,
    pub residual_rms: f64,
    /// `‖Γφ − y‖ / ‖y‖` (0 when `y = 0`).
    pub relative_residual: f64,
    /// Ratio of the extreme diagonal entries of the pivoted `R` factor of the
    /// column-normalized design matrix.
    pub condition_estimate: f64,
    pub rank: usize,
}

/// Relative threshold on the pivoted `R` diagonal below which a column is
/// treated as numerically dependent.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Minimizes `‖Γφ − y‖₂` with a Householder QR factorization with column
/// pivoting (Businger–Golub) of the column-normalized design matrix.
pub fn fit_least_squares(problem: &RegressionProblem) -> Result<LeastSquaresFit> {
    let m = problem.n_samples();
    let n = problem.n_columns();
    if n == 0 {
        return Err(Error::validation("regression has no columns"));
    }
    if m < n {
        return Err(Error::validation(format!(
            "{m} samples cannot determine {n} coefficients"
        )));
    }
    let scales: Vec<f64> = problem
        .columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    let mut a: Vec<Vec<f64>> = problem
        .columns
        .iter()
        .zip(&scales)
        .map(|(c, &s)| {
            if s > 0.0 {
                c.iter().map(|v| v / s).collect()
            } else {
                c.clone()
            }
        })
        .collect();
    let mut y = problem.target.clone();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut diag = vec![0.0; n];

    for k in 0..n {
        // pivot: remaining column with the largest trailing norm
        let (piv, best) = (k..n)
            .map(|j| (j, a[j][k..].iter().map(|v| v * v).sum::<f64>()))
            .fold((k, -1.0), |acc, cur| if cur.1 > acc.1 { cur } else { acc });
        a.swap(k, piv);
        perm.swap(k, piv);
        let norm = best.sqrt();
        if norm == 0.0 {
            diag[k] = 0.0;
            continue;
        }
        let alpha = if a[k][k] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = a[k][k..].to_vec();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        diag[k] = alpha;
        if vnorm2 == 0.0 {
            continue;
        }
        let reflect = |col: &mut [f64]| {
            let dot: f64 = v.iter().zip(col.iter()).map(|(p, q)| p * q).sum();
            let f = 2.0 * dot / vnorm2;
            for (c, p) in col.iter_mut().zip(&v) {
                *c -= f * p;
            }
        };
        for col in a.iter_mut().skip(k + 1) {
            reflect(&mut col[k..]);
        }
        reflect(&mut y[k..]);
        a[k][k] = alpha;
        for x in a[k][k + 1..].iter_mut() {
            *x = 0.0;
        }
    }

    let r00 = diag[0].abs();
    let rank = diag
        .iter()
        .take_while(|d| d.abs() > RANK_TOLERANCE * r00)
        .count();
    if rank < n || r00 == 0.0 {
        return Err(Error::IllPosed { rank, columns: n });
    }
    let condition_estimate = r00 / diag[n - 1].abs();

    // back substitution on R z = Qᵀy
    let mut z = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for j in i + 1..n {
            s -= a[j][i] * z[j];
        }
        z[i] = s / a[i][i];
    }
    let mut coefficients = vec![0.0; n];
    for (k, &col) in perm.iter().enumerate() {
        coefficients[col] = z[k] / scales[col];
    }

    let fitted = problem.apply(&coefficients);
    let resid2: f64 = fitted
        .iter()
        .zip(&problem.target)
        .map(|(f, t)| (f - t).powi(2))
        .sum();
    let target2: f64 = problem.target.iter().map(|t| t * t).sum();
    Ok(LeastSquaresFit {
        coefficients,
        residual_rms: (resid2 / m as f64).sqrt(),
        relative_residual: if target2 > 0.0 {
            (resid2 / target2).sqrt()
        } else {
            0.0
        },
        condition_estimate,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn key(i: usize) -> ColumnKey {
        ColumnKey {
            order: 1,
            index: vec![i],
        }
    }

    fn random_problem(rows: usize, cols: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let columns: Vec<Vec<f64>> = (0..cols)
            .map(|_| (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let truth: Vec<f64> = (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect();
        (columns, truth)
    }

    #[test]
    fn multi_index_counts() {
        assert_eq!(sorted_multi_indices(2, 4).len(), 10);
        assert_eq!(sorted_multi_indices(3, 6).len(), 56);
        assert_eq!(column_count([2, 4, 6], &[1, 2, 3]), 68);
        assert_eq!(multiplicity(&[0, 1, 2]), 6.0);
        assert_eq!(multiplicity(&[0, 0, 2]), 3.0);
        assert_eq!(multiplicity(&[1, 1, 1]), 1.0);
        assert_eq!(multiplicity(&[0, 3]), 2.0);
    }

    #[test]
    fn identity_design_returns_target() {
        let n = 5;
        let columns: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        let y = vec![3.0, -1.0, 0.5, 2.0, 7.0];
        let p =
            RegressionProblem::from_columns(columns, (0..n).map(key).collect(), y.clone()).unwrap();
        let fit = fit_least_squares(&p).unwrap();
        for (a, b) in fit.coefficients.iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn recovers_noise_free_coefficients() {
        let (columns, truth) = random_problem(300, 12, 1);
        let p0 = RegressionProblem::from_columns(
            columns.clone(),
            (0..12).map(key).collect(),
            vec![0.0; 300],
        )
        .unwrap();
        let y = p0.apply(&truth);
        let p = RegressionProblem::from_columns(columns, (0..12).map(key).collect(), y).unwrap();
        let fit = fit_least_squares(&p).unwrap();
        let norm: f64 = truth.iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = fit
            .coefficients
            .iter()
            .zip(&truth)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(err / norm < 1e-9);
        assert_eq!(fit.rank, 12);
    }

    #[test]
    fn residual_tracks_noise_level() {
        let (columns, truth) = random_problem(4000, 8, 2);
        let p0 = RegressionProblem::from_columns(
            columns.clone(),
            (0..8).map(key).collect(),
            vec![0.0; 4000],
        )
        .unwrap();
        let sigma = 0.05;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let noise = Normal::new(0.0, sigma).unwrap();
        let y: Vec<f64> = p0
            .apply(&truth)
            .into_iter()
            .map(|v| v + noise.sample(&mut rng))
            .collect();
        let p = RegressionProblem::from_columns(columns, (0..8).map(key).collect(), y).unwrap();
        let fit = fit_least_squares(&p).unwrap();
        assert!((fit.residual_rms / sigma - 1.0).abs() < 0.1);

        // normal equations: ‖Γᵀ(Γφ − y)‖ ≤ 1e-8 ‖Γᵀy‖
        let r: Vec<f64> = p
            .apply(&fit.coefficients)
            .iter()
            .zip(p.target())
            .map(|(a, b)| a - b)
            .collect();
        let dot = |c: &[f64], v: &[f64]| c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        let gr: f64 = p
            .columns()
            .iter()
            .map(|c| dot(c, &r).powi(2))
            .sum::<f64>()
            .sqrt();
        let gy: f64 = p
            .columns()
            .iter()
            .map(|c| dot(c, p.target()).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(gr <= 1e-8 * gy);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        let (mut columns, _) = random_problem(50, 3, 4);
        let dup = columns[0].iter().map(|v| 2.0 * v).collect();
        columns.push(dup);
        let p = RegressionProblem::from_columns(columns, (0..4).map(key).collect(), vec![1.0; 50])
            .unwrap();
        match fit_least_squares(&p) {
            Err(Error::IllPosed { rank, columns }) => {
                assert_eq!(rank, 3);
                assert_eq!(columns, 4);
            }
            other => panic!("expected ill-posed error, got {other:?}"),
        }
    }

    #[test]
    fn underdetermined_is_rejected() {
        let (columns, _) = random_problem(3, 4, 5);
        let p = RegressionProblem::from_columns(columns, (0..4).map(key).collect(), vec![0.0; 3])
            .unwrap();
        assert!(matches!(fit_least_squares(&p), Err(Error::Validation(_))));
    }
}
