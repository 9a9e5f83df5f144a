//! Third-order Volterra models expanded on Kautz bases.
//!
//! The output is approximated as
//!
//! ```text
//! y(k) ≈ Σ_η Σ_{i1..iη} B_η(i1, …, iη) · Π_j l_{η,ij}(k)
//! ```
//!
//! where `l_{η,i}` is the input filtered by the `i`-th Kautz function of
//! order `η`. Coefficient tensors are kept symmetric.

mod identify;
mod regression;
mod relations;

pub use identify::{
    identify_two_step, identify_two_step_detailed, Identification, IdentificationSetup,
};
pub use regression::{
    build_regression, column_count, fit_least_squares, sorted_multi_indices, ColumnKey,
    LeastSquaresFit, RegressionProblem, RANK_TOLERANCE,
};
pub use relations::{
    basis_from_modal, fit_pole_relations, PoleRelationFit, PoleRelations, RelationObjective,
    MAX_RELATION_EVALUATIONS, RELATION_BOUNDS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kautz::{KautzBasis, KautzBasisSpec};
use crate::signals::TimeSeries;

/// Dense `n×n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix2 {
    dim: usize,
    data: Vec<f64>,
}

/// Dense `n×n×n` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix2 {
    pub fn zeros(dim: usize) -> Self {
        Matrix2 {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m.data[i * dim + j] = f(i, j);
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
    }

    pub fn symmetrized(&self) -> Self {
        Self::from_fn(self.dim, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.dim).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }

    fn values(&self) -> &[f64] {
        &self.data
    }
}

impl Tensor3 {
    pub fn zeros(dim: usize) -> Self {
        Tensor3 {
            dim,
            data: vec![0.0; dim * dim * dim],
        }
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                for k in 0..dim {
                    t.data[(i * dim + j) * dim + k] = f(i, j, k);
                }
            }
        }
        t
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[(i * self.dim + j) * self.dim + k]
    }

    /// Sets all six permutations of `(i, j, k)`.
    pub fn set_symmetric(&mut self, i: usize, j: usize, k: usize, v: f64) {
        let d = self.dim;
        for (a, b, c) in [
            (i, j, k),
            (i, k, j),
            (j, i, k),
            (j, k, i),
            (k, i, j),
            (k, j, i),
        ] {
            self.data[(a * d + b) * d + c] = v;
        }
    }

    pub fn symmetrized(&self) -> Self {
        Self::from_fn(self.dim, |i, j, k| {
            // canonical order so that all permutations get bit-identical sums
            let mut ix = [i, j, k];
            ix.sort_unstable();
            let [i, j, k] = ix;
            (self.get(i, j, k)
                + self.get(i, k, j)
                + self.get(j, i, k)
                + self.get(j, k, i)
                + self.get(k, i, j)
                + self.get(k, j, i))
                / 6.0
        })
    }

    pub fn is_symmetric(&self) -> bool {
        let d = self.dim;
        (0..d).all(|i| {
            (0..d).all(|j| {
                (0..d).all(|k| {
                    let v = self.get(i, j, k);
                    v == self.get(j, i, k) && v == self.get(i, k, j)
                })
            })
        })
    }

    fn values(&self) -> &[f64] {
        &self.data
    }
}

/// Orthonormal kernel coefficients bound to the basis they were fitted on.
#[derive(Debug, Clone, PartialEq)]
pub struct VolterraModel {
    basis: KautzBasis,
    b1: Vec<f64>,
    b2: Matrix2,
    b3: Tensor3,
}

impl VolterraModel {
    /// Builds a model; `b2` and `b3` are symmetrized.
    pub fn new(basis: KautzBasis, b1: Vec<f64>, b2: Matrix2, b3: Tensor3) -> Result<Self> {
        let [j1, j2, j3] = basis.n_functions();
        if b1.len() != j1 || b2.dim() != j2 || b3.dim() != j3 {
            return Err(Error::validation(format!(
                "kernel dimensions ({}, {}, {}) do not match basis ({j1}, {j2}, {j3})",
                b1.len(),
                b2.dim(),
                b3.dim()
            )));
        }
        if !b1
            .iter()
            .chain(b2.values())
            .chain(b3.values())
            .all(|v| v.is_finite())
        {
            return Err(Error::validation("kernel coefficients must be finite"));
        }
        let b2 = if b2.is_symmetric() {
            b2
        } else {
            b2.symmetrized()
        };
        let b3 = if b3.is_symmetric() {
            b3
        } else {
            b3.symmetrized()
        };
        Ok(VolterraModel { basis, b1, b2, b3 })
    }

    pub fn zeros(basis: KautzBasis) -> Self {
        let [j1, j2, j3] = basis.n_functions();
        VolterraModel {
            basis,
            b1: vec![0.0; j1],
            b2: Matrix2::zeros(j2),
            b3: Tensor3::zeros(j3),
        }
    }

    pub fn basis(&self) -> &KautzBasis {
        &self.basis
    }

    pub fn b1(&self) -> &[f64] {
        &self.b1
    }

    pub fn b2(&self) -> &Matrix2 {
        &self.b2
    }

    pub fn b3(&self) -> &Tensor3 {
        &self.b3
    }

    /// Time-domain first kernel `h1(n) = Σ_i B1(i)·ψ_{1,i}(n)` over the basis memory.
    pub fn first_kernel(&self) -> Vec<f64> {
        let ir = self.basis.bank(1).impulse_responses();
        let mut h = vec![0.0; ir[0].len()];
        for (b, psi) in self.b1.iter().zip(ir) {
            for (hv, p) in h.iter_mut().zip(psi) {
                *hv += b * p;
            }
        }
        h
    }

    /// Main diagonal `h2(n, n)` of the time-domain second kernel.
    pub fn second_kernel_diagonal(&self) -> Vec<f64> {
        let ir = self.basis.bank(2).impulse_responses();
        let len = ir[0].len();
        let d = self.b2.dim();
        (0..len)
            .map(|n| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        s += self.b2.get(i, j) * ir[i][n] * ir[j][n];
                    }
                }
                s
            })
            .collect()
    }

    /// Main diagonal `h3(n, n, n)` of the time-domain third kernel.
    pub fn third_kernel_diagonal(&self) -> Vec<f64> {
        let ir = self.basis.bank(3).impulse_responses();
        let len = ir[0].len();
        let d = self.b3.dim();
        (0..len)
            .map(|n| {
                let mut s = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        for k in 0..d {
                            s += self.b3.get(i, j, k) * ir[i][n] * ir[j][n] * ir[k][n];
                        }
                    }
                }
                s
            })
            .collect()
    }

    /// Kernel time function used by the Monte Carlo convergence metric:
    /// the first kernel for order 1, the main diagonal for orders 2 and 3.
    pub fn kernel_time_function(&self, order: usize) -> Vec<f64> {
        match order {
            1 => self.first_kernel(),
            2 => self.second_kernel_diagonal(),
            _ => self.third_kernel_diagonal(),
        }
    }

    pub fn to_file(&self) -> VolterraModelFile {
        let mut kernels = Vec::with_capacity(3);
        kernels.push(KernelCoefficients {
            order: 1,
            indices: (0..self.b1.len()).map(|i| vec![i]).collect(),
            values: self.b1.clone(),
        });
        let idx2 = sorted_multi_indices(2, self.b2.dim());
        kernels.push(KernelCoefficients {
            order: 2,
            values: idx2.iter().map(|ix| self.b2.get(ix[0], ix[1])).collect(),
            indices: idx2,
        });
        let idx3 = sorted_multi_indices(3, self.b3.dim());
        kernels.push(KernelCoefficients {
            order: 3,
            values: idx3
                .iter()
                .map(|ix| self.b3.get(ix[0], ix[1], ix[2]))
                .collect(),
            indices: idx3,
        });
        VolterraModelFile {
            version: MODEL_FORMAT_VERSION.to_string(),
            basis: self.basis.spec(),
            kernels,
        }
    }

    pub fn from_file(file: &VolterraModelFile) -> Result<Self> {
        if file.version != MODEL_FORMAT_VERSION {
            return Err(Error::validation(format!(
                "unsupported model version {:?}, expected {MODEL_FORMAT_VERSION:?}",
                file.version
            )));
        }
        let basis = KautzBasis::from_spec(&file.basis)?;
        let mut model = VolterraModel::zeros(basis);
        for k in &file.kernels {
            if k.indices.len() != k.values.len() {
                return Err(Error::validation(
                    "kernel index map and values differ in length",
                ));
            }
            let dim = model.basis.n_functions()[k.order.clamp(1, 3) - 1];
            for (ix, &v) in k.indices.iter().zip(&k.values) {
                if ix.len() != k.order || ix.iter().any(|&i| i >= dim) {
                    return Err(Error::validation(format!(
                        "bad index {ix:?} for order {}",
                        k.order
                    )));
                }
                match k.order {
                    1 => model.b1[ix[0]] = v,
                    2 => {
                        model.b2.set(ix[0], ix[1], v);
                        model.b2.set(ix[1], ix[0], v);
                    }
                    3 => model.b3.set_symmetric(ix[0], ix[1], ix[2], v),
                    o => return Err(Error::validation(format!("unsupported kernel order {o}"))),
                }
            }
        }
        if !model
            .b1
            .iter()
            .chain(model.b2.values())
            .chain(model.b3.values())
            .all(|v| v.is_finite())
        {
            return Err(Error::validation("kernel coefficients must be finite"));
        }
        Ok(model)
    }

    /// Assembles a model from coefficients of a symmetric-reduced regression.
    pub(crate) fn from_reduced(
        basis: KautzBasis,
        keys: &[ColumnKey],
        coefficients: &[f64],
    ) -> Result<Self> {
        let mut model = VolterraModel::zeros(basis);
        for (key, &v) in keys.iter().zip(coefficients) {
            let ix = &key.index;
            match key.order {
                1 => model.b1[ix[0]] = v,
                2 => {
                    model.b2.set(ix[0], ix[1], v);
                    model.b2.set(ix[1], ix[0], v);
                }
                _ => model.b3.set_symmetric(ix[0], ix[1], ix[2], v),
            }
        }
        if !coefficients.iter().all(|v| v.is_finite()) {
            return Err(Error::validation("fitted coefficients are not finite"));
        }
        Ok(model)
    }

    /// Replaces the linear kernel.
    pub(crate) fn with_b1(mut self, b1: Vec<f64>) -> Self {
        self.b1 = b1;
        self
    }
}

pub const MODEL_FORMAT_VERSION: &str = "volterra_model_v1";

/// JSON form of a [`VolterraModel`]. Each kernel lists its non-decreasing
/// (0-based) multi-indexes and the symmetric coefficient at each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolterraModelFile {
    pub version: String,
    pub basis: KautzBasisSpec,
    pub kernels: Vec<KernelCoefficients>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelCoefficients {
    pub order: usize,
    pub indices: Vec<Vec<usize>>,
    pub values: Vec<f64>,
}

/// Order-wise model output.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub y1: TimeSeries,
    pub y2: TimeSeries,
    pub y3: TimeSeries,
    pub total: TimeSeries,
}

impl Prediction {
    /// `y2 + y3`
    pub fn nonlinear(&self) -> TimeSeries {
        let s = self
            .y2
            .samples()
            .iter()
            .zip(self.y3.samples())
            .map(|(a, b)| a + b)
            .collect();
        self.y2.with_samples(s).expect("same length")
    }
}

/// Evaluates the model on `input`, separating the kernel contributions.
pub fn predict(model: &VolterraModel, input: &TimeSeries) -> Result<Prediction> {
    regression::check_rate(&model.basis, input)?;
    let n = input.len();
    let u = input.samples();

    let l1 = model.basis.bank(1).filter(u);
    let mut y1 = vec![0.0; n];
    for (b, l) in model.b1.iter().zip(&l1) {
        axpy(&mut y1, *b, l);
    }

    let l2 = model.basis.bank(2).filter(u);
    let mut y2 = vec![0.0; n];
    let d2 = model.b2.dim();
    let mut prod = vec![0.0; n];
    for i in 0..d2 {
        for j in 0..d2 {
            let b = model.b2.get(i, j);
            if b != 0.0 {
                for ((p, a), c) in prod.iter_mut().zip(&l2[i]).zip(&l2[j]) {
                    *p = a * c;
                }
                axpy(&mut y2, b, &prod);
            }
        }
    }

    let l3 = model.basis.bank(3).filter(u);
    let mut y3 = vec![0.0; n];
    let d3 = model.b3.dim();
    for i in 0..d3 {
        for j in 0..d3 {
            for ((p, a), c) in prod.iter_mut().zip(&l3[i]).zip(&l3[j]) {
                *p = a * c;
            }
            for k in 0..d3 {
                let b = model.b3.get(i, j, k);
                if b != 0.0 {
                    for ((y, p), l) in y3.iter_mut().zip(&prod).zip(&l3[k]) {
                        *y += b * p * l;
                    }
                }
            }
        }
    }

    let total: Vec<f64> = (0..n).map(|k| y1[k] + y2[k] + y3[k]).collect();
    Ok(Prediction {
        y1: input.with_samples(y1)?,
        y2: input.with_samples(y2)?,
        y3: input.with_samples(y3)?,
        total: input.with_samples(total)?,
    })
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Diagonal coefficient vectors used as damage-sensitive indexes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientIndexes {
    pub lambda1: Vec<f64>,
    pub lambda2: Vec<f64>,
    pub lambda3: Vec<f64>,
    pub lambda_nl: Vec<f64>,
}

pub fn extract_indexes(model: &VolterraModel) -> CoefficientIndexes {
    let lambda2: Vec<f64> = (0..model.b2.dim()).map(|i| model.b2.get(i, i)).collect();
    let lambda3: Vec<f64> = (0..model.b3.dim()).map(|i| model.b3.get(i, i, i)).collect();
    CoefficientIndexes {
        lambda1: model.b1.clone(),
        lambda_nl: lambda2.iter().chain(&lambda3).copied().collect(),
        lambda2,
        lambda3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kautz::KautzPoleSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(j: [usize; 3], memory: usize) -> KautzBasis {
        let fs = 512.0;
        KautzBasis::new(
            [
                KautzPoleSpec::new(145.0, 0.05, fs).unwrap(),
                KautzPoleSpec::new(160.0, 0.1, fs).unwrap(),
                KautzPoleSpec::new(150.0, 0.06, fs).unwrap(),
            ],
            j,
            memory,
        )
        .unwrap()
    }

    fn random_model(basis: KautzBasis, seed: u64) -> VolterraModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [j1, j2, j3] = basis.n_functions();
        let b1 = (0..j1).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b2 = Matrix2::from_fn(j2, |_, _| rng.random_range(-1.0..1.0));
        let b3 = Tensor3::from_fn(j3, |_, _, _| rng.random_range(-1.0..1.0));
        VolterraModel::new(basis, b1, b2, b3).unwrap()
    }

    fn random_input(n: usize, seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TimeSeries::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), 512.0).unwrap()
    }

    #[test]
    fn zero_input_and_linear_only_model() {
        let b = basis([2, 4, 6], 64);
        let m = random_model(b.clone(), 1);
        let p = predict(&m, &TimeSeries::zeros(64, 512.0).unwrap()).unwrap();
        assert!(p.total.samples().iter().all(|v| *v == 0.0));

        let lin = VolterraModel::zeros(b).with_b1(vec![0.3, -0.7]);
        let p = predict(&lin, &random_input(64, 2)).unwrap();
        assert_eq!(p.total, p.y1);
        assert!(p
            .y2
            .samples()
            .iter()
            .chain(p.y3.samples())
            .all(|v| *v == 0.0));
    }

    #[test]
    fn homogeneity_per_order() {
        let b = basis([2, 4, 4], 64);
        let full = random_model(b.clone(), 3);
        let u = random_input(64, 4);
        let a = 1.7;
        let ua = u.scaled(a).unwrap();
        let p = predict(&full, &u).unwrap();
        let pa = predict(&full, &ua).unwrap();
        for (order, (base, scaled)) in [(&p.y1, &pa.y1), (&p.y2, &pa.y2), (&p.y3, &pa.y3)]
            .iter()
            .enumerate()
        {
            let f = a.powi(order as i32 + 1);
            for (x, y) in base.samples().iter().zip(scaled.samples()) {
                assert!((f * x - y).abs() <= 1e-10 * (1.0 + y.abs()));
            }
        }
    }

    #[test]
    fn asymmetric_kernels_are_symmetrized() {
        let b = basis([2, 4, 4], 64);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let raw2 = Matrix2::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let raw3 = Tensor3::from_fn(4, |_, _, _| rng.random_range(-1.0..1.0));
        let m = VolterraModel::new(b.clone(), vec![0.0, 0.0], raw2.clone(), raw3.clone()).unwrap();
        assert!(m.b2().is_symmetric() && m.b3().is_symmetric());

        // raw double/triple sums with the asymmetric tensors
        let u = random_input(48, 6);
        let l2 = b.bank(2).filter(u.samples());
        let l3 = b.bank(3).filter(u.samples());
        let p = predict(&m, &u).unwrap();
        for k in 0..48 {
            let mut y2 = 0.0;
            let mut y3 = 0.0;
            for i in 0..4 {
                for j in 0..4 {
                    y2 += raw2.get(i, j) * l2[i][k] * l2[j][k];
                    for q in 0..4 {
                        y3 += raw3.get(i, j, q) * l3[i][k] * l3[j][k] * l3[q][k];
                    }
                }
            }
            assert!((p.y2.samples()[k] - y2).abs() < 1e-12 * (1.0 + y2.abs()));
            assert!((p.y3.samples()[k] - y3).abs() < 1e-12 * (1.0 + y3.abs()));
        }
    }

    #[test]
    fn indexes_read_diagonals() {
        let b = basis([2, 4, 6], 32);
        let zero = VolterraModel::zeros(b.clone());
        let idx = extract_indexes(&zero);
        assert!(idx.lambda1.iter().chain(&idx.lambda_nl).all(|v| *v == 0.0));
        assert_eq!(idx.lambda_nl.len(), 10);

        let eye = VolterraModel::new(
            b.clone(),
            vec![0.0; 2],
            Matrix2::from_fn(4, |i, j| if i == j { 1.0 } else { 0.0 }),
            Tensor3::zeros(6),
        )
        .unwrap();
        assert_eq!(extract_indexes(&eye).lambda2, vec![1.0; 4]);

        let m = random_model(b, 7);
        let idx = extract_indexes(&m);
        for i in 0..4 {
            assert_eq!(idx.lambda2[i], m.b2().get(i, i));
        }
        for i in 0..6 {
            assert_eq!(idx.lambda3[i], m.b3().get(i, i, i));
            assert_eq!(idx.lambda_nl[4 + i], idx.lambda3[i]);
        }
    }

    #[test]
    fn model_file_round_trip() {
        let m = random_model(basis([2, 4, 6], 128), 8);
        let json = serde_json::to_string(&m.to_file()).unwrap();
        assert!(json.contains("\"volterra_model_v1\""));
        let back = VolterraModel::from_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn first_kernel_matches_filter_response() {
        let b = basis([2, 4, 6], 256);
        let m = random_model(b, 9);
        let mut imp = vec![0.0; 256];
        imp[0] = 1.0;
        let p = predict(&m, &TimeSeries::new(imp, 512.0).unwrap()).unwrap();
        let h = m.first_kernel();
        for (a, b) in h.iter().zip(p.y1.samples()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
