//! Two-parameter Kautz orthonormal filter banks.
//!
//! A bank is defined by a complex pole pair `S = −ξω ± jω√(1−ξ²)`, mapped to
//! the discrete pole `Z = exp(S/Fs)` and then to the real section parameters
//!
//! ```text
//! b = (Z + Z̄)/(1 + Z·Z̄),   c = −Z·Z̄
//! ```
//!
//! With `D(z) = z² + b(c−1)z − c`, the functions are
//!
//! ```text
//! Ψ_{2j−1}(z) = z·√((1−b²)(1−c²)) / D(z) · A(z)^{j−1}
//! Ψ_{2j}(z)   = Ψ_{2j−1}(z)·(z − b)/√(1−b²)
//! A(z)        = (−c·z² + b(c−1)z + 1) / D(z)        (all-pass)
//! ```
//!
//! Filtering is done with the equivalent difference equations, so the cost
//! is linear in the signal length regardless of how slowly the poles decay.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::TimeSeries;

/// Continuous-domain pole parameters of one kernel order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KautzPoleSpec {
    pub omega_rad_s: f64,
    pub xi: f64,
    pub sample_rate_hz: f64,
}

impl KautzPoleSpec {
    pub fn new(omega_rad_s: f64, xi: f64, sample_rate_hz: f64) -> Result<Self> {
        let spec = KautzPoleSpec {
            omega_rad_s,
            xi,
            sample_rate_hz,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.omega_rad_s > 0.0 && self.omega_rad_s.is_finite()) {
            return Err(Error::validation(format!(
                "Kautz frequency must be positive, got {}",
                self.omega_rad_s
            )));
        }
        if !(self.xi > 0.0 && self.xi < 1.0) {
            return Err(Error::validation(format!(
                "Kautz damping must lie in (0, 1), got {}",
                self.xi
            )));
        }
        if !(self.sample_rate_hz > 0.0 && self.sample_rate_hz.is_finite()) {
            return Err(Error::validation("sample rate must be positive"));
        }
        Ok(())
    }

    /// Continuous pole in the upper half plane.
    pub fn continuous_pole(&self) -> Complex<f64> {
        Complex::new(
            -self.xi * self.omega_rad_s,
            self.omega_rad_s * (1.0 - self.xi * self.xi).sqrt(),
        )
    }

    pub fn discrete_pole(&self) -> Complex<f64> {
        (self.continuous_pole() / self.sample_rate_hz).exp()
    }
}

/// Real parameters of the second-order Kautz section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KautzPoles {
    pub b: f64,
    pub c: f64,
}

pub fn poles_from_spec(spec: &KautzPoleSpec) -> Result<KautzPoles> {
    spec.validate()?;
    let z = spec.discrete_pole();
    let mag2 = z.norm_sqr();
    let poles = KautzPoles {
        b: 2.0 * z.re / (1.0 + mag2),
        c: -mag2,
    };
    if poles.b.abs() >= 1.0 || poles.c.abs() >= 1.0 {
        return Err(Error::Unstable {
            b: poles.b,
            c: poles.c,
        });
    }
    Ok(poles)
}

/// Frequency response of the all-pass factor `A(z)` at `z = e^{jθ}`.
pub fn allpass_response(poles: KautzPoles, theta: f64) -> Complex<f64> {
    let KautzPoles { b, c } = poles;
    let z = Complex::from_polar(1.0, theta);
    let num = -c * z * z + b * (c - 1.0) * z + 1.0;
    let den = z * z + b * (c - 1.0) * z - c;
    num / den
}

/// A realized Kautz filter bank for one kernel order.
#[derive(Debug, Clone, PartialEq)]
pub struct KautzBank {
    spec: KautzPoleSpec,
    poles: KautzPoles,
    n_functions: usize,
    impulse_responses: Vec<Vec<f64>>,
}

pub fn build_bank(
    spec: &KautzPoleSpec,
    n_functions: usize,
    memory_len: usize,
) -> Result<KautzBank> {
    if n_functions < 2 || n_functions % 2 != 0 {
        return Err(Error::validation(format!(
            "number of Kautz functions must be even and at least 2, got {n_functions}"
        )));
    }
    if memory_len < 4 {
        return Err(Error::validation("memory length must be at least 4"));
    }
    let poles = poles_from_spec(spec)?;
    let mut impulse = vec![0.0; memory_len];
    impulse[0] = 1.0;
    let impulse_responses = run_filters(poles, n_functions, &impulse);
    Ok(KautzBank {
        spec: *spec,
        poles,
        n_functions,
        impulse_responses,
    })
}

impl KautzBank {
    pub fn spec(&self) -> &KautzPoleSpec {
        &self.spec
    }

    pub fn poles(&self) -> KautzPoles {
        self.poles
    }

    pub fn b(&self) -> f64 {
        self.poles.b
    }

    pub fn c(&self) -> f64 {
        self.poles.c
    }

    pub fn n_functions(&self) -> usize {
        self.n_functions
    }

    pub fn memory_len(&self) -> usize {
        self.impulse_responses[0].len()
    }

    /// `ψ_i(n)` for `n < memory_len`, one vector per function.
    pub fn impulse_responses(&self) -> &[Vec<f64>] {
        &self.impulse_responses
    }

    /// Inner products of the stored impulse responses.
    pub fn gram_matrix(&self) -> Vec<Vec<f64>> {
        let ir = &self.impulse_responses;
        ir.iter()
            .map(|a| {
                ir.iter()
                    .map(|b| a.iter().zip(b).map(|(x, y)| x * y).sum())
                    .collect()
            })
            .collect()
    }

    /// Filters raw samples through every function of the bank.
    pub fn filter(&self, input: &[f64]) -> Vec<Vec<f64>> {
        run_filters(self.poles, self.n_functions, input)
    }
}

/// Causal filtering of `input` through every function of `bank`; each output
/// has the input's length.
pub fn filter_input(bank: &KautzBank, input: &TimeSeries) -> Vec<Vec<f64>> {
    bank.filter(input.samples())
}

/// Runs the cascade: `v_1 = u`, `q_j = v_j / D`, the odd function is the
/// one-sample delay of `q_j` scaled by `√((1−b²)(1−c²))`, the even function is
/// `(1 − b·z⁻¹)·q_j` scaled by `√(1−c²)`, and `v_{j+1} = A·v_j`.
fn run_filters(poles: KautzPoles, n_functions: usize, input: &[f64]) -> Vec<Vec<f64>> {
    let KautzPoles { b, c } = poles;
    let a1 = b * (c - 1.0);
    let a2 = -c;
    let gain_odd = ((1.0 - b * b) * (1.0 - c * c)).sqrt();
    let gain_even = (1.0 - c * c).sqrt();
    let n = input.len();

    let mut out = Vec::with_capacity(n_functions);
    let mut v = input.to_vec();
    let mut q = vec![0.0; n];
    for j in 0..n_functions / 2 {
        // q = v / (1 + a1 z⁻¹ + a2 z⁻²)
        let (mut q1, mut q2) = (0.0, 0.0);
        for k in 0..n {
            let qk = v[k] - a1 * q1 - a2 * q2;
            q[k] = qk;
            q2 = q1;
            q1 = qk;
        }
        let mut odd = vec![0.0; n];
        let mut even = vec![0.0; n];
        for k in 0..n {
            let prev = if k > 0 { q[k - 1] } else { 0.0 };
            odd[k] = gain_odd * prev;
            even[k] = gain_even * (q[k] - b * prev);
        }
        out.push(odd);
        out.push(even);

        if j + 1 < n_functions / 2 {
            // v ← A·v with A = (−c + a1 z⁻¹ + z⁻²)/(1 + a1 z⁻¹ + a2 z⁻²), reusing q = v/D
            for k in 0..n {
                let q_1 = if k > 0 { q[k - 1] } else { 0.0 };
                let q_2 = if k > 1 { q[k - 2] } else { 0.0 };
                v[k] = -c * q[k] + a1 * q_1 + q_2;
            }
        }
    }
    out
}

/// Serializable description of one order of a [`KautzBasis`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KautzOrderSpec {
    pub omega_rad_s: f64,
    pub xi: f64,
    pub n_functions: usize,
}

/// Serializable form of a [`KautzBasis`]; impulse responses are rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KautzBasisSpec {
    pub sample_rate_hz: f64,
    pub memory_len: usize,
    pub orders: [KautzOrderSpec; 3],
}

/// Filter banks for kernel orders 1, 2 and 3.
#[derive(Debug, Clone, PartialEq)]
pub struct KautzBasis {
    banks: [KautzBank; 3],
}

impl KautzBasis {
    pub fn new(
        pole_specs: [KautzPoleSpec; 3],
        n_functions: [usize; 3],
        memory_len: usize,
    ) -> Result<Self> {
        let fs = pole_specs[0].sample_rate_hz;
        if pole_specs.iter().any(|s| s.sample_rate_hz != fs) {
            return Err(Error::validation("all orders must share one sample rate"));
        }
        let banks = [
            build_bank(&pole_specs[0], n_functions[0], memory_len)?,
            build_bank(&pole_specs[1], n_functions[1], memory_len)?,
            build_bank(&pole_specs[2], n_functions[2], memory_len)?,
        ];
        Ok(KautzBasis { banks })
    }

    pub fn from_spec(spec: &KautzBasisSpec) -> Result<Self> {
        let pole =
            |o: &KautzOrderSpec| KautzPoleSpec::new(o.omega_rad_s, o.xi, spec.sample_rate_hz);
        Self::new(
            [
                pole(&spec.orders[0])?,
                pole(&spec.orders[1])?,
                pole(&spec.orders[2])?,
            ],
            [
                spec.orders[0].n_functions,
                spec.orders[1].n_functions,
                spec.orders[2].n_functions,
            ],
            spec.memory_len,
        )
    }

    pub fn spec(&self) -> KautzBasisSpec {
        let order = |b: &KautzBank| KautzOrderSpec {
            omega_rad_s: b.spec.omega_rad_s,
            xi: b.spec.xi,
            n_functions: b.n_functions,
        };
        KautzBasisSpec {
            sample_rate_hz: self.sample_rate_hz(),
            memory_len: self.banks[0].memory_len(),
            orders: [
                order(&self.banks[0]),
                order(&self.banks[1]),
                order(&self.banks[2]),
            ],
        }
    }

    /// Bank of kernel order `order` (1, 2 or 3).
    pub fn bank(&self, order: usize) -> &KautzBank {
        &self.banks[order - 1]
    }

    pub fn banks(&self) -> &[KautzBank; 3] {
        &self.banks
    }

    pub fn pole_specs(&self) -> [KautzPoleSpec; 3] {
        [self.banks[0].spec, self.banks[1].spec, self.banks[2].spec]
    }

    pub fn n_functions(&self) -> [usize; 3] {
        [
            self.banks[0].n_functions,
            self.banks[1].n_functions,
            self.banks[2].n_functions,
        ]
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.banks[0].spec.sample_rate_hz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn nominal_spec() -> KautzPoleSpec {
        KautzPoleSpec::new(145.3, 0.018, 512.0).unwrap()
    }

    #[test]
    fn fast_poles_collapse_to_zero() {
        let spec = KautzPoleSpec::new(1e5, 0.5, 512.0).unwrap();
        let p = poles_from_spec(&spec).unwrap();
        assert!(p.b.abs() < 1e-10 && p.c.abs() < 1e-10, "{p:?}");
    }

    #[test]
    fn pole_magnitude_identity() {
        let spec = nominal_spec();
        let p = poles_from_spec(&spec).unwrap();
        // independent route: |Z|² = exp(2·Re(S)/Fs)
        let expected = (-2.0 * spec.xi * spec.omega_rad_s / spec.sample_rate_hz).exp();
        assert!((-p.c - expected).abs() < 1e-12);
        let theta = spec.omega_rad_s * (1.0 - spec.xi * spec.xi).sqrt() / spec.sample_rate_hz;
        let re = expected.sqrt() * theta.cos();
        assert!((p.b - 2.0 * re / (1.0 + expected)).abs() < 1e-12);
        assert!(p.c < 0.0);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(KautzPoleSpec::new(100.0, 1.0, 512.0).is_err());
        assert!(KautzPoleSpec::new(0.0, 0.1, 512.0).is_err());
        assert!(KautzPoleSpec::new(100.0, 0.1, 0.0).is_err());
        assert!(build_bank(&nominal_spec(), 3, 64).is_err());
        assert!(build_bank(&nominal_spec(), 0, 64).is_err());
        assert!(build_bank(&nominal_spec(), 2, 3).is_err());
    }

    #[test]
    fn allpass_has_unit_magnitude() {
        let p = poles_from_spec(&nominal_spec()).unwrap();
        for k in 0..64 {
            let theta = PI * k as f64 / 63.0;
            assert!((allpass_response(p, theta).norm() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn bank_is_orthonormal() {
        let bank = build_bank(&nominal_spec(), 6, 4096).unwrap();
        let g = bank.gram_matrix();
        for (i, row) in g.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((v - target).abs() < 1e-3, "G[{i}][{j}] = {v}");
            }
        }
    }

    #[test]
    fn impulse_responses_decay() {
        let spec = nominal_spec();
        let len = (20.0 * spec.sample_rate_hz / (spec.xi * spec.omega_rad_s)).ceil() as usize;
        let bank = build_bank(&spec, 4, len).unwrap();
        for ir in bank.impulse_responses() {
            let peak = ir.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let tail = ir[len - len / 10..]
                .iter()
                .fold(0.0_f64, |m, v| m.max(v.abs()));
            assert!(tail < 1e-6 * peak, "tail {tail} vs peak {peak}");
        }
    }

    #[test]
    fn impulse_input_reproduces_stored_responses() {
        let bank = build_bank(&nominal_spec(), 4, 300).unwrap();
        let mut u = vec![0.0; 300];
        u[0] = 1.0;
        let out = filter_input(&bank, &TimeSeries::new(u, 512.0).unwrap());
        assert_eq!(out, bank.impulse_responses());
        let zero = filter_input(&bank, &TimeSeries::zeros(50, 512.0).unwrap());
        assert!(zero.iter().flatten().all(|v| *v == 0.0));
    }

    #[test]
    fn second_function_has_unit_energy() {
        let bank = build_bank(&nominal_spec(), 2, 8192).unwrap();
        let e: f64 = bank.impulse_responses()[1].iter().map(|v| v * v).sum();
        assert!((e - 1.0).abs() < 1e-3);
    }

    #[test]
    fn basis_spec_round_trip() {
        let fs = 512.0;
        let basis = KautzBasis::new(
            [
                KautzPoleSpec::new(145.0, 0.02, fs).unwrap(),
                KautzPoleSpec::new(160.0, 0.05, fs).unwrap(),
                KautzPoleSpec::new(150.0, 0.02, fs).unwrap(),
            ],
            [2, 4, 6],
            512,
        )
        .unwrap();
        let json = serde_json::to_string(&basis.spec()).unwrap();
        let back = KautzBasis::from_spec(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, basis);
        assert_eq!(basis.n_functions(), [2, 4, 6]);
    }
}
