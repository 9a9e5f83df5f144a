use num_complex::Complex;
use proptest::prelude::*;
use voltshm::kautz::{allpass_response, build_bank, poles_from_spec, KautzPoleSpec};

fn max_gram_deviation(g: &[Vec<f64>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, row) in g.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let want = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((v - want).abs());
        }
    }
    worst
}

#[test]
fn bank_at_the_nominal_mode_is_orthonormal() {
    let spec = KautzPoleSpec::new(145.3, 0.018, 512.0).unwrap();
    for j in [2, 4, 6] {
        let bank = build_bank(&spec, j, 4096).unwrap();
        assert!(max_gram_deviation(&bank.gram_matrix()) < 1e-3, "J = {j}");
    }
    let poles = poles_from_spec(&spec).unwrap();
    for k in 0..64 {
        let theta = std::f64::consts::PI * (k as f64 + 0.5) / 64.0;
        assert!((allpass_response(poles, theta).norm() - 1.0).abs() < 1e-10);
    }
}

#[test]
fn pole_parameters_from_complex_arithmetic() {
    let (w, xi, fs): (f64, f64, f64) = (145.3, 0.018, 512.0);
    let z = (Complex::new(-xi * w, w * (1.0 - xi * xi).sqrt()) / fs).exp();
    let p = poles_from_spec(&KautzPoleSpec::new(w, xi, fs).unwrap()).unwrap();
    assert!((z.norm_sqr() - (-2.0 * xi * w / fs).exp()).abs() < 1e-12);
    assert!((p.c + z.norm_sqr()).abs() < 1e-12);
    assert!((p.b - 2.0 * z.re / (1.0 + z.norm_sqr())).abs() < 1e-12);
}

proptest! {
    #[test]
    fn poles_are_stable_with_negative_c(w in 10.0..1500.0f64, xi in 0.005..0.95f64) {
        let spec = KautzPoleSpec::new(w, xi, 512.0).unwrap();
        let z = spec.discrete_pole();
        let p = poles_from_spec(&spec).unwrap();
        prop_assert!(p.c < 0.0);
        prop_assert!((p.c + z.norm_sqr()).abs() < 1e-12);
        prop_assert!(p.b.abs() < 1.0 && p.c.abs() < 1.0);
    }

    #[test]
    fn allpass_factor_has_unit_magnitude(w in 10.0..1500.0f64, xi in 0.005..0.95f64, theta in 0.0..std::f64::consts::PI) {
        let p = poles_from_spec(&KautzPoleSpec::new(w, xi, 512.0).unwrap()).unwrap();
        prop_assert!((allpass_response(p, theta).norm() - 1.0).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Orthonormality and decay once the memory spans 40 envelope time
    /// constants; later function pairs carry a polynomial factor and need
    /// the margin.
    #[test]
    fn long_banks_are_orthonormal_and_decay(w in 60.0..600.0f64, xi in 0.02..0.5f64, half in 1usize..=3) {
        let spec = KautzPoleSpec::new(w, xi, 512.0).unwrap();
        let memory = ((40.0 * 512.0 / (xi * w)).ceil() as usize).max(64);
        let bank = build_bank(&spec, 2 * half, memory).unwrap();
        prop_assert!(max_gram_deviation(&bank.gram_matrix()) < 1e-3);
        for psi in bank.impulse_responses() {
            let peak = psi.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            let tail = psi[memory - memory / 10..].iter().fold(0.0, |m: f64, v| m.max(v.abs()));
            prop_assert!(tail < 1e-6 * peak);
        }
    }
}
