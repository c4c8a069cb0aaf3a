mod common;

use ela_core::special::{beta_cdf, BetaParams};

#[test]
fn quadrature_oracle_agrees_with_closed_forms() {
    // I_x(1/2, 1/2) = (2/π) asin(√x); I_x(a, 1) = x^a.
    for &x in &[1e-6f64, 0.01, 0.2, 0.5, 0.8, 0.99, 0.999999] {
        let arcsine = 2.0 / std::f64::consts::PI * x.sqrt().asin();
        assert!((common::beta_cdf_quadrature(x, 0.5, 0.5) - arcsine).abs() < 1e-12, "x={x}");
        assert!((common::beta_cdf_quadrature(x, 2.5, 1.0) - x.powf(2.5)).abs() < 1e-12);
    }
}

#[test]
fn fractional_beta_matches_quadrature() {
    let mut worst: f64 = 0.0;
    for &a in &[0.3, 0.5, 1.7, 2.5, 4.2, 7.9] {
        for &b in &[0.4, 0.5, 1.3, 3.6, 6.1] {
            for i in 1..40 {
                let x = i as f64 / 40.0;
                let got = beta_cdf(x, BetaParams::new(a, b).unwrap()).unwrap();
                worst = worst.max((got - common::beta_cdf_quadrature(x, a, b)).abs());
            }
        }
    }
    assert!(worst < 1e-10, "worst {worst}");
}

#[test]
fn gamma_matches_erlang_and_normal_matches_simpson() {
    use ela_core::special::{gamma_cdf, normal_cdf, GammaParams};
    for k in 1..=8u32 {
        for &scale in &[0.5, 1.0, 3.0] {
            for i in 0..60 {
                let x = i as f64 * 0.25;
                let got = gamma_cdf(x, GammaParams::new(f64::from(k), scale).unwrap()).unwrap();
                assert!((got - common::erlang_cdf(x, k, scale)).abs() < 1e-12, "k={k} x={x}");
            }
        }
    }
    for &x in &[-3.0, -1.0, -0.2, 0.0, 0.7, 1.96, 4.0] {
        assert!((normal_cdf(x) - common::normal_cdf_simpson(x)).abs() < 1e-12, "x={x}");
    }
}

#[test]
fn integer_beta_matches_binomial_sum() {
    for a in 1..=8u32 {
        for b in 1..=8u32 {
            for i in 0..=50 {
                let x = i as f64 / 50.0;
                let got = beta_cdf(x, BetaParams::new(f64::from(a), f64::from(b)).unwrap()).unwrap();
                assert!((got - common::beta_cdf_binomial(x, a, b)).abs() < 1e-12);
            }
        }
    }
}
