//! Distribution CDFs used by the score mappers.
//!
//! Regularized incomplete beta and lower incomplete gamma are evaluated with
//! continued fractions (modified Lentz) on top of a Lanczos log-gamma.

use serde::{Deserialize, Serialize};

use crate::error::{ElaError, Result};

/// Continued-fraction / series convergence tolerance.
pub const CF_TOLERANCE: f64 = 1e-14;
/// Iteration cap; running past it is reported as a numerical error.
pub const CF_MAX_ITER: usize = 300;

const TINY: f64 = 1e-300;

/// Shape parameters of a Beta distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = BetaParams { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ElaError::ParameterDomain(format!(
                "Beta shapes must be positive and finite, got alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Gamma distribution with shape `alpha` and scale `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl GammaParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = GammaParams { alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(ElaError::ParameterDomain(format!(
                "Gamma shape and scale must be positive and finite, got alpha={}, beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }
}

/// Exponential distribution with rate `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpParams {
    pub lambda: f64,
}

impl ExpParams {
    pub fn new(lambda: f64) -> Result<Self> {
        let p = ExpParams { lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(ElaError::ParameterDomain(format!(
                "Exponential rate must be positive and finite, got lambda={}",
                self.lambda
            )));
        }
        Ok(())
    }
}

// Lanczos approximation, g = 7, n = 9.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the Gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0);
    if x < 0.5 {
        // Reflection: Γ(x)Γ(1−x) = π / sin(πx)
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS_COEF[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// ln B(α, β).
pub fn ln_beta(p: BetaParams) -> Result<f64> {
    p.validate()?;
    Ok(ln_gamma(p.alpha) + ln_gamma(p.beta) - ln_gamma(p.alpha + p.beta))
}

/// The Beta function B(α, β) = Γ(α)Γ(β)/Γ(α+β).
pub fn beta_fn(p: BetaParams) -> Result<f64> {
    Ok(ln_beta(p)?.exp())
}

/// Regularized incomplete beta I_x(α, β), clamped to 0 below the support
/// and to 1 above it.
pub fn beta_cdf(x: f64, p: BetaParams) -> Result<f64> {
    p.validate()?;
    if x.is_nan() {
        return Err(ElaError::Domain("beta_cdf: x is NaN".into()));
    }
    if x <= 0.0 {
        return Ok(0.0);
    }
    if x >= 1.0 {
        return Ok(1.0);
    }
    let (a, b) = (p.alpha, p.beta);
    if b == 1.0 {
        return Ok(x.powf(a));
    }
    if a == 1.0 {
        return Ok(-(b * (-x).ln_1p()).exp_m1());
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        Ok(1.0 - incomplete_beta_cf(b, a, 1.0 - x)?)
    } else {
        incomplete_beta_cf(a, b, x)
    }
}

fn incomplete_beta_cf(a: f64, b: f64, x: f64) -> Result<f64> {
    let ln_front = a * x.ln() + b * (-x).ln_1p() - ln_beta(BetaParams { alpha: a, beta: b })?;
    let front = ln_front.exp() / a;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;

    for m in 1..=CF_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;

        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;

        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;

        if (del - 1.0).abs() < CF_TOLERANCE {
            return Ok((front * h).clamp(0.0, 1.0));
        }
    }
    Err(ElaError::Numerical(format!(
        "incomplete beta continued fraction did not converge in {CF_MAX_ITER} iterations (a={a}, b={b}, x={x})"
    )))
}

/// Regularized lower incomplete gamma P(a, x).
pub fn lower_regularized_gamma(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(ElaError::ParameterDomain(format!("gamma shape must be positive, got {a}")));
    }
    if x < 0.0 || x.is_nan() {
        return Err(ElaError::Domain(format!("incomplete gamma needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        Ok(1.0 - gamma_cf(a, x)?)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 − P(a, x), evaluated
/// without cancellation in the tail.
pub fn upper_regularized_gamma(a: f64, x: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(ElaError::ParameterDomain(format!("gamma shape must be positive, got {a}")));
    }
    if x < 0.0 || x.is_nan() {
        return Err(ElaError::Domain(format!("incomplete gamma needs x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    if x < a + 1.0 {
        Ok(1.0 - gamma_series(a, x)?)
    } else {
        gamma_cf(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> Result<f64> {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..CF_MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if del.abs() < sum.abs() * CF_TOLERANCE {
            let v = sum * (-x + a * x.ln() - ln_gamma(a)).exp();
            return Ok(v.clamp(0.0, 1.0));
        }
    }
    Err(ElaError::Numerical(format!(
        "incomplete gamma series did not converge in {CF_MAX_ITER} iterations (a={a}, x={x})"
    )))
}

fn gamma_cf(a: f64, x: f64) -> Result<f64> {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..=CF_MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < CF_TOLERANCE {
            let v = (-x + a * x.ln() - ln_gamma(a)).exp() * h;
            return Ok(v.clamp(0.0, 1.0));
        }
    }
    Err(ElaError::Numerical(format!(
        "incomplete gamma continued fraction did not converge in {CF_MAX_ITER} iterations (a={a}, x={x})"
    )))
}

/// Gamma CDF with shape α and scale β: P(α, x/β).
pub fn gamma_cdf(x: f64, p: GammaParams) -> Result<f64> {
    p.validate()?;
    if x < 0.0 || x.is_nan() {
        return Err(ElaError::Domain(format!("gamma_cdf needs x >= 0, got {x}")));
    }
    lower_regularized_gamma(p.alpha, x / p.beta)
}

/// Exponential CDF 1 − e^{−λx}.
pub fn exp_cdf(x: f64, p: ExpParams) -> Result<f64> {
    p.validate()?;
    if x < 0.0 || x.is_nan() {
        return Err(ElaError::Domain(format!("exp_cdf needs x >= 0, got {x}")));
    }
    Ok(-(-p.lambda * x).exp_m1())
}

/// Standard normal CDF Φ(x).
pub fn normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    // Φ(x) = ½·erfc(−x/√2) and erfc(z) = Q(½, z²) for z ≥ 0.
    let half_sq = 0.5 * x * x;
    let tail = if half_sq.is_infinite() {
        0.0
    } else {
        upper_regularized_gamma(0.5, half_sq).expect("Q(1/2, z) is defined for all finite z >= 0")
    };
    if x >= 0.0 {
        1.0 - 0.5 * tail
    } else {
        0.5 * tail
    }
}

/// Inverts a nondecreasing CDF on a bracket by bisection.
fn invert_monotone<F>(target: f64, mut lo: f64, mut hi: f64, cdf: F) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if cdf(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn check_probability(prob: f64) -> Result<()> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(ElaError::Domain(format!(
            "inverse CDF needs a probability in (0, 1), got {prob}"
        )));
    }
    Ok(())
}

/// Beta quantile function F⁻¹(prob).
pub fn beta_inv_cdf(prob: f64, p: BetaParams) -> Result<f64> {
    p.validate()?;
    check_probability(prob)?;
    invert_monotone(prob, 0.0, 1.0, |x| beta_cdf(x, p))
}

/// Gamma quantile function F⁻¹(prob).
pub fn gamma_inv_cdf(prob: f64, p: GammaParams) -> Result<f64> {
    p.validate()?;
    check_probability(prob)?;
    let mut hi = p.alpha * p.beta + p.beta;
    while gamma_cdf(hi, p)? < prob {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(ElaError::Numerical("gamma quantile bracket overflowed".into()));
        }
    }
    invert_monotone(prob, 0.0, hi, |x| gamma_cdf(x, p))
}

/// Exponential quantile function −ln(1 − prob)/λ.
pub fn exp_inv_cdf(prob: f64, p: ExpParams) -> Result<f64> {
    p.validate()?;
    check_probability(prob)?;
    Ok(-(-prob).ln_1p() / p.lambda)
}

/// Standard normal quantile function.
pub fn normal_inv_cdf(prob: f64) -> Result<f64> {
    check_probability(prob)?;
    invert_monotone(prob, -40.0, 40.0, |x| Ok(normal_cdf(x)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bp(a: f64, b: f64) -> BetaParams {
        BetaParams::new(a, b).unwrap()
    }

    #[test]
    fn beta_cdf_examples() {
        assert!((beta_cdf(0.5, bp(1.0, 1.0)).unwrap() - 0.5).abs() < 1e-15);
        assert!((beta_cdf(0.5, bp(3.0, 3.0)).unwrap() - 0.5).abs() < 1e-14);
        assert!((beta_cdf(0.5, bp(2.0, 5.0)).unwrap() - 57.0 / 64.0).abs() < 1e-14);
        assert!((beta_cdf(0.5, bp(5.0, 1.0)).unwrap() - 0.03125).abs() < 1e-15);
    }

    #[test]
    fn beta_cdf_clamps_outside_support() {
        let p = bp(2.0, 3.0);
        assert_eq!(beta_cdf(-0.1, p).unwrap(), 0.0);
        assert_eq!(beta_cdf(1.5, p).unwrap(), 1.0);
        assert_eq!(beta_cdf(0.0, p).unwrap(), 0.0);
        assert_eq!(beta_cdf(1.0, p).unwrap(), 1.0);
    }

    #[test]
    fn invalid_shapes_are_rejected() {
        assert!(matches!(
            beta_cdf(0.5, BetaParams { alpha: 0.0, beta: 1.0 }),
            Err(ElaError::ParameterDomain(_))
        ));
        assert!(matches!(
            beta_fn(BetaParams { alpha: 1.0, beta: -2.0 }),
            Err(ElaError::ParameterDomain(_))
        ));
        assert!(GammaParams::new(1.0, 0.0).is_err());
        assert!(ExpParams::new(-1.0).is_err());
    }

    #[test]
    fn beta_fn_examples() {
        assert!((beta_fn(bp(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-14);
        assert!((beta_fn(bp(2.0, 2.0)).unwrap() - 1.0 / 6.0).abs() < 1e-14);
        assert!((beta_fn(bp(5.0, 1.0)).unwrap() - 0.2).abs() < 1e-14);
        let ab = beta_fn(bp(2.5, 7.25)).unwrap();
        let ba = beta_fn(bp(7.25, 2.5)).unwrap();
        assert!((ab - ba).abs() <= 1e-15 * ab);
    }

    #[test]
    fn ln_gamma_matches_factorials() {
        let mut fact = 1.0f64;
        for n in 1..20 {
            // Γ(n) = (n−1)!
            assert!((ln_gamma(n as f64) - fact.ln()).abs() < 1e-13 * fact.ln().abs().max(1.0));
            fact *= n as f64;
        }
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-14);
    }

    #[test]
    fn gamma_cdf_examples() {
        let g = GammaParams::new(1.0, 1.0).unwrap();
        assert_eq!(gamma_cdf(0.0, g).unwrap(), 0.0);
        assert!((gamma_cdf(2f64.ln(), g).unwrap() - 0.5).abs() < 1e-15);
        let g2 = GammaParams::new(2.0, 1.0).unwrap();
        assert!((gamma_cdf(2.0, g2).unwrap() - (1.0 - 3.0 * (-2.0f64).exp())).abs() < 1e-14);
        assert!(matches!(gamma_cdf(-1.0, g), Err(ElaError::Domain(_))));
    }

    #[test]
    fn exp_cdf_examples() {
        let e1 = ExpParams::new(1.0).unwrap();
        assert_eq!(exp_cdf(0.0, e1).unwrap(), 0.0);
        assert!((exp_cdf(2f64.ln(), e1).unwrap() - 0.5).abs() < 1e-15);
        let e2 = ExpParams::new(2.0).unwrap();
        assert!((exp_cdf(1.0, e2).unwrap() - 0.864_664_716_763_387_3).abs() < 1e-15);
        assert!(exp_cdf(-0.5, e1).is_err());
    }

    #[test]
    fn normal_cdf_examples() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(40.0) - 1.0).abs() < 1e-12);
        assert!((normal_cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-14);
        for &x in &[0.3, 1.7, 3.2, 6.0] {
            assert!((normal_cdf(-x) - (1.0 - normal_cdf(x))).abs() < 1e-14);
        }
    }

    #[test]
    fn inverse_cdfs_round_trip() {
        let b = bp(2.0, 5.0);
        let g = GammaParams::new(2.5, 0.7).unwrap();
        let e = ExpParams::new(1.3).unwrap();
        for &pr in &[0.01, 0.2, 0.5, 0.9, 0.999] {
            assert!((beta_cdf(beta_inv_cdf(pr, b).unwrap(), b).unwrap() - pr).abs() < 1e-12);
            assert!((gamma_cdf(gamma_inv_cdf(pr, g).unwrap(), g).unwrap() - pr).abs() < 1e-12);
            assert!((exp_cdf(exp_inv_cdf(pr, e).unwrap(), e).unwrap() - pr).abs() < 1e-14);
            assert!((normal_cdf(normal_inv_cdf(pr).unwrap()) - pr).abs() < 1e-12);
        }
        assert!(beta_inv_cdf(1.0, b).is_err());
        assert!(exp_inv_cdf(0.0, e).is_err());
    }
}
