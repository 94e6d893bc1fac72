//! Special functions used by the selection criterion and the tests.
//!
//! Everything here is plain `f64` arithmetic with no external numerics so
//! results are reproducible bit-for-bit on a given platform. Log-gamma and
//! digamma shift the argument upward with the recurrence and finish with the
//! Stirling / Bernoulli asymptotic series; the incomplete gamma uses the
//! usual power series below `a + 1` and a Lentz continued fraction above.

use crate::{LdlmError, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Arguments are shifted to at least this value before the asymptotic series.
const ASYMPTOTIC_THRESHOLD: f64 = 15.0;

// B_{2k} / (2k (2k - 1)) for k = 1..8
const STIRLING: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 360.0,
    1.0 / 1260.0,
    -1.0 / 1680.0,
    1.0 / 1188.0,
    -691.0 / 360_360.0,
    1.0 / 156.0,
    -3617.0 / 122_400.0,
];

// B_{2k} / (2k) for k = 1..8
const DIGAMMA_SERIES: [f64; 8] = [
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32_760.0,
    1.0 / 12.0,
    -3617.0 / 8160.0,
];

fn check_positive(x: f64, name: &str) -> Result<()> {
    if x.is_finite() && x > 0.0 {
        Ok(())
    } else {
        Err(LdlmError::Domain(format!("{name} requires x > 0, got {x}")))
    }
}

/// Natural logarithm of the gamma function for `x > 0`.
pub fn log_gamma(x: f64) -> Result<f64> {
    check_positive(x, "log_gamma")?;
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_THRESHOLD {
        shift += z.ln();
        z += 1.0;
    }
    let inv = 1.0 / z;
    let inv2 = inv * inv;
    let mut series = 0.0;
    let mut power = inv;
    for c in STIRLING {
        series += c * power;
        power *= inv2;
    }
    Ok((z - 0.5) * z.ln() - z + LN_SQRT_2PI + series - shift)
}

/// Digamma function ψ(x) = d/dx ln Γ(x) for `x > 0`.
pub fn digamma(x: f64) -> Result<f64> {
    check_positive(x, "digamma")?;
    let mut z = x;
    let mut shift = 0.0;
    while z < ASYMPTOTIC_THRESHOLD {
        shift += 1.0 / z;
        z += 1.0;
    }
    let inv2 = 1.0 / (z * z);
    let mut series = 0.0;
    let mut power = inv2;
    for c in DIGAMMA_SERIES {
        series += c * power;
        power *= inv2;
    }
    Ok(z.ln() - 0.5 / z - series - shift)
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> Result<f64> {
    Ok(1.0 - gamma_q(a, x)?)
}

/// Regularized upper incomplete gamma Q(a, x) = Γ(a, x) / Γ(a).
pub fn gamma_q(a: f64, x: f64) -> Result<f64> {
    check_positive(a, "gamma_q shape")?;
    if x.is_nan() || x < 0.0 {
        return Err(LdlmError::Domain(format!("gamma_q requires x >= 0, got {x}")));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let log_prefactor = a * x.ln() - x - log_gamma(a)?;
    if x < a + 1.0 {
        let p = lower_series(a, x) * log_prefactor.exp();
        Ok((1.0 - p).clamp(0.0, 1.0))
    } else {
        let q = upper_fraction(a, x) * log_prefactor.exp();
        Ok(q.clamp(0.0, 1.0))
    }
}

fn max_terms(a: f64) -> usize {
    1000 + 10 * a.sqrt().ceil() as usize
}

// sum_{n>=0} x^n / (a (a+1) ... (a+n))
fn lower_series(a: f64, x: f64) -> f64 {
    let mut denom = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..max_terms(a) {
        denom += 1.0;
        term *= x / denom;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    sum
}

// Modified Lentz evaluation of the continued fraction for Γ(a, x) e^x x^-a.
fn upper_fraction(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..max_terms(a) {
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
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    h
}

/// Upper tail P(χ²_ν > x). Non-positive `x` gives 1.
pub fn chi_squared_sf(x: f64, dof: f64) -> Result<f64> {
    check_positive(dof, "chi_squared_sf degrees of freedom")?;
    if x <= 0.0 {
        return Ok(1.0);
    }
    gamma_q(0.5 * dof, 0.5 * x)
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x == 0.0 {
        return 1.0;
    }
    // erfc(x) = Q(1/2, x^2) for x > 0; the shape is fixed so this cannot fail.
    let upper = gamma_q(0.5, x * x).unwrap_or(0.0);
    if x > 0.0 {
        upper
    } else {
        2.0 - upper
    }
}

/// Standard normal distribution function Φ(z).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Standard normal quantile Φ⁻¹(p) for `p` in (0, 1).
///
/// Acklam's rational approximation followed by one Halley step against
/// [`normal_cdf`], which brings the error to a few ulps.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(LdlmError::Domain(format!("normal_quantile requires 0 < p < 1, got {p}")));
    }
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let x = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };

    let e = normal_cdf(x) - p;
    let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
    Ok(x - u / (1.0 + 0.5 * x * u))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1.0)
    }

    #[test]
    fn digamma_at_one_is_minus_euler_gamma() {
        let v = digamma(1.0).unwrap();
        assert!((v + 0.577_215_664_901_532_9).abs() < 1e-14, "{v}");
    }

    #[test]
    fn digamma_recurrence() {
        for &x in &[1e-3, 0.37, 1.0, 2.5, 14.2, 15.0, 97.1, 1e5] {
            let lhs = digamma(x + 1.0).unwrap() - digamma(x).unwrap();
            assert!(close(lhs, 1.0 / x, 1e-12), "x = {x}");
        }
    }

    #[test]
    fn digamma_matches_finite_difference_of_log_gamma() {
        let x = 50.5;
        let h = 1e-4;
        let fd = (log_gamma(x + h).unwrap() - log_gamma(x - h).unwrap()) / (2.0 * h);
        let v = digamma(x).unwrap();
        assert!((v - fd).abs() < 1e-8, "{v} vs {fd}");
    }

    #[test]
    fn log_gamma_known_values() {
        assert!(log_gamma(1.0).unwrap().abs() < 1e-14);
        assert!(log_gamma(2.0).unwrap().abs() < 1e-14);
        let half = log_gamma(0.5).unwrap();
        assert!((half - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-14);
        // ln(10!) = ln Γ(11)
        let fact: f64 = (1..=10).map(|k| (k as f64).ln()).sum();
        assert!((log_gamma(11.0).unwrap() - fact).abs() < 1e-12);
    }

    #[test]
    fn domain_errors() {
        assert!(log_gamma(0.0).is_err());
        assert!(digamma(-1.0).is_err());
        assert!(gamma_q(1.0, -0.5).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(chi_squared_sf(1.0, 0.0).is_err());
    }

    #[test]
    fn exponential_tail_identity() {
        // Q(1, x) = exp(-x)
        for &x in &[0.01, 0.5, 1.9, 2.1, 10.0, 40.0] {
            let q = gamma_q(1.0, x).unwrap();
            assert!(close(q, (-x).exp(), 1e-12), "x = {x}");
        }
    }

    #[test]
    fn chi_squared_two_dof_is_exponential() {
        for &x in &[0.3, 2.0, 7.5] {
            let p = chi_squared_sf(x, 2.0).unwrap();
            assert!((p - (-x / 2.0_f64).exp()).abs() < 1e-13);
        }
        assert_eq!(chi_squared_sf(0.0, 3.0).unwrap(), 1.0);
    }

    #[test]
    fn normal_quantile_reference_points() {
        assert!((normal_quantile(0.975).unwrap() - 1.959_963_984_540_054).abs() < 1e-12);
        assert!(normal_quantile(0.5).unwrap().abs() < 1e-15);
        assert!((normal_quantile(0.025).unwrap() + 1.959_963_984_540_054).abs() < 1e-12);
        let z = normal_quantile(1e-10).unwrap();
        assert!((normal_cdf(z) - 1e-10).abs() < 1e-20);
    }

    #[test]
    fn erfc_symmetry() {
        for &x in &[0.1, 0.7, 2.3] {
            assert!((erfc(x) + erfc(-x) - 2.0).abs() < 1e-15);
        }
    }
}
