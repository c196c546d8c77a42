//! Standard normal helpers.

use statrs::distribution::{ContinuousCDF, Normal};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Density φ(x). Zero at ±∞.
pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Distribution function Φ(x), accurate in both tails.
pub fn cdf(x: f64) -> f64 {
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    if x == f64::INFINITY {
        return 1.0;
    }
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail 1 − Φ(x) without cancellation.
pub fn sf(x: f64) -> f64 {
    cdf(-x)
}

/// Quantile function Φ⁻¹(p).
pub fn quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// P(lo < Z ≤ hi) for a standard normal Z, evaluated on whichever side of
/// zero avoids subtracting two numbers close to one.
pub fn interval_prob(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        sf(lo) - sf(hi)
    } else {
        cdf(hi) - cdf(lo)
    }
}

/// Two-sided p-value for a standard-normal statistic.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    (2.0 * sf(z.abs())).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(cdf(0.0), 0.5);
        assert!((pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
        assert!((cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
        assert!((quantile(0.25) + 0.674_489_750_196_081_7).abs() < 1e-12);
        assert_eq!(interval_prob(f64::NEG_INFINITY, f64::INFINITY), 1.0);
        assert!(interval_prob(9.0, 10.0) > 0.0);
    }

    #[test]
    fn cdf_matches_quadrature() {
        // Composite Simpson on [0, z] of the density, plus one half.
        let simpson = |z: f64| {
            let n = 2000;
            let h = z / n as f64;
            let mut acc = pdf(0.0) + pdf(z);
            for i in 1..n {
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                acc += w * pdf(i as f64 * h);
            }
            0.5 + acc * h / 3.0
        };
        for z in [-3.5, -1.2, -0.6, 0.3, 1.1074, 2.7] {
            assert!((cdf(z) - simpson(z)).abs() < 1e-12, "z = {z}");
        }
    }
}
