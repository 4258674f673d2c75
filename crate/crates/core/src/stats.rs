//! Normal-distribution helpers for Wald tests.

use libm::erfc;

use crate::error::{Error, Result};

/// Standard normal CDF, via the complementary error function
/// (`Phi(z) = erfc(-z / sqrt 2) / 2`), which keeps full relative precision in
/// both tails.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided Wald p-value `2 (1 - Phi(|z|))`, computed as `erfc(|z| / sqrt 2)`
/// to avoid cancellation for large `|z|`.
pub fn two_sided_p(z: f64) -> f64 {
    if z.is_nan() {
        return f64::NAN;
    }
    erfc(z.abs() / std::f64::consts::SQRT_2).min(1.0)
}

pub fn wald_p(beta: f64, se: f64) -> Result<f64> {
    if !(se > 0.0 && se.is_finite()) {
        return Err(Error::InvalidSe(se));
    }
    Ok(two_sided_p(beta / se))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_quantiles() {
        assert_eq!(wald_p(0.0, 1.0).unwrap(), 1.0);
        assert!((wald_p(1.959964, 1.0).unwrap() - 0.05).abs() < 1e-6);
        // erfc(3/sqrt 2) to 12 digits: 0.00269979606326
        assert!((wald_p(3.0, 1.0).unwrap() - 0.002_699_796_063_26).abs() < 1e-15);
        let cdf = normal_cdf(1.0);
        assert!((cdf - 0.841_344_746_068_543).abs() < 1e-15, "{cdf:e}");
    }

    #[test]
    fn invalid_se() {
        assert!(matches!(wald_p(1.0, 0.0), Err(Error::InvalidSe(_))));
        assert!(matches!(wald_p(1.0, f64::NAN), Err(Error::InvalidSe(_))));
    }

    #[test]
    fn symmetric_in_sign() {
        assert_eq!(wald_p(-2.5, 1.3).unwrap(), wald_p(2.5, 1.3).unwrap());
    }
}
