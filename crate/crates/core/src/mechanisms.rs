//! Laplace mechanism, randomized response and privacy-budget allocation.
//!
//! Every mechanism takes an explicit RNG stream. An infinite budget is an
//! exact identity and consumes no draws.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A privacy budget: a positive real or infinity (no perturbation).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Epsilon {
    Finite(f64),
    Infinite,
}

impl Epsilon {
    pub fn finite(value: f64) -> Result<Self> {
        if value.is_nan() || value < 0.0 {
            return Err(Error::InvalidArgument(format!("epsilon {value} must be non-negative")));
        }
        if value.is_infinite() {
            return Ok(Epsilon::Infinite);
        }
        Ok(Epsilon::Finite(value))
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Epsilon::Infinite)
    }

    /// Value as `f64`, infinity for [`Epsilon::Infinite`].
    pub fn value(self) -> f64 {
        match self {
            Epsilon::Finite(v) => v,
            Epsilon::Infinite => f64::INFINITY,
        }
    }

    /// An equal share of this budget over `parts` targets.
    pub fn split(self, parts: usize) -> Epsilon {
        match self {
            Epsilon::Finite(v) => Epsilon::Finite(v / parts as f64),
            Epsilon::Infinite => Epsilon::Infinite,
        }
    }

    /// Stable 64-bit key used for seeding.
    pub fn key(self) -> u64 {
        match self {
            Epsilon::Finite(v) => v.to_bits(),
            Epsilon::Infinite => u64::MAX,
        }
    }
}

impl PartialOrd for Epsilon {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        self.value().partial_cmp(&other.value())
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Epsilon::Finite(v) => write!(f, "{v}"),
            Epsilon::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Epsilon {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s == "∞" {
            return Ok(Epsilon::Infinite);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("`{s}` is not an epsilon value")))?;
        Epsilon::finite(v)
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    Covariate(usize),
    Time,
    Status,
    Coefficient(usize),
}

/// How a total budget is divided by sequential composition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Allocation {
    /// `q` covariates, `epsilon / q` each.
    PerCovariate(usize),
    /// `q` covariates plus time and status, `epsilon / (q + 2)` each.
    AllInputs(usize),
    /// One share per released coefficient.
    PerCoefficient(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyBudget {
    pub total: Epsilon,
    pub allocation: Allocation,
}

impl PrivacyBudget {
    pub fn new(total: Epsilon, allocation: Allocation) -> Self {
        Self { total, allocation }
    }

    pub fn targets(&self) -> usize {
        match self.allocation {
            Allocation::PerCovariate(q) | Allocation::PerCoefficient(q) => q,
            Allocation::AllInputs(q) => q + 2,
        }
    }

    pub fn share(&self) -> Epsilon {
        self.total.split(self.targets())
    }

    pub fn allocate(&self) -> Result<Vec<(Target, Epsilon)>> {
        let share = self.share();
        Ok(match self.allocation {
            Allocation::PerCovariate(0) | Allocation::AllInputs(0) | Allocation::PerCoefficient(0) => {
                return Err(Error::InvalidArgument("allocation over zero targets".into()))
            }
            Allocation::PerCovariate(q) => (0..q).map(|j| (Target::Covariate(j), share)).collect(),
            Allocation::PerCoefficient(q) => (0..q).map(|j| (Target::Coefficient(j), share)).collect(),
            Allocation::AllInputs(q) => (0..q)
                .map(Target::Covariate)
                .chain([Target::Time, Target::Status])
                .map(|t| (t, share))
                .collect(),
        })
    }
}

/// Uniform draw on the open interval (0, 1) from a single `u64`.
pub fn open_unit<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Laplace(0, scale) by inversion of one uniform `u` on (0, 1):
/// `L = -scale * sign(u - 1/2) * ln(1 - 2 |u - 1/2|)`.
pub fn sample_laplace<R: RngCore + ?Sized>(scale: f64, rng: &mut R) -> f64 {
    let u = open_unit(rng) - 0.5;
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// `clamp(value + Lap((upper - lower) / eps), lower, upper)`.
pub fn laplace_clamped<R: RngCore + ?Sized>(
    value: f64,
    lower: f64,
    upper: f64,
    eps: Epsilon,
    rng: &mut R,
) -> Result<f64> {
    if !(lower < upper) {
        return Err(Error::DegenerateRange(format!("[{lower}, {upper}]")));
    }
    match eps {
        Epsilon::Infinite => Ok(value),
        Epsilon::Finite(e) => {
            let noisy = value + sample_laplace((upper - lower) / e, rng);
            Ok(noisy.clamp(lower, upper))
        }
    }
}

/// `e^eps / (1 + e^eps)`.
pub fn binary_keep_probability(eps: Epsilon) -> f64 {
    match eps {
        Epsilon::Infinite => 1.0,
        Epsilon::Finite(e) => 1.0 / (1.0 + (-e).exp()),
    }
}

pub fn binary_rr<R: Rng + ?Sized>(bit: bool, eps: Epsilon, rng: &mut R) -> bool {
    if eps.is_infinite() {
        return bit;
    }
    let keep = open_unit(rng) < binary_keep_probability(eps);
    if keep {
        bit
    } else {
        !bit
    }
}

/// `e^eps / (e^eps + k - 1)`, the total probability of reporting the true level.
pub fn categorical_keep_probability(k: usize, eps: Epsilon) -> f64 {
    match eps {
        Epsilon::Infinite => 1.0,
        Epsilon::Finite(e) => 1.0 / (1.0 + (k as f64 - 1.0) * (-e).exp()),
    }
}

/// k-ary randomized response on a 0-based level: the true level with
/// probability `e^eps / (e^eps + k - 1)`, otherwise one of the `k - 1` other
/// levels uniformly (each `1 / (e^eps + k - 1)`).
pub fn categorical_rr<R: Rng + ?Sized>(level: usize, k: usize, eps: Epsilon, rng: &mut R) -> Result<usize> {
    if k < 2 || level >= k {
        return Err(Error::InvalidLevel { level, k });
    }
    if eps.is_infinite() {
        return Ok(level);
    }
    if open_unit(rng) < categorical_keep_probability(k, eps) {
        return Ok(level);
    }
    let other = rng.random_range(0..k - 1);
    Ok(if other >= level { other + 1 } else { other })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const DRAWS: usize = 100_000;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    /// |observed - expected| within 3 standard errors of a proportion.
    fn within_3se(count: usize, n: usize, p: f64) -> bool {
        let se = (p * (1.0 - p) / n as f64).sqrt();
        (count as f64 / n as f64 - p).abs() <= 3.0 * se
    }

    #[test]
    fn laplace_scale_from_range() {
        let mut r = rng(1);
        // Lap(b) has E|L| = b and Var|L| = b^2
        let b = 10.0 / 2.0;
        let mean = (0..DRAWS).map(|_| sample_laplace(b, &mut r).abs()).sum::<f64>() / DRAWS as f64;
        let se = b / (DRAWS as f64).sqrt();
        assert!((mean - b).abs() <= 3.0 * se, "mean |noise| {mean}");
    }

    #[test]
    fn laplace_quantiles() {
        // P(L <= -b ln 2) = 1/4 and P(L <= b ln 2) = 3/4 for every scale
        for eps in [0.1, 1.0, 10.0] {
            let b = 1.0 / eps;
            let mut r = rng(2);
            let cut = b * 2f64.ln();
            let draws: Vec<f64> = (0..DRAWS).map(|_| sample_laplace(b, &mut r)).collect();
            assert!(within_3se(draws.iter().filter(|&&x| x <= -cut).count(), DRAWS, 0.25));
            assert!(within_3se(draws.iter().filter(|&&x| x <= cut).count(), DRAWS, 0.75));
            assert!(within_3se(draws.iter().filter(|&&x| x <= 0.0).count(), DRAWS, 0.5));
        }
    }

    #[test]
    fn laplace_identity_and_clamp() {
        let mut r = rng(3);
        assert_eq!(laplace_clamped(3.25, 0.0, 10.0, Epsilon::Infinite, &mut r).unwrap(), 3.25);
        for _ in 0..10_000 {
            let v = laplace_clamped(9.9, 0.0, 10.0, Epsilon::Finite(1e-3), &mut r).unwrap();
            assert!((0.0..=10.0).contains(&v));
        }
        assert!(matches!(
            laplace_clamped(1.0, 2.0, 2.0, Epsilon::Finite(1.0), &mut r),
            Err(Error::DegenerateRange(_))
        ));
    }

    #[test]
    fn binary_rr_rates() {
        assert_eq!(binary_keep_probability(Epsilon::Finite(0.0)), 0.5);
        assert!((binary_keep_probability(Epsilon::Finite(3f64.ln())) - 0.75).abs() < 1e-15);
        for eps in [0.1, 3f64.ln(), 1.0, 10.0] {
            let e = Epsilon::Finite(eps);
            let mut r = rng(4);
            let flips = (0..DRAWS).filter(|_| !binary_rr(true, e, &mut r)).count();
            assert!(within_3se(flips, DRAWS, 1.0 - binary_keep_probability(e)), "eps {eps}");
        }
        let mut r = rng(5);
        assert!(binary_rr(true, Epsilon::Infinite, &mut r));
        assert!(!binary_rr(false, Epsilon::Infinite, &mut r));
    }

    #[test]
    fn categorical_rr_distribution() {
        let cases = [(4usize, 0.0f64), (3, 2f64.ln()), (5, 0.1), (5, 1.0), (5, 10.0)];
        for (k, eps) in cases {
            let e = Epsilon::Finite(eps);
            let mut r = rng(6);
            let mut counts = vec![0usize; k];
            for _ in 0..DRAWS {
                counts[categorical_rr(1, k, e, &mut r).unwrap()] += 1;
            }
            let keep = categorical_keep_probability(k, e);
            let other = (1.0 - keep) / (k - 1) as f64;
            for (level, &c) in counts.iter().enumerate() {
                let p = if level == 1 { keep } else { other };
                assert!(within_3se(c, DRAWS, p), "k={k} eps={eps} level={level}");
            }
        }
        assert_eq!(categorical_keep_probability(4, Epsilon::Finite(0.0)), 0.25);
        let half = categorical_keep_probability(3, Epsilon::Finite(2f64.ln()));
        assert!((half - 0.5).abs() < 1e-15);
    }

    #[test]
    fn categorical_rr_reduces_to_binary() {
        let e = Epsilon::Finite(0.7);
        assert!((categorical_keep_probability(2, e) - binary_keep_probability(e)).abs() < 1e-15);
    }

    #[test]
    fn categorical_identity_and_errors() {
        let mut r = rng(7);
        for level in 0..13 {
            assert_eq!(categorical_rr(level, 13, Epsilon::Infinite, &mut r).unwrap(), level);
        }
        assert!(matches!(
            categorical_rr(3, 3, Epsilon::Finite(1.0), &mut r),
            Err(Error::InvalidLevel { level: 3, k: 3 })
        ));
    }

    #[test]
    fn allocation_shares() {
        let b = PrivacyBudget::new(Epsilon::Finite(1.0), Allocation::PerCovariate(7));
        let shares = b.allocate().unwrap();
        assert_eq!(shares.len(), 7);
        assert!(shares.iter().all(|(_, s)| *s == Epsilon::Finite(1.0 / 7.0)));

        let b = PrivacyBudget::new(Epsilon::Finite(34.0), Allocation::AllInputs(17));
        let shares = b.allocate().unwrap();
        assert_eq!(shares.len(), 19);
        assert_eq!(shares[17].0, Target::Time);
        assert_eq!(shares[18].0, Target::Status);
        let total: f64 = shares.iter().map(|(_, s)| s.value()).sum();
        assert!((total - 34.0).abs() < 1e-12);
        assert_eq!(shares[0].1, Epsilon::Finite(34.0 / 19.0));

        let b = PrivacyBudget::new(Epsilon::Infinite, Allocation::PerCoefficient(4));
        assert!(b.allocate().unwrap().iter().all(|(_, s)| s.is_infinite()));
    }

    #[test]
    fn epsilon_parsing() {
        assert_eq!("inf".parse::<Epsilon>().unwrap(), Epsilon::Infinite);
        assert_eq!("0.5".parse::<Epsilon>().unwrap(), Epsilon::Finite(0.5));
        assert!("-1".parse::<Epsilon>().is_err());
        assert_eq!(Epsilon::Finite(1000.0).to_string(), "1000");
        assert!(Epsilon::Finite(1000.0) < Epsilon::Infinite);
    }
}
