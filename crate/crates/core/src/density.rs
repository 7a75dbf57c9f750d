//! Gaussian kernel density estimates for the scalar random variables.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("need at least 2 observations, got {0}")]
    TooFewObservations(usize),
    #[error("density of a point mass at {0} is undefined")]
    DegenerateModel(f64),
    #[error("non-finite observation at index {0}")]
    NonFinite(usize),
}

/// Bandwidth selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BandwidthRule {
    /// `1.06 * sigma * N^(-1/5)`.
    #[default]
    SilvermanApprox,
    /// `sigma * (4 / (3 N))^(1/5)`.
    SilvermanExact,
}

impl BandwidthRule {
    pub fn name(self) -> &'static str {
        match self {
            Self::SilvermanApprox => "approx",
            Self::SilvermanExact => "exact",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "approx" => Some(Self::SilvermanApprox),
            "exact" => Some(Self::SilvermanExact),
            _ => None,
        }
    }
}

/// Sample standard deviation with divisor `N - 1`.
pub fn sample_std(obs: &[f64]) -> f64 {
    let n = obs.len() as f64;
    let mean = obs.iter().sum::<f64>() / n;
    (obs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Silverman's rule-of-thumb bandwidth. Zero for constant observations.
pub fn silverman_bandwidth(obs: &[f64], rule: BandwidthRule) -> Result<f64, DensityError> {
    if obs.len() < 2 {
        return Err(DensityError::TooFewObservations(obs.len()));
    }
    let sigma = sample_std(obs);
    let n = obs.len() as f64;
    Ok(match rule {
        BandwidthRule::SilvermanApprox => 1.06 * sigma * n.powf(-0.2),
        BandwidthRule::SilvermanExact => sigma * (4.0 / (3.0 * n)).powf(0.2),
    })
}

/// One-dimensional Gaussian KDE. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeModel {
    observations: Vec<f64>,
    h: f64,
    sigma_hat: f64,
}

impl KdeModel {
    pub fn fit(observations: Vec<f64>, rule: BandwidthRule) -> Result<Self, DensityError> {
        let h = silverman_bandwidth(&observations, rule)?;
        Self::with_bandwidth(observations, h)
    }

    /// Uses a given bandwidth, e.g. one read back from a model file.
    pub fn with_bandwidth(observations: Vec<f64>, h: f64) -> Result<Self, DensityError> {
        if observations.len() < 2 {
            return Err(DensityError::TooFewObservations(observations.len()));
        }
        if let Some(i) = observations.iter().position(|v| !v.is_finite()) {
            return Err(DensityError::NonFinite(i));
        }
        let sigma_hat = sample_std(&observations);
        let h = if sigma_hat == 0.0 { 0.0 } else { h };
        Ok(Self {
            observations,
            h,
            sigma_hat,
        })
    }

    pub fn observations(&self) -> &[f64] {
        &self.observations
    }

    pub fn bandwidth(&self) -> f64 {
        self.h
    }

    pub fn sigma_hat(&self) -> f64 {
        self.sigma_hat
    }

    /// A point mass: every observation is identical.
    pub fn is_degenerate(&self) -> bool {
        self.h == 0.0
    }

    /// Mean of the mixture, equal to the sample mean.
    pub fn mean(&self) -> f64 {
        self.observations.iter().sum::<f64>() / self.observations.len() as f64
    }

    /// Variance of the mixture: population variance of the observations plus `h^2`.
    pub fn variance(&self) -> f64 {
        let mean = self.mean();
        let n = self.observations.len() as f64;
        self.observations
            .iter()
            .map(|v| (v - mean).powi(2))
            .sum::<f64>()
            / n
            + self.h * self.h
    }

    pub fn pdf(&self, xi: f64) -> Result<f64, DensityError> {
        if self.is_degenerate() {
            return Err(DensityError::DegenerateModel(self.observations[0]));
        }
        let h = self.h;
        let sum: f64 = self
            .observations
            .iter()
            .map(|o| {
                let z = (xi - o) / h;
                (-0.5 * z * z).exp()
            })
            .sum();
        Ok(sum * INV_SQRT_2PI / (self.observations.len() as f64 * h))
    }

    /// Smoothed-bootstrap draws using a caller-owned generator.
    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<f64> {
        let n = self.observations.len();
        (0..count)
            .map(|_| {
                let centre = self.observations[rng.random_range(0..n)];
                let z: f64 = rng.sample(StandardNormal);
                centre + self.h * z
            })
            .collect()
    }

    /// `count` draws from a generator seeded with `seed`.
    pub fn sample(&self, seed: u64, count: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, count)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bandwidth_for_unit_sigma() {
        // sample std of {-1, 1} * c is c * sqrt(2); pick c so sigma = 1
        let mut obs = vec![0.0; 28];
        for (i, o) in obs.iter_mut().enumerate() {
            *o = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        let s = sample_std(&obs);
        obs.iter_mut().for_each(|v| *v /= s);
        let h = silverman_bandwidth(&obs, BandwidthRule::SilvermanApprox).unwrap();
        assert!((h - 0.5443).abs() < 5e-5, "{h}");
        assert!((h - 1.06 * 28f64.powf(-0.2)).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_scales() {
        let obs = [0.3, -1.2, 2.2, 0.7, 0.1];
        let h = silverman_bandwidth(&obs, BandwidthRule::SilvermanApprox).unwrap();
        let scaled: Vec<f64> = obs.iter().map(|v| v * 3.5).collect();
        let hs = silverman_bandwidth(&scaled, BandwidthRule::SilvermanApprox).unwrap();
        assert!((hs - 3.5 * h).abs() < 1e-14);
        assert_eq!(
            silverman_bandwidth(&[1.0], BandwidthRule::SilvermanApprox),
            Err(DensityError::TooFewObservations(1))
        );
    }

    #[test]
    fn degenerate_point_mass() {
        let m = KdeModel::fit(vec![0.0, 0.0], BandwidthRule::SilvermanApprox).unwrap();
        assert!(m.is_degenerate());
        assert_eq!(m.pdf(0.0), Err(DensityError::DegenerateModel(0.0)));
        assert!(m.sample(3, 10).iter().all(|&v| v == 0.0));
        assert!(KdeModel::fit(vec![0.0], BandwidthRule::SilvermanApprox).is_err());
    }

    #[test]
    fn pdf_hand_value() {
        let m = KdeModel::with_bandwidth(vec![-1.0, 1.0], 1.0).unwrap();
        let phi1 = (-0.5f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert!((m.pdf(0.0).unwrap() - phi1).abs() < 1e-15);
        assert!((m.pdf(0.0).unwrap() - 0.24197).abs() < 1e-5);
        assert!(m.pdf(1.0 + 10.0 * 1.0 + 1.0).unwrap() <= 1e-20);
    }

    #[test]
    fn seeded_draws_repeat() {
        let m = KdeModel::fit(vec![0.1, 0.5, -0.3, 2.0], BandwidthRule::SilvermanApprox).unwrap();
        assert_eq!(m.sample(42, 100), m.sample(42, 100));
        assert_ne!(m.sample(42, 100), m.sample(43, 100));
    }
}
