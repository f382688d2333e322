//! Benchmark filters, rate-matched to the importance filter.

use alloc::vec::Vec;

use rand::Rng;

use crate::{Error, Result};

/// Transmit with probability `rate`.
pub fn uniform_decide<R: Rng + ?Sized>(rng: &mut R, rate: f64) -> Result<bool> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidRate(rate));
    }
    Ok(rng.random::<f64>() < rate)
}

/// Class prior `p(y)` known to the genie.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution {
    probabilities: Vec<f64>,
}

impl ClassDistribution {
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        let total: f64 = probabilities.iter().sum();
        if probabilities.is_empty()
            || probabilities.iter().any(|p| !(*p >= 0.0))
            || (total - 1.0).abs() > 1e-9
        {
            return Err(Error::InvalidConfig(
                "class probabilities must be non-negative and sum to 1".into(),
            ));
        }
        Ok(Self { probabilities })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn class_count(&self) -> usize {
        self.probabilities.len()
    }

    fn probability(&self, label: usize) -> Result<f64> {
        match self.probabilities.get(label) {
            None => Err(Error::LabelOutOfRange {
                label,
                classes: self.probabilities.len(),
            }),
            Some(&p) if p <= 0.0 => Err(Error::ZeroProbabilityClass(label)),
            Some(&p) => Ok(p),
        }
    }

    /// `Σ_y 1/p(y)` over classes with non-zero mass.
    fn inverse_mass(&self) -> f64 {
        self.probabilities
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|p| 1.0 / p)
            .sum()
    }
}

/// Inverse-frequency class weight `(1/p(y)) / Σ_y' 1/p(y')`.
pub fn genie_probability(label: usize, dist: &ClassDistribution) -> Result<f64> {
    let p = dist.probability(label)?;
    Ok((1.0 / p) / dist.inverse_mass())
}

/// Transmit probability of a sample of class `label`: the class weight
/// rescaled so that the expected rate over `dist` is `rate`, capped at 1.
/// Equals `min(1, R/(C·p(y)))`; for balanced classes this is exactly `R`.
pub fn genie_transmit_probability(label: usize, dist: &ClassDistribution, rate: f64) -> Result<f64> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::InvalidRate(rate));
    }
    let q = genie_probability(label, dist)?;
    let expected_weight: f64 = dist
        .probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * (1.0 / p) / dist.inverse_mass())
        .sum();
    Ok((rate * q / expected_weight).min(1.0))
}

pub fn genie_decide<R: Rng + ?Sized>(
    rng: &mut R,
    label: usize,
    dist: &ClassDistribution,
    rate: f64,
) -> Result<bool> {
    let p = genie_transmit_probability(label, dist, rate)?;
    Ok(rng.random::<f64>() < p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use alloc::vec;

    #[test]
    fn uniform_edges() {
        let mut rng = stream(1, 1);
        assert!((0..1000).all(|_| uniform_decide(&mut rng, 1.0).unwrap()));
        assert_eq!(uniform_decide(&mut rng, 0.0), Err(Error::InvalidRate(0.0)));
        assert!(uniform_decide(&mut rng, 1.5).is_err());
    }

    #[test]
    fn genie_weights() {
        let even = ClassDistribution::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(genie_probability(0, &even).unwrap(), 0.5);
        assert!((genie_transmit_probability(1, &even, 0.3).unwrap() - 0.3).abs() < 1e-15);

        let skew = ClassDistribution::new(vec![0.9, 0.1]).unwrap();
        assert!((genie_probability(0, &skew).unwrap() - 0.1).abs() < 1e-12);
        assert!((genie_probability(1, &skew).unwrap() - 0.9).abs() < 1e-12);

        let three = ClassDistribution::new(vec![1.0 / 3.0; 3]).unwrap();
        for c in 0..3 {
            assert!((genie_probability(c, &three).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn genie_errors() {
        let d = ClassDistribution::new(vec![1.0, 0.0]).unwrap();
        assert_eq!(genie_probability(1, &d), Err(Error::ZeroProbabilityClass(1)));
        assert!(genie_probability(2, &d).is_err());
        assert!(ClassDistribution::new(vec![0.5, 0.2]).is_err());
    }

    #[test]
    fn genie_expected_rate_is_target() {
        let d = ClassDistribution::new(vec![0.9, 0.1]).unwrap();
        let r = 0.1;
        let expected: f64 = (0..2)
            .map(|c| d.probabilities()[c] * genie_transmit_probability(c, &d, r).unwrap())
            .sum();
        assert!((expected - r).abs() < 1e-12);
        // Balanced received classes.
        let p0 = 0.9 * genie_transmit_probability(0, &d, r).unwrap();
        let p1 = 0.1 * genie_transmit_probability(1, &d, r).unwrap();
        assert!((p0 - p1).abs() < 1e-12);
    }
}
