//! Diagnostics for the nearest-neighbour score estimate.
//!
//! With bias term `η_b = (L/P)^{1/n}` and variance term
//! `η_v = sqrt(ln P / L)`, the estimate `Ŝ(x)` is expected to satisfy
//!
//! ```text
//! S(x,y) − ǔ(x,y,η_b) − η_v  <=  Ŝ(x)  <=  S(x,y) + û(x,y,η_b) + η_v
//! ```
//!
//! with high probability when `L >= ln P`, where `û`/`ǔ` are the largest
//! upward/downward score variations within distance `η_b` of `x`. The checks
//! need exact scores and therefore labels: they run on the AP, never on a
//! node.

use alloc::format;
use alloc::vec::Vec;

use crate::filter::{euclidean_distance, knn_estimate, nearest_indices, ScoredEntry};
use crate::{Error, Result};

/// `(L/P)^{1/n}`.
pub fn eta_bias(neighbors: usize, buffer_size: usize, dim: usize) -> Result<f64> {
    if neighbors == 0 || neighbors >= buffer_size || dim == 0 {
        return Err(Error::InvalidConfig(format!(
            "eta_b needs 1 <= L < P and n >= 1 (L={neighbors}, P={buffer_size}, n={dim})"
        )));
    }
    Ok(libm::pow(
        neighbors as f64 / buffer_size as f64,
        1.0 / dim as f64,
    ))
}

/// `sqrt(ln P / L)`.
pub fn eta_variance(neighbors: usize, buffer_size: f64) -> Result<f64> {
    if neighbors == 0 || !(buffer_size >= 2.0) {
        return Err(Error::InvalidConfig(format!(
            "eta_v needs P >= 2 and L >= 1 (L={neighbors}, P={buffer_size})"
        )));
    }
    Ok(libm::sqrt(libm::log(buffer_size) / neighbors as f64))
}

/// Whether `L >= ln P`.
pub fn neighbors_condition(neighbors: usize, buffer_size: usize) -> bool {
    neighbors as f64 >= libm::log(buffer_size as f64)
}

/// Empirical moduli of continuity `(û, ǔ)` of the score field around
/// `(x, s)`: the largest `S(x') − s` and `s − S(x')` over reference points
/// within distance `radius` of `x`, floored at 0 (an empty ball gives 0).
pub fn empirical_moduli(
    reference: &[ScoredEntry],
    x: &[f64],
    score: f64,
    radius: f64,
) -> Result<(f64, f64)> {
    let mut up = 0.0f64;
    let mut down = 0.0f64;
    for e in reference {
        if euclidean_distance(x, &e.sample)? <= radius {
            up = up.max(e.score - score);
            down = down.max(score - e.score);
        }
    }
    Ok((up, down))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusCheck {
    /// Distance to the `L`-th nearest stored sample.
    pub r_l: f64,
    pub bound: f64,
    pub within: bool,
}

/// Compares the `L`-nearest-neighbour radius with `(L/P)^{1/n}`.
pub fn radius_check(
    x: &[f64],
    buffer: &[ScoredEntry],
    neighbors: usize,
    buffer_size: usize,
    dim: usize,
) -> Result<RadiusCheck> {
    let nearest = nearest_indices(x, buffer, neighbors)?;
    let r_l = nearest.last().map_or(0.0, |&(d, _)| d);
    let bound = eta_bias(neighbors, buffer_size, dim)?;
    Ok(RadiusCheck {
        r_l,
        bound,
        within: r_l <= bound,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundReport {
    pub eta_b: f64,
    pub eta_v: f64,
    pub coverage_fraction: f64,
    pub radius_violations: usize,
    pub delta_target: f64,
    pub samples_checked: usize,
    pub neighbors: usize,
    pub buffer_size: usize,
    pub dim: usize,
    pub neighbors_condition: bool,
}

impl BoundReport {
    /// Coverage reached `1 − δ`.
    pub fn meets_target(&self) -> bool {
        self.coverage_fraction >= 1.0 - self.delta_target
    }
}

/// Checks the two-sided bound for every query.
///
/// `queries` holds fresh samples with their exact scores, `buffer` is the
/// node's stored set used by the estimate, and `reference` is the scored
/// set over which the moduli are taken.
pub fn check_bounds(
    queries: &[ScoredEntry],
    buffer: &[ScoredEntry],
    reference: &[ScoredEntry],
    neighbors: usize,
    delta: f64,
) -> Result<BoundReport> {
    let buffer_size = buffer.len();
    if neighbors >= buffer_size {
        return Err(Error::InvalidConfig(format!(
            "neighbours ({neighbors}) must be fewer than stored samples ({buffer_size})"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidConfig(format!("delta {delta} outside (0, 1)")));
    }
    let dim = buffer[0].sample.len();
    let eta_b = eta_bias(neighbors, buffer_size, dim)?;
    let eta_v = eta_variance(neighbors, buffer_size as f64)?;

    let mut covered = 0usize;
    let mut radius_violations = 0usize;
    for q in queries {
        let estimate = knn_estimate(&q.sample, buffer, neighbors)?;
        let (up, down) = empirical_moduli(reference, &q.sample, q.score, eta_b)?;
        if q.score - down - eta_v <= estimate && estimate <= q.score + up + eta_v {
            covered += 1;
        }
        if !radius_check(&q.sample, buffer, neighbors, buffer_size, dim)?.within {
            radius_violations += 1;
        }
    }
    let coverage_fraction = if queries.is_empty() {
        0.0
    } else {
        covered as f64 / queries.len() as f64
    };
    Ok(BoundReport {
        eta_b,
        eta_v,
        coverage_fraction,
        radius_violations,
        delta_target: delta,
        samples_checked: queries.len(),
        neighbors,
        buffer_size,
        dim,
        neighbors_condition: neighbors_condition(neighbors, buffer_size),
    })
}

/// Shifts every score by `offset`; used to check shift invariance.
pub fn shifted(entries: &[ScoredEntry], offset: f64) -> Vec<ScoredEntry> {
    entries
        .iter()
        .map(|e| ScoredEntry::new(e.sample.clone(), e.score + offset))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn pts(v: &[(f64, f64, f64)]) -> Vec<ScoredEntry> {
        v.iter()
            .map(|&(a, b, s)| ScoredEntry::new(vec![a, b], s))
            .collect()
    }

    #[test]
    fn eta_examples() {
        assert!((eta_bias(1, 16, 4).unwrap() - 0.5).abs() < 1e-15);
        assert!(eta_bias(3, 4, 1).unwrap() < 1.0);
        assert!(eta_bias(4, 4, 1).is_err());
        assert!(eta_bias(1, 4, 10_000).unwrap() > 0.999);
        let e2 = core::f64::consts::E * core::f64::consts::E;
        assert!((eta_variance(2, e2).unwrap() - 1.0).abs() < 1e-15);
        let ratio = eta_variance(4, 100.0).unwrap() / eta_variance(8, 100.0).unwrap();
        assert!((ratio - libm::sqrt(2.0)).abs() < 1e-12);
        assert!(neighbors_condition(8, 256));
        assert!(!neighbors_condition(5, 256));
    }

    #[test]
    fn moduli_hand_example() {
        let reference = pts(&[
            (0.0, 0.0, 1.0),
            (0.1, 0.0, 3.0),
            (0.0, 0.2, 0.5),
            (0.5, 0.5, 10.0),
            (0.05, 0.05, 2.0),
        ]);
        // Query at origin with exact score 1.5; ball of radius 0.15 holds
        // points 0, 1 and 4 (distance 0.0707).
        let (up, down) = empirical_moduli(&reference, &[0.0, 0.0], 1.5, 0.15).unwrap();
        assert_eq!(up, 1.5);
        assert_eq!(down, 0.5);
        assert_eq!(empirical_moduli(&reference, &[0.0, 0.0], 1.0, 0.0).unwrap(), (0.0, 0.0));
        assert_eq!(empirical_moduli(&reference, &[9.0, 9.0], 1.0, 0.5).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn constant_field_is_fully_covered() {
        let buffer: Vec<ScoredEntry> = (0..16)
            .map(|i| ScoredEntry::new(vec![i as f64 / 16.0, 0.5], 2.0))
            .collect();
        let queries: Vec<ScoredEntry> = (0..10)
            .map(|i| ScoredEntry::new(vec![0.3, i as f64 / 10.0], 2.0))
            .collect();
        let r = check_bounds(&queries, &buffer, &buffer, 3, 0.05).unwrap();
        assert_eq!(r.coverage_fraction, 1.0);
        assert!(r.meets_target());
        assert!(check_bounds(&queries, &buffer, &buffer, 16, 0.05).is_err());
    }

    #[test]
    fn radius_check_cases() {
        let clustered: Vec<ScoredEntry> =
            (0..8).map(|_| ScoredEntry::new(vec![0.4, 0.4], 1.0)).collect();
        let r = radius_check(&[0.4, 0.4], &clustered, 3, 8, 2).unwrap();
        assert_eq!(r.r_l, 0.0);
        assert!(r.within);
        let spread: Vec<ScoredEntry> = (0..8)
            .map(|i| ScoredEntry::new(vec![(i % 2) as f64, (i / 4) as f64], 1.0))
            .collect();
        let r = radius_check(&[0.0, 0.0], &spread, 7, 8, 2).unwrap();
        assert!(r.r_l <= libm::sqrt(2.0));
    }
}
