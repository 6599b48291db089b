//! Histograms on pixel grids and the squared Euclidean ground cost.
//!
//! A [`Histogram`] is a nonnegative `height x width` grid of mass summing to
//! one, stored row-major: bin `(r, c)` lives at index `r * width + c`. All
//! mass arithmetic is `f64`; the normalization tolerance is `1e-9`.

use thiserror::Error;

/// Absolute tolerance on the total mass of a valid histogram.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum HistError {
    #[error("input is identically zero")]
    AllZeroInput,
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("data length {len} does not match {height}x{width}")]
    LengthMismatch {
        len: usize,
        height: usize,
        width: usize,
    },
    #[error("grid {height}x{width} exceeds solver capacity {capacity}")]
    DimensionOverflow {
        height: usize,
        width: usize,
        capacity: usize,
    },
    #[error("no bin exceeds the support threshold {threshold}")]
    EmptySupport { threshold: f64 },
}

/// A probability distribution over the bins of a pixel grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    height: usize,
    width: usize,
    mass: Vec<f64>,
}

impl Histogram {
    /// Normalizes `raw` to unit mass. Fails on negative entries or an
    /// all-zero input.
    pub fn normalize(raw: &[f64], height: usize, width: usize) -> Result<Self, HistError> {
        if height == 0 || width == 0 || raw.len() != height * width {
            return Err(HistError::LengthMismatch {
                len: raw.len(),
                height,
                width,
            });
        }
        for (index, &value) in raw.iter().enumerate() {
            if value < 0.0 || !value.is_finite() {
                return Err(HistError::NegativeEntry { index, value });
            }
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(HistError::AllZeroInput);
        }
        let mass: Vec<f64> = raw.iter().map(|&v| v / total).collect();
        Ok(Self {
            height,
            width,
            mass,
        })
    }

    /// Wraps mass that is already normalized; debug-asserts the invariants.
    pub fn from_normalized(mass: Vec<f64>, height: usize, width: usize) -> Result<Self, HistError> {
        if height == 0 || width == 0 || mass.len() != height * width {
            return Err(HistError::LengthMismatch {
                len: mass.len(),
                height,
                width,
            });
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > MASS_TOL || mass.iter().any(|&v| v < 0.0) {
            return Histogram::normalize(&mass, height, width);
        }
        Ok(Self {
            height,
            width,
            mass,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.mass.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mass.is_empty()
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Row and column of a flattened bin index.
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index / self.width, index % self.width)
    }

    pub fn same_dims(&self, other: &Histogram) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Squared Euclidean distance between pixel coordinates of flattened bins.
#[derive(Debug, Clone, Copy)]
pub struct GroundCost {
    height: usize,
    width: usize,
}

/// Largest support size per side accepted by the exact solver.
pub const SOLVER_CAPACITY: usize = 1024;

impl GroundCost {
    pub fn new(height: usize, width: usize) -> Result<Self, HistError> {
        if height == 0 || width == 0 {
            return Err(HistError::LengthMismatch {
                len: 0,
                height,
                width,
            });
        }
        if height * width > SOLVER_CAPACITY {
            return Err(HistError::DimensionOverflow {
                height,
                width,
                capacity: SOLVER_CAPACITY,
            });
        }
        Ok(Self { height, width })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(r - r')^2 + (c - c')^2` for flattened bin indices `i`, `j`.
    #[inline]
    pub fn cost(&self, i: usize, j: usize) -> f64 {
        let (ri, ci) = (i / self.width, i % self.width);
        let (rj, cj) = (j / self.width, j % self.width);
        let dr = ri as f64 - rj as f64;
        let dc = ci as f64 - cj as f64;
        dr * dr + dc * dc
    }

    /// Median of the strictly positive cost entries, used to scale the
    /// entropic regularization.
    pub fn median_positive_cost(&self) -> f64 {
        let n = self.height * self.width;
        let mut costs = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                costs.push(self.cost(i, j));
            }
        }
        if costs.is_empty() {
            return 1.0;
        }
        costs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        costs[costs.len() / 2]
    }
}

/// Outcome of restricting a histogram to its significant bins.
#[derive(Debug, Clone)]
pub struct Support {
    /// `(bin index, renormalized mass)` for every kept bin.
    pub bins: Vec<(usize, f64)>,
    /// Total mass removed by the threshold, before renormalization.
    pub dropped_mass: f64,
}

/// Bins with mass strictly above `threshold`, renormalized to sum to one.
pub fn support(h: &Histogram, threshold: f64) -> Result<Support, HistError> {
    assert!((0.0..1.0).contains(&threshold), "threshold must be in [0,1)");
    let kept: Vec<(usize, f64)> = h
        .mass()
        .iter()
        .enumerate()
        .filter(|&(_, &m)| m > threshold)
        .map(|(i, &m)| (i, m))
        .collect();
    if kept.is_empty() {
        return Err(HistError::EmptySupport { threshold });
    }
    let kept_total: f64 = kept.iter().map(|&(_, m)| m).sum();
    let dropped_mass = 1.0 - kept_total;
    let bins = kept
        .into_iter()
        .map(|(i, m)| (i, m / kept_total))
        .collect();
    Ok(Support { bins, dropped_mass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_single_bin() {
        let h = Histogram::normalize(&[4.0, 0.0, 0.0, 0.0], 2, 2).unwrap();
        assert_eq!(h.mass(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn normalize_uniform() {
        let h = Histogram::normalize(&[1.0, 1.0, 1.0, 1.0], 2, 2).unwrap();
        assert_eq!(h.mass(), &[0.25; 4]);
    }

    #[test]
    fn normalize_all_zero_is_an_error() {
        assert_eq!(
            Histogram::normalize(&[0.0; 4], 2, 2).unwrap_err(),
            HistError::AllZeroInput
        );
    }

    #[test]
    fn normalize_rejects_negative() {
        let err = Histogram::normalize(&[1.0, -0.5, 0.0, 0.0], 2, 2).unwrap_err();
        assert!(matches!(err, HistError::NegativeEntry { index: 1, .. }));
    }

    #[test]
    fn normalize_idempotent_bitwise() {
        let raw = [0.3, 1.7, 0.0, 2.4, 0.9, 0.1];
        let once = Histogram::normalize(&raw, 2, 3).unwrap();
        let twice = Histogram::normalize(once.mass(), 2, 3).unwrap();
        for (a, b) in once.mass().iter().zip(twice.mass()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn ground_cost_examples() {
        let g = GroundCost::new(1, 2).unwrap();
        assert_eq!(g.cost(0, 1), 1.0);
        let g = GroundCost::new(2, 2).unwrap();
        assert_eq!(g.cost(0, 3), 2.0);
        let g = GroundCost::new(5, 5).unwrap();
        // (0,0) -> (3,4)
        assert_eq!(g.cost(0, 3 * 5 + 4), 25.0);
    }

    #[test]
    fn ground_cost_symmetry_zero_diagonal_exhaustive() {
        for (h, w) in [(1, 1), (3, 5), (8, 8), (32, 32)] {
            let g = GroundCost::new(h, w).unwrap();
            let n = h * w;
            for i in 0..n {
                assert_eq!(g.cost(i, i), 0.0);
                for j in 0..n {
                    assert_eq!(g.cost(i, j), g.cost(j, i));
                }
            }
        }
    }

    #[test]
    fn ground_cost_capacity() {
        assert!(matches!(
            GroundCost::new(64, 64),
            Err(HistError::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn support_exact_zeros_only() {
        let h = Histogram::normalize(&[0.5, 0.5, 0.0, 0.0], 2, 2).unwrap();
        let s = support(&h, 0.0).unwrap();
        assert_eq!(s.bins, vec![(0, 0.5), (1, 0.5)]);
        assert_eq!(s.dropped_mass, 0.0);
    }

    #[test]
    fn support_threshold_above_everything() {
        let h = Histogram::normalize(&[1.0; 4], 2, 2).unwrap();
        assert!(matches!(
            support(&h, 0.3),
            Err(HistError::EmptySupport { .. })
        ));
    }

    #[test]
    fn support_renormalizes_and_reports_dropped_mass() {
        let h = Histogram::normalize(&[0.999, 0.001, 0.0, 0.0], 2, 2).unwrap();
        let s = support(&h, 0.01).unwrap();
        assert_eq!(s.bins.len(), 1);
        assert_eq!(s.bins[0].0, 0);
        assert!((s.bins[0].1 - 1.0).abs() < 1e-12);
        assert!((s.dropped_mass - 0.001).abs() < 1e-12);
    }

    #[test]
    fn support_zero_threshold_roundtrip() {
        let h = Histogram::normalize(&[0.1, 0.0, 0.4, 0.5, 0.0, 0.0], 2, 3).unwrap();
        let s = support(&h, 0.0).unwrap();
        let mut dense = vec![0.0; 6];
        for (i, m) in s.bins {
            dense[i] = m;
        }
        assert_eq!(dense, h.mass());
    }
}
