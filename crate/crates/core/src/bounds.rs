use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box domain, one `[lower, upper]` interval per design variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::arg("bounds must have at least one dimension"));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::arg(format!(
                    "bounds axis {i}: need finite lower < upper, got [{lo}, {hi}]"
                )));
            }
        }
        Ok(Bounds { lower, upper })
    }

    /// Unit hypercube `[0, 1]^dim`.
    pub fn unit(dim: usize) -> Result<Self> {
        Bounds::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Bounds::new(
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }

    /// Clamp `x` into the box in place.
    pub fn project(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Affine map of `x` into the unit cube.
    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, v)| (v - self.lower[i]) / self.width(i))
            .collect()
    }

    /// Inverse of [`Bounds::to_unit`].
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| self.lower[i] + v * self.width(i))
            .collect()
    }

    /// Euclidean distance after mapping both points into the unit cube.
    pub fn normalized_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .enumerate()
            .map(|(i, (x, y))| {
                let d = (x - y) / self.width(i);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inverted_and_empty() {
        assert!(Bounds::new(vec![], vec![]).is_err());
        assert!(Bounds::new(vec![1.0], vec![1.0]).is_err());
        assert!(Bounds::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(Bounds::new(vec![0.0], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn unit_roundtrip() {
        let b = Bounds::from_pairs(&[(-5.0, 10.0), (0.0, 15.0)]).unwrap();
        let x = [2.5, 7.5];
        assert_eq!(b.to_unit(&x), vec![0.5, 0.5]);
        assert_eq!(b.from_unit(&[0.5, 0.5]), x.to_vec());
        assert!((b.normalized_distance(&[-5.0, 0.0], &[10.0, 15.0]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn project_clamps() {
        let b = Bounds::unit(2).unwrap();
        let mut x = [-0.5, 1.5];
        b.project(&mut x);
        assert_eq!(x, [0.0, 1.0]);
        assert!(b.contains(&x));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn unit_round_trip(lo in -100.0f64..100.0, w in 0.01f64..50.0, t in 0.0f64..=1.0) {
                let b = Bounds::new(vec![lo, -lo], vec![lo + w, -lo + 2.0 * w]).unwrap();
                let x = vec![lo + t * w, -lo + 2.0 * t * w];
                let u = b.to_unit(&x);
                prop_assert!(u.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
                let back = b.from_unit(&u);
                for (a, c) in back.iter().zip(&x) {
                    prop_assert!((a - c).abs() <= 1e-9 * (1.0 + c.abs()));
                }
            }
        }
    }
}
