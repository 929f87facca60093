use super::{NnError, Result};

/// Per-feature min-max scaling. `apply` maps the fitted minimum to 0 and the
/// fitted maximum to 1; values outside the fitted range are not clamped.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let first = rows.first().ok_or(NnError::EmptyRows)?.as_ref();
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in rows {
            let row = row.as_ref();
            if row.len() != min.len() {
                return Err(NnError::DimensionMismatch {
                    expected: min.len(),
                    got: row.len(),
                });
            }
            for (k, &v) in row.iter().enumerate() {
                min[k] = min[k].min(v);
                max[k] = max[k].max(v);
            }
        }
        Self::from_bounds(min, max)
    }

    pub fn from_bounds(min: Vec<f64>, max: Vec<f64>) -> Result<Self> {
        if min.len() != max.len() {
            return Err(NnError::DimensionMismatch {
                expected: min.len(),
                got: max.len(),
            });
        }
        for (k, (&lo, &hi)) in min.iter().zip(&max).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(NnError::InvalidNetwork(format!("non-finite scaler bound for feature {k}")));
            }
            if hi <= lo {
                return Err(NnError::DegenerateFeature { feature: k, value: lo });
            }
        }
        Ok(Self { min, max })
    }

    /// Scaler that leaves inputs unchanged (min 0, max 1).
    pub fn identity(dim: usize) -> Self {
        Self {
            min: vec![0.0; dim],
            max: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    pub fn min(&self) -> &[f64] {
        &self.min
    }

    pub fn max(&self) -> &[f64] {
        &self.max
    }

    #[inline]
    pub fn range(&self, k: usize) -> f64 {
        self.max[k] - self.min[k]
    }

    #[inline]
    pub fn apply_one(&self, k: usize, v: f64) -> f64 {
        (v - self.min[k]) / self.range(k)
    }

    #[inline]
    pub fn invert_one(&self, k: usize, v: f64) -> f64 {
        v * self.range(k) + self.min[k]
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(k, &v)| self.apply_one(k, v)).collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter().enumerate().map(|(k, &v)| self.invert_one(k, v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn midpoint_and_out_of_range() {
        let s = MinMaxScaler::from_bounds(vec![40.0], vec![400.0]).unwrap();
        assert_eq!(s.apply(&[220.0]), vec![0.5]);
        // (420 - 40) / 360, no clamping
        assert!((s.apply(&[420.0])[0] - 1.0555555555555556).abs() < 1e-12);
    }

    #[test]
    fn fit_maps_training_rows_into_unit_interval() {
        let rows = vec![vec![1.0, 100.0], vec![3.0, 50.0], vec![2.0, 75.0]];
        let s = MinMaxScaler::fit(&rows).unwrap();
        assert_eq!(s.apply(&rows[0]), vec![0.0, 1.0]);
        assert_eq!(s.apply(&rows[1]), vec![1.0, 0.0]);
        for r in &rows {
            assert!(s.apply(r).iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn degenerate_and_empty_rejected() {
        let rows = vec![vec![1.0, 5.0], vec![2.0, 5.0]];
        assert!(matches!(
            MinMaxScaler::fit(&rows),
            Err(NnError::DegenerateFeature { feature: 1, .. })
        ));
        let empty: Vec<Vec<f64>> = vec![];
        assert!(matches!(MinMaxScaler::fit(&empty), Err(NnError::EmptyRows)));
    }

    proptest! {
        #[test]
        fn invert_apply_roundtrip(
            lo in -500.0f64..500.0,
            width in 1e-3f64..1000.0,
            x in -2000.0f64..2000.0,
        ) {
            let s = MinMaxScaler::from_bounds(vec![lo], vec![lo + width]).unwrap();
            let back = s.invert(&s.apply(&[x]))[0];
            prop_assert!((back - x).abs() <= 1e-9 * x.abs().max(1.0));
        }
    }
}
