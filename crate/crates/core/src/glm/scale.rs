use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Affine map of an outcome range onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitScale {
    lo: f64,
    hi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

impl UnitScale {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Scale { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Observed range of `y`; a constant outcome maps onto `[y, y + 1]`.
    pub fn from_range(y: impl IntoIterator<Item = f64>) -> Result<Self> {
        let (lo, hi) = y
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| {
                (l.min(v), h.max(v))
            });
        if !lo.is_finite() {
            return Err(Error::Domain("cannot scale an empty outcome".into()));
        }
        if lo == hi {
            Self::new(lo, lo + 1.0)
        } else {
            Self::new(lo, hi)
        }
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    #[inline]
    pub fn forward(&self, y: f64) -> f64 {
        (y - self.lo) / (self.hi - self.lo)
    }

    #[inline]
    pub fn inverse(&self, u: f64) -> f64 {
        self.lo + u * (self.hi - self.lo)
    }

    pub fn transform(&self, y: &[f64], direction: Direction) -> Result<Vec<f64>> {
        match direction {
            Direction::Forward => {
                // Small slack for values that round just outside the range.
                let slack = 1e-12 * self.width();
                if let Some(v) = y
                    .iter()
                    .find(|v| **v < self.lo - slack || **v > self.hi + slack)
                {
                    return Err(Error::Domain(format!(
                        "{v} is outside [{}, {}]",
                        self.lo, self.hi
                    )));
                }
                Ok(y.iter().map(|&v| self.forward(v).clamp(0.0, 1.0)).collect())
            }
            Direction::Inverse => {
                if let Some(v) = y.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::Domain(format!("{v} is outside [0, 1]")));
                }
                Ok(y.iter().map(|&v| self.inverse(v)).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn endpoints_and_identity() {
        let s = UnitScale::new(2.0, 7.0).unwrap();
        assert_eq!(s.forward(2.0), 0.0);
        assert_eq!(s.forward(7.0), 1.0);
        let b = UnitScale::new(0.0, 1.0).unwrap();
        let y = [0.0, 1.0, 0.25];
        assert_eq!(b.transform(&y, Direction::Forward).unwrap(), y);
        assert!(UnitScale::new(1.0, 1.0).is_err());
        assert!(UnitScale::new(2.0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn round_trip(lo in -1e3f64..1e3, width in 1e-3f64..1e3, u in prop::collection::vec(0.0f64..=1.0, 1..20)) {
            let s = UnitScale::new(lo, lo + width).unwrap();
            let y: Vec<f64> = u.iter().map(|v| s.inverse(*v)).collect();
            let back = s.transform(&s.transform(&y, Direction::Forward).unwrap(), Direction::Inverse).unwrap();
            for (a, b) in y.iter().zip(&back) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }
    }
}
