use serde::{Deserialize, Serialize};

use crate::error::{Result, RhError};

/// Coupling function `α(t)`.
///
/// Piecewise-linear schedules are held constant outside their knot range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CouplingSchedule {
    Constant { alpha: f64 },
    PiecewiseLinear { times: Vec<f64>, values: Vec<f64> },
}

impl CouplingSchedule {
    pub fn constant(alpha: f64) -> Result<Self> {
        let s = Self::Constant { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn piecewise_linear(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let s = Self::PiecewiseLinear { times, values };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Constant { alpha } => {
                if !(alpha.is_finite() && *alpha >= 0.0) {
                    return Err(RhError::InvalidArgument(format!("α = {alpha} must be finite and ≥ 0")));
                }
            }
            Self::PiecewiseLinear { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(RhError::InvalidArgument(format!(
                        "{} knot times but {} values",
                        times.len(),
                        values.len()
                    )));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(RhError::InvalidArgument("knot times must be strictly increasing".into()));
                }
                if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(RhError::InvalidArgument(format!("α = {v} must be finite and ≥ 0")));
                }
            }
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Self::Constant { alpha } => *alpha,
            Self::PiecewiseLinear { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 {
                    values[0]
                } else if k == times.len() {
                    values[k - 1]
                } else {
                    let w = (t - times[k - 1]) / (times[k] - times[k - 1]);
                    values[k - 1] + w * (values[k] - values[k - 1])
                }
            }
        }
    }

    /// Right derivative `α̇(t)`.
    pub fn derivative(&self, t: f64) -> f64 {
        match self {
            Self::Constant { .. } => 0.0,
            Self::PiecewiseLinear { times, values } => {
                let k = times.partition_point(|&s| s <= t);
                if k == 0 || k == times.len() {
                    0.0
                } else {
                    (values[k] - values[k - 1]) / (times[k] - times[k - 1])
                }
            }
        }
    }

    pub fn is_non_increasing(&self) -> bool {
        match self {
            Self::Constant { .. } => true,
            Self::PiecewiseLinear { values, .. } => values.windows(2).all(|w| w[1] <= w[0]),
        }
    }

    /// `min α` over `[t0, t1]`.
    pub fn min_on(&self, t0: f64, t1: f64) -> f64 {
        let mut m = self.value(t0).min(self.value(t1));
        if let Self::PiecewiseLinear { times, values } = self {
            for (t, v) in times.iter().zip(values) {
                if *t > t0 && *t < t1 {
                    m = m.min(*v);
                }
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn piecewise_linear_evaluation() {
        let s = CouplingSchedule::piecewise_linear(vec![0.0, 1.0, 3.0], vec![2.0, 1.0, 1.0]).unwrap();
        assert_eq!(s.value(-1.0), 2.0);
        assert_eq!(s.value(0.5), 1.5);
        assert_eq!(s.value(2.0), 1.0);
        assert_eq!(s.value(10.0), 1.0);
        assert_eq!(s.derivative(0.5), -1.0);
        assert_eq!(s.derivative(2.0), 0.0);
        assert!(s.is_non_increasing());
        assert_eq!(s.min_on(0.0, 0.5), 1.5);
    }

    #[test]
    fn validation() {
        assert!(CouplingSchedule::constant(-0.1).is_err());
        assert!(CouplingSchedule::piecewise_linear(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(CouplingSchedule::piecewise_linear(vec![0.0], vec![]).is_err());
        let up = CouplingSchedule::piecewise_linear(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert!(!up.is_non_increasing());
    }

    #[test]
    fn serde_shape() {
        let s: CouplingSchedule = serde_json::from_str(r#"{"kind":"constant","alpha":0.5}"#).unwrap();
        assert_eq!(s, CouplingSchedule::Constant { alpha: 0.5 });
        assert!(serde_json::from_str::<CouplingSchedule>(r#"{"kind":"constant","alpha":0.5,"x":1}"#).is_err());
    }
}
