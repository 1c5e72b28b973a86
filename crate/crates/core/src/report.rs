//! Verdict bookkeeping shared by functional and monitor reports.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Pass,
    /// Violation above tolerance but within ten times the discretization estimate.
    Warn,
    Fail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub status: Status,
    /// Largest observed violation (positive means violated).
    pub worst: f64,
    pub tolerance: f64,
    pub discretization: f64,
    /// Time interval (or sample time twice) where `worst` occurred.
    pub interval: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl Verdict {
    /// Classify a violation `worst` against `tol` and a discretization estimate.
    pub fn classify(check: impl Into<String>, worst: f64, tol: f64, discretization: f64) -> Self {
        let status = if !worst.is_finite() {
            Status::Fail
        } else if worst <= tol {
            Status::Pass
        } else if worst <= tol + 10.0 * discretization {
            Status::Warn
        } else {
            Status::Fail
        };
        Self { check: check.into(), status, worst, tolerance: tol, discretization, interval: None, note: String::new() }
    }

    pub fn with_interval(mut self, interval: Option<(f64, f64)>) -> Self {
        self.interval = interval;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Largest decrease `v_i − v_{i+1}` of a series and the interval where it occurs.
pub fn worst_decrease(times: &[f64], values: &[f64]) -> (f64, Option<(f64, f64)>) {
    let mut worst = f64::NEG_INFINITY;
    let mut at = None;
    for k in 1..values.len() {
        let drop = values[k - 1] - values[k];
        if drop > worst || drop.is_nan() {
            worst = drop;
            at = Some((times[k - 1], times[k]));
        }
    }
    (if values.len() < 2 { 0.0 } else { worst }, at)
}

/// Verdict that `values` is non-decreasing in time.
pub fn non_decreasing(check: &str, times: &[f64], values: &[f64], tol: f64, discretization: f64) -> Verdict {
    let (worst, at) = worst_decrease(times, values);
    Verdict::classify(check, worst, tol, discretization).with_interval(at)
}

/// Derivative of the Lagrange interpolant through the (up to) five nearest
/// samples; fourth-order on smooth data, exact for quartics.
pub fn time_derivative(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = values.len();
    if n < 3 {
        return vec![f64::NAN; n];
    }
    let width = n.min(5);
    (0..n)
        .map(|k| {
            let start = k.saturating_sub(width / 2).min(n - width);
            let x = &times[start..start + width];
            let at = times[k];
            (0..width)
                .map(|j| {
                    let denom: f64 = (0..width).filter(|&l| l != j).map(|l| x[j] - x[l]).product();
                    let numer: f64 = (0..width)
                        .filter(|&m| m != j)
                        .map(|m| (0..width).filter(|&l| l != j && l != m).map(|l| at - x[l]).product::<f64>())
                        .sum();
                    values[start + j] * numer / denom
                })
                .sum()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification() {
        assert_eq!(Verdict::classify("x", 1e-9, 1e-8, 0.0).status, Status::Pass);
        assert_eq!(Verdict::classify("x", 2e-8, 1e-8, 1e-8).status, Status::Warn);
        assert_eq!(Verdict::classify("x", 1.0, 1e-8, 1e-8).status, Status::Fail);
        assert_eq!(Verdict::classify("x", f64::NAN, 1e-8, 1e-8).status, Status::Fail);
    }

    #[test]
    fn monotone_series() {
        let t = [0.0, 1.0, 2.0, 3.0];
        assert_eq!(non_decreasing("m", &t, &[0.0, 1.0, 1.0, 2.0], 0.0, 0.0).status, Status::Pass);
        let v = non_decreasing("m", &t, &[0.0, 1.0, 0.5, 2.0], 1e-6, 0.0);
        assert_eq!(v.status, Status::Fail);
        assert_eq!(v.interval, Some((1.0, 2.0)));
    }

    #[test]
    fn quartic_derivatives_are_exact() {
        let t = [0.0, 0.1, 0.25, 0.3, 0.5, 0.55, 0.7];
        let v: Vec<f64> = t.iter().map(|&x: &f64| x.powi(4) + 3.0 * x * x - x + 2.0).collect();
        for (d, x) in time_derivative(&t, &v).iter().zip(t) {
            assert!((d - (4.0 * x.powi(3) + 6.0 * x - 1.0)).abs() < 1e-11);
        }
        let q: Vec<f64> = t[..3].iter().map(|x| 2.0 * x * x).collect();
        assert!((time_derivative(&t[..3], &q)[2] - 1.0).abs() < 1e-12);
    }
}
