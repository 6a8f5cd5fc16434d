//! Central-difference gradient checking.
//!
//! The error of one scalar is `|analytic - numeric| / max(1, |analytic|, |numeric|)`
//! and a check passes when the maximum over all scalars is within tolerance.

use std::fmt;

pub const DEFAULT_STEP: f64 = 1e-3;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            tolerance: DEFAULT_TOLERANCE,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        Self {
            tolerance,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index of the scalar with the largest error (or the first non-finite one).
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    pub tolerance: f64,
    /// Set when an objective evaluation produced NaN or infinity.
    pub non_finite_at: Option<usize>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.non_finite_at.is_none() && self.max_rel_error <= self.tolerance
    }

    /// Combine two reports over disjoint scalar sets, keeping the worst.
    pub fn merge(self, other: GradCheckReport) -> GradCheckReport {
        let checked = self.checked + other.checked;
        let mut worst = if self.non_finite_at.is_some() {
            self
        } else if other.non_finite_at.is_some() || other.max_rel_error > self.max_rel_error {
            other
        } else {
            self
        };
        worst.checked = checked;
        worst
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(i) = self.non_finite_at {
            return write!(f, "FAIL non-finite objective at scalar {i}");
        }
        write!(
            f,
            "{} max_rel_error={:.3e} (tol {:.0e}) at scalar {} of {} [analytic {:.6e}, numeric {:.6e}]",
            if self.passed() { "PASS" } else { "FAIL" },
            self.max_rel_error,
            self.tolerance,
            self.worst_index,
            self.checked,
            self.analytic,
            self.numeric
        )
    }
}

/// Compare `analytic` with central differences of `objective` around `x`.
pub fn gradcheck(
    mut objective: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    opts: GradCheckOptions,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length must match inputs");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: x.len(),
        tolerance: opts.tolerance,
        non_finite_at: None,
    };
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + opts.step;
        let plus = objective(&probe);
        probe[i] = x[i] - opts.step;
        let minus = objective(&probe);
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * opts.step);
        let a = analytic[i];
        if !numeric.is_finite() || !a.is_finite() {
            report.non_finite_at = Some(i);
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
            return report;
        }
        let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        if err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report
}
