//! Central finite-difference gradient checking.
//!
//! Relative error for one coordinate is `|a - n| / max(|a|, |n|, floor)`,
//! where `a` is the analytic and `n` the numeric derivative. The floor keeps
//! coordinates whose true derivative is (numerically) zero from turning
//! roundoff into huge relative errors.

use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub step: f64,
    pub floor: f64,
    /// Flat indices to probe; `None` probes every coordinate.
    pub indices: Option<Vec<usize>>,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            indices: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    /// Flat index, analytic and numeric value at the worst coordinate.
    pub worst: Option<(usize, f64, f64)>,
}

impl GradReport {
    pub fn passed(&self, rel_tol: f64) -> bool {
        self.checked > 0 && self.max_rel_err <= rel_tol
    }

    pub fn merge(&mut self, other: &GradReport) {
        self.checked += other.checked;
        self.max_abs_err = self.max_abs_err.max(other.max_abs_err);
        if other.max_rel_err > self.max_rel_err {
            self.max_rel_err = other.max_rel_err;
            self.worst = other.worst;
        }
    }

    pub fn empty() -> Self {
        Self {
            checked: 0,
            max_rel_err: 0.0,
            max_abs_err: 0.0,
            worst: None,
        }
    }
}

/// `(f(x + h e_i) - f(x - h e_i)) / 2h`
pub fn central_difference(f: impl Fn(&Tensor) -> f64, x: &Tensor, index: usize, step: f64) -> f64 {
    let mut probe = x.clone();
    probe.data_mut()[index] = x.data()[index] + step;
    let up = f(&probe);
    probe.data_mut()[index] = x.data()[index] - step;
    let down = f(&probe);
    (up - down) / (2.0 * step)
}

pub fn check_gradient(f: impl Fn(&Tensor) -> f64, x: &Tensor, analytic: &Tensor, opts: GradCheck) -> GradReport {
    assert_eq!(x.shape(), analytic.shape(), "analytic gradient shape");
    let indices: Vec<usize> = opts.indices.clone().unwrap_or_else(|| (0..x.len()).collect());
    let mut report = GradReport::empty();
    for i in indices {
        let n = central_difference(&f, x, i, opts.step);
        let a = analytic.data()[i];
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(opts.floor);
        report.checked += 1;
        report.max_abs_err = report.max_abs_err.max(abs);
        if rel > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(rel);
            report.worst = Some((i, a, n));
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact_to_roundoff() {
        let x = Tensor::new(vec![2], vec![3.0, -4.0]).unwrap();
        let f = |t: &Tensor| t.sum_sq();
        let analytic = x.map(|v| 2.0 * v);
        let r = check_gradient(f, &x, &analytic, GradCheck::default());
        assert_eq!(r.checked, 2);
        assert!(r.passed(1e-8), "{r:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Tensor::new(vec![1], vec![1.5]).unwrap();
        let r = check_gradient(|t| t.data()[0].powi(3), &x, &Tensor::scalar(1.0), GradCheck::default());
        assert!(!r.passed(1e-3));
    }
}
