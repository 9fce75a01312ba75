//! Central finite differences, the reference for every backward pass.

use crate::tensor::Tensor;

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor, h: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut probe = x.clone();
    probe.clear_grad();
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad).expect("shape copied from input")
}

/// Outcome of comparing an analytic gradient against a numeric one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradComparison {
    /// Largest relative error over coordinates whose reference magnitude is at least `small`.
    pub max_rel: f64,
    /// Largest absolute error over coordinates whose reference magnitude is below `small`.
    pub max_abs_small: f64,
}

impl GradComparison {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel < rel_tol && self.max_abs_small < abs_tol
    }
}

/// Relative error `|a − n| / max(|a|, |n|)` where the reference is large,
/// absolute error where it is below `small`.
pub fn compare_grads(analytic: &[f64], numeric: &[f64], small: f64) -> GradComparison {
    assert_eq!(analytic.len(), numeric.len());
    let mut out = GradComparison {
        max_rel: 0.0,
        max_abs_small: 0.0,
    };
    for (&a, &n) in analytic.iter().zip(numeric) {
        let err = (a - n).abs();
        if n.abs() < small {
            out.max_abs_small = out.max_abs_small.max(err);
        } else {
            out.max_rel = out.max_rel.max(err / a.abs().max(n.abs()));
        }
    }
    out
}
