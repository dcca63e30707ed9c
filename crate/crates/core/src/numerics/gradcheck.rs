use crate::error::{Error, Result};

use super::matrix::Matrix;

/// Compares an analytic gradient against central differences of `loss_fn`.
///
/// Returns the maximum over coordinates of
/// `|fd - analytic| / (|analytic| + 1e-8)`.
pub fn finite_diff_check<F>(
    mut loss_fn: F,
    analytic: &Matrix<f64>,
    params: &Matrix<f64>,
    eps: f64,
) -> Result<f64>
where
    F: FnMut(&Matrix<f64>) -> f64,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(Error::config(format!(
            "finite-difference step {eps} outside [1e-6, 1e-3]"
        )));
    }
    params.ensure_shape(analytic, "finite_diff_check")?;

    let mut probe = params.clone();
    let mut worst = 0.0f64;
    for k in 0..params.as_slice().len() {
        let x = params.as_slice()[k];
        probe.as_mut_slice()[k] = x + eps;
        let up = loss_fn(&probe);
        probe.as_mut_slice()[k] = x - eps;
        let down = loss_fn(&probe);
        probe.as_mut_slice()[k] = x;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::numeric(format!(
                "loss not finite when perturbing coordinate {k}"
            )));
        }
        let fd = (up - down) / (2.0 * eps);
        let an = analytic.as_slice()[k];
        let rel = (fd - an).abs() / (an.abs() + 1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half_sq_norm(m: &Matrix<f64>) -> f64 {
        0.5 * m.as_slice().iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn exact_on_quadratic() {
        let x = Matrix::from_fn(3, 2, |r, c| 0.3 * r as f64 - 0.7 * c as f64 + 0.1);
        let err = finite_diff_check(half_sq_norm, &x, &x, 1e-5).unwrap();
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn detects_doubled_gradient() {
        let x = Matrix::from_fn(2, 2, |r, c| 1.0 + r as f64 + c as f64);
        let mut wrong = x.clone();
        wrong.scale(2.0);
        let err = finite_diff_check(half_sq_norm, &wrong, &x, 1e-5).unwrap();
        // |x - 2x| / |2x| = 0.5 relative to the doubled value; 1.0 relative to the truth.
        assert!((err - 0.5).abs() < 1e-6, "{err}");
        let err_vs_truth = finite_diff_check(
            |m| 2.0 * half_sq_norm(m),
            &x,
            &x,
            1e-5,
        )
        .unwrap();
        assert!((err_vs_truth - 1.0).abs() < 1e-6, "{err_vs_truth}");
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let x = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let g = Matrix::zeros(1, 1);
        let r = finite_diff_check(|m| 1.0 / m.get(0, 0).max(0.0), &g, &x, 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn rejects_out_of_range_step() {
        let x = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        assert!(finite_diff_check(half_sq_norm, &x, &x, 0.1).is_err());
    }
}
