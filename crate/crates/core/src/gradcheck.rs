//! Finite-difference gradient checking.
//!
//! [`finite_difference`] knows nothing about the tape: it re-evaluates a
//! black-box closure under central perturbations, which makes it a fair
//! oracle for the analytic gradients the tape produces. Comparison uses a
//! relative tolerance with an absolute floor so that true-zero gradients do
//! not fail on finite-difference noise.

use crate::numkit::Matrix;
use crate::scalar::Scalar;

/// Central-difference gradients of `f` with respect to every entry of every
/// input matrix, at step `h`. The closure must be deterministic; it is
/// called `2 * total_entries` times.
pub fn finite_difference<S, F>(inputs: &[Matrix<S>], step: S, mut f: F) -> Vec<Matrix<S>>
where
    S: Scalar,
    F: FnMut(&[Matrix<S>]) -> S,
{
    let mut work: Vec<Matrix<S>> = inputs.to_vec();
    let two = S::lit(2.0);
    let mut out = Vec::with_capacity(inputs.len());
    for which in 0..inputs.len() {
        let (rows, cols) = inputs[which].shape();
        let mut grad = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let orig = work[which][(i, j)];
                work[which][(i, j)] = orig + step;
                let up = f(&work);
                work[which][(i, j)] = orig - step;
                let down = f(&work);
                work[which][(i, j)] = orig;
                grad[(i, j)] = (up - down) / (two * step);
            }
        }
        out.push(grad);
    }
    out
}

/// Worst disagreement between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradReport {
    /// Largest relative error over entries that exceeded the absolute floor.
    pub max_rel_err: f64,
    /// Largest absolute error over all entries.
    pub max_abs_err: f64,
}

/// Compares gradient sets entry by entry. An entry passes if the absolute
/// error is at most `abs_floor`, or the error relative to the larger
/// magnitude is at most `rel_tol`. Returns the worst errors on success and
/// a located description of the first failure otherwise.
pub fn compare_grads<S: Scalar>(
    analytic: &[Matrix<S>],
    numeric: &[Matrix<S>],
    rel_tol: f64,
    abs_floor: f64,
) -> Result<GradReport, String> {
    assert_eq!(analytic.len(), numeric.len(), "gradient set sizes differ");
    let mut report = GradReport {
        max_rel_err: 0.0,
        max_abs_err: 0.0,
    };
    for (which, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.shape(), n.shape(), "gradient shapes differ");
        for i in 0..a.rows() {
            for j in 0..a.cols() {
                let av = a[(i, j)].to_real();
                let nv = n[(i, j)].to_real();
                let abs = (av - nv).abs();
                report.max_abs_err = report.max_abs_err.max(abs);
                if abs <= abs_floor {
                    continue;
                }
                let rel = abs / av.abs().max(nv.abs());
                report.max_rel_err = report.max_rel_err.max(rel);
                if rel > rel_tol {
                    return Err(format!(
                        "input {which} entry ({i}, {j}): analytic {av:e} vs numeric {nv:e} \
                         (rel err {rel:e} > {rel_tol:e})"
                    ));
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_difference_recovers_quadratic_gradient() {
        // f(x) = sum(x^2) has gradient 2x
        let x = Matrix::from_vec(2, 2, vec![0.5, -1.0, 2.0, 0.0]).unwrap();
        let grads = finite_difference(&[x.clone()], 1e-5, |ins| {
            ins[0].data().iter().map(|v| v * v).sum::<f64>()
        });
        let expected = x.map(|v| 2.0 * v);
        compare_grads(&grads, &[expected], 1e-6, 1e-9).unwrap();
    }

    #[test]
    fn compare_grads_reports_first_bad_entry() {
        let a = Matrix::from_vec(1, 2, vec![1.0, 5.0]).unwrap();
        let b = Matrix::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let err = compare_grads(&[a], &[b], 1e-4, 1e-6).unwrap_err();
        assert!(err.contains("(0, 1)"));
    }

    #[test]
    fn absolute_floor_ignores_noise_around_zero() {
        let a = Matrix::from_vec(1, 1, vec![0.0]).unwrap();
        let b = Matrix::from_vec(1, 1, vec![5e-7]).unwrap();
        assert!(compare_grads(&[a], &[b], 1e-4, 1e-6).is_ok());
    }
}
