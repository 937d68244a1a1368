use crate::error::{Error, Result};

pub const DEFAULT_FD_EPS: f64 = 1e-5;

/// Central finite differences `(L(x + eps e_i) - L(x - eps e_i)) / (2 eps)` for every coordinate.
pub fn finite_difference_gradient<F>(mut loss: F, params: &[f64], eps: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let mut x = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let plus = loss(&x)?;
        x[i] = orig - eps;
        let minus = loss(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i} perturbed by {eps}")));
        }
        grad.push((plus - minus) / (2.0 * eps));
    }
    Ok(grad)
}

/// Central differences that refine the step where the loss is not smooth at scale `eps`.
///
/// For each coordinate the central difference at `h` is compared with the one at `h / 10`,
/// starting from `h = eps`. When the two disagree by more than `rtol * |c| + atol` (a ReLU
/// or max-pool kink lies within `h` of the point) the step shrinks, at most `refinements`
/// times. The estimate at the coarsest agreeing step is returned; if none agree, the finest.
pub fn adaptive_finite_difference_gradient<F>(
    mut loss: F,
    params: &[f64],
    eps: f64,
    refinements: usize,
    rtol: f64,
    atol: f64,
) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    let mut x = params.to_vec();
    let mut central = |x: &mut Vec<f64>, i: usize, h: f64| -> Result<f64> {
        let orig = x[i];
        x[i] = orig + h;
        let plus = loss(x)?;
        x[i] = orig - h;
        let minus = loss(x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i} perturbed by {h}")));
        }
        Ok((plus - minus) / (2.0 * h))
    };
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut h = eps;
        let mut coarse = central(&mut x, i, h)?;
        for _ in 0..refinements {
            let fine = central(&mut x, i, h / 10.0)?;
            if (coarse - fine).abs() <= rtol * coarse.abs() + atol {
                break;
            }
            h /= 10.0;
            coarse = fine;
        }
        grad.push(coarse);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_squared_norm() {
        let g =
            finite_difference_gradient(|x| Ok(0.5 * (x[0] * x[0] + x[1] * x[1])), &[1.0, 2.0], DEFAULT_FD_EPS).unwrap();
        assert!((g[0] - 1.0).abs() < 1e-10 && (g[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn constant_loss() {
        let g = finite_difference_gradient(|_| Ok(3.0), &[1.0, -4.0, 9.0], DEFAULT_FD_EPS).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn product() {
        let g = finite_difference_gradient(|x| Ok(x[0] * x[1]), &[3.0, 5.0], DEFAULT_FD_EPS).unwrap();
        assert!((g[0] - 5.0).abs() < 1e-9 && (g[1] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn adaptive_steps_past_a_kink() {
        // |x - 3e-6| has a kink inside the coarse stencil around 0.
        let f = |x: &[f64]| Ok((x[0] - 3e-6).abs() + x[1] * x[1]);
        let plain = finite_difference_gradient(f, &[0.0, 1.0], 1e-5).unwrap();
        assert!((plain[0] + 1.0).abs() > 0.1);
        let g = adaptive_finite_difference_gradient(f, &[0.0, 1.0], 1e-5, 3, 1e-6, 1e-8).unwrap();
        assert!((g[0] + 1.0).abs() < 1e-9, "{g:?}");
        assert!((g[1] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn non_finite_is_error() {
        let r = finite_difference_gradient(|x| Ok(if x[0] > 0.0 { f64::NAN } else { 0.0 }), &[0.0], 1e-5);
        assert!(matches!(r, Err(Error::NonFinite(_))));
    }
}
