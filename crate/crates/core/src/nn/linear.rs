use super::gemm::gemm;
use crate::error::{check_dim, Error, Result};
use crate::tensor::Tensor4;

/// Affine map on flattened features. `input` is read as `(n, c*h*w)`, `weight` is
/// `out x in` row-major; the output has dims `(n, out, 1, 1)`.
pub fn linear(input: &Tensor4, weight: &[f64], bias: &[f64], out_features: usize) -> Result<Tensor4> {
    let n = input.batch();
    let in_features = input.item_len();
    check_dim("linear", "weight length", out_features * in_features, weight.len())?;
    check_dim("linear", "bias length", out_features, bias.len())?;
    let mut out = Tensor4::zeros([n, out_features, 1, 1]);
    if n == 0 {
        return Ok(out);
    }
    // out = x * W^T
    gemm(
        n,
        in_features,
        out_features,
        input.data(),
        false,
        weight,
        true,
        0.0,
        out.data_mut(),
    );
    for row in out.data_mut().chunks_exact_mut(out_features) {
        for (o, b) in row.iter_mut().zip(bias) {
            *o += b;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LinearGrad {
    pub grad_input: Tensor4,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

pub fn linear_backward(input: &Tensor4, weight: &[f64], grad_out: &Tensor4) -> Result<LinearGrad> {
    let n = input.batch();
    let in_features = input.item_len();
    let out_features = grad_out.item_len();
    if grad_out.batch() != n {
        return Err(Error::ShapeMismatch {
            context: "linear_backward",
            dimension: "batch",
            expected: n,
            actual: grad_out.batch(),
        });
    }
    check_dim(
        "linear_backward",
        "weight length",
        out_features * in_features,
        weight.len(),
    )?;
    let mut grad_input = Tensor4::zeros(input.dims());
    let mut grad_weight = vec![0.0; out_features * in_features];
    let mut grad_bias = vec![0.0; out_features];
    if n > 0 {
        gemm(
            n,
            out_features,
            in_features,
            grad_out.data(),
            false,
            weight,
            false,
            0.0,
            grad_input.data_mut(),
        );
        gemm(
            out_features,
            n,
            in_features,
            grad_out.data(),
            true,
            input.data(),
            false,
            0.0,
            &mut grad_weight,
        );
        for row in grad_out.data().chunks_exact(out_features) {
            for (gb, g) in grad_bias.iter_mut().zip(row) {
                *gb += g;
            }
        }
    }
    Ok(LinearGrad {
        grad_input,
        grad_weight,
        grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight() {
        let x = Tensor4::from_vec([2, 3, 1, 1], vec![1.0, -2.0, 3.5, 0.0, 4.0, -1.0]).unwrap();
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let y = linear(&x, &w, &[0.0; 3], 3).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn ones_row_sums() {
        let x = Tensor4::from_vec([1, 3, 1, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let y = linear(&x, &[1.0; 3], &[0.0], 1).unwrap();
        assert_eq!(y.data(), &[6.0]);
    }

    #[test]
    fn dimension_mismatch() {
        let x = Tensor4::zeros([1, 4, 1, 1]);
        assert!(linear(&x, &[1.0; 3], &[0.0], 1).is_err());
    }
}
