use crate::error::{Error, Result};
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct PoolForward {
    pub output: Tensor4,
    /// Flat input index chosen for every output element.
    pub argmax: Vec<usize>,
    input_dims: [usize; 4],
}

/// Max pooling without padding. Ties resolve to the first index in row-major window order.
pub fn maxpool2d(input: &Tensor4, k: usize, stride: usize) -> Result<PoolForward> {
    let [n, c, h, w] = input.dims();
    if k == 0 || stride == 0 {
        return Err(Error::InvalidArgument("pool size and stride must be positive".into()));
    }
    if k > h || k > w {
        return Err(Error::InvalidArgument(format!("pool window {k} exceeds input {h}x{w}")));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut output = Tensor4::zeros([n, c, oh, ow]);
    let mut argmax = Vec::with_capacity(n * c * oh * ow);
    let data = input.data();
    let out = output.data_mut();
    let mut o = 0;
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_idx = base + oy * stride * w + ox * stride;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = base + (oy * stride + ky) * w + ox * stride + kx;
                            if data[idx] > best {
                                best = data[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[o] = data[best_idx];
                    argmax.push(best_idx);
                    o += 1;
                }
            }
        }
    }
    Ok(PoolForward {
        output,
        argmax,
        input_dims: input.dims(),
    })
}

pub fn maxpool2d_backward(forward: &PoolForward, grad_out: &Tensor4) -> Result<Tensor4> {
    forward.output.check_same_dims(grad_out, "maxpool2d_backward")?;
    let mut grad = Tensor4::zeros(forward.input_dims);
    let gi = grad.data_mut();
    for (&idx, &g) in forward.argmax.iter().zip(grad_out.data()) {
        gi[idx] += g;
    }
    Ok(grad)
}
