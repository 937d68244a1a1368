use super::gemm::gemm;
use super::LayerGrad;
use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelField;
use crate::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub stride: usize,
    pub padding: usize,
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self { stride, padding }
    }

    /// Stride 1 with `k / 2` padding.
    pub fn same(k: usize) -> Self {
        Self {
            stride: 1,
            padding: k / 2,
        }
    }

    pub fn output_size(&self, input: usize, k: usize) -> Result<usize> {
        if self.stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let padded = input + 2 * self.padding;
        if k > padded {
            return Err(Error::InvalidArgument(format!(
                "kernel size {k} exceeds padded input size {padded}"
            )));
        }
        Ok((padded - k) / self.stride + 1)
    }
}

struct Plan {
    n: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    oh: usize,
    ow: usize,
    geom: ConvGeometry,
}

impl Plan {
    fn new(input: &Tensor4, kernels: &KernelField, geom: ConvGeometry) -> Result<Self> {
        let [n, c_in, h, w] = input.dims();
        check_dim("conv2d", "input channels", kernels.in_channels(), c_in)?;
        let k = kernels.size();
        let oh = geom.output_size(h, k)?;
        let ow = geom.output_size(w, k)?;
        Ok(Self {
            n,
            c_in,
            h,
            w,
            c_out: kernels.out_channels(),
            k,
            oh,
            ow,
            geom,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn spatial(&self) -> usize {
        self.oh * self.ow
    }

    /// Output columns `ox` whose input column `ox * stride + kx - padding` lies inside the image.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let (s, p) = (self.geom.stride, self.geom.padding);
        let lo = p.saturating_sub(kx).div_ceil(s);
        let hi = (self.w + p).saturating_sub(kx).div_ceil(s).min(self.ow);
        (lo.min(hi), hi)
    }

    /// Unfold one batch item into a `(c_in*k*k) x (oh*ow)` matrix.
    fn im2col(&self, item: &[f64], cols: &mut [f64]) {
        let (k, s, p) = (self.k, self.geom.stride, self.geom.padding);
        let spatial = self.spatial();
        for ci in 0..self.c_in {
            let plane = &item[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx);
                    let row = (ci * k + ky) * k + kx;
                    let dst = &mut cols[row * spatial..(row + 1) * spatial];
                    for oy in 0..self.oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let dst_row = &mut dst[oy * self.ow..(oy + 1) * self.ow];
                        if iy < 0 || iy >= self.h as isize {
                            dst_row.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        dst_row[..lo].fill(0.0);
                        dst_row[hi..].fill(0.0);
                        let start = lo * s + kx - p;
                        if s == 1 {
                            dst_row[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                        } else {
                            for (j, d) in dst_row[lo..hi].iter_mut().enumerate() {
                                *d = src[start + j * s];
                            }
                        }
                    }
                }
            }
        }
    }

    /// Scatter-add a column matrix back onto an input-shaped item.
    fn col2im(&self, cols: &[f64], item: &mut [f64]) {
        let (k, s, p) = (self.k, self.geom.stride, self.geom.padding);
        let spatial = self.spatial();
        for ci in 0..self.c_in {
            let plane = &mut item[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx);
                    let row = (ci * k + ky) * k + kx;
                    let src = &cols[row * spatial..(row + 1) * spatial];
                    for oy in 0..self.oh {
                        let iy = (oy * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        let src_row = &src[oy * self.ow + lo..oy * self.ow + hi];
                        let start = lo * s + kx - p;
                        if s == 1 {
                            for (d, v) in dst[start..start + hi - lo].iter_mut().zip(src_row) {
                                *d += v;
                            }
                        } else {
                            for (j, v) in src_row.iter().enumerate() {
                                dst[start + j * s] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2D cross-correlation with zero padding.
pub fn conv2d(input: &Tensor4, kernels: &KernelField, bias: Option<&[f64]>, geom: ConvGeometry) -> Result<Tensor4> {
    let plan = Plan::new(input, kernels, geom)?;
    if let Some(b) = bias {
        check_dim("conv2d", "bias length", plan.c_out, b.len())?;
    }
    let spatial = plan.spatial();
    let mut out = Tensor4::zeros([plan.n, plan.c_out, plan.oh, plan.ow]);
    let mut cols = vec![0.0; plan.patch_len() * spatial];
    let out_len = plan.c_out * spatial;
    for b in 0..plan.n {
        plan.im2col(input.item(b), &mut cols);
        let dst = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
        gemm(
            plan.c_out,
            plan.patch_len(),
            spatial,
            kernels.data(),
            false,
            &cols,
            false,
            0.0,
            dst,
        );
        if let Some(bias) = bias {
            for (co, chunk) in dst.chunks_exact_mut(spatial).enumerate() {
                for v in chunk {
                    *v += bias[co];
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct ConvGrad {
    pub grad_input: Tensor4,
    pub grad_kernels: KernelField,
    pub grad_bias: Option<Vec<f64>>,
}

impl ConvGrad {
    /// Flatten parameter gradients as kernels followed by bias.
    pub fn into_layer_grad(self) -> LayerGrad {
        let mut grad_params = self.grad_kernels.into_vec();
        if let Some(b) = self.grad_bias {
            grad_params.extend(b);
        }
        LayerGrad {
            grad_input: self.grad_input,
            grad_params,
        }
    }
}

pub fn conv2d_backward(
    input: &Tensor4,
    kernels: &KernelField,
    has_bias: bool,
    geom: ConvGeometry,
    grad_out: &Tensor4,
) -> Result<ConvGrad> {
    let plan = Plan::new(input, kernels, geom)?;
    let expected = [plan.n, plan.c_out, plan.oh, plan.ow];
    grad_out.check_same_dims(&Tensor4::zeros(expected), "conv2d_backward")?;
    let spatial = plan.spatial();
    let out_len = plan.c_out * spatial;
    let (grad_input, grad_k) = conv2d_backward_im2col(&plan, input, kernels, grad_out);
    let grad_bias = has_bias.then(|| {
        let mut gb = vec![0.0; plan.c_out];
        for b in 0..plan.n {
            let g = &grad_out.data()[b * out_len..(b + 1) * out_len];
            for (co, chunk) in g.chunks_exact(spatial).enumerate() {
                gb[co] += chunk.iter().sum::<f64>();
            }
        }
        gb
    });
    Ok(ConvGrad {
        grad_input,
        grad_kernels: KernelField::from_vec(plan.c_out, plan.c_in, plan.k, grad_k)?,
        grad_bias,
    })
}

fn conv2d_backward_im2col(
    plan: &Plan,
    input: &Tensor4,
    kernels: &KernelField,
    grad_out: &Tensor4,
) -> (Tensor4, Vec<f64>) {
    let spatial = plan.spatial();
    let patch = plan.patch_len();
    let mut cols = vec![0.0; patch * spatial];
    let mut grad_cols = vec![0.0; patch * spatial];
    let mut grad_k = vec![0.0; plan.c_out * patch];
    let mut grad_input = Tensor4::zeros(input.dims());
    let item_len = input.item_len();
    let out_len = plan.c_out * spatial;
    for b in 0..plan.n {
        let g = &grad_out.data()[b * out_len..(b + 1) * out_len];
        plan.im2col(input.item(b), &mut cols);
        // dK += g * cols^T
        gemm(plan.c_out, spatial, patch, g, false, &cols, true, 1.0, &mut grad_k);
        // dcols = K^T * g
        gemm(
            patch,
            plan.c_out,
            spatial,
            kernels.data(),
            true,
            g,
            false,
            0.0,
            &mut grad_cols,
        );
        plan.col2im(&grad_cols, &mut grad_input.data_mut()[b * item_len..(b + 1) * item_len]);
    }
    (grad_input, grad_k)
}

/// Multiply-accumulate count of one forward pass.
pub fn conv2d_macs(dims: [usize; 4], c_out: usize, k: usize, geom: ConvGeometry) -> Result<u64> {
    let oh = geom.output_size(dims[2], k)?;
    let ow = geom.output_size(dims[3], k)?;
    Ok((dims[0] * c_out * oh * ow * dims[1] * k * k) as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(input: &Tensor4, kf: &KernelField, bias: Option<&[f64]>, g: ConvGeometry) -> Tensor4 {
        let [n, c_in, h, w] = input.dims();
        let k = kf.size();
        let oh = g.output_size(h, k).unwrap();
        let ow = g.output_size(w, k).unwrap();
        let mut out = Tensor4::zeros([n, kf.out_channels(), oh, ow]);
        for b in 0..n {
            for co in 0..kf.out_channels() {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.map_or(0.0, |bb| bb[co]);
                        for ci in 0..c_in {
                            let s = kf.slice(co, ci);
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                                    let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        acc += s[ky * k + kx] * input.at(b, ci, iy as usize, ix as usize);
                                    }
                                }
                            }
                        }
                        let idx = out.index(b, co, oy, ox);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(len: usize, scale: f64) -> Vec<f64> {
        (0..len)
            .map(|i| ((i * 7919 % 97) as f64 / 97.0 - 0.5) * scale)
            .collect()
    }

    #[test]
    fn delta_kernel_is_identity() {
        let input = Tensor4::from_vec([1, 1, 3, 3], seq(9, 2.0)).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let kf = KernelField::single(3, k).unwrap();
        let out = conv2d(&input, &kf, None, ConvGeometry::same(3)).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn all_ones_two_by_two() {
        let input = Tensor4::from_vec([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let kf = KernelField::single(2, vec![1.0; 4]).unwrap();
        let out = conv2d(&input, &kf, None, ConvGeometry::new(1, 0)).unwrap();
        assert_eq!(out.dims(), [1, 1, 1, 1]);
        assert_eq!(out.data(), &[10.0]);
    }

    #[test]
    fn zero_kernel_zero_bias() {
        let input = Tensor4::from_vec([2, 3, 5, 5], seq(150, 3.0)).unwrap();
        let kf = KernelField::zeros(4, 3, 3);
        let out = conv2d(&input, &kf, Some(&[0.0; 4]), ConvGeometry::same(3)).unwrap();
        assert!(out.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn matches_naive_loop_with_stride_and_bias() {
        let input = Tensor4::from_vec([2, 3, 7, 6], seq(252, 2.0)).unwrap();
        let kf = KernelField::from_vec(4, 3, 3, seq(108, 1.0)).unwrap();
        let bias = [0.1, -0.2, 0.3, 0.0];
        for g in [
            ConvGeometry::new(1, 1),
            ConvGeometry::new(2, 1),
            ConvGeometry::new(2, 0),
        ] {
            let fast = conv2d(&input, &kf, Some(&bias), g).unwrap();
            let slow = naive(&input, &kf, Some(&bias), g);
            assert_eq!(fast.dims(), slow.dims());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stride_one_matches_naive_for_all_paddings() {
        let input = Tensor4::from_vec([2, 3, 7, 6], seq(252, 2.0)).unwrap();
        for (k, p) in [(1, 0), (3, 0), (3, 1), (3, 2), (5, 2), (2, 1)] {
            let kf = KernelField::from_vec(4, 3, k, seq(12 * k * k, 1.0)).unwrap();
            let g = ConvGeometry::new(1, p);
            let fast = conv2d(&input, &kf, None, g).unwrap();
            let slow = naive(&input, &kf, None, g);
            assert_eq!(fast.dims(), slow.dims());
            for (a, b) in fast.data().iter().zip(slow.data()) {
                assert!((a - b).abs() < 1e-12, "k {k} p {p}");
            }
        }
    }

    #[test]
    fn output_dims_formula() {
        let input = Tensor4::zeros([1, 16, 32, 32]);
        let kf = KernelField::zeros(32, 16, 3);
        let out = conv2d(&input, &kf, None, ConvGeometry::new(2, 1)).unwrap();
        assert_eq!(out.dims(), [1, 32, 16, 16]);
    }

    #[test]
    fn channel_mismatch_is_named() {
        let input = Tensor4::zeros([1, 2, 4, 4]);
        let kf = KernelField::zeros(1, 3, 3);
        let err = conv2d(&input, &kf, None, ConvGeometry::same(3)).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
    }

    #[test]
    fn oversized_kernel_rejected() {
        let input = Tensor4::zeros([1, 1, 2, 2]);
        let kf = KernelField::zeros(1, 1, 5);
        assert!(conv2d(&input, &kf, None, ConvGeometry::new(1, 0)).is_err());
    }
}
