use crate::error::{Error, Result};

/// Stack of `out_ch x in_ch` square `k x k` kernel slices, stored `[out][in][row][col]`.
///
/// The same layout is a row-major `out_ch x (in_ch * k * k)` matrix, which is how
/// the convolution consumes it.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelField {
    out_ch: usize,
    in_ch: usize,
    k: usize,
    data: Vec<f64>,
}

impl KernelField {
    pub fn zeros(out_ch: usize, in_ch: usize, k: usize) -> Self {
        Self {
            out_ch,
            in_ch,
            k,
            data: vec![0.0; out_ch * in_ch * k * k],
        }
    }

    pub fn from_vec(out_ch: usize, in_ch: usize, k: usize, data: Vec<f64>) -> Result<Self> {
        let expected = out_ch * in_ch * k * k;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "KernelField::from_vec",
                dimension: "data length",
                expected,
                actual: data.len(),
            });
        }
        if k == 0 {
            return Err(Error::InvalidArgument("kernel size must be at least 1".into()));
        }
        Ok(Self { out_ch, in_ch, k, data })
    }

    /// A single `k x k` grid.
    pub fn single(k: usize, data: Vec<f64>) -> Result<Self> {
        Self::from_vec(1, 1, k, data)
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_ch
    }

    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_ch
    }

    /// Spatial size `k` of every slice.
    #[inline]
    pub fn size(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn slice_len(&self) -> usize {
        self.k * self.k
    }

    pub fn num_slices(&self) -> usize {
        self.out_ch * self.in_ch
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn slices(&self) -> std::slice::ChunksExact<'_, f64> {
        self.data.chunks_exact(self.k * self.k)
    }

    pub fn slice(&self, out: usize, inp: usize) -> &[f64] {
        let len = self.slice_len();
        let start = (out * self.in_ch + inp) * len;
        &self.data[start..start + len]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.out_ch == other.out_ch && self.in_ch == other.in_ch && self.k == other.k
    }

    pub fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        crate::error::check_dim(context, "out channels", self.out_ch, other.out_ch)?;
        crate::error::check_dim(context, "in channels", self.in_ch, other.in_ch)?;
        crate::error::check_dim(context, "kernel size", self.k, other.k)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&x| f(x)).collect(),
            ..*self
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}
