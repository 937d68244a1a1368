use crate::error::{check_dim, Error, Result};
use crate::tensor::Tensor4;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// Exponential moving average with the unbiased batch variance.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        let m = batch.count as f64;
        let correction = if batch.count > 1 { m / (m - 1.0) } else { 1.0 };
        for c in 0..self.mean.len() {
            self.mean[c] = (1.0 - momentum) * self.mean[c] + momentum * batch.mean[c];
            self.var[c] = (1.0 - momentum) * self.var[c] + momentum * batch.var[c] * correction;
        }
    }
}

/// Per-channel statistics of one training batch (biased variance).
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Debug, Clone)]
pub struct BnCache {
    x_hat: Tensor4,
    inv_std: Vec<f64>,
    mode: Mode,
}

#[derive(Debug, Clone)]
pub struct BnForward {
    pub output: Tensor4,
    pub cache: BnCache,
    /// Present in train mode only.
    pub batch_stats: Option<BatchStats>,
}

/// Per-channel batch normalization. Running statistics are read, never written;
/// callers apply `batch_stats` with [`RunningStats::update`].
pub fn batchnorm2d(
    input: &Tensor4,
    gamma: &[f64],
    beta: &[f64],
    running: &RunningStats,
    mode: Mode,
    eps: f64,
) -> Result<BnForward> {
    let [n, c, h, w] = input.dims();
    check_dim("batchnorm2d", "gamma length", c, gamma.len())?;
    check_dim("batchnorm2d", "beta length", c, beta.len())?;
    check_dim("batchnorm2d", "running stats length", c, running.mean.len())?;
    let plane = h * w;
    let count = n * plane;
    if count == 0 {
        return Err(Error::InvalidArgument("batchnorm2d on an empty batch".into()));
    }
    let data = input.data();
    let (mean, var, batch_stats) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0; c];
            let mut var = vec![0.0; c];
            for ch in 0..c {
                let mut sum = 0.0;
                for b in 0..n {
                    let start = (b * c + ch) * plane;
                    sum += data[start..start + plane].iter().sum::<f64>();
                }
                let mu = sum / count as f64;
                let mut sq = 0.0;
                for b in 0..n {
                    let start = (b * c + ch) * plane;
                    sq += data[start..start + plane]
                        .iter()
                        .map(|x| (x - mu) * (x - mu))
                        .sum::<f64>();
                }
                mean[ch] = mu;
                var[ch] = sq / count as f64;
            }
            let stats = BatchStats {
                mean: mean.clone(),
                var: var.clone(),
                count,
            };
            (mean, var, Some(stats))
        }
        Mode::Eval => (running.mean.clone(), running.var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let mut x_hat = Tensor4::zeros(input.dims());
    let mut output = Tensor4::zeros(input.dims());
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * plane;
            let src = &data[start..start + plane];
            let xh = &mut x_hat.data_mut()[start..start + plane];
            for (d, &x) in xh.iter_mut().zip(src) {
                *d = (x - mean[ch]) * inv_std[ch];
            }
            let out = &mut output.data_mut()[start..start + plane];
            for (o, &x) in out.iter_mut().zip(&x_hat.data()[start..start + plane]) {
                *o = gamma[ch] * x + beta[ch];
            }
        }
    }
    Ok(BnForward {
        output,
        cache: BnCache { x_hat, inv_std, mode },
        batch_stats,
    })
}

#[derive(Debug, Clone)]
pub struct BnGrad {
    pub grad_input: Tensor4,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

pub fn batchnorm2d_backward(cache: &BnCache, gamma: &[f64], grad_out: &Tensor4) -> Result<BnGrad> {
    cache.x_hat.check_same_dims(grad_out, "batchnorm2d_backward")?;
    let [n, c, h, w] = grad_out.dims();
    let plane = h * w;
    let count = (n * plane) as f64;
    let g = grad_out.data();
    let xh = cache.x_hat.data();
    let mut grad_gamma = vec![0.0; c];
    let mut grad_beta = vec![0.0; c];
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * plane;
            for i in start..start + plane {
                grad_beta[ch] += g[i];
                grad_gamma[ch] += g[i] * xh[i];
            }
        }
    }
    let mut grad_input = Tensor4::zeros(grad_out.dims());
    let gi = grad_input.data_mut();
    for b in 0..n {
        for ch in 0..c {
            let start = (b * c + ch) * plane;
            let scale = gamma[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Train => {
                    let mean_g = grad_beta[ch] / count;
                    let mean_gx = grad_gamma[ch] / count;
                    for i in start..start + plane {
                        gi[i] = scale * (g[i] - mean_g - xh[i] * mean_gx);
                    }
                }
                Mode::Eval => {
                    for i in start..start + plane {
                        gi[i] = scale * g[i];
                    }
                }
            }
        }
    }
    Ok(BnGrad {
        grad_input,
        grad_gamma,
        grad_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_values_normalize_to_plus_minus_one() {
        let x = Tensor4::from_vec([1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        let out = batchnorm2d(&x, &[1.0], &[0.0], &RunningStats::new(1), Mode::Train, BN_EPS).unwrap();
        let expect = 1.0 / (1.0 + BN_EPS).sqrt();
        assert!((out.output.data()[0] + expect).abs() < 1e-12);
        assert!((out.output.data()[1] - expect).abs() < 1e-12);
        let stats = out.batch_stats.unwrap();
        assert_eq!(stats.mean, vec![3.0]);
        assert_eq!(stats.var, vec![1.0]);
    }

    #[test]
    fn standardized_input_passes_through() {
        // per channel: values -1, 1 (mean 0, var 1)
        let x = Tensor4::from_vec([2, 2, 1, 1], vec![-1.0, 1.0, 1.0, -1.0]).unwrap();
        let out = batchnorm2d(&x, &[1.0, 1.0], &[0.0, 0.0], &RunningStats::new(2), Mode::Train, BN_EPS).unwrap();
        for (a, b) in out.output.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_gamma_gives_beta() {
        let x = Tensor4::from_vec([2, 2, 2, 1], (0..8).map(|i| i as f64 * 0.7 - 1.0).collect()).unwrap();
        let out = batchnorm2d(
            &x,
            &[0.0, 0.0],
            &[0.25, -3.0],
            &RunningStats::new(2),
            Mode::Train,
            BN_EPS,
        )
        .unwrap();
        for b in 0..2 {
            for h in 0..2 {
                assert_eq!(out.output.at(b, 0, h, 0), 0.25);
                assert_eq!(out.output.at(b, 1, h, 0), -3.0);
            }
        }
    }

    #[test]
    fn running_stats_momentum() {
        let mut rs = RunningStats::new(1);
        let x = Tensor4::from_vec([1, 1, 1, 2], vec![2.0, 4.0]).unwrap();
        let out = batchnorm2d(&x, &[1.0], &[0.0], &rs, Mode::Train, BN_EPS).unwrap();
        rs.update(out.batch_stats.as_ref().unwrap(), BN_MOMENTUM);
        assert!((rs.mean[0] - 0.3).abs() < 1e-15);
        // unbiased variance of {2, 4} is 2
        assert!((rs.var[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn eval_uses_running_stats() {
        let rs = RunningStats {
            mean: vec![1.0],
            var: vec![4.0 - BN_EPS],
        };
        let x = Tensor4::from_vec([1, 1, 1, 2], vec![3.0, 5.0]).unwrap();
        let out = batchnorm2d(&x, &[2.0], &[1.0], &rs, Mode::Eval, BN_EPS).unwrap();
        assert!(out.batch_stats.is_none());
        assert!((out.output.data()[0] - 3.0).abs() < 1e-12);
        assert!((out.output.data()[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_rejected() {
        let x = Tensor4::zeros([0, 1, 2, 2]);
        assert!(batchnorm2d(&x, &[1.0], &[0.0], &RunningStats::new(1), Mode::Train, BN_EPS).is_err());
    }
}
