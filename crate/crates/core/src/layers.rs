//! Stateful layers that own named parameters and write gradients into [`Gradients`].

use crate::error::Result;
use crate::kernel::KernelField;
use crate::nn::{
    batchnorm2d, batchnorm2d_backward, conv2d, conv2d_backward, linear, linear_backward, BatchStats, BnCache,
    ConvGeometry, Mode, RunningStats, BN_EPS, BN_MOMENTUM,
};
use crate::params::{Gradients, Param, ParamKind};
use crate::tensor::Tensor4;

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub geometry: ConvGeometry,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        geometry: ConvGeometry,
        with_bias: bool,
        seed: u64,
    ) -> Self {
        let weight = Param::he_normal(
            format!("{name}.weight"),
            vec![c_out, c_in, k, k],
            ParamKind::Weight,
            c_in * k * k,
            seed,
        );
        let bias = with_bias.then(|| Param::filled(format!("{name}.bias"), vec![c_out], ParamKind::Bias, 0.0));
        Self { weight, bias, geometry }
    }

    pub fn kernels(&self) -> KernelField {
        let d = &self.weight.dims;
        KernelField::from_vec(d[0], d[1], d[2], self.weight.value.clone()).expect("weight dims are consistent")
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims[0]
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.dims[2]
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        conv2d(
            input,
            &self.kernels(),
            self.bias.as_ref().map(|b| b.value.as_slice()),
            self.geometry,
        )
    }

    pub fn backward(&self, input: &Tensor4, grad_out: &Tensor4, grads: &mut Gradients) -> Result<Tensor4> {
        let g = conv2d_backward(input, &self.kernels(), self.bias.is_some(), self.geometry, grad_out)?;
        grads.accumulate(&self.weight.name, g.grad_kernels.data());
        if let (Some(b), Some(gb)) = (&self.bias, &g.grad_bias) {
            grads.accumulate(&b.name, gb);
        }
        Ok(g.grad_input)
    }

    pub fn params(&self) -> Vec<&Param> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub name: String,
    pub gamma: Param,
    pub beta: Param,
    pub running: RunningStats,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_owned(),
            gamma: Param::filled(format!("{name}.gamma"), vec![channels], ParamKind::BnAffine, 1.0),
            beta: Param::filled(format!("{name}.beta"), vec![channels], ParamKind::BnAffine, 0.0),
            running: RunningStats::new(channels),
        }
    }

    pub fn forward(&self, input: &Tensor4, mode: Mode) -> Result<(Tensor4, BnCache, Option<BatchStats>)> {
        let out = batchnorm2d(input, &self.gamma.value, &self.beta.value, &self.running, mode, BN_EPS)?;
        Ok((out.output, out.cache, out.batch_stats))
    }

    pub fn backward(&self, cache: &BnCache, grad_out: &Tensor4, grads: &mut Gradients) -> Result<Tensor4> {
        let g = batchnorm2d_backward(cache, &self.gamma.value, grad_out)?;
        grads.accumulate(&self.gamma.name, &g.grad_gamma);
        grads.accumulate(&self.beta.name, &g.grad_beta);
        Ok(g.grad_input)
    }

    pub fn update_running(&mut self, stats: &BatchStats) {
        self.running.update(stats, BN_MOMENTUM);
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, seed: u64) -> Self {
        Self {
            weight: Param::uniform(
                format!("{name}.weight"),
                vec![out_features, in_features],
                ParamKind::Weight,
                1.0 / (in_features as f64).sqrt(),
                seed,
            ),
            bias: Param::filled(format!("{name}.bias"), vec![out_features], ParamKind::Bias, 0.0),
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims[0]
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4> {
        linear(input, &self.weight.value, &self.bias.value, self.out_features())
    }

    pub fn backward(&self, input: &Tensor4, grad_out: &Tensor4, grads: &mut Gradients) -> Result<Tensor4> {
        let g = linear_backward(input, &self.weight.value, grad_out)?;
        grads.accumulate(&self.weight.name, &g.grad_weight);
        grads.accumulate(&self.bias.name, &g.grad_bias);
        Ok(g.grad_input)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
