//! ODE residual blocks: forward Euler on activations, coupled to spectral weight evolution.
//!
//! Step `j` of a block computes `z_{j+1} = relu(z_j + dt * f(z_j; theta_j))` with
//! `dt = 1 / n_z`, where `theta_j` is a snapshot of each convolution's evolved kernels.
//! The backward pass is the exact reverse of the discrete forward (discretize, then
//! differentiate). By default only the block input is kept on the tape and the interior
//! is recomputed during backward.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::kernel::KernelField;
use crate::layers::BatchNorm2d;
use crate::nn::{conv2d, conv2d_backward, conv2d_macs, BatchStats, BnCache, ConvGeometry, Mode};
use crate::params::{Gradients, Param, ParamKind};
use crate::spectral::{rda_trajectory_prefix, Nonlinearity, RdaCoefficients, RdaTrajectory};
use crate::tensor::Tensor4;

/// Initial `[d, vx, vy, rho]` of every evolved convolution.
pub const DEFAULT_RDA_INIT: [f64; 4] = [0.01, 0.0, 0.0, 0.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Configuration {
    /// Activations and weights share the time grid; every snapshot is applied.
    One,
    /// Weights take many substeps; only the first and last snapshots are applied.
    Two,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OdeBlockSchedule {
    pub config: Configuration,
    /// Activation Euler steps.
    pub n_z: usize,
    /// Weight substeps over `[0, 1]`.
    pub n_theta: usize,
    /// Trajectory index feeding each activation step.
    pub applied: Vec<usize>,
}

impl OdeBlockSchedule {
    pub fn config1(n: usize) -> Result<Self> {
        let s = Self {
            config: Configuration::One,
            n_z: n,
            n_theta: n,
            applied: (0..n).collect(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn config2(n_theta: usize) -> Result<Self> {
        let s = Self {
            config: Configuration::Two,
            n_z: 2,
            n_theta,
            applied: vec![0, n_theta],
        };
        s.validate()?;
        Ok(s)
    }

    /// Five shared steps.
    pub fn default_config1() -> Self {
        Self::config1(5).expect("valid")
    }

    /// Two activation steps fed by the endpoints of a ten-substep weight trajectory.
    pub fn default_config2() -> Self {
        Self::config2(10).expect("valid")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_z == 0 || self.n_theta == 0 {
            return Err(Error::InvalidArgument("schedule needs at least one step".into()));
        }
        check_dim(
            "OdeBlockSchedule",
            "applied snapshot count",
            self.n_z,
            self.applied.len(),
        )?;
        let ok = match self.config {
            Configuration::One => self.n_z == self.n_theta && self.applied.iter().copied().eq(0..self.n_z),
            Configuration::Two => self.n_z == 2 && self.applied == [0, self.n_theta],
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent schedule {self:?}")))
        }
    }

    pub fn dt_z(&self) -> f64 {
        1.0 / self.n_z as f64
    }

    /// Largest trajectory index any step needs.
    pub fn last_applied(&self) -> usize {
        self.applied.iter().copied().max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CheckpointMode {
    /// Keep only the block input; recompute the interior during backward.
    #[default]
    Recompute,
    /// Keep every intermediate activation from the forward pass.
    FullStorage,
}

/// One convolution inside `f`: conv, optional per-step batch norm, optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvUnit {
    /// Initial kernels `w0`.
    pub weight: Param,
    pub bias: Option<Param>,
    /// `[d, vx, vy, rho]`; `None` keeps the kernels static.
    pub rda: Option<Param>,
    /// One batch norm per activation step; empty for no normalization.
    pub bn: Vec<BatchNorm2d>,
    pub relu: bool,
}

impl ConvUnit {
    /// He-initialized unit with `steps` batch norms (`0` disables normalization).
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        conv_name: &str,
        bn_name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        with_bias: bool,
        evolve: bool,
        steps: usize,
        relu: bool,
        seed: u64,
    ) -> Self {
        let weight = Param::he_normal(
            format!("{conv_name}.weight"),
            vec![c_out, c_in, k, k],
            ParamKind::Weight,
            c_in * k * k,
            seed,
        );
        let bias = with_bias.then(|| Param::filled(format!("{conv_name}.bias"), vec![c_out], ParamKind::Bias, 0.0));
        let rda = evolve.then(|| {
            Param::new(
                format!("{conv_name}.rda"),
                vec![RdaCoefficients::LEN],
                ParamKind::RdaCoefficients,
                DEFAULT_RDA_INIT.to_vec(),
            )
        });
        let bn = (0..steps)
            .map(|j| BatchNorm2d::new(&step_name(bn_name, j), c_out))
            .collect();
        Self {
            weight,
            bias,
            rda,
            bn,
            relu,
        }
    }

    pub fn w0(&self) -> KernelField {
        let d = &self.weight.dims;
        KernelField::from_vec(d[0], d[1], d[2], self.weight.value.clone()).expect("weight dims are consistent")
    }

    pub fn coefficients(&self) -> Option<RdaCoefficients> {
        self.rda
            .as_ref()
            .map(|p| RdaCoefficients::from_slice(&p.value).expect("four coefficients"))
    }

    fn geometry(&self) -> ConvGeometry {
        ConvGeometry::same(self.weight.dims[2])
    }
}

/// Name of a per-step parameter group: step 0 keeps the plain name so that a one-step
/// block shares names with the discrete residual block.
pub fn step_name(base: &str, step: usize) -> String {
    if step == 0 {
        base.to_owned()
    } else {
        format!("{base}@t{step}")
    }
}

#[derive(Debug, Clone)]
pub struct OdeBlock {
    pub name: String,
    pub schedule: OdeBlockSchedule,
    pub units: Vec<ConvUnit>,
    pub nonlinearity: Nonlinearity,
    pub post_step_relu: bool,
    pub checkpoint: CheckpointMode,
}

/// Weight snapshots of one unit.
#[derive(Debug, Clone)]
enum UnitWeights {
    Static(KernelField),
    Evolving(RdaTrajectory),
}

impl UnitWeights {
    fn snapshot(&self, index: usize) -> &KernelField {
        match self {
            UnitWeights::Static(w) => w,
            UnitWeights::Evolving(t) => &t.fields[index],
        }
    }
}

#[derive(Debug, Clone)]
struct UnitRecord {
    input: Tensor4,
    /// Batch-norm output before the ReLU (conv output when there is no batch norm).
    pre_relu: Tensor4,
    bn_cache: Option<BnCache>,
}

#[derive(Debug, Clone)]
struct StepRecord {
    units: Vec<UnitRecord>,
    /// `z_j + dt * f` before the post-step ReLU.
    pre_sum: Tensor4,
}

#[derive(Debug, Clone)]
struct BlockInterior {
    steps: Vec<StepRecord>,
    output: Tensor4,
    /// `[step][unit]`, train mode only.
    batch_stats: Vec<Vec<Option<BatchStats>>>,
}

/// State kept between forward and backward of one block.
#[derive(Debug, Clone)]
pub struct BlockTape {
    input: Tensor4,
    mode: Mode,
    weights: Vec<UnitWeights>,
    stored: Option<Vec<StepRecord>>,
    batch_stats: Vec<Vec<Option<BatchStats>>>,
}

impl BlockTape {
    /// Activation tensors held on the tape.
    pub fn stored_activation_tensors(&self) -> usize {
        1 + self
            .stored
            .as_ref()
            .map_or(0, |steps| steps.iter().map(|s| 1 + 2 * s.units.len()).sum::<usize>())
    }

    /// Activation scalars held on the tape.
    pub fn stored_activation_scalars(&self) -> usize {
        self.input.len()
            + self.stored.as_ref().map_or(0, |steps| {
                steps
                    .iter()
                    .map(|s| s.pre_sum.len() + s.units.iter().map(|u| u.input.len() + u.pre_relu.len()).sum::<usize>())
                    .sum()
            })
    }

    pub fn checkpoint_mode(&self) -> CheckpointMode {
        if self.stored.is_some() {
            CheckpointMode::FullStorage
        } else {
            CheckpointMode::Recompute
        }
    }

    pub fn input(&self) -> &Tensor4 {
        &self.input
    }
}

impl OdeBlock {
    /// Basic residual block `conv -> BN -> ReLU -> conv -> BN` with 3x3 kernels and no conv
    /// biases. With `evolve` every convolution gets its own RDA coefficients.
    pub fn basic(name: &str, channels: usize, schedule: OdeBlockSchedule, evolve: bool, seed: u64) -> Result<Self> {
        let units = (1..=2)
            .map(|i| {
                ConvUnit::new(
                    &format!("{name}.conv{i}"),
                    &format!("{name}.bn{i}"),
                    channels,
                    channels,
                    3,
                    false,
                    evolve,
                    schedule.n_z,
                    i == 1,
                    seed,
                )
            })
            .collect();
        let block = Self {
            name: name.to_owned(),
            schedule,
            units,
            nonlinearity: Nonlinearity::Tanh,
            post_step_relu: true,
            checkpoint: CheckpointMode::Recompute,
        };
        block.validate()?;
        Ok(block)
    }

    /// Single-channel 1x1 block computing `dz/dt = theta z` with `dw/dt = rho w`: the
    /// scalar linear system as a network. No normalization, no ReLU, identity weight
    /// nonlinearity.
    pub fn scalar(schedule: OdeBlockSchedule, w0: f64, rho: f64) -> Result<Self> {
        let mut unit = ConvUnit::new("scalar.conv", "scalar.bn", 1, 1, 1, false, true, 0, false, 0);
        unit.weight.value = vec![w0];
        if let Some(r) = unit.rda.as_mut() {
            r.value = vec![0.0, 0.0, 0.0, rho];
        }
        let block = Self {
            name: "scalar".to_owned(),
            schedule,
            units: vec![unit],
            nonlinearity: Nonlinearity::Identity,
            post_step_relu: false,
            checkpoint: CheckpointMode::Recompute,
        };
        block.validate()?;
        Ok(block)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        for unit in &self.units {
            if !unit.bn.is_empty() {
                check_dim("OdeBlock", "batch norms per unit", self.schedule.n_z, unit.bn.len())?;
            }
        }
        Ok(())
    }

    pub fn is_evolving(&self) -> bool {
        self.units.iter().any(|u| u.rda.is_some())
    }

    fn weights(&self) -> Result<Vec<UnitWeights>> {
        let keep = self.schedule.last_applied();
        self.units
            .iter()
            .map(|u| match u.coefficients() {
                Some(p) => rda_trajectory_prefix(&u.w0(), p, self.schedule.n_theta, keep, self.nonlinearity)
                    .map(UnitWeights::Evolving),
                None => Ok(UnitWeights::Static(u.w0())),
            })
            .collect()
    }

    /// Kernel snapshots actually applied to activations, `[step][unit]`.
    pub fn applied_kernels(&self) -> Result<Vec<Vec<KernelField>>> {
        let weights = self.weights()?;
        Ok(self
            .schedule
            .applied
            .iter()
            .map(|&idx| weights.iter().map(|w| w.snapshot(idx).clone()).collect())
            .collect())
    }

    /// The residual function `f(z; theta)` of step `step`.
    pub fn residual_f(&self, z: &Tensor4, theta: &[KernelField], step: usize, mode: Mode) -> Result<Tensor4> {
        let (f, _, _) = self.residual_f_recorded(z, theta, step, mode)?;
        Ok(f)
    }

    fn residual_f_recorded(
        &self,
        z: &Tensor4,
        theta: &[KernelField],
        step: usize,
        mode: Mode,
    ) -> Result<(Tensor4, Vec<UnitRecord>, Vec<Option<BatchStats>>)> {
        check_dim("residual_f", "kernel snapshots", self.units.len(), theta.len())?;
        let mut x = z.clone();
        let mut records = Vec::with_capacity(self.units.len());
        let mut stats = Vec::with_capacity(self.units.len());
        for (unit, kernels) in self.units.iter().zip(theta) {
            let c = conv2d(
                &x,
                kernels,
                unit.bias.as_ref().map(|b| b.value.as_slice()),
                unit.geometry(),
            )?;
            let (pre_relu, bn_cache, batch) = match unit.bn.get(step) {
                Some(bn) => {
                    let (out, cache, batch) = bn.forward(&c, mode)?;
                    (out, Some(cache), batch)
                }
                None => (c, None, None),
            };
            let out = if unit.relu {
                pre_relu.map(|v| if v > 0.0 { v } else { 0.0 })
            } else {
                pre_relu.clone()
            };
            records.push(UnitRecord {
                input: std::mem::replace(&mut x, out),
                pre_relu,
                bn_cache,
            });
            stats.push(batch);
        }
        Ok((x, records, stats))
    }

    fn run_interior(&self, z0: &Tensor4, weights: &[UnitWeights], mode: Mode) -> Result<BlockInterior> {
        let dt = self.schedule.dt_z();
        let mut z = z0.clone();
        let mut steps = Vec::with_capacity(self.schedule.n_z);
        let mut batch_stats = Vec::with_capacity(self.schedule.n_z);
        for (j, &idx) in self.schedule.applied.iter().enumerate() {
            let theta: Vec<KernelField> = weights.iter().map(|w| w.snapshot(idx).clone()).collect();
            let (f, units, stats) = self.residual_f_recorded(&z, &theta, j, mode)?;
            let mut pre_sum = z;
            pre_sum.add_scaled(&f, dt)?;
            z = if self.post_step_relu {
                pre_sum.map(|v| if v > 0.0 { v } else { 0.0 })
            } else {
                pre_sum.clone()
            };
            steps.push(StepRecord { units, pre_sum });
            batch_stats.push(stats);
        }
        if !z.all_finite() {
            return Err(Error::NonFinite(format!("output of block {}", self.name)));
        }
        Ok(BlockInterior {
            steps,
            output: z,
            batch_stats,
        })
    }

    pub fn forward(&self, z0: &Tensor4, mode: Mode) -> Result<(Tensor4, BlockTape)> {
        let weights = self.weights()?;
        let interior = self.run_interior(z0, &weights, mode)?;
        let stored = match self.checkpoint {
            CheckpointMode::Recompute => None,
            CheckpointMode::FullStorage => Some(interior.steps),
        };
        Ok((
            interior.output,
            BlockTape {
                input: z0.clone(),
                mode,
                weights,
                stored,
                batch_stats: interior.batch_stats,
            },
        ))
    }

    /// Fold the batch statistics of a train-mode forward into the running statistics.
    pub fn commit_running_stats(&mut self, tape: &BlockTape) {
        for (j, stats) in tape.batch_stats.iter().enumerate() {
            for (unit, s) in self.units.iter_mut().zip(stats) {
                if let (Some(bn), Some(s)) = (unit.bn.get_mut(j), s) {
                    bn.update_running(s);
                }
            }
        }
    }

    /// Reverse pass through every Euler step and every weight substep. Parameter
    /// gradients go to `grads`; returns the gradient with respect to the block input.
    pub fn backward(&self, tape: &BlockTape, grad_z1: &Tensor4, grads: &mut Gradients) -> Result<Tensor4> {
        tape.input.check_same_dims(grad_z1, "ode_block_backward")?;
        check_dim("ode_block_backward", "tape units", self.units.len(), tape.weights.len())?;
        let recomputed;
        let steps = match &tape.stored {
            Some(steps) => steps,
            None => {
                recomputed = self.run_interior(&tape.input, &tape.weights, tape.mode)?.steps;
                &recomputed
            }
        };
        check_dim("ode_block_backward", "tape steps", self.schedule.n_z, steps.len())?;

        let dt = self.schedule.dt_z();
        let trajectory_len = self.schedule.last_applied() + 1;
        let mut snapshot_grads: Vec<Vec<Option<KernelField>>> = vec![vec![None; trajectory_len]; self.units.len()];
        let mut g = grad_z1.clone();
        for (j, record) in steps.iter().enumerate().rev() {
            let idx = self.schedule.applied[j];
            let g_pre = if self.post_step_relu {
                g.zip_map(&record.pre_sum, |g, x| if x > 0.0 { g } else { 0.0 })?
            } else {
                g
            };
            let mut g_x = g_pre.map(|v| v * dt);
            for (u, (unit, rec)) in self.units.iter().zip(&record.units).enumerate().rev() {
                let g_bn_out = if unit.relu {
                    g_x.zip_map(&rec.pre_relu, |g, x| if x > 0.0 { g } else { 0.0 })?
                } else {
                    g_x
                };
                let g_conv = match (&rec.bn_cache, unit.bn.get(j)) {
                    (Some(cache), Some(bn)) => bn.backward(cache, &g_bn_out, grads)?,
                    _ => g_bn_out,
                };
                let kernels = tape.weights[u].snapshot(idx);
                let cg = conv2d_backward(&rec.input, kernels, unit.bias.is_some(), unit.geometry(), &g_conv)?;
                if let (Some(b), Some(gb)) = (&unit.bias, &cg.grad_bias) {
                    grads.accumulate(&b.name, gb);
                }
                match &mut snapshot_grads[u][idx] {
                    Some(acc) => acc.add_assign(&cg.grad_kernels),
                    slot @ None => *slot = Some(cg.grad_kernels),
                }
                g_x = cg.grad_input;
            }
            g = g_pre;
            g.add_scaled(&g_x, 1.0)?;
        }

        for ((unit, weights), snaps) in self.units.iter().zip(&tape.weights).zip(snapshot_grads) {
            match weights {
                UnitWeights::Evolving(trajectory) => {
                    let rg = trajectory.backward(&snaps)?;
                    grads.accumulate(&unit.weight.name, rg.grad_w.data());
                    if let Some(rda) = &unit.rda {
                        grads.accumulate(&rda.name, &rg.grad_p);
                    }
                }
                UnitWeights::Static(w) => {
                    let mut total = KernelField::zeros(w.out_channels(), w.in_channels(), w.size());
                    for s in snaps.iter().flatten() {
                        total.add_assign(s);
                    }
                    grads.accumulate(&unit.weight.name, total.data());
                }
            }
        }
        Ok(g)
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for unit in &self.units {
            out.push(&unit.weight);
            out.extend(unit.bias.as_ref());
            out.extend(unit.rda.as_ref());
        }
        for unit in &self.units {
            for bn in &unit.bn {
                out.extend(bn.params());
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for unit in &mut self.units {
            convs.push(&mut unit.weight);
            convs.extend(unit.bias.as_mut());
            convs.extend(unit.rda.as_mut());
            for bn in &mut unit.bn {
                norms.extend(bn.params_mut());
            }
        }
        convs.extend(norms);
        convs
    }

    pub fn batch_norms(&self) -> impl Iterator<Item = &BatchNorm2d> {
        self.units.iter().flat_map(|u| u.bn.iter())
    }

    pub fn batch_norms_mut(&mut self) -> impl Iterator<Item = &mut BatchNorm2d> {
        self.units.iter_mut().flat_map(|u| u.bn.iter_mut())
    }

    /// Floating-point operation estimate of one forward pass on input dims `dims`.
    pub fn forward_flops(&self, dims: [usize; 4]) -> Result<u64> {
        let elements = dims.iter().product::<usize>() as u64;
        let mut per_step = 0u64;
        let mut shape = dims;
        for unit in &self.units {
            let d = &unit.weight.dims;
            let g = unit.geometry();
            per_step += 2 * conv2d_macs(shape, d[0], d[2], g)?;
            shape = [
                shape[0],
                d[0],
                g.output_size(shape[2], d[2])?,
                g.output_size(shape[3], d[2])?,
            ];
            let out_elems = shape.iter().product::<usize>() as u64;
            if unit.bias.is_some() {
                per_step += out_elems;
            }
            if !unit.bn.is_empty() {
                per_step += 4 * out_elems;
            }
            if unit.relu {
                per_step += out_elems;
            }
        }
        // dt * f, the addition and the post-step ReLU
        per_step += 3 * elements;
        let mut total = per_step * self.schedule.n_z as u64;
        // Each substep: forward and inverse separable DFT per slice (8 flops per complex
        // multiply-add, 2k^3 of them per transform), symbol product, nonlinearity.
        let substeps = self.schedule.last_applied() as u64;
        for unit in &self.units {
            if unit.rda.is_some() {
                let d = &unit.weight.dims;
                let k = d[2] as u64;
                let slices = (d[0] * d[1]) as u64;
                let per_slice = 2 * 8 * 2 * k * k * k + 6 * k * k + k * k;
                total += substeps * slices * per_slice;
            }
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedules() {
        let c1 = OdeBlockSchedule::default_config1();
        assert_eq!((c1.n_z, c1.n_theta, c1.applied.clone()), (5, 5, vec![0, 1, 2, 3, 4]));
        let c2 = OdeBlockSchedule::default_config2();
        assert_eq!((c2.n_z, c2.n_theta, c2.applied.clone()), (2, 10, vec![0, 10]));
        assert!(OdeBlockSchedule::config1(0).is_err());
        let bad = OdeBlockSchedule {
            config: Configuration::One,
            n_z: 3,
            n_theta: 4,
            applied: vec![0, 1, 2],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn step_names() {
        assert_eq!(step_name("layer1_1.bn1", 0), "layer1_1.bn1");
        assert_eq!(step_name("layer1_1.bn1", 3), "layer1_1.bn1@t3");
    }
}
