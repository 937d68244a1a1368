//! Residual AlexNet, ResNet-4 and ResNet-10 in baseline and ODE variants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, Linear};
use crate::nn::{maxpool2d, maxpool2d_backward, BatchStats, BnCache, ConvGeometry, Mode, PoolForward};
use crate::ode::{BlockTape, CheckpointMode, ConvUnit, OdeBlock, OdeBlockSchedule};
use crate::params::{Gradients, Param};
use crate::spectral::Nonlinearity;
use crate::tensor::Tensor4;

pub const NUM_CLASSES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    AlexNet,
    ResNet4,
    ResNet10,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::AlexNet, Architecture::ResNet4, Architecture::ResNet10];

    /// Channel width of the first convolution at full size.
    pub fn default_width(self) -> usize {
        match self {
            Architecture::AlexNet => 64,
            Architecture::ResNet4 | Architecture::ResNet10 => 16,
        }
    }

    /// Published trainable-parameter totals of the baseline networks.
    pub fn reference_baseline_params(self) -> usize {
        match self {
            Architecture::AlexNet => 1_756_682,
            Architecture::ResNet4 => 7_706,
            Architecture::ResNet10 => 44_186,
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Architecture::AlexNet => "alexnet",
            Architecture::ResNet4 => "resnet4",
            Architecture::ResNet10 => "resnet10",
        })
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alexnet" => Ok(Architecture::AlexNet),
            "resnet4" => Ok(Architecture::ResNet4),
            "resnet10" => Ok(Architecture::ResNet10),
            _ => Err(Error::InvalidArgument(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "anodev2_c1")]
    AnodeV2C1,
    #[serde(rename = "anodev2_c2")]
    AnodeV2C2,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Baseline, Variant::AnodeV2C1, Variant::AnodeV2C2];

    /// Overhead allowed over the baseline parameter count.
    pub fn overhead_limit(self) -> f64 {
        match self {
            Variant::Baseline => 0.0,
            Variant::AnodeV2C1 => 0.067,
            Variant::AnodeV2C2 => 0.036,
        }
    }

    pub fn default_schedule(self) -> Option<OdeBlockSchedule> {
        match self {
            Variant::Baseline => None,
            Variant::AnodeV2C1 => Some(OdeBlockSchedule::default_config1()),
            Variant::AnodeV2C2 => Some(OdeBlockSchedule::default_config2()),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Baseline => "baseline",
            Variant::AnodeV2C1 => "anodev2_c1",
            Variant::AnodeV2C2 => "anodev2_c2",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Variant::Baseline),
            "anodev2_c1" => Ok(Variant::AnodeV2C1),
            "anodev2_c2" => Ok(Variant::AnodeV2C2),
            _ => Err(Error::InvalidArgument(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub variant: Variant,
    /// Channels of the first convolution.
    pub width: usize,
    /// Side of the square RGB input.
    pub input_size: usize,
    pub nonlinearity: Nonlinearity,
    /// Replaces the variant's schedule in ODE variants.
    pub schedule: Option<OdeBlockSchedule>,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(architecture: Architecture, variant: Variant) -> Self {
        Self {
            architecture,
            variant,
            width: architecture.default_width(),
            input_size: 32,
            nonlinearity: Nonlinearity::Tanh,
            schedule: None,
            seed: 0,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.width = width;
        self
    }

    pub fn with_input_size(mut self, size: usize) -> Self {
        self.input_size = size;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_schedule(mut self, schedule: OdeBlockSchedule) -> Self {
        self.schedule = Some(schedule);
        self
    }

    pub fn with_nonlinearity(mut self, sigma: Nonlinearity) -> Self {
        self.nonlinearity = sigma;
        self
    }

    fn ode_schedule(&self) -> Option<OdeBlockSchedule> {
        match self.variant {
            Variant::Baseline => None,
            _ => self.schedule.clone().or_else(|| self.variant.default_schedule()),
        }
    }
}

/// Discrete post-activation residual block: `relu(shortcut(x) + h(x))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub name: String,
    /// Convolution, batch norm, trailing ReLU.
    pub units: Vec<(Conv2d, BatchNorm2d, bool)>,
    pub shortcut: Option<(Conv2d, BatchNorm2d)>,
}

#[derive(Debug, Clone)]
struct UnitTape {
    input: Tensor4,
    bn_out: Tensor4,
    bn: BnCache,
    stats: Option<BatchStats>,
}

#[derive(Debug, Clone)]
pub struct ResidualTape {
    units: Vec<UnitTape>,
    shortcut: Option<(Tensor4, BnCache, Option<BatchStats>)>,
    pre_sum: Tensor4,
}

impl ResidualBlock {
    /// ResNet basic block; `stride > 1` or a channel change adds a 1x1 projection shortcut.
    pub fn basic(name: &str, c_in: usize, c_out: usize, stride: usize, seed: u64) -> Self {
        let conv1 = Conv2d::new(
            &format!("{name}.conv1"),
            c_in,
            c_out,
            3,
            ConvGeometry::new(stride, 1),
            false,
            seed,
        );
        let conv2 = Conv2d::new(
            &format!("{name}.conv2"),
            c_out,
            c_out,
            3,
            ConvGeometry::same(3),
            false,
            seed,
        );
        let shortcut = (stride != 1 || c_in != c_out).then(|| {
            (
                Conv2d::new(
                    &format!("{name}.shortcut"),
                    c_in,
                    c_out,
                    1,
                    ConvGeometry::new(stride, 0),
                    false,
                    seed,
                ),
                BatchNorm2d::new(&format!("{name}.shortcut_bn"), c_out),
            )
        });
        Self {
            name: name.to_owned(),
            units: vec![
                (conv1, BatchNorm2d::new(&format!("{name}.bn1"), c_out), true),
                (conv2, BatchNorm2d::new(&format!("{name}.bn2"), c_out), false),
            ],
            shortcut,
        }
    }

    pub fn forward(&self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, ResidualTape)> {
        let mut h = x.clone();
        let mut units = Vec::with_capacity(self.units.len());
        for (conv, bn, relu) in &self.units {
            let c = conv.forward(&h)?;
            let (bn_out, cache, stats) = bn.forward(&c, mode)?;
            let out = if *relu { relu_of(&bn_out) } else { bn_out.clone() };
            units.push(UnitTape {
                input: std::mem::replace(&mut h, out),
                bn_out,
                bn: cache,
                stats,
            });
        }
        let (mut pre_sum, shortcut) = match &self.shortcut {
            Some((conv, bn)) => {
                let (s, cache, stats) = bn.forward(&conv.forward(x)?, mode)?;
                (s, Some((x.clone(), cache, stats)))
            }
            None => (x.clone(), None),
        };
        pre_sum.add_scaled(&h, 1.0)?;
        let out = relu_of(&pre_sum);
        Ok((
            out,
            ResidualTape {
                units,
                shortcut,
                pre_sum,
            },
        ))
    }

    pub fn backward(&self, tape: &ResidualTape, grad_out: &Tensor4, grads: &mut Gradients) -> Result<Tensor4> {
        let g_pre = relu_backward(grad_out, &tape.pre_sum)?;
        let mut g = g_pre.clone();
        for ((conv, bn, relu), t) in self.units.iter().zip(&tape.units).rev() {
            let g_bn = if *relu { relu_backward(&g, &t.bn_out)? } else { g };
            let g_conv = bn.backward(&t.bn, &g_bn, grads)?;
            g = conv.backward(&t.input, &g_conv, grads)?;
        }
        let g_skip = match (&self.shortcut, &tape.shortcut) {
            (Some((conv, bn)), Some((x, cache, _))) => {
                let g_conv = bn.backward(cache, &g_pre, grads)?;
                conv.backward(x, &g_conv, grads)?
            }
            _ => g_pre,
        };
        g.add_scaled(&g_skip, 1.0)?;
        Ok(g)
    }

    fn commit_running_stats(&mut self, tape: &ResidualTape) {
        for ((_, bn, _), t) in self.units.iter_mut().zip(&tape.units) {
            if let Some(s) = &t.stats {
                bn.update_running(s);
            }
        }
        if let (Some((_, bn)), Some((_, _, Some(s)))) = (&mut self.shortcut, &tape.shortcut) {
            bn.update_running(s);
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for (conv, bn, _) in &self.units {
            out.extend(conv.params());
            out.extend(bn.params());
        }
        if let Some((conv, bn)) = &self.shortcut {
            out.extend(conv.params());
            out.extend(bn.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (conv, bn, _) in &mut self.units {
            out.extend(conv.params_mut());
            out.extend(bn.params_mut());
        }
        if let Some((conv, bn)) = &mut self.shortcut {
            out.extend(conv.params_mut());
            out.extend(bn.params_mut());
        }
        out
    }
}

fn relu_of(x: &Tensor4) -> Tensor4 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

fn relu_backward(grad: &Tensor4, input: &Tensor4) -> Result<Tensor4> {
    grad.zip_map(input, |g, x| if x > 0.0 { g } else { 0.0 })
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    Relu,
    MaxPool { k: usize, stride: usize },
    Linear(Linear),
    Residual(ResidualBlock),
    Ode(OdeBlock),
}

#[derive(Debug, Clone)]
enum LayerTape {
    Input(Tensor4),
    BatchNorm(BnCache, Option<BatchStats>),
    Relu(Tensor4),
    Pool(PoolForward),
    Residual(ResidualTape),
    Ode(BlockTape),
}

/// Everything a backward pass needs from the matching forward pass.
#[derive(Debug, Clone)]
pub struct ModelTape {
    layers: Vec<LayerTape>,
}

impl ModelTape {
    /// Activation scalars stored by the ODE blocks.
    pub fn ode_stored_scalars(&self) -> usize {
        self.layers
            .iter()
            .map(|t| match t {
                LayerTape::Ode(b) => b.stored_activation_scalars(),
                _ => 0,
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub layers: Vec<Layer>,
}

/// Rounding unit of the published totals.
pub const PARAM_COUNT_TOLERANCE: usize = 10;

/// Parameter total of one model against the published baseline of its architecture.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamBudget {
    pub total: usize,
    pub reference: usize,
    /// `(total - reference) / reference`
    pub overhead: f64,
    pub pass: bool,
}

/// Baselines must match the reference within [`PARAM_COUNT_TOLERANCE`]; ODE variants must
/// stay within their overhead band.
pub fn parameter_budget(architecture: Architecture, variant: Variant, total: usize) -> ParamBudget {
    let reference = architecture.reference_baseline_params();
    let overhead = (total as f64 - reference as f64) / reference as f64;
    let pass = match variant {
        Variant::Baseline => total.abs_diff(reference) <= PARAM_COUNT_TOLERANCE,
        _ => total >= reference && overhead <= variant.overhead_limit(),
    };
    ParamBudget {
        total,
        reference,
        overhead,
        pass,
    }
}

/// One row per layer plus the total.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamReport {
    pub rows: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,count\n");
        for (name, count) in &self.rows {
            s.push_str(&format!("{name},{count}\n"));
        }
        s.push_str(&format!("total,{}\n", self.total));
        s
    }
}

/// Convolution unit of an ODE block mirroring one (conv, BN, relu) triple of a residual block.
fn ode_unit(
    conv_name: &str,
    bn_name: &str,
    c: usize,
    k: usize,
    bias: bool,
    relu: bool,
    steps: usize,
    seed: u64,
) -> ConvUnit {
    ConvUnit::new(conv_name, bn_name, c, c, k, bias, true, steps, relu, seed)
}

pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    if spec.width == 0 {
        return Err(Error::InvalidArgument("width must be positive".into()));
    }
    let schedule = spec.ode_schedule();
    if let Some(s) = &schedule {
        s.validate()?;
    }
    let seed = spec.seed;
    let w = spec.width;
    let size = spec.input_size;
    let ode = |name: &str, units: Vec<ConvUnit>, schedule: OdeBlockSchedule| -> Result<Layer> {
        let block = OdeBlock {
            name: name.to_owned(),
            schedule,
            units,
            nonlinearity: spec.nonlinearity,
            post_step_relu: true,
            checkpoint: CheckpointMode::Recompute,
        };
        block.validate()?;
        Ok(Layer::Ode(block))
    };
    let basic = |name: &str, c: usize| -> Result<Layer> {
        match &schedule {
            None => Ok(Layer::Residual(ResidualBlock::basic(name, c, c, 1, seed))),
            Some(s) => ode(
                name,
                (1..=2)
                    .map(|i| {
                        ode_unit(
                            &format!("{name}.conv{i}"),
                            &format!("{name}.bn{i}"),
                            c,
                            3,
                            false,
                            i == 1,
                            s.n_z,
                            seed,
                        )
                    })
                    .collect(),
                s.clone(),
            ),
        }
    };

    let mut layers = Vec::new();
    match spec.architecture {
        Architecture::AlexNet => {
            if !size.is_multiple_of(4) {
                return Err(Error::InvalidArgument(format!(
                    "AlexNet input size {size} is not a multiple of 4"
                )));
            }
            layers.push(Layer::Conv(Conv2d::new(
                "conv1",
                3,
                w,
                5,
                ConvGeometry::same(5),
                true,
                seed,
            )));
            layers.push(Layer::BatchNorm(BatchNorm2d::new("bn1", w)));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool { k: 2, stride: 2 });
            match &schedule {
                None => layers.push(Layer::Residual(ResidualBlock {
                    name: "block2".into(),
                    units: vec![(
                        Conv2d::new("conv2", w, w, 5, ConvGeometry::same(5), true, seed),
                        BatchNorm2d::new("bn2", w),
                        false,
                    )],
                    shortcut: None,
                })),
                Some(s) => layers.push(ode(
                    "block2",
                    vec![ode_unit("conv2", "bn2", w, 5, true, false, s.n_z, seed)],
                    s.clone(),
                )?),
            }
            layers.push(Layer::MaxPool { k: 2, stride: 2 });
            let flat = w * (size / 4) * (size / 4);
            layers.push(Layer::Linear(Linear::new("fc1", flat, 384, seed)));
            layers.push(Layer::Relu);
            layers.push(Layer::Linear(Linear::new("fc2", 384, 192, seed)));
            layers.push(Layer::Relu);
            layers.push(Layer::Linear(Linear::new("fc3", 192, NUM_CLASSES, seed)));
        }
        Architecture::ResNet4 | Architecture::ResNet10 => {
            layers.push(Layer::Conv(Conv2d::new(
                "conv1",
                3,
                w,
                3,
                ConvGeometry::same(3),
                false,
                seed,
            )));
            layers.push(Layer::BatchNorm(BatchNorm2d::new("bn1", w)));
            layers.push(Layer::Relu);
            layers.push(basic("layer1_1", w)?);
            let (channels, spatial) = if spec.architecture == Architecture::ResNet10 {
                layers.push(basic("layer1_2", w)?);
                // The downsampling block changes shape, so it stays a discrete block.
                layers.push(Layer::Residual(ResidualBlock::basic("layer2_1", w, 2 * w, 2, seed)));
                layers.push(basic("layer2_2", 2 * w)?);
                (2 * w, size.div_ceil(2))
            } else {
                (w, size)
            };
            if spatial < 8 {
                return Err(Error::InvalidArgument(format!(
                    "input size {size} leaves {spatial}x{spatial} maps, smaller than the 8x8 pool"
                )));
            }
            layers.push(Layer::MaxPool { k: 8, stride: 8 });
            let pooled = (spatial - 8) / 8 + 1;
            layers.push(Layer::Linear(Linear::new(
                "fc",
                channels * pooled * pooled,
                NUM_CLASSES,
                seed,
            )));
        }
    }
    Ok(Model {
        spec: spec.clone(),
        layers,
    })
}

impl Model {
    pub fn forward(&self, x: &Tensor4, mode: Mode) -> Result<(Tensor4, ModelTape)> {
        let mut h = x.clone();
        let mut tapes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, tape) = match layer {
                Layer::Conv(c) => (c.forward(&h)?, LayerTape::Input(h)),
                Layer::Linear(l) => (l.forward(&h)?, LayerTape::Input(h)),
                Layer::BatchNorm(bn) => {
                    let (out, cache, stats) = bn.forward(&h, mode)?;
                    (out, LayerTape::BatchNorm(cache, stats))
                }
                Layer::Relu => {
                    let out = relu_of(&h);
                    (out, LayerTape::Relu(h))
                }
                Layer::MaxPool { k, stride } => {
                    let p = maxpool2d(&h, *k, *stride)?;
                    (p.output.clone(), LayerTape::Pool(p))
                }
                Layer::Residual(b) => {
                    let (out, t) = b.forward(&h, mode)?;
                    (out, LayerTape::Residual(t))
                }
                Layer::Ode(b) => {
                    let (out, t) = b.forward(&h, mode)?;
                    (out, LayerTape::Ode(t))
                }
            };
            tapes.push(tape);
            h = out;
        }
        if !h.all_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        Ok((h, ModelTape { layers: tapes }))
    }

    /// Logits only.
    pub fn predict(&self, x: &Tensor4, mode: Mode) -> Result<Tensor4> {
        Ok(self.forward(x, mode)?.0)
    }

    pub fn backward(&self, tape: &ModelTape, grad_logits: &Tensor4) -> Result<Gradients> {
        if tape.layers.len() != self.layers.len() {
            return Err(Error::InvalidArgument("tape does not belong to this model".into()));
        }
        let mut grads = Gradients::new();
        let mut g = grad_logits.clone();
        for (layer, t) in self.layers.iter().zip(&tape.layers).rev() {
            g = match (layer, t) {
                (Layer::Conv(c), LayerTape::Input(x)) => c.backward(x, &g, &mut grads)?,
                (Layer::Linear(l), LayerTape::Input(x)) => l.backward(x, &g, &mut grads)?,
                (Layer::BatchNorm(bn), LayerTape::BatchNorm(cache, _)) => bn.backward(cache, &g, &mut grads)?,
                (Layer::Relu, LayerTape::Relu(x)) => relu_backward(&g, x)?,
                (Layer::MaxPool { .. }, LayerTape::Pool(p)) => maxpool2d_backward(p, &g)?,
                (Layer::Residual(b), LayerTape::Residual(t)) => b.backward(t, &g, &mut grads)?,
                (Layer::Ode(b), LayerTape::Ode(t)) => b.backward(t, &g, &mut grads)?,
                _ => return Err(Error::InvalidArgument("tape does not belong to this model".into())),
            };
        }
        Ok(grads)
    }

    /// Fold the batch statistics recorded by a train-mode forward into the running statistics.
    pub fn commit_running_stats(&mut self, tape: &ModelTape) {
        for (layer, t) in self.layers.iter_mut().zip(&tape.layers) {
            match (layer, t) {
                (Layer::BatchNorm(bn), LayerTape::BatchNorm(_, Some(s))) => bn.update_running(s),
                (Layer::Residual(b), LayerTape::Residual(t)) => b.commit_running_stats(t),
                (Layer::Ode(b), LayerTape::Ode(t)) => b.commit_running_stats(t),
                _ => {}
            }
        }
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers
            .iter()
            .flat_map(|l| match l {
                Layer::Conv(c) => c.params(),
                Layer::BatchNorm(bn) => bn.params(),
                Layer::Linear(x) => x.params(),
                Layer::Residual(b) => b.params(),
                Layer::Ode(b) => b.params(),
                Layer::Relu | Layer::MaxPool { .. } => Vec::new(),
            })
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers
            .iter_mut()
            .flat_map(|l| match l {
                Layer::Conv(c) => c.params_mut(),
                Layer::BatchNorm(bn) => bn.params_mut(),
                Layer::Linear(x) => x.params_mut(),
                Layer::Residual(b) => b.params_mut(),
                Layer::Ode(b) => b.params_mut(),
                Layer::Relu | Layer::MaxPool { .. } => Vec::new(),
            })
            .collect()
    }

    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params().into_iter().find(|p| p.name == name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params_mut().into_iter().find(|p| p.name == name)
    }

    /// All batch norms with their running statistics, in layer order.
    pub fn batch_norms(&self) -> Vec<&BatchNorm2d> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::BatchNorm(bn) => out.push(bn),
                Layer::Residual(b) => {
                    out.extend(b.units.iter().map(|(_, bn, _)| bn));
                    out.extend(b.shortcut.as_ref().map(|(_, bn)| bn));
                }
                Layer::Ode(b) => out.extend(b.batch_norms()),
                _ => {}
            }
        }
        out
    }

    pub fn batch_norms_mut(&mut self) -> Vec<&mut BatchNorm2d> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::BatchNorm(bn) => out.push(bn),
                Layer::Residual(b) => {
                    out.extend(b.units.iter_mut().map(|(_, bn, _)| bn));
                    out.extend(b.shortcut.as_mut().map(|(_, bn)| bn));
                }
                Layer::Ode(b) => out.extend(b.batch_norms_mut()),
                _ => {}
            }
        }
        out
    }

    /// Copy every parameter and running statistic whose name also exists in `other`.
    /// Returns the number of parameter tensors copied.
    pub fn copy_params_from(&mut self, other: &Model) -> Result<usize> {
        let mut copied = 0;
        for p in self.params_mut() {
            if let Some(src) = other.param(&p.name) {
                if src.dims != p.dims {
                    return Err(Error::InvalidArgument(format!(
                        "{}: dims {:?} vs {:?}",
                        p.name, p.dims, src.dims
                    )));
                }
                p.value.clone_from(&src.value);
                copied += 1;
            }
        }
        let sources = other.batch_norms();
        for bn in self.batch_norms_mut() {
            if let Some(src) = sources.iter().find(|s| s.name == bn.name) {
                bn.running = src.running.clone();
            }
        }
        Ok(copied)
    }

    pub fn ode_blocks_mut(&mut self) -> impl Iterator<Item = &mut OdeBlock> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Ode(b) => Some(b),
            _ => None,
        })
    }

    pub fn set_checkpoint_mode(&mut self, mode: CheckpointMode) {
        for b in self.ode_blocks_mut() {
            b.checkpoint = mode;
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}

/// Trainable scalars grouped by layer; BN running statistics are not counted.
pub fn count_parameters(model: &Model) -> ParamReport {
    let mut rows: Vec<(String, usize)> = Vec::new();
    for p in model.params() {
        let layer = p.name.rsplit_once('.').map_or(p.name.as_str(), |(l, _)| l);
        match rows.iter_mut().find(|(n, _)| n == layer) {
            Some(row) => row.1 += p.len(),
            None => rows.push((layer.to_owned(), p.len())),
        }
    }
    let total = rows.iter().map(|r| r.1).sum();
    ParamReport { rows, total }
}
