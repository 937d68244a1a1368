//! End-to-end gradient checks shared by the command line and the acceptance suite.

use std::f64::consts::LN_2;
use std::fmt::Write as _;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::compare::{compare_gradients, relative_error, GradientReport};
use super::fd::{adaptive_finite_difference_gradient, finite_difference_gradient};
use super::kkt::{solve_kkt, ScalarLinearSystem};
use crate::error::Result;
use crate::models::{build_model, Architecture, Model, ModelSpec, Variant};
use crate::nn::{softmax_cross_entropy, Mode};
use crate::ode::{OdeBlock, OdeBlockSchedule};
use crate::params::Gradients;
use crate::tensor::Tensor4;

/// Pass threshold for DTO against finite differences on a full model.
pub const MODEL_CHECK_TOLERANCE: f64 = 1e-5;
/// Pass threshold for DTO, KKT and finite differences on the scalar system.
pub const SCALAR_CHECK_TOLERANCE: f64 = 1e-3;

pub const TINY_WIDTH: usize = 4;
pub const TINY_INPUT: usize = 8;
pub const TINY_LABELS: [usize; 4] = [0, 3, 9, 3];

/// Central differences starting at `eps`, refined tenfold up to `refinements` times per
/// coordinate while consecutive estimates disagree by more than `rtol * |c| + atol`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdSettings {
    pub eps: f64,
    pub refinements: usize,
    pub rtol: f64,
    pub atol: f64,
}

impl Default for FdSettings {
    fn default() -> Self {
        Self {
            eps: 1e-5,
            refinements: 2,
            rtol: 1e-7,
            atol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub report: GradientReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheck {
    pub params: Vec<ParamCheck>,
}

impl ModelCheck {
    pub fn max_error(&self) -> f64 {
        self.params.iter().map(|p| p.report.max_dto_fd()).fold(0.0, f64::max)
    }

    /// Parameter with the largest error and that error.
    pub fn worst(&self) -> Option<(&str, f64)> {
        self.params
            .iter()
            .map(|p| (p.name.as_str(), p.report.max_dto_fd()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }

    /// One row per scalar: `param,index,dto,fd,relerr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,index,dto,fd,relerr\n");
        for p in &self.params {
            for r in &p.report.rows {
                let _ = writeln!(
                    out,
                    "{},{},{:e},{:e},{:e}",
                    p.name,
                    r.index,
                    r.dto,
                    r.fd,
                    r.relerr_dto_fd()
                );
            }
        }
        out
    }
}

/// Width-4 ResNet-4 on a batch of four random 8x8 images, with nonzero RDA coefficients so
/// every coefficient carries gradient.
pub fn tiny_resnet4(
    variant: Variant,
    schedule: Option<OdeBlockSchedule>,
    seed: u64,
) -> Result<(Model, Tensor4, Vec<usize>)> {
    let mut spec = ModelSpec::new(Architecture::ResNet4, variant)
        .with_width(TINY_WIDTH)
        .with_input_size(TINY_INPUT)
        .with_seed(seed);
    if let Some(s) = schedule {
        spec = spec.with_schedule(s);
    }
    let mut model = build_model(&spec)?;
    for block in model.ode_blocks_mut() {
        for (u, unit) in block.units.iter_mut().enumerate() {
            if let Some(rda) = unit.rda.as_mut() {
                rda.value = if u == 0 {
                    vec![0.05, 0.1, -0.2, 0.3]
                } else {
                    vec![0.02, -0.1, 0.05, -0.2]
                };
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let dims = [TINY_LABELS.len(), 3, TINY_INPUT, TINY_INPUT];
    let images = Tensor4::from_vec(
        dims,
        (0..dims.iter().product())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )?;
    Ok((model, images, TINY_LABELS.to_vec()))
}

fn loss(model: &Model, images: &Tensor4, labels: &[usize]) -> Result<f64> {
    let (logits, _) = model.forward(images, Mode::Train)?;
    Ok(softmax_cross_entropy(&logits, labels)?.loss)
}

/// DTO gradients of the mean cross-entropy (train-mode batch norm) against finite differences,
/// for every parameter.
pub fn model_gradient_check(model: &Model, images: &Tensor4, labels: &[usize], fd: FdSettings) -> Result<ModelCheck> {
    let (logits, tape) = model.forward(images, Mode::Train)?;
    let l = softmax_cross_entropy(&logits, labels)?;
    let grads = model.backward(&tape, &l.grad)?;
    let mut params = Vec::new();
    for p in model.params() {
        let name = p.name.clone();
        let mut probe = model.clone();
        let numeric = adaptive_finite_difference_gradient(
            |v| {
                probe
                    .param_mut(&name)
                    .expect("parameter exists")
                    .value
                    .copy_from_slice(v);
                loss(&probe, images, labels)
            },
            &p.value,
            fd.eps,
            fd.refinements,
            fd.rtol,
            fd.atol,
        )?;
        let report = compare_gradients(grads.require(&name)?, None, &numeric)?;
        params.push(ParamCheck { name, report });
    }
    Ok(ModelCheck { params })
}

/// Scalar system `dz/dt = w z`, `dw/dt = rho w` at `z0 = w0 = 1`, `rho = ln 2`.
pub const SCALAR_Z0: f64 = 1.0;
pub const SCALAR_W0: f64 = 1.0;
pub const SCALAR_RHO: f64 = LN_2;

#[derive(Debug, Clone, PartialEq)]
pub struct ScalarCheck {
    pub dto_steps: usize,
    pub kkt_steps: usize,
    /// Rows for `w0` and `rho`.
    pub report: GradientReport,
    /// `dJ/dw0`, `dJ/drho` of the continuous problem.
    pub closed_form: [f64; 2],
}

impl ScalarCheck {
    pub fn max_error(&self) -> f64 {
        self.report.max_error()
    }

    pub fn dto_closed_form_error(&self) -> f64 {
        self.report
            .rows
            .iter()
            .zip(self.closed_form)
            .map(|(r, c)| relative_error(r.dto, c))
            .fold(0.0, f64::max)
    }

    pub fn kkt_closed_form_error(&self) -> f64 {
        self.report
            .rows
            .iter()
            .zip(self.closed_form)
            .filter_map(|(r, c)| r.kkt.map(|k| relative_error(k, c)))
            .fold(0.0, f64::max)
    }

    /// `param,dto,kkt,fd,closed_form,relerr_dto_fd,relerr_kkt_fd,relerr_dto_kkt`
    pub fn to_csv(&self) -> String {
        let mut out = String::from("param,dto,kkt,fd,closed_form,relerr_dto_fd,relerr_kkt_fd,relerr_dto_kkt\n");
        for ((r, name), c) in self.report.rows.iter().zip(["w0", "rho"]).zip(self.closed_form) {
            let _ = writeln!(
                out,
                "{name},{:e},{:e},{:e},{c:e},{:e},{:e},{:e}",
                r.dto,
                r.kkt.unwrap_or(f64::NAN),
                r.fd,
                r.relerr_dto_fd(),
                r.relerr_kkt_fd().unwrap_or(f64::NAN),
                r.relerr_dto_kkt().unwrap_or(f64::NAN),
            );
        }
        out
    }
}

fn scalar_block(steps: usize, w0: f64, rho: f64) -> Result<OdeBlock> {
    OdeBlock::scalar(OdeBlockSchedule::config1(steps)?, w0, rho)
}

/// `z(1)` and `(dJ/dw0, dJ/drho)` of the discrete scalar network with `steps` Euler steps.
pub fn scalar_dto(steps: usize, w0: f64, rho: f64) -> Result<(f64, [f64; 2])> {
    let block = scalar_block(steps, w0, rho)?;
    let (z1, tape) = block.forward(&Tensor4::filled([1, 1, 1, 1], SCALAR_Z0), Mode::Train)?;
    let mut grads = Gradients::new();
    block.backward(&tape, &Tensor4::filled([1, 1, 1, 1], 1.0), &mut grads)?;
    let gw = grads.require("scalar.conv.weight")?[0];
    let gr = grads.require("scalar.conv.rda")?[3];
    Ok((z1.data()[0], [gw, gr]))
}

/// DTO on `dto_steps`, the continuous adjoint on `kkt_steps`, and central differences of the
/// discrete network with step `eps`.
pub fn scalar_system_check(dto_steps: usize, kkt_steps: usize, eps: f64) -> Result<ScalarCheck> {
    let (_, dto) = scalar_dto(dto_steps, SCALAR_W0, SCALAR_RHO)?;
    let one = DVector::from_element(1, 1.0);
    let kkt = solve_kkt(
        &ScalarLinearSystem,
        &(SCALAR_Z0 * &one),
        &(SCALAR_W0 * &one),
        &DVector::from_element(1, SCALAR_RHO),
        kkt_steps,
    )?;
    let fd = finite_difference_gradient(
        |x| {
            let block = scalar_block(dto_steps, x[0], x[1])?;
            Ok(block
                .forward(&Tensor4::filled([1, 1, 1, 1], SCALAR_Z0), Mode::Train)?
                .0
                .data()[0])
        },
        &[SCALAR_W0, SCALAR_RHO],
        eps,
    )?;
    let (_, gw, gr) = ScalarLinearSystem::closed_form(SCALAR_Z0, SCALAR_W0, SCALAR_RHO);
    let report = compare_gradients(&dto, Some(&[kkt.g_w0[0], kkt.g_p[0]]), &fd)?;
    Ok(ScalarCheck {
        dto_steps,
        kkt_steps,
        report,
        closed_form: [gw, gr],
    })
}
