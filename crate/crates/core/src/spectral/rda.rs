//! Exact frequency-domain propagator for `dw/dt = d Lap(w) + v . grad(w) + rho w` on the
//! periodic unit square, optionally followed by a pointwise nonlinearity, together with
//! its reverse-mode derivative.
//!
//! Wavenumbers: bin `m` on a `k`-point axis has signed frequency `f` and `k_j = 2 pi f`.
//! On even grids the Nyquist bin of an axis is its own mirror image, so the advection
//! phase there is replaced by its real part `cos(k_j v_j dt)`. This keeps the symbol
//! Hermitian and the output real, and is exact for whole-cell shifts.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::dft::{signed_frequency, Dft2};
use crate::error::{Error, Result};
use crate::kernel::KernelField;

/// Diffusion `d`, advection `(vx, vy)` and reaction `rho` of one evolved layer.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RdaCoefficients {
    pub d: f64,
    pub vx: f64,
    pub vy: f64,
    pub rho: f64,
}

impl RdaCoefficients {
    pub const LEN: usize = 4;

    pub fn new(d: f64, vx: f64, vy: f64, rho: f64) -> Self {
        Self { d, vx, vy, rho }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.d, self.vx, self.vy, self.rho]
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        crate::error::check_dim("RdaCoefficients", "coefficient count", Self::LEN, v.len())?;
        Ok(Self::new(v[0], v[1], v[2], v[3]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    #[default]
    Tanh,
    Identity,
}

impl Nonlinearity {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => x.tanh(),
            Nonlinearity::Identity => x,
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Nonlinearity::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Nonlinearity::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Nonlinearity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Nonlinearity::Tanh),
            "identity" => Ok(Nonlinearity::Identity),
            other => Err(Error::InvalidArgument(format!("unknown nonlinearity {other:?}"))),
        }
    }
}

/// Per-bin multiplier of one propagation step, plus its coefficient derivatives.
#[derive(Debug, Clone)]
pub struct SpectralSymbol {
    k: usize,
    dt: f64,
    values: Vec<Complex64>,
    /// `ds/dd`, `ds/dvx`, `ds/dvy`, `ds/drho`
    partials: [Vec<Complex64>; 4],
}

impl SpectralSymbol {
    pub fn size(&self) -> usize {
        self.k
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn at(&self, u: usize, v: usize) -> Complex64 {
        self.values[u * self.k + v]
    }

    pub fn partial(&self, coefficient: usize) -> &[Complex64] {
        &self.partials[coefficient]
    }
}

/// Advection factor of one axis and its derivative with respect to the phase.
fn axis_phase(phase: f64, nyquist: bool) -> (Complex64, Complex64) {
    if nyquist {
        (Complex64::new(phase.cos(), 0.0), Complex64::new(-phase.sin(), 0.0))
    } else {
        let e = Complex64::from_polar(1.0, phase);
        (e, Complex64::i() * e)
    }
}

pub fn rda_symbol(p: RdaCoefficients, k: usize, dt: f64) -> Result<SpectralSymbol> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step {dt} must be positive")));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("symbol grid size must be at least 1".into()));
    }
    let n = k * k;
    let mut values = Vec::with_capacity(n);
    let mut partials: [Vec<Complex64>; 4] = Default::default();
    for part in partials.iter_mut() {
        part.reserve(n);
    }
    for u in 0..k {
        let ky = 2.0 * PI * signed_frequency(u, k) as f64;
        let ny = k.is_multiple_of(2) && 2 * u == k;
        for v in 0..k {
            let kx = 2.0 * PI * signed_frequency(v, k) as f64;
            let nx = k.is_multiple_of(2) && 2 * v == k;
            let k2 = kx * kx + ky * ky;
            let decay = (dt * (-p.d * k2 + p.rho)).exp();
            let (ax, dax) = axis_phase(kx * p.vx * dt, nx);
            let (ay, day) = axis_phase(ky * p.vy * dt, ny);
            let s = ax * ay * decay;
            values.push(s);
            partials[0].push(s * (-dt * k2));
            partials[1].push(dax * ay * decay * (kx * dt));
            partials[2].push(ax * day * decay * (ky * dt));
            partials[3].push(s * dt);
        }
    }
    Ok(SpectralSymbol {
        k,
        dt,
        values,
        partials,
    })
}

/// Forward state retained for [`rda_step_backward`].
#[derive(Debug, Clone)]
pub struct RdaStepCache {
    pub input: KernelField,
    /// Linear propagation result before the nonlinearity.
    pub pre_activation: KernelField,
}

fn propagate(field: &KernelField, symbol: &SpectralSymbol, dft: &Dft2, conjugate: bool) -> Result<KernelField> {
    let mut out = Vec::with_capacity(field.data().len());
    for slice in field.slices() {
        let mut spec = dft.forward(slice)?;
        for (c, s) in spec.iter_mut().zip(symbol.values()) {
            *c *= if conjugate { s.conj() } else { *s };
        }
        out.extend(dft.inverse_real(&spec)?);
    }
    KernelField::from_vec(field.out_channels(), field.in_channels(), field.size(), out)
}

/// One step: every slice is multiplied by the shared symbol in frequency space, then the
/// nonlinearity is applied pointwise.
pub fn rda_step(w: &KernelField, p: RdaCoefficients, dt: f64, sigma: Nonlinearity) -> Result<KernelField> {
    rda_step_cached(w, p, dt, sigma).map(|(out, _)| out)
}

pub fn rda_step_cached(
    w: &KernelField,
    p: RdaCoefficients,
    dt: f64,
    sigma: Nonlinearity,
) -> Result<(KernelField, RdaStepCache)> {
    let symbol = rda_symbol(p, w.size(), dt)?;
    let dft = Dft2::new(w.size())?;
    step_with(w, &symbol, &dft, sigma)
}

fn step_with(
    w: &KernelField,
    symbol: &SpectralSymbol,
    dft: &Dft2,
    sigma: Nonlinearity,
) -> Result<(KernelField, RdaStepCache)> {
    if !w.all_finite() {
        return Err(Error::NonFinite("kernel field entering an RDA step".into()));
    }
    let pre = propagate(w, symbol, dft, false)?;
    let out = pre.map(|x| sigma.apply(x));
    Ok((
        out,
        RdaStepCache {
            input: w.clone(),
            pre_activation: pre,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct RdaStepGrad {
    pub grad_w: KernelField,
    /// `[d, vx, vy, rho]`
    pub grad_p: [f64; 4],
}

pub fn rda_step_backward(
    grad_out: &KernelField,
    cache: &RdaStepCache,
    p: RdaCoefficients,
    dt: f64,
    sigma: Nonlinearity,
) -> Result<RdaStepGrad> {
    let symbol = rda_symbol(p, cache.input.size(), dt)?;
    let dft = Dft2::new(cache.input.size())?;
    step_backward_with(grad_out, cache, &symbol, &dft, sigma)
}

fn step_backward_with(
    grad_out: &KernelField,
    cache: &RdaStepCache,
    symbol: &SpectralSymbol,
    dft: &Dft2,
    sigma: Nonlinearity,
) -> Result<RdaStepGrad> {
    grad_out.check_same_shape(&cache.input, "rda_step_backward")?;
    let grad_pre = KernelField::from_vec(
        grad_out.out_channels(),
        grad_out.in_channels(),
        grad_out.size(),
        grad_out
            .data()
            .iter()
            .zip(cache.pre_activation.data())
            .map(|(&g, &u)| g * sigma.derivative(u))
            .collect(),
    )?;
    // The linear step is a circular convolution with a real kernel; its adjoint
    // multiplies by the conjugate symbol.
    let grad_w = propagate(&grad_pre, symbol, dft, true)?;

    // <g, F^-1(ds * W)> = Re sum conj(G) ds W / k^2 over all slices.
    let mut grad_p = [0.0; 4];
    let norm = 1.0 / symbol.values().len() as f64;
    for (g_slice, w_slice) in grad_pre.slices().zip(cache.input.slices()) {
        let g_hat = dft.forward(g_slice)?;
        let w_hat = dft.forward(w_slice)?;
        for (c, acc) in grad_p.iter_mut().enumerate() {
            let sum: f64 = g_hat
                .iter()
                .zip(&w_hat)
                .zip(symbol.partial(c))
                .map(|((g, w), ds)| (g.conj() * ds * w).re)
                .sum();
            *acc += sum * norm;
        }
    }
    Ok(RdaStepGrad { grad_w, grad_p })
}

/// Weight snapshots `w(j / n)` for `j = 0..=n`, with the caches needed to differentiate them.
#[derive(Debug, Clone)]
pub struct RdaTrajectory {
    pub fields: Vec<KernelField>,
    caches: Vec<RdaStepCache>,
    p: RdaCoefficients,
    dt: f64,
    sigma: Nonlinearity,
}

impl RdaTrajectory {
    pub fn steps(&self) -> usize {
        self.caches.len()
    }

    pub fn coefficients(&self) -> RdaCoefficients {
        self.p
    }

    /// Reverse-accumulate gradients arriving at any subset of snapshots.
    ///
    /// `snapshot_grads[j]` is the gradient with respect to `fields[j]`.
    pub fn backward(&self, snapshot_grads: &[Option<KernelField>]) -> Result<RdaStepGrad> {
        crate::error::check_dim(
            "RdaTrajectory::backward",
            "snapshot count",
            self.fields.len(),
            snapshot_grads.len(),
        )?;
        let w0 = &self.fields[0];
        let mut carry = KernelField::zeros(w0.out_channels(), w0.in_channels(), w0.size());
        let mut grad_p = [0.0; 4];
        let last = snapshot_grads.iter().rposition(Option::is_some);
        let Some(last) = last else {
            return Ok(RdaStepGrad { grad_w: carry, grad_p });
        };
        let symbol = rda_symbol(self.p, w0.size(), self.dt)?;
        let dft = Dft2::new(w0.size())?;
        for j in (1..=last).rev() {
            if let Some(g) = &snapshot_grads[j] {
                g.check_same_shape(&carry, "RdaTrajectory::backward")?;
                carry.add_assign(g);
            }
            let step = step_backward_with(&carry, &self.caches[j - 1], &symbol, &dft, self.sigma)?;
            for (a, b) in grad_p.iter_mut().zip(step.grad_p) {
                *a += b;
            }
            carry = step.grad_w;
        }
        if let Some(g) = &snapshot_grads[0] {
            g.check_same_shape(&carry, "RdaTrajectory::backward")?;
            carry.add_assign(g);
        }
        Ok(RdaStepGrad { grad_w: carry, grad_p })
    }
}

/// Evolve over `[0, 1]` with `substeps` equal steps, keeping only the first `keep + 1`
/// snapshots (`keep <= substeps`).
pub fn rda_trajectory_prefix(
    w0: &KernelField,
    p: RdaCoefficients,
    substeps: usize,
    keep: usize,
    sigma: Nonlinearity,
) -> Result<RdaTrajectory> {
    if substeps == 0 {
        return Err(Error::InvalidArgument("trajectory needs at least one substep".into()));
    }
    if keep > substeps {
        return Err(Error::InvalidArgument(format!(
            "cannot keep {keep} of {substeps} substeps"
        )));
    }
    let dt = 1.0 / substeps as f64;
    let mut fields = Vec::with_capacity(keep + 1);
    let mut caches = Vec::with_capacity(keep);
    fields.push(w0.clone());
    if keep > 0 {
        let symbol = rda_symbol(p, w0.size(), dt)?;
        let dft = Dft2::new(w0.size())?;
        for j in 0..keep {
            let (next, cache) = step_with(&fields[j], &symbol, &dft, sigma)?;
            fields.push(next);
            caches.push(cache);
        }
    }
    Ok(RdaTrajectory {
        fields,
        caches,
        p,
        dt,
        sigma,
    })
}

/// Full trajectory `[w0, w(1/n), ..., w(1)]`.
pub fn rda_trajectory(
    w0: &KernelField,
    p: RdaCoefficients,
    substeps: usize,
    sigma: Nonlinearity,
) -> Result<RdaTrajectory> {
    rda_trajectory_prefix(w0, p, substeps, substeps, sigma)
}
