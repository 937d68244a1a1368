//! Optimize-then-discretize reference: the continuous adjoint (KKT) system of the
//! coupled activation/weight ODE, discretized with explicit Euler on a uniform grid.
//!
//! With a Dirac-delta time kernel the parameters seen by `f` are the weights
//! themselves, `theta(t) = w(t)`, and the adjoints satisfy
//!
//! ```text
//! alpha(1) = -dJ/dz1,          d(alpha)/dt = -(df/dz)^T alpha
//! gamma(t) = (df/dtheta)^T alpha(t)
//! beta(1)  = 0,                d(beta)/dt  = -(dq/dw)^T beta - gamma
//! g_w0 = dR/dw0 - beta(0),     g_p = dR/dp - int_0^1 (dq/dp)^T beta dt
//! ```
//!
//! `g_w0` and `g_p` are gradients of the objective `J(z1) + R(w0, p)` (ascent
//! direction): `alpha` and `beta` are the negated classical adjoints, so the minus
//! signs above cancel.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Desk-scale system for the oracle. Every dimension should stay small (<= 8).
pub trait SmallSystem {
    fn z_dim(&self) -> usize;
    fn w_dim(&self) -> usize;
    fn p_dim(&self) -> usize;

    /// `dz/dt = f(z, theta)`
    fn f(&self, z: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64>;
    fn df_dz(&self, z: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64>;
    fn df_dtheta(&self, z: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64>;

    /// `dw/dt = q(w, p)`
    fn q(&self, w: &DVector<f64>, p: &DVector<f64>) -> DVector<f64>;
    fn dq_dw(&self, w: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64>;
    fn dq_dp(&self, w: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64>;

    fn terminal_loss(&self, z1: &DVector<f64>) -> f64;
    fn terminal_grad(&self, z1: &DVector<f64>) -> DVector<f64>;

    fn regularizer(&self, _w0: &DVector<f64>, _p: &DVector<f64>) -> f64 {
        0.0
    }
    fn regularizer_grad_w0(&self, _w0: &DVector<f64>, _p: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.w_dim())
    }
    fn regularizer_grad_p(&self, _w0: &DVector<f64>, _p: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.p_dim())
    }
}

/// Adjoint trajectories sampled at `t_i = i / steps`, `i = 0..=steps`.
#[derive(Debug, Clone)]
pub struct AdjointState {
    pub alpha: Vec<DVector<f64>>,
    pub beta: Vec<DVector<f64>>,
    pub gamma: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct KktSolution {
    pub g_w0: DVector<f64>,
    pub g_p: DVector<f64>,
    pub objective: f64,
    pub z: Vec<DVector<f64>>,
    pub w: Vec<DVector<f64>>,
    pub state: AdjointState,
}

fn check_inputs<S: SmallSystem + ?Sized>(
    system: &S,
    z0: &DVector<f64>,
    w0: &DVector<f64>,
    p: &DVector<f64>,
    steps: usize,
) -> Result<()> {
    check_dim("solve_kkt", "z0 length", system.z_dim(), z0.len())?;
    check_dim("solve_kkt", "w0 length", system.w_dim(), w0.len())?;
    check_dim("solve_kkt", "p length", system.p_dim(), p.len())?;
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "KKT grid needs at least 2 steps, got {steps}"
        )));
    }
    Ok(())
}

fn finite(v: &DVector<f64>, what: &str, i: usize) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!(
            "{what} at grid point {i}; system too stiff for this grid"
        )))
    }
}

/// Explicit-Euler forward solve of `w` then `z`; returns both trajectories.
pub fn forward_trajectories<S: SmallSystem + ?Sized>(
    system: &S,
    z0: &DVector<f64>,
    w0: &DVector<f64>,
    p: &DVector<f64>,
    steps: usize,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let h = 1.0 / steps as f64;
    let mut w = Vec::with_capacity(steps + 1);
    w.push(w0.clone());
    for i in 0..steps {
        let next = &w[i] + system.q(&w[i], p) * h;
        finite(&next, "w", i + 1)?;
        w.push(next);
    }
    let mut z = Vec::with_capacity(steps + 1);
    z.push(z0.clone());
    for i in 0..steps {
        let next = &z[i] + system.f(&z[i], &w[i]) * h;
        finite(&next, "z", i + 1)?;
        z.push(next);
    }
    Ok((z, w))
}

/// `J(z1) + R(w0, p)` from the forward solve on `steps` Euler steps.
pub fn forward_objective<S: SmallSystem + ?Sized>(
    system: &S,
    z0: &DVector<f64>,
    w0: &DVector<f64>,
    p: &DVector<f64>,
    steps: usize,
) -> Result<f64> {
    let (z, _) = forward_trajectories(system, z0, w0, p, steps)?;
    Ok(system.terminal_loss(&z[steps]) + system.regularizer(w0, p))
}

pub fn solve_kkt<S: SmallSystem + ?Sized>(
    system: &S,
    z0: &DVector<f64>,
    w0: &DVector<f64>,
    p: &DVector<f64>,
    steps: usize,
) -> Result<KktSolution> {
    check_inputs(system, z0, w0, p, steps)?;
    let h = 1.0 / steps as f64;
    let (z, w) = forward_trajectories(system, z0, w0, p, steps)?;

    let mut alpha = vec![DVector::zeros(system.z_dim()); steps + 1];
    alpha[steps] = -system.terminal_grad(&z[steps]);
    for i in (0..steps).rev() {
        let jac = system.df_dz(&z[i + 1], &w[i + 1]);
        alpha[i] = &alpha[i + 1] + jac.transpose() * &alpha[i + 1] * h;
        finite(&alpha[i], "alpha", i)?;
    }

    let gamma: Vec<DVector<f64>> = (0..=steps)
        .map(|i| system.df_dtheta(&z[i], &w[i]).transpose() * &alpha[i])
        .collect();

    let mut beta = vec![DVector::zeros(system.w_dim()); steps + 1];
    for i in (0..steps).rev() {
        let jac = system.dq_dw(&w[i + 1], p);
        beta[i] = &beta[i + 1] + (jac.transpose() * &beta[i + 1] + &gamma[i + 1]) * h;
        finite(&beta[i], "beta", i)?;
    }

    let mut integral = DVector::zeros(system.p_dim());
    for i in 0..=steps {
        let weight = if i == 0 || i == steps { 0.5 * h } else { h };
        integral += system.dq_dp(&w[i], p).transpose() * &beta[i] * weight;
    }

    let g_w0 = system.regularizer_grad_w0(w0, p) - &beta[0];
    let g_p = system.regularizer_grad_p(w0, p) - integral;
    let objective = system.terminal_loss(&z[steps]) + system.regularizer(w0, p);
    Ok(KktSolution {
        g_w0,
        g_p,
        objective,
        z,
        w,
        state: AdjointState { alpha, beta, gamma },
    })
}

/// `dz/dt = theta z`, `dw/dt = rho w`, `J = z(1)`, `R = 0`, with `theta = w` and `p = [rho]`.
///
/// Closed form: `z(1) = z0 exp(w0 (e^rho - 1) / rho)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScalarLinearSystem;

impl ScalarLinearSystem {
    /// `(z1, dJ/dw0, dJ/drho)` at `z0`.
    pub fn closed_form(z0: f64, w0: f64, rho: f64) -> (f64, f64, f64) {
        let e = rho.exp();
        let growth = (e - 1.0) / rho;
        let z1 = z0 * (w0 * growth).exp();
        let d_growth = (rho * e - e + 1.0) / (rho * rho);
        (z1, z1 * growth, z1 * w0 * d_growth)
    }
}

impl SmallSystem for ScalarLinearSystem {
    fn z_dim(&self) -> usize {
        1
    }
    fn w_dim(&self) -> usize {
        1
    }
    fn p_dim(&self) -> usize {
        1
    }
    fn f(&self, z: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, theta[0] * z[0])
    }
    fn df_dz(&self, _z: &DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, theta[0])
    }
    fn df_dtheta(&self, z: &DVector<f64>, _theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, z[0])
    }
    fn q(&self, w: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, p[0] * w[0])
    }
    fn dq_dw(&self, _w: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, p[0])
    }
    fn dq_dp(&self, w: &DVector<f64>, _p: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, w[0])
    }
    fn terminal_loss(&self, z1: &DVector<f64>) -> f64 {
        z1[0]
    }
    fn terminal_grad(&self, _z1: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, 1.0)
    }
}
