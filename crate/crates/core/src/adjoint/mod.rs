//! Independent gradient oracles: the continuous adjoint system and finite differences.

mod checks;
mod compare;
mod fd;
mod kkt;

pub use checks::{
    model_gradient_check, scalar_dto, scalar_system_check, tiny_resnet4, FdSettings, ModelCheck, ParamCheck,
    ScalarCheck, MODEL_CHECK_TOLERANCE, SCALAR_CHECK_TOLERANCE, SCALAR_RHO, SCALAR_W0, SCALAR_Z0, TINY_INPUT,
    TINY_LABELS, TINY_WIDTH,
};
pub use compare::{compare_gradients, max_relative_error, relative_error, GradientReport, GradientRow};
pub use fd::{adaptive_finite_difference_gradient, finite_difference_gradient, DEFAULT_FD_EPS};
pub use kkt::{
    forward_objective, forward_trajectories, solve_kkt, AdjointState, KktSolution, ScalarLinearSystem, SmallSystem,
};
