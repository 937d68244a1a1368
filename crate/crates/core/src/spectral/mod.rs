//! Weight evolution under the reaction-diffusion-advection operator.

mod dft;
mod oracle;
mod rda;

pub use dft::{dft2, idft2, signed_frequency, Dft2, IMAGINARY_RESIDUE_LIMIT};
pub use oracle::rda_explicit_oracle;
pub use rda::{
    rda_step, rda_step_backward, rda_step_cached, rda_symbol, rda_trajectory, rda_trajectory_prefix, Nonlinearity,
    RdaCoefficients, RdaStepCache, RdaStepGrad, RdaTrajectory, SpectralSymbol,
};
