//! Explicit finite-difference integrator of the same PDE, used only to check the
//! spectral propagator.

use super::rda::{Nonlinearity, RdaCoefficients};
use crate::error::{Error, Result};
use crate::kernel::KernelField;

const DIFFUSION_LIMIT: f64 = 0.25;
const ADVECTION_LIMIT: f64 = 0.5;

/// Forward Euler in time with centered second differences for the Laplacian and centered
/// first differences for the gradient, on the periodic grid with spacing `h = 1 / k`.
pub fn rda_explicit_oracle(
    w: &KernelField,
    p: RdaCoefficients,
    dt: f64,
    substeps: usize,
    sigma: Nonlinearity,
) -> Result<KernelField> {
    if substeps == 0 {
        return Err(Error::InvalidArgument("oracle needs at least one substep".into()));
    }
    let k = w.size();
    let h = 1.0 / k as f64;
    let tau = dt / substeps as f64;
    let diffusion_number = p.d * tau / (h * h);
    if diffusion_number > DIFFUSION_LIMIT {
        return Err(Error::Cfl {
            bound: "d * tau / h^2",
            value: diffusion_number,
            limit: DIFFUSION_LIMIT,
        });
    }
    let courant = p.vx.hypot(p.vy) * tau / h;
    if courant > ADVECTION_LIMIT {
        return Err(Error::Cfl {
            bound: "|v| * tau / h",
            value: courant,
            limit: ADVECTION_LIMIT,
        });
    }

    let mut out = Vec::with_capacity(w.data().len());
    let mut cur = vec![0.0; k * k];
    let mut next = vec![0.0; k * k];
    for slice in w.slices() {
        cur.copy_from_slice(slice);
        for _ in 0..substeps {
            for r in 0..k {
                let up = (r + k - 1) % k;
                let down = (r + 1) % k;
                for c in 0..k {
                    let left = (c + k - 1) % k;
                    let right = (c + 1) % k;
                    let centre = cur[r * k + c];
                    let lap = (cur[r * k + left] + cur[r * k + right] + cur[up * k + c] + cur[down * k + c]
                        - 4.0 * centre)
                        / (h * h);
                    let dx = (cur[r * k + right] - cur[r * k + left]) / (2.0 * h);
                    let dy = (cur[down * k + c] - cur[up * k + c]) / (2.0 * h);
                    let rhs = p.d * lap + p.vx * dx + p.vy * dy + p.rho * centre;
                    let rate = match sigma {
                        Nonlinearity::Tanh => rhs.tanh(),
                        Nonlinearity::Identity => rhs,
                    };
                    next[r * k + c] = centre + tau * rate;
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.extend_from_slice(&cur);
    }
    KernelField::from_vec(w.out_channels(), w.in_channels(), k, out)
}
