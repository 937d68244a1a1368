//! Direct two-dimensional DFT for small square grids.
//!
//! Grids are row-major `k x k`; bin `(u, v)` is row frequency `u`, column frequency `v`.
//! The forward transform is unnormalized, the inverse divides by `k^2`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Largest imaginary part `idft2` tolerates before reporting broken Hermitian symmetry.
pub const IMAGINARY_RESIDUE_LIMIT: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Dft2 {
    k: usize,
    /// `exp(-2 pi i j / k)`
    twiddle: Vec<Complex64>,
}

impl Dft2 {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("DFT grid size must be at least 1".into()));
        }
        let twiddle = (0..k)
            .map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / k as f64))
            .collect();
        Ok(Self { k, twiddle })
    }

    pub fn size(&self) -> usize {
        self.k
    }

    fn check_len(&self, len: usize) -> Result<()> {
        crate::error::check_dim("dft2", "grid length", self.k * self.k, len)
    }

    /// One-dimensional pass over every row (`along_rows`) or every column.
    fn pass(&self, data: &mut [Complex64], along_rows: bool, inverse: bool) {
        let k = self.k;
        let mut line = vec![Complex64::new(0.0, 0.0); k];
        for outer in 0..k {
            let at = |i: usize| if along_rows { outer * k + i } else { i * k + outer };
            for (freq, slot) in line.iter_mut().enumerate() {
                let mut acc = Complex64::new(0.0, 0.0);
                for x in 0..k {
                    let tw = self.twiddle[(freq * x) % k];
                    let tw = if inverse { tw.conj() } else { tw };
                    acc += data[at(x)] * tw;
                }
                *slot = acc;
            }
            for (i, v) in line.iter().enumerate() {
                data[at(i)] = *v;
            }
        }
    }

    pub fn forward_complex(&self, data: &mut [Complex64]) -> Result<()> {
        self.check_len(data.len())?;
        self.pass(data, true, false);
        self.pass(data, false, false);
        Ok(())
    }

    /// Inverse transform including the `1 / k^2` normalization.
    pub fn inverse_complex(&self, data: &mut [Complex64]) -> Result<()> {
        self.check_len(data.len())?;
        self.pass(data, true, true);
        self.pass(data, false, true);
        let scale = 1.0 / (self.k * self.k) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
        Ok(())
    }

    pub fn forward(&self, grid: &[f64]) -> Result<Vec<Complex64>> {
        self.check_len(grid.len())?;
        let mut data: Vec<Complex64> = grid.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward_complex(&mut data)?;
        Ok(data)
    }

    /// Inverse transform to a real grid; fails if the discarded imaginary part exceeds
    /// [`IMAGINARY_RESIDUE_LIMIT`].
    pub fn inverse_real(&self, spectrum: &[Complex64]) -> Result<Vec<f64>> {
        let mut data = spectrum.to_vec();
        self.inverse_complex(&mut data)?;
        let residue = data.iter().fold(0.0f64, |m, c| m.max(c.im.abs()));
        if residue >= IMAGINARY_RESIDUE_LIMIT {
            return Err(Error::ImaginaryResidue {
                residue,
                limit: IMAGINARY_RESIDUE_LIMIT,
            });
        }
        Ok(data.into_iter().map(|c| c.re).collect())
    }
}

pub fn dft2(grid: &[f64], k: usize) -> Result<Vec<Complex64>> {
    Dft2::new(k)?.forward(grid)
}

pub fn idft2(spectrum: &[Complex64], k: usize) -> Result<Vec<f64>> {
    Dft2::new(k)?.inverse_real(spectrum)
}

/// Signed integer frequency of bin index `m` on a `k`-point axis.
#[inline]
pub fn signed_frequency(m: usize, k: usize) -> i64 {
    if 2 * m <= k {
        m as i64
    } else {
        m as i64 - k as i64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Textbook quadruple sum, independent of the separable passes.
    fn brute_force(grid: &[f64], k: usize) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); k * k];
        for u in 0..k {
            for v in 0..k {
                for r in 0..k {
                    for c in 0..k {
                        let angle = -2.0 * PI * ((u * r + v * c) as f64) / k as f64;
                        out[u * k + v] += grid[r * k + c] * Complex64::from_polar(1.0, angle);
                    }
                }
            }
        }
        out
    }

    fn pseudo_random(len: usize, seed: u64) -> Vec<f64> {
        let mut s = seed;
        (0..len)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn constant_field_is_dc_only() {
        let k = 5;
        let f = dft2(&vec![1.5; k * k], k).unwrap();
        assert!((f[0] - Complex64::new(1.5 * 25.0, 0.0)).norm() < 1e-12);
        assert!(f[1..].iter().all(|c| c.norm() < 1e-12));
    }

    #[test]
    fn roundtrip() {
        for k in [1, 2, 3, 4, 5, 7] {
            let x = pseudo_random(k * k, k as u64);
            let back = idft2(&dft2(&x, k).unwrap(), k).unwrap();
            for (a, b) in x.iter().zip(&back) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_brute_force() {
        for k in [3, 4, 5] {
            let x = pseudo_random(k * k, 11);
            let fast = dft2(&x, k).unwrap();
            let slow = brute_force(&x, k);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_columns_hit_bins_one_and_three() {
        let k = 4;
        let grid: Vec<f64> = (0..k * k)
            .map(|i| (2.0 * PI * (i % k) as f64 / k as f64).cos())
            .collect();
        let f = dft2(&grid, k).unwrap();
        for u in 0..k {
            for v in 0..k {
                let mag = f[u * k + v].norm();
                if u == 0 && (v == 1 || v == 3) {
                    assert!((mag - 8.0).abs() < 1e-12);
                } else {
                    assert!(mag < 1e-12, "bin ({u},{v}) = {mag}");
                }
            }
        }
    }

    #[test]
    fn residue_is_detected() {
        let mut spec = vec![Complex64::new(0.0, 0.0); 9];
        spec[1] = Complex64::new(0.0, 1.0);
        assert!(matches!(idft2(&spec, 3), Err(Error::ImaginaryResidue { .. })));
    }

    #[test]
    fn frequencies() {
        assert_eq!(
            (0..5).map(|m| signed_frequency(m, 5)).collect::<Vec<_>>(),
            vec![0, 1, 2, -2, -1]
        );
        assert_eq!(
            (0..4).map(|m| signed_frequency(m, 4)).collect::<Vec<_>>(),
            vec![0, 1, 2, -1]
        );
    }
}
