use std::fmt::Write as _;

use crate::error::{check_dim, Result};

const SAFE_DENOMINATOR: f64 = 1e-12;

/// `|a - b| / max(|a|, |b|, 1e-12)`
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(SAFE_DENOMINATOR)
}

pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| relative_error(x, y)).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientRow {
    pub index: usize,
    pub dto: f64,
    pub kkt: Option<f64>,
    pub fd: f64,
}

impl GradientRow {
    pub fn relerr_dto_fd(&self) -> f64 {
        relative_error(self.dto, self.fd)
    }

    pub fn relerr_kkt_fd(&self) -> Option<f64> {
        self.kkt.map(|k| relative_error(k, self.fd))
    }

    pub fn relerr_dto_kkt(&self) -> Option<f64> {
        self.kkt.map(|k| relative_error(self.dto, k))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientReport {
    pub rows: Vec<GradientRow>,
}

impl GradientReport {
    pub fn max_dto_fd(&self) -> f64 {
        self.rows.iter().map(GradientRow::relerr_dto_fd).fold(0.0, f64::max)
    }

    pub fn max_kkt_fd(&self) -> Option<f64> {
        self.rows
            .iter()
            .map(GradientRow::relerr_kkt_fd)
            .try_fold(0.0, |m, e| e.map(|e| f64::max(m, e)))
    }

    pub fn max_dto_kkt(&self) -> Option<f64> {
        self.rows
            .iter()
            .map(GradientRow::relerr_dto_kkt)
            .try_fold(0.0, |m, e| e.map(|e| f64::max(m, e)))
    }

    /// Largest error over every available pairing.
    pub fn max_error(&self) -> f64 {
        let mut m = self.max_dto_fd();
        if let Some(e) = self.max_kkt_fd() {
            m = m.max(e);
        }
        if let Some(e) = self.max_dto_kkt() {
            m = m.max(e);
        }
        m
    }

    /// CSV with columns `index,dto,kkt,fd,relerr_dto_fd,relerr_kkt_fd`; missing KKT values are empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,dto,kkt,fd,relerr_dto_fd,relerr_kkt_fd\n");
        for r in &self.rows {
            let kkt = r.kkt.map(|v| format!("{v:e}")).unwrap_or_default();
            let rk = r.relerr_kkt_fd().map(|v| format!("{v:e}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{:e},{},{:e},{:e},{}",
                r.index,
                r.dto,
                kkt,
                r.fd,
                r.relerr_dto_fd(),
                rk
            );
        }
        out
    }
}

pub fn compare_gradients(dto: &[f64], kkt: Option<&[f64]>, fd: &[f64]) -> Result<GradientReport> {
    check_dim("compare_gradients", "fd length", dto.len(), fd.len())?;
    if let Some(k) = kkt {
        check_dim("compare_gradients", "kkt length", dto.len(), k.len())?;
    }
    let rows = (0..dto.len())
        .map(|i| GradientRow {
            index: i,
            dto: dto[i],
            kkt: kkt.map(|k| k[i]),
            fd: fd[i],
        })
        .collect();
    Ok(GradientReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_vectors() {
        let v = [1.0, -2.0, 0.0];
        let r = compare_gradients(&v, Some(&v), &v).unwrap();
        assert_eq!(r.max_error(), 0.0);
    }

    #[test]
    fn safe_denominator_on_near_zero() {
        let r = compare_gradients(&[1.0, 0.0], None, &[1.0, 1e-13]).unwrap();
        // 1e-13 / max(0, 1e-13, 1e-12)
        assert!((r.rows[1].relerr_dto_fd() - 0.1).abs() < 1e-15);
        assert_eq!(r.rows[0].relerr_dto_fd(), 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(compare_gradients(&[1.0], None, &[1.0, 2.0]).is_err());
        assert!(compare_gradients(&[1.0], Some(&[1.0, 2.0]), &[1.0]).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = compare_gradients(&[2.0], None, &[1.0]).unwrap();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "index,dto,kkt,fd,relerr_dto_fd,relerr_kkt_fd");
        let fields: Vec<_> = lines.next().unwrap().split(',').collect();
        assert_eq!(fields.len(), 6);
        assert_eq!(fields[2], "");
        assert_eq!(fields[4].parse::<f64>().unwrap(), 0.5);
    }
}
