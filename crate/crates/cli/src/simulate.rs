use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anodev2::spectral::{rda_step, RdaCoefficients};
use anodev2::KernelField;

use crate::error::{CliError, CliResult};
use crate::{create_dir, write_file, SimulateArgs};

const DEFAULT_GRID: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialField {
    /// Unit-peak Gaussian centred at `(0.5, 0.5)`.
    Gaussian {
        sigma0: f64,
    },
    File(PathBuf),
}

impl InitialField {
    pub fn parse(spec: &str) -> CliResult<Self> {
        match spec.strip_prefix("gaussian:") {
            Some(s) => {
                let sigma0: f64 = s
                    .parse()
                    .map_err(|_| CliError::Usage(format!("--init gaussian:<sigma0>: {s:?} is not a number")))?;
                if !(sigma0 > 0.0 && sigma0.is_finite()) {
                    return Err(CliError::Usage(format!(
                        "gaussian width must be positive, got {sigma0}"
                    )));
                }
                Ok(InitialField::Gaussian { sigma0 })
            }
            None => Ok(InitialField::File(PathBuf::from(spec))),
        }
    }

    /// Grid side and row-major values.
    pub fn build(&self, grid: Option<usize>) -> CliResult<(usize, Vec<f64>)> {
        match self {
            InitialField::Gaussian { sigma0 } => {
                let n = grid.unwrap_or(DEFAULT_GRID);
                let values = (0..n * n)
                    .map(|i| {
                        let (x, y) = ((i % n) as f64 / n as f64 - 0.5, (i / n) as f64 / n as f64 - 0.5);
                        (-(x * x + y * y) / (2.0 * sigma0 * sigma0)).exp()
                    })
                    .collect();
                Ok((n, values))
            }
            InitialField::File(path) => {
                let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
                let (w, h, values) = if bytes.starts_with(b"P5") {
                    read_pgm(&bytes)?
                } else {
                    read_text_grid(&bytes)?
                };
                if w != h {
                    return Err(CliError::Usage(format!(
                        "{}: field must be square, got {w}x{h}",
                        path.display()
                    )));
                }
                if let Some(g) = grid.filter(|&g| g != w) {
                    return Err(CliError::Usage(format!(
                        "--grid {g} disagrees with the {w}x{w} field in {}",
                        path.display()
                    )));
                }
                Ok((w, values))
            }
        }
    }
}

fn read_text_grid(bytes: &[u8]) -> CliResult<(usize, usize, Vec<f64>)> {
    let text =
        std::str::from_utf8(bytes).map_err(|_| CliError::Usage("initial field file is not UTF-8 text".into()))?;
    let mut rows = Vec::new();
    for (line_no, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let row = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::Usage(format!("initial field line {}: {e}", line_no + 1)))?;
        rows.push(row);
    }
    let w = rows.first().map_or(0, Vec::len);
    if w == 0 || rows.iter().any(|r| r.len() != w) {
        return Err(CliError::Usage(
            "initial field rows must be non-empty and of equal length".into(),
        ));
    }
    Ok((w, rows.len(), rows.concat()))
}

/// Binary PGM to `(width, height, values / maxval)`.
pub fn read_pgm(bytes: &[u8]) -> CliResult<(usize, usize, Vec<f64>)> {
    let bad = |m: &str| CliError::Usage(format!("malformed PGM: {m}"));
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("not a P5 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("non-numeric header field"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let data = bytes
        .get(pos + 1..pos + 1 + w * h)
        .ok_or_else(|| bad("pixel data shorter than the header says"))?;
    Ok((w, h, data.iter().map(|&b| b as f64 / maxval as f64).collect()))
}

pub fn write_pgm(path: &std::path::Path, pixels: &[u8], width: usize, height: usize) -> CliResult<()> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    write_file(path, out)
}

/// Total mass, centre of mass and per-axis variance (mean of the x and y variances) of a
/// field on the unit square, point `(r, c)` at `(c / n, r / n)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldMoments {
    pub sum: f64,
    pub mean_x: f64,
    pub mean_y: f64,
    pub variance: f64,
}

pub fn moments(field: &[f64], n: usize) -> FieldMoments {
    let coord = |i: usize| ((i % n) as f64 / n as f64, (i / n) as f64 / n as f64);
    let sum: f64 = field.iter().sum();
    let (mut mx, mut my) = (0.0, 0.0);
    for (i, &v) in field.iter().enumerate() {
        let (x, y) = coord(i);
        mx += x * v;
        my += y * v;
    }
    mx /= sum;
    my /= sum;
    let mut var = 0.0;
    for (i, &v) in field.iter().enumerate() {
        let (x, y) = coord(i);
        var += ((x - mx).powi(2) + (y - my).powi(2)) * v;
    }
    FieldMoments {
        sum,
        mean_x: mx,
        mean_y: my,
        variance: var / (2.0 * sum),
    }
}

/// Min-max scale to bytes; a constant field maps to zero.
fn quantize(values: &[f64]) -> (Vec<u8>, f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let pixels = values
        .iter()
        .map(|&v| {
            if range > 0.0 {
                ((v - min) / range * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    (pixels, min, max)
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    for (name, v) in [("d", args.d), ("vx", args.vx), ("vy", args.vy), ("rho", args.rho)] {
        if !v.is_finite() {
            return Err(CliError::Usage(format!("--{name} must be finite")));
        }
    }
    if args.d < 0.0 {
        return Err(CliError::Usage(format!("--d must be non-negative, got {}", args.d)));
    }
    if !(args.dt > 0.0 && args.dt.is_finite()) {
        return Err(CliError::Usage(format!("--dt must be positive, got {}", args.dt)));
    }
    let (n, values) = InitialField::parse(&args.init)?.build(args.grid)?;
    if n < 2 {
        return Err(CliError::Usage(format!("grid must be at least 2x2, got {n}")));
    }
    create_dir(&args.out)?;
    let p = RdaCoefficients::new(args.d, args.vx, args.vy, args.rho);
    let mut field = KernelField::single(n, values)?;
    let mut frames = String::from("frame,file,min,max\n");
    let mut moment_rows = String::from("step,sum,mean_x,mean_y,variance\n");
    for step in 0..=args.steps {
        let file = format!("frame_{step:03}.pgm");
        let (pixels, min, max) = quantize(field.data());
        write_pgm(&args.out.join(&file), &pixels, n, n)?;
        let _ = writeln!(frames, "{step},{file},{min:e},{max:e}");
        let m = moments(field.data(), n);
        let _ = writeln!(
            moment_rows,
            "{step},{:e},{:e},{:e},{:e}",
            m.sum, m.mean_x, m.mean_y, m.variance
        );
        if step < args.steps {
            field = rda_step(&field, p, args.dt, args.sigma)?;
        }
    }
    write_file(&args.out.join("frames.csv"), frames)?;
    write_file(&args.out.join("moments.csv"), moment_rows)?;
    println!("wrote {} frames of {n}x{n} to {}", args.steps + 1, args.out.display());
    Ok(())
}
