use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use anodev2::data::{encode_cifar10, shuffled_indices, synthetic_blobs, LabeledBatch, TEST_FILE, TRAIN_FILES};
use anodev2_cli::{EXIT_CHECK_FAILED, EXIT_USAGE};
use tempfile::TempDir;

fn anodev2(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_anodev2"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct MomentRow {
    sum: f64,
    mean_x: f64,
    mean_y: f64,
    variance: f64,
}

fn simulate(dir: &Path, args: &[&str]) -> Vec<MomentRow> {
    let out_dir = dir.to_str().unwrap();
    let mut all = vec!["simulate", "--out", out_dir];
    all.extend_from_slice(args);
    let out = anodev2(&all);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    fs::read_to_string(dir.join("moments.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let v: Vec<f64> = l.split(',').skip(1).map(|x| x.parse().unwrap()).collect();
            MomentRow {
                sum: v[0],
                mean_x: v[1],
                mean_y: v[2],
                variance: v[3],
            }
        })
        .collect()
}

#[test]
fn simulate_writes_one_frame_per_step() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), &["--grid", "16", "--d", "0.01", "--steps", "3"]);
    for i in 0..=3 {
        let bytes = fs::read(dir.path().join(format!("frame_{i:03}.pgm"))).unwrap();
        let (w, h, _) = anodev2_cli::read_pgm(&bytes).unwrap();
        assert_eq!((w, h), (16, 16));
    }
    let frames = fs::read_to_string(dir.path().join("frames.csv")).unwrap();
    assert_eq!(frames.lines().count(), 5);
    assert!(frames.starts_with("frame,file,min,max"));
}

#[test]
fn simulate_diffusion_spreads_linearly_and_conserves_mass() {
    let dir = TempDir::new().unwrap();
    let (d, dt, sigma0) = (1e-3, 0.05, 0.05);
    let rows = simulate(
        dir.path(),
        &[
            "--grid",
            "64",
            "--d",
            "1e-3",
            "--dt",
            "0.05",
            "--steps",
            "10",
            "--init",
            "gaussian:0.05",
        ],
    );
    for (step, r) in rows.iter().enumerate() {
        let expect = sigma0 * sigma0 + 2.0 * d * dt * step as f64;
        assert!(
            (r.variance / expect - 1.0).abs() < 0.01,
            "step {step}: {} vs {expect}",
            r.variance
        );
        assert!((r.sum / rows[0].sum - 1.0).abs() < 1e-12);
    }
}

#[test]
fn simulate_advection_transports_without_spreading() {
    let dir = TempDir::new().unwrap();
    let rows = simulate(
        dir.path(),
        &[
            "--grid",
            "64",
            "--vx",
            "0.25",
            "--vy",
            "-0.125",
            "--dt",
            "0.1",
            "--steps",
            "4",
            "--init",
            "gaussian:0.05",
        ],
    );
    for (step, r) in rows.iter().enumerate() {
        let t = 0.1 * step as f64;
        assert!(
            (r.mean_x - (rows[0].mean_x - 0.25 * t)).abs() < 1e-6,
            "step {step}: mean_x {}",
            r.mean_x
        );
        assert!(
            (r.mean_y - (rows[0].mean_y + 0.125 * t)).abs() < 1e-6,
            "step {step}: mean_y {}",
            r.mean_y
        );
        assert!((r.variance / rows[0].variance - 1.0).abs() < 0.01);
    }
}

#[test]
fn simulate_reaction_scales_mass_exponentially() {
    let dir = TempDir::new().unwrap();
    let rows = simulate(
        dir.path(),
        &["--grid", "16", "--rho", "-0.5", "--dt", "0.2", "--steps", "5"],
    );
    for (step, r) in rows.iter().enumerate() {
        let expect = rows[0].sum * (-0.5 * 0.2 * step as f64).exp();
        assert!((r.sum / expect - 1.0).abs() < 1e-10);
    }
}

#[test]
fn simulate_reads_text_grids() {
    let dir = TempDir::new().unwrap();
    let init = dir.path().join("init.txt");
    fs::write(&init, "0 0 0 0\n0 1 0 0\n0 0 0 0\n0 0 0 0\n").unwrap();
    let out = dir.path().join("out");
    let rows = simulate(&out, &["--init", init.to_str().unwrap(), "--steps", "1", "--d", "0.01"]);
    assert!((rows[0].mean_x - 0.25).abs() < 1e-12 && (rows[0].mean_y - 0.25).abs() < 1e-12);
    assert!((rows[1].sum - 1.0).abs() < 1e-12);
}

#[test]
fn simulate_rejects_bad_input() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["simulate", "--out", out, "--d", "-1"],
        vec!["simulate", "--out", out, "--dt", "0"],
        vec!["simulate", "--out", out, "--sigma", "relu"],
        vec!["simulate", "--out", out, "--init", "gaussian:x"],
        vec!["simulate", "--out", out, "--init", "/nonexistent/field.pgm"],
    ] {
        assert_eq!(code(&anodev2(&args)), EXIT_USAGE as i32, "{args:?}");
    }
}

#[test]
fn count_params_matches_published_baselines() {
    for (arch, total) in [("alexnet", 1_756_682), ("resnet4", 7_706), ("resnet10", 44_186)] {
        let out = anodev2(&["count-params", "--arch", arch, "--variant", "baseline"]);
        assert_eq!(code(&out), 0);
        assert!(
            stdout(&out).ends_with(&format!("total,{total}\n")),
            "{arch}: {}",
            stdout(&out)
        );
    }
}

#[test]
fn count_params_accepts_ode_variants_within_overhead() {
    let out = anodev2(&["count-params", "--arch", "resnet10", "--variant", "anodev2_c1"]);
    assert_eq!(code(&out), 0);
    let total: f64 = stdout(&out)
        .lines()
        .last()
        .unwrap()
        .trim_start_matches("total,")
        .parse()
        .unwrap();
    let overhead = total / 44_186.0 - 1.0;
    assert!((0.0..=0.067).contains(&overhead), "{overhead}");
}

#[test]
fn grad_check_tiny_network_passes() {
    let dir = TempDir::new().unwrap();
    let csv = dir.path().join("grad.csv");
    let out = anodev2(&[
        "grad-check",
        "--model",
        "tiny-resnet4",
        "--config",
        "1",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(&csv).unwrap();
    assert!(report.starts_with("param,index,dto,fd,relerr"));
    let worst = report
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-5, "{worst}");
}

#[test]
fn grad_check_absurd_step_fails_with_diagnostic() {
    let out = anodev2(&["grad-check", "--model", "tiny-resnet4", "--eps", "10"]);
    assert_ne!(code(&out), 0);
    assert_eq!(code(&out), EXIT_CHECK_FAILED as i32);
    assert!(!out.stderr.is_empty());
}

#[test]
fn grad_check_rejects_inconsistent_schedules() {
    for args in [
        vec![
            "grad-check",
            "--model",
            "tiny-resnet4",
            "--config",
            "1",
            "--nt",
            "3",
            "--ntheta",
            "4",
        ],
        vec!["grad-check", "--model", "tiny-resnet4", "--config", "2", "--nt", "3"],
        vec!["grad-check", "--model", "tiny-resnet4", "--config", "3"],
        vec!["grad-check", "--model", "scalar-system", "--config", "2"],
        vec!["grad-check", "--model", "tiny-resnet4", "--eps", "0"],
    ] {
        assert_eq!(code(&anodev2(&args)), EXIT_USAGE as i32, "{args:?}");
    }
}

#[test]
fn grad_check_scalar_system_reports_all_three_gradients() {
    let out = anodev2(&["grad-check", "--model", "scalar-system", "--nt", "64"]);
    let text = stdout(&out);
    assert!(text.starts_with("param,dto,kkt,fd,closed_form"));
    assert_eq!(text.lines().count(), 3);
    // the discrete network's first-order bias exceeds the tolerance at this resolution
    assert_eq!(code(&out), EXIT_CHECK_FAILED as i32);
}

#[test]
fn missing_data_directory_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("run");
    for args in [
        vec![
            "train",
            "--data",
            "/nonexistent/cifar",
            "--out",
            out_dir.to_str().unwrap(),
        ],
        vec!["eval", "--data", "/nonexistent/cifar"],
    ] {
        let out = anodev2(&args);
        assert_eq!(code(&out), EXIT_USAGE as i32);
        assert!(String::from_utf8_lossy(&out.stderr).contains("not found"));
    }
}

fn write_cifar(dir: &Path, per_file: usize, test: &LabeledBatch) {
    for (i, name) in TRAIN_FILES.iter().enumerate() {
        fs::write(
            dir.join(name),
            encode_cifar10(&synthetic_blobs(per_file, i as u64)).unwrap(),
        )
        .unwrap();
    }
    fs::write(dir.join(TEST_FILE), encode_cifar10(test).unwrap()).unwrap();
}

fn synthetic_cifar(dir: &Path, per_file: usize) {
    write_cifar(dir, per_file, &synthetic_blobs(1000, 99));
}

#[test]
fn untrained_model_scores_near_chance() {
    let dir = TempDir::new().unwrap();
    // balanced labels carrying no information about the images
    let blobs = synthetic_blobs(1000, 99);
    let labels = shuffled_indices(blobs.len(), 5, 0)
        .into_iter()
        .map(|i| blobs.labels[i])
        .collect();
    write_cifar(dir.path(), 10, &LabeledBatch::new(blobs.images, labels).unwrap());
    let out = anodev2(&["eval", "--arch", "resnet4", "--data", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let acc: f64 = stdout(&out).trim().trim_start_matches("accuracy,").parse().unwrap();
    assert!((acc - 0.1).abs() <= 0.03, "{acc}");
}

#[test]
fn train_then_eval_round_trips_through_checkpoints() {
    let dir = TempDir::new().unwrap();
    synthetic_cifar(dir.path(), 40);
    let data = dir.path().to_str().unwrap();
    let run = dir.path().join("run");
    let out = anodev2(&[
        "train",
        "--arch",
        "resnet4",
        "--variant",
        "anodev2_c1",
        "--data",
        data,
        "--test-subset",
        "100",
        "--epochs",
        "2",
        "--batch-size",
        "50",
        "--width",
        "4",
        "--full-storage",
        "--out",
        run.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let history = fs::read_to_string(run.join("history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    let final_acc: f64 = stdout(&out)
        .lines()
        .find_map(|l| l.strip_prefix("final_accuracy,"))
        .unwrap()
        .parse()
        .unwrap();
    let eval = anodev2(&[
        "eval",
        "--checkpoint",
        run.join("final.anv2").to_str().unwrap(),
        "--data",
        data,
        "--subset",
        "100",
    ]);
    assert_eq!(code(&eval), 0);
    assert_eq!(stdout(&eval).trim(), format!("accuracy,{final_acc}"));
    assert!(run.join("best.anv2").is_file());
}
