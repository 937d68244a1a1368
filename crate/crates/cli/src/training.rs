use std::path::Path;

use anodev2::checkpoint::{load_checkpoint, save_checkpoint};
use anodev2::data::{load_cifar10_split, LabeledBatch};
use anodev2::models::{build_model, count_parameters, parameter_budget, ModelSpec};
use anodev2::ode::CheckpointMode;
use anodev2::trainer::{self, evaluate, TrainConfig, TrainOutputs};

use crate::error::{CliError, CliResult};
use crate::{create_dir, write_file, CountParamsArgs, EvalArgs, TrainArgs};

pub fn count_params(args: &CountParamsArgs) -> CliResult<()> {
    let model = build_model(&ModelSpec::new(args.arch, args.variant))?;
    let report = count_parameters(&model);
    let csv = report.to_csv();
    print!("{csv}");
    if let Some(path) = &args.out {
        write_file(path, &csv)?;
    }
    let budget = parameter_budget(args.arch, args.variant, report.total);
    eprintln!(
        "reference {} parameters, overhead {:+.4}%",
        budget.reference,
        budget.overhead * 100.0
    );
    if !budget.pass {
        return Err(CliError::CheckFailed(format!(
            "{} parameters is outside the budget for {:?} {:?} (reference {}, overhead limit {})",
            report.total,
            args.arch,
            args.variant,
            budget.reference,
            args.variant.overhead_limit()
        )));
    }
    Ok(())
}

fn load_split(dir: &Path, train: bool, subset: Option<usize>) -> CliResult<LabeledBatch> {
    let data = load_cifar10_split(dir, train)?;
    Ok(match subset {
        Some(n) => data.take(n),
        None => data,
    })
}

pub fn train(args: &TrainArgs) -> CliResult<()> {
    if !(args.lr > 0.0 && args.lr.is_finite()) {
        return Err(CliError::Usage(format!("--lr must be positive, got {}", args.lr)));
    }
    if args.epochs == 0 {
        return Err(CliError::Usage("--epochs must be positive".into()));
    }
    let config = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        lr0: args.lr,
        decay_epochs: args.decay_epochs.clone(),
        seed: args.seed,
        augment: !args.no_augment,
        ..TrainConfig::desk_scale()
    };
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let train_set = load_split(&args.data, true, args.subset)?;
    let test_set = load_split(&args.data, false, args.test_subset)?;
    let mut spec = ModelSpec::new(args.arch, args.variant).with_seed(args.seed);
    if let Some(w) = args.width {
        spec = spec.with_width(w);
    }
    let mut model = build_model(&spec)?;
    if args.full_storage {
        model.set_checkpoint_mode(CheckpointMode::FullStorage);
    }
    create_dir(&args.out)?;
    let outputs = TrainOutputs {
        history_csv: Some(args.out.join("history.csv")),
        best_checkpoint: Some(args.out.join("best.anv2")),
    };
    eprintln!(
        "training {:?} {:?} ({} parameters) on {} images, testing on {}",
        args.arch,
        args.variant,
        model.num_parameters(),
        train_set.len(),
        test_set.len()
    );
    let history = trainer::train(&mut model, &train_set, &test_set, &config, &outputs, |r| {
        eprintln!(
            "epoch {:>3}  lr {:.4}  loss {:.4}  test acc {:.4}",
            r.epoch, r.lr, r.train_loss, r.test_acc
        );
    })?;
    save_checkpoint(&model, args.out.join("final.anv2"))?;
    let last = history.records.last().map_or(f64::NAN, |r| r.test_acc);
    println!("final_accuracy,{last}");
    println!("best_accuracy,{}", history.best_accuracy().unwrap_or(f64::NAN));
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CliResult<()> {
    let model = match &args.checkpoint {
        Some(path) => load_checkpoint(path)?,
        None => build_model(&ModelSpec::new(args.arch, args.variant).with_seed(args.seed))?,
    };
    let test_set = load_split(&args.data, false, args.subset)?;
    let accuracy = evaluate(&model, &test_set, args.batch_size)?;
    println!("accuracy,{accuracy}");
    if let Some(path) = &args.out {
        write_file(path, format!("images,accuracy\n{},{accuracy}\n", test_set.len()))?;
    }
    Ok(())
}
