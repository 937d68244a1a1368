use anodev2::adjoint::{
    model_gradient_check, scalar_system_check, tiny_resnet4, FdSettings, MODEL_CHECK_TOLERANCE, SCALAR_CHECK_TOLERANCE,
};
use anodev2::models::Variant;
use anodev2::ode::OdeBlockSchedule;

use crate::error::{CliError, CliResult};
use crate::{write_file, CheckModel, GradCheckArgs};

const DEFAULT_NT: usize = 5;
const DEFAULT_NTHETA: usize = 10;
const DEFAULT_SCALAR_NT: usize = 512;
const KKT_REFINEMENT: usize = 8;

fn tiny_schedule(args: &GradCheckArgs) -> CliResult<(Variant, OdeBlockSchedule)> {
    if args.nkkt.is_some() {
        return Err(CliError::Usage("--nkkt applies to the scalar system only".into()));
    }
    if args.config == 1 {
        let n = args.nt.or(args.ntheta).unwrap_or(DEFAULT_NT);
        if args.nt.zip(args.ntheta).is_some_and(|(a, b)| a != b) {
            return Err(CliError::Usage(
                "configuration 1 shares its steps: --nt and --ntheta must agree".into(),
            ));
        }
        Ok((Variant::AnodeV2C1, OdeBlockSchedule::config1(n)?))
    } else {
        if args.nt.is_some_and(|n| n != 2) {
            return Err(CliError::Usage(
                "configuration 2 takes exactly two activation steps".into(),
            ));
        }
        Ok((
            Variant::AnodeV2C2,
            OdeBlockSchedule::config2(args.ntheta.unwrap_or(DEFAULT_NTHETA))?,
        ))
    }
}

/// Numerical failures at perturbed points mean the finite differences broke down.
fn breakdown(e: anodev2::Error) -> CliError {
    match e {
        anodev2::Error::ImaginaryResidue { .. } | anodev2::Error::NonFinite(_) | anodev2::Error::Cfl { .. } => {
            CliError::CheckFailed(format!("finite differences broke down: {e}"))
        }
        other => other.into(),
    }
}

fn emit(args: &GradCheckArgs, csv: String) -> CliResult<()> {
    match &args.out {
        Some(path) => write_file(path, csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

pub fn grad_check(args: &GradCheckArgs) -> CliResult<()> {
    if !(args.eps > 0.0 && args.eps.is_finite()) {
        return Err(CliError::Usage(format!("--eps must be positive, got {}", args.eps)));
    }
    match args.model {
        CheckModel::TinyResnet4 => {
            let (variant, schedule) = tiny_schedule(args)?;
            let (model, images, labels) = tiny_resnet4(variant, Some(schedule), args.seed)?;
            let fd = FdSettings {
                eps: args.eps,
                ..FdSettings::default()
            };
            let check = model_gradient_check(&model, &images, &labels, fd).map_err(breakdown)?;
            emit(args, check.to_csv())?;
            let (worst, err) = check.worst().unwrap_or(("none", 0.0));
            eprintln!("max relative error {err:e} ({worst}), tolerance {MODEL_CHECK_TOLERANCE:e}");
            if err.is_nan() || err > MODEL_CHECK_TOLERANCE {
                return Err(CliError::CheckFailed(format!(
                    "relative error {err:e} in {worst} exceeds {MODEL_CHECK_TOLERANCE:e}"
                )));
            }
            Ok(())
        }
        CheckModel::ScalarSystem => {
            if args.config != 1 {
                return Err(CliError::Usage("the scalar system uses configuration 1".into()));
            }
            if args.ntheta.is_some() {
                return Err(CliError::Usage("--ntheta does not apply to the scalar system".into()));
            }
            let nt = args.nt.unwrap_or(DEFAULT_SCALAR_NT);
            let nkkt = args.nkkt.unwrap_or(KKT_REFINEMENT * nt);
            let check = scalar_system_check(nt, nkkt, args.eps).map_err(breakdown)?;
            emit(args, check.to_csv())?;
            let err = check.max_error();
            eprintln!(
                "max pairwise relative error {err:e}, tolerance {SCALAR_CHECK_TOLERANCE:e}; \
                 against the continuous solution: dto {:e}, kkt {:e}",
                check.dto_closed_form_error(),
                check.kkt_closed_form_error()
            );
            if err.is_nan() || err > SCALAR_CHECK_TOLERANCE {
                return Err(CliError::CheckFailed(format!(
                    "DTO, KKT and finite differences disagree by {err:e} (tolerance {SCALAR_CHECK_TOLERANCE:e})"
                )));
            }
            Ok(())
        }
    }
}
