use regionret_core::loss::check::{self, CheckConfig, Tamper};

use crate::config::ConfigFile;
use crate::error::{CliError, CliResult};

#[derive(Debug, clap::Args)]
pub struct Args {
    #[arg(long)]
    seed: Option<u64>,
    /// Random instances per gradient check.
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    max_batch: Option<usize>,
    #[arg(long)]
    max_dim: Option<usize>,
    #[arg(long)]
    max_patches: Option<usize>,
    /// Finite-difference step.
    #[arg(long)]
    step: Option<f64>,
    /// Relative gradient tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Negate the analytic gradients, so the gradient checks must fail.
    #[arg(long, hide = true)]
    inject_sign_flip: bool,
}

pub const DEFAULT_SEED: u64 = 1;

pub fn run(args: Args, file: &ConfigFile) -> CliResult<()> {
    let d = CheckConfig::default();
    let cfg = CheckConfig {
        instances: args.instances.unwrap_or(d.instances),
        max_batch: args.max_batch.unwrap_or(d.max_batch),
        max_dim: args.max_dim.unwrap_or(d.max_dim),
        max_patches: args.max_patches.unwrap_or(d.max_patches),
        step: args.step.unwrap_or(d.step),
        tolerance: args.tolerance.unwrap_or(d.tolerance),
        tau_global: file.tau_global.unwrap_or(d.tau_global),
        tau_local: file.tau_local.unwrap_or(d.tau_local),
    };
    if cfg.max_batch < 2 || cfg.max_dim < 1 || cfg.max_patches < 1 {
        return Err(CliError::Usage(
            "max-batch must be at least 2, max-dim and max-patches at least 1".into(),
        ));
    }
    if !(cfg.step > 0.0 && cfg.tolerance > 0.0) {
        return Err(CliError::Usage("step and tolerance must be positive".into()));
    }
    let tamper = if args.inject_sign_flip {
        Tamper::FlipGradientSign
    } else {
        Tamper::None
    };
    let seed = args.seed.or(file.seed).unwrap_or(DEFAULT_SEED);

    let report = check::run_suite(seed, &cfg, tamper)?;
    let mut text = serde_json::to_vec_pretty(&report).expect("report serializes");
    text.push(b'\n');
    crate::emit(None, &text)?;
    if report.passed {
        Ok(())
    } else {
        let failed: Vec<&str> = report
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect();
        Err(CliError::Invalid(format!("failed checks: {}", failed.join(", "))))
    }
}
