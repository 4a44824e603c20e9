use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fracopt::cli::{exit_code_for, load_config, run, Experiment, RunOptions, EXIT_INVALID_CONFIG};

#[derive(Parser)]
#[command(name = "fracopt", version, about = "Fractional semilinear state solves, optimal control and optimality probes")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// JSON run configuration (TOML when the name ends in .toml)
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config
    #[arg(long)]
    seed: Option<u64>,
    /// Exit with status 4 when a check fails
    #[arg(long = "assert")]
    assert_checks: bool,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment named in the config
    Run(Common),
    SolveState(Common),
    SolveControl(Common),
    CheckGradient(Common),
    CheckKkt(Common),
    CheckSsc(Common),
    CheckGrowthQuadratic(Common),
    CheckGrowthCondition(Common),
    ConvergenceStudy(Common),
    OperatorOracle(Common),
}

impl Command {
    fn split(self) -> (Option<&'static str>, Common) {
        match self {
            Command::Run(c) => (None, c),
            Command::SolveState(c) => (Some("solve-state"), c),
            Command::SolveControl(c) => (Some("solve-control"), c),
            Command::CheckGradient(c) => (Some("check-gradient"), c),
            Command::CheckKkt(c) => (Some("check-kkt"), c),
            Command::CheckSsc(c) => (Some("check-ssc"), c),
            Command::CheckGrowthQuadratic(c) => (Some("check-growth-quadratic"), c),
            Command::CheckGrowthCondition(c) => (Some("check-growth-condition"), c),
            Command::ConvergenceStudy(c) => (Some("convergence-study"), c),
            Command::OperatorOracle(c) => (Some("operator-oracle"), c),
        }
    }
}

fn main() -> ExitCode {
    let (name, common) = Args::parse().command.split();
    let result = load_config(&common.config).and_then(|mut cfg| {
        if let Some(name) = name {
            match &cfg.experiment {
                Some(e) if e.name() != name => {
                    return Err(fracopt::Error::Config {
                        path: "experiment.kind".into(),
                        reason: format!("config selects `{}` but `{name}` was requested", e.name()),
                    })
                }
                Some(_) => {}
                None => cfg.experiment = Some(Experiment::with_defaults(name)?),
            }
        }
        run(
            &cfg,
            &RunOptions {
                seed: common.seed,
                assert: common.assert_checks,
                out: common.out,
            },
        )
    });
    match result {
        Ok(outcome) => {
            for c in &outcome.report.checks {
                eprintln!("{} {}: {:e} (threshold {:e})", if c.pass { "ok  " } else { "FAIL" }, c.name, c.value, c.threshold);
            }
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code_for(&e);
            ExitCode::from(if code == 0 { EXIT_INVALID_CONFIG } else { code } as u8)
        }
    }
}
