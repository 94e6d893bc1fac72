//! `ldlm`: fit, compare and test distributed lag models from the command line.
//!
//! Exit codes: 0 success, 2 input error, 3 numerical failure (including
//! non-convergence, after the output has been written), 4 internal
//! invariant violation.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use ldlm_core::criteria::DecisionRule;
use ldlm_core::inference::Adjustment;

use commands::{BandKind, CliResult, Status};

#[derive(Parser)]
#[command(name = "ldlm", version, about = "Variational longitudinal distributed lag models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RuleArg {
    Min,
    Diff2,
    Diff5,
    Diff10,
}

impl From<RuleArg> for DecisionRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::Min => DecisionRule::Min,
            RuleArg::Diff2 => DecisionRule::Diff2,
            RuleArg::Diff5 => DecisionRule::Diff5,
            RuleArg::Diff10 => DecisionRule::Diff10,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BandArg {
    Pointwise,
    Simultaneous,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum AdjustArg {
    Bonferroni,
    Bh,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and write its posterior summary.
    Fit {
        /// Dataset CSV: subject,occasion,y,x1..xP,lag1..lagL.
        data: PathBuf,
        /// Model configuration JSON; falls back to $LDLM_CONFIG, then defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, short, default_value = "fit.json")]
        out: PathBuf,
    },
    /// Fit both random-effect structures and choose between them by VAIC.
    Select {
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "min")]
        rule: RuleArg,
        #[arg(long, short, default_value = "selection.json")]
        out: PathBuf,
    },
    /// Curve estimates with point-wise intervals and a simultaneous band.
    Infer {
        /// Output of `ldlm fit`.
        fit: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long, value_enum, default_value = "both")]
        band: BandArg,
        /// Seed for the band's Monte-Carlo draws; drawn and recorded if absent.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long, short, default_value = "inference.json")]
        out: PathBuf,
    },
    /// Global test that the treatment and control lag curves coincide.
    Test {
        fit: PathBuf,
        #[arg(long, value_enum)]
        adjust: Option<AdjustArg>,
        /// Further p-values adjusted together with this test's.
        #[arg(long, value_delimiter = ',')]
        p_values: Vec<f64>,
        #[arg(long, short, default_value = "zls.json")]
        out: PathBuf,
    },
    /// Run a replicated simulation study.
    Simulate {
        /// Simulation configuration JSON.
        config: PathBuf,
        /// Overrides the configuration's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; all cores when absent.
        #[arg(long)]
        jobs: Option<usize>,
        /// Receives report.json, tables.csv, power.csv and size.csv.
        #[arg(long, default_value = "study")]
        out_dir: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<Status> {
    match cli.command {
        Command::Fit { data, config, out } => commands::cmd_fit(&data, config.as_deref(), &out),
        Command::Select { data, config, rule, out } => {
            commands::cmd_select(&data, config.as_deref(), rule.into(), &out)
        }
        Command::Infer { fit, alpha, band, seed, draws, out } => {
            let band = match band {
                BandArg::Pointwise => BandKind::Pointwise,
                BandArg::Simultaneous => BandKind::Simultaneous,
                BandArg::Both => BandKind::Both,
            };
            commands::cmd_infer(&fit, alpha, band, seed, draws, &out)
        }
        Command::Test { fit, adjust, p_values, out } => {
            let adjust = adjust.map(|a| match a {
                AdjustArg::Bonferroni => Adjustment::Bonferroni,
                AdjustArg::Bh => Adjustment::Bh,
            });
            commands::cmd_test(&fit, adjust, &p_values, &out)
        }
        Command::Simulate { config, seed, jobs, out_dir } => commands::cmd_simulate(&config, seed, jobs, &out_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::NotConverged) => {
            eprintln!("error: fit did not converge; output written with converged=false");
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
