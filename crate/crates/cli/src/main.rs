use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ivlate_cli::commands::{cmd_estimate, cmd_simulate, cmd_stratify};
use ivlate_cli::config::{Command, Format, PropensityChoice, RunConfig};
use ivlate_cli::report::Report;
use ivlate_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "ivlate", version, about = "LATE estimation with interacted 2SLS")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Estimate the LATE on a CSV sample with bootstrap standard deviations.
    Estimate {
        #[command(flatten)]
        data: DataArgs,
        /// Comma-separated estimators: ++, x+, xx, strat-K, beta, kappa-beta.
        #[arg(long, value_delimiter = ',', default_value = "++,x+,xx")]
        estimators: Vec<String>,
        #[command(flatten)]
        boot: BootArgs,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Run a Monte Carlo study on a registered design or a JSON spec.
    Simulate {
        /// A, B, C, D or a path to a JSON design spec.
        #[arg(long)]
        dgp: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "++,x+,xx,strat-5,strat-10,strat-15")]
        estimators: Vec<String>,
        /// Also write per-replicate estimates as CSV.
        #[arg(long)]
        replicates: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Stratify on the estimated instrument propensity and estimate per-stratum effects.
    Stratify {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        boot: BootArgs,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV with columns y, d, z and optional x-prefixed covariates.
    #[arg(long)]
    input: PathBuf,
    /// Use the x columns as given, without prepending a constant.
    #[arg(long)]
    no_constant: bool,
    #[arg(long, value_enum, default_value = "logistic")]
    propensity: PropensityChoice,
}

#[derive(Args)]
struct BootArgs {
    /// Bootstrap replicates.
    #[arg(long, default_value_t = 1000)]
    b: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct OutArgs {
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn config(sub: &Sub) -> RunConfig {
    let blank = |command| RunConfig {
        command,
        input: None,
        dgp: None,
        estimators: Vec::new(),
        k: None,
        b: None,
        alpha: None,
        seed: 0,
        reps: None,
        n: None,
        format: Format::Json,
        output: None,
        no_constant: false,
        propensity: None,
    };
    match sub {
        Sub::Estimate { data, estimators, boot, out } => RunConfig {
            input: Some(data.input.clone()),
            no_constant: data.no_constant,
            propensity: Some(data.propensity),
            estimators: estimators.clone(),
            b: Some(boot.b),
            alpha: Some(boot.alpha),
            seed: boot.seed,
            format: out.format,
            output: out.output.clone(),
            ..blank(Command::Estimate)
        },
        Sub::Simulate {
            dgp,
            n,
            reps,
            seed,
            estimators,
            out,
            ..
        } => RunConfig {
            dgp: Some(dgp.clone()),
            n: Some(*n),
            reps: Some(*reps),
            seed: *seed,
            estimators: estimators.clone(),
            format: out.format,
            output: out.output.clone(),
            ..blank(Command::Simulate)
        },
        Sub::Stratify {
            data,
            k,
            boot,
            format,
            output,
        } => RunConfig {
            input: Some(data.input.clone()),
            no_constant: data.no_constant,
            propensity: Some(data.propensity),
            k: Some(*k),
            b: Some(boot.b),
            alpha: Some(boot.alpha),
            seed: boot.seed,
            format: *format,
            output: output.clone(),
            ..blank(Command::Stratify)
        },
    }
}

fn write_out(path: Option<&PathBuf>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> CliResult<Report> {
    let cfg = config(&cli.command);
    let report = match cfg.command {
        Command::Estimate => cmd_estimate(&cfg)?,
        Command::Simulate => cmd_simulate(&cfg)?,
        Command::Stratify => cmd_stratify(&cfg)?,
    };
    if let Some(d) = &report.data {
        eprintln!("read {} rows with columns {}", d.rows, d.columns.join(","));
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_out(cfg.output.as_ref(), &report.render(cfg.format))?;
    if let (Sub::Simulate { replicates: Some(p), .. }, Some(csv)) = (&cli.command, &report.replicate_csv) {
        write_out(Some(p), csv)?;
    }
    Ok(report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(report) if report.failures.is_empty() => ExitCode::SUCCESS,
        Ok(report) => {
            for f in &report.failures {
                eprintln!("error: {}: {}", f.estimator, f.error);
            }
            ExitCode::from(3)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
