use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use navkit::Error;
use navkit_cli::{list_filters, run, write_outputs, EstimatorKind, OutputFormat, ScenarioConfig};

#[derive(Parser)]
#[command(name = "navkit", version, about = "Simulate scenarios and evaluate on-manifold estimators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run Monte-Carlo trials of a scenario with one estimator.
    Run {
        /// Scenario JSON file.
        config: PathBuf,
        #[arg(long, default_value = "ekf")]
        filter: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Both)]
        format: Format,
    },
    /// List the available estimators.
    ListFilters,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Svg,
    Both,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Svg => OutputFormat::Svg,
            Format::Both => OutputFormat::Both,
        }
    }
}

fn exit_for(e: &Error) -> ExitCode {
    match e {
        Error::Configuration(_) | Error::Contract(_) => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::ListFilters => {
            print!("{}", list_filters());
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            filter,
            seed,
            trials,
            out,
            format,
        } => {
            let setup = ScenarioConfig::load(&config).and_then(|cfg| {
                let kind = EstimatorKind::parse(&filter)?;
                if trials == 0 {
                    return Err(Error::Configuration("--trials must be at least 1".into()));
                }
                Ok((cfg, kind))
            });
            let (cfg, kind) = match setup {
                Ok(v) => v,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let output = match run(&cfg, kind, seed, trials) {
                Ok(o) => o,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit_for(&e);
                }
            };
            if let Err(e) = write_outputs(&output, &out, format.into()) {
                eprintln!("error: {e}");
                return ExitCode::FAILURE;
            }
            let s = output.summary();
            println!(
                "{}: {} trials, {} failed, avg NEES {:.3} (envelope {:.3}..{:.3}), position RMSE {:.4} m, {:.2} s",
                s.filter, s.trials, s.failed_trials, s.avg_nees, s.nees_lower, s.nees_upper, s.rmse_position, s.wall_time_s
            );
            if output.all_failed() {
                eprintln!("error: the estimator diverged in every trial");
                return ExitCode::from(3);
            }
            ExitCode::SUCCESS
        }
    }
}
