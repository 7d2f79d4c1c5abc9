use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use sparseflow::experiment::{
    cmd_eval_place, cmd_eval_recon, cmd_generate, cmd_place, cmd_report, cmd_train_policy, cmd_train_recon, exit_code,
    ExperimentConfig, PlacementMethod, RunContext,
};
use sparseflow::Result;

#[derive(Parser, Debug)]
#[command(name = "sparseflow", version, about = "Sparse-sensor flow reconstruction and sensor placement")]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's run seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long, global = true, default_value = "runs/default")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic snapshot dataset.
    Generate,
    /// Train the reconstruction network.
    TrainRecon,
    /// Masked MSE of the network and the interpolation baselines.
    EvalRecon,
    /// Classical sensor placement from the snapshot basis.
    Place {
        #[arg(long, value_enum)]
        method: ClassicMethod,
    },
    /// Train the placement policy against the frozen reconstruction network.
    TrainPolicy,
    /// Compare placement strategies at the configured density.
    EvalPlace,
    /// Aggregate evaluation CSVs of one or more run directories.
    Report {
        /// Run directories; defaults to `--out`.
        inputs: Vec<PathBuf>,
    },
    /// Print the resolved config.
    ShowConfig,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ClassicMethod {
    Qr,
    Dopt,
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    }
    .resolved(cli.seed)?;
    let ctx = RunContext::new(config, &cli.out);
    log::info!("config hash {}", ctx.config_hash);
    match cli.command {
        Command::Generate => cmd_generate(&ctx).map(drop),
        Command::TrainRecon => cmd_train_recon(&ctx).map(drop),
        Command::EvalRecon => cmd_eval_recon(&ctx).map(drop),
        Command::Place { method } => {
            let m = match method {
                ClassicMethod::Qr => PlacementMethod::Qr,
                ClassicMethod::Dopt => PlacementMethod::Dopt,
            };
            cmd_place(&ctx, m).map(drop)
        }
        Command::TrainPolicy => cmd_train_policy(&ctx).map(drop),
        Command::EvalPlace => cmd_eval_place(&ctx).map(drop),
        Command::Report { inputs } => {
            let inputs = if inputs.is_empty() { vec![cli.out.clone()] } else { inputs };
            let summary = cmd_report(&inputs, &cli.out.join("report"))?;
            log::info!("{} rows, {} missing cells", summary.rows, summary.missing_cells);
            Ok(())
        }
        Command::ShowConfig => {
            print!("{}", ctx.config.to_toml()?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}

