use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mede_harness::{export_paths, export_qgrid, train, verify, CliError, QGridOptions, RunConfig};

#[derive(Parser)]
#[command(name = "mede", version, about = "Diverse maximum-entropy RL: training, verification and export")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML file with [run], [agent], [env] and [verify] tables.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set agent.alpha=0.1 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Shorthand for --set run.seed=N.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        RunConfig::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write metrics, checkpoints and an evaluation report.
    Train(ConfigArgs),
    /// Check the decomposition identities on random tabular MDPs.
    Verify(ConfigArgs),
    /// Roll out a checkpointed policy and write the visited positions.
    ExportPaths {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes_per_z: usize,
        #[arg(long)]
        out: PathBuf,
        /// Rollout seed; defaults to the run seed stored in the checkpoint.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate Q over a grid of actions at probe states.
    ExportQgrid {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Single-latent checkpoint to compare against.
        #[arg(long)]
        sac_checkpoint: Option<PathBuf>,
        /// Probe state as X,Y (repeatable).
        #[arg(long = "probe", value_name = "X,Y", value_parser = parse_probe, default_values = ["2.5,2.5"])]
        probes: Vec<[f64; 2]>,
        #[arg(long, default_value_t = 41)]
        resolution: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_probe(s: &str) -> Result<[f64; 2], String> {
    let (x, y) = s.split_once(',').ok_or("expected X,Y")?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v}: {e}"));
    Ok([p(x)?, p(y)?])
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let config = args.load()?;
            let out = train(&config)?;
            println!("wrote {} iterations to {}", out.rows.len(), out.out_dir.display());
            for e in &out.eval.per_z {
                match e.modal_goal() {
                    Some((g, share)) => println!("z{} mean_return {:.3} modal goal {g} ({:.0}%)", e.z, e.mean_return, 100.0 * share),
                    None => println!("z{} mean_return {:.3} no goal reached", e.z, e.mean_return),
                }
            }
        }
        Command::Verify(args) => {
            let out = verify(&args.load()?)?;
            println!("{}", out.summary());
            println!("report: {}", out.report_path.display());
            if !out.passed {
                return Err(CliError::Verification(format!("{}/{} runs within bounds", out.records.iter().filter(|r| r.passed).count(), out.records.len())));
            }
        }
        Command::ExportPaths { checkpoint, episodes_per_z, out, seed } => {
            let rows = export_paths(&checkpoint, episodes_per_z, &out, seed)?;
            println!("wrote {rows} rows to {}", out.display());
        }
        Command::ExportQgrid { checkpoint, sac_checkpoint, probes, resolution, out } => {
            let rows = export_qgrid(&QGridOptions { checkpoint, sac_checkpoint, probes, resolution, out: out.clone() })?;
            println!("wrote {rows} rows to {}", out.display());
        }
    }
    Ok(())
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
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
