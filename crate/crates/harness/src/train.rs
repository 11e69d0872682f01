use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mede_core::agents::{save_checkpoint, EvalReport, MetricsRow, Precision, Trainer};
use mede_core::nn::Real;

use crate::{fmt_real, CliError, RunConfig};

pub const METRICS_HEADER: [&str; 9] =
    ["iter", "mean_return", "max_return", "mean_log_q_zsa", "mean_log_p_zs", "q_loss", "pi_loss", "disc_loss", "alpha"];

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub out_dir: PathBuf,
    pub rows: Vec<MetricsRow>,
    pub eval: EvalReport,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainOutcome {
    pub fn final_checkpoint(&self) -> &Path {
        self.checkpoints.last().expect("final checkpoint is always written")
    }
}

fn metrics_record(row: &MetricsRow) -> Vec<String> {
    let mut rec = vec![row.iter.to_string()];
    rec.extend(
        [row.mean_return, row.max_return, row.mean_log_q_zsa, row.mean_log_p_zs, row.q_loss, row.pi_loss, row.disc_loss, Some(row.alpha)]
            .into_iter()
            .map(fmt_real),
    );
    rec
}

/// Trains for `run.iterations` iterations, writing the resolved config,
/// metrics.csv, periodic and final checkpoints and eval.json to `run.out_dir`.
/// A numeric abort keeps everything written so far.
pub fn train(config: &RunConfig) -> Result<TrainOutcome, CliError> {
    match config.run.precision {
        Precision::F32 => train_with::<f32>(config),
        Precision::F64 => train_with::<f64>(config),
    }
}

fn train_with<F: Real>(config: &RunConfig) -> Result<TrainOutcome, CliError> {
    let mut trainer = Trainer::<F>::new(config.train_config(), config.env.clone())?;
    let out = config.run.out_dir.clone();
    let ckpt_dir = out.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    fs::write(out.join("config.toml"), config.to_toml())?;

    let mut metrics = csv::Writer::from_writer(BufWriter::new(File::create(out.join("metrics.csv"))?));
    metrics.write_record(METRICS_HEADER)?;
    metrics.flush()?;

    let every = config.run.checkpoint_every;
    let mut rows = Vec::with_capacity(config.run.iterations);
    let mut checkpoints = Vec::new();
    for _ in 0..config.run.iterations {
        let before = trainer.env_steps;
        let row = match trainer.train_iteration() {
            Ok(row) => row,
            Err(e) => {
                metrics.flush()?;
                return Err(e.into());
            }
        };
        metrics.write_record(metrics_record(&row))?;
        metrics.flush()?;
        if every > 0 && trainer.env_steps / every > before / every {
            let path = ckpt_dir.join(format!("step_{:08}.ckpt", trainer.env_steps));
            save_checkpoint(&trainer, &path)?;
            checkpoints.push(path);
            eprintln!(
                "[{}] iter {} steps {} mean_return {} log_q {}",
                trainer.config.algo,
                row.iter,
                row.env_steps,
                fmt_real(row.mean_return),
                fmt_real(row.mean_log_q_zsa)
            );
        }
        rows.push(row);
    }
    metrics.into_inner().map_err(|e| e.into_error())?.flush()?;

    let path = ckpt_dir.join("final.ckpt");
    save_checkpoint(&trainer, &path)?;
    checkpoints.push(path);

    let eval = trainer.evaluate(config.run.eval_episodes);
    let mut f = BufWriter::new(File::create(out.join("eval.json"))?);
    serde_json::to_writer_pretty(&mut f, &eval).map_err(std::io::Error::from)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(TrainOutcome { out_dir: out, rows, eval, checkpoints })
}
