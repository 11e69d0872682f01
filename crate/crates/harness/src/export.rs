use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use mede_core::agents::{load_checkpoint, Checkpoint, PathStep, Trainer};
use mede_core::rng::{self, stream};
use ndarray::Array2;

use crate::{fmt_real, CliError};

/// A checkpointed agent of either precision.
#[derive(Debug, Clone)]
pub enum LoadedAgent {
    F32(Trainer<f32>),
    F64(Trainer<f64>),
}

impl LoadedAgent {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let header = Checkpoint::peek(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let agent = match header.precision_bytes {
            4 => load_checkpoint::<f32>(path).map(Self::F32),
            8 => load_checkpoint::<f64>(path).map(Self::F64),
            b => return Err(CliError::Config(format!("{}: unsupported precision of {b} bytes", path.display()))),
        };
        agent.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn seed(&self) -> u64 {
        match self {
            Self::F32(t) => t.config.seed,
            Self::F64(t) => t.config.seed,
        }
    }

    pub fn cardinality(&self) -> usize {
        match self {
            Self::F32(t) => t.cardinality(),
            Self::F64(t) => t.cardinality(),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Self::F32(t) => (t.nets.state_dim, t.nets.action_dim),
            Self::F64(t) => (t.nets.state_dim, t.nets.action_dim),
        }
    }

    pub fn rollout(&self, z: usize, r: &mut rng::Rng) -> Vec<PathStep> {
        match self {
            Self::F32(t) => t.rollout(z, r),
            Self::F64(t) => t.rollout(z, r),
        }
    }

    pub fn q_values(&self, position: [f64; 2], z: usize, actions: &Array2<f64>) -> Vec<f64> {
        match self {
            Self::F32(t) => t.q_values(position, z, actions),
            Self::F64(t) => t.q_values(position, z, actions),
        }
    }
}

/// Writes `z, episode, t, x, y, reward, done` for stochastic rollouts; x, y
/// is the position the action was taken from. `seed` defaults to the
/// checkpoint's run seed.
pub fn export_paths(checkpoint: &Path, episodes_per_z: usize, out: &Path, seed: Option<u64>) -> Result<usize, CliError> {
    let agent = LoadedAgent::load(checkpoint)?;
    let mut r = rng::split(seed.unwrap_or(agent.seed()), stream::EXPORT);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(out)?));
    w.write_record(["z", "episode", "t", "x", "y", "reward", "done"])?;
    let mut rows = 0;
    for z in 0..agent.cardinality() {
        for episode in 0..episodes_per_z {
            for p in agent.rollout(z, &mut r) {
                w.write_record([
                    z.to_string(),
                    episode.to_string(),
                    p.t.to_string(),
                    fmt_real(Some(p.position[0])),
                    fmt_real(Some(p.position[1])),
                    fmt_real(Some(p.reward)),
                    u8::from(p.done).to_string(),
                ])?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QGridOptions {
    pub checkpoint: PathBuf,
    /// Unconditioned agent whose Q is reported alongside, with the difference.
    pub sac_checkpoint: Option<PathBuf>,
    pub probes: Vec<[f64; 2]>,
    pub resolution: usize,
    pub out: PathBuf,
}

/// Row-major action grid over [−1, 1]², first coordinate outer.
pub fn action_grid(resolution: usize) -> Array2<f64> {
    let c = |i: usize| if resolution == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (resolution - 1) as f64 };
    Array2::from_shape_fn((resolution * resolution, 2), |(k, j)| if j == 0 { c(k / resolution) } else { c(k % resolution) })
}

/// Writes `state_id, z, a1, a2, q[, q_sac, diff]` with Q the minimum over the
/// twin critics, for every probe state and latent.
pub fn export_qgrid(opts: &QGridOptions) -> Result<usize, CliError> {
    if opts.resolution == 0 {
        return Err(CliError::Config("grid resolution must be at least 1".into()));
    }
    let agent = LoadedAgent::load(&opts.checkpoint)?;
    if agent.dims().1 != 2 {
        return Err(CliError::Config("contour export requires 2 action dimensions".into()));
    }
    let sac = opts.sac_checkpoint.as_deref().map(LoadedAgent::load).transpose()?;
    if let Some(s) = &sac {
        if s.dims() != agent.dims() {
            return Err(CliError::Config("the two checkpoints have different state or action dimensions".into()));
        }
        if s.cardinality() != 1 {
            return Err(CliError::Config("the comparison checkpoint must have a single latent".into()));
        }
    }

    let grid = action_grid(opts.resolution);
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&opts.out)?));
    let mut header = vec!["state_id", "z", "a1", "a2", "q"];
    if sac.is_some() {
        header.extend(["q_sac", "diff"]);
    }
    w.write_record(&header)?;
    let mut rows = 0;
    for (sid, &probe) in opts.probes.iter().enumerate() {
        let q_sac = sac.as_ref().map(|s| s.q_values(probe, 0, &grid));
        for z in 0..agent.cardinality() {
            let q = agent.q_values(probe, z, &grid);
            for (k, a) in grid.rows().into_iter().enumerate() {
                let mut rec = vec![sid.to_string(), z.to_string(), fmt_real(Some(a[0])), fmt_real(Some(a[1])), fmt_real(Some(q[k]))];
                if let Some(qs) = &q_sac {
                    rec.push(fmt_real(Some(qs[k])));
                    rec.push(fmt_real(Some(qs[k] - q[k])));
                }
                w.write_record(&rec)?;
                rows += 1;
            }
        }
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_covers_the_square() {
        let g = action_grid(3);
        assert_eq!(g.nrows(), 9);
        assert_eq!(g.row(0).to_vec(), vec![-1.0, -1.0]);
        assert_eq!(g.row(1).to_vec(), vec![-1.0, 0.0]);
        assert_eq!(g.row(8).to_vec(), vec![1.0, 1.0]);
        assert_eq!(action_grid(1).row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(action_grid(41)[[20 * 41 + 20, 0]], 0.0);
    }
}
