//! Run configuration: a TOML document with `[run]`, `[agent]`, `[env]` and
//! `[verify]` tables. Missing keys take their defaults, unknown keys are
//! rejected, and `section.key=value` overrides are applied before parsing.

use std::path::{Path, PathBuf};

use mede_core::agents::{AgentConfig, Algo, Precision, TrainConfig};
use mede_core::envs::{GridworldSpec, MultigoalSpec};
use mede_core::tabular::PosteriorMode;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub algo: Algo,
    pub seed: u64,
    pub iterations: usize,
    pub out_dir: PathBuf,
    pub precision: Precision,
    /// Environment steps between checkpoints; 0 keeps only the final one.
    pub checkpoint_every: u64,
    /// Evaluation episodes per latent after training.
    pub eval_episodes: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            algo: Algo::Mede,
            seed: 0,
            iterations: 300,
            out_dir: PathBuf::from("runs/default"),
            precision: Precision::F32,
            checkpoint_every: 5000,
            eval_episodes: 50,
        }
    }
}

/// Which posterior modes `verify` runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSelection {
    #[default]
    Both,
    Uniform,
    Occupancy,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<PosteriorMode> {
        match self {
            Self::Both => vec![PosteriorMode::Uniform, PosteriorMode::Occupancy],
            Self::Uniform => vec![PosteriorMode::Uniform],
            Self::Occupancy => vec![PosteriorMode::Occupancy],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub n_states: usize,
    pub n_actions: usize,
    pub z_cardinality: usize,
    pub gamma: f64,
    pub posterior_mode: ModeSelection,
    /// Outer solver tolerance.
    pub tol: f64,
    pub seeds: Vec<u64>,
    /// Dirichlet concentration of the random transition rows.
    pub concentration: f64,
    pub reward_range: (f64, f64),
    pub thm1_bound: f64,
    /// Bound on both decomposition residuals.
    pub identity_bound: f64,
    /// Slack on S*_z ≥ M*_z.
    pub jensen_slack: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            n_states: 6,
            n_actions: 3,
            z_cardinality: 2,
            gamma: 0.9,
            posterior_mode: ModeSelection::Both,
            tol: 1e-10,
            seeds: (0..10).collect(),
            concentration: 1.0,
            reward_range: (0.0, 1.0),
            thm1_bound: 1e-10,
            identity_bound: 1e-6,
            jensen_slack: 1e-12,
        }
    }
}

impl VerifySection {
    pub fn gridworld(&self, seed: u64) -> GridworldSpec {
        GridworldSpec {
            seed,
            n_states: self.n_states,
            n_actions: self.n_actions,
            concentration: self.concentration,
            reward_range: self.reward_range,
            gamma: self.gamma,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub agent: AgentConfig,
    pub env: MultigoalSpec,
    pub verify: VerifySection,
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig::new(self.run.algo, self.run.seed, self.run.iterations, self.agent.clone())
    }

    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let text = toml::to_string(&table).map_err(|e| CliError::Config(e.to_string()))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("config: {e}")))
    }

    /// Reads `path` (or starts from defaults) and applies overrides; an
    /// explicit `seed` wins over both.
    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut config = Self::parse(&text, overrides)?;
        if let Some(s) = seed {
            config.run.seed = s;
        }
        Ok(config)
    }

    /// The fully resolved document, as echoed next to the outputs.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let bad = || CliError::Config(format!("override `{spec}` must look like section.key=value"));
    let (path, raw) = spec.split_once('=').ok_or_else(bad)?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.len() < 2 || keys.iter().any(|k| k.is_empty()) {
        return Err(bad());
    }
    // Anything that is not a TOML literal is taken as a bare string.
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut node = table;
    for k in &keys[..keys.len() - 1] {
        let entry = node.entry(k.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("override `{spec}`: `{k}` is not a table")))?;
    }
    node.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::parse("", &[]).unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.agent.hidden, vec![128, 128]);
        assert_eq!(c.agent.alpha, 0.3);
        assert_eq!(c.run.checkpoint_every, 5000);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for doc in ["[run]\nlearning_rate = 1", "[agnet]\nalpha = 1", "[env]\ngoal = 1"] {
            let e = RunConfig::parse(doc, &[]).unwrap_err();
            assert!(matches!(e, CliError::Config(_)), "{doc}");
        }
        assert!(RunConfig::parse("", &["agent.alhpa=0.1".into()]).is_err());
    }

    #[test]
    fn overrides_take_literals_and_strings() {
        let c = RunConfig::parse(
            "[agent]\nalpha = 0.5\n",
            &[
                "agent.alpha=0.1".into(),
                "run.algo=diayn".into(),
                "run.out_dir=out/x".into(),
                "agent.hidden=[8, 8]".into(),
                "env.goals=[[1.0, 0.0]]".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.agent.alpha, 0.1);
        assert_eq!(c.run.algo, Algo::Diayn);
        assert_eq!(c.run.out_dir, PathBuf::from("out/x"));
        assert_eq!(c.agent.hidden, vec![8, 8]);
        assert_eq!(c.env.goals, vec![[1.0, 0.0]]);
    }

    #[test]
    fn malformed_overrides_are_rejected() {
        for o in ["alpha=1", "agent.alpha", ".alpha=1", "run.seed.x=1"] {
            assert!(RunConfig::parse("", &[o.into()]).is_err(), "{o}");
        }
    }

    #[test]
    fn explicit_seed_wins() {
        let c = RunConfig::load(None, &["run.seed=4".into()], Some(9)).unwrap();
        assert_eq!(c.run.seed, 9);
    }

    proptest! {
        #[test]
        fn echo_round_trips(
            alpha in 1e-6f64..10.0,
            gamma in 0.0f64..0.999,
            seed in any::<u32>(),
            tol in 1e-14f64..1e-2,
            goals in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..5),
        ) {
            let mut c = RunConfig::default();
            c.agent.alpha = alpha;
            c.agent.gamma = gamma;
            c.run.seed = seed as u64;
            c.verify.tol = tol;
            c.env.goals = goals.into_iter().map(|(x, y)| [x, y]).collect();
            prop_assert_eq!(RunConfig::parse(&c.to_toml(), &[]).unwrap(), c);
        }
    }
}
