use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use mede_core::envs::make_random_mdp;
use mede_core::tabular::{verify_theorems, PosteriorMode, TabularError, TheoremReport};
use serde::Serialize;

use crate::{CliError, RunConfig, VerifySection};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyRecord {
    pub seed: u64,
    pub mode: PosteriorMode,
    pub converged: bool,
    pub passed: bool,
    #[serde(flatten)]
    pub report: Option<TheoremReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyOutcome {
    pub config: VerifySection,
    pub records: Vec<VerifyRecord>,
    pub converged: usize,
    pub passed: bool,
    #[serde(skip)]
    pub report_path: PathBuf,
}

impl VerifyOutcome {
    pub fn max_of(&self, f: impl Fn(&TheoremReport) -> f64) -> f64 {
        self.records.iter().filter_map(|r| r.report.as_ref()).map(f).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            match &r.report {
                Some(t) => writeln!(
                    s,
                    "seed {:>3} {:<9} thm1 {:.2e} thm2 {:.2e} thm3 {:.2e} jensen {:.2e} iters {:>4} {}",
                    r.seed,
                    r.mode.to_string(),
                    t.thm1_residual,
                    t.thm2_residual,
                    t.thm3_residual,
                    t.jensen_violation,
                    t.outer_iterations,
                    if r.passed { "ok" } else { "FAIL" }
                ),
                None => writeln!(s, "seed {:>3} {:<9} {}", r.seed, r.mode.to_string(), r.error.as_deref().unwrap_or("failed")),
            }
            .expect("string write");
        }
        write!(s, "{}/{} converged, {}", self.converged, self.records.len(), if self.passed { "all within bounds" } else { "FAILED" })
            .expect("string write");
        s
    }
}

fn check(v: &VerifySection, t: &TheoremReport) -> bool {
    t.thm1_residual <= v.thm1_bound
        && t.thm2_residual <= v.identity_bound
        && t.thm3_residual <= v.identity_bound
        && t.jensen_violation <= v.jensen_slack
}

/// Builds one random MDP per seed, solves the coupled system in every
/// selected posterior mode and checks the decomposition residuals. The
/// report goes to `run.out_dir/verify_report.json`, sorted by seed.
pub fn verify(config: &RunConfig) -> Result<VerifyOutcome, CliError> {
    let v = &config.verify;
    if v.z_cardinality == 0 || v.seeds.is_empty() {
        return Err(CliError::Config("verify needs z_cardinality >= 1 and at least one seed".into()));
    }
    let mut seeds = v.seeds.clone();
    seeds.sort_unstable();
    seeds.dedup();

    let mut records = Vec::new();
    for &seed in &seeds {
        let mdp = make_random_mdp(&v.gridworld(seed)).map_err(|e| CliError::Config(e.to_string()))?;
        for mode in v.posterior_mode.modes() {
            let record = match verify_theorems(&mdp, v.z_cardinality, mode, seed, v.tol) {
                Ok(t) => VerifyRecord { seed, mode, converged: true, passed: check(v, &t), report: Some(t), error: None },
                Err(e @ TabularError::NotConverged { .. }) => {
                    VerifyRecord { seed, mode, converged: false, passed: false, report: None, error: Some(e.to_string()) }
                }
                Err(e) => return Err(CliError::Config(e.to_string())),
            };
            records.push(record);
        }
    }
    let converged = records.iter().filter(|r| r.converged).count();
    let passed = records.iter().all(|r| r.passed);
    fs::create_dir_all(&config.run.out_dir)?;
    let report_path = config.run.out_dir.join("verify_report.json");
    let outcome = VerifyOutcome { config: v.clone(), records, converged, passed, report_path };
    let mut text = serde_json::to_string_pretty(&outcome).map_err(std::io::Error::from)?;
    text.push('\n');
    fs::write(&outcome.report_path, text)?;
    Ok(outcome)
}
