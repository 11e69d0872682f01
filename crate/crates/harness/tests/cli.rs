use std::path::Path;
use std::process::{Command, Output};

use mede_harness::{count_local_maxima, RunConfig};

fn mede(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mede")).args(args).output().expect("binary runs")
}

fn out_dir(dir: &Path) -> String {
    format!("run.out_dir=\"{}\"", dir.display())
}

/// Small networks and a short warmup so a few iterations train quickly.
const SMALL: [&str; 10] = [
    "--set",
    "agent.hidden=[32, 32]",
    "--set",
    "agent.disc_hidden=[32, 32]",
    "--set",
    "agent.batch_size=32",
    "--set",
    "agent.warmup_steps=150",
    "--set",
    "run.eval_episodes=5",
];

fn train_small(dir: &Path, extra: &[&str]) -> Output {
    let o = out_dir(dir);
    let mut args = vec!["train", "--set", &o];
    args.extend(SMALL);
    args.extend(extra);
    mede(&args)
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(Result::unwrap).collect()
}

#[test]
fn zero_iterations_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &["--set", "run.algo=\"sac\"", "--set", "run.iterations=0"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert_eq!(text, "iter,mean_return,max_return,mean_log_q_zsa,mean_log_p_zs,q_loss,pi_loss,disc_loss,alpha\n");
    assert!(dir.path().join("checkpoints/final.ckpt").exists());
}

#[test]
fn training_outputs_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &["--seed", "3", "--set", "run.iterations=12", "--set", "run.checkpoint_every=500"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let rows = csv_rows(&dir.path().join("metrics.csv"));
    let iters: Vec<u64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(iters, (1..=12).collect::<Vec<_>>());
    // Warmup iteration: no gradient steps yet.
    assert_eq!(&rows[0][5], "nan");
    let last = rows.last().unwrap();
    let lq: f64 = last[3].parse().unwrap();
    assert!(lq.is_finite() && lq <= 0.0);
    assert_eq!(last[8].parse::<f64>().unwrap(), 0.3);

    for step in [500, 1000] {
        assert!(dir.path().join(format!("checkpoints/step_{step:08}.ckpt")).exists());
    }
    let echoed = std::fs::read_to_string(dir.path().join("config.toml")).unwrap();
    let parsed = RunConfig::parse(&echoed, &[]).unwrap();
    assert_eq!(parsed.run.seed, 3);
    assert_eq!(parsed.agent.hidden, vec![32, 32]);
    assert_eq!(parsed.to_toml(), echoed);

    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("eval.json")).unwrap()).unwrap();
    let per_z = eval["per_z"].as_array().unwrap();
    assert_eq!(per_z.len(), 4);
    assert_eq!(per_z[0]["returns"].as_array().unwrap().len(), 5);
}

#[test]
fn config_file_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[run]\nalgo = \"diayn\"\niterations = 0\n[agent]\nalpha = 0.1\n").unwrap();
    let o = out_dir(dir.path());
    let out = mede(&["train", "--config", cfg.to_str().unwrap(), "--set", &o]);
    assert!(out.status.success());
    let echoed = RunConfig::parse(&std::fs::read_to_string(dir.path().join("config.toml")).unwrap(), &[]).unwrap();
    assert_eq!(echoed.agent.alpha, 0.1);

    std::fs::write(&cfg, "[run]\nalgorithm = \"sac\"\n").unwrap();
    let out = mede(&["train", "--config", cfg.to_str().unwrap(), "--set", &o]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("algorithm"));

    let out = mede(&["train", "--set", &o, "--set", "agent.alpha=-1", "--set", "run.iterations=0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = mede(&["train", "--config", "/nonexistent/run.toml"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(mede(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mede(&["--help"]).status.code(), Some(0));
}

#[test]
fn numeric_blowup_exits_with_code_2_and_keeps_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_small(dir.path(), &["--set", "run.iterations=5", "--set", "env.reward_scale=1e300", "--set", "agent.reward_scale=1e300"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("numeric failure"));
    assert!(dir.path().join("metrics.csv").exists());
}

#[test]
fn verify_reports_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = out_dir(dir.path());
    let out = mede(&["verify", "--set", &o, "--set", "verify.seeds=[0, 1, 2]"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("verify_report.json")).unwrap()).unwrap();
    let records = report["records"].as_array().unwrap();
    assert_eq!(records.len(), 6);
    for r in records {
        assert!(r["thm1_residual"].as_f64().unwrap() <= 1e-10);
        assert!(r["thm2_residual"].as_f64().unwrap() <= 1e-6);
        assert!(r["thm3_residual"].as_f64().unwrap() <= 1e-6);
    }

    let out = mede(&["verify", "--set", &o, "--set", "verify.seeds=[0]", "--set", "verify.identity_bound=1e-300"]);
    assert_eq!(out.status.code(), Some(3));

    let out = mede(&["verify", "--set", &o, "--set", "verify.seeds=[0]", "--set", "verify.max_iters=5"]);
    assert_eq!(out.status.code(), Some(1));
}

fn untrained_checkpoint(dir: &Path, extra: &[&str]) -> String {
    let out = train_small(dir, &[&["--set", "run.iterations=0"], extra].concat());
    assert!(out.status.success());
    dir.join("checkpoints/final.ckpt").display().to_string()
}

#[test]
fn exported_paths_start_at_the_start_state() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = untrained_checkpoint(dir.path(), &[]);
    let csv_path = dir.path().join("paths.csv");
    let out = mede(&["export-paths", "--checkpoint", &ckpt, "--episodes-per-z", "1", "--out", csv_path.to_str().unwrap()]);
    assert!(out.status.success());
    let rows = csv_rows(&csv_path);
    for z in 0..4 {
        let mine: Vec<_> = rows.iter().filter(|r| r[0] == *z.to_string()).collect();
        assert!(!mine.is_empty() && mine.len() <= 30);
        assert_eq!((mine[0][3].parse::<f64>().unwrap(), mine[0][4].parse::<f64>().unwrap()), (0.0, 0.0));
        assert_eq!(&mine[0][2], "0");
        assert_eq!(&mine.last().unwrap()[6], "1");
    }
}

#[test]
fn untrained_paths_spread_over_goals() {
    let dir = tempfile::tempdir().unwrap();
    // Default widths; the spread is a property of this seed's initialization.
    let o = out_dir(dir.path());
    assert!(mede(&["train", "--seed", "4", "--set", &o, "--set", "run.iterations=0", "--set", "run.eval_episodes=0"]).status.success());
    let ckpt = dir.path().join("checkpoints/final.ckpt");
    let csv_path = dir.path().join("paths.csv");
    let out = mede(&["export-paths", "--checkpoint", ckpt.to_str().unwrap(), "--episodes-per-z", "25", "--out", csv_path.to_str().unwrap()]);
    assert!(out.status.success());
    let goals = [[5.0, 0.0], [-5.0, 0.0], [0.0, 5.0], [0.0, -5.0]];
    let mut counts = [0usize; 4];
    let rows = csv_rows(&csv_path);
    let mut episodes = 0;
    for r in rows.iter().filter(|r| &r[6] == "1") {
        episodes += 1;
        // The reward is minus the post-step distance to the nearest goal, so
        // arrival means reward >= -threshold. The pre-step position is within
        // one step of that goal.
        let reward: f64 = r[5].parse().unwrap();
        if reward >= -1.0 {
            let (x, y): (f64, f64) = (r[3].parse().unwrap(), r[4].parse().unwrap());
            let d = |g: [f64; 2]| (g[0] - x).hypot(g[1] - y);
            let nearest = (0..4).min_by(|&a, &b| d(goals[a]).total_cmp(&d(goals[b]))).unwrap();
            counts[nearest] += 1;
        }
    }
    assert_eq!(episodes, 100);
    let arrived: usize = counts.iter().sum();
    assert!(arrived > 0);
    assert!(counts.iter().all(|&c| c as f64 <= 0.6 * arrived as f64), "{counts:?}");
}

#[test]
fn qgrid_rows_and_difference_column() {
    let dir = tempfile::tempdir().unwrap();
    let mede_dir = dir.path().join("mede");
    let sac_dir = dir.path().join("sac");
    let ckpt = untrained_checkpoint(&mede_dir, &[]);
    let sac = untrained_checkpoint(&sac_dir, &["--set", "run.algo=\"sac\""]);
    let csv_path = dir.path().join("q.csv");
    let p = csv_path.to_str().unwrap();
    let out = mede(&["export-qgrid", "--checkpoint", &ckpt, "--sac-checkpoint", &sac, "--probe", "2.5,2.5", "--probe=-1,0", "--resolution", "3", "--out", p]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert!(text.starts_with("state_id,z,a1,a2,q,q_sac,diff\n"));
    let rows = csv_rows(&csv_path);
    assert_eq!(rows.len(), 2 * 4 * 9);
    for r in &rows {
        let f = |i: usize| r[i].parse::<f64>().unwrap();
        assert!((f(6) - (f(5) - f(4))).abs() <= 1e-12);
    }

    let out = mede(&["export-qgrid", "--checkpoint", &ckpt, "--resolution", "41", "--out", p]);
    assert!(out.status.success());
    let rows = csv_rows(&csv_path);
    assert_eq!(rows.len(), 4 * 41 * 41);
    let q0: Vec<f64> = rows.iter().filter(|r| &r[1] == "0").map(|r| r[4].parse().unwrap()).collect();
    assert!(count_local_maxima(&q0, 41) >= 1);

    // A comparison checkpoint must be single-latent.
    let out = mede(&["export-qgrid", "--checkpoint", &ckpt, "--sac-checkpoint", &ckpt, "--out", p]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = untrained_checkpoint(dir.path(), &[]);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[8..12].copy_from_slice(&7u32.to_le_bytes());
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    let out_csv = dir.path().join("p.csv");
    let out = mede(&["export-paths", "--checkpoint", bad.to_str().unwrap(), "--out", out_csv.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("incompatible checkpoint version"));
}
