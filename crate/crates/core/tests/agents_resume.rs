use mede_core::agents::{load_checkpoint, save_checkpoint, AgentConfig, Algo, TrainConfig, Trainer};
use mede_core::envs::MultigoalSpec;

fn config(algo: Algo) -> TrainConfig {
    let agent = AgentConfig {
        hidden: vec![24, 24],
        disc_hidden: vec![24],
        batch_size: 24,
        warmup_steps: 120,
        steps_per_iteration: 40,
        ..AgentConfig::default()
    };
    TrainConfig::new(algo, 17, 10, agent)
}

#[test]
fn resumed_runs_match_uninterrupted_runs() {
    let dir = tempfile::tempdir().unwrap();
    for algo in [Algo::Sac, Algo::Mede, Algo::Diayn] {
        let mut straight = Trainer::<f32>::new(config(algo), MultigoalSpec::four_goals()).unwrap();
        let rows: Vec<_> = (0..10).map(|_| straight.train_iteration().unwrap()).collect();

        let mut first = Trainer::<f32>::new(config(algo), MultigoalSpec::four_goals()).unwrap();
        let mut resumed_rows: Vec<_> = (0..4).map(|_| first.train_iteration().unwrap()).collect();
        let path = dir.path().join(format!("{algo}.ckpt"));
        save_checkpoint(&first, &path).unwrap();
        drop(first);
        let mut second = load_checkpoint::<f32>(&path).unwrap();
        resumed_rows.extend((4..10).map(|_| second.train_iteration().unwrap()));

        assert_eq!(rows, resumed_rows, "{algo}");
        assert_eq!(straight, second, "{algo}");
        assert_eq!(straight.evaluate(3), second.evaluate(3));
    }
}

#[test]
fn precision_is_checked_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let t = Trainer::<f64>::new(config(Algo::Mede), MultigoalSpec::two_goals()).unwrap();
    let path = dir.path().join("f64.ckpt");
    save_checkpoint(&t, &path).unwrap();
    assert!(load_checkpoint::<f32>(&path).is_err());
    assert_eq!(load_checkpoint::<f64>(&path).unwrap(), t);
}
