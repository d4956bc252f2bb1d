mod common;

use common::{desk_agent, grid_config};
use leo_routing::agent::{train_on_batch, Optimizer, OptimizerKind, PolicyKind};
use leo_routing::harness::{self, read_csv, simulate, write_csv, Simulation, SummaryRow, SUMMARY_FILE};
use leo_routing::neural::Parameters;
use leo_routing::Error;

#[test]
fn random_walk_conserves_packets_every_slot() {
    let mut c = grid_config(2, 3, 2.0, 11);
    c.run.policy = PolicyKind::Random;
    c.link.capacity_bps = 2.4e6;
    let mut sim = Simulation::new(&c).unwrap();
    let mut dropped = 0;
    for t in 0..2000 {
        let rec = sim.step(t).unwrap();
        assert!(sim.network().conservation_holds(), "slot {t}");
        dropped += rec
            .events
            .iter()
            .filter(|e| matches!(e, leo_routing::transport::PacketEvent::Dropped { .. }))
            .count();
    }
    assert!(dropped > 0, "the overload scenario should drop packets");
}

#[test]
fn dijkstra_light_load_loses_nothing() {
    let mut c = grid_config(3, 3, 0.5, 3);
    c.run.policy = PolicyKind::Dijkstra;
    c.run.eval_slots = Some(600);
    let m = simulate(&c).unwrap().metrics;
    assert_eq!(m.dropped, 0);
    assert_eq!(m.loss_rate, 0.0);
    assert!(m.conservation_holds);
    assert!(m.throughput_mbps <= m.offered_mbps);
    assert!(m.mean_delay_ms.unwrap() > 0.0);
}

#[test]
fn reruns_write_identical_summaries() {
    let dir = tempfile::tempdir().unwrap();
    for policy in [PolicyKind::Random, PolicyKind::Dijkstra] {
        let mut bytes = Vec::new();
        for run in 0..2 {
            let mut c = grid_config(2, 3, 1.0, 42);
            c.run.policy = policy;
            c.run.per_slot_log = true;
            c.run.out_dir = Some(dir.path().join(format!("{}_{run}", policy.name())));
            harness::run_experiment(&c).unwrap();
            let out = c.run.out_dir.unwrap();
            bytes.push((
                std::fs::read(out.join(SUMMARY_FILE)).unwrap(),
                std::fs::read(out.join(harness::PER_SLOT_FILE)).unwrap(),
            ));
        }
        assert_eq!(bytes[0], bytes[1]);
    }
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut c = grid_config(2, 2, 0.5, 9);
        desk_agent(&mut c, 1);
        c.run.slots_per_episode = 120;
        c.run.eval_slots = Some(100);
        c.agent.batch_size = 8;
        c.agent.updates_per_slot = 1;
        let o = simulate(&c).unwrap();
        (o.summary, o.training_log, o.policy.agent().unwrap().online().clone())
    };
    let (a, b) = (run(), run());
    assert!(!a.1.is_empty());
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
}

#[test]
fn summary_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let rows = vec![
        SummaryRow {
            policy: "proposed".into(),
            load_mbps: 120.0,
            seed: 1,
            throughput_mbps: 101.25,
            delay_ms: Some(12.5),
            loss_rate: 0.125,
            mean_queue: 3.0,
        },
        SummaryRow {
            policy: "random".into(),
            load_mbps: 240.0,
            seed: 2,
            throughput_mbps: 0.0,
            delay_ms: None,
            loss_rate: 1.0,
            mean_queue: 640.0,
        },
    ];
    let path = dir.path().join("s.csv");
    write_csv(&path, &rows).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("policy,load_mbps,seed,throughput_mbps,delay_ms,loss_rate,mean_queue\n"));
    assert_eq!(read_csv::<SummaryRow>(&path).unwrap(), rows);
}

#[test]
fn sweep_reports_one_row_per_load() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = grid_config(2, 3, 0.0, 5);
    c.run.policy = PolicyKind::Random;
    c.link.capacity_bps = 1.2e6;
    c.run.eval_slots = Some(400);
    c.run.out_dir = Some(dir.path().to_path_buf());
    let loads = [0.5, 4.0, 16.0];
    let rows = harness::load_sweep(&c, &loads).unwrap();
    assert_eq!(rows.len(), 3);
    for (r, l) in rows.iter().zip(loads) {
        assert_eq!(r.load_mbps, l);
        assert_eq!(r.seed, 5);
        assert!(dir.path().join(format!("load_{l}")).join(SUMMARY_FILE).exists());
    }
    assert!(rows.windows(2).all(|w| w[0].loss_rate <= w[1].loss_rate), "{rows:?}");
    assert!(rows[2].loss_rate > rows[0].loss_rate);
    assert_eq!(read_csv::<SummaryRow>(&dir.path().join(SUMMARY_FILE)).unwrap(), rows);
}

#[test]
fn throughput_never_exceeds_offered() {
    for k in 0..50u64 {
        let mut c = grid_config(2, 3, 0.2 + 0.4 * k as f64, 1000 + k);
        c.run.policy = if k % 2 == 0 {
            PolicyKind::Random
        } else {
            PolicyKind::Dijkstra
        };
        c.link.capacity_bps = 2.4e6;
        c.traffic.amplitude = (k % 3) as f64 * 0.5;
        c.run.eval_slots = Some(150);
        let m = simulate(&c).unwrap().metrics;
        assert!(m.throughput_mbps <= m.offered_mbps + 1e-12, "run {k}: {m:?}");
        assert!(m.delivered + m.dropped <= m.generated);
        assert!(m.conservation_holds);
    }
}

#[test]
fn baseline_network_has_its_own_parameter_count() {
    let count = |policy| {
        let mut c = grid_config(2, 2, 0.1, 1);
        c.run.policy = policy;
        let sim = Simulation::new(&c).unwrap();
        sim.policy().agent().unwrap().online().num_params()
    };
    let (proposed, dense) = (count(PolicyKind::Proposed), count(PolicyKind::MlpDqn));
    assert!(proposed > 0 && dense > 0);
    assert_ne!(proposed, dense);
}

#[test]
fn repeated_updates_on_a_frozen_batch_reduce_loss() {
    let mut c = grid_config(2, 3, 1.0, 21);
    desk_agent(&mut c, 0);
    c.agent.batch_size = 10_000;
    let mut sim = Simulation::new(&c).unwrap();
    for t in 0..60 {
        sim.step(t).unwrap();
    }
    let agent = sim.policy().agent().unwrap();
    let batch: Vec<_> = agent.buffer().iter().take(64).collect();
    assert_eq!(batch.len(), 64);
    let mut online = agent.online().clone();
    let target = agent.target().clone();
    let mut opt = Optimizer::new(OptimizerKind::Adam, 1e-3);
    let first = train_on_batch(&batch, &mut online, &target, &mut opt, 0.99, 10.0)
        .unwrap()
        .loss;
    let mut last = first;
    for _ in 0..19 {
        last = train_on_batch(&batch, &mut online, &target, &mut opt, 0.99, 10.0)
            .unwrap()
            .loss;
    }
    assert!(last < first, "{first} -> {last}");
}

#[test]
fn missing_seed_is_a_config_error() {
    let mut c = grid_config(2, 2, 0.1, 0);
    c.run.seed = None;
    assert!(matches!(simulate(&c), Err(Error::InvalidConfig { .. })));
}

#[test]
fn mismatched_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = grid_config(2, 2, 0.1, 4);
    desk_agent(&mut c, 0);
    c.run.eval_slots = Some(10);
    c.run.out_dir = Some(dir.path().to_path_buf());
    harness::run_experiment(&c).unwrap();
    let mut other = c.clone();
    other.run.out_dir = None;
    other.run.checkpoint = Some(dir.path().join(harness::CHECKPOINT_FILE));
    simulate(&other).unwrap();
    other.agent.arch.lstm_hidden = 16;
    assert!(matches!(simulate(&other), Err(Error::Checkpoint(_))));
}

#[test]
fn shipped_configs_validate() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            harness::ExperimentConfig::from_path(&path).unwrap().validate().unwrap();
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
