use diffplan::diffusion::{train, PlannerCheckpoint, SamplerConfig, TrainConfig};
use diffplan::sim::dataset::{build_dataset_with, scenario_samples, DatasetOptions};
use diffplan::sim::metrics::recheck_collision;
use diffplan::sim::*;
use sha2::{Digest, Sha256};

fn tiny_checkpoint() -> PlannerCheckpoint<f64> {
    let ds = build_dataset_with(6, 3, &DatasetOptions::default()).unwrap();
    let cfg = TrainConfig { epochs: 1, probe_size: 16, ..TrainConfig::default() };
    train(&ds.samples, &ds.header.layout, &cfg).unwrap()
}

fn digest(ds: &Dataset) -> Vec<u8> {
    let mut buf = Vec::new();
    ds.write_to(&mut buf).unwrap();
    Sha256::digest(&buf).to_vec()
}

#[test]
fn scenarios_are_deterministic_and_safe() {
    for kind in ScenarioKind::ALL {
        for seed in 0..4 {
            let a = generate_scenario(seed, kind).unwrap();
            let b = generate_scenario(seed, kind).unwrap();
            assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
            assert_eq!(a.n_ticks(), 30);
            for (i, st) in a.expert.iter().enumerate() {
                assert!(a.clearance(st.position(), Scenario::tick_time(i)) > 0.0, "{kind} seed {seed} tick {i}");
            }
            if kind.is_dense() {
                assert!(a.salient(), "{kind} seed {seed}");
            }
        }
    }
}

#[test]
fn stop_scenario_comes_to_rest() {
    for seed in 0..5 {
        let sc = generate_scenario(seed, ScenarioKind::Stop).unwrap();
        assert!(sc.expert.last().unwrap().v < 0.1, "seed {seed}");
    }
}

#[test]
fn straight_labels_move_forward() {
    let opts = DatasetOptions { kinds: vec![ScenarioKind::Straight], ..DatasetOptions::default() };
    let ds = build_dataset_with(10, 1, &opts).unwrap();
    assert!(!ds.samples.is_empty());
    for (cond, label) in &ds.samples {
        assert_eq!(cond.len(), ds.header.cond_len);
        assert!(label.points.windows(2).all(|w| w[1].x > w[0].x));
    }
}

#[test]
fn dataset_is_reproducible_and_round_trips() {
    let a = build_dataset(8, 5).unwrap();
    let b = build_dataset(8, 5).unwrap();
    assert_eq!(digest(&a), digest(&b));
    assert_ne!(digest(&a), digest(&build_dataset(8, 6).unwrap()));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.bin");
    a.save(&path).unwrap();
    let back = Dataset::load(&path).unwrap();
    assert_eq!(back, a);

    assert!(matches!(build_dataset(0, 0), Err(SimError::EmptyDataset)));
    let mut bytes = Vec::new();
    a.write_to(&mut bytes).unwrap();
    bytes[0] = b'X';
    assert!(matches!(Dataset::read_from(&bytes[..]), Err(SimError::Format(_))));
}

#[test]
fn stride_partitions_ticks() {
    let sc = generate_scenario(2, ScenarioKind::LeftTurn).unwrap();
    let layout = Default::default();
    let even = scenario_samples(&sc, &layout, 2, 0).unwrap();
    let odd = scenario_samples(&sc, &layout, 2, 1).unwrap();
    assert_eq!(even.len() + odd.len(), sc.n_ticks());
}

#[test]
fn expert_playback_tracks_without_collision() {
    let scs = scenario_set(12, 0, &ScenarioKind::ALL, 15.0).unwrap();
    let logs = run_benchmark(&scs, &ExpertPlayback, &ClosedLoopConfig::default()).unwrap();
    let m = evaluate(&logs).unwrap();
    assert!(m.l2_avg < 0.05, "{m:?}");
    assert_eq!(m.collision_avg, 0.0);
    assert_eq!(m.hard_collision_episodes, 0);
    for l in &logs {
        if l.kind.is_dense() {
            assert!(l.conservative_directives() >= 1, "{} {}", l.kind, l.scenario_seed);
        }
    }
}

#[test]
fn standstill_error_is_expert_displacement() {
    let sc = generate_scenario(4, ScenarioKind::Straight).unwrap();
    let log = run_closed_loop(&sc, &Standstill, &ClosedLoopConfig::default()).unwrap();
    let m = evaluate(std::slice::from_ref(&log)).unwrap();
    let mut expect = 0.0;
    for r in &log.ticks {
        let end = r.expert_future.points[5];
        expect += ((end.x - r.ego.p_x).powi(2) + (end.y - r.ego.p_y).powi(2)).sqrt();
    }
    expect /= log.ticks.len() as f64;
    assert!((m.l2[2] - expect).abs() < 1e-9);
    assert!(log.final_state.v < 1e-6);
}

#[test]
fn closed_loop_is_deterministic_and_selects_the_cheapest() {
    let ck = tiny_checkpoint();
    let planner = DiffusionCandidates::from_checkpoint(&ck, 4, SamplerConfig::Ddim { steps: 5 }).unwrap();
    let sc = generate_scenario(9, ScenarioKind::OvertakeStatic).unwrap();
    let cfg = ClosedLoopConfig::default();
    let a = run_closed_loop(&sc, &planner, &cfg).unwrap();
    let b = run_closed_loop(&sc, &planner, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());

    for r in &a.ticks {
        assert_eq!(r.candidates.len(), 4);
        let min = r.costs.iter().map(|c| c.c_total).fold(f64::INFINITY, f64::min);
        assert_eq!(r.costs[r.selected].c_total, min);
        for h in [1.0, 2.0, 3.0] {
            assert_eq!(recheck_collision(r, h), diffplan::sim::metrics::plan_collides(&r.selected_world(), &r.obstacles, h));
        }
    }

    let random = ClosedLoopConfig { selection: Selection::Random, ..ClosedLoopConfig::default() };
    let c = run_closed_loop(&sc, &planner, &random).unwrap();
    let d = run_closed_loop(&sc, &planner, &random).unwrap();
    assert_eq!(serde_json::to_string(&c).unwrap(), serde_json::to_string(&d).unwrap());
}

#[test]
fn ablation_rows_follow_requested_counts() {
    let ck = tiny_checkpoint();
    let planner = DiffusionCandidates::from_checkpoint(&ck, 1, SamplerConfig::Ddim { steps: 4 }).unwrap();
    let scs = scenario_set(2, 11, &ScenarioKind::ALL, 6.0).unwrap();
    let cfg = ClosedLoopConfig::default();
    let rows = ablate_anchors(&[1, 3, 3], &scs, &planner, &cfg).unwrap();
    assert_eq!(rows.iter().map(|r| r.anchors).collect::<Vec<_>>(), vec![1, 3, 3]);
    assert_eq!(rows[1].metrics, rows[2].metrics);
    let csv = ablation_csv(&rows);
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.starts_with("anchors,"));
    assert!(ablate_anchors(&[], &scs, &planner, &cfg).is_err());
}

#[test]
fn evaluate_rejects_empty_input() {
    assert!(matches!(evaluate(&[]), Err(SimError::NoEpisodes)));
}

#[test]
fn long_episode_queries_six_times() {
    let sc = generate_scenario_with(1, ScenarioKind::Straight, 30.0, ExpertConfig::default()).unwrap();
    let log = run_closed_loop(&sc, &ExpertPlayback, &ClosedLoopConfig::default()).unwrap();
    assert_eq!(log.ticks.len(), 60);
    assert_eq!(log.queries, 6);
    let off = ClosedLoopConfig { regulator: RegulatorMode::Off, ..ClosedLoopConfig::default() };
    assert_eq!(run_closed_loop(&sc, &ExpertPlayback, &off).unwrap().queries, 0);
}

#[test]
fn metrics_csv_has_fixed_columns() {
    let sc = generate_scenario(0, ScenarioKind::RightTurn).unwrap();
    let log = run_closed_loop(&sc, &ExpertPlayback, &ClosedLoopConfig::default()).unwrap();
    let csv = evaluate(&[log]).unwrap().to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0].split(',').count(), lines[1].split(',').count());
}
