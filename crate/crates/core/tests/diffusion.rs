use diffplan::diffusion::denoiser::TrainItem;
use diffplan::diffusion::*;
use diffplan::scene::{ConditionLayout, ConditionVector};
use diffplan::traj::Trajectory;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sched() -> NoiseSchedule<f64> {
    NoiseSchedule::new(&ScheduleConfig::default()).unwrap()
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

/// Central-difference gradient check on every parameter group, full-size network.
#[test]
fn gradients_match_finite_differences() {
    let layout = ConditionLayout::default();
    let config = DenoiserConfig::new(layout.len());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut model: Denoiser<f64> = Denoiser::new_dense_random(config, 0.15, &mut rng).unwrap();

    let n = 4;
    let xs: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, 12, 1.5)).collect();
    let eps: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, 12, 1.5)).collect();
    let conds: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, layout.len(), 1.0)).collect();
    let ks = [0usize, 17, 58, 99];

    let loss_of = |m: &Denoiser<f64>, grad: Option<&mut [f64]>| {
        let items: Vec<TrainItem<'_, f64>> = (0..n)
            .map(|i| TrainItem { x: &xs[i], k: ks[i], cond: &conds[i], eps: &eps[i] })
            .collect();
        m.loss_and_grad(&items, n * 12, grad)
    };
    let mut grad = vec![0.0; model.params.len()];
    let l0 = loss_of(&model, Some(&mut grad));
    assert!((l0 - loss_of(&model, None)).abs() < 1e-12);

    let h = 1e-4;
    for (name, range) in model.group_ranges() {
        let picks: Vec<usize> = if range.len() <= 24 {
            range.clone().collect()
        } else {
            (0..24).map(|_| rng.random_range(range.clone())).collect()
        };
        let mut worst: f64 = 0.0;
        for i in picks {
            let orig = model.params[i];
            model.params[i] = orig + h;
            let lp = loss_of(&model, None);
            model.params[i] = orig - h;
            let lm = loss_of(&model, None);
            model.params[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-7);
            worst = worst.max((grad[i] - fd).abs() / denom);
        }
        assert!(worst < 1e-3, "group {name}: relative error {worst}");
    }
}

#[test]
fn zero_film_projection_ignores_condition() {
    let config = DenoiserConfig::new(20);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model: Denoiser<f64> = Denoiser::new_dense_random(config, 0.2, &mut rng).unwrap();
    let x = TrajectoryBatch::standard_normal([1, 4, 6, 2], &mut rng);
    let c1 = random_vec(&mut rng, 20, 2.0);
    let c2 = random_vec(&mut rng, 20, 2.0);
    assert_ne!(model.predict_noise(&x, 5, &c1).unwrap(), model.predict_noise(&x, 5, &c2).unwrap());
    model.zero_film_projection();
    assert_eq!(model.predict_noise(&x, 5, &c1).unwrap(), model.predict_noise(&x, 5, &c2).unwrap());
}

#[test]
fn forward_noise_variance_matches_schedule() {
    let s = sched();
    let k = 30;
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let clean = TrajectoryBatch::standard_normal([n, 1, 6, 2], &mut rng);
    let eps = TrajectoryBatch::standard_normal([n, 1, 6, 2], &mut rng);
    let out = forward_noise(&clean, k, &eps, &s).unwrap();
    let a = s.alpha_bars[k].sqrt();
    let target = 1.0 - s.alpha_bars[k];
    for e in 0..12 {
        let vals: Vec<f64> = (0..n).map(|b| out.item(b, 0)[e] - a * clean.item(b, 0)[e]).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var / target - 1.0).abs() < 0.02, "element {e}: {var} vs {target}");
    }
}

#[test]
fn clean_inversion_round_trips_all_steps() {
    let s = sched();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..s.steps() {
        let clean = TrajectoryBatch::standard_normal([2, 3, 6, 2], &mut rng);
        let eps = TrajectoryBatch::standard_normal([2, 3, 6, 2], &mut rng);
        let noisy = forward_noise(&clean, k, &eps, &s).unwrap();
        let back = predict_clean(&noisy, k, &eps, &s).unwrap();
        for (b, c) in back.data().iter().zip(clean.data()) {
            assert!((b - c).abs() < 1e-6, "k={k}");
        }
    }
}

#[test]
fn untrained_samplers_are_finite_and_deterministic() {
    let config = DenoiserConfig::new(12);
    let model: Denoiser<f64> = Denoiser::new(config, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let s = sched();
    let cond = vec![0.3; 12];
    let a = sample_ddpm(&model, &cond, 8, [6, 2], &s, 42).unwrap();
    let b = sample_ddpm(&model, &cond, 8, [6, 2], &s, 42).unwrap();
    assert_eq!(a.shape(), [1, 8, 6, 2]);
    assert!(a.is_finite());
    assert_eq!(a, b);
    let c = sample_ddpm(&model, &cond, 8, [6, 2], &s, 43).unwrap();
    assert_ne!(a, c);

    let d1 = sample_ddim(&model, &cond, 8, [6, 2], &s, 100, 9).unwrap();
    let d2 = sample_ddim(&model, &cond, 8, [6, 2], &s, 100, 9).unwrap();
    assert_eq!(d1.shape(), [1, 8, 6, 2]);
    assert!(d1.is_finite());
    assert_eq!(d1, d2);
    assert!(matches!(
        sample_ddim(&model, &cond, 8, [6, 2], &s, 0, 9),
        Err(DiffusionError::StepsOutOfRange { .. })
    ));
}

fn toy_dataset(n: usize, layout: &ConditionLayout, seed: u64, identical: bool) -> Vec<(ConditionVector<f64>, Trajectory<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let v = if identical { 8.0 } else { rng.random_range(2.0..12.0) };
            let curve = if identical { 0.02 } else { rng.random_range(-0.05..0.05) };
            let xy: Vec<[f64; 2]> = (1..=6)
                .map(|i| {
                    let s = v * 0.5 * i as f64;
                    [s, curve * s * s / 2.0]
                })
                .collect();
            let mut cond = vec![0.0; layout.len()];
            cond[3] = 1.0;
            cond[4] = v;
            cond[6] = 3.0 * v;
            cond[7] = curve * 20.0;
            (ConditionVector(cond), Trajectory::from_xy(&xy, 0.5))
        })
        .collect()
}

#[test]
fn training_rejects_bad_input() {
    let layout = ConditionLayout::default();
    assert_eq!(train::<f64>(&[], &layout, &TrainConfig::default()).unwrap_err(), DiffusionError::EmptyDataset);
    let mut ds = toy_dataset(3, &layout, 0, false);
    ds[1].1 = Trajectory::from_xy(&[[1.0, 0.0], [2.0, 0.0]], 0.5);
    assert_eq!(train(&ds, &layout, &TrainConfig::default()).unwrap_err(), DiffusionError::NonCanonicalTrajectory(1));
}

#[test]
fn zero_learning_rate_keeps_params() {
    let layout = ConditionLayout::default();
    let ds = toy_dataset(24, &layout, 1, false);
    let config = TrainConfig { epochs: 3, lr: 0.0, batch_size: 8, probe_size: 16, ..Default::default() };
    let ck = train(&ds, &layout, &config).unwrap();
    let init: Denoiser<f64> =
        Denoiser::new(DenoiserConfig::new(layout.len()), &mut ChaCha8Rng::seed_from_u64(config.seed)).unwrap();
    assert_eq!(ck.params, init.params);
    let p = &ck.metadata.probe_curve;
    assert_eq!(p.len(), 3);
    assert!(p.iter().all(|&v| v == p[0]));
    let l = &ck.metadata.loss_curve;
    assert!(l.iter().all(|&v| (v / l[0] - 1.0).abs() < 0.5));
}

#[test]
fn training_is_deterministic() {
    let layout = ConditionLayout::default();
    let ds = toy_dataset(40, &layout, 2, false);
    let config = TrainConfig { epochs: 2, batch_size: 16, ..Default::default() };
    let a = train(&ds, &layout, &config).unwrap();
    let b = train(&ds, &layout, &config).unwrap();
    assert_eq!(a, b);
}

#[test]
fn overfits_single_target() {
    let layout = ConditionLayout::default();
    let ds = toy_dataset(64, &layout, 3, true);
    let config = TrainConfig { epochs: 60, batch_size: 16, lr: 2e-3, probe_size: 64, ..Default::default() };
    let ck = train(&ds, &layout, &config).unwrap();
    let last = *ck.metadata.loss_curve.last().unwrap();
    assert!(last < 0.05, "final loss {last}");
    let planner = ck.planner().unwrap();
    let batch = planner.sample_ddpm(&ds[0].0, 8, 5).unwrap();
    let target: Vec<f64> = ds[0].1.points.iter().flat_map(|w| [w.x, w.y]).collect();
    for e in 0..12 {
        let mean = (0..8).map(|a| batch.item(0, a)[e]).sum::<f64>() / 8.0;
        assert!((mean - target[e]).abs() < 0.3, "element {e}: {mean} vs {}", target[e]);
    }
}

#[test]
fn checkpoint_round_trips_through_json() {
    let layout = ConditionLayout::default();
    let ds = toy_dataset(16, &layout, 4, false);
    let ck = train(&ds, &layout, &TrainConfig { epochs: 1, batch_size: 8, ..Default::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    ck.save(&path).unwrap();
    let back = PlannerCheckpoint::<f64>::load(&path).unwrap();
    assert_eq!(ck, back);
    let a = ck.planner().unwrap().sample_ddim(&ds[0].0, 4, 10, 1).unwrap();
    let b = back.planner().unwrap().sample_ddim(&ds[0].0, 4, 10, 1).unwrap();
    assert_eq!(a, b);

    let mut untrained = back.clone();
    untrained.normalization = None;
    assert_eq!(untrained.planner().unwrap_err(), DiffusionError::UntrainedCheckpoint);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn samplers_keep_shape_and_finiteness(seed in 0u64..1000, anchors in 1usize..6, steps in 1usize..20, scale in 0.01f64..1.0) {
        let config = DenoiserConfig { cond_dim: 7, hidden: 16, blocks: 3, kernel: 3, film_hidden: 16, step_embed: 16, horizon: 6, coords: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model: Denoiser<f64> = Denoiser::new_dense_random(config, scale, &mut rng).unwrap();
        let s = NoiseSchedule::new(&ScheduleConfig::with_steps(20)).unwrap();
        let cond = random_vec(&mut rng, 7, 3.0);
        let a = sample_ddpm(&model, &cond, anchors, [6, 2], &s, seed).unwrap();
        prop_assert_eq!(a.shape(), [1, anchors, 6, 2]);
        prop_assert!(a.is_finite());
        let d = sample_ddim(&model, &cond, anchors, [6, 2], &s, steps, seed).unwrap();
        prop_assert_eq!(d.shape(), [1, anchors, 6, 2]);
        prop_assert!(d.is_finite());
    }

    #[test]
    fn single_step_oracle_inverts(seed in 0u64..10_000, beta in 1e-4f64..0.5) {
        let s = NoiseSchedule::from_betas(vec![beta]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clean = TrajectoryBatch::<f64>::standard_normal([1, 3, 6, 2], &mut rng);
        let eps = TrajectoryBatch::<f64>::standard_normal([1, 3, 6, 2], &mut rng);
        let noisy = forward_noise(&clean, 0, &eps, &s).unwrap();
        let back = ddpm_update(&noisy, &eps, 0, &s, None).unwrap();
        for (b, c) in back.data().iter().zip(clean.data()) {
            prop_assert!((b - c).abs() < 1e-6);
        }
    }
}
