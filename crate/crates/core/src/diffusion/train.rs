use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::num::Real;
use crate::scene::{ConditionLayout, ConditionVector};
use crate::traj::Trajectory;

use super::checkpoint::{flatten_label, Normalization, PlannerCheckpoint, TrainMetadata};
use super::denoiser::{Denoiser, DenoiserConfig, TrainItem};
use super::sampler::anchor_seed;
use super::schedule::{NoiseSchedule, ScheduleConfig};
use super::DiffusionError;

/// Floor on label standard deviations, in metres.
pub const MIN_LABEL_STD: f64 = 1e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` under cosine decay.
    pub lr_floor: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub schedule: ScheduleConfig,
    /// Items per parallel gradient chunk. Fixes the summation order.
    pub chunk: usize,
    pub probe_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 1e-3,
            lr_floor: 0.05,
            weight_decay: 0.01,
            grad_clip: 1.0,
            seed: 0,
            schedule: ScheduleConfig::default(),
            chunk: 8,
            probe_size: 256,
        }
    }
}

/// Label statistics over the dataset.
pub fn label_normalization<T: Real>(labels: &[Vec<T>]) -> Normalization<T> {
    let d = labels[0].len();
    let n = labels.len() as f64;
    let mut mean = vec![0.0f64; d];
    for l in labels {
        for (m, v) in mean.iter_mut().zip(l) {
            *m += v.to_f64_lossy();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; d];
    for l in labels {
        for ((s, v), m) in var.iter_mut().zip(l).zip(&mean) {
            let e = v.to_f64_lossy() - m;
            *s += e * e;
        }
    }
    Normalization {
        mean: mean.into_iter().map(T::lit).collect(),
        std: var.into_iter().map(|s| T::lit((s / n).sqrt().max(MIN_LABEL_STD))).collect(),
    }
}

struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    fn new(n: usize) -> Self {
        Adam { m: vec![T::zero(); n], v: vec![T::zero(); n], t: 0 }
    }

    fn step(&mut self, params: &mut [T], grad: &[T], lr: T, weight_decay: T) {
        let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
        self.t += 1;
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] = params[i] - lr * (mh / (vh.sqrt() + eps) + weight_decay * params[i]);
        }
    }
}

/// Noisy inputs and their noise for a fixed set of examples.
struct Noised<T> {
    x: Vec<T>,
    eps: Vec<T>,
    k: Vec<usize>,
}

fn noise_items<T: Real, R: Rng>(
    idx: &[usize],
    labels: &[Vec<T>],
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Noised<T> {
    let d = labels[0].len();
    let mut out = Noised { x: Vec::with_capacity(idx.len() * d), eps: Vec::with_capacity(idx.len() * d), k: Vec::new() };
    for &i in idx {
        let k = rng.random_range(0..sched.steps());
        let ab = sched.alpha_bars[k];
        let (a, b) = (ab.sqrt(), (T::one() - ab).sqrt());
        for &x0 in &labels[i] {
            let e = T::lit(rng.sample::<f64, _>(StandardNormal));
            out.eps.push(e);
            out.x.push(a * x0 + b * e);
        }
        out.k.push(k);
    }
    out
}

fn items<'a, T: Real>(idx: &[usize], noised: &'a Noised<T>, conds: &'a [Vec<T>], d: usize) -> Vec<TrainItem<'a, T>> {
    idx.iter()
        .enumerate()
        .map(|(j, &i)| TrainItem {
            x: &noised.x[j * d..(j + 1) * d],
            k: noised.k[j],
            cond: &conds[i],
            eps: &noised.eps[j * d..(j + 1) * d],
        })
        .collect()
}

/// Loss and gradient over `batch`, evaluated in fixed-size chunks that may
/// run on different threads and are summed in chunk order.
fn batch_grad<T: Real>(model: &Denoiser<T>, batch: &[TrainItem<'_, T>], denom: usize, chunk: usize) -> (T, Vec<T>) {
    let np = model.params.len();
    let parts: Vec<(T, Vec<T>)> = batch
        .par_chunks(chunk.max(1))
        .map(|c| {
            let mut g = vec![T::zero(); np];
            let l = model.loss_and_grad(c, denom, Some(&mut g));
            (l, g)
        })
        .collect();
    let mut loss = T::zero();
    let mut grad = vec![T::zero(); np];
    for (l, g) in parts {
        loss = loss + l;
        grad.iter_mut().zip(&g).for_each(|(a, &b)| *a = *a + b);
    }
    (loss, grad)
}

fn probe_loss<T: Real>(model: &Denoiser<T>, probe: &[TrainItem<'_, T>], denom: usize, chunk: usize) -> T {
    let parts: Vec<T> = probe.par_chunks(chunk.max(1)).map(|c| model.loss_and_grad(c, denom, None)).collect();
    parts.into_iter().fold(T::zero(), |a, b| a + b)
}

/// Fits the noise-prediction network to ego-frame labels.
pub fn train<T: Real>(
    dataset: &[(ConditionVector<T>, Trajectory<T>)],
    layout: &ConditionLayout,
    config: &TrainConfig,
) -> Result<PlannerCheckpoint<T>, DiffusionError> {
    if dataset.is_empty() {
        return Err(DiffusionError::EmptyDataset);
    }
    for (i, (cond, traj)) in dataset.iter().enumerate() {
        if !traj.is_canonical() {
            return Err(DiffusionError::NonCanonicalTrajectory(i));
        }
        if cond.len() != layout.len() {
            return Err(DiffusionError::ShapeMismatch { expected: vec![layout.len()], found: vec![cond.len()] });
        }
    }
    if config.batch_size == 0 {
        return Err(DiffusionError::InvalidConfig("batch_size must be positive".into()));
    }

    let scales: Vec<T> = layout.input_scales();
    let conds: Vec<Vec<T>> =
        dataset.iter().map(|(c, _)| c.0.iter().zip(&scales).map(|(&v, &s)| v * s).collect()).collect();
    let raw: Vec<Vec<T>> = dataset.iter().map(|(_, t)| flatten_label(t)).collect();
    let norm = label_normalization(&raw);
    let labels: Vec<Vec<T>> = raw
        .into_iter()
        .map(|mut l| {
            norm.normalize(&mut l);
            l
        })
        .collect();
    let d = labels[0].len();

    let sched = NoiseSchedule::<T>::new(&config.schedule)?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = Denoiser::new(DenoiserConfig::new(layout.len()), &mut init_rng)?;

    let probe_idx: Vec<usize> = (0..config.probe_size.min(dataset.len())).collect();
    let probe_noise = noise_items(&probe_idx, &labels, &sched, &mut ChaCha8Rng::seed_from_u64(anchor_seed(config.seed, usize::MAX)));
    let probe = items(&probe_idx, &probe_noise, &conds, d);

    let n = dataset.len();
    let steps_per_epoch = n.div_ceil(config.batch_size);
    let total_steps = (steps_per_epoch * config.epochs).max(1);
    let mut adam = Adam::new(model.params.len());
    let mut order: Vec<usize> = (0..n).collect();
    let mut meta = TrainMetadata {
        seed: config.seed,
        epochs: config.epochs,
        lr: config.lr,
        batch_size: config.batch_size,
        samples: n,
        ..Default::default()
    };

    let mut step = 0usize;
    for epoch in 0..config.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(anchor_seed(config.seed, epoch));
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for idx in order.chunks(config.batch_size) {
            let noised = noise_items(idx, &labels, &sched, &mut rng);
            let batch = items(idx, &noised, &conds, d);
            let (loss, mut grad) = batch_grad(&model, &batch, idx.len() * d, config.chunk);
            epoch_loss += loss.to_f64_lossy() * idx.len() as f64;

            if config.grad_clip > 0.0 {
                let norm = grad.iter().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
                if norm > config.grad_clip {
                    let s = T::lit(config.grad_clip / norm);
                    grad.iter_mut().for_each(|g| *g = *g * s);
                }
            }
            let progress = step as f64 / total_steps as f64;
            let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            let lr = config.lr * (config.lr_floor + (1.0 - config.lr_floor) * cosine);
            adam.step(&mut model.params, &grad, T::lit(lr), T::lit(config.weight_decay));
            step += 1;
        }
        let mean = epoch_loss / n as f64;
        meta.loss_curve.push(mean);
        if !probe.is_empty() {
            meta.probe_curve.push(probe_loss(&model, &probe, probe.len() * d, config.chunk).to_f64_lossy());
        }
        log::info!("epoch {}/{}: loss {:.5}", epoch + 1, config.epochs, mean);
    }

    Ok(PlannerCheckpoint::new(config.schedule, *layout, model, Some(norm), meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_floor_and_moments() {
        let labels = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let n: Normalization<f64> = label_normalization(&labels);
        assert_eq!(n.mean, vec![2.0, 5.0]);
        assert_eq!(n.std, vec![1.0, MIN_LABEL_STD]);
        assert!(n.is_valid());
    }

    #[test]
    fn adam_with_zero_lr_is_identity() {
        let mut p = vec![0.3f64, -1.2, 7.0];
        let before = p.clone();
        let mut opt = Adam::new(3);
        opt.step(&mut p, &[1.0, -2.0, 0.5], 0.0, 0.01);
        assert_eq!(p, before);
    }
}
