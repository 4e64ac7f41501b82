use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::num::Real;

use super::batch::TrajectoryBatch;
use super::denoiser::NoisePredictor;
use super::schedule::NoiseSchedule;
use super::DiffusionError;

/// `sqrt(alpha_bar_k) * clean + sqrt(1 - alpha_bar_k) * eps`.
pub fn forward_noise<T: Real>(
    clean: &TrajectoryBatch<T>,
    k: usize,
    eps: &TrajectoryBatch<T>,
    sched: &NoiseSchedule<T>,
) -> Result<TrajectoryBatch<T>, DiffusionError> {
    sched.check_step(k)?;
    clean.check_same_shape(eps)?;
    let ab = sched.alpha_bars[k];
    let (a, b) = (ab.sqrt(), (T::one() - ab).sqrt());
    let data = clean.data().iter().zip(eps.data()).map(|(&x, &e)| a * x + b * e).collect();
    TrajectoryBatch::from_vec(clean.shape(), data)
}

/// Clean-sample estimate `(x - sqrt(1 - alpha_bar_k) eps) / sqrt(alpha_bar_k)`.
pub fn predict_clean<T: Real>(
    noisy: &TrajectoryBatch<T>,
    k: usize,
    eps: &TrajectoryBatch<T>,
    sched: &NoiseSchedule<T>,
) -> Result<TrajectoryBatch<T>, DiffusionError> {
    sched.check_step(k)?;
    noisy.check_same_shape(eps)?;
    let ab = sched.alpha_bars[k];
    let (a, b) = (ab.sqrt(), (T::one() - ab).sqrt());
    let data = noisy.data().iter().zip(eps.data()).map(|(&x, &e)| (x - b * e) / a).collect();
    TrajectoryBatch::from_vec(noisy.shape(), data)
}

/// Reverse update `(x - beta_k / sqrt(1 - alpha_bar_k) eps_hat) / sqrt(alpha_k) + sigma z`
/// with `sigma^2 = beta_k`. `z` is ignored at `k = 0`.
pub fn ddpm_update<T: Real>(
    noisy: &TrajectoryBatch<T>,
    eps_hat: &TrajectoryBatch<T>,
    k: usize,
    sched: &NoiseSchedule<T>,
    z: Option<&TrajectoryBatch<T>>,
) -> Result<TrajectoryBatch<T>, DiffusionError> {
    sched.check_step(k)?;
    noisy.check_same_shape(eps_hat)?;
    let beta = sched.betas[k];
    let inv_sqrt_alpha = T::one() / sched.alphas[k].sqrt();
    let gamma = beta / (T::one() - sched.alpha_bars[k]).sqrt();
    let mut data: Vec<T> =
        noisy.data().iter().zip(eps_hat.data()).map(|(&x, &e)| inv_sqrt_alpha * (x - gamma * e)).collect();
    if let (true, Some(z)) = (k > 0, z) {
        noisy.check_same_shape(z)?;
        let sigma = beta.sqrt();
        data.iter_mut().zip(z.data()).for_each(|(d, &zv)| *d = *d + sigma * zv);
    }
    TrajectoryBatch::from_vec(noisy.shape(), data)
}

/// One reverse step with the model's noise estimate; fresh noise from `rng`
/// for `k > 0`.
pub fn denoise_step<T: Real, P: NoisePredictor<T> + ?Sized, R: Rng + ?Sized>(
    model: &P,
    noisy: &TrajectoryBatch<T>,
    k: usize,
    cond: &[T],
    sched: &NoiseSchedule<T>,
    rng: &mut R,
) -> Result<TrajectoryBatch<T>, DiffusionError> {
    sched.check_step(k)?;
    let eps_hat = model.predict_noise(noisy, k, cond)?;
    let z = if k > 0 { Some(TrajectoryBatch::standard_normal(noisy.shape(), rng)) } else { None };
    ddpm_update(noisy, &eps_hat, k, sched, z.as_ref())
}

/// Seed of the private noise stream of one anchor. Anchor `i` draws the same
/// noise whatever the total anchor count.
pub fn anchor_seed(seed: u64, anchor: usize) -> u64 {
    let mut z = seed ^ (anchor as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn anchor_rngs(seed: u64, n: usize) -> Vec<ChaCha8Rng> {
    (0..n).map(|a| ChaCha8Rng::seed_from_u64(anchor_seed(seed, a))).collect()
}

fn draw<T: Real>(rngs: &mut [ChaCha8Rng], item_len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rngs.len() * item_len);
    for rng in rngs.iter_mut() {
        out.extend((0..item_len).map(|_| T::lit(rng.sample::<f64, _>(StandardNormal))));
    }
    out
}

fn check_anchors(n: usize) -> Result<(), DiffusionError> {
    if n == 0 {
        return Err(DiffusionError::InvalidConfig("n_anchors must be at least 1".into()));
    }
    Ok(())
}

/// Full ancestral sampling over all `K` steps, in the model's (normalized)
/// space. Returns `[1, n_anchors, T, P]`.
pub fn sample_ddpm<T: Real, P: NoisePredictor<T> + ?Sized>(
    model: &P,
    cond: &[T],
    n_anchors: usize,
    item: [usize; 2],
    sched: &NoiseSchedule<T>,
    seed: u64,
) -> Result<TrajectoryBatch<T>, DiffusionError> {
    check_anchors(n_anchors)?;
    let shape = [1, n_anchors, item[0], item[1]];
    let len = item[0] * item[1];
    let mut rngs = anchor_rngs(seed, n_anchors);
    let mut x = TrajectoryBatch::from_vec(shape, draw(&mut rngs, len))?;
    for k in (0..sched.steps()).rev() {
        let eps_hat = model.predict_noise(&x, k, cond)?;
        let z = if k > 0 { Some(TrajectoryBatch::from_vec(shape, draw(&mut rngs, len))?) } else { None };
        x = ddpm_update(&x, &eps_hat, k, sched, z.as_ref())?;
    }
    Ok(x)
}

/// Strided descending step subset used by DDIM: `K-1 - floor(i K / n)`.
pub fn ddim_timesteps(k_total: usize, n: usize) -> Result<Vec<usize>, DiffusionError> {
    if n == 0 || n > k_total {
        return Err(DiffusionError::StepsOutOfRange { n, steps: k_total });
    }
    Ok((0..n).map(|i| k_total - 1 - i * k_total / n).collect())
}

/// Bound on the clean-sample estimate inside DDIM, in normalized units.
/// Early steps divide by a tiny sqrt(alpha_bar) and would otherwise amplify
/// noise-prediction error without limit.
pub const CLEAN_CLIP: f64 = 5.0;

/// Deterministic DDIM sampling (`eta = 0`) over `n_steps` strided steps.
pub fn sample_ddim<T: Real, P: NoisePredictor<T> + ?Sized>(
    model: &P,
    cond: &[T],
    n_anchors: usize,
    item: [usize; 2],
    sched: &NoiseSchedule<T>,
    n_steps: usize,
    seed: u64,
) -> Result<TrajectoryBatch<T>, DiffusionError> {
    check_anchors(n_anchors)?;
    let taus = ddim_timesteps(sched.steps(), n_steps)?;
    let shape = [1, n_anchors, item[0], item[1]];
    let mut rngs = anchor_rngs(seed, n_anchors);
    let mut x = TrajectoryBatch::from_vec(shape, draw(&mut rngs, item[0] * item[1]))?;
    let clip = T::lit(CLEAN_CLIP);
    for (i, &k) in taus.iter().enumerate() {
        let eps_hat = model.predict_noise(&x, k, cond)?;
        let ab = sched.alpha_bars[k];
        let ab_prev = taus.get(i + 1).map_or(T::one(), |&kp| sched.alpha_bars[kp]);
        let (sa, sb) = (ab.sqrt(), (T::one() - ab).sqrt());
        let (pa, pb) = (ab_prev.sqrt(), (T::one() - ab_prev).sqrt());
        let data = x
            .data()
            .iter()
            .zip(eps_hat.data())
            .map(|(&xv, &e)| {
                let x0 = ((xv - sb * e) / sa).max(-clip).min(clip);
                pa * x0 + pb * e
            })
            .collect();
        x = TrajectoryBatch::from_vec(shape, data)?;
    }
    Ok(x)
}
