use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::num::Real;

use super::batch::TrajectoryBatch;
use super::DiffusionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub cond_dim: usize,
    pub hidden: usize,
    pub blocks: usize,
    pub kernel: usize,
    pub film_hidden: usize,
    pub step_embed: usize,
    pub horizon: usize,
    pub coords: usize,
}

impl DenoiserConfig {
    pub fn new(cond_dim: usize) -> Self {
        DenoiserConfig {
            cond_dim,
            hidden: 64,
            blocks: 3,
            kernel: 3,
            film_hidden: 128,
            step_embed: 16,
            horizon: 6,
            coords: 2,
        }
    }

    pub fn film_in(&self) -> usize {
        self.cond_dim + self.step_embed
    }

    pub fn film_out(&self) -> usize {
        2 * self.hidden * self.blocks
    }

    /// Named parameter groups in storage order.
    pub fn groups(&self) -> Vec<(String, usize)> {
        let (h, p, t) = (self.hidden, self.coords, self.horizon);
        let mut g = vec![
            ("in_w".to_string(), h * p),
            ("in_b".to_string(), h),
            ("pos".to_string(), t * h),
            ("film_w1".to_string(), self.film_hidden * self.film_in()),
            ("film_b1".to_string(), self.film_hidden),
            ("film_w2".to_string(), self.film_out() * self.film_hidden),
            ("film_b2".to_string(), self.film_out()),
        ];
        for b in 0..self.blocks {
            g.push((format!("conv{b}_w"), self.kernel * h * h));
            g.push((format!("conv{b}_b"), h));
        }
        g.push(("out_w".to_string(), p * h));
        g.push(("out_b".to_string(), p));
        g
    }

    pub fn param_count(&self) -> usize {
        self.groups().iter().map(|(_, n)| n).sum()
    }

    fn validate(&self) -> Result<(), DiffusionError> {
        if self.hidden == 0 || self.blocks == 0 || self.kernel % 2 == 0 || self.step_embed % 2 == 1 {
            return Err(DiffusionError::InvalidConfig(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    in_w: usize,
    in_b: usize,
    pos: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    conv0: usize,
    out_w: usize,
    out_b: usize,
}

impl Offsets {
    fn new(c: &DenoiserConfig) -> Self {
        let groups = c.groups();
        let mut acc = 0;
        let starts: Vec<usize> = groups
            .iter()
            .map(|(_, n)| {
                let s = acc;
                acc += n;
                s
            })
            .collect();
        let nb = c.blocks;
        Offsets {
            in_w: starts[0],
            in_b: starts[1],
            pos: starts[2],
            w1: starts[3],
            b1: starts[4],
            w2: starts[5],
            b2: starts[6],
            conv0: starts[7],
            out_w: starts[7 + 2 * nb],
            out_b: starts[8 + 2 * nb],
        }
    }

    fn conv_w(&self, c: &DenoiserConfig, b: usize) -> usize {
        self.conv0 + b * (c.kernel * c.hidden * c.hidden + c.hidden)
    }

    fn conv_b(&self, c: &DenoiserConfig, b: usize) -> usize {
        self.conv_w(c, b) + c.kernel * c.hidden * c.hidden
    }
}

/// Anything that predicts the noise in a `[B, Na, T, P]` batch at step `k`,
/// given one already scaled condition shared by the whole batch.
pub trait NoisePredictor<T: Real>: Sync {
    fn predict_noise(&self, x: &TrajectoryBatch<T>, k: usize, cond: &[T]) -> Result<TrajectoryBatch<T>, DiffusionError>;
}

/// Residual 1-D convolution stack over the time axis with FiLM conditioning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Denoiser<T: Real = f64> {
    pub config: DenoiserConfig,
    pub params: Vec<T>,
}

#[inline]
fn silu<T: Real>(x: T) -> T {
    x * x.sigmoid()
}

#[inline]
fn silu_grad<T: Real>(x: T) -> T {
    let s = x.sigmoid();
    s * (T::one() + x * (T::one() - s))
}

/// Sinusoidal embedding of the diffusion step.
pub fn step_embedding<T: Real>(k: usize, dim: usize) -> Vec<T> {
    let half = dim / 2;
    let mut e = vec![T::zero(); dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let a = k as f64 * freq;
        e[i] = T::lit(a.sin());
        e[half + i] = T::lit(a.cos());
    }
    e
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct Cache<T> {
    z: Vec<T>,
    u: Vec<T>,
    act: Vec<T>,
    g: Vec<T>,
    h_in: Vec<Vec<T>>,
    conv: Vec<Vec<T>>,
    pre: Vec<Vec<T>>,
    h_out: Vec<T>,
}

impl<T: Real> Denoiser<T> {
    /// Layer-wise uniform init with a small output layer.
    pub fn new<R: Rng + ?Sized>(config: DenoiserConfig, rng: &mut R) -> Result<Self, DiffusionError> {
        config.validate()?;
        let mut params = Vec::with_capacity(config.param_count());
        for (name, n) in config.groups() {
            let fan_in = match name.as_str() {
                "in_w" => config.coords,
                "film_w1" => config.film_in(),
                "film_w2" => config.film_hidden,
                "out_w" => config.hidden,
                s if s.starts_with("conv") && s.ends_with("_w") => config.kernel * config.hidden,
                _ => 0,
            };
            let bound = match name.as_str() {
                "pos" => 0.1,
                "film_w2" => 0.1 / (fan_in as f64).sqrt(),
                "out_w" => 0.1 / (fan_in as f64).sqrt(),
                _ if fan_in > 0 => 1.0 / (fan_in as f64).sqrt(),
                _ => 0.0,
            };
            params.extend((0..n).map(|_| T::lit(if bound > 0.0 { rng.random_range(-bound..bound) } else { 0.0 })));
        }
        Ok(Denoiser { config, params })
    }

    /// Every parameter, biases included, uniform in `[-scale, scale]`.
    pub fn new_dense_random<R: Rng + ?Sized>(
        config: DenoiserConfig,
        scale: f64,
        rng: &mut R,
    ) -> Result<Self, DiffusionError> {
        config.validate()?;
        let params = (0..config.param_count()).map(|_| T::lit(rng.random_range(-scale..scale))).collect();
        Ok(Denoiser { config, params })
    }

    pub fn from_params(config: DenoiserConfig, params: Vec<T>) -> Result<Self, DiffusionError> {
        config.validate()?;
        if params.len() != config.param_count() {
            return Err(DiffusionError::ShapeMismatch { expected: vec![config.param_count()], found: vec![params.len()] });
        }
        Ok(Denoiser { config, params })
    }

    /// Index range of every named parameter group.
    pub fn group_ranges(&self) -> Vec<(String, Range<usize>)> {
        let mut acc = 0;
        self.config
            .groups()
            .into_iter()
            .map(|(name, n)| {
                let r = acc..acc + n;
                acc += n;
                (name, r)
            })
            .collect()
    }

    /// Zeroes the FiLM output layer, so that `gamma = 1` and `beta = 0`.
    pub fn zero_film_projection(&mut self) {
        let o = Offsets::new(&self.config);
        let end = o.b2 + self.config.film_out();
        self.params[o.w2..end].iter_mut().for_each(|p| *p = T::zero());
    }

    fn check_cond(&self, cond: &[T]) -> Result<(), DiffusionError> {
        if cond.len() != self.config.cond_dim {
            return Err(DiffusionError::ShapeMismatch { expected: vec![self.config.cond_dim], found: vec![cond.len()] });
        }
        Ok(())
    }

    fn check_item_shape(&self, shape: [usize; 4]) -> Result<(), DiffusionError> {
        if shape[2] != self.config.horizon || shape[3] != self.config.coords {
            return Err(DiffusionError::ShapeMismatch {
                expected: vec![shape[0], shape[1], self.config.horizon, self.config.coords],
                found: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// FiLM vector for `(cond, k)`; per block `[gamma - 1 ; beta]`.
    fn film(&self, cond: &[T], k: usize, cache: Option<&mut Cache<T>>) -> Vec<T> {
        let c = &self.config;
        let o = Offsets::new(c);
        let p = &self.params;
        let mut z = Vec::with_capacity(c.film_in());
        z.extend_from_slice(cond);
        z.extend(step_embedding::<T>(k, c.step_embed));
        let nin = z.len();
        let mut u = vec![T::zero(); c.film_hidden];
        for (f, uf) in u.iter_mut().enumerate() {
            let row = &p[o.w1 + f * nin..o.w1 + (f + 1) * nin];
            *uf = p[o.b1 + f] + dot(row, &z);
        }
        let act: Vec<T> = u.iter().map(|&x| silu(x)).collect();
        let nf = c.film_hidden;
        let g: Vec<T> = (0..c.film_out())
            .map(|j| p[o.b2 + j] + dot(&p[o.w2 + j * nf..o.w2 + (j + 1) * nf], &act))
            .collect();
        if let Some(cache) = cache {
            cache.z = z;
            cache.u = u;
            cache.act = act;
            cache.g = g.clone();
        }
        g
    }

    /// Trunk pass for one `[T, P]` item with a precomputed FiLM vector.
    fn trunk(&self, x: &[T], g: &[T], mut cache: Option<&mut Cache<T>>) -> Vec<T> {
        let c = &self.config;
        let o = Offsets::new(c);
        let p = &self.params;
        let (nh, nt, np, nk) = (c.hidden, c.horizon, c.coords, c.kernel);
        let half = (nk / 2) as isize;

        let mut h = vec![T::zero(); nt * nh];
        for t in 0..nt {
            for j in 0..nh {
                let mut s = p[o.in_b + j] + p[o.pos + t * nh + j];
                for q in 0..np {
                    s = s + p[o.in_w + j * np + q] * x[t * np + q];
                }
                h[t * nh + j] = s;
            }
        }

        for b in 0..c.blocks {
            let (cw, cb) = (o.conv_w(c, b), o.conv_b(c, b));
            let gamma = &g[b * 2 * nh..b * 2 * nh + nh];
            let beta = &g[b * 2 * nh + nh..(b + 1) * 2 * nh];
            let mut conv = vec![T::zero(); nt * nh];
            for t in 0..nt {
                let out = &mut conv[t * nh..(t + 1) * nh];
                out.copy_from_slice(&p[cb..cb + nh]);
                for kk in 0..nk {
                    let src = t as isize + kk as isize - half;
                    if src < 0 || src >= nt as isize {
                        continue;
                    }
                    let hin = &h[src as usize * nh..(src as usize + 1) * nh];
                    let wk = &p[cw + kk * nh * nh..cw + (kk + 1) * nh * nh];
                    for (oc, v) in out.iter_mut().enumerate() {
                        *v = *v + dot(&wk[oc * nh..(oc + 1) * nh], hin);
                    }
                }
            }
            let pre: Vec<T> = conv
                .iter()
                .enumerate()
                .map(|(i, &v)| (T::one() + gamma[i % nh]) * v + beta[i % nh])
                .collect();
            let next: Vec<T> = h.iter().zip(&pre).map(|(&hv, &f)| hv + silu(f)).collect();
            if let Some(cache) = cache.as_deref_mut() {
                cache.h_in.push(std::mem::replace(&mut h, next));
                cache.conv.push(conv);
                cache.pre.push(pre);
            } else {
                h = next;
            }
        }

        let mut y = vec![T::zero(); nt * np];
        for t in 0..nt {
            for q in 0..np {
                y[t * np + q] = p[o.out_b + q] + dot(&p[o.out_w + q * nh..o.out_w + (q + 1) * nh], &h[t * nh..(t + 1) * nh]);
            }
        }
        if let Some(cache) = cache {
            cache.h_out = h;
        }
        y
    }

    /// Noise prediction for a single `[T, P]` item.
    pub fn forward_item(&self, x: &[T], k: usize, cond: &[T]) -> Vec<T> {
        let g = self.film(cond, k, None);
        self.trunk(x, &g, None)
    }

    /// Accumulates the gradient of `scale * |y - target|^2` into `grad`.
    /// Returns the unscaled squared error.
    fn backward_item(&self, x: &[T], k: usize, cond: &[T], target: &[T], scale: T, grad: &mut [T]) -> T {
        let c = &self.config;
        let o = Offsets::new(c);
        let p = &self.params;
        let (nh, nt, np, nk) = (c.hidden, c.horizon, c.coords, c.kernel);
        let half = (nk / 2) as isize;

        let mut cache = Cache {
            z: Vec::new(),
            u: Vec::new(),
            act: Vec::new(),
            g: Vec::new(),
            h_in: Vec::with_capacity(c.blocks),
            conv: Vec::with_capacity(c.blocks),
            pre: Vec::with_capacity(c.blocks),
            h_out: Vec::new(),
        };
        let g = self.film(cond, k, Some(&mut cache));
        let y = self.trunk(x, &g, Some(&mut cache));

        let mut sq = T::zero();
        let two = T::lit(2.0);
        let dy: Vec<T> = y
            .iter()
            .zip(target)
            .map(|(&a, &b)| {
                let d = a - b;
                sq = sq + d * d;
                two * d * scale
            })
            .collect();

        let h = &cache.h_out;
        let mut dh = vec![T::zero(); nt * nh];
        for t in 0..nt {
            for q in 0..np {
                let d = dy[t * np + q];
                grad[o.out_b + q] = grad[o.out_b + q] + d;
                let w = o.out_w + q * nh;
                for j in 0..nh {
                    grad[w + j] = grad[w + j] + d * h[t * nh + j];
                    dh[t * nh + j] = dh[t * nh + j] + d * p[w + j];
                }
            }
        }

        let mut dg = vec![T::zero(); c.film_out()];
        for b in (0..c.blocks).rev() {
            let (cw, cb) = (o.conv_w(c, b), o.conv_b(c, b));
            let gamma = &g[b * 2 * nh..b * 2 * nh + nh];
            let (hin, conv, pre) = (&cache.h_in[b], &cache.conv[b], &cache.pre[b]);
            let mut dconv = vec![T::zero(); nt * nh];
            for i in 0..nt * nh {
                let j = i % nh;
                let df = dh[i] * silu_grad(pre[i]);
                dg[b * 2 * nh + j] = dg[b * 2 * nh + j] + df * conv[i];
                dg[b * 2 * nh + nh + j] = dg[b * 2 * nh + nh + j] + df;
                dconv[i] = df * (T::one() + gamma[j]);
            }
            // The skip path passes dh through unchanged.
            for t in 0..nt {
                let dc = &dconv[t * nh..(t + 1) * nh];
                for (j, &d) in dc.iter().enumerate() {
                    grad[cb + j] = grad[cb + j] + d;
                }
                for kk in 0..nk {
                    let src = t as isize + kk as isize - half;
                    if src < 0 || src >= nt as isize {
                        continue;
                    }
                    let s = src as usize;
                    let hrow = &hin[s * nh..(s + 1) * nh];
                    let base = cw + kk * nh * nh;
                    for (oc, &d) in dc.iter().enumerate() {
                        if d == T::zero() {
                            continue;
                        }
                        let wrow = base + oc * nh;
                        for i in 0..nh {
                            grad[wrow + i] = grad[wrow + i] + d * hrow[i];
                            dh[s * nh + i] = dh[s * nh + i] + d * p[wrow + i];
                        }
                    }
                }
            }
        }

        for t in 0..nt {
            for j in 0..nh {
                let d = dh[t * nh + j];
                grad[o.in_b + j] = grad[o.in_b + j] + d;
                grad[o.pos + t * nh + j] = grad[o.pos + t * nh + j] + d;
                for q in 0..np {
                    grad[o.in_w + j * np + q] = grad[o.in_w + j * np + q] + d * x[t * np + q];
                }
            }
        }

        let nf = c.film_hidden;
        let mut da = vec![T::zero(); nf];
        for (jo, &d) in dg.iter().enumerate() {
            grad[o.b2 + jo] = grad[o.b2 + jo] + d;
            let row = o.w2 + jo * nf;
            for f in 0..nf {
                grad[row + f] = grad[row + f] + d * cache.act[f];
                da[f] = da[f] + d * p[row + f];
            }
        }
        let nin = cache.z.len();
        for f in 0..nf {
            let du = da[f] * silu_grad(cache.u[f]);
            grad[o.b1 + f] = grad[o.b1 + f] + du;
            let row = o.w1 + f * nin;
            for (jz, &zv) in cache.z.iter().enumerate() {
                grad[row + jz] = grad[row + jz] + du * zv;
            }
        }
        sq
    }

    /// Mean squared noise-prediction error over `samples` and, when `grad`
    /// is given, its gradient accumulated into `grad`.
    ///
    /// Each sample is `(noisy item, step, scaled condition, true noise)`.
    /// `denom` is the number of scalar outputs the mean is taken over.
    pub fn loss_and_grad(&self, samples: &[TrainItem<'_, T>], denom: usize, grad: Option<&mut [T]>) -> T {
        let scale = T::one() / T::from_usize_lossy(denom.max(1));
        match grad {
            Some(grad) => {
                let mut sq = T::zero();
                for s in samples {
                    sq = sq + self.backward_item(s.x, s.k, s.cond, s.eps, scale, grad);
                }
                sq * scale
            }
            None => {
                let mut sq = T::zero();
                for s in samples {
                    let y = self.forward_item(s.x, s.k, s.cond);
                    sq = sq + y.iter().zip(s.eps).map(|(&a, &b)| (a - b) * (a - b)).sum::<T>();
                }
                sq * scale
            }
        }
    }
}

/// One training example for [`Denoiser::loss_and_grad`].
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a, T> {
    pub x: &'a [T],
    pub k: usize,
    pub cond: &'a [T],
    pub eps: &'a [T],
}

impl<T: Real> NoisePredictor<T> for Denoiser<T> {
    fn predict_noise(&self, x: &TrajectoryBatch<T>, k: usize, cond: &[T]) -> Result<TrajectoryBatch<T>, DiffusionError> {
        self.check_cond(cond)?;
        self.check_item_shape(x.shape())?;
        let g = self.film(cond, k, None);
        let mut out = Vec::with_capacity(x.data().len());
        for item in x.items() {
            out.extend(self.trunk(item, &g, None));
        }
        TrajectoryBatch::from_vec(x.shape(), out)
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}
