//! Noise schedule, forward corruption, the noise-prediction objective,
//! guided DDIM and ancestral DDPM sampling.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::denoiser::{Condition, Denoiser};
use crate::error::{Error, Result};
use crate::features::FeatureGrid;
use crate::optim::{Adam, AdamConfig};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

/// Linear beta schedule. Steps are 1-based: `t ∈ 1..=steps`, with
/// `alpha_bar(0) = 1` by convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::linear(1000, 1e-4, 2e-2).expect("default schedule")
    }
}

impl Schedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 || !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "schedule with {steps} steps from {beta_start} to {beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut running = 1.0;
        for b in &betas {
            running *= 1.0 - b;
            alpha_bars.push(running);
        }
        Ok(Schedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Timestep { t, max: self.steps() });
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    /// Variance of the true posterior `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t)) * self.beta(t)
    }

    /// `count` evenly spaced steps ending at the last one.
    pub fn subsequence(&self, count: usize) -> Result<Vec<usize>> {
        let n = self.steps();
        if count == 0 || count > n {
            return Err(Error::Config(format!("{count} sampling steps for a {n}-step schedule")));
        }
        Ok((1..=count).map(|i| (i * n + count / 2) / count).collect())
    }
}

fn scaled_sum<T: Scalar>(a: &[T], wa: f64, b: &[T], wb: f64) -> Vec<T> {
    let (wa, wb) = (T::from_f64_lossy(wa), T::from_f64_lossy(wb));
    a.iter().zip(b).map(|(&x, &y)| wa * x + wb * y).collect()
}

/// Closed-form corruption `sqrt(ᾱ_t) x_0 + sqrt(1 - ᾱ_t) ε`.
pub fn forward_noise<T: Scalar>(schedule: &Schedule, x0: &Tensor<T>, t: usize, eps: &Tensor<T>) -> Result<Tensor<T>> {
    schedule.check(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::shape("forward_noise", x0.shape(), eps.shape()));
    }
    let ab = schedule.alpha_bar(t);
    Tensor::new(
        x0.shape(),
        scaled_sum(x0.data(), libm::sqrt(ab), eps.data(), libm::sqrt(1.0 - ab)),
    )
}

/// Same-shape standard normal draws.
pub fn gaussian<T: Scalar, R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
}

/// Mean squared error between `eps` and the prediction at the corrupted
/// batch. `steps` are 1-based and per sample.
pub fn diffusion_loss<T: Scalar>(
    tape: &mut Tape<T>,
    denoiser: &Denoiser,
    params: &crate::params::Bound,
    schedule: &Schedule,
    x0: &Tensor<T>,
    steps: &[usize],
    eps: &Tensor<T>,
    cond: &Condition<T>,
) -> Result<Var> {
    let shape = x0.shape();
    if shape.len() != 3 || shape[0] != steps.len() || eps.shape() != shape {
        return Err(Error::shape("diffusion_loss", shape, eps.shape()));
    }
    let per = shape[1] * shape[2];
    let mut noisy = Vec::with_capacity(x0.numel());
    for (b, &t) in steps.iter().enumerate() {
        schedule.check(t)?;
        let ab = schedule.alpha_bar(t);
        let range = b * per..(b + 1) * per;
        noisy.extend(scaled_sum(
            &x0.data()[range.clone()],
            libm::sqrt(ab),
            &eps.data()[range],
            libm::sqrt(1.0 - ab),
        ));
    }
    let x_t = tape.constant(Tensor::new(shape, noisy)?);
    let indices: Vec<usize> = steps.iter().map(|t| t - 1).collect();
    let pred = denoiser.forward(tape, params, x_t, &indices, cond)?;
    let target = tape.constant(eps.clone());
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    Ok(tape.mean(sq))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub adam: AdamConfig,
    /// Probability of replacing a sample's features with the zero grid.
    pub uncond_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 32,
            adam: AdamConfig::default(),
            uncond_dropout: 0.1,
        }
    }
}

/// One training example: a preprocessed trajectory and its stimulus features.
#[derive(Debug, Clone, Copy)]
pub struct TrainItem<'a> {
    pub coords: &'a [[f32; 2]],
    pub grid: &'a FeatureGrid,
}

/// Single-writer trainer owning the weights and optimizer state.
#[derive(Debug, Clone)]
pub struct Trainer<'a, T> {
    denoiser: &'a Denoiser,
    params: ParamStore<T>,
    adam: Adam<T>,
    schedule: Schedule,
    config: TrainConfig,
    rng: ChaCha8Rng,
    step: u64,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    pub fn new(
        denoiser: &'a Denoiser,
        params: ParamStore<T>,
        schedule: Schedule,
        config: TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&config.uncond_dropout) {
            return Err(Error::Config(format!(
                "uncond_dropout {} not in [0, 1]",
                config.uncond_dropout
            )));
        }
        if config.batch == 0 {
            return Err(Error::Config("batch must be positive".into()));
        }
        let adam = Adam::new(config.adam, &params);
        Ok(Trainer {
            denoiser,
            params,
            adam,
            schedule,
            config,
            rng: ChaCha8Rng::seed_from_u64(seed),
            step: 0,
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One optimizer update on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &[TrainItem<'_>]) -> Result<f64> {
        let cfg = self.denoiser.config();
        let len = cfg.seq_len;
        let mut x0 = Vec::with_capacity(batch.len() * len * 2);
        for item in batch {
            if item.coords.len() != len {
                return Err(Error::shape("trajectory", &[len, 2], &[item.coords.len(), 2]));
            }
            x0.extend(item.coords.iter().flatten().map(|&v| T::from_f32(v).unwrap()));
        }
        let x0 = Tensor::new(&[batch.len(), len, 2], x0)?;
        let steps: Vec<usize> = batch
            .iter()
            .map(|_| self.rng.random_range(1..=self.schedule.steps()))
            .collect();
        let eps = gaussian(x0.shape(), &mut self.rng);
        let grids: Vec<Option<&FeatureGrid>> = batch
            .iter()
            .map(|item| (!self.rng.random_bool(self.config.uncond_dropout)).then_some(item.grid))
            .collect();
        let cond = self.denoiser.condition(&grids)?;

        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let loss = diffusion_loss(
            &mut tape,
            self.denoiser,
            &bound,
            &self.schedule,
            &x0,
            &steps,
            &eps,
            &cond,
        )?;
        let value = tape.value(loss).item().as_f64();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                location: format!("training loss at step {}", self.step + 1),
            });
        }
        let mut grads = tape.backward(loss)?;
        let grads = self.params.collect_grads(&bound, &mut grads);
        drop(tape);
        self.adam.step(&mut self.params, &grads)?;
        self.step += 1;
        Ok(value)
    }

    /// Runs `steps` updates on batches drawn with replacement from `data`,
    /// reporting each loss to `on_step`.
    pub fn fit(&mut self, data: &[TrainItem<'_>], steps: usize, mut on_step: impl FnMut(u64, f64)) -> Result<()> {
        if data.is_empty() {
            return Err(Error::Config("no training data".into()));
        }
        for _ in 0..steps {
            let batch: Vec<TrainItem<'_>> = (0..self.config.batch)
                .map(|_| data[self.rng.random_range(0..data.len())])
                .collect();
            let loss = self.step(&batch)?;
            on_step(self.step, loss);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    pub scale: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig { scale: 4.0 }
    }
}

/// Affine combination `(1 - c)·uncond + c·cond`.
pub fn combine_guidance<T: Scalar>(uncond: &[T], cond: &[T], scale: f64) -> Vec<T> {
    scaled_sum(uncond, 1.0 - scale, cond, scale)
}

/// Guided noise prediction at 0-based step index `index`; the conditional
/// and unconditional passes share one batched forward.
pub fn cfg_eps<T: Scalar>(
    denoiser: &Denoiser,
    params: &ParamStore<T>,
    x_t: &Tensor<T>,
    index: usize,
    cond: &Condition<T>,
    guidance: GuidanceConfig,
) -> Result<Tensor<T>> {
    let batch = cond.batch();
    let mut doubled = x_t.data().to_vec();
    doubled.extend_from_slice(x_t.data());
    let mut shape = x_t.shape().to_vec();
    shape[0] = 2 * batch;
    let x2 = Tensor::new(&shape, doubled)?;
    let mut feats = cond.features.data().to_vec();
    feats.extend(core::iter::repeat_n(T::zero(), cond.features.numel()));
    let mut fshape = cond.features.shape().to_vec();
    fshape[0] = 2 * batch;
    let c2 = Condition {
        features: Tensor::new(&fshape, feats)?,
        positions: cond.positions.clone(),
    };
    let out = denoiser.predict(params, &x2, &alloc::vec![index; 2 * batch], &c2)?;
    let half = out.numel() / 2;
    let (c, u) = out.data().split_at(half);
    Tensor::new(x_t.shape(), combine_guidance(u, c, guidance.scale))
}

fn initial_noise<T: Scalar>(denoiser: &Denoiser, seeds: &[u64]) -> Tensor<T> {
    let len = denoiser.config().seq_len;
    let mut data = Vec::with_capacity(seeds.len() * len * 2);
    for &s in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        data.extend(gaussian::<T, _>(&[len, 2], &mut rng).into_data());
    }
    Tensor::new(&[seeds.len(), len, 2], data).expect("noise shape")
}

fn clamp_unit<T: Scalar>(x: Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(-T::one()).min(T::one()))
}

/// Deterministic DDIM sampling over `steps` evenly spaced schedule steps,
/// one trajectory per seed, clamped to `[-1, 1]` at the end.
pub fn sample_ddim<T: Scalar>(
    denoiser: &Denoiser,
    params: &ParamStore<T>,
    schedule: &Schedule,
    cond: &Condition<T>,
    seeds: &[u64],
    steps: usize,
    guidance: GuidanceConfig,
) -> Result<Tensor<T>> {
    if seeds.len() != cond.batch() {
        return Err(Error::shape("sample_ddim", &[cond.batch()], &[seeds.len()]));
    }
    let ts = schedule.subsequence(steps)?;
    let mut x = initial_noise::<T>(denoiser, seeds);
    for i in (0..ts.len()).rev() {
        let t = ts[i];
        let t_prev = if i == 0 { 0 } else { ts[i - 1] };
        let eps = cfg_eps(denoiser, params, &x, t - 1, cond, guidance)?;
        x = ddim_step(schedule, &x, &eps, t, t_prev)?;
    }
    Ok(clamp_unit(x))
}

/// One η = 0 update from step `t` to `t_prev` (0 meaning clean).
pub fn ddim_step<T: Scalar>(
    schedule: &Schedule,
    x_t: &Tensor<T>,
    eps: &Tensor<T>,
    t: usize,
    t_prev: usize,
) -> Result<Tensor<T>> {
    schedule.check(t)?;
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let x0 = scaled_sum(
        x_t.data(),
        1.0 / libm::sqrt(ab),
        eps.data(),
        -libm::sqrt(1.0 - ab) / libm::sqrt(ab),
    );
    Tensor::new(
        x_t.shape(),
        scaled_sum(&x0, libm::sqrt(ab_prev), eps.data(), libm::sqrt(1.0 - ab_prev)),
    )
}

/// Mean of the learned reverse step given predicted noise.
pub fn ddpm_mean<T: Scalar>(schedule: &Schedule, x_t: &Tensor<T>, eps: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    schedule.check(t)?;
    let a = schedule.alpha(t);
    let coef = schedule.beta(t) / libm::sqrt(1.0 - schedule.alpha_bar(t));
    Tensor::new(
        x_t.shape(),
        scaled_sum(x_t.data(), 1.0 / libm::sqrt(a), eps.data(), -coef / libm::sqrt(a)),
    )
}

/// Mean of the true posterior `q(x_{t-1} | x_t, x_0)`.
pub fn posterior_mean<T: Scalar>(schedule: &Schedule, x0: &Tensor<T>, x_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
    schedule.check(t)?;
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let c0 = libm::sqrt(ab_prev) * schedule.beta(t) / (1.0 - ab);
    let ct = libm::sqrt(schedule.alpha(t)) * (1.0 - ab_prev) / (1.0 - ab);
    Tensor::new(x_t.shape(), scaled_sum(x0.data(), c0, x_t.data(), ct))
}

/// Ancestral sampling over every schedule step.
pub fn sample_ddpm<T: Scalar>(
    denoiser: &Denoiser,
    params: &ParamStore<T>,
    schedule: &Schedule,
    cond: &Condition<T>,
    seeds: &[u64],
    guidance: GuidanceConfig,
) -> Result<Tensor<T>> {
    if seeds.len() != cond.batch() {
        return Err(Error::shape("sample_ddpm", &[cond.batch()], &[seeds.len()]));
    }
    let mut x = initial_noise::<T>(denoiser, seeds);
    let mut rngs: Vec<ChaCha8Rng> = seeds
        .iter()
        .map(|&s| {
            let mut r = ChaCha8Rng::seed_from_u64(s);
            r.set_stream(1);
            r
        })
        .collect();
    let per = x.numel() / seeds.len().max(1);
    for t in (1..=schedule.steps()).rev() {
        let eps = cfg_eps(denoiser, params, &x, t - 1, cond, guidance)?;
        let mut mean = ddpm_mean(schedule, &x, &eps, t)?;
        if t > 1 {
            let sigma = T::from_f64_lossy(libm::sqrt(schedule.posterior_variance(t)));
            for (chunk, rng) in mean.data_mut().chunks_mut(per).zip(&mut rngs) {
                for v in chunk {
                    *v += sigma * T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal));
                }
            }
        }
        x = mean;
    }
    Ok(clamp_unit(x))
}
