use gazediff_core::denoiser::{Denoiser, DenoiserConfig};
use gazediff_core::diffusion::{
    cfg_eps, ddpm_mean, forward_noise, gaussian, posterior_mean, sample_ddim, sample_ddpm, GuidanceConfig, Schedule,
    TrainConfig, TrainItem, Trainer,
};
use gazediff_core::features::{synth_grid, Blob, FeatureGrid};
use gazediff_core::optim::AdamConfig;
use gazediff_core::params::ParamStore;
use gazediff_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> DenoiserConfig {
    DenoiserConfig {
        seq_len: 16,
        depth: 1,
        channels: vec![16],
        embed_dim: 16,
        heads: 2,
        feat_dim: 4,
        grid: (3, 3),
        ..DenoiserConfig::default()
    }
}

fn randomize<T: gazediff_core::Scalar>(params: &mut ParamStore<T>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in params.tensors_mut() {
        for v in t.data_mut() {
            *v = T::from_f64_lossy(rng.random_range(-0.2..0.2));
        }
    }
}

fn blob_grid(cfg: &DenoiserConfig) -> FeatureGrid {
    let b = Blob {
        cx: 0.25,
        cy: 0.75,
        sigma: 0.3,
    };
    synth_grid("g", &[b], (cfg.grid.0, cfg.grid.1, cfg.feat_dim)).unwrap()
}

/// Empirical moments of `forward_noise` over `draws` noise samples: the
/// pooled regression slope of the per-coordinate means on `x0` and the
/// pooled per-coordinate variance.
fn marginal_moments(schedule: &Schedule, x0: &Tensor<f64>, t: usize, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x0.numel();
    let mut sum = vec![0.0; n];
    let mut sq = vec![0.0; n];
    for _ in 0..draws {
        let eps = gaussian(x0.shape(), &mut rng);
        let xt = forward_noise(schedule, x0, t, &eps).unwrap();
        for (i, v) in xt.data().iter().enumerate() {
            sum[i] += v;
            sq[i] += v * v;
        }
    }
    let d = draws as f64;
    let means: Vec<f64> = sum.iter().map(|s| s / d).collect();
    let slope =
        means.iter().zip(x0.data()).map(|(m, r)| m * r).sum::<f64>() / x0.data().iter().map(|r| r * r).sum::<f64>();
    let var = (0..n)
        .map(|i| (sq[i] - d * means[i] * means[i]) / (d - 1.0))
        .sum::<f64>()
        / n as f64;
    (slope, var)
}

#[test]
fn forward_marginals_match_closed_form() {
    let schedule = Schedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = Tensor::from_fn(&[720, 2], |_| rng.random_range(-1.0..1.0));
    let norm2: f64 = x0.data().iter().map(|r| r * r).sum();
    for t in [1, 500, 1000] {
        let (slope, var) = marginal_moments(&schedule, &x0, t, 10_000, t as u64);
        let ab = schedule.alpha_bar(t);
        let k = ab.sqrt();
        assert!(((var - (1.0 - ab)) / (1.0 - ab)).abs() < 0.02, "t={t} variance {var}");
        // Standard error of the slope estimate.
        let se = ((1.0 - ab) / (10_000.0 * norm2)).sqrt();
        assert!((slope - k).abs() < 4.0 * se, "t={t} slope {slope} vs {k}");
        if t < 1000 {
            assert!(((slope - k) / k).abs() < 0.02, "t={t} slope {slope} vs {k}");
        }
    }
}

#[test]
fn alpha_bar_matches_direct_product() {
    let s = Schedule::default();
    for t in [1, 2, 17, 500, 999, 1000] {
        let direct: f64 = (1..=t)
            .map(|i| 1.0 - (1e-4 + (2e-2 - 1e-4) * (i - 1) as f64 / 999.0))
            .product();
        assert!((s.alpha_bar(t) - direct).abs() < 1e-12);
    }
    for t in 2..=1000 {
        assert!(s.beta(t) > s.beta(t - 1));
        assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
    }
}

#[test]
fn reverse_step_with_true_noise_is_the_posterior_mean() {
    let s = Schedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0: Tensor<f64> = Tensor::from_fn(&[32, 2], |_| rng.random_range(-1.0..1.0));
    for t in [1, 2, 250, 1000] {
        let eps = gaussian(&[32, 2], &mut rng);
        let xt = forward_noise(&s, &x0, t, &eps).unwrap();
        let learned = ddpm_mean(&s, &xt, &eps, t).unwrap();
        let truth = posterior_mean(&s, &x0, &xt, t).unwrap();
        for (a, b) in learned.data().iter().zip(truth.data()) {
            assert!((a - b).abs() < 1e-9, "t={t}: {a} vs {b}");
        }
        if t == 1 {
            for (a, b) in learned.data().iter().zip(x0.data()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn ddim_is_deterministic_per_seed() {
    let cfg = tiny();
    let (model, mut params) = Denoiser::new::<f32>(cfg.clone(), 0).unwrap();
    randomize(&mut params, 3);
    let schedule = Schedule::default();
    let g = blob_grid(&cfg);
    let cond = model.condition(&[Some(&g), Some(&g)]).unwrap();
    let guidance = GuidanceConfig::default();
    let a = sample_ddim(&model, &params, &schedule, &cond, &[7, 8], 50, guidance).unwrap();
    let b = sample_ddim(&model, &params, &schedule, &cond, &[7, 8], 50, guidance).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let c = sample_ddim(&model, &params, &schedule, &cond, &[9, 8], 50, guidance).unwrap();
    let n = a.numel() / 2;
    assert_ne!(bits(&a)[..n], bits(&c)[..n]);
    assert_eq!(bits(&a)[n..], bits(&c)[n..]);
    assert!(a.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn full_length_samplers_stay_finite() {
    let cfg = tiny();
    let (model, mut params) = Denoiser::new::<f32>(cfg.clone(), 0).unwrap();
    randomize(&mut params, 4);
    let schedule = Schedule::default();
    let cond = model.zero_condition(1);
    let guidance = GuidanceConfig::default();
    let ddim = sample_ddim(&model, &params, &schedule, &cond, &[1], 1000, guidance).unwrap();
    assert_eq!(ddim.shape(), &[1, 16, 2]);
    assert!(ddim.is_finite());
    let a = sample_ddpm(&model, &params, &schedule, &cond, &[1], guidance).unwrap();
    let b = sample_ddpm(&model, &params, &schedule, &cond, &[2], guidance).unwrap();
    assert_eq!(a.shape(), &[1, 16, 2]);
    assert!(a.is_finite() && b.is_finite());
    let l2: f32 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
    assert!(l2 > 0.0);
}

#[test]
fn guidance_endpoints_select_one_pass() {
    let cfg = tiny();
    let (model, mut params) = Denoiser::new::<f64>(cfg.clone(), 0).unwrap();
    randomize(&mut params, 6);
    let g = blob_grid(&cfg);
    let cond = model.condition(&[Some(&g)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x: Tensor<f64> = gaussian(&[1, 16, 2], &mut rng);
    let conditional = model.predict(&params, &x, &[99], &cond).unwrap();
    let unconditional = model.predict(&params, &x, &[99], &model.zero_condition(1)).unwrap();
    let at = |scale| cfg_eps(&model, &params, &x, 99, &cond, GuidanceConfig { scale }).unwrap();
    for (a, b) in at(1.0).data().iter().zip(conditional.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in at(0.0).data().iter().zip(unconditional.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn gaussian_items(n: usize, len: usize, seed: u64) -> Vec<Vec<[f32; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            gaussian::<f32, _>(&[len, 2], &mut rng)
                .data()
                .chunks(2)
                .map(|c| [c[0], c[1]])
                .collect()
        })
        .collect()
}

#[test]
fn untrained_loss_is_unit_variance_and_steps_are_reproducible() {
    let cfg = tiny();
    let g = blob_grid(&cfg);
    let data = gaussian_items(8, cfg.seq_len, 2);
    let items: Vec<TrainItem> = data.iter().map(|c| TrainItem { coords: c, grid: &g }).collect();
    let run = || {
        let (model, params) = Denoiser::new::<f32>(cfg.clone(), 0).unwrap();
        let mut trainer = Trainer::new(&model, params, Schedule::default(), TrainConfig::default(), 9).unwrap();
        let first = trainer.step(&items).unwrap();
        let second = trainer.step(&items).unwrap();
        (first, second)
    };
    let (a1, a2) = run();
    let (b1, b2) = run();
    assert_eq!((a1.to_bits(), a2.to_bits()), (b1.to_bits(), b2.to_bits()));
    // The output layer starts at zero, so the first loss is the mean of eps².
    assert!((a1 - 1.0).abs() < 0.15, "{a1}");
    assert!(a1 >= 0.0 && a2 >= 0.0);
}

#[test]
fn loss_falls_on_gaussian_data() {
    let cfg = tiny();
    let g = blob_grid(&cfg);
    let data = gaussian_items(64, cfg.seq_len, 3);
    let items: Vec<TrainItem> = data.iter().map(|c| TrainItem { coords: c, grid: &g }).collect();
    let (model, params) = Denoiser::new::<f32>(cfg.clone(), 0).unwrap();
    let config = TrainConfig {
        batch: 16,
        adam: AdamConfig::default(),
        uncond_dropout: 0.1,
    };
    let mut trainer = Trainer::new(&model, params, Schedule::default(), config, 1).unwrap();
    let mut losses = Vec::new();
    trainer.fit(&items, 200, |_, l| losses.push(l)).unwrap();
    let windows: Vec<f64> = losses
        .chunks(50)
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .collect();
    assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
}
