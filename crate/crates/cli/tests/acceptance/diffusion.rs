//! Noise schedule identities and a small denoising overfit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use webrpg_cli::dataset::synth_samples;
use webrpg_cli::pipeline::{examples, ModelConfig};
use webrpg_cli::synth::SynthSpec;
use webrpg_core::rp::Vocabulary;
use webrpg_models::dm::{DmGenerator, NoiseSchedule, ReverseRule, ScheduleKind};
use webrpg_models::train::{train_dm, train_vae, TrainConfig};
use webrpg_models::vae::standard_normal;
use webrpg_nn::{OptimizerConfig, ParamStore, Tensor};

use crate::{ensure, s, Outcome};

const CLOSED_FORM_TOL: f64 = 1e-5;
const ORACLE_TOL: f64 = 1e-6;
const DENOISE_TOL: f64 = 0.1;

/// Compose `t` forward steps symbolically: column 0 carries the
/// coefficient on `z_0`, column `k` the coefficient on the step-`k` noise.
fn composed(schedule: &NoiseSchedule, t: usize) -> Result<(f64, f64), String> {
    let mut state = Tensor::<f64>::zeros(1, t + 1);
    state.data_mut()[0] = 1.0;
    for k in 1..=t {
        let mut e = Tensor::<f64>::zeros(1, t + 1);
        e.data_mut()[k] = 1.0;
        state = schedule.step_forward(&state, k, &e).map_err(s)?;
    }
    let noise_var: f64 = state.data()[1..].iter().map(|c| c * c).sum();
    Ok((state.data()[0], noise_var.sqrt()))
}

fn schedule_identities() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for steps in [100, 1000] {
        let schedule = NoiseSchedule::new(ScheduleKind::Linear, steps).map_err(s)?;
        let one = Tensor::<f64>::from_f64(1, 1, &[1.0]);
        let zero = Tensor::<f64>::zeros(1, 1);
        for t in 1..=steps {
            let (signal, noise) = composed(&schedule, t)?;
            let closed_signal = schedule.diffuse(&one, t, &zero).map_err(s)?.data()[0];
            let closed_noise = schedule.diffuse(&zero, t, &one).map_err(s)?.data()[0];
            let err = (signal - closed_signal).abs().max((noise - closed_noise).abs());
            worst = worst.max(err);
            ensure(err < CLOSED_FORM_TOL, || format!("T={steps} t={t}: recursion vs closed form {err:.1e}"))?;
        }
    }

    let schedule = NoiseSchedule::new(ScheduleKind::Linear, 1000).map_err(s)?;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let z0 = standard_normal::<f64>(40, 64, &mut rng).map(|x| 8.0 * x);
    let eps = standard_normal::<f64>(40, 64, &mut rng);
    let xi = standard_normal::<f64>(40, 64, &mut rng);
    let z1 = schedule.diffuse(&z0, 1, &eps).map_err(s)?;
    let mut oracle: f64 = 0.0;
    for rule in [ReverseRule::Ddpm, ReverseRule::Literal] {
        let back = schedule.step_reverse(&z1, 1, &eps, Some(&xi), rule).map_err(s)?;
        let err = back.data().iter().zip(z0.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        oracle = oracle.max(err);
        ensure(err < ORACLE_TOL, || format!("{rule:?} reversal at t=1 misses z0 by {err:.1e}"))?;
    }
    Ok(format!(
        "closed form vs composed recursion {worst:.1e} (tol {CLOSED_FORM_TOL:.0e}); oracle reversal at t=1 {oracle:.1e} (tol {ORACLE_TOL:.0e})"
    ))
}

fn rms(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let sq: f64 = a.data().iter().zip(b.data()).map(|(x, y)| f64::from(x - y).powi(2)).sum();
    (sq / a.data().len() as f64).sqrt()
}

/// Four pages, a pretrained and frozen VAE, then the denoiser alone.
/// Distance is the per-entry RMS between recovered and clean latents,
/// averaged over pages.
fn denoise_overfit() -> Result<String, String> {
    let vocab = Vocabulary::default();
    let spec = SynthSpec {
        min_elements: 32,
        max_elements: 40,
        ..SynthSpec::default()
    };
    let samples = synth_samples(&spec, 4, 9, &vocab).map_err(s)?;
    let mut model = ModelConfig::desk(64);
    model.dm.steps = 1000;
    model.dm.layers = 4;
    model.dm.use_mean_latents = true;
    model.dm.stop_grad_latents = true;
    let ex = examples(&samples, &model).map_err(s)?;
    let mut store = ParamStore::<f32>::new();
    let mut init = ChaCha8Rng::seed_from_u64(0);
    let gen = DmGenerator::new(&mut store, &mut init, &vocab, model.embed, model.vae.clone(), model.dm).map_err(s)?;

    let train = |steps, batch, seed, lr| TrainConfig {
        steps,
        batch,
        seed,
        optimizer: OptimizerConfig {
            learning_rate: lr,
            ..OptimizerConfig::default()
        },
        log_every: 0,
    };
    let vectors: Vec<_> = ex.iter().flat_map(|e| e.vectors.clone()).collect();
    train_vae(&mut store, &gen.vae, &vectors, &train(300, 64, 5, 1e-3)).map_err(s)?;
    let vae_params: Vec<_> = store.ids().filter(|&i| store.name(i).starts_with("vae.")).collect();
    for id in vae_params {
        store.set_frozen(id, true);
    }
    for (round, lr) in [2e-3, 2e-3, 5e-4, 2e-4].into_iter().enumerate() {
        train_dm(&mut store, &gen, &ex, &train(1000, 4, round as u64 + 1, lr)).map_err(s)?;
    }

    let horizon = (0.05 * gen.schedule.steps() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut report = Vec::new();
    for t in [1, 10, 25, horizon] {
        let (mut err, mut noisy) = (0.0, 0.0);
        for e in &ex {
            let z0 = gen.vae.encode_mean(&store, &e.vectors).map_err(s)?;
            let eps = standard_normal::<f32>(z0.rows(), z0.cols(), &mut rng);
            let zt = gen.schedule.diffuse(&z0, t, &eps).map_err(s)?;
            let back = gen.denoise(&store, &e.features, zt.clone(), t, None).map_err(s)?;
            err += rms(&back, &z0);
            noisy += rms(&zt, &z0);
        }
        let (err, noisy) = (err / ex.len() as f64, noisy / ex.len() as f64);
        ensure(err < DENOISE_TOL, || format!("t={t}: recovered latents off by {err:.4} RMS (noisy input {noisy:.4})"))?;
        report.push(format!("t={t} {err:.4} (input {noisy:.4})"));
    }
    Ok(format!("denoised latent RMS error {} (tol {DENOISE_TOL})", report.join(", ")))
}

pub fn consistency() -> Outcome {
    let a = schedule_identities()?;
    let b = denoise_overfit()?;
    Ok(format!("{a}; {b}"))
}
