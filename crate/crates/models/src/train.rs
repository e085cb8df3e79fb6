//! Seeded single-threaded training loops.

use log::{debug, info};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use webrpg_core::rp::RpVector;
use webrpg_nn::{AdamW, Graph, OptimizerConfig, ParamStore, Var};

use crate::ar::{ArGenerator, ArNoise};
use crate::data::{Batch, PageExample};
use crate::dm::{DmGenerator, DmNoise};
use crate::vae::{standard_normal, Vae};
use crate::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    /// Vectors per VAE step, pages per generator step.
    pub batch: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 1000,
            batch: 4,
            seed: 0,
            optimizer: OptimizerConfig::default(),
            log_every: 100,
        }
    }
}

/// Run `cfg.steps` AdamW updates of the loss built by `step`. Returns the
/// loss of every step.
pub fn run<F>(store: &mut ParamStore<f32>, cfg: &TrainConfig, label: &str, mut step: F) -> Result<Vec<f64>>
where
    F: FnMut(&mut Graph<f32>, &mut ChaCha8Rng) -> Result<Var>,
{
    if cfg.batch == 0 {
        return Err(ModelError::BadConfig("batch size must be positive".into()));
    }
    let mut opt = AdamW::new(cfg.optimizer, store)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(cfg.steps);
    for i in 0..cfg.steps {
        let (loss, grads) = {
            let mut g = Graph::new(store);
            let l = step(&mut g, &mut rng)?;
            let loss = g.value(l).item() as f64;
            if !loss.is_finite() {
                return Err(ModelError::DivergenceDetected { step: i });
            }
            (loss, g.backward(l)?)
        };
        opt.step(store, &grads)?;
        losses.push(loss);
        if cfg.log_every > 0 && (i + 1) % cfg.log_every == 0 {
            let window = &losses[losses.len().saturating_sub(cfg.log_every)..];
            info!("{label} step {} loss {:.5}", i + 1, window.iter().sum::<f64>() / window.len() as f64);
        } else {
            debug!("{label} step {} loss {loss:.5}", i + 1);
        }
    }
    Ok(losses)
}

/// `k` distinct indices below `n` (all of them when `k >= n`), ascending.
pub fn pick(n: usize, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx = sample(rng, n, k.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Fit the VAE on a fixed set of vectors.
pub fn train_vae(store: &mut ParamStore<f32>, vae: &Vae, data: &[RpVector], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let latent = vae.latent();
    run(store, cfg, "vae", |g, rng| {
        let batch: Vec<RpVector> = pick(data.len(), cfg.batch, rng).into_iter().map(|i| data[i]).collect();
        let eps = standard_normal(batch.len(), latent, rng);
        Ok(vae.forward(g, &batch, eps)?.loss)
    })
}

/// Fit the VAE on fresh draws from `sampler` every step.
pub fn train_vae_sampled<S>(store: &mut ParamStore<f32>, vae: &Vae, mut sampler: S, cfg: &TrainConfig) -> Result<Vec<f64>>
where
    S: FnMut(&mut ChaCha8Rng) -> RpVector,
{
    let latent = vae.latent();
    run(store, cfg, "vae", |g, rng| {
        let batch: Vec<RpVector> = (0..cfg.batch).map(|_| sampler(rng)).collect();
        let eps = standard_normal(batch.len(), latent, rng);
        Ok(vae.forward(g, &batch, eps)?.loss)
    })
}

fn page_batch<'a>(pages: &'a [PageExample], k: usize, rng: &mut impl Rng) -> Result<Batch> {
    let chosen: Vec<&'a PageExample> = pick(pages.len(), k, rng).into_iter().map(|i| &pages[i]).collect();
    Batch::new(&chosen)
}

pub fn train_ar(store: &mut ParamStore<f32>, gen: &ArGenerator, pages: &[PageExample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if pages.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let latent = gen.vae.latent();
    run(store, cfg, "ar", |g, rng| {
        let batch = page_batch(pages, cfg.batch, rng)?;
        let noise = ArNoise::draw(&batch, latent, rng);
        Ok(gen.loss(g, &batch, &noise)?.loss)
    })
}

pub fn train_dm(store: &mut ParamStore<f32>, gen: &DmGenerator, pages: &[PageExample], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if pages.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let latent = gen.vae.latent();
    let steps = gen.schedule.steps();
    run(store, cfg, "dm", |g, rng| {
        let batch = page_batch(pages, cfg.batch, rng)?;
        let noise = DmNoise::draw(&batch, latent, steps, rng);
        Ok(gen.loss(g, &batch, &noise)?.loss)
    })
}
