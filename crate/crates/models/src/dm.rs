//! Latent diffusion generator with a skip-connected transformer backbone.

use rand::Rng;
use serde::{Deserialize, Serialize};
use webrpg_core::rp::{RpVector, Vocabulary};
use webrpg_nn::layers::{sinusoidal_table, LayerNorm, Linear, Mlp, TransformerBlock};
use webrpg_nn::{AttnSegment, Graph, ParamStore, Real, Tensor, Var};

use crate::ar::positions;
use crate::data::Batch;
use crate::embedding::{EmbedConfig, HtmlEmbedder, PageFeatures};
use crate::vae::{standard_normal, Vae, VaeConfig, VaeOutput};
use crate::{ModelError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Linear,
}

/// Per-step noise levels. Index `t` runs over `1..=T`; `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub const BETA_START: f64 = 1e-4;
    pub const BETA_END: f64 = 0.02;

    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(ModelError::BadConfig("diffusion needs at least one step".into()));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear if steps == 1 => vec![Self::BETA_START],
            ScheduleKind::Linear => (0..steps)
                .map(|i| Self::BETA_START + (Self::BETA_END - Self::BETA_START) * i as f64 / (steps - 1) as f64)
                .collect(),
        };
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(NoiseSchedule { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(ModelError::BadTimestep { t, max: self.steps() });
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

    /// Standard deviation of the ancestral noise added when stepping from
    /// `t` to `t - 1`; zero at `t = 1`.
    pub fn posterior_std(&self, t: usize) -> f64 {
        if t <= 1 {
            return 0.0;
        }
        (self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t))).sqrt()
    }

    /// `sqrt(abar_t) z0 + sqrt(1 - abar_t) eps`.
    pub fn diffuse<T: Real>(&self, z0: &Tensor<T>, t: usize, eps: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(t)?;
        check_same(z0, eps)?;
        let a = T::from_f64_lossy(self.alpha_bar(t).sqrt());
        let b = T::from_f64_lossy((1.0 - self.alpha_bar(t)).sqrt());
        Ok(zip(z0, eps, |x, e| a * x + b * e))
    }

    /// One forward step, `sqrt(alpha_t) z_{t-1} + sqrt(1 - alpha_t) eps`.
    pub fn step_forward<T: Real>(&self, z_prev: &Tensor<T>, t: usize, eps: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(t)?;
        check_same(z_prev, eps)?;
        let a = T::from_f64_lossy(self.alpha(t).sqrt());
        let b = T::from_f64_lossy(self.beta(t).sqrt());
        Ok(zip(z_prev, eps, |x, e| a * x + b * e))
    }

    /// One reverse step from `z_t` given predicted noise. `xi` is the
    /// ancestral noise, ignored at `t = 1` and by the literal rule.
    pub fn step_reverse<T: Real>(
        &self,
        z_t: &Tensor<T>,
        t: usize,
        eps_hat: &Tensor<T>,
        xi: Option<&Tensor<T>>,
        rule: ReverseRule,
    ) -> Result<Tensor<T>> {
        self.check(t)?;
        check_same(z_t, eps_hat)?;
        let inv = 1.0 / self.alpha(t).sqrt();
        let coef = match rule {
            ReverseRule::Ddpm => self.beta(t) / (1.0 - self.alpha_bar(t)).sqrt(),
            // per-step alpha in the denominator, no added noise
            ReverseRule::Literal => self.beta(t) / self.beta(t).sqrt(),
        };
        let (inv, coef) = (T::from_f64_lossy(inv), T::from_f64_lossy(coef));
        let mut out = zip(z_t, eps_hat, |z, e| inv * (z - coef * e));
        if let (ReverseRule::Ddpm, Some(xi)) = (rule, xi) {
            let sigma = self.posterior_std(t);
            if sigma > 0.0 {
                check_same(z_t, xi)?;
                let s = T::from_f64_lossy(sigma);
                out = zip(&out, xi, |x, n| x + s * n);
            }
        }
        Ok(out)
    }
}

fn check_same<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(webrpg_nn::NnError::ShapeMismatch {
            op: "diffusion",
            left: a.shape(),
            right: b.shape(),
        }
        .into());
    }
    Ok(())
}

fn zip<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}

/// Update used by the reverse process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReverseRule {
    /// `(z - beta_t / sqrt(1 - abar_t) eps) / sqrt(alpha_t) + sigma_t xi`.
    #[default]
    Ddpm,
    /// `(z - (1 - alpha_t) / sqrt(1 - alpha_t) eps) / sqrt(alpha_t)`, without
    /// the cumulative product and without ancestral noise.
    Literal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmConfig {
    pub d: usize,
    pub heads: usize,
    /// Transformer blocks; the first half feed skips into the second half.
    pub layers: usize,
    pub steps: usize,
    pub schedule: ScheduleKind,
    pub rule: ReverseRule,
    pub stop_grad_latents: bool,
    pub use_mean_latents: bool,
}

impl Default for DmConfig {
    fn default() -> Self {
        DmConfig {
            d: crate::D_MODEL,
            heads: 4,
            layers: 4,
            steps: 100,
            schedule: ScheduleKind::Linear,
            rule: ReverseRule::Ddpm,
            stop_grad_latents: false,
            use_mean_latents: false,
        }
    }
}

impl DmConfig {
    pub fn paper_scale() -> Self {
        DmConfig {
            layers: 12,
            steps: 1000,
            ..Default::default()
        }
    }
}

/// Noise predictor. Blocks `0..L/2` store their outputs; the mirrored
/// blocks of the second half first merge the matching skip through a
/// linear layer over the concatenation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmModel {
    pub config: DmConfig,
    pub time_mlp: Mlp,
    pub in_blocks: Vec<TransformerBlock>,
    pub mid: Option<TransformerBlock>,
    pub skips: Vec<Linear>,
    pub out_blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
    pub out: Linear,
}

impl DmModel {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, config: DmConfig) -> Result<Self> {
        let d = config.d;
        if d == 0 || config.heads == 0 || d % config.heads != 0 || config.layers == 0 || config.steps == 0 {
            return Err(ModelError::BadConfig(format!("bad diffusion config {config:?}")));
        }
        let half = config.layers / 2;
        let block = |store: &mut ParamStore<T>, rng: &mut _, n: String| TransformerBlock::new(store, rng, &n, d, config.heads, false);
        Ok(DmModel {
            time_mlp: Mlp::new(store, rng, &format!("{name}.time"), &[d, d, d]),
            in_blocks: (0..half).map(|i| block(store, rng, format!("{name}.in{i}"))).collect(),
            mid: (config.layers % 2 == 1).then(|| block(store, rng, format!("{name}.mid"))),
            skips: (0..half)
                .map(|i| Linear::new(store, rng, &format!("{name}.skip{i}"), 2 * d, d))
                .collect(),
            out_blocks: (0..half).map(|i| block(store, rng, format!("{name}.out{i}"))).collect(),
            norm: LayerNorm::new(store, &format!("{name}.norm"), d),
            out: Linear::new(store, rng, &format!("{name}.head"), d, d),
            config,
        })
    }

    /// `eps_hat(z_t + h, t)`; `steps[i]` is the timestep of row `i`.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        z_t: Var,
        h: Var,
        steps: &[usize],
        segs: &[AttnSegment],
    ) -> Result<Var> {
        let d = self.config.d;
        let table = g.constant(sinusoidal_table(self.config.steps + 1, d));
        let temb = g.gather_rows(table, steps.to_vec())?;
        let temb = self.time_mlp.forward(g, temb)?;
        let pos = g.constant(positions(segs, d));
        let x = g.add(z_t, h)?;
        let x = g.add(x, temb)?;
        let mut x = g.add(x, pos)?;
        let mut stack = Vec::with_capacity(self.in_blocks.len());
        for blk in &self.in_blocks {
            x = blk.forward(g, x, segs, false, None)?;
            stack.push(x);
        }
        if let Some(mid) = &self.mid {
            x = mid.forward(g, x, segs, false, None)?;
        }
        for (blk, skip) in self.out_blocks.iter().zip(&self.skips) {
            let s = stack.pop().expect("one skip per block");
            let cat = g.concat_cols(&[x, s])?;
            x = skip.forward(g, cat)?;
            x = blk.forward(g, x, segs, false, None)?;
        }
        let x = self.norm.forward(g, x)?;
        Ok(self.out.forward(g, x)?)
    }
}

/// Random draws of one diffusion training step.
#[derive(Debug, Clone, PartialEq)]
pub struct DmNoise {
    /// VAE reparameterization noise, `rows x latent`.
    pub vae_eps: Vec<f64>,
    /// Diffusion noise, `rows x latent`.
    pub eps: Vec<f64>,
    /// Timestep of each row (shared within a page).
    pub steps: Vec<usize>,
}

impl DmNoise {
    pub fn draw(batch: &Batch, latent: usize, total_steps: usize, rng: &mut impl Rng) -> Self {
        let n = batch.rows();
        let vae_eps = standard_normal::<f64>(n, latent, rng).into_vec();
        let eps = standard_normal::<f64>(n, latent, rng).into_vec();
        let mut steps = Vec::with_capacity(n);
        for s in &batch.segs {
            let t = rng.random_range(1..=total_steps);
            steps.extend(std::iter::repeat_n(t, s.q_len));
        }
        DmNoise { vae_eps, eps, steps }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DmOutput {
    /// Noise MSE plus the VAE objective.
    pub loss: Var,
    /// Mean squared error over all noise entries.
    pub mse: Var,
    pub vae: VaeOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DmGenerator {
    pub embed: HtmlEmbedder,
    pub vae: Vae,
    pub model: DmModel,
    pub schedule: NoiseSchedule,
}

impl DmGenerator {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        vocab: &Vocabulary,
        embed: EmbedConfig,
        vae: VaeConfig,
        dm: DmConfig,
    ) -> Result<Self> {
        if embed.d != dm.d || vae.latent != dm.d {
            return Err(ModelError::BadConfig(format!(
                "embedding ({}), latent ({}) and model ({}) widths must agree",
                embed.d, vae.latent, dm.d
            )));
        }
        let schedule = NoiseSchedule::new(dm.schedule, dm.steps)?;
        Ok(DmGenerator {
            embed: HtmlEmbedder::new(store, rng, "embed", embed),
            vae: Vae::new(store, rng, "vae", vocab, vae)?,
            model: DmModel::new(store, rng, "dm", dm)?,
            schedule,
        })
    }

    /// Noised latents of a step, as the training loss sees them.
    fn noised<T: Real>(&self, g: &mut Graph<T>, z0: Var, noise: &DmNoise) -> Result<Var> {
        let (n, d) = g.shape(z0);
        let a: Vec<T> = noise
            .steps
            .iter()
            .map(|&t| T::from_f64_lossy(self.schedule.alpha_bar(t).sqrt()))
            .collect();
        let b: Vec<T> = noise
            .steps
            .iter()
            .map(|&t| T::from_f64_lossy((1.0 - self.schedule.alpha_bar(t)).sqrt()))
            .collect();
        let scaled = g.scale_rows(z0, a)?;
        let eps = g.constant(Tensor::from_f64(n, d, &noise.eps));
        let noise_part = g.scale_rows(eps, b)?;
        Ok(g.add(scaled, noise_part)?)
    }

    pub fn loss<T: Real>(&self, g: &mut Graph<T>, batch: &Batch, noise: &DmNoise) -> Result<DmOutput> {
        let n = batch.rows();
        let d = self.model.config.d;
        for &t in &noise.steps {
            self.schedule.check(t)?;
        }
        let (mu, logvar) = self.vae.encode(g, &batch.vectors)?;
        let z = g.gaussian_sample(mu, logvar, Tensor::from_f64(n, d, &noise.vae_eps))?;
        let vae = self.vae.objective(g, &batch.vectors, mu, logvar, z)?;
        let mut z0 = if self.model.config.use_mean_latents { mu } else { z };
        if self.model.config.stop_grad_latents {
            z0 = g.detach(z0);
        }
        let z_t = self.noised(g, z0, noise)?;
        let h = self.embed.forward(g, &batch.features)?;
        let eps_hat = self.model.forward(g, z_t, h, &noise.steps, &batch.segs)?;
        let eps = g.constant(Tensor::from_f64(n, d, &noise.eps));
        let se = g.squared_error(eps_hat, eps)?;
        let mse = g.scale(se, T::from_f64_lossy(1.0 / (n * d) as f64))?;
        let loss = g.add(mse, vae.loss)?;
        Ok(DmOutput { loss, mse, vae })
    }

    fn embed_tensor<T: Real>(&self, store: &ParamStore<T>, features: &PageFeatures) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let h = self.embed.forward(&mut g, features)?;
        Ok(g.value(h).clone())
    }

    /// Predicted noise for one page at timestep `t`.
    pub fn predict_noise<T: Real>(
        &self,
        store: &ParamStore<T>,
        h: &Tensor<T>,
        z_t: &Tensor<T>,
        t: usize,
    ) -> Result<Tensor<T>> {
        let s = z_t.rows();
        let mut g = Graph::new(store);
        let (hv, zv) = (g.constant(h.clone()), g.constant(z_t.clone()));
        let out = self.model.forward(&mut g, zv, hv, &vec![t; s], &[AttnSegment::square(0, s)])?;
        Ok(g.value(out).clone())
    }

    /// Run the reverse process from `z_t` at step `t` down to a clean
    /// latent. With `rng` set, DDPM steps add ancestral noise; without it
    /// each step moves to the posterior mean.
    pub fn denoise<T: Real>(
        &self,
        store: &ParamStore<T>,
        features: &PageFeatures,
        z_t: Tensor<T>,
        t: usize,
        mut rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<Tensor<T>> {
        self.schedule.check(t)?;
        let h = self.embed_tensor(store, features)?;
        let mut z = z_t;
        for step in (1..=t).rev() {
            let eps_hat = self.predict_noise(store, &h, &z, step)?;
            let xi = match rng.as_deref_mut() {
                Some(r) if step > 1 => Some(standard_normal::<T>(z.rows(), z.cols(), r)),
                _ => None,
            };
            z = self.schedule.step_reverse(&z, step, &eps_hat, xi.as_ref(), self.model.config.rule)?;
        }
        Ok(z)
    }

    /// Sample latents from pure noise and decode them.
    pub fn sample<T: Real>(&self, store: &ParamStore<T>, features: &PageFeatures, rng: &mut impl Rng) -> Result<Vec<RpVector>> {
        if features.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let d = self.model.config.d;
        let z_t = standard_normal::<T>(features.len(), d, rng);
        let z = self.denoise(store, features, z_t, self.schedule.steps(), Some(rng))?;
        self.vae.decode_argmax(store, &z)
    }
}
