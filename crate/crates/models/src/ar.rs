//! Masked-latent encoder/decoder generator.
//!
//! Training: a schedule-chosen subset of element latents is replaced by a
//! learned MASK row, the encoder reads `Z_mask + H`, and a causal decoder
//! with cross-attention predicts every latent from the previous ground-truth
//! latents. Predicted latents are scored through the VAE decoder.
//! Inference masks every latent and decodes left to right; by default each
//! emitted latent is snapped back onto the posterior (decode, then encode
//! the mean) before the next step reads it.

use std::f64::consts::FRAC_PI_2;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use webrpg_core::rp::{RpVector, Vocabulary};
use webrpg_nn::layers::{sinusoidal_table, LayerNorm, Linear, TransformerBlock};
use webrpg_nn::{AttnSegment, Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::data::Batch;
use crate::embedding::{EmbedConfig, HtmlEmbedder, PageFeatures};
use crate::vae::{standard_normal, Vae, VaeConfig, VaeOutput};
use crate::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArConfig {
    pub d: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Block gradients from the generator into the VAE encoder.
    pub stop_grad_latents: bool,
    /// Feed posterior means instead of samples to the generator.
    pub use_mean_latents: bool,
    #[serde(default)]
    pub feedback: Feedback,
}

/// What the decoder sees for already generated elements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feedback {
    /// The decoder's own output row.
    Raw,
    /// The posterior mean of the vector that output row decodes to.
    #[default]
    Reencode,
}

impl Default for ArConfig {
    fn default() -> Self {
        ArConfig {
            d: crate::D_MODEL,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            stop_grad_latents: false,
            use_mean_latents: false,
            feedback: Feedback::default(),
        }
    }
}

impl ArConfig {
    pub fn paper_scale() -> Self {
        ArConfig {
            enc_layers: 6,
            dec_layers: 6,
            ..Default::default()
        }
    }
}

/// `gamma(r) = cos(pi r / 2)`.
pub fn gamma(r: f64) -> f64 {
    (FRAC_PI_2 * r).cos()
}

/// `ceil(gamma(r) * s)`, at least 1 for `s > 0`.
pub fn mask_count(s: usize, r: f64) -> usize {
    ((gamma(r) * s as f64).ceil() as usize).clamp(s.min(1), s)
}

/// `mask_count(s, r)` positions chosen uniformly without replacement.
pub fn build_mask(s: usize, r: f64, rng: &mut impl Rng) -> Vec<bool> {
    assert!((0.0..1.0).contains(&r), "mask ratio progress {r} outside [0, 1)");
    let mut mask = vec![false; s];
    for i in sample(rng, s, mask_count(s, r)) {
        mask[i] = true;
    }
    mask
}

/// `m_i * mask + (1 - m_i) * z_i` row by row.
pub fn mask_latents<T: Real>(z: &Tensor<T>, mask: &[bool], mask_vector: &[T]) -> Result<Tensor<T>> {
    if mask.len() != z.rows() || mask_vector.len() != z.cols() {
        return Err(webrpg_nn::NnError::ShapeMismatch {
            op: "mask_latents",
            left: z.shape(),
            right: (mask.len(), mask_vector.len()),
        }
        .into());
    }
    let mut out = z.clone();
    for (r, &m) in mask.iter().enumerate() {
        if m {
            out.row_mut(r).copy_from_slice(mask_vector);
        }
    }
    Ok(out)
}

/// Row `i` gets the sinusoid of its position inside its segment.
pub fn positions<T: Real>(segs: &[AttnSegment], d: usize) -> Tensor<T> {
    let rows: usize = segs.iter().map(|s| s.q_len).sum();
    let longest = segs.iter().map(|s| s.q_len).max().unwrap_or(0);
    let table = sinusoidal_table::<T>(longest, d);
    let mut out = Tensor::zeros(rows, d);
    let mut r = 0;
    for s in segs {
        for p in 0..s.q_len {
            out.row_mut(r).copy_from_slice(table.row(p));
            r += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArModel {
    pub config: ArConfig,
    pub mask: ParamId,
    pub start: ParamId,
    pub encoder: Vec<TransformerBlock>,
    pub decoder: Vec<TransformerBlock>,
    pub enc_norm: LayerNorm,
    pub dec_norm: LayerNorm,
    pub out: Linear,
}

impl ArModel {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, config: ArConfig) -> Result<Self> {
        let d = config.d;
        if d == 0 || config.heads == 0 || d % config.heads != 0 || config.enc_layers == 0 || config.dec_layers == 0 {
            return Err(ModelError::BadConfig(format!("bad AR config {config:?}")));
        }
        Ok(ArModel {
            mask: store.randn(format!("{name}.mask"), 1, d, 1.0, rng),
            start: store.randn(format!("{name}.start"), 1, d, 1.0, rng),
            encoder: (0..config.enc_layers)
                .map(|i| TransformerBlock::new(store, rng, &format!("{name}.enc{i}"), d, config.heads, false))
                .collect(),
            decoder: (0..config.dec_layers)
                .map(|i| TransformerBlock::new(store, rng, &format!("{name}.dec{i}"), d, config.heads, true))
                .collect(),
            enc_norm: LayerNorm::new(store, &format!("{name}.enc_norm"), d),
            dec_norm: LayerNorm::new(store, &format!("{name}.dec_norm"), d),
            out: Linear::new(store, rng, &format!("{name}.out"), d, d),
            config,
        })
    }

    /// Encoder memory for `z_mask + h + pos`.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, z_mask: Var, h: Var, pos: Var, segs: &[AttnSegment]) -> Result<Var> {
        let x = g.add(z_mask, h)?;
        let mut x = g.add(x, pos)?;
        for blk in &self.encoder {
            x = blk.forward(g, x, segs, false, None)?;
        }
        Ok(self.enc_norm.forward(g, x)?)
    }

    /// Predicted latents from decoder inputs (already shifted) and memory.
    #[allow(clippy::too_many_arguments)]
    pub fn decode<T: Real>(
        &self,
        g: &mut Graph<T>,
        inputs: Var,
        h: Var,
        pos: Var,
        segs: &[AttnSegment],
        memory: Var,
        memory_segs: &[AttnSegment],
    ) -> Result<Var> {
        let y = g.add(inputs, h)?;
        let mut y = g.add(y, pos)?;
        for blk in &self.decoder {
            y = blk.forward(g, y, segs, true, Some((memory, memory_segs)))?;
        }
        let y = self.dec_norm.forward(g, y)?;
        Ok(self.out.forward(g, y)?)
    }

    /// Latents shifted right by one inside each segment, START at the front.
    pub fn shift_right<T: Real>(&self, g: &mut Graph<T>, z: Var, segs: &[AttnSegment]) -> Result<Var> {
        let n = g.shape(z).0;
        let start = g.param(self.start);
        let table = g.concat_rows(&[z, start])?;
        let mut idx = Vec::with_capacity(n);
        for s in segs {
            idx.push(n);
            idx.extend(s.q_start..s.q_start + s.q_len - 1);
        }
        Ok(g.gather_rows(table, idx)?)
    }
}

/// Random draws of one AR training step, made outside the graph so the same
/// step can be replayed in another precision.
#[derive(Debug, Clone, PartialEq)]
pub struct ArNoise {
    /// `rows x latent` standard normal.
    pub eps: Vec<f64>,
    pub mask: Vec<bool>,
}

impl ArNoise {
    pub fn draw(batch: &Batch, latent: usize, rng: &mut impl Rng) -> Self {
        let eps = standard_normal::<f64>(batch.rows(), latent, rng).into_vec();
        let mut mask = Vec::with_capacity(batch.rows());
        for s in &batch.segs {
            let r: f64 = rng.random_range(0.0..1.0);
            mask.extend(build_mask(s.q_len, r, rng));
        }
        ArNoise { eps, mask }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ArOutput {
    /// Generator cross-entropy per element plus the VAE objective.
    pub loss: Var,
    /// Summed cross-entropy of decoded predictions.
    pub generator_recon: Var,
    pub predicted: Var,
    pub vae: VaeOutput,
}

/// HTML embedder, VAE and generator sharing one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct ArGenerator {
    pub embed: HtmlEmbedder,
    pub vae: Vae,
    pub model: ArModel,
}

impl ArGenerator {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        vocab: &Vocabulary,
        embed: EmbedConfig,
        vae: VaeConfig,
        ar: ArConfig,
    ) -> Result<Self> {
        if embed.d != ar.d || vae.latent != ar.d {
            return Err(ModelError::BadConfig(format!(
                "embedding ({}), latent ({}) and model ({}) widths must agree",
                embed.d, vae.latent, ar.d
            )));
        }
        Ok(ArGenerator {
            embed: HtmlEmbedder::new(store, rng, "embed", embed),
            vae: Vae::new(store, rng, "vae", vocab, vae)?,
            model: ArModel::new(store, rng, "ar", ar)?,
        })
    }

    pub fn loss<T: Real>(&self, g: &mut Graph<T>, batch: &Batch, noise: &ArNoise) -> Result<ArOutput> {
        let n = batch.rows();
        let d = self.model.config.d;
        let cfg = &self.model.config;
        let (mu, logvar) = self.vae.encode(g, &batch.vectors)?;
        let z = g.gaussian_sample(mu, logvar, Tensor::from_f64(n, d, &noise.eps))?;
        let vae = self.vae.objective(g, &batch.vectors, mu, logvar, z)?;

        let mut latents = if cfg.use_mean_latents { mu } else { z };
        if cfg.stop_grad_latents {
            latents = g.detach(latents);
        }
        let mask = g.param(self.model.mask);
        let z_mask = g.blend_rows(latents, mask, noise.mask.clone())?;
        let h = self.embed.forward(g, &batch.features)?;
        let pos = g.constant(positions(&batch.segs, d));
        let memory = self.model.encode(g, z_mask, h, pos, &batch.segs)?;
        let inputs = self.model.shift_right(g, latents, &batch.segs)?;
        let predicted = self.model.decode(g, inputs, h, pos, &batch.segs, memory, &batch.segs)?;

        let logits = self.vae.decode(g, predicted)?;
        let generator_recon = self.vae.reconstruction(g, logits, &batch.vectors)?;
        let per_element = g.scale(generator_recon, T::from_f64_lossy(1.0 / n as f64))?;
        let loss = g.add(per_element, vae.loss)?;
        Ok(ArOutput {
            loss,
            generator_recon,
            predicted,
            vae,
        })
    }

    fn memory<T: Real>(&self, store: &ParamStore<T>, features: &PageFeatures) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = features.len();
        let segs = [AttnSegment::square(0, s)];
        let mut g = Graph::new(store);
        let h = self.embed.forward(&mut g, features)?;
        let mask = g.param(self.model.mask);
        let z_mask = g.gather_rows(mask, vec![0; s])?;
        let pos = g.constant(positions(&segs, self.model.config.d));
        let memory = self.model.encode(&mut g, z_mask, h, pos, &segs)?;
        Ok((g.value(h).clone(), g.value(memory).clone()))
    }

    /// Decoder outputs for every position given the full latent sequence
    /// (teacher forcing), with all encoder inputs masked.
    pub fn decode_teacher_forced<T: Real>(
        &self,
        store: &ParamStore<T>,
        features: &PageFeatures,
        latents: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        let s = features.len();
        let segs = [AttnSegment::square(0, s)];
        let (h, memory) = self.memory(store, features)?;
        let mut g = Graph::new(store);
        let (h, memory) = (g.constant(h), g.constant(memory));
        let z = g.constant(latents.clone());
        let inputs = self.model.shift_right(&mut g, z, &segs)?;
        let pos = g.constant(positions(&segs, self.model.config.d));
        let out = self.model.decode(&mut g, inputs, h, pos, &segs, memory, &segs)?;
        Ok(g.value(out).clone())
    }

    /// Latents emitted one element at a time, each conditioned on the ones
    /// before it (see [`Feedback`]). Greedy, so no randomness is involved.
    pub fn generate_latents<T: Real>(&self, store: &ParamStore<T>, features: &PageFeatures) -> Result<Tensor<T>> {
        let s = features.len();
        if s == 0 {
            return Err(ModelError::EmptyBatch);
        }
        let d = self.model.config.d;
        let (h, memory) = self.memory(store, features)?;
        let pos_all = positions::<T>(&[AttnSegment::square(0, s)], d);
        let mut inputs = Tensor::zeros(s, d);
        inputs.row_mut(0).copy_from_slice(store.get(self.model.start).data());
        let mut out = Tensor::zeros(s, d);
        for i in 0..s {
            let len = i + 1;
            let mut g = Graph::new(store);
            let x = g.constant(inputs.slice_rows(0, len));
            let hv = g.constant(h.slice_rows(0, len));
            let pos = g.constant(pos_all.slice_rows(0, len));
            let mem = g.constant(memory.clone());
            let cross = [AttnSegment {
                q_start: 0,
                q_len: len,
                k_start: 0,
                k_len: s,
            }];
            let y = self
                .model
                .decode(&mut g, x, hv, pos, &[AttnSegment::square(0, len)], mem, &cross)?;
            let zi = g.value(y).slice_rows(i, 1);
            out.row_mut(i).copy_from_slice(zi.data());
            if i + 1 < s {
                let next = match self.model.config.feedback {
                    Feedback::Raw => zi,
                    Feedback::Reencode => {
                        let v = self.vae.decode_argmax(store, &zi)?;
                        self.vae.encode_mean(store, &v)?
                    }
                };
                inputs.row_mut(i + 1).copy_from_slice(next.data());
            }
        }
        Ok(out)
    }

    /// One vector per element, all legal by construction of the VAE heads.
    pub fn generate<T: Real>(&self, store: &ParamStore<T>, features: &PageFeatures) -> Result<Vec<RpVector>> {
        let z = self.generate_latents(store, features)?;
        self.vae.decode_argmax(store, &z)
    }
}
