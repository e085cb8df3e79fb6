//! Real-vs-polluted classifier whose CLS features feed FID.
//!
//! Each element contributes its frozen VAE posterior mean (projected to the
//! model width) plus its HTML embedding and a position code. A learned CLS
//! row is prepended to every page; after the transformer layers and a final
//! layer norm, the CLS row is both the FID feature and the input to the
//! binary head.

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use webrpg_core::rp::{RpName, RpVector, Vocabulary};
use webrpg_models::ar::positions;
use webrpg_models::data::PageExample;
use webrpg_models::embedding::{EmbedConfig, HtmlEmbedder, PageFeatures};
use webrpg_models::train::{pick, run, TrainConfig};
use webrpg_models::vae::Vae;
use webrpg_nn::layers::{LayerNorm, Linear, TransformerBlock};
use webrpg_nn::{AttnSegment, Graph, ParamId, ParamStore, Tensor, Var};

use crate::noise::{pollute, NoiseConfig};
use crate::{EvalError, Result};

/// Which parameters the classifier sees. The others are replaced by a
/// fixed token before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FidVariant {
    Overall,
    Layout,
    Style,
}

impl FidVariant {
    pub const ALL: [FidVariant; 3] = [FidVariant::Overall, FidVariant::Layout, FidVariant::Style];

    pub fn as_str(self) -> &'static str {
        match self {
            FidVariant::Overall => "overall",
            FidVariant::Layout => "layout",
            FidVariant::Style => "style",
        }
    }

    fn keeps(self, p: RpName) -> bool {
        match self {
            FidVariant::Overall => true,
            FidVariant::Layout => p.is_layout(),
            FidVariant::Style => !p.is_layout(),
        }
    }

    /// Masked slots get the parameter's smallest value token.
    pub fn mask(self, v: &RpVector) -> RpVector {
        let mut out = *v;
        for p in RpName::ALL {
            if !self.keeps(p) {
                out[p] = p.value_tokens()[0];
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidClassifierConfig {
    pub variant: FidVariant,
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub noise: NoiseConfig,
    pub intensity: f64,
    /// Fraction of pages held out for the accuracy estimate.
    pub holdout: f64,
}

impl Default for FidClassifierConfig {
    fn default() -> Self {
        FidClassifierConfig {
            variant: FidVariant::Overall,
            d: 64,
            heads: 4,
            layers: 4,
            noise: NoiseConfig::default(),
            intensity: 1.0,
            holdout: 0.2,
        }
    }
}

/// One page ready for the classifier: HTML features and masked latents.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierInput {
    pub features: PageFeatures,
    pub latents: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidClassifier {
    pub config: FidClassifierConfig,
    pub embed: HtmlEmbedder,
    pub lat_proj: Linear,
    pub cls: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
    pub head: Linear,
}

/// Result of [`FidClassifier::train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedClassifier {
    pub classifier: FidClassifier,
    pub losses: Vec<f64>,
    /// Accuracy on held-out real pages and one polluted copy of each.
    pub holdout_accuracy: f64,
    pub holdout_pages: usize,
}

impl FidClassifier {
    pub fn new(
        store: &mut ParamStore<f32>,
        rng: &mut impl Rng,
        config: FidClassifierConfig,
        embed: EmbedConfig,
        latent: usize,
    ) -> Result<Self> {
        if config.d == 0 || config.heads == 0 || config.d % config.heads != 0 {
            return Err(webrpg_models::ModelError::BadConfig(format!(
                "width {} must be a positive multiple of heads {}",
                config.d, config.heads
            ))
            .into());
        }
        let d = config.d;
        let embed = EmbedConfig { d, ..embed };
        Ok(FidClassifier {
            embed: HtmlEmbedder::new(store, rng, "fid.embed", embed),
            lat_proj: Linear::new(store, rng, "fid.lat_proj", latent, d),
            cls: store.randn("fid.cls", 1, d, 0.02, rng),
            blocks: (0..config.layers)
                .map(|i| TransformerBlock::new(store, rng, &format!("fid.block{i}"), d, config.heads, false))
                .collect(),
            norm: LayerNorm::new(store, "fid.norm", d),
            head: Linear::new(store, rng, "fid.head", d, 2),
            config,
        })
    }

    /// Mask `vectors` for this variant and encode them with the frozen VAE.
    pub fn prepare(
        &self,
        vae_store: &ParamStore<f32>,
        vae: &Vae,
        features: &PageFeatures,
        vectors: &[RpVector],
    ) -> Result<ClassifierInput> {
        if features.len() != vectors.len() {
            return Err(webrpg_models::ModelError::Misaligned {
                elements: features.len(),
                vectors: vectors.len(),
            }
            .into());
        }
        let masked: Vec<RpVector> = vectors.iter().map(|v| self.config.variant.mask(v)).collect();
        Ok(ClassifierInput {
            features: features.clone(),
            latents: vae.encode_mean(vae_store, &masked)?,
        })
    }

    /// CLS features (`pages x d`) and logits (`pages x 2`).
    pub fn forward(&self, g: &mut Graph<f32>, inputs: &[&ClassifierInput]) -> Result<(Var, Var)> {
        if inputs.is_empty() || inputs.iter().any(|i| i.features.is_empty()) {
            return Err(EvalError::Empty);
        }
        let d = self.config.d;
        let mut segs = Vec::with_capacity(inputs.len());
        let mut start = 0;
        for i in inputs {
            segs.push(AttnSegment::square(start, i.features.len()));
            start += i.features.len();
        }
        let n = start;
        let features = PageFeatures::concat(inputs.iter().map(|i| &i.features));
        let mut lat = Vec::with_capacity(n * inputs[0].latents.cols());
        for i in inputs {
            lat.extend_from_slice(i.latents.data());
        }
        let lat = g.constant(Tensor::from_vec(n, inputs[0].latents.cols(), lat));
        let lat = self.lat_proj.forward(g, lat)?;
        let h = self.embed.forward(g, &features)?;
        let pos = g.constant(positions(&segs, d));
        let x = g.add(lat, h)?;
        let x = g.add(x, pos)?;

        // CLS goes in as the last row of the table, then each page reads it
        // back in front of its own rows
        let cls = g.param(self.cls);
        let table = g.concat_rows(&[x, cls])?;
        let mut idx = Vec::with_capacity(n + inputs.len());
        let mut cls_rows = Vec::with_capacity(inputs.len());
        let mut seq_segs = Vec::with_capacity(inputs.len());
        for s in &segs {
            cls_rows.push(idx.len());
            seq_segs.push(AttnSegment::square(idx.len(), s.q_len + 1));
            idx.push(n);
            idx.extend(s.q_start..s.q_start + s.q_len);
        }
        let mut x = g.gather_rows(table, idx)?;
        for b in &self.blocks {
            x = b.forward(g, x, &seq_segs, false, None)?;
        }
        let x = self.norm.forward(g, x)?;
        let feats = g.gather_rows(x, cls_rows)?;
        let logits = self.head.forward(g, feats)?;
        Ok((feats, logits))
    }

    /// Mean cross-entropy; label 1 is real.
    pub fn loss(&self, g: &mut Graph<f32>, inputs: &[&ClassifierInput], labels: &[usize]) -> Result<Var> {
        let (_, logits) = self.forward(g, inputs)?;
        let ce = g.cross_entropy(logits, labels)?;
        Ok(g.scale(ce, 1.0 / labels.len() as f32)?)
    }

    /// Probability-of-real argmax per page.
    pub fn predict(&self, store: &ParamStore<f32>, inputs: &[ClassifierInput]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(8) {
            let refs: Vec<&ClassifierInput> = chunk.iter().collect();
            let mut g = Graph::new(store);
            let (_, logits) = self.forward(&mut g, &refs)?;
            let l = g.value(logits);
            out.extend((0..l.rows()).map(|r| usize::from(l.get(r, 1) > l.get(r, 0))));
        }
        Ok(out)
    }

    /// FID features, one row per page.
    pub fn features(&self, store: &ParamStore<f32>, inputs: &[ClassifierInput]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(8) {
            let refs: Vec<&ClassifierInput> = chunk.iter().collect();
            let mut g = Graph::new(store);
            let (feats, _) = self.forward(&mut g, &refs)?;
            let f = g.value(feats);
            out.extend((0..f.rows()).map(|r| f.row(r).iter().map(|&x| x as f64).collect::<Vec<f64>>()));
        }
        Ok(out)
    }

    /// Accuracy against `labels`.
    pub fn accuracy(&self, store: &ParamStore<f32>, inputs: &[ClassifierInput], labels: &[usize]) -> Result<f64> {
        let pred = self.predict(store, inputs)?;
        let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }

    /// Real copies (label 1) and one polluted copy each (label 0).
    pub fn labelled_pair(
        &self,
        vae_store: &ParamStore<f32>,
        vae: &Vae,
        vocab: &Vocabulary,
        page: &PageExample,
        rng: &mut impl Rng,
    ) -> Result<[ClassifierInput; 2]> {
        let noisy = pollute(&page.vectors, self.config.intensity, &self.config.noise, vocab, rng);
        Ok([
            self.prepare(vae_store, vae, &page.features, &page.vectors)?,
            self.prepare(vae_store, vae, &page.features, &noisy)?,
        ])
    }

    /// Train on `corpus` minus a seeded held-out split. Each step draws
    /// `cfg.batch` training pages and pairs each with a fresh polluted copy.
    #[allow(clippy::too_many_arguments)]
    pub fn train(
        store: &mut ParamStore<f32>,
        config: FidClassifierConfig,
        embed: EmbedConfig,
        vae_store: &ParamStore<f32>,
        vae: &Vae,
        vocab: &Vocabulary,
        corpus: &[PageExample],
        cfg: &TrainConfig,
    ) -> Result<TrainedClassifier> {
        if corpus.len() < 2 {
            return Err(EvalError::TooFewSamples {
                need: 2,
                got: corpus.len(),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_f1d0);
        let classifier = FidClassifier::new(store, &mut rng, config, embed, vae.latent())?;
        let holdout_n = ((corpus.len() as f64 * classifier.config.holdout).round() as usize).clamp(1, corpus.len() - 1);
        let held = pick(corpus.len(), holdout_n, &mut rng);
        let train: Vec<&PageExample> = (0..corpus.len()).filter(|i| held.binary_search(i).is_err()).map(|i| &corpus[i]).collect();

        let mut pre = Vec::with_capacity(train.len());
        for p in &train {
            let masked: Vec<RpVector> = p.vectors.iter().map(|v| classifier.config.variant.mask(v)).collect();
            pre.push(ClassifierInput {
                features: p.features.clone(),
                latents: vae.encode_mean(vae_store, &masked)?,
            });
        }

        let losses = run(store, cfg, &format!("fid-{}", classifier.config.variant.as_str()), |g, step_rng| {
            let chosen = pick(train.len(), cfg.batch, step_rng);
            let mut inputs = Vec::with_capacity(2 * chosen.len());
            let mut labels = Vec::with_capacity(2 * chosen.len());
            for &i in &chosen {
                let noisy = pollute(&train[i].vectors, classifier.config.intensity, &classifier.config.noise, vocab, step_rng);
                let noisy = classifier
                    .prepare(vae_store, vae, &train[i].features, &noisy)
                    .map_err(into_model)?;
                inputs.push(pre[i].clone());
                labels.push(1);
                inputs.push(noisy);
                labels.push(0);
            }
            let refs: Vec<&ClassifierInput> = inputs.iter().collect();
            classifier.loss(g, &refs, &labels).map_err(into_model)
        })?;

        let mut eval_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe7a1);
        let mut inputs = Vec::with_capacity(2 * held.len());
        let mut labels = Vec::with_capacity(2 * held.len());
        for &i in &held {
            let [real, noisy] = classifier.labelled_pair(vae_store, vae, vocab, &corpus[i], &mut eval_rng)?;
            inputs.push(real);
            labels.push(1);
            inputs.push(noisy);
            labels.push(0);
        }
        let holdout_accuracy = classifier.accuracy(store, &inputs, &labels)?;
        info!(
            "fid-{} held-out accuracy {:.4} on {} pages",
            classifier.config.variant.as_str(),
            holdout_accuracy,
            held.len()
        );
        Ok(TrainedClassifier {
            classifier,
            losses,
            holdout_accuracy,
            holdout_pages: held.len(),
        })
    }
}

fn into_model(e: EvalError) -> webrpg_models::ModelError {
    match e {
        EvalError::Model(m) => m,
        other => webrpg_models::ModelError::BadConfig(other.to_string()),
    }
}
