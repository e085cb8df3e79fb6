//! Element-level VAE over the 13 rendering-parameter tokens.
//!
//! The encoder input is the one-hot of every (parameter, token) pair. Pairs
//! that are illegal for their slot can never occur in a valid vector, so the
//! first layer only stores rows for legal pairs and is evaluated as a sum of
//! 13 rows. The decoder emits one logit per legal pair: each head's softmax
//! then runs over that parameter's legal tokens only.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use webrpg_core::rp::{PadPolicy, RpName, RpTokenId, RpVector, Vocabulary, NUM_PARAMS, VOCAB_SIZE};
use webrpg_nn::layers::Mlp;
use webrpg_nn::{Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::{ModelError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeConfig {
    pub latent: usize,
    /// Encoder widths after the input layer; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub lambda_kl: f64,
    pub pad_policy: PadPolicy,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent: crate::D_MODEL,
            hidden: vec![512, 256, 128, 128],
            lambda_kl: 1e-6,
            pad_policy: PadPolicy::default(),
        }
    }
}

impl VaeConfig {
    /// Narrower widths that keep CPU training short.
    pub fn desk() -> Self {
        VaeConfig {
            hidden: vec![256, 128, 128, 128],
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent == 0 || self.hidden.len() != 4 || self.hidden.contains(&0) {
            return Err(ModelError::BadConfig(format!(
                "VAE needs a positive latent width and 4 hidden widths, got {self:?}"
            )));
        }
        if !(self.lambda_kl >= 0.0 && self.lambda_kl.is_finite()) {
            return Err(ModelError::BadConfig(format!("lambda_kl {}", self.lambda_kl)));
        }
        Ok(())
    }
}

/// Column layout of the legal (parameter, token) pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeadLayout {
    /// `(start, len)` per parameter.
    pub segs: Vec<(usize, usize)>,
    tokens: Vec<RpTokenId>,
    /// `[param][token]` -> column, `u32::MAX` when illegal.
    column: Vec<u32>,
}

impl HeadLayout {
    pub fn new(vocab: &Vocabulary) -> Self {
        let mut segs = Vec::with_capacity(NUM_PARAMS);
        let mut tokens = Vec::new();
        let mut column = vec![u32::MAX; NUM_PARAMS * VOCAB_SIZE];
        for p in RpName::ALL {
            let legal = vocab.legal_tokens(p);
            segs.push((tokens.len(), legal.len()));
            for t in legal {
                column[p.index() * VOCAB_SIZE + t.0 as usize] = tokens.len() as u32;
                tokens.push(t);
            }
        }
        HeadLayout { segs, tokens, column }
    }

    /// Total number of legal pairs.
    pub fn width(&self) -> usize {
        self.tokens.len()
    }

    pub fn column(&self, param: RpName, token: RpTokenId) -> Option<usize> {
        let c = *self.column.get(param.index() * VOCAB_SIZE + token.0 as usize)?;
        (c != u32::MAX).then_some(c as usize)
    }

    pub fn token(&self, column: usize) -> RpTokenId {
        self.tokens[column]
    }

    /// 13 input-table rows per vector.
    pub fn input_rows(&self, vectors: &[RpVector]) -> Result<Vec<usize>> {
        let mut rows = Vec::with_capacity(vectors.len() * NUM_PARAMS);
        for (i, v) in vectors.iter().enumerate() {
            for p in RpName::ALL {
                let t = v.0[p.index()];
                rows.push(self.column(p, t).ok_or(ModelError::InvalidVector {
                    index: i,
                    param: p.as_str(),
                    token: t.0,
                })?);
            }
        }
        Ok(rows)
    }

    /// Per-(vector, head) targets, indexed within each head.
    pub fn targets(&self, vectors: &[RpVector]) -> Result<Vec<u32>> {
        let cols = self.input_rows(vectors)?;
        Ok(cols
            .iter()
            .enumerate()
            .map(|(i, &c)| (c - self.segs[i % NUM_PARAMS].0) as u32)
            .collect())
    }

    /// Highest-scoring legal token of every head, row by row.
    pub fn argmax<T: Real>(&self, logits: &Tensor<T>) -> Vec<RpVector> {
        assert_eq!(logits.cols(), self.width(), "logit width");
        (0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                let mut v = RpVector::all_pad();
                for (p, &(start, len)) in self.segs.iter().enumerate() {
                    let mut best = start;
                    for c in start..start + len {
                        if row[c] > row[best] {
                            best = c;
                        }
                    }
                    v.0[p] = self.tokens[best];
                }
                v
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vae {
    pub config: VaeConfig,
    pub layout: HeadLayout,
    pub input: ParamId,
    pub input_bias: ParamId,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

/// Graph handles of one VAE pass.
#[derive(Debug, Clone, Copy)]
pub struct VaeOutput {
    pub mu: Var,
    pub logvar: Var,
    pub z: Var,
    /// Summed cross-entropy over all heads and rows.
    pub recon: Var,
    /// Summed KL divergence to the standard normal.
    pub kl: Var,
    /// `(recon + lambda_kl * kl) / rows`.
    pub loss: Var,
}

impl Vae {
    pub fn new<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
        name: &str,
        vocab: &Vocabulary,
        config: VaeConfig,
    ) -> Result<Self> {
        config.validate()?;
        if vocab.pad_policy() != config.pad_policy {
            return Err(ModelError::BadConfig(format!(
                "vocabulary PAD policy {:?} differs from VAE config {:?}",
                vocab.pad_policy(),
                config.pad_policy
            )));
        }
        let layout = HeadLayout::new(vocab);
        let h = &config.hidden;
        let d = config.latent;
        // 13 rows are summed, so scale like a fan-in of 13
        let input = store.randn(format!("{name}.input"), layout.width(), h[0], 1.0 / 13f64.sqrt(), rng);
        let input_bias = store.zeros(format!("{name}.input_bias"), 1, h[0]);
        let encoder = Mlp::new(store, rng, &format!("{name}.enc"), &[h[0], h[1], h[2], h[3], 2 * d]);
        let decoder = Mlp::new(store, rng, &format!("{name}.dec"), &[d, h[3], h[2], h[1], h[0], layout.width()]);
        Ok(Vae {
            config,
            layout,
            input,
            input_bias,
            encoder,
            decoder,
        })
    }

    pub fn latent(&self) -> usize {
        self.config.latent
    }

    /// Posterior mean and log-variance, one row per vector.
    pub fn encode<T: Real>(&self, g: &mut Graph<T>, vectors: &[RpVector]) -> Result<(Var, Var)> {
        if vectors.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let rows = self.layout.input_rows(vectors)?;
        let table = g.param(self.input);
        let bias = g.param(self.input_bias);
        let h = g.embedding_bag(table, rows, NUM_PARAMS)?;
        let h = g.add_row(h, bias)?;
        let h = g.gelu(h)?;
        let out = self.encoder.forward(g, h)?;
        let d = self.config.latent;
        let mu = g.slice_cols(out, 0, d)?;
        let logvar = g.slice_cols(out, d, d)?;
        Ok((mu, logvar))
    }

    /// Legal-pair logits, `rows x layout.width()`.
    pub fn decode<T: Real>(&self, g: &mut Graph<T>, z: Var) -> Result<Var> {
        Ok(self.decoder.forward(g, z)?)
    }

    /// Summed head cross-entropy of `logits` against `vectors`.
    pub fn reconstruction<T: Real>(&self, g: &mut Graph<T>, logits: Var, vectors: &[RpVector]) -> Result<Var> {
        let targets = self.layout.targets(vectors)?;
        Ok(g.segmented_cross_entropy(logits, &self.layout.segs, targets)?)
    }

    /// Full objective with one reparameterized sample per vector; `eps` is
    /// `rows x latent` standard-normal noise.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, vectors: &[RpVector], eps: Tensor<T>) -> Result<VaeOutput> {
        let (mu, logvar) = self.encode(g, vectors)?;
        let z = g.gaussian_sample(mu, logvar, eps)?;
        self.objective(g, vectors, mu, logvar, z)
    }

    /// Objective for an already sampled `z`.
    pub fn objective<T: Real>(
        &self,
        g: &mut Graph<T>,
        vectors: &[RpVector],
        mu: Var,
        logvar: Var,
        z: Var,
    ) -> Result<VaeOutput> {
        let logits = self.decode(g, z)?;
        let recon = self.reconstruction(g, logits, vectors)?;
        let kl = g.kl_normal(mu, logvar)?;
        let weighted = g.scale(kl, T::from_f64_lossy(self.config.lambda_kl))?;
        let total = g.add(recon, weighted)?;
        let loss = g.scale(total, T::from_f64_lossy(1.0 / vectors.len() as f64))?;
        Ok(VaeOutput {
            mu,
            logvar,
            z,
            recon,
            kl,
            loss,
        })
    }

    /// Argmax decoding of latent rows.
    pub fn decode_argmax<T: Real>(&self, store: &ParamStore<T>, z: &Tensor<T>) -> Result<Vec<RpVector>> {
        let mut g = Graph::new(store);
        let zv = g.constant(z.clone());
        let logits = self.decode(&mut g, zv)?;
        Ok(self.layout.argmax(g.value(logits)))
    }

    /// Posterior means, without building gradients.
    pub fn encode_mean<T: Real>(&self, store: &ParamStore<T>, vectors: &[RpVector]) -> Result<Tensor<T>> {
        let mut g = Graph::new(store);
        let (mu, _) = self.encode(&mut g, vectors)?;
        Ok(g.value(mu).clone())
    }

    /// Fraction of (vector, parameter) slots that survive encode-mean then
    /// argmax decode.
    pub fn reconstruction_accuracy<T: Real>(&self, store: &ParamStore<T>, vectors: &[RpVector]) -> Result<f64> {
        let mu = self.encode_mean(store, vectors)?;
        let decoded = self.decode_argmax(store, &mu)?;
        let hits: usize = decoded
            .iter()
            .zip(vectors)
            .map(|(a, b)| a.0.iter().zip(&b.0).filter(|(x, y)| x == y).count())
            .sum();
        Ok(hits as f64 / (vectors.len() * NUM_PARAMS) as f64)
    }
}

/// Standard-normal noise tensor.
pub fn standard_normal<T: Real>(rows: usize, cols: usize, rng: &mut (impl Rng + ?Sized)) -> Tensor<T> {
    let data = (0..rows * cols)
        .map(|_| {
            let x: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(x)
        })
        .collect();
    Tensor::from_vec(rows, cols, data)
}

/// A vector whose every slot is drawn uniformly from its legal tokens.
pub fn uniform_vector(vocab: &Vocabulary, rng: &mut impl Rng) -> RpVector {
    let mut v = RpVector::all_pad();
    for p in RpName::ALL {
        let legal = vocab.legal_tokens(p);
        v.0[p.index()] = legal[rng.random_range(0..legal.len())];
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_covers_every_legal_pair_once() {
        let vocab = Vocabulary::default();
        let layout = HeadLayout::new(&vocab);
        let mut expected = 0;
        for p in RpName::ALL {
            let legal = vocab.legal_tokens(p);
            expected += legal.len();
            for t in legal {
                let c = layout.column(p, t).unwrap();
                assert_eq!(layout.token(c), t);
                let (s, l) = layout.segs[p.index()];
                assert!((s..s + l).contains(&c));
            }
        }
        assert_eq!(layout.width(), expected);
        assert_eq!(layout.column(RpName::Left, RpTokenId::PAD), None);
        assert_eq!(layout.column(RpName::Color, RpTokenId(5)), None);
    }
}
