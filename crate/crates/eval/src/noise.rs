//! Polluting real vectors to make negatives for the FID classifier.
//!
//! `intensity` in `[0, 1]` scales every knob; at 0 the input comes back
//! unchanged.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use webrpg_core::rp::{RpName, RpVector, Vocabulary, PIXEL_RANGE};
use webrpg_models::vae::uniform_vector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Std-dev of the pixel jitter.
    pub sigma_px: f64,
    /// Probability of re-drawing each categorical slot.
    pub redraw_p: f64,
    /// Fraction of elements replaced by synthetic vectors.
    pub substitute_frac: f64,
    /// Swapped pairs per element.
    pub swap_frac: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_px: 20.0,
            redraw_p: 0.15,
            substitute_frac: 0.15,
            swap_frac: 0.1,
        }
    }
}

fn intensity_clamp(x: f64) -> f64 {
    if x.is_finite() {
        x.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

fn count(frac: f64, intensity: f64, n: usize) -> usize {
    ((frac * intensity_clamp(intensity) * n as f64).round() as usize).min(n)
}

/// Gaussian jitter on pixel values (clamped to the parameter's range and
/// rounded), categorical re-draws elsewhere. Non-pixel tokens of pixel
/// parameters (`line-height: normal`, PAD) are treated as categorical.
pub fn perturb_values(
    vectors: &[RpVector],
    intensity: f64,
    cfg: &NoiseConfig,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Vec<RpVector> {
    let intensity = intensity_clamp(intensity);
    if intensity == 0.0 {
        return vectors.to_vec();
    }
    let sigma = cfg.sigma_px * intensity;
    let p = (cfg.redraw_p * intensity).clamp(0.0, 1.0);
    let jitter = Normal::new(0.0, sigma.max(0.0)).expect("finite std-dev");
    let legal: Vec<_> = RpName::ALL.iter().map(|&n| vocab.legal_tokens(n)).collect();
    vectors
        .iter()
        .map(|v| {
            let mut out = *v;
            for name in RpName::ALL {
                let t = v[name];
                match name.max_pixels() {
                    Some(max) if t.0 <= max && PIXEL_RANGE.contains(&t.0) => {
                        let moved = (t.0 as f64 + jitter.sample(rng)).round().clamp(0.0, max as f64);
                        out[name].0 = moved as u16;
                    }
                    _ => {
                        if rng.random_bool(p) {
                            let options = &legal[name.index()];
                            out[name] = options[rng.random_range(0..options.len())];
                        }
                    }
                }
            }
            out
        })
        .collect()
}

/// Replace a fraction of the elements with uniformly drawn legal vectors.
pub fn substitute_elements(
    vectors: &[RpVector],
    intensity: f64,
    cfg: &NoiseConfig,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Vec<RpVector> {
    let k = count(cfg.substitute_frac, intensity, vectors.len());
    let mut out = vectors.to_vec();
    for i in sample(rng, vectors.len(), k) {
        out[i] = uniform_vector(vocab, rng);
    }
    out
}

/// Exchange the vectors of random disjoint pairs. Returns the result and
/// the pairs.
pub fn swap_elements(
    vectors: &[RpVector],
    intensity: f64,
    cfg: &NoiseConfig,
    rng: &mut impl Rng,
) -> (Vec<RpVector>, Vec<(usize, usize)>) {
    let n = vectors.len();
    let k = count(cfg.swap_frac, intensity, n).min(n / 2);
    let idx = sample(rng, n, 2 * k).into_vec();
    let pairs: Vec<(usize, usize)> = idx.chunks(2).map(|c| (c[0], c[1])).collect();
    (apply_swaps(vectors, &pairs), pairs)
}

/// Apply `pairs` in order. For disjoint pairs, applying the same list
/// twice is the identity.
pub fn apply_swaps(vectors: &[RpVector], pairs: &[(usize, usize)]) -> Vec<RpVector> {
    let mut out = vectors.to_vec();
    for &(a, b) in pairs {
        out.swap(a, b);
    }
    out
}

/// All three noisers in sequence: perturb, substitute, swap.
pub fn pollute(
    vectors: &[RpVector],
    intensity: f64,
    cfg: &NoiseConfig,
    vocab: &Vocabulary,
    rng: &mut impl Rng,
) -> Vec<RpVector> {
    let v = perturb_values(vectors, intensity, cfg, vocab, rng);
    let v = substitute_elements(&v, intensity, cfg, vocab, rng);
    swap_elements(&v, intensity, cfg, rng).0
}
