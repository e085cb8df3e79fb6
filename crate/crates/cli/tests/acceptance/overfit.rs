//! Small-corpus training runs: VAE and AR overfits, FID sanity.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use webrpg_cli::dataset::{synth_samples, Sample};
use webrpg_cli::pipeline::{examples, ModelConfig};
use webrpg_cli::synth::SynthSpec;
use webrpg_core::rp::{ElementId, RpName, RpPage, RpVector, Vocabulary};
use webrpg_eval::{fid, page_iou, sc_score, FidClassifier, FidClassifierConfig};
use webrpg_models::ar::ArGenerator;
use webrpg_models::train::{train_ar, train_vae, TrainConfig};
use webrpg_models::vae::{standard_normal, uniform_vector, Vae};
use webrpg_nn::{Graph, OptimizerConfig, ParamStore, Tensor};

use crate::{ensure, s, Outcome};

fn train_cfg(steps: usize, batch: usize, seed: u64, lr: f64) -> TrainConfig {
    TrainConfig {
        steps,
        batch,
        seed,
        optimizer: OptimizerConfig {
            learning_rate: lr,
            ..OptimizerConfig::default()
        },
        log_every: 0,
    }
}

const VAE_TARGET: f64 = 0.99;
const VAE_MAX_STEPS: usize = 20_000;
const KL_TOL: f64 = 1e-9;

/// Worst per-parameter argmax reconstruction accuracy.
fn min_param_accuracy(store: &ParamStore<f32>, vae: &Vae, vectors: &[RpVector]) -> Result<(f64, RpName), String> {
    let decoded = vae.decode_argmax(store, &vae.encode_mean(store, vectors).map_err(s)?).map_err(s)?;
    let mut worst = (1.0, RpName::ALL[0]);
    for p in RpName::ALL {
        let hits = decoded.iter().zip(vectors).filter(|(a, b)| a[p] == b[p]).count();
        let acc = hits as f64 / vectors.len() as f64;
        if acc < worst.0 {
            worst = (acc, p);
        }
    }
    Ok(worst)
}

pub fn vae() -> Outcome {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let mu = g.constant(Tensor::zeros(16, 64));
    let logvar = g.constant(Tensor::zeros(16, 64));
    let kl = g.kl_normal(mu, logvar).map_err(s)?;
    let kl = g.value(kl).data()[0];
    ensure(kl.abs() < KL_TOL, || format!("KL of a standard normal posterior is {kl:e}"))?;

    let vocab = Vocabulary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vectors: Vec<RpVector> = (0..64).map(|_| uniform_vector(&vocab, &mut rng)).collect();
    let model = ModelConfig::desk(64);
    let mut store = ParamStore::<f32>::new();
    let vae = Vae::new(&mut store, &mut rng, "vae", &vocab, model.vae).map_err(s)?;
    let chunk = 250;
    let mut steps = 0;
    let mut worst = min_param_accuracy(&store, &vae, &vectors)?;
    while worst.0 < VAE_TARGET && steps < VAE_MAX_STEPS {
        train_vae(&mut store, &vae, &vectors, &train_cfg(chunk, 64, steps as u64, 1e-3)).map_err(s)?;
        steps += chunk;
        worst = min_param_accuracy(&store, &vae, &vectors)?;
    }
    ensure(worst.0 >= VAE_TARGET, || {
        format!("after {steps} steps the worst parameter ({:?}) is at {:.4}", worst.1, worst.0)
    })?;
    Ok(format!(
        "64 vectors reconstructed, worst parameter {:?} at {:.4} after {steps} steps (target {VAE_TARGET}); standard-normal KL {kl:e}",
        worst.1, worst.0
    ))
}

const AR_TARGET: f64 = 0.9;

fn reference(sample: &Sample) -> Result<&RpPage, String> {
    sample.page.rps().map_err(s)
}

pub fn ar() -> Outcome {
    let vocab = Vocabulary::default();
    let spec = SynthSpec {
        min_elements: 32,
        max_elements: 40,
        ..SynthSpec::default()
    };
    let samples = synth_samples(&spec, 8, 7, &vocab).map_err(s)?;
    let mut model = ModelConfig::desk(64);
    model.ar.enc_layers = 2;
    model.ar.dec_layers = 2;
    let ex = examples(&samples, &model).map_err(s)?;
    let mut store = ParamStore::<f32>::new();
    let mut init = ChaCha8Rng::seed_from_u64(0);
    let gen = ArGenerator::new(&mut store, &mut init, &vocab, model.embed, model.vae.clone(), model.ar).map_err(s)?;

    let (mut steps, mut iou, mut sc) = (0, 0.0, 0.0);
    for (round, chunk) in [400, 200, 200].into_iter().enumerate() {
        train_ar(&mut store, &gen, &ex, &train_cfg(chunk, 8, round as u64, 1e-3)).map_err(s)?;
        steps += chunk;
        (iou, sc) = (0.0, 0.0);
        for (sample, e) in samples.iter().zip(&ex) {
            let out = gen.generate(&store, &e.features).map_err(s)?;
            let page: RpPage = sample.page.elements.iter().map(|el| ElementId(el.id)).zip(out).collect();
            iou += page_iou(reference(sample)?, &page).map_err(s)?;
            sc += sc_score(reference(sample)?, &page).map_err(s)?;
        }
        (iou, sc) = (iou / samples.len() as f64, sc / samples.len() as f64);
        if iou >= AR_TARGET && sc >= AR_TARGET {
            break;
        }
    }
    ensure(iou >= AR_TARGET && sc >= AR_TARGET, || {
        format!("after {steps} steps Ele. IoU {iou:.4}, SC {sc:.4} (target {AR_TARGET})")
    })?;
    Ok(format!("8 pages regenerated after {steps} steps: Ele. IoU {iou:.4}, SC Score {sc:.4} (target {AR_TARGET})"))
}

const FID_SELF_TOL: f64 = 1e-6;
const FID_1D_TOL: f64 = 1e-9;
const CLASSIFIER_TARGET: f64 = 0.85;

fn fid_checks() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x: Vec<Vec<f64>> = standard_normal::<f64>(200, 16, &mut rng)
        .data()
        .chunks(16)
        .map(|r| r.to_vec())
        .collect();
    let same = fid(&x, &x).map_err(s)?;
    ensure(same < FID_SELF_TOL, || format!("fid(X, X) = {same:e}"))?;
    // equal variances, means one apart
    let one_d = fid(&[vec![-1.0], vec![1.0]], &[vec![0.0], vec![2.0]]).map_err(s)?;
    ensure((one_d - 1.0).abs() < FID_1D_TOL, || format!("1-D closed form gave {one_d}"))?;
    Ok(format!("fid(X, X) {same:.1e}; 1-D case {one_d:.9}"))
}

pub fn fid_suite() -> Outcome {
    let sanity = fid_checks()?;
    let vocab = Vocabulary::default();
    let spec = SynthSpec {
        min_elements: 8,
        max_elements: 24,
        ..SynthSpec::default()
    };
    let samples = synth_samples(&spec, 100, 11, &vocab).map_err(s)?;
    let model = ModelConfig::desk(64);
    let pages = examples(&samples, &model).map_err(s)?;
    let mut vae_store = ParamStore::<f32>::new();
    let vae = Vae::new(&mut vae_store, &mut ChaCha8Rng::seed_from_u64(1), "vae", &vocab, model.vae.clone()).map_err(s)?;
    let vectors: Vec<RpVector> = pages.iter().flat_map(|p| p.vectors.clone()).collect();
    train_vae(&mut vae_store, &vae, &vectors, &train_cfg(500, 64, 2, 1e-3)).map_err(s)?;

    let config = FidClassifierConfig {
        d: 64,
        ..FidClassifierConfig::default()
    };
    let mut store = ParamStore::new();
    let trained = FidClassifier::train(
        &mut store,
        config,
        model.embed,
        &vae_store,
        &vae,
        &vocab,
        &pages,
        &train_cfg(1000, 8, 3, 1e-3),
    )
    .map_err(s)?;
    let acc = trained.holdout_accuracy;
    ensure(acc >= CLASSIFIER_TARGET, || {
        format!("{sanity}; classifier held-out accuracy {acc:.4} (target {CLASSIFIER_TARGET})")
    })?;
    Ok(format!(
        "{sanity}; classifier held-out accuracy {acc:.4} on {} pages (target {CLASSIFIER_TARGET})",
        trained.holdout_pages
    ))
}
