//! Training, generation and evaluation steps shared by the binary and the
//! acceptance tests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use webrpg_core::html::Page;
use webrpg_core::rp::{ElementId, PadPolicy, RpPage, RpVector, Vocabulary};
use webrpg_eval::classifier::{ClassifierInput, FidClassifier, FidClassifierConfig, FidVariant};
use webrpg_eval::{fid, page_iou, sc_score};
use webrpg_models::ar::{ArConfig, ArGenerator};
use webrpg_models::data::PageExample;
use webrpg_models::dm::{DmConfig, DmGenerator};
use webrpg_models::embedding::{EmbedConfig, HashedBagEncoder, PrecomputedEncoder, SemanticEncoder, TagVocab};
use webrpg_models::train::{self, TrainConfig};
use webrpg_models::vae::{Vae, VaeConfig};
use webrpg_nn::{checkpoint, OptimizerConfig, ParamStore};

use crate::dataset::{load_samples, Sample, Split, MANIFEST};
use crate::{io_err, HarnessError, Result};

/// Where per-element semantic vectors come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SemanticSource {
    Hashed { dim: usize },
    /// JSONL records `{page_id, element_id, vector}`.
    Precomputed { path: PathBuf, dim: usize },
}

impl SemanticSource {
    pub fn dim(&self) -> usize {
        match self {
            SemanticSource::Hashed { dim } | SemanticSource::Precomputed { dim, .. } => *dim,
        }
    }

    pub fn encoder(&self) -> Result<Box<dyn SemanticEncoder>> {
        Ok(match self {
            SemanticSource::Hashed { dim } => Box::new(HashedBagEncoder { dim: *dim }),
            SemanticSource::Precomputed { path, dim } => {
                let enc = PrecomputedEncoder::from_jsonl(path)?;
                if enc.dim() != *dim {
                    return Err(HarnessError::Config(format!(
                        "{} holds {}-dim vectors, config says {dim}",
                        path.display(),
                        enc.dim()
                    )));
                }
                Box::new(enc)
            }
        })
    }
}

/// Architecture of every model in a run. The embedding, latent and
/// generator widths must agree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed: EmbedConfig,
    pub vae: VaeConfig,
    pub ar: ArConfig,
    pub dm: DmConfig,
    pub semantic: SemanticSource,
}

impl ModelConfig {
    /// Width `d` everywhere, 2+2 AR layers, 4 diffusion blocks over 100 steps.
    pub fn desk(d: usize) -> Self {
        let semantic = SemanticSource::Hashed { dim: d };
        ModelConfig {
            embed: EmbedConfig {
                d,
                d_sem: d,
                ..EmbedConfig::default()
            },
            vae: VaeConfig {
                latent: d,
                hidden: vec![256, 128, 128, d.max(64)],
                ..VaeConfig::default()
            },
            ar: ArConfig { d, ..ArConfig::default() },
            dm: DmConfig { d, ..DmConfig::default() },
            semantic,
        }
    }

    /// Published hyperparameters: width 128, 6+6 AR layers, a 12-layer
    /// diffusion backbone with 1000 steps.
    pub fn paper_scale() -> Self {
        ModelConfig {
            embed: EmbedConfig::default(),
            vae: VaeConfig::default(),
            ar: ArConfig::paper_scale(),
            dm: DmConfig::paper_scale(),
            semantic: SemanticSource::Hashed {
                dim: webrpg_models::embedding::D_SEM,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.embed.d;
        if self.vae.latent != d || self.ar.d != d || self.dm.d != d {
            return Err(HarnessError::Config(format!(
                "widths disagree: embed {d}, latent {}, ar {}, dm {}",
                self.vae.latent, self.ar.d, self.dm.d
            )));
        }
        if self.embed.d_sem != self.semantic.dim() {
            return Err(HarnessError::Config(format!(
                "embedder expects {}-dim semantic vectors, source gives {}",
                self.embed.d_sem,
                self.semantic.dim()
            )));
        }
        Ok(())
    }
}

/// 1M steps at batch 300 and learning rate 1.2e-4.
pub fn paper_scale_train(seed: u64) -> TrainConfig {
    TrainConfig {
        steps: 1_000_000,
        batch: 300,
        seed,
        optimizer: OptimizerConfig::default(),
        log_every: 1000,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Vae,
    Ar,
    Dm,
    Fid,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Vae => "vae",
            ModelKind::Ar => "ar",
            ModelKind::Dm => "dm",
            ModelKind::Fid => "fid",
        }
    }
}

/// Checkpoint sidecar: enough to rebuild the architecture before loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub kind: ModelKind,
    pub model: ModelConfig,
    pub pad_policy: PadPolicy,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<FidClassifierConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout_accuracy: Option<f64>,
}

impl CheckpointMeta {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_value(checkpoint::load_config(path)?)?)
    }

    fn save(&self, path: &Path, store: &ParamStore<f32>) -> Result<()> {
        checkpoint::save(path, store, &serde_json::to_value(self)?)?;
        Ok(())
    }

    fn expect(&self, kind: ModelKind, path: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(HarnessError::Config(format!(
                "{} is a {} checkpoint, expected {}",
                path.display(),
                self.kind.as_str(),
                kind.as_str()
            )));
        }
        Ok(())
    }
}

/// Training examples for `samples`, keyed by sample id.
pub fn examples(samples: &[Sample], model: &ModelConfig) -> Result<Vec<PageExample>> {
    let encoder = model.semantic.encoder()?;
    let tags = TagVocab::default();
    samples
        .iter()
        .map(|s| Ok(PageExample::from_page(&s.id, &s.page, encoder.as_ref(), &tags)?))
        .collect()
}

fn vocab_for(pad_policy: PadPolicy) -> Vocabulary {
    Vocabulary::default().with_pad_policy(pad_policy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub losses: Vec<f64>,
    pub checkpoint: PathBuf,
}

/// Fit the VAE on every element of the train split.
pub fn train_vae(dataset: &Path, out: &Path, model: &ModelConfig, cfg: &TrainConfig) -> Result<TrainSummary> {
    model.validate()?;
    let vocab = vocab_for(model.vae.pad_policy);
    let samples = load_samples(dataset, Some(Split::Train), &vocab)?;
    let vectors: Vec<RpVector> = samples
        .iter()
        .flat_map(|s| s.page.rps.as_ref().map(|r| r.vectors().copied().collect::<Vec<_>>()).unwrap_or_default())
        .collect();
    info!("training VAE on {} vectors from {} pages", vectors.len(), samples.len());
    let mut store = ParamStore::new();
    let vae = Vae::new(&mut store, &mut ChaCha8Rng::seed_from_u64(cfg.seed), "vae", &vocab, model.vae.clone())?;
    let losses = train::train_vae(&mut store, &vae, &vectors, cfg)?;
    info!(
        "VAE reconstruction accuracy on train vectors: {:.4}",
        vae.reconstruction_accuracy(&store, &vectors)?
    );
    let meta = CheckpointMeta {
        kind: ModelKind::Vae,
        model: model.clone(),
        pad_policy: model.vae.pad_policy,
        train: cfg.clone(),
        fid: None,
        final_loss: losses.last().copied(),
        holdout_accuracy: None,
    };
    meta.save(out, &store)?;
    Ok(TrainSummary {
        losses,
        checkpoint: out.to_path_buf(),
    })
}

/// A VAE rebuilt from its checkpoint.
pub fn load_vae(path: &Path) -> Result<(CheckpointMeta, ParamStore<f32>, Vae)> {
    let meta = CheckpointMeta::load(path)?;
    let mut store = ParamStore::new();
    let vocab = vocab_for(meta.pad_policy);
    let vae = match meta.kind {
        ModelKind::Vae | ModelKind::Fid => {
            let vae = Vae::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), "vae", &vocab, meta.model.vae.clone())?;
            checkpoint::load_into(path, &mut store)?;
            vae
        }
        ModelKind::Ar | ModelKind::Dm => {
            // the generator's own copy of the VAE
            let loaded = load_generator(path)?;
            let vae = loaded.generator.vae().clone();
            return Ok((loaded.meta, loaded.store, vae));
        }
    };
    Ok((meta, store, vae))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Ar(ArGenerator),
    Dm(DmGenerator),
}

impl Generator {
    pub fn vae(&self) -> &Vae {
        match self {
            Generator::Ar(g) => &g.vae,
            Generator::Dm(g) => &g.vae,
        }
    }

    fn build(kind: ModelKind, model: &ModelConfig, vocab: &Vocabulary, store: &mut ParamStore<f32>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match kind {
            ModelKind::Ar => Ok(Generator::Ar(ArGenerator::new(
                store,
                &mut rng,
                vocab,
                model.embed,
                model.vae.clone(),
                model.ar.clone(),
            )?)),
            ModelKind::Dm => Ok(Generator::Dm(DmGenerator::new(
                store,
                &mut rng,
                vocab,
                model.embed,
                model.vae.clone(),
                model.dm.clone(),
            )?)),
            other => Err(HarnessError::Config(format!("{} is not a generator", other.as_str()))),
        }
    }
}

/// Options of [`train_generator`] beyond the architecture.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GeneratorInit {
    /// Start the generator's VAE from this checkpoint.
    pub vae: Option<PathBuf>,
    /// Keep the VAE weights fixed during generator training.
    pub freeze_vae: bool,
}

pub fn train_generator(
    kind: ModelKind,
    dataset: &Path,
    out: &Path,
    model: &ModelConfig,
    cfg: &TrainConfig,
    init: &GeneratorInit,
) -> Result<TrainSummary> {
    model.validate()?;
    let vocab = vocab_for(model.vae.pad_policy);
    let samples = load_samples(dataset, Some(Split::Train), &vocab)?;
    let pages = examples(&samples, model)?;
    let mut store = ParamStore::new();
    let generator = Generator::build(kind, model, &vocab, &mut store, cfg.seed)?;
    if let Some(vae_path) = &init.vae {
        let (meta, vae_store, _) = load_vae(vae_path)?;
        if meta.model.vae != model.vae {
            return Err(HarnessError::Config(format!(
                "{} was trained with VAE config {:?}, this run uses {:?}",
                vae_path.display(),
                meta.model.vae,
                model.vae
            )));
        }
        let copied = store.copy_matching(&vae_store, |name| name.starts_with("vae.").then(|| name.to_string()));
        info!("initialized {copied} VAE tensors from {}", vae_path.display());
    }
    if init.freeze_vae {
        let ids: Vec<_> = store.ids().filter(|&id| store.name(id).starts_with("vae.")).collect();
        for id in ids {
            store.set_frozen(id, true);
        }
    }
    info!("training {} on {} pages", kind.as_str(), pages.len());
    let losses = match &generator {
        Generator::Ar(g) => train::train_ar(&mut store, g, &pages, cfg)?,
        Generator::Dm(g) => train::train_dm(&mut store, g, &pages, cfg)?,
    };
    let meta = CheckpointMeta {
        kind,
        model: model.clone(),
        pad_policy: model.vae.pad_policy,
        train: cfg.clone(),
        fid: None,
        final_loss: losses.last().copied(),
        holdout_accuracy: None,
    };
    meta.save(out, &store)?;
    Ok(TrainSummary {
        losses,
        checkpoint: out.to_path_buf(),
    })
}

#[derive(Debug)]
pub struct LoadedGenerator {
    pub meta: CheckpointMeta,
    pub store: ParamStore<f32>,
    pub generator: Generator,
}

pub fn load_generator(path: &Path) -> Result<LoadedGenerator> {
    let meta = CheckpointMeta::load(path)?;
    let mut store = ParamStore::new();
    let generator = Generator::build(meta.kind, &meta.model, &vocab_for(meta.pad_policy), &mut store, 0)?;
    checkpoint::load_into(path, &mut store)?;
    Ok(LoadedGenerator { meta, store, generator })
}

impl LoadedGenerator {
    pub fn vocab(&self) -> Vocabulary {
        vocab_for(self.meta.pad_policy)
    }

    /// RPs for `page`, keyed by its element ids. The autoregressive model
    /// decodes greedily and ignores `seed`.
    pub fn generate(&self, page_id: &str, page: &Page, seed: u64) -> Result<RpPage> {
        let encoder = self.meta.model.semantic.encoder()?;
        let features =
            webrpg_models::embedding::PageFeatures::from_page(page_id, page, encoder.as_ref(), &TagVocab::default())?;
        let vectors = match &self.generator {
            Generator::Ar(g) => g.generate(&self.store, &features)?,
            Generator::Dm(g) => g.sample(&self.store, &features, &mut ChaCha8Rng::seed_from_u64(seed))?,
        };
        Ok(page.elements.iter().map(|e| e.element_id()).zip(vectors).collect())
    }
}

/// Train one FID classifier per variant on the whole dataset and write
/// `fid-<variant>.ckpt` plus a copy of the VAE to `out_dir`.
pub fn train_fid(
    dataset: &Path,
    vae_path: &Path,
    out_dir: &Path,
    variants: &[FidVariant],
    base: &FidClassifierConfig,
    cfg: &TrainConfig,
) -> Result<Vec<(FidVariant, f64)>> {
    let (vae_meta, vae_store, vae) = load_vae(vae_path)?;
    let vocab = vocab_for(vae_meta.pad_policy);
    let samples = load_samples(dataset, None, &vocab)?;
    let pages = examples(&samples, &vae_meta.model)?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let vae_copy = CheckpointMeta {
        kind: ModelKind::Vae,
        fid: None,
        ..vae_meta.clone()
    };
    vae_copy.save(&out_dir.join("vae.ckpt"), &vae_store)?;
    let mut out = Vec::new();
    for &variant in variants {
        let config = FidClassifierConfig {
            variant,
            ..base.clone()
        };
        let mut store = ParamStore::new();
        let trained = FidClassifier::train(
            &mut store,
            config.clone(),
            vae_meta.model.embed,
            &vae_store,
            &vae,
            &vocab,
            &pages,
            cfg,
        )?;
        let meta = CheckpointMeta {
            kind: ModelKind::Fid,
            model: vae_meta.model.clone(),
            pad_policy: vae_meta.pad_policy,
            train: cfg.clone(),
            fid: Some(config),
            final_loss: trained.losses.last().copied(),
            holdout_accuracy: Some(trained.holdout_accuracy),
        };
        meta.save(&out_dir.join(format!("fid-{}.ckpt", variant.as_str())), &store)?;
        out.push((variant, trained.holdout_accuracy));
    }
    Ok(out)
}

/// The classifiers and VAE written by [`train_fid`].
pub struct FidModels {
    pub model: ModelConfig,
    pub vae_store: ParamStore<f32>,
    pub vae: Vae,
    pub classifiers: BTreeMap<&'static str, (ParamStore<f32>, FidClassifier)>,
}

pub fn load_fid_models(dir: &Path) -> Result<FidModels> {
    let (meta, vae_store, vae) = load_vae(&dir.join("vae.ckpt"))?;
    let mut classifiers = BTreeMap::new();
    for variant in FidVariant::ALL {
        let path = dir.join(format!("fid-{}.ckpt", variant.as_str()));
        if !path.exists() {
            continue;
        }
        let m = CheckpointMeta::load(&path)?;
        m.expect(ModelKind::Fid, &path)?;
        let config = m
            .fid
            .clone()
            .ok_or_else(|| HarnessError::Config(format!("{} has no classifier config", path.display())))?;
        let mut store = ParamStore::new();
        let clf = FidClassifier::new(&mut store, &mut ChaCha8Rng::seed_from_u64(0), config, m.model.embed, vae.latent())?;
        checkpoint::load_into(&path, &mut store)?;
        classifiers.insert(variant.as_str(), (store, clf));
    }
    Ok(FidModels {
        model: meta.model,
        vae_store,
        vae,
        classifiers,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Metric {
    Fid,
    FidLayout,
    FidStyle,
    Iou,
    Sc,
}

impl Metric {
    pub fn parse_list(s: &str) -> Result<Vec<Metric>> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            out.push(match part {
                "fid" => Metric::Fid,
                "fid-layout" => Metric::FidLayout,
                "fid-style" => Metric::FidStyle,
                "iou" => Metric::Iou,
                "sc" => Metric::Sc,
                other => return Err(HarnessError::Config(format!("unknown metric {other:?}"))),
            });
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    fn variant(self) -> Option<FidVariant> {
        match self {
            Metric::Fid => Some(FidVariant::Overall),
            Metric::FidLayout => Some(FidVariant::Layout),
            Metric::FidStyle => Some(FidVariant::Style),
            _ => None,
        }
    }
}

/// Metric report; absent metrics are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub fid: Option<f64>,
    pub fid_layout: Option<f64>,
    pub fid_style: Option<f64>,
    pub ele_iou: Option<f64>,
    pub sc_score: Option<f64>,
    pub pages: usize,
}

/// A page to score: its RPs, and its structure when known.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalPage {
    pub id: String,
    pub page: Option<Page>,
    pub rps: RpPage,
}

/// Pages of a dataset directory (filtered by `split`) or of a directory of
/// Page JSON / RP-JSON files named `<id>.json`.
pub fn load_eval_dir(dir: &Path, split: Option<Split>, vocab: &Vocabulary) -> Result<Vec<EvalPage>> {
    if dir.join(MANIFEST).exists() {
        return Ok(load_samples(dir, split, vocab)?
            .into_iter()
            .map(|s| EvalPage {
                id: s.id,
                rps: s.page.rps.clone().unwrap_or_default(),
                page: Some(s.page),
            })
            .collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|path| {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let value: serde_json::Value = serde_json::from_str(&text)?;
            if value.get("elements").is_some() {
                let page = Page::from_json(&text, vocab)?;
                let rps = page.rps()?.clone();
                Ok(EvalPage {
                    id,
                    page: Some(page),
                    rps,
                })
            } else {
                Ok(EvalPage {
                    id,
                    page: None,
                    rps: vocab.from_json_value(&value, false)?,
                })
            }
        })
        .collect()
}

/// Score every generated page against the real page with the same id.
pub fn evaluate(real: &[EvalPage], gen: &[EvalPage], metrics: &[Metric], fid_models: Option<&FidModels>) -> Result<EvalReport> {
    let by_id: BTreeMap<&str, &EvalPage> = real.iter().map(|p| (p.id.as_str(), p)).collect();
    let mut pairs = Vec::with_capacity(gen.len());
    for g in gen {
        let r = by_id
            .get(g.id.as_str())
            .ok_or_else(|| HarnessError::Config(format!("generated page {} has no real counterpart", g.id)))?;
        pairs.push((*r, g));
    }
    if pairs.is_empty() {
        return Err(HarnessError::Config("no pages to evaluate".into()));
    }
    let mean = |f: &dyn Fn(&RpPage, &RpPage) -> webrpg_eval::Result<f64>| -> Result<f64> {
        let mut total = 0.0;
        for (r, g) in &pairs {
            total += f(&r.rps, &g.rps)?;
        }
        Ok(total / pairs.len() as f64)
    };
    let mut report = EvalReport {
        fid: None,
        fid_layout: None,
        fid_style: None,
        ele_iou: None,
        sc_score: None,
        pages: pairs.len(),
    };
    for &m in metrics {
        match m {
            Metric::Iou => report.ele_iou = Some(mean(&page_iou)?),
            Metric::Sc => report.sc_score = Some(mean(&sc_score)?),
            _ => {
                let variant = m.variant().expect("fid metric");
                let models = fid_models
                    .ok_or_else(|| HarnessError::Config("FID metrics need --fid-dir".into()))?;
                let value = fid_for(models, variant, &pairs)?;
                match variant {
                    FidVariant::Overall => report.fid = Some(value),
                    FidVariant::Layout => report.fid_layout = Some(value),
                    FidVariant::Style => report.fid_style = Some(value),
                }
            }
        }
    }
    Ok(report)
}

fn fid_for(models: &FidModels, variant: FidVariant, pairs: &[(&EvalPage, &EvalPage)]) -> Result<f64> {
    let (store, clf) = models
        .classifiers
        .get(variant.as_str())
        .ok_or_else(|| HarnessError::Config(format!("no {} classifier in the FID directory", variant.as_str())))?;
    let encoder = models.model.semantic.encoder()?;
    let tags = TagVocab::default();
    let mut real_in: Vec<ClassifierInput> = Vec::with_capacity(pairs.len());
    let mut gen_in: Vec<ClassifierInput> = Vec::with_capacity(pairs.len());
    for (r, g) in pairs {
        let page = r
            .page
            .as_ref()
            .ok_or_else(|| HarnessError::Config(format!("FID needs the page structure of {}", r.id)))?;
        let features = webrpg_models::embedding::PageFeatures::from_page(&r.id, page, encoder.as_ref(), &tags)?;
        let ordered = |rps: &RpPage| -> Result<Vec<RpVector>> {
            page.elements
                .iter()
                .map(|e| {
                    rps.get(e.element_id())
                        .copied()
                        .ok_or(HarnessError::Eval(webrpg_eval::EvalError::IdMismatch(ElementId(e.id))))
                })
                .collect()
        };
        real_in.push(clf.prepare(&models.vae_store, &models.vae, &features, &ordered(&r.rps)?)?);
        gen_in.push(clf.prepare(&models.vae_store, &models.vae, &features, &ordered(&g.rps)?)?);
    }
    let a = clf.features(store, &real_in)?;
    let b = clf.features(store, &gen_in)?;
    Ok(fid(&a, &b)?)
}
