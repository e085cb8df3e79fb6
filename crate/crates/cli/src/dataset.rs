//! Dataset directories: filtered, split samples plus a manifest.
//!
//! ```text
//! DIR/manifest.json
//! DIR/pages/<id>.json   Page JSON without RPs
//! DIR/rps/<id>.json     RP-JSON
//! DIR/html/<id>.html    numbered source HTML
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use webrpg_core::html::{clean_subpage, extract_subpages, normalize_layout, parse_html_bytes, Page, TagAllowList};
use webrpg_core::rp::{Vocabulary, VOCAB_VERSION};
use webrpg_core::vc::{passes_filter, vc_total};

use crate::synth::{synth_page, SynthSpec};
use crate::{io_err, HarnessError, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    /// Paths relative to the manifest's directory.
    pub page: String,
    pub rps: String,
    pub html: String,
    pub split: Split,
    pub vc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub vocab_version: String,
    pub vc_threshold: f64,
    pub split_ratio: f64,
    pub seed: u64,
    pub source: String,
    pub samples: Vec<SampleEntry>,
}

impl DatasetManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn split(&self, split: Option<Split>) -> impl Iterator<Item = &SampleEntry> {
        self.samples.iter().filter(move |s| split.is_none_or(|x| s.split == x))
    }
}

/// A loaded sample with its RPs attached.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub page: Page,
}

/// Read the pages of `split` (all when `None`) in manifest order.
pub fn load_samples(dir: &Path, split: Option<Split>, vocab: &Vocabulary) -> Result<Vec<Sample>> {
    let manifest = DatasetManifest::load(dir)?;
    manifest
        .split(split)
        .map(|e| {
            let page_path = dir.join(&e.page);
            let rps_path = dir.join(&e.rps);
            let page = Page::from_json(&fs::read_to_string(&page_path).map_err(io_err(&page_path))?, vocab)?;
            let rps = vocab.from_json(&fs::read_to_string(&rps_path).map_err(io_err(&rps_path))?)?;
            Ok(Sample {
                id: e.id.clone(),
                page: page.with_rps(rps)?,
            })
        })
        .collect()
}

/// Parameters of [`build_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub vc_threshold: f64,
    /// Fraction of samples in the train split.
    pub split: f64,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            vc_threshold: webrpg_core::vc::DEFAULT_VC_THRESHOLD,
            split: 0.8,
            seed: 0,
        }
    }
}

/// Filter `candidates` by VC, split them and write the dataset to `out`.
pub fn build_dataset(
    candidates: Vec<Sample>,
    source: &str,
    opts: &BuildOptions,
    vocab: &Vocabulary,
    out: &Path,
) -> Result<DatasetManifest> {
    if !(0.0..=1.0).contains(&opts.split) {
        return Err(HarnessError::Config(format!("split {} outside [0, 1]", opts.split)));
    }
    let total = candidates.len();
    let mut kept = Vec::new();
    for s in candidates {
        match vc_total(&s.page) {
            Ok(r) if passes_filter(&r, opts.vc_threshold) => kept.push((s, r.vc_total)),
            Ok(r) => info!("dropping {} (vc {:.4})", s.id, r.vc_total),
            Err(e) => warn!("dropping {}: {e}", s.id),
        }
    }
    if kept.is_empty() {
        return Err(HarnessError::EmptyAfterFilter {
            threshold: opts.vc_threshold,
            total,
        });
    }
    kept.sort_by(|a, b| a.0.id.cmp(&b.0.id));
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));
    let n_train = (opts.split * kept.len() as f64).round() as usize;
    let mut split = vec![Split::Test; kept.len()];
    for &i in &order[..n_train] {
        split[i] = Split::Train;
    }

    for sub in ["pages", "rps", "html"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let mut samples = Vec::with_capacity(kept.len());
    for ((s, vc), split) in kept.into_iter().zip(split) {
        let entry = SampleEntry {
            page: format!("pages/{}.json", s.id),
            rps: format!("rps/{}.json", s.id),
            html: format!("html/{}.html", s.id),
            id: s.id,
            split,
            vc,
        };
        let bare = Page {
            rps: None,
            ..s.page.clone()
        };
        write(&out.join(&entry.page), &bare.to_json(vocab)?)?;
        write(&out.join(&entry.rps), &vocab.to_json(s.page.rps()?)?)?;
        write(&out.join(&entry.html), &s.page.source_html)?;
        samples.push(entry);
    }
    let manifest = DatasetManifest {
        vocab_version: VOCAB_VERSION.to_string(),
        vc_threshold: opts.vc_threshold,
        split_ratio: opts.split,
        seed: opts.seed,
        source: source.to_string(),
        samples,
    };
    write(&out.join(MANIFEST), &serde_json::to_string_pretty(&manifest)?)?;
    info!(
        "wrote {} samples ({} train) of {total} candidates to {}",
        manifest.samples.len(),
        n_train,
        out.display()
    );
    Ok(manifest)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

/// `count` synthetic pages; page `i` uses the `i`-th draw of a generator
/// seeded with `seed`.
pub fn synth_samples(spec: &SynthSpec, count: usize, seed: u64, vocab: &Vocabulary) -> Result<Vec<Sample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (html, rps) = synth_page(spec, rng.next_u64(), vocab)?;
            Ok(Sample {
                id: format!("synth-{i:05}"),
                page: Page::from_html(&html)?.with_rps(rps)?,
            })
        })
        .collect()
}

/// Sub-pages of every `<name>.html` in `dir` that has an RP-JSON sibling
/// `<name>.json` keyed by the document's own pre-order ids.
pub fn ingest_samples(
    dir: &Path,
    min_el: usize,
    max_el: usize,
    allow: &TagAllowList,
    vocab: &Vocabulary,
) -> Result<Vec<Sample>> {
    let mut htmls: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "html"))
        .collect();
    htmls.sort();
    let mut out = Vec::new();
    for path in htmls {
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let json = path.with_extension("json");
        if !json.exists() {
            warn!("skipping {}: no {}", path.display(), json.display());
            continue;
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let mut tree = parse_html_bytes(&bytes)?;
        // numbering the whole document tags every node with its source id
        let _ = Page::from_tree(&mut tree);
        let full = vocab.from_json_snapped(&fs::read_to_string(&json).map_err(io_err(&json))?)?;
        for (k, sub) in extract_subpages(&tree, min_el, max_el).into_iter().enumerate() {
            let id = format!("{stem}-{k:03}");
            let rps = match sub.remap_rps(&full) {
                Ok(r) => r,
                Err(e) => {
                    warn!("skipping {id}: {e}");
                    continue;
                }
            };
            let cleaned = clean_subpage(&sub.with_rps(rps)?, allow)?;
            if !(min_el..=max_el).contains(&cleaned.len()) {
                info!("skipping {id}: {} elements after cleaning", cleaned.len());
                continue;
            }
            match normalize_layout(&cleaned) {
                Ok(page) => out.push(Sample { id, page }),
                Err(e) => warn!("skipping {id}: {e}"),
            }
        }
    }
    Ok(out)
}
