//! Per-element HTML embedding: a projected semantic vector plus a projected
//! XPath embedding plus a projected character-count embedding.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use webrpg_core::html::{parse_xpath, Element, Page, TagAllowList};
use webrpg_nn::layers::Linear;
use webrpg_nn::{Graph, ParamId, ParamStore, Real, Tensor, Var};

use crate::{ModelError, Result};

/// Width of the default semantic vectors.
pub const D_SEM: usize = 128;
/// XPath steps with their own embedding slot.
pub const XPATH_DEPTH: usize = 50;
/// Largest distinguished sibling ordinal; larger ordinals share it.
pub const MAX_SUBSCRIPT: usize = 256;
/// Slots per XPath: one per depth plus an overflow slot.
pub const XPATH_SLOTS: usize = XPATH_DEPTH + 1;
/// Character counts below this get their own bucket.
const EXACT_CHARS: usize = 32;
/// Counts at or above this share the top bucket.
pub const CHAR_CAP: usize = 512;
pub const CHAR_BUCKETS: usize = EXACT_CHARS + 5;

/// Maps an element's content to a fixed-width vector.
pub trait SemanticEncoder {
    fn dim(&self) -> usize;

    fn encode(&self, page_id: &str, element: &Element) -> Result<Vec<f32>>;
}

/// Mean of signed hashed one-hots over the element's text and attribute
/// value tokens. Elements without any such token map to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBagEncoder {
    pub dim: usize,
}

impl Default for HashedBagEncoder {
    fn default() -> Self {
        HashedBagEncoder { dim: D_SEM }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Lowercased alphanumeric runs of the element's text and attribute values.
pub fn content_tokens(element: &Element) -> Vec<String> {
    let mut out = Vec::new();
    let sources = std::iter::once(element.text.as_str()).chain(element.attrs.iter().map(|(_, v)| v.as_str()));
    for s in sources {
        out.extend(
            s.split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .map(str::to_lowercase),
        );
    }
    out
}

impl SemanticEncoder for HashedBagEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, _page_id: &str, element: &Element) -> Result<Vec<f32>> {
        let mut v = vec![0.0f32; self.dim];
        let tokens = content_tokens(element);
        if tokens.is_empty() {
            return Ok(v);
        }
        for t in &tokens {
            let h = fnv1a(t.as_bytes());
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[(h % self.dim as u64) as usize] += sign;
        }
        let n = tokens.len() as f32;
        v.iter_mut().for_each(|x| *x /= n);
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PrecomputedLine {
    page_id: String,
    element_id: u32,
    vector: Vec<f32>,
}

/// Vectors read from a JSON-lines file of `{page_id, element_id, vector}`.
#[derive(Debug, Clone, Default)]
pub struct PrecomputedEncoder {
    dim: usize,
    vectors: HashMap<(String, u32), Vec<f32>>,
}

impl PrecomputedEncoder {
    pub fn from_jsonl(path: &Path) -> Result<Self> {
        let reader = BufReader::new(fs::File::open(path)?);
        let mut enc = PrecomputedEncoder::default();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: PrecomputedLine = serde_json::from_str(&line)?;
            enc.insert(rec.page_id, rec.element_id, rec.vector)
                .map_err(|e| ModelError::EncoderFailure(format!("line {}: {e}", n + 1)))?;
        }
        if enc.vectors.is_empty() {
            return Err(ModelError::EncoderFailure(format!("{} holds no vectors", path.display())));
        }
        Ok(enc)
    }

    pub fn insert(&mut self, page_id: String, element_id: u32, vector: Vec<f32>) -> Result<()> {
        if self.vectors.is_empty() {
            self.dim = vector.len();
        }
        if vector.len() != self.dim || self.dim == 0 {
            return Err(ModelError::EncoderFailure(format!(
                "vector width {} differs from {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::EncoderFailure("non-finite vector".into()));
        }
        self.vectors.insert((page_id, element_id), vector);
        Ok(())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut keys: Vec<_> = self.vectors.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let line = PrecomputedLine {
                page_id: k.0.clone(),
                element_id: k.1,
                vector: self.vectors[k].clone(),
            };
            out.push_str(&serde_json::to_string(&line)?);
            out.push('\n');
        }
        fs::write(path, out)?;
        Ok(())
    }
}

impl SemanticEncoder for PrecomputedEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, page_id: &str, element: &Element) -> Result<Vec<f32>> {
        self.vectors
            .get(&(page_id.to_string(), element.id))
            .cloned()
            .ok_or_else(|| ModelError::EncoderFailure(format!("no vector for {page_id}/ele{}", element.id)))
    }
}

/// Tag ids for the XPath embedding: PAD, UNK, OVERFLOW, then the allow-list
/// in sorted order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagVocab {
    tags: Vec<String>,
}

impl TagVocab {
    pub const PAD: usize = 0;
    pub const UNK: usize = 1;
    pub const OVERFLOW: usize = 2;
    const RESERVED: usize = 3;

    pub fn new(allow: &TagAllowList) -> Self {
        TagVocab {
            tags: allow.tags().map(str::to_string).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tags.len() + Self::RESERVED
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, tag: &str) -> usize {
        match self.tags.binary_search_by(|t| t.as_str().cmp(tag)) {
            Ok(i) => i + Self::RESERVED,
            Err(_) => Self::UNK,
        }
    }
}

impl Default for TagVocab {
    fn default() -> Self {
        TagVocab::new(&TagAllowList::default())
    }
}

/// Bucket of a character count: exact below 32, then one bucket per power
/// of two, with everything from 512 up in the last.
pub fn char_bucket(k: usize) -> usize {
    if k < EXACT_CHARS {
        k
    } else if k >= CHAR_CAP {
        CHAR_BUCKETS - 1
    } else {
        // 32..64 -> 32, 64..128 -> 33, ...
        EXACT_CHARS + (k.ilog2() as usize - EXACT_CHARS.ilog2() as usize)
    }
}

/// Per-slot `(tag id, subscript)` of an XPath. Slot `i < 50` holds step `i`
/// or PAD; the last slot flags paths deeper than 50.
pub fn xpath_slots(xpath: &str, tags: &TagVocab) -> [(usize, usize); XPATH_SLOTS] {
    let mut slots = [(TagVocab::PAD, 0); XPATH_SLOTS];
    let steps = parse_xpath(xpath).unwrap_or_default();
    for (i, step) in steps.iter().take(XPATH_DEPTH).enumerate() {
        slots[i] = (tags.id(&step.tag), step.ordinal.min(MAX_SUBSCRIPT));
    }
    if steps.len() > XPATH_DEPTH {
        slots[XPATH_DEPTH] = (TagVocab::OVERFLOW, 0);
    }
    slots
}

/// Precomputed embedding inputs of a sequence of elements (one page, or
/// several pages packed back to back).
#[derive(Debug, Clone, PartialEq)]
pub struct PageFeatures {
    pub d_sem: usize,
    /// `len x d_sem`, row-major.
    pub sem: Vec<f32>,
    /// `len x XPATH_SLOTS` rows of the tag table.
    pub tag_rows: Vec<usize>,
    /// `len x XPATH_SLOTS` rows of the subscript table.
    pub sub_rows: Vec<usize>,
    pub char_buckets: Vec<usize>,
}

impl PageFeatures {
    /// Features of every element of `page`, in pre-order.
    pub fn from_page(page_id: &str, page: &Page, encoder: &dyn SemanticEncoder, tags: &TagVocab) -> Result<Self> {
        let mut f = PageFeatures {
            d_sem: encoder.dim(),
            sem: Vec::with_capacity(page.len() * encoder.dim()),
            tag_rows: Vec::with_capacity(page.len() * XPATH_SLOTS),
            sub_rows: Vec::with_capacity(page.len() * XPATH_SLOTS),
            char_buckets: Vec::with_capacity(page.len()),
        };
        for el in &page.elements {
            let v = encoder.encode(page_id, el)?;
            if v.len() != f.d_sem {
                return Err(ModelError::EncoderFailure(format!(
                    "encoder returned {} values, expected {}",
                    v.len(),
                    f.d_sem
                )));
            }
            f.sem.extend(v);
            for (slot, (tag, sub)) in xpath_slots(&el.xpath, tags).into_iter().enumerate() {
                f.tag_rows.push(slot * tags.len() + tag);
                f.sub_rows.push(slot * (MAX_SUBSCRIPT + 1) + sub);
            }
            f.char_buckets.push(char_bucket(el.char_count));
        }
        Ok(f)
    }

    pub fn len(&self) -> usize {
        self.char_buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.char_buckets.is_empty()
    }

    /// Rows `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> PageFeatures {
        let s = XPATH_SLOTS;
        PageFeatures {
            d_sem: self.d_sem,
            sem: self.sem[start * self.d_sem..(start + len) * self.d_sem].to_vec(),
            tag_rows: self.tag_rows[start * s..(start + len) * s].to_vec(),
            sub_rows: self.sub_rows[start * s..(start + len) * s].to_vec(),
            char_buckets: self.char_buckets[start..start + len].to_vec(),
        }
    }

    /// Pack several feature sets back to back.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a PageFeatures>) -> PageFeatures {
        let mut out: Option<PageFeatures> = None;
        for p in parts {
            match &mut out {
                None => out = Some(p.clone()),
                Some(o) => {
                    assert_eq!(o.d_sem, p.d_sem, "semantic widths differ");
                    o.sem.extend_from_slice(&p.sem);
                    o.tag_rows.extend_from_slice(&p.tag_rows);
                    o.sub_rows.extend_from_slice(&p.sub_rows);
                    o.char_buckets.extend_from_slice(&p.char_buckets);
                }
            }
        }
        out.unwrap_or(PageFeatures {
            d_sem: D_SEM,
            sem: Vec::new(),
            tag_rows: Vec::new(),
            sub_rows: Vec::new(),
            char_buckets: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedConfig {
    pub d: usize,
    pub d_sem: usize,
    pub tag_count: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            d: crate::D_MODEL,
            d_sem: D_SEM,
            tag_count: TagVocab::default().len(),
        }
    }
}

/// Learned part of the HTML embedding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HtmlEmbedder {
    pub config: EmbedConfig,
    pub tag_table: ParamId,
    pub sub_table: ParamId,
    pub char_table: ParamId,
    pub sem_proj: Linear,
    pub hier_proj: Linear,
    pub char_proj: Linear,
}

impl HtmlEmbedder {
    pub fn new<T: Real>(store: &mut ParamStore<T>, rng: &mut impl Rng, name: &str, config: EmbedConfig) -> Self {
        let d = config.d;
        HtmlEmbedder {
            config,
            tag_table: store.randn(format!("{name}.xpath_tag"), XPATH_SLOTS * config.tag_count, d, 0.05, rng),
            sub_table: store.randn(format!("{name}.xpath_sub"), XPATH_SLOTS * (MAX_SUBSCRIPT + 1), d, 0.05, rng),
            char_table: store.randn(format!("{name}.char"), CHAR_BUCKETS, d, 1.0, rng),
            sem_proj: Linear::new(store, rng, &format!("{name}.sem_proj"), config.d_sem, d),
            hier_proj: Linear::new(store, rng, &format!("{name}.hier_proj"), d, d),
            char_proj: Linear::new(store, rng, &format!("{name}.char_proj"), d, d),
        }
    }

    /// XPath embedding: per-slot tag plus per-slot subscript rows, summed.
    pub fn xpath_embed<T: Real>(&self, g: &mut Graph<T>, f: &PageFeatures) -> Result<Var> {
        let tags = g.param(self.tag_table);
        let subs = g.param(self.sub_table);
        let a = g.embedding_bag(tags, f.tag_rows.clone(), XPATH_SLOTS)?;
        let b = g.embedding_bag(subs, f.sub_rows.clone(), XPATH_SLOTS)?;
        Ok(g.add(a, b)?)
    }

    pub fn charcount_embed<T: Real>(&self, g: &mut Graph<T>, f: &PageFeatures) -> Result<Var> {
        let t = g.param(self.char_table);
        Ok(g.gather_rows(t, f.char_buckets.clone())?)
    }

    pub fn semantic_input<T: Real>(&self, g: &mut Graph<T>, f: &PageFeatures) -> Result<Var> {
        if f.d_sem != self.config.d_sem {
            return Err(ModelError::BadConfig(format!(
                "semantic width {} but embedder expects {}",
                f.d_sem, self.config.d_sem
            )));
        }
        let sem: Vec<f64> = f.sem.iter().map(|&x| x as f64).collect();
        Ok(g.constant(Tensor::from_f64(f.len(), f.d_sem, &sem)))
    }

    /// `H = sem_proj(sem) + hier_proj(xpath) + char_proj(chars)`, one row
    /// per element.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, f: &PageFeatures) -> Result<Var> {
        if f.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        let sem = self.semantic_input(g, f)?;
        let sem = self.sem_proj.forward(g, sem)?;
        let hier = self.xpath_embed(g, f)?;
        let hier = self.hier_proj.forward(g, hier)?;
        let chars = self.charcount_embed(g, f)?;
        let chars = self.char_proj.forward(g, chars)?;
        let h = g.add(sem, hier)?;
        Ok(g.add(h, chars)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn char_buckets_follow_powers_of_two() {
        assert_eq!(char_bucket(0), 0);
        assert_eq!(char_bucket(31), 31);
        assert_eq!(char_bucket(32), 32);
        assert_eq!(char_bucket(63), 32);
        assert_eq!(char_bucket(64), 33);
        assert_eq!(char_bucket(511), 35);
        assert_eq!(char_bucket(512), 36);
        assert_eq!(char_bucket(600), CHAR_BUCKETS - 1);
    }

    #[test]
    fn xpath_slots_cap_depth_and_subscript() {
        let tags = TagVocab::default();
        let s = xpath_slots("/html[1]/body[1]/div[300]/blink[2]", &tags);
        assert_eq!(s[0], (tags.id("html"), 1));
        assert_eq!(s[2], (tags.id("div"), MAX_SUBSCRIPT));
        assert_eq!(s[3], (TagVocab::UNK, 2));
        assert_eq!(s[4], (TagVocab::PAD, 0));
        assert_eq!(s[XPATH_DEPTH], (TagVocab::PAD, 0));

        let deep = "/div[1]".repeat(60);
        let s = xpath_slots(&deep, &tags);
        assert_eq!(s[XPATH_DEPTH - 1], (tags.id("div"), 1));
        assert_eq!(s[XPATH_DEPTH], (TagVocab::OVERFLOW, 0));
    }

    #[test]
    fn hashed_encoder_is_mean_pooled() {
        let el = Element {
            id: 1,
            tag: "p".into(),
            xpath: "/p[1]".into(),
            char_count: 9,
            depth: 0,
            parent_id: None,
            text: "Hello hello".into(),
            attrs: vec![],
            source_id: None,
        };
        let v = HashedBagEncoder::default().encode("p", &el).unwrap();
        // both tokens lowercase to the same hash bucket
        let nz: Vec<f32> = v.iter().copied().filter(|&x| x != 0.0).collect();
        assert_eq!(nz.len(), 1);
        assert_eq!(nz[0].abs(), 1.0);
    }
}
