//! Synthetic pages: a header, a list and a grid of cards, laid out on a
//! pixel grid with a few shared styles.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use webrpg_core::html::Page;
use webrpg_core::rp::{ElementId, Keyword, RpName, RpPage, RpValue, RpVector, Vocabulary, MAX_LINE_HEIGHT, MAX_PIXEL};

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub min_elements: usize,
    pub max_elements: usize,
    /// Cards per grid row, at most.
    pub max_columns: usize,
    pub page_width: u16,
    pub style_groups: usize,
    /// Palette ids colors are drawn from.
    pub palette: Vec<u8>,
    /// Word-count range of paragraph text; other roles use shorter text.
    pub min_words: usize,
    pub max_words: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            min_elements: 32,
            max_elements: 128,
            max_columns: 4,
            page_width: 1280,
            style_groups: 4,
            palette: (0..16).collect(),
            min_words: 3,
            max_words: 24,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::BadSpec(m.to_string()));
        if self.min_elements == 0 || self.min_elements > self.max_elements {
            return bad("element range must be non-empty and start above 0");
        }
        if self.max_columns == 0 {
            return bad("max_columns must be positive");
        }
        if self.page_width < 200 || self.page_width > MAX_PIXEL {
            return bad("page_width must lie in [200, 1920]");
        }
        if self.style_groups == 0 {
            return bad("style_groups must be positive");
        }
        if self.palette.len() < 2 || self.palette.iter().any(|&c| c as usize >= webrpg_core::rp::PALETTE_SIZE) {
            return bad("palette needs at least two valid color ids");
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return bad("word range must be non-empty and start above 0");
        }
        Ok(())
    }
}

/// Element roles; each maps to one style group.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Container,
    Heading,
    Body,
    Action,
    Nav,
}

impl Role {
    fn index(self) -> usize {
        self as usize
    }
}

const WORDS: &[&str] = &[
    "account", "alpha", "basket", "cart", "catalog", "checkout", "color", "delivery", "details", "discount",
    "fresh", "garden", "gift", "home", "kitchen", "latest", "light", "market", "member", "modern", "news",
    "offer", "order", "outdoor", "price", "product", "quality", "return", "review", "sale", "season", "service",
    "shipping", "shop", "size", "sport", "store", "style", "summer", "support", "travel", "winter",
];

struct Builder<'a> {
    rng: &'a mut ChaCha8Rng,
    html: String,
    boxes: Vec<([u32; 4], Role)>,
}

impl Builder<'_> {
    fn text(&mut self, lo: usize, hi: usize) -> String {
        let n = self.rng.random_range(lo..=hi);
        (0..n).map(|_| *WORDS.choose(self.rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
    }

    fn open(&mut self, tag: &str, b: [u32; 4], role: Role) {
        self.html.push_str(&format!("<{tag}>"));
        self.boxes.push((b, role));
    }

    fn close(&mut self, tag: &str) {
        self.html.push_str(&format!("</{tag}>"));
    }

    fn leaf(&mut self, tag: &str, text: &str, b: [u32; 4], role: Role) {
        self.html.push_str(&format!("<{tag}>{text}</{tag}>"));
        self.boxes.push((b, role));
    }

    /// Height of `text` wrapped into `width` at roughly 8 px per character.
    fn wrapped(text: &str, width: u32, line: u32) -> u32 {
        let per_line = (width / 8).max(1) as usize;
        let lines = text.chars().count().div_ceil(per_line).max(1) as u32;
        lines * line
    }
}

/// Generate one page. Returns the source HTML (without `ele{N}` classes) and
/// its rendering parameters keyed by pre-order id.
pub fn synth_page(spec: &SynthSpec, seed: u64, vocab: &Vocabulary) -> Result<(String, RpPage), HarnessError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(spec.min_elements..=spec.max_elements);
    let w = spec.page_width as u32;
    let styles = style_groups(spec, vocab, &mut rng)?;

    let mut b = Builder {
        rng: &mut rng,
        html: String::new(),
        boxes: Vec::new(),
    };
    // the root's height is patched once the content is laid out
    b.open("div", [0, 0, w, 0], Role::Container);
    let mut budget = n - 1;
    let mut y = 0u32;

    if budget >= 5 {
        let k = b.rng.random_range(2..=5usize).min(budget - 3);
        let h = 64;
        b.open("header", [0, y, w, h], Role::Container);
        let title = b.text(1, 3);
        b.leaf("h1", &title, [16, y + 12, w / 3, 40], Role::Heading);
        let nav_left = w / 2;
        let nav_w = w - nav_left - 16;
        b.open("nav", [nav_left, y + 16, nav_w, 32], Role::Container);
        let lw = nav_w / k as u32;
        for i in 0..k as u32 {
            let t = b.text(1, 2);
            b.leaf("a", &t, [nav_left + i * lw, y + 16, lw - 8, 32], Role::Nav);
        }
        b.close("nav");
        b.close("header");
        budget -= 3 + k;
        y += h;
    }

    if budget >= 4 {
        let m = b.rng.random_range(3..=8usize).min(budget - 2);
        let item_h = 32;
        let h = 16 + m as u32 * (item_h + 8) + 8;
        b.open("section", [0, y, w, h], Role::Container);
        b.open("ul", [16, y + 16, w - 32, h - 24], Role::Container);
        for i in 0..m as u32 {
            let t = b.text(2, 6);
            b.leaf("li", &t, [16, y + 16 + i * (item_h + 8), w - 32, item_h], Role::Body);
        }
        b.close("ul");
        b.close("section");
        budget -= 2 + m;
        y += h;
    }

    // card rows: a row costs 1 element and each card 4
    while budget >= 5 {
        let max_cards = ((budget - 1) / 4).min(spec.max_columns);
        // widen rows when the remaining cards would not fit in 1920 px
        let rows_left = (MAX_PIXEL as u32).saturating_sub(y + 40) / 160;
        let needed = (budget / 5).div_ceil(rows_left.max(1) as usize);
        let cards = b.rng.random_range(needed.clamp(1, max_cards)..=max_cards);
        let cw = w / cards as u32;
        let mut contents = Vec::with_capacity(cards);
        let mut row_h = 0;
        for _ in 0..cards {
            let title = b.text(1, 4);
            let body = b.text(spec.min_words, spec.max_words);
            let label = b.text(1, 2);
            let body_h = Builder::wrapped(&body, cw - 32, 20);
            row_h = row_h.max(8 + 28 + 8 + body_h + 8 + 32 + 16);
            contents.push((title, body, label, body_h));
        }
        b.open("div", [0, y, w, row_h], Role::Container);
        for (c, (title, body, label, body_h)) in contents.into_iter().enumerate() {
            let x = c as u32 * cw;
            b.open("div", [x + 8, y + 8, cw - 16, row_h - 16], Role::Container);
            b.leaf("h3", &title, [x + 16, y + 16, cw - 32, 28], Role::Heading);
            b.leaf("p", &body, [x + 16, y + 52, cw - 32, body_h], Role::Body);
            b.leaf("button", &label, [x + 16, y + 60 + body_h, 96, 32], Role::Action);
            b.close("div");
        }
        b.close("div");
        budget -= 1 + 4 * cards;
        y += row_h;
    }

    if budget >= 1 {
        let leaves = budget - 1;
        let h = 16 + leaves as u32 * 28;
        b.open("footer", [0, y, w, h], Role::Container);
        for i in 0..leaves as u32 {
            let t = b.text(1, 5);
            b.leaf("p", &t, [16, y + 8 + i * 28, w / 2, 24], Role::Body);
        }
        b.close("footer");
        y += h;
    }
    b.close("div");
    b.boxes[0].0[3] = y;

    let Builder { html, boxes, .. } = b;
    let page = Page::from_html(&html)?;
    if page.len() != boxes.len() {
        return Err(HarnessError::BadSpec(format!(
            "generated {} elements but parsed {}",
            boxes.len(),
            page.len()
        )));
    }
    let rps: RpPage = boxes
        .iter()
        .enumerate()
        .map(|(i, (bx, role))| {
            let mut v = styles[role.index() % styles.len()];
            for (p, &x) in RpName::LAYOUT.iter().zip(bx) {
                v[*p].0 = x.min(MAX_PIXEL as u32) as u16;
            }
            (ElementId(i as u32 + 1), v)
        })
        .collect();
    Ok((html, rps))
}

/// Pairwise distinct style vectors (layout slots left at 0).
fn style_groups(spec: &SynthSpec, vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> Result<Vec<RpVector>, HarnessError> {
    let mut out: Vec<RpVector> = Vec::with_capacity(spec.style_groups);
    let mut attempts = 0;
    while out.len() < spec.style_groups {
        attempts += 1;
        if attempts > 10_000 {
            return Err(HarnessError::BadSpec("cannot draw enough distinct styles".into()));
        }
        let size = rng.random_range(12..=28u16);
        let line = if rng.random_bool(0.2) {
            None
        } else {
            Some((size + rng.random_range(4..=10u16)).min(MAX_LINE_HEIGHT))
        };
        let colors: Vec<u8> = spec.palette.choose_multiple(rng, 2).copied().collect();
        let values = [
            (RpName::FontStyle, RpValue::Keyword(if rng.random_bool(0.8) { Keyword::Normal } else { Keyword::Italic })),
            (RpName::FontWeight, RpValue::Weight(100 * rng.random_range(3..=8u16))),
            (RpName::FontSize, RpValue::Px(size)),
            (RpName::LineHeight, line.map_or(RpValue::Keyword(Keyword::Normal), RpValue::Px)),
            (RpName::TextAlign, RpValue::Keyword(*[Keyword::Start, Keyword::Center, Keyword::Left].choose(rng).expect("non-empty"))),
            (RpName::TextDecoration, RpValue::Keyword(if rng.random_bool(0.8) { Keyword::None } else { Keyword::Underline })),
            (RpName::TextTransform, RpValue::Keyword(if rng.random_bool(0.8) { Keyword::None } else { Keyword::Uppercase })),
            (RpName::Color, RpValue::Color(colors[0])),
            (RpName::BackgroundColor, RpValue::Color(colors[1])),
        ];
        let mut v = RpVector::from_tokens([0; 13]);
        for (p, value) in values {
            v[p] = vocab.encode(p, value)?;
        }
        if !out.iter().any(|o| o.style_key() == v.style_key()) {
            out.push(v);
        }
    }
    Ok(out)
}
