#![allow(dead_code)]

use rand::Rng;
use webrpg_core::html::Page;
use webrpg_core::rp::{ElementId, RpPage, Vocabulary};
use webrpg_models::data::PageExample;
use webrpg_models::embedding::{EmbedConfig, HashedBagEncoder, TagVocab};
use webrpg_models::vae::{uniform_vector, VaeConfig};

pub const TOY_D: usize = 8;

pub fn toy_embed() -> EmbedConfig {
    EmbedConfig {
        d: TOY_D,
        d_sem: TOY_D,
        tag_count: TagVocab::default().len(),
    }
}

pub fn toy_vae() -> VaeConfig {
    VaeConfig {
        latent: TOY_D,
        hidden: vec![8, 8, 8, 8],
        ..Default::default()
    }
}

/// `n` sibling paragraphs under a div, each with some text.
pub fn toy_html(n: usize) -> String {
    let items: String = (0..n).map(|i| format!("<p>item {i} text</p>")).collect();
    format!("<div class=\"box\">{items}</div>")
}

/// Parsed page with uniformly random legal vectors.
pub fn toy_page(n: usize, rng: &mut impl Rng) -> Page {
    let vocab = Vocabulary::default();
    let page = Page::from_html(&toy_html(n)).unwrap();
    let mut rps = RpPage::new();
    for el in &page.elements {
        rps.insert(ElementId(el.id), uniform_vector(&vocab, rng));
    }
    page.with_rps(rps).unwrap()
}

pub fn toy_example(n: usize, dim: usize, rng: &mut impl Rng) -> PageExample {
    let page = toy_page(n, rng);
    PageExample::from_page("toy", &page, &HashedBagEncoder { dim }, &TagVocab::default()).unwrap()
}
