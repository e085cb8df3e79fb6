//! Training examples and row-packed batches.

use webrpg_core::html::Page;
use webrpg_core::rp::RpVector;
use webrpg_nn::AttnSegment;

use crate::embedding::{PageFeatures, SemanticEncoder, TagVocab};
use crate::{ModelError, Result};

/// One page: embedding inputs and target vectors, both in pre-order.
#[derive(Debug, Clone, PartialEq)]
pub struct PageExample {
    pub id: String,
    pub features: PageFeatures,
    pub vectors: Vec<RpVector>,
}

impl PageExample {
    /// Requires `page` to carry one vector per element.
    pub fn from_page(id: &str, page: &Page, encoder: &dyn SemanticEncoder, tags: &TagVocab) -> Result<Self> {
        let rps = page
            .rps
            .as_ref()
            .ok_or_else(|| ModelError::BadConfig(format!("page {id} has no rendering parameters")))?;
        let mut vectors = Vec::with_capacity(page.len());
        for el in &page.elements {
            match rps.get(el.element_id()) {
                Some(v) => vectors.push(*v),
                None => {
                    return Err(ModelError::Misaligned {
                        elements: page.len(),
                        vectors: rps.len(),
                    })
                }
            }
        }
        Ok(PageExample {
            id: id.to_string(),
            features: PageFeatures::from_page(id, page, encoder, tags)?,
            vectors,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Several pages packed row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub features: PageFeatures,
    pub vectors: Vec<RpVector>,
    /// One square segment per page.
    pub segs: Vec<AttnSegment>,
}

impl Batch {
    pub fn new(pages: &[&PageExample]) -> Result<Self> {
        if pages.is_empty() || pages.iter().any(|p| p.is_empty()) {
            return Err(ModelError::EmptyBatch);
        }
        let mut segs = Vec::with_capacity(pages.len());
        let mut start = 0;
        for p in pages {
            if p.features.len() != p.len() {
                return Err(ModelError::Misaligned {
                    elements: p.features.len(),
                    vectors: p.len(),
                });
            }
            segs.push(AttnSegment::square(start, p.len()));
            start += p.len();
        }
        Ok(Batch {
            features: PageFeatures::concat(pages.iter().map(|p| &p.features)),
            vectors: pages.iter().flat_map(|p| p.vectors.iter().copied()).collect(),
            segs,
        })
    }

    pub fn rows(&self) -> usize {
        self.vectors.len()
    }
}
