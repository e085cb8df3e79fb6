//! Element IoU and the style-consistency score.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use webrpg_core::rp::{ElementId, RpPage, RpTokenId, RpVector};

use crate::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    pub fn new(left: u32, top: u32, width: u32, height: u32) -> Self {
        BBox { left, top, width, height }
    }

    pub fn from_vector(v: &RpVector) -> Option<BBox> {
        v.layout_px().map(|[l, t, w, h]| BBox::new(l as u32, t as u32, w as u32, h as u32))
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn intersection(&self, other: &BBox) -> u64 {
        let overlap = |a0: u32, a1: u32, b0: u32, b1: u32| {
            let lo = a0.max(b0);
            let hi = (a0 + a1).min(b0 + b1);
            hi.saturating_sub(lo) as u64
        };
        overlap(self.left, self.width, other.left, other.width) * overlap(self.top, self.height, other.top, other.height)
    }

    /// Both zero-area: 1. Exactly one zero-area: 0.
    pub fn iou(&self, other: &BBox) -> f64 {
        let (a, b) = (self.area(), other.area());
        match (a == 0, b == 0) {
            (true, true) => 1.0,
            (true, false) | (false, true) => 0.0,
            _ => {
                let inter = self.intersection(other);
                inter as f64 / (a + b - inter) as f64
            }
        }
    }
}

/// Mean IoU of index-aligned boxes.
pub fn ele_iou(real: &[BBox], gen: &[BBox]) -> Result<f64> {
    if real.len() != gen.len() {
        return Err(EvalError::LengthMismatch {
            real: real.len(),
            gen: gen.len(),
        });
    }
    if real.is_empty() {
        return Err(EvalError::Empty);
    }
    let total: f64 = real.iter().zip(gen).map(|(a, b)| a.iou(b)).sum();
    Ok(total / real.len() as f64)
}

fn boxes(page: &RpPage) -> Result<Vec<BBox>> {
    page.iter()
        .map(|(id, v)| BBox::from_vector(v).ok_or(EvalError::MissingLayout(id)))
        .collect()
}

fn check_ids(real: &RpPage, gen: &RpPage) -> Result<()> {
    for (a, b) in real.iter().map(|(id, _)| id).zip(gen.iter().map(|(id, _)| id)) {
        if a != b {
            return Err(EvalError::IdMismatch(a.min(b)));
        }
    }
    if real.len() != gen.len() {
        let longer = if real.len() > gen.len() { real } else { gen };
        let first_extra = longer.iter().nth(real.len().min(gen.len())).map(|(id, _)| id);
        return Err(EvalError::IdMismatch(first_extra.unwrap_or(ElementId(0))));
    }
    Ok(())
}

/// Ele. IoU of two pages aligned by element id.
pub fn page_iou(real: &RpPage, gen: &RpPage) -> Result<f64> {
    check_ids(real, gen)?;
    ele_iou(&boxes(real)?, &boxes(gen)?)
}

/// Elements sharing all nine style tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StyleSubset {
    /// Ascending.
    pub members: Vec<ElementId>,
    pub style: [RpTokenId; 9],
}

/// Equivalence classes under style equality, ordered by smallest member.
pub fn style_partition(page: &RpPage) -> Vec<StyleSubset> {
    let mut index: HashMap<[RpTokenId; 9], usize> = HashMap::new();
    let mut out: Vec<StyleSubset> = Vec::new();
    // RpPage iterates in ascending id order, so classes appear by first member
    for (id, v) in page.iter() {
        let key = v.style_key();
        match index.get(&key) {
            Some(&i) => out[i].members.push(id),
            None => {
                index.insert(key, out.len());
                out.push(StyleSubset {
                    members: vec![id],
                    style: key,
                });
            }
        }
    }
    out
}

/// `sum_j w_j max_k J(S_j, S^_k)` with `w_j = |S_j| / N`. Generated subsets
/// may be the best match of several real ones.
///
/// Each term is computed as `|S_j| * inter / union` and the sum is divided
/// by `N` once, so a page scored against itself gives exactly 1.
pub fn sc_score(real: &RpPage, gen: &RpPage) -> Result<f64> {
    check_ids(real, gen)?;
    if real.is_empty() {
        return Err(EvalError::Empty);
    }
    let real_sets = style_partition(real);
    let gen_sets = style_partition(gen);
    let mut gen_class: HashMap<ElementId, usize> = HashMap::new();
    for (k, s) in gen_sets.iter().enumerate() {
        for &id in &s.members {
            gen_class.insert(id, k);
        }
    }
    let mut total = 0.0;
    for s in &real_sets {
        let mut inter: HashMap<usize, usize> = HashMap::new();
        for id in &s.members {
            *inter.entry(gen_class[id]).or_default() += 1;
        }
        let size = s.members.len();
        let best = inter
            .iter()
            .map(|(&k, &i)| {
                let union = size + gen_sets[k].members.len() - i;
                (size * i) as f64 / union as f64
            })
            .fold(0.0, f64::max);
        total += best;
    }
    Ok(total / real.len() as f64)
}
