//! Visual complexity of a page: color richness, size diversity among
//! siblings and (lack of) edge alignment among leaves.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::html::Page;
use crate::rp::{ElementId, RpName, RpPage, RpTokenId, COLOR_RANGE};

/// Pages scoring below this are dropped from the dataset.
pub const DEFAULT_VC_THRESHOLD: f64 = 0.1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VcError {
    #[error("page has no rendering parameters")]
    MissingRps,
    #[error("element {0} has no color or background-color")]
    MissingStyle(ElementId),
    #[error("element {0} has no layout rendering parameters")]
    MissingLayout(ElementId),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VcReport {
    pub vc_color: f64,
    pub vc_size: f64,
    pub vc_alg: f64,
    pub vc_total: f64,
}

fn rps(page: &Page) -> Result<&RpPage, VcError> {
    page.rps.as_ref().ok_or(VcError::MissingRps)
}

fn color_token(rps: &RpPage, id: ElementId, p: RpName) -> Result<RpTokenId, VcError> {
    rps.get(id)
        .map(|v| v[p])
        .filter(|t| COLOR_RANGE.contains(&t.0))
        .ok_or(VcError::MissingStyle(id))
}

fn layout(rps: &RpPage, id: ElementId) -> Result<[u16; 4], VcError> {
    rps.get(id)
        .and_then(|v| v.layout_px())
        .ok_or(VcError::MissingLayout(id))
}

/// `(C_c + C_bg - 2) / (2N)` over distinct text and background colors.
pub fn vc_color(page: &Page) -> Result<f64, VcError> {
    let rps = rps(page)?;
    if page.elements.is_empty() {
        return Ok(0.0);
    }
    let mut colors = HashSet::new();
    let mut backgrounds = HashSet::new();
    for e in &page.elements {
        colors.insert(color_token(rps, e.element_id(), RpName::Color)?);
        backgrounds.insert(color_token(rps, e.element_id(), RpName::BackgroundColor)?);
    }
    let n = page.elements.len() as f64;
    Ok((colors.len() + backgrounds.len()) as f64 / (2.0 * n) - 1.0 / n)
}

/// Mean over parents of `(DS - 1) / NC`, where `DS` is the number of
/// distinct `(width, height)` pairs among the `NC` children.
pub fn vc_size(page: &Page) -> Result<f64, VcError> {
    let rps = rps(page)?;
    let mut sum = 0.0;
    let mut parents = 0usize;
    for (i, kids) in page.children().iter().enumerate() {
        if kids.is_empty() {
            continue;
        }
        let mut sizes = HashSet::new();
        for &k in kids {
            let b = layout(rps, ElementId(k))?;
            sizes.insert((b[2], b[3]));
        }
        // The parent itself also needs layout for the page to be scoreable.
        layout(rps, ElementId(i as u32 + 1))?;
        sum += (sizes.len() - 1) as f64 / kids.len() as f64;
        parents += 1;
    }
    Ok(if parents == 0 { 0.0 } else { sum / parents as f64 })
}

fn aligned(a: [u16; 4], b: [u16; 4]) -> bool {
    let right = |x: [u16; 4]| x[0] as u32 + x[2] as u32;
    let bottom = |x: [u16; 4]| x[1] as u32 + x[3] as u32;
    a[0] == b[0] || a[1] == b[1] || right(a) == right(b) || bottom(a) == bottom(b)
}

/// One minus the fraction of ordered leaf pairs sharing a left, top, right
/// or bottom edge.
pub fn vc_alignment(page: &Page) -> Result<f64, VcError> {
    let rps = rps(page)?;
    let children = page.children();
    let leaves = page
        .elements
        .iter()
        .filter(|e| children[e.id as usize - 1].is_empty())
        .map(|e| layout(rps, e.element_id()))
        .collect::<Result<Vec<_>, _>>()?;
    let n = leaves.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut pairs = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if aligned(leaves[i], leaves[j]) {
                pairs += 1;
            }
        }
    }
    // Each unordered pair counts twice among ordered pairs.
    Ok(1.0 - (2 * pairs) as f64 / (n * (n - 1)) as f64)
}

pub fn vc_total(page: &Page) -> Result<VcReport, VcError> {
    let vc_color = vc_color(page)?;
    let vc_size = vc_size(page)?;
    let vc_alg = vc_alignment(page)?;
    Ok(VcReport {
        vc_color,
        vc_size,
        vc_alg,
        vc_total: vc_color + vc_size + vc_alg,
    })
}

/// Whether a page is kept: `vc_total >= threshold`.
pub fn passes_filter(report: &VcReport, threshold: f64) -> bool {
    report.vc_total >= threshold
}
