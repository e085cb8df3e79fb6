//! Sub-page extraction, tag cleaning and top-left normalization.

use std::collections::BTreeSet;

use super::{parse_html, DomNode, HtmlError, Page};
use crate::rp::{ElementId, RpError, RpName, RpPage, RpTokenId};

/// Tags kept by [`clean_subpage`]. Everything else is unwrapped.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagAllowList(BTreeSet<String>);

const DEFAULT_TAGS: &[&str] = &[
    "a", "abbr", "address", "article", "aside", "b", "blockquote", "body", "br", "button", "caption",
    "code", "dd", "div", "dl", "dt", "em", "figcaption", "figure", "footer", "form", "h1", "h2",
    "h3", "h4", "h5", "h6", "header", "hr", "html", "i", "img", "input", "label", "legend", "li",
    "main", "nav", "ol", "option", "p", "pre", "section", "select", "small", "span", "strong",
    "sub", "sup", "table", "tbody", "td", "textarea", "tfoot", "th", "thead", "tr", "u", "ul",
];

impl Default for TagAllowList {
    fn default() -> Self {
        TagAllowList::new(DEFAULT_TAGS.iter().copied())
    }
}

impl TagAllowList {
    pub fn new<'a>(tags: impl IntoIterator<Item = &'a str>) -> Self {
        TagAllowList(tags.into_iter().map(str::to_ascii_lowercase).collect())
    }

    pub fn allows(&self, tag: &str) -> bool {
        self.0.contains(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

/// The closest-to-root subtrees whose total element count lies in
/// `[min_el, max_el]`. Subtrees are returned in document order, renumbered
/// from 1, with XPaths relative to the sub-page root.
///
/// If the input tree already carries `ele{N}` classes, each element's
/// `source_id` points back to them (see [`Page::remap_rps`]).
pub fn extract_subpages(tree: &DomNode, min_el: usize, max_el: usize) -> Vec<Page> {
    fn visit(node: &DomNode, min_el: usize, max_el: usize, out: &mut Vec<Page>) {
        let count = node.element_count();
        if count < min_el {
            return;
        }
        if count <= max_el {
            let mut root = node.clone();
            out.push(Page::from_tree(&mut root));
            return;
        }
        for child in &node.children {
            visit(child, min_el, max_el, out);
        }
    }
    let mut out = Vec::new();
    visit(tree, min_el, max_el, &mut out);
    out
}

/// Remove elements whose tag is not allowed, promoting their children into
/// their place. The root is always kept. Text of a removed element is
/// attached to its parent. Rendering parameters follow their elements.
pub fn clean_subpage(page: &Page, allow: &TagAllowList) -> Result<Page, HtmlError> {
    enum Item {
        Text(String),
        Child(DomNode),
    }

    fn into_items(node: &mut DomNode) -> Vec<Item> {
        let children = std::mem::take(&mut node.children);
        let mut chunks = std::mem::take(&mut node.text_chunks).into_iter().peekable();
        let mut items = Vec::new();
        for (i, child) in children.into_iter().enumerate() {
            while let Some(c) = chunks.next_if(|c| c.index <= i) {
                items.push(Item::Text(c.text));
            }
            items.push(Item::Child(child));
        }
        items.extend(chunks.map(|c| Item::Text(c.text)));
        items
    }

    fn clean(node: &mut DomNode, allow: &TagAllowList) {
        for item in into_items(node) {
            match item {
                Item::Text(t) => node.push_text(t),
                Item::Child(mut child) => {
                    clean(&mut child, allow);
                    if allow.allows(&child.tag) {
                        node.children.push(child);
                    } else {
                        // Separate the promoted text from its new neighbours.
                        node.push_text(" ");
                        for inner in into_items(&mut child) {
                            match inner {
                                Item::Text(t) => node.push_text(t),
                                Item::Child(c) => node.children.push(c),
                            }
                        }
                        node.push_text(" ");
                    }
                }
            }
        }
    }

    let mut root = parse_html(&page.source_html)?;
    clean(&mut root, allow);
    let cleaned = Page::from_tree(&mut root);
    let rps = page.rps.as_ref().map(|r| cleaned.remap_rps(r)).transpose()?;
    Ok(Page { rps, ..cleaned })
}

/// Translate the layout so the minimum left and top are both 0.
pub fn normalize_layout(page: &Page) -> Result<Page, HtmlError> {
    let rps = page.rps()?;
    let mut boxes = Vec::with_capacity(page.elements.len());
    for e in &page.elements {
        let id = e.element_id();
        let b = rps
            .get(id)
            .and_then(|v| v.layout_px())
            .ok_or(HtmlError::MissingLayout(id))?;
        boxes.push((id, b));
    }
    let min_left = boxes.iter().map(|(_, b)| b[0]).min().unwrap_or(0);
    let min_top = boxes.iter().map(|(_, b)| b[1]).min().unwrap_or(0);
    let mut out = rps.clone();
    for (id, b) in boxes {
        let v = out.0.get_mut(&id).expect("checked above");
        v[RpName::Left] = RpTokenId(b[0] - min_left);
        v[RpName::Top] = RpTokenId(b[1] - min_top);
    }
    Ok(Page {
        rps: Some(out),
        ..page.clone()
    })
}

impl Page {
    /// Look up each element's vector in `source` by its `source_id`.
    pub fn remap_rps(&self, source: &RpPage) -> Result<RpPage, HtmlError> {
        self.elements
            .iter()
            .map(|e| {
                let from = ElementId(e.source_id.ok_or_else(|| {
                    HtmlError::Rp(RpError::MissingParameter {
                        path: format!("$.{} (no source id)", e.element_id()),
                    })
                })?);
                let v = source.get(from).ok_or_else(|| {
                    HtmlError::Rp(RpError::MissingParameter {
                        path: format!("$.{from}"),
                    })
                })?;
                Ok((e.element_id(), *v))
            })
            .collect()
    }
}
