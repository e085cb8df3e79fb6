//! HTML to training samples: parsing, pre-order element ids, XPaths,
//! character counts and sub-page extraction.

mod dom;
mod subpage;
mod xpath;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rp::{ElementId, RpError, RpPage, Vocabulary};

pub use dom::{is_void, normalize_whitespace, parse_html, parse_html_bytes, DomNode, TextChunk, MAX_NESTING};
pub use subpage::{clean_subpage, extract_subpages, normalize_layout, TagAllowList};
pub use xpath::{compute_xpath, parse_xpath, resolve_xpath, resolve_xpath_path, sibling_ordinal, XPathStep};

#[derive(Debug, Error)]
pub enum HtmlError {
    #[error("unrecoverable input: {0}")]
    Unrecoverable(String),
    #[error("element {0} has no layout rendering parameters")]
    MissingLayout(ElementId),
    #[error("page has no rendering parameters")]
    MissingRps,
    #[error("malformed page json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Rp(#[from] RpError),
}

/// One element of a (sub-)page, in pre-order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    /// 1-based pre-order index.
    pub id: u32,
    pub tag: String,
    pub xpath: String,
    pub char_count: usize,
    /// Root depth is 0.
    pub depth: usize,
    pub parent_id: Option<u32>,
    /// Direct text, whitespace-normalized.
    #[serde(default)]
    pub text: String,
    /// Attributes other than the generated `ele{N}` class.
    #[serde(default)]
    pub attrs: Vec<(String, String)>,
    /// Id this element carried in the document it was cut from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<u32>,
}

impl Element {
    pub fn element_id(&self) -> ElementId {
        ElementId(self.id)
    }
}

/// Number of characters of direct text after whitespace normalization.
pub fn char_count(node: &DomNode) -> usize {
    node.direct_text().chars().count()
}

fn parse_ele_class(token: &str) -> Option<u32> {
    token.parse::<ElementId>().ok().map(|id| id.0)
}

/// Assign pre-order ids `1..=S`, rewriting each node's class list so it ends
/// with `ele{N}`. A previous `ele{M}` class is removed and reported as the
/// element's `source_id`.
pub fn preorder_elements(root: &mut DomNode) -> Vec<Element> {
    fn visit(
        node: &mut DomNode,
        xpath: String,
        depth: usize,
        parent_id: Option<u32>,
        out: &mut Vec<Element>,
    ) {
        let id = out.len() as u32 + 1;
        let mut source_id = None;
        let mut classes: Vec<String> = Vec::new();
        for token in node.attr("class").unwrap_or("").split_whitespace() {
            match parse_ele_class(token) {
                Some(old) => {
                    source_id.get_or_insert(old);
                }
                None => classes.push(token.to_string()),
            }
        }
        let attrs: Vec<(String, String)> = node
            .attrs
            .iter()
            .filter(|(k, _)| k != "class")
            .cloned()
            .chain((!classes.is_empty()).then(|| ("class".to_string(), classes.join(" "))))
            .collect();
        classes.push(ElementId(id).to_string());
        node.set_attr("class", classes.join(" "));

        let text = node.direct_text();
        out.push(Element {
            id,
            tag: node.tag.clone(),
            xpath: xpath.clone(),
            char_count: text.chars().count(),
            depth,
            parent_id,
            text,
            attrs,
            source_id,
        });
        let ordinals: Vec<usize> = (0..node.children.len())
            .map(|i| sibling_ordinal(&node.children, i))
            .collect();
        for (child, ordinal) in node.children.iter_mut().zip(ordinals) {
            let child_xpath = format!("{xpath}/{}[{ordinal}]", child.tag);
            visit(child, child_xpath, depth + 1, Some(id), out);
        }
    }

    let mut out = Vec::new();
    let xpath = format!("/{}[1]", root.tag);
    visit(root, xpath, 0, None, &mut out);
    out
}

/// A sample: the sub-page HTML (with `ele{N}` classes), its elements in
/// pre-order, and optionally their rendering parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Page {
    pub source_html: String,
    pub elements: Vec<Element>,
    pub rps: Option<RpPage>,
}

#[derive(Serialize, Deserialize)]
struct PageFile {
    source_html: String,
    elements: Vec<Element>,
    rps: Option<serde_json::Value>,
}

impl Page {
    /// Parse HTML and number its elements.
    pub fn from_html(html: &str) -> Result<Page, HtmlError> {
        let mut root = parse_html(html)?;
        Ok(Page::from_tree(&mut root))
    }

    /// Number the elements of `root` in place and build a page from it.
    pub fn from_tree(root: &mut DomNode) -> Page {
        let elements = preorder_elements(root);
        Page {
            source_html: root.to_html(),
            elements,
            rps: None,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Children of every element, indexed by `id - 1`.
    pub fn children(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.elements.len()];
        for e in &self.elements {
            if let Some(p) = e.parent_id {
                out[p as usize - 1].push(e.id);
            }
        }
        out
    }

    pub fn rps(&self) -> Result<&RpPage, HtmlError> {
        self.rps.as_ref().ok_or(HtmlError::MissingRps)
    }

    /// Attach rendering parameters, requiring one vector per element.
    pub fn with_rps(mut self, rps: RpPage) -> Result<Page, HtmlError> {
        for e in &self.elements {
            if rps.get(e.element_id()).is_none() {
                return Err(HtmlError::Rp(RpError::MissingParameter {
                    path: format!("$.{}", e.element_id()),
                }));
            }
        }
        if rps.len() != self.elements.len() {
            return Err(HtmlError::Rp(RpError::Parse {
                path: "$".into(),
                message: format!("{} vectors for {} elements", rps.len(), self.elements.len()),
            }));
        }
        self.rps = Some(rps);
        Ok(self)
    }

    /// Serialize as Page JSON: `{"source_html", "elements": [...], "rps": RP-JSON | null}`.
    pub fn to_json(&self, vocab: &Vocabulary) -> Result<String, HtmlError> {
        let file = PageFile {
            source_html: self.source_html.clone(),
            elements: self.elements.clone(),
            rps: self.rps.as_ref().map(|r| vocab.to_json_value(r)).transpose()?,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str, vocab: &Vocabulary) -> Result<Page, HtmlError> {
        let file: PageFile = serde_json::from_str(text)?;
        let rps = file
            .rps
            .as_ref()
            .filter(|v| !v.is_null())
            .map(|v| vocab.from_json_value(v, false))
            .transpose()?;
        Ok(Page {
            source_html: file.source_html,
            elements: file.elements,
            rps,
        })
    }
}
