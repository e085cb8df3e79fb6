//! Positional XPaths of the form `/html[1]/body[1]/ul[1]/li[2]`.
//!
//! Each step is a lowercase tag with the 1-based ordinal of the node among
//! its same-tag siblings.

use super::DomNode;

/// One `tag[ordinal]` step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XPathStep {
    pub tag: String,
    pub ordinal: usize,
}

/// Same-tag ordinal of `children[index]`.
pub fn sibling_ordinal(children: &[DomNode], index: usize) -> usize {
    let tag = &children[index].tag;
    1 + children[..index].iter().filter(|c| &c.tag == tag).count()
}

/// XPath of the node reached from `root` by the child indices in `path`.
/// Returns `None` if the path leaves the tree.
pub fn compute_xpath(root: &DomNode, path: &[usize]) -> Option<String> {
    let mut out = format!("/{}[1]", root.tag);
    let mut node = root;
    for &i in path {
        let child = node.children.get(i)?;
        out.push_str(&format!("/{}[{}]", child.tag, sibling_ordinal(&node.children, i)));
        node = child;
    }
    Some(out)
}

/// Split an XPath into steps. Steps without a subscript get ordinal 1.
pub fn parse_xpath(xpath: &str) -> Option<Vec<XPathStep>> {
    let body = xpath.strip_prefix('/')?;
    if body.is_empty() {
        return Some(Vec::new());
    }
    body.split('/')
        .map(|step| {
            let (tag, ordinal) = match step.split_once('[') {
                Some((tag, rest)) => {
                    let n: usize = rest.strip_suffix(']')?.parse().ok()?;
                    (tag, n)
                }
                None => (step, 1),
            };
            if tag.is_empty() || ordinal == 0 {
                return None;
            }
            Some(XPathStep {
                tag: tag.to_ascii_lowercase(),
                ordinal,
            })
        })
        .collect()
}

/// Child-index path of the node an XPath selects, if any.
pub fn resolve_xpath_path(root: &DomNode, xpath: &str) -> Option<Vec<usize>> {
    let steps = parse_xpath(xpath)?;
    let (first, rest) = steps.split_first()?;
    if first.tag != root.tag || first.ordinal != 1 {
        return None;
    }
    let mut node = root;
    let mut path = Vec::with_capacity(rest.len());
    for step in rest {
        let (i, child) = node
            .children
            .iter()
            .enumerate()
            .filter(|(_, c)| c.tag == step.tag)
            .nth(step.ordinal - 1)?;
        path.push(i);
        node = child;
    }
    Some(path)
}

/// The node an XPath selects, if any.
pub fn resolve_xpath<'a>(root: &'a DomNode, xpath: &str) -> Option<&'a DomNode> {
    let path = resolve_xpath_path(root, xpath)?;
    Some(path.iter().fold(root, |n, &i| &n.children[i]))
}
