//! A small forgiving HTML parser and DOM.
//!
//! The parser is a single pass over the input with a stack of open
//! elements. It tolerates unclosed tags, stray end tags and unquoted
//! attributes, applies the common implied-end-tag rules (`li`, `p`, table
//! cells, `option`) and drops content that is never visible: comments,
//! `<script>`, `<style>`, `<head>`, `<template>`, `<noscript>` and anything
//! marked hidden.

use std::fmt::Write as _;

use super::HtmlError;

/// Deepest nesting the parser will build; deeper start tags attach to the
/// element at this depth.
pub const MAX_NESTING: usize = 512;

const VOID_TAGS: &[&str] = &[
    "area", "base", "br", "col", "embed", "hr", "img", "input", "link", "meta", "param", "source",
    "track", "wbr",
];

/// Content of these is dropped along with the element.
const DROPPED_TAGS: &[&str] = &["script", "style", "head", "template", "noscript", "title", "meta", "link", "base"];

const RAW_TEXT_TAGS: &[&str] = &["script", "style", "textarea", "title", "noscript", "xmp"];

/// Block-level starts that implicitly close an open `<p>`.
const CLOSES_P: &[&str] = &[
    "address", "article", "aside", "blockquote", "div", "dl", "fieldset", "footer", "form", "h1",
    "h2", "h3", "h4", "h5", "h6", "header", "hr", "main", "nav", "ol", "p", "pre", "section",
    "table", "ul", "figure",
];

pub fn is_void(tag: &str) -> bool {
    VOID_TAGS.contains(&tag)
}

/// A run of direct text, positioned before the element child at `index`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextChunk {
    pub index: usize,
    pub text: String,
}

/// An element node. Text is held as chunks interleaved with children.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DomNode {
    pub tag: String,
    pub attrs: Vec<(String, String)>,
    pub text_chunks: Vec<TextChunk>,
    pub children: Vec<DomNode>,
}

impl DomNode {
    pub fn new(tag: impl Into<String>) -> Self {
        Self {
            tag: tag.into(),
            ..Self::default()
        }
    }

    pub fn with_child(mut self, child: DomNode) -> Self {
        self.children.push(child);
        self
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.push_text(text);
        self
    }

    pub fn with_attr(mut self, name: impl Into<String>, value: impl Into<String>) -> Self {
        self.attrs.push((name.into(), value.into()));
        self
    }

    /// Append text after the current last child.
    pub fn push_text(&mut self, text: impl Into<String>) {
        let text = text.into();
        let index = self.children.len();
        match self.text_chunks.last_mut() {
            Some(last) if last.index == index => last.text.push_str(&text),
            _ => self.text_chunks.push(TextChunk { index, text }),
        }
    }

    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs.iter().find(|(k, _)| k == name).map(|(_, v)| v.as_str())
    }

    pub fn set_attr(&mut self, name: &str, value: String) {
        match self.attrs.iter_mut().find(|(k, _)| k == name) {
            Some(slot) => slot.1 = value,
            None => self.attrs.push((name.to_string(), value)),
        }
    }

    /// Number of elements in this subtree, including `self`.
    pub fn element_count(&self) -> usize {
        1 + self.children.iter().map(DomNode::element_count).sum::<usize>()
    }

    /// Direct text with whitespace runs collapsed and the ends trimmed.
    pub fn direct_text(&self) -> String {
        let raw: String = self.text_chunks.iter().map(|c| c.text.as_str()).collect();
        normalize_whitespace(&raw)
    }

    /// Serialize back to HTML.
    pub fn to_html(&self) -> String {
        let mut out = String::new();
        self.write_html(&mut out);
        out
    }

    fn write_html(&self, out: &mut String) {
        write!(out, "<{}", self.tag).unwrap();
        for (k, v) in &self.attrs {
            write!(out, " {k}=\"{}\"", escape(v, true)).unwrap();
        }
        out.push('>');
        if is_void(&self.tag) {
            return;
        }
        let mut chunks = self.text_chunks.iter().peekable();
        for (i, child) in self.children.iter().enumerate() {
            while let Some(c) = chunks.next_if(|c| c.index <= i) {
                out.push_str(&escape(&c.text, false));
            }
            child.write_html(out);
        }
        for c in chunks {
            out.push_str(&escape(&c.text, false));
        }
        write!(out, "</{}>", self.tag).unwrap();
    }

    /// Visit every node in pre-order together with its depth.
    pub fn walk(&self, f: &mut impl FnMut(&DomNode, usize)) {
        fn go(n: &DomNode, depth: usize, f: &mut impl FnMut(&DomNode, usize)) {
            f(n, depth);
            for c in &n.children {
                go(c, depth + 1, f);
            }
        }
        go(self, 0, f);
    }
}

pub fn normalize_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn escape(s: &str, attr: bool) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' if attr => out.push_str("&quot;"),
            c => out.push(c),
        }
    }
    out
}

fn decode_entities(s: &str) -> String {
    if !s.contains('&') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        rest = &rest[amp..];
        let semi = rest.as_bytes()[..rest.len().min(12)].iter().position(|&b| b == b';');
        let decoded = semi.and_then(|end| {
            let name = &rest[1..end];
            let ch = match name {
                "amp" => Some('&'),
                "lt" => Some('<'),
                "gt" => Some('>'),
                "quot" => Some('"'),
                "apos" => Some('\''),
                "nbsp" => Some('\u{a0}'),
                "copy" => Some('\u{a9}'),
                _ => {
                    let code = if let Some(hex) = name.strip_prefix("#x").or_else(|| name.strip_prefix("#X")) {
                        u32::from_str_radix(hex, 16).ok()
                    } else if let Some(dec) = name.strip_prefix('#') {
                        dec.parse().ok()
                    } else {
                        None
                    };
                    code.and_then(char::from_u32)
                }
            };
            ch.map(|c| (c, end + 1))
        });
        match decoded {
            Some((c, len)) => {
                out.push(c);
                rest = &rest[len..];
            }
            None => {
                out.push('&');
                rest = &rest[1..];
            }
        }
    }
    out.push_str(rest);
    out
}

fn is_hidden(tag: &str, attrs: &[(String, String)]) -> bool {
    attrs.iter().any(|(k, v)| match k.as_str() {
        "hidden" => true,
        "aria-hidden" => v.eq_ignore_ascii_case("true"),
        "type" => tag == "input" && v.eq_ignore_ascii_case("hidden"),
        "style" => {
            let s: String = v.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
            s.contains("display:none") || s.contains("visibility:hidden")
        }
        _ => false,
    })
}

struct Builder {
    nodes: Vec<DomNode>,
    /// Parent index of each arena node; the document sentinel is index 0.
    parents: Vec<usize>,
    child_count: Vec<usize>,
    stack: Vec<usize>,
}

impl Builder {
    fn current(&self) -> usize {
        *self.stack.last().unwrap()
    }

    fn open_tags(&self) -> impl Iterator<Item = (usize, &str)> + '_ {
        self.stack
            .iter()
            .enumerate()
            .rev()
            .map(|(pos, &i)| (pos, self.nodes[i].tag.as_str()))
    }

    /// Pop back to and including the nearest open `tag`, without crossing any
    /// of `boundaries`.
    fn close_open(&mut self, tags: &[&str], boundaries: &[&str]) {
        let mut target = None;
        for (pos, t) in self.open_tags() {
            if pos == 0 || boundaries.contains(&t) {
                break;
            }
            if tags.contains(&t) {
                target = Some(pos);
                break;
            }
        }
        if let Some(pos) = target {
            self.stack.truncate(pos);
        }
    }

    fn start(&mut self, tag: String, attrs: Vec<(String, String)>, self_closing: bool) {
        match tag.as_str() {
            "li" => self.close_open(&["li"], &["ul", "ol", "menu"]),
            "dt" | "dd" => self.close_open(&["dt", "dd"], &["dl"]),
            "td" | "th" => self.close_open(&["td", "th"], &["tr", "table"]),
            "tr" => self.close_open(&["tr"], &["table", "tbody", "thead", "tfoot"]),
            "option" => self.close_open(&["option"], &["select", "datalist"]),
            _ => {}
        }
        if CLOSES_P.contains(&tag.as_str()) {
            let top = self.current();
            if self.nodes[top].tag == "p" {
                self.stack.pop();
            }
        }
        let parent = self.current();
        let idx = self.nodes.len();
        self.nodes.push(DomNode {
            tag,
            attrs,
            ..DomNode::default()
        });
        self.parents.push(parent);
        self.child_count.push(0);
        self.child_count[parent] += 1;
        if !self_closing && !is_void(&self.nodes[idx].tag) && self.stack.len() <= MAX_NESTING {
            self.stack.push(idx);
        }
    }

    fn end(&mut self, tag: &str) {
        let found = self.open_tags().find(|&(pos, t)| pos > 0 && t == tag).map(|(pos, _)| pos);
        if let Some(pos) = found {
            self.stack.truncate(pos);
        }
    }

    fn text(&mut self, text: &str) {
        if text.trim().is_empty() {
            return;
        }
        let cur = self.current();
        // Children are attached at assembly time; the chunk records how many
        // element children precede it.
        let index = self.child_count[cur];
        let text = decode_entities(text);
        let n = &mut self.nodes[cur];
        match n.text_chunks.last_mut() {
            Some(last) if last.index == index => last.text.push_str(&text),
            _ => n.text_chunks.push(TextChunk { index, text }),
        }
    }

    /// Assemble the arena into owned trees, dropping invisible subtrees.
    fn finish(self) -> Vec<DomNode> {
        let Builder { nodes, parents, .. } = self;
        let n = nodes.len();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 1..n {
            children[parents[i]].push(i);
        }
        let mut slots: Vec<Option<DomNode>> = nodes.into_iter().map(Some).collect();

        fn build(i: usize, slots: &mut [Option<DomNode>], children: &[Vec<usize>]) -> Option<DomNode> {
            let mut node = slots[i].take().unwrap();
            if DROPPED_TAGS.contains(&node.tag.as_str()) || is_hidden(&node.tag, &node.attrs) {
                return None;
            }
            // Text positions were recorded against the full child list;
            // remap them onto the kept children.
            let mut kept = Vec::new();
            let mut remap = Vec::with_capacity(children[i].len() + 1);
            for &c in &children[i] {
                remap.push(kept.len());
                if let Some(child) = build(c, slots, children) {
                    kept.push(child);
                }
            }
            remap.push(kept.len());
            for chunk in &mut node.text_chunks {
                chunk.index = remap[chunk.index];
            }
            let mut merged: Vec<TextChunk> = Vec::with_capacity(node.text_chunks.len());
            for chunk in node.text_chunks.drain(..) {
                match merged.last_mut() {
                    Some(last) if last.index == chunk.index => last.text.push_str(&chunk.text),
                    _ => merged.push(chunk),
                }
            }
            node.text_chunks = merged;
            node.children = kept;
            Some(node)
        }

        children[0]
            .clone()
            .into_iter()
            .filter_map(|c| build(c, &mut slots, &children))
            .collect()
    }
}

/// Parse UTF-8 bytes as HTML.
pub fn parse_html_bytes(bytes: &[u8]) -> Result<DomNode, HtmlError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| HtmlError::Unrecoverable(format!("input is not UTF-8 text: {e}")))?;
    parse_html(text)
}

/// Parse an HTML document or fragment into a single rooted tree.
///
/// A document with several top-level elements is wrapped in a `<body>`.
pub fn parse_html(text: &str) -> Result<DomNode, HtmlError> {
    if text.trim().is_empty() {
        return Err(HtmlError::Unrecoverable("empty input".into()));
    }
    if text.contains('\0') {
        return Err(HtmlError::Unrecoverable("input contains NUL bytes".into()));
    }
    let mut b = Builder {
        nodes: vec![DomNode::new("#document")],
        parents: vec![0],
        child_count: vec![0],
        stack: vec![0],
    };
    let bytes = text.as_bytes();
    let mut i = 0;
    let mut text_start = 0;
    while i < bytes.len() {
        if bytes[i] != b'<' {
            i += 1;
            continue;
        }
        let rest = &text[i..];
        if rest.starts_with("<!--") {
            b.text(&text[text_start..i]);
            i = rest.find("-->").map_or(bytes.len(), |e| i + e + 3);
            text_start = i;
        } else if rest.starts_with("<!") || rest.starts_with("<?") {
            b.text(&text[text_start..i]);
            i = rest.find('>').map_or(bytes.len(), |e| i + e + 1);
            text_start = i;
        } else if rest.starts_with("</") && rest[2..].starts_with(|c: char| c.is_ascii_alphabetic()) {
            b.text(&text[text_start..i]);
            let end = rest.find('>').map_or(bytes.len(), |e| i + e + 1);
            let name: String = text[i + 2..end]
                .chars()
                .take_while(|c| c.is_ascii_alphanumeric() || *c == '-')
                .collect::<String>()
                .to_ascii_lowercase();
            b.end(&name);
            i = end;
            text_start = i;
        } else if rest[1..].starts_with(|c: char| c.is_ascii_alphabetic()) {
            b.text(&text[text_start..i]);
            let (tag, attrs, self_closing, end) = parse_start_tag(text, i);
            i = end;
            if RAW_TEXT_TAGS.contains(&tag.as_str()) && !self_closing {
                let close = format!("</{tag}");
                let lower = text[i..].to_ascii_lowercase();
                let content_end = lower.find(&close).map_or(bytes.len(), |e| i + e);
                let content = &text[i..content_end];
                b.start(tag.clone(), attrs, false);
                b.text(content);
                b.end(&tag);
                i = text[content_end..].find('>').map_or(bytes.len(), |e| content_end + e + 1);
            } else {
                b.start(tag, attrs, self_closing);
            }
            text_start = i;
        } else {
            i += 1;
        }
    }
    b.text(&text[text_start..]);

    let mut roots = b.finish();
    match roots.len() {
        0 => Err(HtmlError::Unrecoverable("no visible elements".into())),
        1 => Ok(roots.pop().unwrap()),
        _ => Ok(DomNode {
            tag: "body".into(),
            children: roots,
            ..DomNode::default()
        }),
    }
}

/// Returns `(tag, attrs, self_closing, index after '>')`.
fn parse_start_tag(text: &str, start: usize) -> (String, Vec<(String, String)>, bool, usize) {
    let bytes = text.as_bytes();
    let mut i = start + 1;
    let name_start = i;
    while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' && bytes[i] != b'/' {
        i += 1;
    }
    let tag = text[name_start..i].to_ascii_lowercase();
    let mut attrs: Vec<(String, String)> = Vec::new();
    let mut self_closing = false;
    loop {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i >= bytes.len() {
            break;
        }
        match bytes[i] {
            b'>' => {
                i += 1;
                break;
            }
            b'/' => {
                i += 1;
                if bytes.get(i) == Some(&b'>') {
                    self_closing = true;
                    i += 1;
                    break;
                }
            }
            _ => {
                let ns = i;
                while i < bytes.len()
                    && !bytes[i].is_ascii_whitespace()
                    && !matches!(bytes[i], b'=' | b'>' | b'/')
                {
                    i += 1;
                }
                let name = text[ns..i].to_ascii_lowercase();
                while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                    i += 1;
                }
                let mut value = String::new();
                if bytes.get(i) == Some(&b'=') {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                        i += 1;
                    }
                    match bytes.get(i) {
                        Some(&q @ (b'"' | b'\'')) => {
                            let vs = i + 1;
                            let ve = text[vs..].find(q as char).map_or(bytes.len(), |e| vs + e);
                            value = decode_entities(&text[vs..ve]);
                            i = (ve + 1).min(bytes.len());
                        }
                        _ => {
                            let vs = i;
                            while i < bytes.len() && !bytes[i].is_ascii_whitespace() && bytes[i] != b'>' {
                                i += 1;
                            }
                            value = decode_entities(&text[vs..i]);
                        }
                    }
                }
                if !name.is_empty() && !attrs.iter().any(|(k, _)| *k == name) {
                    attrs.push((name, value));
                }
            }
        }
    }
    (tag, attrs, self_closing, i)
}
