//! Class-selector CSS for rendering parameters.
//!
//! Each element becomes one rule on its own line:
//!
//! ```text
//! .ele1 { position: absolute; left: 0px; top: 0px; width: 120px; ... }
//! ```
//!
//! PAD slots are omitted. [`parse_css_rules`] reads this form back.

use std::fmt::Write as _;

use super::{ElementId, RpError, RpName, RpPage, RpVector, Vocabulary};

impl Vocabulary {
    /// Emit one absolutely positioned class rule per element, in id order.
    pub fn emit_css(&self, page: &RpPage) -> Result<String, RpError> {
        page.validate(self)?;
        let mut out = String::new();
        for (id, v) in page.iter() {
            write!(out, ".{id} {{ position: absolute;").unwrap();
            for p in RpName::ALL {
                if let Some(text) = self.format_value(p, v[p])? {
                    write!(out, " {p}: {text};").unwrap();
                }
            }
            out.push_str(" }\n");
        }
        Ok(out)
    }

    /// Parse CSS in the form produced by [`Vocabulary::emit_css`].
    ///
    /// Only `.ele{N}` class selectors are accepted; `position` is ignored and
    /// absent parameters become PAD. Comments are skipped.
    pub fn parse_css_rules(&self, css: &str) -> Result<RpPage, RpError> {
        let css = strip_comments(css);
        let mut page = RpPage::new();
        let mut rest = css.as_str();
        loop {
            rest = rest.trim_start();
            if rest.is_empty() {
                break;
            }
            let open = rest.find('{').ok_or_else(|| RpError::Parse {
                path: "css".into(),
                message: "expected '{'".into(),
            })?;
            let selector = rest[..open].trim();
            let close = rest[open..].find('}').ok_or_else(|| RpError::Parse {
                path: format!("css {selector}"),
                message: "unterminated rule".into(),
            })? + open;
            let body = &rest[open + 1..close];
            rest = &rest[close + 1..];

            let id: ElementId = selector
                .strip_prefix('.')
                .ok_or_else(|| format!("only class selectors are supported, got {selector:?}"))
                .and_then(|s| s.parse())
                .map_err(|message| RpError::Parse {
                    path: format!("css {selector}"),
                    message,
                })?;
            let mut vector = RpVector::all_pad();
            for decl in body.split(';').map(str::trim).filter(|d| !d.is_empty()) {
                let (name, value) = decl.split_once(':').ok_or_else(|| RpError::Parse {
                    path: format!("css {selector}"),
                    message: format!("malformed declaration {decl:?}"),
                })?;
                let name = name.trim();
                if name == "position" {
                    continue;
                }
                let path = format!("css {selector} {name}");
                let param: RpName = name
                    .parse()
                    .map_err(|_| RpError::UnknownParameter { path: path.clone() })?;
                vector[param] = self
                    .parse_value(param, value, false)
                    .map_err(|_| RpError::UnparseableValue {
                        path,
                        value: value.trim().to_string(),
                    })?;
            }
            if page.insert(id, vector).is_some() {
                return Err(RpError::Parse {
                    path: format!("css {selector}"),
                    message: "duplicate rule".into(),
                });
            }
        }
        Ok(page)
    }
}

fn strip_comments(css: &str) -> String {
    let mut out = String::with_capacity(css.len());
    let mut rest = css;
    while let Some(start) = rest.find("/*") {
        out.push_str(&rest[..start]);
        match rest[start + 2..].find("*/") {
            Some(end) => rest = &rest[start + 2 + end + 2..],
            None => {
                rest = "";
                break;
            }
        }
    }
    out.push_str(rest);
    out
}
