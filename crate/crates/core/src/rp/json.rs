//! RP-JSON: `{"ele1": {"left": "0px", ..., "background-color": "rgba(...)"}, ...}`.
//!
//! Keys are emitted in ascending element-id order and parameters in
//! [`RpName`] order, so serialization is byte-stable.

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::Value;

use super::{ElementId, RpError, RpName, RpPage, RpVector, Vocabulary};

struct VectorView<'a> {
    vocab: &'a Vocabulary,
    vector: &'a RpVector,
}

impl Serialize for VectorView<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(RpName::ALL.len()))?;
        for p in RpName::ALL {
            let text = self
                .vocab
                .format_value(p, self.vector[p])
                .map_err(serde::ser::Error::custom)?
                .unwrap_or_else(|| "PAD".to_string());
            map.serialize_entry(p.as_str(), &text)?;
        }
        map.end()
    }
}

struct PageView<'a> {
    vocab: &'a Vocabulary,
    page: &'a RpPage,
}

impl Serialize for PageView<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.page.len()))?;
        for (id, vector) in self.page.iter() {
            map.serialize_entry(&id.to_string(), &VectorView { vocab: self.vocab, vector })?;
        }
        map.end()
    }
}

impl Vocabulary {
    /// Serialize a page to pretty-printed RP-JSON.
    pub fn to_json(&self, page: &RpPage) -> Result<String, RpError> {
        page.validate(self)?;
        serde_json::to_string_pretty(&PageView { vocab: self, page }).map_err(|e| RpError::Parse {
            path: "$".into(),
            message: e.to_string(),
        })
    }

    /// As [`Vocabulary::to_json`], producing a JSON value.
    pub fn to_json_value(&self, page: &RpPage) -> Result<Value, RpError> {
        page.validate(self)?;
        serde_json::to_value(PageView { vocab: self, page }).map_err(|e| RpError::Parse {
            path: "$".into(),
            message: e.to_string(),
        })
    }

    /// Parse RP-JSON strictly: every value must be exactly representable.
    pub fn from_json(&self, text: &str) -> Result<RpPage, RpError> {
        let value: Value = serde_json::from_str(text).map_err(|e| RpError::Parse {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        self.from_json_value(&value, false)
    }

    /// Parse RP-JSON, snapping off-palette colors and fractional or
    /// out-of-range pixels onto the vocabulary.
    pub fn from_json_snapped(&self, text: &str) -> Result<RpPage, RpError> {
        let value: Value = serde_json::from_str(text).map_err(|e| RpError::Parse {
            path: format!("line {} column {}", e.line(), e.column()),
            message: e.to_string(),
        })?;
        self.from_json_value(&value, true)
    }

    pub fn from_json_value(&self, value: &Value, snap: bool) -> Result<RpPage, RpError> {
        let obj = value.as_object().ok_or_else(|| RpError::Parse {
            path: "$".into(),
            message: "expected an object keyed by element id".into(),
        })?;
        let mut page = RpPage::new();
        for (key, entry) in obj {
            let id: ElementId = key.parse().map_err(|message| RpError::Parse {
                path: format!("$.{key}"),
                message,
            })?;
            let params = entry.as_object().ok_or_else(|| RpError::Parse {
                path: format!("$.{key}"),
                message: "expected an object of parameters".into(),
            })?;
            let mut vector = RpVector::all_pad();
            let mut seen = [false; RpName::ALL.len()];
            for (name, raw) in params {
                let path = format!("$.{key}.{name}");
                let param: RpName = name
                    .parse()
                    .map_err(|_| RpError::UnknownParameter { path: path.clone() })?;
                let text = raw.as_str().ok_or_else(|| RpError::UnparseableValue {
                    path: path.clone(),
                    value: raw.to_string(),
                })?;
                vector[param] = self
                    .parse_value(param, text, snap)
                    .map_err(|_| RpError::UnparseableValue {
                        path,
                        value: text.to_string(),
                    })?;
                seen[param.index()] = true;
            }
            if let Some(missing) = RpName::ALL.into_iter().find(|p| !seen[p.index()]) {
                return Err(RpError::MissingParameter {
                    path: format!("$.{key}.{missing}"),
                });
            }
            page.insert(id, vector);
        }
        Ok(page)
    }
}
