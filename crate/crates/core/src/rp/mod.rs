//! Rendering parameters: values, token vectors and their text forms.
//!
//! An element's appearance is fixed by 13 browser-computed CSS properties.
//! [`Vocabulary`] maps each semantic value to a token id; [`RpVector`] holds
//! one token per parameter; [`RpPage`] keys vectors by pre-order element id
//! and converts to and from RP-JSON ([`json`]) and class-selector CSS
//! ([`css`]).

pub mod css;
pub mod json;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Index, IndexMut};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use vocab::*;

#[derive(Debug, Error)]
pub enum RpError {
    #[error("{value} is out of range for {param}")]
    OutOfRange { param: RpName, value: String },
    #[error("{value} is the wrong kind of value for {param}")]
    WrongKind { param: RpName, value: String },
    #[error("token {token} is not legal for {param}")]
    IllegalToken { param: RpName, token: RpTokenId },
    #[error("invalid rendering-parameter vector for {element}: {violations:?}")]
    InvalidVector {
        element: ElementId,
        violations: Vec<Violation>,
    },
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
    #[error("unknown rendering parameter at {path}")]
    UnknownParameter { path: String },
    #[error("missing rendering parameter at {path}")]
    MissingParameter { path: String },
    #[error("unparseable value {value:?} at {path}")]
    UnparseableValue { path: String, value: String },
    #[error("bad palette: {0}")]
    BadPalette(String),
}

/// A semantic rendering-parameter value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RpValue {
    /// Integer pixels (layout, font-size, numeric line-height).
    Px(u16),
    /// Index into the 46-color palette.
    Color(u8),
    /// Numeric font weight, 100..=900 in steps of 100.
    Weight(u16),
    Keyword(Keyword),
    Pad,
}

impl fmt::Display for RpValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RpValue::Px(n) => write!(f, "{n}px"),
            RpValue::Color(id) => write!(f, "color#{id}"),
            RpValue::Weight(w) => write!(f, "{w}"),
            RpValue::Keyword(k) => write!(f, "{k}"),
            RpValue::Pad => f.write_str("PAD"),
        }
    }
}

/// A slot whose token is not legal under the vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub slot: RpName,
    pub token: RpTokenId,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.slot, self.token)
    }
}

impl Vocabulary {
    /// Map a value to its token id.
    pub fn encode(&self, param: RpName, value: RpValue) -> Result<RpTokenId, RpError> {
        let out_of_range = || RpError::OutOfRange {
            param,
            value: value.to_string(),
        };
        let wrong_kind = || RpError::WrongKind {
            param,
            value: value.to_string(),
        };
        let id = match (param, value) {
            (_, RpValue::Pad) => {
                if self.pad_policy().allows(param) {
                    PAD_TOKEN
                } else {
                    return Err(wrong_kind());
                }
            }
            (_, RpValue::Px(n)) => match param.max_pixels() {
                Some(max) if n <= max => n,
                Some(_) => return Err(out_of_range()),
                None => return Err(wrong_kind()),
            },
            (RpName::Color | RpName::BackgroundColor, RpValue::Color(id)) => {
                if (id as usize) < PALETTE_SIZE {
                    *COLOR_RANGE.start() + id as u16
                } else {
                    return Err(out_of_range());
                }
            }
            (RpName::FontWeight, RpValue::Weight(w)) => {
                if (100..=900).contains(&w) && w % 100 == 0 {
                    *FONT_WEIGHT_RANGE.start() + (w / 100 - 1)
                } else {
                    return Err(out_of_range());
                }
            }
            (RpName::LineHeight, RpValue::Keyword(Keyword::Normal)) => LINE_HEIGHT_NORMAL,
            (_, RpValue::Keyword(k)) => {
                let base = match param {
                    RpName::FontStyle => *FONT_STYLE_RANGE.start(),
                    RpName::TextAlign => *TEXT_ALIGN_RANGE.start(),
                    RpName::TextDecoration => *TEXT_DECORATION_RANGE.start(),
                    RpName::TextTransform => *TEXT_TRANSFORM_RANGE.start(),
                    _ => return Err(wrong_kind()),
                };
                match param.keywords().iter().position(|&x| x == k) {
                    Some(i) => base + i as u16,
                    None => return Err(wrong_kind()),
                }
            }
            _ => return Err(wrong_kind()),
        };
        Ok(RpTokenId(id))
    }

    /// Map a token back to its value.
    pub fn decode(&self, param: RpName, token: RpTokenId) -> Result<RpValue, RpError> {
        if !self.is_legal(param, token) {
            return Err(RpError::IllegalToken { param, token });
        }
        let t = token.0;
        Ok(if token.is_pad() {
            RpValue::Pad
        } else if PIXEL_RANGE.contains(&t) {
            RpValue::Px(t)
        } else if COLOR_RANGE.contains(&t) {
            RpValue::Color((t - COLOR_RANGE.start()) as u8)
        } else if FONT_WEIGHT_RANGE.contains(&t) {
            RpValue::Weight((t - FONT_WEIGHT_RANGE.start() + 1) * 100)
        } else if t == LINE_HEIGHT_NORMAL {
            RpValue::Keyword(Keyword::Normal)
        } else {
            let base = match param {
                RpName::FontStyle => *FONT_STYLE_RANGE.start(),
                RpName::TextAlign => *TEXT_ALIGN_RANGE.start(),
                RpName::TextDecoration => *TEXT_DECORATION_RANGE.start(),
                _ => *TEXT_TRANSFORM_RANGE.start(),
            };
            RpValue::Keyword(param.keywords()[(t - base) as usize])
        })
    }

    /// Every slot whose token is illegal for its parameter.
    pub fn validate(&self, v: &RpVector) -> Vec<Violation> {
        RpName::ALL
            .into_iter()
            .filter(|&p| !self.is_legal(p, v[p]))
            .map(|p| Violation { slot: p, token: v[p] })
            .collect()
    }

    /// Browser computed-style text for a legal token, or `None` for PAD.
    pub fn format_value(&self, param: RpName, token: RpTokenId) -> Result<Option<String>, RpError> {
        Ok(match self.decode(param, token)? {
            RpValue::Px(n) => Some(format!("{n}px")),
            RpValue::Color(id) => Some(self.color(id).expect("decoded color id is in palette").to_string()),
            RpValue::Weight(w) => Some(w.to_string()),
            RpValue::Keyword(k) => Some(k.as_str().to_string()),
            RpValue::Pad => None,
        })
    }

    /// Parse computed-style text into a token.
    ///
    /// With `snap` set, colors not in the palette map to the nearest entry,
    /// fractional pixels round, and pixel values clamp into range; this is
    /// the mode for importing values extracted from a real browser.
    pub fn parse_value(&self, param: RpName, text: &str, snap: bool) -> Result<RpTokenId, String> {
        let text = text.trim();
        if text == "PAD" {
            return self
                .encode(param, RpValue::Pad)
                .map_err(|e| e.to_string());
        }
        let value = match param {
            RpName::Color | RpName::BackgroundColor => {
                let c: Rgba = text.parse()?;
                let id = match self.color_id(&c) {
                    Some(id) => id,
                    None if snap => self.nearest_color_id(&c),
                    None => return Err(format!("{c} is not in the palette")),
                };
                RpValue::Color(id)
            }
            RpName::FontWeight => {
                let w: u16 = text.parse().map_err(|_| format!("bad font-weight {text:?}"))?;
                let w = if snap { (w.clamp(100, 900) + 50) / 100 * 100 } else { w };
                RpValue::Weight(w.min(900))
            }
            RpName::LineHeight if text == "normal" => RpValue::Keyword(Keyword::Normal),
            RpName::FontStyle | RpName::TextAlign | RpName::TextDecoration | RpName::TextTransform => {
                let k = param
                    .keywords()
                    .iter()
                    .find(|k| k.as_str() == text)
                    .ok_or_else(|| format!("unknown {param} keyword {text:?}"))?;
                RpValue::Keyword(*k)
            }
            _ => {
                let num = text
                    .strip_suffix("px")
                    .ok_or_else(|| format!("expected pixels, got {text:?}"))?;
                let px = if snap {
                    let f: f64 = num.parse().map_err(|_| format!("bad pixel value {text:?}"))?;
                    let max = param.max_pixels().unwrap_or(MAX_PIXEL) as f64;
                    f.round().clamp(0.0, max) as u16
                } else {
                    num.parse::<u16>().map_err(|_| format!("bad pixel value {text:?}"))?
                };
                RpValue::Px(px)
            }
        };
        self.encode(param, value).map_err(|e| e.to_string())
    }
}

/// The 13 tokens of one element, indexed by [`RpName`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RpVector(pub [RpTokenId; NUM_PARAMS]);

impl RpVector {
    pub fn all_pad() -> Self {
        RpVector([RpTokenId::PAD; NUM_PARAMS])
    }

    pub fn from_tokens(tokens: [u16; NUM_PARAMS]) -> Self {
        RpVector(tokens.map(RpTokenId))
    }

    pub fn tokens(&self) -> &[RpTokenId; NUM_PARAMS] {
        &self.0
    }

    /// `(left, top, width, height)` in pixels; `None` if any slot is not a pixel.
    pub fn layout_px(&self) -> Option<[u16; 4]> {
        let px = |p: RpName| {
            let t = self[p].0;
            PIXEL_RANGE.contains(&t).then_some(t)
        };
        Some([
            px(RpName::Left)?,
            px(RpName::Top)?,
            px(RpName::Width)?,
            px(RpName::Height)?,
        ])
    }

    /// The 9 style tokens; two elements share a style iff these are equal.
    pub fn style_key(&self) -> [RpTokenId; 9] {
        RpName::STYLE.map(|p| self[p])
    }
}

impl Index<RpName> for RpVector {
    type Output = RpTokenId;

    fn index(&self, p: RpName) -> &RpTokenId {
        &self.0[p.index()]
    }
}

impl IndexMut<RpName> for RpVector {
    fn index_mut(&mut self, p: RpName) -> &mut RpTokenId {
        &mut self.0[p.index()]
    }
}

/// A 1-based pre-order element id, rendered as the class name `ele{N}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ElementId(pub u32);

impl fmt::Display for ElementId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ele{}", self.0)
    }
}

impl FromStr for ElementId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix("ele")
            .filter(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()) && !n.starts_with('0'))
            .and_then(|n| n.parse().ok())
            .map(ElementId)
            .ok_or_else(|| format!("not an element id: {s:?}"))
    }
}

/// Rendering parameters of a page, keyed and ordered by element id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RpPage(pub BTreeMap<ElementId, RpVector>);

impl RpPage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, id: ElementId) -> Option<&RpVector> {
        self.0.get(&id)
    }

    pub fn insert(&mut self, id: ElementId, v: RpVector) -> Option<RpVector> {
        self.0.insert(id, v)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ElementId, &RpVector)> {
        self.0.iter().map(|(k, v)| (*k, v))
    }

    pub fn vectors(&self) -> impl Iterator<Item = &RpVector> {
        self.0.values()
    }

    /// Validate every vector; the first failing element is reported.
    pub fn validate(&self, vocab: &Vocabulary) -> Result<(), RpError> {
        for (id, v) in self.iter() {
            let violations = vocab.validate(v);
            if !violations.is_empty() {
                return Err(RpError::InvalidVector { element: id, violations });
            }
        }
        Ok(())
    }
}

impl FromIterator<(ElementId, RpVector)> for RpPage {
    fn from_iter<I: IntoIterator<Item = (ElementId, RpVector)>>(iter: I) -> Self {
        RpPage(iter.into_iter().collect())
    }
}
