//! The fixed rendering-parameter vocabulary.
//!
//! Every rendering parameter value is a token in a shared space of 1993 ids:
//!
//! ```text
//! 0    ..= 1920  integer pixels
//! 1921 ..= 1966  palette colors (46)
//! 1967 ..= 1969  font-style keywords
//! 1970 ..= 1978  font-weight 100..=900
//! 1979           line-height: normal
//! 1980 ..= 1985  text-align keywords
//! 1986 ..= 1987  text-decoration keywords
//! 1988 ..= 1991  text-transform keywords
//! 1992           PAD
//! ```

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RpError;

/// Total number of token ids.
pub const VOCAB_SIZE: usize = 1993;
/// Number of rendering parameters per element.
pub const NUM_PARAMS: usize = 13;
/// Number of palette colors.
pub const PALETTE_SIZE: usize = 46;
/// Largest pixel value representable by a token.
pub const MAX_PIXEL: u16 = 1920;
/// Largest font-size in pixels.
pub const MAX_FONT_SIZE: u16 = 32;
/// Largest numeric line-height in pixels.
pub const MAX_LINE_HEIGHT: u16 = 50;

/// Bumped whenever token assignments change.
pub const VOCAB_VERSION: &str = "rp-vocab-1";

pub const PIXEL_RANGE: RangeInclusive<u16> = 0..=1920;
pub const COLOR_RANGE: RangeInclusive<u16> = 1921..=1966;
pub const FONT_STYLE_RANGE: RangeInclusive<u16> = 1967..=1969;
pub const FONT_WEIGHT_RANGE: RangeInclusive<u16> = 1970..=1978;
pub const LINE_HEIGHT_NORMAL: u16 = 1979;
pub const TEXT_ALIGN_RANGE: RangeInclusive<u16> = 1980..=1985;
pub const TEXT_DECORATION_RANGE: RangeInclusive<u16> = 1986..=1987;
pub const TEXT_TRANSFORM_RANGE: RangeInclusive<u16> = 1988..=1991;
pub const PAD_TOKEN: u16 = 1992;

/// One of the 13 rendering parameters, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RpName {
    Left,
    Top,
    Width,
    Height,
    FontStyle,
    FontWeight,
    FontSize,
    LineHeight,
    TextAlign,
    TextDecoration,
    TextTransform,
    Color,
    BackgroundColor,
}

/// Which family a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RpCategory {
    Layout,
    Text,
    Color,
}

impl RpName {
    pub const ALL: [RpName; NUM_PARAMS] = [
        RpName::Left,
        RpName::Top,
        RpName::Width,
        RpName::Height,
        RpName::FontStyle,
        RpName::FontWeight,
        RpName::FontSize,
        RpName::LineHeight,
        RpName::TextAlign,
        RpName::TextDecoration,
        RpName::TextTransform,
        RpName::Color,
        RpName::BackgroundColor,
    ];

    pub const LAYOUT: [RpName; 4] = [RpName::Left, RpName::Top, RpName::Width, RpName::Height];

    /// The 9 text and color parameters that make up an element's style.
    pub const STYLE: [RpName; 9] = [
        RpName::FontStyle,
        RpName::FontWeight,
        RpName::FontSize,
        RpName::LineHeight,
        RpName::TextAlign,
        RpName::TextDecoration,
        RpName::TextTransform,
        RpName::Color,
        RpName::BackgroundColor,
    ];

    /// Position in [`RpName::ALL`].
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RpName::Left => "left",
            RpName::Top => "top",
            RpName::Width => "width",
            RpName::Height => "height",
            RpName::FontStyle => "font-style",
            RpName::FontWeight => "font-weight",
            RpName::FontSize => "font-size",
            RpName::LineHeight => "line-height",
            RpName::TextAlign => "text-align",
            RpName::TextDecoration => "text-decoration",
            RpName::TextTransform => "text-transform",
            RpName::Color => "color",
            RpName::BackgroundColor => "background-color",
        }
    }

    pub fn category(self) -> RpCategory {
        match self {
            RpName::Left | RpName::Top | RpName::Width | RpName::Height => RpCategory::Layout,
            RpName::Color | RpName::BackgroundColor => RpCategory::Color,
            _ => RpCategory::Text,
        }
    }

    pub fn is_layout(self) -> bool {
        self.category() == RpCategory::Layout
    }

    /// Keyword enumerants in token order, for keyword-valued parameters.
    pub fn keywords(self) -> &'static [Keyword] {
        match self {
            RpName::FontStyle => &FONT_STYLES,
            RpName::TextAlign => &TEXT_ALIGNS,
            RpName::TextDecoration => &TEXT_DECORATIONS,
            RpName::TextTransform => &TEXT_TRANSFORMS,
            _ => &[],
        }
    }

    /// Upper pixel bound for pixel-valued parameters.
    pub fn max_pixels(self) -> Option<u16> {
        match self {
            RpName::Left | RpName::Top | RpName::Width | RpName::Height => Some(MAX_PIXEL),
            RpName::FontSize => Some(MAX_FONT_SIZE),
            RpName::LineHeight => Some(MAX_LINE_HEIGHT),
            _ => None,
        }
    }

    /// All non-PAD tokens legal for this parameter, ascending.
    pub fn value_tokens(self) -> Vec<RpTokenId> {
        let ids: Vec<u16> = match self {
            RpName::Left | RpName::Top | RpName::Width | RpName::Height => PIXEL_RANGE.collect(),
            RpName::FontSize => (0..=MAX_FONT_SIZE).collect(),
            RpName::LineHeight => (0..=MAX_LINE_HEIGHT)
                .chain(std::iter::once(LINE_HEIGHT_NORMAL))
                .collect(),
            RpName::FontStyle => FONT_STYLE_RANGE.collect(),
            RpName::FontWeight => FONT_WEIGHT_RANGE.collect(),
            RpName::TextAlign => TEXT_ALIGN_RANGE.collect(),
            RpName::TextDecoration => TEXT_DECORATION_RANGE.collect(),
            RpName::TextTransform => TEXT_TRANSFORM_RANGE.collect(),
            RpName::Color | RpName::BackgroundColor => COLOR_RANGE.collect(),
        };
        ids.into_iter().map(RpTokenId).collect()
    }

    /// Whether `token` is a non-PAD value of this parameter.
    pub fn accepts_value_token(self, token: RpTokenId) -> bool {
        let t = token.0;
        match self {
            RpName::Left | RpName::Top | RpName::Width | RpName::Height => PIXEL_RANGE.contains(&t),
            RpName::FontSize => t <= MAX_FONT_SIZE,
            RpName::LineHeight => t <= MAX_LINE_HEIGHT || t == LINE_HEIGHT_NORMAL,
            RpName::FontStyle => FONT_STYLE_RANGE.contains(&t),
            RpName::FontWeight => FONT_WEIGHT_RANGE.contains(&t),
            RpName::TextAlign => TEXT_ALIGN_RANGE.contains(&t),
            RpName::TextDecoration => TEXT_DECORATION_RANGE.contains(&t),
            RpName::TextTransform => TEXT_TRANSFORM_RANGE.contains(&t),
            RpName::Color | RpName::BackgroundColor => COLOR_RANGE.contains(&t),
        }
    }
}

impl fmt::Display for RpName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RpName {
    type Err = RpError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RpName::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| RpError::UnknownParameter { path: s.to_string() })
    }
}

/// The nine vocabulary categories and their token ranges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VocabCategory {
    IntegerPixel,
    Color,
    FontStyle,
    FontWeight,
    LineHeight,
    TextAlign,
    TextDecoration,
    TextTransform,
    Pad,
}

impl VocabCategory {
    pub const ALL: [VocabCategory; 9] = [
        VocabCategory::IntegerPixel,
        VocabCategory::Color,
        VocabCategory::FontStyle,
        VocabCategory::FontWeight,
        VocabCategory::LineHeight,
        VocabCategory::TextAlign,
        VocabCategory::TextDecoration,
        VocabCategory::TextTransform,
        VocabCategory::Pad,
    ];

    pub fn range(self) -> RangeInclusive<u16> {
        match self {
            VocabCategory::IntegerPixel => PIXEL_RANGE,
            VocabCategory::Color => COLOR_RANGE,
            VocabCategory::FontStyle => FONT_STYLE_RANGE,
            VocabCategory::FontWeight => FONT_WEIGHT_RANGE,
            VocabCategory::LineHeight => LINE_HEIGHT_NORMAL..=LINE_HEIGHT_NORMAL,
            VocabCategory::TextAlign => TEXT_ALIGN_RANGE,
            VocabCategory::TextDecoration => TEXT_DECORATION_RANGE,
            VocabCategory::TextTransform => TEXT_TRANSFORM_RANGE,
            VocabCategory::Pad => PAD_TOKEN..=PAD_TOKEN,
        }
    }

    pub fn len(self) -> usize {
        let r = self.range();
        (*r.end() - *r.start()) as usize + 1
    }
}

/// A token id in `0..1993`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RpTokenId(pub u16);

impl RpTokenId {
    pub const PAD: RpTokenId = RpTokenId(PAD_TOKEN);

    pub fn is_pad(self) -> bool {
        self.0 == PAD_TOKEN
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for RpTokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Keyword enumerants used by the keyword-valued parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keyword {
    Normal,
    Italic,
    Oblique,
    Start,
    Center,
    End,
    Left,
    Right,
    Justify,
    None,
    Underline,
    Uppercase,
    Lowercase,
    Capitalize,
}

pub const FONT_STYLES: [Keyword; 3] = [Keyword::Normal, Keyword::Italic, Keyword::Oblique];
pub const TEXT_ALIGNS: [Keyword; 6] = [
    Keyword::Start,
    Keyword::Center,
    Keyword::End,
    Keyword::Left,
    Keyword::Right,
    Keyword::Justify,
];
pub const TEXT_DECORATIONS: [Keyword; 2] = [Keyword::None, Keyword::Underline];
pub const TEXT_TRANSFORMS: [Keyword; 4] = [
    Keyword::None,
    Keyword::Uppercase,
    Keyword::Lowercase,
    Keyword::Capitalize,
];

impl Keyword {
    pub fn as_str(self) -> &'static str {
        match self {
            Keyword::Normal => "normal",
            Keyword::Italic => "italic",
            Keyword::Oblique => "oblique",
            Keyword::Start => "start",
            Keyword::Center => "center",
            Keyword::End => "end",
            Keyword::Left => "left",
            Keyword::Right => "right",
            Keyword::Justify => "justify",
            Keyword::None => "none",
            Keyword::Underline => "underline",
            Keyword::Uppercase => "uppercase",
            Keyword::Lowercase => "lowercase",
            Keyword::Capitalize => "capitalize",
        }
    }
}

impl fmt::Display for Keyword {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An RGBA color; alpha in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rgba {
    pub r: u8,
    pub g: u8,
    pub b: u8,
    pub a: f32,
}

impl Rgba {
    pub const fn new(r: u8, g: u8, b: u8, a: f32) -> Self {
        Self { r, g, b, a }
    }

    fn same(&self, other: &Rgba) -> bool {
        self.r == other.r && self.g == other.g && self.b == other.b && (self.a - other.a).abs() < 1e-4
    }

    fn distance2(&self, other: &Rgba) -> f32 {
        let d = |x: u8, y: u8| (x as f32 - y as f32).powi(2);
        d(self.r, other.r) + d(self.g, other.g) + d(self.b, other.b) + (255.0 * (self.a - other.a)).powi(2)
    }
}

impl fmt::Display for Rgba {
    /// Browser computed-style form, e.g. `rgba(153, 204, 0, 1)`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rgba({}, {}, {}, {})", self.r, self.g, self.b, self.a)
    }
}

impl FromStr for Rgba {
    type Err = String;

    /// Accepts `rgba(r, g, b, a)` and `rgb(r, g, b)`, case-insensitive.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let (body, want) = if let Some(rest) = s.strip_prefix("rgba(") {
            (rest, 4)
        } else if let Some(rest) = s.strip_prefix("rgb(") {
            (rest, 3)
        } else {
            return Err(format!("not an rgb/rgba color: {s}"));
        };
        let body = body.strip_suffix(')').ok_or_else(|| format!("unterminated color: {s}"))?;
        let parts: Vec<&str> = body.split(',').map(str::trim).collect();
        if parts.len() != want {
            return Err(format!("expected {want} components in {s}"));
        }
        let channel = |p: &str| p.parse::<u8>().map_err(|_| format!("bad channel {p:?} in {s}"));
        let a = if want == 4 {
            let a: f32 = parts[3].parse().map_err(|_| format!("bad alpha in {s}"))?;
            if !(0.0..=1.0).contains(&a) {
                return Err(format!("alpha out of range in {s}"));
            }
            a
        } else {
            1.0
        };
        Ok(Rgba::new(channel(parts[0])?, channel(parts[1])?, channel(parts[2])?, a))
    }
}

/// Default palette of 46 widely used web colors.
pub const DEFAULT_PALETTE: [Rgba; PALETTE_SIZE] = [
    Rgba::new(0, 0, 0, 1.0),
    Rgba::new(255, 255, 255, 1.0),
    Rgba::new(0, 0, 0, 0.0),
    Rgba::new(153, 204, 0, 1.0),
    Rgba::new(255, 0, 0, 1.0),
    Rgba::new(0, 128, 0, 1.0),
    Rgba::new(0, 0, 255, 1.0),
    Rgba::new(255, 255, 0, 1.0),
    Rgba::new(255, 165, 0, 1.0),
    Rgba::new(128, 0, 128, 1.0),
    Rgba::new(255, 192, 203, 1.0),
    Rgba::new(165, 42, 42, 1.0),
    Rgba::new(128, 128, 128, 1.0),
    Rgba::new(192, 192, 192, 1.0),
    Rgba::new(211, 211, 211, 1.0),
    Rgba::new(169, 169, 169, 1.0),
    Rgba::new(105, 105, 105, 1.0),
    Rgba::new(245, 245, 245, 1.0),
    Rgba::new(220, 220, 220, 1.0),
    Rgba::new(51, 51, 51, 1.0),
    Rgba::new(102, 102, 102, 1.0),
    Rgba::new(153, 153, 153, 1.0),
    Rgba::new(204, 204, 204, 1.0),
    Rgba::new(238, 238, 238, 1.0),
    Rgba::new(0, 0, 128, 1.0),
    Rgba::new(0, 128, 128, 1.0),
    Rgba::new(0, 255, 255, 1.0),
    Rgba::new(255, 0, 255, 1.0),
    Rgba::new(128, 0, 0, 1.0),
    Rgba::new(128, 128, 0, 1.0),
    Rgba::new(0, 255, 0, 1.0),
    Rgba::new(75, 0, 130, 1.0),
    Rgba::new(238, 130, 238, 1.0),
    Rgba::new(255, 215, 0, 1.0),
    Rgba::new(240, 248, 255, 1.0),
    Rgba::new(70, 130, 180, 1.0),
    Rgba::new(30, 144, 255, 1.0),
    Rgba::new(0, 123, 255, 1.0),
    Rgba::new(40, 167, 69, 1.0),
    Rgba::new(220, 53, 69, 1.0),
    Rgba::new(255, 193, 7, 1.0),
    Rgba::new(23, 162, 184, 1.0),
    Rgba::new(52, 58, 64, 1.0),
    Rgba::new(248, 249, 250, 1.0),
    Rgba::new(0, 0, 0, 0.5),
    Rgba::new(255, 255, 255, 0.8),
];

/// Where the PAD token is an acceptable value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PadPolicy {
    /// PAD is never legal.
    Never,
    /// PAD may stand in for inapplicable text and color parameters
    /// (e.g. the text properties of an `<img>`); layout is always required.
    #[default]
    NonLayout,
    /// PAD is legal in every slot.
    Anywhere,
}

impl PadPolicy {
    pub fn allows(self, param: RpName) -> bool {
        match self {
            PadPolicy::Never => false,
            PadPolicy::NonLayout => !param.is_layout(),
            PadPolicy::Anywhere => true,
        }
    }
}

/// Vocabulary data: the palette and the PAD policy. Token ranges are fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    palette: Vec<Rgba>,
    pad_policy: PadPolicy,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self {
            palette: DEFAULT_PALETTE.to_vec(),
            pad_policy: PadPolicy::default(),
        }
    }
}

impl Vocabulary {
    /// A vocabulary with a custom palette. The palette must hold exactly 46
    /// pairwise distinct colors.
    pub fn new(palette: Vec<Rgba>, pad_policy: PadPolicy) -> Result<Self, RpError> {
        if palette.len() != PALETTE_SIZE {
            return Err(RpError::BadPalette(format!(
                "expected {PALETTE_SIZE} colors, got {}",
                palette.len()
            )));
        }
        for (i, a) in palette.iter().enumerate() {
            if !(0.0..=1.0).contains(&a.a) {
                return Err(RpError::BadPalette(format!("alpha out of range at {i}")));
            }
            if palette[..i].iter().any(|b| b.same(a)) {
                return Err(RpError::BadPalette(format!("duplicate color {a}")));
            }
        }
        Ok(Self { palette, pad_policy })
    }

    pub fn with_pad_policy(mut self, pad_policy: PadPolicy) -> Self {
        self.pad_policy = pad_policy;
        self
    }

    pub fn pad_policy(&self) -> PadPolicy {
        self.pad_policy
    }

    pub fn palette(&self) -> &[Rgba] {
        &self.palette
    }

    pub fn color(&self, id: u8) -> Option<Rgba> {
        self.palette.get(id as usize).copied()
    }

    /// Exact palette lookup.
    pub fn color_id(&self, color: &Rgba) -> Option<u8> {
        self.palette.iter().position(|c| c.same(color)).map(|i| i as u8)
    }

    /// Closest palette entry in RGBA space.
    pub fn nearest_color_id(&self, color: &Rgba) -> u8 {
        let mut best = (0usize, f32::INFINITY);
        for (i, c) in self.palette.iter().enumerate() {
            let d = c.distance2(color);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0 as u8
    }

    /// Tokens a generator may emit for `param`: its values, plus PAD when
    /// the policy allows it there.
    pub fn legal_tokens(&self, param: RpName) -> Vec<RpTokenId> {
        let mut tokens = param.value_tokens();
        if self.pad_policy.allows(param) {
            tokens.push(RpTokenId::PAD);
        }
        tokens
    }

    /// Whether `token` may appear in `param`'s slot.
    pub fn is_legal(&self, param: RpName, token: RpTokenId) -> bool {
        if token.is_pad() {
            self.pad_policy.allows(param)
        } else {
            param.accepts_value_token(token)
        }
    }
}
