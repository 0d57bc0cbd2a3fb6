//! Bit-exact conversion between 64-bit IDs and their named fields.
//!
//! Bits are indexed MSB-first: bit 0 is the most significant bit of the
//! integer, bit 63 the least significant. A layout is an ordered list of
//! half-open spans `[start, end)` that tile `[0, 64)` exactly. The first span
//! must be the `timestamp` field (unsigned epoch seconds, top bit included)
//! and the second the `millisecond` field. Everything after the millisecond
//! field is the *suffix*, which the rest of the crate treats as a categorical
//! ID "type".
//!
//! ```
//! use idslice::idcodec::{decode, IdLayout};
//!
//! let layout = IdLayout::default();
//! let id = decode(7341456348594310401, &layout);
//! assert_eq!(id.epoch_seconds, 1709316007);
//! assert_eq!(id.millisecond, 0);
//! assert_eq!(id.get("entity_type"), Some(13));
//! ```

use std::cmp::Ordering;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ID_BITS: u32 = 64;
pub const TIMESTAMP_FIELD: &str = "timestamp";
pub const MILLISECOND_FIELD: &str = "millisecond";

/// Millisecond values at or above this are decoded but flagged.
pub const MILLIS_PER_SECOND: u64 = 1000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LayoutError {
    #[error("layout has no fields")]
    Empty,
    #[error("field `{0}` has zero or negative width")]
    ZeroWidth(String),
    #[error("field `{name}` starts at bit {start}, expected {expected}")]
    NotContiguous { name: String, start: u32, expected: u32 },
    #[error("fields end at bit {0}, expected 64")]
    NotTiling(u32),
    #[error("duplicate field name `{0}`")]
    DuplicateField(String),
    #[error("layout must start with `timestamp` followed by `millisecond`")]
    MissingTimeFields,
    #[error("millisecond field must leave at least one suffix bit")]
    EmptySuffix,
    #[error("invalid layout definition: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("value {value} does not fit in field `{field}` ({width} bits)")]
    FieldOverflow { field: String, value: u64, width: u32 },
    #[error("field `{0}` given more than once")]
    DuplicateField(String),
}

/// One named span of bits, `[start, end)` counted from the MSB.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpan {
    pub name: String,
    pub start: u32,
    pub end: u32,
}

impl FieldSpan {
    pub fn new(name: impl Into<String>, start: u32, end: u32) -> Self {
        Self { name: name.into(), start, end }
    }

    pub fn width(&self) -> u32 {
        self.end - self.start
    }

    /// Right shift that brings this span down to bit position 0 (LSB).
    pub fn shift(&self) -> u32 {
        ID_BITS - self.end
    }

    pub fn mask(&self) -> u64 {
        low_mask(self.width())
    }

    #[inline]
    pub fn extract(&self, id: u64) -> u64 {
        (id >> self.shift()) & self.mask()
    }
}

#[inline]
fn low_mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayoutSpec {
    fields: Vec<FieldSpan>,
}

/// Declarative bitfield map of a 64-bit ID.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LayoutSpec", into = "LayoutSpec")]
pub struct IdLayout {
    fields: Vec<FieldSpan>,
}

impl TryFrom<LayoutSpec> for IdLayout {
    type Error = LayoutError;

    fn try_from(spec: LayoutSpec) -> Result<Self, Self::Error> {
        IdLayout::new(spec.fields)
    }
}

impl From<IdLayout> for LayoutSpec {
    fn from(layout: IdLayout) -> Self {
        LayoutSpec { fields: layout.fields }
    }
}

impl Default for IdLayout {
    /// timestamp `[0,32)`, millisecond `[32,42)`, sequence `[42,52)`,
    /// entity_type `[52,56)`, machine `[56,64)`.
    fn default() -> Self {
        Self::new(vec![
            FieldSpan::new(TIMESTAMP_FIELD, 0, 32),
            FieldSpan::new(MILLISECOND_FIELD, 32, 42),
            FieldSpan::new("sequence", 42, 52),
            FieldSpan::new("entity_type", 52, 56),
            FieldSpan::new("machine", 56, 64),
        ])
        .expect("default layout is valid")
    }
}

impl IdLayout {
    pub fn new(fields: Vec<FieldSpan>) -> Result<Self, LayoutError> {
        if fields.is_empty() {
            return Err(LayoutError::Empty);
        }
        let mut expected = 0;
        for (i, f) in fields.iter().enumerate() {
            if f.end <= f.start {
                return Err(LayoutError::ZeroWidth(f.name.clone()));
            }
            if f.start != expected {
                return Err(LayoutError::NotContiguous {
                    name: f.name.clone(),
                    start: f.start,
                    expected,
                });
            }
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(LayoutError::DuplicateField(f.name.clone()));
            }
            expected = f.end;
        }
        if expected != ID_BITS {
            return Err(LayoutError::NotTiling(expected));
        }
        if fields.len() < 2
            || fields[0].name != TIMESTAMP_FIELD
            || fields[1].name != MILLISECOND_FIELD
        {
            return Err(LayoutError::MissingTimeFields);
        }
        if fields[1].end >= ID_BITS {
            return Err(LayoutError::EmptySuffix);
        }
        Ok(Self { fields })
    }

    /// Parse a layout from TOML. Accepts either a document with a `[layout]`
    /// table (the toolkit config file) or one with a top-level `fields` array.
    pub fn from_toml_str(text: &str) -> Result<Self, LayoutError> {
        let value: toml::Table = text.parse().map_err(|e: toml::de::Error| LayoutError::Parse(e.to_string()))?;
        let table = match value.get("layout") {
            Some(layout) => layout.clone(),
            None => toml::Value::Table(value),
        };
        table.try_into().map_err(|e: toml::de::Error| LayoutError::Parse(e.to_string()))
    }

    pub fn fields(&self) -> &[FieldSpan] {
        &self.fields
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpan> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn timestamp(&self) -> &FieldSpan {
        &self.fields[0]
    }

    pub fn millisecond(&self) -> &FieldSpan {
        &self.fields[1]
    }

    /// Fields making up the suffix, in bit order.
    pub fn suffix_fields(&self) -> &[FieldSpan] {
        &self.fields[2..]
    }

    /// First bit of the suffix span.
    pub fn suffix_start(&self) -> u32 {
        self.fields[1].end
    }

    pub fn suffix_width(&self) -> u32 {
        ID_BITS - self.suffix_start()
    }

    #[inline]
    pub fn timestamp_of(&self, id: u64) -> u64 {
        self.fields[0].extract(id)
    }

    #[inline]
    pub fn millisecond_of(&self, id: u64) -> u64 {
        self.fields[1].extract(id)
    }

    #[inline]
    pub fn suffix_of(&self, id: u64) -> u64 {
        id & low_mask(self.suffix_width())
    }

    #[inline]
    pub fn create_time_of(&self, id: u64) -> CreateTime {
        CreateTime {
            seconds: self.timestamp_of(id),
            millisecond: self.millisecond_of(id),
        }
    }

    /// Position of a suffix field relative to the suffix span:
    /// `(shift, mask)` such that `(suffix >> shift) & mask` is its value.
    pub fn suffix_field_slot(&self, name: &str) -> Option<(u32, u64)> {
        self.suffix_fields()
            .iter()
            .find(|f| f.name == name)
            .map(|f| (f.shift(), f.mask()))
    }

    /// Assemble an ID from timestamp, millisecond and suffix bits.
    pub fn compose(&self, seconds: u64, millisecond: u64, suffix: u64) -> Result<u64, CodecError> {
        check_fits(self.timestamp(), seconds)?;
        check_fits(self.millisecond(), millisecond)?;
        if suffix > low_mask(self.suffix_width()) {
            return Err(CodecError::FieldOverflow {
                field: "suffix".to_string(),
                value: suffix,
                width: self.suffix_width(),
            });
        }
        Ok(self.compose_unchecked(seconds, millisecond, suffix))
    }

    /// [`compose`](Self::compose) without range checks; out-of-range inputs
    /// are masked.
    #[inline]
    pub fn compose_unchecked(&self, seconds: u64, millisecond: u64, suffix: u64) -> u64 {
        let ts = self.timestamp();
        let ms = self.millisecond();
        ((seconds & ts.mask()) << ts.shift())
            | ((millisecond & ms.mask()) << ms.shift())
            | (suffix & low_mask(self.suffix_width()))
    }
}

fn check_fits(field: &FieldSpan, value: u64) -> Result<(), CodecError> {
    if value > field.mask() {
        Err(CodecError::FieldOverflow {
            field: field.name.clone(),
            value,
            width: field.width(),
        })
    } else {
        Ok(())
    }
}

/// The suffix bits of an ID, as an unsigned integer of `width` bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SuffixPattern {
    pub bits: u64,
    pub width: u32,
}

impl SuffixPattern {
    pub fn new(bits: u64, width: u32) -> Self {
        debug_assert!(bits <= low_mask(width));
        Self { bits, width }
    }
}

impl fmt::Display for SuffixPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:0width$b}", self.bits, width = self.width as usize)
    }
}

/// Creation time embedded in an ID, at millisecond resolution.
///
/// Ordered by `(seconds, millisecond)`, which for a fixed suffix is the same
/// as the integer order of the IDs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CreateTime {
    pub seconds: u64,
    pub millisecond: u64,
}

impl CreateTime {
    pub fn as_secs_f64(&self) -> f64 {
        self.seconds as f64 + self.millisecond as f64 / MILLIS_PER_SECOND as f64
    }
}

impl Ord for CreateTime {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.seconds, self.millisecond).cmp(&(other.seconds, other.millisecond))
    }
}

impl PartialOrd for CreateTime {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// An ID split into its fields.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedId {
    pub raw: u64,
    pub epoch_seconds: u64,
    pub millisecond: u64,
    /// Values in layout order, including timestamp and millisecond.
    pub field_values: Vec<(String, u64)>,
    pub suffix_pattern: SuffixPattern,
    /// Set when the millisecond field holds 1000..=1023.
    pub anomalous_ms: bool,
}

impl DecodedId {
    pub fn get(&self, name: &str) -> Option<u64> {
        self.field_values.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn create_time(&self) -> CreateTime {
        CreateTime {
            seconds: self.epoch_seconds,
            millisecond: self.millisecond,
        }
    }
}

pub fn decode(id: u64, layout: &IdLayout) -> DecodedId {
    let field_values = layout
        .fields()
        .iter()
        .map(|f| (f.name.clone(), f.extract(id)))
        .collect();
    let millisecond = layout.millisecond_of(id);
    DecodedId {
        raw: id,
        epoch_seconds: layout.timestamp_of(id),
        millisecond,
        field_values,
        suffix_pattern: SuffixPattern::new(layout.suffix_of(id), layout.suffix_width()),
        anomalous_ms: millisecond >= MILLIS_PER_SECOND,
    }
}

/// Build an ID from named field values. Fields not mentioned are zero.
pub fn encode<I, K>(fields: I, layout: &IdLayout) -> Result<u64, CodecError>
where
    I: IntoIterator<Item = (K, u64)>,
    K: AsRef<str>,
{
    let mut id = 0u64;
    let mut seen = 0u64;
    for (name, value) in fields {
        let name = name.as_ref();
        let (index, span) = layout
            .fields()
            .iter()
            .enumerate()
            .find(|(_, f)| f.name == name)
            .ok_or_else(|| CodecError::UnknownField(name.to_string()))?;
        if seen & (1 << index) != 0 {
            return Err(CodecError::DuplicateField(name.to_string()));
        }
        seen |= 1 << index;
        check_fits(span, value)?;
        id |= value << span.shift();
    }
    Ok(id)
}

pub fn create_time_from_id(id: u64, layout: &IdLayout) -> CreateTime {
    layout.create_time_of(id)
}
