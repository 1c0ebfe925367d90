use std::collections::BTreeMap;
use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use super::TranslateError;
use crate::bus::Topic;

pub const UNIFIED_SCHEMA: &str = "coin.unified.v1";

/// Named tensor fields of a frame, kept sorted by name.
pub type Fields = BTreeMap<String, FieldValue>;

#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    F32(Vec<f32>),
    I64(Vec<i64>),
    U8(Vec<u8>),
}

impl FieldData {
    pub fn len(&self) -> usize {
        match self {
            FieldData::F32(v) => v.len(),
            FieldData::I64(v) => v.len(),
            FieldData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> &'static str {
        match self {
            FieldData::F32(_) => "f32",
            FieldData::I64(_) => "i64",
            FieldData::U8(_) => "u8",
        }
    }
}

/// A row-major tensor: `data.len() == shape.iter().product()`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldValue {
    shape: Vec<usize>,
    data: FieldData,
}

impl FieldValue {
    pub fn new(shape: Vec<usize>, data: FieldData) -> Result<Self, TranslateError> {
        let fv = FieldValue { shape, data };
        fv.check().map_err(TranslateError::InvalidField)?;
        Ok(fv)
    }

    pub fn f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TranslateError> {
        Self::new(shape, FieldData::F32(data))
    }

    /// 1-D f32 field. Panics on empty or non-finite input.
    pub fn vector(data: Vec<f32>) -> Self {
        let n = data.len();
        Self::f32(vec![n], data).expect("vector field must be non-empty and finite")
    }

    pub fn scalar(x: f32) -> Self {
        FieldValue { shape: vec![1], data: FieldData::F32(vec![x]) }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &FieldData {
        &self.data
    }

    pub fn dtype(&self) -> &'static str {
        self.data.dtype()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values widened to f32, regardless of dtype.
    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            FieldData::F32(v) => v.clone(),
            FieldData::I64(v) => v.iter().map(|&x| x as f32).collect(),
            FieldData::U8(v) => v.iter().map(|&x| x as f32).collect(),
        }
    }

    pub fn as_f32(&self) -> Option<&[f32]> {
        match &self.data {
            FieldData::F32(v) => Some(v),
            _ => None,
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.shape.iter().any(|&d| d == 0) {
            return Err(format!("shape {:?} has a zero dimension", self.shape));
        }
        let expected: usize = self.shape.iter().product();
        if expected != self.data.len() {
            return Err(format!(
                "data length {} does not match shape {:?} (product {expected})",
                self.data.len(),
                self.shape
            ));
        }
        if let FieldData::F32(v) = &self.data {
            if let Some(x) = v.iter().find(|x| !x.is_finite()) {
                return Err(format!("non-finite value {x}"));
            }
        }
        Ok(())
    }
}

impl Serialize for FieldValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut st = s.serialize_struct("FieldValue", 3)?;
        st.serialize_field("dtype", self.dtype())?;
        st.serialize_field("shape", &self.shape)?;
        match &self.data {
            FieldData::F32(v) => st.serialize_field("data", v)?,
            FieldData::I64(v) => st.serialize_field("data", v)?,
            FieldData::U8(v) => st.serialize_field("data", v)?,
        }
        st.end()
    }
}

impl<'de> Deserialize<'de> for FieldValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            dtype: String,
            shape: Vec<usize>,
            data: Vec<serde_json::Number>,
        }
        let raw = Raw::deserialize(d)?;
        let data = match raw.dtype.as_str() {
            "f32" => FieldData::F32(
                raw.data
                    .iter()
                    .map(|n| n.as_f64().map(|x| x as f32).ok_or_else(|| de::Error::custom("expected f32")))
                    .collect::<Result<_, _>>()?,
            ),
            "i64" => FieldData::I64(
                raw.data
                    .iter()
                    .map(|n| n.as_i64().ok_or_else(|| de::Error::custom("expected i64")))
                    .collect::<Result<_, _>>()?,
            ),
            "u8" => FieldData::U8(
                raw.data
                    .iter()
                    .map(|n| {
                        n.as_u64()
                            .and_then(|x| u8::try_from(x).ok())
                            .ok_or_else(|| de::Error::custom("expected u8"))
                    })
                    .collect::<Result<_, _>>()?,
            ),
            other => return Err(de::Error::custom(format!("unknown dtype {other:?}"))),
        };
        let fv = FieldValue { shape: raw.shape, data };
        fv.check().map_err(de::Error::custom)?;
        Ok(fv)
    }
}

/// Zero-sized marker that (de)serializes as the literal schema id.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct UnifiedSchema;

impl Serialize for UnifiedSchema {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(UNIFIED_SCHEMA)
    }
}

impl<'de> Deserialize<'de> for UnifiedSchema {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == UNIFIED_SCHEMA {
            Ok(UnifiedSchema)
        } else {
            Err(de::Error::custom(format!("unsupported schema {s:?}")))
        }
    }
}

/// One timestamped sample in the unified format. Serialized key order is
/// fixed (schema, topic, source_id, seq, t_ns, fields) and field names are
/// sorted, so encoding is canonical.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnifiedFrame {
    pub schema: UnifiedSchema,
    pub topic: Topic,
    pub source_id: String,
    pub seq: u64,
    pub t_ns: i64,
    pub fields: Fields,
}

impl UnifiedFrame {
    pub fn new(topic: Topic, source_id: impl Into<String>, seq: u64, t_ns: i64, fields: Fields) -> Self {
        UnifiedFrame { schema: UnifiedSchema, topic, source_id: source_id.into(), seq, t_ns, fields }
    }

    pub fn validate(&self) -> Result<(), TranslateError> {
        for (name, fv) in &self.fields {
            fv.check().map_err(|e| TranslateError::InvalidField(format!("{name}: {e}")))?;
        }
        Ok(())
    }
}

/// Canonical JSON bytes of a frame.
pub fn encode_json(frame: &UnifiedFrame) -> Result<Vec<u8>, TranslateError> {
    frame.validate()?;
    serde_json::to_vec(frame).map_err(|e| TranslateError::InvalidField(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeError {
    /// Byte offset into the input where decoding failed.
    pub offset: usize,
    pub message: String,
}

impl fmt::Display for DecodeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at byte {}", self.message, self.offset)
    }
}

impl std::error::Error for DecodeError {}

fn json_error_offset(input: &[u8], err: &serde_json::Error) -> usize {
    let (line, column) = (err.line(), err.column());
    if line == 0 {
        return 0;
    }
    let line_start: usize = input
        .split(|&b| b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(input.len())
}

pub fn decode_json(bytes: &[u8]) -> Result<UnifiedFrame, DecodeError> {
    serde_json::from_slice(bytes).map_err(|e| DecodeError {
        offset: json_error_offset(bytes, &e),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frame_with(fields: Fields) -> UnifiedFrame {
        UnifiedFrame::new(Topic::new("state/follower").unwrap(), "follower", 3, 1_500_000_000, fields)
    }

    #[test]
    fn canonical_bytes() {
        let mut fields = Fields::new();
        fields.insert("z".into(), FieldValue::scalar(1.0));
        fields.insert("a".into(), FieldValue::f32(vec![2], vec![0.1, -2.5]).unwrap());
        fields.insert("n".into(), FieldValue::new(vec![1], FieldData::I64(vec![-7])).unwrap());
        let bytes = encode_json(&frame_with(fields)).unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes).unwrap(),
            concat!(
                r#"{"schema":"coin.unified.v1","topic":"state/follower","source_id":"follower","seq":3,"t_ns":1500000000,"fields":{"#,
                r#""a":{"dtype":"f32","shape":[2],"data":[0.1,-2.5]},"#,
                r#""n":{"dtype":"i64","shape":[1],"data":[-7]},"#,
                r#""z":{"dtype":"f32","shape":[1],"data":[1.0]}}}"#
            )
        );
    }

    #[test]
    fn empty_fields_round_trip() {
        let f = frame_with(Fields::new());
        let bytes = encode_json(&f).unwrap();
        assert_eq!(decode_json(&bytes).unwrap(), f);
    }

    #[test]
    fn length_shape_mismatch_is_a_decode_error() {
        let text = r#"{"schema":"coin.unified.v1","topic":"a/b","source_id":"s","seq":0,"t_ns":0,"fields":{"x":{"dtype":"f32","shape":[3],"data":[1,2]}}}"#;
        let err = decode_json(text.as_bytes()).unwrap_err();
        assert!(err.message.contains("does not match shape"), "{err}");
        assert!(err.offset > 0 && err.offset <= text.len());
    }

    #[test]
    fn syntax_error_offset_points_into_input() {
        let text = b"{\"schema\":\"coin.unified.v1\",,}";
        let err = decode_json(text).unwrap_err();
        assert_eq!(err.offset, 28);
        assert!(decode_json(b"{\"schema\":\"coin.unified.v2\"}").is_err());
        assert!(decode_json(&[0xff, 0xfe]).is_err());
    }

    #[test]
    fn non_finite_values_cannot_be_encoded() {
        let mut fields = Fields::new();
        fields.insert("x".into(), FieldValue { shape: vec![1], data: FieldData::F32(vec![f32::NAN]) });
        assert!(encode_json(&frame_with(fields)).is_err());
        assert!(FieldValue::f32(vec![1], vec![f32::INFINITY]).is_err());
    }

    fn arb_field() -> impl Strategy<Value = FieldValue> {
        let shape = prop::collection::vec(1usize..4, 1..3);
        shape.prop_flat_map(|shape| {
            let n: usize = shape.iter().product();
            prop_oneof![
                prop::collection::vec(
                    any::<f32>().prop_filter("finite", |x| x.is_finite()),
                    n
                )
                .prop_map(FieldData::F32),
                prop::collection::vec(any::<i64>(), n).prop_map(FieldData::I64),
                prop::collection::vec(any::<u8>(), n).prop_map(FieldData::U8),
            ]
            .prop_map(move |data| FieldValue::new(shape.clone(), data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(
            fields in prop::collection::btree_map("[a-z_]{1,8}", arb_field(), 0..5),
            seq in any::<u64>(),
            t_ns in any::<i64>(),
            source in "[a-z0-9]{1,6}",
        ) {
            let f = UnifiedFrame::new(Topic::new("obs/scene").unwrap(), source, seq, t_ns, fields);
            let bytes = encode_json(&f).unwrap();
            let back = decode_json(&bytes).unwrap();
            // PartialEq on f32 treats 0.0 == -0.0; compare bits as well
            for (a, b) in f.fields.values().zip(back.fields.values()) {
                if let (FieldData::F32(x), FieldData::F32(y)) = (a.data(), b.data()) {
                    prop_assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
                }
            }
            prop_assert_eq!(&back, &f);
            prop_assert_eq!(encode_json(&back).unwrap(), bytes);
        }
    }
}
