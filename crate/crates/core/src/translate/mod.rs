//! Translation of native device messages into [`UnifiedFrame`]s.
//!
//! An adapter is registered per native schema and bound to the topic that
//! carries that schema. Translation keeps `source_id`, `seq` and `t_ns`
//! untouched; downstream alignment depends on nothing else.

mod frame;

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{Bus, BusError, RawMessage, Subscription, Topic};

pub use frame::{
    decode_json, encode_json, DecodeError, FieldData, FieldValue, Fields, UnifiedFrame,
    UnifiedSchema, UNIFIED_SCHEMA,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TranslateError {
    #[error("schema {0:?} already registered")]
    DuplicateSchema(String),
    #[error("topic {0} already bound to schema {1:?}")]
    DuplicateTopic(String, String),
    #[error("invalid adapter spec: {0}")]
    InvalidSpec(String),
    #[error("no adapter for topic {0}")]
    NoAdapter(String),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("invalid field: {0}")]
    InvalidField(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// How one output field is produced from a JSON native payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRule {
    /// Key in the native JSON object.
    pub source: String,
    /// Output field name.
    pub target: String,
    /// Multiplier applied to every numeric value (unit conversion).
    #[serde(default = "one")]
    pub scale: f32,
    /// Output shape; defaults to `[len]`.
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
}

fn one() -> f32 {
    1.0
}

impl FieldRule {
    pub fn new(source: &str, target: &str) -> Self {
        FieldRule { source: source.into(), target: target.into(), scale: 1.0, shape: None }
    }

    pub fn scaled(mut self, scale: f32) -> Self {
        self.scale = scale;
        self
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        self.shape = Some(shape);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterSpec {
    pub native_schema_id: String,
    /// Topic on which native messages of this schema arrive.
    pub input_topic: Topic,
    pub output_topic: Topic,
    #[serde(default)]
    pub rules: Vec<FieldRule>,
}

impl AdapterSpec {
    pub fn validate(&self) -> Result<(), TranslateError> {
        if self.native_schema_id.is_empty() {
            return Err(TranslateError::InvalidSpec("empty schema id".into()));
        }
        let mut targets = BTreeSet::new();
        for r in &self.rules {
            if !targets.insert(r.target.as_str()) {
                return Err(TranslateError::InvalidSpec(format!(
                    "output field {:?} produced by more than one rule",
                    r.target
                )));
            }
        }
        Ok(())
    }

    /// Adapter that applies `rules` to a JSON object payload. Booleans map to
    /// 1.0 / 0.0, numbers and numeric arrays are scaled and reshaped.
    pub fn rule_adapter(&self) -> AdapterFn {
        let rules = self.rules.clone();
        Arc::new(move |payload: &[u8]| apply_rules(&rules, payload))
    }
}

/// A pure function from native payload bytes to unified fields.
pub type AdapterFn = Arc<dyn Fn(&[u8]) -> Result<Fields, TranslateError> + Send + Sync>;

fn apply_rules(rules: &[FieldRule], payload: &[u8]) -> Result<Fields, TranslateError> {
    let value: serde_json::Value = serde_json::from_slice(payload)
        .map_err(|e| TranslateError::MalformedPayload(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| TranslateError::MalformedPayload("payload is not a JSON object".into()))?;
    let mut fields = Fields::new();
    for rule in rules {
        let v = obj
            .get(&rule.source)
            .ok_or_else(|| TranslateError::MalformedPayload(format!("missing key {:?}", rule.source)))?;
        let data = flatten_numeric(v)
            .ok_or_else(|| TranslateError::MalformedPayload(format!("key {:?} is not numeric", rule.source)))?;
        let data: Vec<f32> = data.into_iter().map(|x| x as f32 * rule.scale).collect();
        let shape = rule.shape.clone().unwrap_or_else(|| vec![data.len()]);
        let fv = FieldValue::f32(shape, data).map_err(|e| {
            TranslateError::MalformedPayload(format!("key {:?}: {e}", rule.source))
        })?;
        fields.insert(rule.target.clone(), fv);
    }
    Ok(fields)
}

fn flatten_numeric(v: &serde_json::Value) -> Option<Vec<f64>> {
    match v {
        serde_json::Value::Bool(b) => Some(vec![if *b { 1.0 } else { 0.0 }]),
        serde_json::Value::Number(n) => n.as_f64().map(|x| vec![x]),
        serde_json::Value::Array(items) => {
            let mut out = Vec::with_capacity(items.len());
            for it in items {
                out.extend(flatten_numeric(it)?);
            }
            Some(out)
        }
        _ => None,
    }
}

struct Adapter {
    spec: AdapterSpec,
    apply: AdapterFn,
}

/// Registry of adapters keyed by native schema id.
#[derive(Default)]
pub struct Translator {
    adapters: Vec<Adapter>,
    by_schema: HashMap<String, usize>,
    by_topic: HashMap<Topic, usize>,
}

impl Translator {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register an adapter; returns its id.
    pub fn register_adapter(&mut self, spec: AdapterSpec, apply: AdapterFn) -> Result<usize, TranslateError> {
        spec.validate()?;
        if self.by_schema.contains_key(&spec.native_schema_id) {
            return Err(TranslateError::DuplicateSchema(spec.native_schema_id));
        }
        if let Some(&other) = self.by_topic.get(&spec.input_topic) {
            return Err(TranslateError::DuplicateTopic(
                spec.input_topic.to_string(),
                self.adapters[other].spec.native_schema_id.clone(),
            ));
        }
        let id = self.adapters.len();
        self.by_schema.insert(spec.native_schema_id.clone(), id);
        self.by_topic.insert(spec.input_topic.clone(), id);
        self.adapters.push(Adapter { spec, apply });
        Ok(id)
    }

    /// Register an adapter built from the spec's own field rules.
    pub fn register_rules(&mut self, spec: AdapterSpec) -> Result<usize, TranslateError> {
        let apply = spec.rule_adapter();
        self.register_adapter(spec, apply)
    }

    pub fn spec(&self, id: usize) -> Option<&AdapterSpec> {
        self.adapters.get(id).map(|a| &a.spec)
    }

    pub fn input_topics(&self) -> impl Iterator<Item = &Topic> {
        self.adapters.iter().map(|a| &a.spec.input_topic)
    }

    pub fn translate(&self, msg: &RawMessage) -> Result<UnifiedFrame, TranslateError> {
        let &id = self
            .by_topic
            .get(&msg.topic)
            .ok_or_else(|| TranslateError::NoAdapter(msg.topic.to_string()))?;
        let adapter = &self.adapters[id];
        let fields = (adapter.apply)(&msg.payload)?;
        let frame = UnifiedFrame::new(
            adapter.spec.output_topic.clone(),
            msg.source_id.clone(),
            msg.seq,
            msg.t_ns,
            fields,
        );
        frame.validate().map_err(|e| TranslateError::MalformedPayload(e.to_string()))?;
        Ok(frame)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TranslationStats {
    pub translated: u64,
    pub untranslated: u64,
    pub malformed: u64,
}

/// Consumes native messages from one subscription and republishes the
/// unified frames (JSON-encoded) on each adapter's output topic.
pub struct TranslationRunner {
    translator: Arc<Translator>,
    bus: Bus,
    sub: Subscription,
    stats: TranslationStats,
}

impl TranslationRunner {
    pub fn new(translator: Arc<Translator>, bus: Bus, pattern: &str) -> Result<Self, TranslateError> {
        let sub = bus.subscribe(pattern)?;
        Ok(TranslationRunner { translator, bus, sub, stats: TranslationStats::default() })
    }

    pub fn stats(&self) -> TranslationStats {
        self.stats
    }

    fn handle(&mut self, msg: RawMessage) -> Result<(), TranslateError> {
        match self.translator.translate(&msg) {
            Ok(frame) => {
                let payload = encode_json(&frame)?;
                self.bus.deliver(RawMessage {
                    topic: frame.topic,
                    source_id: frame.source_id,
                    seq: frame.seq,
                    t_ns: frame.t_ns,
                    payload,
                })?;
                self.stats.translated += 1;
            }
            Err(TranslateError::NoAdapter(_)) => self.stats.untranslated += 1,
            Err(TranslateError::MalformedPayload(_)) => self.stats.malformed += 1,
            Err(e) => return Err(e),
        }
        Ok(())
    }

    /// Translate everything queued right now.
    pub fn pump(&mut self) -> Result<usize, TranslateError> {
        let msgs = self.sub.drain_now();
        let n = msgs.len();
        for m in msgs {
            self.handle(m)?;
        }
        Ok(n)
    }

    /// Translate until the bus closes.
    pub fn run(&mut self) -> Result<TranslationStats, TranslateError> {
        loop {
            match self.sub.recv_timeout(Duration::from_millis(50)) {
                Some(m) => self.handle(m)?,
                None if self.sub.is_closed() => return Ok(self.stats),
                None => {}
            }
        }
    }
}
