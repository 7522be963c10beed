//! Model, streaming and memory-hierarchy configuration.
//!
//! A configuration document is TOML with a top-level `schema_version = 1`,
//! a `[streaming]` table, an optional `[memory]` table and one
//! `[[components]]` entry per model component. An optional `[utterance]`
//! table carries a generative utterance for the decode simulator.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;
use crate::workload::UtteranceSpec;

pub const SCHEMA_VERSION: i64 = 1;

/// Which call rate of the transducer loop drives a component.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InvocationRole {
    Encoder,
    Predictor,
    Joiner,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ComponentName {
    Encoder,
    Predictor,
    Joiner,
    Custom(String),
}

impl ComponentName {
    pub fn as_str(&self) -> &str {
        match self {
            ComponentName::Encoder => "Encoder",
            ComponentName::Predictor => "Predictor",
            ComponentName::Joiner => "Joiner",
            ComponentName::Custom(s) => s,
        }
    }

    /// Role implied by a standard name.
    pub fn default_role(&self) -> Option<InvocationRole> {
        match self {
            ComponentName::Encoder => Some(InvocationRole::Encoder),
            ComponentName::Predictor => Some(InvocationRole::Predictor),
            ComponentName::Joiner => Some(InvocationRole::Joiner),
            ComponentName::Custom(_) => None,
        }
    }
}

impl From<&str> for ComponentName {
    fn from(s: &str) -> Self {
        match s {
            "Encoder" => ComponentName::Encoder,
            "Predictor" => ComponentName::Predictor,
            "Joiner" => ComponentName::Joiner,
            other => ComponentName::Custom(other.to_string()),
        }
    }
}

impl From<String> for ComponentName {
    fn from(s: String) -> Self {
        ComponentName::from(s.as_str())
    }
}

impl From<ComponentName> for String {
    fn from(n: ComponentName) -> Self {
        n.as_str().to_string()
    }
}

impl fmt::Display for ComponentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ComponentName {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ComponentName {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s.is_empty() {
            return Err(serde::de::Error::custom("component name must not be empty"));
        }
        Ok(ComponentName::from(s))
    }
}

/// Static description of one model component.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentSpec {
    pub name: ComponentName,
    pub dense_params: u64,
    /// 1 for INT8 weights.
    pub bytes_per_param: f64,
    /// `ops_per_invocation = ops_factor * 2 * live_params`.
    pub ops_factor: f64,
    /// Planner floor.
    pub min_params: u64,
    /// Stored bytes per surviving parameter relative to the dense encoding.
    pub sparse_overhead: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invoked_as: Option<InvocationRole>,
}

impl ComponentSpec {
    /// Component with the default INT8 encoding, unit ops factor and a
    /// floor at 10% of the dense size.
    pub fn new(name: impl Into<ComponentName>, dense_params: u64) -> Self {
        ComponentSpec {
            name: name.into(),
            dense_params,
            bytes_per_param: 1.0,
            ops_factor: 1.0,
            min_params: default_min_params(dense_params),
            sparse_overhead: 1.0,
            invoked_as: None,
        }
    }

    pub fn with_ops_factor(mut self, ops_factor: f64) -> Self {
        self.ops_factor = ops_factor;
        self
    }

    pub fn with_min_params(mut self, min_params: u64) -> Self {
        self.min_params = min_params;
        self
    }

    pub fn with_bytes_per_param(mut self, bytes: f64) -> Self {
        self.bytes_per_param = bytes;
        self
    }

    pub fn with_sparse_overhead(mut self, overhead: f64) -> Self {
        self.sparse_overhead = overhead;
        self
    }

    pub fn with_role(mut self, role: InvocationRole) -> Self {
        self.invoked_as = Some(role);
        self
    }

    pub fn role(&self) -> Option<InvocationRole> {
        self.invoked_as.or_else(|| self.name.default_role())
    }
}

fn default_min_params(dense: u64) -> u64 {
    dense / 10
}

/// A component at a particular compression level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ComponentState {
    pub spec: ComponentSpec,
    pub live_params: u64,
}

impl ComponentState {
    pub fn dense(spec: ComponentSpec) -> Self {
        let live_params = spec.dense_params;
        ComponentState { spec, live_params }
    }

    pub fn new(spec: ComponentSpec, live_params: u64) -> Result<Self, StateError> {
        if live_params < spec.min_params || live_params > spec.dense_params {
            return Err(StateError::LiveOutOfRange {
                component: spec.name.to_string(),
                live: live_params,
                min: spec.min_params,
                dense: spec.dense_params,
            });
        }
        Ok(ComponentState { spec, live_params })
    }

    pub fn name(&self) -> &ComponentName {
        &self.spec.name
    }

    pub fn is_sparse(&self) -> bool {
        self.live_params < self.spec.dense_params
    }

    /// Bytes held in memory for the surviving parameters.
    pub fn stored_bytes<T: Scalar>(&self) -> T {
        let overhead = if self.is_sparse() {
            self.spec.sparse_overhead
        } else {
            1.0
        };
        T::from_count(self.live_params) * T::lit(self.spec.bytes_per_param) * T::lit(overhead)
    }

    pub fn live_millions(&self) -> f64 {
        self.live_params as f64 / 1e6
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("{component}: live_params {live} outside [{min}, {dense}]")]
    LiveOutOfRange {
        component: String,
        live: u64,
        min: u64,
        dense: u64,
    },
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
}

/// Compression state of a whole model, in configuration order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelState {
    pub components: Vec<ComponentState>,
}

impl ModelState {
    pub fn dense(spec: &ModelSpec) -> Self {
        ModelState {
            components: spec
                .components
                .iter()
                .cloned()
                .map(ComponentState::dense)
                .collect(),
        }
    }

    pub fn get(&self, name: &ComponentName) -> Option<&ComponentState> {
        self.components.iter().find(|c| c.name() == name)
    }

    pub fn index_of(&self, name: &ComponentName) -> Option<usize> {
        self.components.iter().position(|c| c.name() == name)
    }

    /// Returns a copy with one component set to `live_params`.
    pub fn with_live(&self, name: &ComponentName, live_params: u64) -> Result<Self, StateError> {
        let idx = self
            .index_of(name)
            .ok_or_else(|| StateError::UnknownComponent(name.to_string()))?;
        let mut next = self.clone();
        next.components[idx] = ComponentState::new(next.components[idx].spec.clone(), live_params)?;
        Ok(next)
    }

    pub fn total_live_params(&self) -> u64 {
        self.components.iter().map(|c| c.live_params).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamingParams {
    pub input_stride_ms: u32,
    pub chunk_ms: u32,
    /// Non-blank tokens emitted per second of audio.
    pub token_rate_hz: f64,
    /// Joiner calls per emitted token beyond the one-per-frame baseline.
    #[serde(default)]
    pub joiner_beta: f64,
}

impl StreamingParams {
    pub fn frames_per_chunk(&self) -> u32 {
        self.chunk_ms / self.input_stride_ms
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemoryConfig {
    pub local_weight_capacity_bytes: f64,
    pub local_energy_pj_per_byte: f64,
    pub offchip_energy_pj_per_byte: f64,
    /// Scalar applied to all memory energy; 1.049 matches measurements that
    /// include activation traffic.
    pub energy_calibration: f64,
    #[serde(rename = "local_latency_ns_per_64B")]
    pub local_latency_ns_per_64b: f64,
    #[serde(rename = "offchip_latency_ns_per_64B")]
    pub offchip_latency_ns_per_64b: f64,
    pub compute_efficiency_gops_per_mw: f64,
    /// Accelerator throughput used for the compute term of the RTF estimate.
    pub peak_compute_gops: f64,
}

pub const DEFAULT_LOCAL_WEIGHT_CAPACITY: f64 = 1.5 * 1024.0 * 1024.0;
pub const CALIBRATED_ENERGY_SCALE: f64 = 1.049;

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            local_weight_capacity_bytes: DEFAULT_LOCAL_WEIGHT_CAPACITY,
            local_energy_pj_per_byte: 1.5,
            offchip_energy_pj_per_byte: 120.0,
            energy_calibration: 1.0,
            local_latency_ns_per_64b: 10.0,
            offchip_latency_ns_per_64b: 60.0,
            compute_efficiency_gops_per_mw: 5.0,
            peak_compute_gops: 500.0,
        }
    }
}

impl MemoryConfig {
    pub fn with_calibration(mut self, calibration: f64) -> Self {
        self.energy_calibration = calibration;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelSpec {
    pub components: Vec<ComponentSpec>,
    pub streaming: StreamingParams,
    pub memory: MemoryConfig,
}

impl ModelSpec {
    pub fn component(&self, name: &ComponentName) -> Option<&ComponentSpec> {
        self.components.iter().find(|c| &c.name == name)
    }

    pub fn validate(&self) -> ValidationReport {
        validate(self)
    }
}

/// One broken invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    /// Component name, or `streaming` / `memory` / `model`.
    pub subject: String,
    pub rule: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, subject: impl Into<String>, rule: impl Into<String>) {
        self.violations.push(Violation {
            subject: subject.into(),
            rule: rule.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", v.subject, v.rule)?;
        }
        Ok(())
    }
}

/// Lists every violated invariant; never fails.
pub fn validate(spec: &ModelSpec) -> ValidationReport {
    let mut report = ValidationReport::default();

    if spec.components.is_empty() {
        report.push("model", "at least one component");
    }
    let mut seen = HashSet::new();
    for c in &spec.components {
        let who = c.name.to_string();
        if !seen.insert(c.name.clone()) {
            report.push(&who, "component names unique");
        }
        if c.dense_params == 0 {
            report.push(&who, "dense_params > 0");
        }
        if !(c.bytes_per_param > 0.0 && c.bytes_per_param.is_finite()) {
            report.push(&who, "bytes_per_param > 0");
        }
        if !(c.ops_factor > 0.0 && c.ops_factor.is_finite()) {
            report.push(&who, "ops_factor > 0");
        }
        if c.min_params > c.dense_params {
            report.push(&who, "min_params <= dense_params");
        }
        if !(c.sparse_overhead >= 1.0 && c.sparse_overhead.is_finite()) {
            report.push(&who, "sparse_overhead >= 1");
        }
        if c.role().is_none() {
            report.push(&who, "custom component needs invoked_as");
        }
    }

    let s = &spec.streaming;
    if s.input_stride_ms == 0 {
        report.push("streaming", "input_stride_ms > 0");
    }
    if s.chunk_ms == 0 {
        report.push("streaming", "chunk_ms > 0");
    }
    if s.input_stride_ms > 0 && s.chunk_ms > 0 && !s.chunk_ms.is_multiple_of(s.input_stride_ms) {
        report.push("streaming", "chunk not a multiple of stride");
    }
    if !(s.token_rate_hz > 0.0 && s.token_rate_hz.is_finite()) {
        report.push("streaming", "token_rate_hz > 0");
    }
    if !(s.joiner_beta >= 0.0 && s.joiner_beta.is_finite()) {
        report.push("streaming", "joiner_beta >= 0");
    }

    let m = &spec.memory;
    let positive = [
        ("local_weight_capacity_bytes", m.local_weight_capacity_bytes),
        ("local_energy_pj_per_byte", m.local_energy_pj_per_byte),
        ("offchip_energy_pj_per_byte", m.offchip_energy_pj_per_byte),
        ("energy_calibration", m.energy_calibration),
        ("local_latency_ns_per_64B", m.local_latency_ns_per_64b),
        ("offchip_latency_ns_per_64B", m.offchip_latency_ns_per_64b),
        ("compute_efficiency_gops_per_mw", m.compute_efficiency_gops_per_mw),
        ("peak_compute_gops", m.peak_compute_gops),
    ];
    for (field, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            report.push("memory", format!("{field} > 0"));
        }
    }
    if m.local_energy_pj_per_byte >= m.offchip_energy_pj_per_byte {
        report.push("memory", "local energy < off-chip energy");
    }
    if m.local_latency_ns_per_64b >= m.offchip_latency_ns_per_64b {
        report.push("memory", "local latency < off-chip latency");
    }
    report
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("syntax error at line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at `{field}`: {message}")]
    Schema { field: String, message: String },
    #[error("invalid model: {0}")]
    Invalid(ValidationReport),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawComponent {
    name: ComponentName,
    dense_params: u64,
    bytes_per_param: Option<f64>,
    ops_factor: Option<f64>,
    min_params: Option<u64>,
    sparse_overhead: Option<f64>,
    invoked_as: Option<InvocationRole>,
}

impl From<RawComponent> for ComponentSpec {
    fn from(r: RawComponent) -> Self {
        ComponentSpec {
            name: r.name,
            dense_params: r.dense_params,
            bytes_per_param: r.bytes_per_param.unwrap_or(1.0),
            ops_factor: r.ops_factor.unwrap_or(1.0),
            min_params: r.min_params.unwrap_or(default_min_params(r.dense_params)),
            sparse_overhead: r.sparse_overhead.unwrap_or(1.0),
            invoked_as: r.invoked_as,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDocument {
    schema_version: i64,
    #[serde(default)]
    components: Vec<RawComponent>,
    streaming: StreamingParams,
    #[serde(default)]
    memory: MemoryConfig,
    utterance: Option<UtteranceSpec>,
}

#[derive(Serialize)]
struct DocumentOut<'a> {
    schema_version: i64,
    streaming: &'a StreamingParams,
    memory: &'a MemoryConfig,
    components: &'a [ComponentSpec],
    #[serde(skip_serializing_if = "Option::is_none")]
    utterance: Option<&'a UtteranceSpec>,
}

/// Parsed configuration document.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigDocument {
    pub model: ModelSpec,
    pub utterance: Option<UtteranceSpec>,
}

pub fn parse_config_document(text: &str) -> Result<ConfigDocument, SpecError> {
    let table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
        let (line, column) = e
            .span()
            .map(|span| line_col(text, span.start))
            .unwrap_or((0, 0));
        SpecError::Syntax {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let raw: RawDocument = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
        let field = e.path().to_string();
        SpecError::Schema {
            field: if field == "." { "<root>".into() } else { field },
            message: e.into_inner().message().to_string(),
        }
    })?;
    if raw.schema_version != SCHEMA_VERSION {
        return Err(SpecError::Schema {
            field: "schema_version".into(),
            message: format!("unsupported version {}, expected {SCHEMA_VERSION}", raw.schema_version),
        });
    }
    let model = ModelSpec {
        components: raw.components.into_iter().map(ComponentSpec::from).collect(),
        streaming: raw.streaming,
        memory: raw.memory,
    };
    let report = validate(&model);
    if !report.is_valid() {
        return Err(SpecError::Invalid(report));
    }
    Ok(ConfigDocument {
        model,
        utterance: raw.utterance,
    })
}

/// Parses and validates a model configuration, applying defaults.
pub fn parse_model_spec(text: &str) -> Result<ModelSpec, SpecError> {
    parse_config_document(text).map(|d| d.model)
}

/// Serializes with every default spelled out, so parsing the result gives
/// back the same value.
pub fn serialize_model_spec(spec: &ModelSpec) -> String {
    serialize_document(spec, None)
}

pub fn serialize_document(spec: &ModelSpec, utterance: Option<&UtteranceSpec>) -> String {
    let doc = DocumentOut {
        schema_version: SCHEMA_VERSION,
        streaming: &spec.streaming,
        memory: &spec.memory,
        components: &spec.components,
        utterance,
    };
    toml::to_string(&doc).expect("model spec is always representable as TOML")
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}
