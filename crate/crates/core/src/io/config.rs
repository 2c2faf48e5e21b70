use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::lmsim::{PenaltyScope, SamplingConfig};
use crate::quantizer::{CodebookSpec, QuantizerKind, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("{key}: invalid value `{value}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
}

/// Every setting a CLI run can take from a config file.
///
/// Values left `None` are derived at run time (input dimension from the
/// data, group size from the quantizer kind, paths from flags).
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: QuantizerKind,
    pub codebooks: usize,
    pub codewords: usize,
    pub dim: Option<usize>,
    pub group_size: Option<usize>,
    pub train: TrainConfig,
    pub sampling: SamplingConfig,
    pub seed: u64,
    pub delay: usize,
    pub max_frames: usize,
    pub order: usize,
    pub smoothing: f64,
    pub frame_rate: usize,
    pub prefix: Option<usize>,
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let spec = CodebookSpec::reference_default(QuantizerKind::Opq);
        Self {
            kind: QuantizerKind::Opq,
            codebooks: spec.codebooks,
            codewords: spec.codewords,
            dim: None,
            group_size: None,
            train: TrainConfig::default(),
            sampling: SamplingConfig::default(),
            seed: 0,
            delay: 1,
            max_frames: 500,
            order: 1,
            smoothing: 0.01,
            frame_rate: 100,
            prefix: None,
            input: None,
            output: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: e.to_string(),
    })
}

impl RunConfig {
    pub const KEYS: &'static [&'static str] = &[
        "kind",
        "codebooks",
        "codewords",
        "dim",
        "group_size",
        "ema_decay",
        "iterations",
        "dead_code_threshold",
        "smoothing_epsilon",
        "update_dropped",
        "temperature",
        "top_p",
        "top_k",
        "repetition_penalty",
        "penalty_scope",
        "strict",
        "seed",
        "delay",
        "max_frames",
        "order",
        "smoothing",
        "frame_rate",
        "prefix",
        "in",
        "out",
    ];

    /// Sets one key from its textual value. Returns `Ok(false)` for an
    /// unknown key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "kind" => self.kind = parse(key, value)?,
            "codebooks" => self.codebooks = parse(key, value)?,
            "codewords" => self.codewords = parse(key, value)?,
            "dim" => self.dim = Some(parse(key, value)?),
            "group_size" => self.group_size = Some(parse(key, value)?),
            "ema_decay" => self.train.ema_decay = parse(key, value)?,
            "iterations" => self.train.iterations = parse(key, value)?,
            "dead_code_threshold" => self.train.dead_code_threshold = parse(key, value)?,
            "smoothing_epsilon" => self.train.smoothing_epsilon = parse(key, value)?,
            "update_dropped" => self.train.update_dropped_streams = parse(key, value)?,
            "temperature" => self.sampling.temperature = parse(key, value)?,
            "top_p" => self.sampling.top_p = parse(key, value)?,
            "top_k" => self.sampling.top_k = parse(key, value)?,
            "repetition_penalty" => self.sampling.repetition_penalty = parse(key, value)?,
            "penalty_scope" => self.sampling.penalty_scope = parse::<PenaltyScope>(key, value)?,
            "strict" => self.sampling.strict = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "delay" => self.delay = parse(key, value)?,
            "max_frames" => self.max_frames = parse(key, value)?,
            "order" => self.order = parse(key, value)?,
            "smoothing" => self.smoothing = parse(key, value)?,
            "frame_rate" => self.frame_rate = parse(key, value)?,
            "prefix" => self.prefix = Some(parse(key, value)?),
            "in" => self.input = Some(PathBuf::from(value)),
            "out" => self.output = Some(PathBuf::from(value)),
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Group size actually used: explicit, or 2 for product kinds and 1 for RQ.
    pub fn effective_group_size(&self) -> usize {
        self.group_size
            .unwrap_or(if self.kind == QuantizerKind::Rq { 1 } else { 2 })
    }

    pub fn codebook_spec(&self) -> CodebookSpec {
        CodebookSpec {
            kind: self.kind,
            codebooks: self.codebooks,
            codewords: self.codewords,
            group_size: self.effective_group_size(),
        }
    }

    /// Shape checks that do not need the data.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let g = self.effective_group_size();
        let bad = |msg: String| Err(ConfigError::Inconsistent(msg));
        if self.codebooks == 0 {
            return bad("codebooks must be >= 1".into());
        }
        if self.codewords < 2 {
            return bad("codewords must be >= 2".into());
        }
        match self.kind {
            QuantizerKind::Rq if g != 1 => return bad("RQ requires group_size 1".into()),
            QuantizerKind::Pq | QuantizerKind::Opq => {
                if g != 1 && g != 2 {
                    return bad(format!("group_size {g} unsupported (1 or 2)"));
                }
                if !self.codebooks.is_multiple_of(g) {
                    return bad(format!("{} codebooks do not split into groups of {g}", self.codebooks));
                }
                if let Some(dim) = self.dim {
                    if dim % self.codebooks != 0 {
                        return bad(format!("dim {dim} is not divisible by {} codebooks", self.codebooks));
                    }
                }
            }
            _ => {}
        }
        self.train
            .validate()
            .map_err(|e| ConfigError::Inconsistent(e.to_string()))?;
        self.sampling
            .validate()
            .map_err(|e| ConfigError::Inconsistent(e.to_string()))?;
        if !(self.smoothing.is_finite() && self.smoothing >= 0.0) {
            return bad("smoothing must be finite and >= 0".into());
        }
        Ok(())
    }

    /// Settings as sorted `key = value` lines, paths excluded.
    pub fn canonical(&self) -> String {
        let mut kv = BTreeMap::new();
        let opt = |v: Option<usize>| v.map_or_else(|| "auto".to_string(), |v| v.to_string());
        kv.insert("kind", self.kind.name().to_string());
        kv.insert("codebooks", self.codebooks.to_string());
        kv.insert("codewords", self.codewords.to_string());
        kv.insert("dim", opt(self.dim));
        kv.insert("group_size", self.effective_group_size().to_string());
        kv.insert("ema_decay", self.train.ema_decay.to_string());
        kv.insert("iterations", self.train.iterations.to_string());
        kv.insert("dead_code_threshold", self.train.dead_code_threshold.to_string());
        kv.insert("smoothing_epsilon", self.train.smoothing_epsilon.to_string());
        kv.insert("update_dropped", self.train.update_dropped_streams.to_string());
        kv.insert("temperature", self.sampling.temperature.to_string());
        kv.insert("top_p", self.sampling.top_p.to_string());
        kv.insert("top_k", self.sampling.top_k.to_string());
        kv.insert("repetition_penalty", self.sampling.repetition_penalty.to_string());
        kv.insert("penalty_scope", self.sampling.penalty_scope.to_string());
        kv.insert("strict", self.sampling.strict.to_string());
        kv.insert("seed", self.seed.to_string());
        kv.insert("delay", self.delay.to_string());
        kv.insert("max_frames", self.max_frames.to_string());
        kv.insert("order", self.order.to_string());
        kv.insert("smoothing", self.smoothing.to_string());
        kv.insert("frame_rate", self.frame_rate.to_string());
        kv.insert("prefix", opt(self.prefix));
        kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `key = value` lines on top of the defaults. `#` starts a comment;
/// blank lines are ignored; unknown or repeated keys are errors.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if seen.insert(key.to_string(), line).is_some() {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            });
        }
        if !cfg.set(key, value)? {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
    }
    cfg.sampling.seed = cfg.seed;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<RunConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}
