use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::encoder::Activation;
use crate::error::{Error, Result};
use crate::model::DecoderKind;
use crate::real::Dtype;

/// Every training knob. Serialized as flat `key=value` lines.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    /// Rate between encoder layers; `None` shares `dropout`.
    pub encoder_dropout: Option<f64>,
    pub embedding_size: usize,
    pub kernel_count: usize,
    pub kernel_width: usize,
    pub layers: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub label_smoothing: f64,
    pub batch_norm: bool,
    pub eval_every: usize,
    pub patience: usize,
    pub precision: Dtype,
    pub decoder: DecoderKind,
    pub activation: Activation,
    pub row_normalize: bool,
    pub bias: bool,
    pub transe_norm: u8,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.003,
            dropout: 0.2,
            encoder_dropout: Some(0.0),
            embedding_size: 200,
            kernel_count: 100,
            kernel_width: 5,
            layers: 2,
            batch_size: 128,
            epochs: 200,
            seed: 0,
            label_smoothing: 0.1,
            batch_norm: true,
            eval_every: 5,
            patience: 20,
            precision: Dtype::F32,
            decoder: DecoderKind::ConvTransE,
            activation: Activation::Tanh,
            row_normalize: false,
            bias: false,
            transe_norm: 1,
            weight_decay: 0.0,
            grad_clip: None,
            data: None,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "learning_rate",
    "dropout",
    "encoder_dropout",
    "embedding_size",
    "kernel_count",
    "kernel_width",
    "layers",
    "batch_size",
    "epochs",
    "seed",
    "label_smoothing",
    "batch_norm",
    "eval_every",
    "patience",
    "precision",
    "decoder",
    "activation",
    "row_normalize",
    "bias",
    "transe_norm",
    "weight_decay",
    "grad_clip",
    "data",
];

fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true/false, got '{value}'"
        ))),
    }
}

impl TrainConfig {
    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "learning_rate" => self.learning_rate = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "encoder_dropout" => {
                self.encoder_dropout = match v {
                    "" | "shared" => None,
                    _ => Some(num(key, v)?),
                }
            }
            "embedding_size" => self.embedding_size = num(key, v)?,
            "kernel_count" => self.kernel_count = num(key, v)?,
            "kernel_width" => self.kernel_width = num(key, v)?,
            "layers" => self.layers = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "label_smoothing" => self.label_smoothing = num(key, v)?,
            "batch_norm" => self.batch_norm = flag(key, v)?,
            "eval_every" => self.eval_every = num(key, v)?,
            "patience" => self.patience = num(key, v)?,
            "precision" => {
                self.precision = match v {
                    "f32" => Dtype::F32,
                    "f64" => Dtype::F64,
                    _ => {
                        return Err(Error::Config(format!(
                            "precision: expected f32 or f64, got '{v}'"
                        )))
                    }
                }
            }
            "decoder" => self.decoder = DecoderKind::parse(v)?,
            "activation" => self.activation = Activation::parse(v)?,
            "row_normalize" => self.row_normalize = flag(key, v)?,
            "bias" => self.bias = flag(key, v)?,
            "transe_norm" => self.transe_norm = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "grad_clip" => {
                self.grad_clip = match v {
                    "" | "none" => None,
                    _ => Some(num(key, v)?),
                }
            }
            "data" => {
                self.data = if v.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(v))
                }
            }
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    /// Parses `key=value` lines over the defaults. Blank lines and `#` comments
    /// are ignored; unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key '{k}'",
                    i + 1
                )));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("learning_rate", self.learning_rate.to_string());
        kv("dropout", self.dropout.to_string());
        kv(
            "encoder_dropout",
            self.encoder_dropout
                .map_or_else(|| "shared".to_string(), |d| d.to_string()),
        );
        kv("embedding_size", self.embedding_size.to_string());
        kv("kernel_count", self.kernel_count.to_string());
        kv("kernel_width", self.kernel_width.to_string());
        kv("layers", self.layers.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seed", self.seed.to_string());
        kv("label_smoothing", self.label_smoothing.to_string());
        kv("batch_norm", self.batch_norm.to_string());
        kv("eval_every", self.eval_every.to_string());
        kv("patience", self.patience.to_string());
        kv("precision", self.precision.name().to_string());
        kv("decoder", self.decoder.name().to_string());
        kv("activation", self.activation.name().to_string());
        kv("row_normalize", self.row_normalize.to_string());
        kv("bias", self.bias.to_string());
        kv("transe_norm", self.transe_norm.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv(
            "grad_clip",
            self.grad_clip
                .map_or_else(|| "none".to_string(), |c| c.to_string()),
        );
        kv(
            "data",
            self.data
                .as_ref()
                .map_or_else(String::new, |p| p.display().to_string()),
        );
        out
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        if self
            .encoder_dropout
            .is_some_and(|d| !(0.0..1.0).contains(&d))
        {
            return bad("encoder_dropout must be in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return bad(format!(
                "label_smoothing must be in [0, 1), got {}",
                self.label_smoothing
            ));
        }
        if self.embedding_size == 0 || self.kernel_count == 0 || self.kernel_width == 0 {
            return bad("embedding_size, kernel_count and kernel_width must be at least 1".into());
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return bad("batch_size and eval_every must be at least 1".into());
        }
        if self.transe_norm != 1 && self.transe_norm != 2 {
            return bad(format!(
                "transe_norm must be 1 or 2, got {}",
                self.transe_norm
            ));
        }
        if self.weight_decay < 0.0 || self.grad_clip.is_some_and(|c| c <= 0.0) {
            return bad("weight_decay must be >= 0 and grad_clip > 0".into());
        }
        Ok(())
    }
}

/// A sweep grid: one `key=v1,v2,...` line per swept field.
pub fn parse_grid(text: &str) -> Result<Vec<(String, Vec<String>)>> {
    let mut out: Vec<(String, Vec<String>)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid line {}: expected key=v1,v2", i + 1)))?;
        let k = k.trim().to_string();
        if !CONFIG_KEYS.contains(&k.as_str()) {
            return Err(Error::Config(format!(
                "grid line {}: unknown key '{k}'",
                i + 1
            )));
        }
        if out.iter().any(|(x, _)| *x == k) {
            return Err(Error::Config(format!(
                "grid line {}: duplicate key '{k}'",
                i + 1
            )));
        }
        let values: Vec<String> = v.split(',').map(|s| s.trim().to_string()).collect();
        if values.iter().any(String::is_empty) {
            return Err(Error::Config(format!("grid line {}: empty value", i + 1)));
        }
        out.push((k, values));
    }
    if out.is_empty() {
        return Err(Error::Config("grid is empty".into()));
    }
    Ok(out)
}

/// Cartesian product of the grid over `base`, last key varying fastest.
pub fn expand_grid(
    base: &TrainConfig,
    grid: &[(String, Vec<String>)],
) -> Result<Vec<(Vec<String>, TrainConfig)>> {
    let mut points: Vec<(Vec<String>, TrainConfig)> = vec![(Vec::new(), base.clone())];
    for (key, values) in grid {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for (labels, cfg) in &points {
            for v in values {
                let mut c = cfg.clone();
                c.set(key, v)?;
                let mut l = labels.clone();
                l.push(v.clone());
                next.push((l, c));
            }
        }
        points = next;
    }
    for (_, c) in &points {
        c.validate()?;
    }
    Ok(points)
}
