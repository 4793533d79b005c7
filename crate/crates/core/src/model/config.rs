use std::collections::BTreeMap;
use std::fmt::Write as _;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geometry::EncoderConfig;
use crate::scene::SceneConfig;

/// Architecture hyperparameters. Serialized as `key = value` lines inside
/// checkpoints so a model can be rebuilt without external config.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub t_obs: usize,
    pub t_pred: usize,
    /// Geometric channels produced by the time mixing.
    pub channels: usize,
    pub dct: bool,
    pub dct_keep: Option<usize>,
    pub pattern_width: usize,
    pub message_width: usize,
    pub hidden_width: usize,
    /// Interaction categories inferred per edge.
    pub categories: usize,
    pub layers: usize,
    pub heads: usize,
    pub dropout: f64,
    pub scene_enabled: bool,
    pub embedding_dim: usize,
    pub token_dim: usize,
    /// Amplitude (relative to the init bound) of the noise that separates
    /// head replicas.
    pub head_perturbation: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            t_obs: 8,
            t_pred: 12,
            channels: 8,
            dct: true,
            dct_keep: None,
            pattern_width: 64,
            message_width: 64,
            hidden_width: 64,
            categories: 2,
            layers: 4,
            heads: 1,
            dropout: 0.5,
            scene_enabled: true,
            embedding_dim: 768,
            token_dim: 32,
            head_perturbation: 0.5,
        }
    }
}

pub const MULTI_HEADS: usize = 20;

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("t_obs", self.t_obs),
            ("t_pred", self.t_pred),
            ("channels", self.channels),
            ("pattern_width", self.pattern_width),
            ("message_width", self.message_width),
            ("hidden_width", self.hidden_width),
            ("categories", self.categories),
            ("layers", self.layers),
            ("heads", self.heads),
            ("embedding_dim", self.embedding_dim),
            ("token_dim", self.token_dim),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be >= 1")));
            }
        }
        if self.t_obs < 3 {
            return Err(Error::Config("t_obs must be >= 3 (heading needs two velocities)".into()));
        }
        if let Some(k) = self.dct_keep {
            if k == 0 || k > self.t_obs {
                return Err(Error::Config(format!("dct_keep must be in 1..={}", self.t_obs)));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            t_obs: self.t_obs,
            channels: self.channels,
            dct: self.dct,
            dct_keep: self.dct_keep,
        }
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            enabled: self.scene_enabled,
            embedding_dim: self.embedding_dim,
            token_dim: self.token_dim,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let keep = self.dct_keep.map_or("all".to_string(), |k| k.to_string());
        let _ = writeln!(s, "t_obs = {}", self.t_obs);
        let _ = writeln!(s, "t_pred = {}", self.t_pred);
        let _ = writeln!(s, "channels = {}", self.channels);
        let _ = writeln!(s, "dct = {}", self.dct);
        let _ = writeln!(s, "dct_keep = {keep}");
        let _ = writeln!(s, "pattern_width = {}", self.pattern_width);
        let _ = writeln!(s, "message_width = {}", self.message_width);
        let _ = writeln!(s, "hidden_width = {}", self.hidden_width);
        let _ = writeln!(s, "categories = {}", self.categories);
        let _ = writeln!(s, "layers = {}", self.layers);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "scene = {}", self.scene_enabled);
        let _ = writeln!(s, "embedding_dim = {}", self.embedding_dim);
        let _ = writeln!(s, "token_dim = {}", self.token_dim);
        let _ = writeln!(s, "head_perturbation = {}", self.head_perturbation);
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let map = parse_key_values(text)?;
        let mut cfg = ModelConfig::default();
        for (k, v) in &map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its textual key; unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("invalid value `{v}` for `{k}`")))
        }
        match key {
            "t_obs" => self.t_obs = num(key, value)?,
            "t_pred" => self.t_pred = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "dct" => self.dct = num(key, value)?,
            "dct_keep" => {
                self.dct_keep = if value == "all" { None } else { Some(num(key, value)?) }
            }
            "pattern_width" => self.pattern_width = num(key, value)?,
            "message_width" => self.message_width = num(key, value)?,
            "hidden_width" => self.hidden_width = num(key, value)?,
            "categories" => self.categories = num(key, value)?,
            "layers" => self.layers = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "scene" => self.scene_enabled = num(key, value)?,
            "embedding_dim" => self.embedding_dim = num(key, value)?,
            "token_dim" => self.token_dim = num(key, value)?,
            "head_perturbation" => self.head_perturbation = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown model key `{key}`"))),
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of [`Self::to_text`].
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: n + 1,
            message: format!("expected `key = value`, found `{line}`"),
        })?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
