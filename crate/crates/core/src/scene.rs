//! Scene embeddings produced by an external vision model, and the learned
//! projection that turns them into the token fed to every message.
//!
//! Embedding file (UTF-8 text):
//!
//! ```text
//! 768
//! # model=<id> pooling=mean image_sha256=<hex>
//! 0.0132 -0.4410 ...
//! ```
//!
//! Line 1 is the dimension, an optional `#` line carries provenance, and the
//! last line holds `dim` space-separated decimals. Values are written in
//! shortest round-trip form, so write-then-read is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{Graph, MlpSpec, Mode, ParamStore, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SceneEmbedding {
    pub values: Vec<f64>,
    /// File path, or `"zero"` / `"random:<seed>"` for generated stubs.
    pub source: String,
    pub comment: Option<String>,
}

impl SceneEmbedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn zero(dim: usize) -> Self {
        SceneEmbedding {
            values: vec![0.0; dim],
            source: "zero".into(),
            comment: Some("stub=zero".into()),
        }
    }

    /// Seeded stand-in for a real embedding, values uniform in `[-1, 1]`.
    pub fn random(dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SceneEmbedding {
            values: (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            source: format!("random:{seed}"),
            comment: Some(format!("stub=random seed={seed}")),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.dim());
        if let Some(c) = &self.comment {
            let _ = writeln!(out, "# {}", c.trim_start_matches('#').trim());
        }
        let vals: Vec<String> = self.values.iter().map(|v| format!("{v}")).collect();
        out.push_str(&vals.join(" "));
        out.push('\n');
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Parses the embedding text format; errors carry byte offsets.
pub fn parse_scene_embedding(text: &str, source: &str) -> Result<SceneEmbedding> {
    // (byte offset, line content) of every non-empty line.
    let mut lines = Vec::new();
    let mut offset = 0;
    for raw in text.split_inclusive('\n') {
        let line = raw.trim_end_matches(['\n', '\r']);
        if !line.trim().is_empty() {
            lines.push((offset, line));
        }
        offset += raw.len();
    }
    let Some(&(hdr_off, header)) = lines.first() else {
        return Err(Error::Format { offset: 0, message: "empty embedding file".into() });
    };
    let dim: usize = header.trim().parse().map_err(|_| Error::Format {
        offset: hdr_off,
        message: format!("expected integer dimension, found `{}`", header.trim()),
    })?;
    if dim == 0 {
        return Err(Error::Format { offset: hdr_off, message: "dimension must be positive".into() });
    }
    let mut rest = &lines[1..];
    let mut comment = None;
    if let Some(&(_, l)) = rest.first() {
        if l.starts_with('#') {
            comment = Some(l.trim_start_matches('#').trim().to_string());
            rest = &rest[1..];
        }
    }
    let &(val_off, val_line) = match rest {
        [one] => one,
        [] => {
            return Err(Error::Format { offset: text.len(), message: "missing value line".into() });
        }
        [_, (off, _), ..] => {
            return Err(Error::Format { offset: *off, message: "unexpected extra line".into() });
        }
    };

    let mut values = Vec::with_capacity(dim);
    let mut pos = 0;
    for tok in val_line.split(' ') {
        let tok_off = val_off + pos;
        pos += tok.len() + 1;
        if tok.is_empty() {
            continue;
        }
        let v: f64 = tok.parse().map_err(|_| Error::Format {
            offset: tok_off,
            message: format!("invalid float `{tok}`"),
        })?;
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("embedding value {} at byte {tok_off}", values.len())));
        }
        values.push(v);
    }
    if values.len() != dim {
        return Err(Error::Format {
            offset: val_off,
            message: format!("header declares {dim} values, found {}", values.len()),
        });
    }
    Ok(SceneEmbedding { values, source: source.to_string(), comment })
}

pub fn load_scene_embedding(path: &Path) -> Result<SceneEmbedding> {
    let text = fs::read_to_string(path)?;
    parse_scene_embedding(&text, &path.display().to_string())
}

/// Projected scene conditioning vector `[1, D_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneToken {
    pub values: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneConfig {
    pub enabled: bool,
    pub embedding_dim: usize,
    pub token_dim: usize,
}

impl SceneConfig {
    pub fn projector(&self) -> MlpSpec {
        MlpSpec::new("scene.phi_t", &[self.embedding_dim, self.token_dim])
            .expect("positive widths")
            .with_final_activation(true)
    }

    pub const CONSTANT_TOKEN: &'static str = "scene.token";

    pub fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        if self.enabled {
            self.projector().init(store, rng);
        } else {
            let b = (1.0 / self.token_dim as f64).sqrt();
            let v = (0..self.token_dim).map(|_| rng.random_range(-b..=b)).collect();
            store.insert(Self::CONSTANT_TOKEN, Tensor::row(v));
        }
    }
}

/// Records the token computation; with the scene path disabled the token is
/// a learned constant and `emb` is ignored.
pub fn scene_token_on_graph(
    g: &mut Graph,
    store: &ParamStore,
    emb: Option<&SceneEmbedding>,
    cfg: &SceneConfig,
) -> Result<Var> {
    if !cfg.enabled {
        return g.param(store, SceneConfig::CONSTANT_TOKEN);
    }
    let emb = emb.ok_or_else(|| Error::Input("scene conditioning enabled but no embedding given".into()))?;
    if emb.dim() != cfg.embedding_dim {
        return Err(Error::shape("scene embedding width", cfg.embedding_dim, emb.dim()));
    }
    let x = g.constant(Tensor::row(emb.values.clone()));
    cfg.projector().forward(g, store, x, &mut Mode::Eval)
}

pub fn project_scene_tokens(
    emb: Option<&SceneEmbedding>,
    store: &ParamStore,
    cfg: &SceneConfig,
) -> Result<SceneToken> {
    let mut g = Graph::new();
    let v = scene_token_on_graph(&mut g, store, emb, cfg)?;
    Ok(SceneToken { values: g.value(v).clone() })
}
