//! Displacement metrics and the deterministic / best-of-N protocols.

use std::fmt::Write as _;

use crate::data::Window;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::model::{Forecaster, HeadMode, PredictionSet};
use crate::numerics::{Mode, ParamStore};
use crate::scene::SceneEmbedding;

fn check_lengths(pred: &[Point], gt: &[Point]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape("trajectory length", gt.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(Error::Input("empty trajectory".into()));
    }
    Ok(())
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Average displacement error: mean per-step L2 distance.
pub fn ade(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(pred.iter().zip(gt).map(|(p, g)| dist(*p, *g)).sum::<f64>() / pred.len() as f64)
}

/// Final displacement error: L2 distance at the last step.
pub fn fde(pred: &[Point], gt: &[Point]) -> Result<f64> {
    check_lengths(pred, gt)?;
    Ok(dist(pred[pred.len() - 1], gt[gt.len() - 1]))
}

/// How the best head is chosen in multi-head scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BestOf {
    /// ADE and FDE each take their own per-agent minimum.
    #[default]
    PerMetric,
    /// The head with the lowest ADE also supplies the FDE.
    JointByAde,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneScore {
    pub scene_id: String,
    pub agents: usize,
    pub ade: f64,
    pub fde: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub mode: HeadMode,
    pub heads: usize,
    pub ade: f64,
    pub fde: f64,
    pub scenes: Vec<SceneScore>,
}

/// Scores one window. Deterministic mode reads head 0 only.
pub fn score_window(
    preds: &PredictionSet,
    future: &[Vec<Point>],
    mode: HeadMode,
    best: BestOf,
) -> Result<(f64, f64)> {
    if preds.num_agents() != future.len() {
        return Err(Error::shape("predicted agents", future.len(), preds.num_agents()));
    }
    let heads = match mode {
        HeadMode::Deterministic => &preds.heads[..1],
        HeadMode::Multi => &preds.heads[..],
    };
    let (mut sum_ade, mut sum_fde) = (0.0, 0.0);
    for (i, gt) in future.iter().enumerate() {
        let mut best_ade = f64::INFINITY;
        let mut best_fde = f64::INFINITY;
        let mut joint_fde = f64::INFINITY;
        for head in heads {
            let a = ade(&head[i], gt)?;
            let f = fde(&head[i], gt)?;
            if a < best_ade {
                best_ade = a;
                joint_fde = f;
            }
            best_fde = best_fde.min(f);
        }
        sum_ade += best_ade;
        sum_fde += match best {
            BestOf::PerMetric => best_fde,
            BestOf::JointByAde => joint_fde,
        };
    }
    let m = future.len() as f64;
    Ok((sum_ade / m, sum_fde / m))
}

/// Aggregates per-scene scores: mean over agents inside a scene, then mean
/// over scenes.
pub fn report_from_scores(mode: HeadMode, heads: usize, scenes: Vec<SceneScore>) -> Result<Report> {
    if scenes.is_empty() {
        return Err(Error::Input("evaluation over an empty dataset".into()));
    }
    let n = scenes.len() as f64;
    let ade = scenes.iter().map(|s| s.ade).sum::<f64>() / n;
    let fde = scenes.iter().map(|s| s.fde).sum::<f64>() / n;
    Ok(Report { mode, heads, ade, fde, scenes })
}

pub fn evaluate(
    model: &Forecaster,
    store: &ParamStore,
    dataset: &[Window],
    emb: Option<&SceneEmbedding>,
    mode: HeadMode,
    best: BestOf,
) -> Result<Report> {
    if dataset.is_empty() {
        return Err(Error::Input("evaluation over an empty dataset".into()));
    }
    let mut scenes = Vec::with_capacity(dataset.len());
    for w in dataset {
        let preds = model.forward(store, &w.scene, emb, &mut Mode::Eval, mode)?;
        let (a, f) = score_window(&preds, &w.future, mode, best)?;
        scenes.push(SceneScore { scene_id: w.scene.scene_id.clone(), agents: w.future.len(), ade: a, fde: f });
    }
    let heads = match mode {
        HeadMode::Deterministic => 1,
        HeadMode::Multi => model.config().heads,
    };
    report_from_scores(mode, heads, scenes)
}

impl Report {
    /// `scene,agents,ade,fde` rows followed by a `mean` row. Floats use
    /// round-trip formatting so the file re-parses exactly.
    pub fn to_csv(&self) -> String {
        let mut s = format!("# mode={} heads={}\nscene,agents,ade,fde\n", self.mode.as_str(), self.heads);
        for sc in &self.scenes {
            let _ = writeln!(s, "{},{},{},{}", sc.scene_id, sc.agents, sc.ade, sc.fde);
        }
        let total: usize = self.scenes.iter().map(|s| s.agents).sum();
        let _ = writeln!(s, "mean,{},{},{}", total, self.ade, self.fde);
        s
    }

    pub fn parse_csv(text: &str) -> Result<Report> {
        let mut mode = HeadMode::Deterministic;
        let mut heads = 1;
        let mut scenes = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("mode", "multi")) => mode = HeadMode::Multi,
                        Some(("mode", _)) => mode = HeadMode::Deterministic,
                        Some(("heads", h)) => {
                            heads = h.parse().map_err(|_| Error::Parse { line: line_no, message: "bad heads".into() })?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.trim().is_empty() || line.starts_with("scene,") || line.starts_with("mean,") {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Parse { line: line_no, message: "expected 4 comma-separated fields".into() });
            }
            let bad = |what: &str| Error::Parse { line: line_no, message: format!("invalid {what}") };
            scenes.push(SceneScore {
                scene_id: f[0].to_string(),
                agents: f[1].parse().map_err(|_| bad("agents"))?,
                ade: f[2].parse().map_err(|_| bad("ade"))?,
                fde: f[3].parse().map_err(|_| bad("fde"))?,
            });
        }
        report_from_scores(mode, heads, scenes)
    }

    /// Aligned text table with an `ADE/FDE` column.
    pub fn to_table(&self, dataset: &str) -> String {
        let label = match self.mode {
            HeadMode::Deterministic => "deterministic".to_string(),
            HeadMode::Multi => format!("best-of-{}", self.heads),
        };
        let cell = format!("{:.2}/{:.2}", self.ade, self.fde);
        let w0 = dataset.len().max("Dataset".len());
        let w1 = label.len().max("Mode".len());
        let w2 = cell.len().max("ADE/FDE".len());
        let mut s = String::new();
        let _ = writeln!(s, "{:<w0$} | {:<w1$} | {:>w2$}", "Dataset", "Mode", "ADE/FDE");
        let _ = writeln!(s, "{}-+-{}-+-{}", "-".repeat(w0), "-".repeat(w1), "-".repeat(w2));
        let _ = writeln!(s, "{dataset:<w0$} | {label:<w1$} | {cell:>w2$}");
        s
    }
}
