//! Losses and the mini-batch optimization loop.

use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Window;
use crate::error::{Error, Result};
use crate::evaluation;
use crate::geometry::{Point, Rigid2};
use crate::model::{Forecaster, HeadMode, PredictionSet};
use crate::numerics::{AdamW, Graph, Mode, ParamStore, Tensor, Var};
use crate::scene::SceneEmbedding;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub mode: HeadMode,
    pub optimizer: AdamW,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Rotate each training scene by a random angle about its centroid.
    pub augment_rotation: bool,
    /// Per-epoch learning-rate multiplier: epoch `e` (1-based) trains at
    /// `lr * lr_decay^(e-1)`. `1.0` keeps the rate constant.
    pub lr_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 60,
            mode: HeadMode::Deterministic,
            optimizer: AdamW::default(),
            seed: 0,
            clip_norm: Some(5.0),
            augment_rotation: false,
            lr_decay: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be >= 1".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        Ok(())
    }
}

fn ground_truth(g: &mut Graph, gt: &[Vec<Point>]) -> Result<(Var, Var)> {
    let m = gt.len();
    let t = gt.first().map_or(0, Vec::len);
    let mut xs = Vec::with_capacity(m * t);
    let mut ys = Vec::with_capacity(m * t);
    for track in gt {
        if track.len() != t {
            return Err(Error::shape("ground-truth length", t, track.len()));
        }
        xs.extend(track.iter().map(|p| p[0]));
        ys.extend(track.iter().map(|p| p[1]));
    }
    Ok((g.constant(Tensor::matrix(m, t, xs)?), g.constant(Tensor::matrix(m, t, ys)?)))
}

/// Per-agent mean step distance `[M, 1]` of one head.
fn per_agent_distance(g: &mut Graph, pred: (Var, Var), gt: (Var, Var)) -> Result<Var> {
    let (px, py) = pred;
    let (gx, gy) = gt;
    if g.value(px).shape() != g.value(gx).shape() {
        return Err(Error::shape(
            "prediction vs ground truth",
            format!("{:?}", g.value(gx).shape()),
            format!("{:?}", g.value(px).shape()),
        ));
    }
    let t = g.value(px).cols() as f64;
    let dx = g.sub(px, gx)?;
    let dy = g.sub(py, gy)?;
    let dx2 = g.mul(dx, dx)?;
    let dy2 = g.mul(dy, dy)?;
    let d2 = g.add(dx2, dy2)?;
    let d = g.sqrt(d2);
    let s = g.row_sum(d);
    Ok(g.scale(s, 1.0 / t))
}

/// Mean over agents and steps of the L2 distance to ground truth.
pub fn loss_deterministic(g: &mut Graph, pred: (Var, Var), gt: &[Vec<Point>]) -> Result<Var> {
    let gt = ground_truth(g, gt)?;
    let per_agent = per_agent_distance(g, pred, gt)?;
    Ok(g.mean_all(per_agent))
}

/// Winner-takes-all: per agent, the smallest head loss (ties go to the
/// lower head index), averaged over agents. Returns the winning head of
/// every agent. Losing heads contribute exactly zero gradient.
pub fn loss_multi(g: &mut Graph, heads: &[(Var, Var)], gt: &[Vec<Point>]) -> Result<(Var, Vec<usize>)> {
    if heads.is_empty() {
        return Err(Error::Input("multi-head loss needs at least one head".into()));
    }
    let gtv = ground_truth(g, gt)?;
    let per_head: Vec<Var> = heads
        .iter()
        .map(|&h| per_agent_distance(g, h, gtv))
        .collect::<Result<_>>()?;
    let m = gt.len();
    let mut winners = vec![0usize; m];
    for (i, w) in winners.iter_mut().enumerate() {
        let mut best = f64::INFINITY;
        for (k, &v) in per_head.iter().enumerate() {
            let l = g.value(v).data()[i];
            if l < best {
                best = l;
                *w = k;
            }
        }
    }
    let mut total: Option<Var> = None;
    for (k, &v) in per_head.iter().enumerate() {
        if !winners.contains(&k) {
            continue;
        }
        let mask: Vec<f64> = winners.iter().map(|&w| if w == k { 1.0 } else { 0.0 }).collect();
        let picked = g.mul_const(v, Tensor::matrix(m, 1, mask)?)?;
        let s = g.sum_all(picked);
        total = Some(match total {
            None => s,
            Some(t) => g.add(t, s)?,
        });
    }
    let total = total.expect("at least one winner");
    Ok((g.scale(total, 1.0 / m as f64), winners))
}

/// Plain-value deterministic loss of head 0.
pub fn deterministic_loss_value(pred: &PredictionSet, gt: &[Vec<Point>]) -> Result<f64> {
    multi_loss_value(&PredictionSet { heads: pred.heads[..1].to_vec() }, gt)
}

/// Plain-value winner-takes-all loss over all heads.
pub fn multi_loss_value(pred: &PredictionSet, gt: &[Vec<Point>]) -> Result<f64> {
    if pred.heads.is_empty() || pred.num_agents() != gt.len() || gt.is_empty() {
        return Err(Error::shape("prediction agents", gt.len(), pred.num_agents()));
    }
    let mut sum = 0.0;
    for (i, track) in gt.iter().enumerate() {
        let mut best = f64::INFINITY;
        for head in &pred.heads {
            best = best.min(evaluation::ade(&head[i], track)?);
        }
        sum += best;
    }
    Ok(sum / gt.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossLog {
    pub entries: Vec<EpochLoss>,
}

impl LossLog {
    pub fn train(&self) -> Vec<f64> {
        self.entries.iter().filter(|e| e.split == Split::Train).map(|e| e.loss).collect()
    }

    /// `epoch,split,loss` with a header row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,split,loss\n");
        for e in &self.entries {
            let _ = writeln!(s, "{},{},{}", e.epoch, e.split.as_str(), e.loss);
        }
        s
    }
}

/// Records the forward pass plus loss of one window.
pub fn window_loss(
    model: &Forecaster,
    g: &mut Graph,
    store: &ParamStore,
    window: &Window,
    emb: Option<&SceneEmbedding>,
    mode: &mut Mode<'_>,
    heads: HeadMode,
) -> Result<Var> {
    let rec = model.record(g, store, &window.scene, emb, mode, heads)?;
    match heads {
        HeadMode::Deterministic => loss_deterministic(g, rec.heads[0], &window.future),
        HeadMode::Multi => Ok(loss_multi(g, &rec.heads, &window.future)?.0),
    }
}

fn rotate_window(w: &Window, angle: f64) -> Result<Window> {
    let c = crate::geometry::compute_centroid(&w.scene)?.0;
    let rot = Rigid2::new(angle, [0.0, 0.0]);
    let about = |p: Point| {
        let r = rot.rotate([p[0] - c[0], p[1] - c[1]]);
        [r[0] + c[0], r[1] + c[1]]
    };
    let mut out = w.clone();
    for p in out.scene.positions.iter_mut().flatten() {
        *p = about(*p);
    }
    for p in out.future.iter_mut().flatten() {
        *p = about(*p);
    }
    Ok(out)
}

/// Mean eval-mode loss over a set of windows.
pub fn dataset_loss(
    model: &Forecaster,
    store: &ParamStore,
    windows: &[Window],
    emb: Option<&SceneEmbedding>,
    heads: HeadMode,
) -> Result<f64> {
    let mut sum = 0.0;
    for w in windows {
        let mut g = Graph::new();
        let l = window_loss(model, &mut g, store, w, emb, &mut Mode::Eval, heads)?;
        sum += g.value(l).data()[0];
    }
    Ok(sum / windows.len().max(1) as f64)
}

/// Mini-batch training. Each batch averages per-window losses, clips the
/// global gradient norm, and takes one optimizer step. The epoch's train
/// loss is the mean of the per-window losses seen during that epoch.
///
/// `on_epoch` runs after each epoch with the epoch number (1-based).
pub fn fit(
    model: &Forecaster,
    train: &[Window],
    val: &[Window],
    emb: Option<&SceneEmbedding>,
    cfg: &TrainConfig,
    params: &mut ParamStore,
    mut on_epoch: impl FnMut(usize, &ParamStore, &LossLog) -> Result<()>,
) -> Result<LossLog> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut augment_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(2));
    let mut log = LossLog::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut optimizer = cfg.optimizer;
    for epoch in 1..=cfg.epochs {
        optimizer.lr = cfg.optimizer.lr * cfg.lr_decay.powi(epoch as i32 - 1);
        order.shuffle(&mut order_rng);
        let mut epoch_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            params.zero_grad();
            let scale = 1.0 / batch.len() as f64;
            for &idx in batch {
                let rotated;
                let w = if cfg.augment_rotation {
                    rotated = rotate_window(&train[idx], augment_rng.random_range(0.0..std::f64::consts::TAU))?;
                    &rotated
                } else {
                    &train[idx]
                };
                let mut g = Graph::new();
                let mut mode = Mode::Train(&mut dropout_rng);
                let loss = window_loss(model, &mut g, params, w, emb, &mut mode, cfg.mode)?;
                let value = g.value(loss).data()[0];
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch, batch: b, param_norm: params.value_norm() });
                }
                epoch_sum += value;
                g.backward_into(loss, params, scale)?;
            }
            if let Some(max) = cfg.clip_norm {
                params.clip_grad_norm(max);
            }
            optimizer.step(params)?;
            if !params.iter().all(|(_, p)| p.value.all_finite()) {
                return Err(Error::Diverged { epoch, batch: b, param_norm: params.value_norm() });
            }
        }
        let train_loss = epoch_sum / train.len() as f64;
        log.entries.push(EpochLoss { epoch, split: Split::Train, loss: train_loss });
        if !val.is_empty() {
            let v = dataset_loss(model, params, val, emb, cfg.mode)?;
            log.entries.push(EpochLoss { epoch, split: Split::Val, loss: v });
            debug!("epoch {epoch}: train {train_loss:.6} val {v:.6}");
        } else {
            debug!("epoch {epoch}: train {train_loss:.6}");
        }
        if epoch % 10 == 0 || epoch == cfg.epochs {
            info!("epoch {epoch}/{}: train loss {train_loss:.6}", cfg.epochs);
        }
        on_epoch(epoch, params, &log)?;
    }
    Ok(log)
}
