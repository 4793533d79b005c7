//! Self-checks shared by the command line and the test suites: the
//! rigid-motion symmetry suite and a full-model gradient check.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Window;
use crate::error::{Error, Result};
use crate::geometry::{Rigid2, TrajectoryScene};
use crate::model::{Forecaster, HeadMode, PredictionSet};
use crate::numerics::{grad_check, GradCheckReport, Mode, ParamStore, Tensor};
use crate::scene::SceneEmbedding;
use crate::training::window_loss;

/// Worst deviations seen by [`symmetry_suite`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SymmetryReport {
    pub transforms: usize,
    pub scenes: usize,
    pub heads: usize,
    /// `max |F(R X + t) - (R F(X) + t)|` over heads, agents, steps.
    pub equivariance: f64,
    /// Per-layer worst change of the pattern features `h^0..h^L`.
    pub pattern: Vec<f64>,
    pub messages: f64,
    pub weights: f64,
    pub speeds: f64,
    pub headings: f64,
}

impl SymmetryReport {
    pub fn invariance(&self) -> f64 {
        self.pattern
            .iter()
            .copied()
            .chain([self.messages, self.weights, self.speeds, self.headings])
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, equivariance_tol: f64, invariance_tol: f64) -> bool {
        self.equivariance <= equivariance_tol && self.invariance() <= invariance_tol
    }
}

fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.max_abs_diff(b)
}

fn nested_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn prediction_error(base: &PredictionSet, moved: &PredictionSet, tf: &Rigid2) -> f64 {
    let mut worst: f64 = 0.0;
    for (hb, hm) in base.heads.iter().zip(&moved.heads) {
        for (tb, tm) in hb.iter().zip(hm) {
            for (p, q) in tb.iter().zip(tm) {
                let r = tf.apply(*p);
                worst = worst.max((r[0] - q[0]).abs()).max((r[1] - q[1]).abs());
            }
        }
    }
    worst
}

/// Random proper rigid motion: angle uniform on `[0, 2 pi)`, translation
/// uniform in `[-scale, scale]^2`.
pub fn random_rigid(rng: &mut ChaCha8Rng, scale: f64) -> Rigid2 {
    Rigid2::new(
        rng.random_range(0.0..TAU),
        [rng.random_range(-scale..=scale), rng.random_range(-scale..=scale)],
    )
}

/// Applies `transforms` random rigid motions to every scene (cycling through
/// the scenes) and compares eval-mode outputs of every head against the
/// untransformed pass.
pub fn symmetry_suite(
    model: &Forecaster,
    store: &ParamStore,
    scenes: &[TrajectoryScene],
    emb: Option<&SceneEmbedding>,
    transforms: usize,
    seed: u64,
) -> Result<SymmetryReport> {
    if scenes.is_empty() {
        return Err(Error::Input("symmetry suite needs at least one scene".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SymmetryReport {
        transforms,
        scenes: scenes.len(),
        heads: model.config().heads,
        pattern: vec![0.0; model.config().layers + 1],
        ..SymmetryReport::default()
    };
    let bases = scenes
        .iter()
        .map(|s| model.trace(store, s, emb, HeadMode::Multi))
        .collect::<Result<Vec<_>>>()?;
    for k in 0..transforms {
        let idx = k % scenes.len();
        let tf = random_rigid(&mut rng, 100.0);
        let base = &bases[idx];
        let moved = model.trace(store, &scenes[idx].transformed(&tf), emb, HeadMode::Multi)?;

        report.equivariance = report.equivariance.max(prediction_error(&base.predictions, &moved.predictions, &tf));
        for (l, (a, b)) in base.pattern.iter().zip(&moved.pattern).enumerate() {
            report.pattern[l] = report.pattern[l].max(max_diff(&a.h, &b.h));
        }
        for (a, b) in base.messages.iter().zip(&moved.messages) {
            if let (Some(a), Some(b)) = (a, b) {
                report.messages = report.messages.max(max_diff(a, b));
            }
        }
        if let (Some(a), Some(b)) = (&base.weights, &moved.weights) {
            report.weights = report.weights.max(max_diff(&a.weights, &b.weights));
        }
        report.speeds = report.speeds.max(nested_diff(&base.speeds, &moved.speeds));
        report.headings = report.headings.max(nested_diff(&base.headings, &moved.headings));
    }
    Ok(report)
}

/// Finite-difference check of the deterministic training loss of one
/// window against reverse-mode gradients, over every parameter tensor.
/// `per_param` entries are sampled from each tensor (all when `None`).
pub fn loss_grad_check(
    model: &Forecaster,
    store: &ParamStore,
    window: &Window,
    emb: Option<&SceneEmbedding>,
    h: f64,
    per_param: Option<usize>,
) -> Result<GradCheckReport> {
    grad_check(store, h, per_param, |g, s| {
        window_loss(model, g, s, window, emb, &mut Mode::Eval, HeadMode::Deterministic)
    })
}

/// Copy of `store` with uniform noise of half-width `amplitude` added to
/// every entry. Used to move zero-started layers off their trivial point
/// before a gradient check.
pub fn jittered(store: &ParamStore, amplitude: f64, seed: u64) -> Result<ParamStore> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = store.values_only();
    let names: Vec<String> = out.names().map(str::to_string).collect();
    for name in names {
        for v in out.get_mut(&name)?.data_mut() {
            *v += rng.random_range(-amplitude..=amplitude);
        }
    }
    Ok(out)
}
