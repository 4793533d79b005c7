//! The forecasting network.
//!
//! Per scene: centroid-frame encoding of the observed tracks, invariant
//! speed/heading features, one invariant reasoning pass that weights every
//! directed edge, then `layers` rounds of message passing. Each round
//! updates coordinates with
//!
//! ```text
//! x_i <- x_i + 1/(M-1) * sum_j (x_i - x_j) * phi_x(m_ij)     (per channel)
//! h_i <- phi_h(h_i, sum_j m_ij)
//! m_ij = phi_e(h_i, h_j, |x_i - x_j|^2, token, a_ij)
//! ```
//!
//! and a bias-free time map turns the final coordinates into the future
//! track. The last round and the output map are replicated per head.

mod checkpoint;
mod config;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use config::{parse_key_values, ModelConfig, MULTI_HEADS};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{
    build_graph, compute_centroid, encode_on_graph, heading_change, pattern_init_spec, pattern_input,
    speed_profile, AgentGraph, Centroid, GeometricState, PatternState, Point, TrajectoryScene,
};
use crate::numerics::{dct_matrix, Graph, MlpSpec, Mode, ParamStore, Tensor, Var};
use crate::scene::{scene_token_on_graph, SceneEmbedding, SceneToken};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// Head 0 only.
    Deterministic,
    /// Every configured head.
    Multi,
}

impl HeadMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            HeadMode::Deterministic => "deterministic",
            HeadMode::Multi => "multi",
        }
    }
}

impl std::str::FromStr for HeadMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(HeadMode::Deterministic),
            "multi" => Ok(HeadMode::Multi),
            _ => Err(Error::Config(format!("unknown mode `{s}` (deterministic|multi)"))),
        }
    }
}

/// Predicted absolute futures, `heads[h][agent][t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub heads: Vec<Vec<Vec<Point>>>,
}

impl PredictionSet {
    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn num_agents(&self) -> usize {
        self.heads.first().map_or(0, Vec::len)
    }
}

/// Per-edge interaction weights `[E, K]`, rows on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionWeights {
    pub weights: Tensor,
}

/// Handles into a recorded forward pass.
#[derive(Debug)]
pub struct Recorded {
    pub centroid: Centroid,
    pub graph: AgentGraph,
    /// Absolute predictions per head as `(xs, ys)`, each `[M, T_pred]`.
    pub heads: Vec<(Var, Var)>,
    /// `h^0 ..= h^L`; the last entry belongs to head 0.
    pub pattern: Vec<Var>,
    /// `x^0 ..= x^L`; the last entry belongs to head 0.
    pub geometric: Vec<(Var, Var)>,
    /// Edge messages of each round (`None` without edges).
    pub messages: Vec<Option<Var>>,
    pub weights: Option<Var>,
    pub token: Var,
}

/// Plain-value snapshot of every intermediate of an eval-mode pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub speeds: Vec<Vec<f64>>,
    pub headings: Vec<Vec<f64>>,
    pub pattern: Vec<PatternState>,
    pub geometric: Vec<GeometricState>,
    pub messages: Vec<Option<Tensor>>,
    pub weights: Option<InteractionWeights>,
    pub token: SceneToken,
    pub predictions: PredictionSet,
}

#[derive(Debug, Clone)]
pub struct Forecaster {
    config: ModelConfig,
}

struct LayerOut {
    gx: Var,
    gy: Var,
    h: Var,
    messages: Option<Var>,
}

/// Edge-level geometry shared by the reasoning pass and message rounds.
struct EdgeGeometry {
    dx: Var,
    dy: Var,
    dist2: Var,
}

pub fn head_prefix(k: usize) -> String {
    format!("head{k:02}")
}

impl Forecaster {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Forecaster { config })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn message_input_width(&self) -> usize {
        let c = &self.config;
        2 * c.pattern_width + c.channels + c.token_dim + c.categories
    }

    pub fn phi_e(&self, prefix: &str) -> MlpSpec {
        let c = &self.config;
        MlpSpec::new(format!("{prefix}.phi_e"), &[self.message_input_width(), c.hidden_width, c.message_width])
            .and_then(|s| s.with_dropout(c.dropout))
            .expect("validated config")
            .with_final_activation(true)
    }

    pub fn phi_x(&self, prefix: &str) -> MlpSpec {
        let c = &self.config;
        MlpSpec::new(format!("{prefix}.phi_x"), &[c.message_width, c.hidden_width, c.channels])
            .and_then(|s| s.with_dropout(c.dropout))
            .expect("validated config")
            .without_final_bias()
    }

    pub fn phi_h(&self, prefix: &str) -> MlpSpec {
        let c = &self.config;
        MlpSpec::new(
            format!("{prefix}.phi_h"),
            &[c.pattern_width + c.message_width, c.hidden_width, c.pattern_width],
        )
        .and_then(|s| s.with_dropout(c.dropout))
        .expect("validated config")
    }

    pub fn reasoning(&self) -> MlpSpec {
        let c = &self.config;
        MlpSpec::new("reason", &[2 * c.pattern_width + c.channels, c.hidden_width, c.categories])
            .and_then(|s| s.with_dropout(c.dropout))
            .expect("validated config")
    }

    pub fn output_map(&self, head: usize) -> MlpSpec {
        let c = &self.config;
        MlpSpec::new(format!("{}.out", head_prefix(head)), &[c.channels, c.t_pred])
            .expect("validated config")
            .without_bias()
    }

    fn layer_prefix(&self, layer: usize, head: usize) -> String {
        if layer + 1 == self.config.layers {
            head_prefix(head)
        } else {
            format!("layer{layer}")
        }
    }

    /// Fresh parameters. Head replicas copy head 0 and add independent
    /// uniform noise; the final scoring layer of every round starts at zero.
    pub fn init(&self, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
        let c = &self.config;
        let mut store = ParamStore::new();
        c.encoder().mixing_spec().init(&mut store, rng);
        pattern_init_spec(c.t_obs, c.pattern_width).init(&mut store, rng);
        c.scene().init(&mut store, rng);
        self.reasoning().init(&mut store, rng);
        for layer in 0..c.layers {
            let prefix = self.layer_prefix(layer, 0);
            self.phi_e(&prefix).init(&mut store, rng);
            let phi_x = self.phi_x(&prefix);
            phi_x.init(&mut store, rng);
            phi_x.zero_final(&mut store)?;
            self.phi_h(&prefix).init(&mut store, rng);
        }
        self.output_map(0).init(&mut store, rng);

        let base = format!("{}.", head_prefix(0));
        let frozen_zero = self.phi_x(&head_prefix(0)).weight_name(1);
        let head0: Vec<(String, Tensor)> = store
            .iter()
            .filter(|(n, _)| n.starts_with(&base))
            .map(|(n, p)| (n.to_string(), p.value.clone()))
            .collect();
        for k in 1..c.heads {
            let prefix = format!("{}.", head_prefix(k));
            for (name, value) in &head0 {
                let mut v = value.clone();
                if *name != frozen_zero {
                    let bound = c.head_perturbation * (1.0 / v.rows().max(1) as f64).sqrt();
                    if bound > 0.0 {
                        for x in v.data_mut() {
                            *x += rng.random_range(-bound..=bound);
                        }
                    }
                }
                store.insert(name.replacen(&base, &prefix, 1), v);
            }
        }
        Ok(store)
    }

    fn edge_geometry(g: &mut Graph, gx: Var, gy: Var, graph: &AgentGraph) -> Result<EdgeGeometry> {
        let xi = g.gather_rows(gx, &graph.src)?;
        let xj = g.gather_rows(gx, &graph.dst)?;
        let yi = g.gather_rows(gy, &graph.src)?;
        let yj = g.gather_rows(gy, &graph.dst)?;
        let dx = g.sub(xi, xj)?;
        let dy = g.sub(yi, yj)?;
        let dx2 = g.mul(dx, dx)?;
        let dy2 = g.mul(dy, dy)?;
        let dist2 = g.add(dx2, dy2)?;
        Ok(EdgeGeometry { dx, dy, dist2 })
    }

    /// Softmax over categories of an MLP of `(h_i, h_j, |x_i - x_j|^2)`.
    fn reasoning_on_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        h: Var,
        geo: &EdgeGeometry,
        graph: &AgentGraph,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let hi = g.gather_rows(h, &graph.src)?;
        let hj = g.gather_rows(h, &graph.dst)?;
        let input = g.concat_cols(&[hi, hj, geo.dist2])?;
        let logits = self.reasoning().forward(g, store, input, mode)?;
        Ok(g.softmax_rows(logits))
    }

    #[allow(clippy::too_many_arguments)]
    fn messages_on_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: &str,
        h: Var,
        geo: &EdgeGeometry,
        token: Var,
        weights: Var,
        graph: &AgentGraph,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let hi = g.gather_rows(h, &graph.src)?;
        let hj = g.gather_rows(h, &graph.dst)?;
        let tok = g.gather_rows(token, &vec![0; graph.num_edges()])?;
        let input = g.concat_cols(&[hi, hj, geo.dist2, tok, weights])?;
        self.phi_e(prefix).forward(g, store, input, mode)
    }

    #[allow(clippy::too_many_arguments)]
    fn equivariant_on_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: &str,
        gx: Var,
        gy: Var,
        geo: &EdgeGeometry,
        messages: Var,
        graph: &AgentGraph,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Var)> {
        let m = graph.num_nodes;
        let scores = self.phi_x(prefix).forward(g, store, messages, mode)?;
        let c = 1.0 / (m - 1) as f64;
        let ux = g.mul(geo.dx, scores)?;
        let uy = g.mul(geo.dy, scores)?;
        let sx = g.scatter_add_rows(ux, &graph.src, m)?;
        let sy = g.scatter_add_rows(uy, &graph.src, m)?;
        let sx = g.scale(sx, c);
        let sy = g.scale(sy, c);
        Ok((g.add(gx, sx)?, g.add(gy, sy)?))
    }

    #[allow(clippy::too_many_arguments)]
    fn invariant_on_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: &str,
        h: Var,
        messages: Option<Var>,
        graph: &AgentGraph,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let m = graph.num_nodes;
        let agg = match messages {
            Some(msg) => g.scatter_add_rows(msg, &graph.src, m)?,
            None => g.constant(Tensor::zeros(&[m, self.config.message_width])),
        };
        let input = g.concat_cols(&[h, agg])?;
        self.phi_h(prefix).forward(g, store, input, mode)
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_on_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        prefix: &str,
        gx: Var,
        gy: Var,
        h: Var,
        token: Var,
        weights: Option<Var>,
        graph: &AgentGraph,
        mode: &mut Mode<'_>,
    ) -> Result<LayerOut> {
        let Some(weights) = weights else {
            // No edges: coordinates pass through, features see an empty sum.
            let h = self.invariant_on_graph(g, store, prefix, h, None, graph, mode)?;
            return Ok(LayerOut { gx, gy, h, messages: None });
        };
        let geo = Self::edge_geometry(g, gx, gy, graph)?;
        let msg = self.messages_on_graph(g, store, prefix, h, &geo, token, weights, graph, mode)?;
        let (nx, ny) = self.equivariant_on_graph(g, store, prefix, gx, gy, &geo, msg, graph, mode)?;
        let nh = self.invariant_on_graph(g, store, prefix, h, Some(msg), graph, mode)?;
        Ok(LayerOut { gx: nx, gy: ny, h: nh, messages: Some(msg) })
    }

    /// Inverse DCT over channels (when the encoder used it), the head's
    /// time map, then back to absolute coordinates.
    fn output_on_graph(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        head: usize,
        gx: Var,
        gy: Var,
        centroid: Centroid,
    ) -> Result<(Var, Var)> {
        let c = &self.config;
        let (mut ox, mut oy) = (gx, gy);
        if c.dct {
            let d = g.constant(dct_matrix(c.channels));
            ox = g.matmul(ox, d)?;
            oy = g.matmul(oy, d)?;
        }
        let spec = self.output_map(head);
        ox = spec.forward(g, store, ox, &mut Mode::Eval)?;
        oy = spec.forward(g, store, oy, &mut Mode::Eval)?;
        let cx = g.constant(Tensor::row(vec![centroid.0[0]; c.t_pred]));
        let cy = g.constant(Tensor::row(vec![centroid.0[1]; c.t_pred]));
        Ok((g.add_row(ox, cx)?, g.add_row(oy, cy)?))
    }

    /// Records a full forward pass on `g`.
    pub fn record(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        scene: &TrajectoryScene,
        emb: Option<&SceneEmbedding>,
        mode: &mut Mode<'_>,
        heads: HeadMode,
    ) -> Result<Recorded> {
        let c = &self.config;
        if scene.t_obs() != c.t_obs {
            return Err(Error::shape("scene observation length", c.t_obs, scene.t_obs()));
        }
        let head_ids: Vec<usize> = match heads {
            HeadMode::Deterministic => vec![0],
            HeadMode::Multi => (0..c.heads).collect(),
        };
        let centroid = compute_centroid(scene)?;
        let mut graph = build_graph(scene);

        let (gx0, gy0) = encode_on_graph(g, store, scene, centroid, &c.encoder())?;
        let pin = pattern_input(&speed_profile(scene)?, &heading_change(scene)?)?;
        let pin = g.constant(pin);
        let h0 = pattern_init_spec(c.t_obs, c.pattern_width).forward(g, store, pin, mode)?;
        let token = scene_token_on_graph(g, store, emb, &c.scene())?;

        let weights = if graph.num_edges() > 0 {
            let geo = Self::edge_geometry(g, gx0, gy0, &graph)?;
            let w = self.reasoning_on_graph(g, store, h0, &geo, &graph, mode)?;
            graph.attributes = Some(g.value(w).clone());
            Some(w)
        } else {
            None
        };

        let mut pattern = vec![h0];
        let mut geometric = vec![(gx0, gy0)];
        let mut messages = Vec::new();
        let (mut gx, mut gy, mut h) = (gx0, gy0, h0);
        for layer in 0..c.layers - 1 {
            let prefix = self.layer_prefix(layer, 0);
            let out = self.layer_on_graph(g, store, &prefix, gx, gy, h, token, weights, &graph, mode)?;
            (gx, gy, h) = (out.gx, out.gy, out.h);
            pattern.push(h);
            geometric.push((gx, gy));
            messages.push(out.messages);
        }

        let mut outputs = Vec::with_capacity(head_ids.len());
        for (n, &k) in head_ids.iter().enumerate() {
            let prefix = head_prefix(k);
            let out = self.layer_on_graph(g, store, &prefix, gx, gy, h, token, weights, &graph, mode)?;
            if n == 0 {
                pattern.push(out.h);
                geometric.push((out.gx, out.gy));
                messages.push(out.messages);
            }
            outputs.push(self.output_on_graph(g, store, k, out.gx, out.gy, centroid)?);
        }

        Ok(Recorded {
            centroid,
            graph,
            heads: outputs,
            pattern,
            geometric,
            messages,
            weights,
            token,
        })
    }

    fn collect_predictions(g: &Graph, rec: &Recorded) -> PredictionSet {
        let heads = rec
            .heads
            .iter()
            .map(|&(px, py)| {
                let (xs, ys) = (g.value(px), g.value(py));
                (0..xs.rows())
                    .map(|i| (0..xs.cols()).map(|t| [xs.get(i, t), ys.get(i, t)]).collect())
                    .collect()
            })
            .collect();
        PredictionSet { heads }
    }

    pub fn forward(
        &self,
        store: &ParamStore,
        scene: &TrajectoryScene,
        emb: Option<&SceneEmbedding>,
        mode: &mut Mode<'_>,
        heads: HeadMode,
    ) -> Result<PredictionSet> {
        let mut g = Graph::new();
        let rec = self.record(&mut g, store, scene, emb, mode, heads)?;
        Ok(Self::collect_predictions(&g, &rec))
    }

    pub fn forward_deterministic(
        &self,
        store: &ParamStore,
        scene: &TrajectoryScene,
        emb: Option<&SceneEmbedding>,
        mode: &mut Mode<'_>,
    ) -> Result<PredictionSet> {
        self.forward(store, scene, emb, mode, HeadMode::Deterministic)
    }

    pub fn forward_multi(
        &self,
        store: &ParamStore,
        scene: &TrajectoryScene,
        emb: Option<&SceneEmbedding>,
        mode: &mut Mode<'_>,
    ) -> Result<PredictionSet> {
        self.forward(store, scene, emb, mode, HeadMode::Multi)
    }

    /// Eval-mode pass that keeps every intermediate.
    pub fn trace(
        &self,
        store: &ParamStore,
        scene: &TrajectoryScene,
        emb: Option<&SceneEmbedding>,
        heads: HeadMode,
    ) -> Result<ForwardTrace> {
        let mut g = Graph::new();
        let rec = self.record(&mut g, store, scene, emb, &mut Mode::Eval, heads)?;
        let val = |v: Var| g.value(v).clone();
        Ok(ForwardTrace {
            speeds: speed_profile(scene)?,
            headings: heading_change(scene)?,
            pattern: rec
                .pattern
                .iter()
                .enumerate()
                .map(|(layer, &h)| PatternState { h: val(h), layer })
                .collect(),
            geometric: rec
                .geometric
                .iter()
                .enumerate()
                .map(|(layer, &(x, y))| GeometricState { xs: val(x), ys: val(y), layer })
                .collect(),
            messages: rec.messages.iter().map(|m| m.map(val)).collect(),
            weights: rec.weights.map(|w| InteractionWeights { weights: val(w) }),
            token: SceneToken { values: val(rec.token) },
            predictions: Self::collect_predictions(&g, &rec),
        })
    }

    /// Interaction weights from layer-0 states.
    pub fn infer_interaction_graph(
        &self,
        geo: &GeometricState,
        pattern: &PatternState,
        graph: &AgentGraph,
        store: &ParamStore,
    ) -> Result<Option<InteractionWeights>> {
        if graph.num_edges() == 0 {
            return Ok(None);
        }
        let mut g = Graph::new();
        let gx = g.constant(geo.xs.clone());
        let gy = g.constant(geo.ys.clone());
        let h = g.constant(pattern.h.clone());
        let eg = Self::edge_geometry(&mut g, gx, gy, graph)?;
        let w = self.reasoning_on_graph(&mut g, store, h, &eg, graph, &mut Mode::Eval)?;
        Ok(Some(InteractionWeights { weights: g.value(w).clone() }))
    }

    /// Per-edge messages `[E, D_m]` of one round; `None` without edges.
    #[allow(clippy::too_many_arguments)]
    pub fn compute_messages(
        &self,
        geo: &GeometricState,
        pattern: &PatternState,
        token: &SceneToken,
        weights: &InteractionWeights,
        graph: &AgentGraph,
        store: &ParamStore,
        prefix: &str,
    ) -> Result<Option<Tensor>> {
        if graph.num_edges() == 0 {
            return Ok(None);
        }
        let mut g = Graph::new();
        let gx = g.constant(geo.xs.clone());
        let gy = g.constant(geo.ys.clone());
        let h = g.constant(pattern.h.clone());
        let t = g.constant(token.values.clone());
        let w = g.constant(weights.weights.clone());
        let eg = Self::edge_geometry(&mut g, gx, gy, graph)?;
        let m = self.messages_on_graph(&mut g, store, prefix, h, &eg, t, w, graph, &mut Mode::Eval)?;
        Ok(Some(g.value(m).clone()))
    }

    pub fn equivariant_update(
        &self,
        geo: &GeometricState,
        messages: Option<&Tensor>,
        graph: &AgentGraph,
        store: &ParamStore,
        prefix: &str,
    ) -> Result<GeometricState> {
        let Some(messages) = messages.filter(|_| graph.num_edges() > 0) else {
            return Ok(GeometricState { layer: geo.layer + 1, ..geo.clone() });
        };
        let mut g = Graph::new();
        let gx = g.constant(geo.xs.clone());
        let gy = g.constant(geo.ys.clone());
        let m = g.constant(messages.clone());
        let eg = Self::edge_geometry(&mut g, gx, gy, graph)?;
        let (nx, ny) = self.equivariant_on_graph(&mut g, store, prefix, gx, gy, &eg, m, graph, &mut Mode::Eval)?;
        Ok(GeometricState { xs: g.value(nx).clone(), ys: g.value(ny).clone(), layer: geo.layer + 1 })
    }

    pub fn invariant_update(
        &self,
        pattern: &PatternState,
        messages: Option<&Tensor>,
        graph: &AgentGraph,
        store: &ParamStore,
        prefix: &str,
    ) -> Result<PatternState> {
        let mut g = Graph::new();
        let h = g.constant(pattern.h.clone());
        let m = messages.filter(|_| graph.num_edges() > 0).map(|m| g.constant(m.clone()));
        let nh = self.invariant_on_graph(&mut g, store, prefix, h, m, graph, &mut Mode::Eval)?;
        Ok(PatternState { h: g.value(nh).clone(), layer: pattern.layer + 1 })
    }

    /// Absolute future track per agent for one head.
    pub fn output_layer(
        &self,
        geo: &GeometricState,
        centroid: Centroid,
        store: &ParamStore,
        head: usize,
    ) -> Result<Vec<Vec<Point>>> {
        if head >= self.config.heads {
            return Err(Error::Input(format!("head {head} out of range (have {})", self.config.heads)));
        }
        let mut g = Graph::new();
        let gx = g.constant(geo.xs.clone());
        let gy = g.constant(geo.ys.clone());
        let (px, py) = self.output_on_graph(&mut g, store, head, gx, gy, centroid)?;
        let (xs, ys) = (g.value(px), g.value(py));
        Ok((0..xs.rows())
            .map(|i| (0..xs.cols()).map(|t| [xs.get(i, t), ys.get(i, t)]).collect())
            .collect())
    }
}

#[cfg(test)]
mod tests;
