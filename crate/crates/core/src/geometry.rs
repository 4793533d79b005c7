//! Scene containers, the centroid frame, initial geometric/pattern features
//! and the agent graph.

use crate::error::{Error, Result};
use crate::numerics::{dct_matrix, Graph, MlpSpec, Mode, ParamStore, Tensor, Var};

pub type Point = [f64; 2];

/// Velocities shorter than this have no defined heading.
pub const STATIONARY_EPS: f64 = 1e-9;

/// Observed window of every agent in one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryScene {
    pub scene_id: String,
    pub agent_ids: Vec<i64>,
    /// Frame ids of the observed steps.
    pub frames: Vec<i64>,
    /// `positions[agent][t]`, meters.
    pub positions: Vec<Vec<Point>>,
}

impl TrajectoryScene {
    pub fn new(
        scene_id: impl Into<String>,
        agent_ids: Vec<i64>,
        frames: Vec<i64>,
        positions: Vec<Vec<Point>>,
    ) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Input("scene has no agents".into()));
        }
        if agent_ids.len() != positions.len() {
            return Err(Error::shape("scene agent ids", positions.len(), agent_ids.len()));
        }
        let t = positions[0].len();
        if t == 0 {
            return Err(Error::Input("scene has an empty observation window".into()));
        }
        if frames.len() != t {
            return Err(Error::shape("scene frame ids", t, frames.len()));
        }
        for (i, track) in positions.iter().enumerate() {
            if track.len() != t {
                return Err(Error::shape(format!("observation length of agent {i}"), t, track.len()));
            }
            if track.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("positions of agent {}", agent_ids[i])));
            }
        }
        Ok(TrajectoryScene {
            scene_id: scene_id.into(),
            agent_ids,
            frames,
            positions,
        })
    }

    /// Builds a scene with agent ids `0..M` and frame ids `0..T`.
    pub fn from_positions(positions: Vec<Vec<Point>>) -> Result<Self> {
        let m = positions.len() as i64;
        let t = positions.first().map_or(0, Vec::len) as i64;
        Self::new("anon", (0..m).collect(), (0..t).collect(), positions)
    }

    pub fn num_agents(&self) -> usize {
        self.positions.len()
    }

    pub fn t_obs(&self) -> usize {
        self.positions[0].len()
    }

    pub fn transformed(&self, tf: &Rigid2) -> Self {
        let mut out = self.clone();
        for p in out.positions.iter_mut().flatten() {
            *p = tf.apply(*p);
        }
        out
    }

    /// Reorders agents so that new agent `k` is old agent `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        TrajectoryScene {
            scene_id: self.scene_id.clone(),
            agent_ids: order.iter().map(|&i| self.agent_ids[i]).collect(),
            frames: self.frames.clone(),
            positions: order.iter().map(|&i| self.positions[i].clone()).collect(),
        }
    }
}

/// Planar rotation by `angle` (radians) followed by a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid2 {
    pub angle: f64,
    pub translation: Point,
}

impl Rigid2 {
    pub fn new(angle: f64, translation: Point) -> Self {
        Rigid2 { angle, translation }
    }

    pub fn rotate(&self, p: Point) -> Point {
        let (s, c) = self.angle.sin_cos();
        [c * p[0] - s * p[1], s * p[0] + c * p[1]]
    }

    pub fn apply(&self, p: Point) -> Point {
        let r = self.rotate(p);
        [r[0] + self.translation[0], r[1] + self.translation[1]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centroid(pub Point);

pub fn compute_centroid(scene: &TrajectoryScene) -> Result<Centroid> {
    let n = scene.positions.iter().map(Vec::len).sum::<usize>();
    if n == 0 {
        return Err(Error::Input("centroid of an empty scene".into()));
    }
    let (mut sx, mut sy) = (0.0, 0.0);
    for p in scene.positions.iter().flatten() {
        sx += p[0];
        sy += p[1];
    }
    Ok(Centroid([sx / n as f64, sy / n as f64]))
}

/// Coordinate features of every agent, split into x and y planes of shape
/// `[M, T_c]` (channel `c` of agent `i` is `(xs[i, c], ys[i, c])`).
#[derive(Debug, Clone, PartialEq)]
pub struct GeometricState {
    pub xs: Tensor,
    pub ys: Tensor,
    pub layer: usize,
}

impl GeometricState {
    pub fn num_agents(&self) -> usize {
        self.xs.rows()
    }

    pub fn channels(&self) -> usize {
        self.xs.cols()
    }

    pub fn agent(&self, i: usize) -> Vec<Point> {
        (0..self.channels())
            .map(|c| [self.xs.get(i, c), self.ys.get(i, c)])
            .collect()
    }
}

/// Invariant per-agent feature vectors, `[M, D_h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatternState {
    pub h: Tensor,
    pub layer: usize,
}

/// Time-axis encoder configuration for the geometric channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub t_obs: usize,
    pub channels: usize,
    pub dct: bool,
    /// Number of lowest DCT frequencies kept; `None` keeps all.
    pub dct_keep: Option<usize>,
}

impl EncoderConfig {
    /// Width of the time axis entering the learned time mixing.
    pub fn mixing_input(&self) -> usize {
        match (self.dct, self.dct_keep) {
            (true, Some(k)) => k.min(self.t_obs),
            _ => self.t_obs,
        }
    }

    /// Constant `[T_obs, K]` right factor mapping a row of samples to its
    /// kept DCT coefficients, or `None` when the DCT is off.
    pub fn time_basis(&self) -> Option<Tensor> {
        if !self.dct {
            return None;
        }
        let k = self.mixing_input();
        let d = dct_matrix(self.t_obs);
        let mut b = Tensor::zeros(&[self.t_obs, k]);
        for t in 0..self.t_obs {
            for f in 0..k {
                b.set(t, f, d.get(f, t));
            }
        }
        Some(b)
    }

    pub fn mixing_spec(&self) -> MlpSpec {
        MlpSpec::new("enc.phi_x", &[self.mixing_input(), self.channels])
            .expect("positive widths")
            .without_bias()
    }
}

/// `(X - centroid)` split into `[M, T_obs]` x and y planes.
pub fn centered_planes(scene: &TrajectoryScene, centroid: Centroid) -> (Tensor, Tensor) {
    let (m, t) = (scene.num_agents(), scene.t_obs());
    let mut xs = Vec::with_capacity(m * t);
    let mut ys = Vec::with_capacity(m * t);
    for track in &scene.positions {
        for p in track {
            xs.push(p[0] - centroid.0[0]);
            ys.push(p[1] - centroid.0[1]);
        }
    }
    (
        Tensor::from_parts(vec![m, t], xs),
        Tensor::from_parts(vec![m, t], ys),
    )
}

/// Records the geometric encoder on `g`: centering, optional DCT, then the
/// bias-free time mixing shared by both coordinate planes.
pub fn encode_on_graph(
    g: &mut Graph,
    store: &ParamStore,
    scene: &TrajectoryScene,
    centroid: Centroid,
    cfg: &EncoderConfig,
) -> Result<(Var, Var)> {
    if scene.t_obs() != cfg.t_obs {
        return Err(Error::shape("observation length", cfg.t_obs, scene.t_obs()));
    }
    let spec = cfg.mixing_spec();
    let (xs, ys) = centered_planes(scene, centroid);
    let (xs, ys) = match cfg.time_basis() {
        Some(b) => (xs.matmul(&b)?, ys.matmul(&b)?),
        None => (xs, ys),
    };
    let xv = g.constant(xs);
    let yv = g.constant(ys);
    let ex = spec.forward(g, store, xv, &mut Mode::Eval)?;
    let ey = spec.forward(g, store, yv, &mut Mode::Eval)?;
    Ok((ex, ey))
}

/// Layer-0 geometric state in the centroid frame.
pub fn encode_trajectory(
    scene: &TrajectoryScene,
    centroid: Centroid,
    store: &ParamStore,
    cfg: &EncoderConfig,
) -> Result<GeometricState> {
    let mut g = Graph::new();
    let (x, y) = encode_on_graph(&mut g, store, scene, centroid, cfg)?;
    Ok(GeometricState {
        xs: g.value(x).clone(),
        ys: g.value(y).clone(),
        layer: 0,
    })
}

fn velocities(track: &[Point]) -> Vec<Point> {
    track
        .windows(2)
        .map(|w| [w[1][0] - w[0][0], w[1][1] - w[0][1]])
        .collect()
}

/// Per-agent step lengths `|x[t+1] - x[t]|`, `T_obs - 1` values each.
pub fn speed_profile(scene: &TrajectoryScene) -> Result<Vec<Vec<f64>>> {
    if scene.t_obs() < 2 {
        return Err(Error::Input(format!("speed profile needs >= 2 steps, got {}", scene.t_obs())));
    }
    Ok(scene
        .positions
        .iter()
        .map(|track| velocities(track).iter().map(|v| v[0].hypot(v[1])).collect())
        .collect())
}

/// Unsigned angle in `[0, pi]` between consecutive velocities; 0 when
/// either velocity is shorter than [`STATIONARY_EPS`].
pub fn turn_angle(a: Point, b: Point) -> f64 {
    let (na, nb) = (a[0].hypot(a[1]), b[0].hypot(b[1]));
    if na < STATIONARY_EPS || nb < STATIONARY_EPS {
        return 0.0;
    }
    let cross = a[0] * b[1] - a[1] * b[0];
    let dot = a[0] * b[0] + a[1] * b[1];
    cross.abs().atan2(dot)
}

/// Per-agent heading changes, `T_obs - 2` values each.
pub fn heading_change(scene: &TrajectoryScene) -> Result<Vec<Vec<f64>>> {
    if scene.t_obs() < 3 {
        return Err(Error::Input(format!("heading change needs >= 3 steps, got {}", scene.t_obs())));
    }
    Ok(scene
        .positions
        .iter()
        .map(|track| {
            velocities(track)
                .windows(2)
                .map(|w| turn_angle(w[1], w[0]))
                .collect()
        })
        .collect())
}

/// `[M, 2 (T_obs - 1)]` rows of `(speeds, 0, headings)`.
pub fn pattern_input(speeds: &[Vec<f64>], headings: &[Vec<f64>]) -> Result<Tensor> {
    if speeds.len() != headings.len() || speeds.is_empty() {
        return Err(Error::shape("speed/heading agent count", speeds.len(), headings.len()));
    }
    let w = speeds[0].len();
    let mut data = Vec::with_capacity(speeds.len() * 2 * w);
    for (rho, theta) in speeds.iter().zip(headings) {
        if rho.len() != w || theta.len() + 1 != w {
            return Err(Error::shape("speed/heading profile length", w, format!("{}/{}", rho.len(), theta.len() + 1)));
        }
        data.extend_from_slice(rho);
        data.push(0.0);
        data.extend_from_slice(theta);
    }
    Ok(Tensor::from_parts(vec![speeds.len(), 2 * w], data))
}

pub fn pattern_init_spec(t_obs: usize, width: usize) -> MlpSpec {
    MlpSpec::new("enc.phi_h0", &[2 * (t_obs - 1), width]).expect("positive widths")
}

/// Layer-0 pattern features: one affine layer over `(speeds, headings)`.
pub fn init_pattern_features(
    speeds: &[Vec<f64>],
    headings: &[Vec<f64>],
    store: &ParamStore,
    width: usize,
) -> Result<PatternState> {
    let input = pattern_input(speeds, headings)?;
    let spec = pattern_init_spec(speeds[0].len() + 1, width);
    let mut g = Graph::new();
    let x = g.constant(input);
    let h = spec.forward(&mut g, store, x, &mut Mode::Eval)?;
    Ok(PatternState {
        h: g.value(h).clone(),
        layer: 0,
    })
}

/// Complete directed graph over the agents of one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentGraph {
    pub num_nodes: usize,
    /// Edge `k` is `(src[k], dst[k])`; messages flow from `dst` into `src`.
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    /// Per-edge interaction weights, filled in before message passing.
    pub attributes: Option<Tensor>,
}

impl AgentGraph {
    pub fn num_edges(&self) -> usize {
        self.src.len()
    }
}

pub fn build_graph(scene: &TrajectoryScene) -> AgentGraph {
    let m = scene.num_agents();
    let mut src = Vec::with_capacity(m * m.saturating_sub(1));
    let mut dst = Vec::with_capacity(src.capacity());
    for i in 0..m {
        for j in 0..m {
            if i != j {
                src.push(i);
                dst.push(j);
            }
        }
    }
    AgentGraph {
        num_nodes: m,
        src,
        dst,
        attributes: None,
    }
}
