//! Canonical trajectory files and observation/prediction windowing.
//!
//! A trajectory file is UTF-8, one record per line:
//!
//! ```text
//! # optional comment lines
//! frame<TAB>agent<TAB>x<TAB>y
//! ```
//!
//! `frame` and `agent` are integers, `x`/`y` decimal meters. There is no
//! header row. Raw dataset exports are converted to this layout offline.

mod synth;

pub use synth::{synth_generate, Motif, SynthConfig};

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{Point, TrajectoryScene};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub frame: i64,
    pub agent: i64,
    pub x: f64,
    pub y: f64,
}

/// Parses a trajectory file; records come back sorted by `(agent, frame)`.
pub fn parse_trajectories(text: &str) -> Result<Vec<TrajectoryRecord>> {
    let mut seen: HashMap<(i64, i64), usize> = HashMap::new();
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line_no = n + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 4 tab-separated fields, found {}", fields.len()),
            });
        }
        let int = |s: &str, what: &str| -> Result<i64> {
            s.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid {what} `{s}`"),
            })
        };
        let float = |s: &str, what: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("invalid {what} `{s}`"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data { line: line_no, message: format!("non-finite {what}") });
            }
            Ok(v)
        };
        let rec = TrajectoryRecord {
            frame: int(fields[0], "frame")?,
            agent: int(fields[1], "agent")?,
            x: float(fields[2], "x")?,
            y: float(fields[3], "y")?,
        };
        if let Some(first) = seen.insert((rec.frame, rec.agent), line_no) {
            return Err(Error::Data {
                line: line_no,
                message: format!(
                    "duplicate (frame {}, agent {}), first seen on line {first}",
                    rec.frame, rec.agent
                ),
            });
        }
        out.push(rec);
    }
    out.sort_by_key(|r| (r.agent, r.frame));
    Ok(out)
}

pub fn load_trajectories(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    parse_trajectories(&fs::read_to_string(path)?)
}

/// Serializes records in the given order with round-trip float formatting.
pub fn format_trajectories(records: &[TrajectoryRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = writeln!(s, "{}\t{}\t{}\t{}", r.frame, r.agent, r.x, r.y);
    }
    s
}

pub fn save_trajectories(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    fs::write(path, format_trajectories(records))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub t_obs: usize,
    pub t_pred: usize,
    /// Window start advance, in subsampled steps.
    pub stride: usize,
    /// Frame-id distance between consecutive samples of a window.
    pub frame_step: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { t_obs: 8, t_pred: 12, stride: 1, frame_step: 1 }
    }
}

impl WindowSpec {
    pub fn len(&self) -> usize {
        self.t_obs + self.t_pred
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_obs == 0 || self.t_pred == 0 || self.stride == 0 || self.frame_step == 0 {
            return Err(Error::Config(format!("window spec fields must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// One training/evaluation sample: observed scene plus each agent's future.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub scene: TrajectoryScene,
    /// `future[agent][t]`, aligned with `scene.agent_ids`.
    pub future: Vec<Vec<Point>>,
    pub future_frames: Vec<i64>,
}

/// Sliding windows over frame ids. A window starting at frame `s` covers
/// `s, s + frame_step, ...` (`t_obs + t_pred` samples); starts advance by
/// `stride * frame_step` from the smallest frame id. Agents missing any of
/// the window's frames are left out; windows without complete agents are
/// dropped.
pub fn window_split(records: &[TrajectoryRecord], spec: &WindowSpec, scene_id: &str) -> Result<Vec<Window>> {
    spec.validate()?;
    let mut tracks: BTreeMap<i64, BTreeMap<i64, Point>> = BTreeMap::new();
    for r in records {
        tracks.entry(r.agent).or_default().insert(r.frame, [r.x, r.y]);
    }
    let (Some(first), Some(last)) = (
        records.iter().map(|r| r.frame).min(),
        records.iter().map(|r| r.frame).max(),
    ) else {
        return Ok(Vec::new());
    };
    let step = spec.frame_step as i64;
    let span = (spec.len() as i64 - 1) * step;
    let advance = spec.stride as i64 * step;

    let mut windows = Vec::new();
    let mut start = first;
    while start + span <= last {
        let frames: Vec<i64> = (0..spec.len() as i64).map(|k| start + k * step).collect();
        let mut ids = Vec::new();
        let mut obs = Vec::new();
        let mut fut = Vec::new();
        for (&agent, track) in &tracks {
            let pts: Option<Vec<Point>> = frames.iter().map(|f| track.get(f).copied()).collect();
            if let Some(pts) = pts {
                ids.push(agent);
                obs.push(pts[..spec.t_obs].to_vec());
                fut.push(pts[spec.t_obs..].to_vec());
            }
        }
        if !ids.is_empty() {
            let scene = TrajectoryScene::new(
                format!("{scene_id}@{start}"),
                ids,
                frames[..spec.t_obs].to_vec(),
                obs,
            )?;
            windows.push(Window {
                scene,
                future: fut,
                future_frames: frames[spec.t_obs..].to_vec(),
            });
        }
        start += advance;
    }
    Ok(windows)
}

/// Window indices of a seeded train/val/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed` and cuts it by `fractions` (train, val, test;
/// they must be non-negative and sum to 1). Sizes are rounded down for val
/// and test, train takes the remainder. Each part comes back sorted.
pub fn split_windows(n: usize, fractions: [f64; 3], seed: u64) -> Result<SplitIndices> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions must be in [0, 1] and sum to 1, got {fractions:?}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_val = (n as f64 * fractions[1]).floor() as usize;
    let n_test = (n as f64 * fractions[2]).floor() as usize;
    let n_train = n - n_val - n_test;
    let part = |range: std::ops::Range<usize>| {
        let mut v = order[range].to_vec();
        v.sort_unstable();
        v
    };
    Ok(SplitIndices {
        train: part(0..n_train),
        val: part(n_train..n_train + n_val),
        test: part(n_train + n_val..n),
    })
}
