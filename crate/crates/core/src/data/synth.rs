//! Seeded indoor-style motion: straight walks, closed loops and zigzags.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::TrajectoryRecord;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::scene::SceneEmbedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motif {
    Straight,
    Loop,
    Zigzag,
    /// Agent `i` takes straight / loop / zigzag by `i % 3`.
    Mixed,
}

impl FromStr for Motif {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "straight" => Ok(Motif::Straight),
            "loop" => Ok(Motif::Loop),
            "zigzag" => Ok(Motif::Zigzag),
            "mixed" => Ok(Motif::Mixed),
            _ => Err(Error::Config(format!("unknown motif `{s}` (straight|loop|zigzag|mixed)"))),
        }
    }
}

impl fmt::Display for Motif {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Motif::Straight => "straight",
            Motif::Loop => "loop",
            Motif::Zigzag => "zigzag",
            Motif::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_agents: usize,
    pub n_frames: usize,
    pub motif: Motif,
    /// Std-dev of Gaussian positional noise, meters.
    pub noise: f64,
    pub seed: u64,
    pub embedding_dim: usize,
    /// Random embedding stub when true, all zeros otherwise.
    pub random_embedding: bool,
    /// Frames per zigzag leg.
    pub zigzag_leg: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_agents: 3,
            n_frames: 40,
            motif: Motif::Mixed,
            noise: 0.0,
            seed: 0,
            embedding_dim: 768,
            random_embedding: true,
            zigzag_leg: 4,
        }
    }
}

fn rot(v: Point, a: f64) -> Point {
    let (s, c) = a.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Deterministic per seed. Loops close exactly over the full file (first
/// and last frame coincide before noise).
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Vec<TrajectoryRecord>, SceneEmbedding)> {
    if cfg.n_agents == 0 || cfg.n_frames == 0 || cfg.zigzag_leg == 0 {
        return Err(Error::Config("synthetic agents, frames and zigzag leg must be >= 1".into()));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Config(format!("noise must be finite and >= 0, got {}", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut records = Vec::with_capacity(cfg.n_agents * cfg.n_frames);

    for a in 0..cfg.n_agents {
        let motif = match cfg.motif {
            Motif::Mixed => [Motif::Straight, Motif::Loop, Motif::Zigzag][a % 3],
            m => m,
        };
        let start: Point = [rng.random_range(0.0..10.0), rng.random_range(0.0..10.0)];
        let heading = rng.random_range(0.0..2.0 * PI);
        let speed = rng.random_range(0.3..0.6);
        let clockwise = rng.random_bool(0.5);
        let dir = rot([speed, 0.0], heading);

        let mut p = start;
        for f in 0..cfg.n_frames {
            let pos = match motif {
                Motif::Straight => [start[0] + dir[0] * f as f64, start[1] + dir[1] * f as f64],
                Motif::Loop => {
                    let steps = cfg.n_frames.saturating_sub(1).max(1) as f64;
                    let turn = if clockwise { -2.0 * PI } else { 2.0 * PI };
                    let radius = speed * steps / (2.0 * PI);
                    // Center sits a radius away, perpendicular to the heading.
                    let side = rot(dir, if clockwise { -PI / 2.0 } else { PI / 2.0 });
                    let c = [start[0] + side[0] / speed * radius, start[1] + side[1] / speed * radius];
                    let r0 = [start[0] - c[0], start[1] - c[1]];
                    let r = rot(r0, turn * f as f64 / steps);
                    [c[0] + r[0], c[1] + r[1]]
                }
                Motif::Zigzag => {
                    if f > 0 {
                        let leg = (f - 1) / cfg.zigzag_leg;
                        let a = if leg.is_multiple_of(2) { FRAC_PI_4 } else { -FRAC_PI_4 };
                        let v = rot(dir, a);
                        p = [p[0] + v[0], p[1] + v[1]];
                    }
                    p
                }
                Motif::Mixed => unreachable!("resolved above"),
            };
            let (nx, ny) = if cfg.noise > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            records.push(TrajectoryRecord {
                frame: f as i64,
                agent: a as i64,
                x: pos[0] + nx,
                y: pos[1] + ny,
            });
        }
    }

    let emb = if cfg.random_embedding {
        SceneEmbedding::random(cfg.embedding_dim, cfg.seed.wrapping_add(0x5eed))
    } else {
        SceneEmbedding::zero(cfg.embedding_dim)
    };
    Ok((records, emb))
}
