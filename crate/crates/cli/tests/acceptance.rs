//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use geotraj::checks::{jittered, loss_grad_check, symmetry_suite, SymmetryReport};
use geotraj::data::{synth_generate, window_split, Motif, SynthConfig, TrajectoryRecord, Window, WindowSpec};
use geotraj::evaluation::{ade, evaluate, fde, score_window, BestOf};
use geotraj::geometry::{Point, TrajectoryScene};
use geotraj::model::{Forecaster, HeadMode, ModelConfig, PredictionSet, MULTI_HEADS};
use geotraj::numerics::{dct, dct_matrix, idct, AdamW, Mode, ParamStore, Tensor};
use geotraj::scene::SceneEmbedding;
use geotraj::training::{fit, TrainConfig};

type Outcome = Result<(bool, String), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let t = start.elapsed();
    (t <= limit, format!("{:.1}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

fn synthetic(agents: usize, frames: usize, seed: u64, emb_dim: usize) -> Result<(Vec<Window>, SceneEmbedding), String> {
    let cfg = SynthConfig {
        n_agents: agents,
        n_frames: frames,
        motif: Motif::Mixed,
        noise: 0.01,
        seed,
        embedding_dim: emb_dim,
        ..SynthConfig::default()
    };
    let (recs, emb) = synth_generate(&cfg).map_err(err)?;
    Ok((window_split(&recs, &WindowSpec::default(), "synthetic").map_err(err)?, emb))
}

/// Default twenty-head model, with parameters moved off the zero-started
/// output layers so every head produces a non-trivial forecast.
fn multi_head_model(seed: u64) -> Result<(Forecaster, ParamStore), String> {
    let model = Forecaster::new(ModelConfig { heads: MULTI_HEADS, ..ModelConfig::default() }).map_err(err)?;
    let params = model.init(&mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
    let params = jittered(&params, 0.02, seed + 1).map_err(err)?;
    Ok((model, params))
}

fn symmetry_reports() -> Result<Vec<SymmetryReport>, String> {
    let (windows, emb) = synthetic(3, 30, 11, ModelConfig::default().embedding_dim)?;
    let scenes: Vec<TrajectoryScene> = windows.into_iter().map(|w| w.scene).collect();
    let mut out = Vec::new();
    for seed in [0, 1] {
        let (model, trained_like) = multi_head_model(seed)?;
        let fresh = model.init(&mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
        for params in [fresh, trained_like] {
            out.push(symmetry_suite(&model, &params, &scenes, Some(&emb), 100, seed).map_err(err)?);
        }
    }
    Ok(out)
}

fn equivariance() -> Outcome {
    let start = Instant::now();
    let reports = symmetry_reports()?;
    let worst = reports.iter().map(|r| r.equivariance).fold(0.0, f64::max);
    let heads = reports.iter().all(|r| r.heads == MULTI_HEADS && r.transforms == 100);
    let (fast, time) = within(Duration::from_secs(30), start);
    Ok((
        worst <= 1e-6 && heads && fast,
        format!("max deviation {worst:.2e} over {} models x 100 transforms x {MULTI_HEADS} heads; {time}", reports.len()),
    ))
}

fn invariance() -> Outcome {
    let start = Instant::now();
    let reports = symmetry_reports()?;
    let worst = reports.iter().map(SymmetryReport::invariance).fold(0.0, f64::max);
    let layers = reports.iter().all(|r| r.pattern.len() == 5);
    let (fast, time) = within(Duration::from_secs(30), start);
    Ok((
        worst <= 1e-9 && layers && fast,
        format!("max change {worst:.2e} across h^0..h^4, messages, weights, speeds, headings; {time}"),
    ))
}

fn gradient() -> Outcome {
    let start = Instant::now();
    let cfg = ModelConfig::default();
    let synth = SynthConfig {
        n_agents: 2,
        n_frames: cfg.t_obs + cfg.t_pred + 4,
        noise: 0.01,
        seed: 3,
        embedding_dim: cfg.embedding_dim,
        ..SynthConfig::default()
    };
    let (recs, emb) = synth_generate(&synth).map_err(err)?;
    let windows = window_split(&recs, &WindowSpec::default(), "probe").map_err(err)?;
    let model = Forecaster::new(cfg).map_err(err)?;
    let params = model.init(&mut ChaCha8Rng::seed_from_u64(3)).map_err(err)?;
    let params = jittered(&params, 0.02, 4).map_err(err)?;
    let r = loss_grad_check(&model, &params, &windows[0], Some(&emb), 1e-5, Some(40)).map_err(err)?;
    let all_groups = r.groups_checked == params.len();
    let (fast, time) = within(Duration::from_secs(120), start);
    Ok((
        r.max_rel_error <= 1e-4 && all_groups && fast,
        format!(
            "max relative error {:.2e} over {} entries in {}/{} tensors; {time}",
            r.max_rel_error,
            r.entries_checked,
            r.groups_checked,
            params.len()
        ),
    ))
}

fn dct_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut round, mut ortho) = (0.0f64, 0.0f64);
    for n in 1..=32 {
        for cols in [1, 3] {
            let data: Vec<f64> = (0..n * cols).map(|_| rng.random_range(-10.0..10.0)).collect();
            let x = Tensor::matrix(n, cols, data).map_err(err)?;
            round = round.max(idct(&dct(&x).map_err(err)?).map_err(err)?.max_abs_diff(&x));
        }
        let d = dct_matrix(n);
        ortho = ortho.max(d.matmul(&d.transpose()).map_err(err)?.max_abs_diff(&Tensor::identity(n)));
    }
    Ok((round <= 1e-10 && ortho <= 1e-10, format!("round trip {round:.2e}, orthonormality {ortho:.2e}, n = 1..32")))
}

fn overfit() -> Outcome {
    let start = Instant::now();
    let (windows, emb) = synthetic(3, 29, 1, ModelConfig::default().embedding_dim)?;
    let model = Forecaster::new(ModelConfig { channels: 24, dropout: 0.0, ..ModelConfig::default() }).map_err(err)?;
    let mut params = model.init(&mut ChaCha8Rng::seed_from_u64(0)).map_err(err)?;
    let cfg = TrainConfig {
        epochs: 500,
        batch_size: 1,
        optimizer: AdamW { lr: 3e-3, ..AdamW::default() },
        lr_decay: 0.991,
        ..TrainConfig::default()
    };
    fit(&model, &windows, &[], Some(&emb), &cfg, &mut params, |_, _, _| Ok(())).map_err(err)?;
    let r = evaluate(&model, &params, &windows, Some(&emb), HeadMode::Deterministic, BestOf::PerMetric).map_err(err)?;
    let (fast, time) = within(Duration::from_secs(300), start);
    Ok((
        windows.len() == 10 && r.ade < 0.05 && r.fde < 0.10 && fast,
        format!("{} windows, training ADE {:.4} m, FDE {:.4} m after 500 epochs; {time}", windows.len(), r.ade, r.fde),
    ))
}

fn dominance() -> Outcome {
    let (model, params) = multi_head_model(7)?;
    let (windows, emb) = synthetic(3, 40, 5, model.config().embedding_dim)?;
    let mut ok = true;
    for w in &windows {
        let multi = model.forward(&params, &w.scene, Some(&emb), &mut Mode::Eval, HeadMode::Multi).map_err(err)?;
        let det = model
            .forward(&params, &w.scene, Some(&emb), &mut Mode::Eval, HeadMode::Deterministic)
            .map_err(err)?;
        let (best, _) = score_window(&multi, &w.future, HeadMode::Multi, BestOf::PerMetric).map_err(err)?;
        let (det_ade, _) = score_window(&det, &w.future, HeadMode::Deterministic, BestOf::PerMetric).map_err(err)?;
        ok &= best <= det_ade;
        for head in &multi.heads {
            let single = PredictionSet { heads: vec![head.clone()] };
            let (a, _) = score_window(&single, &w.future, HeadMode::Deterministic, BestOf::PerMetric).map_err(err)?;
            ok &= best <= a;
        }
    }
    let m = evaluate(&model, &params, &windows, Some(&emb), HeadMode::Multi, BestOf::PerMetric).map_err(err)?;
    let d = evaluate(&model, &params, &windows, Some(&emb), HeadMode::Deterministic, BestOf::PerMetric).map_err(err)?;
    ok &= m.ade <= d.ade && m.heads == MULTI_HEADS;
    Ok((ok, format!("{} windows; min-over-{MULTI_HEADS} ADE {:.4} vs deterministic {:.4}", windows.len(), m.ade, d.ade)))
}

fn brute_ade(p: &[Point], g: &[Point]) -> f64 {
    let mut total = 0.0;
    for i in 0..p.len() {
        let dx = p[i][0] - g[i][0];
        let dy = p[i][1] - g[i][1];
        total += (dx * dx + dy * dy).sqrt();
    }
    total / p.len() as f64
}

fn brute_fde(p: &[Point], g: &[Point]) -> f64 {
    let n = p.len() - 1;
    ((p[n][0] - g[n][0]).powi(2) + (p[n][1] - g[n][1]).powi(2)).sqrt()
}

/// `(start, agent ids, positions)` per window, found by scanning the record
/// list for every frame of every candidate start.
fn brute_windows(recs: &[TrajectoryRecord], spec: &WindowSpec) -> Vec<(i64, Vec<i64>, Vec<Vec<Point>>)> {
    let lo = recs.iter().map(|r| r.frame).min().unwrap();
    let hi = recs.iter().map(|r| r.frame).max().unwrap();
    let mut agents: Vec<i64> = recs.iter().map(|r| r.agent).collect();
    agents.sort_unstable();
    agents.dedup();
    let step = spec.frame_step as i64;
    let mut out = Vec::new();
    for start in lo..=hi {
        if (start - lo) % (spec.stride as i64 * step) != 0 {
            continue;
        }
        let frames: Vec<i64> = (0..spec.len() as i64).map(|k| start + k * step).collect();
        if *frames.last().unwrap() > hi {
            continue;
        }
        let (mut ids, mut tracks) = (Vec::new(), Vec::new());
        for &a in &agents {
            let pts: Vec<Point> = frames
                .iter()
                .filter_map(|&f| recs.iter().rev().find(|r| r.agent == a && r.frame == f).map(|r| [r.x, r.y]))
                .collect();
            if pts.len() == frames.len() {
                ids.push(a);
                tracks.push(pts);
            }
        }
        if !ids.is_empty() {
            out.push((start, ids, tracks));
        }
    }
    out
}

fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(1..=30);
        let mut pt = || [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
        let p: Vec<Point> = (0..n).map(|_| pt()).collect();
        let g: Vec<Point> = (0..n).map(|_| pt()).collect();
        worst = worst.max((ade(&p, &g).map_err(err)? - brute_ade(&p, &g)).abs());
        worst = worst.max((fde(&p, &g).map_err(err)? - brute_fde(&p, &g)).abs());
    }
    let mut files = 0;
    let mut windows_ok = true;
    for _ in 0..60 {
        let agents = rng.random_range(1..=6);
        let frames = rng.random_range(5..=160);
        let keep = rng.random_range(0.6..1.0);
        let mut recs = Vec::new();
        for a in 0..agents {
            for f in 0..frames {
                if recs.len() < 1000 && rng.random_bool(keep) {
                    recs.push(TrajectoryRecord { frame: f * 2 + 3, agent: a * 5, x: rng.random(), y: rng.random() });
                }
            }
        }
        if recs.is_empty() {
            continue;
        }
        let spec = WindowSpec {
            t_obs: rng.random_range(1..=4),
            t_pred: rng.random_range(1..=4),
            stride: rng.random_range(1..=3),
            frame_step: rng.random_range(1..=3),
        };
        let got: Vec<_> = window_split(&recs, &spec, "f")
            .map_err(err)?
            .into_iter()
            .map(|w| {
                let tracks = w.scene.positions.iter().zip(&w.future).map(|(o, f)| [o.clone(), f.clone()].concat()).collect();
                (w.scene.frames[0], w.scene.agent_ids, tracks)
            })
            .collect();
        windows_ok &= got == brute_windows(&recs, &spec);
        files += 1;
    }
    Ok((
        worst <= 1e-12 && windows_ok,
        format!("ade/fde max gap {worst:.2e} on 1000 pairs; window_split matches brute force on {files} files"),
    ))
}

struct Cli<'a> {
    dir: &'a Path,
}

impl Cli<'_> {
    fn run(&self, args: &[&str]) -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_geotraj"))
            .args(args)
            .current_dir(self.dir)
            .env("GEOTRAJ_LOG", "warn")
            .output()
            .map_err(err)?;
        if !out.status.success() {
            return Err(format!("`geotraj {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
        }
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    }

    fn synth(&self) -> Result<(), String> {
        self.run(&["synth", "--agents", "3", "--frames", "30", "--seed", "3", "--noise", "0.01", "--embedding-dim", "32", "--out", "c.tsv"])
            .map(drop)
    }
}

fn ablation() -> Outcome {
    let tmp = TempDir::new().map_err(err)?;
    let cli = Cli { dir: tmp.path() };
    cli.synth()?;
    let mut lines = Vec::new();
    for flag in ["--no-scene", "--no-dct"] {
        let out = flag.trim_start_matches("--");
        cli.run(&["train", "--data", "c.tsv", "--epochs", "3", flag, "--mode", "multi", "--out", out])?;
        let report = cli.run(&["symcheck", "--ckpt", out, "--data", "c.tsv", "--transforms", "100"])?;
        lines.push(format!("{flag}: {}", report.lines().next().unwrap_or_default()));
    }
    Ok((true, lines.join("; ")))
}

fn determinism() -> Outcome {
    let tmp = TempDir::new().map_err(err)?;
    let mut files: Vec<Vec<Vec<u8>>> = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.path().join(run);
        fs::create_dir(&dir).map_err(err)?;
        let cli = Cli { dir: &dir };
        cli.synth()?;
        cli.run(&["train", "--data", "c.tsv", "--mode", "multi", "--epochs", "3", "--augment", "--out", "ckpt"])?;
        cli.run(&["eval", "--ckpt", "ckpt", "--data", "c.tsv", "--mode", "multi", "--out", "eval.csv"])?;
        let table = cli.run(&["report", "--csv", "eval.csv"])?;
        let mut got = Vec::new();
        for f in ["c.tsv", "c.emb", "ckpt/loss.csv", "ckpt/model.ckpt", "eval.csv"] {
            got.push(fs::read(dir.join(f)).map_err(err)?);
        }
        got.push(table.into_bytes());
        files.push(got);
    }
    Ok((
        files[0] == files[1],
        "corpus, embedding, loss log, checkpoint, eval CSV and report identical across two runs".into(),
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("equivariance", equivariance),
        ("invariance", invariance),
        ("gradient check", gradient),
        ("dct", dct_checks),
        ("overfit oracle", overfit),
        ("multi-head dominance", dominance),
        ("metric oracles", metric_oracles),
        ("ablation mechanics", ablation),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let (pass, detail) = check().unwrap_or_else(|e| (false, format!("error: {e}")));
        failed += usize::from(!pass);
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
