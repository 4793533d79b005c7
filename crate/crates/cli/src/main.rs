mod settings;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use geotraj::checks::{jittered, loss_grad_check, symmetry_suite};
use geotraj::data::{
    load_trajectories, save_trajectories, split_windows, synth_generate, window_split, Motif, SynthConfig, Window,
    WindowSpec,
};
use geotraj::evaluation::{evaluate, BestOf, Report};
use geotraj::model::{load_checkpoint, save_checkpoint, Checkpoint, Forecaster, HeadMode, ModelConfig};
use geotraj::numerics::{Mode, GRAD_FLOOR};
use geotraj::scene::{load_scene_embedding, SceneEmbedding};
use geotraj::training::fit;
use settings::Settings;

const CHECKPOINT_FILE: &str = "model.ckpt";
const LOSS_FILE: &str = "loss.csv";

#[derive(Parser)]
#[command(name = "geotraj", version, about = "Equivariant multi-agent trajectory forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory corpus and a matching embedding stub.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus loss log.
    Train(TrainArgs),
    /// Score a checkpoint on a trajectory file.
    Eval(EvalArgs),
    /// Write per-agent predicted futures as TSV.
    Predict(PredictArgs),
    /// Compare reverse-mode gradients with central differences.
    Gradcheck(GradcheckArgs),
    /// Run the rigid-motion equivariance and invariance suite.
    Symcheck(SymcheckArgs),
    /// Render an evaluation CSV as a text table.
    Report(ReportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "mixed")]
    motif: Motif,
    #[arg(long, default_value_t = 3)]
    agents: usize,
    #[arg(long, default_value_t = 40)]
    frames: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Standard deviation of Gaussian position noise, meters.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 768)]
    embedding_dim: usize,
    /// Write an all-zero embedding instead of a random one.
    #[arg(long)]
    zero_embedding: bool,
    /// Output trajectory file; the embedding goes next to it with `.emb`.
    #[arg(long)]
    out: PathBuf,
}

/// Settings shared by every command that builds or trains a model.
#[derive(Args, Default)]
struct ModelFlags {
    /// `key = value` settings file; flags take precedence over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Disable scene conditioning (learned constant token).
    #[arg(long)]
    no_scene: bool,
    /// Disable the DCT on the time axis.
    #[arg(long)]
    no_dct: bool,
    /// Disable dropout.
    #[arg(long)]
    no_dropout: bool,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Scene embedding file; defaults to the `.emb` file next to `--data`.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    mode: Option<HeadMode>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    /// Train/val/test fractions, e.g. `0.7,0.1,0.2`.
    #[arg(long)]
    split: Option<String>,
    /// Random rotation of every training scene.
    #[arg(long)]
    augment: bool,
    /// Output directory for the checkpoint and loss log.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum SplitPart {
    All,
    Train,
    Val,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file or the directory written by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value = "deterministic")]
    mode: HeadMode,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitPart,
    /// Take the FDE of the best-ADE head instead of the best FDE.
    #[arg(long)]
    joint_best: bool,
    /// Also write the per-scene CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value = "deterministic")]
    mode: HeadMode,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    /// Entries sampled per parameter tensor.
    #[arg(long, default_value_t = 40)]
    samples: usize,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Half-width of the uniform noise added to the initial parameters.
    #[arg(long, default_value_t = 0.02)]
    jitter: f64,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SymcheckArgs {
    /// Checkpoint to check; a freshly initialized model when omitted.
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Scenes to transform; a synthetic corpus when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    transforms: usize,
    #[arg(long, default_value_t = 1e-6)]
    equivariance_tol: f64,
    #[arg(long, default_value_t = 1e-9)]
    invariance_tol: f64,
    #[command(flatten)]
    model: ModelFlags,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Dataset label; defaults to the CSV file stem.
    #[arg(long)]
    dataset: Option<String>,
}

enum Failure {
    /// Bad arguments, settings or a failed check: exit code 1.
    Invalid(String),
    /// Anything that went wrong while doing the work: exit code 2.
    Runtime(String),
}

/// Names the file in I/O failures, which otherwise carry only the OS message.
fn at(path: &Path) -> impl Fn(geotraj::Error) -> Failure + '_ {
    move |e| match e {
        geotraj::Error::Io(io) => Failure::Runtime(format!("{}: {io}", path.display())),
        other => other.into(),
    }
}

impl From<geotraj::Error> for Failure {
    fn from(e: geotraj::Error) -> Self {
        match e {
            geotraj::Error::Config(m) => Failure::Invalid(m),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("GEOTRAJ_LOG", "info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Symcheck(a) => symcheck(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn embedding_path(data: &Path) -> PathBuf {
    data.with_extension("emb")
}

fn synth(a: SynthArgs) -> CmdResult {
    let cfg = SynthConfig {
        n_agents: a.agents,
        n_frames: a.frames,
        motif: a.motif,
        noise: a.noise,
        seed: a.seed,
        embedding_dim: a.embedding_dim,
        random_embedding: !a.zero_embedding,
        ..SynthConfig::default()
    };
    info!("synth: {cfg:?}");
    let (records, emb) = synth_generate(&cfg)?;
    save_trajectories(&a.out, &records).map_err(at(&a.out))?;
    let emb_path = embedding_path(&a.out);
    emb.write(&emb_path).map_err(at(&emb_path))?;
    println!("wrote {} records to {} and embedding to {}", records.len(), a.out.display(), emb_path.display());
    Ok(())
}

fn apply_model_flags(s: &mut Settings, f: &ModelFlags) -> Result<(), Failure> {
    if let Some(path) = &f.config {
        s.apply_text(&read(path)?)?;
    }
    if f.no_scene {
        s.set("scene", "false")?;
    }
    if f.no_dct {
        s.set("dct", "false")?;
    }
    if f.no_dropout {
        s.set("dropout", "0")?;
    }
    if let Some(c) = f.channels {
        s.set("channels", &c.to_string())?;
    }
    if let Some(h) = f.heads {
        s.set("heads", &h.to_string())?;
    }
    if let Some(seed) = f.seed {
        s.set("seed", &seed.to_string())?;
    }
    Ok(())
}

/// Embedding for a run with scene conditioning; `None` when it is off.
fn resolve_embedding(enabled: bool, flag: Option<&Path>, data: Option<&Path>) -> Result<Option<SceneEmbedding>, Failure> {
    if !enabled {
        return Ok(None);
    }
    let path = match (flag, data) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(d)) if embedding_path(d).exists() => embedding_path(d),
        _ => {
            return Err(Failure::Invalid(
                "scene conditioning is enabled but no embedding was found; pass --scene or --no-scene".into(),
            ))
        }
    };
    info!("scene embedding: {}", path.display());
    Ok(Some(load_scene_embedding(&path).map_err(at(&path))?))
}

fn load_windows(data: &Path, spec: &WindowSpec) -> Result<Vec<Window>, Failure> {
    let records = load_trajectories(data).map_err(at(data))?;
    let id = data.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
    let windows = window_split(&records, spec, &id)?;
    if windows.is_empty() {
        return Err(Failure::Invalid(format!(
            "{} yields no complete {}+{} windows",
            data.display(),
            spec.t_obs,
            spec.t_pred
        )));
    }
    Ok(windows)
}

fn pick(windows: &[Window], idx: &[usize]) -> Vec<Window> {
    idx.iter().map(|&i| windows[i].clone()).collect()
}

fn train(a: TrainArgs) -> CmdResult {
    let mut s = Settings::default();
    apply_model_flags(&mut s, &a.model)?;
    let pairs = [
        ("mode", a.mode.map(|m| m.as_str().to_string())),
        ("epochs", a.epochs.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("lr_decay", a.lr_decay.map(|v| v.to_string())),
        ("weight_decay", a.weight_decay.map(|v| v.to_string())),
        ("split", a.split.clone()),
        ("augment", a.augment.then(|| "true".to_string())),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            s.set(k, &v)?;
        }
    }
    let emb = resolve_embedding(s.model.scene_enabled, a.scene.as_deref(), Some(&a.data))?;
    if let Some(e) = &emb {
        s.model.embedding_dim = e.dim();
    }
    s.finish()?;
    info!("resolved settings (seed {}):\n{}", s.train.seed, s.describe());

    let windows = load_windows(&a.data, &s.window())?;
    let parts = split_windows(windows.len(), s.split, s.train.seed)?;
    if parts.train.is_empty() {
        return Err(Failure::Invalid(format!("split {:?} leaves no training windows", s.split)));
    }
    let (train_w, val_w) = (pick(&windows, &parts.train), pick(&windows, &parts.val));
    info!("windows: {} train, {} val, {} test", train_w.len(), val_w.len(), parts.test.len());

    let model = Forecaster::new(s.model.clone())?;
    let mut params = model.init(&mut ChaCha8Rng::seed_from_u64(s.train.seed))?;
    let log = fit(&model, &train_w, &val_w, emb.as_ref(), &s.train, &mut params, |_, _, _| Ok(()))?;

    fs::create_dir_all(&a.out).map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
    write(&a.out.join(LOSS_FILE), &log.to_csv())?;
    let mut meta = s.run_text();
    let _ = writeln!(meta, "data = {}", a.data.file_name().map_or(String::new(), |n| n.to_string_lossy().into_owned()));
    let _ = writeln!(meta, "windows = {},{},{}", parts.train.len(), parts.val.len(), parts.test.len());
    let ckpt = Checkpoint { config: s.model.clone(), seed: s.train.seed, meta, params: params.values_only() };
    let file = a.out.join(CHECKPOINT_FILE);
    save_checkpoint(&file, &ckpt).map_err(at(&file))?;
    let last = log.train().last().copied().unwrap_or(f64::NAN);
    println!("trained {} epochs, final train loss {last:.6}; wrote {}", s.train.epochs, a.out.display());
    Ok(())
}

fn open_checkpoint(path: &Path) -> Result<(Checkpoint, Settings), Failure> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let ckpt = load_checkpoint(&file).map_err(at(&file))?;
    let mut s = Settings::default();
    for (k, v) in geotraj::model::parse_key_values(&ckpt.meta)? {
        if !matches!(k.as_str(), "data" | "windows") {
            s.set(&k, &v)?;
        }
    }
    s.model = ckpt.config.clone();
    Ok((ckpt, s))
}

fn eval_windows(windows: Vec<Window>, s: &Settings, part: SplitPart) -> Result<Vec<Window>, Failure> {
    if part == SplitPart::All {
        return Ok(windows);
    }
    let parts = split_windows(windows.len(), s.split, s.train.seed)?;
    let idx = match part {
        SplitPart::Train => parts.train,
        SplitPart::Val => parts.val,
        SplitPart::Test => parts.test,
        SplitPart::All => unreachable!(),
    };
    if idx.is_empty() {
        return Err(Failure::Invalid("the requested split holds no windows".into()));
    }
    Ok(pick(&windows, &idx))
}

fn eval(a: EvalArgs) -> CmdResult {
    let (ckpt, s) = open_checkpoint(&a.ckpt)?;
    let model = Forecaster::new(ckpt.config.clone())?;
    let emb = resolve_embedding(ckpt.config.scene_enabled, a.scene.as_deref(), Some(&a.data))?;
    let windows = eval_windows(load_windows(&a.data, &s.window())?, &s, a.split)?;
    let best = if a.joint_best { BestOf::JointByAde } else { BestOf::PerMetric };
    let r = evaluate(&model, &ckpt.params, &windows, emb.as_ref(), a.mode, best)?;
    if let Some(out) = &a.out {
        write(out, &r.to_csv())?;
    }
    let label = a.data.file_stem().map_or("data".into(), |n| n.to_string_lossy().into_owned());
    print!("{}", r.to_table(&label));
    Ok(())
}

fn predict(a: PredictArgs) -> CmdResult {
    let (ckpt, s) = open_checkpoint(&a.ckpt)?;
    let model = Forecaster::new(ckpt.config.clone())?;
    let emb = resolve_embedding(ckpt.config.scene_enabled, a.scene.as_deref(), Some(&a.data))?;
    let windows = load_windows(&a.data, &s.window())?;
    let mut out = String::from("# window\thead\tframe\tagent\tx\ty\n");
    for w in &windows {
        let p = model.forward(&ckpt.params, &w.scene, emb.as_ref(), &mut Mode::Eval, a.mode)?;
        for (k, head) in p.heads.iter().enumerate() {
            for (i, track) in head.iter().enumerate() {
                for (frame, q) in w.future_frames.iter().zip(track) {
                    let _ = writeln!(
                        out,
                        "{}\t{k}\t{frame}\t{}\t{}\t{}",
                        w.scene.scene_id, w.scene.agent_ids[i], q[0], q[1]
                    );
                }
            }
        }
    }
    write(&a.out, &out)?;
    println!("wrote predictions for {} windows to {}", windows.len(), a.out.display());
    Ok(())
}

/// Two-agent synthetic window used when no data is supplied.
fn probe_window(seed: u64, model: &ModelConfig, agents: usize) -> Result<(Vec<Window>, SceneEmbedding), Failure> {
    let cfg = SynthConfig {
        n_agents: agents,
        n_frames: model.t_obs + model.t_pred + 4,
        noise: 0.01,
        seed,
        embedding_dim: model.embedding_dim,
        ..SynthConfig::default()
    };
    let (records, emb) = synth_generate(&cfg)?;
    let spec = WindowSpec { t_obs: model.t_obs, t_pred: model.t_pred, ..WindowSpec::default() };
    Ok((window_split(&records, &spec, "probe")?, emb))
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let mut s = Settings::default();
    if let Some(path) = &a.config {
        s.apply_text(&read(path)?)?;
    }
    s.finish()?;
    if a.samples == 0 {
        return Err(Failure::Invalid("--samples must be >= 1".into()));
    }
    info!("gradcheck seed {} step {} samples {}:\n{}", a.seed, a.step, a.samples, s.model.to_text());
    let model = Forecaster::new(s.model.clone())?;
    let (windows, emb) = probe_window(a.seed, &s.model, 2)?;
    let params = model.init(&mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let params = jittered(&params, a.jitter, a.seed.wrapping_add(1))?;
    let emb = s.model.scene_enabled.then_some(&emb);
    let r = loss_grad_check(&model, &params, &windows[0], emb, a.step, Some(a.samples))?;
    let (name, idx) = r.worst.clone().unwrap_or_default();
    println!(
        "max relative error {:.3e} at {name}[{idx}] (analytic {:.6e}, numeric {:.6e}; {} entries over {} tensors, floor {GRAD_FLOOR:e})",
        r.max_rel_error, r.worst_values.0, r.worst_values.1, r.entries_checked, r.groups_checked
    );
    if r.max_rel_error > a.tolerance {
        return Err(Failure::Invalid(format!("gradient check failed: {:.3e} > {:e}", r.max_rel_error, a.tolerance)));
    }
    Ok(())
}

fn symcheck(a: SymcheckArgs) -> CmdResult {
    let (model, params, settings) = match &a.ckpt {
        Some(path) => {
            let (ckpt, s) = open_checkpoint(path)?;
            (Forecaster::new(ckpt.config.clone())?, ckpt.params, s)
        }
        None => {
            let mut s = Settings::default();
            apply_model_flags(&mut s, &a.model)?;
            s.finish()?;
            let model = Forecaster::new(s.model.clone())?;
            let params = model.init(&mut ChaCha8Rng::seed_from_u64(s.train.seed))?;
            (model, params, s)
        }
    };
    info!("symcheck (seed {}):\n{}", settings.train.seed, model.config().to_text());
    let (windows, emb) = match &a.data {
        Some(d) => {
            let w = load_windows(d, &settings.window())?;
            let emb = resolve_embedding(model.config().scene_enabled, a.scene.as_deref(), Some(d))?;
            (w, emb)
        }
        None => {
            let (w, e) = probe_window(settings.train.seed, model.config(), 3)?;
            let emb = match &a.scene {
                Some(p) => Some(load_scene_embedding(p).map_err(at(p))?),
                None => model.config().scene_enabled.then_some(e),
            };
            (w, emb)
        }
    };
    let scenes: Vec<_> = windows.into_iter().map(|w| w.scene).collect();
    let r = symmetry_suite(&model, &params, &scenes, emb.as_ref(), a.transforms, settings.train.seed)?;
    let layers: Vec<String> = r.pattern.iter().map(|v| format!("{v:.1e}")).collect();
    println!(
        "equivariance max {:.3e} over {} transforms, {} scenes, {} heads (tol {:e})",
        r.equivariance, r.transforms, r.scenes, r.heads, a.equivariance_tol
    );
    println!(
        "invariance max {:.3e} (h: [{}], messages {:.1e}, weights {:.1e}, speeds {:.1e}, headings {:.1e}; tol {:e})",
        r.invariance(),
        layers.join(", "),
        r.messages,
        r.weights,
        r.speeds,
        r.headings,
        a.invariance_tol
    );
    if !r.passes(a.equivariance_tol, a.invariance_tol) {
        return Err(Failure::Invalid("symmetry check failed".into()));
    }
    Ok(())
}

fn report(a: ReportArgs) -> CmdResult {
    let r = Report::parse_csv(&read(&a.csv)?)?;
    let label = a
        .dataset
        .unwrap_or_else(|| a.csv.file_stem().map_or("data".into(), |n| n.to_string_lossy().into_owned()));
    print!("{}", r.to_table(&label));
    Ok(())
}
