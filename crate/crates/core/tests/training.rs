use geotraj::data::{synth_generate, window_split, Motif, SynthConfig, Window, WindowSpec};
use geotraj::evaluation::{evaluate, BestOf};
use geotraj::geometry::TrajectoryScene;
use geotraj::model::{Forecaster, HeadMode, ModelConfig};
use geotraj::numerics::AdamW;
use geotraj::training::{fit, TrainConfig};
use geotraj::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(heads: usize) -> ModelConfig {
    ModelConfig {
        pattern_width: 8,
        message_width: 8,
        hidden_width: 8,
        token_dim: 4,
        embedding_dim: 6,
        heads,
        ..ModelConfig::default()
    }
}

fn corpus(frames: usize) -> (Vec<Window>, geotraj::scene::SceneEmbedding) {
    let cfg = SynthConfig { n_agents: 3, n_frames: frames, motif: Motif::Mixed, seed: 4, embedding_dim: 6, ..SynthConfig::default() };
    let (recs, emb) = synth_generate(&cfg).unwrap();
    (window_split(&recs, &WindowSpec::default(), "t").unwrap(), emb)
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let (w, emb) = corpus(24);
    let model = Forecaster::new(tiny(1)).unwrap();
    let mut params = model.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let before = params.values_only();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 2,
        optimizer: AdamW { lr: 0.0, weight_decay: 0.0, ..AdamW::default() },
        ..TrainConfig::default()
    };
    fit(&model, &w, &[], Some(&emb), &cfg, &mut params, |_, _, _| Ok(())).unwrap();
    for (name, p) in before.iter() {
        assert_eq!(params.get(name).unwrap(), &p.value, "{name}");
    }
    assert_eq!(params.step(), 3 * 3);
}

#[test]
fn stationary_agent_is_predicted_in_place() {
    let pos = [3.25, -1.5];
    let scene = TrajectoryScene::from_positions(vec![vec![pos; 8]]).unwrap();
    let window = Window { scene, future: vec![vec![pos; 12]], future_frames: (8..20).collect() };
    let model = Forecaster::new(ModelConfig { scene_enabled: false, dropout: 0.0, ..tiny(1) }).unwrap();
    let mut params = model.init(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let cfg = TrainConfig { epochs: 20, batch_size: 1, ..TrainConfig::default() };
    let data = [window];
    fit(&model, &data, &[], None, &cfg, &mut params, |_, _, _| Ok(())).unwrap();
    let r = evaluate(&model, &params, &data, None, HeadMode::Deterministic, BestOf::PerMetric).unwrap();
    assert!(r.ade < 0.05, "ade {}", r.ade);
}

#[test]
fn same_seed_same_log_and_parameters() {
    let (w, emb) = corpus(24);
    let model = Forecaster::new(tiny(3)).unwrap();
    let cfg = TrainConfig { epochs: 4, batch_size: 2, mode: HeadMode::Multi, seed: 9, augment_rotation: true, ..TrainConfig::default() };
    let run = || {
        let mut params = model.init(&mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let log = fit(&model, &w[..3], &w[3..], Some(&emb), &cfg, &mut params, |_, _, _| Ok(())).unwrap();
        (log.to_csv(), params)
    };
    let (la, pa) = run();
    let (lb, pb) = run();
    assert_eq!(la, lb);
    for ((na, a), (nb, b)) in pa.iter().zip(pb.iter()) {
        assert_eq!(na, nb);
        assert_eq!(a.value, b.value);
    }
    assert!(la.lines().any(|l| l.ends_with(",val,") || l.contains(",val,")));
}

#[test]
fn training_reduces_loss() {
    let (w, emb) = corpus(24);
    let model = Forecaster::new(ModelConfig { dropout: 0.0, ..tiny(1) }).unwrap();
    let mut params = model.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let cfg = TrainConfig { epochs: 40, batch_size: 1, optimizer: AdamW { lr: 3e-3, ..AdamW::default() }, ..TrainConfig::default() };
    let log = fit(&model, &w, &[], Some(&emb), &cfg, &mut params, |_, _, _| Ok(())).unwrap();
    let train = log.train();
    assert_eq!(train.len(), 40);
    let head: f64 = train[..5].iter().sum::<f64>() / 5.0;
    let tail: f64 = train[35..].iter().sum::<f64>() / 5.0;
    assert!(tail < 0.5 * head, "{head} -> {tail}");
}

#[test]
fn decay_schedule_and_validation() {
    let (w, emb) = corpus(21);
    let model = Forecaster::new(tiny(1)).unwrap();
    let mut params = model.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for bad in [0.0, -0.5, 1.5, f64::NAN] {
        let cfg = TrainConfig { lr_decay: bad, ..TrainConfig::default() };
        assert!(matches!(
            fit(&model, &w, &[], Some(&emb), &cfg, &mut params, |_, _, _| Ok(())),
            Err(Error::Config(_))
        ));
    }
    assert!(matches!(
        fit(&model, &[], &[], Some(&emb), &TrainConfig::default(), &mut params, |_, _, _| Ok(())),
        Err(Error::Input(_))
    ));
}

#[test]
fn callback_errors_abort_training() {
    let (w, emb) = corpus(21);
    let model = Forecaster::new(tiny(1)).unwrap();
    let mut params = model.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
    let mut seen = 0;
    let r = fit(&model, &w, &[], Some(&emb), &cfg, &mut params, |e, _, _| {
        seen = e;
        if e == 2 {
            Err(Error::Input("stop".into()))
        } else {
            Ok(())
        }
    });
    assert!(r.is_err());
    assert_eq!(seen, 2);
}
