use geotraj::data::{load_trajectories, save_trajectories, synth_generate, SynthConfig};
use geotraj::model::{load_checkpoint, save_checkpoint, Checkpoint, Forecaster, ModelConfig};
use geotraj::scene::{load_scene_embedding, SceneEmbedding};
use geotraj::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

#[test]
fn embedding_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("scene.emb");
    let emb = SceneEmbedding::random(768, 3);
    emb.write(&path).unwrap();
    let back = load_scene_embedding(&path).unwrap();
    assert_eq!(back.dim(), 768);
    assert_eq!(back.values, emb.values);
    assert_eq!(back.comment, emb.comment);
    assert_eq!(back.source, path.display().to_string());
    assert_eq!(std::fs::read_to_string(&path).unwrap(), emb.to_text());
}

#[test]
fn embedding_from_an_external_writer() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("ext.emb");
    std::fs::write(&path, "3\n# model=stub pooling=mean\n0.5 -1.25 2e-3\n").unwrap();
    let emb = load_scene_embedding(&path).unwrap();
    assert_eq!(emb.dim(), 3);
    assert_eq!(emb.values, vec![0.5, -1.25, 0.002]);
    assert_eq!(emb.comment.as_deref(), Some("model=stub pooling=mean"));
}

#[test]
fn trajectory_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("c.tsv");
    let (recs, _) = synth_generate(&SynthConfig { n_frames: 25, noise: 0.3, ..SynthConfig::default() }).unwrap();
    save_trajectories(&path, &recs).unwrap();
    assert_eq!(load_trajectories(&path).unwrap(), recs);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("model.ckpt");
    let cfg = ModelConfig { pattern_width: 4, message_width: 4, hidden_width: 4, embedding_dim: 5, ..ModelConfig::default() };
    let params = Forecaster::new(cfg.clone()).unwrap().init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let ckpt = Checkpoint { config: cfg, seed: 1, meta: "epochs = 2\n".into(), params };
    save_checkpoint(&path, &ckpt).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
}

#[test]
fn missing_files_are_io_errors() {
    let dir = TempDir::new().unwrap();
    let gone = dir.path().join("gone");
    assert!(matches!(load_scene_embedding(&gone), Err(Error::Io(_))));
    assert!(matches!(load_trajectories(&gone), Err(Error::Io(_))));
    assert!(matches!(load_checkpoint(&gone), Err(Error::Io(_))));
}
