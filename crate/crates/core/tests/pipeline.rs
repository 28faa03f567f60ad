use embedmix::eval::{reset_eval, SequenceRunner};
use embedmix::experiment::{AugmentorKind, ExperimentConfig};
use embedmix::sim::{gen_sequence, load_sequence, run_tracker, save_sequence, Augmentor, EmbeddingExtractor, SceneConfig, Tracker, TrackerConfig};

fn scene() -> SceneConfig {
    SceneConfig {
        height: 40,
        width: 40,
        object_w: 8,
        object_h: 8,
        difficulty: Default::default(),
    }
}

#[test]
fn sequence_fixture_round_trip_tracks_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seq.dmix");
    let seq = gen_sequence(5, 25, &scene()).unwrap();
    save_sequence(&seq, &path).unwrap();
    let back = load_sequence(&path).unwrap();
    assert_eq!(back, seq);
    let ex = EmbeddingExtractor::new(1, 4, 4).unwrap();
    let cfg = TrackerConfig {
        capacity: 6,
        ..TrackerConfig::classifier()
    };
    let a = run_tracker::<f32>(&seq, &ex, &cfg, Augmentor::None).unwrap();
    let b = run_tracker::<f32>(&back, &ex, &cfg, Augmentor::None).unwrap();
    let boxes = |v: &[embedmix::sim::FrameOutput]| v.iter().map(|o| o.bbox).collect::<Vec<_>>();
    assert_eq!(boxes(&a), boxes(&b));
}

#[test]
fn restarts_follow_failures_by_five() {
    // a hard scene with a tiny search window so failures actually happen
    let mut s = scene();
    s.difficulty.motion = 4.0;
    s.difficulty.distractors = 4;
    let ex = EmbeddingExtractor::new(1, 4, 4).unwrap();
    let cfg = TrackerConfig {
        capacity: 6,
        search_radius: Some(1),
        ..TrackerConfig::classifier()
    };
    let mut failures = 0;
    for seed in 0..6 {
        let seq = gen_sequence(seed, 80, &s).unwrap();
        let mut runner = SequenceRunner {
            tracker: Tracker::<f32>::new(cfg, &ex, Augmentor::None).unwrap(),
            seq: &seq,
        };
        let r = reset_eval(&mut runner, &seq.truth, 0.0).unwrap();
        for (f, restart) in r.failures.iter().zip(&r.restarts) {
            assert_eq!(restart, &(f + 5));
        }
        assert!(r.restarts.len() == r.failures.len() || r.restarts.len() + 1 == r.failures.len());
        failures += r.failures.len();
    }
    assert!(failures > 0, "fixture produced no failures");
}

#[test]
fn config_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.cfg");
    std::fs::write(&path, "# test\naugmentors = opt, none\nframes = 12\n").unwrap();
    let cfg = ExperimentConfig::load(&path, &[("frames".into(), "14".into())]).unwrap();
    assert_eq!(cfg.frames, 14);
    assert_eq!(cfg.augmentors, vec![AugmentorKind::Opt, AugmentorKind::None]);
}
