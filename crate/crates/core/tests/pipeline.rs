use asrf::io::{load_dataset, save_dataset};
use asrf::metrics::F1Averaging;
use asrf::par;
use asrf::refine::RefineConfig;
use asrf::synth::{generate_synthetic_dataset, SynthConfig};
use asrf::tcn::checkpoint;
use asrf::train::{evaluate_dataset, train, EvalMode, ModelShape, TrainConfig};
use asrf::{DatasetSplit, VideoSample};

fn config() -> TrainConfig {
    TrainConfig {
        epochs: 2,
        seed: 9,
        model: ModelShape {
            channels: 8,
            layers: 3,
            asb_stages: 1,
            brb_stages: 1,
            dropout: 0.5,
        },
        ..TrainConfig::default()
    }
}

fn dataset() -> asrf::Dataset {
    let cfg = SynthConfig {
        num_videos: 6,
        min_frames: 60,
        max_frames: 90,
        ..SynthConfig::default()
    };
    generate_synthetic_dataset(&cfg).unwrap().dataset
}

#[test]
fn disk_round_trip_preserves_training_and_evaluation() {
    let ds = dataset();
    let split = DatasetSplit::holdout(&ds.ids(), 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(dir.path(), &ds, &split).unwrap();
    let (back, back_split) = load_dataset(dir.path()).unwrap();
    assert_eq!(back_split, split);
    assert_eq!(back.videos, ds.videos);

    let tr = back.select(&split.train).unwrap();
    let te = back.select(&split.test).unwrap();
    let out = train(
        &tr,
        &te,
        back.num_classes(),
        &config(),
        &RefineConfig::default(),
        &mut |_| {},
    )
    .unwrap();

    let path = dir.path().join("m.ckpt");
    checkpoint::save(&path, &out.model).unwrap();
    let loaded = checkpoint::load(&path).unwrap();
    let refine = RefineConfig::default();
    for mode in EvalMode::ALL {
        let a = evaluate_dataset(&out.model, &te, &refine, mode, F1Averaging::Global).unwrap();
        let b = evaluate_dataset(&loaded, &te, &refine, mode, F1Averaging::Global).unwrap();
        assert_eq!(a, b, "{mode}");
    }
}

#[test]
fn parallel_and_sequential_training_are_bitwise_identical() {
    let ds = dataset();
    let videos: Vec<&VideoSample> = ds.videos.iter().collect();
    let run = || {
        let out = train(
            &videos[..4],
            &videos[4..],
            ds.num_classes(),
            &config(),
            &RefineConfig::default(),
            &mut |_| {},
        )
        .unwrap();
        (out.history, out.model.params().flat_values())
    };
    par::set_enabled(true);
    let a = run();
    par::set_enabled(false);
    let b = run();
    par::set_enabled(true);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}
