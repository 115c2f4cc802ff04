//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always show.
//!
//! Criteria 4, 5 and 7 share one trained model.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use asrf::losses::{
    cross_entropy, gs_tmse, tmse, total_loss, Classification, LossConfig, LossTargets, Smoothing,
};
use asrf::metrics::{
    boundary_prf, segmental_edit_score, segmental_f1, segmental_f1_counts, BoundaryScores,
    F1Averaging, MatchCounts,
};
use asrf::refine::{refine_by_boundaries, RefineConfig};
use asrf::synth::{generate_synthetic_dataset, SynthConfig};
use asrf::train::{
    evaluate_predictions, predict_dataset, sweep_theta_p, train, EvalMode, ModelShape, TrainConfig,
};
use asrf::{
    boundaries_from_labels, positive_boundary_weight, AsrfModel, BoundaryMask, ClassId,
    ClassWeights, Dataset, DatasetSplit, Matrix, ModelConfig, Outputs, Segment, VideoSample,
};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took < limit, format!("took {took:.1?}, limit {limit:?}"))
}

// 1. Gradient correctness ---------------------------------------------------

fn random_segments(
    rng: &mut ChaCha8Rng,
    t: usize,
    c: usize,
    min_len: usize,
    max_len: usize,
) -> Vec<ClassId> {
    let mut labels = Vec::with_capacity(t);
    let mut prev = usize::MAX;
    while labels.len() < t {
        let mut class = rng.random_range(0..c);
        while class == prev {
            class = rng.random_range(0..c);
        }
        let len = rng.random_range(min_len..=max_len).min(t - labels.len());
        labels.extend(std::iter::repeat_n(class, len));
        prev = class;
    }
    labels
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let (t, d, c) = (12, 3, 3);
    let cfg = ModelConfig {
        channels: 8,
        layers: 2,
        asb_stages: 1,
        brb_stages: 1,
        dropout: 0.0,
        ..ModelConfig::new(d, c)
    };
    let mut model = AsrfModel::<f64>::new(cfg, 11).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Matrix::from_vec(
        t,
        d,
        (0..t * d).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let labels = random_segments(&mut rng, t, c, 2, 5);
    let mask = boundaries_from_labels(&labels).unwrap();
    let w_p = positive_boundary_weight([&mask]).map_err(|e| e.to_string())?;
    let targets = LossTargets {
        labels: &labels,
        boundaries: &mask,
        features: &x,
        class_weights: None,
        positive_weight: w_p,
    };
    let loss = LossConfig {
        classification: Classification::Ce,
        smoothing: Smoothing::GsTmse,
        ..LossConfig::default()
    };
    let g = common::gradcheck(&mut model, &x, &targets, &loss, 1e-5, 1e-6);
    ensure(
        g.max_rel_error < 1e-4,
        format!(
            "max relative error {:.3e} at {} (analytic {:.6e}, numeric {:.6e})",
            g.max_rel_error, g.worst_param, g.analytic, g.numeric
        ),
    )?;
    within(Duration::from_secs(60), start)?;
    Ok(format!(
        "{} parameters, max relative error {:.2e}",
        g.checked, g.max_rel_error
    ))
}

// 2. Metric oracles ---------------------------------------------------------

fn criterion_2() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // Segment-class sequences: no two neighbours share a class.
    let seq = |rng: &mut ChaCha8Rng| -> Vec<ClassId> {
        let n = rng.random_range(1..=8);
        let mut s: Vec<ClassId> = Vec::with_capacity(n);
        while s.len() < n {
            let c = rng.random_range(0..4);
            if s.last() != Some(&c) {
                s.push(c);
            }
        }
        s
    };
    for pair in 0..1000 {
        let (a, b) = (seq(&mut rng), seq(&mut rng));
        let expand = |s: &[ClassId], rng: &mut ChaCha8Rng| -> Vec<ClassId> {
            s.iter()
                .flat_map(|&c| std::iter::repeat_n(c, rng.random_range(1..4)))
                .collect()
        };
        let (la, lb) = (expand(&a, &mut rng), expand(&b, &mut rng));
        let d = common::naive_levenshtein(&a, &b);
        let expected = (1.0 - d as f64 / a.len().max(b.len()) as f64) * 100.0;
        let got = segmental_edit_score(&la, &lb).map_err(|e| e.to_string())?;
        ensure(
            got == expected,
            format!("pair {pair}: {a:?} vs {b:?}: {got} != {expected}"),
        )?;
    }

    let a = 0;
    let (b, c) = (1, 2);
    let edit = |p: &[ClassId], g: &[ClassId]| segmental_edit_score(p, g).unwrap();
    ensure(edit(&[a, b, c], &[a, b, c]) == 100.0, "edit identical")?;
    ensure(
        edit(&[a, b], &[a, b, c]) == (1.0 - 1.0 / 3.0) * 100.0,
        "edit [A,B] vs [A,B,C]",
    )?;
    ensure(edit(&[b], &[a]) == 0.0, "edit [B] vs [A]")?;

    let gt = [Segment::new(a, 0, 99)];
    for k in [10.0, 25.0, 50.0] {
        ensure(
            segmental_f1(&gt, &gt, k) == 100.0,
            format!("F1@{k} identical"),
        )?;
    }
    ensure(
        segmental_f1(&[Segment::new(a, 10, 89)], &gt, 50.0) == 100.0,
        "F1 IoU 0.8",
    )?;
    let split = [Segment::new(a, 0, 49), Segment::new(a, 50, 99)];
    let counts = segmental_f1_counts(&split, &gt, 25.0);
    ensure(
        counts
            == MatchCounts {
                tp: 1,
                fp: 1,
                fn_: 0,
            },
        format!("greedy counts {counts:?}"),
    )?;
    ensure(
        counts.precision() == 0.5 && counts.recall() == 1.0,
        "greedy precision/recall",
    )?;
    ensure(
        segmental_f1(&split, &gt, 25.0) == 100.0 * (2.0 * 0.5 / 1.5),
        "greedy F1",
    )?;

    let m = |at: &[usize]| BoundaryMask::from_positions(40, at).unwrap();
    let perfect = BoundaryScores {
        precision: 1.0,
        recall: 1.0,
        f1: 1.0,
    };
    ensure(
        boundary_prf(&m(&[3]), &m(&[5]), 5).unwrap() == perfect,
        "boundary {3} vs {5}",
    )?;
    ensure(
        boundary_prf(&m(&[10]), &m(&[20]), 5).unwrap() == BoundaryScores::default(),
        "boundary {10} vs {20}",
    )?;
    ensure(
        boundary_prf(&m(&[4, 30]), &m(&[4, 30]), 5).unwrap() == perfect,
        "boundary identical",
    )?;
    within(Duration::from_secs(10), start)?;
    Ok("1000 edit pairs match the recursive oracle; all hand examples exact".into())
}

// 3. Refinement recovery ----------------------------------------------------

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let c = 5;
    let mut corrupted_frames = 0;
    for case in 0..200 {
        let t = rng.random_range(20..200);
        let labels = random_segments(&mut rng, t, c, 1, 30);
        let gt = boundaries_from_labels(&labels).unwrap();
        // Random probabilities whose argmax is the corrupted label.
        let mut noisy = labels.clone();
        for s in asrf::segments_from_labels(&labels).unwrap() {
            let flips = rng.random_range(0..s.len().div_ceil(2));
            let mut frames: Vec<usize> = (s.start..=s.end).collect();
            for i in 0..flips {
                let j = rng.random_range(i..frames.len());
                frames.swap(i, j);
                let f = frames[i];
                noisy[f] = (labels[f] + rng.random_range(1..c)) % c;
            }
            corrupted_frames += flips;
        }
        let mut probs = Matrix::<f64>::zeros(t, c);
        for (f, &k) in noisy.iter().enumerate() {
            let row: Vec<f64> = (0..c).map(|_| rng.random_range(0.0..0.5)).collect();
            probs.row_mut(f).copy_from_slice(&row);
            probs.set(f, k, rng.random_range(0.5..1.0));
        }
        let refined = refine_by_boundaries(&probs, &gt).map_err(|e| e.to_string())?;
        ensure(
            refined == labels,
            format!("case {case}: refinement did not restore the labels"),
        )?;
    }
    Ok(format!(
        "200 sequences restored exactly ({corrupted_frames} frames corrupted)"
    ))
}

// 4. End-to-end synthetic run -----------------------------------------------

struct Trained {
    dataset: Dataset,
    split: DatasetSplit,
    model: AsrfModel<f32>,
    epochs: usize,
    best_epoch: usize,
    elapsed: Duration,
}

impl Trained {
    fn held_out(&self) -> Vec<&VideoSample> {
        self.dataset.select(&self.split.test).unwrap()
    }
}

fn train_synthetic() -> Result<Trained, String> {
    let start = Instant::now();
    let synth = SynthConfig {
        num_videos: 40,
        num_classes: 5,
        feature_dim: 8,
        min_frames: 200,
        max_frames: 400,
        noise_level: 0.3,
        seed: 4,
        ..SynthConfig::default()
    };
    let dataset = generate_synthetic_dataset(&synth)
        .map_err(|e| e.to_string())?
        .dataset;
    let split = DatasetSplit::holdout(&dataset.ids(), 8).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        epochs: 30,
        seed: 4,
        model: ModelShape {
            channels: 32,
            layers: 6,
            asb_stages: 2,
            brb_stages: 2,
            dropout: 0.5,
        },
        ..TrainConfig::default()
    };
    let tr = dataset.select(&split.train).unwrap();
    let te = dataset.select(&split.test).unwrap();
    let outcome = train(
        &tr,
        &te,
        dataset.num_classes(),
        &cfg,
        &RefineConfig::default(),
        &mut |r| {
            let h = r.held_out.as_ref().unwrap();
            eprintln!(
                "  epoch {:>2}  loss {:.4}  held-out acc {:.2} edit {:.2}",
                r.epoch, r.loss.total, h.acc, h.edit
            );
        },
    )
    .map_err(|e| e.to_string())?;
    Ok(Trained {
        dataset,
        split,
        model: outcome.model,
        epochs: cfg.epochs,
        best_epoch: outcome.best_epoch,
        elapsed: start.elapsed(),
    })
}

fn criterion_4(run: &Trained) -> Check {
    let held = run.held_out();
    let outputs = predict_dataset(&run.model, &held).map_err(|e| e.to_string())?;
    let c = run.dataset.num_classes();
    let cfg = RefineConfig::default();
    let eval = |m| evaluate_predictions(&held, &outputs, c, &cfg, m, F1Averaging::Global).unwrap();
    let (raw, refined) = (eval(EvalMode::Raw), eval(EvalMode::Refined));
    ensure(
        raw.acc >= 90.0,
        format!("raw frame accuracy {:.2} < 90", raw.acc),
    )?;
    ensure(
        refined.edit >= raw.edit,
        format!("refined edit {:.2} < raw {:.2}", refined.edit, raw.edit),
    )?;
    ensure(
        refined.f1_at(50) >= raw.f1_at(50),
        format!(
            "refined F1@50 {:.2} < raw {:.2}",
            refined.f1_at(50),
            raw.f1_at(50)
        ),
    )?;
    ensure(
        run.elapsed < Duration::from_secs(600),
        format!("training took {:.1?}, limit 600 s", run.elapsed),
    )?;
    Ok(format!(
        "best epoch {}/{} in {:.1?}; acc {:.2}; edit raw {:.2} -> refined {:.2}; F1@50 raw {:.2} -> refined {:.2}",
        run.best_epoch,
        run.epochs,
        run.elapsed,
        raw.acc,
        raw.edit,
        refined.edit,
        raw.f1_at(50),
        refined.f1_at(50)
    ))
}

// 5. Postprocessor ordering -------------------------------------------------

/// Overwrites 1-2 frame stretches with a confident wrong class, roughly one
/// per `every` frames. Boundary outputs are left alone.
fn inject_spikes(outputs: &mut [Outputs<f32>], every: usize, rng: &mut ChaCha8Rng) -> usize {
    let mut injected = 0;
    for out in outputs {
        for head in &mut out.asb {
            let (t, c) = (head.rows(), head.cols());
            let argmax = head.argmax_rows();
            let mut f = rng.random_range(every / 2..every);
            while f + 2 < t {
                let len = rng.random_range(1..=2);
                let wrong = (argmax[f] + rng.random_range(1..c)) % c;
                for g in f..f + len {
                    let row = head.row_mut(g);
                    row.iter_mut().for_each(|v| *v = 0.02 / (c - 1) as f32);
                    row[wrong] = 0.98;
                }
                injected += 1;
                f += rng.random_range(every / 2..every + every / 2);
            }
        }
    }
    injected
}

fn criterion_5(run: &Trained) -> Check {
    let held = run.held_out();
    let mut outputs = predict_dataset(&run.model, &held).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spikes = inject_spikes(&mut outputs, 40, &mut rng);
    let c = run.dataset.num_classes();
    let cfg = RefineConfig {
        theta_t: 5,
        ..RefineConfig::default()
    };
    let edit = |m| {
        evaluate_predictions(&held, &outputs, c, &cfg, m, F1Averaging::Global)
            .unwrap()
            .edit
    };
    let (raw, relabel, refined, similarity) = (
        edit(EvalMode::Raw),
        edit(EvalMode::Relabel),
        edit(EvalMode::Refined),
        edit(EvalMode::Similarity),
    );
    ensure(
        relabel > raw,
        format!("relabel edit {relabel:.2} not above raw {raw:.2}"),
    )?;
    ensure(
        refined > raw,
        format!("refined edit {refined:.2} not above raw {raw:.2}"),
    )?;
    Ok(format!(
        "{spikes} spikes; edit raw {raw:.2}, relabel {relabel:.2}, refined {refined:.2}, similarity {similarity:.2} ({})",
        if similarity < raw { "degrades" } else { "does not degrade" }
    ))
}

// 6. Loss identities --------------------------------------------------------

fn criterion_6() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (t, c, d) = (30, 4, 5);
    let probs = |rng: &mut ChaCha8Rng| {
        let mut m = Matrix::<f64>::zeros(t, c);
        for r in 0..t {
            let row: Vec<f64> = (0..c).map(|_| rng.random_range(0.05..1.0)).collect();
            let s: f64 = row.iter().sum();
            m.row_mut(r)
                .iter_mut()
                .zip(&row)
                .for_each(|(v, x)| *v = x / s);
        }
        m
    };
    let labels = random_segments(&mut rng, t, c, 3, 8);
    let mask = boundaries_from_labels(&labels).unwrap();

    // GS-TMSE == TMSE on constant features.
    let row: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let constant = Matrix::from_rows(&vec![row; t]).unwrap();
    for trial in 0..20 {
        let p = probs(&mut rng);
        let (a, b) = (gs_tmse(&p, &constant, 4.0, 1.0).unwrap(), tmse(&p, 4.0));
        ensure(a == b, format!("trial {trial}: gs_tmse {a} != tmse {b}"))?;
    }

    // lambda = 0: total equals the segmentation-branch loss.
    let features = Matrix::from_vec(
        t,
        d,
        (0..t * d).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap();
    let out = Outputs {
        asb: vec![probs(&mut rng), probs(&mut rng)],
        brb: vec![(0..t).map(|_| rng.random_range(0.01..0.99)).collect(); 2],
    };
    let weights = ClassWeights::new(vec![0.5, 1.0, 2.0, 4.0]).unwrap();
    let targets = LossTargets {
        labels: &labels,
        boundaries: &mask,
        features: &features,
        class_weights: Some(&weights),
        positive_weight: 3.0,
    };
    let cfg = LossConfig {
        lambda_brb: 0.0,
        ..LossConfig::default()
    };
    let (b, _) = total_loss(&out, &targets, &cfg).map_err(|e| e.to_string())?;
    ensure(
        b.total == b.asb,
        format!("lambda = 0: total {} != asb {}", b.total, b.asb),
    )?;

    // Uniform class weights scale CE.
    for w in [0.25, 1.0, 3.5] {
        let p = probs(&mut rng);
        let uniform = ClassWeights::uniform(c, w);
        let weighted = cross_entropy(&p, &labels, Some(&uniform)).unwrap();
        let plain = cross_entropy(&p, &labels, None).unwrap();
        ensure(
            (weighted - w * plain).abs() <= 1e-12,
            format!("w = {w}: {weighted} vs {}", w * plain),
        )?;
    }
    Ok("gs_tmse == tmse on constant features; lambda = 0 total == L_asb; uniform-weight CE == w * CE".into())
}

// 7. Threshold sweep --------------------------------------------------------

fn criterion_7(run: &Trained) -> Check {
    let held = run.held_out();
    let thetas = [0.1, 0.3, 0.5, 0.7, 0.9];
    let sweep = || {
        sweep_theta_p(
            &run.model,
            &held,
            &thetas,
            &RefineConfig::default(),
            F1Averaging::Global,
        )
    };
    let first = sweep().map_err(|e| e.to_string())?;
    let second = sweep().map_err(|e| e.to_string())?;
    let counts: Vec<usize> = first.iter().map(|r| r.boundaries).collect();
    ensure(
        counts.windows(2).all(|w| w[1] <= w[0]),
        format!("boundary counts not non-increasing: {counts:?}"),
    )?;
    ensure(first == second, "two sweeps differ")?;
    Ok(format!(
        "boundary counts {counts:?} over theta_p {thetas:?}; repeat run identical"
    ))
}

fn main() -> ExitCode {
    // `cargo test -- --list` and filters are not meaningful here.
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut failures = 0;
    let mut report = |n: usize, name: &str, result: Check| match &result {
        Ok(detail) => println!("criterion {n} PASS  {name}: {detail}"),
        Err(why) => {
            failures += 1;
            println!("criterion {n} FAIL  {name}: {why}");
        }
    };

    report(1, "gradient correctness", criterion_1());
    report(2, "metric oracles", criterion_2());
    report(3, "refinement recovery", criterion_3());
    let run = train_synthetic();
    let shared = |n: usize, f: fn(&Trained) -> Check| match &run {
        Ok(r) => f(r),
        Err(e) => Err(format!("training for criterion {n} failed: {e}")),
    };
    report(4, "end-to-end synthetic run", shared(4, criterion_4));
    report(5, "postprocessor ordering", shared(5, criterion_5));
    report(6, "loss identities", criterion_6());
    report(7, "theta_p sweep", shared(7, criterion_7));

    if failures == 0 {
        println!("acceptance: all 7 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failures} criteria failed");
        ExitCode::FAILURE
    }
}
