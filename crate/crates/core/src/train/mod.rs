//! Optimizer, training loop, evaluation harness and ablation sweeps.

mod ablate;
mod adam;
mod eval;

pub use ablate::{sweep_brb_stages, sweep_theta_p, StageRow, ThetaRow};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use eval::{
    evaluate_dataset, evaluate_predictions, labels_for_mode, predict_dataset, EvalMode,
};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{median_frequency_weights, positive_boundary_weight, BoundaryMask, VideoSample};
use crate::error::{Error, Result};
use crate::losses::{total_loss, Classification, LossBreakdown, LossConfig, LossTargets};
use crate::metrics::{F1Averaging, MetricsReport};
use crate::refine::RefineConfig;
use crate::tcn::{AsrfModel, ModelConfig};

/// Network size; input and class counts come from the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    pub channels: usize,
    pub layers: usize,
    pub asb_stages: usize,
    pub brb_stages: usize,
    pub dropout: f64,
}

impl Default for ModelShape {
    fn default() -> Self {
        let c = ModelConfig::new(1, 2);
        Self {
            channels: c.channels,
            layers: c.layers,
            asb_stages: c.asb_stages,
            brb_stages: c.brb_stages,
            dropout: c.dropout,
        }
    }
}

impl ModelShape {
    pub fn config(&self, input_dim: usize, num_classes: usize) -> ModelConfig {
        ModelConfig {
            channels: self.channels,
            layers: self.layers,
            asb_stages: self.asb_stages,
            brb_stages: self.brb_stages,
            dropout: self.dropout,
            ..ModelConfig::new(input_dim, num_classes)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Videos per optimizer step; gradients are averaged over the batch.
    pub batch_size: usize,
    /// Seeds initialization, shuffling and dropout.
    pub seed: u64,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    pub model: ModelShape,
    /// Held-out metric used to pick the returned checkpoint.
    pub select_mode: EvalMode,
    pub f1_averaging: F1Averaging,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 1,
            seed: 0,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            model: ModelShape::default(),
            select_mode: EvalMode::Refined,
            f1_averaging: F1Averaging::Global,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        self.adam.validate()?;
        self.loss.validate()
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-video loss over the epoch.
    pub loss: LossBreakdown,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub held_out: Option<MetricsReport>,
}

pub struct TrainOutcome {
    /// Parameters from the epoch with the best held-out edit score (ties go
    /// to higher accuracy), or from the last epoch when there is no held-out
    /// set.
    pub model: AsrfModel<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Trains a fresh model on `train_videos`.
///
/// `on_epoch` sees every record as soon as the epoch finishes, so callers can
/// append it to a log.
pub fn train(
    train_videos: &[&VideoSample],
    held_out: &[&VideoSample],
    num_classes: usize,
    cfg: &TrainConfig,
    refine: &RefineConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = train_videos.first().ok_or(Error::EmptySequence)?;
    let dim = first.feature_dim();
    if let Some(v) = train_videos
        .iter()
        .chain(held_out)
        .find(|v| v.feature_dim() != dim)
    {
        return Err(Error::Shape(format!(
            "video '{}' has feature dimension {}, expected {dim}",
            v.id,
            v.feature_dim()
        )));
    }
    let mut model = AsrfModel::<f32>::new(cfg.model.config(dim, num_classes), cfg.seed)?;

    let weights = match cfg.loss.classification {
        Classification::CeClassWeighted => Some(median_frequency_weights(
            train_videos.iter().map(|v| v.labels.as_slice()),
            num_classes,
        )?),
        _ => None,
    };
    let masks: Vec<BoundaryMask> = train_videos.iter().map(|v| v.boundaries()).collect();
    let w_p = positive_boundary_weight(&masks)?;
    log::info!(
        "training on {} videos ({} held out), {} parameters, w_p = {w_p:.3}",
        train_videos.len(),
        held_out.len(),
        model.params().num_scalars()
    );

    // Separate stream from the one used for initialization.
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut state = AdamState::new(model.params());
    let mut order: Vec<usize> = (0..train_videos.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<((f64, f64), usize, AsrfModel<f32>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for batch in order.chunks(cfg.batch_size) {
            model.zero_grad();
            for &i in batch {
                let v = train_videos[i];
                let out = model.forward(&v.features, Some(&mut rng))?;
                let targets = LossTargets {
                    labels: &v.labels,
                    boundaries: &masks[i],
                    features: &v.features,
                    class_weights: weights.as_ref(),
                    positive_weight: w_p,
                };
                let (loss, grads) = total_loss(&out, &targets, &cfg.loss)?;
                if !loss.total.is_finite() {
                    return Err(Error::Diverged {
                        epoch,
                        video: v.id.clone(),
                        loss: loss.total,
                    });
                }
                model.backward(&grads)?;
                sum.accumulate(&loss);
            }
            if batch.len() > 1 {
                model.params_mut().scale_grad(1.0 / batch.len() as f32);
            }
            adam_step(model.params_mut(), &mut state, &cfg.adam)?;
        }

        let held = if held_out.is_empty() {
            None
        } else {
            Some(evaluate_dataset(
                &model,
                held_out,
                refine,
                cfg.select_mode,
                cfg.f1_averaging,
            )?)
        };
        let record = EpochRecord {
            epoch,
            loss: sum.scaled(1.0 / train_videos.len() as f64),
            held_out: held,
        };
        log::debug!("epoch {epoch}: loss {:.5}", record.loss.total);
        if let Some(r) = &record.held_out {
            // Edit saturates quickly; accuracy breaks ties.
            let score = (r.edit, r.acc);
            if best.as_ref().is_none_or(|(b, _, _)| score > *b) {
                best = Some((score, epoch, model.clone()));
            }
        }
        on_epoch(&record);
        history.push(record);
    }

    let (best_epoch, model) = match best {
        Some((_, epoch, m)) => (epoch, m),
        None => (cfg.epochs, model),
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_synthetic_dataset, SynthConfig};

    fn data(num_videos: usize, noise: f64) -> crate::data::Dataset {
        let cfg = SynthConfig {
            num_videos,
            min_frames: 80,
            max_frames: 120,
            num_classes: 4,
            feature_dim: 8,
            noise_level: noise,
            min_segment: 15,
            max_segment: 40,
            seed: 3,
        };
        generate_synthetic_dataset(&cfg).unwrap().dataset
    }

    fn small(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            model: ModelShape {
                channels: 16,
                layers: 4,
                asb_stages: 2,
                brb_stages: 2,
                dropout: 0.5,
            },
            ..TrainConfig::default()
        }
    }

    fn run(ds: &crate::data::Dataset, cfg: &TrainConfig, held: usize) -> TrainOutcome {
        let vids: Vec<&VideoSample> = ds.videos.iter().collect();
        let (tr, te) = vids.split_at(vids.len() - held);
        train(
            tr,
            te,
            ds.num_classes(),
            cfg,
            &RefineConfig::default(),
            &mut |_| {},
        )
        .unwrap()
    }

    #[test]
    fn rejects_zero_epochs() {
        let ds = data(2, 0.1);
        let vids: Vec<&VideoSample> = ds.videos.iter().collect();
        let err = train(
            &vids,
            &[],
            4,
            &small(0),
            &RefineConfig::default(),
            &mut |_| {},
        );
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn zero_learning_rate_keeps_initial_parameters() {
        let ds = data(3, 0.1);
        let mut cfg = small(2);
        cfg.adam.learning_rate = 0.0;
        let out = run(&ds, &cfg, 0);
        let init = AsrfModel::<f32>::new(cfg.model.config(8, 4), cfg.seed).unwrap();
        assert_eq!(
            out.model.params().flat_values(),
            init.params().flat_values()
        );
        assert_eq!(out.best_epoch, 2);
    }

    #[test]
    fn loss_decreases_over_first_epochs() {
        let ds = data(6, 0.1);
        let out = run(&ds, &small(5), 0);
        let losses: Vec<f64> = out.history.iter().map(|r| r.loss.total).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn training_is_deterministic() {
        let ds = data(4, 0.2);
        let cfg = small(2);
        let a = run(&ds, &cfg, 1);
        let b = run(&ds, &cfg, 1);
        assert_eq!(a.history, b.history);
        assert_eq!(
            a.model.params().flat_values(),
            b.model.params().flat_values()
        );
    }

    #[test]
    fn batches_average_gradients() {
        let ds = data(4, 0.2);
        let cfg = TrainConfig {
            batch_size: 2,
            ..small(1)
        };
        let out = run(&ds, &cfg, 0);
        assert!(out.history[0].loss.total.is_finite());
    }

    #[test]
    fn records_held_out_metrics_and_picks_best_edit() {
        let ds = data(5, 0.2);
        let mut seen = Vec::new();
        let vids: Vec<&VideoSample> = ds.videos.iter().collect();
        let out = train(
            &vids[..4],
            &vids[4..],
            4,
            &small(3),
            &RefineConfig::default(),
            &mut |r| seen.push(r.epoch),
        )
        .unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
        let edits: Vec<f64> = out
            .history
            .iter()
            .map(|r| r.held_out.as_ref().unwrap().edit)
            .collect();
        let best = edits.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(edits[out.best_epoch - 1], best);
        assert_eq!(
            edits.iter().position(|&e| e == best).unwrap() + 1,
            out.best_epoch
        );
    }

    #[test]
    fn single_video_classification_loss_vanishes() {
        let ds = data(1, 0.0);
        let mut cfg = small(150);
        cfg.model.dropout = 0.0;
        cfg.adam.learning_rate = 5e-3;
        cfg.loss.classification = Classification::Ce;
        let out = run(&ds, &cfg, 0);
        let first = out.history[0].loss.classification;
        let last = out.history.last().unwrap().loss.classification;
        assert!(last < 0.05 * first, "{first} -> {last}");
    }
}
