use serde::{Deserialize, Serialize};

use super::{evaluate_predictions, predict_dataset, train, EvalMode, TrainConfig};
use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::refine::{select_boundaries, RefineConfig};
use crate::tcn::AsrfModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaRow {
    pub theta_p: f64,
    /// Boundaries selected over all videos.
    pub boundaries: usize,
    pub report: MetricsReport,
}

/// Refined-mode metrics for each boundary threshold. Inference runs once.
pub fn sweep_theta_p(
    model: &AsrfModel<f32>,
    videos: &[&VideoSample],
    thetas: &[f64],
    refine: &RefineConfig,
    averaging: crate::metrics::F1Averaging,
) -> Result<Vec<ThetaRow>> {
    let outputs = predict_dataset(model, videos)?;
    let c = model.config().num_classes;
    thetas
        .iter()
        .map(|&theta_p| {
            let cfg = RefineConfig {
                theta_p,
                ..refine.clone()
            };
            cfg.validate()?;
            let boundaries = outputs
                .iter()
                .map(|o| select_boundaries(o.final_brb(), theta_p).count())
                .sum();
            let report =
                evaluate_predictions(videos, &outputs, c, &cfg, EvalMode::Refined, averaging)?;
            Ok(ThetaRow {
                theta_p,
                boundaries,
                report,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRow {
    pub brb_stages: usize,
    pub raw: MetricsReport,
    pub refined: MetricsReport,
}

/// Trains one model per boundary-branch stage count and reports raw and
/// refined held-out metrics for each.
pub fn sweep_brb_stages(
    train_videos: &[&VideoSample],
    held_out: &[&VideoSample],
    num_classes: usize,
    stages: &[usize],
    cfg: &TrainConfig,
    refine: &RefineConfig,
) -> Result<Vec<StageRow>> {
    if held_out.is_empty() {
        return Err(Error::Config("stage sweep needs held-out videos".into()));
    }
    stages
        .iter()
        .map(|&s| {
            let mut run = cfg.clone();
            run.model.brb_stages = s;
            let outcome = train(
                train_videos,
                held_out,
                num_classes,
                &run,
                refine,
                &mut |_| {},
            )?;
            let outputs = predict_dataset(&outcome.model, held_out)?;
            let eval = |mode| {
                evaluate_predictions(
                    held_out,
                    &outputs,
                    num_classes,
                    refine,
                    mode,
                    cfg.f1_averaging,
                )
            };
            Ok(StageRow {
                brb_stages: s,
                raw: eval(EvalMode::Raw)?,
                refined: eval(EvalMode::Refined)?,
            })
        })
        .collect()
}
