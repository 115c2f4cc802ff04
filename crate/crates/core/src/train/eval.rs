use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{BoundaryMask, ClassId, VideoSample};
use crate::error::{Error, Result};
use crate::metrics::{combine, score_video, F1Averaging, MetricsReport};
use crate::par;
use crate::refine::{
    boundaries_from_similarity, postprocess_relabel, postprocess_smooth, refine_by_boundaries,
    refine_labels, select_boundaries, RefineConfig,
};
use crate::tcn::{AsrfModel, Outputs};

/// Which label sequence is scored against the ground truth.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Frame-wise argmax of the final segmentation head.
    Raw,
    /// Raw prediction refined with boundaries from the boundary branch.
    Refined,
    /// Ground-truth labels refined with predicted boundaries.
    OracleAsb,
    /// Raw prediction refined with ground-truth boundaries.
    OracleBoundaries,
    /// Raw prediction with short segments merged into neighbours.
    Relabel,
    /// Gaussian-smoothed probabilities, then argmax.
    Smooth,
    /// Raw prediction refined with boundaries at feature-similarity minima.
    Similarity,
}

impl EvalMode {
    pub const ALL: [EvalMode; 7] = [
        EvalMode::Raw,
        EvalMode::Refined,
        EvalMode::OracleAsb,
        EvalMode::OracleBoundaries,
        EvalMode::Relabel,
        EvalMode::Smooth,
        EvalMode::Similarity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Raw => "raw",
            EvalMode::Refined => "refined",
            EvalMode::OracleAsb => "oracle_asb",
            EvalMode::OracleBoundaries => "oracle_boundaries",
            EvalMode::Relabel => "relabel",
            EvalMode::Smooth => "smooth",
            EvalMode::Similarity => "similarity",
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EvalMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown evaluation mode '{s}'")))
    }
}

/// Inference on every video, fanned out across threads.
pub fn predict_dataset(
    model: &AsrfModel<f32>,
    videos: &[&VideoSample],
) -> Result<Vec<Outputs<f32>>> {
    par::map(videos, |v| model.predict(&v.features))
        .into_iter()
        .collect()
}

/// Final labels for one video under `mode`.
pub fn labels_for_mode(
    video: &VideoSample,
    out: &Outputs<f32>,
    num_classes: usize,
    cfg: &RefineConfig,
    mode: EvalMode,
) -> Result<Vec<ClassId>> {
    let probs = out.final_asb();
    if probs.rows() != video.len() || probs.cols() != num_classes {
        return Err(Error::Shape(format!(
            "video '{}': prediction is {}x{}, expected {}x{num_classes}",
            video.id,
            probs.rows(),
            probs.cols(),
            video.len()
        )));
    }
    let predicted = || select_boundaries(out.final_brb(), cfg.theta_p);
    match mode {
        EvalMode::Raw => Ok(probs.argmax_rows()),
        EvalMode::Refined => refine_by_boundaries(probs, &predicted()),
        EvalMode::OracleAsb => refine_labels(&video.labels, num_classes, &predicted()),
        EvalMode::OracleBoundaries => refine_by_boundaries(probs, &video.boundaries()),
        EvalMode::Relabel => postprocess_relabel(&probs.argmax_rows(), cfg.theta_t),
        EvalMode::Smooth => postprocess_smooth(probs, cfg.smooth_kernel),
        EvalMode::Similarity => {
            let mask = if video.len() < 2 {
                BoundaryMask::empty(video.len())
            } else {
                boundaries_from_similarity(&video.features, cfg.sim_sigma)?
            };
            refine_by_boundaries(probs, &mask)
        }
    }
}

/// Scores precomputed predictions. The boundary part of the report always
/// compares the boundary branch's selected boundaries with the ground truth,
/// whatever the mode.
pub fn evaluate_predictions(
    videos: &[&VideoSample],
    outputs: &[Outputs<f32>],
    num_classes: usize,
    cfg: &RefineConfig,
    mode: EvalMode,
    averaging: F1Averaging,
) -> Result<MetricsReport> {
    if videos.len() != outputs.len() {
        return Err(Error::LengthMismatch {
            what: "videos vs predictions",
            left: videos.len(),
            right: outputs.len(),
        });
    }
    let scores: Result<Vec<_>> = par::map_range(videos.len(), |i| {
        let (v, out) = (videos[i], &outputs[i]);
        let labels = labels_for_mode(v, out, num_classes, cfg, mode)?;
        let pred_bd = select_boundaries(out.final_brb(), cfg.theta_p);
        score_video(&labels, &v.labels, &pred_bd, &v.boundaries(), cfg.theta_b)
    })
    .into_iter()
    .collect();
    combine(&scores?, averaging)
}

pub fn evaluate_dataset(
    model: &AsrfModel<f32>,
    videos: &[&VideoSample],
    cfg: &RefineConfig,
    mode: EvalMode,
    averaging: F1Averaging,
) -> Result<MetricsReport> {
    let outputs = predict_dataset(model, videos)?;
    evaluate_predictions(
        videos,
        &outputs,
        model.config().num_classes,
        cfg,
        mode,
        averaging,
    )
}
