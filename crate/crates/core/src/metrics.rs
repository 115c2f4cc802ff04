//! Frame accuracy, segmental edit score, segmental F1@k and boundary
//! precision/recall/F1.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::{segments_from_labels, BoundaryMask, ClassId, Segment};
use crate::error::{Error, Result};

/// Overlap thresholds (percent) reported by [`MetricsReport`].
pub const F1_THRESHOLDS: [u32; 3] = [10, 25, 50];

/// How segmental F1 is aggregated over a dataset.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Averaging {
    /// One precision/recall from TP/FP/FN summed over every video.
    #[default]
    Global,
    /// Per-class F1 from per-class summed counts, then the unweighted mean
    /// over classes that occur in predictions or ground truth.
    PerClass,
}

fn check_len(what: &'static str, left: usize, right: usize) -> Result<()> {
    if left != right {
        return Err(Error::LengthMismatch { what, left, right });
    }
    Ok(())
}

/// Percentage of frames where `pred` equals `gt`.
pub fn frame_accuracy(pred: &[ClassId], gt: &[ClassId]) -> Result<f64> {
    check_len("predicted vs ground-truth labels", pred.len(), gt.len())?;
    if gt.is_empty() {
        return Err(Error::EmptySequence);
    }
    let hits = pred.iter().zip(gt).filter(|(p, g)| p == g).count();
    Ok(100.0 * hits as f64 / gt.len() as f64)
}

/// Unit-cost edit distance between two sequences.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn segment_classes(labels: &[ClassId]) -> Result<Vec<ClassId>> {
    Ok(segments_from_labels(labels)?
        .into_iter()
        .map(|s| s.class_id)
        .collect())
}

/// Edit score of two segment-class sequences, in percent.
pub fn edit_score_of_segments(pred: &[ClassId], gt: &[ClassId]) -> Result<f64> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptySequence);
    }
    let d = levenshtein(pred, gt) as f64;
    let m = pred.len().max(gt.len()) as f64;
    Ok(((1.0 - d / m) * 100.0).max(0.0))
}

/// `(1 - levenshtein / max(M, N)) * 100` over the collapsed segment classes.
pub fn segmental_edit_score(pred: &[ClassId], gt: &[ClassId]) -> Result<f64> {
    edit_score_of_segments(&segment_classes(pred)?, &segment_classes(gt)?)
}

/// True positive / false positive / false negative counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchCounts {
    pub fn add(&mut self, other: MatchCounts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        harmonic(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Greedy matching: each predicted segment, in order, is compared with every
/// same-class ground-truth segment; the best one counts as a hit when its IoU
/// reaches `k / 100` and it has not been matched yet.
///
/// Returns the counts restricted to `class` when given.
fn match_segments(pred: &[Segment], gt: &[Segment], k: f64, class: Option<ClassId>) -> MatchCounts {
    let threshold = k / 100.0;
    let mut matched = vec![false; gt.len()];
    let mut c = MatchCounts::default();
    for p in pred {
        if class.is_some_and(|k| k != p.class_id) {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (j, g) in gt.iter().enumerate() {
            if g.class_id != p.class_id {
                continue;
            }
            let iou = p.iou(g);
            if best.is_none_or(|(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        match best {
            Some((j, iou)) if iou >= threshold && !matched[j] => {
                matched[j] = true;
                c.tp += 1;
            }
            _ => c.fp += 1,
        }
    }
    c.fn_ = gt
        .iter()
        .zip(&matched)
        .filter(|(g, &m)| !m && class.is_none_or(|k| k == g.class_id))
        .count();
    c
}

pub fn segmental_f1_counts(pred: &[Segment], gt: &[Segment], k: f64) -> MatchCounts {
    match_segments(pred, gt, k, None)
}

/// Segmental F1 at overlap `k` percent, in percent.
pub fn segmental_f1(pred: &[Segment], gt: &[Segment], k: f64) -> f64 {
    100.0 * segmental_f1_counts(pred, gt, k).f1()
}

/// Per-class counts for macro averaging, keyed by class id.
pub fn segmental_f1_class_counts(
    pred: &[Segment],
    gt: &[Segment],
    k: f64,
) -> BTreeMap<ClassId, MatchCounts> {
    let mut classes: Vec<ClassId> = pred.iter().chain(gt).map(|s| s.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| (c, match_segments(pred, gt, k, Some(c))))
        .collect()
}

/// Mean per-class F1 (percent) from per-class counts.
pub fn macro_f1(counts: &BTreeMap<ClassId, MatchCounts>) -> f64 {
    if counts.is_empty() {
        return 0.0;
    }
    100.0 * counts.values().map(MatchCounts::f1).sum::<f64>() / counts.len() as f64
}

/// Boundary hit counts: `pred_hits` predicted boundaries lie within
/// `theta_b` of some true one, `gt_hits` true boundaries within `theta_b`
/// of some predicted one.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BoundaryCounts {
    pub pred_hits: usize,
    pub pred_total: usize,
    pub gt_hits: usize,
    pub gt_total: usize,
}

impl BoundaryCounts {
    pub fn add(&mut self, other: BoundaryCounts) {
        self.pred_hits += other.pred_hits;
        self.pred_total += other.pred_total;
        self.gt_hits += other.gt_hits;
        self.gt_total += other.gt_total;
    }

    pub fn scores(&self) -> BoundaryScores {
        if self.pred_total == 0 && self.gt_total == 0 {
            return BoundaryScores {
                precision: 1.0,
                recall: 1.0,
                f1: 1.0,
            };
        }
        let precision = ratio(self.pred_hits, self.pred_total);
        let recall = ratio(self.gt_hits, self.gt_total);
        BoundaryScores {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

/// Number of `from` positions with some `to` position at distance `< theta_b`.
/// Both inputs are sorted.
fn hits_within(from: &[usize], to: &[usize], theta_b: usize) -> usize {
    from.iter()
        .filter(|&&x| {
            let i = to.partition_point(|&y| y < x);
            let after = to.get(i).map(|&y| y - x);
            let before = i.checked_sub(1).map(|j| x - to[j]);
            after.into_iter().chain(before).any(|d| d < theta_b)
        })
        .count()
}

pub fn boundary_counts(
    pred: &BoundaryMask,
    gt: &BoundaryMask,
    theta_b: usize,
) -> Result<BoundaryCounts> {
    check_len("predicted vs ground-truth boundaries", pred.len(), gt.len())?;
    let (p, g) = (pred.positions(), gt.positions());
    Ok(BoundaryCounts {
        pred_hits: hits_within(&p, &g, theta_b),
        pred_total: p.len(),
        gt_hits: hits_within(&g, &p, theta_b),
        gt_total: g.len(),
    })
}

pub fn boundary_prf(
    pred: &BoundaryMask,
    gt: &BoundaryMask,
    theta_b: usize,
) -> Result<BoundaryScores> {
    Ok(boundary_counts(pred, gt, theta_b)?.scores())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Aggregate scores for a set of predictions. Percentages except `boundary`,
/// which is in `[0, 1]`. `f1` is keyed by overlap threshold (`"10"`, ...).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub acc: f64,
    pub edit: f64,
    pub f1: BTreeMap<String, f64>,
    pub boundary: BoundaryScores,
}

impl MetricsReport {
    pub fn f1_at(&self, k: u32) -> f64 {
        self.f1.get(&k.to_string()).copied().unwrap_or(f64::NAN)
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14}{:>8}", "metric", "value")?;
        writeln!(f, "{:<14}{:>8.2}", "acc", self.acc)?;
        writeln!(f, "{:<14}{:>8.2}", "edit", self.edit)?;
        for k in F1_THRESHOLDS {
            writeln!(f, "{:<14}{:>8.2}", format!("f1@{k}"), self.f1_at(k))?;
        }
        writeln!(f, "{:<14}{:>8.4}", "bd_precision", self.boundary.precision)?;
        writeln!(f, "{:<14}{:>8.4}", "bd_recall", self.boundary.recall)?;
        write!(f, "{:<14}{:>8.4}", "bd_f1", self.boundary.f1)
    }
}

/// Per-video contribution to a [`MetricsReport`].
#[derive(Clone, Debug, Default)]
pub struct VideoScores {
    pub correct: usize,
    pub frames: usize,
    pub edit: f64,
    pub f1: [MatchCounts; 3],
    pub f1_class: [BTreeMap<ClassId, MatchCounts>; 3],
    pub boundary: BoundaryCounts,
}

/// Scores one video. `pred_bd` / `gt_bd` are the boundary masks compared for
/// the boundary metrics.
pub fn score_video(
    pred: &[ClassId],
    gt: &[ClassId],
    pred_bd: &BoundaryMask,
    gt_bd: &BoundaryMask,
    theta_b: usize,
) -> Result<VideoScores> {
    check_len("predicted vs ground-truth labels", pred.len(), gt.len())?;
    let ps = segments_from_labels(pred)?;
    let gs = segments_from_labels(gt)?;
    let classes = |s: &[Segment]| s.iter().map(|s| s.class_id).collect::<Vec<_>>();
    let ks = F1_THRESHOLDS.map(f64::from);
    Ok(VideoScores {
        correct: pred.iter().zip(gt).filter(|(p, g)| p == g).count(),
        frames: gt.len(),
        edit: edit_score_of_segments(&classes(&ps), &classes(&gs))?,
        f1: ks.map(|k| segmental_f1_counts(&ps, &gs, k)),
        f1_class: ks.map(|k| segmental_f1_class_counts(&ps, &gs, k)),
        boundary: boundary_counts(pred_bd, gt_bd, theta_b)?,
    })
}

/// Combines per-video scores: accuracy over all frames, edit averaged per
/// video, F1 and boundary metrics from summed counts.
pub fn combine(videos: &[VideoScores], averaging: F1Averaging) -> Result<MetricsReport> {
    if videos.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut correct = 0;
    let mut frames = 0;
    let mut edit = 0.0;
    let mut f1 = [MatchCounts::default(); 3];
    let mut f1_class: [BTreeMap<ClassId, MatchCounts>; 3] = Default::default();
    let mut boundary = BoundaryCounts::default();
    for v in videos {
        correct += v.correct;
        frames += v.frames;
        edit += v.edit;
        for i in 0..3 {
            f1[i].add(v.f1[i]);
            for (&c, &m) in &v.f1_class[i] {
                f1_class[i].entry(c).or_default().add(m);
            }
        }
        boundary.add(v.boundary);
    }
    let f1 = F1_THRESHOLDS
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let v = match averaging {
                F1Averaging::Global => 100.0 * f1[i].f1(),
                F1Averaging::PerClass => macro_f1(&f1_class[i]),
            };
            (k.to_string(), v)
        })
        .collect();
    Ok(MetricsReport {
        acc: 100.0 * correct as f64 / frames as f64,
        edit: edit / videos.len() as f64,
        f1,
        boundary: boundary.scores(),
    })
}
