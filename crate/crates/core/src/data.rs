//! Videos, segments, boundaries and class statistics.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Dense class index in `0..C`.
pub type ClassId = usize;

/// One video: frame features plus frame-level ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSample {
    pub id: String,
    pub features: Matrix<f32>,
    pub labels: Vec<ClassId>,
}

impl VideoSample {
    /// Validates the invariants that every downstream stage relies on.
    pub fn new(
        id: impl Into<String>,
        features: Matrix<f32>,
        labels: Vec<ClassId>,
        num_classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::EmptySequence);
        }
        if features.cols() == 0 {
            return Err(Error::Shape("feature dimension must be at least 1".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::LengthMismatch {
                what: "feature rows vs labels",
                left: features.rows(),
                right: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::ClassOutOfRange {
                id: bad,
                num_classes,
            });
        }
        Ok(Self {
            id: id.into(),
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn segments(&self) -> Vec<Segment> {
        segments_from_labels(&self.labels).expect("validated non-empty")
    }

    pub fn boundaries(&self) -> BoundaryMask {
        boundaries_from_labels(&self.labels).expect("validated non-empty")
    }
}

/// Maximal run of a single class; `end` is inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub class_id: ClassId,
    pub start: usize,
    pub end: usize,
}

impl Segment {
    pub fn new(class_id: ClassId, start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Self {
            class_id,
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Temporal intersection over union with inclusive frame ranges.
    pub fn iou(&self, other: &Segment) -> f64 {
        let lo = self.start.max(other.start);
        let hi = self.end.min(other.end);
        let inter = if hi >= lo { hi - lo + 1 } else { 0 };
        let union = self.len() + other.len() - inter;
        inter as f64 / union as f64
    }
}

/// Per-frame boundary flags; a set flag at `t` means a new segment starts at `t`.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct BoundaryMask {
    flags: Vec<bool>,
}

impl BoundaryMask {
    pub fn empty(len: usize) -> Self {
        Self {
            flags: vec![false; len],
        }
    }

    pub fn from_flags(flags: Vec<bool>) -> Self {
        Self { flags }
    }

    /// Mask of length `len` with flags at `positions`.
    pub fn from_positions(len: usize, positions: &[usize]) -> Result<Self> {
        let mut flags = vec![false; len];
        for &p in positions {
            if p >= len {
                return Err(Error::Shape(format!(
                    "boundary position {p} outside sequence of length {len}"
                )));
            }
            flags[p] = true;
        }
        Ok(Self { flags })
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    pub fn is_set(&self, t: usize) -> bool {
        self.flags[t]
    }

    pub fn set(&mut self, t: usize, on: bool) {
        self.flags[t] = on;
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub fn positions(&self) -> Vec<usize> {
        self.flags
            .iter()
            .enumerate()
            .filter_map(|(t, &f)| f.then_some(t))
            .collect()
    }

    /// Targets as 0/1 values.
    pub fn as_targets(&self) -> Vec<f64> {
        self.flags
            .iter()
            .map(|&f| if f { 1.0 } else { 0.0 })
            .collect()
    }
}

/// Run-length decomposition of a label sequence.
pub fn segments_from_labels(labels: &[ClassId]) -> Result<Vec<Segment>> {
    let (&first, _) = labels.split_first().ok_or(Error::EmptySequence)?;
    let mut segments = Vec::new();
    let mut current = Segment::new(first, 0, 0);
    for (t, &c) in labels.iter().enumerate().skip(1) {
        if c == current.class_id {
            current.end = t;
        } else {
            segments.push(current);
            current = Segment::new(c, t, t);
        }
    }
    segments.push(current);
    Ok(segments)
}

/// Expands segments back into a frame-level label sequence.
pub fn labels_from_segments(segments: &[Segment]) -> Vec<ClassId> {
    let mut out = Vec::with_capacity(segments.last().map_or(0, |s| s.end + 1));
    for s in segments {
        out.extend(std::iter::repeat_n(s.class_id, s.len()));
    }
    out
}

/// Flags every frame whose class differs from the previous frame.
pub fn boundaries_from_labels(labels: &[ClassId]) -> Result<BoundaryMask> {
    if labels.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut flags = vec![false; labels.len()];
    for t in 1..labels.len() {
        flags[t] = labels[t] != labels[t - 1];
    }
    Ok(BoundaryMask { flags })
}

/// Positive per-class loss weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    weights: Vec<f64>,
}

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::Config(format!("class weight {w} is not positive")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(num_classes: usize, value: f64) -> Self {
        Self {
            weights: vec![value; num_classes],
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn get(&self, class: ClassId) -> f64 {
        self.weights[class]
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Class weights from frame frequencies: `median(freq) / freq[c]`.
///
/// A class that never occurs is counted as occurring once (a warning is
/// logged) so that its weight stays finite.
pub fn median_frequency_weights<'a, I>(sequences: I, num_classes: usize) -> Result<ClassWeights>
where
    I: IntoIterator<Item = &'a [ClassId]>,
{
    if num_classes == 0 {
        return Err(Error::Config("class count must be positive".into()));
    }
    let mut freq = vec![0u64; num_classes];
    for seq in sequences {
        for &c in seq {
            if c >= num_classes {
                return Err(Error::ClassOutOfRange { id: c, num_classes });
            }
            freq[c] += 1;
        }
    }
    Ok(weights_from_frequencies(&freq))
}

/// Median frequency balancing on precomputed counts.
pub fn weights_from_frequencies(freq: &[u64]) -> ClassWeights {
    let freq: Vec<f64> = freq
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                log::warn!(
                    "class {c} never occurs in the training split; treating its frequency as 1"
                );
                1.0
            } else {
                n as f64
            }
        })
        .collect();
    let med = median(&freq);
    ClassWeights {
        weights: freq.iter().map(|f| med / f).collect(),
    }
}

/// Reciprocal of the fraction of boundary frames across the training split.
pub fn positive_boundary_weight<'a, I>(masks: I) -> Result<f64>
where
    I: IntoIterator<Item = &'a BoundaryMask>,
{
    let (mut total, mut positive) = (0usize, 0usize);
    for m in masks {
        total += m.len();
        positive += m.count();
    }
    if positive == 0 {
        return Err(Error::NoBoundaryFrames);
    }
    Ok(total as f64 / positive as f64)
}

/// Class names indexed by dense class id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassMap {
    names: Vec<String>,
    index: HashMap<String, ClassId>,
}

impl ClassMap {
    pub fn new(names: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!("invalid class name '{n}'")));
            }
            if index.insert(n.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate class name '{n}'")));
            }
        }
        Ok(Self { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, id: ClassId) -> &str {
        &self.names[id]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Result<ClassId> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownClass(name.to_string()))
    }
}

/// Train/test partition of video ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl DatasetSplit {
    /// Holds out the last `test_count` ids.
    pub fn holdout(ids: &[String], test_count: usize) -> Result<Self> {
        if test_count >= ids.len() {
            return Err(Error::Config(format!(
                "cannot hold out {test_count} of {} videos",
                ids.len()
            )));
        }
        let cut = ids.len() - test_count;
        Ok(Self {
            train: ids[..cut].to_vec(),
            test: ids[cut..].to_vec(),
        })
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let train: HashSet<&str> = self.train.iter().map(String::as_str).collect();
        if let Some(id) = self.test.iter().find(|id| train.contains(id.as_str())) {
            return Err(Error::Config(format!(
                "video '{id}' is in both train and test"
            )));
        }
        for id in self.train.iter().chain(&self.test) {
            dataset.get(id)?;
        }
        Ok(())
    }
}

/// A set of videos sharing one class map and feature dimension.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub classes: ClassMap,
    pub videos: Vec<VideoSample>,
}

impl Dataset {
    pub fn new(classes: ClassMap, videos: Vec<VideoSample>) -> Result<Self> {
        let mut seen = HashSet::new();
        let dim = videos.first().map(VideoSample::feature_dim);
        for v in &videos {
            if !seen.insert(v.id.as_str()) {
                return Err(Error::Config(format!("duplicate video id '{}'", v.id)));
            }
            if Some(v.feature_dim()) != dim {
                return Err(Error::Shape(format!(
                    "video '{}' has feature dimension {}, expected {}",
                    v.id,
                    v.feature_dim(),
                    dim.unwrap_or(0)
                )));
            }
            if let Some(&bad) = v.labels.iter().find(|&&l| l >= classes.len()) {
                return Err(Error::ClassOutOfRange {
                    id: bad,
                    num_classes: classes.len(),
                });
            }
        }
        Ok(Self { classes, videos })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.videos.first().map_or(0, VideoSample::feature_dim)
    }

    pub fn ids(&self) -> Vec<String> {
        self.videos.iter().map(|v| v.id.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Result<&VideoSample> {
        self.videos
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| Error::Config(format!("unknown video id '{id}'")))
    }

    pub fn select(&self, ids: &[String]) -> Result<Vec<&VideoSample>> {
        ids.iter().map(|id| self.get(id)).collect()
    }
}
