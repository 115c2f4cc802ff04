//! Boundary-driven refinement and the baseline postprocessors it is compared
//! against.
//!
//! A set flag at frame `t` always means "a new segment begins at `t`".

use serde::{Deserialize, Serialize};

use crate::data::{segments_from_labels, BoundaryMask, ClassId, Segment};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    /// Minimum boundary probability for a local maximum to count.
    pub theta_p: f64,
    /// Segments shorter than this are relabeled by [`postprocess_relabel`].
    pub theta_t: usize,
    /// Gaussian kernel size for [`postprocess_smooth`].
    pub smooth_kernel: usize,
    /// Bandwidth for [`boundaries_from_similarity`].
    pub sim_sigma: f64,
    /// Tolerance (frames) for boundary precision/recall.
    pub theta_b: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            theta_p: 0.5,
            theta_t: 5,
            smooth_kernel: 5,
            sim_sigma: 1.0,
            theta_b: 5,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.theta_p) {
            return Err(Error::Config(format!(
                "theta_p {} outside [0, 1]",
                self.theta_p
            )));
        }
        if self.theta_t == 0 {
            return Err(Error::Config("theta_t must be at least 1".into()));
        }
        if self.smooth_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "smoothing kernel size {} must be odd",
                self.smooth_kernel
            )));
        }
        if !(self.sim_sigma > 0.0) {
            return Err(Error::Config("sim_sigma must be positive".into()));
        }
        if self.theta_b == 0 {
            return Err(Error::Config("theta_b must be at least 1".into()));
        }
        Ok(())
    }
}

/// Flags frames that reach `theta_p` and are local maxima.
///
/// A frame qualifies when `p[t] >= p[t-1]` and `p[t] > p[t+1]`; missing
/// neighbours at the sequence ends are ignored. On a plateau only its last
/// frame is flagged.
pub fn select_boundaries<F: Scalar>(probs: &[F], theta_p: f64) -> BoundaryMask {
    let n = probs.len();
    let theta = F::of(theta_p);
    let flags = (0..n)
        .map(|t| {
            let p = probs[t];
            p >= theta && (t == 0 || p >= probs[t - 1]) && (t + 1 == n || p > probs[t + 1])
        })
        .collect();
    BoundaryMask::from_flags(flags)
}

/// Half-open frame ranges delimited by the flags.
fn intervals(boundaries: &BoundaryMask) -> Vec<(usize, usize)> {
    let n = boundaries.len();
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..n {
        if boundaries.is_set(t) {
            out.push((start, t));
            start = t;
        }
    }
    if n > 0 {
        out.push((start, n));
    }
    out
}

/// Majority vote of the frame-wise argmax inside `[start, end)`. Ties go to
/// the class with the largest summed probability, then to the smallest id.
fn majority<F: Scalar>(probs: &Matrix<F>, argmax: &[ClassId], start: usize, end: usize) -> ClassId {
    let c = probs.cols();
    let mut votes = vec![0usize; c];
    for &a in &argmax[start..end] {
        votes[a] += 1;
    }
    let top = *votes.iter().max().expect("at least one class");
    let tied: Vec<ClassId> = (0..c).filter(|&k| votes[k] == top).collect();
    if tied.len() == 1 {
        return tied[0];
    }
    let mass = |k: ClassId| -> f64 { (start..end).map(|t| probs.get(t, k).as_f64()).sum() };
    let mut best = tied[0];
    let mut best_mass = mass(best);
    for &k in &tied[1..] {
        let m = mass(k);
        if m > best_mass {
            best = k;
            best_mass = m;
        }
    }
    best
}

/// Assigns every inter-boundary interval the majority class of the
/// frame-wise argmax of `probs`.
pub fn refine_by_boundaries<F: Scalar>(
    probs: &Matrix<F>,
    boundaries: &BoundaryMask,
) -> Result<Vec<ClassId>> {
    if probs.rows() != boundaries.len() {
        return Err(Error::LengthMismatch {
            what: "probability rows vs boundary mask",
            left: probs.rows(),
            right: boundaries.len(),
        });
    }
    let argmax = probs.argmax_rows();
    let mut out = vec![0; probs.rows()];
    for (s, e) in intervals(boundaries) {
        let c = majority(probs, &argmax, s, e);
        out[s..e].iter_mut().for_each(|v| *v = c);
    }
    Ok(out)
}

/// Refinement applied to a hard label sequence (each label treated as a
/// one-hot probability row).
pub fn refine_labels(
    labels: &[ClassId],
    num_classes: usize,
    boundaries: &BoundaryMask,
) -> Result<Vec<ClassId>> {
    refine_by_boundaries(&one_hot(labels, num_classes)?, boundaries)
}

pub fn one_hot(labels: &[ClassId], num_classes: usize) -> Result<Matrix<f32>> {
    let mut m = Matrix::zeros(labels.len(), num_classes);
    for (t, &c) in labels.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::ClassOutOfRange { id: c, num_classes });
        }
        m.set(t, c, 1.0);
    }
    Ok(m)
}

/// Merges segments shorter than `theta_t` into their neighbours.
///
/// A short leading run takes the label of the run that follows it; every
/// later short run takes the label of the (already processed) run before
/// it. Equal neighbours are merged before lengths are checked again.
pub fn postprocess_relabel(labels: &[ClassId], theta_t: usize) -> Result<Vec<ClassId>> {
    let mut segs: Vec<Segment> = segments_from_labels(labels)?;
    // Leading short runs are absorbed forward.
    while segs.len() > 1 && segs[0].len() < theta_t {
        let next = segs.remove(1);
        segs[0].class_id = next.class_id;
        segs[0].end = next.end;
    }
    let mut merged: Vec<Segment> = Vec::with_capacity(segs.len());
    for seg in segs {
        match merged.last_mut() {
            Some(last) if last.class_id == seg.class_id || seg.len() < theta_t => {
                last.end = seg.end
            }
            _ => merged.push(seg),
        }
    }
    Ok(crate::data::labels_from_segments(&merged))
}

/// Normalized Gaussian kernel of odd size `k` with `sigma = k / 6`.
pub fn gaussian_kernel(k: usize) -> Vec<f64> {
    let half = (k / 2) as isize;
    let sigma = k as f64 / 6.0;
    let raw: Vec<f64> = (-half..=half)
        .map(|x| (-((x * x) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Half-sample symmetric reflection of an index into `0..n`
/// (`... c b a | a b c ... x y z | z y x ...`).
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Gaussian-smooths each class channel over time, then takes the per-frame argmax.
pub fn postprocess_smooth<F: Scalar>(
    probs: &Matrix<F>,
    kernel_size: usize,
) -> Result<Vec<ClassId>> {
    if kernel_size.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "kernel size {kernel_size} must be odd"
        )));
    }
    let kernel = gaussian_kernel(kernel_size);
    let half = (kernel_size / 2) as isize;
    let (n, c) = (probs.rows(), probs.cols());
    let mut smoothed = Matrix::<f64>::zeros(n, c);
    for t in 0..n {
        for (j, &w) in kernel.iter().enumerate() {
            let src = reflect(t as isize + j as isize - half, n);
            for k in 0..c {
                let v = smoothed.get(t, k) + w * probs.get(src, k).as_f64();
                smoothed.set(t, k, v);
            }
        }
    }
    Ok(smoothed.argmax_rows())
}

/// Flags strict local minima of the consecutive-frame similarity
/// `s_t = exp(-|x_t - x_{t-1}|^2 / (2 sigma^2))`, `t >= 1`. Missing
/// neighbours at either end of `s` are ignored.
pub fn boundaries_from_similarity<F: Scalar>(
    features: &Matrix<F>,
    sigma: f64,
) -> Result<BoundaryMask> {
    let n = features.rows();
    if n < 2 {
        return Err(Error::Shape(
            "similarity boundaries need at least two frames".into(),
        ));
    }
    let denom = 2.0 * sigma * sigma;
    // sim[i] is the similarity of frames i and i + 1, i.e. s_{i+1}.
    let sim: Vec<f64> = (1..n)
        .map(|t| {
            let d2: f64 = features
                .row(t)
                .iter()
                .zip(features.row(t - 1))
                .map(|(&a, &b)| (a - b).as_f64().powi(2))
                .sum();
            (-d2 / denom).exp()
        })
        .collect();
    let mut mask = BoundaryMask::empty(n);
    let m = sim.len();
    if m < 2 {
        return Ok(mask);
    }
    for i in 0..m {
        let left = i == 0 || sim[i] < sim[i - 1];
        let right = i + 1 == m || sim[i] < sim[i + 1];
        if left && right {
            mask.set(i + 1, true);
        }
    }
    Ok(mask)
}
