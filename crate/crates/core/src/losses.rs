//! Training objectives and their gradients with respect to head probabilities.
//!
//! Every logarithm reads `ln(max(p, PROB_EPS))`; below the clamp the
//! derivative is zero, so no loss or gradient is ever infinite.

use serde::{Deserialize, Serialize};

use crate::data::{BoundaryMask, ClassId, ClassWeights};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use crate::tcn::{HeadGrads, Outputs};

pub const PROB_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    Ce,
    #[default]
    CeClassWeighted,
    Focal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    None,
    Tmse,
    #[default]
    GsTmse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    /// Weight of the boundary branch in the total loss.
    pub lambda_brb: f64,
    /// Truncation threshold on log-probability jumps.
    pub tau: f64,
    /// Bandwidth of the feature-similarity kernel.
    pub sigma: f64,
    /// Multiplier applied to plain TMSE (not to the similarity-weighted one).
    pub tmse_weight: f64,
    pub classification: Classification,
    pub smoothing: Smoothing,
    pub focal_gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_brb: 0.1,
            tau: 4.0,
            sigma: 1.0,
            tmse_weight: 0.15,
            classification: Classification::default(),
            smoothing: Smoothing::default(),
            focal_gamma: 2.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_brb >= 0.0) {
            return Err(Error::Config(format!(
                "lambda_brb {} must be >= 0",
                self.lambda_brb
            )));
        }
        if !(self.tau > 0.0) || !(self.sigma > 0.0) {
            return Err(Error::Config("tau and sigma must be positive".into()));
        }
        if !(self.tmse_weight >= 0.0) || !(self.focal_gamma >= 0.0) {
            return Err(Error::Config(
                "tmse_weight and focal_gamma must be >= 0".into(),
            ));
        }
        Ok(())
    }

    fn smoothing_weight(&self) -> f64 {
        match self.smoothing {
            Smoothing::None => 0.0,
            Smoothing::Tmse => self.tmse_weight,
            Smoothing::GsTmse => 1.0,
        }
    }
}

/// `ln(max(p, eps))` and its derivative with respect to `p`.
#[inline]
fn clamped_ln<F: Scalar>(p: F) -> (F, F) {
    let eps = F::of(PROB_EPS);
    if p > eps {
        (p.ln(), p.recip())
    } else {
        (eps.ln(), F::zero())
    }
}

fn check_labels<F: Scalar>(probs: &Matrix<F>, labels: &[ClassId]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(Error::LengthMismatch {
            what: "probability rows vs labels",
            left: probs.rows(),
            right: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= probs.cols()) {
        return Err(Error::ClassOutOfRange {
            id: bad,
            num_classes: probs.cols(),
        });
    }
    Ok(())
}

type GradSink<'a, F> = Option<(&'a mut [F], F)>;

fn ce_acc<F: Scalar>(
    probs: &Matrix<F>,
    labels: &[ClassId],
    weights: Option<&[f64]>,
    grad: GradSink<F>,
) -> F {
    let inv_t = F::one() / F::of(labels.len() as f64);
    let cols = probs.cols();
    let mut total = F::zero();
    let mut grad = grad;
    for (t, &c) in labels.iter().enumerate() {
        let w = F::of(weights.map_or(1.0, |w| w[c]));
        let (lp, dlp) = clamped_ln(probs.get(t, c));
        total += -w * lp;
        if let Some((g, scale)) = grad.as_mut() {
            g[t * cols + c] += *scale * inv_t * -w * dlp;
        }
    }
    total * inv_t
}

fn focal_acc<F: Scalar>(probs: &Matrix<F>, labels: &[ClassId], gamma: f64, grad: GradSink<F>) -> F {
    let inv_t = F::one() / F::of(labels.len() as f64);
    let g_f = F::of(gamma);
    let cols = probs.cols();
    let mut total = F::zero();
    let mut grad = grad;
    for (t, &c) in labels.iter().enumerate() {
        let p = probs.get(t, c);
        let q = (F::one() - p).max(F::zero());
        let (lp, dlp) = clamped_ln(p);
        let modulator = q.powf(g_f);
        total += -modulator * lp;
        if let Some((g, scale)) = grad.as_mut() {
            // d/dp [-(1-p)^g ln p] = g (1-p)^(g-1) ln p - (1-p)^g / p
            let d_mod = if gamma == 0.0 {
                F::zero()
            } else {
                g_f * q.powf(g_f - F::one()) * lp
            };
            g[t * cols + c] += *scale * inv_t * (d_mod - modulator * dlp);
        }
    }
    total * inv_t
}

/// Gaussian similarity of consecutive feature rows; entry `t - 1` weights the
/// transition `t - 1 -> t`.
fn similarity_weights<F: Scalar>(features: &Matrix<F>, sigma: f64) -> Vec<F> {
    let denom = F::of(2.0 * sigma * sigma);
    (1..features.rows())
        .map(|t| {
            let d2: F = features
                .row(t)
                .iter()
                .zip(features.row(t - 1))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            (-d2 / denom).exp()
        })
        .collect()
}

fn tmse_acc<F: Scalar>(probs: &Matrix<F>, sim: Option<&[F]>, tau: f64, grad: GradSink<F>) -> F {
    let (t_len, n) = (probs.rows(), probs.cols());
    if t_len < 2 {
        return F::zero();
    }
    let norm = F::one() / F::of((t_len * n) as f64);
    let tau = F::of(tau);
    let two = F::of(2.0);
    let mut total = F::zero();
    let mut grad = grad;
    for t in 1..t_len {
        let w = sim.map_or(F::one(), |s| s[t - 1]);
        for c in 0..n {
            let (a, da) = clamped_ln(probs.get(t, c));
            let (b, db) = clamped_ln(probs.get(t - 1, c));
            let delta = a - b;
            if delta.abs() < tau {
                total += w * delta * delta;
                if let Some((g, scale)) = grad.as_mut() {
                    let coef = *scale * norm * w * two * delta;
                    g[t * n + c] += coef * da;
                    g[(t - 1) * n + c] -= coef * db;
                }
            } else {
                total += w * tau * tau;
            }
        }
    }
    total * norm
}

fn bce_acc<F: Scalar>(probs: &[F], targets: &BoundaryMask, w_p: f64, grad: GradSink<F>) -> F {
    let inv_t = F::one() / F::of(probs.len() as f64);
    let w_p = F::of(w_p);
    let mut total = F::zero();
    let mut grad = grad;
    for (t, &p) in probs.iter().enumerate() {
        let (term, d) = if targets.is_set(t) {
            let (lp, dlp) = clamped_ln(p);
            (-w_p * lp, -w_p * dlp)
        } else {
            let (lq, dlq) = clamped_ln(F::one() - p);
            (-lq, dlq)
        };
        total += term;
        if let Some((g, scale)) = grad.as_mut() {
            g[t] += *scale * inv_t * d;
        }
    }
    total * inv_t
}

/// Mean over frames of `-w[c_t] ln p_t(c_t)`; `w = 1` when no weights are given.
pub fn cross_entropy<F: Scalar>(
    probs: &Matrix<F>,
    labels: &[ClassId],
    weights: Option<&ClassWeights>,
) -> Result<F> {
    check_labels(probs, labels)?;
    check_weights(weights, probs.cols())?;
    Ok(ce_acc(
        probs,
        labels,
        weights.map(ClassWeights::as_slice),
        None,
    ))
}

pub fn cross_entropy_grad<F: Scalar>(
    probs: &Matrix<F>,
    labels: &[ClassId],
    weights: Option<&ClassWeights>,
) -> Result<(F, Matrix<F>)> {
    check_labels(probs, labels)?;
    check_weights(weights, probs.cols())?;
    let mut g = Matrix::zeros(probs.rows(), probs.cols());
    let v = ce_acc(
        probs,
        labels,
        weights.map(ClassWeights::as_slice),
        Some((g.as_mut_slice(), F::one())),
    );
    Ok((v, g))
}

fn check_weights(weights: Option<&ClassWeights>, num_classes: usize) -> Result<()> {
    match weights {
        Some(w) if w.len() != num_classes => Err(Error::LengthMismatch {
            what: "class weights vs classes",
            left: w.len(),
            right: num_classes,
        }),
        _ => Ok(()),
    }
}

/// Mean over frames of `-(1 - p_t)^gamma ln p_t`.
pub fn focal_loss<F: Scalar>(probs: &Matrix<F>, labels: &[ClassId], gamma: f64) -> Result<F> {
    check_labels(probs, labels)?;
    Ok(focal_acc(probs, labels, gamma, None))
}

pub fn focal_loss_grad<F: Scalar>(
    probs: &Matrix<F>,
    labels: &[ClassId],
    gamma: f64,
) -> Result<(F, Matrix<F>)> {
    check_labels(probs, labels)?;
    let mut g = Matrix::zeros(probs.rows(), probs.cols());
    let v = focal_acc(probs, labels, gamma, Some((g.as_mut_slice(), F::one())));
    Ok((v, g))
}

/// Truncated mean squared error of consecutive log-probabilities, normalized
/// by `T * C`. Zero for sequences shorter than two frames.
pub fn tmse<F: Scalar>(probs: &Matrix<F>, tau: f64) -> F {
    tmse_acc(probs, None, tau, None)
}

pub fn tmse_grad<F: Scalar>(probs: &Matrix<F>, tau: f64) -> (F, Matrix<F>) {
    let mut g = Matrix::zeros(probs.rows(), probs.cols());
    let v = tmse_acc(probs, None, tau, Some((g.as_mut_slice(), F::one())));
    (v, g)
}

fn check_features<F: Scalar>(probs: &Matrix<F>, features: &Matrix<F>) -> Result<()> {
    if probs.rows() != features.rows() {
        return Err(Error::LengthMismatch {
            what: "probability rows vs feature rows",
            left: probs.rows(),
            right: features.rows(),
        });
    }
    Ok(())
}

/// TMSE with each transition weighted by `exp(-|x_t - x_{t-1}|^2 / (2 sigma^2))`.
pub fn gs_tmse<F: Scalar>(
    probs: &Matrix<F>,
    features: &Matrix<F>,
    tau: f64,
    sigma: f64,
) -> Result<F> {
    check_features(probs, features)?;
    let sim = similarity_weights(features, sigma);
    Ok(tmse_acc(probs, Some(&sim), tau, None))
}

pub fn gs_tmse_grad<F: Scalar>(
    probs: &Matrix<F>,
    features: &Matrix<F>,
    tau: f64,
    sigma: f64,
) -> Result<(F, Matrix<F>)> {
    check_features(probs, features)?;
    let sim = similarity_weights(features, sigma);
    let mut g = Matrix::zeros(probs.rows(), probs.cols());
    let v = tmse_acc(probs, Some(&sim), tau, Some((g.as_mut_slice(), F::one())));
    Ok((v, g))
}

fn check_boundary<F>(probs: &[F], targets: &BoundaryMask, w_p: f64) -> Result<()> {
    if probs.len() != targets.len() {
        return Err(Error::LengthMismatch {
            what: "boundary probabilities vs targets",
            left: probs.len(),
            right: targets.len(),
        });
    }
    if probs.is_empty() {
        return Err(Error::EmptySequence);
    }
    if !(w_p > 0.0) {
        return Err(Error::Config(format!("positive weight {w_p} must be > 0")));
    }
    Ok(())
}

/// `(1/T) sum_t -[w_p y_t ln p_t + (1 - y_t) ln(1 - p_t)]`
pub fn weighted_binary_logistic<F: Scalar>(
    probs: &[F],
    targets: &BoundaryMask,
    w_p: f64,
) -> Result<F> {
    check_boundary(probs, targets, w_p)?;
    Ok(bce_acc(probs, targets, w_p, None))
}

pub fn weighted_binary_logistic_grad<F: Scalar>(
    probs: &[F],
    targets: &BoundaryMask,
    w_p: f64,
) -> Result<(F, Vec<F>)> {
    check_boundary(probs, targets, w_p)?;
    let mut g = vec![F::zero(); probs.len()];
    let v = bce_acc(probs, targets, w_p, Some((&mut g, F::one())));
    Ok((v, g))
}

/// Loss components of one video, already averaged over heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Segmentation-branch loss (classification + weighted smoothing).
    pub asb: f64,
    /// Boundary-branch loss before multiplication by lambda.
    pub brb: f64,
    pub classification: f64,
    /// Smoothing term after its multiplier.
    pub smoothing: f64,
}

impl LossBreakdown {
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.total += other.total;
        self.asb += other.asb;
        self.brb += other.brb;
        self.classification += other.classification;
        self.smoothing += other.smoothing;
    }

    pub fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * s,
            asb: self.asb * s,
            brb: self.brb * s,
            classification: self.classification * s,
            smoothing: self.smoothing * s,
        }
    }
}

/// Everything the total loss needs besides the network outputs.
#[derive(Clone, Copy, Debug)]
pub struct LossTargets<'a, F> {
    pub labels: &'a [ClassId],
    pub boundaries: &'a BoundaryMask,
    /// Raw input features, used by the similarity kernel.
    pub features: &'a Matrix<F>,
    pub class_weights: Option<&'a ClassWeights>,
    pub positive_weight: f64,
}

/// `L = mean_i L_as,i + lambda * mean_j L_bl,j` together with the gradient of
/// `L` with respect to every head's probabilities.
pub fn total_loss<F: Scalar>(
    outputs: &Outputs<F>,
    targets: &LossTargets<'_, F>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, HeadGrads<F>)> {
    cfg.validate()?;
    if outputs.asb.is_empty() || outputs.brb.is_empty() {
        return Err(Error::Config(
            "total loss needs at least one head per branch".into(),
        ));
    }
    let weights = match cfg.classification {
        Classification::CeClassWeighted => Some(targets.class_weights.ok_or_else(|| {
            Error::Config("class-weighted cross entropy requires class weights".into())
        })?),
        _ => None,
    };
    let t_len = targets.labels.len();
    for p in &outputs.asb {
        check_labels(p, targets.labels)?;
        check_weights(weights, p.cols())?;
    }
    check_features(&outputs.asb[0], targets.features)?;
    for b in &outputs.brb {
        if b.len() != t_len {
            return Err(Error::LengthMismatch {
                what: "boundary head vs labels",
                left: b.len(),
                right: t_len,
            });
        }
        check_boundary(b, targets.boundaries, targets.positive_weight)?;
    }

    let mut grads = HeadGrads::zeros_like(outputs);
    let mut out = LossBreakdown::default();
    let sim = matches!(cfg.smoothing, Smoothing::GsTmse)
        .then(|| similarity_weights(targets.features, cfg.sigma));
    let head_scale = F::one() / F::of(outputs.asb.len() as f64);
    let smooth_w = cfg.smoothing_weight();

    for (probs, g) in outputs.asb.iter().zip(&mut grads.asb) {
        let g = g.as_mut_slice();
        let cls = match cfg.classification {
            Classification::Ce | Classification::CeClassWeighted => ce_acc(
                probs,
                targets.labels,
                weights.map(ClassWeights::as_slice),
                Some((&mut *g, head_scale)),
            ),
            Classification::Focal => focal_acc(
                probs,
                targets.labels,
                cfg.focal_gamma,
                Some((&mut *g, head_scale)),
            ),
        };
        let smooth = if smooth_w > 0.0 {
            F::of(smooth_w)
                * tmse_acc(
                    probs,
                    sim.as_deref(),
                    cfg.tau,
                    Some((&mut *g, head_scale * F::of(smooth_w))),
                )
        } else {
            F::zero()
        };
        out.classification += cls.as_f64();
        out.smoothing += smooth.as_f64();
    }
    let n_as = outputs.asb.len() as f64;
    out.classification /= n_as;
    out.smoothing /= n_as;
    out.asb = out.classification + out.smoothing;

    let brb_scale = F::of(cfg.lambda_brb / outputs.brb.len() as f64);
    for (probs, g) in outputs.brb.iter().zip(&mut grads.brb) {
        out.brb += bce_acc(
            probs,
            targets.boundaries,
            targets.positive_weight,
            Some((g, brb_scale)),
        )
        .as_f64();
    }
    out.brb /= outputs.brb.len() as f64;
    out.total = out.asb + cfg.lambda_brb * out.brb;
    Ok((out, grads))
}
