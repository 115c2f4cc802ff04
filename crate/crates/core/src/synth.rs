//! Seeded synthetic datasets of piecewise-constant action sequences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{ClassId, ClassMap, Dataset, VideoSample};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub num_videos: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub noise_level: f64,
    pub min_segment: usize,
    pub max_segment: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_videos: 40,
            min_frames: 200,
            max_frames: 400,
            num_classes: 5,
            feature_dim: 8,
            noise_level: 0.3,
            min_segment: 20,
            max_segment: 80,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.num_videos == 0 {
            return fail("num_videos must be at least 1");
        }
        if self.num_classes < 2 {
            return fail("synthetic data needs at least 2 classes");
        }
        if self.feature_dim < 2 {
            return fail("synthetic data needs feature dimension at least 2");
        }
        if self.min_frames < 10 || self.min_frames > self.max_frames {
            return fail("frame range must satisfy 10 <= min_frames <= max_frames");
        }
        if self.min_segment == 0 || self.min_segment > self.max_segment {
            return fail("segment range must satisfy 1 <= min_segment <= max_segment");
        }
        if !(self.noise_level >= 0.0 && self.noise_level.is_finite()) {
            return fail("noise_level must be finite and non-negative");
        }
        Ok(())
    }
}

/// Synthetic dataset plus the class prototypes used to render it.
#[derive(Clone, Debug)]
pub struct SyntheticDataset {
    pub dataset: Dataset,
    pub prototypes: Matrix<f32>,
}

pub fn class_names(num_classes: usize) -> Vec<String> {
    (0..num_classes).map(|c| format!("action_{c}")).collect()
}

/// Random label sequence whose run lengths are drawn from the segment range;
/// adjacent runs always differ in class. The last run is truncated to fit.
fn random_labels(rng: &mut impl Rng, cfg: &SynthConfig, len: usize) -> Vec<ClassId> {
    let mut labels = Vec::with_capacity(len);
    let mut class = rng.random_range(0..cfg.num_classes);
    while labels.len() < len {
        let run = rng.random_range(cfg.min_segment..=cfg.max_segment);
        let run = run.min(len - labels.len());
        labels.extend(std::iter::repeat_n(class, run));
        let step = rng.random_range(1..cfg.num_classes);
        class = (class + step) % cfg.num_classes;
    }
    labels
}

/// Generates `num_videos` videos. Each frame's feature is its class
/// prototype plus isotropic Gaussian noise of standard deviation
/// `noise_level`. Output is a pure function of the config.
pub fn generate_synthetic_dataset(cfg: &SynthConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let proto: Vec<f32> = (0..cfg.num_classes * cfg.feature_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let prototypes = Matrix::from_vec(cfg.num_classes, cfg.feature_dim, proto)?;
    let noise = Normal::new(0.0f32, cfg.noise_level as f32)
        .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;

    let width = (cfg.num_videos.max(2) - 1).to_string().len();
    let mut videos = Vec::with_capacity(cfg.num_videos);
    for v in 0..cfg.num_videos {
        let len = rng.random_range(cfg.min_frames..=cfg.max_frames);
        let labels = random_labels(&mut rng, cfg, len);
        let mut features = Matrix::zeros(len, cfg.feature_dim);
        for (t, &c) in labels.iter().enumerate() {
            for (x, &p) in features.row_mut(t).iter_mut().zip(prototypes.row(c)) {
                *x = p + if cfg.noise_level > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
            }
        }
        videos.push(VideoSample::new(
            format!("synth_{v:0width$}"),
            features,
            labels,
            cfg.num_classes,
        )?);
    }
    let classes = ClassMap::new(class_names(cfg.num_classes))?;
    Ok(SyntheticDataset {
        dataset: Dataset::new(classes, videos)?,
        prototypes,
    })
}
