//! The two-branch dilated temporal convolutional network.
//!
//! A shared extractor (pointwise entry conv followed by dilated residual
//! layers) produces frame features. The segmentation branch maps them to
//! class probabilities with a pointwise conv and softmax, then refines them
//! through a chain of stages; the boundary branch does the same with a
//! single sigmoid channel. Each refinement stage reads the previous stage's
//! probabilities.

pub mod checkpoint;
pub mod conv;
pub mod params;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub use conv::{conv1d_forward, ConvSpec};
pub use params::{Param, ParamId, ParamStore};

/// Network shape. Defaults follow the published architecture: 64 channels,
/// 10 residual layers per stage, 3 refinement stages per branch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub num_classes: usize,
    #[serde(default = "defaults::channels")]
    pub channels: usize,
    #[serde(default = "defaults::layers")]
    pub layers: usize,
    #[serde(default = "defaults::stages")]
    pub asb_stages: usize,
    #[serde(default = "defaults::stages")]
    pub brb_stages: usize,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
}

mod defaults {
    pub fn channels() -> usize {
        64
    }
    pub fn layers() -> usize {
        10
    }
    pub fn stages() -> usize {
        3
    }
    pub fn dropout() -> f64 {
        0.5
    }
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            num_classes,
            channels: defaults::channels(),
            layers: defaults::layers(),
            asb_stages: defaults::stages(),
            brb_stages: defaults::stages(),
            dropout: defaults::dropout(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.num_classes == 0 || self.channels == 0 {
            return Err(Error::Config(
                "input_dim, num_classes and channels must be positive".into(),
            ));
        }
        if self.layers > 30 {
            return Err(Error::Config(format!(
                "{} layers overflow the dilation range",
                self.layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Number of segmentation heads (initial prediction plus refinements).
    pub fn asb_heads(&self) -> usize {
        self.asb_stages + 1
    }

    pub fn brb_heads(&self) -> usize {
        self.brb_stages + 1
    }

    /// Frames visible to one output frame of a single stage.
    pub fn stage_receptive_field(&self) -> usize {
        1 + 2 * ((1usize << self.layers) - 1)
    }
}

#[derive(Clone, Debug)]
struct ConvLayer {
    spec: ConvSpec,
    weight: ParamId,
    bias: ParamId,
}

impl ConvLayer {
    fn new<F: Scalar>(store: &mut ParamStore<F>, name: &str, spec: ConvSpec) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            vec![spec.kernel_size, spec.out_channels, spec.in_channels],
            spec.fan_in(),
        );
        let bias = store.add(format!("{name}.bias"), vec![spec.out_channels], 0);
        Self { spec, weight, bias }
    }

    fn forward<F: Scalar>(&self, p: &ParamStore<F>, x: &Matrix<F>) -> Matrix<F> {
        conv::forward(
            &self.spec,
            x,
            &p.get(self.weight).value,
            &p.get(self.bias).value,
        )
    }

    fn backward<F: Scalar>(
        &self,
        p: &mut ParamStore<F>,
        x: &Matrix<F>,
        g: &Matrix<F>,
    ) -> Matrix<F> {
        let w = std::mem::take(&mut p.get_mut(self.weight).value);
        let mut gw = std::mem::take(&mut p.get_mut(self.weight).grad);
        let mut gb = std::mem::take(&mut p.get_mut(self.bias).grad);
        let gx = conv::backward(&self.spec, x, g, &w, &mut gw, &mut gb);
        let wp = p.get_mut(self.weight);
        wp.value = w;
        wp.grad = gw;
        p.get_mut(self.bias).grad = gb;
        gx
    }
}

/// `out = x + dropout(pointwise(relu(dilated(x))))`
#[derive(Clone, Debug)]
struct Residual {
    dilated: ConvLayer,
    pointwise: ConvLayer,
}

#[derive(Clone, Debug)]
struct ResidualTrace<F> {
    input: Matrix<F>,
    pre: Matrix<F>,
    act: Matrix<F>,
    mask: Option<Vec<F>>,
}

/// Entry pointwise conv followed by dilated residual layers.
#[derive(Clone, Debug)]
struct Trunk {
    entry: ConvLayer,
    layers: Vec<Residual>,
}

#[derive(Clone, Debug)]
struct TrunkTrace<F> {
    input: Matrix<F>,
    layers: Vec<ResidualTrace<F>>,
    output: Matrix<F>,
}

impl Trunk {
    fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        in_ch: usize,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let ch = cfg.channels;
        let entry = ConvLayer::new(
            store,
            &format!("{name}.entry"),
            ConvSpec::pointwise(in_ch, ch)?,
        );
        let layers = (0..cfg.layers)
            .map(|i| {
                Ok(Residual {
                    dilated: ConvLayer::new(
                        store,
                        &format!("{name}.layers.{i}.dilated"),
                        ConvSpec::new(ch, ch, 3, 1 << i)?,
                    ),
                    pointwise: ConvLayer::new(
                        store,
                        &format!("{name}.layers.{i}.pointwise"),
                        ConvSpec::pointwise(ch, ch)?,
                    ),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entry, layers })
    }

    fn forward<F: Scalar, R: RngCore + ?Sized>(
        &self,
        p: &ParamStore<F>,
        input: &Matrix<F>,
        mut rng: Option<&mut R>,
        rate: f64,
        record: bool,
    ) -> (Matrix<F>, Option<TrunkTrace<F>>) {
        let mut x = self.entry.forward(p, input);
        let mut traces = Vec::new();
        for layer in &self.layers {
            let pre = layer.dilated.forward(p, &x);
            let act = pre.map(|v| v.max(F::zero()));
            let mut h = layer.pointwise.forward(p, &act);
            let mask = match rng.as_deref_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = F::of(1.0 / (1.0 - rate));
                    let m: Vec<F> = (0..h.as_slice().len())
                        .map(|_| {
                            if rng.random::<f64>() < rate {
                                F::zero()
                            } else {
                                keep
                            }
                        })
                        .collect();
                    for (v, &k) in h.as_mut_slice().iter_mut().zip(&m) {
                        *v *= k;
                    }
                    Some(m)
                }
                _ => None,
            };
            h.add_assign(&x);
            if record {
                traces.push(ResidualTrace {
                    input: x,
                    pre,
                    act,
                    mask,
                });
            }
            x = h;
        }
        let trace = record.then(|| TrunkTrace {
            input: input.clone(),
            layers: traces,
            output: x.clone(),
        });
        (x, trace)
    }

    /// Returns the gradient with respect to the trunk input.
    fn backward<F: Scalar>(
        &self,
        p: &mut ParamStore<F>,
        trace: &TrunkTrace<F>,
        grad_out: Matrix<F>,
    ) -> Matrix<F> {
        let mut g = grad_out;
        for (layer, tr) in self.layers.iter().zip(&trace.layers).rev() {
            let mut gh = g.clone();
            if let Some(mask) = &tr.mask {
                for (v, &k) in gh.as_mut_slice().iter_mut().zip(mask) {
                    *v *= k;
                }
            }
            let mut ga = layer.pointwise.backward(p, &tr.act, &gh);
            for (v, &pre) in ga.as_mut_slice().iter_mut().zip(tr.pre.as_slice()) {
                if pre <= F::zero() {
                    *v = F::zero();
                }
            }
            let gx = layer.dilated.backward(p, &tr.input, &ga);
            g.add_assign(&gx);
        }
        self.entry.backward(p, &trace.input, &g)
    }
}

#[derive(Clone, Debug)]
struct Stage {
    trunk: Trunk,
    exit: ConvLayer,
}

/// Which squashing a branch applies to its logits.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Head {
    Softmax,
    Sigmoid,
}

impl Head {
    fn apply<F: Scalar>(self, mut z: Matrix<F>) -> Matrix<F> {
        match self {
            Head::Softmax => {
                let cols = z.cols();
                for row in z.as_mut_slice().chunks_exact_mut(cols) {
                    softmax_in_place(row);
                }
                z
            }
            Head::Sigmoid => z.map(sigmoid),
        }
    }

    /// Gradient with respect to logits given the gradient with respect to
    /// probabilities.
    fn backward<F: Scalar>(self, probs: &Matrix<F>, g: &Matrix<F>) -> Matrix<F> {
        match self {
            Head::Softmax => {
                let mut out = g.clone();
                let cols = probs.cols();
                for (orow, prow) in out
                    .as_mut_slice()
                    .chunks_exact_mut(cols)
                    .zip(probs.iter_rows())
                {
                    let s: F = orow.iter().zip(prow).map(|(&a, &b)| a * b).sum();
                    for (o, &pv) in orow.iter_mut().zip(prow) {
                        *o = pv * (*o - s);
                    }
                }
                out
            }
            Head::Sigmoid => {
                let mut out = g.clone();
                for (o, &pv) in out.as_mut_slice().iter_mut().zip(probs.as_slice()) {
                    *o *= pv * (F::one() - pv);
                }
                out
            }
        }
    }
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

#[inline]
pub(crate) fn sigmoid<F: Scalar>(z: F) -> F {
    if z >= F::zero() {
        F::one() / (F::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (F::one() + e)
    }
}

/// Initial pointwise head plus refinement stages.
#[derive(Clone, Debug)]
struct Branch {
    head: ConvLayer,
    stages: Vec<Stage>,
    kind: Head,
}

#[derive(Clone, Debug)]
struct BranchTrace<F> {
    stages: Vec<TrunkTrace<F>>,
    probs: Vec<Matrix<F>>,
}

impl Branch {
    fn new<F: Scalar>(
        store: &mut ParamStore<F>,
        name: &str,
        out_ch: usize,
        stages: usize,
        kind: Head,
        cfg: &ModelConfig,
    ) -> Result<Self> {
        let head = ConvLayer::new(
            store,
            &format!("{name}.head"),
            ConvSpec::pointwise(cfg.channels, out_ch)?,
        );
        let stages = (0..stages)
            .map(|s| {
                let prefix = format!("{name}.stages.{s}");
                let trunk = Trunk::new(store, &prefix, out_ch, cfg)?;
                let exit = ConvLayer::new(
                    store,
                    &format!("{prefix}.exit"),
                    ConvSpec::pointwise(cfg.channels, out_ch)?,
                );
                Ok(Stage { trunk, exit })
            })
            .collect::<Result<_>>()?;
        Ok(Self { head, stages, kind })
    }

    fn forward<F: Scalar, R: RngCore + ?Sized>(
        &self,
        p: &ParamStore<F>,
        shared: &Matrix<F>,
        mut rng: Option<&mut R>,
        rate: f64,
        record: bool,
    ) -> (Vec<Matrix<F>>, Vec<TrunkTrace<F>>) {
        let mut probs = vec![self.kind.apply(self.head.forward(p, shared))];
        let mut traces = Vec::new();
        for stage in &self.stages {
            let prev = probs.last().expect("head output");
            let (h, tr) = stage
                .trunk
                .forward(p, prev, rng.as_deref_mut(), rate, record);
            probs.push(self.kind.apply(stage.exit.forward(p, &h)));
            traces.extend(tr);
        }
        (probs, traces)
    }

    /// Returns the gradient with respect to the shared features.
    fn backward<F: Scalar>(
        &self,
        p: &mut ParamStore<F>,
        shared: &Matrix<F>,
        trace: &BranchTrace<F>,
        head_grads: &[Matrix<F>],
    ) -> Matrix<F> {
        let mut carry: Option<Matrix<F>> = None;
        for i in (0..trace.probs.len()).rev() {
            let mut g = head_grads[i].clone();
            if let Some(c) = carry.take() {
                g.add_assign(&c);
            }
            let gz = self.kind.backward(&trace.probs[i], &g);
            if i == 0 {
                return self.head.backward(p, shared, &gz);
            }
            let stage = &self.stages[i - 1];
            let st = &trace.stages[i - 1];
            let gh = stage.exit.backward(p, &st.output, &gz);
            carry = Some(stage.trunk.backward(p, st, gh));
        }
        unreachable!("branch always has a head")
    }
}

/// Per-head probabilities produced by one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs<F> {
    /// Segmentation heads, each `T x C` with rows summing to one.
    pub asb: Vec<Matrix<F>>,
    /// Boundary heads, each of length `T` with values in `(0, 1)`.
    pub brb: Vec<Vec<F>>,
}

impl<F: Scalar> Outputs<F> {
    pub fn final_asb(&self) -> &Matrix<F> {
        self.asb.last().expect("at least one segmentation head")
    }

    pub fn final_brb(&self) -> &[F] {
        self.brb.last().expect("at least one boundary head")
    }

    pub fn len(&self) -> usize {
        self.final_asb().rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cast<G: Scalar>(&self) -> Outputs<G> {
        Outputs {
            asb: self.asb.iter().map(Matrix::cast).collect(),
            brb: self
                .brb
                .iter()
                .map(|v| v.iter().map(|x| G::of(x.as_f64())).collect())
                .collect(),
        }
    }
}

/// Loss gradients with respect to each head's probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadGrads<F> {
    pub asb: Vec<Matrix<F>>,
    pub brb: Vec<Vec<F>>,
}

impl<F: Scalar> HeadGrads<F> {
    pub fn zeros_like(out: &Outputs<F>) -> Self {
        Self {
            asb: out
                .asb
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
            brb: out.brb.iter().map(|v| vec![F::zero(); v.len()]).collect(),
        }
    }
}

#[derive(Clone, Debug)]
struct Trace<F> {
    extractor: TrunkTrace<F>,
    asb: BranchTrace<F>,
    brb: BranchTrace<F>,
}

/// The full network and its parameters.
#[derive(Clone, Debug)]
pub struct AsrfModel<F> {
    config: ModelConfig,
    params: ParamStore<F>,
    extractor: Trunk,
    asb: Branch,
    brb: Branch,
    trace: Option<Trace<F>>,
}

impl<F: Scalar> AsrfModel<F> {
    /// Builds the network with all parameters zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let extractor = Trunk::new(&mut params, "extractor", config.input_dim, &config)?;
        let asb = Branch::new(
            &mut params,
            "asb",
            config.num_classes,
            config.asb_stages,
            Head::Softmax,
            &config,
        )?;
        let brb = Branch::new(
            &mut params,
            "brb",
            1,
            config.brb_stages,
            Head::Sigmoid,
            &config,
        )?;
        Ok(Self {
            config,
            params,
            extractor,
            asb,
            brb,
            trace: None,
        })
    }

    /// Builds the network with seeded fan-in-scaled uniform weights and zero biases.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config)?;
        m.init_parameters(seed);
        Ok(m)
    }

    pub fn init_parameters(&mut self, seed: u64) {
        self.params.initialize(seed);
        self.trace = None;
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn zero_grad(&mut self) {
        self.params.zero_grad();
    }

    fn check_input(&self, features: &Matrix<F>) -> Result<()> {
        if features.rows() == 0 {
            return Err(Error::EmptySequence);
        }
        if features.cols() != self.config.input_dim {
            return Err(Error::Shape(format!(
                "features have dimension {}, model expects {}",
                features.cols(),
                self.config.input_dim
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        features: &Matrix<F>,
        mut rng: Option<&mut dyn RngCore>,
        record: bool,
    ) -> Result<(Outputs<F>, Option<Trace<F>>)> {
        self.check_input(features)?;
        let rate = self.config.dropout;
        let (shared, ext_trace) =
            self.extractor
                .forward(&self.params, features, rng.as_deref_mut(), rate, record);
        let (asb_probs, asb_traces) =
            self.asb
                .forward(&self.params, &shared, rng.as_deref_mut(), rate, record);
        let (brb_probs, brb_traces) = self.brb.forward(&self.params, &shared, rng, rate, record);

        let outputs = Outputs {
            asb: asb_probs.clone(),
            brb: brb_probs.iter().map(|m| m.as_slice().to_vec()).collect(),
        };
        let trace = ext_trace.map(|extractor| Trace {
            extractor,
            asb: BranchTrace {
                stages: asb_traces,
                probs: asb_probs,
            },
            brb: BranchTrace {
                stages: brb_traces,
                probs: brb_probs,
            },
        });
        Ok((outputs, trace))
    }

    /// Inference: dropout off, nothing recorded. Safe to call concurrently.
    pub fn predict(&self, features: &Matrix<F>) -> Result<Outputs<F>> {
        Ok(self.run(features, None, false)?.0)
    }

    /// Forward pass that records activations for [`backward`](Self::backward).
    /// Dropout is applied when `rng` is given.
    pub fn forward(
        &mut self,
        features: &Matrix<F>,
        rng: Option<&mut dyn RngCore>,
    ) -> Result<Outputs<F>> {
        self.trace = None;
        let (out, trace) = self.run(features, rng, true)?;
        self.trace = trace;
        Ok(out)
    }

    /// Accumulates parameter gradients for the most recent [`forward`](Self::forward).
    /// The recorded activations are consumed.
    pub fn backward(&mut self, grads: &HeadGrads<F>) -> Result<()> {
        let trace = self.trace.take().ok_or(Error::NoForwardState)?;
        let t = trace.extractor.output.rows();
        if grads.asb.len() != trace.asb.probs.len() || grads.brb.len() != trace.brb.probs.len() {
            return Err(Error::Shape(format!(
                "expected {}+{} head gradients, got {}+{}",
                trace.asb.probs.len(),
                trace.brb.probs.len(),
                grads.asb.len(),
                grads.brb.len()
            )));
        }
        let c = self.config.num_classes;
        if grads.asb.iter().any(|g| g.rows() != t || g.cols() != c)
            || grads.brb.iter().any(|g| g.len() != t)
        {
            return Err(Error::Shape(
                "head gradient shape does not match forward outputs".into(),
            ));
        }
        let brb_grads: Vec<Matrix<F>> = grads.brb.iter().map(|g| Matrix::column(g)).collect();
        let shared = &trace.extractor.output;
        let mut g_shared = self
            .asb
            .backward(&mut self.params, shared, &trace.asb, &grads.asb);
        let g_brb = self
            .brb
            .backward(&mut self.params, shared, &trace.brb, &brb_grads);
        g_shared.add_assign(&g_brb);
        self.extractor
            .backward(&mut self.params, &trace.extractor, g_shared);
        Ok(())
    }

    /// Copy in another float width (e.g. `f64` for gradient checks).
    pub fn cast<G: Scalar>(&self) -> AsrfModel<G> {
        AsrfModel {
            config: self.config.clone(),
            params: self.params.cast(),
            extractor: self.extractor.clone(),
            asb: self.asb.clone(),
            brb: self.brb.clone(),
            trace: None,
        }
    }
}
