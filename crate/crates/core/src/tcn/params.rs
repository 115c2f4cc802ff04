use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;

/// Index of a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// A named learnable tensor with a same-shaped gradient buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<F> {
    pub name: String,
    pub dims: Vec<usize>,
    pub value: Vec<F>,
    pub grad: Vec<F>,
    /// Fan-in used for initialization; zero marks a bias.
    pub(crate) fan_in: usize,
}

impl<F: Scalar> Param<F> {
    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn is_bias(&self) -> bool {
        self.fan_in == 0
    }
}

/// Flat list of every weight and bias in a model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<F> {
    params: Vec<Param<F>>,
}

impl<F: Scalar> ParamStore<F> {
    pub(crate) fn add(&mut self, name: String, dims: Vec<usize>, fan_in: usize) -> ParamId {
        let n = dims.iter().product();
        self.params.push(Param {
            name,
            dims,
            value: vec![F::zero(); n],
            grad: vec![F::zero(); n],
            fan_in,
        });
        ParamId(self.params.len() - 1)
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &Param<F> {
        &self.params[id.0]
    }

    #[inline]
    pub(crate) fn get_mut(&mut self, id: ParamId) -> &mut Param<F> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<F>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<F>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<&Param<F>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn scale_grad(&mut self, s: F) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g *= s);
        }
    }

    /// Uniform weights in `±1/sqrt(fan_in)`, zero biases.
    pub fn initialize(&mut self, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            if p.is_bias() {
                p.value.iter_mut().for_each(|v| *v = F::zero());
            } else {
                let bound = 1.0 / (p.fan_in as f64).sqrt();
                for v in &mut p.value {
                    *v = F::of(rng.random_range(-bound..bound));
                }
            }
            p.grad.iter_mut().for_each(|g| *g = F::zero());
        }
    }

    pub fn cast<G: Scalar>(&self) -> ParamStore<G> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    dims: p.dims.clone(),
                    value: p.value.iter().map(|v| G::of(v.as_f64())).collect(),
                    grad: p.grad.iter().map(|v| G::of(v.as_f64())).collect(),
                    fan_in: p.fan_in,
                })
                .collect(),
        }
    }

    /// Reads scalar `i` of the flattened parameter vector.
    pub fn flat_value(&self, mut i: usize) -> F {
        for p in &self.params {
            if i < p.len() {
                return p.value[i];
            }
            i -= p.len();
        }
        panic!("flat parameter index out of range")
    }

    pub fn set_flat_value(&mut self, mut i: usize, v: F) {
        for p in &mut self.params {
            if i < p.len() {
                p.value[i] = v;
                return;
            }
            i -= p.len();
        }
        panic!("flat parameter index out of range")
    }

    pub fn flat_grads(&self) -> Vec<F> {
        self.params
            .iter()
            .flat_map(|p| p.grad.iter().copied())
            .collect()
    }

    pub fn flat_values(&self) -> Vec<F> {
        self.params
            .iter()
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }
}
