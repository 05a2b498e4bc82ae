//! Named parameters and the primitive layers built on the tape.
//!
//! Layers only describe shapes and parameter names; values live in a
//! [`ParamStore`]. A [`Binder`] puts the parameters on a tape for one
//! forward pass and later collects their gradients in store order.

use std::cell::RefCell;
use std::collections::HashMap;

use indexmap::IndexMap;
use lumafix_autograd::{Gradients, Tape, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};

/// Ordered table of named parameter tensors. Iteration order is insertion
/// order, which is also the checkpoint order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Model(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.get_index_of(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.values_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zeros_like(&self) -> ParamGrads {
        ParamGrads {
            grads: self.params.values().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }
}

/// Gradients aligned with a [`ParamStore`]'s order.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub grads: Vec<Tensor>,
}

impl ParamGrads {
    pub fn accumulate(&mut self, other: &ParamGrads, scale: f64) -> Result<()> {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            a.axpy(scale, b)?;
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for g in &mut self.grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// Places parameters on a tape on first use.
pub struct Binder<'t, 'p> {
    tape: &'t Tape,
    store: &'p ParamStore,
    bound: RefCell<HashMap<usize, Var<'t>>>,
}

impl<'t, 'p> Binder<'t, 'p> {
    pub fn new(tape: &'t Tape, store: &'p ParamStore) -> Self {
        Self {
            tape,
            store,
            bound: RefCell::new(HashMap::new()),
        }
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn param(&self, name: &str) -> Result<Var<'t>> {
        let idx = self
            .store
            .index_of(name)
            .ok_or_else(|| Error::Model(format!("missing parameter `{name}`")))?;
        let mut bound = self.bound.borrow_mut();
        if let Some(v) = bound.get(&idx) {
            return Ok(*v);
        }
        let var = self.tape.leaf(self.store.get(name).expect("indexed").clone());
        bound.insert(idx, var);
        Ok(var)
    }

    pub fn constant(&self, t: Tensor) -> Var<'t> {
        self.tape.constant(t)
    }

    /// Gradients for every parameter; unused ones are zero.
    pub fn collect(&self, grads: &Gradients) -> ParamGrads {
        let bound = self.bound.borrow();
        let grads = self
            .store
            .iter()
            .enumerate()
            .map(|(i, (_, t))| {
                bound
                    .get(&i)
                    .and_then(|v| grads.get(*v).cloned())
                    .unwrap_or_else(|| Tensor::zeros(t.shape()))
            })
            .collect();
        ParamGrads { grads }
    }
}

/// Something that owns parameters under a name prefix.
pub trait Module {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()>;
}

fn uniform(shape: &[usize], fan_in: usize, rng: &mut dyn rand::RngCore) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data).expect("sized")
}

/// `y = x W + b` on token rows; `W` is `(in, out)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, input: usize, output: usize) -> Self {
        Self {
            name: name.into(),
            input,
            output,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.linear(b.param(&self.weight_name())?, b.param(&self.bias_name())?)?)
    }
}

impl Module for Linear {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        store.insert(self.weight_name(), uniform(&[self.input, self.output], self.input, rng))?;
        store.insert(self.bias_name(), Tensor::zeros(&[self.output]))
    }
}

/// Dense 2-D convolution on `(C, H, W)` features.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Stride 1 with "same" padding.
    pub fn same(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            in_ch,
            out_ch,
            kernel,
            stride: 1,
            pad: kernel / 2,
        }
    }

    pub fn strided(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Self {
            stride,
            ..Self::same(name, in_ch, out_ch, kernel)
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.conv2d(
            b.param(&self.weight_name())?,
            b.param(&self.bias_name())?,
            self.stride,
            self.pad,
        )?)
    }
}

impl Module for Conv2d {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        let fan_in = self.in_ch * self.kernel * self.kernel;
        store.insert(
            self.weight_name(),
            uniform(&[self.out_ch, self.in_ch, self.kernel, self.kernel], fan_in, rng),
        )?;
        store.insert(self.bias_name(), Tensor::zeros(&[self.out_ch]))
    }
}

/// Channel-preserving per-channel convolution with "same" padding.
#[derive(Clone, Debug)]
pub struct DepthwiseConv2d {
    pub name: String,
    pub channels: usize,
    pub kernel: usize,
}

impl DepthwiseConv2d {
    pub fn new(name: impl Into<String>, channels: usize, kernel: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            kernel,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.depthwise_conv2d(b.param(&self.weight_name())?, b.param(&self.bias_name())?)?)
    }
}

impl Module for DepthwiseConv2d {
    fn init(&self, store: &mut ParamStore, rng: &mut dyn rand::RngCore) -> Result<()> {
        store.insert(
            self.weight_name(),
            uniform(
                &[self.channels, 1, self.kernel, self.kernel],
                self.kernel * self.kernel,
                rng,
            ),
        )?;
        store.insert(self.bias_name(), Tensor::zeros(&[self.channels]))
    }
}

/// Normalisation over the channel dimension of token rows.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub name: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim }
    }

    pub fn forward<'t>(&self, b: &Binder<'t, '_>, x: Var<'t>) -> Result<Var<'t>> {
        Ok(x.layer_norm_rows(
            b.param(&format!("{}.gamma", self.name))?,
            b.param(&format!("{}.beta", self.name))?,
        )?)
    }
}

impl Module for LayerNorm {
    fn init(&self, store: &mut ParamStore, _rng: &mut dyn rand::RngCore) -> Result<()> {
        store.insert(format!("{}.gamma", self.name), Tensor::full(&[self.dim], 1.0))?;
        store.insert(format!("{}.beta", self.name), Tensor::zeros(&[self.dim]))
    }
}

/// `(C, H, W)` features to `(H*W, C)` token rows.
pub fn to_tokens(x: Var<'_>) -> Result<Var<'_>> {
    let s = x.shape();
    let (c, hw) = (s[0], s[1] * s[2]);
    Ok(x.reshape(&[c, hw])?.transpose()?)
}

/// Inverse of [`to_tokens`].
pub fn from_tokens(x: Var<'_>, h: usize, w: usize) -> Result<Var<'_>> {
    let c = x.shape()[1];
    Ok(x.transpose()?.reshape(&[c, h, w])?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(&[1])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[1])).is_err());
    }

    #[test]
    fn binder_reuses_leaf_and_collects_in_order() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let lin = Linear::new("fc", 2, 3);
        lin.init(&mut store, &mut rng).unwrap();
        store.insert("unused", Tensor::zeros(&[4])).unwrap();
        let tape = Tape::new();
        let b = Binder::new(&tape, &store);
        let x = tape.constant(Tensor::full(&[1, 2], 1.0));
        let y = lin.forward(&b, x).unwrap().add(lin.forward(&b, x).unwrap()).unwrap();
        let g = b.collect(&tape.backward(y.sum_all()).unwrap());
        assert_eq!(g.grads.len(), 3);
        // each use contributes x^T = ones to the weight gradient
        assert!(g.grads[0].data().iter().all(|&v| v == 2.0));
        assert_eq!(g.grads[1].data(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.grads[2].data(), &[0.0; 4]);
    }

    #[test]
    fn tokens_round_trip() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[2, 2, 3], (0..12).map(f64::from).collect()).unwrap());
        let t = to_tokens(x).unwrap();
        assert_eq!(t.shape(), vec![6, 2]);
        assert_eq!(&t.value().data()[..4], &[0.0, 6.0, 1.0, 7.0]);
        assert_eq!(*from_tokens(t, 2, 3).unwrap().value(), *x.value());
    }
}
