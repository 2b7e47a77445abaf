use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{BnState, Scalar, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BnId(usize);

impl BnId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Role of a parameter; decides whether weight decay applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
    LayerScale,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

/// Flat, ordered parameter tree keyed by dotted path names, plus the
/// batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    tensors: Vec<Tensor<T>>,
    bn_names: Vec<String>,
    bn: Vec<BnState<T>>,
}

impl<T: Scalar> ParamStore<T> {
    fn empty() -> Self {
        Self { names: vec![], kinds: vec![], tensors: vec![], bn_names: vec![], bn: vec![] }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total trainable scalars.
    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, ParamKind, &Tensor<T>)> {
        self.names.iter().zip(&self.kinds).zip(&self.tensors).map(|((n, &k), t)| (n.as_str(), k, t))
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn bn_states(&self) -> &[BnState<T>] {
        &self.bn
    }

    pub fn bn_states_mut(&mut self) -> &mut [BnState<T>] {
        &mut self.bn
    }

    pub fn bn_names(&self) -> &[String] {
        &self.bn_names
    }

    /// Registers every parameter on `tape` (differentiable iff the tape records gradients).
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Same layout, converted element type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            kinds: self.kinds.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            bn_names: self.bn_names.clone(),
            bn: self
                .bn
                .iter()
                .map(|s| BnState { running_mean: s.running_mean.cast(), running_var: s.running_var.cast() })
                .collect(),
        }
    }

    /// Scalar count per leading path segment (`stem`, `cross`, `self`, ...).
    pub fn count_by_component(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (name, _, t) in self.iter() {
            let comp = component_of(name);
            match out.iter_mut().find(|(c, _)| c == comp) {
                Some((_, n)) => *n += t.len(),
                None => out.push((comp.to_string(), t.len())),
            }
        }
        out
    }

    /// Overwrites values from `other` after checking that layouts agree.
    pub fn copy_from(&mut self, other: &ParamStore<T>) -> Result<()> {
        if self.names != other.names || self.bn_names != other.bn_names {
            return Err(Error::Config("parameter layouts differ".into()));
        }
        for (dst, src) in self.tensors.iter_mut().zip(&other.tensors) {
            if dst.shape() != src.shape() {
                return Err(Error::Config("parameter shapes differ".into()));
            }
            dst.clone_from(src);
        }
        self.bn.clone_from(&other.bn);
        Ok(())
    }
}

/// `self.3.fusion.gate.weight` → `self`.
pub(crate) fn component_of(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

/// Registers parameters with deterministic initialization.
///
/// Conv/linear weights are Kaiming-uniform over fan-in (bound `√(6/fan_in)`),
/// biases zero, norm affine `(1, 0)`, layer scales a constant.
pub struct ParamBuilder<'r, T> {
    store: ParamStore<T>,
    rng: &'r mut ChaCha8Rng,
}

impl<'r, T: Scalar> ParamBuilder<'r, T> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        Self { store: ParamStore::empty(), rng }
    }

    fn push(&mut self, name: String, kind: ParamKind, t: Tensor<T>) -> ParamId {
        debug_assert!(!self.store.names.contains(&name), "duplicate parameter {name}");
        self.store.names.push(name);
        self.store.kinds.push(kind);
        self.store.tensors.push(t);
        ParamId(self.store.tensors.len() - 1)
    }

    pub fn kaiming(&mut self, name: impl Into<String>, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = (6.0 / fan_in as f64).sqrt();
        let rng = &mut *self.rng;
        let t = Tensor::from_fn(shape, |_| T::from_f64(rng.random_range(-bound..bound)));
        self.push(name.into(), ParamKind::Weight, t)
    }

    pub fn zeros(&mut self, name: impl Into<String>, n: usize) -> ParamId {
        self.push(name.into(), ParamKind::Bias, Tensor::zeros(&[n]))
    }

    pub fn norm_affine(&mut self, prefix: &str, c: usize) -> (ParamId, ParamId) {
        let g = self.push(format!("{prefix}.gamma"), ParamKind::Norm, Tensor::full(&[c], T::one()));
        let b = self.push(format!("{prefix}.beta"), ParamKind::Norm, Tensor::zeros(&[c]));
        (g, b)
    }

    pub fn layer_scale(&mut self, name: impl Into<String>, c: usize, init: f64) -> ParamId {
        self.push(name.into(), ParamKind::LayerScale, Tensor::full(&[c], T::from_f64(init)))
    }

    pub fn bn_state(&mut self, name: impl Into<String>, c: usize) -> BnId {
        self.store.bn_names.push(name.into());
        self.store.bn.push(BnState::new(c));
        BnId(self.store.bn.len() - 1)
    }

    pub fn finish(self) -> ParamStore<T> {
        self.store
    }
}
