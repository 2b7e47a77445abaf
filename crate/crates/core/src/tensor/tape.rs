use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct BackwardCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub tape: &'a Tape<T>,
    /// Per-parent flag: does that parent want a gradient?
    pub needs: &'a [bool],
}

impl<T: Scalar> BackwardCtx<'_, T> {
    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }
}

type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    requires_grad: bool,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of a forward computation.
///
/// Every op validates shapes, computes its value eagerly and, when any input
/// requires a gradient, stores a closure mapping the output gradient to input
/// gradients. Values are never mutated once recorded.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), grad_enabled: true }
    }

    /// A tape that never records backward closures (inference).
    pub fn no_grad() -> Self {
        Self { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf("constant", value, false)
    }

    /// Differentiable input (a parameter or a checked input).
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        let rg = self.grad_enabled;
        self.push_leaf("param", value, rg)
    }

    fn push_leaf(&mut self, op: &'static str, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { op, value, requires_grad, parents: Vec::new(), backward: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op
    }

    /// Moves a value out of the tape; the node keeps an empty placeholder.
    pub fn take_value(&mut self, v: Var) -> Tensor<T> {
        let node = &mut self.nodes[v.0];
        let shape = node.value.shape().to_vec();
        let data = std::mem::take(&mut node.value.data);
        Tensor { shape, data }
    }

    pub(crate) fn push<F>(
        &mut self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[Var],
        backward: F,
    ) -> Result<Var>
    where
        F: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>> + 'static,
    {
        if !value.all_finite() {
            return Err(Error::NonFinite(op));
        }
        let requires_grad = self.grad_enabled && parents.iter().any(|&p| self.requires_grad(p));
        let backward: Option<BackwardFn<T>> =
            if requires_grad { Some(Box::new(backward)) } else { None };
        self.nodes.push(Node { op, value, requires_grad, parents: parents.to_vec(), backward });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse pass from a single-element root.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let shape = self.shape(root);
        if shape.iter().product::<usize>() != 1 {
            return Err(Error::shape("backward", format!("root must hold one value, got {shape:?}")));
        }
        self.backward_with(root, Tensor::full(shape, T::one()))
    }

    /// Reverse pass seeded with an explicit output gradient.
    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        super::same_shape("backward", self.shape(root), seed.shape())?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = &node.backward else { continue };
            let Some(grad) = grads[i].take() else { continue };
            let needs: Vec<bool> = node.parents.iter().map(|&p| self.requires_grad(p)).collect();
            let ctx = BackwardCtx { grad: &grad, tape: self, needs: &needs };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}: arity", node.op);
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !self.requires_grad(p) {
                    continue;
                }
                debug_assert_eq!(g.shape(), self.shape(p), "{}: grad shape", node.op);
                match &mut grads[p.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Gradients of the leaves reached by a reverse pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
