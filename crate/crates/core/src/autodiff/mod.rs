//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation of one forward pass. Each recorded node
//! owns its value and, when gradients are tracked, a backward closure mapping
//! the output gradient to one gradient per parent. Node ids grow in creation
//! order, so reverse id order is a valid reverse topological order.

mod ops;
pub mod gradcheck;

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub use ops::BinaryOp;

/// Maps `(grad_out, parent_values, out_value)` to one gradient per parent.
pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&Tensor<T>, &[Rc<Tensor<T>>], &Tensor<T>) -> Vec<Tensor<T>>>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Recording context for one forward (and backward) pass.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Vec<Option<Tensor<T>>>>,
    recording: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()), grads: RefCell::new(Vec::new()), recording: true }
    }

    /// A tape that evaluates values only; `backward` on it is an error.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input (parameter or probed activation).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Vec::new(), None, self.recording)
    }

    /// Input that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_node(value, Vec::new(), None, false)
    }

    pub(crate) fn push(
        &self,
        value: Tensor<T>,
        parents: &[Var<'_, T>],
        backward: BackwardFn<T>,
    ) -> Var<'_, T> {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = self.recording && {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        if requires_grad {
            self.push_node(value, ids, Some(backward), true)
        } else {
            self.push_node(value, Vec::new(), None, false)
        }
    }

    fn push_node(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value: Rc::new(value), parents, backward, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Accumulates `∂root/∂node` into every node reachable from `root`.
    ///
    /// Gradients add up across calls until [`Tape::zero_grad`].
    pub fn backward(&self, root: Var<'_, T>) -> Result<()> {
        if !self.recording {
            return Err(Error::Usage("backward on an inference tape".into()));
        }
        let nodes = self.nodes.borrow();
        let root_node = &nodes[root.id];
        if root_node.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                root_node.value.shape()
            )));
        }
        let mut pending: Vec<Option<Tensor<T>>> = (0..=root.id).map(|_| None).collect();
        pending[root.id] = Some(Tensor::ones(root_node.value.shape()));

        let mut store = self.grads.borrow_mut();
        if store.len() < nodes.len() {
            store.resize_with(nodes.len(), || None);
        }
        for id in (0..=root.id).rev() {
            let Some(grad) = pending[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            if let Some(backward) = &node.backward {
                let parent_values: Vec<Rc<Tensor<T>>> =
                    node.parents.iter().map(|&p| Rc::clone(&nodes[p].value)).collect();
                let parent_grads = backward(&grad, &parent_values, &node.value);
                debug_assert_eq!(parent_grads.len(), node.parents.len());
                for (&p, g) in node.parents.iter().zip(parent_grads) {
                    if !nodes[p].requires_grad {
                        continue;
                    }
                    debug_assert_eq!(g.shape(), nodes[p].value.shape());
                    match &mut pending[p] {
                        Some(acc) => acc.add_assign(&g),
                        slot @ None => *slot = Some(g),
                    }
                }
            }
            match &mut store[id] {
                Some(acc) => acc.add_assign(&grad),
                slot @ None => *slot = Some(grad),
            }
        }
        Ok(())
    }

    /// Accumulated gradient of a node, zeros if it was never reached.
    pub fn grad(&self, var: Var<'_, T>) -> Tensor<T> {
        let store = self.grads.borrow();
        match store.get(var.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(self.nodes.borrow()[var.id].value.shape()),
        }
    }

    pub fn zero_grad(&self) {
        self.grads.borrow_mut().clear();
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn grad(&self) -> Tensor<T> {
        self.tape.grad(*self)
    }
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.5));
        let s = x.sum();
        tape.backward(s).unwrap();
        assert_eq!(x.grad(), Tensor::ones(&[2, 3]));
    }

    #[test]
    fn square_gradient_is_twice_input() {
        let tape = Tape::<f64>::new();
        let data = Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let x = tape.leaf(data.clone());
        let s = x.mul(x).unwrap().sum();
        tape.backward(s).unwrap();
        assert_eq!(x.grad(), data.map(|v| 2.0 * v));
    }

    #[test]
    fn non_scalar_root_is_usage_error() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        let s = x.sum();
        tape.backward(s).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(x.grad(), Tensor::full(&[2], 2.0));
        tape.zero_grad();
        assert_eq!(x.grad(), Tensor::zeros(&[2]));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[2]));
        let c = tape.constant(Tensor::full(&[2], 3.0));
        let s = x.mul(c).unwrap().sum();
        tape.backward(s).unwrap();
        assert_eq!(x.grad(), Tensor::full(&[2], 3.0));
        assert_eq!(c.grad(), Tensor::zeros(&[2]));
    }

    #[test]
    fn inference_tape_refuses_backward() {
        let tape = Tape::<f32>::inference();
        let x = tape.leaf(Tensor::ones(&[1]));
        assert!(tape.backward(x).is_err());
    }
}
