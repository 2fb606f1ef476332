//! Trainable value paired with its accumulated gradient.

use super::{Matrix, Node, Tape};
use crate::scalar::Scalar;

/// A parameter matrix plus a gradient buffer of the same shape. The tape
/// owns per-node gradients only for the lifetime of one backward sweep;
/// anything that must survive across batches accumulates here.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub value: Matrix<S>,
    pub grad: Matrix<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(value: Matrix<S>) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(S::zero());
    }

    /// Registers the current value as a tape leaf.
    pub fn leaf(&self, tape: &Tape<S>) -> Node {
        tape.leaf(self.value.clone())
    }

    /// Adds the tape's gradient for `node` into this parameter's buffer.
    pub fn accumulate(&mut self, tape: &Tape<S>, node: Node) {
        let g = tape.grad(node);
        self.grad
            .add_scaled(&g, S::one())
            .expect("parameter gradient shape matches value shape");
    }
}
