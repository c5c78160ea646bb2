use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local gradient rule of one recorded primitive.
pub(crate) trait Backward {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> Vec<Var>;
    /// Returns one entry per input; `None` where `needs[i]` is false.
    fn backward(&self, tape: &Tape, out: &Tensor, grad: &Tensor, needs: &[bool])
        -> Vec<Option<Tensor>>;
    /// Appends the discrete choices made in the forward pass, for piecewise primitives.
    fn branches(&self, _tape: &Tape, _sink: &mut Vec<u64>) {}
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Option<Box<dyn Backward>>,
}

/// Ordered record of primitive operations.
///
/// Nodes are appended in evaluation order, so every operation's inputs precede it
/// and a single reverse sweep visits each node once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    backward_done: bool,
    check_finite: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Tape that rejects NaN/Inf produced by any primitive.
    pub fn with_finite_checks() -> Self {
        Self {
            check_finite: true,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Branch choices of every piecewise primitive (relu sides, argmax positions) in
    /// recording order. Equal patterns mean two evaluations sit on the same smooth piece.
    pub fn branch_pattern(&self) -> Vec<u64> {
        let mut sink = Vec::new();
        for node in &self.nodes {
            if let Some(op) = &node.op {
                op.branches(self, &mut sink);
            }
        }
        sink
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adjoint of `v` after [`Tape::backward`]; `None` for values that do not require grad.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Box<dyn Backward>) -> Result<Var> {
        if self.check_finite && !value.all_finite() {
            return Err(Error::NonFinite(op.name()));
        }
        let requires_grad = op.inputs().iter().any(|&v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { Some(op) } else { None };
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar loss; populates adjoints of every node that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let loss_shape = self.shape(loss).to_vec();
        if loss_shape.iter().product::<usize>() != 1 {
            return Err(Error::NonScalarLoss(loss_shape));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            self.grads = grads;
            return Ok(());
        }
        grads[loss.0] = Some(Tensor::full(&loss_shape, 1.0));
        for i in (0..=loss.0).rev() {
            let Some(op) = self.nodes[i].op.as_ref() else {
                continue;
            };
            let Some(g) = grads[i].take() else {
                continue;
            };
            let inputs = op.inputs();
            let needs: Vec<bool> = inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let local = op.backward(self, &self.nodes[i].value, &g, &needs);
            for ((v, need), lg) in inputs.iter().zip(&needs).zip(local) {
                if !need {
                    continue;
                }
                if let Some(lg) = lg {
                    debug_assert_eq!(lg.shape(), self.nodes[v.0].value.shape(), "{}", op.name());
                    match &mut grads[v.0] {
                        Some(acc) => acc.add_assign(&lg),
                        slot @ None => *slot = Some(lg),
                    }
                }
            }
            grads[i] = Some(g);
        }
        // interior adjoints are kept so callers can inspect any node
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }
}
