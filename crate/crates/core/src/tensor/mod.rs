//! Dense tensors with reverse-mode automatic differentiation.
//!
//! A [`Graph`] is a tape: every operation appends one node, so insertion
//! order is a topological order. Backward passes are themselves written in
//! terms of tape operations, which means a gradient can be recorded as a new
//! node and differentiated again. That is what the gradient-penalty terms
//! need: the penalty is a function of an input-gradient, and the critic is
//! trained on the gradient of that penalty.
//!
//! Piecewise-linear activations record their derivative as a constant mask.
//! Second derivatives through them are therefore zero, which is exact almost
//! everywhere.
//!
//! ```
//! use zslc::tensor::Graph;
//!
//! let g = Graph::new();
//! let x = g.variable(vec![1], vec![3.0]).unwrap();
//! let y = x.mul(&x).unwrap().sum();
//! let dx = g.backward(&y, &[&x]).unwrap();
//! assert_eq!(dx[0].values(), &[6.0]);
//! ```

mod kernels;
mod matrix;
mod ops;
mod optim;
mod rng;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

pub use matrix::Matrix;
pub(crate) use kernels::log_sum_exp;
pub use optim::{adam_step, AdamConfig, AdamState};
pub use rng::{stream_id, RngStream};

use ops::Op;

/// A computation tape. Cloning yields another handle to the same tape.
#[derive(Clone, Default)]
pub struct Graph {
    tape: Rc<RefCell<Tape>>,
}

struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Tape {
            nodes: Vec::new(),
            recording: true,
        }
    }
}

#[derive(Clone)]
struct Node {
    shape: Rc<[usize]>,
    value: Rc<[f64]>,
    requires_grad: bool,
    op: Option<Op>,
}

/// A value recorded on a [`Graph`].
#[derive(Clone)]
pub struct Tensor {
    graph: Graph,
    id: usize,
    shape: Rc<[usize]>,
    value: Rc<[f64]>,
    requires_grad: bool,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id)
            .field("shape", &&*self.shape)
            .field("requires_grad", &self.requires_grad)
            .field("values", &&*self.value)
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Number of nodes recorded so far.
    pub fn len(&self) -> usize {
        self.tape.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A leaf that gradients never flow into.
    pub fn constant(&self, shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        self.leaf(shape, values, false)
    }

    /// A leaf that gradients can be taken with respect to.
    pub fn variable(&self, shape: Vec<usize>, values: Vec<f64>) -> Result<Tensor> {
        self.leaf(shape, values, true)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.push(Vec::new(), vec![v], false, None)
    }

    pub fn constant_matrix(&self, m: &Matrix) -> Tensor {
        self.push(vec![m.rows(), m.cols()], m.data().to_vec(), false, None)
    }

    pub fn variable_matrix(&self, m: &Matrix) -> Tensor {
        self.push(vec![m.rows(), m.cols()], m.data().to_vec(), true, None)
    }

    pub fn zeros(&self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        self.push(shape.to_vec(), vec![0.0; n], false, None)
    }

    fn leaf(&self, shape: Vec<usize>, values: Vec<f64>, requires_grad: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", values.len()),
            ));
        }
        Ok(self.push(shape, values, requires_grad, None))
    }

    fn push(
        &self,
        shape: Vec<usize>,
        value: Vec<f64>,
        requires_grad: bool,
        op: Option<Op>,
    ) -> Tensor {
        let shape: Rc<[usize]> = shape.into();
        let value: Rc<[f64]> = value.into();
        let mut tape = self.tape.borrow_mut();
        let id = tape.nodes.len();
        tape.nodes.push(Node {
            shape: shape.clone(),
            value: value.clone(),
            requires_grad,
            op,
        });
        Tensor {
            graph: self.clone(),
            id,
            shape,
            value,
            requires_grad,
        }
    }

    /// Appends the result of an operation. The op is kept for backward only
    /// when some input requires a gradient and the tape is recording.
    fn record(&self, op: Op, shape: Vec<usize>, value: Vec<f64>, inputs: &[&Tensor]) -> Tensor {
        let requires_grad =
            self.tape.borrow().recording && inputs.iter().any(|t| t.requires_grad);
        let op = requires_grad.then_some(op);
        self.push(shape, value, requires_grad, op)
    }

    fn tensor(&self, id: usize) -> Tensor {
        let tape = self.tape.borrow();
        let n = &tape.nodes[id];
        Tensor {
            graph: self.clone(),
            id,
            shape: n.shape.clone(),
            value: n.value.clone(),
            requires_grad: n.requires_grad,
        }
    }

    fn owns(&self, t: &Tensor) -> bool {
        Rc::ptr_eq(&self.tape, &t.graph.tape)
    }

    /// Gradients of a scalar `loss` with respect to each tensor in `wrt`.
    /// Tensors the loss does not depend on get zeros.
    pub fn backward(&self, loss: &Tensor, wrt: &[&Tensor]) -> Result<Vec<Tensor>> {
        self.grad(loss, wrt, false)
    }

    /// Like [`Graph::backward`]; with `create_graph` the returned gradients
    /// are tape nodes that can be differentiated again.
    pub fn grad(&self, loss: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
        if !self.owns(loss) || wrt.iter().any(|t| !self.owns(t)) {
            return Err(Error::GraphMismatch("backward"));
        }
        if loss.numel() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got shape {:?}", loss.shape()),
            ));
        }
        let previous = std::mem::replace(&mut self.tape.borrow_mut().recording, create_graph);
        let result = self.accumulate(loss, wrt, create_graph);
        self.tape.borrow_mut().recording = previous;
        result
    }

    fn accumulate(&self, loss: &Tensor, wrt: &[&Tensor], create_graph: bool) -> Result<Vec<Tensor>> {
        let mut adjoint: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        adjoint[loss.id] = Some(self.push(loss.shape.to_vec(), vec![1.0], false, None));
        for id in (0..=loss.id).rev() {
            let Some(g) = adjoint[id].take() else {
                continue;
            };
            let op = self.tape.borrow().nodes[id].op.clone();
            if let Some(op) = op {
                let out = self.tensor(id);
                for (input, contribution) in self.vjp(&op, &out, &g, create_graph)? {
                    adjoint[input] = Some(match adjoint[input].take() {
                        Some(prev) => prev.add(&contribution)?,
                        None => contribution,
                    });
                }
            }
            adjoint[id] = Some(g);
        }
        Ok(wrt
            .iter()
            .map(|t| {
                adjoint
                    .get(t.id)
                    .cloned()
                    .flatten()
                    .unwrap_or_else(|| self.zeros(&t.shape))
            })
            .collect())
    }

    /// Per-sample gradient of a batch of scalar outputs with respect to a
    /// batched input, recorded so that it can itself be differentiated.
    ///
    /// Samples must not interact (row-wise networks), so the gradient of the
    /// summed output at row `i` is the derivative of output `i` alone.
    pub fn input_gradient(&self, output: &Tensor, input: &Tensor) -> Result<Tensor> {
        let total = output.sum();
        Ok(self.grad(&total, &[input], true)?.remove(0))
    }
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.value
    }

    pub fn numel(&self) -> usize {
        self.value.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1, "item() on a tensor of shape {:?}", self.shape());
        self.value[0]
    }

    /// A constant copy on the same graph; gradients stop here.
    pub fn detach(&self) -> Tensor {
        self.graph
            .push(self.shape.to_vec(), self.value.to_vec(), false, None)
    }

    pub fn to_matrix(&self) -> Result<Matrix> {
        match *self.shape {
            [r, c] => Matrix::new(r, c, self.value.to_vec()),
            [n] => Matrix::new(1, n, self.value.to_vec()),
            _ => Err(Error::dim("to_matrix", format!("shape {:?}", self.shape()))),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(op, format!("expected a matrix, got shape {:?}", self.shape()))),
        }
    }

    fn dims1(&self, op: &'static str) -> Result<usize> {
        match *self.shape {
            [n] => Ok(n),
            _ => Err(Error::dim(op, format!("expected a vector, got shape {:?}", self.shape()))),
        }
    }

    fn check_graph(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.graph.owns(other) {
            Ok(())
        } else {
            Err(Error::GraphMismatch(op))
        }
    }
}
