//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! Every operation produces a new [`Tensor`]. When at least one input
//! requires a gradient, the result records the producing operation and its
//! parents, which forms an acyclic graph rooted at the inputs. Calling
//! [`Tensor::backward`] on a scalar walks that graph in reverse topological
//! order and accumulates gradients into every leaf that requires one.
//!
//! Image tensors use NCHW layout. Values are stored row-major.

pub(crate) mod codec;
mod conv;
mod gemm;
mod grad_check;
mod norm;
mod ops;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{shape_err, Error, Result};

pub use codec::{decode_tensor, encode_tensor, read_tensor_file, write_tensor_file, TENSOR_MAGIC};
pub use conv::{conv2d, conv_transpose2d, PadMode, Padding};
pub use grad_check::{
    grad_check, grad_check_many, grad_check_sampled, numeric_gradient, numeric_gradient_at,
    relative_error, GradEntry, GradReport,
};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

/// A reference-counted node in the differentiation graph.
///
/// Cloning is cheap and shares both values and gradient storage.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

struct Node {
    id: usize,
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    op: Option<Op>,
}

/// Recorded operation plus whatever the backward pass needs from the forward.
pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    AddScalar(Tensor),
    Relu(Tensor),
    LeakyRelu(Tensor, f64),
    Tanh(Tensor),
    Sum(Tensor),
    Mean(Tensor),
    Reshape(Tensor),
    Transpose2d(Tensor),
    MatMul(Tensor, Tensor),
    AbsMean(Tensor, Tensor),
    SquareMean(Tensor, Tensor),
    Conv2d {
        input: Tensor,
        weight: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        input: Tensor,
        weight: Tensor,
        bias: Option<Tensor>,
        stride: usize,
        pad: usize,
    },
    ReflectPad {
        input: Tensor,
        pad: usize,
    },
    InstanceNorm {
        input: Tensor,
        inv_std: Vec<f64>,
    },
    ConcatChannels(Vec<Tensor>),
    RowNormalize {
        input: Tensor,
        inv_norm: Vec<f64>,
    },
}

impl Op {
    fn parents(&self) -> Vec<&Tensor> {
        use Op::*;
        match self {
            Add(a, b) | Sub(a, b) | Mul(a, b) | MatMul(a, b) | AbsMean(a, b) | SquareMean(a, b) => {
                vec![a, b]
            }
            Scale(a, _) | AddScalar(a) | Relu(a) | LeakyRelu(a, _) | Tanh(a) | Sum(a) | Mean(a)
            | Reshape(a) | Transpose2d(a) => vec![a],
            Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | ConvTranspose2d {
                input,
                weight,
                bias,
                ..
            } => {
                let mut p = vec![input, weight];
                if let Some(b) = bias {
                    p.push(b);
                }
                p
            }
            ReflectPad { input, .. } | InstanceNorm { input, .. } | RowNormalize { input, .. } => {
                vec![input]
            }
            ConcatChannels(parts) => parts.iter().collect(),
        }
    }
}

impl Tensor {
    /// Builds a constant leaf tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(shape_err(
                "new",
                format!("shape {shape:?} holds {n} values but {} were given", data.len()),
            ));
        }
        Ok(Self::leaf(Arc::new(data), shape.to_vec(), false))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::leaf(Arc::new(vec![value; n]), shape.to_vec(), false)
    }

    pub fn scalar(value: f64) -> Self {
        Self::leaf(Arc::new(vec![value]), Vec::new(), false)
    }

    fn leaf(data: Arc<Vec<f64>>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            op: None,
        }))
    }

    /// Wraps the result of an operation. The graph edge is only kept when a
    /// parent needs a gradient.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: Arc::new(data),
            requires_grad,
            grad: Mutex::new(None),
            op: requires_grad.then_some(op),
        }))
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// A new leaf sharing these values that does require a gradient.
    pub fn with_grad(&self) -> Self {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), true)
    }

    /// A constant leaf sharing these values; gradients never flow through it.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().unwrap() = None;
    }

    pub(crate) fn id(&self) -> usize {
        self.0.id
    }

    pub(crate) fn op(&self) -> Option<&Op> {
        self.0.op.as_ref()
    }

    /// `(N, C, H, W)` of an image tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(shape_err(
                op,
                format!("expected NCHW input, got shape {:?}", self.shape()),
            )),
        }
    }

    /// Runs reverse-mode accumulation from this scalar.
    ///
    /// Gradients add into the storage of every leaf that requires one, so
    /// repeated calls accumulate until [`Tensor::zero_grad`].
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        let mut pending: HashMap<usize, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match node.op() {
                None => {
                    let mut slot = node.0.grad.lock().unwrap();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => *slot = Some(grad),
                    }
                }
                Some(op) => {
                    let parent_grads = node.backward_op(op, &grad);
                    for (parent, pg) in op.parents().into_iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Signs of every piecewise-linear input (relu, leaky relu, abs) in the
    /// tracked graph below `self`, in a fixed traversal order. Two evaluations
    /// of the same function with different signatures lie on different
    /// linear pieces.
    pub(crate) fn kink_signature(&self) -> Vec<bool> {
        let mut signs = Vec::new();
        for node in self.topo_order() {
            match node.op() {
                Some(Op::Relu(a)) | Some(Op::LeakyRelu(a, _)) => signs.extend(a.data().iter().map(|v| *v > 0.0)),
                Some(Op::AbsMean(a, b)) => signs.extend(a.data().iter().zip(b.data()).map(|(x, y)| x > y)),
                _ => {}
            }
        }
        signs
    }

    /// Post-order over the nodes that require a gradient.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = node.op() {
                for p in op.parents().into_iter().rev() {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }

    fn backward_op(&self, op: &Op, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let need = |t: &Tensor| t.requires_grad();
        match op {
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => conv::conv2d_backward(input, weight, bias.as_ref(), *stride, *pad, g),
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => conv::conv_transpose2d_backward(self, input, weight, bias.as_ref(), *stride, *pad, g),
            Op::ReflectPad { input, pad } => {
                vec![need(input).then(|| conv::reflect_pad_backward(input, *pad, g))]
            }
            Op::InstanceNorm { input, inv_std } => {
                vec![need(input).then(|| norm::instance_norm_backward(self, input, inv_std, g))]
            }
            Op::RowNormalize { input, inv_norm } => {
                vec![need(input).then(|| norm::row_normalize_backward(self, inv_norm, g))]
            }
            _ => ops::elementwise_backward(self, op, g),
        }
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data().iter().take(6).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .field("values", &preview)
            .finish()
    }
}
