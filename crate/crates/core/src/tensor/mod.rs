//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap reference-counted handle. Operations on tensors
//! that require gradients record a node pointing back at their inputs, so the
//! graph is built implicitly during the forward pass. Calling
//! [`Tensor::backward`] on a scalar walks that graph in reverse topological
//! order and accumulates `d(loss)/d(leaf)` into every reachable leaf that was
//! created with [`Tensor::parameter`].
//!
//! Gradients accumulate across backward calls until [`Tensor::zero_grad`] is
//! called. Recording can be suspended with [`no_grad`].
//!
//! Storage is contiguous and row-major. There are no strided views: reshape
//! copies, and every op allocates its output.

mod broadcast;
mod gemm;
mod op;
mod ops;

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;

use ndarray::{ArrayBase, ArrayD, Data, Dimension, IxDyn};

pub use op::OpKind;
pub(crate) use op::Op;

/// Errors raised by tensor construction and tensor operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    Axis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("shape {0:?} has a zero extent")]
    ZeroExtent(Vec<usize>),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("{0}")]
    Contract(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static CORRUPTED_OP: Cell<Option<OpKind>> = const { Cell::new(None) };
}

/// Runs `f` with graph recording disabled on the current thread.
///
/// Tensors produced inside the closure are constants, even when their inputs
/// require gradients.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Negative-control hook for the gradient checker: scales every input
/// gradient produced by the backward rule of `kind` by 1.5 on this thread.
#[doc(hidden)]
pub fn corrupt_backward_rule(kind: Option<OpKind>) {
    CORRUPTED_OP.with(|c| c.set(kind));
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) inputs: Vec<Tensor>,
}

struct Inner {
    shape: Vec<usize>,
    data: RefCell<Vec<f64>>,
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    node: Option<Node>,
}

impl Drop for Inner {
    // Deep graphs (long rollouts) would otherwise recurse once per node.
    fn drop(&mut self) {
        let Some(node) = self.node.take() else {
            return;
        };
        let mut pending = node.inputs;
        while let Some(t) = pending.pop() {
            if let Ok(mut inner) = Rc::try_unwrap(t.0) {
                if let Some(node) = inner.node.take() {
                    pending.extend(node.inputs);
                }
            }
        }
    }
}

/// Handle to a node of the differentiation graph.
#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Rc::new(Inner {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            node,
        }))
    }

    fn checked(data: &[f64], shape: &[usize]) -> Result<()> {
        if shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape.to_vec()));
        }
        if numel_of(shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Constant tensor (never receives gradients).
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::checked(&data, shape)?;
        Ok(Self::build(data, shape.to_vec(), false, None))
    }

    /// Leaf tensor that accumulates gradients during [`Tensor::backward`].
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Self::checked(&data, shape)?;
        Ok(Self::build(data, shape.to_vec(), true, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![value], Vec::new(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(vec![0.0; numel_of(shape)], shape)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(vec![value; numel_of(shape)], shape)
    }

    /// Output of an operation. Records a graph node only when recording is on
    /// and at least one input requires gradients.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: &[&Tensor]) -> Self {
        let track = is_grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        if track {
            let inputs = inputs.iter().map(|t| (*t).clone()).collect();
            Self::build(data, shape, true, Some(Node { op, inputs }))
        } else {
            Self::build(data, shape, false, None)
        }
    }

    /// Constant tensor holding a copy of an ndarray.
    pub fn from_array<S: Data<Elem = f64>, D: Dimension>(array: &ArrayBase<S, D>) -> Result<Self> {
        Self::new(array.iter().copied().collect(), array.shape())
    }

    pub fn to_array(&self) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(self.shape()), self.to_vec()).expect("shape matches data")
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.0.shape)
    }

    pub fn data(&self) -> Ref<'_, Vec<f64>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values, used by optimizers. Mutating a tensor
    /// that is an input of a live graph invalidates that graph's gradients.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f64>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.borrow().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        let data = self.data();
        if data.len() != 1 {
            return Err(TensorError::Contract(format!(
                "item() needs a single element, shape is {:?}",
                self.shape()
            )));
        }
        Ok(data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    /// Multiplies the accumulated gradient in place, if there is one.
    pub fn scale_grad(&self, c: f64) {
        if let Some(g) = self.0.grad.borrow_mut().as_mut() {
            g.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Constant copy of the current values, cut off from the graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.to_vec(), self.0.shape.clone(), false, None)
    }

    /// Kind of the operation that produced this tensor, `None` for leaves.
    pub fn op_kind(&self) -> Option<OpKind> {
        self.0.node.as_ref().map(|n| n.op.kind())
    }

    fn key(&self) -> *const Inner {
        Rc::as_ptr(&self.0)
    }

    /// Post-order over the nodes that require gradients.
    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = &t.0.node {
                for input in &node.inputs {
                    if input.requires_grad() && !visited.contains(&input.key()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Back-propagates from this scalar into every reachable leaf parameter.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NonScalarLoss(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }
        let corrupted = CORRUPTED_OP.with(|c| c.get());
        let order = self.topological_order();
        let mut grads: HashMap<*const Inner, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.key()) else {
                continue;
            };
            match &t.0.node {
                None => {
                    let mut slot = t.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                        None => *slot = Some(g),
                    }
                }
                Some(node) => {
                    let input_grads = node.op.backward(&node.inputs, t, &g);
                    let factor = match corrupted {
                        Some(kind) if kind == node.op.kind() => 1.5,
                        _ => 1.0,
                    };
                    for (input, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(mut ig) = ig else { continue };
                        if factor != 1.0 {
                            ig.iter_mut().for_each(|v| *v *= factor);
                        }
                        match grads.get_mut(&input.key()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                            None => {
                                grads.insert(input.key(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let data = self.data();
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape());
        if data.len() <= 16 {
            s.field("data", &*data);
        } else {
            s.field("data", &format_args!("[{} values]", data.len()));
        }
        s.field("requires_grad", &self.requires_grad()).finish()
    }
}
