//! Reverse-mode automatic differentiation on dense, row-major tensors.
//!
//! Tensor values are immutable once created. Every operation records its
//! parents, so [`Tensor::backward`] can replay the graph in reverse creation
//! order and accumulate gradients into the leaf parameters. Node ids are
//! allocated from a global counter at creation time; because parents always
//! exist before their children, walking the reachable nodes in descending id
//! order is a valid reverse topological order, and the accumulation order is
//! therefore fixed by construction. Combined with the fixed-block parallel
//! GEMM in [`gemm`], this keeps results bit-identical across runs and across
//! thread counts.

mod gemm;
mod ops;

pub mod element;
pub mod finite_diff;

use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use element::Element;
use ops::Op;
pub use ops::{LOG_EPS, NORM_EPS};
use thiserror::Error;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Errors produced by tensor construction and graph operations.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: shape {shape:?} holds {expected} elements but {got} were supplied")]
    DataLength {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: {message}")]
    Invalid { op: &'static str, message: String },
    #[error("backward requires a scalar output, got shape {shape:?}")]
    BackwardNonScalar { shape: Vec<usize> },
    #[error("backward already ran on this tensor; call reset_grads first")]
    BackwardTwice,
    #[error("backward on a graph with no gradient-tracked inputs")]
    BackwardUntracked,
}

pub(crate) struct Inner<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Vec<T>,
    /// True when this node is a parameter leaf or depends on one.
    tracked: bool,
    /// Gradient accumulator; present only on parameter leaves.
    grad: Option<Mutex<Vec<T>>>,
    op: Op<T>,
    backward_done: AtomicBool,
}

/// A dense tensor participating in the autodiff graph.
///
/// Cloning is cheap: clones share the same node.
pub struct Tensor<T: Element>(Arc<Inner<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Element> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.shape)
            .field("tracked", &self.0.tracked)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn new_inner(shape: Vec<usize>, data: Vec<T>, tracked: bool, grad: Option<Vec<T>>, op: Op<T>) -> Self {
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            tracked,
            grad: grad.map(Mutex::new),
            op,
            backward_done: AtomicBool::new(false),
        }))
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> Self {
        let tracked = op.parents().iter().any(|p| p.0.tracked);
        Self::new_inner(shape, data, tracked, None, op)
    }

    /// A constant tensor that does not receive gradients.
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let expected = numel(shape);
        if data.len() != expected {
            return Err(TensorError::DataLength {
                op: "from_vec",
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        Ok(Self::new_inner(shape.to_vec(), data, false, None, Op::Leaf))
    }

    /// A parameter leaf: tracked, with a zero-initialised gradient buffer.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self, TensorError> {
        let expected = numel(shape);
        if data.len() != expected {
            return Err(TensorError::DataLength {
                op: "param",
                shape: shape.to_vec(),
                expected,
                got: data.len(),
            });
        }
        let grad = vec![T::zero(); expected];
        Ok(Self::new_inner(shape.to_vec(), data, true, Some(grad), Op::Leaf))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_inner(shape.to_vec(), vec![T::zero(); numel(shape)], false, None, Op::Leaf)
    }

    pub fn scalar(v: T) -> Self {
        Self::new_inner(vec![], vec![v], false, None, Op::Leaf)
    }

    /// Copies the value into a fresh constant leaf, cutting the graph.
    pub fn detach(&self) -> Self {
        Self::new_inner(self.0.shape.clone(), self.0.data.clone(), false, None, Op::Leaf)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[T] {
        &self.0.data
    }

    pub fn len(&self) -> usize {
        self.0.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.data.is_empty()
    }

    pub fn is_tracked(&self) -> bool {
        self.0.tracked
    }

    /// The single element of a scalar (rank-0 or one-element) tensor.
    pub fn item(&self) -> Result<T, TensorError> {
        if self.0.data.len() != 1 {
            return Err(TensorError::BackwardNonScalar {
                shape: self.0.shape.clone(),
            });
        }
        Ok(self.0.data[0])
    }

    /// Snapshot of the accumulated gradient, if this is a parameter leaf.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.as_ref().map(|g| g.lock().expect("grad lock").clone())
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    pub fn grad_all_finite(&self) -> bool {
        match &self.0.grad {
            Some(g) => g.lock().expect("grad lock").iter().all(|v| v.is_finite()),
            None => true,
        }
    }

    /// Runs reverse-mode differentiation from this scalar, accumulating
    /// gradients into every reachable parameter leaf.
    ///
    /// Calling it twice on the same node without [`Tensor::reset_grads`] is
    /// an error: the second pass would silently double the accumulated
    /// gradients.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.0.data.len() != 1 {
            return Err(TensorError::BackwardNonScalar {
                shape: self.0.shape.clone(),
            });
        }
        if !self.0.tracked {
            return Err(TensorError::BackwardUntracked);
        }
        if self.0.backward_done.swap(true, Ordering::SeqCst) {
            return Err(TensorError::BackwardTwice);
        }

        // Collect the tracked nodes reachable from the root. Untracked
        // subgraphs are constants and never receive cotangents.
        let mut nodes: Vec<Tensor<T>> = Vec::new();
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !t.0.tracked || !seen.insert(t.0.id) {
                continue;
            }
            for p in t.0.op.parents() {
                stack.push(p.clone());
            }
            nodes.push(t);
        }
        // Children always have larger ids than their parents, so descending
        // id order visits every node before any of its ancestors.
        nodes.sort_by(|a, b| b.0.id.cmp(&a.0.id));

        let mut cotangents: HashMap<u64, Vec<T>> = HashMap::new();
        cotangents.insert(self.0.id, vec![T::one()]);
        for node in &nodes {
            let Some(cot) = cotangents.remove(&node.0.id) else {
                continue;
            };
            if let Some(g) = &node.0.grad {
                let mut g = g.lock().expect("grad lock");
                for (gi, ci) in g.iter_mut().zip(&cot) {
                    *gi += *ci;
                }
            }
            for (parent, contribution) in node.0.op.backward(&node.0, &cot) {
                let entry = cotangents
                    .entry(parent.0.id)
                    .or_insert_with(|| vec![T::zero(); parent.0.data.len()]);
                for (ei, ci) in entry.iter_mut().zip(&contribution) {
                    *ei += *ci;
                }
            }
        }
        Ok(())
    }

    /// Zeroes every gradient buffer reachable from this node and clears the
    /// backward-done flags, making another backward pass legal.
    pub fn reset_grads(&self) {
        let mut seen = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            t.0.backward_done.store(false, Ordering::SeqCst);
            if let Some(g) = &t.0.grad {
                for v in g.lock().expect("grad lock").iter_mut() {
                    *v = T::zero();
                }
            }
            for p in t.0.op.parents() {
                stack.push(p.clone());
            }
        }
    }

}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_rejects_wrong_data_length() {
        let err = Tensor::<f64>::param(&[2, 3], vec![1.0; 5]).unwrap_err();
        assert!(matches!(err, TensorError::DataLength { expected: 6, got: 5, .. }));
    }

    #[test]
    fn backward_requires_scalar() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.relu().unwrap();
        assert!(matches!(y.backward(), Err(TensorError::BackwardNonScalar { .. })));
    }

    #[test]
    fn backward_twice_without_reset_is_an_error() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.squared_l2_norm().unwrap();
        y.backward().unwrap();
        assert!(matches!(y.backward(), Err(TensorError::BackwardTwice)));
        y.reset_grads();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn backward_on_untracked_graph_is_an_error() {
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let y = x.squared_l2_norm().unwrap();
        assert!(matches!(y.backward(), Err(TensorError::BackwardUntracked)));
    }

    #[test]
    fn gradients_accumulate_across_backward_calls_on_fresh_graphs() {
        let x = Tensor::<f64>::param(&[1], vec![3.0]).unwrap();
        let y1 = x.squared_l2_norm().unwrap();
        y1.backward().unwrap();
        let y2 = x.scale(2.0).unwrap().sum(None).unwrap();
        y2.backward().unwrap();
        // d(x^2)/dx + d(2x)/dx = 6 + 2.
        assert_eq!(x.grad().unwrap(), vec![8.0]);
    }

    #[test]
    fn shared_subexpression_gets_summed_cotangents() {
        // y = x*x + x  =>  dy/dx = 2x + 1.
        let x = Tensor::<f64>::param(&[1], vec![4.0]).unwrap();
        let y = x.mul(&x).unwrap().add(&x).unwrap().sum(None).unwrap();
        y.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![9.0]);
    }

    #[test]
    fn detach_blocks_gradient_flow() {
        let x = Tensor::<f64>::param(&[2], vec![1.0, 2.0]).unwrap();
        let d = x.detach();
        assert!(!d.is_tracked());
        let y = x.mul(&d).unwrap().sum(None).unwrap();
        y.backward().unwrap();
        // Only the tracked factor receives a gradient.
        assert_eq!(x.grad().unwrap(), vec![1.0, 2.0]);
    }
}
