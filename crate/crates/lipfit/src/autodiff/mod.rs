//! Reverse-mode automatic differentiation on a tape of `f64` tensors.
//!
//! Every differentiable quantity in the crate (mesh decoding, projection,
//! shading, rasterization, mouth cropping, feature extraction, losses) is
//! built from the ops defined here, so analytic gradients come from one
//! place and can be checked against finite differences once per op.
//!
//! The tape is single-threaded and rebuilt per forward pass; `Var` is a
//! cheap index into it. `backward` walks nodes in reverse creation order,
//! which is a valid topological order because ops only consume existing
//! vars.

mod gradcheck;
mod ops;
mod raster;
mod sample;
#[cfg(test)]
mod tests;

pub use gradcheck::check_gradients;
pub use raster::RasterHit;
pub use sample::bilinear_at;

use ndarray::{ArrayD, IxDyn};
use std::cell::RefCell;

/// Handle to a tensor on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Var(pub(crate) usize);

pub(crate) type BackFn = Box<dyn Fn(&ArrayD<f64>) -> ArrayD<f64>>;

pub(crate) struct Node {
    pub(crate) value: ArrayD<f64>,
    /// (parent id, contribution of this node's upstream gradient to it)
    pub(crate) parents: Vec<(usize, BackFn)>,
}

#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(&self, value: ArrayD<f64>, parents: Vec<(usize, BackFn)>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents });
        Var(nodes.len() - 1)
    }

    /// Insert a leaf tensor. Gradients are collected for leaves.
    pub fn leaf(&self, value: ArrayD<f64>) -> Var {
        self.push(value, Vec::new())
    }

    /// Insert a tensor that is held fixed; alias of [`Tape::leaf`], kept
    /// separate to mark intent at call sites.
    pub fn constant(&self, value: ArrayD<f64>) -> Var {
        self.leaf(value)
    }

    pub fn scalar(&self, v: f64) -> Var {
        self.leaf(ArrayD::from_elem(IxDyn(&[]), v))
    }

    pub fn leaf_vec(&self, v: &[f64]) -> Var {
        self.leaf(ArrayD::from_shape_vec(IxDyn(&[v.len()]), v.to_vec()).unwrap())
    }

    /// Clone a node's current value off the tape.
    pub fn value(&self, v: Var) -> ArrayD<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub(crate) fn with_value<R>(&self, v: Var, f: impl FnOnce(&ArrayD<f64>) -> R) -> R {
        f(&self.nodes.borrow()[v.0].value)
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.with_value(v, |a| {
            debug_assert_eq!(a.len(), 1, "scalar_value on non-scalar");
            *a.iter().next().unwrap()
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Reverse sweep from a scalar root. Returns gradients for leaf nodes.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.0].value.len(), 1, "backward root must be scalar");
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; nodes.len()];
        grads[root.0] = Some(ArrayD::from_elem(nodes[root.0].value.raw_dim(), 1.0));

        for i in (0..=root.0).rev() {
            if nodes[i].parents.is_empty() {
                continue; // leaf: keep its gradient for the caller
            }
            let Some(g) = grads[i].take() else { continue };
            for (pid, back) in &nodes[i].parents {
                let contrib = back(&g);
                debug_assert_eq!(
                    contrib.shape(),
                    nodes[*pid].value.shape(),
                    "gradient shape mismatch for parent {pid}"
                );
                match &mut grads[*pid] {
                    Some(acc) => *acc += &contrib,
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
        Gradients { grads }
    }
}

/// Gradients of a scalar root with respect to tape leaves.
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf, zeros if the leaf never influenced the root.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> ArrayD<f64> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => ArrayD::zeros(IxDyn(shape)),
        }
    }
}
