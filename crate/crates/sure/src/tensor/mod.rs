//! Dense 2-D tensor engine with reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation of one forward pass in insertion
//! order (which is a topological order by construction). [`Graph::backward`]
//! walks the tape once in reverse, calling each node's stored vector-Jacobian
//! rule and accumulating gradients into the parents.
//!
//! All tensors are row-major `[rows, cols]` matrices; vectors are `[1, d]`
//! rows and scalars `[1, 1]`. Element type is generic over [`Real`]
//! (`f32` for training, `f64` for verification).

mod ops;
mod params;

pub mod nn;

pub use params::{Param, ParamId, ParamStore};

use crate::error::{Result, SureError};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

/// VJP rule: given the graph (for reads) and the output gradient, return
/// gradient contributions per parent.
type BackFn<R> = Box<dyn Fn(&Graph<R>, &[R]) -> Vec<(NodeId, Vec<R>)>>;

pub(crate) struct Node<R: Real> {
    pub data: Vec<R>,
    pub shape: [usize; 2],
    pub grad: Option<Vec<R>>,
    pub requires_grad: bool,
    pub backward: Option<BackFn<R>>,
    pub param: Option<ParamId>,
}

pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn data(&self, id: NodeId) -> &[R] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: NodeId) -> [usize; 2] {
        self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> Option<&[R]> {
        self.nodes[id.0].grad.as_deref()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Scalar convenience accessor.
    pub fn scalar(&self, id: NodeId) -> R {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    pub(crate) fn push(
        &mut self,
        data: Vec<R>,
        shape: [usize; 2],
        requires_grad: bool,
        backward: Option<BackFn<R>>,
        param: Option<ParamId>,
    ) -> NodeId {
        debug_assert_eq!(data.len(), shape[0] * shape[1]);
        self.nodes.push(Node {
            data,
            shape,
            grad: None,
            requires_grad,
            backward: if requires_grad { backward } else { None },
            param,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, data: Vec<R>, shape: [usize; 2]) -> NodeId {
        self.push(data, shape, false, None, None)
    }

    /// Differentiable leaf not tied to a parameter store.
    pub fn leaf(&mut self, data: Vec<R>, shape: [usize; 2]) -> NodeId {
        self.push(data, shape, true, None, None)
    }

    /// Bind a stored parameter as a differentiable leaf.
    pub fn param(&mut self, store: &ParamStore<R>, pid: ParamId) -> NodeId {
        let p = store.get(pid);
        self.push(p.data.clone(), p.shape, true, None, Some(pid))
    }

    fn accumulate(&mut self, id: NodeId, contrib: Vec<R>) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        debug_assert_eq!(contrib.len(), node.data.len());
        match &mut node.grad {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi = *gi + ci;
                }
            }
            None => node.grad = Some(contrib),
        }
    }

    /// Reverse sweep from a scalar loss. Each node's rule fires at most once.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss.0].shape != [1, 1] {
            return Err(SureError::InvalidArgument(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        self.nodes[loss.0].grad = Some(vec![R::one()]);
        for i in (0..=loss.0).rev() {
            let contribs = {
                let node = &self.nodes[i];
                match (&node.backward, &node.grad) {
                    (Some(back), Some(grad)) => back(self, grad),
                    _ => continue,
                }
            };
            for (pid, g) in contribs {
                self.accumulate(pid, g);
            }
        }
        Ok(())
    }

    /// After backward: collect parameter gradients by ParamId, summing if a
    /// parameter was bound more than once in this graph.
    pub fn param_grads(&self, store: &ParamStore<R>) -> Vec<Option<Vec<R>>> {
        let mut out: Vec<Option<Vec<R>>> = vec![None; store.len()];
        for node in &self.nodes {
            if let (Some(pid), Some(grad)) = (node.param, &node.grad) {
                match &mut out[pid.0] {
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grad) {
                            *a = *a + *g;
                        }
                    }
                    slot => *slot = Some(grad.clone()),
                }
            }
        }
        out
    }
}
