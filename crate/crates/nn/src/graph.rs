//! Define-by-run reverse-mode autodiff tape.
//!
//! Every op pushes a node holding a boxed backward closure. Values live in
//! `Arc`s so that dropping a `Var` on the caller side frees the activation
//! unless a backward closure captured it.

use std::collections::HashMap;
use std::sync::Arc;

use crate::params::ParamId;
use crate::tensor::Tensor;

pub type NodeId = usize;

/// Computes the gradients of an op's parents from its output gradient.
/// The `&[bool]` says which parents actually need a gradient.
pub type BackwardFn = Box<dyn FnOnce(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

/// A value flowing through a forward pass.
#[derive(Clone, Debug)]
pub struct Var {
    value: Arc<Tensor>,
    node: Option<NodeId>,
}

impl Var {
    /// A value that never receives a gradient.
    pub fn constant(t: Tensor) -> Self {
        Self {
            value: Arc::new(t),
            node: None,
        }
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn shared(&self) -> Arc<Tensor> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn dims4(&self) -> [usize; 4] {
        self.value.dims4()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub fn into_tensor(self) -> Tensor {
        Arc::try_unwrap(self.value).unwrap_or_else(|shared| (*shared).clone())
    }
}

enum Node {
    Leaf,
    Op {
        parents: Vec<Option<NodeId>>,
        backward: Option<BackwardFn>,
    },
}

pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(NodeId, ParamId)>,
    enabled: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            enabled: true,
        }
    }

    /// A graph that records nothing; every op returns a constant.
    pub fn inference() -> Self {
        Self {
            enabled: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives a gradient (used for inputs in gradient checks).
    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.leaf_shared(Arc::new(t))
    }

    pub fn leaf_shared(&mut self, value: Arc<Tensor>) -> Var {
        if !self.enabled {
            return Var { value, node: None };
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf);
        Var {
            value,
            node: Some(id),
        }
    }

    pub fn param(&mut self, id: ParamId, value: Arc<Tensor>) -> Var {
        let var = self.leaf_shared(value);
        if let Some(node) = var.node {
            self.params.push((node, id));
        }
        var
    }

    pub fn push_op(&mut self, value: Tensor, parents: &[&Var], backward: BackwardFn) -> Var {
        let parent_ids: Vec<Option<NodeId>> = parents.iter().map(|p| p.node).collect();
        if !self.enabled || parent_ids.iter().all(Option::is_none) {
            return Var::constant(value);
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Op {
            parents: parent_ids,
            backward: Some(backward),
        });
        Var {
            value: Arc::new(value),
            node: Some(id),
        }
    }

    /// Back-propagates `seed` (the gradient of the objective w.r.t. `root`)
    /// and consumes the tape.
    pub fn backward(mut self, root: &Var, seed: Tensor) -> Gradients {
        assert_eq!(root.shape(), seed.shape(), "seed gradient shape mismatch");
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        let Some(root_id) = root.node else {
            return Gradients::default();
        };
        grads[root_id] = Some(seed);

        for id in (0..=root_id).rev() {
            let Node::Op { parents, backward } = &mut self.nodes[id] else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                // unreachable from the root; drop saved tensors early
                backward.take();
                continue;
            };
            let needs: Vec<bool> = parents.iter().map(Option::is_some).collect();
            let backward = backward.take().expect("backward already consumed");
            let parent_grads = backward(&grad, &needs);
            debug_assert_eq!(parent_grads.len(), parents.len());
            for (parent, pg) in parents.iter().zip(parent_grads) {
                let (Some(pid), Some(pg)) = (parent, pg) else {
                    continue;
                };
                match &mut grads[*pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }

        let mut by_node = HashMap::new();
        for (id, g) in grads.into_iter().enumerate() {
            if let (Some(g), Node::Leaf) = (g, &self.nodes[id]) {
                by_node.insert(id, g);
            }
        }
        let mut by_param: HashMap<ParamId, Tensor> = HashMap::new();
        for (node, pid) in &self.params {
            if let Some(g) = by_node.remove(node) {
                match by_param.get_mut(pid) {
                    Some(acc) => acc.add_assign(&g),
                    None => {
                        by_param.insert(*pid, g);
                    }
                }
            }
        }
        Gradients { by_node, by_param }
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

/// Leaf gradients produced by [`Graph::backward`].
#[derive(Default, Debug)]
pub struct Gradients {
    by_node: HashMap<NodeId, Tensor>,
    by_param: HashMap<ParamId, Tensor>,
}

impl Gradients {
    /// Gradient of a non-parameter leaf created with [`Graph::leaf`].
    pub fn of(&self, var: &Var) -> Option<&Tensor> {
        var.node.and_then(|n| self.by_node.get(&n))
    }

    pub fn param(&self, id: ParamId) -> Option<&Tensor> {
        self.by_param.get(&id)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.by_param.iter().map(|(k, v)| (*k, v))
    }

    pub fn is_finite(&self) -> bool {
        self.by_param
            .values()
            .all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}
