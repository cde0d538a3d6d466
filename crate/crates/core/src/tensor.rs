//! Dense f64 tensors recorded on a per-forward-pass differentiation graph.
//!
//! A [`Graph`] is a tape of recorded operations. Tensors created through
//! [`Graph::leaf`] or produced by an operation on a recorded tensor carry a
//! node handle; plain [`Tensor::from_vec`] constants do not and never receive
//! gradients. The tape is rebuilt for every forward pass.

use alloc::boxed::Box;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;

use crate::error::{Error, Result};

/// Adjoint rule of one recorded operation: maps the output gradient to
/// `(parent node id, parent gradient)` contributions.
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<(usize, Vec<f64>)>>;

struct Node {
    size: usize,
    /// `None` for leaves.
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct GraphInner {
    nodes: Vec<Node>,
}

/// Tape of recorded operations. Cheap to clone (shared handle).
#[derive(Clone, Default)]
pub struct Graph {
    inner: Rc<RefCell<GraphInner>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Record a differentiable leaf. Its gradient is available from
    /// [`GradMap`] after a backward pass.
    pub fn leaf(&self, shape: &[usize], values: Vec<f64>) -> Tensor {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "leaf shape {:?} does not match {} values",
            shape,
            values.len()
        );
        let id = self.push_node(values.len(), None);
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(values),
            node: Some((self.clone(), id)),
        }
    }

    pub(crate) fn push_node(&self, size: usize, backward: Option<BackwardFn>) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.nodes.push(Node { size, backward });
        inner.nodes.len() - 1
    }

    fn same_as(&self, other: &Graph) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Dense row-major f64 array, optionally recorded on a [`Graph`].
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<(Graph, usize)>,
}

impl Tensor {
    /// Constant tensor: participates in forward computation but never
    /// accumulates a gradient.
    pub fn from_vec(shape: &[usize], values: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape {:?} does not match {} values",
            shape,
            values.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data: Rc::new(values),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor::from_vec(shape, vec![0.0; n])
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Tensor::from_vec(shape, vec![v; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Whether gradients flow into or through this tensor.
    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|(_, id)| *id)
    }

    pub(crate) fn data_rc(&self) -> Rc<Vec<f64>> {
        Rc::clone(&self.data)
    }

    /// Same values, different shape; shares the graph node (reshape is a
    /// pure relabeling of extents).
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::DimMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Rc::clone(&self.data),
            node: self.node.clone(),
        })
    }
}

impl core::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("recorded", &self.node.is_some())
            .finish()
    }
}

/// Resolve the single graph shared by all recorded operands.
///
/// Panics if operands were recorded on two different graphs; mixing tapes is
/// a programming error, not a data error.
pub(crate) fn merge_graphs(inputs: &[&Tensor]) -> Option<Graph> {
    let mut found: Option<Graph> = None;
    for t in inputs {
        if let Some((g, _)) = &t.node {
            match &found {
                None => found = Some(g.clone()),
                Some(f) => assert!(f.same_as(g), "operands recorded on different graphs"),
            }
        }
    }
    found
}

/// Build an op result: records a node when any input is recorded.
pub(crate) fn op_result(
    shape: Vec<usize>,
    values: Vec<f64>,
    inputs: &[&Tensor],
    make_backward: impl FnOnce() -> BackwardFn,
) -> Tensor {
    debug_assert_eq!(shape.iter().product::<usize>(), values.len());
    let graph = merge_graphs(inputs);
    let data = Rc::new(values);
    let node = graph.map(|g| {
        let id = g.push_node(data.len(), Some(make_backward()));
        (g, id)
    });
    Tensor { shape, data, node }
}

/// Gradients produced by [`backward`], indexed by graph node.
pub struct GradMap {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradMap {
    /// Gradient of the backward root with respect to `t`, if any reached it.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        let id = t.node_id()?;
        self.grads.get(id)?.as_deref()
    }
}

/// Reverse pass from a scalar root: every recorded node reachable from the
/// root receives its total derivative. Visits nodes exactly once, in reverse
/// recording order.
pub fn backward(root: &Tensor) -> Result<GradMap> {
    if root.numel() != 1 {
        return Err(Error::Usage(alloc::format!(
            "backward root must be scalar, got shape {:?}",
            root.shape()
        )));
    }
    let (graph, root_id) = match &root.node {
        Some((g, id)) => (g.clone(), *id),
        None => {
            return Err(Error::Usage(
                "backward root is a constant; nothing was recorded".into(),
            ))
        }
    };

    let inner = graph.inner.borrow();
    let mut grads: Vec<Option<Vec<f64>>> = vec![None; inner.nodes.len()];
    grads[root_id] = Some(vec![1.0]);

    for id in (0..=root_id).rev() {
        let Some(g_out) = grads[id].clone() else {
            continue;
        };
        if let Some(bwd) = &inner.nodes[id].backward {
            for (pid, contrib) in bwd(&g_out) {
                debug_assert!(pid < id, "adjoint points forward in the tape");
                debug_assert_eq!(contrib.len(), inner.nodes[pid].size);
                match &mut grads[pid] {
                    Some(acc) => {
                        for (a, c) in acc.iter_mut().zip(&contrib) {
                            *a += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            }
        }
    }
    Ok(GradMap { grads })
}
