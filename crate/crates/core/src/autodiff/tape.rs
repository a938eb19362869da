use std::cell::RefCell;
use std::rc::Rc;

use super::ops::Op;
use super::{Array, AutodiffError};

/// Append-only record of primitive operations.
///
/// A tape and the tensors recorded on it are single-owner: it is `!Send`, and
/// distinct tapes can live on different threads. Nodes are pushed in
/// evaluation order, so node `i` only ever references inputs with index `< i`.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

struct TapeInner {
    nodes: Vec<Node>,
    recording: bool,
}

pub(crate) struct Node {
    pub(crate) op: Op,
    pub(crate) value: Rc<Array>,
}

/// Handle on a recorded node. Tensors held by callers own their tape;
/// operands stored inside the tape leave `tape` empty, since an owning
/// reference there would form a cycle and keep the tape alive forever.
#[derive(Clone)]
pub(crate) struct NodeRef {
    pub(crate) tape: Option<Tape>,
    pub(crate) id: usize,
}

/// A value that may participate in differentiation.
///
/// Tensors created with `requires_grad` (leaves) or computed from such tensors
/// while the tape is recording carry a node handle; everything else is a
/// constant.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) value: Rc<Array>,
    pub(crate) node: Option<NodeRef>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            inner: Rc::new(RefCell::new(TapeInner {
                nodes: Vec::new(),
                recording: true,
            })),
        }
    }

    /// Registers a differentiable leaf.
    pub fn leaf(&self, value: Array) -> Tensor {
        self.push(Op::Leaf, Rc::new(value))
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn is_recording(&self) -> bool {
        self.inner.borrow().recording
    }

    pub(crate) fn set_recording(&self, on: bool) -> bool {
        std::mem::replace(&mut self.inner.borrow_mut().recording, on)
    }

    pub(crate) fn push(&self, mut op: Op, value: Rc<Array>) -> Tensor {
        op.for_each_input_mut(|t| {
            if let Some(n) = &mut t.node {
                n.tape = None;
            }
        });
        let id = {
            let mut inner = self.inner.borrow_mut();
            inner.nodes.push(Node {
                op,
                value: Rc::clone(&value),
            });
            inner.nodes.len() - 1
        };
        Tensor {
            value,
            node: Some(NodeRef {
                tape: Some(self.clone()),
                id,
            }),
        }
    }

    pub(crate) fn same(&self, other: &Tape) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }

    /// Clones the operation and output of node `id` out of the tape so the
    /// caller can record new nodes while using them.
    pub(crate) fn node_parts(&self, id: usize) -> (Op, Rc<Array>) {
        let inner = self.inner.borrow();
        let node = &inner.nodes[id];
        let mut op = node.op.clone();
        op.for_each_input_mut(|t| {
            if let Some(n) = &mut t.node {
                n.tape = Some(self.clone());
            }
        });
        (op, Rc::clone(&node.value))
    }

    pub(crate) fn input_ids(&self, id: usize, out: &mut Vec<usize>) {
        out.clear();
        self.inner.borrow().nodes[id].op.for_each_input(|t| {
            if let Some(n) = &t.node {
                out.push(n.id);
            }
        });
    }
}

impl Tensor {
    /// Wraps a value that never receives gradients.
    pub fn constant(value: Array) -> Self {
        Self {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::constant(Array::scalar(value))
    }

    pub fn value(&self) -> &Array {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// The single element of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn tape(&self) -> Option<&Tape> {
        self.node.as_ref().and_then(|n| n.tape.as_ref())
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            value: Rc::clone(&self.value),
            node: None,
        }
    }

    pub(crate) fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

/// Gradients returned by [`grad`]. `unreachable` lists the positions of `wrt`
/// tensors that the output does not depend on; those entries are zero-filled.
#[derive(Debug)]
pub struct Grads {
    pub values: Vec<Tensor>,
    pub unreachable: Vec<usize>,
}

impl Grads {
    pub fn into_vec(self) -> Vec<Tensor> {
        self.values
    }
}

impl std::ops::Index<usize> for Grads {
    type Output = Tensor;
    fn index(&self, i: usize) -> &Tensor {
        &self.values[i]
    }
}

/// Restores the tape's recording flag when a backward pass finishes or unwinds.
struct RecordingGuard<'a> {
    tape: &'a Tape,
    previous: bool,
}

impl Drop for RecordingGuard<'_> {
    fn drop(&mut self) {
        self.tape.set_recording(self.previous);
    }
}

/// Reverse-mode gradient of a scalar `output` with respect to each tensor in `wrt`.
///
/// With `create_graph` the backward computation is itself recorded, so the
/// returned gradients can be differentiated again.
pub fn grad(output: &Tensor, wrt: &[Tensor], create_graph: bool) -> Result<Grads, AutodiffError> {
    if output.len() != 1 {
        return Err(AutodiffError::NonScalarOutput {
            shape: output.shape().to_vec(),
        });
    }
    for (i, w) in wrt.iter().enumerate() {
        if !w.requires_grad() {
            return Err(AutodiffError::NotDifferentiable { position: i });
        }
    }

    let zeros = |w: &Tensor| Tensor::constant(Array::zeros(w.shape()));
    let Some(out_node) = &output.node else {
        return Ok(Grads {
            values: wrt.iter().map(zeros).collect(),
            unreachable: (0..wrt.len()).collect(),
        });
    };
    let tape = out_node.tape.as_ref().ok_or(AutodiffError::ForeignTape)?;
    let end = out_node.id;
    if wrt.iter().any(|w| !w.tape().is_some_and(|t| t.same(tape))) {
        return Err(AutodiffError::ForeignTape);
    }

    // Forward sweep: which nodes depend on any `wrt` tensor.
    let mut depends = vec![false; end + 1];
    let mut is_target = vec![false; end + 1];
    for w in wrt {
        let id = w.node_id().unwrap_or(usize::MAX);
        if id <= end {
            depends[id] = true;
            is_target[id] = true;
        }
    }
    let first = wrt.iter().filter_map(Tensor::node_id).min().unwrap_or(end);
    let mut scratch = Vec::new();
    for id in first..=end {
        if depends[id] {
            continue;
        }
        tape.input_ids(id, &mut scratch);
        depends[id] = scratch.iter().any(|&i| depends[i]);
    }

    let mut results: Vec<Option<Tensor>> = vec![None; end + 1];
    if !depends[end] {
        return Ok(Grads {
            values: wrt.iter().map(zeros).collect(),
            unreachable: (0..wrt.len()).collect(),
        });
    }

    let _guard = RecordingGuard {
        previous: tape.set_recording(create_graph),
        tape,
    };
    let mut pending: Vec<Option<Tensor>> = vec![None; end + 1];
    pending[end] = Some(Tensor::constant(Array::full(output.shape(), 1.0)));

    for id in (first..=end).rev() {
        let Some(g) = pending[id].take() else {
            continue;
        };
        if is_target[id] {
            results[id] = Some(g.clone());
        }
        let (op, value) = tape.node_parts(id);
        if matches!(op, Op::Leaf) {
            continue;
        }
        let this = Tensor {
            value,
            node: Some(NodeRef {
                tape: Some(tape.clone()),
                id,
            }),
        };
        let input_grads = op.vjp(&this, &g, &|t: &Tensor| {
            t.node_id().is_some_and(|i| depends[i])
        });
        let mut k = 0;
        op.for_each_input(|input| {
            let gi = input_grads[k].clone();
            k += 1;
            let (Some(gi), Some(n)) = (gi, &input.node) else {
                return;
            };
            if !depends[n.id] {
                return;
            }
            pending[n.id] = Some(match pending[n.id].take() {
                Some(acc) => super::ops::add_unchecked(&acc, &gi),
                None => gi,
            });
        });
    }

    let mut unreachable = Vec::new();
    let values = wrt
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let id = w.node_id().unwrap_or(usize::MAX);
            match results.get(id).cloned().flatten() {
                Some(g) => g,
                None => {
                    unreachable.push(i);
                    zeros(w)
                }
            }
        })
        .collect();
    if !unreachable.is_empty() {
        log::warn!(
            "grad: {} target(s) unreachable from output, returning zeros",
            unreachable.len()
        );
    }
    Ok(Grads {
        values,
        unreachable,
    })
}
