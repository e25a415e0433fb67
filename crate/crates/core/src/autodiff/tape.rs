use std::cell::{Cell, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use super::ops::Op;
use super::{AutodiffError, ParamStore, Tensor};

pub(crate) struct Node {
    pub value: Rc<Tensor>,
    pub requires_grad: bool,
    pub op: Op,
    pub name: Option<String>,
}

/// A recording of one forward computation.
///
/// Every operation on a [`Var`] appends a node; [`Tape::backward`] walks the
/// nodes in reverse and consumes the recording. A tape is confined to one
/// thread.
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
    consumed: Cell<bool>,
    track_kinks: bool,
    kink_hash: Cell<u64>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
            track_kinks: false,
            kink_hash: Cell::new(FNV_OFFSET),
        }
    }

    /// A tape that fingerprints which side of each non-differentiable point
    /// (leaky ReLU and ELU at 0, clamp floors) every input falls on. Two
    /// evaluations with equal [`Tape::kink_signature`] saw the same branches.
    pub fn with_kink_tracking() -> Self {
        Tape {
            track_kinks: true,
            ..Self::new()
        }
    }

    pub fn kink_signature(&self) -> u64 {
        self.kink_hash.get()
    }

    pub(crate) fn record_kinks(&self, bits: impl Iterator<Item = bool>) {
        if !self.track_kinks {
            return;
        }
        let mut h = self.kink_hash.get();
        for b in bits {
            h = (h ^ (b as u64 + 1)).wrapping_mul(FNV_PRIME);
        }
        h = (h ^ 0xff).wrapping_mul(FNV_PRIME);
        self.kink_hash.set(h);
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that is not differentiated.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push_node(Rc::new(value), Op::Leaf, false, None)
    }

    /// An anonymous differentiable input.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push_node(Rc::new(value), Op::Leaf, true, None)
    }

    /// Places the named parameter of `store` on the tape as a differentiable leaf.
    pub fn param<'t>(&'t self, store: &ParamStore, name: &str) -> Result<Var<'t>, AutodiffError> {
        let value = store
            .value(name)
            .ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        Ok(self.push_node(Rc::new(value.clone()), Op::Leaf, true, Some(name.to_string())))
    }

    fn push_node(&self, value: Rc<Tensor>, op: Op, requires_grad: bool, name: Option<String>) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            requires_grad,
            op,
            name,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends the result of an operation, rejecting non-finite values.
    pub(crate) fn push_op(&self, value: Tensor, op: Op, what: &'static str) -> Result<Var<'_>, AutodiffError> {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite(what));
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            op.parents().iter().any(|&p| nodes[p].requires_grad)
        };
        let op = if requires_grad { op } else { Op::Leaf };
        Ok(self.push_node(Rc::new(value), op, requires_grad, None))
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    /// Reverse pass from a scalar `loss`. Returns the gradient of every
    /// differentiable leaf on the tape; leaves that do not influence the
    /// loss receive zeros.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(AutodiffError::ForeignVar);
        }
        if self.consumed.get() {
            return Err(AutodiffError::AlreadyConsumed);
        }
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(nodes[loss.id].value.shape().to_vec()));
        }
        self.consumed.set(true);

        let mut buf = GradBuf {
            grads: (0..nodes.len()).map(|_| None).collect(),
            wants: nodes.iter().map(|n| n.requires_grad).collect(),
            sizes: nodes.iter().map(|n| n.value.len()).collect(),
        };
        if nodes[loss.id].requires_grad {
            buf.grads[loss.id] = Some(vec![1.0]);
        }

        let mut out = Gradients::default();
        for id in (0..=loss.id).rev() {
            let Some(g) = buf.grads[id].take() else { continue };
            let node = &nodes[id];
            match &node.op {
                Op::Leaf => {
                    let t = Tensor::from_parts(node.value.shape().to_vec(), g);
                    out.insert(id, node.name.clone(), t);
                }
                op => op.backward(&nodes, &node.value, &g, &mut buf),
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && !out.by_id.contains_key(&id) {
                out.insert(id, node.name.clone(), Tensor::zeros(node.value.shape()));
            }
        }
        Ok(out)
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Gradient accumulators used during the reverse pass.
pub(crate) struct GradBuf {
    grads: Vec<Option<Vec<f64>>>,
    wants: Vec<bool>,
    sizes: Vec<usize>,
}

impl GradBuf {
    pub fn wants(&self, id: usize) -> bool {
        self.wants[id]
    }

    /// Mutable accumulator for node `id`, created zeroed on first use.
    pub fn slot(&mut self, id: usize) -> &mut [f64] {
        let size = self.sizes[id];
        self.grads[id].get_or_insert_with(|| vec![0.0; size])
    }

    pub fn add(&mut self, id: usize, contrib: &[f64]) {
        if !self.wants[id] {
            return;
        }
        for (a, c) in self.slot(id).iter_mut().zip(contrib) {
            *a += c;
        }
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    by_id: BTreeMap<usize, Tensor>,
    names: BTreeMap<String, usize>,
}

impl Gradients {
    fn insert(&mut self, id: usize, name: Option<String>, t: Tensor) {
        if let Some(name) = name {
            self.names.insert(name, id);
        }
        self.by_id.insert(id, t);
    }

    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_id.get(&var.id)
    }

    /// Gradient of the parameter leaf placed with [`Tape::param`].
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.get(name).and_then(|id| self.by_id.get(id))
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|(n, id)| (n.as_str(), &self.by_id[id]))
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl<'t> std::fmt::Debug for Var<'t> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{} {:?}", self.id, self.value())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    /// The value of a one-element result.
    pub fn item(&self) -> Result<f64, AutodiffError> {
        self.value().item()
    }

    pub(crate) fn same_tape(&self, other: &Var<'_>) -> Result<(), AutodiffError> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(AutodiffError::ForeignVar)
        }
    }
}
