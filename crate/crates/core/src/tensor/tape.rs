use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Local gradient rule of a recorded operation.
///
/// `grad` is the gradient flowing into the operation's output; the
/// implementation returns one entry per input, `None` for inputs that do not
/// need a gradient (`needs[i] == false`).
pub trait BackwardOp {
    fn backward(
        &self,
        grad: &[f64],
        inputs: &[&Tensor],
        output: &Tensor,
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    op: Option<Box<dyn BackwardOp>>,
    requires_grad: bool,
    trainable: bool,
}

/// Linear record of operations for one forward pass.
///
/// Nodes are appended in execution order, so every node's inputs precede it
/// and a single reverse sweep is a valid topological traversal.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    track_branches: bool,
    branch_signature: u64,
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            track_branches: false,
            branch_signature: FNV_OFFSET,
        }
    }

    /// A tape that fingerprints every piecewise branch taken (relu signs,
    /// max-pool winners). Two evaluations with equal signatures went through
    /// the same smooth piece of the function.
    pub fn with_branch_tracking() -> Self {
        Tape {
            track_branches: true,
            ..Tape::new()
        }
    }

    pub fn tracks_branches(&self) -> bool {
        self.track_branches
    }

    pub fn branch_signature(&self) -> u64 {
        self.branch_signature
    }

    pub(crate) fn note_branches(&mut self, words: impl IntoIterator<Item = u64>) {
        if !self.track_branches {
            return;
        }
        let mut h = self.branch_signature;
        for w in words {
            for byte in w.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(FNV_PRIME);
            }
        }
        self.branch_signature = h;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant input. It never receives a gradient.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, false, false)
    }

    /// Records a trainable input. After [`Tape::backward`] it always has a
    /// gradient, zero when the loss does not depend on it.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_node(value, Vec::new(), None, true, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Appends the result of an operation. The backward rule is dropped when
    /// no input needs a gradient.
    pub fn record(&mut self, value: Tensor, inputs: &[Var], op: impl BackwardOp + 'static) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op: Option<Box<dyn BackwardOp>> = if requires_grad { Some(Box::new(op)) } else { None };
        self.push_node(value, inputs.to_vec(), op, requires_grad, false)
    }

    fn push_node(
        &mut self,
        value: Tensor,
        inputs: Vec<Var>,
        op: Option<Box<dyn BackwardOp>>,
        requires_grad: bool,
        trainable: bool,
    ) -> Var {
        self.nodes.push(Node {
            value,
            inputs,
            op,
            requires_grad,
            trainable,
        });
        Var(self.nodes.len() - 1)
    }

    /// Reverse sweep from a scalar loss, seeded with gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let loss_node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| Error::contract(format!("loss handle {} is not on this tape", loss.0)))?;
        if loss_node.value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {}",
                loss_node.value.shape()
            )));
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(op) = node.op.as_ref() else { continue };
            let Some(grad) = grads[idx].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|v| self.nodes[v.0].requires_grad).collect();
            let local = op.backward(&grad, &inputs, &node.value, &needs);
            debug_assert_eq!(local.len(), node.inputs.len());
            for (input, g) in node.inputs.iter().zip(local) {
                let Some(g) = g else { continue };
                debug_assert_eq!(g.len(), self.nodes[input.0].value.numel());
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
        }

        let mut out: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.trainable {
                out[idx] = Some(
                    grads
                        .get_mut(idx)
                        .and_then(Option::take)
                        .unwrap_or_else(|| vec![0.0; node.value.numel()]),
                );
            }
        }
        Ok(Gradients { grads: out })
    }
}

/// Gradients of the trainable leaves of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}
