use super::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a local-gradient closure sees during the backward pass.
pub struct BackwardCtx<'a> {
    /// Upstream gradient, shaped like `output`.
    pub grad: &'a Tensor,
    pub output: &'a Tensor,
    pub inputs: &'a [&'a Tensor],
    /// `needs[i]` is false when input `i` does not require a gradient; the
    /// closure may return `None` for it.
    pub needs: &'a [bool],
}

pub type BackwardFn = Box<dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>>>;

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    backward: Option<BackwardFn>,
    requires_grad: bool,
    label: &'static str,
}

/// Reverse-mode gradient tape.
///
/// Nodes are appended in evaluation order, so every node's inputs precede it.
/// A node is only given a backward closure when at least one of its inputs
/// requires a gradient; everything else is a constant.
pub struct Tape {
    nodes: Vec<Node>,
    kink_margin: f64,
    corrupt: Option<&'static str>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            kink_margin: f64::INFINITY,
            corrupt: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf that participates in differentiation.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            backward: None,
            requires_grad,
            label: "leaf",
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn label(&self, v: Var) -> &'static str {
        self.nodes[v.0].label
    }

    /// Copy of `v` cut off from the gradient graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    /// Smallest distance, over every piecewise op recorded so far, between an
    /// evaluated input and the nearest non-differentiable point.
    pub fn kink_margin(&self) -> f64 {
        self.kink_margin
    }

    pub(crate) fn note_kink_margin(&mut self, margin: f64) {
        if margin < self.kink_margin {
            self.kink_margin = margin;
        }
    }

    /// Test hook: scale the local gradients of every node labelled `label` by
    /// 1.01 so that gradient checks can be shown to fail.
    pub fn corrupt_gradients_of(&mut self, label: &'static str) {
        self.corrupt = Some(label);
    }

    /// Append a computed node. `backward` returns one optional gradient per
    /// input, in input order.
    pub fn record<F>(
        &mut self,
        label: &'static str,
        value: Tensor,
        inputs: &[Var],
        backward: F,
    ) -> Result<Var>
    where
        F: Fn(&BackwardCtx<'_>) -> Vec<Option<Tensor>> + 'static,
    {
        if !value.all_finite() {
            return Err(Error::NonFinite(label.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let (inputs, backward) = if requires_grad {
            (inputs.to_vec(), Some(Box::new(backward) as BackwardFn))
        } else {
            (Vec::new(), None)
        };
        self.nodes.push(Node {
            value,
            inputs,
            backward,
            requires_grad,
            label,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Gradient of the scalar `loss` with respect to every node that
    /// requires one. Each node is visited once, in reverse recording order.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NotScalar(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if root.requires_grad {
            grads[loss.0] = Some(Tensor::ones(root.value.shape().to_vec()));
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            let Some(bw) = &node.backward else { continue };
            let Some(g) = grads[id].take() else { continue };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|v| &self.nodes[v.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| self.nodes[v.0].requires_grad)
                .collect();
            let ctx = BackwardCtx {
                grad: &g,
                output: &node.value,
                inputs: &inputs,
                needs: &needs,
            };
            let local = bw(&ctx);
            debug_assert_eq!(local.len(), node.inputs.len(), "{}", node.label);
            let scale = (self.corrupt == Some(node.label)).then_some(1.01);
            for ((v, need), lg) in node.inputs.iter().zip(&needs).zip(local) {
                let (true, Some(mut lg)) = (*need, lg) else { continue };
                debug_assert_eq!(lg.shape(), self.nodes[v.0].value.shape(), "{}", node.label);
                if let Some(s) = scale {
                    lg.data_mut().iter_mut().for_each(|x| *x *= s);
                }
                match &mut grads[v.0] {
                    Some(acc) => acc.add_assign(&lg),
                    slot @ None => *slot = Some(lg),
                }
            }
        }
        // Only leaf gradients survive; interior buffers were consumed above.
        let mut disconnected = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if node.backward.is_none() && node.requires_grad && grads[id].is_none() && id <= loss.0 {
                disconnected.push(Var(id));
            }
        }
        if !disconnected.is_empty() {
            log::debug!("{} leaves are disconnected from the loss", disconnected.len());
        }
        Ok(Gradients {
            grads,
            disconnected,
        })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    disconnected: Vec<Var>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like it when `v` never reached the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.shape(v).to_vec()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Leaves that require a gradient but do not influence the loss.
    pub fn disconnected(&self) -> &[Var] {
        &self.disconnected
    }
}
