use crate::error::{Error, Result};

use super::graph::{evaluate, Graph};
use super::params::{ParamId, ParamStore};
use super::primitive::{Grad, Primitive};
use super::tensor::{Precision, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Source {
    Param(ParamId),
    Constant,
    Op { prim: Primitive, inputs: Vec<NodeId> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    source: Source,
    requires_grad: bool,
}

/// Computation record for one forward pass.
///
/// Nodes are appended in evaluation order, so the list is topologically
/// sorted and every non-leaf node is produced by exactly one primitive.
/// Each parameter gets a single leaf node, created on first use.
pub struct Tape<'p> {
    params: &'p ParamStore,
    precision: Precision,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

/// Gradient for every parameter in a [`ParamStore`], in id order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(pub Vec<Tensor>);

impl Gradients {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients(params.ids().map(|id| Tensor::zeros(params.get(id).shape())).collect())
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Elementwise sum, folding left to right so the result does not depend
    /// on how the parts were computed.
    pub fn sum_ordered<'a>(parts: impl IntoIterator<Item = &'a Gradients>, params: &ParamStore) -> Gradients {
        let mut acc: Vec<Vec<f64>> = params.ids().map(|id| vec![0.0; params.get(id).len()]).collect();
        for part in parts {
            for (a, g) in acc.iter_mut().zip(&part.0) {
                for (x, y) in a.iter_mut().zip(g.data()) {
                    *x += y;
                }
            }
        }
        Gradients(
            acc.into_iter()
                .zip(params.ids())
                .map(|(d, id)| Tensor::from_parts(params.get(id).shape().to_vec(), d))
                .collect(),
        )
    }

    pub fn scaled(&self, c: f64) -> Gradients {
        Gradients(
            self.0
                .iter()
                .map(|t| Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|v| v * c).collect()))
                .collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore, precision: Precision) -> Self {
        Tape {
            params,
            precision,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, source: Source, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            source,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Reverse-mode sweep from `loss`. Parameters that do not influence the
    /// loss receive exact zeros.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NotScalar(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out: Vec<Vec<f64>> = self
            .params
            .ids()
            .map(|id| vec![0.0; self.params.get(id).len()])
            .collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.source {
                Source::Param(pid) => {
                    for (a, b) in out[pid.0].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Source::Constant => {}
                Source::Op { prim, inputs } => {
                    let values: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
                    let needs: Vec<bool> = inputs.iter().map(|i| self.nodes[i.0].requires_grad).collect();
                    let contributions = prim.backward(&values, &node.value, &g, &needs);
                    for (input, contrib) in inputs.iter().zip(contributions) {
                        let Some(contrib) = contrib else { continue };
                        let width = self.nodes[input.0].value.len();
                        let slot = grads[input.0].get_or_insert_with(|| vec![0.0; width]);
                        match contrib {
                            Grad::Dense(d) => {
                                for (a, b) in slot.iter_mut().zip(&d) {
                                    *a += b;
                                }
                            }
                            Grad::Row { row, values } => {
                                let start = row * values.len();
                                for (a, b) in slot[start..start + values.len()].iter_mut().zip(&values) {
                                    *a += b;
                                }
                            }
                        }
                    }
                }
            }
        }

        for v in out.iter().flatten() {
            if !v.is_finite() {
                return Err(Error::NumericOverflow { op: "backprop" });
            }
        }
        Ok(Gradients(
            out.into_iter()
                .zip(self.params.ids())
                .map(|(d, id)| Tensor::from_parts(self.params.get(id).shape().to_vec(), d))
                .collect(),
        ))
    }

    /// Primitive tags in recorded order.
    pub fn primitive_tags(&self) -> Vec<&'static str> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.source {
                Source::Op { prim, .. } => Some(prim.tag()),
                _ => None,
            })
            .collect()
    }
}

impl Graph for Tape<'_> {
    type Var = NodeId;

    fn precision(&self) -> Precision {
        self.precision
    }

    fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes[id.0] {
            return n;
        }
        let value = self.params.get(id).clone();
        let n = self.push(value, Source::Param(id), true);
        self.param_nodes[id.0] = Some(n);
        n
    }

    fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, Source::Constant, false)
    }

    fn value<'a>(&'a self, v: &'a NodeId) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn apply(&mut self, prim: Primitive, inputs: &[&NodeId]) -> Result<NodeId> {
        let values: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let out = evaluate(&prim, &values, self.precision)?;
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        let inputs = inputs.iter().map(|&&i| i).collect();
        Ok(self.push(out, Source::Op { prim, inputs }, requires_grad))
    }
}
