use std::sync::Arc;

use crate::error::{Error, Result};

use super::params::{ParamId, ParamStore};
use super::primitive::Primitive;
use super::rng::RandomStream;
use super::tensor::{Precision, Tensor};

/// Something that can evaluate primitives: either recording them for
/// backpropagation ([`Tape`](super::Tape)) or just computing values ([`Eval`]).
///
/// Model code is written once against this trait.
pub trait Graph {
    type Var: Clone;

    fn precision(&self) -> Precision;
    fn param(&mut self, id: ParamId) -> Self::Var;
    fn constant(&mut self, t: Tensor) -> Self::Var;
    fn value<'a>(&'a self, v: &'a Self::Var) -> &'a Tensor;
    fn apply(&mut self, prim: Primitive, inputs: &[&Self::Var]) -> Result<Self::Var>;

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::MatMul { ta: false, tb: false }, &[a, b])
    }

    /// `aᵀ · b`
    fn matmul_tn(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::MatMul { ta: true, tb: false }, &[a, b])
    }

    /// `a · bᵀ`
    fn matmul_nt(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::MatMul { ta: false, tb: true }, &[a, b])
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::Add, &[a, b])
    }

    fn add_n(&mut self, xs: &[&Self::Var]) -> Result<Self::Var> {
        self.apply(Primitive::Add, xs)
    }

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::Mul, &[a, b])
    }

    fn outer(&mut self, u: &Self::Var, v: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::Outer, &[u, v])
    }

    fn tanh(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::Tanh, &[x])
    }

    fn sigmoid(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::Sigmoid, &[x])
    }

    fn softmax(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::Softmax, &[x])
    }

    fn concat(&mut self, xs: &[&Self::Var]) -> Result<Self::Var> {
        self.apply(Primitive::Concat, xs)
    }

    fn slice(&mut self, x: &Self::Var, start: usize, len: usize) -> Result<Self::Var> {
        self.apply(Primitive::Slice { start, len }, &[x])
    }

    fn sum(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::Sum, &[x])
    }

    fn scale(&mut self, x: &Self::Var, c: f64) -> Result<Self::Var> {
        self.apply(Primitive::Scale(c), &[x])
    }

    fn embed(&mut self, table: &Self::Var, id: u32) -> Result<Self::Var> {
        self.apply(Primitive::EmbedLookup(id), &[table])
    }

    fn scale_columns(&mut self, m: &Self::Var, v: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::ScaleColumns, &[m, v])
    }

    fn stack_rows(&mut self, xs: &[&Self::Var]) -> Result<Self::Var> {
        self.apply(Primitive::StackRows, xs)
    }

    fn scatter_add(&mut self, x: &Self::Var, ids: Arc<[u32]>, size: usize) -> Result<Self::Var> {
        self.apply(Primitive::ScatterAdd { ids, size }, &[x])
    }

    fn mix(&mut self, gate: &Self::Var, dists: &[&Self::Var]) -> Result<Self::Var> {
        let mut inputs = Vec::with_capacity(dists.len() + 1);
        inputs.push(gate);
        inputs.extend_from_slice(dists);
        self.apply(Primitive::Mix, &inputs)
    }

    fn log(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Primitive::Log, &[x])
    }

    fn pick(&mut self, x: &Self::Var, i: usize) -> Result<Self::Var> {
        self.apply(Primitive::Pick(i), &[x])
    }

    fn cross_entropy(&mut self, logits: &Self::Var, target: usize) -> Result<Self::Var> {
        self.apply(Primitive::CrossEntropy(target), &[logits])
    }

    fn rescale_to_norm(&mut self, x: &Self::Var, target: f64) -> Result<Self::Var> {
        self.apply(Primitive::RescaleToNorm(target), &[x])
    }

    /// Inverted dropout: zero each entry with probability `rate` and scale
    /// survivors by `1/(1−rate)`. Identity when `rate == 0`.
    fn dropout(&mut self, x: &Self::Var, rate: f64, rng: &mut RandomStream) -> Result<Self::Var> {
        if rate <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 / (1.0 - rate);
        let t = self.value(x);
        let shape = t.shape().to_vec();
        let mask: Vec<f64> = (0..t.len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
            .collect();
        let mask = self.constant(Tensor::new(shape, mask)?);
        self.apply(Primitive::DropoutMaskApply, &[x, &mask])
    }
}

/// Runs a primitive, rounds to the working precision and rejects non-finite output.
pub(crate) fn evaluate(prim: &Primitive, inputs: &[&Tensor], precision: Precision) -> Result<Tensor> {
    let (shape, mut data) = prim.forward(inputs)?;
    precision.round_slice(&mut data);
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow { op: prim.tag() });
    }
    Ok(Tensor::from_parts(shape, data))
}

/// Forward-only evaluation; nothing is recorded.
pub struct Eval<'p> {
    params: &'p ParamStore,
    precision: Precision,
}

impl<'p> Eval<'p> {
    pub fn new(params: &'p ParamStore, precision: Precision) -> Self {
        Eval { params, precision }
    }
}

impl Graph for Eval<'_> {
    type Var = Tensor;

    fn precision(&self) -> Precision {
        self.precision
    }

    fn param(&mut self, id: ParamId) -> Tensor {
        self.params.get(id).clone()
    }

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn apply(&mut self, prim: Primitive, inputs: &[&Tensor]) -> Result<Tensor> {
        evaluate(&prim, inputs, self.precision)
    }
}
