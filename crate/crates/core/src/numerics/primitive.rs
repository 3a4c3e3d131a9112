//! The fixed set of differentiable primitives and their kernels.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// A primitive operation. Anything the model computes is a composition of these.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    /// `op(a) · op(b)`, where `op` optionally transposes. A rank-1 `b` is a column.
    MatMul { ta: bool, tb: bool },
    /// Elementwise sum of any number of equally shaped inputs.
    Add,
    /// Elementwise product of two equally shaped inputs.
    Mul,
    /// `u ⊗ v` for vectors `u`, `v`.
    Outer,
    Tanh,
    Sigmoid,
    /// Softmax over a vector.
    Softmax,
    /// Concatenation of vectors (scalars count as length 1).
    Concat,
    Slice { start: usize, len: usize },
    /// Sum of all entries, giving a scalar.
    Sum,
    Scale(f64),
    /// `x ∘ mask`; the mask (second input) receives no gradient.
    DropoutMaskApply,
    /// Row `id` of an embedding table.
    EmbedLookup(u32),
    /// `m · diag(v)`.
    ScaleColumns,
    /// Vectors of equal length stacked as matrix rows.
    StackRows,
    /// Adds entry `s` of the input into slot `ids[s]` of a zero vector of `size`.
    ScatterAdd { ids: Arc<[u32]>, size: usize },
    /// `Σ_k gate[k] · dist_k` for inputs `(gate, dist_1, …, dist_K)`.
    Mix,
    Log,
    /// Entry `i` of a vector, as a scalar.
    Pick(usize),
    /// `−log softmax(logits)[target]`, computed with log-sum-exp.
    CrossEntropy(usize),
    /// `x · target / ‖x‖₂`.
    RescaleToNorm(f64),
}

/// Gradient contribution for one input of a primitive.
#[derive(Debug)]
pub(crate) enum Grad {
    Dense(Vec<f64>),
    /// Only one row of a matrix input is touched.
    Row { row: usize, values: Vec<f64> },
}

/// Norms below this make `RescaleToNorm` undefined.
pub const MIN_RESCALE_NORM: f64 = 1e-12;

impl Primitive {
    pub fn tag(&self) -> &'static str {
        match self {
            Primitive::MatMul { .. } => "matmul",
            Primitive::Add => "add",
            Primitive::Mul => "mul",
            Primitive::Outer => "outer",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::Softmax => "softmax",
            Primitive::Concat => "concat",
            Primitive::Slice { .. } => "slice",
            Primitive::Sum => "sum",
            Primitive::Scale(_) => "scale",
            Primitive::DropoutMaskApply => "dropout-mask-apply",
            Primitive::EmbedLookup(_) => "embed-lookup",
            Primitive::ScaleColumns => "scale-columns",
            Primitive::StackRows => "stack-rows",
            Primitive::ScatterAdd { .. } => "scatter-add",
            Primitive::Mix => "mix",
            Primitive::Log => "log",
            Primitive::Pick(_) => "pick",
            Primitive::CrossEntropy(_) => "cross-entropy",
            Primitive::RescaleToNorm(_) => "rescale-to-norm",
        }
    }

    fn shape_err(&self, lhs: &[usize], rhs: &[usize]) -> Error {
        Error::Shape {
            op: self.tag(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    fn arity(&self, inputs: &[&Tensor], n: usize) -> Result<()> {
        if inputs.len() != n {
            return Err(self.shape_err(&[inputs.len()], &[n]));
        }
        Ok(())
    }

    fn vector_input(&self, t: &Tensor) -> Result<()> {
        if t.rank() > 1 {
            return Err(self.shape_err(t.shape(), &[t.len()]));
        }
        Ok(())
    }

    /// Computes the forward value. The result is not yet rounded or checked for finiteness.
    pub(crate) fn forward(&self, inputs: &[&Tensor]) -> Result<(Vec<usize>, Vec<f64>)> {
        match self {
            Primitive::MatMul { ta, tb } => {
                self.arity(inputs, 2)?;
                let (a, b) = (inputs[0], inputs[1]);
                let dims = matmul_dims(a, *ta, b, *tb).ok_or_else(|| self.shape_err(a.shape(), b.shape()))?;
                let out = mm(a.data(), dims.a_stored, *ta, b.data(), dims.b_stored, *tb && b.rank() == 2);
                Ok((dims.out_shape, out))
            }
            Primitive::Add => {
                let first = inputs.first().ok_or_else(|| self.shape_err(&[0], &[1]))?;
                let mut out = first.to_vec();
                for t in &inputs[1..] {
                    if t.shape() != first.shape() {
                        return Err(self.shape_err(first.shape(), t.shape()));
                    }
                    for (o, v) in out.iter_mut().zip(t.data()) {
                        *o += v;
                    }
                }
                Ok((first.shape().to_vec(), out))
            }
            Primitive::Mul | Primitive::DropoutMaskApply => {
                self.arity(inputs, 2)?;
                let (a, b) = (inputs[0], inputs[1]);
                if a.shape() != b.shape() {
                    return Err(self.shape_err(a.shape(), b.shape()));
                }
                let out = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
                Ok((a.shape().to_vec(), out))
            }
            Primitive::Outer => {
                self.arity(inputs, 2)?;
                let (u, v) = (inputs[0], inputs[1]);
                if u.rank() != 1 || v.rank() != 1 {
                    return Err(self.shape_err(u.shape(), v.shape()));
                }
                let mut out = Vec::with_capacity(u.len() * v.len());
                for &x in u.data() {
                    out.extend(v.data().iter().map(|y| x * y));
                }
                Ok((vec![u.len(), v.len()], out))
            }
            Primitive::Tanh => {
                self.arity(inputs, 1)?;
                Ok((inputs[0].shape().to_vec(), inputs[0].data().iter().map(|x| x.tanh()).collect()))
            }
            Primitive::Sigmoid => {
                self.arity(inputs, 1)?;
                Ok((inputs[0].shape().to_vec(), inputs[0].data().iter().map(|&x| sigmoid(x)).collect()))
            }
            Primitive::Softmax => {
                self.arity(inputs, 1)?;
                self.vector_input(inputs[0])?;
                Ok((inputs[0].shape().to_vec(), softmax(inputs[0].data())))
            }
            Primitive::Concat => {
                let mut out = Vec::new();
                for t in inputs {
                    self.vector_input(t)?;
                    out.extend_from_slice(t.data());
                }
                Ok((vec![out.len()], out))
            }
            Primitive::Slice { start, len } => {
                self.arity(inputs, 1)?;
                let x = inputs[0];
                self.vector_input(x)?;
                if start + len > x.len() {
                    return Err(self.shape_err(x.shape(), &[start + len]));
                }
                Ok((vec![*len], x.data()[*start..start + len].to_vec()))
            }
            Primitive::Sum => {
                self.arity(inputs, 1)?;
                Ok((vec![], vec![inputs[0].data().iter().sum()]))
            }
            Primitive::Scale(c) => {
                self.arity(inputs, 1)?;
                Ok((inputs[0].shape().to_vec(), inputs[0].data().iter().map(|x| x * c).collect()))
            }
            Primitive::EmbedLookup(id) => {
                self.arity(inputs, 1)?;
                let table = inputs[0];
                let id = *id as usize;
                if table.rank() != 2 || id >= table.rows() {
                    return Err(self.shape_err(table.shape(), &[id]));
                }
                Ok((vec![table.cols()], table.row(id).to_vec()))
            }
            Primitive::ScaleColumns => {
                self.arity(inputs, 2)?;
                let (m, v) = (inputs[0], inputs[1]);
                if m.rank() != 2 || v.rank() != 1 || m.cols() != v.len() {
                    return Err(self.shape_err(m.shape(), v.shape()));
                }
                let c = m.cols();
                let out = m.data().iter().enumerate().map(|(k, x)| x * v.data()[k % c]).collect();
                Ok((m.shape().to_vec(), out))
            }
            Primitive::StackRows => {
                let first = inputs.first().ok_or_else(|| self.shape_err(&[0], &[1]))?;
                let k = first.len();
                let mut out = Vec::with_capacity(k * inputs.len());
                for t in inputs {
                    if t.rank() != 1 || t.len() != k {
                        return Err(self.shape_err(first.shape(), t.shape()));
                    }
                    out.extend_from_slice(t.data());
                }
                Ok((vec![inputs.len(), k], out))
            }
            Primitive::ScatterAdd { ids, size } => {
                self.arity(inputs, 1)?;
                let v = inputs[0];
                if v.rank() != 1 || v.len() != ids.len() || ids.iter().any(|&i| i as usize >= *size) {
                    return Err(self.shape_err(v.shape(), &[ids.len(), *size]));
                }
                let mut out = vec![0.0; *size];
                for (&i, x) in ids.iter().zip(v.data()) {
                    out[i as usize] += x;
                }
                Ok((vec![*size], out))
            }
            Primitive::Mix => {
                let gate = inputs.first().ok_or_else(|| self.shape_err(&[0], &[1]))?;
                let k = gate.len();
                if gate.rank() != 1 || inputs.len() != k + 1 {
                    return Err(self.shape_err(gate.shape(), &[inputs.len() - 1]));
                }
                let shape = inputs[1].shape();
                let mut out = vec![0.0; inputs[1].len()];
                for (g, d) in gate.data().iter().zip(&inputs[1..]) {
                    if d.shape() != shape {
                        return Err(self.shape_err(shape, d.shape()));
                    }
                    for (o, x) in out.iter_mut().zip(d.data()) {
                        *o += g * x;
                    }
                }
                Ok((shape.to_vec(), out))
            }
            Primitive::Log => {
                self.arity(inputs, 1)?;
                Ok((inputs[0].shape().to_vec(), inputs[0].data().iter().map(|x| x.ln()).collect()))
            }
            Primitive::Pick(i) => {
                self.arity(inputs, 1)?;
                let x = inputs[0];
                self.vector_input(x)?;
                if *i >= x.len() {
                    return Err(self.shape_err(x.shape(), &[*i]));
                }
                Ok((vec![], vec![x.data()[*i]]))
            }
            Primitive::CrossEntropy(target) => {
                self.arity(inputs, 1)?;
                let x = inputs[0];
                self.vector_input(x)?;
                if *target >= x.len() {
                    return Err(self.shape_err(x.shape(), &[*target]));
                }
                Ok((vec![], vec![log_sum_exp(x.data()) - x.data()[*target]]))
            }
            Primitive::RescaleToNorm(target) => {
                self.arity(inputs, 1)?;
                let x = inputs[0];
                self.vector_input(x)?;
                let n = x.norm();
                if !(n >= MIN_RESCALE_NORM) {
                    return Err(Error::DegenerateCoefficients(n));
                }
                let s = target / n;
                Ok((x.shape().to_vec(), x.data().iter().map(|v| v * s).collect()))
            }
        }
    }

    /// Gradients with respect to each input, given the output gradient.
    /// Inputs whose `needs` flag is false get `None`.
    pub(crate) fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Grad>> {
        let mut out: Vec<Option<Grad>> = (0..inputs.len()).map(|_| None).collect();
        match self {
            Primitive::MatMul { ta, tb } => {
                let (a, b) = (inputs[0], inputs[1]);
                let dims = matmul_dims(a, *ta, b, *tb).expect("checked in forward");
                let tb = *tb && b.rank() == 2;
                let (m, n) = (dims.m, dims.n);
                if needs[0] {
                    let da = if !*ta {
                        mm(grad, (m, n), false, b.data(), dims.b_stored, !tb)
                    } else {
                        mm(b.data(), dims.b_stored, tb, grad, (m, n), true)
                    };
                    out[0] = Some(Grad::Dense(da));
                }
                if needs[1] {
                    let db = if !tb {
                        mm(a.data(), dims.a_stored, !*ta, grad, (m, n), false)
                    } else {
                        mm(grad, (m, n), true, a.data(), dims.a_stored, *ta)
                    };
                    out[1] = Some(Grad::Dense(db));
                }
            }
            Primitive::Add => {
                for (o, &need) in out.iter_mut().zip(needs) {
                    if need {
                        *o = Some(Grad::Dense(grad.to_vec()));
                    }
                }
            }
            Primitive::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if needs[0] {
                    out[0] = Some(Grad::Dense(grad.iter().zip(b.data()).map(|(g, y)| g * y).collect()));
                }
                if needs[1] {
                    out[1] = Some(Grad::Dense(grad.iter().zip(a.data()).map(|(g, x)| g * x).collect()));
                }
            }
            Primitive::DropoutMaskApply => {
                if needs[0] {
                    out[0] = Some(Grad::Dense(grad.iter().zip(inputs[1].data()).map(|(g, m)| g * m).collect()));
                }
            }
            Primitive::Outer => {
                let (u, v) = (inputs[0], inputs[1]);
                let (m, n) = (u.len(), v.len());
                if needs[0] {
                    let du = (0..m)
                        .map(|i| dot(&grad[i * n..(i + 1) * n], v.data()))
                        .collect();
                    out[0] = Some(Grad::Dense(du));
                }
                if needs[1] {
                    let mut dv = vec![0.0; n];
                    for (i, &x) in u.data().iter().enumerate() {
                        axpy(x, &grad[i * n..(i + 1) * n], &mut dv);
                    }
                    out[1] = Some(Grad::Dense(dv));
                }
            }
            Primitive::Tanh => {
                if needs[0] {
                    let dx = grad.iter().zip(output.data()).map(|(g, y)| g * (1.0 - y * y)).collect();
                    out[0] = Some(Grad::Dense(dx));
                }
            }
            Primitive::Sigmoid => {
                if needs[0] {
                    let dx = grad.iter().zip(output.data()).map(|(g, y)| g * y * (1.0 - y)).collect();
                    out[0] = Some(Grad::Dense(dx));
                }
            }
            Primitive::Softmax => {
                if needs[0] {
                    let y = output.data();
                    let gy = dot(grad, y);
                    out[0] = Some(Grad::Dense(grad.iter().zip(y).map(|(g, p)| p * (g - gy)).collect()));
                }
            }
            Primitive::Concat => {
                let mut offset = 0;
                for (i, t) in inputs.iter().enumerate() {
                    if needs[i] {
                        out[i] = Some(Grad::Dense(grad[offset..offset + t.len()].to_vec()));
                    }
                    offset += t.len();
                }
            }
            Primitive::Slice { start, len } => {
                if needs[0] {
                    let mut dx = vec![0.0; inputs[0].len()];
                    dx[*start..start + len].copy_from_slice(grad);
                    out[0] = Some(Grad::Dense(dx));
                }
            }
            Primitive::Sum => {
                if needs[0] {
                    out[0] = Some(Grad::Dense(vec![grad[0]; inputs[0].len()]));
                }
            }
            Primitive::Scale(c) => {
                if needs[0] {
                    out[0] = Some(Grad::Dense(grad.iter().map(|g| g * c).collect()));
                }
            }
            Primitive::EmbedLookup(id) => {
                if needs[0] {
                    out[0] = Some(Grad::Row {
                        row: *id as usize,
                        values: grad.to_vec(),
                    });
                }
            }
            Primitive::ScaleColumns => {
                let (m, v) = (inputs[0], inputs[1]);
                let c = m.cols();
                if needs[0] {
                    let dm = grad.iter().enumerate().map(|(k, g)| g * v.data()[k % c]).collect();
                    out[0] = Some(Grad::Dense(dm));
                }
                if needs[1] {
                    let mut dv = vec![0.0; c];
                    for (k, (g, x)) in grad.iter().zip(m.data()).enumerate() {
                        dv[k % c] += g * x;
                    }
                    out[1] = Some(Grad::Dense(dv));
                }
            }
            Primitive::StackRows => {
                let k = inputs[0].len();
                for (i, o) in out.iter_mut().enumerate() {
                    if needs[i] {
                        *o = Some(Grad::Dense(grad[i * k..(i + 1) * k].to_vec()));
                    }
                }
            }
            Primitive::ScatterAdd { ids, .. } => {
                if needs[0] {
                    out[0] = Some(Grad::Dense(ids.iter().map(|&i| grad[i as usize]).collect()));
                }
            }
            Primitive::Mix => {
                let gate = inputs[0];
                if needs[0] {
                    let dg = inputs[1..].iter().map(|d| dot(grad, d.data())).collect();
                    out[0] = Some(Grad::Dense(dg));
                }
                for (k, &g) in gate.data().iter().enumerate() {
                    if needs[k + 1] {
                        out[k + 1] = Some(Grad::Dense(grad.iter().map(|x| x * g).collect()));
                    }
                }
            }
            Primitive::Log => {
                if needs[0] {
                    let dx = grad.iter().zip(inputs[0].data()).map(|(g, x)| g / x).collect();
                    out[0] = Some(Grad::Dense(dx));
                }
            }
            Primitive::Pick(i) => {
                if needs[0] {
                    let mut dx = vec![0.0; inputs[0].len()];
                    dx[*i] = grad[0];
                    out[0] = Some(Grad::Dense(dx));
                }
            }
            Primitive::CrossEntropy(target) => {
                if needs[0] {
                    let mut dx = softmax(inputs[0].data());
                    dx[*target] -= 1.0;
                    for v in &mut dx {
                        *v *= grad[0];
                    }
                    out[0] = Some(Grad::Dense(dx));
                }
            }
            Primitive::RescaleToNorm(target) => {
                if needs[0] {
                    let x = inputs[0].data();
                    let n2: f64 = dot(x, x);
                    let n = n2.sqrt();
                    let xg = dot(x, grad);
                    let s = target / n;
                    let dx = grad.iter().zip(x).map(|(g, v)| s * (g - v * xg / n2)).collect();
                    out[0] = Some(Grad::Dense(dx));
                }
            }
        }
        out
    }
}

struct MatMulDims {
    a_stored: (usize, usize),
    b_stored: (usize, usize),
    m: usize,
    n: usize,
    out_shape: Vec<usize>,
}

fn matmul_dims(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Option<MatMulDims> {
    if a.rank() != 2 {
        return None;
    }
    let a_stored = (a.shape()[0], a.shape()[1]);
    let (m, k) = if ta { (a_stored.1, a_stored.0) } else { a_stored };
    match b.rank() {
        1 => {
            if b.len() != k {
                return None;
            }
            Some(MatMulDims {
                a_stored,
                b_stored: (b.len(), 1),
                m,
                n: 1,
                out_shape: vec![m],
            })
        }
        2 => {
            let b_stored = (b.shape()[0], b.shape()[1]);
            let (kb, n) = if tb { (b_stored.1, b_stored.0) } else { b_stored };
            if kb != k {
                return None;
            }
            Some(MatMulDims {
                a_stored,
                b_stored,
                m,
                n,
                out_shape: vec![m, n],
            })
        }
        _ => None,
    }
}

/// `op(a) · op(b)` on row-major buffers with the given stored dimensions.
pub(crate) fn mm(
    a: &[f64],
    (ar, ac): (usize, usize),
    ta: bool,
    b: &[f64],
    (br, bc): (usize, usize),
    tb: bool,
) -> Vec<f64> {
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let mut c = vec![0.0; m * n];
    if n == 1 && !tb {
        if ta {
            for p in 0..k {
                axpy(b[p], &a[p * ac..(p + 1) * ac], &mut c);
            }
        } else {
            for (i, ci) in c.iter_mut().enumerate() {
                *ci = dot(&a[i * ac..(i + 1) * ac], b);
            }
        }
        return c;
    }
    if !tb {
        // Row-oriented: c[i,:] += op(a)[i,p] * b[p,:]
        for i in 0..m {
            let ci = &mut c[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = if ta { a[p * ac + i] } else { a[i * ac + p] };
                axpy(aip, &b[p * bc..(p + 1) * bc], ci);
            }
        }
    } else {
        // c[i,j] = Σ_p op(a)[i,p] · b[j,p]
        for i in 0..m {
            for j in 0..n {
                let bj = &b[j * bc..(j + 1) * bc];
                c[i * n + j] = if ta {
                    (0..k).map(|p| a[p * ac + i] * bj[p]).sum()
                } else {
                    dot(&a[i * ac..(i + 1) * ac], bj)
                };
            }
        }
    }
    c
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(x: &[f64]) -> f64 {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for v in &mut out {
        *v /= z;
    }
    out
}
