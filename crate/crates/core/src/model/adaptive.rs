//! Exemplar-conditioned construction of the decoder recurrence.
//!
//! Each decoder weight matrix is a λ-weighted sum of rank-1 matrices,
//! `P = Σᵢ λᵢ uᵢ vᵢᵀ = U diag(λ) Vᵀ`, and each bias is `b = B λ`. The
//! coefficients come from the exemplar representation `a` as `λ = C a`,
//! rescaled to norm `√d`.
//!
//! Two equivalent ways to run the recurrence are provided:
//! [`CellWeights::Factored`] applies `U (λ ∘ (Vᵀ h))` directly and never
//! forms `P`, while [`materialize`] builds the dense matrices once per input.

use crate::error::Result;
use crate::numerics::Graph;

use super::config::CellKind;
use super::encoder::lstm_update;
use super::layout::DecoderIds;
use super::Model;

/// Dense weights for one gate: `pre = P h + Q v + b`.
#[derive(Clone, Debug)]
pub struct DenseGate<V> {
    pub p: V,
    pub q: V,
    pub b: V,
}

/// Factor bank for one gate, with its bias `B λ` already computed.
#[derive(Clone, Debug)]
pub struct FactoredGate<V> {
    pub up: V,
    pub vp: V,
    pub uq: V,
    pub vq: V,
    pub bias_bank: V,
    pub b: V,
}

/// Recurrence weights for one input. `Dense` is also the materialized form.
#[derive(Clone, Debug)]
pub enum CellWeights<V> {
    Dense(Vec<DenseGate<V>>),
    Factored { gates: Vec<FactoredGate<V>>, lambda: V },
}

/// How an adaptive recurrence is evaluated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CellMode {
    /// Apply factors directly each step.
    #[default]
    Factored,
    /// Build `P`, `Q`, `b` once, then run a dense cell.
    Materialized,
}

#[derive(Clone, Debug)]
pub struct DecoderState<V> {
    pub h: V,
    /// LSTM memory cell; `None` for Elman.
    pub c: Option<V>,
}

impl Model {
    /// `λ = C a`, rescaled to `‖λ‖₂ = √d`. The rescaling is part of the
    /// differentiated computation.
    pub fn compute_coefficients<G: Graph>(&self, g: &mut G, a: &G::Var) -> Result<G::Var> {
        let DecoderIds::Adaptive { coef, .. } = &self.layout.decoder else {
            return Err(crate::Error::invalid(format!(
                "variant `{}` has no coefficient projection",
                self.spec.variant
            )));
        };
        let c = g.param(*coef);
        let raw = g.matmul(&c, a)?;
        let d = self.spec.config.decoder_hidden as f64;
        g.rescale_to_norm(&raw, d.sqrt())
    }

    /// Recurrence weights for the decoder. `lambda` is required for adaptive
    /// variants and ignored otherwise.
    pub fn decoder_weights<G: Graph>(&self, g: &mut G, lambda: Option<&G::Var>, mode: CellMode) -> Result<CellWeights<G::Var>> {
        match &self.layout.decoder {
            DecoderIds::Dense(gates) => Ok(CellWeights::Dense(
                gates
                    .iter()
                    .map(|ids| DenseGate {
                        p: g.param(ids.p),
                        q: g.param(ids.q),
                        b: g.param(ids.b),
                    })
                    .collect(),
            )),
            DecoderIds::Adaptive { gates, .. } => {
                let lambda = lambda.ok_or_else(|| crate::Error::invalid("adaptive decoder needs coefficients"))?;
                let gates = gates
                    .iter()
                    .map(|ids| {
                        let bias_bank = g.param(ids.bias_bank);
                        Ok(FactoredGate {
                            up: g.param(ids.up),
                            vp: g.param(ids.vp),
                            uq: g.param(ids.uq),
                            vq: g.param(ids.vq),
                            b: g.matmul(&bias_bank, lambda)?,
                            bias_bank,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let factored = CellWeights::Factored {
                    gates,
                    lambda: lambda.clone(),
                };
                match mode {
                    CellMode::Factored => Ok(factored),
                    CellMode::Materialized => {
                        let CellWeights::Factored { gates, lambda } = &factored else { unreachable!() };
                        Ok(CellWeights::Dense(materialize(g, gates, lambda)?))
                    }
                }
            }
        }
    }
}

/// `P = U_p diag(λ) V_pᵀ`, `Q = U_q diag(λ) V_qᵀ`, `b = B λ` for every gate.
///
/// `diag(λ)` is applied as a column scaling of `U`; the individual rank-1
/// terms are never formed.
pub fn materialize<G: Graph>(g: &mut G, gates: &[FactoredGate<G::Var>], lambda: &G::Var) -> Result<Vec<DenseGate<G::Var>>> {
    gates
        .iter()
        .map(|f| {
            let up = g.scale_columns(&f.up, lambda)?;
            let p = g.matmul_nt(&up, &f.vp)?;
            let uq = g.scale_columns(&f.uq, lambda)?;
            let q = g.matmul_nt(&uq, &f.vq)?;
            let b = g.matmul(&f.bias_bank, lambda)?;
            Ok(DenseGate { p, q, b })
        })
        .collect()
}

/// One recurrence step: Elman `h' = tanh(P h + Q v + b)` or an LSTM whose
/// four gates each use their own weights.
pub fn cell_step<G: Graph>(
    g: &mut G,
    kind: CellKind,
    weights: &CellWeights<G::Var>,
    state: &DecoderState<G::Var>,
    input: &G::Var,
) -> Result<DecoderState<G::Var>> {
    let pre: Vec<G::Var> = match weights {
        CellWeights::Dense(gates) => gates
            .iter()
            .map(|w| {
                let ph = g.matmul(&w.p, &state.h)?;
                let qv = g.matmul(&w.q, input)?;
                g.add_n(&[&ph, &qv, &w.b])
            })
            .collect::<Result<_>>()?,
        CellWeights::Factored { gates, lambda } => gates
            .iter()
            .map(|w| {
                let vh = g.matmul_tn(&w.vp, &state.h)?;
                let lvh = g.mul(&vh, lambda)?;
                let ph = g.matmul(&w.up, &lvh)?;
                let vv = g.matmul_tn(&w.vq, input)?;
                let lvv = g.mul(&vv, lambda)?;
                let qv = g.matmul(&w.uq, &lvv)?;
                g.add_n(&[&ph, &qv, &w.b])
            })
            .collect::<Result<_>>()?,
    };
    match kind {
        CellKind::Elman => Ok(DecoderState {
            h: g.tanh(&pre[0])?,
            c: None,
        }),
        CellKind::Lstm => {
            let c_prev = state
                .c
                .as_ref()
                .ok_or_else(|| crate::Error::invalid("LSTM step needs a memory cell"))?;
            let (h, c) = lstm_update(g, [&pre[0], &pre[1], &pre[2], &pre[3]], c_prev)?;
            Ok(DecoderState { h, c: Some(c) })
        }
    }
}
