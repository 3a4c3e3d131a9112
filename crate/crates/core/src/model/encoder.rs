use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};

use super::layout::LstmIds;
use super::{Model, Noise};

/// Encoder output for one source sequence.
pub struct SourceEncoding<V> {
    /// One `2·encoder_hidden` vector per source position.
    pub states: Vec<V>,
    /// The states stacked as rows.
    pub matrix: V,
    /// Decoder initial state, `tanh(W·[fwd_last; bwd_first] + b)`.
    pub h0: V,
}

pub struct ExemplarEncoding<V> {
    pub states: Vec<V>,
    pub matrix: V,
    /// `a`: final forward state concatenated with final backward state.
    pub repr: V,
}

/// LSTM cell update from the four gate pre-activations.
pub(crate) fn lstm_update<G: Graph>(
    g: &mut G,
    pre: [&G::Var; 4],
    c_prev: &G::Var,
) -> Result<(G::Var, G::Var)> {
    let i = g.sigmoid(pre[0])?;
    let f = g.sigmoid(pre[1])?;
    let cand = g.tanh(pre[2])?;
    let o = g.sigmoid(pre[3])?;
    let keep = g.mul(&f, c_prev)?;
    let write = g.mul(&i, &cand)?;
    let c = g.add(&keep, &write)?;
    let tc = g.tanh(&c)?;
    let h = g.mul(&o, &tc)?;
    Ok((h, c))
}

/// Runs one LSTM direction; states are returned in input order either way.
fn run_lstm<G: Graph>(g: &mut G, ids: &LstmIds, inputs: &[G::Var], reverse: bool) -> Result<Vec<G::Var>> {
    let n = ids.hidden;
    let wx = g.param(ids.wx);
    let wh = g.param(ids.wh);
    let b = g.param(ids.b);
    let mut h = g.constant(Tensor::zeros(&[n]));
    let mut c = h.clone();
    let mut out: Vec<Option<G::Var>> = vec![None; inputs.len()];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..inputs.len()).rev())
    } else {
        Box::new(0..inputs.len())
    };
    for t in order {
        let xi = g.matmul(&wx, &inputs[t])?;
        let hh = g.matmul(&wh, &h)?;
        let pre = g.add_n(&[&xi, &hh, &b])?;
        let gates = [
            g.slice(&pre, 0, n)?,
            g.slice(&pre, n, n)?,
            g.slice(&pre, 2 * n, n)?,
            g.slice(&pre, 3 * n, n)?,
        ];
        let (h2, c2) = lstm_update(g, [&gates[0], &gates[1], &gates[2], &gates[3]], &c)?;
        out[t] = Some(h2.clone());
        h = h2;
        c = c2;
    }
    Ok(out.into_iter().map(|s| s.expect("every position visited")).collect())
}

/// A bidirectional pass: per-position `[fwd; bwd]` plus both final states.
fn run_bilstm<G: Graph>(
    g: &mut G,
    dirs: &[LstmIds; 2],
    inputs: &[G::Var],
) -> Result<(Vec<G::Var>, G::Var, G::Var)> {
    let fwd = run_lstm(g, &dirs[0], inputs, false)?;
    let bwd = run_lstm(g, &dirs[1], inputs, true)?;
    let states = fwd
        .iter()
        .zip(&bwd)
        .map(|(f, b)| g.concat(&[f, b]))
        .collect::<Result<Vec<_>>>()?;
    let last_fwd = fwd.last().cloned().expect("non-empty");
    let last_bwd = bwd[0].clone();
    Ok((states, last_fwd, last_bwd))
}

impl Model {
    pub(crate) fn embed_tokens<G: Graph>(&self, g: &mut G, ids: &[u32], noise: &mut Noise<'_>) -> Result<Vec<G::Var>> {
        let table = g.param(self.layout.embed);
        ids.iter()
            .map(|&id| {
                let e = g.embed(&table, id)?;
                noise.apply(g, &e)
            })
            .collect()
    }

    /// Multi-layer bidirectional LSTM over the source, with residual
    /// connections above the first layer, and the tanh bridge to `h₀`.
    pub fn encode_source<G: Graph>(&self, g: &mut G, source: &[u32], noise: &mut Noise<'_>) -> Result<SourceEncoding<G::Var>> {
        if source.is_empty() {
            return Err(Error::invalid("cannot encode an empty source"));
        }
        let mut inputs = self.embed_tokens(g, source, noise)?;
        let mut finals = None;
        for (layer, dirs) in self.layout.encoder.iter().enumerate() {
            let (mut states, f, b) = run_bilstm(g, dirs, &inputs)?;
            if layer > 0 {
                for (s, x) in states.iter_mut().zip(&inputs) {
                    *s = g.add(s, x)?;
                }
            }
            finals = Some((f, b));
            inputs = states;
        }
        let (f, b) = finals.expect("at least one encoder layer");
        let joined = g.concat(&[&f, &b])?;
        let w = g.param(self.layout.bridge_w);
        let bias = g.param(self.layout.bridge_b);
        let lin = g.matmul(&w, &joined)?;
        let pre = g.add(&lin, &bias)?;
        let h0 = g.tanh(&pre)?;
        let refs: Vec<&G::Var> = inputs.iter().collect();
        let matrix = g.stack_rows(&refs)?;
        Ok(SourceEncoding {
            states: inputs,
            matrix,
            h0,
        })
    }

    /// Single-layer bidirectional LSTM over the exemplar tokens.
    pub fn encode_exemplar<G: Graph>(
        &self,
        g: &mut G,
        exemplar: &[u32],
        noise: &mut Noise<'_>,
    ) -> Result<ExemplarEncoding<G::Var>> {
        let dirs = self
            .layout
            .exemplar
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("variant `{}` has no exemplar encoder", self.spec.variant)))?;
        if exemplar.is_empty() {
            return Err(Error::invalid("cannot encode an empty exemplar"));
        }
        let inputs = self.embed_tokens(g, exemplar, noise)?;
        let (states, f, b) = run_bilstm(g, dirs, &inputs)?;
        let repr = g.concat(&[&f, &b])?;
        let refs: Vec<&G::Var> = states.iter().collect();
        let matrix = g.stack_rows(&refs)?;
        Ok(ExemplarEncoding { states, matrix, repr })
    }
}
