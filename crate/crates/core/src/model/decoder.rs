use std::sync::Arc;

use crate::corpus::{BOS, PAD};
use crate::error::{Error, Result};
use crate::numerics::{Graph, Tensor};

use super::adaptive::{cell_step, CellMode, CellWeights, DecoderState};
use super::layout::OutputIds;
use super::{Model, Noise};

/// Luong multiplicative attention: `score_s = hᵀ W h_s`.
/// Returns the context vector and the attention weights.
pub fn attention_context<G: Graph>(
    g: &mut G,
    h: &G::Var,
    states: &G::Var,
    w: &G::Var,
) -> Result<(G::Var, G::Var)> {
    let query = g.matmul_tn(w, h)?;
    let scores = g.matmul(states, &query)?;
    let weights = g.softmax(&scores)?;
    let context = g.matmul_tn(states, &weights)?;
    Ok((context, weights))
}

/// Output of one decoder step.
#[derive(Clone, Debug)]
pub enum StepOutput<V> {
    /// Unnormalized scores over the vocabulary (no copy mechanism).
    Logits(V),
    /// A normalized distribution over the vocabulary (copy mixture).
    Probs(V),
}

/// Everything a decoder step needs that is fixed for one input.
#[derive(Clone)]
pub struct StepContext<V> {
    pub cell: CellWeights<V>,
    pub h0: V,
    pub source_states: V,
    pub source_ids: Arc<[u32]>,
    pub exemplar_states: Option<V>,
    pub exemplar_ids: Option<Arc<[u32]>>,
    pub lambda: Option<V>,
}

/// Inputs to [`Model::output_distribution`] for one step.
pub struct OutputInputs<'a, V> {
    pub h: &'a V,
    pub context: &'a V,
    pub exemplar_context: Option<&'a V>,
    pub input_embedding: &'a V,
    pub source_ids: &'a Arc<[u32]>,
    pub attention: &'a V,
    pub exemplar_ids: Option<&'a Arc<[u32]>>,
    pub exemplar_attention: Option<&'a V>,
}

/// Per-input options for the forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardOptions {
    pub cell_mode: CellMode,
    /// Use these coefficients instead of computing them from the exemplar.
    pub lambda_override: Option<Tensor>,
}

impl Model {
    /// `softmax(W [h; context])`, or with copying enabled the mixture
    /// `Σ_k gate_k · dist_k` over generating, copying from the source and
    /// (for exemplar-attending variants) copying from the exemplar.
    ///
    /// The two-way gate is `softmax([s, 0]) = [σ(s), 1 − σ(s)]`; the three-way
    /// gate is a softmax over three learned scores.
    pub fn output_distribution<G: Graph>(
        &self,
        g: &mut G,
        x: &OutputInputs<'_, G::Var>,
        noise: &mut Noise<'_>,
    ) -> Result<StepOutput<G::Var>> {
        let mut parts = vec![x.h, x.context];
        if let Some(e) = x.exemplar_context {
            parts.push(e);
        }
        let feature = g.concat(&parts)?;
        let dropped = noise.apply(g, &feature)?;
        let logits = match &self.layout.output {
            OutputIds::Untied { w, b } => {
                let w = g.param(*w);
                let b = g.param(*b);
                let lin = g.matmul(&w, &dropped)?;
                g.add(&lin, &b)?
            }
            OutputIds::Tied { proj, b } => {
                let proj = g.param(*proj);
                let table = g.param(self.layout.embed);
                let b = g.param(*b);
                let z = g.matmul(&proj, &dropped)?;
                let lin = g.matmul(&table, &z)?;
                g.add(&lin, &b)?
            }
        };
        let Some((gw, gb)) = self.layout.gate else {
            return Ok(StepOutput::Logits(logits));
        };
        let vocab = self.spec.vocab_size;
        let p_vocab = g.softmax(&logits)?;
        let gate_in = g.concat(&[&feature, x.input_embedding])?;
        let gw = g.param(gw);
        let gb = g.param(gb);
        let lin = g.matmul(&gw, &gate_in)?;
        let scores = g.add(&lin, &gb)?;
        let copy_src = g.scatter_add(x.attention, x.source_ids.clone(), vocab)?;
        let (gate, dists) = match (x.exemplar_ids, x.exemplar_attention) {
            (Some(ids), Some(beta)) => {
                let copy_ex = g.scatter_add(beta, ids.clone(), vocab)?;
                (g.softmax(&scores)?, vec![p_vocab, copy_src, copy_ex])
            }
            _ => {
                let zero = g.constant(Tensor::zeros(&[1]));
                let two = g.concat(&[&scores, &zero])?;
                (g.softmax(&two)?, vec![p_vocab, copy_src])
            }
        };
        let refs: Vec<&G::Var> = dists.iter().collect();
        Ok(StepOutput::Probs(g.mix(&gate, &refs)?))
    }

    /// Adaptive decoder construction for one input: encode the source,
    /// encode the exemplar, compute λ, and build the recurrence weights.
    pub fn prepare<G: Graph>(
        &self,
        g: &mut G,
        source: &[u32],
        exemplar: Option<&[u32]>,
        opts: &ForwardOptions,
        noise: &mut Noise<'_>,
    ) -> Result<StepContext<G::Var>> {
        let variant = self.spec.variant;
        let enc = self.encode_source(g, source, noise)?;
        let ex = if variant.uses_exemplar() {
            let ids = exemplar.ok_or_else(|| Error::invalid(format!("variant `{variant}` needs an exemplar")))?;
            Some((self.encode_exemplar(g, ids, noise)?, ids))
        } else {
            None
        };
        let lambda = if variant.adaptive() {
            Some(match &opts.lambda_override {
                Some(t) => g.constant(t.clone()),
                None => {
                    let (e, _) = ex.as_ref().expect("adaptive variants use exemplars");
                    self.compute_coefficients(g, &e.repr)?
                }
            })
        } else {
            None
        };
        let cell = self.decoder_weights(g, lambda.as_ref(), opts.cell_mode)?;
        let (exemplar_states, exemplar_ids) = match (&ex, variant.attends_exemplar()) {
            (Some((e, ids)), true) => (Some(e.matrix.clone()), Some(Arc::from(*ids))),
            _ => (None, None),
        };
        Ok(StepContext {
            cell,
            h0: enc.h0,
            source_states: enc.matrix,
            source_ids: Arc::from(source),
            exemplar_states,
            exemplar_ids,
            lambda,
        })
    }

    pub fn initial_state<G: Graph>(&self, g: &mut G, ctx: &StepContext<G::Var>) -> DecoderState<G::Var> {
        let c = match self.spec.config.cell {
            super::CellKind::Elman => None,
            super::CellKind::Lstm => Some(g.constant(Tensor::zeros(&[self.spec.config.decoder_hidden]))),
        };
        DecoderState { h: ctx.h0.clone(), c }
    }

    /// Feeds `prev` and returns the next-token output and the new state.
    pub fn decode_step<G: Graph>(
        &self,
        g: &mut G,
        ctx: &StepContext<G::Var>,
        state: &DecoderState<G::Var>,
        prev: u32,
        noise: &mut Noise<'_>,
    ) -> Result<(StepOutput<G::Var>, DecoderState<G::Var>)> {
        let table = g.param(self.layout.embed);
        let e = g.embed(&table, prev)?;
        let v = noise.apply(g, &e)?;
        let next = cell_step(g, self.spec.config.cell, &ctx.cell, state, &v)?;
        let w = g.param(self.layout.attn);
        let (context, alpha) = attention_context(g, &next.h, &ctx.source_states, &w)?;
        let ex = match (&ctx.exemplar_states, self.layout.ex_attn) {
            (Some(states), Some(w)) => {
                let w = g.param(w);
                Some(attention_context(g, &next.h, states, &w)?)
            }
            _ => None,
        };
        let out = self.output_distribution(
            g,
            &OutputInputs {
                h: &next.h,
                context: &context,
                exemplar_context: ex.as_ref().map(|e| &e.0),
                input_embedding: &v,
                source_ids: &ctx.source_ids,
                attention: &alpha,
                exemplar_ids: ctx.exemplar_ids.as_ref(),
                exemplar_attention: ex.as_ref().map(|e| &e.1),
            },
            noise,
        )?;
        Ok((out, next))
    }

    /// Teacher-forced negative log-likelihood of `target` (summed over its
    /// tokens, EOS included, PAD skipped) and the number of tokens scored.
    pub fn sequence_nll<G: Graph>(
        &self,
        g: &mut G,
        source: &[u32],
        target: &[u32],
        exemplar: Option<&[u32]>,
        opts: &ForwardOptions,
        noise: &mut Noise<'_>,
    ) -> Result<(G::Var, usize)> {
        if target.is_empty() {
            return Err(Error::invalid("cannot score an empty target"));
        }
        let ctx = self.prepare(g, source, exemplar, opts, noise)?;
        let mut state = self.initial_state(g, &ctx);
        let mut prev = BOS;
        let mut terms = Vec::with_capacity(target.len());
        for &y in target {
            let (out, next) = self.decode_step(g, &ctx, &state, prev, noise)?;
            state = next;
            prev = y;
            if y == PAD {
                continue;
            }
            let term = match out {
                StepOutput::Logits(l) => g.cross_entropy(&l, y as usize)?,
                StepOutput::Probs(p) => {
                    let py = g.pick(&p, y as usize)?;
                    let lp = g.log(&py)?;
                    g.scale(&lp, -1.0)?
                }
            };
            terms.push(term);
        }
        if terms.is_empty() {
            return Err(Error::invalid("target has no non-padding tokens"));
        }
        let refs: Vec<&G::Var> = terms.iter().collect();
        let n = terms.len();
        Ok((g.add_n(&refs)?, n))
    }
}
