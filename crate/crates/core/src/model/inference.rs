use crate::decoding::StepScorer;
use crate::error::Result;
use crate::numerics::{log_sum_exp, Eval, Tensor};

use super::adaptive::{CellMode, DecoderState};
use super::decoder::{ForwardOptions, StepContext, StepOutput};
use super::{Model, Noise};

/// A decoder built for one input, ready to score next tokens.
pub struct PreparedInput<'m> {
    model: &'m Model,
    ctx: StepContext<Tensor>,
}

impl Model {
    /// Builds the per-input decoder with its recurrence matrices materialized
    /// once, so every decoding step is an ordinary dense cell.
    pub fn prepare_inference(&self, source: &[u32], exemplar: Option<&[u32]>) -> Result<PreparedInput<'_>> {
        self.prepare_inference_with(
            source,
            exemplar,
            &ForwardOptions {
                cell_mode: CellMode::Materialized,
                lambda_override: None,
            },
        )
    }

    pub fn prepare_inference_with(
        &self,
        source: &[u32],
        exemplar: Option<&[u32]>,
        opts: &ForwardOptions,
    ) -> Result<PreparedInput<'_>> {
        let mut g = Eval::new(&self.params, self.spec.config.precision);
        let ctx = self.prepare(&mut g, source, exemplar, opts, &mut Noise::none())?;
        Ok(PreparedInput { model: self, ctx })
    }
}

impl PreparedInput<'_> {
    pub fn context(&self) -> &StepContext<Tensor> {
        &self.ctx
    }
}

impl StepScorer for PreparedInput<'_> {
    type State = DecoderState<Tensor>;

    fn vocab_size(&self) -> usize {
        self.model.spec.vocab_size
    }

    fn start(&self) -> Result<Self::State> {
        let mut g = Eval::new(&self.model.params, self.model.spec.config.precision);
        Ok(self.model.initial_state(&mut g, &self.ctx))
    }

    fn step(&self, state: &Self::State, prev: u32) -> Result<(Vec<f64>, Self::State)> {
        let mut g = Eval::new(&self.model.params, self.model.spec.config.precision);
        let (out, next) = self.model.decode_step(&mut g, &self.ctx, state, prev, &mut Noise::none())?;
        let log_probs = match out {
            StepOutput::Logits(l) => {
                let z = log_sum_exp(l.data());
                l.data().iter().map(|v| v - z).collect()
            }
            StepOutput::Probs(p) => p.data().iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect(),
        };
        Ok((log_probs, next))
    }
}
