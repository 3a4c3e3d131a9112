//! Encoders, exemplar-conditioned coefficients, the adaptive decoder
//! recurrence, attention with copying, and the output distribution.

mod adaptive;
mod config;
mod decoder;
mod encoder;
mod inference;
mod layout;

pub use adaptive::{cell_step, materialize, CellMode, CellWeights, DecoderState, DenseGate, FactoredGate};
pub use config::{CellKind, ModelConfig, ModelSpec, Variant};
pub use decoder::{attention_context, ForwardOptions, OutputInputs, StepContext, StepOutput};
pub use encoder::{ExemplarEncoding, SourceEncoding};
pub use inference::PreparedInput;
pub use layout::{count_parameters, param_shapes, recurrence_budget, Layout, ParameterCounts};

use crate::error::Result;
use crate::numerics::{Graph, ParamStore, RandomStream};

/// Dropout applied to embeddings and to the output-layer input.
pub struct Noise<'r> {
    rate: f64,
    rng: Option<&'r mut RandomStream>,
}

impl<'r> Noise<'r> {
    pub fn none() -> Self {
        Noise { rate: 0.0, rng: None }
    }

    pub fn new(rate: f64, rng: &'r mut RandomStream) -> Self {
        Noise { rate, rng: Some(rng) }
    }

    pub fn apply<G: Graph>(&mut self, g: &mut G, x: &G::Var) -> Result<G::Var> {
        match &mut self.rng {
            Some(rng) if self.rate > 0.0 => g.dropout(x, self.rate, rng),
            _ => Ok(x.clone()),
        }
    }
}

/// Model parameters together with the spec that lays them out.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    params: ParamStore,
    layout: Layout,
}

impl Model {
    /// Fresh parameters drawn uniformly from `±init_scale`, in layout order.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Model> {
        spec.config.validate()?;
        let mut rng = RandomStream::new(seed);
        let mut params = ParamStore::new();
        for (name, shape) in param_shapes(&spec) {
            params.insert_uniform(name, &shape, spec.config.init_scale, &mut rng, spec.config.precision)?;
        }
        Model::from_params(spec, params)
    }

    pub fn from_params(spec: ModelSpec, params: ParamStore) -> Result<Model> {
        let layout = Layout::resolve(&spec, &params)?;
        Ok(Model { spec, params, layout })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    /// Mutable access for optimizers. Replacing a tensor with a different
    /// shape is rejected by [`ParamStore::set`], so the layout stays valid.
    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn with_params(&self, params: ParamStore) -> Result<Model> {
        Model::from_params(self.spec.clone(), params)
    }
}


#[cfg(test)]
mod tests;
