//! Parameter naming, shapes and counts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{ParamId, ParamStore};

use super::config::{CellKind, ModelSpec};

/// Stacked LSTM weights, gate order `i, f, g, o`.
#[derive(Clone, Debug)]
pub struct LstmIds {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

/// Factor bank for one decoder gate: `P = U_p Λ V_pᵀ`, `Q = U_q Λ V_qᵀ`, `b = B λ`.
#[derive(Clone, Debug)]
pub struct FactorIds {
    pub up: ParamId,
    pub vp: ParamId,
    pub uq: ParamId,
    pub vq: ParamId,
    pub bias_bank: ParamId,
}

/// Ordinary dense weights for one decoder gate.
#[derive(Clone, Debug)]
pub struct DenseGateIds {
    pub p: ParamId,
    pub q: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug)]
pub enum DecoderIds {
    Dense(Vec<DenseGateIds>),
    Adaptive { coef: ParamId, gates: Vec<FactorIds> },
}

#[derive(Clone, Debug)]
pub enum OutputIds {
    Untied { w: ParamId, b: ParamId },
    Tied { proj: ParamId, b: ParamId },
}

/// Ids of every model parameter, resolved from a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub embed: ParamId,
    pub encoder: Vec<[LstmIds; 2]>,
    pub bridge_w: ParamId,
    pub bridge_b: ParamId,
    pub exemplar: Option<[LstmIds; 2]>,
    pub decoder: DecoderIds,
    pub attn: ParamId,
    pub ex_attn: Option<ParamId>,
    pub output: OutputIds,
    pub gate: Option<(ParamId, ParamId)>,
}

const DIRS: [&str; 2] = ["fwd", "bwd"];

/// Width of the feature fed to the output layer: `[h; context; exemplar context]`.
pub(crate) fn feature_width(spec: &ModelSpec) -> usize {
    let c = &spec.config;
    let mut w = c.decoder_hidden + 2 * c.encoder_hidden;
    if spec.variant.attends_exemplar() {
        w += 2 * c.exemplar_hidden;
    }
    w
}

/// Every parameter's name and shape, in initialization order.
pub fn param_shapes(spec: &ModelSpec) -> Vec<(String, Vec<usize>)> {
    let c = &spec.config;
    let (v, e, h, d, r, x) = (
        spec.vocab_size,
        c.embedding_dim,
        c.encoder_hidden,
        c.decoder_hidden,
        c.rank(),
        c.exemplar_hidden,
    );
    let mut out = vec![("embed".to_string(), vec![v, e])];
    let lstm = |out: &mut Vec<(String, Vec<usize>)>, prefix: String, input: usize, hidden: usize| {
        out.push((format!("{prefix}.wx"), vec![4 * hidden, input]));
        out.push((format!("{prefix}.wh"), vec![4 * hidden, hidden]));
        out.push((format!("{prefix}.b"), vec![4 * hidden]));
    };
    for layer in 0..c.encoder_layers {
        let input = if layer == 0 { e } else { 2 * h };
        for dir in DIRS {
            lstm(&mut out, format!("enc.{layer}.{dir}"), input, h);
        }
    }
    out.push(("bridge.w".into(), vec![d, 2 * h]));
    out.push(("bridge.b".into(), vec![d]));
    if spec.variant.uses_exemplar() {
        for dir in DIRS {
            lstm(&mut out, format!("ex.{dir}"), e, x);
        }
    }
    if spec.variant.adaptive() {
        out.push(("coef.c".into(), vec![r, 2 * x]));
        for gate in c.cell.gate_names() {
            out.push((format!("dec.{gate}.up"), vec![d, r]));
            out.push((format!("dec.{gate}.vp"), vec![d, r]));
            out.push((format!("dec.{gate}.uq"), vec![d, r]));
            out.push((format!("dec.{gate}.vq"), vec![e, r]));
            out.push((format!("dec.{gate}.bank"), vec![d, r]));
        }
    } else {
        for gate in c.cell.gate_names() {
            out.push((format!("dec.{gate}.p"), vec![d, d]));
            out.push((format!("dec.{gate}.q"), vec![d, e]));
            out.push((format!("dec.{gate}.b"), vec![d]));
        }
    }
    out.push(("attn.w".into(), vec![d, 2 * h]));
    if spec.variant.attends_exemplar() {
        out.push(("attn_ex.w".into(), vec![d, 2 * x]));
    }
    let feat = feature_width(spec);
    if c.tie_embeddings {
        out.push(("out.proj".into(), vec![e, feat]));
    } else {
        out.push(("out.w".into(), vec![v, feat]));
    }
    out.push(("out.b".into(), vec![v]));
    if c.copy {
        let k = if spec.variant.attends_exemplar() { 3 } else { 1 };
        out.push(("gate.w".into(), vec![k, feat + e]));
        out.push(("gate.b".into(), vec![k]));
    }
    out
}

impl Layout {
    /// Resolves ids, checking that `params` holds exactly the expected tensors.
    pub fn resolve(spec: &ModelSpec, params: &ParamStore) -> Result<Layout> {
        let shapes = param_shapes(spec);
        if shapes.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                params.len()
            )));
        }
        for (name, shape) in &shapes {
            let t = params
                .by_name(name)
                .ok_or_else(|| Error::invalid(format!("missing parameter `{name}`")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "param-layout",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let c = &spec.config;
        let id = |n: &str| params.id(n);
        let lstm = |prefix: &str, hidden: usize| -> Result<LstmIds> {
            Ok(LstmIds {
                wx: id(&format!("{prefix}.wx"))?,
                wh: id(&format!("{prefix}.wh"))?,
                b: id(&format!("{prefix}.b"))?,
                hidden,
            })
        };
        let encoder = (0..c.encoder_layers)
            .map(|l| {
                Ok([
                    lstm(&format!("enc.{l}.fwd"), c.encoder_hidden)?,
                    lstm(&format!("enc.{l}.bwd"), c.encoder_hidden)?,
                ])
            })
            .collect::<Result<Vec<_>>>()?;
        let exemplar = if spec.variant.uses_exemplar() {
            Some([lstm("ex.fwd", c.exemplar_hidden)?, lstm("ex.bwd", c.exemplar_hidden)?])
        } else {
            None
        };
        let decoder = if spec.variant.adaptive() {
            DecoderIds::Adaptive {
                coef: id("coef.c")?,
                gates: c
                    .cell
                    .gate_names()
                    .iter()
                    .map(|g| {
                        Ok(FactorIds {
                            up: id(&format!("dec.{g}.up"))?,
                            vp: id(&format!("dec.{g}.vp"))?,
                            uq: id(&format!("dec.{g}.uq"))?,
                            vq: id(&format!("dec.{g}.vq"))?,
                            bias_bank: id(&format!("dec.{g}.bank"))?,
                        })
                    })
                    .collect::<Result<_>>()?,
            }
        } else {
            DecoderIds::Dense(
                c.cell
                    .gate_names()
                    .iter()
                    .map(|g| {
                        Ok(DenseGateIds {
                            p: id(&format!("dec.{g}.p"))?,
                            q: id(&format!("dec.{g}.q"))?,
                            b: id(&format!("dec.{g}.b"))?,
                        })
                    })
                    .collect::<Result<_>>()?,
            )
        };
        let output = if c.tie_embeddings {
            OutputIds::Tied {
                proj: id("out.proj")?,
                b: id("out.b")?,
            }
        } else {
            OutputIds::Untied {
                w: id("out.w")?,
                b: id("out.b")?,
            }
        };
        Ok(Layout {
            embed: id("embed")?,
            encoder,
            bridge_w: id("bridge.w")?,
            bridge_b: id("bridge.b")?,
            exemplar,
            decoder,
            attn: id("attn.w")?,
            ex_attn: if spec.variant.attends_exemplar() {
                Some(id("attn_ex.w")?)
            } else {
                None
            },
            output,
            gate: if c.copy { Some((id("gate.w")?, id("gate.b")?)) } else { None },
        })
    }
}

/// Parameter counts per model component.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ParameterCounts {
    pub embedding: usize,
    pub encoder: usize,
    pub bridge: usize,
    pub exemplar_encoder: usize,
    pub coefficients: usize,
    /// Decoder recurrence weights (`P`, `Q` or their factor banks).
    pub decoder_weights: usize,
    /// Decoder biases (`b` or the bias bank `B`).
    pub decoder_bias: usize,
    pub attention: usize,
    pub output: usize,
    pub copy_gate: usize,
    pub total: usize,
}

/// Counts parameters of every component of `spec`.
pub fn count_parameters(spec: &ModelSpec) -> ParameterCounts {
    let mut c = ParameterCounts::default();
    for (name, shape) in param_shapes(spec) {
        let n: usize = shape.iter().product();
        let slot = match name.split('.').next().unwrap_or_default() {
            "embed" => &mut c.embedding,
            "enc" => &mut c.encoder,
            "bridge" => &mut c.bridge,
            "ex" => &mut c.exemplar_encoder,
            "coef" => &mut c.coefficients,
            "dec" if name.ends_with(".b") || name.ends_with(".bank") => &mut c.decoder_bias,
            "dec" => &mut c.decoder_weights,
            "attn" | "attn_ex" => &mut c.attention,
            "out" => &mut c.output,
            "gate" => &mut c.copy_gate,
            other => unreachable!("unclassified parameter prefix `{other}`"),
        };
        *slot += n;
        c.total += n;
    }
    c
}

/// Recurrence budget `(weights, bias)` of a decoder with hidden size `d`,
/// input width `input`, and `rank` components when adaptive.
///
/// Adaptive gates hold `U_p, V_p, U_q` (`d×r`), `V_q` (`input×r`) and the
/// bias bank `B` (`d×r`); dense gates hold `P` (`d×d`), `Q` (`d×input`) and `b`.
pub fn recurrence_budget(cell: CellKind, adaptive: bool, d: usize, input: usize, rank: usize) -> (usize, usize) {
    let g = cell.gates();
    if adaptive {
        (g * (3 * d * rank + input * rank), g * d * rank)
    } else {
        (g * (d * d + d * input), g * d)
    }
}
