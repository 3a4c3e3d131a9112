//! Token-level NLL training with Adam, annealing, clipping, decoupled weight
//! decay and early stopping on dev ROUGE-L.

mod checkpoint;
mod optim;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_for_variant, save_checkpoint, Checkpoint,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use optim::{clip_global_norm, learning_rate_at, AdamConfig, OptimizerState, StepStats};

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, EOS, RESERVED};
use crate::decoding::{greedy, StepScorer};
use crate::error::{Error, Result};
use crate::metrics::{corpus_rouge_l, Prf};
use crate::model::{ForwardOptions, Model, ModelSpec, Noise};
use crate::numerics::{Eval, Gradients, Graph, Objective, ParamStore, Precision, RandomStream, Tape};
use crate::par::Execution;
use crate::retrieval::ExemplarAssignment;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub anneal_factor: f64,
    /// Anneal after every this many epochs; 0 disables annealing.
    pub anneal_every: usize,
    pub weight_decay: f64,
    /// `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub dropout: f64,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping; 0 never stops early.
    pub patience: usize,
    /// Maximum length for greedy dev decoding.
    pub dev_max_len: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 0.001,
            anneal_factor: 0.2,
            anneal_every: 4,
            weight_decay: 0.01,
            clip_norm: Some(1.0),
            dropout: 0.25,
            max_epochs: 20,
            patience: 3,
            dev_max_len: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.batch_size == 0 {
            bad.push("train.batch_size");
        }
        if !(self.learning_rate > 0.0) {
            bad.push("train.learning_rate");
        }
        if !(self.anneal_factor > 0.0) {
            bad.push("train.anneal_factor");
        }
        if !(self.weight_decay >= 0.0) {
            bad.push("train.weight_decay");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            bad.push("train.clip_norm");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push("train.dropout");
        }
        if self.max_epochs == 0 {
            bad.push("train.max_epochs");
        }
        if self.dev_max_len == 0 {
            bad.push("train.dev_max_len");
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid values for: {}", bad.join(", "))))
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        learning_rate_at(self.learning_rate, self.anneal_factor, self.anneal_every, epoch)
    }
}

/// One training or evaluation pair with its retrieved exemplar.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub source: Vec<u32>,
    /// EOS-terminated.
    pub target: Vec<u32>,
    pub exemplar: Option<Vec<u32>>,
}

/// Pairs every instance with the training target its assignment points to.
/// `assignments` may be `None` only for variants that ignore exemplars.
pub fn build_examples(
    instances: &[Instance],
    train: &[Instance],
    assignments: Option<&[ExemplarAssignment]>,
    uses_exemplar: bool,
) -> Result<Vec<Example>> {
    if uses_exemplar {
        let a = assignments.ok_or_else(|| Error::invalid("this variant needs exemplar assignments; run retrieval first"))?;
        if a.len() != instances.len() {
            return Err(Error::invalid(format!(
                "{} exemplar assignments for {} instances",
                a.len(),
                instances.len()
            )));
        }
    }
    instances
        .iter()
        .enumerate()
        .map(|(i, inst)| {
            let exemplar = if uses_exemplar {
                let a = &assignments.expect("checked above")[i];
                if a.id != inst.id {
                    return Err(Error::invalid(format!("assignment {i} is for instance {}", a.id)));
                }
                let ex = train
                    .get(a.exemplar_id as usize)
                    .ok_or_else(|| Error::invalid(format!("exemplar id {} out of range", a.exemplar_id)))?;
                Some(ex.target.ids().to_vec())
            } else {
                None
            };
            Ok(Example {
                source: inst.source.ids().to_vec(),
                target: inst.target.ids().to_vec(),
                exemplar,
            })
        })
        .collect()
}

/// Summed NLL, scored token count and gradients for one example.
fn example_grad(model: &Model, ex: &Example, noise: &mut Noise<'_>) -> Result<(f64, usize, Gradients)> {
    let mut tape = Tape::new(model.params(), model.spec().config.precision);
    let (loss, n) = model.sequence_nll(
        &mut tape,
        &ex.source,
        &ex.target,
        ex.exemplar.as_deref(),
        &ForwardOptions::default(),
        noise,
    )?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(&loss).item()?, n, grads))
}

/// Mean token NLL over a batch and its gradient. Per-example tapes run
/// under `exec`; dropout streams are keyed by `noise_keys` plus the position
/// in the batch, and gradients are summed in batch order.
pub fn batch_loss_and_grad(
    model: &Model,
    batch: &[&Example],
    dropout: f64,
    noise_keys: Option<(u64, &[u64])>,
    exec: Execution,
) -> Result<(f64, usize, Gradients)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let parts = exec.map(batch, |i, ex| {
        let mut rng = noise_keys.map(|(seed, keys)| {
            let mut k = keys.to_vec();
            k.push(i as u64);
            RandomStream::derive(seed, &k)
        });
        let mut noise = match rng.as_mut() {
            Some(r) if dropout > 0.0 => Noise::new(dropout, r),
            _ => Noise::none(),
        };
        example_grad(model, ex, &mut noise)
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let tokens: usize = parts.iter().map(|p| p.1).sum();
    let total: f64 = parts.iter().map(|p| p.0).sum();
    let sum = Gradients::sum_ordered(parts.iter().map(|p| &p.2), model.params());
    Ok((total / tokens as f64, tokens, sum.scaled(1.0 / tokens as f64)))
}

/// Mean token NLL of `batch` without dropout or gradients.
pub fn nll_loss(model: &Model, batch: &[Example], exec: Execution) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let parts = exec.map(batch, |_, ex| {
        let mut g = Eval::new(model.params(), model.spec().config.precision);
        let (l, n) = model.sequence_nll(
            &mut g,
            &ex.source,
            &ex.target,
            ex.exemplar.as_deref(),
            &ForwardOptions::default(),
            &mut Noise::none(),
        )?;
        Ok::<_, Error>((l.item()?, n))
    });
    let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
    let tokens: usize = parts.iter().map(|p| p.1).sum();
    Ok(parts.iter().map(|p| p.0).sum::<f64>() / tokens as f64)
}

/// The dropout-free mean token NLL of a fixed batch, as a function of the
/// parameters, for gradient checking.
pub struct BatchObjective {
    pub model: Model,
    pub batch: Vec<Example>,
}

impl BatchObjective {
    /// A freshly initialized model and `batch` random examples whose targets
    /// have `length` tokens including EOS. Every random draw comes from `seed`.
    pub fn random(spec: ModelSpec, batch: usize, length: usize, seed: u64) -> Result<BatchObjective> {
        if spec.vocab_size <= RESERVED.len() || length == 0 || batch == 0 {
            return Err(Error::invalid("random batch needs a vocabulary above 4 ids and positive sizes"));
        }
        let uses_exemplar = spec.variant.uses_exemplar();
        let vocab = spec.vocab_size;
        let model = Model::init(spec, seed)?;
        let mut rng = RandomStream::derive(seed, &[1]);
        let seq = |rng: &mut RandomStream| {
            let mut v: Vec<u32> = (1..length).map(|_| (RESERVED.len() + rng.below(vocab - RESERVED.len())) as u32).collect();
            v.push(EOS);
            v
        };
        let batch = (0..batch)
            .map(|_| Example {
                source: seq(&mut rng),
                target: seq(&mut rng),
                exemplar: uses_exemplar.then(|| seq(&mut rng)),
            })
            .collect();
        Ok(BatchObjective { model, batch })
    }
}

impl Objective for BatchObjective {
    fn precision(&self) -> Precision {
        self.model.spec().config.precision
    }

    fn loss(&self, params: &ParamStore) -> Result<f64> {
        let m = self.model.with_params(params.clone())?;
        nll_loss(&m, &self.batch, Execution::Sequential)
    }

    fn loss_and_grad(&self, params: &ParamStore) -> Result<(f64, Gradients)> {
        let m = self.model.with_params(params.clone())?;
        let refs: Vec<&Example> = self.batch.iter().collect();
        let (l, _, g) = batch_loss_and_grad(&m, &refs, 0.0, None, Execution::Sequential)?;
        Ok((l, g))
    }
}

/// Greedy outputs (content ids, EOS stripped) for every example.
pub fn greedy_outputs(model: &Model, examples: &[Example], max_len: usize, exec: Execution) -> Result<Vec<Vec<u32>>> {
    exec.map(examples, |_, ex| {
        let prepared = model.prepare_inference(&ex.source, ex.exemplar.as_deref())?;
        debug_assert_eq!(prepared.vocab_size(), model.spec().vocab_size);
        Ok(greedy(&prepared, max_len)?.content().to_vec())
    })
    .into_iter()
    .collect()
}

fn content(target: &[u32]) -> &[u32] {
    let end = target.iter().position(|&t| t == EOS).unwrap_or(target.len());
    &target[..end]
}

/// Dev-set greedy ROUGE-L and exact-match rate.
pub fn dev_scores(model: &Model, dev: &[Example], max_len: usize, exec: Execution) -> Result<(Prf, f64)> {
    let outs = greedy_outputs(model, dev, max_len, exec)?;
    let refs: Vec<Vec<u32>> = dev.iter().map(|e| content(&e.target).to_vec()).collect();
    let exact = outs.iter().zip(&refs).filter(|(a, b)| a == b).count() as f64 / dev.len().max(1) as f64;
    Ok((corpus_rouge_l(&outs, &refs), exact))
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: u64,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub dev_rouge_l: f64,
    pub dev_exact_match: f64,
    pub best: bool,
}

pub struct FitResult {
    /// Parameters from the epoch with the best dev ROUGE-L.
    pub best: Model,
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

/// Trains `model` in place and returns the best model seen on `dev`.
///
/// Each epoch shuffles the training set with a stream keyed by the seed and
/// epoch, steps through batches, then greedy-decodes `dev`. Training stops
/// after `max_epochs`, after `patience` epochs without a ROUGE-L gain, or
/// when `on_epoch` returns `false`. Every record is written to `log` as one
/// JSON line.
pub fn fit(
    model: &mut Model,
    train: &[Example],
    dev: &[Example],
    config: &TrainConfig,
    exec: Execution,
    log: &mut dyn Write,
    mut on_epoch: impl FnMut(&EpochRecord, &Model) -> bool,
) -> Result<FitResult> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::invalid("training and dev sets must be non-empty"));
    }
    let needs = model.spec().variant.uses_exemplar();
    if train.iter().chain(dev).any(|e| e.exemplar.is_some() != needs) {
        return Err(Error::invalid(format!(
            "variant `{}` {} exemplars for every example",
            model.spec().variant,
            if needs { "needs" } else { "takes no" }
        )));
    }
    let precision = model.spec().config.precision;
    let mut opt = OptimizerState::new(model.params(), config.adam(), config.learning_rate);
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_score = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut records = Vec::new();
    for epoch in 1..=config.max_epochs {
        opt.learning_rate = config.learning_rate_at(epoch);
        let mut order: Vec<usize> = (0..train.len()).collect();
        RandomStream::derive(config.seed, &[epoch as u64]).shuffle(&mut order);
        let (mut loss_sum, mut tokens) = (0.0, 0usize);
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train[i]).collect();
            let keys = [epoch as u64, b as u64];
            let (loss, n, grads) = batch_loss_and_grad(model, &batch, config.dropout, Some((config.seed, &keys)), exec)?;
            opt.apply(model.params_mut(), &grads, precision)?;
            loss_sum += loss * n as f64;
            tokens += n;
        }
        let (rouge, exact) = dev_scores(model, dev, config.dev_max_len, exec)?;
        let improved = rouge.f1 > best_score;
        if improved {
            best_score = rouge.f1;
            best = model.clone();
            best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            steps: opt.step,
            learning_rate: opt.learning_rate,
            train_loss: loss_sum / tokens as f64,
            dev_rouge_l: rouge.f1,
            dev_exact_match: exact,
            best: improved,
        };
        let line = serde_json::to_string(&record)?;
        writeln!(log, "{line}").map_err(|e| Error::invalid(format!("writing training log: {e}")))?;
        let go_on = on_epoch(&record, model);
        records.push(record);
        if !go_on || (config.patience > 0 && stale >= config.patience) {
            break;
        }
    }
    Ok(FitResult {
        best,
        best_epoch,
        log: records,
    })
}
