use std::path::{Path, PathBuf};

use adadec::corpus::{build_vocab, encode_instances, load_jsonl, read_split, validate_split, write_split, Instance, RawInstance, Vocabulary};
use adadec::decoding::{generate_all, DecodeConfig, DecodeInput};
use adadec::metrics::{normalize, score_corpus, ScoreReport};
use adadec::model::{Model, ModelConfig, ModelSpec};
use adadec::numerics::{grad_check, GradCheckReport, Precision};
use adadec::par::Execution;
use adadec::retrieval::{read_exemplars, retrieve_exemplars, write_exemplars, ExemplarAssignment};
use adadec::synth::synthesize;
use adadec::training::{build_examples, fit, load_for_variant, save_checkpoint, BatchObjective, Example};
use anyhow::{bail, Context, Result};

use crate::config::{RunConfig, Split};
use crate::stamp::{self, file_sha256, Digest, Stamp};

const EXEC: Execution = Execution::Parallel;

/// A run directory and the config every stage reads.
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

impl Run {
    pub fn new(config: RunConfig, out: PathBuf) -> Result<Run> {
        std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Run { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn tokens_path(&self, split: Split) -> PathBuf {
        self.path(&format!("{}.tokens", split.name()))
    }

    fn exemplars_path(&self, split: Split) -> PathBuf {
        self.path(&format!("exemplars.{}.jsonl", split.name()))
    }

    fn raw(&self, split: Split) -> Result<Vec<RawInstance>> {
        let path = self.config.data_path(&self.out, split);
        if !path.exists() {
            bail!(
                "missing {} split at {}; run `adadec synth-data` or set data.{}",
                split.name(),
                path.display(),
                split.name()
            );
        }
        Ok(load_jsonl(&path)?)
    }

    fn instances(&self, split: Split) -> Result<Vec<Instance>> {
        Ok(read_split(self.tokens_path(split))?)
    }

    fn vocab(&self) -> Result<Vocabulary> {
        let path = self.path("vocab.json");
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        Ok(Vocabulary::from_json(&text)?)
    }

    pub fn preprocess_digest(&self) -> Result<String> {
        let mut d = Digest::new("preprocess");
        d.field("vocab_size", &self.config.data.vocab_size)?;
        d.field("max_source_len", &self.config.data.max_source_len)?;
        for split in Split::ALL {
            let path = self.config.data_path(&self.out, split);
            if !path.exists() {
                bail!(
                    "missing {} split at {}; run `adadec synth-data` or set data.{}",
                    split.name(),
                    path.display(),
                    split.name()
                );
            }
            d.field(split.name(), &file_sha256(&path)?)?;
        }
        Ok(d.finish())
    }

    pub fn retrieve_digest(&self) -> Result<String> {
        Ok(Digest::new("retrieve").field("preprocess", &self.preprocess_digest()?)?.finish())
    }

    /// Checks the stamps this run's variant trains from and returns the
    /// digest they chain to.
    fn train_upstream(&self) -> Result<String> {
        let pre = self.preprocess_digest()?;
        stamp::require(&self.out, "preprocess", &pre)?;
        if self.config.variant.uses_exemplar() {
            let r = self.retrieve_digest()?;
            stamp::require(&self.out, "retrieve", &r)?;
            Ok(r)
        } else {
            Ok(pre)
        }
    }

    pub fn train_digest(&self) -> Result<String> {
        let upstream = if self.config.variant.uses_exemplar() {
            self.retrieve_digest()?
        } else {
            self.preprocess_digest()?
        };
        Ok(Digest::new("train")
            .field("upstream", &upstream)?
            .field("variant", &self.config.variant)?
            .field("model", &self.config.model)?
            .field("train", &self.config.train)?
            .finish())
    }

    pub fn generate_digest(&self, greedy: bool) -> Result<String> {
        Ok(Digest::new("generate")
            .field("train", &self.train_digest()?)?
            .field("decode", &self.config.decode)?
            .field("split", &self.config.eval.split)?
            .field("greedy", &greedy)?
            .finish())
    }

    pub fn evaluate_digest(&self, greedy: bool) -> Result<String> {
        Ok(Digest::new("evaluate")
            .field("generate", &self.generate_digest(greedy)?)?
            .field("mode", &self.config.eval.mode)?
            .finish())
    }

    pub fn synth_data(&self) -> Result<String> {
        let splits = synthesize(&self.config.synth)?;
        for (split, instances) in Split::ALL.into_iter().zip(&splits) {
            let path = self.config.data_path(&self.out, split);
            let text: String = instances.iter().map(|i| i.to_json_line() + "\n").collect();
            write_text(&path, &text)?;
        }
        Ok(format!(
            "wrote {} train, {} dev and {} test instances",
            splits[0].len(),
            splits[1].len(),
            splits[2].len()
        ))
    }

    pub fn preprocess(&self) -> Result<String> {
        let digest = self.preprocess_digest()?;
        let raw: Vec<Vec<RawInstance>> = Split::ALL.iter().map(|&s| self.raw(s)).collect::<Result<_>>()?;
        let max_src = self.config.data.max_source_len;
        let train_texts = raw[0].iter().flat_map(|r| {
            let src: Vec<&str> = r.source.split_whitespace().collect();
            let keep = max_src.map_or(src.len(), |m| m.min(src.len()));
            src.into_iter().take(keep).chain(r.target.split_whitespace())
        });
        let vocab = build_vocab(train_texts, self.config.data.vocab_size)?;
        write_text(&self.path("vocab.json"), &(vocab.to_json()? + "\n"))?;
        let mut sizes = Vec::new();
        for (split, r) in Split::ALL.into_iter().zip(&raw) {
            let inst = encode_instances(r, &vocab, max_src);
            validate_split(&inst, split == Split::Train)?;
            write_split(self.tokens_path(split), &inst)?;
            sizes.push(inst.len());
        }
        stamp::write(&self.out, &Stamp { stage: "preprocess".into(), digest, greedy: None })?;
        Ok(format!(
            "vocabulary of {} tokens; {} train, {} dev, {} test instances",
            vocab.len(),
            sizes[0],
            sizes[1],
            sizes[2]
        ))
    }

    pub fn retrieve(&self) -> Result<String> {
        stamp::require(&self.out, "preprocess", &self.preprocess_digest()?)?;
        let digest = self.retrieve_digest()?;
        let train = self.instances(Split::Train)?;
        let train_src: Vec<_> = train.iter().map(|i| &i.source).collect();
        let mut msg = Vec::new();
        for split in Split::ALL {
            let queries = if split == Split::Train { train.clone() } else { self.instances(split)? };
            let q: Vec<_> = queries.iter().map(|i| &i.source).collect();
            let a = retrieve_exemplars(&train_src, &q, split == Split::Train, EXEC)?;
            write_exemplars(self.exemplars_path(split), &a)?;
            let mean = a.iter().map(|x| x.similarity).sum::<f64>() / a.len().max(1) as f64;
            msg.push(format!("{}: {} queries, mean similarity {mean:.4}", split.name(), a.len()));
        }
        stamp::write(&self.out, &Stamp { stage: "retrieve".into(), digest, greedy: None })?;
        Ok(msg.join("\n"))
    }

    fn assignments(&self, split: Split) -> Result<Option<Vec<ExemplarAssignment>>> {
        if self.config.variant.uses_exemplar() {
            Ok(Some(read_exemplars(self.exemplars_path(split))?))
        } else {
            Ok(None)
        }
    }

    fn examples(&self, split: Split, train: &[Instance]) -> Result<Vec<Example>> {
        let inst = if split == Split::Train { train.to_vec() } else { self.instances(split)? };
        let a = self.assignments(split)?;
        Ok(build_examples(&inst, train, a.as_deref(), self.config.variant.uses_exemplar())?)
    }

    pub fn train(&self) -> Result<String> {
        self.train_upstream()?;
        let digest = self.train_digest()?;
        let vocab = self.vocab()?;
        let train = self.instances(Split::Train)?;
        let train_ex = self.examples(Split::Train, &train)?;
        let dev_ex = self.examples(Split::Dev, &train)?;
        let spec = ModelSpec {
            config: self.config.model.clone(),
            variant: self.config.variant,
            vocab_size: vocab.len(),
        };
        let mut model = Model::init(spec, self.config.train.seed)?;
        let mut log = Vec::new();
        let result = fit(&mut model, &train_ex, &dev_ex, &self.config.train, EXEC, &mut log, |r, _| {
            eprintln!(
                "epoch {:>3}  loss {:.4}  dev ROUGE-L {:.4}  exact {:.3}{}",
                r.epoch,
                r.train_loss,
                r.dev_rouge_l,
                r.dev_exact_match,
                if r.best { "  *" } else { "" }
            );
            true
        })?;
        std::fs::write(self.path("train_log.jsonl"), &log).context("writing train_log.jsonl")?;
        save_checkpoint(&result.best, &digest, &self.path("model.ckpt"))?;
        stamp::write(&self.out, &Stamp { stage: "train".into(), digest, greedy: None })?;
        let best = &result.log[result.best_epoch - 1];
        Ok(format!(
            "{} epochs; best epoch {} with dev ROUGE-L {:.4}",
            result.log.len(),
            result.best_epoch,
            best.dev_rouge_l
        ))
    }

    pub fn generate(&self, greedy: bool) -> Result<String> {
        let train_digest = self.train_digest()?;
        stamp::require(&self.out, "train", &train_digest)?;
        let digest = self.generate_digest(greedy)?;
        let ckpt = load_for_variant(&self.path("model.ckpt"), self.config.variant)?;
        if ckpt.config_digest != train_digest {
            bail!("model.ckpt in {} was trained under a different config; re-run `adadec train`", self.out.display());
        }
        let vocab = self.vocab()?;
        let split = self.config.eval.split;
        let train = self.instances(Split::Train)?;
        let examples = self.examples(split, &train)?;
        let inputs: Vec<DecodeInput<'_>> = examples
            .iter()
            .map(|e| DecodeInput {
                source: &e.source,
                exemplar: e.exemplar.as_deref(),
            })
            .collect();
        let decode = if greedy {
            DecodeConfig {
                beam_width: 1,
                ..self.config.decode.clone()
            }
        } else {
            self.config.decode.clone()
        };
        let hyps = generate_all(&ckpt.model, &inputs, &decode, EXEC)?;
        let mut text = String::new();
        for h in &hyps {
            text.push_str(&vocab.decode(h.content())?);
            text.push('\n');
        }
        write_text(&self.path("predictions.txt"), &text)?;
        stamp::write(&self.out, &Stamp { stage: "generate".into(), digest, greedy: Some(greedy) })?;
        Ok(format!("decoded {} {} instances", hyps.len(), split.name()))
    }

    pub fn evaluate(&self) -> Result<(String, ScoreReport)> {
        let greedy = stamp::read(&self.out, "generate")?.and_then(|s| s.greedy).unwrap_or(false);
        stamp::require(&self.out, "generate", &self.generate_digest(greedy)?)?;
        let digest = self.evaluate_digest(greedy)?;
        let split = self.config.eval.split;
        let refs: Vec<Vec<String>> = self.raw(split)?.iter().map(|r| normalize(&r.target)).collect();
        let path = self.path("predictions.txt");
        let preds = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let cands: Vec<Vec<String>> = preds.lines().map(normalize).collect();
        let report = score_corpus(&cands, &refs, self.config.eval.mode)?;
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_text(&self.path("scores.json"), &json)?;
        stamp::write(&self.out, &Stamp { stage: "evaluate".into(), digest, greedy: None })?;
        Ok((report.to_string(), report))
    }

    pub fn gradcheck(&self) -> Result<GradCheckReport> {
        let g = &self.config.gradcheck;
        let spec = ModelSpec {
            config: ModelConfig {
                embedding_dim: g.hidden,
                encoder_hidden: g.hidden,
                decoder_hidden: g.hidden,
                rank: Some(g.hidden),
                exemplar_hidden: g.hidden,
                init_scale: g.init_scale,
                precision: Precision::F64,
                ..self.config.model.clone()
            },
            variant: self.config.variant,
            vocab_size: g.vocab_size,
        };
        let obj = BatchObjective::random(spec, g.batch, g.length, g.check.seed)?;
        let report = grad_check(&obj, obj.model.params(), &g.check)?;
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        write_text(&self.path("gradcheck.json"), &json)?;
        Ok(report)
    }
}
