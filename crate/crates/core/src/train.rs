//! Cloze pretraining. Every token is predicted from the chart cells that
//! end just before it and start just after it, using the longest such
//! cell available on each side. The loss is the summed negative
//! log-likelihood, normalized by the number of predicted tokens.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::ad::{adamw_step, AdamState, AdamW, Array, Real, Tape, Var};
use crate::chart::{CellRef, Chart, EncodeOptions, Encoder};
use crate::checkpoint::save_checkpoint;
use crate::compose::{predict_word, Dropout, Model, ModelConfig};
use crate::data::{batch_by_length, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::parallel::{par_map, Parallelism};
use crate::prune::tree_induction;
use crate::rng::{derive_seed, stream_rng, TAG_CLOZE, TAG_SENTENCE, TAG_SHUFFLE};

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Model dimensions; `model.window` is the pruning window `m`.
    pub model: ModelConfig,
    pub optimizer: AdamW,
    pub batch_size: usize,
    /// Token budget per batch.
    pub max_total_len: usize,
    /// Longer sentences are dropped.
    pub max_len: usize,
    pub epochs: usize,
    pub seed: u64,
    pub parallelism: Parallelism,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            optimizer: AdamW::default(),
            batch_size: 32,
            max_total_len: 512,
            max_len: DEFAULT_MAX_LEN,
            epochs: 10,
            seed: 0,
            parallelism: Parallelism::Auto,
        }
    }
}

impl TrainConfig {
    /// Optimizer and batching of the large-scale setup for window `m`
    /// (4 or 8); model dimensions are left to the caller.
    pub fn full_scale(model: ModelConfig) -> Self {
        let (batch_size, max_total_len) = if model.window >= 8 { (8, 128) } else { (32, 512) };
        Self {
            model,
            optimizer: AdamW { lr: 5e-5, ..AdamW::default() },
            batch_size,
            max_total_len,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", o.lr)));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config(format!("betas ({}, {}) outside [0, 1)", o.beta1, o.beta2)));
        }
        if o.weight_decay < 0.0 || o.eps <= 0.0 {
            return Err(Error::Config("weight decay must be ≥ 0 and eps > 0".into()));
        }
        if self.batch_size == 0 || self.max_total_len == 0 || self.max_len == 0 {
            return Err(Error::Config("batch size and length limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SentenceLoss {
    /// Position in the corpus.
    pub index: usize,
    pub nll: f64,
    /// Predicted tokens; 0 for skipped one-token sentences.
    pub tokens: usize,
    pub calls: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub nll_sum: f64,
    pub tokens: usize,
    pub calls: u64,
    pub sentences: Vec<SentenceLoss>,
}

impl LossReport {
    pub fn push(&mut self, s: SentenceLoss) {
        self.nll_sum += s.nll;
        self.tokens += s.tokens;
        self.calls += s.calls;
        self.sentences.push(s);
    }

    pub fn extend(&mut self, other: LossReport) {
        other.sentences.into_iter().for_each(|s| self.push(s));
    }

    /// Mean per-token negative log-likelihood.
    pub fn mean(&self) -> f64 {
        if self.tokens == 0 {
            0.0
        } else {
            self.nll_sum / self.tokens as f64
        }
    }
}

/// Context cells for predicting token `i`: the longest stored cell ending at
/// `i − 1` and the longest starting at `i + 1`.
pub fn adjacent_context(chart: &Chart, i: usize) -> (Option<CellRef>, Option<CellRef>) {
    let n = chart.n();
    let left = if i == 0 { None } else { (0..i).find_map(|x| chart.lookup((x, i - 1))) };
    let right = if i + 1 >= n { None } else { (i + 1..n).rev().find_map(|y| chart.lookup((i + 1, y))) };
    (left, right)
}

/// Builds the summed cloze NLL of one sentence on `tape`. Returns `None` for
/// sentences shorter than two tokens.
pub fn cloze_loss<F: Real>(
    tape: &mut Tape<'_, F>,
    model: &Model<F>,
    tokens: &[usize],
    opts: &EncodeOptions,
) -> Result<Option<(Var, Chart)>> {
    if tokens.len() < 2 {
        return Ok(None);
    }
    let enc = Encoder::new(model, opts.clone());
    let chart = tree_induction(&enc, tape, tokens, model.config.window)?.chart;
    let mut total: Option<Var> = None;
    for (i, &target) in tokens.iter().enumerate() {
        let (l, r) = adjacent_context(&chart, i);
        let l = l.map(|c| chart.cell(c).e);
        let r = r.map(|c| chart.cell(c).e);
        let log_probs = if opts.test_mode || model.config.dropout <= 0.0 {
            predict_word(tape, model, l, r, &mut Dropout::<ChaCha8Rng>::Off)?
        } else {
            let mut rng = stream_rng(opts.seed, &[TAG_CLOZE, i as u64]);
            let rate = model.config.dropout;
            predict_word(tape, model, l, r, &mut Dropout::On { rate, rng: &mut rng })?
        };
        let lp = tape.pick(log_probs, target)?;
        total = Some(match total {
            Some(t) => tape.add(t, lp)?,
            None => lp,
        });
    }
    let nll = tape.scale(total.unwrap(), -F::one());
    Ok(Some((nll, chart)))
}

/// Forward pass only.
pub fn sentence_loss<F: Real>(
    model: &Model<F>,
    tokens: &[usize],
    opts: &EncodeOptions,
) -> Result<SentenceLoss> {
    let mut tape = Tape::new(&model.store);
    Ok(match cloze_loss(&mut tape, model, tokens, opts)? {
        Some((nll, chart)) => SentenceLoss {
            index: 0,
            nll: tape.scalar(nll).to_f64().unwrap(),
            tokens: tokens.len(),
            calls: chart.calls.get(),
        },
        None => SentenceLoss { index: 0, nll: 0.0, tokens: 0, calls: 0 },
    })
}

/// Loss and parameter gradients of the summed NLL (not normalized).
pub fn sentence_gradients<F: Real>(
    model: &Model<F>,
    tokens: &[usize],
    opts: &EncodeOptions,
) -> Result<(SentenceLoss, Option<Vec<Array<F>>>)> {
    let mut tape = Tape::new(&model.store);
    match cloze_loss(&mut tape, model, tokens, opts)? {
        Some((nll, chart)) => {
            let grads = tape.backward(nll)?.into_params();
            let loss = SentenceLoss {
                index: 0,
                nll: tape.scalar(nll).to_f64().unwrap(),
                tokens: tokens.len(),
                calls: chart.calls.get(),
            };
            Ok((loss, Some(grads)))
        }
        None => Ok((SentenceLoss { index: 0, nll: 0.0, tokens: 0, calls: 0 }, None)),
    }
}

/// Seed of the Gumbel/dropout streams for one sentence in one epoch.
pub fn sentence_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    derive_seed(seed, &[TAG_SENTENCE, epoch as u64, index as u64])
}

/// Token-normalized gradient over a batch. Sentence gradients are computed
/// independently and summed in batch order.
pub fn batch_gradients<F: Real>(
    model: &Model<F>,
    corpus: &[Vec<usize>],
    batch: &[usize],
    epoch: usize,
    seed: u64,
    parallelism: Parallelism,
) -> Result<(LossReport, Vec<Array<F>>)> {
    let results = par_map(batch, parallelism, |_, &idx| {
        let opts = EncodeOptions::train(sentence_seed(seed, epoch, idx));
        sentence_gradients(model, &corpus[idx], &opts).map(|(mut l, g)| {
            l.index = idx;
            (l, g)
        })
    });
    let mut report = LossReport::default();
    let mut total = model.store.zeros_like();
    for r in results {
        let (loss, grads) = r?;
        if let Some(grads) = grads {
            for (t, g) in total.iter_mut().zip(&grads) {
                t.add_assign(g);
            }
        }
        report.push(loss);
    }
    if report.tokens > 0 {
        let inv = F::one() / F::from_usize(report.tokens).unwrap();
        total.iter_mut().for_each(|t| t.scale_assign(inv));
    }
    Ok((report, total))
}

/// Deterministic per-token loss over a corpus (argmax selection, no dropout).
pub fn evaluate_loss<F: Real>(
    model: &Model<F>,
    corpus: &[Vec<usize>],
    parallelism: Parallelism,
) -> Result<LossReport> {
    let results = par_map(corpus, parallelism, |idx, toks| {
        sentence_loss(model, toks, &EncodeOptions::eval()).map(|mut l| {
            l.index = idx;
            l
        })
    });
    let mut report = LossReport::default();
    for r in results {
        report.push(r?);
    }
    Ok(report)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub calls: u64,
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {:.6}, {}", self.epoch, self.step, self.loss, self.calls)
    }
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model<f32>,
    pub state: AdamState<f32>,
    pub step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model.clone(), config.seed)?;
        Self::with_model(config, model)
    }

    pub fn with_model(config: TrainConfig, model: Model<f32>) -> Result<Self> {
        config.validate()?;
        if model.config != config.model {
            return Err(Error::Config("model does not match the training configuration".into()));
        }
        let state = AdamState::new(&model.store);
        Ok(Self { config, model, state, step: 0 })
    }

    /// Gradient step on one batch of corpus indices. Batches without any
    /// predicted token leave the parameters untouched.
    pub fn train_batch(&mut self, corpus: &[Vec<usize>], batch: &[usize], epoch: usize) -> Result<LossReport> {
        let (report, grads) =
            batch_gradients(&self.model, corpus, batch, epoch, self.config.seed, self.config.parallelism)?;
        if report.tokens > 0 {
            if grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!("non-finite gradient at step {}", self.step)));
            }
            adamw_step(&mut self.model.store, &grads, &mut self.state, &self.config.optimizer);
            self.step += 1;
        }
        Ok(report)
    }

    /// Batch order of an epoch: a seeded shuffle packed by [`batch_by_length`].
    pub fn epoch_batches(&self, corpus: &[Vec<usize>], epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut stream_rng(self.config.seed, &[TAG_SHUFFLE, epoch as u64]));
        let lengths: Vec<usize> = corpus.iter().map(Vec::len).collect();
        let b = batch_by_length(&lengths, order, self.config.batch_size, self.config.max_total_len, self.config.max_len);
        if b.dropped > 0 {
            log::warn!("epoch {epoch}: dropped {} sentences longer than {}", b.dropped, self.config.max_len);
        }
        b.batches
    }

    pub fn run_epoch(
        &mut self,
        corpus: &[Vec<usize>],
        epoch: usize,
        log: &mut dyn FnMut(&StepRecord),
    ) -> Result<LossReport> {
        let short = corpus.iter().filter(|s| s.len() < 2).count();
        if short > 0 {
            log::warn!("epoch {epoch}: skipping {short} sentences shorter than two tokens");
        }
        let mut report = LossReport::default();
        for batch in self.epoch_batches(corpus, epoch) {
            let r = self.train_batch(corpus, &batch, epoch)?;
            log(&StepRecord { epoch, step: self.step, loss: r.mean(), calls: r.calls });
            report.extend(r);
        }
        Ok(report)
    }
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub epochs: Vec<LossReport>,
    pub checkpoints: Vec<PathBuf>,
}

/// Full training run. With `checkpoint_dir`, the model is saved after every
/// epoch as `epoch-NNN.ckpt`.
pub fn train(
    corpus: &[Vec<usize>],
    config: TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut log: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let mut trainer = Trainer::new(config)?;
    if let Some(dir) = checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut epochs = Vec::new();
    let mut checkpoints = Vec::new();
    for epoch in 0..trainer.config.epochs {
        let report = trainer.run_epoch(corpus, epoch, &mut log)?;
        log::info!("epoch {epoch}: loss {:.4} over {} tokens", report.mean(), report.tokens);
        epochs.push(report);
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("epoch-{epoch:03}.ckpt"));
            save_checkpoint(&trainer.model, &path)?;
            checkpoints.push(path);
        }
    }
    Ok(TrainOutcome { model: trainer.model, epochs, checkpoints })
}
