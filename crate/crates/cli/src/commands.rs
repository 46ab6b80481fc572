use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use chartformer::ad::Tape;
use chartformer::chart::{EncodeOptions, Encoder};
use chartformer::checkpoint::{load_checkpoint, save_checkpoint};
use chartformer::compose::{Model, ModelConfig};
use chartformer::data::{
    load_conll_deps, load_ptb_trees, piece_words, read_corpus, wordpiece_tokenize, TokenSequence, Vocab,
};
use chartformer::error::{Error, Result};
use chartformer::eval::{self, RECALL_LABELS};
use chartformer::parallel::{par_map, Parallelism};
use chartformer::prune::tree_induction;
use chartformer::synth::ToyGrammar;
use chartformer::train::{self, TrainConfig};
use chartformer::tree::{BinaryTree, Tree};

use crate::settings::Settings;
use crate::{
    CountArgs, EvalDepArgs, EvalF1Args, EvalRecallArgs, ExportArgs, ModelArgs, ParseArgs, PpplArgs, SynthArgs,
    TrainArgs, VocabArgs,
};

fn parallelism(s: &Settings, sequential: bool) -> Result<Parallelism> {
    Ok(if s.switch(sequential, "sequential")? { Parallelism::Sequential } else { Parallelism::Auto })
}

fn model_config(s: &Settings, a: &ModelArgs, vocab_size: usize) -> Result<ModelConfig> {
    let d = ModelConfig::default();
    Ok(ModelConfig {
        dim: s.pick(a.dim, "dim", d.dim)?,
        layers: s.pick(a.layers, "layers", d.layers)?,
        heads: s.pick(a.heads, "heads", d.heads)?,
        ffn_dim: s.pick(a.ffn_dim, "ffn_dim", d.ffn_dim)?,
        vocab_size,
        window: s.pick(a.window, "window", d.window)?,
        dropout: s.pick(a.dropout, "dropout", d.dropout)?,
        init_std: s.pick(a.init_std, "init_std", d.init_std)?,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", path.display())))
}

/// File when given, standard output otherwise.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn metric(name: &str, value: impl std::fmt::Display) {
    println!("{name}, {value}");
}

/// Reads non-empty lines as trees; errors carry the line number.
fn read_trees(path: &Path) -> Result<Vec<(usize, Tree)>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let tree = Tree::parse(line).map_err(|e| Error::Parse { line: idx + 1, message: e.to_string() })?;
        out.push((idx + 1, tree));
    }
    Ok(out)
}

fn load_model(s: &Settings, flag: Option<std::path::PathBuf>, vocab: &Vocab) -> Result<Model<f32>> {
    let path = s.input_path(flag, "checkpoint")?;
    let model: Model<f32> = load_checkpoint(&path)?;
    if model.vocab_size() != vocab.len() {
        return Err(Error::Config(format!(
            "checkpoint expects {} vocabulary entries, vocabulary file has {}",
            model.vocab_size(),
            vocab.len()
        )));
    }
    Ok(model)
}

fn load_vocab(s: &Settings, flag: Option<std::path::PathBuf>) -> Result<Vocab> {
    Vocab::load(&s.input_path(flag, "vocab")?)
}

pub fn vocab(s: &Settings, a: VocabArgs) -> Result<()> {
    let corpus = read_corpus(&s.input_path(a.corpus, "corpus")?)?;
    let vocab = Vocab::build(corpus.iter().map(String::as_str), a.max_words, a.min_count)?;
    vocab.save(&s.path(a.output, "output")?)?;
    metric("vocab_size", vocab.len());
    Ok(())
}

pub fn synth(s: &Settings, a: SynthArgs) -> Result<()> {
    let grammar = match a.grammar {
        Some(p) => ToyGrammar::from_text(&std::fs::read_to_string(p)?, a.max_depth)?,
        None => ToyGrammar::bracket_default(),
    };
    let seed = s.pick(a.seed, "seed", 0)?;
    let samples = grammar.sample_corpus(a.count, seed);
    let mut out = sink(s.optional_path(a.output, "output")?.as_deref())?;
    for x in &samples {
        writeln!(out, "{}", x.sentence())?;
    }
    out.flush()?;
    if let Some(p) = a.trees {
        let mut t = create(&p)?;
        for x in &samples {
            let tree = if a.flat { x.gold_bracketed() } else { x.bracketed() };
            writeln!(t, "{tree}")?;
        }
        t.flush()?;
    }
    Ok(())
}

pub fn train(s: &Settings, a: TrainArgs) -> Result<()> {
    let corpus_path = s.input_path(a.corpus, "corpus")?;
    let vocab = load_vocab(s, a.vocab)?;
    let out_dir = s.path(a.out_dir, "out_dir")?;
    let d = TrainConfig::default();
    let mut config = TrainConfig {
        model: model_config(s, &a.model, vocab.len())?,
        batch_size: s.pick(a.batch_size, "batch_size", d.batch_size)?,
        max_total_len: s.pick(a.max_total_len, "max_total_len", d.max_total_len)?,
        max_len: s.pick(a.max_len, "max_len", d.max_len)?,
        epochs: s.pick(a.epochs, "epochs", d.epochs)?,
        seed: s.pick(a.seed, "seed", d.seed)?,
        parallelism: parallelism(s, a.sequential)?,
        ..d
    };
    let o = &mut config.optimizer;
    o.lr = s.pick(a.lr, "lr", o.lr)?;
    o.weight_decay = s.pick(a.weight_decay, "weight_decay", o.weight_decay)?;
    o.beta1 = s.pick(a.beta1, "beta1", o.beta1)?;
    o.beta2 = s.pick(a.beta2, "beta2", o.beta2)?;
    o.eps = s.pick(a.eps, "eps", o.eps)?;
    config.validate()?;

    let corpus: Vec<Vec<usize>> =
        read_corpus(&corpus_path)?.iter().map(|l| wordpiece_tokenize(l, &vocab).ids).collect();
    std::fs::create_dir_all(&out_dir)?;
    let mut log = create(&out_dir.join("train.log"))?;
    let mut log_err = Ok(());
    let outcome = train::train(&corpus, config, Some(&out_dir), |r| {
        if log_err.is_ok() {
            log_err = writeln!(log, "{r}");
        }
    })?;
    log_err?;
    log.flush()?;
    save_checkpoint(&outcome.model, &out_dir.join("model.ckpt"))?;
    for (e, r) in outcome.epochs.iter().enumerate() {
        metric(&format!("epoch_{e}_loss"), format!("{:.6}", r.mean()));
    }
    Ok(())
}

/// Output lines are in input order; blank input lines give blank output lines.
pub fn parse(s: &Settings, a: ParseArgs) -> Result<()> {
    let vocab = load_vocab(s, a.vocab)?;
    let model = load_model(s, a.checkpoint, &vocab)?;
    let input = std::fs::read_to_string(s.input_path(a.input, "input")?)?;
    let constrained = s.switch(a.word_constraint, "word_constraint")?;
    let lines: Vec<&str> = input.lines().collect();
    let par = parallelism(s, a.sequential)?;
    let rendered = par_map(&lines, par, |_, line| -> Result<String> {
        let seq = wordpiece_tokenize(line, &vocab);
        if seq.is_empty() {
            return Ok(String::new());
        }
        let words = constrained.then_some(seq.words.as_slice());
        let tree = eval::parse(&model, &seq.ids, words)?;
        Ok(if constrained {
            let words: Vec<String> = line.split_whitespace().map(String::from).collect();
            tree.render(&words)
        } else {
            let pieces: Vec<String> = seq.pieces(&vocab).into_iter().map(String::from).collect();
            render_pieces(&tree, &pieces)
        })
    });
    let mut out = sink(s.optional_path(a.output, "output")?.as_deref())?;
    for (idx, r) in rendered.into_iter().enumerate() {
        let line = r.map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("line {}: {m}", idx + 1)),
            e => e,
        })?;
        if line.is_empty() {
            log::warn!("line {} is empty", idx + 1);
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Bracketing with one leaf per piece.
fn render_pieces(tree: &BinaryTree, pieces: &[String]) -> String {
    tree.to_tree(&|(a, b)| pieces[a..=b].join(" ")).to_string()
}

pub fn pppl(s: &Settings, a: PpplArgs) -> Result<()> {
    let vocab = load_vocab(s, a.vocab)?;
    let model = load_model(s, a.checkpoint, &vocab)?;
    let corpus: Vec<Vec<usize>> = read_corpus(&s.input_path(a.corpus, "corpus")?)?
        .iter()
        .map(|l| wordpiece_tokenize(l, &vocab).ids)
        .collect();
    let report = eval::pppl(&model, &corpus, parallelism(s, a.sequential)?)?;
    if report.scored.is_empty() {
        return Err(Error::Config("no sentence with at least two tokens".into()));
    }
    metric("pppl", format!("{:.6}", report.pppl));
    metric("sentences", report.scored.len());
    if let Some(p) = s.optional_path(a.per_sentence, "per_sentence")? {
        let mut t = create(&p)?;
        writeln!(t, "sentence\ttokens\tmean_log_likelihood")?;
        for (&i, m) in report.scored.iter().zip(&report.sentence_means) {
            writeln!(t, "{}\t{}\t{m:.6}", i + 1, corpus[i].len())?;
        }
        t.flush()?;
    }
    Ok(())
}

pub fn eval_f1(s: &Settings, a: EvalF1Args) -> Result<()> {
    let pred = read_trees(&s.input_path(a.pred, "pred")?)?;
    let gold = read_trees(&s.input_path(a.gold, "gold")?)?;
    if pred.len() != gold.len() {
        return Err(Error::Alignment(format!("{} predicted trees but {} gold trees", pred.len(), gold.len())));
    }
    let mut scores = Vec::with_capacity(pred.len());
    for ((line, p), (_, g)) in pred.iter().zip(&gold) {
        let f = eval::unlabeled_f1_trees(p, g).map_err(|e| match e {
            Error::Alignment(m) => Error::Alignment(format!("line {line}: {m}")),
            e => e,
        })?;
        scores.push(f);
    }
    let total = eval::corpus_f1(&scores);
    metric("precision", format!("{:.4}", total.precision));
    metric("recall", format!("{:.4}", total.recall));
    metric("f1", format!("{:.4}", total.f1));
    metric("sentences", scores.len());
    if let Some(p) = s.optional_path(a.per_sentence, "per_sentence")? {
        let mut t = create(&p)?;
        writeln!(t, "line\tprecision\trecall\tf1")?;
        for ((line, _), f) in pred.iter().zip(&scores) {
            writeln!(t, "{line}\t{:.4}\t{:.4}\t{:.4}", f.precision, f.recall, f.f1)?;
        }
        t.flush()?;
    }
    Ok(())
}

fn binary(line: usize, t: &Tree) -> Result<BinaryTree> {
    t.to_binary().map_err(|e| Error::Format(format!("line {line}: predicted tree is not binary ({e})")))
}

pub fn eval_recall(s: &Settings, a: EvalRecallArgs) -> Result<()> {
    let pred = read_trees(&s.input_path(a.pred, "pred")?)?;
    let gold = load_ptb_trees(&s.input_path(a.gold, "gold")?, a.strip_punct, a.lowercase)?;
    if pred.len() != gold.len() {
        return Err(Error::Alignment(format!("{} predicted trees but {} gold trees", pred.len(), gold.len())));
    }
    let mut trees = Vec::new();
    let mut words = Vec::new();
    for (line, t) in &pred {
        trees.push(binary(*line, t)?);
        words.push(piece_words(&t.leaves()));
    }
    let report = eval::constituent_recall(&trees, &gold, &RECALL_LABELS, Some(&words))?;
    for label in RECALL_LABELS {
        let (found, total) = report.counts[label];
        metric(&format!("recall_{}", label.to_lowercase()), format!("{:.4}", report.recall(label)));
        metric(&format!("count_{}", label.to_lowercase()), format!("{found}/{total}"));
    }
    Ok(())
}

pub fn eval_depcompat(s: &Settings, a: EvalDepArgs) -> Result<()> {
    let pred = read_trees(&s.input_path(a.pred, "pred")?)?;
    let deps = load_conll_deps(&s.input_path(a.deps, "deps")?)?;
    if pred.len() != deps.len() {
        return Err(Error::Alignment(format!("{} predicted trees but {} dependency trees", pred.len(), deps.len())));
    }
    let mut scores = Vec::new();
    for ((line, t), dep) in pred.iter().zip(&deps) {
        let words = piece_words(&t.leaves());
        let pieces = words.len() != t.leaves().len();
        let score = eval::dep_compat(&binary(*line, t)?, dep, pieces.then_some(words.as_slice())).map_err(|e| {
            match e {
                Error::Alignment(m) => Error::Alignment(format!("line {line}: {m}")),
                e => e,
            }
        })?;
        scores.push((*line, score));
    }
    let valid: Vec<f64> = scores.iter().filter_map(|(_, s)| *s).collect();
    let mean = if valid.is_empty() { 0.0 } else { valid.iter().sum::<f64>() / valid.len() as f64 };
    metric("dep_compat", format!("{mean:.4}"));
    metric("sentences", valid.len());
    if let Some(p) = s.optional_path(a.per_sentence, "per_sentence")? {
        let mut t = create(&p)?;
        writeln!(t, "line\tdep_compat")?;
        for (line, score) in &scores {
            match score {
                Some(v) => writeln!(t, "{line}\t{v:.4}")?,
                None => writeln!(t, "{line}\t-")?,
            }
        }
        t.flush()?;
    }
    Ok(())
}

pub fn export_trees(s: &Settings, a: ExportArgs) -> Result<()> {
    let trees = load_ptb_trees(&s.input_path(a.input, "input")?, a.strip_punct, a.lowercase)?;
    let vocab = match a.vocab {
        Some(p) => Some(load_vocab(s, Some(p))?),
        None => None,
    };
    let mut out = sink(s.optional_path(a.output, "output")?.as_deref())?;
    for t in &trees {
        let plain = t.to_unlabeled();
        let tree = match &vocab {
            Some(v) => {
                let sentence = t.words().join(" ");
                let seq: TokenSequence = wordpiece_tokenize(&sentence, v);
                eval::expand_to_pieces(&plain, &seq.words, &seq.pieces(v))?
            }
            None => plain,
        };
        writeln!(out, "{tree}")?;
    }
    out.flush()?;
    Ok(())
}

pub fn count_calls(s: &Settings, a: CountArgs) -> Result<()> {
    let vocab = load_vocab(s, a.vocab)?;
    let model = match s.optional_path(a.checkpoint.clone(), "checkpoint")? {
        Some(p) => load_model(s, Some(p), &vocab)?,
        None => {
            let cfg = model_config(s, &a.model, vocab.len())?;
            cfg.validate()?;
            Model::new(cfg, s.pick(a.seed, "seed", 0)?)?
        }
    };
    let corpus: Vec<Vec<usize>> = read_corpus(&s.input_path(a.corpus, "corpus")?)?
        .iter()
        .map(|l| wordpiece_tokenize(l, &vocab).ids)
        .collect();
    let m = model.config.window;
    let counts = par_map(&corpus, parallelism(s, a.sequential)?, |_, toks| -> Result<u64> {
        let enc = Encoder::new(&model, EncodeOptions::eval());
        let mut tape = Tape::new(&model.store);
        Ok(tree_induction(&enc, &mut tape, toks, m)?.chart.calls.get())
    })
    .into_iter()
    .collect::<Result<Vec<u64>>>()?;
    let total: u64 = counts.iter().sum();
    let tokens: usize = corpus.iter().map(Vec::len).sum();
    metric("window", m);
    metric("calls", total);
    metric("tokens", tokens);
    metric("calls_per_token", format!("{:.4}", total as f64 / tokens.max(1) as f64));
    if let Some(p) = s.optional_path(a.per_sentence, "per_sentence")? {
        let mut t = create(&p)?;
        writeln!(t, "sentence\ttokens\tcalls")?;
        for (i, (toks, c)) in corpus.iter().zip(&counts).enumerate() {
            writeln!(t, "{}\t{}\t{c}", i + 1, toks.len())?;
        }
        t.flush()?;
    }
    Ok(())
}
