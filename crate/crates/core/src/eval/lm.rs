use rand_chacha::ChaCha8Rng;

use crate::ad::{Real, Tape, Var};
use crate::chart::{EncodeOptions, Encoder, WordConstraint};
use crate::compose::{predict_word, Dropout, Model};
use crate::error::Result;
use crate::parallel::{par_map, Parallelism};
use crate::prune::tree_induction;
use crate::tree::{BinaryTree, Span};

use super::spans::collapse_to_words;

#[derive(Clone, Debug, PartialEq)]
pub struct PpplReport {
    /// Mean token log-likelihood of each scored sentence, in corpus order.
    pub sentence_means: Vec<f64>,
    /// Indices of the sentences in `sentence_means`; shorter ones are skipped.
    pub scored: Vec<usize>,
    pub pppl: f64,
}

/// `exp` of the negated mean of per-sentence mean log-likelihoods.
pub fn pppl_from_means(means: &[f64]) -> f64 {
    if means.is_empty() {
        return f64::NAN;
    }
    (-means.iter().sum::<f64>() / means.len() as f64).exp()
}

fn encode_root<F: Real>(tape: &mut Tape<'_, F>, model: &Model<F>, tokens: &[usize]) -> Result<Option<Var>> {
    if tokens.is_empty() {
        return Ok(None);
    }
    let enc = Encoder::new(model, EncodeOptions::eval());
    let ind = tree_induction(&enc, tape, tokens, model.config.window)?;
    Ok(ind.chart.root().map(|c| c.e))
}

/// Mean log-probability of each token given the prefix and suffix, each
/// encoded on its own as a complete sentence. `None` below two tokens.
pub fn sentence_log_likelihood<F: Real>(model: &Model<F>, tokens: &[usize]) -> Result<Option<f64>> {
    if tokens.len() < 2 {
        return Ok(None);
    }
    let mut total = 0.0;
    for (i, &target) in tokens.iter().enumerate() {
        let mut tape = Tape::new(&model.store);
        let left = encode_root(&mut tape, model, &tokens[..i])?;
        let right = encode_root(&mut tape, model, &tokens[i + 1..])?;
        let lp = predict_word(&mut tape, model, left, right, &mut Dropout::<ChaCha8Rng>::Off)?;
        total += tape.value(lp).data()[target].to_f64().unwrap();
    }
    Ok(Some(total / tokens.len() as f64))
}

pub fn pppl<F: Real>(model: &Model<F>, corpus: &[Vec<usize>], parallelism: Parallelism) -> Result<PpplReport> {
    let results = par_map(corpus, parallelism, |_, toks| sentence_log_likelihood(model, toks));
    let mut sentence_means = Vec::new();
    let mut scored = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        if let Some(m) = r? {
            sentence_means.push(m);
            scored.push(i);
        }
    }
    let pppl = pppl_from_means(&sentence_means);
    Ok(PpplReport { sentence_means, scored, pppl })
}

/// Deterministic tree for one sentence. With `words`, induction never
/// crosses a word boundary and the returned tree has one leaf per word.
pub fn parse<F: Real>(model: &Model<F>, tokens: &[usize], words: Option<&[Span]>) -> Result<BinaryTree> {
    let mut opts = EncodeOptions::eval();
    if let Some(w) = words {
        opts.constraint = Some(WordConstraint::new(w.to_vec())?);
    }
    let enc = Encoder::new(model, opts);
    let mut tape = Tape::new(&model.store);
    let tree = tree_induction(&enc, &mut tape, tokens, model.config.window)?.chart.tree()?;
    match words {
        Some(w) => collapse_to_words(&tree, w),
        None => Ok(tree),
    }
}

pub fn parse_corpus<F: Real>(
    model: &Model<F>,
    corpus: &[(Vec<usize>, Option<Vec<Span>>)],
    parallelism: Parallelism,
) -> Result<Vec<BinaryTree>> {
    par_map(corpus, parallelism, |_, (toks, words)| parse(model, toks, words.as_deref())).into_iter().collect()
}
