//! Corpus ingestion: vocabularies and word-piece segmentation, bracketed
//! constituency trees, CoNLL dependencies and length-bounded batching.

mod batch;
mod conll;
mod ptb;
mod vocab;

pub use batch::{batch_by_length, Batching, DEFAULT_MAX_LEN};
pub use conll::{load_conll_deps, parse_conll_deps, DepGraph};
pub use ptb::{load_ptb_trees, parse_ptb_trees, PtbTree, PUNCT_TAGS};
pub use vocab::{detokenize, piece_words, wordpiece_tokenize, TokenSequence, Vocab, CLS, CONTINUATION, MASK, SPECIALS, SUM, UNK};

use std::path::Path;

use crate::error::Result;

/// Reads a UTF-8 corpus, one sentence per line. Blank lines are dropped.
pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}
