//! Parsing and language-modelling metrics: pseudo-perplexity, unlabeled
//! span F1, constituent recall by label and dependency compatibility.

mod dep;
mod lm;
mod spans;

pub use dep::{dep_compat, is_independent_subtree};
pub use lm::{parse, parse_corpus, pppl, pppl_from_means, sentence_log_likelihood, PpplReport};
pub use spans::{
    collapse_to_words, constituent_recall, corpus_f1, expand_to_pieces, span_f1, unlabeled_f1,
    unlabeled_f1_trees, RecallReport, SpanSet, F1, RECALL_LABELS,
};
