//! Unsupervised tree induction with a recursive transformer over a
//! differentiable CKY chart.
//!
//! Cells of the chart are built bottom-up by [`compose::compose`]; each
//! cell picks one split with a straight-through Gumbel-max selection
//! ([`chart`]). [`prune`] keeps the number of composition calls linear in
//! sentence length by merging locally confident bigram cells into new
//! terminals once the chart reaches the pruning window. [`train`] fits the
//! model with a bidirectional cloze objective and [`eval`] scores induced
//! trees.

pub mod ad;
pub mod chart;
pub mod checkpoint;
pub mod compose;
pub mod data;
pub mod error;
pub mod eval;
pub mod parallel;
pub mod prune;
pub mod rng;
pub mod synth;
pub mod train;
pub mod tree;

pub use error::{Error, Result};
