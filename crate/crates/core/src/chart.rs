//! Differentiable CKY chart.
//!
//! Cell `(i, j)` holds a representation `e`, the log single-step
//! probability `ln p` of its last composition and the log subtree
//! probability `ln p̃`. A non-terminal cell scores every admissible split
//! `k` by `ln p̃_k = ln p_k + ln p̃(i,k) + ln p̃(k+1,j)`, picks one with a
//! straight-through Gumbel-max draw over those log-scores, and copies the
//! chosen candidate's values. Spans are 0-based and inclusive.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::ad::{kernels, real, Array, Real, Tape, Var};
use crate::compose::{compose, Dropout, Model};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, TAG_DROPOUT, TAG_GUMBEL};
use crate::tree::{BinaryTree, Span};

pub type CellRef = usize;

/// Outcome of a straight-through Gumbel-max draw.
#[derive(Clone, Debug, PartialEq)]
pub struct GumbelSelection {
    /// Position of the one in the hard one-hot vector.
    pub index: usize,
    /// `softmax(logits + noise)` at temperature 1.
    pub soft: Vec<f64>,
    /// The Gumbel noise that was added (all zero in test mode).
    pub noise: Vec<f64>,
}

impl GumbelSelection {
    pub fn hard(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.soft.len()];
        h[self.index] = 1.0;
        h
    }
}

/// One standard Gumbel draw, `−ln(−ln u)` with `u ∈ (0, 1)`.
pub fn sample_gumbel<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.gen();
        if u > 0.0 {
            return -(-u.ln()).ln();
        }
    }
}

/// Selection from logits with given noise. Ties go to the lowest index.
pub fn gumbel_select(logits: &[f64], noise: &[f64]) -> GumbelSelection {
    assert_eq!(logits.len(), noise.len());
    let perturbed: Vec<f64> = logits.iter().zip(noise).map(|(l, g)| l + g).collect();
    let mut index = 0;
    for (i, &v) in perturbed.iter().enumerate() {
        if v > perturbed[index] {
            index = i;
        }
    }
    GumbelSelection { index, soft: kernels::softmax(&perturbed), noise: noise.to_vec() }
}

/// Straight-through Gumbel-softmax selection; `test_mode` drops the noise
/// and reduces to a plain argmax.
pub fn gumbel_st<R: Rng>(logits: &[f64], rng: &mut R, test_mode: bool) -> GumbelSelection {
    let noise: Vec<f64> = if test_mode {
        vec![0.0; logits.len()]
    } else {
        logits.iter().map(|_| sample_gumbel(rng)).collect()
    };
    gumbel_select(logits, &noise)
}

/// Which spans may form constituents when word boundaries are enforced.
#[derive(Clone, Debug)]
pub struct WordConstraint {
    word_of: Vec<usize>,
    words: Vec<Span>,
}

impl WordConstraint {
    /// `words` must partition `0..n` into contiguous, ordered groups.
    pub fn new(words: Vec<Span>) -> Result<Self> {
        let mut word_of = Vec::new();
        for (w, &(a, b)) in words.iter().enumerate() {
            if a != word_of.len() || b < a {
                return Err(Error::Contract(format!("word groups do not partition: {words:?}")));
            }
            word_of.extend(std::iter::repeat_n(w, b - a + 1));
        }
        Ok(Self { word_of, words })
    }

    pub fn len(&self) -> usize {
        self.word_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.word_of.is_empty()
    }

    pub fn words(&self) -> &[Span] {
        &self.words
    }

    /// A span is allowed if it lies inside one word or is a union of whole
    /// words.
    pub fn allows(&self, (a, b): Span) -> bool {
        let (wa, wb) = (self.word_of[a], self.word_of[b]);
        wa == wb || (self.words[wa].0 == a && self.words[wb].1 == b)
    }

    pub fn longest_word(&self) -> usize {
        self.words.iter().map(|(a, b)| b - a + 1).max().unwrap_or(0)
    }
}

/// Options shared by the exhaustive and pruned encoders.
#[derive(Clone, Debug)]
pub struct EncodeOptions {
    /// Seed of the keyed Gumbel and dropout streams.
    pub seed: u64,
    /// Noise-free argmax selection and no dropout.
    pub test_mode: bool,
    /// Route gradients to the split scores through the relaxed selection.
    /// When off, the selection is treated as a constant one-hot vector.
    pub straight_through: bool,
    pub constraint: Option<WordConstraint>,
}

impl EncodeOptions {
    pub fn train(seed: u64) -> Self {
        Self { seed, test_mode: false, straight_through: true, constraint: None }
    }

    pub fn eval() -> Self {
        Self { seed: 0, test_mode: true, straight_through: true, constraint: None }
    }
}

#[derive(Clone, Debug)]
pub struct SplitCandidate {
    pub k: usize,
    pub c: Var,
    pub log_p: Var,
    pub log_ptilde: Var,
}

#[derive(Clone, Debug)]
pub struct ChartCell {
    pub span: Span,
    pub e: Var,
    pub log_p: Var,
    pub log_ptilde: Var,
    /// End of the left child of the selected split; `None` for terminals.
    pub split: Option<usize>,
    /// Set once pruning has merged this cell into an atomic terminal.
    pub non_splittable: bool,
    pub candidates: Vec<SplitCandidate>,
    pub selection: Option<GumbelSelection>,
}

impl ChartCell {
    pub fn is_terminal(&self) -> bool {
        self.split.is_none()
    }
}

/// Monotone count of composition-function invocations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CallCounter(u64);

impl CallCounter {
    pub fn get(&self) -> u64 {
        self.0
    }

    pub fn increment(&mut self) {
        self.0 += 1;
    }

    pub fn reset(&mut self) {
        self.0 = 0;
    }
}

/// Cells keyed by span. Values live on the tape used to build the chart.
#[derive(Clone, Debug)]
pub struct Chart {
    n: usize,
    tokens: Vec<usize>,
    cells: Vec<ChartCell>,
    index: Vec<Option<CellRef>>,
    root: Option<CellRef>,
    pub calls: CallCounter,
}

impl Chart {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn get(&self, (i, j): Span) -> Option<&ChartCell> {
        self.lookup((i, j)).map(|r| &self.cells[r])
    }

    pub fn lookup(&self, (i, j): Span) -> Option<CellRef> {
        if i > j || j >= self.n {
            return None;
        }
        self.index[i * self.n + j]
    }

    pub fn cell(&self, r: CellRef) -> &ChartCell {
        &self.cells[r]
    }

    pub(crate) fn cell_mut(&mut self, r: CellRef) -> &mut ChartCell {
        &mut self.cells[r]
    }

    pub fn cells(&self) -> &[ChartCell] {
        &self.cells
    }

    /// Number of filled cells.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn root(&self) -> Option<&ChartCell> {
        self.root.map(|r| &self.cells[r])
    }

    pub(crate) fn set_root(&mut self, r: CellRef) {
        self.root = Some(r);
    }

    fn insert(&mut self, cell: ChartCell) -> Result<CellRef> {
        let (i, j) = cell.span;
        let slot = i * self.n + j;
        if self.index[slot].is_some() {
            return Err(Error::Integrity(format!("cell {:?} computed twice", cell.span)));
        }
        self.cells.push(cell);
        self.index[slot] = Some(self.cells.len() - 1);
        Ok(self.cells.len() - 1)
    }

    /// Derivation below `span`, following the selected splits.
    pub fn recover_tree(&self, span: Span) -> Result<BinaryTree> {
        let cell = self
            .get(span)
            .ok_or_else(|| Error::Integrity(format!("no cell at {span:?}")))?;
        match cell.split {
            None if span.0 == span.1 => Ok(BinaryTree::leaf(span.0)),
            None => Err(Error::Integrity(format!("wide cell {span:?} without a split"))),
            Some(k) => {
                if k < span.0 || k >= span.1 {
                    return Err(Error::Integrity(format!("split {k} outside {span:?}")));
                }
                Ok(BinaryTree::node(
                    self.recover_tree((span.0, k))?,
                    self.recover_tree((k + 1, span.1))?,
                ))
            }
        }
    }

    /// Derivation of the whole sentence.
    pub fn tree(&self) -> Result<BinaryTree> {
        let root = self.root().ok_or_else(|| Error::Integrity("chart has no root".into()))?;
        self.recover_tree(root.span)
    }
}

/// Builds chart cells with a given model.
pub struct Encoder<'m, F: Real> {
    pub model: &'m Model<F>,
    pub opts: EncodeOptions,
}

impl<'m, F: Real> Encoder<'m, F> {
    pub fn new(model: &'m Model<F>, opts: EncodeOptions) -> Self {
        Self { model, opts }
    }

    /// Terminal cells from the embedding table; `ln p = ln p̃ = 0`.
    pub fn init_chart(&self, tape: &mut Tape<'_, F>, tokens: &[usize]) -> Result<Chart> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::Contract("cannot encode an empty sentence".into()));
        }
        if let Some(c) = &self.opts.constraint {
            if c.len() != n {
                return Err(Error::Contract(format!(
                    "word constraint over {} tokens for a sentence of {n}",
                    c.len()
                )));
            }
        }
        let zero = tape.constant(Array::scalar(F::zero()));
        let mut chart = Chart {
            n,
            tokens: tokens.to_vec(),
            cells: Vec::with_capacity(4 * n),
            index: vec![None; n * n],
            root: None,
            calls: CallCounter::default(),
        };
        for (i, &tok) in tokens.iter().enumerate() {
            if tok >= self.model.vocab_size() {
                return Err(Error::Vocabulary(format!(
                    "token id {tok} outside vocabulary of {}",
                    self.model.vocab_size()
                )));
            }
            let e = tape.embed(self.model.ids.tok_emb, tok)?;
            chart.insert(ChartCell {
                span: (i, i),
                e,
                log_p: zero,
                log_ptilde: zero,
                split: None,
                non_splittable: false,
                candidates: Vec::new(),
                selection: None,
            })?;
        }
        if n == 1 {
            chart.set_root(0);
        }
        Ok(chart)
    }

    pub fn allows(&self, span: Span) -> bool {
        self.opts.constraint.as_ref().is_none_or(|c| c.allows(span))
    }

    /// Computes cell `(i, j)` from the given split points, each being the
    /// last token of the left child.
    pub fn fill_cell(
        &self,
        tape: &mut Tape<'_, F>,
        chart: &mut Chart,
        (i, j): Span,
        splits: &[usize],
    ) -> Result<CellRef> {
        if splits.is_empty() {
            return Err(Error::Contract(format!("no admissible split for cell ({i}, {j})")));
        }
        let mut candidates = Vec::with_capacity(splits.len());
        for &k in splits {
            let (Some(left), Some(right)) = (chart.get((i, k)), chart.get((k + 1, j))) else {
                return Err(Error::Integrity(format!("split {k} of ({i}, {j}) lacks a child")));
            };
            let (le, lpt, re, rpt) = (left.e, left.log_ptilde, right.e, right.log_ptilde);
            let out = if self.opts.test_mode || self.model.config.dropout <= 0.0 {
                compose(tape, self.model, le, re, &mut Dropout::<ChaCha8Rng>::Off)?
            } else {
                let mut rng = stream_rng(self.opts.seed, &[TAG_DROPOUT, i as u64, j as u64, k as u64]);
                let rate = self.model.config.dropout;
                compose(tape, self.model, le, re, &mut Dropout::On { rate, rng: &mut rng })?
            };
            chart.calls.increment();
            let children = tape.add(lpt, rpt)?;
            let log_ptilde = tape.add(out.log_p, children)?;
            candidates.push(SplitCandidate { k, c: out.c, log_p: out.log_p, log_ptilde });
        }

        let noise: Vec<f64> = if self.opts.test_mode {
            vec![0.0; candidates.len()]
        } else {
            // One draw per split position of the span, so a cell sees the same
            // noise whichever subset of splits is admissible.
            let mut rng = stream_rng(self.opts.seed, &[TAG_GUMBEL, i as u64, j as u64]);
            let all: Vec<f64> = (i..j).map(|_| sample_gumbel(&mut rng)).collect();
            splits.iter().map(|&k| all[k - i]).collect()
        };
        let cell = self.select(tape, (i, j), candidates, noise)?;
        chart.insert(cell)
    }

    fn select(
        &self,
        tape: &mut Tape<'_, F>,
        span: Span,
        candidates: Vec<SplitCandidate>,
        noise: Vec<f64>,
    ) -> Result<ChartCell> {
        let logits: Vec<f64> =
            candidates.iter().map(|c| tape.scalar(c.log_ptilde).to_f64().unwrap()).collect();
        let selection = gumbel_select(&logits, &noise);
        let cand_c: Vec<Var> = candidates.iter().map(|c| c.c).collect();
        let cand_lpt: Vec<Var> = candidates.iter().map(|c| c.log_ptilde).collect();
        let logit_var = tape.stack(&cand_lpt)?;
        let soft: Vec<F> = selection.soft.iter().map(|&s| real(s)).collect();
        let e = tape.st_mix(&cand_c, logit_var, soft, selection.index, self.opts.straight_through)?;
        let chosen = &candidates[selection.index];
        Ok(ChartCell {
            span,
            e,
            log_p: chosen.log_p,
            log_ptilde: chosen.log_ptilde,
            split: Some(chosen.k),
            non_splittable: false,
            candidates,
            selection: Some(selection),
        })
    }

    /// Redoes the selection of cell `r` among the already computed split
    /// candidates accepted by `keep`, with the cell's original noise. No
    /// composition is performed.
    pub(crate) fn reselect(
        &self,
        tape: &mut Tape<'_, F>,
        chart: &mut Chart,
        r: CellRef,
        keep: impl Fn(usize) -> bool,
    ) -> Result<()> {
        let cell = chart.cell(r);
        let Some(sel) = &cell.selection else {
            return Err(Error::Contract(format!("terminal cell {:?} has no selection", cell.span)));
        };
        let (candidates, noise): (Vec<SplitCandidate>, Vec<f64>) = cell
            .candidates
            .iter()
            .zip(&sel.noise)
            .filter(|(c, _)| keep(c.k))
            .map(|(c, &g)| (c.clone(), g))
            .unzip();
        if candidates.is_empty() {
            return Err(Error::Integrity(format!("no admissible split left for {:?}", cell.span)));
        }
        let non_splittable = cell.non_splittable;
        let span = cell.span;
        let fresh = self.select(tape, span, candidates, noise)?;
        *chart.cell_mut(r) = ChartCell { non_splittable, ..fresh };
        Ok(())
    }

    /// Exhaustive CKY: every cell, by increasing span length. Performs
    /// `n(n²−1)/6` compositions on an unconstrained sentence.
    pub fn encode_full(&self, tape: &mut Tape<'_, F>, tokens: &[usize]) -> Result<Chart> {
        let mut chart = self.init_chart(tape, tokens)?;
        let n = tokens.len();
        for len in 2..=n {
            for i in 0..=n - len {
                let j = i + len - 1;
                if !self.allows((i, j)) {
                    continue;
                }
                let splits: Vec<usize> = (i..j)
                    .filter(|&k| chart.lookup((i, k)).is_some() && chart.lookup((k + 1, j)).is_some())
                    .collect();
                if splits.is_empty() && self.opts.constraint.is_some() {
                    continue;
                }
                let r = self.fill_cell(tape, &mut chart, (i, j), &splits)?;
                if len == n {
                    chart.set_root(r);
                }
            }
        }
        Ok(chart)
    }
}
