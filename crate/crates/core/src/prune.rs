//! Pruned tree induction.
//!
//! Rows up to the window `m` are filled exactly as in CKY. From then on,
//! every step commits one bigram cell of the current table as a new
//! atomic terminal, drops the table row and column that would split it,
//! and fills the handful of cells left empty on row `m`. Each step costs at
//! most `m` cells of at most `m − 1` compositions, so a sentence of `n`
//! tokens needs `O(m²n)` compositions.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use crate::ad::{Real, Tape};
use crate::chart::{CellRef, Chart, Encoder, WordConstraint};
use crate::error::{Error, Result};
use crate::tree::Span;

/// Working view over a chart: the current terminals (original token
/// ranges) and a triangular table of references into the chart.
#[derive(Clone, Debug)]
pub struct PrunedTable {
    terminals: Vec<Span>,
    cells: Vec<Option<CellRef>>,
    generation: usize,
}

impl PrunedTable {
    /// Table over the terminal cells of a freshly initialized chart.
    pub fn new(chart: &Chart) -> Result<Self> {
        let n = chart.n();
        let mut cells = vec![None; n * n];
        for i in 0..n {
            let r = chart
                .lookup((i, i))
                .ok_or_else(|| Error::Integrity(format!("missing terminal {i}")))?;
            cells[i * n + i] = Some(r);
        }
        Ok(Self { terminals: (0..n).map(|i| (i, i)).collect(), cells, generation: 0 })
    }

    pub fn len(&self) -> usize {
        self.terminals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terminals.is_empty()
    }

    /// Number of pruning steps applied so far.
    pub fn generation(&self) -> usize {
        self.generation
    }

    pub fn terminals(&self) -> &[Span] {
        &self.terminals
    }

    pub fn get(&self, i: usize, j: usize) -> Option<CellRef> {
        let n = self.len();
        if i > j || j >= n {
            return None;
        }
        self.cells[i * n + j]
    }

    fn set(&mut self, i: usize, j: usize, r: CellRef) {
        let n = self.len();
        self.cells[i * n + j] = Some(r);
    }

    /// Original token range covered by table cell `(i, j)`.
    pub fn span(&self, i: usize, j: usize) -> Span {
        (self.terminals[i].0, self.terminals[j].1)
    }

    /// Original spans of every referenced cell.
    pub fn referenced_spans(&self, chart: &Chart) -> BTreeSet<Span> {
        self.cells.iter().flatten().map(|&r| chart.cell(r).span).collect()
    }
}

/// A committed merge of table terminals `u` and `u + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct MergeDecision {
    pub u: usize,
    /// `p(x)·(1 − p(left neighbour))·(1 − p(right neighbour))`.
    pub score: f64,
    /// Original token range of the merged cell.
    pub span: Span,
}

/// Spans of the derivation below `root`, stopping at nodes that lie inside
/// a single current terminal.
fn subtree_spans(chart: &Chart, root: CellRef, terminal_of: &HashMap<usize, usize>, table: &PrunedTable, out: &mut BTreeSet<Span>) {
    let mut stack = vec![chart.cell(root).span];
    while let Some(span) = stack.pop() {
        out.insert(span);
        let inside_terminal = terminal_of
            .get(&span.0)
            .is_some_and(|&t| table.terminals[t].1 >= span.1);
        if inside_terminal {
            continue;
        }
        if let Some(k) = chart.get(span).and_then(|c| c.split) {
            stack.push((span.0, k));
            stack.push((k + 1, span.1));
        }
    }
}

/// Picks the bigram cell to commit.
///
/// Candidates are the second-row cells that occur in the derivation of some
/// row-`m` cell. Each is scored by its own single-step probability, damped
/// by its neighbours' probabilities; a missing neighbour counts as `p = 0`.
/// Ties go to the lowest index.
pub fn find_merge<F: Real>(
    table: &PrunedTable,
    chart: &Chart,
    tape: &Tape<'_, F>,
    m: usize,
    constraint: Option<&WordConstraint>,
) -> Result<MergeDecision> {
    let n = table.len();
    if n < 2 {
        return Err(Error::Contract("cannot merge in a table of one terminal".into()));
    }
    let p_of = |r: CellRef| tape.scalar(chart.cell(r).log_p).to_f64().unwrap().exp();
    let bigrams: Vec<Option<CellRef>> = (0..n - 1).map(|x| table.get(x, x + 1)).collect();
    let bigram_index: HashMap<Span, usize> = bigrams
        .iter()
        .enumerate()
        .filter_map(|(x, r)| r.map(|r| (chart.cell(r).span, x)))
        .collect();
    let terminal_of: HashMap<usize, usize> =
        table.terminals.iter().enumerate().map(|(t, s)| (s.0, t)).collect();

    let mut candidates = BTreeSet::new();
    let window = m.min(n);
    for i in 0..=n - window {
        let Some(r) = table.get(i, i + window - 1) else { continue };
        let mut spans = BTreeSet::new();
        subtree_spans(chart, r, &terminal_of, table, &mut spans);
        candidates.extend(spans.iter().filter_map(|s| bigram_index.get(s).copied()));
    }
    if let Some(c) = constraint {
        candidates.retain(|&x| c.allows(table.span(x, x + 1)));
    }
    if candidates.is_empty() && constraint.is_some() {
        candidates = (0..n - 1)
            .filter(|&x| bigrams[x].is_some() && constraint.unwrap().allows(table.span(x, x + 1)))
            .collect();
    }
    if candidates.is_empty() {
        return Err(Error::Contract("no merge candidate in any window derivation".into()));
    }

    let neighbour = |x: Option<usize>| x.and_then(|x| bigrams.get(x).copied().flatten()).map_or(0.0, p_of);
    let mut best: Option<MergeDecision> = None;
    for &x in &candidates {
        let own = p_of(bigrams[x].unwrap());
        let score = own * (1.0 - neighbour(x.checked_sub(1))) * (1.0 - neighbour(Some(x + 1)));
        if best.as_ref().is_none_or(|b| score > b.score) {
            best = Some(MergeDecision { u: x, score, span: table.span(x, x + 1) });
        }
    }
    Ok(best.unwrap())
}

/// Commits the best merge and returns the shrunken table.
///
/// With `u` the merge point, new cell `(i, j)` refers to old cell
/// `(i', j')` where `i' = i + 1` if `i ≥ u + 1` and `j' = j + 1` if `j ≥ u`.
/// Old cells ending at terminal `u` or starting at `u + 1` are dropped.
/// Surviving cells whose selected split separated the merged pair pick
/// again among their remaining split candidates.
pub fn pruning<F: Real>(
    enc: &Encoder<'_, F>,
    tape: &mut Tape<'_, F>,
    table: &PrunedTable,
    chart: &mut Chart,
    m: usize,
) -> Result<(PrunedTable, MergeDecision)> {
    let decision = find_merge(table, chart, tape, m, enc.opts.constraint.as_ref())?;
    let u = decision.u;
    let merged = table
        .get(u, u + 1)
        .ok_or_else(|| Error::Integrity("merge point without a cell".into()))?;
    let next = remap(table, u, merged, chart);
    let removed = table.terminals[u].1;
    let boundaries: HashSet<usize> = next.terminals.iter().map(|t| t.1).collect();
    let n = next.len();
    for len in 2..=n {
        for i in 0..=n - len {
            let Some(r) = next.get(i, i + len - 1) else { continue };
            if chart.cell(r).split == Some(removed) {
                enc.reselect(tape, chart, r, |k| boundaries.contains(&k))?;
            }
        }
    }
    Ok((next, decision))
}

fn remap(table: &PrunedTable, u: usize, merged: CellRef, chart: &mut Chart) -> PrunedTable {
    let n = table.len();
    let len = n - 1;
    let mut cells = vec![None; len * len];
    for i in 0..len {
        for j in i..len {
            let src_i = if i > u { i + 1 } else { i };
            let src_j = if j >= u { j + 1 } else { j };
            cells[i * len + j] = table.get(src_i, src_j);
        }
    }
    let mut terminals = Vec::with_capacity(len);
    terminals.extend_from_slice(&table.terminals[..u]);
    terminals.push((table.terminals[u].0, table.terminals[u + 1].1));
    terminals.extend_from_slice(&table.terminals[u + 2..]);
    chart.cell_mut(merged).non_splittable = true;
    PrunedTable { terminals, cells, generation: table.generation + 1 }
}

/// Table state after one step of induction.
#[derive(Clone, Debug)]
pub struct StepSnapshot {
    pub step: usize,
    pub terminals: Vec<Span>,
    /// `(table i, table j, span, ln p, ln p̃, split)` for every referenced cell.
    pub cells: Vec<(usize, usize, Span, f64, f64, Option<usize>)>,
    pub merge: Option<MergeDecision>,
}

/// Result of [`tree_induction`].
#[derive(Clone, Debug)]
pub struct Induction {
    pub chart: Chart,
    pub merges: Vec<MergeDecision>,
    pub trace: Vec<StepSnapshot>,
}

impl Induction {
    /// Line-oriented dump of the recorded steps.
    pub fn format_trace(&self) -> String {
        let mut out = String::new();
        for s in &self.trace {
            let _ = writeln!(out, "step {} len {}", s.step, s.terminals.len());
            let terms: Vec<String> = s.terminals.iter().map(|(a, b)| format!("[{a},{b}]")).collect();
            let _ = writeln!(out, "terminals {}", terms.join(" "));
            if let Some(m) = &s.merge {
                let _ = writeln!(
                    out,
                    "merge u={} span=[{},{}] score={:.6}",
                    m.u, m.span.0, m.span.1, m.score
                );
            }
            for (i, j, (a, b), lp, lpt, split) in &s.cells {
                let split = split.map_or("-".to_string(), |k| k.to_string());
                let _ = writeln!(
                    out,
                    "cell ({i},{j}) span=[{a},{b}] log_p={lp:.6} log_ptilde={lpt:.6} split={split}"
                );
            }
        }
        out
    }
}

fn snapshot<F: Real>(
    step: usize,
    table: &PrunedTable,
    chart: &Chart,
    tape: &Tape<'_, F>,
    merge: Option<MergeDecision>,
) -> StepSnapshot {
    let n = table.len();
    let mut cells = Vec::new();
    for len in 1..=n {
        for i in 0..=n - len {
            let j = i + len - 1;
            if let Some(r) = table.get(i, j) {
                let c = chart.cell(r);
                cells.push((
                    i,
                    j,
                    c.span,
                    tape.scalar(c.log_p).to_f64().unwrap(),
                    tape.scalar(c.log_ptilde).to_f64().unwrap(),
                    c.split,
                ));
            }
        }
    }
    StepSnapshot { step, terminals: table.terminals.clone(), cells, merge }
}

/// Pruned induction over `tokens` with window `m`.
pub fn tree_induction<F: Real>(
    enc: &Encoder<'_, F>,
    tape: &mut Tape<'_, F>,
    tokens: &[usize],
    m: usize,
) -> Result<Induction> {
    induce(enc, tape, tokens, m, false)
}

/// As [`tree_induction`], also recording a [`StepSnapshot`] per step.
pub fn tree_induction_traced<F: Real>(
    enc: &Encoder<'_, F>,
    tape: &mut Tape<'_, F>,
    tokens: &[usize],
    m: usize,
) -> Result<Induction> {
    induce(enc, tape, tokens, m, true)
}

fn induce<F: Real>(
    enc: &Encoder<'_, F>,
    tape: &mut Tape<'_, F>,
    tokens: &[usize],
    m: usize,
    trace: bool,
) -> Result<Induction> {
    if m < 2 {
        return Err(Error::Config(format!("pruning window m={m} must be at least 2")));
    }
    let constraint = enc.opts.constraint.as_ref();
    if let Some(c) = constraint {
        if c.longest_word() > m {
            return Err(Error::Config(format!(
                "a word spans {} pieces but the pruning window is {m}; raise m to at least {}",
                c.longest_word(),
                c.longest_word()
            )));
        }
    }
    let mut chart = enc.init_chart(tape, tokens)?;
    let mut table = PrunedTable::new(&chart)?;
    let mut merges = Vec::new();
    let mut steps = Vec::new();
    if trace {
        steps.push(snapshot(0, &table, &chart, tape, None));
    }
    let n = tokens.len();
    for t in 1..n {
        let mut merge = None;
        if t >= m {
            let (next, decision) = pruning(enc, tape, &table, &mut chart, m)?;
            table = next;
            merges.push(decision.clone());
            merge = Some(decision);
        }
        let l = (t + 1).min(m);
        for i in 0..=table.len() - l {
            let j = i + l - 1;
            if table.get(i, j).is_some() {
                continue;
            }
            let span = table.span(i, j);
            if !enc.allows(span) {
                continue;
            }
            let splits: Vec<usize> = (i..j)
                .filter(|&k| table.get(i, k).is_some() && table.get(k + 1, j).is_some())
                .map(|k| table.terminals[k].1)
                .collect();
            if splits.is_empty() && constraint.is_some() {
                continue;
            }
            let r = enc.fill_cell(tape, &mut chart, span, &splits)?;
            table.set(i, j, r);
        }
        if trace {
            steps.push(snapshot(t, &table, &chart, tape, merge));
        }
    }
    let root = table
        .get(0, table.len() - 1)
        .ok_or_else(|| Error::Integrity("induction finished without a root cell".into()))?;
    chart.set_root(root);
    Ok(Induction { chart, merges, trace: steps })
}
