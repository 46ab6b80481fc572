use std::collections::{BTreeMap, BTreeSet};

use crate::data::PtbTree;
use crate::error::{Error, Result};
use crate::tree::{BinaryTree, Span, Tree};

/// Non-trivial constituent spans: single tokens and the whole sentence are
/// left out.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SpanSet(BTreeSet<Span>);

impl SpanSet {
    pub fn from_spans(spans: impl IntoIterator<Item = Span>, n: usize) -> Self {
        Self(spans.into_iter().filter(|&(a, b)| b > a && (a, b) != (0, n - 1)).collect())
    }

    pub fn from_binary(tree: &BinaryTree) -> Self {
        Self::from_spans(tree.internal_spans(), tree.span().1 + 1)
    }

    pub fn from_tree(tree: &Tree) -> Self {
        Self::from_spans(tree.node_spans(), tree.leaves().len())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, span: Span) -> bool {
        self.0.contains(&span)
    }

    pub fn iter(&self) -> impl Iterator<Item = Span> + '_ {
        self.0.iter().copied()
    }
}

/// Precision, recall and F1, all in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Sentence-level scores. Two empty sets score 100; if only one side is
/// empty the sentence scores 0.
pub fn span_f1(pred: &SpanSet, gold: &SpanSet) -> F1 {
    if pred.is_empty() && gold.is_empty() {
        return F1 { precision: 100.0, recall: 100.0, f1: 100.0 };
    }
    let overlap = pred.0.intersection(&gold.0).count() as f64;
    let ratio = |k: usize| if k == 0 { 0.0 } else { overlap / k as f64 };
    let (p, r) = (ratio(pred.len()), ratio(gold.len()));
    let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    F1 { precision: 100.0 * p, recall: 100.0 * r, f1: 100.0 * f1 }
}

pub fn unlabeled_f1(pred: &BinaryTree, gold: &Tree) -> Result<F1> {
    let n = gold.leaves().len();
    if pred.span() != (0, n - 1) {
        return Err(Error::Alignment(format!(
            "predicted tree covers {} tokens, gold tree has {n}",
            pred.span().1 + 1
        )));
    }
    Ok(span_f1(&SpanSet::from_binary(pred), &SpanSet::from_tree(gold)))
}

/// Both trees read from files; leaf strings must agree.
pub fn unlabeled_f1_trees(pred: &Tree, gold: &Tree) -> Result<F1> {
    let (pl, gl) = (pred.leaves(), gold.leaves());
    if pl != gl {
        return Err(Error::Alignment(format!("leaves differ: {:?} vs {:?}", pl, gl)));
    }
    Ok(span_f1(&SpanSet::from_tree(pred), &SpanSet::from_tree(gold)))
}

/// Unweighted mean over sentences.
pub fn corpus_f1(scores: &[F1]) -> F1 {
    if scores.is_empty() {
        return F1 { precision: 0.0, recall: 0.0, f1: 0.0 };
    }
    let k = scores.len() as f64;
    F1 {
        precision: scores.iter().map(|s| s.precision).sum::<f64>() / k,
        recall: scores.iter().map(|s| s.recall).sum::<f64>() / k,
        f1: scores.iter().map(|s| s.f1).sum::<f64>() / k,
    }
}

/// Rewrites a word-level gold tree over word pieces: every word split into
/// several pieces becomes a constituent over them.
pub fn expand_to_pieces(gold: &Tree, words: &[Span], pieces: &[&str]) -> Result<Tree> {
    fn go(t: &Tree, next: &mut usize, words: &[Span], pieces: &[&str]) -> Tree {
        match t {
            Tree::Leaf(_) => {
                let (a, b) = words[*next];
                *next += 1;
                if a == b {
                    Tree::Leaf(pieces[a].to_string())
                } else {
                    Tree::Node(pieces[a..=b].iter().map(|p| Tree::Leaf(p.to_string())).collect())
                }
            }
            Tree::Node(children) => Tree::Node(children.iter().map(|c| go(c, next, words, pieces)).collect()),
        }
    }
    let n = gold.leaves().len();
    if n != words.len() || words.last().map(|w| w.1 + 1) != Some(pieces.len()) {
        return Err(Error::Alignment(format!(
            "gold tree has {n} words, segmentation has {} words over {} pieces",
            words.len(),
            pieces.len()
        )));
    }
    Ok(go(gold, &mut 0, words, pieces))
}

/// Maps a piece-level tree to word leaves. Fails if some node breaks a word.
pub fn collapse_to_words(tree: &BinaryTree, words: &[Span]) -> Result<BinaryTree> {
    let mut word_of_start = BTreeMap::new();
    let mut word_of_end = BTreeMap::new();
    for (w, &(a, b)) in words.iter().enumerate() {
        word_of_start.insert(a, w);
        word_of_end.insert(b, w);
    }
    fn go(
        t: &BinaryTree,
        starts: &BTreeMap<usize, usize>,
        ends: &BTreeMap<usize, usize>,
    ) -> Result<BinaryTree> {
        let (a, b) = t.span();
        let (Some(&wa), Some(&wb)) = (starts.get(&a), ends.get(&b)) else {
            return Err(Error::Alignment(format!("span ({a}, {b}) breaks a word")));
        };
        if wa == wb {
            return Ok(BinaryTree::leaf(wa));
        }
        match t {
            BinaryTree::Node(l, r) => Ok(BinaryTree::node(go(l, starts, ends)?, go(r, starts, ends)?)),
            BinaryTree::Leaf(_) => Ok(BinaryTree::Leaf((wa, wb))),
        }
    }
    go(tree, &word_of_start, &word_of_end)
}

/// Labels scored by [`constituent_recall`]; `NNP` means proper-noun chunks
/// and `WORD` multi-piece words.
pub const RECALL_LABELS: [&str; 5] = ["NP", "VP", "SBAR", "NNP", "WORD"];

/// Found and total gold constituents per label.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecallReport {
    pub counts: BTreeMap<String, (usize, usize)>,
}

impl RecallReport {
    /// Zero for labels never seen in the gold trees.
    pub fn recall(&self, label: &str) -> f64 {
        match self.counts.get(label) {
            Some(&(found, total)) if total > 0 => found as f64 / total as f64,
            _ => 0.0,
        }
    }
}

/// Fraction of gold constituents of each label that appear as spans of the
/// predicted trees. With `words`, predictions are over word pieces and gold
/// word spans are mapped onto them; `WORD` then counts multi-piece words.
/// Single-token constituents are not scored, except for `WORD`.
pub fn constituent_recall(
    preds: &[BinaryTree],
    golds: &[PtbTree],
    labels: &[&str],
    words: Option<&[Vec<Span>]>,
) -> Result<RecallReport> {
    if preds.len() != golds.len() || words.is_some_and(|w| w.len() != golds.len()) {
        return Err(Error::Alignment("prediction, gold and segmentation counts differ".into()));
    }
    let mut report = RecallReport::default();
    for l in labels {
        report.counts.insert(l.to_string(), (0, 0));
    }
    for (s, (pred, gold)) in preds.iter().zip(golds).enumerate() {
        let n = gold.words().len();
        let segmentation: Vec<Span> = match words {
            Some(w) => w[s].clone(),
            None => (0..n).map(|i| (i, i)).collect(),
        };
        if segmentation.len() != n || pred.span().1 + 1 != segmentation.last().map_or(0, |w| w.1 + 1) {
            return Err(Error::Alignment(format!("sentence {s}: prediction does not cover the gold words")));
        }
        let to_pieces = |(a, b): Span| (segmentation[a].0, segmentation[b].1);
        let pred_spans: BTreeSet<Span> = pred.all_spans().into_iter().collect();
        for &label in labels {
            let gold_spans: Vec<Span> = match label {
                "NNP" => gold.nnp_chunks().into_iter().map(to_pieces).collect(),
                "WORD" => segmentation.iter().copied().filter(|(a, b)| b > a).collect(),
                _ => gold
                    .labeled_spans()
                    .into_iter()
                    .filter(|(l, (a, b))| l == label && b > a)
                    .map(|(_, sp)| to_pieces(sp))
                    .collect(),
            };
            let entry = report.counts.get_mut(label).unwrap();
            entry.1 += gold_spans.len();
            entry.0 += gold_spans.iter().filter(|s| pred_spans.contains(s)).count();
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Tree {
        Tree::parse(s).unwrap()
    }

    #[test]
    fn identical_trees_score_100() {
        let g = t("((a b) (c (d e)))");
        let p = g.to_binary().unwrap();
        assert_eq!(unlabeled_f1(&p, &g).unwrap().f1, 100.0);
    }

    #[test]
    fn empty_gold_convention() {
        let gold = t("(a b c)");
        let pred = t("((a b) c)").to_binary().unwrap();
        assert_eq!(SpanSet::from_binary(&pred).iter().collect::<Vec<_>>(), vec![(0, 1)]);
        assert!(SpanSet::from_tree(&gold).is_empty());
        assert_eq!(unlabeled_f1(&pred, &gold).unwrap().f1, 0.0);
        let two = t("(a b)");
        assert_eq!(unlabeled_f1(&two.to_binary().unwrap(), &two).unwrap().f1, 100.0);
    }

    #[test]
    fn opposite_branching_shares_nothing() {
        let l = BinaryTree::left_branching(4);
        let r = BinaryTree::right_branching(4);
        let s = span_f1(&SpanSet::from_binary(&l), &SpanSet::from_binary(&r));
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn leaf_mismatch_is_alignment_error() {
        let err = unlabeled_f1_trees(&t("(a b)"), &t("(a c)")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let err = unlabeled_f1(&BinaryTree::right_branching(3), &t("(a b)")).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)));
    }

    #[test]
    fn piece_expansion_and_collapse() {
        let gold = t("((the cataclysms) ended)");
        let words = vec![(0, 0), (1, 4), (5, 5)];
        let pieces = ["the", "cat", "##ac", "##ly", "##sms", "ended"];
        let g = expand_to_pieces(&gold, &words, &pieces).unwrap();
        assert_eq!(g.to_string(), "((the (cat ##ac ##ly ##sms)) ended)");
        let pred = BinaryTree::node(
            BinaryTree::node(
                BinaryTree::leaf(0),
                BinaryTree::node(
                    BinaryTree::leaf(1),
                    BinaryTree::node(BinaryTree::leaf(2), BinaryTree::node(BinaryTree::leaf(3), BinaryTree::leaf(4))),
                ),
            ),
            BinaryTree::leaf(5),
        );
        let words_tree = collapse_to_words(&pred, &words).unwrap();
        assert_eq!(words_tree, BinaryTree::node(BinaryTree::node(BinaryTree::leaf(0), BinaryTree::leaf(1)), BinaryTree::leaf(2)));
        assert!(collapse_to_words(&BinaryTree::left_branching(6), &words).is_err());
    }

    #[test]
    fn np_recall_by_hand() {
        let golds: Vec<PtbTree> = [
            "(S (NP (DT the) (NN dog)) (VP (VBZ barks) (ADVP (RB loudly))))",
            "(S (NP (DT a) (NN cat)) (VP (VBD sat)))",
            "(S (NP (DT my) (JJ red) (NN hat)) (VP (VBZ fits)))",
        ]
        .iter()
        .map(|s| PtbTree::parse(s).unwrap())
        .collect();
        let preds = vec![
            BinaryTree::node(
                BinaryTree::node(BinaryTree::leaf(0), BinaryTree::leaf(1)),
                BinaryTree::node(BinaryTree::leaf(2), BinaryTree::leaf(3)),
            ),
            BinaryTree::left_branching(3),
            BinaryTree::right_branching(4),
        ];
        let r = constituent_recall(&preds, &golds, &["NP", "VP", "PP"], None).unwrap();
        assert_eq!(r.counts["NP"], (2, 3));
        assert!((r.recall("NP") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.counts["VP"], (1, 1));
        assert_eq!(r.recall("PP"), 0.0);
    }

    #[test]
    fn contiguous_words_have_full_word_recall() {
        let gold = PtbTree::parse("(S (NP (NN cataclysms)) (VP (VBD ended)))").unwrap();
        let words = vec![vec![(0, 3), (4, 4)]];
        let pred = BinaryTree::node(BinaryTree::left_branching(4), BinaryTree::leaf(4));
        let r = constituent_recall(&[pred], &[gold], &RECALL_LABELS, Some(&words)).unwrap();
        assert_eq!(r.recall("WORD"), 1.0);
        assert_eq!(r.counts["NNP"], (0, 0));
    }
}
