//! Probabilistic grammars with binary (or unary) rules, used to generate
//! corpora whose gold trees are known.
//!
//! Unary rules do not create tree nodes, so every sampled tree is binary.
//! Nonterminals named with a leading `_` are transparent: their nodes are
//! dissolved into the parent in the gold constituency, so a recursive list
//! such as `_R -> P _R` yields one flat constituent.
//! Derivations are depth-bounded: once a nonterminal sits so deep that some
//! of its rules could not finish within the bound, only the rules that can
//! are kept, renormalized.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::parallel::{par_map, Parallelism};
use crate::rng::stream_rng;
use crate::tree::{BinaryTree, Span, Tree};

const TAG_SYNTH: u64 = 7;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Symbol {
    Nonterminal(usize),
    Terminal(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub lhs: usize,
    pub rhs: Vec<Symbol>,
    pub prob: f64,
}

#[derive(Clone, Debug)]
pub struct ToyGrammar {
    names: Vec<String>,
    rules: Vec<Rule>,
    start: usize,
    max_depth: usize,
    by_lhs: Vec<Vec<usize>>,
    /// Fewest expansion levels needed to reach terminals from each nonterminal.
    min_height: Vec<usize>,
}

/// One generated sentence with its derivation.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub tokens: Vec<String>,
    pub tree: BinaryTree,
    /// Rules applied, with whether the depth bound restricted the choice.
    pub rules: Vec<(usize, bool)>,
    /// Gold constituency with transparent nodes dissolved.
    pub gold: Tree,
}

impl Sample {
    pub fn sentence(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn bracketed(&self) -> String {
        self.tree.render(&self.tokens)
    }

    /// Bracketing of the gold constituency.
    pub fn gold_bracketed(&self) -> String {
        self.gold.to_string()
    }

    pub fn gold_spans(&self) -> Vec<Span> {
        self.gold.node_spans()
    }
}

impl ToyGrammar {
    pub fn new(names: Vec<String>, rules: Vec<Rule>, start: usize, max_depth: usize) -> Result<Self> {
        let k = names.len();
        if start >= k {
            return Err(Error::Config(format!("start symbol {start} out of range")));
        }
        let mut by_lhs = vec![Vec::new(); k];
        for (r, rule) in rules.iter().enumerate() {
            if rule.lhs >= k {
                return Err(Error::Config(format!("rule {r} has unknown left-hand side")));
            }
            if rule.rhs.is_empty() || rule.rhs.len() > 2 {
                return Err(Error::Config(format!("rule {r} must have one or two symbols")));
            }
            if rule.rhs.iter().any(|s| matches!(s, Symbol::Nonterminal(x) if *x >= k)) {
                return Err(Error::Config(format!("rule {r} refers to an unknown nonterminal")));
            }
            if !(rule.prob > 0.0 && rule.prob <= 1.0) {
                return Err(Error::Config(format!("rule {r} has probability {}", rule.prob)));
            }
            by_lhs[rule.lhs].push(r);
        }
        for (a, rs) in by_lhs.iter().enumerate() {
            let total: f64 = rs.iter().map(|&r| rules[r].prob).sum();
            if (total - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "rules of {} sum to {total}, not 1",
                    names[a]
                )));
            }
        }
        let min_height = min_heights(k, &rules);
        if min_height[start] == usize::MAX {
            return Err(Error::Config("start symbol never derives a terminal string".into()));
        }
        if min_height[start] > max_depth {
            return Err(Error::Config(format!(
                "max depth {max_depth} is below the shallowest derivation ({})",
                min_height[start]
            )));
        }
        Ok(Self { names, rules, start, max_depth, by_lhs, min_height })
    }

    /// Parses rules written one per line as `LHS -> SYM [SYM] PROB`.
    /// Symbols that appear on some left-hand side are nonterminals; the first
    /// left-hand side is the start symbol. `#` starts a comment.
    pub fn from_text(text: &str, max_depth: usize) -> Result<Self> {
        let mut raw = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: &str| Error::Parse { line: idx + 1, message: m.to_string() };
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() < 4 || parts[1] != "->" {
                return Err(err("expected `LHS -> SYM [SYM] PROB`"));
            }
            let prob: f64 = parts[parts.len() - 1].parse().map_err(|_| err("bad probability"))?;
            raw.push((parts[0].to_string(), parts[2..parts.len() - 1].to_vec(), prob));
        }
        let mut names: Vec<String> = Vec::new();
        let mut index = HashMap::new();
        for (lhs, _, _) in &raw {
            if !index.contains_key(lhs) {
                index.insert(lhs.clone(), names.len());
                names.push(lhs.clone());
            }
        }
        if names.is_empty() {
            return Err(Error::Config("grammar has no rules".into()));
        }
        let rules = raw
            .iter()
            .map(|(lhs, rhs, prob)| Rule {
                lhs: index[lhs],
                rhs: rhs
                    .iter()
                    .map(|s| match index.get(*s) {
                        Some(&n) => Symbol::Nonterminal(n),
                        None => Symbol::Terminal(s.to_string()),
                    })
                    .collect(),
                prob: *prob,
            })
            .collect();
        Self::new(names, rules, 0, max_depth)
    }

    /// Flat lists of two-token phrases and nested bracket groups of two
    /// kinds. Sentences average about 19 tokens.
    pub fn bracket_default() -> Self {
        let mut text = String::from(
            "ROOT -> P _R 1.0\n\
             _R -> P _R 0.55\n\
             _R -> P 0.45\n\
             P -> W 0.7\n\
             P -> B 0.3\n\
             B -> _BA > 0.5\n\
             B -> _BS ] 0.5\n\
             _BA -> < _R 1.0\n\
             _BS -> [ _R 1.0\n",
        );
        let fillers = [("the", "cat"), ("a", "dog"), ("my", "hat"), ("red", "fox"), ("old", "man"), ("big", "box")];
        for (i, (x, y)) in fillers.iter().enumerate() {
            let p = if i + 1 == fillers.len() { 1.0 - 5.0 * (1.0 / 6.0) } else { 1.0 / 6.0 };
            let _ = writeln!(text, "W -> {x} {y} {p}");
        }
        Self::from_text(&text, 60).expect("default grammar is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Terminal alphabet in rule order.
    pub fn terminals(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in &self.rules {
            for s in &r.rhs {
                if let Symbol::Terminal(t) = s {
                    if !out.contains(&t.as_str()) {
                        out.push(t);
                    }
                }
            }
        }
        out
    }

    fn rule_height(&self, r: usize) -> usize {
        self.rules[r]
            .rhs
            .iter()
            .map(|s| match s {
                Symbol::Terminal(_) => 0,
                Symbol::Nonterminal(x) => self.min_height[*x],
            })
            .max()
            .unwrap()
            .saturating_add(1)
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Sample {
        let mut tokens = Vec::new();
        let mut rules = Vec::new();
        let (tree, items) = self.expand(self.start, 0, rng, &mut tokens, &mut rules);
        let gold = match gold_node(items) {
            Tree::Leaf(w) => Tree::Node(vec![Tree::Leaf(w)]),
            g => g,
        };
        Sample { tokens, tree, rules, gold }
    }

    fn expand<R: Rng>(
        &self,
        a: usize,
        depth: usize,
        rng: &mut R,
        tokens: &mut Vec<String>,
        used: &mut Vec<(usize, bool)>,
    ) -> (BinaryTree, Vec<Tree>) {
        let budget = self.max_depth - depth;
        let all = &self.by_lhs[a];
        let allowed: Vec<usize> = all.iter().copied().filter(|&r| self.rule_height(r) <= budget).collect();
        let restricted = allowed.len() < all.len();
        let total: f64 = allowed.iter().map(|&r| self.rules[r].prob).sum();
        let mut x = rng.gen::<f64>() * total;
        let mut chosen = *allowed.last().unwrap();
        for &r in &allowed {
            x -= self.rules[r].prob;
            if x < 0.0 {
                chosen = r;
                break;
            }
        }
        used.push((chosen, restricted));
        let mut parts = Vec::with_capacity(2);
        let mut items = Vec::new();
        for s in &self.rules[chosen].rhs {
            match s {
                Symbol::Terminal(t) => {
                    tokens.push(t.clone());
                    parts.push(BinaryTree::leaf(tokens.len() - 1));
                    items.push(Tree::Leaf(t.clone()));
                }
                Symbol::Nonterminal(b) => {
                    let (bin, sub) = self.expand(*b, depth + 1, rng, tokens, used);
                    parts.push(bin);
                    if self.names[*b].starts_with('_') {
                        items.extend(sub);
                    } else {
                        items.push(gold_node(sub));
                    }
                }
            }
        }
        let mut parts = parts.into_iter();
        let first = parts.next().unwrap();
        let bin = match parts.next() {
            Some(second) => BinaryTree::node(first, second),
            None => first,
        };
        (bin, items)
    }

    /// `count` samples; sample `i` draws from its own stream keyed by `i`.
    pub fn sample_corpus(&self, count: usize, seed: u64) -> Vec<Sample> {
        let idx: Vec<usize> = (0..count).collect();
        par_map(&idx, Parallelism::Auto, |_, &i| self.sample(&mut stream_rng(seed, &[TAG_SYNTH, i as u64])))
    }
}

/// Constituent of an opaque symbol; a single item is its own node.
fn gold_node(mut items: Vec<Tree>) -> Tree {
    if items.len() == 1 {
        items.pop().unwrap()
    } else {
        Tree::Node(items)
    }
}

fn min_heights(k: usize, rules: &[Rule]) -> Vec<usize> {
    let mut h = vec![usize::MAX; k];
    loop {
        let mut changed = false;
        for r in rules {
            let hr = r
                .rhs
                .iter()
                .map(|s| match s {
                    Symbol::Terminal(_) => 0,
                    Symbol::Nonterminal(x) => h[*x],
                })
                .max()
                .unwrap();
            if hr != usize::MAX && hr + 1 < h[r.lhs] {
                h[r.lhs] = hr + 1;
                changed = true;
            }
        }
        if !changed {
            return h;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_rule_grammar() {
        let g = ToyGrammar::from_text("S -> a b 1.0", 5).unwrap();
        for s in g.sample_corpus(20, 1) {
            assert_eq!(s.sentence(), "a b");
            assert_eq!(s.bracketed(), "(a b)");
        }
    }

    #[test]
    fn unnormalized_rules_are_rejected() {
        let err = ToyGrammar::from_text("S -> a 0.5\nS -> b 0.4", 5).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(ToyGrammar::from_text("S -> a b c 1.0", 5).is_err());
        assert!(ToyGrammar::from_text("S -> S S 1.0", 5).is_err());
    }

    #[test]
    fn yields_match_sentences() {
        let g = ToyGrammar::bracket_default();
        for s in g.sample_corpus(300, 2) {
            assert!(s.tree.is_well_formed());
            assert_eq!(s.tree.span(), (0, s.tokens.len() - 1));
            assert_eq!(s.tree.leaves().len(), s.tokens.len());
        }
    }

    #[test]
    fn transparent_symbols_flatten_gold() {
        let g = ToyGrammar::from_text("S -> a _L 1.0\n_L -> b _L 0.5\n_L -> c 0.5", 10).unwrap();
        for s in g.sample_corpus(20, 4) {
            assert_eq!(s.gold_spans(), vec![(0, s.tokens.len() - 1)]);
            assert!(s.gold_bracketed().starts_with("(a b") || s.gold_bracketed() == "(a c)");
        }
        let g = ToyGrammar::bracket_default();
        let s = g.sample_corpus(50, 5).into_iter().find(|s| s.tokens.contains(&"[".to_string())).unwrap();
        assert!(s.gold_bracketed().contains("(["), "{}", s.gold_bracketed());
        assert_eq!(s.gold.leaves().len(), s.tokens.len());
        // every filler pair is a constituent
        let spans = s.gold_spans();
        let pairs = s.tokens.iter().filter(|t| ["the", "a", "my", "red", "old", "big"].contains(&t.as_str())).count();
        assert_eq!(spans.iter().filter(|(a, b)| b - a == 1).count(), pairs);
    }

    #[test]
    fn depth_bound_is_respected() {
        // S -> S S would never stop without the bound
        let g = ToyGrammar::from_text("S -> S S 0.9\nS -> x 0.1", 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let s = g.sample(&mut rng);
            assert!(s.tokens.len() <= 1 << 3);
        }
    }

    #[test]
    fn default_length_is_moderate() {
        let g = ToyGrammar::bracket_default();
        let samples = g.sample_corpus(2000, 3);
        let mean = samples.iter().map(|s| s.tokens.len()).sum::<usize>() as f64 / 2000.0;
        assert!((14.0..26.0).contains(&mean), "mean length {mean}");
        assert!(samples.iter().all(|s| s.tokens.len() >= 4));
    }
}
