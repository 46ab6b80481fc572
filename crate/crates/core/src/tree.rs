//! Unlabeled trees and the one-tree-per-line bracket format.
//!
//! A tree is written as nested parentheses with bare leaves, e.g.
//! `((the dog) barks)`. A lone leaf is written `(t)`. Literal parentheses
//! inside tokens are escaped as `-LRB-` / `-RRB-`.

use std::fmt;

use rand::Rng;

use crate::error::{Error, Result};

/// Inclusive token range `(start, end)`, 0-based.
pub type Span = (usize, usize);

/// Binary derivation over token positions. A leaf covers one token, or a
/// run of tokens that was treated as atomic (e.g. a word made of pieces).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BinaryTree {
    Leaf(Span),
    Node(Box<BinaryTree>, Box<BinaryTree>),
}

impl BinaryTree {
    pub fn leaf(i: usize) -> Self {
        BinaryTree::Leaf((i, i))
    }

    pub fn node(left: BinaryTree, right: BinaryTree) -> Self {
        BinaryTree::Node(Box::new(left), Box::new(right))
    }

    pub fn span(&self) -> Span {
        match self {
            BinaryTree::Leaf(s) => *s,
            BinaryTree::Node(l, r) => (l.span().0, r.span().1),
        }
    }

    /// Leaf spans, left to right.
    pub fn leaves(&self) -> Vec<Span> {
        let mut out = Vec::new();
        self.visit(&mut |t| {
            if let BinaryTree::Leaf(s) = t {
                out.push(*s);
            }
        });
        out
    }

    /// Spans of all internal nodes, pre-order.
    pub fn internal_spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        self.visit(&mut |t| {
            if let BinaryTree::Node(..) = t {
                out.push(t.span());
            }
        });
        out
    }

    /// Spans of every node, leaves included, pre-order.
    pub fn all_spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        self.visit(&mut |t| out.push(t.span()));
        out
    }

    fn visit<'a>(&'a self, f: &mut impl FnMut(&'a BinaryTree)) {
        f(self);
        if let BinaryTree::Node(l, r) = self {
            l.visit(f);
            r.visit(f);
        }
    }

    /// Checks that children partition their parent contiguously.
    pub fn is_well_formed(&self) -> bool {
        match self {
            BinaryTree::Leaf((a, b)) => a <= b,
            BinaryTree::Node(l, r) => {
                l.is_well_formed() && r.is_well_formed() && l.span().1 + 1 == r.span().0
            }
        }
    }

    pub fn left_branching(n: usize) -> Self {
        assert!(n >= 1);
        (1..n).fold(BinaryTree::leaf(0), |acc, i| BinaryTree::node(acc, BinaryTree::leaf(i)))
    }

    pub fn right_branching(n: usize) -> Self {
        assert!(n >= 1);
        (0..n - 1)
            .rev()
            .fold(BinaryTree::leaf(n - 1), |acc, i| BinaryTree::node(BinaryTree::leaf(i), acc))
    }

    /// Random tree by recursively drawing a uniform split point.
    pub fn random<R: Rng>(n: usize, rng: &mut R) -> Self {
        assert!(n >= 1);
        fn build<R: Rng>(a: usize, b: usize, rng: &mut R) -> BinaryTree {
            if a == b {
                return BinaryTree::leaf(a);
            }
            let k = rng.gen_range(a..b);
            BinaryTree::node(build(a, k, rng), build(k + 1, b, rng))
        }
        build(0, n - 1, rng)
    }

    /// Every binary tree over `n` leaves (Catalan many).
    pub fn enumerate(n: usize) -> Vec<BinaryTree> {
        fn go(a: usize, b: usize) -> Vec<BinaryTree> {
            if a == b {
                return vec![BinaryTree::leaf(a)];
            }
            let mut out = Vec::new();
            for k in a..b {
                for l in go(a, k) {
                    for r in go(k + 1, b) {
                        out.push(BinaryTree::node(l.clone(), r));
                    }
                }
            }
            out
        }
        go(0, n - 1)
    }

    /// Replaces each leaf span with the given tokens; a multi-token leaf
    /// becomes a single leaf labelled by `join`.
    pub fn to_tree(&self, label: &impl Fn(Span) -> String) -> Tree {
        match self {
            BinaryTree::Leaf(s) => Tree::Node(vec![Tree::Leaf(label(*s))]),
            BinaryTree::Node(..) => self.to_tree_inner(label),
        }
    }

    fn to_tree_inner(&self, label: &impl Fn(Span) -> String) -> Tree {
        match self {
            BinaryTree::Leaf(s) => Tree::Leaf(label(*s)),
            BinaryTree::Node(l, r) => {
                Tree::Node(vec![l.to_tree_inner(label), r.to_tree_inner(label)])
            }
        }
    }

    /// Bracket string with leaves labelled from `tokens` (multi-token leaves
    /// are concatenated).
    pub fn render(&self, tokens: &[String]) -> String {
        self.to_tree(&|(a, b)| tokens[a..=b].concat()).to_string()
    }
}

/// Unlabeled n-ary tree with string leaves, as read from bracket files.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tree {
    Leaf(String),
    Node(Vec<Tree>),
}

impl Tree {
    pub fn leaves(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_leaves(&mut out);
        out
    }

    fn collect_leaves<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Tree::Leaf(s) => out.push(s),
            Tree::Node(children) => children.iter().for_each(|c| c.collect_leaves(out)),
        }
    }

    /// Spans of all internal nodes.
    pub fn node_spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        self.spans_from(0, &mut out);
        out
    }

    fn spans_from(&self, start: usize, out: &mut Vec<Span>) -> usize {
        match self {
            Tree::Leaf(_) => 1,
            Tree::Node(children) => {
                let mut width = 0;
                for c in children {
                    width += c.spans_from(start + width, out);
                }
                out.push((start, start + width - 1));
                width
            }
        }
    }

    /// Converts to a [`BinaryTree`] over leaf positions, if every internal
    /// node has exactly two children (a single-leaf tree is also accepted).
    pub fn to_binary(&self) -> Result<BinaryTree> {
        fn go(t: &Tree, next: &mut usize) -> Result<BinaryTree> {
            match t {
                Tree::Leaf(_) => {
                    *next += 1;
                    Ok(BinaryTree::leaf(*next - 1))
                }
                Tree::Node(c) if c.len() == 2 => {
                    let l = go(&c[0], next)?;
                    let r = go(&c[1], next)?;
                    Ok(BinaryTree::node(l, r))
                }
                Tree::Node(c) => Err(Error::Format(format!("node with {} children", c.len()))),
            }
        }
        match self {
            Tree::Node(c) if c.len() == 1 => go(&c[0], &mut 0),
            t => go(t, &mut 0),
        }
    }

    /// Parses one bracketed tree.
    pub fn parse(text: &str) -> Result<Tree> {
        let tokens = lex(text);
        let mut pos = 0;
        let tree = parse_node(&tokens, &mut pos)?;
        if pos != tokens.len() {
            return Err(Error::Format(format!("trailing input after tree: {text}")));
        }
        match tree {
            Tree::Leaf(_) => Err(Error::Format(format!("expected '(' at start of {text:?}"))),
            t => Ok(t),
        }
    }
}

#[derive(Debug, PartialEq)]
pub(crate) enum Lexeme<'a> {
    Open,
    Close,
    Atom(&'a str),
}

pub(crate) fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in text.char_indices() {
        if ch == '(' || ch == ')' || ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Lexeme::Atom(&text[s..i]));
            }
            match ch {
                '(' => out.push(Lexeme::Open),
                ')' => out.push(Lexeme::Close),
                _ => {}
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Lexeme::Atom(&text[s..]));
    }
    out
}

fn parse_node(tokens: &[Lexeme<'_>], pos: &mut usize) -> Result<Tree> {
    match tokens.get(*pos) {
        Some(Lexeme::Atom(a)) => {
            *pos += 1;
            Ok(Tree::Leaf(unescape(a)))
        }
        Some(Lexeme::Open) => {
            *pos += 1;
            let mut children = Vec::new();
            loop {
                match tokens.get(*pos) {
                    Some(Lexeme::Close) => {
                        *pos += 1;
                        break;
                    }
                    Some(_) => children.push(parse_node(tokens, pos)?),
                    None => return Err(Error::Format("unbalanced brackets".into())),
                }
            }
            if children.is_empty() {
                return Err(Error::Format("empty bracket".into()));
            }
            Ok(Tree::Node(children))
        }
        Some(Lexeme::Close) => Err(Error::Format("unexpected ')'".into())),
        None => Err(Error::Format("empty tree".into())),
    }
}

pub fn escape(token: &str) -> String {
    token.replace('(', "-LRB-").replace(')', "-RRB-")
}

pub fn unescape(token: &str) -> String {
    token.replace("-LRB-", "(").replace("-RRB-", ")")
}

impl fmt::Display for Tree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tree::Leaf(s) => write!(f, "{}", escape(s)),
            Tree::Node(children) => {
                write!(f, "(")?;
                for (i, c) in children.iter().enumerate() {
                    if i > 0 {
                        write!(f, " ")?;
                    }
                    write!(f, "{c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn render_and_parse() {
        let t = BinaryTree::node(
            BinaryTree::leaf(0),
            BinaryTree::node(BinaryTree::leaf(1), BinaryTree::leaf(2)),
        );
        let s = t.render(&toks("a b c"));
        assert_eq!(s, "(a (b c))");
        let back = Tree::parse(&s).unwrap();
        assert_eq!(back.leaves(), vec!["a", "b", "c"]);
        assert_eq!(back.to_binary().unwrap(), t);
        assert_eq!(BinaryTree::leaf(0).render(&toks("t")), "(t)");
        assert_eq!(Tree::parse("(t)").unwrap().to_binary().unwrap(), BinaryTree::leaf(0));
    }

    #[test]
    fn escaping_round_trips() {
        let t = BinaryTree::node(BinaryTree::leaf(0), BinaryTree::leaf(1));
        let s = t.render(&toks("( x"));
        assert_eq!(s, "(-LRB- x)");
        assert_eq!(Tree::parse(&s).unwrap().leaves(), vec!["(", "x"]);
    }

    #[test]
    fn malformed_brackets() {
        assert!(Tree::parse("(a (b c)").is_err());
        assert!(Tree::parse("(a b))").is_err());
        assert!(Tree::parse("a").is_err());
        assert!(Tree::parse("()").is_err());
    }

    #[test]
    fn node_spans_of_nary_tree() {
        let t = Tree::parse("((a b c) (d e))").unwrap();
        let mut spans = t.node_spans();
        spans.sort();
        assert_eq!(spans, vec![(0, 2), (0, 4), (3, 4)]);
    }

    #[test]
    fn branching_shapes() {
        let l = BinaryTree::left_branching(4);
        let r = BinaryTree::right_branching(4);
        assert_eq!(l.render(&toks("a b c d")), "(((a b) c) d)");
        assert_eq!(r.render(&toks("a b c d")), "(a (b (c d)))");
        assert_eq!(BinaryTree::enumerate(4).len(), 5);
        assert_eq!(BinaryTree::enumerate(6).len(), 42);
        assert!(BinaryTree::enumerate(5).iter().all(|t| t.is_well_formed()));
    }
}
