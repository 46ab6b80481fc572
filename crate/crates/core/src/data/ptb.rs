use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tree::{escape, lex, unescape, Lexeme, Span, Tree};

/// Preterminal tags removed when punctuation stripping is on.
pub const PUNCT_TAGS: [&str; 7] = ["''", "``", ".", ":", ",", "-LRB-", "-RRB-"];

/// Empty-element tag; always removed.
const TRACE_TAG: &str = "-NONE-";

/// Labeled constituency tree in Penn Treebank bracket notation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PtbTree {
    Leaf { tag: String, word: String },
    Node { label: String, children: Vec<PtbTree> },
}

impl PtbTree {
    pub fn label(&self) -> &str {
        match self {
            PtbTree::Leaf { tag, .. } => tag,
            PtbTree::Node { label, .. } => label,
        }
    }

    pub fn words(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_leaves(&mut |_, w| out.push(w));
        out
    }

    pub fn tags(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.visit_leaves(&mut |t, _| out.push(t));
        out
    }

    fn visit_leaves<'a>(&'a self, f: &mut impl FnMut(&'a str, &'a str)) {
        match self {
            PtbTree::Leaf { tag, word } => f(tag, word),
            PtbTree::Node { children, .. } => children.iter().for_each(|c| c.visit_leaves(f)),
        }
    }

    /// Drops the labels and collapses unary chains; preterminals become
    /// bare leaves.
    pub fn to_unlabeled(&self) -> Tree {
        fn go(t: &PtbTree) -> Tree {
            match t {
                PtbTree::Leaf { word, .. } => Tree::Leaf(word.clone()),
                PtbTree::Node { children, .. } if children.len() == 1 => go(&children[0]),
                PtbTree::Node { children, .. } => Tree::Node(children.iter().map(go).collect()),
            }
        }
        match go(self) {
            Tree::Leaf(w) => Tree::Node(vec![Tree::Leaf(w)]),
            t => t,
        }
    }

    /// `(label, span)` of every phrasal node, with the function tags and
    /// indices stripped from the label (`NP-SBJ-1` becomes `NP`).
    pub fn labeled_spans(&self) -> Vec<(String, Span)> {
        let mut out = Vec::new();
        self.spans_from(0, &mut out);
        out
    }

    fn spans_from(&self, start: usize, out: &mut Vec<(String, Span)>) -> usize {
        match self {
            PtbTree::Leaf { .. } => 1,
            PtbTree::Node { label, children } => {
                let mut width = 0;
                for c in children {
                    width += c.spans_from(start + width, out);
                }
                if !label.is_empty() {
                    out.push((base_label(label).to_string(), (start, start + width - 1)));
                }
                width
            }
        }
    }

    /// Spans of runs of two or more adjacent `NNP` preterminals sharing a parent.
    pub fn nnp_chunks(&self) -> Vec<Span> {
        let mut out = Vec::new();
        self.chunks_from(0, &mut out);
        out
    }

    fn chunks_from(&self, start: usize, out: &mut Vec<Span>) -> usize {
        match self {
            PtbTree::Leaf { .. } => 1,
            PtbTree::Node { children, .. } => {
                let mut width = 0;
                let mut run: Option<(usize, usize)> = None;
                let close = |run: &mut Option<(usize, usize)>, out: &mut Vec<Span>| {
                    if let Some((a, len)) = run.take() {
                        if len >= 2 {
                            out.push((a, a + len - 1));
                        }
                    }
                };
                for c in children {
                    let pos = start + width;
                    match c {
                        PtbTree::Leaf { tag, .. } if tag == "NNP" => {
                            run = Some(run.map_or((pos, 1), |(a, len)| (a, len + 1)));
                        }
                        _ => close(&mut run, out),
                    }
                    width += c.chunks_from(pos, out);
                }
                close(&mut run, out);
                width
            }
        }
    }

    /// Removes traces (and punctuation if `strip_punct`), dropping
    /// constituents left empty. Returns `None` if nothing remains.
    pub fn normalized(&self, strip_punct: bool, lowercase: bool) -> Option<PtbTree> {
        match self {
            PtbTree::Leaf { tag, word } => {
                if tag == TRACE_TAG || (strip_punct && PUNCT_TAGS.contains(&tag.as_str())) {
                    None
                } else {
                    let word = if lowercase { word.to_lowercase() } else { word.clone() };
                    Some(PtbTree::Leaf { tag: tag.clone(), word })
                }
            }
            PtbTree::Node { label, children } => {
                let kept: Vec<PtbTree> =
                    children.iter().filter_map(|c| c.normalized(strip_punct, lowercase)).collect();
                if kept.is_empty() {
                    None
                } else {
                    Some(PtbTree::Node { label: label.clone(), children: kept })
                }
            }
        }
    }

    pub fn parse(text: &str) -> Result<PtbTree> {
        let lexemes = lex(text);
        let mut pos = 0;
        let tree = parse_node(&lexemes, &mut pos)?;
        if pos != lexemes.len() {
            return Err(Error::Format("trailing input after tree".into()));
        }
        Ok(tree)
    }
}

fn base_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    label.split(['-', '=']).next().unwrap_or(label)
}

fn parse_node(lx: &[Lexeme<'_>], pos: &mut usize) -> Result<PtbTree> {
    match lx.get(*pos) {
        Some(Lexeme::Open) => *pos += 1,
        Some(_) => return Err(Error::Format("expected '('".into())),
        None => return Err(Error::Format("unbalanced brackets: input ended early".into())),
    }
    let label = match lx.get(*pos) {
        Some(Lexeme::Atom(a)) => {
            *pos += 1;
            a.to_string()
        }
        _ => String::new(),
    };
    // preterminal: (TAG word)
    if let (Some(Lexeme::Atom(w)), Some(Lexeme::Close)) = (lx.get(*pos), lx.get(*pos + 1)) {
        if label.is_empty() {
            return Err(Error::Format(format!("leaf {w:?} has no tag")));
        }
        *pos += 2;
        return Ok(PtbTree::Leaf { tag: label, word: unescape(w) });
    }
    let mut children = Vec::new();
    loop {
        match lx.get(*pos) {
            Some(Lexeme::Close) => {
                *pos += 1;
                break;
            }
            Some(Lexeme::Open) => children.push(parse_node(lx, pos)?),
            Some(Lexeme::Atom(a)) => {
                return Err(Error::Format(format!("unexpected bare token {a:?} inside ({label} ...)")))
            }
            None => return Err(Error::Format("unbalanced brackets: input ended early".into())),
        }
    }
    if children.is_empty() {
        return Err(Error::Format(format!("empty constituent ({label})")));
    }
    Ok(PtbTree::Node { label, children })
}

impl fmt::Display for PtbTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PtbTree::Leaf { tag, word } => write!(f, "({tag} {})", escape(word)),
            PtbTree::Node { label, children } => {
                write!(f, "({label}")?;
                for c in children {
                    write!(f, " {c}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Parses one tree per non-blank line. Trees that become empty after
/// normalization are skipped with a warning.
pub fn parse_ptb_trees(text: &str, strip_punct: bool, lowercase: bool) -> Result<Vec<PtbTree>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            log::warn!("line {line_no}: empty line skipped");
            continue;
        }
        let tree = PtbTree::parse(line)
            .map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
        match tree.normalized(strip_punct, lowercase) {
            Some(t) => out.push(t),
            None => log::warn!("line {line_no}: tree is empty after normalization"),
        }
    }
    Ok(out)
}

pub fn load_ptb_trees(path: &Path, strip_punct: bool, lowercase: bool) -> Result<Vec<PtbTree>> {
    parse_ptb_trees(&std::fs::read_to_string(path)?, strip_punct, lowercase)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOG: &str = "(S (NP (DT the) (NN dog)) (VP (VBZ barks)) (. .))";

    #[test]
    fn strips_punctuation() {
        let t = parse_ptb_trees(DOG, true, true).unwrap().remove(0);
        assert_eq!(t.words(), vec!["the", "dog", "barks"]);
        assert_eq!(t.to_string(), "(S (NP (DT the) (NN dog)) (VP (VBZ barks)))");
        assert_eq!(t.to_unlabeled().to_string(), "((the dog) barks)");
        let kept = parse_ptb_trees(DOG, false, false).unwrap().remove(0);
        assert_eq!(kept.words().len(), 4);
    }

    #[test]
    fn emptied_constituents_disappear() {
        let t = PtbTree::parse("( (S (NP-SBJ (-NONE- *T*)) (VP (VB go)) (, ,)))").unwrap();
        let n = t.normalized(true, false).unwrap();
        assert_eq!(n.to_string(), "( (S (VP (VB go))))");
        assert_eq!(n.labeled_spans(), vec![("VP".to_string(), (0, 0)), ("S".to_string(), (0, 0))]);
    }

    #[test]
    fn print_parse_is_idempotent() {
        let t = parse_ptb_trees(DOG, true, true).unwrap().remove(0);
        let once = t.to_string();
        assert_eq!(PtbTree::parse(&once).unwrap().to_string(), once);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = format!("{DOG}\n\n(S (NP (DT a)\n");
        match parse_ptb_trees(&text, true, true).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn blank_lines_are_skipped() {
        let text = format!("\n{DOG}\n\n{DOG}\n");
        assert_eq!(parse_ptb_trees(&text, true, true).unwrap().len(), 2);
    }

    #[test]
    fn nnp_runs_under_one_parent() {
        let t = PtbTree::parse(
            "(S (NP (NNP John) (NNP Smith)) (VP (VBD met) (NP (NNP Ann))) (NP (NNP New) (NNP York) (NN city)))",
        )
        .unwrap();
        assert_eq!(t.nnp_chunks(), vec![(0, 1), (4, 5)]);
        let labels: Vec<String> = t.labeled_spans().into_iter().map(|(l, _)| l).collect();
        assert_eq!(labels, vec!["NP", "NP", "VP", "NP", "S"]);
    }
}
