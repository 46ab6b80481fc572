use crate::data::DepGraph;
use crate::error::{Error, Result};
use crate::tree::{BinaryTree, Span};

/// Whether the words `a..=b` form an independent subtree of `dep`: exactly
/// one word has its head outside the range, and only that word has
/// dependents outside it.
pub fn is_independent_subtree(dep: &DepGraph, (a, b): Span) -> bool {
    let inside = |x: usize| (a..=b).contains(&x);
    let mut out = Vec::new();
    for w in a..=b {
        if !dep.head(w).is_some_and(inside) {
            out.push(w);
        }
    }
    if out.len() != 1 {
        return false;
    }
    (0..dep.len())
        .filter(|&x| !inside(x))
        .filter_map(|x| dep.head(x))
        .filter(|&h| inside(h))
        .all(|h| h == out[0])
}

/// Share of internal nodes of `pred` that are independent subtrees,
/// over `|S(D)| − 1`. With `words`, `pred` is over word pieces: spans that
/// break a word or cover a single word count as invalid. `None` for
/// one-word sentences.
pub fn dep_compat(pred: &BinaryTree, dep: &DepGraph, words: Option<&[Span]>) -> Result<Option<f64>> {
    let n = dep.len();
    let width = pred.span().1 + 1;
    let word_of = |start: bool, piece: usize| -> Option<usize> {
        match words {
            None => Some(piece),
            Some(ws) => ws.iter().position(|&(a, b)| if start { a == piece } else { b == piece }),
        }
    };
    let covered = words.map_or(width, |ws| ws.last().map_or(0, |w| w.1 + 1));
    let word_count = words.map_or(width, <[Span]>::len);
    if word_count != n || covered != width {
        return Err(Error::Alignment(format!(
            "tree covers {width} tokens ({word_count} words), dependency tree has {n} words"
        )));
    }
    if n < 2 {
        return Ok(None);
    }
    let mut valid = 0usize;
    for (a, b) in pred.internal_spans() {
        let (Some(wa), Some(wb)) = (word_of(true, a), word_of(false, b)) else {
            continue;
        };
        if wa < wb && is_independent_subtree(dep, (wa, wb)) {
            valid += 1;
        }
    }
    Ok(Some(valid as f64 / (n - 1) as f64))
}
