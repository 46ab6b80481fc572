use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use crate::chart::WordConstraint;
use crate::error::{Error, Result};
use crate::tree::Span;

pub const SUM: &str = "[SUM]";
pub const CLS: &str = "[CLS]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";
pub const SPECIALS: [&str; 4] = [SUM, CLS, MASK, UNK];

/// Prefix of pieces that continue a word.
pub const CONTINUATION: &str = "##";

/// Longest word (in chars) that is segmented at all; longer ones map to `[UNK]`.
const MAX_WORD_CHARS: usize = 100;

/// Dense token inventory; ids are line numbers of the vocabulary file.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Missing special tokens are appended, so vocabularies from other
    /// tools load unchanged apart from new trailing entries.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut vocab = Self { tokens: Vec::with_capacity(tokens.len() + 4), index: HashMap::new() };
        for tok in tokens {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::Format(format!("invalid vocabulary entry {tok:?}")));
            }
            if vocab.index.contains_key(&tok) {
                return Err(Error::Format(format!("duplicate vocabulary entry {tok:?}")));
            }
            vocab.push(tok);
        }
        for s in SPECIALS {
            if !vocab.index.contains_key(s) {
                vocab.push(s.to_string());
            }
        }
        Ok(vocab)
    }

    fn push(&mut self, tok: String) {
        self.index.insert(tok.clone(), self.tokens.len());
        self.tokens.push(tok);
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let lines: Vec<String> = text.lines().map(|l| l.trim_end_matches('\r').to_string()).collect();
        let lines = match lines.last() {
            Some(l) if l.is_empty() => lines[..lines.len() - 1].to_vec(),
            _ => lines,
        };
        Self::from_tokens(lines)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Frequency-ranked vocabulary for a corpus. Every character seen is also
    /// added as a word-initial and a continuation piece, so any word over the
    /// corpus alphabet segments without `[UNK]`.
    pub fn build<'a>(sentences: impl IntoIterator<Item = &'a str>, max_words: usize, min_count: usize) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut chars = BTreeSet::new();
        for line in sentences {
            for w in line.split_whitespace() {
                *counts.entry(w).or_default() += 1;
                chars.extend(w.chars());
            }
        }
        let mut ranked: Vec<(&str, usize)> =
            counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        ranked.truncate(max_words);

        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let mut seen: BTreeSet<String> = tokens.iter().cloned().collect();
        let mut add = |t: String, tokens: &mut Vec<String>| {
            if seen.insert(t.clone()) {
                tokens.push(t);
            }
        };
        for (w, _) in ranked {
            add(w.to_string(), &mut tokens);
        }
        for c in chars {
            add(c.to_string(), &mut tokens);
            add(format!("{CONTINUATION}{c}"), &mut tokens);
        }
        Self::from_tokens(tokens)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn unk(&self) -> usize {
        self.index[UNK]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Piece ids of a sentence with their grouping into words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    /// Piece range of each word; the ranges partition `ids`.
    pub words: Vec<Span>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn word_constraint(&self) -> Result<WordConstraint> {
        WordConstraint::new(self.words.clone())
    }

    pub fn pieces<'v>(&self, vocab: &'v Vocab) -> Vec<&'v str> {
        self.ids.iter().map(|&i| vocab.token(i).unwrap_or(UNK)).collect()
    }
}

/// Greedy longest-match-first segmentation of each whitespace-separated word.
/// A word with no complete segmentation becomes a single `[UNK]`.
pub fn wordpiece_tokenize(text: &str, vocab: &Vocab) -> TokenSequence {
    let mut ids = Vec::new();
    let mut words = Vec::new();
    for word in text.split_whitespace() {
        let start = ids.len();
        match segment(word, vocab) {
            Some(pieces) => ids.extend(pieces),
            None => ids.push(vocab.unk()),
        }
        words.push((start, ids.len() - 1));
    }
    TokenSequence { ids, words }
}

fn segment(word: &str, vocab: &Vocab) -> Option<Vec<usize>> {
    let bounds: Vec<usize> = word.char_indices().map(|(i, _)| i).chain([word.len()]).collect();
    if bounds.len() - 1 > MAX_WORD_CHARS {
        return None;
    }
    let mut out = Vec::new();
    let mut start = 0;
    let mut piece = String::new();
    while start < bounds.len() - 1 {
        let found = (start + 1..bounds.len()).rev().find_map(|end| {
            piece.clear();
            if start > 0 {
                piece.push_str(CONTINUATION);
            }
            piece.push_str(&word[bounds[start]..bounds[end]]);
            vocab.id(&piece).map(|id| (id, end))
        });
        let (id, end) = found?;
        out.push(id);
        start = end;
    }
    Some(out)
}

/// Word ranges implied by piece strings: a piece starting with `##`
/// continues the previous word.
pub fn piece_words<S: AsRef<str>>(pieces: &[S]) -> Vec<Span> {
    let mut words: Vec<Span> = Vec::new();
    for (i, p) in pieces.iter().enumerate() {
        match words.last_mut() {
            Some(w) if p.as_ref().starts_with(CONTINUATION) && p.as_ref().len() > CONTINUATION.len() => w.1 = i,
            _ => words.push((i, i)),
        }
    }
    words
}

/// Rejoins pieces into words.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocab) -> Vec<String> {
    let pieces = seq.pieces(vocab);
    seq.words
        .iter()
        .map(|&(a, b)| {
            pieces[a..=b]
                .iter()
                .enumerate()
                .map(|(k, p)| if k > 0 { p.strip_prefix(CONTINUATION).unwrap_or(p) } else { p })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn words_from_piece_strings() {
        assert_eq!(piece_words(&["the", "cat", "##ac", "##ly", "end", "##"]), vec![(0, 0), (1, 3), (4, 4), (5, 5)]);
        assert!(piece_words::<&str>(&[]).is_empty());
    }

    fn vocab(extra: &[&str]) -> Vocab {
        Vocab::from_tokens(extra.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    #[test]
    fn specials_are_present_once() {
        let v = vocab(&["[CLS]", "a"]);
        assert_eq!(v.id("[CLS]"), Some(0));
        for s in SPECIALS {
            assert_eq!(v.tokens().iter().filter(|t| *t == s).count(), 1);
        }
        assert!(Vocab::from_tokens(vec!["a".into(), "a".into()]).is_err());
    }

    #[test]
    fn whole_word_match() {
        let v = vocab(&["cat"]);
        let seq = wordpiece_tokenize("cat", &v);
        assert_eq!(seq.ids, vec![v.id("cat").unwrap()]);
        assert_eq!(seq.words, vec![(0, 0)]);
    }

    #[test]
    fn longest_match_pieces() {
        let v = vocab(&["cat", "##ac", "##ly", "##sms", "c", "##a"]);
        let seq = wordpiece_tokenize("cataclysms", &v);
        assert_eq!(seq.pieces(&v), vec!["cat", "##ac", "##ly", "##sms"]);
        assert_eq!(seq.words, vec![(0, 3)]);
        assert_eq!(detokenize(&seq, &v), vec!["cataclysms"]);
    }

    #[test]
    fn unmatched_word_is_unk() {
        let v = vocab(&["cat", "c"]);
        let seq = wordpiece_tokenize("cat xyz cat", &v);
        assert_eq!(seq.pieces(&v), vec!["cat", "[UNK]", "cat"]);
        assert_eq!(seq.words, vec![(0, 0), (1, 1), (2, 2)]);
        // "cb" would need "##b"
        assert_eq!(wordpiece_tokenize("cb", &v).pieces(&v), vec!["[UNK]"]);
    }

    #[test]
    fn built_vocab_covers_corpus() {
        let corpus = ["the dog barks", "a dog sleeps", "the cat"];
        let v = Vocab::build(corpus, 3, 1).unwrap();
        assert_eq!(v.id("dog"), Some(4));
        assert_eq!(v.id("the"), Some(5));
        for line in corpus {
            let seq = wordpiece_tokenize(line, &v);
            assert!(!seq.ids.contains(&v.unk()));
            let words: Vec<String> = line.split_whitespace().map(String::from).collect();
            assert_eq!(detokenize(&seq, &v), words);
        }
        assert_eq!(wordpiece_tokenize("sleeps", &v).len(), 6);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocab::build(["x y z y"], 10, 1).unwrap();
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }
}
