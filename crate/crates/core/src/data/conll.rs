use std::path::Path;

use crate::error::{Error, Result};

/// Dependency tree over a sentence. `heads[i]` is the 1-based head of token
/// `i + 1`, with 0 for the virtual root.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepGraph {
    pub tokens: Vec<String>,
    pub heads: Vec<usize>,
}

impl DepGraph {
    /// Validates a single root, in-range heads and acyclicity.
    pub fn new(tokens: Vec<String>, heads: Vec<usize>) -> Result<Self> {
        let n = tokens.len();
        if heads.len() != n {
            return Err(Error::Format(format!("{n} tokens but {} heads", heads.len())));
        }
        if let Some(h) = heads.iter().find(|&&h| h > n) {
            return Err(Error::Format(format!("head {h} out of range for {n} tokens")));
        }
        let roots = heads.iter().filter(|&&h| h == 0).count();
        if n > 0 && roots != 1 {
            return Err(Error::Format(format!("expected one root, found {roots}")));
        }
        for start in 1..=n {
            let mut x = start;
            for _ in 0..=n {
                x = heads[x - 1];
                if x == 0 {
                    break;
                }
            }
            if x != 0 {
                return Err(Error::Format(format!("cycle through token {start}")));
            }
        }
        Ok(Self { tokens, heads })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// 0-based head of 0-based token `i`, `None` for the root.
    pub fn head(&self, i: usize) -> Option<usize> {
        self.heads[i].checked_sub(1)
    }

    /// 0-based dependents of every token.
    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.len()];
        for i in 0..self.len() {
            if let Some(h) = self.head(i) {
                out[h].push(i);
            }
        }
        out
    }
}

/// Parses blank-line-separated blocks. Rows are either four columns
/// (`index form head relation`) or CoNLL-X/CoNLL-U with the head in column 7.
/// `#` comments and multi-word range rows are ignored.
pub fn parse_conll_deps(text: &str) -> Result<Vec<DepGraph>> {
    let mut out = Vec::new();
    let mut tokens = Vec::new();
    let mut heads = Vec::new();
    let mut block_start = 1;
    let flush = |tokens: &mut Vec<String>, heads: &mut Vec<usize>, line: usize, out: &mut Vec<DepGraph>| {
        if tokens.is_empty() {
            return Ok(());
        }
        let g = DepGraph::new(std::mem::take(tokens), std::mem::take(heads))
            .map_err(|e| Error::Parse { line, message: e.to_string() })?;
        out.push(g);
        Ok::<_, Error>(())
    };
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            flush(&mut tokens, &mut heads, block_start, &mut out)?;
            block_start = line_no + 1;
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = if line.contains('\t') {
            line.split('\t').collect()
        } else {
            line.split_whitespace().collect()
        };
        let head_col = match cols.len() {
            4 => 2,
            n if n >= 7 => 6,
            n => {
                return Err(Error::Parse { line: line_no, message: format!("expected 4 or ≥7 columns, got {n}") })
            }
        };
        if cols[0].contains('-') || cols[0].contains('.') {
            continue;
        }
        let index: usize = cols[0]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("bad token index {:?}", cols[0]) })?;
        if index != tokens.len() + 1 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("token index {index}, expected {}", tokens.len() + 1),
            });
        }
        let head: usize = cols[head_col]
            .parse()
            .map_err(|_| Error::Parse { line: line_no, message: format!("bad head {:?}", cols[head_col]) })?;
        tokens.push(cols[1].to_string());
        heads.push(head);
    }
    flush(&mut tokens, &mut heads, block_start, &mut out)?;
    Ok(out)
}

pub fn load_conll_deps(path: &Path) -> Result<Vec<DepGraph>> {
    parse_conll_deps(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chain_block() {
        let g = parse_conll_deps("1\tthe\t2\tdet\n2\tdog\t3\tnsubj\n3\tbarks\t0\troot\n").unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].heads, vec![2, 3, 0]);
        assert_eq!(g[0].head(2), None);
        assert_eq!(g[0].children(), vec![vec![], vec![0], vec![1]]);
    }

    #[test]
    fn conllx_columns_and_blocks() {
        let text = "# sent 1\n1\ta\t_\tDT\tDT\t_\t2\tdet\t_\t_\n2\tb\t_\tNN\tNN\t_\t0\troot\t_\t_\n\n1\tc\t_\tX\tX\t_\t0\troot\t_\t_\n";
        let g = parse_conll_deps(text).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g[1].tokens, vec!["c"]);
    }

    #[test]
    fn invalid_structures() {
        assert!(parse_conll_deps("1 a 5 x\n").is_err());
        assert!(parse_conll_deps("1 a 0 x\n2 b 0 x\n").is_err());
        let cyc = parse_conll_deps("1 a 2 x\n2 b 1 x\n3 c 0 x\n").unwrap_err();
        assert_eq!(cyc.exit_code(), 3);
    }

    #[test]
    fn blank_file_is_empty() {
        assert!(parse_conll_deps("").unwrap().is_empty());
        assert!(parse_conll_deps("\n\n").unwrap().is_empty());
    }
}
