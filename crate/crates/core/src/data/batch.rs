/// Longest sentence (in pieces) kept for training.
pub const DEFAULT_MAX_LEN: usize = 128;

/// Sentence indices grouped into batches.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batching {
    pub batches: Vec<Vec<usize>>,
    /// Sentences longer than the length limit.
    pub dropped: usize,
}

/// Packs sentences in the given `order` sequentially. A batch is closed as
/// soon as the next sentence would exceed `batch_size` sentences or
/// `max_total_len` tokens; a lone sentence longer than `max_total_len` still
/// forms its own batch. Sentences longer than `max_len` are dropped.
pub fn batch_by_length(
    lengths: &[usize],
    order: impl IntoIterator<Item = usize>,
    batch_size: usize,
    max_total_len: usize,
    max_len: usize,
) -> Batching {
    let mut batches = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut total = 0;
    let mut dropped = 0;
    for idx in order {
        let len = lengths[idx];
        if len > max_len {
            dropped += 1;
            continue;
        }
        if !current.is_empty() && (current.len() + 1 > batch_size || total + len > max_total_len) {
            batches.push(std::mem::take(&mut current));
            total = 0;
        }
        current.push(idx);
        total += len;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    Batching { batches, dropped }
}
