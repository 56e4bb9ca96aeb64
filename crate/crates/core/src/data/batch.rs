//! Token-budgeted batching of encoded sentences.

use super::vocab::{BOS_ID, EOS_ID, PAD_ID};
use super::{LangId, TokenId};
use crate::error::{Error, Result};

/// Padded batch of BOS..EOS framed sentences with per-sentence language ids.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Row-major [b x l] token matrix, PAD-filled after each sentence.
    pub tokens: Vec<TokenId>,
    pub b: usize,
    pub l: usize,
    pub lengths: Vec<usize>,
    pub langs: Vec<LangId>,
    /// Total non-pad token count.
    pub n_tokens: usize,
}

impl Batch {
    pub fn from_rows(rows: Vec<Vec<TokenId>>, langs: Vec<LangId>) -> Result<Batch> {
        if rows.is_empty() || rows.len() != langs.len() {
            return Err(Error::Data(format!(
                "batch needs matching non-empty rows/langs, got {}/{}",
                rows.len(),
                langs.len()
            )));
        }
        for row in &rows {
            if row.first() != Some(&BOS_ID)
                || row.iter().filter(|&&t| t == EOS_ID).count() != 1
                || *row.last().unwrap() != EOS_ID
            {
                return Err(Error::Data(
                    "batch rows must be framed as BOS .. EOS with exactly one EOS".into(),
                ));
            }
        }
        let b = rows.len();
        let l = rows.iter().map(|r| r.len()).max().unwrap();
        let lengths: Vec<usize> = rows.iter().map(|r| r.len()).collect();
        let n_tokens = lengths.iter().sum();
        let mut tokens = vec![PAD_ID; b * l];
        for (i, row) in rows.iter().enumerate() {
            tokens[i * l..i * l + row.len()].copy_from_slice(row);
        }
        Ok(Batch { tokens, b, l, lengths, langs, n_tokens })
    }

    pub fn row(&self, i: usize) -> &[TokenId] {
        &self.tokens[i * self.l..i * self.l + self.lengths[i]]
    }

    /// True at non-pad positions of the flattened [b x l] matrix.
    pub fn pad_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.b * self.l];
        for i in 0..self.b {
            for t in 0..self.lengths[i] {
                m[i * self.l + t] = true;
            }
        }
        m
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct BatchStats {
    pub truncated: usize,
}

/// Group sentences into batches whose total non-pad token count stays within
/// `token_budget`. Sentences are bucketed by length (stable order) so rows in
/// a batch have similar lengths; every sentence appears exactly once.
/// Sentences longer than the budget are truncated to it (re-framed with EOS)
/// and counted in the stats.
pub fn make_batches(
    ids: &[Vec<TokenId>],
    langs: &[LangId],
    token_budget: usize,
) -> Result<(Vec<Batch>, BatchStats)> {
    if ids.is_empty() || ids.len() != langs.len() {
        return Err(Error::Data(format!(
            "make_batches: {} sentences vs {} language ids",
            ids.len(),
            langs.len()
        )));
    }
    if token_budget < 3 {
        return Err(Error::Param(format!("token budget {token_budget} too small")));
    }
    let mut stats = BatchStats::default();
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by_key(|&i| (ids[i].len(), i));

    let mut batches = Vec::new();
    let mut rows: Vec<Vec<TokenId>> = Vec::new();
    let mut row_langs: Vec<LangId> = Vec::new();
    let mut used = 0usize;
    for &i in &order {
        let mut row = ids[i].clone();
        if row.len() > token_budget {
            row.truncate(token_budget - 1);
            row.push(EOS_ID);
            stats.truncated += 1;
        }
        if used + row.len() > token_budget && !rows.is_empty() {
            batches.push(Batch::from_rows(std::mem::take(&mut rows), std::mem::take(&mut row_langs))?);
            used = 0;
        }
        used += row.len();
        rows.push(row);
        row_langs.push(langs[i]);
    }
    if !rows.is_empty() {
        batches.push(Batch::from_rows(rows, row_langs)?);
    }
    Ok((batches, stats))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(n_interior: usize) -> Vec<TokenId> {
        let mut v = vec![BOS_ID];
        v.extend(std::iter::repeat(7).take(n_interior));
        v.push(EOS_ID);
        v
    }

    #[test]
    fn three_short_sentences_one_batch() {
        let ids = vec![sent(8), sent(8), sent(8)]; // 10 tokens each
        let (batches, _) = make_batches(&ids, &[0, 0, 0], 2000).unwrap();
        assert_eq!(batches.len(), 1);
        assert_eq!(batches[0].b, 3);
        assert_eq!(batches[0].n_tokens, 30);
    }

    #[test]
    fn exact_fit_splits_into_two() {
        let ids = vec![sent(8), sent(8)]; // 10 tokens each, budget 10
        let (batches, _) = make_batches(&ids, &[0, 1], 10).unwrap();
        assert_eq!(batches.len(), 2);
        assert_eq!(batches[0].langs, vec![0]);
        assert_eq!(batches[1].langs, vec![1]);
    }

    #[test]
    fn token_counts_are_conserved() {
        let lens = [3usize, 9, 1, 14, 6, 6, 2, 11, 5, 8, 0, 4];
        let ids: Vec<Vec<TokenId>> = lens.iter().map(|&n| sent(n)).collect();
        let langs = vec![0; ids.len()];
        let (batches, stats) = make_batches(&ids, &langs, 24).unwrap();
        let total: usize = batches.iter().map(|b| b.n_tokens).sum();
        let expect: usize = lens.iter().map(|n| n + 2).sum();
        assert_eq!(total, expect);
        assert_eq!(stats.truncated, 0);
        let count: usize = batches.iter().map(|b| b.b).sum();
        assert_eq!(count, ids.len());
        for b in &batches {
            assert!(b.n_tokens <= 24);
        }
    }

    #[test]
    fn overlong_sentence_is_truncated_with_counter() {
        let ids = vec![sent(30)];
        let (batches, stats) = make_batches(&ids, &[0], 16).unwrap();
        assert_eq!(stats.truncated, 1);
        assert_eq!(batches[0].lengths[0], 16);
        let row = batches[0].row(0);
        assert_eq!(row[0], BOS_ID);
        assert_eq!(*row.last().unwrap(), EOS_ID);
    }

    #[test]
    fn pad_mask_matches_lengths() {
        let ids = vec![sent(1), sent(4)];
        let (batches, _) = make_batches(&ids, &[0, 0], 100).unwrap();
        let b = &batches[0];
        let m = b.pad_mask();
        assert_eq!(m.iter().filter(|&&x| x).count(), b.n_tokens);
    }
}
