//! Byte-pair encoding over a multi-language corpus.
//!
//! Standard merge learning: start from characters (with an `</w>` marker on
//! word-final symbols), repeatedly merge the most frequent adjacent pair,
//! ties broken by lexicographically smallest pair. All languages' corpora
//! are concatenated for counting, so the result is one shared subword
//! inventory.

use super::tokenize::pretokenize;
use super::vocab::{Vocabulary, N_SPECIALS};
use crate::error::{Error, Result};
use std::collections::{BTreeMap, HashMap, HashSet};

pub const END_OF_WORD: &str = "</w>";

#[derive(Clone, Debug)]
pub struct BpeModel {
    /// Ordered merges; applying them in order is deterministic.
    pub merges: Vec<(String, String)>,
    /// Vocabulary size the model was trained toward.
    pub target_vocab_size: usize,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn new(merges: Vec<(String, String)>, target_vocab_size: usize) -> BpeModel {
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, (a, b))| ((a.clone(), b.clone()), i))
            .collect();
        BpeModel { merges, target_vocab_size, ranks }
    }

    /// Split one pretokenized word into subword symbols.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = word_symbols(word);
        loop {
            let mut best: Option<(usize, usize)> = None; // (rank, position)
            for i in 0..symbols.len().saturating_sub(1) {
                if let Some(&rank) =
                    self.ranks.get(&(symbols[i].clone(), symbols[i + 1].clone()))
                {
                    if best.map_or(true, |(r, _)| rank < r) {
                        best = Some((rank, i));
                    }
                }
            }
            match best {
                Some((_, i)) => {
                    let merged = format!("{}{}", symbols[i], symbols[i + 1]);
                    symbols[i] = merged;
                    symbols.remove(i + 1);
                }
                None => break,
            }
        }
        symbols
    }

    /// Pretokenize, segment, and map to ids, framed as BOS .. EOS.
    /// Unknown symbols become UNK.
    pub fn encode_sentence(&self, text: &str, vocab: &Vocabulary) -> Vec<u32> {
        let mut ids = vec![super::vocab::BOS_ID];
        for word in pretokenize(text) {
            for sym in self.segment_word(&word) {
                ids.push(vocab.id_or_unk(&sym));
            }
        }
        ids.push(super::vocab::EOS_ID);
        ids
    }

    /// Inverse of `encode_sentence` for in-vocabulary text: returns the
    /// pretokenized words joined by single spaces. Special tokens are
    /// dropped, unknown ids render as the UNK token string.
    pub fn decode_ids(&self, ids: &[u32], vocab: &Vocabulary) -> String {
        let mut buf = String::new();
        for &id in ids {
            if id < N_SPECIALS as u32 && id != super::vocab::UNK_ID {
                continue;
            }
            buf.push_str(vocab.token(id));
        }
        buf.split(END_OF_WORD).filter(|w| !w.is_empty()).collect::<Vec<_>>().join(" ")
    }

    /// Serialize as one merge per line: `left<SPACE>right`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.merges {
            out.push_str(a);
            out.push(' ');
            out.push_str(b);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, target_vocab_size: usize) -> Result<BpeModel> {
        let mut merges = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (a, b) = line
                .split_once(' ')
                .ok_or_else(|| Error::Data(format!("merges line {}: `{line}`", ln + 1)))?;
            merges.push((a.to_string(), b.to_string()));
        }
        Ok(BpeModel::new(merges, target_vocab_size))
    }
}

fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Learn a shared BPE model and vocabulary over the concatenation of all
/// languages' corpora. `vocab_size` counts specials, characters and merged
/// tokens together; it must exceed the number of distinct characters plus
/// specials. The id order is: specials, then initial symbols sorted, then
/// merged tokens in merge order.
pub fn learn_bpe(
    corpora: &[Vec<String>],
    vocab_size: usize,
    languages: &[String],
) -> Result<(BpeModel, Vocabulary)> {
    if corpora.iter().all(|c| c.is_empty()) {
        return Err(Error::Data("learn_bpe: all corpora are empty".into()));
    }

    // Word frequency table; BTreeMap fixes the iteration order.
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    for corpus in corpora {
        for line in corpus {
            for word in pretokenize(line) {
                *word_freq.entry(word).or_insert(0) += 1;
            }
        }
    }

    let mut words: Vec<(Vec<String>, u64)> =
        word_freq.iter().map(|(w, &f)| (word_symbols(w), f)).collect();

    let mut charset: Vec<String> = {
        let set: HashSet<&String> = words.iter().flat_map(|(syms, _)| syms.iter()).collect();
        let mut v: Vec<String> = set.into_iter().cloned().collect();
        v.sort();
        v
    };
    let base = N_SPECIALS + charset.len();
    if vocab_size < base {
        return Err(Error::Param(format!(
            "vocab_size {vocab_size} too small: need at least {base} \
             ({N_SPECIALS} specials + {} characters)",
            charset.len()
        )));
    }

    let mut vocab_set: HashSet<String> = charset.iter().cloned().collect();
    let mut merges: Vec<(String, String)> = Vec::new();
    let mut merged_tokens: Vec<String> = Vec::new();

    while N_SPECIALS + vocab_set.len() < vocab_size {
        // Count adjacent pairs, weighted by word frequency.
        let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, f) in &words {
            for pair in syms.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_insert(0) += f;
            }
        }
        // Most frequent pair; ties -> lexicographically smallest. The fold
        // is order-independent, so HashMap iteration order does not matter.
        let best = counts.iter().fold(None::<((&str, &str), u64)>, |acc, (&pair, &count)| {
            match acc {
                None => Some((pair, count)),
                Some((bp, bc)) => {
                    if count > bc || (count == bc && pair < bp) {
                        Some((pair, count))
                    } else {
                        Some((bp, bc))
                    }
                }
            }
        });
        let Some(((left, right), _)) = best else {
            break; // every word is a single symbol already
        };
        let (left, right) = (left.to_string(), right.to_string());
        let merged = format!("{left}{right}");
        for (syms, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == left && syms[i + 1] == right {
                    syms[i] = merged.clone();
                    syms.remove(i + 1);
                } else {
                    i += 1;
                }
            }
        }
        merges.push((left, right));
        if vocab_set.insert(merged.clone()) {
            merged_tokens.push(merged);
        }
    }

    // Token frequencies under the final segmentation.
    let mut sym_freq: HashMap<&str, u64> = HashMap::new();
    for (syms, f) in &words {
        for s in syms {
            *sym_freq.entry(s.as_str()).or_insert(0) += f;
        }
    }
    let mut entries: Vec<(String, u64)> = Vec::with_capacity(vocab_set.len());
    charset.drain(..).for_each(|s| {
        let f = sym_freq.get(s.as_str()).copied().unwrap_or(0);
        entries.push((s, f));
    });
    for s in merged_tokens {
        let f = sym_freq.get(s.as_str()).copied().unwrap_or(0);
        entries.push((s, f));
    }

    let vocab = Vocabulary::from_entries(entries, languages)?;
    Ok((BpeModel::new(merges, vocab_size), vocab))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn langs() -> Vec<String> {
        vec!["a".into(), "b".into()]
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        // "aaab aaab": symbols a a a b</w>; pair (a,a) occurs twice per word.
        let corpus = vec![vec!["aaab aaab".to_string()]];
        // charset: {a, b</w>} -> base = 5 + 2 = 7; one merge -> 8.
        let (bpe, _vocab) = learn_bpe(&corpus, 8, &langs()).unwrap();
        assert_eq!(bpe.merges.len(), 1);
        assert_eq!(bpe.merges[0], ("a".to_string(), "a".to_string()));
    }

    #[test]
    fn degenerate_budget_gives_character_vocab() {
        let corpus = vec![vec!["abc cba".to_string()]];
        // charset: a, b, c, a</w>, c</w> -> 5 symbols; 5 specials -> 10.
        let (bpe, vocab) = learn_bpe(&corpus, 10, &langs()).unwrap();
        assert!(bpe.merges.is_empty());
        assert_eq!(vocab.size(), 10);
    }

    #[test]
    fn too_small_budget_is_an_error() {
        let corpus = vec![vec!["abc".to_string()]];
        assert!(learn_bpe(&corpus, 7, &langs()).is_err());
    }

    #[test]
    fn learning_is_deterministic() {
        let corpus =
            vec![vec!["the cat sat".to_string(), "the mat sat".to_string()], vec![
                "a cat a mat".to_string(),
            ]];
        let (m1, v1) = learn_bpe(&corpus, 30, &langs()).unwrap();
        let (m2, v2) = learn_bpe(&corpus, 30, &langs()).unwrap();
        assert_eq!(m1.merges, m2.merges);
        assert_eq!(v1.to_text(), v2.to_text());
    }

    #[test]
    fn encode_decode_roundtrip_and_unk() {
        let corpus = vec![vec!["ab ab cd".to_string(), "ab cd cd".to_string()]];
        let (bpe, vocab) = learn_bpe(&corpus, 16, &langs()).unwrap();
        let ids = bpe.encode_sentence("ab cd", &vocab);
        assert_eq!(ids[0], super::super::vocab::BOS_ID);
        assert_eq!(*ids.last().unwrap(), super::super::vocab::EOS_ID);
        assert_eq!(bpe.decode_ids(&ids, &vocab), "ab cd");

        // Unseen character maps to UNK.
        let ids = bpe.encode_sentence("аб", &vocab);
        assert!(ids.contains(&super::super::vocab::UNK_ID));
    }

    #[test]
    fn empty_sentence_is_bos_eos() {
        let corpus = vec![vec!["x".to_string()]];
        let (bpe, vocab) = learn_bpe(&corpus, 9, &langs()).unwrap();
        let ids = bpe.encode_sentence("", &vocab);
        assert_eq!(ids, vec![super::super::vocab::BOS_ID, super::super::vocab::EOS_ID]);
    }

    #[test]
    fn merge_list_roundtrips_through_text() {
        let corpus = vec![vec!["aaab aaab aab".to_string()]];
        let (bpe, _) = learn_bpe(&corpus, 10, &langs()).unwrap();
        let parsed = BpeModel::parse(&bpe.to_text(), bpe.target_vocab_size).unwrap();
        assert_eq!(parsed.merges, bpe.merges);
    }
}
