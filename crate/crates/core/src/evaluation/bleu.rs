//! Corpus-level BLEU-4: clipped n-gram precisions, geometric mean, brevity
//! penalty. Tokenized input, case-sensitive, no smoothing — the classic
//! script behavior.

use crate::error::{Error, Result};
use std::collections::HashMap;

pub const MAX_NGRAM: usize = 4;

#[derive(Clone, Debug)]
pub struct BleuReport {
    /// 0..=100.
    pub score: f64,
    /// Clipped n-gram precisions p_1..p_4.
    pub precisions: [f64; MAX_NGRAM],
    pub brevity_penalty: f64,
    pub hyp_tokens: usize,
    pub ref_tokens: usize,
}

fn ngram_counts(tokens: &[&str], n: usize) -> HashMap<String, u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window.join("\u{1f}")).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU of whitespace-tokenized lines against one reference
/// per line. Case is preserved; any zero n-gram precision zeroes the score.
pub fn bleu(hypotheses: &[String], references: &[String]) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Eval(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::Eval("empty evaluation corpus".into()));
    }
    let mut matched = [0u64; MAX_NGRAM];
    let mut total = [0u64; MAX_NGRAM];
    let mut hyp_tokens = 0usize;
    let mut ref_tokens = 0usize;
    for (hyp, rf) in hypotheses.iter().zip(references) {
        let h: Vec<&str> = hyp.split_whitespace().collect();
        let r: Vec<&str> = rf.split_whitespace().collect();
        hyp_tokens += h.len();
        ref_tokens += r.len();
        for n in 1..=MAX_NGRAM {
            let hc = ngram_counts(&h, n);
            let rc = ngram_counts(&r, n);
            for (gram, &count) in &hc {
                let clip = rc.get(gram).copied().unwrap_or(0);
                matched[n - 1] += count.min(clip);
            }
            total[n - 1] += (h.len() + 1).saturating_sub(n) as u64;
        }
    }
    let mut precisions = [0.0f64; MAX_NGRAM];
    for n in 0..MAX_NGRAM {
        precisions[n] = if total[n] > 0 { matched[n] as f64 / total[n] as f64 } else { 0.0 };
    }
    let brevity_penalty = if hyp_tokens == 0 {
        0.0
    } else if hyp_tokens > ref_tokens {
        1.0
    } else {
        (1.0 - ref_tokens as f64 / hyp_tokens as f64).exp()
    };
    let score = if precisions.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_NGRAM as f64;
        brevity_penalty * log_mean.exp() * 100.0
    };
    Ok(BleuReport { score, precisions, brevity_penalty, hyp_tokens, ref_tokens })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn identical_corpus_scores_100() {
        let c = lines(&["a b c d e", "the quick brown fox jumps"]);
        let r = bleu(&c, &c).unwrap();
        assert!((r.score - 100.0).abs() < 1e-9);
        assert_eq!(r.brevity_penalty, 1.0);
        for p in r.precisions {
            assert_eq!(p, 1.0);
        }
    }

    #[test]
    fn disjoint_corpus_scores_0() {
        let h = lines(&["a b c d"]);
        let r = lines(&["e f g h"]);
        let report = bleu(&h, &r).unwrap();
        assert_eq!(report.score, 0.0);
    }

    #[test]
    fn hand_counted_example() {
        // hyp: the cat sat on the mat .   ref: the cat sat on a mat .
        // p1 = 6/7 ("the" clipped to 1), p2 = 4/6, p3 = 2/5, p4 = 1/4, BP = 1.
        let h = lines(&["the cat sat on the mat ."]);
        let r = lines(&["the cat sat on a mat ."]);
        let report = bleu(&h, &r).unwrap();
        assert!((report.precisions[0] - 6.0 / 7.0).abs() < 1e-12);
        assert!((report.precisions[1] - 4.0 / 6.0).abs() < 1e-12);
        assert!((report.precisions[2] - 2.0 / 5.0).abs() < 1e-12);
        assert!((report.precisions[3] - 1.0 / 4.0).abs() < 1e-12);
        assert_eq!(report.brevity_penalty, 1.0);
        let log_mean = ((6.0f64 / 7.0).ln()
            + (4.0f64 / 6.0).ln()
            + (2.0f64 / 5.0).ln()
            + (1.0f64 / 4.0).ln())
            / 4.0;
        let expect = 100.0 * log_mean.exp();
        assert!((report.score - expect).abs() < 1e-9, "{} vs {expect}", report.score);
        assert!((report.score - 48.8923).abs() < 0.01, "score {}", report.score);
    }

    #[test]
    fn case_sensitivity() {
        let h = lines(&["The cat sat on the mat ."]);
        let r = lines(&["the cat sat on the mat ."]);
        let report = bleu(&h, &r).unwrap();
        assert!(report.score < 100.0);
        assert!(report.precisions[0] < 1.0);
    }

    #[test]
    fn brevity_penalty_behaviour() {
        // Short hypothesis is penalized.
        let h = lines(&["a b"]);
        let r = lines(&["a b c d"]);
        let report = bleu(&h, &r).unwrap();
        assert!((report.brevity_penalty - (1.0f64 - 4.0 / 2.0).exp()).abs() < 1e-12);
        // Long hypothesis never pushes BP above 1.
        let h = lines(&["a b c d e f g h"]);
        let report = bleu(&h, &r).unwrap();
        assert_eq!(report.brevity_penalty, 1.0);
        // Equal length: BP exactly 1.
        let h = lines(&["a b c d"]);
        let report = bleu(&h, &r).unwrap();
        assert_eq!(report.brevity_penalty, 1.0);
    }

    #[test]
    fn line_count_mismatch_is_an_error() {
        let h = lines(&["a"]);
        let r = lines(&["a", "b"]);
        assert!(bleu(&h, &r).is_err());
    }

    #[test]
    fn reordering_lines_together_is_invariant() {
        let h = lines(&["a b c d", "x y z w", "p q r s"]);
        let r = lines(&["a b c e", "x y w z", "p q r s"]);
        let s1 = bleu(&h, &r).unwrap().score;
        let h2 = lines(&["p q r s", "a b c d", "x y z w"]);
        let r2 = lines(&["p q r s", "a b c e", "x y w z"]);
        let s2 = bleu(&h2, &r2).unwrap().score;
        assert!((s1 - s2).abs() < 1e-12);
    }
}
