//! Corpus cleaning: drop over-long and blank lines.

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CleanStats {
    pub kept: usize,
    pub dropped_long: usize,
    pub dropped_blank: usize,
    pub dropped_invalid_utf8: usize,
}

/// Keep lines whose whitespace word count is in 1..=max_words, unmodified.
/// Lines that are blank, longer than `max_words` words, or not valid UTF-8
/// are dropped and counted. Order is preserved.
pub fn clean_corpus<I, B>(lines: I, max_words: usize) -> (Vec<String>, CleanStats)
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut out = Vec::new();
    let mut stats = CleanStats::default();
    for raw in lines {
        let Ok(line) = std::str::from_utf8(raw.as_ref()) else {
            stats.dropped_invalid_utf8 += 1;
            continue;
        };
        let line = line.strip_suffix('\r').unwrap_or(line);
        let words = line.split_whitespace().count();
        if words == 0 {
            stats.dropped_blank += 1;
        } else if words > max_words {
            stats.dropped_long += 1;
        } else {
            stats.kept += 1;
            out.push(line.to_string());
        }
    }
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(n: usize) -> String {
        vec!["w"; n].join(" ")
    }

    #[test]
    fn fifty_words_kept_fifty_one_dropped() {
        let (kept, stats) = clean_corpus([words(50), words(51)], 50);
        assert_eq!(kept, vec![words(50)]);
        assert_eq!(stats.kept, 1);
        assert_eq!(stats.dropped_long, 1);
    }

    #[test]
    fn empty_stream_stays_empty() {
        let (kept, stats) = clean_corpus(Vec::<String>::new(), 50);
        assert!(kept.is_empty());
        assert_eq!(stats, CleanStats::default());
    }

    #[test]
    fn blank_and_invalid_lines_are_counted() {
        let lines: Vec<Vec<u8>> = vec![
            b"a b c".to_vec(),
            b"".to_vec(),
            b"   ".to_vec(),
            vec![0xff, 0xfe, 0x20],
            b"kept line\r".to_vec(),
        ];
        let (kept, stats) = clean_corpus(lines, 50);
        assert_eq!(kept, vec!["a b c".to_string(), "kept line".to_string()]);
        assert_eq!(stats.dropped_blank, 2);
        assert_eq!(stats.dropped_invalid_utf8, 1);
    }

    #[test]
    fn idempotent_and_order_preserving() {
        let input = vec![words(3), words(10), words(1)];
        let (once, _) = clean_corpus(input.clone(), 50);
        let (twice, _) = clean_corpus(once.clone(), 50);
        assert_eq!(once, input);
        assert_eq!(twice, once);
    }
}
