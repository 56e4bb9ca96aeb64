//! Rule-based pretokenization.
//!
//! Deliberately simple and fully documented: split on whitespace, then
//! split each chunk into maximal runs of word characters (alphanumeric plus
//! apostrophe-free word internals) versus everything else, so punctuation
//! becomes its own token. `a dog, fast!` -> `a` `dog` `,` `fast` `!`.

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

pub fn pretokenize(line: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in line.split_whitespace() {
        let mut cur = String::new();
        let mut cur_is_word = false;
        for c in chunk.chars() {
            let w = is_word_char(c);
            if !cur.is_empty() && w != cur_is_word {
                tokens.push(std::mem::take(&mut cur));
            }
            cur_is_word = w;
            cur.push(c);
        }
        if !cur.is_empty() {
            tokens.push(cur);
        }
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(pretokenize("a dog, fast!"), vec!["a", "dog", ",", "fast", "!"]);
        assert_eq!(pretokenize("  spaced   out  "), vec!["spaced", "out"]);
        assert_eq!(pretokenize(""), Vec::<String>::new());
        assert_eq!(pretokenize("x2+y2"), vec!["x2", "+", "y2"]);
    }
}
