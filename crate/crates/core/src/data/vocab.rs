//! Shared token vocabulary with reserved specials and language ids.

use super::{LangId, TokenId};
use crate::error::{Error, Result};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const BOS_ID: TokenId = 2;
pub const EOS_ID: TokenId = 3;
pub const MASK_ID: TokenId = 4;
pub const N_SPECIALS: usize = 5;

pub const SPECIAL_TOKENS: [&str; N_SPECIALS] = ["<pad>", "<unk>", "<s>", "</s>", "<mask>"];

/// Token <-> id bijection shared by every language in a run, plus the
/// language-code table. Ids 0..4 are reserved for the special tokens.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    tokens: Vec<String>,
    freqs: Vec<u64>,
    ids: HashMap<String, TokenId>,
    languages: Vec<String>,
}

impl Vocabulary {
    /// Build from non-special `(token, frequency)` entries in id order.
    pub fn from_entries(entries: Vec<(String, u64)>, languages: &[String]) -> Result<Vocabulary> {
        let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        let mut freqs: Vec<u64> = vec![0; N_SPECIALS];
        for (tok, f) in entries {
            tokens.push(tok);
            freqs.push(f);
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Vocab(format!("duplicate token `{t}`")));
            }
        }
        if languages.is_empty() {
            return Err(Error::Vocab("no languages given".into()));
        }
        let mut seen = HashMap::new();
        for (i, l) in languages.iter().enumerate() {
            if seen.insert(l.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate language `{l}`")));
            }
        }
        Ok(Vocabulary { tokens, freqs, ids, languages: languages.to_vec() })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.ids.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn languages(&self) -> &[String] {
        &self.languages
    }

    pub fn n_languages(&self) -> usize {
        self.languages.len()
    }

    pub fn lang_id(&self, code: &str) -> Result<LangId> {
        self.languages
            .iter()
            .position(|l| l == code)
            .map(|i| i as LangId)
            .ok_or_else(|| Error::Vocab(format!("unknown language `{code}`")))
    }

    pub fn lang_code(&self, id: LangId) -> &str {
        &self.languages[id as usize]
    }

    /// One token per line, `token<TAB>frequency`, ordered by id.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, f) in self.tokens.iter().zip(&self.freqs) {
            let _ = writeln!(out, "{t}\t{f}");
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parse a vocabulary file. The file stores tokens only; language codes
    /// come from the run configuration.
    pub fn parse(text: &str, languages: &[String]) -> Result<Vocabulary> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, freq) = line
                .split_once('\t')
                .ok_or_else(|| Error::Vocab(format!("line {}: expected token<TAB>freq", i + 1)))?;
            let freq: u64 =
                freq.parse().map_err(|_| Error::Vocab(format!("line {}: bad frequency", i + 1)))?;
            if i < N_SPECIALS {
                if tok != SPECIAL_TOKENS[i] {
                    return Err(Error::Vocab(format!(
                        "line {}: expected special `{}`, found `{tok}`",
                        i + 1,
                        SPECIAL_TOKENS[i]
                    )));
                }
                continue;
            }
            entries.push((tok.to_string(), freq));
        }
        if entries.is_empty() && text.lines().count() < N_SPECIALS {
            return Err(Error::Vocab("vocabulary file too short".into()));
        }
        Vocabulary::from_entries(entries, languages)
    }

    pub fn load(path: &Path, languages: &[String]) -> Result<Vocabulary> {
        Vocabulary::parse(&std::fs::read_to_string(path)?, languages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vocabulary {
        Vocabulary::from_entries(
            vec![("ab".into(), 10), ("c</w>".into(), 7)],
            &["base".into(), "c1".into()],
        )
        .unwrap()
    }

    #[test]
    fn specials_have_fixed_ids() {
        let v = sample();
        assert_eq!(v.id("<pad>"), Some(PAD_ID));
        assert_eq!(v.id("<unk>"), Some(UNK_ID));
        assert_eq!(v.id("<s>"), Some(BOS_ID));
        assert_eq!(v.id("</s>"), Some(EOS_ID));
        assert_eq!(v.id("<mask>"), Some(MASK_ID));
        assert_eq!(v.id("ab"), Some(5));
        assert_eq!(v.size(), 7);
    }

    #[test]
    fn bijection_and_languages() {
        let v = sample();
        for id in 0..v.size() as TokenId {
            assert_eq!(v.id(v.token(id)), Some(id));
        }
        assert_eq!(v.lang_id("base").unwrap(), 0);
        assert_eq!(v.lang_id("c1").unwrap(), 1);
        assert!(v.lang_id("xx").is_err());
    }

    #[test]
    fn file_roundtrip() {
        let v = sample();
        let text = v.to_text();
        let v2 = Vocabulary::parse(&text, &["base".into(), "c1".into()]).unwrap();
        assert_eq!(v2.to_text(), text);
    }

    #[test]
    fn duplicate_token_rejected() {
        let r = Vocabulary::from_entries(
            vec![("x".into(), 1), ("x".into(), 2)],
            &["l".into()],
        );
        assert!(r.is_err());
    }
}
