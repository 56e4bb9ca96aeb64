//! Language family/branch taxonomy used for branch-teacher grouping.

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Maps each language code to its (family, branch). Branches partition the
/// configured language set.
#[derive(Clone, Debug, Default)]
pub struct LanguageBranchMap {
    entries: BTreeMap<String, (String, String)>,
}

impl LanguageBranchMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// The built-in table for the thirteen European languages: three
    /// families split into six branches.
    pub fn european_defaults() -> Self {
        let mut m = LanguageBranchMap::new();
        let table: [(&str, &str, &[&str]); 6] = [
            ("indo-european", "slavic", &["cs"]),
            ("indo-european", "germanic", &["de", "en"]),
            ("indo-european", "romance", &["es", "fr", "it", "ro"]),
            ("indo-european", "baltic", &["lt", "lv"]),
            ("uralic", "finno-ugric", &["et", "fi", "hu"]),
            ("altaic", "turkic", &["tr"]),
        ];
        for (family, branch, langs) in table {
            for lang in langs {
                m.insert(lang, family, branch);
            }
        }
        m
    }

    pub fn insert(&mut self, lang: &str, family: &str, branch: &str) {
        self.entries.insert(lang.to_string(), (family.to_string(), branch.to_string()));
    }

    pub fn branch_of(&self, lang: &str) -> Result<&str> {
        self.entries
            .get(lang)
            .map(|(_, b)| b.as_str())
            .ok_or_else(|| Error::Data(format!("language `{lang}` has no branch assignment")))
    }

    pub fn family_of(&self, lang: &str) -> Result<&str> {
        self.entries
            .get(lang)
            .map(|(f, _)| f.as_str())
            .ok_or_else(|| Error::Data(format!("language `{lang}` has no family assignment")))
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Branch names in sorted order.
    pub fn branches(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, (_, b)) in &self.entries {
            if !out.contains(b) {
                out.push(b.clone());
            }
        }
        out.sort();
        out
    }

    pub fn families(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for (_, (f, _)) in &self.entries {
            if !out.contains(f) {
                out.push(f.clone());
            }
        }
        out.sort();
        out
    }

    pub fn languages_in_branch(&self, branch: &str) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, (_, b))| b == branch)
            .map(|(l, _)| l.clone())
            .collect()
    }

    /// Check that every given language has exactly one branch.
    pub fn validate_covers(&self, langs: &[String]) -> Result<()> {
        for l in langs {
            self.branch_of(l)?;
        }
        Ok(())
    }

    /// Parse `branch:lang,lang;branch:lang` with the branch name doubling as
    /// the family unless `family/branch` is given.
    pub fn parse(text: &str) -> Result<Self> {
        let mut m = LanguageBranchMap::new();
        for group in text.split(';') {
            let group = group.trim();
            if group.is_empty() {
                continue;
            }
            let (name, langs) = group
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("branch group `{group}`: expected name:langs")))?;
            let (family, branch) = match name.split_once('/') {
                Some((f, b)) => (f.trim(), b.trim()),
                None => (name.trim(), name.trim()),
            };
            for lang in langs.split(',') {
                let lang = lang.trim();
                if !lang.is_empty() {
                    m.insert(lang, family, branch);
                }
            }
        }
        if m.entries.is_empty() {
            return Err(Error::Config("empty branch map".into()));
        }
        Ok(m)
    }

    pub fn to_text(&self) -> String {
        let mut groups: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
        for (lang, (family, branch)) in &self.entries {
            groups.entry((family.clone(), branch.clone())).or_default().push(lang.clone());
        }
        groups
            .into_iter()
            .map(|((f, b), langs)| {
                let name = if f == b { b } else { format!("{f}/{b}") };
                format!("{name}:{}", langs.join(","))
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_partition_thirteen_languages() {
        let m = LanguageBranchMap::european_defaults();
        assert_eq!(m.languages().count(), 13);
        assert_eq!(m.branches().len(), 6);
        assert_eq!(m.families().len(), 3);
        // Branches partition the languages.
        let total: usize = m.branches().iter().map(|b| m.languages_in_branch(b).len()).sum();
        assert_eq!(total, 13);
        assert_eq!(m.branch_of("en").unwrap(), "germanic");
        assert_eq!(m.branch_of("tr").unwrap(), "turkic");
        assert_eq!(m.family_of("fi").unwrap(), "uralic");
    }

    #[test]
    fn parse_roundtrip() {
        let m = LanguageBranchMap::parse("west:base,c1;east:c2,c3").unwrap();
        assert_eq!(m.branch_of("c2").unwrap(), "east");
        assert_eq!(m.family_of("c2").unwrap(), "east");
        let m2 = LanguageBranchMap::parse(&m.to_text()).unwrap();
        assert_eq!(m2.to_text(), m.to_text());
        assert!(m.branch_of("zz").is_err());
    }
}
