//! Synthetic pseudo-language generation.
//!
//! A base language is defined by a word inventory with a Zipfian unigram
//! distribution and a fixed random bigram structure (so each word has an
//! identifiable context signature). Each pseudo-language is a bijective
//! word substitution over that inventory — a configurable fraction of
//! "anchor" words map to themselves, the rest get language-specific
//! surfaces — optionally followed by a deterministic local reordering.
//!
//! Monolingual corpora are sampled independently per language, so they are
//! never sentence-parallel. Small held-out test sets apply every language's
//! transform to shared base sentences, giving exact parallel references,
//! and the gold transforms are recorded so oracle translations exist.

use super::branch::LanguageBranchMap;
use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::rng::DetRng;
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

/// Deterministic local reordering applied after substitution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReorderRule {
    /// Swap words pairwise: positions (0,1), (2,3), ... Self-inverse.
    SwapAdjacent,
}

impl ReorderRule {
    pub fn apply(&self, words: &mut [String]) {
        match self {
            ReorderRule::SwapAdjacent => {
                let mut i = 0;
                while i + 1 < words.len() {
                    words.swap(i, i + 1);
                    i += 2;
                }
            }
        }
    }

    pub fn invert(&self, words: &mut [String]) {
        match self {
            ReorderRule::SwapAdjacent => self.apply(words),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReorderRule::SwapAdjacent => "swap_adjacent",
        }
    }

    pub fn parse(s: &str) -> Result<ReorderRule> {
        match s {
            "swap_adjacent" => Ok(ReorderRule::SwapAdjacent),
            other => Err(Error::Config(format!("unknown reorder rule `{other}`"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSpec {
    /// First language is the pivot; its transform is the identity.
    pub languages: Vec<String>,
    pub branches: LanguageBranchMap,
    /// Base word inventory size.
    pub base_vocab: usize,
    pub sentences_per_lang: usize,
    pub test_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf_exponent: f64,
    /// Fraction of word types shared verbatim across all languages.
    pub anchor_fraction: f64,
    pub bigram_successors: usize,
    pub bigram_weight: f64,
    pub reorder: BTreeMap<String, ReorderRule>,
    /// Per-language corpus size multiplier (for starved-language setups).
    pub scale: BTreeMap<String, f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    /// The default desk-scale spec: four languages in two branches, a
    /// 200-word base inventory, 20k sentences per language, one reordered
    /// language (c3).
    fn default() -> Self {
        let mut reorder = BTreeMap::new();
        reorder.insert("c3".to_string(), ReorderRule::SwapAdjacent);
        SyntheticSpec {
            languages: vec!["base".into(), "c1".into(), "c2".into(), "c3".into()],
            branches: LanguageBranchMap::parse("west:base,c1;east:c2,c3").unwrap(),
            base_vocab: 200,
            sentences_per_lang: 20_000,
            test_sentences: 500,
            min_len: 3,
            max_len: 12,
            zipf_exponent: 1.1,
            anchor_fraction: 0.3,
            bigram_successors: 16,
            bigram_weight: 0.65,
            reorder,
            scale: BTreeMap::new(),
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.languages.len() < 2 {
            return Err(Error::Param("need at least two languages".into()));
        }
        let mut seen = HashSet::new();
        for l in &self.languages {
            if !seen.insert(l) {
                return Err(Error::Param(format!("duplicate language `{l}`")));
            }
        }
        self.branches.validate_covers(&self.languages)?;
        if self.base_vocab < 10 {
            return Err(Error::Param("base_vocab must be at least 10".into()));
        }
        if !(0.0..=1.0).contains(&self.anchor_fraction) {
            return Err(Error::Param("anchor_fraction must be in [0, 1]".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::Param("need 1 <= min_len <= max_len".into()));
        }
        if self.zipf_exponent <= 0.0 {
            return Err(Error::Param("zipf_exponent must be positive".into()));
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig) -> Result<SyntheticSpec> {
        let d = SyntheticSpec::default();
        let languages = cfg.get_list("languages").unwrap_or(d.languages);
        let branches = match cfg.raw("branches") {
            Some(text) => LanguageBranchMap::parse(text)?,
            None => d.branches,
        };
        let mut reorder = BTreeMap::new();
        let mut scale = BTreeMap::new();
        for (k, v) in cfg.iter() {
            if let Some(lang) = k.strip_prefix("reorder.") {
                reorder.insert(lang.to_string(), ReorderRule::parse(v)?);
            }
            if let Some(lang) = k.strip_prefix("scale.") {
                let f: f64 = v
                    .parse()
                    .map_err(|_| Error::Config(format!("scale.{lang}: bad number `{v}`")))?;
                scale.insert(lang.to_string(), f);
            }
        }
        // With an explicit language list, defaults for per-language keys
        // only apply when that list is the default one.
        if !cfg.contains("languages") && reorder.is_empty() {
            reorder = d.reorder;
        }
        let spec = SyntheticSpec {
            languages,
            branches,
            base_vocab: cfg.get_or("base_vocab", d.base_vocab)?,
            sentences_per_lang: cfg.get_or("sentences_per_lang", d.sentences_per_lang)?,
            test_sentences: cfg.get_or("test_sentences", d.test_sentences)?,
            min_len: cfg.get_or("min_len", d.min_len)?,
            max_len: cfg.get_or("max_len", d.max_len)?,
            zipf_exponent: cfg.get_or("zipf_exponent", d.zipf_exponent)?,
            anchor_fraction: cfg.get_or("anchor_fraction", d.anchor_fraction)?,
            bigram_successors: cfg.get_or("bigram_successors", d.bigram_successors)?,
            bigram_weight: cfg.get_or("bigram_weight", d.bigram_weight)?,
            reorder,
            scale,
            seed: cfg.get_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("languages", self.languages.join(","));
        cfg.set("branches", self.branches.to_text());
        cfg.set("base_vocab", self.base_vocab);
        cfg.set("sentences_per_lang", self.sentences_per_lang);
        cfg.set("test_sentences", self.test_sentences);
        cfg.set("min_len", self.min_len);
        cfg.set("max_len", self.max_len);
        cfg.set("zipf_exponent", self.zipf_exponent);
        cfg.set("anchor_fraction", self.anchor_fraction);
        cfg.set("bigram_successors", self.bigram_successors);
        cfg.set("bigram_weight", self.bigram_weight);
        for (lang, rule) in &self.reorder {
            cfg.set(&format!("reorder.{lang}"), rule.name());
        }
        for (lang, s) in &self.scale {
            cfg.set(&format!("scale.{lang}"), s);
        }
        cfg.set("seed", self.seed);
        cfg
    }
}

/// The recorded bijection (plus optional reordering) for one language.
#[derive(Clone, Debug)]
pub struct GoldTransform {
    pub lang: String,
    /// base word -> this language's word.
    pub mapping: BTreeMap<String, String>,
    pub reorder: Option<ReorderRule>,
}

impl GoldTransform {
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for target in self.mapping.values() {
            if !seen.insert(target) {
                return Err(Error::Param(format!(
                    "language `{}`: substitution is not bijective (duplicate `{target}`)",
                    self.lang
                )));
            }
        }
        Ok(())
    }

    /// Map a base sentence into this language.
    pub fn apply_base(&self, base_words: &[String]) -> Vec<String> {
        let mut words: Vec<String> =
            base_words.iter().map(|w| self.mapping.get(w).cloned().unwrap_or_else(|| w.clone())).collect();
        if let Some(rule) = self.reorder {
            rule.apply(&mut words);
        }
        words
    }

    /// Map a sentence of this language back to base words.
    pub fn invert(&self, words: &[String]) -> Vec<String> {
        let inverse: BTreeMap<&String, &String> =
            self.mapping.iter().map(|(k, v)| (v, k)).collect();
        let mut words = words.to_vec();
        if let Some(rule) = self.reorder {
            rule.invert(&mut words);
        }
        words
            .iter()
            .map(|w| inverse.get(w).map(|s| (*s).clone()).unwrap_or_else(|| w.clone()))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    /// (language, monolingual lines) in spec language order.
    pub corpora: Vec<(String, Vec<String>)>,
    /// (language, test lines); files are line-parallel across languages.
    pub test: Vec<(String, Vec<String>)>,
    pub gold: Vec<GoldTransform>,
}

/// Word-surface pool: short pronounceable strings, frequent ranks get short
/// words. Deterministic given the rng.
fn surface_pool(n_needed: usize, rng: &mut DetRng) -> Vec<String> {
    const CONS: [char; 14] = ['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
    const VOWS: [char; 5] = ['a', 'e', 'i', 'o', 'u'];
    let mut syllables = Vec::with_capacity(CONS.len() * VOWS.len());
    for c in CONS {
        for v in VOWS {
            syllables.push(format!("{c}{v}"));
        }
    }
    let mut one: Vec<String> = syllables.clone();
    rng.shuffle(&mut one);
    let mut two: Vec<String> = Vec::with_capacity(syllables.len() * syllables.len());
    for a in &syllables {
        for b in &syllables {
            two.push(format!("{a}{b}"));
        }
    }
    rng.shuffle(&mut two);
    let mut pool = one;
    pool.extend(two);
    while pool.len() < n_needed {
        // Extend with three-syllable words if ever necessary.
        let a = &syllables[rng.below(syllables.len())];
        let b = &syllables[rng.below(syllables.len())];
        let c = &syllables[rng.below(syllables.len())];
        let w = format!("{a}{b}{c}");
        if !pool.contains(&w) {
            pool.push(w);
        }
    }
    pool
}

struct BaseLanguage {
    /// Rank -> base surface.
    inventory: Vec<String>,
    zipf_cdf: Vec<f64>,
    /// Per-rank preferred-successor cumulative distributions.
    successor_cdfs: Vec<(Vec<usize>, Vec<f64>)>,
    bigram_weight: f64,
}

impl BaseLanguage {
    fn build(spec: &SyntheticSpec, inventory: Vec<String>, rng: &mut DetRng) -> BaseLanguage {
        let v = inventory.len();
        let weights: Vec<f64> =
            (0..v).map(|r| 1.0 / ((r + 1) as f64).powf(spec.zipf_exponent)).collect();
        let total: f64 = weights.iter().sum();
        let mut zipf_cdf = Vec::with_capacity(v);
        let mut acc = 0.0;
        for w in &weights {
            acc += w / total;
            zipf_cdf.push(acc);
        }

        let mut successor_cdfs = Vec::with_capacity(v);
        for _ in 0..v {
            let mut set: Vec<usize> = Vec::new();
            for _ in 0..spec.bigram_successors {
                let s = rng.sample_cdf(&zipf_cdf);
                if !set.contains(&s) {
                    set.push(s);
                }
            }
            let wsum: f64 = set.iter().map(|&s| weights[s]).sum();
            let mut cdf = Vec::with_capacity(set.len());
            let mut acc = 0.0;
            for &s in &set {
                acc += weights[s] / wsum;
                cdf.push(acc);
            }
            successor_cdfs.push((set, cdf));
        }
        BaseLanguage { inventory, zipf_cdf, successor_cdfs, bigram_weight: spec.bigram_weight }
    }

    fn sample_sentence(&self, min_len: usize, max_len: usize, rng: &mut DetRng) -> Vec<usize> {
        let len = rng.range_inclusive(min_len, max_len);
        let mut ranks = Vec::with_capacity(len);
        let mut cur = rng.sample_cdf(&self.zipf_cdf);
        ranks.push(cur);
        for _ in 1..len {
            let next = if rng.f64() < self.bigram_weight {
                let (set, cdf) = &self.successor_cdfs[cur];
                set[rng.sample_cdf(cdf)]
            } else {
                rng.sample_cdf(&self.zipf_cdf)
            };
            ranks.push(next);
            cur = next;
        }
        ranks
    }
}

/// Anchor ranks: evenly spread over the frequency ranking so shared tokens
/// occur at every frequency band.
fn anchor_ranks(v: usize, fraction: f64) -> Vec<bool> {
    let mut anchors = vec![false; v];
    let mut acc = 0.0f64;
    for (r, a) in anchors.iter_mut().enumerate() {
        let next = (r + 1) as f64 * fraction;
        if next.floor() > acc.floor() {
            *a = true;
        }
        acc = next;
    }
    anchors
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let n_langs = spec.languages.len();
    let v = spec.base_vocab;

    let mut surface_rng = DetRng::new(spec.seed, 1);
    let pool = surface_pool(v * (n_langs + 1), &mut surface_rng);
    let inventory: Vec<String> = pool[..v].to_vec();
    let mut next_surface = v;

    let mut bigram_rng = DetRng::new(spec.seed, 2);
    let base = BaseLanguage::build(spec, inventory, &mut bigram_rng);

    let anchors = anchor_ranks(v, spec.anchor_fraction);

    // Gold transforms: pivot identity, ciphers for the rest.
    let mut gold = Vec::with_capacity(n_langs);
    for (li, lang) in spec.languages.iter().enumerate() {
        let mut mapping = BTreeMap::new();
        if li > 0 {
            for r in 0..v {
                let from = base.inventory[r].clone();
                let to = if anchors[r] {
                    from.clone()
                } else {
                    next_surface += 1;
                    pool[next_surface - 1].clone()
                };
                mapping.insert(from, to);
            }
        }
        let transform =
            GoldTransform { lang: lang.clone(), mapping, reorder: spec.reorder.get(lang).copied() };
        transform.validate()?;
        gold.push(transform);
    }

    // Independent monolingual corpora.
    let mut corpora = Vec::with_capacity(n_langs);
    for (li, lang) in spec.languages.iter().enumerate() {
        let mut rng = DetRng::new(spec.seed, 100 + li as u64);
        let scale = spec.scale.get(lang).copied().unwrap_or(1.0);
        let n = ((spec.sentences_per_lang as f64 * scale).round() as usize).max(1);
        let mut lines = Vec::with_capacity(n);
        for _ in 0..n {
            let ranks = base.sample_sentence(spec.min_len, spec.max_len, &mut rng);
            let words: Vec<String> =
                ranks.iter().map(|&r| base.inventory[r].clone()).collect();
            lines.push(gold[li].apply_base(&words).join(" "));
        }
        corpora.push((lang.clone(), lines));
    }

    // Shared base sentences -> parallel test sets.
    let mut test_rng = DetRng::new(spec.seed, 3);
    let mut base_sentences = Vec::with_capacity(spec.test_sentences);
    for _ in 0..spec.test_sentences {
        let ranks = base.sample_sentence(spec.min_len, spec.max_len, &mut test_rng);
        let words: Vec<String> = ranks.iter().map(|&r| base.inventory[r].clone()).collect();
        base_sentences.push(words);
    }
    let mut test = Vec::with_capacity(n_langs);
    for (li, lang) in spec.languages.iter().enumerate() {
        let lines: Vec<String> =
            base_sentences.iter().map(|ws| gold[li].apply_base(ws).join(" ")).collect();
        test.push((lang.clone(), lines));
    }

    Ok(SyntheticData { spec: spec.clone(), corpora, test, gold })
}

impl SyntheticData {
    /// Layout:
    /// `corpora/<lang>.txt`, `test/test.<lang>`, `gold/<lang>.tsv`,
    /// `gold/reorder.cfg`, `synthetic.cfg` (the resolved spec).
    pub fn write_to_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("corpora"))?;
        std::fs::create_dir_all(dir.join("test"))?;
        std::fs::create_dir_all(dir.join("gold"))?;
        for (lang, lines) in &self.corpora {
            std::fs::write(dir.join("corpora").join(format!("{lang}.txt")), lines.join("\n") + "\n")?;
        }
        for (lang, lines) in &self.test {
            std::fs::write(dir.join("test").join(format!("test.{lang}")), lines.join("\n") + "\n")?;
        }
        let mut reorder_cfg = KvConfig::new();
        for t in &self.gold {
            let mut tsv = String::new();
            for (from, to) in &t.mapping {
                tsv.push_str(from);
                tsv.push('\t');
                tsv.push_str(to);
                tsv.push('\n');
            }
            std::fs::write(dir.join("gold").join(format!("{}.tsv", t.lang)), tsv)?;
            if let Some(rule) = t.reorder {
                reorder_cfg.set(&t.lang, rule.name());
            }
        }
        reorder_cfg.save(&dir.join("gold").join("reorder.cfg"))?;
        self.spec.to_config().save(&dir.join("synthetic.cfg"))?;
        Ok(())
    }
}

/// Read one sentence-per-line UTF-8 corpus.
pub fn load_lines(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.is_empty())
        .map(|l| l.to_string())
        .collect())
}

/// Load the gold transform for `lang` from a generated data directory.
pub fn load_gold(dir: &Path, lang: &str) -> Result<GoldTransform> {
    let tsv = std::fs::read_to_string(dir.join("gold").join(format!("{lang}.tsv")))?;
    let mut mapping = BTreeMap::new();
    for line in tsv.lines() {
        if line.is_empty() {
            continue;
        }
        let (from, to) = line
            .split_once('\t')
            .ok_or_else(|| Error::Data(format!("gold tsv for `{lang}`: bad line `{line}`")))?;
        mapping.insert(from.to_string(), to.to_string());
    }
    let reorder_cfg = KvConfig::load(&dir.join("gold").join("reorder.cfg"))?;
    let reorder = match reorder_cfg.raw(lang) {
        Some(name) => Some(ReorderRule::parse(name)?),
        None => None,
    };
    Ok(GoldTransform { lang: lang.to_string(), mapping, reorder })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            sentences_per_lang: 50,
            test_sentences: 20,
            base_vocab: 40,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn identity_transform_gives_copy_task() {
        let mut spec = tiny_spec();
        spec.languages = vec!["base".into(), "c1".into()];
        spec.branches = LanguageBranchMap::parse("west:base,c1").unwrap();
        spec.anchor_fraction = 1.0;
        spec.reorder.clear();
        let data = generate_synthetic(&spec).unwrap();
        // Same base test sentences, identity mapping: test sets are equal.
        assert_eq!(data.test[0].1, data.test[1].1);
    }

    #[test]
    fn gold_cipher_maps_test_source_to_reference() {
        let data = generate_synthetic(&tiny_spec()).unwrap();
        // base -> c1 is substitution-only by default.
        let c1 = &data.gold[1];
        assert!(c1.reorder.is_none());
        for (src, reference) in data.test[0].1.iter().zip(&data.test[1].1) {
            let src_words: Vec<String> = src.split(' ').map(|s| s.to_string()).collect();
            let mapped = c1.apply_base(&src_words).join(" ");
            assert_eq!(&mapped, reference);
        }
        // And the inverse recovers the base side.
        for (src, reference) in data.test[1].1.iter().zip(&data.test[0].1) {
            let words: Vec<String> = src.split(' ').map(|s| s.to_string()).collect();
            assert_eq!(c1.invert(&words).join(" "), *reference);
        }
    }

    #[test]
    fn reordered_language_roundtrips_through_gold() {
        let data = generate_synthetic(&tiny_spec()).unwrap();
        let c3 = data.gold.iter().find(|g| g.lang == "c3").unwrap();
        assert_eq!(c3.reorder, Some(ReorderRule::SwapAdjacent));
        for (base_line, c3_line) in data.test[0].1.iter().zip(&data.test[3].1) {
            let words: Vec<String> = c3_line.split(' ').map(|s| s.to_string()).collect();
            assert_eq!(c3.invert(&words).join(" "), *base_line);
        }
    }

    #[test]
    fn corpora_are_independent_but_same_distribution() {
        let data = generate_synthetic(&tiny_spec()).unwrap();
        assert_eq!(data.corpora.len(), 4);
        // Monolingual corpora must not be line-parallel.
        let base: HashSet<&String> = data.corpora[0].1.iter().collect();
        let c1_in_base = data.corpora[1]
            .1
            .iter()
            .map(|l| {
                let words: Vec<String> = l.split(' ').map(|s| s.to_string()).collect();
                data.gold[1].invert(&words).join(" ")
            })
            .filter(|l| base.contains(l))
            .count();
        assert!(c1_in_base < data.corpora[1].1.len() / 2);
    }

    #[test]
    fn scale_shrinks_a_corpus() {
        let mut spec = tiny_spec();
        spec.scale.insert("c2".into(), 0.1);
        let data = generate_synthetic(&spec).unwrap();
        assert_eq!(data.corpora[2].1.len(), 5);
        assert_eq!(data.corpora[1].1.len(), 50);
    }

    #[test]
    fn non_bijective_substitution_is_an_error() {
        let mut mapping = BTreeMap::new();
        mapping.insert("a".to_string(), "x".to_string());
        mapping.insert("b".to_string(), "x".to_string());
        let t = GoldTransform { lang: "bad".into(), mapping, reorder: None };
        assert!(t.validate().is_err());
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic(&tiny_spec()).unwrap();
        let b = generate_synthetic(&tiny_spec()).unwrap();
        assert_eq!(a.corpora[2].1, b.corpora[2].1);
        assert_eq!(a.test[3].1, b.test[3].1);
    }

    #[test]
    fn spec_config_roundtrip() {
        let spec = SyntheticSpec::default();
        let cfg = spec.to_config();
        let spec2 = SyntheticSpec::from_config(&cfg).unwrap();
        assert_eq!(spec2.languages, spec.languages);
        assert_eq!(spec2.base_vocab, spec.base_vocab);
        assert_eq!(spec2.reorder, spec.reorder);
        assert_eq!(spec2.to_config().to_text(), cfg.to_text());
    }
}
