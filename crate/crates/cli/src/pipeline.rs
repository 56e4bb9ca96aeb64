//! Shared plumbing for the subcommands: data-directory loading, profile
//! resolution, and run-directory output.

use anyhow::{bail, Context, Result};
use munmt_core::config::KvConfig;
use munmt_core::data::{load_lines, BpeModel, LanguageBranchMap, Vocabulary};
use munmt_core::model::{Model, TransformerConfig};
use munmt_core::trainer::{Corpus, TrainConfig};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// Laptop-scale sizes; optimizer and loss constants identical to `paper`.
    Desk,
    /// Full-scale sizes: 6 layers, 1024 hidden units, 80k BPE, 2000-token batches.
    Paper,
}

impl Profile {
    pub fn model(&self, vocab_size: usize, n_languages: usize) -> TransformerConfig {
        match self {
            Profile::Desk => TransformerConfig::desk(vocab_size, n_languages),
            Profile::Paper => TransformerConfig::paper(vocab_size, n_languages),
        }
    }

    pub fn batch_tokens(&self) -> usize {
        match self {
            Profile::Desk => 512,
            Profile::Paper => 2000,
        }
    }

    pub fn bpe_vocab_size(&self) -> usize {
        match self {
            Profile::Desk => 200,
            Profile::Paper => 80_000,
        }
    }

    /// Default step budgets preserve the full-scale ratio 60k/30k/15k.
    pub fn steps(&self, kind: RunKind) -> usize {
        match (self, kind) {
            (Profile::Desk, RunKind::Lm) => 1000,
            (Profile::Desk, RunKind::Sm) => 4000,
            (Profile::Desk, RunKind::Lbunmt) => 2000,
            (Profile::Desk, RunKind::Munmt) => 1000,
            (Profile::Desk, RunKind::Finetune) => 1000,
            (Profile::Paper, RunKind::Lm) => 60_000,
            (Profile::Paper, RunKind::Sm) => 60_000,
            (Profile::Paper, RunKind::Lbunmt) => 30_000,
            (Profile::Paper, RunKind::Munmt) => 15_000,
            (Profile::Paper, RunKind::Finetune) => 15_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunKind {
    Lm,
    Sm,
    Lbunmt,
    Munmt,
    Finetune,
}

/// A prepared data directory: vocabulary, merges, corpora and test sets.
pub struct DataDir {
    pub root: PathBuf,
    pub languages: Vec<String>,
    pub branches: LanguageBranchMap,
    pub vocab: Vocabulary,
    pub bpe: BpeModel,
}

impl DataDir {
    pub fn open(root: &Path) -> Result<DataDir> {
        let synth = KvConfig::load(&root.join("synthetic.cfg"))
            .with_context(|| format!("{} is not a generated data directory", root.display()))?;
        let languages = synth
            .get_list("languages")
            .context("synthetic.cfg lacks `languages`")?;
        let branches = LanguageBranchMap::parse(
            synth.raw("branches").context("synthetic.cfg lacks `branches`")?,
        )?;
        let prepare = KvConfig::load(&root.join("prepare.cfg"))
            .context("data directory not prepared; run `munmt prepare-data` first")?;
        let vocab_size: usize = prepare.get_or("vocab_size", 0usize)?;
        let vocab = Vocabulary::load(&root.join("vocab.txt"), &languages)?;
        let merges = std::fs::read_to_string(root.join("merges.txt"))?;
        let bpe = BpeModel::parse(&merges, vocab_size)?;
        Ok(DataDir { root: root.to_path_buf(), languages, branches, vocab, bpe })
    }

    /// Encode the cleaned corpus of every requested language.
    pub fn corpora(&self, languages: &[String], max_words: usize) -> Result<Vec<Corpus>> {
        let mut out = Vec::with_capacity(languages.len());
        for lang in languages {
            let path = self.root.join("corpora").join(format!("{lang}.txt"));
            let raw = std::fs::read(&path)
                .with_context(|| format!("no corpus for language `{lang}` at {}", path.display()))?;
            let (lines, _) = munmt_core::data::clean_corpus(raw.split(|&b| b == b'\n'), max_words);
            let ids = lines
                .iter()
                .map(|l| self.bpe.encode_sentence(l, &self.vocab))
                .collect();
            out.push((lang.clone(), ids));
        }
        Ok(out)
    }

    pub fn test_lines(&self, lang: &str) -> Result<Vec<String>> {
        let path = self.root.join("test").join(format!("test.{lang}"));
        load_lines(&path)
            .with_context(|| format!("no test set for language `{lang}` at {}", path.display()))
    }

    pub fn pivot(&self) -> &str {
        &self.languages[0]
    }
}

/// Build a training configuration: profile defaults, then the config file,
/// then explicit flags (handled by the caller mutating the result).
pub fn base_train_config(
    data: &DataDir,
    languages: Vec<String>,
    profile: Profile,
    kind: RunKind,
    config_file: Option<&Path>,
) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(
        languages,
        data.branches.clone(),
        profile.model(data.vocab.size(), data.vocab.n_languages()),
    );
    cfg.batch_tokens = profile.batch_tokens();
    cfg.steps = profile.steps(kind);
    if let Some(path) = config_file {
        let file = KvConfig::load(path)?;
        let mut merged = cfg.to_config();
        for (k, v) in file.iter() {
            merged.set(k, v);
        }
        cfg = TrainConfig::from_config(&merged)?;
    }
    Ok(cfg)
}

/// Write the resolved configuration (including the seed) next to a run's
/// outputs so the experiment is reproducible from that file alone.
pub fn write_resolved(run_dir: &Path, cfg: &TrainConfig, extra: &[(&str, String)]) -> Result<()> {
    std::fs::create_dir_all(run_dir)?;
    let mut kv = cfg.to_config();
    for (k, v) in extra {
        kv.set(k, v);
    }
    kv.save(&run_dir.join("config.resolved"))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(Model, KvConfig)> {
    let model_path = if path.is_dir() { path.join("model.mukd") } else { path.to_path_buf() };
    Ok(Model::load(&model_path).with_context(|| format!("loading {}", model_path.display()))?)
}

/// Load branch teachers from run directories; the branch each teacher
/// serves comes from its resolved config's language list.
pub fn load_teachers(
    data: &DataDir,
    run_dirs: &[String],
) -> Result<BTreeMap<String, Model>> {
    let mut teachers = BTreeMap::new();
    for dir in run_dirs {
        let dir = PathBuf::from(dir);
        let (model, _) = load_model(&dir)?;
        let resolved = KvConfig::load(&dir.join("config.resolved"))
            .with_context(|| format!("teacher run {} lacks config.resolved", dir.display()))?;
        let langs = resolved
            .get_list("languages")
            .context("teacher config lacks `languages`")?;
        let non_pivot = langs
            .iter()
            .find(|l| *l != &langs[0])
            .context("teacher run trained on fewer than two languages")?;
        let branch = data.branches.branch_of(non_pivot)?.to_string();
        if teachers.insert(branch.clone(), model).is_some() {
            bail!("two teachers given for branch `{branch}`");
        }
    }
    Ok(teachers)
}

/// Parse `a,b` or `a-b` into a language pair.
pub fn parse_pair(s: &str) -> Result<(String, String)> {
    let parts: Vec<&str> = s.split([',', '-']).map(|x| x.trim()).collect();
    if parts.len() != 2 || parts[0].is_empty() || parts[1].is_empty() {
        bail!("expected a language pair like `base,c1`, got `{s}`");
    }
    Ok((parts[0].to_string(), parts[1].to_string()))
}
