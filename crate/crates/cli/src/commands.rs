//! Subcommand implementations.

use crate::pipeline::{
    base_train_config, load_model, load_teachers, parse_pair, write_resolved, DataDir, RunKind,
};
use crate::{Cli, Command};
use anyhow::{bail, Context, Result};
use munmt_core::config::KvConfig;
use munmt_core::data::{clean_corpus, generate_synthetic, learn_bpe, SyntheticSpec};
use munmt_core::decoding::{translate, DecodeConfig, Strategy};
use munmt_core::evaluation::{
    compare_runs, evaluate_direction, read_reports, write_reports, zero_shot_matrix, ReportRow,
    RunColumn,
};
use munmt_core::model::Model;
use munmt_core::objectives::KdMode;
use munmt_core::trainer::{
    finetune_pair, pretrain_mlm, train_lbunmt, train_munmt, train_unmt_pair, RunManifest,
    TrainConfig,
};
use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};

pub(crate) fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynthetic { ref spec, ref out } => {
            gen_synthetic(&cli, spec.as_deref(), out)
        }
        Command::PrepareData { ref data, vocab_size, max_words } => {
            prepare_data(&cli, data, vocab_size, max_words)
        }
        Command::TrainLm { ref data, ref out, steps, lr, batch_tokens } => {
            train_lm_cmd(&cli, data, out, steps, lr, batch_tokens)
        }
        Command::TrainSm { ref data, ref init, ref pair, ref out, steps, lr, batch_tokens } => {
            train_sm_cmd(&cli, data, init, pair, out, steps, lr, batch_tokens)
        }
        Command::TrainLbunmt {
            ref data,
            ref init,
            ref branch,
            ref out,
            steps,
            lr,
            batch_tokens,
        } => train_lbunmt_cmd(&cli, data, init, branch, out, steps, lr, batch_tokens),
        Command::TrainMunmt {
            ref data,
            ref init,
            ref kd,
            ref teachers,
            ref languages,
            ref out,
            steps,
            lr,
            batch_tokens,
            alpha,
            temperature,
            checkpoint_every,
        } => train_munmt_cmd(
            &cli,
            data,
            init,
            kd,
            teachers,
            languages,
            out,
            steps,
            lr,
            batch_tokens,
            alpha,
            temperature,
            checkpoint_every,
        ),
        Command::Finetune { ref data, ref model, ref pair, ref out, steps, lr, batch_tokens } => {
            finetune_cmd(&cli, data, model, pair, out, steps, lr, batch_tokens)
        }
        Command::Translate { ref data, ref model, ref src_lang, ref tgt_lang, ref input, beam } => {
            translate_cmd(data, model, src_lang, tgt_lang, input.as_deref(), beam)
        }
        Command::Evaluate { ref data, ref model, ref pair, ref out, beam } => {
            evaluate_cmd(data, model, pair, out.as_deref(), beam)
        }
        Command::ZeroShot { ref data, ref model, ref out } => {
            zero_shot_cmd(data, model, out.as_deref())
        }
        Command::Compare { ref runs, ref out } => compare_cmd(runs, out.as_deref()),
    }
}

fn gen_synthetic(cli: &Cli, spec_path: Option<&Path>, out: &Path) -> Result<()> {
    let mut spec = match spec_path {
        Some(p) => SyntheticSpec::from_config(&KvConfig::load(p)?)?,
        None => SyntheticSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let data = generate_synthetic(&spec)?;
    data.write_to_dir(out)?;
    let total: usize = data.corpora.iter().map(|(_, l)| l.len()).sum();
    println!(
        "generated {} languages, {total} sentences, {} test lines each -> {}",
        spec.languages.len(),
        spec.test_sentences,
        out.display()
    );
    Ok(())
}

fn prepare_data(cli: &Cli, data_dir: &Path, vocab_size: Option<usize>, max_words: usize) -> Result<()> {
    let synth = KvConfig::load(&data_dir.join("synthetic.cfg"))
        .with_context(|| format!("{} is not a generated data directory", data_dir.display()))?;
    let languages = synth.get_list("languages").context("synthetic.cfg lacks `languages`")?;
    let vocab_size = vocab_size.unwrap_or_else(|| cli.profile.bpe_vocab_size());

    let mut cleaned = Vec::with_capacity(languages.len());
    let mut dropped = 0usize;
    for lang in &languages {
        let raw = std::fs::read(data_dir.join("corpora").join(format!("{lang}.txt")))
            .with_context(|| format!("no corpus for `{lang}`"))?;
        let (lines, stats) = clean_corpus(raw.split(|&b| b == b'\n'), max_words);
        dropped += stats.dropped_long + stats.dropped_invalid_utf8;
        cleaned.push(lines);
    }
    let (bpe, vocab) = learn_bpe(&cleaned, vocab_size, &languages)?;
    vocab.save(&data_dir.join("vocab.txt"))?;
    std::fs::write(data_dir.join("merges.txt"), bpe.to_text())?;
    let mut prep = KvConfig::new();
    prep.set("vocab_size", vocab_size);
    prep.set("max_words", max_words);
    prep.set("languages", languages.join(","));
    prep.save(&data_dir.join("prepare.cfg"))?;
    println!(
        "vocabulary: {} tokens, {} merges, {dropped} lines dropped",
        vocab.size(),
        bpe.merges.len()
    );
    Ok(())
}

struct TrainFlags {
    steps: Option<usize>,
    lr: Option<f32>,
    batch_tokens: Option<usize>,
}

fn resolve_cfg(
    cli: &Cli,
    data: &DataDir,
    languages: Vec<String>,
    kind: RunKind,
    flags: &TrainFlags,
) -> Result<TrainConfig> {
    let mut cfg = base_train_config(data, languages, cli.profile, kind, cli.config.as_deref())?;
    if let Some(s) = flags.steps {
        cfg.steps = s;
    }
    if let Some(lr) = flags.lr {
        cfg.adam.lr = lr;
    }
    if let Some(bt) = flags.batch_tokens {
        cfg.batch_tokens = bt;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn finish_run(
    run_dir: &Path,
    cfg: &TrainConfig,
    model: &Model,
    manifest: &RunManifest,
    kind_name: &str,
) -> Result<()> {
    write_resolved(run_dir, cfg, &[("run_kind", kind_name.to_string())])?;
    model.save(&run_dir.join("model.mukd"), &cfg.to_config())?;
    manifest.save(&run_dir.join("manifest.tsv"))?;
    let last = manifest.records.last();
    println!(
        "{kind_name}: {} steps, {} records, final loss {} -> {}",
        manifest.final_step,
        manifest.records.len(),
        last.map(|r| format!("{:.4}", r.value)).unwrap_or_else(|| "-".into()),
        run_dir.display()
    );
    Ok(())
}

fn train_lm_cmd(
    cli: &Cli,
    data_dir: &Path,
    out: &Path,
    steps: Option<usize>,
    lr: Option<f32>,
    batch_tokens: Option<usize>,
) -> Result<()> {
    let data = DataDir::open(data_dir)?;
    let cfg = resolve_cfg(
        cli,
        &data,
        data.languages.clone(),
        RunKind::Lm,
        &TrainFlags { steps, lr, batch_tokens },
    )?;
    let corpora = data.corpora(&cfg.languages, 50)?;
    let (model, manifest) = pretrain_mlm(&corpora, &data.vocab, &cfg)?;
    finish_run(out, &cfg, &model, &manifest, "train-lm")
}

#[allow(clippy::too_many_arguments)]
fn train_sm_cmd(
    cli: &Cli,
    data_dir: &Path,
    init: &Path,
    pair: &str,
    out: &Path,
    steps: Option<usize>,
    lr: Option<f32>,
    batch_tokens: Option<usize>,
) -> Result<()> {
    let data = DataDir::open(data_dir)?;
    let (a, b) = parse_pair(pair)?;
    let cfg = resolve_cfg(
        cli,
        &data,
        vec![a, b],
        RunKind::Sm,
        &TrainFlags { steps, lr, batch_tokens },
    )?;
    let corpora = data.corpora(&cfg.languages, 50)?;
    let (lm, _) = load_model(init)?;
    let (model, manifest) = train_unmt_pair(&corpora, &data.vocab, &lm, &cfg)?;
    finish_run(out, &cfg, &model, &manifest, "train-sm")
}

#[allow(clippy::too_many_arguments)]
fn train_lbunmt_cmd(
    cli: &Cli,
    data_dir: &Path,
    init: &Path,
    branch: &str,
    out: &Path,
    steps: Option<usize>,
    lr: Option<f32>,
    batch_tokens: Option<usize>,
) -> Result<()> {
    let data = DataDir::open(data_dir)?;
    let pivot = data.pivot().to_string();
    let mut languages = vec![pivot.clone()];
    let members = data.branches.languages_in_branch(branch);
    if members.is_empty() {
        bail!("branch `{branch}` has no languages in this data directory");
    }
    // Keep data-directory language order; the pivot is never duplicated.
    for l in &data.languages {
        if members.contains(l) && *l != pivot {
            languages.push(l.clone());
        }
    }
    if languages.len() < 2 {
        bail!("branch `{branch}` contains only the pivot language");
    }
    let cfg = resolve_cfg(cli, &data, languages, RunKind::Lbunmt, &TrainFlags {
        steps,
        lr,
        batch_tokens,
    })?;
    let corpora = data.corpora(&cfg.languages, 50)?;
    let (lm, _) = load_model(init)?;
    let (model, manifest) = train_lbunmt(&corpora, &data.vocab, &lm, &cfg)?;
    finish_run(out, &cfg, &model, &manifest, "train-lbunmt")
}

#[allow(clippy::too_many_arguments)]
fn train_munmt_cmd(
    cli: &Cli,
    data_dir: &Path,
    init: &Path,
    kd: &str,
    teacher_dirs: &[String],
    languages: &[String],
    out: &Path,
    steps: Option<usize>,
    lr: Option<f32>,
    batch_tokens: Option<usize>,
    alpha: Option<f64>,
    temperature: Option<f32>,
    checkpoint_every: Option<usize>,
) -> Result<()> {
    let data = DataDir::open(data_dir)?;
    let langs =
        if languages.is_empty() { data.languages.clone() } else { languages.to_vec() };
    let mut cfg = resolve_cfg(cli, &data, langs, RunKind::Munmt, &TrainFlags {
        steps,
        lr,
        batch_tokens,
    })?;
    cfg.kd.mode = KdMode::parse(kd)?;
    if let Some(a) = alpha {
        cfg.kd.alpha = a;
    }
    if let Some(t) = temperature {
        cfg.kd.temperature = t;
    }
    if let Some(c) = checkpoint_every {
        cfg.checkpoint_every = c;
    }
    let corpora = data.corpora(&cfg.languages, 50)?;
    let (lm, _) = load_model(init)?;
    let teachers = if cfg.kd.mode == KdMode::Lbkd {
        if teacher_dirs.is_empty() {
            bail!("--kd lbkd needs --teachers");
        }
        Some(load_teachers(&data, teacher_dirs)?)
    } else {
        None
    };
    let (model, manifest) = train_munmt(&corpora, &data.vocab, &lm, &cfg, teachers)?;
    finish_run(out, &cfg, &model, &manifest, "train-munmt")
}

#[allow(clippy::too_many_arguments)]
fn finetune_cmd(
    cli: &Cli,
    data_dir: &Path,
    model_path: &Path,
    pair: &str,
    out: &Path,
    steps: Option<usize>,
    lr: Option<f32>,
    batch_tokens: Option<usize>,
) -> Result<()> {
    let data = DataDir::open(data_dir)?;
    let (a, b) = parse_pair(pair)?;
    let cfg = resolve_cfg(
        cli,
        &data,
        vec![a, b],
        RunKind::Finetune,
        &TrainFlags { steps, lr, batch_tokens },
    )?;
    let corpora = data.corpora(&cfg.languages, 50)?;
    let (model, _) = load_model(model_path)?;
    let (model, manifest) = finetune_pair(model, &corpora, &data.vocab, &cfg)?;
    finish_run(out, &cfg, &model, &manifest, "finetune")
}

fn decode_cfg(beam: usize) -> DecodeConfig {
    DecodeConfig {
        strategy: if beam <= 1 { Strategy::Greedy } else { Strategy::Beam },
        beam_size: beam.max(1),
        ..DecodeConfig::default()
    }
}

fn translate_cmd(
    data_dir: &Path,
    model_path: &Path,
    src_lang: &str,
    tgt_lang: &str,
    input: Option<&Path>,
    beam: usize,
) -> Result<()> {
    let data = DataDir::open(data_dir)?;
    let (model, _) = load_model(model_path)?;
    let src = data.vocab.lang_id(src_lang)?;
    let tgt = data.vocab.lang_id(tgt_lang)?;
    let text = match input {
        Some(p) => std::fs::read_to_string(p)?,
        None => {
            let mut buf = String::new();
            std::io::stdin().read_to_string(&mut buf)?;
            buf
        }
    };
    let cfg = decode_cfg(beam);
    for line in text.lines() {
        if line.trim().is_empty() {
            println!();
            continue;
        }
        let ids = data.bpe.encode_sentence(line, &data.vocab);
        let out = translate(&model, &ids, src, tgt, &cfg)?;
        println!("{}", data.bpe.decode_ids(&out, &data.vocab));
    }
    Ok(())
}

fn append_reports(run_dir: &Path, new_rows: Vec<ReportRow>) -> Result<PathBuf> {
    std::fs::create_dir_all(run_dir)?;
    let path = run_dir.join("reports.csv");
    let mut rows = if path.exists() { read_reports(&path)? } else { Vec::new() };
    // Replace rows for directions being re-evaluated.
    rows.retain(|r| {
        !new_rows.iter().any(|n| n.src == r.src && n.tgt == r.tgt && n.kind == r.kind)
    });
    rows.extend(new_rows);
    write_reports(&path, &rows)?;
    Ok(path)
}

fn evaluate_cmd(
    data_dir: &Path,
    model_path: &Path,
    pair: &str,
    out: Option<&Path>,
    beam: usize,
) -> Result<()> {
    let data = DataDir::open(data_dir)?;
    let (model, _) = load_model(model_path)?;
    let (src, tgt) = parse_pair(pair)?;
    let src_lines = data
        .test_lines(&src)
        .with_context(|| format!("evaluating pair {src}-{tgt}"))?;
    let ref_lines = data
        .test_lines(&tgt)
        .with_context(|| format!("evaluating pair {src}-{tgt}"))?;
    let report = evaluate_direction(
        &model,
        &data.bpe,
        &data.vocab,
        &src_lines,
        &ref_lines,
        data.vocab.lang_id(&src)?,
        data.vocab.lang_id(&tgt)?,
        &decode_cfg(beam),
    )?;
    println!(
        "{src}-{tgt}: BLEU {:.2} (p1 {:.3} p2 {:.3} p3 {:.3} p4 {:.3} bp {:.3})",
        report.score,
        report.precisions[0],
        report.precisions[1],
        report.precisions[2],
        report.precisions[3],
        report.brevity_penalty
    );
    let run_dir = out
        .map(Path::to_path_buf)
        .or_else(|| model_run_dir(model_path))
        .context("give --out to store the report")?;
    let kind = if src == data.pivot() || tgt == data.pivot() { "trained" } else { "zero-shot" };
    let path = append_reports(&run_dir, vec![ReportRow::new(&src, &tgt, &report, kind)])?;
    println!("recorded in {}", path.display());
    Ok(())
}

fn model_run_dir(model_path: &Path) -> Option<PathBuf> {
    if model_path.is_dir() {
        Some(model_path.to_path_buf())
    } else {
        model_path.parent().map(Path::to_path_buf)
    }
}

fn zero_shot_cmd(data_dir: &Path, model_path: &Path, out: Option<&Path>) -> Result<()> {
    let data = DataDir::open(data_dir)?;
    let (model, _) = load_model(model_path)?;
    let non_pivot: Vec<String> =
        data.languages.iter().skip(1).cloned().collect();
    let mut test_sets = BTreeMap::new();
    for lang in &non_pivot {
        if let Ok(lines) = data.test_lines(lang) {
            test_sets.insert(lang.clone(), lines);
        }
    }
    let matrix = zero_shot_matrix(
        &model,
        &data.bpe,
        &data.vocab,
        &test_sets,
        &non_pivot,
        &DecodeConfig::default(),
    )?;
    for cell in &matrix.cells {
        match &cell.report {
            Some(r) => println!("{} -> {}: {:.2}", cell.src, cell.tgt, r.score),
            None => println!("{} -> {}: (no test pair)", cell.src, cell.tgt),
        }
    }
    if let Some(mean) = matrix.mean_bleu() {
        println!("zero-shot mean: {mean:.2}");
    }
    let run_dir = out
        .map(Path::to_path_buf)
        .or_else(|| model_run_dir(model_path))
        .context("give --out to store the report")?;
    let path = append_reports(&run_dir, matrix.rows())?;
    println!("recorded in {}", path.display());
    Ok(())
}

fn compare_cmd(runs: &[PathBuf], out: Option<&Path>) -> Result<()> {
    if runs.is_empty() {
        bail!("give at least one run directory");
    }
    let mut columns = Vec::new();
    for dir in runs {
        let rows = read_reports(&dir.join("reports.csv"))
            .with_context(|| format!("run {} has no reports.csv", dir.display()))?;
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        columns.push(RunColumn { name, rows });
    }
    let cmp = compare_runs(&columns)?;
    print!("{}", cmp.to_text());
    if let Some(path) = out {
        std::fs::write(path, cmp.to_csv())?;
        println!("comparison CSV written to {}", path.display());
    }
    Ok(())
}
