//! `munmt` — multilingual unsupervised translation experiments end to end:
//! synthetic data generation, shared-BPE preparation, masked-LM pretraining,
//! bilingual/branch/multilingual training with optional distillation,
//! fine-tuning, translation, BLEU evaluation and run comparison.

mod commands;
mod pipeline;

use clap::{Parser, Subcommand};
use pipeline::Profile;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "munmt", version, about = "Unsupervised multilingual NMT at desk scale")]
pub(crate) struct Cli {
    /// Scale profile; `paper` sets the full-scale sizes and constants.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    pub(crate) profile: Profile,
    /// Run seed; overrides the config file.
    #[arg(long, global = true)]
    pub(crate) seed: Option<u64>,
    /// Key=value config file; flags override its entries.
    #[arg(long, global = true)]
    pub(crate) config: Option<PathBuf>,
    #[command(subcommand)]
    pub(crate) command: Command,
}

#[derive(Subcommand)]
pub(crate) enum Command {
    /// Generate synthetic cipher-language corpora with gold transforms.
    GenSynthetic {
        /// Synthetic spec file; defaults to the built-in 4-language spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Clean corpora and learn the shared BPE vocabulary.
    PrepareData {
        #[arg(long)]
        data: PathBuf,
        /// Total subword vocabulary size (specials included).
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Drop corpus lines with more words than this.
        #[arg(long, default_value_t = 50)]
        max_words: usize,
    },
    /// Pretrain the multilingual masked language model.
    TrainLm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch_tokens: Option<usize>,
    },
    /// Train the bilingual baseline on one language pair.
    TrainSm {
        #[arg(long)]
        data: PathBuf,
        /// Pretrained language model run directory or checkpoint.
        #[arg(long)]
        init: PathBuf,
        /// Language pair, pivot first: `base,c1`.
        #[arg(long)]
        pair: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch_tokens: Option<usize>,
    },
    /// Train a branch teacher over one language branch (plus the pivot).
    TrainLbunmt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: PathBuf,
        /// Branch name from the data directory's branch map.
        #[arg(long)]
        branch: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch_tokens: Option<usize>,
    },
    /// Train the multilingual model over all languages.
    TrainMunmt {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        init: PathBuf,
        /// Distillation mode: none, skd, or lbkd.
        #[arg(long, default_value = "none")]
        kd: String,
        /// Teacher run directories (required for lbkd), comma separated.
        #[arg(long, value_delimiter = ',')]
        teachers: Vec<String>,
        /// Languages to train on; defaults to all languages in the data.
        #[arg(long, value_delimiter = ',')]
        languages: Vec<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch_tokens: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        temperature: Option<f32>,
        /// Checkpoint cadence in steps (0 = final only).
        #[arg(long)]
        checkpoint_every: Option<usize>,
    },
    /// Continue training an existing model on one language pair.
    Finetune {
        #[arg(long)]
        data: PathBuf,
        /// Model checkpoint or run directory to start from.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        pair: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f32>,
        #[arg(long)]
        batch_tokens: Option<usize>,
    },
    /// Translate lines from stdin or a file.
    Translate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        src_lang: String,
        #[arg(long)]
        tgt_lang: String,
        /// Input file; stdin when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Beam size; 1 is greedy.
        #[arg(long, default_value_t = 1)]
        beam: usize,
    },
    /// Evaluate one direction on the held-out test set and record BLEU.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// Direction `src,tgt` (or `src-tgt`).
        #[arg(long)]
        pair: String,
        /// Run directory for the report store; defaults to the model's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        beam: usize,
    },
    /// Evaluate the full zero-shot matrix between non-pivot languages.
    ZeroShot {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate BLEU across runs (reads each run's reports.csv).
    Compare {
        /// Run directories.
        runs: Vec<PathBuf>,
        /// Write the comparison CSV here as well.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
