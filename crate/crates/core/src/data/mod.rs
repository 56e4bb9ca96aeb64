//! Corpus preparation: cleaning, subword vocabulary, batching, noising,
//! and the synthetic cipher-language generator used by the test pipeline.

mod batch;
mod bpe;
mod branch;
mod clean;
mod noise;
mod synthetic;
mod tokenize;
mod vocab;

pub use batch::{make_batches, Batch, BatchStats};
pub use bpe::{learn_bpe, BpeModel};
pub use branch::LanguageBranchMap;
pub use clean::{clean_corpus, CleanStats};
pub use noise::{add_noise, mask_for_mlm, MaskedPosition, NoiseConfig};
pub use synthetic::{
    generate_synthetic, load_gold, load_lines, GoldTransform, ReorderRule, SyntheticData,
    SyntheticSpec,
};
pub use tokenize::pretokenize;
pub use vocab::{Vocabulary, BOS_ID, EOS_ID, MASK_ID, PAD_ID, UNK_ID};

/// Integer id of a language within a run.
pub type LangId = u32;
/// Subword token id.
pub type TokenId = u32;
