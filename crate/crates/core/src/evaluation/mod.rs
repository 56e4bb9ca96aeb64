//! BLEU scoring and per-direction evaluation, including the zero-shot
//! matrix between non-pivot languages and cross-run comparison tables.

mod bleu;
mod report;

pub use bleu::{bleu, BleuReport, MAX_NGRAM};
pub use report::{
    compare_runs, read_reports, write_reports, Comparison, ReportRow, RunColumn, REPORT_HEADER,
};

use crate::data::{BpeModel, LangId, Vocabulary};
use crate::decoding::{translate_batch, DecodeConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use std::collections::BTreeMap;

/// Translate every source line and score against the references.
/// Lines are raw text; encoding and decoding go through the shared BPE.
pub fn evaluate_direction(
    model: &Model,
    bpe: &BpeModel,
    vocab: &Vocabulary,
    src_lines: &[String],
    ref_lines: &[String],
    src_lang: LangId,
    tgt_lang: LangId,
    cfg: &DecodeConfig,
) -> Result<BleuReport> {
    if src_lines.is_empty() || src_lines.len() != ref_lines.len() {
        return Err(Error::Eval(format!(
            "test set for {}->{} has {} source lines vs {} references",
            vocab.lang_code(src_lang),
            vocab.lang_code(tgt_lang),
            src_lines.len(),
            ref_lines.len()
        )));
    }
    let mut hyps = Vec::with_capacity(src_lines.len());
    // Batch translation in chunks to bound memory.
    const CHUNK: usize = 64;
    for chunk in src_lines.chunks(CHUNK) {
        let rows: Vec<Vec<u32>> =
            chunk.iter().map(|line| bpe.encode_sentence(line, vocab)).collect();
        let batch = crate::data::Batch::from_rows(rows, vec![src_lang; chunk.len()])?;
        for ids in translate_batch(model, &batch, tgt_lang, cfg)? {
            hyps.push(bpe.decode_ids(&ids, vocab));
        }
    }
    bleu(&hyps, ref_lines)
}

/// Zero-shot matrix between non-pivot languages: all ordered pairs,
/// diagonal undefined, absent test sets marked missing rather than zero.
pub fn zero_shot_matrix(
    model: &Model,
    bpe: &BpeModel,
    vocab: &Vocabulary,
    test_sets: &BTreeMap<String, Vec<String>>,
    non_pivot: &[String],
    cfg: &DecodeConfig,
) -> Result<ZeroShotMatrix> {
    let mut cells = Vec::new();
    for src in non_pivot {
        for tgt in non_pivot {
            if src == tgt {
                continue;
            }
            let report = match (test_sets.get(src), test_sets.get(tgt)) {
                (Some(s), Some(r)) => Some(evaluate_direction(
                    model,
                    bpe,
                    vocab,
                    s,
                    r,
                    vocab.lang_id(src)?,
                    vocab.lang_id(tgt)?,
                    cfg,
                )?),
                _ => None,
            };
            cells.push(ZeroShotCell { src: src.clone(), tgt: tgt.clone(), report });
        }
    }
    Ok(ZeroShotMatrix { cells })
}

#[derive(Debug)]
pub struct ZeroShotCell {
    pub src: String,
    pub tgt: String,
    /// None when no parallel test set exists for the pair.
    pub report: Option<BleuReport>,
}

#[derive(Debug)]
pub struct ZeroShotMatrix {
    pub cells: Vec<ZeroShotCell>,
}

impl ZeroShotMatrix {
    /// Unweighted mean BLEU over present cells.
    pub fn mean_bleu(&self) -> Option<f64> {
        let scores: Vec<f64> =
            self.cells.iter().filter_map(|c| c.report.as_ref().map(|r| r.score)).collect();
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.cells
            .iter()
            .filter_map(|c| c.report.as_ref().map(|r| ReportRow::new(&c.src, &c.tgt, r, "zero-shot")))
            .collect()
    }
}
