//! Training loss functions: masked-LM, denoising reconstruction,
//! back-translation, and the two distillation regularizers.
//!
//! Distillation terms compare temperature-softened next-token distributions
//! over the same teacher-forced reference target, computed from two
//! different sources. The gradient-carrying side is always the first KL
//! argument; the comparison side runs on a no-grad tape and acts as a
//! frozen target.

use crate::data::{add_noise, Batch, LangId, MaskedPosition, NoiseConfig, TokenId};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::DetRng;
use crate::tensor::{ops, GradTape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KdMode {
    None,
    Skd,
    Lbkd,
}

impl KdMode {
    pub fn parse(s: &str) -> Result<KdMode> {
        match s {
            "none" => Ok(KdMode::None),
            "skd" => Ok(KdMode::Skd),
            "lbkd" => Ok(KdMode::Lbkd),
            other => Err(Error::Config(format!("unknown kd mode `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KdMode::None => "none",
            KdMode::Skd => "skd",
            KdMode::Lbkd => "lbkd",
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KdConfig {
    /// Weight of the distillation term within the back-translation update.
    pub alpha: f64,
    /// Softmax temperature for both softened distributions.
    pub temperature: f32,
    pub mode: KdMode,
}

impl Default for KdConfig {
    fn default() -> Self {
        KdConfig { alpha: 0.1, temperature: 2.0, mode: KdMode::None }
    }
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Param(format!("alpha must be in [0, 1), got {}", self.alpha)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Param(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Effective weight of the distillation loss: alpha * T^2.
    pub fn kd_weight(&self) -> f64 {
        self.alpha * (self.temperature as f64) * (self.temperature as f64)
    }
}

/// A back-translation training pair: model-generated source, genuine target.
#[derive(Clone, Debug)]
pub struct PseudoPair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
    pub source_lang: LangId,
    pub target_lang: LangId,
}

impl PseudoPair {
    pub fn source_is_empty(&self) -> bool {
        self.source.len() <= 2
    }
}

/// A scalar loss with its value captured for run records.
pub struct LossOut {
    pub loss: Tensor,
    pub value: f64,
}

/// Denoising auto-encoder loss: corrupt every sentence with `noise`, encode
/// the corrupted version, and teacher-force reconstruction of the original.
/// All sentences must share one language; both encoder and decoder see that
/// language's embedding.
pub fn denoising_loss(
    tape: &GradTape,
    model: &Model,
    batch: &Batch,
    noise: &NoiseConfig,
    rng: &mut DetRng,
) -> Result<LossOut> {
    let lang = batch.langs[0];
    if batch.langs.iter().any(|&l| l != lang) {
        return Err(Error::Train("denoising batch must be single-language".into()));
    }
    let noisy_rows: Vec<Vec<TokenId>> =
        (0..batch.b).map(|i| add_noise(batch.row(i), noise, rng)).collect();
    let noisy = Batch::from_rows(noisy_rows, batch.langs.clone())?;
    let enc = model.encode(tape, &noisy)?;
    let out = model.decode_teacher_forced(tape, &enc, batch)?;
    let ce = ops::cross_entropy(tape, &out.logits, &out.targets, &out.target_mask)?;
    Ok(LossOut { loss: ce.loss, value: ce.loss_f64 })
}

/// Masked-LM loss over an already-masked batch. An empty target list
/// contributes zero loss.
pub fn mlm_loss(
    tape: &GradTape,
    model: &Model,
    masked: &Batch,
    targets: &[(usize, Vec<MaskedPosition>)],
) -> Result<LossOut> {
    let mut flat_positions = Vec::new();
    let mut flat_targets = Vec::new();
    for (row, positions) in targets {
        for mp in positions {
            flat_positions.push((row * masked.l + mp.pos) as u32);
            flat_targets.push(mp.original);
        }
    }
    if flat_positions.is_empty() {
        return Ok(LossOut { loss: Tensor::scalar(0.0), value: 0.0 });
    }
    let logits = model.mlm_forward(tape, masked, &flat_positions)?;
    let mask = vec![true; flat_targets.len()];
    let ce = ops::cross_entropy(tape, &logits, &flat_targets, &mask)?;
    Ok(LossOut { loss: ce.loss, value: ce.loss_f64 })
}

/// The gradient-carrying back-translation forward pass, kept around so the
/// distillation losses can reuse its logits and batches.
pub struct BtForward {
    pub loss: Tensor,
    pub value: f64,
    /// [b * l_dec, vocab] logits from the teacher-forced pass.
    pub logits: Tensor,
    pub source_batch: Batch,
    pub target_batch: Batch,
    pub target_mask: Vec<bool>,
    /// Pairs dropped because the model generated an empty source.
    pub skipped: usize,
}

/// Teacher-forced cross-entropy of each genuine target given its generated
/// source. Gradients flow through this forward pass only; generation
/// happened elsewhere without a tape. Returns `None` when every pair was
/// skipped for an empty source.
pub fn backtranslation_loss(
    tape: &GradTape,
    model: &Model,
    pairs: &[PseudoPair],
) -> Result<Option<BtForward>> {
    let usable: Vec<&PseudoPair> = pairs.iter().filter(|p| !p.source_is_empty()).collect();
    let skipped = pairs.len() - usable.len();
    if usable.is_empty() {
        return Ok(None);
    }
    let source_batch = Batch::from_rows(
        usable.iter().map(|p| p.source.clone()).collect(),
        usable.iter().map(|p| p.source_lang).collect(),
    )?;
    let target_batch = Batch::from_rows(
        usable.iter().map(|p| p.target.clone()).collect(),
        usable.iter().map(|p| p.target_lang).collect(),
    )?;
    let enc = model.encode(tape, &source_batch)?;
    let out = model.decode_teacher_forced(tape, &enc, &target_batch)?;
    let ce = ops::cross_entropy(tape, &out.logits, &out.targets, &out.target_mask)?;
    Ok(Some(BtForward {
        loss: ce.loss,
        value: ce.loss_f64,
        logits: out.logits,
        source_batch,
        target_batch,
        target_mask: out.target_mask,
        skipped,
    }))
}

/// Weighted sum of the back-translation and distillation losses:
/// (1 - alpha) * l_mb + alpha * T^2 * l_kd.
pub fn combine_kd(tape: &GradTape, l_mb: &Tensor, l_kd: &Tensor, cfg: &KdConfig) -> Result<Tensor> {
    cfg.validate()?;
    let w_mb = (1.0 - cfg.alpha) as f32;
    let w_kd = cfg.kd_weight() as f32;
    let a = ops::mul_scalar(tape, l_mb, w_mb);
    let b = ops::mul_scalar(tape, l_kd, w_kd);
    ops::add(tape, &a, &b)
}

/// The same combination in plain double precision, for records and tests.
pub fn combine_kd_value(l_mb: f64, l_kd: f64, cfg: &KdConfig) -> f64 {
    (1.0 - cfg.alpha) * l_mb
        + cfg.alpha * (cfg.temperature as f64) * (cfg.temperature as f64) * l_kd
}

fn active_rows(mask: &[bool]) -> Vec<u32> {
    mask.iter()
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i as u32))
        .collect()
}

/// Softened distributions at unmasked positions of a logits matrix.
fn softened_active(
    tape: &GradTape,
    logits: &Tensor,
    mask: &[bool],
    temperature: f32,
) -> Result<Tensor> {
    let idx = active_rows(mask);
    let sel = ops::gather_rows(tape, logits, &idx)?;
    ops::softmax_with_temperature(tape, &sel, temperature)
}

/// Self-distillation: KL between the softened distribution of the reference
/// target given the primary generated source (gradient-carrying, from `bt`)
/// and the same distribution given a third-language source (gradient-free).
/// `z_sources` are the third-language generations, row-aligned with the
/// pairs inside `bt`.
pub fn skd_loss(
    tape: &GradTape,
    model: &Model,
    bt: &BtForward,
    z_sources: &[Vec<TokenId>],
    z_lang: LangId,
    temperature: f32,
) -> Result<LossOut> {
    let target_lang = bt.target_batch.langs[0];
    if z_lang == target_lang {
        return Err(Error::Param(
            "self-distillation pivot must differ from the batch language".into(),
        ));
    }
    if z_sources.len() != bt.target_batch.b {
        return Err(Error::Shape(format!(
            "{} third-language sources for {} targets",
            z_sources.len(),
            bt.target_batch.b
        )));
    }
    // Empty z generations fall back to the primary source so the row count
    // stays aligned; those rows contribute (near) zero divergence.
    let z_rows: Vec<Vec<TokenId>> = z_sources
        .iter()
        .enumerate()
        .map(|(i, s)| if s.len() <= 2 { bt.source_batch.row(i).to_vec() } else { s.clone() })
        .collect();
    let z_langs = vec![z_lang; z_rows.len()];
    let z_batch = Batch::from_rows(z_rows, z_langs)?;

    let frozen = GradTape::no_grad();
    let enc_z = model.encode(&frozen, &z_batch)?;
    let out_z = model.decode_teacher_forced(&frozen, &enc_z, &bt.target_batch)?;

    let p = softened_active(tape, &bt.logits, &bt.target_mask, temperature)?;
    let q = softened_active(&frozen, &out_z.logits, &bt.target_mask, temperature)?;
    let kl = ops::kl_divergence(tape, &p, &q)?;
    let value = kl.item() as f64;
    Ok(LossOut { loss: kl, value })
}

/// Branch-teacher distillation: KL between the student's softened
/// distribution (gradient-carrying, from `bt`) and a frozen branch teacher's
/// distribution over the same source and teacher-forced target.
pub fn lbkd_loss(
    tape: &GradTape,
    teacher: &Model,
    bt: &BtForward,
    temperature: f32,
) -> Result<LossOut> {
    let v_student = bt.logits.shape()[1];
    if teacher.cfg.vocab_size != v_student {
        return Err(Error::Param(format!(
            "teacher vocabulary size {} does not match student {}",
            teacher.cfg.vocab_size, v_student
        )));
    }
    let frozen = GradTape::no_grad();
    let enc_t = teacher.encode(&frozen, &bt.source_batch)?;
    let out_t = teacher.decode_teacher_forced(&frozen, &enc_t, &bt.target_batch)?;

    let p = softened_active(tape, &bt.logits, &bt.target_mask, temperature)?;
    let q = softened_active(&frozen, &out_t.logits, &bt.target_mask, temperature)?;
    let kl = ops::kl_divergence(tape, &p, &q)?;
    let value = kl.item() as f64;
    Ok(LossOut { loss: kl, value })
}
