//! Inference-time generation: greedy and beam decoding, pseudo-parallel
//! pair generation for back-translation, and zero-shot translation.
//!
//! Generation always runs on a no-grad tape; nothing here ever contributes
//! gradients. Greedy decoding is incremental with per-layer key/value
//! caches and decodes a whole batch in lockstep, which is what the training
//! loop uses. Beam search re-runs the prefix per step and is meant for
//! evaluation.

use crate::data::{Batch, LangId, TokenId, BOS_ID, EOS_ID, MASK_ID, PAD_ID};
use crate::error::{Error, Result};
use crate::model::{EncodedSource, Model};
use crate::objectives::PseudoPair;
use crate::tensor::{ops, GradTape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    Beam,
}

#[derive(Clone, Copy, Debug)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    pub beam_size: usize,
    /// Output cap = max_len_factor * source interior length + max_len_margin.
    pub max_len_factor: f32,
    pub max_len_margin: usize,
    /// Exponent on length when ranking finished beam hypotheses.
    pub length_penalty: f32,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            strategy: Strategy::Greedy,
            beam_size: 1,
            max_len_factor: 1.5,
            max_len_margin: 5,
            length_penalty: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Param("beam_size must be at least 1".into()));
        }
        if self.max_len_factor < 0.0 {
            return Err(Error::Param("max_len_factor must be non-negative".into()));
        }
        Ok(())
    }

    fn cap_for(&self, src_interior: usize) -> usize {
        (self.max_len_factor * src_interior as f32) as usize + self.max_len_margin
    }
}

/// Translate one framed sentence. Output is framed BOS..EOS; an empty
/// translation ([BOS, EOS]) is valid.
pub fn translate(
    model: &Model,
    src_ids: &[TokenId],
    src_lang: LangId,
    tgt_lang: LangId,
    cfg: &DecodeConfig,
) -> Result<Vec<TokenId>> {
    let batch = Batch::from_rows(vec![src_ids.to_vec()], vec![src_lang])?;
    Ok(translate_batch(model, &batch, tgt_lang, cfg)?.pop().unwrap())
}

/// Translate every sentence of a batch into `tgt_lang`.
pub fn translate_batch(
    model: &Model,
    src: &Batch,
    tgt_lang: LangId,
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<TokenId>>> {
    cfg.validate()?;
    let tape = GradTape::no_grad();
    let enc = model.encode(&tape, src)?;
    match cfg.strategy {
        Strategy::Greedy => greedy_decode(model, &enc, src, tgt_lang, cfg),
        Strategy::Beam => {
            let mut out = Vec::with_capacity(src.b);
            for i in 0..src.b {
                let row = src.row(i).to_vec();
                let single = Batch::from_rows(vec![row], vec![src.langs[i]])?;
                let enc1 = model.encode(&tape, &single)?;
                out.push(beam_decode_one(model, &enc1, single.lengths[0] - 2, tgt_lang, cfg)?);
            }
            Ok(out)
        }
    }
}

/// Zero-shot translation between two non-pivot languages: mechanically
/// identical to `translate`, named so callers can enumerate untrained
/// directions explicitly.
pub fn zero_shot_translate(
    model: &Model,
    src_ids: &[TokenId],
    src_lang: LangId,
    tgt_lang: LangId,
    pivot_lang: LangId,
    cfg: &DecodeConfig,
) -> Result<Vec<TokenId>> {
    if src_lang == pivot_lang || tgt_lang == pivot_lang {
        return Err(Error::Param(
            "zero-shot translation is between non-pivot languages".into(),
        ));
    }
    if src_lang == tgt_lang {
        return Err(Error::Param("zero-shot translation needs distinct languages".into()));
    }
    translate(model, src_ids, src_lang, tgt_lang, cfg)
}

/// Generate pseudo-parallel training pairs: translate every sentence of a
/// monolingual batch into `gen_lang` (gradient-free) and pair the generated
/// sentence as source with the genuine sentence as target.
pub fn generate_pseudo_pairs(
    model: &Model,
    batch: &Batch,
    gen_lang: LangId,
    cfg: &DecodeConfig,
) -> Result<Vec<PseudoPair>> {
    let generated = translate_batch(model, batch, gen_lang, cfg)?;
    Ok(generated
        .into_iter()
        .enumerate()
        .map(|(i, source)| PseudoPair {
            source,
            target: batch.row(i).to_vec(),
            source_lang: gen_lang,
            target_lang: batch.langs[i],
        })
        .collect())
}

/// Next-token logits given a BOS-initiated prefix (no EOS), via a full
/// teacher-forced pass. Used by beam search and consistency checks.
pub fn next_token_logits(
    model: &Model,
    enc: &EncodedSource,
    prefix: &[TokenId],
    tgt_lang: LangId,
) -> Result<Vec<f32>> {
    let tape = GradTape::no_grad();
    let mut row = prefix.to_vec();
    row.push(EOS_ID); // terminator only; never fed to the decoder
    let tgt = Batch::from_rows(vec![row], vec![tgt_lang])?;
    let out = model.decode_teacher_forced(&tape, enc, &tgt)?;
    let v = model.cfg.vocab_size;
    let data = out.logits.data();
    let last = prefix.len() - 1;
    Ok(data[last * v..(last + 1) * v].to_vec())
}

fn suppress_specials(logits: &mut [f32]) {
    logits[PAD_ID as usize] = f32::NEG_INFINITY;
    logits[BOS_ID as usize] = f32::NEG_INFINITY;
    logits[MASK_ID as usize] = f32::NEG_INFINITY;
}

fn argmax(xs: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// Per-layer self-attention cache: keys/values for already-generated
/// positions, shaped [b*h, t, dh] once assembled.
struct SelfCache {
    k: Vec<f32>,
    v: Vec<f32>,
    t: usize,
}

fn greedy_decode(
    model: &Model,
    enc: &EncodedSource,
    src: &Batch,
    tgt_lang: LangId,
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<TokenId>>> {
    let tape = GradTape::no_grad();
    let b = enc.b;
    let d = model.cfg.d_model;
    let h = model.cfg.n_heads;
    let dh = d / h;
    let n_layers = model.params.dec_layers.len();
    if n_layers == 0 {
        return Err(Error::Param("decode on an encoder-only model".into()));
    }

    // Cross-attention keys/values depend only on the source; compute once.
    let mut cross_kv = Vec::with_capacity(n_layers);
    for layer in &model.params.dec_layers {
        let ca = &layer.cross_attn;
        let k = ops::add_bias(&tape, &ops::matmul(&tape, &enc.h, &ca.wk)?, &ca.bk)?;
        let v = ops::add_bias(&tape, &ops::matmul(&tape, &enc.h, &ca.wv)?, &ca.bv)?;
        let kh = ops::split_heads(&tape, &k, b, enc.l, h)?;
        let vh = ops::split_heads(&tape, &v, b, enc.l, h)?;
        cross_kv.push((kh, vh));
    }

    let caps: Vec<usize> = (0..b).map(|i| cfg.cap_for(src.lengths[i] - 2)).collect();
    let hard_cap = caps.iter().copied().max().unwrap_or(0).min(model.cfg.max_len - 1);

    let mut caches: Vec<SelfCache> = (0..n_layers)
        .map(|_| SelfCache { k: Vec::new(), v: Vec::new(), t: 0 })
        .collect();
    let mut prev: Vec<TokenId> = vec![BOS_ID; b];
    let mut done = vec![false; b];
    let mut outputs: Vec<Vec<TokenId>> = vec![Vec::new(); b];
    let lang_ids: Vec<LangId> = vec![tgt_lang; b];

    for t in 0..hard_cap {
        // Embed the previous token at position t.
        let pos_ids = vec![t as u32; b];
        let tok = ops::gather_rows(&tape, &model.params.token_emb, &prev)?;
        let pos = ops::gather_rows(&tape, &model.params.pos_emb, &pos_ids)?;
        let lng = ops::gather_rows(&tape, &model.params.lang_emb, &lang_ids)?;
        let mut x = ops::add(&tape, &ops::add(&tape, &tok, &pos)?, &lng)?;

        for (li, layer) in model.params.dec_layers.iter().enumerate() {
            // Self-attention over the cache plus the current position.
            let n1 = ops::layer_norm(&tape, &x, &layer.ln1.gamma, &layer.ln1.beta, 1e-5)?;
            let sa = &layer.self_attn;
            let q = ops::add_bias(&tape, &ops::matmul(&tape, &n1, &sa.wq)?, &sa.bq)?;
            let k = ops::add_bias(&tape, &ops::matmul(&tape, &n1, &sa.wk)?, &sa.bk)?;
            let v = ops::add_bias(&tape, &ops::matmul(&tape, &n1, &sa.wv)?, &sa.bv)?;
            let cache = &mut caches[li];
            append_to_cache(cache, &k.data(), &v.data(), b, h, dh);
            let kc = Tensor::new(&[b * h, cache.t, dh], cache.k.clone());
            let vc = Tensor::new(&[b * h, cache.t, dh], cache.v.clone());
            let qh = ops::split_heads(&tape, &q, b, 1, h)?;
            let mut scores = ops::bmm_nt(&tape, &qh, &kc)?;
            scores = ops::mul_scalar(&tape, &scores, 1.0 / (dh as f32).sqrt());
            let attn = ops::softmax_with_temperature(&tape, &scores, 1.0)?;
            let ctx = ops::bmm(&tape, &attn, &vc)?;
            let merged = ops::merge_heads(&tape, &ctx, b, 1, h)?;
            let a = ops::add_bias(&tape, &ops::matmul(&tape, &merged, &sa.wo)?, &sa.bo)?;
            x = ops::add(&tape, &x, &a)?;

            // Cross-attention against the precomputed source keys/values.
            let n2 = ops::layer_norm(&tape, &x, &layer.ln2.gamma, &layer.ln2.beta, 1e-5)?;
            let ca = &layer.cross_attn;
            let qc = ops::add_bias(&tape, &ops::matmul(&tape, &n2, &ca.wq)?, &ca.bq)?;
            let qch = ops::split_heads(&tape, &qc, b, 1, h)?;
            let (kh, vh) = &cross_kv[li];
            let mut cscores = ops::bmm_nt(&tape, &qch, kh)?;
            cscores = ops::mul_scalar(&tape, &cscores, 1.0 / (dh as f32).sqrt());
            cscores = ops::add_key_mask(&tape, &cscores, &enc.key_mask, h)?;
            let cattn = ops::softmax_with_temperature(&tape, &cscores, 1.0)?;
            let cctx = ops::bmm(&tape, &cattn, vh)?;
            let cmerged = ops::merge_heads(&tape, &cctx, b, 1, h)?;
            let c = ops::add_bias(&tape, &ops::matmul(&tape, &cmerged, &ca.wo)?, &ca.bo)?;
            x = ops::add(&tape, &x, &c)?;

            let n3 = ops::layer_norm(&tape, &x, &layer.ln3.gamma, &layer.ln3.beta, 1e-5)?;
            let f1 = ops::add_bias(&tape, &ops::matmul(&tape, &n3, &layer.ffn.w1)?, &layer.ffn.b1)?;
            let f1 = ops::gelu(&tape, &f1);
            let f = ops::add_bias(&tape, &ops::matmul(&tape, &f1, &layer.ffn.w2)?, &layer.ffn.b2)?;
            x = ops::add(&tape, &x, &f)?;
        }
        let ln = model.params.dec_final_ln.as_ref().expect("decoder final ln");
        let hfin = ops::layer_norm(&tape, &x, &ln.gamma, &ln.beta, 1e-5)?;
        let logits = ops::matmul_nt(&tape, &hfin, model.params.output_projection())?;

        let vsize = model.cfg.vocab_size;
        let ld = logits.data();
        let mut all_done = true;
        for i in 0..b {
            if done[i] {
                prev[i] = PAD_ID;
                continue;
            }
            let mut row = ld[i * vsize..(i + 1) * vsize].to_vec();
            suppress_specials(&mut row);
            let next = argmax(&row) as TokenId;
            if next == EOS_ID || outputs[i].len() >= caps[i] {
                done[i] = true;
                prev[i] = PAD_ID;
            } else {
                outputs[i].push(next);
                prev[i] = next;
                all_done = false;
            }
        }
        if all_done && done.iter().all(|&x| x) {
            break;
        }
    }

    Ok(outputs
        .into_iter()
        .map(|interior| {
            let mut row = Vec::with_capacity(interior.len() + 2);
            row.push(BOS_ID);
            row.extend(interior);
            row.push(EOS_ID);
            row
        })
        .collect())
}

fn append_to_cache(cache: &mut SelfCache, k: &[f32], v: &[f32], b: usize, h: usize, dh: usize) {
    // Incoming k/v are [b, d] = [b, h*dh]; cache layout is [b*h, t, dh].
    let t_new = cache.t + 1;
    let mut nk = vec![0.0f32; b * h * t_new * dh];
    let mut nv = vec![0.0f32; b * h * t_new * dh];
    for bi in 0..b {
        for hi in 0..h {
            let bh = bi * h + hi;
            let old = &cache.k[bh * cache.t * dh..(bh * cache.t + cache.t) * dh];
            nk[bh * t_new * dh..bh * t_new * dh + cache.t * dh].copy_from_slice(old);
            let oldv = &cache.v[bh * cache.t * dh..(bh * cache.t + cache.t) * dh];
            nv[bh * t_new * dh..bh * t_new * dh + cache.t * dh].copy_from_slice(oldv);
            let src = &k[bi * h * dh + hi * dh..bi * h * dh + (hi + 1) * dh];
            nk[(bh * t_new + cache.t) * dh..(bh * t_new + t_new) * dh].copy_from_slice(src);
            let srcv = &v[bi * h * dh + hi * dh..bi * h * dh + (hi + 1) * dh];
            nv[(bh * t_new + cache.t) * dh..(bh * t_new + t_new) * dh].copy_from_slice(srcv);
        }
    }
    cache.k = nk;
    cache.v = nv;
    cache.t = t_new;
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<TokenId>, // BOS-initiated prefix
    logp: f64,
    done: bool,
}

fn beam_decode_one(
    model: &Model,
    enc: &EncodedSource,
    src_interior: usize,
    tgt_lang: LangId,
    cfg: &DecodeConfig,
) -> Result<Vec<TokenId>> {
    let cap = cfg.cap_for(src_interior).min(model.cfg.max_len.saturating_sub(2));
    let mut beams = vec![Hypothesis { tokens: vec![BOS_ID], logp: 0.0, done: false }];
    for _ in 0..cap {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &beams {
            if hyp.done {
                candidates.push(hyp.clone());
                continue;
            }
            let mut logits = next_token_logits(model, enc, &hyp.tokens, tgt_lang)?;
            suppress_specials(&mut logits);
            let logprobs = log_softmax_f64(&logits);
            // Expand with the top beam_size continuations of this prefix.
            let mut order: Vec<usize> = (0..logits.len()).collect();
            order.sort_by(|&a, &b| logprobs[b].partial_cmp(&logprobs[a]).unwrap().then(a.cmp(&b)));
            for &tok in order.iter().take(cfg.beam_size) {
                let mut tokens = hyp.tokens.clone();
                let done = tok as TokenId == EOS_ID;
                if !done {
                    tokens.push(tok as TokenId);
                }
                candidates.push(Hypothesis { tokens, logp: hyp.logp + logprobs[tok], done });
            }
        }
        candidates.sort_by(|a, b| b.logp.partial_cmp(&a.logp).unwrap());
        candidates.truncate(cfg.beam_size);
        beams = candidates;
        if beams.iter().all(|h| h.done) {
            break;
        }
    }
    // Rank by length-normalized score.
    let best = beams
        .into_iter()
        .map(|h| {
            let len = (h.tokens.len() - 1).max(1) as f64;
            let score = h.logp / len.powf(cfg.length_penalty as f64);
            (score, h)
        })
        .max_by(|a, b| a.0.partial_cmp(&b.0).unwrap())
        .map(|(_, h)| h)
        .expect("non-empty beam");
    let mut row = best.tokens;
    row.push(EOS_ID);
    Ok(row)
}

fn log_softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
    let lse = max
        + logits
            .iter()
            .map(|&x| (x as f64 - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|&x| x as f64 - lse).collect()
}
