//! Parameter initialization and transfer from a pretrained language model.

use super::{
    AttentionParams, DecoderLayerParams, EncoderLayerParams, FfnParams, LayerNormParams, Model,
    ModelParams, TransformerConfig,
};
use crate::error::{Error, Result};
use crate::rng::DetRng;
use crate::tensor::Tensor;

fn xavier_uniform(rows: usize, cols: usize, rng: &mut DetRng) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt() as f32;
    Tensor::param(&[rows, cols], (0..rows * cols).map(|_| rng.uniform(-limit, limit)).collect())
}

fn normal_embedding(rows: usize, cols: usize, rng: &mut DetRng) -> Tensor {
    Tensor::param(&[rows, cols], (0..rows * cols).map(|_| rng.normal() * 0.02).collect())
}

fn zeros_param(n: usize) -> Tensor {
    Tensor::param(&[n], vec![0.0; n])
}

fn fresh_ln(d: usize) -> LayerNormParams {
    LayerNormParams { gamma: Tensor::param(&[d], vec![1.0; d]), beta: zeros_param(d) }
}

fn fresh_attn(d: usize, rng: &mut DetRng) -> AttentionParams {
    AttentionParams {
        wq: xavier_uniform(d, d, rng),
        bq: zeros_param(d),
        wk: xavier_uniform(d, d, rng),
        bk: zeros_param(d),
        wv: xavier_uniform(d, d, rng),
        bv: zeros_param(d),
        wo: xavier_uniform(d, d, rng),
        bo: zeros_param(d),
    }
}

fn fresh_ffn(d: usize, d_ff: usize, rng: &mut DetRng) -> FfnParams {
    FfnParams {
        w1: xavier_uniform(d, d_ff, rng),
        b1: zeros_param(d_ff),
        w2: xavier_uniform(d_ff, d, rng),
        b2: zeros_param(d),
    }
}

fn copy_ln(src: &LayerNormParams) -> LayerNormParams {
    LayerNormParams { gamma: src.gamma.deep_clone(), beta: src.beta.deep_clone() }
}

fn copy_attn(src: &AttentionParams) -> AttentionParams {
    AttentionParams {
        wq: src.wq.deep_clone(),
        bq: src.bq.deep_clone(),
        wk: src.wk.deep_clone(),
        bk: src.bk.deep_clone(),
        wv: src.wv.deep_clone(),
        bv: src.bv.deep_clone(),
        wo: src.wo.deep_clone(),
        bo: src.bo.deep_clone(),
    }
}

fn copy_ffn(src: &FfnParams) -> FfnParams {
    FfnParams {
        w1: src.w1.deep_clone(),
        b1: src.b1.deep_clone(),
        w2: src.w2.deep_clone(),
        b2: src.b2.deep_clone(),
    }
}

/// Encoder-only language model with random weights.
pub fn init_lm(cfg: &TransformerConfig, rng: &mut DetRng) -> Result<Model> {
    cfg.validate()?;
    let d = cfg.d_model;
    let params = ModelParams {
        token_emb: normal_embedding(cfg.vocab_size, d, rng),
        pos_emb: normal_embedding(cfg.max_len, d, rng),
        lang_emb: normal_embedding(cfg.n_languages, d, rng),
        enc_layers: (0..cfg.n_layers)
            .map(|_| EncoderLayerParams {
                ln1: fresh_ln(d),
                attn: fresh_attn(d, rng),
                ln2: fresh_ln(d),
                ffn: fresh_ffn(d, cfg.d_ff, rng),
            })
            .collect(),
        enc_final_ln: fresh_ln(d),
        dec_layers: Vec::new(),
        dec_final_ln: None,
    };
    Ok(Model { cfg: *cfg, params })
}

/// Full encoder-decoder with random weights.
pub fn init_unmt(cfg: &TransformerConfig, rng: &mut DetRng) -> Result<Model> {
    let mut model = init_lm(cfg, rng)?;
    let d = cfg.d_model;
    model.params.dec_layers = (0..cfg.n_layers)
        .map(|_| DecoderLayerParams {
            ln1: fresh_ln(d),
            self_attn: fresh_attn(d, rng),
            ln2: fresh_ln(d),
            cross_attn: fresh_attn(d, rng),
            ln3: fresh_ln(d),
            ffn: fresh_ffn(d, cfg.d_ff, rng),
        })
        .collect();
    model.params.dec_final_ln = Some(fresh_ln(d));
    Ok(model)
}

/// Initialize a translation model from a pretrained encoder-only language
/// model: the encoder stack is copied into both the encoder and the
/// matching decoder sublayers; decoder-only weights (cross-attention and
/// its layer norm) are freshly initialized.
pub fn init_unmt_from_pretrained(lm: &Model, cfg: &TransformerConfig, rng: &mut DetRng) -> Result<Model> {
    let diffs = lm.cfg.diff(cfg);
    if !diffs.is_empty() {
        return Err(Error::Param(format!(
            "pretrained model config mismatch: {}",
            diffs.join(", ")
        )));
    }
    if !lm.is_encoder_only() {
        return Err(Error::Param("pretrained model must be encoder-only".into()));
    }
    let d = cfg.d_model;
    let src = &lm.params;
    let params = ModelParams {
        token_emb: src.token_emb.deep_clone(),
        pos_emb: src.pos_emb.deep_clone(),
        lang_emb: src.lang_emb.deep_clone(),
        enc_layers: src
            .enc_layers
            .iter()
            .map(|l| EncoderLayerParams {
                ln1: copy_ln(&l.ln1),
                attn: copy_attn(&l.attn),
                ln2: copy_ln(&l.ln2),
                ffn: copy_ffn(&l.ffn),
            })
            .collect(),
        enc_final_ln: copy_ln(&src.enc_final_ln),
        dec_layers: src
            .enc_layers
            .iter()
            .map(|l| DecoderLayerParams {
                ln1: copy_ln(&l.ln1),
                self_attn: copy_attn(&l.attn),
                ln2: fresh_ln(d),
                cross_attn: fresh_attn(d, rng),
                ln3: copy_ln(&l.ln2),
                ffn: copy_ffn(&l.ffn),
            })
            .collect(),
        dec_final_ln: Some(copy_ln(&src.enc_final_ln)),
    };
    Ok(Model { cfg: *cfg, params })
}

/// All-zero parameter skeleton used when loading checkpoints.
pub(super) fn zeroed_params(cfg: &TransformerConfig, with_decoder: bool) -> ModelParams {
    let d = cfg.d_model;
    let zp = |r: usize, c: usize| Tensor::param(&[r, c], vec![0.0; r * c]);
    let zattn = |d: usize| AttentionParams {
        wq: zp(d, d),
        bq: zeros_param(d),
        wk: zp(d, d),
        bk: zeros_param(d),
        wv: zp(d, d),
        bv: zeros_param(d),
        wo: zp(d, d),
        bo: zeros_param(d),
    };
    let zln = |d: usize| LayerNormParams { gamma: zeros_param(d), beta: zeros_param(d) };
    let zffn = || FfnParams {
        w1: zp(d, cfg.d_ff),
        b1: zeros_param(cfg.d_ff),
        w2: zp(cfg.d_ff, d),
        b2: zeros_param(d),
    };
    ModelParams {
        token_emb: zp(cfg.vocab_size, d),
        pos_emb: zp(cfg.max_len, d),
        lang_emb: zp(cfg.n_languages, d),
        enc_layers: (0..cfg.n_layers)
            .map(|_| EncoderLayerParams { ln1: zln(d), attn: zattn(d), ln2: zln(d), ffn: zffn() })
            .collect(),
        enc_final_ln: zln(d),
        dec_layers: if with_decoder {
            (0..cfg.n_layers)
                .map(|_| DecoderLayerParams {
                    ln1: zln(d),
                    self_attn: zattn(d),
                    ln2: zln(d),
                    cross_attn: zattn(d),
                    ln3: zln(d),
                    ffn: zffn(),
                })
                .collect()
        } else {
            Vec::new()
        },
        dec_final_ln: if with_decoder { Some(zln(d)) } else { None },
    }
}
