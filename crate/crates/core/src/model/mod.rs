//! The shared transformer: one encoder and one decoder for all languages,
//! shared token embeddings, language embeddings, and a tied output
//! projection.

mod checkpoint;
mod forward;
mod init;

pub use checkpoint::{load_tensors, save_tensors, LoadedCheckpoint, CHECKPOINT_MAGIC};
pub use forward::{DecoderOutput, EncodedSource};
pub use init::{init_lm, init_unmt, init_unmt_from_pretrained};

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TransformerConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub n_languages: usize,
}

impl TransformerConfig {
    /// Full-scale profile: 6 layers, 1024 hidden units.
    pub fn paper(vocab_size: usize, n_languages: usize) -> Self {
        TransformerConfig {
            n_layers: 6,
            d_model: 1024,
            n_heads: 8,
            d_ff: 4096,
            max_len: 256,
            vocab_size,
            n_languages,
        }
    }

    /// Desk-scale profile: small enough to train on a laptop CPU in minutes.
    pub fn desk(vocab_size: usize, n_languages: usize) -> Self {
        TransformerConfig {
            n_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            max_len: 64,
            vocab_size,
            n_languages,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Param(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_layers == 0 || self.max_len < 2 || self.vocab_size < 6 || self.n_languages == 0 {
            return Err(Error::Param("degenerate transformer config".into()));
        }
        Ok(())
    }

    /// List any differing fields against `other`.
    pub fn diff(&self, other: &TransformerConfig) -> Vec<String> {
        let mut out = Vec::new();
        macro_rules! cmp {
            ($f:ident) => {
                if self.$f != other.$f {
                    out.push(format!("{}: {} vs {}", stringify!($f), self.$f, other.$f));
                }
            };
        }
        cmp!(n_layers);
        cmp!(d_model);
        cmp!(n_heads);
        cmp!(d_ff);
        cmp!(max_len);
        cmp!(vocab_size);
        cmp!(n_languages);
        out
    }

    pub fn to_config(&self, cfg: &mut KvConfig) {
        cfg.set("model.n_layers", self.n_layers);
        cfg.set("model.d_model", self.d_model);
        cfg.set("model.n_heads", self.n_heads);
        cfg.set("model.d_ff", self.d_ff);
        cfg.set("model.max_len", self.max_len);
        cfg.set("model.vocab_size", self.vocab_size);
        cfg.set("model.n_languages", self.n_languages);
    }

    pub fn from_config(cfg: &KvConfig) -> Result<TransformerConfig> {
        let c = TransformerConfig {
            n_layers: cfg.get_or("model.n_layers", 0usize)?,
            d_model: cfg.get_or("model.d_model", 0usize)?,
            n_heads: cfg.get_or("model.n_heads", 0usize)?,
            d_ff: cfg.get_or("model.d_ff", 0usize)?,
            max_len: cfg.get_or("model.max_len", 0usize)?,
            vocab_size: cfg.get_or("model.vocab_size", 0usize)?,
            n_languages: cfg.get_or("model.n_languages", 0usize)?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone)]
pub struct LayerNormParams {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Clone)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

#[derive(Clone)]
pub struct FfnParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Clone)]
pub struct EncoderLayerParams {
    pub ln1: LayerNormParams,
    pub attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub ffn: FfnParams,
}

#[derive(Clone)]
pub struct DecoderLayerParams {
    pub ln1: LayerNormParams,
    pub self_attn: AttentionParams,
    pub ln2: LayerNormParams,
    pub cross_attn: AttentionParams,
    pub ln3: LayerNormParams,
    pub ffn: FfnParams,
}

/// All weights, addressable by canonical dotted names. The output projection
/// is the token embedding itself (weight tying); no separate tensor exists.
#[derive(Clone)]
pub struct ModelParams {
    pub token_emb: Tensor,
    pub pos_emb: Tensor,
    pub lang_emb: Tensor,
    pub enc_layers: Vec<EncoderLayerParams>,
    pub enc_final_ln: LayerNormParams,
    /// Empty for an encoder-only language model.
    pub dec_layers: Vec<DecoderLayerParams>,
    pub dec_final_ln: Option<LayerNormParams>,
}

fn attn_named(prefix: &str, a: &AttentionParams, out: &mut Vec<(String, Tensor)>) {
    out.push((format!("{prefix}.wq"), a.wq.clone()));
    out.push((format!("{prefix}.bq"), a.bq.clone()));
    out.push((format!("{prefix}.wk"), a.wk.clone()));
    out.push((format!("{prefix}.bk"), a.bk.clone()));
    out.push((format!("{prefix}.wv"), a.wv.clone()));
    out.push((format!("{prefix}.bv"), a.bv.clone()));
    out.push((format!("{prefix}.wo"), a.wo.clone()));
    out.push((format!("{prefix}.bo"), a.bo.clone()));
}

fn ln_named(prefix: &str, l: &LayerNormParams, out: &mut Vec<(String, Tensor)>) {
    out.push((format!("{prefix}.gamma"), l.gamma.clone()));
    out.push((format!("{prefix}.beta"), l.beta.clone()));
}

fn ffn_named(prefix: &str, f: &FfnParams, out: &mut Vec<(String, Tensor)>) {
    out.push((format!("{prefix}.w1"), f.w1.clone()));
    out.push((format!("{prefix}.b1"), f.b1.clone()));
    out.push((format!("{prefix}.w2"), f.w2.clone()));
    out.push((format!("{prefix}.b2"), f.b2.clone()));
}

impl ModelParams {
    /// Canonical (name, tensor) list; order is stable and drives optimizer
    /// state layout and checkpoints.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        out.push(("token_emb".to_string(), self.token_emb.clone()));
        out.push(("pos_emb".to_string(), self.pos_emb.clone()));
        out.push(("lang_emb".to_string(), self.lang_emb.clone()));
        for (i, l) in self.enc_layers.iter().enumerate() {
            ln_named(&format!("enc.{i}.ln1"), &l.ln1, &mut out);
            attn_named(&format!("enc.{i}.attn"), &l.attn, &mut out);
            ln_named(&format!("enc.{i}.ln2"), &l.ln2, &mut out);
            ffn_named(&format!("enc.{i}.ffn"), &l.ffn, &mut out);
        }
        ln_named("enc.final_ln", &self.enc_final_ln, &mut out);
        for (i, l) in self.dec_layers.iter().enumerate() {
            ln_named(&format!("dec.{i}.ln1"), &l.ln1, &mut out);
            attn_named(&format!("dec.{i}.self_attn"), &l.self_attn, &mut out);
            ln_named(&format!("dec.{i}.ln2"), &l.ln2, &mut out);
            attn_named(&format!("dec.{i}.cross_attn"), &l.cross_attn, &mut out);
            ln_named(&format!("dec.{i}.ln3"), &l.ln3, &mut out);
            ffn_named(&format!("dec.{i}.ffn"), &l.ffn, &mut out);
        }
        if let Some(ln) = &self.dec_final_ln {
            ln_named("dec.final_ln", ln, &mut out);
        }
        out
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.named().into_iter().map(|(_, t)| t).collect()
    }

    /// The tied output projection: the token embedding table.
    pub fn output_projection(&self) -> &Tensor {
        &self.token_emb
    }

    pub fn n_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Fresh storage for every tensor (teachers, checkpoint snapshots).
    pub fn deep_clone(&self) -> ModelParams {
        fn ln(l: &LayerNormParams) -> LayerNormParams {
            LayerNormParams { gamma: l.gamma.deep_clone(), beta: l.beta.deep_clone() }
        }
        fn attn(a: &AttentionParams) -> AttentionParams {
            AttentionParams {
                wq: a.wq.deep_clone(),
                bq: a.bq.deep_clone(),
                wk: a.wk.deep_clone(),
                bk: a.bk.deep_clone(),
                wv: a.wv.deep_clone(),
                bv: a.bv.deep_clone(),
                wo: a.wo.deep_clone(),
                bo: a.bo.deep_clone(),
            }
        }
        fn ffn(f: &FfnParams) -> FfnParams {
            FfnParams {
                w1: f.w1.deep_clone(),
                b1: f.b1.deep_clone(),
                w2: f.w2.deep_clone(),
                b2: f.b2.deep_clone(),
            }
        }
        ModelParams {
            token_emb: self.token_emb.deep_clone(),
            pos_emb: self.pos_emb.deep_clone(),
            lang_emb: self.lang_emb.deep_clone(),
            enc_layers: self
                .enc_layers
                .iter()
                .map(|l| EncoderLayerParams {
                    ln1: ln(&l.ln1),
                    attn: attn(&l.attn),
                    ln2: ln(&l.ln2),
                    ffn: ffn(&l.ffn),
                })
                .collect(),
            enc_final_ln: ln(&self.enc_final_ln),
            dec_layers: self
                .dec_layers
                .iter()
                .map(|l| DecoderLayerParams {
                    ln1: ln(&l.ln1),
                    self_attn: attn(&l.self_attn),
                    ln2: ln(&l.ln2),
                    cross_attn: attn(&l.cross_attn),
                    ln3: ln(&l.ln3),
                    ffn: ffn(&l.ffn),
                })
                .collect(),
            dec_final_ln: self.dec_final_ln.as_ref().map(ln),
        }
    }
}

/// A transformer plus its configuration.
#[derive(Clone)]
pub struct Model {
    pub cfg: TransformerConfig,
    pub params: ModelParams,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("cfg", &self.cfg)
            .field("n_params", &self.params.n_params())
            .finish()
    }
}

impl Model {
    pub fn is_encoder_only(&self) -> bool {
        self.params.dec_layers.is_empty()
    }

    /// Serialize to the binary checkpoint format with the model config in
    /// the embedded text block. `extra` keys are stored alongside.
    pub fn save(&self, path: &Path, extra: &KvConfig) -> Result<()> {
        let mut cfg = extra.clone();
        self.cfg.to_config(&mut cfg);
        let named = self.params.named();
        let refs: Vec<(String, Tensor)> = named;
        save_tensors(path, &refs, &cfg.to_text())
    }

    /// Load a model; returns the model and the full embedded config block.
    pub fn load(path: &Path) -> Result<(Model, KvConfig)> {
        let loaded = load_tensors(path)?;
        let cfg_block = KvConfig::parse(&loaded.config_text)?;
        let cfg = TransformerConfig::from_config(&cfg_block)?;
        let has_decoder = loaded.tensors.keys().any(|k| k.starts_with("dec."));
        let params = params_from_map(&cfg, &loaded.tensors, has_decoder)?;
        Ok((Model { cfg, params }, cfg_block))
    }
}

/// Rebuild structured params from a name -> (shape, data) map, validating
/// every tensor name and shape.
pub fn params_from_map(
    cfg: &TransformerConfig,
    map: &BTreeMap<String, (Vec<usize>, Vec<f32>)>,
    with_decoder: bool,
) -> Result<ModelParams> {
    let skeleton = init::zeroed_params(cfg, with_decoder);
    for (name, tensor) in skeleton.named() {
        let (shape, data) = map.get(&name).ok_or_else(|| {
            Error::Checkpoint(format!("missing tensor `{name}`"))
        })?;
        if shape != tensor.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}`: shape {:?} in file, expected {:?}",
                shape,
                tensor.shape()
            )));
        }
        tensor.data_mut().copy_from_slice(data);
    }
    Ok(skeleton)
}
