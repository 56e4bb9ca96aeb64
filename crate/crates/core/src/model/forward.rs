//! Forward passes: encoder, teacher-forced decoder, and the masked-LM head.
//!
//! Layout convention: activations are [rows, d_model] matrices with rows =
//! batch * positions; attention temporarily regroups them per head.
//! Residual order is pre-layer-norm with a final layer norm on each stack.

use super::{AttentionParams, Model};
use crate::data::{Batch, LangId, TokenId, PAD_ID};
use crate::error::{Error, Result};
use crate::tensor::ops::{self, ATTN_MASK_NEG};
use crate::tensor::{GradTape, Tensor};

/// Encoder output plus the source padding mask needed by cross-attention.
pub struct EncodedSource {
    /// [b*l, d] final-normed encoder states.
    pub h: Tensor,
    pub b: usize,
    pub l: usize,
    /// [b, l], 0 for real tokens, large negative for padding.
    pub key_mask: Tensor,
}

/// Teacher-forced decoder output with aligned targets.
pub struct DecoderOutput {
    /// [b*l_dec, vocab] logits; position t conditions on target positions
    /// before t and the whole source.
    pub logits: Tensor,
    /// Flat [b*l_dec] next-token targets (PAD at inactive positions).
    pub targets: Vec<TokenId>,
    /// True where a real target exists.
    pub target_mask: Vec<bool>,
    pub b: usize,
    pub l_dec: usize,
}

pub(crate) fn key_mask_tensor(b: usize, l: usize, lengths: &[usize]) -> Tensor {
    let mut m = vec![ATTN_MASK_NEG; b * l];
    for (i, &len) in lengths.iter().enumerate() {
        for t in 0..len.min(l) {
            m[i * l + t] = 0.0;
        }
    }
    Tensor::new(&[b, l], m)
}

impl Model {
    /// Token + position + language embedding for a padded [b x l] matrix.
    fn embed(
        &self,
        tape: &GradTape,
        tokens: &[TokenId],
        b: usize,
        l: usize,
        langs: &[LangId],
    ) -> Result<Tensor> {
        if l > self.cfg.max_len {
            return Err(Error::Shape(format!(
                "sequence length {l} exceeds max_len {}",
                self.cfg.max_len
            )));
        }
        let pos_ids: Vec<u32> = (0..b).flat_map(|_| 0..l as u32).collect();
        let lang_ids: Vec<u32> = langs.iter().flat_map(|&lg| std::iter::repeat(lg).take(l)).collect();
        let tok = ops::gather_rows(tape, &self.params.token_emb, tokens)?;
        let pos = ops::gather_rows(tape, &self.params.pos_emb, &pos_ids)?;
        let lang = ops::gather_rows(tape, &self.params.lang_emb, &lang_ids)?;
        ops::add(tape, &ops::add(tape, &tok, &pos)?, &lang)
    }

    /// Multi-head attention block. `q_in` is [b*lq, d], `kv_in` [b*lkv, d].
    fn attention(
        &self,
        tape: &GradTape,
        q_in: &Tensor,
        kv_in: &Tensor,
        p: &AttentionParams,
        b: usize,
        lq: usize,
        lkv: usize,
        key_mask: &Tensor,
        causal: bool,
    ) -> Result<Tensor> {
        let h = self.cfg.n_heads;
        let dh = self.cfg.d_model / h;
        let q = ops::add_bias(tape, &ops::matmul(tape, q_in, &p.wq)?, &p.bq)?;
        let k = ops::add_bias(tape, &ops::matmul(tape, kv_in, &p.wk)?, &p.bk)?;
        let v = ops::add_bias(tape, &ops::matmul(tape, kv_in, &p.wv)?, &p.bv)?;
        let qh = ops::split_heads(tape, &q, b, lq, h)?;
        let kh = ops::split_heads(tape, &k, b, lkv, h)?;
        let vh = ops::split_heads(tape, &v, b, lkv, h)?;
        let mut scores = ops::bmm_nt(tape, &qh, &kh)?;
        scores = ops::mul_scalar(tape, &scores, 1.0 / (dh as f32).sqrt());
        scores = ops::add_key_mask(tape, &scores, key_mask, h)?;
        if causal {
            scores = ops::add_causal_mask(tape, &scores)?;
        }
        let attn = ops::softmax_with_temperature(tape, &scores, 1.0)?;
        let ctx = ops::bmm(tape, &attn, &vh)?;
        let merged = ops::merge_heads(tape, &ctx, b, lq, h)?;
        ops::add_bias(tape, &ops::matmul(tape, &merged, &p.wo)?, &p.bo)
    }

    fn ffn(&self, tape: &GradTape, x: &Tensor, p: &super::FfnParams) -> Result<Tensor> {
        let h = ops::add_bias(tape, &ops::matmul(tape, x, &p.w1)?, &p.b1)?;
        let h = ops::gelu(tape, &h);
        ops::add_bias(tape, &ops::matmul(tape, &h, &p.w2)?, &p.b2)
    }

    /// Run the encoder over a batch. Padding positions are masked out of
    /// attention, so their token ids cannot influence real positions.
    pub fn encode(&self, tape: &GradTape, batch: &Batch) -> Result<EncodedSource> {
        let (b, l) = (batch.b, batch.l);
        let key_mask = key_mask_tensor(b, l, &batch.lengths);
        let mut x = self.embed(tape, &batch.tokens, b, l, &batch.langs)?;
        for layer in &self.params.enc_layers {
            let n1 = ops::layer_norm(tape, &x, &layer.ln1.gamma, &layer.ln1.beta, 1e-5)?;
            let a = self.attention(tape, &n1, &n1, &layer.attn, b, l, l, &key_mask, false)?;
            x = ops::add(tape, &x, &a)?;
            let n2 = ops::layer_norm(tape, &x, &layer.ln2.gamma, &layer.ln2.beta, 1e-5)?;
            let f = self.ffn(tape, &n2, &layer.ffn)?;
            x = ops::add(tape, &x, &f)?;
        }
        let ln = &self.params.enc_final_ln;
        let h = ops::layer_norm(tape, &x, &ln.gamma, &ln.beta, 1e-5)?;
        Ok(EncodedSource { h, b, l, key_mask })
    }

    /// Teacher-forced decoding: feed target tokens shifted right, predict
    /// each next token. The target batch's own language ids drive the
    /// decoder-side language embedding.
    pub fn decode_teacher_forced(
        &self,
        tape: &GradTape,
        enc: &EncodedSource,
        target: &Batch,
    ) -> Result<DecoderOutput> {
        if self.params.dec_layers.is_empty() {
            return Err(Error::Param("decode on an encoder-only model".into()));
        }
        if target.b != enc.b {
            return Err(Error::Shape(format!(
                "decoder batch size {} vs encoded batch size {}",
                target.b, enc.b
            )));
        }
        let b = target.b;
        let l_dec = target.l - 1;
        let mut dec_tokens = vec![PAD_ID; b * l_dec];
        let mut targets = vec![PAD_ID; b * l_dec];
        let mut target_mask = vec![false; b * l_dec];
        let mut dec_lengths = vec![0usize; b];
        for i in 0..b {
            let row = target.row(i);
            let n = row.len() - 1;
            dec_lengths[i] = n;
            dec_tokens[i * l_dec..i * l_dec + n].copy_from_slice(&row[..n]);
            targets[i * l_dec..i * l_dec + n].copy_from_slice(&row[1..]);
            for t in 0..n {
                target_mask[i * l_dec + t] = true;
            }
        }
        let self_mask = key_mask_tensor(b, l_dec, &dec_lengths);
        let mut x = self.embed(tape, &dec_tokens, b, l_dec, &target.langs)?;
        for layer in &self.params.dec_layers {
            let n1 = ops::layer_norm(tape, &x, &layer.ln1.gamma, &layer.ln1.beta, 1e-5)?;
            let a =
                self.attention(tape, &n1, &n1, &layer.self_attn, b, l_dec, l_dec, &self_mask, true)?;
            x = ops::add(tape, &x, &a)?;
            let n2 = ops::layer_norm(tape, &x, &layer.ln2.gamma, &layer.ln2.beta, 1e-5)?;
            let c = self.attention(
                tape,
                &n2,
                &enc.h,
                &layer.cross_attn,
                b,
                l_dec,
                enc.l,
                &enc.key_mask,
                false,
            )?;
            x = ops::add(tape, &x, &c)?;
            let n3 = ops::layer_norm(tape, &x, &layer.ln3.gamma, &layer.ln3.beta, 1e-5)?;
            let f = self.ffn(tape, &n3, &layer.ffn)?;
            x = ops::add(tape, &x, &f)?;
        }
        let ln = self.params.dec_final_ln.as_ref().expect("decoder final ln");
        let h = ops::layer_norm(tape, &x, &ln.gamma, &ln.beta, 1e-5)?;
        let logits = ops::matmul_nt(tape, &h, self.params.output_projection())?;
        Ok(DecoderOutput { logits, targets, target_mask, b, l_dec })
    }

    /// Encoder states at the given flat positions projected to vocabulary
    /// logits through the tied embedding. Empty positions give [0, V].
    pub fn mlm_forward(
        &self,
        tape: &GradTape,
        batch: &Batch,
        flat_positions: &[u32],
    ) -> Result<Tensor> {
        let enc = self.encode(tape, batch)?;
        let sel = ops::gather_rows(tape, &enc.h, flat_positions)?;
        ops::matmul_nt(tape, &sel, self.params.output_projection())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Batch, BOS_ID, EOS_ID};
    use crate::model::init;
    use crate::rng::DetRng;
    use crate::tensor::GradTape;

    fn desk_model() -> Model {
        let cfg = super::super::TransformerConfig::desk(40, 3);
        init::init_unmt(&cfg, &mut DetRng::new(11, 0)).unwrap()
    }

    fn mk_batch(rows: &[&[TokenId]], langs: &[LangId]) -> Batch {
        let rows: Vec<Vec<TokenId>> = rows
            .iter()
            .map(|r| {
                let mut v = vec![BOS_ID];
                v.extend_from_slice(r);
                v.push(EOS_ID);
                v
            })
            .collect();
        Batch::from_rows(rows, langs.to_vec()).unwrap()
    }

    #[test]
    fn encoder_output_shape() {
        let m = desk_model();
        let batch = mk_batch(&[&[10, 11, 12], &[13, 14, 15]], &[0, 1]);
        let enc = m.encode(&GradTape::no_grad(), &batch).unwrap();
        assert_eq!(enc.h.shape(), &[2 * 5, 64]);
        assert!(enc.h.all_finite());
    }

    #[test]
    fn encoder_is_batch_equivariant() {
        let m = desk_model();
        let tape = GradTape::no_grad();
        let b1 = mk_batch(&[&[10, 11, 12], &[13, 14, 15]], &[0, 1]);
        let b2 = mk_batch(&[&[13, 14, 15], &[10, 11, 12]], &[1, 0]);
        let e1 = m.encode(&tape, &b1).unwrap();
        let e2 = m.encode(&tape, &b2).unwrap();
        let d1 = e1.h.data();
        let d2 = e2.h.data();
        let row = 5 * 64;
        assert_eq!(&d1[..row], &d2[row..2 * row]);
        assert_eq!(&d1[row..2 * row], &d2[..row]);
    }

    #[test]
    fn pad_positions_do_not_leak() {
        let m = desk_model();
        let tape = GradTape::no_grad();
        // Two rows, first shorter: row 0 has padding at the end.
        let rows1 = vec![vec![BOS_ID, 10, EOS_ID], vec![BOS_ID, 11, 12, 13, EOS_ID]];
        let mut b1 = Batch::from_rows(rows1, vec![0, 0]).unwrap();
        let e1 = m.encode(&tape, &b1).unwrap();
        // Change the PAD cell's token id; outputs at real positions must not move.
        assert_eq!(b1.tokens[3], crate::data::PAD_ID);
        b1.tokens[3] = 37;
        let e2 = m.encode(&tape, &b1).unwrap();
        let d1 = e1.h.data();
        let d2 = e2.h.data();
        for i in 0..3 {
            for c in 0..64 {
                assert_eq!(d1[i * 64 + c], d2[i * 64 + c], "row 0 pos {i} changed");
            }
        }
        for i in 5..10 {
            for c in 0..64 {
                assert_eq!(d1[i * 64 + c], d2[i * 64 + c], "row 1 pos {i} changed");
            }
        }
    }

    #[test]
    fn decoder_shapes_and_causality() {
        let m = desk_model();
        let tape = GradTape::no_grad();
        let src = mk_batch(&[&[10, 11, 12]], &[0]);
        let enc = m.encode(&tape, &src).unwrap();
        let tgt1 = mk_batch(&[&[20, 21, 22, 23]], &[1]);
        let out1 = m.decode_teacher_forced(&tape, &enc, &tgt1).unwrap();
        assert_eq!(out1.logits.shape(), &[5, 40]);
        assert_eq!(out1.targets[..5], [20, 21, 22, 23, EOS_ID]);

        // Perturb target position 3 (0-based in interior): logits at earlier
        // positions must be identical.
        let tgt2 = mk_batch(&[&[20, 21, 22, 33]], &[1]);
        let out2 = m.decode_teacher_forced(&tape, &enc, &tgt2).unwrap();
        let d1 = out1.logits.data();
        let d2 = out2.logits.data();
        // Decoder inputs: BOS 20 21 22 (23|33). Input position of the change
        // is t=4, so logits at t <= 3 are unaffected.
        for t in 0..4 {
            for v in 0..40 {
                assert_eq!(d1[t * 40 + v], d2[t * 40 + v], "logits at position {t} changed");
            }
        }
        assert!((0..40).any(|v| d1[4 * 40 + v] != d2[4 * 40 + v]));
    }

    #[test]
    fn target_language_embedding_is_live() {
        let m = desk_model();
        let tape = GradTape::no_grad();
        let src = mk_batch(&[&[10, 11]], &[0]);
        let enc = m.encode(&tape, &src).unwrap();
        let t1 = mk_batch(&[&[20, 21]], &[1]);
        let t2 = mk_batch(&[&[20, 21]], &[2]);
        let o1 = m.decode_teacher_forced(&tape, &enc, &t1).unwrap();
        let o2 = m.decode_teacher_forced(&tape, &enc, &t2).unwrap();
        assert_ne!(*o1.logits.data(), *o2.logits.data());
    }

    #[test]
    fn mlm_forward_shapes() {
        let m = desk_model();
        let tape = GradTape::no_grad();
        let batch = mk_batch(&[&[10, 11, 12]], &[0]);
        let logits = m.mlm_forward(&tape, &batch, &[1, 2]).unwrap();
        assert_eq!(logits.shape(), &[2, 40]);
        let empty = m.mlm_forward(&tape, &batch, &[]).unwrap();
        assert_eq!(empty.shape(), &[0, 40]);
    }

    #[test]
    fn too_long_sequence_is_rejected() {
        let m = desk_model();
        let tape = GradTape::no_grad();
        let interior: Vec<TokenId> = (6..6 + 70).map(|i| (i % 30 + 6) as TokenId).collect();
        let batch = mk_batch(&[&interior], &[0]);
        assert!(m.encode(&tape, &batch).is_err());
    }

    #[test]
    fn pretrained_init_copies_encoder_and_freshens_cross_attention() {
        let cfg = super::super::TransformerConfig::desk(40, 3);
        let mut rng = DetRng::new(5, 0);
        let lm = init::init_lm(&cfg, &mut rng).unwrap();
        let unmt = init::init_unmt_from_pretrained(&lm, &cfg, &mut rng).unwrap();

        // Encoder self-attention equals the pretrained weights exactly.
        for (a, b) in lm.params.enc_layers.iter().zip(&unmt.params.enc_layers) {
            assert_eq!(*a.attn.wq.data(), *b.attn.wq.data());
            assert_eq!(*a.ffn.w1.data(), *b.ffn.w1.data());
        }
        // Decoder self-attention and FFN too.
        for (a, b) in lm.params.enc_layers.iter().zip(&unmt.params.dec_layers) {
            assert_eq!(*a.attn.wq.data(), *b.self_attn.wq.data());
            assert_eq!(*a.ffn.w2.data(), *b.ffn.w2.data());
            // Cross-attention differs from every pretrained tensor.
            assert_ne!(*b.cross_attn.wq.data(), *a.attn.wq.data());
        }
        // Forward pass after init stays finite.
        let batch = mk_batch(&[&[10, 11, 12]], &[0]);
        let tape = GradTape::no_grad();
        let enc = unmt.encode(&tape, &batch).unwrap();
        let out = unmt.decode_teacher_forced(&tape, &enc, &batch).unwrap();
        assert!(out.logits.all_finite());
    }

    #[test]
    fn config_mismatch_lists_fields() {
        let cfg = super::super::TransformerConfig::desk(40, 3);
        let mut other = cfg;
        other.n_layers = 3;
        other.d_model = 32;
        other.n_heads = 2;
        let mut rng = DetRng::new(5, 0);
        let lm = init::init_lm(&cfg, &mut rng).unwrap();
        let err = init::init_unmt_from_pretrained(&lm, &other, &mut rng).unwrap_err().to_string();
        assert!(err.contains("n_layers") && err.contains("d_model"), "{err}");
    }

    #[test]
    fn weight_tying_shares_storage_and_gradient() {
        let m = desk_model();
        assert!(m.params.output_projection().same_storage(&m.params.token_emb));

        // Gradient through the output projection lands in the embedding.
        let tape = GradTape::new();
        let batch = mk_batch(&[&[10, 11]], &[0]);
        let logits = m.mlm_forward(&tape, &batch, &[1]).unwrap();
        let out = crate::tensor::ops::cross_entropy(&tape, &logits, &[11], &[true]).unwrap();
        tape.backward(&out.loss).unwrap();
        let g = m.params.token_emb.grad().expect("embedding grad");
        assert!(g.iter().any(|&v| v != 0.0));
    }
}
