//! Shared helpers for the integration test suites.
// Each test binary uses a different subset of these helpers.
#![allow(dead_code)]

use munmt_core::gradcheck::check_gradients;
use munmt_core::rng::DetRng;
use munmt_core::tensor::{ops, GradTape, Tensor};

pub fn rand_tensor(shape: &[usize], scale: f32, rng: &mut DetRng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::param(shape, (0..n).map(|_| rng.uniform(-scale, scale)).collect())
}

fn rand_dist(shape: &[usize], rng: &mut DetRng) -> Tensor {
    let v = *shape.last().unwrap();
    let rows: usize = shape.iter().product::<usize>() / v;
    let mut data = Vec::with_capacity(rows * v);
    for _ in 0..rows {
        let row: Vec<f32> = (0..v).map(|_| rng.uniform(0.05, 1.0)).collect();
        let sum: f32 = row.iter().sum();
        data.extend(row.into_iter().map(|x| x / sum));
    }
    Tensor::param(shape, data)
}

/// Finite-difference check for every differentiable tensor op, each wrapped
/// into a scalar loss. Returns (op name, relative error) pairs.
pub fn op_gradient_suite() -> Vec<(&'static str, f64)> {
    let h = 1e-3;
    let coords = 24;
    let mut out = Vec::new();
    let mut rng = DetRng::new(0xFDCAFE, 0);

    // Weighted sum makes the loss sensitive to every output coordinate.
    fn weighted_loss(tape: &GradTape, y: &Tensor, w: &[f32]) -> (Tensor, f64) {
        let wt = Tensor::new(y.shape(), w.to_vec());
        let prod = ops::mul(tape, y, &wt).unwrap();
        let total: f64 = prod.data().iter().map(|&v| v as f64).sum();
        (ops::sum_all(tape, &prod), total)
    }

    macro_rules! check {
        ($name:literal, $params:expr, $fwd:expr) => {{
            let params: Vec<Tensor> = $params;
            let report = check_gradients(&params, $fwd, h, coords, 2e-4, &mut rng);
            out.push(($name, report.max_rel_err));
        }};
    }

    let mut wrng = DetRng::new(0xBEEF, 1);
    let mut weights = |n: usize| -> Vec<f32> { (0..n).map(|_| wrng.uniform(-1.0, 1.0)).collect() };

    {
        let a = rand_tensor(&[3, 4], 1.0, &mut rng);
        let b = rand_tensor(&[3, 4], 1.0, &mut rng);
        let w = weights(12);
        check!("add", vec![a.clone(), b.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::add(t, &a, &b).unwrap(), &w)
        });
    }
    {
        let x = rand_tensor(&[4, 5], 1.0, &mut rng);
        let b = rand_tensor(&[5], 1.0, &mut rng);
        let w = weights(20);
        check!("add_bias", vec![x.clone(), b.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::add_bias(t, &x, &b).unwrap(), &w)
        });
    }
    {
        let a = rand_tensor(&[3, 4], 1.0, &mut rng);
        let b = rand_tensor(&[3, 4], 1.0, &mut rng);
        let w = weights(12);
        check!("mul", vec![a.clone(), b.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::mul(t, &a, &b).unwrap(), &w)
        });
    }
    {
        let x = rand_tensor(&[2, 6], 1.0, &mut rng);
        let w = weights(12);
        check!("mul_scalar", vec![x.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::mul_scalar(t, &x, -1.7), &w)
        });
    }
    {
        let a = rand_tensor(&[3, 4], 1.0, &mut rng);
        let b = rand_tensor(&[4, 5], 1.0, &mut rng);
        let w = weights(15);
        check!("matmul", vec![a.clone(), b.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::matmul(t, &a, &b).unwrap(), &w)
        });
    }
    {
        let a = rand_tensor(&[3, 4], 1.0, &mut rng);
        let b = rand_tensor(&[5, 4], 1.0, &mut rng);
        let w = weights(15);
        check!("matmul_nt", vec![a.clone(), b.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::matmul_nt(t, &a, &b).unwrap(), &w)
        });
    }
    {
        let a = rand_tensor(&[2, 3, 4], 1.0, &mut rng);
        let b = rand_tensor(&[2, 4, 3], 1.0, &mut rng);
        let w = weights(18);
        check!("bmm", vec![a.clone(), b.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::bmm(t, &a, &b).unwrap(), &w)
        });
    }
    {
        let a = rand_tensor(&[2, 3, 4], 1.0, &mut rng);
        let b = rand_tensor(&[2, 5, 4], 1.0, &mut rng);
        let w = weights(30);
        check!("bmm_nt", vec![a.clone(), b.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::bmm_nt(t, &a, &b).unwrap(), &w)
        });
    }
    {
        let x = rand_tensor(&[3, 4], 2.0, &mut rng);
        let w = weights(12);
        check!("gelu", vec![x.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::gelu(t, &x), &w)
        });
    }
    {
        let x = rand_tensor(&[4, 6], 1.0, &mut rng);
        let gamma = rand_tensor(&[6], 0.5, &mut rng);
        {
            let mut d = gamma.data_mut();
            for v in d.iter_mut() {
                *v += 1.0;
            }
        }
        let beta = rand_tensor(&[6], 0.5, &mut rng);
        let w = weights(24);
        check!(
            "layer_norm",
            vec![x.clone(), gamma.clone(), beta.clone()],
            |t: &GradTape| weighted_loss(t, &ops::layer_norm(t, &x, &gamma, &beta, 1e-5).unwrap(), &w)
        );
    }
    {
        let x = rand_tensor(&[3, 5], 2.0, &mut rng);
        let w = weights(15);
        check!("softmax_with_temperature", vec![x.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::softmax_with_temperature(t, &x, 2.0).unwrap(), &w)
        });
    }
    {
        let x = rand_tensor(&[6, 4], 1.0, &mut rng);
        let idx = [0u32, 2, 2, 5, 1];
        let w = weights(20);
        check!("gather_rows", vec![x.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::gather_rows(t, &x, &idx).unwrap(), &w)
        });
    }
    {
        let (b, l, hsplit) = (2usize, 3usize, 2usize);
        let x = rand_tensor(&[b * l, 8], 1.0, &mut rng);
        let w = weights(b * 2 * l * 4);
        check!("split_heads", vec![x.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::split_heads(t, &x, b, l, hsplit).unwrap(), &w)
        });
    }
    {
        let (b, l, hh) = (2usize, 3usize, 2usize);
        let x = rand_tensor(&[b * hh, l, 4], 1.0, &mut rng);
        let w = weights(b * l * 8);
        check!("merge_heads", vec![x.clone()], |t: &GradTape| {
            weighted_loss(t, &ops::merge_heads(t, &x, b, l, hh).unwrap(), &w)
        });
    }
    {
        // Follow the mask with a softmax, as attention does: keeps the loss
        // bounded so finite differences stay meaningful.
        let scores = rand_tensor(&[4, 3, 5], 1.0, &mut rng);
        let mask = Tensor::new(&[2, 5], vec![0.0, 0.0, ops::ATTN_MASK_NEG, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, ops::ATTN_MASK_NEG]);
        let w = weights(60);
        check!("add_key_mask", vec![scores.clone()], |t: &GradTape| {
            let masked = ops::add_key_mask(t, &scores, &mask, 2).unwrap();
            weighted_loss(t, &ops::softmax_with_temperature(t, &masked, 1.0).unwrap(), &w)
        });
    }
    {
        let scores = rand_tensor(&[2, 4, 4], 1.0, &mut rng);
        let w = weights(32);
        check!("add_causal_mask", vec![scores.clone()], |t: &GradTape| {
            let masked = ops::add_causal_mask(t, &scores).unwrap();
            weighted_loss(t, &ops::softmax_with_temperature(t, &masked, 1.0).unwrap(), &w)
        });
    }
    {
        let logits = rand_tensor(&[4, 6], 2.0, &mut rng);
        let targets = [1u32, 5, 0, 3];
        let mask = [true, true, false, true];
        check!("cross_entropy", vec![logits.clone()], |t: &GradTape| {
            let out = ops::cross_entropy(t, &logits, &targets, &mask).unwrap();
            (out.loss, out.loss_f64)
        });
    }
    {
        let p = rand_dist(&[3, 5], &mut rng);
        let q = rand_dist(&[3, 5], &mut rng);
        check!("kl_divergence_p", vec![p.clone()], |t: &GradTape| {
            let l = ops::kl_divergence(t, &p, &q).unwrap();
            let v = l.item() as f64;
            (l, v)
        });
        let p2 = rand_dist(&[3, 5], &mut rng);
        let q2 = rand_dist(&[3, 5], &mut rng);
        check!("kl_divergence_q", vec![q2.clone()], |t: &GradTape| {
            let l = ops::kl_divergence(t, &p2, &q2).unwrap();
            let v = l.item() as f64;
            (l, v)
        });
    }
    {
        let x = rand_tensor(&[3, 3], 1.0, &mut rng);
        check!("sum_all", vec![x.clone()], |t: &GradTape| {
            let l = ops::sum_all(t, &x);
            let v = l.item() as f64;
            (l, v)
        });
    }

    out
}

use munmt_core::data::{Batch, BOS_ID, EOS_ID};
use munmt_core::model::{init_unmt, TransformerConfig};

/// Finite-difference check of the whole desk-profile model on a 2-sentence
/// batch: encoder, decoder, embeddings and the tied projection, through the
/// teacher-forced cross-entropy loss. Samples coordinates of every named
/// parameter. Returns (worst tensor name, relative error).
pub fn model_gradient_check() -> (String, f64) {
    let cfg = TransformerConfig::desk(40, 3);
    let mut rng = DetRng::new(0xC0FFEE, 0);
    let model = init_unmt(&cfg, &mut rng).unwrap();
    // Rescale the embeddings to a well-conditioned point: layer-norm of
    // near-zero-variance rows is so sharply curved that f32 finite
    // differences cannot resolve the gradient there.
    for t in [&model.params.token_emb, &model.params.pos_emb, &model.params.lang_emb] {
        let mut d = t.data_mut();
        for v in d.iter_mut() {
            *v = rng.uniform(-0.3, 0.3);
        }
    }

    let rows = vec![
        vec![BOS_ID, 10, 11, 12, 13, EOS_ID],
        vec![BOS_ID, 14, 15, EOS_ID],
    ];
    let src = Batch::from_rows(rows.clone(), vec![0, 1]).unwrap();
    let tgt = Batch::from_rows(rows, vec![1, 0]).unwrap();

    let named = model.params.named();
    let mut worst = (String::new(), 0.0f64);
    for (name, tensor) in &named {
        let fwd = |tape: &GradTape| {
            let enc = model.encode(tape, &src).unwrap();
            let out = model.decode_teacher_forced(tape, &enc, &tgt).unwrap();
            let ce = ops::cross_entropy(tape, &out.logits, &out.targets, &out.target_mask).unwrap();
            (ce.loss, ce.loss_f64)
        };
        // Finite differences on an f32 forward are a measurement with
        // h-dependent error: rounding noise shrinks with larger h, kink and
        // curvature error with smaller h. A wrong backward rule disagrees at
        // every h, so take each tensor's better-conditioned measurement.
        let rel = [1e-3, 1e-2]
            .into_iter()
            .map(|h| {
                check_gradients(std::slice::from_ref(tensor), fwd, h, 10, 2e-4, &mut rng)
                    .max_rel_err
            })
            .fold(f64::INFINITY, f64::min);
        if rel > worst.1 {
            worst = (name.clone(), rel);
        }
    }
    worst
}

use munmt_core::data::{
    generate_synthetic, learn_bpe, BpeModel, SyntheticData, SyntheticSpec, Vocabulary,
};

/// A fully prepared synthetic experiment: data, shared subword vocabulary,
/// and encoded corpora ready for the trainer.
pub struct Pipeline {
    pub data: SyntheticData,
    pub bpe: BpeModel,
    pub vocab: Vocabulary,
    /// Encoded monolingual corpora in spec language order.
    pub corpora: Vec<(String, Vec<Vec<u32>>)>,
}

pub fn build_pipeline(spec: &SyntheticSpec, bpe_vocab_size: usize) -> Pipeline {
    let data = generate_synthetic(spec).expect("synthetic generation");
    let raw: Vec<Vec<String>> = data.corpora.iter().map(|(_, lines)| lines.clone()).collect();
    let (bpe, vocab) = learn_bpe(&raw, bpe_vocab_size, &spec.languages).expect("bpe");
    let corpora = data
        .corpora
        .iter()
        .map(|(lang, lines)| {
            let ids: Vec<Vec<u32>> =
                lines.iter().map(|l| bpe.encode_sentence(l, &vocab)).collect();
            (lang.clone(), ids)
        })
        .collect();
    Pipeline { data, bpe, vocab, corpora }
}

/// Small spec for fast trainer tests: three languages in two branches.
pub fn tiny_spec(n_sentences: usize, seed: u64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::default();
    spec.languages = vec!["base".into(), "c1".into(), "c2".into()];
    spec.branches =
        munmt_core::data::LanguageBranchMap::parse("west:base,c1;east:c2").unwrap();
    spec.base_vocab = 40;
    spec.sentences_per_lang = n_sentences;
    spec.test_sentences = 30;
    spec.min_len = 3;
    spec.max_len = 7;
    spec.reorder.clear();
    spec.seed = seed;
    spec
}
