//! End-to-end behavior of the training loops on tiny synthetic data.

mod common;

use munmt_core::data::{BOS_ID, EOS_ID};
use munmt_core::decoding::{translate, DecodeConfig};
use munmt_core::model::TransformerConfig;
use munmt_core::objectives::{KdConfig, KdMode};
use munmt_core::rng::DetRng;
use munmt_core::trainer::{
    finetune_pair, pick_distinct_language, pretrain_mlm, train_munmt, train_unmt_pair,
    RunManifest, TrainConfig, Trainer,
};

fn small_model(p: &common::Pipeline) -> TransformerConfig {
    TransformerConfig {
        n_layers: 1,
        d_model: 32,
        n_heads: 2,
        d_ff: 64,
        max_len: 32,
        vocab_size: p.vocab.size(),
        n_languages: p.vocab.n_languages(),
    }
}

fn base_cfg(p: &common::Pipeline, steps: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::new(
        p.data.spec.languages.clone(),
        p.data.spec.branches.clone(),
        small_model(p),
    );
    cfg.steps = steps;
    cfg.seed = seed;
    cfg.batch_tokens = 128;
    cfg.adam.lr = 1e-3;
    cfg
}

#[test]
fn mlm_pretraining_starts_near_ln_v_and_improves() {
    let p = common::build_pipeline(&common::tiny_spec(300, 11), 90);
    let cfg = base_cfg(&p, 60, 1);
    let (_lm, manifest) = pretrain_mlm(&p.corpora, &p.vocab, &cfg).unwrap();
    let records: Vec<f64> =
        manifest.records_of_kind("MLM").map(|r| r.value).filter(|v| *v > 0.0).collect();
    let ln_v = (p.vocab.size() as f64).ln();
    assert!(
        (records[0] - ln_v).abs() / ln_v < 0.10,
        "first MLM loss {} vs ln V {ln_v}",
        records[0]
    );
    let head: f64 = records[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = records[records.len() - 10..].iter().sum::<f64>() / 10.0;
    assert!(tail < head, "MLM loss did not improve: {head} -> {tail}");
}

#[test]
fn pair_reduction_is_bitwise_and_k0_returns_init() {
    let p = common::build_pipeline(&common::tiny_spec(120, 12), 90);
    let two_langs = vec!["base".to_string(), "c1".to_string()];
    let corpora2: Vec<_> = p.corpora[..2].to_vec();

    let mut lm_cfg = base_cfg(&p, 10, 3);
    let (lm, _) = pretrain_mlm(&p.corpora, &p.vocab, &lm_cfg).unwrap();

    lm_cfg.languages = two_langs;
    lm_cfg.steps = 4;
    let (m_pair, _) = train_unmt_pair(&corpora2, &p.vocab, &lm, &lm_cfg).unwrap();
    let mut cfg_munmt = lm_cfg.clone();
    cfg_munmt.kd.mode = KdMode::None;
    let (m_munmt, _) = train_munmt(&corpora2, &p.vocab, &lm, &cfg_munmt, None).unwrap();
    for ((n1, t1), (_, t2)) in m_pair.params.named().iter().zip(m_munmt.params.named().iter()) {
        assert_eq!(*t1.data(), *t2.data(), "tensor {n1} differs between pair and munmt");
    }

    // Zero steps: parameters equal the pretrained initialization exactly.
    let mut cfg0 = lm_cfg.clone();
    cfg0.steps = 0;
    let (m0, manifest0) = train_unmt_pair(&corpora2, &p.vocab, &lm, &cfg0).unwrap();
    assert_eq!(manifest0.final_step, 0);
    let mut rng = DetRng::new(cfg0.seed, 53);
    let reference =
        munmt_core::model::init_unmt_from_pretrained(&lm, &cfg0.model, &mut rng).unwrap();
    for ((n1, t1), (_, t2)) in m0.params.named().iter().zip(reference.params.named().iter()) {
        assert_eq!(*t1.data(), *t2.data(), "tensor {n1} changed with zero steps");
    }
}

#[test]
fn alpha_zero_trajectory_is_bitwise_equal_to_mode_none() {
    let p = common::build_pipeline(&common::tiny_spec(120, 13), 90);
    let (lm, _) = pretrain_mlm(&p.corpora, &p.vocab, &base_cfg(&p, 8, 5)).unwrap();

    let mut cfg_none = base_cfg(&p, 3, 5);
    cfg_none.kd = KdConfig { alpha: 0.1, temperature: 2.0, mode: KdMode::None };
    let (m_none, _) = train_munmt(&p.corpora, &p.vocab, &lm, &cfg_none, None).unwrap();

    let mut cfg_zero = base_cfg(&p, 3, 5);
    cfg_zero.kd = KdConfig { alpha: 0.0, temperature: 2.0, mode: KdMode::Skd };
    let (m_zero, _) = train_munmt(&p.corpora, &p.vocab, &lm, &cfg_zero, None).unwrap();

    for ((n1, t1), (_, t2)) in m_none.params.named().iter().zip(m_zero.params.named().iter()) {
        assert_eq!(*t1.data(), *t2.data(), "tensor {n1} differs between none and alpha=0");
    }
}

#[test]
fn manifest_counts_follow_the_algorithm_structure() {
    let p = common::build_pipeline(&common::tiny_spec(120, 14), 90);
    let (lm, _) = pretrain_mlm(&p.corpora, &p.vocab, &base_cfg(&p, 6, 6)).unwrap();
    let mut cfg = base_cfg(&p, 3, 6);
    cfg.kd = KdConfig { alpha: 0.1, temperature: 2.0, mode: KdMode::Skd };
    let (_m, manifest) = train_munmt(&p.corpora, &p.vocab, &lm, &cfg, None).unwrap();

    let n = 3usize;
    for step in 1..=3usize {
        let md = manifest.records.iter().filter(|r| r.step == step && r.kind == "MD").count();
        let mb = manifest.records.iter().filter(|r| r.step == step && r.kind == "MB").count();
        let skd = manifest.records.iter().filter(|r| r.step == step && r.kind == "SKD").count();
        assert_eq!(md, n, "step {step}: MD records");
        assert_eq!(mb, 2 * (n - 1), "step {step}: MB records");
        assert!(skd <= 2 * (n - 1), "step {step}: SKD records bounded by MB updates");
    }
    assert_eq!(manifest.trained_directions.len(), 2 * (n - 1));
    assert_eq!(
        manifest.trained_directions.len() + manifest.untrained_directions.len(),
        n * (n - 1)
    );
    // Manifests persist losslessly.
    let back = RunManifest::parse(&manifest.to_text()).unwrap();
    assert_eq!(back.records.len(), manifest.records.len());
}

#[test]
fn same_config_same_seed_gives_identical_manifests() {
    let p = common::build_pipeline(&common::tiny_spec(120, 15), 90);
    let (lm, _) = pretrain_mlm(&p.corpora, &p.vocab, &base_cfg(&p, 6, 9)).unwrap();
    let cfg = base_cfg(&p, 3, 9);
    let (_m1, man1) = train_munmt(&p.corpora, &p.vocab, &lm, &cfg, None).unwrap();
    let (_m2, man2) = train_munmt(&p.corpora, &p.vocab, &lm, &cfg, None).unwrap();
    assert_eq!(man1.to_text(), man2.to_text());
}

#[test]
fn resume_from_checkpoint_is_bitwise_identical() {
    let p = common::build_pipeline(&common::tiny_spec(120, 16), 90);
    let (lm, _) = pretrain_mlm(&p.corpora, &p.vocab, &base_cfg(&p, 6, 10)).unwrap();
    let cfg = base_cfg(&p, 0, 10);

    // Uninterrupted: 6 steps.
    let mut rng = DetRng::new(cfg.seed, 53);
    let model =
        munmt_core::model::init_unmt_from_pretrained(&lm, &cfg.model, &mut rng).unwrap();
    let mut full = Trainer::from_model(model, &p.corpora, &p.vocab, &cfg, "munmt").unwrap();
    full.train(6).unwrap();
    let (m_full, man_full) = full.into_parts();

    // Interrupted at step 3, checkpointed, resumed.
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("mid.mukd");
    let mut rng = DetRng::new(cfg.seed, 53);
    let model =
        munmt_core::model::init_unmt_from_pretrained(&lm, &cfg.model, &mut rng).unwrap();
    let mut first = Trainer::from_model(model, &p.corpora, &p.vocab, &cfg, "munmt").unwrap();
    first.train(3).unwrap();
    first.save_checkpoint(&ckpt).unwrap();
    let mut resumed = Trainer::resume(&ckpt, &p.corpora, &p.vocab).unwrap();
    assert_eq!(resumed.step_index(), 3);
    resumed.train(3).unwrap();
    let (m_res, man_res) = resumed.into_parts();

    for ((n1, t1), (_, t2)) in m_full.params.named().iter().zip(m_res.params.named().iter()) {
        assert_eq!(*t1.data(), *t2.data(), "tensor {n1} differs after resume");
    }
    // Loss records for steps 4..6 agree exactly.
    let tail_full: Vec<_> =
        man_full.records.iter().filter(|r| r.step > 3).cloned().collect();
    assert_eq!(tail_full.len(), man_res.records.len());
    for (a, b) in tail_full.iter().zip(man_res.records.iter()) {
        assert_eq!(a.kind, b.kind);
        assert_eq!(a.pair, b.pair);
        assert!(
            (a.value == b.value) || (a.value.is_nan() && b.value.is_nan()),
            "record value {} vs {}",
            a.value,
            b.value
        );
    }

    // Checkpoint roundtrip restores tensors bitwise.
    let ckpt2 = dir.path().join("final.mukd");
    let mut rng = DetRng::new(cfg.seed, 53);
    let model =
        munmt_core::model::init_unmt_from_pretrained(&lm, &cfg.model, &mut rng).unwrap();
    let t = Trainer::from_model(model, &p.corpora, &p.vocab, &cfg, "munmt").unwrap();
    t.save_checkpoint(&ckpt2).unwrap();
    let t2 = Trainer::resume(&ckpt2, &p.corpora, &p.vocab).unwrap();
    for ((n1, t1), (_, t2)) in t.model().params.named().iter().zip(t2.model().params.named().iter())
    {
        assert_eq!(*t1.data(), *t2.data(), "tensor {n1} not restored bitwise");
    }
}

#[test]
fn overfit_denoising_learns_to_copy() {
    // One-sentence corpus, zero noise: the model memorizes reconstruction
    // and translate(src == tgt) reproduces the input.
    let p = common::build_pipeline(&common::tiny_spec(40, 17), 90);
    let sentence = p.corpora[0].1[0].clone();
    let corpora: Vec<(String, Vec<Vec<u32>>)> = vec![
        ("base".into(), vec![sentence.clone(); 8]),
        ("c1".into(), vec![p.corpora[1].1[0].clone(); 8]),
    ];
    let mut cfg = base_cfg(&p, 150, 18);
    cfg.languages = vec!["base".into(), "c1".into()];
    cfg.noise.p_drop = 0.0;
    cfg.noise.k_swap = 0;
    cfg.adam.lr = 3e-3;
    let (lm, _) = {
        let mut c = cfg.clone();
        c.steps = 10;
        pretrain_mlm(&corpora, &p.vocab, &c).unwrap()
    };
    let (model, manifest) = train_unmt_pair(&corpora, &p.vocab, &lm, &cfg).unwrap();
    let md: Vec<f64> = manifest.records_of_kind("MD").map(|r| r.value).collect();
    assert!(md.last().unwrap() < &0.1, "memorization loss {:?}", md.last());

    let out = translate(&model, &sentence, 0, 0, &DecodeConfig::default()).unwrap();
    assert_eq!(out, sentence, "overfit copy model should reproduce its input");
    assert_eq!(out[0], BOS_ID);
    assert_eq!(*out.last().unwrap(), EOS_ID);
}

#[test]
fn finetune_zero_steps_is_identity_and_kind_is_ft() {
    let p = common::build_pipeline(&common::tiny_spec(120, 19), 90);
    let (lm, _) = pretrain_mlm(&p.corpora, &p.vocab, &base_cfg(&p, 6, 20)).unwrap();
    let mut cfg = base_cfg(&p, 2, 20);
    let (munmt, _) = train_munmt(&p.corpora, &p.vocab, &lm, &cfg, None).unwrap();
    let snapshot: Vec<Vec<f32>> =
        munmt.params.named().iter().map(|(_, t)| t.data().clone()).collect();

    cfg.languages = vec!["base".into(), "c1".into()];
    cfg.steps = 0;
    let corpora2: Vec<_> = p.corpora[..2].to_vec();
    let (ft, manifest) = finetune_pair(munmt, &corpora2, &p.vocab, &cfg).unwrap();
    assert_eq!(manifest.run_kind, "ft");
    for ((_, t), snap) in ft.params.named().iter().zip(snapshot.iter()) {
        assert_eq!(*t.data(), *snap);
    }
}

#[test]
fn skd_pivot_choice_is_uniform() {
    let mut rng = DetRng::new(123, 0);
    let n = 5usize;
    let exclude = (0usize, 2usize);
    let mut counts = vec![0usize; n];
    let draws = 10_000;
    for _ in 0..draws {
        let z = pick_distinct_language(n, exclude, &mut rng).unwrap();
        assert!(z != 0 && z != 2);
        counts[z] += 1;
    }
    let eligible = [1usize, 3, 4];
    let expect = draws as f64 / eligible.len() as f64;
    let mut chi2 = 0.0;
    for &e in &eligible {
        let diff = counts[e] as f64 - expect;
        chi2 += diff * diff / expect;
        assert!(
            (counts[e] as f64 / draws as f64 - 1.0 / 3.0).abs() < 0.05,
            "language {e} frequency {} out of tolerance",
            counts[e]
        );
    }
    // 99.9% critical value for 2 degrees of freedom.
    assert!(chi2 < 13.8, "chi-square {chi2}");
}

#[test]
fn skd_with_two_languages_is_rejected() {
    let p = common::build_pipeline(&common::tiny_spec(60, 21), 90);
    let (lm, _) = pretrain_mlm(&p.corpora, &p.vocab, &base_cfg(&p, 4, 22)).unwrap();
    let mut cfg = base_cfg(&p, 2, 22);
    cfg.languages = vec!["base".into(), "c1".into()];
    cfg.kd.mode = KdMode::Skd;
    let corpora2: Vec<_> = p.corpora[..2].to_vec();
    let err = train_munmt(&corpora2, &p.vocab, &lm, &cfg, None).unwrap_err().to_string();
    assert!(err.contains("three languages"), "{err}");
}

#[test]
fn lbkd_without_teacher_names_the_branch() {
    let p = common::build_pipeline(&common::tiny_spec(60, 23), 90);
    let (lm, _) = pretrain_mlm(&p.corpora, &p.vocab, &base_cfg(&p, 4, 24)).unwrap();
    let mut cfg = base_cfg(&p, 2, 24);
    cfg.kd.mode = KdMode::Lbkd;
    let err = train_munmt(&p.corpora, &p.vocab, &lm, &cfg, None).unwrap_err().to_string();
    assert!(err.contains("west") || err.contains("east"), "{err}");
}
