//! Training orchestration: masked-LM pretraining, bilingual baselines,
//! branch teachers, the full multilingual loop with optional distillation,
//! fine-tuning, and resumable checkpoints.
//!
//! One step of the multilingual loop is:
//!   phase A — for every language: sample a batch, take a denoising update;
//!   phase B — for every non-pivot language j: train j->pivot on a pivot
//!   batch built from generated j sources, then pivot->j on a j batch built
//!   from generated pivot sources. With distillation enabled, each phase-B
//!   update adds its softened-KL term before the optimizer step.
//!
//! Every stochastic choice draws from a seeded stream whose state is
//! serialized into checkpoints, so a resumed run is bit-identical to an
//! uninterrupted one.

mod manifest;
mod sampler;

pub use manifest::{LossRecord, RunManifest};
pub use sampler::{BatchSampler, SamplerState};

use crate::config::KvConfig;
use crate::data::{
    make_batches, mask_for_mlm, Batch, LangId, LanguageBranchMap, NoiseConfig, TokenId, Vocabulary,
};
use crate::decoding::{generate_pseudo_pairs, translate_batch, DecodeConfig, Strategy};
use crate::error::{Error, Result};
use crate::model::{
    init_lm, init_unmt_from_pretrained, load_tensors, params_from_map, save_tensors, Model,
    TransformerConfig,
};
use crate::objectives::{
    backtranslation_loss, combine_kd, denoising_loss, lbkd_loss, mlm_loss, skd_loss, KdConfig,
    KdMode,
};
use crate::rng::{DetRng, RngState};
use crate::tensor::adam::{AdamConfig, AdamState};
use crate::tensor::{GradTape, Tensor};
use std::collections::BTreeMap;
use std::path::Path;

/// A language's encoded corpus: (code, BOS..EOS framed sentences).
pub type Corpus = (String, Vec<Vec<TokenId>>);

// Rng stream ids, offsets from the run seed.
const STREAM_SAMPLER_BASE: u64 = 10;
const STREAM_NOISE: u64 = 50;
const STREAM_MASK: u64 = 51;
const STREAM_PIVOT: u64 = 52;
const STREAM_INIT: u64 = 53;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    /// Languages of this run; the first is the pivot.
    pub languages: Vec<String>,
    pub branches: LanguageBranchMap,
    pub steps: usize,
    pub model: TransformerConfig,
    pub adam: AdamConfig,
    pub noise: NoiseConfig,
    pub kd: KdConfig,
    pub decode: DecodeConfig,
    pub batch_tokens: usize,
    pub mask_rate: f64,
    pub seed: u64,
    /// Checkpoint cadence in steps; 0 writes only the final checkpoint.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(
        languages: Vec<String>,
        branches: LanguageBranchMap,
        model: TransformerConfig,
    ) -> TrainConfig {
        TrainConfig {
            languages,
            branches,
            steps: 1000,
            model,
            adam: AdamConfig::default(),
            noise: NoiseConfig::default(),
            kd: KdConfig::default(),
            decode: DecodeConfig::default(),
            batch_tokens: 2000,
            mask_rate: 0.15,
            seed: 7,
            checkpoint_every: 0,
        }
    }

    pub fn validate(&self, vocab: &Vocabulary) -> Result<()> {
        if self.languages.is_empty() {
            return Err(Error::Param("no languages configured".into()));
        }
        for l in &self.languages {
            vocab.lang_id(l)?;
        }
        self.branches.validate_covers(&self.languages)?;
        self.model.validate()?;
        if self.model.vocab_size != vocab.size() {
            return Err(Error::Param(format!(
                "model vocab_size {} vs vocabulary size {}",
                self.model.vocab_size,
                vocab.size()
            )));
        }
        if self.model.n_languages != vocab.n_languages() {
            return Err(Error::Param(format!(
                "model n_languages {} vs vocabulary table {}",
                self.model.n_languages,
                vocab.n_languages()
            )));
        }
        self.kd.validate()?;
        self.decode.validate()?;
        if self.batch_tokens < 3 {
            return Err(Error::Param("batch_tokens too small".into()));
        }
        if !(0.0..1.0).contains(&self.mask_rate) {
            return Err(Error::Param("mask_rate must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("languages", self.languages.join(","));
        cfg.set("branches", self.branches.to_text());
        cfg.set("steps", self.steps);
        self.model.to_config(&mut cfg);
        cfg.set("lr", self.adam.lr);
        cfg.set("beta1", self.adam.beta1);
        cfg.set("beta2", self.adam.beta2);
        cfg.set("epsilon", self.adam.epsilon);
        cfg.set("p_drop", self.noise.p_drop);
        cfg.set("k_swap", self.noise.k_swap);
        cfg.set("kd_mode", self.kd.mode.name());
        cfg.set("alpha", self.kd.alpha);
        cfg.set("temperature", self.kd.temperature);
        cfg.set(
            "decode_strategy",
            match self.decode.strategy {
                Strategy::Greedy => "greedy",
                Strategy::Beam => "beam",
            },
        );
        cfg.set("beam_size", self.decode.beam_size);
        cfg.set("max_len_factor", self.decode.max_len_factor);
        cfg.set("max_len_margin", self.decode.max_len_margin);
        cfg.set("length_penalty", self.decode.length_penalty);
        cfg.set("batch_tokens", self.batch_tokens);
        cfg.set("mask_rate", self.mask_rate);
        cfg.set("seed", self.seed);
        cfg.set("checkpoint_every", self.checkpoint_every);
        cfg
    }

    pub fn from_config(cfg: &KvConfig) -> Result<TrainConfig> {
        let languages = cfg
            .get_list("languages")
            .ok_or_else(|| Error::Config("missing `languages`".into()))?;
        let branches = LanguageBranchMap::parse(cfg.require("branches")?)?;
        let model = TransformerConfig::from_config(cfg)?;
        let mut out = TrainConfig::new(languages, branches, model);
        out.steps = cfg.get_or("steps", out.steps)?;
        out.adam.lr = cfg.get_or("lr", out.adam.lr)?;
        out.adam.beta1 = cfg.get_or("beta1", out.adam.beta1)?;
        out.adam.beta2 = cfg.get_or("beta2", out.adam.beta2)?;
        out.adam.epsilon = cfg.get_or("epsilon", out.adam.epsilon)?;
        out.noise.p_drop = cfg.get_or("p_drop", out.noise.p_drop)?;
        out.noise.k_swap = cfg.get_or("k_swap", out.noise.k_swap)?;
        out.kd.mode = KdMode::parse(cfg.raw("kd_mode").unwrap_or("none"))?;
        out.kd.alpha = cfg.get_or("alpha", out.kd.alpha)?;
        out.kd.temperature = cfg.get_or("temperature", out.kd.temperature)?;
        out.decode.strategy = match cfg.raw("decode_strategy").unwrap_or("greedy") {
            "greedy" => Strategy::Greedy,
            "beam" => Strategy::Beam,
            other => return Err(Error::Config(format!("unknown decode strategy `{other}`"))),
        };
        out.decode.beam_size = cfg.get_or("beam_size", out.decode.beam_size)?;
        out.decode.max_len_factor = cfg.get_or("max_len_factor", out.decode.max_len_factor)?;
        out.decode.max_len_margin = cfg.get_or("max_len_margin", out.decode.max_len_margin)?;
        out.decode.length_penalty = cfg.get_or("length_penalty", out.decode.length_penalty)?;
        out.batch_tokens = cfg.get_or("batch_tokens", out.batch_tokens)?;
        out.mask_rate = cfg.get_or("mask_rate", out.mask_rate)?;
        out.seed = cfg.get_or("seed", out.seed)?;
        out.checkpoint_every = cfg.get_or("checkpoint_every", out.checkpoint_every)?;
        Ok(out)
    }
}

/// A live training run.
pub struct Trainer {
    pub cfg: TrainConfig,
    vocab: Vocabulary,
    model: Model,
    params: Vec<Tensor>,
    adam: AdamState,
    samplers: Vec<BatchSampler>,
    lang_ids: Vec<LangId>,
    noise_rng: DetRng,
    mask_rng: DetRng,
    pivot_rng: DetRng,
    teachers: BTreeMap<String, Model>,
    pub manifest: RunManifest,
    step: usize,
}

fn build_samplers(
    corpora: &[Corpus],
    cfg: &TrainConfig,
    vocab: &Vocabulary,
) -> Result<(Vec<BatchSampler>, Vec<LangId>)> {
    if corpora.len() != cfg.languages.len() {
        return Err(Error::Train(format!(
            "{} corpora for {} languages",
            corpora.len(),
            cfg.languages.len()
        )));
    }
    let mut samplers = Vec::with_capacity(corpora.len());
    let mut lang_ids = Vec::with_capacity(corpora.len());
    for (i, (code, sentences)) in corpora.iter().enumerate() {
        if code != &cfg.languages[i] {
            return Err(Error::Train(format!(
                "corpus {i} is `{code}` but config expects `{}`",
                cfg.languages[i]
            )));
        }
        if sentences.is_empty() {
            return Err(Error::Train(format!("language `{code}` has an empty corpus")));
        }
        let lang = vocab.lang_id(code)?;
        let (batches, _) =
            make_batches(sentences, &vec![lang; sentences.len()], cfg.batch_tokens)?;
        samplers.push(BatchSampler::new(
            batches,
            DetRng::new(cfg.seed, STREAM_SAMPLER_BASE + i as u64),
        ));
        lang_ids.push(lang);
    }
    Ok((samplers, lang_ids))
}

impl Trainer {
    /// Start a run from an explicit model (pretrained-initialized
    /// translation model, a fresh LM, or a checkpointed model to continue).
    pub fn from_model(
        model: Model,
        corpora: &[Corpus],
        vocab: &Vocabulary,
        cfg: &TrainConfig,
        run_kind: &str,
    ) -> Result<Trainer> {
        cfg.validate(vocab)?;
        let (samplers, lang_ids) = build_samplers(corpora, cfg, vocab)?;
        let params = model.params.tensors();
        let adam = AdamState::new(cfg.adam, &params);
        Ok(Trainer {
            cfg: cfg.clone(),
            vocab: vocab.clone(),
            model,
            params,
            adam,
            samplers,
            lang_ids,
            noise_rng: DetRng::new(cfg.seed, STREAM_NOISE),
            mask_rng: DetRng::new(cfg.seed, STREAM_MASK),
            pivot_rng: DetRng::new(cfg.seed, STREAM_PIVOT),
            teachers: BTreeMap::new(),
            manifest: RunManifest::new(run_kind, &cfg.languages),
            step: 0,
        })
    }

    /// Frozen branch teachers for LBKD, keyed by branch name.
    pub fn set_teachers(&mut self, teachers: BTreeMap<String, Model>) {
        self.teachers = teachers;
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn into_parts(mut self) -> (Model, RunManifest) {
        self.manifest.final_step = self.step;
        (self.model, self.manifest)
    }

    fn adam_update(&mut self, tape: &GradTape, loss: &Tensor) -> Result<()> {
        tape.backward(loss)?;
        self.adam.step(&self.params)?;
        tape.clear();
        Ok(())
    }

    /// One step of the masked-LM pretraining loop: languages round-robin.
    fn mlm_step(&mut self) -> Result<()> {
        self.step += 1;
        let li = (self.step - 1) % self.samplers.len();
        let batch = self.samplers[li].next();
        let mut rows = Vec::with_capacity(batch.b);
        let mut targets = Vec::new();
        for i in 0..batch.b {
            let (masked, positions) = mask_for_mlm(
                batch.row(i),
                self.cfg.mask_rate,
                self.vocab.size(),
                &mut self.mask_rng,
            );
            rows.push(masked);
            if !positions.is_empty() {
                targets.push((i, positions));
            }
        }
        let masked_batch = Batch::from_rows(rows, batch.langs.clone())?;
        let tape = GradTape::new();
        let out = mlm_loss(&tape, &self.model, &masked_batch, &targets)?;
        let code = self.cfg.languages[li].clone();
        if out.value != 0.0 {
            self.adam_update(&tape, &out.loss)?;
        } else {
            tape.clear();
        }
        self.manifest.record(self.step, "MLM", format!("{code}-{code}"), out.value);
        Ok(())
    }

    /// Run `n` masked-LM pretraining steps (encoder-only model).
    pub fn train_mlm(&mut self, n: usize) -> Result<()> {
        if !self.model.is_encoder_only() {
            return Err(Error::Train("masked-LM pretraining expects an encoder-only model".into()));
        }
        for _ in 0..n {
            self.mlm_step()?;
        }
        self.manifest.final_step = self.step;
        Ok(())
    }

    /// Pick the third language for self-distillation: uniform over the
    /// languages distinct from the pivot and from `j`.
    fn choose_skd_pivot(&mut self, j: usize) -> Option<usize> {
        pick_distinct_language(self.cfg.languages.len(), (0, j), &mut self.pivot_rng)
    }

    /// Back-translation update for training direction gen -> target: sample
    /// a target-language batch, generate sources in the gen language, and
    /// take one optimizer step on the combined objective.
    fn bt_update(&mut self, target_idx: usize, gen_idx: usize) -> Result<()> {
        let gen_lang = self.lang_ids[gen_idx];
        let batch = self.samplers[target_idx].next();
        let pair_name = format!(
            "{}-{}",
            self.cfg.languages[gen_idx], self.cfg.languages[target_idx]
        );
        let pairs = generate_pseudo_pairs(&self.model, &batch, gen_lang, &self.cfg.decode)?;
        let tape = GradTape::new();
        let Some(bt) = backtranslation_loss(&tape, &self.model, &pairs)? else {
            // Every generated source was empty (an untrained model can do
            // that); skip the update but keep the record structure intact.
            self.manifest.skipped_pairs += pairs.len();
            self.manifest.record(self.step, "MB", pair_name, f64::NAN);
            tape.clear();
            return Ok(());
        };
        self.manifest.skipped_pairs += bt.skipped;

        let kd_active = self.cfg.kd.mode != KdMode::None && self.cfg.kd.alpha != 0.0;
        let mut kd_record: Option<(&'static str, f64)> = None;
        let total = if kd_active {
            let j = if target_idx == 0 { gen_idx } else { target_idx };
            match self.cfg.kd.mode {
                KdMode::Skd => {
                    let z = self.choose_skd_pivot(j).ok_or_else(|| {
                        Error::Param(
                            "self-distillation needs at least three languages".into(),
                        )
                    })?;
                    // Third-language view of the same sentences. From the
                    // pivot batch this is a trained direction; from the
                    // non-pivot batch it is zero-shot generation.
                    let z_sources = translate_batch(
                        &self.model,
                        &bt.target_batch,
                        self.lang_ids[z],
                        &self.cfg.decode,
                    )?;
                    let kd = skd_loss(
                        &tape,
                        &self.model,
                        &bt,
                        &z_sources,
                        self.lang_ids[z],
                        self.cfg.kd.temperature,
                    )?;
                    kd_record = Some(("SKD", kd.value));
                    combine_kd(&tape, &bt.loss, &kd.loss, &self.cfg.kd)?
                }
                KdMode::Lbkd => {
                    let branch =
                        self.cfg.branches.branch_of(&self.cfg.languages[j])?.to_string();
                    let teacher = self.teachers.get(&branch).ok_or_else(|| {
                        Error::Train(format!("no branch teacher for `{branch}`"))
                    })?;
                    let kd = lbkd_loss(&tape, teacher, &bt, self.cfg.kd.temperature)?;
                    kd_record = Some(("LBKD", kd.value));
                    combine_kd(&tape, &bt.loss, &kd.loss, &self.cfg.kd)?
                }
                KdMode::None => unreachable!(),
            }
        } else {
            bt.loss.clone()
        };
        let mb_value = bt.value;
        self.adam_update(&tape, &total)?;
        self.manifest.record(self.step, "MB", pair_name.clone(), mb_value);
        if let Some((kind, value)) = kd_record {
            self.manifest.record(self.step, kind, pair_name, value);
        }
        Ok(())
    }

    /// One full step of the multilingual loop.
    fn munmt_step(&mut self) -> Result<()> {
        self.step += 1;
        let n = self.cfg.languages.len();
        // Phase A: denoising update per language.
        for j in 0..n {
            let batch = self.samplers[j].next();
            let tape = GradTape::new();
            let noise = self.cfg.noise;
            let out = denoising_loss(&tape, &self.model, &batch, &noise, &mut self.noise_rng)?;
            self.adam_update(&tape, &out.loss)?;
            let code = &self.cfg.languages[j];
            self.manifest.record(self.step, "MD", format!("{code}-{code}"), out.value);
        }
        // Phase B: both back-translation directions per non-pivot language.
        for j in 1..n {
            self.bt_update(0, j)?;
            self.bt_update(j, 0)?;
        }
        Ok(())
    }

    /// Run `n` steps of the multilingual (or bilingual) training loop.
    pub fn train(&mut self, n: usize) -> Result<()> {
        if self.model.is_encoder_only() {
            return Err(Error::Train("translation training expects an encoder-decoder".into()));
        }
        if self.cfg.kd.mode == KdMode::Skd && self.cfg.languages.len() < 3 {
            return Err(Error::Param(
                "self-distillation needs at least three languages".into(),
            ));
        }
        if self.cfg.kd.mode == KdMode::Lbkd {
            for l in self.cfg.languages.iter().skip(1) {
                let branch = self.cfg.branches.branch_of(l)?;
                if !self.teachers.contains_key(branch) {
                    return Err(Error::Train(format!("no branch teacher for `{branch}`")));
                }
            }
        }
        for _ in 0..n {
            self.munmt_step()?;
        }
        self.manifest.final_step = self.step;
        Ok(())
    }

    /// Serialize model weights, optimizer state, rng streams and sampler
    /// positions. Loading with the same corpora resumes bit-identically.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut named = self.model.params.named();
        for ((name, _), (m, v)) in
            self.model.params.named().iter().zip(self.adam.moments.iter())
        {
            named.push((format!("adam.m.{name}"), Tensor::new(&[m.len()], m.clone())));
            named.push((format!("adam.v.{name}"), Tensor::new(&[v.len()], v.clone())));
        }
        let mut cfg = self.cfg.to_config();
        self.model.cfg.to_config(&mut cfg);
        cfg.set("state.step", self.step);
        cfg.set("state.adam_t", self.adam.t);
        cfg.set("state.run_kind", &self.manifest.run_kind);
        write_rng_state(&mut cfg, "rng.noise", self.noise_rng.state());
        write_rng_state(&mut cfg, "rng.mask", self.mask_rng.state());
        write_rng_state(&mut cfg, "rng.pivot", self.pivot_rng.state());
        for (i, s) in self.samplers.iter().enumerate() {
            let st = s.state();
            write_rng_state(&mut cfg, &format!("sampler.{i}.rng"), st.rng);
            cfg.set(&format!("sampler.{i}.cursor"), st.cursor);
            cfg.set(&format!("sampler.{i}.epoch"), st.epoch);
            let order: Vec<String> = st.order.iter().map(|x| x.to_string()).collect();
            cfg.set(&format!("sampler.{i}.order"), order.join(","));
        }
        save_tensors(path, &named, &cfg.to_text())
    }

    /// Restore a checkpointed run. `corpora` must be the same data the
    /// checkpoint was trained on.
    pub fn resume(path: &Path, corpora: &[Corpus], vocab: &Vocabulary) -> Result<Trainer> {
        let loaded = load_tensors(path)?;
        let kv = KvConfig::parse(&loaded.config_text)?;
        let cfg = TrainConfig::from_config(&kv)?;
        cfg.validate(vocab)?;
        let with_decoder = loaded.tensors.keys().any(|k| k == "dec.final_ln.gamma");
        let params_struct = params_from_map(&cfg.model, &loaded.tensors, with_decoder)?;
        let model = Model { cfg: cfg.model, params: params_struct };
        let params = model.params.tensors();

        let mut adam = AdamState::new(cfg.adam, &params);
        adam.t = kv.get_or("state.adam_t", 0u64)?;
        for ((name, _), (m, v)) in model.params.named().iter().zip(adam.moments.iter_mut()) {
            for (key, slot) in [(format!("adam.m.{name}"), m), (format!("adam.v.{name}"), v)] {
                let (_, data) = loaded
                    .tensors
                    .get(&key)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{key}`")))?;
                if data.len() != slot.len() {
                    return Err(Error::Checkpoint(format!("tensor `{key}` has wrong size")));
                }
                slot.copy_from_slice(data);
            }
        }

        let (fresh_samplers, lang_ids) = build_samplers(corpora, &cfg, vocab)?;
        let mut samplers = Vec::with_capacity(fresh_samplers.len());
        for (i, fresh) in fresh_samplers.into_iter().enumerate() {
            let rng = read_rng_state(&kv, &format!("sampler.{i}.rng"))?;
            let order: Vec<u32> = kv
                .require(&format!("sampler.{i}.order"))?
                .split(',')
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse().map_err(|_| Error::Checkpoint("bad sampler order".into()))
                })
                .collect::<Result<_>>()?;
            let state = SamplerState {
                rng,
                order,
                cursor: kv.get_or(&format!("sampler.{i}.cursor"), 0usize)?,
                epoch: kv.get_or(&format!("sampler.{i}.epoch"), 0u64)?,
            };
            samplers.push(BatchSampler::restore(fresh.into_batches(), state)?);
        }

        let run_kind = kv.raw("state.run_kind").unwrap_or("munmt").to_string();
        Ok(Trainer {
            manifest: RunManifest::new(&run_kind, &cfg.languages),
            step: kv.get_or("state.step", 0usize)?,
            vocab: vocab.clone(),
            model,
            params,
            adam,
            samplers,
            lang_ids,
            noise_rng: DetRng::restore(read_rng_state(&kv, "rng.noise")?),
            mask_rng: DetRng::restore(read_rng_state(&kv, "rng.mask")?),
            pivot_rng: DetRng::restore(read_rng_state(&kv, "rng.pivot")?),
            teachers: BTreeMap::new(),
            cfg,
        })
    }
}

fn write_rng_state(cfg: &mut KvConfig, prefix: &str, st: RngState) {
    cfg.set(&format!("{prefix}.seed"), st.seed);
    cfg.set(&format!("{prefix}.stream"), st.stream);
    cfg.set(&format!("{prefix}.word_pos"), st.word_pos);
}

fn read_rng_state(cfg: &KvConfig, prefix: &str) -> Result<RngState> {
    Ok(RngState {
        seed: cfg.get_or(&format!("{prefix}.seed"), 0u64)?,
        stream: cfg.get_or(&format!("{prefix}.stream"), 0u64)?,
        word_pos: cfg.get_or(&format!("{prefix}.word_pos"), 0u128)?,
    })
}

/// Train a multilingual masked language model over all languages
/// round-robin; the result initializes every translation model.
pub fn pretrain_mlm(
    corpora: &[Corpus],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(Model, RunManifest)> {
    let mut init_rng = DetRng::new(cfg.seed, STREAM_INIT);
    let lm = init_lm(&cfg.model, &mut init_rng)?;
    let mut t = Trainer::from_model(lm, corpora, vocab, cfg, "mlm")?;
    t.train_mlm(cfg.steps)?;
    Ok(t.into_parts())
}

/// The full multilingual loop, optionally with distillation. `pretrained`
/// is the encoder-only language model that initializes all weights.
pub fn train_munmt(
    corpora: &[Corpus],
    vocab: &Vocabulary,
    pretrained: &Model,
    cfg: &TrainConfig,
    teachers: Option<BTreeMap<String, Model>>,
) -> Result<(Model, RunManifest)> {
    let run_kind = if cfg.languages.len() == 2 { "sm" } else { "munmt" };
    let mut init_rng = DetRng::new(cfg.seed, STREAM_INIT);
    let model = init_unmt_from_pretrained(pretrained, &cfg.model, &mut init_rng)?;
    let mut t = Trainer::from_model(model, corpora, vocab, cfg, run_kind)?;
    if let Some(teachers) = teachers {
        t.set_teachers(teachers);
    }
    t.train(cfg.steps)?;
    Ok(t.into_parts())
}

/// Bilingual baseline: exactly the multilingual loop restricted to two
/// languages with distillation off.
pub fn train_unmt_pair(
    corpora: &[Corpus],
    vocab: &Vocabulary,
    pretrained: &Model,
    cfg: &TrainConfig,
) -> Result<(Model, RunManifest)> {
    if cfg.languages.len() != 2 {
        return Err(Error::Param(format!(
            "pair training needs exactly 2 languages, got {}",
            cfg.languages.len()
        )));
    }
    let mut cfg = cfg.clone();
    cfg.kd.mode = KdMode::None;
    train_munmt(corpora, vocab, pretrained, &cfg, None)
}

/// Branch teacher: multilingual training restricted to one branch's
/// languages. The pivot's corpus is always included so the teacher can
/// translate to and from the pivot.
pub fn train_lbunmt(
    corpora: &[Corpus],
    vocab: &Vocabulary,
    pretrained: &Model,
    cfg: &TrainConfig,
) -> Result<(Model, RunManifest)> {
    let non_pivot: Vec<&String> = cfg.languages.iter().skip(1).collect();
    if non_pivot.is_empty() {
        return Err(Error::Param("branch training needs at least one non-pivot language".into()));
    }
    let first_branch = cfg.branches.branch_of(non_pivot[0])?.to_string();
    for l in &non_pivot[1..] {
        let b = cfg.branches.branch_of(l)?;
        if b != first_branch {
            return Err(Error::Train(format!(
                "branch training mixes branches `{first_branch}` and `{b}`"
            )));
        }
    }
    let mut cfg = cfg.clone();
    cfg.kd.mode = KdMode::None;
    let (model, mut manifest) = train_munmt(corpora, vocab, pretrained, &cfg, None)?;
    manifest.run_kind = "lbunmt".into();
    Ok((model, manifest))
}

/// Continue training an existing translation model on one language pair.
pub fn finetune_pair(
    model: Model,
    corpora: &[Corpus],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
) -> Result<(Model, RunManifest)> {
    if cfg.languages.len() != 2 {
        return Err(Error::Param(format!(
            "fine-tuning needs exactly 2 languages, got {}",
            cfg.languages.len()
        )));
    }
    let mut cfg = cfg.clone();
    cfg.kd.mode = KdMode::None;
    let mut t = Trainer::from_model(model, corpora, vocab, &cfg, "ft")?;
    t.train(cfg.steps)?;
    Ok(t.into_parts())
}

/// Uniform choice among languages excluding two indices; factored out so
/// the selection distribution is testable in isolation.
pub fn pick_distinct_language(n: usize, exclude: (usize, usize), rng: &mut DetRng) -> Option<usize> {
    let eligible: Vec<usize> = (0..n).filter(|&k| k != exclude.0 && k != exclude.1).collect();
    if eligible.is_empty() {
        None
    } else {
        Some(eligible[rng.below(eligible.len())])
    }
}
