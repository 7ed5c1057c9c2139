//! End-to-end protocol on a synthetic world: split, vocabularies, weak pairs,
//! autoencoder pre-training, VQA training and evaluation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use log::info;
use nvq_numkit::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FeatureStore, VqaExample};
use crate::embed::{build_vocabulary_for_setting, AnchorMode, SettingInputs, VocabSetting, DEFAULT_TAU};
use crate::error::{CoreError, Result};
use crate::evalkit::{evaluate, CategoryMap, EvalResult, Predictor, Protocol};
use crate::pairs::{generate_pairs, sentence_mine, PairSet};
use crate::seqae::{
    pretrain_schedule, AeSample, AeShape, AeTrainConfig, AeVariant, EncoderBundle, PretrainInputs, PretrainOutcome,
    PretrainSetting,
};
use crate::splitgen::{generate_split, SplitConfig, SplitOutcome, SplitPart, SplitSpec};
use crate::synthworld::{GeneratedWorld, World, WorldSpec};
use crate::text::{build_vocab, LexiconTagger, Provenance, Vocabulary};
use crate::vqa::{
    train_vqa, AnswerVocabulary, Arch, LateFusion, ModelPredictor, TrainCurves, VqaModel, VqaTrainConfig,
    DEFAULT_ANSWER_VOCAB,
};

const STREAM_WORLD: u64 = 11;
const STREAM_SPLIT: u64 = 12;
const STREAM_HOLDOUT: u64 = 13;
const STREAM_PAIRS: u64 = 14;
const STREAM_AE: u64 = 15;
const STREAM_VQA_INIT: u64 = 16;
const STREAM_VQA_TRAIN: u64 = 17;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Aux {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "text")]
    Text,
    #[serde(rename = "text+im")]
    TextIm,
}

impl Aux {
    pub fn as_str(self) -> &'static str {
        match self {
            Aux::None => "none",
            Aux::Text => "text",
            Aux::TextIm => "text+im",
        }
    }
}

impl fmt::Display for Aux {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Aux {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Aux::None),
            "text" => Ok(Aux::Text),
            "text+im" => Ok(Aux::TextIm),
            other => Err(CoreError::Config(format!("unknown auxiliary data `{other}`"))),
        }
    }
}

/// Image features: either synthetic family, their concatenation, or late fusion of both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Feat {
    A,
    B,
    EF,
    LF,
}

impl Feat {
    pub fn as_str(self) -> &'static str {
        match self {
            Feat::A => "A",
            Feat::B => "B",
            Feat::EF => "EF",
            Feat::LF => "LF",
        }
    }
}

impl fmt::Display for Feat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Feat {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Feat::A),
            "B" | "b" => Ok(Feat::B),
            "EF" | "ef" => Ok(Feat::EF),
            "LF" | "lf" => Ok(Feat::LF),
            other => Err(CoreError::Config(format!("unknown feature choice `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldOptions {
    pub n_scenes: usize,
    pub questions_per_scene: usize,
    pub feature_noise: f64,
    pub answer_noise: f64,
    pub sentences_per_noun: usize,
}

impl Default for WorldOptions {
    fn default() -> Self {
        let spec = WorldSpec::new(0);
        Self {
            n_scenes: 2000,
            questions_per_scene: 6,
            feature_noise: spec.feature_noise,
            answer_noise: spec.answer_noise,
            sentences_per_noun: spec.sentences_per_noun,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitOptions {
    pub k: usize,
    pub novel_fraction: f64,
    pub val_size: Option<usize>,
    /// Share of known-only questions held out from training for the known/novel comparison.
    pub known_test_fraction: f64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            k: 8,
            novel_fraction: 0.2,
            val_size: None,
            known_test_fraction: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub d_e: usize,
    pub d_h: usize,
    /// Fusion width of the first architecture.
    pub d: usize,
    pub init_std: f64,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            d_e: 24,
            d_h: 32,
            d: 128,
            init_std: 0.3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AeOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: Option<f64>,
}

impl Default for AeOptions {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 0.005,
            clip: Some(5.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqaOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub clip: Option<f64>,
    pub patience: usize,
}

impl Default for VqaOptions {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 0.003,
            clip: Some(5.0),
            patience: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairOptions {
    pub m: usize,
    pub n: usize,
}

impl Default for PairOptions {
    fn default() -> Self {
        Self { m: 20, n: 20 }
    }
}

/// One experiment: the world, the split, model sizes, training schedules and
/// one cell of the arch × feat × aux × vocab grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default = "default_arch", with = "arch_number")]
    pub arch: Arch,
    #[serde(default = "default_feat")]
    pub feat: Feat,
    #[serde(default = "default_aux")]
    pub aux: Aux,
    #[serde(default = "default_vocab")]
    pub vocab: PretrainSetting,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default)]
    pub world: WorldOptions,
    #[serde(default)]
    pub split: SplitOptions,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub ae: AeOptions,
    #[serde(default)]
    pub vqa: VqaOptions,
    #[serde(default)]
    pub pairs: PairOptions,
}

/// `arch` is written as `1` or `2`; the names `arch1`/`arch2` are accepted too.
mod arch_number {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::vqa::Arch;

    pub fn serialize<S: Serializer>(arch: &Arch, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(match arch {
            Arch::Arch1 => 1,
            Arch::Arch2 => 2,
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Arch, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Number(u64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Number(1) => Ok(Arch::Arch1),
            Raw::Number(2) => Ok(Arch::Arch2),
            Raw::Number(n) => Err(D::Error::custom(format!("arch must be 1 or 2, got {n}"))),
            Raw::Name(s) => s.parse().map_err(D::Error::custom),
        }
    }
}

fn default_arch() -> Arch {
    Arch::Arch1
}
fn default_feat() -> Feat {
    Feat::A
}
fn default_aux() -> Aux {
    Aux::None
}
fn default_vocab() -> PretrainSetting {
    PretrainSetting::Oracle
}
fn default_tau() -> f64 {
    DEFAULT_TAU
}

impl ExperimentConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            arch: default_arch(),
            feat: default_feat(),
            aux: default_aux(),
            vocab: default_vocab(),
            tau: default_tau(),
            world: WorldOptions::default(),
            split: SplitOptions::default(),
            model: ModelOptions::default(),
            ae: AeOptions::default(),
            vqa: VqaOptions::default(),
            pairs: PairOptions::default(),
        }
    }

    fn stream(&self, s: u64) -> u64 {
        Rng::new(self.seed).derive(s).next_u64()
    }

    pub fn world_spec(&self) -> WorldSpec {
        let mut spec = WorldSpec::new(self.stream(STREAM_WORLD));
        spec.feature_noise = self.world.feature_noise;
        spec.answer_noise = self.world.answer_noise;
        spec.sentences_per_noun = self.world.sentences_per_noun;
        spec
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            seed: self.stream(STREAM_SPLIT),
            k: self.split.k,
            novel_fraction: self.split.novel_fraction,
            val_size: self.split.val_size,
        }
    }

    pub fn ae_config(&self) -> AeTrainConfig {
        AeTrainConfig {
            epochs: self.ae.epochs,
            batch_size: self.ae.batch_size,
            lr: self.ae.lr,
            clip: self.ae.clip,
            seed: self.stream(STREAM_AE),
        }
    }

    pub fn vqa_config(&self) -> VqaTrainConfig {
        VqaTrainConfig {
            epochs: self.vqa.epochs,
            batch_size: self.vqa.batch_size,
            lr: self.vqa.lr,
            clip: self.vqa.clip,
            patience: self.vqa.patience,
            seed: self.stream(STREAM_VQA_TRAIN),
        }
    }

    pub fn pairs_seed(&self) -> u64 {
        self.stream(STREAM_PAIRS)
    }

    pub fn init_seed(&self) -> u64 {
        self.stream(STREAM_VQA_INIT)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 2.0) {
            return Err(CoreError::Config(format!("tau must lie in (0, 2), got {}", self.tau)));
        }
        if !(0.0..1.0).contains(&self.split.known_test_fraction) {
            return Err(CoreError::Config("known_test_fraction must lie in [0, 1)".into()));
        }
        if self.aux == Aux::None && self.vocab == PretrainSetting::GenExpanded {
            return Err(CoreError::Config("gen-expanded needs auxiliary pre-training".into()));
        }
        let m = &self.model;
        if m.d_e == 0 || m.d_h == 0 || m.d == 0 || !(m.init_std > 0.0) {
            return Err(CoreError::Config("model dimensions and init_std must be positive".into()));
        }
        self.world_spec().validate()
    }
}

pub fn generate_world(config: &ExperimentConfig) -> Result<GeneratedWorld> {
    World::new(config.world_spec())?.generate(config.world.n_scenes, config.world.questions_per_scene)
}

pub fn split_world(world: &GeneratedWorld, config: &ExperimentConfig) -> Result<SplitOutcome> {
    generate_split(&world.examples, &LexiconTagger::bundled(), &config.split_config())
}

/// Train, val, held-out known-only test and novel test questions.
#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    pub train: Vec<VqaExample>,
    pub val: Vec<VqaExample>,
    pub known_test: Vec<VqaExample>,
    pub test: Vec<VqaExample>,
}

/// Applies the split and carves the known-only test set out of the train part.
pub fn partition(examples: &[VqaExample], spec: &SplitSpec, config: &ExperimentConfig) -> Partition {
    let train_part = spec.select_owned(examples, SplitPart::Train);
    let k = (config.split.known_test_fraction * train_part.len() as f64).round() as usize;
    let mut rng = Rng::new(config.seed).derive(STREAM_HOLDOUT);
    let held: BTreeSet<usize> = rng.sample_indices(train_part.len(), k).into_iter().collect();
    let (mut train, mut known_test) = (Vec::new(), Vec::new());
    for (i, ex) in train_part.into_iter().enumerate() {
        if held.contains(&i) {
            known_test.push(ex);
        } else {
            train.push(ex);
        }
    }
    Partition {
        train,
        val: spec.select_owned(examples, SplitPart::Val),
        known_test,
        test: spec.select_owned(examples, SplitPart::Test),
    }
}

pub fn train_vocabulary(train: &[VqaExample]) -> Result<Vocabulary> {
    build_vocab(train.iter().map(|e| e.question.as_str()), 1, Provenance::Train)
}

/// The question vocabulary of a setting; `gen-expanded` shares the general one.
pub fn setting_vocabulary(
    setting: PretrainSetting,
    train_vocab: &Vocabulary,
    spec: &SplitSpec,
    world: &GeneratedWorld,
    tau: f64,
) -> Result<Vocabulary> {
    let tagger = LexiconTagger::bundled();
    let inputs = SettingInputs {
        novel_words: Some(&spec.novel_nouns),
        external: Some(&world.external),
        tau: Some(tau),
        anchors: AnchorMode::Nouns,
        tagger: &tagger,
    };
    let base = match setting {
        PretrainSetting::Train => VocabSetting::Train,
        PretrainSetting::Oracle => VocabSetting::Oracle,
        PretrainSetting::Gen | PretrainSetting::GenExpanded => VocabSetting::General,
    };
    Ok(build_vocabulary_for_setting(base, train_vocab, &inputs)?.with_provenance(setting.provenance()))
}

/// Weak pairs for every vocabulary word with class images and corpus sentences.
pub fn weak_pairs(world: &GeneratedWorld, vocab: &Vocabulary, config: &ExperimentConfig) -> Result<PairSet> {
    let objects: BTreeSet<String> = vocab
        .tokens()
        .iter()
        .filter(|t| world.class_images.get(t).is_some())
        .cloned()
        .collect();
    let sentences = sentence_mine(&[world.corpus.clone()], &objects);
    generate_pairs(
        &objects,
        &world.class_images,
        &sentences,
        config.pairs.m,
        config.pairs.n,
        config.pairs_seed(),
    )
}

pub fn ae_variant(aux: Aux, arch: Arch) -> AeVariant {
    match (aux, arch) {
        (Aux::TextIm, Arch::Arch1) => AeVariant::MultimodalA1,
        (Aux::TextIm, Arch::Arch2) => AeVariant::MultimodalA2,
        _ => AeVariant::Text,
    }
}

/// Feature stores a run reads: one per model (two for late fusion).
pub fn feature_stores(world: &GeneratedWorld, feat: Feat) -> Result<Vec<FeatureStore>> {
    Ok(match feat {
        Feat::A => vec![world.features_a.clone()],
        Feat::B => vec![world.features_b.clone()],
        Feat::EF => vec![world.features_a.concat(&world.features_b)?],
        Feat::LF => vec![world.features_a.clone(), world.features_b.clone()],
    })
}

/// Autoencoder samples built from weak pairs.
pub fn paired_samples(pairs: &PairSet) -> Vec<AeSample> {
    pairs
        .pairs
        .iter()
        .map(|p| AeSample::paired(p.sentence.clone(), p.features.clone()))
        .collect()
}

/// Pre-trains the autoencoder for `config.aux`/`config.vocab` on the world
/// corpus plus `paired` (required for `text+im`, ignored otherwise).
pub fn pretrain(
    world: &GeneratedWorld,
    train_vocab: &Vocabulary,
    vocab: &Vocabulary,
    paired: &[AeSample],
    config: &ExperimentConfig,
) -> Result<PretrainOutcome> {
    let mut samples: Vec<AeSample> = world.corpus.iter().map(AeSample::text).collect();
    match config.aux {
        Aux::None => return Err(CoreError::Config("aux `none` has no pre-training stage".into())),
        Aux::TextIm if paired.is_empty() => {
            return Err(CoreError::Config("text+im pre-training needs weak pairs".into()))
        }
        Aux::TextIm => samples.extend_from_slice(paired),
        Aux::Text => {}
    }
    let shape = AeShape {
        variant: ae_variant(config.aux, config.arch),
        d_e: config.model.d_e,
        d_h: config.model.d_h,
        d_i: world.class_images.dim().unwrap_or(0),
        init_std: config.model.init_std,
    };
    let inputs = PretrainInputs {
        setting: config.vocab,
        vocab,
        stage1_vocab: Some(train_vocab),
        external: Some(&world.external),
        samples: &samples,
    };
    pretrain_schedule(&inputs, shape, &config.ae_config())
}

/// Trains one VQA model per feature store, optionally initialized from a pre-trained encoder.
pub fn train_models(
    part: &Partition,
    vocab: &Vocabulary,
    answers: &AnswerVocabulary,
    stores: &[FeatureStore],
    encoder: Option<&EncoderBundle>,
    config: &ExperimentConfig,
) -> Result<Vec<(VqaModel, TrainCurves)>> {
    let m = &config.model;
    stores
        .iter()
        .enumerate()
        .map(|(i, store)| {
            let mut rng = Rng::new(config.init_seed()).derive(i as u64);
            let mut model = VqaModel::new(
                config.arch,
                vocab.clone(),
                answers.clone(),
                (m.d_e, m.d_h, m.d, store.dim()),
                m.init_std,
                &mut rng,
            )?;
            if let Some(bundle) = encoder {
                model.init_from_ae(bundle)?;
            }
            let curves = train_vqa(&mut model, &part.train, &part.val, store, &config.vqa_config())?;
            info!(
                "trained {} on {} questions, best epoch {:?}",
                config.arch,
                curves.used,
                curves.best_epoch
            );
            Ok((model, curves))
        })
        .collect()
}

/// Scores `models` on `examples`; two models are late-fused.
pub fn evaluate_models(
    models: &[VqaModel],
    stores: &[FeatureStore],
    examples: &[VqaExample],
    protocol: Protocol,
    spec: &SplitSpec,
) -> Result<EvalResult> {
    let members: Vec<ModelPredictor<'_>> = models
        .iter()
        .zip(stores)
        .map(|(model, features)| ModelPredictor { model, features })
        .collect();
    let lf;
    let predictor: &dyn Predictor = if members.len() == 1 {
        &members[0]
    } else {
        lf = LateFusion { members };
        &lf
    };
    evaluate(
        predictor,
        examples,
        protocol,
        &spec.known_nouns,
        &spec.novel_nouns,
        &CategoryMap::default(),
    )
}

/// Everything shared by the runs of one seed.
pub struct Prepared {
    pub world: GeneratedWorld,
    pub split: SplitOutcome,
    pub part: Partition,
    pub train_vocab: Vocabulary,
    pub answers: AnswerVocabulary,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let world = generate_world(config)?;
    let split = split_world(&world, config)?;
    let part = partition(&world.examples, &split.spec, config);
    let train_vocab = train_vocabulary(&part.train)?;
    let answers = AnswerVocabulary::build(&part.train, DEFAULT_ANSWER_VOCAB)?;
    Ok(Prepared {
        world,
        split,
        part,
        train_vocab,
        answers,
    })
}

/// Outcome of one grid cell.
pub struct RunOutcome {
    pub models: Vec<VqaModel>,
    pub curves: Vec<TrainCurves>,
    pub pretrain: Option<PretrainOutcome>,
    pub stores: Vec<FeatureStore>,
}

/// Vocabulary, optional pre-training and VQA training for `config`'s grid cell.
pub fn run(prepared: &Prepared, config: &ExperimentConfig) -> Result<RunOutcome> {
    let p = prepared;
    let vocab = setting_vocabulary(config.vocab, &p.train_vocab, &p.split.spec, &p.world, config.tau)?;
    let pretrain = match config.aux {
        Aux::None => None,
        aux => {
            let paired = match aux {
                Aux::TextIm => paired_samples(&weak_pairs(&p.world, &vocab, config)?),
                _ => Vec::new(),
            };
            Some(self::pretrain(&p.world, &p.train_vocab, &vocab, &paired, config)?)
        }
    };
    let stores = feature_stores(&p.world, config.feat)?;
    let encoder = pretrain.as_ref().map(|o| o.ae.export_encoder());
    let trained = train_models(&p.part, &vocab, &p.answers, &stores, encoder.as_ref(), config)?;
    let (models, curves) = trained.into_iter().unzip();
    Ok(RunOutcome {
        models,
        curves,
        pretrain,
        stores,
    })
}

impl RunOutcome {
    pub fn evaluate(&self, examples: &[VqaExample], protocol: Protocol, spec: &SplitSpec) -> Result<EvalResult> {
        evaluate_models(&self.models, &self.stores, examples, protocol, spec)
    }
}
