use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;

use nvq_core::data::{read_json, read_jsonl, write_json, write_jsonl, VqaExample};
use nvq_core::evalkit::{drop_report, is_novel_question, DropReport, EvalResult, Protocol};
use nvq_core::experiment::{
    ae_variant, evaluate_models, feature_stores, partition, pretrain, setting_vocabulary, split_world,
    train_models, train_vocabulary, weak_pairs, Aux, ExperimentConfig, Feat, Partition,
};
use nvq_core::pairs::PairRecord;
use nvq_core::seqae::{AeSample, EncoderBundle, PretrainSetting};
use nvq_core::splitgen::{audit, split_report, SplitSpec};
use nvq_core::synthworld::GeneratedWorld;
use nvq_core::text::{LexiconTagger, Vocabulary};
use nvq_core::vqa::{AnswerVocabulary, Arch, TrainCurves, VqaModel, DEFAULT_ANSWER_VOCAB};
use nvq_core::CoreError;

use crate::error::{CliError, Result};
use crate::manifest::{config_hash, fresh_dir, key_of, require, seal, Manifest, TOOL, VERSION};
use crate::report::render;

const SPEC_FILE: &str = "spec.json";
const PARTITION_FILE: &str = "partition.json";
const TRAIN_VOCAB_FILE: &str = "train_vocab.tsv";
const ANSWERS_FILE: &str = "answers.txt";
const VOCAB_FILE: &str = "vocab.tsv";
const PAIRS_FILE: &str = "pairs.jsonl";
const ENCODER_DIR: &str = "encoder";
const RESULT_FILE: &str = "result.json";

/// Where each stage's artifacts live under the output root, and the
/// configuration keys each stage depends on.
pub struct Layout<'a> {
    pub config: &'a ExperimentConfig,
    pub root: PathBuf,
}

impl<'a> Layout<'a> {
    pub fn new(config: &'a ExperimentConfig, root: &Path) -> Self {
        Self {
            config,
            root: root.to_path_buf(),
        }
    }

    pub fn cell(&self) -> String {
        let c = self.config;
        format!("{}-{}-{}-{}", c.arch, c.feat, c.aux, c.vocab)
    }

    pub fn world_dir(&self) -> PathBuf {
        self.root.join("world")
    }

    pub fn split_dir(&self) -> PathBuf {
        self.root.join("split")
    }

    pub fn vocab_dir(&self) -> PathBuf {
        self.root.join("vocab").join(self.config.vocab.as_str())
    }

    pub fn pairs_dir(&self) -> PathBuf {
        self.root.join("pairs").join(self.config.vocab.as_str())
    }

    pub fn ae_dir(&self) -> PathBuf {
        let c = self.config;
        self.root.join("ae").join(format!("{}-{}", ae_variant(c.aux, c.arch).as_str(), c.vocab))
    }

    pub fn model_dir(&self) -> PathBuf {
        self.root.join("models").join(self.cell())
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval").join(self.cell())
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn world_key(&self) -> Result<String> {
        key_of(&json!({"seed": self.config.seed, "world": self.config.world}))
    }

    pub fn split_key(&self) -> Result<String> {
        key_of(&json!({"world": self.world_key()?, "split": self.config.split}))
    }

    pub fn vocab_key(&self) -> Result<String> {
        let c = self.config;
        key_of(&json!({"split": self.split_key()?, "vocab": c.vocab, "tau": c.tau}))
    }

    pub fn pairs_key(&self) -> Result<String> {
        key_of(&json!({"vocab": self.vocab_key()?, "pairs": self.config.pairs}))
    }

    pub fn ae_key(&self) -> Result<String> {
        let c = self.config;
        let pairs = if c.aux == Aux::TextIm { Some(self.pairs_key()?) } else { None };
        key_of(&json!({
            "vocab": self.vocab_key()?,
            "pairs": pairs,
            "variant": ae_variant(c.aux, c.arch),
            "d_e": c.model.d_e,
            "d_h": c.model.d_h,
            "init_std": c.model.init_std,
            "ae": c.ae,
        }))
    }

    pub fn train_key(&self) -> Result<String> {
        let c = self.config;
        let ae = if c.aux == Aux::None { None } else { Some(self.ae_key()?) };
        key_of(&json!({
            "vocab": self.vocab_key()?,
            "ae": ae,
            "aux": c.aux,
            "arch": c.arch,
            "feat": c.feat,
            "model": c.model,
            "vqa": c.vqa,
        }))
    }

    pub fn eval_key(&self) -> Result<String> {
        key_of(&json!({"train": self.train_key()?}))
    }

    fn header(&self, command: &str, stage_key: &str) -> Result<Manifest> {
        Manifest::header(command, self.config, stage_key)
    }
}

/// Question ids of each part of the partition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub known_test: Vec<String>,
    pub test: Vec<String>,
}

impl PartitionIds {
    fn of(part: &Partition) -> Self {
        let ids = |v: &[VqaExample]| v.iter().map(|e| e.qid.clone()).collect();
        Self {
            train: ids(&part.train),
            val: ids(&part.val),
            known_test: ids(&part.known_test),
            test: ids(&part.test),
        }
    }

    fn resolve(&self, examples: &[VqaExample]) -> Result<Partition> {
        let by_id: BTreeMap<&str, &VqaExample> = examples.iter().map(|e| (e.qid.as_str(), e)).collect();
        let pick = |ids: &[String]| -> Result<Vec<VqaExample>> {
            ids.iter()
                .map(|id| {
                    by_id
                        .get(id.as_str())
                        .map(|e| (*e).clone())
                        .ok_or_else(|| CoreError::Data(format!("partition names unknown question `{id}`")).into())
                })
                .collect()
        };
        Ok(Partition {
            train: pick(&self.train)?,
            val: pick(&self.val)?,
            known_test: pick(&self.known_test)?,
            test: pick(&self.test)?,
        })
    }
}

/// Tool, version, configuration hash and seed embedded in JSON outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub tool: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    fn of(config: &ExperimentConfig) -> Result<Self> {
        Ok(Self {
            tool: TOOL.into(),
            version: VERSION.into(),
            config_hash: config_hash(config)?,
            seed: config.seed,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResults {
    pub oeq: EvalResult,
    pub mcq: EvalResult,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellId {
    pub arch: u8,
    pub feat: Feat,
    pub aux: Aux,
    pub vocab: PretrainSetting,
}

/// Evaluation of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalFile {
    pub provenance: Provenance,
    pub cell: CellId,
    /// Held-out questions with known nouns only.
    pub known_test: ProtocolResults,
    /// Every question of the novel test split.
    pub test: ProtocolResults,
    /// Test questions naming novel nouns and no known noun.
    pub novel_only: ProtocolResults,
    /// `known_test` against `novel_only`.
    pub drop: Vec<DropReport>,
}

struct SplitArtifacts {
    world: GeneratedWorld,
    spec: SplitSpec,
    part: Partition,
    train_vocab: Vocabulary,
    answers: AnswerVocabulary,
}

fn load_world(l: &Layout<'_>) -> Result<GeneratedWorld> {
    let dir = l.world_dir();
    require(&dir, &l.world_key()?, "genworld")?;
    Ok(GeneratedWorld::load(&dir)?)
}

fn load_split(l: &Layout<'_>) -> Result<SplitArtifacts> {
    let world = load_world(l)?;
    let dir = l.split_dir();
    require(&dir, &l.split_key()?, "split")?;
    let spec: SplitSpec = read_json(dir.join(SPEC_FILE))?;
    let ids: PartitionIds = read_json(dir.join(PARTITION_FILE))?;
    let part = ids.resolve(&world.examples)?;
    let train_vocab = Vocabulary::load(dir.join(TRAIN_VOCAB_FILE), nvq_core::text::Provenance::Train)?;
    let answers = AnswerVocabulary::load(dir.join(ANSWERS_FILE))?;
    Ok(SplitArtifacts {
        world,
        spec,
        part,
        train_vocab,
        answers,
    })
}

fn load_vocab(l: &Layout<'_>) -> Result<Vocabulary> {
    let dir = l.vocab_dir();
    require(&dir, &l.vocab_key()?, "expand-vocab")?;
    Ok(Vocabulary::load(dir.join(VOCAB_FILE), l.config.vocab.provenance())?)
}

pub fn genworld(l: &Layout<'_>) -> Result<()> {
    let dir = l.world_dir();
    fresh_dir(&dir)?;
    let world = nvq_core::experiment::generate_world(l.config)?;
    world.save(&dir)?;
    info!("world: {} scenes, {} questions", world.scenes.len(), world.examples.len());
    seal(&dir, l.header("genworld", &l.world_key()?)?)?;
    Ok(())
}

pub fn split(l: &Layout<'_>) -> Result<()> {
    let world = load_world(l)?;
    let outcome = split_world(&world, l.config)?;
    let tagger = LexiconTagger::bundled();
    let audited = audit(&outcome.spec, &world.examples, &tagger);
    if !audited.passed() {
        return Err(CoreError::Data(format!(
            "split audit failed: {} leaks, {} test questions without a novel noun",
            audited.leaks.len(),
            audited.test_without_novel.len()
        ))
        .into());
    }
    let part = partition(&world.examples, &outcome.spec, l.config);
    let train_vocab = train_vocabulary(&part.train)?;
    let answers = AnswerVocabulary::build(&part.train, DEFAULT_ANSWER_VOCAB)?;

    let dir = l.split_dir();
    fresh_dir(&dir)?;
    write_json(dir.join(SPEC_FILE), &outcome.spec)?;
    write_json(dir.join("clustering.json"), &outcome.clustering)?;
    write_json(dir.join("warnings.json"), &outcome.warnings)?;
    write_json(dir.join("audit.json"), &audited)?;
    write_json(dir.join("report.json"), &split_report(&outcome.spec, &world.examples, &tagger))?;
    write_json(dir.join(PARTITION_FILE), &PartitionIds::of(&part))?;
    train_vocab.save(dir.join(TRAIN_VOCAB_FILE))?;
    answers.save(dir.join(ANSWERS_FILE))?;
    info!(
        "split: novel {:?}; train {} val {} known-test {} test {}",
        outcome.spec.novel_nouns,
        part.train.len(),
        part.val.len(),
        part.known_test.len(),
        part.test.len()
    );
    seal(&dir, l.header("split", &l.split_key()?)?)?;
    Ok(())
}

#[derive(Serialize)]
struct VocabSummary<'a> {
    setting: PretrainSetting,
    size: usize,
    train_size: usize,
    added: Vec<&'a str>,
    novel_covered: Vec<&'a str>,
    novel_missing: Vec<&'a str>,
}

pub fn expand_vocab(l: &Layout<'_>) -> Result<()> {
    let s = load_split(l)?;
    let vocab = setting_vocabulary(l.config.vocab, &s.train_vocab, &s.spec, &s.world, l.config.tau)?;
    let (novel_covered, novel_missing) = s.spec.novel_nouns.iter().map(String::as_str).partition(|w| vocab.contains(w));
    let summary = VocabSummary {
        setting: l.config.vocab,
        size: vocab.len(),
        train_size: s.train_vocab.len(),
        added: vocab.tokens().iter().map(String::as_str).filter(|t| !s.train_vocab.contains(t)).collect(),
        novel_covered,
        novel_missing,
    };
    let dir = l.vocab_dir();
    fresh_dir(&dir)?;
    vocab.save(dir.join(VOCAB_FILE))?;
    write_json(dir.join("summary.json"), &summary)?;
    info!("vocabulary {}: {} words", l.config.vocab, vocab.len());
    seal(&dir, l.header("expand-vocab", &l.vocab_key()?)?)?;
    Ok(())
}

pub fn gen_pairs(l: &Layout<'_>) -> Result<()> {
    let world = load_world(l)?;
    let vocab = load_vocab(l)?;
    let set = weak_pairs(&world, &vocab, l.config)?;
    let records: Vec<PairRecord> = set.pairs.iter().map(|p| p.record()).collect();
    let mut per_word: BTreeMap<&str, usize> = BTreeMap::new();
    for p in &set.pairs {
        *per_word.entry(p.word.as_str()).or_default() += 1;
    }
    let dir = l.pairs_dir();
    fresh_dir(&dir)?;
    write_jsonl(dir.join(PAIRS_FILE), &records)?;
    write_json(dir.join("skipped.json"), &set.skipped)?;
    write_json(dir.join("summary.json"), &json!({"total": records.len(), "per_word": per_word}))?;
    info!("weak pairs: {}", records.len());
    seal(&dir, l.header("gen-pairs", &l.pairs_key()?)?)?;
    Ok(())
}

fn load_paired(l: &Layout<'_>, world: &GeneratedWorld) -> Result<Vec<AeSample>> {
    let dir = l.pairs_dir();
    require(&dir, &l.pairs_key()?, "gen-pairs")?;
    let records: Vec<PairRecord> = read_jsonl(dir.join(PAIRS_FILE))?;
    records
        .iter()
        .map(|r| Ok(AeSample::paired(r.sentence.clone(), r.resolve(&world.class_images)?)))
        .collect()
}

pub fn pretrain_ae(l: &Layout<'_>) -> Result<()> {
    if l.config.aux == Aux::None {
        return Err(CliError::Config("pretrain-ae needs aux `text` or `text+im`".into()));
    }
    let s = load_split(l)?;
    let vocab = load_vocab(l)?;
    let paired = if l.config.aux == Aux::TextIm { load_paired(l, &s.world)? } else { Vec::new() };
    let outcome = pretrain(&s.world, &s.train_vocab, &vocab, &paired, l.config)?;
    let dir = l.ae_dir();
    fresh_dir(&dir)?;
    outcome.ae.export_encoder().save(dir.join(ENCODER_DIR))?;
    write_json(
        dir.join("training.json"),
        &json!({
            "losses": outcome.losses,
            "stage1_losses": outcome.stage1_losses,
            "alignment": outcome.alignment.as_ref().map(|a| json!({
                "shared_words": a.shared_words.len(),
                "residual_frobenius": a.residual_frobenius,
                "ridge": a.ridge,
            })),
            "expanded_words": outcome.expansion.as_ref().map(|e| &e.words),
            "expansion_skipped": outcome.expansion.as_ref().map(|e| &e.skipped),
        }),
    )?;
    info!("autoencoder: final loss {:?}", outcome.losses.last());
    seal(&dir, l.header("pretrain-ae", &l.ae_key()?)?)?;
    Ok(())
}

fn arch_number(arch: Arch) -> u8 {
    match arch {
        Arch::Arch1 => 1,
        Arch::Arch2 => 2,
    }
}

pub fn train(l: &Layout<'_>) -> Result<()> {
    let s = load_split(l)?;
    let vocab = load_vocab(l)?;
    let encoder = match l.config.aux {
        Aux::None => None,
        _ => {
            let dir = l.ae_dir();
            require(&dir, &l.ae_key()?, "pretrain-ae")?;
            Some(EncoderBundle::load(dir.join(ENCODER_DIR))?)
        }
    };
    let stores = feature_stores(&s.world, l.config.feat)?;
    let trained = train_models(&s.part, &vocab, &s.answers, &stores, encoder.as_ref(), l.config)?;
    let dir = l.model_dir();
    fresh_dir(&dir)?;
    let mut curves: Vec<&TrainCurves> = Vec::new();
    for (i, (model, c)) in trained.iter().enumerate() {
        model.save(dir.join(format!("model_{i}")))?;
        curves.push(c);
    }
    write_json(dir.join("curves.json"), &curves)?;
    seal(&dir, l.header("train", &l.train_key()?)?)?;
    Ok(())
}

pub fn eval(l: &Layout<'_>) -> Result<()> {
    let s = load_split(l)?;
    let model_dir = l.model_dir();
    require(&model_dir, &l.train_key()?, "train")?;
    let stores = feature_stores(&s.world, l.config.feat)?;
    let models = (0..stores.len())
        .map(|i| VqaModel::load(model_dir.join(format!("model_{i}"))))
        .collect::<nvq_core::Result<Vec<_>>>()?;
    let novel_only: Vec<VqaExample> = s
        .part
        .test
        .iter()
        .filter(|e| is_novel_question(&e.question, &s.spec.known_nouns, &s.spec.novel_nouns))
        .cloned()
        .collect();
    let both = |examples: &[VqaExample]| -> Result<ProtocolResults> {
        Ok(ProtocolResults {
            oeq: evaluate_models(&models, &stores, examples, Protocol::Oeq, &s.spec)?,
            mcq: evaluate_models(&models, &stores, examples, Protocol::Mcq, &s.spec)?,
        })
    };
    let known_test = both(&s.part.known_test)?;
    let test = both(&s.part.test)?;
    let novel = both(&novel_only)?;
    let drop = vec![
        drop_report(&known_test.oeq, &novel.oeq)?,
        drop_report(&known_test.mcq, &novel.mcq)?,
    ];
    let c = l.config;
    let file = EvalFile {
        provenance: Provenance::of(c)?,
        cell: CellId {
            arch: arch_number(c.arch),
            feat: c.feat,
            aux: c.aux,
            vocab: c.vocab,
        },
        known_test,
        test,
        novel_only: novel,
        drop,
    };
    let dir = l.eval_dir();
    fresh_dir(&dir)?;
    write_json(dir.join(RESULT_FILE), &file)?;
    write_jsonl(dir.join("predictions.jsonl"), &file.test.oeq.records)?;
    seal(&dir, l.header("eval", &l.eval_key()?)?)?;
    Ok(())
}

/// Every evaluated cell under the output root, ordered by directory name.
pub fn collect_evals(root: &Path) -> Result<Vec<(String, EvalFile, Manifest)>> {
    let eval_root = root.join("eval");
    if !eval_root.is_dir() {
        return Err(CliError::Missing {
            path: eval_root.display().to_string(),
            producer: "eval",
        });
    }
    let mut names: Vec<String> = fs::read_dir(&eval_root)?
        .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect::<std::io::Result<_>>()?;
    names.sort();
    let mut out = Vec::new();
    for name in names {
        let dir = eval_root.join(&name);
        let manifest_path = dir.join(crate::manifest::MANIFEST);
        if !manifest_path.is_file() {
            continue;
        }
        let manifest: Manifest = read_json(manifest_path)?;
        let file: EvalFile = read_json(dir.join(RESULT_FILE))?;
        out.push((name, file, manifest));
    }
    Ok(out)
}

pub fn report(l: &Layout<'_>) -> Result<String> {
    let evals = collect_evals(&l.root)?;
    if evals.is_empty() {
        return Err(CliError::Missing {
            path: l.root.join("eval").display().to_string(),
            producer: "eval",
        });
    }
    let seeds: BTreeSet<u64> = evals.iter().map(|(_, f, _)| f.provenance.seed).collect();
    let text = render(&evals.iter().map(|(n, f, _)| (n.as_str(), f)).collect::<Vec<_>>());
    let key = key_of(&json!(evals
        .iter()
        .map(|(n, _, m)| json!({"cell": n, "stage_key": m.stage_key}))
        .collect::<Vec<_>>()))?;
    let dir = l.report_dir();
    fresh_dir(&dir)?;
    fs::write(dir.join("report.md"), &text)?;
    write_json(
        dir.join("report.json"),
        &json!({
            "provenance": Provenance::of(l.config)?,
            "seeds": seeds,
            "cells": evals.iter().map(|(n, f, _)| json!({"cell": n, "result": f})).collect::<Vec<_>>(),
        }),
    )?;
    seal(&dir, l.header("report", &key)?)?;
    Ok(text)
}
