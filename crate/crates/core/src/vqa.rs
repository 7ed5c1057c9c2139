//! The two answer-classification architectures, their training loop and
//! initialization from pre-trained encoders.
//!
//! `Arch1` encodes the question with an LSTM and fuses it with the image as
//! `W_QI (tanh(W_Q x_Q) ⊙ tanh(W_I x_I))`. `Arch2` projects the image into the
//! word space, reads it as the first token and classifies the final state.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use nvq_numkit::{clip_global_norm, Adam, AdamConfig, Matrix, Rng, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::data::{normalize_answer, read_json, write_json, FeatureStore, VqaExample};
use crate::error::{CoreError, Result};
use crate::evalkit::{question_accuracy, Predictor, Protocol};
use crate::nn::{bind, expect_shape, run_lstm, zeros_var, LstmParams, LstmVars};
use crate::seqae::{EncoderBundle, MAX_SENTENCE_LEN};
use crate::text::{Vocabulary, BOS_ID, EOS_ID};

pub const DEFAULT_ANSWER_VOCAB: usize = 1000;
pub const CHECKPOINT_FORMAT: &str = "nvq-vqa-checkpoint";

/// Whole answers ordered by training frequency (ties lexicographic).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl AnswerVocabulary {
    pub fn from_answers(answers: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(answers.len());
        for (i, a) in answers.iter().enumerate() {
            if index.insert(a.clone(), i).is_some() {
                return Err(CoreError::Data(format!("duplicate answer `{a}`")));
            }
        }
        if answers.is_empty() {
            return Err(CoreError::Data("answer vocabulary is empty".into()));
        }
        Ok(Self { answers, index })
    }

    /// The `max` most frequent normalized answers over all annotations.
    pub fn build(train: &[VqaExample], max: usize) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for ex in train {
            for a in &ex.answers {
                *counts.entry(normalize_answer(a)).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().filter(|(a, _)| !a.is_empty()).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max);
        Self::from_answers(ranked.into_iter().map(|(a, _)| a).collect())
    }

    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn get(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    pub fn answer(&self, i: usize) -> &str {
        &self.answers[i]
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut s = String::new();
        for a in &self.answers {
            s.push_str(a);
            s.push('\n');
        }
        fs::write(path, s)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_answers(text.lines().map(String::from).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Arch1,
    Arch2,
}

impl Arch {
    pub fn as_str(self) -> &'static str {
        match self {
            Arch::Arch1 => "arch1",
            Arch::Arch2 => "arch2",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Arch {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "arch1" | "1" | "A1" | "a1" => Ok(Arch::Arch1),
            "arch2" | "2" | "A2" | "a2" => Ok(Arch::Arch2),
            other => Err(CoreError::Config(format!("unknown architecture `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaDims {
    pub vocab: usize,
    pub answers: usize,
    pub d_e: usize,
    pub d_h: usize,
    /// Common fusion space of `Arch1`; unused by `Arch2`.
    pub d: usize,
    pub d_i: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    /// `W_Q` (`d × d_h`), `W_I` (`d × d_I`), `W_QI` (`|A| × d`).
    Arch1 { w_q: Matrix, w_i: Matrix, w_qi: Matrix },
    /// `W_e` (`d_e × d_I`) and the answer projection (`|A| × d_h`).
    Arch2 { w_e: Matrix, w_out: Matrix },
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqaModel {
    vocab: Vocabulary,
    answers: AnswerVocabulary,
    pub embed: Matrix,
    pub lstm: LstmParams,
    pub head: Head,
}

impl VqaModel {
    pub fn new(
        arch: Arch,
        vocab: Vocabulary,
        answers: AnswerVocabulary,
        dims: (usize, usize, usize, usize),
        init_std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let (d_e, d_h, d, d_i) = dims;
        if d_e == 0 || d_h == 0 || d_i == 0 || (arch == Arch::Arch1 && d == 0) {
            return Err(CoreError::Config("model dimensions must be positive".into()));
        }
        let embed = Matrix::random_normal(vocab.len(), d_e, init_std, rng);
        let lstm = LstmParams::new(d_e, d_h, init_std, rng);
        let head = match arch {
            Arch::Arch1 => Head::Arch1 {
                w_q: Matrix::random_normal(d, d_h, init_std, rng),
                w_i: Matrix::random_normal(d, d_i, init_std, rng),
                w_qi: Matrix::random_normal(answers.len(), d, init_std, rng),
            },
            Arch::Arch2 => Head::Arch2 {
                w_e: Matrix::random_normal(d_e, d_i, init_std, rng),
                w_out: Matrix::random_normal(answers.len(), d_h, init_std, rng),
            },
        };
        Ok(Self {
            vocab,
            answers,
            embed,
            lstm,
            head,
        })
    }

    pub fn arch(&self) -> Arch {
        match self.head {
            Head::Arch1 { .. } => Arch::Arch1,
            Head::Arch2 { .. } => Arch::Arch2,
        }
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn answers(&self) -> &AnswerVocabulary {
        &self.answers
    }

    pub fn dims(&self) -> VqaDims {
        let (d, d_i) = match &self.head {
            Head::Arch1 { w_i, .. } => (w_i.rows(), w_i.cols()),
            Head::Arch2 { w_e, .. } => (0, w_e.cols()),
        };
        VqaDims {
            vocab: self.vocab.len(),
            answers: self.answers.len(),
            d_e: self.embed.cols(),
            d_h: self.lstm.hidden_dim(),
            d,
            d_i,
        }
    }

    /// Named parameter tensors in a fixed order.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let mut out = vec![
            ("embed", &self.embed),
            ("lstm_w", &self.lstm.w),
            ("lstm_u", &self.lstm.u),
            ("lstm_b", &self.lstm.b),
        ];
        match &self.head {
            Head::Arch1 { w_q, w_i, w_qi } => out.extend([("w_q", w_q), ("w_i", w_i), ("w_qi", w_qi)]),
            Head::Arch2 { w_e, w_out } => out.extend([("w_e", w_e), ("w_out", w_out)]),
        }
        out
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.named_tensors().into_iter().map(|(_, m)| m).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embed, &mut self.lstm.w, &mut self.lstm.u, &mut self.lstm.b];
        match &mut self.head {
            Head::Arch1 { w_q, w_i, w_qi } => out.extend([w_q, w_i, w_qi]),
            Head::Arch2 { w_e, w_out } => out.extend([w_e, w_out]),
        }
        out
    }

    pub fn encode_question(&self, question: &str) -> Vec<usize> {
        let mut ids = self.vocab.encode(question).ids;
        ids.truncate(MAX_SENTENCE_LEN);
        ids
    }

    fn logits_on(&self, t: &mut Tape, v: &[Var], ids: &[usize], image: &[f64]) -> Result<Var> {
        let dims = self.dims();
        if image.len() != dims.d_i {
            return Err(CoreError::ShapeMismatch {
                tensor: "image feature".into(),
                expected: (dims.d_i, 1),
                found: (image.len(), 1),
            });
        }
        let (embed, lstm) = (v[0], LstmVars::from_slice(&v[1..4], dims.d_h));
        let x_i = t.constant(Matrix::column(image.to_vec())?)?;
        let h0 = zeros_var(t, dims.d_h)?;
        let c0 = zeros_var(t, dims.d_h)?;
        match self.arch() {
            Arch::Arch1 => {
                let mut inputs = Vec::with_capacity(ids.len() + 2);
                for &id in [BOS_ID].iter().chain(ids).chain(&[EOS_ID]) {
                    inputs.push(t.gather_row(embed, id)?);
                }
                let (x_q, _) = run_lstm(t, lstm, &inputs, h0, c0)?;
                let f = fuse_on(t, v[4], x_q, v[5], x_i)?;
                Ok(t.matmul(v[6], f)?)
            }
            Arch::Arch2 => {
                let mut inputs = Vec::with_capacity(ids.len() + 1);
                inputs.push(t.matmul(v[4], x_i)?);
                for &id in ids {
                    inputs.push(t.gather_row(embed, id)?);
                }
                let (h, _) = run_lstm(t, lstm, &inputs, h0, c0)?;
                Ok(t.matmul(v[5], h)?)
            }
        }
    }

    /// Differentiable cross-entropy with parameters given in [`VqaModel::tensors`] order.
    pub fn loss_with(&self, t: &mut Tape, params: &[Var], ids: &[usize], image: &[f64], target: usize) -> Result<Var> {
        let logits = self.logits_on(t, params, ids, image)?;
        Ok(t.softmax_cross_entropy(logits, target)?)
    }

    /// Final question-LSTM state `x_Q` (`Arch1` framing).
    pub fn question_state(&self, question: &str) -> Result<Vec<f64>> {
        let ids = self.encode_question(question);
        let mut t = Tape::new();
        let v = bind(&mut t, &self.tensors(), false)?;
        let mut inputs = Vec::with_capacity(ids.len() + 2);
        for &id in [BOS_ID].iter().chain(&ids).chain(&[EOS_ID]) {
            inputs.push(t.gather_row(v[0], id)?);
        }
        let d_h = self.lstm.hidden_dim();
        let h0 = zeros_var(&mut t, d_h)?;
        let c0 = zeros_var(&mut t, d_h)?;
        let (h, _) = run_lstm(&mut t, LstmVars::from_slice(&v[1..4], d_h), &inputs, h0, c0)?;
        Ok(t.value(h).data().to_vec())
    }

    pub fn logits_ids(&self, ids: &[usize], image: &[f64]) -> Result<Vec<f64>> {
        let mut t = Tape::new();
        let v = bind(&mut t, &self.tensors(), false)?;
        let out = self.logits_on(&mut t, &v, ids, image)?;
        Ok(t.value(out).data().to_vec())
    }

    pub fn logits(&self, question: &str, image: &[f64]) -> Result<Vec<f64>> {
        self.logits_ids(&self.encode_question(question), image)
    }

    pub fn predict(&self, question: &str, image: &[f64], choices: Option<&[String]>) -> Result<String> {
        let logits = self.logits(question, image)?;
        Ok(choose(&self.answers, &logits, choices))
    }

    /// Copies the word embeddings and question LSTM from `bundle`; for `Arch2`
    /// the image projection too when the bundle carries one.
    pub fn init_from_ae(&mut self, bundle: &EncoderBundle) -> Result<()> {
        if bundle.setting != self.vocab.provenance() {
            return Err(CoreError::Provenance(format!(
                "bundle vocabulary is `{}`, model vocabulary is `{}`",
                bundle.setting,
                self.vocab.provenance()
            )));
        }
        if bundle.vocab_hash() != self.vocab.hash() {
            return Err(CoreError::Provenance("bundle vocabulary hash differs from the model's".into()));
        }
        expect_shape("embed", &bundle.embed, self.embed.shape())?;
        self.lstm.assign(&bundle.encoder, "lstm")?;
        self.embed.clone_from(&bundle.embed);
        if let (Head::Arch2 { w_e, .. }, Some(p)) = (&mut self.head, &bundle.img_proj) {
            expect_shape("w_e", p, w_e.shape())?;
            w_e.clone_from(p);
        }
        Ok(())
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_json(
            dir.join("manifest.json"),
            &CheckpointManifest {
                format: CHECKPOINT_FORMAT.into(),
                arch: self.arch(),
                dims: self.dims(),
                vocab_hash: self.vocab.hash(),
                setting: self.vocab.provenance(),
            },
        )?;
        self.vocab.save(dir.join("vocab.tsv"))?;
        self.answers.save(dir.join("answers.txt"))?;
        for (name, m) in self.named_tensors() {
            m.save(dir.join(format!("{name}.nvqm")))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: CheckpointManifest = read_json(dir.join("manifest.json"))?;
        if manifest.format != CHECKPOINT_FORMAT {
            return Err(CoreError::Data(format!("not a VQA checkpoint: format `{}`", manifest.format)));
        }
        let vocab = Vocabulary::load(dir.join("vocab.tsv"), manifest.setting)?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(CoreError::Provenance("checkpoint vocabulary does not match its manifest hash".into()));
        }
        let answers = AnswerVocabulary::load(dir.join("answers.txt"))?;
        let VqaDims { d_e, d_h, d, d_i, .. } = manifest.dims;
        let mut model = Self::new(manifest.arch, vocab, answers, (d_e, d_h, d.max(1), d_i), 0.0, &mut Rng::new(0))?;
        if model.dims() != manifest.dims {
            return Err(CoreError::Data("checkpoint manifest dims are inconsistent".into()));
        }
        let names: Vec<&'static str> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        for (name, slot) in names.into_iter().zip(model.tensors_mut()) {
            let m = Matrix::load(dir.join(format!("{name}.nvqm")))?;
            expect_shape(name, &m, slot.shape())?;
            *slot = m;
        }
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format: String,
    pub arch: Arch,
    pub dims: VqaDims,
    pub vocab_hash: String,
    pub setting: crate::text::Provenance,
}

fn fuse_on(t: &mut Tape, w_q: Var, x_q: Var, w_i: Var, x_i: Var) -> Result<Var> {
    let q = t.matmul(w_q, x_q)?;
    let q = t.tanh(q);
    let i = t.matmul(w_i, x_i)?;
    let i = t.tanh(i);
    Ok(t.elementwise_mul(q, i)?)
}

/// `tanh(W_Q x_Q) ⊙ tanh(W_I x_I)`.
pub fn fusion(w_q: &Matrix, x_q: &[f64], w_i: &Matrix, x_i: &[f64]) -> Result<Vec<f64>> {
    let mut t = Tape::new();
    let vars = [
        t.constant(w_q.clone())?,
        t.constant(Matrix::column(x_q.to_vec())?)?,
        t.constant(w_i.clone())?,
        t.constant(Matrix::column(x_i.to_vec())?)?,
    ];
    let f = fuse_on(&mut t, vars[0], vars[1], vars[2], vars[3])?;
    Ok(t.value(f).data().to_vec())
}

/// Open-ended: argmax over every answer. Multiple-choice: argmax over the
/// choices the answer vocabulary knows, else the first choice. Ties go to the
/// lowest answer index.
pub fn choose(answers: &AnswerVocabulary, scores: &[f64], choices: Option<&[String]>) -> String {
    match choices {
        None => {
            let best = argmax(scores.iter().copied().enumerate()).unwrap_or(0);
            answers.answer(best).to_string()
        }
        Some(choices) => {
            let mut ids: Vec<usize> = choices
                .iter()
                .filter_map(|c| answers.get(&normalize_answer(c)))
                .collect();
            ids.sort_unstable();
            match argmax(ids.into_iter().map(|i| (i, scores[i]))) {
                Some(i) => answers.answer(i).to_string(),
                None => choices.first().map(|c| normalize_answer(c)).unwrap_or_default(),
            }
        }
    }
}

fn argmax(items: impl Iterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in items {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default)]
    pub clip: Option<f64>,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl VqaTrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            lr: AdamConfig::default().lr,
            clip: Some(5.0),
            patience: 5,
            seed,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainCurves {
    pub train_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
    /// Epoch (0-based) whose weights were kept.
    pub best_epoch: Option<usize>,
    /// Training examples whose modal answer is outside the answer vocabulary.
    pub skipped_oov: usize,
    pub used: usize,
}

struct Prepared {
    ids: Vec<usize>,
    image: Vec<f64>,
    target: usize,
}

fn image_of<'a>(features: &'a FeatureStore, ex: &VqaExample) -> Result<&'a [f64]> {
    features
        .get(&ex.image_id)
        .ok_or_else(|| CoreError::Data(format!("no features for image `{}` (question {})", ex.image_id, ex.qid)))
}

/// Mean VQA accuracy of open-ended predictions.
pub fn vqa_accuracy(model: &VqaModel, examples: &[VqaExample], features: &FeatureStore) -> Result<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for ex in examples {
        let pred = model.predict(&ex.question, image_of(features, ex)?, None)?;
        total += question_accuracy(&pred, &ex.answers)?;
    }
    Ok(total / examples.len() as f64)
}

/// Cross-entropy on each example's modal answer with Adam; keeps the weights
/// of the best validation epoch and stops after `patience` epochs without gain.
pub fn train_vqa(
    model: &mut VqaModel,
    train: &[VqaExample],
    val: &[VqaExample],
    features: &FeatureStore,
    config: &VqaTrainConfig,
) -> Result<TrainCurves> {
    if config.batch_size == 0 {
        return Err(CoreError::Config("batch_size must be at least 1".into()));
    }
    let mut curves = TrainCurves::default();
    let mut data = Vec::with_capacity(train.len());
    for ex in train {
        let target = ex.mode_answer().and_then(|a| model.answers.get(&a));
        match target {
            Some(target) => data.push(Prepared {
                ids: model.encode_question(&ex.question),
                image: image_of(features, ex)?.to_vec(),
                target,
            }),
            None => curves.skipped_oov += 1,
        }
    }
    if data.is_empty() {
        return Err(CoreError::Data("no training examples with an in-vocabulary answer".into()));
    }
    curves.used = data.len();
    if curves.skipped_oov > 0 {
        info!("skipped {} training questions with out-of-vocabulary answers", curves.skipped_oov);
    }
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    })?;
    let root = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut best: Option<(f64, VqaModel)> = None;
    let mut stale = 0usize;
    for epoch in 0..config.epochs {
        root.derive(epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut t = Tape::new();
            let vars = bind(&mut t, &model.tensors(), true)?;
            let losses = batch
                .iter()
                .map(|&i| {
                    let p = &data[i];
                    model.loss_with(&mut t, &vars, &p.ids, &p.image, p.target)
                })
                .collect::<Result<Vec<_>>>()?;
            let sum = t.add_n(&losses)?;
            epoch_loss += t.scalar(sum);
            let loss = t.scale(sum, 1.0 / batch.len() as f64);
            let mut grads = t.backward(loss)?;
            let mut g: Vec<Matrix> = vars.iter().map(|v| grads.take(*v)).collect();
            if let Some(max) = config.clip {
                clip_global_norm(&mut g, max);
            }
            adam.step(&mut model.tensors_mut(), &g)?;
        }
        curves.train_loss.push(epoch_loss / data.len() as f64);
        if val.is_empty() {
            continue;
        }
        let acc = vqa_accuracy(model, val, features)?;
        curves.val_accuracy.push(acc);
        debug!("vqa epoch {epoch}: loss {:.5} val {acc:.4}", curves.train_loss[epoch]);
        if best.as_ref().is_none_or(|(b, _)| acc > *b) {
            best = Some((acc, model.clone()));
            curves.best_epoch = Some(epoch);
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    match best {
        Some((_, m)) => *model = m,
        None => curves.best_epoch = config.epochs.checked_sub(1),
    }
    Ok(curves)
}

/// One model reading one feature family.
pub struct ModelPredictor<'a> {
    pub model: &'a VqaModel,
    pub features: &'a FeatureStore,
}

impl Predictor for ModelPredictor<'_> {
    fn predict(&self, ex: &VqaExample, protocol: Protocol) -> Result<String> {
        let choices = match protocol {
            Protocol::Oeq => None,
            Protocol::Mcq => ex.choices.as_deref(),
        };
        self.model.predict(&ex.question, image_of(self.features, ex)?, choices)
    }
}

/// Averages the softmax outputs of models that share an answer vocabulary.
pub struct LateFusion<'a> {
    pub members: Vec<ModelPredictor<'a>>,
}

impl LateFusion<'_> {
    pub fn probabilities(&self, ex: &VqaExample) -> Result<Vec<f64>> {
        let first = self
            .members
            .first()
            .ok_or_else(|| CoreError::Config("late fusion needs at least one model".into()))?;
        let mut acc = vec![0.0; first.model.answers.len()];
        for m in &self.members {
            if m.model.answers != first.model.answers {
                return Err(CoreError::Config("late fusion members disagree on the answer vocabulary".into()));
            }
            let logits = m.model.logits(&ex.question, image_of(m.features, ex)?)?;
            let p = Matrix::column(logits)?.softmax();
            for (a, v) in acc.iter_mut().zip(p.data()) {
                *a += v / self.members.len() as f64;
            }
        }
        Ok(acc)
    }
}

impl Predictor for LateFusion<'_> {
    fn predict(&self, ex: &VqaExample, protocol: Protocol) -> Result<String> {
        let p = self.probabilities(ex)?;
        let choices = match protocol {
            Protocol::Oeq => None,
            Protocol::Mcq => ex.choices.as_deref(),
        };
        Ok(choose(&self.members[0].model.answers, &p, choices))
    }
}
