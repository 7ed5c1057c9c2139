//! LSTM sequence autoencoders used to pre-train question encoders.
//!
//! Three variants share one encoder/decoder layout: a text-only AE, `A1` which
//! fuses the encoder state with the image through a multiply layer and feeds
//! `h_enc + fusion` to the decoder, and `A2` which reads the projected image
//! as the first input. Decoding always reconstructs the sentence only.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info};
use nvq_numkit::{clip_global_norm, Adam, AdamConfig, Matrix, Rng, Tape, Var};
use serde::{Deserialize, Serialize};

use crate::data::{read_json, write_json};
use crate::embed::{align, expand_vocab, AlignmentResult, EmbeddingMatrix, Expansion};
use crate::error::{CoreError, Result};
use crate::nn::{bind, expect_shape, lstm_step, run_lstm, zeros_var, LstmParams, LstmVars};
use crate::text::{Provenance, Vocabulary, BOS_ID, EOS_ID, RESERVED};

pub const MAX_SENTENCE_LEN: usize = 30;
pub const BUNDLE_MANIFEST: &str = "manifest.json";
pub const BUNDLE_FORMAT: &str = "nvq-encoder-bundle";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AeVariant {
    Text,
    MultimodalA1,
    MultimodalA2,
}

impl AeVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AeVariant::Text => "text",
            AeVariant::MultimodalA1 => "multimodal-a1",
            AeVariant::MultimodalA2 => "multimodal-a2",
        }
    }

    pub fn is_multimodal(self) -> bool {
        self != AeVariant::Text
    }
}

impl fmt::Display for AeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AeVariant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(AeVariant::Text),
            "multimodal-a1" | "a1" => Ok(AeVariant::MultimodalA1),
            "multimodal-a2" | "a2" => Ok(AeVariant::MultimodalA2),
            other => Err(CoreError::Config(format!("unknown autoencoder variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeDims {
    pub vocab: usize,
    pub d_e: usize,
    pub d_h: usize,
    /// Image feature size; 0 for the text variant.
    pub d_i: usize,
}

/// A sentence, optionally paired with an image feature vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AeSample {
    pub sentence: String,
    pub image: Option<Vec<f64>>,
}

impl AeSample {
    pub fn text(sentence: impl Into<String>) -> Self {
        Self {
            sentence: sentence.into(),
            image: None,
        }
    }

    pub fn paired(sentence: impl Into<String>, image: Vec<f64>) -> Self {
        Self {
            sentence: sentence.into(),
            image: Some(image),
        }
    }
}

/// Encoded sentence (word ids only, truncated) plus optional image.
#[derive(Clone, Debug, PartialEq)]
pub struct AeExample {
    pub ids: Vec<usize>,
    pub image: Option<Vec<f64>>,
}

impl AeExample {
    pub fn new(mut ids: Vec<usize>, image: Option<Vec<f64>>) -> Self {
        ids.truncate(MAX_SENTENCE_LEN);
        Self { ids, image }
    }

    /// Text-only sentences fed to a multimodal AE get a zero image.
    pub fn from_sample(vocab: &Vocabulary, sample: &AeSample, variant: AeVariant, d_i: usize) -> Self {
        let ids = vocab.encode(&sample.sentence).ids;
        let image = match (&sample.image, variant.is_multimodal()) {
            (_, false) => None,
            (Some(x), true) => Some(x.clone()),
            (None, true) => Some(vec![0.0; d_i]),
        };
        Self::new(ids, image)
    }

    /// `BOS w₁ … w_T EOS`.
    pub fn framed(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.ids.len() + 2);
        out.push(BOS_ID);
        out.extend_from_slice(&self.ids);
        out.push(EOS_ID);
        out
    }

    /// Decoder targets `w₁ … w_T EOS`.
    pub fn targets(&self) -> Vec<usize> {
        let mut out = self.ids.clone();
        out.push(EOS_ID);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Autoencoder {
    variant: AeVariant,
    vocab: Vocabulary,
    pub embed: Matrix,
    pub encoder: LstmParams,
    pub decoder: LstmParams,
    pub out_w: Matrix,
    /// Multiply-layer projections `W_Q'` (`d_h × d_h`) and `W_I'` (`d_h × d_I`), A1 only.
    pub fuse_q: Option<Matrix>,
    pub fuse_i: Option<Matrix>,
    /// Image-to-embedding projection (`d_e × d_I`), A2 only.
    pub img_proj: Option<Matrix>,
}

struct AeVars {
    embed: Var,
    enc: LstmVars,
    dec: LstmVars,
    out_w: Var,
    fuse: Option<(Var, Var)>,
    img_proj: Option<Var>,
}

/// Encoder output for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub h_enc: Vec<f64>,
    pub fusion: Option<Vec<f64>>,
}

impl Autoencoder {
    pub fn new(
        variant: AeVariant,
        vocab: Vocabulary,
        d_e: usize,
        d_h: usize,
        d_i: usize,
        init_std: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        if d_e == 0 || d_h == 0 {
            return Err(CoreError::Config("embedding and hidden sizes must be positive".into()));
        }
        if variant.is_multimodal() && d_i == 0 {
            return Err(CoreError::Config(format!("{variant} autoencoder needs an image dimension")));
        }
        let v = vocab.len();
        let embed = Matrix::random_normal(v, d_e, init_std, rng);
        let encoder = LstmParams::new(d_e, d_h, init_std, rng);
        let decoder = LstmParams::new(d_e, d_h, init_std, rng);
        let out_w = Matrix::random_normal(v, d_h, init_std, rng);
        let (fuse_q, fuse_i, img_proj) = match variant {
            AeVariant::Text => (None, None, None),
            AeVariant::MultimodalA1 => (
                Some(Matrix::random_normal(d_h, d_h, init_std, rng)),
                Some(Matrix::random_normal(d_h, d_i, init_std, rng)),
                None,
            ),
            AeVariant::MultimodalA2 => (None, None, Some(Matrix::random_normal(d_e, d_i, init_std, rng))),
        };
        Ok(Self {
            variant,
            vocab,
            embed,
            encoder,
            decoder,
            out_w,
            fuse_q,
            fuse_i,
            img_proj,
        })
    }

    pub fn variant(&self) -> AeVariant {
        self.variant
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn dims(&self) -> AeDims {
        AeDims {
            vocab: self.vocab.len(),
            d_e: self.embed.cols(),
            d_h: self.encoder.hidden_dim(),
            d_i: self
                .fuse_i
                .as_ref()
                .or(self.img_proj.as_ref())
                .map_or(0, Matrix::cols),
        }
    }

    /// Parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        let mut out = vec![
            &self.embed,
            &self.encoder.w,
            &self.encoder.u,
            &self.encoder.b,
            &self.decoder.w,
            &self.decoder.u,
            &self.decoder.b,
            &self.out_w,
        ];
        out.extend(self.fuse_q.iter());
        out.extend(self.fuse_i.iter());
        out.extend(self.img_proj.iter());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![
            &mut self.embed,
            &mut self.encoder.w,
            &mut self.encoder.u,
            &mut self.encoder.b,
            &mut self.decoder.w,
            &mut self.decoder.u,
            &mut self.decoder.b,
            &mut self.out_w,
        ];
        out.extend(self.fuse_q.iter_mut());
        out.extend(self.fuse_i.iter_mut());
        out.extend(self.img_proj.iter_mut());
        out
    }

    fn vars(&self, v: &[Var]) -> AeVars {
        let h = self.encoder.hidden_dim();
        let (fuse, img_proj) = match self.variant {
            AeVariant::Text => (None, None),
            AeVariant::MultimodalA1 => (Some((v[8], v[9])), None),
            AeVariant::MultimodalA2 => (None, Some(v[8])),
        };
        AeVars {
            embed: v[0],
            enc: LstmVars::from_slice(&v[1..4], h),
            dec: LstmVars::from_slice(&v[4..7], h),
            out_w: v[7],
            fuse,
            img_proj,
        }
    }

    fn image_var(&self, t: &mut Tape, ex: &AeExample) -> Result<Option<Var>> {
        match (&ex.image, self.variant.is_multimodal()) {
            (_, false) => Ok(None),
            (None, true) => Err(CoreError::Contract(format!(
                "{} autoencoder needs an image feature",
                self.variant
            ))),
            (Some(x), true) => {
                let d_i = self.dims().d_i;
                if x.len() != d_i {
                    return Err(CoreError::ShapeMismatch {
                        tensor: "image feature".into(),
                        expected: (d_i, 1),
                        found: (x.len(), 1),
                    });
                }
                Ok(Some(t.constant(Matrix::column(x.clone())?)?))
            }
        }
    }

    fn encode_on(&self, t: &mut Tape, p: &AeVars, ex: &AeExample) -> Result<(Var, Option<Var>)> {
        let image = self.image_var(t, ex)?;
        let mut inputs = Vec::with_capacity(ex.ids.len() + 3);
        if let (Some(w_e), Some(x)) = (p.img_proj, image) {
            inputs.push(t.matmul(w_e, x)?);
        }
        for id in ex.framed() {
            inputs.push(t.gather_row(p.embed, id)?);
        }
        let h0 = zeros_var(t, p.enc.hidden)?;
        let c0 = zeros_var(t, p.enc.hidden)?;
        let (h_enc, _) = run_lstm(t, p.enc, &inputs, h0, c0)?;
        let fusion = match (p.fuse, image) {
            (Some((wq, wi)), Some(x)) => {
                let q = t.matmul(wq, h_enc)?;
                let q = t.tanh(q);
                let i = t.matmul(wi, x)?;
                let i = t.tanh(i);
                Some(t.elementwise_mul(q, i)?)
            }
            _ => None,
        };
        Ok((h_enc, fusion))
    }

    fn decoder_init_on(t: &mut Tape, h_enc: Var, fusion: Option<Var>) -> Result<Var> {
        match fusion {
            Some(f) => Ok(t.add(h_enc, f)?),
            None => Ok(h_enc),
        }
    }

    /// Mean teacher-forced cross-entropy per target token.
    fn loss_on(&self, t: &mut Tape, p: &AeVars, ex: &AeExample) -> Result<Var> {
        let (h_enc, fusion) = self.encode_on(t, p, ex)?;
        let mut h = Self::decoder_init_on(t, h_enc, fusion)?;
        let mut c = zeros_var(t, p.dec.hidden)?;
        let mut prev = BOS_ID;
        let targets = ex.targets();
        let mut terms = Vec::with_capacity(targets.len());
        for &y in &targets {
            let x = t.gather_row(p.embed, prev)?;
            (h, c) = lstm_step(t, p.dec, x, h, c)?;
            let logits = t.matmul(p.out_w, h)?;
            terms.push(t.softmax_cross_entropy(logits, y)?);
            prev = y;
        }
        let total = t.add_n(&terms)?;
        Ok(t.scale(total, 1.0 / targets.len() as f64))
    }

    fn frozen<R>(&self, f: impl FnOnce(&mut Tape, &AeVars) -> Result<R>) -> Result<R> {
        let mut t = Tape::new();
        let v = bind(&mut t, &self.tensors(), false)?;
        let p = self.vars(&v);
        f(&mut t, &p)
    }

    pub fn encode(&self, ids: &[usize], image: Option<&[f64]>) -> Result<Encoded> {
        let ex = AeExample::new(ids.to_vec(), image.map(<[f64]>::to_vec));
        self.frozen(|t, p| {
            let (h, f) = self.encode_on(t, p, &ex)?;
            Ok(Encoded {
                h_enc: t.value(h).data().to_vec(),
                fusion: f.map(|f| t.value(f).data().to_vec()),
            })
        })
    }

    /// Initial decoder hidden state; the cell state starts at zero.
    pub fn decoder_init(&self, enc: &Encoded) -> Vec<f64> {
        match &enc.fusion {
            Some(f) => enc.h_enc.iter().zip(f).map(|(h, f)| h + f).collect(),
            None => enc.h_enc.clone(),
        }
    }

    pub fn loss(&self, ex: &AeExample) -> Result<f64> {
        self.frozen(|t, p| {
            let l = self.loss_on(t, p, ex)?;
            Ok(t.scalar(l))
        })
    }

    /// Differentiable loss with parameters supplied as tape variables in
    /// [`Autoencoder::tensors`] order.
    pub fn loss_with(&self, t: &mut Tape, params: &[Var], ex: &AeExample) -> Result<Var> {
        let p = self.vars(params);
        self.loss_on(t, &p, ex)
    }

    /// Free-running greedy reconstruction of `ex.targets().len()` tokens.
    pub fn greedy_decode(&self, ex: &AeExample) -> Result<Vec<usize>> {
        let steps = ex.ids.len() + 1;
        self.frozen(|t, p| {
            let (h_enc, fusion) = self.encode_on(t, p, ex)?;
            let mut h = Self::decoder_init_on(t, h_enc, fusion)?;
            let mut c = zeros_var(t, p.dec.hidden)?;
            let mut prev = BOS_ID;
            let mut out = Vec::with_capacity(steps);
            for _ in 0..steps {
                let x = t.gather_row(p.embed, prev)?;
                (h, c) = lstm_step(t, p.dec, x, h, c)?;
                let logits = t.matmul(p.out_w, h)?;
                prev = t.value(logits).argmax().unwrap_or(0);
                out.push(prev);
            }
            Ok(out)
        })
    }

    /// Fraction of target positions (words and EOS) reproduced by greedy decoding.
    pub fn reconstruction_accuracy(&self, examples: &[AeExample]) -> Result<f64> {
        let mut hit = 0usize;
        let mut total = 0usize;
        for ex in examples {
            let pred = self.greedy_decode(ex)?;
            let gold = ex.targets();
            hit += pred.iter().zip(&gold).filter(|(a, b)| a == b).count();
            total += gold.len();
        }
        if total == 0 {
            return Err(CoreError::Data("no examples to score".into()));
        }
        Ok(hit as f64 / total as f64)
    }

    pub fn examples(&self, samples: &[AeSample]) -> Vec<AeExample> {
        let d_i = self.dims().d_i;
        samples
            .iter()
            .map(|s| AeExample::from_sample(&self.vocab, s, self.variant, d_i))
            .collect()
    }

    pub fn embedding_matrix(&self) -> Result<EmbeddingMatrix> {
        EmbeddingMatrix::new(self.vocab.clone(), self.embed.clone())
    }

    pub fn export_encoder(&self) -> EncoderBundle {
        EncoderBundle {
            variant: self.variant,
            setting: self.vocab.provenance(),
            vocab: self.vocab.clone(),
            embed: self.embed.clone(),
            encoder: self.encoder.clone(),
            img_proj: self.img_proj.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Global gradient-norm cap; `None` disables clipping.
    #[serde(default)]
    pub clip: Option<f64>,
    pub seed: u64,
}

impl AeTrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: AdamConfig::default().lr,
            clip: Some(5.0),
            seed,
        }
    }
}

/// Adam on shuffled minibatches. Returns the mean training loss of each epoch.
pub fn train_ae(ae: &mut Autoencoder, data: &[AeExample], config: &AeTrainConfig) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(CoreError::Data("autoencoder corpus is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(CoreError::Config("batch_size must be at least 1".into()));
    }
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    })?;
    let root = Rng::new(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        root.derive(epoch as u64).shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut t = Tape::new();
            let vars = bind(&mut t, &ae.tensors(), true)?;
            let p = ae.vars(&vars);
            let losses = batch
                .iter()
                .map(|&i| ae.loss_on(&mut t, &p, &data[i]))
                .collect::<Result<Vec<_>>>()?;
            let sum = t.add_n(&losses)?;
            epoch_loss += t.scalar(sum);
            let loss = t.scale(sum, 1.0 / batch.len() as f64);
            let mut grads = t.backward(loss)?;
            let mut g: Vec<Matrix> = vars.iter().map(|v| grads.take(*v)).collect();
            if let Some(max) = config.clip {
                clip_global_norm(&mut g, max);
            }
            adam.step(&mut ae.tensors_mut(), &g)?;
        }
        let mean = epoch_loss / data.len() as f64;
        debug!("ae epoch {epoch}: loss {mean:.6}");
        curve.push(mean);
    }
    Ok(curve)
}

/// Encoder weights handed to a VQA model.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBundle {
    pub variant: AeVariant,
    pub setting: Provenance,
    pub vocab: Vocabulary,
    pub embed: Matrix,
    pub encoder: LstmParams,
    pub img_proj: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleManifest {
    pub format: String,
    pub variant: AeVariant,
    pub dims: AeDims,
    pub vocab_hash: String,
    pub setting: Provenance,
}

impl EncoderBundle {
    pub fn dims(&self) -> AeDims {
        AeDims {
            vocab: self.vocab.len(),
            d_e: self.embed.cols(),
            d_h: self.encoder.hidden_dim(),
            d_i: self.img_proj.as_ref().map_or(0, Matrix::cols),
        }
    }

    pub fn vocab_hash(&self) -> String {
        self.vocab.hash()
    }

    pub fn manifest(&self) -> BundleManifest {
        BundleManifest {
            format: BUNDLE_FORMAT.into(),
            variant: self.variant,
            dims: self.dims(),
            vocab_hash: self.vocab_hash(),
            setting: self.setting,
        }
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_json(dir.join(BUNDLE_MANIFEST), &self.manifest())?;
        self.vocab.save(dir.join("vocab.tsv"))?;
        self.embed.save(dir.join("embed.nvqm"))?;
        self.encoder.w.save(dir.join("encoder_w.nvqm"))?;
        self.encoder.u.save(dir.join("encoder_u.nvqm"))?;
        self.encoder.b.save(dir.join("encoder_b.nvqm"))?;
        if let Some(m) = &self.img_proj {
            m.save(dir.join("image_projection.nvqm"))?;
        }
        Ok(())
    }

    /// Loads a bundle and checks every tensor against the manifest dims.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest: BundleManifest = read_json(dir.join(BUNDLE_MANIFEST))?;
        if manifest.format != BUNDLE_FORMAT {
            return Err(CoreError::Data(format!("not an encoder bundle: format `{}`", manifest.format)));
        }
        let AeDims { vocab, d_e, d_h, d_i } = manifest.dims;
        let voc = Vocabulary::load(dir.join("vocab.tsv"), manifest.setting)?;
        if voc.len() != vocab {
            return Err(CoreError::ShapeMismatch {
                tensor: "vocab".into(),
                expected: (vocab, 1),
                found: (voc.len(), 1),
            });
        }
        if voc.hash() != manifest.vocab_hash {
            return Err(CoreError::Provenance("bundle vocabulary does not match its manifest hash".into()));
        }
        let load = |name: &str, shape: (usize, usize)| -> Result<Matrix> {
            let m = Matrix::load(dir.join(format!("{name}.nvqm")))?;
            expect_shape(name, &m, shape)?;
            Ok(m)
        };
        let embed = load("embed", (vocab, d_e))?;
        let encoder = LstmParams {
            w: load("encoder_w", (4 * d_h, d_e))?,
            u: load("encoder_u", (4 * d_h, d_h))?,
            b: load("encoder_b", (4 * d_h, 1))?,
        };
        let img_proj = if manifest.variant == AeVariant::MultimodalA2 {
            Some(load("image_projection", (d_e, d_i))?)
        } else {
            None
        };
        Ok(Self {
            variant: manifest.variant,
            setting: manifest.setting,
            vocab: voc,
            embed,
            encoder,
            img_proj,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PretrainSetting {
    Train,
    Oracle,
    #[serde(rename = "gen")]
    Gen,
    #[serde(rename = "gen-expanded")]
    GenExpanded,
}

impl PretrainSetting {
    pub fn as_str(self) -> &'static str {
        match self {
            PretrainSetting::Train => "train",
            PretrainSetting::Oracle => "oracle",
            PretrainSetting::Gen => "gen",
            PretrainSetting::GenExpanded => "gen-expanded",
        }
    }

    pub fn provenance(self) -> Provenance {
        match self {
            PretrainSetting::Train => Provenance::Train,
            PretrainSetting::Oracle => Provenance::Oracle,
            PretrainSetting::Gen => Provenance::General,
            PretrainSetting::GenExpanded => Provenance::GeneralExpanded,
        }
    }
}

impl fmt::Display for PretrainSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PretrainSetting {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(PretrainSetting::Train),
            "oracle" => Ok(PretrainSetting::Oracle),
            "gen" | "general" => Ok(PretrainSetting::Gen),
            "gen-expanded" | "gen(exp)" => Ok(PretrainSetting::GenExpanded),
            other => Err(CoreError::Config(format!("unknown pre-training setting `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AeShape {
    pub variant: AeVariant,
    pub d_e: usize,
    pub d_h: usize,
    pub d_i: usize,
    pub init_std: f64,
}

pub struct PretrainInputs<'a> {
    pub setting: PretrainSetting,
    /// Final AE vocabulary: train, oracle or general.
    pub vocab: &'a Vocabulary,
    /// Stage-1 vocabulary for `gen-expanded` (the VQA train vocabulary).
    pub stage1_vocab: Option<&'a Vocabulary>,
    pub external: Option<&'a EmbeddingMatrix>,
    pub samples: &'a [AeSample],
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub ae: Autoencoder,
    pub losses: Vec<f64>,
    pub stage1_losses: Vec<f64>,
    pub alignment: Option<AlignmentResult>,
    pub expansion: Option<Expansion>,
}

/// Runs the AE pre-training regime for `setting`.
///
/// `gen-expanded` trains on the stage-1 vocabulary, aligns the external table
/// to the learnt embeddings, seeds rows for the remaining words of `vocab`
/// from the aligned vectors and trains every weight again.
pub fn pretrain_schedule(inputs: &PretrainInputs<'_>, shape: AeShape, config: &AeTrainConfig) -> Result<PretrainOutcome> {
    let root = Rng::new(config.seed);
    let target = inputs.vocab.clone().with_provenance(inputs.setting.provenance());
    if inputs.setting != PretrainSetting::GenExpanded {
        let mut ae = new_ae(target, shape, &mut root.derive(1))?;
        let data = ae.examples(inputs.samples);
        let losses = train_ae(&mut ae, &data, config)?;
        return Ok(PretrainOutcome {
            ae,
            losses,
            stage1_losses: Vec::new(),
            alignment: None,
            expansion: None,
        });
    }
    let external = inputs
        .external
        .ok_or_else(|| CoreError::Config("gen-expanded pre-training needs external embeddings".into()))?;
    let stage1_vocab = inputs
        .stage1_vocab
        .ok_or_else(|| CoreError::Config("gen-expanded pre-training needs the stage-1 vocabulary".into()))?
        .clone()
        .with_provenance(Provenance::Train);
    let mut stage1 = new_ae(stage1_vocab, shape, &mut root.derive(1))?;
    let data = stage1.examples(inputs.samples);
    let stage1_losses = train_ae(&mut stage1, &data, config)?;
    let alignment = align(external, &stage1.embedding_matrix()?)?;
    let new_words: Vec<&str> = target.tokens()[RESERVED.len()..]
        .iter()
        .map(String::as_str)
        .filter(|w| !stage1.vocab.contains(w))
        .collect();
    let expansion = expand_vocab(&alignment, external, &new_words)?;
    info!(
        "gen-expanded: {} shared words, residual {:.4e}, {} rows seeded, {} without external vectors",
        alignment.shared_words.len(),
        alignment.residual_frobenius,
        expansion.words.len(),
        expansion.skipped.len()
    );
    let mut ae = new_ae(target, shape, &mut root.derive(2))?;
    warm_start(&mut ae, &stage1, &expansion)?;
    let data = ae.examples(inputs.samples);
    let mut stage2 = config.clone();
    stage2.seed = root.derive(3).next_u64();
    let losses = train_ae(&mut ae, &data, &stage2)?;
    Ok(PretrainOutcome {
        ae,
        losses,
        stage1_losses,
        alignment: Some(alignment),
        expansion: Some(expansion),
    })
}

fn new_ae(vocab: Vocabulary, shape: AeShape, rng: &mut Rng) -> Result<Autoencoder> {
    let d_i = if shape.variant.is_multimodal() { shape.d_i } else { 0 };
    Autoencoder::new(shape.variant, vocab, shape.d_e, shape.d_h, d_i, shape.init_std, rng)
}

/// Copies stage-1 weights into the larger stage-2 model: shared-word rows of
/// the embedding and output tables, every other tensor whole, and the seeded
/// rows for new words.
fn warm_start(ae: &mut Autoencoder, stage1: &Autoencoder, expansion: &Expansion) -> Result<()> {
    for (i, tok) in ae.vocab.tokens().iter().enumerate() {
        if let Some(j) = stage1.vocab.get(tok) {
            ae.embed.row_mut(i).copy_from_slice(stage1.embed.row(j));
            ae.out_w.row_mut(i).copy_from_slice(stage1.out_w.row(j));
        } else if let Some(row) = expansion.row(tok) {
            ae.embed.row_mut(i).copy_from_slice(row);
        }
    }
    ae.encoder.assign(&stage1.encoder, "encoder")?;
    ae.decoder.assign(&stage1.decoder, "decoder")?;
    for (dst, src) in [
        (&mut ae.fuse_q, &stage1.fuse_q),
        (&mut ae.fuse_i, &stage1.fuse_i),
        (&mut ae.img_proj, &stage1.img_proj),
    ] {
        if let (Some(d), Some(s)) = (dst, src) {
            d.clone_from(s);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::build_vocab;

    fn vocab(sentences: &[&str]) -> Vocabulary {
        build_vocab(sentences.iter().copied(), 1, Provenance::Train).unwrap()
    }

    #[test]
    fn a1_zero_image_gives_zero_fusion() {
        let v = vocab(&["a dog runs"]);
        let ae = Autoencoder::new(AeVariant::MultimodalA1, v.clone(), 4, 5, 3, 0.3, &mut Rng::new(2)).unwrap();
        let enc = ae.encode(&v.encode("a dog").ids, Some(&[0.0; 3])).unwrap();
        assert!(enc.fusion.as_ref().unwrap().iter().all(|&f| f == 0.0));
        assert_eq!(ae.decoder_init(&enc), enc.h_enc);
    }

    #[test]
    fn multimodal_requires_image() {
        let v = vocab(&["a dog"]);
        let ae = Autoencoder::new(AeVariant::MultimodalA2, v, 4, 4, 3, 0.3, &mut Rng::new(2)).unwrap();
        assert!(ae.encode(&[3], None).is_err());
    }

    #[test]
    fn a2_is_image_sensitive() {
        let v = vocab(&["a dog runs"]);
        let ae = Autoencoder::new(AeVariant::MultimodalA2, v.clone(), 4, 5, 3, 0.3, &mut Rng::new(4)).unwrap();
        let ids = v.encode("a dog runs").ids;
        let a = ae.encode(&ids, Some(&[1.0, 0.0, -1.0])).unwrap();
        let b = ae.encode(&ids, Some(&[0.0, 2.0, 0.5])).unwrap();
        assert_ne!(a.h_enc, b.h_enc);
    }

    #[test]
    fn setting_names_round_trip() {
        for s in [
            PretrainSetting::Train,
            PretrainSetting::Oracle,
            PretrainSetting::Gen,
            PretrainSetting::GenExpanded,
        ] {
            assert_eq!(s.as_str().parse::<PretrainSetting>().unwrap(), s);
            let json = serde_json::to_string(&s).unwrap();
            assert_eq!(json, format!("\"{}\"", s.as_str()));
        }
    }
}
