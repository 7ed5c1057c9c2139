//! Word embedding tables, cosine neighbourhoods, least-squares alignment
//! between embedding spaces and vocabulary expansion.
//!
//! Expansion projects the *external* vector of a new word through the
//! alignment map, `Â_v(w) = A_w(w) · M`. The alternative reading, applying
//! `M` to a row of the model's own table, has nothing to project for a word
//! the model has never seen.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use log::warn;
use nvq_numkit::{least_squares, Matrix, NumError, ROBUST_RIDGE};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::text::{NounTagger, Provenance, Vocabulary, RESERVED};

pub const DEFAULT_TAU: f64 = 0.4;

/// A `|V| × d` table of word vectors keyed by a vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingMatrix {
    vocab: Vocabulary,
    vectors: Matrix,
}

impl EmbeddingMatrix {
    pub fn new(vocab: Vocabulary, vectors: Matrix) -> Result<Self> {
        if vectors.rows() != vocab.len() {
            return Err(CoreError::Contract(format!(
                "{} embedding rows for a vocabulary of {}",
                vectors.rows(),
                vocab.len()
            )));
        }
        if vectors.cols() == 0 {
            return Err(CoreError::Contract("embedding dimension must be positive".into()));
        }
        if !vectors.is_finite() {
            return Err(NumError::NonFinite("embedding table".into()).into());
        }
        Ok(Self { vocab, vectors })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn vectors(&self) -> &Matrix {
        &self.vectors
    }

    pub fn into_parts(self) -> (Vocabulary, Matrix) {
        (self.vocab, self.vectors)
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn row(&self, word: &str) -> Option<&[f64]> {
        self.vocab.get(word).map(|i| self.vectors.row(i))
    }

    /// Non-reserved words in vocabulary order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.vocab.tokens()[RESERVED.len()..].iter().map(String::as_str)
    }

    /// Parses the public word-vector text format: a `<count> <dim>` header,
    /// then `word v1 … vd` per line. Reserved tokens get zero rows.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Data("empty embedding file".into()))?;
        let mut it = header.split_whitespace();
        let (count, dim) = match (it.next(), it.next(), it.next()) {
            (Some(c), Some(d), None) => (
                c.parse::<usize>().map_err(|_| CoreError::Data("bad embedding header".into()))?,
                d.parse::<usize>().map_err(|_| CoreError::Data("bad embedding header".into()))?,
            ),
            _ => return Err(CoreError::Data("embedding header must be `<count> <dim>`".into())),
        };
        let mut vocab = Vocabulary::reserved(Provenance::External);
        let mut data = vec![0.0; RESERVED.len() * dim];
        for (n, line) in lines.enumerate() {
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default();
            if vocab.contains(word) {
                return Err(CoreError::Data(format!("embedding line {}: duplicate word `{word}`", n + 2)));
            }
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CoreError::Data(format!("embedding line {}: bad number", n + 2)))?;
            if values.len() != dim {
                return Err(CoreError::Data(format!(
                    "embedding line {}: expected {dim} values, got {}",
                    n + 2,
                    values.len()
                )));
            }
            vocab.push(word, 1);
            data.extend(values);
        }
        if vocab.len() - RESERVED.len() != count {
            return Err(CoreError::Data(format!(
                "embedding header announces {count} words, file has {}",
                vocab.len() - RESERVED.len()
            )));
        }
        let rows = vocab.len();
        Self::new(vocab, Matrix::new(rows, dim, data)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.vocab.len() - RESERVED.len(), self.dim());
        for (i, w) in self.vocab.tokens().iter().enumerate().skip(RESERVED.len()) {
            out.push_str(w);
            for v in self.vectors.row(i) {
                out.push(' ');
                out.push_str(&format!("{v:.17e}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0).then(|| v.iter().map(|x| x / n).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NeighborReport {
    pub words: BTreeSet<String>,
    /// Anchors absent from the external table.
    pub missing_anchors: Vec<String>,
    /// Words (anchors or candidates) with an all-zero vector.
    pub zero_norm: Vec<String>,
}

/// External words within cosine distance `tau` of at least one anchor,
/// anchors excluded.
pub fn cosine_neighbors(
    anchors: &BTreeSet<String>,
    external: &EmbeddingMatrix,
    tau: f64,
) -> Result<NeighborReport> {
    if !(tau > 0.0 && tau < 2.0) {
        return Err(CoreError::Contract(format!("tau must lie in (0, 2), got {tau}")));
    }
    let mut report = NeighborReport::default();
    let mut anchor_units = Vec::new();
    for a in anchors {
        match external.row(a) {
            None => report.missing_anchors.push(a.clone()),
            Some(v) => match unit(v) {
                Some(u) => anchor_units.push(u),
                None => report.zero_norm.push(a.clone()),
            },
        }
    }
    if !report.missing_anchors.is_empty() {
        warn!("{} anchors missing from the external table", report.missing_anchors.len());
    }
    for w in external.words() {
        if anchors.contains(w) {
            continue;
        }
        let Some(u) = unit(external.row(w).expect("word from table")) else {
            report.zero_norm.push(w.to_string());
            continue;
        };
        if anchor_units.iter().any(|a| 1.0 - dot(a, &u) <= tau) {
            report.words.insert(w.to_string());
        }
    }
    if !report.zero_norm.is_empty() {
        warn!("{} zero-norm vectors excluded", report.zero_norm.len());
    }
    Ok(report)
}

/// Least-squares map from an external space into a model's embedding space.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentResult {
    pub m: Matrix,
    pub shared_words: Vec<String>,
    pub residual_frobenius: f64,
    /// Ridge actually used: zero unless the plain normal equations were singular.
    pub ridge: f64,
}

/// Solves `A_w M = A_v` over the words both tables share.
pub fn align(external: &EmbeddingMatrix, model: &EmbeddingMatrix) -> Result<AlignmentResult> {
    let shared: Vec<String> = model
        .words()
        .filter(|w| external.vocab().contains(w))
        .map(String::from)
        .collect();
    if shared.len() < external.dim() {
        return Err(CoreError::Alignment(format!(
            "{} shared words cannot determine a {}-dimensional map",
            shared.len(),
            external.dim()
        )));
    }
    let a_rows: Vec<usize> = shared.iter().map(|w| external.vocab().id(w)).collect();
    let v_rows: Vec<usize> = shared.iter().map(|w| model.vocab().id(w)).collect();
    let a = external.vectors().select_rows(&a_rows);
    let b = model.vectors().select_rows(&v_rows);
    let (m, ridge) = match least_squares(&a, &b, 0.0) {
        Ok(m) => (m, 0.0),
        Err(NumError::Singular { condition }) => {
            warn!("alignment normal matrix singular (condition {condition:.3e}); using ridge {ROBUST_RIDGE}");
            (least_squares(&a, &b, ROBUST_RIDGE)?, ROBUST_RIDGE)
        }
        Err(e) => return Err(e.into()),
    };
    let residual_frobenius = a.matmul(&m)?.sub(&b)?.frobenius_norm();
    Ok(AlignmentResult {
        m,
        shared_words: shared,
        residual_frobenius,
        ridge,
    })
}

/// Rows synthesized for new words, in lexicographic word order.
#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub words: Vec<String>,
    pub rows: Matrix,
    /// Targets missing from the external table.
    pub skipped: Vec<String>,
}

impl Expansion {
    pub fn row(&self, word: &str) -> Option<&[f64]> {
        self.words.iter().position(|w| w == word).map(|i| self.rows.row(i))
    }
}

/// Projects the external vectors of `targets` through the alignment map.
pub fn expand_vocab<S: AsRef<str>>(
    alignment: &AlignmentResult,
    external: &EmbeddingMatrix,
    targets: &[S],
) -> Result<Expansion> {
    let targets: BTreeSet<&str> = targets.iter().map(AsRef::as_ref).collect();
    let mut words = Vec::new();
    let mut skipped = Vec::new();
    let mut ids = Vec::new();
    for w in targets {
        match external.vocab().get(w) {
            Some(i) if i >= RESERVED.len() => {
                words.push(w.to_string());
                ids.push(i);
            }
            _ => skipped.push(w.to_string()),
        }
    }
    let dv = alignment.m.cols();
    let rows = if ids.is_empty() {
        Matrix::zeros(0, dv)
    } else {
        external.vectors().select_rows(&ids).matmul(&alignment.m)?
    };
    Ok(Expansion { words, rows, skipped })
}

/// Vocabulary regimes for the question encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum VocabSetting {
    Train,
    Oracle,
    General,
}

/// Which train-vocabulary words seed the general-setting neighbourhood.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorMode {
    Nouns,
    AllWords,
}

pub struct SettingInputs<'a> {
    pub novel_words: Option<&'a BTreeSet<String>>,
    pub external: Option<&'a EmbeddingMatrix>,
    pub tau: Option<f64>,
    pub anchors: AnchorMode,
    pub tagger: &'a dyn NounTagger,
}

/// Builds the vocabulary for a setting. Added words are appended in
/// lexicographic order after the training vocabulary.
pub fn build_vocabulary_for_setting(
    setting: VocabSetting,
    train_vocab: &Vocabulary,
    inputs: &SettingInputs<'_>,
) -> Result<Vocabulary> {
    match setting {
        VocabSetting::Train => Ok(train_vocab.clone().with_provenance(Provenance::Train)),
        VocabSetting::Oracle => {
            let novel = inputs
                .novel_words
                .ok_or_else(|| CoreError::Config("oracle setting needs the novel word list".into()))?;
            let mut v = train_vocab.clone().with_provenance(Provenance::Oracle);
            for w in novel {
                v.push(w, 0);
            }
            Ok(v)
        }
        VocabSetting::General => {
            let external = inputs
                .external
                .ok_or_else(|| CoreError::Config("general setting needs external embeddings".into()))?;
            let tau = inputs
                .tau
                .ok_or_else(|| CoreError::Config("general setting needs a distance threshold".into()))?;
            let anchors: BTreeSet<String> = train_vocab
                .tokens()
                .iter()
                .skip(RESERVED.len())
                .filter(|t| inputs.anchors == AnchorMode::AllWords || inputs.tagger.is_noun(t))
                .cloned()
                .collect();
            let report = cosine_neighbors(&anchors, external, tau)?;
            let mut v = train_vocab.clone().with_provenance(Provenance::General);
            for w in &report.words {
                v.push(w, 0);
            }
            Ok(v)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::LexiconTagger;
    use nvq_numkit::Rng;

    fn table(words: &[&str], rows: Vec<Vec<f64>>) -> EmbeddingMatrix {
        let mut v = Vocabulary::reserved(Provenance::External);
        for w in words {
            v.push(w, 1);
        }
        let d = rows[0].len();
        let mut all = vec![vec![0.0; d]; RESERVED.len()];
        all.extend(rows);
        EmbeddingMatrix::new(v, Matrix::from_rows(&all).unwrap()).unwrap()
    }

    /// dog = e1; wolf at cosine 0.9 to dog; sofa at cosine 0.1.
    pub(crate) fn wolf_sofa_fixture() -> EmbeddingMatrix {
        let s = |c: f64| (1.0 - c * c).sqrt();
        table(
            &["dog", "wolf", "sofa"],
            vec![vec![1.0, 0.0, 0.0], vec![0.9, s(0.9), 0.0], vec![0.1, 0.0, s(0.1)]],
        )
    }

    #[test]
    fn neighbors_of_dog() {
        let ext = wolf_sofa_fixture();
        let anchors: BTreeSet<String> = ["dog".to_string()].into();
        let r = cosine_neighbors(&anchors, &ext, 0.4).unwrap();
        assert_eq!(r.words.into_iter().collect::<Vec<_>>(), ["wolf"]);
        assert!(cosine_neighbors(&anchors, &ext, 1e-12).unwrap().words.is_empty());
        assert!(cosine_neighbors(&anchors, &ext, 0.0).is_err());
    }

    #[test]
    fn missing_and_zero_rows_are_reported() {
        let ext = table(&["dog", "blank"], vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
        let anchors: BTreeSet<String> = ["dog".to_string(), "cat".to_string()].into();
        let r = cosine_neighbors(&anchors, &ext, 1.0).unwrap();
        assert_eq!(r.missing_anchors, ["cat"]);
        assert_eq!(r.zero_norm, ["blank"]);
    }

    #[test]
    fn identical_tables_align_to_identity() {
        let mut rng = Rng::new(3);
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(String::as_str).collect();
        let rows: Vec<Vec<f64>> = (0..12).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
        let a = table(&refs, rows);
        let r = align(&a, &a).unwrap();
        assert!(r.m.sub(&Matrix::identity(4)).unwrap().max_abs() < 1e-10);
        assert!(r.residual_frobenius < 1e-10);
        assert_eq!(r.ridge, 0.0);
    }

    #[test]
    fn too_few_shared_words() {
        let a = table(&["a", "b"], vec![vec![1.0; 5], vec![2.0; 5]]);
        assert!(matches!(align(&a, &a), Err(CoreError::Alignment(_))));
    }

    #[test]
    fn identity_expansion_copies_external_rows() {
        let ext = wolf_sofa_fixture();
        let al = AlignmentResult {
            m: Matrix::identity(3),
            shared_words: vec![],
            residual_frobenius: 0.0,
            ridge: 0.0,
        };
        let e = expand_vocab(&al, &ext, &["wolf", "yeti"]).unwrap();
        assert_eq!(e.row("wolf").unwrap(), ext.row("wolf").unwrap());
        assert_eq!(e.skipped, ["yeti"]);
        let empty: [&str; 0] = [];
        assert_eq!(expand_vocab(&al, &ext, &empty).unwrap().rows.rows(), 0);
    }

    #[test]
    fn text_format_round_trip() {
        let ext = wolf_sofa_fixture();
        let text = ext.to_text();
        assert!(text.starts_with("3 3\ndog "));
        assert_eq!(EmbeddingMatrix::parse_text(&text).unwrap(), ext);
        assert!(EmbeddingMatrix::parse_text("2 3\ndog 1 2 3\n").is_err());
    }

    #[test]
    fn settings() {
        let tagger = LexiconTagger::bundled();
        let train = crate::text::build_vocab(["is there a dog"], 1, Provenance::Train).unwrap();
        let ext = wolf_sofa_fixture();
        let novel: BTreeSet<String> = ["wolf".to_string()].into();
        let inputs = SettingInputs {
            novel_words: Some(&novel),
            external: Some(&ext),
            tau: Some(0.4),
            anchors: AnchorMode::Nouns,
            tagger: &tagger,
        };
        let t = build_vocabulary_for_setting(VocabSetting::Train, &train, &inputs).unwrap();
        assert_eq!(t.tokens(), train.tokens());
        let o = build_vocabulary_for_setting(VocabSetting::Oracle, &train, &inputs).unwrap();
        assert_eq!(o.tokens().last().unwrap(), "wolf");
        assert_eq!(o.provenance(), Provenance::Oracle);
        let g = build_vocabulary_for_setting(VocabSetting::General, &train, &inputs).unwrap();
        assert_eq!(&g.tokens()[train.len()..], ["wolf"]);
        let bare = SettingInputs {
            novel_words: None,
            external: None,
            tau: None,
            anchors: AnchorMode::Nouns,
            tagger: &tagger,
        };
        assert!(build_vocabulary_for_setting(VocabSetting::Oracle, &train, &bare)
            .unwrap_err()
            .is_config());
    }
}
