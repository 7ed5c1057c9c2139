//! Weakly paired image/sentence data: per-class image features crossed with
//! sentences that mention the class word.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use nvq_numkit::{Matrix, Rng};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::text::tokenize;

/// Class word → feature rows (one image per row).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ImageIndex {
    classes: BTreeMap<String, Matrix>,
}

impl ImageIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, word: &str, features: Matrix) -> Result<()> {
        if let Some(d) = self.dim() {
            if features.cols() != d {
                return Err(CoreError::Data(format!(
                    "class `{word}` has {}-dim features, index holds {d}",
                    features.cols()
                )));
            }
        }
        self.classes.insert(word.to_string(), features);
        Ok(())
    }

    pub fn get(&self, word: &str) -> Option<&Matrix> {
        self.classes.get(word)
    }

    pub fn dim(&self) -> Option<usize> {
        self.classes.values().next().map(Matrix::cols)
    }

    pub fn classes(&self) -> impl Iterator<Item = &str> {
        self.classes.keys().map(String::as_str)
    }

    /// One `<word>.nvqm` file per class.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (w, m) in &self.classes {
            m.save(dir.join(format!("{w}.nvqm")))?;
        }
        Ok(())
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let mut names: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "nvqm"))
            .collect();
        names.sort();
        let mut index = Self::new();
        for p in names {
            let word = p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            index.insert(&word, Matrix::load(&p)?)?;
        }
        Ok(index)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSource {
    pub corpus: usize,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinedSentence {
    pub text: String,
    pub source: SentenceSource,
}

pub type SentenceIndex = BTreeMap<String, Vec<MinedSentence>>;

/// Sentences containing each object token, in corpus order, without duplicates.
pub fn sentence_mine<S: AsRef<str>>(corpora: &[Vec<S>], objects: &BTreeSet<String>) -> SentenceIndex {
    let mut index: SentenceIndex = objects.iter().map(|o| (o.clone(), Vec::new())).collect();
    let mut seen: BTreeMap<&str, HashSet<String>> = objects.iter().map(|o| (o.as_str(), HashSet::new())).collect();
    for (c, corpus) in corpora.iter().enumerate() {
        for (l, line) in corpus.iter().enumerate() {
            let line = line.as_ref().trim();
            let toks: BTreeSet<String> = tokenize(line).into_iter().collect();
            for o in objects.iter().filter(|o| toks.contains(*o)) {
                if seen.get_mut(o.as_str()).expect("object").insert(line.to_string()) {
                    index.get_mut(o).expect("object").push(MinedSentence {
                        text: line.to_string(),
                        source: SentenceSource { corpus: c, line: l },
                    });
                }
            }
        }
    }
    index
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeakPair {
    pub word: String,
    pub image_row: usize,
    pub features: Vec<f64>,
    pub sentence: String,
    pub sentence_source: SentenceSource,
}

impl WeakPair {
    pub fn image_row_ref(&self) -> String {
        format!("{}/{}", self.word, self.image_row)
    }

    pub fn record(&self) -> PairRecord {
        PairRecord {
            word: self.word.clone(),
            image_row_ref: self.image_row_ref(),
            sentence: self.sentence.clone(),
        }
    }
}

/// Serialized form of a pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub word: String,
    /// `<class word>/<row index>` into the image index.
    pub image_row_ref: String,
    pub sentence: String,
}

impl PairRecord {
    pub fn resolve(&self, images: &ImageIndex) -> Result<Vec<f64>> {
        let (class, row) = self
            .image_row_ref
            .rsplit_once('/')
            .ok_or_else(|| CoreError::Data(format!("bad image reference `{}`", self.image_row_ref)))?;
        let row: usize = row
            .parse()
            .map_err(|_| CoreError::Data(format!("bad image reference `{}`", self.image_row_ref)))?;
        let m = images
            .get(class)
            .filter(|m| row < m.rows())
            .ok_or_else(|| CoreError::Data(format!("dangling image reference `{}`", self.image_row_ref)))?;
        Ok(m.row(row).to_vec())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub word: String,
    pub reason: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSet {
    pub pairs: Vec<WeakPair>,
    pub skipped: Vec<SkipEntry>,
}

fn word_stream(word: &str) -> u64 {
    word.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

/// For each object: `min(m, images) × min(n, sentences)` pairs from uniform
/// samples without replacement.
pub fn generate_pairs(
    objects: &BTreeSet<String>,
    images: &ImageIndex,
    sentences: &SentenceIndex,
    m: usize,
    n: usize,
    seed: u64,
) -> Result<PairSet> {
    if m == 0 || n == 0 {
        return Err(CoreError::Contract("m and n must be at least 1".into()));
    }
    let root = Rng::new(seed);
    let mut out = PairSet::default();
    for word in objects {
        let feats = images.get(word).filter(|f| f.rows() > 0);
        let sents = sentences.get(word).filter(|s| !s.is_empty());
        let (feats, sents) = match (feats, sents) {
            (Some(f), Some(s)) => (f, s),
            (f, s) => {
                let reason = match (f.is_none(), s.is_none()) {
                    (true, true) => "no images and no sentences",
                    (true, false) => "no images",
                    _ => "no sentences",
                };
                out.skipped.push(SkipEntry {
                    word: word.clone(),
                    reason: reason.into(),
                });
                continue;
            }
        };
        let mut rng = root.derive(word_stream(word));
        let mut img_rows = rng.sample_indices(feats.rows(), m.min(feats.rows()));
        let mut sent_rows = rng.sample_indices(sents.len(), n.min(sents.len()));
        img_rows.sort_unstable();
        sent_rows.sort_unstable();
        for &r in &img_rows {
            for &s in &sent_rows {
                out.pairs.push(WeakPair {
                    word: word.clone(),
                    image_row: r,
                    features: feats.row(r).to_vec(),
                    sentence: sents[s].text.clone(),
                    sentence_source: sents[s].source.clone(),
                });
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn objects(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn mining_dedupes_and_keeps_order() {
        let corpus = vec!["a wolf howls", "the dog sleeps", "a wolf howls", "wolves run"];
        let idx = sentence_mine(&[corpus], &objects(&["wolf", "dog"]));
        assert_eq!(idx["wolf"].len(), 1);
        assert_eq!(idx["dog"][0].source, SentenceSource { corpus: 0, line: 1 });
    }

    #[test]
    fn cross_product_and_skips() {
        let mut images = ImageIndex::new();
        images.insert("dog", Matrix::zeros(5, 2)).unwrap();
        let corpus = vec!["dog one", "dog two", "dog three", "dog four", "cat one"];
        let sents = sentence_mine(&[corpus], &objects(&["dog", "cat"]));
        let out = generate_pairs(&objects(&["dog", "cat"]), &images, &sents, 2, 3, 9).unwrap();
        assert_eq!(out.pairs.len(), 6);
        assert_eq!(out.skipped, vec![SkipEntry { word: "cat".into(), reason: "no images".into() }]);
        let again = generate_pairs(&objects(&["dog", "cat"]), &images, &sents, 2, 3, 9).unwrap();
        assert_eq!(again, out);
    }

    #[test]
    fn record_resolves_features() {
        let mut images = ImageIndex::new();
        images.insert("dog", Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap()).unwrap();
        let rec = PairRecord {
            word: "dog".into(),
            image_row_ref: "dog/1".into(),
            sentence: "a dog".into(),
        };
        assert_eq!(rec.resolve(&images).unwrap(), vec![3.0, 4.0]);
    }
}
