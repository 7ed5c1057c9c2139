//! Dataset records and image feature storage.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nvq_numkit::Matrix;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::text::tokenize;

pub const ANSWERS_PER_QUESTION: usize = 10;

/// One question about one image. Image features live in a [`FeatureStore`]
/// keyed by `image_id`, so several questions can share an image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VqaExample {
    pub qid: String,
    pub image_id: String,
    pub question: String,
    pub answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<String>>,
    pub question_type: String,
}

impl VqaExample {
    pub fn question_tokens(&self) -> Vec<String> {
        tokenize(&self.question)
    }

    /// Tokens of every answer, multi-word answers split.
    pub fn answer_tokens(&self) -> Vec<String> {
        self.answers.iter().flat_map(|a| tokenize(a)).collect()
    }

    /// Most frequent answer after normalization, ties broken lexicographically.
    pub fn mode_answer(&self) -> Option<String> {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for a in &self.answers {
            *counts.entry(normalize_answer(a)).or_insert(0) += 1;
        }
        counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)))
            .map(|(a, _)| a)
    }
}

/// Lowercase and trim.
pub fn normalize_answer(answer: &str) -> String {
    answer.trim().to_lowercase()
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line)
            .map_err(|e| CoreError::Data(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(item);
    }
    Ok(out)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut buf = serde_json::to_vec_pretty(value)?;
    buf.push(b'\n');
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CoreError::Data(format!("{}: {e}", path.display())))
}

/// Image feature vectors keyed by image id: one matrix row per image.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStore {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    features: Matrix,
}

impl FeatureStore {
    pub fn new(ids: Vec<String>, features: Matrix) -> Result<Self> {
        if ids.len() != features.rows() {
            return Err(CoreError::Data(format!(
                "{} image ids for {} feature rows",
                ids.len(),
                features.rows()
            )));
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(CoreError::Data(format!("duplicate image id `{id}`")));
            }
        }
        Ok(Self { ids, index, features })
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn matrix(&self) -> &Matrix {
        &self.features
    }

    pub fn get(&self, image_id: &str) -> Option<&[f64]> {
        self.index.get(image_id).map(|&i| self.features.row(i))
    }

    /// Feature column vector for `image_id`.
    pub fn column(&self, image_id: &str) -> Result<Matrix> {
        let row = self
            .get(image_id)
            .ok_or_else(|| CoreError::Data(format!("no features for image `{image_id}`")))?;
        Ok(Matrix::column(row.to_vec())?)
    }

    /// Row-wise concatenation of two stores over the same ids (early fusion).
    pub fn concat(&self, other: &FeatureStore) -> Result<FeatureStore> {
        let mut data = Vec::with_capacity(self.len() * (self.dim() + other.dim()));
        for (i, id) in self.ids.iter().enumerate() {
            let b = other
                .get(id)
                .ok_or_else(|| CoreError::Data(format!("image `{id}` missing from second feature family")))?;
            data.extend_from_slice(self.features.row(i));
            data.extend_from_slice(b);
        }
        let m = Matrix::new(self.len(), self.dim() + other.dim(), data)?;
        FeatureStore::new(self.ids.clone(), m)
    }

    /// Writes `<stem>.nvqm` (features) and `<stem>.ids` (one id per line).
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<()> {
        let stem = stem.as_ref();
        self.features.save(stem.with_extension("nvqm"))?;
        let mut f = fs::File::create(stem.with_extension("ids"))?;
        for id in &self.ids {
            writeln!(f, "{id}")?;
        }
        Ok(())
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self> {
        let stem = stem.as_ref();
        let features = Matrix::load(stem.with_extension("nvqm"))?;
        let ids = fs::read_to_string(stem.with_extension("ids"))?
            .lines()
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        Self::new(ids, features)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example(answers: &[&str]) -> VqaExample {
        VqaExample {
            qid: "q".into(),
            image_id: "i".into(),
            question: "is there a dog".into(),
            answers: answers.iter().map(|s| s.to_string()).collect(),
            choices: None,
            question_type: "yes/no".into(),
        }
    }

    #[test]
    fn mode_answer_breaks_ties_lexicographically() {
        assert_eq!(example(&["no", "yes", "Yes ", "no"]).mode_answer().unwrap(), "no");
        assert_eq!(example(&["b", "a"]).mode_answer().unwrap(), "a");
    }

    #[test]
    fn feature_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let s = FeatureStore::new(vec!["a".into(), "b".into()], m).unwrap();
        s.save(dir.path().join("feat")).unwrap();
        let back = FeatureStore::load(dir.path().join("feat")).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.get("b").unwrap(), &[4.0, 5.0, 6.0]);
        let ef = s.concat(&s).unwrap();
        assert_eq!(ef.get("a").unwrap(), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn example_json_is_strict() {
        let bad = r#"{"qid":"1","image_id":"i","question":"q","answers":[],"question_type":"x","extra":1}"#;
        assert!(serde_json::from_str::<VqaExample>(bad).is_err());
    }
}
