//! Consensus accuracy, open-ended and multiple-choice protocols, category
//! breakdowns and known/novel comparisons.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{normalize_answer, VqaExample, ANSWERS_PER_QUESTION};
use crate::error::{CoreError, Result};
use crate::text::tokenize;

/// Marker written where a relative drop is undefined.
pub const UNDEFINED: &str = "undefined";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "OEQ")]
    Oeq,
    #[serde(rename = "MCQ")]
    Mcq,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Oeq => "OEQ",
            Protocol::Mcq => "MCQ",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Overall,
    Others,
    Numbers,
    #[serde(rename = "Yes/No")]
    YesNo,
    Novel,
}

impl Category {
    pub const ALL: [Category; 5] = [
        Category::Overall,
        Category::Others,
        Category::Numbers,
        Category::YesNo,
        Category::Novel,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Overall => "Overall",
            Category::Others => "Others",
            Category::Numbers => "Numbers",
            Category::YesNo => "Yes/No",
            Category::Novel => "Novel",
        }
    }
}

/// Maps dataset `question_type` labels onto answer-type categories.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryMap {
    pub yes_no: Vec<String>,
    pub number: Vec<String>,
}

impl Default for CategoryMap {
    fn default() -> Self {
        Self {
            yes_no: vec!["yes/no".into()],
            number: vec!["number".into()],
        }
    }
}

impl CategoryMap {
    pub fn category(&self, question_type: &str) -> Category {
        if self.yes_no.iter().any(|t| t == question_type) {
            Category::YesNo
        } else if self.number.iter().any(|t| t == question_type) {
            Category::Numbers
        } else {
            Category::Others
        }
    }
}

/// Number of human answers matching `prediction`, capped at 3.
fn matches_capped(prediction: &str, answers: &[String]) -> Result<u32> {
    if answers.len() != ANSWERS_PER_QUESTION {
        return Err(CoreError::Data(format!(
            "expected {ANSWERS_PER_QUESTION} human answers, got {}",
            answers.len()
        )));
    }
    let p = normalize_answer(prediction);
    let n = answers.iter().filter(|a| normalize_answer(a) == p).count() as u32;
    Ok(n.min(3))
}

/// `min(#matching human answers / 3, 1)`.
pub fn question_accuracy(prediction: &str, answers: &[String]) -> Result<f64> {
    Ok(f64::from(matches_capped(prediction, answers)?) / 3.0)
}

/// True when the question names at least one novel noun and no known one.
pub fn is_novel_question(question: &str, known: &BTreeSet<String>, novel: &BTreeSet<String>) -> bool {
    let toks = tokenize(question);
    toks.iter().any(|t| novel.contains(t)) && !toks.iter().any(|t| known.contains(t))
}

pub trait Predictor {
    fn predict(&self, example: &VqaExample, protocol: Protocol) -> Result<String>;
}

impl<F> Predictor for F
where
    F: Fn(&VqaExample, Protocol) -> Result<String>,
{
    fn predict(&self, example: &VqaExample, protocol: Protocol) -> Result<String> {
        self(example, protocol)
    }
}

/// One line of the prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub qid: String,
    pub question: String,
    pub prediction: String,
    pub ground_truth_answers: Vec<String>,
    pub correct_weight: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    /// Sum of per-question accuracies in thirds.
    pub thirds: u64,
    pub count: u64,
}

impl Tally {
    pub fn accuracy(&self) -> Option<f64> {
        (self.count > 0).then(|| self.thirds as f64 / (3 * self.count) as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    /// Mean accuracy in `[0, 1]`; absent when the category is empty.
    pub accuracy: Option<f64>,
    pub count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub protocol: Protocol,
    pub categories: BTreeMap<Category, CategoryScore>,
    #[serde(skip)]
    pub records: Vec<QuestionRecord>,
}

impl EvalResult {
    pub fn accuracy(&self, c: Category) -> Option<f64> {
        self.categories.get(&c).and_then(|s| s.accuracy)
    }

    /// Accuracy in percent, as printed in result tables.
    pub fn percent(&self, c: Category) -> Option<f64> {
        self.accuracy(c).map(|a| 100.0 * a)
    }
}

/// Accuracy tallies from already-computed predictions.
pub fn score(
    examples: &[VqaExample],
    predictions: &[String],
    protocol: Protocol,
    known: &BTreeSet<String>,
    novel: &BTreeSet<String>,
    map: &CategoryMap,
) -> Result<EvalResult> {
    if examples.len() != predictions.len() {
        return Err(CoreError::Contract(format!(
            "{} predictions for {} examples",
            predictions.len(),
            examples.len()
        )));
    }
    let mut tallies: BTreeMap<Category, Tally> = Category::ALL.iter().map(|&c| (c, Tally::default())).collect();
    let mut records = Vec::with_capacity(examples.len());
    for (ex, pred) in examples.iter().zip(predictions) {
        let thirds = u64::from(matches_capped(pred, &ex.answers)?);
        let mut cats = vec![Category::Overall, map.category(&ex.question_type)];
        if is_novel_question(&ex.question, known, novel) {
            cats.push(Category::Novel);
        }
        for c in cats {
            let t = tallies.get_mut(&c).expect("all categories present");
            t.thirds += thirds;
            t.count += 1;
        }
        records.push(QuestionRecord {
            qid: ex.qid.clone(),
            question: ex.question.clone(),
            prediction: pred.clone(),
            ground_truth_answers: ex.answers.clone(),
            correct_weight: thirds as f64 / 3.0,
        });
    }
    let categories = tallies
        .into_iter()
        .map(|(c, t)| {
            (
                c,
                CategoryScore {
                    accuracy: t.accuracy(),
                    count: t.count,
                },
            )
        })
        .collect();
    Ok(EvalResult {
        protocol,
        categories,
        records,
    })
}

/// Runs `predictor` over `examples` and scores the result.
pub fn evaluate(
    predictor: &dyn Predictor,
    examples: &[VqaExample],
    protocol: Protocol,
    known: &BTreeSet<String>,
    novel: &BTreeSet<String>,
    map: &CategoryMap,
) -> Result<EvalResult> {
    let predictions = examples
        .iter()
        .map(|ex| predictor.predict(ex, protocol))
        .collect::<Result<Vec<_>>>()?;
    score(examples, &predictions, protocol, known, novel, map)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropRow {
    pub category: Category,
    pub known: Option<f64>,
    pub novel: Option<f64>,
    pub drop: Option<f64>,
    /// `drop / known`; `None` when `known` is zero or missing.
    pub relative: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropReport {
    pub protocol: Protocol,
    pub rows: Vec<DropRow>,
}

/// Absolute and relative drop from `known` to `novel`, in percentage points.
pub fn drop_report(known: &EvalResult, novel: &EvalResult) -> Result<DropReport> {
    if known.protocol != novel.protocol {
        return Err(CoreError::Contract("drop report compares results of different protocols".into()));
    }
    let cats_k: BTreeSet<_> = known.categories.keys().collect();
    let cats_n: BTreeSet<_> = novel.categories.keys().collect();
    if cats_k != cats_n {
        return Err(CoreError::Contract("drop report needs identical category sets".into()));
    }
    let rows = Category::ALL
        .iter()
        .filter(|c| known.categories.contains_key(c))
        .map(|&c| {
            let k = known.percent(c);
            let n = novel.percent(c);
            let drop = k.zip(n).map(|(k, n)| k - n);
            let relative = drop.zip(k).and_then(|(d, k)| (k != 0.0).then(|| d / k));
            DropRow {
                category: c,
                known: k,
                novel: n,
                drop,
                relative,
            }
        })
        .collect();
    Ok(DropReport {
        protocol: known.protocol,
        rows,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| UNDEFINED.to_string(), |v| format!("{v:.4}"))
}

impl DropReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("protocol,category,known,novel,drop,relative_drop\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                self.protocol.as_str(),
                r.category.as_str(),
                cell(r.known),
                cell(r.novel),
                cell(r.drop),
                cell(r.relative)
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn answers(matching: usize) -> Vec<String> {
        (0..10)
            .map(|i| if i < matching { "yes".to_string() } else { format!("other{i}") })
            .collect()
    }

    #[test]
    fn consensus_values() {
        assert_eq!(question_accuracy("yes", &answers(5)).unwrap(), 1.0);
        assert_eq!(question_accuracy("yes", &answers(2)).unwrap(), 2.0 / 3.0);
        assert_eq!(question_accuracy("yes", &answers(0)).unwrap(), 0.0);
        assert_eq!(question_accuracy(" YES ", &answers(3)).unwrap(), 1.0);
        assert!(question_accuracy("yes", &answers(5)[..9]).is_err());
    }

    fn ex(qid: &str, q: &str, qt: &str, a: &str) -> VqaExample {
        VqaExample {
            qid: qid.into(),
            image_id: "img".into(),
            question: q.into(),
            answers: vec![a.to_string(); 10],
            choices: None,
            question_type: qt.into(),
        }
    }

    #[test]
    fn constant_yes_predictor() {
        let examples = vec![
            ex("1", "is there a dog", "yes/no", "yes"),
            ex("2", "is there a wolf", "yes/no", "yes"),
            ex("3", "how many dog are there", "number", "2"),
        ];
        let known: BTreeSet<String> = ["dog".to_string()].into();
        let novel: BTreeSet<String> = ["wolf".to_string()].into();
        let yes = |_: &VqaExample, _: Protocol| -> Result<String> { Ok("yes".into()) };
        let r = evaluate(&yes, &examples, Protocol::Oeq, &known, &novel, &CategoryMap::default()).unwrap();
        assert_eq!(r.accuracy(Category::YesNo), Some(1.0));
        assert_eq!(r.accuracy(Category::Numbers), Some(0.0));
        assert_eq!(r.accuracy(Category::Overall), Some(2.0 / 3.0));
        assert_eq!(r.categories[&Category::Novel].count, 1);
        assert_eq!(r.accuracy(Category::Others), None);
    }

    #[test]
    fn drops() {
        let mk = |overall: f64| EvalResult {
            protocol: Protocol::Oeq,
            categories: [(
                Category::Overall,
                CategoryScore {
                    accuracy: Some(overall),
                    count: 1,
                },
            )]
            .into(),
            records: vec![],
        };
        let r = drop_report(&mk(0.5423), &mk(0.3938)).unwrap();
        assert!((r.rows[0].drop.unwrap() - 14.85).abs() < 1e-9);
        let r = drop_report(&mk(0.4), &mk(0.4)).unwrap();
        assert_eq!(r.rows[0].drop, Some(0.0));
        assert_eq!(r.rows[0].relative, Some(0.0));
        let r = drop_report(&mk(0.0), &mk(0.0)).unwrap();
        assert_eq!(r.rows[0].relative, None);
        assert!(r.to_csv().ends_with(",undefined\n"));
    }
}
