//! Novel-object split construction: noun profiles, k-means clustering,
//! per-cluster known/novel sampling, question assignment, audits and
//! split statistics.

use std::collections::{BTreeMap, BTreeSet};

use log::warn;
use nvq_numkit::Rng;
use serde::{Deserialize, Serialize};

use crate::data::VqaExample;
use crate::error::{CoreError, Result};
use crate::text::{extract_nouns, tokenize, NounTagger};

pub const DEFAULT_K: usize = 14;
pub const DEFAULT_NOVEL_FRACTION: f64 = 0.2;
pub const DEFAULT_VAL_RATIO: f64 = 0.022;
pub const KMEANS_RESTARTS: usize = 20;
const KMEANS_MAX_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NounProfile {
    pub noun: String,
    pub histogram: BTreeMap<String, u64>,
    pub normalized: BTreeMap<String, f64>,
}

impl NounProfile {
    /// Normalized histogram over `labels`, zeros for absent labels.
    pub fn vector(&self, labels: &[String]) -> Vec<f64> {
        labels
            .iter()
            .map(|l| self.normalized.get(l).copied().unwrap_or(0.0))
            .collect()
    }
}

/// Question-type histogram of every noun found in the questions.
pub fn profile_nouns(examples: &[VqaExample], tagger: &dyn NounTagger) -> BTreeMap<String, NounProfile> {
    let mut hist: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for ex in examples {
        for noun in extract_nouns(&ex.question, tagger) {
            *hist
                .entry(noun)
                .or_default()
                .entry(ex.question_type.clone())
                .or_insert(0) += 1;
        }
    }
    hist.into_iter()
        .map(|(noun, histogram)| {
            let total: u64 = histogram.values().sum();
            let normalized = histogram
                .iter()
                .map(|(k, &v)| (k.clone(), v as f64 / total as f64))
                .collect();
            let p = NounProfile {
                noun: noun.clone(),
                histogram,
                normalized,
            };
            (noun, p)
        })
        .collect()
}

/// Sorted union of question-type labels across profiles.
pub fn profile_labels(profiles: &BTreeMap<String, NounProfile>) -> Vec<String> {
    profiles
        .values()
        .flat_map(|p| p.histogram.keys().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub assignment: BTreeMap<String, usize>,
    pub k: usize,
    pub inertia: f64,
    /// Inertia after each assignment step of the winning restart.
    pub trace: Vec<f64>,
}

impl Clustering {
    pub fn members(&self) -> Vec<Vec<String>> {
        let mut out = vec![Vec::new(); self.k];
        for (noun, &c) in &self.assignment {
            out[c].push(noun.clone());
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![points[rng.below(points.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = points.iter().map(|p| nearest(p, &centers).1).collect();
        let idx = if d.iter().sum::<f64>() > 0.0 {
            rng.weighted_index(&d)
        } else {
            rng.below(points.len())
        };
        centers.push(points[idx].clone());
    }
    centers
}

/// One Lloyd run. Returns labels, final inertia and the per-iteration trace.
fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>) -> (Vec<usize>, f64, Vec<f64>) {
    let k = centers.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    let mut trace = Vec::new();
    for _ in 0..KMEANS_MAX_ITERS {
        let mut changed = false;
        let mut inertia = 0.0;
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centers);
            inertia += d;
            if labels[i] != j {
                labels[i] = j;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centers[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                // An empty cluster takes the point farthest from its center.
                let far = points
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centers[labels[i]])))
                    .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a })
                    .0;
                centers[j] = points[far].clone();
            }
        }
    }
    let inertia = *trace.last().expect("at least one iteration");
    (labels, inertia, trace)
}

/// k-means on the normalized histograms with k-means++ seeding and
/// [`KMEANS_RESTARTS`] restarts; the lowest-inertia run wins.
pub fn cluster_nouns(profiles: &BTreeMap<String, NounProfile>, k: usize, seed: u64) -> Result<Clustering> {
    if k == 0 || k > profiles.len() {
        return Err(CoreError::Contract(format!(
            "cannot form {k} clusters from {} nouns",
            profiles.len()
        )));
    }
    let labels = profile_labels(profiles);
    let nouns: Vec<&String> = profiles.keys().collect();
    let points: Vec<Vec<f64>> = profiles.values().map(|p| p.vector(&labels)).collect();
    let root = Rng::new(seed);
    let mut best: Option<(Vec<usize>, f64, Vec<f64>)> = None;
    for r in 0..KMEANS_RESTARTS {
        let mut rng = root.derive(r as u64);
        let centers = plus_plus_init(&points, k, &mut rng);
        let run = lloyd(&points, centers);
        if best.as_ref().is_none_or(|b| run.1 < b.1) {
            best = Some(run);
        }
    }
    let (raw, inertia, trace) = best.expect("at least one restart");
    // Relabel clusters by first appearance so ids do not depend on seeding order.
    let mut remap = BTreeMap::new();
    for &l in &raw {
        let next = remap.len();
        remap.entry(l).or_insert(next);
    }
    let assignment = nouns
        .iter()
        .zip(&raw)
        .map(|(n, l)| ((*n).clone(), remap[l]))
        .collect();
    Ok(Clustering {
        assignment,
        k: remap.len(),
        inertia,
        trace,
    })
}

/// Number of novel nouns drawn from a cluster of `n` nouns.
pub fn novel_quota(n: usize, fraction: f64) -> usize {
    let q = (fraction * n as f64 + 0.5).floor() as usize;
    if n >= 2 && q >= n {
        n - 1
    } else {
        q.min(n)
    }
}

/// Per-cluster uniform sampling of novel nouns; the rest are known.
pub fn sample_known_novel(
    clustering: &Clustering,
    fraction: f64,
    seed: u64,
) -> Result<(BTreeSet<String>, BTreeSet<String>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CoreError::Contract(format!("novel fraction must lie in (0, 1), got {fraction}")));
    }
    let root = Rng::new(seed);
    let mut known = BTreeSet::new();
    let mut novel = BTreeSet::new();
    for (c, members) in clustering.members().into_iter().enumerate() {
        let mut rng = root.derive(c as u64);
        let picks: BTreeSet<usize> = rng
            .sample_indices(members.len(), novel_quota(members.len(), fraction))
            .into_iter()
            .collect();
        for (i, m) in members.into_iter().enumerate() {
            if picks.contains(&i) {
                novel.insert(m);
            } else {
                known.insert(m);
            }
        }
    }
    Ok((known, novel))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub seed: u64,
    pub k: usize,
    pub novel_fraction: f64,
    pub known_nouns: BTreeSet<String>,
    pub novel_nouns: BTreeSet<String>,
    pub assignment: BTreeMap<String, SplitPart>,
}

impl SplitSpec {
    pub fn part(&self, qid: &str) -> Option<SplitPart> {
        self.assignment.get(qid).copied()
    }

    /// Examples assigned to `part`, in dataset order.
    pub fn select<'a>(&self, examples: &'a [VqaExample], part: SplitPart) -> Vec<&'a VqaExample> {
        examples.iter().filter(|e| self.part(&e.qid) == Some(part)).collect()
    }

    pub fn select_owned(&self, examples: &[VqaExample], part: SplitPart) -> Vec<VqaExample> {
        self.select(examples, part).into_iter().cloned().collect()
    }
}

/// Canonical tokens of the question and of every answer.
fn mentioned_tokens(ex: &VqaExample, tagger: &dyn NounTagger) -> BTreeSet<String> {
    tokenize(&ex.question)
        .into_iter()
        .chain(ex.answer_tokens())
        .map(|t| tagger.canonical(&t))
        .collect()
}

pub fn contains_novel(ex: &VqaExample, novel: &BTreeSet<String>, tagger: &dyn NounTagger) -> bool {
    mentioned_tokens(ex, tagger).iter().any(|t| novel.contains(t))
}

pub fn default_val_size(remainder: usize) -> usize {
    (DEFAULT_VAL_RATIO * remainder as f64).round() as usize
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub seed: u64,
    pub k: usize,
    pub novel_fraction: f64,
    pub val_size: Option<usize>,
}

impl SplitConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            k: DEFAULT_K,
            novel_fraction: DEFAULT_NOVEL_FRACTION,
            val_size: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitOutcome {
    pub spec: SplitSpec,
    pub clustering: Clustering,
    pub warnings: Vec<String>,
}

/// Questions naming a novel noun (in the question or any answer) go to test;
/// a uniform sample of the rest becomes val; everything else is train.
pub fn assign_questions(
    examples: &[VqaExample],
    known: &BTreeSet<String>,
    novel: &BTreeSet<String>,
    config: &SplitConfig,
    tagger: &dyn NounTagger,
) -> Result<(SplitSpec, Vec<String>)> {
    let mut assignment = BTreeMap::new();
    let mut remainder = Vec::new();
    let mut seen = BTreeSet::new();
    for ex in examples {
        if !seen.insert(ex.qid.as_str()) {
            return Err(CoreError::Data(format!("duplicate question id `{}`", ex.qid)));
        }
        if contains_novel(ex, novel, tagger) {
            assignment.insert(ex.qid.clone(), SplitPart::Test);
        } else {
            remainder.push(ex.qid.as_str());
        }
    }
    let mut warnings = Vec::new();
    if assignment.is_empty() {
        let msg = "degenerate split: no question mentions a novel noun, test set is empty".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }
    let val_size = config.val_size.unwrap_or_else(|| default_val_size(remainder.len()));
    if val_size > 0 && val_size >= remainder.len().saturating_sub(val_size) {
        return Err(CoreError::Contract(format!(
            "val size {val_size} leaves no larger train split from {} questions",
            remainder.len()
        )));
    }
    let mut rng = Rng::new(config.seed).derive(0x7661_6c);
    let val: BTreeSet<usize> = rng.sample_indices(remainder.len(), val_size).into_iter().collect();
    for (i, qid) in remainder.into_iter().enumerate() {
        let part = if val.contains(&i) { SplitPart::Val } else { SplitPart::Train };
        assignment.insert(qid.to_string(), part);
    }
    Ok((
        SplitSpec {
            seed: config.seed,
            k: config.k,
            novel_fraction: config.novel_fraction,
            known_nouns: known.clone(),
            novel_nouns: novel.clone(),
            assignment,
        },
        warnings,
    ))
}

/// Profile, cluster, sample and assign in one pass.
pub fn generate_split(examples: &[VqaExample], tagger: &dyn NounTagger, config: &SplitConfig) -> Result<SplitOutcome> {
    let profiles = profile_nouns(examples, tagger);
    let clustering = cluster_nouns(&profiles, config.k, config.seed)?;
    let (known, novel) = sample_known_novel(&clustering, config.novel_fraction, config.seed)?;
    let (spec, warnings) = assign_questions(examples, &known, &novel, config, tagger)?;
    Ok(SplitOutcome {
        spec,
        clustering,
        warnings,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    /// `(qid, token)` pairs where a train or val question or answer names a novel noun.
    pub leaks: Vec<(String, String)>,
    pub test_without_novel: Vec<String>,
    pub unassigned: Vec<String>,
    pub overlapping_nouns: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.leaks.is_empty()
            && self.test_without_novel.is_empty()
            && self.unassigned.is_empty()
            && self.overlapping_nouns.is_empty()
    }
}

/// Re-checks every split invariant against the dataset.
pub fn audit(spec: &SplitSpec, examples: &[VqaExample], tagger: &dyn NounTagger) -> AuditReport {
    let mut report = AuditReport {
        overlapping_nouns: spec.known_nouns.intersection(&spec.novel_nouns).cloned().collect(),
        ..Default::default()
    };
    for ex in examples {
        let toks = mentioned_tokens(ex, tagger);
        match spec.part(&ex.qid) {
            None => report.unassigned.push(ex.qid.clone()),
            Some(SplitPart::Test) => {
                if !toks.iter().any(|t| spec.novel_nouns.contains(t)) {
                    report.test_without_novel.push(ex.qid.clone());
                }
            }
            Some(_) => {
                for t in toks.iter().filter(|t| spec.novel_nouns.contains(*t)) {
                    report.leaks.push((ex.qid.clone(), t.clone()));
                }
            }
        }
    }
    report
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionCounts {
    pub train: u64,
    pub val: u64,
    pub test: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCounts {
    pub train: u64,
    pub test: u64,
    pub both: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageSharing {
    pub common_images: u64,
    pub train_only_images: u64,
    pub test_only_images: u64,
    pub common_train_questions: u64,
    pub common_test_questions: u64,
    pub train_only_questions: u64,
    pub test_only_questions: u64,
}

/// Split statistics. Object and image tables use the train part proper;
/// val questions are only counted in `questions`.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub questions: QuestionCounts,
    pub objects: ObjectCounts,
    /// Test questions by number of distinct known nouns: keys "0".."4" and "5+".
    pub known_objects_in_test_questions: BTreeMap<String, u64>,
    pub image_sharing: ImageSharing,
}

pub const KNOWN_BUCKETS: [&str; 6] = ["0", "1", "2", "3", "4", "5+"];

pub fn split_report(spec: &SplitSpec, examples: &[VqaExample], tagger: &dyn NounTagger) -> SplitReport {
    let mut r = SplitReport {
        known_objects_in_test_questions: KNOWN_BUCKETS.iter().map(|b| (b.to_string(), 0)).collect(),
        ..Default::default()
    };
    let mut train_objects = BTreeSet::new();
    let mut test_objects = BTreeSet::new();
    let mut train_images: BTreeMap<&str, u64> = BTreeMap::new();
    let mut test_images: BTreeMap<&str, u64> = BTreeMap::new();
    for ex in examples {
        let Some(part) = spec.part(&ex.qid) else { continue };
        let nouns = extract_nouns(&ex.question, tagger);
        match part {
            SplitPart::Val => r.questions.val += 1,
            SplitPart::Train => {
                r.questions.train += 1;
                train_objects.extend(nouns);
                *train_images.entry(&ex.image_id).or_insert(0) += 1;
            }
            SplitPart::Test => {
                r.questions.test += 1;
                let known = nouns.iter().filter(|n| spec.known_nouns.contains(*n)).count();
                let bucket = KNOWN_BUCKETS[known.min(5)];
                *r.known_objects_in_test_questions.get_mut(bucket).expect("bucket") += 1;
                test_objects.extend(nouns);
                *test_images.entry(&ex.image_id).or_insert(0) += 1;
            }
        }
    }
    r.objects = ObjectCounts {
        train: train_objects.len() as u64,
        test: test_objects.len() as u64,
        both: train_objects.intersection(&test_objects).count() as u64,
    };
    let s = &mut r.image_sharing;
    for (img, &n) in &train_images {
        match test_images.get(img) {
            Some(_) => {
                s.common_images += 1;
                s.common_train_questions += n;
            }
            None => {
                s.train_only_images += 1;
                s.train_only_questions += n;
            }
        }
    }
    for (img, &n) in &test_images {
        if train_images.contains_key(img) {
            s.common_test_questions += n;
        } else {
            s.test_only_images += 1;
            s.test_only_questions += n;
        }
    }
    r
}
