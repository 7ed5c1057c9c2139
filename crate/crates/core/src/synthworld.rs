//! Deterministic synthetic mini-VQA world: scenes of attributed objects,
//! templated questions with rule-derived answers, image features, a
//! descriptive text corpus and an external word-embedding table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use nvq_numkit::{Matrix, Rng};
use serde::{Deserialize, Serialize};

use crate::data::{read_jsonl, write_json, write_jsonl, FeatureStore, VqaExample, ANSWERS_PER_QUESTION};
use crate::embed::EmbeddingMatrix;
use crate::error::{CoreError, Result};
use crate::pairs::ImageIndex;
use crate::text::{tokenize, Provenance, Vocabulary, RESERVED};

pub const YES_NO: &str = "yes/no";
pub const NUMBER: &str = "number";
pub const OTHER: &str = "other";
pub const QUESTION_TYPES: [&str; 3] = [YES_NO, NUMBER, OTHER];

const STREAM_OBJECTS: u64 = 1;
const STREAM_SCENES: u64 = 2;
const STREAM_FEATURES_A: u64 = 3;
const STREAM_FEATURES_B: u64 = 4;
const STREAM_PROJECTION: u64 = 5;
const STREAM_CORPUS: u64 = 6;
const STREAM_EXTERNAL: u64 = 7;
const STREAM_CLASS_IMAGES: u64 = 8;

/// Words used by question and corpus templates besides nouns, colors and attributes.
pub const FUNCTION_WORDS: [&str; 15] = [
    "is", "are", "there", "a", "an", "the", "both", "and", "how", "many", "what", "something", "painted", "like",
    "usually",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Family {
    pub name: String,
    /// Attributes every member carries.
    pub attributes: Vec<String>,
    /// Nouns that appear in scenes and questions.
    pub objects: Vec<String>,
    /// Nouns that only appear in text and the external embedding table.
    pub extras: Vec<String>,
    /// Relative frequency of yes/no, number and other questions about members.
    pub type_weights: [f64; 3],
}

fn family(name: &str, attrs: [&str; 2], objects: [&str; 5], extras: [&str; 6], w: [f64; 3]) -> Family {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
    Family {
        name: name.into(),
        attributes: s(&attrs),
        objects: s(&objects),
        extras: s(&extras),
        type_weights: w,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub seed: u64,
    pub families: Vec<Family>,
    /// Pool from which each object draws its individual attributes.
    pub individual_attributes: Vec<String>,
    pub individual_per_object: usize,
    pub colors: Vec<String>,
    pub max_count: usize,
    pub objects_per_scene: usize,
    /// Standard deviation of the Gaussian feature noise.
    pub feature_noise: f64,
    /// Probability that each human answer is replaced by a random one of the same type.
    pub answer_noise: f64,
    pub mcq_choices: usize,
    /// Share of questions that ask about an attribute instead of an object.
    pub attribute_question_rate: f64,
    pub sentences_per_noun: usize,
    pub external_dim: usize,
    pub external_noise: f64,
    /// Weight of the shared family direction in external vectors.
    pub family_weight: f64,
    /// Single-object images per noun for weak pairing.
    pub class_images: usize,
    pub feature_b_dim: usize,
}

impl WorldSpec {
    /// The default inventory: eight families of five scene objects and six text-only nouns.
    pub fn new(seed: u64) -> Self {
        let families = vec![
            family(
                "animal",
                ["furry", "wild"],
                ["dog", "cat", "horse", "cow", "sheep"],
                ["wolf", "fox", "goat", "pig", "deer", "rabbit"],
                [0.7, 0.15, 0.15],
            ),
            family(
                "vehicle",
                ["metal", "fast"],
                ["car", "bus", "truck", "bicycle", "motorcycle"],
                ["van", "tractor", "scooter", "taxi", "jeep", "tram"],
                [0.15, 0.7, 0.15],
            ),
            family(
                "clothing",
                ["soft", "warm"],
                ["shirt", "hat", "necktie", "jacket", "shoe"],
                ["scarf", "glove", "sock", "coat", "dress", "boot"],
                [0.15, 0.15, 0.7],
            ),
            family(
                "food",
                ["sweet", "tasty"],
                ["apple", "banana", "pizza", "sandwich", "cake"],
                ["carrot", "bread", "cookie", "donut", "pear", "pie"],
                [0.45, 0.45, 0.1],
            ),
            family(
                "furniture",
                ["wooden", "heavy"],
                ["chair", "table", "bed", "sofa", "bench"],
                ["desk", "stool", "shelf", "couch", "cabinet", "crib"],
                [0.45, 0.1, 0.45],
            ),
            family(
                "utensil",
                ["sharp", "shiny"],
                ["cup", "bowl", "knife", "fork", "spoon"],
                ["plate", "pot", "pan", "kettle", "mug", "jar"],
                [0.1, 0.45, 0.45],
            ),
            family(
                "gear",
                ["round", "light"],
                ["ball", "kite", "skateboard", "surfboard", "racket"],
                ["bat", "frisbee", "ski", "puck", "paddle", "hoop"],
                [0.34, 0.33, 0.33],
            ),
            family(
                "gadget",
                ["electric", "smart"],
                ["laptop", "phone", "television", "keyboard", "remote"],
                ["tablet", "camera", "radio", "speaker", "monitor", "clock"],
                [0.55, 0.3, 0.15],
            ),
        ];
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect();
        Self {
            seed,
            families,
            individual_attributes: s(&["small", "large", "old", "new", "bright", "dark", "loud", "quiet"]),
            individual_per_object: 2,
            colors: s(&["red", "blue", "green", "yellow", "white", "black"]),
            max_count: 3,
            objects_per_scene: 3,
            feature_noise: 0.05,
            answer_noise: 0.0,
            mcq_choices: 18,
            attribute_question_rate: 0.1,
            sentences_per_noun: 30,
            external_dim: 24,
            external_noise: 0.3,
            family_weight: 2.0,
            class_images: 25,
            feature_b_dim: 128,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if self.families.is_empty() {
            return fail("world needs at least one family".into());
        }
        let mut words = BTreeSet::new();
        for f in &self.families {
            if f.objects.is_empty() {
                return fail(format!("family `{}` has no scene objects", f.name));
            }
            if f.type_weights.iter().any(|w| !(*w >= 0.0)) || f.type_weights.iter().sum::<f64>() <= 0.0 {
                return fail(format!("family `{}` has invalid question-type weights", f.name));
            }
            let pairs = binomial(self.individual_attributes.len(), self.individual_per_object);
            if pairs < f.objects.len() + f.extras.len() {
                return fail(format!("family `{}` has more members than individual attribute sets", f.name));
            }
            for w in f.objects.iter().chain(&f.extras).chain(&f.attributes) {
                if !words.insert(w.clone()) {
                    return fail(format!("word `{w}` is declared twice"));
                }
            }
        }
        for w in self.individual_attributes.iter().chain(&self.colors) {
            if !words.insert(w.clone()) {
                return fail(format!("word `{w}` is declared twice"));
            }
        }
        for w in &words {
            if FUNCTION_WORDS.contains(&w.as_str()) || RESERVED.contains(&w.as_str()) || tokenize(w) != [w.clone()] {
                return fail(format!("`{w}` cannot be used as a world word"));
            }
        }
        if self.colors.len() < 2 || self.max_count == 0 {
            return fail("world needs at least two colors and a positive max count".into());
        }
        let n_objects: usize = self.families.iter().map(|f| f.objects.len()).sum();
        if self.objects_per_scene == 0 || self.objects_per_scene >= n_objects {
            return fail(format!("objects per scene must lie in 1..{n_objects}"));
        }
        if !(0.0..=1.0).contains(&self.answer_noise) || !(0.0..=1.0).contains(&self.attribute_question_rate) {
            return fail("rates must lie in [0, 1]".into());
        }
        if !(self.feature_noise >= 0.0 && self.external_noise >= 0.0) {
            return fail("noise levels must be non-negative".into());
        }
        if self.mcq_choices < 2 || self.external_dim == 0 || self.feature_b_dim == 0 {
            return fail("mcq choices, external dim and second feature dim must be positive".into());
        }
        Ok(())
    }

    pub fn attributes(&self) -> Vec<String> {
        self.families
            .iter()
            .flat_map(|f| f.attributes.iter().cloned())
            .chain(self.individual_attributes.iter().cloned())
            .collect()
    }

    pub fn scene_objects(&self) -> Vec<String> {
        self.families.iter().flat_map(|f| f.objects.iter().cloned()).collect()
    }

    pub fn counts(&self) -> Vec<String> {
        (1..=self.max_count).map(|c| c.to_string()).collect()
    }

    pub fn family_attributes(&self) -> Vec<String> {
        self.families.iter().flat_map(|f| f.attributes.iter().cloned()).collect()
    }

    /// `[object presence | attribute counts | family attribute×color | family attribute×count]`.
    pub fn feature_dim(&self) -> usize {
        let b = self.family_attributes().len();
        self.scene_objects().len() + self.attributes().len() + b * (self.colors.len() + self.max_count)
    }
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorldObject {
    pub noun: String,
    pub family: String,
    pub attributes: Vec<String>,
    /// True for scene objects, false for text-only nouns.
    pub in_scenes: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placed {
    pub noun: String,
    pub color: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub image_id: String,
    pub objects: Vec<Placed>,
}

impl Scene {
    pub fn find(&self, noun: &str) -> Option<&Placed> {
        self.objects.iter().find(|p| p.noun == noun)
    }
}

/// A world spec with its derived object table.
#[derive(Clone, Debug, PartialEq)]
pub struct World {
    pub spec: WorldSpec,
    pub objects: BTreeMap<String, WorldObject>,
}

fn article(noun: &str) -> &'static str {
    if noun.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

impl World {
    /// Draws each noun's individual attributes; members of a family get distinct sets.
    pub fn new(spec: WorldSpec) -> Result<Self> {
        spec.validate()?;
        let root = Rng::new(spec.seed).derive(STREAM_OBJECTS);
        let pool = &spec.individual_attributes;
        let k = spec.individual_per_object;
        let mut combos: Vec<Vec<usize>> = Vec::new();
        combinations(pool.len(), k, &mut Vec::new(), &mut combos);
        let mut objects = BTreeMap::new();
        for (fi, f) in spec.families.iter().enumerate() {
            let mut rng = root.derive(fi as u64);
            let picks = rng.sample_indices(combos.len(), f.objects.len() + f.extras.len());
            let members = f.objects.iter().map(|n| (n, true)).chain(f.extras.iter().map(|n| (n, false)));
            for ((noun, in_scenes), pick) in members.zip(picks) {
                let mut attributes = f.attributes.clone();
                attributes.extend(combos[pick].iter().map(|&i| pool[i].clone()));
                objects.insert(
                    noun.clone(),
                    WorldObject {
                        noun: noun.clone(),
                        family: f.name.clone(),
                        attributes,
                        in_scenes,
                    },
                );
            }
        }
        Ok(Self { spec, objects })
    }

    pub fn object(&self, noun: &str) -> Option<&WorldObject> {
        self.objects.get(noun)
    }

    fn family_of(&self, noun: &str) -> &Family {
        let name = &self.objects[noun].family;
        self.spec.families.iter().find(|f| &f.name == name).expect("object family")
    }

    fn siblings(&self, noun: &str) -> Vec<&str> {
        let f = self.family_of(noun);
        f.objects.iter().chain(&f.extras).map(String::as_str).filter(|w| *w != noun).collect()
    }

    /// Noise-free feature vector of a set of placed objects.
    pub fn clean_features(&self, placed: &[Placed]) -> Vec<f64> {
        let scene_objects = self.spec.scene_objects();
        let attrs = self.spec.attributes();
        let bound = self.spec.family_attributes();
        let n = scene_objects.len();
        let a = attrs.len();
        let nc = self.spec.colors.len();
        let nk = self.spec.max_count;
        let base_count = n + a + bound.len() * nc;
        let mut v = vec![0.0; self.spec.feature_dim()];
        for p in placed {
            if let Some(i) = scene_objects.iter().position(|o| *o == p.noun) {
                v[i] = 1.0;
            }
            let c = self.spec.colors.iter().position(|c| *c == p.color).expect("known color");
            let k = p.count - 1;
            for attr in &self.objects[&p.noun].attributes {
                let j = attrs.iter().position(|x| x == attr).expect("known attribute");
                v[n + j] += 1.0;
                if let Some(b) = bound.iter().position(|x| x == attr) {
                    v[n + a + b * nc + c] += 1.0;
                    v[base_count + b * nk + k] += 1.0;
                }
            }
        }
        v
    }

    fn noisy(&self, clean: &[f64], rng: &mut Rng) -> Vec<f64> {
        clean.iter().map(|x| x + self.spec.feature_noise * rng.normal()).collect()
    }

    fn projection(&self) -> Matrix {
        let d = self.spec.feature_dim();
        let mut rng = Rng::new(self.spec.seed).derive(STREAM_PROJECTION);
        Matrix::random_normal(self.spec.feature_b_dim, d, 1.0 / (d as f64).sqrt(), &mut rng)
    }

    fn random_scene(&self, index: usize, rng: &mut Rng) -> Scene {
        let pool = self.spec.scene_objects();
        let picks = rng.sample_indices(pool.len(), self.spec.objects_per_scene);
        let objects = picks
            .into_iter()
            .map(|i| Placed {
                noun: pool[i].clone(),
                color: self.spec.colors[rng.below(self.spec.colors.len())].clone(),
                count: 1 + rng.below(self.spec.max_count),
            })
            .collect();
        Scene {
            image_id: format!("img{index:05}"),
            objects,
        }
    }

    fn absent_noun(&self, scene: &Scene, rng: &mut Rng) -> String {
        let pool: Vec<String> = self
            .spec
            .scene_objects()
            .into_iter()
            .filter(|o| scene.find(o).is_none())
            .collect();
        pool[rng.below(pool.len())].clone()
    }

    fn other_color(&self, color: &str, rng: &mut Rng) -> String {
        let pool: Vec<&String> = self.spec.colors.iter().filter(|c| *c != color).collect();
        pool[rng.below(pool.len())].clone()
    }

    /// One templated question about `scene` with its type and true answer.
    fn draw_question(&self, scene: &Scene, rng: &mut Rng) -> (String, &'static str, String) {
        let yes_no = |b: bool| if b { "yes" } else { "no" }.to_string();
        if rng.uniform() < self.spec.attribute_question_rate {
            let attrs = self.spec.attributes();
            let a = &attrs[rng.below(attrs.len())];
            let truth = scene.objects.iter().any(|p| self.objects[&p.noun].attributes.contains(a));
            return (format!("is there something {a}"), YES_NO, yes_no(truth));
        }
        let focus = &scene.objects[rng.below(scene.objects.len())];
        let x = &focus.noun;
        match rng.weighted_index(&self.family_of(x).type_weights) {
            0 => match rng.below(3) {
                0 => {
                    let present = rng.below(2) == 0;
                    let noun = if present { x.clone() } else { self.absent_noun(scene, rng) };
                    (format!("is there {} {noun}", article(&noun)), YES_NO, yes_no(present))
                }
                1 => {
                    let right = rng.below(2) == 0;
                    let c = if right { focus.color.clone() } else { self.other_color(&focus.color, rng) };
                    (format!("is the {x} {c}"), YES_NO, yes_no(right))
                }
                _ => {
                    let both = rng.below(2) == 0;
                    let others: Vec<&Placed> = scene.objects.iter().filter(|p| &p.noun != x).collect();
                    let y = if both && !others.is_empty() {
                        others[rng.below(others.len())].noun.clone()
                    } else {
                        self.absent_noun(scene, rng)
                    };
                    let truth = scene.find(&y).is_some();
                    let (a, b) = if rng.below(2) == 0 { (x.clone(), y) } else { (y, x.clone()) };
                    (format!("are there both {a} and {b}"), YES_NO, yes_no(truth))
                }
            },
            1 => (format!("how many {x} are there"), NUMBER, focus.count.to_string()),
            _ => (format!("what is the {x} painted"), OTHER, focus.color.clone()),
        }
    }

    /// Answer to a templated question, recomputed from the scene alone.
    pub fn answer_by_rule(&self, scene: &Scene, question: &str) -> Option<String> {
        let toks = tokenize(question);
        let t: Vec<&str> = toks.iter().map(String::as_str).collect();
        let yn = |b: bool| Some(if b { "yes" } else { "no" }.to_string());
        let has = |n: &str| scene.objects.iter().any(|p| p.noun == n);
        match t.as_slice() {
            ["is", "there", "something", a] => {
                yn(scene.objects.iter().any(|p| self.objects[&p.noun].attributes.iter().any(|x| x == a)))
            }
            ["is", "there", "a" | "an", x] => yn(has(x)),
            ["is", "the", x, c] => yn(scene.find(x)?.color == *c),
            ["are", "there", "both", x, "and", y] => yn(has(x) && has(y)),
            ["how", "many", x, "are", "there"] => Some(scene.find(x).map_or(0, |p| p.count).to_string()),
            ["what", "is", "the", x, "painted"] => Some(scene.find(x)?.color.clone()),
            _ => None,
        }
    }

    fn answer_pool(&self, question_type: &str) -> Vec<String> {
        match question_type {
            YES_NO => vec!["yes".into(), "no".into()],
            NUMBER => self.spec.counts(),
            _ => self.spec.colors.clone(),
        }
    }

    /// Every string that may appear as a multiple-choice option.
    pub fn choice_pool(&self) -> Vec<String> {
        let mut pool: BTreeSet<String> = ["yes", "no"].iter().map(|s| s.to_string()).collect();
        pool.extend(self.spec.counts());
        pool.extend(self.spec.colors.iter().cloned());
        pool.extend(self.spec.attributes());
        pool.extend(self.objects.keys().cloned());
        pool.into_iter().collect()
    }

    fn human_answers(&self, truth: &str, question_type: &str, rng: &mut Rng) -> Vec<String> {
        let pool = self.answer_pool(question_type);
        (0..ANSWERS_PER_QUESTION)
            .map(|_| {
                if self.spec.answer_noise > 0.0 && rng.uniform() < self.spec.answer_noise {
                    pool[rng.below(pool.len())].clone()
                } else {
                    truth.to_string()
                }
            })
            .collect()
    }

    fn choices(&self, truth: &str, pool: &[String], rng: &mut Rng) -> Vec<String> {
        let others: Vec<&String> = pool.iter().filter(|p| *p != truth).collect();
        let k = (self.spec.mcq_choices - 1).min(others.len());
        let mut out: Vec<String> = rng.sample_indices(others.len(), k).into_iter().map(|i| others[i].clone()).collect();
        out.insert(rng.below(out.len() + 1), truth.to_string());
        out
    }

    /// Descriptive sentences about every noun, scene objects and text-only alike.
    pub fn corpus(&self) -> Vec<String> {
        let root = Rng::new(self.spec.seed).derive(STREAM_CORPUS);
        let mut out = Vec::new();
        for (i, (noun, obj)) in self.objects.iter().enumerate() {
            let mut rng = root.derive(i as u64);
            let attrs = &obj.attributes;
            let sibs = self.siblings(noun);
            for _ in 0..self.spec.sentences_per_noun {
                let a = &attrs[rng.below(attrs.len())];
                let b = &attrs[rng.below(attrs.len())];
                let s = sibs[rng.below(sibs.len())];
                let line = match rng.below(5) {
                    0 => format!("the {noun} is {a}"),
                    1 if a != b => format!("{} {noun} is {a} and {b}", article(noun)),
                    1 | 2 => format!("there is {} {a} {noun}", article(a)),
                    3 => format!("the {noun} is like the {s}"),
                    _ => format!("{} {noun} is usually {a}", article(noun)),
                };
                out.push(line);
            }
        }
        let mut rng = root.derive(u64::MAX);
        rng.shuffle(&mut out);
        out
    }

    /// External vectors: nouns combine a family direction with their attribute
    /// directions, so family members and attribute-sharing nouns are cosine-close.
    pub fn external_embeddings(&self) -> Result<EmbeddingMatrix> {
        let d = self.spec.external_dim;
        let mut rng = Rng::new(self.spec.seed).derive(STREAM_EXTERNAL);
        let unit = |rng: &mut Rng| {
            let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect::<Vec<f64>>()
        };
        let fam: BTreeMap<&str, Vec<f64>> =
            self.spec.families.iter().map(|f| (f.name.as_str(), unit(&mut rng))).collect();
        let attrs: BTreeMap<String, Vec<f64>> = self.spec.attributes().into_iter().map(|a| (a, unit(&mut rng))).collect();
        let sigma = self.spec.external_noise / (d as f64).sqrt();
        let mut vocab = Vocabulary::reserved(Provenance::External);
        let mut rows = vec![vec![0.0; d]; RESERVED.len()];
        let mut push = |word: &str, base: Vec<f64>, rng: &mut Rng| {
            vocab.push(word, 1);
            rows.push(base.into_iter().map(|x| x + sigma * rng.normal()).collect());
        };
        for (noun, obj) in &self.objects {
            let mut v: Vec<f64> = fam[obj.family.as_str()].iter().map(|x| x * self.spec.family_weight).collect();
            for a in &obj.attributes {
                for (vi, ai) in v.iter_mut().zip(&attrs[a]) {
                    *vi += ai;
                }
            }
            push(noun, v, &mut rng);
        }
        for (a, v) in &attrs {
            push(a, v.clone(), &mut rng);
        }
        let mut rest: Vec<String> = self.spec.colors.clone();
        rest.extend(FUNCTION_WORDS.iter().map(|s| s.to_string()));
        rest.extend(["yes", "no"].iter().map(|s| s.to_string()));
        for w in rest {
            let v = unit(&mut rng);
            push(&w, v, &mut rng);
        }
        EmbeddingMatrix::new(vocab, Matrix::from_rows(&rows)?)
    }

    /// `class_images` single-object images per noun, random color and count.
    pub fn class_images(&self) -> Result<ImageIndex> {
        let root = Rng::new(self.spec.seed).derive(STREAM_CLASS_IMAGES);
        let mut index = ImageIndex::new();
        for (i, noun) in self.objects.keys().enumerate() {
            let mut rng = root.derive(i as u64);
            let rows: Vec<Vec<f64>> = (0..self.spec.class_images)
                .map(|_| {
                    let p = Placed {
                        noun: noun.clone(),
                        color: self.spec.colors[rng.below(self.spec.colors.len())].clone(),
                        count: 1 + rng.below(self.spec.max_count),
                    };
                    let clean = self.clean_features(&[p]);
                    self.noisy(&clean, &mut rng)
                })
                .collect();
            index.insert(noun, Matrix::from_rows(&rows)?)?;
        }
        Ok(index)
    }

    /// Generates scenes, questions, both feature families, the corpus, the
    /// external table and the class image index.
    pub fn generate(&self, n_scenes: usize, questions_per_scene: usize) -> Result<GeneratedWorld> {
        if n_scenes == 0 || questions_per_scene == 0 {
            return Err(CoreError::Contract("need at least one scene and one question per scene".into()));
        }
        let root = Rng::new(self.spec.seed);
        let scene_rng = root.derive(STREAM_SCENES);
        let feat_a = root.derive(STREAM_FEATURES_A);
        let feat_b = root.derive(STREAM_FEATURES_B);
        let proj = self.projection();
        let pool = self.choice_pool();
        let mut scenes = Vec::with_capacity(n_scenes);
        let mut examples = Vec::with_capacity(n_scenes * questions_per_scene);
        let mut ids = Vec::with_capacity(n_scenes);
        let mut rows_a = Vec::with_capacity(n_scenes);
        let mut rows_b = Vec::with_capacity(n_scenes);
        for s in 0..n_scenes {
            let mut rng = scene_rng.derive(s as u64);
            let scene = self.random_scene(s, &mut rng);
            let mut asked = BTreeSet::new();
            let mut attempts = 0;
            while asked.len() < questions_per_scene && attempts < 20 * questions_per_scene {
                attempts += 1;
                let (question, qtype, truth) = self.draw_question(&scene, &mut rng);
                if !asked.insert(question.clone()) {
                    continue;
                }
                let answers = self.human_answers(&truth, qtype, &mut rng);
                let choices = self.choices(&truth, &pool, &mut rng);
                examples.push(VqaExample {
                    qid: format!("q{s:05}_{}", asked.len() - 1),
                    image_id: scene.image_id.clone(),
                    question,
                    answers,
                    choices: Some(choices),
                    question_type: qtype.to_string(),
                });
            }
            let clean = self.clean_features(&scene.objects);
            rows_a.push(self.noisy(&clean, &mut feat_a.derive(s as u64)));
            let mut rb = feat_b.derive(s as u64);
            let projected = proj.matmul(&Matrix::column(clean)?)?;
            rows_b.push(projected.data().iter().map(|x| x + self.spec.feature_noise * rb.normal()).collect());
            ids.push(scene.image_id.clone());
            scenes.push(scene);
        }
        Ok(GeneratedWorld {
            spec: self.spec.clone(),
            objects: self.objects.values().cloned().collect(),
            scenes,
            examples,
            corpus: self.corpus(),
            external: self.external_embeddings()?,
            features_a: FeatureStore::new(ids.clone(), Matrix::from_rows(&rows_a)?)?,
            features_b: FeatureStore::new(ids, Matrix::from_rows(&rows_b)?)?,
            class_images: self.class_images()?,
        })
    }
}

fn combinations(n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    let start = cur.last().map_or(0, |l| l + 1);
    for i in start..n {
        cur.push(i);
        combinations(n, k, cur, out);
        cur.pop();
    }
}

pub const WORLD_FILE: &str = "world.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const SCENES_FILE: &str = "scenes.jsonl";
pub const CORPUS_FILE: &str = "corpus.txt";
pub const EXTERNAL_FILE: &str = "external.txt";
pub const FEATURES_A_STEM: &str = "features_a";
pub const FEATURES_B_STEM: &str = "features_b";
pub const CLASS_IMAGES_DIR: &str = "class_images";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WorldFile {
    spec: WorldSpec,
    objects: Vec<WorldObject>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedWorld {
    pub spec: WorldSpec,
    pub objects: Vec<WorldObject>,
    pub scenes: Vec<Scene>,
    pub examples: Vec<VqaExample>,
    pub corpus: Vec<String>,
    pub external: EmbeddingMatrix,
    pub features_a: FeatureStore,
    pub features_b: FeatureStore,
    pub class_images: ImageIndex,
}

impl GeneratedWorld {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        write_json(
            dir.join(WORLD_FILE),
            &WorldFile {
                spec: self.spec.clone(),
                objects: self.objects.clone(),
            },
        )?;
        write_jsonl(dir.join(DATASET_FILE), &self.examples)?;
        write_jsonl(dir.join(SCENES_FILE), &self.scenes)?;
        let mut corpus = self.corpus.join("\n");
        corpus.push('\n');
        fs::write(dir.join(CORPUS_FILE), corpus)?;
        self.external.save(dir.join(EXTERNAL_FILE))?;
        self.features_a.save(dir.join(FEATURES_A_STEM))?;
        self.features_b.save(dir.join(FEATURES_B_STEM))?;
        self.class_images.save_dir(dir.join(CLASS_IMAGES_DIR))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let wf: WorldFile = crate::data::read_json(dir.join(WORLD_FILE))?;
        Ok(Self {
            spec: wf.spec,
            objects: wf.objects,
            scenes: read_jsonl(dir.join(SCENES_FILE))?,
            examples: read_jsonl(dir.join(DATASET_FILE))?,
            corpus: crate::text::read_corpus(dir.join(CORPUS_FILE))?,
            external: EmbeddingMatrix::load(dir.join(EXTERNAL_FILE))?,
            features_a: FeatureStore::load(dir.join(FEATURES_A_STEM))?,
            features_b: FeatureStore::load(dir.join(FEATURES_B_STEM))?,
            class_images: ImageIndex::load_dir(dir.join(CLASS_IMAGES_DIR))?,
        })
    }

    pub fn world(&self) -> Result<World> {
        World::new(self.spec.clone())
    }

    pub fn scene(&self, image_id: &str) -> Option<&Scene> {
        self.scenes.iter().find(|s| s.image_id == image_id)
    }
}

/// Questions whose stored answer disagrees with the rule applied to their scene.
pub fn soundness_audit(world: &World, generated: &GeneratedWorld) -> Vec<String> {
    let scenes: BTreeMap<&str, &Scene> = generated.scenes.iter().map(|s| (s.image_id.as_str(), s)).collect();
    generated
        .examples
        .iter()
        .filter(|ex| {
            let rule = scenes.get(ex.image_id.as_str()).and_then(|s| world.answer_by_rule(s, &ex.question));
            rule.is_none() || rule != ex.mode_answer()
        })
        .map(|ex| ex.qid.clone())
        .collect()
}
