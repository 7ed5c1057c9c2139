//! Tokenization, vocabularies and noun identification.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;
pub const RESERVED: [&str; 3] = [UNK, BOS, EOS];

/// Lowercases and splits on anything that is not a letter or digit.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Where a vocabulary came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Train,
    Oracle,
    General,
    GeneralExpanded,
    External,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Train => "train",
            Provenance::Oracle => "oracle",
            Provenance::General => "general",
            Provenance::GeneralExpanded => "general-expanded",
            Provenance::External => "external",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Provenance {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "train" => Provenance::Train,
            "oracle" => Provenance::Oracle,
            "general" | "gen" => Provenance::General,
            "general-expanded" | "gen-expanded" => Provenance::GeneralExpanded,
            "external" => Provenance::External,
            other => return Err(CoreError::Config(format!("unknown vocabulary provenance `{other}`"))),
        })
    }
}

/// Ordered token/index bijection with reserved UNK, BOS and EOS at 0, 1, 2.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
    provenance: Provenance,
}

/// Indices into a vocabulary plus the surface string they came from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<usize>,
    pub surface: String,
}

impl Vocabulary {
    /// A vocabulary holding only the reserved tokens.
    pub fn reserved(provenance: Provenance) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            counts: Vec::new(),
            provenance,
        };
        for t in RESERVED {
            v.insert(t, 0);
        }
        v
    }

    fn insert(&mut self, token: &str, count: u64) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        self.counts.push(count);
        i
    }

    /// Builds from aggregated counts, keeping tokens with `count >= min_freq`,
    /// ordered by descending count and then lexicographically.
    pub fn from_counts(counts: &HashMap<String, u64>, min_freq: u64, provenance: Provenance) -> Result<Self> {
        if min_freq == 0 {
            return Err(CoreError::Contract("min_freq must be at least 1".into()));
        }
        let mut kept: Vec<(&String, u64)> = counts
            .iter()
            .filter(|(t, &c)| c >= min_freq && !RESERVED.contains(&t.as_str()))
            .map(|(t, &c)| (t, c))
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let mut v = Self::reserved(provenance);
        for (t, c) in kept {
            v.insert(t, c);
        }
        Ok(v)
    }

    /// Adds `token` at the end unless present. Returns its index.
    pub fn push(&mut self, token: &str, count: u64) -> usize {
        self.insert(token, count)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Index of `token`, or UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn count(&self, token: &str) -> u64 {
        self.get(token).map_or(0, |i| self.counts[i])
    }

    pub fn encode_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn encode(&self, text: &str) -> TokenSequence {
        TokenSequence {
            ids: self.encode_tokens(&tokenize(text)),
            surface: text.to_string(),
        }
    }

    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&i| self.tokens.get(i).map_or(UNK, String::as_str).to_string())
            .collect()
    }

    /// Hex SHA-256 over the ordered token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            writeln!(w, "{t}\t{c}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn parse(text: &str, provenance: Provenance) -> Result<Self> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
            counts: Vec::new(),
            provenance,
        };
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| CoreError::Data(format!("vocabulary line {}: missing tab", n + 1)))?;
            let count: u64 = count
                .trim()
                .parse()
                .map_err(|_| CoreError::Data(format!("vocabulary line {}: bad count", n + 1)))?;
            if v.contains(tok) {
                return Err(CoreError::Data(format!("vocabulary line {}: duplicate `{tok}`", n + 1)));
            }
            v.insert(tok, count);
        }
        if v.tokens.len() < 3 || v.tokens[..3] != RESERVED {
            return Err(CoreError::Data("vocabulary must start with the reserved tokens".into()));
        }
        Ok(v)
    }

    pub fn load(path: impl AsRef<Path>, provenance: Provenance) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, provenance)
    }
}

/// Aggregates token counts over sentences.
pub fn count_tokens<I, S>(sentences: I) -> HashMap<String, u64>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts = HashMap::new();
    for s in sentences {
        for t in tokenize(s.as_ref()) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    counts
}

pub fn build_vocab<I, S>(sentences: I, min_freq: u64, provenance: Provenance) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    Vocabulary::from_counts(&count_tokens(sentences), min_freq, provenance)
}

/// Streams a one-sentence-per-line corpus, skipping blank lines.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        Self { lines: reader.lines() }
    }
}

impl CorpusReader<BufReader<fs::File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(BufReader::new(fs::File::open(path)?)))
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<String>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.lines.next()? {
                Ok(line) if line.trim().is_empty() => continue,
                Ok(line) => return Some(Ok(line)),
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<String>> {
    CorpusReader::open(path)?.collect()
}

pub trait NounTagger {
    fn name(&self) -> &str;
    fn is_noun(&self, token: &str) -> bool;

    /// Form under which a noun token is reported.
    fn canonical(&self, token: &str) -> String {
        token.to_string()
    }
}

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.tsv");
const BUNDLED_STOPLIST: &str = include_str!("../data/stoplist.txt");

/// Table-driven tagger. Words found in the lexicon use their listed tag;
/// other words are nouns unless they appear in the closed-class stoplist.
#[derive(Clone, Debug)]
pub struct LexiconTagger {
    pos: HashMap<String, String>,
    stoplist: HashSet<String>,
    plurals: bool,
}

impl LexiconTagger {
    pub fn bundled() -> Self {
        Self::from_tables(BUNDLED_LEXICON, BUNDLED_STOPLIST).expect("bundled lexicon is well formed")
    }

    pub fn from_tables(lexicon: &str, stoplist: &str) -> Result<Self> {
        let mut pos = HashMap::new();
        for (n, line) in lexicon.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (w, tag) = line
                .split_once('\t')
                .ok_or_else(|| CoreError::Config(format!("lexicon line {}: expected word<TAB>POS", n + 1)))?;
            pos.insert(w.to_lowercase(), tag.trim().to_uppercase());
        }
        let stoplist = stoplist
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Ok(Self {
            pos,
            stoplist,
            plurals: false,
        })
    }

    /// Loads a lexicon file; the stoplist stays the bundled one.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| CoreError::Config(format!("cannot read lexicon {}: {e}", path.display())))?;
        Self::from_tables(&text, BUNDLED_STOPLIST)
    }

    /// Also match a trailing-`s` plural against a singular lexicon noun.
    pub fn with_plurals(mut self, on: bool) -> Self {
        self.plurals = on;
        self
    }

    pub fn tag(&self, token: &str) -> Option<&str> {
        self.pos.get(token).map(String::as_str)
    }

    /// Maps plural forms to their singular when the toggle is on.
    pub fn normalize<'a>(&self, token: &'a str) -> std::borrow::Cow<'a, str> {
        if self.plurals && !self.pos.contains_key(token) {
            if let Some(stem) = token.strip_suffix('s') {
                if self.pos.get(stem).is_some_and(|t| t == "NOUN") {
                    return stem.to_string().into();
                }
            }
        }
        token.into()
    }
}

impl NounTagger for LexiconTagger {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn is_noun(&self, token: &str) -> bool {
        let token = self.normalize(token);
        match self.pos.get(token.as_ref()) {
            Some(tag) => tag == "NOUN",
            None => {
                !self.stoplist.contains(token.as_ref()) && !token.chars().all(|c| c.is_ascii_digit())
            }
        }
    }

    fn canonical(&self, token: &str) -> String {
        self.normalize(token).into_owned()
    }
}

/// Noun tokens of `sentence`, normalized by the tagger's plural rule.
pub fn extract_nouns(sentence: &str, tagger: &dyn NounTagger) -> BTreeSet<String> {
    tokenize(sentence)
        .into_iter()
        .filter(|t| tagger.is_noun(t))
        .map(|t| tagger.canonical(&t))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(
            tokenize("Is the little dog wearing a necktie?"),
            ["is", "the", "little", "dog", "wearing", "a", "necktie"]
        );
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("2 cats!!"), ["2", "cats"]);
    }

    #[test]
    fn build_vocab_threshold() {
        let v = build_vocab(["a a b", "a"], 2, Provenance::Train).unwrap();
        assert_eq!(v.tokens(), [UNK, BOS, EOS, "a"]);
        let v = build_vocab(["a a b", "a"], 1, Provenance::Train).unwrap();
        assert_eq!(v.tokens(), [UNK, BOS, EOS, "a", "b"]);
        assert!(build_vocab(["a"], 0, Provenance::Train).is_err());
    }

    #[test]
    fn ties_break_lexicographically() {
        let v = build_vocab(["zeta alpha mid mid"], 1, Provenance::Train).unwrap();
        assert_eq!(&v.tokens()[3..], ["mid", "alpha", "zeta"]);
    }

    #[test]
    fn oov_decodes_to_unk() {
        let v = build_vocab(["dog cat"], 1, Provenance::Train).unwrap();
        let seq = v.encode("dog wolf");
        assert_eq!(seq.ids, vec![v.id("dog"), UNK_ID]);
        assert_eq!(v.decode(&seq.ids), ["dog", UNK]);
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocab(["b a a"], 1, Provenance::Oracle).unwrap();
        let mut buf = Vec::new();
        v.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("<unk>\t0\n<bos>\t0\n<eos>\t0\na\t2\n"));
        let back = Vocabulary::parse(&text, Provenance::Oracle).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.hash(), v.hash());
    }

    #[test]
    fn bundled_tagger_examples() {
        let t = LexiconTagger::bundled();
        let nouns = extract_nouns("is the little dog wearing a necktie", &t);
        assert_eq!(nouns.into_iter().collect::<Vec<_>>(), ["dog", "necktie"]);
        let nouns = extract_nouns("what color is it", &t);
        assert_eq!(nouns.into_iter().collect::<Vec<_>>(), ["color"]);
        assert!(extract_nouns("", &t).is_empty());
    }

    #[test]
    fn plural_toggle() {
        let t = LexiconTagger::bundled();
        assert!(t.is_noun("dogs"));
        assert_eq!(extract_nouns("two dogs", &t).into_iter().collect::<Vec<_>>(), ["dogs"]);
        let t = t.with_plurals(true);
        assert_eq!(extract_nouns("two dogs", &t).into_iter().collect::<Vec<_>>(), ["dog"]);
    }

    #[test]
    fn missing_lexicon_is_config_error() {
        let err = LexiconTagger::from_file("/nonexistent/lexicon.tsv").unwrap_err();
        assert!(err.is_config());
    }
}
