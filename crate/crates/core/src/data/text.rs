//! Text corpora, vectorization and label-bias injection.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::tensor::Tensor;

/// Attribute key for the per-row vulnerable-author flag.
pub const VULNERABLE: &str = "vulnerable";

const PAD: usize = 0;
const OOV: usize = 1;

/// Raw documents with binary labels and an optional vulnerability column.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TextCorpus {
    pub texts: Vec<String>,
    pub labels: Vec<usize>,
    pub vulnerable: Option<Vec<bool>>,
}

impl TextCorpus {
    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

/// Lowercases, removes ASCII punctuation and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_string).collect()
}

/// Maps tokens to indices: 0 pads, 1 marks out-of-vocabulary, known tokens
/// start at 2 in descending corpus frequency.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVectorizer", into = "RawVectorizer")]
pub struct TextVectorizer {
    max_tokens: usize,
    sequence_length: usize,
    vocabulary: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawVectorizer {
    max_tokens: usize,
    sequence_length: usize,
    vocabulary: Vec<String>,
}

impl TryFrom<RawVectorizer> for TextVectorizer {
    type Error = String;

    fn try_from(raw: RawVectorizer) -> std::result::Result<Self, String> {
        if raw.max_tokens < 2 || raw.vocabulary.len() > raw.max_tokens - 2 {
            return Err(format!(
                "{} vocabulary entries do not fit max_tokens {}",
                raw.vocabulary.len(),
                raw.max_tokens
            ));
        }
        let index: HashMap<String, usize> = raw
            .vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i + 2))
            .collect();
        if index.len() != raw.vocabulary.len() {
            return Err("vocabulary contains duplicate tokens".into());
        }
        Ok(TextVectorizer {
            max_tokens: raw.max_tokens,
            sequence_length: raw.sequence_length,
            vocabulary: raw.vocabulary,
            index,
        })
    }
}

impl From<TextVectorizer> for RawVectorizer {
    fn from(v: TextVectorizer) -> Self {
        RawVectorizer {
            max_tokens: v.max_tokens,
            sequence_length: v.sequence_length,
            vocabulary: v.vocabulary,
        }
    }
}

impl TextVectorizer {
    pub fn max_tokens(&self) -> usize {
        self.max_tokens
    }

    pub fn sequence_length(&self) -> usize {
        self.sequence_length
    }

    /// Known tokens in index order; token `i` of this slice has index `i + 2`.
    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(OOV)
    }

    pub fn vectorize(&self, text: &str) -> Vec<usize> {
        let mut out: Vec<usize> = tokenize(text)
            .iter()
            .take(self.sequence_length)
            .map(|t| self.index_of(t))
            .collect();
        out.resize(self.sequence_length, PAD);
        out
    }
}

/// Builds a vocabulary of the `max_tokens - 2` most frequent tokens, ties
/// broken lexicographically. `max_tokens` below 2 is raised to 2.
pub fn fit_vectorizer<S: AsRef<str>>(
    corpus: &[S],
    max_tokens: usize,
    sequence_length: usize,
) -> TextVectorizer {
    let max_tokens = max_tokens.max(2);
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in corpus {
        for tok in tokenize(doc.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_tokens - 2);
    let vocabulary: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
    TextVectorizer::try_from(RawVectorizer {
        max_tokens,
        sequence_length,
        vocabulary,
    })
    .expect("fitted vocabulary is consistent")
}

pub fn vectorize(v: &TextVectorizer, text: &str) -> Vec<usize> {
    v.vectorize(text)
}

/// Vectorizes every document into a `[n, sequence_length]` token tensor.
pub fn text_dataset(v: &TextVectorizer, corpus: &TextCorpus) -> Result<Dataset> {
    let n = corpus.len();
    let mut x = Vec::with_capacity(n * v.sequence_length);
    for t in &corpus.texts {
        x.extend(v.vectorize(t).into_iter().map(|i| i as f64));
    }
    let ds = Dataset::new(
        Tensor::from_parts(vec![n, v.sequence_length], x),
        corpus.labels.clone(),
        2,
    )?;
    match &corpus.vulnerable {
        Some(flags) => ds.with_meta(VULNERABLE, flags.clone()),
        None => Ok(ds),
    }
}

/// Label-bias injection parameters: each row is flagged vulnerable with
/// probability `p_vulnerable`, then relabelled toxic (1) with the
/// probability for its group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasSpec {
    pub p_vulnerable: f64,
    pub p_toxic_given_vulnerable: f64,
    pub p_toxic_given_not: f64,
    pub seed: u64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec {
            p_vulnerable: 0.2,
            p_toxic_given_vulnerable: 0.7,
            p_toxic_given_not: 0.3,
            seed: 0,
        }
    }
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_vulnerable", self.p_vulnerable),
            ("p_toxic_given_vulnerable", self.p_toxic_given_vulnerable),
            ("p_toxic_given_not", self.p_toxic_given_not),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!(
                    "{name} must be in [0, 1], got {p}"
                )));
            }
        }
        Ok(())
    }
}

/// Replaces every label by a draw conditioned on a freshly drawn
/// vulnerability flag. Features are untouched.
pub fn inject_bias(dataset: &Dataset, spec: &BiasSpec) -> Result<Dataset> {
    spec.validate()?;
    if dataset.num_classes() != 2 {
        return Err(Error::InvalidConfig(format!(
            "bias injection needs binary labels, dataset has {} classes",
            dataset.num_classes()
        )));
    }
    let mut rng = rng_from_seed(spec.seed);
    let mut flags = Vec::with_capacity(dataset.len());
    let mut labels = Vec::with_capacity(dataset.len());
    for _ in 0..dataset.len() {
        let flag = rng.random::<f64>() < spec.p_vulnerable;
        let p = if flag {
            spec.p_toxic_given_vulnerable
        } else {
            spec.p_toxic_given_not
        };
        flags.push(flag);
        labels.push(usize::from(rng.random::<f64>() < p));
    }
    let mut out = dataset.clone();
    out.set_labels(labels);
    out.with_meta(VULNERABLE, flags)
}

/// Synthetic tweet generator: word ranks follow a Zipf law over a fixed
/// vocabulary of `vocab_size` words, and a post is toxic when it contains a
/// word from the toxic lexicon (every 17th rank).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TweetSpec {
    pub n: usize,
    pub vocab_size: usize,
    pub zipf_exponent: f64,
    pub min_len: usize,
    pub max_len: usize,
}

impl Default for TweetSpec {
    fn default() -> Self {
        TweetSpec {
            n: 10_000,
            vocab_size: 20_000,
            zipf_exponent: 1.1,
            min_len: 5,
            max_len: 25,
        }
    }
}

const TOXIC_STRIDE: u64 = 17;
const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "ba", "de", "fu", "gi", "ho", "ju", "pe", "zy",
];

fn word(rank: u64) -> String {
    let mut s = String::new();
    let mut r = rank;
    loop {
        s.push_str(SYLLABLES[(r % 16) as usize]);
        r /= 16;
        if r == 0 {
            break;
        }
    }
    s
}

pub fn synth_tweets(spec: &TweetSpec, seed: u64) -> Result<TextCorpus> {
    if spec.n == 0 || spec.vocab_size == 0 || spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::InvalidConfig(format!(
            "invalid tweet generator settings {spec:?}"
        )));
    }
    let zipf = Zipf::new(spec.vocab_size as f64, spec.zipf_exponent)
        .map_err(|e| Error::InvalidConfig(format!("zipf_exponent: {e}")))?;
    let mut rng = rng_from_seed(seed);
    let mut corpus = TextCorpus::default();
    for _ in 0..spec.n {
        let len = rng.random_range(spec.min_len..=spec.max_len);
        let mut toxic = false;
        let mut words = Vec::with_capacity(len);
        for i in 0..len {
            let rank = zipf.sample(&mut rng) as u64;
            toxic |= rank.is_multiple_of(TOXIC_STRIDE);
            let mut w = word(rank);
            if i == 0 && rng.random::<f64>() < 0.3 {
                w[..1].make_ascii_uppercase();
            }
            words.push(w);
        }
        let mut text = words.join(" ");
        if rng.random::<f64>() < 0.2 {
            text.push('!');
        }
        corpus.texts.push(text);
        corpus.labels.push(usize::from(toxic));
    }
    Ok(corpus)
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.trim() {
        "1" | "true" | "True" | "TRUE" => Some(true),
        "0" | "false" | "False" | "FALSE" => Some(false),
        _ => None,
    }
}

/// Reads a UTF-8 CSV with header `text,label[,vulnerable]`; labels are 0/1.
pub fn load_text_csv(path: impl AsRef<Path>) -> Result<TextCorpus> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::DataNotFound(path.to_path_buf()));
    }
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::format(path, 0, e.to_string()))?;
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let with_flag = match names.as_slice() {
        ["text", "label"] => false,
        ["text", "label", "vulnerable"] => true,
        _ => {
            return Err(Error::format(
                path,
                0,
                format!(
                    "header must be text,label[,vulnerable], found {}",
                    names.join(",")
                ),
            ))
        }
    };
    let mut corpus = TextCorpus {
        vulnerable: with_flag.then(Vec::new),
        ..TextCorpus::default()
    };
    for rec in rdr.records() {
        let rec = rec?;
        let offset = rec.position().map_or(0, |p| p.byte());
        let label = match rec.get(1).map(str::trim) {
            Some("0") => 0,
            Some("1") => 1,
            other => {
                return Err(Error::format(
                    path,
                    offset,
                    format!("label must be 0 or 1, found {other:?}"),
                ));
            }
        };
        if let Some(flags) = corpus.vulnerable.as_mut() {
            let flag = rec.get(2).and_then(parse_flag).ok_or_else(|| {
                Error::format(path, offset, "vulnerable must be 0/1 or true/false")
            })?;
            flags.push(flag);
        }
        corpus
            .texts
            .push(rec.get(0).unwrap_or_default().to_string());
        corpus.labels.push(label);
    }
    if corpus.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "{} has no rows",
            path.display()
        )));
    }
    Ok(corpus)
}

pub fn write_text_csv(corpus: &TextCorpus, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, 0, e.to_string()))?;
    match &corpus.vulnerable {
        Some(flags) => {
            w.write_record(["text", "label", "vulnerable"])?;
            for ((t, y), f) in corpus.texts.iter().zip(&corpus.labels).zip(flags) {
                w.write_record([t.as_str(), &y.to_string(), if *f { "1" } else { "0" }])?;
            }
        }
        None => {
            w.write_record(["text", "label"])?;
            for (t, y) in corpus.texts.iter().zip(&corpus.labels) {
                w.write_record([t.as_str(), &y.to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
