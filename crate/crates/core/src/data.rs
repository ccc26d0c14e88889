//! Corpus ingestion, vocabulary, batching and synthetic data.
//!
//! Text is lowercased and split on whitespace. Plain corpora hold one
//! sentence per line; labeled corpora use `<label>\t<sentence>`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::hash::{Hash, Hasher};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kv::{KvError, KvMap};
use crate::seeding::{indexed_rng, Stream};

pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<s>", "</s>", "unk"];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("max vocabulary size {0} is smaller than the {n} reserved ids", n = RESERVED.len())]
    VocabTooSmall(usize),
    #[error("line {line}: labeled format is '<label>\\t<sentence>'")]
    MissingLabel { line: usize },
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error("batch size must be at least 1")]
    BatchSize,
    #[error("bit-flip noise must lie in [0, 0.5), got {0}")]
    Noise(f64),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_lowercase).collect()
}

/// Token/id bijection with reserved ids `0=pad, 1=sos, 2=eos, 3=unk`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_freq: usize,
}

impl Vocab {
    /// Keeps tokens seen at least `min_freq` times, most frequent first
    /// (ties lexicographic), up to `max_size` ids including reserved ones.
    pub fn build<S: AsRef<str>>(lines: &[S], min_freq: usize, max_size: usize) -> Result<Self, DataError> {
        if max_size < RESERVED.len() {
            return Err(DataError::VocabTooSmall(max_size));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        let mut any = false;
        for line in lines {
            for tok in tokenize(line.as_ref()) {
                any = true;
                if !RESERVED.contains(&tok.as_str()) {
                    *counts.entry(tok).or_default() += 1;
                }
            }
        }
        if !any {
            return Err(DataError::EmptyCorpus);
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - RESERVED.len());
        let tokens: Vec<String> = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(tokens, min_freq))
    }

    fn from_tokens(tokens: Vec<String>, min_freq: usize) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab {
            tokens,
            index,
            min_freq,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(RESERVED[UNK], String::as_str)
    }

    pub fn encode(&self, line: &str) -> Vec<usize> {
        tokenize(line).iter().map(|t| self.id(t)).collect()
    }

    /// Joins tokens with single spaces, stopping at the first `</s>` and
    /// dropping padding and start markers.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != PAD && i != SOS)
            .map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// One token per line, in id order.
    pub fn to_text(&self) -> String {
        let mut s = format!("# min_freq={}\n", self.min_freq);
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, DataError> {
        let mut min_freq = 1;
        let mut tokens = Vec::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# min_freq=") {
                min_freq = rest.trim().parse().unwrap_or(1);
            } else if !line.is_empty() {
                tokens.push(line.to_string());
            }
        }
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(DataError::EmptyCorpus);
        }
        Ok(Self::from_tokens(tokens, min_freq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Encoded sentences of one split, with optional class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledCorpus {
    pub split: Split,
    pub sentences: Vec<Vec<usize>>,
    pub labels: Option<Vec<usize>>,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledCorpus {
        LabeledCorpus {
            split: self.split,
            sentences: indices.iter().map(|&i| self.sentences[i].clone()).collect(),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.labels.as_ref().and_then(|l| l.iter().max()).map_or(0, |m| m + 1)
    }
}

/// One raw line, optionally labeled.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RawLine {
    pub label: Option<String>,
    pub text: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawSplits {
    pub train: Vec<RawLine>,
    pub dev: Vec<RawLine>,
    pub test: Vec<RawLine>,
}

impl RawSplits {
    /// True when no normalized sentence appears in two splits.
    pub fn disjoint(&self) -> bool {
        let key = |l: &RawLine| {
            let mut h = std::collections::hash_map::DefaultHasher::new();
            tokenize(&l.text).hash(&mut h);
            h.finish()
        };
        let train: HashSet<u64> = self.train.iter().map(key).collect();
        let dev: HashSet<u64> = self.dev.iter().map(key).collect();
        self.test
            .iter()
            .map(key)
            .all(|k| !train.contains(&k) && !dev.contains(&k))
            && dev.is_disjoint(&train)
    }
}

/// Vocabulary plus encoded train/dev/test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: LabeledCorpus,
    pub dev: LabeledCorpus,
    pub test: LabeledCorpus,
    /// Label strings indexed by class id; empty for unlabeled data.
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn from_raw(raw: &RawSplits, min_freq: usize, max_vocab: usize) -> Result<Self, DataError> {
        if raw.train.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        let texts: Vec<&str> = raw.train.iter().map(|l| l.text.as_str()).collect();
        let vocab = Vocab::build(&texts, min_freq, max_vocab)?;
        Ok(Self::with_vocab(raw, vocab))
    }

    pub fn with_vocab(raw: &RawSplits, vocab: Vocab) -> Self {
        let labeled = raw
            .train
            .iter()
            .chain(&raw.dev)
            .chain(&raw.test)
            .all(|l| l.label.is_some());
        let class_names: Vec<String> = if labeled {
            let set: std::collections::BTreeSet<&str> = raw
                .train
                .iter()
                .chain(&raw.dev)
                .chain(&raw.test)
                .filter_map(|l| l.label.as_deref())
                .collect();
            set.into_iter().map(str::to_string).collect()
        } else {
            Vec::new()
        };
        let encode = |lines: &[RawLine], split| LabeledCorpus {
            split,
            sentences: lines.iter().map(|l| vocab.encode(&l.text)).collect(),
            labels: labeled.then(|| {
                lines
                    .iter()
                    .map(|l| {
                        let name = l.label.as_deref().expect("labeled");
                        class_names.iter().position(|c| c == name).expect("collected above")
                    })
                    .collect()
            }),
        };
        Dataset {
            train: encode(&raw.train, Split::Train),
            dev: encode(&raw.dev, Split::Dev),
            test: encode(&raw.test, Split::Test),
            vocab,
            class_names,
        }
    }
}

fn read(path: &Path) -> Result<String, DataError> {
    fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses corpus text; blank lines are skipped.
pub fn parse_lines(text: &str, labeled: bool) -> Result<Vec<RawLine>, DataError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        if labeled {
            let (label, sentence) = line.split_once('\t').ok_or(DataError::MissingLabel { line: i + 1 })?;
            if sentence.trim().is_empty() {
                continue;
            }
            out.push(RawLine {
                label: Some(label.trim().to_string()),
                text: sentence.trim().to_string(),
            });
        } else {
            out.push(RawLine {
                label: None,
                text: line.trim().to_string(),
            });
        }
    }
    Ok(out)
}

/// Loads a corpus from a directory holding `train.txt`, `dev.txt` and
/// `test.txt`, or from a single file split 80/10/10 after a seeded shuffle.
pub fn load_text_splits(path: &Path, labeled: bool, seed: u64) -> Result<RawSplits, DataError> {
    if path.is_dir() {
        let part = |name: &str| -> Result<Vec<RawLine>, DataError> {
            let p = path.join(name);
            if p.exists() {
                parse_lines(&read(&p)?, labeled)
            } else {
                Ok(Vec::new())
            }
        };
        let splits = RawSplits {
            train: part("train.txt")?,
            dev: part("dev.txt")?,
            test: part("test.txt")?,
        };
        if splits.train.is_empty() {
            return Err(DataError::EmptyCorpus);
        }
        return Ok(splits);
    }
    let mut lines = parse_lines(&read(path)?, labeled)?;
    if lines.is_empty() {
        return Err(DataError::EmptyCorpus);
    }
    lines.shuffle(&mut indexed_rng(seed, Stream::Data, 0));
    let n = lines.len();
    let n_dev = n / 10;
    let n_test = n / 10;
    let test = lines.split_off(n - n_test);
    let dev = lines.split_off(n - n_test - n_dev);
    Ok(RawSplits {
        train: lines,
        dev,
        test,
    })
}

/// Class-conditional templated sentence generator.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub templates_per_class: usize,
    /// Words per class-specific pool (nouns, verbs and adjectives each).
    pub pool_size: usize,
    /// Class-independent nouns shared by every class.
    pub shared_pool_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            templates_per_class: 3,
            pool_size: 6,
            shared_pool_size: 8,
            min_len: 5,
            max_len: 10,
            train: 2000,
            dev: 200,
            test: 200,
            seed: 0,
        }
    }
}

pub const SYNTHETIC_KEYS: [&str; 10] = [
    "classes",
    "templates_per_class",
    "pool_size",
    "shared_pool_size",
    "min_len",
    "max_len",
    "train",
    "dev",
    "test",
    "seed",
];

impl SyntheticSpec {
    pub fn from_kv(kv: &KvMap) -> Result<Self, DataError> {
        kv.reject_unknown(&SYNTHETIC_KEYS)?;
        let d = SyntheticSpec::default();
        let spec = SyntheticSpec {
            classes: kv.get_or("classes", d.classes)?,
            templates_per_class: kv.get_or("templates_per_class", d.templates_per_class)?,
            pool_size: kv.get_or("pool_size", d.pool_size)?,
            shared_pool_size: kv.get_or("shared_pool_size", d.shared_pool_size)?,
            min_len: kv.get_or("min_len", d.min_len)?,
            max_len: kv.get_or("max_len", d.max_len)?,
            train: kv.get_or("train", d.train)?,
            dev: kv.get_or("dev", d.dev)?,
            test: kv.get_or("test", d.test)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("classes", self.classes);
        kv.insert("templates_per_class", self.templates_per_class);
        kv.insert("pool_size", self.pool_size);
        kv.insert("shared_pool_size", self.shared_pool_size);
        kv.insert("min_len", self.min_len);
        kv.insert("max_len", self.max_len);
        kv.insert("train", self.train);
        kv.insert("dev", self.dev);
        kv.insert("test", self.test);
        kv.insert("seed", self.seed);
        kv
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Spec(m.to_string()));
        if self.classes == 0 {
            return bad("classes must be at least 1");
        }
        if self.templates_per_class == 0 || self.pool_size == 0 {
            return bad("templates_per_class and pool_size must be positive");
        }
        if self.min_len < 3 || self.min_len > self.max_len {
            return bad("need 3 <= min_len <= max_len");
        }
        if self.train == 0 {
            return bad("train split must be non-empty");
        }
        if self.classes * (3 * self.pool_size + 1) > SYLLABLES.len() * SYLLABLES.len() {
            return bad("too many classes/pool words for the word generator");
        }
        Ok(())
    }
}

const SYLLABLES: [&str; 40] = [
    "ba", "be", "bi", "bo", "da", "de", "di", "do", "fa", "fe", "ka", "ke", "ki", "ko", "la", "le", "li", "lo", "ma",
    "me", "mi", "mo", "na", "ne", "ni", "no", "pa", "pe", "pi", "po", "ra", "re", "ri", "ro", "sa", "se", "si", "so",
    "ta", "te",
];

const FUNCTION_WORDS: [&str; 12] = [
    "the", "a", "of", "in", "and", "is", "was", "with", "on", "for", "by", "to",
];

fn pseudo_word(a: usize, b: usize, suffix: &str) -> String {
    format!(
        "{}{}{}",
        SYLLABLES[a % SYLLABLES.len()],
        SYLLABLES[b % SYLLABLES.len()],
        suffix
    )
}

#[derive(Clone, Debug)]
enum Slot {
    Word(&'static str),
    Noun,
    Verb,
    Adj,
    Shared,
}

/// Generates labeled sentences whose class-specific words make the label
/// recoverable. Sentences are unique across all splits.
pub fn generate_synthetic_text(spec: &SyntheticSpec) -> Result<RawSplits, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let p = spec.pool_size;
    // class c owns syllable-pair words with first syllable index c
    let pool = |c: usize, kind: usize, j: usize, suffix: &str| pseudo_word(c, 1 + kind * p + j, suffix);
    let shared: Vec<String> = (0..spec.shared_pool_size)
        .map(|j| pseudo_word(SYLLABLES.len() - 1 - j / SYLLABLES.len(), j, "t"))
        .collect();

    let mut templates: Vec<Vec<Vec<Slot>>> = Vec::with_capacity(spec.classes);
    for _ in 0..spec.classes {
        let mut per_class = Vec::with_capacity(spec.templates_per_class);
        for _ in 0..spec.templates_per_class {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            let mut slots = vec![Slot::Word(if rng.random_bool(0.5) { "the" } else { "a" })];
            while slots.len() < len - 1 {
                let after_function = matches!(slots.last(), Some(Slot::Word(_)));
                let slot = if after_function {
                    match rng.random_range(0..20) {
                        0..=6 => Slot::Noun,
                        7..=10 => Slot::Verb,
                        11..=14 => Slot::Adj,
                        _ if spec.shared_pool_size > 0 => Slot::Shared,
                        _ => Slot::Noun,
                    }
                } else {
                    Slot::Word(FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())])
                };
                slots.push(slot);
            }
            slots.push(Slot::Word("."));
            per_class.push(slots);
        }
        templates.push(per_class);
    }

    let total = spec.train + spec.dev + spec.test;
    let mut labels: Vec<usize> = (0..total).map(|i| i % spec.classes).collect();
    labels.shuffle(&mut rng);
    let mut seen = HashSet::new();
    let mut lines = Vec::with_capacity(total);
    for &c in &labels {
        let mut attempts = 0;
        let text = loop {
            let t = &templates[c][rng.random_range(0..spec.templates_per_class)];
            let words: Vec<String> = t
                .iter()
                .map(|s| match s {
                    Slot::Word(w) => w.to_string(),
                    Slot::Noun => pool(c, 0, rng.random_range(0..p), "n"),
                    Slot::Verb => pool(c, 1, rng.random_range(0..p), "s"),
                    Slot::Adj => pool(c, 2, rng.random_range(0..p), "y"),
                    Slot::Shared => shared[rng.random_range(0..shared.len())].clone(),
                })
                .collect();
            let text = words.join(" ");
            if seen.insert(text.clone()) {
                break text;
            }
            attempts += 1;
            if attempts > 1000 {
                return Err(DataError::Spec(
                    "templates cannot produce enough distinct sentences; raise pool sizes".into(),
                ));
            }
        };
        lines.push(RawLine {
            label: Some(format!("class{c}")),
            text,
        });
    }
    let test = lines.split_off(spec.train + spec.dev);
    let dev = lines.split_off(spec.train);
    Ok(RawSplits {
        train: lines,
        dev,
        test,
    })
}

/// Binary vectors drawn around per-class prototypes with independent bit flips.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorData {
    pub x: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub prototypes: Vec<Vec<f64>>,
}

impl VectorData {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> VectorData {
        VectorData {
            x: self.x[range.clone()].to_vec(),
            labels: self.labels[range].to_vec(),
            prototypes: self.prototypes.clone(),
        }
    }
}

pub fn generate_synthetic_vectors(
    n: usize,
    dim: usize,
    classes: usize,
    noise: f64,
    seed: u64,
) -> Result<VectorData, DataError> {
    if !(0.0..0.5).contains(&noise) {
        return Err(DataError::Noise(noise));
    }
    if classes == 0 || dim == 0 {
        return Err(DataError::Spec("classes and dim must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut x = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.random_range(0..classes);
        let v = prototypes[c]
            .iter()
            .map(|&b| {
                if noise > 0.0 && rng.random_bool(noise) {
                    1.0 - b
                } else {
                    b
                }
            })
            .collect();
        x.push(v);
        labels.push(c);
    }
    Ok(VectorData { x, labels, prototypes })
}

/// Padded `[size, width]` id matrix with true lengths.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub width: usize,
    /// Corpus positions of the rows.
    pub indices: Vec<usize>,
}

impl Batch {
    pub fn from_indices(corpus: &[Vec<usize>], indices: &[usize]) -> Batch {
        let width = indices.iter().map(|&i| corpus[i].len()).max().unwrap_or(0);
        let mut ids = vec![PAD; indices.len() * width];
        for (r, &i) in indices.iter().enumerate() {
            ids[r * width..r * width + corpus[i].len()].copy_from_slice(&corpus[i]);
        }
        Batch {
            ids,
            lengths: indices.iter().map(|&i| corpus[i].len()).collect(),
            width,
            indices: indices.to_vec(),
        }
    }

    pub fn from_sentences(sentences: &[Vec<usize>]) -> Batch {
        let idx: Vec<usize> = (0..sentences.len()).collect();
        Batch::from_indices(sentences, &idx)
    }

    pub fn size(&self) -> usize {
        self.lengths.len()
    }

    pub fn token(&self, row: usize, t: usize) -> usize {
        self.ids[row * self.width + t]
    }

    pub fn sentence(&self, row: usize) -> &[usize] {
        &self.ids[row * self.width..row * self.width + self.lengths[row]]
    }
}

/// Row index groups for one epoch; order depends only on `(seed, epoch)`.
pub fn epoch_order(
    n: usize,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size == 0 {
        return Err(DataError::BatchSize);
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut indexed_rng(seed, Stream::Shuffle, epoch));
    }
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

pub fn batch_iter(
    corpus: &[Vec<usize>],
    batch_size: usize,
    shuffle: bool,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Batch>, DataError> {
    Ok(epoch_order(corpus.len(), batch_size, shuffle, seed, epoch)?
        .iter()
        .map(|idx| Batch::from_indices(corpus, idx))
        .collect())
}

/// Token frequency table, sorted by token.
pub fn token_counts(lines: &[String]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for l in lines {
        for t in tokenize(l) {
            *m.entry(t).or_default() += 1;
        }
    }
    m
}
