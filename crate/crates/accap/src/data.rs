//! Deterministic synthetic captioned-scene corpus: attribute-defined scenes,
//! template references, noisy one-hot feature vectors, vocabulary and splits.
//!
//! File format (`capcorpus-v1`): one JSON object per line. The first line is a
//! header carrying the format tag, generation seed and the vocabulary; every
//! following line is one example with `scene`, `feature`, `references` (word
//! strings) and `split`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

pub type TokenId = usize;

/// Dimension of the synthetic feature vector: one-hot blocks for
/// count (3), color (4), shape (3) and setting (2).
pub const FEATURE_DIM: usize = 12;

/// Standard deviation of the additive feature noise.
pub const FEATURE_NOISE_SIGMA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setting {
    Indoors,
    Outdoors,
}

impl Color {
    pub const ALL: [Color; 4] = [Color::Red, Color::Green, Color::Blue, Color::Yellow];
    fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
        }
    }
    fn index(self) -> usize {
        Color::ALL.iter().position(|c| *c == self).unwrap()
    }
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];
    fn word(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }
    fn plural(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circles",
            ShapeKind::Square => "squares",
            ShapeKind::Triangle => "triangles",
        }
    }
    fn index(self) -> usize {
        ShapeKind::ALL.iter().position(|s| *s == self).unwrap()
    }
}

impl Setting {
    pub const ALL: [Setting; 2] = [Setting::Indoors, Setting::Outdoors];
    fn word(self) -> &'static str {
        match self {
            Setting::Indoors => "indoors",
            Setting::Outdoors => "outdoors",
        }
    }
    fn index(self) -> usize {
        Setting::ALL.iter().position(|s| *s == self).unwrap()
    }
}

/// One synthetic scene: the stand-in for an input image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scene {
    pub count: u8,
    pub color: Color,
    pub shape: ShapeKind,
    pub setting: Setting,
}

impl Scene {
    pub fn new(count: u8, color: Color, shape: ShapeKind, setting: Setting) -> Result<Self> {
        if !(1..=3).contains(&count) {
            return Err(Error::Arg(format!("scene count must be 1..=3, got {count}")));
        }
        Ok(Scene {
            count,
            color,
            shape,
            setting,
        })
    }

    /// Noise-free one-hot encoding of the four attribute blocks.
    pub fn one_hot(&self) -> [f64; FEATURE_DIM] {
        let mut v = [0.0; FEATURE_DIM];
        v[self.count as usize - 1] = 1.0;
        v[3 + self.color.index()] = 1.0;
        v[7 + self.shape.index()] = 1.0;
        v[10 + self.setting.index()] = 1.0;
        v
    }

    /// The fixed reference templates for this scene, as word sequences.
    pub fn reference_sentences(&self) -> Vec<Vec<String>> {
        let color = self.color.word();
        let setting = self.setting.word();
        if self.count == 1 {
            let shape = self.shape.word();
            vec![
                format!("a {color} {shape} {setting}"),
                format!("there is a {color} {shape}"),
            ]
        } else {
            let count_word = if self.count == 2 { "two" } else { "three" };
            let shapes = self.shape.plural();
            vec![
                format!("{count_word} {color} {shapes} {setting}"),
                format!("there are {count_word} {color} {shapes}"),
            ]
        }
        .into_iter()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .collect()
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {} {} {}",
            self.count,
            self.color.word(),
            self.shape.word(),
            self.setting.word()
        )
    }
}

/// Noisy feature vector standing in for a CNN image encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFeature {
    pub values: Vec<f64>,
}

impl ImageFeature {
    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// One-hot blocks plus i.i.d. Gaussian noise with the default sigma.
pub fn encode_feature<R: Rng>(scene: &Scene, rng: &mut R) -> ImageFeature {
    encode_feature_with_sigma(scene, FEATURE_NOISE_SIGMA, rng)
}

pub fn encode_feature_with_sigma<R: Rng>(scene: &Scene, sigma: f64, rng: &mut R) -> ImageFeature {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let values = scene
        .one_hot()
        .iter()
        .map(|v| v + sigma * normal.sample(rng))
        .collect();
    ImageFeature { values }
}

/// Closed vocabulary with fixed reserved ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    pub const PAD: TokenId = 0;
    pub const BOS: TokenId = 1;
    pub const EOS: TokenId = 2;
    pub const UNK: TokenId = 3;
    pub const RESERVED: [&'static str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < Self::RESERVED.len() {
            return Err(Error::CorpusFormat("vocab shorter than reserved set".into()));
        }
        for (i, want) in Self::RESERVED.iter().enumerate() {
            if tokens[i] != *want {
                return Err(Error::CorpusFormat(format!(
                    "reserved token {i} is {:?}, expected {want:?}",
                    tokens[i]
                )));
            }
        }
        let mut index = HashMap::new();
        for (id, tok) in tokens.iter().enumerate() {
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::CorpusFormat(format!("duplicate vocab token {tok:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Encodes words to ids; unknown words map to UNK.
    pub fn encode(&self, words: &[String]) -> Vec<TokenId> {
        words
            .iter()
            .map(|w| self.id(w).unwrap_or(Self::UNK))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|id| {
                self.token(*id)
                    .unwrap_or(Self::RESERVED[Self::UNK])
                    .to_string()
            })
            .collect()
    }

    /// FNV-1a over the token list; used to detect checkpoint/corpus mismatch.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for tok in &self.tokens {
            for b in tok.as_bytes() {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= 0xff;
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }
}

/// Reserved tokens first, then corpus words in first-occurrence order.
pub fn build_vocab(sentences: &[Vec<String>]) -> Vocab {
    let mut tokens: Vec<String> = Vocab::RESERVED.iter().map(|s| s.to_string()).collect();
    let mut seen: HashMap<&str, ()> = tokens.iter().map(|t| (t.as_str(), ())).collect();
    let mut order: Vec<&String> = Vec::new();
    for sent in sentences {
        for word in sent {
            if !seen.contains_key(word.as_str()) {
                seen.insert(word.as_str(), ());
                order.push(word);
            }
        }
    }
    tokens.extend(order.into_iter().cloned());
    Vocab::from_tokens(tokens).expect("constructed vocab is valid")
}

/// One captioned scene: feature vector plus EOS-terminated reference ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub scene: Scene,
    pub feature: ImageFeature,
    pub references: Vec<Vec<TokenId>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Arg(format!("unknown split {other:?}"))),
        }
    }
}

/// Scenes, reference captions, vocabulary and disjoint splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub seed: u64,
    pub vocab: Vocab,
    pub examples: Vec<Example>,
    pub splits: Vec<Split>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.splits
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == split)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn iter_split(&self, split: Split) -> impl Iterator<Item = &Example> {
        self.examples
            .iter()
            .zip(&self.splits)
            .filter(move |(_, s)| **s == split)
            .map(|(e, _)| e)
    }
}

/// Deterministic corpus generation: uniform scenes over the 72-element
/// attribute space, template references, noisy features, 80/10/10 splits.
pub fn generate_corpus(seed: u64, n_scenes: usize) -> Result<Corpus> {
    if n_scenes < 10 {
        return Err(Error::Arg(format!(
            "generate_corpus: need at least 10 scenes, got {n_scenes}"
        )));
    }
    let mut rng = rng::seeded(seed);

    let mut scenes = Vec::with_capacity(n_scenes);
    let mut features = Vec::with_capacity(n_scenes);
    let mut sentences: Vec<Vec<Vec<String>>> = Vec::with_capacity(n_scenes);
    for _ in 0..n_scenes {
        let scene = Scene {
            count: rng.gen_range(1..=3),
            color: Color::ALL[rng.gen_range(0..Color::ALL.len())],
            shape: ShapeKind::ALL[rng.gen_range(0..ShapeKind::ALL.len())],
            setting: Setting::ALL[rng.gen_range(0..Setting::ALL.len())],
        };
        features.push(encode_feature(&scene, &mut rng));
        sentences.push(scene.reference_sentences());
        scenes.push(scene);
    }

    let flat: Vec<Vec<String>> = sentences.iter().flatten().cloned().collect();
    let vocab = build_vocab(&flat);

    let examples: Vec<Example> = scenes
        .into_iter()
        .zip(features)
        .zip(&sentences)
        .map(|((scene, feature), refs)| Example {
            scene,
            feature,
            references: refs
                .iter()
                .map(|words| {
                    let mut ids = vocab.encode(words);
                    ids.push(Vocab::EOS);
                    ids
                })
                .collect(),
        })
        .collect();

    // 80/10/10 split by shuffled index; val takes half the remainder.
    let mut order: Vec<usize> = (0..n_scenes).collect();
    order.shuffle(&mut rng);
    let n_train = n_scenes * 8 / 10;
    let n_val = (n_scenes - n_train) / 2;
    let mut splits = vec![Split::Train; n_scenes];
    for (rank, idx) in order.into_iter().enumerate() {
        splits[idx] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    Ok(Corpus {
        seed,
        vocab,
        examples,
        splits,
    })
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    seed: u64,
    vocab: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    scene: Scene,
    feature: Vec<f64>,
    references: Vec<Vec<String>>,
    split: Split,
}

pub const CORPUS_FORMAT: &str = "capcorpus-v1";

impl Corpus {
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: CORPUS_FORMAT.to_string(),
            seed: self.seed,
            vocab: self.vocab.tokens().to_vec(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for (ex, split) in self.examples.iter().zip(&self.splits) {
            let record = Record {
                scene: ex.scene,
                feature: ex.feature.values.clone(),
                references: ex
                    .references
                    .iter()
                    .map(|ids| {
                        // Stored human-readable: words only, EOS re-added on load.
                        self.vocab.decode(&ids[..ids.len() - 1])
                    })
                    .collect(),
                split: *split,
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::CorpusFormat("empty corpus file".into()))?;
        let header: Header = serde_json::from_str(header_line)
            .map_err(|e| Error::CorpusFormat(format!("bad header: {e}")))?;
        if header.format != CORPUS_FORMAT {
            return Err(Error::CorpusFormat(format!(
                "unsupported format {:?}, expected {CORPUS_FORMAT:?}",
                header.format
            )));
        }
        let vocab = Vocab::from_tokens(header.vocab)?;

        let mut examples = Vec::new();
        let mut splits = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(line)
                .map_err(|e| Error::CorpusFormat(format!("line {}: {e}", lineno + 2)))?;
            Scene::new(
                record.scene.count,
                record.scene.color,
                record.scene.shape,
                record.scene.setting,
            )?;
            if record.feature.len() != FEATURE_DIM {
                return Err(Error::CorpusFormat(format!(
                    "line {}: feature has {} entries, expected {FEATURE_DIM}",
                    lineno + 2,
                    record.feature.len()
                )));
            }
            let references: Vec<Vec<TokenId>> = record
                .references
                .iter()
                .map(|words| {
                    let mut ids = vocab.encode(words);
                    ids.push(Vocab::EOS);
                    ids
                })
                .collect();
            for ids in &references {
                if !(3..=12).contains(&ids.len()) {
                    return Err(Error::CorpusFormat(format!(
                        "line {}: reference length {} outside [3, 12]",
                        lineno + 2,
                        ids.len()
                    )));
                }
            }
            examples.push(Example {
                scene: record.scene,
                feature: ImageFeature {
                    values: record.feature,
                },
                references,
            });
            splits.push(record.split);
        }
        Ok(Corpus {
            seed: header.seed,
            vocab,
            examples,
            splits,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(&text)
    }
}
