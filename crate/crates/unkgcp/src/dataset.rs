//! Weighted-triple datasets: parsing, score normalization, vocabulary
//! encoding, seeded splitting and negative corruption.
//!
//! The input format is a UTF-8 TSV with four columns per line,
//! `head<TAB>relation<TAB>tail<TAB>score`, no header. Scores arrive on
//! whatever scale the source uses and are mapped into `[0, 1]` by a
//! [`NormalizationScheme`] before encoding.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{seeded_rng, sub_seed};

/// How many times negative corruption retries before keeping a sample
/// that collides with a known positive.
const CORRUPT_RETRY_LIMIT: usize = 100;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: expected 4 tab-separated fields, found {found}")]
    MalformedLine { line: usize, found: usize },
    #[error("line {line}: cannot parse score {text:?}")]
    BadScore { line: usize, text: String },
    #[error("line {line}: score is not finite")]
    NonFiniteScore { line: usize },
    #[error("line {line}: empty label")]
    EmptyLabel { line: usize },
    #[error("confidence {value} outside [0, 1]")]
    ScoreOutOfRange { value: f64 },
    #[error("normalization input is empty")]
    EmptyInput,
    #[error("min-max normalization is degenerate: all scores equal {value}")]
    DegenerateRange { value: f64 },
    #[error("log normalization requires positive scores, found {value}")]
    NonPositiveScore { value: f64 },
    #[error("invalid normalization bounds [{lo}, {hi}]: need 0 <= lo < hi <= 1")]
    BadBounds { lo: f64, hi: f64 },
    #[error("split ratios {ratios:?} must be positive and sum to 1")]
    BadRatios { ratios: (f64, f64, f64) },
    #[error("split produced an empty {part} part")]
    EmptySplitPart { part: &'static str },
    #[error("negative corruption needs at least 2 entities, found {found}")]
    TooFewEntities { found: usize },
    #[error("per_positive must be >= 1")]
    BadPerPositive,
    #[error("unknown {kind} label {label:?}")]
    UnknownLabel { kind: &'static str, label: String },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A triple as it appears in the source file, before normalization and
/// encoding. The score is on the dataset-native scale.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTriple {
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub score: f64,
}

/// Mapping from raw dataset scores into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NormalizationScheme {
    /// Scores are already confidences in `[0, 1]`.
    Identity,
    /// Linear map sending the dataset minimum to `lo` and maximum to `hi`.
    MinMaxTo { lo: f64, hi: f64 },
    /// Cap scores at `cap`, take the natural log, then min-max into `[lo, hi]`.
    LogCapMinMax { cap: f64, lo: f64, hi: f64 },
}

impl NormalizationScheme {
    /// The ConceptNet-style convention: cap at 3.0, log, map into `[0.5, 1.0]`.
    pub fn cn15k() -> Self {
        NormalizationScheme::LogCapMinMax {
            cap: 3.0,
            lo: 0.5,
            hi: 1.0,
        }
    }

    /// The NELL-style convention: min-max into `[0.1, 1.0]`.
    pub fn nl27k() -> Self {
        NormalizationScheme::MinMaxTo { lo: 0.1, hi: 1.0 }
    }

    /// Scores that are already probabilities pass through unchanged.
    pub fn ppi5k() -> Self {
        NormalizationScheme::Identity
    }

    fn check_bounds(lo: f64, hi: f64) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(DatasetError::BadBounds { lo, hi });
        }
        Ok(())
    }
}

/// Dense bidirectional label/index maps for entities and relations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocab {
    entities: Vec<String>,
    entity_index: HashMap<String, u32>,
    relations: Vec<String>,
    relation_index: HashMap<String, u32>,
}

impl Vocab {
    /// Vocabulary with generated labels `e0..` and `r0..`, used for
    /// synthetic datasets where labels carry no meaning.
    pub fn synthetic(n_entities: usize, n_relations: usize) -> Self {
        let mut vocab = Vocab::default();
        for i in 0..n_entities {
            vocab.intern_entity(&format!("e{i}"));
        }
        for i in 0..n_relations {
            vocab.intern_relation(&format!("r{i}"));
        }
        vocab
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn relation_count(&self) -> usize {
        self.relations.len()
    }

    pub fn entity_id(&self, label: &str) -> Option<u32> {
        self.entity_index.get(label).copied()
    }

    pub fn relation_id(&self, label: &str) -> Option<u32> {
        self.relation_index.get(label).copied()
    }

    pub fn entity_label(&self, id: u32) -> Option<&str> {
        self.entities.get(id as usize).map(String::as_str)
    }

    pub fn relation_label(&self, id: u32) -> Option<&str> {
        self.relations.get(id as usize).map(String::as_str)
    }

    fn intern_entity(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.entity_index.get(label) {
            return id;
        }
        let id = self.entities.len() as u32;
        self.entities.push(label.to_string());
        self.entity_index.insert(label.to_string(), id);
        id
    }

    fn intern_relation(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.relation_index.get(label) {
            return id;
        }
        let id = self.relations.len() as u32;
        self.relations.push(label.to_string());
        self.relation_index.insert(label.to_string(), id);
        id
    }
}

/// An encoded triple with a confidence score in `[0, 1]`.
///
/// The range invariant on `c` is enforced at construction; there is no
/// way to build a `WeightedTriple` with an out-of-range confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedTriple {
    h: u32,
    r: u32,
    t: u32,
    c: f64,
}

impl WeightedTriple {
    pub fn new(h: u32, r: u32, t: u32, c: f64) -> Result<Self, DatasetError> {
        if !c.is_finite() || !(0.0..=1.0).contains(&c) {
            return Err(DatasetError::ScoreOutOfRange { value: c });
        }
        Ok(WeightedTriple { h, r, t, c })
    }

    pub fn head(&self) -> u32 {
        self.h
    }

    pub fn relation(&self) -> u32 {
        self.r
    }

    pub fn tail(&self) -> u32 {
        self.t
    }

    pub fn confidence(&self) -> f64 {
        self.c
    }

    /// The query part `(h, r, t)` without the confidence.
    pub fn query(&self) -> (u32, u32, u32) {
        (self.h, self.r, self.t)
    }

    /// Same query, different confidence.
    pub fn with_confidence(&self, c: f64) -> Result<Self, DatasetError> {
        WeightedTriple::new(self.h, self.r, self.t, c)
    }
}

impl fmt::Display for WeightedTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.h, self.r, self.t, self.c)
    }
}

/// Train/calibration/test split ratios.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub cal: f64,
    pub test: f64,
}

impl SplitRatios {
    /// The benchmark convention: 85% train, 7% calibration, 8% test.
    pub fn standard() -> Self {
        SplitRatios {
            train: 0.85,
            cal: 0.07,
            test: 0.08,
        }
    }

    fn validate(&self) -> Result<(), DatasetError> {
        let sum = self.train + self.cal + self.test;
        if self.train <= 0.0 || self.cal <= 0.0 || self.test <= 0.0 || (sum - 1.0).abs() > 1e-9 {
            return Err(DatasetError::BadRatios {
                ratios: (self.train, self.cal, self.test),
            });
        }
        Ok(())
    }
}

/// A dataset partitioned into proper-training, calibration and test parts.
///
/// The calibration part is reserved for nonconformity scoring and the
/// test part for evaluation; neither may be touched during training.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<WeightedTriple>,
    pub cal: Vec<WeightedTriple>,
    pub test: Vec<WeightedTriple>,
    pub vocab: Vocab,
    pub split_seed: u64,
}

/// Parse TSV input into raw triples. Line numbers in errors are 1-based.
pub fn parse_tsv<R: BufRead>(reader: R) -> Result<Vec<RawTriple>, DatasetError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(DatasetError::MalformedLine {
                line: lineno,
                found: fields.len(),
            });
        }
        if fields[..3].iter().any(|f| f.is_empty()) {
            return Err(DatasetError::EmptyLabel { line: lineno });
        }
        let score: f64 = fields[3]
            .trim()
            .parse()
            .map_err(|_| DatasetError::BadScore {
                line: lineno,
                text: fields[3].to_string(),
            })?;
        if !score.is_finite() {
            return Err(DatasetError::NonFiniteScore { line: lineno });
        }
        out.push(RawTriple {
            head: fields[0].to_string(),
            relation: fields[1].to_string(),
            tail: fields[2].to_string(),
            score,
        });
    }
    Ok(out)
}

/// Map raw scores into `[0, 1]` under the given scheme.
///
/// Min-max statistics are taken over the full input list, so this must
/// run before splitting.
pub fn normalize_scores(
    raw: &[RawTriple],
    scheme: NormalizationScheme,
) -> Result<Vec<RawTriple>, DatasetError> {
    if raw.is_empty() {
        return Err(DatasetError::EmptyInput);
    }
    let transformed: Vec<f64> = match scheme {
        NormalizationScheme::Identity => raw.iter().map(|t| t.score).collect(),
        NormalizationScheme::MinMaxTo { lo, hi } => {
            NormalizationScheme::check_bounds(lo, hi)?;
            min_max(&raw.iter().map(|t| t.score).collect::<Vec<_>>(), lo, hi)?
        }
        NormalizationScheme::LogCapMinMax { cap, lo, hi } => {
            NormalizationScheme::check_bounds(lo, hi)?;
            let logged: Vec<f64> = raw
                .iter()
                .map(|t| {
                    if t.score <= 0.0 {
                        Err(DatasetError::NonPositiveScore { value: t.score })
                    } else {
                        Ok(t.score.min(cap).ln())
                    }
                })
                .collect::<Result<_, _>>()?;
            min_max(&logged, lo, hi)?
        }
    };
    Ok(raw
        .iter()
        .zip(transformed)
        .map(|(t, score)| RawTriple {
            head: t.head.clone(),
            relation: t.relation.clone(),
            tail: t.tail.clone(),
            score,
        })
        .collect())
}

fn min_max(values: &[f64], lo: f64, hi: f64) -> Result<Vec<f64>, DatasetError> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if min == max {
        return Err(DatasetError::DegenerateRange { value: min });
    }
    Ok(values
        .iter()
        .map(|&v| lo + (hi - lo) * (v - min) / (max - min))
        .collect())
}

/// Assign dense ids in first-occurrence order and validate score ranges.
pub fn encode(raw: &[RawTriple]) -> Result<(Vocab, Vec<WeightedTriple>), DatasetError> {
    let mut vocab = Vocab::default();
    let mut triples = Vec::with_capacity(raw.len());
    for t in raw {
        let h = vocab.intern_entity(&t.head);
        let r = vocab.intern_relation(&t.relation);
        let tail = vocab.intern_entity(&t.tail);
        triples.push(WeightedTriple::new(h, r, tail, t.score)?);
    }
    Ok((vocab, triples))
}

/// Encode against an existing vocabulary; unknown labels are errors.
pub fn encode_with_vocab(
    raw: &[RawTriple],
    vocab: &Vocab,
) -> Result<Vec<WeightedTriple>, DatasetError> {
    raw.iter()
        .map(|t| {
            let h = vocab
                .entity_id(&t.head)
                .ok_or_else(|| DatasetError::UnknownLabel {
                    kind: "entity",
                    label: t.head.clone(),
                })?;
            let r = vocab
                .relation_id(&t.relation)
                .ok_or_else(|| DatasetError::UnknownLabel {
                    kind: "relation",
                    label: t.relation.clone(),
                })?;
            let tail = vocab
                .entity_id(&t.tail)
                .ok_or_else(|| DatasetError::UnknownLabel {
                    kind: "entity",
                    label: t.tail.clone(),
                })?;
            WeightedTriple::new(h, r, tail, t.score)
        })
        .collect()
}

/// Deterministic three-way split.
///
/// Cal and test sizes are `floor(ratio * n)`; the remainder goes to the
/// training part, since calibration and test sizes are the quantities
/// the coverage theory depends on.
pub fn split(
    triples: &[WeightedTriple],
    vocab: Vocab,
    ratios: SplitRatios,
    seed: u64,
) -> Result<SplitDataset, DatasetError> {
    ratios.validate()?;
    let n = triples.len();
    let n_cal = (ratios.cal * n as f64).floor() as usize;
    let n_test = (ratios.test * n as f64).floor() as usize;
    let n_train = n - n_cal - n_test;
    for (size, part) in [(n_train, "train"), (n_cal, "cal"), (n_test, "test")] {
        if size == 0 {
            return Err(DatasetError::EmptySplitPart { part });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(sub_seed(seed, "split")));

    let take = |range: std::ops::Range<usize>| -> Vec<WeightedTriple> {
        order[range].iter().map(|&i| triples[i]).collect()
    };
    Ok(SplitDataset {
        train: take(0..n_train),
        cal: take(n_train..n_train + n_cal),
        test: take(n_train + n_cal..n),
        vocab,
        split_seed: seed,
    })
}

/// Carve a validation subset out of a training part (seeded, disjoint).
///
/// Returns `(remaining_train, validation)`. At least one triple lands in
/// each part as long as the input has two or more.
pub fn carve_validation(
    train: &[WeightedTriple],
    fraction: f64,
    seed: u64,
) -> (Vec<WeightedTriple>, Vec<WeightedTriple>) {
    let n = train.len();
    if n < 2 {
        return (train.to_vec(), Vec::new());
    }
    let n_val = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(sub_seed(seed, "validation")));
    let val = order[..n_val].iter().map(|&i| train[i]).collect();
    let rest = order[n_val..].iter().map(|&i| train[i]).collect();
    (rest, val)
}

/// Generate corrupted negatives: for each positive, `per_positive`
/// copies with the head or tail (fair coin) replaced by a uniformly
/// random different entity. Negatives carry confidence 0.
///
/// Resampling avoids triples present in `positives`; after
/// [`CORRUPT_RETRY_LIMIT`] retries the colliding sample is kept.
pub fn corrupt_negatives(
    positives: &[WeightedTriple],
    vocab: &Vocab,
    per_positive: usize,
    seed: u64,
) -> Result<Vec<WeightedTriple>, DatasetError> {
    if per_positive == 0 {
        return Err(DatasetError::BadPerPositive);
    }
    let n_entities = vocab.entity_count();
    if n_entities < 2 {
        return Err(DatasetError::TooFewEntities { found: n_entities });
    }
    let positive_set: HashSet<(u32, u32, u32)> = positives.iter().map(|t| t.query()).collect();
    let mut rng = seeded_rng(sub_seed(seed, "negatives"));
    let mut out = Vec::with_capacity(positives.len() * per_positive);
    for pos in positives {
        for _ in 0..per_positive {
            out.push(corrupt_one(
                pos,
                &positive_set,
                n_entities as u32,
                &mut rng,
            ));
        }
    }
    Ok(out)
}

/// Single corruption draw; shared with the training loop so that batch
/// sampling and the public API behave identically.
pub(crate) fn corrupt_one<R: Rng>(
    pos: &WeightedTriple,
    positive_set: &HashSet<(u32, u32, u32)>,
    n_entities: u32,
    rng: &mut R,
) -> WeightedTriple {
    let mut candidate = (0, 0, 0);
    for _ in 0..CORRUPT_RETRY_LIMIT {
        let corrupt_head = rng.gen_bool(0.5);
        let original = if corrupt_head { pos.h } else { pos.t };
        let replacement = sample_other_entity(original, n_entities, rng);
        candidate = if corrupt_head {
            (replacement, pos.r, pos.t)
        } else {
            (pos.h, pos.r, replacement)
        };
        if !positive_set.contains(&candidate) {
            break;
        }
    }
    WeightedTriple::new(candidate.0, candidate.1, candidate.2, 0.0).expect("confidence 0 is valid")
}

fn sample_other_entity<R: Rng>(original: u32, n_entities: u32, rng: &mut R) -> u32 {
    // Sample over n-1 slots and skip past the original.
    let drawn = rng.gen_range(0..n_entities - 1);
    if drawn >= original {
        drawn + 1
    } else {
        drawn
    }
}

/// Split manifest persisted next to the three TSV parts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: SplitRatios,
    pub scheme: NormalizationScheme,
    pub n_train: usize,
    pub n_cal: usize,
    pub n_test: usize,
}

/// Persist a split as `train.tsv`, `cal.tsv`, `test.tsv`, `vocab.tsv`
/// and `manifest.toml` under `dir`.
pub fn save_split(
    dir: &Path,
    data: &SplitDataset,
    scheme: NormalizationScheme,
    ratios: SplitRatios,
) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    for (name, part) in [
        ("train.tsv", &data.train),
        ("cal.tsv", &data.cal),
        ("test.tsv", &data.test),
    ] {
        let mut f = fs::File::create(dir.join(name))?;
        for t in part.iter() {
            writeln!(
                f,
                "{}\t{}\t{}\t{}",
                data.vocab.entity_label(t.h).expect("id in vocab"),
                data.vocab.relation_label(t.r).expect("id in vocab"),
                data.vocab.entity_label(t.t).expect("id in vocab"),
                t.c
            )?;
        }
    }
    let mut vf = fs::File::create(dir.join("vocab.tsv"))?;
    for (id, label) in data.vocab.entities.iter().enumerate() {
        writeln!(vf, "e\t{label}\t{id}")?;
    }
    for (id, label) in data.vocab.relations.iter().enumerate() {
        writeln!(vf, "r\t{label}\t{id}")?;
    }
    let manifest = SplitManifest {
        seed: data.split_seed,
        ratios,
        scheme,
        n_train: data.train.len(),
        n_cal: data.cal.len(),
        n_test: data.test.len(),
    };
    let text = toml::to_string_pretty(&manifest).map_err(|e| DatasetError::Manifest(e.to_string()))?;
    fs::write(dir.join("manifest.toml"), text)?;
    Ok(())
}

/// Load a split previously written by [`save_split`].
pub fn load_split(dir: &Path) -> Result<(SplitDataset, SplitManifest), DatasetError> {
    let manifest: SplitManifest =
        toml::from_str(&fs::read_to_string(dir.join("manifest.toml"))?)
            .map_err(|e| DatasetError::Manifest(e.to_string()))?;

    let mut vocab = Vocab::default();
    for (idx, line) in fs::read_to_string(dir.join("vocab.tsv"))?.lines().enumerate() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(DatasetError::Manifest(format!(
                "vocab.tsv line {}: expected 3 fields",
                idx + 1
            )));
        }
        match fields[0] {
            "e" => vocab.intern_entity(fields[1]),
            "r" => vocab.intern_relation(fields[1]),
            _ => {
                return Err(DatasetError::Manifest(format!(
                    "vocab.tsv line {}: unknown kind {:?}",
                    idx + 1,
                    fields[0]
                )))
            }
        };
    }

    let read_part = |name: &str| -> Result<Vec<WeightedTriple>, DatasetError> {
        let raw = parse_tsv(std::io::BufReader::new(fs::File::open(dir.join(name))?))?;
        encode_with_vocab(&raw, &vocab)
    };
    let data = SplitDataset {
        train: read_part("train.tsv")?,
        cal: read_part("cal.tsv")?,
        test: read_part("test.tsv")?,
        vocab,
        split_seed: manifest.seed,
    };
    if data.train.len() != manifest.n_train
        || data.cal.len() != manifest.n_cal
        || data.test.len() != manifest.n_test
    {
        return Err(DatasetError::Manifest(
            "part sizes disagree with manifest".to_string(),
        ));
    }
    Ok((data, manifest))
}
