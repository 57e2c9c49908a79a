//! Sequence corpus handling: FASTA ingestion, composition features,
//! 3-mer redundancy reduction, stratified folds and per-family prototypes.

use crate::graph::{FeatureVector, Role};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Canonical residues, in feature order.
pub const AMINO_ACIDS: &[u8; 20] = b"ACDEFGHIKLMNPQRSTVWY";

const NO_INDEX: u8 = u8::MAX;

const fn residue_table() -> [u8; 256] {
    let mut t = [NO_INDEX; 256];
    let mut i = 0;
    while i < 20 {
        t[AMINO_ACIDS[i] as usize] = i as u8;
        i += 1;
    }
    t
}

static RESIDUE_INDEX: [u8; 256] = residue_table();

#[inline]
fn residue_index(b: u8) -> Option<usize> {
    match RESIDUE_INDEX[b as usize] {
        NO_INDEX => None,
        i => Some(i as usize),
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("line {line}: sequence data before the first header")]
    MissingHeader { line: usize },
    #[error("line {line}: header has no id")]
    EmptyId { line: usize },
    #[error("line {line}: record {id:?} has an empty body")]
    EmptyBody { id: String, line: usize },
    #[error("line {line}: record {id:?} has illegal residue {residue:?} at position {position}")]
    IllegalResidue {
        id: String,
        residue: char,
        position: usize,
        line: usize,
    },
    #[error("record {id:?} has no role tag and no default applies")]
    MissingRole { id: String },
    #[error("record {id:?} has role {role}, expected {expected}")]
    UnexpectedRole {
        id: String,
        role: Role,
        expected: &'static str,
    },
    #[error("input is not valid UTF-8")]
    NotUtf8,
    #[error("record {id:?} is shorter than {min} residues")]
    TooShort { id: String, min: usize },
    #[error("duplicate record id {0:?}")]
    DuplicateId(String),
    #[error("need at least {needed} {class} records for {needed} folds, found {found}")]
    InsufficientRecords {
        class: &'static str,
        needed: usize,
        found: usize,
    },
    #[error("fold count must be at least 2, got {0}")]
    BadFoldCount(usize),
    #[error("similarity threshold must lie in (0, 1], got {0}")]
    BadThreshold(f64),
    #[error("training split has no {0} records")]
    RoleAbsent(Role),
    #[error("empty record list")]
    Empty,
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<DatasetError>,
    },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

/// One protein sequence with its family tag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceRecord {
    id: String,
    role: Role,
    residues: String,
}

impl SequenceRecord {
    /// Residues must be non-empty and canonical uppercase; role must be a
    /// receptor family or `NonPrr`.
    pub fn new(id: impl Into<String>, role: Role, residues: impl Into<String>) -> Result<Self, DatasetError> {
        let id = id.into();
        let residues = residues.into();
        if !(role.is_family() || role == Role::NonPrr) {
            return Err(DatasetError::UnexpectedRole {
                id,
                role,
                expected: "a receptor family or NONPRR",
            });
        }
        if residues.is_empty() {
            return Err(DatasetError::EmptyBody { id, line: 0 });
        }
        if let Some((i, c)) = residues.bytes().enumerate().find(|(_, b)| residue_index(*b).is_none()) {
            return Err(DatasetError::IllegalResidue {
                id,
                residue: c as char,
                position: i + 1,
                line: 0,
            });
        }
        Ok(Self { id, role, residues })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn residues(&self) -> &str {
        &self.residues
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    /// Positive iff the record belongs to a receptor family.
    pub fn label(&self) -> bool {
        self.role != Role::NonPrr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResiduePolicy {
    /// Any non-canonical letter is an error.
    #[default]
    Reject,
    /// B->N, Z->Q, U->C, J->L, O->K; X is dropped.
    MapToNearest,
}

impl ResiduePolicy {
    fn resolve(self, b: u8) -> Resolved {
        if residue_index(b).is_some() {
            return Resolved::Keep(b);
        }
        match (self, b) {
            (ResiduePolicy::MapToNearest, b'B') => Resolved::Keep(b'N'),
            (ResiduePolicy::MapToNearest, b'Z') => Resolved::Keep(b'Q'),
            (ResiduePolicy::MapToNearest, b'U') => Resolved::Keep(b'C'),
            (ResiduePolicy::MapToNearest, b'J') => Resolved::Keep(b'L'),
            (ResiduePolicy::MapToNearest, b'O') => Resolved::Keep(b'K'),
            (ResiduePolicy::MapToNearest, b'X') => Resolved::Drop,
            _ => Resolved::Illegal,
        }
    }
}

enum Resolved {
    Keep(u8),
    Drop,
    Illegal,
}

fn split_header(token: &str, default_role: Option<Role>) -> Result<(String, Option<Role>), DatasetError> {
    if let Some((id, tag)) = token.rsplit_once('|') {
        if let Ok(role) = tag.parse::<Role>() {
            return Ok((id.to_string(), Some(role)));
        }
    }
    Ok((token.to_string(), default_role))
}

struct Pending {
    id: String,
    role: Option<Role>,
    residues: String,
    header_line: usize,
    raw_position: usize,
}

impl Pending {
    fn finish(self) -> Result<SequenceRecord, DatasetError> {
        if self.residues.is_empty() {
            return Err(DatasetError::EmptyBody {
                id: self.id,
                line: self.header_line,
            });
        }
        let role = self.role.ok_or_else(|| DatasetError::MissingRole { id: self.id.clone() })?;
        SequenceRecord::new(self.id, role, self.residues)
    }
}

/// Parses FASTA text. Header ids run up to the first whitespace; a trailing
/// `|ROLE` on the id sets the role, otherwise `default_role` applies.
/// Lowercase residues are uppercased before the policy check.
pub fn parse_fasta(
    bytes: &[u8],
    default_role: Option<Role>,
    policy: ResiduePolicy,
) -> Result<Vec<SequenceRecord>, DatasetError> {
    let text = std::str::from_utf8(bytes).map_err(|_| DatasetError::NotUtf8)?;
    let mut records = Vec::new();
    let mut current: Option<Pending> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if let Some(header) = line.strip_prefix('>') {
            if let Some(p) = current.take() {
                records.push(p.finish()?);
            }
            let token = header.split_whitespace().next().unwrap_or("");
            if token.is_empty() {
                return Err(DatasetError::EmptyId { line: line_no });
            }
            let (id, role) = split_header(token, default_role)?;
            if id.is_empty() {
                return Err(DatasetError::EmptyId { line: line_no });
            }
            current = Some(Pending {
                id,
                role,
                residues: String::new(),
                header_line: line_no,
                raw_position: 0,
            });
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let Some(p) = current.as_mut() else {
            return Err(DatasetError::MissingHeader { line: line_no });
        };
        for b in line.bytes() {
            p.raw_position += 1;
            let upper = b.to_ascii_uppercase();
            match policy.resolve(upper) {
                Resolved::Keep(c) => p.residues.push(c as char),
                Resolved::Drop => {}
                Resolved::Illegal => {
                    return Err(DatasetError::IllegalResidue {
                        id: p.id.clone(),
                        residue: b as char,
                        position: p.raw_position,
                        line: line_no,
                    })
                }
            }
        }
    }
    if let Some(p) = current.take() {
        records.push(p.finish()?);
    }
    Ok(records)
}

/// Reads and parses a FASTA file, attaching the path to any error.
pub fn read_fasta(
    path: &Path,
    default_role: Option<Role>,
    policy: ResiduePolicy,
) -> Result<Vec<SequenceRecord>, DatasetError> {
    let bytes = std::fs::read(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_fasta(&bytes, default_role, policy).map_err(|e| DatasetError::InFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureMode {
    /// 20 residue frequencies.
    #[default]
    Composition,
    /// 400 adjacent-pair frequencies.
    Dipeptide,
}

impl FeatureMode {
    pub fn dim(self) -> usize {
        match self {
            FeatureMode::Composition => 20,
            FeatureMode::Dipeptide => 400,
        }
    }
}

/// Amino-acid (or dipeptide) composition in `ACDEFGHIKLMNPQRSTVWY` order.
pub fn extract_features(rec: &SequenceRecord, mode: FeatureMode) -> Result<FeatureVector, DatasetError> {
    let idx: Vec<usize> = rec
        .residues
        .bytes()
        .map(|b| residue_index(b).expect("record residues are canonical"))
        .collect();
    let values = match mode {
        FeatureMode::Composition => {
            let mut counts = vec![0.0; 20];
            for &i in &idx {
                counts[i] += 1.0;
            }
            let n = idx.len() as f64;
            counts.iter_mut().for_each(|c| *c /= n);
            counts
        }
        FeatureMode::Dipeptide => {
            if idx.len() < 2 {
                return Err(DatasetError::TooShort {
                    id: rec.id.clone(),
                    min: 2,
                });
            }
            let mut counts = vec![0.0; 400];
            for w in idx.windows(2) {
                counts[w[0] * 20 + w[1]] += 1.0;
            }
            let n = (idx.len() - 1) as f64;
            counts.iter_mut().for_each(|c| *c /= n);
            counts
        }
    };
    Ok(FeatureVector::new(values).expect("composition is finite and non-empty"))
}

const KMER_SPACE: usize = 20 * 20 * 20;
const KMER_WORDS: usize = KMER_SPACE.div_ceil(64);

/// Set of distinct 3-mers, as a bitset over the 8000 possible words.
#[derive(Clone)]
struct KmerSet {
    bits: Box<[u64; KMER_WORDS]>,
    count: u32,
}

impl KmerSet {
    fn of(rec: &SequenceRecord) -> Result<Self, DatasetError> {
        if rec.len() < 3 {
            return Err(DatasetError::TooShort {
                id: rec.id.clone(),
                min: 3,
            });
        }
        let idx: Vec<usize> = rec.residues.bytes().filter_map(residue_index).collect();
        let mut bits = Box::new([0u64; KMER_WORDS]);
        for w in idx.windows(3) {
            let k = (w[0] * 20 + w[1]) * 20 + w[2];
            bits[k / 64] |= 1 << (k % 64);
        }
        let count = bits.iter().map(|w| w.count_ones()).sum();
        Ok(Self { bits, count })
    }

    fn shared(&self, other: &KmerSet) -> u32 {
        self.bits
            .iter()
            .zip(other.bits.iter())
            .map(|(a, b)| (a & b).count_ones())
            .sum()
    }

    fn similarity(&self, other: &KmerSet) -> f64 {
        self.shared(other) as f64 / self.count.min(other.count) as f64
    }
}

/// Shared distinct 3-mers over the smaller of the two 3-mer sets.
pub fn similarity(a: &SequenceRecord, b: &SequenceRecord) -> Result<f64, DatasetError> {
    Ok(KmerSet::of(a)?.similarity(&KmerSet::of(b)?))
}

/// Greedy longest-first redundancy reduction.
///
/// Records are visited by descending length (ties by id); a record is kept iff
/// its similarity to every record kept so far is below `threshold`. The
/// survivors are returned in their input order.
pub fn redundancy_filter(
    records: &[SequenceRecord],
    threshold: f64,
) -> Result<Vec<SequenceRecord>, DatasetError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(DatasetError::BadThreshold(threshold));
    }
    let sets = records.iter().map(KmerSet::of).collect::<Result<Vec<_>, _>>()?;
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.sort_by(|&a, &b| {
        records[b]
            .len()
            .cmp(&records[a].len())
            .then_with(|| records[a].id.cmp(&records[b].id))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&j| sets[i].similarity(&sets[j]) < threshold) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept.into_iter().map(|i| records[i].clone()).collect())
}

/// Stratified assignment of record ids to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldSplit {
    k: usize,
    assignment: BTreeMap<String, usize>,
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn fold_of(&self, id: &str) -> Option<usize> {
        self.assignment.get(id).copied()
    }

    pub fn assignment(&self) -> &BTreeMap<String, usize> {
        &self.assignment
    }

    /// `(train, test)` for the given test fold; records not in the split are skipped.
    pub fn partition<'a>(
        &self,
        records: &'a [SequenceRecord],
        test_fold: usize,
    ) -> (Vec<&'a SequenceRecord>, Vec<&'a SequenceRecord>) {
        records
            .iter()
            .filter(|r| self.assignment.contains_key(&r.id))
            .partition(|r| self.assignment[&r.id] != test_fold)
    }

    /// `{"id": fold, ...}` followed by a newline.
    pub fn manifest_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.assignment).expect("map of strings to ints");
        s.push('\n');
        s
    }
}

/// Round-robin over seeded per-label shuffles.
pub fn build_folds(records: &[SequenceRecord], k: usize, seed: u64) -> Result<FoldSplit, DatasetError> {
    if k < 2 {
        return Err(DatasetError::BadFoldCount(k));
    }
    let mut ids = BTreeSet::new();
    for r in records {
        if !ids.insert(r.id.as_str()) {
            return Err(DatasetError::DuplicateId(r.id.clone()));
        }
    }
    let mut pos: Vec<&str> = records.iter().filter(|r| r.label()).map(|r| r.id.as_str()).collect();
    let mut neg: Vec<&str> = records.iter().filter(|r| !r.label()).map(|r| r.id.as_str()).collect();
    for (class, list) in [("positive", &pos), ("negative", &neg)] {
        if list.len() < k {
            return Err(DatasetError::InsufficientRecords {
                class,
                needed: k,
                found: list.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let assignment = pos
        .iter()
        .enumerate()
        .chain(neg.iter().enumerate())
        .map(|(i, id)| (id.to_string(), i % k))
        .collect();
    Ok(FoldSplit { k, assignment })
}

/// Per-family mean features together with the ids they were computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub by_role: BTreeMap<Role, FeatureVector>,
    pub source_ids: BTreeSet<String>,
}

/// Mean feature vector of each receptor family present in `training`,
/// renormalized to sum 1. Every role in `required` must be present.
pub fn role_prototypes(
    training: &[&SequenceRecord],
    required: &[Role],
    mode: FeatureMode,
) -> Result<Prototypes, DatasetError> {
    let mut sums: BTreeMap<Role, (Vec<f64>, usize)> = BTreeMap::new();
    let mut source_ids = BTreeSet::new();
    for rec in training.iter().filter(|r| r.label()) {
        let f = extract_features(rec, mode)?;
        let entry = sums.entry(rec.role).or_insert_with(|| (vec![0.0; mode.dim()], 0));
        entry.0.iter_mut().zip(f.as_slice()).for_each(|(a, b)| *a += b);
        entry.1 += 1;
        source_ids.insert(rec.id.clone());
    }
    for role in required {
        if !sums.contains_key(role) {
            return Err(DatasetError::RoleAbsent(*role));
        }
    }
    let by_role = sums
        .into_iter()
        .map(|(role, (sum, n))| {
            let mean: Vec<f64> = sum.iter().map(|x| x / n as f64).collect();
            let total: f64 = mean.iter().sum();
            let normalized = mean.iter().map(|x| x / total).collect();
            (role, FeatureVector::new(normalized).expect("finite mean"))
        })
        .collect();
    Ok(Prototypes { by_role, source_ids })
}

/// Record counts per role.
pub fn role_counts(records: &[SequenceRecord]) -> BTreeMap<Role, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.role).or_insert(0) += 1;
    }
    m
}

/// Positive and negative records read from their two files.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub positives: Vec<SequenceRecord>,
    pub negatives: Vec<SequenceRecord>,
}

impl Corpus {
    /// Positives followed by negatives.
    pub fn all(&self) -> Vec<SequenceRecord> {
        self.positives.iter().chain(&self.negatives).cloned().collect()
    }
}

/// Loads the positive file (every record needs a family tag) and the negative
/// file (records default to, and must be, `NONPRR`).
pub fn load_corpus(positives: &Path, negatives: &Path, policy: ResiduePolicy) -> Result<Corpus, DatasetError> {
    let in_file = |path: &Path, e: DatasetError| DatasetError::InFile {
        path: path.to_path_buf(),
        source: Box::new(e),
    };
    let pos = read_fasta(positives, None, policy)?;
    for r in &pos {
        if !r.role.is_family() {
            return Err(in_file(
                positives,
                DatasetError::UnexpectedRole {
                    id: r.id.clone(),
                    role: r.role,
                    expected: "a receptor family",
                },
            ));
        }
    }
    let neg = read_fasta(negatives, Some(Role::NonPrr), policy)?;
    for r in &neg {
        if r.role != Role::NonPrr {
            return Err(in_file(
                negatives,
                DatasetError::UnexpectedRole {
                    id: r.id.clone(),
                    role: r.role,
                    expected: "NONPRR",
                },
            ));
        }
    }
    let mut ids = BTreeSet::new();
    for r in pos.iter().chain(&neg) {
        if !ids.insert(r.id.clone()) {
            return Err(DatasetError::DuplicateId(r.id.clone()));
        }
    }
    Ok(Corpus {
        positives: pos,
        negatives: neg,
    })
}

/// A loaded corpus after redundancy reduction, with per-role counts before and after.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreparedCorpus {
    pub threshold: f64,
    pub raw_counts: BTreeMap<Role, usize>,
    pub filtered_counts: BTreeMap<Role, usize>,
    #[serde(skip)]
    pub records: Vec<SequenceRecord>,
}

pub fn prepare_corpus(
    positives: &Path,
    negatives: &Path,
    policy: ResiduePolicy,
    threshold: f64,
) -> Result<PreparedCorpus, DatasetError> {
    let all = load_corpus(positives, negatives, policy)?.all();
    let records = redundancy_filter(&all, threshold)?;
    Ok(PreparedCorpus {
        threshold,
        raw_counts: role_counts(&all),
        filtered_counts: role_counts(&records),
        records,
    })
}
