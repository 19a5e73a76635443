//! Knowledge-graph triples over transformer records: two records joined by a
//! `similar` / `non_similar` relation according to whether their condition
//! labels agree.
//!
//! Pairs are ordered — (a, b) and (b, a) are distinct triples — and sampling
//! is without replacement, so a triple set never contains duplicates.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::TransformerRecord;

/// Relation between two records: same condition label or not.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Similar,
    NonSimilar,
}

impl Relation {
    pub fn as_str(self) -> &'static str {
        match self {
            Relation::Similar => "similar",
            Relation::NonSimilar => "non_similar",
        }
    }

    pub fn parse(s: &str) -> Option<Relation> {
        match s {
            "similar" => Some(Relation::Similar),
            "non_similar" => Some(Relation::NonSimilar),
            _ => None,
        }
    }

    /// The other relation.
    pub fn opposite(self) -> Relation {
        match self {
            Relation::Similar => Relation::NonSimilar,
            Relation::NonSimilar => Relation::Similar,
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One directed (head, relation, tail) fact. Heads never equal tails.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub head: String,
    pub relation: Relation,
    pub tail: String,
}

impl Triple {
    pub fn new(head: impl Into<String>, relation: Relation, tail: impl Into<String>) -> Result<Triple> {
        let head = head.into();
        let tail = tail.into();
        if head == tail {
            return Err(Error::Argument(format!(
                "a record cannot relate to itself: `{head}`"
            )));
        }
        Ok(Triple { head, relation, tail })
    }
}

/// A sampled triple set split for training and evaluation, plus the sorted
/// list of entity ids the triples mention (the keys to look crosses up by).
#[derive(Debug, Clone, PartialEq)]
pub struct TripleDataset {
    pub train: Vec<Triple>,
    pub test: Vec<Triple>,
    pub entities: Vec<String>,
}

impl TripleDataset {
    /// (similar, non_similar) counts for one side.
    pub fn relation_counts(triples: &[Triple]) -> (usize, usize) {
        let similar = triples.iter().filter(|t| t.relation == Relation::Similar).count();
        (similar, triples.len() - similar)
    }
}

fn sorted_entities(triples: &[Triple]) -> Vec<String> {
    let mut ids: Vec<String> = triples
        .iter()
        .flat_map(|t| [t.head.clone(), t.tail.clone()])
        .collect();
    ids.sort();
    ids.dedup();
    ids
}

/// Samples `n_similar` same-label and `n_nonsimilar` cross-label ordered
/// record pairs, uniformly without replacement.
pub fn build_triples(
    records: &[TransformerRecord],
    n_similar: usize,
    n_nonsimilar: usize,
    seed: u64,
) -> Result<Vec<Triple>> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::DuplicateId(r.id.clone()));
        }
    }

    let mut same = Vec::new();
    let mut cross = Vec::new();
    for (i, a) in records.iter().enumerate() {
        for (j, b) in records.iter().enumerate() {
            if i == j {
                continue;
            }
            if a.label == b.label {
                same.push((i, j));
            } else {
                cross.push((i, j));
            }
        }
    }
    if n_similar > same.len() {
        return Err(Error::Capacity {
            what: "similar ordered pairs".into(),
            requested: n_similar,
            available: same.len(),
        });
    }
    if n_nonsimilar > cross.len() {
        return Err(Error::Capacity {
            what: "non_similar ordered pairs".into(),
            requested: n_nonsimilar,
            available: cross.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    same.shuffle(&mut rng);
    cross.shuffle(&mut rng);

    let mut triples = Vec::with_capacity(n_similar + n_nonsimilar);
    for &(i, j) in same.iter().take(n_similar) {
        triples.push(Triple::new(records[i].id.clone(), Relation::Similar, records[j].id.clone())?);
    }
    for &(i, j) in cross.iter().take(n_nonsimilar) {
        triples.push(Triple::new(records[i].id.clone(), Relation::NonSimilar, records[j].id.clone())?);
    }
    Ok(triples)
}

/// Splits a balanced triple set into train/test, shuffling each relation
/// class independently. The train side gets round(train_fraction * total)
/// triples, half per relation (the odd one, if any, goes to `similar`).
pub fn split_triples(triples: &[Triple], train_fraction: f64, seed: u64) -> Result<TripleDataset> {
    if !train_fraction.is_finite() || !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Argument(format!(
            "train_fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    let mut similar: Vec<Triple> = Vec::new();
    let mut nonsimilar: Vec<Triple> = Vec::new();
    for t in triples {
        match t.relation {
            Relation::Similar => similar.push(t.clone()),
            Relation::NonSimilar => nonsimilar.push(t.clone()),
        }
    }
    if similar.len() != nonsimilar.len() {
        return Err(Error::Argument(format!(
            "triple set must be balanced: {} similar vs {} non_similar",
            similar.len(),
            nonsimilar.len()
        )));
    }

    let total_train = (train_fraction * triples.len() as f64).round() as usize;
    let total_train = total_train.min(triples.len());
    let train_nonsimilar = total_train / 2;
    let train_similar = total_train - train_nonsimilar;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    similar.shuffle(&mut rng);
    nonsimilar.shuffle(&mut rng);

    let mut train = Vec::with_capacity(total_train);
    let mut test = Vec::with_capacity(triples.len() - total_train);
    train.extend_from_slice(&similar[..train_similar]);
    train.extend_from_slice(&nonsimilar[..train_nonsimilar]);
    test.extend_from_slice(&similar[train_similar..]);
    test.extend_from_slice(&nonsimilar[train_nonsimilar..]);

    let entities = sorted_entities(triples);
    Ok(TripleDataset { train, test, entities })
}

/// Alternative split that holds out whole entities: entities are partitioned
/// train/test, and only triples with both endpoints on one side survive.
/// Relation balance is not guaranteed here; the default protocol is
/// [`split_triples`].
pub fn split_triples_entity_disjoint(
    triples: &[Triple],
    train_fraction: f64,
    seed: u64,
) -> Result<TripleDataset> {
    if !train_fraction.is_finite() || !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::Argument(format!(
            "train_fraction must lie in [0, 1], got {train_fraction}"
        )));
    }
    let entities = sorted_entities(triples);
    let mut shuffled = entities.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_train = (train_fraction * shuffled.len() as f64).round() as usize;
    let train_set: HashSet<&String> = shuffled[..n_train.min(shuffled.len())].iter().collect();

    let mut train = Vec::new();
    let mut test = Vec::new();
    for t in triples {
        let head_in = train_set.contains(&t.head);
        let tail_in = train_set.contains(&t.tail);
        match (head_in, tail_in) {
            (true, true) => train.push(t.clone()),
            (false, false) => test.push(t.clone()),
            _ => {} // straddling triples are dropped
        }
    }
    Ok(TripleDataset { train, test, entities })
}

/// Replaces the tail with a uniformly chosen entity that yields a valid,
/// unknown triple. Candidates are filtered in `entities` order, so the draw
/// is a pure function of (triple, entities, known, seed).
pub fn corrupt_tail(
    triple: &Triple,
    entities: &[String],
    known: &HashSet<Triple>,
    seed: u64,
) -> Result<Triple> {
    let candidates: Vec<&String> = entities
        .iter()
        .filter(|e| {
            **e != triple.head
                && **e != triple.tail
                && !known.contains(&Triple {
                    head: triple.head.clone(),
                    relation: triple.relation,
                    tail: (*e).clone(),
                })
        })
        .collect();
    if candidates.is_empty() {
        return Err(Error::Exhausted(format!(
            "({}, {}, {})",
            triple.head, triple.relation, triple.tail
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = candidates[rng.random_range(0..candidates.len())];
    Ok(Triple {
        head: triple.head.clone(),
        relation: triple.relation,
        tail: pick.clone(),
    })
}

const TRIPLE_HEADER: &str = "head,relation,tail";

/// Renders triples as `head,relation,tail` CSV.
pub fn triples_to_csv(triples: &[Triple]) -> String {
    let mut out = String::from(TRIPLE_HEADER);
    out.push('\n');
    for t in triples {
        out.push_str(&t.head);
        out.push(',');
        out.push_str(t.relation.as_str());
        out.push(',');
        out.push_str(&t.tail);
        out.push('\n');
    }
    out
}

/// Parses `head,relation,tail` CSV text.
pub fn parse_triples(text: &str) -> Result<Vec<Triple>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty file, expected a header row".into()))?;
    if header.trim() != TRIPLE_HEADER {
        return Err(Error::Schema(format!(
            "expected header `{TRIPLE_HEADER}`, got `{header}`"
        )));
    }
    let mut triples = Vec::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Schema(format!(
                "row {row} has {} columns, expected 3",
                fields.len()
            )));
        }
        let relation = Relation::parse(fields[1]).ok_or_else(|| Error::Parse {
            row,
            message: format!("unknown relation `{}`", fields[1]),
        })?;
        let triple = Triple::new(fields[0], relation, fields[2]).map_err(|_| Error::Parse {
            row,
            message: format!("head and tail are both `{}`", fields[0]),
        })?;
        triples.push(triple);
    }
    Ok(triples)
}

pub fn write_triples(path: &Path, triples: &[Triple]) -> Result<()> {
    fs::write(path, triples_to_csv(triples))?;
    Ok(())
}

pub fn load_triples(path: &Path) -> Result<Vec<Triple>> {
    parse_triples(&fs::read_to_string(path)?)
}
