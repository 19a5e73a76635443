//! Transformer condition records: the CSV-backed input table, a synthetic
//! generator for desk-scale experiments, and the train/test split.
//!
//! A record is one transformer observation: an id, a binary condition label,
//! and eight normalized monitoring readings. The column set is fixed; files
//! with any other layout are rejected up front rather than half-parsed.

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

/// Number of monitoring features per record.
pub const NUM_FEATURES: usize = 8;

/// Feature column names, in file order.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "load_current",
    "oil_temperature",
    "oil_level",
    "gas",
    "oil_color",
    "sound",
    "appearance",
    "silicone",
];

/// Condition label for one transformer record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Fault,
    Stable,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Fault => "fault",
            Label::Stable => "stable",
        }
    }

    /// Case-insensitive parse of the two accepted label spellings.
    pub fn parse(s: &str) -> Option<Label> {
        if s.eq_ignore_ascii_case("fault") {
            Some(Label::Fault)
        } else if s.eq_ignore_ascii_case("stable") {
            Some(Label::Stable)
        } else {
            None
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One transformer observation: id, condition label, eight readings.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformerRecord {
    pub id: String,
    pub label: Label,
    pub features: [f64; NUM_FEATURES],
}

impl TransformerRecord {
    pub fn new(id: impl Into<String>, label: Label, features: [f64; NUM_FEATURES]) -> Self {
        TransformerRecord {
            id: id.into(),
            label,
            features,
        }
    }
}

/// Train/test partition of a record table.
#[derive(Debug, Clone)]
pub struct RecordSplit {
    pub train: Vec<TransformerRecord>,
    pub test: Vec<TransformerRecord>,
}

impl RecordSplit {
    /// (fault, stable) counts for one side of the split.
    pub fn class_counts(records: &[TransformerRecord]) -> (usize, usize) {
        let fault = records.iter().filter(|r| r.label == Label::Fault).count();
        (fault, records.len() - fault)
    }
}

fn expected_header() -> String {
    let mut cols = vec!["id", "label"];
    cols.extend(FEATURE_NAMES);
    cols.join(",")
}

/// Loads a record table from CSV, validating the header, every cell, and id
/// uniqueness. Row numbers in errors are 1-based and include the header row.
pub fn load_records(path: &Path) -> Result<Vec<TransformerRecord>> {
    let text = fs::read_to_string(path)?;
    parse_records(&text)
}

/// Parses CSV text in the record layout. Split out from [`load_records`] so
/// in-memory tables can be read without touching the filesystem.
pub fn parse_records(text: &str) -> Result<Vec<TransformerRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty file, expected a header row".into()))?;

    let want: Vec<String> = {
        let mut cols = vec!["id".to_string(), "label".to_string()];
        cols.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
        cols
    };
    let got: Vec<&str> = header.split(',').map(str::trim).collect();
    for (i, want_col) in want.iter().enumerate() {
        match got.get(i) {
            Some(col) if *col == want_col => {}
            Some(col) => {
                return Err(Error::Schema(format!(
                    "header column {} is `{col}`, expected `{want_col}`",
                    i + 1
                )))
            }
            None => return Err(Error::Schema(format!("missing column `{want_col}`"))),
        }
    }
    if got.len() > want.len() {
        return Err(Error::Schema(format!(
            "unexpected extra column `{}`",
            got[want.len()]
        )));
    }

    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (idx, line) in lines.enumerate() {
        let row = idx + 2; // 1-based, header is row 1
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != want.len() {
            return Err(Error::Schema(format!(
                "row {row} has {} columns, expected {}",
                fields.len(),
                want.len()
            )));
        }
        let id = fields[0].to_string();
        if id.is_empty() {
            return Err(Error::Parse {
                row,
                message: "empty id".into(),
            });
        }
        let label = Label::parse(fields[1]).ok_or_else(|| Error::Parse {
            row,
            message: format!("unknown label `{}`", fields[1]),
        })?;
        let mut features = [0.0; NUM_FEATURES];
        for (f, slot) in features.iter_mut().enumerate() {
            let cell = fields[2 + f];
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                message: format!("column `{}`: `{cell}` is not a number", FEATURE_NAMES[f]),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row,
                    message: format!("column `{}`: non-finite value", FEATURE_NAMES[f]),
                });
            }
            *slot = value;
        }
        if !seen.insert(id.clone()) {
            return Err(Error::DuplicateId(id));
        }
        records.push(TransformerRecord::new(id, label, features));
    }
    Ok(records)
}

/// Writes a record table as CSV. Floats use the shortest representation that
/// parses back to the same value, so write → load → write is a fixpoint.
pub fn write_records(path: &Path, records: &[TransformerRecord]) -> Result<()> {
    fs::write(path, records_to_csv(records))?;
    Ok(())
}

/// Renders a record table in the CSV layout accepted by [`parse_records`].
pub fn records_to_csv(records: &[TransformerRecord]) -> String {
    let mut out = String::new();
    out.push_str(&expected_header());
    out.push('\n');
    for r in records {
        out.push_str(&r.id);
        out.push(',');
        out.push_str(r.label.as_str());
        for v in &r.features {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Draws a balanced synthetic table: `n_per_class` fault and stable records
/// whose per-feature class means sit `separation` within-class standard
/// deviations apart. Same arguments, same table.
pub fn generate_synthetic(
    n_per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Vec<TransformerRecord>> {
    if n_per_class == 0 {
        return Err(Error::Argument("n_per_class must be at least 1".into()));
    }
    if !separation.is_finite() || separation < 0.0 {
        return Err(Error::Argument(format!(
            "separation must be finite and non-negative, got {separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Readings are nominally normalized to [0, 1]; a 0.1 within-class spread
    // around 0.5 keeps moderate separations inside that range.
    let sigma = 0.1;
    let half_gap = separation * sigma / 2.0;
    let width = n_per_class.to_string().len().max(3);

    let mut records = Vec::with_capacity(2 * n_per_class);
    for (label, mean) in [(Label::Fault, 0.5 + half_gap), (Label::Stable, 0.5 - half_gap)] {
        for i in 0..n_per_class {
            let mut features = [0.0; NUM_FEATURES];
            for slot in features.iter_mut() {
                *slot = mean + sigma * standard_normal(&mut rng);
            }
            let prefix = match label {
                Label::Fault => "fault",
                Label::Stable => "stable",
            };
            records.push(TransformerRecord::new(
                format!("{prefix}_{:0width$}", i + 1),
                label,
                features,
            ));
        }
    }
    Ok(records)
}

/// One standard-normal draw via Box-Muller; two uniforms in, one normal out.
fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.random_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Holds out `n_test_per_class` records of each class, uniformly at random,
/// and keeps everything else for training. Original row order is preserved
/// on both sides; train ⊎ test is exactly the input multiset.
pub fn split_records(
    records: &[TransformerRecord],
    n_test_per_class: usize,
    seed: u64,
) -> Result<RecordSplit> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut test_idx: HashSet<usize> = HashSet::new();
    for label in [Label::Fault, Label::Stable] {
        let class_idx: Vec<usize> = records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        if class_idx.len() < n_test_per_class {
            return Err(Error::Capacity {
                what: format!("{label} test records"),
                requested: n_test_per_class,
                available: class_idx.len(),
            });
        }
        let mut shuffled = class_idx;
        shuffled.shuffle(&mut rng);
        test_idx.extend(shuffled.into_iter().take(n_test_per_class));
    }
    let mut split = RecordSplit {
        train: Vec::with_capacity(records.len() - 2 * n_test_per_class),
        test: Vec::with_capacity(2 * n_test_per_class),
    };
    for (i, r) in records.iter().enumerate() {
        if test_idx.contains(&i) {
            split.test.push(r.clone());
        } else {
            split.train.push(r.clone());
        }
    }
    Ok(split)
}
