//! Failure-rate scoring. A new transformer is compared against every
//! historical record in both directions (new-as-head and new-as-tail), each
//! predicted relation casts one vote, and the failure rate is the share of
//! fault votes: similar-to-a-fault-record or non-similar-to-a-stable-record.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gbdt::GbdtModel;
use crate::kg::{predict_relation, KgParams};
use crate::records::{Label, TransformerRecord};
use crate::triples::Relation;

/// Directed-comparison vote tallies for one scored record.
///
/// `ls`/`ld` count similar/non-similar verdicts against fault-labeled
/// historical records, `ss`/`sd` the same against stable-labeled ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchCounts {
    pub ls: usize,
    pub ld: usize,
    pub ss: usize,
    pub sd: usize,
}

impl MatchCounts {
    pub fn total(&self) -> usize {
        self.ls + self.ld + self.ss + self.sd
    }
}

/// Scores one record against every historical record, twice each (once as
/// head, once as tail), tallying verdicts by the historical record's label.
pub fn count_matches(
    kg: &KgParams,
    gbdt: &GbdtModel,
    new_record: &TransformerRecord,
    historical: &[TransformerRecord],
) -> Result<MatchCounts> {
    if historical.is_empty() {
        return Err(Error::Argument("no historical records to compare against".into()));
    }
    let new_cross = gbdt.feature_cross(&new_record.features)?;
    let mut counts = MatchCounts::default();
    for hist in historical {
        let hist_cross = gbdt.feature_cross(&hist.features)?;
        for (head, tail) in [(&new_cross, &hist_cross), (&hist_cross, &new_cross)] {
            let (verdict, _, _) = predict_relation(kg, head, tail)?;
            match (hist.label, verdict) {
                (Label::Fault, Relation::Similar) => counts.ls += 1,
                (Label::Fault, Relation::NonSimilar) => counts.ld += 1,
                (Label::Stable, Relation::Similar) => counts.ss += 1,
                (Label::Stable, Relation::NonSimilar) => counts.sd += 1,
            }
        }
    }
    Ok(counts)
}

/// Failure rate: (ls + sd) / (2·ns). `ns` is the number of historical
/// records, so the tallies must account for exactly two votes per record.
pub fn tfr(counts: &MatchCounts, ns: usize) -> Result<f64> {
    if ns == 0 {
        return Err(Error::Argument("ns must be positive".into()));
    }
    if counts.total() != 2 * ns {
        return Err(Error::Argument(format!(
            "match counts sum to {} but two votes per record require {}",
            counts.total(),
            2 * ns
        )));
    }
    Ok((counts.ls + counts.sd) as f64 / (2 * ns) as f64)
}

/// Fault verdict iff the rate strictly exceeds the threshold.
pub fn classify(tfr_value: f64, threshold: f64) -> Result<Label> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Argument(format!("threshold {threshold} outside [0, 1]")));
    }
    if !tfr_value.is_finite() {
        return Err(Error::Numeric("failure rate is not finite".into()));
    }
    Ok(if tfr_value > threshold { Label::Fault } else { Label::Stable })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfrRow {
    pub id: String,
    pub counts: MatchCounts,
    pub tfr: f64,
    pub verdict: Label,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfrReport {
    pub threshold: f64,
    pub rows: Vec<TfrRow>,
}

/// Scores each test record against the historical set and classifies it.
pub fn score_records(
    kg: &KgParams,
    gbdt: &GbdtModel,
    test: &[TransformerRecord],
    historical: &[TransformerRecord],
    threshold: f64,
) -> Result<TfrReport> {
    let mut rows = Vec::with_capacity(test.len());
    for record in test {
        let counts = count_matches(kg, gbdt, record, historical)?;
        let rate = tfr(&counts, historical.len())?;
        rows.push(TfrRow {
            id: record.id.clone(),
            counts,
            tfr: rate,
            verdict: classify(rate, threshold)?,
        });
    }
    Ok(TfrReport { threshold, rows })
}

/// Renders the per-record table as CSV.
pub fn report_csv(report: &TfrReport) -> String {
    let mut out = String::from("id,Ls,Ld,Ss,Sd,tfr,verdict\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.id, row.counts.ls, row.counts.ld, row.counts.ss, row.counts.sd, row.tfr, row.verdict
        ));
    }
    out
}
