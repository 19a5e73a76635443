//! End-to-end orchestration. One JSON config drives the whole run — data,
//! triple sampling, boosting, relation-model training, baselines, and
//! failure-rate scoring — and every random stage derives its seed from the
//! single configured seed, so a report is a pure function of its config.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baselines::{self, AnnHyper, LrHyper};
use crate::error::{Error, Result};
use crate::fewshot::{self, EmbeddingTable, LinkMetrics, MetaHyper, RelationMetaNet};
use crate::gbdt::{train_gbdt, GbdtModel, GbdtParams};
use crate::kg::{self, KgHyper, KgParams};
use crate::records::{self, TransformerRecord};
use crate::tfr::{self, TfrReport};
use crate::triples;

/// Synthetic-data settings used when no records file is configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_per_class: usize,
    pub separation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_per_class: 131,
            separation: 1.5,
        }
    }
}

/// Few-shot command settings: task support size plus the trainer's knobs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaConfig {
    pub support_size: usize,
    pub hyper: MetaHyper,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            support_size: 5,
            hyper: MetaHyper::default(),
        }
    }
}

/// The one configuration object. Unknown keys are rejected; missing keys
/// fall back to the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Records CSV to load; when absent, synthetic data is generated.
    pub records_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub synthetic: SyntheticConfig,
    /// Records per class withheld from training and scored at the end.
    pub holdout_per_class: usize,
    pub n_similar: usize,
    pub n_nonsimilar: usize,
    pub train_fraction: f64,
    pub gbdt: GbdtParams,
    pub kg: KgHyper,
    pub lr_baseline: LrHyper,
    pub ann_baseline: AnnHyper,
    pub meta: MetaConfig,
    pub tfr_threshold: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            records_path: None,
            out_dir: PathBuf::from("out"),
            seed: 7,
            synthetic: SyntheticConfig::default(),
            holdout_per_class: 10,
            n_similar: 3000,
            n_nonsimilar: 3000,
            train_fraction: 0.7,
            gbdt: GbdtParams::default(),
            kg: KgHyper::default(),
            lr_baseline: LrHyper::default(),
            ann_baseline: AnnHyper::default(),
            meta: MetaConfig::default(),
            tfr_threshold: 0.5,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<PipelineConfig> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<PipelineConfig> {
        PipelineConfig::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("config serializes");
        text.push('\n');
        text
    }

    pub fn validate(&self) -> Result<()> {
        if self.records_path.is_none() {
            if self.synthetic.n_per_class == 0 {
                return Err(Error::Argument("synthetic.n_per_class must be at least 1".into()));
            }
            if !(self.synthetic.separation.is_finite() && self.synthetic.separation >= 0.0) {
                return Err(Error::Argument("synthetic.separation must be finite and nonnegative".into()));
            }
        }
        if self.holdout_per_class == 0 {
            return Err(Error::Argument("holdout_per_class must be at least 1".into()));
        }
        if self.n_similar == 0 || self.n_nonsimilar == 0 {
            return Err(Error::Argument("triple counts must be positive".into()));
        }
        if !(self.train_fraction.is_finite() && self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Argument(format!(
                "train_fraction must lie strictly between 0 and 1, got {}",
                self.train_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.tfr_threshold) {
            return Err(Error::Argument(format!(
                "tfr_threshold must lie in [0, 1], got {}",
                self.tfr_threshold
            )));
        }
        if self.meta.support_size == 0 {
            return Err(Error::Argument("meta.support_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Mixes the master seed with a stage tag so each random stage gets its own
/// stream and inserting a stage never reshuffles the others.
fn stage_seed(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h ^ seed.wrapping_mul(0x9e3779b97f4a7c15)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub records: usize,
    pub historical: usize,
    pub holdout: usize,
    pub train_triples: usize,
    pub test_triples: usize,
}

/// Test-set relation accuracy of each trained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySummary {
    pub gbdt_kg: f64,
    pub kg_only: f64,
    pub logistic: f64,
    pub ann: f64,
}

/// Everything a run produced, embedding its own config for reproducibility.
/// The wall clock is carried for console display but kept out of the JSON so
/// repeated runs serialize identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub config: PipelineConfig,
    pub counts: RunCounts,
    pub accuracy: AccuracySummary,
    pub kg_loss: Vec<f64>,
    pub kg_ablation_loss: Vec<f64>,
    pub logistic_loss: Vec<f64>,
    pub ann_loss: Vec<f64>,
    pub tfr: TfrReport,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<RunReport> {
        Ok(serde_json::from_str(text)?)
    }
}

fn load_or_generate(config: &PipelineConfig) -> Result<Vec<TransformerRecord>> {
    match &config.records_path {
        Some(path) => records::load_records(path),
        None => records::generate_synthetic(
            config.synthetic.n_per_class,
            config.synthetic.separation,
            stage_seed(config.seed, "records"),
        ),
    }
}

/// Runs the full pipeline and writes every artifact into the configured
/// output directory: record and triple CSVs, model JSONs, loss traces, the
/// failure-rate table, and `report.json`.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunReport> {
    let started = Instant::now();
    config.validate()?;
    let seed = config.seed;

    let all_records = load_or_generate(config)?;
    let split = records::split_records(&all_records, config.holdout_per_class, stage_seed(seed, "holdout"))?;
    let historical = &split.train;

    let gbdt = train_gbdt(historical, config.gbdt)?;
    let mut crosses: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut raw: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in historical {
        crosses.insert(r.id.clone(), gbdt.feature_cross(&r.features)?);
        raw.insert(r.id.clone(), r.features.to_vec());
    }

    let sampled = triples::build_triples(historical, config.n_similar, config.n_nonsimilar, stage_seed(seed, "triples"))?;
    let dataset = triples::split_triples(&sampled, config.train_fraction, stage_seed(seed, "split"))?;

    let kg_run = kg::train_kg(&dataset.train, &crosses, config.kg, stage_seed(seed, "kg"))?;
    // Ablation: identical trainer, but entities are the raw readings instead
    // of tree-leaf indicators.
    let ablation_run = kg::train_kg(&dataset.train, &raw, config.kg, stage_seed(seed, "kg-ablation"))?;

    let train_pairs = baselines::pairize(&dataset.train, historical)?;
    let test_pairs = baselines::pairize(&dataset.test, historical)?;
    let lr_run = baselines::train_lr(&train_pairs, config.lr_baseline, stage_seed(seed, "logistic"))?;
    let ann_run = baselines::train_ann(&train_pairs, config.ann_baseline, stage_seed(seed, "ann"))?;

    let accuracy = AccuracySummary {
        gbdt_kg: kg::evaluate_accuracy(&kg_run.params, &dataset.test, &crosses)?,
        kg_only: kg::evaluate_accuracy(&ablation_run.params, &dataset.test, &raw)?,
        logistic: baselines::pair_accuracy(|x| baselines::predict_lr(&lr_run.model, x), &test_pairs)?,
        ann: baselines::pair_accuracy(|x| baselines::predict_ann(&ann_run.model, x), &test_pairs)?,
    };

    let tfr_report = tfr::score_records(&kg_run.params, &gbdt, &split.test, historical, config.tfr_threshold)?;

    let out = &config.out_dir;
    fs::create_dir_all(out)?;
    records::write_records(&out.join("historical.csv"), historical)?;
    records::write_records(&out.join("holdout.csv"), &split.test)?;
    triples::write_triples(&out.join("triples_train.csv"), &dataset.train)?;
    triples::write_triples(&out.join("triples_test.csv"), &dataset.test)?;
    gbdt.save(&out.join("gbdt.json"))?;
    kg_run.params.save(&out.join("kg.json"))?;
    ablation_run.params.save(&out.join("kg_ablation.json"))?;
    fs::write(out.join("kg_loss.csv"), kg::loss_trace_csv(&kg_run.trace))?;
    fs::write(out.join("kg_ablation_loss.csv"), kg::loss_trace_csv(&ablation_run.trace))?;
    fs::write(out.join("tfr.csv"), tfr::report_csv(&tfr_report))?;

    let mut report = RunReport {
        seed,
        config: config.clone(),
        counts: RunCounts {
            records: all_records.len(),
            historical: historical.len(),
            holdout: split.test.len(),
            train_triples: dataset.train.len(),
            test_triples: dataset.test.len(),
        },
        accuracy,
        kg_loss: kg_run.trace,
        kg_ablation_loss: ablation_run.trace,
        logistic_loss: lr_run.trace,
        ann_loss: ann_run.trace,
        tfr: tfr_report,
        wall_clock_seconds: 0.0,
    };
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    fs::write(out.join("report.json"), report.to_json())?;
    Ok(report)
}

/// Generates the configured synthetic records and writes `records.csv`.
/// Uses the same derived seed as a records-free `run`, so a later run
/// pointed at the file reproduces the in-process data exactly.
pub fn run_generate(config: &PipelineConfig) -> Result<Vec<TransformerRecord>> {
    if config.synthetic.n_per_class == 0 {
        return Err(Error::Argument("synthetic.n_per_class must be at least 1".into()));
    }
    let records = records::generate_synthetic(
        config.synthetic.n_per_class,
        config.synthetic.separation,
        stage_seed(config.seed, "records"),
    )?;
    fs::create_dir_all(&config.out_dir)?;
    records::write_records(&config.out_dir.join("records.csv"), &records)?;
    Ok(records)
}

#[derive(Serialize, Deserialize)]
struct MetaModelFile {
    net: RelationMetaNet,
    embeddings: EmbeddingTable,
}

fn meta_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("epoch,summed_query_loss\n");
    for (i, loss) in trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, loss));
    }
    out
}

/// Samples relation tasks from the historical triples, meta-trains, and
/// evaluates tail ranking over all entities. Writes `tasks.json`,
/// `meta_model.json`, `meta_loss.csv`, and `metrics.json`.
pub fn run_meta(config: &PipelineConfig) -> Result<LinkMetrics> {
    config.validate()?;
    let seed = config.seed;
    let all_records = load_or_generate(config)?;
    let split = records::split_records(&all_records, config.holdout_per_class, stage_seed(seed, "holdout"))?;
    let sampled = triples::build_triples(&split.train, config.n_similar, config.n_nonsimilar, stage_seed(seed, "triples"))?;
    let tasks = fewshot::sample_tasks(&sampled, config.meta.support_size, stage_seed(seed, "tasks"))?;
    let trained = fewshot::train_meta(&tasks, config.meta.hyper, stage_seed(seed, "meta"))?;

    let candidates: Vec<String> = trained.embeddings.vectors.keys().cloned().collect();
    let (mut hits1, mut hits5, mut mrr, mut total) = (0.0, 0.0, 0.0, 0.0);
    for task in &tasks {
        let m = fewshot::link_predict(
            &trained.embeddings,
            &trained.net,
            task,
            &candidates,
            config.meta.hyper.beta,
            config.meta.hyper.gamma,
        )?;
        let q = task.query.len() as f64;
        hits1 += m.hits1 * q;
        hits5 += m.hits5 * q;
        mrr += m.mrr * q;
        total += q;
    }
    let metrics = LinkMetrics {
        hits1: hits1 / total,
        hits5: hits5 / total,
        mrr: mrr / total,
    };

    let out = &config.out_dir;
    fs::create_dir_all(out)?;
    fs::write(out.join("tasks.json"), fewshot::tasks_to_json(&tasks))?;
    fs::write(out.join("meta_loss.csv"), meta_trace_csv(&trained.trace))?;
    let model = MetaModelFile {
        net: trained.net,
        embeddings: trained.embeddings,
    };
    fs::write(
        out.join("meta_model.json"),
        serde_json::to_string_pretty(&model).expect("meta model serializes"),
    )?;
    fs::write(out.join("metrics.json"), metrics.to_json())?;
    Ok(metrics)
}

/// Scores a records file against a previous run's stored models and
/// historical set, writing `predict.csv` into `out_dir`.
pub fn run_predict(
    model_dir: &Path,
    records_path: &Path,
    threshold: f64,
    out_dir: &Path,
) -> Result<TfrReport> {
    let gbdt = GbdtModel::load(&model_dir.join("gbdt.json"))?;
    let kg_params = KgParams::load(&model_dir.join("kg.json"))?;
    let historical = records::load_records(&model_dir.join("historical.csv"))?;
    let new_records = records::load_records(records_path)?;
    let report = tfr::score_records(&kg_params, &gbdt, &new_records, &historical, threshold)?;
    fs::create_dir_all(out_dir)?;
    fs::write(out_dir.join("predict.csv"), tfr::report_csv(&report))?;
    Ok(report)
}

/// Human-readable digest of a stored `report.json`.
pub fn report_summary(out_dir: &Path) -> Result<String> {
    let report = RunReport::from_json(&fs::read_to_string(out_dir.join("report.json"))?)?;
    let fault = report
        .tfr
        .rows
        .iter()
        .filter(|r| r.verdict == crate::records::Label::Fault)
        .count();
    let mut text = String::new();
    text.push_str(&format!("seed {}\n", report.seed));
    text.push_str(&format!(
        "records {} ({} historical, {} held out)\n",
        report.counts.records, report.counts.historical, report.counts.holdout
    ));
    text.push_str(&format!(
        "triples {} train / {} test\n",
        report.counts.train_triples, report.counts.test_triples
    ));
    text.push_str(&format!(
        "relation accuracy: gbdt+kg {:.4} | kg-only {:.4} | logistic {:.4} | ann {:.4}\n",
        report.accuracy.gbdt_kg, report.accuracy.kg_only, report.accuracy.logistic, report.accuracy.ann
    ));
    text.push_str(&format!(
        "failure-rate verdicts at threshold {}: {} fault / {} stable\n",
        report.tfr.threshold,
        fault,
        report.tfr.rows.len() - fault
    ));
    Ok(text)
}
