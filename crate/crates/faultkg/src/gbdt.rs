//! Gradient-boosted regression trees over the squared-error loss, plus the
//! leaf-indicator "feature crossing" used downstream.
//!
//! Training is deliberately plain: the initial score is the label mean, each
//! round fits one regression tree to the current residuals by greedy
//! variance-reduction splits, and candidate thresholds are the midpoints of
//! consecutive sorted unique feature values. Ties between equally good splits
//! go to the lowest feature index, then the lowest threshold, so a model is a
//! pure function of (records, params).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Label, TransformerRecord};

/// Boosting settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtParams {
    /// Number of boosting rounds (trees).
    pub n_trees: usize,
    /// Maximum tree depth; 0 means every tree is a single leaf.
    pub max_depth: usize,
    /// Multiplier applied to every tree's contribution, in (0, 1].
    pub shrinkage: f64,
    /// Minimum number of training rows on each side of a split.
    pub min_samples_leaf: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        GbdtParams {
            n_trees: 30,
            max_depth: 3,
            shrinkage: 0.1,
            min_samples_leaf: 2,
        }
    }
}

/// One node of a fitted regression tree.
///
/// Rows with `feature < threshold` go left, everything else right. Leaf
/// ordinals number the leaves of one tree 0..leaf_count in left-to-right
/// order; they index the tree's block of the crossed feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        value: f64,
        leaf_ordinal: usize,
    },
}

impl TreeNode {
    /// Number of leaves under this node.
    pub fn leaf_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.leaf_count() + right.leaf_count(),
        }
    }

    /// Walks a feature vector down to its leaf.
    pub fn route(&self, features: &[f64]) -> Result<&TreeNode> {
        match self {
            TreeNode::Leaf { .. } => Ok(self),
            TreeNode::Split {
                feature_index,
                threshold,
                left,
                right,
            } => {
                let value = features.get(*feature_index).ok_or_else(|| Error::Shape {
                    context: "tree routing".into(),
                    expected: *feature_index + 1,
                    actual: features.len(),
                })?;
                if *value < *threshold {
                    left.route(features)
                } else {
                    right.route(features)
                }
            }
        }
    }

    /// Regression output for one feature vector.
    pub fn evaluate(&self, features: &[f64]) -> Result<f64> {
        match self.route(features)? {
            TreeNode::Leaf { value, .. } => Ok(*value),
            TreeNode::Split { .. } => unreachable!("route always ends at a leaf"),
        }
    }

    fn leaf_ordinal_of(&self, features: &[f64]) -> Result<usize> {
        match self.route(features)? {
            TreeNode::Leaf { leaf_ordinal, .. } => Ok(*leaf_ordinal),
            TreeNode::Split { .. } => unreachable!("route always ends at a leaf"),
        }
    }
}

/// A fitted boosting ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub init_score: f64,
    pub shrinkage: f64,
    pub params: GbdtParams,
    pub trees: Vec<TreeNode>,
}

impl GbdtModel {
    /// Raw additive score: init_score + shrinkage * sum of leaf values.
    pub fn predict_raw(&self, features: &[f64]) -> Result<f64> {
        let mut score = self.init_score;
        for tree in &self.trees {
            score += self.shrinkage * tree.evaluate(features)?;
        }
        Ok(score)
    }

    /// Total number of leaves across all trees — the crossed-vector length.
    pub fn cross_dim(&self) -> usize {
        self.trees.iter().map(TreeNode::leaf_count).sum()
    }

    /// Concatenated one-hot leaf indicators: one block per tree, a single 1.0
    /// at the leaf this feature vector lands in. Exactly `n_trees` ones.
    pub fn feature_cross(&self, features: &[f64]) -> Result<Vec<f64>> {
        if self.trees.is_empty() {
            return Err(Error::Argument("no trees to cross".into()));
        }
        let mut cross = vec![0.0; self.cross_dim()];
        let mut offset = 0;
        for tree in &self.trees {
            cross[offset + tree.leaf_ordinal_of(features)?] = 1.0;
            offset += tree.leaf_count();
        }
        Ok(cross)
    }

    /// Mean squared error of the staged predictions f_0, f_1, …, f_M on the
    /// given records; entry m uses the first m trees.
    pub fn staged_mse(&self, records: &[TransformerRecord]) -> Result<Vec<f64>> {
        if records.is_empty() {
            return Err(Error::Argument("no records to evaluate".into()));
        }
        let n = records.len() as f64;
        let mut scores: Vec<f64> = vec![self.init_score; records.len()];
        let mut mse = Vec::with_capacity(self.trees.len() + 1);
        let stage_mse = |scores: &[f64]| {
            records
                .iter()
                .zip(scores)
                .map(|(r, s)| {
                    let d = label_target(r.label) - s;
                    d * d
                })
                .sum::<f64>()
                / n
        };
        mse.push(stage_mse(&scores));
        for tree in &self.trees {
            for (score, record) in scores.iter_mut().zip(records) {
                *score += self.shrinkage * tree.evaluate(&record.features)?;
            }
            mse.push(stage_mse(&scores));
        }
        Ok(mse)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gbdt model serializes")
    }

    pub fn from_json(text: &str) -> Result<GbdtModel> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<GbdtModel> {
        GbdtModel::from_json(&fs::read_to_string(path)?)
    }
}

/// Regression target for a condition label.
pub fn label_target(label: Label) -> f64 {
    match label {
        Label::Fault => 1.0,
        Label::Stable => 0.0,
    }
}

/// Mean of `targets` restricted to `idx`.
fn subset_mean(idx: &[usize], targets: &[f64]) -> f64 {
    idx.iter().map(|&i| targets[i]).sum::<f64>() / idx.len() as f64
}

/// Sum of squared deviations from the subset mean.
fn subset_sse(idx: &[usize], targets: &[f64]) -> f64 {
    let mean = subset_mean(idx, targets);
    idx.iter()
        .map(|&i| {
            let d = targets[i] - mean;
            d * d
        })
        .sum()
}

/// Best variance-reduction split for one node, or None when no candidate has
/// strictly positive gain (or none satisfies the leaf-size floor).
fn choose_split(
    idx: &[usize],
    rows: &[Vec<f64>],
    targets: &[f64],
    min_samples_leaf: usize,
) -> Option<(usize, f64)> {
    let width = rows[idx[0]].len();
    let parent_sse = subset_sse(idx, targets);
    let mut best: Option<(f64, usize, f64)> = None;
    for feature in 0..width {
        let mut values: Vec<f64> = idx.iter().map(|&i| rows[i][feature]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite features"));
        values.dedup();
        for pair in values.windows(2) {
            let threshold = (pair[0] + pair[1]) / 2.0;
            let left: Vec<usize> = idx.iter().copied().filter(|&i| rows[i][feature] < threshold).collect();
            if left.len() < min_samples_leaf || idx.len() - left.len() < min_samples_leaf {
                continue;
            }
            let right: Vec<usize> = idx.iter().copied().filter(|&i| rows[i][feature] >= threshold).collect();
            let gain = parent_sse - subset_sse(&left, targets) - subset_sse(&right, targets);
            // Strict > with (feature asc, threshold asc) iteration implements
            // the lowest-feature, lowest-threshold tie-break.
            if gain > best.map_or(0.0, |(g, _, _)| g) {
                best = Some((gain, feature, threshold));
            }
        }
    }
    best.map(|(_, feature, threshold)| (feature, threshold))
}

fn build_node(
    idx: &[usize],
    rows: &[Vec<f64>],
    targets: &[f64],
    depth_left: usize,
    min_samples_leaf: usize,
    next_ordinal: &mut usize,
) -> TreeNode {
    let split = if depth_left == 0 {
        None
    } else {
        choose_split(idx, rows, targets, min_samples_leaf)
    };
    match split {
        None => {
            let leaf = TreeNode::Leaf {
                value: subset_mean(idx, targets),
                leaf_ordinal: *next_ordinal,
            };
            *next_ordinal += 1;
            leaf
        }
        Some((feature, threshold)) => {
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| rows[i][feature] < threshold);
            let left = build_node(&left_idx, rows, targets, depth_left - 1, min_samples_leaf, next_ordinal);
            let right = build_node(&right_idx, rows, targets, depth_left - 1, min_samples_leaf, next_ordinal);
            TreeNode::Split {
                feature_index: feature,
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

/// Fits one regression tree to (rows, targets) by greedy variance reduction.
/// Exposed on its own so trees can be fitted on arbitrary-width matrices.
pub fn fit_regression_tree(
    rows: &[Vec<f64>],
    targets: &[f64],
    max_depth: usize,
    min_samples_leaf: usize,
) -> Result<TreeNode> {
    if rows.is_empty() {
        return Err(Error::Argument("cannot fit a tree on zero rows".into()));
    }
    if rows.len() != targets.len() {
        return Err(Error::Shape {
            context: "tree targets".into(),
            expected: rows.len(),
            actual: targets.len(),
        });
    }
    if min_samples_leaf == 0 {
        return Err(Error::Argument("min_samples_leaf must be at least 1".into()));
    }
    let width = rows[0].len();
    if width == 0 || rows.iter().any(|r| r.len() != width) {
        return Err(Error::Argument("rows must share one non-zero width".into()));
    }
    if rows.len() < min_samples_leaf {
        return Err(Error::Argument(format!(
            "need at least min_samples_leaf = {min_samples_leaf} rows, got {}",
            rows.len()
        )));
    }
    let idx: Vec<usize> = (0..rows.len()).collect();
    let mut next_ordinal = 0;
    Ok(build_node(&idx, rows, targets, max_depth, min_samples_leaf, &mut next_ordinal))
}

/// Trains the boosting ensemble on labeled records.
pub fn train_gbdt(records: &[TransformerRecord], params: GbdtParams) -> Result<GbdtModel> {
    if records.len() < 2 {
        return Err(Error::Argument(format!(
            "need at least 2 records to train, got {}",
            records.len()
        )));
    }
    if records.len() < params.min_samples_leaf {
        return Err(Error::Argument(format!(
            "need at least min_samples_leaf = {} records, got {}",
            params.min_samples_leaf,
            records.len()
        )));
    }
    if params.min_samples_leaf == 0 {
        return Err(Error::Argument("min_samples_leaf must be at least 1".into()));
    }
    if !params.shrinkage.is_finite() || params.shrinkage <= 0.0 || params.shrinkage > 1.0 {
        return Err(Error::Argument(format!(
            "shrinkage must lie in (0, 1], got {}",
            params.shrinkage
        )));
    }
    let first = records[0].label;
    if records.iter().all(|r| r.label == first) {
        return Err(Error::Argument(
            "training records contain a single class; need both".into(),
        ));
    }

    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.features.to_vec()).collect();
    let targets: Vec<f64> = records.iter().map(|r| label_target(r.label)).collect();
    let init_score = targets.iter().sum::<f64>() / targets.len() as f64;

    let mut scores = vec![init_score; records.len()];
    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let residuals: Vec<f64> = targets.iter().zip(&scores).map(|(y, s)| y - s).collect();
        let tree = fit_regression_tree(&rows, &residuals, params.max_depth, params.min_samples_leaf)?;
        for (score, row) in scores.iter_mut().zip(&rows) {
            *score += params.shrinkage * tree.evaluate(row)?;
        }
        trees.push(tree);
    }

    Ok(GbdtModel {
        init_score,
        shrinkage: params.shrinkage,
        params,
        trees,
    })
}
