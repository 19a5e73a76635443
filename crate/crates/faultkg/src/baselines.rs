//! Reference classifiers over raw pair features: logistic regression and a
//! one-hidden-layer network, both fit by plain full-batch gradient descent
//! on cross-entropy. These exist for comparison, not competition — no tuning
//! machinery lives here.
//!
//! A pair sample concatenates the head record's eight readings with the
//! tail's (sixteen inputs); the target is 1.0 for `similar` pairs.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::TransformerRecord;
use crate::triples::{Relation, Triple};

/// Concatenated raw features of one record pair plus its relation target.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSample {
    pub features: Vec<f64>,
    /// 1.0 when the pair is `similar`, else 0.0.
    pub label: f64,
}

/// Gradient-descent settings for logistic regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrHyper {
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for LrHyper {
    fn default() -> Self {
        LrHyper {
            learning_rate: 0.1,
            epochs: 300,
        }
    }
}

/// Gradient-descent settings for the one-hidden-layer network.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub hidden_width: usize,
}

impl Default for AnnHyper {
    fn default() -> Self {
        AnnHyper {
            learning_rate: 0.1,
            epochs: 300,
            hidden_width: 16,
        }
    }
}

/// Logistic regression over pair features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

/// One hidden LeakyReLU layer plus a sigmoid output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnModel {
    /// hidden_width rows of input_width weights.
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub slope: f64,
}

/// Turns triples into pair samples by concatenating the endpoint records'
/// raw features. Unknown ids are reported by name.
pub fn pairize(triples: &[Triple], records: &[TransformerRecord]) -> Result<Vec<PairSample>> {
    let find = |id: &str| -> Result<&TransformerRecord> {
        records
            .iter()
            .find(|r| r.id == id)
            .ok_or_else(|| Error::Lookup(id.to_string()))
    };
    let mut samples = Vec::with_capacity(triples.len());
    for t in triples {
        let head = find(&t.head)?;
        let tail = find(&t.tail)?;
        let mut features = Vec::with_capacity(head.features.len() + tail.features.len());
        features.extend_from_slice(&head.features);
        features.extend_from_slice(&tail.features);
        samples.push(PairSample {
            features,
            label: if t.relation == Relation::Similar { 1.0 } else { 0.0 },
        });
    }
    Ok(samples)
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn leaky_relu(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        slope * z
    }
}

fn leaky_relu_grad(z: f64, slope: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Mean cross-entropy of predictions against 0/1 labels.
fn cross_entropy(probs: &[f64], samples: &[PairSample]) -> f64 {
    let mut total = 0.0;
    for (p, s) in probs.iter().zip(samples) {
        let p = p.clamp(1e-12, 1.0 - 1e-12);
        total -= s.label * p.ln() + (1.0 - s.label) * (1.0 - p).ln();
    }
    total / samples.len() as f64
}

fn check_samples(samples: &[PairSample]) -> Result<usize> {
    if samples.is_empty() {
        return Err(Error::Argument("no training samples".into()));
    }
    let width = samples[0].features.len();
    if width == 0 {
        return Err(Error::Argument("samples must have at least one feature".into()));
    }
    for s in samples {
        if s.features.len() != width {
            return Err(Error::Shape {
                context: "pair sample".into(),
                expected: width,
                actual: s.features.len(),
            });
        }
    }
    Ok(width)
}

/// A trained model plus its per-epoch cross-entropy trace (entry 0 is the
/// loss at initialization; one more entry per epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineTraining<M> {
    pub model: M,
    pub trace: Vec<f64>,
}

/// Fits logistic regression by full-batch gradient descent.
pub fn train_lr(samples: &[PairSample], hyper: LrHyper, seed: u64) -> Result<BaselineTraining<LrModel>> {
    let width = check_samples(samples)?;
    if !hyper.learning_rate.is_finite() || hyper.learning_rate <= 0.0 {
        return Err(Error::Argument("learning_rate must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = LrModel {
        weights: (0..width).map(|_| rng.random_range(-0.1..0.1)).collect(),
        bias: rng.random_range(-0.1..0.1),
    };
    let n = samples.len() as f64;
    let mut trace = Vec::with_capacity(hyper.epochs + 1);
    let probs = |m: &LrModel| -> Vec<f64> {
        samples
            .iter()
            .map(|s| sigmoid(m.weights.iter().zip(&s.features).map(|(w, x)| w * x).sum::<f64>() + m.bias))
            .collect()
    };
    trace.push(cross_entropy(&probs(&model), samples));
    for _ in 0..hyper.epochs {
        let p = probs(&model);
        let mut grad_w = vec![0.0; width];
        let mut grad_b = 0.0;
        for (pi, s) in p.iter().zip(samples) {
            let d = (pi - s.label) / n;
            for (g, x) in grad_w.iter_mut().zip(&s.features) {
                *g += d * x;
            }
            grad_b += d;
        }
        for (w, g) in model.weights.iter_mut().zip(&grad_w) {
            *w -= hyper.learning_rate * g;
        }
        model.bias -= hyper.learning_rate * grad_b;
        trace.push(cross_entropy(&probs(&model), samples));
    }
    Ok(BaselineTraining { model, trace })
}

/// Probability that a pair is `similar` under the logistic model.
pub fn predict_lr(model: &LrModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.weights.len() {
        return Err(Error::Shape {
            context: "lr features".into(),
            expected: model.weights.len(),
            actual: features.len(),
        });
    }
    Ok(sigmoid(
        model.weights.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + model.bias,
    ))
}

fn ann_forward(model: &AnnModel, features: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
    let z1: Vec<f64> = model
        .w1
        .iter()
        .zip(&model.b1)
        .map(|(row, b)| row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + b)
        .collect();
    let a1: Vec<f64> = z1.iter().map(|&z| leaky_relu(z, model.slope)).collect();
    let z2 = model.w2.iter().zip(&a1).map(|(w, a)| w * a).sum::<f64>() + model.b2;
    (z1, a1, z2)
}

/// Mean-loss gradients for the network; used by training and checked against
/// finite differences in the tests.
fn ann_gradients(
    model: &AnnModel,
    samples: &[PairSample],
) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>, f64) {
    let hidden = model.w1.len();
    let width = model.w1[0].len();
    let n = samples.len() as f64;
    let mut gw1 = vec![vec![0.0; width]; hidden];
    let mut gb1 = vec![0.0; hidden];
    let mut gw2 = vec![0.0; hidden];
    let mut gb2 = 0.0;
    for s in samples {
        let (z1, a1, z2) = ann_forward(model, &s.features);
        let p = sigmoid(z2);
        let dz2 = (p - s.label) / n;
        for h in 0..hidden {
            gw2[h] += dz2 * a1[h];
            let dz1 = dz2 * model.w2[h] * leaky_relu_grad(z1[h], model.slope);
            for (g, x) in gw1[h].iter_mut().zip(&s.features) {
                *g += dz1 * x;
            }
            gb1[h] += dz1;
        }
        gb2 += dz2;
    }
    (gw1, gb1, gw2, gb2)
}

/// Fits the one-hidden-layer network by full-batch gradient descent with
/// hand-written backpropagation.
pub fn train_ann(samples: &[PairSample], hyper: AnnHyper, seed: u64) -> Result<BaselineTraining<AnnModel>> {
    let width = check_samples(samples)?;
    if !hyper.learning_rate.is_finite() || hyper.learning_rate <= 0.0 {
        return Err(Error::Argument("learning_rate must be positive".into()));
    }
    if hyper.hidden_width == 0 {
        return Err(Error::Argument("hidden_width must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let in_scale = 1.0 / (width as f64).sqrt();
    let hid_scale = 1.0 / (hyper.hidden_width as f64).sqrt();
    let mut model = AnnModel {
        w1: (0..hyper.hidden_width)
            .map(|_| (0..width).map(|_| rng.random_range(-in_scale..in_scale)).collect())
            .collect(),
        b1: vec![0.0; hyper.hidden_width],
        w2: (0..hyper.hidden_width).map(|_| rng.random_range(-hid_scale..hid_scale)).collect(),
        b2: 0.0,
        slope: 0.01,
    };
    let probs = |m: &AnnModel| -> Vec<f64> {
        samples.iter().map(|s| sigmoid(ann_forward(m, &s.features).2)).collect()
    };
    let mut trace = Vec::with_capacity(hyper.epochs + 1);
    trace.push(cross_entropy(&probs(&model), samples));
    for _ in 0..hyper.epochs {
        let (gw1, gb1, gw2, gb2) = ann_gradients(&model, samples);
        let lr = hyper.learning_rate;
        for (row, grow) in model.w1.iter_mut().zip(&gw1) {
            for (w, g) in row.iter_mut().zip(grow) {
                *w -= lr * g;
            }
        }
        for (b, g) in model.b1.iter_mut().zip(&gb1) {
            *b -= lr * g;
        }
        for (w, g) in model.w2.iter_mut().zip(&gw2) {
            *w -= lr * g;
        }
        model.b2 -= lr * gb2;
        trace.push(cross_entropy(&probs(&model), samples));
    }
    Ok(BaselineTraining { model, trace })
}

/// Probability that a pair is `similar` under the network.
pub fn predict_ann(model: &AnnModel, features: &[f64]) -> Result<f64> {
    if model.w1.is_empty() {
        return Err(Error::Argument("network has no hidden units".into()));
    }
    if features.len() != model.w1[0].len() {
        return Err(Error::Shape {
            context: "ann features".into(),
            expected: model.w1[0].len(),
            actual: features.len(),
        });
    }
    Ok(sigmoid(ann_forward(model, features).2))
}

/// Verdict at the fixed 0.5 probability threshold; exact ties go `similar`.
pub fn relation_from_probability(p: f64) -> Relation {
    if p >= 0.5 {
        Relation::Similar
    } else {
        Relation::NonSimilar
    }
}

/// Share of samples whose 0.5-thresholded prediction matches the label.
pub fn pair_accuracy<F>(predict: F, samples: &[PairSample]) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if samples.is_empty() {
        return Err(Error::Argument("no samples to evaluate".into()));
    }
    let mut correct = 0usize;
    for s in samples {
        let p = predict(&s.features)?;
        let verdict = relation_from_probability(p);
        let truth = if s.label == 1.0 { Relation::Similar } else { Relation::NonSimilar };
        if verdict == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / samples.len() as f64)
}
