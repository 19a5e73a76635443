//! Relation classification between record pairs via translation embeddings.
//!
//! An entity is represented as `W ∘ S` — a learned weight vector applied
//! elementwise to the record's crossed (or raw) feature vector. A pair is
//! scored per relation by the L2 residual `‖h + r − t‖`, trained with the
//! margin-free hinge `max(e_true − e_false, 0)` under mini-batch Adam, and
//! classified by whichever relation vector translates the head closer to the
//! tail. Exact ties go to `similar`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamHyper, AdamState};
use crate::triples::{Relation, Triple};

/// Learned parameters: the entity weight vector and one translation vector
/// per relation, all of the same dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KgParams {
    pub w: Vec<f64>,
    pub r_similar: Vec<f64>,
    pub r_nonsimilar: Vec<f64>,
}

impl KgParams {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn relation_vector(&self, relation: Relation) -> &[f64] {
        match relation {
            Relation::Similar => &self.r_similar,
            Relation::NonSimilar => &self.r_nonsimilar,
        }
    }

    fn check_consistent(&self) -> Result<()> {
        let n = self.w.len();
        if n == 0 {
            return Err(Error::Argument("kg parameters must have dimension >= 1".into()));
        }
        for (name, v) in [("r_similar", &self.r_similar), ("r_nonsimilar", &self.r_nonsimilar)] {
            if v.len() != n {
                return Err(Error::Shape {
                    context: format!("kg parameter {name}"),
                    expected: n,
                    actual: v.len(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let file = KgParamsFile {
            n: self.w.len(),
            w: self.w.clone(),
            r_similar: self.r_similar.clone(),
            r_nonsimilar: self.r_nonsimilar.clone(),
        };
        serde_json::to_string_pretty(&file).expect("kg params serialize")
    }

    pub fn from_json(text: &str) -> Result<KgParams> {
        let file: KgParamsFile = serde_json::from_str(text)?;
        let params = KgParams {
            w: file.w,
            r_similar: file.r_similar,
            r_nonsimilar: file.r_nonsimilar,
        };
        params.check_consistent()?;
        if file.n != params.w.len() {
            return Err(Error::Shape {
                context: "kg params field `n`".into(),
                expected: params.w.len(),
                actual: file.n,
            });
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<KgParams> {
        KgParams::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct KgParamsFile {
    n: usize,
    #[serde(rename = "W")]
    w: Vec<f64>,
    r_similar: Vec<f64>,
    r_nonsimilar: Vec<f64>,
}

/// Training settings for the relation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KgHyper {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for KgHyper {
    fn default() -> Self {
        KgHyper {
            learning_rate: 0.001,
            epochs: 200,
            batch_size: 64,
        }
    }
}

/// Elementwise entity embedding `W ∘ S`.
pub fn entity_vector(w: &[f64], cross: &[f64]) -> Result<Vec<f64>> {
    if w.len() != cross.len() {
        return Err(Error::Shape {
            context: "entity vector".into(),
            expected: w.len(),
            actual: cross.len(),
        });
    }
    Ok(w.iter().zip(cross).map(|(a, b)| a * b).collect())
}

fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Translation residual `‖h + r − t‖` for one candidate relation.
pub fn score_pair(
    params: &KgParams,
    head_cross: &[f64],
    tail_cross: &[f64],
    relation: Relation,
) -> Result<f64> {
    let h = entity_vector(&params.w, head_cross)?;
    let t = entity_vector(&params.w, tail_cross)?;
    let r = params.relation_vector(relation);
    let residual: Vec<f64> = h
        .iter()
        .zip(&t)
        .zip(r)
        .map(|((hv, tv), rv)| hv + rv - tv)
        .collect();
    Ok(l2_norm(&residual))
}

/// Hinge between the true-relation score and the opposite-relation score:
/// `max(e_true − e_false, 0)`. Zero means the pair is already ordered right.
pub fn triple_loss(
    params: &KgParams,
    head_cross: &[f64],
    tail_cross: &[f64],
    true_relation: Relation,
) -> Result<f64> {
    let e_true = score_pair(params, head_cross, tail_cross, true_relation)?;
    let e_false = score_pair(params, head_cross, tail_cross, true_relation.opposite())?;
    Ok((e_true - e_false).max(0.0))
}

/// One training example: head cross, tail cross, true relation.
pub type BatchItem<'a> = (&'a [f64], &'a [f64], Relation);

/// Mean-loss subgradients over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct KgGradients {
    pub w: Vec<f64>,
    pub r_similar: Vec<f64>,
    pub r_nonsimilar: Vec<f64>,
}

/// Exact subgradients of the mean hinge loss over `batch`.
///
/// Inactive hinges (loss exactly 0) contribute nothing; a zero residual norm
/// contributes a zero direction. Both conventions make the gradient a true
/// subgradient everywhere.
pub fn kg_gradients(params: &KgParams, batch: &[BatchItem<'_>]) -> Result<KgGradients> {
    params.check_consistent()?;
    if batch.is_empty() {
        return Err(Error::Argument("gradient batch is empty".into()));
    }
    let n = params.dim();
    let mut grads = KgGradients {
        w: vec![0.0; n],
        r_similar: vec![0.0; n],
        r_nonsimilar: vec![0.0; n],
    };
    let scale = 1.0 / batch.len() as f64;
    for &(head_cross, tail_cross, relation) in batch {
        let h = entity_vector(&params.w, head_cross)?;
        let t = entity_vector(&params.w, tail_cross)?;
        let r_true = params.relation_vector(relation);
        let r_false = params.relation_vector(relation.opposite());

        let u_true: Vec<f64> = (0..n).map(|i| h[i] + r_true[i] - t[i]).collect();
        let u_false: Vec<f64> = (0..n).map(|i| h[i] + r_false[i] - t[i]).collect();
        let e_true = l2_norm(&u_true);
        let e_false = l2_norm(&u_false);
        if e_true - e_false <= 0.0 {
            continue; // hinge inactive
        }
        let unit = |v: &[f64], norm: f64| -> Vec<f64> {
            if norm == 0.0 {
                vec![0.0; n]
            } else {
                v.iter().map(|x| x / norm).collect()
            }
        };
        let u_true_hat = unit(&u_true, e_true);
        let u_false_hat = unit(&u_false, e_false);

        let (g_true, g_false) = match relation {
            Relation::Similar => (&mut grads.r_similar, &mut grads.r_nonsimilar),
            Relation::NonSimilar => (&mut grads.r_nonsimilar, &mut grads.r_similar),
        };
        for i in 0..n {
            g_true[i] += scale * u_true_hat[i];
            g_false[i] -= scale * u_false_hat[i];
            // d e / d w_i goes through both h_i and t_i: (S_h − S_t) scales it.
            let delta = head_cross[i] - tail_cross[i];
            grads.w[i] += scale * (u_true_hat[i] - u_false_hat[i]) * delta;
        }
    }
    Ok(grads)
}

/// A trained relation model plus its per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct KgTraining {
    pub params: KgParams,
    pub trace: Vec<f64>,
}

fn resolve<'a>(
    triples: &'a [Triple],
    crosses: &'a BTreeMap<String, Vec<f64>>,
) -> Result<Vec<BatchItem<'a>>> {
    let mut items = Vec::with_capacity(triples.len());
    let mut dim: Option<usize> = None;
    for t in triples {
        let head = crosses.get(&t.head).ok_or_else(|| Error::Lookup(t.head.clone()))?;
        let tail = crosses.get(&t.tail).ok_or_else(|| Error::Lookup(t.tail.clone()))?;
        for v in [head, tail] {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d == v.len() => {}
                Some(d) => {
                    return Err(Error::Shape {
                        context: "feature crosses".into(),
                        expected: d,
                        actual: v.len(),
                    })
                }
            }
        }
        items.push((head.as_slice(), tail.as_slice(), t.relation));
    }
    Ok(items)
}

/// Random init: entity weights uniform in [0.5, 1.5], relation vectors
/// uniform in [−0.5, 0.5] scaled by 1/√n.
fn init_params(n: usize, rng: &mut ChaCha8Rng) -> KgParams {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
    let bound = 0.5 / (n as f64).sqrt();
    let relation = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
    };
    let r_similar = relation(rng);
    let r_nonsimilar = relation(rng);
    KgParams { w, r_similar, r_nonsimilar }
}

fn flatten(params: &KgParams) -> Vec<f64> {
    let mut flat = Vec::with_capacity(3 * params.dim());
    flat.extend_from_slice(&params.w);
    flat.extend_from_slice(&params.r_similar);
    flat.extend_from_slice(&params.r_nonsimilar);
    flat
}

fn unflatten(flat: &[f64], n: usize) -> KgParams {
    KgParams {
        w: flat[..n].to_vec(),
        r_similar: flat[n..2 * n].to_vec(),
        r_nonsimilar: flat[2 * n..].to_vec(),
    }
}

/// Trains the relation model with shuffled mini-batch Adam. Pure function of
/// (triples, crosses, hyper, seed); the trace holds one mean loss per epoch,
/// each triple evaluated against the parameters its batch saw.
pub fn train_kg(
    train: &[Triple],
    crosses: &BTreeMap<String, Vec<f64>>,
    hyper: KgHyper,
    seed: u64,
) -> Result<KgTraining> {
    if train.is_empty() {
        return Err(Error::Argument("no training triples".into()));
    }
    if !hyper.learning_rate.is_finite() || hyper.learning_rate <= 0.0 {
        return Err(Error::Argument(format!(
            "learning_rate must be positive, got {}",
            hyper.learning_rate
        )));
    }
    if hyper.batch_size == 0 {
        return Err(Error::Argument("batch_size must be at least 1".into()));
    }
    let items = resolve(train, crosses)?;
    let n = items[0].0.len();
    if n == 0 {
        return Err(Error::Argument("feature crosses must have dimension >= 1".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = init_params(n, &mut rng);
    let mut adam = AdamState::new(3 * n, AdamHyper::with_learning_rate(hyper.learning_rate));
    let mut trace = Vec::with_capacity(hyper.epochs);

    let mut order: Vec<usize> = (0..items.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(hyper.batch_size) {
            let batch: Vec<BatchItem<'_>> = chunk.iter().map(|&i| items[i]).collect();
            for &(head, tail, relation) in &batch {
                loss_sum += {
                    let e_true = score_pair(&params, head, tail, relation)?;
                    let e_false = score_pair(&params, head, tail, relation.opposite())?;
                    (e_true - e_false).max(0.0)
                };
            }
            let grads = kg_gradients(&params, &batch)?;
            let mut flat = flatten(&params);
            let mut flat_grads = Vec::with_capacity(3 * n);
            flat_grads.extend_from_slice(&grads.w);
            flat_grads.extend_from_slice(&grads.r_similar);
            flat_grads.extend_from_slice(&grads.r_nonsimilar);
            adam.step(&mut flat, &flat_grads)?;
            params = unflatten(&flat, n);
        }
        trace.push(loss_sum / items.len() as f64);
    }

    Ok(KgTraining { params, trace })
}

/// Classifies a pair by the closer relation translation; ties go to
/// `similar`. Returns (verdict, e_similar, e_nonsimilar).
pub fn predict_relation(
    params: &KgParams,
    head_cross: &[f64],
    tail_cross: &[f64],
) -> Result<(Relation, f64, f64)> {
    let e_similar = score_pair(params, head_cross, tail_cross, Relation::Similar)?;
    let e_nonsimilar = score_pair(params, head_cross, tail_cross, Relation::NonSimilar)?;
    let verdict = if e_similar <= e_nonsimilar {
        Relation::Similar
    } else {
        Relation::NonSimilar
    };
    Ok((verdict, e_similar, e_nonsimilar))
}

/// Share of triples whose relation the model predicts correctly.
pub fn evaluate_accuracy(
    params: &KgParams,
    triples: &[Triple],
    crosses: &BTreeMap<String, Vec<f64>>,
) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::Argument("no triples to evaluate".into()));
    }
    let items = resolve(triples, crosses)?;
    let mut correct = 0usize;
    for (head, tail, relation) in items {
        let (verdict, _, _) = predict_relation(params, head, tail)?;
        if verdict == relation {
            correct += 1;
        }
    }
    Ok(correct as f64 / triples.len() as f64)
}

/// Renders a per-epoch loss trace as `epoch,mean_loss` CSV (1-based epochs).
pub fn loss_trace_csv(trace: &[f64]) -> String {
    let mut out = String::from("epoch,mean_loss\n");
    for (i, loss) in trace.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, loss));
    }
    out
}
