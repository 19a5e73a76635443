//! Few-shot relation learning over triples: a small MLP distills a relation
//! vector from the support pairs of a task, one explicit hinge-gradient step
//! adapts it, and the adapted vector is judged on the task's query pairs.
//! The outer loop trains the MLP and the entity embeddings by
//! backpropagating the query loss through that adaptation step — including
//! the second-order term, so the step itself is part of the learned map.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{AdamHyper, AdamState};
use crate::triples::{corrupt_tail, Relation, Triple};

/// Entity id → embedding, all of one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Result<EmbeddingTable> {
        if dim == 0 {
            return Err(Error::Argument("embedding dimension must be at least 1".into()));
        }
        Ok(EmbeddingTable {
            dim,
            vectors: BTreeMap::new(),
        })
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::Shape {
                context: "embedding".into(),
                expected: self.dim,
                actual: vector.len(),
            });
        }
        if vector.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("embedding entries must be finite".into()));
        }
        self.vectors.insert(id.into(), vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&Vec<f64>> {
        self.vectors.get(id).ok_or_else(|| Error::Lookup(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Fully connected net mapping a concatenated entity pair (2d inputs) to a
/// relation vector (d outputs). Hidden layers use LeakyReLU; the final layer
/// is affine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationMetaNet {
    /// weights[l][out][in]
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
    pub slope: f64,
}

impl RelationMetaNet {
    /// Three layers — two hidden of width 2d, output d — with fan-in-scaled
    /// uniform weights and zero biases.
    pub fn seeded(dim: usize, rng: &mut ChaCha8Rng) -> RelationMetaNet {
        let widths = [(2 * dim, 2 * dim), (2 * dim, 2 * dim), (2 * dim, dim)];
        let mut weights = Vec::with_capacity(widths.len());
        let mut biases = Vec::with_capacity(widths.len());
        for (fan_in, fan_out) in widths {
            let scale = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_out)
                    .map(|_| (0..fan_in).map(|_| rng.random_range(-scale..scale)).collect())
                    .collect(),
            );
            biases.push(vec![0.0; fan_out]);
        }
        RelationMetaNet {
            weights,
            biases,
            slope: 0.01,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.first().map(|w| w.first().map_or(0, Vec::len)).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, Vec::len)
    }

    /// Layer shapes must chain: every row of layer l has the width of layer
    /// l−1's output, and biases match their layer's width.
    pub fn check(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(Error::Argument("net needs matched weight and bias layers".into()));
        }
        let mut width = self.input_dim();
        if width == 0 {
            return Err(Error::Argument("net input width must be positive".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.is_empty() {
                return Err(Error::Argument(format!("layer {l} has no rows")));
            }
            for row in w {
                if row.len() != width {
                    return Err(Error::Shape {
                        context: format!("layer {l} row"),
                        expected: width,
                        actual: row.len(),
                    });
                }
            }
            if b.len() != w.len() {
                return Err(Error::Shape {
                    context: format!("layer {l} bias"),
                    expected: w.len(),
                    actual: b.len(),
                });
            }
            width = w.len();
        }
        Ok(())
    }
}

struct ForwardTrace {
    /// activations[0] is the input; activations[L] the output.
    activations: Vec<Vec<f64>>,
    /// pre[l] is layer l's affine output before any activation.
    pre: Vec<Vec<f64>>,
}

fn forward_trace(net: &RelationMetaNet, input: &[f64]) -> Result<ForwardTrace> {
    if input.len() != net.input_dim() {
        return Err(Error::Shape {
            context: "net input".into(),
            expected: net.input_dim(),
            actual: input.len(),
        });
    }
    let layers = net.weights.len();
    let mut activations = vec![input.to_vec()];
    let mut pre = Vec::with_capacity(layers);
    for l in 0..layers {
        let x = &activations[l];
        let z: Vec<f64> = net.weights[l]
            .iter()
            .zip(&net.biases[l])
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect();
        let a = if l < layers - 1 {
            z.iter().map(|&v| if v > 0.0 { v } else { net.slope * v }).collect()
        } else {
            z.clone()
        };
        pre.push(z);
        activations.push(a);
    }
    Ok(ForwardTrace { activations, pre })
}

/// Relation vector extracted from one entity pair: the net applied to the
/// concatenation head ⊕ tail.
pub fn relation_meta(net: &RelationMetaNet, head: &[f64], tail: &[f64]) -> Result<Vec<f64>> {
    if head.len() != tail.len() {
        return Err(Error::Shape {
            context: "pair embeddings".into(),
            expected: head.len(),
            actual: tail.len(),
        });
    }
    let mut input = Vec::with_capacity(head.len() * 2);
    input.extend_from_slice(head);
    input.extend_from_slice(tail);
    Ok(forward_trace(net, &input)?.activations.last().unwrap().clone())
}

/// Arithmetic mean of the per-pair relation vectors.
pub fn aggregate_meta(metas: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = metas.first().ok_or_else(|| Error::Argument("no relation vectors to aggregate".into()))?;
    let dim = first.len();
    let mut mean = vec![0.0; dim];
    for m in metas {
        if m.len() != dim {
            return Err(Error::Shape {
                context: "relation vector".into(),
                expected: dim,
                actual: m.len(),
            });
        }
        for (acc, v) in mean.iter_mut().zip(m) {
            *acc += v;
        }
    }
    for acc in &mut mean {
        *acc /= metas.len() as f64;
    }
    Ok(mean)
}

/// One positive pair of a task plus its corrupted tail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskTriple {
    pub head: String,
    pub tail: String,
    pub negative_tail: Option<String>,
}

/// A relation's few-shot episode: a small support set and a larger query set
/// sharing that relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub relation: Relation,
    pub support: Vec<TaskTriple>,
    pub query: Vec<TaskTriple>,
}

impl Task {
    pub fn check(&self) -> Result<()> {
        if self.support.is_empty() {
            return Err(Error::Argument(format!("task {} has an empty support set", self.relation)));
        }
        if self.support.len() >= self.query.len() {
            return Err(Error::Argument(format!(
                "task {}: query set ({}) must outnumber the support set ({})",
                self.relation,
                self.query.len(),
                self.support.len()
            )));
        }
        Ok(())
    }

    /// Every id the task references: heads, tails, and negative tails.
    pub fn entity_ids(&self) -> BTreeSet<String> {
        let mut ids = BTreeSet::new();
        for t in self.support.iter().chain(&self.query) {
            ids.insert(t.head.clone());
            ids.insert(t.tail.clone());
            if let Some(n) = &t.negative_tail {
                ids.insert(n.clone());
            }
        }
        ids
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// h + R − t for a stored pair.
fn residual(emb: &EmbeddingTable, head: &str, r: &[f64], tail: &str) -> Result<Vec<f64>> {
    let h = emb.get(head)?;
    let t = emb.get(tail)?;
    if r.len() != emb.dim {
        return Err(Error::Shape {
            context: "relation vector".into(),
            expected: emb.dim,
            actual: r.len(),
        });
    }
    Ok((0..emb.dim).map(|i| h[i] + r[i] - t[i]).collect())
}

fn require_negative<'a>(t: &'a TaskTriple, what: &str) -> Result<&'a String> {
    t.negative_tail.as_ref().ok_or_else(|| {
        Error::Argument(format!("{what} triple {}->{} has no negative tail", t.head, t.tail))
    })
}

fn hinge_sum(
    pairs: &[TaskTriple],
    emb: &EmbeddingTable,
    r: &[f64],
    gamma: f64,
    what: &str,
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Argument(format!("{what} set is empty")));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::Argument("margin must be finite and nonnegative".into()));
    }
    let mut total = 0.0;
    for t in pairs {
        let neg = require_negative(t, what)?;
        let s_pos = l2(&residual(emb, &t.head, r, &t.tail)?);
        let s_neg = l2(&residual(emb, &t.head, r, neg)?);
        total += (gamma + s_pos - s_neg).max(0.0);
    }
    Ok(total)
}

/// Hinge loss of the support set under relation vector `r`:
/// Σ max(0, γ + ‖h+R−t‖ − ‖h+R−t'‖).
pub fn support_loss(support: &[TaskTriple], emb: &EmbeddingTable, r: &[f64], gamma: f64) -> Result<f64> {
    hinge_sum(support, emb, r, gamma, "support")
}

/// Same hinge form evaluated on the query set (normally with the adapted
/// relation vector).
pub fn query_loss(query: &[TaskTriple], emb: &EmbeddingTable, r: &[f64], gamma: f64) -> Result<f64> {
    hinge_sum(query, emb, r, gamma, "query")
}

fn unit_or_zero(v: &[f64], norm: f64) -> Vec<f64> {
    if norm == 0.0 {
        vec![0.0; v.len()]
    } else {
        v.iter().map(|x| x / norm).collect()
    }
}

/// Subgradient of `support_loss` with respect to the relation vector: each
/// active hinge contributes û_pos − û_neg.
pub fn gradient_meta(support: &[TaskTriple], emb: &EmbeddingTable, r: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if support.is_empty() {
        return Err(Error::Argument("support set is empty".into()));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::Argument("margin must be finite and nonnegative".into()));
    }
    let mut grad = vec![0.0; r.len()];
    for t in support {
        let neg = require_negative(t, "support")?;
        let u_pos = residual(emb, &t.head, r, &t.tail)?;
        let u_neg = residual(emb, &t.head, r, neg)?;
        let (n_pos, n_neg) = (l2(&u_pos), l2(&u_neg));
        if gamma + n_pos - n_neg <= 0.0 {
            continue;
        }
        let up = unit_or_zero(&u_pos, n_pos);
        let un = unit_or_zero(&u_neg, n_neg);
        for i in 0..grad.len() {
            grad[i] += up[i] - un[i];
        }
    }
    Ok(grad)
}

/// One explicit descent step: R − β·G.
pub fn update_meta(r: &[f64], g: &[f64], beta: f64) -> Result<Vec<f64>> {
    if r.len() != g.len() {
        return Err(Error::Shape {
            context: "relation gradient".into(),
            expected: r.len(),
            actual: g.len(),
        });
    }
    Ok(r.iter().zip(g).map(|(ri, gi)| ri - beta * gi).collect())
}

/// Splits each relation's triples into K support and the remaining query
/// pairs, drawing one corrupted tail per pair. Deterministic in `seed`.
pub fn sample_tasks(triples: &[Triple], k: usize, seed: u64) -> Result<Vec<Task>> {
    if k == 0 {
        return Err(Error::Argument("support size must be at least 1".into()));
    }
    if triples.is_empty() {
        return Err(Error::Argument("no triples to build tasks from".into()));
    }
    let entities: Vec<String> = triples
        .iter()
        .flat_map(|t| [t.head.clone(), t.tail.clone()])
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let known: HashSet<Triple> = triples.iter().cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tasks = Vec::new();
    for relation in [Relation::Similar, Relation::NonSimilar] {
        let group: Vec<&Triple> = triples.iter().filter(|t| t.relation == relation).collect();
        if group.is_empty() {
            continue;
        }
        if group.len() <= k {
            return Err(Error::Argument(format!(
                "relation {relation} has {} triples; support size {k} leaves no query set",
                group.len()
            )));
        }
        if group.len() <= 2 * k {
            return Err(Error::Argument(format!(
                "relation {relation} has {} triples; query set must outnumber a support of {k}",
                group.len()
            )));
        }
        let mut order: Vec<usize> = (0..group.len()).collect();
        order.shuffle(&mut rng);
        let mut support_idx = order[..k].to_vec();
        let mut query_idx = order[k..].to_vec();
        support_idx.sort_unstable();
        query_idx.sort_unstable();
        let with_negative = |idx: &[usize], rng: &mut ChaCha8Rng| -> Result<Vec<TaskTriple>> {
            idx.iter()
                .map(|&i| {
                    let corrupted = corrupt_tail(group[i], &entities, &known, rng.random())?;
                    Ok(TaskTriple {
                        head: group[i].head.clone(),
                        tail: group[i].tail.clone(),
                        negative_tail: Some(corrupted.tail),
                    })
                })
                .collect()
        };
        tasks.push(Task {
            relation,
            support: with_negative(&support_idx, &mut rng)?,
            query: with_negative(&query_idx, &mut rng)?,
        });
    }
    Ok(tasks)
}

/// Outer-loop settings. `beta` scales the fast adaptation step, `gamma` is
/// the hinge margin, `dim` the embedding width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaHyper {
    pub beta: f64,
    pub gamma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub dim: usize,
}

impl Default for MetaHyper {
    fn default() -> Self {
        MetaHyper {
            beta: 1.0,
            gamma: 1.0,
            learning_rate: 0.001,
            epochs: 100,
            dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaTraining {
    pub net: RelationMetaNet,
    pub embeddings: EmbeddingTable,
    /// Summed query loss across tasks, one entry per epoch.
    pub trace: Vec<f64>,
}

/// Loss gradients shaped like a [`RelationMetaNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub weights: Vec<Vec<Vec<f64>>>,
    pub biases: Vec<Vec<f64>>,
}

impl NetGrads {
    fn zeros_like(net: &RelationMetaNet) -> NetGrads {
        NetGrads {
            weights: net
                .weights
                .iter()
                .map(|layer| layer.iter().map(|row| vec![0.0; row.len()]).collect())
                .collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

/// Backpropagates `upstream` (d loss / d output) through one recorded
/// forward pass, accumulating into `grads` and returning d loss / d input.
fn net_backward(net: &RelationMetaNet, trace: &ForwardTrace, upstream: &[f64], grads: &mut NetGrads) -> Vec<f64> {
    let layers = net.weights.len();
    let mut g = upstream.to_vec();
    for l in (0..layers).rev() {
        let dz: Vec<f64> = if l < layers - 1 {
            g.iter()
                .zip(&trace.pre[l])
                .map(|(gi, &z)| gi * if z > 0.0 { 1.0 } else { net.slope })
                .collect()
        } else {
            g.clone()
        };
        let x = &trace.activations[l];
        for (row_g, dzi) in grads.weights[l].iter_mut().zip(&dz) {
            for (wg, xi) in row_g.iter_mut().zip(x) {
                *wg += dzi * xi;
            }
        }
        for (bg, dzi) in grads.biases[l].iter_mut().zip(&dz) {
            *bg += dzi;
        }
        let mut next = vec![0.0; x.len()];
        for (dzi, row) in dz.iter().zip(&net.weights[l]) {
            for (ni, w) in next.iter_mut().zip(row) {
                *ni += dzi * w;
            }
        }
        g = next;
    }
    g
}

/// (w − û(û·w))/‖u‖ — the action of the unit-vector Jacobian on `w`, zero
/// when the residual itself is zero.
fn unit_jacobian_apply(u: &[f64], norm: f64, w: &[f64]) -> Vec<f64> {
    if norm == 0.0 {
        return vec![0.0; w.len()];
    }
    let dot: f64 = u.iter().zip(w).map(|(a, b)| a * b).sum();
    let scale = dot / (norm * norm);
    u.iter().zip(w).map(|(ui, wi)| (wi - ui * scale) / norm).collect()
}

/// One task's query loss and its full gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGradients {
    pub loss: f64,
    pub net: NetGrads,
    pub embeddings: BTreeMap<String, Vec<f64>>,
}

fn add_vec(map: &mut BTreeMap<String, Vec<f64>>, id: &str, delta: &[f64], sign: f64) {
    let slot = map.entry(id.to_string()).or_insert_with(|| vec![0.0; delta.len()]);
    for (s, d) in slot.iter_mut().zip(delta) {
        *s += sign * d;
    }
}

/// Full gradient of one task's query loss — through the query hinges, the
/// adaptation step (second-order term included), and the support forward
/// passes — with respect to the net and every touched embedding.
pub fn task_gradients(
    net: &RelationMetaNet,
    emb: &EmbeddingTable,
    task: &Task,
    beta: f64,
    gamma: f64,
) -> Result<TaskGradients> {
    task.check()?;
    let d = emb.dim;

    // Support forward passes, kept for the backward sweep.
    let mut traces = Vec::with_capacity(task.support.len());
    let mut metas = Vec::with_capacity(task.support.len());
    for t in &task.support {
        let h = emb.get(&t.head)?;
        let tl = emb.get(&t.tail)?;
        let mut input = Vec::with_capacity(2 * d);
        input.extend_from_slice(h);
        input.extend_from_slice(tl);
        let trace = forward_trace(net, &input)?;
        metas.push(trace.activations.last().unwrap().clone());
        traces.push(trace);
    }
    let r = aggregate_meta(&metas)?;

    // Support residual geometry at the unadapted relation vector.
    struct Geom {
        u_pos: Vec<f64>,
        n_pos: f64,
        u_neg: Vec<f64>,
        n_neg: f64,
        active: bool,
    }
    let mut geoms = Vec::with_capacity(task.support.len());
    let mut g = vec![0.0; d];
    for t in &task.support {
        let neg = require_negative(t, "support")?;
        let u_pos = residual(emb, &t.head, &r, &t.tail)?;
        let u_neg = residual(emb, &t.head, &r, neg)?;
        let (n_pos, n_neg) = (l2(&u_pos), l2(&u_neg));
        let active = gamma + n_pos - n_neg > 0.0;
        if active {
            let up = unit_or_zero(&u_pos, n_pos);
            let un = unit_or_zero(&u_neg, n_neg);
            for i in 0..d {
                g[i] += up[i] - un[i];
            }
        }
        geoms.push(Geom {
            u_pos,
            n_pos,
            u_neg,
            n_neg,
            active,
        });
    }
    let r_prime = update_meta(&r, &g, beta)?;

    // Query loss, its gradient w against the adapted vector, and the direct
    // query-embedding gradients.
    let mut emb_grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut w = vec![0.0; d];
    let mut loss = 0.0;
    for t in &task.query {
        let neg = require_negative(t, "query")?;
        let u_pos = residual(emb, &t.head, &r_prime, &t.tail)?;
        let u_neg = residual(emb, &t.head, &r_prime, neg)?;
        let (n_pos, n_neg) = (l2(&u_pos), l2(&u_neg));
        let margin = gamma + n_pos - n_neg;
        if margin <= 0.0 {
            continue;
        }
        loss += margin;
        let up = unit_or_zero(&u_pos, n_pos);
        let un = unit_or_zero(&u_neg, n_neg);
        for i in 0..d {
            w[i] += up[i] - un[i];
        }
        add_vec(&mut emb_grads, &t.head, &up, 1.0);
        add_vec(&mut emb_grads, &t.head, &un, -1.0);
        add_vec(&mut emb_grads, &t.tail, &up, -1.0);
        add_vec(&mut emb_grads, neg, &un, 1.0);
    }

    // dL/dR = w − β·H·w, where H sums the active support hinges' residual
    // curvature; the same per-hinge terms give the adaptation step's direct
    // pull on the support embeddings.
    let mut hw = vec![0.0; d];
    for (t, geom) in task.support.iter().zip(&geoms) {
        if !geom.active {
            continue;
        }
        let pw = unit_jacobian_apply(&geom.u_pos, geom.n_pos, &w);
        let nw = unit_jacobian_apply(&geom.u_neg, geom.n_neg, &w);
        for i in 0..d {
            hw[i] += pw[i] - nw[i];
        }
        let neg = require_negative(t, "support")?;
        add_vec(&mut emb_grads, &t.head, &pw, -beta);
        add_vec(&mut emb_grads, &t.head, &nw, beta);
        add_vec(&mut emb_grads, &t.tail, &pw, beta);
        add_vec(&mut emb_grads, neg, &nw, -beta);
    }
    let dr: Vec<f64> = w.iter().zip(&hw).map(|(wi, hwi)| wi - beta * hwi).collect();

    // The mean over support pairs routes dR/K through each forward pass.
    let upstream: Vec<f64> = dr.iter().map(|v| v / task.support.len() as f64).collect();
    let mut net_grads = NetGrads::zeros_like(net);
    for (t, trace) in task.support.iter().zip(&traces) {
        let input_grad = net_backward(net, trace, &upstream, &mut net_grads);
        add_vec(&mut emb_grads, &t.head, &input_grad[..d], 1.0);
        add_vec(&mut emb_grads, &t.tail, &input_grad[d..], 1.0);
    }

    Ok(TaskGradients {
        loss,
        net: net_grads,
        embeddings: emb_grads,
    })
}

fn flat_len(net: &RelationMetaNet, emb: &EmbeddingTable) -> usize {
    let net_len: usize = net
        .weights
        .iter()
        .zip(&net.biases)
        .map(|(w, b)| w.iter().map(Vec::len).sum::<usize>() + b.len())
        .sum();
    net_len + emb.len() * emb.dim
}

fn write_flat(net: &RelationMetaNet, emb: &EmbeddingTable, out: &mut Vec<f64>) {
    out.clear();
    for (w, b) in net.weights.iter().zip(&net.biases) {
        for row in w {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(b);
    }
    for v in emb.vectors.values() {
        out.extend_from_slice(v);
    }
}

fn read_flat(flat: &[f64], net: &mut RelationMetaNet, emb: &mut EmbeddingTable) {
    let mut it = flat.iter();
    for (w, b) in net.weights.iter_mut().zip(&mut net.biases) {
        for row in w {
            for x in row {
                *x = *it.next().expect("flat vector too short");
            }
        }
        for x in b {
            *x = *it.next().expect("flat vector too short");
        }
    }
    for v in emb.vectors.values_mut() {
        for x in v {
            *x = *it.next().expect("flat vector too short");
        }
    }
    assert!(it.next().is_none(), "flat vector too long");
}

fn write_flat_grads(task: &TaskGradients, emb: &EmbeddingTable, out: &mut Vec<f64>) {
    out.clear();
    for (w, b) in task.net.weights.iter().zip(&task.net.biases) {
        for row in w {
            out.extend_from_slice(row);
        }
        out.extend_from_slice(b);
    }
    for id in emb.vectors.keys() {
        match task.embeddings.get(id) {
            Some(g) => out.extend_from_slice(g),
            None => out.extend(std::iter::repeat(0.0).take(emb.dim)),
        }
    }
}

/// Meta-trains from explicit starting tables; `hyper.dim` is ignored in
/// favor of the embeddings' own width.
pub fn train_meta_from(
    mut net: RelationMetaNet,
    mut embeddings: EmbeddingTable,
    tasks: &[Task],
    hyper: MetaHyper,
) -> Result<MetaTraining> {
    if tasks.is_empty() {
        return Err(Error::Argument("no tasks to train on".into()));
    }
    net.check()?;
    if net.input_dim() != 2 * embeddings.dim || net.output_dim() != embeddings.dim {
        return Err(Error::Shape {
            context: "net width for embedding dimension".into(),
            expected: 2 * embeddings.dim,
            actual: net.input_dim(),
        });
    }
    if !(hyper.beta.is_finite() && hyper.beta >= 0.0) {
        return Err(Error::Argument("adaptation step must be finite and nonnegative".into()));
    }
    for task in tasks {
        task.check()?;
    }
    let mut adam = AdamState::new(
        flat_len(&net, &embeddings),
        AdamHyper::with_learning_rate(hyper.learning_rate),
    );
    let mut params = Vec::new();
    let mut grads = Vec::new();
    let mut trace = Vec::with_capacity(hyper.epochs);
    for epoch in 1..=hyper.epochs {
        let mut epoch_loss = 0.0;
        for (ti, task) in tasks.iter().enumerate() {
            let tg = task_gradients(&net, &embeddings, task, hyper.beta, hyper.gamma)?;
            if !tg.loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "epoch {epoch}, task {ti} ({}): query loss is not finite",
                    task.relation
                )));
            }
            epoch_loss += tg.loss;
            write_flat(&net, &embeddings, &mut params);
            write_flat_grads(&tg, &embeddings, &mut grads);
            adam.step(&mut params, &grads)?;
            read_flat(&params, &mut net, &mut embeddings);
        }
        trace.push(epoch_loss);
    }
    Ok(MetaTraining {
        net,
        embeddings,
        trace,
    })
}

/// Meta-trains from seeded random tables covering every entity the tasks
/// mention.
pub fn train_meta(tasks: &[Task], hyper: MetaHyper, seed: u64) -> Result<MetaTraining> {
    if tasks.is_empty() {
        return Err(Error::Argument("no tasks to train on".into()));
    }
    if hyper.dim == 0 {
        return Err(Error::Argument("embedding dimension must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = RelationMetaNet::seeded(hyper.dim, &mut rng);
    let mut ids = BTreeSet::new();
    for task in tasks {
        ids.extend(task.entity_ids());
    }
    let mut embeddings = EmbeddingTable::new(hyper.dim)?;
    let scale = 0.5 / (hyper.dim as f64).sqrt();
    for id in ids {
        let v: Vec<f64> = (0..hyper.dim).map(|_| rng.random_range(-scale..scale)).collect();
        embeddings.insert(id, v)?;
    }
    train_meta_from(net, embeddings, tasks, hyper)
}

/// Rank-based quality of tail prediction on a task's query set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub hits1: f64,
    pub hits5: f64,
    pub mrr: f64,
}

impl LinkMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Scores every candidate tail for each query pair with the task-adapted
/// relation vector and reports hits@1, hits@5, and mean reciprocal rank.
/// Score ties rank by candidate id.
pub fn link_predict(
    emb: &EmbeddingTable,
    net: &RelationMetaNet,
    task: &Task,
    candidates: &[String],
    beta: f64,
    gamma: f64,
) -> Result<LinkMetrics> {
    if task.support.is_empty() || task.query.is_empty() {
        return Err(Error::Argument("link prediction needs nonempty support and query sets".into()));
    }
    let candidates: BTreeSet<&String> = candidates.iter().collect();
    if candidates.is_empty() {
        return Err(Error::Argument("no candidate tails".into()));
    }
    let mut metas = Vec::with_capacity(task.support.len());
    for t in &task.support {
        metas.push(relation_meta(net, emb.get(&t.head)?, emb.get(&t.tail)?)?);
    }
    let r = aggregate_meta(&metas)?;
    let g = gradient_meta(&task.support, emb, &r, gamma)?;
    let r_prime = update_meta(&r, &g, beta)?;

    let mut hits1 = 0.0;
    let mut hits5 = 0.0;
    let mut mrr = 0.0;
    for q in &task.query {
        if !candidates.contains(&q.tail) {
            return Err(Error::Argument(format!(
                "true tail {} is not among the candidates",
                q.tail
            )));
        }
        let true_score = l2(&residual(emb, &q.head, &r_prime, &q.tail)?);
        let mut rank = 1usize;
        for &c in &candidates {
            if *c == q.tail {
                continue;
            }
            let s = l2(&residual(emb, &q.head, &r_prime, c)?);
            if s < true_score || (s == true_score && c.as_str() < q.tail.as_str()) {
                rank += 1;
            }
        }
        if rank == 1 {
            hits1 += 1.0;
        }
        if rank <= 5 {
            hits5 += 1.0;
        }
        mrr += 1.0 / rank as f64;
    }
    let n = task.query.len() as f64;
    Ok(LinkMetrics {
        hits1: hits1 / n,
        hits5: hits5 / n,
        mrr: mrr / n,
    })
}

/// Serializes tasks as `{relation, support, query}` with plain
/// head/relation/tail triples.
pub fn tasks_to_json(tasks: &[Task]) -> String {
    let rows: Vec<serde_json::Value> = tasks
        .iter()
        .map(|task| {
            let side = |pairs: &[TaskTriple]| -> Vec<serde_json::Value> {
                pairs
                    .iter()
                    .map(|t| {
                        serde_json::json!({
                            "head": t.head,
                            "relation": task.relation.as_str(),
                            "tail": t.tail,
                        })
                    })
                    .collect()
            };
            serde_json::json!({
                "relation": task.relation.as_str(),
                "support": side(&task.support),
                "query": side(&task.query),
            })
        })
        .collect();
    serde_json::to_string_pretty(&rows).expect("task serialize")
}
