//! End-to-end acceptance checks. Every test prints one verdict line
//! (`criterion N: PASS/FAIL — detail`) before asserting, so running this
//! target with `--nocapture` doubles as a checklist of the project's
//! headline guarantees.

use std::collections::HashSet;
use std::fs;
use std::process::Command;
use std::sync::OnceLock;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use faultkg::fewshot::{
    aggregate_meta, gradient_meta, relation_meta, sample_tasks, support_loss, task_gradients,
    train_meta, update_meta, EmbeddingTable, MetaHyper, RelationMetaNet, Task, TaskTriple,
};
use faultkg::gbdt::{fit_regression_tree, train_gbdt, GbdtParams, TreeNode};
use faultkg::kg::{kg_gradients, triple_loss, BatchItem, KgParams};
use faultkg::pipeline::{run_pipeline, PipelineConfig, RunReport};
use faultkg::records::{
    generate_synthetic, split_records, Label, RecordSplit, TransformerRecord, NUM_FEATURES,
};
use faultkg::tfr::{count_matches, tfr, MatchCounts};
use faultkg::triples::{build_triples, split_triples, Relation, Triple, TripleDataset};

fn verdict(n: usize, ok: bool, detail: &str) {
    println!("criterion {n}: {} — {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n}: {detail}");
}

#[test]
fn criterion_1_failure_rate_matches_reference_rows() {
    // Published failure-rate table, NS = 242; the two rows whose printed
    // similar-to-fault counts are internally inconsistent are restored from
    // the printed rate (and then agree with their duplicate rows).
    let rows: [(usize, usize, usize, usize, f64); 8] = [
        (82, 160, 2, 240, 0.6652),
        (180, 62, 2, 240, 0.8677),
        (184, 58, 10, 232, 0.8595),
        (197, 45, 14, 228, 0.8780),
        (179, 63, 1, 241, 0.8677),
        (177, 65, 1, 241, 0.8636),
        (197, 45, 14, 228, 0.8780),
        (177, 65, 1, 241, 0.8636),
    ];
    let mut worst = 0.0f64;
    for &(ls, ld, ss, sd, expected) in &rows {
        let counts = MatchCounts { ls, ld, ss, sd };
        let got = tfr(&counts, 242).unwrap();
        worst = worst.max((got - expected).abs());
    }
    verdict(
        1,
        worst <= 0.0005,
        &format!("8 reference rows reproduced within ±0.0005 (worst |Δ| = {worst:.6})"),
    );
}

#[test]
fn criterion_2_match_counts_partition_both_directions() {
    let records = generate_synthetic(131, 1.5, 2024).unwrap();
    let split = split_records(&records, 10, 99).unwrap();
    assert_eq!(RecordSplit::class_counts(&split.train), (121, 121));
    let gbdt = train_gbdt(&split.train, GbdtParams::default()).unwrap();
    let dim = gbdt.cross_dim();

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    let mut bad = 0;
    for i in 0..100 {
        let params = KgParams {
            w: (0..dim).map(|_| rng.random_range(0.2..1.8)).collect(),
            r_similar: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
            r_nonsimilar: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let mut features = [0.0; NUM_FEATURES];
        for f in &mut features {
            *f = rng.random_range(-0.5..1.5);
        }
        let label = if rng.random::<bool>() { Label::Fault } else { Label::Stable };
        let record = TransformerRecord::new(format!("probe_{i}"), label, features);
        let counts = count_matches(&params, &gbdt, &record, &split.train).unwrap();
        if counts.ls + counts.ld != 242 || counts.ss + counts.sd != 242 || counts.total() != 484 {
            bad += 1;
        }
    }
    verdict(
        2,
        bad == 0,
        &format!("100 random models × records: ls+ld = 242, ss+sd = 242, total = 484 ({bad} violations)"),
    );
}

/// Exhaustive midpoint enumeration with the same strict-improvement,
/// lowest-feature-then-threshold tie-break the trainer documents.
fn oracle_best_split(rows: &[Vec<f64>], targets: &[f64]) -> Option<(usize, f64, f64)> {
    let all: Vec<usize> = (0..rows.len()).collect();
    let sse = |idx: &[usize]| -> f64 {
        let mean = idx.iter().map(|&i| targets[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (targets[i] - mean).powi(2)).sum()
    };
    let parent = sse(&all);
    let mut best: Option<(usize, f64, f64)> = None;
    for feature in 0..rows[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|r| r[feature]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        values.dedup();
        for pair in values.windows(2) {
            let threshold = (pair[0] + pair[1]) / 2.0;
            let (left, right): (Vec<usize>, Vec<usize>) =
                all.iter().partition(|&&i| rows[i][feature] < threshold);
            if left.is_empty() || right.is_empty() {
                continue;
            }
            let gain = parent - sse(&left) - sse(&right);
            if gain > best.map_or(0.0, |(_, _, g)| g) {
                best = Some((feature, threshold, gain));
            }
        }
    }
    best
}

fn split_gain(rows: &[Vec<f64>], targets: &[f64], feature: usize, threshold: f64) -> f64 {
    let all: Vec<usize> = (0..rows.len()).collect();
    let sse = |idx: &[usize]| -> f64 {
        let mean = idx.iter().map(|&i| targets[i]).sum::<f64>() / idx.len() as f64;
        idx.iter().map(|&i| (targets[i] - mean).powi(2)).sum()
    };
    let (left, right): (Vec<usize>, Vec<usize>) =
        all.iter().partition(|&&i| rows[i][feature] < threshold);
    sse(&all) - sse(&left) - sse(&right)
}

#[test]
fn criterion_3_tree_oracles_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(3030);

    // (a) A depth-0 tree is exactly the target mean.
    let mut worst_leaf = 0.0f64;
    for _ in 0..10 {
        let n = rng.random_range(1..=12);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mean = targets.iter().sum::<f64>() / n as f64;
        match fit_regression_tree(&rows, &targets, 0, 1).unwrap() {
            TreeNode::Leaf { value, .. } => worst_leaf = worst_leaf.max((value - mean).abs()),
            TreeNode::Split { .. } => panic!("depth 0 must produce a leaf"),
        }
    }

    // (b) Greedy root split equals exhaustive enumeration on 50 small draws.
    let mut split_mismatches = 0;
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..2).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let oracle = oracle_best_split(&rows, &targets);
        let tree = fit_regression_tree(&rows, &targets, 1, 1).unwrap();
        match (tree, oracle) {
            (TreeNode::Leaf { .. }, None) => {}
            (TreeNode::Split { feature_index, threshold, .. }, Some((of, ot, ogain))) => {
                let gain = split_gain(&rows, &targets, feature_index, threshold);
                if feature_index != of || threshold != ot || (gain - ogain).abs() > 1e-9 {
                    split_mismatches += 1;
                }
            }
            _ => split_mismatches += 1,
        }
    }

    // (c) Training MSE never rises stage over stage.
    let mut mse_violations = 0;
    for seed in 0..20 {
        let records = generate_synthetic(15 + (seed as usize % 10), 0.8, seed).unwrap();
        let model = train_gbdt(&records, GbdtParams::default()).unwrap();
        let staged = model.staged_mse(&records).unwrap();
        assert_eq!(staged.len(), GbdtParams::default().n_trees + 1);
        if staged.windows(2).any(|w| w[1] > w[0] + 1e-12) {
            mse_violations += 1;
        }
    }

    let ok = worst_leaf <= 1e-12 && split_mismatches == 0 && mse_violations == 0;
    verdict(
        3,
        ok,
        &format!(
            "leaf-vs-mean worst |Δ| = {worst_leaf:.2e}; greedy = exhaustive on 50/50 draws ({split_mismatches} mismatches); staged MSE non-increasing in 20/20 runs ({mse_violations} violations)"
        ),
    );
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Mean hinge loss of a batch, used as the finite-difference scalar.
fn batch_loss(params: &KgParams, batch: &[(Vec<f64>, Vec<f64>, Relation)]) -> f64 {
    batch
        .iter()
        .map(|(h, t, r)| triple_loss(params, h, t, *r).unwrap())
        .sum::<f64>()
        / batch.len() as f64
}

/// Relative-error check with an absolute floor for near-zero gradients.
fn gradients_agree(analytic: f64, numeric: f64, abs_tol: f64, rel_tol: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= abs_tol || diff / analytic.abs().max(numeric.abs()).max(1e-12) <= rel_tol
}

fn check_kg_gradients(rng: &mut ChaCha8Rng) -> (usize, f64) {
    let mut accepted = 0;
    let mut attempts = 0;
    let mut worst = 0.0f64;
    while accepted < 10 && attempts < 400 {
        attempts += 1;
        let n = rng.random_range(2..6);
        let params = KgParams {
            w: (0..n).map(|_| rng.random_range(0.3..1.7)).collect(),
            r_similar: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            r_nonsimilar: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let batch: Vec<(Vec<f64>, Vec<f64>, Relation)> = (0..3)
            .map(|_| {
                let h: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let t: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let r = if rng.random() { Relation::Similar } else { Relation::NonSimilar };
                (h, t, r)
            })
            .collect();

        // Reject draws near the hinge kink or a vanishing residual norm.
        let conditioned = batch.iter().all(|(h, t, r)| {
            let e_true = faultkg::kg::score_pair(&params, h, t, *r).unwrap();
            let e_false = faultkg::kg::score_pair(&params, h, t, r.opposite()).unwrap();
            (e_true - e_false).abs() >= 1e-3 && e_true >= 1e-3 && e_false >= 1e-3
        });
        if !conditioned {
            continue;
        }

        let views: Vec<BatchItem<'_>> =
            batch.iter().map(|(h, t, r)| (h.as_slice(), t.as_slice(), *r)).collect();
        let grads = kg_gradients(&params, &views).unwrap();
        let step = 1e-6;
        let mut draw_ok = true;
        let mut probe = |get: &dyn Fn(&mut KgParams) -> &mut Vec<f64>, analytic: &[f64]| {
            for i in 0..n {
                let mut plus = params.clone();
                get(&mut plus)[i] += step;
                let mut minus = params.clone();
                get(&mut minus)[i] -= step;
                let numeric = (batch_loss(&plus, &batch) - batch_loss(&minus, &batch)) / (2.0 * step);
                let diff = (analytic[i] - numeric).abs();
                worst = worst.max(diff);
                if !gradients_agree(analytic[i], numeric, 1e-7, 1e-4) {
                    draw_ok = false;
                }
            }
        };
        probe(&|p| &mut p.w, &grads.w);
        probe(&|p| &mut p.r_similar, &grads.r_similar);
        probe(&|p| &mut p.r_nonsimilar, &grads.r_nonsimilar);
        assert!(draw_ok, "relation-model gradient mismatch, worst |Δ| = {worst:.3e}");
        accepted += 1;
    }
    (accepted, worst)
}

/// Forward pass done by hand from the public weights, also reporting how
/// close any hidden pre-activation sits to the LeakyReLU kink.
fn manual_forward(net: &RelationMetaNet, head: &[f64], tail: &[f64]) -> (Vec<f64>, f64) {
    let mut x: Vec<f64> = head.iter().chain(tail.iter()).copied().collect();
    let mut min_pre = f64::INFINITY;
    let layers = net.weights.len();
    for l in 0..layers {
        let z: Vec<f64> = net.weights[l]
            .iter()
            .zip(&net.biases[l])
            .map(|(row, b)| row.iter().zip(&x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect();
        if l + 1 < layers {
            for zi in &z {
                min_pre = min_pre.min(zi.abs());
            }
            x = z.iter().map(|&zi| if zi > 0.0 { zi } else { net.slope * zi }).collect();
        } else {
            x = z;
        }
    }
    (x, min_pre)
}

fn pair_scores(emb: &EmbeddingTable, r: &[f64], triple: &TaskTriple) -> (f64, f64) {
    let h = emb.get(&triple.head).unwrap();
    let t = emb.get(&triple.tail).unwrap();
    let neg = emb.get(triple.negative_tail.as_ref().unwrap()).unwrap();
    let dist = |to: &[f64]| -> f64 {
        let v: Vec<f64> = h.iter().zip(r).zip(to).map(|((hi, ri), ti)| hi + ri - ti).collect();
        l2(&v)
    };
    (dist(t), dist(neg))
}

/// True when every hinge margin, residual norm, and hidden pre-activation is
/// far enough from a kink for central differences to be trustworthy.
fn meta_draw_conditioned(
    net: &RelationMetaNet,
    emb: &EmbeddingTable,
    task: &Task,
    beta: f64,
    gamma: f64,
) -> bool {
    let mut min_pre = f64::INFINITY;
    let mut metas = Vec::new();
    for s in &task.support {
        let (out, pre) = manual_forward(net, emb.get(&s.head).unwrap(), emb.get(&s.tail).unwrap());
        min_pre = min_pre.min(pre);
        metas.push(out);
    }
    if min_pre < 1e-4 {
        return false;
    }
    let r = aggregate_meta(&metas).unwrap();
    let g = gradient_meta(&task.support, emb, &r, gamma).unwrap();
    let adapted = update_meta(&r, &g, beta).unwrap();
    let margin_ok = |r_vec: &[f64], triple: &TaskTriple| {
        let (pos, neg) = pair_scores(emb, r_vec, triple);
        pos >= 1e-3 && neg >= 1e-3 && (gamma + pos - neg).abs() >= 1e-3
    };
    task.support.iter().all(|s| margin_ok(&r, s)) && task.query.iter().all(|q| margin_ok(&adapted, q))
}

fn check_meta_gradients(rng: &mut ChaCha8Rng) -> (usize, f64) {
    let dim = 3;
    let (beta, gamma) = (0.3, 1.0);
    let ids: Vec<String> = (0..6).map(|i| format!("p{i}")).collect();
    let mut accepted = 0;
    let mut attempts = 0;
    let mut worst = 0.0f64;
    while accepted < 10 && attempts < 400 {
        attempts += 1;
        let net = RelationMetaNet::seeded(dim, rng);
        let mut emb = EmbeddingTable::new(dim).unwrap();
        for id in &ids {
            emb.insert(id.clone(), (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap();
        }
        let pick = |a: usize, b: usize, neg: usize| TaskTriple {
            head: ids[a].clone(),
            tail: ids[b].clone(),
            negative_tail: Some(ids[neg].clone()),
        };
        let task = Task {
            relation: Relation::Similar,
            support: vec![pick(0, 1, 2), pick(2, 3, 4)],
            query: vec![pick(1, 3, 5), pick(4, 5, 0), pick(3, 0, 1)],
        };
        if !meta_draw_conditioned(&net, &emb, &task, beta, gamma) {
            continue;
        }

        let grads = task_gradients(&net, &emb, &task, beta, gamma).unwrap();
        let loss_at = |net: &RelationMetaNet, emb: &EmbeddingTable| -> f64 {
            task_gradients(net, emb, &task, beta, gamma).unwrap().loss
        };
        let step = 1e-5;
        let mut draw_ok = true;
        let mut compare = |analytic: f64, numeric: f64| {
            worst = worst.max((analytic - numeric).abs());
            if !gradients_agree(analytic, numeric, 1e-6, 1e-3) {
                draw_ok = false;
            }
        };

        for l in 0..net.weights.len() {
            for o in 0..net.weights[l].len() {
                for i in 0..net.weights[l][o].len() {
                    let mut plus = net.clone();
                    plus.weights[l][o][i] += step;
                    let mut minus = net.clone();
                    minus.weights[l][o][i] -= step;
                    let numeric = (loss_at(&plus, &emb) - loss_at(&minus, &emb)) / (2.0 * step);
                    compare(grads.net.weights[l][o][i], numeric);
                }
                let mut plus = net.clone();
                plus.biases[l][o] += step;
                let mut minus = net.clone();
                minus.biases[l][o] -= step;
                let numeric = (loss_at(&plus, &emb) - loss_at(&minus, &emb)) / (2.0 * step);
                compare(grads.net.biases[l][o], numeric);
            }
        }
        for id in &ids {
            for k in 0..dim {
                let mut plus = emb.clone();
                plus.vectors.get_mut(id).unwrap()[k] += step;
                let mut minus = emb.clone();
                minus.vectors.get_mut(id).unwrap()[k] -= step;
                let numeric = (loss_at(&net, &plus) - loss_at(&net, &minus)) / (2.0 * step);
                let analytic = grads.embeddings.get(id).map_or(0.0, |v| v[k]);
                compare(analytic, numeric);
            }
        }
        assert!(draw_ok, "meta gradient mismatch, worst |Δ| = {worst:.3e}");
        accepted += 1;
    }
    (accepted, worst)
}

#[test]
fn criterion_4_analytic_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1414);
    let (kg_draws, kg_worst) = check_kg_gradients(&mut rng);
    let (meta_draws, meta_worst) = check_meta_gradients(&mut rng);
    let ok = kg_draws >= 10 && meta_draws >= 10;
    verdict(
        4,
        ok,
        &format!(
            "relation model: {kg_draws}/10 draws, worst |Δ| = {kg_worst:.3e} (tol 1e-4); few-shot incl. second-order path: {meta_draws}/10 draws, worst |Δ| = {meta_worst:.3e} (tol 1e-3)"
        ),
    );
}

#[test]
fn criterion_5_triple_protocol_counts_are_exact() {
    let records = generate_synthetic(121, 1.5, 31).unwrap();
    let triples = build_triples(&records, 3000, 3000, 77).unwrap();
    let unique: HashSet<&Triple> = triples.iter().collect();
    let (sim, non) = TripleDataset::relation_counts(&triples);
    let ds = split_triples(&triples, 0.7, 78).unwrap();
    let (train_sim, train_non) = TripleDataset::relation_counts(&ds.train);
    let (test_sim, test_non) = TripleDataset::relation_counts(&ds.test);

    let ok = triples.len() == 6000
        && unique.len() == 6000
        && (sim, non) == (3000, 3000)
        && ds.train.len() == 4200
        && ds.test.len() == 1800
        && (train_sim, train_non) == (2100, 2100)
        && (test_sim, test_non) == (900, 900);
    verdict(
        5,
        ok,
        &format!(
            "built {} unique {} ({sim}/{non}); split {}/{} with train {train_sim}/{train_non}, test {test_sim}/{test_non}",
            unique.len(),
            triples.len(),
            ds.train.len(),
            ds.test.len()
        ),
    );
}

/// Five full-scale default-config runs shared by criteria 6 and 7.
fn shared_runs() -> &'static Vec<RunReport> {
    static RUNS: OnceLock<Vec<RunReport>> = OnceLock::new();
    RUNS.get_or_init(|| {
        (1..=5)
            .map(|seed| {
                let dir = tempfile::tempdir().unwrap();
                let config = PipelineConfig {
                    seed,
                    out_dir: dir.path().join("out"),
                    ..PipelineConfig::default()
                };
                run_pipeline(&config).unwrap()
            })
            .collect()
    })
}

#[test]
fn criterion_6_model_ordering_across_seeds() {
    let runs = shared_runs();
    let per_seed: Vec<String> = runs
        .iter()
        .map(|r| {
            format!(
                "s{}: {:.3}/{:.3}/{:.3}/{:.3}",
                r.seed, r.accuracy.gbdt_kg, r.accuracy.kg_only, r.accuracy.logistic, r.accuracy.ann
            )
        })
        .collect();
    let crossing_wins = runs
        .iter()
        .filter(|r| r.accuracy.gbdt_kg >= r.accuracy.kg_only)
        .count();
    let kg_wins = runs
        .iter()
        .filter(|r| r.accuracy.kg_only >= r.accuracy.logistic.max(r.accuracy.ann))
        .count();
    let mean = runs.iter().map(|r| r.accuracy.gbdt_kg).sum::<f64>() / runs.len() as f64;

    let ok = crossing_wins >= 4 && kg_wins >= 4 && mean >= 0.80;
    verdict(
        6,
        ok,
        &format!(
            "accuracies gbdt+kg/kg/lr/ann per seed: {}; gbdt+kg ≥ kg in {crossing_wins}/5 (need 4), kg ≥ baselines in {kg_wins}/5 (need 4), gbdt+kg mean {mean:.4} (need ≥ 0.80)",
            per_seed.join("; ")
        ),
    );
}

#[test]
fn criterion_7_failure_rate_separates_the_holdout() {
    let runs = shared_runs();
    let mut detail = Vec::new();
    let mut seeds_ok = 0;
    for r in runs {
        let fault_hits = r
            .tfr
            .rows
            .iter()
            .filter(|row| row.id.starts_with("fault_") && row.tfr > 0.5)
            .count();
        let stable_hits = r
            .tfr
            .rows
            .iter()
            .filter(|row| row.id.starts_with("stable_") && row.tfr < 0.5)
            .count();
        if fault_hits >= 9 && stable_hits >= 9 {
            seeds_ok += 1;
        }
        detail.push(format!("s{}: {fault_hits}/10 fault, {stable_hits}/10 stable", r.seed));
    }
    verdict(
        7,
        seeds_ok >= 4,
        &format!("{}; {seeds_ok}/5 seeds separate ≥ 9/10 each way (need 4)", detail.join("; ")),
    );
}

fn toy_triples() -> Vec<Triple> {
    let similar = [(0, 1), (1, 2), (2, 0), (3, 4)];
    let nonsimilar = [(0, 3), (1, 4), (2, 5), (4, 0)];
    let mut triples = Vec::new();
    for (h, t) in similar {
        triples.push(Triple::new(format!("e{h}"), Relation::Similar, format!("e{t}")).unwrap());
    }
    for (h, t) in nonsimilar {
        triples.push(Triple::new(format!("e{h}"), Relation::NonSimilar, format!("e{t}")).unwrap());
    }
    triples
}

#[test]
fn criterion_8_fast_adaptation_and_meta_training_descend() {
    let triples = toy_triples();
    let gamma = 1.0;

    // (a) Halving the step until the support loss drops must always finish
    // within 20 halvings when the gradient is nonzero.
    let mut adaptations = 0;
    let mut vacuous = 0;
    let mut worst_halvings = 0;
    for seed in 1..=5u64 {
        let tasks = sample_tasks(&triples, 1, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        for task in &tasks {
            let net = RelationMetaNet::seeded(4, &mut rng);
            let mut emb = EmbeddingTable::new(4).unwrap();
            for id in task.entity_ids() {
                emb.insert(id, (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            }
            let metas: Vec<Vec<f64>> = task
                .support
                .iter()
                .map(|s| relation_meta(&net, emb.get(&s.head).unwrap(), emb.get(&s.tail).unwrap()).unwrap())
                .collect();
            let r = aggregate_meta(&metas).unwrap();
            let before = support_loss(&task.support, &emb, &r, gamma).unwrap();
            let g = gradient_meta(&task.support, &emb, &r, gamma).unwrap();
            if l2(&g) == 0.0 {
                vacuous += 1;
                continue;
            }
            let mut beta = 1.0;
            let mut descended = false;
            for halving in 0..=20 {
                let adapted = update_meta(&r, &g, beta).unwrap();
                if support_loss(&task.support, &emb, &adapted, gamma).unwrap() < before {
                    descended = true;
                    worst_halvings = worst_halvings.max(halving);
                    break;
                }
                beta /= 2.0;
            }
            assert!(descended, "no descent within 20 halvings (seed {seed})");
            adaptations += 1;
        }
    }

    // (b) Meta-training improves the best-so-far summed query loss.
    let hyper = MetaHyper {
        beta: 0.1,
        gamma,
        learning_rate: 0.01,
        epochs: 50,
        dim: 4,
    };
    let mut improved = 0;
    let mut traces = Vec::new();
    for seed in 1..=5u64 {
        let tasks = sample_tasks(&triples, 1, seed).unwrap();
        let run = train_meta(&tasks, hyper, seed).unwrap();
        let initial = run.trace[0];
        let best = run.trace.iter().cloned().fold(f64::INFINITY, f64::min);
        if initial > 0.0 && best < initial {
            improved += 1;
        }
        traces.push(format!("s{seed}: {initial:.4}→{best:.4}"));
    }

    let ok = adaptations > 0 && improved == 5;
    verdict(
        8,
        ok,
        &format!(
            "fast update descended in {adaptations}/{adaptations} non-vacuous cases ({vacuous} zero-gradient, worst {worst_halvings} halvings); meta-training improved in {improved}/5 seeds ({})",
            traces.join("; ")
        ),
    );
}

#[test]
fn criterion_9_repeated_runs_are_byte_identical() {
    let exe = env!("CARGO_BIN_EXE_faultkg");
    let mut payloads = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("default.json"), PipelineConfig::default().to_json()).unwrap();
        let output = Command::new(exe)
            .current_dir(dir.path())
            .args(["run", "--config", "default.json", "--seed", "7"])
            .output()
            .unwrap();
        assert!(
            output.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&output.stderr)
        );
        payloads.push(fs::read(dir.path().join("out").join("report.json")).unwrap());
    }
    let ok = payloads[0] == payloads[1];
    verdict(
        9,
        ok,
        &format!(
            "two `run --config default.json --seed 7` executions wrote identical report.json ({} bytes)",
            payloads[0].len()
        ),
    );
}
