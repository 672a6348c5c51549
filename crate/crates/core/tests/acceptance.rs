//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (visible with `--nocapture`).
//!
//! Criteria 1, 2, 3 and 9 run the full MovieLens-100K protocol and take
//! minutes to hours; they are `#[ignore]`d by default. Run them with:
//!
//! ```text
//! cargo test --release -p gpfedrec-core --test acceptance -- --ignored --nocapture --test-threads=1
//! ```

use std::sync::OnceLock;

use ndarray::Array2;

use gpfedrec_core::config::{Aggregation, Backbone, ExperimentConfig, Normalization};
use gpfedrec_core::dataset::{
    canonicalize, load_raw, split_leave_one_out, Interaction, RawFormat, SplitDataset,
    TrainingBatch,
};
use gpfedrec_core::fedsim::{
    init_state, metrics_csv, run_experiment, run_round, EvalCandidates, EVAL_K,
};
use gpfedrec_core::graph::{
    add_ldp_noise, build_adjacency, global_embedding, graph_aggregate, similarity_matrix,
    GraphNormalization, UserGraph,
};
use gpfedrec_core::metrics::{evaluate_with_candidates, hit_ratio_at_k, ndcg_at_k, rank_of_test};
use gpfedrec_core::model::{
    backward, bce_loss, init_model, predict, reg_loss, ClientModel, ScoreFunctionSpec,
};
use gpfedrec_core::rng::{normal, stream};
use gpfedrec_core::Embedding;

fn report(criterion: u32, pass: bool, detail: &str) {
    println!(
        "criterion {criterion}: {} - {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {criterion} failed: {detail}");
}

// ---------------------------------------------------------------------------
// MovieLens-100K plumbing for the dataset-scale criteria.

fn ml100k_path() -> std::path::PathBuf {
    match std::env::var_os("GPFEDREC_ML100K") {
        Some(p) => p.into(),
        None => std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../data/ml-100k/ratings.csv"),
    }
}

fn ml100k_dataset() -> SplitDataset {
    let path = ml100k_path();
    let records = load_raw(&path, RawFormat::Csv)
        .unwrap_or_else(|e| panic!("MovieLens-100K not readable at {}: {e}", path.display()));
    let canon = canonicalize(&records, 0).unwrap();
    assert_eq!(
        (canon.n_users, canon.n_items, canon.n_interactions()),
        (943, 1682, 100_000),
        "unexpected MovieLens-100K statistics"
    );
    assert!((canon.sparsity() * 100.0 - 93.70).abs() < 0.005);
    split_leave_one_out(canon).unwrap()
}

fn headline_config() -> ExperimentConfig {
    // The documented defaults: d = 32, MLP 32-16-8, batch 256, 4 negatives,
    // gamma = 0.5, lambda = 0.5, T = 100, eta searched on validation.
    ExperimentConfig {
        seed: 42,
        ..Default::default()
    }
}

/// Criterion 1's full run, shared with criterion 3.
fn headline_report() -> &'static gpfedrec_core::fedsim::ExperimentReport {
    static REPORT: OnceLock<gpfedrec_core::fedsim::ExperimentReport> = OnceLock::new();
    REPORT.get_or_init(|| {
        let dataset = ml100k_dataset();
        run_experiment(&dataset, &headline_config()).expect("headline experiment")
    })
}

#[test]
#[ignore = "dataset-scale run (roughly an hour); see the suite docs"]
fn criterion_1_ml100k_headline() {
    let started = std::time::Instant::now();
    let rep = headline_report();
    let pass = rep.test_hr10 >= 68.0 && rep.test_ndcg10 >= 39.0;
    report(
        1,
        pass,
        &format!(
            "ML-100K defaults: test HR@10 = {:.4} (need >= 68.0), NDCG@10 = {:.4} (need >= 39.0), \
             eta = {}, best round {}, wall {:.0}s",
            rep.test_hr10,
            rep.test_ndcg10,
            rep.selected_eta,
            rep.best_round,
            started.elapsed().as_secs_f64()
        ),
    );
}

#[test]
#[ignore = "dataset-scale run (roughly two hours); see the suite docs"]
fn criterion_2_graph_agg_beats_fed_avg() {
    let dataset = ml100k_dataset();
    let base = ExperimentConfig {
        backbone: Backbone::Mf,
        ..headline_config()
    };
    let fed_avg = ExperimentConfig {
        aggregation: Aggregation::FedAvg,
        ..base.clone()
    };
    let graph = run_experiment(&dataset, &base).expect("graph_agg run");
    let avg = run_experiment(&dataset, &fed_avg).expect("fed_avg run");
    let gap = graph.test_hr10 - avg.test_hr10;
    report(
        2,
        gap >= 2.0,
        &format!(
            "mf backbone: graph_agg HR@10 = {:.4} (eta {}), fed_avg HR@10 = {:.4} (eta {}), \
             gap = {:.4} (need >= 2.0)",
            graph.test_hr10, graph.selected_eta, avg.test_hr10, avg.selected_eta, gap
        ),
    );
}

#[test]
#[ignore = "dataset-scale run (roughly an hour on top of criterion 1); see the suite docs"]
fn criterion_3_ldp_degradation_bounded() {
    let baseline = headline_report();
    let dataset = ml100k_dataset();
    let noisy_cfg = ExperimentConfig {
        delta: 0.3,
        eta_grid: vec![baseline.selected_eta],
        ..headline_config()
    };
    let noisy = run_experiment(&dataset, &noisy_cfg).expect("ldp experiment");
    let drop = baseline.test_hr10 - noisy.test_hr10;
    report(
        3,
        drop <= 5.0,
        &format!(
            "delta = 0.3 at eta {}: HR@10 {:.4} -> {:.4}, drop = {:.4} (need <= 5.0)",
            baseline.selected_eta, baseline.test_hr10, noisy.test_hr10, drop
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: gradient oracle.

fn total_loss(model: &ClientModel, batch: &TrainingBatch, r: &Embedding, lambda: f64) -> f64 {
    let preds: Vec<f64> = batch
        .items
        .iter()
        .map(|&m| predict(model, m as usize).unwrap())
        .collect();
    let mut loss = bce_loss(&preds, &batch.labels).unwrap();
    if lambda > 0.0 {
        loss += lambda * reg_loss(&model.item_embedding, r).unwrap();
    }
    loss
}

/// Max relative error between analytic gradients and central differences
/// over every parameter of the model.
fn gradient_check(model: &ClientModel, batch: &TrainingBatch, r: &Embedding, lambda: f64) -> f64 {
    let (_, grads) = backward(model, batch, r, lambda).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut check = |analytic: f64, perturb: &mut dyn FnMut(&mut ClientModel, f64)| {
        let mut plus = model.clone();
        perturb(&mut plus, h);
        let mut minus = model.clone();
        perturb(&mut minus, -h);
        let fd = (total_loss(&plus, batch, r, lambda) - total_loss(&minus, batch, r, lambda))
            / (2.0 * h);
        let denom = analytic.abs().max(fd.abs()).max(1e-6);
        worst = worst.max((analytic - fd).abs() / denom);
    };
    for i in 0..model.user_embedding.len() {
        check(grads.user_embedding[i], &mut |m, eps| {
            m.user_embedding[i] += eps
        });
    }
    for row in 0..model.item_embedding.nrows() {
        for col in 0..model.item_embedding.ncols() {
            check(grads.item_embedding[(row, col)], &mut |m, eps| {
                m.item_embedding[(row, col)] += eps
            });
        }
    }
    for k in 0..model.layers.len() {
        let (rows, cols) = model.layers[k].weights.dim();
        for row in 0..rows {
            for col in 0..cols {
                check(grads.layers[k].0[(row, col)], &mut |m, eps| {
                    m.layers[k].weights[(row, col)] += eps
                });
            }
            check(grads.layers[k].1[row], &mut |m, eps| {
                m.layers[k].bias[row] += eps
            });
        }
    }
    worst
}

#[test]
fn criterion_4_gradient_oracle() {
    use rand::Rng;
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for seed in 0..30u64 {
        for (kind_mlp, lambda) in [(true, 0.0), (true, 0.5), (false, 0.0), (false, 0.5)] {
            let mut rng = stream(seed, &[1000]);
            let d = rng.random_range(2..=4);
            let m = rng.random_range(2..=6);
            let spec = if kind_mlp {
                ScoreFunctionSpec::mlp(vec![rng.random_range(2..=5), 3])
            } else {
                ScoreFunctionSpec::dot_product()
            };
            let mut model = init_model(&spec, d, m, &mut rng);
            // Scaled away from zero activations; random biases keep ReLU
            // pre-activations off the kink where the loss is not
            // differentiable and finite differences are meaningless.
            model.user_embedding.mapv_inplace(|v| v * 10.0 + 0.05);
            model.item_embedding.mapv_inplace(|v| v * 10.0 - 0.02);
            for layer in &mut model.layers {
                layer.bias.mapv_inplace(|_| normal(&mut rng, 0.05));
            }
            let n = rng.random_range(1..=8);
            let batch = TrainingBatch {
                items: (0..n).map(|_| rng.random_range(0..m as u32)).collect(),
                labels: (0..n)
                    .map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 })
                    .collect(),
            };
            let r = Array2::from_shape_fn((m, d), |_| normal(&mut rng, 0.3));
            worst = worst.max(gradient_check(&model, &batch, &r, lambda));
            instances += 1;
        }
    }
    report(
        4,
        worst < 1e-4 && instances >= 50,
        &format!("{instances} random instances, max relative error {worst:.3e} (need < 1e-4)"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: graph-math oracle.

fn brute_cosine(uploads: &[Embedding]) -> Vec<Vec<f64>> {
    let n = uploads.len();
    let flat: Vec<Vec<f64>> = uploads
        .iter()
        .map(|q| q.iter().copied().collect())
        .collect();
    let mut s = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let dot: f64 = flat[i].iter().zip(&flat[j]).map(|(a, b)| a * b).sum();
            let ni: f64 = flat[i].iter().map(|a| a * a).sum::<f64>().sqrt();
            let nj: f64 = flat[j].iter().map(|a| a * a).sum::<f64>().sqrt();
            s[i][j] = dot / (ni * nj);
        }
    }
    s
}

fn brute_propagate(
    graph: &UserGraph,
    uploads: &[Embedding],
    layers: usize,
    normalization: GraphNormalization,
) -> Vec<Embedding> {
    let n = uploads.len();
    let mut cur: Vec<Embedding> = uploads.to_vec();
    for _ in 0..layers {
        let mut next = vec![Array2::zeros(uploads[0].dim()); n];
        for i in 0..n {
            for j in 0..n {
                if graph.adjacency[(i, j)] == 1 {
                    next[i] = &next[i] + &cur[j];
                }
            }
            if normalization == GraphNormalization::RowNormalized && graph.degrees[i] > 0 {
                next[i] /= graph.degrees[i] as f64;
            }
        }
        cur = next;
    }
    cur
}

#[test]
fn criterion_5_graph_math_oracle() {
    use rand::Rng;
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for seed in 0..120u64 {
        let mut rng = stream(seed, &[2000]);
        let n = rng.random_range(1..=6);
        let rows = rng.random_range(1..=4);
        let cols = rng.random_range(1..=(16 / rows).min(4));
        let uploads: Vec<Embedding> = (0..n)
            .map(|_| Array2::from_shape_fn((rows, cols), |_| rng.random::<f64>() * 2.0 - 0.5))
            .collect();

        // Similarity against the scalar oracle, plus symmetry.
        let sim = similarity_matrix(&uploads).unwrap();
        let oracle = brute_cosine(&uploads);
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((sim.values[(i, j)] - oracle[i][j]).abs());
                assert_eq!(sim.values[(i, j)], sim.values[(j, i)], "exact symmetry");
            }
        }

        // Scale invariance: scaling one upload never changes S.
        let mut scaled = uploads.clone();
        let idx = rng.random_range(0..n);
        scaled[idx] = scaled[idx].mapv(|v| v * 17.25);
        let sim2 = similarity_matrix(&scaled).unwrap();
        for (a, b) in sim.values.iter().zip(sim2.values.iter()) {
            worst = worst.max((a - b).abs());
        }

        // Adjacency against the threshold rule.
        let gamma = rng.random_range(0.0..2.0);
        let graph = build_adjacency(&sim, gamma);
        let s_bar: f64 =
            oracle.iter().flatten().sum::<f64>() / (n * n) as f64;
        worst = worst.max((graph.s_bar - s_bar).abs());
        for i in 0..n {
            for j in 0..n {
                let expect = u8::from(sim.values[(i, j)] > gamma * graph.s_bar);
                assert_eq!(graph.adjacency[(i, j)], expect);
            }
        }

        // Propagation against the triple loop, both modes, l in {1, 2}.
        for layers in [1usize, 2] {
            for mode in [GraphNormalization::Vanilla, GraphNormalization::RowNormalized] {
                if mode == GraphNormalization::RowNormalized && graph.degrees.contains(&0) {
                    assert!(graph_aggregate(&graph, &uploads, layers, mode).is_err());
                    continue;
                }
                let got = graph_aggregate(&graph, &uploads, layers, mode).unwrap();
                let expect = brute_propagate(&graph, &uploads, layers, mode);
                for (g, e) in got.iter().zip(&expect) {
                    for (a, b) in g.iter().zip(e.iter()) {
                        worst = worst.max((a - b).abs());
                    }
                }

                // Global embedding against the plain mean.
                let global = global_embedding(&got);
                let mut mean: Embedding = Array2::zeros(uploads[0].dim());
                for r_i in &expect {
                    mean += r_i;
                }
                mean /= n as f64;
                for (a, b) in global.iter().zip(mean.iter()) {
                    worst = worst.max((a - b).abs());
                }
            }
        }
        instances += 1;
    }
    report(
        5,
        worst < 1e-12 && instances >= 100,
        &format!("{instances} random instances, max deviation {worst:.3e} (need < 1e-12)"),
    );
}

// ---------------------------------------------------------------------------
// Toy federations for criteria 6 and 7.

fn toy_dataset(n_users: u64, n_items: u64, per_user: usize) -> SplitDataset {
    let mut records = Vec::new();
    for u in 0..n_users {
        for k in 0..per_user {
            records.push(Interaction {
                user: u,
                item: (u * per_user as u64 + k as u64) % n_items,
                rating: 1.0,
                timestamp: k as i64,
            });
        }
    }
    let ds = split_leave_one_out(canonicalize(&records, 0).unwrap()).unwrap();
    assert_eq!(ds.n_items, n_items as usize);
    ds
}

fn toy_config() -> ExperimentConfig {
    ExperimentConfig {
        dim: 4,
        rounds: 3,
        batch_size: 16,
        negatives_per_positive: 2,
        eval_negatives: 5,
        hidden_sizes: vec![4],
        eta_grid: vec![0.01],
        seed: 11,
        ..Default::default()
    }
}

#[test]
fn criterion_6_gamma_zero_equals_fed_avg() {
    let ds = toy_dataset(5, 13, 5);
    let graph_cfg = ExperimentConfig {
        gamma: 0.0,
        normalization: Normalization::RowNormalized,
        aggregation: Aggregation::GraphAgg,
        ..toy_config()
    };
    let avg_cfg = ExperimentConfig {
        aggregation: Aggregation::FedAvg,
        ..graph_cfg.clone()
    };
    let eval = EvalCandidates::build(&ds, &graph_cfg).unwrap();
    let mut a = init_state(&ds, &graph_cfg);
    let mut b = init_state(&ds, &avg_cfg);
    let mut worst: f64 = 0.0;
    // Small enough steps that uploads stay dominated by the shared initial
    // embedding, which keeps every pairwise similarity strictly positive —
    // the premise under which gamma = 0 yields the complete graph.
    let eta = 1e-4;
    for _ in 0..graph_cfg.rounds {
        let sims = similarity_matrix(&a.uploads).unwrap();
        let min_sim = sims.values.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min_sim > 0.0, "similarities must stay positive, got {min_sim}");

        let ma = run_round(&mut a, &ds, &graph_cfg, eta, &eval, None).unwrap();
        let mb = run_round(&mut b, &ds, &avg_cfg, eta, &eval, None).unwrap();
        for (qa, qb) in a.uploads.iter().zip(&b.uploads) {
            for (x, y) in qa.iter().zip(qb.iter()) {
                worst = worst.max((x - y).abs());
            }
        }
        for (x, y) in a.q_global.iter().zip(b.q_global.iter()) {
            worst = worst.max((x - y).abs());
        }
        for (ra, rb) in a.r.iter().zip(&b.r) {
            for (x, y) in ra.iter().zip(rb.iter()) {
                worst = worst.max((x - y).abs());
            }
        }
        worst = worst.max((ma.val_hr10 - mb.val_hr10).abs());
        worst = worst.max((ma.test_hr10 - mb.test_hr10).abs());
    }
    report(
        6,
        worst < 1e-12,
        &format!(
            "gamma = 0 graph aggregation vs fed_avg over {} rounds: max state deviation {worst:.3e} \
             (need < 1e-12)",
            graph_cfg.rounds
        ),
    );
}

#[test]
fn criterion_7_workers_do_not_change_metrics() {
    let ds = toy_dataset(10, 30, 8);
    let cfg = ExperimentConfig {
        rounds: 5,
        eval_negatives: 10,
        eta_grid: vec![0.1],
        seed: 3,
        ..toy_config()
    };
    let run_with = |workers: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .unwrap();
        let report = pool.install(|| run_experiment(&ds, &cfg).unwrap());
        metrics_csv(&report.rounds)
    };
    let csv1 = run_with(1);
    let csv4 = run_with(4);
    // wall_ms is elapsed time and legitimately differs between runs; every
    // computed column must be byte-identical.
    let mask = |csv: &str| -> String {
        csv.lines()
            .map(|line| {
                let cut = line.rfind(',').unwrap();
                &line[..cut]
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let pass = mask(&csv1) == mask(&csv4);
    report(
        7,
        pass,
        "metrics.csv byte-identical between --workers 1 and --workers 4 (wall_ms column masked)",
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: metric oracles.

#[test]
fn criterion_8_metric_oracles() {
    use rand::Rng;

    // Hand examples.
    let mut ok = rank_of_test(&[(3, 0.9), (1, 0.5), (2, 0.1)], 3).unwrap() == 1;
    let ties: Vec<(u32, f64)> = (0..100).map(|i| (i, 0.4)).collect();
    ok &= rank_of_test(&ties, 0).unwrap() == 1;
    ok &= rank_of_test(&[(5, 0.9), (7, 0.8), (9, 0.7)], 7).unwrap() == 2;
    ok &= hit_ratio_at_k(10, 10) == 1 && hit_ratio_at_k(11, 10) == 0 && hit_ratio_at_k(1, 5) == 1;
    ok &= ndcg_at_k(1, 10) == 1.0 && ndcg_at_k(11, 10) == 0.0;
    ok &= (ndcg_at_k(3, 10) - 0.5).abs() < 1e-15;

    // Perfect ranker: every user's model puts its test item first.
    let ds = toy_dataset(4, 12, 5);
    let cfg = toy_config();
    let eval = EvalCandidates::build(&ds, &cfg).unwrap();
    let models: Vec<ClientModel> = (0..ds.n_users)
        .map(|u| {
            let mut m = init_model(
                &ScoreFunctionSpec::dot_product(),
                2,
                ds.n_items,
                &mut stream(5, &[u as u64]),
            );
            m.user_embedding = ndarray::array![1.0, 0.0];
            m.item_embedding.fill(-5.0);
            let test_item = eval.test[u][0] as usize;
            m.item_embedding[(test_item, 0)] = 5.0;
            m
        })
        .collect();
    let (hr, ndcg) = evaluate_with_candidates(&models, &eval.test, EVAL_K).unwrap();
    ok &= hr == 100.0 && ndcg == 100.0;

    // Single user at rank 3 with K = 10 scores (100, 50).
    let mut single = init_model(
        &ScoreFunctionSpec::dot_product(),
        1,
        5,
        &mut stream(6, &[0]),
    );
    single.user_embedding = ndarray::array![1.0];
    single.item_embedding = Array2::from_shape_vec((5, 1), vec![2.0, 1.5, 0.0, 1.0, -1.0]).unwrap();
    let (hr1, ndcg1) = evaluate_with_candidates(
        &[single],
        &[vec![3, 0, 1]], // target item 3 scores below items 0 and 1
        EVAL_K,
    )
    .unwrap();
    ok &= hr1 == 100.0 && (ndcg1 - 50.0).abs() < 1e-12;

    // Random scorer over 943 simulated users: binomial band around 0.10.
    let mut rng = stream(20260810, &[8]);
    let mut hits = 0u32;
    for _ in 0..943 {
        let scored: Vec<(u32, f64)> = (0..100).map(|i| (i, rng.random::<f64>())).collect();
        let rank = rank_of_test(&scored, 17).unwrap();
        hits += hit_ratio_at_k(rank, 10);
    }
    let rate = hits as f64 / 943.0;
    ok &= (0.07..=0.13).contains(&rate);

    report(
        8,
        ok,
        &format!("hand examples exact; random-scorer HR@10 = {rate:.4} in [0.07, 0.13]"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: gamma sweep shape.

#[test]
#[ignore = "dataset-scale run (tens of minutes); see the suite docs"]
fn criterion_9_gamma_sweep_shape() {
    let dataset = ml100k_dataset();
    let gammas = [0.0, 0.5, 1.0, 1.5, 2.0];
    let mut results = Vec::new();
    for &gamma in &gammas {
        let cfg = ExperimentConfig {
            gamma,
            rounds: 30,
            eta_grid: vec![0.1],
            ..headline_config()
        };
        let run = run_experiment(&dataset, &cfg).expect("sweep run must complete");
        println!(
            "  gamma {gamma}: best val HR@10 = {:.4}, test HR@10 = {:.4}",
            run.val_hr10, run.test_hr10
        );
        results.push((gamma, run.test_hr10));
    }
    let best = results
        .iter()
        .cloned()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
        .unwrap();
    let at_two = results.last().unwrap().1;
    let interior = best.0 > 0.0 && best.0 < 2.0;
    let pass = at_two < best.1;
    report(
        9,
        pass,
        &format!(
            "sweep completed; best HR@10 {:.4} at gamma {} ({}), gamma 2.0 gives {:.4} \
             (must be strictly below best)",
            best.1,
            best.0,
            if interior {
                "interior as expected"
            } else {
                "not interior - reported, not gating"
            },
            at_two
        ),
    );
}

// ---------------------------------------------------------------------------
// Shared-path sanity: the noise op the LDP criterion relies on.

#[test]
fn ldp_noise_moments_hold() {
    let delta = 0.3_f64;
    let q: Embedding = Array2::zeros((1000, 1000));
    let noisy = add_ldp_noise(&q, delta, &mut stream(1, &[3]));
    let n = 1_000_000.0;
    let mean = noisy.iter().sum::<f64>() / n;
    let std = (noisy.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let expected = delta * std::f64::consts::SQRT_2;
    assert!(mean.abs() <= 4.0 * expected / 1e3);
    assert!((std - expected).abs() <= 0.02 * expected);
}
