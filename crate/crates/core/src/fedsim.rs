//! The federated orchestrator: round loop, server update with the
//! graph-guided aggregation (or the uniform-averaging baseline), parallel
//! client updates, learning-rate search, and the metrics/report outputs.
//!
//! Determinism contract: with a fixed config seed the whole experiment is
//! reproducible for any worker count. Per-(round, client) randomness comes
//! from derived streams, clients are reduced in client-id order, and the
//! server math is schedule-independent.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Aggregation, ExperimentConfig};
use crate::dataset::{SplitDataset, TrainingBatch};
use crate::error::{Error, Result};
use crate::graph::{
    add_ldp_noise, build_adjacency, global_embedding, graph_aggregate, similarity_matrix,
    UserGraph,
};
use crate::metrics::{evaluate_with_candidates, test_candidates, validation_candidates};
use crate::model::{backward, grouped_step, init_model, ClientModel, GroupRates};
use crate::rng::{stream, tag};
use crate::Embedding;

/// Ranking cutoff used throughout the evaluation protocol.
pub const EVAL_K: usize = 10;

/// Result of one server update.
pub struct ServerOutput {
    /// User-specific item embeddings, one per client.
    pub r: Vec<Embedding>,
    /// Globally shared item embedding.
    pub q_global: Embedding,
    /// Graph used this round (kept for the reduced-update-frequency variant).
    pub graph: UserGraph,
    /// Whether the graph was rebuilt this round.
    pub rebuilt: bool,
    /// Nodes that received a fallback self-loop after thresholding.
    pub repaired_nodes: usize,
}

/// Server update for round `t`. The server sees nothing but item-embedding
/// matrices: interaction data, user embeddings and score weights never cross
/// this boundary.
///
/// With graph aggregation the similarity matrix and adjacency are rebuilt
/// when `(t - 1) % graph_update_every == 0` (or no cached graph exists) and
/// reused otherwise. Nodes left without any neighbor by the threshold fall
/// back to a self-loop, so they aggregate to their own upload.
pub fn server_update(
    uploads: &[Embedding],
    cfg: &ExperimentConfig,
    cached_graph: Option<UserGraph>,
    t: usize,
) -> Result<ServerOutput> {
    match cfg.aggregation {
        Aggregation::FedAvg => {
            let q_global = global_embedding(uploads);
            let r = vec![q_global.clone(); uploads.len()];
            Ok(ServerOutput {
                r,
                q_global,
                graph: UserGraph::complete(uploads.len()),
                rebuilt: false,
                repaired_nodes: 0,
            })
        }
        Aggregation::GraphAgg => {
            let rebuild = cached_graph.is_none() || (t - 1).is_multiple_of(cfg.graph_update_every);
            let (graph, repaired_nodes) = if rebuild {
                let similarity = similarity_matrix(uploads)?;
                let mut graph = build_adjacency(&similarity, cfg.gamma);
                let repaired = graph.ensure_self_loops();
                (graph, repaired)
            } else {
                (cached_graph.expect("cache checked above"), 0)
            };
            let r = graph_aggregate(&graph, uploads, cfg.conv_layers, cfg.normalization)?;
            let q_global = global_embedding(&r);
            Ok(ServerOutput {
                r,
                q_global,
                graph,
                rebuilt: rebuild,
                repaired_nodes,
            })
        }
    }
}

/// Step rates for one mini-batch of size `b`: the batch objective is the
/// per-sample mean of the summed BCE plus the full regularizer (computed via
/// `backward` with the regularizer weight scaled by `b`), and each parameter
/// group moves at its configured multiple of `eta`.
pub fn batch_rates(cfg: &ExperimentConfig, eta: f64, n_items: usize, b: usize) -> GroupRates {
    let b = b as f64;
    GroupRates {
        score: eta / b,
        user: eta * cfg.user_lr_scale / b,
        item: eta * cfg.item_lr_scale * n_items as f64 / b,
    }
}

/// One client's local update: re-initialize the item embedding from the
/// shared global one, run `local_epochs` of mini-batch SGD on the
/// regularized objective with freshly sampled negatives, and return the
/// upload (noised when `delta > 0`) plus the mean per-sample batch loss.
#[allow(clippy::too_many_arguments)]
pub fn client_update(
    model: &mut ClientModel,
    q_global: &Embedding,
    r_i: &Embedding,
    dataset: &SplitDataset,
    user: u32,
    cfg: &ExperimentConfig,
    eta: f64,
    train_rng: &mut ChaCha8Rng,
    noise_rng: &mut ChaCha8Rng,
) -> Result<(Embedding, f64)> {
    model.item_embedding.assign(q_global);
    let n_items = dataset.n_items;
    let mut loss_sum = 0.0;
    let mut batches = 0usize;
    for _ in 0..cfg.local_epochs {
        let samples = dataset.sample_negatives(user, cfg.negatives_per_positive, train_rng)?;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(train_rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = TrainingBatch {
                items: chunk.iter().map(|&i| samples.items[i]).collect(),
                labels: chunk.iter().map(|&i| samples.labels[i]).collect(),
            };
            let b = batch.len();
            let (loss, grads) = backward(model, &batch, r_i, cfg.lambda * b as f64)?;
            grouped_step(model, &grads, &batch_rates(cfg, eta, n_items, b));
            loss_sum += loss / b as f64;
            batches += 1;
        }
    }
    let mean_loss = if batches == 0 {
        0.0
    } else {
        loss_sum / batches as f64
    };
    if !model.all_finite() {
        return Err(Error::NonFiniteUpload {
            client: user as usize,
        });
    }
    let upload = if cfg.delta > 0.0 {
        add_ldp_noise(&model.item_embedding, cfg.delta, noise_rng)
    } else {
        model.item_embedding.clone()
    };
    Ok((upload, mean_loss))
}

/// Mutable state carried across rounds for one learning-rate run.
pub struct RoundState {
    /// 1-based index of the next round to run.
    pub round: usize,
    pub clients: Vec<ClientModel>,
    /// Item embeddings uploaded at the end of the previous round; at t = 1
    /// these are the initial q_i.
    pub uploads: Vec<Embedding>,
    /// User-specific item embeddings from the last server update; at t = 1
    /// they equal the initial q_i.
    pub r: Vec<Embedding>,
    pub q_global: Embedding,
    pub cached_graph: Option<UserGraph>,
}

/// Initialize a federation: user embeddings and score weights are drawn per
/// client, while all clients start from one shared initial item embedding so
/// the round-1 relation graph is well defined.
pub fn init_state(dataset: &SplitDataset, cfg: &ExperimentConfig) -> RoundState {
    let spec = cfg.score_spec();
    let mut q0_rng = stream(cfg.seed, &[tag::INIT_GLOBAL_ITEM]);
    let q0: Embedding = Array2::from_shape_fn((dataset.n_items, cfg.dim), |_| {
        crate::rng::normal(&mut q0_rng, 0.01)
    });
    let clients: Vec<ClientModel> = (0..dataset.n_users)
        .map(|i| {
            let mut rng = stream(cfg.seed, &[tag::INIT_CLIENT, i as u64]);
            let mut model = init_model(&spec, cfg.dim, dataset.n_items, &mut rng);
            model.item_embedding.assign(&q0);
            model
        })
        .collect();
    RoundState {
        round: 1,
        uploads: vec![q0.clone(); dataset.n_users],
        r: vec![q0.clone(); dataset.n_users],
        q_global: q0,
        clients,
        cached_graph: None,
    }
}

/// Per-round record, one row of `metrics.csv`.
#[derive(Debug, Clone, Serialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub eta: f64,
    pub val_hr10: f64,
    pub val_ndcg10: f64,
    pub test_hr10: f64,
    pub test_ndcg10: f64,
    pub mean_client_loss: f64,
    pub graph_edges: usize,
    pub wall_ms: u64,
}

/// Evaluation candidate lists, fixed once per experiment seed.
pub struct EvalCandidates {
    pub validation: Vec<Vec<u32>>,
    pub test: Vec<Vec<u32>>,
}

impl EvalCandidates {
    pub fn build(dataset: &SplitDataset, cfg: &ExperimentConfig) -> Result<Self> {
        Ok(EvalCandidates {
            validation: validation_candidates(dataset, cfg.eval_negatives, cfg.seed)?,
            test: test_candidates(dataset, cfg.eval_negatives, cfg.seed)?,
        })
    }
}

#[derive(Serialize)]
struct GraphDump {
    round: usize,
    s_bar: f64,
    gamma: f64,
    edges: usize,
    repaired_nodes: usize,
    degree_histogram: std::collections::BTreeMap<usize, usize>,
}

/// Run one communication round: server update on the previous uploads, all
/// client updates in parallel (client-id order reduction), then evaluation.
pub fn run_round(
    state: &mut RoundState,
    dataset: &SplitDataset,
    cfg: &ExperimentConfig,
    eta: f64,
    eval: &EvalCandidates,
    graph_dump_dir: Option<&Path>,
) -> Result<RoundMetrics> {
    let started = Instant::now();
    let t = state.round;
    let server = server_update(&state.uploads, cfg, state.cached_graph.take(), t)?;

    let seed = cfg.seed;
    let results: Vec<(Embedding, f64)> = state
        .clients
        .par_iter_mut()
        .zip(server.r.par_iter())
        .enumerate()
        .map(|(i, (model, r_i))| {
            let mut train_rng = stream(seed, &[tag::CLIENT_ROUND, t as u64, i as u64]);
            let mut noise_rng = stream(seed, &[tag::LDP, t as u64, i as u64]);
            client_update(
                model,
                &server.q_global,
                r_i,
                dataset,
                i as u32,
                cfg,
                eta,
                &mut train_rng,
                &mut noise_rng,
            )
            .map_err(|e| Error::ClientFailed {
                client: i,
                round: t,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;

    let mut uploads = Vec::with_capacity(results.len());
    let mut loss_sum = 0.0;
    for (upload, loss) in results {
        uploads.push(upload);
        loss_sum += loss;
    }
    let mean_client_loss = loss_sum / state.clients.len() as f64;

    if server.rebuilt {
        if let Some(dir) = graph_dump_dir {
            let dump = GraphDump {
                round: t,
                s_bar: server.graph.s_bar,
                gamma: server.graph.gamma,
                edges: server.graph.edge_count(),
                repaired_nodes: server.repaired_nodes,
                degree_histogram: server.graph.degree_histogram(),
            };
            let path = dir.join(format!("graph_round_{t}.json"));
            let mut text = serde_json::to_string_pretty(&dump)?;
            text.push('\n');
            std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
        }
    }

    let graph_edges = server.graph.edge_count();
    state.uploads = uploads;
    state.r = server.r;
    state.q_global = server.q_global;
    state.cached_graph = Some(server.graph);
    state.round += 1;

    let (val_hr10, val_ndcg10) =
        evaluate_with_candidates(&state.clients, &eval.validation, EVAL_K)?;
    let (test_hr10, test_ndcg10) = evaluate_with_candidates(&state.clients, &eval.test, EVAL_K)?;

    Ok(RoundMetrics {
        round: t,
        eta,
        val_hr10,
        val_ndcg10,
        test_hr10,
        test_ndcg10,
        mean_client_loss,
        graph_edges,
        wall_ms: started.elapsed().as_millis() as u64,
    })
}

/// Extra run settings that do not affect results.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Write `graph_round_<t>.json` audit dumps here on every rebuild.
    pub graph_dump_dir: Option<std::path::PathBuf>,
}

/// Full experiment report: every per-round record for every learning rate,
/// plus the selected configuration and its test metrics.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub n_users: usize,
    pub n_items: usize,
    pub rounds: Vec<RoundMetrics>,
    pub selected_eta: f64,
    pub best_round: usize,
    pub val_hr10: f64,
    pub val_ndcg10: f64,
    pub test_hr10: f64,
    pub test_ndcg10: f64,
}

/// Run `rounds` rounds per learning rate in the grid and select by
/// validation HR@10 (ties: earlier round, then earlier grid entry). Test
/// metrics are reported at the selected learning rate's best round.
pub fn run_experiment(dataset: &SplitDataset, cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    run_experiment_with(dataset, cfg, &RunOptions::default())
}

/// Whether an error means "this learning rate diverged" rather than a
/// structural problem with the experiment.
fn is_divergence(err: &Error) -> bool {
    match err {
        Error::NonFiniteUpload { .. } | Error::NonFiniteScore { .. } => true,
        Error::ClientFailed { source, .. } => is_divergence(source),
        _ => false,
    }
}

pub fn run_experiment_with(
    dataset: &SplitDataset,
    cfg: &ExperimentConfig,
    options: &RunOptions,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let eval = EvalCandidates::build(dataset, cfg)?;
    let mut all_rounds = Vec::with_capacity(cfg.eta_grid.len() * cfg.rounds);
    let mut eligible = Vec::new(); // rows of rates that survived all rounds
    let mut best: Option<(f64, usize, usize)> = None; // (val_hr10, row index, round)

    for &eta in &cfg.eta_grid {
        let mut state = init_state(dataset, cfg);
        let start = all_rounds.len();
        let mut diverged = false;
        for _ in 0..cfg.rounds {
            match run_round(
                &mut state,
                dataset,
                cfg,
                eta,
                &eval,
                options.graph_dump_dir.as_deref(),
            ) {
                Ok(metrics) => all_rounds.push(metrics),
                // A rate that blows up loses the validation search; its
                // recorded rounds stay in the metrics stream for audit but
                // cannot be selected. A single-rate run still fails loudly.
                Err(e) if cfg.eta_grid.len() > 1 && is_divergence(&e) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !diverged {
            eligible.extend(start..all_rounds.len());
        }
    }

    for &row in &eligible {
        let metrics = &all_rounds[row];
        let better = match &best {
            None => true,
            Some((hr, _, _)) => metrics.val_hr10 > *hr,
        };
        if better {
            best = Some((metrics.val_hr10, row, metrics.round));
        }
    }

    let (_, row, best_round) = best.ok_or_else(|| {
        Error::InvalidConfig("every learning rate in the grid diverged".into())
    })?;
    let selected = &all_rounds[row];
    Ok(ExperimentReport {
        config: cfg.clone(),
        n_users: dataset.n_users,
        n_items: dataset.n_items,
        selected_eta: selected.eta,
        best_round,
        val_hr10: selected.val_hr10,
        val_ndcg10: selected.val_ndcg10,
        test_hr10: selected.test_hr10,
        test_ndcg10: selected.test_ndcg10,
        rounds: all_rounds,
    })
}

/// Serialize per-round records in the `metrics.csv` layout. Ranking metrics
/// are written in 1e-2 units with 4 decimal places.
pub fn metrics_csv(rounds: &[RoundMetrics]) -> String {
    let mut out = String::from(
        "round,eta,val_hr10,val_ndcg10,test_hr10,test_ndcg10,mean_client_loss,graph_edges,wall_ms\n",
    );
    for m in rounds {
        out.push_str(&format!(
            "{},{},{:.4},{:.4},{:.4},{:.4},{:.6},{},{}\n",
            m.round,
            m.eta,
            m.val_hr10,
            m.val_ndcg10,
            m.test_hr10,
            m.test_ndcg10,
            m.mean_client_loss,
            m.graph_edges,
            m.wall_ms
        ));
    }
    out
}

pub fn write_metrics_csv(rounds: &[RoundMetrics], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, metrics_csv(rounds))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

#[derive(Serialize)]
struct ReportJson<'a> {
    config: &'a ExperimentConfig,
    dataset: DatasetEcho,
    seed: u64,
    selected_eta: f64,
    best_round: usize,
    validation: MetricPair,
    test: MetricPair,
}

#[derive(Serialize)]
struct DatasetEcho {
    n_users: usize,
    n_items: usize,
}

#[derive(Serialize)]
struct MetricPair {
    hr10: f64,
    ndcg10: f64,
}

/// Serialize the final report (config echo, best round, test metrics).
pub fn report_json(report: &ExperimentReport) -> String {
    let blob = ReportJson {
        config: &report.config,
        dataset: DatasetEcho {
            n_users: report.n_users,
            n_items: report.n_items,
        },
        seed: report.config.seed,
        selected_eta: report.selected_eta,
        best_round: report.best_round,
        validation: MetricPair {
            hr10: report.val_hr10,
            ndcg10: report.val_ndcg10,
        },
        test: MetricPair {
            hr10: report.test_hr10,
            ndcg10: report.test_ndcg10,
        },
    };
    let mut text = serde_json::to_string_pretty(&blob).expect("report serialization");
    text.push('\n');
    text
}

pub fn write_report_json(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, report_json(report))
        .map_err(|e| Error::io(path.display().to_string(), e))
}
