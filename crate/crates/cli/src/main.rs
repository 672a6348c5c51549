//! Operator surface: `prepare` canonicalizes a raw rating file and writes
//! the split manifest, `train` runs one experiment, `sweep` repeats it over
//! a hyperparameter grid.

mod config_file;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gpfedrec_core::dataset::{canonicalize, load_raw, split_leave_one_out, RawFormat, SplitManifest};
use gpfedrec_core::fedsim::{
    run_experiment_with, write_metrics_csv, write_report_json, ExperimentReport, RunOptions,
};
use gpfedrec_core::ExperimentConfig;

use config_file::{parse_list, ConfigFile};

#[derive(Parser)]
#[command(
    name = "gpfedrec",
    about = "Graph-guided personalized federated recommendation simulator",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Canonicalize a raw rating file and write dataset.csv + split.json.
    Prepare(PrepareArgs),
    /// Run a federated training experiment; writes metrics.csv + report.json.
    Train(TrainArgs),
    /// Run one experiment per value of a swept hyperparameter.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Raw rating file.
    #[arg(long)]
    input: PathBuf,
    /// Input layout: tab_separated, double_colon or csv.
    #[arg(long, default_value = "csv")]
    format: String,
    /// Drop users with fewer interactions than this.
    #[arg(long, default_value_t = 0)]
    min_interactions: usize,
    /// Seed recorded in the split manifest.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory (default: $GPFEDREC_OUT_DIR or the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Flat key=value config file; flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prepared dataset.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory (default: $GPFEDREC_OUT_DIR or the working directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel client workers (default: one per CPU). Does not affect results.
    #[arg(long)]
    workers: Option<usize>,

    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Single learning rate (shorthand for a one-entry eta grid).
    #[arg(long)]
    eta: Option<f64>,
    /// Comma-separated learning-rate grid searched on validation.
    #[arg(long)]
    eta_grid: Option<String>,
    #[arg(long)]
    delta: Option<f64>,
    /// Embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    local_epochs: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    conv_layers: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    negatives_per_positive: Option<usize>,
    #[arg(long)]
    eval_negatives: Option<usize>,
    /// graph_agg or fed_avg.
    #[arg(long)]
    aggregation: Option<String>,
    /// ncf or mf.
    #[arg(long)]
    backbone: Option<String>,
    /// row_normalized or vanilla.
    #[arg(long)]
    normalization: Option<String>,
    #[arg(long)]
    graph_update_every: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated MLP hidden widths for the ncf backbone.
    #[arg(long)]
    hidden_sizes: Option<String>,
    /// Learning-rate multiple for the user embedding.
    #[arg(long)]
    user_lr_scale: Option<f64>,
    /// Learning-rate multiple for item-embedding rows (times catalog size).
    #[arg(long)]
    item_lr_scale: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Write graph_round_<t>.json audit dumps on every graph rebuild.
    #[arg(long)]
    dump_graph: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// One of: gamma, lambda, eta, d, delta, graph_update_every.
    #[arg(long)]
    param: String,
    /// Comma-separated values for the swept parameter.
    #[arg(long)]
    values: String,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Prepare(args) => prepare(args),
        Command::Train(args) => train(args),
        Command::Sweep(args) => sweep(args),
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os("GPFEDREC_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn prepare(args: PrepareArgs) -> Result<()> {
    let format: RawFormat = args.format.parse()?;
    let out_dir = args.out.unwrap_or_else(default_out_dir);
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let records = load_raw(&args.input, format)?;
    let canon = canonicalize(&records, args.min_interactions)?;
    let summary = format!(
        "{} users, {} items, {} interactions, sparsity {:.2}%",
        canon.n_users,
        canon.n_items,
        canon.n_interactions(),
        canon.sparsity() * 100.0
    );
    canon.write_csv(out_dir.join("dataset.csv"))?;
    let split = split_leave_one_out(canon)?;
    SplitManifest::new(&split, args.seed).write(out_dir.join("split.json"))?;
    println!("{summary}");
    println!("wrote {}", out_dir.join("dataset.csv").display());
    println!("wrote {}", out_dir.join("split.json").display());
    Ok(())
}

/// Resolve the effective config and paths from defaults, file, then flags.
fn resolve(run: &RunArgs) -> Result<(ExperimentConfig, PathBuf, PathBuf, Option<usize>)> {
    let mut cfg = ExperimentConfig::default();
    let mut data: Option<PathBuf> = None;
    let mut out: Option<PathBuf> = None;
    let mut workers: Option<usize> = None;

    if let Some(path) = &run.config {
        let file = ConfigFile::load(path)?;
        file.apply(&mut cfg)?;
        if let Some(v) = file.values.get("data") {
            data = Some(PathBuf::from(v));
        }
        if let Some(v) = file.values.get("out") {
            out = Some(PathBuf::from(v));
        }
        if let Some(v) = file.values.get("workers") {
            workers = Some(v.parse().context("workers in config file")?);
        }
    }

    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = run.$field {
                cfg.$field = v;
            }
        };
    }
    set!(lambda);
    set!(gamma);
    set!(delta);
    set!(dim);
    set!(local_epochs);
    set!(rounds);
    set!(conv_layers);
    set!(batch_size);
    set!(negatives_per_positive);
    set!(eval_negatives);
    set!(graph_update_every);
    set!(seed);
    set!(user_lr_scale);
    set!(item_lr_scale);
    if let Some(v) = &run.aggregation {
        cfg.aggregation = v.parse()?;
    }
    if let Some(v) = &run.backbone {
        cfg.backbone = v.parse()?;
    }
    if let Some(v) = &run.normalization {
        cfg.normalization = v.parse()?;
    }
    if let Some(v) = &run.hidden_sizes {
        cfg.hidden_sizes = parse_list("hidden_sizes", v)?;
    }
    match (&run.eta, &run.eta_grid) {
        (Some(eta), None) => cfg.eta_grid = vec![*eta],
        (None, Some(grid)) => cfg.eta_grid = parse_list("eta_grid", grid)?,
        (Some(_), Some(_)) => bail!("pass either --eta or --eta-grid, not both"),
        (None, None) => {}
    }
    cfg.validate()?;

    if let Some(v) = &run.data {
        data = Some(v.clone());
    }
    if let Some(v) = &run.out {
        out = Some(v.clone());
    }
    if let Some(v) = run.workers {
        workers = Some(v);
    }
    let data = data.ok_or_else(|| {
        anyhow::anyhow!("no dataset given: pass --data or set data= in the config file")
    })?;
    Ok((cfg, data, out.unwrap_or_else(default_out_dir), workers))
}

fn load_split(data: &Path) -> Result<gpfedrec_core::dataset::SplitDataset> {
    let records = load_raw(data, RawFormat::Csv)?;
    let canon = canonicalize(&records, 0)?;
    Ok(split_leave_one_out(canon)?)
}

fn in_worker_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .context("building worker pool")?;
            Ok(pool.install(f))
        }
    }
}

fn print_report(report: &ExperimentReport) {
    println!(
        "best round {} (eta = {}): test HR@10 = {:.4}, NDCG@10 = {:.4}",
        report.best_round, report.selected_eta, report.test_hr10, report.test_ndcg10
    );
}

fn train(args: TrainArgs) -> Result<()> {
    let (cfg, data, out_dir, workers) = resolve(&args.run)?;
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let dataset = load_split(&data)?;
    let options = RunOptions {
        graph_dump_dir: args.dump_graph.then(|| out_dir.clone()),
    };
    let report = in_worker_pool(workers, || run_experiment_with(&dataset, &cfg, &options))??;
    write_metrics_csv(&report.rounds, out_dir.join("metrics.csv"))?;
    write_report_json(&report, out_dir.join("report.json"))?;
    print_report(&report);
    Ok(())
}

const SWEEPABLE: &[&str] = &["gamma", "lambda", "eta", "d", "delta", "graph_update_every"];

fn apply_sweep_value(cfg: &mut ExperimentConfig, param: &str, value: f64) -> Result<()> {
    fn as_count(param: &str, value: f64) -> Result<usize> {
        if value.fract() != 0.0 || value < 0.0 {
            bail!("{param} needs a nonnegative integer, got {value}");
        }
        Ok(value as usize)
    }
    match param {
        "gamma" => cfg.gamma = value,
        "lambda" => cfg.lambda = value,
        "eta" => cfg.eta_grid = vec![value],
        "d" => cfg.dim = as_count(param, value)?,
        "delta" => cfg.delta = value,
        "graph_update_every" => cfg.graph_update_every = as_count(param, value)?,
        other => bail!(
            "unknown sweep parameter '{other}' (valid: {})",
            SWEEPABLE.join(", ")
        ),
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    if !SWEEPABLE.contains(&args.param.as_str()) {
        bail!(
            "unknown sweep parameter '{}' (valid: {})",
            args.param,
            SWEEPABLE.join(", ")
        );
    }
    let values: Vec<f64> = parse_list("values", &args.values)?;
    let (base_cfg, data, out_dir, workers) = resolve(&args.run)?;
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let dataset = load_split(&data)?;

    let mut summary = String::from(
        "param,value,selected_eta,best_round,val_hr10,val_ndcg10,test_hr10,test_ndcg10\n",
    );
    for (token, &value) in args.values.split(',').zip(&values) {
        let mut cfg = base_cfg.clone();
        apply_sweep_value(&mut cfg, &args.param, value)?;
        cfg.validate()?;
        let run_dir = out_dir.join(format!("sweep_{}_{}", args.param, token.trim()));
        std::fs::create_dir_all(&run_dir)
            .with_context(|| format!("creating {}", run_dir.display()))?;
        let report =
            in_worker_pool(workers, || run_experiment_with(&dataset, &cfg, &RunOptions::default()))??;
        write_metrics_csv(&report.rounds, run_dir.join("metrics.csv"))?;
        write_report_json(&report, run_dir.join("report.json"))?;
        summary.push_str(&format!(
            "{},{},{},{},{:.4},{:.4},{:.4},{:.4}\n",
            args.param,
            token.trim(),
            report.selected_eta,
            report.best_round,
            report.val_hr10,
            report.val_ndcg10,
            report.test_hr10,
            report.test_ndcg10
        ));
        println!(
            "{} = {}: test HR@10 = {:.4}, NDCG@10 = {:.4}",
            args.param, token.trim(), report.test_hr10, report.test_ndcg10
        );
    }
    let summary_path = out_dir.join("sweep_summary.csv");
    std::fs::write(&summary_path, summary)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    println!("wrote {}", summary_path.display());
    Ok(())
}
