//! Subcommand implementations: synthetic data generation, KNN graph
//! construction, training (single- and multi-seed), evaluation, and the
//! ablation and parameter-sweep harnesses.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, ValueEnum};
use rayon::prelude::*;

use dagc::graph::{
    build_knn_graph, load_edge_list, normalize_adjacency, save_edge_list, KnnSimilarity,
    PropagationOperator, SparseAdjacency,
};
use dagc::losses::Hyperparams;
use dagc::metrics::{evaluate_all, MetricSet};
use dagc::model::save_checkpoint;
use dagc::trainer::{run_pipeline, ClusteringReport, TrainConfig};

use crate::data;
use crate::report::{format_log_line, mean_std, pct, pct_pm, RunReport, SeedResult};
use crate::synth::{self, SynthConfig};

/// CLI-level error with a stable exit code: 2 for usage/config problems,
/// 3 for numeric failures.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<dagc::Error> for CliError {
    fn from(e: dagc::Error) -> Self {
        match e {
            dagc::Error::Diverged { .. } => CliError::Numeric(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

// ---- argument structs ------------------------------------------------------

#[derive(Args, Debug, Clone)]
pub struct SynthArgs {
    /// Output directory for features.csv, graph.edges, labels.txt
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Within-block edge probability
    #[arg(long, default_value_t = 0.2)]
    pub p_in: f64,
    /// Between-block edge probability
    #[arg(long, default_value_t = 0.01)]
    pub p_out: f64,
    /// Centroid separation in noise sigmas
    #[arg(long, default_value_t = 4.0)]
    pub sep: f64,
    /// Feature dimensionality (must be >= k)
    #[arg(long, default_value_t = 16)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone)]
pub struct BuildGraphArgs {
    /// Feature matrix (CSV or DMAT)
    #[arg(long)]
    pub features: PathBuf,
    /// Neighbors kept per node
    #[arg(long, default_value_t = 3)]
    pub knn: usize,
    /// Output edge-list path
    #[arg(long)]
    pub out: PathBuf,
    /// Per-row cosine similarity instead of the globally scaled Gram matrix
    #[arg(long)]
    pub row_cosine: bool,
    /// Standardize columns (zero mean, unit variance) before similarity
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    /// Feature matrix (CSV or DMAT)
    #[arg(long)]
    pub features: PathBuf,
    /// Edge-list graph; mutually exclusive with --knn
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Build a KNN graph from the features with this many neighbors
    #[arg(long)]
    pub knn: Option<usize>,
    /// Ground-truth labels, one integer per line
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Number of clusters
    #[arg(long)]
    pub clusters: usize,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Base seed; runs use seed, seed+1, ..., seed+seeds-1
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of repeated runs for mean±std reporting
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda2: f64,
    #[arg(long, default_value_t = 0.1)]
    pub lambda3: f64,
    /// Pseudo-label confidence threshold r
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    /// Student's-t alpha in the soft assignment
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Joint-phase learning rate
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.001)]
    pub pretrain_lr: f64,
    #[arg(long, default_value_t = 30)]
    pub pretrain_epochs: usize,
    /// Joint-phase iterations
    #[arg(long, default_value_t = 200)]
    pub iterations: usize,
    /// Mini-batch size for DAE pretraining
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    /// Encoder layer widths
    #[arg(long, value_delimiter = ',', default_values_t = [500, 500, 2000, 10])]
    pub dims: Vec<usize>,
    /// Standardize feature columns before everything else
    #[arg(long)]
    pub standardize: bool,
    /// Per-row cosine KNN similarity (with --knn)
    #[arg(long)]
    pub row_cosine: bool,
    /// Keep Q out of the soft-loss gradient path
    #[arg(long)]
    pub detach_q: bool,
    /// Replace attention fusion with fixed equal weights
    #[arg(long)]
    pub no_attention: bool,
    /// Skip distribution-wise fusion (F := Z)
    #[arg(long)]
    pub no_dwf: bool,
}

#[derive(Args, Debug, Clone)]
pub struct EvaluateArgs {
    /// Ground-truth labels
    #[arg(long)]
    pub labels: PathBuf,
    /// Predicted labels
    #[arg(long)]
    pub pred: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Lambda1,
    Lambda2,
    Lambda3,
    Knn,
    Threshold,
}

#[derive(Args, Debug, Clone)]
pub struct SweepArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Which hyperparameter to sweep
    #[arg(long, value_enum)]
    pub param: SweepParam,
    /// Comma-separated values to sweep over
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
}

// ---- shared plumbing -------------------------------------------------------

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

struct LoadedData {
    dataset: data::Dataset,
    graph_desc: String,
}

impl LoadedData {
    fn graph(&self) -> &SparseAdjacency {
        self.dataset.graph.as_ref().expect("attached in load_data")
    }
}

fn load_data(args: &TrainArgs) -> CliResult<LoadedData> {
    let mut dataset = data::Dataset::load(&args.features, args.labels.as_deref(), args.standardize)?;
    let (graph, graph_desc) = match (&args.graph, args.knn) {
        (Some(path), None) => (
            load_edge_list(path, Some(dataset.features.rows()))?,
            path.display().to_string(),
        ),
        (None, Some(k_hat)) => {
            let sim = if args.row_cosine {
                KnnSimilarity::RowCosine
            } else {
                KnnSimilarity::GlobalGram
            };
            (
                build_knn_graph(&dataset.features, k_hat, sim)?,
                format!("knn={k_hat}"),
            )
        }
        _ => {
            return Err(CliError::Usage(
                "supply exactly one of --graph or --knn".into(),
            ))
        }
    };
    dataset.attach_graph(graph)?;
    Ok(LoadedData {
        dataset,
        graph_desc,
    })
}

fn train_config(args: &TrainArgs, seed: u64) -> TrainConfig {
    TrainConfig {
        dims: args.dims.clone(),
        k: args.clusters,
        pretrain_epochs: args.pretrain_epochs,
        pretrain_lr: args.pretrain_lr,
        joint_iterations: args.iterations,
        joint_lr: args.lr,
        batch_size: args.batch_size,
        seed,
        hyper: Hyperparams {
            lambda1: args.lambda1,
            lambda2: args.lambda2,
            lambda3: args.lambda3,
            r: args.threshold,
            alpha: args.alpha,
        },
        detach_q: args.detach_q,
        attention_fusion: !args.no_attention,
        use_dwf: !args.no_dwf,
    }
}

fn config_echo(args: &TrainArgs, data: &LoadedData) -> Vec<(String, String)> {
    let dims = args
        .dims
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("-");
    [
        ("dataset", data.dataset.name.clone()),
        ("features", args.features.display().to_string()),
        ("graph", data.graph_desc.clone()),
        ("samples", data.dataset.features.rows().to_string()),
        ("input_dim", data.dataset.features.cols().to_string()),
        ("edges", data.graph().edge_count().to_string()),
        ("clusters", args.clusters.to_string()),
        ("dims", dims),
        ("seed", args.seed.to_string()),
        ("seeds", args.seeds.to_string()),
        ("lambda1", args.lambda1.to_string()),
        ("lambda2", args.lambda2.to_string()),
        ("lambda3", args.lambda3.to_string()),
        ("threshold", args.threshold.to_string()),
        ("alpha", args.alpha.to_string()),
        ("lr", args.lr.to_string()),
        ("pretrain_lr", args.pretrain_lr.to_string()),
        ("pretrain_epochs", args.pretrain_epochs.to_string()),
        ("iterations", args.iterations.to_string()),
        ("batch_size", args.batch_size.to_string()),
        ("standardize", args.standardize.to_string()),
        ("row_cosine", args.row_cosine.to_string()),
        ("detach_q", args.detach_q.to_string()),
        ("attention_fusion", (!args.no_attention).to_string()),
        ("use_dwf", (!args.no_dwf).to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Run one pipeline per seed (seed, seed+1, ...), in parallel worker
/// threads. Results come back in seed order.
fn run_seeds(
    args: &TrainArgs,
    data: &LoadedData,
    op: &Arc<PropagationOperator>,
) -> CliResult<Vec<(u64, dagc::model::ModelParams, ClusteringReport)>> {
    let seeds: Vec<u64> = (0..args.seeds).map(|i| args.seed + i).collect();
    seeds
        .par_iter()
        .map(|&seed| {
            let cfg = train_config(args, seed);
            let (params, report) =
                run_pipeline(&cfg, &data.dataset.features, op, data.dataset.labels.as_deref())?;
            Ok((seed, params, report))
        })
        .collect()
}

// ---- subcommands -----------------------------------------------------------

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let cfg = SynthConfig {
        n: args.n,
        k: args.k,
        p_in: args.p_in,
        p_out: args.p_out,
        sep: args.sep,
        dim: args.dim,
        seed: args.seed,
    };
    let (features, graph, labels) = synth::generate(&cfg)?;
    create_dir(&args.out)?;
    data::write_features_csv(&features, &args.out.join("features.csv"))?;
    save_edge_list(&graph, &args.out.join("graph.edges"))?;
    data::write_labels(&labels, &args.out.join("labels.txt"))?;
    println!(
        "wrote {} samples, {} edges, k={} under {}",
        cfg.n,
        graph.edge_count(),
        cfg.k,
        args.out.display()
    );
    Ok(())
}

pub fn cmd_build_graph(args: &BuildGraphArgs) -> CliResult<()> {
    let mut features = data::read_features(&args.features)?;
    if args.standardize {
        features = data::standardize(&features);
    }
    let sim = if args.row_cosine {
        KnnSimilarity::RowCosine
    } else {
        KnnSimilarity::GlobalGram
    };
    let graph = build_knn_graph(&features, args.knn, sim)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            create_dir(parent)?;
        }
    }
    save_edge_list(&graph, &args.out)?;
    println!(
        "wrote {} edges for {} nodes to {}",
        graph.edge_count(),
        graph.node_count(),
        args.out.display()
    );
    Ok(())
}

fn validate_train_args(args: &TrainArgs) -> CliResult<()> {
    if args.clusters < 2 {
        return Err(CliError::Usage("--clusters must be at least 2".into()));
    }
    if args.seeds < 1 {
        return Err(CliError::Usage("--seeds must be at least 1".into()));
    }
    train_config(args, args.seed).validate()?;
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    validate_train_args(args)?;
    let started = Instant::now();
    let data = load_data(args)?;
    let op = Arc::new(normalize_adjacency(data.graph()));
    let results = run_seeds(args, &data, &op)?;

    create_dir(&args.out)?;
    let mut seed_results = Vec::with_capacity(results.len());
    for (seed, params, report) in &results {
        let seed_dir = args.out.join(format!("seed_{seed}"));
        create_dir(&seed_dir)?;
        save_checkpoint(params, &seed_dir.join("checkpoint.bin"))?;
        let pred: Vec<i64> = report.labels.iter().map(|&l| l as i64).collect();
        data::write_labels(&pred, &seed_dir.join("labels.txt"))?;
        let mut log = String::new();
        for rec in &report.trajectory {
            log.push_str(&format_log_line(rec));
            log.push('\n');
        }
        write_text(&seed_dir.join("train_log.tsv"), &log)?;

        let last = report.trajectory.last().expect("at least one iteration");
        seed_results.push(SeedResult {
            seed: *seed,
            metrics: report.metrics,
            final_total_loss: last.losses.total,
            selected_count: last.losses.selected_count,
        });
    }

    let run_report = RunReport {
        config: config_echo(args, &data),
        seeds: seed_results,
    };
    let rendered = run_report.render();
    write_text(&args.out.join("report.txt"), &rendered)?;

    print!("{rendered}");
    println!("wall-clock: {:.2}s", started.elapsed().as_secs_f64());
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let truth = data::read_labels(&args.labels)?;
    let pred = data::read_labels(&args.pred)?;
    let m = evaluate_all(&truth, &pred)?;
    println!("ACC\t{}", pct(m.acc));
    println!("NMI\t{}", pct(m.nmi));
    println!("ARI\t{}", pct(m.ari));
    println!("F1\t{}", pct(m.f1));
    Ok(())
}

// ---- ablation --------------------------------------------------------------

/// One ablation configuration in the cumulative Table-style ordering.
/// Toggle order matches the printed columns: HSS, DWF, SSS, H+SWF.
pub struct AblationRow {
    pub name: &'static str,
    pub hss: bool,
    pub dwf: bool,
    pub sss: bool,
    pub hswf: bool,
    pub per_seed: Vec<MetricSet>,
}

pub const ABLATION_ROWS: [(&str, bool, bool, bool, bool); 5] = [
    ("baseline", false, false, false, false),
    ("+H+SWF", false, false, false, true),
    ("+SSS", false, false, true, true),
    ("+DWF", false, true, true, true),
    ("+HSS", true, true, true, true),
];

/// Run the five cumulative configurations over all seeds. The toggles map
/// onto the training config: H+SWF off = fixed equal-weight fusion, SSS
/// off = lambda1=lambda2=0, DWF off = F:=Z, HSS off = lambda3=0.
pub fn run_ablation(args: &TrainArgs) -> CliResult<Vec<AblationRow>> {
    let data = load_data(args)?;
    let Some(truth) = data.dataset.labels.clone() else {
        return Err(CliError::Usage("ablation requires --labels".into()));
    };
    let op = Arc::new(normalize_adjacency(data.graph()));

    let mut rows = Vec::with_capacity(ABLATION_ROWS.len());
    for (name, hss, dwf, sss, hswf) in ABLATION_ROWS {
        let seeds: Vec<u64> = (0..args.seeds).map(|i| args.seed + i).collect();
        let per_seed: Vec<MetricSet> = seeds
            .par_iter()
            .map(|&seed| {
                let mut cfg = train_config(args, seed);
                cfg.attention_fusion = hswf;
                cfg.use_dwf = dwf;
                if !sss {
                    cfg.hyper.lambda1 = 0.0;
                    cfg.hyper.lambda2 = 0.0;
                }
                if !hss {
                    cfg.hyper.lambda3 = 0.0;
                }
                let (_, report) = run_pipeline(&cfg, &data.dataset.features, &op, Some(&truth))?;
                Ok(report.metrics.expect("labels supplied"))
            })
            .collect::<CliResult<_>>()?;
        rows.push(AblationRow {
            name,
            hss,
            dwf,
            sss,
            hswf,
            per_seed,
        });
    }
    Ok(rows)
}

pub fn format_ablation_table(rows: &[AblationRow], multi_seed: bool) -> String {
    let mut out = String::new();
    out.push_str("config\tHSS\tDWF\tSSS\tH+SWF\tACC\tNMI\tARI\tF1\n");
    let tick = |on: bool| if on { "\u{2713}" } else { "" };
    for row in rows {
        let cell = |pick: &dyn Fn(&MetricSet) -> f64| {
            let values: Vec<f64> = row.per_seed.iter().map(pick).collect();
            let (mean, std) = mean_std(&values);
            pct_pm(mean, multi_seed.then_some(std))
        };
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            row.name,
            tick(row.hss),
            tick(row.dwf),
            tick(row.sss),
            tick(row.hswf),
            cell(&|m| m.acc),
            cell(&|m| m.nmi),
            cell(&|m| m.ari),
            cell(&|m| m.f1),
        );
    }
    out
}

pub fn cmd_ablate(args: &TrainArgs) -> CliResult<()> {
    validate_train_args(args)?;
    let started = Instant::now();
    let rows = run_ablation(args)?;
    let table = format_ablation_table(&rows, args.seeds > 1);
    create_dir(&args.out)?;
    write_text(&args.out.join("ablation.tsv"), &table)?;
    print!("{table}");
    println!("wall-clock: {:.2}s", started.elapsed().as_secs_f64());
    Ok(())
}

// ---- parameter sweep ---------------------------------------------------

pub struct SweepRow {
    pub value: String,
    pub lambdas: (f64, f64, f64),
    pub per_seed: Vec<MetricSet>,
}

pub fn run_sweep(args: &SweepArgs) -> CliResult<Vec<SweepRow>> {
    let base = &args.train;
    if base.labels.is_none() {
        return Err(CliError::Usage("sweep requires --labels".into()));
    }
    if args.param == SweepParam::Knn && base.graph.is_some() {
        return Err(CliError::Usage(
            "a knn sweep needs a feature-derived graph, not --graph".into(),
        ));
    }

    let mut rows = Vec::with_capacity(args.values.len());
    for raw in &args.values {
        let mut per_value = base.clone();
        match args.param {
            SweepParam::Knn => {
                let k: usize = raw
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad knn value {raw:?}")))?;
                per_value.knn = Some(k);
                per_value.graph = None;
            }
            _ => {
                let v: f64 = raw
                    .parse()
                    .map_err(|_| CliError::Usage(format!("bad value {raw:?}")))?;
                match args.param {
                    SweepParam::Lambda1 => per_value.lambda1 = v,
                    SweepParam::Lambda2 => per_value.lambda2 = v,
                    SweepParam::Lambda3 => per_value.lambda3 = v,
                    SweepParam::Threshold => per_value.threshold = v,
                    SweepParam::Knn => unreachable!(),
                }
            }
        }
        train_config(&per_value, per_value.seed).validate()?;
        let data = load_data(&per_value)?;
        let truth = data.dataset.labels.clone().expect("checked above");
        let op = Arc::new(normalize_adjacency(data.graph()));
        let seeds: Vec<u64> = (0..per_value.seeds).map(|i| per_value.seed + i).collect();
        let per_seed: Vec<MetricSet> = seeds
            .par_iter()
            .map(|&seed| {
                let cfg = train_config(&per_value, seed);
                let (_, report) = run_pipeline(&cfg, &data.dataset.features, &op, Some(&truth))?;
                Ok(report.metrics.expect("labels supplied"))
            })
            .collect::<CliResult<_>>()?;
        rows.push(SweepRow {
            value: raw.clone(),
            lambdas: (per_value.lambda1, per_value.lambda2, per_value.lambda3),
            per_seed,
        });
    }
    Ok(rows)
}

pub fn format_sweep_table(param: SweepParam, rows: &[SweepRow], multi_seed: bool) -> String {
    let mut out = String::new();
    let is_lambda = matches!(
        param,
        SweepParam::Lambda1 | SweepParam::Lambda2 | SweepParam::Lambda3
    );
    if is_lambda {
        out.push_str("lambda1\tlambda2\tlambda3\tACC\tNMI\tARI\tF1\n");
    } else {
        let name = match param {
            SweepParam::Knn => "knn",
            SweepParam::Threshold => "threshold",
            _ => unreachable!(),
        };
        let _ = writeln!(out, "{name}\tACC\tNMI\tARI\tF1");
    }
    for row in rows {
        let cell = |pick: &dyn Fn(&MetricSet) -> f64| {
            let values: Vec<f64> = row.per_seed.iter().map(pick).collect();
            let (mean, std) = mean_std(&values);
            pct_pm(mean, multi_seed.then_some(std))
        };
        let metrics = format!(
            "{}\t{}\t{}\t{}",
            cell(&|m| m.acc),
            cell(&|m| m.nmi),
            cell(&|m| m.ari),
            cell(&|m| m.f1)
        );
        if is_lambda {
            let (l1, l2, l3) = row.lambdas;
            let _ = writeln!(out, "{l1}\t{l2}\t{l3}\t{metrics}");
        } else {
            let _ = writeln!(out, "{}\t{metrics}", row.value);
        }
    }
    out
}

pub fn cmd_sweep(args: &SweepArgs) -> CliResult<()> {
    validate_train_args(&args.train)?;
    let started = Instant::now();
    let rows = run_sweep(args)?;
    let table = format_sweep_table(args.param, &rows, args.train.seeds > 1);
    create_dir(&args.train.out)?;
    write_text(&args.train.out.join("sweep.tsv"), &table)?;
    print!("{table}");
    println!("wall-clock: {:.2}s", started.elapsed().as_secs_f64());
    Ok(())
}
