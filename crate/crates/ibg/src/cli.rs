//! Command-line front end. Every subcommand is a thin adapter over the
//! library modules: load inputs, run one operation, print a flat key=value
//! report on stdout, write any artifacts to --out. Exit codes: 0 success,
//! 1 certificate rejected, 2 invalid input, 3 diverged fit.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::Array2;

use crate::error::{IbgError, Result};
use crate::graph::{DirectedGraphSignal, SbmSpec};
use crate::ibg::FitConfig;
use crate::{certify, graph, ibg, io, kg, nn, norms, sgd, svd};

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                IbgError::Diverged { .. } => 3,
                _ => 2,
            }
        }
    }
}

#[derive(Parser)]
#[command(
    name = "ibg",
    about = "Intersecting block graph toolkit: fit, certify, classify, complete",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Inner parallelism; 1 guarantees bit-deterministic output
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fit IBG factors to a graph-signal by full gradient descent or subgraph SGD
    Fit(FitArgs),
    /// Fit with a sampled-rank certificate on the cut-similarity bound
    Certify(CertifyArgs),
    /// Spectral initialization: write factors built from Monte Carlo SVD triplets
    Init(InitArgs),
    /// Train an IBG-NN node classifier on frozen factors
    Train(TrainArgs),
    /// Train a knowledge-graph completion model on a triples file
    KgTrain(KgTrainArgs),
    /// Rank-based evaluation of a trained knowledge-graph model
    KgEval(KgEvalArgs),
    /// Exact densifying cut norm of a small graph (or cut similarity against factors)
    Cutnorm(CutnormArgs),
    /// Generate a stochastic block model graph-signal with labels and masks
    GenSbm(GenSbmArgs),
}

#[derive(Args)]
struct GraphInput {
    /// Edge list file: one "src dst" pair of 0-based node ids per line
    #[arg(long)]
    edges: PathBuf,
    /// Node feature matrix: one whitespace-separated row per node
    #[arg(long)]
    signal: Option<PathBuf>,
    /// Node count override (needed when trailing nodes are isolated)
    #[arg(long)]
    nodes: Option<usize>,
}

impl GraphInput {
    fn load(&self) -> Result<DirectedGraphSignal> {
        let mut g = io::load_edge_list(&self.edges, self.nodes)?;
        if let Some(path) = &self.signal {
            g.set_signal(io::load_signal(path, g.num_nodes())?)?;
        }
        Ok(g)
    }
}

#[derive(Args)]
struct FitHyper {
    /// Number of communities
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Densifying weight parameter
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Graph-term weight [default: 0.5, or 1.0 without --signal]
    #[arg(long)]
    alpha: Option<f64>,
    /// Signal-term weight [default: 1 - alpha]
    #[arg(long)]
    beta: Option<f64>,
    /// Optimization epochs (SGD steps with --sgd)
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.03)]
    lr: f64,
    /// RNG seed for all randomness
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitHyper {
    fn config(&self, has_signal: bool) -> FitConfig {
        let alpha = self
            .alpha
            .unwrap_or(if has_signal { 0.5 } else { 1.0 });
        let beta = self.beta.unwrap_or(1.0 - alpha);
        FitConfig {
            k: self.k,
            gamma: self.gamma,
            alpha,
            beta,
            lr: self.lr,
            epochs: self.epochs,
            seed: self.seed,
            ..FitConfig::new(self.k, self.gamma)
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum InitKind {
    Random,
    Svd,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    graph: GraphInput,
    #[command(flatten)]
    hyper: FitHyper,
    /// Subgraph SGD instead of full gradient descent
    #[arg(long)]
    sgd: bool,
    /// Sampled nodes per SGD step (required with --sgd)
    #[arg(long)]
    sample_size: Option<usize>,
    /// Factor initialization scheme
    #[arg(long, value_enum, default_value_t = InitKind::Random)]
    init: InitKind,
    /// Column-sampling ratio of the Monte Carlo SVD (with --init svd)
    #[arg(long, default_value_t = 1.0)]
    svd_sample_ratio: f64,
    /// Power/simultaneous iteration count of the SVD (with --init svd)
    #[arg(long, default_value_t = 60)]
    svd_iters: usize,
    /// Output factor file
    #[arg(long, default_value = "ibg.txt")]
    out: PathBuf,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    graph: GraphInput,
    #[command(flatten)]
    hyper: FitHyper,
    /// Rank-sampling range factor R (divides K)
    #[arg(long, default_value_t = 2)]
    r_factor: usize,
    /// Certificate slack parameter
    #[arg(long, default_value_t = 0.3)]
    delta: f64,
    /// Random restarts per rank in the eta estimate
    #[arg(long, default_value_t = 3)]
    restarts: usize,
    /// Maximum rank draws before giving up
    #[arg(long, default_value_t = 10)]
    max_attempts: usize,
    /// Output factor file for the certified rank
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InitArgs {
    #[command(flatten)]
    graph: GraphInput,
    /// Number of communities (multiple of 4)
    #[arg(long, default_value_t = 8)]
    k: usize,
    /// Densifying weight parameter recorded in the factor file
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Column-sampling ratio of the Monte Carlo SVD
    #[arg(long, default_value_t = 1.0)]
    svd_sample_ratio: f64,
    /// Power/simultaneous iteration count
    #[arg(long, default_value_t = 60)]
    svd_iters: usize,
    /// RNG seed for all randomness
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output factor file
    #[arg(long, default_value = "ibg_init.txt")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum JkFlag {
    None,
    Max,
    Cat,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    graph: GraphInput,
    /// Integer class labels, one per node
    #[arg(long)]
    labels: PathBuf,
    /// Split file: train/val/test/none, one per node
    #[arg(long)]
    masks: PathBuf,
    /// Fitted IBG factor file
    #[arg(long)]
    factors: PathBuf,
    /// Message-passing layers
    #[arg(long, default_value_t = 2)]
    layers: usize,
    /// Hidden width
    #[arg(long, default_value_t = 32)]
    hidden: usize,
    /// Dropout probability on hidden activations
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// DeepSets update maps instead of plain linear maps
    #[arg(long)]
    deepsets: bool,
    /// Residual connections between equal-width layers
    #[arg(long)]
    residual: bool,
    /// Jumping-knowledge combination of layer outputs
    #[arg(long, value_enum, default_value_t = JkFlag::None)]
    jk: JkFlag,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    /// Training epochs
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    /// RNG seed for all randomness
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Optional per-node prediction file
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KgTrainArgs {
    /// Training triples: "head relation tail" per line
    #[arg(long)]
    train: PathBuf,
    /// Validation triples
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Test triples
    #[arg(long)]
    test: Option<PathBuf>,
    /// Number of communities
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Densifying weight parameter
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Ranking-loss margin
    #[arg(long, default_value_t = 1.0)]
    margin: f64,
    /// Negatives sampled per positive
    #[arg(long, default_value_t = 64)]
    neg_samples: usize,
    /// Training epochs
    #[arg(long, default_value_t = 250)]
    epochs: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    /// Positives per parameter update
    #[arg(long, default_value_t = 512)]
    batch: usize,
    /// RNG seed for all randomness
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output model file; dictionaries land at <out>.entities / <out>.relations
    #[arg(long, default_value = "ibge.txt")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Valid,
    Test,
}

#[derive(Args)]
struct KgEvalArgs {
    /// Trained model file from kg-train
    #[arg(long)]
    model: PathBuf,
    /// Training triples (defines known positives and dyad weights)
    #[arg(long)]
    train: PathBuf,
    /// Validation triples
    #[arg(long)]
    valid: Option<PathBuf>,
    /// Test triples
    #[arg(long)]
    test: Option<PathBuf>,
    /// Which split to rank
    #[arg(long, value_enum, default_value_t = EvalSplit::Test)]
    split: EvalSplit,
    /// Raw ranking (keep known positives as candidates)
    #[arg(long)]
    raw: bool,
}

#[derive(Args)]
struct CutnormArgs {
    #[command(flatten)]
    graph: GraphInput,
    /// Densifying weight parameter
    #[arg(long, default_value_t = 1.0)]
    gamma: f64,
    /// Refuse graphs larger than this (exhaustive 2^N search)
    #[arg(long, default_value_t = 12)]
    max_n: usize,
    /// Factor file: report cut similarity of its synthesis instead
    #[arg(long)]
    factors: Option<PathBuf>,
}

#[derive(Args)]
struct GenSbmArgs {
    /// Block layout as COUNTxSIZE, e.g. 2x200
    #[arg(long)]
    blocks: String,
    /// Within-block edge probability
    #[arg(long)]
    pin: f64,
    /// Between-block edge probability
    #[arg(long)]
    pout: f64,
    /// Gaussian noise scale on the one-hot block features
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// RNG seed for all randomness
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output prefix; writes <out>.edges, <out>.signal, <out>.labels, <out>.masks
    #[arg(long, default_value = "sbm")]
    out: PathBuf,
}

fn dispatch(cli: Cli) -> Result<i32> {
    if cli.threads == 0 {
        return Err(IbgError::Validation("--threads must be at least 1".into()));
    }
    match cli.cmd {
        Cmd::Fit(a) => cmd_fit(a),
        Cmd::Certify(a) => cmd_certify(a),
        Cmd::Init(a) => cmd_init(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::KgTrain(a) => cmd_kg_train(a),
        Cmd::KgEval(a) => cmd_kg_eval(a),
        Cmd::Cutnorm(a) => cmd_cutnorm(a),
        Cmd::GenSbm(a) => cmd_gen_sbm(a),
    }
}

fn report(key: &str, value: impl std::fmt::Display) {
    println!("{key}={value}");
}

fn cmd_fit(a: FitArgs) -> Result<i32> {
    let g = a.graph.load()?;
    let cfg = a.hyper.config(g.feature_dim() > 0);
    let init = match a.init {
        InitKind::Random => None,
        InitKind::Svd => Some(svd::svd_init(
            &g,
            cfg.k,
            a.svd_iters,
            a.svd_sample_ratio,
            cfg.seed,
        )?),
    };
    let result = if a.sgd {
        let m = a.sample_size.ok_or_else(|| {
            IbgError::Validation("--sgd requires --sample-size".into())
        })?;
        sgd::fit_sgd(&g, &cfg, m, cfg.epochs, init)?
    } else {
        ibg::fit_full(&g, &cfg, init)?
    };
    io::save_ibg(&result.factors, cfg.gamma, cfg.alpha, cfg.beta, &a.out)?;
    report("n", g.num_nodes());
    report("edges", g.num_edges());
    report("k", cfg.k);
    report("gamma", cfg.gamma);
    report("alpha", cfg.alpha);
    report("beta", cfg.beta);
    report("mode", if a.sgd { "sgd" } else { "full" });
    report("loss_initial", format!("{:.10e}", result.loss_trace[0]));
    report(
        "loss_final",
        format!("{:.10e}", result.graph_term + result.signal_term),
    );
    report("graph_term", format!("{:.10e}", result.graph_term));
    report("signal_term", format!("{:.10e}", result.signal_term));
    report("factors", a.out.display());
    eprintln!("fit took {:.2}s", result.wall_time_s);
    Ok(0)
}

fn cmd_certify(a: CertifyArgs) -> Result<i32> {
    let g = a.graph.load()?;
    let fit = a.hyper.config(g.feature_dim() > 0);
    let cfg = certify::CertifyConfig {
        k: a.hyper.k,
        r_factor: a.r_factor,
        delta: a.delta,
        restarts: a.restarts,
        max_attempts: a.max_attempts,
        fit,
    };
    let (rep, factors) = certify::run_certified_fit(&g, &cfg)?;
    if let Some(out) = &a.out {
        io::save_ibg(&factors, rep.gamma, rep.alpha, rep.beta, out)?;
        report("factors", out.display());
    }
    report("k", rep.k);
    report("r_factor", rep.r_factor);
    report("delta", rep.delta);
    report("gamma", rep.gamma);
    report("m", rep.m);
    report("eta_m", format!("{:.10e}", rep.eta_m));
    report("eta_m1", format!("{:.10e}", rep.eta_m1));
    report("det_bound", format!("{:.10e}", rep.det_bound));
    report("prob_bound", format!("{:.10e}", rep.prob_bound));
    report("attempts", rep.attempts);
    report("accepted", rep.accepted);
    Ok(if rep.accepted { 0 } else { 1 })
}

fn cmd_init(a: InitArgs) -> Result<i32> {
    let g = a.graph.load()?;
    if a.k == 0 || a.k % 4 != 0 {
        return Err(IbgError::Validation(format!(
            "K must be a positive multiple of 4, got {}",
            a.k
        )));
    }
    let sparse = svd::SparseMatrix::from_graph(&g);
    let triplets = svd::mc_svd(&sparse, a.k / 4, a.svd_iters, a.svd_sample_ratio, a.seed)?;
    let factors = svd::init_from_svd(&triplets, a.k, g.feature_dim())?;
    let has_signal = g.feature_dim() > 0;
    let alpha = if has_signal { 0.5 } else { 1.0 };
    io::save_ibg(&factors, a.gamma, alpha, 1.0 - alpha, &a.out)?;
    report("n", g.num_nodes());
    report("k", a.k);
    for (i, s) in triplets.sigma.iter().enumerate() {
        report(&format!("sigma_{}", i + 1), format!("{s:.10e}"));
    }
    for (i, s) in triplets.sigma_spread.iter().enumerate() {
        report(&format!("sigma_spread_{}", i + 1), format!("{s:.10e}"));
    }
    report("factors", a.out.display());
    Ok(0)
}

fn cmd_train(a: TrainArgs) -> Result<i32> {
    let mut g = a.graph.load()?;
    if a.graph.signal.is_none() {
        return Err(IbgError::Validation(
            "train requires --signal node features".into(),
        ));
    }
    let labels = io::load_labels(&a.labels, g.num_nodes())?;
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    g.set_labels(labels)?;
    let masks = io::load_masks(&a.masks, g.num_nodes())?;
    let loaded = io::load_ibg(&a.factors)?;
    let cfg = nn::NnConfig {
        layers: a.layers,
        hidden: a.hidden,
        classes,
        deepsets: a.deepsets,
        residual: a.residual,
        jk: match a.jk {
            JkFlag::None => nn::Jk::None,
            JkFlag::Max => nn::Jk::Max,
            JkFlag::Cat => nn::Jk::Cat,
        },
        dropout: a.dropout,
        lr: a.lr,
        epochs: a.epochs,
        seed: a.seed,
    };
    let (metrics, model) = nn::train_node_classifier(&g, &loaded.factors, &cfg, &masks)?;
    if let Some(out) = &a.out {
        let cache = nn::forward(
            &model,
            g.signal(),
            &loaded.factors.u(),
            &loaded.factors.v(),
            0.0,
            None,
        )?;
        let mut w = BufWriter::new(File::create(out)?);
        for i in 0..g.num_nodes() {
            let row = cache.logits.row(i);
            let pred = row
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .map_or(0, |(c, _)| c);
            writeln!(w, "{pred}")?;
        }
        w.flush()?;
        report("predictions", out.display());
    }
    report("classes", classes);
    report("train_acc", format!("{:.6}", metrics.train_acc));
    report("val_acc", format!("{:.6}", metrics.val_acc));
    report("test_acc", format!("{:.6}", metrics.test_acc));
    report(
        "loss_final",
        format!("{:.10e}", metrics.loss_trace.last().copied().unwrap_or(f64::NAN)),
    );
    Ok(0)
}

fn write_names(path: &Path, names: &[String]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (i, name) in names.iter().enumerate() {
        writeln!(w, "{i} {name}")?;
    }
    w.flush()?;
    Ok(())
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn cmd_kg_train(a: KgTrainArgs) -> Result<i32> {
    let (graph, ents, rels) =
        kg::load_triple_files(&a.train, a.valid.as_deref(), a.test.as_deref())?;
    let cfg = kg::IbgeConfig {
        k: a.k,
        gamma: a.gamma,
        margin: a.margin,
        neg_samples: a.neg_samples,
        lr: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        seed: a.seed,
    };
    let (factors, trace) = kg::train(&graph, &cfg)?;
    kg::save_ibge(&factors, cfg.gamma, cfg.margin, &a.out)?;
    write_names(&with_suffix(&a.out, ".entities"), &ents)?;
    write_names(&with_suffix(&a.out, ".relations"), &rels)?;
    report("entities", graph.n_entities);
    report("relations", graph.n_relations);
    report("train_triples", graph.num_train());
    report("loss_initial", format!("{:.10e}", trace.first().copied().unwrap_or(f64::NAN)));
    report("loss_final", format!("{:.10e}", trace.last().copied().unwrap_or(f64::NAN)));
    if !graph.valid.is_empty() {
        let m = kg::evaluate_ranking(&factors, &graph, cfg.gamma, &graph.valid.clone(), true)?;
        report("valid_mrr", format!("{:.6}", m.mrr));
        report("valid_hits1", format!("{:.6}", m.hits1));
        report("valid_hits10", format!("{:.6}", m.hits10));
    }
    report("model", a.out.display());
    Ok(0)
}

fn cmd_kg_eval(a: KgEvalArgs) -> Result<i32> {
    let loaded = kg::load_ibge(&a.model)?;
    let (graph, _, _) =
        kg::load_triple_files(&a.train, a.valid.as_deref(), a.test.as_deref())?;
    if graph.n_entities != loaded.factors.ulogit.nrows()
        || graph.n_relations != loaded.factors.m.ncols()
    {
        return Err(IbgError::Shape(format!(
            "model is for {} entities x {} relations, triples define {} x {}",
            loaded.factors.ulogit.nrows(),
            loaded.factors.m.ncols(),
            graph.n_entities,
            graph.n_relations
        )));
    }
    let eval = match a.split {
        EvalSplit::Valid => graph.valid.clone(),
        EvalSplit::Test => graph.test.clone(),
    };
    let m = kg::evaluate_ranking(&loaded.factors, &graph, loaded.gamma, &eval, !a.raw)?;
    report("split", match a.split {
        EvalSplit::Valid => "valid",
        EvalSplit::Test => "test",
    });
    report("filtered", !a.raw);
    report("queries", m.queries);
    report("mrr", format!("{:.6}", m.mrr));
    report("hits1", format!("{:.6}", m.hits1));
    report("hits10", format!("{:.6}", m.hits10));
    Ok(0)
}

fn cmd_cutnorm(a: CutnormArgs) -> Result<i32> {
    let g = a.graph.load()?;
    if g.num_nodes() > a.max_n {
        return Err(IbgError::SizeGuard(format!(
            "exact cut norm limited to N <= {}, got {}",
            a.max_n,
            g.num_nodes()
        )));
    }
    let w = norms::densify_weights(g.num_nodes(), g.num_edges(), a.gamma)?;
    report("n", g.num_nodes());
    report("edges", g.num_edges());
    report("gamma", a.gamma);
    match &a.factors {
        None => {
            let q = norms::dense_weights(&g, &w);
            let value = norms::exact_matrix_cut_norm(&g.dense_adjacency(), &q)?;
            report("cut_norm", format!("{:.10e}", value));
        }
        Some(path) => {
            let loaded = io::load_ibg(path)?;
            let (c, p) = loaded.factors.synthesize()?;
            let p = if g.feature_dim() == 0 {
                Array2::zeros((g.num_nodes(), 0))
            } else {
                p
            };
            let sim = norms::densifying_cut_similarity(
                &g,
                &c,
                &p,
                a.gamma,
                loaded.alpha,
                loaded.beta,
            )?;
            report("cut_similarity", format!("{:.10e}", sim));
        }
    }
    Ok(0)
}

fn parse_blocks(spec: &str) -> Result<Vec<usize>> {
    let bad = || IbgError::Validation(format!("--blocks must look like 2x200, got '{spec}'"));
    let (count, size) = spec.split_once(['x', 'X']).ok_or_else(bad)?;
    let count: usize = count.parse().map_err(|_| bad())?;
    let size: usize = size.parse().map_err(|_| bad())?;
    if count == 0 || size == 0 {
        return Err(bad());
    }
    Ok(vec![size; count])
}

fn cmd_gen_sbm(a: GenSbmArgs) -> Result<i32> {
    let block_sizes = parse_blocks(&a.blocks)?;
    let b = block_sizes.len();
    let probs = Array2::from_shape_fn((b, b), |(i, j)| if i == j { a.pin } else { a.pout });
    let means = Array2::from_shape_fn((b, b), |(i, j)| if i == j { 1.0 } else { -1.0 });
    let spec = SbmSpec {
        block_sizes: block_sizes.clone(),
        probs,
        means,
        noise: a.noise,
        seed: a.seed,
        self_loops: false,
    };
    let g = graph::generate_sbm(&spec)?;
    let n = g.num_nodes();

    let mut w = BufWriter::new(File::create(with_suffix(&a.out, ".edges"))?);
    writeln!(w, "# nodes {n}")?;
    for (i, j) in g.edges() {
        writeln!(w, "{i} {j}")?;
    }
    w.flush()?;

    let mut w = BufWriter::new(File::create(with_suffix(&a.out, ".signal"))?);
    for row in g.signal().rows() {
        io::write_row(&mut w, row.iter().copied())?;
    }
    w.flush()?;

    let mut block_of = Vec::with_capacity(n);
    for (bi, &size) in block_sizes.iter().enumerate() {
        block_of.extend(std::iter::repeat(bi).take(size));
    }
    let mut w = BufWriter::new(File::create(with_suffix(&a.out, ".labels"))?);
    for &bi in &block_of {
        writeln!(w, "{bi}")?;
    }
    w.flush()?;

    // Fixed 3/1/1 round-robin split keeps every block represented.
    let mut w = BufWriter::new(File::create(with_suffix(&a.out, ".masks"))?);
    for i in 0..n {
        writeln!(
            w,
            "{}",
            match i % 5 {
                3 => "val",
                4 => "test",
                _ => "train",
            }
        )?;
    }
    w.flush()?;

    report("n", n);
    report("edges", g.num_edges());
    report("blocks", b);
    report("out", a.out.display());
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_spec_parsing() {
        assert_eq!(parse_blocks("2x200").unwrap(), vec![200, 200]);
        assert_eq!(parse_blocks("3x5").unwrap(), vec![5, 5, 5]);
        assert!(parse_blocks("2x0").is_err());
        assert!(parse_blocks("200").is_err());
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
