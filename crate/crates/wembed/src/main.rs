//! Command-line front end: pair generation, training, evaluation,
//! benchmarking, and embedded-space analytics over IDX/NPY datasets.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use wembed::analytics::{
    barycenter, euclidean_mean, interpolate, pga, pga_walk, sharpness_score, BarycenterWeights,
};
use wembed::exact::{verify_optimality, w2_exact};
use wembed::formats::config::Config;
use wembed::formats::idx::{parse_idx_images, parse_idx_labels};
use wembed::formats::npy::parse_npy_bitmaps;
use wembed::formats::pairfile;
use wembed::formats::pgm::emit_image_grid;
use wembed::hist::{GroundCost, Histogram};
use wembed::model::{ArchitectureSpec, NetworkParams};
use wembed::pipeline::{
    bench_throughput, collection_checksum, evaluate, generate_pairs, split, train, BenchMode,
    PairSample, PipelineError, SplitSpec, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "wembed",
    about = "Euclidean embeddings of 2-D histograms whose squared distances approximate squared 2-Wasserstein distances",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random index pairs and label them with exact squared
    /// 2-Wasserstein distances.
    GenPairs(GenPairsArgs),
    /// Train the siamese encoder/decoder on a labeled pair file.
    Train(TrainArgs),
    /// Report MSE, relative MSE and Pearson correlation on a pair file.
    Eval(EvalArgs),
    /// Measure distance throughput of the model and the exact solver.
    Bench(BenchArgs),
    /// Decode the weighted mean of embeddings into a histogram image.
    Barycenter(BarycenterArgs),
    /// Render the decoded segment between two embedded histograms.
    Interpolate(InterpolateArgs),
    /// Principal-direction walk images of the embedding cloud.
    Pga(PgaArgs),
    /// Evaluate a checkpoint against pairs from a different dataset.
    CrossEval(EvalArgs),
    /// Print the exact squared 2-Wasserstein distance of two images with
    /// its optimality-certificate status.
    Exact(ExactArgs),
}

#[derive(Args)]
struct GenPairsArgs {
    /// IDX or NPY image file.
    #[arg(long)]
    dataset: PathBuf,
    /// Number of pairs to draw (with replacement).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Parallel solver threads.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Output pair file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Labeled pair file from gen-pairs.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// key=value config file; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_checkpoint: PathBuf,
    /// Weight of the reconstruction (KL) loss.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    sparsity_weight: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    max_epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    train_frac: Option<f64>,
    #[arg(long)]
    val_frac: Option<f64>,
    #[arg(long)]
    test_frac: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum BenchModeArg {
    /// Embed both elements of every pair.
    Indep,
    /// Embed unique histograms once, then all pairwise distances.
    Pairwise,
    /// Exact network-simplex solve per pair.
    Lp,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum)]
    mode: BenchModeArg,
}

#[derive(Args)]
struct BarycenterArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated image indices; mutually exclusive with --class.
    #[arg(long, value_delimiter = ',', conflicts_with = "class")]
    indices: Vec<usize>,
    /// Comma-separated weights matching --indices; uniform when omitted.
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    /// Use all images of this label (requires --labels).
    #[arg(long)]
    class: Option<u8>,
    /// IDX label file for --class.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Cap on class samples used.
    #[arg(long, default_value_t = 200)]
    count: usize,
    /// Output PGM: input samples' Euclidean mean, then the barycenter.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InterpolateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    idx_a: usize,
    #[arg(long)]
    idx_b: usize,
    #[arg(long, default_value_t = 7)]
    steps: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PgaArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Number of principal directions to extract.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Which direction to walk along.
    #[arg(long, default_value_t = 0)]
    component: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExactArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    idx_a: usize,
    #[arg(long)]
    idx_b: usize,
}

/// Failure with its process exit code: 1 usage, 2 data, 3 numerical.
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self { code: 1, message: msg.into() }
    }
    fn data(msg: impl std::fmt::Display) -> Self {
        Self { code: 2, message: msg.to_string() }
    }
    fn numerical(msg: impl std::fmt::Display) -> Self {
        Self { code: 3, message: msg.to_string() }
    }
}

fn pipeline_err(e: PipelineError) -> CliError {
    match &e {
        PipelineError::NonFiniteLoss { .. } | PipelineError::CertificateRejected { .. } => {
            CliError::numerical(e)
        }
        PipelineError::Exact(inner) => match inner {
            wembed::exact::ExactError::PivotLimit => CliError::numerical(e),
            _ => CliError::data(e),
        },
        _ => CliError::data(e),
    }
}

fn load_dataset(path: &Path) -> Result<Vec<Histogram>, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let (hists, skipped) = if bytes.starts_with(b"\x93NUMPY") {
        let parsed = parse_npy_bitmaps(&bytes).map_err(CliError::data)?;
        (parsed.histograms, parsed.skipped_all_zero.len())
    } else {
        let parsed = parse_idx_images(&bytes).map_err(CliError::data)?;
        (parsed.histograms, parsed.skipped_all_zero.len())
    };
    if skipped > 0 {
        eprintln!("warning: skipped {skipped} all-zero image(s)");
    }
    if hists.is_empty() {
        return Err(CliError::data("dataset contains no usable images"));
    }
    Ok(hists)
}

fn load_pairs(path: &Path, collection: &[Histogram]) -> Result<Vec<PairSample>, CliError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    let expected = collection_checksum(collection);
    let (pairs, _) = pairfile::parse_pairs(&bytes, Some(expected)).map_err(CliError::data)?;
    Ok(pairs)
}

fn load_checkpoint(path: &Path) -> Result<NetworkParams, CliError> {
    NetworkParams::load_checkpoint(path).map_err(CliError::data)
}

fn print_metrics(m: &wembed::pipeline::Metrics) {
    println!("mse\t{:.6e}", m.mse);
    println!("relative_mse\t{:.6e}", m.relative_mse);
    println!("pearson_correlation\t{:.6}", m.pearson_correlation);
    if m.degenerate {
        println!("degenerate\ttrue");
    }
}

fn build_train_config(a: &TrainArgs) -> Result<(TrainConfig, SplitSpec, usize), CliError> {
    let cfg_file = match &a.config {
        Some(p) => Config::load(p).map_err(CliError::data)?,
        None => Config::default(),
    };
    let mut cfg = TrainConfig {
        seed: a.seed,
        ..Default::default()
    };
    let mut splits = SplitSpec::default();
    let mut embed_dim = 50usize;
    // Config file first, then command-line overrides.
    macro_rules! take {
        ($field:expr, $getter:ident, $key:literal, $flag:expr) => {
            if let Some(v) = cfg_file.$getter($key).map_err(CliError::data)? {
                $field = v;
            }
            if let Some(v) = $flag {
                $field = v;
            }
        };
    }
    take!(cfg.lambda, get_f64, "lambda", a.lambda);
    take!(cfg.sparsity_weight, get_f64, "sparsity_weight", a.sparsity_weight);
    take!(cfg.batch_size, get_usize, "batch_size", a.batch_size);
    take!(cfg.max_epochs, get_usize, "max_epochs", a.max_epochs);
    take!(cfg.patience, get_usize, "patience", a.patience);
    take!(cfg.adam.lr, get_f64, "lr", a.lr);
    take!(cfg.adam.beta1, get_f64, "beta1", None::<f64>);
    take!(cfg.adam.beta2, get_f64, "beta2", None::<f64>);
    take!(cfg.adam.eps, get_f64, "adam_eps", None::<f64>);
    take!(embed_dim, get_usize, "embed_dim", a.embed_dim);
    take!(splits.train_fraction, get_f64, "train_fraction", a.train_frac);
    take!(splits.val_fraction, get_f64, "val_fraction", a.val_frac);
    take!(splits.test_fraction, get_f64, "test_fraction", a.test_frac);
    if let Some(v) = cfg_file.get_u64("seed").map_err(CliError::data)? {
        cfg.seed = v;
    }
    if a.seed != 0 {
        cfg.seed = a.seed;
    }
    if cfg.batch_size == 0 || cfg.max_epochs == 0 || cfg.patience == 0 {
        return Err(CliError::usage("batch_size, max_epochs and patience must be positive"));
    }
    Ok((cfg, splits, embed_dim))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenPairs(a) => {
            let coll = load_dataset(&a.dataset)?;
            let pairs = generate_pairs(&coll, a.n, a.seed, a.workers).map_err(pipeline_err)?;
            let bytes = pairfile::write_pairs(&pairs, collection_checksum(&coll));
            std::fs::write(&a.out, bytes).map_err(CliError::data)?;
            println!("wrote {} pairs to {}", pairs.len(), a.out.display());
            Ok(())
        }
        Command::Train(a) => {
            let coll = load_dataset(&a.dataset)?;
            let pairs = load_pairs(&a.pairs, &coll)?;
            let (cfg, splits, embed_dim) = build_train_config(&a)?;
            let (tr, va, te) = split(&pairs, splits, cfg.seed).map_err(pipeline_err)?;
            if va.is_empty() || te.is_empty() {
                eprintln!("warning: empty validation or test split");
            }
            let spec = ArchitectureSpec::for_image(coll[0].height(), coll[0].width(), embed_dim);
            let params = NetworkParams::init(spec, cfg.seed);
            let (best, report) = train(params, &tr, &va, &coll, &cfg).map_err(pipeline_err)?;
            print!("{}", report.to_text());
            println!("# best epoch {} val {:.6e}", report.best_epoch, report.best_val);
            if !te.is_empty() {
                let m = evaluate(&best, &te, &coll).map_err(pipeline_err)?;
                print_metrics(&m);
            }
            best.save_checkpoint(&a.out_checkpoint).map_err(CliError::data)?;
            Ok(())
        }
        Command::Eval(a) | Command::CrossEval(a) => {
            let coll = load_dataset(&a.dataset)?;
            let bytes = std::fs::read(&a.pairs).map_err(CliError::data)?;
            // Cross-evaluation intentionally skips the collection
            // checksum: the pairs may label a foreign dataset.
            let (pairs, _) = pairfile::parse_pairs(&bytes, None).map_err(CliError::data)?;
            let params = load_checkpoint(&a.checkpoint)?;
            let m = evaluate(&params, &pairs, &coll).map_err(pipeline_err)?;
            print_metrics(&m);
            Ok(())
        }
        Command::Bench(a) => {
            let coll = load_dataset(&a.dataset)?;
            let pairs = load_pairs(&a.pairs, &coll)?;
            let params = load_checkpoint(&a.checkpoint)?;
            let mode = match a.mode {
                BenchModeArg::Indep => BenchMode::Indep,
                BenchModeArg::Pairwise => BenchMode::Pairwise,
                BenchModeArg::Lp => BenchMode::ExactLp,
            };
            let r = bench_throughput(&params, &pairs, &coll, mode).map_err(pipeline_err)?;
            println!("distances\t{}", r.distances);
            println!("seconds\t{:.6}", r.seconds);
            println!("rate\t{:.3}", r.rate);
            Ok(())
        }
        Command::Barycenter(a) => {
            let coll = load_dataset(&a.dataset)?;
            let params = load_checkpoint(&a.checkpoint)?;
            let indices: Vec<usize> = if let Some(class) = a.class {
                let labels_path = a
                    .labels
                    .as_ref()
                    .ok_or_else(|| CliError::usage("--class requires --labels"))?;
                let bytes = std::fs::read(labels_path).map_err(CliError::data)?;
                let labels = parse_idx_labels(&bytes).map_err(CliError::data)?;
                labels
                    .iter()
                    .enumerate()
                    .filter(|&(_, &l)| l == class)
                    .map(|(i, _)| i)
                    .take(a.count)
                    .collect()
            } else {
                a.indices.clone()
            };
            if indices.is_empty() {
                return Err(CliError::usage("need --indices or --class with matches"));
            }
            for &i in &indices {
                if i >= coll.len() {
                    return Err(CliError::data(format!("index {i} outside dataset")));
                }
            }
            let weights = if a.weights.is_empty() {
                BarycenterWeights::uniform(indices.len())
            } else {
                BarycenterWeights::new(a.weights.clone())
            }
            .map_err(CliError::usage_or_data)?;
            let selected: Vec<Histogram> = indices.iter().map(|&i| coll[i].clone()).collect();
            let bc = barycenter(&params, &selected, &weights).map_err(CliError::data)?;
            let mean = euclidean_mean(&selected).map_err(CliError::data)?;
            println!("barycenter_sharpness\t{:.6}", sharpness_score(&bc));
            println!("euclidean_mean_sharpness\t{:.6}", sharpness_score(&mean));
            emit_image_grid(&[mean, bc], 2, &a.out).map_err(CliError::data)?;
            println!("wrote {}", a.out.display());
            Ok(())
        }
        Command::Interpolate(a) => {
            let coll = load_dataset(&a.dataset)?;
            let params = load_checkpoint(&a.checkpoint)?;
            for i in [a.idx_a, a.idx_b] {
                if i >= coll.len() {
                    return Err(CliError::data(format!("index {i} outside dataset")));
                }
            }
            if a.steps < 2 {
                return Err(CliError::usage("--steps must be at least 2"));
            }
            let frames =
                interpolate(&params, &coll[a.idx_a], &coll[a.idx_b], a.steps).map_err(CliError::data)?;
            emit_image_grid(&frames, frames.len(), &a.out).map_err(CliError::data)?;
            println!("wrote {}", a.out.display());
            Ok(())
        }
        Command::Pga(a) => {
            let coll = load_dataset(&a.dataset)?;
            let params = load_checkpoint(&a.checkpoint)?;
            let pd = pga(&params, &coll, a.k).map_err(CliError::data)?;
            for (i, v) in pd.variances.iter().enumerate() {
                println!("variance[{i}]\t{v:.6e}");
            }
            let ts = [-2.0, -1.0, 0.0, 1.0, 2.0];
            let frames = pga_walk(&params, &pd, a.component, &ts).map_err(CliError::data)?;
            emit_image_grid(&frames, frames.len(), &a.out).map_err(CliError::data)?;
            println!("wrote {}", a.out.display());
            Ok(())
        }
        Command::Exact(a) => {
            let coll = load_dataset(&a.dataset)?;
            for i in [a.idx_a, a.idx_b] {
                if i >= coll.len() {
                    return Err(CliError::data(format!("index {i} outside dataset")));
                }
            }
            let (y, plan, cert) =
                w2_exact(&coll[a.idx_a], &coll[a.idx_b]).map_err(CliError::numerical)?;
            let cost = GroundCost::new(coll[0].height(), coll[0].width()).map_err(CliError::data)?;
            let report = verify_optimality(&plan, &cert, &cost);
            println!("w2_squared\t{y:.12e}");
            if report.is_ok() {
                println!("certificate: OK");
                Ok(())
            } else {
                println!("certificate: FAILED");
                Err(CliError::numerical(report.failures.join("; ")))
            }
        }
    }
}

impl CliError {
    /// Weight parsing straddles usage/data; bad numbers from the command
    /// line are usage errors.
    fn usage_or_data(e: impl std::fmt::Display) -> Self {
        Self::usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Render help/version normally; everything else is a usage error.
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
