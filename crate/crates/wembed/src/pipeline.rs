//! Pair-dataset generation with exact labels, train/val/test splitting,
//! minibatch training with validation-based early stopping, evaluation
//! metrics, and throughput benchmarks.

use crate::autodiff::{AdamConfig, AdamState, Tensor};
use crate::exact::{verify_optimality, w2_exact, ExactError};
use crate::formats::crc32::crc32;
use crate::hist::{GroundCost, Histogram};
use crate::model::{ModelError, NetworkParams};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("collection is empty")]
    EmptyCollection,
    #[error("pair references index {0} outside collection of {1}")]
    IndexOutOfRange(usize, usize),
    #[error("split fractions invalid: {0}")]
    BadSplit(String),
    #[error("optimality certificate rejected for pair {index}: {detail}")]
    CertificateRejected { index: usize, detail: String },
    #[error("non-finite {term} loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        term: &'static str,
    },
    #[error("test set is empty")]
    EmptyTestSet,
    #[error(transparent)]
    Hist(#[from] crate::hist::HistError),
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One labeled training example: two collection indices and their exact
/// squared 2-Wasserstein distance in pixel^2 units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSample {
    pub idx1: usize,
    pub idx2: usize,
    pub y: f64,
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Weight of the reconstruction (KL) term.
    pub lambda: f64,
    /// Weight of the smoothed l_1/2 sparsity term on reconstructions.
    pub sparsity_weight: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            sparsity_weight: 1e-3,
            batch_size: 128,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Train/val/test fractions; must each lie in (0,1) and sum to 1.
#[derive(Debug, Clone, Copy)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.7,
            val_fraction: 0.2,
            test_fraction: 0.1,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), PipelineError> {
        let fs = [self.train_fraction, self.val_fraction, self.test_fraction];
        if fs.iter().any(|&f| !(0.0..1.0).contains(&f) || f == 0.0) {
            return Err(PipelineError::BadSplit(format!(
                "each fraction must lie in (0,1), got {fs:?}"
            )));
        }
        let sum: f64 = fs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(PipelineError::BadSplit(format!("fractions sum to {sum}")));
        }
        Ok(())
    }
}

/// Per-epoch loss bookkeeping; `to_text` renders one tab-separated line
/// per epoch: epoch, train_dist, train_kl, train_sparse, val_total.
#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_dist: f64,
    pub train_kl: f64,
    pub train_sparse: f64,
    pub val_total: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
}

impl TrainingReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&format!(
                "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\n",
                e.epoch, e.train_dist, e.train_kl, e.train_sparse, e.val_total
            ));
        }
        out
    }
}

/// Held-out regression quality of the embedding distance predictor.
#[derive(Debug, Clone, Copy)]
pub struct Metrics {
    pub mse: f64,
    pub relative_mse: f64,
    pub pearson_correlation: f64,
    /// True when either predictions or labels were constant, which makes
    /// the correlation undefined; it is then reported as 0.
    pub degenerate: bool,
}

/// Checksum tying a pair file to the histogram collection it indexes:
/// CRC-32 over dims and the little-endian mass bytes of every histogram.
pub fn collection_checksum(collection: &[Histogram]) -> u32 {
    let mut bytes = Vec::new();
    for h in collection {
        bytes.extend_from_slice(&(h.height() as u32).to_le_bytes());
        bytes.extend_from_slice(&(h.width() as u32).to_le_bytes());
        for &m in h.mass() {
            bytes.extend_from_slice(&m.to_le_bytes());
        }
    }
    crc32(&bytes)
}

/// Draws `n_pairs` index pairs uniformly with replacement under `seed` and
/// labels each with the exact solver, verifying every certificate. Labels
/// are computed across `workers` threads; the output order follows the
/// draw order regardless of scheduling.
pub fn generate_pairs(
    collection: &[Histogram],
    n_pairs: usize,
    seed: u64,
    workers: usize,
) -> Result<Vec<PairSample>, PipelineError> {
    if collection.is_empty() {
        return Err(PipelineError::EmptyCollection);
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let draws: Vec<(usize, usize)> = (0..n_pairs)
        .map(|_| {
            (
                rng.gen_range(0..collection.len()),
                rng.gen_range(0..collection.len()),
            )
        })
        .collect();
    let cost = GroundCost::new(collection[0].height(), collection[0].width())?;
    let label = |(index, &(i, j)): (usize, &(usize, usize))| -> Result<PairSample, PipelineError> {
        let (y, plan, cert) = w2_exact(&collection[i], &collection[j])?;
        let report = verify_optimality(&plan, &cert, &cost);
        if !report.is_ok() {
            return Err(PipelineError::CertificateRejected {
                index,
                detail: report.failures.join("; "),
            });
        }
        Ok(PairSample { idx1: i, idx2: j, y })
    };
    if workers <= 1 {
        draws.iter().enumerate().map(label).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        pool.install(|| draws.par_iter().enumerate().map(label).collect())
    }
}

/// Seeded shuffle then contiguous cut into train/val/test. Rounded sizes:
/// fractions (0.7, 0.2, 0.1) on 10 pairs give (7, 2, 1).
pub fn split(
    pairs: &[PairSample],
    spec: SplitSpec,
    seed: u64,
) -> Result<(Vec<PairSample>, Vec<PairSample>, Vec<PairSample>), PipelineError> {
    spec.validate()?;
    let mut shuffled = pairs.to_vec();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n = shuffled.len();
    let n_train = ((spec.train_fraction * n as f64).round() as usize).min(n);
    let n_val = ((spec.val_fraction * n as f64).round() as usize).min(n - n_train);
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok((shuffled, val, test))
}

fn check_indices(pairs: &[PairSample], n: usize) -> Result<(), PipelineError> {
    for p in pairs {
        for idx in [p.idx1, p.idx2] {
            if idx >= n {
                return Err(PipelineError::IndexOutOfRange(idx, n));
            }
        }
    }
    Ok(())
}

fn input_tensor(h: &Histogram) -> Tensor {
    Tensor::new(vec![1, h.height(), h.width()], h.mass().to_vec()).expect("histogram tensor")
}

struct SampleLoss {
    dist: f64,
    kl: f64,
    sparse: f64,
}

impl SampleLoss {
    fn total(&self, cfg: &TrainConfig) -> f64 {
        self.dist + cfg.lambda * self.kl + cfg.sparsity_weight * self.sparse
    }
}

fn kl_div(target: &[f64], recon: &[f64]) -> f64 {
    target
        .iter()
        .zip(recon)
        .filter(|(&t, _)| t > 0.0)
        .map(|(&t, &r)| t * (t.ln() - r.ln()))
        .sum()
}

fn sparsity_score(x: &[f64]) -> f64 {
    x.iter().map(|&v| (v + crate::autodiff::SPARSITY_DELTA).sqrt()).sum()
}

/// Forward-only loss of one pair (used for validation).
fn forward_loss(
    params: &NetworkParams,
    pair: &PairSample,
    collection: &[Histogram],
    cfg: &TrainConfig,
) -> Result<SampleLoss, PipelineError> {
    let (a, b) = (&collection[pair.idx1], &collection[pair.idx2]);
    let ea = params.embed(a)?;
    let eb = params.embed(b)?;
    let d = ea.squared_distance(&eb);
    let dist = (d - pair.y) * (d - pair.y);
    let mut kl = 0.0;
    let mut sparse = 0.0;
    if cfg.lambda > 0.0 || cfg.sparsity_weight > 0.0 {
        let ra = params.decode(&ea)?;
        let rb = params.decode(&eb)?;
        if cfg.lambda > 0.0 {
            kl = kl_div(a.mass(), ra.mass()) + kl_div(b.mass(), rb.mass());
        }
        sparse = sparsity_score(ra.mass()) + sparsity_score(rb.mass());
    }
    Ok(SampleLoss { dist, kl, sparse })
}

/// Tape forward + backward of one pair; accumulates parameter gradients
/// into `acc` in slot order and returns the loss terms.
fn backward_pair(
    params: &NetworkParams,
    pair: &PairSample,
    collection: &[Histogram],
    cfg: &TrainConfig,
    acc: &mut [Option<Tensor>],
) -> Result<SampleLoss, PipelineError> {
    let (a, b) = (&collection[pair.idx1], &collection[pair.idx2]);
    let mut tape = crate::autodiff::Tape::new();
    let ia = tape.constant(input_tensor(a));
    let ib = tape.constant(input_tensor(b));
    let ea = params.embed_on_tape(&mut tape, ia)?;
    let eb = params.embed_on_tape(&mut tape, ib)?;
    let dist_var = tape.loss_distance(ea, eb, pair.y).map_err(ModelError::from)?;
    let dist = tape.value(dist_var).data[0];
    let mut kl = 0.0;
    let mut sparse = 0.0;
    let mut root = dist_var;
    if cfg.lambda > 0.0 || cfg.sparsity_weight > 0.0 {
        let fa = tape.reshape(ia, vec![a.len()]).map_err(ModelError::from)?;
        let fb = tape.reshape(ib, vec![b.len()]).map_err(ModelError::from)?;
        let ra = params.decode_on_tape(&mut tape, ea)?;
        let rb = params.decode_on_tape(&mut tape, eb)?;
        if cfg.lambda > 0.0 {
            let ka = tape.loss_kl(fa, ra).map_err(ModelError::from)?;
            let kb = tape.loss_kl(fb, rb).map_err(ModelError::from)?;
            let ksum = tape.add(ka, kb).map_err(ModelError::from)?;
            kl = tape.value(ksum).data[0];
            let scaled = tape.scale(ksum, cfg.lambda);
            root = tape.add(root, scaled).map_err(ModelError::from)?;
        }
        let sa = tape.loss_sparsity(ra);
        let sb = tape.loss_sparsity(rb);
        let ssum = tape.add(sa, sb).map_err(ModelError::from)?;
        sparse = tape.value(ssum).data[0];
        if cfg.sparsity_weight > 0.0 {
            let scaled = tape.scale(ssum, cfg.sparsity_weight);
            root = tape.add(root, scaled).map_err(ModelError::from)?;
        }
    }
    let grads = tape.backward(root, params.n_params());
    for (slot, g) in grads.into_iter().enumerate() {
        let Some(g) = g else { continue };
        match &mut acc[slot] {
            Some(t) => {
                for (d, s) in t.data.iter_mut().zip(&g.data) {
                    *d += s;
                }
            }
            dst @ None => *dst = Some(g),
        }
    }
    Ok(SampleLoss { dist, kl, sparse })
}

/// Minibatch Adam training of the siamese objective
/// `(||e1-e2||^2 - y)^2 + lambda·KL + sparsity_weight·l_1/2`, with
/// per-epoch reshuffling and early stopping on total validation loss.
/// Returns the parameters of the best validation epoch.
pub fn train(
    params: NetworkParams,
    train_pairs: &[PairSample],
    val_pairs: &[PairSample],
    collection: &[Histogram],
    cfg: &TrainConfig,
) -> Result<(NetworkParams, TrainingReport), PipelineError> {
    if collection.is_empty() {
        return Err(PipelineError::EmptyCollection);
    }
    check_indices(train_pairs, collection.len())?;
    check_indices(val_pairs, collection.len())?;
    assert!(cfg.batch_size > 0 && cfg.max_epochs > 0 && cfg.patience > 0);

    let mut params = params;
    let mut adam = AdamState::new(params.tensors());
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut report = TrainingReport::default();
    let mut best: Option<(f64, NetworkParams, usize)> = None;
    let mut since_best = 0usize;

    for epoch in 0..cfg.max_epochs {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        order.shuffle(&mut rng);
        let (mut sum_dist, mut sum_kl, mut sum_sparse) = (0.0, 0.0, 0.0);
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut acc: Vec<Option<Tensor>> = vec![None; params.n_params()];
            for &pi in chunk {
                let loss = backward_pair(&params, &train_pairs[pi], collection, cfg, &mut acc)?;
                if !loss.total(cfg).is_finite() {
                    let term = if !loss.dist.is_finite() {
                        "distance"
                    } else if !loss.kl.is_finite() {
                        "reconstruction"
                    } else {
                        "sparsity"
                    };
                    return Err(PipelineError::NonFiniteLoss {
                        epoch,
                        batch: batch_no,
                        term,
                    });
                }
                sum_dist += loss.dist;
                sum_kl += loss.kl;
                sum_sparse += loss.sparse;
            }
            let inv = 1.0 / chunk.len() as f64;
            for g in acc.iter_mut().flatten() {
                for v in &mut g.data {
                    *v *= inv;
                }
            }
            adam.step(params.tensors_mut(), &acc, &cfg.adam)
                .map_err(ModelError::from)?;
        }

        let n_train = train_pairs.len().max(1) as f64;
        let mut val_total = 0.0;
        for p in val_pairs {
            let l = forward_loss(&params, p, collection, cfg)?;
            val_total += l.total(cfg);
        }
        val_total /= val_pairs.len().max(1) as f64;
        if !val_total.is_finite() {
            return Err(PipelineError::NonFiniteLoss {
                epoch,
                batch: 0,
                term: "validation",
            });
        }
        report.epochs.push(EpochRecord {
            epoch,
            train_dist: sum_dist / n_train,
            train_kl: sum_kl / n_train,
            train_sparse: sum_sparse / n_train,
            val_total,
        });

        if best.as_ref().is_none_or(|(b, _, _)| val_total < *b) {
            best = Some((val_total, params.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    let (best_val, best_params, best_epoch) = best.expect("at least one epoch ran");
    report.best_epoch = best_epoch;
    report.best_val = best_val;
    Ok((best_params, report))
}

/// Held-out MSE, relative MSE (mse / mean y^2) and Pearson correlation of
/// predicted versus exact squared distances.
pub fn evaluate(
    params: &NetworkParams,
    test_pairs: &[PairSample],
    collection: &[Histogram],
) -> Result<Metrics, PipelineError> {
    if test_pairs.is_empty() {
        return Err(PipelineError::EmptyTestSet);
    }
    check_indices(test_pairs, collection.len())?;
    let mut preds = Vec::with_capacity(test_pairs.len());
    let mut ys = Vec::with_capacity(test_pairs.len());
    for p in test_pairs {
        preds.push(params.predict_w2(&collection[p.idx1], &collection[p.idx2])?);
        ys.push(p.y);
    }
    let n = preds.len() as f64;
    let mse = preds
        .iter()
        .zip(&ys)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n;
    let mean_y2 = ys.iter().map(|y| y * y).sum::<f64>() / n;
    let relative_mse = if mean_y2 > 0.0 { mse / mean_y2 } else { 0.0 };
    let mp = preds.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut cov, mut vp, mut vy) = (0.0, 0.0, 0.0);
    for (p, y) in preds.iter().zip(&ys) {
        cov += (p - mp) * (y - my);
        vp += (p - mp) * (p - mp);
        vy += (y - my) * (y - my);
    }
    let degenerate = vp <= 0.0 || vy <= 0.0;
    let pearson_correlation = if degenerate { 0.0 } else { cov / (vp.sqrt() * vy.sqrt()) };
    Ok(Metrics {
        mse,
        relative_mse,
        pearson_correlation,
        degenerate,
    })
}

/// How distances are produced in a throughput benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchMode {
    /// Embed both elements of every pair, then one distance per pair.
    Indep,
    /// Embed each unique histogram once, then all pairwise distances.
    Pairwise,
    /// Exact network-simplex solve per pair.
    ExactLp,
}

#[derive(Debug, Clone, Copy)]
pub struct BenchReport {
    pub distances: usize,
    pub seconds: f64,
    /// Distances per second of wall clock, embedding cost included.
    pub rate: f64,
}

pub fn bench_throughput(
    params: &NetworkParams,
    pairs: &[PairSample],
    collection: &[Histogram],
    mode: BenchMode,
) -> Result<BenchReport, PipelineError> {
    if pairs.is_empty() {
        return Err(PipelineError::EmptyTestSet);
    }
    check_indices(pairs, collection.len())?;
    let start = std::time::Instant::now();
    let mut sink = 0.0f64;
    let distances = match mode {
        BenchMode::Indep => {
            for p in pairs {
                sink += params.predict_w2(&collection[p.idx1], &collection[p.idx2])?;
            }
            pairs.len()
        }
        BenchMode::Pairwise => {
            let mut unique: Vec<usize> = pairs.iter().flat_map(|p| [p.idx1, p.idx2]).collect();
            unique.sort_unstable();
            unique.dedup();
            let embeds: Vec<_> = unique
                .iter()
                .map(|&i| params.embed(&collection[i]))
                .collect::<Result<_, _>>()?;
            for a in &embeds {
                for b in &embeds {
                    sink += a.squared_distance(b);
                }
            }
            embeds.len() * embeds.len()
        }
        BenchMode::ExactLp => {
            for p in pairs {
                let (y, _, _) = w2_exact(&collection[p.idx1], &collection[p.idx2])?;
                sink += y;
            }
            pairs.len()
        }
    };
    let seconds = start.elapsed().as_secs_f64().max(1e-12);
    std::hint::black_box(sink);
    Ok(BenchReport {
        distances,
        seconds,
        rate: distances as f64 / seconds,
    })
}
