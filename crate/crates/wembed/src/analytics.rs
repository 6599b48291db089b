//! Embedded-space data mining: barycenters as decoded weighted embedding
//! means, displacement-style interpolation, principal component walks,
//! and cross-dataset evaluation.

use crate::hist::Histogram;
use crate::model::{EmbeddingVec, ModelError, NetworkParams};
use crate::pipeline::{evaluate, Metrics, PairSample, PipelineError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("weights invalid: {0}")]
    WeightError(String),
    #[error("need at least {need} samples, got {have}")]
    InsufficientSamples { need: usize, have: usize },
    #[error("component {0} out of range ({1} directions)")]
    IndexError(usize, usize),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Positive weights summing to 1.
#[derive(Debug, Clone)]
pub struct BarycenterWeights {
    alphas: Vec<f64>,
}

impl BarycenterWeights {
    pub fn new(alphas: Vec<f64>) -> Result<Self, AnalyticsError> {
        if alphas.is_empty() {
            return Err(AnalyticsError::WeightError("no weights given".into()));
        }
        if alphas.iter().any(|&a| !(a > 0.0) || !a.is_finite()) {
            return Err(AnalyticsError::WeightError(format!(
                "weights must be positive and finite, got {alphas:?}"
            )));
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AnalyticsError::WeightError(format!("weights sum to {sum}")));
        }
        Ok(Self { alphas })
    }

    pub fn uniform(n: usize) -> Result<Self, AnalyticsError> {
        Self::new(vec![1.0 / n.max(1) as f64; n])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }
}

/// PCA of the embedding cloud: approximate Fréchet mean, orthonormal
/// directions, and nonincreasing variances.
#[derive(Debug, Clone)]
pub struct PrincipalDirections {
    pub mean: EmbeddingVec,
    pub directions: Vec<Vec<f64>>,
    pub variances: Vec<f64>,
}

/// `decode(sum_i alpha_i embed(x_i))`. The weighted sum is accumulated in
/// (weight, index) sorted order so jointly permuting inputs and weights
/// reproduces the output bitwise.
pub fn barycenter(
    params: &NetworkParams,
    hists: &[Histogram],
    w: &BarycenterWeights,
) -> Result<Histogram, AnalyticsError> {
    if hists.len() != w.alphas.len() {
        return Err(AnalyticsError::WeightError(format!(
            "{} weights for {} histograms",
            w.alphas.len(),
            hists.len()
        )));
    }
    let p = params.spec().embed_dim;
    let mut order: Vec<usize> = (0..hists.len()).collect();
    order.sort_by(|&i, &j| {
        w.alphas[i]
            .partial_cmp(&w.alphas[j])
            .unwrap()
            .then(i.cmp(&j))
    });
    let mut acc = vec![0.0; p];
    for i in order {
        let e = params.embed(&hists[i])?;
        for (a, v) in acc.iter_mut().zip(&e.0) {
            *a += w.alphas[i] * v;
        }
    }
    Ok(params.decode(&EmbeddingVec(acc))?)
}

/// Decoded line segment between two embeddings: frames at
/// `t = 0, 1/(steps-1), ..., 1`. Endpoints are exactly the autoencoder
/// reconstructions of the inputs.
pub fn interpolate(
    params: &NetworkParams,
    a: &Histogram,
    b: &Histogram,
    steps: usize,
) -> Result<Vec<Histogram>, AnalyticsError> {
    assert!(steps >= 2, "interpolation needs at least the two endpoints");
    let ea = params.embed(a)?;
    let eb = params.embed(b)?;
    let mut frames = Vec::with_capacity(steps);
    if ea.0 == eb.0 {
        // (1-t)x + tx is not bitwise x for all t; make the degenerate
        // segment exactly constant.
        let frame = params.decode(&ea)?;
        return Ok(vec![frame; steps]);
    }
    for s in 0..steps {
        let t = s as f64 / (steps - 1) as f64;
        let e: Vec<f64> = ea
            .0
            .iter()
            .zip(&eb.0)
            .map(|(x, y)| (1.0 - t) * x + t * y)
            .collect();
        frames.push(params.decode(&EmbeddingVec(e))?);
    }
    Ok(frames)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major,
/// n×n). Returns (eigenvalues, eigenvectors), unsorted; fully
/// deterministic.
pub fn symmetric_eigen(mut a: Vec<f64>, n: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off < 1e-24 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    let eigenvectors: Vec<Vec<f64>> = (0..n)
        .map(|col| (0..n).map(|row| v[row * n + col]).collect())
        .collect();
    (eigenvalues, eigenvectors)
}

/// Top-`k` principal directions of the embedding cloud of `hists`.
/// Deterministic: Jacobi rotations, variances sorted nonincreasing, each
/// eigenvector's first nonzero coordinate made positive.
pub fn pga(
    params: &NetworkParams,
    hists: &[Histogram],
    k: usize,
) -> Result<PrincipalDirections, AnalyticsError> {
    let p = params.spec().embed_dim;
    assert!(k <= p, "cannot extract more directions than embed_dim");
    if hists.len() < k + 1 {
        return Err(AnalyticsError::InsufficientSamples {
            need: k + 1,
            have: hists.len(),
        });
    }
    let embeds: Vec<EmbeddingVec> = hists
        .iter()
        .map(|h| params.embed(h))
        .collect::<Result<_, _>>()?;
    let n = embeds.len() as f64;
    let mut mean = vec![0.0; p];
    for e in &embeds {
        for (m, v) in mean.iter_mut().zip(&e.0) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; p * p];
    for e in &embeds {
        for i in 0..p {
            let di = e.0[i] - mean[i];
            for j in 0..p {
                cov[i * p + j] += di * (e.0[j] - mean[j]) / n;
            }
        }
    }
    let (vals, vecs) = symmetric_eigen(cov, p);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| vals[j].partial_cmp(&vals[i]).unwrap().then(i.cmp(&j)));
    let mut directions = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut d = vecs[i].clone();
        if let Some(&lead) = d.iter().find(|v| v.abs() > 1e-12) {
            if lead < 0.0 {
                for v in &mut d {
                    *v = -*v;
                }
            }
        }
        directions.push(d);
        variances.push(vals[i].max(0.0));
    }
    Ok(PrincipalDirections {
        mean: EmbeddingVec(mean),
        directions,
        variances,
    })
}

/// Decoded walk along one principal direction: frames at
/// `mean + t·sqrt(variance)·direction` for each `t` (standard-deviation
/// units).
pub fn pga_walk(
    params: &NetworkParams,
    pd: &PrincipalDirections,
    component: usize,
    t_values: &[f64],
) -> Result<Vec<Histogram>, AnalyticsError> {
    if component >= pd.directions.len() {
        return Err(AnalyticsError::IndexError(component, pd.directions.len()));
    }
    let sd = pd.variances[component].sqrt();
    let dir = &pd.directions[component];
    let mut frames = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let e: Vec<f64> = pd
            .mean
            .0
            .iter()
            .zip(dir)
            .map(|(m, d)| m + t * sd * d)
            .collect();
        frames.push(params.decode(&EmbeddingVec(e))?);
    }
    Ok(frames)
}

/// Evaluates a model trained on one dataset against pairs from another;
/// identical to [`evaluate`] when the datasets coincide.
pub fn cross_evaluate(
    params: &NetworkParams,
    foreign_pairs: &[PairSample],
    foreign_collection: &[Histogram],
) -> Result<Metrics, PipelineError> {
    evaluate(params, foreign_pairs, foreign_collection)
}

/// Sharpness score: smoothed l_1/2 pseudo-norm of the mass vector (lower
/// is sparser/sharper).
pub fn sharpness_score(h: &Histogram) -> f64 {
    h.mass()
        .iter()
        .map(|&v| (v + crate::autodiff::SPARSITY_DELTA).sqrt())
        .sum()
}

/// Pixelwise Euclidean mean of histograms (the blur baseline barycenters
/// are compared against).
pub fn euclidean_mean(hists: &[Histogram]) -> Result<Histogram, AnalyticsError> {
    if hists.is_empty() {
        return Err(AnalyticsError::InsufficientSamples { need: 1, have: 0 });
    }
    let (h, w) = (hists[0].height(), hists[0].width());
    let mut acc = vec![0.0; h * w];
    for x in hists {
        for (a, v) in acc.iter_mut().zip(x.mass()) {
            *a += v / hists.len() as f64;
        }
    }
    Ok(Histogram::normalize(&acc, h, w).expect("mean of histograms has unit mass"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ArchitectureSpec;
    use crate::synthetic::blob_collection;

    fn setup() -> (NetworkParams, Vec<Histogram>) {
        let (hists, _) = blob_collection(8, 8, 8, 2, 21);
        let params = NetworkParams::init(ArchitectureSpec::for_image(8, 8, 4), 9);
        (params, hists)
    }

    #[test]
    fn one_hot_barycenter_is_reconstruction() {
        let (params, hists) = setup();
        // Near-one-hot within the positivity constraint: exact one-hot
        // weights are expressed as a single-element list.
        let w = BarycenterWeights::new(vec![1.0]).unwrap();
        let bc = barycenter(&params, &hists[2..3], &w).unwrap();
        let rec = params.decode(&params.embed(&hists[2]).unwrap()).unwrap();
        assert_eq!(bc.mass(), rec.mass());
    }

    #[test]
    fn barycenter_is_permutation_invariant_bitwise() {
        let (params, hists) = setup();
        let w = BarycenterWeights::new(vec![0.5, 0.3, 0.2]).unwrap();
        let a = barycenter(&params, &hists[..3], &w).unwrap();
        let perm = [hists[2].clone(), hists[0].clone(), hists[1].clone()];
        let wp = BarycenterWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let b = barycenter(&params, &perm, &wp).unwrap();
        assert_eq!(a.mass(), b.mass());
    }

    #[test]
    fn bad_weights_rejected() {
        assert!(BarycenterWeights::new(vec![0.5, 0.6]).is_err());
        assert!(BarycenterWeights::new(vec![1.5, -0.5]).is_err());
        assert!(BarycenterWeights::new(vec![]).is_err());
    }

    #[test]
    fn interpolation_endpoints_are_reconstructions() {
        let (params, hists) = setup();
        let frames = interpolate(&params, &hists[0], &hists[1], 5).unwrap();
        assert_eq!(frames.len(), 5);
        let ra = params.decode(&params.embed(&hists[0]).unwrap()).unwrap();
        let rb = params.decode(&params.embed(&hists[1]).unwrap()).unwrap();
        assert_eq!(frames[0].mass(), ra.mass());
        assert_eq!(frames[4].mass(), rb.mass());
    }

    #[test]
    fn interpolating_identical_inputs_gives_identical_frames() {
        let (params, hists) = setup();
        let frames = interpolate(&params, &hists[0], &hists[0], 4).unwrap();
        for f in &frames[1..] {
            assert_eq!(f.mass(), frames[0].mass());
        }
    }

    #[test]
    fn jacobi_recovers_known_spectrum() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1.
        let (vals, vecs) = symmetric_eigen(vec![2.0, 1.0, 1.0, 2.0], 2);
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((sorted[0] - 1.0).abs() < 1e-12);
        assert!((sorted[1] - 3.0).abs() < 1e-12);
        for v in &vecs {
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn pga_directions_orthonormal_and_variances_sorted() {
        let (params, hists) = setup();
        let pd = pga(&params, &hists, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let dot: f64 = pd.directions[i]
                    .iter()
                    .zip(&pd.directions[j])
                    .map(|(a, b)| a * b)
                    .sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-9, "dot({i},{j}) = {dot}");
            }
        }
        for w in pd.variances.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn pga_insufficient_samples() {
        let (params, hists) = setup();
        assert!(matches!(
            pga(&params, &hists[..3], 4),
            Err(AnalyticsError::InsufficientSamples { .. })
        ));
    }

    #[test]
    fn pga_walk_center_is_decoded_mean() {
        let (params, hists) = setup();
        let pd = pga(&params, &hists, 2).unwrap();
        let frames = pga_walk(&params, &pd, 0, &[-1.0, 0.0, 1.0]).unwrap();
        let center = params.decode(&pd.mean).unwrap();
        assert_eq!(frames[1].mass(), center.mass());
        assert!(frames[0].mass() != frames[2].mass());
        assert!(matches!(
            pga_walk(&params, &pd, 5, &[0.0]),
            Err(AnalyticsError::IndexError(5, 2))
        ));
    }

    #[test]
    fn euclidean_mean_and_sharpness() {
        let (_, hists) = setup();
        let mean = euclidean_mean(&hists).unwrap();
        let s: f64 = mean.mass().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        // Averaging jittered blobs spreads mass, so the mean scores less
        // sharp (higher l_1/2) than the sharpest input.
        let best_input = hists
            .iter()
            .map(sharpness_score)
            .fold(f64::INFINITY, f64::min);
        assert!(sharpness_score(&mean) > best_input);
    }
}
