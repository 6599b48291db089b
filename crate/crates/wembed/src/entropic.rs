//! Entropic-regularized optimal transport: Sinkhorn iterations and
//! Bregman-projection barycenters. Comparison baseline only; the exact
//! solver in [`crate::exact`] is what labels the training data.

use crate::hist::{GroundCost, HistError, Histogram};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EntropicError {
    #[error("histogram dimensions differ")]
    DimensionMismatch,
    #[error("kernel underflowed to zero; retry with log_domain = true or a larger epsilon")]
    NumericalUnderflow,
    #[error("weights must be nonnegative and sum to 1 (got sum {0})")]
    WeightError(f64),
    #[error(transparent)]
    Hist(#[from] HistError),
}

/// Parameters for the Sinkhorn fixed-point iteration.
#[derive(Debug, Clone)]
pub struct SinkhornConfig {
    /// Entropic regularization strength, in squared-pixel units.
    pub epsilon: f64,
    pub max_iters: usize,
    /// L1 marginal-violation stop criterion.
    pub tolerance: f64,
    /// Evaluate the iteration on log-potentials instead of scalings.
    pub log_domain: bool,
}

impl SinkhornConfig {
    /// Default configuration for a given grid: `epsilon` is 0.05 times the
    /// median nonzero ground cost.
    pub fn for_grid(cost: &GroundCost) -> Self {
        Self {
            epsilon: 0.05 * cost.median_positive_cost(),
            max_iters: 10_000,
            tolerance: 1e-6,
            log_domain: true,
        }
    }

    fn validate(&self) {
        assert!(self.epsilon > 0.0, "epsilon must be positive");
        assert!(self.tolerance > 0.0, "tolerance must be positive");
        assert!(self.max_iters > 0, "max_iters must be positive");
    }
}

/// Result of a Sinkhorn solve.
#[derive(Debug, Clone, Copy)]
pub struct SinkhornResult {
    /// Transport cost `<pi_eps, cost>` of the fixed point, without the
    /// entropy term.
    pub objective: f64,
    pub iterations: usize,
    /// Final L1 marginal violation; above `tolerance` means the iteration
    /// hit `max_iters` first.
    pub marginal_violation: f64,
    pub converged: bool,
}

fn dense_cost(g: &GroundCost) -> Vec<f64> {
    let n = g.height() * g.width();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = g.cost(i, j);
        }
    }
    c
}

/// Entropic transport cost between `a` and `b`.
pub fn sinkhorn_w2(
    a: &Histogram,
    b: &Histogram,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult, EntropicError> {
    cfg.validate();
    if !a.same_dims(b) {
        return Err(EntropicError::DimensionMismatch);
    }
    let g = GroundCost::new(a.height(), a.width())?;
    let cost = dense_cost(&g);
    let n = a.len();
    if cfg.log_domain {
        sinkhorn_log(a.mass(), b.mass(), &cost, n, cfg)
    } else {
        sinkhorn_scaling(a.mass(), b.mass(), &cost, n, cfg)
    }
}

fn sinkhorn_scaling(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    n: usize,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult, EntropicError> {
    let k: Vec<f64> = cost.iter().map(|&c| (-c / cfg.epsilon).exp()).collect();
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    while iterations < cfg.max_iters {
        iterations += 1;
        // u = a ./ (K v)
        for i in 0..n {
            let kv: f64 = k[i * n..(i + 1) * n].iter().zip(v.iter()).map(|(x, y)| x * y).sum();
            if a[i] > 0.0 && (kv <= 0.0 || !kv.is_finite()) {
                return Err(EntropicError::NumericalUnderflow);
            }
            u[i] = if a[i] > 0.0 { a[i] / kv } else { 0.0 };
        }
        // v = b ./ (K^T u)
        for j in 0..n {
            let ktu: f64 = (0..n).map(|i| k[i * n + j] * u[i]).sum();
            if b[j] > 0.0 && (ktu <= 0.0 || !ktu.is_finite()) {
                return Err(EntropicError::NumericalUnderflow);
            }
            v[j] = if b[j] > 0.0 { b[j] / ktu } else { 0.0 };
        }
        // Row marginals of diag(u) K diag(v) vs a.
        violation = 0.0;
        for i in 0..n {
            let row: f64 = (0..n).map(|j| u[i] * k[i * n + j] * v[j]).sum();
            violation += (row - a[i]).abs();
        }
        if violation <= cfg.tolerance {
            break;
        }
    }
    let mut objective = 0.0;
    for i in 0..n {
        for j in 0..n {
            objective += u[i] * k[i * n + j] * v[j] * cost[i * n + j];
        }
    }
    if !objective.is_finite() {
        return Err(EntropicError::NumericalUnderflow);
    }
    Ok(SinkhornResult {
        objective,
        iterations,
        marginal_violation: violation,
        converged: violation <= cfg.tolerance,
    })
}

fn logsumexp(values: impl Iterator<Item = f64>) -> f64 {
    let vals: Vec<f64> = values.collect();
    let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn sinkhorn_log(
    a: &[f64],
    b: &[f64],
    cost: &[f64],
    n: usize,
    cfg: &SinkhornConfig,
) -> Result<SinkhornResult, EntropicError> {
    let eps = cfg.epsilon;
    let log_a: Vec<f64> = a.iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect();
    let log_b: Vec<f64> = b.iter().map(|&x| if x > 0.0 { x.ln() } else { f64::NEG_INFINITY }).collect();
    // f, g are the dual potentials divided by epsilon is avoided; keep raw.
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];
    let mut iterations = 0;
    let mut violation = f64::INFINITY;
    let log_plan = |f: &[f64], g: &[f64], i: usize, j: usize| {
        log_a[i] + log_b[j] + (f[i] + g[j] - cost[i * n + j]) / eps
    };
    while iterations < cfg.max_iters {
        iterations += 1;
        for i in 0..n {
            if a[i] <= 0.0 {
                continue;
            }
            // f_i = -eps * log sum_j b_j exp((g_j - C_ij)/eps)
            let s = logsumexp((0..n).filter(|&j| b[j] > 0.0).map(|j| log_b[j] + (g[j] - cost[i * n + j]) / eps));
            f[i] = -eps * s;
        }
        for j in 0..n {
            if b[j] <= 0.0 {
                continue;
            }
            let s = logsumexp((0..n).filter(|&i| a[i] > 0.0).map(|i| log_a[i] + (f[i] - cost[i * n + j]) / eps));
            g[j] = -eps * s;
        }
        violation = 0.0;
        for i in 0..n {
            if a[i] <= 0.0 {
                continue;
            }
            let row = logsumexp((0..n).filter(|&j| b[j] > 0.0).map(|j| log_plan(&f, &g, i, j))).exp();
            violation += (row - a[i]).abs();
        }
        if violation <= cfg.tolerance {
            break;
        }
    }
    let mut objective = 0.0;
    for i in 0..n {
        if a[i] <= 0.0 {
            continue;
        }
        for j in 0..n {
            if b[j] <= 0.0 {
                continue;
            }
            objective += log_plan(&f, &g, i, j).exp() * cost[i * n + j];
        }
    }
    Ok(SinkhornResult {
        objective,
        iterations,
        marginal_violation: violation,
        converged: violation <= cfg.tolerance,
    })
}

/// Entropic-regularized barycenter of `hists` with the given weights,
/// via iterative Bregman projections on the scaling variables.
pub fn bregman_barycenter(
    hists: &[Histogram],
    weights: &[f64],
    cfg: &SinkhornConfig,
) -> Result<Histogram, EntropicError> {
    cfg.validate();
    if hists.is_empty() || hists.len() != weights.len() {
        return Err(EntropicError::WeightError(weights.iter().sum()));
    }
    let wsum: f64 = weights.iter().sum();
    if weights.iter().any(|&w| w < 0.0) || (wsum - 1.0).abs() > 1e-9 {
        return Err(EntropicError::WeightError(wsum));
    }
    let first = &hists[0];
    if hists.iter().any(|h| !h.same_dims(first)) {
        return Err(EntropicError::DimensionMismatch);
    }
    let g = GroundCost::new(first.height(), first.width())?;
    let cost = dense_cost(&g);
    let n = first.len();
    let k: Vec<f64> = cost.iter().map(|&c| (-c / cfg.epsilon).exp()).collect();
    let apply_k = |x: &[f64], out: &mut [f64]| {
        for i in 0..n {
            out[i] = k[i * n..(i + 1) * n].iter().zip(x.iter()).map(|(p, q)| p * q).sum();
        }
    };
    // K is symmetric for the squared Euclidean grid cost, so K^T = K.
    let m = hists.len();
    let mut v = vec![vec![1.0f64; n]; m];
    let mut u = vec![vec![0.0f64; n]; m];
    let mut bary = vec![1.0 / n as f64; n];
    let mut scratch = vec![0.0f64; n];
    let mut residual = f64::INFINITY;
    for _ in 0..cfg.max_iters {
        // u_k = a_k ./ (K v_k)
        for kk in 0..m {
            apply_k(&v[kk], &mut scratch);
            let a = hists[kk].mass();
            for i in 0..n {
                if scratch[i] <= 0.0 || !scratch[i].is_finite() {
                    if a[i] > 0.0 {
                        return Err(EntropicError::NumericalUnderflow);
                    }
                    u[kk][i] = 0.0;
                } else {
                    u[kk][i] = a[i] / scratch[i];
                }
            }
        }
        // bary = geometric mean of K^T u_k weighted by weights
        let mut log_bary = vec![0.0f64; n];
        for kk in 0..m {
            apply_k(&u[kk], &mut scratch);
            for i in 0..n {
                log_bary[i] += weights[kk] * scratch[i].max(1e-300).ln();
            }
        }
        let new_bary: Vec<f64> = log_bary.iter().map(|&l| l.exp()).collect();
        // v_k = bary ./ (K^T u_k)
        for kk in 0..m {
            apply_k(&u[kk], &mut scratch);
            for i in 0..n {
                v[kk][i] = if scratch[i] > 0.0 { new_bary[i] / scratch[i] } else { 0.0 };
            }
        }
        residual = bary.iter().zip(&new_bary).map(|(x, y)| (x - y).abs()).sum();
        bary = new_bary;
        if residual <= cfg.tolerance {
            break;
        }
    }
    let _ = residual;
    let total: f64 = bary.iter().sum();
    if total <= 0.0 || !total.is_finite() {
        return Err(EntropicError::NumericalUnderflow);
    }
    Ok(Histogram::normalize(&bary, first.height(), first.width())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::w2_exact;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn random_hist(rng: &mut StdRng, h: usize, w: usize) -> Histogram {
        let raw: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
        Histogram::normalize(&raw, h, w).unwrap()
    }

    fn cfg(eps: f64) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: eps,
            max_iters: 5000,
            tolerance: 1e-8,
            log_domain: true,
        }
    }

    #[test]
    fn self_transport_is_small() {
        let mut rng = StdRng::seed_from_u64(2);
        let a = random_hist(&mut rng, 4, 4);
        let eps = 0.05;
        let r = sinkhorn_w2(&a, &a, &cfg(eps)).unwrap();
        assert!(r.objective >= 0.0);
        assert!(r.objective <= 10.0 * eps, "objective {} eps {eps}", r.objective);
    }

    fn sparse_hist(rng: &mut StdRng, h: usize, w: usize, bins: usize) -> Histogram {
        let mut raw = vec![0.0; h * w];
        for _ in 0..bins {
            raw[rng.gen_range(0..h * w)] += 0.2 + rng.gen::<f64>();
        }
        Histogram::normalize(&raw, h, w).unwrap()
    }

    #[test]
    fn close_to_exact_at_small_epsilon() {
        let mut rng = StdRng::seed_from_u64(4);
        let g = GroundCost::new(8, 8).unwrap();
        let base = 0.1 * g.median_positive_cost();
        for _ in 0..10 {
            let a = sparse_hist(&mut rng, 8, 8, 3);
            let b = sparse_hist(&mut rng, 8, 8, 3);
            let (exact, _, _) = w2_exact(&a, &b).unwrap();
            let r = sinkhorn_w2(&a, &b, &cfg(base)).unwrap();
            assert!(
                (r.objective - exact).abs() / exact <= 0.05,
                "sinkhorn {} exact {exact}",
                r.objective
            );
        }
    }

    #[test]
    fn epsilon_sweep_moves_toward_exact() {
        let mut rng = StdRng::seed_from_u64(8);
        let g = GroundCost::new(5, 5).unwrap();
        let base = 0.1 * g.median_positive_cost();
        let a = random_hist(&mut rng, 5, 5);
        let b = random_hist(&mut rng, 5, 5);
        let (exact, _, _) = w2_exact(&a, &b).unwrap();
        let mut prev_err = f64::INFINITY;
        for factor in [4.0, 2.0, 1.0, 0.5] {
            let r = sinkhorn_w2(&a, &b, &cfg(base * factor)).unwrap();
            let err = (r.objective - exact).abs();
            assert!(err <= prev_err + 1e-9, "eps {factor}: err {err} > prev {prev_err}");
            prev_err = err;
        }
    }

    #[test]
    fn symmetric_in_inputs() {
        let mut rng = StdRng::seed_from_u64(9);
        let a = random_hist(&mut rng, 4, 4);
        let b = random_hist(&mut rng, 4, 4);
        let c = cfg(0.5);
        let ab = sinkhorn_w2(&a, &b, &c).unwrap().objective;
        let ba = sinkhorn_w2(&b, &a, &c).unwrap().objective;
        assert!((ab - ba).abs() < 1e-7);
    }

    #[test]
    fn scaling_and_log_domain_agree() {
        let mut rng = StdRng::seed_from_u64(10);
        let a = random_hist(&mut rng, 4, 4);
        let b = random_hist(&mut rng, 4, 4);
        let mut c = cfg(0.8);
        let log = sinkhorn_w2(&a, &b, &c).unwrap().objective;
        c.log_domain = false;
        let lin = sinkhorn_w2(&a, &b, &c).unwrap().objective;
        assert!((log - lin).abs() < 1e-6, "log {log} lin {lin}");
    }

    #[test]
    fn underflow_reported_in_linear_domain() {
        let mut a_raw = vec![0.0; 16 * 16];
        a_raw[0] = 1.0;
        let mut b_raw = vec![0.0; 16 * 16];
        b_raw[255] = 1.0;
        let a = Histogram::normalize(&a_raw, 16, 16).unwrap();
        let b = Histogram::normalize(&b_raw, 16, 16).unwrap();
        let mut c = cfg(1e-3);
        c.log_domain = false;
        assert!(matches!(
            sinkhorn_w2(&a, &b, &c),
            Err(EntropicError::NumericalUnderflow)
        ));
        // Log domain handles the same instance.
        c.log_domain = true;
        let r = sinkhorn_w2(&a, &b, &c).unwrap();
        assert!(r.objective.is_finite());
    }

    #[test]
    fn log_domain_no_underflow_small_epsilon_28x28() {
        let mut rng = StdRng::seed_from_u64(12);
        // Sparse blobby pair on the full grid; tiny epsilon.
        let mut a_raw = vec![0.0; 28 * 28];
        let mut b_raw = vec![0.0; 28 * 28];
        for _ in 0..30 {
            a_raw[rng.gen_range(0..784)] += rng.gen::<f64>();
            b_raw[rng.gen_range(0..784)] += rng.gen::<f64>();
        }
        let a = Histogram::normalize(&a_raw, 28, 28).unwrap();
        let b = Histogram::normalize(&b_raw, 28, 28).unwrap();
        let g = GroundCost::new(28, 28).unwrap();
        let mut c = cfg(1e-3 * g.median_positive_cost());
        c.max_iters = 200;
        let r = sinkhorn_w2(&a, &b, &c).unwrap();
        assert!(r.objective.is_finite() && r.objective >= 0.0);
    }

    #[test]
    fn barycenter_single_input_close_to_itself() {
        // Smooth centered blob; the entropic blur at this epsilon adds
        // little on top of the input's own spread.
        let (h, w, sigma) = (12usize, 12usize, 4.0f64);
        let mut raw = vec![0.0; h * w];
        for r in 0..h {
            for c in 0..w {
                let dr = r as f64 - (h as f64 - 1.0) / 2.0;
                let dc = c as f64 - (w as f64 - 1.0) / 2.0;
                raw[r * w + c] = (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp();
            }
        }
        let a = Histogram::normalize(&raw, h, w).unwrap();
        let g = GroundCost::new(h, w).unwrap();
        let c = cfg(0.5 * g.median_positive_cost());
        let b = bregman_barycenter(std::slice::from_ref(&a), &[1.0], &c).unwrap();
        let tv: f64 = a.mass().iter().zip(b.mass()).map(|(x, y)| (x - y).abs()).sum::<f64>() / 2.0;
        assert!(tv <= 0.1, "total variation {tv}");
    }

    #[test]
    fn barycenter_of_identical_inputs_matches_single() {
        let mut rng = StdRng::seed_from_u64(14);
        let a = random_hist(&mut rng, 4, 4);
        let c = cfg(1.0);
        let single = bregman_barycenter(std::slice::from_ref(&a), &[1.0], &c).unwrap();
        let double = bregman_barycenter(&[a.clone(), a.clone()], &[0.5, 0.5], &c).unwrap();
        for (x, y) in single.mass().iter().zip(double.mass()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn barycenter_of_two_diracs_peaks_at_midpoint() {
        let mut a_raw = vec![0.0; 9];
        a_raw[0] = 1.0;
        let mut b_raw = vec![0.0; 9];
        b_raw[8] = 1.0;
        let a = Histogram::normalize(&a_raw, 1, 9).unwrap();
        let b = Histogram::normalize(&b_raw, 1, 9).unwrap();
        let c = cfg(1.0);
        let bary = bregman_barycenter(&[a, b], &[0.5, 0.5], &c).unwrap();
        let argmax = bary
            .mass()
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.partial_cmp(y.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 4);
    }

    #[test]
    fn barycenter_invariant_under_permutation() {
        let mut rng = StdRng::seed_from_u64(15);
        let a = random_hist(&mut rng, 3, 3);
        let b = random_hist(&mut rng, 3, 3);
        let c = cfg(1.0);
        let x = bregman_barycenter(&[a.clone(), b.clone()], &[0.3, 0.7], &c).unwrap();
        let y = bregman_barycenter(&[b, a], &[0.7, 0.3], &c).unwrap();
        for (p, q) in x.mass().iter().zip(y.mass()) {
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn barycenter_rejects_bad_weights() {
        let mut rng = StdRng::seed_from_u64(16);
        let a = random_hist(&mut rng, 3, 3);
        let c = cfg(1.0);
        assert!(matches!(
            bregman_barycenter(&[a.clone(), a], &[0.5, 0.6], &c),
            Err(EntropicError::WeightError(_))
        ));
    }
}
