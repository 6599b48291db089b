//! Shared helpers for integration tests: independent oracles and random
//! data generators that are deliberately separate from the library code.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use wembed::hist::Histogram;

/// Exhaustive minimum-cost transport by enumerating spanning-tree bases
/// of the bipartite transportation graph. Every vertex of the feasible
/// polytope corresponds to such a basis, so the minimum over feasible
/// bases is the exact LP optimum. Exponential; only for tiny supports.
pub fn brute_force_transport(supply: &[f64], demand: &[f64], costs: &[Vec<f64>]) -> f64 {
    let m = supply.len();
    let n = demand.len();
    assert!(m * n <= 20, "brute force is only for tiny instances");
    let edges: Vec<(usize, usize)> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    let k = m + n - 1;
    let mut best = f64::INFINITY;
    let mut combo: Vec<usize> = (0..k).collect();
    loop {
        if let Some(cost) = try_basis(supply, demand, costs, &edges, &combo) {
            best = best.min(cost);
        }
        // Next k-combination of edge indices in lexicographic order.
        let mut i = k;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if combo[i] != i + edges.len() - k {
                combo[i] += 1;
                for j in i + 1..k {
                    combo[j] = combo[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Solves the flows of one candidate basis by repeated leaf elimination;
/// returns its cost when the basis is a spanning tree with nonnegative
/// flows.
fn try_basis(
    supply: &[f64],
    demand: &[f64],
    costs: &[Vec<f64>],
    edges: &[(usize, usize)],
    combo: &[usize],
) -> Option<f64> {
    let m = supply.len();
    let n = demand.len();
    let nodes = m + n;
    // Node balance: positive for sources, negative for sinks.
    let mut balance: Vec<f64> = supply.iter().copied().chain(demand.iter().map(|d| -d)).collect();
    let mut active: Vec<(usize, usize, usize)> = combo
        .iter()
        .map(|&e| {
            let (i, j) = edges[e];
            (i, m + j, e)
        })
        .collect();
    let mut degree = vec![0usize; nodes];
    for &(a, b, _) in &active {
        degree[a] += 1;
        degree[b] += 1;
    }
    let mut cost = 0.0;
    while let Some(pos) = active
        .iter()
        .position(|&(a, b, _)| degree[a] == 1 || degree[b] == 1)
    {
        let (a, b, e) = active.swap_remove(pos);
        let leaf = if degree[a] == 1 { a } else { b };
        let other = if leaf == a { b } else { a };
        let flow = if leaf < m { balance[leaf] } else { -balance[leaf] };
        if flow < -1e-12 {
            return None;
        }
        let (i, j) = edges[e];
        cost += flow.max(0.0) * costs[i][j];
        balance[other] += balance[leaf];
        balance[leaf] = 0.0;
        degree[a] -= 1;
        degree[b] -= 1;
    }
    // A spanning tree eliminates every edge; leftovers mean a cycle or a
    // disconnected basis.
    if !active.is_empty() {
        return None;
    }
    if balance.iter().any(|&b| b.abs() > 1e-9) {
        return None;
    }
    Some(cost)
}

/// Random dense histogram on an h×w grid.
pub fn random_histogram(rng: &mut ChaCha20Rng, h: usize, w: usize) -> Histogram {
    let raw: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.01..1.0)).collect();
    Histogram::normalize(&raw, h, w).unwrap()
}

/// Random histogram supported on at most `nsup` bins of an h×w grid.
pub fn random_sparse_histogram(
    rng: &mut ChaCha20Rng,
    h: usize,
    w: usize,
    nsup: usize,
) -> Histogram {
    let mut raw = vec![0.0; h * w];
    let k = rng.gen_range(1..=nsup);
    for _ in 0..k {
        let i = rng.gen_range(0..h * w);
        raw[i] += rng.gen_range(0.1..1.0);
    }
    Histogram::normalize(&raw, h, w).unwrap()
}
