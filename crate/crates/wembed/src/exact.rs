//! Exact squared 2-Wasserstein distance between grid histograms.
//!
//! The transportation problem is solved with a network simplex restricted to
//! the strictly positive bins of both inputs. Every solve returns the optimal
//! plan together with dual potentials, so optimality can be re-checked
//! independently via [`verify_optimality`].

use crate::hist::{support, GroundCost, HistError, Histogram};
use thiserror::Error;

/// Support-size limit per side of the transportation problem.
pub const SUPPORT_CAPACITY: usize = 1024;

/// Feasibility tolerance used by the certificate checks.
pub const CERT_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum ExactError {
    #[error("histogram dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("support size {size} exceeds capacity {capacity}")]
    CapacityExceeded { size: usize, capacity: usize },
    #[error(transparent)]
    Hist(#[from] HistError),
    #[error("pivot limit reached without convergence")]
    PivotLimit,
}

/// Sparse optimal coupling between two histograms.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// `(source bin, target bin, mass)` in original flat grid indices,
    /// strictly positive masses only.
    pub entries: Vec<(usize, usize, f64)>,
    /// Optimal transport cost, i.e. the squared 2-Wasserstein distance.
    pub objective: f64,
    /// Largest absolute row-marginal violation.
    pub source_marginal_error: f64,
    /// Largest absolute column-marginal violation.
    pub target_marginal_error: f64,
}

/// Dual optimal solution; proves optimality of the associated plan.
#[derive(Debug, Clone)]
pub struct DualCertificate {
    /// Support bins of the source histogram, with their masses.
    pub source_support: Vec<(usize, f64)>,
    /// Support bins of the target histogram, with their masses.
    pub target_support: Vec<(usize, f64)>,
    /// Potential per source support bin.
    pub source_potentials: Vec<f64>,
    /// Potential per target support bin.
    pub target_potentials: Vec<f64>,
    /// Primal objective minus dual objective.
    pub duality_gap: f64,
}

/// Outcome of [`verify_optimality`] with per-check diagnostics.
#[derive(Debug, Clone, Default)]
pub struct VerifyReport {
    pub failures: Vec<String>,
}

impl VerifyReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Exact `W2^2(a, b)` with optimal plan and dual certificate.
pub fn w2_exact(
    a: &Histogram,
    b: &Histogram,
) -> Result<(f64, TransportPlan, DualCertificate), ExactError> {
    if !a.same_dims(b) {
        return Err(ExactError::DimensionMismatch(
            a.height(),
            a.width(),
            b.height(),
            b.width(),
        ));
    }
    let sa = support(a, 0.0)?;
    let sb = support(b, 0.0)?;
    let m = sa.bins.len();
    let n = sb.bins.len();
    for size in [m, n] {
        if size > SUPPORT_CAPACITY {
            return Err(ExactError::CapacityExceeded {
                size,
                capacity: SUPPORT_CAPACITY,
            });
        }
    }
    let cost = GroundCost::new(a.height(), a.width())?;
    let mut costs = vec![0.0; m * n];
    for (si, &(bi, _)) in sa.bins.iter().enumerate() {
        for (sj, &(bj, _)) in sb.bins.iter().enumerate() {
            costs[si * n + sj] = cost.cost(bi, bj);
        }
    }
    let supply: Vec<f64> = sa.bins.iter().map(|&(_, mass)| mass).collect();
    let demand: Vec<f64> = sb.bins.iter().map(|&(_, mass)| mass).collect();

    let solution = network_simplex(&supply, &demand, &costs, n)?;

    let mut entries = Vec::new();
    let mut objective = 0.0;
    let mut row_sums = vec![0.0; m];
    let mut col_sums = vec![0.0; n];
    for &(si, sj, flow) in &solution.flows {
        row_sums[si] += flow;
        col_sums[sj] += flow;
        objective += flow * costs[si * n + sj];
        if flow > 0.0 {
            entries.push((sa.bins[si].0, sb.bins[sj].0, flow));
        }
    }
    entries.sort_unstable_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let source_marginal_error = supply
        .iter()
        .zip(&row_sums)
        .map(|(s, r)| (s - r).abs())
        .fold(0.0, f64::max);
    let target_marginal_error = demand
        .iter()
        .zip(&col_sums)
        .map(|(d, c)| (d - c).abs())
        .fold(0.0, f64::max);

    let dual_value: f64 = solution
        .source_potentials
        .iter()
        .zip(&supply)
        .map(|(u, s)| u * s)
        .sum::<f64>()
        + solution
            .target_potentials
            .iter()
            .zip(&demand)
            .map(|(v, d)| v * d)
            .sum::<f64>();

    let plan = TransportPlan {
        entries,
        objective,
        source_marginal_error,
        target_marginal_error,
    };
    let cert = DualCertificate {
        source_support: sa.bins,
        target_support: sb.bins,
        source_potentials: solution.source_potentials,
        target_potentials: solution.target_potentials,
        duality_gap: objective - dual_value,
    };
    Ok((objective, plan, cert))
}

/// `W2^2` between two height-1 histograms via the inverse-CDF integral,
/// computed exactly by merging the two step-function CDFs. Used as an
/// independent oracle for the simplex solver.
pub fn w2_1d(a: &Histogram, b: &Histogram) -> Result<f64, ExactError> {
    if a.height() != 1 || b.height() != 1 || a.width() != b.width() {
        return Err(ExactError::DimensionMismatch(
            a.height(),
            a.width(),
            b.height(),
            b.width(),
        ));
    }
    let sa: Vec<(usize, f64)> = a
        .mass()
        .iter()
        .enumerate()
        .filter(|&(_, &m)| m > 0.0)
        .map(|(i, &m)| (i, m))
        .collect();
    let sb: Vec<(usize, f64)> = b
        .mass()
        .iter()
        .enumerate()
        .filter(|&(_, &m)| m > 0.0)
        .map(|(i, &m)| (i, m))
        .collect();
    let mut total = 0.0;
    let (mut ia, mut ib) = (0usize, 0usize);
    let (mut ca, mut cb) = (0.0f64, 0.0f64); // cumulative mass consumed
    let mut t = 0.0f64;
    while ia < sa.len() && ib < sb.len() {
        let fa = ca + sa[ia].1;
        let fb = cb + sb[ib].1;
        let next = fa.min(fb).min(1.0);
        let seg = next - t;
        if seg > 0.0 {
            let d = sa[ia].0 as f64 - sb[ib].0 as f64;
            total += seg * d * d;
        }
        t = next;
        if fa <= next + 1e-15 {
            ca = fa;
            ia += 1;
        }
        if fb <= next + 1e-15 {
            cb = fb;
            ib += 1;
        }
    }
    Ok(total)
}

/// Re-checks dual feasibility, complementary slackness and the duality gap.
/// Returns a report rather than erroring; `report.is_ok()` iff the plan is
/// certified optimal.
pub fn verify_optimality(
    plan: &TransportPlan,
    cert: &DualCertificate,
    cost: &GroundCost,
) -> VerifyReport {
    let mut report = VerifyReport::default();
    let mut u_of = std::collections::HashMap::new();
    for (&(bin, _), &u) in cert.source_support.iter().zip(&cert.source_potentials) {
        u_of.insert(bin, u);
    }
    let mut v_of = std::collections::HashMap::new();
    for (&(bin, _), &v) in cert.target_support.iter().zip(&cert.target_potentials) {
        v_of.insert(bin, v);
    }
    for (&(bi, _), &u) in cert.source_support.iter().zip(&cert.source_potentials) {
        for (&(bj, _), &v) in cert.target_support.iter().zip(&cert.target_potentials) {
            let slack = cost.cost(bi, bj) - u - v;
            if slack < -CERT_TOL {
                report.failures.push(format!(
                    "dual infeasible at ({bi},{bj}): u+v exceeds cost by {:.3e}",
                    -slack
                ));
            }
        }
    }
    for &(bi, bj, mass) in &plan.entries {
        if mass < 0.0 {
            report
                .failures
                .push(format!("negative plan mass {mass:.3e} at ({bi},{bj})"));
            continue;
        }
        if mass > 0.0 {
            let (u, v) = match (u_of.get(&bi), v_of.get(&bj)) {
                (Some(&u), Some(&v)) => (u, v),
                _ => {
                    report
                        .failures
                        .push(format!("plan entry ({bi},{bj}) outside certified support"));
                    continue;
                }
            };
            let slack = cost.cost(bi, bj) - u - v;
            if slack.abs() > CERT_TOL {
                report.failures.push(format!(
                    "complementary slackness violated at ({bi},{bj}): slack {slack:.3e}"
                ));
            }
        }
    }
    let dual_value: f64 = cert
        .source_support
        .iter()
        .zip(&cert.source_potentials)
        .map(|(&(_, mass), &u)| u * mass)
        .sum::<f64>()
        + cert
            .target_support
            .iter()
            .zip(&cert.target_potentials)
            .map(|(&(_, mass), &v)| v * mass)
            .sum::<f64>();
    let gap = plan.objective - dual_value;
    if gap.abs() > CERT_TOL * (1.0 + plan.objective) {
        report
            .failures
            .push(format!("duality gap {gap:.3e} out of tolerance"));
    }
    report
}

struct SimplexSolution {
    flows: Vec<(usize, usize, f64)>,
    source_potentials: Vec<f64>,
    target_potentials: Vec<f64>,
}

// Basis cell of the transportation tableau; basic cells form a spanning
// tree on the bipartite node set (sources 0..m, sinks m..m+n).
#[derive(Clone, Copy)]
struct Basic {
    src: usize,
    snk: usize,
    flow: f64,
}

const RC_EPS: f64 = 1e-11;

/// Transportation simplex over a dense `m x n` cost matrix (row stride
/// `n`). Supplies and demands must each sum to one. Pivoting uses
/// most-negative reduced cost, switching to Bland's rule after
/// `50 * (m + n)` pivots; degenerate ties break on lowest cell index.
fn network_simplex(
    supply: &[f64],
    demand: &[f64],
    costs: &[f64],
    n: usize,
) -> Result<SimplexSolution, ExactError> {
    let m = supply.len();
    debug_assert_eq!(demand.len(), n);
    debug_assert_eq!(costs.len(), m * n);

    let mut basis: Vec<Basic> = Vec::with_capacity(m + n - 1);

    // Northwest-corner initial basic feasible solution.
    {
        let (mut i, mut j) = (0usize, 0usize);
        let mut a_rem = supply[0];
        let mut b_rem = demand[0];
        loop {
            let flow = a_rem.min(b_rem).max(0.0);
            basis.push(Basic {
                src: i,
                snk: j,
                flow,
            });
            if i + 1 == m && j + 1 == n {
                break;
            }
            if (a_rem < b_rem && i + 1 < m) || j + 1 == n {
                b_rem -= a_rem;
                i += 1;
                a_rem = supply[i];
            } else {
                a_rem -= b_rem;
                j += 1;
                b_rem = demand[j];
            }
        }
        debug_assert_eq!(basis.len(), m + n - 1);
    }

    let total_nodes = m + n;
    let mut u = vec![0.0f64; m];
    let mut v = vec![0.0f64; n];
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); total_nodes];
    let mut parent_edge = vec![usize::MAX; total_nodes];
    let mut order = Vec::with_capacity(total_nodes);

    let bland_threshold = 50 * (m + n);
    let pivot_limit = 2000 * (m + n) + 10_000;
    let mut pivots = 0usize;

    loop {
        // Potentials from the spanning tree, rooted at source 0.
        for lists in adj.iter_mut() {
            lists.clear();
        }
        for (e, b) in basis.iter().enumerate() {
            adj[b.src].push(e);
            adj[m + b.snk].push(e);
        }
        order.clear();
        parent_edge.iter_mut().for_each(|p| *p = usize::MAX);
        let mut visited = vec![false; total_nodes];
        visited[0] = true;
        order.push(0usize);
        let mut head = 0;
        while head < order.len() {
            let node = order[head];
            head += 1;
            for &e in &adj[node] {
                let b = basis[e];
                let other = if node == b.src { m + b.snk } else { b.src };
                if !visited[other] {
                    visited[other] = true;
                    parent_edge[other] = e;
                    order.push(other);
                    if other >= m {
                        v[other - m] = costs[b.src * n + b.snk] - u[b.src];
                    } else {
                        u[other] = costs[b.src * n + b.snk] - v[b.snk];
                    }
                }
            }
        }
        debug_assert_eq!(order.len(), total_nodes, "basis is not spanning");

        // Entering arc.
        let use_bland = pivots >= bland_threshold;
        let mut enter: Option<(usize, usize)> = None;
        let mut best_rc = -RC_EPS;
        'scan: for i in 0..m {
            let ui = u[i];
            let row = &costs[i * n..(i + 1) * n];
            for (j, (&c, &vj)) in row.iter().zip(v.iter()).enumerate() {
                let rc = c - ui - vj;
                if rc < best_rc {
                    enter = Some((i, j));
                    if use_bland {
                        break 'scan;
                    }
                    best_rc = rc;
                }
            }
        }
        let (ei, ej) = match enter {
            Some(cell) => cell,
            None => break,
        };

        pivots += 1;
        if pivots > pivot_limit {
            return Err(ExactError::PivotLimit);
        }

        // Cycle: entering arc plus the tree path between its endpoints.
        let path_a = path_to_root(ei, m, &basis, &parent_edge);
        let path_b = path_to_root(m + ej, m, &basis, &parent_edge);
        // Drop the common suffix (shared path to the root).
        let mut la = path_a.len();
        let mut lb = path_b.len();
        while la > 0 && lb > 0 && path_a[la - 1] == path_b[lb - 1] {
            la -= 1;
            lb -= 1;
        }
        // The cycle is the entering '+' arc plus both tree paths. Signs
        // alternate around the cycle (bipartite, even length), so the edge
        // touching node ei and the edge touching node m+ej are both '-';
        // assigning alternating signs outward from each endpoint is
        // globally consistent because la + lb is odd.
        let mut cycle: Vec<(usize, bool)> = Vec::with_capacity(la + lb); // (edge, is_minus)
        let mut minus = true;
        for &e in &path_a[..la] {
            cycle.push((e, minus));
            minus = !minus;
        }
        let mut minus = true;
        for &e in &path_b[..lb] {
            cycle.push((e, minus));
            minus = !minus;
        }

        // Leaving arc: minimum flow among '-' edges, lowest cell index on ties.
        let mut theta = f64::INFINITY;
        let mut leave: Option<usize> = None;
        let mut leave_key = (usize::MAX, usize::MAX);
        for &(e, is_minus) in &cycle {
            if is_minus {
                let b = basis[e];
                let key = (b.src, b.snk);
                if b.flow < theta - 1e-15 || (b.flow <= theta + 1e-15 && key < leave_key) {
                    if b.flow < theta {
                        theta = b.flow;
                    }
                    leave = Some(e);
                    leave_key = key;
                }
            }
        }
        let leave = leave.expect("cycle without a reverse edge");
        let theta = theta.max(0.0);

        for &(e, is_minus) in &cycle {
            if is_minus {
                basis[e].flow = (basis[e].flow - theta).max(0.0);
            } else {
                basis[e].flow += theta;
            }
        }
        basis[leave] = Basic {
            src: ei,
            snk: ej,
            flow: theta,
        };
    }

    let flows = basis
        .iter()
        .map(|b| (b.src, b.snk, b.flow))
        .collect::<Vec<_>>();
    Ok(SimplexSolution {
        flows,
        source_potentials: u,
        target_potentials: v,
    })
}

/// Tree edges from `node` up to the root, in order.
fn path_to_root(mut node: usize, m: usize, basis: &[Basic], parent_edge: &[usize]) -> Vec<usize> {
    let mut path = Vec::new();
    while parent_edge[node] != usize::MAX {
        let e = parent_edge[node];
        path.push(e);
        let b = basis[e];
        node = if node == b.src { m + b.snk } else { b.src };
    }
    path
}
