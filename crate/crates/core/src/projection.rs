//! Projection onto a [`HalfspaceSystem`] in a diagonal mass metric, with
//! recovery of the KKT multipliers.
//!
//! The solver is dual coordinate ascent (projected Gauss-Seidel on the
//! multipliers, a.k.a. Hildreth's method). For a point `v` and rows
//! `<a_i, u> >= b_i` it maintains `u = v + M^-1 sum_i mu_i a_i` and sweeps
//!
//! ```text
//! mu_i <- max(0, mu_i - (<a_i, u> - b_i) / <a_i, M^-1 a_i>)
//! ```
//!
//! in ascending row order until feasibility and complementarity hold to the
//! requested tolerance. Stationarity holds by construction.
//!
//! Gauss-Seidel can crawl when the polyhedron is a thin sliver. If the sweep
//! budget runs out, the problem is handed to an exact dual active-set method
//! (Goldfarb-Idnani), which terminates in finitely many steps and detects
//! empty sets exactly.
//!
//! [`project_oracle`] is an independent brute-force solver that enumerates
//! active sets; it exists for testing.

use alloc::vec;
use alloc::vec::Vec;

use crate::constraints::HalfspaceSystem;
use crate::linalg::{axpy, dot, max_abs, solve_dense};
use crate::{Error, Result};

/// Diagonal mass matrix `M`; the inner product is `(u, v)_M = <M u, v>`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MassMetric {
    diagonal: Vec<f64>,
}

impl MassMetric {
    pub fn identity(dim: usize) -> Self {
        MassMetric {
            diagonal: vec![1.0; dim],
        }
    }

    pub fn new(diagonal: Vec<f64>) -> Result<Self> {
        if let Some(m) = diagonal.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidInput(alloc::format!(
                "mass entries must be positive, got {m}"
            )));
        }
        Ok(MassMetric { diagonal })
    }

    pub fn dim(&self) -> usize {
        self.diagonal.len()
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diagonal
    }

    pub fn is_identity(&self) -> bool {
        self.diagonal.iter().all(|m| *m == 1.0)
    }

    /// `(u, v)_M`
    pub fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.diagonal
            .iter()
            .zip(u.iter().zip(v))
            .map(|(m, (a, b))| m * a * b)
            .sum()
    }

    pub fn norm(&self, u: &[f64]) -> f64 {
        libm::sqrt(self.inner(u, u))
    }

    /// Kinetic energy `(u, u)_M / 2`.
    pub fn energy(&self, u: &[f64]) -> f64 {
        0.5 * self.inner(u, u)
    }

    /// Writes `M^-1 x` into `out`.
    pub fn apply_inverse(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), m) in out.iter_mut().zip(x).zip(&self.diagonal) {
            *o = xi / m;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolverParams {
    /// Absolute tolerance on the larger of the feasibility violation and
    /// the complementarity product.
    pub tolerance: f64,
    pub max_sweeps: usize,
    /// Finish with the exact active-set method when the sweeps run out.
    pub exact_fallback: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            tolerance: 1e-10,
            max_sweeps: 10_000,
            exact_fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ProjectionResult {
    pub point: Vec<f64>,
    /// One multiplier per row of the halfspace system.
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
}

/// Projects `v` onto `set` in the metric `metric`.
pub fn project(
    v: &[f64],
    set: &HalfspaceSystem,
    metric: &MassMetric,
    params: &SolverParams,
) -> Result<ProjectionResult> {
    project_warm(v, set, metric, params, None)
}

/// As [`project`], starting the dual iteration from `warm` (one entry per
/// row; negative entries are clipped to zero).
pub fn project_warm(
    v: &[f64],
    set: &HalfspaceSystem,
    metric: &MassMetric,
    params: &SolverParams,
    warm: Option<&[f64]>,
) -> Result<ProjectionResult> {
    let d = set.dim();
    check_dims(v, set, metric)?;
    let rows = set.len();
    if rows == 0 {
        return Ok(ProjectionResult {
            point: v.to_vec(),
            multipliers: Vec::new(),
            iterations: 0,
            kkt_residual: 0.0,
        });
    }

    let mut minv_a = vec![0.0; rows * d];
    let mut diag = vec![0.0; rows];
    for r in 0..rows {
        let out = &mut minv_a[r * d..(r + 1) * d];
        metric.apply_inverse(set.normal(r), out);
        diag[r] = dot(set.normal(r), out);
    }

    let mut mu = match warm {
        Some(w) if w.len() == rows => w.iter().map(|x| x.max(0.0)).collect(),
        _ => vec![0.0; rows],
    };
    let mut u = vec![0.0; d];
    let rebuild = |mu: &[f64], u: &mut [f64]| {
        u.copy_from_slice(v);
        for r in 0..rows {
            if mu[r] != 0.0 {
                axpy(mu[r], &minv_a[r * d..(r + 1) * d], u);
            }
        }
    };
    rebuild(&mu, &mut u);

    let scale = 1.0 + max_abs(v) + max_abs(set.offsets());
    let mut residual = primal_dual_residual(set, &u, &mu);
    if residual <= params.tolerance {
        return Ok(polished(u, mu, 0, v, set, metric));
    }

    for sweep in 1..=params.max_sweeps {
        for r in 0..rows {
            let s = set.slack(r, &u);
            let next = (mu[r] - s / diag[r]).max(0.0);
            let delta = next - mu[r];
            if delta != 0.0 {
                axpy(delta, &minv_a[r * d..(r + 1) * d], &mut u);
                mu[r] = next;
            }
        }
        rebuild(&mu, &mut u);
        residual = primal_dual_residual(set, &u, &mu);
        if residual <= params.tolerance {
            return Ok(polished(u, mu, sweep, v, set, metric));
        }
        if max_abs(&mu) > 1e12 * scale {
            return Err(Error::Infeasible { sweeps: sweep });
        }
    }

    if params.exact_fallback {
        let (u, mu, steps) = dual_active_set(v, set, metric, params.tolerance)?;
        let result = polished(u, mu, params.max_sweeps + steps, v, set, metric);
        if result.kkt_residual <= 10.0 * params.tolerance * scale {
            return Ok(result);
        }
        return Err(Error::MaxIterations(alloc::boxed::Box::new(result)));
    }
    let best = finish(u, mu, params.max_sweeps, v, set, metric);
    Err(Error::MaxIterations(alloc::boxed::Box::new(best)))
}

/// Re-solves the equality system of the rows carrying a positive
/// multiplier and keeps the result if it is a better KKT point. Skipped
/// when those rows are linearly dependent.
fn polished(
    u: Vec<f64>,
    mu: Vec<f64>,
    iterations: usize,
    v: &[f64],
    set: &HalfspaceSystem,
    metric: &MassMetric,
) -> ProjectionResult {
    let rough = finish(u, mu, iterations, v, set, metric);
    let support: Vec<usize> = (0..set.len())
        .filter(|r| rough.multipliers[*r] > 0.0)
        .collect();
    if support.is_empty() || support.len() > set.dim() {
        return rough;
    }
    match solve_subset(v, set, metric, &support, f64::INFINITY) {
        Some((u, mu)) if mu.iter().all(|m| *m >= 0.0) => {
            let fine = finish(u, mu, iterations, v, set, metric);
            if fine.kkt_residual <= rough.kkt_residual {
                fine
            } else {
                rough
            }
        }
        _ => rough,
    }
}

fn finish(
    u: Vec<f64>,
    mu: Vec<f64>,
    iterations: usize,
    v: &[f64],
    set: &HalfspaceSystem,
    metric: &MassMetric,
) -> ProjectionResult {
    let kkt_residual = kkt_residual(v, set, metric, &u, &mu);
    ProjectionResult {
        point: u,
        multipliers: mu,
        iterations,
        kkt_residual,
    }
}

/// Larger of the feasibility violation and the complementarity product,
/// the latter divided by `1 + max mu` so that large impulses do not demand
/// slacks below rounding level.
fn primal_dual_residual(set: &HalfspaceSystem, u: &[f64], mu: &[f64]) -> f64 {
    let mu_scale = 1.0 + max_abs(mu);
    (0..set.len()).fold(0.0, |acc: f64, r| {
        let s = set.slack(r, u);
        acc.max(-s).max(libm::fabs(mu[r] * s) / mu_scale)
    })
}

/// Full KKT residual of a candidate `(point, multipliers)`: feasibility
/// violation, complementarity (relative to `1 + max mu`), multiplier sign and
/// stationarity `point = v + M^-1 sum mu_i a_i` (max norm, same relative
/// scaling).
pub fn kkt_residual(
    v: &[f64],
    set: &HalfspaceSystem,
    metric: &MassMetric,
    point: &[f64],
    multipliers: &[f64],
) -> f64 {
    let d = set.dim();
    let mut res = primal_dual_residual(set, point, multipliers);
    let mut stat: Vec<f64> = point.iter().zip(v).map(|(p, x)| p - x).collect();
    let mut tmp = vec![0.0; d];
    for (r, mu) in multipliers.iter().enumerate() {
        res = res.max(-mu);
        metric.apply_inverse(set.normal(r), &mut tmp);
        axpy(-mu, &tmp, &mut stat);
    }
    res.max(max_abs(&stat) / (1.0 + max_abs(multipliers)))
}

/// Goldfarb-Idnani dual active-set method on the problem rescaled to the
/// identity metric (`w = M^1/2 u`, rows `M^-1/2 a_i`). Starts from the
/// unconstrained minimizer and adds the most violated row until none is
/// left, dropping rows whose multiplier would turn negative.
fn dual_active_set(
    v: &[f64],
    set: &HalfspaceSystem,
    metric: &MassMetric,
    tol: f64,
) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let d = set.dim();
    let rows = set.len();
    let sq: Vec<f64> = metric.diagonal().iter().map(|m| libm::sqrt(*m)).collect();
    let normals: Vec<f64> = (0..rows)
        .flat_map(|r| set.normal(r).iter().zip(&sq).map(|(a, s)| a / s))
        .collect();
    let n = |r: usize| &normals[r * d..(r + 1) * d];
    let slack = |w: &[f64], r: usize| dot(n(r), w) - set.offset(r);

    let mut w: Vec<f64> = v.iter().zip(&sq).map(|(x, s)| x * s).collect();
    let mut active: Vec<usize> = Vec::new();
    let mut mu_act: Vec<f64> = Vec::new();
    let mut mu_new;
    let max_steps = 100 + 50 * rows * (d + 1);
    let mut steps = 0;

    // coefficients r of n_p on the active normals, and the residual z
    let decompose = |active: &[usize], np: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let k = active.len();
        let mut gram = vec![0.0; k * k];
        let mut rhs = vec![0.0; k];
        for (i, &a) in active.iter().enumerate() {
            for (j, &b) in active.iter().enumerate() {
                gram[i * k + j] = dot(n(a), n(b));
            }
            rhs[i] = dot(n(a), np);
        }
        let coef = solve_dense(&gram, &rhs, k, 1e-14).unwrap_or_else(|| vec![0.0; k]);
        let mut z = np.to_vec();
        for (c, &a) in coef.iter().zip(active) {
            axpy(-c, n(a), &mut z);
        }
        (coef, z)
    };

    loop {
        // most violated row, measured by distance
        let mut pick = None;
        let mut worst = -tol;
        for r in 0..rows {
            if active.contains(&r) {
                continue;
            }
            let s = slack(&w, r) / crate::linalg::norm(n(r));
            if s < worst {
                worst = s;
                pick = Some(r);
            }
        }
        let Some(p) = pick else { break };
        mu_new = 0.0;
        loop {
            steps += 1;
            if steps > max_steps {
                return Err(Error::Infeasible { sweeps: steps });
            }
            let np = n(p);
            let (coef, z) = decompose(&active, np);
            let zz = dot(&z, &z);
            // blocking active row: smallest mu_j / coef_j over coef_j > 0
            let mut partial = f64::INFINITY;
            let mut drop = None;
            for (j, &c) in coef.iter().enumerate() {
                if c > 1e-14 {
                    let t = mu_act[j] / c;
                    if t < partial {
                        partial = t;
                        drop = Some(j);
                    }
                }
            }
            let sp = slack(&w, p);
            let full = if zz > 1e-20 * dot(np, np) {
                -sp / zz
            } else {
                f64::INFINITY
            };
            if !full.is_finite() && drop.is_none() {
                return Err(Error::Infeasible { sweeps: steps });
            }
            let t = full.min(partial);
            if full.is_finite() {
                axpy(t, &z, &mut w);
            }
            for (m, c) in mu_act.iter_mut().zip(&coef) {
                *m = (*m - t * c).max(0.0);
            }
            mu_new += t;
            if t == full {
                active.push(p);
                mu_act.push(mu_new);
                break;
            }
            let j = drop.expect("partial step has a blocking row");
            active.remove(j);
            mu_act.remove(j);
        }
    }

    let mut mu = vec![0.0; rows];
    for (&a, &m) in active.iter().zip(&mu_act) {
        mu[a] = m;
    }
    // rebuild u = v + M^-1 sum mu_i a_i
    let mut u = v.to_vec();
    let mut tmp = vec![0.0; d];
    for (r, &m) in mu.iter().enumerate() {
        if m != 0.0 {
            metric.apply_inverse(set.normal(r), &mut tmp);
            axpy(m, &tmp, &mut u);
        }
    }
    Ok((u, mu, steps))
}

fn check_dims(v: &[f64], set: &HalfspaceSystem, metric: &MassMetric) -> Result<()> {
    for found in [v.len(), metric.dim()] {
        if found != set.dim() {
            return Err(Error::DimensionMismatch {
                expected: set.dim(),
                found,
            });
        }
    }
    Ok(())
}

/// Brute-force projection by active-set enumeration, for at most 20 rows.
///
/// Subsets are visited by increasing cardinality; for each, the equality
/// constrained problem is solved directly from its KKT system. The first subset whose solution is
/// primal feasible with nonnegative multipliers is returned. Subsets with a
/// singular Gram matrix are skipped, so with duplicated rows the multiplier
/// mass lands on the lowest-index copy.
pub fn project_oracle(
    v: &[f64],
    set: &HalfspaceSystem,
    metric: &MassMetric,
) -> Result<ProjectionResult> {
    const MAX_ROWS: usize = 20;
    check_dims(v, set, metric)?;
    let rows = set.len();
    if rows > MAX_ROWS {
        return Err(Error::InvalidInput(alloc::format!(
            "oracle enumerates at most {MAX_ROWS} rows, got {rows}"
        )));
    }
    let d = set.dim();
    let scale = 1.0 + max_abs(v) + max_abs(set.offsets());
    let tol = 1e-10 * scale;

    let mut subset = Vec::with_capacity(d);
    for k in 0..=rows.min(d) {
        // Gosper's hack over k-subsets of `rows` bits, in increasing order.
        let mut mask: u32 = if k == 0 { 0 } else { (1u32 << k) - 1 };
        let limit: u32 = 1u32 << rows;
        while mask < limit {
            subset.clear();
            subset.extend((0..rows).filter(|r| mask & (1 << r) != 0));
            if let Some(res) = solve_subset(v, set, metric, &subset, tol) {
                return Ok(finish(res.0, res.1, 1, v, set, metric));
            }
            if k == 0 {
                break;
            }
            let c = mask & mask.wrapping_neg();
            let r = mask + c;
            mask = (((r ^ mask) >> 2) / c) | r;
        }
    }
    Err(Error::Infeasible { sweeps: 0 })
}

/// Solves the equality-constrained projection onto the rows in `subset`
/// through the saddle-point system
///
/// ```text
/// [ M   -A_S^T ] [u ]   [M v]
/// [ A_S    0   ] [mu] = [b_S]
/// ```
///
/// (one step of iterative refinement), then checks multiplier signs and
/// primal feasibility of every row against `tol`.
fn solve_subset(
    v: &[f64],
    set: &HalfspaceSystem,
    metric: &MassMetric,
    subset: &[usize],
    tol: f64,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let d = set.dim();
    let k = subset.len();
    let n = d + k;
    let mut kkt = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    let masses = metric.diagonal();
    for i in 0..d {
        kkt[i * n + i] = masses[i];
        rhs[i] = masses[i] * v[i];
    }
    for (p, &r) in subset.iter().enumerate() {
        let a = set.normal(r);
        for i in 0..d {
            kkt[i * n + d + p] = -a[i];
            kkt[(d + p) * n + i] = a[i];
        }
        rhs[d + p] = set.offset(r);
    }
    let mut sol = solve_dense(&kkt, &rhs, n, 1e-12)?;
    let resid: Vec<f64> = (0..n)
        .map(|i| rhs[i] - (0..n).map(|j| kkt[i * n + j] * sol[j]).sum::<f64>())
        .collect();
    if let Some(corr) = solve_dense(&kkt, &resid, n, 1e-12) {
        for (x, c) in sol.iter_mut().zip(corr) {
            *x += c;
        }
    }
    if sol[d..].iter().any(|m| *m < -tol) {
        return None;
    }
    let u = sol[..d].to_vec();
    if set.min_slack(&u) < -tol {
        return None;
    }
    let mut mu = vec![0.0; set.len()];
    for (p, &r) in subset.iter().enumerate() {
        mu[r] = sol[d + p].max(0.0);
    }
    Some((u, mu))
}

/// Moreau decomposition `v = P_C v + (v - P_C v)` for a polyhedral cone `C`
/// through the origin (all offsets zero). The two parts are orthogonal in
/// the metric.
pub fn moreau_decompose(
    v: &[f64],
    cone: &HalfspaceSystem,
    metric: &MassMetric,
    params: &SolverParams,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some((row, &offset)) = cone
        .offsets()
        .iter()
        .enumerate()
        .find(|(_, b)| libm::fabs(**b) > 1e-12)
    {
        return Err(Error::NotACone { row, offset });
    }
    let tangential = project(v, cone, metric, params)?.point;
    let normal = v.iter().zip(&tangential).map(|(a, b)| a - b).collect();
    Ok((tangential, normal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn hs(dim: usize, rows: &[(&[f64], f64)]) -> HalfspaceSystem {
        HalfspaceSystem::from_rows(dim, rows.iter().map(|(a, b)| (*a, *b))).unwrap()
    }

    #[test]
    fn interior_point_is_fixed() {
        let h = hs(2, &[(&[1.0, 0.0], 0.0), (&[0.0, 1.0], -1.0)]);
        let r = project(
            &[0.5, 0.5],
            &h,
            &MassMetric::identity(2),
            &SolverParams::default(),
        )
        .unwrap();
        assert_eq!(r.point, vec![0.5, 0.5]);
        assert_eq!(r.multipliers, vec![0.0, 0.0]);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn single_halfspace_closed_form() {
        let h = hs(1, &[(&[1.0], 0.0)]);
        let r = project(
            &[-1.0],
            &h,
            &MassMetric::identity(1),
            &SolverParams::default(),
        )
        .unwrap();
        assert_eq!(r.point, vec![0.0]);
        assert_eq!(r.multipliers, vec![1.0]);

        let h = hs(2, &[(&[1.0, 0.0], -0.5)]);
        let r = project(
            &[-2.0, 0.0],
            &h,
            &MassMetric::identity(2),
            &SolverParams::default(),
        )
        .unwrap();
        assert_eq!(r.point, vec![-0.5, 0.0]);
        assert_eq!(r.multipliers, vec![1.5]);
    }

    #[test]
    fn oracle_orthogonal_pair() {
        let h = hs(2, &[(&[1.0, 0.0], 0.0), (&[0.0, 1.0], 0.0)]);
        let r = project_oracle(&[-1.0, -1.0], &h, &MassMetric::identity(2)).unwrap();
        assert_eq!(r.point, vec![0.0, 0.0]);
        assert_eq!(r.multipliers, vec![1.0, 1.0]);
    }

    #[test]
    fn duplicated_rows_keep_the_point() {
        let single = hs(2, &[(&[1.0, 1.0], 1.0)]);
        let double = hs(2, &[(&[1.0, 1.0], 1.0), (&[1.0, 1.0], 1.0)]);
        let m = MassMetric::identity(2);
        let p = SolverParams::default();
        let v = [-0.3, 0.1];
        let a = project(&v, &single, &m, &p).unwrap();
        let b = project(&v, &double, &m, &p).unwrap();
        let c = project_oracle(&v, &double, &m).unwrap();
        for k in 0..2 {
            assert!((a.point[k] - b.point[k]).abs() < 1e-12);
            assert!((a.point[k] - c.point[k]).abs() < 1e-12);
        }
        let total: f64 = b.multipliers.iter().sum();
        assert!((total - a.multipliers[0]).abs() < 1e-10);
        assert_eq!(c.multipliers[1], 0.0);
    }

    #[test]
    fn mass_metric_weights_the_correction() {
        // two bodies on a line, heavy one on the left: contact row u2 - u1 >= 0
        let h = hs(2, &[(&[-1.0, 1.0], 0.0)]);
        let m = MassMetric::new(vec![3.0, 1.0]).unwrap();
        let r = project(&[1.0, -1.0], &h, &m, &SolverParams::default()).unwrap();
        // momentum 3 - 1 = 2 shared over total mass 4
        assert!((r.point[0] - 0.5).abs() < 1e-12);
        assert!((r.point[1] - 0.5).abs() < 1e-12);
        assert!(r.kkt_residual < 1e-10);
    }

    #[test]
    fn empty_set_is_detected() {
        let h = hs(1, &[(&[1.0], 1.0), (&[-1.0], 0.0)]);
        let m = MassMetric::identity(1);
        let p = SolverParams::default();
        assert!(matches!(
            project(&[0.5], &h, &m, &p),
            Err(Error::Infeasible { .. })
        ));
        assert!(matches!(
            project_oracle(&[0.5], &h, &m),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn max_iterations_returns_best_iterate() {
        // a narrow wedge makes Gauss-Seidel zigzag into the corner
        let h = hs(2, &[(&[1.0, 0.1], 1.0), (&[1.0, -0.1], 1.0)]);
        let p = SolverParams {
            tolerance: 1e-14,
            max_sweeps: 3,
            exact_fallback: false,
        };
        match project(&[0.0, 0.0], &h, &MassMetric::identity(2), &p) {
            Err(Error::MaxIterations(best)) => {
                assert_eq!(best.iterations, 3);
                assert!(best.kkt_residual > 1e-14);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exact_fallback_finishes_slow_problems() {
        let h = hs(2, &[(&[1.0, 0.1], 1.0), (&[1.0, -0.1], 1.0)]);
        let p = SolverParams {
            tolerance: 1e-12,
            max_sweeps: 3,
            exact_fallback: true,
        };
        let r = project(&[0.0, 0.0], &h, &MassMetric::identity(2), &p).unwrap();
        assert!((r.point[0] - 1.0).abs() < 1e-12 && r.point[1].abs() < 1e-12);
        assert!(r.kkt_residual < 1e-12);
    }

    #[test]
    fn warm_start_reaches_same_point() {
        let h = hs(2, &[(&[1.0, 0.2], 0.3), (&[-0.4, 1.0], 0.1)]);
        let m = MassMetric::identity(2);
        let p = SolverParams::default();
        let cold = project(&[-1.0, -1.0], &h, &m, &p).unwrap();
        let warm = project_warm(&[-1.0, -1.0], &h, &m, &p, Some(&cold.multipliers)).unwrap();
        assert!(warm.iterations <= 1);
        for k in 0..2 {
            assert!((cold.point[k] - warm.point[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn moreau_parts() {
        let c = hs(1, &[(&[1.0], 0.0)]);
        let m = MassMetric::identity(1);
        let p = SolverParams::default();
        assert_eq!(
            moreau_decompose(&[-3.0], &c, &m, &p).unwrap(),
            (vec![0.0], vec![-3.0])
        );
        assert_eq!(
            moreau_decompose(&[2.0], &c, &m, &p).unwrap(),
            (vec![2.0], vec![0.0])
        );

        let c = hs(2, &[(&[1.0, 0.0], 0.0)]);
        let (t, n) = moreau_decompose(&[-1.0, 2.0], &c, &MassMetric::identity(2), &p).unwrap();
        assert_eq!(t, vec![0.0, 2.0]);
        assert_eq!(n, vec![-1.0, 0.0]);
        assert_eq!(dot(&t, &n), 0.0);

        let shifted = hs(1, &[(&[1.0], 0.5)]);
        assert!(matches!(
            moreau_decompose(&[0.0], &shifted, &m, &p),
            Err(Error::NotACone { row: 0, .. })
        ));
    }

    #[test]
    fn rejects_bad_masses() {
        assert!(MassMetric::new(vec![1.0, 0.0]).is_err());
        assert!(MassMetric::new(vec![-2.0]).is_err());
    }
}
