//! Diagnostics on computed trajectories and h-refinement studies.
//!
//! Conventions: `q_h` is the piecewise affine interpolant of the grid
//! positions, `u_h` is piecewise constant with `u_h = u^{n+1}` on
//! `(t^n, t^{n+1}]`. Vector norms are Euclidean.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::constraints::{evaluate_all, ConstraintSystem, HalfspaceSystem, Origin, TOL_ACT};
use crate::linalg::{distance, max_abs, norm};
use crate::projection::project;
use crate::scheme::{simulate, Aborted, Scenario, Trajectory};
use crate::{Error, Result};

/// `sum_n |u^{n+1} - u^n|`.
pub fn total_variation<'a>(samples: impl IntoIterator<Item = &'a [f64]>) -> f64 {
    let mut it = samples.into_iter();
    let Some(mut prev) = it.next() else {
        return 0.0;
    };
    let mut var = 0.0;
    for u in it {
        var += distance(prev, u);
        prev = u;
    }
    var
}

/// `max_n |u^n|`.
pub fn sup_velocity(traj: &Trajectory) -> f64 {
    traj.records
        .iter()
        .fold(0.0, |m, r| f64::max(m, norm(&r.u)))
}

/// `sum_n (t^{n+1} - t^n) sum_i lambda_i^{n+1}`, the L1 mass of the
/// multipliers.
pub fn multiplier_mass(traj: &Trajectory) -> f64 {
    traj.records
        .windows(2)
        .map(|w| (w[1].t - w[0].t) * w[1].lambda.iter().sum::<f64>())
        .sum()
}

/// `sum_n (t^{n+1} - t^n) sum_i lambda_i^{n+1} max(0, g_i(t^{n+1}, q^{n+1}))`:
/// multiplier mass charged to constraints that are not saturated.
pub fn support_defect(traj: &Trajectory, cs: &dyn ConstraintSystem) -> Result<f64> {
    let mut total = 0.0;
    for w in traj.records.windows(2) {
        let rec = &w[1];
        if rec.lambda.iter().all(|l| *l == 0.0) {
            continue;
        }
        let values = evaluate_all(cs, rec.t, &rec.q)?;
        let charged: f64 = rec
            .lambda
            .iter()
            .zip(&values)
            .map(|(l, g)| l * g.max(0.0))
            .sum();
        total += (rec.t - w[0].t) * charged;
    }
    Ok(total)
}

/// Smallest gradient norm over the constraints recorded as active along the
/// trajectory; `1.0` when nothing was ever active.
pub fn gradient_floor(traj: &Trajectory, cs: &dyn ConstraintSystem) -> Result<f64> {
    let mut grad = vec![0.0; cs.dim()];
    let mut floor = f64::INFINITY;
    for rec in &traj.records {
        for &i in &rec.active.indices {
            cs.grad(i, rec.t, &rec.q, &mut grad)?;
            floor = floor.min(norm(&grad));
        }
    }
    Ok(if floor.is_finite() { floor } else { 1.0 })
}

/// Interior sample points per step used by [`feasibility_profile`].
pub const MIDSTEP_SAMPLES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FeasibilityProfile {
    /// `max_n max_i max(0, -g_i(t^n, q^n)) / alpha`.
    pub grid: f64,
    /// Same measure between grid times.
    pub midstep: f64,
}

/// Constraint violation scaled by `1 / alpha` (a distance proxy).
///
/// Between grid times the configuration is ambiguous at order `h`: the
/// affine interpolant `q_h(t)` and both endpoint states `q^n`, `q^{n+1}` are
/// all valid approximations of the motion at time `t`, so the midstep value
/// is the worst of the three at each of [`MIDSTEP_SAMPLES`] interior times.
pub fn feasibility_profile(
    traj: &Trajectory,
    cs: &dyn ConstraintSystem,
    alpha: f64,
) -> Result<FeasibilityProfile> {
    let violation = |t: f64, q: &[f64]| -> Result<f64> {
        let worst = evaluate_all(cs, t, q)?
            .into_iter()
            .fold(0.0f64, |m, g| m.max(-g));
        Ok(worst / alpha)
    };
    let mut grid: f64 = 0.0;
    for rec in &traj.records {
        grid = grid.max(violation(rec.t, &rec.q)?);
    }
    let mut midstep: f64 = 0.0;
    let mut q = vec![0.0; cs.dim()];
    for w in traj.records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let h = b.t - a.t;
        for k in 1..=MIDSTEP_SAMPLES {
            let s = k as f64 / (MIDSTEP_SAMPLES + 1) as f64;
            let t = a.t + s * h;
            for ((qk, qa), ub) in q.iter_mut().zip(&a.q).zip(&b.u) {
                *qk = qa + s * h * ub;
            }
            midstep = midstep
                .max(violation(t, &q)?)
                .max(violation(t, &a.q)?)
                .max(violation(t, &b.q)?);
        }
    }
    Ok(FeasibilityProfile { grid, midstep })
}

/// Least-squares slope through the origin of `violation ~ c0 * h`, from
/// `(h, violation)` pairs. Needs at least three points.
pub fn fit_feasibility_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "slope fit needs at least 3 step sizes, got {}",
            points.len()
        )));
    }
    let hh: f64 = points.iter().map(|(h, _)| h * h).sum();
    let hv: f64 = points.iter().map(|(h, v)| h * v).sum();
    Ok(hv / hh)
}

/// A run of consecutive steps carrying a velocity jump.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImpactWindow {
    /// Record holding the pre-impact velocity.
    pub start: usize,
    /// Record holding the post-impact velocity.
    pub end: usize,
    /// Time of the first jump, `t^{start}`.
    pub t: f64,
}

/// Locates velocity jumps: steps with
/// `|u^{n+1} - u^n| > jump_tol * (1 + h * force_scale)`.
///
/// The scheme resolves a contact over up to two steps (the constraint is
/// linearized at the old configuration, so the first step may stop short of
/// the boundary), hence each detection is widened by one trailing step and
/// overlapping or adjacent windows are merged.
pub fn detect_impacts(traj: &Trajectory, jump_tol: f64, force_scale: f64) -> Vec<ImpactWindow> {
    let recs = &traj.records;
    let last = recs.len().saturating_sub(1);
    let mut windows: Vec<ImpactWindow> = Vec::new();
    for n in 0..last {
        let h = recs[n + 1].t - recs[n].t;
        let jump = distance(&recs[n].u, &recs[n + 1].u);
        if jump <= jump_tol * (1.0 + h * force_scale) {
            continue;
        }
        let end = (n + 2).min(last);
        match windows.last_mut() {
            Some(w) if n <= w.end => w.end = w.end.max(end),
            _ => windows.push(ImpactWindow {
                start: n,
                end,
                t: recs[n].t,
            }),
        }
    }
    windows
}

/// `(t, |u_post - P_C(u_pre)|_M)` for every window, with `C` the admissible
/// velocity cone at the window's end state and the scenario's mass metric.
///
/// `C` is built from the constraints with `g_i <= tol_act (1 + |g_i|)` at the
/// end state together with those that carried a multiplier inside the
/// window: a contact that slides along a curved constraint opens a gap of
/// order `h^2` within a step and would otherwise drop out of the cone.
pub fn check_impact_law(
    traj: &Trajectory,
    scenario: &Scenario,
    windows: &[ImpactWindow],
    tol_act: f64,
) -> Result<Vec<(f64, f64)>> {
    let cs = &*scenario.constraints;
    let mut out = Vec::with_capacity(windows.len());
    for w in windows {
        let pre = &traj.records[w.start];
        let post = &traj.records[w.end];
        let cone = impact_cone(cs, traj, w, tol_act)?;
        let target = project(&pre.u, &cone, &scenario.metric, &scenario.params.solver)?;
        let diff: Vec<f64> = post
            .u
            .iter()
            .zip(&target.point)
            .map(|(a, b)| a - b)
            .collect();
        out.push((w.t, scenario.metric.norm(&diff)));
    }
    Ok(out)
}

fn impact_cone(
    cs: &dyn ConstraintSystem,
    traj: &Trajectory,
    w: &ImpactWindow,
    tol_act: f64,
) -> Result<HalfspaceSystem> {
    let post = &traj.records[w.end];
    let mut cone = HalfspaceSystem::new(cs.dim(), Origin::TangentCone { t: post.t });
    let mut grad = vec![0.0; cs.dim()];
    for i in 0..cs.count() {
        let g = cs.eval(i, post.t, &post.q)?;
        let acted = traj.records[w.start + 1..=w.end]
            .iter()
            .any(|r| r.lambda[i] > 0.0);
        if acted || g <= tol_act * (1.0 + libm::fabs(g)) {
            cs.grad(i, post.t, &post.q, &mut grad)?;
            cone.push(&grad, -cs.dt(i, post.t, &post.q)?, i)?;
        }
    }
    Ok(cone)
}

/// Largest `|M^-1 f(t^n, q^n)|` along the trajectory.
pub fn force_scale(traj: &Trajectory, scenario: &Scenario) -> Result<f64> {
    let d = scenario.dim();
    let mut f = vec![0.0; d];
    let mut a = vec![0.0; d];
    let mut scale: f64 = 0.0;
    for rec in &traj.records {
        scenario.force.eval(rec.t, &rec.q, &mut f)?;
        scenario.metric.apply_inverse(&f, &mut a);
        scale = scale.max(norm(&a));
    }
    Ok(scale)
}

/// Tuning of [`diagnose`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsOptions {
    pub jump_tol: f64,
    pub tol_act: f64,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        DiagnosticsOptions {
            jump_tol: 0.1,
            tol_act: TOL_ACT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DiagnosticsReport {
    pub h: f64,
    /// Grid-time violation, scaled as in [`feasibility_profile`].
    pub max_constraint_violation: f64,
    pub midstep_violation: f64,
    /// `midstep_violation / h`, this run's estimate of `c0`.
    pub feasibility_slope: f64,
    pub gradient_floor: f64,
    pub total_variation: f64,
    pub sup_velocity: f64,
    pub multiplier_mass: f64,
    pub support_defect: f64,
    pub impact_law_defects: Vec<(f64, f64)>,
    pub max_kkt_residual: f64,
    pub max_balance_residual: f64,
    pub max_complementarity: f64,
    pub min_multiplier: f64,
}

pub fn diagnose(
    scenario: &Scenario,
    traj: &Trajectory,
    opts: &DiagnosticsOptions,
) -> Result<DiagnosticsReport> {
    let cs = &*scenario.constraints;
    let alpha = gradient_floor(traj, cs)?;
    let profile = feasibility_profile(traj, cs, alpha)?;
    let scale = force_scale(traj, scenario)?;
    let windows = detect_impacts(traj, opts.jump_tol, scale);
    let impact_law_defects = check_impact_law(traj, scenario, &windows, opts.tol_act)?;
    let fold =
        |f: fn(&crate::scheme::StepRecord) -> f64| traj.records.iter().map(f).fold(0.0, f64::max);
    Ok(DiagnosticsReport {
        h: traj.h,
        max_constraint_violation: profile.grid,
        midstep_violation: profile.midstep,
        feasibility_slope: profile.midstep / traj.h,
        gradient_floor: alpha,
        total_variation: total_variation(traj.velocities()),
        sup_velocity: sup_velocity(traj),
        multiplier_mass: multiplier_mass(traj),
        support_defect: support_defect(traj, cs)?,
        impact_law_defects,
        max_kkt_residual: fold(|r| r.kkt_residual),
        max_balance_residual: fold(|r| r.balance_residual),
        max_complementarity: fold(|r| r.complementarity),
        min_multiplier: traj
            .records
            .iter()
            .flat_map(|r| r.lambda.iter().copied())
            .fold(0.0, f64::min),
    })
}

/// Differences below this (relative to the solution size) are rounding
/// noise and carry no rate.
pub const MACHINE_FLOOR: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergenceRow {
    /// Coarser step of the compared pair.
    pub h: f64,
    /// `max |q_h - q_{h/2}|` over the finer grid.
    pub dq_inf: f64,
    /// `integral |u_h - u_{h/2}| dt`.
    pub du_l1: f64,
    /// `log2` of the previous row's `dq_inf` over this one's.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Set when the position differences do not decrease monotonically.
    /// Limits are only known up to subsequences, so this is reported rather
    /// than treated as a failure.
    pub possible_non_uniqueness: bool,
}

/// Checks that `h_list` has at least two entries, each half the previous.
pub fn validate_halving_chain(h_list: &[f64]) -> Result<()> {
    if h_list.len() < 2 {
        return Err(Error::InvalidInput(String::from(
            "a convergence study needs at least two step sizes",
        )));
    }
    if let Some(h) = h_list.iter().find(|h| !(**h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidInput(format!(
            "step size must be positive, got {h}"
        )));
    }
    for w in h_list.windows(2) {
        if libm::fabs(w[0] / w[1] - 2.0) > 1e-9 {
            return Err(Error::InvalidInput(format!(
                "step sizes must halve: {} then {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

/// Position at time `t` of the piecewise affine interpolant.
fn position_at(traj: &Trajectory, t: f64, out: &mut [f64]) {
    let recs = &traj.records;
    let k = recs.partition_point(|r| r.t < t);
    if k == 0 {
        out.copy_from_slice(&recs[0].q);
        return;
    }
    if k >= recs.len() {
        out.copy_from_slice(&recs[recs.len() - 1].q);
        return;
    }
    let (a, b) = (&recs[k - 1], &recs[k]);
    let s = (t - a.t) / (b.t - a.t);
    for ((o, qa), qb) in out.iter_mut().zip(&a.q).zip(&b.q) {
        *o = qa + s * (qb - qa);
    }
}

/// Velocity on the step containing `t` (left-open intervals).
fn velocity_index(traj: &Trajectory, t: f64) -> usize {
    let recs = &traj.records;
    recs.partition_point(|r| r.t < t).clamp(1, recs.len() - 1)
}

/// `(max |q_a - q_b|, integral |u_a - u_b|)` with `b` the finer run.
pub fn cauchy_difference(coarse: &Trajectory, fine: &Trajectory) -> (f64, f64) {
    let d = fine.records[0].q.len();
    let mut qa = vec![0.0; d];
    let mut dq: f64 = 0.0;
    for r in &fine.records {
        position_at(coarse, r.t, &mut qa);
        dq = dq.max(distance(&qa, &r.q));
    }

    let mut breaks: Vec<f64> = coarse.times().chain(fine.times()).collect();
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut du = 0.0;
    for w in breaks.windows(2) {
        let len = w[1] - w[0];
        if len <= 0.0 {
            continue;
        }
        let mid = 0.5 * (w[0] + w[1]);
        let ua = &coarse.records[velocity_index(coarse, mid)].u;
        let ub = &fine.records[velocity_index(fine, mid)].u;
        du += len * distance(ua, ub);
    }
    (dq, du)
}

/// Builds the table from runs ordered by decreasing `h`.
pub fn convergence_table(runs: &[Trajectory]) -> Result<ConvergenceTable> {
    let hs: Vec<f64> = runs.iter().map(|r| r.h).collect();
    validate_halving_chain(&hs)?;
    let scale = runs
        .iter()
        .flat_map(|r| r.records.iter().map(|x| max_abs(&x.q)))
        .fold(1.0, f64::max);
    let floor = MACHINE_FLOOR * scale;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(runs.len() - 1);
    for w in runs.windows(2) {
        let (dq, du) = cauchy_difference(&w[0], &w[1]);
        let rate = rows.last().and_then(|prev| {
            (prev.dq_inf > floor && dq > floor).then(|| libm::log2(prev.dq_inf / dq))
        });
        rows.push(ConvergenceRow {
            h: w[0].h,
            dq_inf: dq,
            du_l1: du,
            rate,
        });
    }
    let possible_non_uniqueness = rows
        .windows(2)
        .any(|w| w[1].dq_inf > w[0].dq_inf && w[1].dq_inf > floor);
    Ok(ConvergenceTable {
        rows,
        possible_non_uniqueness,
    })
}

/// Failure of one run inside a study.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StudyError {
    #[error(transparent)]
    Config(#[from] Error),
    #[error("run with h = {h} aborted: {aborted}")]
    Run { h: f64, aborted: Aborted },
}

/// Runs the scenario for every `h` (sequentially) and tabulates the
/// successive differences.
pub fn convergence_study(
    scenario: &Scenario,
    h_list: &[f64],
) -> core::result::Result<ConvergenceTable, StudyError> {
    validate_halving_chain(h_list)?;
    let mut runs = Vec::with_capacity(h_list.len());
    for &h in h_list {
        runs.push(simulate(scenario, h).map_err(|aborted| StudyError::Run { h, aborted })?);
    }
    Ok(convergence_table(&runs)?)
}
