//! The prediction-correction loop.
//!
//! Given `(t^n, q^n, u^n)` and a step `h`, one step computes
//!
//! ```text
//! f^n     = (1/h) * integral of f(s, q^n) over [t^n, t^n + h]
//! u^{n+1} = P_{K_h(t^n + h, q^n)} (u^n + h M^-1 f^n)      (mass metric)
//! q^{n+1} = q^n + h u^{n+1}
//! ```
//!
//! and recovers the contact intensities `lambda^{n+1} = mu / h` from the
//! projection multipliers, so that the discrete momentum balance
//! `M (u^{n+1} - u^n) / h = f^n + sum_i lambda_i grad g_i` holds up to solver
//! tolerance.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::constraints::{
    active_from_values, evaluate_all, linearize_kh, tangent_cone, ActiveSet, ConstraintSystem,
    HalfspaceSystem, TOL_ACT,
};
use crate::linalg::{dot, max_abs};
use crate::projection::{project_warm, MassMetric, SolverParams};
use crate::{Error, Result};

/// External force field `f(t, q)`.
pub trait Force: Send + Sync {
    fn eval(&self, t: f64, q: &[f64], out: &mut [f64]) -> Result<()>;
}

/// `f(t, q) = c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantForce(pub Vec<f64>);

impl Force for ConstantForce {
    fn eval(&self, _t: f64, _q: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.0);
        Ok(())
    }
}

/// `f(t, q) = constant + t * slope`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineForce {
    pub constant: Vec<f64>,
    pub slope: Vec<f64>,
}

impl Force for AffineForce {
    fn eval(&self, t: f64, _q: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, c), s) in out.iter_mut().zip(&self.constant).zip(&self.slope) {
            *o = c + t * s;
        }
        Ok(())
    }
}

/// A force given by a closure. Non-finite output is reported as a force
/// evaluation failure.
pub struct FnForce<F>(pub F);

impl<F> Force for FnForce<F>
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, t: f64, q: &[f64], out: &mut [f64]) -> Result<()> {
        (self.0)(t, q, out);
        if out.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::ForceEvaluation { t })
        }
    }
}

/// Rule for the time average of the force over a step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Quadrature {
    /// Two-point trapezoid, exact for forces affine in `t`.
    #[default]
    Trapezoid,
    /// Composite trapezoid, halving the panels until two successive
    /// estimates agree to `tolerance * (1 + |f|)`.
    Adaptive { tolerance: f64 },
}

/// `(1/h) * integral_{t_n}^{t_n + h} f(s, q_n) ds`.
pub fn average_force(
    force: &dyn Force,
    t_n: f64,
    h: f64,
    q_n: &[f64],
    dim: usize,
    rule: Quadrature,
) -> Result<Vec<f64>> {
    let mut a = vec![0.0; dim];
    let mut b = vec![0.0; dim];
    force.eval(t_n, q_n, &mut a)?;
    force.eval(t_n + h, q_n, &mut b)?;
    let mut avg: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
    let Quadrature::Adaptive { tolerance } = rule else {
        return Ok(avg);
    };

    // running sum of the interior samples, reused across levels
    let mut interior = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let mut panels = 1usize;
    for _ in 0..20 {
        let step = h / panels as f64;
        for k in 0..panels {
            force.eval(t_n + (k as f64 + 0.5) * step, q_n, &mut tmp)?;
            for (s, x) in interior.iter_mut().zip(&tmp) {
                *s += x;
            }
        }
        panels *= 2;
        let next: Vec<f64> = (0..dim)
            .map(|i| (0.5 * (a[i] + b[i]) + interior[i]) / panels as f64)
            .collect();
        let change = next
            .iter()
            .zip(&avg)
            .fold(0.0f64, |m, (x, y)| m.max(libm::fabs(x - y)));
        avg = next;
        if change <= tolerance * (1.0 + max_abs(&avg)) {
            break;
        }
    }
    Ok(avg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SchemeParams {
    pub solver: SolverParams,
    pub quadrature: Quadrature,
    /// Start each projection from the previous step's multipliers.
    pub warm_start: bool,
    /// Velocity cap used to leave out rows that cannot activate within a
    /// step. `None` keeps every row.
    pub screen_velocity: Option<f64>,
    /// Threshold of the active set stored in each record,
    /// `I_rho(t^{n+1}, q^{n+1})`.
    pub active_threshold: f64,
}

impl Default for SchemeParams {
    fn default() -> Self {
        SchemeParams {
            solver: SolverParams::default(),
            quadrature: Quadrature::Trapezoid,
            warm_start: true,
            screen_velocity: None,
            active_threshold: 1e-8,
        }
    }
}

/// Everything needed to run the scheme.
pub struct Scenario {
    pub label: String,
    pub constraints: Box<dyn ConstraintSystem>,
    pub force: Box<dyn Force>,
    pub q0: Vec<f64>,
    pub u0: Vec<f64>,
    pub horizon: f64,
    pub metric: MassMetric,
    /// Restitution coefficient in `[0, 1]`; `0` is the inelastic scheme.
    pub restitution: f64,
    pub params: SchemeParams,
}

impl Scenario {
    /// A scenario with identity masses, no restitution and default
    /// parameters.
    pub fn new(
        label: impl Into<String>,
        constraints: Box<dyn ConstraintSystem>,
        force: Box<dyn Force>,
        q0: Vec<f64>,
        u0: Vec<f64>,
        horizon: f64,
    ) -> Self {
        let d = constraints.dim();
        Scenario {
            label: label.into(),
            constraints,
            force,
            q0,
            u0,
            horizon,
            metric: MassMetric::identity(d),
            restitution: 0.0,
            params: SchemeParams::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.constraints.dim()
    }

    /// Checks dimensions, the horizon, the restitution coefficient and the
    /// initial state. A boundary start is accepted only when `u0` lies in
    /// the admissible cone `C_{0,q0}`.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        for found in [self.q0.len(), self.u0.len(), self.metric.dim()] {
            if found != d {
                return Err(Error::DimensionMismatch { expected: d, found });
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return Err(Error::InvalidInput(format!(
                "restitution must lie in [0, 1], got {}",
                self.restitution
            )));
        }
        if self.restitution > 0.0 && self.constraints.is_time_dependent() {
            return Err(Error::UnsupportedTimeDependent);
        }
        let values = evaluate_all(&*self.constraints, 0.0, &self.q0)?;
        if let Some((i, g)) = values
            .iter()
            .enumerate()
            .find(|(_, g)| **g < -TOL_ACT * (1.0 + libm::fabs(**g)))
        {
            return Err(Error::InvalidInput(format!(
                "initial configuration violates constraint {i} (g = {g:e})"
            )));
        }
        if values
            .iter()
            .any(|g| *g <= TOL_ACT * (1.0 + libm::fabs(*g)))
        {
            let cone = tangent_cone(&*self.constraints, 0.0, &self.q0, TOL_ACT)?;
            if !cone.contains(&self.u0, 1e-9) {
                return Err(Error::InvalidInput(String::from(
                    "initial configuration is on the boundary and u0 is not an admissible velocity",
                )));
            }
        }
        Ok(())
    }

    /// Stable 64-bit digest of the label and the numeric data.
    pub fn digest(&self, h: f64) -> u64 {
        let mut hash = Fnv::new();
        hash.write(self.label.as_bytes());
        for x in self
            .q0
            .iter()
            .chain(&self.u0)
            .chain(self.metric.diagonal())
            .chain([self.horizon, h, self.restitution].iter())
        {
            hash.write(&x.to_bits().to_le_bytes());
        }
        hash.write(&(self.constraints.count() as u64).to_le_bytes());
        hash.0
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}

/// State after step `n`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepRecord {
    pub n: usize,
    pub t: f64,
    pub q: Vec<f64>,
    pub u: Vec<f64>,
    /// Contact intensities `lambda_i >= 0`, one per constraint.
    pub lambda: Vec<f64>,
    /// `I_rho(t, q)` at the new state.
    pub active: ActiveSet,
    pub kkt_residual: f64,
    /// Max-norm residual of the discrete momentum balance.
    pub balance_residual: f64,
    /// `max_i lambda_i * max(0, g_i(t, q^{n-1}) + h <grad g_i, u>)`.
    pub complementarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub h: f64,
    pub scenario_hash: u64,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.t)
    }

    pub fn velocities(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.records.iter().map(|r| r.u.as_slice())
    }

    pub fn last(&self) -> &StepRecord {
        self.records
            .last()
            .expect("trajectory has the initial record")
    }
}

/// A simulation that stopped early.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("step {step} failed: {error}")]
pub struct Aborted {
    pub partial: Trajectory,
    pub step: usize,
    pub error: Error,
}

/// Steps a scenario, carrying the previous multipliers (warm start and the
/// new-contact test of the restitution rule).
pub struct Stepper<'a> {
    scenario: &'a Scenario,
    prev_mu: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(scenario: &'a Scenario) -> Self {
        Stepper {
            scenario,
            prev_mu: vec![0.0; scenario.constraints.count()],
        }
    }

    /// Advances `prev` by `h`, using the scenario's restitution coefficient.
    pub fn advance(&mut self, prev: &StepRecord, h: f64) -> Result<StepRecord> {
        self.step_from(
            prev.n,
            prev.t,
            &prev.q,
            &prev.u,
            h,
            self.scenario.restitution,
        )
    }

    fn step_from(
        &mut self,
        n: usize,
        t_n: f64,
        q_n: &[f64],
        u_n: &[f64],
        h: f64,
        restitution: f64,
    ) -> Result<StepRecord> {
        let scn = self.scenario;
        let cs = &*scn.constraints;
        let d = cs.dim();
        if q_n.len() != d || u_n.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: q_n.len().min(u_n.len()),
            });
        }
        if restitution > 0.0 && cs.is_time_dependent() {
            return Err(Error::UnsupportedTimeDependent);
        }
        let t_next = t_n + h;
        let force = average_force(&*scn.force, t_n, h, q_n, d, scn.params.quadrature)?;

        // prediction
        let mut v = u_n.to_vec();
        let mut accel = vec![0.0; d];
        scn.metric.apply_inverse(&force, &mut accel);
        crate::linalg::axpy(h, &accel, &mut v);

        // correction
        let mut set = linearize_kh(cs, t_next, q_n, h, scn.params.screen_velocity)?;
        let warm: Option<Vec<f64>> = scn.params.warm_start.then(|| {
            (0..set.len())
                .map(|r| self.prev_mu[set.source(r)])
                .collect()
        });
        let mut proj = project_warm(&v, &set, &scn.metric, &scn.params.solver, warm.as_deref())?;

        if restitution > 0.0 {
            let fresh: Vec<usize> = (0..set.len())
                .filter(|&r| proj.multipliers[r] > 1e-12 && self.prev_mu[set.source(r)] < 1e-12)
                .collect();
            if !fresh.is_empty() {
                for &r in &fresh {
                    let a = set.normal(r).to_vec();
                    let rebound = -restitution * dot(&a, &v);
                    set.push(&a, rebound, set.source(r))?;
                }
                let mut warm2 = proj.multipliers.clone();
                warm2.resize(set.len(), 0.0);
                proj = project_warm(&v, &set, &scn.metric, &scn.params.solver, Some(&warm2))?;
            }
        }

        let u_next = proj.point;
        let q_next: Vec<f64> = q_n.iter().zip(&u_next).map(|(q, u)| q + h * u).collect();

        let p = cs.count();
        let mut mu = vec![0.0; p];
        for (r, m) in proj.multipliers.iter().enumerate() {
            mu[set.source(r)] += m;
        }
        let lambda: Vec<f64> = mu.iter().map(|m| m / h).collect();

        let balance_residual =
            balance_residual(&scn.metric, u_n, &u_next, h, &force, &set, &lambda);
        let complementarity = complementarity_defect(&set, &u_next, h, &lambda);

        let values = evaluate_all(cs, t_next, &q_next)?;
        let active = active_from_values(&values, scn.params.active_threshold);

        self.prev_mu = mu;
        Ok(StepRecord {
            n: n + 1,
            t: t_next,
            q: q_next,
            u: u_next,
            lambda,
            active,
            kkt_residual: proj.kkt_residual,
            balance_residual,
            complementarity,
        })
    }
}

/// `|M (u^{n+1} - u^n)/h - f^n - sum_i lambda_i grad g_i|_inf`, the
/// gradients taken from the rows of `set` (one per constraint that was
/// materialized).
fn balance_residual(
    metric: &MassMetric,
    u_n: &[f64],
    u_next: &[f64],
    h: f64,
    force: &[f64],
    set: &HalfspaceSystem,
    lambda: &[f64],
) -> f64 {
    let m = metric.diagonal();
    let mut r: Vec<f64> = (0..u_n.len())
        .map(|k| m[k] * (u_next[k] - u_n[k]) / h - force[k])
        .collect();
    let mut seen = vec![false; lambda.len()];
    for row in 0..set.len() {
        let i = set.source(row);
        if seen[i] {
            continue;
        }
        seen[i] = true;
        crate::linalg::axpy(-lambda[i], set.normal(row), &mut r);
    }
    max_abs(&r)
}

fn complementarity_defect(set: &HalfspaceSystem, u: &[f64], h: f64, lambda: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    let mut seen = vec![false; lambda.len()];
    for row in 0..set.len() {
        let i = set.source(row);
        if seen[i] {
            continue;
        }
        seen[i] = true;
        // g_i(t^{n+1}, q^n) + h <a_i, u> = h (<a_i, u> - b_i)
        let slack = h * set.slack(row, u);
        worst = worst.max(lambda[i] * slack.max(0.0));
    }
    worst
}

/// One step of the inelastic scheme from `(t_n, q_n, u_n)`.
pub fn step(
    scenario: &Scenario,
    n: usize,
    t_n: f64,
    q_n: &[f64],
    u_n: &[f64],
    h: f64,
) -> Result<StepRecord> {
    Stepper::new(scenario).step_from(n, t_n, q_n, u_n, h, 0.0)
}

/// One step with the restitution rule and no contact history, so every
/// contact found in this step counts as new.
///
/// With `v = u_n + h M^-1 f` and `P = P_{K_h}(v)`, each row that picks up a
/// positive multiplier gets the extra constraint `<a_i, u> >= -e <a_i, v>`
/// and `v` is projected again. A single contact thus leaves with `-e` times
/// its approach normal velocity. With `e = 0` this is exactly [`step`].
pub fn step_with_restitution(
    scenario: &Scenario,
    n: usize,
    t_n: f64,
    q_n: &[f64],
    u_n: &[f64],
    h: f64,
) -> Result<StepRecord> {
    if scenario.restitution == 0.0 {
        return step(scenario, n, t_n, q_n, u_n, h);
    }
    Stepper::new(scenario).step_from(n, t_n, q_n, u_n, h, scenario.restitution)
}

/// Number of full steps and the length of a trailing partial step (zero when
/// `h` divides the horizon up to rounding).
pub fn step_count(horizon: f64, h: f64) -> (usize, f64) {
    let ratio = horizon / h;
    let nearest = libm::round(ratio);
    if libm::fabs(ratio - nearest) <= 1e-9 * ratio.max(1.0) {
        (nearest as usize, 0.0)
    } else {
        let full = libm::floor(ratio);
        (full as usize, horizon - full * h)
    }
}

/// Runs the scheme on `[0, T]`.
///
/// Grid times are `t^n = n h`; when `h` does not divide `T`, one shortened
/// step ends exactly at `T`. On failure the records computed so far are
/// returned inside [`Aborted`].
pub fn simulate(scenario: &Scenario, h: f64) -> core::result::Result<Trajectory, Aborted> {
    let mut traj = Trajectory {
        records: Vec::new(),
        h,
        scenario_hash: scenario.digest(h),
    };
    let abort = |traj: Trajectory, step, error| Aborted {
        partial: traj,
        step,
        error,
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(abort(
            traj,
            0,
            Error::InvalidInput(format!("time step must be positive, got {h}")),
        ));
    }
    if let Err(e) = scenario.validate() {
        return Err(abort(traj, 0, e));
    }
    let cs = &*scenario.constraints;
    let initial_active = match evaluate_all(cs, 0.0, &scenario.q0) {
        Ok(values) => active_from_values(&values, scenario.params.active_threshold),
        Err(e) => return Err(abort(traj, 0, e)),
    };
    traj.records.push(StepRecord {
        n: 0,
        t: 0.0,
        q: scenario.q0.clone(),
        u: scenario.u0.clone(),
        lambda: vec![0.0; cs.count()],
        active: initial_active,
        kkt_residual: 0.0,
        balance_residual: 0.0,
        complementarity: 0.0,
    });

    let (full, partial) = step_count(scenario.horizon, h);
    let total = full + usize::from(partial > 0.0);
    let mut stepper = Stepper::new(scenario);
    for n in 0..total {
        let prev = traj.last();
        let (t_n, t_next) = if n < full {
            (n as f64 * h, (n + 1) as f64 * h)
        } else {
            (full as f64 * h, scenario.horizon)
        };
        let dt = t_next - t_n;
        match stepper.step_from(
            n,
            t_n,
            &prev.q.clone(),
            &prev.u.clone(),
            dt,
            scenario.restitution,
        ) {
            Ok(mut rec) => {
                // grid times are n*h, not accumulated sums
                rec.t = t_next;
                traj.records.push(rec);
            }
            Err(e) => return Err(abort(traj, n + 1, e)),
        }
    }
    Ok(traj)
}
