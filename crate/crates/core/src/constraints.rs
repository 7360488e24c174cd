//! Constraint families `g_i(t, q) >= 0`, active sets and the linearized
//! velocity sets built from them.
//!
//! A [`ConstraintSystem`] exposes values, spatial gradients and time
//! derivatives of each `g_i`. From it we build two polyhedra of velocities:
//!
//! * [`linearize_kh`]: `K_h(t, q) = { u : g_i(t, q) + h <grad g_i, u> >= 0 }`,
//!   the set the scheme projects onto;
//! * [`tangent_cone`]: `C_{t,q} = { u : dt g_i + <grad g_i, u> >= 0, i active }`,
//!   the admissible velocities used by the impact law.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::linalg::{dot, norm};
use crate::{Error, Result};

/// Relative tolerance used to decide `g_i = 0`.
pub const TOL_ACT: f64 = 1e-9;

/// Rows whose gradient norm falls below this are rejected.
pub const TOL_GRAD: f64 = 1e-12;

/// A finite family of scalar constraints `g_i(t, q) >= 0` on `R^d`.
///
/// Implementations are immutable and shareable across threads.
pub trait ConstraintSystem: Send + Sync {
    /// Dimension `d` of the configuration space.
    fn dim(&self) -> usize;

    /// Number of constraints `p`.
    fn count(&self) -> usize;

    fn eval(&self, i: usize, t: f64, q: &[f64]) -> Result<f64>;

    /// Writes `grad_q g_i(t, q)` into `out` (length `d`).
    fn grad(&self, i: usize, t: f64, q: &[f64], out: &mut [f64]) -> Result<()>;

    /// Partial time derivative `d/dt g_i(t, q)`.
    fn dt(&self, i: usize, t: f64, q: &[f64]) -> Result<f64>;

    /// `false` guarantees `dt == 0` everywhere.
    fn is_time_dependent(&self) -> bool;

    /// `true` when every `g_i(t, .)` is convex in `q`, which makes every
    /// computed grid configuration feasible.
    fn is_convex(&self) -> bool {
        false
    }

    /// Optional broad phase: indices of the constraints that may become
    /// active when every point of `q` moves by at most `reach`. `None`
    /// means "all of them".
    fn candidates(&self, _t: f64, _q: &[f64], _reach: f64) -> Option<Vec<usize>> {
        None
    }
}

/// Indices `i` with `g_i(t, q) <= rho`.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub threshold: f64,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Which set a [`HalfspaceSystem`] encodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Origin {
    /// `K_h(t, q)` for the given time and step.
    Linearized {
        t: f64,
        h: f64,
    },
    /// `C_{t,q}`.
    TangentCone {
        t: f64,
    },
    Custom,
}

/// A finite intersection of halfspaces `<a_i, u> >= b_i` in `R^d`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceSystem {
    dim: usize,
    normals: Vec<f64>,
    offsets: Vec<f64>,
    sources: Vec<usize>,
    origin: Origin,
}

impl HalfspaceSystem {
    pub fn new(dim: usize, origin: Origin) -> Self {
        HalfspaceSystem {
            dim,
            normals: Vec::new(),
            offsets: Vec::new(),
            sources: Vec::new(),
            origin,
        }
    }

    /// Builds a system from `(a_i, b_i)` pairs; row `k` gets source index `k`.
    pub fn from_rows<'a, I>(dim: usize, rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [f64], f64)>,
    {
        let mut hs = HalfspaceSystem::new(dim, Origin::Custom);
        for (k, (a, b)) in rows.into_iter().enumerate() {
            hs.push(a, b, k)?;
        }
        Ok(hs)
    }

    /// Appends the row `<a, u> >= b` coming from constraint `source`.
    pub fn push(&mut self, a: &[f64], b: f64, source: usize) -> Result<()> {
        if a.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: a.len(),
            });
        }
        let n = norm(a);
        if !(n >= TOL_GRAD) {
            return Err(Error::ZeroGradientRow {
                row: self.offsets.len(),
                source_index: source,
                norm: n,
            });
        }
        self.normals.extend_from_slice(a);
        self.offsets.push(b);
        self.sources.push(source);
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn normal(&self, row: usize) -> &[f64] {
        &self.normals[row * self.dim..(row + 1) * self.dim]
    }

    pub fn offset(&self, row: usize) -> f64 {
        self.offsets[row]
    }

    pub fn offsets(&self) -> &[f64] {
        &self.offsets
    }

    /// Constraint index the row was generated from.
    pub fn source(&self, row: usize) -> usize {
        self.sources[row]
    }

    /// `<a_i, u> - b_i` for row `i`.
    pub fn slack(&self, row: usize, u: &[f64]) -> f64 {
        dot(self.normal(row), u) - self.offsets[row]
    }

    /// Smallest slack over all rows (`+inf` for an empty system).
    pub fn min_slack(&self, u: &[f64]) -> f64 {
        (0..self.len()).fold(f64::INFINITY, |m, r| m.min(self.slack(r, u)))
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        self.min_slack(u) >= -tol
    }
}

/// Values `g_i(t, q)` of every constraint.
pub fn evaluate_all(cs: &dyn ConstraintSystem, t: f64, q: &[f64]) -> Result<Vec<f64>> {
    check_dim(cs, q)?;
    (0..cs.count()).map(|i| cs.eval(i, t, q)).collect()
}

/// The almost-active set `I_rho(t, q)`.
///
/// Values within `TOL_ACT * (1 + |g|)` of the threshold count as active so
/// that `rho = 0` recovers the exactly-active set `I(t, q)`.
pub fn active_set(cs: &dyn ConstraintSystem, t: f64, q: &[f64], rho: f64) -> Result<ActiveSet> {
    if !(rho >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "active-set threshold {rho} < 0"
        )));
    }
    let values = evaluate_all(cs, t, q)?;
    Ok(active_from_values(&values, rho))
}

pub(crate) fn active_from_values(values: &[f64], rho: f64) -> ActiveSet {
    let indices = values
        .iter()
        .enumerate()
        .filter(|(_, g)| is_active(**g, rho))
        .map(|(i, _)| i)
        .collect();
    ActiveSet {
        indices,
        threshold: rho,
    }
}

#[inline]
fn is_active(g: f64, rho: f64) -> bool {
    g <= rho + TOL_ACT * (1.0 + libm::fabs(g))
}

/// Builds `K_h(t_next, q)`: rows `a_i = grad g_i(t_next, q)`,
/// `b_i = -g_i(t_next, q) / h`.
///
/// With `screen_velocity = Some(v_max)` rows that cannot become active for
/// any velocity of norm at most `v_max` (`g_i > h |a_i| v_max`) are left out,
/// and the constraint system's broad phase is consulted when available.
pub fn linearize_kh(
    cs: &dyn ConstraintSystem,
    t_next: f64,
    q: &[f64],
    h: f64,
    screen_velocity: Option<f64>,
) -> Result<HalfspaceSystem> {
    if !(h > 0.0) {
        return Err(Error::InvalidInput(format!(
            "time step {h} must be positive"
        )));
    }
    check_dim(cs, q)?;
    let d = cs.dim();
    let mut hs = HalfspaceSystem::new(d, Origin::Linearized { t: t_next, h });
    let mut grad = vec![0.0; d];
    let mut push_row = |i: usize, hs: &mut HalfspaceSystem| -> Result<()> {
        let g = cs.eval(i, t_next, q)?;
        cs.grad(i, t_next, q, &mut grad)?;
        if let Some(vmax) = screen_velocity {
            let reach = h * norm(&grad) * vmax;
            if g > reach * (1.0 + 1e-9) + 1e-12 {
                return Ok(());
            }
        }
        hs.push(&grad, -g / h, i)
    };
    match screen_velocity.and_then(|v| cs.candidates(t_next, q, h * v)) {
        Some(candidates) => {
            for i in candidates {
                push_row(i, &mut hs)?;
            }
        }
        None => {
            for i in 0..cs.count() {
                push_row(i, &mut hs)?;
            }
        }
    }
    Ok(hs)
}

/// Builds the admissible-velocity cone `C_{t,q}`: rows `grad g_i`, offsets
/// `-dt g_i` for every `i` with `g_i(t, q) <= tol_act * (1 + |g_i|)`.
/// Without active constraints the system has no rows (all of `R^d`).
pub fn tangent_cone(
    cs: &dyn ConstraintSystem,
    t: f64,
    q: &[f64],
    tol_act: f64,
) -> Result<HalfspaceSystem> {
    check_dim(cs, q)?;
    let d = cs.dim();
    let mut hs = HalfspaceSystem::new(d, Origin::TangentCone { t });
    let mut grad = vec![0.0; d];
    for i in 0..cs.count() {
        let g = cs.eval(i, t, q)?;
        if g <= tol_act * (1.0 + libm::fabs(g)) {
            cs.grad(i, t, q, &mut grad)?;
            let dt = cs.dt(i, t, q)?;
            hs.push(&grad, -dt, i)?;
        }
    }
    Ok(hs)
}

fn check_dim(cs: &dyn ConstraintSystem, q: &[f64]) -> Result<()> {
    if q.len() != cs.dim() {
        return Err(Error::DimensionMismatch {
            expected: cs.dim(),
            found: q.len(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Built-in constraint kinds
// ---------------------------------------------------------------------------

/// `g(t, q) = <normal, q> + offset + rate * t`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineWall {
    pub normal: Vec<f64>,
    pub offset: f64,
    pub rate: f64,
}

impl AffineWall {
    pub fn new(normal: Vec<f64>, offset: f64, rate: f64) -> Self {
        AffineWall {
            normal,
            offset,
            rate,
        }
    }
}

/// A set of affine walls sharing one configuration space.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineWalls {
    dim: usize,
    walls: Vec<AffineWall>,
}

impl AffineWalls {
    pub fn new(dim: usize, walls: Vec<AffineWall>) -> Result<Self> {
        for (k, w) in walls.iter().enumerate() {
            if w.normal.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: w.normal.len(),
                });
            }
            let n = norm(&w.normal);
            if !(n >= TOL_GRAD) {
                return Err(Error::ZeroGradientRow {
                    row: k,
                    source_index: k,
                    norm: n,
                });
            }
        }
        Ok(AffineWalls { dim, walls })
    }

    pub fn walls(&self) -> &[AffineWall] {
        &self.walls
    }
}

impl ConstraintSystem for AffineWalls {
    fn dim(&self) -> usize {
        self.dim
    }

    fn count(&self) -> usize {
        self.walls.len()
    }

    fn eval(&self, i: usize, t: f64, q: &[f64]) -> Result<f64> {
        let w = &self.walls[i];
        Ok(dot(&w.normal, q) + w.offset + w.rate * t)
    }

    fn grad(&self, i: usize, _t: f64, _q: &[f64], out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.walls[i].normal);
        Ok(())
    }

    fn dt(&self, i: usize, _t: f64, _q: &[f64]) -> Result<f64> {
        Ok(self.walls[i].rate)
    }

    fn is_time_dependent(&self) -> bool {
        self.walls.iter().any(|w| w.rate != 0.0)
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// A line through `pivot` in the plane of coordinates `(axes.0, axes.1)`,
/// rotating at angular velocity `omega`. The admissible side is
/// `g(t, q) = <n(theta), (q_a, q_b) - pivot> >= 0` with
/// `n(theta) = (-sin theta, cos theta)` and `theta = theta0 + omega t`.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatingWall {
    pub dim: usize,
    pub axes: (usize, usize),
    pub pivot: [f64; 2],
    pub theta0: f64,
    pub omega: f64,
}

impl RotatingWall {
    fn angle(&self, t: f64) -> f64 {
        self.theta0 + self.omega * t
    }

    fn rel(&self, q: &[f64]) -> (f64, f64) {
        (
            q[self.axes.0] - self.pivot[0],
            q[self.axes.1] - self.pivot[1],
        )
    }
}

impl ConstraintSystem for RotatingWall {
    fn dim(&self) -> usize {
        self.dim
    }

    fn count(&self) -> usize {
        1
    }

    fn eval(&self, _i: usize, t: f64, q: &[f64]) -> Result<f64> {
        let th = self.angle(t);
        let (x, y) = self.rel(q);
        Ok(-libm::sin(th) * x + libm::cos(th) * y)
    }

    fn grad(&self, _i: usize, t: f64, _q: &[f64], out: &mut [f64]) -> Result<()> {
        let th = self.angle(t);
        out.fill(0.0);
        out[self.axes.0] = -libm::sin(th);
        out[self.axes.1] = libm::cos(th);
        Ok(())
    }

    fn dt(&self, _i: usize, t: f64, q: &[f64]) -> Result<f64> {
        let th = self.angle(t);
        let (x, y) = self.rel(q);
        Ok(self.omega * (-libm::cos(th) * x - libm::sin(th) * y))
    }

    fn is_time_dependent(&self) -> bool {
        self.omega != 0.0
    }

    fn is_convex(&self) -> bool {
        true
    }
}

type ValueFn = Box<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
type GradFn = Box<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A constraint given by closures. Missing derivatives fall back to central
/// finite differences (`eps = 1e-6 (1 + |q|)`), which is only accurate to
/// roughly `1e-9` and meant for prototyping.
///
/// A non-finite value signals that `q` is outside the constraint's domain.
pub struct FnConstraint {
    pub value: ValueFn,
    pub gradient: Option<GradFn>,
    pub time_derivative: Option<ValueFn>,
    pub time_dependent: bool,
    pub convex: bool,
}

impl FnConstraint {
    pub fn new(value: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        FnConstraint {
            value: Box::new(value),
            gradient: None,
            time_derivative: None,
            time_dependent: true,
            convex: false,
        }
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.gradient = Some(Box::new(grad));
        self
    }

    pub fn with_time_derivative(
        mut self,
        dt: impl Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.time_derivative = Some(Box::new(dt));
        self
    }

    pub fn time_independent(mut self) -> Self {
        self.time_dependent = false;
        self
    }

    pub fn convex(mut self) -> Self {
        self.convex = true;
        self
    }
}

/// Constraints defined by closures.
pub struct FnConstraints {
    dim: usize,
    items: Vec<FnConstraint>,
}

impl FnConstraints {
    pub fn new(dim: usize, items: Vec<FnConstraint>) -> Self {
        FnConstraints { dim, items }
    }
}

impl ConstraintSystem for FnConstraints {
    fn dim(&self) -> usize {
        self.dim
    }

    fn count(&self) -> usize {
        self.items.len()
    }

    fn eval(&self, i: usize, t: f64, q: &[f64]) -> Result<f64> {
        let g = (self.items[i].value)(t, q);
        if g.is_finite() {
            Ok(g)
        } else {
            Err(Error::EvaluationDomain { constraint: i, t })
        }
    }

    fn grad(&self, i: usize, t: f64, q: &[f64], out: &mut [f64]) -> Result<()> {
        let c = &self.items[i];
        match &c.gradient {
            Some(g) => g(t, q, out),
            None => {
                let eps = 1e-6 * (1.0 + norm(q));
                let mut x = q.to_vec();
                for k in 0..q.len() {
                    x[k] = q[k] + eps;
                    let hi = self.eval(i, t, &x)?;
                    x[k] = q[k] - eps;
                    let lo = self.eval(i, t, &x)?;
                    x[k] = q[k];
                    out[k] = (hi - lo) / (2.0 * eps);
                }
            }
        }
        Ok(())
    }

    fn dt(&self, i: usize, t: f64, q: &[f64]) -> Result<f64> {
        let c = &self.items[i];
        if !c.time_dependent {
            return Ok(0.0);
        }
        match &c.time_derivative {
            Some(f) => Ok(f(t, q)),
            None => {
                let eps = 1e-6 * (1.0 + libm::fabs(t));
                Ok((self.eval(i, t + eps, q)? - self.eval(i, t - eps, q)?) / (2.0 * eps))
            }
        }
    }

    fn is_time_dependent(&self) -> bool {
        self.items.iter().any(|c| c.time_dependent)
    }

    fn is_convex(&self) -> bool {
        self.items.iter().all(|c| c.convex)
    }
}

/// Concatenation of several systems over the same configuration space.
/// Constraint indices run through the parts in order.
pub struct Stacked {
    parts: Vec<Box<dyn ConstraintSystem>>,
    starts: Vec<usize>,
}

impl Stacked {
    pub fn new(parts: Vec<Box<dyn ConstraintSystem>>) -> Result<Self> {
        let dim = parts.first().map_or(0, |p| p.dim());
        let mut starts = Vec::with_capacity(parts.len());
        let mut acc = 0;
        for p in &parts {
            if p.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.dim(),
                });
            }
            starts.push(acc);
            acc += p.count();
        }
        Ok(Stacked { parts, starts })
    }

    fn locate(&self, i: usize) -> (&dyn ConstraintSystem, usize) {
        let k = match self.starts.binary_search(&i) {
            Ok(mut k) => {
                // skip empty parts sharing the same start
                while self.parts[k].count() == 0 {
                    k += 1;
                }
                k
            }
            Err(k) => k - 1,
        };
        (&*self.parts[k], i - self.starts[k])
    }
}

impl ConstraintSystem for Stacked {
    fn dim(&self) -> usize {
        self.parts.first().map_or(0, |p| p.dim())
    }

    fn count(&self) -> usize {
        self.parts.iter().map(|p| p.count()).sum()
    }

    fn eval(&self, i: usize, t: f64, q: &[f64]) -> Result<f64> {
        let (p, j) = self.locate(i);
        p.eval(j, t, q).map_err(|e| shift_index(e, i))
    }

    fn grad(&self, i: usize, t: f64, q: &[f64], out: &mut [f64]) -> Result<()> {
        let (p, j) = self.locate(i);
        p.grad(j, t, q, out).map_err(|e| shift_index(e, i))
    }

    fn dt(&self, i: usize, t: f64, q: &[f64]) -> Result<f64> {
        let (p, j) = self.locate(i);
        p.dt(j, t, q).map_err(|e| shift_index(e, i))
    }

    fn is_time_dependent(&self) -> bool {
        self.parts.iter().any(|p| p.is_time_dependent())
    }

    fn is_convex(&self) -> bool {
        self.parts.iter().all(|p| p.is_convex())
    }

    fn candidates(&self, t: f64, q: &[f64], reach: f64) -> Option<Vec<usize>> {
        let mut any = false;
        let mut out = Vec::new();
        for (p, &start) in self.parts.iter().zip(&self.starts) {
            match p.candidates(t, q, reach) {
                Some(c) => {
                    any = true;
                    out.extend(c.into_iter().map(|j| j + start));
                }
                None => out.extend(start..start + p.count()),
            }
        }
        any.then_some(out)
    }
}

fn shift_index(e: Error, global: usize) -> Error {
    match e {
        Error::EvaluationDomain { t, .. } => Error::EvaluationDomain {
            constraint: global,
            t,
        },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Assumption spot checks
// ---------------------------------------------------------------------------

/// Empirical constants for the regularity and independence assumptions.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AssumptionReport {
    pub samples: usize,
    /// Smallest gradient norm seen.
    pub alpha: f64,
    /// Largest of the gradient norms and `|dt g|` seen.
    pub beta: f64,
    /// Largest finite-difference estimate of the Hessian, `dt grad g` and
    /// `dt^2 g` (Frobenius / absolute value).
    pub second_order: f64,
    /// Largest observed ratio `sum l_i |grad g_i| / |sum l_i grad g_i|` over
    /// almost-active sets. `None` when no sample had an almost-active
    /// constraint (the check is vacuous).
    pub gamma: Option<f64>,
    pub rho: f64,
    pub failures: Vec<String>,
}

/// Samples the regularity bounds and the positive linear independence of
/// almost-active gradients at the given `(t, q)` points. Never fails on a
/// violated assumption: it is recorded in `failures` instead.
pub fn spot_check_assumptions(
    cs: &dyn ConstraintSystem,
    samples: &[(f64, Vec<f64>)],
    trials: usize,
    rho: f64,
    seed: u64,
) -> Result<AssumptionReport> {
    let d = cs.dim();
    let p = cs.count();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = AssumptionReport {
        samples: samples.len(),
        alpha: f64::INFINITY,
        beta: 0.0,
        second_order: 0.0,
        gamma: None,
        rho,
        failures: Vec::new(),
    };
    let mut grads = vec![0.0; p * d];
    let mut gp = vec![0.0; d];
    let mut gm = vec![0.0; d];
    for (t, q) in samples {
        let t = *t;
        check_dim(cs, q)?;
        let values = evaluate_all(cs, t, q)?;
        for i in 0..p {
            let g = &mut grads[i * d..(i + 1) * d];
            cs.grad(i, t, q, g)?;
            let n = norm(g);
            report.alpha = report.alpha.min(n);
            report.beta = report.beta.max(n);
            report.beta = report.beta.max(libm::fabs(cs.dt(i, t, q)?));
            if n < TOL_GRAD {
                report
                    .failures
                    .push(format!("constraint {i}: vanishing gradient at t = {t}"));
            }

            // Hessian columns by central differences of the gradient.
            let eps = 1e-5 * (1.0 + norm(q));
            let mut x = q.clone();
            let mut frob = 0.0;
            for k in 0..d {
                x[k] = q[k] + eps;
                cs.grad(i, t, &x, &mut gp)?;
                x[k] = q[k] - eps;
                cs.grad(i, t, &x, &mut gm)?;
                x[k] = q[k];
                for c in 0..d {
                    let h = (gp[c] - gm[c]) / (2.0 * eps);
                    frob += h * h;
                }
            }
            report.second_order = report.second_order.max(libm::sqrt(frob));

            if cs.is_time_dependent() {
                let et = 1e-4 * (1.0 + libm::fabs(t));
                cs.grad(i, t + et, q, &mut gp)?;
                cs.grad(i, t - et, q, &mut gm)?;
                let dtg = libm::sqrt(
                    gp.iter()
                        .zip(&gm)
                        .map(|(a, b)| ((a - b) / (2.0 * et)) * ((a - b) / (2.0 * et)))
                        .sum(),
                );
                let gtt =
                    (cs.eval(i, t + et, q)? - 2.0 * values[i] + cs.eval(i, t - et, q)?) / (et * et);
                report.second_order = report.second_order.max(dtg).max(libm::fabs(gtt));
            }
        }

        let almost = active_from_values(&values, rho);
        if almost.is_empty() {
            continue;
        }
        let mut worst: f64 = 0.0;
        let mut combo = vec![0.0; d];
        let mut weights = vec![0.0; almost.len()];
        // unit weights first, then random nonnegative combinations
        for trial in 0..almost.len() + trials {
            if trial < almost.len() {
                weights.fill(0.0);
                weights[trial] = 1.0;
            } else {
                for w in weights.iter_mut() {
                    *w = rng.gen::<f64>();
                }
            }
            combo.fill(0.0);
            let mut lhs = 0.0;
            for (w, &i) in weights.iter().zip(&almost.indices) {
                let g = &grads[i * d..(i + 1) * d];
                lhs += w * norm(g);
                crate::linalg::axpy(*w, g, &mut combo);
            }
            if lhs == 0.0 {
                continue;
            }
            let rhs = norm(&combo);
            let ratio = if rhs > 1e-14 * lhs {
                lhs / rhs
            } else {
                f64::INFINITY
            };
            worst = worst.max(ratio);
        }
        if !worst.is_finite() {
            report.failures.push(format!(
                "almost-active gradients at t = {t} admit a vanishing nonnegative combination"
            ));
        }
        report.gamma = Some(report.gamma.map_or(worst, |g: f64| g.max(worst)));
    }
    if samples.is_empty() || p == 0 {
        report.alpha = 0.0;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn wall_1d() -> AffineWalls {
        AffineWalls::new(1, vec![AffineWall::new(vec![1.0], 0.0, 0.0)]).unwrap()
    }

    fn moving_wall() -> AffineWalls {
        AffineWalls::new(1, vec![AffineWall::new(vec![1.0], 0.0, -1.0)]).unwrap()
    }

    #[test]
    fn evaluates_walls() {
        assert_eq!(evaluate_all(&wall_1d(), 0.0, &[0.7]).unwrap(), vec![0.7]);
        assert_eq!(
            evaluate_all(&moving_wall(), 0.5, &[0.5]).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        assert!(matches!(
            evaluate_all(&wall_1d(), 0.0, &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn active_sets_by_threshold() {
        let walls = AffineWalls::new(
            1,
            vec![
                AffineWall::new(vec![1.0], -0.05, 0.0),
                AffineWall::new(vec![1.0], -0.2, 0.0),
                AffineWall::new(vec![1.0], 0.0, 0.0),
            ],
        )
        .unwrap();
        // g = [0.05, 0.2, 0.0] at q = 0.1 after shifting
        let q = [0.1];
        let vals = evaluate_all(&walls, 0.0, &q).unwrap();
        assert!((vals[0] - 0.05).abs() < 1e-15 && (vals[1] + 0.1).abs() < 1e-15);
        let direct = active_from_values(&[0.05, 0.2, 0.0], 0.1);
        assert_eq!(direct.indices, vec![0, 2]);
        assert!(active_from_values(&[0.5], 0.0).is_empty());
        assert_eq!(active_from_values(&[0.0, 0.0], 0.0).indices, vec![0, 1]);
        assert!(active_set(&walls, 0.0, &q, -1.0).is_err());
    }

    #[test]
    fn kh_rows_for_wall() {
        let hs = linearize_kh(&wall_1d(), 0.1, &[0.0], 0.1, None).unwrap();
        assert_eq!(hs.len(), 1);
        assert_eq!(hs.normal(0), &[1.0]);
        assert_eq!(hs.offset(0), 0.0);

        let hs = linearize_kh(&wall_1d(), 0.1, &[0.05], 0.1, None).unwrap();
        assert!((hs.offset(0) + 0.5).abs() < 1e-15);
        assert!(hs.contains(&[-0.5], 1e-12));
        assert!(!hs.contains(&[-0.6], 1e-12));
    }

    #[test]
    fn kh_rejects_zero_gradient() {
        let cs = FnConstraints::new(
            1,
            vec![FnConstraint::new(|_, _| 1.0).with_gradient(|_, _, g| g[0] = 0.0)],
        );
        assert!(matches!(
            linearize_kh(&cs, 0.0, &[0.0], 0.1, None),
            Err(Error::ZeroGradientRow { .. })
        ));
    }

    #[test]
    fn kh_screening_drops_far_rows() {
        let walls = AffineWalls::new(
            1,
            vec![
                AffineWall::new(vec![1.0], 0.0, 0.0),
                AffineWall::new(vec![-1.0], 10.0, 0.0),
            ],
        )
        .unwrap();
        let full = linearize_kh(&walls, 0.0, &[0.01], 0.01, None).unwrap();
        assert_eq!(full.len(), 2);
        let screened = linearize_kh(&walls, 0.0, &[0.01], 0.01, Some(5.0)).unwrap();
        assert_eq!(screened.len(), 1);
        assert_eq!(screened.source(0), 0);
    }

    #[test]
    fn tangent_cones() {
        let c = tangent_cone(&wall_1d(), 0.0, &[0.0], TOL_ACT).unwrap();
        assert_eq!((c.len(), c.offset(0)), (1, 0.0));
        // moving wall q = t: u >= 1
        let c = tangent_cone(&moving_wall(), 0.3, &[0.3], TOL_ACT).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.offset(0), 1.0);
        // interior point, zero tolerance: no rows
        let c = tangent_cone(&wall_1d(), 0.0, &[0.4], 0.0).unwrap();
        assert!(c.is_empty());
        assert!(c.contains(&[-100.0], 0.0));
    }

    #[test]
    fn zero_velocity_lies_in_kh_of_feasible_point() {
        let hs = linearize_kh(&moving_wall(), 1.0, &[1.5], 0.01, None).unwrap();
        assert!(hs.contains(&[0.0], 0.0));
    }

    #[test]
    fn rotating_wall_derivatives_match_differences() {
        let w = RotatingWall {
            dim: 2,
            axes: (0, 1),
            pivot: [0.0, 0.0],
            theta0: 0.1,
            omega: 0.7,
        };
        let (t, q) = (0.4, [0.8, -0.3]);
        let eps = 1e-5;
        let fd_t =
            (w.eval(0, t + eps, &q).unwrap() - w.eval(0, t - eps, &q).unwrap()) / (2.0 * eps);
        assert!((fd_t - w.dt(0, t, &q).unwrap()).abs() < 1e-9);
        let mut g = [0.0; 2];
        w.grad(0, t, &q, &mut g).unwrap();
        for k in 0..2 {
            let mut a = q;
            let mut b = q;
            a[k] += eps;
            b[k] -= eps;
            let fd = (w.eval(0, t, &a).unwrap() - w.eval(0, t, &b).unwrap()) / (2.0 * eps);
            assert!((fd - g[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn closure_fallback_gradient() {
        // g = 1 - |q|^2 (unit disk), not convex, time independent
        let cs = FnConstraints::new(
            2,
            vec![FnConstraint::new(|_, q| 1.0 - q[0] * q[0] - q[1] * q[1]).time_independent()],
        );
        let mut g = [0.0; 2];
        cs.grad(0, 0.0, &[0.3, -0.4], &mut g).unwrap();
        assert!((g[0] + 0.6).abs() < 1e-8 && (g[1] - 0.8).abs() < 1e-8);
        assert_eq!(cs.dt(0, 0.0, &[0.3, -0.4]).unwrap(), 0.0);
        assert!(!cs.is_convex());
    }

    #[test]
    fn closure_domain_error() {
        let cs = FnConstraints::new(1, vec![FnConstraint::new(|_, q| libm::log(q[0]))]);
        assert!(matches!(
            evaluate_all(&cs, 0.0, &[-1.0]),
            Err(Error::EvaluationDomain { constraint: 0, .. })
        ));
    }

    #[test]
    fn stacked_indexing() {
        let empty = AffineWalls::new(1, vec![]).unwrap();
        let s = Stacked::new(vec![
            Box::new(wall_1d()),
            Box::new(empty),
            Box::new(moving_wall()),
        ])
        .unwrap();
        assert_eq!(s.count(), 2);
        assert_eq!(evaluate_all(&s, 0.25, &[1.0]).unwrap(), vec![1.0, 0.75]);
        assert!(s.is_time_dependent());
        assert!(s.is_convex());
    }

    #[test]
    fn spot_check_single_wall() {
        let r = spot_check_assumptions(
            &wall_1d(),
            &[(0.0, vec![0.0]), (0.0, vec![0.5])],
            20,
            0.1,
            7,
        )
        .unwrap();
        assert_eq!(r.alpha, 1.0);
        assert_eq!(r.beta, 1.0);
        assert_eq!(r.gamma, Some(1.0));
        assert!(r.failures.is_empty());
    }

    #[test]
    fn spot_check_opposing_walls_is_vacuous_in_the_middle() {
        let walls = AffineWalls::new(
            1,
            vec![
                AffineWall::new(vec![1.0], 0.0, 0.0),
                AffineWall::new(vec![-1.0], 1.0, 0.0),
            ],
        )
        .unwrap();
        let r = spot_check_assumptions(&walls, &[(0.0, vec![0.5])], 20, 0.25, 7).unwrap();
        assert_eq!(r.gamma, None);
        assert_eq!((r.alpha, r.beta), (1.0, 1.0));
    }

    #[test]
    fn spot_check_flags_opposing_active_gradients() {
        // both walls active at q = 0 (a degenerate slab of zero width)
        let walls = AffineWalls::new(
            1,
            vec![
                AffineWall::new(vec![1.0], 0.0, 0.0),
                AffineWall::new(vec![-1.0], 0.0, 0.0),
            ],
        )
        .unwrap();
        let r = spot_check_assumptions(&walls, &[(0.0, vec![0.0])], 200, 0.0, 3).unwrap();
        let g = r.gamma.unwrap();
        assert!(g > 5.0, "gamma = {g}");
    }
}
