//! Rigid spheres in 3D with pairwise non-overlap constraints.
//!
//! Particle `i` occupies coordinates `3i..3i+3` of the stacked configuration
//! `q` in `R^{3N}`. Constraint `k` is the pair `(i, j)`, `i < j`, numbered
//! row-major: `(0,1), (0,2), ..., (0,N-1), (1,2), ...`.
//!
//! The signed distance `D_ij = |q_i - q_j| - r_i - r_j` is convex in `q`, so
//! the linearized constraint at `q^n` under-estimates `D_ij(q^{n+1})` and grid
//! configurations stay non-overlapping up to solver tolerance.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::constraints::{AffineWall, AffineWalls, ConstraintSystem};
use crate::linalg::dot;
use crate::projection::MassMetric;
use crate::scheme::{ConstantForce, Trajectory};
use crate::{Error, Result};

/// Centers closer than this have no contact direction.
pub const COINCIDENT_TOL: f64 = 1e-12;

type RadiusFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Radius of one sphere as a function of time.
#[derive(Clone)]
pub enum Radius {
    Constant(f64),
    /// `base + rate * t`.
    Linear {
        base: f64,
        rate: f64,
    },
    /// Arbitrary positive function; its derivative is finite-differenced
    /// when `rate` is not given.
    Custom {
        value: RadiusFn,
        rate: Option<RadiusFn>,
    },
}

impl fmt::Debug for Radius {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Radius::Constant(r) => f.debug_tuple("Constant").field(r).finish(),
            Radius::Linear { base, rate } => f
                .debug_struct("Linear")
                .field("base", base)
                .field("rate", rate)
                .finish(),
            Radius::Custom { rate, .. } => f
                .debug_struct("Custom")
                .field("has_rate", &rate.is_some())
                .finish_non_exhaustive(),
        }
    }
}

impl Radius {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Radius::Constant(r) => *r,
            Radius::Linear { base, rate } => base + rate * t,
            Radius::Custom { value, .. } => value(t),
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match self {
            Radius::Constant(_) => 0.0,
            Radius::Linear { rate, .. } => *rate,
            Radius::Custom {
                rate: Some(rate), ..
            } => rate(t),
            Radius::Custom { value, rate: None } => {
                let eps = 1e-6 * (1.0 + libm::fabs(t));
                (value(t + eps) - value(t - eps)) / (2.0 * eps)
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Radius::Constant(_) => true,
            Radius::Linear { rate, .. } => *rate == 0.0,
            Radius::Custom { .. } => false,
        }
    }
}

/// Pair data at a configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPair {
    pub i: usize,
    pub j: usize,
    pub distance: f64,
    /// Unit vector from center `i` to center `j`.
    pub normal: [f64; 3],
    /// Gradient of the signed distance in `R^{3N}`: `-normal` in block `i`,
    /// `+normal` in block `j`.
    pub gradient: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SphereSystem {
    radii: Vec<Radius>,
    masses: Vec<f64>,
    broad_phase: bool,
}

impl SphereSystem {
    pub fn new(radii: Vec<Radius>, masses: Vec<f64>) -> Result<Self> {
        if radii.len() != masses.len() {
            return Err(Error::DimensionMismatch {
                expected: radii.len(),
                found: masses.len(),
            });
        }
        if let Some(m) = masses.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
            return Err(Error::InvalidInput(format!(
                "mass must be positive, got {m}"
            )));
        }
        for (i, r) in radii.iter().enumerate() {
            let r0 = r.at(0.0);
            if !(r0 > 0.0 && r0.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "radius of sphere {i} must be positive, got {r0}"
                )));
            }
        }
        Ok(SphereSystem {
            radii,
            masses,
            broad_phase: false,
        })
    }

    /// Spheres of equal constant radius and unit mass.
    pub fn uniform(n: usize, radius: f64) -> Result<Self> {
        Self::new(vec![Radius::Constant(radius); n], vec![1.0; n])
    }

    /// Enables uniform-grid neighbor pruning when the scheme screens rows.
    pub fn with_broad_phase(mut self, on: bool) -> Self {
        self.broad_phase = on;
        self
    }

    pub fn len(&self) -> usize {
        self.radii.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radii.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn radii(&self) -> &[Radius] {
        &self.radii
    }

    pub fn pair_count(&self) -> usize {
        let n = self.len();
        n * n.saturating_sub(1) / 2
    }

    /// Row-major index of pair `(i, j)`, `i < j`.
    pub fn pair_index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.len());
        let n = self.len();
        i * (2 * n - i - 1) / 2 + (j - i - 1)
    }

    /// Inverse of [`pair_index`](Self::pair_index).
    pub fn pair(&self, k: usize) -> (usize, usize) {
        let n = self.len();
        let mut i = 0;
        let mut start = 0;
        loop {
            let row = n - i - 1;
            if k < start + row {
                return (i, i + 1 + k - start);
            }
            start += row;
            i += 1;
        }
    }

    /// `M = diag(m_0, m_0, m_0, m_1, ...)`.
    pub fn mass_metric(&self) -> MassMetric {
        let diag = self.masses.iter().flat_map(|m| [*m; 3]).collect();
        MassMetric::new(diag).expect("masses validated on construction")
    }

    /// Checks `r_i(t) > 0` on `[0, horizon]`: exactly for constant and
    /// linear radii, on 1025 samples otherwise.
    pub fn validate_radii(&self, horizon: f64) -> Result<()> {
        for (i, r) in self.radii.iter().enumerate() {
            let ok = match r {
                Radius::Constant(v) => *v > 0.0,
                Radius::Linear { base, rate } => *base > 0.0 && base + rate * horizon > 0.0,
                Radius::Custom { value, .. } => {
                    (0..=1024).all(|k| value(horizon * k as f64 / 1024.0) > 0.0)
                }
            };
            if !ok {
                return Err(Error::InvalidInput(format!(
                    "radius of sphere {i} is not positive on [0, {horizon}]"
                )));
            }
        }
        Ok(())
    }

    fn center<'q>(&self, q: &'q [f64], i: usize) -> &'q [f64] {
        &q[3 * i..3 * i + 3]
    }

    fn separation(&self, q: &[f64], i: usize, j: usize) -> Result<([f64; 3], f64)> {
        let (a, b) = (self.center(q, i), self.center(q, j));
        let diff = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let len = libm::sqrt(dot(&diff, &diff));
        if len < COINCIDENT_TOL {
            return Err(Error::CoincidentCenters { i, j });
        }
        Ok((diff, len))
    }

    /// `D_ij(t, q) = |q_i - q_j| - r_i(t) - r_j(t)`.
    pub fn signed_distance(&self, q: &[f64], t: f64, i: usize, j: usize) -> Result<f64> {
        let (_, len) = self.separation(q, i, j)?;
        Ok(len - self.radii[i].at(t) - self.radii[j].at(t))
    }

    pub fn contact_gradient(&self, q: &[f64], t: f64, i: usize, j: usize) -> Result<ContactPair> {
        let (diff, len) = self.separation(q, i, j)?;
        let normal = [diff[0] / len, diff[1] / len, diff[2] / len];
        let mut gradient = vec![0.0; q.len()];
        for k in 0..3 {
            gradient[3 * i + k] = -normal[k];
            gradient[3 * j + k] = normal[k];
        }
        Ok(ContactPair {
            i,
            j,
            distance: len - self.radii[i].at(t) - self.radii[j].at(t),
            normal,
            gradient,
        })
    }

    /// Six walls per sphere keeping it inside the box `[lo, hi]`, as affine
    /// constraints on the stacked configuration. Wall order: sphere-major,
    /// then axis, lower face before upper.
    pub fn box_walls(&self, lo: [f64; 3], hi: [f64; 3]) -> Result<AffineWalls> {
        let d = 3 * self.len();
        let mut walls = Vec::with_capacity(6 * self.len());
        for (i, r) in self.radii.iter().enumerate() {
            let (base, rate) = match r {
                Radius::Constant(v) => (*v, 0.0),
                Radius::Linear { base, rate } => (*base, *rate),
                Radius::Custom { .. } => {
                    return Err(Error::InvalidInput(format!(
                        "box walls need a constant or linear radius (sphere {i})"
                    )))
                }
            };
            for k in 0..3 {
                let mut lower = vec![0.0; d];
                lower[3 * i + k] = 1.0;
                walls.push(AffineWall::new(lower, -lo[k] - base, -rate));
                let mut upper = vec![0.0; d];
                upper[3 * i + k] = -1.0;
                walls.push(AffineWall::new(upper, hi[k] - base, -rate));
            }
        }
        AffineWalls::new(d, walls)
    }

    /// Weight `m_i * g` on every sphere.
    pub fn gravity_force(&self, g: [f64; 3]) -> ConstantForce {
        ConstantForce(
            self.masses
                .iter()
                .flat_map(|m| [m * g[0], m * g[1], m * g[2]])
                .collect(),
        )
    }

    /// Total momentum and kinetic energy at every record.
    pub fn diagnostics(&self, traj: &Trajectory) -> ParticleDiagnostics {
        let metric = self.mass_metric();
        let mut momentum = Vec::with_capacity(traj.records.len());
        let mut kinetic_energy = Vec::with_capacity(traj.records.len());
        for rec in &traj.records {
            let mut p = [0.0; 3];
            for (i, m) in self.masses.iter().enumerate() {
                for (k, pk) in p.iter_mut().enumerate() {
                    *pk += m * rec.u[3 * i + k];
                }
            }
            momentum.push(p);
            kinetic_energy.push(metric.energy(&rec.u));
        }
        ParticleDiagnostics {
            momentum,
            kinetic_energy,
        }
    }

    fn max_radius(&self, t: f64) -> f64 {
        self.radii.iter().fold(0.0, |m, r| f64::max(m, r.at(t)))
    }

    /// Pairs whose centers are within `r_i + r_j + 2 reach`, found by
    /// bucketing centers on a uniform grid. Sorted by pair index.
    fn grid_pairs(&self, t: f64, q: &[f64], reach: f64) -> Vec<usize> {
        let cell = 2.0 * self.max_radius(t) + 2.0 * reach;
        let key = |i: usize| -> [i64; 3] {
            let c = self.center(q, i);
            [0, 1, 2].map(|k| libm::floor(c[k] / cell) as i64)
        };
        let mut grid: BTreeMap<[i64; 3], Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            grid.entry(key(i)).or_default().push(i);
        }
        let mut out = Vec::new();
        for i in 0..self.len() {
            let base = key(i);
            for dx in -1..=1 {
                for dy in -1..=1 {
                    for dz in -1..=1 {
                        let Some(bucket) = grid.get(&[base[0] + dx, base[1] + dy, base[2] + dz])
                        else {
                            continue;
                        };
                        for &j in bucket.iter().filter(|&&j| j > i) {
                            let a = self.center(q, i);
                            let b = self.center(q, j);
                            let d2: f64 = (0..3).map(|k| (b[k] - a[k]) * (b[k] - a[k])).sum();
                            let limit = self.radii[i].at(t) + self.radii[j].at(t) + 2.0 * reach;
                            if d2 < limit * limit {
                                out.push(self.pair_index(i, j));
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

impl ConstraintSystem for SphereSystem {
    fn dim(&self) -> usize {
        3 * self.len()
    }

    fn count(&self) -> usize {
        self.pair_count()
    }

    fn eval(&self, k: usize, t: f64, q: &[f64]) -> Result<f64> {
        let (i, j) = self.pair(k);
        self.signed_distance(q, t, i, j)
    }

    fn grad(&self, k: usize, _t: f64, q: &[f64], out: &mut [f64]) -> Result<()> {
        let (i, j) = self.pair(k);
        let (diff, len) = self.separation(q, i, j)?;
        out.fill(0.0);
        for c in 0..3 {
            out[3 * i + c] = -diff[c] / len;
            out[3 * j + c] = diff[c] / len;
        }
        Ok(())
    }

    fn dt(&self, k: usize, t: f64, _q: &[f64]) -> Result<f64> {
        let (i, j) = self.pair(k);
        Ok(-(self.radii[i].rate(t) + self.radii[j].rate(t)))
    }

    fn is_time_dependent(&self) -> bool {
        !self.radii.iter().all(Radius::is_constant)
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn candidates(&self, t: f64, q: &[f64], reach: f64) -> Option<Vec<usize>> {
        self.broad_phase.then(|| self.grid_pairs(t, q, reach))
    }
}

/// Conservation observables of a particle trajectory.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParticleDiagnostics {
    pub momentum: Vec<[f64; 3]>,
    /// `(1/2) <M u, u>`.
    pub kinetic_energy: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{active_set, Stacked};
    use crate::scheme::{simulate, Scenario};
    use alloc::boxed::Box;

    fn two(dist: f64) -> (SphereSystem, Vec<f64>) {
        (
            SphereSystem::uniform(2, 1.0).unwrap(),
            vec![0.0, 0.0, 0.0, dist, 0.0, 0.0],
        )
    }

    #[test]
    fn distances() {
        let (s, q) = two(3.0);
        assert_eq!(s.signed_distance(&q, 0.0, 0, 1).unwrap(), 1.0);
        let (s, q) = two(2.0);
        assert_eq!(s.signed_distance(&q, 0.0, 0, 1).unwrap(), 0.0);
        let grow = SphereSystem::new(
            vec![
                Radius::Linear {
                    base: 1.0,
                    rate: 1.0
                };
                2
            ],
            vec![1.0; 2],
        )
        .unwrap();
        let q = [0.0, 0.0, 0.0, 4.0, 0.0, 0.0];
        assert_eq!(grow.signed_distance(&q, 0.5, 0, 1).unwrap(), 1.0);
        assert_eq!(grow.dt(0, 0.5, &q).unwrap(), -2.0);
    }

    #[test]
    fn coincident_centers_are_rejected() {
        let (s, q) = two(0.0);
        assert_eq!(
            s.signed_distance(&q, 0.0, 0, 1),
            Err(Error::CoincidentCenters { i: 0, j: 1 })
        );
    }

    #[test]
    fn gradient_blocks() {
        let (s, q) = two(3.0);
        let c = s.contact_gradient(&q, 0.0, 0, 1).unwrap();
        assert_eq!(c.normal, [1.0, 0.0, 0.0]);
        assert_eq!(c.gradient, vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let swapped = s.contact_gradient(&q, 0.0, 1, 0).unwrap();
        assert_eq!(swapped.normal, [-1.0, 0.0, 0.0]);
        // D_ij is symmetric, so the stacked gradient is the same
        assert!(swapped
            .gradient
            .iter()
            .zip(&c.gradient)
            .all(|(a, b)| a == b));
        let q = [0.3, -1.2, 2.0, 1.1, 0.4, -0.7];
        let c = s.contact_gradient(&q, 0.0, 0, 1).unwrap();
        assert!((dot(&c.gradient, &c.gradient) - 2.0).abs() < 1e-14);
        assert_eq!(c.gradient.iter().filter(|x| **x != 0.0).count(), 6);
    }

    #[test]
    fn custom_radius_rate_is_finite_differenced() {
        let r = Radius::Custom {
            value: Arc::new(|t| 1.0 + 0.1 * libm::sin(t)),
            rate: None,
        };
        assert!((r.rate(0.3) - 0.1 * libm::cos(0.3)).abs() < 1e-8);
    }

    #[test]
    fn pair_numbering() {
        let s = SphereSystem::uniform(4, 0.5).unwrap();
        assert_eq!(s.pair_count(), 6);
        let pairs: Vec<_> = (0..6).map(|k| s.pair(k)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        for (k, (i, j)) in pairs.into_iter().enumerate() {
            assert_eq!(s.pair_index(i, j), k);
        }
        assert_eq!(SphereSystem::uniform(2, 1.0).unwrap().pair_count(), 1);
    }

    #[test]
    fn touching_chain_active_set() {
        let s = SphereSystem::uniform(3, 1.0).unwrap();
        let q = [0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 4.0, 0.0, 0.0];
        let act = active_set(&s, 0.0, &q, 0.0).unwrap();
        // pairs (0,1) and (1,2)
        assert_eq!(act.indices, vec![0, 2]);
    }

    #[test]
    fn contact_forces_carry_no_momentum() {
        let s = SphereSystem::uniform(4, 0.5).unwrap();
        let q = [0.0, 0.0, 0.0, 1.3, 0.2, 0.0, 0.1, 1.1, 0.4, 1.0, 1.0, 1.2];
        let weights = [0.7, 2.0, 0.1, 3.3, 0.0, 1.5];
        let mut total = vec![0.0; 12];
        let mut g = vec![0.0; 12];
        for (k, w) in weights.iter().enumerate() {
            s.grad(k, 0.0, &q, &mut g).unwrap();
            crate::linalg::axpy(*w, &g, &mut total);
        }
        for c in 0..3 {
            let p: f64 = (0..4).map(|i| total[3 * i + c]).sum();
            assert!(p.abs() < 1e-12);
        }
    }

    #[test]
    fn broad_phase_finds_close_pairs_only() {
        let s = SphereSystem::uniform(4, 0.5)
            .unwrap()
            .with_broad_phase(true);
        let q = [
            0.0, 0.0, 0.0, 1.05, 0.0, 0.0, 10.0, 0.0, 0.0, 10.0, 1.0, 0.0,
        ];
        assert_eq!(s.candidates(0.0, &q, 0.03), Some(vec![0, 5]));
        assert_eq!(s.candidates(0.0, &q, 0.001), Some(vec![5]));
        let off = SphereSystem::uniform(4, 0.5).unwrap();
        assert_eq!(off.candidates(0.0, &q, 0.01), None);
    }

    #[test]
    fn box_walls_confine_each_sphere() {
        let s = SphereSystem::uniform(2, 0.5).unwrap();
        let walls = s.box_walls([0.0; 3], [4.0; 3]).unwrap();
        assert_eq!(walls.count(), 12);
        let q = [0.5, 1.0, 3.5, 2.0, 2.0, 2.0];
        let vals: Vec<f64> = (0..12).map(|k| walls.eval(k, 0.0, &q).unwrap()).collect();
        assert_eq!(&vals[..6], &[0.0, 3.0, 0.5, 2.5, 3.0, 0.0]);
    }

    #[test]
    fn head_on_inelastic_collision() {
        let s = SphereSystem::uniform(2, 1.0).unwrap();
        let scn = Scenario::new(
            "pair",
            Box::new(s.clone()),
            Box::new(ConstantForce(vec![0.0; 6])),
            vec![0.0, 0.0, 0.0, 2.5, 0.0, 0.0],
            vec![1.0, 0.0, 0.0, -1.0, 0.0, 0.0],
            1.0,
        );
        let traj = simulate(&scn, 0.01).unwrap();
        let diag = s.diagnostics(&traj);
        assert!((diag.kinetic_energy[0] - 1.0).abs() < 1e-15);
        let last = traj.last();
        assert!(last.u.iter().all(|x| x.abs() < 1e-10), "{:?}", last.u);
        assert!(diag.kinetic_energy.last().unwrap().abs() < 1e-20);
        for p in &diag.momentum {
            assert!(p.iter().all(|x| x.abs() < 1e-12));
        }
        for r in &traj.records {
            assert!(s.signed_distance(&r.q, r.t, 0, 1).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn resting_sphere_balances_gravity() {
        let s = SphereSystem::new(vec![Radius::Constant(1.0)], vec![2.0]).unwrap();
        let floor =
            AffineWalls::new(3, vec![AffineWall::new(vec![0.0, 0.0, 1.0], -1.0, 0.0)]).unwrap();
        let mut scn = Scenario::new(
            "rest",
            Box::new(Stacked::new(vec![Box::new(s.clone()), Box::new(floor)]).unwrap()),
            Box::new(s.gravity_force([0.0, 0.0, -9.81])),
            vec![0.0, 0.0, 1.0],
            vec![0.0; 3],
            0.5,
        );
        scn.metric = s.mass_metric();
        let traj = simulate(&scn, 0.01).unwrap();
        for r in &traj.records[1..] {
            assert!((r.lambda[0] - 2.0 * 9.81).abs() < 1e-8);
            assert!(r.u.iter().all(|x| x.abs() < 1e-12));
        }
    }
}
