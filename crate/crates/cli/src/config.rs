//! JSON scenario files.

use std::fs;
use std::path::{Path, PathBuf};

use proxstep_core::constraints::{
    AffineWall, AffineWalls, ConstraintSystem, RotatingWall, Stacked,
};
use proxstep_core::particles::{Radius, SphereSystem};
use proxstep_core::projection::{MassMetric, SolverParams};
use proxstep_core::scheme::{
    AffineForce, ConstantForce, FnForce, Force, Quadrature, Scenario, SchemeParams,
};
use serde::{Deserialize, Serialize};

use crate::builtins;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid scenario file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown builtin scenario `{0}` (see `list-builtins`)")]
    UnknownBuiltin(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] proxstep_core::Error),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Start from a catalog scenario; the remaining fields override it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub builtin: Option<String>,
    /// Sphere count for `box-n-spheres`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub walls: Vec<WallSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rotating_walls: Vec<RotatingWallSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<ParticlesSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force: Option<ForceSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "T")]
    pub horizon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "e")]
    pub restitution: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<Quadrature>,
    /// Velocity cap for row screening.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub screening: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

/// `<normal, q> + offset + rate * t >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WallSpec {
    pub normal: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotatingWallSpec {
    pub axes: [usize; 2],
    #[serde(default)]
    pub pivot: [f64; 2],
    #[serde(default)]
    pub theta0: f64,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticlesSpec {
    pub positions: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<[f64; 3]>>,
    pub radii: Vec<RadiusSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masses: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gravity: Option<[f64; 3]>,
    #[serde(default, rename = "box", skip_serializing_if = "Option::is_none")]
    pub bounds: Option<BoxSpec>,
    #[serde(default)]
    pub broad_phase: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RadiusSpec {
    Constant(f64),
    Linear { base: f64, rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ForceSpec {
    Constant(Vec<f64>),
    /// Acceleration applied to every sphere (particles only).
    Gravity([f64; 3]),
    Affine {
        constant: Vec<f64>,
        slope: Vec<f64>,
    },
    /// `zero`, or `sine` (`f_k = sin t` in every coordinate).
    Builtin(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_sweeps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_fallback: Option<bool>,
}

/// A scenario ready to run, with the run settings found in the file.
pub struct Loaded {
    pub scenario: Scenario,
    pub spheres: Option<SphereSystem>,
    pub h: Option<f64>,
    pub h_list: Option<Vec<f64>>,
    pub output: Option<PathBuf>,
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads a file, or a catalog entry given as `builtin:NAME` (with
    /// `builtin:box-n-spheres:N` for a sphere count).
    pub fn load(spec: &str) -> Result<Self, ConfigError> {
        if let Some(rest) = spec.strip_prefix("builtin:") {
            let (name, count) = match rest.split_once(':') {
                Some((name, n)) => {
                    let n = n
                        .parse()
                        .map_err(|_| invalid(format!("bad sphere count `{n}`")))?;
                    (name, Some(n))
                }
                None => (rest, None),
            };
            return Ok(ScenarioFile {
                builtin: Some(name.to_string()),
                count,
                ..Default::default()
            });
        }
        let path = Path::new(spec);
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Resolves `builtin`, letting the fields set here take precedence.
    pub fn resolve(&self) -> Result<ScenarioFile, ConfigError> {
        let Some(name) = &self.builtin else {
            return Ok(self.clone());
        };
        let mut base = builtins::file(name, self.count)?;
        let o = self.clone();
        macro_rules! take {
            ($($f:ident),*) => { $( if o.$f.is_some() { base.$f = o.$f; } )* };
        }
        take!(
            label,
            dimension,
            particles,
            force,
            q0,
            u0,
            masses,
            horizon,
            h,
            h_list,
            restitution,
            solver,
            quadrature,
            screening,
            output
        );
        if !o.walls.is_empty() {
            base.walls = o.walls;
        }
        if !o.rotating_walls.is_empty() {
            base.rotating_walls = o.rotating_walls;
        }
        base.builtin = None;
        base.count = None;
        Ok(base)
    }

    pub fn build(&self) -> Result<Loaded, ConfigError> {
        let f = self.resolve()?;
        let horizon = f.horizon.ok_or_else(|| invalid("missing `horizon`"))?;

        let mut parts: Vec<Box<dyn ConstraintSystem>> = Vec::new();
        let mut spheres = None;
        let (dim, q0, u0, metric, default_force): (usize, Vec<f64>, Vec<f64>, MassMetric, _) =
            if let Some(p) = &f.particles {
                if f.q0.is_some() || f.u0.is_some() || f.masses.is_some() {
                    return Err(invalid(
                        "with `particles`, give positions, velocities and masses inside the block",
                    ));
                }
                let n = p.positions.len();
                if p.radii.len() != n {
                    return Err(invalid(format!(
                        "{n} positions but {} radii",
                        p.radii.len()
                    )));
                }
                let radii = p
                    .radii
                    .iter()
                    .map(|r| match *r {
                        RadiusSpec::Constant(v) => Radius::Constant(v),
                        RadiusSpec::Linear { base, rate } => Radius::Linear { base, rate },
                    })
                    .collect();
                let masses = p.masses.clone().unwrap_or_else(|| vec![1.0; n]);
                let sys = SphereSystem::new(radii, masses)?.with_broad_phase(p.broad_phase);
                sys.validate_radii(horizon)?;
                let q0: Vec<f64> = p.positions.iter().flatten().copied().collect();
                let u0: Vec<f64> = match &p.velocities {
                    Some(v) if v.len() != n => {
                        return Err(invalid(format!("{n} positions but {} velocities", v.len())))
                    }
                    Some(v) => v.iter().flatten().copied().collect(),
                    None => vec![0.0; 3 * n],
                };
                let metric = sys.mass_metric();
                let gravity: Option<Box<dyn Force>> = p
                    .gravity
                    .map(|g| Box::new(sys.gravity_force(g)) as Box<dyn Force>);
                if let Some(b) = p.bounds {
                    parts.push(Box::new(sys.box_walls(b.lo, b.hi)?));
                }
                parts.insert(0, Box::new(sys.clone()));
                spheres = Some(sys);
                (3 * n, q0, u0, metric, gravity)
            } else {
                let q0 = f.q0.clone().ok_or_else(|| invalid("missing `q0`"))?;
                let dim = f.dimension.unwrap_or(q0.len());
                let u0 = f.u0.clone().unwrap_or_else(|| vec![0.0; dim]);
                let metric = match &f.masses {
                    Some(m) => MassMetric::new(m.clone())?,
                    None => MassMetric::identity(dim),
                };
                (dim, q0, u0, metric, None)
            };
        if let Some(d) = f.dimension {
            if d != dim {
                return Err(invalid(format!(
                    "`dimension` is {d} but the state has {dim} entries"
                )));
            }
        }

        if !f.walls.is_empty() {
            let walls = f
                .walls
                .iter()
                .map(|w| AffineWall::new(w.normal.clone(), w.offset, w.rate))
                .collect();
            parts.push(Box::new(AffineWalls::new(dim, walls)?));
        }
        for r in &f.rotating_walls {
            if r.axes[0] >= dim || r.axes[1] >= dim || r.axes[0] == r.axes[1] {
                return Err(invalid(format!("bad rotating-wall axes {:?}", r.axes)));
            }
            parts.push(Box::new(RotatingWall {
                dim,
                axes: (r.axes[0], r.axes[1]),
                pivot: r.pivot,
                theta0: r.theta0,
                omega: r.omega,
            }));
        }
        let constraints: Box<dyn ConstraintSystem> = match parts.len() {
            0 => Box::new(AffineWalls::new(dim, Vec::new())?),
            1 => parts.pop().expect("one part"),
            _ => Box::new(Stacked::new(parts)?),
        };

        let force: Box<dyn Force> = match (&f.force, default_force) {
            (None, Some(g)) => g,
            (None, None) => Box::new(ConstantForce(vec![0.0; dim])),
            (Some(spec), _) => force_from_spec(spec, dim, spheres.as_ref())?,
        };

        let mut params = SchemeParams::default();
        if let Some(s) = f.solver {
            let d = SolverParams::default();
            params.solver = SolverParams {
                tolerance: s.tolerance.unwrap_or(d.tolerance),
                max_sweeps: s.max_sweeps.unwrap_or(d.max_sweeps),
                exact_fallback: s.exact_fallback.unwrap_or(d.exact_fallback),
            };
        }
        if let Some(q) = f.quadrature {
            params.quadrature = q;
        }
        params.screen_velocity = f.screening;

        let scenario = Scenario {
            label: f.label.clone().unwrap_or_else(|| "scenario".to_string()),
            constraints,
            force,
            q0,
            u0,
            horizon,
            metric,
            restitution: f.restitution.unwrap_or(0.0),
            params,
        };
        scenario.validate()?;
        Ok(Loaded {
            scenario,
            spheres,
            h: f.h,
            h_list: f.h_list.clone(),
            output: f.output.clone(),
        })
    }
}

fn check_len(v: &[f64], dim: usize, what: &str) -> Result<(), ConfigError> {
    if v.len() != dim {
        return Err(invalid(format!(
            "{what} has {} entries, expected {dim}",
            v.len()
        )));
    }
    Ok(())
}

fn force_from_spec(
    spec: &ForceSpec,
    dim: usize,
    spheres: Option<&SphereSystem>,
) -> Result<Box<dyn Force>, ConfigError> {
    Ok(match spec {
        ForceSpec::Constant(c) => {
            check_len(c, dim, "constant force")?;
            Box::new(ConstantForce(c.clone()))
        }
        ForceSpec::Gravity(g) => match spheres {
            Some(s) => Box::new(s.gravity_force(*g)),
            None => return Err(invalid("`gravity` force needs a `particles` block")),
        },
        ForceSpec::Affine { constant, slope } => {
            check_len(constant, dim, "affine force constant")?;
            check_len(slope, dim, "affine force slope")?;
            Box::new(AffineForce {
                constant: constant.clone(),
                slope: slope.clone(),
            })
        }
        ForceSpec::Builtin(name) => match name.as_str() {
            "zero" => Box::new(ConstantForce(vec![0.0; dim])),
            "sine" => Box::new(FnForce(|t: f64, _: &[f64], out: &mut [f64]| {
                out.fill(t.sin());
            })),
            other => return Err(invalid(format!("unknown builtin force `{other}`"))),
        },
    })
}
