//! Catalog of ready-made scenarios.

use crate::config::{
    BoxSpec, ConfigError, ForceSpec, ParticlesSpec, RadiusSpec, RotatingWallSpec, ScenarioFile,
    WallSpec,
};

pub struct Entry {
    pub name: &'static str,
    pub summary: &'static str,
    /// Known exact behavior, when there is one.
    pub oracle: &'static str,
}

pub const CATALOG: &[Entry] = &[
    Entry {
        name: "bouncing-ball",
        summary: "1D point dropped from q=1 onto the wall q>=0 under f=-1, T=2",
        oracle: "q(t) = max(0, 1 - t^2/2); impact at t = sqrt 2, then rest",
    },
    Entry {
        name: "two-ball",
        summary: "two unit spheres, unit masses, head-on at speeds +1/-1, gap 0.5, T=1",
        oracle: "contact at t = 0.25, then both at rest (common mean velocity 0)",
    },
    Entry {
        name: "resting-sphere",
        summary: "unit sphere resting on the floor z>=0 under gravity 9.81, T=1",
        oracle: "u = 0 and floor multiplier = m g at every step",
    },
    Entry {
        name: "box-n-spheres",
        summary: "N spheres of radius 0.5 in a box, alternating velocities, no gravity, T=2",
        oracle: "none; kinetic energy is non-increasing",
    },
    Entry {
        name: "moving-wall",
        summary: "1D point at q=2 at rest, wall g = q - t sweeping at unit speed, T=3",
        oracle: "q(t) = max(2, t); velocity 1 once pushed",
    },
    Entry {
        name: "rotating-wall",
        summary: "2D point under f=(0,-1) above a line rotating at 0.5 rad/s about the origin, T=2",
        oracle: "none",
    },
];

pub const DEFAULT_SPHERES: usize = 4;

/// The scenario file of a catalog entry. `count` only applies to
/// `box-n-spheres`.
pub fn file(name: &str, count: Option<usize>) -> Result<ScenarioFile, ConfigError> {
    let chain = Some(vec![1e-2, 5e-3, 2.5e-3, 1.25e-3]);
    let mut f = match name {
        "bouncing-ball" => ScenarioFile {
            dimension: Some(1),
            walls: vec![wall(vec![1.0], 0.0, 0.0)],
            force: Some(ForceSpec::Constant(vec![-1.0])),
            q0: Some(vec![1.0]),
            u0: Some(vec![0.0]),
            horizon: Some(2.0),
            h: Some(1e-3),
            ..Default::default()
        },
        "two-ball" => ScenarioFile {
            particles: Some(ParticlesSpec {
                positions: vec![[0.0, 0.0, 0.0], [2.5, 0.0, 0.0]],
                velocities: Some(vec![[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]),
                radii: vec![RadiusSpec::Constant(1.0); 2],
                masses: Some(vec![1.0, 1.0]),
                gravity: None,
                bounds: None,
                broad_phase: false,
            }),
            horizon: Some(1.0),
            h: Some(1e-3),
            ..Default::default()
        },
        "resting-sphere" => ScenarioFile {
            particles: Some(ParticlesSpec {
                positions: vec![[0.0, 0.0, 1.0]],
                velocities: None,
                radii: vec![RadiusSpec::Constant(1.0)],
                masses: Some(vec![1.0]),
                gravity: Some([0.0, 0.0, -9.81]),
                bounds: None,
                broad_phase: false,
            }),
            walls: vec![wall(vec![0.0, 0.0, 1.0], -1.0, 0.0)],
            horizon: Some(1.0),
            h: Some(1e-3),
            ..Default::default()
        },
        "box-n-spheres" => {
            let n = count.unwrap_or(DEFAULT_SPHERES);
            if n == 0 {
                return Err(ConfigError::Invalid(
                    "box-n-spheres needs at least one sphere".into(),
                ));
            }
            let sign = |i: usize| if i.is_multiple_of(2) { 1.0 } else { -1.0 };
            ScenarioFile {
                particles: Some(ParticlesSpec {
                    positions: (0..n).map(|i| [1.0 + 2.0 * i as f64, 0.0, 0.0]).collect(),
                    velocities: Some(
                        (0..n)
                            .map(|i| [sign(i), 0.1 * sign(i), 0.05 * sign(i / 2)])
                            .collect(),
                    ),
                    radii: vec![RadiusSpec::Constant(0.5); n],
                    masses: Some((0..n).map(|i| 1.0 + 0.5 * (i % 3) as f64).collect()),
                    gravity: None,
                    bounds: Some(BoxSpec {
                        lo: [0.0, -1.0, -1.0],
                        hi: [2.0 * n as f64, 1.0, 1.0],
                    }),
                    broad_phase: false,
                }),
                horizon: Some(2.0),
                h: Some(1e-3),
                ..Default::default()
            }
        }
        "moving-wall" => ScenarioFile {
            dimension: Some(1),
            walls: vec![wall(vec![1.0], 0.0, -1.0)],
            force: Some(ForceSpec::Constant(vec![0.0])),
            q0: Some(vec![2.0]),
            u0: Some(vec![0.0]),
            horizon: Some(3.0),
            h: Some(1e-3),
            ..Default::default()
        },
        "rotating-wall" => ScenarioFile {
            dimension: Some(2),
            rotating_walls: vec![RotatingWallSpec {
                axes: [0, 1],
                pivot: [0.0, 0.0],
                theta0: 0.0,
                omega: 0.5,
            }],
            force: Some(ForceSpec::Constant(vec![0.0, -1.0])),
            q0: Some(vec![1.0, 0.5]),
            u0: Some(vec![0.0, 0.0]),
            horizon: Some(2.0),
            h: Some(1e-3),
            ..Default::default()
        },
        other => return Err(ConfigError::UnknownBuiltin(other.to_string())),
    };
    f.label = Some(match (name, count) {
        ("box-n-spheres", Some(n)) => format!("box-{n}-spheres"),
        _ => name.to_string(),
    });
    f.h_list = chain;
    Ok(f)
}

fn wall(normal: Vec<f64>, offset: f64, rate: f64) -> WallSpec {
    WallSpec {
        normal,
        offset,
        rate,
    }
}
