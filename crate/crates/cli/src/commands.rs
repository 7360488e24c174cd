//! The subcommands. Each returns the process exit code: 0 on success, 1 for
//! a bad configuration (nothing written), 2 when a run stops early.

use std::fs::{self, File};
use std::io::BufWriter;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use proxstep_core::analysis::{
    convergence_table, diagnose, validate_halving_chain, ConvergenceTable, DiagnosticsOptions,
    DiagnosticsReport,
};
use proxstep_core::constraints::spot_check_assumptions;
use proxstep_core::particles::SphereSystem;
use proxstep_core::scheme::{simulate, Aborted, Scenario, Trajectory};
use serde::Serialize;

use crate::builtins::CATALOG;
use crate::config::{Loaded, ScenarioFile};
use crate::output::{write_convergence, write_trajectory};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_RUN: u8 = 2;

/// Thread cap for convergence studies.
pub const THREADS_VAR: &str = "PROXSTEP_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleSummary {
    /// `max_n |P^n - P^0|` of the total momentum.
    pub momentum_drift: f64,
    /// Largest step-to-step increase of the kinetic energy (0 if none).
    pub max_energy_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub label: String,
    pub h: f64,
    pub scenario_hash: String,
    pub records: usize,
    pub completed: bool,
    pub error: Option<String>,
    pub diagnostics: Option<DiagnosticsReport>,
    pub particles: Option<ParticleSummary>,
}

fn load(spec: &str) -> Result<Loaded, String> {
    ScenarioFile::load(spec)
        .and_then(|f| f.build())
        .map_err(|e| e.to_string())
}

pub fn particle_summary(spheres: &SphereSystem, traj: &Trajectory) -> ParticleSummary {
    let d = spheres.diagnostics(traj);
    let p0 = d.momentum[0];
    let momentum_drift = d
        .momentum
        .iter()
        .map(|p| (0..3).map(|k| (p[k] - p0[k]).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    let max_energy_increase = d
        .kinetic_energy
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(0.0, f64::max);
    ParticleSummary {
        momentum_drift,
        max_energy_increase,
    }
}

/// Simulates and summarizes one run. The trajectory is the full one or the
/// part computed before a failure.
pub fn run_one(
    scenario: &Scenario,
    spheres: Option<&SphereSystem>,
    h: f64,
) -> (Trajectory, RunReport) {
    let (traj, error) = match simulate(scenario, h) {
        Ok(t) => (t, None),
        Err(Aborted {
            partial,
            step,
            error,
        }) => (partial, Some(format!("step {step}: {error}"))),
    };
    let mut report = RunReport {
        label: scenario.label.clone(),
        h,
        scenario_hash: format!("{:016x}", traj.scenario_hash),
        records: traj.records.len(),
        completed: error.is_none(),
        error,
        diagnostics: None,
        particles: None,
    };
    if traj.records.len() >= 2 {
        match diagnose(scenario, &traj, &DiagnosticsOptions::default()) {
            Ok(d) => report.diagnostics = Some(d),
            Err(e) if report.error.is_none() => report.error = Some(format!("diagnostics: {e}")),
            Err(_) => {}
        }
        report.particles = spheres.map(|s| particle_summary(s, &traj));
    }
    (traj, report)
}

fn write_json(path: &Path, value: &impl Serialize) -> std::io::Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value).map_err(std::io::Error::from)
}

fn output_dir(cli: Option<PathBuf>, file: Option<PathBuf>) -> Result<PathBuf, String> {
    cli.or(file)
        .ok_or_else(|| "no output directory (use --out or `output` in the file)".to_string())
}

pub fn run(spec: &str, h: Option<f64>, out: Option<PathBuf>) -> u8 {
    let loaded = match load(spec) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let h = match h.or(loaded.h) {
        Some(h) if h > 0.0 && h.is_finite() => h,
        Some(h) => {
            eprintln!("error: time step must be positive, got {h}");
            return EXIT_CONFIG;
        }
        None => {
            eprintln!("error: no time step (use --h or `h` in the file)");
            return EXIT_CONFIG;
        }
    };
    let dir = match output_dir(out, loaded.output.clone()) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };

    let (traj, report) = run_one(&loaded.scenario, loaded.spheres.as_ref(), h);
    let written = fs::create_dir_all(&dir)
        .map_err(|e| e.to_string())
        .and_then(|_| {
            let f = BufWriter::new(
                File::create(dir.join("trajectory.csv")).map_err(|e| e.to_string())?,
            );
            write_trajectory(f, &traj).map_err(|e| e.to_string())
        })
        .and_then(|_| {
            write_json(&dir.join("diagnostics.json"), &report).map_err(|e| e.to_string())
        });
    if let Err(e) = written {
        eprintln!("error: writing output to {}: {e}", dir.display());
        return EXIT_RUN;
    }
    match &report.error {
        Some(e) if !report.completed => {
            eprintln!(
                "error: run stopped early at {e}; partial output kept in {}",
                dir.display()
            );
            EXIT_RUN
        }
        _ => EXIT_OK,
    }
}

/// Number of worker threads: `PROXSTEP_THREADS` if set and positive, else
/// the available parallelism, and never more than `jobs`.
pub fn thread_count(jobs: usize) -> usize {
    let cap = std::env::var(THREADS_VAR)
        .ok()
        .and_then(|v| v.trim().parse::<NonZeroUsize>().ok())
        .or_else(|| std::thread::available_parallelism().ok())
        .map_or(1, NonZeroUsize::get);
    cap.min(jobs).max(1)
}

/// Runs every step size, in parallel up to [`thread_count`]. Results come
/// back in the order of `h_list`.
pub fn run_many(
    scenario: &Scenario,
    spheres: Option<&SphereSystem>,
    h_list: &[f64],
) -> Vec<(Trajectory, RunReport)> {
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<(Trajectory, RunReport)>>> =
        Mutex::new((0..h_list.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..thread_count(h_list.len()) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(&h) = h_list.get(k) else {
                    break;
                };
                let result = run_one(scenario, spheres, h);
                slots.lock().expect("no panics while holding the lock")[k] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every slot filled"))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub label: String,
    pub table: Option<ConvergenceTable>,
    pub runs: Vec<RunReport>,
}

pub fn converge(spec: &str, h_list: Option<Vec<f64>>, out: Option<PathBuf>) -> u8 {
    let loaded = match load(spec) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let Some(h_list) = h_list.or(loaded.h_list.clone()) else {
        eprintln!("error: no step sizes (use --h-list or `h_list` in the file)");
        return EXIT_CONFIG;
    };
    if let Err(e) = validate_halving_chain(&h_list) {
        eprintln!("error: {e}");
        return EXIT_CONFIG;
    }
    let dir = match output_dir(out, loaded.output.clone()) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };

    let results = run_many(&loaded.scenario, loaded.spheres.as_ref(), &h_list);
    let complete = results.iter().all(|(_, r)| r.completed);
    let table = if complete {
        let runs: Vec<Trajectory> = results.iter().map(|(t, _)| t.clone()).collect();
        match convergence_table(&runs) {
            Ok(t) => Some(t),
            Err(e) => {
                eprintln!("error: {e}");
                None
            }
        }
    } else {
        None
    };
    let report = ConvergenceReport {
        label: loaded.scenario.label.clone(),
        table: table.clone(),
        runs: results.into_iter().map(|(_, r)| r).collect(),
    };

    let written = fs::create_dir_all(&dir)
        .map_err(|e| e.to_string())
        .and_then(|_| {
            if let Some(t) = &table {
                let f = BufWriter::new(
                    File::create(dir.join("convergence.csv")).map_err(|e| e.to_string())?,
                );
                write_convergence(f, t).map_err(|e| e.to_string())?;
            }
            write_json(&dir.join("convergence.json"), &report).map_err(|e| e.to_string())
        });
    if let Err(e) = written {
        eprintln!("error: writing output to {}: {e}", dir.display());
        return EXIT_RUN;
    }
    for r in report.runs.iter().filter(|r| !r.completed) {
        eprintln!(
            "error: run with h = {} stopped early at {}",
            r.h,
            r.error.as_deref().unwrap_or("?")
        );
    }
    match &table {
        Some(t) if t.possible_non_uniqueness => {
            eprintln!("note: differences do not decrease monotonically (possible non-uniqueness)");
            EXIT_OK
        }
        Some(_) => EXIT_OK,
        None => EXIT_RUN,
    }
}

/// Threshold of the almost-active sets sampled by `check`.
pub const CHECK_RHO: f64 = 0.05;
const CHECK_SAMPLES: usize = 200;
const CHECK_TRIALS: usize = 64;

pub fn check(spec: &str) -> u8 {
    let loaded = match load(spec) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let scn = &loaded.scenario;
    // sample the configurations the scheme actually visits
    let h = loaded.h.unwrap_or(1e-2).max(scn.horizon / 2000.0);
    let traj = match simulate(scn, h) {
        Ok(t) => t,
        Err(a) => {
            eprintln!("note: sampling run stopped early: {a}");
            a.partial
        }
    };
    let stride = traj.records.len().div_ceil(CHECK_SAMPLES).max(1);
    let samples: Vec<(f64, Vec<f64>)> = traj
        .records
        .iter()
        .step_by(stride)
        .map(|r| (r.t, r.q.clone()))
        .collect();
    match spot_check_assumptions(&*scn.constraints, &samples, CHECK_TRIALS, CHECK_RHO, 0) {
        Ok(report) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&report).expect("report serializes")
            );
            for f in &report.failures {
                eprintln!("warning: {f}");
            }
        }
        Err(e) => eprintln!("warning: assumption check failed: {e}"),
    }
    EXIT_OK
}

pub fn list_builtins() -> u8 {
    for e in CATALOG {
        println!("{:<16} {}", e.name, e.summary);
        println!("{:<16} oracle: {}", "", e.oracle);
    }
    EXIT_OK
}
