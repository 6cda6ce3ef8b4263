//! Experiment driver: configuration files, time loops, convergence studies,
//! radius measurement, CSV and snapshot output.

mod config;
mod output;
mod presets;
mod study;

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{parse_list, ExperimentConfig, InitialCondition, Model, OutputConfig, SchemeSpec};
pub use output::{emit_csv, emit_snapshot, write_csv, TimeSeriesRow, CSV_HEADER};
pub use presets::{preset, PRESET_NAMES};
pub use study::{
    convergence_study, l2_distance, radius, radius_benchmark, ConvergenceRow, ConvergenceTable,
    RadiusVerdict,
};

use crate::dvd_stepper::{dvd_step, StepError, StepReport};
use crate::grid::{discrete_energy, mass, Field, GridError, UniformGrid};
use crate::relaxed_stepper::{LinearSolver, RelaxedState};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("step {step}: {source}")]
    Step { step: usize, source: StepError },
    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Grid(GridError),
}

impl HarnessError {
    /// Process exit code: 2 config, 3 solver, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Step { .. } => 3,
            HarnessError::Io(_) => 4,
            HarnessError::Grid(GridError::Io(_)) => 4,
            HarnessError::Grid(_) => 2,
        }
    }
}

impl From<GridError> for HarnessError {
    fn from(e: GridError) -> Self {
        match e {
            GridError::Io(io) => HarnessError::Io(io),
            other => HarnessError::Grid(other),
        }
    }
}

/// Evaluates the initial condition at the cell centres. Random data draws
/// one value per cell in storage order from a ChaCha8 stream seeded by `seed`.
pub fn initial_condition(spec: &InitialCondition, grid: &UniformGrid, seed: u64) -> Field {
    match *spec {
        InitialCondition::Sine { amplitude } => Field::from_fn(*grid, |x, _| amplitude * x.sin()),
        InitialCondition::Sine2d { amplitude } => {
            Field::from_fn(*grid, |x, y| amplitude * x.sin() * y.sin())
        }
        InitialCondition::Circle { radius } => {
            let [ox, oy] = grid.origin();
            let [lx, ly] = grid.length();
            let (cx, cy) = (ox + 0.5 * lx, oy + 0.5 * ly);
            let (cx, cy) = if grid.dim() == 1 { (cx, 0.0) } else { (cx, cy) };
            let r2 = radius * radius;
            Field::from_fn(*grid, |x, y| {
                let d2 = (x - cx).powi(2)
                    + if grid.dim() == 2 {
                        (y - cy).powi(2)
                    } else {
                        0.0
                    };
                if d2 < r2 {
                    1.0
                } else {
                    -1.0
                }
            })
        }
        InitialCondition::Random { amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let values = (0..grid.len())
                .map(|_| rng.random_range(-amplitude..=amplitude))
                .collect();
            Field::new(*grid, values).expect("length matches the grid")
        }
        InitialCondition::Constant { value } => Field::constant(*grid, value),
    }
}

enum Integrator {
    Dvd,
    Relaxed {
        state: Box<RelaxedState>,
        solver: LinearSolver,
    },
}

/// A configured scheme advancing one field.
pub struct Simulation<'a> {
    cfg: &'a ExperimentConfig,
    h: f64,
    phi: Field,
    step: usize,
    integrator: Integrator,
}

impl<'a> Simulation<'a> {
    pub fn new(cfg: &'a ExperimentConfig) -> Result<Self, HarnessError> {
        let phi = initial_condition(&cfg.init, &cfg.grid, cfg.seed);
        Self::with_field(cfg, cfg.h, phi)
    }

    /// Starts from `phi` with step `h` instead of the configured ones.
    pub fn with_field(cfg: &'a ExperimentConfig, h: f64, phi: Field) -> Result<Self, HarnessError> {
        let integrator = match &cfg.scheme {
            SchemeSpec::Dvd(_) => Integrator::Dvd,
            SchemeSpec::Relaxed(s) => Integrator::Relaxed {
                state: Box::new(
                    RelaxedState::new(phi.clone(), *s, &cfg.fe)
                        .map_err(|source| HarnessError::Step { step: 0, source })?,
                ),
                solver: LinearSolver::new(cfg.linear, cfg.linear_precond),
            },
        };
        Ok(Self {
            cfg,
            h,
            phi,
            step: 0,
            integrator,
        })
    }

    pub fn field(&self) -> &Field {
        &self.phi
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.h
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Modified energy of the current state; the plain energy for DVD schemes.
    pub fn modified_energy(&self) -> f64 {
        match &self.integrator {
            Integrator::Dvd => discrete_energy(&self.phi, &self.cfg.fe),
            Integrator::Relaxed { state, .. } => state.modified_energy(&self.cfg.fe),
        }
    }

    /// Advances one step and reports it as a time-series row.
    pub fn advance(&mut self) -> Result<(TimeSeriesRow, StepReport), HarnessError> {
        let cfg = self.cfg;
        let wrap = |source| HarnessError::Step {
            step: self.step + 1,
            source,
        };
        let report = match (&mut self.integrator, &cfg.scheme) {
            (Integrator::Dvd, SchemeSpec::Dvd(tab)) => {
                let (next, report) = dvd_step(
                    &self.phi,
                    tab,
                    cfg.kind(),
                    &cfg.fe,
                    self.h * cfg.mobility,
                    &cfg.dvd,
                )
                .map_err(wrap)?;
                self.phi = next;
                report
            }
            (Integrator::Relaxed { state, solver }, _) => {
                let report = state
                    .step(&cfg.fe, cfg.kind(), self.h * cfg.mobility, solver)
                    .map_err(wrap)?;
                self.phi = state.phi_curr.clone();
                report
            }
            (Integrator::Dvd, SchemeSpec::Relaxed(_)) => {
                unreachable!("integrator follows the scheme")
            }
        };
        self.step += 1;
        let radius = match cfg.radius_scale {
            Some(scale) => Some(scale * radius(&self.phi)?),
            None => None,
        };
        let row = TimeSeriesRow {
            step: self.step,
            time: self.time(),
            energy: report.energy_after,
            modified_energy: report.modified_energy_after,
            mass: mass(&self.phi),
            newton_iters: report.newton_iters,
            gmres_iters: report.gmres_iters,
            radius,
        };
        Ok((row, report))
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub initial: Field,
    pub rows: Vec<TimeSeriesRow>,
    pub final_field: Field,
    /// Files written, CSV first.
    pub files: Vec<PathBuf>,
}

/// Advances the configured scheme to `t_end`. With `output.dir` set, the
/// CSV is written after the run (also after a failed step, holding the
/// completed rows) and snapshots as their steps complete.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput, HarnessError> {
    let steps = cfg.steps()?;
    let snap_steps: Vec<usize> = cfg
        .output
        .snapshot_times
        .iter()
        .map(|t| (t / cfg.h).round() as usize)
        .collect();
    let dir = cfg.output.dir.as_deref();
    if let Some(d) = dir {
        fs::create_dir_all(d)?;
    }
    let mut sim = Simulation::new(cfg)?;
    let initial = sim.field().clone();
    let mut files = Vec::new();
    let snapshot_due = |step: usize| {
        (cfg.output.snapshot_every > 0 && step % cfg.output.snapshot_every == 0)
            || snap_steps.contains(&step)
    };
    if let Some(d) = dir {
        if snapshot_due(0) {
            files.push(write_snapshot_file(d, &initial, 0, 0.0)?);
        }
    }
    let mut rows = Vec::with_capacity(steps);
    let mut failure = None;
    for _ in 0..steps {
        match sim.advance() {
            Ok((row, _)) => rows.push(row),
            Err(e) => {
                failure = Some(e);
                break;
            }
        }
        if let Some(d) = dir {
            if snapshot_due(sim.step_count()) {
                files.push(write_snapshot_file(
                    d,
                    sim.field(),
                    sim.step_count(),
                    sim.time(),
                )?);
            }
        }
    }
    if let Some(d) = dir {
        let path = d.join(&cfg.output.csv);
        emit_csv(&rows, &path)?;
        files.insert(0, path);
    }
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RunOutput {
        initial,
        rows,
        final_field: sim.field().clone(),
        files,
    })
}

fn write_snapshot_file(
    dir: &Path,
    f: &Field,
    step: usize,
    time: f64,
) -> Result<PathBuf, HarnessError> {
    let path = dir.join(format!("snapshot_{step:06}.txt"));
    emit_snapshot(f, time, &path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::BoundaryCondition;
    use std::f64::consts::PI;

    fn scratch(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("dvdflow-harness-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn sine2d_matches_formula_exactly() {
        let grid =
            UniformGrid::new_2d(16, 16, 2.0 * PI, 2.0 * PI, BoundaryCondition::Periodic).unwrap();
        let f = initial_condition(&InitialCondition::Sine2d { amplitude: 0.05 }, &grid, 0);
        for (i, &v) in f.values().iter().enumerate() {
            let [x, y] = grid.center(i);
            assert_eq!(v, 0.05 * x.sin() * y.sin());
        }
    }

    #[test]
    fn circle_is_plus_one_inside() {
        let grid = UniformGrid::new_2d(64, 64, 2.0, 2.0, BoundaryCondition::NeumannHomogeneous)
            .unwrap()
            .with_origin([-1.0, -1.0]);
        let r0 = 0.5;
        let f = initial_condition(&InitialCondition::Circle { radius: r0 }, &grid, 0);
        for (i, &v) in f.values().iter().enumerate() {
            let [x, y] = grid.center(i);
            let want = if x * x + y * y < r0 * r0 { 1.0 } else { -1.0 };
            assert_eq!(v, want, "cell ({x}, {y})");
        }
    }

    #[test]
    fn random_data_is_seeded_and_bounded() {
        let grid = UniformGrid::new_1d(500, 2.0 * PI, BoundaryCondition::Periodic).unwrap();
        let spec = InitialCondition::Random { amplitude: 0.02 };
        let a = initial_condition(&spec, &grid, 7);
        let b = initial_condition(&spec, &grid, 7);
        let c = initial_condition(&spec, &grid, 8);
        assert_eq!(a.values(), b.values());
        assert_ne!(a.values(), c.values());
        assert!(a.values().iter().all(|v| (-0.02..=0.02).contains(v)));
    }

    #[test]
    fn example2_sch1_energy_is_monotone() {
        let cfg = ExperimentConfig::parse(preset("example2").unwrap()).unwrap();
        assert_eq!(cfg.scheme.name(), "Sch-1");
        assert_eq!(cfg.h, 5e-4);
        let out = run(&cfg).unwrap();
        assert_eq!(out.rows.len(), 20);
        let mut prev = discrete_energy(&out.initial, &cfg.fe);
        for r in &out.rows {
            assert!(
                r.energy <= prev + 1e-12 * prev.abs(),
                "step {}: {} > {prev}",
                r.step,
                r.energy
            );
            prev = r.energy;
        }
        assert!(out.rows.windows(2).all(|w| w[1].time > w[0].time));
    }

    #[test]
    fn example1_scaled_conserves_mass() {
        let src = preset("example1")
            .unwrap()
            .replace("time.t_end = 0.01", "time.t_end = 0.002");
        let cfg = ExperimentConfig::parse(&src).unwrap();
        assert_eq!(cfg.grid.n(), [128, 128]);
        let out = run(&cfg).unwrap();
        let m0 = mass(&out.initial);
        for r in &out.rows {
            assert!(
                (r.mass - m0).abs() < 1e-10,
                "step {}: drift {}",
                r.step,
                r.mass - m0
            );
        }
    }

    #[test]
    fn runs_are_deterministic_and_write_files() {
        let dir = scratch("det");
        let src = format!(
            "{}\noutput.snapshot_every = 5\n",
            preset("example4")
                .unwrap()
                .replace("time.t_end = 1", "time.t_end = 0.1")
        );
        let mut bytes = Vec::new();
        for k in 0..2 {
            let mut cfg = ExperimentConfig::parse(&src).unwrap();
            cfg.output.dir = Some(dir.join(k.to_string()));
            let out = run(&cfg).unwrap();
            assert_eq!(out.rows.len(), 10);
            // CSV, then snapshots at steps 0, 5 and 10.
            assert_eq!(out.files.len(), 4);
            let csv = fs::read(&out.files[0]).unwrap();
            assert_eq!(String::from_utf8_lossy(&csv).lines().count(), 11);
            bytes.push(csv);
            let snap = crate::grid::read_snapshot(
                std::io::BufReader::new(fs::File::open(&out.files[3]).unwrap()),
                cfg.grid.bc(),
            )
            .unwrap();
            assert_eq!(snap.field.values(), out.final_field.values());
        }
        assert_eq!(bytes[0], bytes[1]);
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn solver_failure_maps_to_exit_code_three() {
        let src = "model = CH\nscheme = SAV-CN\nfe.c0 = -1e9\ngrid.n = 16\ntime.h = 1e-3\ntime.t_end = 1e-3\ninit.kind = sine\ninit.amplitude = 0.2\n";
        let cfg = ExperimentConfig::parse(src).unwrap();
        let err = run(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert_eq!(HarnessError::Config(String::new()).exit_code(), 2);
        let io = std::io::Error::new(std::io::ErrorKind::NotFound, "x");
        assert_eq!(HarnessError::from(GridError::Io(io)).exit_code(), 4);
    }
}
