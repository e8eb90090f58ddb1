//! The time loop and the studies built on top of it.
//!
//! Each step runs deposit, Poisson solve, field interpolation, control,
//! push and boundaries in that order; the control therefore sees `E^n`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::control::{
    cell_moments, control_continuous_limit, control_dto, control_otd, evaluate_cost, ControlOutput, ControlVariant,
};
use crate::diagnostics::{
    boundary_mass, boundary_thermal_energy, density_error, fitted_slope, temporal_error, PhaseSpaceGrid,
};
use crate::error::{Error, Result};
use crate::field::{FieldGrid, PoissonSolver};
use crate::init::{sample_deterministic, sample_stochastic, PhaseLattice};
use crate::phase_space::{ControlGrid, ParticleEnsemble};
use crate::pusher::{step_first_order, step_second_order, Order, StageField, StageForces, Workspace};
use crate::scenarios::{InitMode, ScenarioConfig};

/// Diagnostics at one emitted time level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRecord {
    pub step: usize,
    pub t: f64,
    pub boundary_mass: f64,
    pub interior_mass: f64,
    pub total_mass: f64,
    pub thermal_energy: f64,
    /// Control values used to reach this level.
    pub b: Vec<f64>,
    /// One-step cost per cell of the step that reached this level.
    pub cost: Vec<f64>,
}

/// Control values of one step together with their unprojected values.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlRecord {
    pub step: usize,
    pub t: f64,
    pub output: ControlOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub t: f64,
    pub nx: usize,
    pub ny: usize,
    /// `(name, node values)`; `x` fastest.
    pub fields: Vec<(String, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub final_time: f64,
    pub particles: usize,
    pub boundary_mass: f64,
    pub thermal_energy: f64,
    pub wall_clock_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: Vec<DiagnosticRecord>,
    pub control_trace: Vec<ControlRecord>,
    pub snapshots: Vec<Snapshot>,
    pub summary: RunSummary,
    pub ensemble: ParticleEnsemble,
}

/// Initial ensemble of a configuration.
pub fn initial_ensemble(config: &ScenarioConfig) -> Result<ParticleEnsemble> {
    match config.init_mode {
        InitMode::Stochastic => sample_stochastic(
            &config.initial,
            &config.domain,
            config.sampling_cells(),
            config.n_particles,
            config.seed,
        ),
        InitMode::Deterministic => {
            if config.n_particles == 0 {
                return Ok(ParticleEnsemble::empty());
            }
            let lattice = PhaseLattice::for_target(config.n_particles, config.initial.velocity_nodes, &config.domain);
            sample_deterministic(&config.initial, &config.domain, lattice)
        }
    }
}

/// Mutable state of a run: `t^n = n h` is always recomputed from `n`.
#[derive(Debug)]
pub struct Simulation {
    pub config: ScenarioConfig,
    pub ensemble: ParticleEnsemble,
    pub field: FieldGrid,
    pub control: ControlGrid,
    solver: PoissonSolver,
    step: usize,
    total_mass: f64,
    e: Vec<[f64; 2]>,
    b: Vec<f64>,
    workspace: Workspace,
}

impl Simulation {
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let ensemble = initial_ensemble(&config)?;
        Self::with_ensemble(config, ensemble)
    }

    pub fn with_ensemble(config: ScenarioConfig, ensemble: ParticleEnsemble) -> Result<Self> {
        config.validate()?;
        if let Some(p) = ensemble.x.iter().find(|p| !config.domain.contains(**p)) {
            return Err(Error::OutOfDomain { x: p[0], y: p[1] });
        }
        let [mx, my] = config.field_grid;
        let field = FieldGrid::new(config.domain.clone(), mx, my, config.kernel)?;
        let solver = PoissonSolver::new(&field);
        let [kx, ky] = config.control_grid;
        let mut control = ControlGrid::new(kx, ky)?;
        let b0 = match config.control.variant {
            ControlVariant::Off => 0.0,
            _ => config.constant_b,
        };
        control.b.iter_mut().for_each(|b| *b = b0);
        let total_mass = ensemble.total_mass();
        Ok(Self {
            config,
            ensemble,
            field,
            control,
            solver,
            step: 0,
            total_mass,
            e: Vec::new(),
            b: Vec::new(),
            workspace: Workspace::default(),
        })
    }

    pub fn step_index(&self) -> usize {
        self.step
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.config.h
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    fn feedback_active(&self, t: f64) -> bool {
        self.config.control.variant.is_feedback() && t >= self.config.control.activation_time - 1e-9 * self.config.h
    }

    /// Control values for the current state, given `E^n` at the particles.
    fn control_output(&self, e: &[[f64; 2]]) -> ControlOutput {
        let c = &self.config;
        let nc = self.control.n_cells();
        let constant = |v: f64| ControlOutput {
            b: vec![v; nc],
            raw: vec![v; nc],
            clamped: vec![false; nc],
        };
        if !self.feedback_active(self.time()) {
            return match c.control.variant {
                ControlVariant::Off => constant(0.0),
                _ => constant(c.constant_b),
            };
        }
        match c.control.variant {
            ControlVariant::Dto => {
                let m = cell_moments(&self.ensemble, e, &self.control, &c.domain);
                control_dto(&m, &c.control, c.h)
            }
            ControlVariant::Continuous => {
                let m = cell_moments(&self.ensemble, e, &self.control, &c.domain);
                control_continuous_limit(&m, &c.control)
            }
            ControlVariant::Otd => control_otd(&self.ensemble, &c.control, &self.control, &c.domain),
            ControlVariant::Constant | ControlVariant::Off => unreachable!(),
        }
    }

    /// Advances one step and returns the control that was applied. When
    /// `cost` is set, the per-cell one-step cost is returned as well.
    pub fn step(&mut self, cost: bool) -> Result<(ControlOutput, Option<Vec<f64>>)> {
        let n = self.step;
        let h = self.config.h;
        if !self.ensemble.is_finite() {
            return Err(Error::NonFinite { step: n, what: "ensemble" });
        }
        self.field.update(&self.ensemble, &self.solver, self.config.neutralize)?;
        if !self.field.is_finite() {
            return Err(Error::NonFinite { step: n, what: "field" });
        }
        let np = self.ensemble.len();
        let mut e = std::mem::take(&mut self.e);
        let mut b = std::mem::take(&mut self.b);
        e.resize(np, [0.0; 2]);
        b.resize(np, 0.0);
        self.field.interpolate_into(&self.ensemble.x, &mut e)?;
        let output = self.control_output(&e);
        if self.feedback_active(self.time()) {
            let m = self.config.control.max_b;
            assert!(output.b.iter().all(|b| b.abs() <= m), "control left the admissible set");
        }
        self.control.b.clone_from(&output.b);

        let domain = &self.config.domain;
        let grid = &self.control;
        grid.lookup_into(&self.ensemble.x, domain, &mut b);
        let before = cost.then(|| self.ensemble.clone());

        let forces = StageForces { e: &e, b: &b };
        let ws = &mut self.workspace;
        let pushed = match self.config.order {
            Order::First => step_first_order(&mut self.ensemble, forces, h, domain),
            Order::Second => {
                let field = &self.field;
                match self.config.stage_field {
                    StageField::Lagged => step_second_order(&mut self.ensemble, forces, h, domain, ws, |p, e2, b2| {
                        field.interpolate_into(p, e2)?;
                        grid.lookup_into(p, domain, b2);
                        Ok(())
                    }),
                    StageField::Full => {
                        let weights = self.ensemble.weights.clone();
                        let solver = &self.solver;
                        let neutralize = self.config.neutralize;
                        step_second_order(&mut self.ensemble, forces, h, domain, ws, |p, e2, b2| {
                            let mut scratch = field.clone();
                            scratch.deposit_positions(p, &weights)?;
                            let sol = solver.solve(&crate::field::PoissonProblem {
                                rhs: scratch.rho.clone(),
                                neutralize,
                                tolerance: crate::field::DEFAULT_TOLERANCE,
                            })?;
                            scratch.phi = sol.phi;
                            scratch.compute_electric_field();
                            scratch.interpolate_into(p, e2)?;
                            grid.lookup_into(p, domain, b2);
                            Ok(())
                        })
                    }
                }
            }
        };
        self.e = e;
        self.b = b;
        if !self.ensemble.is_finite() {
            return Err(Error::NonFinite { step: n, what: "ensemble" });
        }
        pushed?;
        let cost = match before {
            Some(before) => Some(evaluate_cost(
                &before,
                &self.ensemble,
                &output.b,
                &self.config.control,
                &self.control,
                &self.config.domain,
                h,
            )?),
            None => None,
        };
        self.step += 1;
        Ok((output, cost))
    }

    /// Advances `steps` steps without diagnostics.
    pub fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(false)?;
        }
        Ok(())
    }

    pub fn diagnostics(&self, cost: Vec<f64>) -> DiagnosticRecord {
        let region = &self.config.boundary_region;
        let m = boundary_mass(&self.ensemble, region);
        DiagnosticRecord {
            step: self.step,
            t: self.time(),
            boundary_mass: m.boundary,
            interior_mass: self.total_mass - m.boundary,
            total_mass: self.total_mass,
            thermal_energy: boundary_thermal_energy(&self.ensemble, region),
            b: self.control.b.clone(),
            cost,
        }
    }

    /// Density, potential, field and mean velocity on the nodes.
    pub fn snapshot(&mut self) -> Result<Snapshot> {
        self.field.update(&self.ensemble, &self.solver, self.config.neutralize)?;
        let f = &self.field;
        let n = f.n_nodes();
        let mut mass = vec![0.0; n];
        let mut mom_x = vec![0.0; n];
        let mut mom_y = vec![0.0; n];
        for (i, (x, v)) in self.ensemble.x.iter().zip(&self.ensemble.v).enumerate() {
            let w = self.ensemble.weight(i);
            for (k, s) in f.stencil(*x) {
                mass[k] += w * s;
                mom_x[k] += w * s * v[0];
                mom_y[k] += w * s * v[1];
            }
        }
        let mean = |m: Vec<f64>| -> Vec<f64> {
            m.iter().zip(&mass).map(|(p, q)| if *q > 0.0 { p / q } else { 0.0 }).collect()
        };
        Ok(Snapshot {
            step: self.step,
            t: self.time(),
            nx: f.nx,
            ny: f.ny,
            fields: vec![
                ("rho".into(), f.rho.clone()),
                ("phi".into(), f.phi.clone()),
                ("ex".into(), f.ex.clone()),
                ("ey".into(), f.ey.clone()),
                ("ux".into(), mean(mom_x)),
                ("uy".into(), mean(mom_y)),
            ],
        })
    }
}

/// Runs a configuration to its final time, collecting diagnostics at the
/// configured cadence (and always at the first and last level).
pub fn run(config: &ScenarioConfig) -> Result<RunOutput> {
    let sim = Simulation::new(config.clone())?;
    run_simulation(sim)
}

pub fn run_simulation(mut sim: Simulation) -> Result<RunOutput> {
    let clock = Instant::now();
    let n_steps = sim.config.n_steps();
    let every = sim.config.output.diagnostics_every;
    let nc = sim.control.n_cells();
    let mut pending: Vec<f64> = sim.config.output.snapshot_times.clone();
    pending.sort_by(|a, b| a.total_cmp(b));
    pending.retain(|t| *t <= sim.config.t_final + 1e-9 * sim.config.h);
    let mut pending = pending.into_iter().peekable();

    let mut series = vec![sim.diagnostics(vec![0.0; nc])];
    let mut trace = Vec::new();
    let mut snapshots = Vec::new();
    let take_snapshots = |sim: &mut Simulation, pending: &mut std::iter::Peekable<std::vec::IntoIter<f64>>, out: &mut Vec<Snapshot>| -> Result<()> {
        let mut due = false;
        while pending.peek().is_some_and(|t| sim.time() >= *t - 1e-9 * sim.config.h) {
            pending.next();
            due = true;
        }
        if due {
            out.push(sim.snapshot()?);
        }
        Ok(())
    };
    take_snapshots(&mut sim, &mut pending, &mut snapshots)?;

    for n in 0..n_steps {
        let emit = (n + 1) % every == 0 || n + 1 == n_steps;
        let t = sim.time();
        let (output, cost) = sim.step(emit)?;
        if sim.config.output.control_trace {
            trace.push(ControlRecord { step: n, t, output });
        }
        if let Some(cost) = cost {
            series.push(sim.diagnostics(cost));
        }
        take_snapshots(&mut sim, &mut pending, &mut snapshots)?;
    }
    let last = series.last().expect("series holds the initial record");
    let summary = RunSummary {
        steps: n_steps,
        final_time: sim.time(),
        particles: sim.ensemble.len(),
        boundary_mass: last.boundary_mass,
        thermal_energy: last.thermal_energy,
        wall_clock_seconds: clock.elapsed().as_secs_f64(),
    };
    Ok(RunOutput {
        series,
        control_trace: trace,
        snapshots,
        summary,
        ensemble: sim.ensemble,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    /// Number of steps or number of particles.
    pub size: usize,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `log(error)` against `log(h)` for the time
    /// study and against `log(N)` for the particle study.
    pub slope: f64,
}

/// Self-convergence in time: a reference with `reference_steps` steps over
/// the plan horizon against each of `test_steps`, all from one initial
/// ensemble.
pub fn convergence_study_time(config: &ScenarioConfig, order: Order) -> Result<ConvergenceTable> {
    let plan = &config.convergence;
    let mut base = config.clone();
    base.order = order;
    base.n_particles = plan.time_particles;
    base.t_final = plan.horizon;
    base.h = plan.horizon / plan.reference_steps as f64;
    base.validate()?;
    let initial = initial_ensemble(&base)?;

    let evolve = |steps: usize| -> Result<ParticleEnsemble> {
        let mut c = base.clone();
        c.h = plan.horizon / steps as f64;
        let mut sim = Simulation::with_ensemble(c, initial.clone())?;
        sim.advance(steps)?;
        Ok(sim.ensemble)
    };
    let reference = evolve(plan.reference_steps)?;
    let mut rows = Vec::new();
    for &steps in &plan.test_steps {
        rows.push(ConvergenceRow {
            size: steps,
            error: temporal_error(&reference, &evolve(steps)?)?,
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| plan.horizon / r.size as f64).collect();
    let err: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(ConvergenceTable {
        slope: fitted_slope(&h, &err),
        rows,
    })
}

/// Reconstructed-density error against a large reference run, for each
/// particle count of the plan ladder.
pub fn convergence_study_particles(config: &ScenarioConfig, mode: InitMode) -> Result<ConvergenceTable> {
    let plan = &config.convergence;
    let mut base = config.clone();
    base.init_mode = mode;
    base.t_final = plan.particle_horizon;
    base.validate()?;

    let evolve = |n: usize, seed: u64| -> Result<ParticleEnsemble> {
        let mut c = base.clone();
        c.n_particles = n;
        c.seed = seed;
        let mut sim = Simulation::new(c)?;
        let steps = sim.config.n_steps();
        sim.advance(steps)?;
        Ok(sim.ensemble)
    };
    let reference = evolve(plan.reference_particles, base.seed.wrapping_add(0x9e37_79b9))?;
    let [gx, gy, gvx, gvy] = plan.reconstruction;
    let grid = PhaseSpaceGrid::fitted(&reference, &base.domain, [gx, gy], [gvx, gvy], plan.sigmas)?;
    let f_ref = grid.reconstruct(&reference);
    let mut rows = Vec::new();
    for &n in &plan.particle_ladder {
        let f = grid.reconstruct(&evolve(n, base.seed)?);
        rows.push(ConvergenceRow {
            size: n,
            error: density_error(&f_ref, &f)?,
        });
    }
    let n: Vec<f64> = rows.iter().map(|r| r.size as f64).collect();
    let err: Vec<f64> = rows.iter().map(|r| r.error).collect();
    Ok(ConvergenceTable {
        slope: fitted_slope(&n, &err),
        rows,
    })
}

/// Parameter swept by [`sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Gamma,
    ActivationTime,
    MaxB,
}

impl std::str::FromStr for SweepParameter {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma" => Ok(Self::Gamma),
            "t_act" | "activation_time" => Ok(Self::ActivationTime),
            "m" | "max_b" => Ok(Self::MaxB),
            other => Err(Error::Config(format!("unknown sweep parameter '{other}'"))),
        }
    }
}

impl SweepParameter {
    pub fn apply(self, config: &mut ScenarioConfig, value: f64) {
        match self {
            Self::Gamma => config.control.gamma = value,
            Self::ActivationTime => config.control.activation_time = value,
            Self::MaxB => config.control.max_b = value,
        }
    }

    pub fn default_values(self) -> Vec<f64> {
        match self {
            Self::Gamma => vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            Self::ActivationTime => vec![0.0, 1.0],
            Self::MaxB => vec![0.5, 2.0, 20.0],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub value: f64,
    pub output: RunOutput,
}

/// One run per value, all from the same seed.
pub fn sweep(config: &ScenarioConfig, parameter: SweepParameter, values: &[f64]) -> Result<Vec<SweepRun>> {
    values
        .iter()
        .map(|&value| {
            let mut c = config.clone();
            parameter.apply(&mut c, value);
            Ok(SweepRun { value, output: run(&c)? })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenarios::preset;

    fn tiny(name: &str) -> ScenarioConfig {
        let mut c = preset(name).unwrap();
        c.n_particles = 2000;
        c.field_grid = [16, 16];
        c.t_final = 10.0 * c.h;
        c.output.diagnostics_every = 1;
        c
    }

    #[test]
    fn vacuum_run_is_all_zero() {
        let mut c = tiny("two-stream-desk");
        c.n_particles = 0;
        let out = run(&c).unwrap();
        assert_eq!(out.series.len(), 11);
        for r in &out.series {
            assert_eq!((r.boundary_mass, r.interior_mass, r.thermal_energy), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn time_is_step_times_h() {
        let c = tiny("kelvin-helmholtz-desk");
        let mut sim = Simulation::new(c).unwrap();
        sim.advance(7).unwrap();
        assert_eq!(sim.time(), 7.0 * 0.1);
    }

    #[test]
    fn mass_split_is_exact_and_control_admissible() {
        for name in ["two-stream-desk", "kelvin-helmholtz-desk", "diocotron-desk"] {
            let out = run(&tiny(name)).unwrap();
            let m = out.series[0].total_mass;
            for r in &out.series {
                assert_eq!(r.boundary_mass + r.interior_mass, m);
            }
            for c in &out.control_trace {
                assert!(c.output.b.iter().all(|b| b.abs() <= 20.0));
            }
        }
    }

    #[test]
    fn activation_switches_from_constant() {
        let mut c = tiny("kelvin-helmholtz-desk");
        c.control.activation_time = 0.5;
        let out = run(&c).unwrap();
        for r in &out.control_trace {
            if r.step < 5 {
                assert!(r.output.b.iter().all(|b| *b == 1.5));
            }
        }
        assert!(out.control_trace[5..].iter().any(|r| r.output.b.iter().any(|b| *b != 1.5)));
    }

    #[test]
    fn snapshots_at_requested_times() {
        let mut c = tiny("diocotron-desk");
        c.output.snapshot_times = vec![0.0, 0.35, 0.5, 7.0];
        let out = run(&c).unwrap();
        let steps: Vec<usize> = out.snapshots.iter().map(|s| s.step).collect();
        assert_eq!(steps, vec![0, 4, 5]);
        assert_eq!(out.snapshots[0].fields.len(), 6);
    }

    #[test]
    fn nan_is_reported_with_step() {
        let c = tiny("two-stream-desk");
        let mut sim = Simulation::new(c).unwrap();
        sim.advance(2).unwrap();
        sim.ensemble.v[3][0] = f64::NAN;
        match sim.step(false) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 2),
            other => panic!("{other:?}"),
        }
    }
}
