//! Named experiment configurations and their text (TOML) form.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{ControlParams, ControlVariant};
use crate::diagnostics::BoundaryRegion;
use crate::error::{Error, Result};
use crate::field::Kernel;
use crate::init::{InitialCondition, Profile};
use crate::phase_space::{Boundary, DomainSpec};
use crate::pusher::{Order, StageField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    #[default]
    Stochastic,
    Deterministic,
}

impl std::str::FromStr for InitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "stochastic" => Ok(Self::Stochastic),
            "deterministic" => Ok(Self::Deterministic),
            other => Err(Error::Config(format!("unknown init mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputPlan {
    /// Time-series cadence in steps.
    pub diagnostics_every: usize,
    /// Grid snapshots are written at the first step with `t >= time`.
    pub snapshot_times: Vec<f64>,
    pub control_trace: bool,
}

impl Default for OutputPlan {
    fn default() -> Self {
        Self {
            diagnostics_every: 10,
            snapshot_times: vec![5.0, 50.0, 100.0],
            control_trace: true,
        }
    }
}

/// Parameters of the self-convergence studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergencePlan {
    pub horizon: f64,
    pub reference_steps: usize,
    pub test_steps: Vec<usize>,
    pub time_particles: usize,
    pub reference_particles: usize,
    pub particle_ladder: Vec<usize>,
    /// Final time of the particle-count study.
    pub particle_horizon: f64,
    /// Reconstruction intervals along `(x, y, v_x, v_y)`.
    pub reconstruction: [usize; 4],
    /// Half-width of the reconstruction velocity box in standard deviations.
    pub sigmas: f64,
}

impl Default for ConvergencePlan {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            reference_steps: 1024,
            test_steps: vec![16, 32, 64, 128],
            time_particles: 10_000,
            reference_particles: 1_000_000,
            particle_ladder: vec![1_000, 3_000, 10_000, 30_000],
            particle_horizon: 1.0,
            reconstruction: [8, 8, 4, 4],
            sigmas: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub domain: DomainSpec,
    pub initial: InitialCondition,
    #[serde(default)]
    pub init_mode: InitMode,
    pub n_particles: usize,
    pub h: f64,
    pub t_final: f64,
    pub field_grid: [usize; 2],
    #[serde(default)]
    pub kernel: Kernel,
    /// Cells of the stochastic sampling; the field grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampling_cells: Option<[usize; 2]>,
    /// Remove the mean charge when the field problem is singular.
    #[serde(default = "yes")]
    pub neutralize: bool,
    pub control_grid: [usize; 2],
    pub control: ControlParams,
    /// Field of the uncontrolled run, also applied before activation.
    pub constant_b: f64,
    pub boundary_region: BoundaryRegion,
    pub order: Order,
    #[serde(default)]
    pub stage_field: StageField,
    pub seed: u64,
    #[serde(default)]
    pub output: OutputPlan,
    #[serde(default)]
    pub convergence: ConvergencePlan,
}

fn yes() -> bool {
    true
}

pub const DEFAULT_MAX_B: f64 = 20.0;

pub const PRESETS: [&str; 6] = [
    "two-stream",
    "two-stream-desk",
    "kelvin-helmholtz",
    "kelvin-helmholtz-desk",
    "diocotron",
    "diocotron-desk",
];

pub fn preset(name: &str) -> Result<ScenarioConfig> {
    match name {
        "two-stream" => Ok(build_two_stream()),
        "two-stream-desk" => Ok(build_two_stream().desk()),
        "kelvin-helmholtz" => Ok(build_kelvin_helmholtz()),
        "kelvin-helmholtz-desk" => Ok(build_kelvin_helmholtz().desk()),
        "diocotron" => Ok(build_diocotron()),
        "diocotron-desk" => Ok(build_diocotron().desk()),
        other => Err(Error::Config(format!(
            "unknown preset '{other}' (known: {})",
            PRESETS.join(", ")
        ))),
    }
}

pub fn build_two_stream() -> ScenarioConfig {
    let domain = DomainSpec {
        x_range: [0.0, 40.0],
        y_range: [-1.5, 1.5],
        bc_x: Boundary::Periodic,
        bc_y: Boundary::Reflective,
    };
    ScenarioConfig {
        name: "two-stream".into(),
        boundary_region: BoundaryRegion::new(-0.625, 0.625),
        domain,
        initial: InitialCondition::new(Profile::TwoStream {
            c_y: 1.0,
            sigma: 0.3,
            u_y: 5.0,
        }),
        init_mode: InitMode::Stochastic,
        n_particles: 10_000_000,
        h: 0.001,
        t_final: 100.0,
        field_grid: [64, 64],
        kernel: Kernel::Cic,
        sampling_cells: None,
        neutralize: true,
        control_grid: [1, 2],
        control: ControlParams {
            alpha_x: 1.5,
            alpha_v: 1.5,
            beta_x: 0.1,
            beta_v: 0.1,
            gamma: 1e-3,
            max_b: DEFAULT_MAX_B,
            y_target: vec![0.0, 0.0],
            vy_target: vec![1.0, -1.0],
            variant: ControlVariant::Dto,
            activation_time: 0.0,
        },
        constant_b: 1.0,
        order: Order::Second,
        stage_field: StageField::Lagged,
        seed: 1,
        output: OutputPlan::default(),
        convergence: ConvergencePlan::default(),
    }
}

pub fn build_kelvin_helmholtz() -> ScenarioConfig {
    let domain = DomainSpec {
        x_range: [0.0, 40.0],
        y_range: [-5.0, 5.0],
        bc_x: Boundary::Periodic,
        bc_y: Boundary::Dirichlet,
    };
    let vy_target = (0..10).map(|k| if k < 5 { 1.0 } else { -1.0 }).collect();
    ScenarioConfig {
        name: "kelvin-helmholtz".into(),
        boundary_region: BoundaryRegion::new(-4.8, 4.8),
        domain,
        initial: InitialCondition::new(Profile::KelvinHelmholtz {
            k0: 0.15,
            eps0: 0.1,
            eps1: 0.001,
            u_x: 1.0,
        }),
        init_mode: InitMode::Stochastic,
        n_particles: 10_000_000,
        h: 0.1,
        t_final: 100.0,
        field_grid: [64, 64],
        kernel: Kernel::Cic,
        sampling_cells: None,
        neutralize: true,
        control_grid: [1, 10],
        control: ControlParams {
            alpha_x: 1.5,
            alpha_v: 1.5,
            beta_x: 0.1,
            beta_v: 0.1,
            gamma: 1e-4,
            max_b: DEFAULT_MAX_B,
            y_target: vec![0.0; 10],
            vy_target,
            variant: ControlVariant::Dto,
            activation_time: 0.0,
        },
        constant_b: 1.5,
        order: Order::Second,
        stage_field: StageField::Lagged,
        seed: 1,
        output: OutputPlan::default(),
        convergence: ConvergencePlan::default(),
    }
}

pub fn build_diocotron() -> ScenarioConfig {
    let domain = DomainSpec {
        x_range: [-10.0, 10.0],
        y_range: [-10.0, 10.0],
        bc_x: Boundary::Dirichlet,
        bc_y: Boundary::Dirichlet,
    };
    ScenarioConfig {
        name: "diocotron".into(),
        boundary_region: BoundaryRegion::new(-9.0, 9.0),
        domain,
        initial: InitialCondition::new(Profile::Diocotron {
            alpha: 0.2,
            k: 7.0,
            r0: 6.5,
        }),
        init_mode: InitMode::Stochastic,
        n_particles: 1_000_000,
        h: 0.1,
        t_final: 200.0,
        field_grid: [64, 64],
        kernel: Kernel::Cic,
        sampling_cells: None,
        neutralize: true,
        control_grid: [1, 1],
        control: ControlParams {
            alpha_x: 0.0,
            alpha_v: 0.0,
            beta_x: 0.0,
            beta_v: 0.0,
            gamma: 1.0,
            max_b: DEFAULT_MAX_B,
            y_target: vec![0.0],
            vy_target: vec![0.0],
            variant: ControlVariant::Constant,
            activation_time: 0.0,
        },
        constant_b: 10.0,
        order: Order::Second,
        stage_field: StageField::Lagged,
        seed: 1,
        output: OutputPlan {
            snapshot_times: vec![50.0, 100.0, 200.0],
            ..OutputPlan::default()
        },
        convergence: ConvergencePlan::default(),
    }
}

impl ScenarioConfig {
    /// Desk-scale variant: `N = 10^5`, a 32x32 field grid, `T <= 20`.
    pub fn desk(mut self) -> Self {
        self.name.push_str("-desk");
        self.n_particles = 100_000;
        self.field_grid = [32, 32];
        self.t_final = self.t_final.min(20.0);
        self
    }

    /// `ceil(T / h)`, tolerant to the rounding of `T / h`.
    pub fn n_steps(&self) -> usize {
        let r = self.t_final / self.h;
        let k = r.round();
        if (r - k).abs() <= 1e-9 * k.max(1.0) {
            k as usize
        } else {
            r.ceil() as usize
        }
    }

    pub fn sampling_cells(&self) -> [usize; 2] {
        self.sampling_cells.unwrap_or(self.field_grid)
    }

    pub fn validate(&self) -> Result<()> {
        self.domain.validate()?;
        self.initial.validate(&self.domain)?;
        if !(self.h > 0.0) || !self.h.is_finite() {
            return Err(Error::Config(format!("time step must be positive, got {}", self.h)));
        }
        if !(self.t_final >= 0.0) || !self.t_final.is_finite() {
            return Err(Error::Config(format!("final time must be nonnegative, got {}", self.t_final)));
        }
        if self.field_grid.iter().any(|m| *m < 2) {
            return Err(Error::Config("field grid needs at least 2 cells per axis".into()));
        }
        if self.sampling_cells().contains(&0) {
            return Err(Error::Config("sampling grid needs at least one cell per axis".into()));
        }
        if self.control_grid.contains(&0) {
            return Err(Error::Config("control grid needs at least one cell per axis".into()));
        }
        self.control.validate(self.control_grid[0] * self.control_grid[1])?;
        if !self.constant_b.is_finite() {
            return Err(Error::Config("constant field must be finite".into()));
        }
        self.boundary_region.validate(&self.domain)?;
        if self.output.diagnostics_every == 0 {
            return Err(Error::Config("diagnostics cadence must be at least one step".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let c: Self = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}
