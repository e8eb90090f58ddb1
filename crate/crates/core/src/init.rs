//! Initial phase-space distributions and the two ways of turning them into
//! a particle ensemble: stochastic sampling with equal weights, and a
//! deterministic phase-space lattice with per-particle weights (quiet start).

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{stochastic_round, DomainSpec, ParticleEnsemble, Weights};

/// Spatial profile of a locally Maxwellian initial distribution
/// `f0 = rho0(x) / (2 pi T0(x)) exp(-|v - u(x)|^2 / (2 T0(x)))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Profile {
    /// Two counter-streaming Gaussian sheets. On `y >= 0` the `+` branch
    /// applies: density centered at `-c_y` and mean `v_y = -u_y`; on `y < 0`
    /// the mirror image.
    TwoStream { c_y: f64, sigma: f64, u_y: f64 },
    /// Shear layer with opposite `x` drifts on either side of `y = 0`.
    KelvinHelmholtz { k0: f64, eps0: f64, eps1: f64, u_x: f64 },
    /// Perturbed ring `(1 + alpha cos(k theta)) exp(-4 (r - r0)^2)`,
    /// unit temperature, no drift.
    Diocotron { alpha: f64, k: f64, r0: f64 },
    Uniform { density: f64, temperature: f64, drift: [f64; 2] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialCondition {
    pub profile: Profile,
    /// Multiplies the temperature profile.
    #[serde(default = "one")]
    pub temperature_scale: f64,
    /// Velocity nodes per axis of the deterministic lattice.
    #[serde(default = "default_velocity_nodes")]
    pub velocity_nodes: [usize; 2],
}

/// Gaussian branch of the two-stream density: centered at `-c_y` for the
/// upper branch and at `+c_y` for the lower one.
pub fn two_stream_branch(y: f64, c_y: f64, sigma: f64, upper: bool) -> f64 {
    let shift = if upper { y + c_y } else { y - c_y };
    (-(shift * shift) / (2.0 * sigma * sigma)).exp() / (2.0 * PI * sigma).sqrt()
}

fn one() -> f64 {
    1.0
}

fn default_velocity_nodes() -> [usize; 2] {
    [8, 8]
}

impl InitialCondition {
    pub fn new(profile: Profile) -> Self {
        Self {
            profile,
            temperature_scale: 1.0,
            velocity_nodes: default_velocity_nodes(),
        }
    }

    /// `rho0(x) = integral of f0 over velocity`.
    pub fn density(&self, p: [f64; 2]) -> f64 {
        let [x, y] = p;
        match self.profile {
            Profile::TwoStream { c_y, sigma, .. } => two_stream_branch(y, c_y, sigma, y >= 0.0),
            Profile::KelvinHelmholtz { k0, eps0, eps1, .. } => {
                1.5 / (2.0 * PI) / (y / 0.9).cosh() * (1.0 + eps0 * (3.0 * k0 * x).cos() + eps1 * (k0 * x).sin())
            }
            Profile::Diocotron { alpha, k, r0 } => {
                let r = (x * x + y * y).sqrt();
                let theta = y.atan2(x);
                (1.0 + alpha * (k * theta).cos()) * (-4.0 * (r - r0) * (r - r0)).exp()
            }
            Profile::Uniform { density, .. } => density,
        }
    }

    pub fn temperature(&self, p: [f64; 2]) -> f64 {
        let y = p[1];
        let t = match self.profile {
            Profile::TwoStream { .. } => {
                let s = (2.0 * PI * (y - 0.3) / 1.2).sin();
                let mut t = 1.5;
                if y >= 0.3 {
                    t += 0.1 * s;
                }
                if y < -0.3 {
                    t -= 0.1 * s;
                }
                t
            }
            Profile::KelvinHelmholtz { .. } => {
                if (-1.0..=1.0).contains(&y) {
                    0.15 + 0.1 * (PI * y / 2.0).cos()
                } else {
                    0.15
                }
            }
            Profile::Diocotron { .. } => 1.0,
            Profile::Uniform { temperature, .. } => temperature,
        };
        t * self.temperature_scale
    }

    /// Mean velocity `u(x)`.
    pub fn drift(&self, p: [f64; 2]) -> [f64; 2] {
        let upper = p[1] >= 0.0;
        match self.profile {
            Profile::TwoStream { u_y, .. } => [0.0, if upper { -u_y } else { u_y }],
            Profile::KelvinHelmholtz { u_x, .. } => [if upper { -u_x } else { u_x }, 0.0],
            Profile::Diocotron { .. } => [0.0, 0.0],
            Profile::Uniform { drift, .. } => drift,
        }
    }

    pub fn f0(&self, p: [f64; 2], v: [f64; 2]) -> f64 {
        let t = self.temperature(p);
        let u = self.drift(p);
        let d2 = (v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2);
        self.density(p) / (2.0 * PI * t) * (-d2 / (2.0 * t)).exp()
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        if !(self.temperature_scale > 0.0) {
            return Err(Error::Config("temperature scale must be positive".into()));
        }
        if self.velocity_nodes.contains(&0) {
            return Err(Error::Config("velocity lattice needs at least one node per axis".into()));
        }
        // spot-check positivity on a coarse lattice
        for j in 0..=16 {
            for i in 0..=16 {
                let p = [
                    domain.x_range[0] + domain.lx() * i as f64 / 16.0,
                    domain.y_range[0] + domain.ly() * j as f64 / 16.0,
                ];
                if !(self.density(p) >= 0.0) || !(self.temperature(p) > 0.0) {
                    return Err(Error::Config(format!("invalid density or temperature at {p:?}")));
                }
            }
        }
        Ok(())
    }
}

/// Midpoint-rule approximation of the total mass (integral of `f0` over
/// phase space). The velocity integral of each local Maxwellian is exactly
/// the local density, so only the spatial integral is discretized.
pub fn total_mass(ic: &InitialCondition, domain: &DomainSpec, resolution: [usize; 2]) -> f64 {
    let [rx, ry] = resolution;
    let dx = domain.lx() / rx as f64;
    let dy = domain.ly() / ry as f64;
    let mut sum = 0.0;
    for j in 0..ry {
        let y = domain.y_range[0] + (j as f64 + 0.5) * dy;
        let mut row = 0.0;
        for i in 0..rx {
            let x = domain.x_range[0] + (i as f64 + 0.5) * dx;
            row += ic.density([x, y]);
        }
        sum += row;
    }
    sum * dx * dy
}

/// Resolution used for the total mass when none is specified.
pub const MASS_QUADRATURE: [usize; 2] = [1024, 4096];

/// Two independent standard normals.
#[inline]
fn box_muller<R: Rng>(rng: &mut R) -> [f64; 2] {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let a = 2.0 * PI * u2;
    [r * a.cos(), r * a.sin()]
}

/// Stochastic initialization: the expected count of each sampling cell is
/// proportional to the density at its center, realized by stochastic
/// rounding; positions are uniform inside the cell and velocities are drawn
/// from the local Maxwellian at the sampled position.
///
/// Each cell draws from its own stream of the master seed, so the result
/// does not depend on the number of workers.
pub fn sample_stochastic(
    ic: &InitialCondition,
    domain: &DomainSpec,
    cells: [usize; 2],
    n: usize,
    seed: u64,
) -> Result<ParticleEnsemble> {
    let [mx, my] = cells;
    if mx == 0 || my == 0 {
        return Err(Error::Config("sampling grid needs at least one cell".into()));
    }
    let dx = domain.lx() / mx as f64;
    let dy = domain.ly() / my as f64;
    let centers: Vec<[f64; 2]> = (0..my)
        .flat_map(|j| {
            (0..mx).map(move |i| {
                [
                    domain.x_range[0] + (i as f64 + 0.5) * dx,
                    domain.y_range[0] + (j as f64 + 0.5) * dy,
                ]
            })
        })
        .collect();
    let rho: Vec<f64> = centers.iter().map(|c| ic.density(*c)).collect();
    let discrete_total: f64 = rho.iter().sum();
    if n == 0 || discrete_total <= 0.0 {
        return Ok(ParticleEnsemble::empty());
    }

    let per_cell: Vec<Result<Vec<([f64; 2], [f64; 2])>>> = centers
        .par_iter()
        .zip(rho.par_iter())
        .enumerate()
        .map(|(j, (c, r))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64);
            let count = stochastic_round(n as f64 * r / discrete_total, &mut rng)?;
            let mut out = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let p = [
                    c[0] + (rng.gen::<f64>() - 0.5) * dx,
                    c[1] + (rng.gen::<f64>() - 0.5) * dy,
                ];
                let t = ic.temperature(p).sqrt();
                let u = ic.drift(p);
                let g = box_muller(&mut rng);
                out.push((p, [u[0] + t * g[0], u[1] + t * g[1]]));
            }
            Ok(out)
        })
        .collect();

    let mut x = Vec::with_capacity(n + n / 10);
    let mut v = Vec::with_capacity(n + n / 10);
    for cell in per_cell {
        for (p, q) in cell? {
            x.push(p);
            v.push(q);
        }
    }
    let mass = total_mass(ic, domain, MASS_QUADRATURE);
    ParticleEnsemble::with_total_mass(x, v, mass)
}

/// Phase-space lattice for the deterministic initialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseLattice {
    pub spatial: [usize; 2],
    pub velocity: [usize; 2],
}

impl PhaseLattice {
    pub fn count(&self) -> usize {
        self.spatial[0] * self.spatial[1] * self.velocity[0] * self.velocity[1]
    }

    /// Keeps the velocity lattice fixed and refines space, aspect-matched to
    /// the domain, so that the node count is close to `n_target`.
    pub fn for_target(n_target: usize, velocity: [usize; 2], domain: &DomainSpec) -> Self {
        let n_space = (n_target as f64 / (velocity[0] * velocity[1]) as f64).max(1.0);
        let aspect = domain.lx() / domain.ly();
        let nx = (n_space * aspect).sqrt().round().max(1.0) as usize;
        let ny = (n_space / nx as f64).round().max(1.0) as usize;
        Self {
            spatial: [nx, ny],
            velocity,
        }
    }
}

/// Velocity box `[u_min - 6 sqrt(T_max), u_max + 6 sqrt(T_max)]` per axis.
pub fn velocity_cutoff(ic: &InitialCondition, domain: &DomainSpec) -> [[f64; 2]; 2] {
    let mut t_max: f64 = 0.0;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let probes = 64;
    for j in 0..=probes {
        for i in 0..=probes {
            let p = [
                domain.x_range[0] + domain.lx() * i as f64 / probes as f64,
                domain.y_range[0] + domain.ly() * j as f64 / probes as f64,
            ];
            t_max = t_max.max(ic.temperature(p));
            let u = ic.drift(p);
            for a in 0..2 {
                lo[a] = lo[a].min(u[a]);
                hi[a] = hi[a].max(u[a]);
            }
        }
    }
    let w = 6.0 * t_max.sqrt();
    [[lo[0] - w, hi[0] + w], [lo[1] - w, hi[1] + w]]
}

/// Deterministic quiet start: one particle at the center of each
/// phase-space lattice cell, weighted by `f0(center) * cell volume` and
/// rescaled to the total mass.
pub fn sample_deterministic(
    ic: &InitialCondition,
    domain: &DomainSpec,
    lattice: PhaseLattice,
) -> Result<ParticleEnsemble> {
    let [nx, ny] = lattice.spatial;
    let [nvx, nvy] = lattice.velocity;
    if lattice.count() == 0 {
        return Err(Error::Config("empty phase-space lattice".into()));
    }
    let [bx, by] = velocity_cutoff(ic, domain);
    let dx = domain.lx() / nx as f64;
    let dy = domain.ly() / ny as f64;
    let dvx = (bx[1] - bx[0]) / nvx as f64;
    let dvy = (by[1] - by[0]) / nvy as f64;
    let vol = dx * dy * dvx * dvy;

    let n = lattice.count();
    let mut x = Vec::with_capacity(n);
    let mut v = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for j in 0..ny {
        for i in 0..nx {
            let p = [
                domain.x_range[0] + (i as f64 + 0.5) * dx,
                domain.y_range[0] + (j as f64 + 0.5) * dy,
            ];
            for b in 0..nvy {
                for a in 0..nvx {
                    let q = [bx[0] + (a as f64 + 0.5) * dvx, by[0] + (b as f64 + 0.5) * dvy];
                    x.push(p);
                    v.push(q);
                    w.push(ic.f0(p, q) * vol);
                }
            }
        }
    }
    let raw: f64 = w.iter().sum();
    if raw > 0.0 {
        let scale = total_mass(ic, domain, MASS_QUADRATURE) / raw;
        w.iter_mut().for_each(|w| *w *= scale);
    }
    ParticleEnsemble::new(x, v, Weights::PerParticle(w))
}
