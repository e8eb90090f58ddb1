//! Confinement metrics at the walls and the error norms of the convergence
//! studies.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{DomainSpec, ParticleEnsemble};

/// Wall region `[y_min, lower] U [upper, y_max]` over the full `x` extent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRegion {
    pub lower: f64,
    pub upper: f64,
}

impl BoundaryRegion {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    /// Symmetric strips of width `width` along both `y` walls.
    pub fn strips(domain: &DomainSpec, width: f64) -> Self {
        Self {
            lower: domain.y_range[0] + width,
            upper: domain.y_range[1] - width,
        }
    }

    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        let [y0, y1] = domain.y_range;
        if !(y0 <= self.lower && self.lower < self.upper && self.upper <= y1) {
            return Err(Error::Config(format!(
                "boundary strips [{y0}, {}] and [{}, {y1}] must be disjoint and inside the domain",
                self.lower, self.upper
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn contains(&self, y: f64) -> bool {
        y <= self.lower || y >= self.upper
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryMass {
    pub boundary: f64,
    pub interior: f64,
}

/// Mass in the wall region and its complement. The interior mass is taken
/// as `total - boundary` so that the two add up exactly.
pub fn boundary_mass(ensemble: &ParticleEnsemble, region: &BoundaryRegion) -> BoundaryMass {
    let boundary: f64 = ensemble
        .x
        .iter()
        .enumerate()
        .filter(|(_, x)| region.contains(x[1]))
        .fold(0.0, |acc, (i, _)| acc + ensemble.weight(i));
    BoundaryMass {
        boundary,
        interior: ensemble.total_mass() - boundary,
    }
}

/// Thermal energy `rho_b T_b` of the particles in the wall region: kinetic
/// energy minus the energy of the bulk motion. Evaluated in centered form,
/// so it is never negative. Zero when the region is empty.
pub fn boundary_thermal_energy(ensemble: &ParticleEnsemble, region: &BoundaryRegion) -> f64 {
    let mut mass = 0.0;
    let mut momentum = [0.0; 2];
    for (i, (x, v)) in ensemble.x.iter().zip(&ensemble.v).enumerate() {
        if region.contains(x[1]) {
            let w = ensemble.weight(i);
            mass += w;
            momentum[0] += w * v[0];
            momentum[1] += w * v[1];
        }
    }
    if mass <= 0.0 {
        return 0.0;
    }
    let u = [momentum[0] / mass, momentum[1] / mass];
    let mut energy = 0.0;
    for (i, (x, v)) in ensemble.x.iter().zip(&ensemble.v).enumerate() {
        if region.contains(x[1]) {
            energy += ensemble.weight(i) * ((v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2));
        }
    }
    0.5 * energy
}

/// Sup-norm distance between two ensembles over all particles and all
/// position and velocity components.
pub fn temporal_error(reference: &ParticleEnsemble, ensemble: &ParticleEnsemble) -> Result<f64> {
    if reference.len() != ensemble.len() {
        return Err(Error::Mismatch(format!(
            "reference has {} particles, ensemble has {}",
            reference.len(),
            ensemble.len()
        )));
    }
    let sup = |a: &[[f64; 2]], b: &[[f64; 2]]| {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p[0] - q[0]).abs().max((p[1] - q[1]).abs()))
            .fold(0.0, f64::max)
    };
    Ok(sup(&reference.x, &ensemble.x).max(sup(&reference.v, &ensemble.v)))
}

/// Node lattice in `(x, y, v_x, v_y)` for reconstructing the phase-space
/// density. `dims[a]` is the number of intervals along axis `a`, so there
/// are `dims[a] + 1` nodes per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGrid {
    pub ranges: [[f64; 2]; 4],
    pub dims: [usize; 4],
}

impl PhaseSpaceGrid {
    pub fn new(ranges: [[f64; 2]; 4], dims: [usize; 4]) -> Result<Self> {
        if dims.contains(&0) || ranges.iter().any(|r| !(r[0] < r[1])) {
            return Err(Error::Config("phase-space grid needs nonempty ranges and intervals".into()));
        }
        Ok(Self { ranges, dims })
    }

    /// Spatial axes cover the domain; each velocity axis spans the mean plus
    /// or minus `sigmas` standard deviations of `ensemble`.
    pub fn fitted(
        ensemble: &ParticleEnsemble,
        domain: &DomainSpec,
        spatial: [usize; 2],
        velocity: [usize; 2],
        sigmas: f64,
    ) -> Result<Self> {
        let mut ranges = [domain.x_range, domain.y_range, [0.0; 2], [0.0; 2]];
        let total = ensemble.total_mass();
        for a in 0..2 {
            let (mut m, mut s) = (0.0, 0.0);
            for (i, v) in ensemble.v.iter().enumerate() {
                m += ensemble.weight(i) * v[a];
            }
            m /= total;
            for (i, v) in ensemble.v.iter().enumerate() {
                s += ensemble.weight(i) * (v[a] - m).powi(2);
            }
            let sd = (s / total).sqrt();
            ranges[2 + a] = [m - sigmas * sd, m + sigmas * sd];
        }
        Self::new(ranges, [spatial[0], spatial[1], velocity[0], velocity[1]])
    }

    pub fn n_nodes(&self) -> usize {
        self.dims.iter().map(|d| d + 1).product()
    }

    fn spacing(&self, a: usize) -> f64 {
        (self.ranges[a][1] - self.ranges[a][0]) / self.dims[a] as f64
    }

    pub fn cell_volume(&self) -> f64 {
        (0..4).map(|a| self.spacing(a)).product()
    }

    /// Multilinear (tent) reconstruction of the density at the nodes.
    /// Particles outside the grid do not contribute.
    pub fn reconstruct(&self, ensemble: &ParticleEnsemble) -> Reconstruction {
        let strides = {
            let mut s = [1usize; 4];
            for a in 1..4 {
                s[a] = s[a - 1] * (self.dims[a - 1] + 1);
            }
            s
        };
        let mut values = vec![0.0; self.n_nodes()];
        let h: [f64; 4] = std::array::from_fn(|a| self.spacing(a));
        'particles: for (i, (x, v)) in ensemble.x.iter().zip(&ensemble.v).enumerate() {
            let coords = [x[0], x[1], v[0], v[1]];
            let mut base = [0usize; 4];
            let mut frac = [0.0; 4];
            for a in 0..4 {
                let s = (coords[a] - self.ranges[a][0]) / h[a];
                if !(0.0..=self.dims[a] as f64).contains(&s) {
                    continue 'particles;
                }
                let j = (s.floor() as usize).min(self.dims[a] - 1);
                base[a] = j;
                frac[a] = s - j as f64;
            }
            let w = ensemble.weight(i);
            for corner in 0..16usize {
                let mut idx = 0;
                let mut k = w;
                for a in 0..4 {
                    let up = (corner >> a) & 1;
                    idx += (base[a] + up) * strides[a];
                    k *= if up == 1 { frac[a] } else { 1.0 - frac[a] };
                }
                values[idx] += k;
            }
        }
        let inv = 1.0 / self.cell_volume();
        values.iter_mut().for_each(|f| *f *= inv);
        Reconstruction {
            grid: self.clone(),
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub grid: PhaseSpaceGrid,
    /// Node values, `x` fastest, then `y`, `v_x`, `v_y`.
    pub values: Vec<f64>,
}

/// `max over v of sup over x |f_ref - f|` on a shared grid.
pub fn density_error(reference: &Reconstruction, other: &Reconstruction) -> Result<f64> {
    if reference.grid != other.grid {
        return Err(Error::Mismatch("reconstructions live on different grids".into()));
    }
    Ok(reference
        .values
        .iter()
        .zip(&other.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Least-squares slope of `log(err)` against `log(x)`.
pub fn fitted_slope(x: &[f64], err: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = err.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_space::Boundary;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn domain() -> DomainSpec {
        DomainSpec::new([0.0, 40.0], [-1.5, 1.5], Boundary::Periodic, Boundary::Reflective).unwrap()
    }

    fn region() -> BoundaryRegion {
        BoundaryRegion::new(-0.625, 0.625)
    }

    fn ens(x: Vec<[f64; 2]>, v: Vec<[f64; 2]>, w: f64) -> ParticleEnsemble {
        let n = x.len() as f64;
        ParticleEnsemble::with_total_mass(x, v, w * n).unwrap()
    }

    #[test]
    fn region_validation() {
        assert!(region().validate(&domain()).is_ok());
        assert!(BoundaryRegion::new(0.7, 0.6).validate(&domain()).is_err());
        assert!(BoundaryRegion::new(-2.0, 0.6).validate(&domain()).is_err());
        assert_eq!(BoundaryRegion::strips(&domain(), 0.875), region());
    }

    #[test]
    fn boundary_mass_trivial_cases() {
        let centre = ens(vec![[1.0, 0.0]; 10], vec![[0.0; 2]; 10], 0.3);
        let m = boundary_mass(&centre, &region());
        assert_eq!(m.boundary, 0.0);
        assert!((m.interior - 3.0).abs() < 1e-15);

        let walls = ens(vec![[1.0, 1.0], [2.0, -1.2]], vec![[0.0; 2]; 2], 0.5);
        let m = boundary_mass(&walls, &region());
        assert_eq!(m.boundary, walls.total_mass());
        assert_eq!(m.interior, 0.0);
    }

    #[test]
    fn boundary_mass_uniform_fraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let x: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen_range(0.0..40.0), rng.gen_range(-1.5..1.5)]).collect();
        let e = ens(x, vec![[0.0; 2]; n], 1.0 / n as f64);
        let m = boundary_mass(&e, &region());
        let p = 1.75 / 3.0;
        let tol = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        assert!((m.boundary - p).abs() < tol, "{}", m.boundary);
        assert!((m.boundary + m.interior - e.total_mass()).abs() < 1e-15);
    }

    #[test]
    fn thermal_energy_examples() {
        let one = ens(vec![[3.0, 1.2]], vec![[4.0, -7.0]], 0.25);
        assert_eq!(boundary_thermal_energy(&one, &region()), 0.0);

        let w = 0.4;
        let two = ens(vec![[1.0, 1.0], [2.0, 1.1]], vec![[1.0, 0.0], [-1.0, 0.0]], w);
        assert!((boundary_thermal_energy(&two, &region()) - w).abs() < 1e-15);

        let none = ens(vec![[1.0, 0.0]], vec![[1.0, 0.0]], 1.0);
        assert_eq!(boundary_thermal_energy(&none, &region()), 0.0);
    }

    #[test]
    fn thermal_energy_galilean_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<[f64; 2]> = (0..500).map(|_| [rng.gen_range(0.0..40.0), rng.gen_range(-1.5..1.5)]).collect();
        let v: Vec<[f64; 2]> = (0..500).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect();
        let a = ens(x.clone(), v.clone(), 0.01);
        let shifted = ens(x, v.iter().map(|v| [v[0] + 5.0, v[1] - 2.5]).collect(), 0.01);
        let (ea, eb) = (boundary_thermal_energy(&a, &region()), boundary_thermal_energy(&shifted, &region()));
        assert!(((ea - eb) / ea).abs() < 1e-12);
    }

    #[test]
    fn temporal_error_examples() {
        let a = ens(vec![[1.0, 0.5], [2.0, 0.1]], vec![[0.3, 0.2], [0.0, -1.0]], 1.0);
        assert_eq!(temporal_error(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.v[1][0] += 1e-3;
        assert_eq!(temporal_error(&a, &b).unwrap(), (0.0f64 + 1e-3).abs());
        let c = ens(vec![[1.0, 0.5]], vec![[0.0; 2]], 1.0);
        assert!(matches!(temporal_error(&a, &c), Err(Error::Mismatch(_))));
    }

    #[test]
    fn reconstruction_conserves_mass() {
        let d = domain();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<[f64; 2]> = (0..2000).map(|_| [rng.gen_range(0.0..40.0), rng.gen_range(-1.5..1.5)]).collect();
        let v: Vec<[f64; 2]> = (0..2000).map(|_| [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let e = ens(x, v, 1e-3);
        let g = PhaseSpaceGrid::new([d.x_range, d.y_range, [-1.0, 1.0], [-1.0, 1.0]], [8, 4, 4, 4]).unwrap();
        let r = g.reconstruct(&e);
        // tent weights sum to one per particle
        let sum: f64 = r.values.iter().sum::<f64>() * g.cell_volume();
        assert!((sum - e.total_mass()).abs() < 1e-12);
        assert_eq!(density_error(&r, &r).unwrap(), 0.0);
        let other = PhaseSpaceGrid::new(g.ranges, [8, 4, 4, 2]).unwrap().reconstruct(&e);
        assert!(density_error(&r, &other).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let x = [1e3, 3e3, 1e4, 3e4];
        let y: Vec<f64> = x.iter().map(|n: &f64| 2.0 * n.powf(-0.5)).collect();
        assert!((fitted_slope(&x, &y) + 0.5).abs() < 1e-12);
    }
}
