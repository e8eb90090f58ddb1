//! Phase-space data types shared by every other module: the particle
//! ensemble, the rectangular domain with its boundary policies, the coarse
//! control partition and stochastic rounding.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary policy of one axis.
///
/// `Dirichlet` refers to the field solve (`phi = 0` on the wall). Particles
/// hitting a Dirichlet wall are reflected, exactly as at a `Reflective` wall,
/// so that the ensemble mass is conserved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Periodic,
    Reflective,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub bc_x: Boundary,
    pub bc_y: Boundary,
}

impl DomainSpec {
    pub fn new(x_range: [f64; 2], y_range: [f64; 2], bc_x: Boundary, bc_y: Boundary) -> Result<Self> {
        let d = Self {
            x_range,
            y_range,
            bc_x,
            bc_y,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] < r[1];
        if !ok(self.x_range) || !ok(self.y_range) {
            return Err(Error::Config(format!(
                "degenerate domain {:?} x {:?}",
                self.x_range, self.y_range
            )));
        }
        if self.bc_x == Boundary::Reflective {
            return Err(Error::Config("x axis supports periodic or dirichlet boundaries".into()));
        }
        if self.bc_y == Boundary::Periodic {
            return Err(Error::Config("y axis supports reflective or dirichlet boundaries".into()));
        }
        Ok(())
    }

    pub fn lx(&self) -> f64 {
        self.x_range[1] - self.x_range[0]
    }

    pub fn ly(&self) -> f64 {
        self.y_range[1] - self.y_range[0]
    }

    pub fn area(&self) -> f64 {
        self.lx() * self.ly()
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x_range[0] && p[0] <= self.x_range[1] && p[1] >= self.y_range[0] && p[1] <= self.y_range[1]
    }

    /// Maps a position (and optionally its velocity) back into the box.
    pub fn map_point(&self, p: &mut [f64; 2], v: Option<&mut [f64; 2]>) -> std::result::Result<(), (usize, f64)> {
        let mut v = v;
        for axis in 0..2 {
            let (range, bc) = if axis == 0 {
                (self.x_range, self.bc_x)
            } else {
                (self.y_range, self.bc_y)
            };
            let vel = v.as_deref_mut().map(|v| &mut v[axis]);
            if !map_axis(&mut p[axis], vel, range, bc) {
                return Err((axis, p[axis]));
            }
        }
        Ok(())
    }
}

/// Returns false when the coordinate is more than one box length outside.
fn map_axis(x: &mut f64, v: Option<&mut f64>, [lo, hi]: [f64; 2], bc: Boundary) -> bool {
    if *x >= lo && *x <= hi {
        if bc == Boundary::Periodic && *x == hi {
            *x = lo;
        }
        return true;
    }
    let len = hi - lo;
    match bc {
        Boundary::Periodic => {
            if *x < lo - len || *x > hi + len || !x.is_finite() {
                return false;
            }
            let mut w = if *x < lo { *x + len } else { *x - len };
            if w >= hi {
                w = lo;
            }
            if w < lo {
                w = lo;
            }
            *x = w;
            true
        }
        Boundary::Reflective | Boundary::Dirichlet => {
            let r = if *x < lo { 2.0 * lo - *x } else { 2.0 * hi - *x };
            if !(lo..=hi).contains(&r) {
                return false;
            }
            *x = r;
            if let Some(v) = v {
                *v = -*v;
            }
            true
        }
    }
}

/// Statistical weights of the macro-particles.
#[derive(Debug, Clone, PartialEq)]
pub enum Weights {
    /// Shared weight `rho_tot / N` (stochastic initialization).
    Uniform(f64),
    /// Per-particle weights (deterministic quiet start).
    PerParticle(Vec<f64>),
}

impl Weights {
    #[inline]
    pub fn at(&self, i: usize) -> f64 {
        match self {
            Self::Uniform(w) => *w,
            Self::PerParticle(w) => w[i],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub x: Vec<[f64; 2]>,
    pub v: Vec<[f64; 2]>,
    pub weights: Weights,
}

impl ParticleEnsemble {
    pub fn new(x: Vec<[f64; 2]>, v: Vec<[f64; 2]>, weights: Weights) -> Result<Self> {
        if x.len() != v.len() {
            return Err(Error::Mismatch(format!("{} positions vs {} velocities", x.len(), v.len())));
        }
        if let Weights::PerParticle(w) = &weights {
            if w.len() != x.len() {
                return Err(Error::Mismatch(format!("{} weights for {} particles", w.len(), x.len())));
            }
        }
        Ok(Self { x, v, weights })
    }

    /// Equal-weight ensemble carrying `total_mass` in total.
    pub fn with_total_mass(x: Vec<[f64; 2]>, v: Vec<[f64; 2]>, total_mass: f64) -> Result<Self> {
        let w = if x.is_empty() { 0.0 } else { total_mass / x.len() as f64 };
        Self::new(x, v, Weights::Uniform(w))
    }

    pub fn empty() -> Self {
        Self {
            x: Vec::new(),
            v: Vec::new(),
            weights: Weights::Uniform(0.0),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights.at(i)
    }

    pub fn total_mass(&self) -> f64 {
        match &self.weights {
            Weights::Uniform(w) => *w * self.len() as f64,
            Weights::PerParticle(w) => w.iter().sum(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.v.iter()).all(|p| p[0].is_finite() && p[1].is_finite())
    }
}

/// Wraps or reflects every particle back into the domain.
pub fn apply_boundaries(ensemble: &mut ParticleEnsemble, domain: &DomainSpec) -> Result<()> {
    for (i, (x, v)) in ensemble.x.iter_mut().zip(ensemble.v.iter_mut()).enumerate() {
        domain.map_point(x, Some(v)).map_err(|(axis, coord)| {
            let r = if axis == 0 { domain.x_range } else { domain.y_range };
            Error::StepSize {
                index: i,
                coord,
                lo: r[0],
                hi: r[1],
            }
        })?;
    }
    Ok(())
}

/// Index of the half-open interval `[lo + i*d, lo + (i+1)*d)` holding `x`,
/// with the last interval closed. Assumes `x` in `[lo, hi]`.
#[inline]
pub(crate) fn interval_index(x: f64, lo: f64, hi: f64, n: usize) -> usize {
    let s = (x - lo) / (hi - lo) * n as f64;
    if !(s > 0.0) {
        0
    } else {
        (s as usize).min(n - 1)
    }
}

/// Coarse partition of the domain into `kx * ky` control cells, each
/// carrying one value of the external magnetic field.
///
/// Cells are numbered row by row from the bottom-left corner:
/// `k = ix + kx * iy`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid {
    pub kx: usize,
    pub ky: usize,
    pub b: Vec<f64>,
}

impl ControlGrid {
    pub fn new(kx: usize, ky: usize) -> Result<Self> {
        if kx == 0 || ky == 0 {
            return Err(Error::Config("control grid needs at least one cell per axis".into()));
        }
        Ok(Self {
            kx,
            ky,
            b: vec![0.0; kx * ky],
        })
    }

    pub fn n_cells(&self) -> usize {
        self.kx * self.ky
    }

    #[inline]
    pub(crate) fn cell_unchecked(&self, p: [f64; 2], domain: &DomainSpec) -> usize {
        let ix = interval_index(p[0], domain.x_range[0], domain.x_range[1], self.kx);
        let iy = interval_index(p[1], domain.y_range[0], domain.y_range[1], self.ky);
        ix + self.kx * iy
    }

    /// Writes the field value of the cell holding each position.
    pub fn lookup_into(&self, positions: &[[f64; 2]], domain: &DomainSpec, out: &mut [f64]) {
        let (x0, y0) = (domain.x_range[0], domain.y_range[0]);
        let sx = self.kx as f64 / domain.lx();
        let sy = self.ky as f64 / domain.ly();
        let index = |s: f64, n: usize| if s > 0.0 { (s as usize).min(n - 1) } else { 0 };
        for (o, p) in out.iter_mut().zip(positions) {
            let k = index((p[0] - x0) * sx, self.kx) + self.kx * index((p[1] - y0) * sy, self.ky);
            *o = self.b[k];
        }
    }

    /// Bounds of cell `k` as `([x0, x1], [y0, y1])`.
    pub fn cell_bounds(&self, k: usize, domain: &DomainSpec) -> ([f64; 2], [f64; 2]) {
        let (ix, iy) = (k % self.kx, k / self.kx);
        let dx = domain.lx() / self.kx as f64;
        let dy = domain.ly() / self.ky as f64;
        let x0 = domain.x_range[0] + ix as f64 * dx;
        let y0 = domain.y_range[0] + iy as f64 * dy;
        ([x0, x0 + dx], [y0, y0 + dy])
    }
}

pub fn control_cell_index(p: [f64; 2], grid: &ControlGrid, domain: &DomainSpec) -> Result<usize> {
    if !domain.contains(p) {
        return Err(Error::OutOfDomain { x: p[0], y: p[1] });
    }
    Ok(grid.cell_unchecked(p, domain))
}

/// Unbiased randomized rounding: `floor(z) + 1` with probability `frac(z)`.
pub fn stochastic_round<R: Rng + ?Sized>(z: f64, rng: &mut R) -> Result<u64> {
    if !(z >= 0.0) || !z.is_finite() {
        return Err(Error::NegativeRounding(z));
    }
    let fl = z.floor();
    let frac = z - fl;
    let up = frac > 0.0 && rng.gen::<f64>() < frac;
    Ok(fl as u64 + u64::from(up))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_stream_domain() -> DomainSpec {
        DomainSpec::new([0.0, 40.0], [-1.5, 1.5], Boundary::Periodic, Boundary::Reflective).unwrap()
    }

    fn single(x: [f64; 2], v: [f64; 2]) -> ParticleEnsemble {
        ParticleEnsemble::with_total_mass(vec![x], vec![v], 1.0).unwrap()
    }

    #[test]
    fn periodic_wrap() {
        let d = two_stream_domain();
        let mut e = single([41.0, 0.0], [3.0, 1.0]);
        apply_boundaries(&mut e, &d).unwrap();
        assert!((e.x[0][0] - 1.0).abs() < 1e-14);
        assert_eq!(e.v[0], [3.0, 1.0]);

        let mut e = single([-0.5, 0.0], [3.0, 1.0]);
        apply_boundaries(&mut e, &d).unwrap();
        assert!((e.x[0][0] - 39.5).abs() < 1e-14);
    }

    #[test]
    fn reflective_mirror() {
        let d = two_stream_domain();
        let mut e = single([10.0, 1.6], [0.5, 2.0]);
        apply_boundaries(&mut e, &d).unwrap();
        assert!((e.x[0][1] - 1.4).abs() < 1e-14);
        assert_eq!(e.v[0], [0.5, -2.0]);

        let mut e = single([10.0, -1.7], [0.5, -2.0]);
        apply_boundaries(&mut e, &d).unwrap();
        assert!((e.x[0][1] + 1.3).abs() < 1e-14);
        assert_eq!(e.v[0][1], 2.0);
    }

    #[test]
    fn interior_is_identity() {
        let d = two_stream_domain();
        let mut e = single([12.3, -0.4], [1.0, -1.0]);
        let before = e.clone();
        apply_boundaries(&mut e, &d).unwrap();
        assert_eq!(e, before);
    }

    #[test]
    fn far_outside_is_step_error() {
        let d = two_stream_domain();
        let mut e = single([85.0, 0.0], [0.0, 0.0]);
        assert!(matches!(apply_boundaries(&mut e, &d), Err(Error::StepSize { .. })));
        let mut e = single([1.0, 5.0], [0.0, 0.0]);
        assert!(matches!(apply_boundaries(&mut e, &d), Err(Error::StepSize { .. })));
    }

    #[test]
    fn dirichlet_walls_reflect_particles() {
        let d = DomainSpec::new([-10.0, 10.0], [-10.0, 10.0], Boundary::Dirichlet, Boundary::Dirichlet).unwrap();
        let mut e = single([10.5, -10.25], [1.0, -1.0]);
        apply_boundaries(&mut e, &d).unwrap();
        assert_eq!(e.x[0], [9.5, -9.75]);
        assert_eq!(e.v[0], [-1.0, 1.0]);
    }

    #[test]
    fn control_cells_half_open() {
        let d = two_stream_domain();
        let g = ControlGrid::new(1, 2).unwrap();
        assert_eq!(control_cell_index([5.0, -0.2], &g, &d).unwrap(), 0);
        assert_eq!(control_cell_index([5.0, 0.0], &g, &d).unwrap(), 1);
        assert_eq!(control_cell_index([40.0, 1.5], &g, &d).unwrap(), 1);
        assert_eq!(control_cell_index([0.0, -1.5], &g, &d).unwrap(), 0);
        for x in [0.0, 13.0, 39.99, 40.0] {
            assert_eq!(control_cell_index([x, -1.0], &g, &d).unwrap() % g.kx, 0);
        }
        assert!(matches!(
            control_cell_index([5.0, 1.6], &g, &d),
            Err(Error::OutOfDomain { .. })
        ));
    }

    #[test]
    fn stochastic_round_integers_and_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            assert_eq!(stochastic_round(3.0, &mut rng).unwrap(), 3);
            assert_eq!(stochastic_round(0.0, &mut rng).unwrap(), 0);
        }
        assert!(stochastic_round(-0.1, &mut rng).is_err());
        assert!(stochastic_round(f64::NAN, &mut rng).is_err());
    }

    #[test]
    fn stochastic_round_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 100_000;
        let mut sum = 0u64;
        for _ in 0..n {
            let r = stochastic_round(2.25, &mut rng).unwrap();
            assert!(r == 2 || r == 3);
            sum += r;
        }
        let mean = sum as f64 / n as f64;
        // binomial 3-sigma: 3 * sqrt(0.25 * 0.75 / 1e5) = 0.0041
        assert!((mean - 2.25).abs() < 0.01, "mean {mean}");
    }
}
