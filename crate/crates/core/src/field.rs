//! Charge deposition, Poisson solve and field interpolation on the uniform
//! node mesh.
//!
//! Node layout: along a periodic axis there are `m` nodes (node `m` is node
//! `0`); along a wall-bounded axis there are `m + 1` nodes including both
//! walls. Arrays are stored row-major with `x` fastest: `idx = j * nx + i`.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{Boundary, DomainSpec, ParticleEnsemble, Weights};

/// Particle/mesh coupling kernel. Deposition and interpolation always use
/// the same one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Bilinear cloud-in-cell.
    #[default]
    Cic,
    /// Nearest grid point.
    Ngp,
}

/// Number of particles per private accumulation grid. Fixed, so the
/// reduction order does not depend on the worker count.
const DEPOSIT_CHUNK: usize = 1 << 14;

#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub domain: DomainSpec,
    pub mx: usize,
    pub my: usize,
    pub dx: f64,
    pub dy: f64,
    pub nx: usize,
    pub ny: usize,
    pub kernel: Kernel,
    pub rho: Vec<f64>,
    pub phi: Vec<f64>,
    pub ex: Vec<f64>,
    pub ey: Vec<f64>,
    inv_dx: f64,
    inv_dy: f64,
}

impl FieldGrid {
    pub fn new(domain: DomainSpec, mx: usize, my: usize, kernel: Kernel) -> Result<Self> {
        domain.validate()?;
        if mx < 2 || my < 2 {
            return Err(Error::Config(format!("field grid {mx}x{my} too small")));
        }
        let nx = if domain.bc_x == Boundary::Periodic { mx } else { mx + 1 };
        let ny = if domain.bc_y == Boundary::Periodic { my } else { my + 1 };
        let n = nx * ny;
        let (domain_lx, domain_ly) = (domain.lx(), domain.ly());
        Ok(Self {
            dx: domain.lx() / mx as f64,
            dy: domain.ly() / my as f64,
            domain,
            mx,
            my,
            nx,
            ny,
            kernel,
            rho: vec![0.0; n],
            phi: vec![0.0; n],
            ex: vec![0.0; n],
            ey: vec![0.0; n],
            inv_dx: mx as f64 / domain_lx,
            inv_dy: my as f64 / domain_ly,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node_position(&self, i: usize, j: usize) -> [f64; 2] {
        [
            self.domain.x_range[0] + i as f64 * self.dx,
            self.domain.y_range[0] + j as f64 * self.dy,
        ]
    }

    /// Nodes and weights of the kernel stencil around `p`. Unused slots carry
    /// zero weight.
    #[inline]
    pub fn stencil(&self, p: [f64; 2]) -> [(usize, f64); 4] {
        let (ix, fx) = axis_cell(p[0], self.domain.x_range[0], self.inv_dx, self.mx);
        let (iy, fy) = axis_cell(p[1], self.domain.y_range[0], self.inv_dy, self.my);
        let wrap_x = self.domain.bc_x == Boundary::Periodic;
        let ix1 = if wrap_x && ix + 1 == self.mx { 0 } else { ix + 1 };
        let iy1 = iy + 1;
        match self.kernel {
            Kernel::Cic => [
                (self.idx(ix, iy), (1.0 - fx) * (1.0 - fy)),
                (self.idx(ix1, iy), fx * (1.0 - fy)),
                (self.idx(ix, iy1), (1.0 - fx) * fy),
                (self.idx(ix1, iy1), fx * fy),
            ],
            Kernel::Ngp => {
                let i = if fx < 0.5 { ix } else { ix1 };
                let j = if fy < 0.5 { iy } else { iy1 };
                let k = self.idx(i, j);
                [(k, 1.0), (k, 0.0), (k, 0.0), (k, 0.0)]
            }
        }
    }

    fn check_inside(&self, p: [f64; 2]) -> Result<()> {
        if self.domain.contains(p) {
            Ok(())
        } else {
            Err(Error::OutOfDomain { x: p[0], y: p[1] })
        }
    }

    /// Cell-area-normalized charge density of the ensemble, written to `rho`.
    pub fn deposit(&mut self, ensemble: &ParticleEnsemble) -> Result<()> {
        self.deposit_positions(&ensemble.x, &ensemble.weights)
    }

    /// As [`FieldGrid::deposit`], for positions detached from an ensemble.
    pub fn deposit_positions(&mut self, x: &[[f64; 2]], weights: &Weights) -> Result<()> {
        if let Some(p) = x.iter().find(|p| !self.domain.contains(**p)) {
            return Err(Error::OutOfDomain { x: p[0], y: p[1] });
        }
        let inv_area = 1.0 / (self.dx * self.dy);
        let n_nodes = self.n_nodes();
        let this = &*self;
        let partials: Vec<Vec<f64>> = x
            .par_chunks(DEPOSIT_CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut acc = vec![0.0; n_nodes];
                let base = c * DEPOSIT_CHUNK;
                for (off, p) in chunk.iter().enumerate() {
                    let w = weights.at(base + off);
                    for (k, s) in this.stencil(*p) {
                        acc[k] += w * s;
                    }
                }
                acc
            })
            .collect();
        self.rho.iter_mut().for_each(|r| *r = 0.0);
        for part in partials {
            for (r, a) in self.rho.iter_mut().zip(part) {
                *r += a;
            }
        }
        self.rho.iter_mut().for_each(|r| *r *= inv_area);
        Ok(())
    }

    /// `E = -grad(phi)` on the nodes from the current `phi`.
    pub fn compute_electric_field(&mut self) {
        let (ex, ey) = electric_field(&self.phi, self);
        self.ex = ex;
        self.ey = ey;
    }

    pub fn interpolate_e(&self, p: [f64; 2]) -> Result<[f64; 2]> {
        self.check_inside(p)?;
        Ok(self.interpolate_unchecked(p))
    }

    #[inline]
    pub(crate) fn interpolate_unchecked(&self, p: [f64; 2]) -> [f64; 2] {
        let mut e = [0.0; 2];
        for (k, w) in self.stencil(p) {
            e[0] += w * self.ex[k];
            e[1] += w * self.ey[k];
        }
        e
    }

    /// Electric field at every particle position.
    pub fn interpolate_all(&self, positions: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
        if let Some(p) = positions.iter().find(|p| !self.domain.contains(**p)) {
            return Err(Error::OutOfDomain { x: p[0], y: p[1] });
        }
        Ok(positions.par_iter().map(|p| self.interpolate_unchecked(*p)).collect())
    }

    /// As [`FieldGrid::interpolate_all`], writing into `out`.
    pub fn interpolate_into(&self, positions: &[[f64; 2]], out: &mut [[f64; 2]]) -> Result<()> {
        if positions.len() != out.len() {
            return Err(Error::Mismatch(format!("{} positions, {} outputs", positions.len(), out.len())));
        }
        if let Some(p) = positions.iter().find(|p| !self.domain.contains(**p)) {
            return Err(Error::OutOfDomain { x: p[0], y: p[1] });
        }
        out.par_iter_mut()
            .zip(positions.par_iter())
            .for_each(|(e, p)| *e = self.interpolate_unchecked(*p));
        Ok(())
    }

    /// Deposit, solve and differentiate in one go.
    pub fn update(&mut self, ensemble: &ParticleEnsemble, solver: &PoissonSolver, neutralize: bool) -> Result<f64> {
        self.deposit(ensemble)?;
        let problem = PoissonProblem {
            rhs: self.rho.clone(),
            neutralize,
            tolerance: DEFAULT_TOLERANCE,
        };
        let sol = solver.solve(&problem)?;
        self.phi = sol.phi;
        self.compute_electric_field();
        Ok(sol.residual)
    }

    pub fn is_finite(&self) -> bool {
        self.rho
            .iter()
            .chain(&self.phi)
            .chain(&self.ex)
            .chain(&self.ey)
            .all(|v| v.is_finite())
    }
}

#[inline]
fn axis_cell(x: f64, lo: f64, inv_d: f64, m: usize) -> (usize, f64) {
    let s = (x - lo) * inv_d;
    // truncation is floor for s >= 0 and avoids a libm call
    if !(s > 0.0) {
        (0, 0.0)
    } else {
        let i = s as usize;
        if i >= m {
            (m - 1, 1.0)
        } else {
            (i, s - i as f64)
        }
    }
}

pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Right-hand side of `-lap(phi) = rhs` on the nodes of a [`FieldGrid`].
#[derive(Debug, Clone)]
pub struct PoissonProblem {
    pub rhs: Vec<f64>,
    /// Subtract a uniform background when the operator is singular
    /// (periodic x with reflective y walls).
    pub neutralize: bool,
    pub tolerance: f64,
}

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub phi: Vec<f64>,
    /// Max-norm residual relative to the max-norm of the right-hand side.
    pub residual: f64,
}

enum XTransform {
    Fft {
        fwd: std::sync::Arc<dyn rustfft::Fft<f64>>,
        inv: std::sync::Arc<dyn rustfft::Fft<f64>>,
    },
    /// DST-I basis `sin(pi k i / m)`, `k, i = 1..m-1`.
    Sine(Vec<f64>),
}

/// Five-point finite-difference Poisson solver: spectral along `x`
/// (FFT for periodic, sine transform for Dirichlet) and tridiagonal along `y`
/// (Dirichlet, or homogeneous Neumann at reflective walls).
pub struct PoissonSolver {
    mx: usize,
    my: usize,
    nx: usize,
    ny: usize,
    dx: f64,
    dy: f64,
    bc_x: Boundary,
    bc_y: Boundary,
    transform: XTransform,
}

impl std::fmt::Debug for PoissonSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PoissonSolver")
            .field("mx", &self.mx)
            .field("my", &self.my)
            .field("bc_x", &self.bc_x)
            .field("bc_y", &self.bc_y)
            .finish()
    }
}

impl PoissonSolver {
    pub fn new(grid: &FieldGrid) -> Self {
        let mx = grid.mx;
        let transform = match grid.domain.bc_x {
            Boundary::Periodic => {
                let mut planner = FftPlanner::new();
                XTransform::Fft {
                    fwd: planner.plan_fft_forward(mx),
                    inv: planner.plan_fft_inverse(mx),
                }
            }
            _ => {
                let n = mx - 1;
                let mut s = vec![0.0; n * n];
                for k in 1..mx {
                    for i in 1..mx {
                        s[(k - 1) * n + (i - 1)] = (std::f64::consts::PI * (k * i) as f64 / mx as f64).sin();
                    }
                }
                XTransform::Sine(s)
            }
        };
        Self {
            mx,
            my: grid.my,
            nx: grid.nx,
            ny: grid.ny,
            dx: grid.dx,
            dy: grid.dy,
            bc_x: grid.domain.bc_x,
            bc_y: grid.domain.bc_y,
            transform,
        }
    }

    fn neumann_y(&self) -> bool {
        self.bc_y != Boundary::Dirichlet
    }

    fn singular(&self) -> bool {
        self.bc_x == Boundary::Periodic && self.neumann_y()
    }

    /// Unknown y-node range.
    fn y_unknowns(&self) -> std::ops::Range<usize> {
        if self.neumann_y() {
            0..self.ny
        } else {
            1..self.ny - 1
        }
    }

    fn x_unknowns(&self) -> std::ops::Range<usize> {
        if self.bc_x == Boundary::Periodic {
            0..self.nx
        } else {
            1..self.nx - 1
        }
    }

    /// Effective right-hand side: at a reflective wall the node only
    /// receives charge from the inner half cell, so its mirror image is
    /// added back.
    fn effective_rhs(&self, problem: &PoissonProblem) -> Result<Vec<f64>> {
        if problem.rhs.len() != self.nx * self.ny {
            return Err(Error::Mismatch(format!(
                "rhs has {} values, grid has {} nodes",
                problem.rhs.len(),
                self.nx * self.ny
            )));
        }
        if problem.rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step: 0,
                what: "poisson rhs",
            });
        }
        let mut r = problem.rhs.clone();
        if self.neumann_y() {
            let top = (self.ny - 1) * self.nx;
            for i in 0..self.nx {
                r[i] *= 2.0;
                r[top + i] *= 2.0;
            }
        }
        if self.singular() {
            // trapezoid weights in y, uniform in x
            let mut num = 0.0;
            let mut den = 0.0;
            for j in 0..self.ny {
                let w = if j == 0 || j == self.ny - 1 { 0.5 } else { 1.0 };
                for i in 0..self.nx {
                    num += w * r[j * self.nx + i];
                    den += w;
                }
            }
            let mean = num / den;
            let scale = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if problem.neutralize {
                r.iter_mut().for_each(|v| *v -= mean);
            } else if mean.abs() > problem.tolerance * scale.max(f64::MIN_POSITIVE) {
                return Err(Error::Compatibility { mean });
            }
        }
        Ok(r)
    }

    pub fn solve(&self, problem: &PoissonProblem) -> Result<PoissonSolution> {
        let rhs = self.effective_rhs(problem)?;
        let (nx, ny) = (self.nx, self.ny);
        let ys = self.y_unknowns();
        let mut phi = vec![0.0; nx * ny];
        let inv_dx2 = 1.0 / (self.dx * self.dx);

        match &self.transform {
            XTransform::Fft { fwd, inv } => {
                let mx = self.mx;
                // hat[k][j]
                let mut hat = vec![Complex64::new(0.0, 0.0); mx * ny];
                let mut row = vec![Complex64::new(0.0, 0.0); mx];
                for j in 0..ny {
                    for i in 0..mx {
                        row[i] = Complex64::new(rhs[j * nx + i], 0.0);
                    }
                    fwd.process(&mut row);
                    for k in 0..mx {
                        hat[k * ny + j] = row[k];
                    }
                }
                let mut col_re = vec![0.0; ny];
                let mut col_im = vec![0.0; ny];
                for k in 0..mx {
                    let lam = (2.0 - 2.0 * (2.0 * std::f64::consts::PI * k as f64 / mx as f64).cos()) * inv_dx2;
                    let col = &mut hat[k * ny..(k + 1) * ny];
                    for j in 0..ny {
                        col_re[j] = col[j].re;
                        col_im[j] = col[j].im;
                    }
                    if k == 0 && self.singular() {
                        self.solve_singular_column(&mut col_re);
                        self.solve_singular_column(&mut col_im);
                    } else {
                        self.solve_column(lam, &mut col_re);
                        self.solve_column(lam, &mut col_im);
                    }
                    for j in 0..ny {
                        col[j] = Complex64::new(col_re[j], col_im[j]);
                    }
                }
                let norm = 1.0 / mx as f64;
                for j in ys.clone() {
                    for k in 0..mx {
                        row[k] = hat[k * ny + j];
                    }
                    inv.process(&mut row);
                    for i in 0..mx {
                        phi[j * nx + i] = row[i].re * norm;
                    }
                }
            }
            XTransform::Sine(s) => {
                let mx = self.mx;
                let n = mx - 1;
                let mut hat = vec![0.0; n * ny];
                for j in ys.clone() {
                    let r = &rhs[j * nx..(j + 1) * nx];
                    for k in 0..n {
                        let basis = &s[k * n..(k + 1) * n];
                        let acc: f64 = basis.iter().zip(&r[1..mx]).map(|(a, b)| a * b).sum();
                        hat[k * ny + j] = acc * 2.0 / mx as f64;
                    }
                }
                let mut col = vec![0.0; ny];
                for k in 0..n {
                    let lam = (2.0 - 2.0 * (std::f64::consts::PI * (k + 1) as f64 / mx as f64).cos()) * inv_dx2;
                    col.copy_from_slice(&hat[k * ny..(k + 1) * ny]);
                    self.solve_column(lam, &mut col);
                    hat[k * ny..(k + 1) * ny].copy_from_slice(&col);
                }
                for j in ys.clone() {
                    for i in 1..mx {
                        let mut acc = 0.0;
                        for k in 0..n {
                            acc += hat[k * ny + j] * s[k * n + (i - 1)];
                        }
                        phi[j * nx + i] = acc;
                    }
                }
            }
        }

        let residual = self.residual(&phi, &rhs);
        if residual > problem.tolerance {
            return Err(Error::Residual {
                residual,
                tolerance: problem.tolerance,
            });
        }
        Ok(PoissonSolution { phi, residual })
    }

    /// Solves `-(u[j+1] - 2u[j] + u[j-1])/dy^2 + lam u[j] = r[j]` in place
    /// on the y unknowns (Thomas algorithm).
    fn solve_column(&self, lam: f64, col: &mut [f64]) {
        let ys = self.y_unknowns();
        let (lo, hi) = (ys.start, ys.end);
        let n = hi - lo;
        let inv = 1.0 / (self.dy * self.dy);
        let diag = 2.0 * inv + lam;
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let neumann = self.neumann_y();
        for r in 0..n {
            let (a, b, cc) = if neumann && r == 0 {
                (0.0, diag, -2.0 * inv)
            } else if neumann && r == n - 1 {
                (-2.0 * inv, diag, 0.0)
            } else {
                (
                    if r == 0 { 0.0 } else { -inv },
                    diag,
                    if r == n - 1 { 0.0 } else { -inv },
                )
            };
            let rhs = col[lo + r];
            if r == 0 {
                c[r] = cc / b;
                d[r] = rhs / b;
            } else {
                let m = b - a * c[r - 1];
                c[r] = cc / m;
                d[r] = (rhs - a * d[r - 1]) / m;
            }
        }
        for r in (0..n).rev() {
            let v = if r == n - 1 { d[r] } else { d[r] - c[r] * col[lo + r + 1] };
            col[lo + r] = v;
        }
        if !neumann {
            col[0] = 0.0;
            col[self.ny - 1] = 0.0;
        }
    }

    /// Zero-frequency Neumann column: defined up to a constant, fixed by a
    /// zero trapezoid mean. Requires a compatible right-hand side.
    fn solve_singular_column(&self, col: &mut [f64]) {
        let n = self.ny;
        let dy2 = self.dy * self.dy;
        let mut u = vec![0.0; n];
        u[1] = u[0] - 0.5 * col[0] * dy2;
        for j in 1..n - 1 {
            u[j + 1] = 2.0 * u[j] - u[j - 1] - col[j] * dy2;
        }
        let mut mean = 0.0;
        for (j, v) in u.iter().enumerate() {
            let w = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            mean += w * v;
        }
        mean /= (n - 1) as f64;
        for (c, v) in col.iter_mut().zip(u) {
            *c = v - mean;
        }
    }

    /// Max-norm of the five-point residual over the unknown nodes, relative
    /// to the max-norm of the right-hand side.
    pub fn residual(&self, phi: &[f64], rhs: &[f64]) -> f64 {
        let (nx, ny) = (self.nx, self.ny);
        let inv_dx2 = 1.0 / (self.dx * self.dx);
        let inv_dy2 = 1.0 / (self.dy * self.dy);
        let periodic = self.bc_x == Boundary::Periodic;
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 0.0;
        for j in self.y_unknowns() {
            for i in self.x_unknowns() {
                let c = phi[j * nx + i];
                let (il, ir) = if periodic {
                    ((i + nx - 1) % nx, (i + 1) % nx)
                } else {
                    (i - 1, i + 1)
                };
                let jd = if j == 0 { 1 } else { j - 1 };
                let ju = if j == ny - 1 { ny - 2 } else { j + 1 };
                let lap_x = (phi[j * nx + il] - 2.0 * c + phi[j * nx + ir]) * inv_dx2;
                let lap_y = (phi[jd * nx + i] - 2.0 * c + phi[ju * nx + i]) * inv_dy2;
                let r = rhs[j * nx + i];
                worst = worst.max((-(lap_x + lap_y) - r).abs());
                scale = scale.max(r.abs());
            }
        }
        if scale > 0.0 {
            worst / scale
        } else {
            worst
        }
    }
}

/// Convenience wrapper building a throwaway solver.
pub fn solve_poisson(problem: &PoissonProblem, grid: &FieldGrid) -> Result<PoissonSolution> {
    PoissonSolver::new(grid).solve(problem)
}

/// `E = -grad(phi)`: centered differences inside, second-order one-sided
/// differences at Dirichlet walls, zero normal component at reflective walls.
pub fn electric_field(phi: &[f64], grid: &FieldGrid) -> (Vec<f64>, Vec<f64>) {
    let (nx, ny) = (grid.nx, grid.ny);
    let mut ex = vec![0.0; nx * ny];
    let mut ey = vec![0.0; nx * ny];
    let periodic_x = grid.domain.bc_x == Boundary::Periodic;
    let (hx, hy) = (2.0 * grid.dx, 2.0 * grid.dy);
    let at = |i: usize, j: usize| phi[j * nx + i];
    for j in 0..ny {
        for i in 0..nx {
            ex[j * nx + i] = if periodic_x {
                -(at((i + 1) % nx, j) - at((i + nx - 1) % nx, j)) / hx
            } else if i == 0 {
                -(-3.0 * at(0, j) + 4.0 * at(1, j) - at(2, j)) / hx
            } else if i == nx - 1 {
                -(3.0 * at(i, j) - 4.0 * at(i - 1, j) + at(i - 2, j)) / hx
            } else {
                -(at(i + 1, j) - at(i - 1, j)) / hx
            };
            ey[j * nx + i] = match grid.domain.bc_y {
                Boundary::Dirichlet if j == 0 => -(-3.0 * at(i, 0) + 4.0 * at(i, 1) - at(i, 2)) / hy,
                Boundary::Dirichlet if j == ny - 1 => -(3.0 * at(i, j) - 4.0 * at(i, j - 1) + at(i, j - 2)) / hy,
                _ if j == 0 || j == ny - 1 => 0.0,
                _ => -(at(i, j + 1) - at(i, j - 1)) / hy,
            };
        }
    }
    (ex, ey)
}
