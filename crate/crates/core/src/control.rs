//! Instantaneous feedback control of the per-cell external magnetic field.
//!
//! Three routes to the control value of a cell are provided:
//!
//! * [`control_dto`]: the discretize-then-optimize feedback, the minimizer of
//!   the one-step discrete cost over the explicit-velocity dynamics, projected
//!   on `[-M, M]`;
//! * [`control_continuous_limit`]: its `h -> 0` limit;
//! * [`control_otd`]: the optimize-then-discretize feedback, obtained from the
//!   one-step splitting of the adjoint equation with zero terminal data and
//!   evaluated as a quadrature over the empirical density of the cell.
//!
//! The tracked observables are `y` (position) and `v_y` (velocity). Moments
//! are plain particle averages over the cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::{ControlGrid, DomainSpec, ParticleEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlVariant {
    #[serde(alias = "dto_discrete")]
    Dto,
    #[serde(alias = "continuous_limit")]
    Continuous,
    #[serde(alias = "otd_splitting")]
    Otd,
    /// Uncontrolled run with a constant field.
    Constant,
    Off,
}

impl std::str::FromStr for ControlVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dto" | "dto_discrete" => Ok(Self::Dto),
            "continuous" | "continuous_limit" => Ok(Self::Continuous),
            "otd" | "otd_splitting" => Ok(Self::Otd),
            "constant" => Ok(Self::Constant),
            "off" => Ok(Self::Off),
            other => Err(Error::Config(format!("unknown controller '{other}'"))),
        }
    }
}

impl ControlVariant {
    pub fn is_feedback(self) -> bool {
        matches!(self, Self::Dto | Self::Continuous | Self::Otd)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub alpha_x: f64,
    pub alpha_v: f64,
    pub beta_x: f64,
    pub beta_v: f64,
    pub gamma: f64,
    /// Clamp bound `M` of the admissible set.
    pub max_b: f64,
    /// Per-cell targets for `y`.
    pub y_target: Vec<f64>,
    /// Per-cell targets for `v_y`.
    pub vy_target: Vec<f64>,
    pub variant: ControlVariant,
    /// Feedback is switched on at `t >= activation_time`.
    pub activation_time: f64,
}

impl ControlParams {
    pub fn validate(&self, n_cells: usize) -> Result<()> {
        let weights = [self.alpha_x, self.alpha_v, self.beta_x, self.beta_v];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("control weights must be nonnegative".into()));
        }
        if !(self.gamma > 0.0) || !(self.max_b > 0.0) {
            return Err(Error::Config("gamma and M must be positive".into()));
        }
        if self.y_target.len() != n_cells || self.vy_target.len() != n_cells {
            return Err(Error::Config(format!(
                "expected {n_cells} per-cell targets, got {} and {}",
                self.y_target.len(),
                self.vy_target.len()
            )));
        }
        if !(self.activation_time >= 0.0) {
            return Err(Error::Config("activation time must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Raw per-cell sums, accumulated in a single pass.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellSums {
    pub n: usize,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ey: f64,
    pub vx_vx: f64,
    pub vx_vy: f64,
    pub vx_ey: f64,
    pub vx_y: f64,
}

impl CellSums {
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn inv_n(&self) -> f64 {
        1.0 / self.n as f64
    }

    /// Means `(y, v_x, v_y, E_y)`; `None` for an empty cell.
    pub fn means(&self) -> Option<[f64; 4]> {
        (!self.is_empty()).then(|| {
            let k = self.inv_n();
            [self.y * k, self.vx * k, self.vy * k, self.ey * k]
        })
    }

    /// `sum_i (v_y + h E_y - mean v_y) v_x`
    pub fn velocity_covariance(&self, h: f64) -> f64 {
        let vy_bar = self.vy * self.inv_n();
        self.vx_vy + h * self.vx_ey - vy_bar * self.vx
    }

    /// `sum_i (y + h (v_y + h E_y) - mean y) v_x`
    pub fn position_covariance(&self, h: f64) -> f64 {
        let y_bar = self.y * self.inv_n();
        self.vx_y + h * self.vx_vy + h * h * self.vx_ey - y_bar * self.vx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMoments {
    pub cells: Vec<CellSums>,
}

/// Per-cell sums over the particles; `e` holds `E` at the particles.
pub fn cell_moments(
    ensemble: &ParticleEnsemble,
    e: &[[f64; 2]],
    grid: &ControlGrid,
    domain: &DomainSpec,
) -> CellMoments {
    let mut cells = vec![CellSums::default(); grid.n_cells()];
    for ((x, v), e) in ensemble.x.iter().zip(&ensemble.v).zip(e) {
        let c = &mut cells[grid.cell_unchecked(*x, domain)];
        let (y, vx, vy, ey) = (x[1], v[0], v[1], e[1]);
        c.n += 1;
        c.y += y;
        c.vx += vx;
        c.vy += vy;
        c.ey += ey;
        c.vx_vx += vx * vx;
        c.vx_vy += vx * vy;
        c.vx_ey += vx * ey;
        c.vx_y += vx * y;
    }
    CellMoments { cells }
}

/// Projected per-cell field together with the unprojected value.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub b: Vec<f64>,
    pub raw: Vec<f64>,
    pub clamped: Vec<bool>,
}

impl ControlOutput {
    fn from_raw(raw: Vec<f64>, m: f64) -> Self {
        let b = raw.iter().map(|r| r.clamp(-m, m)).collect();
        let clamped = raw.iter().map(|r| r.abs() > m).collect();
        Self { b, raw, clamped }
    }
}

/// Discretize-then-optimize feedback. Empty cells get zero.
pub fn control_dto(moments: &CellMoments, params: &ControlParams, h: f64) -> ControlOutput {
    let raw = moments
        .cells
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let Some([y_bar, vx_bar, vy_bar, ey_bar]) = c.means() else {
                return 0.0;
            };
            let inv_n = 1.0 / c.n as f64;
            let r_v = params.alpha_v * (vy_bar + h * ey_bar - params.vy_target[k]) * vx_bar
                + params.beta_v * inv_n * c.velocity_covariance(h);
            let r_x = params.alpha_x * (y_bar + h * (vy_bar + h * ey_bar) - params.y_target[k]) * vx_bar
                + params.beta_x * inv_n * c.position_covariance(h);
            let spread = params.alpha_v * vx_bar * vx_bar + params.beta_v * inv_n * c.vx_vx;
            let q_v = h * spread;
            let q_x = h * h * (params.alpha_x * vx_bar * vx_bar + params.beta_x * inv_n * c.vx_vx);
            (r_v + r_x) / (params.gamma + q_v + q_x)
        })
        .collect();
    ControlOutput::from_raw(raw, params.max_b)
}

/// Continuous-time feedback (`h -> 0` limit of [`control_dto`]).
pub fn control_continuous_limit(moments: &CellMoments, params: &ControlParams) -> ControlOutput {
    let raw = moments
        .cells
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let Some([y_bar, vx_bar, vy_bar, _]) = c.means() else {
                return 0.0;
            };
            let inv_n = 1.0 / c.n as f64;
            let r_v = params.alpha_v * (vy_bar - params.vy_target[k]) * vx_bar
                + params.beta_v * inv_n * c.velocity_covariance(0.0);
            let r_x = params.alpha_x * (y_bar - params.y_target[k]) * vx_bar
                + params.beta_x * inv_n * c.position_covariance(0.0);
            (r_v + r_x) / params.gamma
        })
        .collect();
    ControlOutput::from_raw(raw, params.max_b)
}

/// Optimize-then-discretize feedback:
/// `B_k = P(1/gamma * mean_i v_x,i [dS_v/dv_y (v_y,i) + dS_x/dy (y_i)])`
/// with the adjoint source derivatives
/// `dS_v/dv_y = alpha_v (m[v_y] - target) + beta_v (v_y - m[v_y])` and
/// `dS_x/dy = alpha_x (m[y] - target) + beta_x (y - m[y])`.
pub fn control_otd(
    ensemble: &ParticleEnsemble,
    params: &ControlParams,
    grid: &ControlGrid,
    domain: &DomainSpec,
) -> ControlOutput {
    let nc = grid.n_cells();
    let cell_of: Vec<usize> = ensemble.x.iter().map(|x| grid.cell_unchecked(*x, domain)).collect();

    let mut count = vec![0usize; nc];
    let mut m_y = vec![0.0; nc];
    let mut m_vy = vec![0.0; nc];
    for (i, &k) in cell_of.iter().enumerate() {
        count[k] += 1;
        m_y[k] += ensemble.x[i][1];
        m_vy[k] += ensemble.v[i][1];
    }
    for k in 0..nc {
        if count[k] > 0 {
            m_y[k] /= count[k] as f64;
            m_vy[k] /= count[k] as f64;
        }
    }

    let mut integral = vec![0.0; nc];
    for (i, &k) in cell_of.iter().enumerate() {
        let (y, vx, vy) = (ensemble.x[i][1], ensemble.v[i][0], ensemble.v[i][1]);
        let ds_v = params.alpha_v * (m_vy[k] - params.vy_target[k]) + params.beta_v * (vy - m_vy[k]);
        let ds_x = params.alpha_x * (m_y[k] - params.y_target[k]) + params.beta_x * (y - m_y[k]);
        integral[k] += vx * (ds_v + ds_x);
    }
    let raw = (0..nc)
        .map(|k| {
            if count[k] == 0 {
                0.0
            } else {
                integral[k] / count[k] as f64 / params.gamma
            }
        })
        .collect();
    ControlOutput::from_raw(raw, params.max_b)
}

/// One-step running cost per cell, rectangle rule at `t^{n+1}`.
///
/// Cell membership is taken at `t^n`; `before` and `after` must hold the
/// same particles in the same order.
pub fn evaluate_cost(
    before: &ParticleEnsemble,
    after: &ParticleEnsemble,
    b: &[f64],
    params: &ControlParams,
    grid: &ControlGrid,
    domain: &DomainSpec,
    h: f64,
) -> Result<Vec<f64>> {
    if before.len() != after.len() {
        return Err(Error::Mismatch(format!("{} vs {} particles", before.len(), after.len())));
    }
    let nc = grid.n_cells();
    if b.len() != nc {
        return Err(Error::Mismatch(format!("{} control values for {nc} cells", b.len())));
    }
    let cell_of: Vec<usize> = before.x.iter().map(|x| grid.cell_unchecked(*x, domain)).collect();
    let mut n = vec![0usize; nc];
    let mut y_n = vec![0.0; nc];
    let mut vy_n = vec![0.0; nc];
    let mut y_n1 = vec![0.0; nc];
    let mut vy_n1 = vec![0.0; nc];
    for (i, &k) in cell_of.iter().enumerate() {
        n[k] += 1;
        y_n[k] += before.x[i][1];
        vy_n[k] += before.v[i][1];
        y_n1[k] += after.x[i][1];
        vy_n1[k] += after.v[i][1];
    }
    for k in 0..nc {
        if n[k] > 0 {
            let inv = 1.0 / n[k] as f64;
            y_n[k] *= inv;
            vy_n[k] *= inv;
            y_n1[k] *= inv;
            vy_n1[k] *= inv;
        }
    }
    let mut spread_v = vec![0.0; nc];
    let mut spread_x = vec![0.0; nc];
    for (i, &k) in cell_of.iter().enumerate() {
        spread_v[k] += (after.v[i][1] - vy_n[k]).powi(2);
        spread_x[k] += (after.x[i][1] - y_n[k]).powi(2);
    }
    Ok((0..nc)
        .map(|k| {
            let control = 0.5 * params.gamma * b[k] * b[k];
            if n[k] == 0 {
                return h * control;
            }
            let inv = 1.0 / n[k] as f64;
            let state = 0.5 * params.alpha_v * (vy_n1[k] - params.vy_target[k]).powi(2)
                + 0.5 * params.beta_v * inv * spread_v[k]
                + 0.5 * params.alpha_x * (y_n1[k] - params.y_target[k]).powi(2)
                + 0.5 * params.beta_x * inv * spread_x[k];
            h * (state + control)
        })
        .collect())
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

    fn params(n: usize) -> ControlParams {
        ControlParams {
            alpha_x: 0.0,
            alpha_v: 1.0,
            beta_x: 0.0,
            beta_v: 0.0,
            gamma: 1.0,
            max_b: 20.0,
            y_target: vec![0.0; n],
            vy_target: vec![0.0; n],
            variant: ControlVariant::Dto,
            activation_time: 0.0,
        }
    }

    fn ensemble(x: Vec<[f64; 2]>, v: Vec<[f64; 2]>) -> ParticleEnsemble {
        let n = x.len() as f64;
        ParticleEnsemble::with_total_mass(x, v, n).unwrap()
    }

    #[test]
    fn moments_of_single_and_pair() {
        let d = domain();
        let g = ControlGrid::new(1, 2).unwrap();
        let e = ensemble(vec![[1.0, -1.0], [2.0, 0.5], [3.0, 0.7]], vec![[0.1, 0.2], [1.0, 2.0], [3.0, 0.0]]);
        let m = cell_moments(&e, &[[0.0, 0.3]; 3], &g, &d);
        assert_eq!(m.cells[0].means().unwrap(), [-1.0, 0.1, 0.2, 0.3]);
        let upper = m.cells[1].means().unwrap();
        assert!((upper[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_cells_are_flagged_and_zero() {
        let d = domain();
        let g = ControlGrid::new(1, 2).unwrap();
        let e = ensemble(vec![[1.0, 1.0]], vec![[1.0, 1.0]]);
        let m = cell_moments(&e, &[[0.0, 0.0]], &g, &d);
        assert!(m.cells[0].is_empty() && m.cells[0].means().is_none());
        let p = params(2);
        assert_eq!(control_dto(&m, &p, 0.1).b[0], 0.0);
        assert_eq!(control_continuous_limit(&m, &p).b[0], 0.0);
        assert_eq!(control_otd(&e, &p, &g, &d).b[0], 0.0);
    }

    /// Naive transcription of the feedback formula with explicit loops.
    fn dto_oracle(y: &[f64], vx: &[f64], vy: &[f64], ey: &[f64], p: &ControlParams, h: f64) -> f64 {
        let n = y.len() as f64;
        let mean = |a: &[f64]| a.iter().sum::<f64>() / n;
        let (yb, vxb, vyb, eyb) = (mean(y), mean(vx), mean(vy), mean(ey));
        let mut sv = 0.0;
        let mut sx = 0.0;
        let mut sq = 0.0;
        for i in 0..y.len() {
            sv += (vy[i] + h * ey[i] - vyb) * vx[i];
            sx += (y[i] + h * (vy[i] + h * ey[i]) - yb) * vx[i];
            sq += vx[i] * vx[i];
        }
        let rv = p.alpha_v * (vyb + h * eyb - p.vy_target[0]) * vxb + p.beta_v / n * sv;
        let rx = p.alpha_x * (yb + h * (vyb + h * eyb) - p.y_target[0]) * vxb + p.beta_x / n * sx;
        let qv = h * (p.alpha_v * vxb * vxb + p.beta_v / n * sq);
        let qx = h * h * (p.alpha_x * vxb * vxb + p.beta_x / n * sq);
        (rv + rx) / (p.gamma + qv + qx)
    }

    #[test]
    fn dto_hand_example() {
        let d = domain();
        let g = ControlGrid::new(1, 1).unwrap();
        let e = ensemble(vec![[1.0, 0.0], [2.0, 0.1]], vec![[1.0, 2.0], [1.0, 0.0]]);
        let m = cell_moments(&e, &[[0.0; 2]; 2], &g, &d);
        let p = params(1);
        let out = control_dto(&m, &p, 0.1);
        assert!((out.b[0] - 1.0 / 1.1).abs() < 1e-15, "{}", out.b[0]);
        let o = dto_oracle(&[0.0, 0.1], &[1.0, 1.0], &[2.0, 0.0], &[0.0, 0.0], &p, 0.1);
        assert!((out.b[0] - o).abs() < 1e-15);
        let c = control_continuous_limit(&m, &p);
        assert!((c.b[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn dto_matches_naive_oracle_on_random_cells() {
        let d = domain();
        let g = ControlGrid::new(1, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 1000;
            let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect();
            let vx: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0) + 0.3).collect();
            let vy: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let ey: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let e = ensemble(
                y.iter().map(|y| [5.0, *y]).collect(),
                vx.iter().zip(&vy).map(|(a, b)| [*a, *b]).collect(),
            );
            let ef: Vec<[f64; 2]> = ey.iter().map(|e| [0.0, *e]).collect();
            let mut p = params(1);
            p.alpha_x = rng.gen_range(0.0..2.0);
            p.beta_x = rng.gen_range(0.0..2.0);
            p.beta_v = rng.gen_range(0.0..2.0);
            p.vy_target = vec![rng.gen_range(-1.0..1.0)];
            p.y_target = vec![rng.gen_range(-1.0..1.0)];
            p.max_b = 1e300;
            let h = rng.gen_range(1e-3..0.2);
            let m = cell_moments(&e, &ef, &g, &d);
            let got = control_dto(&m, &p, h).raw[0];
            let want = dto_oracle(&y, &vx, &vy, &ey, &p, h);
            assert!((got - want).abs() <= 1e-11 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn clamp_to_admissible_set() {
        let d = domain();
        let g = ControlGrid::new(1, 1).unwrap();
        // raw ratio 5 in the continuous limit
        let e = ensemble(vec![[1.0, 0.0], [2.0, 0.0]], vec![[1.0, 10.0], [1.0, 0.0]]);
        let m = cell_moments(&e, &[[0.0; 2]; 2], &g, &d);
        let mut p = params(1);
        p.max_b = 2.0;
        let out = control_continuous_limit(&m, &p);
        assert_eq!(out.raw[0], 5.0);
        assert_eq!(out.b[0], 2.0);
        assert!(out.clamped[0]);
    }

    #[test]
    fn zero_streaming_gives_zero_for_all_variants() {
        let d = domain();
        let g = ControlGrid::new(1, 2).unwrap();
        let e = ensemble(
            vec![[1.0, -0.3], [2.0, -1.0], [3.0, 0.4], [4.0, 1.2]],
            vec![[0.0, 3.0], [0.0, -1.0], [0.0, 2.0], [0.0, 5.0]],
        );
        let ef = [[0.2, -0.4]; 4];
        let mut p = params(2);
        p.alpha_x = 1.5;
        p.beta_x = 0.1;
        p.beta_v = 0.1;
        p.vy_target = vec![1.0, -1.0];
        let m = cell_moments(&e, &ef, &g, &d);
        assert!(control_dto(&m, &p, 0.1).b.iter().all(|b| *b == 0.0));
        assert!(control_continuous_limit(&m, &p).b.iter().all(|b| *b == 0.0));
        assert!(control_otd(&e, &p, &g, &d).b.iter().all(|b| *b == 0.0));
    }

    #[test]
    fn larger_gamma_shrinks_control() {
        let d = domain();
        let g = ControlGrid::new(1, 1).unwrap();
        let e = ensemble(vec![[1.0, 0.2], [2.0, -0.1]], vec![[1.0, 2.0], [0.5, 0.0]]);
        let m = cell_moments(&e, &[[0.0; 2]; 2], &g, &d);
        let mut last = f64::INFINITY;
        for gamma in [1e-3, 1e-2, 1e-1, 1.0, 10.0, 100.0] {
            let mut p = params(1);
            p.gamma = gamma;
            p.max_b = 1e300;
            let b = control_continuous_limit(&m, &p).raw[0].abs();
            assert!(b <= last);
            last = b;
        }
        assert!(last < 1e-1);
    }

    #[test]
    fn cost_examples() {
        let d = domain();
        let g = ControlGrid::new(1, 1).unwrap();
        let mut p = params(1);
        p.gamma = 1e-3;
        let e = ensemble(vec![[1.0, 0.0], [2.0, 0.0]], vec![[1.0, 0.0], [1.0, 0.0]]);
        let c = evaluate_cost(&e, &e, &[0.0], &p, &g, &d, 0.1).unwrap();
        assert_eq!(c[0], 0.0);
        let c = evaluate_cost(&e, &e, &[2.0], &p, &g, &d, 0.1).unwrap();
        assert!((c[0] - 2e-4).abs() < 1e-18);
        let moved = ensemble(vec![[1.0, 0.3], [2.0, -0.5]], vec![[1.0, 0.7], [1.0, -0.2]]);
        p.beta_v = 0.4;
        p.alpha_x = 0.2;
        p.beta_x = 1.0;
        let c = evaluate_cost(&e, &moved, &[1.0], &p, &g, &d, 0.1).unwrap();
        assert!(c[0] > 0.0);
    }
}
