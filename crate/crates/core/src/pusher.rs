//! Semi-implicit particle pushers: the first-order scheme and its two-stage
//! second-order extension. The magnetic rotation is treated implicitly,
//! the electric force explicitly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::phase_space::{apply_boundaries, DomainSpec, ParticleEnsemble};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    #[serde(rename = "1")]
    First,
    #[serde(rename = "2")]
    Second,
}

impl Order {
    pub fn from_int(n: u8) -> Option<Self> {
        match n {
            1 => Some(Self::First),
            2 => Some(Self::Second),
            _ => None,
        }
    }
}

/// Where the second stage of the second-order scheme takes its electric
/// field from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageField {
    /// Reuse the field of `t^n`, evaluated at the extrapolated positions.
    #[default]
    Lagged,
    /// Re-deposit the extrapolated positions and solve for a fresh field.
    Full,
}

/// Solves `v' = v + th (v' x B z) + th E` exactly.
#[inline]
pub fn implicit_velocity_solve(v: [f64; 2], e: [f64; 2], b: f64, th: f64) -> [f64; 2] {
    let a = th * b;
    let px = v[0] + th * e[0];
    let py = v[1] + th * e[1];
    let inv = 1.0 / (1.0 + a * a);
    [(px + a * py) * inv, (py - a * px) * inv]
}

/// Fields seen by each particle for one stage: `e[i]`, `b[i]`.
pub struct StageForces<'a> {
    pub e: &'a [[f64; 2]],
    pub b: &'a [f64],
}

/// One step of the first-order scheme with forces at `(t^n, x^n)`.
pub fn step_first_order(
    ensemble: &mut ParticleEnsemble,
    forces: StageForces<'_>,
    h: f64,
    domain: &DomainSpec,
) -> Result<()> {
    ensemble
        .x
        .par_iter_mut()
        .zip(ensemble.v.par_iter_mut())
        .zip(forces.e.par_iter().zip(forces.b.par_iter()))
        .for_each(|((x, v), (e, b))| {
            let vn = implicit_velocity_solve(*v, *e, *b, h);
            *v = vn;
            x[0] += h * vn[0];
            x[1] += h * vn[1];
        });
    apply_boundaries(ensemble, domain)
}

/// Stage buffers of the second-order scheme, reused across steps.
#[derive(Debug, Default, Clone)]
pub struct Workspace {
    x1: Vec<[f64; 2]>,
    v1: Vec<[f64; 2]>,
    extrap: Vec<[f64; 2]>,
    e2: Vec<[f64; 2]>,
    b2: Vec<f64>,
}

/// One step of the second-order scheme.
///
/// `stage_two` receives the extrapolated positions `2 x^(1) - x^n` (already
/// mapped into the domain) and must write the forces there into the two
/// output slices.
pub fn step_second_order<F>(
    ensemble: &mut ParticleEnsemble,
    forces: StageForces<'_>,
    h: f64,
    domain: &DomainSpec,
    ws: &mut Workspace,
    stage_two: F,
) -> Result<()>
where
    F: FnOnce(&[[f64; 2]], &mut [[f64; 2]], &mut [f64]) -> Result<()>,
{
    let half = 0.5 * h;
    let n = ensemble.len();
    ws.x1.resize(n, [0.0; 2]);
    ws.v1.resize(n, [0.0; 2]);
    ws.extrap.resize(n, [0.0; 2]);
    ws.e2.resize(n, [0.0; 2]);
    ws.b2.resize(n, 0.0);

    let bad = ws
        .x1
        .par_iter_mut()
        .zip(ws.v1.par_iter_mut())
        .zip(ws.extrap.par_iter_mut())
        .enumerate()
        .filter_map(|(i, ((x1, v1), ex))| {
            let v = implicit_velocity_solve(ensemble.v[i], forces.e[i], forces.b[i], half);
            let x = ensemble.x[i];
            *v1 = v;
            *x1 = [x[0] + half * v[0], x[1] + half * v[1]];
            *ex = [x[0] + h * v[0], x[1] + h * v[1]];
            domain.map_point(ex, None).err().map(|(axis, coord)| (i, axis, coord))
        })
        .min_by_key(|(i, _, _)| *i);
    if let Some((index, axis, coord)) = bad {
        let r = if axis == 0 { domain.x_range } else { domain.y_range };
        return Err(crate::Error::StepSize {
            index,
            coord,
            lo: r[0],
            hi: r[1],
        });
    }
    stage_two(&ws.extrap, &mut ws.e2, &mut ws.b2)?;

    ensemble
        .x
        .par_iter_mut()
        .zip(ensemble.v.par_iter_mut())
        .zip(ws.x1.par_iter().zip(ws.v1.par_iter()))
        .zip(ws.e2.par_iter().zip(ws.b2.par_iter()))
        .for_each(|(((x, v), (x1, v1)), (e, b))| {
            let v2 = implicit_velocity_solve(*v, *e, *b, half);
            let x2 = [x[0] + half * v2[0], x[1] + half * v2[1]];
            let xn = *x;
            let vn = *v;
            *x = [x1[0] + x2[0] - xn[0], x1[1] + x2[1] - xn[1]];
            *v = [v1[0] + v2[0] - vn[0], v1[1] + v2[1] - vn[1]];
        });
    apply_boundaries(ensemble, domain)
}
