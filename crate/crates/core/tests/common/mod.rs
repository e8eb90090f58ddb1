#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vpic_control::control::{cell_moments, control_continuous_limit, control_dto, control_otd};
use vpic_control::diagnostics::{boundary_thermal_energy, BoundaryRegion};
use vpic_control::phase_space::{apply_boundaries, stochastic_round};
use vpic_control::scenarios::preset;
use vpic_control::{
    Boundary, ControlGrid, ControlParams, ControlVariant, DomainSpec, FieldGrid, Kernel, ParticleEnsemble, Simulation,
};

pub type Check = std::result::Result<(), String>;

pub fn two_stream_domain() -> DomainSpec {
    DomainSpec::new([0.0, 40.0], [-1.5, 1.5], Boundary::Periodic, Boundary::Reflective).unwrap()
}

pub fn random_ensemble(rng: &mut impl Rng, domain: &DomainSpec, n: usize, speed: f64) -> ParticleEnsemble {
    let x = (0..n)
        .map(|_| {
            [
                rng.gen_range(domain.x_range[0]..domain.x_range[1]),
                rng.gen_range(domain.y_range[0]..domain.y_range[1]),
            ]
        })
        .collect();
    let v = (0..n).map(|_| [rng.gen_range(-speed..speed), rng.gen_range(-speed..speed)]).collect();
    ParticleEnsemble::with_total_mass(x, v, 1.0).unwrap()
}

pub fn params(n_cells: usize, gamma: f64, max_b: f64, rng: &mut impl Rng) -> ControlParams {
    ControlParams {
        alpha_x: rng.gen_range(0.0..2.0),
        alpha_v: rng.gen_range(0.0..2.0),
        beta_x: rng.gen_range(0.0..1.0),
        beta_v: rng.gen_range(0.0..1.0),
        gamma,
        max_b,
        y_target: (0..n_cells).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        vy_target: (0..n_cells).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        variant: ControlVariant::Dto,
        activation_time: 0.0,
    }
}

fn run(name: &str, cases: u32, strategy: impl Strategy<Value = u64>, test: impl Fn(u64) -> Result<(), TestCaseError>) -> Check {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

/// Particle count and total mass are unchanged, bit for bit, by every step.
pub fn mass_conservation() -> Check {
    run("mass conservation", 24, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut c = preset("two-stream-desk").unwrap();
        c.field_grid = [8, 8];
        c.h = rng.gen_range(1e-3..5e-2);
        c.order = if rng.gen() { vpic_control::Order::First } else { vpic_control::Order::Second };
        c.control.variant = [ControlVariant::Dto, ControlVariant::Continuous, ControlVariant::Otd, ControlVariant::Constant]
            [rng.gen_range(0..4)];
        let ens = random_ensemble(&mut rng, &c.domain, 500, 3.0);
        let (n, mass) = (ens.len(), ens.total_mass());
        let mut sim = Simulation::with_ensemble(c, ens).unwrap();
        for _ in 0..5 {
            sim.step(false).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(sim.ensemble.len(), n);
            prop_assert_eq!(sim.ensemble.total_mass().to_bits(), mass.to_bits());
        }
        Ok(())
    })
}

/// Every variant respects `|B_k| <= M`, including for tiny `gamma`.
pub fn admissibility() -> Check {
    run("admissibility", 128, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = two_stream_domain();
        let grid = ControlGrid::new(rng.gen_range(1..4), rng.gen_range(1..4)).unwrap();
        let gamma = 10f64.powf(rng.gen_range(-8.0..1.0));
        let m = rng.gen_range(0.1..30.0);
        let p = params(grid.n_cells(), gamma, m, &mut rng);
        let ens = random_ensemble(&mut rng, &d, 200, 5.0);
        let e: Vec<[f64; 2]> = (0..ens.len()).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
        let mom = cell_moments(&ens, &e, &grid, &d);
        let h = rng.gen_range(1e-4..0.5);
        for out in [
            control_dto(&mom, &p, h),
            control_continuous_limit(&mom, &p),
            control_otd(&ens, &p, &grid, &d),
        ] {
            prop_assert!(out.b.iter().all(|b| b.abs() <= m), "{:?} exceeds {}", out.b, m);
        }
        Ok(())
    })
}

pub fn thermal_energy_nonnegative() -> Check {
    run("thermal energy", 256, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = two_stream_domain();
        let n = rng.gen_range(0..50);
        let mut ens = random_ensemble(&mut rng, &d, n, 10.0);
        if rng.gen() {
            // identical velocities make the centered sum cancel exactly
            let v0 = [rng.gen_range(-1e3..1e3), rng.gen_range(-1e3..1e3)];
            ens.v.iter_mut().for_each(|v| *v = v0);
        }
        let lower = rng.gen_range(-1.5..0.0);
        let region = BoundaryRegion::new(lower, lower + rng.gen_range(0.0..1.5));
        let e = boundary_thermal_energy(&ens, &region);
        prop_assert!(e >= 0.0, "{}", e);
        Ok(())
    })
}

/// The sample mean of `stochastic_round(z)` matches `z` within five
/// standard errors.
pub fn stochastic_round_expectation() -> Check {
    run("stochastic round", 64, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = rng.gen_range(0.0..100.0);
        let n = 20_000;
        let mean = (0..n).map(|_| stochastic_round(z, &mut rng).unwrap() as f64).sum::<f64>() / n as f64;
        let p = z - z.floor();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        prop_assert!((mean - z).abs() <= 5.0 * se + 1e-12, "z {} mean {}", z, mean);
        Ok(())
    })
}

/// Wall reflections flip the normal velocity and keep the speed.
pub fn reflection_preserves_speed() -> Check {
    run("reflection", 256, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bc = if rng.gen() { Boundary::Reflective } else { Boundary::Dirichlet };
        let d = DomainSpec::new([-10.0, 10.0], [-5.0, 5.0], Boundary::Dirichlet, bc).unwrap();
        let mut ens = random_ensemble(&mut rng, &d, 100, 50.0);
        let speeds: Vec<f64> = ens.v.iter().map(|v| v[0].hypot(v[1])).collect();
        let h = 0.1;
        for (x, v) in ens.x.iter_mut().zip(&ens.v) {
            x[0] += h * v[0];
            x[1] += h * v[1];
        }
        apply_boundaries(&mut ens, &d).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for (i, (x, v)) in ens.x.iter().zip(&ens.v).enumerate() {
            prop_assert!(d.contains(*x));
            prop_assert_eq!(v[0].hypot(v[1]), speeds[i]);
        }
        Ok(())
    })
}

/// Deposited charge sums to the ensemble mass for both kernels.
pub fn deposition_partition_of_unity() -> Check {
    run("partition of unity", 128, any::<u64>(), |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = match rng.gen_range(0..3) {
            0 => two_stream_domain(),
            1 => DomainSpec::new([0.0, 40.0], [-5.0, 5.0], Boundary::Periodic, Boundary::Dirichlet).unwrap(),
            _ => DomainSpec::new([-10.0, 10.0], [-10.0, 10.0], Boundary::Dirichlet, Boundary::Dirichlet).unwrap(),
        };
        let kernel = if rng.gen() { Kernel::Cic } else { Kernel::Ngp };
        let mut g = FieldGrid::new(d.clone(), rng.gen_range(2..40), rng.gen_range(2..40), kernel).unwrap();
        let n = rng.gen_range(1..400);
        let mut ens = random_ensemble(&mut rng, &d, n, 1.0);
        // particles exactly on the walls and corners
        ens.x[0] = [d.x_range[1], d.y_range[1]];
        ens.x[n / 2] = [d.x_range[0], d.y_range[0]];
        g.deposit(&ens).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let total = g.rho.iter().sum::<f64>() * g.dx * g.dy;
        prop_assert!((total - ens.total_mass()).abs() <= 1e-12 * ens.total_mass());
        Ok(())
    })
}

pub const INVARIANTS: [(&str, fn() -> Check); 6] = [
    ("mass conservation", mass_conservation),
    ("|B_k| <= M", admissibility),
    ("thermal energy >= 0", thermal_energy_nonnegative),
    ("stochastic round mean", stochastic_round_expectation),
    ("reflection speed", reflection_preserves_speed),
    ("partition of unity", deposition_partition_of_unity),
];
