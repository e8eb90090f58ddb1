use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use vpic_control::driver::{convergence_study_particles, convergence_study_time, run, sweep, SweepParameter};
use vpic_control::io::{convergence_csv, sweep_csv, write_run};
use vpic_control::scenarios::{preset, InitMode, ScenarioConfig};
use vpic_control::{ControlVariant, Error, Order, Result};

#[derive(Parser)]
#[command(name = "vpic", version, about = "Controlled Vlasov-Poisson particle-in-cell simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its artifacts.
    Run(Common),
    /// Temporal self-convergence of the pushers.
    ConvergeTime(Common),
    /// Error against a large reference run as the particle count grows.
    ConvergeParticles {
        #[command(flatten)]
        common: Common,
        /// stochastic or deterministic; both when omitted
        #[arg(long)]
        init: Option<InitMode>,
    },
    /// One run per value of a control parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// gamma, t_act or m
        #[arg(long)]
        param: SweepParameter,
        /// Comma-separated values; a default grid when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Print the resolved configuration as TOML.
    Config(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    #[arg(long, default_value = "two-stream-desk")]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// dto, continuous, otd, constant or off
    #[arg(long)]
    controller: Option<ControlVariant>,
    #[arg(long, value_parser = parse_order)]
    order: Option<Order>,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    t_final: Option<f64>,
}

fn parse_order(s: &str) -> std::result::Result<Order, String> {
    s.parse::<u8>()
        .ok()
        .and_then(Order::from_int)
        .ok_or_else(|| format!("order must be 1 or 2, got '{s}'"))
}

impl Common {
    fn resolve(&self) -> Result<ScenarioConfig> {
        if let Some(w) = self.workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build_global()
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        let mut c = match &self.config {
            Some(path) => ScenarioConfig::load(path)?,
            None => preset(&self.preset)?,
        };
        if let Some(s) = self.seed {
            c.seed = s;
        }
        if let Some(v) = self.controller {
            c.control.variant = v;
        }
        if let Some(o) = self.order {
            c.order = o;
        }
        if let Some(n) = self.particles {
            c.n_particles = n;
        }
        if let Some(t) = self.t_final {
            c.t_final = t;
        }
        c.validate()?;
        Ok(c)
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let config = common.resolve()?;
            let out = run(&config)?;
            write_run(&out, &config, &common.out)?;
            let s = &out.summary;
            println!(
                "{}: {} steps to t = {}, rho_b = {}, rho_b*T_b = {}, {:.2} s",
                config.name, s.steps, s.final_time, s.boundary_mass, s.thermal_energy, s.wall_clock_seconds
            );
        }
        Command::ConvergeTime(common) => {
            let config = common.resolve()?;
            std::fs::create_dir_all(&common.out)?;
            let orders = match common.order {
                Some(o) => vec![o],
                None => vec![Order::First, Order::Second],
            };
            for order in orders {
                let table = convergence_study_time(&config, order)?;
                let tag = if order == Order::First { 1 } else { 2 };
                std::fs::write(common.out.join(format!("convergence_time_order{tag}.csv")), convergence_csv(&table, "steps"))?;
                println!("order {tag}: slope {:.3}", table.slope);
                for r in &table.rows {
                    println!("  N_t = {:5}  err = {:.3e}", r.size, r.error);
                }
            }
        }
        Command::ConvergeParticles { common, init } => {
            let config = common.resolve()?;
            std::fs::create_dir_all(&common.out)?;
            let modes = match init {
                Some(m) => vec![m],
                None => vec![InitMode::Stochastic, InitMode::Deterministic],
            };
            for mode in modes {
                let table = convergence_study_particles(&config, mode)?;
                let tag = if mode == InitMode::Stochastic { "stochastic" } else { "deterministic" };
                std::fs::write(common.out.join(format!("convergence_particles_{tag}.csv")), convergence_csv(&table, "particles"))?;
                println!("{tag}: slope {:.3}", table.slope);
                for r in &table.rows {
                    println!("  N = {:8}  err = {:.3e}", r.size, r.error);
                }
            }
        }
        Command::Sweep { common, param, values } => {
            let config = common.resolve()?;
            let values = if values.is_empty() { param.default_values() } else { values };
            let runs = sweep(&config, param, &values)?;
            std::fs::create_dir_all(&common.out)?;
            let label = format!("{param:?}").to_lowercase();
            for r in &runs {
                let mut c = config.clone();
                param.apply(&mut c, r.value);
                write_run(&r.output, &c, &common.out.join(format!("{label}_{}", r.value)))?;
            }
            std::fs::write(common.out.join("sweep.csv"), sweep_csv(&label, &runs))?;
            print!("{}", sweep_csv(&label, &runs));
        }
        Command::Config(common) => print!("{}", common.resolve()?.to_toml_string()?),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
