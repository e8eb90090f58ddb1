//! Run artifacts: CSV time series, control traces, plain-text grid
//! snapshots and the run manifest.
//!
//! Numbers are written with Rust's shortest round-trip formatting, so a run
//! with fixed inputs produces byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::driver::{ControlRecord, ConvergenceTable, DiagnosticRecord, RunOutput, RunSummary, Snapshot, SweepRun};
use crate::error::{Error, Result};
use crate::phase_space::DomainSpec;
use crate::scenarios::ScenarioConfig;

pub const TIME_SERIES_FILE: &str = "time_series.csv";
pub const CONTROL_TRACE_FILE: &str = "control_trace.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SNAPSHOT_DIR: &str = "snapshots";

pub fn time_series_csv(series: &[DiagnosticRecord]) -> String {
    let nc = series.first().map_or(0, |r| r.b.len());
    let mut s = String::from("step,t,rho_b,rho_i,rho_b_T_b,rho_b_frac,rho_i_frac");
    for k in 0..nc {
        let _ = write!(s, ",B_{k}");
    }
    for k in 0..nc {
        let _ = write!(s, ",cost_{k}");
    }
    s.push('\n');
    for r in series {
        let frac = |m: f64| if r.total_mass > 0.0 { m / r.total_mass } else { 0.0 };
        let _ = write!(
            s,
            "{},{},{},{},{},{},{}",
            r.step,
            r.t,
            r.boundary_mass,
            r.interior_mass,
            r.thermal_energy,
            frac(r.boundary_mass),
            frac(r.interior_mass)
        );
        for v in r.b.iter().chain(&r.cost) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

pub fn control_trace_csv(trace: &[ControlRecord]) -> String {
    let nc = trace.first().map_or(0, |r| r.output.b.len());
    let mut s = String::from("step,t");
    for prefix in ["B", "raw", "clamped"] {
        for k in 0..nc {
            let _ = write!(s, ",{prefix}_{k}");
        }
    }
    s.push('\n');
    for r in trace {
        let _ = write!(s, "{},{}", r.step, r.t);
        for v in r.output.b.iter().chain(&r.output.raw) {
            let _ = write!(s, ",{v}");
        }
        for c in &r.output.clamped {
            let _ = write!(s, ",{}", u8::from(*c));
        }
        s.push('\n');
    }
    s
}

/// Plain-text grid: a `key value` header, a blank line, then `ny` rows of
/// `nx` values with `x` varying along a row.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFile {
    pub name: String,
    pub t: f64,
    pub mx: usize,
    pub my: usize,
    pub nx: usize,
    pub ny: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub values: Vec<f64>,
}

impl GridFile {
    pub fn from_snapshot(snapshot: &Snapshot, field: usize, grid: [usize; 2], domain: &DomainSpec) -> Self {
        let (name, values) = &snapshot.fields[field];
        Self {
            name: name.clone(),
            t: snapshot.t,
            mx: grid[0],
            my: grid[1],
            nx: snapshot.nx,
            ny: snapshot.ny,
            x_range: domain.x_range,
            y_range: domain.y_range,
            values: values.clone(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name {}", self.name);
        let _ = writeln!(s, "t {}", self.t);
        let _ = writeln!(s, "mx {}", self.mx);
        let _ = writeln!(s, "my {}", self.my);
        let _ = writeln!(s, "nx {}", self.nx);
        let _ = writeln!(s, "ny {}", self.ny);
        let _ = writeln!(s, "x_range {} {}", self.x_range[0], self.x_range[1]);
        let _ = writeln!(s, "y_range {} {}", self.y_range[0], self.y_range[1]);
        s.push('\n');
        for row in self.values.chunks(self.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |what: &str| Error::Parse(format!("grid file: {what}"));
        let (header, body) = text.split_once("\n\n").ok_or_else(|| bad("missing blank line after header"))?;
        let mut name = None;
        let mut nums = std::collections::HashMap::new();
        let mut ranges = std::collections::HashMap::new();
        for line in header.lines() {
            let mut parts = line.split_whitespace();
            let key = parts.next().ok_or_else(|| bad("empty header line"))?;
            let rest: Vec<&str> = parts.collect();
            match key {
                "name" => name = rest.first().map(|s| s.to_string()),
                "x_range" | "y_range" => {
                    let v: Vec<f64> = rest.iter().map(|s| s.parse().map_err(|_| bad(key))).collect::<Result<_>>()?;
                    if v.len() != 2 {
                        return Err(bad(key));
                    }
                    ranges.insert(key.to_string(), [v[0], v[1]]);
                }
                _ => {
                    let v: f64 = rest.first().ok_or_else(|| bad(key))?.parse().map_err(|_| bad(key))?;
                    nums.insert(key.to_string(), v);
                }
            }
        }
        let num = |k: &str| nums.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
        let range = |k: &str| ranges.get(k).copied().ok_or_else(|| bad(&format!("missing {k}")));
        let g = Self {
            name: name.ok_or_else(|| bad("missing name"))?,
            t: num("t")?,
            mx: num("mx")? as usize,
            my: num("my")? as usize,
            nx: num("nx")? as usize,
            ny: num("ny")? as usize,
            x_range: range("x_range")?,
            y_range: range("y_range")?,
            values: body
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| bad("value")))
                .collect::<Result<_>>()?,
        };
        if g.values.len() != g.nx * g.ny {
            return Err(bad(&format!("expected {} values, found {}", g.nx * g.ny, g.values.len())));
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub code_version: String,
    pub summary: RunSummary,
    pub config: ScenarioConfig,
}

pub fn snapshot_file_name(name: &str, step: usize) -> String {
    format!("{name}_{step:08}.grid")
}

/// Writes every artifact of a run into `dir`.
pub fn write_run(output: &RunOutput, config: &ScenarioConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(TIME_SERIES_FILE), time_series_csv(&output.series))?;
    if config.output.control_trace {
        fs::write(dir.join(CONTROL_TRACE_FILE), control_trace_csv(&output.control_trace))?;
    }
    if !output.snapshots.is_empty() {
        let snap_dir = dir.join(SNAPSHOT_DIR);
        fs::create_dir_all(&snap_dir)?;
        for s in &output.snapshots {
            for f in 0..s.fields.len() {
                let g = GridFile::from_snapshot(s, f, config.field_grid, &config.domain);
                fs::write(snap_dir.join(snapshot_file_name(&g.name, s.step)), g.to_text())?;
            }
        }
    }
    write_manifest(&output.summary, config, dir)
}

pub fn write_manifest(summary: &RunSummary, config: &ScenarioConfig, dir: &Path) -> Result<()> {
    let m = Manifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        summary: summary.clone(),
        config: config.clone(),
    };
    let text = toml::to_string(&m).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    toml::from_str(&text).map_err(|e| Error::Parse(e.to_string()))
}

/// A `{size_label},error` header, one row per ladder entry, then a `# slope` comment line.
pub fn convergence_csv(table: &ConvergenceTable, size_label: &str) -> String {
    let mut s = format!("{size_label},error\n");
    for r in &table.rows {
        let _ = writeln!(s, "{},{}", r.size, r.error);
    }
    let _ = writeln!(s, "# slope {}", table.slope);
    s
}

pub fn sweep_csv(parameter: &str, runs: &[SweepRun]) -> String {
    let mut s = format!("{parameter},t,rho_b,rho_b_T_b\n");
    for r in runs {
        let last = r.output.series.last().expect("series holds the initial record");
        let _ = writeln!(s, "{},{},{},{}", r.value, last.t, last.boundary_mass, last.thermal_energy);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::ControlOutput;

    #[test]
    fn grid_file_round_trip() {
        let g = GridFile {
            name: "rho".into(),
            t: 5.0,
            mx: 3,
            my: 2,
            nx: 3,
            ny: 3,
            x_range: [0.0, 40.0],
            y_range: [-1.5, 1.5],
            values: (0..9).map(|i| i as f64 * 0.1 - 0.3).collect(),
        };
        let text = g.to_text();
        assert!(text.starts_with("name rho\nt 5\nmx 3\n"));
        assert_eq!(GridFile::parse(&text).unwrap(), g);
        assert!(GridFile::parse("name rho\n").is_err());
        let truncated = text.rsplit_once(' ').unwrap().0;
        assert!(GridFile::parse(truncated).is_err());
    }

    #[test]
    fn csv_headers() {
        let r = DiagnosticRecord {
            step: 0,
            t: 0.0,
            boundary_mass: 1.0,
            interior_mass: 3.0,
            total_mass: 4.0,
            thermal_energy: 0.5,
            b: vec![1.0, -1.0],
            cost: vec![0.0, 0.25],
        };
        let s = time_series_csv(&[r]);
        let mut lines = s.lines();
        assert_eq!(
            lines.next().unwrap(),
            "step,t,rho_b,rho_i,rho_b_T_b,rho_b_frac,rho_i_frac,B_0,B_1,cost_0,cost_1"
        );
        assert_eq!(lines.next().unwrap(), "0,0,1,3,0.5,0.25,0.75,1,-1,0,0.25");

        let c = ControlRecord {
            step: 3,
            t: 0.3,
            output: ControlOutput {
                b: vec![2.0],
                raw: vec![5.0],
                clamped: vec![true],
            },
        };
        assert_eq!(control_trace_csv(&[c]), "step,t,B_0,raw_0,clamped_0\n3,0.3,2,5,1\n");
    }
}
