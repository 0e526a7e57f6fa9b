use std::fmt;
use std::fs;
use std::path::PathBuf;

use clap::ValueEnum;
use log::warn;
use serde::Serialize;

use crate::config::{parse_topology, ExperimentConfig};
use crate::error::{CliError, CliResult};
use crate::experiment::{run_experiment, MethodSummary, Outcome, TOLERANCE};
use crate::svg::{self, Series};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Axis {
    Topology,
    Rho,
    Gamma1,
    #[value(name = "M", alias = "m")]
    #[serde(rename = "M")]
    M,
    #[value(name = "N", alias = "n")]
    #[serde(rename = "N")]
    N,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Topology => "topology",
            Axis::Rho => "rho",
            Axis::Gamma1 => "gamma1",
            Axis::M => "M",
            Axis::N => "N",
        })
    }
}

impl Axis {
    fn key(self) -> &'static str {
        match self {
            Axis::Topology => "topology",
            Axis::Rho => "rho",
            Axis::Gamma1 => "gamma1",
            Axis::M => "n_samples",
            Axis::N => "n_agents",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Cell {
    pub value: String,
    pub dir: PathBuf,
    pub status: &'static str,
    pub exit_code: i32,
    pub error: Option<String>,
    pub methods: Vec<MethodSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub axis: Axis,
    pub base: ExperimentConfig,
    pub tolerance: f64,
    pub cells: Vec<Cell>,
}

impl SweepSummary {
    /// 0 unless every cell failed, in which case the first cell's code.
    pub fn exit_code(&self) -> i32 {
        if self.cells.iter().all(|c| c.exit_code != 0) {
            self.cells.first().map_or(0, |c| c.exit_code)
        } else {
            0
        }
    }
}

fn dir_name(idx: usize, axis: Axis, value: &str) -> String {
    let clean: String = value
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{idx:02}_{axis}_{clean}")
}

/// Split a comma list; topology values may not contain commas themselves.
pub fn parse_values(values: &str) -> Vec<String> {
    values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect()
}

/// One experiment per value, all sharing `base.seed`. Cells run in
/// parallel; a failing cell is recorded and the others continue.
pub fn sweep(base: &ExperimentConfig, axis: Axis, values: &[String]) -> CliResult<SweepSummary> {
    if values.len() < 2 {
        return Err(CliError::Config(format!(
            "a sweep needs at least two values, got {}",
            values.len()
        )));
    }
    let mut cfgs = Vec::with_capacity(values.len());
    for (idx, v) in values.iter().enumerate() {
        let mut cfg = base.clone();
        cfg.set(axis.key(), v)?;
        cfg.validate()?;
        let label = match axis {
            Axis::Topology => parse_topology(v)?.to_string(),
            _ => v.clone(),
        };
        cfg.output = base.output.join(dir_name(idx, axis, &label));
        cfgs.push((label, cfg));
    }

    let results: Vec<CliResult<Outcome>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .iter()
            .map(|(_, cfg)| s.spawn(move || run_experiment(cfg)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep cell panicked"))
            .collect()
    });

    fs::create_dir_all(&base.output)?;
    let mut cells = Vec::new();
    let mut series = Vec::new();
    for ((label, cfg), res) in cfgs.into_iter().zip(results) {
        let cell = match res {
            Ok(out) => {
                for tr in &out.traces {
                    series.push(Series {
                        label: format!("{axis}={label} {}", tr.method),
                        points: tr.records.iter().map(|r| (r.epoch, r.mspbe_gap)).collect(),
                    });
                }
                let code = out.exit_code();
                Cell {
                    value: label,
                    dir: cfg.output,
                    status: if code == 0 { "ok" } else { "diverged" },
                    exit_code: code,
                    error: None,
                    methods: out.summary.methods,
                }
            }
            Err(e) => {
                warn!("{axis}={label}: {e}");
                Cell {
                    value: label,
                    dir: cfg.output,
                    status: "failed",
                    exit_code: e.exit_code(),
                    error: Some(e.to_string()),
                    methods: Vec::new(),
                }
            }
        };
        cells.push(cell);
    }

    let mut table = csv::Writer::from_path(base.output.join("sweep_table.csv"))?;
    table.write_record([
        axis.to_string().as_str(),
        "method",
        "status",
        "final_gap",
        "epochs_to_1e-6",
        "iterations_to_1e-6",
    ])?;
    let opt = |x: Option<f64>| x.map_or(String::new(), |v| v.to_string());
    for c in &cells {
        if c.methods.is_empty() {
            table.write_record([c.value.as_str(), "", c.status, "", "", ""])?;
        }
        for m in &c.methods {
            table.write_record([
                c.value.clone(),
                m.method.to_string(),
                m.status.to_string(),
                opt(m.final_gap),
                opt(m.epochs_to_tolerance),
                opt(m.iterations_to_tolerance),
            ])?;
        }
    }
    table.flush()?;

    let summary = SweepSummary {
        axis,
        base: base.clone(),
        tolerance: TOLERANCE,
        cells,
    };
    fs::write(
        base.output.join("sweep_summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    fs::write(
        base.output.join("sweep.svg"),
        svg::render(&format!("sweep over {axis}"), &series),
    )?;
    Ok(summary)
}
