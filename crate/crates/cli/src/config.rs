//! Experiment configuration.
//!
//! The file format is one `key = value` pair per line. Blank lines and lines
//! starting with `#` are ignored, keys may appear at most once, and unknown
//! keys are rejected. Any key can be overridden by an environment variable
//! named `DISTIAG_` followed by the upper-cased key, e.g.
//! `DISTIAG_N_AGENTS=5`.
//!
//! | key           | value                                                           | default    |
//! |---------------|-----------------------------------------------------------------|------------|
//! | `seed`        | unsigned integer                                                | `1`        |
//! | `n_agents`    | positive integer                                                | `10`       |
//! | `n_samples`   | positive integer                                                | `200`      |
//! | `feature_dim` | positive integer                                                | `20`       |
//! | `rho`         | non-negative number                                             | `0.01`     |
//! | `gamma1`      | `standard`, `auto-certified` or a positive number               | `standard` |
//! | `gamma2`      | `standard`, `auto-beta` or a positive number                    | `standard` |
//! | `topology`    | `complete`, `ring`, `path`, `er-log`, `er:<p>`, `custom:<file>` | `er:0.2`   |
//! | `schedule`    | `cyclic`, `shuffle` or `shuffle:<seed>`                         | `cyclic`   |
//! | `epochs`      | positive integer                                                | `100`      |
//! | `methods`     | comma list of `pd-distiag`, `pdbg`, `gtd2`, `saga`              | all four   |
//! | `gtd2_decay`  | positive number of epochs, or `none`                            | `1000`     |
//! | `output`      | directory                                                       | `out`      |
//!
//! `standard` steps are `gamma1 = 0.005 / lambda_max(A)` and `gamma2 = 5e-3`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use distiag::network::{EdgeList, Topology};
use distiag::solver::ScheduleKind;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "DISTIAG_";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gamma1 {
    Standard,
    AutoCertified,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gamma2 {
    Standard,
    AutoBeta,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Method {
    #[serde(rename = "pd-distiag")]
    PdDistIag,
    #[serde(rename = "pdbg")]
    Pdbg,
    #[serde(rename = "gtd2")]
    Gtd2,
    #[serde(rename = "saga")]
    Saga,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::PdDistIag, Method::Pdbg, Method::Gtd2, Method::Saga];

    pub fn name(self) -> &'static str {
        match self {
            Method::PdDistIag => "pd-distiag",
            Method::Pdbg => "pdbg",
            Method::Gtd2 => "gtd2",
            Method::Saga => "saga",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| CliError::Config(format!("unknown method `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_agents: usize,
    pub n_samples: usize,
    pub feature_dim: usize,
    pub rho: f64,
    pub gamma1: Gamma1,
    pub gamma2: Gamma2,
    pub topology: Topology,
    pub schedule: ScheduleKind,
    pub epochs: u64,
    pub methods: Vec<Method>,
    pub gtd2_decay: Option<f64>,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_agents: 10,
            n_samples: 200,
            feature_dim: 20,
            rho: 0.01,
            gamma1: Gamma1::Standard,
            gamma2: Gamma2::Standard,
            topology: Topology::ErdosRenyi { p: 0.2 },
            schedule: ScheduleKind::Cyclic,
            epochs: 100,
            methods: Method::ALL.to_vec(),
            gtd2_decay: Some(1000.0),
            output: PathBuf::from("out"),
        }
    }
}

const KEYS: [&str; 13] = [
    "seed",
    "n_agents",
    "n_samples",
    "feature_dim",
    "rho",
    "gamma1",
    "gamma2",
    "topology",
    "schedule",
    "epochs",
    "methods",
    "gtd2_decay",
    "output",
];

fn parse_num<T: FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("`{key}`: cannot parse `{value}`")))
}

fn positive(key: &str, value: &str) -> CliResult<f64> {
    let x: f64 = parse_num(key, value)?;
    if x.is_finite() && x > 0.0 {
        Ok(x)
    } else {
        Err(CliError::Config(format!(
            "`{key}` must be a positive number, got `{value}`"
        )))
    }
}

/// Core topology names plus `custom:<file>` for a JSON edge list.
pub fn parse_topology(value: &str) -> CliResult<Topology> {
    match value.strip_prefix("custom:") {
        Some(file) => {
            let text = std::fs::read_to_string(file)
                .map_err(|e| CliError::Config(format!("cannot read edge list `{file}`: {e}")))?;
            Ok(Topology::Custom(EdgeList::from_json(&text)?))
        }
        None => value
            .parse()
            .map_err(|e: distiag::Error| CliError::Config(e.to_string())),
    }
}

impl ExperimentConfig {
    /// Set one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "n_agents" => self.n_agents = parse_num(key, value)?,
            "n_samples" => self.n_samples = parse_num(key, value)?,
            "feature_dim" => self.feature_dim = parse_num(key, value)?,
            "rho" => self.rho = parse_num(key, value)?,
            "gamma1" => {
                self.gamma1 = match value {
                    "standard" => Gamma1::Standard,
                    "auto-certified" => Gamma1::AutoCertified,
                    v => Gamma1::Value(positive(key, v)?),
                }
            }
            "gamma2" => {
                self.gamma2 = match value {
                    "standard" => Gamma2::Standard,
                    "auto-beta" => Gamma2::AutoBeta,
                    v => Gamma2::Value(positive(key, v)?),
                }
            }
            "topology" => self.topology = parse_topology(value)?,
            "schedule" => {
                self.schedule = match value {
                    "cyclic" => ScheduleKind::Cyclic,
                    "shuffle" => ScheduleKind::Shuffle { seed: self.seed },
                    v => match v.strip_prefix("shuffle:") {
                        Some(s) => ScheduleKind::Shuffle {
                            seed: parse_num(key, s)?,
                        },
                        None => return Err(CliError::Config(format!("unknown schedule `{v}`"))),
                    },
                }
            }
            "epochs" => self.epochs = parse_num(key, value)?,
            "methods" => {
                let mut ms = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(Method::from_str)
                    .collect::<CliResult<Vec<_>>>()?;
                ms.sort();
                ms.dedup();
                self.methods = ms;
            }
            "gtd2_decay" => {
                self.gtd2_decay = match value {
                    "none" => None,
                    v => Some(positive(key, v)?),
                }
            }
            "output" => self.output = PathBuf::from(value),
            _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parse config text, then apply `DISTIAG_*` overrides from `env`.
    pub fn parse(text: &str, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let mut pairs = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let k = k.trim().to_string();
            if pairs.insert(k.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Config(format!(
                    "line {}: duplicate key `{k}`",
                    lineno + 1
                )));
            }
        }
        for (name, v) in env {
            if let Some(k) = name.strip_prefix(ENV_PREFIX) {
                let k = k.to_ascii_lowercase();
                if KEYS.contains(&k.as_str()) {
                    pairs.insert(k, v);
                }
            }
        }
        // the seed must be known before `schedule = shuffle` borrows it
        let mut cfg = Self::default();
        if let Some(v) = pairs.remove("seed") {
            cfg.set("seed", &v)?;
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, env: impl IntoIterator<Item = (String, String)>) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read `{}`: {e}", path.display())))?;
        Self::parse(&text, env)
    }

    pub fn validate(&self) -> CliResult<()> {
        let err = |m: &str| Err(CliError::Config(m.to_string()));
        if self.n_agents == 0 || self.n_samples == 0 || self.feature_dim == 0 || self.epochs == 0 {
            return err("n_agents, n_samples, feature_dim and epochs must be positive");
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return err("rho must be a non-negative number");
        }
        if self.methods.is_empty() {
            return err("methods must name at least one method");
        }
        Ok(())
    }

    /// Render back to the file format.
    pub fn to_text(&self) -> String {
        let g1 = match self.gamma1 {
            Gamma1::Standard => "standard".to_string(),
            Gamma1::AutoCertified => "auto-certified".to_string(),
            Gamma1::Value(x) => x.to_string(),
        };
        let g2 = match self.gamma2 {
            Gamma2::Standard => "standard".to_string(),
            Gamma2::AutoBeta => "auto-beta".to_string(),
            Gamma2::Value(x) => x.to_string(),
        };
        let schedule = match self.schedule {
            ScheduleKind::Cyclic => "cyclic".to_string(),
            ScheduleKind::Shuffle { seed } => format!("shuffle:{seed}"),
        };
        let methods: Vec<_> = self.methods.iter().map(|m| m.name()).collect();
        let topology = self.topology.to_string();
        let decay = self
            .gtd2_decay
            .map_or("none".to_string(), |x| x.to_string());
        format!(
            "seed = {}\nn_agents = {}\nn_samples = {}\nfeature_dim = {}\nrho = {}\ngamma1 = {g1}\ngamma2 = {g2}\n\
             topology = {topology}\nschedule = {schedule}\nepochs = {}\nmethods = {}\ngtd2_decay = {decay}\noutput = {}\n",
            self.seed,
            self.n_agents,
            self.n_samples,
            self.feature_dim,
            self.rho,
            self.epochs,
            methods.join(","),
            self.output.display()
        )
    }
}
