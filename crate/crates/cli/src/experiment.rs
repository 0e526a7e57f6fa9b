use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use distiag::baselines::{run_gtd2, run_pdbg, run_saga, BaselineOptions, CentralState, Gtd2Steps};
use distiag::diagnostics::{certify_step_size, fit_log_linear, q_matrix, Certification, RateFit};
use distiag::instance::{build_instance, InstanceSpec};
use distiag::linalg::{spectral_radius, sym_extremes, Vector};
use distiag::moments::{Moments, SaddlePoint};
use distiag::network::{build_mixing, MixingMatrix};
use distiag::solver::{
    init_state, run_with, DualStep, RunOptions, RunTrace, Schedule, ScheduleKind,
};
use log::{info, warn};
use serde::Serialize;

use crate::config::{ExperimentConfig, Gamma1, Gamma2, Method};
use crate::error::{CliError, CliResult};
use crate::svg::{self, Series};

/// Gap threshold for the epochs-to-tolerance columns.
pub const TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct InstanceInfo {
    pub n_states: usize,
    pub n_joint_actions: usize,
    pub discount: f64,
    pub lambda_max_a: f64,
    pub c_eigen_range: (f64, f64),
    pub beta: f64,
    pub mspbe_star: f64,
    pub mixing_lambda: f64,
    pub n_edges: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StepChoice {
    pub gamma1: f64,
    pub gamma1_source: &'static str,
    pub gamma2: f64,
    pub gamma2_source: &'static str,
    /// `true` when `gamma1` passed the certificate with its margin,
    /// `false` when only `rho(Q) < 1` holds, absent if not requested.
    pub certified: Option<bool>,
    pub gtd2: Gtd2Steps,
}

#[derive(Debug, Clone, Serialize)]
pub struct QSummary {
    pub gamma1: f64,
    pub beta: f64,
    pub spectral_radius: f64,
    pub q: Vec<Vec<f64>>,
    pub q_squared_positive: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub status: &'static str,
    pub error: Option<String>,
    pub final_epoch: Option<f64>,
    pub final_gap: Option<f64>,
    pub epochs_to_tolerance: Option<f64>,
    /// Epochs to tolerance times `M`.
    pub iterations_to_tolerance: Option<f64>,
    /// Log-linear fit of the gap against epoch.
    pub rate: Option<RateFit>,
    /// Regularization of the objective the gap is measured on.
    pub objective_rho: f64,
    pub trace_csv: Option<String>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config: ExperimentConfig,
    pub tolerance: f64,
    pub instance: InstanceInfo,
    pub steps: StepChoice,
    pub schedule: ScheduleKind,
    pub certification: Option<Certification>,
    pub certification_error: Option<String>,
    /// `Q` at the `gamma1` actually used.
    pub qcert: Option<QSummary>,
    pub qcert_error: Option<String>,
    pub methods: Vec<MethodSummary>,
}

pub struct Outcome {
    pub summary: Summary,
    pub traces: Vec<RunTrace>,
}

impl Outcome {
    /// 4 if any method diverged, else 0.
    pub fn exit_code(&self) -> i32 {
        if self.summary.methods.iter().any(|m| m.status == "diverged") {
            4
        } else {
            0
        }
    }
}

fn resolve_steps(
    cfg: &ExperimentConfig,
    mo: &Moments,
    cert: Option<&Certification>,
) -> CliResult<(f64, &'static str, Option<bool>)> {
    Ok(match cfg.gamma1 {
        Gamma1::Standard => (0.005 / spectral_radius(mo.a_hat()), "standard", None),
        Gamma1::Value(x) => (x, "config", None),
        Gamma1::AutoCertified => {
            let cert = cert.ok_or_else(|| {
                CliError::Config("gamma1 = auto-certified but certification failed".into())
            })?;
            match (cert.gamma1, cert.contractive_gamma) {
                (Some(g), _) => (g, "auto-certified", Some(true)),
                (None, Some(g)) => {
                    warn!(
                        "no step meets the certificate margin (best rho(Q) = {:.3e}); using the largest contractive step {g:.3e}",
                        cert.best_radius
                    );
                    (g, "auto-contractive", Some(false))
                }
                (None, None) => {
                    return Err(distiag::Error::Certificate(format!(
                        "rho(Q) >= 1 on the whole scan (best {:.6e}); set gamma1 explicitly",
                        cert.best_radius
                    ))
                    .into())
                }
            }
        }
    })
}

fn write_trace(dir: &Path, trace: &RunTrace) -> CliResult<String> {
    let name = format!("trace_{}.csv", trace.method);
    let mut w = csv::Writer::from_path(dir.join(&name))?;
    for r in &trace.records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(name)
}

fn method_summary(
    method: Method,
    res: &distiag::Result<RunTrace>,
    m: usize,
    objective_rho: f64,
) -> MethodSummary {
    let mut s = MethodSummary {
        method,
        status: "ok",
        error: None,
        final_epoch: None,
        final_gap: None,
        epochs_to_tolerance: None,
        iterations_to_tolerance: None,
        rate: None,
        objective_rho,
        trace_csv: None,
        seconds: 0.0,
    };
    match res {
        Ok(tr) => {
            s.final_epoch = tr.last().map(|r| r.epoch);
            s.final_gap = tr.last().map(|r| r.mspbe_gap);
            s.epochs_to_tolerance = tr.epochs_to(TOLERANCE);
            s.iterations_to_tolerance = s.epochs_to_tolerance.map(|e| e * m as f64);
            s.rate = fit_log_linear(tr.records.iter().map(|r| (r.epoch, r.mspbe_gap))).ok();
        }
        Err(e) => {
            s.status = if matches!(e, distiag::Error::Divergence { .. }) {
                "diverged"
            } else {
                "failed"
            };
            s.error = Some(e.to_string());
        }
    }
    s
}

struct Problem<'a> {
    mo: &'a Moments,
    oracle: &'a SaddlePoint,
    mix: &'a MixingMatrix,
    gamma1: f64,
    gamma2: f64,
    gtd2: Gtd2Steps,
}

fn run_method(
    cfg: &ExperimentConfig,
    method: Method,
    pb: &Problem,
) -> CliResult<(distiag::Result<RunTrace>, f64)> {
    let (mo, m, d) = (pb.mo, pb.mo.n_samples(), pb.mo.dim());
    let schedule = || Schedule::new(cfg.schedule, m);
    let opts = BaselineOptions::epochs(cfg.epochs);
    Ok(match method {
        Method::PdDistIag => {
            let mut st = init_state(
                mo,
                pb.mix,
                pb.gamma1,
                DualStep::Fixed(pb.gamma2),
                None,
                None,
            )?;
            let mut ro = RunOptions::iterations(cfg.epochs * m as u64);
            ro.record_every = m as u64;
            (
                run_with(&mut st, mo, pb.mix, &mut schedule()?, pb.oracle, &ro),
                mo.rho(),
            )
        }
        Method::Pdbg => {
            let mut st = CentralState::zeros(d);
            (
                run_pdbg(&mut st, mo, pb.oracle, pb.gamma1, pb.gamma2, &opts),
                mo.rho(),
            )
        }
        Method::Saga => {
            let mut st = CentralState::with_saga(mo, Vector::zeros(d), Vector::zeros(d));
            (
                run_saga(
                    &mut st,
                    mo,
                    pb.oracle,
                    &mut schedule()?,
                    pb.gamma1,
                    pb.gamma2,
                    &opts,
                ),
                mo.rho(),
            )
        }
        Method::Gtd2 => {
            // GTD2 has no regularizer, so it is scored on the rho = 0 problem
            let mo0 = mo.with_rho(0.0);
            let oracle0 = mo0.solve_saddle_point(mo0.beta())?;
            let mut st = CentralState::zeros(d);
            (
                run_gtd2(&mut st, &mo0, &oracle0, &mut schedule()?, &pb.gtd2, &opts),
                0.0,
            )
        }
    })
}

/// Run every configured method and write the artifacts into `cfg.output`.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<Outcome> {
    cfg.validate()?;
    let spec = InstanceSpec::new(
        cfg.seed,
        cfg.n_agents,
        cfg.n_samples,
        cfg.feature_dim,
        cfg.rho,
    );
    let inst = build_instance(&spec)?;
    let mo = &inst.moments;
    let mix = build_mixing(&cfg.topology, cfg.n_agents, cfg.seed)?;
    let beta = mo.beta();
    let oracle = mo.solve_saddle_point(beta)?;

    let (cert, cert_err) = match certify_step_size(mo, &mix) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let (gamma1, gamma1_source, certified) = resolve_steps(cfg, mo, cert.as_ref())?;
    let (gamma2, gamma2_source) = match cfg.gamma2 {
        Gamma2::Standard => (5e-3, "standard"),
        Gamma2::AutoBeta => (beta * gamma1, "auto-beta"),
        Gamma2::Value(x) => (x, "config"),
    };
    let mut gtd2 = Gtd2Steps::default_for(&mo.with_rho(0.0));
    gtd2.decay_epochs = cfg.gtd2_decay;
    let (qcert, qcert_err) = match q_matrix(mo, &mix, gamma1, beta) {
        Ok(q) => (
            Some(QSummary {
                gamma1,
                beta,
                spectral_radius: q.spectral_radius,
                q: q.q
                    .row_iter()
                    .map(|r| r.iter().copied().collect())
                    .collect(),
                q_squared_positive: q.q_squared_positive(),
            }),
            None,
        ),
        Err(e) => (None, Some(e.to_string())),
    };
    info!(
        "N={} M={} d={} rho={} lambda(W)={:.4} gamma1={gamma1:.4e} ({gamma1_source}) gamma2={gamma2:.4e} ({gamma2_source})",
        cfg.n_agents,
        cfg.n_samples,
        cfg.feature_dim,
        cfg.rho,
        mix.lambda()
    );

    fs::create_dir_all(&cfg.output)?;
    let pb = Problem {
        mo,
        oracle: &oracle,
        mix: &mix,
        gamma1,
        gamma2,
        gtd2,
    };
    let mut methods = Vec::new();
    let mut traces = Vec::new();
    for &method in &cfg.methods {
        let start = Instant::now();
        let (res, objective_rho) = run_method(cfg, method, &pb)?;
        let mut s = method_summary(method, &res, cfg.n_samples, objective_rho);
        s.seconds = start.elapsed().as_secs_f64();
        match res {
            Ok(tr) => {
                s.trace_csv = Some(write_trace(&cfg.output, &tr)?);
                info!(
                    "{method}: final gap {:.3e} after {} epochs",
                    s.final_gap.unwrap_or(f64::NAN),
                    cfg.epochs
                );
                traces.push(tr);
            }
            Err(e) => warn!("{method}: {e}"),
        }
        methods.push(s);
    }

    let (c_lo, c_hi) = sym_extremes(mo.c_hat());
    let summary = Summary {
        config: cfg.clone(),
        tolerance: TOLERANCE,
        instance: InstanceInfo {
            n_states: spec.n_states,
            n_joint_actions: spec.n_joint_actions,
            discount: spec.discount,
            lambda_max_a: spectral_radius(mo.a_hat()),
            c_eigen_range: (c_lo, c_hi),
            beta,
            mspbe_star: mo.mspbe(&oracle.theta)?,
            mixing_lambda: mix.lambda(),
            n_edges: mix.edges().edges.len(),
        },
        steps: StepChoice {
            gamma1,
            gamma1_source,
            gamma2,
            gamma2_source,
            certified,
            gtd2,
        },
        schedule: cfg.schedule,
        certification: cert,
        certification_error: cert_err,
        qcert,
        qcert_error: qcert_err,
        methods,
    };
    fs::write(
        cfg.output.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    let series: Vec<Series> = traces
        .iter()
        .map(|t| Series {
            label: t.method.clone(),
            points: t.records.iter().map(|r| (r.epoch, r.mspbe_gap)).collect(),
        })
        .collect();
    let title = format!(
        "N={} M={} d={} rho={}",
        cfg.n_agents, cfg.n_samples, cfg.feature_dim, cfg.rho
    );
    fs::write(cfg.output.join("chart.svg"), svg::render(&title, &series))?;
    Ok(Outcome { summary, traces })
}

/// Paths of the artifacts `run_experiment` writes for `cfg`.
pub fn artifact_paths(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = cfg
        .methods
        .iter()
        .map(|m| cfg.output.join(format!("trace_{m}.csv")))
        .collect();
    v.push(cfg.output.join("summary.json"));
    v.push(cfg.output.join("chart.svg"));
    v
}
