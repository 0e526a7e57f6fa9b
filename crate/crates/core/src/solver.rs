//! PD-DistIAG: decentralized primal-dual updates driven by gradient
//! surrogates that are averaged over the network and over the sample table.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnostics::lyapunov;
use crate::error::{Error, Result};
use crate::linalg::{all_finite, Matrix, Vector};
use crate::moments::{Moments, SaddlePoint};
use crate::network::MixingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    /// `p_t = (t - 1) mod M`.
    Cyclic,
    /// A fresh uniform permutation of the samples every `M` picks.
    Shuffle { seed: u64 },
}

/// Sample selection rule shared by all agents. Indices are 0-based.
#[derive(Debug, Clone)]
pub struct Schedule {
    kind: ScheduleKind,
    n_samples: usize,
    block: Option<u64>,
    perm: Vec<usize>,
}

impl Schedule {
    pub fn new(kind: ScheduleKind, n_samples: usize) -> Result<Self> {
        if n_samples == 0 {
            return Err(Error::Parameter(
                "schedule needs at least one sample".into(),
            ));
        }
        Ok(Self {
            kind,
            n_samples,
            block: None,
            perm: Vec::new(),
        })
    }

    pub fn cyclic(n_samples: usize) -> Result<Self> {
        Self::new(ScheduleKind::Cyclic, n_samples)
    }

    pub fn shuffle(n_samples: usize, seed: u64) -> Result<Self> {
        Self::new(ScheduleKind::Shuffle { seed }, n_samples)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    /// Sample index picked at iteration `t >= 1`.
    pub fn next_index(&mut self, t: u64) -> usize {
        assert!(t >= 1, "iterations are numbered from 1");
        let m = self.n_samples as u64;
        let pos = ((t - 1) % m) as usize;
        match self.kind {
            ScheduleKind::Cyclic => pos,
            ScheduleKind::Shuffle { seed } => {
                let block = (t - 1) / m;
                if self.block != Some(block) {
                    self.perm = block_permutation(seed, block, self.n_samples);
                    self.block = Some(block);
                }
                self.perm[pos]
            }
        }
    }
}

/// Permutation used by shuffle block `block`; each block draws from its own
/// ChaCha stream so any block can be regenerated independently.
fn block_permutation(seed: u64, block: u64, m: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block);
    let mut perm: Vec<usize> = (0..m).collect();
    perm.shuffle(&mut rng);
    perm
}

/// Complete state of PD-DistIAG after `t - 1` finished iterations.
///
/// `theta`, `w` hold the iterates `theta_i^t`, `w_i^t` about to be used at
/// iteration `t`. The surrogates and tables reflect the last finished
/// iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverState {
    /// Index of the next iteration (starts at 1).
    pub t: u64,
    pub theta: Vec<Vector>,
    pub w: Vec<Vector>,
    pub s: Vec<Vector>,
    pub dvec: Vec<Vector>,
    /// Last iteration at which each sample was picked, 0 if never.
    pub tau: Vec<u64>,
    /// `[agent][sample]` last evaluated `grad_theta J_{i,p}`.
    pub grad_table_theta: Vec<Vec<Vector>>,
    /// `[agent][sample]` last evaluated `grad_w J_{i,p}`.
    pub grad_table_w: Vec<Vec<Vector>>,
    pub gamma1: f64,
    pub gamma2: f64,
}

/// Dual step size: explicit, or `beta * gamma1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DualStep {
    Fixed(f64),
    AutoBeta,
}

pub fn init_state(
    moments: &Moments,
    mixing: &MixingMatrix,
    gamma1: f64,
    gamma2: DualStep,
    init_theta: Option<&[Vector]>,
    init_w: Option<&[Vector]>,
) -> Result<SolverState> {
    let (n, m, d) = (moments.n_agents(), moments.n_samples(), moments.dim());
    if m == 0 {
        return Err(Error::Parameter("moments carry no samples".into()));
    }
    if mixing.n_agents() != n {
        return Err(Error::Dimension(format!(
            "mixing matrix has {} agents, moments have {n}",
            mixing.n_agents()
        )));
    }
    if gamma1 < 0.0 || !gamma1.is_finite() {
        return Err(Error::Parameter(format!(
            "gamma1 must be nonnegative, got {gamma1}"
        )));
    }
    let gamma2 = match gamma2 {
        DualStep::Fixed(g) if g >= 0.0 && g.is_finite() => g,
        DualStep::Fixed(g) => {
            return Err(Error::Parameter(format!(
                "gamma2 must be nonnegative, got {g}"
            )))
        }
        DualStep::AutoBeta => moments.beta() * gamma1,
    };
    let copy_init = |init: Option<&[Vector]>, name: &str| -> Result<Vec<Vector>> {
        match init {
            None => Ok(vec![Vector::zeros(d); n]),
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != d) {
                    return Err(Error::Dimension(format!(
                        "{name} must be {n} vectors of length {d}"
                    )));
                }
                Ok(rows.to_vec())
            }
        }
    };
    let zeros = vec![Vector::zeros(d); n];
    Ok(SolverState {
        t: 1,
        theta: copy_init(init_theta, "init_theta")?,
        w: copy_init(init_w, "init_w")?,
        s: zeros.clone(),
        dvec: zeros,
        tau: vec![0; m],
        grad_table_theta: vec![vec![Vector::zeros(d); m]; n],
        grad_table_w: vec![vec![Vector::zeros(d); m]; n],
        gamma1,
        gamma2,
    })
}

impl SolverState {
    pub fn n_agents(&self) -> usize {
        self.theta.len()
    }

    pub fn n_samples(&self) -> usize {
        self.tau.len()
    }

    pub fn dim(&self) -> usize {
        self.theta[0].len()
    }

    pub fn theta_mean(&self) -> Vector {
        crate::linalg::mean_of(&self.theta)
    }

    /// `(1/NM) sum_i sum_p grad_table_theta[i][p]`.
    pub fn table_average_theta(&self) -> Vector {
        let mut acc = Vector::zeros(self.dim());
        for row in &self.grad_table_theta {
            for g in row {
                acc += g;
            }
        }
        acc / (self.n_agents() * self.n_samples()) as f64
    }

    /// `(1/M) sum_p grad_table_w[i][p]`.
    pub fn table_average_w(&self, agent: usize) -> Vector {
        let mut acc = Vector::zeros(self.dim());
        for g in &self.grad_table_w[agent] {
            acc += g;
        }
        acc / self.n_samples() as f64
    }

    /// First half of iteration `t`: record `tau_p = t`, refresh the tables
    /// at `p` with gradients at the current iterates and update `s`, `d`.
    pub fn update_surrogates(&mut self, moments: &Moments, mixing: &MixingMatrix, p: usize) {
        let (n, d) = (self.n_agents(), self.dim());
        let inv_m = 1.0 / self.n_samples() as f64;
        self.tau[p] = self.t;
        let mut mixed = vec![Vector::zeros(d); n];
        mixing.mix_into(&self.s, &mut mixed);
        let mut g_theta = Vector::zeros(d);
        let mut g_w = Vector::zeros(d);
        #[allow(clippy::needless_range_loop)]
        for i in 0..n {
            moments.grad_theta_into(p, &self.theta[i], &self.w[i], &mut g_theta);
            moments.grad_w_into(p, i, &self.theta[i], &self.w[i], &mut g_w);

            let s_i = &mut mixed[i];
            s_i.axpy(inv_m, &g_theta, 1.0);
            s_i.axpy(-inv_m, &self.grad_table_theta[i][p], 1.0);
            self.dvec[i].axpy(inv_m, &g_w, 1.0);
            self.dvec[i].axpy(-inv_m, &self.grad_table_w[i][p], 1.0);

            self.grad_table_theta[i][p].copy_from(&g_theta);
            self.grad_table_w[i][p].copy_from(&g_w);
        }
        self.s = mixed;
    }

    /// Second half of iteration `t`: consensus step on `theta` with the
    /// primal surrogate, ascent step on `w` with the dual surrogate.
    pub fn primal_dual_update(&mut self, mixing: &MixingMatrix) -> Result<()> {
        let mut next = self.theta.clone();
        mixing.mix_into(&self.theta, &mut next);
        for (i, th) in next.iter_mut().enumerate() {
            th.axpy(-self.gamma1, &self.s[i], 1.0);
            self.w[i].axpy(self.gamma2, &self.dvec[i], 1.0);
        }
        self.theta = next;
        let t = self.t;
        self.t += 1;
        for (i, (th, w)) in self.theta.iter().zip(&self.w).enumerate() {
            if !all_finite(th) || !all_finite(w) {
                return Err(Error::Divergence {
                    iter: t,
                    detail: format!(
                        "agent {i} has non-finite iterates (gamma1 = {})",
                        self.gamma1
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// One full iteration; returns the sample index that was used.
pub fn step(
    state: &mut SolverState,
    moments: &Moments,
    mixing: &MixingMatrix,
    schedule: &mut Schedule,
) -> Result<usize> {
    let p = schedule.next_index(state.t);
    state.update_surrogates(moments, mixing, p);
    state.primal_dual_update(mixing)?;
    Ok(p)
}

/// Excess MSPBE over the minimizer, `f(theta) - f(theta*)`, evaluated as the
/// exact quadratic `(theta - theta*)' H (theta - theta*) / 2` so that small
/// gaps do not suffer cancellation.
#[derive(Debug, Clone)]
pub struct GapOracle {
    hessian: Matrix,
    theta_star: Vector,
}

impl GapOracle {
    pub fn new(moments: &Moments, oracle: &SaddlePoint) -> Self {
        Self {
            hessian: moments.mspbe_hessian(),
            theta_star: oracle.theta.clone(),
        }
    }

    pub fn gap(&self, theta: &Vector) -> f64 {
        let delta = theta - &self.theta_star;
        0.5 * delta.dot(&(&self.hessian * &delta))
    }

    pub fn mean_gap(&self, thetas: &[Vector]) -> f64 {
        thetas.iter().map(|th| self.gap(th)).sum::<f64>() / thetas.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// `t / M`.
    pub epoch: f64,
    pub iter: u64,
    pub mspbe_gap: f64,
    pub consensus_err: f64,
    pub tracking_err: f64,
    pub v_norm: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub method: String,
    pub records: Vec<TraceRecord>,
}

impl RunTrace {
    pub fn new(method: &str) -> Self {
        Self {
            method: method.to_string(),
            records: Vec::new(),
        }
    }

    pub fn last(&self) -> Option<&TraceRecord> {
        self.records.last()
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.mspbe_gap).collect()
    }

    /// First epoch whose gap falls below `tol`.
    pub fn epochs_to(&self, tol: f64) -> Option<f64> {
        self.records
            .iter()
            .find(|r| r.mspbe_gap < tol)
            .map(|r| r.epoch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub iterations: u64,
    /// Record every `record_every`-th iteration (and always the last one).
    pub record_every: u64,
    /// Fill `wall_ms`; off by default so traces are byte-reproducible.
    pub wall_clock: bool,
    /// Stop early once the averaged gap drops below this value.
    pub stop_below: Option<f64>,
}

impl RunOptions {
    pub fn iterations(iterations: u64) -> Self {
        Self {
            iterations,
            record_every: 1,
            wall_clock: false,
            stop_below: None,
        }
    }
}

/// Runs `iterations` steps, recording the gap, Lyapunov quantities and the
/// distance to the oracle at each iteration `t` between the surrogate update
/// and the primal-dual update, so all quantities refer to the same `t`.
pub fn run(
    state: &mut SolverState,
    moments: &Moments,
    mixing: &MixingMatrix,
    schedule: &mut Schedule,
    iterations: u64,
    oracle: &SaddlePoint,
) -> Result<RunTrace> {
    run_with(
        state,
        moments,
        mixing,
        schedule,
        oracle,
        &RunOptions::iterations(iterations),
    )
}

pub fn run_with(
    state: &mut SolverState,
    moments: &Moments,
    mixing: &MixingMatrix,
    schedule: &mut Schedule,
    oracle: &SaddlePoint,
    opts: &RunOptions,
) -> Result<RunTrace> {
    if opts.iterations == 0 {
        return Err(Error::Parameter("need at least one iteration".into()));
    }
    if schedule.n_samples() != state.n_samples() {
        return Err(Error::Dimension("schedule and state disagree on M".into()));
    }
    let gap = GapOracle::new(moments, oracle);
    let every = opts.record_every.max(1);
    let m = state.n_samples() as f64;
    let start = Instant::now();
    let mut trace = RunTrace::new("pd-distiag");
    for k in 0..opts.iterations {
        let p = schedule.next_index(state.t);
        state.update_surrogates(moments, mixing, p);
        let last = k + 1 == opts.iterations;
        if (k + 1) % every == 0 || last {
            let mspbe_gap = gap.mean_gap(&state.theta);
            if !mspbe_gap.is_finite() {
                return Err(Error::Divergence {
                    iter: state.t,
                    detail: "MSPBE gap overflowed".into(),
                });
            }
            let ly = lyapunov(state, oracle);
            trace.records.push(TraceRecord {
                epoch: state.t as f64 / m,
                iter: state.t,
                mspbe_gap,
                consensus_err: ly.e_c,
                tracking_err: ly.e_g,
                v_norm: ly.v_norm,
                wall_ms: if opts.wall_clock {
                    start.elapsed().as_secs_f64() * 1e3
                } else {
                    0.0
                },
            });
            if opts.stop_below.is_some_and(|tol| mspbe_gap < tol) {
                state.primal_dual_update(mixing)?;
                break;
            }
        }
        state.primal_dual_update(mixing)?;
    }
    Ok(trace)
}
