//! Centralized reference methods: full-batch primal-dual gradient (PDBG),
//! GTD2 and primal-dual SAGA. All of them work with the network-wide reward.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{all_finite, Vector};
use crate::moments::{Moments, SaddlePoint};
use crate::solver::{GapOracle, RunTrace, Schedule, TraceRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SagaTables {
    pub grad_theta: Vec<Vector>,
    pub grad_w: Vec<Vector>,
    pub sum_theta: Vector,
    pub sum_w: Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentralState {
    pub theta: Vector,
    pub w: Vector,
    pub saga: Option<SagaTables>,
}

impl CentralState {
    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: Vector::zeros(dim),
            w: Vector::zeros(dim),
            saga: None,
        }
    }

    /// Starting point with SAGA tables filled by gradients at `(theta, w)`.
    pub fn with_saga(moments: &Moments, theta: Vector, w: Vector) -> Self {
        let d = moments.dim();
        let m = moments.n_samples();
        let mut grad_theta = Vec::with_capacity(m);
        let mut grad_w = Vec::with_capacity(m);
        let mut sum_theta = Vector::zeros(d);
        let mut sum_w = Vector::zeros(d);
        let mut gw = Vector::zeros(d);
        for p in 0..m {
            let gt = moments.grad_theta(p, &theta, &w);
            moments.grad_w_central_into(p, &theta, &w, &mut gw);
            sum_theta += &gt;
            sum_w += &gw;
            grad_theta.push(gt);
            grad_w.push(gw.clone());
        }
        Self {
            theta,
            w,
            saga: Some(SagaTables {
                grad_theta,
                grad_w,
                sum_theta,
                sum_w,
            }),
        }
    }

    fn check_finite(&self, iter: u64) -> Result<()> {
        if all_finite(&self.theta) && all_finite(&self.w) {
            Ok(())
        } else {
            Err(Error::Divergence {
                iter,
                detail: "non-finite centralized iterate".into(),
            })
        }
    }
}

/// `theta <- theta - g1 (rho theta + A' w)`, `w <- w + g2 (A theta - C w - b)`,
/// both gradients evaluated at the current point.
pub fn pdbg_step(state: &mut CentralState, moments: &Moments, gamma1: f64, gamma2: f64) {
    let g_theta = moments.rho() * &state.theta + moments.a_hat().tr_mul(&state.w);
    let g_w = moments.a_hat() * &state.theta - moments.c_hat() * &state.w - moments.b_hat_global();
    state.theta.axpy(-gamma1, &g_theta, 1.0);
    state.w.axpy(gamma2, &g_w, 1.0);
}

/// One GTD2 update on sample `p` with TD error `delta = r - psi' theta`:
/// `w <- w + beta_step (delta - phi' w) phi`,
/// `theta <- theta + alpha psi (phi' w)` using the pre-update `w`.
pub fn gtd2_step(
    state: &mut CentralState,
    moments: &Moments,
    p: usize,
    alpha: f64,
    beta_step: f64,
) {
    let phi = moments.phi(p);
    let psi = moments.psi(p);
    let phi_w = phi.dot(&state.w);
    let delta = moments.mean_reward(p) - psi.dot(&state.theta);
    state.w.axpy(beta_step * (delta - phi_w), phi, 1.0);
    state.theta.axpy(alpha * phi_w, psi, 1.0);
}

/// Primal-dual SAGA update on sample `p`: the direction is the fresh
/// per-sample gradient minus its stored value plus the table average.
pub fn saga_step(
    state: &mut CentralState,
    moments: &Moments,
    p: usize,
    gamma1: f64,
    gamma2: f64,
) -> Result<()> {
    let m = moments.n_samples() as f64;
    let tables = state
        .saga
        .as_mut()
        .ok_or_else(|| Error::Parameter("SAGA step on a state without tables".into()))?;
    let new_theta = moments.grad_theta(p, &state.theta, &state.w);
    let mut new_w = Vector::zeros(moments.dim());
    moments.grad_w_central_into(p, &state.theta, &state.w, &mut new_w);

    let mut dir_theta = &new_theta - &tables.grad_theta[p];
    dir_theta.axpy(1.0 / m, &tables.sum_theta, 1.0);
    let mut dir_w = &new_w - &tables.grad_w[p];
    dir_w.axpy(1.0 / m, &tables.sum_w, 1.0);

    tables.sum_theta += &new_theta - &tables.grad_theta[p];
    tables.sum_w += &new_w - &tables.grad_w[p];
    tables.grad_theta[p] = new_theta;
    tables.grad_w[p] = new_w;

    state.theta.axpy(-gamma1, &dir_theta, 1.0);
    state.w.axpy(gamma2, &dir_w, 1.0);
    Ok(())
}

/// Records `f(theta) - f(theta*)` and the centralized distance
/// `|theta - theta*|^2 + |w - w_bar*|^2 / beta`.
struct Recorder {
    gap: GapOracle,
    theta_star: Vector,
    w_star: Vector,
    beta: f64,
    wall_clock: bool,
    start: Instant,
    trace: RunTrace,
}

impl Recorder {
    fn new(method: &str, moments: &Moments, oracle: &SaddlePoint, wall_clock: bool) -> Self {
        Self {
            gap: GapOracle::new(moments, oracle),
            theta_star: oracle.theta.clone(),
            w_star: oracle.w_mean(),
            beta: oracle.beta,
            wall_clock,
            start: Instant::now(),
            trace: RunTrace::new(method),
        }
    }

    fn record(&mut self, iter: u64, epoch: f64, theta: &Vector, w: &Vector) -> Result<f64> {
        let mspbe_gap = self.gap.gap(theta);
        if !mspbe_gap.is_finite() {
            return Err(Error::Divergence {
                iter,
                detail: format!("{} MSPBE gap overflowed", self.trace.method),
            });
        }
        let v_norm = (theta - &self.theta_star).norm_squared()
            + (w - &self.w_star).norm_squared() / self.beta;
        self.trace.records.push(TraceRecord {
            epoch,
            iter,
            mspbe_gap,
            consensus_err: 0.0,
            tracking_err: 0.0,
            v_norm,
            wall_ms: if self.wall_clock {
                self.start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
        Ok(mspbe_gap)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineOptions {
    /// Number of epochs; one epoch is one PDBG step or `M` incremental steps.
    pub epochs: u64,
    /// Record every `record_every`-th epoch (and always the last one).
    pub record_every: u64,
    pub wall_clock: bool,
    pub stop_below: Option<f64>,
}

impl BaselineOptions {
    pub fn epochs(epochs: u64) -> Self {
        Self {
            epochs,
            record_every: 1,
            wall_clock: false,
            stop_below: None,
        }
    }

    fn records(&self, epoch: u64) -> bool {
        epoch == self.epochs || epoch.is_multiple_of(self.record_every.max(1))
    }

    fn stops(&self, gap: f64) -> bool {
        self.stop_below.is_some_and(|tol| gap < tol)
    }
}

/// PDBG from `state`, one full-batch step per epoch.
pub fn run_pdbg(
    state: &mut CentralState,
    moments: &Moments,
    oracle: &SaddlePoint,
    gamma1: f64,
    gamma2: f64,
    opts: &BaselineOptions,
) -> Result<RunTrace> {
    let mut rec = Recorder::new("pdbg", moments, oracle, opts.wall_clock);
    for k in 1..=opts.epochs {
        pdbg_step(state, moments, gamma1, gamma2);
        if opts.records(k) {
            state.check_finite(k)?;
            if opts.stops(rec.record(k, k as f64, &state.theta, &state.w)?) {
                break;
            }
        }
    }
    Ok(rec.trace)
}

/// SAGA from `state`, which must carry tables (see [`CentralState::with_saga`]).
pub fn run_saga(
    state: &mut CentralState,
    moments: &Moments,
    oracle: &SaddlePoint,
    schedule: &mut Schedule,
    gamma1: f64,
    gamma2: f64,
    opts: &BaselineOptions,
) -> Result<RunTrace> {
    let m = moments.n_samples() as u64;
    let mut rec = Recorder::new("saga", moments, oracle, opts.wall_clock);
    for k in 1..=opts.epochs {
        for t in (k - 1) * m + 1..=k * m {
            saga_step(state, moments, schedule.next_index(t), gamma1, gamma2)?;
        }
        if opts.records(k) {
            state.check_finite(k * m)?;
            if opts.stops(rec.record(k * m, k as f64, &state.theta, &state.w)?) {
                break;
            }
        }
    }
    Ok(rec.trace)
}

/// GTD2 step sizes. Both decay as `1 / (1 + k / decay_epochs)` in the epoch
/// index `k`; `decay_epochs = None` keeps them constant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gtd2Steps {
    pub alpha: f64,
    pub beta_step: f64,
    pub decay_epochs: Option<f64>,
}

impl Gtd2Steps {
    /// `alpha = 0.005 / lambda_max(A)`, `beta_step = 5e-3`, constant.
    pub fn default_for(moments: &Moments) -> Self {
        Self {
            alpha: 0.005 / crate::linalg::spectral_radius(moments.a_hat()),
            beta_step: 5e-3,
            decay_epochs: None,
        }
    }

    fn scale(&self, epoch: u64) -> f64 {
        match self.decay_epochs {
            Some(k0) => 1.0 / (1.0 + epoch as f64 / k0),
            None => 1.0,
        }
    }
}

/// GTD2 from `state`. Its auxiliary vector estimates `-w` of the saddle
/// point, so the recorded distance uses the flipped sign.
pub fn run_gtd2(
    state: &mut CentralState,
    moments: &Moments,
    oracle: &SaddlePoint,
    schedule: &mut Schedule,
    steps: &Gtd2Steps,
    opts: &BaselineOptions,
) -> Result<RunTrace> {
    let m = moments.n_samples() as u64;
    let mut rec = Recorder::new("gtd2", moments, oracle, opts.wall_clock);
    for k in 1..=opts.epochs {
        let s = steps.scale(k - 1);
        for t in (k - 1) * m + 1..=k * m {
            gtd2_step(
                state,
                moments,
                schedule.next_index(t),
                steps.alpha * s,
                steps.beta_step * s,
            );
        }
        if opts.records(k) {
            state.check_finite(k * m)?;
            if opts.stops(rec.record(k * m, k as f64, &state.theta, &-&state.w)?) {
                break;
            }
        }
    }
    Ok(rec.trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{desk_moments, stable_gamma1};

    #[test]
    fn pdbg_fixed_point() {
        let mo = desk_moments(1, 3, 20, 4, 0.1);
        let sp = mo.solve_saddle_point(mo.beta()).unwrap();
        let mut st = CentralState {
            theta: sp.theta.clone(),
            w: sp.w_mean(),
            saga: None,
        };
        pdbg_step(&mut st, &mo, 0.1, 0.5);
        assert!((&st.theta - &sp.theta).amax() < 1e-10);
        assert!((&st.w - sp.w_mean()).amax() < 1e-10);
    }

    #[test]
    fn pdbg_from_zero() {
        let mo = desk_moments(2, 2, 10, 3, 0.1);
        let mut st = CentralState::zeros(3);
        pdbg_step(&mut st, &mo, 0.1, 0.3);
        assert!(st.theta.iter().all(|&x| x == 0.0));
        assert!((&st.w + 0.3 * mo.b_hat_global()).amax() < 1e-15);
    }

    #[test]
    fn gtd2_on_a_zero_feature_sample_is_a_no_op() {
        let mut f = crate::linalg::Matrix::from_fn(8, 2, |p, k| ((p * 3 + k * 5) % 7) as f64 - 3.0);
        f.row_mut(0).fill(0.0);
        let r = crate::linalg::Matrix::from_fn(7, 2, |p, i| (p + i) as f64);
        let samples = crate::env::SampleSet::from_parts(f, r).unwrap();
        let mo = crate::moments::build_moments(&samples, 0.9, 0.0).unwrap();
        let mut st = CentralState {
            theta: Vector::from_vec(vec![0.4, -0.2]),
            w: Vector::from_vec(vec![1.0, 2.0]),
            saga: None,
        };
        let before = st.clone();
        gtd2_step(&mut st, &mo, 0, 0.1, 0.1);
        assert_eq!(st, before);
    }

    #[test]
    fn saga_with_one_sample_is_pdbg() {
        let mo = desk_moments(4, 2, 1, 1, 0.1);
        let mut a = CentralState::with_saga(&mo, Vector::zeros(1), Vector::zeros(1));
        let mut b = CentralState::zeros(1);
        for _ in 0..200 {
            saga_step(&mut a, &mo, 0, 0.05, 0.2).unwrap();
            pdbg_step(&mut b, &mo, 0.05, 0.2);
            assert!((&a.theta - &b.theta).amax() < 1e-14);
            assert!((&a.w - &b.w).amax() < 1e-14);
        }
    }

    #[test]
    fn saga_running_sums_do_not_drift() {
        let mo = desk_moments(5, 3, 25, 4, 0.1);
        let mut st = CentralState::with_saga(&mo, Vector::zeros(4), Vector::zeros(4));
        let mut sch = Schedule::shuffle(25, 9).unwrap();
        let g1 = stable_gamma1(&mo);
        for t in 1..=10_000 {
            saga_step(&mut st, &mo, sch.next_index(t), g1, mo.beta() * g1).unwrap();
        }
        let tables = st.saga.as_ref().unwrap();
        let direct: Vector = tables
            .grad_theta
            .iter()
            .fold(Vector::zeros(4), |acc, g| acc + g);
        let direct_w: Vector = tables
            .grad_w
            .iter()
            .fold(Vector::zeros(4), |acc, g| acc + g);
        assert!((direct - &tables.sum_theta).amax() / 25.0 < 1e-10);
        assert!((direct_w - &tables.sum_w).amax() / 25.0 < 1e-10);
    }

    #[test]
    fn pdbg_converges_linearly() {
        let mo = desk_moments(6, 3, 20, 4, 0.1);
        let sp = mo.solve_saddle_point(mo.beta()).unwrap();
        let g1 = stable_gamma1(&mo);
        let mut st = CentralState::zeros(4);
        let tr = run_pdbg(
            &mut st,
            &mo,
            &sp,
            g1,
            mo.beta() * g1,
            &BaselineOptions::epochs(10_000),
        )
        .unwrap();
        let fit = crate::diagnostics::fit_linear_rate(&tr, 0).unwrap();
        assert!(fit.slope < 0.0);
        assert!(tr.last().unwrap().mspbe_gap < tr.records[0].mspbe_gap);
    }

    #[test]
    fn pdbg_limit_is_the_saddle_point() {
        let mo = desk_moments(8, 3, 30, 4, 0.1);
        let sp = mo.solve_saddle_point(mo.beta()).unwrap();
        let g1 = stable_gamma1(&mo);
        let mut opts = BaselineOptions::epochs(1_000_000);
        opts.record_every = 100_000;
        let mut st = CentralState::zeros(4);
        let tr = run_pdbg(&mut st, &mo, &sp, g1, mo.beta() * g1, &opts).unwrap();
        assert_eq!(tr.records.len(), 10);
        assert!((&st.theta - &sp.theta).norm() < 1e-6);
        assert!((&st.theta - mo.closed_form_theta().unwrap()).norm() < 1e-6);
    }

    #[test]
    fn saga_needs_tables() {
        let mo = desk_moments(9, 2, 5, 2, 0.1);
        let sp = mo.solve_saddle_point(mo.beta()).unwrap();
        let mut st = CentralState::zeros(2);
        let r = run_saga(
            &mut st,
            &mo,
            &sp,
            &mut Schedule::cyclic(5).unwrap(),
            0.01,
            0.01,
            &BaselineOptions::epochs(1),
        );
        assert!(matches!(r, Err(Error::Parameter(_))));
    }

    #[test]
    fn gtd2_is_deterministic() {
        let mo = desk_moments(7, 2, 15, 3, 0.0);
        let sp = mo.solve_saddle_point(mo.beta()).unwrap();
        let steps = Gtd2Steps::default_for(&mo);
        let opts = BaselineOptions::epochs(30);
        let (mut sa, mut sb) = (CentralState::zeros(3), CentralState::zeros(3));
        let a = run_gtd2(
            &mut sa,
            &mo,
            &sp,
            &mut Schedule::shuffle(15, 4).unwrap(),
            &steps,
            &opts,
        )
        .unwrap();
        let b = run_gtd2(
            &mut sb,
            &mo,
            &sp,
            &mut Schedule::shuffle(15, 4).unwrap(),
            &steps,
            &opts,
        )
        .unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }
}
