//! Sampled moment matrices, the empirical MSPBE and its per-agent split,
//! the primal-dual objective `J_{i,p}`, and the closed-form saddle point.
//!
//! `J_{i,p}(theta, w) = w' A_p theta - b_{p,i}' w - w' C_p w / 2 + rho |theta|^2 / 2`.
//! Its saddle point minimizes `|A theta - b|^2_{C^-1} / 2 + rho |theta|^2 / 2`,
//! which is the MSPBE evaluated here.

use nalgebra::Cholesky;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{stationary_distribution, Policy, SampleSet, TabularMdp};
use crate::error::{Error, Result};
use crate::linalg::{singular_ratio, sym_extremes, Matrix, Vector};

/// Relative singular-value threshold below which `C` or `A` counts as singular.
pub const RANK_TOL: f64 = 1e-10;

/// Linear features: row `s` of `table` is `phi(s)'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    table: Matrix,
}

impl FeatureMap {
    pub fn new(table: Matrix) -> Result<Self> {
        if table.ncols() == 0 || table.nrows() == 0 {
            return Err(Error::Parameter("feature table must be non-empty".into()));
        }
        if table.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parameter(
                "feature table has non-finite entries".into(),
            ));
        }
        Ok(Self { table })
    }

    /// Gaussian features scaled by `1/sqrt(d)`.
    pub fn random(seed: u64, n_states: usize, dim: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let table = Matrix::from_fn(n_states, dim, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * scale
        });
        Self { table }
    }

    pub fn one_hot(n_states: usize) -> Self {
        Self {
            table: Matrix::identity(n_states, n_states),
        }
    }

    pub fn n_states(&self) -> usize {
        self.table.nrows()
    }

    pub fn dim(&self) -> usize {
        self.table.ncols()
    }

    pub fn table(&self) -> &Matrix {
        &self.table
    }

    pub fn phi(&self, state: usize) -> Vector {
        self.table.row(state).transpose()
    }
}

/// Per-sample and averaged moments of a trajectory.
///
/// Every `A_p = phi_p psi_p'` with `psi_p = phi_p - gamma phi_{p+1}` and every
/// `C_p = phi_p phi_p'` is rank one, so only the factors are kept; the
/// matrices are materialized on demand by [`Moments::a_p`] and [`Moments::c_p`].
#[derive(Debug, Clone)]
pub struct Moments {
    n_samples: usize,
    n_agents: usize,
    dim: usize,
    discount: f64,
    rho: f64,
    phi: Vec<Vector>,
    psi: Vec<Vector>,
    /// `M x N` private rewards.
    rewards: Matrix,
    /// Row means of `rewards`.
    mean_rewards: Vec<f64>,
    a_hat: Matrix,
    c_hat: Matrix,
    b_hat: Vec<Vector>,
    b_hat_global: Vector,
    c_chol: Cholesky<f64, nalgebra::Dyn>,
}

/// Exact population moments of a tabular MDP under a policy.
#[derive(Debug, Clone)]
pub struct PopulationMoments {
    pub a: Matrix,
    pub c: Matrix,
    pub b: Vector,
    pub stationary: Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub theta: Vector,
    pub w: Vec<Vector>,
    pub beta: f64,
}

impl SaddlePoint {
    /// Dual solution of the centralized problem (the agents' average).
    pub fn w_mean(&self) -> Vector {
        crate::linalg::mean_of(&self.w)
    }
}

pub fn build_moments(samples: &SampleSet, discount: f64, rho: f64) -> Result<Moments> {
    samples.validate()?;
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::Parameter(format!(
            "discount must lie in [0,1), got {discount}"
        )));
    }
    if rho < 0.0 || !rho.is_finite() {
        return Err(Error::Parameter(format!(
            "rho must be finite and >= 0, got {rho}"
        )));
    }
    let m = samples.n_samples();
    let n = samples.n_agents();
    let d = samples.dim();
    let feat = &samples.features;

    let phi: Vec<Vector> = (0..=m).map(|p| feat.row(p).transpose()).collect();
    let psi: Vec<Vector> = (0..m).map(|p| &phi[p] - discount * &phi[p + 1]).collect();
    let mut phi = phi;
    phi.truncate(m);

    let mut a_hat = Matrix::zeros(d, d);
    let mut c_hat = Matrix::zeros(d, d);
    let mut b_hat = vec![Vector::zeros(d); n];
    for p in 0..m {
        a_hat.ger(1.0, &phi[p], &psi[p], 1.0);
        c_hat.ger(1.0, &phi[p], &phi[p], 1.0);
        for (i, bi) in b_hat.iter_mut().enumerate() {
            bi.axpy(samples.local_rewards[(p, i)], &phi[p], 1.0);
        }
    }
    let inv_m = 1.0 / m as f64;
    a_hat *= inv_m;
    c_hat *= inv_m;
    for bi in b_hat.iter_mut() {
        *bi *= inv_m;
    }
    let mean_rewards = (0..m)
        .map(|p| samples.local_rewards.row(p).sum() / n as f64)
        .collect();

    Moments::assemble(
        m,
        n,
        d,
        discount,
        rho,
        phi,
        psi,
        samples.local_rewards.clone(),
        mean_rewards,
        a_hat,
        c_hat,
        b_hat,
    )
}

impl Moments {
    #[allow(clippy::too_many_arguments)]
    fn assemble(
        n_samples: usize,
        n_agents: usize,
        dim: usize,
        discount: f64,
        rho: f64,
        phi: Vec<Vector>,
        psi: Vec<Vector>,
        rewards: Matrix,
        mean_rewards: Vec<f64>,
        a_hat: Matrix,
        c_hat: Matrix,
        b_hat: Vec<Vector>,
    ) -> Result<Self> {
        let c_ratio = singular_ratio(&c_hat);
        if c_ratio < RANK_TOL {
            return Err(Error::RankDeficient(format!(
                "sampled covariance C is singular (sigma_min/sigma_max = {c_ratio:e})"
            )));
        }
        let a_ratio = singular_ratio(&a_hat);
        if a_ratio < RANK_TOL {
            return Err(Error::RankDeficient(format!(
                "sampled correlation A is rank deficient (sigma_min/sigma_max = {a_ratio:e})"
            )));
        }
        let c_chol = Cholesky::new(c_hat.clone()).ok_or_else(|| {
            Error::RankDeficient("sampled covariance C is not positive definite".into())
        })?;
        let b_hat_global = crate::linalg::mean_of(&b_hat);
        Ok(Self {
            n_samples,
            n_agents,
            dim,
            discount,
            rho,
            phi,
            psi,
            rewards,
            mean_rewards,
            a_hat,
            c_hat,
            b_hat,
            b_hat_global,
            c_chol,
        })
    }

    /// Moments carrying only the averaged quantities (`M = 0`). Useful for
    /// evaluating the MSPBE and the saddle point of a hand-built problem;
    /// the incremental solvers reject it.
    pub fn from_aggregates(
        a_hat: Matrix,
        c_hat: Matrix,
        b_hat: Vec<Vector>,
        rho: f64,
    ) -> Result<Self> {
        let d = a_hat.nrows();
        if !a_hat.is_square() || c_hat.shape() != (d, d) || b_hat.is_empty() {
            return Err(Error::Dimension(
                "aggregates must be d x d, d x d and N >= 1 vectors".into(),
            ));
        }
        if b_hat.iter().any(|b| b.len() != d) {
            return Err(Error::Dimension("every b_i must have length d".into()));
        }
        let n = b_hat.len();
        Self::assemble(
            0,
            n,
            d,
            0.0,
            rho,
            vec![],
            vec![],
            Matrix::zeros(0, n),
            vec![],
            a_hat,
            c_hat,
            b_hat,
        )
    }

    /// Rebuilds moments from stored per-sample factors and aggregates.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_stored(
        discount: f64,
        rho: f64,
        phi: Vec<Vector>,
        psi: Vec<Vector>,
        rewards: Matrix,
        a_hat: Matrix,
        c_hat: Matrix,
        b_hat: Vec<Vector>,
    ) -> Result<Self> {
        let (m, n, d) = (phi.len(), b_hat.len(), a_hat.nrows());
        if psi.len() != m || rewards.shape() != (m, n) || n == 0 {
            return Err(Error::Dimension(
                "stored moments have inconsistent sample counts".into(),
            ));
        }
        if phi.iter().chain(&psi).chain(&b_hat).any(|v| v.len() != d)
            || c_hat.shape() != (d, d)
            || !a_hat.is_square()
        {
            return Err(Error::Dimension(
                "stored moments have inconsistent feature dimensions".into(),
            ));
        }
        let mean_rewards = (0..m).map(|p| rewards.row(p).sum() / n as f64).collect();
        Self::assemble(
            m,
            n,
            d,
            discount,
            rho,
            phi,
            psi,
            rewards,
            mean_rewards,
            a_hat,
            c_hat,
            b_hat,
        )
    }

    /// Same samples, different regularization.
    pub fn with_rho(&self, rho: f64) -> Self {
        Self {
            rho,
            ..self.clone()
        }
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn a_hat(&self) -> &Matrix {
        &self.a_hat
    }

    pub fn c_hat(&self) -> &Matrix {
        &self.c_hat
    }

    pub fn b_hat(&self, agent: usize) -> &Vector {
        &self.b_hat[agent]
    }

    pub fn b_hat_global(&self) -> &Vector {
        &self.b_hat_global
    }

    pub fn phi(&self, p: usize) -> &Vector {
        &self.phi[p]
    }

    /// `phi_p - gamma phi_{p+1}`.
    pub fn psi(&self, p: usize) -> &Vector {
        &self.psi[p]
    }

    pub fn reward(&self, p: usize, agent: usize) -> f64 {
        self.rewards[(p, agent)]
    }

    /// `R_c(s_p, a_p)` as seen by the agents: the mean of their private rewards.
    pub fn mean_reward(&self, p: usize) -> f64 {
        self.mean_rewards[p]
    }

    pub fn rewards(&self) -> &Matrix {
        &self.rewards
    }

    pub fn a_p(&self, p: usize) -> Matrix {
        &self.phi[p] * self.psi[p].transpose()
    }

    pub fn c_p(&self, p: usize) -> Matrix {
        &self.phi[p] * self.phi[p].transpose()
    }

    pub fn b_pi(&self, p: usize, agent: usize) -> Vector {
        &self.phi[p] * self.rewards[(p, agent)]
    }

    /// `b_p = R_c(s_p, a_p) phi_p`.
    pub fn b_p(&self, p: usize) -> Vector {
        &self.phi[p] * self.mean_rewards[p]
    }

    pub fn solve_c(&self, v: &Vector) -> Vector {
        self.c_chol.solve(v)
    }

    /// `A' C^-1 A`, symmetrized through the Cholesky factor.
    pub fn ata(&self) -> Matrix {
        let l = self.c_chol.l();
        let b = l
            .solve_lower_triangular(&self.a_hat)
            .expect("Cholesky factor is nonsingular");
        b.transpose() * b
    }

    fn check_theta(&self, theta: &Vector) -> Result<()> {
        if theta.len() != self.dim {
            return Err(Error::Dimension(format!(
                "theta has length {}, expected {}",
                theta.len(),
                self.dim
            )));
        }
        Ok(())
    }

    fn check_agent(&self, agent: usize) -> Result<()> {
        if agent >= self.n_agents {
            return Err(Error::Parameter(format!(
                "agent {agent} out of range (N = {})",
                self.n_agents
            )));
        }
        Ok(())
    }

    fn quad(&self, theta: &Vector, b: &Vector) -> f64 {
        let r = &self.a_hat * theta - b;
        0.5 * r.dot(&self.solve_c(&r)) + 0.5 * self.rho * theta.norm_squared()
    }

    /// Empirical MSPBE against the network-wide reward.
    pub fn mspbe(&self, theta: &Vector) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(self.quad(theta, &self.b_hat_global))
    }

    /// MSPBE with agent `i`'s private reward.
    pub fn mspbe_agent(&self, theta: &Vector, agent: usize) -> Result<f64> {
        self.check_theta(theta)?;
        self.check_agent(agent)?;
        Ok(self.quad(theta, &self.b_hat[agent]))
    }

    pub fn mspbe_gradient(&self, theta: &Vector) -> Result<Vector> {
        self.check_theta(theta)?;
        let r = &self.a_hat * theta - &self.b_hat_global;
        Ok(self.a_hat.tr_mul(&self.solve_c(&r)) + self.rho * theta)
    }

    pub fn mspbe_agent_gradient(&self, theta: &Vector, agent: usize) -> Result<Vector> {
        self.check_theta(theta)?;
        self.check_agent(agent)?;
        let r = &self.a_hat * theta - &self.b_hat[agent];
        Ok(self.a_hat.tr_mul(&self.solve_c(&r)) + self.rho * theta)
    }

    /// Hessian of the MSPBE, `A' C^-1 A + rho I`.
    pub fn mspbe_hessian(&self) -> Matrix {
        let mut h = self.ata();
        for k in 0..self.dim {
            h[(k, k)] += self.rho;
        }
        h
    }

    /// Closed-form maximizer of the concave inner problem of agent `i`,
    /// `w = C^-1 (A theta - b_i)`, and the resulting objective value
    /// `w'(A theta - b_i) - w' C w / 2 + rho |theta|^2 / 2`.
    pub fn fenchel_inner_max(&self, theta: &Vector, agent: usize) -> Result<(Vector, f64)> {
        self.check_theta(theta)?;
        self.check_agent(agent)?;
        let r = &self.a_hat * theta - &self.b_hat[agent];
        let w = self.solve_c(&r);
        let value =
            w.dot(&r) - 0.5 * w.dot(&(&self.c_hat * &w)) + 0.5 * self.rho * theta.norm_squared();
        Ok((w, value))
    }

    /// `J_{i,p}(theta, w)`.
    pub fn j_value(&self, p: usize, agent: usize, theta: &Vector, w: &Vector) -> f64 {
        let phi_w = self.phi[p].dot(w);
        phi_w * self.psi[p].dot(theta) - self.rewards[(p, agent)] * phi_w - 0.5 * phi_w * phi_w
            + 0.5 * self.rho * theta.norm_squared()
    }

    /// `grad_theta J_{i,p} = rho theta + A_p' w` (independent of the agent).
    pub fn grad_theta(&self, p: usize, theta: &Vector, w: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        self.grad_theta_into(p, theta, w, &mut out);
        out
    }

    pub fn grad_theta_into(&self, p: usize, theta: &Vector, w: &Vector, out: &mut Vector) {
        let phi_w = self.phi[p].dot(w);
        out.copy_from(theta);
        *out *= self.rho;
        out.axpy(phi_w, &self.psi[p], 1.0);
    }

    /// `grad_w J_{i,p} = A_p theta - C_p w - b_{p,i}`.
    pub fn grad_w(&self, p: usize, agent: usize, theta: &Vector, w: &Vector) -> Vector {
        let mut out = Vector::zeros(self.dim);
        self.grad_w_into(p, agent, theta, w, &mut out);
        out
    }

    pub fn grad_w_into(
        &self,
        p: usize,
        agent: usize,
        theta: &Vector,
        w: &Vector,
        out: &mut Vector,
    ) {
        let scale = self.psi[p].dot(theta) - self.phi[p].dot(w) - self.rewards[(p, agent)];
        out.copy_from(&self.phi[p]);
        *out *= scale;
    }

    /// Centralized per-sample gradient in `w`: `A_p theta - C_p w - b_p`.
    pub fn grad_w_central_into(&self, p: usize, theta: &Vector, w: &Vector, out: &mut Vector) {
        let scale = self.psi[p].dot(theta) - self.phi[p].dot(w) - self.mean_rewards[p];
        out.copy_from(&self.phi[p]);
        *out *= scale;
    }

    /// Step-size ratio `beta = 8 (rho + lambda_max(A' C^-1 A)) / lambda_min(C)`.
    pub fn beta(&self) -> f64 {
        let (_, ata_max) = sym_extremes(&self.ata());
        let (c_min, _) = sym_extremes(&self.c_hat);
        8.0 * (self.rho + ata_max) / c_min
    }

    /// The `(N+1)d` stationarity system `G v = rhs` whose solution stacks
    /// `theta*` and `w_i* / sqrt(beta N)`.
    pub fn stationarity_system(&self, beta: f64) -> (Matrix, Vector) {
        let (n, d) = (self.n_agents, self.dim);
        let dim = (n + 1) * d;
        let c = (beta / n as f64).sqrt();
        let mut g = Matrix::zeros(dim, dim);
        let mut rhs = Vector::zeros(dim);
        g.view_mut((0, 0), (d, d)).fill_diagonal(self.rho);
        let at = self.a_hat.transpose();
        for i in 0..n {
            let off = (i + 1) * d;
            g.view_mut((0, off), (d, d)).copy_from(&(&at * c));
            g.view_mut((off, 0), (d, d)).copy_from(&(&self.a_hat * -c));
            g.view_mut((off, off), (d, d))
                .copy_from(&(&self.c_hat * beta));
            rhs.rows_mut(off, d).copy_from(&(&self.b_hat[i] * -c));
        }
        (g, rhs)
    }

    /// Direct LU solve of the stationarity system.
    pub fn solve_saddle_point(&self, beta: f64) -> Result<SaddlePoint> {
        if beta <= 0.0 || !beta.is_finite() {
            return Err(Error::Parameter(format!(
                "beta must be positive, got {beta}"
            )));
        }
        let (n, d) = (self.n_agents, self.dim);
        let (g, rhs) = self.stationarity_system(beta);
        let v = g
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::RankDeficient("stationarity system is singular".into()))?;
        let residual = (&g * &v - &rhs).norm();
        if residual.is_nan() || residual >= 1e-8 * (1.0 + rhs.norm()) {
            return Err(Error::Numerical(format!(
                "saddle-point residual {residual:e}"
            )));
        }
        let scale = (beta * n as f64).sqrt();
        let theta = v.rows(0, d).into_owned();
        let w = (0..n).map(|i| v.rows((i + 1) * d, d) * scale).collect();
        Ok(SaddlePoint { theta, w, beta })
    }

    /// `theta* = (A' C^-1 A + rho I)^-1 A' C^-1 b`, solved independently of
    /// the stacked system.
    pub fn closed_form_theta(&self) -> Result<Vector> {
        let h = self.mspbe_hessian();
        let rhs = self.a_hat.tr_mul(&self.solve_c(&self.b_hat_global));
        h.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::RankDeficient("A' C^-1 A + rho I is singular".into()))
    }
}

/// Exact `A`, `C`, `b` under the stationary distribution of `policy`.
pub fn population_moments(
    mdp: &TabularMdp,
    policy: &Policy,
    features: &FeatureMap,
) -> Result<PopulationMoments> {
    if features.n_states() != mdp.n_states() {
        return Err(Error::Dimension(
            "feature map and MDP disagree on the state count".into(),
        ));
    }
    let mu = stationary_distribution(mdp, policy)?;
    let p = mdp.induced_transition(policy)?;
    let reward = mdp.policy_reward(policy)?;
    let phi = features.table();
    // row s of next_phi is sum_{s'} P_{s,s'} phi(s')'
    let next_phi = &p * phi;
    let d = features.dim();
    let mut a = Matrix::zeros(d, d);
    let mut c = Matrix::zeros(d, d);
    let mut b = Vector::zeros(d);
    for s in 0..mdp.n_states() {
        let f = phi.row(s).transpose();
        let psi = &f - mdp.discount() * next_phi.row(s).transpose();
        a.ger(mu[s], &f, &psi, 1.0);
        c.ger(mu[s], &f, &f, 1.0);
        b.axpy(mu[s] * reward[s], &f, 1.0);
    }
    Ok(PopulationMoments {
        a,
        c,
        b,
        stationary: mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_problem(rho: f64) -> Moments {
        let s2 = 2f64.sqrt();
        let features = Matrix::from_row_slice(3, 2, &[s2, 0.0, 0.0, s2, 0.3, -0.7]);
        let rewards = Matrix::from_row_slice(2, 1, &[s2, s2]);
        let samples = SampleSet::from_parts(features, rewards).unwrap();
        build_moments(&samples, 0.0, rho).unwrap()
    }

    #[test]
    fn single_sample_moments_by_hand() {
        let features = Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let rewards = Matrix::from_row_slice(1, 1, &[2.0]);
        let samples = SampleSet::from_parts(features, rewards).unwrap();
        // one sample gives a rank-one C, so go through the factors directly
        let m = Moments::assemble(
            1,
            1,
            2,
            0.9,
            0.0,
            vec![samples.features.row(0).transpose()],
            vec![samples.features.row(0).transpose() - 0.9 * samples.features.row(1).transpose()],
            samples.local_rewards.clone(),
            vec![2.0],
            Matrix::identity(2, 2),
            Matrix::identity(2, 2),
            vec![Vector::from_vec(vec![2.0, 0.0])],
        )
        .unwrap();
        assert_eq!(
            m.a_p(0),
            Matrix::from_row_slice(2, 2, &[1.0, -0.9, 0.0, 0.0])
        );
        assert_eq!(
            m.c_p(0),
            Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0])
        );
        assert_eq!(m.b_pi(0, 0), Vector::from_vec(vec![2.0, 0.0]));
    }

    #[test]
    fn zero_discount_collapses_a_to_c() {
        let m = identity_problem(0.0);
        for p in 0..2 {
            assert_eq!(m.a_p(p), m.c_p(p));
        }
    }

    #[test]
    fn identity_problem_aggregates() {
        let m = identity_problem(0.0);
        assert!((m.a_hat() - Matrix::identity(2, 2)).amax() < 1e-15);
        assert!((m.c_hat() - Matrix::identity(2, 2)).amax() < 1e-15);
        assert!((m.b_hat_global() - Vector::from_vec(vec![1.0, 1.0])).amax() < 1e-15);
    }

    #[test]
    fn mspbe_exact_fit_and_origin() {
        let m = identity_problem(0.0);
        assert!(m.mspbe(&Vector::from_vec(vec![1.0, 1.0])).unwrap().abs() < 1e-15);
        assert!((m.mspbe(&Vector::zeros(2)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn beta_formula_examples() {
        let id = Matrix::identity(2, 2);
        let b = vec![Vector::from_vec(vec![1.0, 1.0])];
        let m = Moments::from_aggregates(id.clone(), id.clone(), b.clone(), 0.0).unwrap();
        assert!((m.beta() - 8.0).abs() < 1e-12);
        let m = Moments::from_aggregates(&id * 2.0, id, b, 0.0).unwrap();
        assert!((m.beta() - 32.0).abs() < 1e-12);
    }

    #[test]
    fn saddle_point_of_exact_fit() {
        let id = Matrix::identity(2, 2);
        let b = vec![Vector::from_vec(vec![1.0, 1.0]); 3];
        let m = Moments::from_aggregates(id.clone(), id, b, 0.0).unwrap();
        let sp = m.solve_saddle_point(m.beta()).unwrap();
        assert!((sp.theta - Vector::from_vec(vec![1.0, 1.0])).amax() < 1e-12);
        for w in &sp.w {
            assert!(w.amax() < 1e-12);
        }
    }

    #[test]
    fn singular_covariance_is_rejected() {
        let features = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        let rewards = Matrix::from_row_slice(2, 1, &[1.0, 1.0]);
        let samples = SampleSet::from_parts(features, rewards).unwrap();
        assert!(matches!(
            build_moments(&samples, 0.5, 0.0),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn agent_index_is_checked() {
        let m = identity_problem(0.0);
        assert!(matches!(
            m.mspbe_agent(&Vector::zeros(2), 1),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn single_agent_mspbe_matches_global() {
        let m = identity_problem(0.3);
        let th = Vector::from_vec(vec![0.2, -1.1]);
        assert_eq!(m.mspbe(&th).unwrap(), m.mspbe_agent(&th, 0).unwrap());
    }

    #[test]
    fn zero_point_gradients() {
        let m = identity_problem(0.1);
        let z = Vector::zeros(2);
        assert_eq!(m.grad_theta(0, &z, &z), z);
        assert_eq!(m.grad_w(1, 0, &z, &z), -m.b_pi(1, 0));
    }

    #[test]
    fn aggregates_match_recomputation() {
        let m = crate::testutil::desk_moments(21, 3, 20, 4, 0.1);
        let (mut a, mut c) = (Matrix::zeros(4, 4), Matrix::zeros(4, 4));
        let mut b = vec![Vector::zeros(4); 3];
        for p in 0..20 {
            a += m.a_p(p);
            let cp = m.c_p(p);
            assert!(cp == cp.transpose());
            assert!(nalgebra::SymmetricEigen::new(cp.clone()).eigenvalues.min() > -1e-12);
            c += cp;
            for (i, bi) in b.iter_mut().enumerate() {
                *bi += m.b_pi(p, i);
            }
        }
        assert!((a / 20.0 - m.a_hat()).amax() < 1e-12);
        assert!((c / 20.0 - m.c_hat()).amax() < 1e-12);
        for (i, bi) in b.iter().enumerate() {
            assert!((bi / 20.0 - m.b_hat(i)).amax() < 1e-12);
        }
        let mean: Vector = b.iter().fold(Vector::zeros(4), |acc, bi| acc + bi) / 60.0;
        assert!((mean - m.b_hat_global()).amax() < 1e-12);
    }

    #[test]
    fn beta_matches_whitened_singular_values() {
        for seed in 0..5 {
            let m = crate::testutil::desk_moments(30 + seed, 2, 40, 5, 0.1);
            // lambda_max(A' C^-1 A) = sigma_max(L^-1 A)^2 with C = L L'
            let l = m.c_hat().clone().cholesky().unwrap().l();
            let white = l.solve_lower_triangular(m.a_hat()).unwrap();
            let top = white.singular_values().max().powi(2);
            let c_min = m.c_hat().singular_values().min();
            let oracle = 8.0 * (0.1 + top) / c_min;
            assert!((m.beta() - oracle).abs() < 1e-8 * oracle);
        }
    }

    #[test]
    fn theta_star_shrinks_with_rho() {
        let base = crate::testutil::desk_moments(41, 2, 30, 4, 0.0);
        let norms: Vec<f64> = [0.0, 0.1, 1.0, 10.0]
            .iter()
            .map(|&rho| {
                let m = base.with_rho(rho);
                m.solve_saddle_point(m.beta()).unwrap().theta.norm()
            })
            .collect();
        assert!(norms.windows(2).all(|w| w[1] < w[0]), "{norms:?}");
    }

    #[test]
    fn saddle_point_is_stationary_for_the_mspbe() {
        for seed in 0..5 {
            let m = crate::testutil::desk_moments(50 + seed, 3, 25, 4, 0.05);
            let sp = m.solve_saddle_point(m.beta()).unwrap();
            assert!(m.mspbe_gradient(&sp.theta).unwrap().norm() < 1e-8);
            assert!((&sp.theta - m.closed_form_theta().unwrap()).norm() < 1e-8);
        }
    }

    #[test]
    fn agent_average_has_the_same_gradient_and_minimizer() {
        let m = crate::testutil::desk_moments(61, 4, 30, 3, 0.2);
        let avg_grad = |th: &Vector| -> Vector {
            (0..4)
                .map(|i| m.mspbe_agent_gradient(th, i).unwrap())
                .fold(Vector::zeros(3), |a, g| a + g)
                / 4.0
        };
        for k in 0..10 {
            let th = Vector::from_fn(3, |j, _| ((k * 7 + j * 3) % 5) as f64 - 2.0);
            assert!((avg_grad(&th) - m.mspbe_gradient(&th).unwrap()).amax() < 1e-10);
        }
        // both objectives are quadratics with Hessian H, so one Newton step
        // from zero lands on the minimizer of the agent average
        let argmin_avg = -m
            .mspbe_hessian()
            .lu()
            .solve(&avg_grad(&Vector::zeros(3)))
            .unwrap();
        assert!((argmin_avg - m.closed_form_theta().unwrap()).amax() < 1e-8);
    }

    #[test]
    fn identical_rewards_give_identical_agent_objectives() {
        let features = Matrix::from_fn(13, 3, |p, k| ((p * 5 + k * 7) % 11) as f64 / 11.0 - 0.4);
        let rewards = Matrix::from_fn(12, 3, |p, _| (p % 4) as f64 - 1.5);
        let m =
            build_moments(&SampleSet::from_parts(features, rewards).unwrap(), 0.8, 0.1).unwrap();
        let th = Vector::from_vec(vec![0.3, -0.2, 1.0]);
        let f0 = m.mspbe_agent(&th, 0).unwrap();
        for i in 1..3 {
            assert!((m.mspbe_agent(&th, i).unwrap() - f0).abs() < 1e-12);
        }
    }

    #[test]
    fn population_moments_of_a_symmetric_chain() {
        let p = Matrix::from_element(2, 2, 0.5);
        let r = Matrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let mdp = TabularMdp::new(vec![p], vec![r], 0.5).unwrap();
        let pop =
            population_moments(&mdp, &Policy::uniform(2, 1), &FeatureMap::one_hot(2)).unwrap();
        assert!((&pop.c - Matrix::from_diagonal_element(2, 2, 0.5)).amax() < 1e-12);
        // A = D (I - gamma P) with D = diag(mu)
        let a = Matrix::from_row_slice(2, 2, &[0.375, -0.125, -0.125, 0.375]);
        assert!((&pop.a - a).amax() < 1e-12);
    }

    #[test]
    fn empirical_a_approaches_population_a() {
        let mdp = crate::env::generate_random_mdp(5, 6, 2, 3, 0.9).unwrap();
        let policy = Policy::random(6, 6, 3);
        let features = FeatureMap::random(7, 6, 3);
        let pop = population_moments(&mdp, &policy, &features).unwrap();
        let samples = crate::env::sample_trajectory(&mdp, &policy, &features, 100_000, 9).unwrap();
        let m = build_moments(&samples, 0.9, 0.0).unwrap();
        assert!((m.a_hat() - &pop.a).amax() < 0.05);
        assert!((m.c_hat() - &pop.c).amax() < 0.05);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn instance() -> Moments {
            crate::testutil::desk_moments(71, 3, 15, 3, 0.1)
        }

        fn vec3() -> impl Strategy<Value = Vector> {
            proptest::array::uniform3(-3.0f64..3.0).prop_map(|a| Vector::from_row_slice(&a))
        }

        proptest! {
            #[test]
            fn fenchel_inner_max_reproduces_agent_mspbe(th in vec3(), i in 0usize..3) {
                let m = instance();
                let (w, val) = m.fenchel_inner_max(&th, i).unwrap();
                let f = m.mspbe_agent(&th, i).unwrap();
                prop_assert!((val - f).abs() < 1e-10 * (1.0 + f.abs()));
                // the maximizer zeroes the dual gradient of the averaged objective
                let resid = m.a_hat() * &th - m.c_hat() * &w - m.b_hat(i);
                prop_assert!(resid.amax() < 1e-10 * (1.0 + th.amax()));
            }

            #[test]
            fn gradients_match_central_differences(
                th in vec3(), w in vec3(), p in 0usize..15, i in 0usize..3,
            ) {
                let m = instance();
                let h = 1e-6;
                let gt = m.grad_theta(p, &th, &w);
                let gw = m.grad_w(p, i, &th, &w);
                for k in 0..3 {
                    let e = Vector::from_fn(3, |j, _| if j == k { h } else { 0.0 });
                    let ft = (m.j_value(p, i, &(&th + &e), &w) - m.j_value(p, i, &(&th - &e), &w)) / (2.0 * h);
                    let fw = (m.j_value(p, i, &th, &(&w + &e)) - m.j_value(p, i, &th, &(&w - &e))) / (2.0 * h);
                    prop_assert!((ft - gt[k]).abs() < 1e-6);
                    prop_assert!((fw - gw[k]).abs() < 1e-6);
                }
            }
        }
    }
}
