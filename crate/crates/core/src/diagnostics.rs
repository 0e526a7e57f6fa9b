//! Convergence diagnostics: the stacked stationarity matrix `G`, Lyapunov
//! quantities, the 3x3 step-size certificate `Q(gamma)` and rate fits.
//!
//! `G` has the block form
//!
//! ```text
//! [ rho I        c A' ... c A' ]
//! [ -c A   beta C              ]      c = sqrt(beta / N)
//! [  ...          ...          ]
//! [ -c A                beta C ]
//! ```
//!
//! Rotating the dual blocks onto `1/sqrt(N)` and its complement shows that
//! `G` is orthogonally similar to `blockdiag(H, I_{N-1} (x) beta C)` with
//! `H = [[rho I, sqrt(beta) A'], [-sqrt(beta) A, beta C]]`. Since `beta C` is
//! a block of `H`, every norm used below (`|G|`, `|G_p|`, `|I - gamma G|`)
//! equals the corresponding norm of the `2d x 2d` matrix `H`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, spectral_radius, sym_extremes, Matrix, Vector};
use crate::moments::{Moments, SaddlePoint};
use crate::network::MixingMatrix;
use crate::solver::{RunTrace, SolverState};

/// Certified step sizes must push the spectral radius below this value.
pub const CERT_MARGIN: f64 = 1e-6;
/// Relative resolution of the certificate bisection.
pub const CERT_RESOLUTION: f64 = 1e-8;
/// Gaps at or below this value are ignored by the rate fit.
pub const GAP_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GSystem {
    pub g: Matrix,
    pub rhs: Vector,
    pub beta: f64,
    /// Smallest and largest real part of the spectrum.
    pub eig_min: f64,
    pub eig_max: f64,
    /// Largest imaginary part of the spectrum.
    pub eig_imag_max: f64,
    /// `|U| |U^-1|` from the eigenvector-matrix bounds, which reduce to
    /// `8 kappa(C)`.
    pub u_cond: f64,
    pub warnings: Vec<String>,
}

/// The reduced `2d x 2d` matrix `H` for arbitrary `(A, C)`.
pub fn reduced_g(a: &Matrix, c: &Matrix, rho: f64, beta: f64) -> Matrix {
    let d = a.nrows();
    let sb = beta.sqrt();
    let mut h = Matrix::zeros(2 * d, 2 * d);
    for k in 0..d {
        h[(k, k)] = rho;
    }
    h.view_mut((0, d), (d, d)).copy_from(&(a.transpose() * sb));
    h.view_mut((d, 0), (d, d)).copy_from(&(a * -sb));
    h.view_mut((d, d), (d, d)).copy_from(&(c * beta));
    h
}

/// Eigenvalues of `G`: those of `H` plus `N - 1` copies of those of `beta C`.
fn g_spectrum(moments: &Moments, beta: f64) -> Vec<(f64, f64)> {
    let h = reduced_g(moments.a_hat(), moments.c_hat(), moments.rho(), beta);
    let mut eig: Vec<(f64, f64)> = h
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect();
    if moments.n_agents() > 1 {
        let c_eig = nalgebra::SymmetricEigen::new(moments.c_hat().clone()).eigenvalues;
        for _ in 1..moments.n_agents() {
            eig.extend(c_eig.iter().map(|&x| (beta * x, 0.0)));
        }
    }
    eig
}

/// `(|U|, |U^-1|)` bounds: `8 (rho + l) kappa(C)` and `1 / (rho + l)` with
/// `l = lambda_max(A' C^-1 A)`.
pub fn eigenvector_bounds(moments: &Moments) -> (f64, f64) {
    let (_, l) = sym_extremes(&moments.ata());
    let (c_min, c_max) = sym_extremes(moments.c_hat());
    let s = moments.rho() + l;
    (8.0 * s * c_max / c_min, 1.0 / s)
}

pub fn build_g_system(moments: &Moments, beta: f64) -> Result<GSystem> {
    if beta <= 0.0 || !beta.is_finite() {
        return Err(Error::Parameter(format!(
            "beta must be positive, got {beta}"
        )));
    }
    let (g, rhs) = moments.stationarity_system(beta);
    let eig = g_spectrum(moments, beta);
    let eig_min = eig.iter().map(|e| e.0).fold(f64::INFINITY, f64::min);
    let eig_max = eig.iter().map(|e| e.0).fold(f64::NEG_INFINITY, f64::max);
    let eig_imag_max = eig.iter().map(|e| e.1.abs()).fold(0.0, f64::max);
    let (u, u_inv) = eigenvector_bounds(moments);

    let mut warnings = Vec::new();
    let (ata_min, ata_max) = sym_extremes(&moments.ata());
    let lower = 8.0 / 9.0 * ata_min;
    if eig_min < lower {
        warnings.push(format!(
            "lambda_min(G) = {eig_min:e} is below the lower bound {lower:e}"
        ));
    }
    let (c_min, c_max) = sym_extremes(moments.c_hat());
    let upper = c_max / c_min * (moments.rho() + ata_max);
    if eig_max > upper {
        warnings.push(format!(
            "lambda_max(G) = {eig_max:e} exceeds the upper bound {upper:e}"
        ));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(GSystem {
        g,
        rhs,
        beta,
        eig_min,
        eig_max,
        eig_imag_max,
        u_cond: u * u_inv,
        warnings,
    })
}

/// Per-sample analog `G_p` (dense, `(N+1)d` square).
pub fn g_p(moments: &Moments, p: usize, beta: f64) -> Matrix {
    let (n, d) = (moments.n_agents(), moments.dim());
    let c = (beta / n as f64).sqrt();
    let (a_p, c_p) = (moments.a_p(p), moments.c_p(p));
    let mut g = Matrix::zeros((n + 1) * d, (n + 1) * d);
    for k in 0..d {
        g[(k, k)] = moments.rho();
    }
    let at = a_p.transpose() * c;
    let lower = &a_p * -c;
    let diag = &c_p * beta;
    for i in 0..n {
        let off = (i + 1) * d;
        g.view_mut((0, off), (d, d)).copy_from(&at);
        g.view_mut((off, 0), (d, d)).copy_from(&lower);
        g.view_mut((off, off), (d, d)).copy_from(&diag);
    }
    g
}

/// `v(t)`: stacked distance `(theta_bar - theta*, (w_i - w_i*) / sqrt(beta N))`.
pub fn stacked_v(state: &SolverState, oracle: &SaddlePoint) -> Vector {
    let (n, d) = (state.n_agents(), state.dim());
    let scale = 1.0 / (oracle.beta * n as f64).sqrt();
    let mut v = Vector::zeros((n + 1) * d);
    v.rows_mut(0, d)
        .copy_from(&(state.theta_mean() - &oracle.theta));
    for i in 0..n {
        v.rows_mut((i + 1) * d, d)
            .copy_from(&((&state.w[i] - &oracle.w[i]) * scale));
    }
    v
}

/// `h(t)`: batch gradients at `(theta_bar, w_i)`, dual blocks scaled by
/// `-sqrt(beta / N)`.
pub fn stacked_h(state: &SolverState, moments: &Moments, beta: f64) -> Vector {
    let (n, d) = (state.n_agents(), state.dim());
    let c = (beta / n as f64).sqrt();
    let theta_bar = state.theta_mean();
    let w_bar = crate::linalg::mean_of(&state.w);
    let mut h = Vector::zeros((n + 1) * d);
    h.rows_mut(0, d)
        .copy_from(&(moments.rho() * &theta_bar + moments.a_hat().tr_mul(&w_bar)));
    let a_theta = moments.a_hat() * &theta_bar;
    for i in 0..n {
        let hw = &a_theta - moments.c_hat() * &state.w[i] - moments.b_hat(i);
        h.rows_mut((i + 1) * d, d).copy_from(&(hw * -c));
    }
    h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEntry {
    pub e_c: f64,
    pub e_g: f64,
    pub v_norm: f64,
}

/// Consensus error, tracking error (against the table average, not the
/// average of `s`) and squared distance to the saddle point.
pub fn lyapunov(state: &SolverState, oracle: &SaddlePoint) -> LyapunovEntry {
    let n = state.n_agents() as f64;
    let theta_bar = state.theta_mean();
    let g_theta = state.table_average_theta();
    let e_c = state
        .theta
        .iter()
        .map(|th| (th - &theta_bar).norm_squared())
        .sum::<f64>()
        .sqrt()
        / n;
    let e_g = state
        .s
        .iter()
        .map(|s| (s - &g_theta).norm_squared())
        .sum::<f64>()
        .sqrt()
        / n;
    let dual: f64 = state
        .w
        .iter()
        .zip(&oracle.w)
        .map(|(w, ws)| (w - ws).norm_squared())
        .sum();
    let v_norm = (&theta_bar - &oracle.theta).norm_squared() + dual / (oracle.beta * n);
    LyapunovEntry { e_c, e_g, v_norm }
}

/// Instance constants entering `Q(gamma)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QConstants {
    pub n_agents: usize,
    pub n_samples: usize,
    pub rho: f64,
    pub beta: f64,
    pub lambda: f64,
    /// `|G|`.
    pub g_norm: f64,
    /// `max_p |G_p|`.
    pub g_bar: f64,
    /// `max_p |A_p|`.
    pub a_bar: f64,
    /// `max_p |C_p|`.
    pub c_bar: f64,
    pub u_norm: f64,
    pub u_inv_norm: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub a4: f64,
    pub a5: f64,
    pub a6: f64,
    /// Reduced matrix `H` used for `theta(gamma)`.
    #[serde(skip)]
    h: Matrix,
}

impl QConstants {
    pub fn new(moments: &Moments, mixing: &MixingMatrix, beta: f64) -> Result<Self> {
        let (n, m) = (moments.n_agents(), moments.n_samples());
        if m == 0 {
            return Err(Error::Parameter(
                "certificate needs per-sample moments".into(),
            ));
        }
        if mixing.n_agents() != n {
            return Err(Error::Dimension(
                "mixing matrix and moments disagree on N".into(),
            ));
        }
        let rho = moments.rho();
        let lambda = mixing.lambda();
        let h = reduced_g(moments.a_hat(), moments.c_hat(), rho, beta);
        let g_norm = spectral_norm(&h);
        let mut g_bar: f64 = 0.0;
        let mut a_bar: f64 = 0.0;
        let mut c_bar: f64 = 0.0;
        for p in 0..m {
            let (a_p, c_p) = (moments.a_p(p), moments.c_p(p));
            g_bar = g_bar.max(spectral_norm(&reduced_g(&a_p, &c_p, rho, beta)));
            a_bar = a_bar.max(moments.phi(p).norm() * moments.psi(p).norm());
            c_bar = c_bar.max(moments.phi(p).norm_squared());
        }
        let (u_norm, u_inv_norm) = eigenvector_bounds(moments);
        let (nf, mf) = (n as f64, m as f64);
        let coupling = rho + a_bar * (beta * nf).sqrt();
        Ok(Self {
            n_agents: n,
            n_samples: m,
            rho,
            beta,
            lambda,
            g_norm,
            g_bar,
            a_bar,
            c_bar,
            u_norm,
            u_inv_norm,
            a1: u_norm * u_inv_norm * g_bar * mf * (g_norm + 2.0 * g_bar * mf),
            a2: u_norm * nf.sqrt() * coupling,
            a3: g_bar * mf * u_norm * nf.sqrt() * coupling,
            a4: 2.0 * a_bar * (nf + 1.0).sqrt() * (mf + 1.0) / (beta * mf)
                * u_norm
                * a_bar.max(beta.sqrt() * c_bar),
            a5: 2.0 * a_bar * a_bar * (mf + 1.0) * nf.sqrt() / (beta * mf),
            a6: 2.0 * (1.0 + lambda) / mf,
            h,
        })
    }

    /// `theta(gamma) = |I - gamma G|` together with `alpha` such that
    /// `theta = 1 - gamma alpha`.
    ///
    /// `theta^2 = 1 + gamma mu` with `mu = lambda_max(gamma G'G - G - G')`,
    /// so `alpha = -mu / (1 + theta)` is obtained without cancellation even
    /// when `theta` is within rounding of one.
    pub fn theta(&self, gamma: f64) -> (f64, f64) {
        let s = &self.h + self.h.transpose();
        let p = self.h.tr_mul(&self.h);
        let (_, mu) = sym_extremes(&(p * gamma - s));
        let theta = (1.0 + gamma * mu).max(0.0).sqrt();
        (theta, -mu / (1.0 + theta))
    }

    /// `Q` assembled for a given `gamma` and `theta(gamma)`.
    pub fn assemble(&self, gamma: f64, theta: f64) -> Matrix {
        let (lambda, m) = (self.lambda, self.n_samples as f64);
        Matrix::from_row_slice(
            3,
            3,
            &[
                theta + gamma * gamma * self.a1,
                gamma * self.a2 + gamma * gamma * self.a3,
                0.0,
                0.0,
                lambda,
                gamma,
                gamma * self.a4,
                gamma * self.a5 + self.a6,
                lambda + gamma * self.rho / m,
            ],
        )
    }

    /// Full certificate at `gamma`; fails when `theta(gamma) >= 1` for
    /// `gamma > 0`.
    pub fn certificate(&self, gamma: f64) -> Result<QCert> {
        if gamma < 0.0 || !gamma.is_finite() {
            return Err(Error::Parameter(format!(
                "gamma must be nonnegative, got {gamma}"
            )));
        }
        let (theta, alpha) = if gamma == 0.0 {
            (1.0, 0.0)
        } else {
            self.theta(gamma)
        };
        if gamma > 0.0 && (alpha.is_nan() || alpha <= 0.0) {
            return Err(Error::Certificate(format!(
                "|I - gamma G| = {theta} is not below 1 at gamma = {gamma:e}"
            )));
        }
        let q = self.assemble(gamma, theta);
        let spectral_radius = spectral_radius(&q);
        Ok(QCert {
            gamma1: gamma,
            lambda: self.lambda,
            alpha,
            theta,
            constants: self.clone(),
            q,
            spectral_radius,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QCert {
    pub gamma1: f64,
    pub lambda: f64,
    /// `a0`: `theta(gamma) = 1 - gamma alpha`.
    pub alpha: f64,
    pub theta: f64,
    pub constants: QConstants,
    pub q: Matrix,
    pub spectral_radius: f64,
}

impl QCert {
    pub fn q_squared_positive(&self) -> bool {
        (&self.q * &self.q).iter().all(|&x| x > 0.0)
    }
}

/// `Q(gamma1)` with `beta` chosen by the caller (normally `moments.beta()`).
pub fn q_matrix(moments: &Moments, mixing: &MixingMatrix, gamma1: f64, beta: f64) -> Result<QCert> {
    QConstants::new(moments, mixing, beta)?.certificate(gamma1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certification {
    /// Largest certified step size, if any.
    pub gamma1: Option<f64>,
    /// `rho(Q(gamma1))` at the certified step.
    pub sigma: Option<f64>,
    pub gamma_max: f64,
    /// Smallest spectral radius seen during the search and where.
    pub best_radius: f64,
    pub best_gamma: f64,
    /// Largest step with `rho(Q) < 1` and no margin. The certificate itself
    /// demands the margin, so this can exist while `gamma1` does not.
    pub contractive_gamma: Option<f64>,
    /// Lower bound on `rho(Q(gamma))` over all `gamma`:
    /// `1 - max_gamma (gamma alpha0 - gamma^2 a1)` with `alpha0 = rho`,
    /// which follows from `Q_11 >= 1 - gamma rho + gamma^2 a1`.
    pub radius_lower_bound: f64,
    pub beta: f64,
}

/// Largest `gamma1` in `(0, gamma_max]` with `rho(Q(gamma1)) < 1 - 1e-6`,
/// `gamma_max = 1 / max |eig(G)|`. A geometric scan from `gamma_max` finds
/// the first feasible step, then bisection refines the boundary.
pub fn certify_step_size(moments: &Moments, mixing: &MixingMatrix) -> Result<Certification> {
    let beta = moments.beta();
    let consts = QConstants::new(moments, mixing, beta)?;
    let eig_abs = g_spectrum(moments, beta)
        .iter()
        .map(|&(re, im)| re.hypot(im))
        .fold(0.0, f64::max);
    let gamma_max = 1.0 / eig_abs;
    let radius = |g: f64| {
        consts
            .certificate(g)
            .map(|c| c.spectral_radius)
            .unwrap_or(f64::INFINITY)
    };

    let mut best = (f64::INFINITY, gamma_max);
    for k in 0..=SCAN_STEPS {
        let g = scan_point(gamma_max, k);
        let r = radius(g);
        if r < best.0 {
            best = (r, g);
        }
    }
    let found = largest_below(&radius, gamma_max, 1.0 - CERT_MARGIN);
    let rho = consts.rho;
    let lower = if consts.a1 > 0.0 {
        1.0 - rho * rho / (4.0 * consts.a1)
    } else {
        1.0 - rho * gamma_max
    };
    Ok(Certification {
        gamma1: found,
        sigma: found.map(radius),
        gamma_max,
        best_radius: best.0,
        best_gamma: best.1,
        contractive_gamma: largest_below(&radius, gamma_max, 1.0),
        radius_lower_bound: lower,
        beta,
    })
}

const SCAN_STEPS: u32 = 200;

fn scan_point(gamma_max: f64, k: u32) -> f64 {
    gamma_max * 10f64.powf(-(k as f64) / 10.0)
}

// Geometric scan down from `gamma_max` to the first step below `target`,
// then bisection against the last step above it.
fn largest_below(radius: &impl Fn(f64) -> f64, gamma_max: f64, target: f64) -> Option<f64> {
    let mut prev: Option<f64> = None;
    for k in 0..=SCAN_STEPS {
        let g = scan_point(gamma_max, k);
        if radius(g) < target {
            let mut lo = g;
            if let Some(mut hi) = prev {
                while hi / lo - 1.0 > CERT_RESOLUTION {
                    let mid = (lo * hi).sqrt();
                    if radius(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            return Some(lo);
        }
        prev = Some(g);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// Slope of `ln(gap)` per iteration.
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n_points: usize,
}

/// Least-squares line through `(x, ln y)` for `y > GAP_FLOOR`.
pub fn fit_log_linear(points: impl IntoIterator<Item = (f64, f64)>) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = points
        .into_iter()
        .filter(|&(_, y)| y > GAP_FLOOR && y.is_finite())
        .map(|(x, y)| (x, y.ln()))
        .collect();
    let n = pts.len();
    if n < 10 {
        return Err(Error::Parameter(format!(
            "rate fit needs at least 10 points above {GAP_FLOOR:e}, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter(
            "rate fit needs distinct iteration indices".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        n_points: n,
    })
}

/// Linear-rate fit of the MSPBE gap against the iteration index, skipping
/// records with `iter <= burn_in`.
pub fn fit_linear_rate(trace: &RunTrace, burn_in: u64) -> Result<RateFit> {
    fit_log_linear(
        trace
            .records
            .iter()
            .filter(|r| r.iter > burn_in)
            .map(|r| (r.iter as f64, r.mspbe_gap)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InequalityReport {
    pub checked: usize,
    pub violations: usize,
    /// Largest `lhs / rhs` ratio over all components and iterations.
    pub worst_ratio: f64,
}

/// Checks `e(t+1) <= Q e([t - 2M, t])` entrywise, where `e(q)` holds
/// `(|U^-1| sqrt(v_norm), E_c, E_g)` and the bracket is the componentwise
/// window maximum. `tol` is a relative slack for rounding.
pub fn check_inequality_system(
    q: &Matrix,
    u_inv_norm: f64,
    entries: &[LyapunovEntry],
    n_samples: usize,
    tol: f64,
) -> InequalityReport {
    let e: Vec<[f64; 3]> = entries
        .iter()
        .map(|l| [u_inv_norm * l.v_norm.sqrt(), l.e_c, l.e_g])
        .collect();
    let window = 2 * n_samples;
    let mut report = InequalityReport {
        checked: 0,
        violations: 0,
        worst_ratio: 0.0,
    };
    for t in 0..e.len().saturating_sub(1) {
        let lo = t.saturating_sub(window);
        let mut mx = [0.0f64; 3];
        for q_entry in &e[lo..=t] {
            for k in 0..3 {
                mx[k] = mx[k].max(q_entry[k]);
            }
        }
        for k in 0..3 {
            let rhs: f64 = (0..3).map(|j| q[(k, j)] * mx[j]).sum();
            let lhs = e[t + 1][k];
            report.checked += 1;
            if rhs > 0.0 {
                report.worst_ratio = report.worst_ratio.max(lhs / rhs);
            }
            if lhs > rhs * (1.0 + tol) + f64::MIN_POSITIVE {
                report.violations += 1;
            }
        }
    }
    report
}

/// Serializable summary of the certificate and rate fits for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub beta: f64,
    pub g_eig_min: f64,
    pub g_eig_max: f64,
    pub u_cond: f64,
    pub certification: Option<Certification>,
    pub q_at_gamma1: Option<QCert>,
    pub rate_fits: Vec<(String, Option<RateFit>)>,
    pub warnings: Vec<String>,
}

impl DiagnosticsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_mixing, Topology};
    use crate::solver::{init_state, run_with, step, DualStep, RunOptions, Schedule, TraceRecord};
    use crate::testutil::desk_moments;

    fn identity_moments(n: usize) -> Moments {
        let b = vec![Vector::from_vec(vec![1.0, 1.0]); n];
        Moments::from_aggregates(Matrix::identity(2, 2), Matrix::identity(2, 2), b, 0.0).unwrap()
    }

    #[test]
    fn scalar_g_by_substitution() {
        let b = vec![Vector::from_vec(vec![1.0])];
        let mo = Moments::from_aggregates(Matrix::identity(1, 1), Matrix::identity(1, 1), b, 0.0)
            .unwrap();
        let gs = build_g_system(&mo, 8.0).unwrap();
        let s8 = 8f64.sqrt();
        let expect = Matrix::from_row_slice(2, 2, &[0.0, s8, -s8, 8.0]);
        assert!((gs.g - expect).amax() < 1e-15);
    }

    #[test]
    fn saddle_point_solves_g_system() {
        for seed in 0..5 {
            let mo = desk_moments(seed, 3, 20, 4, 0.05);
            let beta = mo.beta();
            let gs = build_g_system(&mo, beta).unwrap();
            let sp = mo.solve_saddle_point(beta).unwrap();
            let n = 3;
            let mut v = Vector::zeros(4 * (n + 1));
            v.rows_mut(0, 4).copy_from(&sp.theta);
            for i in 0..n {
                v.rows_mut(4 * (i + 1), 4)
                    .copy_from(&(&sp.w[i] / (beta * n as f64).sqrt()));
            }
            assert!((&gs.g * v - &gs.rhs).norm() < 1e-8 * (1.0 + gs.rhs.norm()));
        }
    }

    #[test]
    fn per_sample_g_averages_to_g() {
        let mo = desk_moments(11, 2, 15, 3, 0.1);
        let beta = mo.beta();
        let (g, _) = mo.stationarity_system(beta);
        let mut avg = Matrix::zeros(g.nrows(), g.ncols());
        for p in 0..15 {
            avg += g_p(&mo, p, beta);
        }
        avg /= 15.0;
        assert!((avg - g).amax() < 1e-12);
    }

    #[test]
    fn reduction_matches_dense_norms_and_spectrum() {
        let mo = desk_moments(12, 3, 12, 3, 0.1);
        let beta = mo.beta();
        let (g, _) = mo.stationarity_system(beta);
        let h = reduced_g(mo.a_hat(), mo.c_hat(), mo.rho(), beta);
        assert!((spectral_norm(&g) - spectral_norm(&h)).abs() < 1e-9 * spectral_norm(&g));
        let gamma = 0.3 / spectral_norm(&g);
        let id = Matrix::identity(g.nrows(), g.nrows());
        let id_h = Matrix::identity(h.nrows(), h.nrows());
        let dense = spectral_norm(&(&id - &g * gamma));
        assert!((dense - spectral_norm(&(&id_h - &h * gamma))).abs() < 1e-12);
        let p = 4;
        let gp = g_p(&mo, p, beta);
        let hp = reduced_g(&mo.a_p(p), &mo.c_p(p), mo.rho(), beta);
        assert!((spectral_norm(&gp) - spectral_norm(&hp)).abs() < 1e-9 * spectral_norm(&gp));
        let mut dense_eig: Vec<f64> = g.complex_eigenvalues().iter().map(|z| z.re).collect();
        let mut reduced: Vec<f64> = g_spectrum(&mo, beta).iter().map(|z| z.0).collect();
        dense_eig.sort_by(f64::total_cmp);
        reduced.sort_by(f64::total_cmp);
        for (a, b) in dense_eig.iter().zip(&reduced) {
            assert!((a - b).abs() < 1e-7 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn theta_matches_dense_norm() {
        let mo = desk_moments(13, 2, 10, 3, 0.2);
        let mix = build_mixing(&Topology::Complete, 2, 0).unwrap();
        let qc = QConstants::new(&mo, &mix, mo.beta()).unwrap();
        let (g, _) = mo.stationarity_system(mo.beta());
        for gamma in [1e-6, 1e-4, 1e-3] {
            let (theta, alpha) = qc.theta(gamma);
            let id = Matrix::identity(g.nrows(), g.nrows());
            let dense = spectral_norm(&(id - &g * gamma));
            assert!((theta - dense).abs() < 1e-12, "{theta} vs {dense}");
            assert!((theta - (1.0 - gamma * alpha)).abs() < 1e-14);
        }
    }

    #[test]
    fn theta_is_unity_bound_without_regularization() {
        // G + G' is singular when rho = 0, so |I - gamma G| >= 1
        let mo = desk_moments(14, 2, 10, 3, 0.0);
        let mix = build_mixing(&Topology::Complete, 2, 0).unwrap();
        let qc = QConstants::new(&mo, &mix, mo.beta()).unwrap();
        assert!(matches!(qc.certificate(1e-4), Err(Error::Certificate(_))));
    }

    #[test]
    fn q_at_zero_step() {
        let mo = desk_moments(15, 3, 10, 4, 0.1);
        let mix = build_mixing(&Topology::Ring, 3, 0).unwrap();
        let cert = q_matrix(&mo, &mix, 0.0, mo.beta()).unwrap();
        assert!((cert.spectral_radius - 1.0).abs() < 1e-12);
        let mut eig: Vec<f64> = cert.q.complex_eigenvalues().iter().map(|z| z.re).collect();
        eig.sort_by(f64::total_cmp);
        let l = mix.lambda();
        assert!(
            (eig[0] - l).abs() < 1e-7 && (eig[1] - l).abs() < 1e-7 && (eig[2] - 1.0).abs() < 1e-12
        );
    }

    #[test]
    fn q_squared_positive_and_entries_nonnegative() {
        for seed in 0..4 {
            let mo = desk_moments(20 + seed, 3, 10, 4, 0.1);
            let mix = build_mixing(&Topology::Complete, 3, 0).unwrap();
            let cert = q_matrix(&mo, &mix, 1e-9, mo.beta()).unwrap();
            assert!(cert.q.iter().all(|&x| x >= 0.0));
            assert!(cert.q_squared_positive());
        }
    }

    #[test]
    fn radius_grows_with_constants() {
        let mo = desk_moments(16, 3, 10, 4, 0.1);
        let mix = build_mixing(&Topology::Ring, 3, 0).unwrap();
        let qc = QConstants::new(&mo, &mix, mo.beta()).unwrap();
        let gamma = 1e-9;
        let base = qc.certificate(gamma).unwrap().spectral_radius;
        let bump = |f: &dyn Fn(&mut QConstants)| {
            let mut c = qc.clone();
            f(&mut c);
            c.certificate(gamma).unwrap().spectral_radius
        };
        for r in [
            bump(&|c| c.a1 *= 2.0),
            bump(&|c| c.a2 *= 2.0),
            bump(&|c| c.a3 *= 2.0),
            bump(&|c| c.a4 *= 2.0),
            bump(&|c| c.a5 *= 2.0),
            bump(&|c| c.a6 *= 2.0),
        ] {
            assert!(r >= base - 1e-15);
        }
    }

    #[test]
    fn certificate_returns_a_sound_pair_or_nothing() {
        let mo = desk_moments(17, 3, 10, 4, 0.1);
        let mix = build_mixing(&Topology::Complete, 3, 0).unwrap();
        let c = certify_step_size(&mo, &mix).unwrap();
        assert!(c.best_radius >= c.radius_lower_bound - 1e-12);
        if let (Some(g), Some(s)) = (c.gamma1, c.sigma) {
            assert!(s < 1.0 - CERT_MARGIN);
            assert!(q_matrix(&mo, &mix, g, mo.beta()).unwrap().spectral_radius < 1.0);
        }
    }

    #[test]
    fn small_instance_has_a_contractive_step_that_converges() {
        let mo = desk_moments(19, 3, 10, 2, 1.0);
        let mix = build_mixing(&Topology::Complete, 3, 0).unwrap();
        let c = certify_step_size(&mo, &mix).unwrap();
        let g = c.contractive_gamma.expect("no step with rho(Q) < 1");
        let sigma = q_matrix(&mo, &mix, g, mo.beta()).unwrap().spectral_radius;
        assert!(sigma < 1.0);

        let oracle = mo.solve_saddle_point(mo.beta()).unwrap();
        let mut st = init_state(&mo, &mix, g, DualStep::AutoBeta, None, None).unwrap();
        let mut opts = RunOptions::iterations(20_000);
        opts.record_every = 10;
        let tr = run_with(
            &mut st,
            &mo,
            &mix,
            &mut Schedule::cyclic(10).unwrap(),
            &oracle,
            &opts,
        )
        .unwrap();
        assert!(fit_linear_rate(&tr, 0).unwrap().slope < 0.0);
        // sigma^(1/M) per iteration is an upper envelope for the distance
        let v =
            fit_log_linear(tr.records.iter().map(|r| (r.iter as f64, r.v_norm.sqrt()))).unwrap();
        assert!(v.slope < 0.0);
        assert!(v.slope.exp() <= sigma.powf(0.1));
    }

    #[test]
    fn contractive_step_does_not_grow_with_m() {
        let mix = build_mixing(&Topology::Complete, 3, 0).unwrap();
        let steps: Vec<f64> = [10, 20, 40]
            .into_iter()
            .map(|m| {
                let c = certify_step_size(&desk_moments(19, 3, m, 2, 1.0), &mix).unwrap();
                assert!(c.gamma1.is_none() || c.gamma1 <= c.contractive_gamma);
                c.contractive_gamma.unwrap_or(0.0)
            })
            .collect();
        assert!(steps[0] > 0.0);
        assert!(steps.windows(2).all(|w| w[1] <= w[0]), "{steps:?}");
    }

    #[test]
    fn geometric_sequence_rate() {
        let trace = RunTrace {
            method: "x".into(),
            records: (1..=50)
                .map(|t| TraceRecord {
                    epoch: t as f64,
                    iter: t,
                    mspbe_gap: 0.9f64.powi(t as i32),
                    consensus_err: 0.0,
                    tracking_err: 0.0,
                    v_norm: 0.0,
                    wall_ms: 0.0,
                })
                .collect(),
        };
        let fit = fit_linear_rate(&trace, 0).unwrap();
        assert!((fit.slope - 0.9f64.ln()).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        let flat = fit_log_linear((0..20).map(|t| (t as f64, 0.5))).unwrap();
        assert_eq!(flat.slope, 0.0);
        assert_eq!(flat.r2, 1.0);
        assert!(fit_linear_rate(&trace, 45).is_err());
    }

    #[test]
    fn lyapunov_trivial_cases() {
        let mo = desk_moments(18, 1, 10, 3, 0.1);
        let mix = build_mixing(&Topology::Complete, 1, 0).unwrap();
        let oracle = mo.solve_saddle_point(mo.beta()).unwrap();
        let mut st = init_state(&mo, &mix, 0.01, DualStep::AutoBeta, None, None).unwrap();
        let mut sch = Schedule::cyclic(10).unwrap();
        for _ in 0..30 {
            step(&mut st, &mo, &mix, &mut sch).unwrap();
            let ly = lyapunov(&st, &oracle);
            assert!(ly.e_c == 0.0 && ly.e_g < 1e-15);
        }
        let mut at_opt = st.clone();
        at_opt.theta = vec![oracle.theta.clone()];
        at_opt.w = oracle.w.clone();
        assert!(lyapunov(&at_opt, &oracle).v_norm < 1e-24);
    }

    #[test]
    fn equal_parameters_have_no_consensus_error() {
        let mo = desk_moments(19, 3, 10, 3, 0.1);
        let mix = build_mixing(&Topology::Ring, 3, 0).unwrap();
        let oracle = mo.solve_saddle_point(mo.beta()).unwrap();
        let th = vec![Vector::from_vec(vec![0.1, 0.2, 0.3]); 3];
        let st = init_state(&mo, &mix, 0.01, DualStep::AutoBeta, Some(&th), None).unwrap();
        assert!(lyapunov(&st, &oracle).e_c < 1e-15);
    }

    #[test]
    fn batch_gradient_identity() {
        let mo = desk_moments(21, 3, 10, 4, 0.1);
        let mix = build_mixing(&Topology::Ring, 3, 0).unwrap();
        let beta = mo.beta();
        let oracle = mo.solve_saddle_point(beta).unwrap();
        let (g, _) = mo.stationarity_system(beta);
        let mut st = init_state(&mo, &mix, 0.01, DualStep::AutoBeta, None, None).unwrap();
        let mut sch = Schedule::cyclic(10).unwrap();
        for _ in 0..100 {
            step(&mut st, &mo, &mix, &mut sch).unwrap();
            let h = stacked_h(&st, &mo, beta);
            let gv = &g * stacked_v(&st, &oracle);
            assert!((h - gv).amax() < 1e-10);
        }
    }

    #[test]
    fn identity_problem_g_is_well_formed() {
        let mo = identity_moments(2);
        let gs = build_g_system(&mo, 8.0).unwrap();
        assert_eq!(gs.g.nrows(), 6);
        assert!(gs.eig_min > 0.0);
    }

    #[test]
    fn inequality_checker_on_a_small_step_run() {
        let mo = desk_moments(22, 3, 10, 3, 0.5);
        let mix = build_mixing(&Topology::Complete, 3, 0).unwrap();
        let beta = mo.beta();
        let oracle = mo.solve_saddle_point(beta).unwrap();
        let qc = QConstants::new(&mo, &mix, beta).unwrap();
        let gamma = 1e-4;
        let cert = qc.certificate(gamma).unwrap();
        let mut st = init_state(&mo, &mix, gamma, DualStep::AutoBeta, None, None).unwrap();
        let mut sch = Schedule::cyclic(10).unwrap();
        let mut entries = Vec::new();
        for _ in 0..200 {
            let p = sch.next_index(st.t);
            st.update_surrogates(&mo, &mix, p);
            entries.push(lyapunov(&st, &oracle));
            st.primal_dual_update(&mix).unwrap();
        }
        let rep = check_inequality_system(&cert.q, qc.u_inv_norm, &entries, 10, 1e-9);
        assert_eq!(rep.checked, 3 * 199);
        assert!(rep.worst_ratio.is_finite());
    }
}
