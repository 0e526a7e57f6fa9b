//! Python bindings: moments, mixing matrices, the PD-DistIAG solver, the
//! baselines and the step-size certificate. Vectors cross the boundary as
//! lists of floats and matrices as lists of rows.

use distiag::baselines::{run_gtd2, run_pdbg, run_saga, BaselineOptions, CentralState, Gtd2Steps};
use distiag::diagnostics::certify_step_size;
use distiag::instance::{build_instance, InstanceSpec};
use distiag::io::Persist;
use distiag::linalg::{spectral_radius, Matrix, Vector};
use distiag::moments::SaddlePoint;
use distiag::network::{build_mixing, Topology};
use distiag::solver::{
    init_state, run_with, step, DualStep, GapOracle, RunOptions, RunTrace, Schedule, ScheduleKind,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyArithmeticError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(
    distiag_py,
    DivergenceError,
    PyArithmeticError,
    "Iterates or the gap stopped being finite."
);
create_exception!(
    distiag_py,
    RankDeficientError,
    PyValueError,
    "Sampled moments are not invertible."
);

fn py_err(e: distiag::Error) -> PyErr {
    use distiag::Error as E;
    match e {
        E::Divergence { .. } => DivergenceError::new_err(e.to_string()),
        E::RankDeficient(_) => RankDeficientError::new_err(e.to_string()),
        E::Parameter(_) | E::Dimension(_) | E::Topology(_) | E::Certificate(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn vector(v: Vec<f64>, dim: usize, what: &str) -> PyResult<Vector> {
    if v.len() != dim {
        return Err(PyValueError::new_err(format!(
            "{what} has length {}, expected {dim}",
            v.len()
        )));
    }
    Ok(Vector::from_vec(v))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn schedule(kind: &str, seed: u64, m: usize) -> PyResult<Schedule> {
    let kind = match kind {
        "cyclic" => ScheduleKind::Cyclic,
        "shuffle" => ScheduleKind::Shuffle { seed },
        other => return Err(PyValueError::new_err(format!("unknown schedule `{other}`"))),
    };
    Schedule::new(kind, m).map_err(py_err)
}

fn trace_dicts<'py>(py: Python<'py>, trace: &RunTrace) -> PyResult<Vec<Bound<'py, PyDict>>> {
    trace
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("iter", r.iter)?;
            d.set_item("mspbe_gap", r.mspbe_gap)?;
            d.set_item("consensus_err", r.consensus_err)?;
            d.set_item("tracking_err", r.tracking_err)?;
            d.set_item("v_norm", r.v_norm)?;
            Ok(d)
        })
        .collect()
}

/// Sample moments of a multi-agent policy evaluation problem.
#[pyclass(name = "Moments", module = "distiag_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMoments {
    inner: distiag::moments::Moments,
}

#[pymethods]
impl PyMoments {
    /// Random MDP, policy, features and trajectory from `seed`.
    #[staticmethod]
    #[pyo3(signature = (seed, n_agents, n_samples, dim, rho))]
    fn generate(
        seed: u64,
        n_agents: usize,
        n_samples: usize,
        dim: usize,
        rho: f64,
    ) -> PyResult<Self> {
        let inst = build_instance(&InstanceSpec::new(seed, n_agents, n_samples, dim, rho))
            .map_err(py_err)?;
        Ok(Self {
            inner: inst.moments,
        })
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        Ok(Self {
            inner: distiag::moments::Moments::from_json(s).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn rho(&self) -> f64 {
        self.inner.rho()
    }

    fn with_rho(&self, rho: f64) -> Self {
        Self {
            inner: self.inner.with_rho(rho),
        }
    }

    fn beta(&self) -> f64 {
        self.inner.beta()
    }

    fn a_hat(&self) -> Vec<Vec<f64>> {
        rows(self.inner.a_hat())
    }

    fn c_hat(&self) -> Vec<Vec<f64>> {
        rows(self.inner.c_hat())
    }

    fn b_hat(&self, agent: usize) -> PyResult<Vec<f64>> {
        if agent >= self.inner.n_agents() {
            return Err(PyValueError::new_err("agent out of range"));
        }
        Ok(self.inner.b_hat(agent).iter().copied().collect())
    }

    /// Minimizer of the regularized MSPBE.
    fn theta_star(&self) -> PyResult<Vec<f64>> {
        let sp = self
            .inner
            .solve_saddle_point(self.inner.beta())
            .map_err(py_err)?;
        Ok(sp.theta.iter().copied().collect())
    }

    fn mspbe(&self, theta: Vec<f64>) -> PyResult<f64> {
        self.inner
            .mspbe(&vector(theta, self.inner.dim(), "theta")?)
            .map_err(py_err)
    }

    fn mspbe_agent(&self, theta: Vec<f64>, agent: usize) -> PyResult<f64> {
        self.inner
            .mspbe_agent(&vector(theta, self.inner.dim(), "theta")?, agent)
            .map_err(py_err)
    }

    fn j_value(&self, p: usize, agent: usize, theta: Vec<f64>, w: Vec<f64>) -> PyResult<f64> {
        self.check(p, agent)?;
        let d = self.inner.dim();
        Ok(self
            .inner
            .j_value(p, agent, &vector(theta, d, "theta")?, &vector(w, d, "w")?))
    }

    fn grad_theta(&self, p: usize, theta: Vec<f64>, w: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(p, 0)?;
        let d = self.inner.dim();
        Ok(self
            .inner
            .grad_theta(p, &vector(theta, d, "theta")?, &vector(w, d, "w")?)
            .iter()
            .copied()
            .collect())
    }

    fn grad_w(&self, p: usize, agent: usize, theta: Vec<f64>, w: Vec<f64>) -> PyResult<Vec<f64>> {
        self.check(p, agent)?;
        let d = self.inner.dim();
        Ok(self
            .inner
            .grad_w(p, agent, &vector(theta, d, "theta")?, &vector(w, d, "w")?)
            .iter()
            .copied()
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Moments(n_agents={}, n_samples={}, dim={}, rho={})",
            self.inner.n_agents(),
            self.inner.n_samples(),
            self.inner.dim(),
            self.inner.rho()
        )
    }
}

impl PyMoments {
    fn check(&self, p: usize, agent: usize) -> PyResult<()> {
        if p >= self.inner.n_samples() || agent >= self.inner.n_agents() {
            return Err(PyValueError::new_err("sample or agent index out of range"));
        }
        Ok(())
    }
}

/// Metropolis-Hastings mixing matrix of a communication graph.
#[pyclass(name = "Mixing", module = "distiag_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMixing {
    inner: distiag::network::MixingMatrix,
}

#[pymethods]
impl PyMixing {
    /// `topology` is `complete`, `ring`, `path`, `er-log` or `er:<p>`.
    #[new]
    #[pyo3(signature = (topology, n_agents, seed = 0))]
    fn new(topology: &str, n_agents: usize, seed: u64) -> PyResult<Self> {
        let t: Topology = topology.parse().map_err(py_err)?;
        Ok(Self {
            inner: build_mixing(&t, n_agents, seed).map_err(py_err)?,
        })
    }

    /// Spectral norm of `W - 11^T / N`; smaller mixes faster.
    #[getter]
    fn lambda_(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn n_agents(&self) -> usize {
        self.inner.n_agents()
    }

    fn weights(&self) -> Vec<Vec<f64>> {
        rows(self.inner.weights())
    }
}

/// PD-DistIAG state together with its problem, graph and schedule.
#[pyclass(name = "Solver", module = "distiag_py")]
struct PySolver {
    moments: distiag::moments::Moments,
    mixing: distiag::network::MixingMatrix,
    oracle: SaddlePoint,
    schedule: Schedule,
    state: distiag::solver::SolverState,
}

#[pymethods]
impl PySolver {
    /// `gamma2 = None` couples the dual step to the primal one through beta.
    #[new]
    #[pyo3(signature = (moments, mixing, gamma1, gamma2 = None, schedule = "cyclic", seed = 0))]
    fn new(
        moments: &PyMoments,
        mixing: &PyMixing,
        gamma1: f64,
        gamma2: Option<f64>,
        schedule: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let mo = moments.inner.clone();
        let dual = gamma2.map_or(DualStep::AutoBeta, DualStep::Fixed);
        let state = init_state(&mo, &mixing.inner, gamma1, dual, None, None).map_err(py_err)?;
        let oracle = mo.solve_saddle_point(mo.beta()).map_err(py_err)?;
        let schedule = self::schedule(schedule, seed, mo.n_samples())?;
        Ok(Self {
            moments: mo,
            mixing: mixing.inner.clone(),
            oracle,
            schedule,
            state,
        })
    }

    /// One iteration; returns the sample index used.
    fn step(&mut self) -> PyResult<usize> {
        step(
            &mut self.state,
            &self.moments,
            &self.mixing,
            &mut self.schedule,
        )
        .map_err(py_err)
    }

    /// Run `iterations` more iterations and return the recorded trace.
    #[pyo3(signature = (iterations, record_every = None, stop_below = None))]
    fn run<'py>(
        &mut self,
        py: Python<'py>,
        iterations: u64,
        record_every: Option<u64>,
        stop_below: Option<f64>,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let mut opts = RunOptions::iterations(iterations);
        opts.record_every = record_every.unwrap_or(self.moments.n_samples() as u64);
        opts.stop_below = stop_below;
        let tr = run_with(
            &mut self.state,
            &self.moments,
            &self.mixing,
            &mut self.schedule,
            &self.oracle,
            &opts,
        )
        .map_err(py_err)?;
        trace_dicts(py, &tr)
    }

    /// Average over agents of the MSPBE gap.
    fn mean_gap(&self) -> f64 {
        GapOracle::new(&self.moments, &self.oracle).mean_gap(&self.state.theta)
    }

    /// Index of the next iteration, starting at 1.
    #[getter]
    fn t(&self) -> u64 {
        self.state.t
    }

    #[getter]
    fn gamma1(&self) -> f64 {
        self.state.gamma1
    }

    #[getter]
    fn gamma2(&self) -> f64 {
        self.state.gamma2
    }

    #[getter]
    fn theta(&self) -> Vec<Vec<f64>> {
        self.state
            .theta
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect()
    }

    #[getter]
    fn w(&self) -> Vec<Vec<f64>> {
        self.state
            .w
            .iter()
            .map(|v| v.iter().copied().collect())
            .collect()
    }

    fn theta_mean(&self) -> Vec<f64> {
        self.state.theta_mean().iter().copied().collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.state.to_json().map_err(py_err)
    }
}

/// Largest certified primal step, with the search diagnostics.
#[pyfunction]
fn certify<'py>(
    py: Python<'py>,
    moments: &PyMoments,
    mixing: &PyMixing,
) -> PyResult<Bound<'py, PyDict>> {
    let c = certify_step_size(&moments.inner, &mixing.inner).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("gamma1", c.gamma1)?;
    d.set_item("sigma", c.sigma)?;
    d.set_item("gamma_max", c.gamma_max)?;
    d.set_item("best_radius", c.best_radius)?;
    d.set_item("best_gamma", c.best_gamma)?;
    d.set_item("contractive_gamma", c.contractive_gamma)?;
    d.set_item("radius_lower_bound", c.radius_lower_bound)?;
    d.set_item("beta", c.beta)?;
    Ok(d)
}

/// Run `pdbg`, `saga` or `gtd2` from zero for `epochs` epochs and return
/// `(theta, trace)`. Steps default to `0.005 / lambda_max(A)` and `5e-3`.
/// GTD2 is scored against the unregularized problem.
#[pyfunction]
#[pyo3(signature = (moments, method, epochs, gamma1 = None, gamma2 = None, schedule = "cyclic", seed = 0, decay_epochs = None, record_every = 1))]
#[allow(clippy::too_many_arguments)]
fn run_baseline<'py>(
    py: Python<'py>,
    moments: &PyMoments,
    method: &str,
    epochs: u64,
    gamma1: Option<f64>,
    gamma2: Option<f64>,
    schedule: &str,
    seed: u64,
    decay_epochs: Option<f64>,
    record_every: u64,
) -> PyResult<(Vec<f64>, Vec<Bound<'py, PyDict>>)> {
    let mo = &moments.inner;
    let d = mo.dim();
    let g1 = gamma1.unwrap_or_else(|| 0.005 / spectral_radius(mo.a_hat()));
    let g2 = gamma2.unwrap_or(5e-3);
    let mut opts = BaselineOptions::epochs(epochs);
    opts.record_every = record_every.max(1);
    let mut sch = self::schedule(schedule, seed, mo.n_samples())?;
    let (state, trace) = match method {
        "pdbg" => {
            let oracle = mo.solve_saddle_point(mo.beta()).map_err(py_err)?;
            let mut st = CentralState::zeros(d);
            let tr = run_pdbg(&mut st, mo, &oracle, g1, g2, &opts).map_err(py_err)?;
            (st, tr)
        }
        "saga" => {
            let oracle = mo.solve_saddle_point(mo.beta()).map_err(py_err)?;
            let mut st = CentralState::with_saga(mo, Vector::zeros(d), Vector::zeros(d));
            let tr = run_saga(&mut st, mo, &oracle, &mut sch, g1, g2, &opts).map_err(py_err)?;
            (st, tr)
        }
        "gtd2" => {
            let mo0 = mo.with_rho(0.0);
            let oracle = mo0.solve_saddle_point(mo0.beta()).map_err(py_err)?;
            let steps = Gtd2Steps {
                alpha: g1,
                beta_step: g2,
                decay_epochs,
            };
            let mut st = CentralState::zeros(d);
            let tr = run_gtd2(&mut st, &mo0, &oracle, &mut sch, &steps, &opts).map_err(py_err)?;
            (st, tr)
        }
        other => return Err(PyValueError::new_err(format!("unknown baseline `{other}`"))),
    };
    Ok((
        state.theta.iter().copied().collect(),
        trace_dicts(py, &trace)?,
    ))
}

#[pymodule]
fn distiag_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMoments>()?;
    m.add_class::<PyMixing>()?;
    m.add_class::<PySolver>()?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(run_baseline, m)?)?;
    m.add("DivergenceError", m.py().get_type::<DivergenceError>())?;
    m.add(
        "RankDeficientError",
        m.py().get_type::<RankDeficientError>(),
    )?;
    Ok(())
}
