//! Communication graphs and Metropolis-Hastings mixing matrices.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_symmetric, sym_extremes, Matrix, Vector};

const MAX_ER_ATTEMPTS: usize = 1000;
const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Topology {
    Complete,
    Ring,
    Path,
    /// Erdos-Renyi graph with edge probability `p`, resampled until connected.
    ErdosRenyi {
        p: f64,
    },
    /// Erdos-Renyi with `p = 1.01 log N / N`.
    ErdosRenyiLog,
    Custom(EdgeList),
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::Complete => write!(f, "complete"),
            Topology::Ring => write!(f, "ring"),
            Topology::Path => write!(f, "path"),
            Topology::ErdosRenyi { p } => write!(f, "er:{p}"),
            Topology::ErdosRenyiLog => write!(f, "er-log"),
            Topology::Custom(_) => write!(f, "custom"),
        }
    }
}

/// Parses the [`Display`](fmt::Display) form. Custom graphs have no text
/// form; load them with [`EdgeList::from_json`].
impl FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "complete" => Ok(Topology::Complete),
            "ring" => Ok(Topology::Ring),
            "path" => Ok(Topology::Path),
            "er-log" => Ok(Topology::ErdosRenyiLog),
            other => {
                let p = other
                    .strip_prefix("er:")
                    .and_then(|p| p.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parameter(format!("unknown topology `{other}`")))?;
                if p > 0.0 && p <= 1.0 {
                    Ok(Topology::ErdosRenyi { p })
                } else {
                    Err(Error::Parameter(format!(
                        "edge probability must lie in (0, 1], got {p}"
                    )))
                }
            }
        }
    }
}

/// Undirected edge list, the JSON exchange format for custom topologies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeList {
    pub n_nodes: usize,
    pub edges: Vec<[usize; 2]>,
}

impl EdgeList {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Symmetric doubly stochastic `W` together with its connectivity
/// `lambda = lambda_max(W - 11'/N)`.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: Matrix,
    lambda: f64,
    topology: Topology,
    edges: EdgeList,
    /// Nonzero entries of each row in column order, including the diagonal.
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    /// Validates a caller-supplied symmetric doubly stochastic matrix.
    pub fn from_weights(w: Matrix) -> Result<Self> {
        let n = w.nrows();
        if n == 0 || !w.is_square() {
            return Err(Error::Dimension(
                "mixing matrix must be square and non-empty".into(),
            ));
        }
        if w.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::Parameter("mixing matrix must be nonnegative".into()));
        }
        for k in 0..n {
            let (r, c) = (w.row(k).sum(), w.column(k).sum());
            if (r - 1.0).abs() > STOCHASTIC_TOL || (c - 1.0).abs() > STOCHASTIC_TOL {
                return Err(Error::Parameter(format!("row/column {k} sums to {r}/{c}")));
            }
        }
        let lambda = lambda_of(&w)?;
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if w[(i, j)] != 0.0 {
                    edges.push([i, j]);
                }
            }
        }
        let edges = EdgeList { n_nodes: n, edges };
        let rows = sparse_rows(&w);
        Ok(Self {
            w,
            lambda,
            topology: Topology::Custom(edges.clone()),
            edges,
            rows,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.w.nrows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.w
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn edges(&self) -> &EdgeList {
        &self.edges
    }

    /// Row `i` of `W` as `(j, W_ij)` pairs over the nonzero entries.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    /// `out_i = sum_j W_ij x_j`, summed in column order.
    pub fn mix_into(&self, xs: &[Vector], out: &mut [Vector]) {
        for (i, o) in out.iter_mut().enumerate() {
            o.fill(0.0);
            for &(j, wij) in &self.rows[i] {
                o.axpy(wij, &xs[j], 1.0);
            }
        }
    }

    pub fn mix(&self, xs: &[Vector]) -> Vec<Vector> {
        let mut out = vec![Vector::zeros(xs[0].len()); xs.len()];
        self.mix_into(xs, &mut out);
        out
    }
}

fn sparse_rows(w: &Matrix) -> Vec<Vec<(usize, f64)>> {
    (0..w.nrows())
        .map(|i| {
            (0..w.ncols())
                .filter(|&j| w[(i, j)] != 0.0)
                .map(|j| (j, w[(i, j)]))
                .collect()
        })
        .collect()
}

/// `lambda_max(W - 11'/N)` for a symmetric `W`.
pub fn lambda_of(w: &Matrix) -> Result<f64> {
    if !is_symmetric(w, 1e-12) {
        return Err(Error::Parameter(
            "lambda_of requires a symmetric mixing matrix".into(),
        ));
    }
    let n = w.nrows();
    let shifted = w.map(|x| x - 1.0 / n as f64);
    Ok(sym_extremes(&shifted).1)
}

pub fn build_mixing(topology: &Topology, n: usize, seed: u64) -> Result<MixingMatrix> {
    if n == 0 {
        return Err(Error::Parameter("need at least one agent".into()));
    }
    let edges = match topology {
        Topology::Complete => (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| [i, j]))
            .collect(),
        Topology::Path => (1..n).map(|i| [i - 1, i]).collect(),
        Topology::Ring => {
            let mut e: Vec<[usize; 2]> = (1..n).map(|i| [i - 1, i]).collect();
            if n > 2 {
                e.push([n - 1, 0]);
            }
            e
        }
        Topology::ErdosRenyi { p } => erdos_renyi(n, *p, seed)?,
        Topology::ErdosRenyiLog => {
            if n == 1 {
                Vec::new()
            } else {
                erdos_renyi(n, er_log_probability(n), seed)?
            }
        }
        Topology::Custom(list) => {
            if list.n_nodes != n {
                return Err(Error::Topology(format!(
                    "edge list has {} nodes, expected {n}",
                    list.n_nodes
                )));
            }
            for &[i, j] in &list.edges {
                if i >= n || j >= n || i == j {
                    return Err(Error::Topology(format!("invalid edge ({i}, {j})")));
                }
            }
            list.edges.clone()
        }
    };
    if !is_connected(n, &edges) {
        return Err(Error::Topology(format!(
            "{topology} graph on {n} nodes is disconnected"
        )));
    }
    let w = metropolis_weights(n, &edges);
    let lambda = lambda_of(&w)?;
    let rows = sparse_rows(&w);
    Ok(MixingMatrix {
        w,
        lambda,
        topology: topology.clone(),
        edges: EdgeList { n_nodes: n, edges },
        rows,
    })
}

/// `1.01 log N / N`, capped at one.
pub fn er_log_probability(n: usize) -> f64 {
    (1.01 * (n as f64).ln() / n as f64).min(1.0)
}

fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Vec<[usize; 2]>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Parameter(format!(
            "Erdos-Renyi probability must lie in (0,1], got {p}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ER_ATTEMPTS {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push([i, j]);
                }
            }
        }
        if is_connected(n, &edges) {
            return Ok(edges);
        }
    }
    Err(Error::Topology(format!(
        "no connected Erdos-Renyi(p={p}) graph on {n} nodes after {MAX_ER_ATTEMPTS} attempts"
    )))
}

fn is_connected(n: usize, edges: &[[usize; 2]]) -> bool {
    let mut adj = vec![Vec::new(); n];
    for &[i, j] in edges {
        adj[i].push(j);
        adj[j].push(i);
    }
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen.into_iter().all(|x| x)
}

/// `W_ij = 1 / (1 + max(deg_i, deg_j))` on edges, remainder on the diagonal.
fn metropolis_weights(n: usize, edges: &[[usize; 2]]) -> Matrix {
    let mut deg = vec![0usize; n];
    for &[i, j] in edges {
        deg[i] += 1;
        deg[j] += 1;
    }
    let mut w = Matrix::zeros(n, n);
    for &[i, j] in edges {
        let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
        w[(i, j)] = v;
        w[(j, i)] = v;
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = 1.0 - off;
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn complete_graph_is_uniform_averaging() {
        let m = build_mixing(&Topology::Complete, 5, 0).unwrap();
        assert!((m.weights() - Matrix::from_element(5, 5, 0.2)).amax() < 1e-15);
        assert!(m.lambda().abs() < 1e-12);
    }

    #[test]
    fn singleton() {
        let m = build_mixing(&Topology::Ring, 1, 0).unwrap();
        assert_eq!(m.weights(), &Matrix::from_element(1, 1, 1.0));
        assert!(m.lambda().abs() < 1e-15);
    }

    #[test]
    fn ring_of_four() {
        // circulant with weights 1/3: eigenvalues 1/3 + (2/3) cos(pi k / 2)
        let m = build_mixing(&Topology::Ring, 4, 0).unwrap();
        assert!(
            (m.weights() - Matrix::from_element(4, 4, 1.0 / 3.0))
                .iter()
                .filter(|x| x.abs() > 1e-15)
                .count()
                == 4
        );
        assert!((m.lambda() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn identity_has_unit_lambda() {
        assert!((lambda_of(&Matrix::identity(2, 2)).unwrap() - 1.0).abs() < 1e-15);
        assert!(
            lambda_of(&Matrix::from_element(3, 3, 1.0 / 3.0))
                .unwrap()
                .abs()
                < 1e-15
        );
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let w = Matrix::from_row_slice(2, 2, &[0.5, 0.5, 0.2, 0.8]);
        assert!(lambda_of(&w).is_err());
    }

    #[test]
    fn longer_rings_mix_slower() {
        let a = build_mixing(&Topology::Ring, 10, 0).unwrap().lambda();
        let b = build_mixing(&Topology::Ring, 50, 0).unwrap().lambda();
        assert!(b > a && b < 1.0);
    }

    #[test]
    fn er_is_connected_and_seeded() {
        let a = build_mixing(&Topology::ErdosRenyi { p: 0.2 }, 20, 3).unwrap();
        let b = build_mixing(&Topology::ErdosRenyi { p: 0.2 }, 20, 3).unwrap();
        assert_eq!(a.weights(), b.weights());
        assert!(a.lambda() < 1.0);
    }

    #[test]
    fn hopeless_er_reports_topology_error() {
        let r = build_mixing(&Topology::ErdosRenyi { p: 1e-6 }, 30, 0);
        assert!(matches!(r, Err(Error::Topology(_))));
    }

    #[test]
    fn disconnected_custom_graph() {
        let list = EdgeList {
            n_nodes: 4,
            edges: vec![[0, 1], [2, 3]],
        };
        assert!(matches!(
            build_mixing(&Topology::Custom(list), 4, 0),
            Err(Error::Topology(_))
        ));
    }

    #[test]
    fn edge_list_json() {
        let list = EdgeList {
            n_nodes: 3,
            edges: vec![[0, 1], [1, 2]],
        };
        let back = EdgeList::from_json(&list.to_json().unwrap()).unwrap();
        assert_eq!(back, list);
        let m = build_mixing(&Topology::Custom(back), 3, 0).unwrap();
        assert_eq!(m.edges(), &list);
    }

    #[test]
    fn topology_text_round_trip() {
        for t in [
            Topology::Complete,
            Topology::Ring,
            Topology::Path,
            Topology::ErdosRenyiLog,
            Topology::ErdosRenyi { p: 0.25 },
        ] {
            assert_eq!(t.to_string().parse::<Topology>().unwrap(), t);
        }
        for bad in ["star", "er:0", "er:1.5", "er:x", "custom"] {
            assert!(bad.parse::<Topology>().is_err(), "{bad}");
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn topology() -> impl Strategy<Value = Topology> {
            prop_oneof![
                Just(Topology::Complete),
                Just(Topology::Ring),
                Just(Topology::Path),
                Just(Topology::ErdosRenyiLog),
                (0.3f64..0.9).prop_map(|p| Topology::ErdosRenyi { p }),
            ]
        }

        fn agents_and_rows() -> impl Strategy<Value = (usize, Vec<Vector>)> {
            (2usize..12).prop_flat_map(|n| {
                let row = proptest::collection::vec(-10.0f64..10.0, 3).prop_map(Vector::from_vec);
                (Just(n), proptest::collection::vec(row, n))
            })
        }

        fn dispersion(xs: &[Vector]) -> f64 {
            let mean = crate::linalg::mean_of(xs);
            xs.iter()
                .map(|x| (x - &mean).norm_squared())
                .sum::<f64>()
                .sqrt()
        }

        proptest! {
            #[test]
            fn mixing_contracts_dispersion(top in topology(), (n, xs) in agents_and_rows(), seed in 0u64..1000) {
                let mix = build_mixing(&top, n, seed).unwrap();
                let out = mix.mix(&xs);
                prop_assert!(dispersion(&out) <= mix.lambda() * dispersion(&xs) + 1e-10);
            }

            #[test]
            fn mixing_preserves_the_mean(top in topology(), (n, xs) in agents_and_rows(), seed in 0u64..1000) {
                let mix = build_mixing(&top, n, seed).unwrap();
                let before = crate::linalg::mean_of(&xs);
                let after = crate::linalg::mean_of(&mix.mix(&xs));
                prop_assert!((before - after).amax() < 1e-12);
            }

            #[test]
            fn weights_are_doubly_stochastic(top in topology(), n in 1usize..15, seed in 0u64..1000) {
                let mix = build_mixing(&top, n, seed).unwrap();
                let w = mix.weights();
                prop_assert!(w.iter().all(|&x| x >= 0.0));
                for k in 0..n {
                    prop_assert!((w.row(k).sum() - 1.0).abs() < 1e-12);
                    prop_assert!((w.column(k).sum() - 1.0).abs() < 1e-12);
                }
                prop_assert!(mix.lambda() < 1.0);
            }
        }
    }
}
