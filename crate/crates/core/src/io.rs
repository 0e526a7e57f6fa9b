//! Versioned JSON container for MDPs, sample sets and moments.
//!
//! Every document carries a format tag, a version, a kind, a dimension
//! header and named arrays stored as a shape plus row-major data:
//!
//! ```json
//! {"format": "distiag", "version": 1, "kind": "sample-set",
//!  "dims": {"n_samples": 2, "n_agents": 1, "dim": 1},
//!  "scalars": {}, "indices": {"states": [0, 1, 0], "actions": [0, 0]},
//!  "arrays": {"features": {"shape": [3, 1], "data": [1.0, 0.5, 1.0]}, ...}}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::env::{SampleSet, TabularMdp};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, Vector};
use crate::moments::Moments;

pub const FORMAT_TAG: &str = "distiag";
pub const FORMAT_VERSION: u32 = 1;

/// A dense array of any rank, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseArray {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseArray {
    pub fn from_matrix(m: &Matrix) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    /// Stacks equally shaped matrices into a rank-3 array.
    pub fn from_matrices(ms: &[Matrix], rows: usize, cols: usize) -> Self {
        let mut data = Vec::with_capacity(ms.len() * rows * cols);
        for m in ms {
            data.extend(Self::from_matrix(m).data);
        }
        Self {
            shape: vec![ms.len(), rows, cols],
            data,
        }
    }

    /// Stacks equally long vectors as the rows of a matrix.
    pub fn from_rows(vs: &[Vector], cols: usize) -> Self {
        let mut data = Vec::with_capacity(vs.len() * cols);
        for v in vs {
            data.extend(v.iter());
        }
        Self {
            shape: vec![vs.len(), cols],
            data,
        }
    }

    fn check(&self, name: &str, rank: usize) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::Dimension(format!(
                "array '{name}' has rank {}, expected {rank}",
                self.shape.len()
            )));
        }
        let len: usize = self.shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Dimension(format!(
                "array '{name}' has shape {:?} but {} entries",
                self.shape,
                self.data.len()
            )));
        }
        Ok(())
    }

    pub fn to_matrix(&self, name: &str) -> Result<Matrix> {
        self.check(name, 2)?;
        Ok(Matrix::from_row_slice(
            self.shape[0],
            self.shape[1],
            &self.data,
        ))
    }

    pub fn to_matrices(&self, name: &str) -> Result<Vec<Matrix>> {
        self.check(name, 3)?;
        let (r, c) = (self.shape[1], self.shape[2]);
        Ok(self
            .data
            .chunks(r * c)
            .take(self.shape[0])
            .map(|ch| Matrix::from_row_slice(r, c, ch))
            .collect())
    }

    pub fn to_rows(&self, name: &str) -> Result<Vec<Vector>> {
        self.check(name, 2)?;
        let c = self.shape[1];
        Ok((0..self.shape[0])
            .map(|r| Vector::from_row_slice(&self.data[r * c..(r + 1) * c]))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub dims: BTreeMap<String, usize>,
    #[serde(default)]
    pub scalars: BTreeMap<String, f64>,
    #[serde(default)]
    pub indices: BTreeMap<String, Vec<usize>>,
    #[serde(default)]
    pub arrays: BTreeMap<String, DenseArray>,
}

impl Document {
    pub fn new(kind: &str) -> Self {
        Self {
            format: FORMAT_TAG.into(),
            version: FORMAT_VERSION,
            kind: kind.into(),
            dims: BTreeMap::new(),
            scalars: BTreeMap::new(),
            indices: BTreeMap::new(),
            arrays: BTreeMap::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and checks the format tag, version and kind.
    pub fn from_json(s: &str, kind: &str) -> Result<Self> {
        let doc: Self = serde_json::from_str(s)?;
        if doc.format != FORMAT_TAG {
            return Err(Error::Parameter(format!(
                "not a {FORMAT_TAG} document (format '{}')",
                doc.format
            )));
        }
        if doc.version != FORMAT_VERSION {
            return Err(Error::Parameter(format!(
                "unsupported document version {}",
                doc.version
            )));
        }
        if doc.kind != kind {
            return Err(Error::Parameter(format!(
                "expected a '{kind}' document, got '{}'",
                doc.kind
            )));
        }
        Ok(doc)
    }

    pub fn dim(&self, name: &str) -> Result<usize> {
        self.dims
            .get(name)
            .copied()
            .ok_or_else(|| Error::Parameter(format!("missing dimension '{name}'")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        self.scalars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Parameter(format!("missing scalar '{name}'")))
    }

    pub fn index_list(&self, name: &str) -> Result<&[usize]> {
        self.indices
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Parameter(format!("missing indices '{name}'")))
    }

    pub fn array(&self, name: &str) -> Result<&DenseArray> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Parameter(format!("missing array '{name}'")))
    }

    fn expect_shape(&self, name: &str, shape: &[usize]) -> Result<&DenseArray> {
        let a = self.array(name)?;
        if a.shape != shape {
            return Err(Error::Dimension(format!(
                "array '{name}' has shape {:?}, header says {shape:?}",
                a.shape
            )));
        }
        Ok(a)
    }
}

/// Types stored in the container.
pub trait Persist: Sized {
    const KIND: &'static str;

    fn to_document(&self) -> Document;

    fn from_document(doc: &Document) -> Result<Self>;

    fn to_json(&self) -> Result<String> {
        self.to_document().to_json()
    }

    fn from_json(s: &str) -> Result<Self> {
        Self::from_document(&Document::from_json(s, Self::KIND)?)
    }
}

impl Persist for TabularMdp {
    const KIND: &'static str = "mdp";

    fn to_document(&self) -> Document {
        let (s, a, n) = (self.n_states(), self.n_joint_actions(), self.n_agents());
        let mut doc = Document::new(Self::KIND);
        doc.dims.insert("n_states".into(), s);
        doc.dims.insert("n_joint_actions".into(), a);
        doc.dims.insert("n_agents".into(), n);
        doc.scalars.insert("discount".into(), self.discount());
        let tr: Vec<Matrix> = (0..a).map(|k| self.transition(k).clone()).collect();
        let rw: Vec<Matrix> = (0..n).map(|i| self.local_reward(i).clone()).collect();
        doc.arrays
            .insert("transition".into(), DenseArray::from_matrices(&tr, s, s));
        doc.arrays
            .insert("local_reward".into(), DenseArray::from_matrices(&rw, s, a));
        doc
    }

    fn from_document(doc: &Document) -> Result<Self> {
        let (s, a, n) = (
            doc.dim("n_states")?,
            doc.dim("n_joint_actions")?,
            doc.dim("n_agents")?,
        );
        let tr = doc
            .expect_shape("transition", &[a, s, s])?
            .to_matrices("transition")?;
        let rw = doc
            .expect_shape("local_reward", &[n, s, a])?
            .to_matrices("local_reward")?;
        TabularMdp::new(tr, rw, doc.scalar("discount")?)
    }
}

impl Persist for SampleSet {
    const KIND: &'static str = "sample-set";

    fn to_document(&self) -> Document {
        let (m, n, d) = (self.n_samples(), self.n_agents(), self.dim());
        let mut doc = Document::new(Self::KIND);
        doc.dims.insert("n_samples".into(), m);
        doc.dims.insert("n_agents".into(), n);
        doc.dims.insert("dim".into(), d);
        doc.indices.insert("states".into(), self.states.clone());
        doc.indices.insert("actions".into(), self.actions.clone());
        doc.arrays
            .insert("features".into(), DenseArray::from_matrix(&self.features));
        doc.arrays.insert(
            "local_rewards".into(),
            DenseArray::from_matrix(&self.local_rewards),
        );
        doc.arrays.insert(
            "global_rewards".into(),
            DenseArray {
                shape: vec![m],
                data: self.global_rewards.clone(),
            },
        );
        doc
    }

    fn from_document(doc: &Document) -> Result<Self> {
        let (m, n, d) = (doc.dim("n_samples")?, doc.dim("n_agents")?, doc.dim("dim")?);
        let global = doc.expect_shape("global_rewards", &[m])?;
        global.check("global_rewards", 1)?;
        let set = SampleSet {
            states: doc.index_list("states")?.to_vec(),
            actions: doc.index_list("actions")?.to_vec(),
            local_rewards: doc
                .expect_shape("local_rewards", &[m, n])?
                .to_matrix("local_rewards")?,
            global_rewards: global.data.clone(),
            features: doc
                .expect_shape("features", &[m + 1, d])?
                .to_matrix("features")?,
        };
        set.validate()?;
        Ok(set)
    }
}

impl Persist for Moments {
    const KIND: &'static str = "moments";

    fn to_document(&self) -> Document {
        let (m, n, d) = (self.n_samples(), self.n_agents(), self.dim());
        let mut doc = Document::new(Self::KIND);
        doc.dims.insert("n_samples".into(), m);
        doc.dims.insert("n_agents".into(), n);
        doc.dims.insert("dim".into(), d);
        doc.scalars.insert("discount".into(), self.discount());
        doc.scalars.insert("rho".into(), self.rho());
        let phi: Vec<Vector> = (0..m).map(|p| self.phi(p).clone()).collect();
        let psi: Vec<Vector> = (0..m).map(|p| self.psi(p).clone()).collect();
        let b: Vec<Vector> = (0..n).map(|i| self.b_hat(i).clone()).collect();
        doc.arrays
            .insert("phi".into(), DenseArray::from_rows(&phi, d));
        doc.arrays
            .insert("psi".into(), DenseArray::from_rows(&psi, d));
        doc.arrays
            .insert("rewards".into(), DenseArray::from_matrix(self.rewards()));
        doc.arrays
            .insert("a_hat".into(), DenseArray::from_matrix(self.a_hat()));
        doc.arrays
            .insert("c_hat".into(), DenseArray::from_matrix(self.c_hat()));
        doc.arrays
            .insert("b_hat".into(), DenseArray::from_rows(&b, d));
        doc
    }

    fn from_document(doc: &Document) -> Result<Self> {
        let (m, n, d) = (doc.dim("n_samples")?, doc.dim("n_agents")?, doc.dim("dim")?);
        Moments::from_stored(
            doc.scalar("discount")?,
            doc.scalar("rho")?,
            doc.expect_shape("phi", &[m, d])?.to_rows("phi")?,
            doc.expect_shape("psi", &[m, d])?.to_rows("psi")?,
            doc.expect_shape("rewards", &[m, n])?.to_matrix("rewards")?,
            doc.expect_shape("a_hat", &[d, d])?.to_matrix("a_hat")?,
            doc.expect_shape("c_hat", &[d, d])?.to_matrix("c_hat")?,
            doc.expect_shape("b_hat", &[n, d])?.to_rows("b_hat")?,
        )
    }
}
