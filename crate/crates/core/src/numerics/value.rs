use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Handle to a node on a specific [`Tape`](super::Tape) generation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId {
    pub(crate) tape: u64,
    pub(crate) index: usize,
}

/// Dense row-major array of `f64` with shape metadata.
///
/// A value produced while a tape is recording carries a node handle so the
/// tape can route gradients back to it. Values built any other way are
/// plain data.
#[derive(Clone, Serialize, Deserialize)]
pub struct Value {
    shape: Vec<usize>,
    data: Vec<f64>,
    #[serde(skip)]
    node: Option<NodeId>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Value {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!("zero extent in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape("Value::new", &shape, &[data.len()]));
        }
        Ok(Value {
            shape,
            data,
            node: None,
        })
    }

    pub fn scalar(x: f64) -> Self {
        Value {
            shape: Vec::new(),
            data: vec![x],
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Value {
            shape: shape.to_vec(),
            data: vec![0.0; numel(shape)],
            node: None,
        }
    }

    pub fn filled(shape: &[usize], x: f64) -> Self {
        Value {
            shape: shape.to_vec(),
            data: vec![x; numel(shape)],
            node: None,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Value {
            shape: vec![data.len()],
            data,
            node: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Value::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::invalid("ragged rows"));
        }
        Value::matrix(rows.len(), cols, rows.concat())
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Value {
            shape: vec![n, n],
            data,
            node: None,
        }
    }

    pub(crate) fn with_node(shape: Vec<usize>, data: Vec<f64>, node: Option<NodeId>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Value { shape, data, node }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    /// Same data, no tape handle.
    pub fn detach(&self) -> Value {
        Value {
            shape: self.shape.clone(),
            data: self.data.clone(),
            node: None,
        }
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    /// Element `(i, j)` of a matrix.
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }
}

/// Compares shape and data; tape handles are ignored.
impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Value")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .field("recorded", &self.node.is_some())
            .finish()
    }
}

static NEXT_PARAM: AtomicU64 = AtomicU64::new(1);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_PARAM.fetch_add(1, Ordering::Relaxed))
    }
}

/// A trainable array. Every instance (including clones) has its own id, so
/// gradients never alias between an online network and its copy.
#[derive(Serialize, Deserialize)]
pub struct Param {
    #[serde(skip, default = "ParamId::fresh")]
    id: ParamId,
    value: Value,
}

impl Param {
    pub fn new(value: Value) -> Self {
        Param {
            id: ParamId::fresh(),
            value: value.detach(),
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Value {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.value.data_mut()
    }

    /// Overwrites the data, keeping the id.
    pub fn assign(&mut self, other: &Param) -> Result<()> {
        if other.shape() != self.shape() {
            return Err(Error::shape("Param::assign", self.shape(), other.shape()));
        }
        self.value.data_mut().copy_from_slice(other.data());
        Ok(())
    }
}

impl Clone for Param {
    fn clone(&self) -> Self {
        Param::new(self.value.clone())
    }
}

impl fmt::Debug for Param {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Param")
            .field("id", &self.id)
            .field("shape", &self.value.shape)
            .finish()
    }
}
