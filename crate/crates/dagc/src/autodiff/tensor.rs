use std::sync::Arc;

use crate::error::{Error, Result};

/// Position of a tensor on a tape. The tape id guards against mixing
/// handles from different (e.g. previous-iteration) tapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRef {
    pub(crate) tape: u64,
    pub(crate) id: usize,
}

/// Dense row-major f64 matrix, immutable after construction.
///
/// A tensor optionally carries a handle into the tape that produced it;
/// plain value tensors (parameters between iterations, loaded data) carry
/// none and are interned as constants when an op consumes them.
#[derive(Debug, Clone)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    values: Arc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "tensor dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if rows * cols != values.len() {
            return Err(Error::InvalidParameter(format!(
                "tensor {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        Ok(Tensor {
            rows,
            cols,
            values: Arc::new(values),
            node: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols]).expect("positive dims")
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![1.0; rows * cols]).expect("positive dims")
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Tensor::new(rows, cols, vec![value; rows * cols]).expect("positive dims")
    }

    /// 1x1 tensor holding one value.
    pub fn scalar_valued(value: f64) -> Self {
        Tensor::new(1, 1, vec![value]).expect("positive dims")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::InvalidParameter("no rows given".into()));
        }
        let cols = rows[0].len();
        let mut values = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::InvalidParameter(format!(
                    "ragged rows: expected {cols} columns, got {}",
                    r.len()
                )));
            }
            values.extend_from_slice(r);
        }
        Tensor::new(rows.len(), cols, values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    /// Value of a 1x1 tensor.
    pub fn scalar(&self) -> Result<f64> {
        if self.rows != 1 || self.cols != 1 {
            return Err(Error::Contract {
                op: "scalar",
                msg: format!("expected 1x1 tensor, got {}x{}", self.rows, self.cols),
            });
        }
        Ok(self.values[0])
    }

    pub fn node(&self) -> Option<NodeRef> {
        self.node
    }

    /// Same values with the tape handle cleared.
    pub fn detached(&self) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            values: Arc::clone(&self.values),
            node: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Copy of the values with one entry shifted; used by finite differences.
    pub fn with_perturbed(&self, index: usize, delta: f64) -> Tensor {
        let mut v = (*self.values).clone();
        v[index] += delta;
        Tensor {
            rows: self.rows,
            cols: self.cols,
            values: Arc::new(v),
            node: None,
        }
    }

    pub(crate) fn shared_values(&self) -> Arc<Vec<f64>> {
        Arc::clone(&self.values)
    }

    pub(crate) fn from_shared(
        rows: usize,
        cols: usize,
        values: Arc<Vec<f64>>,
        node: Option<NodeRef>,
    ) -> Tensor {
        debug_assert_eq!(rows * cols, values.len());
        Tensor {
            rows,
            cols,
            values,
            node,
        }
    }
}
