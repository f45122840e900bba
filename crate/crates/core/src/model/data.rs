use std::path::Path;

use crate::error::{Error, Result};

/// An `n × d` block of observations stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DataMatrix {
    n: usize,
    d: usize,
    values: Vec<f64>,
    columns: Vec<String>,
}

fn default_columns(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("x{j}")).collect()
}

impl DataMatrix {
    /// Builds a matrix from a flat row-major buffer. Every value must be finite.
    pub fn new(n: usize, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * d {
            return Err(Error::DimensionMismatch { expected: n * d, got: values.len() });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: pos / d.max(1), col: pos % d.max(1) });
        }
        Ok(Self { n, d, values, columns: default_columns(d) })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.as_ref().len());
        let mut values = Vec::with_capacity(rows.len() * d);
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: row.len() });
            }
            values.extend_from_slice(row);
        }
        Self::new(rows.len(), d, values)
    }

    pub fn empty(d: usize) -> Self {
        Self { n: 0, d, values: Vec::new(), columns: default_columns(d) }
    }

    /// Internal constructor for buffers already known to be finite.
    pub(crate) fn from_raw(n: usize, d: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n * d);
        Self { n, d, values, columns: default_columns(d) }
    }

    pub fn with_columns(mut self, columns: Vec<String>) -> Result<Self> {
        if columns.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: columns.len() });
        }
        self.columns = columns;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        (0..self.n).map(move |i| self.row(i))
    }

    /// Gathers the given rows (repetitions allowed) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self { n: indices.len(), d: self.d, values, columns: self.columns.clone() }
    }

    /// Returns a copy with columns reordered: output column `j` is input column `order[j]`.
    pub fn permute_columns(&self, order: &[usize]) -> Result<Self> {
        if order.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: order.len() });
        }
        let mut values = Vec::with_capacity(self.values.len());
        for row in self.rows() {
            values.extend(order.iter().map(|&j| row[j]));
        }
        let columns = order.iter().map(|&j| self.columns[j].clone()).collect();
        Ok(Self { n: self.n, d: self.d, values, columns })
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for row in self.rows() {
            for (acc, v) in m.iter_mut().zip(row) {
                *acc += v;
            }
        }
        let n = self.n.max(1) as f64;
        m.iter_mut().for_each(|v| *v /= n);
        m
    }

    /// Reads a headered CSV in which every column is numeric.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        crate::io::read_numeric_csv(path.as_ref(), None).map(|(data, _)| data)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_data_csv(self, path.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_ragged_and_non_finite_rows() {
        assert!(DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0]]).is_err());
        let err = DataMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 1, col: 1 }));
    }

    #[test]
    fn select_and_permute() {
        let x = DataMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let y = x.select_rows(&[1, 1, 0]);
        assert_eq!(y.values(), &[3.0, 4.0, 3.0, 4.0, 1.0, 2.0]);
        let z = x.permute_columns(&[1, 0]).unwrap();
        assert_eq!(z.row(0), &[2.0, 1.0]);
        assert_eq!(z.columns(), &["x2".to_string(), "x1".to_string()]);
        assert_eq!(x.mean(), vec![2.0, 3.0]);
    }
}
