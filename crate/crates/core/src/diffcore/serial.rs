use serde::{Deserialize, Serialize};

use super::graph::Matrix;

/// JSON form of a matrix: shape plus row-major values.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MatrixData {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Matrix> for MatrixData {
    fn from(m: &Matrix) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.iter().copied().collect(),
        }
    }
}

impl MatrixData {
    pub fn into_matrix(self) -> Result<Matrix, String> {
        Matrix::from_shape_vec((self.rows, self.cols), self.data)
            .map_err(|e| format!("matrix data does not match its shape: {e}"))
    }
}

/// `#[serde(with = "matrix_serde")]` adapter for [`Matrix`] fields.
pub mod matrix_serde {
    use super::*;

    pub fn serialize<S: serde::Serializer>(m: &Matrix, s: S) -> Result<S::Ok, S::Error> {
        MatrixData::from(m).serialize(s)
    }

    pub fn deserialize<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Matrix, D::Error> {
        MatrixData::deserialize(d)?
            .into_matrix()
            .map_err(serde::de::Error::custom)
    }
}
