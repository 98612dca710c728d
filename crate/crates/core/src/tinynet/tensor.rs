use serde::{Deserialize, Serialize};

use crate::field::ScalarField;

/// Dense row-major `f64` array. Activations are `[c, h, w]`, conv kernels
/// `[out, in, k, k]`, biases `[out]`, scalars `[]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(v: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![v],
        }
    }

    pub fn from_field(f: &ScalarField) -> Self {
        Self {
            shape: vec![f.channels(), f.height(), f.width()],
            data: f.data().to_vec(),
        }
    }

    pub fn to_field(&self) -> ScalarField {
        let (c, h, w) = self.dims3();
        ScalarField::from_vec(c, h, w, self.data.clone()).expect("consistent tensor")
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, height, width)` of an activation tensor.
    pub fn dims3(&self) -> (usize, usize, usize) {
        assert_eq!(self.shape.len(), 3, "expected a [c, h, w] tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1], self.shape[2])
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1);
        self.data[0]
    }
}
