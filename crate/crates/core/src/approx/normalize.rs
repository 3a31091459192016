use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

/// Per-column affine standardization of network inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn fit(data: ArrayView2<'_, f64>) -> Self {
        if data.nrows() == 0 {
            return Self::identity(data.ncols());
        }
        let mean = data.mean_axis(Axis(0)).expect("non-empty");
        let std = data
            .std_axis(Axis(0), 0.0)
            .mapv(|s| if s < 1e-12 { 1.0 } else { s });
        Self { mean, std }
    }

    pub fn transform(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        (&x - &self.mean) / &self.std
    }

    /// Chain rule from the standardized input back to the raw input.
    pub fn backprop(&self, d_norm: &Array2<f64>) -> Array2<f64> {
        d_norm / &self.std
    }
}
