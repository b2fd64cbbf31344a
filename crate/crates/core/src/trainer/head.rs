use serde::{Deserialize, Serialize};

use crate::error::{I2pError, Result};

/// Single-logit affine classifier `z = w · f + b`; fake is the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl ClassifierHead {
    pub fn zeros(d: usize) -> Self {
        ClassifierHead {
            weight: vec![0.0; d],
            bias: 0.0,
        }
    }

    pub fn logit(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.weight.len() {
            return Err(I2pError::Shape(format!(
                "head expects {} features, got {}",
                self.weight.len(),
                f.len()
            )));
        }
        Ok(self.weight.iter().zip(f).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }
}
