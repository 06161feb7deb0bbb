use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    Mse,
    /// Huber loss with unit threshold.
    Huber,
}

impl Loss {
    pub fn value(self, prediction: f64, target: f64) -> f64 {
        let d = prediction - target;
        match self {
            Loss::Mse => d * d,
            Loss::Huber => {
                if d.abs() <= 1.0 {
                    0.5 * d * d
                } else {
                    d.abs() - 0.5
                }
            }
        }
    }

    /// d(loss)/d(prediction).
    pub fn gradient(self, prediction: f64, target: f64) -> f64 {
        let d = prediction - target;
        match self {
            Loss::Mse => 2.0 * d,
            Loss::Huber => d.clamp(-1.0, 1.0),
        }
    }
}
