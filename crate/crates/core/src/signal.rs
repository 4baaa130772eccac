//! Deterministic reference signals `U(k)`, indexed from `k = 1`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row of a piecewise-constant table: `value` holds from `from_k` until
/// the next row starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub from_k: usize,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSignal {
    /// `U(k) = 0` with the given dimension.
    Zero { dim: usize },
    /// `(50 cos²(0.5k), 50 tanh(3k), -70 sin(0.1k))`.
    Reactor,
    PiecewiseConstant { segments: Vec<Segment> },
}

impl InputSignal {
    pub fn dim(&self) -> usize {
        match self {
            InputSignal::Zero { dim } => *dim,
            InputSignal::Reactor => 3,
            InputSignal::PiecewiseConstant { segments } => {
                segments.first().map_or(0, |s| s.value.len())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let InputSignal::PiecewiseConstant { segments } = self {
            let Some(first) = segments.first() else {
                return Err(Error::InvalidArgument("empty piecewise-constant table".into()));
            };
            if first.from_k != 1 {
                return Err(Error::InvalidArgument(
                    "piecewise-constant table must start at k = 1".into(),
                ));
            }
            for w in segments.windows(2) {
                if w[1].from_k <= w[0].from_k {
                    return Err(Error::InvalidArgument(
                        "piecewise-constant segments must have increasing from_k".into(),
                    ));
                }
            }
            let dim = first.value.len();
            if segments.iter().any(|s| s.value.len() != dim) {
                return Err(Error::InvalidArgument(
                    "piecewise-constant values must share one dimension".into(),
                ));
            }
        }
        Ok(())
    }

    /// `U(k)` for `k >= 1`.
    pub fn at(&self, k: usize) -> DVector<f64> {
        match self {
            InputSignal::Zero { dim } => DVector::zeros(*dim),
            InputSignal::Reactor => {
                let t = k as f64;
                let c = (0.5 * t).cos();
                DVector::from_vec(vec![50.0 * c * c, 50.0 * (3.0 * t).tanh(), -70.0 * (0.1 * t).sin()])
            }
            InputSignal::PiecewiseConstant { segments } => {
                let seg = segments
                    .iter()
                    .rev()
                    .find(|s| s.from_k <= k)
                    .unwrap_or(&segments[0]);
                DVector::from_vec(seg.value.clone())
            }
        }
    }

    /// `[U(1), …, U(len)]`.
    pub fn sequence(&self, len: usize) -> Vec<DVector<f64>> {
        (1..=len).map(|k| self.at(k)).collect()
    }
}
