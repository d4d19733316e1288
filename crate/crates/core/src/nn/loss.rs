use serde::{Deserialize, Serialize};

use super::{Matrix, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Classes(Vec<u32>),
    Values(Vec<f32>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn gather(&self, idx: &[usize]) -> Self {
        match self {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Values(v) => Targets::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    SoftmaxXent,
    Squared,
}

/// Mean loss over the batch and its gradient with respect to `outputs`.
pub fn loss<F: Scalar>(outputs: &Matrix<F>, targets: &Targets, kind: LossKind) -> Result<(f64, Matrix<F>)> {
    let n = outputs.rows();
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if targets.len() != n {
        return Err(Error::ShapeMismatch {
            layer: 0,
            detail: format!("{} targets for {} outputs", targets.len(), n),
        });
    }
    if let Some(pos) = outputs.data().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: "network outputs".into(),
            row: pos / outputs.cols(),
            col: pos % outputs.cols(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let mut grad = Matrix::zeros(n, outputs.cols());
    let mut total = 0.0;
    match (kind, targets) {
        (LossKind::SoftmaxXent, Targets::Classes(classes)) => {
            for (r, &cls) in classes.iter().enumerate() {
                let row = outputs.row(r);
                let cls = cls as usize;
                if cls >= row.len() {
                    return Err(Error::ShapeMismatch {
                        layer: 0,
                        detail: format!("class index {cls} out of range for {} outputs", row.len()),
                    });
                }
                let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
                let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
                let log_z = max + sum.ln();
                total += log_z - row[cls].as_f64();
                let g = grad.row_mut(r);
                for (k, v) in row.iter().enumerate() {
                    let p = (v.as_f64() - log_z).exp();
                    let y = if k == cls { 1.0 } else { 0.0 };
                    g[k] = F::of((p - y) * inv_n);
                }
            }
        }
        (LossKind::Squared, Targets::Values(values)) => {
            if outputs.cols() != 1 {
                return Err(Error::ShapeMismatch {
                    layer: 0,
                    detail: "squared loss expects a single output".into(),
                });
            }
            for (r, &y) in values.iter().enumerate() {
                let d = outputs.get(r, 0).as_f64() - y as f64;
                total += d * d;
                grad.set(r, 0, F::of(2.0 * d * inv_n));
            }
        }
        _ => {
            return Err(Error::InvalidConfig(
                "loss kind does not match the target kind".into(),
            ))
        }
    }
    Ok((total * inv_n, grad))
}

/// Fraction of rows whose arg-max equals the class label.
pub fn accuracy<F: Scalar>(outputs: &Matrix<F>, classes: &[u32]) -> f64 {
    let hits = classes
        .iter()
        .enumerate()
        .filter(|(r, &cls)| {
            let row = outputs.row(*r);
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            best == cls as usize
        })
        .count();
    hits as f64 / classes.len().max(1) as f64
}
