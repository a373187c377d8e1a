//! Core domain types: iterates, samples, datasets and the three loss families.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The joint variable `x = (theta, alpha)`: model parameters plus a quantile
/// estimate carrying the units of the loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub theta: Vec<f64>,
    pub alpha: f64,
}

impl Iterate {
    pub fn new(theta: Vec<f64>, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("iterate"));
        }
        Ok(Self { theta, alpha })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            theta: vec![0.0; dim],
            alpha: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn is_finite(&self) -> bool {
        self.alpha.is_finite() && self.theta.iter().all(|v| v.is_finite())
    }
}

/// Sparse vector with strictly increasing 0-based indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVec {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVec {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::invalid("sparse indices and values differ in length"));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("sparse indices must be strictly increasing"));
        }
        Ok(Self { indices, values })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Feature vector of a sample, either stored densely or as `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum Features {
    Dense(Vec<f64>),
    Sparse { dim: usize, data: SparseVec },
}

impl Features {
    pub fn sparse(dim: usize, data: SparseVec) -> Result<Self> {
        if let Some(&last) = data.indices.last() {
            if last as usize >= dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: last as usize + 1,
                });
            }
        }
        Ok(Features::Sparse { dim, data })
    }

    pub fn dim(&self) -> usize {
        match self {
            Features::Dense(v) => v.len(),
            Features::Sparse { dim, .. } => *dim,
        }
    }

    pub fn dot(&self, theta: &[f64]) -> f64 {
        match self {
            Features::Dense(v) => v.iter().zip(theta).map(|(a, b)| a * b).sum(),
            Features::Sparse { data, .. } => data
                .indices
                .iter()
                .zip(&data.values)
                .map(|(&i, &v)| v * theta[i as usize])
                .sum(),
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.values().iter().map(|v| v * v).sum()
    }

    /// Stored values (all entries for dense rows, nonzeros for sparse rows).
    pub fn values(&self) -> &[f64] {
        match self {
            Features::Dense(v) => v,
            Features::Sparse { data, .. } => &data.values,
        }
    }

    /// Visits `(index, value)` for every stored entry.
    pub fn for_each(&self, mut f: impl FnMut(usize, f64)) {
        match self {
            Features::Dense(v) => v.iter().enumerate().for_each(|(i, &x)| f(i, x)),
            Features::Sparse { data, .. } => data
                .indices
                .iter()
                .zip(&data.values)
                .for_each(|(&i, &x)| f(i as usize, x)),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.for_each(|i, x| out[i] = x);
        out
    }
}

/// One observation `z = (x, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Features,
    pub target: f64,
}

impl Sample {
    pub fn new(features: Features, target: f64) -> Result<Self> {
        if !target.is_finite() || features.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample"));
        }
        Ok(Self { features, target })
    }

    pub fn dense(x: Vec<f64>, y: f64) -> Result<Self> {
        Self::new(Features::Dense(x), y)
    }
}

/// An ordered, nonempty collection of samples sharing one dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    dim: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptyDataset)?;
        let dim = first.features.dim();
        if let Some(bad) = samples.iter().find(|s| s.features.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.features.dim(),
            });
        }
        Ok(Self { samples, dim })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Rejects targets outside `{-1, +1}` when the loss is a classification loss.
    pub fn check_labels(&self, loss: LossKind) -> Result<()> {
        if loss == LossKind::Logistic {
            if let Some(s) = self.samples.iter().find(|s| s.target != 1.0 && s.target != -1.0) {
                return Err(Error::InvalidLabel(s.target));
            }
        }
        Ok(())
    }

    /// Losses of every sample at `theta`, in sample order.
    pub fn losses(&self, loss: LossKind, theta: &[f64]) -> Result<Vec<f64>> {
        check_theta(self.dim, theta)?;
        self.samples
            .iter()
            .map(|z| loss.parts(theta, z).map(|p| p.value))
            .collect()
    }
}

/// Loss families supported by every solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// `0.5 * (x'theta - y)^2`
    Squared,
    /// `|x'theta - y|`
    Absolute,
    /// `log(1 + exp(-y x'theta))`, labels in `{-1, +1}`
    Logistic,
}

/// Loss value together with the scalar `s` such that the chosen subgradient is `s * x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct LossParts {
    pub value: f64,
    pub slope: f64,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Squared => "squared",
            LossKind::Absolute => "absolute",
            LossKind::Logistic => "logistic",
        }
    }

    /// `l(theta; z)`.
    pub fn value(self, theta: &[f64], z: &Sample) -> Result<f64> {
        check_theta(z.features.dim(), theta)?;
        Ok(self.parts(theta, z)?.value)
    }

    /// One deterministic element of the subdifferential of `l(.; z)` at `theta`.
    pub fn subgradient(self, theta: &[f64], z: &Sample) -> Result<Vec<f64>> {
        check_theta(z.features.dim(), theta)?;
        let slope = self.parts(theta, z)?.slope;
        let mut g = vec![0.0; theta.len()];
        z.features.for_each(|i, x| g[i] = slope * x);
        Ok(g)
    }

    /// Unchecked-dimension core shared by the solvers.
    pub(crate) fn parts(self, theta: &[f64], z: &Sample) -> Result<LossParts> {
        let score = z.features.dot(theta);
        if !score.is_finite() {
            return Err(Error::NonFinite("linear score"));
        }
        let y = z.target;
        let parts = match self {
            LossKind::Squared => {
                let r = score - y;
                LossParts {
                    value: 0.5 * r * r,
                    slope: r,
                }
            }
            LossKind::Absolute => {
                let r = score - y;
                let slope = if r > 0.0 {
                    1.0
                } else if r < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                LossParts {
                    value: r.abs(),
                    slope,
                }
            }
            LossKind::Logistic => {
                if y != 1.0 && y != -1.0 {
                    return Err(Error::InvalidLabel(y));
                }
                let m = y * score;
                LossParts {
                    value: (-m.abs()).exp().ln_1p() + (-m).max(0.0),
                    slope: -y * sigmoid(-m),
                }
            }
        };
        if !parts.value.is_finite() {
            return Err(Error::NonFinite("loss value"));
        }
        Ok(parts)
    }
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn check_theta(dim: usize, theta: &[f64]) -> Result<()> {
    if theta.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta"));
    }
    Ok(())
}

/// Free-function form of [`LossKind::value`].
pub fn loss_value(model: LossKind, theta: &[f64], z: &Sample) -> Result<f64> {
    model.value(theta, z)
}

/// Free-function form of [`LossKind::subgradient`].
pub fn loss_subgradient(model: LossKind, theta: &[f64], z: &Sample) -> Result<Vec<f64>> {
    model.subgradient(theta, z)
}
