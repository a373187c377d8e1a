//! Rate-bound constants of the subgradient and prox-linear methods.
//!
//! The bounds assume an `M(z)`-Lipschitz loss. Squared loss has no global
//! constant, so the profile used here is the empirical one: `M(z)` is the
//! norm of the chosen subgradient at the initial parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, Iterate, LossKind};
use crate::objective::CvarLevel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateBound {
    /// `E[(M^2 + 1) / (1-beta)^2 + 1]`
    pub l_sgm_sq: f64,
    /// `E[((lambda_theta / lambda_alpha) M^2 + 1) / (1-beta)^2]`
    pub l_spl_sq: f64,
    /// `|x_0 - x*| / (sqrt(2) L_SGM)`
    pub lambda_star_sgm: Option<f64>,
    /// `|alpha_0 - alpha*| (1-beta) / sqrt(2)`
    pub lambda_alpha_star: Option<f64>,
    /// `|theta_0 - theta*| (1-beta) / (sqrt(2) E[M])`
    pub lambda_theta_star: Option<f64>,
    /// Empirical `E[M]`.
    pub m_estimate: f64,
    /// Empirical `E[M^2]`.
    pub m_sq_estimate: f64,
    /// Marks the constants as built from an empirical, not global, `M(z)`.
    pub empirical_lipschitz: bool,
}

impl RateBound {
    /// Constants from an explicit `M(z)` profile. `distances` are
    /// `(|theta_0 - theta*|, |alpha_0 - alpha*|)` when an optimum is known.
    pub fn from_profile(
        m_values: &[f64],
        beta: CvarLevel,
        lambda_theta: f64,
        lambda_alpha: f64,
        distances: Option<(f64, f64)>,
    ) -> Result<Self> {
        if m_values.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if !(lambda_theta > 0.0 && lambda_alpha > 0.0) {
            return Err(Error::invalid("regularizers must be positive"));
        }
        if m_values.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(Error::invalid("Lipschitz profile must be finite and non-negative"));
        }
        let n = m_values.len() as f64;
        let m_mean = m_values.iter().sum::<f64>() / n;
        let m_sq = m_values.iter().map(|m| m * m).sum::<f64>() / n;
        let one_minus = 1.0 - beta.beta();
        let denom = one_minus * one_minus;
        let l_sgm_sq = (m_sq + 1.0) / denom + 1.0;
        let l_spl_sq = ((lambda_theta / lambda_alpha) * m_sq + 1.0) / denom;
        let sqrt2 = std::f64::consts::SQRT_2;
        let (lambda_star_sgm, lambda_alpha_star, lambda_theta_star) = match distances {
            Some((d_theta, d_alpha)) => {
                let delta = (d_theta * d_theta + d_alpha * d_alpha).sqrt();
                let theta_star = if m_mean > 0.0 {
                    Some(d_theta * one_minus / (sqrt2 * m_mean))
                } else {
                    None
                };
                (
                    Some(delta / (l_sgm_sq.sqrt() * sqrt2)),
                    Some(d_alpha * one_minus / sqrt2),
                    theta_star,
                )
            }
            None => (None, None, None),
        };
        Ok(Self {
            l_sgm_sq,
            l_spl_sq,
            lambda_star_sgm,
            lambda_alpha_star,
            lambda_theta_star,
            m_estimate: m_mean,
            m_sq_estimate: m_sq,
            empirical_lipschitz: true,
        })
    }
}

/// Rate constants with `M(z)` taken as the subgradient norm at `init`.
pub fn rate_bounds(
    data: &Dataset,
    model: LossKind,
    init: &Iterate,
    beta: CvarLevel,
    lambda_theta: f64,
    lambda_alpha: f64,
    optimum: Option<&Iterate>,
) -> Result<RateBound> {
    if init.dim() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: init.dim(),
        });
    }
    let m_values = data
        .samples()
        .iter()
        .map(|z| {
            let slope = model.parts(&init.theta, z)?.slope;
            Ok(slope.abs() * z.features.norm_sq().sqrt())
        })
        .collect::<Result<Vec<f64>>>()?;
    let distances = match optimum {
        Some(opt) => {
            if opt.dim() != init.dim() {
                return Err(Error::DimensionMismatch {
                    expected: init.dim(),
                    found: opt.dim(),
                });
            }
            let d_theta = init
                .theta
                .iter()
                .zip(&opt.theta)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            Some((d_theta, (init.alpha - opt.alpha).abs()))
        }
        None => None,
    };
    RateBound::from_profile(&m_values, beta, lambda_theta, lambda_alpha, distances)
}
