//! The variational CVaR objective
//! `F(theta, alpha) = alpha + 1/(1-beta) * mean(max(l(theta; z) - alpha, 0))`,
//! the exact discrete VaR/CVaR of an empirical loss distribution, and the
//! per-sample subgradient used by the subgradient method.
//!
//! All reductions run sequentially in sample order, so results are bitwise
//! reproducible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_theta, Dataset, LossKind, Sample};

/// Confidence level `beta` in `[0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CvarLevel(f64);

impl CvarLevel {
    pub fn new(beta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta) || !(1.0 / (1.0 - beta)).is_finite() {
            return Err(Error::invalid(format!("beta must lie in [0, 1), got {beta}")));
        }
        Ok(Self(beta))
    }

    /// `beta = (n - 1) / n`, which turns CVaR into the maximum loss.
    pub fn max_loss(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid("max-loss mode needs at least two samples"));
        }
        Self::new((n as f64 - 1.0) / n as f64)
    }

    pub fn beta(self) -> f64 {
        self.0
    }

    /// `1 / (1 - beta)`.
    pub fn tail_scale(self) -> f64 {
        1.0 / (1.0 - self.0)
    }
}

impl TryFrom<f64> for CvarLevel {
    type Error = Error;

    fn try_from(beta: f64) -> Result<Self> {
        Self::new(beta)
    }
}

impl From<CvarLevel> for f64 {
    fn from(level: CvarLevel) -> f64 {
        level.0
    }
}

/// Objective for a precomputed loss vector.
///
/// Evaluated as `alpha * (1 - s * k / n) + s * S / n`, where `k` counts the
/// losses above `alpha`, `S` is their sum and `s = 1/(1-beta)`. Ties are
/// counted only when no loss lies below `alpha`. This form is exact in the two
/// degenerate regimes: no truncation at `beta = 0` (the mean loss) and `alpha`
/// at or above every loss (`alpha` itself).
pub fn objective_of_losses(losses: &[f64], alpha: f64, beta: CvarLevel) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite("alpha"));
    }
    let mut above = 0usize;
    let mut sum_above = 0.0;
    let mut sum_all = 0.0;
    let mut any_below = false;
    for &l in losses {
        if !l.is_finite() {
            return Err(Error::NonFinite("loss value"));
        }
        sum_all += l;
        if l > alpha {
            above += 1;
            sum_above += l;
        } else if l < alpha {
            any_below = true;
        }
    }
    if !any_below {
        above = losses.len();
        sum_above = sum_all;
    }
    let n = losses.len() as f64;
    let s = beta.tail_scale();
    let value = alpha * (1.0 - s * above as f64 / n) + s * sum_above / n;
    if !value.is_finite() {
        return Err(Error::NonFinite("objective"));
    }
    Ok(value)
}

/// Index (0-based, into the ascending order) of the empirical `beta`-quantile:
/// the smallest `k >= 1` with `k / n >= beta`, minus one.
fn quantile_rank(n: usize, beta: CvarLevel) -> usize {
    let nf = n as f64;
    let b = beta.beta();
    let mut k = ((nf * b).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= b {
        k -= 1;
    }
    while k < n && (k as f64 / nf) < b {
        k += 1;
    }
    k - 1
}

pub fn var_of_losses(losses: &[f64], beta: CvarLevel) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFinite("loss value"));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[quantile_rank(sorted.len(), beta)])
}

/// `F` at `alpha = VaR`, never reported below the VaR (the two can be one
/// rounding step apart when the VaR is the smallest loss).
pub fn cvar_of_losses(losses: &[f64], beta: CvarLevel) -> Result<f64> {
    let var = var_of_losses(losses, beta)?;
    Ok(objective_of_losses(losses, var, beta)?.max(var))
}

/// Empirical objective over every sample of `data`.
pub fn empirical_objective(
    theta: &[f64],
    alpha: f64,
    beta: CvarLevel,
    data: &Dataset,
    model: LossKind,
) -> Result<f64> {
    objective_of_losses(&data.losses(model, theta)?, alpha, beta)
}

/// Discrete Value-at-Risk: the `ceil(n beta)`-th smallest loss.
pub fn exact_var(theta: &[f64], beta: CvarLevel, data: &Dataset, model: LossKind) -> Result<f64> {
    var_of_losses(&data.losses(model, theta)?, beta)
}

/// `min_alpha F(theta, alpha)`, attained at the discrete VaR.
pub fn exact_cvar(theta: &[f64], beta: CvarLevel, data: &Dataset, model: LossKind) -> Result<f64> {
    cvar_of_losses(&data.losses(model, theta)?, beta)
}

/// Returns `true` when the sample's loss strictly exceeds `alpha` (the `u = 1`
/// branch). Ties count as inactive.
pub(crate) fn tail_active(loss: f64, alpha: f64) -> bool {
    loss - alpha > 0.0
}

/// One subgradient of `F(., .; z)` at `(theta, alpha)`.
pub fn sampled_subgradient(
    theta: &[f64],
    alpha: f64,
    beta: CvarLevel,
    z: &Sample,
    model: LossKind,
) -> Result<(Vec<f64>, f64)> {
    check_theta(z.features.dim(), theta)?;
    if !alpha.is_finite() {
        return Err(Error::NonFinite("alpha"));
    }
    let parts = model.parts(theta, z)?;
    let mut g_theta = vec![0.0; theta.len()];
    if tail_active(parts.value, alpha) {
        let s = beta.tail_scale();
        z.features.for_each(|i, x| g_theta[i] = s * (parts.slope * x));
        Ok((g_theta, 1.0 - s))
    } else {
        Ok((g_theta, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// 1-d dataset whose absolute losses at `theta = 0` are `losses` (all >= 0).
    fn dataset_with_losses(losses: &[f64]) -> Dataset {
        Dataset::new(
            losses
                .iter()
                .map(|&l| Sample::dense(vec![1.0], -l).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn level(b: f64) -> CvarLevel {
        CvarLevel::new(b).unwrap()
    }

    #[test]
    fn level_validation() {
        assert!(CvarLevel::new(1.0).is_err());
        assert!(CvarLevel::new(-0.1).is_err());
        assert!(CvarLevel::new(f64::NAN).is_err());
        assert_eq!(level(0.5).tail_scale(), 2.0);
        assert!(CvarLevel::max_loss(1).is_err());
        let parsed: CvarLevel = serde_json::from_str("0.95").unwrap();
        assert_eq!(parsed.beta(), 0.95);
        assert!(serde_json::from_str::<CvarLevel>("1.5").is_err());
    }

    #[test]
    fn objective_small_example() {
        let data = dataset_with_losses(&[1.0, 2.0, 3.0, 4.0]);
        let f = empirical_objective(&[0.0], 2.0, level(0.5), &data, LossKind::Absolute).unwrap();
        assert_eq!(f, 3.5);
    }

    #[test]
    fn beta_zero_below_all_losses_is_mean() {
        let losses = [0.3, 1.7, 2.2, 9.1, 0.01];
        let data = dataset_with_losses(&losses);
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        let f = empirical_objective(&[0.0], -1e6, level(0.0), &data, LossKind::Absolute).unwrap();
        assert_eq!(f, mean);
    }

    #[test]
    fn var_and_cvar_small_example() {
        let data = dataset_with_losses(&[4.0, 1.0, 3.0, 2.0]);
        let var = |b| exact_var(&[0.0], level(b), &data, LossKind::Absolute).unwrap();
        assert_eq!(var(0.5), 2.0);
        assert_eq!(var(0.75), 3.0);
        assert_eq!(var(0.0), 1.0);
        let cvar = exact_cvar(&[0.0], level(0.5), &data, LossKind::Absolute).unwrap();
        assert_eq!(cvar, 3.5);
    }

    #[test]
    fn constant_losses() {
        let data = dataset_with_losses(&[2.5; 7]);
        for b in [0.0, 0.3, 0.95] {
            assert_eq!(exact_cvar(&[0.0], level(b), &data, LossKind::Absolute).unwrap(), 2.5);
            assert_eq!(exact_var(&[0.0], level(b), &data, LossKind::Absolute).unwrap(), 2.5);
        }
    }

    #[test]
    fn max_loss_level_gives_max() {
        let losses = [0.3, 5.25, 1.0, 4.0];
        let beta = CvarLevel::max_loss(losses.len()).unwrap();
        assert_eq!(objective_of_losses(&losses, 5.25, beta).unwrap(), 5.25);
        assert!((cvar_of_losses(&losses, beta).unwrap() - 5.25).abs() < 1e-12);
    }

    #[test]
    fn subgradient_branches() {
        let z = Sample::dense(vec![1.0, 0.0], -2.0).unwrap(); // absolute loss 2 at 0
        let (g, ga) = sampled_subgradient(&[0.0, 0.0], 5.0, level(0.5), &z, LossKind::Absolute).unwrap();
        assert_eq!((g, ga), (vec![0.0, 0.0], 1.0));
        let (g, ga) = sampled_subgradient(&[0.0, 0.0], 1.0, level(0.5), &z, LossKind::Absolute).unwrap();
        assert_eq!((g, ga), (vec![2.0, 0.0], -1.0));
        // tie goes to the inactive branch
        let (g, ga) = sampled_subgradient(&[0.0, 0.0], 2.0, level(0.5), &z, LossKind::Absolute).unwrap();
        assert_eq!((g, ga), (vec![0.0, 0.0], 1.0));
    }

    #[test]
    fn empty_and_nonfinite() {
        assert!(matches!(objective_of_losses(&[], 0.0, level(0.5)), Err(Error::EmptyDataset)));
        assert!(objective_of_losses(&[f64::NAN], 0.0, level(0.5)).is_err());
        assert!(var_of_losses(&[], level(0.5)).is_err());
    }

    fn literal_objective(losses: &[f64], alpha: f64, beta: f64) -> f64 {
        let mut acc = 0.0;
        for &l in losses {
            acc += if l - alpha > 0.0 { l - alpha } else { 0.0 };
        }
        alpha + acc / (1.0 - beta) / losses.len() as f64
    }

    fn scan_var(losses: &[f64], beta: f64) -> f64 {
        let mut best = f64::INFINITY;
        for &cand in losses {
            let count = losses.iter().filter(|&&l| l <= cand).count();
            if count as f64 / losses.len() as f64 >= beta && cand < best {
                best = cand;
            }
        }
        best
    }

    proptest! {
        #[test]
        fn objective_matches_loop_sum(
            losses in prop::collection::vec(0.0f64..10.0, 20),
            alpha in -2.0f64..12.0, beta in 0.0f64..0.99,
        ) {
            let f = objective_of_losses(&losses, alpha, level(beta)).unwrap();
            prop_assert!((f - literal_objective(&losses, alpha, beta)).abs() <= 1e-12 * f.abs().max(1.0));
        }

        #[test]
        fn var_matches_linear_scan(
            losses in prop::collection::vec(0.0f64..10.0, 1..40), beta in 0.0f64..0.999,
        ) {
            prop_assert_eq!(var_of_losses(&losses, level(beta)).unwrap(), scan_var(&losses, beta));
        }

        #[test]
        fn var_matches_scan_with_ties(
            losses in prop::collection::vec(0u8..5, 1..40), num in 0usize..40,
        ) {
            let losses: Vec<f64> = losses.into_iter().map(f64::from).collect();
            let beta = (num % losses.len()) as f64 / losses.len() as f64;
            prop_assert_eq!(var_of_losses(&losses, level(beta)).unwrap(), scan_var(&losses, beta));
        }

        #[test]
        fn cvar_bounds_var_and_is_monotone(
            losses in prop::collection::vec(0.0f64..10.0, 1..50), b1 in 0.0f64..0.99, b2 in 0.0f64..0.99,
        ) {
            let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
            let c_lo = cvar_of_losses(&losses, level(lo)).unwrap();
            let c_hi = cvar_of_losses(&losses, level(hi)).unwrap();
            prop_assert!(c_lo >= var_of_losses(&losses, level(lo)).unwrap() - 1e-12);
            prop_assert!(c_hi >= c_lo - 1e-12);
        }
    }
}
