//! Proximal kernels for models truncated at zero.
//!
//! [`truncated_prox`] solves
//! `argmin_x max(c + <a, x - x_t>, 0) + |x - x_t|^2 / (2 lambda)` in closed form.
//! [`spl_plus_step`] solves the prox-linear subproblem of the CVaR objective
//! with separate regularization of the parameter block and the quantile,
//!
//! ```text
//! argmin_{theta, alpha}  alpha + 1/(1-beta) max(l_t + <v_t, theta - theta_t> - alpha, 0)
//!                        + |theta - theta_t|^2 / (2 lambda_theta)
//!                        + (alpha - alpha_t)^2 / (2 lambda_alpha)
//! ```
//!
//! [`spl_plus_step_branched`] evaluates the same step through three explicit
//! branches and is kept as a cross-check of the compact form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::CvarLevel;

/// The model `x -> max(c + <a, x - center>, 0)` with prox parameter `lambda`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedAffineModel {
    pub c: f64,
    pub a: Vec<f64>,
    pub center: Vec<f64>,
    pub lambda: f64,
}

/// Proximal point of a truncated affine model:
/// `center - min(lambda, max(c, 0) / |a|^2) * a`.
pub fn truncated_prox(m: &TruncatedAffineModel) -> Result<Vec<f64>> {
    if m.a.len() != m.center.len() {
        return Err(Error::DimensionMismatch {
            expected: m.center.len(),
            found: m.a.len(),
        });
    }
    if !(m.lambda > 0.0 && m.lambda.is_finite()) {
        return Err(Error::invalid(format!("lambda must be positive, got {}", m.lambda)));
    }
    if !m.c.is_finite() || m.a.iter().chain(&m.center).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("truncated model"));
    }
    let a_sq: f64 = m.a.iter().map(|v| v * v).sum();
    let excess = m.c.max(0.0);
    if a_sq == 0.0 {
        if m.c > 0.0 {
            return Err(Error::UndefinedStep(m.c));
        }
        return Ok(m.center.clone());
    }
    let step = m.lambda.min(excess / a_sq);
    Ok(m.center.iter().zip(&m.a).map(|(x, a)| x - step * a).collect())
}

/// Inputs of one separately regularized prox-linear step.
#[derive(Debug, Clone, Copy)]
pub struct SplPlusStepInput<'a> {
    pub theta_t: &'a [f64],
    pub alpha_t: f64,
    pub loss_t: f64,
    pub v_t: &'a [f64],
    pub beta: CvarLevel,
    pub lambda_theta: f64,
    pub lambda_alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub theta: Vec<f64>,
    pub alpha: f64,
}

/// Which case of the three-way split produced a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// `alpha_t > l_t + lambda_alpha`: only the quantile moves.
    AlphaTooBig,
    /// The truncation is active at the full step `1/(1-beta)`.
    AlphaTooSmall,
    /// Partial step.
    Middle,
}

fn check_regularizers(lambda_theta: f64, lambda_alpha: f64) -> Result<()> {
    if !(lambda_theta > 0.0 && lambda_theta.is_finite()) {
        return Err(Error::invalid(format!("lambda_theta must be positive, got {lambda_theta}")));
    }
    if !(lambda_alpha > 0.0 && lambda_alpha.is_finite()) {
        return Err(Error::invalid(format!("lambda_alpha must be positive, got {lambda_alpha}")));
    }
    Ok(())
}

/// Scalar core of the step: returns `min(1/(1-beta), gamma_t)` where
/// `gamma_t = max(l_t - alpha_t + lambda_alpha, 0) / (lambda_theta |v_t|^2 + lambda_alpha)`.
///
/// The step is then `theta -= lambda_theta * w * v_t`,
/// `alpha += lambda_alpha * (w - 1)`.
pub fn spl_plus_weight(
    loss_t: f64,
    alpha_t: f64,
    v_norm_sq: f64,
    beta: CvarLevel,
    lambda_theta: f64,
    lambda_alpha: f64,
) -> Result<f64> {
    check_regularizers(lambda_theta, lambda_alpha)?;
    if !loss_t.is_finite() || !alpha_t.is_finite() || !v_norm_sq.is_finite() {
        return Err(Error::NonFinite("prox-linear step input"));
    }
    let denom = lambda_theta * v_norm_sq + lambda_alpha;
    if denom == 0.0 {
        return Err(Error::invalid("degenerate prox-linear denominator"));
    }
    let gamma = (loss_t - alpha_t + lambda_alpha).max(0.0) / denom;
    Ok(beta.tail_scale().min(gamma))
}

pub(crate) fn apply_weight(input: &SplPlusStepInput<'_>, w: f64) -> StepOutput {
    let coef = input.lambda_theta * w;
    StepOutput {
        theta: input
            .theta_t
            .iter()
            .zip(input.v_t)
            .map(|(t, v)| t - coef * v)
            .collect(),
        alpha: input.alpha_t - input.lambda_alpha + input.lambda_alpha * w,
    }
}

fn check_input(input: &SplPlusStepInput<'_>) -> Result<f64> {
    if input.theta_t.len() != input.v_t.len() {
        return Err(Error::DimensionMismatch {
            expected: input.theta_t.len(),
            found: input.v_t.len(),
        });
    }
    if input.theta_t.iter().chain(input.v_t).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prox-linear step input"));
    }
    Ok(input.v_t.iter().map(|v| v * v).sum())
}

/// Closed-form minimizer of the separately regularized prox-linear subproblem.
pub fn spl_plus_step(input: &SplPlusStepInput<'_>) -> Result<StepOutput> {
    let v_sq = check_input(input)?;
    let w = spl_plus_weight(
        input.loss_t,
        input.alpha_t,
        v_sq,
        input.beta,
        input.lambda_theta,
        input.lambda_alpha,
    )?;
    Ok(apply_weight(input, w))
}

/// The same step through explicit case analysis. Boundary ties go to
/// [`Branch::Middle`].
pub fn spl_plus_step_branched(input: &SplPlusStepInput<'_>) -> Result<(StepOutput, Branch)> {
    let v_sq = check_input(input)?;
    check_regularizers(input.lambda_theta, input.lambda_alpha)?;
    if !input.loss_t.is_finite() || !input.alpha_t.is_finite() {
        return Err(Error::NonFinite("prox-linear step input"));
    }
    let (lt, at) = (input.lambda_theta, input.lambda_alpha);
    let beta = input.beta.beta();
    let scale = input.beta.tail_scale();
    if input.alpha_t > input.loss_t + at {
        let out = StepOutput {
            theta: input.theta_t.to_vec(),
            alpha: input.alpha_t - at,
        };
        return Ok((out, Branch::AlphaTooBig));
    }
    if input.alpha_t < input.loss_t - lt * scale * v_sq - at * beta * scale {
        let coef = lt * scale;
        let out = StepOutput {
            theta: input
                .theta_t
                .iter()
                .zip(input.v_t)
                .map(|(t, v)| t - coef * v)
                .collect(),
            alpha: input.alpha_t + at * beta * scale,
        };
        return Ok((out, Branch::AlphaTooSmall));
    }
    let nu = (input.loss_t + at - input.alpha_t) / (lt * v_sq + at);
    let coef = lt * nu;
    let out = StepOutput {
        theta: input
            .theta_t
            .iter()
            .zip(input.v_t)
            .map(|(t, v)| t - coef * v)
            .collect(),
        alpha: input.alpha_t - at + at * nu,
    };
    Ok((out, Branch::Middle))
}

/// Plain prox-linear step with one regularizer shared by both blocks.
pub fn spl_step(
    theta_t: &[f64],
    alpha_t: f64,
    loss_t: f64,
    v_t: &[f64],
    beta: CvarLevel,
    lambda: f64,
) -> Result<StepOutput> {
    spl_plus_step(&SplPlusStepInput {
        theta_t,
        alpha_t,
        loss_t,
        v_t,
        beta,
        lambda_theta: lambda,
        lambda_alpha: lambda,
    })
}

/// Value of the prox-linear subproblem at `(theta, alpha)`.
pub fn subproblem_value(input: &SplPlusStepInput<'_>, theta: &[f64], alpha: f64) -> f64 {
    let mut lin = input.loss_t - alpha;
    let mut dist_sq = 0.0;
    for ((t, t0), v) in theta.iter().zip(input.theta_t).zip(input.v_t) {
        lin += v * (t - t0);
        dist_sq += (t - t0) * (t - t0);
    }
    alpha
        + input.beta.tail_scale() * lin.max(0.0)
        + dist_sq / (2.0 * input.lambda_theta)
        + (alpha - input.alpha_t).powi(2) / (2.0 * input.lambda_alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn level(b: f64) -> CvarLevel {
        CvarLevel::new(b).unwrap()
    }

    fn model(c: f64, a: f64, lambda: f64) -> TruncatedAffineModel {
        TruncatedAffineModel {
            c,
            a: vec![a],
            center: vec![0.0],
            lambda,
        }
    }

    #[test]
    fn truncated_prox_examples() {
        assert_eq!(truncated_prox(&model(-0.5, 1.0, 1.0)).unwrap(), vec![0.0]);
        assert_eq!(truncated_prox(&model(10.0, 1.0, 1.0)).unwrap(), vec![-1.0]);
        assert_eq!(truncated_prox(&model(0.5, 2.0, 1.0)).unwrap(), vec![-0.25]);
    }

    #[test]
    fn truncated_prox_zero_slope() {
        assert_eq!(truncated_prox(&model(-1.0, 0.0, 1.0)).unwrap(), vec![0.0]);
        assert_eq!(truncated_prox(&model(0.0, 0.0, 1.0)).unwrap(), vec![0.0]);
        assert!(matches!(
            truncated_prox(&model(1.0, 0.0, 1.0)),
            Err(Error::UndefinedStep(_))
        ));
        assert!(truncated_prox(&model(1.0, 1.0, 0.0)).is_err());
    }

    fn input<'a>(theta: &'a [f64], v: &'a [f64], alpha: f64, loss: f64, beta: f64, lt: f64, la: f64) -> SplPlusStepInput<'a> {
        SplPlusStepInput {
            theta_t: theta,
            alpha_t: alpha,
            loss_t: loss,
            v_t: v,
            beta: level(beta),
            lambda_theta: lt,
            lambda_alpha: la,
        }
    }

    #[test]
    fn alpha_too_big() {
        let inp = input(&[0.5, -1.0], &[1.0, 2.0], 5.0, 1.0, 0.9, 0.3, 1.0);
        let out = spl_plus_step(&inp).unwrap();
        assert_eq!(out.theta, vec![0.5, -1.0]);
        assert_eq!(out.alpha, 4.0);
        let (b, branch) = spl_plus_step_branched(&inp).unwrap();
        assert_eq!(branch, Branch::AlphaTooBig);
        assert_eq!(b, out);
    }

    #[test]
    fn alpha_too_small() {
        let inp = input(&[0.0, 0.0], &[1.0, 0.0], 0.0, 10.0, 0.5, 0.1, 0.1);
        let out = spl_plus_step(&inp).unwrap();
        assert!((out.theta[0] + 0.2).abs() < 1e-15 && out.theta[1] == 0.0);
        assert!((out.alpha - 0.1).abs() < 1e-15);
        let (b, branch) = spl_plus_step_branched(&inp).unwrap();
        assert_eq!(branch, Branch::AlphaTooSmall);
        assert!((b.alpha - out.alpha).abs() < 1e-15);
    }

    #[test]
    fn boundary_resolves_to_middle() {
        let inp = input(&[1.0], &[3.0], 2.5, 2.0, 0.9, 0.7, 0.5);
        let (out, branch) = spl_plus_step_branched(&inp).unwrap();
        assert_eq!(branch, Branch::Middle);
        assert_eq!(out.theta, vec![1.0]);
        assert_eq!(out.alpha, 2.0);
        assert_eq!(spl_plus_step(&inp).unwrap(), out);
    }

    #[test]
    fn zero_subgradient_is_well_defined() {
        let inp = input(&[1.0], &[0.0], 0.0, 3.0, 0.5, 1.0, 0.5);
        let out = spl_plus_step(&inp).unwrap();
        // gamma = 3.5 / 0.5 = 7, capped at 2
        assert_eq!(out.theta, vec![1.0]);
        assert_eq!(out.alpha, 0.5);
    }

    #[test]
    fn spl_is_equal_regularizer_case() {
        let theta = [0.3, -0.2];
        let v = [1.5, 0.5];
        let a = spl_step(&theta, 0.4, 2.0, &v, level(0.9), 0.05).unwrap();
        let b = spl_plus_step(&input(&theta, &v, 0.4, 2.0, 0.9, 0.05, 0.05)).unwrap();
        assert_eq!(a, b);
        let far = spl_step(&theta, 10.0, 1.0, &v, level(0.9), 0.5).unwrap();
        assert_eq!(far.theta, theta.to_vec());
        assert_eq!(far.alpha, 9.5);
    }

    #[test]
    fn step_errors() {
        let theta = [0.0];
        assert!(spl_plus_step(&input(&theta, &[1.0], 0.0, 1.0, 0.5, 0.0, 1.0)).is_err());
        assert!(spl_plus_step(&input(&theta, &[1.0], 0.0, 1.0, 0.5, 1.0, -1.0)).is_err());
        assert!(spl_plus_step(&input(&theta, &[1.0, 2.0], 0.0, 1.0, 0.5, 1.0, 1.0)).is_err());
        assert!(spl_plus_step(&input(&theta, &[1.0], f64::NAN, 1.0, 0.5, 1.0, 1.0)).is_err());
    }

    fn step_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64, f64, f64, f64, f64)> {
        (1usize..6).prop_flat_map(|d| {
            (
                prop::collection::vec(-2.0f64..2.0, d),
                prop::collection::vec(-2.0f64..2.0, d),
                -5.0f64..5.0,
                0.0f64..5.0,
                prop_oneof![Just(0.5), Just(0.9), Just(0.95)],
                -3.0f64..3.0,
                -3.0f64..3.0,
            )
        })
    }

    proptest! {
        #[test]
        fn step_never_increases_subproblem((theta, v, alpha, loss, beta, lt, la) in step_strategy()) {
            let inp = input(&theta, &v, alpha, loss, beta, 10f64.powf(lt), 10f64.powf(la));
            let out = spl_plus_step(&inp).unwrap();
            let at_new = subproblem_value(&inp, &out.theta, out.alpha);
            let at_old = subproblem_value(&inp, &theta, alpha);
            prop_assert!(at_new <= at_old + 1e-12 * at_old.abs().max(1.0));
        }

        #[test]
        fn exactly_one_branch_condition((theta, v, alpha, loss, beta, lt, la) in step_strategy()) {
            let (lt, la) = (10f64.powf(lt), 10f64.powf(la));
            let v_sq: f64 = v.iter().map(|x| x * x).sum();
            let s = 1.0 / (1.0 - beta);
            let big = alpha > loss + la;
            let small = alpha < loss - lt * s * v_sq - la * beta * s;
            prop_assert!(!(big && small));
            let (_, branch) = spl_plus_step_branched(&input(&theta, &v, alpha, loss, beta, lt, la)).unwrap();
            let expected = if big { Branch::AlphaTooBig } else if small { Branch::AlphaTooSmall } else { Branch::Middle };
            prop_assert_eq!(branch, expected);
        }

        #[test]
        fn weight_is_unitless(
            (theta, v, alpha, loss, beta, lt, la) in step_strategy(), log_s in -3.0f64..3.0,
        ) {
            let (lt, la) = (10f64.powf(lt), 10f64.powf(la));
            let s = 10f64.powf(log_s);
            let v_sq: f64 = v.iter().map(|x| x * x).sum();
            let _ = theta;
            let w = spl_plus_weight(loss, alpha, v_sq, level(beta), lt, la).unwrap();
            let ws = spl_plus_weight(s * loss, s * alpha, s * s * v_sq, level(beta), lt / s, s * la).unwrap();
            prop_assert!((w - ws).abs() <= 1e-12 * w.abs().max(1.0));
        }

        #[test]
        fn truncated_prox_scaling(c in -5.0f64..5.0, a in prop::collection::vec(-3.0f64..3.0, 1..5),
                                  lambda in 0.01f64..10.0, s in 0.1f64..10.0) {
            prop_assume!(a.iter().any(|x| *x != 0.0));
            let center = vec![0.25; a.len()];
            let base = TruncatedAffineModel { c, a: a.clone(), center: center.clone(), lambda };
            let scaled = TruncatedAffineModel {
                c: s * c, a: a.iter().map(|x| s * x).collect(), center: center.clone(), lambda: lambda / s,
            };
            let p = truncated_prox(&base).unwrap();
            let q = truncated_prox(&scaled).unwrap();
            // the multiplier min(lambda, c+/|a|^2) shrinks by 1/s while a grows by s
            let a_sq: f64 = a.iter().map(|x| x * x).sum();
            let m = (lambda / s).min((s * c).max(0.0) / (s * s * a_sq));
            for i in 0..a.len() {
                prop_assert!((q[i] - (center[i] - m * (s * a[i]))).abs() <= 1e-12);
                prop_assert!((p[i] - q[i]).abs() <= 1e-12);
            }
        }
    }
}
