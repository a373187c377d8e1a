//! Deterministic full-batch reference solver producing `(theta*, alpha*, F*)`.
//!
//! Two stages:
//!
//! 1. Smoothing continuation. The truncation `max(r, 0)` (and the kink of the
//!    absolute loss) is replaced by a Huber function of width `mu`, which is
//!    below the original by at most `mu / 2`. The smooth problem in
//!    `(theta, alpha)` is minimized with L-BFGS for `mu` shrinking by 10x per
//!    stage, warm-started each time.
//! 2. Exact polish. With `alpha = VaR(theta)` (the exact partial minimizer)
//!    the remaining function of `theta` is the empirical CVaR. Polyak
//!    subgradient steps with best-iterate tracking run until the best value
//!    improves by less than `tol` (relative) over a 50-step window.
//!
//! The returned point always satisfies `alpha* = VaR(theta*)` and
//! `f* = F(theta*, alpha*)`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, LossKind};
use crate::objective::{objective_of_losses, var_of_losses, CvarLevel};

pub const DEFAULT_MAX_ITERS: usize = 100_000;
pub const DEFAULT_TOL: f64 = 1e-10;

const POLISH_WINDOW: usize = 50;
const SMOOTHING_STAGES: i32 = 10;
const LBFGS_MEMORY: usize = 10;
const LBFGS_STAGE_ITERS: usize = 400;
const POLISH_ITERS: usize = 5_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub theta_star: Vec<f64>,
    pub alpha_star: f64,
    pub f_star: f64,
    pub iterations: usize,
    /// Improvement of the best objective over the final polish window.
    pub stationarity: f64,
}

impl ReferenceSolution {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Checks that this solution belongs to `(data, model, beta)`: dimensions
    /// agree and `f_star` re-evaluates to the stored value.
    pub fn check_matches(&self, data: &Dataset, model: LossKind, beta: CvarLevel) -> Result<()> {
        if self.theta_star.len() != data.dim() {
            return Err(Error::ReferenceMismatch(format!(
                "dimension {} vs dataset dimension {}",
                self.theta_star.len(),
                data.dim()
            )));
        }
        let f = objective_of_losses(&data.losses(model, &self.theta_star)?, self.alpha_star, beta)?;
        if (f - self.f_star).abs() > 1e-9 * self.f_star.abs().max(1.0) {
            return Err(Error::ReferenceMismatch(format!(
                "stored f* = {} but the objective evaluates to {f}",
                self.f_star
            )));
        }
        Ok(())
    }
}

fn huber(r: f64, mu: f64) -> (f64, f64) {
    if r <= 0.0 {
        (0.0, 0.0)
    } else if r < mu {
        (r * r / (2.0 * mu), r / mu)
    } else {
        (r - 0.5 * mu, 1.0)
    }
}

/// Smoothed objective and its gradient over `z = (theta, alpha)`.
struct Smoothed<'a> {
    data: &'a Dataset,
    model: LossKind,
    beta: CvarLevel,
    mu: f64,
}

impl Smoothed<'_> {
    fn eval(&self, z: &[f64], grad: &mut [f64]) -> Result<f64> {
        let d = self.data.dim();
        let (theta, alpha) = (&z[..d], z[d]);
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = 0.0;
        let mut weight_sum = 0.0;
        for sample in self.data.samples() {
            let parts = self.model.parts(theta, sample)?;
            let (loss, slope) = if self.model == LossKind::Absolute {
                let r = sample.features.dot(theta) - sample.target;
                let (h, dh) = huber(r.abs(), self.mu);
                (h, dh * r.signum())
            } else {
                (parts.value, parts.slope)
            };
            let (h, dh) = huber(loss - alpha, self.mu);
            acc += h;
            weight_sum += dh;
            if dh != 0.0 {
                let c = dh * slope;
                sample.features.for_each(|i, x| grad[i] += c * x);
            }
        }
        let n = self.data.len() as f64;
        let s = self.beta.tail_scale();
        for g in &mut grad[..d] {
            *g *= s / n;
        }
        grad[d] = 1.0 - s * weight_sum / n;
        let f = alpha + s * acc / n;
        if !f.is_finite() {
            return Err(Error::NonFinite("smoothed objective"));
        }
        Ok(f)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Limited-memory BFGS with backtracking Armijo line search. Returns the
/// final objective and iteration count.
fn lbfgs(f: &Smoothed<'_>, z: &mut [f64], max_iters: usize) -> Result<(f64, usize)> {
    let dim = z.len();
    let mut g = vec![0.0; dim];
    let mut fz = f.eval(z, &mut g)?;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut trial = vec![0.0; dim];
    let mut g_trial = vec![0.0; dim];
    let mut iters = 0;
    let mut stalls = 0;
    while iters < max_iters {
        iters += 1;
        let g_norm = dot(&g, &g).sqrt();
        if g_norm <= 1e-14 * fz.abs().max(1.0) {
            break;
        }
        // two-loop recursion
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for k in (0..m).rev() {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            alphas[k] = rho * dot(&s_hist[k], &q);
            q.iter_mut().zip(&y_hist[k]).for_each(|(qi, yi)| *qi -= alphas[k] * yi);
        }
        let h0 = match m {
            0 => 1.0 / g_norm.max(1.0),
            _ => dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]),
        };
        q.iter_mut().for_each(|qi| *qi *= h0);
        for k in 0..m {
            let rho = 1.0 / dot(&y_hist[k], &s_hist[k]);
            let b = rho * dot(&y_hist[k], &q);
            q.iter_mut().zip(&s_hist[k]).for_each(|(qi, si)| *qi += (alphas[k] - b) * si);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            s_hist.clear();
            y_hist.clear();
            dir = g.iter().map(|v| -v / g_norm.max(1.0)).collect();
            slope = dot(&g, &dir);
        }
        let mut step = 1.0;
        let mut accepted = false;
        let mut f_trial = fz;
        for _ in 0..60 {
            trial.iter_mut().zip(z.iter().zip(&dir)).for_each(|(t, (zi, di))| *t = zi + step * di);
            f_trial = f.eval(&trial, &mut g_trial)?;
            if f_trial <= fz + 1e-4 * step * slope {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        let s_vec: Vec<f64> = trial.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
        let y_vec: Vec<f64> = g_trial.iter().zip(&g).map(|(a, b)| a - b).collect();
        let decrease = fz - f_trial;
        z.copy_from_slice(&trial);
        g.copy_from_slice(&g_trial);
        fz = f_trial;
        let sy = dot(&s_vec, &y_vec);
        if sy > 1e-12 * dot(&y_vec, &y_vec).sqrt() * dot(&s_vec, &s_vec).sqrt() && sy > 0.0 {
            if s_hist.len() == LBFGS_MEMORY {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s_vec);
            y_hist.push(y_vec);
        }
        if decrease <= 1e-16 * fz.abs().max(1.0) {
            stalls += 1;
            if stalls >= 5 {
                break;
            }
        } else {
            stalls = 0;
        }
    }
    Ok((fz, iters))
}

/// Exact objective at `theta` with `alpha = VaR(theta)`, plus a subgradient
/// of the partial minimum. Samples tied with `alpha` get the fractional
/// weight that zeroes the `alpha` component.
fn exact_with_subgradient(
    data: &Dataset,
    model: LossKind,
    beta: CvarLevel,
    theta: &[f64],
    grad: &mut [f64],
) -> Result<(f64, f64)> {
    let losses = data.losses(model, theta)?;
    let alpha = var_of_losses(&losses, beta)?;
    let f = objective_of_losses(&losses, alpha, beta)?;
    let n = data.len() as f64;
    let s = beta.tail_scale();
    let above = losses.iter().filter(|&&l| l > alpha).count() as f64;
    let ties = losses.iter().filter(|&&l| l == alpha).count() as f64;
    let tie_weight = if ties > 0.0 {
        ((n / s - above) / ties).clamp(0.0, 1.0)
    } else {
        0.0
    };
    grad.iter_mut().for_each(|g| *g = 0.0);
    for (sample, &l) in data.samples().iter().zip(&losses) {
        let u = if l > alpha {
            1.0
        } else if l == alpha {
            tie_weight
        } else {
            continue;
        };
        if u == 0.0 {
            continue;
        }
        let c = u * model.parts(theta, sample)?.slope;
        sample.features.for_each(|i, x| grad[i] += c * x);
    }
    grad.iter_mut().for_each(|g| *g *= s / n);
    Ok((f, alpha))
}

/// Computes the reference optimum of the empirical objective.
pub fn solve_reference(
    data: &Dataset,
    model: LossKind,
    beta: CvarLevel,
    theta0: &[f64],
    max_iters: usize,
    tol: f64,
) -> Result<ReferenceSolution> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol must be positive"));
    }
    if theta0.len() != data.dim() {
        return Err(Error::DimensionMismatch {
            expected: data.dim(),
            found: theta0.len(),
        });
    }
    data.check_labels(model)?;
    let d = data.dim();
    let mut grad = vec![0.0; d];
    let (f0, alpha0) = exact_with_subgradient(data, model, beta, theta0, &mut grad)?;
    if grad.iter().all(|g| *g == 0.0) {
        return Ok(ReferenceSolution {
            theta_star: theta0.to_vec(),
            alpha_star: alpha0,
            f_star: f0,
            iterations: 1,
            stationarity: 0.0,
        });
    }

    let mut iterations = 0usize;
    let mut z: Vec<f64> = theta0.iter().copied().chain([alpha0]).collect();
    let scale = f0.abs().max(1e-12);
    let mut best_theta = theta0.to_vec();
    let mut best = f0;
    let mut lower = f64::NEG_INFINITY;
    for k in 1..=SMOOTHING_STAGES {
        if iterations >= max_iters {
            break;
        }
        let mu = scale * 10f64.powi(-k);
        let smooth = Smoothed { data, model, beta, mu };
        let budget = LBFGS_STAGE_ITERS.min(max_iters - iterations);
        let (f_mu, its) = lbfgs(&smooth, &mut z, budget)?;
        iterations += its;
        lower = f_mu;
        let (f, _) = exact_with_subgradient(data, model, beta, &z[..d], &mut grad)?;
        if f < best {
            best = f;
            best_theta.copy_from_slice(&z[..d]);
        }
    }
    log::debug!("smoothing stage: best {best}, smoothed value {lower}, {iterations} iterations");

    // Polyak polish with a target just below the best value seen
    let mut theta = best_theta.clone();
    let delta0 = (best - lower).max(1e-12 * best.abs().max(1.0));
    let mut history = vec![best];
    let mut stationarity = 0.0;
    for k in 1..=POLISH_ITERS {
        if iterations >= max_iters {
            break;
        }
        iterations += 1;
        let (f, _) = exact_with_subgradient(data, model, beta, &theta, &mut grad)?;
        if f < best {
            best = f;
            best_theta.copy_from_slice(&theta);
        }
        history.push(best);
        if history.len() > POLISH_WINDOW {
            let old = history[history.len() - 1 - POLISH_WINDOW];
            stationarity = old - best;
            if stationarity <= tol * best.abs().max(1.0) {
                break;
            }
        }
        let g_sq = dot(&grad, &grad);
        if g_sq == 0.0 {
            break;
        }
        let target = best - delta0 / (k as f64).sqrt();
        let step = (f - target) / g_sq;
        theta.iter_mut().zip(&grad).for_each(|(t, g)| *t -= step * g);
    }

    let losses = data.losses(model, &best_theta)?;
    let alpha_star = var_of_losses(&losses, beta)?;
    let f_star = objective_of_losses(&losses, alpha_star, beta)?;
    Ok(ReferenceSolution {
        theta_star: best_theta,
        alpha_star,
        f_star,
        iterations,
        stationarity,
    })
}
