use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, LossKind, Sample};
use crate::rng::{open_unit, standard_normal, stream, Stream, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    SquaredRegression,
    AbsoluteRegression,
    LogisticClassification,
}

impl Task {
    pub fn loss(self) -> LossKind {
        match self {
            Task::SquaredRegression => LossKind::Squared,
            Task::AbsoluteRegression => LossKind::Absolute,
            Task::LogisticClassification => LossKind::Logistic,
        }
    }
}

/// Additive noise `zeta` on the linear predictor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Noise {
    Normal { mu: f64, sigma: f64 },
    Gumbel { mu: f64, scale: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl Noise {
    pub fn normal() -> Self {
        Noise::Normal { mu: 0.0, sigma: 2.0 }
    }

    pub fn gumbel() -> Self {
        Noise::Gumbel { mu: 0.0, scale: 4.0 }
    }

    pub fn log_normal() -> Self {
        Noise::LogNormal { mu: 2.0, sigma: 1.0 }
    }

    fn validate(&self) -> Result<()> {
        let (mu, spread) = match *self {
            Noise::Normal { mu, sigma } | Noise::LogNormal { mu, sigma } => (mu, sigma),
            Noise::Gumbel { mu, scale } => (mu, scale),
        };
        if !mu.is_finite() || !(spread > 0.0 && spread.is_finite()) {
            return Err(Error::invalid(format!("noise parameters out of range: {self:?}")));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            Noise::Normal { mu, sigma } => mu + sigma * standard_normal(rng),
            Noise::Gumbel { mu, scale } => gumbel_inverse_cdf(mu, scale, open_unit(rng)),
            Noise::LogNormal { mu, sigma } => (mu + sigma * standard_normal(rng)).exp(),
        }
    }
}

impl Default for Noise {
    fn default() -> Self {
        Noise::normal()
    }
}

/// `mu - scale * ln(-ln u)` for `u` in `(0, 1)`.
pub fn gumbel_inverse_cdf(mu: f64, scale: f64, u: f64) -> f64 {
    mu - scale * (-u.ln()).ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub task: Task,
    #[serde(default)]
    pub noise: Noise,
    pub d: usize,
    pub n: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.n == 0 {
            return Err(Error::invalid("synthetic d and n must be at least 1"));
        }
        self.noise.validate()
    }
}

/// Draws `theta_gen` and then `n` samples from one seeded stream.
///
/// Features are uniform on the unit sphere (normalized Gaussian vectors).
/// Regression targets are `x . theta_gen + zeta`; classification labels are
/// `+1` with probability `sigmoid(x . theta_gen + zeta)` and `-1` otherwise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = stream(spec.seed, Stream::Sampling);
    let scale = match spec.task {
        Task::LogisticClassification => 10.0,
        _ => 1.0,
    };
    let theta_gen: Vec<f64> = (0..spec.d).map(|_| scale * rng.gen::<f64>()).collect();
    let mut samples = Vec::with_capacity(spec.n);
    for _ in 0..spec.n {
        let x = unit_vector(spec.d, &mut rng);
        let m: f64 = x.iter().zip(&theta_gen).map(|(a, b)| a * b).sum::<f64>() + spec.noise.draw(&mut rng);
        let y = match spec.task {
            Task::LogisticClassification => {
                let p = 1.0 / (1.0 + (-m).exp());
                if rng.gen::<f64>() < p {
                    1.0
                } else {
                    -1.0
                }
            }
            _ => m,
        };
        samples.push(Sample::dense(x, y)?);
    }
    Dataset::new(samples)
}

fn unit_vector(d: usize, rng: &mut StreamRng) -> Vec<f64> {
    loop {
        let mut x: Vec<f64> = (0..d).map(|_| standard_normal(rng)).collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-300 {
            x.iter_mut().for_each(|v| *v /= norm);
            return x;
        }
    }
}
