//! Closed-form pieces of the variational objective, plus the seeded random
//! source every stochastic step draws from.

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::diffengine::Tensor;
use crate::error::{ensure_finite, Error, Result};

/// Factorized Gaussian `N(mean, diag(exp(log_variance)))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalGaussian {
    pub mean: Vec<f64>,
    pub log_variance: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, log_variance: Vec<f64>) -> Result<Self> {
        if mean.len() != log_variance.len() {
            return Err(Error::Shape(format!(
                "mean has {} dims, log-variance {}",
                mean.len(),
                log_variance.len()
            )));
        }
        Ok(Self { mean, log_variance })
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            log_variance: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.log_variance.iter().map(|lv| (0.5 * lv).exp()).collect()
    }

    fn validate(&self) -> Result<()> {
        if self.mean.len() != self.log_variance.len() {
            return Err(Error::Shape("mean/log-variance length mismatch".into()));
        }
        ensure_finite("mean", &self.mean)?;
        ensure_finite("log-variance", &self.log_variance)
    }
}

/// `KL(q || N(0, I)) = -½ Σ_d (1 + log σ² - μ² - σ²)`.
///
/// Each term is evaluated as `½(μ² + expm1(log σ²) - log σ²)`, which is
/// the same quantity without cancellation near `σ = 1`, so the result is
/// never negative.
pub fn kld_to_standard_normal(q: &DiagonalGaussian) -> Result<f64> {
    q.validate()?;
    Ok(q.mean
        .iter()
        .zip(&q.log_variance)
        .map(|(mu, lv)| 0.5 * (mu * mu + (lv.exp_m1() - lv)))
        .sum())
}

/// Gaussian log-likelihood of every row of `x` (N × K) under `p`, with the
/// `log √(2π)` constant dropped:
/// `-½ Σ_n Σ_k ((x_n[k] - μ[k])² / σ[k]² + log σ[k]²)`.
pub fn gaussian_log_likelihood(x: &Tensor, p: &DiagonalGaussian) -> Result<f64> {
    p.validate()?;
    if x.cols() != p.dim() {
        return Err(Error::Shape(format!(
            "{} columns against a {}-dim Gaussian",
            x.cols(),
            p.dim()
        )));
    }
    ensure_finite("points", x.values())?;
    let inv_var: Vec<f64> = p.log_variance.iter().map(|lv| (-lv).exp()).collect();
    let mut total = 0.0;
    for n in 0..x.rows() {
        for (k, &v) in x.row_slice(n).iter().enumerate() {
            let r = v - p.mean[k];
            total += r * r * inv_var[k] + p.log_variance[k];
        }
    }
    Ok(-0.5 * total)
}

/// `z = μ + σ ⊙ ε` for a caller-supplied `ε`.
pub fn reparameterize_with(q: &DiagonalGaussian, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != q.dim() {
        return Err(Error::Shape(format!(
            "{} noise values for a {}-dim Gaussian",
            eps.len(),
            q.dim()
        )));
    }
    Ok(q.mean
        .iter()
        .zip(q.std_dev())
        .zip(eps)
        .map(|((mu, s), e)| mu + s * e)
        .collect())
}

/// Draws one `ε ~ N(0, I)` from `rng` and reparameterizes.
pub fn reparameterize(q: &DiagonalGaussian, rng: &mut RandomSource) -> Vec<f64> {
    let eps: Vec<f64> = (0..q.dim()).map(|_| rng.standard_normal()).collect();
    reparameterize_with(q, &eps).expect("noise sized to q")
}

/// Seeded ChaCha8 stream. The same seed gives the same draws on every
/// platform; standard normals come from Box–Muller on top of it.
#[derive(Clone, Debug)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
    spare_normal: Option<f64>,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream derived from this source's seed and `stream`.
    /// Does not advance `self`, so results never depend on scheduling.
    pub fn child(&self, stream: u64) -> RandomSource {
        RandomSource::new(splitmix64(self.seed ^ splitmix64(stream)))
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = 1.0 - self.uniform(); // (0, 1]
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        mean + std_dev * self.standard_normal()
    }

    /// Uniform integer in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // Lemire's multiply-shift; bias is < 2^-32 for the sizes used here.
        ((self.rng.next_u64() >> 32) * n as u64 >> 32) as usize
    }

    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        let dist = Poisson::new(mean).expect("positive finite mean");
        dist.sample(&mut self.rng) as u64
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n` in random order.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        let k = k.min(n);
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}
