//! Denoisers carrying the generative prior.
//!
//! A [`Denoiser`] returns the MMSE estimate `D(x, sigma) = E[x0 | x]` and the
//! vector-Jacobian product of that map, which reconstruction guidance needs
//! to push a data-consistency gradient back to the noisy state.
//!
//! [`GaussianPrior`] is the exact denoiser for a stationary Gaussian prior and
//! serves as an analytically tractable stand-in for a trained network.
//! [`crate::remote::RemoteDenoiser`] forwards the same calls to an external
//! process.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::protocol::ProtocolError;

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("input has {got} samples, denoiser supports {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("noise level must be finite and non-negative, got {0}")]
    InvalidSigma(f64),
    #[error("score undefined at zero noise")]
    ZeroSigma,
    #[error("prior variances must be positive and finite")]
    InvalidVariances,
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// Static properties of a denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenoiserInfo {
    pub sample_rate: u32,
    pub supported_length: usize,
    pub sigma_data: f64,
}

pub trait Denoiser {
    fn info(&self) -> DenoiserInfo;

    fn denoise(&mut self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError>;

    /// `J^T v` with `J` the Jacobian of `denoise` at `(x, sigma)`.
    fn vjp(&mut self, x: &[f64], sigma: f64, v: &[f64]) -> Result<Vec<f64>, PriorError>;
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn info(&self) -> DenoiserInfo {
        (**self).info()
    }

    fn denoise(&mut self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        (**self).denoise(x, sigma)
    }

    fn vjp(&mut self, x: &[f64], sigma: f64, v: &[f64]) -> Result<Vec<f64>, PriorError> {
        (**self).vjp(x, sigma, v)
    }
}

/// Score estimate `(x_hat0 - x) / sigma^2`.
pub fn score_from_denoised(x_hat0: &[f64], x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
    if sigma == 0.0 {
        return Err(PriorError::ZeroSigma);
    }
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(PriorError::InvalidSigma(sigma));
    }
    if x_hat0.len() != x.len() {
        return Err(PriorError::LengthMismatch {
            expected: x.len(),
            got: x_hat0.len(),
        });
    }
    let inv = 1.0 / (sigma * sigma);
    Ok(x_hat0.iter().zip(x).map(|(d, v)| (d - v) * inv).collect())
}

/// Stationary Gaussian prior with per-DFT-bin variances.
///
/// The covariance is diagonal in the Fourier basis, so the MMSE denoiser is a
/// Wiener shrinkage `lambda / (lambda + sigma^2)` per bin. Variances are
/// indexed over all `N` bins and kept Hermitian-symmetric so every output is
/// real.
#[derive(Clone)]
pub struct GaussianPrior {
    mean: Vec<f64>,
    variances: Vec<f64>,
    sample_rate: u32,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for GaussianPrior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GaussianPrior")
            .field("len", &self.variances.len())
            .field("sample_rate", &self.sample_rate)
            .field("sigma_data", &self.sigma_data())
            .finish()
    }
}

/// Frequency in Hz of full-DFT bin `k` of an `n`-point transform, folded to
/// `[0, fs/2]`.
pub fn folded_bin_freq(k: usize, n: usize, sample_rate: u32) -> f64 {
    k.min(n - k) as f64 * sample_rate as f64 / n as f64
}

impl GaussianPrior {
    pub fn new(mean: Vec<f64>, variances: Vec<f64>, sample_rate: u32) -> Result<Self, PriorError> {
        let n = variances.len();
        if n == 0 || variances.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(PriorError::InvalidVariances);
        }
        if (1..n).any(|k| variances[k] != variances[n - k]) {
            return Err(PriorError::InvalidVariances);
        }
        if mean.len() != n {
            return Err(PriorError::LengthMismatch {
                expected: n,
                got: mean.len(),
            });
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            mean,
            variances,
            sample_rate,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    /// Zero-mean prior with `lambda_k ∝ 1 / (1 + (f_k / f_knee)^2)`, scaled so
    /// the per-sample standard deviation equals `sigma_data`.
    pub fn decaying(len: usize, sample_rate: u32, f_knee: f64, sigma_data: f64) -> Result<Self, PriorError> {
        let shape: Vec<f64> = (0..len)
            .map(|k| {
                let f = folded_bin_freq(k, len, sample_rate);
                1.0 / (1.0 + (f / f_knee).powi(2))
            })
            .collect();
        let mean_shape = shape.iter().sum::<f64>() / len as f64;
        let scale = sigma_data * sigma_data / mean_shape;
        let variances = shape.into_iter().map(|v| v * scale).collect();
        Self::new(vec![0.0; len], variances, sample_rate)
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Per-sample standard deviation, `sqrt(mean(lambda))`.
    pub fn sigma_data(&self) -> f64 {
        (self.variances.iter().sum::<f64>() / self.len() as f64).sqrt()
    }

    fn check(&self, x: &[f64], sigma: f64) -> Result<(), PriorError> {
        if x.len() != self.len() {
            return Err(PriorError::LengthMismatch {
                expected: self.len(),
                got: x.len(),
            });
        }
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(PriorError::InvalidSigma(sigma));
        }
        Ok(())
    }

    /// Applies a real per-bin multiplier in the Fourier domain.
    fn fourier_multiply(&self, x: &[f64], gain: impl Fn(usize) -> f64) -> Vec<f64> {
        let n = self.len();
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (k, c) in buf.iter_mut().enumerate() {
            *c *= gain(k);
        }
        self.inverse.process(&mut buf);
        buf.iter().map(|c| c.re / n as f64).collect()
    }

    fn shrinkage(&self, k: usize, sigma: f64) -> f64 {
        let lambda = self.variances[k];
        lambda / (lambda + sigma * sigma)
    }

    pub fn gaussian_denoise(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        self.check(x, sigma)?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        let out = self.fourier_multiply(&centered, |k| self.shrinkage(k, sigma));
        Ok(out.iter().zip(&self.mean).map(|(v, m)| v + m).collect())
    }

    /// The denoiser is linear with a Jacobian that is symmetric (diagonal in
    /// the Fourier basis), so `J^T v = J v`.
    pub fn gaussian_vjp(&self, x: &[f64], sigma: f64, v: &[f64]) -> Result<Vec<f64>, PriorError> {
        self.check(x, sigma)?;
        self.check(v, sigma)?;
        Ok(self.fourier_multiply(v, |k| self.shrinkage(k, sigma)))
    }

    /// Exact score of the noisy marginal `N(m, C + sigma^2 I)`.
    pub fn marginal_score(&self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        self.check(x, sigma)?;
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        Ok(self.fourier_multiply(&centered, |k| -1.0 / (self.variances[k] + sigma * sigma)))
    }

    /// Draws from `N(m, C + sigma^2 I)`; `sigma = 0` samples the prior itself.
    pub fn sample_marginal<R: Rng + ?Sized>(&self, sigma: f64, rng: &mut R) -> Vec<f64> {
        let white: Vec<f64> = (0..self.len()).map(|_| rng.sample(StandardNormal)).collect();
        let colored = self.fourier_multiply(&white, |k| (self.variances[k] + sigma * sigma).sqrt());
        colored.iter().zip(&self.mean).map(|(v, m)| v + m).collect()
    }
}

impl Denoiser for GaussianPrior {
    fn info(&self) -> DenoiserInfo {
        DenoiserInfo {
            sample_rate: self.sample_rate,
            supported_length: self.len(),
            sigma_data: self.sigma_data(),
        }
    }

    fn denoise(&mut self, x: &[f64], sigma: f64) -> Result<Vec<f64>, PriorError> {
        self.gaussian_denoise(x, sigma)
    }

    fn vjp(&mut self, x: &[f64], sigma: f64, v: &[f64]) -> Result<Vec<f64>, PriorError> {
        self.gaussian_vjp(x, sigma, v)
    }
}
