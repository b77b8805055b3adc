//! Reference-based evaluation: frequency-response error, log-spectral
//! distance and the low-level failure-risk diagnostic.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{FilterError, FilterParams};
use crate::signal::{rms, AudioBuffer, SignalError, StftPlan};

/// Floor for response magnitudes.
pub const MAGNITUDE_FLOOR: f64 = 1e-6;
/// Floor for STFT magnitudes before taking logs in [`lsd`].
pub const LSD_FLOOR: f64 = 1e-8;
/// Points of the default log-frequency evaluation grid.
pub const GRID_POINTS: usize = 512;
pub const GRID_MIN_HZ: f64 = 20.0;
/// Default RMS floor of [`failure_risk`].
pub const DEFAULT_RMS_FLOOR: f64 = 0.01;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("response table needs matching, non-empty freqs and magnitudes")]
    Shape,
    #[error("frequencies must be strictly increasing, positive and finite")]
    Frequencies,
    #[error("magnitudes must be finite and non-negative")]
    Magnitudes,
    #[error("grids cannot be aligned: estimate covers {0}..{1} Hz, reference needs {2}..{3} Hz")]
    Unalignable(f64, f64, f64, f64),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// A magnitude response sampled on a frequency grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseTable {
    freqs: Vec<f64>,
    magnitudes: Vec<f64>,
}

impl ResponseTable {
    /// Magnitudes below [`MAGNITUDE_FLOOR`] are raised to it.
    pub fn new(freqs: Vec<f64>, magnitudes: Vec<f64>) -> Result<Self, MetricsError> {
        if freqs.is_empty() || freqs.len() != magnitudes.len() {
            return Err(MetricsError::Shape);
        }
        if freqs.iter().any(|f| !f.is_finite() || *f <= 0.0) || freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(MetricsError::Frequencies);
        }
        if magnitudes.iter().any(|m| !m.is_finite() || *m < 0.0) {
            return Err(MetricsError::Magnitudes);
        }
        let magnitudes = magnitudes.into_iter().map(|m| m.max(MAGNITUDE_FLOOR)).collect();
        Ok(Self { freqs, magnitudes })
    }

    /// Linear magnitude response of `phi` on `freqs`.
    pub fn from_filter(phi: &FilterParams, freqs: &[f64]) -> Result<Self, MetricsError> {
        let mags = phi.response_linear(freqs)?;
        Self::new(freqs.to_vec(), mags)
    }

    /// Response of `phi` on the default grid for `sample_rate`.
    pub fn on_default_grid(phi: &FilterParams, sample_rate: u32) -> Result<Self, MetricsError> {
        Self::from_filter(phi, &log_grid(sample_rate))
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Resamples onto `freqs` by linear interpolation in log-frequency.
    pub fn resample(&self, freqs: &[f64]) -> Result<Self, MetricsError> {
        let lo = self.freqs[0];
        let hi = *self.freqs.last().unwrap();
        let (need_lo, need_hi) = match (freqs.first(), freqs.last()) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(MetricsError::Shape),
        };
        // small relative slack for grids built by different float paths
        let tol = 1e-9;
        if need_lo < lo * (1.0 - tol) || need_hi > hi * (1.0 + tol) {
            return Err(MetricsError::Unalignable(lo, hi, need_lo, need_hi));
        }
        let log_f: Vec<f64> = self.freqs.iter().map(|f| f.ln()).collect();
        let mags = freqs
            .iter()
            .map(|f| {
                let lf = f.ln().clamp(log_f[0], *log_f.last().unwrap());
                let j = log_f.partition_point(|v| *v <= lf);
                if j == 0 {
                    return self.magnitudes[0];
                }
                if j >= log_f.len() {
                    return *self.magnitudes.last().unwrap();
                }
                let t = (lf - log_f[j - 1]) / (log_f[j] - log_f[j - 1]);
                self.magnitudes[j - 1] + t * (self.magnitudes[j] - self.magnitudes[j - 1])
            })
            .collect();
        Self::new(freqs.to_vec(), mags)
    }
}

/// [`GRID_POINTS`] log-spaced frequencies from 20 Hz to Nyquist.
pub fn log_grid(sample_rate: u32) -> Vec<f64> {
    log_grid_n(GRID_POINTS, GRID_MIN_HZ, sample_rate as f64 / 2.0)
}

pub fn log_grid_n(n: usize, lo: f64, hi: f64) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| {
            if i == n - 1 {
                hi
            } else {
                (a + (b - a) * i as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

/// How the per-frequency relative errors are aggregated before the dB
/// conversion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FreAggregate {
    /// Plain sum over the grid.
    #[default]
    Sum,
    /// Average over the grid, independent of the grid size.
    Mean,
}

/// Frequency-response error in dB, summed over the grid of `h_ref`.
/// A perfect estimate gives `-inf`.
pub fn fre(h_ref: &ResponseTable, h_est: &ResponseTable) -> Result<f64, MetricsError> {
    fre_with(h_ref, h_est, FreAggregate::Sum)
}

pub fn fre_with(h_ref: &ResponseTable, h_est: &ResponseTable, aggregate: FreAggregate) -> Result<f64, MetricsError> {
    let resampled;
    let est = if h_est.freqs == h_ref.freqs {
        h_est
    } else {
        resampled = h_est.resample(&h_ref.freqs)?;
        &resampled
    };
    let total: f64 = h_ref
        .magnitudes
        .iter()
        .zip(&est.magnitudes)
        .map(|(r, e)| (r - e).abs() / r)
        .sum();
    let value = match aggregate {
        FreAggregate::Sum => total,
        FreAggregate::Mean => total / h_ref.len() as f64,
    };
    Ok(20.0 * value.log10())
}

/// FRE between two parametric filters on the default grid.
pub fn filter_fre(
    reference: &FilterParams,
    estimate: &FilterParams,
    sample_rate: u32,
    aggregate: FreAggregate,
) -> Result<f64, MetricsError> {
    let grid = log_grid(sample_rate);
    fre_with(
        &ResponseTable::from_filter(reference, &grid)?,
        &ResponseTable::from_filter(estimate, &grid)?,
        aggregate,
    )
}

/// JSON form of a dB score: `-inf` becomes the string `"-inf"`.
pub fn db_to_json(value: f64) -> serde_json::Value {
    if value == f64::NEG_INFINITY {
        serde_json::Value::String("-inf".into())
    } else if value.is_finite() {
        serde_json::json!(value)
    } else {
        serde_json::Value::String(value.to_string())
    }
}

/// Log-spectral distance: the mean over frames of the RMS difference of
/// `log10 |S|^2` across bins.
pub fn lsd(reference: &AudioBuffer, estimate: &AudioBuffer, plan: &StftPlan) -> Result<f64, MetricsError> {
    if reference.len() != estimate.len() {
        return Err(SignalError::LengthMismatch(reference.len(), estimate.len()).into());
    }
    let a = plan.stft(reference)?;
    let b = plan.stft(estimate)?;
    let log_power = |c: &rustfft::num_complex::Complex64| 2.0 * c.norm().max(LSD_FLOOR).log10();
    let total: f64 = a
        .frames
        .iter()
        .zip(&b.frames)
        .map(|(fa, fb)| {
            let ms = fa
                .iter()
                .zip(fb)
                .map(|(x, y)| (log_power(x) - log_power(y)).powi(2))
                .sum::<f64>()
                / fa.len() as f64;
            ms.sqrt()
        })
        .sum();
    Ok(total / a.n_frames() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureRisk {
    pub rms: f64,
    pub low_energy_warning: bool,
}

/// Flags observations too quiet to guide the filter estimate.
pub fn failure_risk(y: &AudioBuffer) -> FailureRisk {
    failure_risk_with_floor(y, DEFAULT_RMS_FLOOR)
}

pub fn failure_risk_with_floor(y: &AudioBuffer, floor: f64) -> FailureRisk {
    let level = rms(y);
    FailureRisk {
        rms: level,
        low_energy_warning: level < floor,
    }
}
