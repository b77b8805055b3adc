//! Parametric lowpass filter: a piecewise-linear magnitude response in
//! log-frequency with `S` (cutoff, slope) breakpoints.
//!
//! The response is 0 dB below the first cutoff. Above cutoff `k` it falls
//! with slope `A_k` dB per octave, continuing from the level reached at that
//! cutoff, so the curve is continuous everywhere:
//!
//! ```text
//! H(f) = sum_{i<k} A_i log2(fc_{i+1} / fc_i) + A_k log2(f / fc_k),   fc_k <= f < fc_{k+1}
//! ```
//!
//! Filtering is zero-phase and applied per STFT frame. The fitting cost
//! compares weighted STFT magnitudes and its gradient is exact, obtained
//! through the adjoints of the analysis and synthesis transforms.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{AudioBuffer, SignalError, Spectrogram, StftPlan};

const LN10_OVER_20: f64 = std::f64::consts::LN_10 / 20.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FilterError {
    #[error("filter parameters are not ordered or not finite; project them first")]
    Unordered,
    #[error("filter needs at least one breakpoint")]
    NoBreakpoints,
    #[error("non-finite filter gradient at optimisation step {step}")]
    NonFiniteGradient { step: usize },
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub fc_hz: f64,
    pub slope_db_oct: f64,
}

/// Ordered breakpoints of the lowpass model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterParams {
    pub breakpoints: Vec<Breakpoint>,
}

/// Box and spacing constraints for [`FilterParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterBounds {
    pub fc_min: f64,
    pub fc_max: f64,
    pub a_max: f64,
    pub a_min: f64,
    pub c_f: f64,
    pub c_a: f64,
}

impl FilterBounds {
    /// 20 Hz to Nyquist, slopes between -1 and -50 dB/oct, 10 Hz / 1 dB spacing.
    pub fn for_sample_rate(sample_rate: u32) -> Self {
        Self {
            fc_min: 20.0,
            fc_max: sample_rate as f64 / 2.0,
            a_max: -1.0,
            a_min: -50.0,
            c_f: 10.0,
            c_a: 1.0,
        }
    }
}

impl FilterParams {
    pub fn new(breakpoints: Vec<Breakpoint>) -> Self {
        Self { breakpoints }
    }

    pub fn single(fc_hz: f64, slope_db_oct: f64) -> Self {
        Self::new(vec![Breakpoint {
            fc_hz,
            slope_db_oct,
        }])
    }

    pub fn from_pairs(fcs: &[f64], slopes: &[f64]) -> Self {
        Self::new(
            fcs.iter()
                .zip(slopes)
                .map(|(&fc_hz, &slope_db_oct)| Breakpoint {
                    fc_hz,
                    slope_db_oct,
                })
                .collect(),
        )
    }

    /// Starting point for blind estimation: cutoffs log-spaced over half an
    /// octave from 300 Hz, slopes from -15 to -50 dB/oct (-50 when `S = 1`).
    pub fn initial(s: usize) -> Self {
        let bps = (0..s)
            .map(|i| {
                let t = if s > 1 { i as f64 / (s - 1) as f64 } else { 1.0 };
                Breakpoint {
                    fc_hz: 300.0 * 2f64.powf(0.5 * if s > 1 { t } else { 0.0 }),
                    slope_db_oct: -15.0 + t * (-50.0 + 15.0),
                }
            })
            .collect();
        Self::new(bps)
    }

    pub fn len(&self) -> usize {
        self.breakpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.breakpoints.is_empty()
    }

    pub fn cutoffs(&self) -> impl Iterator<Item = f64> + '_ {
        self.breakpoints.iter().map(|b| b.fc_hz)
    }

    pub fn slopes(&self) -> impl Iterator<Item = f64> + '_ {
        self.breakpoints.iter().map(|b| b.slope_db_oct)
    }

    /// Strictly increasing positive cutoffs, all values finite.
    pub fn is_ordered(&self) -> bool {
        !self.breakpoints.is_empty()
            && self
                .breakpoints
                .iter()
                .all(|b| b.fc_hz.is_finite() && b.slope_db_oct.is_finite() && b.fc_hz > 0.0)
            && self
                .breakpoints
                .windows(2)
                .all(|w| w[0].fc_hz < w[1].fc_hz)
    }

    /// Membership in the constraint set produced by [`project`].
    pub fn satisfies(&self, bounds: &FilterBounds) -> bool {
        if !self.is_ordered() {
            return false;
        }
        let b = &self.breakpoints;
        b[0].fc_hz >= bounds.fc_min
            && b[b.len() - 1].fc_hz <= bounds.fc_max
            && b[0].slope_db_oct <= bounds.a_max
            && b[b.len() - 1].slope_db_oct >= bounds.a_min
            && b.windows(2).all(|w| w[0].slope_db_oct > w[1].slope_db_oct)
    }

    /// Largest relative change of any parameter between two iterates.
    pub fn max_relative_change(&self, previous: &FilterParams) -> f64 {
        self.breakpoints
            .iter()
            .zip(&previous.breakpoints)
            .flat_map(|(a, b)| {
                [
                    rel_change(a.fc_hz, b.fc_hz),
                    rel_change(a.slope_db_oct, b.slope_db_oct),
                ]
            })
            .fold(0.0, f64::max)
    }

    /// Response in dB at each frequency.
    pub fn response_db(&self, freqs: &[f64]) -> Result<Vec<f64>, FilterError> {
        if self.is_empty() {
            return Err(FilterError::NoBreakpoints);
        }
        if !self.is_ordered() {
            return Err(FilterError::Unordered);
        }
        let offsets = self.segment_offsets();
        Ok(freqs
            .iter()
            .map(|&f| self.eval_with_offsets(f, &offsets))
            .collect())
    }

    /// Linear magnitude `10^(H/20)` at each frequency.
    pub fn response_linear(&self, freqs: &[f64]) -> Result<Vec<f64>, FilterError> {
        Ok(self
            .response_db(freqs)?
            .into_iter()
            .map(db_to_linear)
            .collect())
    }

    /// Level in dB reached at each cutoff.
    fn segment_offsets(&self) -> Vec<f64> {
        let mut offsets = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for (i, bp) in self.breakpoints.iter().enumerate() {
            offsets.push(acc);
            if let Some(next) = self.breakpoints.get(i + 1) {
                acc += bp.slope_db_oct * (next.fc_hz / bp.fc_hz).log2();
            }
        }
        offsets
    }

    /// Lowest frequency where the response reaches `-drop_db`; `None` if it
    /// never does (drop must be positive).
    pub fn attenuation_frequency(&self, drop_db: f64) -> Option<f64> {
        if !(drop_db > 0.0) {
            return None;
        }
        let offsets = self.segment_offsets();
        for (k, bp) in self.breakpoints.iter().enumerate() {
            let need = -drop_db - offsets[k];
            if need >= 0.0 {
                return Some(bp.fc_hz);
            }
            if bp.slope_db_oct < 0.0 {
                let f = bp.fc_hz * 2f64.powf(need / bp.slope_db_oct);
                match self.breakpoints.get(k + 1) {
                    Some(next) if f >= next.fc_hz => continue,
                    _ => return Some(f),
                }
            }
        }
        None
    }

    /// Index of the segment containing `f`, `None` in the passband.
    fn segment(&self, f: f64) -> Option<usize> {
        self.breakpoints.iter().rposition(|b| f >= b.fc_hz)
    }

    fn eval_with_offsets(&self, f: f64, offsets: &[f64]) -> f64 {
        match self.segment(f) {
            None => 0.0,
            Some(k) => {
                let bp = &self.breakpoints[k];
                offsets[k] + bp.slope_db_oct * (f / bp.fc_hz).log2()
            }
        }
    }

    /// Partial derivatives of `H(f)` in dB with respect to
    /// `(fc_1..fc_S, A_1..A_S)`, right-continuous at breakpoints.
    fn response_partials(&self, f: f64, out: &mut [f64]) {
        let s = self.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        let Some(k) = self.segment(f) else {
            return;
        };
        let b = &self.breakpoints;
        for i in 0..k {
            out[s + i] = (b[i + 1].fc_hz / b[i].fc_hz).log2();
        }
        out[s + k] = (f / b[k].fc_hz).log2();
        for j in 0..=k {
            let prev = if j > 0 { b[j - 1].slope_db_oct } else { 0.0 };
            out[j] = (prev - b[j].slope_db_oct) / (b[j].fc_hz * std::f64::consts::LN_2);
        }
    }

    fn to_vector(&self) -> Vec<f64> {
        self.cutoffs().chain(self.slopes()).collect()
    }

    fn from_vector(v: &[f64]) -> Self {
        let s = v.len() / 2;
        Self::from_pairs(&v[..s], &v[s..])
    }
}

fn rel_change(new: f64, old: f64) -> f64 {
    let scale = old.abs();
    if scale == 0.0 {
        (new - old).abs()
    } else {
        (new - old).abs() / scale
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

/// Maps arbitrary finite parameters into the constraint set.
///
/// Cutoffs are processed in ascending order: raised to `fc_min`, pushed to
/// `fc_{k-1} + c_f` when they do not exceed their predecessor, and capped so
/// the remaining breakpoints still fit below `fc_max` at `c_f` spacing.
/// Slopes follow the mirrored rule between `a_max` and `a_min` with `c_a`.
/// The result is a fixed point: projecting twice changes nothing.
pub fn project(phi: &FilterParams, bounds: &FilterBounds) -> FilterParams {
    let s = phi.len();
    let mut out = phi.clone();
    for k in 0..s {
        let room = (s - 1 - k) as f64;
        let upper_fc = bounds.fc_max - room * bounds.c_f;
        let mut fc = sanitize(out.breakpoints[k].fc_hz, bounds.fc_min);
        if fc <= bounds.fc_min {
            fc = bounds.fc_min;
        }
        if k > 0 {
            let prev = out.breakpoints[k - 1].fc_hz;
            if fc <= prev {
                fc = prev + bounds.c_f;
            }
        }
        if fc >= upper_fc {
            fc = upper_fc;
        }
        out.breakpoints[k].fc_hz = fc;
    }
    for k in 0..s {
        let room = (s - 1 - k) as f64;
        let lower_a = bounds.a_min + room * bounds.c_a;
        let mut a = sanitize(out.breakpoints[k].slope_db_oct, bounds.a_max);
        if a >= bounds.a_max {
            a = bounds.a_max;
        }
        if k > 0 {
            let prev = out.breakpoints[k - 1].slope_db_oct;
            if a >= prev {
                a = prev - bounds.c_a;
            }
        }
        if a <= lower_a {
            a = lower_a;
        }
        out.breakpoints[k].slope_db_oct = a;
    }
    out
}

fn sanitize(v: f64, fallback: f64) -> f64 {
    if v.is_finite() {
        v
    } else if v == f64::INFINITY {
        f64::MAX
    } else if v == f64::NEG_INFINITY {
        f64::MIN
    } else {
        fallback
    }
}

/// Square-root frequency weighting, 0 at DC and 1 at Nyquist.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqWeighting {
    pub weights: Vec<f64>,
}

impl FreqWeighting {
    pub fn sqrt_frequency(freqs: &[f64], sample_rate: u32) -> Self {
        let nyquist = sample_rate as f64 / 2.0;
        Self {
            weights: freqs.iter().map(|f| (f / nyquist).max(0.0).sqrt()).collect(),
        }
    }

    pub fn for_plan(plan: &StftPlan, sample_rate: u32) -> Self {
        Self::sqrt_frequency(
            &crate::signal::bin_freqs(plan.window_len(), sample_rate),
            sample_rate,
        )
    }

    pub fn uniform(n_bins: usize) -> Self {
        Self {
            weights: vec![1.0; n_bins],
        }
    }
}

/// Multiplies every STFT frame by the real per-bin `gains` and resynthesises.
pub fn apply_gains(x: &[f64], sample_rate: u32, gains: &[f64], plan: &StftPlan) -> Result<Vec<f64>, FilterError> {
    let mut spec = plan.stft_samples(x, sample_rate)?;
    scale_bins(&mut spec, gains);
    Ok(plan.istft_samples(&spec)?)
}

fn scale_bins(spec: &mut Spectrogram, gains: &[f64]) {
    for frame in &mut spec.frames {
        for (c, g) in frame.iter_mut().zip(gains) {
            *c *= *g;
        }
    }
}

/// Per-bin linear gains of `phi` on the plan's frequency grid.
pub fn bin_gains(phi: &FilterParams, plan: &StftPlan, sample_rate: u32) -> Result<Vec<f64>, FilterError> {
    phi.response_linear(&crate::signal::bin_freqs(plan.window_len(), sample_rate))
}

/// Zero-phase filtering of `x` by `phi`, frame by frame.
pub fn apply_filter(x: &AudioBuffer, phi: &FilterParams, plan: &StftPlan) -> Result<AudioBuffer, FilterError> {
    let gains = bin_gains(phi, plan, x.sample_rate())?;
    let y = apply_gains(x.samples(), x.sample_rate(), &gains, plan)?;
    Ok(AudioBuffer::new(y, x.sample_rate())?)
}

/// Weighted squared distance between STFT magnitudes, summed over bins and
/// frames.
pub fn cost_filter_spec(y: &Spectrogram, y_hat: &Spectrogram, weighting: &FreqWeighting) -> Result<f64, FilterError> {
    if y.n_frames() != y_hat.n_frames() || y.n_bins() != y_hat.n_bins() {
        return Err(SignalError::LengthMismatch(y.n_frames(), y_hat.n_frames()).into());
    }
    Ok(y.frames
        .iter()
        .zip(&y_hat.frames)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .zip(&weighting.weights)
                .map(|((p, q), w)| w * w * (p.norm() - q.norm()).powi(2))
                .sum::<f64>()
        })
        .sum())
}

pub fn cost_filter(
    y: &AudioBuffer,
    y_hat: &AudioBuffer,
    weighting: &FreqWeighting,
    plan: &StftPlan,
) -> Result<f64, FilterError> {
    if y.len() != y_hat.len() {
        return Err(SignalError::LengthMismatch(y.len(), y_hat.len()).into());
    }
    cost_filter_spec(&plan.stft(y)?, &plan.stft(y_hat)?, weighting)
}

/// Cost value and gradient over `(fc_1..fc_S, A_1..A_S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterGradient {
    pub cost: f64,
    pub d_fc: Vec<f64>,
    pub d_slope: Vec<f64>,
}

impl FilterGradient {
    pub fn norm(&self) -> f64 {
        self.d_fc
            .iter()
            .chain(&self.d_slope)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.cost.is_finite() && self.d_fc.iter().chain(&self.d_slope).all(|g| g.is_finite())
    }
}

/// `C_filter(y, apply_filter(x_hat0, phi))` as a function of `phi`, with the
/// observation and estimate spectra cached across evaluations.
pub struct FilterObjective<'a> {
    plan: &'a StftPlan,
    sample_rate: u32,
    y_spec: Spectrogram,
    x_spec: Spectrogram,
    freqs: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> FilterObjective<'a> {
    pub fn new(
        y: &AudioBuffer,
        x_hat0: &AudioBuffer,
        weighting: &FreqWeighting,
        plan: &'a StftPlan,
    ) -> Result<Self, FilterError> {
        if y.len() != x_hat0.len() {
            return Err(SignalError::LengthMismatch(y.len(), x_hat0.len()).into());
        }
        Self::from_samples(y.samples(), x_hat0.samples(), y.sample_rate(), weighting, plan)
    }

    pub fn from_samples(
        y: &[f64],
        x_hat0: &[f64],
        sample_rate: u32,
        weighting: &FreqWeighting,
        plan: &'a StftPlan,
    ) -> Result<Self, FilterError> {
        if y.len() != x_hat0.len() {
            return Err(SignalError::LengthMismatch(y.len(), x_hat0.len()).into());
        }
        let y_spec = plan.stft_samples(y, sample_rate)?;
        Self::with_observation_spec(y_spec, x_hat0, sample_rate, weighting, plan)
    }

    /// Reuses an already computed observation spectrogram.
    pub fn with_observation_spec(
        y_spec: Spectrogram,
        x_hat0: &[f64],
        sample_rate: u32,
        weighting: &FreqWeighting,
        plan: &'a StftPlan,
    ) -> Result<Self, FilterError> {
        let x_spec = plan.stft_samples(x_hat0, sample_rate)?;
        if x_spec.n_frames() != y_spec.n_frames() {
            return Err(SignalError::LengthMismatch(y_spec.signal_len, x_hat0.len()).into());
        }
        Ok(Self {
            plan,
            sample_rate,
            y_spec,
            x_spec,
            freqs: crate::signal::bin_freqs(plan.window_len(), sample_rate),
            weights: weighting.weights.clone(),
        })
    }

    pub fn frames(&self) -> usize {
        self.y_spec.n_frames()
    }

    fn filtered_spec(&self, gains: &[f64]) -> Result<Spectrogram, FilterError> {
        let mut filtered = self.x_spec.clone();
        scale_bins(&mut filtered, gains);
        let y_hat = self.plan.istft_samples(&filtered)?;
        Ok(self.plan.stft_samples(&y_hat, self.sample_rate)?)
    }

    pub fn cost(&self, phi: &FilterParams) -> Result<f64, FilterError> {
        let gains = phi.response_linear(&self.freqs)?;
        let y_hat = self.filtered_spec(&gains)?;
        cost_filter_spec(
            &self.y_spec,
            &y_hat,
            &FreqWeighting {
                weights: self.weights.clone(),
            },
        )
    }

    pub fn gradient(&self, phi: &FilterParams) -> Result<FilterGradient, FilterError> {
        let s = phi.len();
        let gains = phi.response_linear(&self.freqs)?;
        let y_hat = self.filtered_spec(&gains)?;

        // dC/dY_hat, then back through stft and istft to per-bin gains
        let mut cost = 0.0;
        let mut d_spec = y_hat.zeros_like();
        for ((dy, yh), yo) in d_spec
            .frames
            .iter_mut()
            .zip(&y_hat.frames)
            .zip(&self.y_spec.frames)
        {
            for k in 0..dy.len() {
                let w2 = self.weights[k] * self.weights[k];
                let mag = yh[k].norm();
                let diff = yo[k].norm() - mag;
                cost += w2 * diff * diff;
                if mag > 0.0 {
                    dy[k] = yh[k] * (-2.0 * w2 * diff / mag);
                }
            }
        }
        let d_time = self.plan.stft_adjoint(&d_spec)?;
        let d_filtered = self.plan.istft_adjoint(&d_time, self.sample_rate)?;

        let mut d_gain = vec![0.0; gains.len()];
        for (z, x) in d_filtered.frames.iter().zip(&self.x_spec.frames) {
            for k in 0..d_gain.len() {
                d_gain[k] += (z[k].conj() * x[k]).re;
            }
        }

        let mut grad = vec![0.0; 2 * s];
        let mut partials = vec![0.0; 2 * s];
        for (k, &f) in self.freqs.iter().enumerate() {
            if d_gain[k] == 0.0 {
                continue;
            }
            phi.response_partials(f, &mut partials);
            let scale = d_gain[k] * gains[k] * LN10_OVER_20;
            for (g, p) in grad.iter_mut().zip(&partials) {
                *g += scale * p;
            }
        }
        Ok(FilterGradient {
            cost,
            d_fc: grad[..s].to_vec(),
            d_slope: grad[s..].to_vec(),
        })
    }
}

/// Exact gradient of `cost_filter(y, apply_filter(x_hat0, phi))` in `phi`.
pub fn grad_cost_filter(
    y: &AudioBuffer,
    x_hat0: &AudioBuffer,
    phi: &FilterParams,
    weighting: &FreqWeighting,
    plan: &StftPlan,
) -> Result<FilterGradient, FilterError> {
    FilterObjective::new(y, x_hat0, weighting, plan)?.gradient(phi)
}

/// Scale of the objective seen by the step sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CostNormalization {
    /// Sum over frames and bins, as [`cost_filter`] reports it.
    Sum,
    /// Average over frames, sum over bins: the step sizes stop depending on
    /// the signal length.
    #[default]
    Frame,
}

/// Controls for the inner projected gradient descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterOptimConfig {
    pub mu_fc: f64,
    pub mu_a: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub normalization: CostNormalization,
}

impl Default for FilterOptimConfig {
    fn default() -> Self {
        Self {
            mu_fc: 1000.0,
            mu_a: 10.0,
            max_iters: 100,
            tol: 5e-3,
            normalization: CostNormalization::Frame,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOptimOutcome {
    pub phi: FilterParams,
    pub iterations: usize,
    /// Cost at the last evaluated iterate, in the configured normalization.
    pub cost: f64,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Projected gradient descent with separate step sizes for cutoffs and
/// slopes. Stops once the largest relative parameter change drops below
/// `tol`, or after `max_iters` steps.
pub fn optimize_filter(
    objective: &FilterObjective<'_>,
    phi0: &FilterParams,
    bounds: &FilterBounds,
    config: &FilterOptimConfig,
) -> Result<FilterOptimOutcome, FilterError> {
    let mut phi = project(phi0, bounds);
    let mut outcome = FilterOptimOutcome {
        phi: phi.clone(),
        iterations: 0,
        cost: f64::NAN,
        grad_norm: f64::NAN,
        converged: false,
    };
    let scale = match config.normalization {
        CostNormalization::Sum => 1.0,
        CostNormalization::Frame => 1.0 / objective.frames() as f64,
    };
    for step in 0..config.max_iters {
        let mut grad = objective.gradient(&phi)?;
        if !grad.is_finite() {
            return Err(FilterError::NonFiniteGradient { step });
        }
        grad.cost *= scale;
        grad.d_fc.iter_mut().chain(grad.d_slope.iter_mut()).for_each(|g| *g *= scale);
        let s = phi.len();
        let mut v = phi.to_vector();
        for i in 0..s {
            v[i] -= config.mu_fc * grad.d_fc[i];
            v[s + i] -= config.mu_a * grad.d_slope[i];
        }
        let next = project(&FilterParams::from_vector(&v), bounds);
        let change = next.max_relative_change(&phi);
        phi = next;
        outcome.iterations = step + 1;
        outcome.cost = grad.cost;
        outcome.grad_norm = grad.norm();
        if change < config.tol {
            outcome.converged = true;
            break;
        }
    }
    outcome.phi = phi;
    Ok(outcome)
}

/// Serialized form of an estimated filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDocument {
    pub sample_rate: u32,
    pub breakpoints: Vec<Breakpoint>,
}

impl FilterDocument {
    pub fn new(phi: &FilterParams, sample_rate: u32) -> Self {
        Self {
            sample_rate,
            breakpoints: phi.breakpoints.clone(),
        }
    }

    pub fn params(&self) -> FilterParams {
        FilterParams::new(self.breakpoints.clone())
    }
}

/// Helper for tests and diagnostics: complex bins scaled by real gains.
pub fn filter_spectrogram(spec: &Spectrogram, gains: &[f64]) -> Spectrogram {
    let mut out = spec.clone();
    scale_bins(&mut out, gains);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rustfft::num_complex::Complex64;
    use rand_chacha::ChaCha8Rng;

    const FS: u32 = 22050;

    fn bounds() -> FilterBounds {
        FilterBounds::for_sample_rate(FS)
    }

    #[test]
    fn single_breakpoint_response() {
        let phi = FilterParams::single(1000.0, -20.0);
        let h = phi.response_db(&[500.0, 2000.0, 4000.0]).unwrap();
        assert!((h[0] - 0.0).abs() < 1e-9);
        assert!((h[1] + 20.0).abs() < 1e-9);
        assert!((h[2] + 40.0).abs() < 1e-9);
    }

    #[test]
    fn two_breakpoint_response() {
        let phi = FilterParams::from_pairs(&[1000.0, 2000.0], &[-10.0, -30.0]);
        let h = phi.response_db(&[2000.0, 4000.0]).unwrap();
        assert!((h[0] + 10.0).abs() < 1e-9);
        assert!((h[1] + 40.0).abs() < 1e-9);
    }

    #[test]
    fn passband_below_first_cutoff() {
        let phi = FilterParams::from_pairs(&[700.0, 1500.0, 3000.0], &[-5.0, -12.0, -30.0]);
        let h = phi.response_db(&[700.0 - 1e-6, 1.0, 0.0]).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn attenuation_frequency_matches_response() {
        let phi = FilterParams::single(1000.0, -20.0);
        assert!((phi.attenuation_frequency(20.0).unwrap() - 2000.0).abs() < 1e-9);
        let phi = FilterParams::from_pairs(&[700.0, 1500.0, 3000.0], &[-1.0, -12.0, -30.0]);
        for drop in [0.5, 3.0, 10.0, 40.0] {
            let f = phi.attenuation_frequency(drop).unwrap();
            assert!((phi.response_db(&[f]).unwrap()[0] + drop).abs() < 1e-9, "{drop}");
        }
        let gentle = FilterParams::single(1000.0, -1.0);
        assert!(gentle.attenuation_frequency(3.0).unwrap() > 7000.0);
        assert_eq!(phi.attenuation_frequency(0.0), None);
    }

    #[test]
    fn unordered_params_rejected() {
        let phi = FilterParams::from_pairs(&[2000.0, 1000.0], &[-10.0, -30.0]);
        assert_eq!(phi.response_db(&[100.0]).unwrap_err(), FilterError::Unordered);
        assert_eq!(
            FilterParams::new(vec![]).response_db(&[1.0]).unwrap_err(),
            FilterError::NoBreakpoints
        );
    }

    #[test]
    fn projection_examples() {
        let b = bounds();
        let p = project(&FilterParams::single(10.0, -20.0), &b);
        assert_eq!(p.breakpoints[0].fc_hz, 20.0);

        let p = project(&FilterParams::from_pairs(&[1000.0, 900.0], &[-10.0, -20.0]), &b);
        assert_eq!(p.breakpoints[1].fc_hz, 1010.0);

        let p = project(&FilterParams::from_pairs(&[1000.0, 2000.0], &[-0.5, -0.5]), &b);
        assert_eq!(p.breakpoints[0].slope_db_oct, -1.0);
        assert_eq!(p.breakpoints[1].slope_db_oct, -2.0);
    }

    #[test]
    fn projection_handles_non_finite_and_crowding() {
        let b = bounds();
        let p = project(
            &FilterParams::from_pairs(&[f64::NAN, f64::INFINITY, 1e9], &[f64::NAN, 5.0, -1e9]),
            &b,
        );
        assert!(p.satisfies(&b), "{p:?}");
        let crowded = FilterParams::from_pairs(&[11025.0; 5], &[-50.0; 5]);
        let p = project(&crowded, &b);
        assert!(p.satisfies(&b), "{p:?}");
        assert_eq!(p.breakpoints[4].fc_hz, 11025.0);
    }

    #[test]
    fn initial_filter_is_feasible() {
        for s in 1..=7 {
            let phi = FilterParams::initial(s);
            assert_eq!(project(&phi, &bounds()), phi);
            assert!((phi.breakpoints[0].fc_hz - 300.0).abs() < 1e-12);
        }
        assert_eq!(FilterParams::initial(1).breakpoints[0].slope_db_oct, -50.0);
        let last = FilterParams::initial(5).breakpoints[4];
        assert!((last.fc_hz - 300.0 * 2f64.sqrt()).abs() < 1e-9);
        assert!((last.slope_db_oct + 50.0).abs() < 1e-12);
    }

    #[test]
    fn weighting_endpoints() {
        let w = FreqWeighting::sqrt_frequency(&[0.0, 2756.25, 11025.0], FS);
        assert_eq!(w.weights[0], 0.0);
        assert!((w.weights[1] - 0.5).abs() < 1e-12);
        assert!((w.weights[2] - 1.0).abs() < 1e-12);
        let plan = StftPlan::default();
        let w = FreqWeighting::for_plan(&plan, FS);
        assert!(w.weights.windows(2).all(|p| p[0] <= p[1]));
        assert!((w.weights[2048] - 1.0).abs() < 1e-12);
    }

    fn noise(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioBuffer::new((0..len).map(|_| rng.gen_range(-1.0..1.0)).collect(), FS).unwrap()
    }

    #[test]
    fn identity_filter_is_round_trip() {
        let plan = StftPlan::default();
        let x = noise(20000, 1);
        let phi = project(&FilterParams::single(11025.0, -20.0), &bounds());
        let y = apply_filter(&x, &phi, &plan).unwrap();
        let roundtrip = plan.istft(&plan.stft(&x).unwrap()).unwrap();
        let err: f64 = y
            .samples()
            .iter()
            .zip(roundtrip.samples())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = rms(&x) * (x.len() as f64).sqrt();
        assert!(err / norm < 1e-6);
        assert_eq!(y.len(), x.len());
    }

    use crate::signal::rms;

    #[test]
    fn cascading_doubles_the_response() {
        let plan = StftPlan::new(1024, 256).unwrap();
        let x = noise(8000, 2);
        let phi = FilterParams::single(1000.0, -10.0);
        let twice = apply_filter(&apply_filter(&x, &phi, &plan).unwrap(), &phi, &plan).unwrap();
        let doubled = FilterParams::single(1000.0, -20.0);
        let once = apply_filter(&x, &doubled, &plan).unwrap();
        let diff: f64 = twice
            .samples()
            .iter()
            .zip(once.samples())
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        let norm: f64 = once.samples().iter().map(|v| v * v).sum();
        // exact only for consistent spectrograms; the filtered spectrogram is
        // close to consistent for a smooth response
        assert!((diff / norm).sqrt() < 1e-2, "{}", (diff / norm).sqrt());
    }

    #[test]
    fn cost_examples() {
        let plan = StftPlan::default();
        let y = noise(9000, 3);
        let w = FreqWeighting::for_plan(&plan, FS);
        assert_eq!(cost_filter(&y, &y, &w, &plan).unwrap(), 0.0);
        assert!(cost_filter(&y, &y.scaled(-1.0), &w, &plan).unwrap() < 1e-18);
        assert!(matches!(
            cost_filter(&y, &noise(100, 1), &w, &plan),
            Err(FilterError::Signal(SignalError::LengthMismatch(..)))
        ));

        let n_bins = 5;
        let mut a = vec![Complex64::new(0.0, 0.0); n_bins];
        let mut b = a.clone();
        a[4] = Complex64::new(0.0, 2.0);
        b[4] = Complex64::new(1.0, 0.0);
        let spec = |frame: Vec<Complex64>| Spectrogram {
            frames: vec![frame],
            window_len: 8,
            hop: 4,
            sample_rate: 8,
            signal_len: 1,
        };
        let weighting = FreqWeighting::sqrt_frequency(&crate::signal::bin_freqs(8, 8), 8);
        assert_eq!(cost_filter_spec(&spec(a), &spec(b), &weighting).unwrap(), 1.0);
    }

    #[test]
    fn zero_estimate_gives_zero_gradient() {
        let plan = StftPlan::default();
        let y = noise(8000, 4);
        let x = AudioBuffer::zeros(8000, FS).unwrap();
        let g = grad_cost_filter(
            &y,
            &x,
            &FilterParams::initial(3),
            &FreqWeighting::for_plan(&plan, FS),
            &plan,
        )
        .unwrap();
        assert!(g.d_fc.iter().chain(&g.d_slope).all(|v| *v == 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let plan = StftPlan::default();
        let weighting = FreqWeighting::for_plan(&plan, FS);
        let x = noise(FS as usize, 5);
        let target = project(
            &FilterParams::from_pairs(&[800.0, 1900.0, 4100.0], &[-8.0, -15.0, -30.0]),
            &bounds(),
        );
        let y = apply_filter(&x, &target, &plan).unwrap();
        // keep cutoffs midway between STFT bins, away from kinks of the cost
        let bin = FS as f64 / 4096.0;
        let mid = |f: f64| ((f / bin).floor() + 0.5) * bin;
        let phi = FilterParams::from_pairs(&[mid(1000.0), mid(2500.0), mid(5000.0)], &[-12.0, -20.0, -25.0]);
        let obj = FilterObjective::new(&y, &x, &weighting, &plan).unwrap();
        let g = obj.gradient(&phi).unwrap();
        assert!((g.cost - obj.cost(&phi).unwrap()).abs() < 1e-9 * g.cost);
        for i in 0..3 {
            let fd = central_difference(&obj, &phi, i, true, 1.0);
            assert!((g.d_fc[i] - fd).abs() <= 1e-4 * fd.abs(), "fc {i}: {} vs {fd}", g.d_fc[i]);
            let fd = central_difference(&obj, &phi, i, false, 0.01);
            assert!((g.d_slope[i] - fd).abs() <= 1e-4 * fd.abs(), "A {i}: {} vs {fd}", g.d_slope[i]);
        }
    }

    fn central_difference(obj: &FilterObjective<'_>, phi: &FilterParams, i: usize, cutoff: bool, h: f64) -> f64 {
        let bump = |delta: f64| {
            let mut p = phi.clone();
            if cutoff {
                p.breakpoints[i].fc_hz += delta;
            } else {
                p.breakpoints[i].slope_db_oct += delta;
            }
            obj.cost(&p).unwrap()
        };
        (bump(h) - bump(-h)) / (2.0 * h)
    }

    #[test]
    fn converged_start_returns_after_one_step() {
        let plan = StftPlan::default();
        let weighting = FreqWeighting::for_plan(&plan, FS);
        let x = noise(8000, 6);
        let phi = FilterParams::single(1000.0, -20.0);
        let y = apply_filter(&x, &phi, &plan).unwrap();
        let obj = FilterObjective::new(&y, &x, &weighting, &plan).unwrap();
        let out = optimize_filter(&obj, &phi, &bounds(), &FilterOptimConfig::default()).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
        assert!(out.phi.max_relative_change(&phi) < 5e-3);
    }

    #[test]
    fn rejects_non_finite_gradient() {
        let plan = StftPlan::new(256, 128).unwrap();
        let weighting = FreqWeighting::for_plan(&plan, FS);
        let x = noise(1000, 7).scaled(1e300);
        let y = noise(1000, 8).scaled(1e300);
        let obj = FilterObjective::new(&y, &x, &weighting, &plan).unwrap();
        let err = optimize_filter(&obj, &FilterParams::initial(2), &bounds(), &FilterOptimConfig::default())
            .unwrap_err();
        assert_eq!(err, FilterError::NonFiniteGradient { step: 0 });
    }

    #[test]
    fn document_round_trips_through_json() {
        let doc = FilterDocument::new(&FilterParams::initial(3), FS);
        let text = serde_json::to_string(&doc).unwrap();
        assert!(text.contains("fc_hz") && text.contains("slope_db_oct"));
        let back: FilterDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_params() -> impl Strategy<Value = FilterParams> {
            (1usize..7)
                .prop_flat_map(|s| {
                    (
                        proptest::collection::vec(-1000.0f64..20000.0, s),
                        proptest::collection::vec(-80.0f64..20.0, s),
                    )
                })
                .prop_map(|(f, a)| FilterParams::from_pairs(&f, &a))
        }

        proptest! {
            #[test]
            fn projection_is_idempotent_and_feasible(phi in arb_params()) {
                let b = FilterBounds::for_sample_rate(FS);
                let p = project(&phi, &b);
                prop_assert!(p.satisfies(&b));
                prop_assert_eq!(project(&p, &b), p);
            }

            #[test]
            fn response_is_continuous(phi in arb_params()) {
                let p = project(&phi, &FilterBounds::for_sample_rate(FS));
                for bp in &p.breakpoints {
                    let eps = bp.fc_hz * 1e-12;
                    let h = p.response_db(&[bp.fc_hz - eps, bp.fc_hz]).unwrap();
                    prop_assert!((h[0] - h[1]).abs() <= 1e-9);
                }
            }
        }
    }
}
