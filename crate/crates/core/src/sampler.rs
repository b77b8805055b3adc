//! Reverse diffusion with reconstruction guidance and joint lowpass filter
//! inference.
//!
//! One outer step at noise level `sigma_i`:
//!
//! 1. denoise the state, `x_hat0 = D(x_i, sigma_i)`;
//! 2. (blind mode) refine the filter on `C_filter(y, H_phi x_hat0)` with the
//!    projected gradient loop, warm-started from the previous step;
//! 3. form the guidance `g = -xi * grad_x ||y - H_phi x_hat0||^2`, back through
//!    the filter (its exact STFT adjoint) and the denoiser VJP;
//! 4. move along the probability-flow ODE with score `(x_hat0 - x_i) / sigma_i^2`
//!    plus guidance, by an Euler step or a Heun step.
//!
//! Runs start from `y + sigma_start * noise` and visit the schedule
//! `sigma_0 = sigma_start > ... > sigma_{T-1} = sigma_min`, i.e. `T - 1`
//! updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{
    bin_gains, optimize_filter, project, FilterBounds, FilterError, FilterObjective, FilterOptimConfig,
    FilterParams, FreqWeighting,
};
use crate::prior::{score_from_denoised, Denoiser, PriorError};
use crate::signal::{check_finite, rms_samples, AudioBuffer, SignalError, StftPlan};

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("step index {index} outside schedule of {steps} steps")]
    StepOutOfRange { index: usize, steps: usize },
    #[error("observation has {got} samples, denoiser supports {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Prior(#[from] PriorError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Warped discretisation of the noise levels between `sigma_start` and
/// `sigma_min`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub sigma_start: f64,
    pub sigma_min: f64,
    pub rho: f64,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::piano()
    }
}

impl NoiseSchedule {
    /// `T = 35`, `0.2 → 1e-4`, `rho = 8`.
    pub fn piano() -> Self {
        Self {
            steps: 35,
            sigma_start: 0.2,
            sigma_min: 1e-4,
            rho: 8.0,
        }
    }

    /// `T = 35`, `0.6 → 1e-3`, `rho = 9`.
    pub fn chamber() -> Self {
        Self {
            steps: 35,
            sigma_start: 0.6,
            sigma_min: 1e-3,
            rho: 9.0,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        let ok = self.steps >= 2
            && self.sigma_min > 0.0
            && self.sigma_start > self.sigma_min
            && self.sigma_start.is_finite()
            && self.rho.is_finite()
            && self.rho > 0.0;
        if ok {
            Ok(())
        } else {
            Err(SamplerError::InvalidConfig(format!("noise schedule {self:?}")))
        }
    }

    pub fn sigma(&self, index: usize) -> Result<f64, SamplerError> {
        self.validate()?;
        if index >= self.steps {
            return Err(SamplerError::StepOutOfRange {
                index,
                steps: self.steps,
            });
        }
        Ok(self.sigma_unchecked(index))
    }

    fn sigma_unchecked(&self, index: usize) -> f64 {
        let inv = 1.0 / self.rho;
        let start = self.sigma_start.powf(inv);
        let end = self.sigma_min.powf(inv);
        let t = index as f64 / (self.steps - 1) as f64;
        (start + t * (end - start)).powf(self.rho)
    }

    pub fn sigmas(&self) -> Result<Vec<f64>, SamplerError> {
        self.validate()?;
        Ok((0..self.steps).map(|i| self.sigma_unchecked(i)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum JacobianMode {
    /// Back-propagate through the denoiser with its VJP.
    #[default]
    Exact,
    /// Treat `d x_hat0 / d x` as the identity (no VJP call).
    Identity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceNorm {
    /// `xi = xi' sqrt(N) / (sigma ||grad||)`: the guidance term has norm
    /// `xi' sqrt(N) / sigma`, the same scale as the prior score.
    #[default]
    Euclidean,
    /// `xi = xi' sqrt(N) / (sigma ||grad||^2)`.
    Squared,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub schedule: NoiseSchedule,
    /// Guidance strength `xi'`; zero disables guidance.
    pub xi_prime: f64,
    pub guidance_norm: GuidanceNorm,
    /// Number of filter breakpoints `S`.
    pub breakpoints: usize,
    pub filter: FilterOptimConfig,
    /// Apply the square-root frequency weighting inside `C_filter`.
    pub frequency_weighting: bool,
    /// 1 = Euler, 2 = Heun.
    pub order: u8,
    /// Stochastic churn amount; 0 gives the deterministic ODE sampler.
    pub churn: f64,
    pub seed: u64,
    pub jacobian_mode: JacobianMode,
    pub window_len: usize,
    pub hop: usize,
    /// A step whose `C_filter` grows by more than this factor is flagged as a
    /// catastrophic failure.
    pub failure_cost_ratio: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl SamplerConfig {
    pub fn standard() -> Self {
        Self {
            schedule: NoiseSchedule::piano(),
            xi_prime: 0.2,
            guidance_norm: GuidanceNorm::default(),
            breakpoints: 5,
            filter: FilterOptimConfig::default(),
            frequency_weighting: true,
            order: 2,
            churn: 0.0,
            seed: 0,
            jacobian_mode: JacobianMode::Exact,
            window_len: StftPlan::DEFAULT_WINDOW,
            hop: StftPlan::DEFAULT_HOP,
            failure_cost_ratio: 1e3,
        }
    }

    pub fn validate(&self) -> Result<(), SamplerError> {
        self.schedule.validate()?;
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_string()));
        if !(self.xi_prime >= 0.0 && self.xi_prime.is_finite()) {
            return bad("xi_prime must be finite and non-negative");
        }
        if self.breakpoints == 0 {
            return bad("at least one filter breakpoint is required");
        }
        if !matches!(self.order, 1 | 2) {
            return bad("order must be 1 or 2");
        }
        if !(self.churn >= 0.0 && self.churn.is_finite()) {
            return bad("churn must be finite and non-negative");
        }
        if !(self.filter.mu_fc >= 0.0 && self.filter.mu_a >= 0.0 && self.filter.tol >= 0.0) {
            return bad("filter step sizes and tolerance must be non-negative");
        }
        Ok(())
    }

    pub fn plan(&self) -> Result<StftPlan, SamplerError> {
        Ok(StftPlan::new(self.window_len, self.hop)?)
    }
}

/// `x_T = y + sigma_start * eps`.
pub fn warm_init<R: Rng + ?Sized>(y: &[f64], sigma_start: f64, rng: &mut R) -> Vec<f64> {
    y.iter()
        .map(|v| v + sigma_start * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Step size of the likelihood term. `None` when the gradient vanishes, in
/// which case guidance is skipped for the step.
pub fn guidance_scale(xi_prime: f64, n: usize, sigma: f64, grad: &[f64], norm: GuidanceNorm) -> Option<f64> {
    let sq: f64 = grad.iter().map(|g| g * g).sum();
    if sq == 0.0 || !sq.is_finite() || sigma <= 0.0 {
        return None;
    }
    let denom = match norm {
        GuidanceNorm::Euclidean => sq.sqrt(),
        GuidanceNorm::Squared => sq,
    };
    Some(xi_prime * (n as f64).sqrt() / (sigma * denom))
}

/// Extra quadratic pull of the denoised estimate towards known samples:
/// `weight * ||mask ⊙ (x_hat0 - target)||^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub target: Vec<f64>,
    pub mask: Vec<f64>,
    pub weight: f64,
}

impl Conditioning {
    /// Conditions the first `head.len()` samples of a segment of `len`.
    pub fn head(head: &[f64], len: usize, weight: f64) -> Self {
        let mut target = vec![0.0; len];
        let mut mask = vec![0.0; len];
        target[..head.len()].copy_from_slice(head);
        mask[..head.len()].iter_mut().for_each(|m| *m = 1.0);
        Self { target, mask, weight }
    }
}

/// Output of a single reconstruction-guidance evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceOutput {
    pub x_hat0: Vec<f64>,
    pub y_hat: Vec<f64>,
    /// `||y - y_hat||^2`.
    pub c_audio: f64,
    /// Conditioning term, zero when absent.
    pub c_condition: f64,
    /// Gradient of the total data cost with respect to the noisy state.
    pub grad_x: Vec<f64>,
    pub xi: Option<f64>,
    /// `-xi * grad_x`, zero when guidance is skipped.
    pub g: Vec<f64>,
}

/// Data cost and its gradient with respect to the denoised estimate.
pub(crate) fn data_cost_gradient(
    y: &[f64],
    x_hat0: &[f64],
    gains: &[f64],
    plan: &StftPlan,
    sample_rate: u32,
    conditioning: Option<&Conditioning>,
) -> Result<(Vec<f64>, f64, f64, Vec<f64>), SamplerError> {
    let mut spec = plan.stft_samples(x_hat0, sample_rate)?;
    for frame in &mut spec.frames {
        for (c, g) in frame.iter_mut().zip(gains) {
            *c *= *g;
        }
    }
    let y_hat = plan.istft_samples(&spec)?;
    let residual: Vec<f64> = y_hat.iter().zip(y).map(|(a, b)| a - b).collect();
    let c_audio = residual.iter().map(|r| r * r).sum();
    // d/dx_hat0 ||L x_hat0 - y||^2 = 2 L^T (L x_hat0 - y), L^T = stft^T diag(h) istft^T
    let mut back = plan.istft_adjoint(&residual, sample_rate)?;
    for frame in &mut back.frames {
        for (c, g) in frame.iter_mut().zip(gains) {
            *c *= 2.0 * *g;
        }
    }
    let mut grad = plan.stft_adjoint(&back)?;
    let mut c_condition = 0.0;
    if let Some(cond) = conditioning {
        for i in 0..grad.len() {
            let d = cond.mask[i] * (x_hat0[i] - cond.target[i]);
            c_condition += cond.weight * d * d;
            grad[i] += 2.0 * cond.weight * cond.mask[i] * d;
        }
    }
    Ok((y_hat, c_audio, c_condition, grad))
}

#[allow(clippy::too_many_arguments)]
fn guidance_from_denoised<D: Denoiser + ?Sized>(
    y: &[f64],
    x: &[f64],
    x_hat0: Vec<f64>,
    sigma: f64,
    gains: &[f64],
    denoiser: &mut D,
    plan: &StftPlan,
    sample_rate: u32,
    config: &SamplerConfig,
    conditioning: Option<&Conditioning>,
) -> Result<GuidanceOutput, SamplerError> {
    let (y_hat, c_audio, c_condition, grad_hat) =
        data_cost_gradient(y, &x_hat0, gains, plan, sample_rate, conditioning)?;
    let grad_x = match config.jacobian_mode {
        JacobianMode::Exact => denoiser.vjp(x, sigma, &grad_hat)?,
        JacobianMode::Identity => grad_hat,
    };
    let xi = if config.xi_prime > 0.0 {
        guidance_scale(config.xi_prime, x.len(), sigma, &grad_x, config.guidance_norm)
    } else {
        None
    };
    let g = match xi {
        Some(xi) => grad_x.iter().map(|v| -xi * v).collect(),
        None => vec![0.0; x.len()],
    };
    Ok(GuidanceOutput {
        x_hat0,
        y_hat,
        c_audio,
        c_condition,
        grad_x,
        xi,
        g,
    })
}

/// Denoises `x` and evaluates the guidance term for the filter given by its
/// per-bin `gains` (see [`bin_gains`]).
#[allow(clippy::too_many_arguments)]
pub fn reconstruction_guidance<D: Denoiser + ?Sized>(
    y: &AudioBuffer,
    x: &[f64],
    sigma: f64,
    gains: &[f64],
    denoiser: &mut D,
    plan: &StftPlan,
    config: &SamplerConfig,
    conditioning: Option<&Conditioning>,
) -> Result<GuidanceOutput, SamplerError> {
    let x_hat0 = denoiser.denoise(x, sigma)?;
    guidance_from_denoised(
        y.samples(),
        x,
        x_hat0,
        sigma,
        gains,
        denoiser,
        plan,
        y.sample_rate(),
        config,
        conditioning,
    )
}

/// Stochastic churn: raises the noise level to `sigma * (1 + gamma)` with
/// fresh noise. `gamma = min(churn / (T - 1), sqrt(2) - 1)`.
pub fn apply_churn<R: Rng + ?Sized>(x: &[f64], sigma: f64, churn: f64, steps: usize, rng: &mut R) -> (Vec<f64>, f64) {
    if churn <= 0.0 {
        return (x.to_vec(), sigma);
    }
    let gamma = (churn / (steps.max(2) - 1) as f64).min(std::f64::consts::SQRT_2 - 1.0);
    let sigma_hat = sigma * (1.0 + gamma);
    let extra = (sigma_hat * sigma_hat - sigma * sigma).sqrt();
    let x_hat = x
        .iter()
        .map(|v| v + extra * rng.sample::<f64, _>(StandardNormal))
        .collect();
    (x_hat, sigma_hat)
}

/// One ODE step from `sigma` to `sigma_next < sigma`.
///
/// Order 1 is `x - sigma (sigma_next - sigma)(s + g)`. Order 2 re-evaluates
/// the prior score at the Euler point through `rescore` and averages the two
/// slopes; the guidance contribution keeps its first-evaluation value.
pub fn step_update<E, F>(
    x: &[f64],
    score: &[f64],
    guidance: &[f64],
    sigma: f64,
    sigma_next: f64,
    order: u8,
    mut rescore: F,
) -> Result<Vec<f64>, E>
where
    F: FnMut(&[f64], f64) -> Result<Vec<f64>, E>,
{
    let dt = sigma_next - sigma;
    let slope: Vec<f64> = score
        .iter()
        .zip(guidance)
        .map(|(s, g)| -sigma * (s + g))
        .collect();
    let euler: Vec<f64> = x.iter().zip(&slope).map(|(v, d)| v + dt * d).collect();
    if order < 2 {
        return Ok(euler);
    }
    let score_next = rescore(&euler, sigma_next)?;
    Ok(x.iter()
        .zip(&slope)
        .zip(score_next.iter().zip(guidance))
        .map(|((v, d1), (s2, g))| {
            let d2 = -sigma_next * s2 - sigma * g;
            v + dt * 0.5 * (d1 + d2)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub sigma: f64,
    pub c_audio: f64,
    pub c_condition: f64,
    pub c_filter: Option<f64>,
    /// Norm of the data-cost gradient with respect to the state.
    pub grad_norm: f64,
    pub xi: Option<f64>,
    pub inner_iterations: usize,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestorationReport {
    pub x0: AudioBuffer,
    /// Filter in effect at the end of the run (`None` in unguided runs).
    pub phi: Option<FilterParams>,
    /// One entry per executed step in blind mode.
    pub phi_trajectory: Vec<FilterParams>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub failure: Option<String>,
}

impl RestorationReport {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn final_c_audio(&self) -> Option<f64> {
        self.diagnostics.last().map(|d| d.c_audio)
    }
}

/// How the degradation is handled during sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum DegradationModel {
    /// Estimate the filter, starting from the given parameters.
    Blind(FilterParams),
    /// Use a parametric filter as is (no inner optimisation).
    Frozen(FilterParams),
    /// Use known per-bin gains on the STFT grid.
    Known(Vec<f64>),
}

/// Everything a sampling run needs besides the denoiser.
#[derive(Debug, Clone)]
pub struct SamplingTask<'a> {
    pub y: &'a AudioBuffer,
    pub degradation: DegradationModel,
    pub conditioning: Option<Conditioning>,
    /// Explicit initial state at `sigma_start`; warm initialization otherwise.
    pub init: Option<Vec<f64>>,
    /// Skip guidance altogether (no denoiser VJPs, no filter loop).
    pub unconditional: bool,
}

impl<'a> SamplingTask<'a> {
    pub fn blind(y: &'a AudioBuffer, breakpoints: usize) -> Self {
        Self {
            y,
            degradation: DegradationModel::Blind(FilterParams::initial(breakpoints)),
            conditioning: None,
            init: None,
            unconditional: false,
        }
    }
}

/// Runs the joint restoration and filter estimation.
pub fn babe_sample<D: Denoiser + ?Sized>(
    y: &AudioBuffer,
    denoiser: &mut D,
    config: &SamplerConfig,
) -> Result<RestorationReport, SamplerError> {
    run(&SamplingTask::blind(y, config.breakpoints), denoiser, config, &mut |_| {})
}

/// Same loop with the filter known: `known_gains` are linear magnitudes on
/// the STFT bin grid.
pub fn informed_sample<D: Denoiser + ?Sized>(
    y: &AudioBuffer,
    known_gains: &[f64],
    denoiser: &mut D,
    config: &SamplerConfig,
) -> Result<RestorationReport, SamplerError> {
    let task = SamplingTask {
        degradation: DegradationModel::Known(known_gains.to_vec()),
        ..SamplingTask::blind(y, config.breakpoints)
    };
    run(&task, denoiser, config, &mut |_| {})
}

/// Unguided probability-flow integration from `x_init` at `sigma_start`.
pub fn sample_unconditional<D: Denoiser + ?Sized>(
    x_init: &AudioBuffer,
    denoiser: &mut D,
    config: &SamplerConfig,
) -> Result<RestorationReport, SamplerError> {
    let task = SamplingTask {
        init: Some(x_init.samples().to_vec()),
        unconditional: true,
        ..SamplingTask::blind(x_init, config.breakpoints)
    };
    run(&task, denoiser, config, &mut |_| {})
}

/// The general sampling loop. `observer` sees every step's diagnostics.
pub fn run<D: Denoiser + ?Sized>(
    task: &SamplingTask<'_>,
    denoiser: &mut D,
    config: &SamplerConfig,
    observer: &mut dyn FnMut(&StepDiagnostics),
) -> Result<RestorationReport, SamplerError> {
    config.validate()?;
    let y = task.y;
    let n = y.len();
    let info = denoiser.info();
    if info.supported_length != n {
        return Err(SamplerError::LengthMismatch {
            expected: info.supported_length,
            got: n,
        });
    }
    if let Some(cond) = &task.conditioning {
        if cond.target.len() != n || cond.mask.len() != n {
            return Err(SamplerError::InvalidConfig("conditioning length differs from the observation".into()));
        }
    }
    let sample_rate = y.sample_rate();
    let plan = config.plan()?;
    let bounds = FilterBounds::for_sample_rate(sample_rate);
    let sigmas = config.schedule.sigmas()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut x = match &task.init {
        Some(init) if init.len() == n => init.clone(),
        Some(init) => {
            return Err(SamplerError::LengthMismatch {
                expected: n,
                got: init.len(),
            })
        }
        None => warm_init(y.samples(), sigmas[0], &mut rng),
    };

    let weighting = if config.frequency_weighting {
        FreqWeighting::for_plan(&plan, sample_rate)
    } else {
        FreqWeighting::uniform(plan.n_bins())
    };
    let y_spec = if matches!(task.degradation, DegradationModel::Blind(_)) && !task.unconditional {
        Some(plan.stft(y)?)
    } else {
        None
    };
    let mut phi = match &task.degradation {
        DegradationModel::Blind(p) | DegradationModel::Frozen(p) => Some(project(p, &bounds)),
        DegradationModel::Known(_) => None,
    };
    let fixed_gains = match &task.degradation {
        DegradationModel::Frozen(p) => Some(bin_gains(&project(p, &bounds), &plan, sample_rate)?),
        DegradationModel::Known(g) => {
            if g.len() != plan.n_bins() {
                return Err(SamplerError::InvalidConfig(format!(
                    "known response has {} bins, STFT grid has {}",
                    g.len(),
                    plan.n_bins()
                )));
            }
            Some(g.clone())
        }
        DegradationModel::Blind(_) => None,
    };

    let mut report = RestorationReport {
        x0: y.clone(),
        phi: phi.clone().filter(|_| !task.unconditional),
        phi_trajectory: Vec::new(),
        diagnostics: Vec::new(),
        failure: None,
    };
    let mut prev_c_filter: Option<f64> = None;

    for step in 0..sigmas.len() - 1 {
        let (x_hat_state, sigma) = apply_churn(&x, sigmas[step], config.churn, config.schedule.steps, &mut rng);
        let sigma_next = sigmas[step + 1];
        let x_hat0 = denoiser.denoise(&x_hat_state, sigma)?;

        let mut inner_iterations = 0;
        let mut c_filter = None;
        let guidance = if task.unconditional {
            None
        } else {
            let gains = match (&fixed_gains, &y_spec, &mut phi) {
                (Some(g), _, _) => g.clone(),
                (None, Some(spec), Some(current)) => {
                    let objective =
                        FilterObjective::with_observation_spec(spec.clone(), &x_hat0, sample_rate, &weighting, &plan)?;
                    let outcome = match optimize_filter(&objective, current, &bounds, &config.filter) {
                        Ok(o) => o,
                        Err(FilterError::NonFiniteGradient { step: inner }) => {
                            report.failure = Some(format!("non-finite filter gradient at step {step}, iteration {inner}"));
                            break;
                        }
                        Err(e) => return Err(e.into()),
                    };
                    inner_iterations = outcome.iterations;
                    c_filter = Some(outcome.cost);
                    *current = outcome.phi;
                    report.phi_trajectory.push(current.clone());
                    bin_gains(current, &plan, sample_rate)?
                }
                _ => unreachable!("blind runs always carry a filter and observation spectrum"),
            };
            Some(guidance_from_denoised(
                y.samples(),
                &x_hat_state,
                x_hat0.clone(),
                sigma,
                &gains,
                denoiser,
                &plan,
                sample_rate,
                config,
                task.conditioning.as_ref(),
            )?)
        };

        let score = score_from_denoised(&x_hat0, &x_hat_state, sigma)?;
        let zeros;
        let g = match &guidance {
            Some(out) => &out.g,
            None => {
                zeros = vec![0.0; n];
                &zeros
            }
        };
        let next = step_update(&x_hat_state, &score, g, sigma, sigma_next, config.order, |xe, s| {
            let d = denoiser.denoise(xe, s)?;
            score_from_denoised(&d, xe, s)
        })?;

        let diag = StepDiagnostics {
            step,
            sigma,
            c_audio: guidance.as_ref().map_or(0.0, |o| o.c_audio),
            c_condition: guidance.as_ref().map_or(0.0, |o| o.c_condition),
            c_filter,
            grad_norm: guidance
                .as_ref()
                .map_or(0.0, |o| o.grad_x.iter().map(|v| v * v).sum::<f64>().sqrt()),
            xi: guidance.as_ref().and_then(|o| o.xi),
            inner_iterations,
            rms: rms_samples(&next),
        };
        observer(&diag);
        report.diagnostics.push(diag);

        if check_finite(&next).is_err() {
            report.failure = Some(format!("non-finite state after step {step}"));
            break;
        }
        if let (Some(prev), Some(cur)) = (prev_c_filter, c_filter) {
            if !cur.is_finite() || (prev > 0.0 && cur > config.failure_cost_ratio * prev) {
                report.failure = Some(format!("filter cost exploded at step {step}: {prev:e} -> {cur:e}"));
                x = next;
                break;
            }
        }
        prev_c_filter = c_filter.or(prev_c_filter);
        x = next;
    }

    if check_finite(&x).is_ok() {
        report.x0 = AudioBuffer::new(x, sample_rate)?;
    }
    if !task.unconditional {
        report.phi = phi;
    }
    Ok(report)
}
