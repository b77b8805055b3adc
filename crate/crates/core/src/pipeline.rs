//! Long recordings: degradation simulation, segmentation and
//! block-autoregressive restoration.
//!
//! Segments have the denoiser's supported length and overlap by a fixed
//! number of samples. The first segment is restored blind; its filter is
//! reused for every later segment, and each later segment is pulled towards
//! the tail of its predecessor through an extra guidance term. Segments are
//! joined with an equal-power crossfade over the overlap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::filter::{apply_filter, bin_gains, FilterBounds, FilterParams, project};
use crate::prior::Denoiser;
use crate::sampler::{
    run, warm_init, Conditioning, DegradationModel, RestorationReport, SamplerConfig, SamplerError, SamplingTask,
    StepDiagnostics,
};
use crate::signal::{AudioBuffer, StftPlan};

/// `apply_filter` followed by additive white Gaussian noise.
pub fn simulate_degradation<R: Rng + ?Sized>(
    x: &AudioBuffer,
    phi: &FilterParams,
    noise_std: f64,
    plan: &StftPlan,
    rng: &mut R,
) -> Result<AudioBuffer, SamplerError> {
    let phi = project(phi, &FilterBounds::for_sample_rate(x.sample_rate()));
    let filtered = apply_filter(x, &phi, plan)?;
    if noise_std == 0.0 {
        return Ok(filtered);
    }
    let noisy = filtered
        .samples()
        .iter()
        .map(|v| v + noise_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(AudioBuffer::new(noisy, x.sample_rate())?)
}

/// Start offsets of segments of `segment_len` advancing by
/// `segment_len - overlap`; the last one may run past `total`.
pub fn segment_starts(total: usize, segment_len: usize, overlap: usize) -> Vec<usize> {
    assert!(overlap < segment_len, "overlap must be shorter than a segment");
    let advance = segment_len - overlap;
    let mut starts = vec![0];
    while starts.last().unwrap() + segment_len < total {
        starts.push(starts.last().unwrap() + advance);
    }
    starts
}

/// Equal-power join of two equally long fragments: `a cos + b sin` with the
/// angle running from 0 to pi/2.
pub fn equal_power_crossfade(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(i, (x, y))| {
            let theta = std::f64::consts::FRAC_PI_2 * (i as f64 + 0.5) / n as f64;
            x * theta.cos() + y * theta.sin()
        })
        .collect()
}

/// `||tail - head|| / ||tail||`.
pub fn discontinuity(tail: &[f64], head: &[f64]) -> f64 {
    let diff: f64 = tail.iter().zip(head).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = tail.iter().map(|a| a * a).sum();
    if norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (diff / norm).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RestoreMode {
    Blind,
    /// Known degradation filter.
    Informed(FilterParams),
    /// Ignore the observation except for its length.
    Unconditional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoregressiveConfig {
    /// Overlap between consecutive segments, in samples.
    pub overlap: usize,
    pub tail_conditioning: bool,
    /// Weight of the tail term relative to the lowpass term.
    pub tail_weight: f64,
}

impl Default for AutoregressiveConfig {
    fn default() -> Self {
        Self {
            overlap: 0,
            tail_conditioning: true,
            tail_weight: 1.0,
        }
    }
}

impl AutoregressiveConfig {
    /// Overlap as a fraction of the segment length.
    pub fn with_fraction(segment_len: usize, fraction: f64) -> Self {
        Self {
            overlap: (segment_len as f64 * fraction).round() as usize,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentOutcome {
    pub index: usize,
    pub start: usize,
    pub failure: Option<String>,
    /// Mismatch between the previous tail and this segment's head, before
    /// crossfading. `None` for the first segment.
    pub overlap_discontinuity: Option<f64>,
    #[serde(skip)]
    pub diagnostics: Vec<StepDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LongRestoration {
    pub audio: AudioBuffer,
    /// The single filter used for the whole recording.
    pub phi: Option<FilterParams>,
    pub segments: Vec<SegmentOutcome>,
}

impl LongRestoration {
    pub fn failed_segments(&self) -> Vec<usize> {
        self.segments
            .iter()
            .filter(|s| s.failure.is_some())
            .map(|s| s.index)
            .collect()
    }
}

/// Restores a recording of any length segment by segment.
pub fn block_autoregressive_restore<D: Denoiser + ?Sized>(
    y_long: &AudioBuffer,
    denoiser: &mut D,
    config: &SamplerConfig,
    ar: &AutoregressiveConfig,
    mode: &RestoreMode,
    observer: &mut dyn FnMut(usize, &StepDiagnostics),
) -> Result<LongRestoration, SamplerError> {
    config.validate()?;
    let seg_len = denoiser.info().supported_length;
    if seg_len == 0 {
        return Err(SamplerError::InvalidConfig("denoiser reports zero segment length".into()));
    }
    let sr = y_long.sample_rate();
    let total = y_long.len();
    let starts = if total <= seg_len {
        vec![0]
    } else {
        if 2 * ar.overlap > seg_len {
            return Err(SamplerError::InvalidConfig(format!(
                "overlap {} exceeds half the segment length {seg_len}",
                ar.overlap
            )));
        }
        if ar.overlap < config.window_len {
            return Err(SamplerError::InvalidConfig(format!(
                "overlap {} shorter than one STFT window ({})",
                ar.overlap, config.window_len
            )));
        }
        segment_starts(total, seg_len, ar.overlap)
    };

    let mut out = vec![0.0; starts.last().unwrap() + seg_len];
    let mut segments = Vec::with_capacity(starts.len());
    let mut phi: Option<FilterParams> = match mode {
        RestoreMode::Informed(p) => Some(project(p, &FilterBounds::for_sample_rate(sr))),
        _ => None,
    };
    for (index, &start) in starts.iter().enumerate() {
        let mut seg = vec![0.0; seg_len];
        let end = (start + seg_len).min(total);
        seg[..end - start].copy_from_slice(&y_long.samples()[start..end]);
        let y = AudioBuffer::new(seg, sr)?;

        let mut seg_config = config.clone();
        seg_config.seed = config.seed.wrapping_add(index as u64);

        let previous_tail = (index > 0).then(|| out[start..start + ar.overlap].to_vec());
        let conditioning = match (&previous_tail, mode) {
            (Some(tail), RestoreMode::Blind | RestoreMode::Informed(_)) if ar.tail_conditioning => {
                Some(Conditioning::head(tail, seg_len, ar.tail_weight))
            }
            _ => None,
        };
        let task = match mode {
            RestoreMode::Unconditional => {
                let mut rng = ChaCha8Rng::seed_from_u64(seg_config.seed);
                SamplingTask {
                    y: &y,
                    degradation: DegradationModel::Blind(FilterParams::initial(config.breakpoints)),
                    conditioning: None,
                    init: Some(warm_init(&vec![0.0; seg_len], config.schedule.sigma_start, &mut rng)),
                    unconditional: true,
                }
            }
            _ => SamplingTask {
                y: &y,
                degradation: match &phi {
                    Some(p) => DegradationModel::Frozen(p.clone()),
                    None => DegradationModel::Blind(FilterParams::initial(config.breakpoints)),
                },
                conditioning,
                init: None,
                unconditional: false,
            },
        };
        let report: RestorationReport = run(&task, denoiser, &seg_config, &mut |d| observer(index, d))?;
        if phi.is_none() && *mode == RestoreMode::Blind && !report.failed() {
            phi = report.phi.clone();
        }

        // a failed segment keeps the observation itself
        let restored = if report.failed() {
            y.samples().to_vec()
        } else {
            report.x0.samples().to_vec()
        };
        let overlap_discontinuity = previous_tail
            .as_ref()
            .map(|tail| discontinuity(tail, &restored[..ar.overlap]));
        match &previous_tail {
            Some(tail) => {
                let joined = equal_power_crossfade(tail, &restored[..ar.overlap]);
                out[start..start + ar.overlap].copy_from_slice(&joined);
                out[start + ar.overlap..start + seg_len].copy_from_slice(&restored[ar.overlap..]);
            }
            None => out[start..start + seg_len].copy_from_slice(&restored),
        }
        segments.push(SegmentOutcome {
            index,
            start,
            failure: report.failure.clone(),
            overlap_discontinuity,
            diagnostics: report.diagnostics,
        });
    }

    out.truncate(total);
    if *mode == RestoreMode::Unconditional {
        phi = None;
    }
    Ok(LongRestoration {
        audio: AudioBuffer::new(out, sr)?,
        phi,
        segments,
    })
}

/// Per-bin gains of `phi` for `config`'s STFT grid.
pub fn known_gains(phi: &FilterParams, config: &SamplerConfig, sample_rate: u32) -> Result<Vec<f64>, SamplerError> {
    let plan = config.plan()?;
    Ok(bin_gains(&project(phi, &FilterBounds::for_sample_rate(sample_rate)), &plan, sample_rate)?)
}
