//! Audio containers, the framed STFT/ISTFT pair and full-signal spectra.
//!
//! DFT convention: forward transforms are unnormalized, inverse transforms
//! carry the `1/N` factor. The STFT uses a periodic Hamming window and
//! reflect-pads both ends by half a window, so a signal of `N` samples
//! (zero-padded to at least one window) yields `1 + N / hop` frames.
//!
//! Besides the forward maps, [`StftPlan`] exposes the exact adjoints of
//! `stft` and `istft` (with respect to the real inner product on samples and
//! `Re <a, b>` on one-sided spectra). The filter and guidance gradients are
//! assembled from these.

use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("audio buffer is empty")]
    Empty,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("sample rate must be positive")]
    ZeroSampleRate,
    #[error("invalid STFT geometry: {0}")]
    Geometry(String),
    #[error("spectrogram geometry (window {got_window}, hop {got_hop}) does not match plan (window {window}, hop {hop})")]
    PlanMismatch {
        window: usize,
        hop: usize,
        got_window: usize,
        got_hop: usize,
    },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("silent input")]
    SilentInput,
}

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, SignalError> {
        if sample_rate == 0 {
            return Err(SignalError::ZeroSampleRate);
        }
        if samples.is_empty() {
            return Err(SignalError::Empty);
        }
        check_finite(&samples)?;
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Averages interleaved channels down to mono.
    pub fn from_interleaved(
        interleaved: &[f64],
        channels: usize,
        sample_rate: u32,
    ) -> Result<Self, SignalError> {
        if channels == 0 {
            return Err(SignalError::Geometry("zero channels".into()));
        }
        let samples = interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect();
        Self::new(samples, sample_rate)
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self, SignalError> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

pub(crate) fn check_finite(samples: &[f64]) -> Result<(), SignalError> {
    match samples.iter().position(|s| !s.is_finite()) {
        Some(i) => Err(SignalError::NonFinite(i)),
        None => Ok(()),
    }
}

/// One-sided STFT frames, stored frame-major: `frames[m][k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: Vec<Vec<Complex64>>,
    pub window_len: usize,
    pub hop: usize,
    pub sample_rate: u32,
    /// Length of the analysed signal, used to trim the synthesis output.
    pub signal_len: usize,
}

impl Spectrogram {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn n_bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            frames: vec![vec![Complex64::new(0.0, 0.0); self.n_bins()]; self.n_frames()],
            ..self.clone()
        }
    }

    /// Bin centre frequencies in Hz.
    pub fn bin_freqs(&self) -> Vec<f64> {
        bin_freqs(self.window_len, self.sample_rate)
    }

    /// `Re <self, other>` summed over all frames and bins.
    pub fn inner(&self, other: &Spectrogram) -> f64 {
        self.frames
            .iter()
            .zip(&other.frames)
            .flat_map(|(a, b)| a.iter().zip(b))
            .map(|(a, b)| (a.conj() * b).re)
            .sum()
    }
}

pub fn bin_freqs(window_len: usize, sample_rate: u32) -> Vec<f64> {
    (0..=window_len / 2)
        .map(|k| k as f64 * sample_rate as f64 / window_len as f64)
        .collect()
}

/// Immutable STFT geometry with cached FFT plans.
#[derive(Clone)]
pub struct StftPlan {
    window: Vec<f64>,
    hop: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for StftPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StftPlan")
            .field("window_len", &self.window.len())
            .field("hop", &self.hop)
            .finish()
    }
}

impl Default for StftPlan {
    fn default() -> Self {
        Self::new(4096, 2048).expect("default geometry is valid")
    }
}

impl StftPlan {
    pub const DEFAULT_WINDOW: usize = 4096;
    pub const DEFAULT_HOP: usize = 2048;

    /// Hamming analysis/synthesis plan. `window_len` must be an even multiple
    /// of `hop` with at least 50% overlap.
    pub fn new(window_len: usize, hop: usize) -> Result<Self, SignalError> {
        if hop == 0 || window_len < 2 || window_len % 2 != 0 {
            return Err(SignalError::Geometry(format!(
                "window {window_len}, hop {hop}"
            )));
        }
        if window_len % hop != 0 || window_len < 2 * hop {
            return Err(SignalError::Geometry(format!(
                "window {window_len} must be a multiple of hop {hop} with at least 50% overlap"
            )));
        }
        let window = (0..window_len)
            .map(|n| {
                0.54 - 0.46 * (2.0 * std::f64::consts::PI * n as f64 / window_len as f64).cos()
            })
            .collect();
        let mut planner = FftPlanner::new();
        Ok(Self {
            window,
            hop,
            forward: planner.plan_fft_forward(window_len),
            inverse: planner.plan_fft_inverse(window_len),
        })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn n_bins(&self) -> usize {
        self.window.len() / 2 + 1
    }

    fn pad(&self) -> usize {
        self.window.len() / 2
    }

    /// Length after zero-padding short inputs to one window.
    fn inner_len(&self, signal_len: usize) -> usize {
        signal_len.max(self.window.len())
    }

    pub fn n_frames(&self, signal_len: usize) -> usize {
        1 + self.inner_len(signal_len) / self.hop
    }

    fn check_spec(&self, spec: &Spectrogram) -> Result<(), SignalError> {
        if spec.window_len != self.window_len() || spec.hop != self.hop {
            return Err(SignalError::PlanMismatch {
                window: self.window_len(),
                hop: self.hop,
                got_window: spec.window_len,
                got_hop: spec.hop,
            });
        }
        let expected = self.n_frames(spec.signal_len);
        if spec.frames.len() != expected || spec.frames.iter().any(|f| f.len() != self.n_bins()) {
            return Err(SignalError::Geometry(format!(
                "expected {expected} frames of {} bins",
                self.n_bins()
            )));
        }
        Ok(())
    }

    /// Zero-pad to one window, then reflect-pad both ends by half a window.
    fn padded(&self, x: &[f64]) -> Vec<f64> {
        let p = self.pad();
        let len = self.inner_len(x.len());
        let mut inner = x.to_vec();
        inner.resize(len, 0.0);
        let mut out = Vec::with_capacity(len + 2 * p);
        out.extend((0..p).map(|j| inner[p - j]));
        out.extend_from_slice(&inner);
        out.extend((0..p).map(|j| inner[len - 2 - j]));
        out
    }

    /// Adjoint of [`Self::padded`] followed by truncation to `signal_len`.
    fn unpad_adjoint(&self, u: &[f64], signal_len: usize) -> Vec<f64> {
        let p = self.pad();
        let len = self.inner_len(signal_len);
        let mut x = u[p..p + len].to_vec();
        for j in 0..p {
            x[p - j] += u[j];
            x[len - 2 - j] += u[p + len + j];
        }
        x.truncate(signal_len);
        x
    }

    fn frame_fft(&self, frame: &mut [Complex64]) {
        self.forward.process(frame);
    }

    fn frame_ifft(&self, frame: &mut [Complex64]) {
        self.inverse.process(frame);
    }

    /// Windowed one-sided DFT of every frame.
    pub fn stft_samples(&self, x: &[f64], sample_rate: u32) -> Result<Spectrogram, SignalError> {
        check_finite(x)?;
        if x.is_empty() {
            return Err(SignalError::Empty);
        }
        let w = self.window_len();
        let u = self.padded(x);
        let n_frames = self.n_frames(x.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); w];
        let frames = (0..n_frames)
            .map(|m| {
                let start = m * self.hop;
                for (n, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(u[start + n] * self.window[n], 0.0);
                }
                self.frame_fft(&mut buf);
                buf[..=w / 2].to_vec()
            })
            .collect();
        Ok(Spectrogram {
            frames,
            window_len: w,
            hop: self.hop,
            sample_rate,
            signal_len: x.len(),
        })
    }

    pub fn stft(&self, x: &AudioBuffer) -> Result<Spectrogram, SignalError> {
        self.stft_samples(x.samples(), x.sample_rate())
    }

    /// Per-sample normalisation of the weighted overlap-add (sum of squared
    /// windows), over the padded domain.
    fn ola_norm(&self, n_frames: usize, padded_len: usize) -> Vec<f64> {
        let mut norm = vec![0.0; padded_len];
        for m in 0..n_frames {
            let start = m * self.hop;
            for (n, w) in self.window.iter().enumerate() {
                if start + n < padded_len {
                    norm[start + n] += w * w;
                }
            }
        }
        norm
    }

    /// Weighted overlap-add synthesis, trimmed to the analysed length.
    pub fn istft_samples(&self, spec: &Spectrogram) -> Result<Vec<f64>, SignalError> {
        self.check_spec(spec)?;
        let w = self.window_len();
        let p = self.pad();
        let padded_len = self.inner_len(spec.signal_len) + 2 * p;
        let mut acc = vec![0.0; padded_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); w];
        let scale = 1.0 / w as f64;
        for (m, frame) in spec.frames.iter().enumerate() {
            buf[..=w / 2].copy_from_slice(frame);
            for k in 1..w / 2 {
                buf[w - k] = frame[k].conj();
            }
            self.frame_ifft(&mut buf);
            let start = m * self.hop;
            for n in 0..w {
                if start + n < padded_len {
                    acc[start + n] += self.window[n] * buf[n].re * scale;
                }
            }
        }
        let norm = self.ola_norm(spec.frames.len(), padded_len);
        Ok((p..p + spec.signal_len).map(|t| acc[t] / norm[t]).collect())
    }

    pub fn istft(&self, spec: &Spectrogram) -> Result<AudioBuffer, SignalError> {
        AudioBuffer::new(self.istft_samples(spec)?, spec.sample_rate)
    }

    /// Adjoint of `stft_samples` for a signal of `signal_len` samples.
    pub fn stft_adjoint(&self, spec: &Spectrogram) -> Result<Vec<f64>, SignalError> {
        self.check_spec(spec)?;
        let w = self.window_len();
        let p = self.pad();
        let padded_len = self.inner_len(spec.signal_len) + 2 * p;
        let mut u = vec![0.0; padded_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); w];
        for (m, frame) in spec.frames.iter().enumerate() {
            buf[..=w / 2].copy_from_slice(frame);
            for b in &mut buf[w / 2 + 1..] {
                *b = Complex64::new(0.0, 0.0);
            }
            // unnormalized inverse transform: sum_k Z_k e^{+i 2 pi k n / W}
            self.frame_ifft(&mut buf);
            let start = m * self.hop;
            for n in 0..w {
                u[start + n] += self.window[n] * buf[n].re;
            }
        }
        Ok(self.unpad_adjoint(&u, spec.signal_len))
    }

    /// Adjoint of `istft_samples`: maps a signal to a spectrogram with the
    /// geometry `stft_samples` would produce for the same length.
    pub fn istft_adjoint(&self, g: &[f64], sample_rate: u32) -> Result<Spectrogram, SignalError> {
        if g.is_empty() {
            return Err(SignalError::Empty);
        }
        let w = self.window_len();
        let p = self.pad();
        let n_frames = self.n_frames(g.len());
        let padded_len = self.inner_len(g.len()) + 2 * p;
        let norm = self.ola_norm(n_frames, padded_len);
        let mut scaled = vec![0.0; padded_len];
        for (t, v) in g.iter().enumerate() {
            scaled[p + t] = v / norm[p + t];
        }
        let mut buf = vec![Complex64::new(0.0, 0.0); w];
        let frames = (0..n_frames)
            .map(|m| {
                let start = m * self.hop;
                for (n, b) in buf.iter_mut().enumerate() {
                    *b = Complex64::new(self.window[n] * scaled[start + n], 0.0);
                }
                self.frame_fft(&mut buf);
                (0..=w / 2)
                    .map(|k| {
                        let c = if k == 0 || k == w / 2 { 1.0 } else { 2.0 };
                        buf[k] * (c / w as f64)
                    })
                    .collect()
            })
            .collect();
        Ok(Spectrogram {
            frames,
            window_len: w,
            hop: self.hop,
            sample_rate,
            signal_len: g.len(),
        })
    }
}

/// One-sided full-signal magnitude spectrum (unnormalized forward DFT).
#[derive(Debug, Clone, PartialEq)]
pub struct MagnitudeSpectrum {
    pub magnitudes: Vec<f64>,
    pub freqs: Vec<f64>,
}

pub fn fft_mag(x: &AudioBuffer) -> MagnitudeSpectrum {
    let n = x.len();
    let spectrum = full_fft(x.samples());
    let magnitudes = spectrum[..=n / 2].iter().map(|c| c.norm()).collect();
    let freqs = (0..=n / 2)
        .map(|k| k as f64 * x.sample_rate() as f64 / n as f64)
        .collect();
    MagnitudeSpectrum { magnitudes, freqs }
}

/// Unnormalized forward DFT of a real signal, all `N` bins.
pub fn full_fft(x: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(x.len()).process(&mut buf);
    buf
}

/// Inverse DFT (with `1/N`), returning the real part.
pub fn full_ifft_real(spectrum: &[Complex64]) -> Vec<f64> {
    let n = spectrum.len();
    let mut buf = spectrum.to_vec();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|c| c.re / n as f64).collect()
}

pub fn rms(x: &AudioBuffer) -> f64 {
    rms_samples(x.samples())
}

pub fn rms_samples(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Population standard deviation.
pub fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Scales `x` so its standard deviation equals `sigma_data`, returning the
/// applied gain so it can be inverted after restoration.
pub fn normalize_loudness(
    x: &AudioBuffer,
    sigma_data: f64,
) -> Result<(AudioBuffer, f64), SignalError> {
    let sd = std_dev(x.samples());
    if sd == 0.0 || !sd.is_finite() {
        return Err(SignalError::SilentInput);
    }
    let gain = sigma_data / sd;
    Ok((x.scaled(gain), gain))
}

/// Linear-interpolation resampler. Only meant as a convenience for feeding
/// files at a mismatched rate to the pipeline.
pub fn resample_linear(x: &AudioBuffer, target_rate: u32) -> Result<AudioBuffer, SignalError> {
    if target_rate == 0 {
        return Err(SignalError::ZeroSampleRate);
    }
    if target_rate == x.sample_rate() {
        return Ok(x.clone());
    }
    let ratio = x.sample_rate() as f64 / target_rate as f64;
    let out_len = ((x.len() as f64) / ratio).round().max(1.0) as usize;
    let s = x.samples();
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * ratio;
            let i0 = (pos.floor() as usize).min(s.len() - 1);
            let i1 = (i0 + 1).min(s.len() - 1);
            let frac = pos - i0 as f64;
            s[i0] * (1.0 - frac) + s[i1] * frac
        })
        .collect();
    AudioBuffer::new(samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zeros_give_zero_frames() {
        let plan = StftPlan::default();
        let spec = plan.stft_samples(&vec![0.0; 4096], 22050).unwrap();
        assert!(spec.frames.iter().flatten().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn bin_aligned_sinusoid_peaks_at_its_bin() {
        let plan = StftPlan::default();
        let n = 16384;
        let x: Vec<f64> = (0..n)
            .map(|t| (2.0 * std::f64::consts::PI * 512.0 * t as f64 / 4096.0).sin())
            .collect();
        let spec = plan.stft_samples(&x, 22050).unwrap();
        let n_frames = spec.n_frames();
        for (m, frame) in spec.frames.iter().enumerate() {
            let argmax = frame
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.norm().total_cmp(&b.1.norm()))
                .unwrap()
                .0;
            // the outermost frames straddle the reflected padding
            if m == 0 || m == n_frames - 1 {
                assert!(argmax.abs_diff(512) <= 1);
            } else {
                assert_eq!(argmax, 512);
            }
        }
    }

    #[test]
    fn frame_count_follows_padding_policy() {
        let plan = StftPlan::default();
        assert_eq!(plan.n_frames(22050), 11);
        let spec = plan.stft_samples(&random_signal(22050, 1), 22050).unwrap();
        assert_eq!(spec.n_frames(), 11);
        assert_eq!(spec.n_bins(), 2049);
    }

    #[test]
    fn short_inputs_are_zero_padded() {
        let plan = StftPlan::default();
        let x = random_signal(100, 2);
        let spec = plan.stft_samples(&x, 22050).unwrap();
        assert_eq!(spec.n_frames(), 3);
        let y = plan.istft_samples(&spec).unwrap();
        assert_eq!(y.len(), 100);
        assert!(rel_err(&y, &x) < 1e-9);
    }

    #[test]
    fn rejects_non_finite() {
        let plan = StftPlan::default();
        let mut x = vec![0.0; 5000];
        x[17] = f64::NAN;
        assert_eq!(
            plan.stft_samples(&x, 22050).unwrap_err(),
            SignalError::NonFinite(17)
        );
        assert!(AudioBuffer::new(vec![f64::INFINITY], 8000).is_err());
    }

    #[test]
    fn round_trip_is_identity() {
        let plan = StftPlan::default();
        let x = random_signal(32768, 3);
        let y = plan
            .istft_samples(&plan.stft_samples(&x, 22050).unwrap())
            .unwrap();
        assert!(rel_err(&y, &x) <= 1e-6);
    }

    #[test]
    fn zero_spectrogram_synthesizes_silence() {
        let plan = StftPlan::default();
        let spec = plan.stft_samples(&random_signal(9000, 4), 22050).unwrap();
        let y = plan.istft_samples(&spec.zeros_like()).unwrap();
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn istft_rejects_foreign_geometry() {
        let plan = StftPlan::default();
        let other = StftPlan::new(1024, 512).unwrap();
        let spec = other.stft_samples(&random_signal(5000, 5), 22050).unwrap();
        assert!(matches!(
            plan.istft_samples(&spec),
            Err(SignalError::PlanMismatch { .. })
        ));
    }

    #[test]
    fn invalid_geometry_rejected() {
        assert!(StftPlan::new(4096, 3000).is_err());
        assert!(StftPlan::new(4096, 4096).is_err());
        assert!(StftPlan::new(0, 1).is_err());
    }

    #[test]
    fn stft_and_istft_are_linear() {
        let plan = StftPlan::new(1024, 256).unwrap();
        let x = random_signal(6000, 6);
        let y = random_signal(6000, 7);
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + 2.5 * b).collect();
        let sx = plan.stft_samples(&x, 16000).unwrap();
        let sy = plan.stft_samples(&y, 16000).unwrap();
        let ss = plan.stft_samples(&sum, 16000).unwrap();
        for m in 0..ss.n_frames() {
            for k in 0..ss.n_bins() {
                let d = ss.frames[m][k] - (sx.frames[m][k] + sy.frames[m][k] * 2.5);
                assert!(d.norm() < 1e-9);
            }
        }
        let rx = plan.istft_samples(&sx).unwrap();
        let ry = plan.istft_samples(&sy).unwrap();
        let rs = plan.istft_samples(&ss).unwrap();
        for t in 0..rs.len() {
            assert!((rs[t] - (rx[t] + 2.5 * ry[t])).abs() < 1e-9);
        }
    }

    #[test]
    fn adjoints_pass_dot_product_test() {
        let plan = StftPlan::new(512, 128).unwrap();
        for (len, seed) in [(3000usize, 10u64), (300, 11), (2048, 12)] {
            let x = random_signal(len, seed);
            let probe = plan.stft_samples(&random_signal(len, seed + 100), 8000).unwrap();
            // <stft x, z> = <x, stft^T z>
            let lhs = plan.stft_samples(&x, 8000).unwrap().inner(&probe);
            let rhs: f64 = x
                .iter()
                .zip(plan.stft_adjoint(&probe).unwrap())
                .map(|(a, b)| a * b)
                .sum();
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} {rhs}");

            // <istft z, g> = <z, istft^T g>
            let mut z = probe.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for c in z.frames.iter_mut().flatten() {
                *c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
            let g = random_signal(len, seed + 200);
            let lhs: f64 = plan
                .istft_samples(&z)
                .unwrap()
                .iter()
                .zip(&g)
                .map(|(a, b)| a * b)
                .sum();
            let rhs = z.inner(&plan.istft_adjoint(&g, 8000).unwrap());
            assert!((lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0), "{lhs} {rhs}");
        }
    }

    #[test]
    fn fft_mag_dc_and_bin_two() {
        let dc = AudioBuffer::new(vec![1.0; 8], 8).unwrap();
        let m = fft_mag(&dc);
        assert_eq!(m.magnitudes.len(), 5);
        assert!((m.magnitudes[0] - 8.0).abs() < 1e-12);
        assert!(m.magnitudes[1..].iter().all(|v| v.abs() < 1e-12));

        let sin: Vec<f64> = (0..8)
            .map(|t| (2.0 * std::f64::consts::PI * 2.0 * t as f64 / 8.0).sin())
            .collect();
        let m = fft_mag(&AudioBuffer::new(sin, 8).unwrap());
        for (k, v) in m.magnitudes.iter().enumerate() {
            if k == 2 {
                assert!((v - 4.0).abs() < 1e-12);
            } else {
                assert!(v.abs() < 1e-12);
            }
        }
        assert_eq!(m.freqs, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn parseval_with_unnormalized_forward() {
        for seed in 0..5 {
            let x = random_signal(1001 + seed as usize, seed);
            let spectrum = full_fft(&x);
            let energy: f64 = x.iter().map(|v| v * v).sum();
            let spec_energy: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum();
            assert!((spec_energy / x.len() as f64 - energy).abs() < 1e-9 * energy);
            let back = full_ifft_real(&spectrum);
            assert!(rel_err(&back, &x) < 1e-12);
        }
    }

    #[test]
    fn rms_examples() {
        assert_eq!(rms(&AudioBuffer::zeros(10, 8000).unwrap()), 0.0);
        assert!((rms(&AudioBuffer::new(vec![0.5; 7], 8000).unwrap()) - 0.5).abs() < 1e-15);
        let a = 0.8;
        let x: Vec<f64> = (0..100 * 64)
            .map(|t| a * (2.0 * std::f64::consts::PI * t as f64 / 64.0).sin())
            .collect();
        assert!((rms_samples(&x) - a / 2f64.sqrt()).abs() < 1e-3);
    }

    #[test]
    fn loudness_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let raw: Vec<f64> = (0..10000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sd = std_dev(&raw);
        let x: Vec<f64> = raw.iter().map(|v| v * 0.14 / sd).collect();
        let buf = AudioBuffer::new(x, 22050).unwrap();
        let (out, gain) = normalize_loudness(&buf, 0.07).unwrap();
        assert!((gain - 0.5).abs() < 1e-12);
        assert!((std_dev(out.samples()) - 0.07).abs() < 1e-9);

        let (_, unit) = normalize_loudness(&out, 0.07).unwrap();
        assert!((unit - 1.0).abs() < 1e-12);

        let (chamber, _) = normalize_loudness(&buf, 0.15).unwrap();
        assert!((std_dev(chamber.samples()) - 0.15).abs() < 1e-9);

        assert_eq!(
            normalize_loudness(&AudioBuffer::zeros(100, 8000).unwrap(), 0.07).unwrap_err(),
            SignalError::SilentInput
        );
    }

    #[test]
    fn downmix_averages_channels() {
        let buf = AudioBuffer::from_interleaved(&[1.0, 0.0, 0.5, 0.5], 2, 8000).unwrap();
        assert_eq!(buf.samples(), &[0.5, 0.5]);
    }

    #[test]
    fn resample_preserves_duration() {
        let x = AudioBuffer::new(random_signal(44100, 13), 44100).unwrap();
        let y = resample_linear(&x, 22050).unwrap();
        assert_eq!(y.len(), 22050);
        assert_eq!(y.sample_rate(), 22050);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn round_trip_any_length(len in 1usize..5000, seed in any::<u64>()) {
                let plan = StftPlan::new(512, 256).unwrap();
                let x = random_signal(len, seed);
                let y = plan.istft_samples(&plan.stft_samples(&x, 8000).unwrap()).unwrap();
                prop_assert!(rel_err(&y, &x) <= 1e-6);
            }

            #[test]
            fn rms_is_homogeneous(c in -10.0f64..10.0, seed in any::<u64>()) {
                let x = random_signal(257, seed);
                let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
                let lhs = rms_samples(&cx);
                let rhs = c.abs() * rms_samples(&x);
                prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
            }

            #[test]
            fn normalized_std_matches_target(target in 0.01f64..1.0, seed in any::<u64>()) {
                let x = AudioBuffer::new(random_signal(1000, seed), 8000).unwrap();
                let (out, gain) = normalize_loudness(&x, target).unwrap();
                prop_assert!((std_dev(out.samples()) - target).abs() <= 1e-9);
                for (o, v) in out.samples().iter().zip(x.samples()) {
                    prop_assert!((o - gain * v).abs() <= 1e-15);
                }
            }
        }
    }
}
