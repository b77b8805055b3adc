//! Pipeline configuration, read from TOML.

use std::path::{Path, PathBuf};

use babe::filter::{Breakpoint, FilterBounds, FilterParams};
use babe::sampler::SamplerConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Segment length of the in-process prior when none is configured
/// (about 8.4 s at 22.05 kHz).
pub const DEFAULT_SEGMENT_LENGTH: usize = 184_832;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Blind,
    Informed,
    Simulate,
    Unconditional,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DenoiserConfig {
    /// Analytic Gaussian prior with a decaying spectrum.
    Gaussian {
        #[serde(default = "default_f_knee")]
        f_knee: f64,
    },
    /// A process or TCP server speaking the denoiser wire protocol.
    External {
        endpoint: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
    },
}

fn default_f_knee() -> f64 {
    500.0
}

fn default_timeout() -> f64 {
    600.0
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig::Gaussian { f_knee: default_f_knee() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SampleFormat {
    /// Same format as the input file.
    #[default]
    Input,
    Pcm16,
    Pcm24,
    Float32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub breakpoints: Vec<Breakpoint>,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceConfig {
    /// Clean recording for LSD.
    pub audio: Option<PathBuf>,
    /// True degradation filter for FRE.
    pub breakpoints: Option<Vec<Breakpoint>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub mode: Mode,
    pub seed: u64,
    /// Target standard deviation after loudness normalization. External
    /// denoisers override it with the value from their handshake.
    pub sigma_data: f64,
    /// In-process prior only; external denoisers report their own length.
    pub segment_length: Option<usize>,
    /// Overlap between segments as a fraction of the segment length.
    pub overlap: f64,
    pub tail_conditioning: bool,
    pub tail_weight: f64,
    /// Resample inputs whose rate differs from the denoiser's; abort
    /// otherwise.
    pub resample: bool,
    pub output_format: SampleFormat,
    /// Filter report path; defaults to `<output>.filter.json`.
    pub report: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    /// Shell command run on the input before restoration. `{in}` and
    /// `{out}` are replaced by WAV paths; without placeholders both paths
    /// are appended.
    pub predenoise_cmd: Option<String>,
    pub denoiser: DenoiserConfig,
    pub sampler: SamplerConfig,
    /// Known filter for informed mode.
    pub informed: Option<Vec<Breakpoint>>,
    pub simulate: SimulateConfig,
    pub reference: ReferenceConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            input: None,
            output: None,
            mode: Mode::Blind,
            seed: 0,
            sigma_data: 0.07,
            segment_length: None,
            overlap: 0.25,
            tail_conditioning: true,
            tail_weight: 1.0,
            resample: false,
            output_format: SampleFormat::Input,
            report: None,
            trace: None,
            predenoise_cmd: None,
            denoiser: DenoiserConfig::default(),
            sampler: SamplerConfig::standard(),
            informed: None,
            simulate: SimulateConfig::default(),
            reference: ReferenceConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        let mut config = Self::from_toml(&text)?;
        // relative paths in the file are relative to the file
        if let Some(dir) = path.parent() {
            for p in [
                &mut config.input,
                &mut config.output,
                &mut config.report,
                &mut config.trace,
                &mut config.reference.audio,
            ]
            .into_iter()
            .flatten()
            {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Validation(m));
        if self.input.is_none() {
            return bad("no input file".into());
        }
        if self.output.is_none() {
            return bad("no output file".into());
        }
        if !(0.0..=0.5).contains(&self.overlap) {
            return bad(format!("overlap {} outside [0, 0.5]", self.overlap));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return bad("sigma_data must be positive".into());
        }
        if !(self.tail_weight >= 0.0 && self.tail_weight.is_finite()) {
            return bad("tail_weight must be non-negative".into());
        }
        if let Some(len) = self.segment_length {
            if len < self.sampler.window_len {
                return bad(format!("segment_length {len} shorter than one STFT window"));
            }
        }
        self.sampler.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        match self.mode {
            Mode::Informed => match &self.informed {
                Some(b) if !b.is_empty() => {}
                _ => return bad("informed mode needs `informed` breakpoints".into()),
            },
            Mode::Simulate => {
                if self.simulate.breakpoints.is_empty() {
                    return bad("simulate mode needs `simulate.breakpoints`".into());
                }
                if !(self.simulate.noise_std >= 0.0 && self.simulate.noise_std.is_finite()) {
                    return bad("simulate.noise_std must be non-negative".into());
                }
            }
            Mode::Blind | Mode::Unconditional => {}
        }
        if let DenoiserConfig::External { endpoint, timeout_secs } = &self.denoiser {
            if endpoint.trim().is_empty() {
                return bad("empty denoiser endpoint".into());
            }
            if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                return bad("denoiser timeout must be positive".into());
            }
        }
        Ok(())
    }

    /// Overlap in samples for a given segment length.
    pub fn overlap_samples(&self, segment_len: usize) -> usize {
        (self.overlap * segment_len as f64).round() as usize
    }

    pub fn report_path(&self) -> Option<PathBuf> {
        self.report.clone().or_else(|| {
            self.output.as_ref().map(|o| {
                let mut s = o.clone().into_os_string();
                s.push(".filter.json");
                PathBuf::from(s)
            })
        })
    }
}

/// Breakpoints from a config, checked against the bounds for `sample_rate`.
pub fn params_from(breakpoints: &[Breakpoint], sample_rate: u32) -> Result<FilterParams, CliError> {
    let phi = FilterParams::new(breakpoints.to_vec());
    if !phi.satisfies(&FilterBounds::for_sample_rate(sample_rate)) {
        return Err(CliError::Validation(format!(
            "filter {breakpoints:?} violates the constraints at {sample_rate} Hz"
        )));
    }
    Ok(phi)
}
