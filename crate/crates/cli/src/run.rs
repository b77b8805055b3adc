//! The restoration driver behind `babe restore`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::process::Command;
use std::time::Duration;

use babe::filter::{FilterDocument, FilterParams};
use babe::metrics::{db_to_json, failure_risk, filter_fre, lsd, FreAggregate};
use babe::pipeline::{block_autoregressive_restore, simulate_degradation, AutoregressiveConfig, RestoreMode};
use babe::prior::{Denoiser, GaussianPrior};
use babe::remote::{Endpoint, RemoteDenoiser};
use babe::signal::{normalize_loudness, resample_linear, AudioBuffer};
use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::{params_from, DenoiserConfig, Mode, PipelineConfig, SampleFormat, DEFAULT_SEGMENT_LENGTH};
use crate::error::CliError;
use crate::wav::{read_wav, write_wav};

/// What a successful (or flagged) run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub report: Value,
    pub failed_segments: Vec<usize>,
}

/// Reads the input, restores it according to `config`, writes the output
/// WAV and the JSON report. Returns [`CliError::Failure`] after writing
/// everything when a segment was flagged.
pub fn run_restoration(config: &PipelineConfig) -> Result<RunSummary, CliError> {
    config.validate()?;
    let input = config.input.as_deref().unwrap();
    let output = config.output.as_deref().unwrap();
    let (mut audio, wav_info) = read_wav(input)?;
    let format = match config.output_format {
        SampleFormat::Input => wav_info.format,
        f => f,
    };
    if let Some(cmd) = &config.predenoise_cmd {
        audio = predenoise(cmd, &audio)?;
    }

    let summary = match config.mode {
        Mode::Simulate => simulate(config, &audio, output, format)?,
        _ => restore(config, audio, output, format)?,
    };
    if let Some(path) = config.report_path() {
        let text = serde_json::to_string_pretty(&summary.report).expect("report serializes");
        std::fs::write(&path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    if !summary.failed_segments.is_empty() {
        return Err(CliError::Failure(summary.failed_segments));
    }
    Ok(summary)
}

fn simulate(
    config: &PipelineConfig,
    audio: &AudioBuffer,
    output: &Path,
    format: SampleFormat,
) -> Result<RunSummary, CliError> {
    let sr = audio.sample_rate();
    let phi = params_from(&config.simulate.breakpoints, sr)?;
    let plan = config.sampler.plan()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let y = simulate_degradation(audio, &phi, config.simulate.noise_std, &plan, &mut rng)?;
    write_wav(output, &y, format)?;
    Ok(RunSummary {
        report: json!({
            "mode": "simulate",
            "sample_rate": sr,
            "filter": FilterDocument::new(&phi, sr),
            "noise_std": config.simulate.noise_std,
        }),
        failed_segments: vec![],
    })
}

fn connect(config: &PipelineConfig, sample_rate: u32) -> Result<(Box<dyn Denoiser>, f64), CliError> {
    match &config.denoiser {
        DenoiserConfig::Gaussian { f_knee } => {
            let len = config.segment_length.unwrap_or(DEFAULT_SEGMENT_LENGTH);
            let prior = GaussianPrior::decaying(len, sample_rate, *f_knee, config.sigma_data)
                .map_err(|e| CliError::Validation(e.to_string()))?;
            Ok((Box::new(prior), config.sigma_data))
        }
        DenoiserConfig::External { endpoint, timeout_secs } => {
            let endpoint: Endpoint = endpoint.parse().expect("infallible");
            let remote = RemoteDenoiser::connect(&endpoint, Duration::from_secs_f64(*timeout_secs))?;
            let sigma_data = remote.info().sigma_data;
            info!("connected to {endpoint}: {:?}", remote.info());
            Ok((Box::new(remote), sigma_data))
        }
    }
}

fn restore(
    config: &PipelineConfig,
    audio: AudioBuffer,
    output: &Path,
    format: SampleFormat,
) -> Result<RunSummary, CliError> {
    let input_rate = audio.sample_rate();
    let (mut denoiser, sigma_data) = connect(config, input_rate)?;
    let den_info = denoiser.info();
    let audio = if den_info.sample_rate != input_rate {
        if !config.resample {
            return Err(CliError::Validation(format!(
                "input is {input_rate} Hz, denoiser expects {} Hz (set resample = true)",
                den_info.sample_rate
            )));
        }
        resample_linear(&audio, den_info.sample_rate)?
    } else {
        audio
    };
    let sr = audio.sample_rate();

    let risk = failure_risk(&audio);
    if risk.low_energy_warning {
        warn!("input RMS {:.2e} is below the guidance floor; the filter estimate may fail", risk.rms);
    }
    // unconditional runs only look at the length
    let (y, gain) = if config.mode == Mode::Unconditional {
        (AudioBuffer::zeros(audio.len(), sr)?, 1.0)
    } else {
        normalize_loudness(&audio, sigma_data)?
    };

    let seg_len = den_info.supported_length;
    let ar = AutoregressiveConfig {
        overlap: config.overlap_samples(seg_len),
        tail_conditioning: config.tail_conditioning,
        tail_weight: config.tail_weight,
    };
    let mode = match config.mode {
        Mode::Blind => RestoreMode::Blind,
        Mode::Informed => RestoreMode::Informed(params_from(config.informed.as_ref().unwrap(), sr)?),
        Mode::Unconditional => RestoreMode::Unconditional,
        Mode::Simulate => unreachable!(),
    };
    let sampler = babe::sampler::SamplerConfig {
        seed: config.seed,
        ..config.sampler.clone()
    };

    let mut trace = match &config.trace {
        Some(p) => Some(BufWriter::new(
            File::create(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?,
        )),
        None => None,
    };
    let mut trace_error = None;
    let result = block_autoregressive_restore(&y, &mut denoiser, &sampler, &ar, &mode, &mut |segment, diag| {
        if let Some(w) = trace.as_mut() {
            let mut record = serde_json::to_value(diag).expect("diagnostics serialize");
            record["segment"] = json!(segment);
            if let Err(e) = writeln!(w, "{record}") {
                trace_error.get_or_insert(e);
            }
        }
    })?;
    if let Some(mut w) = trace {
        if let Some(e) = trace_error.or_else(|| w.flush().err()) {
            return Err(CliError::Io(format!("trace: {e}")));
        }
    }

    let mut restored = result.audio.scaled(1.0 / gain);
    if restored.sample_rate() != input_rate {
        restored = resample_linear(&restored, input_rate)?;
    }
    write_wav(output, &restored, format)?;

    let mut metrics = serde_json::Map::new();
    if let (Some(reference), Some(phi)) = (&config.reference.breakpoints, &result.phi) {
        let truth = FilterParams::new(reference.clone());
        for (key, agg) in [("fre_db", FreAggregate::Sum), ("fre_mean_db", FreAggregate::Mean)] {
            let v = filter_fre(&truth, phi, sr, agg).map_err(|e| CliError::Validation(e.to_string()))?;
            metrics.insert(key.into(), db_to_json(v));
        }
    }
    if let Some(path) = &config.reference.audio {
        let (reference, _) = read_wav(path)?;
        let v = lsd(&reference, &restored, &sampler.plan()?).map_err(|e| CliError::Validation(e.to_string()))?;
        metrics.insert("lsd".into(), json!(v));
    }

    let failed = result.failed_segments();
    let report = json!({
        "mode": config.mode,
        "sample_rate": sr,
        "gain": gain,
        "sigma_data": sigma_data,
        "segment_length": seg_len,
        "overlap_samples": ar.overlap,
        "filter": result.phi.as_ref().map(|p| FilterDocument::new(p, sr)),
        "segments": result.segments,
        "failed_segments": failed,
        "failure_risk": risk,
        "metrics": metrics,
    });
    Ok(RunSummary {
        report,
        failed_segments: failed,
    })
}

/// Runs the external pre-denoising command on a temporary copy of `audio`.
fn predenoise(cmd: &str, audio: &AudioBuffer) -> Result<AudioBuffer, CliError> {
    let dir = tempfile::tempdir().map_err(|e| CliError::Io(e.to_string()))?;
    let src = dir.path().join("in.wav");
    let dst = dir.path().join("out.wav");
    write_wav(&src, audio, SampleFormat::Float32)?;
    let (s, d) = (src.display().to_string(), dst.display().to_string());
    let line = if cmd.contains("{in}") || cmd.contains("{out}") {
        cmd.replace("{in}", &s).replace("{out}", &d)
    } else {
        format!("{cmd} '{s}' '{d}'")
    };
    let status = Command::new("sh")
        .arg("-c")
        .arg(&line)
        .status()
        .map_err(|e| CliError::Io(format!("predenoise: {e}")))?;
    if !status.success() {
        return Err(CliError::Io(format!("predenoise command exited with {status}")));
    }
    let (out, _) = read_wav(&dst)?;
    if out.sample_rate() != audio.sample_rate() {
        return Err(CliError::Validation("predenoise command changed the sample rate".into()));
    }
    Ok(out)
}
