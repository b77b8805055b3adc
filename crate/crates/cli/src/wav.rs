//! WAV input and output: 16/24-bit PCM and 32-bit float.

use std::path::Path;

use babe::signal::AudioBuffer;
use hound::{SampleFormat as HoundFormat, WavReader, WavSpec, WavWriter};

use crate::config::SampleFormat;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub channels: u16,
    pub format: SampleFormat,
}

/// Reads a WAV file and downmixes it to mono.
pub fn read_wav(path: &Path) -> Result<(AudioBuffer, WavInfo), CliError> {
    let io = |e: hound::Error| CliError::Validation(format!("{}: {e}", path.display()));
    let mut reader = WavReader::open(path).map_err(io)?;
    let spec = reader.spec();
    let (samples, format): (Vec<f64>, _) = match (spec.sample_format, spec.bits_per_sample) {
        (HoundFormat::Float, 32) => (
            reader
                .samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<Result<_, _>>()
                .map_err(io)?,
            SampleFormat::Float32,
        ),
        (HoundFormat::Int, bits @ (16 | 24)) => {
            let scale = 1.0 / (1u32 << (bits - 1)) as f64;
            (
                reader
                    .samples::<i32>()
                    .map(|s| s.map(|v| v as f64 * scale))
                    .collect::<Result<_, _>>()
                    .map_err(io)?,
                if bits == 16 {
                    SampleFormat::Pcm16
                } else {
                    SampleFormat::Pcm24
                },
            )
        }
        (fmt, bits) => {
            return Err(CliError::Validation(format!(
                "{}: unsupported WAV format {fmt:?} {bits}-bit",
                path.display()
            )))
        }
    };
    let audio = AudioBuffer::from_interleaved(&samples, spec.channels as usize, spec.sample_rate)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok((
        audio,
        WavInfo {
            channels: spec.channels,
            format,
        },
    ))
}

/// Writes mono audio. Integer formats are clipped to full scale.
pub fn write_wav(path: &Path, audio: &AudioBuffer, format: SampleFormat) -> Result<(), CliError> {
    let io = |e: hound::Error| CliError::Io(format!("{}: {e}", path.display()));
    let (bits, sample_format) = match format {
        SampleFormat::Pcm16 => (16, HoundFormat::Int),
        SampleFormat::Pcm24 => (24, HoundFormat::Int),
        SampleFormat::Float32 | SampleFormat::Input => (32, HoundFormat::Float),
    };
    let spec = WavSpec {
        channels: 1,
        sample_rate: audio.sample_rate(),
        bits_per_sample: bits,
        sample_format,
    };
    let mut writer = WavWriter::create(path, spec).map_err(io)?;
    match sample_format {
        HoundFormat::Float => {
            for &s in audio.samples() {
                writer.write_sample(s as f32).map_err(io)?;
            }
        }
        HoundFormat::Int => {
            let full = (1i64 << (bits - 1)) as f64;
            for &s in audio.samples() {
                let v = (s * full).round().clamp(-full, full - 1.0) as i32;
                writer.write_sample(v).map_err(io)?;
            }
        }
    }
    writer.finalize().map_err(io)
}
