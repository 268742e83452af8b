use std::path::Path;

use hound::{SampleFormat, WavReader};

use crate::error::{config, Result};

/// A fully decoded mono WAV file (PCM16 or float32). No resampling is done:
/// the file rate has to match the simulation rate.
#[derive(Debug, Clone)]
pub struct WavStream {
    samples: Vec<f64>,
    fs: u32,
}

impl WavStream {
    pub fn open(path: impl AsRef<Path>, expected_fs: f64) -> Result<Self> {
        let path = path.as_ref();
        let reader = WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(config(format!("{}: expected mono audio, found {} channels", path.display(), spec.channels)));
        }
        if f64::from(spec.sample_rate) != expected_fs {
            return Err(config(format!(
                "{}: sample rate {} Hz differs from configured {} Hz (resampling is not supported)",
                path.display(),
                spec.sample_rate,
                expected_fs
            )));
        }
        let samples = match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) => reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| f64::from(v) / 32768.0))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            (SampleFormat::Float, 32) => {
                reader.into_samples::<f32>().map(|s| s.map(f64::from)).collect::<std::result::Result<Vec<_>, _>>()?
            }
            (fmt, bits) => {
                return Err(config(format!(
                    "{}: unsupported sample format {fmt:?}/{bits} bit (PCM16 or float32 only)",
                    path.display()
                )))
            }
        };
        Ok(Self { samples, fs: spec.sample_rate })
    }

    pub fn fs(&self) -> u32 {
        self.fs
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}
