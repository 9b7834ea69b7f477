//! Mono 48 kHz audio buffers and WAV I/O.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::SAMPLE_RATE;

/// A mono stream of finite samples at [`SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f32>,
}

impl AudioBuffer {
    /// Wraps `samples`, rejecting NaN or infinite values.
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::input(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Sum of squared samples, accumulated in double precision.
    pub fn energy(&self) -> f64 {
        energy(&self.samples)
    }

    pub fn slice(&self, start: usize, len: usize) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples[start..start + len].to_vec(),
        }
    }

    /// Reads a mono 48 kHz WAV file holding 16-bit PCM or 32-bit float samples.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = WavReader::open(path)?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::input(format!(
                "{}: expected mono audio, found {} channels",
                path.display(),
                spec.channels
            )));
        }
        if spec.sample_rate != SAMPLE_RATE {
            return Err(Error::input(format!(
                "{}: expected {SAMPLE_RATE} Hz, found {} Hz (resampling is not supported)",
                path.display(),
                spec.sample_rate
            )));
        }
        let samples = match (spec.sample_format, spec.bits_per_sample) {
            (SampleFormat::Int, 16) => reader
                .into_samples::<i16>()
                .map(|s| s.map(|v| v as f32 / 32768.0))
                .collect::<std::result::Result<Vec<_>, _>>()?,
            (SampleFormat::Float, 32) => reader
                .into_samples::<f32>()
                .collect::<std::result::Result<Vec<_>, _>>()?,
            (fmt, bits) => {
                return Err(Error::input(format!(
                    "{}: unsupported sample format {fmt:?} with {bits} bits",
                    path.display()
                )))
            }
        };
        Self::new(samples)
    }

    /// Writes the buffer as a mono 32-bit float WAV file.
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let spec = WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 32,
            sample_format: SampleFormat::Float,
        };
        let mut writer = WavWriter::create(path, spec)?;
        for &s in &self.samples {
            writer.write_sample(s)?;
        }
        writer.finalize()?;
        Ok(())
    }
}

pub(crate) fn energy(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64 * v as f64).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        std::env::temp_dir().join(format!("ppn-audio-{}-{name}", std::process::id()))
    }

    #[test]
    fn rejects_non_finite() {
        assert!(AudioBuffer::new(vec![0.0, f32::NAN]).is_err());
        assert!(AudioBuffer::new(vec![f32::INFINITY]).is_err());
    }

    #[test]
    fn float_wav_round_trip() {
        let path = temp_path("f32.wav");
        let buf = AudioBuffer::new((0..1000).map(|i| (i as f32 * 0.01).sin() * 0.5).collect()).unwrap();
        buf.write_wav(&path).unwrap();
        let back = AudioBuffer::read_wav(&path).unwrap();
        assert_eq!(buf, back);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn reads_pcm16() {
        let path = temp_path("i16.wav");
        let spec = WavSpec {
            channels: 1,
            sample_rate: SAMPLE_RATE,
            bits_per_sample: 16,
            sample_format: SampleFormat::Int,
        };
        let mut w = WavWriter::create(&path, spec).unwrap();
        for v in [0i16, 16384, -32768] {
            w.write_sample(v).unwrap();
        }
        w.finalize().unwrap();
        let back = AudioBuffer::read_wav(&path).unwrap();
        assert_eq!(back.samples(), &[0.0, 0.5, -1.0]);
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn rejects_stereo_and_other_rates() {
        for (channels, rate, needle) in [(2u16, SAMPLE_RATE, "mono"), (1, 16000, "16000")] {
            let path = temp_path(&format!("bad-{channels}-{rate}.wav"));
            let spec = WavSpec {
                channels,
                sample_rate: rate,
                bits_per_sample: 16,
                sample_format: SampleFormat::Int,
            };
            let mut w = WavWriter::create(&path, spec).unwrap();
            for _ in 0..channels * 4 {
                w.write_sample(0i16).unwrap();
            }
            w.finalize().unwrap();
            let err = AudioBuffer::read_wav(&path).unwrap_err().to_string();
            assert!(err.contains(needle), "{err}");
            std::fs::remove_file(path).ok();
        }
    }
}
