//! Real-time benchmark of the full streaming pipeline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedder::SpeakerEmbedding;
use crate::enhancer::Enhancer;
use crate::error::{Error, Result};
use crate::pipeline::{NetworkSource, Pipeline};
use crate::synth::{generate_noise, NoiseKind};
use crate::{FRAME_SIZE, SAMPLE_RATE};

/// Shortest accepted warm-up.
pub const MIN_WARMUP_SECS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    /// Seconds of audio processed per wall-clock second.
    pub realtime_factor: f64,
    /// Fraction of one core used, `1 / realtime_factor`.
    pub cpu_fraction: f64,
    /// Timed frames, warm-up excluded.
    pub frames_processed: u64,
    pub warmup_frames: u64,
    /// Heap allocations during the timed frames, if a counter was supplied.
    pub allocations: Option<u64>,
    pub wall_seconds: f64,
}

/// Number of 10 ms frames in `secs` seconds of audio.
pub fn frames_for(secs: f64) -> u64 {
    (secs * SAMPLE_RATE as f64 / FRAME_SIZE as f64).round() as u64
}

/// Streams `duration_s` seconds of synthetic audio through the pipeline with
/// `model`, after `warmup_s` untimed seconds. `allocations` reads a
/// monotonically increasing allocation counter (for the current thread).
pub fn benchmark_stream(
    model: &Enhancer<f32>,
    embedding: &SpeakerEmbedding,
    duration_s: f64,
    warmup_s: f64,
    allocations: Option<&dyn Fn() -> u64>,
) -> Result<BenchmarkReport> {
    if !(warmup_s >= MIN_WARMUP_SECS) {
        return Err(Error::Config(format!("warm-up must be at least {MIN_WARMUP_SECS} s")));
    }
    if !(duration_s > 0.0) || !duration_s.is_finite() {
        return Err(Error::Config(format!("benchmark duration {duration_s} s is not positive")));
    }
    let warmup_frames = frames_for(warmup_s);
    let frames = frames_for(duration_s).max(1);
    let total = (warmup_frames + frames) as usize * FRAME_SIZE;
    let mut audio = generate_noise(NoiseKind::SpeechShaped, 0xbe7c, total)?.into_samples();
    for (n, v) in audio.iter_mut().enumerate() {
        *v += 0.1 * (n as f32 * 2.0 * std::f32::consts::PI * 180.0 / SAMPLE_RATE as f32).sin();
    }
    let mut pipe = Pipeline::new(model.config().lookahead_frames);
    let mut source = NetworkSource::new(model, embedding)?;
    let mut out = [0.0f32; FRAME_SIZE];
    let mut hops = audio.chunks_exact(FRAME_SIZE);
    for hop in hops.by_ref().take(warmup_frames as usize) {
        pipe.process_hop(hop, &mut source, &mut out)?;
    }
    let before = allocations.map(|f| f());
    let start = Instant::now();
    let mut sink = 0.0f32;
    for hop in hops {
        sink += pipe.process_hop(hop, &mut source, &mut out)?;
        sink += out[0];
    }
    let wall = start.elapsed().as_secs_f64();
    let after = allocations.map(|f| f());
    if !sink.is_finite() {
        return Err(Error::Numeric("benchmark output is not finite".into()));
    }
    let audio_secs = frames as f64 * FRAME_SIZE as f64 / SAMPLE_RATE as f64;
    let realtime_factor = audio_secs / wall.max(1e-9);
    Ok(BenchmarkReport {
        realtime_factor,
        cpu_fraction: 1.0 / realtime_factor,
        frames_processed: frames,
        warmup_frames,
        allocations: before.zip(after).map(|(b, a)| a - b),
        wall_seconds: wall,
    })
}
