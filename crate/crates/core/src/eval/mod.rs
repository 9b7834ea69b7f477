//! Evaluation: SI-SNR, EER, VAD accuracy, the embedding cosine probe and the
//! streaming real-time benchmark.

pub mod bench;
pub mod metrics;
pub mod probe;
pub mod report;

pub use bench::{benchmark_stream, frames_for, BenchmarkReport};
pub use metrics::{aligned_si_snr, best_lag, eer, median, si_snr, vad_accuracy, VadMetrics};
pub use probe::{cosine_probe, ProbeResult};
pub use report::{parse_report, render_report, summarize, MixtureRecord, ReportRow, ReportSummary};
