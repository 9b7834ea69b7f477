use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ppn_core::audio::AudioBuffer;
use ppn_core::embedder::SpeakerEmbedding;
use ppn_core::eval::{aligned_si_snr, metrics::ALIGN_MAX_LAG, si_snr};
use ppn_core::synth::synth_speaker;
use serde_json::Value;
use tempfile::TempDir;

fn ppn(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawning ppn")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn manifest(path: &Path) -> Vec<Value> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

fn energy(x: &[f32]) -> f64 {
    x.iter().map(|&v| v as f64 * v as f64).sum()
}

fn sidecar(out: &Path) -> Value {
    let mut p = out.as_os_str().to_owned();
    p.push(".config.json");
    serde_json::from_str(&fs::read_to_string(PathBuf::from(p)).unwrap()).unwrap()
}

/// Toy embedder trained once with the default recipe and shared by the
/// tests that need real weights.
fn trained_embedder() -> &'static (TempDir, PathBuf, String) {
    static CELL: std::sync::OnceLock<(TempDir, PathBuf, String)> = std::sync::OnceLock::new();
    CELL.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let stdout = ok(&ppn(dir.path(), &["--seed", "0", "train-embedder", "--out", "emb.ppnw"]));
        let path = dir.path().join("emb.ppnw");
        (dir, path, stdout)
    })
}

#[test]
fn enroll_writes_unit_norm_embedding_deterministically() {
    let (_, weights, _) = trained_embedder();
    let dir = TempDir::new().unwrap();
    synth_speaker(3, 6.0).unwrap().write_wav(dir.path().join("six.wav")).unwrap();
    let w = weights.to_str().unwrap();
    let stdout = ok(&ppn(dir.path(), &["enroll", "--audio", "six.wav", "--weights", w, "--out", "a.emb"]));
    assert!(stdout.contains("dim 32"), "{stdout}");
    ok(&ppn(dir.path(), &["enroll", "--audio", "six.wav", "--weights", w, "--out", "b.emb"]));
    let e = SpeakerEmbedding::load(dir.path().join("a.emb")).unwrap();
    assert!((e.norm() - 1.0).abs() < 1e-5);
    assert_eq!(fs::read(dir.path().join("a.emb")).unwrap(), fs::read(dir.path().join("b.emb")).unwrap());
    assert!(sidecar(&dir.path().join("a.emb"))["invocation"].is_object());
}

#[test]
fn enroll_rejects_short_audio() {
    let (_, weights, _) = trained_embedder();
    let dir = TempDir::new().unwrap();
    synth_speaker(3, 1.0).unwrap().write_wav(dir.path().join("one.wav")).unwrap();
    let out = ppn(
        dir.path(),
        &["enroll", "--audio", "one.wav", "--weights", weights.to_str().unwrap(), "--out", "a.emb"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("enrollment too short"), "{}", stderr(&out));
    assert!(!dir.path().join("a.emb").exists());
}

#[test]
fn enroll_rejects_bad_wav() {
    let (_, weights, _) = trained_embedder();
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("junk.wav"), b"not a wav file").unwrap();
    let out = ppn(
        dir.path(),
        &["enroll", "--audio", "junk.wav", "--weights", weights.to_str().unwrap(), "--out", "a.emb"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn identity_enhance_reconstructs_input() {
    let dir = TempDir::new().unwrap();
    let input = synth_speaker(11, 4.0).unwrap();
    input.write_wav(dir.path().join("in.wav")).unwrap();
    let before = fs::read(dir.path().join("in.wav")).unwrap();
    let out = ppn(dir.path(), &["enhance", "--input", "in.wav", "--out", "out.wav", "--identity"]);
    ok(&out);
    assert!(stderr(&out).contains("realtime factor"));
    let output = AudioBuffer::read_wav(dir.path().join("out.wav")).unwrap();
    assert_eq!(output.len(), input.len());
    let s = si_snr(output.samples(), input.samples()).unwrap();
    assert!(s >= 40.0, "identity SI-SNR {s:.1} dB");
    assert_eq!(fs::read(dir.path().join("in.wav")).unwrap(), before, "input was modified");
}

#[test]
fn missing_weights_are_a_data_error() {
    let dir = TempDir::new().unwrap();
    let out = ppn(
        dir.path(),
        &["train-enhancer", "--embedder", "missing.ppnw", "--out", "x.ppnw", "--steps", "1"],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(stderr(&out).contains("missing.ppnw"), "{}", stderr(&out));
    assert!(!dir.path().join("x.ppnw").exists());
}

#[test]
fn usage_and_data_errors_have_distinct_exit_codes() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let identity = ["enhance", "--input", "in.wav", "--out", "o.wav", "--identity"];
    let with = |pre: &[&str]| {
        let mut v: Vec<&str> = pre.to_vec();
        v.extend_from_slice(&identity);
        ppn(p, &v).status.code()
    };
    assert_eq!(with(&["--sample-rate", "16000"]), Some(2));
    assert_eq!(with(&["--lookahead-ms", "35"]), Some(2));
    assert_eq!(with(&["--set", "no_such_key=1"]), Some(2));
    assert_eq!(ppn(p, &["frobnicate"]).status.code(), Some(2));
    // Missing input file.
    assert_eq!(with(&[]), Some(3));
    assert!(!p.join("o.wav").exists());
}

#[test]
fn mix_reports_achieved_ratios_and_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let p = dir.path();
    ok(&ppn(p, &["--seed", "7", "mix", "--out-dir", "a", "--count", "50", "--mix-preset", "eval"]));
    let rows = manifest(&p.join("a/manifest.jsonl"));
    assert_eq!(rows.len(), 50);
    for row in &rows {
        let load = |k: &str| AudioBuffer::read_wav(p.join("a").join(row[k].as_str().unwrap())).unwrap();
        let (t, i, n, m) = (load("target"), load("interferer"), load("noise"), load("mixture"));
        let snr = 10.0 * (energy(t.samples()) / energy(n.samples())).log10();
        let sir = 10.0 * (energy(t.samples()) / energy(i.samples())).log10();
        let spec = &row["spec"];
        assert!((snr - spec["snr_db"].as_f64().unwrap()).abs() < 0.01, "{} snr {snr}", row["id"]);
        assert!((sir - spec["sir_db"].as_f64().unwrap()).abs() < 0.01, "{} sir {sir}", row["id"]);
        assert!((snr - row["achieved_snr_db"].as_f64().unwrap()).abs() < 0.01);
        // The mixture is the sum of its parts.
        let worst = m
            .samples()
            .iter()
            .zip(t.samples().iter().zip(i.samples().iter().zip(n.samples())))
            .map(|(&m, (&t, (&i, &n)))| (m - (t + i + n)).abs())
            .fold(0.0f32, f32::max);
        assert!(worst < 1e-5, "{} residual {worst}", row["id"]);
    }
    assert!(sidecar(&p.join("a/manifest.jsonl"))["resolved"]["recipe"].is_object());

    ok(&ppn(p, &["--seed", "7", "mix", "--out-dir", "b", "--count", "3"]));
    for name in ["manifest.jsonl", "mix0002_mixture.wav", "mix0001_enrollment.wav"] {
        assert!(!fs::read(p.join("a").join(name)).unwrap().is_empty());
    }
    assert_eq!(fs::read(p.join("a/mix0002_mixture.wav")).unwrap(), fs::read(p.join("b/mix0002_mixture.wav")).unwrap());
    let a = manifest(&p.join("a/manifest.jsonl"));
    let b = manifest(&p.join("b/manifest.jsonl"));
    assert_eq!(&a[..3], &b[..]);
}

#[test]
fn toy_workflow_end_to_end() {
    let (_, emb, train_stdout) = trained_embedder();
    let eer: f64 = train_stdout
        .lines()
        .find_map(|l| l.strip_prefix("final EER: "))
        .expect("EER line")
        .trim()
        .parse()
        .unwrap();
    assert!(eer < 0.2, "toy embedder EER {eer}");

    let dir = TempDir::new().unwrap();
    let p = dir.path();
    let emb = emb.to_str().unwrap();
    // Same seed as the embedder, so the mixtures use its training talkers:
    // the toy embedder does not generalize to new talkers in noise.
    ok(&ppn(p, &["--seed", "0", "mix", "--out-dir", "m", "--count", "12"]));

    // Oracle gains separate the target in the embedding space.
    ok(&ppn(
        p,
        &["eval", "--manifest", "m/manifest.jsonl", "--embedder", emb, "--oracle", "--report", "oracle.jsonl"],
    ));
    let report = manifest(&p.join("oracle.jsonl"));
    let summary = report.last().unwrap();
    assert_eq!(summary["row"], "summary");
    assert_eq!(summary["count"], 12);
    assert!(summary["median_cos_target"].as_f64().unwrap() > summary["median_cos_interf"].as_f64().unwrap());
    assert!(summary["median_si_snr_gain"].as_f64().unwrap() > 3.0);

    // A briefly trained enhancer still improves noisy mixtures.
    ok(&ppn(
        p,
        &["--seed", "1", "train-enhancer", "--embedder", emb, "--out", "enh.ppnw", "--steps", "300", "--mixtures", "32"],
    ));
    assert!(p.join("enh.ppnw.log.jsonl").exists());
    ok(&ppn(
        p,
        &["--seed", "9", "mix", "--out-dir", "noisy", "--count", "4", "--snr-db", "0", "--sir-db", "20"],
    ));
    ok(&ppn(
        p,
        &["enroll", "--audio", "noisy/mix0000_enrollment.wav", "--weights", emb, "--out", "t.emb"],
    ));
    ok(&ppn(
        p,
        &[
            "enhance", "--input", "noisy/mix0000_mixture.wav", "--embedding", "t.emb", "--weights", "enh.ppnw", "--out",
            "e.wav",
        ],
    ));
    let clean = AudioBuffer::read_wav(p.join("noisy/mix0000_target.wav")).unwrap();
    let mixture = AudioBuffer::read_wav(p.join("noisy/mix0000_mixture.wav")).unwrap();
    let enhanced = AudioBuffer::read_wav(p.join("e.wav")).unwrap();
    assert_eq!(enhanced.len(), mixture.len());
    assert!(aligned_si_snr(enhanced.samples(), clean.samples(), ALIGN_MAX_LAG).unwrap().is_finite());
    // Single mixtures can go either way after 300 steps; the median cannot.
    ok(&ppn(
        p,
        &[
            "eval", "--manifest", "noisy/manifest.jsonl", "--embedder", emb, "--weights", "enh.ppnw", "--report",
            "noisy.jsonl",
        ],
    ));
    let gain = manifest(&p.join("noisy.jsonl")).last().unwrap()["median_si_snr_gain"].as_f64().unwrap();
    assert!(gain > 1.0, "median SI-SNR gain {gain:.2} dB");

    // Embedding of the wrong width for the model: clean error, no output.
    SpeakerEmbedding::new(vec![0.25; 16]).unwrap().save(p.join("e16.emb")).unwrap();
    let out = ppn(
        p,
        &[
            "enhance", "--input", "noisy/mix0000_mixture.wav", "--embedding", "e16.emb", "--weights", "enh.ppnw",
            "--out", "bad.wav",
        ],
    );
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(!p.join("bad.wav").exists());
    assert!(fs::read_dir(p).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().contains("partial")));

    // Scoring the trained enhancer writes a report with one row per mixture.
    ok(&ppn(
        p,
        &[
            "eval", "--manifest", "m/manifest.jsonl", "--embedder", emb, "--weights", "enh.ppnw", "--report", "r.jsonl",
            "--limit", "4",
        ],
    ));
    assert_eq!(manifest(&p.join("r.jsonl")).len(), 5);

    // Streaming benchmark of the same weights.
    ok(&ppn(p, &["bench", "--weights", "enh.ppnw", "--duration", "2", "--out", "bench.json"]));
    let bench: Value = serde_json::from_str(&fs::read_to_string(p.join("bench.json")).unwrap()).unwrap();
    assert_eq!(bench["allocations"], 0);
    assert!(bench["realtime_factor"].as_f64().unwrap() > 1.0);
}
