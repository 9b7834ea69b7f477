//! Subcommand implementations.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use ppn_core::audio::AudioBuffer;
use ppn_core::comb::EnhancerOutputs;
use ppn_core::config::KeyValues;
use ppn_core::corpus::ToyRecipe;
use ppn_core::dsp::{analyze_signal, extract_features};
use ppn_core::embedder::{train_embedder, Embedder, EmbedderConfig, EmbedderTrainConfig, SpeakerEmbedding};
use ppn_core::enhancer::{supervision_targets, train_enhancer, Enhancer, EnhancerConfig, EnhancerTrainConfig};
use ppn_core::eval::metrics::ALIGN_MAX_LAG;
use ppn_core::eval::{aligned_si_snr, benchmark_stream, cosine_probe, render_report, summarize, vad_accuracy, MixtureRecord};
use ppn_core::pipeline::{enhance_offline, IdentitySource, NetworkSource, PrecomputedSource};
use ppn_core::synth::{ratio_db, MixPreset, MixtureSpec};
use ppn_core::{FRAME_SIZE, SAMPLE_RATE};

use crate::{alloc, BenchArgs, Cli, Command, EnhanceArgs, EnrollArgs, EvalArgs, GlobalArgs, MixArgs};
use crate::{TrainEmbedderArgs, TrainEnhancerArgs};

/// Shortest enrollment recording accepted.
pub const MIN_ENROLL_SECS: f64 = 3.0;
const FRAME_MS: u32 = 10;

/// Invalid flag combination or value not caught by argument parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(UsageError(msg.into()).into())
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    if g.sample_rate != SAMPLE_RATE {
        return usage(format!("sample rate {} Hz is not supported; use {SAMPLE_RATE}", g.sample_rate));
    }
    // Resolving the model config up front rejects bad overrides for every command.
    enhancer_config(g)?;
    match &cli.command {
        Command::Enroll(a) => enroll(cli, a),
        Command::Enhance(a) => enhance(cli, a),
        Command::Mix(a) => mix(cli, a),
        Command::TrainEmbedder(a) => train_embedder_cmd(cli, a),
        Command::TrainEnhancer(a) => train_enhancer_cmd(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Bench(a) => bench(cli, a),
    }
}

fn lookahead_frames(g: &GlobalArgs) -> Result<usize> {
    if !g.lookahead_ms.is_multiple_of(FRAME_MS) || g.lookahead_ms > 80 {
        return usage(format!("--lookahead-ms must be a multiple of {FRAME_MS} up to 80, got {}", g.lookahead_ms));
    }
    Ok((g.lookahead_ms / FRAME_MS) as usize)
}

/// Enhancer configuration from the preset, look-ahead and `--set` overrides.
fn enhancer_config(g: &GlobalArgs) -> Result<EnhancerConfig> {
    let mut kv = KeyValues::default();
    kv.set("preset", &g.preset);
    kv.set("lookahead_frames", lookahead_frames(g)?);
    for o in &g.overrides {
        let Some((k, v)) = o.split_once('=') else {
            return usage(format!("override '{o}' is not KEY=VALUE"));
        };
        kv.set(k.trim(), v.trim());
    }
    Ok(EnhancerConfig::from_key_values(&kv)?)
}

fn embedder_setup(g: &GlobalArgs) -> (EmbedderConfig, EmbedderTrainConfig) {
    if g.preset == "toy" {
        (EmbedderConfig::toy(), EmbedderTrainConfig::toy())
    } else {
        (EmbedderConfig::default(), EmbedderTrainConfig::default())
    }
}

/// Writes through a temporary sibling and renames, so a failed command never
/// leaves a partial output behind.
fn write_atomic(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    match write(&tmp) {
        Ok(()) => fs::rename(&tmp, path).with_context(|| format!("moving output to {}", path.display())),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, |p| fs::write(p, text).with_context(|| format!("writing {}", p.display())))
}

/// `<output>.config.json`: the parsed command line plus derived settings.
fn write_sidecar(output: &Path, cli: &Cli, resolved: serde_json::Value) -> Result<()> {
    let mut name = output.as_os_str().to_owned();
    name.push(".config.json");
    let doc = json!({ "invocation": cli, "resolved": resolved });
    write_text(Path::new(&name), &(serde_json::to_string_pretty(&doc)? + "\n"))
}

fn kv_json(kv: &KeyValues) -> serde_json::Value {
    kv.iter().map(|(k, v)| (k.to_string(), json!(v))).collect::<serde_json::Map<_, _>>().into()
}

fn read_wav(path: &Path) -> Result<AudioBuffer> {
    AudioBuffer::read_wav(path).with_context(|| format!("reading {}", path.display()))
}

fn enroll(cli: &Cli, a: &EnrollArgs) -> Result<()> {
    let audio = read_wav(&a.audio)?;
    if audio.duration_secs() < MIN_ENROLL_SECS {
        return Err(ppn_core::Error::input(format!(
            "enrollment too short: {:.2} s, at least {MIN_ENROLL_SECS} s needed",
            audio.duration_secs()
        )))
        .with_context(|| a.audio.display().to_string());
    }
    let embedder = Embedder::<f32>::load(&a.weights).with_context(|| format!("loading {}", a.weights.display()))?;
    let embedding = embedder.enroll(&extract_features(audio.samples())?)?;
    write_atomic(&a.out, |p| Ok(embedding.save(p)?))?;
    println!("embedding dim {} norm {:.6} -> {}", embedding.dim(), embedding.norm(), a.out.display());
    write_sidecar(
        &a.out,
        cli,
        json!({ "embedder": kv_json(&embedder.config().to_key_values()), "audio_seconds": audio.duration_secs() }),
    )
}

fn enhance(cli: &Cli, a: &EnhanceArgs) -> Result<()> {
    let look = lookahead_frames(&cli.global)?;
    let input = read_wav(&a.input)?;
    let start = Instant::now();
    let (enhanced, model_config) = match (&a.weights, &a.embedding) {
        (Some(w), Some(e)) if !a.identity => {
            let model = Enhancer::<f32>::load(w).with_context(|| format!("loading {}", w.display()))?;
            if model.config().lookahead_frames != look {
                return usage(format!(
                    "model was built for {} ms of look-ahead, --lookahead-ms is {}",
                    model.config().lookahead_frames * FRAME_MS as usize,
                    cli.global.lookahead_ms
                ));
            }
            let embedding = SpeakerEmbedding::load(e).with_context(|| format!("loading {}", e.display()))?;
            let mut source = NetworkSource::new(&model, &embedding).context("conditioning the model")?;
            (enhance_offline(input.samples(), look, &mut source)?, Some(model.config().to_key_values()))
        }
        _ if a.identity => (enhance_offline(input.samples(), look, &mut IdentitySource)?, None),
        _ => return usage("--weights and --embedding are required unless --identity is given"),
    };
    let wall = start.elapsed().as_secs_f64();
    let rtf = input.duration_secs() / wall.max(1e-9);
    eprintln!("enhanced {:.2} s in {wall:.2} s, realtime factor {rtf:.1}", input.duration_secs());
    let audio = AudioBuffer::new(enhanced.audio)?;
    write_atomic(&a.out, |p| Ok(audio.write_wav(p)?))?;
    write_sidecar(
        &a.out,
        cli,
        json!({
            "lookahead_frames": look,
            "latency_samples": (look + 1) * FRAME_SIZE,
            "model": model_config.as_ref().map(kv_json),
            "realtime_factor": rtf,
        }),
    )
}

/// One row of the mixture manifest; file names are relative to the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub target_speaker: usize,
    pub interferer_speaker: usize,
    pub spec: MixtureSpec,
    /// Re-measured from the written components.
    pub achieved_snr_db: f64,
    pub achieved_sir_db: f64,
    pub mixture: String,
    pub target: String,
    pub interferer: String,
    pub noise: String,
    pub enrollment: String,
    pub interferer_enrollment: String,
}

fn mix(cli: &Cli, a: &MixArgs) -> Result<()> {
    let preset = match (a.snr_db, a.sir_db) {
        (Some(snr_db), Some(sir_db)) => {
            if !snr_db.is_finite() || !sir_db.is_finite() {
                return usage("--snr-db and --sir-db must be finite");
            }
            MixPreset::Fixed { snr_db, sir_db }
        }
        _ => MixPreset::parse(&a.mix_preset)?,
    };
    let recipe = ToyRecipe {
        speakers: a.speakers,
        mixture_secs: a.duration,
        enrollment_secs: a.enrollment,
        ..ToyRecipe::default()
    };
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    let mut manifest = String::new();
    for i in 0..a.count as u64 {
        let m = recipe.eval_mixture(cli.global.seed, &preset, i)?;
        let ex = &m.example;
        let id = format!("mix{i:04}");
        let files = [
            ("mixture", &ex.mixture),
            ("target", &ex.clean_target),
            ("interferer", &ex.interferer),
            ("noise", &ex.noise),
            ("enrollment", &ex.enrollment),
            ("interferer_enrollment", &m.interferer_enrollment),
        ];
        let mut names = Vec::new();
        for (kind, audio) in files {
            let name = format!("{id}_{kind}.wav");
            let path = a.out_dir.join(&name);
            write_atomic(&path, |p| Ok(audio.write_wav(p)?))?;
            names.push(name);
        }
        let row = ManifestRow {
            id,
            target_speaker: m.target,
            interferer_speaker: m.interferer,
            spec: ex.spec,
            achieved_snr_db: ratio_db(ex.clean_target.samples(), ex.noise.samples()),
            achieved_sir_db: ratio_db(ex.clean_target.samples(), ex.interferer.samples()),
            mixture: names[0].clone(),
            target: names[1].clone(),
            interferer: names[2].clone(),
            noise: names[3].clone(),
            enrollment: names[4].clone(),
            interferer_enrollment: names[5].clone(),
        };
        manifest.push_str(&serde_json::to_string(&row)?);
        manifest.push('\n');
    }
    let path = a.out_dir.join("manifest.jsonl");
    write_text(&path, &manifest)?;
    println!("{} mixtures -> {}", a.count, path.display());
    write_sidecar(&path, cli, json!({ "recipe": recipe, "preset": format!("{preset:?}") }))
}

fn train_embedder_cmd(cli: &Cli, a: &TrainEmbedderArgs) -> Result<()> {
    let g = &cli.global;
    let (config, mut schedule) = embedder_setup(g);
    schedule.seed = g.seed;
    if let Some(steps) = a.steps {
        schedule.steps = steps;
    }
    let recipe = ToyRecipe {
        speakers: a.speakers,
        ..ToyRecipe::default()
    };
    let (train, heldout) = recipe.embedder_data(g.seed)?;
    let run = train_embedder(config, &train, &heldout, &schedule)?;
    write_atomic(&a.out, |p| Ok(run.embedder.save(p)?))?;
    let mut log = String::new();
    for (step, loss) in run.losses.iter().enumerate() {
        log.push_str(&format!("{}\n", json!({ "step": step + 1, "loss": loss })));
    }
    for (step, eer) in &run.eer_history {
        log.push_str(&format!("{}\n", json!({ "step": step, "heldout_eer": eer })));
    }
    let mut log_path = a.out.as_os_str().to_owned();
    log_path.push(".log.jsonl");
    write_text(Path::new(&log_path), &log)?;
    let final_eer = run.eer_history.last().map(|&(_, e)| e).unwrap_or(f64::NAN);
    println!("final EER: {:.4}", final_eer);
    write_sidecar(
        &a.out,
        cli,
        json!({
            "embedder": kv_json(&config.to_key_values()),
            "steps": schedule.steps,
            "speakers_per_batch": schedule.speakers_per_batch,
            "utterances_per_speaker": schedule.utterances_per_speaker,
            "crop_frames": schedule.crop_frames,
            "learning_rate": schedule.learning_rate,
            "recipe": recipe,
            "final_eer": final_eer,
        }),
    )
}

fn train_enhancer_cmd(cli: &Cli, a: &TrainEnhancerArgs) -> Result<()> {
    let g = &cli.global;
    let config = enhancer_config(g)?;
    let embedder = Embedder::<f32>::load(&a.embedder).with_context(|| format!("loading {}", a.embedder.display()))?;
    if embedder.dim() != config.embedding_dim {
        return usage(format!(
            "embedder produces {}-dimensional embeddings, the model expects {}",
            embedder.dim(),
            config.embedding_dim
        ));
    }
    let mut schedule = EnhancerTrainConfig::personalization();
    schedule.seed = g.seed;
    if let Some(steps) = a.steps {
        schedule.steps = steps;
    }
    let mut recipe = ToyRecipe {
        speakers: a.speakers,
        ..ToyRecipe::default()
    };
    if let Some(n) = a.mixtures {
        recipe.mixtures = n;
    }
    let data = recipe.enhancer_data(g.seed, &embedder)?;
    let run = train_enhancer(config.clone(), &data, &schedule, None)?;
    write_atomic(&a.out, |p| Ok(run.enhancer.save(p)?))?;
    let mut log = String::new();
    for (step, r) in run.losses.iter().enumerate() {
        log.push_str(&format!(
            "{}\n",
            json!({ "step": step + 1, "total": r.total, "gain_strength": r.gain_strength, "vad": r.vad })
        ));
    }
    let mut log_path = a.out.as_os_str().to_owned();
    log_path.push(".log.jsonl");
    write_text(Path::new(&log_path), &log)?;
    let (first, last) = (run.losses.first(), run.losses.last());
    if let (Some(f), Some(l)) = (first, last) {
        println!("loss {:.4} -> {:.4} over {} steps", f.total, l.total, run.losses.len());
    }
    write_sidecar(
        &a.out,
        cli,
        json!({
            "model": kv_json(&config.to_key_values()),
            "parameters": run.enhancer.param_count(),
            "steps": schedule.steps,
            "batch_size": schedule.batch_size,
            "group_size": schedule.group_size,
            "crop_frames": schedule.crop_frames,
            "learning_rate": schedule.learning_rate,
            "recipe": recipe,
        }),
    )
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<()> {
    let look = lookahead_frames(&cli.global)?;
    let text = fs::read_to_string(&a.manifest).with_context(|| format!("reading {}", a.manifest.display()))?;
    let dir = a.manifest.parent().unwrap_or(Path::new("."));
    let embedder = Embedder::<f32>::load(&a.embedder).with_context(|| format!("loading {}", a.embedder.display()))?;
    let model = match &a.weights {
        Some(w) => {
            let m = Enhancer::<f32>::load(w).with_context(|| format!("loading {}", w.display()))?;
            if m.config().lookahead_frames != look {
                return usage("model look-ahead differs from --lookahead-ms");
            }
            Some(m)
        }
        None => None,
    };
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        if a.limit.is_some_and(|k| records.len() >= k) {
            break;
        }
        let row: ManifestRow = serde_json::from_str(line)
            .map_err(|e| ppn_core::Error::Format(e.to_string()))
            .with_context(|| format!("{}:{}", a.manifest.display(), n + 1))?;
        let load = |name: &str| read_wav(&dir.join(name));
        let mixture = load(&row.mixture)?;
        let target = load(&row.target)?;
        let interferer = load(&row.interferer)?;
        let targets = supervision_targets(&analyze_signal(target.samples())?, &analyze_signal(mixture.samples())?)?;
        let x = mixture.samples();
        let out = if let Some(model) = &model {
            let embedding = embedder.enroll(&extract_features(load(&row.enrollment)?.samples())?)?;
            enhance_offline(x, look, &mut NetworkSource::new(model, &embedding)?)?
        } else if a.oracle {
            let outputs = (0..targets.len())
                .map(|f| EnhancerOutputs {
                    gains: targets.gains[f],
                    strengths: targets.strengths[f],
                    vad: targets.vad[f],
                })
                .collect();
            enhance_offline(x, look, &mut PrecomputedSource::new(outputs, look))?
        } else {
            enhance_offline(x, look, &mut IdentitySource)?
        };
        let probe = cosine_probe(&embedder, &out.audio, target.samples(), interferer.samples())
            .with_context(|| format!("probing {}", row.id))?;
        let labels: Vec<bool> = targets.vad.iter().take(out.vad.len()).map(|&v| v > 0.5).collect();
        let vad = vad_accuracy(&out.vad[..labels.len()], &labels, 0.5)?;
        records.push(MixtureRecord {
            id: row.id.clone(),
            si_snr_in: aligned_si_snr(x, target.samples(), ALIGN_MAX_LAG)?,
            si_snr_out: aligned_si_snr(&out.audio, target.samples(), ALIGN_MAX_LAG)?,
            cos_target: probe.cos_target,
            cos_interf: probe.cos_interference,
            vad_acc: vad.accuracy,
        });
    }
    let report = render_report(&records)?;
    write_text(&a.report, &report)?;
    let summary = summarize(&records)?;
    println!("{}", serde_json::to_string(&summary)?);
    let mode = if model.is_some() {
        "model"
    } else if a.oracle {
        "oracle"
    } else {
        "identity"
    };
    write_sidecar(
        &a.report,
        cli,
        json!({ "mode": mode, "lookahead_frames": look, "mixtures": records.len() }),
    )
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<()> {
    let g = &cli.global;
    let model = match &a.weights {
        Some(w) => Enhancer::<f32>::load(w).with_context(|| format!("loading {}", w.display()))?,
        None => Enhancer::<f32>::new(enhancer_config(g)?, g.seed)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed);
    let values = (0..model.config().embedding_dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let embedding = SpeakerEmbedding::new(values)?;
    let counter = alloc::thread_allocations;
    let report = benchmark_stream(&model, &embedding, a.duration, a.warmup, Some(&counter))?;
    let line = serde_json::to_string(&report)?;
    println!("{line}");
    write_text(&a.out, &(line + "\n"))?;
    write_sidecar(
        &a.out,
        cli,
        json!({ "model": kv_json(&model.config().to_key_values()), "parameters": model.param_count() }),
    )?;
    match report.allocations {
        Some(0) => Ok(()),
        n => Err(ppn_core::Error::Numeric(format!("{n:?} heap allocations in the timed streaming loop")).into()),
    }
}

