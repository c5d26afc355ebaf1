//! Command surface for the probing pipeline: dataset curation, k-shot
//! splits, audio featurization, probe training, evaluation, and parameter
//! accounting.
//!
//! Tunables resolve in three layers: built-in defaults, then an optional
//! plain `key=value` config file, then explicit flags. Unknown config keys
//! are rejected. Every run prints the hash of its resolved config so runs
//! can be tied to exact settings.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use birdprobe::augment::{augment_waveform, sample_rng, spec_mask, AugmentConfig, AugmentPools, LabeledClip};
use birdprobe::curate::{
    curate_pretrain, read_metas, read_split, sample_fewshot, write_split, ClipRef, CurationConfig,
};
use birdprobe::featmap::{
    read_fmap, read_labels, toy_encode, write_fmap, write_labels, FeatureMap, LabelRecord,
    ToyEncoderSpec,
};
use birdprobe::frontend::{load_audio, pipeline, Waveform, SAMPLE_RATE};
use birdprobe::probes::{param_count, read_head, write_head, Probe, ProbeKind};
use birdprobe::trainer::{evaluate, train_probe, TrainConfig, TrainSample};
use birdprobe::Error as CoreError;

const EXIT_USAGE: i32 = 2;
const EXIT_DATA: i32 = 3;
const EXIT_NUMERIC: i32 = 4;

struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn usage(msg: impl Display) -> Self {
        Self { code: EXIT_USAGE, message: msg.to_string() }
    }

    fn data(msg: impl Display) -> Self {
        Self { code: EXIT_DATA, message: msg.to_string() }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match &e {
            CoreError::NanLoss { .. } => EXIT_NUMERIC,
            _ => EXIT_DATA,
        };
        Self { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::data(e)
    }
}

type CliResult<T> = Result<T, CliError>;

/// Defaults, overlaid by an optional key=value file, overlaid by flags.
struct Config {
    map: BTreeMap<String, String>,
    allowed: Vec<&'static str>,
}

impl Config {
    fn new(defaults: &[(&'static str, String)], file: Option<&Path>) -> CliResult<Self> {
        let allowed: Vec<&'static str> = defaults.iter().map(|(k, _)| *k).collect();
        let mut map: BTreeMap<String, String> = defaults
            .iter()
            .map(|(k, v)| (k.to_string(), v.clone()))
            .collect();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::data(format!("config {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::usage(format!(
                        "config {} line {}: expected key=value",
                        path.display(),
                        lineno + 1
                    ))
                })?;
                let key = key.trim();
                if !allowed.contains(&key) {
                    return Err(CliError::usage(format!(
                        "config {} line {}: unknown key {key:?}",
                        path.display(),
                        lineno + 1
                    )));
                }
                map.insert(key.to_string(), value.trim().to_string());
            }
        }
        Ok(Self { map, allowed })
    }

    fn set<T: ToString>(&mut self, key: &str, flag: Option<T>) {
        debug_assert!(self.allowed.contains(&key), "unknown config key {key}");
        if let Some(v) = flag {
            self.map.insert(key.to_string(), v.to_string());
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: Display,
    {
        let raw = self.map.get(key).expect("all keys have defaults");
        raw.parse()
            .map_err(|e| CliError::usage(format!("bad value {raw:?} for {key}: {e}")))
    }

    fn get_bool(&self, key: &str) -> CliResult<bool> {
        match self.map.get(key).map(String::as_str) {
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            other => Err(CliError::usage(format!("bad boolean {other:?} for {key}"))),
        }
    }

    /// SHA-256 of the sorted resolved key=value pairs.
    fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for (k, v) in &self.map {
            hasher.update(k.as_bytes());
            hasher.update(b"=");
            hasher.update(v.as_bytes());
            hasher.update(b"\n");
        }
        let digest = hasher.finalize();
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    fn announce(&self) {
        println!("config-hash: {}", self.hash());
    }
}

#[derive(Parser)]
#[command(name = "birdprobe", version, about = "Frozen-encoder probing pipeline for multi-label bioacoustics")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Select pretraining events under species and per-recording caps.
    Curate(CurateArgs),
    /// Build a k-shot train split from recording metadata.
    Fewshot(FewshotArgs),
    /// Turn split audio into feature maps (BMFM) plus a label file.
    Featurize(FeaturizeArgs),
    /// Train a probe head on frozen feature maps.
    Train(TrainArgs),
    /// Evaluate a trained head and write a metrics report.
    Eval(EvalArgs),
    /// Print the closed-form parameter count of a probe head.
    Params(ParamsArgs),
}

#[derive(clap::Args)]
struct CurateArgs {
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    species_cap: Option<usize>,
    #[arg(long)]
    recording_cap: Option<usize>,
    #[arg(long)]
    min_events: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct FewshotArgs {
    #[arg(long)]
    meta: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct FeaturizeArgs {
    #[arg(long)]
    audio_dir: PathBuf,
    #[arg(long)]
    split: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// "toy" (deterministic stand-in) or "import" (copy records from an
    /// externally produced BMFM file).
    #[arg(long)]
    encoder: Option<String>,
    /// BMFM file with precomputed embeddings, for --encoder import.
    #[arg(long)]
    import_from: Option<PathBuf>,
    /// Companion label JSONL path (default: <out>.labels.jsonl).
    #[arg(long)]
    labels_out: Option<PathBuf>,
    /// Apply the training augmentation stack before the frontend.
    #[arg(long)]
    train_augment: bool,
    /// Toy-encoder embedding dimension.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(clap::Args)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// linear | mlp | attentive | proto
    #[arg(long)]
    probe: Option<String>,
    /// Number of classes (default: highest label index + 1).
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long = "J")]
    j: Option<usize>,
    #[arg(long = "H")]
    hidden: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    focal: Option<bool>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    prototype_lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    grad_clip: Option<f64>,
    #[arg(long)]
    gamma_pos: Option<f64>,
    #[arg(long)]
    gamma_neg: Option<f64>,
    #[arg(long)]
    clip: Option<f64>,
    #[arg(long)]
    orthogonality_weight: Option<f64>,
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Append the run record (JSON line) here; default <out>.runs.jsonl.
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    head: PathBuf,
    #[arg(long)]
    report: PathBuf,
}

#[derive(clap::Args)]
struct ParamsArgs {
    #[arg(long)]
    probe: String,
    #[arg(long = "D", default_value_t = 1024)]
    d: u64,
    #[arg(long = "C", default_value_t = 21)]
    c: u64,
    #[arg(long = "H", default_value_t = 512)]
    h: u64,
    #[arg(long = "J", default_value_t = 20)]
    j: u64,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Curate(a) => cmd_curate(a),
        Cmd::Fewshot(a) => cmd_fewshot(a),
        Cmd::Featurize(a) => cmd_featurize(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Params(a) => cmd_params(a),
    };
    if let Err(e) = result {
        eprintln!("error: {}", e.message);
        std::process::exit(e.code);
    }
}

fn cmd_curate(args: CurateArgs) -> CliResult<()> {
    let mut cfg = Config::new(
        &[
            ("species-cap", "500".to_string()),
            ("recording-cap", "2".to_string()),
            ("min-events", "1".to_string()),
            ("seed", "0".to_string()),
        ],
        args.config.as_deref(),
    )?;
    cfg.set("species-cap", args.species_cap);
    cfg.set("recording-cap", args.recording_cap);
    cfg.set("min-events", args.min_events);
    cfg.set("seed", args.seed);
    cfg.announce();

    let metas = read_metas(&args.meta)?;
    let curation = CurationConfig {
        max_events_per_species: cfg.get("species-cap")?,
        max_events_per_recording: cfg.get("recording-cap")?,
        min_events_per_recording: cfg.get("min-events")?,
        seed: cfg.get("seed")?,
    };
    let selection = curate_pretrain(&metas, &curation)?;
    let mut by_id = BTreeMap::new();
    for m in &metas {
        by_id.insert(m.recording_id.clone(), m);
    }
    let clips: Vec<ClipRef> = selection
        .iter()
        .map(|(id, e)| {
            let m = by_id[id];
            let (start, _) = m.events[*e];
            ClipRef {
                clip_id: format!("{id}#e{e}"),
                recording_id: id.clone(),
                event_index: *e,
                start_s: start,
                labels: vec![m.species.clone()],
            }
        })
        .collect();
    write_split(&args.out, &clips)?;
    println!("selected {} events from {} recordings", clips.len(), by_id.len());
    Ok(())
}

fn cmd_fewshot(args: FewshotArgs) -> CliResult<()> {
    let mut cfg = Config::new(
        &[("k", "5".to_string()), ("seed", "0".to_string())],
        args.config.as_deref(),
    )?;
    cfg.set("k", args.k);
    cfg.set("seed", args.seed);
    cfg.announce();

    let metas = read_metas(&args.meta)?;
    let clips = sample_fewshot(&metas, cfg.get("k")?, cfg.get("seed")?)?;
    write_split(&args.out, &clips)?;
    println!("selected {} clips", clips.len());
    Ok(())
}

fn worker_count(jobs: usize) -> usize {
    let hw = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let cap = std::env::var("BMAE_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or(hw);
    cap.min(jobs).max(1)
}

/// 5-second window of the recording starting at `start_s`, padded by
/// cyclic tiling when the recording runs out.
fn cut_window(wave: &Waveform, start_s: f64) -> CliResult<Waveform> {
    let len = (5.0 * SAMPLE_RATE as f64) as usize;
    let start = ((start_s * SAMPLE_RATE as f64) as usize).min(wave.samples.len().saturating_sub(1));
    let available = &wave.samples[start..];
    let samples: Vec<f32> = available.iter().cycle().take(len).copied().collect();
    Ok(Waveform::new(samples, SAMPLE_RATE)?)
}

fn class_index(split: &[ClipRef]) -> Vec<String> {
    let mut names: Vec<String> = split.iter().flat_map(|c| c.labels.iter().cloned()).collect();
    names.sort();
    names.dedup();
    names
}

fn cmd_featurize(args: FeaturizeArgs) -> CliResult<()> {
    let mut cfg = Config::new(
        &[
            ("encoder", "toy".to_string()),
            ("dim", "256".to_string()),
            ("seed", "0".to_string()),
            ("train-augment", "false".to_string()),
        ],
        args.config.as_deref(),
    )?;
    cfg.set("encoder", args.encoder);
    cfg.set("dim", args.dim);
    cfg.set("seed", args.seed);
    cfg.set("train-augment", args.train_augment.then_some(true));
    cfg.announce();

    let split = read_split(&args.split)?;
    if split.is_empty() {
        return Err(CliError::data("split file contains no clips"));
    }
    let classes = class_index(&split);
    let labels: Vec<LabelRecord> = split
        .iter()
        .map(|c| LabelRecord {
            id: c.clip_id.clone(),
            labels: c
                .labels
                .iter()
                .map(|l| classes.binary_search(l).expect("class from this split"))
                .collect(),
        })
        .collect();

    let encoder = cfg.get::<String>("encoder")?;
    let batch: Vec<(String, FeatureMap)> = match encoder.as_str() {
        "toy" => {
            let seed: u64 = cfg.get("seed")?;
            let enc = ToyEncoderSpec::new(seed, cfg.get("dim")?);
            let augment = cfg.get_bool("train-augment")?;
            featurize_toy(&args.audio_dir, &split, &enc, augment, seed)?
        }
        "import" => {
            let from = args.import_from.as_ref().ok_or_else(|| {
                CliError::usage("--encoder import requires --import-from <bmfm>")
            })?;
            let mut source: BTreeMap<String, FeatureMap> = read_fmap(from)?.into_iter().collect();
            split
                .iter()
                .map(|c| {
                    source.remove(&c.clip_id).map(|fm| (c.clip_id.clone(), fm)).ok_or_else(
                        || CliError::data(format!("clip {} missing from {}", c.clip_id, from.display())),
                    )
                })
                .collect::<CliResult<Vec<_>>>()?
        }
        other => return Err(CliError::usage(format!("unknown encoder {other:?}"))),
    };

    write_fmap(&args.out, &batch)?;
    let labels_path = args
        .labels_out
        .unwrap_or_else(|| args.out.with_extension("labels.jsonl"));
    write_labels(&labels_path, &labels)?;
    std::fs::write(
        args.out.with_extension("classes.txt"),
        classes.join("\n") + "\n",
    )?;
    println!("featurized {} clips ({} classes)", batch.len(), classes.len());
    Ok(())
}

fn featurize_toy(
    audio_dir: &Path,
    split: &[ClipRef],
    enc: &ToyEncoderSpec,
    augment: bool,
    seed: u64,
) -> CliResult<Vec<(String, FeatureMap)>> {
    let aug_cfg = AugmentConfig::default();
    let process = |idx: usize| -> Result<(String, FeatureMap), CoreError> {
        let clip = &split[idx];
        let path = audio_dir.join(format!("{}.wav", clip.recording_id));
        let wave = load_audio(&path, SAMPLE_RATE)?;
        let window = cut_window(&wave, clip.start_s).map_err(|e| CoreError::Audio(e.message))?;
        let mut rng = sample_rng(seed, idx as u64);
        let spec = if augment {
            let mut labeled = LabeledClip {
                waveform: window,
                labels: vec![1],
                source_id: clip.clip_id.clone(),
            };
            // mixup/background/no-call pools are corpus-level artifacts
            // and stay empty in single-pass featurization
            augment_waveform(&mut labeled, &AugmentPools::default(), &aug_cfg, &mut rng);
            let mut spec = pipeline(&labeled.waveform)?;
            spec_mask(&mut spec, &aug_cfg, &mut rng);
            spec
        } else {
            pipeline(&window)?
        };
        Ok((clip.clip_id.clone(), toy_encode(&spec, enc)?))
    };

    let workers = worker_count(split.len());
    let mut results: Vec<Option<Result<(String, FeatureMap), CoreError>>> =
        (0..split.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks = results.chunks_mut(split.len().div_ceil(workers));
        for (w, chunk) in chunks.enumerate() {
            let process = &process;
            let base = w * split.len().div_ceil(workers);
            scope.spawn(move || {
                for (off, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(process(base + off));
                }
            });
        }
    });
    results
        .into_iter()
        .map(|r| r.expect("every slot filled").map_err(CliError::from))
        .collect()
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let defaults = TrainConfig::default();
    let mut cfg = Config::new(
        &[
            ("probe", "proto".to_string()),
            ("J", "20".to_string()),
            ("H", "512".to_string()),
            ("heads", "12".to_string()),
            ("focal", "true".to_string()),
            ("epochs", defaults.epochs.to_string()),
            ("lr", defaults.lr.to_string()),
            ("prototype-lr", defaults.prototype_lr.to_string()),
            ("weight-decay", defaults.weight_decay.to_string()),
            ("batch-size", defaults.batch_size.to_string()),
            ("grad-clip", defaults.grad_clip.to_string()),
            ("gamma-pos", defaults.gamma_pos.to_string()),
            ("gamma-neg", defaults.gamma_neg.to_string()),
            ("clip", defaults.clip.to_string()),
            ("orthogonality-weight", defaults.orthogonality_weight.to_string()),
            ("init-seed", "0".to_string()),
            ("seed", "0".to_string()),
        ],
        args.config.as_deref(),
    )?;
    cfg.set("probe", args.probe);
    cfg.set("J", args.j);
    cfg.set("H", args.hidden);
    cfg.set("heads", args.heads);
    cfg.set("focal", args.focal);
    cfg.set("epochs", args.epochs);
    cfg.set("lr", args.lr);
    cfg.set("prototype-lr", args.prototype_lr);
    cfg.set("weight-decay", args.weight_decay);
    cfg.set("batch-size", args.batch_size);
    cfg.set("grad-clip", args.grad_clip);
    cfg.set("gamma-pos", args.gamma_pos);
    cfg.set("gamma-neg", args.gamma_neg);
    cfg.set("clip", args.clip);
    cfg.set("orthogonality-weight", args.orthogonality_weight);
    cfg.set("init-seed", args.init_seed);
    cfg.set("seed", args.seed);
    cfg.announce();

    let data = load_dataset(&args.features, &args.labels, args.classes)?;
    let d = data[0].fm.d;
    let c = data[0].labels.len();

    let kind: ProbeKind = cfg
        .get::<String>("probe")?
        .parse()
        .map_err(|e: CoreError| CliError::usage(e.to_string()))?;
    let init_seed: u64 = cfg.get("init-seed")?;
    let mut probe = match kind {
        ProbeKind::Linear => Probe::new_linear(c, d, init_seed),
        ProbeKind::Mlp => Probe::new_mlp(c, d, cfg.get("H")?, init_seed),
        ProbeKind::Attentive => Probe::new_attentive(c, d, cfg.get("heads")?, init_seed)?,
        ProbeKind::Proto => Probe::new_proto(c, d, cfg.get("J")?, cfg.get_bool("focal")?, init_seed),
    };

    let train_cfg = TrainConfig {
        lr: cfg.get("lr")?,
        prototype_lr: cfg.get("prototype-lr")?,
        weight_decay: cfg.get("weight-decay")?,
        epochs: cfg.get("epochs")?,
        batch_size: cfg.get("batch-size")?,
        grad_clip: cfg.get("grad-clip")?,
        gamma_pos: cfg.get("gamma-pos")?,
        gamma_neg: cfg.get("gamma-neg")?,
        clip: cfg.get("clip")?,
        orthogonality_weight: cfg.get("orthogonality-weight")?,
        seed: cfg.get("seed")?,
    };
    let record = train_probe(&mut probe, &data, None, &train_cfg)?;
    write_head(&args.out, &probe)?;

    let record_path = args
        .record
        .unwrap_or_else(|| args.out.with_extension("runs.jsonl"));
    let mut line = serde_json::to_string(&record).map_err(|e| CliError::data(e.to_string()))?;
    line.push('\n');
    use std::io::Write as _;
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&record_path)?
        .write_all(line.as_bytes())?;

    println!(
        "trained {} head: {} samples, {} classes, final loss {:.6}",
        kind.name(),
        data.len(),
        c,
        record.epoch_loss.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let probe = read_head(&args.head)?;
    let data = load_dataset(&args.features, &args.labels, Some(probe.classes()))?;
    let report = evaluate(&probe, &data)?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::data(e.to_string()))?;
    std::fs::write(&args.report, json)?;
    print!("{}", report.table());
    Ok(())
}

fn cmd_params(args: ParamsArgs) -> CliResult<()> {
    let kind: ProbeKind = args
        .probe
        .parse()
        .map_err(|e: CoreError| CliError::usage(e.to_string()))?;
    println!("{}", param_count(kind, args.d, args.c, args.h, args.j));
    Ok(())
}

fn load_dataset(
    features: &Path,
    labels: &Path,
    classes: Option<usize>,
) -> CliResult<Vec<TrainSample>> {
    let batch = read_fmap(features)?;
    if batch.is_empty() {
        return Err(CliError::data("feature file contains no records"));
    }
    let records = read_labels(labels)?;
    let by_id: BTreeMap<&str, &LabelRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let max_label = records
        .iter()
        .flat_map(|r| r.labels.iter().copied())
        .max()
        .map(|m| m + 1)
        .unwrap_or(0);
    let c = classes.unwrap_or(max_label);
    if c == 0 || max_label > c {
        return Err(CliError::data(format!(
            "label indices require at least {max_label} classes, got {c}"
        )));
    }
    batch
        .into_iter()
        .map(|(id, fm)| {
            let rec = by_id
                .get(id.as_str())
                .ok_or_else(|| CliError::data(format!("no labels for clip {id}")))?;
            let mut multihot = vec![0u8; c];
            for &l in &rec.labels {
                multihot[l] = 1;
            }
            Ok(TrainSample { fm, labels: multihot })
        })
        .collect()
}
