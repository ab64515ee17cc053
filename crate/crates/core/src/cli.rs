//! Command-line surface: dataset generation, training, evaluation, fusion
//! and the analysis reports, all driven by one JSON run config.

use std::ffi::OsString;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::Waveform;
use crate::autograd::{Graph, Mode};
use crate::backend::tconv_shape_chain;
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::data::{
    build_test_noise_sets, read_test_noise_sets, write_test_noise_sets, NoiseBank, NoisyTestSet, Sample, Split,
    Wordbank, WordbankConfig, CLIP_FRAMES, SAMPLES_PER_FRAME, TEST_SNRS,
};
use crate::error::{Error, Result};
use crate::gradcheck::oracle_suite;
use crate::integration::{FusionConfig, Model, ModelKind, ModelSpec};
use crate::params::ParamStore;
use crate::tensor::Tensor;
use crate::train::{
    confusion_pairs, context_only_eval, snr_sweep_report, train, EvalReport, Scorer, TrainConfig, TrainData,
};
use crate::visual::{build_resnet, shape_chain_report, ResNetConfig};

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

/// Visual-frontend chain at 112×112, per frame.
pub const RESNET_CHAIN: [&[usize]; 7] = [
    &[1, 112, 112],
    &[64, 28, 28],
    &[128, 14, 14],
    &[256, 7, 7],
    &[512, 4, 4],
    &[8192],
    &[256],
];

/// Temporal-convolution backend chain for 29 frames and 500 words.
pub const TCONV_CHAIN: [&[usize]; 7] = [&[29, 256], &[15, 512], &[7, 512], &[4, 1024], &[1, 1024], &[256], &[500]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub wordbank: WordbankConfig,
    /// External noise bank (`<category>/*.wav`); defaults to `root/noise`.
    pub noise_bank: Option<PathBuf>,
    pub noise_sources_per_category: usize,
    pub noise_seconds: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            root: PathBuf::from("data"),
            wordbank: WordbankConfig::default(),
            noise_bank: None,
            noise_sources_per_category: 3,
            noise_seconds: 3.0,
        }
    }
}

impl DatasetConfig {
    pub fn noise_dir(&self) -> PathBuf {
        self.noise_bank.clone().unwrap_or_else(|| self.root.join("noise"))
    }

    pub fn noise_sets_dir(&self) -> PathBuf {
        self.root.join("noise_sets")
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointPaths {
    pub model: Option<PathBuf>,
    pub visual: Option<PathBuf>,
    pub audio: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// When set, overrides both the wordbank and the training seed.
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub dataset: DatasetConfig,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub fusion: FusionConfig,
    pub checkpoints: CheckpointPaths,
    pub top_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: None,
            out: PathBuf::from("out"),
            dataset: DatasetConfig::default(),
            model: ModelSpec::desk(ModelKind::Visual, WordbankConfig::default().vocab_size),
            train: TrainConfig {
                batch_size: 8,
                ..Default::default()
            },
            fusion: FusionConfig::default(),
            checkpoints: CheckpointPaths::default(),
            top_k: 10,
        }
    }
}

impl RunConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn apply(&mut self, flags: &GlobalFlags) -> Result<()> {
        if let Some(s) = flags.seed {
            self.seed = Some(s);
        }
        if let Some(s) = self.seed {
            self.dataset.wordbank.seed = s;
            self.train.seed = s;
        }
        if let Some(o) = &flags.out {
            self.out = o.clone();
        }
        if let Some(g) = flags.gamma {
            self.fusion.gamma = g;
        }
        if let Some(m) = &flags.mode {
            self.model.boundary_mode = m.parse()?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.wordbank.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if !(0.0..=1.0).contains(&self.fusion.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1], got {}", self.fusion.gamma)));
        }
        if self.dataset.noise_sources_per_category == 0 || self.dataset.noise_seconds <= 0.0 {
            return Err(Error::Config("noise bank needs at least one positive-length source per category".into()));
        }
        Ok(())
    }

    fn checkpoint(&self) -> PathBuf {
        self.checkpoints.model.clone().unwrap_or_else(|| self.out.join("checkpoint"))
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalFlags {
    /// JSON run config; unknown keys are rejected.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Visual weight of late fusion.
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    /// Comma-separated SNRs in dB, or `clean`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub snr: Option<Vec<String>>,
    /// indicator, remove_outside, remove_inside or unused.
    #[arg(long, global = true)]
    pub mode: Option<String>,
}

#[derive(Debug, Parser)]
#[command(name = "avword", version = VERSION, about = "Audiovisual word recognition on a CPU")]
pub struct Cli {
    #[command(flatten)]
    pub flags: GlobalFlags,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Generate the synthetic wordbank, noise bank and noisy test sets.
    GenData,
    /// Train the configured model and write a checkpoint plus log.
    Train,
    /// Score a checkpoint on the test split.
    Eval,
    /// Late-fuse a visual and an audio checkpoint.
    Fuse,
    /// MCR at every test SNR, overall and per noise category.
    SweepSnr,
    /// Most frequent confusions on the clean test split.
    AnalyzeConfusions,
    /// Train and score on out-of-boundary frames only.
    ContextEval,
    /// Gradient oracles and shape chains; needs no dataset.
    Check {
        #[arg(long)]
        grad: bool,
        #[arg(long)]
        shapes: bool,
        /// Seeds per gradient oracle.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Fuse => "fuse",
            Command::SweepSnr => "sweep-snr",
            Command::AnalyzeConfusions => "analyze-confusions",
            Command::ContextEval => "context-eval",
            Command::Check { .. } => "check",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io { .. } | Error::Json(_) => 2,
        Error::Mismatch(_) | Error::Malformed { .. } | Error::Wav(_) => 3,
        Error::Numerical(_)
        | Error::NonFinite(_)
        | Error::Degenerate(_)
        | Error::Shape { .. }
        | Error::InvalidShape(_)
        | Error::InvalidArgument(_) => 4,
    }
}

/// Worker count from `AVWORD_THREADS` (default 1).
pub fn worker_cap() -> Result<usize> {
    match std::env::var("AVWORD_THREADS") {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(Error::Config(format!("AVWORD_THREADS must be a positive integer, got {v:?}"))),
        },
    }
}

/// Parse, run and map the outcome to a process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

struct OutputLock(PathBuf);

impl OutputLock {
    fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(".avword.lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(OutputLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Config(format!(
                "{} is locked by another run; remove {} if it is stale",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.0);
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_vec_pretty(value)?).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn execute(cli: &Cli) -> Result<()> {
    let workers = worker_cap()?;
    let mut cfg = match &cli.flags.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    cfg.apply(&cli.flags)?;
    let out = match cli.command {
        Command::GenData if cli.flags.out.is_none() => cfg.dataset.root.clone(),
        _ => cfg.out.clone(),
    };
    if matches!(cli.command, Command::GenData) {
        cfg.dataset.root = out.clone();
    }
    let _lock = OutputLock::acquire(&out)?;
    write_json(&out.join("config.json"), &cfg)?;
    write_text(&out.join("version.txt"), &format!("{VERSION}\n"))?;
    log::info!("{} with {workers} worker(s) requested, 1 used", cli.command.name());
    let snrs = parse_snrs(cli.flags.snr.as_deref())?;
    match &cli.command {
        Command::GenData => cmd_gen_data(&cfg),
        Command::Train => cmd_train(&cfg, &out),
        Command::Eval => cmd_eval(&cfg, &out, snrs.as_deref().unwrap_or(&[None])),
        Command::Fuse => cmd_fuse(&cfg, &out, snrs.as_deref().unwrap_or(&[None])),
        Command::SweepSnr => cmd_sweep(&cfg, &out),
        Command::AnalyzeConfusions => cmd_confusions(&cfg, &out),
        Command::ContextEval => cmd_context(&cfg, &out),
        &Command::Check { grad, shapes, seeds } => cmd_check(&out, grad, shapes, seeds),
    }
}

/// `None` stands for the clean set.
pub fn parse_snrs(list: Option<&[String]>) -> Result<Option<Vec<Option<f64>>>> {
    let Some(list) = list else { return Ok(None) };
    list.iter()
        .map(|s| {
            let s = s.trim();
            if s == "clean" {
                return Ok(None);
            }
            let v: f64 = s.parse().map_err(|_| Error::Config(format!("bad SNR {s:?}")))?;
            if !TEST_SNRS.contains(&v) {
                return Err(Error::Config(format!("no test set at {v} dB; choose from {TEST_SNRS:?} or clean")));
            }
            Ok(Some(v))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn cmd_gen_data(cfg: &RunConfig) -> Result<()> {
    let root = &cfg.dataset.root;
    let seed = cfg.dataset.wordbank.seed;
    let wb = Wordbank::generate(&cfg.dataset.wordbank)?;
    let manifest = wb.write(root)?;
    let noise_dir = cfg.dataset.noise_dir();
    let bank = match NoiseBank::load_dir(&noise_dir) {
        Ok(b) if !b.sources.is_empty() && cfg.dataset.noise_bank.is_some() => b,
        _ => {
            let b = NoiseBank::synthetic(seed, cfg.dataset.noise_sources_per_category, cfg.dataset.noise_seconds)?;
            b.write_dir(&noise_dir)?;
            b
        }
    };
    let ids: Vec<String> = wb.split(Split::Test).iter().map(|s| s.id.clone()).collect();
    let sets = build_test_noise_sets(&bank, &ids, CLIP_FRAMES * SAMPLES_PER_FRAME, seed)?;
    write_test_noise_sets(&cfg.dataset.noise_sets_dir(), &sets)?;
    println!("{} samples, content hash {}", manifest.samples.len(), manifest.content_hash);
    Ok(())
}

fn load_data(cfg: &RunConfig) -> Result<(Wordbank, NoiseBank)> {
    let wb = Wordbank::load(&cfg.dataset.root)?;
    let bank = NoiseBank::load_dir(&cfg.dataset.noise_dir())?;
    Ok((wb, bank))
}

fn check_vocab(spec: &ModelSpec, wb: &Wordbank) -> Result<()> {
    if spec.vocab_size != wb.vocab.len() {
        return Err(Error::Mismatch(format!(
            "model has {} classes, the wordbank {} words",
            spec.vocab_size,
            wb.vocab.len()
        )));
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (wb, bank) = load_data(cfg)?;
    if cfg.model.vocab_size != wb.vocab.len() {
        return Err(Error::Config(format!(
            "model.vocab_size {} differs from the wordbank's {} words",
            cfg.model.vocab_size,
            wb.vocab.len()
        )));
    }
    let mut model = crate::integration::assemble_model::<f32>(&cfg.model, cfg.train.seed)?;
    let noise = (cfg.model.kind.uses_audio() && cfg.train.noise).then_some(&bank);
    let data = TrainData::from_wordbank(&wb, noise);
    let log_path = out.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path).map_err(|e| Error::io(&log_path, e))?);
    let outcome = train(&mut model, &data, &cfg.train, Some(&mut log))?;
    log.flush().map_err(|e| Error::io(&log_path, e))?;
    save_checkpoint(&out.join("checkpoint"), &model, Some(&outcome.optimizer), Some(&outcome.scheduler))?;
    let summary = serde_json::json!({
        "epochs": outcome.records.len(),
        "stop": outcome.stop,
        "final": outcome.records.last(),
        "log_hash": crate::train::log_hash(&outcome.records),
        "params": model.param_count(),
    });
    write_json(&out.join("train_summary.json"), &summary)?;
    println!("{summary}");
    Ok(())
}

fn noisy_waves(set: &NoisyTestSet, bank: &NoiseBank, test: &[&Sample]) -> Result<Vec<Waveform>> {
    test.iter().map(|s| set.apply(bank, &s.id, &s.waveform)).collect()
}

fn find_set(sets: &[NoisyTestSet], snr: Option<f64>) -> Result<&NoisyTestSet> {
    sets.iter()
        .find(|s| s.snr_db == snr)
        .ok_or_else(|| Error::Mismatch(format!("missing noisy test set for {snr:?}")))
}

fn label_of(snr: Option<f64>) -> String {
    snr.map_or_else(|| "clean".to_string(), |v| format!("{v}"))
}

fn score_sets(
    scorer: &Scorer<'_, f32>,
    cfg: &RunConfig,
    wb: &Wordbank,
    bank: &NoiseBank,
    snrs: &[Option<f64>],
) -> Result<Vec<(String, EvalReport)>> {
    let sets = read_test_noise_sets(&cfg.dataset.noise_sets_dir())?;
    let test = wb.split(Split::Test);
    snrs.iter()
        .map(|&snr| {
            let waves = noisy_waves(find_set(&sets, snr)?, bank, &test)?;
            let r = scorer.evaluate(&test, Some(&waves), &wb.vocab, cfg.train.eval_batch_size)?;
            Ok((label_of(snr), r))
        })
        .collect()
}

fn load_model(path: &Path, wb: &Wordbank) -> Result<Model<f32>> {
    let model = load_checkpoint::<f32>(path, None)?.model;
    check_vocab(&model.spec, wb)?;
    Ok(model)
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, snrs: &[Option<f64>]) -> Result<()> {
    let (wb, bank) = load_data(cfg)?;
    let model = load_model(&cfg.checkpoint(), &wb)?;
    let mut summary = serde_json::Map::new();
    for (label, r) in score_sets(&Scorer::Single(&model), cfg, &wb, &bank, snrs)? {
        write_json(&out.join(format!("eval_{label}.json")), &r)?;
        println!("{label}: MCR {:.2}%", r.mcr);
        summary.insert(label, r.summary_json());
    }
    write_json(&out.join("eval_summary.json"), &summary)
}

pub fn cmd_fuse(cfg: &RunConfig, out: &Path, snrs: &[Option<f64>]) -> Result<()> {
    let (wb, bank) = load_data(cfg)?;
    let need = |p: &Option<PathBuf>, what: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("fuse needs checkpoints.{what}")))
    };
    let visual = load_model(&need(&cfg.checkpoints.visual, "visual")?, &wb)?;
    let audio = load_model(&need(&cfg.checkpoints.audio, "audio")?, &wb)?;
    if visual.spec.kind != ModelKind::Visual || audio.spec.kind != ModelKind::Audio {
        return Err(Error::Mismatch(format!(
            "fuse expects a visual and an audio checkpoint, got {} and {}",
            visual.spec.kind, audio.spec.kind
        )));
    }
    let fused = Scorer::Fused {
        visual: &visual,
        audio: &audio,
        fusion: cfg.fusion.clone(),
    };
    let f = score_sets(&fused, cfg, &wb, &bank, snrs)?;
    let a = score_sets(&Scorer::Single(&audio), cfg, &wb, &bank, snrs)?;
    let v = score_sets(&Scorer::Single(&visual), cfg, &wb, &bank, snrs)?;
    let mut rows = Vec::new();
    for ((label, fr), ((_, ar), (_, vr))) in f.iter().zip(a.iter().zip(&v)) {
        write_json(&out.join(format!("fused_{label}.json")), fr)?;
        println!("{label}: fused {:.2}% audio {:.2}% visual {:.2}%", fr.mcr, ar.mcr, vr.mcr);
        rows.push(serde_json::json!({
            "snr": label, "gamma": cfg.fusion.gamma,
            "fused_mcr": fr.mcr, "audio_mcr": ar.mcr, "visual_mcr": vr.mcr,
        }));
    }
    write_json(&out.join("fuse_summary.json"), &rows)
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (wb, bank) = load_data(cfg)?;
    let sets = read_test_noise_sets(&cfg.dataset.noise_sets_dir())?;
    let test = wb.split(Split::Test);
    let bs = cfg.train.eval_batch_size;
    let report = match (&cfg.checkpoints.visual, &cfg.checkpoints.audio) {
        (Some(v), Some(a)) => {
            let (visual, audio) = (load_model(v, &wb)?, load_model(a, &wb)?);
            let fused = Scorer::Fused {
                visual: &visual,
                audio: &audio,
                fusion: cfg.fusion.clone(),
            };
            snr_sweep_report(&fused, &sets, &bank, &test, &wb.vocab, bs)?
        }
        _ => {
            let model = load_model(&cfg.checkpoint(), &wb)?;
            snr_sweep_report(&Scorer::Single(&model), &sets, &bank, &test, &wb.vocab, bs)?
        }
    };
    write_text(&out.join("sweep.csv"), &report.to_csv())?;
    write_text(&out.join("sweep_categories.csv"), &report.category_csv())?;
    write_json(&out.join("sweep.json"), &report)?;
    print!("{}", report.to_csv());
    Ok(())
}

pub fn cmd_confusions(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (wb, _) = load_data(cfg)?;
    let model = load_model(&cfg.checkpoint(), &wb)?;
    let report = Scorer::Single(&model).evaluate(&wb.split(Split::Test), None, &wb.vocab, cfg.train.eval_batch_size)?;
    let mut csv = String::from("target,estimate,count\n");
    for (t, e, c) in confusion_pairs(&report, cfg.top_k) {
        csv.push_str(&format!("{t},{e},{c}\n"));
    }
    write_text(&out.join("confusions.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_context(cfg: &RunConfig, out: &Path) -> Result<()> {
    let (wb, _) = load_data(cfg)?;
    check_vocab(&cfg.model, &wb)?;
    let (model, report) = context_only_eval::<f32>(&wb, &cfg.model, &cfg.train)?;
    save_checkpoint(&out.join("checkpoint"), &model, None, None)?;
    let mut csv = String::from("word,predictable,mcr\n");
    for w in &report.per_word {
        csv.push_str(&format!("{},{},{:.2}\n", w.word, w.predictable, w.mcr));
    }
    write_text(&out.join("context_words.csv"), &csv)?;
    write_json(&out.join("context_report.json"), &report)?;
    println!(
        "overall {:.2}% (chance {:.2}%), recognised from context: {}",
        report.report.mcr,
        report.chance_mcr,
        report.recognised.join(" ")
    );
    Ok(())
}

fn chain_matches(got: &[Vec<usize>], want: &[&[usize]]) -> bool {
    got.len() == want.len() && got.iter().zip(want).all(|(g, w)| g.as_slice() == *w)
}

fn fmt_chain(chain: &[Vec<usize>]) -> String {
    chain
        .iter()
        .map(|s| s.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("×"))
        .collect::<Vec<_>>()
        .join(" → ")
}

/// Full-size visual frontend on one random 29-frame 112×112 clip; returns
/// the output shape and the wall time in seconds.
pub fn full_size_forward() -> Result<(Vec<usize>, f64)> {
    let mut store = ParamStore::<f32>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = build_resnet(&mut store, &ResNetConfig::default(), &mut rng)?;
    let clip = Tensor::<f32>::from_fn([1, 1, CLIP_FRAMES, 112, 112], |_| rng.random_range(-1.0..1.0));
    let start = Instant::now();
    let g = Graph::with_store(&store, Mode::Eval, ChaCha8Rng::seed_from_u64(0));
    let y = net.forward(&g, g.constant(clip))?;
    Ok((g.shape(y), start.elapsed().as_secs_f64()))
}

pub fn cmd_check(out: &Path, grad: bool, shapes: bool, seeds: u64) -> Result<()> {
    if !grad && !shapes {
        return Err(Error::Config("check needs --grad and/or --shapes".into()));
    }
    let mut failures = Vec::new();
    let mut report = serde_json::Map::new();
    if shapes {
        let visual = shape_chain_report(&ResNetConfig::default(), 112)?;
        let tconv = tconv_shape_chain(CLIP_FRAMES, 256, 500)?;
        println!("visual: {}", fmt_chain(&visual));
        println!("temporal conv: {}", fmt_chain(&tconv));
        if !chain_matches(&visual, &RESNET_CHAIN) {
            failures.push("visual chain".to_string());
        }
        if !chain_matches(&tconv, &TCONV_CHAIN) {
            failures.push("temporal conv chain".to_string());
        }
        let (shape, secs) = full_size_forward()?;
        println!("full-size forward: {shape:?} in {secs:.1} s");
        if shape != [1, CLIP_FRAMES, 256] {
            failures.push(format!("full-size forward shape {shape:?}"));
        }
        report.insert("visual_chain".into(), serde_json::json!(visual));
        report.insert("tconv_chain".into(), serde_json::json!(tconv));
        report.insert("forward_seconds".into(), serde_json::json!(secs));
    }
    if grad {
        let results = oracle_suite(0..seeds)?;
        for r in &results {
            let ok = r.max_relative_error < 1e-4;
            println!(
                "{:<16} {} seeds  max rel err {:.3e}  {}",
                r.name,
                r.seeds,
                r.max_relative_error,
                if ok { "ok" } else { "FAIL" }
            );
            if !ok {
                failures.push(format!("{} gradient (seed {})", r.name, r.worst_seed));
            }
        }
        report.insert("gradients".into(), serde_json::json!(results));
    }
    report.insert("failures".into(), serde_json::json!(failures));
    write_json(&out.join("check.json"), &report)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Numerical(format!("check failed: {}", failures.join(", "))))
    }
}
