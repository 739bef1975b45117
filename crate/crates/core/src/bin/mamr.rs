use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde_json::{json, Map, Value};

use mamr::augment::{compose, max_exchanges, FlipMode};
use mamr::channel::AntennaSetting;
use mamr::complexity::{closed_form, complexity_csv, reference_check};
use mamr::datagen::format::{read_dataset, write_dataset};
use mamr::datagen::{generate, split_few_shot, DatasetSpec, SnrGrid};
use mamr::modem::{ModulationType, OffsetReference};
use mamr::nn::{load_checkpoint, save_checkpoint, train, Network, TrainConfig};
use mamr::pipeline::{evaluate, split_antennas, write_reports, Arch, FusionMode};

#[derive(Parser)]
#[command(name = "mamr", version, about = "Multi-antenna modulation recognition toolkit")]
struct Cli {
    /// JSON file whose keys mirror the long flag names; flags win over it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a labeled multi-antenna dataset.
    Gen(GenArgs),
    /// Expand a dataset with antenna exchange and I/Q flips.
    Augment(AugmentArgs),
    /// Train a classifier.
    Train(TrainArgs),
    /// Evaluate a model (default mode iq).
    Eval(EvalArgs),
    /// Evaluate a per-antenna model with decision fusion (default mode dv).
    Fuse(EvalArgs),
    /// Report inference cost per method.
    Complexity(ComplexityArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Comma-separated modulation names.
    #[arg(long)]
    mods: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    snr_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    snr_max: Option<f64>,
    #[arg(long)]
    snr_step: Option<f64>,
    /// Samples per (modulation, SNR) pair.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    antennas: Option<usize>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    oversampling: Option<usize>,
    /// fixed | random
    #[arg(long)]
    antenna_setting: Option<String>,
    /// Comma-separated fixed phases in radians.
    #[arg(long, allow_hyphen_values = true)]
    phases: Option<String>,
    #[arg(long)]
    freq_offset_max: Option<f64>,
    /// sample-rate | symbol-rate
    #[arg(long)]
    offset_reference: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long = "in")]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    exchanges: Option<usize>,
    /// none | i | q | iq | all
    #[arg(long)]
    flip: Option<String>,
    /// Keep this fraction of every (class, SNR) stratum before augmenting.
    #[arg(long)]
    sample_ratio: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// resnet56 | cnn-small
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated epochs after which the rate drops tenfold.
    #[arg(long)]
    decay_epochs: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    model_out: Option<PathBuf>,
    /// Train a 2-row model on every antenna's rails (for single/dv/wa).
    #[arg(long)]
    per_antenna: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Comma-separated: single, dv, wa, iq.
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    report_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ComplexityArgs {
    #[arg(long)]
    antennas: Option<usize>,
    /// The scalar F_l*F_w.
    #[arg(long)]
    feature_size: Option<u64>,
    /// Comma-separated methods, default all.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

/// Invalid input from the user; exits with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

/// Maps library validation failures to usage errors.
fn checked<T>(r: mamr::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| match e {
        mamr::Error::Config(_) | mamr::Error::Domain(_) => usage(e.to_string()),
        other => other.into(),
    })
}

struct Conf(Map<String, Value>);

impl Conf {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Conf(Map::new())) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(m)) => Ok(Conf(m)),
            Ok(_) => Err(usage("config file must hold a JSON object")),
            Err(e) => Err(usage(format!("config file: {e}"))),
        }
    }

    /// Flag, then config key (dashes or underscores), then nothing.
    fn get<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> anyhow::Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        let v = self.0.get(key).or_else(|| self.0.get(&key.replace('-', "_")));
        match v {
            None => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| usage(format!("config key {key}: {e}"))),
        }
    }

    fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> anyhow::Result<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn required<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> anyhow::Result<T> {
        self.get(flag, key)?.ok_or_else(|| usage(format!("--{key} is required")))
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| usage(format!("{what} {t:?}: {e}"))))
        .collect()
}

fn parse_one<T: std::str::FromStr>(s: &str, what: &str) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| usage(format!("{what}: {e}")))
}

fn read_input(path: &Path) -> anyhow::Result<mamr::datagen::Dataset> {
    read_dataset(path).with_context(|| format!("reading {}", path.display()))
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn write_manifest(path: &Path, command: &str, config: Value, inputs: &[&Path], outputs: &[&Path], start: Instant) -> anyhow::Result<()> {
    let m = json!({
        "command": command,
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "inputs": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "outputs": outputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "wall_time_s": start.elapsed().as_secs_f64(),
    });
    std::fs::write(path, serde_json::to_string_pretty(&m)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn cmd_gen(a: GenArgs, c: &Conf) -> anyhow::Result<()> {
    let start = Instant::now();
    let mut spec = DatasetSpec::default();
    if let Some(mods) = c.get(a.mods, "mods")? {
        spec.mods = parse_list::<ModulationType>(&mods, "modulation")?;
    }
    spec.snr = SnrGrid {
        min_db: c.or(a.snr_min, "snr-min", spec.snr.min_db)?,
        max_db: c.or(a.snr_max, "snr-max", spec.snr.max_db)?,
        step_db: c.or(a.snr_step, "snr-step", spec.snr.step_db)?,
    };
    spec.per_class_per_snr = c.or(a.per_class, "per-class", spec.per_class_per_snr)?;
    spec.channel.antennas = c.or(a.antennas, "antennas", spec.channel.antennas)?;
    spec.modem.length = c.or(a.length, "length", spec.modem.length)?;
    spec.modem.oversampling = c.or(a.oversampling, "oversampling", spec.modem.oversampling)?;
    if let Some(s) = c.get(a.antenna_setting, "antenna-setting")? {
        spec.channel.setting = parse_one::<AntennaSetting>(&s, "antenna setting")?;
    }
    if let Some(p) = c.get(a.phases, "phases")? {
        spec.channel.fixed_phases = Some(parse_list::<f64>(&p, "phase")?);
    }
    spec.freq_offset_max = c.or(a.freq_offset_max, "freq-offset-max", spec.freq_offset_max)?;
    if let Some(r) = c.get(a.offset_reference, "offset-reference")? {
        spec.modem.offset_reference = match r.as_str() {
            "sample-rate" | "sample_rate" => OffsetReference::SampleRate,
            "symbol-rate" | "symbol_rate" => OffsetReference::SymbolRate,
            _ => return Err(usage(format!("unknown offset reference {r:?}"))),
        };
    }
    spec.master_seed = c.or(a.seed, "seed", 0)?;
    let out: PathBuf = c.required(a.out, "out")?;
    checked(spec.validate())?;

    let d = checked(generate(&spec))?;
    write_dataset(&d, &out)?;
    eprintln!("wrote {} samples to {}", d.len(), out.display());
    write_manifest(&manifest_path(&out), "gen", serde_json::to_value(&spec)?, &[], &[&out], start)
}

fn cmd_augment(a: AugmentArgs, c: &Conf) -> anyhow::Result<()> {
    let start = Instant::now();
    let input: PathBuf = c.required(a.input, "in")?;
    let out: PathBuf = c.required(a.out, "out")?;
    let exchanges = c.or(a.exchanges, "exchanges", 0)?;
    let flip = parse_one::<FlipMode>(&c.or(a.flip, "flip", "none".to_string())?, "flip mode")?;
    let ratio: Option<f64> = c.get(a.sample_ratio, "sample-ratio")?;
    let seed = c.or(a.seed, "seed", 0)?;

    let d = read_input(&input)?;
    let max = max_exchanges(d.antennas);
    if exchanges > max {
        return Err(usage(format!("--exchanges {exchanges} exceeds max {max} for {} antennas", d.antennas)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = match ratio {
        Some(r) => checked(split_few_shot(&d, r, &mut rng))?,
        None => d,
    };
    let mut aug = checked(compose(&base, exchanges, flip, &mut rng))?;
    aug.spec = base.spec.clone();
    write_dataset(&aug, &out)?;
    eprintln!("{} -> {} samples", base.len(), aug.len());
    let config = json!({ "exchanges": exchanges, "flip": flip, "sample_ratio": ratio, "seed": seed });
    write_manifest(&manifest_path(&out), "augment", config, &[&input], &[&out], start)
}

fn cmd_train(a: TrainArgs, c: &Conf) -> anyhow::Result<()> {
    let start = Instant::now();
    let arch = parse_one::<Arch>(&c.or(a.arch, "arch", "resnet56".to_string())?, "architecture")?;
    let defaults = TrainConfig::default();
    let mut cfg = TrainConfig {
        epochs: c.or(a.epochs, "epochs", defaults.epochs)?,
        batch_size: c.or(a.batch, "batch", defaults.batch_size)?,
        lr: c.or(a.lr, "lr", defaults.lr)?,
        seed: c.or(a.seed, "seed", defaults.seed)?,
        ..defaults
    };
    if let Some(d) = c.get(a.decay_epochs, "decay-epochs")? {
        cfg.decay_epochs = parse_list(&d, "decay epoch")?;
    }
    checked(cfg.validate())?;
    let data: PathBuf = c.required(a.data, "data")?;
    let val: Option<PathBuf> = c.get(a.val, "val")?;
    let model_out: PathBuf = c.required(a.model_out, "model-out")?;
    let per_antenna = a.per_antenna || c.or(None, "per-antenna", false)?;

    let mut train_set = read_input(&data)?;
    let mut val_set = val.as_deref().map(read_input).transpose()?;
    if per_antenna {
        train_set = split_antennas(&train_set);
        val_set = val_set.map(|v| split_antennas(&v));
    }
    if let Some(v) = &val_set {
        if v.antennas != train_set.antennas || v.length != train_set.length {
            bail!("validation data shape differs from training data");
        }
    }
    let spec = checked(arch.build(train_set.antennas, train_set.length, ModulationType::COUNT))?;
    let mut net = Network::<f32>::new(&spec, cfg.seed)?;
    let history = train(&mut net, &train_set, val_set.as_ref(), &cfg)?;
    save_checkpoint(&net, &model_out)?;
    let mut hist_path = model_out.as_os_str().to_owned();
    hist_path.push(".history.csv");
    let hist_path = PathBuf::from(hist_path);
    history.write_csv(&hist_path)?;
    if let Some(r) = history.last() {
        eprintln!("epoch {}: loss {:.4}, train acc {:.4}", r.epoch, r.train_loss, r.train_acc);
    }
    let config = json!({ "arch": arch, "train": cfg, "per_antenna": per_antenna, "network": spec.name });
    let mut inputs = vec![data.as_path()];
    if let Some(v) = &val {
        inputs.push(v.as_path());
    }
    write_manifest(&manifest_path(&model_out), "train", config, &inputs, &[&model_out, &hist_path], start)
}

fn cmd_eval(a: EvalArgs, c: &Conf, command: &str, default_mode: &str) -> anyhow::Result<()> {
    let start = Instant::now();
    let modes = parse_list::<FusionMode>(&c.or(a.mode, "mode", default_mode.to_string())?, "mode")?;
    if modes.is_empty() {
        return Err(usage("no mode given"));
    }
    let model: PathBuf = c.required(a.model, "model")?;
    let data: PathBuf = c.required(a.data, "data")?;
    let dir: PathBuf = c.required(a.report_dir, "report-dir")?;
    let net: Network<f32> = load_checkpoint(&model).with_context(|| format!("loading {}", model.display()))?;
    let test = read_input(&data)?;
    let mut reports = Vec::new();
    for &mode in &modes {
        let rows = if mode.per_antenna() { 2 } else { 2 * test.antennas };
        if net.input_rows() != rows || net.input_len() != test.length {
            bail!(
                "mode {mode} needs a {rows}x{} model, {} is {}x{}",
                test.length,
                model.display(),
                net.input_rows(),
                net.input_len()
            );
        }
        let r = evaluate(mode, &net, &test)?;
        eprintln!("{mode}: accuracy {:.4} over {} samples", r.accuracy, r.samples);
        reports.push(r);
    }
    write_reports(&dir, &reports)?;
    let summary = json!({
        "accuracy": reports.iter().map(|r| (r.mode.to_string(), json!(r.accuracy))).collect::<Map<_, _>>(),
        "samples": test.len(),
        "data_seed": test.spec.as_ref().map(|s| s.master_seed),
        "model": model.display().to_string(),
        "network": net.spec().name,
        "fusion_rules": { "dv": "plurality of argmax votes, ties by summed posterior then lowest index", "wa": "posterior average weighted by per-antenna max probability" },
    });
    std::fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    let config = json!({ "modes": modes });
    write_manifest(&dir.join("manifest.json"), command, config, &[&model, &data], &[&dir], start)
}

fn cmd_complexity(a: ComplexityArgs, c: &Conf) -> anyhow::Result<()> {
    let start = Instant::now();
    let antennas = c.or(a.antennas, "antennas", 4)?;
    let f = c.or(a.feature_size, "feature-size", 1)?;
    let methods = match c.get(a.method, "method")? {
        Some(m) => parse_list::<FusionMode>(&m, "method")?,
        None => FusionMode::ALL.to_vec(),
    };
    let dir: PathBuf = c.or(a.out_dir, "out-dir", PathBuf::from("."))?;
    let reports = methods
        .iter()
        .map(|&m| checked(closed_form(m, antennas, f)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    std::fs::create_dir_all(&dir)?;
    let csv = dir.join("complexity.csv");
    std::fs::write(&csv, complexity_csv(&reports))?;
    let text = reference_check()?.to_text();
    let table = dir.join("reference_check.txt");
    std::fs::write(&table, &text)?;
    print!("{text}");
    let config = json!({ "antennas": antennas, "feature_size": f, "methods": methods });
    write_manifest(&dir.join("manifest.json"), "complexity", config, &[], &[&csv, &table], start)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let conf = Conf::load(cli.config.as_deref())?;
    match cli.command {
        Command::Gen(a) => cmd_gen(a, &conf),
        Command::Augment(a) => cmd_augment(a, &conf),
        Command::Train(a) => cmd_train(a, &conf),
        Command::Eval(a) => cmd_eval(a, &conf, "eval", "iq"),
        Command::Fuse(a) => cmd_eval(a, &conf, "fuse", "dv"),
        Command::Complexity(a) => cmd_complexity(a, &conf),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = match std::env::var("MAMR_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) => n,
            Err(_) => {
                eprintln!("error: MAMR_THREADS must be a non-negative integer, got {v:?}");
                return ExitCode::from(2);
            }
        },
        Err(_) => 0,
    };
    match mamr::with_threads(threads, || run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
