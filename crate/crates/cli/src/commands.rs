use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use pointseq::checkpoint;
use pointseq::context::ContextKind;
use pointseq::data::io::{load_bins, load_conditions, load_xyz, save_bins, save_ply, save_xyz};
use pointseq::data::{
    dequantize, farthest_point_sampling, load_dataset, load_obj, load_off, normalize_unit_cube,
    quantize, sample_mesh_surface, write_manifest, ManifestEntry, QuantizedPointCloud,
    RawPointCloud, Split,
};
use pointseq::eval::{attention_map, dataset_bits_per_coordinate, export_attention_csv};
use pointseq::model::{Branch, Model};
use pointseq::sampler::{complete, generate, one_hot, SamplerSettings};
use pointseq::train::Trainer;

use crate::config::{keys_help, RunConfig};

/// Bad or missing command-line arguments; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Parser, Debug)]
#[command(name = "pointseq", version, about = "Autoregressive point-cloud generation")]
#[command(after_long_help = keys_help())]
pub struct Cli {
    /// Run configuration file (see the key list below).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed; overrides `seed` in the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Checkpoint to write (train) or read (other commands).
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Output directory (prepare), path stem (generate, complete) or file (attention).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Turn meshes (.obj, .off) or clouds (.xyz) into quantized training files.
    Prepare(PrepareArgs),
    /// Train a model, writing checkpoints and a loss log.
    Train(TrainArgs),
    /// Sample a new cloud; writes <out>.ply and <out>.xyz.
    Generate(GenerateArgs),
    /// Complete the beginning of a shape given as .xyz in [0, 1]³.
    Complete(CompleteArgs),
    /// Print bits per coordinate on a dataset split.
    Eval(EvalArgs),
    /// Export context-to-feature distances for one query point as CSV.
    Attention(AttentionArgs),
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Points kept per shape by farthest point sampling.
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    #[arg(long, default_value_t = 200)]
    pub bins: usize,
    #[arg(long, default_value = "train")]
    pub split: Split,
    /// Surface samples drawn from each mesh before farthest point sampling.
    #[arg(long, default_value_t = 10_000)]
    pub surface_samples: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset manifest; overrides `data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub loss_log: Option<PathBuf>,
    #[arg(long)]
    pub context: Option<ContextKind>,
    #[arg(long)]
    pub conditions: Option<PathBuf>,
    /// Continue from --checkpoint if it exists.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Args, Debug, Default)]
pub struct ConditionArgs {
    /// Condition CSV; row --condition-index is used.
    #[arg(long)]
    pub condition: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub condition_index: usize,
    /// One-hot condition: class index, with --classes.
    #[arg(long, requires = "classes")]
    pub class: Option<usize>,
    #[arg(long, requires = "class")]
    pub classes: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 1024)]
    pub points: usize,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[command(flatten)]
    pub condition: ConditionArgs,
}

#[derive(Args, Debug)]
pub struct CompleteArgs {
    /// Beginning of the shape, normalized to [0, 1]³.
    #[arg(long)]
    pub prefix: PathBuf,
    /// Total points; defaults to the prefix length.
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[command(flatten)]
    pub condition: ConditionArgs,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Dataset manifest; overrides `data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    pub split: Split,
    #[arg(long)]
    pub conditions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct AttentionArgs {
    /// Cloud as .bins (sequence order kept) or .xyz in [0, 1]³ (sorted).
    #[arg(long)]
    pub cloud: PathBuf,
    /// 1-based query point.
    #[arg(long)]
    pub query: usize,
    /// Branch whose features are compared: z, y or x.
    #[arg(long)]
    pub branch: Branch,
    #[command(flatten)]
    pub condition: ConditionArgs,
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.model.seed = seed;
        cfg.explicit.insert("seed".into());
    }
    let seed = cfg.model.seed;
    match cli.command {
        Command::Prepare(a) => prepare(&a, seed, cli.out.as_deref(), stdout),
        Command::Train(a) => train(&a, cfg, cli.checkpoint.as_deref(), stdout),
        Command::Generate(a) => {
            let model = load_model(cli.checkpoint.as_deref())?;
            let mut s = SamplerSettings::new(a.points, seed);
            s.temperature = a.temperature;
            s.condition = resolve_condition(&model, &a.condition)?;
            let q = generate(&model, &s)?;
            write_cloud(&q, cli.out.as_deref(), stdout)
        }
        Command::Complete(a) => {
            let model = load_model(cli.checkpoint.as_deref())?;
            let raw = load_xyz(&a.prefix)?;
            let prefix = quantize(&raw, model.config().bins)
                .with_context(|| format!("{}: prefix must lie in [0, 1]³", a.prefix.display()))?;
            let mut s = SamplerSettings::new(a.points.unwrap_or(prefix.len()), seed);
            s.temperature = a.temperature;
            s.condition = resolve_condition(&model, &a.condition)?;
            s.prefix = Some(prefix);
            let q = complete(&model, &s)?;
            write_cloud(&q, cli.out.as_deref(), stdout)
        }
        Command::Eval(a) => {
            let model = load_model(cli.checkpoint.as_deref())?;
            let data = a
                .data
                .or(cfg.data)
                .ok_or_else(|| usage("eval needs --data or `data` in the config"))?;
            let conditions = match a.conditions.or(cfg.conditions) {
                Some(p) => Some(load_conditions(&p)?),
                None => None,
            };
            let ds = load_dataset(&data, a.split, conditions)?;
            let bits = dataset_bits_per_coordinate(&model, &ds)?;
            writeln!(stdout, "{bits:.4}")?;
            Ok(())
        }
        Command::Attention(a) => {
            let model = load_model(cli.checkpoint.as_deref())?;
            let out = cli
                .out
                .ok_or_else(|| usage("attention needs --out FILE.csv"))?;
            let q = load_cloud(&a.cloud, model.config().bins)?;
            let h = resolve_condition(&model, &a.condition)?;
            let map = attention_map(&model, &q, a.query, a.branch, h.as_deref())?;
            export_attention_csv(&map, &out)?;
            writeln!(stdout, "wrote {}", out.display())?;
            Ok(())
        }
    }
}

fn load_model(path: Option<&Path>) -> Result<Model> {
    let path = path.ok_or_else(|| usage("this command needs --checkpoint"))?;
    Ok(checkpoint::load(path)?.model)
}

fn load_cloud(path: &Path, bins: usize) -> Result<QuantizedPointCloud> {
    let q = match path.extension().and_then(|e| e.to_str()) {
        Some("bins") => load_bins(path)?,
        _ => quantize(&load_xyz(path)?, bins)?,
    };
    if q.bins() != bins {
        bail!("{} uses {} bins, model uses {bins}", path.display(), q.bins());
    }
    Ok(q)
}

fn resolve_condition(model: &Model, args: &ConditionArgs) -> Result<Option<Vec<f64>>> {
    let d = model.config().condition_dim;
    let h = if let (Some(k), Some(classes)) = (args.class, args.classes) {
        Some(one_hot(k, classes)?)
    } else if let Some(p) = &args.condition {
        let all = load_conditions(p)?;
        let row = all.get(args.condition_index).ok_or_else(|| {
            usage(format!(
                "{} has {} vectors; --condition-index {} is out of range",
                p.display(),
                all.len(),
                args.condition_index
            ))
        })?;
        Some(row.clone())
    } else {
        None
    };
    match (d, h) {
        (0, None) => Ok(None),
        (0, Some(_)) => Err(usage("model is unconditional; drop the condition flags")),
        (d, None) => Err(usage(format!(
            "model is conditional (length {d}); pass --condition FILE or --class K --classes N"
        ))),
        (d, Some(h)) if h.len() != d => Err(usage(format!(
            "condition has length {}, model expects {d}",
            h.len()
        ))),
        (_, h) => Ok(h),
    }
}

fn write_cloud(q: &QuantizedPointCloud, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let stem = out.ok_or_else(|| usage("this command needs --out STEM"))?;
    let raw = dequantize(q);
    let ply = stem.with_extension("ply");
    let xyz = stem.with_extension("xyz");
    save_ply(&raw, &ply)?;
    save_xyz(&raw, &xyz)?;
    writeln!(stdout, "wrote {} and {}", ply.display(), xyz.display())?;
    Ok(())
}

fn prepare_one(path: &Path, a: &PrepareArgs, seed: u64) -> Result<QuantizedPointCloud> {
    let raw: RawPointCloud = match path.extension().and_then(|e| e.to_str()) {
        Some("xyz") => load_xyz(path)?,
        Some("obj") => sample_mesh_surface(&load_obj(path)?, a.surface_samples, seed)?,
        Some("off") => sample_mesh_surface(&load_off(path)?, a.surface_samples, seed)?,
        _ => bail!("unsupported input format (expected .xyz, .obj or .off)"),
    };
    if raw.len() < a.points {
        bail!("has {} points, fewer than the requested {}", raw.len(), a.points);
    }
    let unit = normalize_unit_cube(&raw)?;
    let (sampled, _) = farthest_point_sampling(&unit, a.points)?;
    Ok(quantize(&sampled, a.bins)?)
}

fn prepare(a: &PrepareArgs, seed: u64, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let dir = out.ok_or_else(|| usage("prepare needs --out DIR"))?;
    if a.points == 0 {
        return Err(usage("--points must be positive"));
    }
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut failures = 0;
    for path in &a.inputs {
        match prepare_one(path, a, seed) {
            Ok(q) => {
                let stem = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "cloud".into());
                let mut name = format!("{stem}.bins");
                let mut k = 1;
                while entries.iter().any(|e| e.file == Path::new(&name)) {
                    name = format!("{stem}_{k}.bins");
                    k += 1;
                }
                save_bins(&q, &dir.join(&name))?;
                entries.push(ManifestEntry {
                    file: PathBuf::from(&name),
                    source: path.display().to_string(),
                    split: a.split,
                    points: q.len(),
                    bins: q.bins(),
                });
            }
            Err(e) => {
                failures += 1;
                eprintln!("error: {}: {e:#}", path.display());
            }
        }
    }
    if entries.is_empty() {
        bail!("all {failures} inputs failed");
    }
    let manifest = dir.join("manifest.csv");
    write_manifest(&entries, &manifest)?;
    writeln!(
        stdout,
        "prepared {} of {} inputs into {}",
        entries.len(),
        a.inputs.len(),
        manifest.display()
    )?;
    Ok(())
}

fn train(a: &TrainArgs, mut cfg: RunConfig, ckpt: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    let here = Path::new("");
    if let Some(v) = &a.data {
        cfg.data = Some(v.clone());
    }
    if let Some(v) = &a.conditions {
        cfg.conditions = Some(v.clone());
    }
    if let Some(v) = &a.loss_log {
        cfg.loss_log = Some(v.clone());
    }
    for (key, value) in [
        ("steps", a.steps.map(|v| v.to_string())),
        ("lr", a.lr.map(|v| v.to_string())),
        ("batch_size", a.batch_size.map(|v| v.to_string())),
        ("checkpoint_every", a.checkpoint_every.map(|v| v.to_string())),
        ("context", a.context.map(|v| v.to_string())),
    ] {
        if let Some(v) = value {
            cfg.set(key, &v, here)
                .with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
    }
    let ckpt = ckpt.ok_or_else(|| usage("train needs --checkpoint PATH"))?;
    let data = cfg
        .data
        .clone()
        .ok_or_else(|| usage("train needs --data or `data` in the config"))?;
    let conditions = match &cfg.conditions {
        Some(p) => Some(load_conditions(p)?),
        None => None,
    };
    let ds = load_dataset(&data, cfg.split, conditions)?;
    let bins = ds
        .bins()
        .ok_or_else(|| anyhow!("{} has no {} clouds", data.display(), cfg.split))?;

    let mut trainer = if a.resume && ckpt.exists() {
        let t = checkpoint::load(ckpt)?;
        writeln!(stdout, "resuming {} at step {}", ckpt.display(), t.step)?;
        t
    } else {
        if cfg.is_explicit("bins") && cfg.model.bins != bins {
            bail!(
                "config sets bins = {} but {} uses {bins}",
                cfg.model.bins,
                data.display()
            );
        }
        cfg.model.bins = bins;
        if let Some(h) = ds.condition(0) {
            if cfg.model.condition_dim == 0 && !cfg.is_explicit("condition_dim") {
                cfg.model.condition_dim = h.len();
            }
        }
        let model = Model::new(cfg.model.clone())?;
        Trainer::new(model, cfg.lr, cfg.batch_size, cfg.model.seed)?
    };

    let log_path = cfg
        .loss_log
        .clone()
        .unwrap_or_else(|| ckpt.with_extension("loss.csv"));
    let fresh_log = trainer.step == 0 || !log_path.exists();
    let mut log = if fresh_log {
        let mut f = fs::File::create(&log_path)?;
        writeln!(f, "step,nats,bits_per_coord")?;
        f
    } else {
        OpenOptions::new().append(true).open(&log_path)?
    };

    let mut last = None;
    while trainer.step < cfg.steps {
        let nats = trainer.train_step(&ds)?;
        let bits = nats / std::f64::consts::LN_2;
        writeln!(log, "{},{},{}", trainer.step, nats, bits)?;
        if trainer.step % cfg.checkpoint_every == 0 {
            checkpoint::save(&trainer, ckpt)?;
        }
        last = Some(bits);
    }
    checkpoint::save(&trainer, ckpt)?;
    match last {
        Some(bits) => writeln!(
            stdout,
            "step {}: {bits:.4} bits/coord; checkpoint {}",
            trainer.step,
            ckpt.display()
        )?,
        None => writeln!(stdout, "step {}; checkpoint {}", trainer.step, ckpt.display())?,
    }
    Ok(())
}
