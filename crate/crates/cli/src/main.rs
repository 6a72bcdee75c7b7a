mod config;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use osa_core::cohort::{undersample, Cohort};
use osa_core::edf::EdfFile;
use osa_core::metrics::{confusion, report};
use osa_core::nn::{read_checkpoint, write_checkpoint};
use osa_core::pipeline::{preprocess_cohort, read_sleep_windows, read_tensor, write_tensor, ChannelGroup, GroupKind};
use osa_core::synth::{generate_cohort, SLEEP_WINDOWS_FILE};
use osa_core::training::{evaluate, stratified_split, train, SplitPlan};
use serde::Serialize;

use config::{resolved_beside, Arch, EvaluateSection, PreprocessSection, RunConfig, SplitSection, TrainSection, RESOLVED_CONFIG};

#[derive(Parser)]
#[command(name = "osa", version, about = "Sleep apnea severity classification from PSG recordings")]
struct Cli {
    /// TOML run configuration; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the header and signal table of an EDF file.
    EdfInfo { path: PathBuf },
    /// Generate a synthetic cohort: EDF files, manifest and sleep windows.
    Synth(SynthArgs),
    /// Undersample to a balanced cohort and split subjects into train/val/test.
    Split(SplitArgs),
    /// Segment one channel group into a tensor file.
    Preprocess(PreprocessArgs),
    /// Train the CNN and write a checkpoint and learning curve.
    Train(TrainArgs),
    /// Score a checkpoint on a tensor file.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    subjects_per_class: Option<usize>,
    #[arg(long)]
    duration_secs: Option<f64>,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    group: Option<GroupKind>,
    #[arg(long)]
    seq_seconds: Option<f64>,
    /// Sleep-window CSV (`subject_id,sleep_onset_sec,sleep_offset_sec`).
    #[arg(long)]
    annotations: Option<PathBuf>,
    /// Split JSON from `osa split`; use with `--set`.
    #[arg(long)]
    split: Option<PathBuf>,
    /// One of train, val, test.
    #[arg(long)]
    set: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    dropout_keep: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Output directory for the checkpoint, curve and metadata.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    tensor: Option<PathBuf>,
    /// Output directory for report.json and report.txt.
    #[arg(long)]
    out: PathBuf,
}

fn set<T>(target: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *target = v;
    }
}

fn require(path: &Path, flag: &str) -> Result<()> {
    if path.as_os_str().is_empty() {
        bail!("{flag} is required (flag or config file)");
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn edf_info(path: &Path) -> Result<()> {
    let edf = EdfFile::open(path).with_context(|| format!("reading {}", path.display()))?;
    let h = &edf.header;
    println!("file          {}", path.display());
    println!("patient       {}", h.patient_id);
    println!("recording     {}", h.recording_id);
    println!("start         {}", h.start);
    println!(
        "records       {}{} x {} s = {} s",
        h.num_records,
        if h.records_declared_unknown { " (declared -1)" } else { "" },
        h.record_duration,
        h.duration_secs()
    );
    println!("signals       {}", h.num_signals);
    if !h.non_ascii_fields.is_empty() {
        println!("non-ASCII     {}", h.non_ascii_fields.join(", "));
    }
    println!();
    println!(
        "{:>3}  {:<16} {:>9} {:>8} {:>10} {:>12} {:>12}  {}",
        "#", "label", "rate_hz", "per_rec", "samples", "phys_min", "phys_max", "unit"
    );
    for (i, s) in edf.signals.iter().enumerate() {
        println!(
            "{:>3}  {:<16} {:>9} {:>8} {:>10} {:>12} {:>12}  {}",
            i,
            s.label,
            s.sampling_rate(h.record_duration),
            s.samples_per_record,
            s.samples_per_record * h.num_records,
            s.physical_min,
            s.physical_max,
            s.physical_dimension
        );
    }
    Ok(())
}

fn synth(mut cfg: RunConfig, args: SynthArgs) -> Result<()> {
    let mut spec = cfg.synth.take().unwrap_or_default();
    set(&mut spec.seed, args.seed);
    set(&mut spec.subjects_per_class, args.subjects_per_class);
    set(&mut spec.duration_secs, args.duration_secs);
    let out = generate_cohort(&spec, &args.out)?;
    println!(
        "wrote {} subjects to {} ({} per class)",
        out.cohort.len(),
        args.out.display(),
        spec.subjects_per_class
    );
    RunConfig {
        synth: Some(spec),
        ..Default::default()
    }
    .write(&args.out.join(RESOLVED_CONFIG))
}

fn split(mut cfg: RunConfig, args: SplitArgs) -> Result<()> {
    let mut s: SplitSection = cfg.split.take().unwrap_or_default();
    set(&mut s.manifest, args.manifest);
    set(&mut s.seed, args.seed);
    set(&mut s.per_class, args.per_class);
    require(&s.manifest, "--manifest")?;
    let cohort = Cohort::from_manifest(&s.manifest)?;
    let balanced = undersample(&cohort, s.per_class, s.seed)?;
    let plan = stratified_split(&balanced, s.seed)?;
    write_json(&args.out, &plan)?;
    println!(
        "{} subjects -> test {}, train {}, val {}",
        cohort.len(),
        plan.test_subjects.len(),
        plan.train_subjects.len(),
        plan.val_subjects.len()
    );
    RunConfig {
        split: Some(s),
        ..Default::default()
    }
    .write(&resolved_beside(&args.out))
}

#[derive(Serialize)]
struct Provenance<'a> {
    preprocess: &'a PreprocessSection,
    annotations_used: Option<&'a Path>,
    shape: [usize; 3],
    subjects: Vec<osa_core::pipeline::SubjectReport>,
}

fn preprocess(mut cfg: RunConfig, args: PreprocessArgs) -> Result<()> {
    let mut p: PreprocessSection = cfg.preprocess.take().unwrap_or_default();
    set(&mut p.manifest, args.manifest);
    set(&mut p.group, args.group);
    set(&mut p.seq_seconds, args.seq_seconds);
    if args.annotations.is_some() {
        p.annotations = args.annotations;
    }
    if args.split.is_some() {
        p.split = args.split;
    }
    if args.set.is_some() {
        p.set = args.set;
    }
    require(&p.manifest, "--manifest")?;

    let mut cohort = Cohort::from_manifest(&p.manifest)?;
    match (&p.split, &p.set) {
        (Some(split), Some(name)) => {
            let text = fs::read_to_string(split).with_context(|| format!("reading {}", split.display()))?;
            let plan: SplitPlan = serde_json::from_str(&text).with_context(|| format!("parsing {}", split.display()))?;
            let ids = plan
                .set(name)
                .with_context(|| format!("unknown set {name:?}; expected train, val or test"))?;
            cohort = cohort.restrict(ids.iter().map(String::as_str))?;
        }
        (None, None) => {}
        _ => bail!("--split and --set must be given together"),
    }

    let sidecar = p.manifest.parent().unwrap_or(Path::new(".")).join(SLEEP_WINDOWS_FILE);
    let annotations = match &p.annotations {
        Some(a) => Some(a.clone()),
        None if sidecar.exists() => Some(sidecar),
        None => None,
    };
    let windows = match &annotations {
        Some(a) => read_sleep_windows(a)?,
        None => HashMap::new(),
    };
    let group = ChannelGroup::standard(p.group);
    let (tensor, reports) = preprocess_cohort(&cohort, &group, &windows, p.seq_seconds)?;
    let provenance = Provenance {
        preprocess: &p,
        annotations_used: annotations.as_deref(),
        shape: [tensor.len(), tensor.seq_len(), tensor.channels()],
        subjects: reports,
    };
    write_tensor(&args.out, &tensor, &serde_json::to_string(&provenance)?)?;
    println!(
        "{} segments x {} samples x {} channels from {} subjects -> {}",
        tensor.len(),
        tensor.seq_len(),
        tensor.channels(),
        cohort.len(),
        args.out.display()
    );
    RunConfig {
        preprocess: Some(p),
        ..Default::default()
    }
    .write(&resolved_beside(&args.out))
}

#[derive(Serialize)]
struct TrainMeta {
    train_segments: usize,
    val_segments: usize,
    /// Training rows scored for the curve's train columns.
    train_curve_rows: usize,
    parameters: usize,
    final_point: Option<osa_core::training::CurvePoint>,
}

fn train_cmd(mut cfg: RunConfig, args: TrainArgs) -> Result<()> {
    let mut t: TrainSection = cfg.train.take().unwrap_or_default();
    set(&mut t.train, args.train);
    set(&mut t.val, args.val);
    set(&mut t.arch, args.arch);
    if args.hidden.is_some() {
        t.hidden = args.hidden;
    }
    set(&mut t.iterations, args.iterations);
    set(&mut t.batch_size, args.batch_size);
    set(&mut t.learning_rate, args.lr);
    set(&mut t.dropout_keep, args.dropout_keep);
    set(&mut t.seed, args.seed);
    set(&mut t.eval_every, args.eval_every);
    require(&t.train, "--train")?;
    require(&t.val, "--val")?;

    let (train_set, _) = read_tensor(&t.train).with_context(|| format!("reading {}", t.train.display()))?;
    let (val_set, _) = read_tensor(&t.val).with_context(|| format!("reading {}", t.val.display()))?;
    let model = t.arch_spec().build(train_set.seq_len(), train_set.channels(), t.seed)?;
    let parameters = model.param_count();
    let outcome = train(model, &train_set, &val_set, &t.train_config())?;

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_checkpoint(args.out.join("model.ckpt"), &outcome.model, Some(&outcome.optimizer))?;
    outcome.curve.write_csv(args.out.join("curve.csv"))?;
    write_json(
        &args.out.join("train-meta.json"),
        &TrainMeta {
            train_segments: train_set.len(),
            val_segments: val_set.len(),
            train_curve_rows: outcome.train_eval_rows,
            parameters,
            final_point: outcome.curve.last().copied(),
        },
    )?;
    if let Some(last) = outcome.curve.last() {
        println!(
            "iteration {}: train acc {:.4} loss {:.4}, val acc {:.4} loss {:.4}",
            last.iteration, last.train_acc, last.train_loss, last.val_acc, last.val_loss
        );
    }
    RunConfig {
        train: Some(t),
        ..Default::default()
    }
    .write(&args.out.join(RESOLVED_CONFIG))
}

fn evaluate_cmd(mut cfg: RunConfig, args: EvaluateArgs) -> Result<()> {
    let mut e: EvaluateSection = cfg.evaluate.take().unwrap_or_default();
    set(&mut e.checkpoint, args.checkpoint);
    set(&mut e.tensor, args.tensor);
    require(&e.checkpoint, "--checkpoint")?;
    require(&e.tensor, "--tensor")?;

    let (model, _) = read_checkpoint(&e.checkpoint).with_context(|| format!("reading {}", e.checkpoint.display()))?;
    let (data, _) = read_tensor(&e.tensor).with_context(|| format!("reading {}", e.tensor.display()))?;
    let scored = evaluate(&model, &data)?;
    let labels: Vec<usize> = data.labels().iter().map(|l| l.index()).collect();
    let r = report(&confusion(&scored.predictions, &labels)?)?.with_loss(scored.loss);

    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    write_json(&args.out.join("report.json"), &r)?;
    let text = format!("{}\n{}", r.to_table(), r.confusion_table());
    fs::write(args.out.join("report.txt"), &text)?;
    print!("{text}");
    RunConfig {
        evaluate: Some(e),
        ..Default::default()
    }
    .write(&args.out.join(RESOLVED_CONFIG))
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::EdfInfo { path } => edf_info(&path),
        Command::Synth(a) => synth(cfg, a),
        Command::Split(a) => split(cfg, a),
        Command::Preprocess(a) => preprocess(cfg, a),
        Command::Train(a) => train_cmd(cfg, a),
        Command::Evaluate(a) => evaluate_cmd(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
