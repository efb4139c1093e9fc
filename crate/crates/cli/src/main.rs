//! Command-line front end: train victims, run single attacks, drive
//! campaigns and confidence sweeps, and re-emit reports.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data/model load error,
//! 3 partial campaign (some per-sample numeric failures).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use etdf::attack::{AttackConfig, AttackKind};
use etdf::campaign::{
    emit_report, report_from_json, run_campaign_with, sample_targets, sweep_confidence,
    sweep_trend_csv, CampaignConfig, CampaignReport, DatasetSource, ReportFormat, TargetPolicy,
    TimingMode,
};
use etdf::data::Dataset;
use etdf::metrics::{aggregate, MeanPopulation, RowKey};
use etdf::nn::Model;
use etdf::persist::{load_model, save_model};
use etdf::zoo::{build_model, distill_train, evaluate, preset, train, Optimizer, TrainConfig};
use etdf::{Error, Result};

#[derive(Parser)]
#[command(name = "etdf", version, about = "Adversarial perturbation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a preset victim and save its weights.
    Train(TrainArgs),
    /// Train a victim with defensive distillation and save the student.
    Distill(DistillArgs),
    /// Attack a single image and print the outcome as JSON.
    Attack(AttackArgs),
    /// Attack a seeded sample of images and emit a report.
    Campaign(CampaignArgs),
    /// Run the same campaign at several confidence thresholds.
    Sweep(SweepArgs),
    /// Re-emit a saved JSON report, verifying its summary.
    Report(ReportArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Dataset kind: mnist, cifar10, or blobs (synthetic smoke data).
    #[arg(long)]
    dataset: String,
    /// Image file: IDX images for mnist, comma-separated binary batches
    /// for cifar10. Unused for blobs.
    #[arg(long)]
    images: Option<String>,
    /// IDX label file (mnist only).
    #[arg(long)]
    labels: Option<PathBuf>,
}

impl DataArgs {
    fn source(&self, seed: u64) -> Result<DatasetSource> {
        match self.dataset.as_str() {
            "mnist" => Ok(DatasetSource::MnistIdx {
                images: require(&self.images, "--images")?.into(),
                labels: self
                    .labels
                    .clone()
                    .ok_or_else(|| Error::Config("mnist needs --labels".into()))?,
            }),
            "cifar10" => Ok(DatasetSource::Cifar10Bin {
                batches: require(&self.images, "--images")?
                    .split(',')
                    .map(PathBuf::from)
                    .collect(),
            }),
            "blobs" => Ok(DatasetSource::Blobs {
                seed,
                classes: 10,
                dim: 20,
                per_class: 100,
                separation: 10.0,
            }),
            other => Err(Error::Config(format!(
                "unknown dataset {other:?}; expected mnist, cifar10, or blobs"
            ))),
        }
    }

    fn load(&self, seed: u64) -> Result<Dataset<f32>> {
        self.source(seed)?.load()
    }
}

fn require(value: &Option<String>, flag: &str) -> Result<String> {
    value
        .clone()
        .ok_or_else(|| Error::Config(format!("{flag} is required for this dataset")))
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Victim architecture preset.
    #[arg(long, default_value = "lenet5")]
    preset: String,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    /// adam or sgd-momentum.
    #[arg(long, default_value = "adam")]
    optimizer: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Held-out IDX images for the final accuracy stamp.
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Output weight file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DistillArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Distillation temperature T.
    #[arg(long, default_value_t = 20.0)]
    temperature: f64,
}

#[derive(Args)]
struct AttackFlags {
    /// deepfool, targeted-basic, targeted-enhanced, or targeted-recursive.
    #[arg(long, default_value = "targeted-enhanced")]
    attack: String,
    /// Fixed target class; omitted means a random target != true class.
    #[arg(long)]
    target: Option<usize>,
    #[arg(long, default_value_t = 0.95)]
    min_confidence: f64,
    #[arg(long, default_value_t = 0.02)]
    overshoot: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    /// Total-perturbation budget for the basic targeted attack.
    #[arg(long)]
    max_perturbation: Option<f64>,
    #[arg(long, default_value_t = 5)]
    recursion_depth: usize,
    /// Clamp every iterate into [0, 1].
    #[arg(long, default_value_t = false)]
    clip_pixels: bool,
}

impl AttackFlags {
    fn kind(&self) -> Result<AttackKind> {
        self.attack.parse()
    }

    fn config(&self) -> AttackConfig {
        AttackConfig {
            overshoot: self.overshoot,
            max_iter: self.max_iter,
            min_confidence: self.min_confidence,
            max_total_perturbation: self.max_perturbation,
            recursion_depth: self.recursion_depth,
            clip_pixels: self.clip_pixels,
            ..AttackConfig::default()
        }
    }
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Dataset index of the image to attack.
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[command(flatten)]
    flags: AttackFlags,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output directory for optional tensor dumps.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = false)]
    emit_images: bool,
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    flags: AttackFlags,
    /// Number of seeded test images to attack.
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Report directory.
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated report formats: csv, json.
    #[arg(long, default_value = "csv,json")]
    format: String,
    #[arg(long, default_value_t = false)]
    emit_images: bool,
    /// measured or zeroed; zeroed makes report bytes reproducible.
    #[arg(long, default_value = "measured")]
    timing: String,
    /// Worker threads for per-sample attacks.
    #[arg(long)]
    threads: Option<usize>,
    /// Average metrics over successful samples only.
    #[arg(long, default_value_t = false)]
    successes_only: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    campaign: CampaignArgs,
    /// Ascending thresholds; `none` (gate disabled) may lead the list.
    #[arg(long, default_value = "none,0.5,0.7,0.9")]
    thresholds: String,
}

#[derive(Args)]
struct ReportArgs {
    /// Saved report.json to re-emit.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::ClassIndex { .. } | Error::Spec(_) => 1,
        Error::Io(_)
        | Error::Format { .. }
        | Error::PrecisionMismatch { .. }
        | Error::Data(_)
        | Error::Json(_) => 2,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => cmd_train(args, None),
        Command::Distill(args) => cmd_train(args.train, Some(args.temperature)),
        Command::Attack(args) => cmd_attack(args),
        Command::Campaign(args) => cmd_campaign(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let optimizer = match args.optimizer.as_str() {
        "adam" => Optimizer::Adam,
        "sgd-momentum" => Optimizer::SgdMomentum,
        other => {
            return Err(Error::Config(format!(
                "unknown optimizer {other:?}; expected adam or sgd-momentum"
            )))
        }
    };
    Ok(TrainConfig {
        learning_rate: args.learning_rate,
        batch_size: args.batch_size,
        epochs: args.epochs,
        seed: args.seed,
        optimizer,
        distill_temperature: None,
    })
}

fn cmd_train(args: TrainArgs, distill_temperature: Option<f64>) -> Result<ExitCode> {
    let dataset = args.data.load(args.seed)?;
    let spec = preset(&args.preset)?;
    let cfg = train_config(&args)?;

    let mut model = match distill_temperature {
        None => {
            let mut model = build_model::<f32>(&spec, args.seed)?;
            let history = train(&mut model, &dataset, &cfg)?;
            for (i, epoch) in history.iter().enumerate() {
                println!(
                    "epoch {i}: loss {:.6} accuracy {:.4}",
                    epoch.loss, epoch.accuracy
                );
            }
            model
        }
        Some(t) => {
            println!("distilling at temperature {t}");
            distill_train::<f32>(&spec, &spec, &dataset, t, &cfg)?
        }
    };

    if let (Some(images), Some(labels)) = (&args.test_images, &args.test_labels) {
        let test = etdf::data::load_mnist_idx::<f32>(images, labels)?;
        let accuracy = evaluate(&model, &test)?;
        model.meta_mut().final_accuracy = Some(accuracy);
        println!("test accuracy {accuracy:.4}");
    }
    save_model(&model, &args.out)?;
    println!("saved {}", args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_attack(args: AttackArgs) -> Result<ExitCode> {
    let model: Model<f32> = load_model(&args.model)?;
    let dataset = args.data.load(args.seed)?;
    if args.index >= dataset.len() {
        return Err(Error::Config(format!(
            "--index {} out of range for {} samples",
            args.index,
            dataset.len()
        )));
    }
    let kind = args.flags.kind()?;
    let target = if kind.is_targeted() {
        Some(match args.flags.target {
            Some(t) => t,
            None => {
                sample_targets(&[dataset.label(args.index)], dataset.class_count(), args.seed)?[0]
            }
        })
    } else {
        None
    };

    let image = dataset.image(args.index);
    let outcome = etdf::attack::run_attack(&model, &image, kind, target, &args.flags.config())?;
    let result = &outcome.result;
    let record = serde_json::json!({
        "sample_index": args.index,
        "attack": kind.name(),
        "original_label": result.original_label,
        "target_label": target,
        "final_label": result.final_label,
        "final_confidence": result.final_confidence,
        "success": result.success,
        "iterations": result.iterations,
        "gradient_evals": result.gradient_evals,
        "perturbation_pct": etdf::metrics::perturbation_pct(&image, &result.perturbed_image)?,
        "ssim": etdf::metrics::ssim(&image, &result.perturbed_image)?.value,
        "elapsed_s": result.elapsed.as_secs_f64(),
        "error": outcome.abort.map(|a| a.to_string()),
    });
    println!("{}", serde_json::to_string_pretty(&record)?);

    if args.emit_images {
        let out = args
            .out
            .clone()
            .ok_or_else(|| Error::Config("--emit-images needs --out".into()))?;
        let mut cfg = CampaignConfig::new(&args.model, args.data.source(args.seed)?, kind);
        cfg.attack_cfg = args.flags.config();
        cfg.sample_count = 1;
        cfg.emit_images = true;
        cfg.output_dir = Some(out);
        if let Some(class) = target {
            cfg.target_policy = TargetPolicy::Fixed { class };
        }
        // Reuse the campaign emitter so dumps share the blob framing.
        run_campaign_with(&cfg, &model, &dataset.subset(&[args.index])?, "single")?;
    }
    Ok(if outcome.abort.is_some() {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    })
}

fn build_campaign_config(args: &CampaignArgs) -> Result<CampaignConfig> {
    let kind = args.flags.kind()?;
    let mut cfg = CampaignConfig::new(&args.model, args.data.source(args.seed)?, kind);
    cfg.attack_cfg = args.flags.config();
    cfg.sample_count = args.samples;
    cfg.seed = args.seed;
    cfg.output_dir = Some(args.out.clone());
    cfg.emit_images = args.emit_images;
    cfg.timing = match args.timing.as_str() {
        "measured" => TimingMode::Measured,
        "zeroed" => TimingMode::Zeroed,
        other => {
            return Err(Error::Config(format!(
                "unknown timing mode {other:?}; expected measured or zeroed"
            )))
        }
    };
    cfg.parallelism = args.threads;
    cfg.mean_population = if args.successes_only {
        MeanPopulation::SuccessesOnly
    } else {
        MeanPopulation::AllSamples
    };
    cfg.target_policy = match args.flags.target {
        Some(class) => TargetPolicy::Fixed { class },
        None => TargetPolicy::RandomExcludingTrue,
    };
    Ok(cfg)
}

fn parse_formats(text: &str) -> Result<Vec<ReportFormat>> {
    text.split(',').map(|f| f.trim().parse()).collect()
}

fn emit_all(report: &CampaignReport, formats: &[ReportFormat], out: &PathBuf) -> Result<()> {
    for format in formats {
        for path in emit_report(report, *format, out)? {
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn partial_exit(reports: &[&CampaignReport]) -> ExitCode {
    let partial = reports
        .iter()
        .any(|r| r.records.iter().any(|rec| rec.error.is_some()));
    if partial {
        ExitCode::from(3)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_campaign(args: CampaignArgs) -> Result<ExitCode> {
    let cfg = build_campaign_config(&args)?;
    let model: Model<f32> = load_model(&cfg.model_path)?;
    let dataset = cfg.dataset.load::<f32>()?;
    let name = model_name(&cfg.model_path);
    let report = run_campaign_with(&cfg, &model, &dataset, &name)?;
    emit_all(&report, &parse_formats(&args.format)?, &args.out)?;
    println!(
        "{}: success {:.3} confidence {:.3} perturbation {:.3}% ssim {:.3} iterations {:.1}",
        report.summary.attack_name,
        report.summary.success_rate,
        report.summary.confidence_mean,
        report.summary.perturbation_pct_mean,
        report.summary.ssim_mean,
        report.summary.iterations_mean,
    );
    Ok(partial_exit(&[&report]))
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let thresholds: Vec<Option<f64>> = args
        .thresholds
        .split(',')
        .map(|t| {
            let t = t.trim();
            if t == "none" {
                Ok(None)
            } else {
                t.parse::<f64>()
                    .map(Some)
                    .map_err(|_| Error::Config(format!("bad threshold {t:?}")))
            }
        })
        .collect::<Result<_>>()?;

    let cfg = build_campaign_config(&args.campaign)?;
    let model: Model<f32> = load_model(&cfg.model_path)?;
    let dataset = cfg.dataset.load::<f32>()?;
    let name = model_name(&cfg.model_path);
    let reports = sweep_confidence(&cfg, &thresholds, &model, &dataset, &name)?;

    let formats = parse_formats(&args.campaign.format)?;
    for (threshold, report) in thresholds.iter().zip(&reports) {
        let label = match threshold {
            None => "none".to_string(),
            Some(v) => format!("{v}"),
        };
        emit_all(
            report,
            &formats,
            &args.campaign.out.join(format!("threshold-{label}")),
        )?;
    }
    let trend_path = args.campaign.out.join("sweep_trend.csv");
    std::fs::write(&trend_path, sweep_trend_csv(&reports))?;
    println!("wrote {}", trend_path.display());
    Ok(partial_exit(&reports.iter().collect::<Vec<_>>()))
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let bytes = std::fs::read(&args.input)?;
    let report = report_from_json(&bytes)?;
    // The summary must be reproducible from the per-sample records.
    let key = RowKey {
        model_name: report.summary.model_name.clone(),
        dataset_name: report.summary.dataset_name.clone(),
        attack_name: report.summary.attack_name.clone(),
        c_min: report.summary.c_min,
    };
    let recomputed = aggregate(&report.records, &key, report.config.mean_population)?;
    let drift = (recomputed.confidence_mean - report.summary.confidence_mean).abs()
        + (recomputed.perturbation_pct_mean - report.summary.perturbation_pct_mean).abs()
        + (recomputed.success_rate - report.summary.success_rate).abs();
    if drift > 1e-9 {
        return Err(Error::Data(format!(
            "summary does not match its records (drift {drift:e})"
        )));
    }
    emit_all(&report, &parse_formats(&args.format)?, &args.out)?;
    Ok(ExitCode::SUCCESS)
}

fn model_name(path: &std::path::Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into())
}
