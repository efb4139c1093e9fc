//! Campaign orchestration: seeded sample selection, random target drawing,
//! per-image attack runs, aggregation, confidence-threshold sweeps, and
//! report emission.
//!
//! Reports are byte-identical for a fixed `(config, seed)` regardless of the
//! parallelism degree: every sample draws from its own counter-based RNG
//! substream and results assemble in sample order. Wall-clock timings are
//! the one nondeterministic ingredient, so configs choose between measured
//! and zeroed timing.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{run_attack, AttackConfig, AttackKind};
use crate::data::{load_cifar10_bin, load_mnist_idx, synthetic_blobs, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{
    aggregate, perturbation_pct, ssim, MeanPopulation, MetricRow, RowKey, SampleRecord,
};
use crate::nn::Model;
use crate::persist::{load_model, write_tensor_framed};
use crate::rng::{indexed_stream, salt, stream};
use crate::scalar::{lit, Scalar};
use crate::tensor::Tensor;

/// Where a campaign's images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetSource {
    MnistIdx {
        images: PathBuf,
        labels: PathBuf,
    },
    Cifar10Bin {
        batches: Vec<PathBuf>,
    },
    /// Synthetic Gaussian blobs; hermetic substrate for smoke tests.
    Blobs {
        seed: u64,
        classes: usize,
        dim: usize,
        per_class: usize,
        separation: f64,
    },
}

impl DatasetSource {
    pub fn load<T: Scalar>(&self) -> Result<Dataset<T>> {
        match self {
            DatasetSource::MnistIdx { images, labels } => load_mnist_idx(images, labels),
            DatasetSource::Cifar10Bin { batches } => load_cifar10_bin(batches),
            DatasetSource::Blobs {
                seed,
                classes,
                dim,
                per_class,
                separation,
            } => Ok(synthetic_blobs(*seed, *classes, *dim, *per_class, *separation).0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum TargetPolicy {
    /// Uniform draw over the classes other than the sample's true label.
    RandomExcludingTrue,
    Fixed { class: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimingMode {
    /// Record wall-clock seconds per attack.
    Measured,
    /// Report zero seconds everywhere, making report bytes reproducible.
    Zeroed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignConfig {
    pub model_path: PathBuf,
    pub dataset: DatasetSource,
    pub attack: AttackKind,
    pub attack_cfg: AttackConfig,
    pub sample_count: usize,
    pub target_policy: TargetPolicy,
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub emit_images: bool,
    pub timing: TimingMode,
    /// Worker threads for per-sample attacks; `None` uses the default pool.
    /// An execution detail, not an experiment parameter: it is excluded from
    /// the serialized config echo so reports stay byte-identical across
    /// parallelism degrees.
    #[serde(skip)]
    pub parallelism: Option<usize>,
    pub mean_population: MeanPopulation,
}

impl CampaignConfig {
    pub fn new(model_path: impl Into<PathBuf>, dataset: DatasetSource, attack: AttackKind) -> Self {
        CampaignConfig {
            model_path: model_path.into(),
            dataset,
            attack,
            attack_cfg: AttackConfig::default(),
            sample_count: 100,
            target_policy: TargetPolicy::RandomExcludingTrue,
            seed: 42,
            output_dir: None,
            emit_images: false,
            timing: TimingMode::Measured,
            parallelism: None,
            mean_population: MeanPopulation::AllSamples,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CampaignReport {
    pub config: CampaignConfig,
    pub model_name: String,
    pub records: Vec<SampleRecord>,
    pub summary: MetricRow,
    pub toolkit_version: String,
    pub timestamp: String,
    pub hardware: String,
}

/// Draw one target per label, uniformly over the `C - 1` classes different
/// from it. Each position uses its own `(seed, index)`-keyed substream, so
/// the array does not depend on evaluation order.
pub fn sample_targets(labels: &[usize], class_count: usize, seed: u64) -> Result<Vec<usize>> {
    if class_count < 2 {
        return Err(Error::Config(
            "target sampling needs at least two classes".into(),
        ));
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = indexed_stream(seed, salt::TARGETS, i as u64);
            let draw = rng.gen_range(0..class_count - 1);
            if draw >= label {
                draw + 1
            } else {
                draw
            }
        })
        .collect())
}

/// Run the configured attack over a seeded sample of the dataset, loading
/// the model and images from the configured paths.
pub fn run_campaign<T: Scalar>(cfg: &CampaignConfig) -> Result<CampaignReport> {
    let model: Model<T> = load_model(&cfg.model_path)?;
    let dataset: Dataset<T> = cfg.dataset.load()?;
    let model_name = cfg
        .model_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    run_campaign_with(cfg, &model, &dataset, &model_name)
}

/// Campaign core against an already-loaded model and dataset.
pub fn run_campaign_with<T: Scalar>(
    cfg: &CampaignConfig,
    model: &Model<T>,
    dataset: &Dataset<T>,
    model_name: &str,
) -> Result<CampaignReport> {
    if cfg.sample_count == 0 {
        return Err(Error::Config("sample_count must be positive".into()));
    }
    if cfg.sample_count > dataset.len() {
        return Err(Error::Config(format!(
            "sample_count {} exceeds dataset size {}",
            cfg.sample_count,
            dataset.len()
        )));
    }
    cfg.attack_cfg.validate()?;
    if let TargetPolicy::Fixed { class } = cfg.target_policy {
        if class >= dataset.class_count() {
            return Err(Error::Config(format!(
                "fixed target {class} out of range for {} classes",
                dataset.class_count()
            )));
        }
    }

    // Seeded shuffle, then prefix: unbiased subsets at any sample count.
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    use rand::seq::SliceRandom;
    indices.shuffle(&mut stream(cfg.seed, salt::SHUFFLE));
    indices.truncate(cfg.sample_count);

    let targets: Option<Vec<usize>> = if cfg.attack.is_targeted() {
        let sampled_labels: Vec<usize> = indices.iter().map(|&i| dataset.label(i)).collect();
        Some(match cfg.target_policy {
            TargetPolicy::RandomExcludingTrue => {
                sample_targets(&sampled_labels, dataset.class_count(), cfg.seed)?
            }
            TargetPolicy::Fixed { class } => vec![class; indices.len()],
        })
    } else {
        None
    };

    let image_dir = if cfg.emit_images {
        let dir = cfg
            .output_dir
            .as_ref()
            .ok_or_else(|| Error::Config("emit_images requires an output_dir".into()))?
            .join("images");
        fs::create_dir_all(&dir)?;
        Some(dir)
    } else {
        None
    };

    let attack_one = |position: usize| -> Result<SampleRecord> {
        let ds_index = indices[position];
        let target = targets.as_ref().map(|t| t[position]);
        let image = dataset.image(ds_index);
        let outcome = run_attack(model, &image, cfg.attack, target, &cfg.attack_cfg)?;
        let result = &outcome.result;
        let record = SampleRecord {
            sample_index: ds_index,
            original_label: result.original_label,
            target_label: target,
            final_label: result.final_label,
            confidence: result.final_confidence,
            perturbation_pct: perturbation_pct(&image, &result.perturbed_image)?,
            ssim: ssim(&image, &result.perturbed_image)?.value,
            iterations: result.iterations,
            elapsed_s: match cfg.timing {
                TimingMode::Measured => result.elapsed.as_secs_f64(),
                TimingMode::Zeroed => 0.0,
            },
            success: result.success,
            error: outcome.abort.map(|a| a.to_string()),
        };
        if let Some(dir) = &image_dir {
            emit_sample_tensors(dir, ds_index, &image, result.perturbation.clone(), &result.perturbed_image)?;
        }
        Ok(record)
    };

    let positions: Vec<usize> = (0..indices.len()).collect();
    let records: Vec<SampleRecord> = match cfg.parallelism {
        Some(1) => positions.iter().map(|&p| attack_one(p)).collect::<Result<_>>()?,
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            pool.install(|| {
                positions
                    .par_iter()
                    .map(|&p| attack_one(p))
                    .collect::<Result<_>>()
            })?
        }
        None => positions
            .par_iter()
            .map(|&p| attack_one(p))
            .collect::<Result<_>>()?,
    };

    let key = RowKey {
        model_name: model_name.to_string(),
        dataset_name: dataset.name().to_string(),
        attack_name: cfg.attack.name().to_string(),
        c_min: confidence_gate(cfg),
    };
    let summary = aggregate(&records, &key, cfg.mean_population)?;
    Ok(CampaignReport {
        config: cfg.clone(),
        model_name: model_name.to_string(),
        records,
        summary,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        timestamp: match cfg.timing {
            TimingMode::Measured => now_utc(),
            TimingMode::Zeroed => "1970-01-01T00:00:00Z".to_string(),
        },
        hardware: format!("{} {}", std::env::consts::ARCH, std::env::consts::OS),
    })
}

/// The confidence gate a campaign is running under, if any. A zero
/// threshold is the disabled gate.
fn confidence_gate(cfg: &CampaignConfig) -> Option<f64> {
    match cfg.attack {
        AttackKind::TargetedEnhanced if cfg.attack_cfg.min_confidence > 0.0 => {
            Some(cfg.attack_cfg.min_confidence)
        }
        _ => None,
    }
}

/// Run the identical seeded sample at every confidence threshold. `None`
/// entries (allowed only as a leading run) disable the gate; the remaining
/// thresholds must ascend strictly.
pub fn sweep_confidence<T: Scalar>(
    cfg: &CampaignConfig,
    thresholds: &[Option<f64>],
    model: &Model<T>,
    dataset: &Dataset<T>,
    model_name: &str,
) -> Result<Vec<CampaignReport>> {
    if thresholds.is_empty() {
        return Err(Error::Config("sweep needs at least one threshold".into()));
    }
    if cfg.attack != AttackKind::TargetedEnhanced {
        return Err(Error::Config(
            "confidence sweeps require the targeted-enhanced attack".into(),
        ));
    }
    let mut last: Option<f64> = None;
    for (i, t) in thresholds.iter().enumerate() {
        match t {
            None if i > 0 => {
                return Err(Error::Config(
                    "the gate-disabled sentinel must come first".into(),
                ))
            }
            None => {}
            Some(v) => {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Config(format!("threshold {v} outside [0, 1]")));
                }
                if let Some(prev) = last {
                    if *v <= prev {
                        return Err(Error::Config(
                            "thresholds must be sorted strictly ascending".into(),
                        ));
                    }
                }
                last = Some(*v);
            }
        }
    }

    thresholds
        .iter()
        .map(|t| {
            let mut run_cfg = cfg.clone();
            run_cfg.attack_cfg.min_confidence = t.unwrap_or(0.0);
            run_campaign_with(&run_cfg, model, dataset, model_name)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(Error::Config(format!(
                "unknown report format {other:?}; expected csv or json"
            ))),
        }
    }
}

pub const CSV_HEADER: &str = "model,dataset,attack,c_min,confidence_mean,perturbation_pct_mean,ssim_mean,iterations_mean,success_rate,time_mean_s,n_samples";

fn format_gate(c_min: Option<f64>) -> String {
    match c_min {
        Some(v) => format!("{v}"),
        None => "none".to_string(),
    }
}

pub fn summary_csv_row(row: &MetricRow) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        row.model_name,
        row.dataset_name,
        row.attack_name,
        format_gate(row.c_min),
        row.confidence_mean,
        row.perturbation_pct_mean,
        row.ssim_mean,
        row.iterations_mean,
        row.success_rate,
        row.time_mean_s,
        row.n_samples
    )
}

/// Write the report under `out_dir`: `summary.csv` for the CSV format,
/// `report.json` (config echo, per-sample records, summary) for JSON.
/// Returns the paths written.
pub fn emit_report(
    report: &CampaignReport,
    format: ReportFormat,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    match format {
        ReportFormat::Csv => {
            let path = out_dir.join("summary.csv");
            let mut text = String::new();
            text.push_str(CSV_HEADER);
            text.push('\n');
            text.push_str(&summary_csv_row(&report.summary));
            text.push('\n');
            fs::write(&path, text)?;
            Ok(vec![path])
        }
        ReportFormat::Json => {
            let path = out_dir.join("report.json");
            fs::write(&path, report_json(report)?)?;
            Ok(vec![path])
        }
    }
}

pub fn report_json(report: &CampaignReport) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn report_from_json(bytes: &[u8]) -> Result<CampaignReport> {
    Ok(serde_json::from_slice(bytes)?)
}

/// Trend table for a sweep: the summary rows of each report, in order.
pub fn sweep_trend_csv(reports: &[CampaignReport]) -> String {
    let mut text = String::new();
    text.push_str(CSV_HEADER);
    text.push('\n');
    for report in reports {
        text.push_str(&summary_csv_row(&report.summary));
        text.push('\n');
    }
    text
}

/// Per-sample tensor dumps in the weight-container blob framing (element
/// count as u64 LE, then little-endian elements): the original image, the
/// perturbation scaled 20x and clipped into `[0, 1]` for visibility, and the
/// perturbed image.
fn emit_sample_tensors<T: Scalar>(
    dir: &Path,
    ds_index: usize,
    original: &Tensor<T>,
    perturbation: Tensor<T>,
    perturbed: &Tensor<T>,
) -> Result<()> {
    let mut viz = perturbation.scaled(lit::<T>(20.0));
    viz.clamp_unit();
    for (suffix, tensor) in [
        ("original", original),
        ("perturbation_x20", &viz),
        ("perturbed", perturbed),
    ] {
        let mut bytes = Vec::new();
        write_tensor_framed(&mut bytes, tensor);
        fs::write(dir.join(format!("sample_{ds_index:05}_{suffix}.tns")), bytes)?;
    }
    Ok(())
}

/// Days-from-epoch civil-date conversion; good enough for report stamps.
fn now_utc() -> String {
    let secs = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let days = (secs / 86_400) as i64;
    let (h, m, s) = (
        (secs % 86_400) / 3600,
        (secs % 3600) / 60,
        secs % 60,
    );
    let mut era_day = days + 719_468;
    let era = era_day.div_euclid(146_097);
    era_day = era_day.rem_euclid(146_097);
    let yoe = (era_day - era_day / 1460 + era_day / 36_524 - era_day / 146_096) / 365;
    let year = yoe + era * 400;
    let doy = era_day - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let day = doy - (153 * mp + 2) / 5 + 1;
    let month = if mp < 10 { mp + 3 } else { mp - 9 };
    let year = if month <= 2 { year + 1 } else { year };
    format!("{year:04}-{month:02}-{day:02}T{h:02}:{m:02}:{s:02}Z")
}
