use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecgtl_core::spectrogram::{SpectrogramConfig, WindowKind, DEFAULT_FLOOR_DB};
use ecgtl_core::ChannelPolicy;
use ecgtl_nn::{OptimizerKind, ResNetConfig};
use ecgtl_train::pipeline::TARGET_FS;
use ecgtl_train::{Aggregation, ClassWeighting, FreezePolicy, Preprocess, TrainConfig};

/// ECG spectrogram transfer learning: MIT-BIH pretraining, cohort
/// fine-tuning and patient-level evaluation.
#[derive(Debug, Parser)]
#[command(name = "ecgtl", version)]
pub struct Cli {
    /// Threads for data preparation.
    #[arg(long, global = true, default_value_t = default_workers())]
    pub workers: usize,

    /// Single worker; outputs are then bit-reproducible for a given seed.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl Cli {
    pub fn workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.workers.max(1)
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic CRT cohort or an annotated WFDB corpus.
    Synth(SynthArgs),
    /// Decode WFDB records into millivolt tensors and beat annotations.
    Ingest(IngestArgs),
    /// Detect R peaks and cut labeled beat segments.
    Beats(BeatsArgs),
    /// Turn beat segments into a spectrogram image set.
    Spectrogram(SpectrogramArgs),
    /// Train a network on beat-class images.
    Pretrain(PretrainArgs),
    /// Fine-tune on a labeled cohort.
    Finetune(FinetuneArgs),
    /// Patient-level k-fold cross-validation of fine-tuning.
    Crossval(CrossvalArgs),
    /// Score a checkpoint on an image set or cohort.
    Evaluate(EvaluateArgs),
    /// Cross-validate a classical baseline on the same folds.
    Baseline(BaselineArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthMode {
    Cohort,
    Wfdb,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "cohort")]
    pub mode: SynthMode,
    /// Cohort size.
    #[arg(long, default_value_t = 71)]
    pub n: usize,
    /// Responder fraction; the responder count is `round(n * prevalence)`.
    #[arg(long, default_value_t = 46.0 / 71.0)]
    pub prevalence: f64,
    /// QRS width factor of responders (1.0 gives a null cohort).
    #[arg(long, default_value_t = ecgtl_core::synth::DEFAULT_EFFECT)]
    pub effect: f64,
    /// Leads per cohort patient.
    #[arg(long, default_value_t = 2)]
    pub leads: usize,
    /// Number of WFDB records.
    #[arg(long, default_value_t = 20)]
    pub records: usize,
    /// Seconds per patient or record.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Directory holding `.hea`, `.dat` and `.atr` files.
    #[arg(long, env = "ECGTL_DATA_DIR")]
    pub data_dir: PathBuf,
    /// Comma-separated record ids; default is the `RECORDS` list (or every
    /// header) minus paced records.
    #[arg(long, value_delimiter = ',')]
    pub records: Vec<String>,
    /// Keep 102, 104, 107 and 217 in the default selection.
    #[arg(long)]
    pub include_paced: bool,
    /// Treat header checksum mismatches as errors.
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BeatsArgs {
    /// Output directory of `ingest`.
    #[arg(long)]
    pub input: PathBuf,
    /// Leads to keep, starting at the first signal.
    #[arg(long, default_value_t = 1)]
    pub leads: usize,
    /// Rate segments are resampled to.
    #[arg(long, default_value_t = TARGET_FS)]
    pub fs: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct PrepArgs {
    #[arg(long, default_value = "hann")]
    pub window: WindowKind,
    #[arg(long, default_value_t = 512)]
    pub window_len: usize,
    #[arg(long, default_value_t = 32)]
    pub hop: usize,
    #[arg(long, default_value_t = DEFAULT_FLOOR_DB, allow_negative_numbers = true)]
    pub floor_db: f64,
    /// Image size as HxW.
    #[arg(long, default_value = "96x96", value_parser = parse_size)]
    pub size: (usize, usize),
    /// One channel per lead for this many leads instead of the first lead only.
    #[arg(long)]
    pub stacked_leads: Option<usize>,
}

impl PrepArgs {
    pub fn preprocess(&self, fs: f64) -> Preprocess {
        Preprocess {
            fs,
            spectrogram: SpectrogramConfig {
                window_kind: self.window,
                window_len: self.window_len,
                hop: self.hop,
                floor_db: self.floor_db,
            },
            height: self.size.0,
            width: self.size.1,
            channel_policy: match self.stacked_leads {
                Some(leads) => ChannelPolicy::StackedLeads { leads },
                None => ChannelPolicy::FirstLead,
            },
        }
    }
}

pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("size '{s}' is not HxW"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in '{s}'"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in '{s}'"))?;
    if h == 0 || w == 0 {
        return Err(format!("size '{s}' has a zero side"));
    }
    Ok((h, w))
}

#[derive(Debug, Args)]
pub struct SpectrogramArgs {
    /// Output directory of `beats`.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub prep: PrepArgs,
    /// Also export the first images as grayscale PNG here.
    #[arg(long)]
    pub png_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub png_limit: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ArchArgs {
    /// ResNet depth: 18, 50 or 101.
    #[arg(long, default_value_t = 18)]
    pub variant: u32,
    /// Channels of the first stage (64 in the standard networks).
    #[arg(long, default_value_t = 64)]
    pub base_width: usize,
}

impl ArchArgs {
    pub fn config(&self, channels: usize, classes: usize) -> ecgtl_core::Result<ResNetConfig> {
        let cfg = ResNetConfig::new(self.variant, channels, classes)?.with_base_width(self.base_width);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Weighting {
    InverseFrequency,
    Uniform,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = 0.001)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value = "adam")]
    pub optimizer: OptimizerKind,
    #[arg(long, value_enum, default_value = "inverse-frequency")]
    pub class_weights: Weighting,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn config(&self, freeze_policy: FreezePolicy) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            optimizer: self.optimizer,
            seed: self.seed,
            freeze_policy,
            class_weights: match self.class_weights {
                Weighting::InverseFrequency => ClassWeighting::InverseFrequency,
                Weighting::Uniform => ClassWeighting::Uniform,
            },
        }
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Image set written by `spectrogram`.
    #[arg(long, conflicts_with = "data_dir")]
    pub images: Option<PathBuf>,
    /// Build the image set from WFDB records directly.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub records: Vec<String>,
    #[arg(long)]
    pub include_paced: bool,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Share of each class held out for validation.
    #[arg(long, default_value_t = 0.2)]
    pub val_fraction: f64,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CohortSource {
    /// `cohort.json` of a cohort directory.
    #[arg(long, conflicts_with = "images")]
    pub cohort: Option<PathBuf>,
    /// Image set with responder / non-responder labels grouped by patient.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Pretrained checkpoint; without it the network starts from random weights.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub source: CohortSource,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Default: freeze_stem_and_stages_1_2 with a checkpoint, none without.
    #[arg(long)]
    pub freeze_policy: Option<FreezePolicy>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AggregationArg {
    Mean,
    Majority,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::Mean => Aggregation::MeanProbability,
            AggregationArg::Majority => Aggregation::MajorityVote,
        }
    }
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[command(flatten)]
    pub source: CohortSource,
    #[command(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Default: freeze_stem_and_stages_1_2 with a checkpoint, none without.
    #[arg(long)]
    pub freeze_policy: Option<FreezePolicy>,
    #[arg(long, default_value_t = ecgtl_train::folds::DEFAULT_K)]
    pub k: usize,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregation: AggregationArg,
    /// Name of the method in the report.
    #[arg(long)]
    pub method: Option<String>,
    /// Metrics JSON.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub source: CohortSource,
    #[arg(long, value_enum, default_value = "mean")]
    pub aggregation: AggregationArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Guideline,
    Logistic,
    Svm,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub cohort: PathBuf,
    #[arg(long, value_enum)]
    pub method: BaselineMethod,
    /// Use mean network embeddings per patient instead of the clinical
    /// covariates as features.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = ecgtl_train::folds::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
