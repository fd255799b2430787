//! Pretraining, fine-tuning and patient-level prediction.

use ecgtl_core::synth::derive_seed;
use ecgtl_core::{CrtLabel, Error, Result};
use ecgtl_nn::layers::softmax_cross_entropy;
use ecgtl_nn::{unit_of, Mat, Optimizer, OptimizerKind, ResNet, ResNetConfig, HEAD_UNIT};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainMeta};
use crate::dataset::ImageSet;

/// Which parts of a pretrained network stay fixed while fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FreezePolicy {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "freeze_stem_and_stages_1_2")]
    FreezeStemAndStages12,
    #[serde(rename = "freeze_all_but_head")]
    FreezeAllButHead,
}

impl FreezePolicy {
    /// First unit that trains (stem 0, stages 1-4, head 5).
    pub fn trainable_from(self) -> usize {
        match self {
            FreezePolicy::None => 0,
            FreezePolicy::FreezeStemAndStages12 => 3,
            FreezePolicy::FreezeAllButHead => HEAD_UNIT,
        }
    }
}

impl std::str::FromStr for FreezePolicy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "none" => Ok(FreezePolicy::None),
            "freeze_stem_and_stages_1_2" => Ok(FreezePolicy::FreezeStemAndStages12),
            "freeze_all_but_head" => Ok(FreezePolicy::FreezeAllButHead),
            _ => Err(format!(
                "unknown freeze policy '{s}' (none, freeze_stem_and_stages_1_2, freeze_all_but_head)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeighting {
    Uniform,
    /// `n / (k * n_c)` for each class present in the training indices.
    InverseFrequency,
    Explicit(Vec<f64>),
}

impl ClassWeighting {
    pub fn weights(&self, counts: &[usize]) -> Result<Option<Vec<f64>>> {
        match self {
            ClassWeighting::Uniform => Ok(None),
            ClassWeighting::InverseFrequency => {
                let n: usize = counts.iter().sum();
                let present = counts.iter().filter(|&&c| c > 0).count();
                Ok(Some(
                    counts
                        .iter()
                        .map(|&c| if c == 0 { 0.0 } else { n as f64 / (present * c) as f64 })
                        .collect(),
                ))
            }
            ClassWeighting::Explicit(w) => {
                if w.len() != counts.len() || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Config(format!(
                        "{} class weights for {} classes, all must be finite and nonnegative",
                        w.len(),
                        counts.len()
                    )));
                }
                Ok(Some(w.clone()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub freeze_policy: FreezePolicy,
    pub class_weights: ClassWeighting,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 64,
            epochs: 10,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            freeze_policy: FreezePolicy::FreezeStemAndStages12,
            class_weights: ClassWeighting::InverseFrequency,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("batch size and epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub split: String,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error(transparent)]
    Core(#[from] Error),
    /// Loss or parameters stopped being finite. `last_good` holds the
    /// weights from the start of the failing epoch.
    #[error("training diverged in epoch {epoch}: {reason}")]
    Divergence {
        epoch: usize,
        reason: String,
        last_good: Box<Checkpoint>,
    },
}

pub type TrainResult<T> = std::result::Result<T, TrainError>;

/// Fixed per-run facts recorded in checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunInfo {
    /// Whether data preparation ran single-worker.
    pub deterministic: bool,
}

/// Shuffled mini-batches. A trailing batch of one image is merged into
/// the previous one since batch statistics need two samples.
pub fn epoch_batches(indices: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    order.shuffle(rng);
    let mut out: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if out.len() >= 2 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().expect("two batches");
        out.last_mut().expect("one batch").extend(last);
    }
    out
}

/// Softmax probabilities in inference mode, one row per index.
pub fn predict_proba(model: &ResNet<f32>, set: &ImageSet, indices: &[usize], batch_size: usize) -> Result<Mat<f64>> {
    let k = model.config.num_classes;
    let mut out = Mat::zeros(indices.len(), k);
    for (b, chunk) in indices.chunks(batch_size.max(1)).enumerate() {
        let probs = model.forward(&set.batch(chunk)?)?.softmax();
        let start = b * batch_size.max(1) * k;
        out.data[start..start + probs.data.len()].copy_from_slice(&probs.data);
    }
    Ok(out)
}

fn accuracy_of(probs: &Mat<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = probs.argmax_rows().iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

/// Mean cross-entropy (class-weighted when `weights` is set) and accuracy
/// in inference mode.
pub fn evaluate(model: &ResNet<f32>, set: &ImageSet, indices: &[usize], weights: Option<&[f64]>, batch_size: usize) -> Result<(f64, f64)> {
    let probs = predict_proba(model, set, indices, batch_size)?;
    let labels: Vec<usize> = indices.iter().map(|&i| set.labels[i]).collect();
    let w = |l: usize| weights.map_or(1.0, |w| w[l]);
    let (mut loss, mut total) = (0.0, 0.0);
    for (r, &l) in labels.iter().enumerate() {
        loss -= w(l) * probs.row(r)[l].max(1e-300).ln();
        total += w(l);
    }
    let loss = if total > 0.0 { loss / total } else { 0.0 };
    Ok((loss, accuracy_of(&probs, &labels)))
}

/// Mini-batch training over `train` for `cfg.epochs` epochs. Only units at
/// or above the model's `trainable_from` are updated. Each epoch's order
/// depends on the seed and epoch number only.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    model: &mut ResNet<f32>,
    set: &ImageSet,
    train: &[usize],
    val: Option<&[usize]>,
    cfg: &TrainConfig,
    run: RunInfo,
    log: &mut dyn FnMut(&LogRecord),
) -> TrainResult<f64> {
    cfg.validate()?;
    if train.len() < 2 {
        return Err(Error::Data(format!("{} training images; at least 2 are needed", train.len())).into());
    }
    let weights = cfg.class_weights.weights(&set.class_counts(train))?;
    let mut opt = Optimizer::<f32>::new(cfg.optimizer, cfg.learning_rate);
    let mut final_loss = None;
    for epoch in 1..=cfg.epochs {
        let last_good = Checkpoint::from_model(
            model,
            set.label_names.clone(),
            set.fingerprint.clone(),
            TrainMeta {
                seed: cfg.seed,
                epochs_completed: epoch - 1,
                final_loss,
                deterministic: run.deterministic,
            },
        )?;
        let diverged = |reason: String| TrainError::Divergence {
            epoch,
            reason,
            last_good: Box::new(last_good.clone()),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for batch in epoch_batches(train, cfg.batch_size, &mut rng) {
            let x = set.batch(&batch)?;
            let labels: Vec<usize> = batch.iter().map(|&i| set.labels[i]).collect();
            model.zero_grad();
            let logits = model.forward_train(&x)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &labels, weights.as_deref())?;
            if !loss.is_finite() {
                return Err(diverged(format!("loss {loss}")));
            }
            model.backward(&grad);
            opt.step(&mut model.trainable_params_mut());
            loss_sum += loss * batch.len() as f64;
            correct += logits.argmax_rows().iter().zip(&labels).filter(|(p, l)| p == l).count();
        }
        if !model.all_finite() {
            return Err(diverged("non-finite parameters".into()));
        }
        let epoch_loss = loss_sum / train.len() as f64;
        final_loss = Some(epoch_loss);
        log(&LogRecord {
            epoch,
            split: "train".into(),
            loss: epoch_loss,
            accuracy: correct as f64 / train.len() as f64,
        });
        if let Some(val) = val.filter(|v| !v.is_empty()) {
            let (loss, accuracy) = evaluate(model, set, val, weights.as_deref(), cfg.batch_size)?;
            log(&LogRecord {
                epoch,
                split: "val".into(),
                loss,
                accuracy,
            });
        }
    }
    Ok(final_loss.unwrap_or(f64::NAN))
}

fn classes_present(set: &ImageSet, indices: &[usize]) -> usize {
    set.class_counts(indices).iter().filter(|&&c| c > 0).count()
}

/// Trains a network with a head sized to the set's label map. Every unit
/// trains; the freeze policy only applies to fine-tuning.
pub fn pretrain(
    set: &ImageSet,
    train: &[usize],
    val: Option<&[usize]>,
    arch: &ResNetConfig,
    cfg: &TrainConfig,
    run: RunInfo,
    log: &mut dyn FnMut(&LogRecord),
) -> TrainResult<Checkpoint> {
    if set.is_empty() || train.is_empty() {
        return Err(Error::Data("empty pretraining set".into()).into());
    }
    if classes_present(set, train) < 2 {
        return Err(Error::Data("pretraining needs at least two classes".into()).into());
    }
    if arch.input_channels != set.channels {
        return Err(Error::Shape(format!(
            "architecture takes {} channels, images have {}",
            arch.input_channels, set.channels
        ))
        .into());
    }
    let mut config = arch.clone();
    config.num_classes = set.num_classes();
    let mut model = ResNet::<f32>::build(config, cfg.seed)?;
    model.set_trainable_from(0);
    let loss = fit(&mut model, set, train, val, cfg, run, log)?;
    Ok(checkpoint_of(&model, set, cfg, loss, run)?)
}

fn checkpoint_of(model: &ResNet<f32>, set: &ImageSet, cfg: &TrainConfig, loss: f64, run: RunInfo) -> Result<Checkpoint> {
    Checkpoint::from_model(
        model,
        set.label_names.clone(),
        set.fingerprint.clone(),
        TrainMeta {
            seed: cfg.seed,
            epochs_completed: cfg.epochs,
            final_loss: Some(loss),
            deterministic: run.deterministic,
        },
    )
}

/// Starting point of a fine-tuning run.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    Pretrained(&'a Checkpoint),
    /// Random initialization of this architecture.
    Scratch(&'a ResNetConfig),
}

/// Builds the model a fine-tuning run starts from, head sized to the set.
pub fn init_model(init: Init<'_>, set: &ImageSet, seed: u64) -> Result<ResNet<f32>> {
    match init {
        Init::Pretrained(ck) => {
            ck.fingerprint.check_compatible(&set.fingerprint)?;
            let mut model = ck.model()?;
            model.replace_head(set.num_classes(), seed)?;
            Ok(model)
        }
        Init::Scratch(arch) => {
            if arch.input_channels != set.channels {
                return Err(Error::Shape(format!(
                    "architecture takes {} channels, images have {}",
                    arch.input_channels, set.channels
                )));
            }
            let mut config = arch.clone();
            config.num_classes = set.num_classes();
            ResNet::build(config, seed)
        }
    }
}

/// Snapshot of every tensor (parameters and buffers) in frozen units.
fn frozen_state(model: &ResNet<f32>) -> Vec<(String, Vec<u32>)> {
    let from = model.trainable_from();
    model
        .tensors()
        .into_iter()
        .filter(|(n, _)| unit_of(n).is_some_and(|u| u < from))
        .map(|(n, p)| (n, p.value.iter().map(|v| v.to_bits()).collect()))
        .collect()
}

/// Replaces the head, applies the freeze policy and trains on `train`.
/// Frozen tensors are checked bit for bit afterwards.
pub fn finetune(
    init: Init<'_>,
    set: &ImageSet,
    train: &[usize],
    cfg: &TrainConfig,
    run: RunInfo,
    log: &mut dyn FnMut(&LogRecord),
) -> TrainResult<Checkpoint> {
    if classes_present(set, train) < 2 {
        return Err(Error::Data("fine-tuning data must contain both classes".into()).into());
    }
    let mut model = init_model(init, set, cfg.seed)?;
    model.set_trainable_from(cfg.freeze_policy.trainable_from());
    let before = frozen_state(&model);
    let loss = fit(&mut model, set, train, None, cfg, run, log)?;
    if frozen_state(&model) != before {
        return Err(Error::Numeric("a frozen tensor changed during fine-tuning".into()).into());
    }
    Ok(checkpoint_of(&model, set, cfg, loss, run)?)
}

/// How segment probabilities become one patient decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    MeanProbability,
    /// Fraction of segments called responder.
    MajorityVote,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub probability: f64,
    pub label: CrtLabel,
}

/// Combines per-segment responder probabilities. Responder iff the score
/// is strictly above 0.5.
pub fn aggregate(responder_probs: &[f64], how: Aggregation) -> Result<PatientPrediction> {
    if responder_probs.is_empty() {
        return Err(Error::Data("patient has no segments".into()));
    }
    let n = responder_probs.len() as f64;
    let probability = match how {
        Aggregation::MeanProbability => responder_probs.iter().sum::<f64>() / n,
        Aggregation::MajorityVote => responder_probs.iter().filter(|&&p| p > 0.5).count() as f64 / n,
    };
    let label = if probability > 0.5 { CrtLabel::Responder } else { CrtLabel::NonResponder };
    Ok(PatientPrediction { probability, label })
}

/// Patient decision from the segments at `indices` of a binary set.
pub fn predict_patient(model: &ResNet<f32>, set: &ImageSet, indices: &[usize], how: Aggregation) -> Result<PatientPrediction> {
    if indices.is_empty() {
        return Err(Error::Data("patient has no segments".into()));
    }
    if model.config.num_classes != 2 {
        return Err(Error::Config(format!("{}-class model used for a binary decision", model.config.num_classes)));
    }
    let probs = predict_proba(model, set, indices, 64)?;
    let responder = CrtLabel::Responder.index();
    let p: Vec<f64> = (0..probs.rows).map(|r| probs.row(r)[responder]).collect();
    aggregate(&p, how)
}
