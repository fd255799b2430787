use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ecgtl_core::metrics::{confusion, render_table, ClinicalCovariates, FoldMetrics, LogisticConfig, MulticlassConfusion, SvmConfig};
use ecgtl_core::spectrogram::{export_image_png, ImageTensor};
use ecgtl_core::synth::{
    synth_beat_corpus, synth_crt_cohort, write_wfdb_corpus, BeatCorpusConfig, Cohort, CohortConfig, COHORT_MANIFEST,
};
use ecgtl_core::wfdb::{load_annotated, AnnotatedRecord, PACED_RECORDS};
use ecgtl_core::{CrtLabel, Error, Result, Tensor};
use ecgtl_train::crossval::{
    classical_crossval, covariate_features, guideline_crossval, patient_embeddings, patient_labels, Classifier,
};
use ecgtl_train::dataset::stratified_split;
use ecgtl_train::pipeline::{aami_label_names, cohort_image_set, crt_label_names, image_set, record_beats, wfdb_beats, TARGET_FS};
use ecgtl_train::train::{evaluate, predict_patient, predict_proba};
use ecgtl_train::{
    crossval, finetune, make_folds, pretrain, Checkpoint, CrossvalReport, CrossvalSettings, FreezePolicy, ImageSet, Init,
    LogRecord, Preprocess, RunInfo, TrainError,
};
use serde::Serialize;

use crate::args::*;
use crate::files::*;

pub type CmdResult = std::result::Result<(), TrainError>;

pub const TRAIN_LOG: &str = "train_log.jsonl";
/// Where the last finite weights go when training diverges.
pub const LAST_GOOD_DIR: &str = "last_good";

pub fn run(cli: &Cli) -> CmdResult {
    let workers = cli.workers();
    let run = RunInfo {
        deterministic: workers == 1,
    };
    match &cli.command {
        Command::Synth(a) => synth(a).map_err(Into::into),
        Command::Ingest(a) => ingest(a).map_err(Into::into),
        Command::Beats(a) => beats(a).map_err(Into::into),
        Command::Spectrogram(a) => spectrogram(a, workers).map_err(Into::into),
        Command::Pretrain(a) => pretrain_cmd(a, workers, run),
        Command::Finetune(a) => finetune_cmd(a, workers, run),
        Command::Crossval(a) => crossval_cmd(a, workers, run),
        Command::Evaluate(a) => evaluate_cmd(a, workers).map_err(Into::into),
        Command::Baseline(a) => baseline(a, workers).map_err(Into::into),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))
}

fn synth(a: &SynthArgs) -> Result<()> {
    match a.mode {
        SynthMode::Cohort => {
            let mut cfg = CohortConfig {
                n: a.n,
                prevalence: a.prevalence,
                effect: a.effect,
                seed: a.seed,
                leads: a.leads,
                ..CohortConfig::default()
            };
            if let Some(d) = a.duration {
                cfg.duration_s = d;
            }
            let m = synth_crt_cohort(&cfg, &a.out)?;
            let responders = m.entries.iter().filter(|e| e.label.is_positive()).count();
            println!(
                "wrote {} patients ({responders} responders) to {}",
                m.entries.len(),
                a.out.join(COHORT_MANIFEST).display()
            );
        }
        SynthMode::Wfdb => {
            if a.records == 0 {
                return Err(Error::Config("--records must be at least 1".into()));
            }
            let mut cfg = BeatCorpusConfig {
                records: a.records,
                seed: a.seed,
                ..BeatCorpusConfig::default()
            };
            if let Some(d) = a.duration {
                if !(d > 0.0 && d.is_finite()) {
                    return Err(Error::Config(format!("duration {d} must be positive")));
                }
                cfg.duration_s = d;
            }
            let records = synth_beat_corpus(&cfg);
            create_dir(&a.out)?;
            write_wfdb_corpus(&records, &a.out)?;
            write_json(&a.out.join("synth.json"), &cfg)?;
            println!("wrote {} records to {}", records.len(), a.out.display());
        }
    }
    Ok(())
}

fn data_dir_exists(dir: &Path) -> Result<()> {
    if dir.is_dir() {
        Ok(())
    } else {
        Err(Error::Data(format!("data not found: {} is not a directory", dir.display())))
    }
}

/// Explicit ids as given; otherwise the `RECORDS` list, or every header in
/// the directory, without paced records unless asked for.
fn select_records(dir: &Path, explicit: &[String], include_paced: bool) -> Result<Vec<String>> {
    if !explicit.is_empty() {
        return Ok(explicit.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect());
    }
    let list = dir.join("RECORDS");
    let mut ids: Vec<String> = if list.is_file() {
        std::fs::read_to_string(&list)
            .map_err(|e| Error::file(&list, e))?
            .lines()
            .map(|l| l.trim().to_string())
            .filter(|l| !l.is_empty())
            .collect()
    } else {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
            let path = entry.map_err(|e| Error::file(dir, e))?.path();
            if path.extension().is_some_and(|x| x == "hea") {
                if let Some(stem) = path.file_stem() {
                    ids.push(stem.to_string_lossy().into_owned());
                }
            }
        }
        ids.sort();
        ids
    };
    if !include_paced {
        ids.retain(|id| !PACED_RECORDS.contains(&id.as_str()));
    }
    if ids.is_empty() {
        return Err(Error::Data(format!("data not found: no records in {}", dir.display())));
    }
    Ok(ids)
}

fn load_records(dir: &Path, explicit: &[String], include_paced: bool, strict: bool) -> Result<Vec<AnnotatedRecord>> {
    data_dir_exists(dir)?;
    select_records(dir, explicit, include_paced)?
        .iter()
        .map(|id| load_annotated(dir, id, strict))
        .collect()
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let records = load_records(&a.data_dir, &a.records, a.include_paced, a.strict)?;
    create_dir(&a.out)?;
    let mut manifest = IngestManifest {
        source: a.data_dir.display().to_string(),
        records: Vec::new(),
    };
    for rec in &records {
        let h = &rec.signal.header;
        let mut data = Vec::with_capacity(h.num_signals * h.samples_per_signal);
        for ch in 0..h.num_signals {
            data.extend(rec.signal.to_millivolts(ch)?.into_iter().map(|v| v as f32));
        }
        let n = rec.signal.channels.first().map_or(0, Vec::len);
        Tensor::new(vec![h.num_signals, n], data)?.write(&a.out.join(format!("{}.ecgt", h.record_id)))?;
        let beats: Vec<_> = rec.beats.iter().map(|b| (b.sample_index, b.mit_symbol, b.aami)).collect();
        write_annotations(&a.out.join(format!("{}.ann.tsv", h.record_id)), &beats)?;
        manifest.records.push(IngestedRecord {
            record_id: h.record_id.clone(),
            fs: h.sampling_rate_hz,
            samples: n,
            signals: h.signals.iter().map(|s| s.description.clone()).collect(),
            beats: beats.len(),
            checksum_mismatches: rec.checksum_mismatches.len(),
        });
    }
    write_json(&a.out.join(INGEST_MANIFEST), &manifest)?;
    println!("ingested {} records into {}", records.len(), a.out.display());
    Ok(())
}

fn beats(a: &BeatsArgs) -> Result<()> {
    if a.leads == 0 {
        return Err(Error::Config("--leads must be at least 1".into()));
    }
    let manifest: IngestManifest = read_json(&a.input.join(INGEST_MANIFEST))?;
    let pre = Preprocess {
        fs: a.fs,
        ..Preprocess::default()
    };
    let mut all = Vec::new();
    for r in &manifest.records {
        let t = Tensor::read(&a.input.join(format!("{}.ecgt", r.record_id)))?;
        if t.dims.len() != 2 || t.dims[0] < a.leads {
            return Err(Error::Data(format!(
                "record {} has shape {:?}, need {} leads",
                r.record_id, t.dims, a.leads
            )));
        }
        let n = t.dims[1];
        let leads: Vec<Vec<f64>> = (0..a.leads)
            .map(|l| t.data[l * n..(l + 1) * n].iter().map(|&v| v as f64).collect())
            .collect();
        let reference = read_annotations(&a.input.join(format!("{}.ann.tsv", r.record_id)))?;
        let segs = record_beats(&r.record_id, &leads, r.fs, &reference, &pre)?;
        log::info!("{}: {} labeled beats", r.record_id, segs.len());
        all.extend(segs);
    }
    create_dir(&a.out)?;
    write_segments(&a.out, &all, a.leads)?;
    write_json(
        &a.out.join(BEATS_MANIFEST),
        &BeatsManifest {
            fs: a.fs,
            leads: a.leads,
            label_names: aami_label_names(),
            records: manifest.records.iter().map(|r| r.record_id.clone()).collect(),
            segments: all.len(),
        },
    )?;
    println!("wrote {} segments to {}", all.len(), a.out.display());
    Ok(())
}

fn image_of(set: &ImageSet, i: usize) -> ImageTensor {
    ImageTensor {
        channels: set.channels,
        height: set.height,
        width: set.width,
        data: set.image(i).to_vec(),
        normalization: Vec::new(),
    }
}

fn spectrogram(a: &SpectrogramArgs, workers: usize) -> Result<()> {
    let manifest: BeatsManifest = read_json(&a.input.join(BEATS_MANIFEST))?;
    if a.prep.stacked_leads.is_some_and(|n| n > manifest.leads) {
        return Err(Error::Config(format!("segments carry only {} leads", manifest.leads)));
    }
    let segs: Vec<_> = read_segments(&a.input)?.into_iter().filter(|s| s.label.is_some()).collect();
    let pre = a.prep.preprocess(manifest.fs);
    let set = image_set(&segs, manifest.label_names, &pre, workers)?;
    set.save(&a.out)?;
    if let Some(dir) = &a.png_dir {
        create_dir(dir)?;
        for i in 0..set.len().min(a.png_limit) {
            export_image_png(&image_of(&set, i), 0, &dir.join(format!("{i:05}.png")))?;
        }
    }
    println!("wrote {} images of {}x{} to {}", set.len(), set.height, set.width, a.out.display());
    Ok(())
}

/// Collects log records for `train_log.jsonl`.
#[derive(Default)]
struct TrainLog {
    lines: String,
}

impl TrainLog {
    fn push<T: Serialize>(&mut self, rec: &T) {
        if let Ok(s) = serde_json::to_string(rec) {
            self.lines.push_str(&s);
            self.lines.push('\n');
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.lines).map_err(|e| Error::file(path, e))
    }
}

fn log_epoch(prefix: &str, r: &LogRecord) {
    log::info!("{prefix}epoch {} {}: loss {:.4}, accuracy {:.4}", r.epoch, r.split, r.loss, r.accuracy);
}

/// Writes the log and, after a divergence, the last finite weights.
fn finish_training<T>(result: std::result::Result<T, TrainError>, log: &TrainLog, log_path: &Path, out_dir: &Path) -> std::result::Result<T, TrainError> {
    if let Some(parent) = log_path.parent() {
        create_dir(parent)?;
    }
    log.write(log_path)?;
    if let Err(TrainError::Divergence { last_good, .. }) = &result {
        let dir = out_dir.join(LAST_GOOD_DIR);
        last_good.save(&dir)?;
        eprintln!("last good weights saved to {}", dir.display());
    }
    result
}

#[derive(Serialize)]
struct PretrainSummary {
    seed: u64,
    val_fraction: f64,
    train_images: usize,
    val_images: usize,
    val_loss: Option<f64>,
    val_accuracy: Option<f64>,
    /// Rows are true classes.
    val_confusion: Option<MulticlassConfusion>,
    checkpoint_sha256: String,
}

fn pretrain_cmd(a: &PretrainArgs, workers: usize, run: RunInfo) -> CmdResult {
    let set = match (&a.images, &a.data_dir) {
        (Some(dir), _) => ImageSet::load(dir)?,
        (None, Some(dir)) => {
            let records = load_records(dir, &a.records, a.include_paced, false)?;
            let pre = a.prep.preprocess(TARGET_FS);
            let channels: Vec<usize> = (0..a.prep.stacked_leads.unwrap_or(1)).collect();
            let mut segs = Vec::new();
            for rec in &records {
                segs.extend(wfdb_beats(rec, &channels, &pre)?);
            }
            let mut set = image_set(&segs, aami_label_names(), &pre, workers)?;
            set.seed = Some(a.train.seed);
            set
        }
        (None, None) => return Err(Error::Config("one of --images or --data-dir is required".into()).into()),
    };
    let (train, val) = if a.val_fraction > 0.0 {
        stratified_split(&set.labels, a.val_fraction, a.train.seed)?
    } else {
        ((0..set.len()).collect(), Vec::new())
    };
    let arch = a.arch.config(set.channels, set.num_classes())?;
    let cfg = a.train.config(FreezePolicy::None);
    cfg.validate()?;
    let mut log = TrainLog::default();
    let val_opt = (!val.is_empty()).then_some(val.as_slice());
    let result = pretrain(&set, &train, val_opt, &arch, &cfg, run, &mut |r| {
        log_epoch("", r);
        log.push(r);
    });
    let ck = finish_training(result, &log, &a.out.join(TRAIN_LOG), &a.out)?;
    ck.save(&a.out)?;
    let model = ck.model()?;
    let (val_loss, val_accuracy, val_confusion) = if val.is_empty() {
        (None, None, None)
    } else {
        let (loss, acc) = evaluate(&model, &set, &val, None, cfg.batch_size)?;
        let pred = predict_proba(&model, &set, &val, cfg.batch_size)?.argmax_rows();
        let truth: Vec<usize> = val.iter().map(|&i| set.labels[i]).collect();
        let cm = MulticlassConfusion::from_indices(&pred, &truth, set.num_classes())?;
        (Some(loss), Some(acc), Some(cm))
    };
    let summary = PretrainSummary {
        seed: cfg.seed,
        val_fraction: a.val_fraction,
        train_images: train.len(),
        val_images: val.len(),
        val_loss,
        val_accuracy,
        val_confusion,
        checkpoint_sha256: ck.digest()?,
    };
    write_json(&a.out.join("pretrain.json"), &summary)?;
    match val_accuracy {
        Some(acc) => println!("validation accuracy {acc:.4} on {} images", val.len()),
        None => println!("trained on {} images", train.len()),
    }
    Ok(())
}

fn cohort_set(path: &Path, pre: &Preprocess, workers: usize) -> Result<ImageSet> {
    let cohort = Cohort::load(path)?;
    let mut inputs = Vec::with_capacity(cohort.manifest.entries.len());
    for e in &cohort.manifest.entries {
        inputs.push((e.patient_id.clone(), e.label, cohort.read_leads(e)?, e.fs));
    }
    let mut set = cohort_image_set(&inputs, pre, workers)?;
    set.seed = Some(cohort.manifest.seed);
    Ok(set)
}

/// Loads the fine-tuning data. Images for a pretrained network are made
/// with the checkpoint's preprocessing.
fn load_source(src: &CohortSource, ck: Option<&Checkpoint>, prep: &PrepArgs, workers: usize) -> Result<ImageSet> {
    match (&src.cohort, &src.images) {
        (Some(path), _) => {
            let pre = match ck {
                Some(ck) => Preprocess::from_fingerprint(&ck.fingerprint),
                None => prep.preprocess(TARGET_FS),
            };
            cohort_set(path, &pre, workers)
        }
        (None, Some(dir)) => {
            let set = ImageSet::load(dir)?;
            if set.label_names != crt_label_names() {
                return Err(Error::Data(format!(
                    "{} holds labels {:?}, not responder outcomes",
                    dir.display(),
                    set.label_names
                )));
            }
            Ok(set)
        }
        (None, None) => Err(Error::Config("one of --cohort or --images is required".into())),
    }
}

fn load_checkpoint(path: Option<&PathBuf>) -> Result<Option<Checkpoint>> {
    path.map(|p| Checkpoint::load(p)).transpose()
}

/// Pretrained networks freeze the early units by default; random ones
/// train everything.
fn freeze_for(explicit: Option<FreezePolicy>, pretrained: bool) -> FreezePolicy {
    explicit.unwrap_or(if pretrained {
        FreezePolicy::FreezeStemAndStages12
    } else {
        FreezePolicy::None
    })
}

fn finetune_cmd(a: &FinetuneArgs, workers: usize, run: RunInfo) -> CmdResult {
    let ck = load_checkpoint(a.checkpoint.as_ref())?;
    let set = &load_source(&a.source, ck.as_ref(), &a.prep, workers)?;
    let arch = a.arch.config(set.channels, set.num_classes())?;
    let init = match &ck {
        Some(ck) => Init::Pretrained(ck),
        None => Init::Scratch(&arch),
    };
    let cfg = a.train.config(freeze_for(a.freeze_policy, ck.is_some()));
    cfg.validate()?;
    let all: Vec<usize> = (0..set.len()).collect();
    let mut log = TrainLog::default();
    let result = finetune(init, set, &all, &cfg, run, &mut |r| {
        log_epoch("", r);
        log.push(r);
    });
    let out = finish_training(result, &log, &a.out.join(TRAIN_LOG), &a.out)?;
    out.save(&a.out)?;
    println!("fine-tuned on {} segments of {} patients", set.len(), set.by_group().len());
    Ok(())
}

fn fold_plan(labels: &BTreeMap<String, CrtLabel>, k: usize, seed: u64) -> Result<ecgtl_train::FoldPlan> {
    let ids: Vec<String> = labels.keys().cloned().collect();
    let pos: Vec<bool> = labels.values().map(|l| l.is_positive()).collect();
    make_folds(&pos, &ids, k, seed)
}

fn print_report(report: &CrossvalReport) {
    print!("{}", render_table(&[(report.method.clone(), report.summary.clone())]));
}

#[derive(Serialize)]
struct FoldLogLine<'a> {
    fold: usize,
    #[serde(flatten)]
    record: &'a LogRecord,
}

fn crossval_cmd(a: &CrossvalArgs, workers: usize, run: RunInfo) -> CmdResult {
    let ck = load_checkpoint(a.checkpoint.as_ref())?;
    let set = &load_source(&a.source, ck.as_ref(), &a.prep, workers)?;
    let labels = patient_labels(set)?;
    let plan = fold_plan(&labels, a.k, a.train.seed)?;
    let arch = a.arch.config(set.channels, set.num_classes())?;
    let init = match &ck {
        Some(ck) => Init::Pretrained(ck),
        None => Init::Scratch(&arch),
    };
    let settings = CrossvalSettings {
        train: a.train.config(freeze_for(a.freeze_policy, ck.is_some())),
        aggregation: a.aggregation.into(),
        run,
    };
    settings.train.validate()?;
    let method = a
        .method
        .clone()
        .unwrap_or_else(|| if ck.is_some() { "pretrained" } else { "scratch" }.to_string());
    let mut log = TrainLog::default();
    let result = crossval(&method, set, &plan, init, &settings, &mut |fold, r| {
        log_epoch(&format!("fold {fold} "), r);
        log.push(&FoldLogLine { fold, record: r });
    });
    let out_dir = a.out.parent().map(Path::to_path_buf).unwrap_or_default();
    let report = finish_training(result, &log, &a.out.with_extension("train_log.jsonl"), &out_dir)?;
    write_json(&a.out, &report)?;
    print_report(&report);
    Ok(())
}

#[derive(Serialize)]
struct PatientRow {
    patient_id: String,
    label: CrtLabel,
    predicted: CrtLabel,
    probability: f64,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Evaluation {
    Patients {
        checkpoint_sha256: String,
        seed: u64,
        segments: usize,
        metrics: FoldMetrics,
        patients: Vec<PatientRow>,
    },
    Segments {
        checkpoint_sha256: String,
        seed: u64,
        segments: usize,
        accuracy: Option<f64>,
        label_names: Vec<String>,
        confusion: MulticlassConfusion,
    },
}

fn evaluate_cmd(a: &EvaluateArgs, workers: usize) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let set = match (&a.source.cohort, &a.source.images) {
        (Some(path), _) => cohort_set(path, &Preprocess::from_fingerprint(&ck.fingerprint), workers)?,
        (None, Some(dir)) => ImageSet::load(dir)?,
        (None, None) => return Err(Error::Config("one of --cohort or --images is required".into())),
    };
    ck.fingerprint.check_compatible(&set.fingerprint)?;
    if ck.label_names != set.label_names {
        return Err(Error::Data(format!(
            "checkpoint predicts {:?}, data is labeled {:?}",
            ck.label_names, set.label_names
        )));
    }
    let model = ck.model()?;
    let digest = ck.digest()?;
    let eval = if set.label_names == crt_label_names() {
        let mut rows = Vec::new();
        for (g, idx) in set.by_group() {
            let p = predict_patient(&model, &set, &idx, a.aggregation.into())?;
            let label = CrtLabel::from_index(set.labels[idx[0]])
                .ok_or_else(|| Error::Data(format!("bad label for patient {g}")))?;
            rows.push(PatientRow {
                patient_id: g.to_string(),
                label,
                predicted: p.label,
                probability: p.probability,
            });
        }
        let pred: Vec<CrtLabel> = rows.iter().map(|r| r.predicted).collect();
        let truth: Vec<CrtLabel> = rows.iter().map(|r| r.label).collect();
        let metrics: FoldMetrics = confusion(&pred, &truth)?.into();
        println!(
            "{} patients: accuracy {}, sensitivity {}, specificity {}",
            rows.len(),
            ecgtl_core::metrics::fmt_metric(metrics.accuracy),
            ecgtl_core::metrics::fmt_metric(metrics.sensitivity),
            ecgtl_core::metrics::fmt_metric(metrics.specificity)
        );
        Evaluation::Patients {
            checkpoint_sha256: digest,
            seed: ck.meta.seed,
            segments: set.len(),
            metrics,
            patients: rows,
        }
    } else {
        let all: Vec<usize> = (0..set.len()).collect();
        let pred = predict_proba(&model, &set, &all, 64)?.argmax_rows();
        let cm = MulticlassConfusion::from_indices(&pred, &set.labels, set.num_classes())?;
        let accuracy = cm.accuracy();
        println!("{} segments: accuracy {}", set.len(), ecgtl_core::metrics::fmt_metric(accuracy));
        Evaluation::Segments {
            checkpoint_sha256: digest,
            seed: ck.meta.seed,
            segments: set.len(),
            accuracy,
            label_names: set.label_names.clone(),
            confusion: cm,
        }
    };
    if let Some(out) = &a.out {
        write_json(out, &eval)?;
    }
    Ok(())
}

fn baseline(a: &BaselineArgs, workers: usize) -> Result<()> {
    let cohort = Cohort::load(&a.cohort)?;
    let labels: BTreeMap<String, CrtLabel> = cohort
        .manifest
        .entries
        .iter()
        .map(|e| (e.patient_id.clone(), e.label))
        .collect();
    let covariates: BTreeMap<String, ClinicalCovariates> = cohort
        .manifest
        .entries
        .iter()
        .map(|e| (e.patient_id.clone(), e.covariates))
        .collect();
    let plan = fold_plan(&labels, a.k, a.seed)?;
    let report = match a.method {
        BaselineMethod::Guideline => guideline_crossval(&covariates, &labels, &plan)?,
        BaselineMethod::Logistic | BaselineMethod::Svm => {
            let (features, source) = match &a.checkpoint {
                Some(path) => {
                    let ck = Checkpoint::load(path)?;
                    let set = cohort_set(&a.cohort, &Preprocess::from_fingerprint(&ck.fingerprint), workers)?;
                    (patient_embeddings(&ck.model()?, &set)?, "embeddings")
                }
                None => (
                    covariates.iter().map(|(p, c)| (p.clone(), covariate_features(c))).collect(),
                    "covariates",
                ),
            };
            let (name, clf) = match a.method {
                BaselineMethod::Logistic => ("logistic", Classifier::Logistic(LogisticConfig::default())),
                _ => (
                    "svm",
                    Classifier::Svm(SvmConfig {
                        seed: a.seed,
                        ..SvmConfig::default()
                    }),
                ),
            };
            classical_crossval(&format!("{name} ({source})"), &features, &labels, &plan, &clf)?
        }
    };
    write_json(&a.out, &report)?;
    print_report(&report);
    Ok(())
}
