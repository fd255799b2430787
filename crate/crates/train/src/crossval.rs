//! k-fold cross-validation of fine-tuned networks and classical baselines,
//! evaluated per patient.

use std::collections::{BTreeMap, BTreeSet};

use ecgtl_core::metrics::{
    confusion, guideline_predict, linear_svm_fit, logistic_fit, ClinicalCovariates, FoldMetrics, LogisticConfig,
    MetricsReport, Standardizer, SvmConfig,
};
use ecgtl_core::synth::derive_seed;
use ecgtl_core::{CrtLabel, Error, Result};
use ecgtl_nn::ResNet;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageSet;
use crate::folds::FoldPlan;
use crate::pipeline::crt_label_names;
use crate::train::{finetune, predict_patient, Aggregation, Init, LogRecord, RunInfo, TrainConfig, TrainResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientOutcome {
    pub patient_id: String,
    pub label: CrtLabel,
    pub predicted: CrtLabel,
    /// Responder probability, or the decision value for the SVM and 0/1
    /// for the guideline rule.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_patients: usize,
    pub train_segments: usize,
    pub metrics: FoldMetrics,
    pub patients: Vec<PatientOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub method: String,
    pub seed: u64,
    pub k: usize,
    pub deterministic: bool,
    pub folds: Vec<FoldResult>,
    pub summary: MetricsReport,
}

impl CrossvalReport {
    fn new(method: &str, plan: &FoldPlan, deterministic: bool, folds: Vec<FoldResult>) -> Self {
        let cms: Vec<_> = folds.iter().map(|f| f.metrics.confusion).collect();
        CrossvalReport {
            method: method.to_string(),
            seed: plan.seed,
            k: plan.k,
            deterministic,
            folds,
            summary: MetricsReport::from_folds(&cms),
        }
    }

    pub fn mean_accuracy(&self) -> Option<f64> {
        self.summary.accuracy.mean
    }
}

fn outcome_fold(fold: usize, train_patients: usize, train_segments: usize, patients: Vec<PatientOutcome>) -> Result<FoldResult> {
    let pred: Vec<CrtLabel> = patients.iter().map(|p| p.predicted).collect();
    let truth: Vec<CrtLabel> = patients.iter().map(|p| p.label).collect();
    Ok(FoldResult {
        fold,
        train_patients,
        train_segments,
        metrics: confusion(&pred, &truth)?.into(),
        patients,
    })
}

/// Per-patient labels of a binary set; every segment of a patient must
/// carry the same label.
pub fn patient_labels(set: &ImageSet) -> Result<BTreeMap<String, CrtLabel>> {
    if set.label_names != crt_label_names() {
        return Err(Error::Data(format!("expected responder labels, set has {:?}", set.label_names)));
    }
    let mut out = BTreeMap::new();
    for (g, idx) in set.by_group() {
        let l = set.labels[idx[0]];
        if idx.iter().any(|&i| set.labels[i] != l) {
            return Err(Error::Data(format!("patient {g} has segments with different labels")));
        }
        out.insert(g.to_string(), CrtLabel::from_index(l).expect("binary label"));
    }
    Ok(out)
}

fn check_plan_covers(plan: &FoldPlan, patients: &BTreeSet<&str>) -> Result<()> {
    let planned: BTreeSet<&str> = plan.assignment.keys().map(String::as_str).collect();
    if &planned != patients {
        return Err(Error::Data("fold plan and data cover different patients".into()));
    }
    Ok(())
}

/// Training segment indices and held-out patients of one fold. Fails if a
/// held-out patient contributes any training segment.
pub fn split_fold<'a>(set: &'a ImageSet, plan: &FoldPlan, fold: usize) -> Result<(Vec<usize>, BTreeMap<&'a str, Vec<usize>>)> {
    let mut train = Vec::new();
    let mut test = BTreeMap::new();
    for (g, idx) in set.by_group() {
        let f = *plan
            .assignment
            .get(g)
            .ok_or_else(|| Error::Data(format!("patient {g} missing from the fold plan")))?;
        if f == fold {
            test.insert(g, idx);
        } else {
            train.extend(idx);
        }
    }
    let leaked = train.iter().filter(|&&i| test.contains_key(set.groups[i].as_str())).count();
    if leaked > 0 {
        return Err(Error::Data(format!("{leaked} held-out segments in the training split of fold {fold}")));
    }
    train.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossvalSettings {
    /// Per-fold seeds are derived from `train.seed`.
    pub train: TrainConfig,
    pub aggregation: Aggregation,
    pub run: RunInfo,
}

/// Fine-tunes from `init` on k-1 folds and evaluates patients of the
/// remaining fold, for every fold.
pub fn crossval(
    method: &str,
    set: &ImageSet,
    plan: &FoldPlan,
    init: Init<'_>,
    settings: &CrossvalSettings,
    log: &mut dyn FnMut(usize, &LogRecord),
) -> TrainResult<CrossvalReport> {
    let labels = patient_labels(set)?;
    check_plan_covers(plan, &labels.keys().map(String::as_str).collect())?;
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let (train, test) = split_fold(set, plan, fold)?;
        let mut cfg = settings.train.clone();
        cfg.seed = derive_seed(settings.train.seed, fold as u64);
        let ck = finetune(init, set, &train, &cfg, settings.run, &mut |r| log(fold, r))?;
        let model = ck.model()?;
        let mut outcomes = Vec::with_capacity(test.len());
        for (patient, idx) in &test {
            let p = predict_patient(&model, set, idx, settings.aggregation)?;
            outcomes.push(PatientOutcome {
                patient_id: patient.to_string(),
                label: labels[*patient],
                predicted: p.label,
                score: p.probability,
            });
        }
        let train_patients = labels.len() - test.len();
        folds.push(outcome_fold(fold, train_patients, train.len(), outcomes)?);
    }
    Ok(CrossvalReport::new(method, plan, settings.run.deterministic, folds))
}

/// Mean embedding of each patient's segments.
pub fn patient_embeddings(model: &ResNet<f32>, set: &ImageSet) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    for (g, idx) in set.by_group() {
        let dim = model.config.embed_dim();
        let mut mean = vec![0.0; dim];
        for chunk in idx.chunks(64) {
            let e = model.embed(&set.batch(chunk)?)?;
            for r in 0..e.rows {
                for (m, v) in mean.iter_mut().zip(e.row(r)) {
                    *m += *v as f64;
                }
            }
        }
        mean.iter_mut().for_each(|m| *m /= idx.len() as f64);
        out.insert(g.to_string(), mean);
    }
    Ok(out)
}

/// Feature vector of the clinical covariates: QRS, LBBB (0/1), LVEF.
pub fn covariate_features(c: &ClinicalCovariates) -> Vec<f64> {
    vec![c.qrs_ms, if c.lbbb { 1.0 } else { 0.0 }, c.lvef_pct]
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classifier {
    Logistic(LogisticConfig),
    Svm(SvmConfig),
}

/// Cross-validates a linear classifier on per-patient feature vectors,
/// standardized with training-fold statistics.
pub fn classical_crossval(
    method: &str,
    features: &BTreeMap<String, Vec<f64>>,
    labels: &BTreeMap<String, CrtLabel>,
    plan: &FoldPlan,
    classifier: &Classifier,
) -> Result<CrossvalReport> {
    check_plan_covers(plan, &labels.keys().map(String::as_str).collect())?;
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let (mut xtr, mut ytr) = (Vec::new(), Vec::new());
        let mut test = Vec::new();
        for (p, &l) in labels {
            let x = features
                .get(p)
                .ok_or_else(|| Error::Data(format!("no features for patient {p}")))?;
            if plan.assignment[p] == fold {
                test.push((p, l, x));
            } else {
                xtr.push(x.clone());
                ytr.push(l.is_positive());
            }
        }
        let scaler = Standardizer::fit(&xtr);
        let xtr: Vec<Vec<f64>> = xtr.iter().map(|x| scaler.apply(x)).collect();
        let predict: Box<dyn Fn(&[f64]) -> (bool, f64)> = match classifier {
            Classifier::Logistic(cfg) => {
                let m = logistic_fit(&xtr, &ytr, cfg)?;
                Box::new(move |x| (m.predict(x), m.predict_proba(x)))
            }
            Classifier::Svm(cfg) => {
                let mut cfg = cfg.clone();
                cfg.seed = derive_seed(cfg.seed, fold as u64);
                let m = linear_svm_fit(&xtr, &ytr, &cfg)?;
                Box::new(move |x| (m.predict(x), m.linear.decision(x)))
            }
        };
        let outcomes = test
            .into_iter()
            .map(|(p, l, x)| {
                let (yes, score) = predict(&scaler.apply(x));
                PatientOutcome {
                    patient_id: p.clone(),
                    label: l,
                    predicted: if yes { CrtLabel::Responder } else { CrtLabel::NonResponder },
                    score,
                }
            })
            .collect::<Vec<_>>();
        let n_train = ytr.len();
        folds.push(outcome_fold(fold, n_train, n_train, outcomes)?);
    }
    Ok(CrossvalReport::new(method, plan, true, folds))
}

/// The guideline rule needs no training; it is scored on the same folds.
pub fn guideline_crossval(
    covariates: &BTreeMap<String, ClinicalCovariates>,
    labels: &BTreeMap<String, CrtLabel>,
    plan: &FoldPlan,
) -> Result<CrossvalReport> {
    check_plan_covers(plan, &labels.keys().map(String::as_str).collect())?;
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let mut outcomes = Vec::new();
        for (p, &l) in labels.iter().filter(|(p, _)| plan.assignment[*p] == fold) {
            let c = covariates
                .get(p)
                .ok_or_else(|| Error::Data(format!("no covariates for patient {p}")))?;
            c.validate()?;
            let predicted = guideline_predict(c);
            outcomes.push(PatientOutcome {
                patient_id: p.clone(),
                label: l,
                predicted,
                score: if predicted.is_positive() { 1.0 } else { 0.0 },
            });
        }
        let n_train = labels.len() - outcomes.len();
        folds.push(outcome_fold(fold, n_train, 0, outcomes)?);
    }
    Ok(CrossvalReport::new("guideline", plan, true, folds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::folds::make_folds;
    use ecgtl_core::spectrogram::{ImageTensor, SpectrogramConfig};
    use ecgtl_core::{ChannelPolicy, Fingerprint};

    fn toy_set() -> ImageSet {
        let fp = Fingerprint::new(360.0, &SpectrogramConfig::default(), 8, 8, ChannelPolicy::FirstLead);
        let mut set = ImageSet::new(fp, crt_label_names());
        for p in 0..10 {
            for s in 0..3 {
                let img = ImageTensor {
                    channels: 1,
                    height: 8,
                    width: 8,
                    data: vec![(p * 3 + s) as f32 / 30.0; 64],
                    normalization: vec![(0.0, 1.0)],
                };
                set.push(&img, usize::from(p < 6), &format!("P{p}")).unwrap();
            }
        }
        set
    }

    #[test]
    fn folds_hold_out_whole_patients() {
        let set = toy_set();
        let labels = patient_labels(&set).unwrap();
        let ids: Vec<String> = labels.keys().cloned().collect();
        let y: Vec<bool> = labels.values().map(|l| l.is_positive()).collect();
        let plan = make_folds(&y, &ids, 5, 1).unwrap();
        let mut seen = BTreeSet::new();
        for f in 0..5 {
            let (train, test) = split_fold(&set, &plan, f).unwrap();
            assert_eq!(train.len() + 3 * test.len(), set.len());
            for p in test.keys() {
                assert!(seen.insert(p.to_string()));
                assert!(train.iter().all(|&i| set.groups[i] != *p));
            }
        }
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn mixed_patient_labels_rejected() {
        let mut set = toy_set();
        set.labels[1] = 1 - set.labels[1];
        assert!(patient_labels(&set).is_err());
    }

    #[test]
    fn guideline_scores_the_rule() {
        let mut cov = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for i in 0..10 {
            let id = format!("P{i}");
            cov.insert(id.clone(), ClinicalCovariates { qrs_ms: 140.0 + 5.0 * i as f64, lbbb: true, lvef_pct: 25.0 });
            labels.insert(id, if i >= 2 { CrtLabel::Responder } else { CrtLabel::NonResponder });
        }
        let ids: Vec<String> = labels.keys().cloned().collect();
        let y: Vec<bool> = labels.values().map(|l| l.is_positive()).collect();
        let plan = make_folds(&y, &ids, 2, 0).unwrap();
        let r = guideline_crossval(&cov, &labels, &plan).unwrap();
        // qrs >= 150 from i = 2 on: the rule is perfect here
        assert_eq!(r.summary.pooled().fp + r.summary.pooled().fn_, 0);
        assert_eq!(r.folds.len(), 2);
    }

    #[test]
    fn logistic_on_separable_covariates() {
        let mut feats = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for i in 0..20 {
            let id = format!("P{i:02}");
            let pos = i % 2 == 0;
            feats.insert(id.clone(), vec![if pos { 2.0 } else { -2.0 } + 0.01 * i as f64]);
            labels.insert(id, if pos { CrtLabel::Responder } else { CrtLabel::NonResponder });
        }
        let ids: Vec<String> = labels.keys().cloned().collect();
        let y: Vec<bool> = labels.values().map(|l| l.is_positive()).collect();
        let plan = make_folds(&y, &ids, 4, 3).unwrap();
        for clf in [Classifier::Logistic(LogisticConfig::default()), Classifier::Svm(SvmConfig::default())] {
            let r = classical_crossval("m", &feats, &labels, &plan, &clf).unwrap();
            assert_eq!(r.mean_accuracy(), Some(1.0));
        }
    }
}
