//! Confusion counts, accuracy/sensitivity/specificity, fold summaries and
//! the comparison baselines: the guideline rule, logistic regression and a
//! linear SVM.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::CrtLabel;

/// Binary counts, responder as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }
}

pub fn confusion_binary(predictions: &[bool], labels: &[bool]) -> Result<ConfusionMatrix> {
    if predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Data("no predictions".into()));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &l) in predictions.iter().zip(labels) {
        cm.add(p, l);
    }
    Ok(cm)
}

pub fn confusion(predictions: &[CrtLabel], labels: &[CrtLabel]) -> Result<ConfusionMatrix> {
    let p: Vec<bool> = predictions.iter().map(|l| l.is_positive()).collect();
    let l: Vec<bool> = labels.iter().map(|l| l.is_positive()).collect();
    confusion_binary(&p, &l)
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn accuracy(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp + cm.tn, cm.total())
}

pub fn sensitivity(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tp, cm.tp + cm.fn_)
}

pub fn specificity(cm: &ConfusionMatrix) -> Option<f64> {
    ratio(cm.tn, cm.tn + cm.fp)
}

/// K x K counts, rows are true classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MulticlassConfusion {
    pub classes: usize,
    pub counts: Vec<u64>,
}

impl MulticlassConfusion {
    pub fn new(classes: usize) -> Self {
        MulticlassConfusion {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_indices(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&p, &l) in predictions.iter().zip(labels) {
            if p >= classes || l >= classes {
                return Err(Error::Data(format!("class index out of range 0..{classes}")));
            }
            m.counts[l * classes + p] += 1;
        }
        Ok(m)
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        let diag = (0..self.classes).map(|k| self.get(k, k)).sum();
        ratio(diag, self.total())
    }

    /// One-vs-rest counts for class `k`.
    pub fn one_vs_rest(&self, k: usize) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for a in 0..self.classes {
            for p in 0..self.classes {
                let c = self.get(a, p);
                match (p == k, a == k) {
                    (true, true) => cm.tp += c,
                    (true, false) => cm.fp += c,
                    (false, false) => cm.tn += c,
                    (false, true) => cm.fn_ += c,
                }
            }
        }
        cm
    }
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoldMetrics {
    pub confusion: ConfusionMatrix,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl From<ConfusionMatrix> for FoldMetrics {
    fn from(cm: ConfusionMatrix) -> Self {
        FoldMetrics {
            confusion: cm,
            accuracy: accuracy(&cm),
            sensitivity: sensitivity(&cm),
            specificity: specificity(&cm),
        }
    }
}

/// Mean and sample standard deviation over the folds where a metric is
/// defined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub defined: usize,
}

impl Summary {
    pub fn of(values: impl IntoIterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.into_iter().flatten().collect();
        let n = v.len();
        let mean = (n > 0).then(|| v.iter().sum::<f64>() / n as f64);
        let std = mean.filter(|_| n > 1).map(|m| {
            let ss: f64 = v.iter().map(|x| (x - m) * (x - m)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Summary { mean, std, defined: n }
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ± {}", fmt_metric(self.mean), fmt_metric(self.std))
    }
}

/// Three decimals, or `n/a` for an undefined value.
pub fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.3}"),
        None => "n/a".to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    pub accuracy: Summary,
    pub sensitivity: Summary,
    pub specificity: Summary,
}

impl MetricsReport {
    pub fn from_folds(folds: &[ConfusionMatrix]) -> Self {
        let folds: Vec<FoldMetrics> = folds.iter().map(|&cm| cm.into()).collect();
        for (k, f) in folds.iter().enumerate() {
            for (name, v) in [
                ("accuracy", f.accuracy),
                ("sensitivity", f.sensitivity),
                ("specificity", f.specificity),
            ] {
                if v.is_none() {
                    log::warn!("fold {k}: {name} undefined, excluded from its mean");
                }
            }
        }
        MetricsReport {
            accuracy: Summary::of(folds.iter().map(|f| f.accuracy)),
            sensitivity: Summary::of(folds.iter().map(|f| f.sensitivity)),
            specificity: Summary::of(folds.iter().map(|f| f.specificity)),
            folds,
        }
    }

    pub fn pooled(&self) -> ConfusionMatrix {
        let mut cm = ConfusionMatrix::default();
        for f in &self.folds {
            cm.merge(&f.confusion);
        }
        cm
    }
}

/// Plain-text table, one row per method.
pub fn render_table(rows: &[(String, MetricsReport)]) -> String {
    let width = rows.iter().map(|(m, _)| m.chars().count()).max().unwrap_or(0).max(6);
    let mut out = format!(
        "{:<width$}  {:<15}  {:<15}  {:<15}\n",
        "Method", "Accuracy", "Sensitivity", "Specificity"
    );
    for (method, r) in rows {
        out.push_str(&format!(
            "{:<width$}  {:<15}  {:<15}  {:<15}\n",
            method,
            r.accuracy.to_string(),
            r.sensitivity.to_string(),
            r.specificity.to_string()
        ));
    }
    out
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClinicalCovariates {
    pub qrs_ms: f64,
    pub lbbb: bool,
    pub lvef_pct: f64,
}

impl ClinicalCovariates {
    pub fn validate(&self) -> Result<()> {
        if !(self.qrs_ms > 0.0) {
            return Err(Error::Data(format!("qrs_ms {} must be positive", self.qrs_ms)));
        }
        if !(self.lvef_pct > 0.0 && self.lvef_pct < 100.0) {
            return Err(Error::Data(format!("lvef_pct {} outside (0, 100)", self.lvef_pct)));
        }
        Ok(())
    }
}

pub const GUIDELINE_QRS_MS: f64 = 150.0;

/// Class IA rule: LBBB with QRS of at least 150 ms.
pub fn guideline_predict(c: &ClinicalCovariates) -> CrtLabel {
    if c.lbbb && c.qrs_ms >= GUIDELINE_QRS_MS {
        CrtLabel::Responder
    } else {
        CrtLabel::NonResponder
    }
}

/// `w . x + b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearClassifier {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LinearClassifier {
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.decision(x) > 0.0
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

fn check_training_set(x: &[Vec<f64>], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Data(format!("{} rows for {} labels", x.len(), y.len())));
    }
    let d = x.first().map(Vec::len).ok_or_else(|| Error::Data("empty training set".into()))?;
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Data("rows differ in length".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite feature".into()));
    }
    if y.iter().all(|&v| v) || y.iter().all(|&v| !v) {
        return Err(Error::Data("training labels contain a single class".into()));
    }
    Ok(d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogisticConfig {
    /// Penalty `l2 / 2 * |w|^2` added to the mean log loss; the intercept
    /// is not penalized.
    pub l2: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            l2: 1e-2,
            max_iter: 200,
            tol: 1e-6,
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub linear: LinearClassifier,
    pub iterations: usize,
    pub gradient_norm: f64,
}

impl LogisticModel {
    /// Probability of the positive class.
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        sigmoid(self.linear.decision(x))
    }

    pub fn predict(&self, x: &[f64]) -> bool {
        self.predict_proba(x) > 0.5
    }
}

/// Regularized logistic regression by damped Newton iterations.
///
/// The solver is deterministic, so no seed is involved.
pub fn logistic_fit(x: &[Vec<f64>], y: &[bool], cfg: &LogisticConfig) -> Result<LogisticModel> {
    let d = check_training_set(x, y)?;
    let n = x.len() as f64;
    let p = d + 1;
    let design = DMatrix::from_fn(x.len(), p, |i, j| if j < d { x[i][j] } else { 1.0 });
    let target = DVector::from_fn(x.len(), |i, _| if y[i] { 1.0 } else { 0.0 });
    let mut beta = DVector::zeros(p);

    let objective = |beta: &DVector<f64>| -> f64 {
        let z = &design * beta;
        let loss: f64 = z
            .iter()
            .zip(target.iter())
            .map(|(&z, &t)| softplus(z) - t * z)
            .sum::<f64>()
            / n;
        let reg: f64 = beta.rows(0, d).iter().map(|w| w * w).sum();
        loss + 0.5 * cfg.l2 * reg
    };

    let mut iterations = 0;
    let mut gnorm = f64::INFINITY;
    for it in 0..cfg.max_iter {
        let z = &design * &beta;
        let prob = z.map(sigmoid);
        let mut grad = design.transpose() * (&prob - &target) / n;
        for j in 0..d {
            grad[j] += cfg.l2 * beta[j];
        }
        gnorm = grad.norm();
        iterations = it;
        if gnorm < cfg.tol {
            break;
        }
        let wdiag = prob.map(|q| (q * (1.0 - q)).max(1e-12));
        let mut weighted = design.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= wdiag[i] / n;
        }
        let mut hess = design.transpose() * weighted;
        for j in 0..p {
            // the ridge keeps the Hessian positive definite on separable data
            hess[(j, j)] += if j < d { cfg.l2 } else { 0.0 } + 1e-12;
        }
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => hess.lu().solve(&grad).unwrap_or_else(|| grad.clone()),
        };
        let f0 = objective(&beta);
        let slope = grad.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &beta - &step * t;
            if objective(&cand) <= f0 - 1e-4 * t * slope || t < 1e-10 {
                beta = cand;
                break;
            }
            t *= 0.5;
        }
        iterations = it + 1;
    }
    Ok(LogisticModel {
        linear: LinearClassifier {
            weights: beta.rows(0, d).iter().copied().collect(),
            bias: beta[d],
        },
        iterations,
        gradient_norm: gnorm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmConfig {
    /// Weight of `|w|^2 / 2` against the mean hinge loss.
    pub lambda: f64,
    pub iterations: usize,
    /// Mini-batch size; `None` uses every sample each step.
    pub batch: Option<usize>,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda: 1e-2,
            iterations: 2000,
            batch: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub linear: LinearClassifier,
    pub objective: f64,
}

impl SvmModel {
    pub fn predict(&self, x: &[f64]) -> bool {
        self.linear.predict(x)
    }
}

pub fn svm_objective(lin: &LinearClassifier, x: &[Vec<f64>], y: &[bool], lambda: f64) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &t)| {
            let s = if t { 1.0 } else { -1.0 };
            (1.0 - s * lin.decision(r)).max(0.0)
        })
        .sum::<f64>()
        / x.len() as f64;
    hinge + 0.5 * lambda * lin.weight_norm().powi(2)
}

/// Linear SVM by subgradient descent on the mean hinge loss plus
/// `lambda / 2 * |w|^2`, step `1 / (lambda t)`, unpenalized bias.
/// Returns the iterate with the lowest objective seen.
pub fn linear_svm_fit(x: &[Vec<f64>], y: &[bool], cfg: &SvmConfig) -> Result<SvmModel> {
    let d = check_training_set(x, y)?;
    if !(cfg.lambda > 0.0) {
        return Err(Error::Data(format!("lambda {} must be positive", cfg.lambda)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..x.len()).collect();
    let batch = cfg.batch.unwrap_or(x.len()).clamp(1, x.len());
    let mut cursor = x.len();

    let mut cur = LinearClassifier {
        weights: vec![0.0; d],
        bias: 0.0,
    };
    let mut best = cur.clone();
    let mut best_obj = svm_objective(&cur, x, y, cfg.lambda);
    let radius = 1.0 / cfg.lambda.sqrt();
    let mut gw = vec![0.0; d];
    for t in 1..=cfg.iterations {
        if batch < x.len() && cursor + batch > x.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let idx: &[usize] = if batch < x.len() {
            let s = &order[cursor..cursor + batch];
            cursor += batch;
            s
        } else {
            &order
        };
        gw.iter_mut().zip(&cur.weights).for_each(|(g, w)| *g = cfg.lambda * w);
        let mut gb = 0.0;
        let inv = 1.0 / idx.len() as f64;
        for &i in idx {
            let s = if y[i] { 1.0 } else { -1.0 };
            if s * cur.decision(&x[i]) < 1.0 {
                for (g, v) in gw.iter_mut().zip(&x[i]) {
                    *g -= s * v * inv;
                }
                gb -= s * inv;
            }
        }
        let eta = 1.0 / (cfg.lambda * t as f64);
        for (w, g) in cur.weights.iter_mut().zip(&gw) {
            *w -= eta * g;
        }
        cur.bias -= eta * gb;
        let norm = cur.weight_norm();
        if norm > radius {
            cur.weights.iter_mut().for_each(|w| *w *= radius / norm);
        }
        let obj = svm_objective(&cur, x, y, cfg.lambda);
        if obj < best_obj {
            best_obj = obj;
            best = cur.clone();
        }
    }
    Ok(SvmModel {
        linear: best,
        objective: best_obj,
    })
}

/// Per-feature z-scoring fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale = (0..d)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn cm(tp: u64, fp: u64, tn: u64, fn_: u64) -> ConfusionMatrix {
        ConfusionMatrix { tp, fp, tn, fn_ }
    }

    #[test]
    fn one_of_each() {
        let c = confusion_binary(&[true, true, false, false], &[true, false, false, true]).unwrap();
        assert_eq!(c, cm(1, 1, 1, 1));
        let c = confusion_binary(&[true, false], &[true, false]).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert!(confusion_binary(&[], &[]).is_err());
        assert!(confusion_binary(&[true], &[]).is_err());
    }

    #[test]
    fn formulas() {
        let c = cm(36, 10, 15, 10);
        assert_eq!(accuracy(&c), Some(51.0 / 71.0));
        assert_eq!(sensitivity(&c), Some(36.0 / 46.0));
        assert_eq!(fmt_metric(sensitivity(&c)), "0.783");
        assert_eq!(specificity(&cm(3, 0, 0, 1)), None);
        assert_eq!(fmt_metric(None), "n/a");
    }

    #[test]
    fn summary_formatting() {
        let s = Summary::of([Some(0.7), Some(0.8), None]);
        assert_eq!(s.defined, 2);
        assert_eq!(s.to_string(), "0.750 ± 0.071");
        assert_eq!(Summary::of([Some(0.5)]).to_string(), "0.500 ± n/a");
    }

    #[test]
    fn report_table_layout() {
        let r = MetricsReport::from_folds(&[cm(5, 1, 4, 2), cm(6, 2, 3, 1)]);
        assert_eq!(r.pooled(), cm(11, 3, 7, 3));
        let table = render_table(&[("ResNet-50".into(), r)]);
        assert!(table.starts_with("Method"));
        assert!(table.contains("ResNet-50"));
        assert_eq!(table.matches(" ± ").count(), 3);
    }

    #[test]
    fn multiclass_counts() {
        let m = MulticlassConfusion::from_indices(&[0, 1, 2, 2], &[0, 1, 1, 2], 3).unwrap();
        assert_eq!(m.get(1, 2), 1);
        assert_eq!(m.accuracy(), Some(0.75));
        assert_eq!(m.one_vs_rest(2), cm(1, 1, 2, 0));
        assert!(MulticlassConfusion::from_indices(&[3], &[0], 3).is_err());
    }

    #[test]
    fn guideline_rule() {
        let c = |qrs_ms, lbbb| ClinicalCovariates {
            qrs_ms,
            lbbb,
            lvef_pct: 25.0,
        };
        assert_eq!(guideline_predict(&c(179.0, true)), CrtLabel::Responder);
        assert_eq!(guideline_predict(&c(150.0, true)), CrtLabel::Responder);
        assert_eq!(guideline_predict(&c(140.0, true)), CrtLabel::NonResponder);
        assert_eq!(guideline_predict(&c(160.0, false)), CrtLabel::NonResponder);
        assert!(c(0.0, true).validate().is_err());
        assert!(ClinicalCovariates { lvef_pct: 100.0, ..c(150.0, true) }.validate().is_err());
    }

    proptest! {
        #[test]
        fn guideline_monotone(a in 50.0f64..250.0, b in 50.0f64..250.0) {
            let lo = ClinicalCovariates { qrs_ms: a.min(b), lbbb: true, lvef_pct: 30.0 };
            let hi = ClinicalCovariates { qrs_ms: a.max(b), ..lo };
            prop_assert!(guideline_predict(&lo).index() <= guideline_predict(&hi).index());
        }

        #[test]
        fn matches_brute_force(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..1000)) {
            let (p, l): (Vec<bool>, Vec<bool>) = pairs.iter().cloned().unzip();
            let c = confusion_binary(&p, &l).unwrap();
            let correct = pairs.iter().filter(|(a, b)| a == b).count() as u64;
            let pos = l.iter().filter(|&&v| v).count() as u64;
            let tp = pairs.iter().filter(|(a, b)| *a && *b).count() as u64;
            let neg = l.len() as u64 - pos;
            let tn = pairs.iter().filter(|(a, b)| !*a && !*b).count() as u64;
            prop_assert_eq!(c.tp + c.tn, correct);
            prop_assert_eq!(accuracy(&c), Some(correct as f64 / p.len() as f64));
            prop_assert_eq!(sensitivity(&c), (pos > 0).then(|| tp as f64 / pos as f64));
            prop_assert_eq!(specificity(&c), (neg > 0).then(|| tn as f64 / neg as f64));
        }

        #[test]
        fn sensitivity_ignores_extra_negatives(tp in 0u64..50, fn_ in 1u64..50, fp in 0u64..50, tn in 0u64..50, extra in 1u64..50) {
            let a = cm(tp, fp, tn, fn_);
            let b = cm(tp, fp, tn + extra, fn_);
            prop_assert_eq!(sensitivity(&a), sensitivity(&b));
            let c = cm(tp + extra, fp, tn, fn_);
            prop_assert_eq!(specificity(&a), specificity(&c));
        }
    }

    /// Two Gaussian clouds separated by a wide gap along (1, 1).
    fn separable(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let pos = i % 2 == 0;
            let shift = if pos { 2.0 } else { -2.0 };
            x.push(vec![shift + rng.random_range(-1.0..1.0), shift + rng.random_range(-1.0..1.0)]);
            y.push(pos);
        }
        (x, y)
    }

    #[test]
    fn logistic_separates_toy_set() {
        let (x, y) = separable(60, 1);
        let m = logistic_fit(&x, &y, &LogisticConfig::default()).unwrap();
        assert!(m.gradient_norm < 1e-6, "{}", m.gradient_norm);
        assert!(x.iter().zip(&y).all(|(r, &t)| m.predict(r) == t));
    }

    #[test]
    fn logistic_zero_features_gives_prior() {
        let x = vec![vec![0.0, 0.0]; 40];
        let y: Vec<bool> = (0..40).map(|i| i < 30).collect();
        let m = logistic_fit(&x, &y, &LogisticConfig::default()).unwrap();
        assert!((m.predict_proba(&[0.0, 0.0]) - 0.75).abs() < 1e-6);
    }

    #[test]
    fn logistic_l2_shrinks_weights() {
        // overlapping clouds so the tiny-penalty solution is finite
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + 0.5 * r[1] + rng.random_range(-0.8..0.8) > 0.0).collect();
        let tiny = logistic_fit(&x, &y, &LogisticConfig { l2: 1e-8, ..Default::default() }).unwrap();
        let mut prev = tiny.linear.weight_norm();
        for l2 in [1e-3, 1e-2, 1e-1, 1.0] {
            let m = logistic_fit(&x, &y, &LogisticConfig { l2, ..Default::default() }).unwrap();
            assert!(m.linear.weight_norm() <= prev + 1e-9);
            prev = m.linear.weight_norm();
        }
    }

    #[test]
    fn single_class_rejected() {
        let x = vec![vec![1.0]; 4];
        assert!(logistic_fit(&x, &[true; 4], &LogisticConfig::default()).is_err());
        assert!(linear_svm_fit(&x, &[false; 4], &SvmConfig::default()).is_err());
    }

    #[test]
    fn svm_separates_toy_set() {
        let (x, y) = separable(60, 2);
        let m = linear_svm_fit(&x, &y, &SvmConfig { lambda: 1e-3, ..Default::default() }).unwrap();
        assert!(x.iter().zip(&y).all(|(r, &t)| m.predict(r) == t));
        let hinge: f64 = x
            .iter()
            .zip(&y)
            .map(|(r, &t)| (1.0 - if t { 1.0 } else { -1.0 } * m.linear.decision(r)).max(0.0))
            .sum();
        assert!(hinge < 1e-9, "hinge {hinge}");
    }

    #[test]
    fn svm_label_flip_negates_boundary() {
        let (x, y) = separable(40, 3);
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let cfg = SvmConfig::default();
        let a = linear_svm_fit(&x, &y, &cfg).unwrap().linear;
        let b = linear_svm_fit(&x, &flipped, &cfg).unwrap().linear;
        for (u, v) in a.weights.iter().zip(&b.weights) {
            assert_eq!(*u, -*v);
        }
        assert_eq!(a.bias, -b.bias);
    }

    #[test]
    fn svm_duplicates_keep_direction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<Vec<f64>> = (0..50).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] - r[1] + rng.random_range(-0.5..0.5) > 0.0).collect();
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<bool> = y.iter().chain(&y).cloned().collect();
        let cfg = SvmConfig::default();
        let a = linear_svm_fit(&x, &y, &cfg).unwrap().linear;
        let b = linear_svm_fit(&x2, &y2, &cfg).unwrap().linear;
        let cos = a.weights.iter().zip(&b.weights).map(|(u, v)| u * v).sum::<f64>()
            / (a.weight_norm() * b.weight_norm());
        assert!((1.0 - cos).abs() < 1e-6, "cos {cos}");
    }

    #[test]
    fn svm_minibatch_is_deterministic() {
        let (x, y) = separable(40, 4);
        let cfg = SvmConfig { batch: Some(8), seed: 3, ..Default::default() };
        assert_eq!(linear_svm_fit(&x, &y, &cfg).unwrap(), linear_svm_fit(&x, &y, &cfg).unwrap());
    }

    #[test]
    fn standardizer_zero_mean_unit_var() {
        let x = vec![vec![1.0, 5.0], vec![3.0, 5.0]];
        let s = Standardizer::fit(&x);
        assert_eq!(s.apply(&x[0]), vec![-1.0, 0.0]);
    }
}
