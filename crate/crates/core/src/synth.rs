//! Synthetic ECGs with known R peaks, a five-class beat corpus and a
//! surrogate CRT cohort.
//!
//! Beats are sums of Gaussian waves (P, Q, R, S, T) placed at jittered RR
//! spacing, plus white noise. Everything is a pure function of the seed.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::Tensor;
use crate::error::{Error, Result};
use crate::label::CrtLabel;
use crate::metrics::ClinicalCovariates;
use crate::wfdb::AamiClass;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude_mv: f64,
    pub width_s: f64,
    /// Center relative to the R peak.
    pub offset_s: f64,
}

impl Wave {
    const fn new(amplitude_mv: f64, width_s: f64, offset_s: f64) -> Self {
        Wave {
            amplitude_mv,
            width_s,
            offset_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveSet {
    pub p: Wave,
    pub q: Wave,
    pub r: Wave,
    pub s: Wave,
    pub t: Wave,
}

impl Default for WaveSet {
    fn default() -> Self {
        WaveSet {
            p: Wave::new(0.15, 0.025, -0.20),
            q: Wave::new(-0.10, 0.010, -0.025),
            r: Wave::new(1.00, 0.010, 0.0),
            s: Wave::new(-0.25, 0.010, 0.025),
            t: Wave::new(0.30, 0.060, 0.30),
        }
    }
}

impl WaveSet {
    fn waves(&self) -> [Wave; 5] {
        [self.p, self.q, self.r, self.s, self.t]
    }

    /// Widens the QRS complex: R and S widths times `factor`.
    pub fn widened(mut self, factor: f64) -> Self {
        self.r.width_s *= factor;
        self.s.width_s *= factor;
        self
    }

    pub fn scaled(mut self, gain: f64) -> Self {
        for w in [&mut self.p, &mut self.q, &mut self.r, &mut self.s, &mut self.t] {
            w.amplitude_mv *= gain;
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub fs: f64,
    pub duration_s: f64,
    pub heart_rate_bpm: f64,
    /// Each RR interval is the mean times `1 + u * jitter`, `u` uniform in [-1, 1].
    pub rr_jitter_pct: f64,
    pub waves: WaveSet,
    pub noise_mv: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            fs: 360.0,
            duration_s: 10.0,
            heart_rate_bpm: 60.0,
            rr_jitter_pct: 0.0,
            waves: WaveSet::default(),
            noise_mv: 0.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("fs", self.fs),
            ("duration_s", self.duration_s),
            ("heart_rate_bpm", self.heart_rate_bpm),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let w = &self.waves;
        if [w.p, w.q, w.r, w.s, w.t].iter().any(|w| !(w.width_s > 0.0)) {
            return Err(Error::Config("wave widths must be positive".into()));
        }
        if !(0.0..100.0).contains(&self.rr_jitter_pct) || self.noise_mv < 0.0 {
            return Err(Error::Config("jitter must lie in [0, 100) and noise must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Adds one beat's waves centered on sample `r`.
fn add_beat(signal: &mut [f64], r: usize, fs: f64, waves: &[Wave]) {
    for w in waves {
        if w.amplitude_mv == 0.0 {
            continue;
        }
        let center = r as f64 + w.offset_s * fs;
        let sigma = w.width_s * fs;
        let reach = 6.0 * sigma + 1.0;
        let lo = (center - reach).floor().max(0.0) as usize;
        let hi = ((center + reach).ceil().max(0.0) as usize).min(signal.len());
        for (i, v) in signal.iter_mut().enumerate().take(hi).skip(lo) {
            let d = (i as f64 - center) / sigma;
            *v += w.amplitude_mv * (-0.5 * d * d).exp();
        }
    }
}

fn add_noise(signal: &mut [f64], sd: f64, rng: &mut ChaCha8Rng) {
    if sd > 0.0 {
        let normal = Normal::new(0.0, sd).expect("noise sd is positive");
        for v in signal.iter_mut() {
            *v += normal.sample(rng);
        }
    }
}

/// R-peak sample positions with jittered spacing, the first half an
/// interval into the record.
fn beat_positions(n: usize, fs: f64, rr_s: f64, jitter: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = 0.5 * rr_s;
    loop {
        let idx = (t * fs).round() as usize;
        if idx >= n {
            return out;
        }
        out.push(idx);
        let u: f64 = if jitter > 0.0 { rng.random_range(-1.0..=1.0) } else { 0.0 };
        t += rr_s * (1.0 + jitter * u);
    }
}

/// Returns the signal in mV and the exact R-peak indices.
pub fn synth_ecg(params: &SynthParams) -> (Vec<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let n = (params.duration_s * params.fs).round() as usize;
    let rr = 60.0 / params.heart_rate_bpm;
    let peaks = beat_positions(n, params.fs, rr, params.rr_jitter_pct / 100.0, &mut rng);
    let mut signal = vec![0.0; n];
    let waves = params.waves.waves();
    for &r in &peaks {
        add_beat(&mut signal, r, params.fs, &waves);
    }
    add_noise(&mut signal, params.noise_mv, &mut rng);
    (signal, peaks)
}

/// Well-mixed 64-bit seed derivation for per-item streams.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

// ---------------------------------------------------------------------------
// Five-class beat corpus
// ---------------------------------------------------------------------------

/// Template for a beat class, relative to the normal template.
fn class_waves(class: AamiClass) -> Vec<Wave> {
    let n = WaveSet::default();
    match class {
        AamiClass::N => n.waves().to_vec(),
        AamiClass::S => vec![
            Wave::new(-0.12, 0.020, -0.16),
            n.q,
            n.r,
            n.s,
            n.t,
        ],
        AamiClass::V => vec![
            Wave::new(1.30, 0.030, 0.0),
            Wave::new(-0.60, 0.035, 0.06),
            Wave::new(-0.45, 0.080, 0.32),
        ],
        AamiClass::F => vec![
            Wave::new(0.08, 0.025, -0.20),
            Wave::new(0.95, 0.018, 0.0),
            Wave::new(-0.40, 0.020, 0.04),
            Wave::new(0.05, 0.070, 0.31),
        ],
        AamiClass::Q => vec![
            Wave::new(1.20, 0.002, -0.05),
            Wave::new(0.90, 0.024, 0.0),
            Wave::new(-0.50, 0.028, 0.05),
            Wave::new(-0.30, 0.070, 0.33),
        ],
    }
}

/// RR multiplier of the interval preceding a beat of this class.
fn prematurity(class: AamiClass) -> f64 {
    match class {
        AamiClass::S => 0.70,
        AamiClass::V => 0.75,
        AamiClass::F => 0.90,
        _ => 1.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatCorpusConfig {
    pub records: usize,
    pub duration_s: f64,
    pub fs: f64,
    /// Relative frequency of N, S, V, F, Q.
    pub class_weights: [f64; 5],
    pub noise_mv: f64,
    pub seed: u64,
}

impl Default for BeatCorpusConfig {
    fn default() -> Self {
        BeatCorpusConfig {
            records: 20,
            duration_s: 60.0,
            fs: 360.0,
            class_weights: [0.4, 0.15, 0.15, 0.15, 0.15],
            noise_mv: 0.03,
            seed: 0,
        }
    }
}

/// A synthetic annotated record.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub id: String,
    pub fs: f64,
    pub signal: Vec<f64>,
    pub beats: Vec<(usize, AamiClass)>,
}

/// Records of mixed beat classes with per-beat ground truth.
pub fn synth_beat_corpus(cfg: &BeatCorpusConfig) -> Vec<SynthRecord> {
    let total: f64 = cfg.class_weights.iter().sum();
    (0..cfg.records)
        .map(|rec| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, rec as u64));
            let n = (cfg.duration_s * cfg.fs).round() as usize;
            let rr = 60.0 / rng.random_range(60.0..90.0);
            let gain = rng.random_range(0.7..1.3);
            let mut signal = vec![0.0; n];
            let mut beats = Vec::new();
            let mut t = 0.6 * rr;
            loop {
                let mut pick = rng.random_range(0.0..total);
                let mut class = AamiClass::N;
                for (c, w) in AamiClass::ALL.iter().zip(cfg.class_weights) {
                    if pick < w {
                        class = *c;
                        break;
                    }
                    pick -= w;
                }
                // premature beats shorten the interval before them
                if let Some(&(prev, _)) = beats.last() {
                    let jitter = 1.0 + 0.04 * rng.random_range(-1.0..=1.0);
                    t = prev as f64 / cfg.fs + rr * prematurity(class) * jitter;
                }
                let idx = (t * cfg.fs).round() as usize;
                if idx >= n {
                    break;
                }
                let waves: Vec<Wave> = class_waves(class)
                    .into_iter()
                    .map(|w| Wave {
                        amplitude_mv: w.amplitude_mv * gain,
                        ..w
                    })
                    .collect();
                add_beat(&mut signal, idx, cfg.fs, &waves);
                beats.push((idx, class));
                // compensatory pause after ventricular ectopy
                if class == AamiClass::V {
                    t += 0.25 * rr;
                }
            }
            add_noise(&mut signal, cfg.noise_mv, &mut rng);
            SynthRecord {
                id: format!("S{rec:03}"),
                fs: cfg.fs,
                signal,
                beats,
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Surrogate CRT cohort
// ---------------------------------------------------------------------------

/// Symbol written for each class when a corpus is stored as WFDB.
fn class_symbol(c: AamiClass) -> char {
    match c {
        AamiClass::N => 'N',
        AamiClass::S => 'A',
        AamiClass::V => 'V',
        AamiClass::F => 'F',
        AamiClass::Q => '/',
    }
}

const WFDB_GAIN: f64 = 200.0;
const WFDB_ZERO: i32 = 1024;

/// Stores records as WFDB triplets (format 212, gain 200, zero 1024) with
/// two channels: the signal as "MLII" and half of it as "V5". A `RECORDS`
/// file lists the ids.
pub fn write_wfdb_corpus(records: &[SynthRecord], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let to_adu = |mv: f64| -> i16 {
        ((mv * WFDB_GAIN).round() as i32 + WFDB_ZERO).clamp(-2048, 2047) as i16
    };
    let spec = |desc: &str| crate::wfdb::SignalSpec {
        file_name: String::new(),
        format_code: 212,
        gain: WFDB_GAIN,
        adc_resolution_bits: 11,
        adc_zero: WFDB_ZERO,
        initial_value: 0,
        checksum: None,
        description: desc.to_string(),
    };
    let mut ids = String::new();
    for rec in records {
        let lead0: Vec<i16> = rec.signal.iter().map(|&v| to_adu(v)).collect();
        let lead1: Vec<i16> = rec.signal.iter().map(|&v| to_adu(0.5 * v)).collect();
        let beats: Vec<(usize, char)> = rec.beats.iter().map(|&(i, c)| (i, class_symbol(c))).collect();
        crate::wfdb::write_record(dir, &rec.id, rec.fs, &[(lead0, spec("MLII")), (lead1, spec("V5"))], &beats)?;
        ids.push_str(&rec.id);
        ids.push('\n');
    }
    let path = dir.join("RECORDS");
    std::fs::write(&path, ids).map_err(|e| Error::file(&path, e))
}

/// Width factor at which responder covariates match the published
/// responder means.
pub const DEFAULT_EFFECT: f64 = 1.8;

/// Group means and standard deviations of the clinical covariates.
pub mod table1 {
    pub const RESPONDER_QRS_MS: (f64, f64) = (179.4, 19.8);
    pub const NON_RESPONDER_QRS_MS: (f64, f64) = (158.4, 23.7);
    pub const RESPONDER_LBBB: f64 = 44.0 / 46.0;
    pub const NON_RESPONDER_LBBB: f64 = 13.0 / 25.0;
    pub const RESPONDER_LVEF: (f64, f64) = (27.8, 5.1);
    pub const NON_RESPONDER_LVEF: (f64, f64) = (25.2, 4.7);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub n: usize,
    pub prevalence: f64,
    pub effect: f64,
    pub seed: u64,
    pub fs: f64,
    pub duration_s: f64,
    pub leads: usize,
    pub noise_mv: f64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            n: 71,
            prevalence: 46.0 / 71.0,
            effect: DEFAULT_EFFECT,
            seed: 0,
            fs: 500.0,
            duration_s: 10.0,
            leads: 2,
            noise_mv: 0.03,
        }
    }
}

impl CohortConfig {
    fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::Config(format!("cohort size {} < 10", self.n)));
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return Err(Error::Config(format!("prevalence {} not in (0, 1)", self.prevalence)));
        }
        if !(self.effect > 0.0) || self.leads == 0 || !(self.fs > 0.0) || !(self.duration_s > 0.0) {
            return Err(Error::Config("effect, leads, fs and duration must be positive".into()));
        }
        Ok(())
    }

    pub fn responders(&self) -> usize {
        (self.n as f64 * self.prevalence).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub patient_id: String,
    pub label: CrtLabel,
    /// Lead files, relative to the manifest's directory.
    pub leads: Vec<String>,
    pub fs: f64,
    pub covariates: ClinicalCovariates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortManifest {
    pub seed: u64,
    pub entries: Vec<CohortEntry>,
}

/// A patient's generated signals, before they are written anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPatient {
    pub patient_id: String,
    pub label: CrtLabel,
    pub fs: f64,
    pub leads: Vec<Vec<f64>>,
    pub r_peaks: Vec<usize>,
    pub covariates: ClinicalCovariates,
}

/// Per-lead projection of the template.
fn lead_waves(base: WaveSet, lead: usize) -> WaveSet {
    let mut w = base;
    if lead % 2 == 1 {
        w.r.amplitude_mv *= 0.7;
        w.s.amplitude_mv *= 1.8;
        w.t.amplitude_mv *= 0.8;
        w.p.amplitude_mv *= 0.6;
    }
    if lead >= 2 {
        w = w.scaled(1.0 - 0.1 * (lead / 2) as f64);
    }
    w
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

fn draw_covariates(label: CrtLabel, effect: f64, rng: &mut ChaCha8Rng) -> ClinicalCovariates {
    use table1::*;
    // Responder covariates move toward the published responder means as the
    // effect grows; at effect 1 both groups share one distribution.
    let s = if label == CrtLabel::Responder {
        ((effect - 1.0) / (DEFAULT_EFFECT - 1.0)).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let qrs = Normal::new(
        lerp(NON_RESPONDER_QRS_MS.0, RESPONDER_QRS_MS.0, s),
        lerp(NON_RESPONDER_QRS_MS.1, RESPONDER_QRS_MS.1, s),
    )
    .expect("positive sd");
    let lvef = Normal::new(
        lerp(NON_RESPONDER_LVEF.0, RESPONDER_LVEF.0, s),
        lerp(NON_RESPONDER_LVEF.1, RESPONDER_LVEF.1, s),
    )
    .expect("positive sd");
    let p_lbbb = lerp(NON_RESPONDER_LBBB, RESPONDER_LBBB, s);
    ClinicalCovariates {
        qrs_ms: qrs.sample(rng).max(80.0),
        lbbb: rng.random_bool(p_lbbb),
        // enrollment requires LVEF <= 35 %
        lvef_pct: lvef.sample(rng).clamp(10.0, 35.0),
    }
}

/// Generates the cohort in memory.
pub fn synth_crt_patients(cfg: &CohortConfig) -> Result<Vec<SynthPatient>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..cfg.n).collect();
    // Fisher-Yates with the master stream
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let mut labels = vec![CrtLabel::NonResponder; cfg.n];
    for &i in order.iter().take(cfg.responders()) {
        labels[i] = CrtLabel::Responder;
    }

    let width = cfg.n.to_string().len().max(3);
    Ok((0..cfg.n)
        .map(|i| {
            let label = labels[i];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64 + 1));
            let covariates = draw_covariates(label, cfg.effect, &mut rng);
            let hr = rng.random_range(55.0..95.0);
            let gain = rng.random_range(0.7..1.3);
            let mut base = WaveSet::default().scaled(gain);
            if label == CrtLabel::Responder {
                base = base.widened(cfg.effect);
            }
            let n = (cfg.duration_s * cfg.fs).round() as usize;
            let peaks = beat_positions(n, cfg.fs, 60.0 / hr, 0.05, &mut rng);
            let wander_hz = rng.random_range(0.1..0.3);
            let wander_phase = rng.random_range(0.0..std::f64::consts::TAU);
            let leads = (0..cfg.leads)
                .map(|lead| {
                    let waves = lead_waves(base, lead).waves();
                    let mut sig = vec![0.0; n];
                    for &r in &peaks {
                        add_beat(&mut sig, r, cfg.fs, &waves);
                    }
                    for (k, v) in sig.iter_mut().enumerate() {
                        let t = k as f64 / cfg.fs;
                        *v += 0.1 * (std::f64::consts::TAU * wander_hz * t + wander_phase).sin();
                    }
                    add_noise(&mut sig, cfg.noise_mv, &mut rng);
                    sig
                })
                .collect();
            SynthPatient {
                patient_id: format!("P{:0width$}", i + 1),
                label,
                fs: cfg.fs,
                leads,
                r_peaks: peaks,
                covariates,
            }
        })
        .collect())
}

pub const COHORT_MANIFEST: &str = "cohort.json";

/// Generates the cohort and writes one tensor file per lead plus
/// `cohort.json` into `out_dir`.
pub fn synth_crt_cohort(cfg: &CohortConfig, out_dir: &Path) -> Result<CohortManifest> {
    let patients = synth_crt_patients(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let mut entries = Vec::with_capacity(patients.len());
    for p in patients {
        let mut leads = Vec::with_capacity(p.leads.len());
        for (k, sig) in p.leads.iter().enumerate() {
            let name = format!("{}_lead{}.ecgt", p.patient_id, k);
            let t = Tensor::new(vec![sig.len()], sig.iter().map(|&v| v as f32).collect())?;
            t.write(&out_dir.join(&name))?;
            leads.push(name);
        }
        entries.push(CohortEntry {
            patient_id: p.patient_id,
            label: p.label,
            leads,
            fs: p.fs,
            covariates: p.covariates,
        });
    }
    let manifest = CohortManifest {
        seed: cfg.seed,
        entries,
    };
    let path = out_dir.join(COHORT_MANIFEST);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json).map_err(|e| Error::file(&path, e))?;
    Ok(manifest)
}

/// A manifest together with the directory its lead paths are relative to.
#[derive(Debug, Clone)]
pub struct Cohort {
    pub manifest: CohortManifest,
    pub base_dir: PathBuf,
}

impl Cohort {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(manifest_path).map_err(|e| Error::file(manifest_path, e))?;
        let manifest: CohortManifest = serde_json::from_str(&text)?;
        let mut seen = std::collections::HashSet::new();
        for e in &manifest.entries {
            if !seen.insert(e.patient_id.as_str()) {
                return Err(Error::Data(format!("duplicate patient id {}", e.patient_id)));
            }
            if e.leads.is_empty() {
                return Err(Error::Data(format!("patient {} has no leads", e.patient_id)));
            }
        }
        let base_dir = manifest_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        Ok(Cohort { manifest, base_dir })
    }

    /// Reads every lead of one entry, in mV.
    pub fn read_leads(&self, entry: &CohortEntry) -> Result<Vec<Vec<f64>>> {
        entry
            .leads
            .iter()
            .map(|rel| {
                let t = Tensor::read(&self.base_dir.join(rel))?;
                if t.dims.len() != 1 {
                    return Err(Error::Shape(format!("lead file {rel} has dims {:?}", t.dims)));
                }
                Ok(t.data.iter().map(|&v| v as f64).collect())
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sixty_bpm_ten_seconds() {
        let (sig, peaks) = synth_ecg(&SynthParams::default());
        assert_eq!(sig.len(), 3600);
        assert_eq!(peaks.len(), 10);
        assert!(peaks.windows(2).all(|w| w[1] - w[0] == 360));
    }

    #[test]
    fn noiseless_maximum_at_r() {
        let params = SynthParams {
            heart_rate_bpm: 75.0,
            ..SynthParams::default()
        };
        let (sig, peaks) = synth_ecg(&params);
        let rr = (60.0 / 75.0 * 360.0) as usize;
        for &r in &peaks {
            let lo = r.saturating_sub(rr / 2);
            let hi = (r + rr / 2).min(sig.len());
            let argmax = (lo..hi).max_by(|&a, &b| sig[a].total_cmp(&sig[b])).unwrap();
            assert_eq!(argmax, r);
        }
    }

    #[test]
    fn same_seed_same_signal() {
        let p = SynthParams {
            noise_mv: 0.1,
            rr_jitter_pct: 5.0,
            seed: 9,
            ..SynthParams::default()
        };
        assert_eq!(synth_ecg(&p), synth_ecg(&p));
        let q = SynthParams { seed: 10, ..p.clone() };
        assert_ne!(synth_ecg(&p).0, synth_ecg(&q).0);
    }

    #[test]
    fn jittered_gaps_within_bounds() {
        let p = SynthParams {
            duration_s: 300.0,
            heart_rate_bpm: 72.0,
            rr_jitter_pct: 5.0,
            seed: 4,
            ..SynthParams::default()
        };
        let (_, peaks) = synth_ecg(&p);
        let mean = 60.0 / 72.0 * 360.0;
        for w in peaks.windows(2) {
            let gap = (w[1] - w[0]) as f64;
            assert!(gap >= mean * 0.95 - 1.0 && gap <= mean * 1.05 + 1.0, "{gap}");
        }
    }

    #[test]
    fn cohort_counts_and_determinism() {
        let cfg = CohortConfig {
            duration_s: 2.0,
            ..CohortConfig::default()
        };
        let a = synth_crt_patients(&cfg).unwrap();
        let responders = a.iter().filter(|p| p.label == CrtLabel::Responder).count();
        assert_eq!(responders, 46);
        assert_eq!(a.len() - responders, 25);
        assert_eq!(a, synth_crt_patients(&cfg).unwrap());
        assert_eq!(a[0].leads.len(), 2);
        let ids: std::collections::HashSet<_> = a.iter().map(|p| &p.patient_id).collect();
        assert_eq!(ids.len(), 71);
    }

    #[test]
    fn invalid_cohort_configs() {
        let base = CohortConfig::default();
        assert!(synth_crt_patients(&CohortConfig { n: 9, ..base.clone() }).is_err());
        assert!(synth_crt_patients(&CohortConfig { prevalence: 1.0, ..base.clone() }).is_err());
        assert!(synth_crt_patients(&CohortConfig { prevalence: 0.0, ..base }).is_err());
    }

    #[test]
    fn responder_qrs_mean_matches_table() {
        let cfg = CohortConfig {
            n: 1000,
            prevalence: 0.5,
            duration_s: 1.0,
            leads: 1,
            seed: 11,
            ..CohortConfig::default()
        };
        let qrs: Vec<f64> = synth_crt_patients(&cfg)
            .unwrap()
            .into_iter()
            .filter(|p| p.label == CrtLabel::Responder)
            .map(|p| p.covariates.qrs_ms)
            .collect();
        assert_eq!(qrs.len(), 500);
        let mean = qrs.iter().sum::<f64>() / qrs.len() as f64;
        let se = table1::RESPONDER_QRS_MS.1 / (qrs.len() as f64).sqrt();
        assert!((mean - 179.4).abs() < 3.0 * se, "mean {mean}");
    }

    #[test]
    fn null_effect_gives_identical_generators() {
        // With effect 1 the label does not enter any random draw or template.
        let cfg = CohortConfig {
            effect: 1.0,
            duration_s: 2.0,
            ..CohortConfig::default()
        };
        let patients = synth_crt_patients(&cfg).unwrap();
        for (i, p) in patients.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64 + 1));
            let flipped = match p.label {
                CrtLabel::Responder => CrtLabel::NonResponder,
                CrtLabel::NonResponder => CrtLabel::Responder,
            };
            assert_eq!(draw_covariates(flipped, 1.0, &mut rng), p.covariates);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = draw_covariates(CrtLabel::Responder, 1.0, &mut rng);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = draw_covariates(CrtLabel::NonResponder, 1.0, &mut rng);
        assert_eq!(a, b);
        assert_eq!(WaveSet::default().widened(1.0), WaveSet::default());
    }

    #[test]
    fn cohort_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = CohortConfig {
            n: 12,
            prevalence: 0.5,
            duration_s: 2.0,
            ..CohortConfig::default()
        };
        let manifest = synth_crt_cohort(&cfg, dir.path()).unwrap();
        let cohort = Cohort::load(&dir.path().join(COHORT_MANIFEST)).unwrap();
        assert_eq!(cohort.manifest, manifest);
        let leads = cohort.read_leads(&manifest.entries[0]).unwrap();
        let mem = synth_crt_patients(&cfg).unwrap();
        assert_eq!(leads.len(), 2);
        for (a, b) in leads[0].iter().zip(&mem[0].leads[0]) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let json: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join(COHORT_MANIFEST)).unwrap()).unwrap();
        let e = &json["entries"][0];
        for key in ["patient_id", "label", "leads", "fs", "covariates"] {
            assert!(e.get(key).is_some(), "{key}");
        }
        assert!(e["covariates"].get("qrs_ms").is_some());
        assert!(json.get("seed").is_some());
    }

    #[test]
    fn beat_corpus_has_all_classes() {
        let recs = synth_beat_corpus(&BeatCorpusConfig {
            records: 3,
            duration_s: 60.0,
            ..BeatCorpusConfig::default()
        });
        let mut seen = std::collections::BTreeSet::new();
        for r in &recs {
            assert!(r.beats.windows(2).all(|w| w[1].0 > w[0].0));
            seen.extend(r.beats.iter().map(|b| b.1));
        }
        assert_eq!(seen.len(), 5);
    }

    #[test]
    fn params_validate() {
        assert!(SynthParams::default().validate().is_ok());
        let bad = SynthParams { heart_rate_bpm: 0.0, ..SynthParams::default() };
        assert!(bad.validate().is_err());
        let mut bad = SynthParams::default();
        bad.waves.r.width_s = 0.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn wfdb_corpus_loads_with_annotations() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BeatCorpusConfig { records: 2, duration_s: 10.0, ..BeatCorpusConfig::default() };
        let corpus = synth_beat_corpus(&cfg);
        write_wfdb_corpus(&corpus, dir.path()).unwrap();
        let ids = std::fs::read_to_string(dir.path().join("RECORDS")).unwrap();
        assert_eq!(ids.lines().collect::<Vec<_>>(), vec!["S000", "S001"]);
        let rec = crate::wfdb::load_annotated(dir.path(), "S001", true).unwrap();
        let truth = &corpus[1];
        assert_eq!(rec.beats.len(), truth.beats.len());
        for (b, &(i, c)) in rec.beats.iter().zip(&truth.beats) {
            assert_eq!((b.sample_index, b.aami), (i, c));
        }
        let mv = rec.signal.to_millivolts(0).unwrap();
        for (a, b) in mv.iter().zip(&truth.signal) {
            assert!((a - b).abs() <= 0.5 / WFDB_GAIN + 1e-12);
        }
    }
}
