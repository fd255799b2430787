use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::filter::{design_chebyshev1, FilterBand, FilterSpec};
use crate::error::Result;

/// Parameters of the Shannon-energy R-peak detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub band_hz: (f64, f64),
    pub band_order: usize,
    pub band_ripple_db: f64,
    /// Moving-average length applied to the Shannon energy.
    pub smoothing_s: f64,
    /// Fraction of the running envelope maximum a peak has to exceed.
    pub threshold_ratio: f64,
    /// Width of the centered running-maximum window.
    pub threshold_window_s: f64,
    pub refractory_s: f64,
    /// Half-width of the search for the absolute maximum around each peak.
    pub refine_s: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            band_hz: (5.0, 15.0),
            band_order: 4,
            band_ripple_db: 1.0,
            smoothing_s: 0.15,
            threshold_ratio: 0.3,
            threshold_window_s: 2.0,
            refractory_s: 0.2,
            refine_s: 0.025,
        }
    }
}

/// Zero-phase 0.5 Hz high-pass that strips baseline wander.
pub fn remove_baseline(signal: &[f64], fs: f64) -> Result<Vec<f64>> {
    let hp = design_chebyshev1(&FilterSpec::baseline_highpass(fs))?;
    hp.apply_zero_phase(signal)
}

/// Smoothed Shannon energy envelope.
///
/// The first difference is scaled to a peak magnitude of one, so every
/// term `-d^2 ln d^2` is nonnegative and vanishes where `|d|` is 0 or 1.
/// The result is smoothed by a centered moving average of `smoothing_s`.
pub fn shannon_energy(signal: &[f64], fs: f64, smoothing_s: f64) -> Vec<f64> {
    let n = signal.len();
    if n == 0 {
        return Vec::new();
    }
    let mut d = vec![0.0; n];
    for i in 1..n {
        d[i] = signal[i] - signal[i - 1];
    }
    let peak = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return vec![0.0; n];
    }
    let se: Vec<f64> = d
        .iter()
        .map(|v| {
            let sq = (v / peak) * (v / peak);
            if sq == 0.0 {
                0.0
            } else {
                // ln(sq) <= 0, clamp round-off at |d| = 1
                (-sq * sq.ln()).max(0.0)
            }
        })
        .collect();
    moving_average(&se, ((smoothing_s * fs).round() as usize).max(1))
}

/// Centered moving average; the window shrinks at the edges.
fn moving_average(x: &[f64], len: usize) -> Vec<f64> {
    let n = x.len();
    let half = len / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + len - half).min(n);
            ((prefix[hi] - prefix[lo]) / (hi - lo) as f64).max(0.0)
        })
        .collect()
}

/// Maximum over the centered window `[i - half, i + half]`.
fn running_max(x: &[f64], half: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for (i, o) in out.iter_mut().enumerate() {
        let hi = (i + half).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&j| x[j] <= x[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&j| j + half < i) {
            dq.pop_front();
        }
        *o = x[*dq.front().expect("window is never empty")];
    }
    out
}

/// R-peak sample indices with the default detector configuration.
pub fn detect_r_peaks(signal: &[f64], fs: f64) -> Vec<usize> {
    detect_r_peaks_with(signal, fs, &DetectorConfig::default())
}

/// Band-pass, Shannon envelope, adaptive threshold with refractory period,
/// then refinement to the absolute maximum of the baseline-removed signal.
///
/// Returns an empty list for signals shorter than one second or containing
/// non-finite samples.
pub fn detect_r_peaks_with(signal: &[f64], fs: f64, cfg: &DetectorConfig) -> Vec<usize> {
    if !(fs > 0.0) || (signal.len() as f64) < fs {
        return Vec::new();
    }
    let band = FilterSpec {
        band: FilterBand::Bandpass(cfg.band_hz.0, cfg.band_hz.1),
        order: cfg.band_order,
        passband_ripple_db: cfg.band_ripple_db,
        fs,
    };
    let (Ok(bp), Ok(base)) = (design_chebyshev1(&band), remove_baseline(signal, fs)) else {
        return Vec::new();
    };
    let Ok(filtered) = bp.apply_zero_phase(signal) else {
        return Vec::new();
    };
    let env = shannon_energy(&filtered, fs, cfg.smoothing_s);
    let half = ((cfg.threshold_window_s * fs / 2.0).round() as usize).max(1);
    let roof = running_max(&env, half);
    let refractory = (cfg.refractory_s * fs).round() as usize;

    let mut picks: Vec<usize> = Vec::new();
    for i in 1..env.len().saturating_sub(1) {
        let v = env[i];
        if v <= 0.0 || v <= cfg.threshold_ratio * roof[i] || v <= env[i - 1] || v < env[i + 1] {
            continue;
        }
        match picks.last_mut() {
            Some(last) if i - *last < refractory => {
                if v > env[*last] {
                    *last = i;
                }
            }
            _ => picks.push(i),
        }
    }

    let reach = (cfg.refine_s * fs).round() as usize;
    let mut refined: Vec<usize> = picks
        .iter()
        .map(|&p| {
            let lo = p.saturating_sub(reach);
            let hi = (p + reach).min(base.len() - 1);
            (lo..=hi)
                .max_by(|&a, &b| base[a].abs().total_cmp(&base[b].abs()).then(b.cmp(&a)))
                .unwrap_or(p)
        })
        .collect();
    refined.sort_unstable();

    let mut out: Vec<usize> = Vec::with_capacity(refined.len());
    for r in refined {
        match out.last_mut() {
            Some(last) if r - *last < refractory.max(1) => {
                if base[r].abs() > base[*last].abs() {
                    *last = r;
                }
            }
            _ => out.push(r),
        }
    }
    out
}

/// One-to-one matching of detected peaks against reference beats.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakMatch {
    /// `(detected index, reference index)` positions into the inputs.
    pub pairs: Vec<(usize, usize)>,
    pub false_positives: usize,
    pub false_negatives: usize,
}

impl PeakMatch {
    pub fn true_positives(&self) -> usize {
        self.pairs.len()
    }

    pub fn sensitivity(&self) -> Option<f64> {
        let d = self.pairs.len() + self.false_negatives;
        (d > 0).then(|| self.pairs.len() as f64 / d as f64)
    }

    /// Positive predictive value.
    pub fn ppv(&self) -> Option<f64> {
        let d = self.pairs.len() + self.false_positives;
        (d > 0).then(|| self.pairs.len() as f64 / d as f64)
    }
}

/// Pairs sorted detections with sorted reference indices lying within
/// `tolerance` samples. Each peak is used at most once.
pub fn match_peaks(detected: &[usize], reference: &[usize], tolerance: usize) -> PeakMatch {
    let mut pairs = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < detected.len() && j < reference.len() {
        let (d, r) = (detected[i], reference[j]);
        if d.abs_diff(r) <= tolerance {
            // prefer the closer of two candidate references
            if j + 1 < reference.len() && reference[j + 1].abs_diff(d) < r.abs_diff(d) {
                j += 1;
                continue;
            }
            pairs.push((i, j));
            i += 1;
            j += 1;
        } else if d < r {
            i += 1;
        } else {
            j += 1;
        }
    }
    PeakMatch {
        false_positives: detected.len() - pairs.len(),
        false_negatives: reference.len() - pairs.len(),
        pairs,
    }
}
