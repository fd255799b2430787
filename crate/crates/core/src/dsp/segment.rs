use serde::{Deserialize, Serialize};

use crate::label::SegmentLabel;

/// Fraction of the forward RR interval kept before the R peak.
pub const PRE_R_FRACTION: f64 = 0.2;
/// Total window length as a multiple of the forward RR interval.
pub const WINDOW_RR: f64 = 1.2;

/// One heartbeat cut to 1.2 x its forward RR interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSegment {
    pub source_id: String,
    pub r_index: usize,
    /// Samples in mV, one sequence per lead; every lead has the same length.
    pub leads: Vec<Vec<f64>>,
    pub rr_s: f64,
    pub label: Option<SegmentLabel>,
}

impl BeatSegment {
    /// The first (detection) lead.
    pub fn samples(&self) -> &[f64] {
        &self.leads[0]
    }

    pub fn len(&self) -> usize {
        self.leads.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Expected window length for an RR interval of `rr_samples`.
pub fn window_len(rr_samples: usize) -> usize {
    (WINDOW_RR * rr_samples as f64).round() as usize
}

/// Cuts `[r - 0.2 RR, r + 1.0 RR)` around every peak that has a successor.
/// Windows that would leave the signal are dropped.
pub fn segment_beats(signal: &[f64], r_peaks: &[usize], fs: f64) -> Vec<BeatSegment> {
    segment_leads(&[signal], r_peaks, fs)
}

/// Multi-lead variant: the same windows are cut from every lead.
pub fn segment_leads(leads: &[&[f64]], r_peaks: &[usize], fs: f64) -> Vec<BeatSegment> {
    let Some(len) = leads.iter().map(|l| l.len()).min() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for w in r_peaks.windows(2) {
        let (r, next) = (w[0], w[1]);
        if next <= r {
            continue;
        }
        let rr = next - r;
        let pre = (PRE_R_FRACTION * rr as f64).round() as usize;
        let n = window_len(rr);
        let Some(start) = r.checked_sub(pre) else { continue };
        if start + n > len {
            continue;
        }
        out.push(BeatSegment {
            source_id: String::new(),
            r_index: r,
            leads: leads.iter().map(|l| l[start..start + n].to_vec()).collect(),
            rr_s: rr as f64 / fs,
            label: None,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_peaks_one_segment() {
        let signal: Vec<f64> = (0..2000).map(|i| i as f64).collect();
        let segs = segment_beats(&signal, &[1000, 1300], 360.0);
        assert_eq!(segs.len(), 1);
        let s = &segs[0];
        assert_eq!(s.r_index, 1000);
        assert_eq!(s.len(), 360);
        assert_eq!(s.samples()[0], 940.0);
        assert_eq!(*s.samples().last().unwrap(), 1299.0);
        assert_eq!(s.rr_s, 300.0 / 360.0);
        assert_eq!(s.len(), (1.2 * s.rr_s * 360.0).round() as usize);
    }

    #[test]
    fn degenerate_inputs() {
        let signal = vec![0.0; 2000];
        assert!(segment_beats(&signal, &[500], 360.0).is_empty());
        assert!(segment_beats(&signal, &[], 360.0).is_empty());
        // start would be 10 - 60 < 0
        assert!(segment_beats(&signal, &[10, 310], 360.0).is_empty());
        // end beyond the signal
        assert!(segment_beats(&signal, &[1900, 2100], 360.0).is_empty());
    }

    #[test]
    fn leads_share_windows() {
        let a: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| -v).collect();
        let segs = segment_leads(&[&a, &b], &[200, 500, 800], 250.0);
        assert_eq!(segs.len(), 2);
        for s in &segs {
            assert_eq!(s.leads.len(), 2);
            assert_eq!(s.leads[0].len(), 360);
            assert!(s.leads[0].iter().zip(&s.leads[1]).all(|(x, y)| *x == -*y));
        }
    }
}
