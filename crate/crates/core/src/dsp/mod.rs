//! Filtering, R-peak detection and beat segmentation.

mod detect;
mod filter;
mod resample;
mod segment;

pub use detect::{
    detect_r_peaks, detect_r_peaks_with, match_peaks, remove_baseline, shannon_energy, DetectorConfig, PeakMatch,
};
pub use filter::{design_chebyshev1, Biquad, FilterBand, FilterSpec, SosFilter};
pub use resample::resample_to;
pub use segment::{segment_beats, segment_leads, window_len, BeatSegment, PRE_R_FRACTION, WINDOW_RR};
