//! Signal to image: resampling, baseline removal, R-peak detection, 1.2-RR
//! segmentation, reference labeling and spectrogram images.

use ecgtl_core::dsp::{detect_r_peaks, remove_baseline, resample_to, segment_leads, BeatSegment};
use ecgtl_core::spectrogram::{to_image, to_image_stacked, ImageTensor, SpectrogramConfig, SpectrogramMaker};
use ecgtl_core::synth::SynthPatient;
use ecgtl_core::wfdb::AnnotatedRecord;
use ecgtl_core::{AamiClass, ChannelPolicy, CrtLabel, Error, Fingerprint, Result, SegmentLabel};
use rayon::prelude::*;

use crate::dataset::ImageSet;

/// Rate every signal is brought to before detection.
pub const TARGET_FS: f64 = 360.0;
/// A detected beat takes the label of a reference beat at most this far away.
pub const MATCH_TOLERANCE_S: f64 = 0.05;

pub fn aami_label_names() -> Vec<String> {
    AamiClass::ALL.iter().map(|c| c.name().to_string()).collect()
}

pub fn crt_label_names() -> Vec<String> {
    [CrtLabel::NonResponder, CrtLabel::Responder].iter().map(|c| c.name().to_string()).collect()
}

/// Everything that decides how a beat becomes an image.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocess {
    pub fs: f64,
    pub spectrogram: SpectrogramConfig,
    pub height: usize,
    pub width: usize,
    pub channel_policy: ChannelPolicy,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            fs: TARGET_FS,
            spectrogram: SpectrogramConfig::default(),
            height: 96,
            width: 96,
            channel_policy: ChannelPolicy::FirstLead,
        }
    }
}

impl Preprocess {
    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::new(self.fs, &self.spectrogram, self.height, self.width, self.channel_policy)
    }

    pub fn from_fingerprint(fp: &Fingerprint) -> Self {
        Preprocess {
            fs: fp.fs,
            spectrogram: fp.spectrogram_config(),
            height: fp.image_height,
            width: fp.image_width,
            channel_policy: fp.channel_policy,
        }
    }
}

/// Runs `f` on a pool of `workers` threads (at least one). Results keep
/// input order, so output does not depend on the worker count.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Resamples every lead to `fs_out` and strips baseline wander.
pub fn condition_leads(leads: &[Vec<f64>], fs_in: f64, fs_out: f64) -> Result<Vec<Vec<f64>>> {
    leads
        .iter()
        .map(|l| remove_baseline(&resample_to(l, fs_in, fs_out), fs_out))
        .collect()
}

/// Detects R peaks on the first conditioned lead and cuts every lead.
pub fn detect_and_segment(source_id: &str, leads: &[Vec<f64>], fs: f64) -> Result<Vec<BeatSegment>> {
    let first = leads.first().ok_or_else(|| Error::Data(format!("{source_id}: no leads")))?;
    let peaks = detect_r_peaks(first, fs);
    let views: Vec<&[f64]> = leads.iter().map(Vec::as_slice).collect();
    let mut segs = segment_leads(&views, &peaks, fs);
    for s in &mut segs {
        s.source_id = source_id.to_string();
    }
    Ok(segs)
}

/// Keeps the segments whose R peak lies within `tolerance` samples of a
/// reference beat (sorted by sample) and labels them with it.
pub fn label_by_reference(
    segments: Vec<BeatSegment>,
    reference: &[(usize, SegmentLabel)],
    tolerance: usize,
) -> Vec<BeatSegment> {
    segments
        .into_iter()
        .filter_map(|mut s| {
            let pos = reference.partition_point(|&(i, _)| i < s.r_index);
            let nearest = [pos.checked_sub(1), Some(pos)]
                .into_iter()
                .flatten()
                .filter_map(|k| reference.get(k))
                .min_by_key(|(i, _)| i.abs_diff(s.r_index))?;
            (nearest.0.abs_diff(s.r_index) <= tolerance).then(|| {
                s.label = Some(nearest.1);
                s
            })
        })
        .collect()
}

/// Labeled beats of one annotated record. Reference positions are mapped
/// to the target rate before matching.
pub fn record_beats(
    source_id: &str,
    leads_mv: &[Vec<f64>],
    fs: f64,
    reference: &[(usize, AamiClass)],
    pre: &Preprocess,
) -> Result<Vec<BeatSegment>> {
    let leads = condition_leads(leads_mv, fs, pre.fs)?;
    let segs = detect_and_segment(source_id, &leads, pre.fs)?;
    let scale = pre.fs / fs;
    let reference: Vec<(usize, SegmentLabel)> = reference
        .iter()
        .map(|&(i, c)| ((i as f64 * scale).round() as usize, SegmentLabel::Aami(c)))
        .collect();
    let tol = (MATCH_TOLERANCE_S * pre.fs).round() as usize;
    Ok(label_by_reference(segs, &reference, tol))
}

/// Beats of a WFDB record on the selected channels (the first one drives
/// detection).
pub fn wfdb_beats(record: &AnnotatedRecord, channels: &[usize], pre: &Preprocess) -> Result<Vec<BeatSegment>> {
    let leads = channels
        .iter()
        .map(|&c| record.signal.to_millivolts(c))
        .collect::<Result<Vec<_>>>()?;
    let reference: Vec<(usize, AamiClass)> = record.beats.iter().map(|b| (b.sample_index, b.aami)).collect();
    record_beats(
        &record.signal.header.record_id,
        &leads,
        record.signal.header.sampling_rate_hz,
        &reference,
        pre,
    )
}

/// Beats of one cohort patient, all labeled with the patient's outcome.
pub fn patient_beats(patient_id: &str, leads_mv: &[Vec<f64>], fs: f64, label: CrtLabel, pre: &Preprocess) -> Result<Vec<BeatSegment>> {
    let leads = condition_leads(leads_mv, fs, pre.fs)?;
    let mut segs = detect_and_segment(patient_id, &leads, pre.fs)?;
    for s in &mut segs {
        s.label = Some(SegmentLabel::Crt(label));
    }
    Ok(segs)
}

/// Lead count a policy needs.
fn leads_needed(policy: ChannelPolicy) -> usize {
    match policy {
        ChannelPolicy::FirstLead => 1,
        ChannelPolicy::StackedLeads { leads } => leads,
    }
}

/// Spectrogram image of one segment under the channel policy.
pub fn segment_image(seg: &BeatSegment, maker: &SpectrogramMaker, pre: &Preprocess) -> Result<ImageTensor> {
    let need = leads_needed(pre.channel_policy);
    if seg.leads.len() < need {
        return Err(Error::Data(format!(
            "{} has {} leads, channel policy needs {need}",
            seg.source_id,
            seg.leads.len()
        )));
    }
    match pre.channel_policy {
        ChannelPolicy::FirstLead => to_image(&maker.make(seg.samples())?, pre.height, pre.width, 1),
        ChannelPolicy::StackedLeads { leads } => {
            let specs = seg.leads[..leads]
                .iter()
                .map(|l| maker.make(l))
                .collect::<Result<Vec<_>>>()?;
            to_image_stacked(&specs, pre.height, pre.width)
        }
    }
}

/// Images for all segments, computed on `workers` threads.
pub fn segment_images(segments: &[BeatSegment], pre: &Preprocess, workers: usize) -> Result<Vec<ImageTensor>> {
    let maker = SpectrogramMaker::new(pre.spectrogram, pre.fs)?;
    with_workers(workers, || {
        segments
            .par_iter()
            .map(|s| segment_image(s, &maker, pre))
            .collect::<Result<Vec<_>>>()
    })?
}

/// Builds a set from labeled segments; the source id becomes the group.
pub fn image_set(segments: &[BeatSegment], label_names: Vec<String>, pre: &Preprocess, workers: usize) -> Result<ImageSet> {
    let images = segment_images(segments, pre, workers)?;
    let mut set = ImageSet::new(pre.fingerprint(), label_names);
    for (seg, img) in segments.iter().zip(&images) {
        let label = seg
            .label
            .ok_or_else(|| Error::Data(format!("unlabeled segment at {} in {}", seg.r_index, seg.source_id)))?;
        set.push(img, label.class_index(), &seg.source_id)?;
    }
    Ok(set)
}

/// Image set of a cohort: every detected beat of every patient, grouped by
/// patient id.
pub fn cohort_image_set(patients: &[(String, CrtLabel, Vec<Vec<f64>>, f64)], pre: &Preprocess, workers: usize) -> Result<ImageSet> {
    let per_patient = with_workers(workers, || {
        patients
            .par_iter()
            .map(|(id, label, leads, fs)| patient_beats(id, leads, *fs, *label, pre))
            .collect::<Result<Vec<_>>>()
    })??;
    for ((id, ..), segs) in patients.iter().zip(&per_patient) {
        if segs.is_empty() {
            return Err(Error::Data(format!("patient {id}: no complete beats detected")));
        }
    }
    let segments: Vec<BeatSegment> = per_patient.into_iter().flatten().collect();
    image_set(&segments, crt_label_names(), pre, workers)
}

/// In-memory synthetic patients in the form [`cohort_image_set`] takes.
pub fn synth_patient_inputs(patients: Vec<SynthPatient>) -> Vec<(String, CrtLabel, Vec<Vec<f64>>, f64)> {
    patients
        .into_iter()
        .map(|p| (p.patient_id, p.label, p.leads, p.fs))
        .collect()
}
