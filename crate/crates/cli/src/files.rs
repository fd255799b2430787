//! On-disk layouts of the `ingest` and `beats` outputs.
//!
//! `ingest`: `ingest.json`, and per record `<id>.ecgt` (signals x samples,
//! mV) plus `<id>.ann.tsv` (`sample`, `symbol`, `aami` per beat).
//!
//! `beats`: `beats.json`, `segments.tsv` (one row per segment: source,
//! R index, RR in seconds, label, offset, length) and `segments.ecgt`
//! (leads x total samples, segments concatenated).

use std::fmt::Write as _;
use std::path::Path;

use ecgtl_core::dsp::BeatSegment;
use ecgtl_core::{AamiClass, Error, Result, SegmentLabel, Tensor};
use serde::{Deserialize, Serialize};

pub const INGEST_MANIFEST: &str = "ingest.json";
pub const BEATS_MANIFEST: &str = "beats.json";
pub const SEGMENT_INDEX: &str = "segments.tsv";
pub const SEGMENT_DATA: &str = "segments.ecgt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestedRecord {
    pub record_id: String,
    pub fs: f64,
    pub samples: usize,
    pub signals: Vec<String>,
    pub beats: usize,
    pub checksum_mismatches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestManifest {
    pub source: String,
    pub records: Vec<IngestedRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatsManifest {
    pub fs: f64,
    pub leads: usize,
    pub label_names: Vec<String>,
    pub records: Vec<String>,
    pub segments: usize,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_annotations(path: &Path, beats: &[(usize, char, AamiClass)]) -> Result<()> {
    let mut out = String::from("sample\tsymbol\taami\n");
    for (i, s, c) in beats {
        let _ = writeln!(out, "{i}\t{s}\t{}", c.name());
    }
    std::fs::write(path, out).map_err(|e| Error::file(path, e))
}

pub fn read_annotations(path: &Path) -> Result<Vec<(usize, AamiClass)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = |msg: &str| Error::Parse {
            line: n + 1,
            msg: format!("{}: {msg}", path.display()),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(bad("expected 3 columns"));
        }
        let i = cols[0].parse().map_err(|_| bad("bad sample index"))?;
        let c = AamiClass::from_name(cols[2]).ok_or_else(|| bad("unknown class"))?;
        out.push((i, c));
    }
    Ok(out)
}

/// Writes the segment index and the concatenated samples.
pub fn write_segments(dir: &Path, segments: &[BeatSegment], leads: usize) -> Result<()> {
    let total: usize = segments.iter().map(BeatSegment::len).sum();
    let mut data = vec![0f32; leads * total];
    let mut index = String::from("source\tr_index\trr_s\tlabel\toffset\tlen\n");
    let mut offset = 0;
    for s in segments {
        if s.leads.len() != leads {
            return Err(Error::Shape(format!("segment has {} leads, expected {leads}", s.leads.len())));
        }
        for (l, lead) in s.leads.iter().enumerate() {
            for (k, &v) in lead.iter().enumerate() {
                data[l * total + offset + k] = v as f32;
            }
        }
        let label = s.label.map(|l| l.to_string()).unwrap_or_else(|| "-".into());
        let _ = writeln!(index, "{}\t{}\t{}\t{}\t{}\t{}", s.source_id, s.r_index, s.rr_s, label, offset, s.len());
        offset += s.len();
    }
    let path = dir.join(SEGMENT_INDEX);
    std::fs::write(&path, index).map_err(|e| Error::file(&path, e))?;
    Tensor::new(vec![leads, total], data)?.write(&dir.join(SEGMENT_DATA))
}

pub fn read_segments(dir: &Path) -> Result<Vec<BeatSegment>> {
    let path = dir.join(SEGMENT_INDEX);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::file(&path, e))?;
    let t = Tensor::read(&dir.join(SEGMENT_DATA))?;
    if t.dims.len() != 2 {
        return Err(Error::Shape(format!("segment data has {} dimensions", t.dims.len())));
    }
    let (leads, total) = (t.dims[0], t.dims[1]);
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = |msg: &str| Error::Parse {
            line: n + 1,
            msg: format!("{}: {msg}", path.display()),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(bad("expected 6 columns"));
        }
        let r_index = cols[1].parse().map_err(|_| bad("bad R index"))?;
        let rr_s = cols[2].parse().map_err(|_| bad("bad RR"))?;
        let label = match cols[3] {
            "-" => None,
            s => Some(s.parse::<SegmentLabel>().map_err(|_| bad("unknown label"))?),
        };
        let offset: usize = cols[4].parse().map_err(|_| bad("bad offset"))?;
        let len: usize = cols[5].parse().map_err(|_| bad("bad length"))?;
        if offset + len > total {
            return Err(bad("segment runs past the data"));
        }
        let seg_leads = (0..leads)
            .map(|l| t.data[l * total + offset..l * total + offset + len].iter().map(|&v| v as f64).collect())
            .collect();
        out.push(BeatSegment {
            source_id: cols[0].to_string(),
            r_index,
            leads: seg_leads,
            rr_s,
            label,
        });
    }
    Ok(out)
}
