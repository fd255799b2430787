//! WFDB readers for the MIT-BIH arrhythmia database.
//!
//! Only what MIT-BIH needs is supported: single-segment headers, format 212
//! signal files and MIT-format binary annotation files.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// WFDB default when the record line omits the sampling frequency.
pub const DEFAULT_SAMPLING_RATE: f64 = 250.0;
/// WFDB default gain (ADC units per mV) when the field is absent or zero.
pub const DEFAULT_GAIN: f64 = 200.0;

/// The 48 records of the MIT-BIH arrhythmia database.
pub const MITBIH_RECORDS: [&str; 48] = [
    "100", "101", "102", "103", "104", "105", "106", "107", "108", "109", "111", "112", "113",
    "114", "115", "116", "117", "118", "119", "121", "122", "123", "124", "200", "201", "202",
    "203", "205", "207", "208", "209", "210", "212", "213", "214", "215", "217", "219", "220",
    "221", "222", "223", "228", "230", "231", "232", "233", "234",
];

/// Records containing paced beats, excluded from pretraining by default.
pub const PACED_RECORDS: [&str; 4] = ["102", "104", "107", "217"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSpec {
    pub file_name: String,
    pub format_code: u32,
    /// ADC units per millivolt.
    pub gain: f64,
    pub adc_resolution_bits: u32,
    pub adc_zero: i32,
    pub initial_value: i32,
    /// 16-bit sum of all samples, as stored in the header.
    pub checksum: Option<u16>,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub record_id: String,
    pub num_signals: usize,
    pub sampling_rate_hz: f64,
    pub samples_per_signal: usize,
    pub signals: Vec<SignalSpec>,
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(field: &str, what: &str, line: usize) -> Result<T> {
    field
        .parse()
        .map_err(|_| parse_err(line, format!("invalid {what} '{field}'")))
}

/// Parses the text of a `.hea` file.
pub fn parse_header(text: &str) -> Result<RecordHeader> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (line_no, record_line) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty header"))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    if fields.len() < 2 {
        return Err(parse_err(line_no, "record line needs a name and a signal count"));
    }
    let record_id = fields[0];
    if record_id.contains('/') {
        return Err(parse_err(line_no, "multi-segment records are not supported"));
    }
    let num_signals: usize = parse_num(fields[1], "signal count", line_no)?;
    if num_signals == 0 {
        return Err(parse_err(line_no, "signal count must be at least 1"));
    }
    let sampling_rate_hz = match fields.get(2) {
        // "360/counter(base)": only the leading frequency matters here.
        Some(f) => {
            let freq = f.split(['/', '(']).next().unwrap_or(f);
            parse_num::<f64>(freq, "sampling frequency", line_no)?
        }
        None => DEFAULT_SAMPLING_RATE,
    };
    if !(sampling_rate_hz > 0.0) || !sampling_rate_hz.is_finite() {
        return Err(parse_err(line_no, "sampling frequency must be positive"));
    }
    let samples_per_signal: usize = match fields.get(3) {
        Some(f) => parse_num(f, "sample count", line_no)?,
        None => 0,
    };

    let mut signals = Vec::with_capacity(num_signals);
    for _ in 0..num_signals {
        let (line_no, sig_line) = lines
            .next()
            .ok_or_else(|| parse_err(line_no, "fewer signal lines than the declared count"))?;
        signals.push(parse_signal_line(sig_line, line_no)?);
    }

    Ok(RecordHeader {
        record_id: record_id.to_string(),
        num_signals,
        sampling_rate_hz,
        samples_per_signal,
        signals,
    })
}

fn parse_signal_line(line: &str, line_no: usize) -> Result<SignalSpec> {
    let mut fields = line.split_whitespace();
    let file_name = fields
        .next()
        .ok_or_else(|| parse_err(line_no, "missing file name"))?
        .to_string();
    let format_field = fields
        .next()
        .ok_or_else(|| parse_err(line_no, "missing format"))?;
    // Strip samples-per-frame, skew and byte-offset suffixes: 212x2:3+10
    let format_digits: &str = format_field
        .split(|c: char| !c.is_ascii_digit())
        .next()
        .unwrap_or("");
    let format_code: u32 = parse_num(format_digits, "format", line_no)?;
    if format_code != 212 {
        return Err(Error::UnsupportedFormat(format_code));
    }

    let gain = match fields.next() {
        Some(g) => {
            let num = g.split(['(', '/']).next().unwrap_or(g);
            let v: f64 = parse_num(num, "gain", line_no)?;
            if v == 0.0 {
                DEFAULT_GAIN
            } else {
                v
            }
        }
        None => DEFAULT_GAIN,
    };
    if !(gain > 0.0) {
        return Err(parse_err(line_no, "gain must be positive"));
    }
    let adc_resolution_bits = match fields.next() {
        Some(f) => match parse_num::<u32>(f, "ADC resolution", line_no)? {
            0 => 12,
            v => v,
        },
        None => 12,
    };
    let adc_zero: i32 = match fields.next() {
        Some(f) => parse_num(f, "ADC zero", line_no)?,
        None => 0,
    };
    let initial_value: i32 = match fields.next() {
        Some(f) => parse_num(f, "initial value", line_no)?,
        None => adc_zero,
    };
    let checksum = match fields.next() {
        Some(f) => Some(parse_num::<i32>(f, "checksum", line_no)? as u16),
        None => None,
    };
    // block size, then free-text description
    let _block_size = fields.next();
    let description = fields.collect::<Vec<_>>().join(" ");

    Ok(SignalSpec {
        file_name,
        format_code,
        gain,
        adc_resolution_bits,
        adc_zero,
        initial_value,
        checksum,
        description,
    })
}

#[inline]
fn sign_extend_12(v: u16) -> i16 {
    ((v << 4) as i16) >> 4
}

/// Unpacks format-212 bytes: two 12-bit two's-complement samples per 3 bytes.
pub fn decode_format212(bytes: &[u8]) -> Result<Vec<i16>> {
    if bytes.len() % 3 != 0 {
        return Err(Error::Truncated(format!(
            "format 212 data length {} is not a multiple of 3",
            bytes.len()
        )));
    }
    let mut out = Vec::with_capacity(bytes.len() / 3 * 2);
    for g in bytes.chunks_exact(3) {
        let s1 = g[0] as u16 | ((g[1] as u16 & 0x0F) << 8);
        let s2 = g[2] as u16 | ((g[1] as u16 & 0xF0) << 4);
        out.push(sign_extend_12(s1));
        out.push(sign_extend_12(s2));
    }
    Ok(out)
}

/// Packs samples into format 212. The sample count must be even.
pub fn encode_format212(samples: &[i16]) -> Result<Vec<u8>> {
    if samples.len() % 2 != 0 {
        return Err(Error::Size(format!(
            "format 212 needs an even sample count, got {}",
            samples.len()
        )));
    }
    let mut out = Vec::with_capacity(samples.len() / 2 * 3);
    for pair in samples.chunks_exact(2) {
        for &s in pair {
            if !(-2048..=2047).contains(&s) {
                return Err(Error::Range(s as i32));
            }
        }
        let a = (pair[0] as u16) & 0x0FFF;
        let b = (pair[1] as u16) & 0x0FFF;
        out.push((a & 0xFF) as u8);
        out.push(((a >> 8) as u8) | (((b >> 8) as u8) << 4));
        out.push((b & 0xFF) as u8);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalRecord {
    pub header: RecordHeader,
    /// One sequence of 12-bit ADC samples per signal.
    pub channels: Vec<Vec<i16>>,
}

/// A checksum disagreement found while loading in lenient mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChecksumMismatch {
    pub signal: usize,
    pub expected: u16,
    pub computed: u16,
}

impl SignalRecord {
    /// Builds a record from a parsed header and the raw bytes of its
    /// (shared) format-212 data file. Checksum mismatches are returned for
    /// the caller to report unless `strict` is set, in which case the first
    /// one is an error.
    pub fn from_bytes(
        mut header: RecordHeader,
        bytes: &[u8],
        strict: bool,
    ) -> Result<(Self, Vec<ChecksumMismatch>)> {
        let nsig = header.num_signals;
        if header
            .signals
            .iter()
            .any(|s| s.file_name != header.signals[0].file_name)
        {
            return Err(Error::Format(
                "signals stored in different files are not supported".into(),
            ));
        }
        let interleaved = decode_format212(bytes)?;
        let available = interleaved.len() / nsig;
        if header.samples_per_signal == 0 {
            header.samples_per_signal = available;
        }
        let n = header.samples_per_signal;
        if available < n {
            return Err(Error::Truncated(format!(
                "{} holds {} samples per signal, header declares {}",
                header.signals[0].file_name, available, n
            )));
        }
        let mut channels = vec![Vec::with_capacity(n); nsig];
        for frame in interleaved.chunks_exact(nsig).take(n) {
            for (ch, &s) in channels.iter_mut().zip(frame) {
                ch.push(s);
            }
        }
        let record = SignalRecord { header, channels };
        let mismatches = record.checksum_mismatches();
        if strict {
            if let Some(m) = mismatches.first() {
                return Err(Error::Checksum {
                    signal: m.signal,
                    expected: m.expected,
                    computed: m.computed,
                });
            }
        }
        Ok((record, mismatches))
    }

    /// Reads `<dir>/<id>.hea` and its data file.
    pub fn load(dir: &Path, record_id: &str, strict: bool) -> Result<(Self, Vec<ChecksumMismatch>)> {
        let hea_path = dir.join(format!("{record_id}.hea"));
        let text = std::fs::read_to_string(&hea_path).map_err(|e| Error::file(&hea_path, e))?;
        let header = parse_header(&text)?;
        let dat_path = dir.join(&header.signals[0].file_name);
        let bytes = std::fs::read(&dat_path).map_err(|e| Error::file(&dat_path, e))?;
        Self::from_bytes(header, &bytes, strict)
    }

    pub fn checksum_mismatches(&self) -> Vec<ChecksumMismatch> {
        self.header
            .signals
            .iter()
            .zip(&self.channels)
            .enumerate()
            .filter_map(|(i, (spec, ch))| {
                let expected = spec.checksum?;
                let computed = channel_checksum(ch);
                (computed != expected).then_some(ChecksumMismatch {
                    signal: i,
                    expected,
                    computed,
                })
            })
            .collect()
    }

    pub fn to_millivolts(&self, channel: usize) -> Result<Vec<f64>> {
        to_millivolts(self, channel)
    }
}

/// Sum of samples modulo 2^16, the WFDB header checksum.
pub fn channel_checksum(samples: &[i16]) -> u16 {
    samples
        .iter()
        .fold(0u16, |acc, &s| acc.wrapping_add(s as u16))
}

/// Converts one channel to physical units: `(adu - adc_zero) / gain`.
pub fn to_millivolts(record: &SignalRecord, channel: usize) -> Result<Vec<f64>> {
    let spec = record.header.signals.get(channel).ok_or(Error::Index {
        index: channel,
        len: record.header.num_signals,
    })?;
    let zero = spec.adc_zero as f64;
    Ok(record.channels[channel]
        .iter()
        .map(|&adu| (adu as f64 - zero) / spec.gain)
        .collect())
}

/// AAMI EC57 heartbeat classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AamiClass {
    /// Normal and bundle-branch-block beats.
    N,
    /// Supraventricular ectopic beats.
    S,
    /// Ventricular ectopic beats.
    V,
    /// Fusion of ventricular and normal beats.
    F,
    /// Paced and unclassifiable beats.
    Q,
}

impl AamiClass {
    pub const ALL: [AamiClass; 5] = [
        AamiClass::N,
        AamiClass::S,
        AamiClass::V,
        AamiClass::F,
        AamiClass::Q,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AamiClass::N => "N",
            AamiClass::S => "S",
            AamiClass::V => "V",
            AamiClass::F => "F",
            AamiClass::Q => "Q",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }
}

impl fmt::Display for AamiClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// MIT beat symbols that take part in the AAMI consolidation.
pub const BEAT_SYMBOLS: [char; 15] = [
    'N', 'L', 'R', 'e', 'j', 'A', 'a', 'J', 'S', 'V', 'E', 'F', '/', 'f', 'Q',
];

pub fn map_to_aami(symbol: char) -> Result<AamiClass> {
    Ok(match symbol {
        'N' | 'L' | 'R' | 'e' | 'j' => AamiClass::N,
        'A' | 'a' | 'J' | 'S' => AamiClass::S,
        'V' | 'E' => AamiClass::V,
        'F' => AamiClass::F,
        '/' | 'f' | 'Q' => AamiClass::Q,
        other => return Err(Error::NotABeat(other)),
    })
}

/// Mnemonic for an MIT annotation code (`ecgcodes.h`).
pub fn code_symbol(code: u8) -> Option<char> {
    const TABLE: [char; 42] = [
        ' ', 'N', 'L', 'R', 'a', 'V', 'F', 'J', 'A', 'S', 'E', 'j', '/', 'Q', '~', '\0', '|',
        '\0', 's', 'T', '*', 'D', '"', '=', 'p', 'B', '^', 't', '+', 'u', '?', '!', '[', ']',
        'e', 'n', '@', 'x', 'f', '(', ')', 'r',
    ];
    TABLE
        .get(code as usize)
        .copied()
        .filter(|&c| c != '\0')
}

const SKIP: u8 = 59;
const NUM: u8 = 60;
const SUB: u8 = 61;
const CHN: u8 = 62;
const AUX: u8 = 63;

/// One decoded annotation of any kind (beats, rhythm changes, notes...).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub sample: i64,
    pub code: u8,
    pub subtype: u16,
    pub chan: u16,
    pub num: u16,
    pub aux: Option<Vec<u8>>,
}

impl Annotation {
    pub fn symbol(&self) -> Option<char> {
        code_symbol(self.code)
    }
}

struct WordReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl WordReader<'_> {
    fn word(&mut self) -> Option<u16> {
        let b = self.bytes.get(self.pos..self.pos + 2)?;
        self.pos += 2;
        Some(u16::from_le_bytes([b[0], b[1]]))
    }
}

/// Decodes an MIT-format annotation file into its full annotation stream.
pub fn decode_annotations(bytes: &[u8]) -> Result<Vec<Annotation>> {
    let mut r = WordReader { bytes, pos: 0 };
    let mut out: Vec<Annotation> = Vec::new();
    let mut time: i64 = 0;
    let mut num = 0u16;
    let mut chan = 0u16;

    loop {
        let w = r
            .word()
            .ok_or_else(|| Error::Codec("missing end-of-file marker".into()))?;
        if w == 0 {
            return Ok(out);
        }
        let code = (w >> 10) as u8;
        let field = w & 0x03FF;
        match code {
            SKIP => {
                let hi = r.word();
                let lo = r.word();
                let (hi, lo) = hi
                    .zip(lo)
                    .ok_or_else(|| Error::Codec("truncated SKIP interval".into()))?;
                time += (((hi as u32) << 16) | lo as u32) as i32 as i64;
            }
            NUM => {
                num = field;
                if let Some(a) = out.last_mut() {
                    a.num = field;
                }
            }
            SUB => {
                if let Some(a) = out.last_mut() {
                    a.subtype = field;
                }
            }
            CHN => {
                chan = field;
                if let Some(a) = out.last_mut() {
                    a.chan = field;
                }
            }
            AUX => {
                let len = field as usize;
                let padded = len + (len & 1);
                let payload = bytes
                    .get(r.pos..r.pos + padded)
                    .ok_or_else(|| Error::Codec("truncated AUX payload".into()))?;
                r.pos += padded;
                if let Some(a) = out.last_mut() {
                    a.aux = Some(payload[..len].to_vec());
                }
            }
            _ => {
                time += field as i64;
                out.push(Annotation {
                    sample: time,
                    code,
                    subtype: 0,
                    chan,
                    num,
                    aux: None,
                });
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BeatAnnotation {
    pub sample_index: usize,
    pub mit_symbol: char,
    pub aami: AamiClass,
}

/// Decodes an annotation file and keeps only beats that have an AAMI class.
pub fn parse_annotations(bytes: &[u8]) -> Result<Vec<BeatAnnotation>> {
    let mut beats = Vec::new();
    for a in decode_annotations(bytes)? {
        let Some(sym) = a.symbol() else { continue };
        let Ok(aami) = map_to_aami(sym) else { continue };
        if a.sample < 0 {
            return Err(Error::Codec(format!("negative beat time {}", a.sample)));
        }
        beats.push(BeatAnnotation {
            sample_index: a.sample as usize,
            mit_symbol: sym,
            aami,
        });
    }
    Ok(beats)
}

/// A signal record together with its reference beat annotations.
#[derive(Debug, Clone)]
pub struct AnnotatedRecord {
    pub signal: SignalRecord,
    pub beats: Vec<BeatAnnotation>,
    pub checksum_mismatches: Vec<ChecksumMismatch>,
}

/// Loads the `.hea` / `.dat` / `.atr` triplet of one record.
pub fn load_annotated(dir: &Path, record_id: &str, strict: bool) -> Result<AnnotatedRecord> {
    let (signal, checksum_mismatches) = SignalRecord::load(dir, record_id, strict)?;
    for m in &checksum_mismatches {
        log::warn!(
            "record {record_id}: checksum mismatch on signal {} (header {}, computed {})",
            m.signal,
            m.expected,
            m.computed
        );
    }
    let atr_path = dir.join(format!("{record_id}.atr"));
    let bytes = std::fs::read(&atr_path).map_err(|e| Error::file(&atr_path, e))?;
    let beats = parse_annotations(&bytes)?;
    Ok(AnnotatedRecord {
        signal,
        beats,
        checksum_mismatches,
    })
}

/// MIT annotation code for a mnemonic, the inverse of [`code_symbol`].
pub fn symbol_code(symbol: char) -> Option<u8> {
    (1..=41u8).find(|&c| code_symbol(c) == Some(symbol))
}

/// Encodes `(sample, code)` pairs, sorted by sample, as an MIT annotation
/// file. Intervals beyond 10 bits go through a SKIP word.
pub fn encode_annotations(annotations: &[(usize, u8)]) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(annotations.len() * 2 + 2);
    let mut prev = 0usize;
    for &(sample, code) in annotations {
        if sample < prev {
            return Err(Error::Codec(format!("annotation at {sample} precedes {prev}")));
        }
        if code == 0 || code >= SKIP {
            return Err(Error::Codec(format!("code {code} is not an annotation type")));
        }
        let mut interval = sample - prev;
        if interval > 0x03FF {
            let skip = i32::try_from(interval).map_err(|_| Error::Codec("interval too long".into()))? as u32;
            out.extend_from_slice(&((SKIP as u16) << 10).to_le_bytes());
            out.extend_from_slice(&((skip >> 16) as u16).to_le_bytes());
            out.extend_from_slice(&((skip & 0xFFFF) as u16).to_le_bytes());
            interval = 0;
        }
        out.extend_from_slice(&(((code as u16) << 10) | interval as u16).to_le_bytes());
        prev = sample;
    }
    out.extend_from_slice(&[0, 0]);
    Ok(out)
}

/// Writes `<id>.hea`, `<id>.dat` (format 212, interleaved) and, when beats
/// are given, `<id>.atr`.
pub fn write_record(
    dir: &Path,
    record_id: &str,
    fs: f64,
    channels: &[(Vec<i16>, SignalSpec)],
    beats: &[(usize, char)],
) -> Result<()> {
    let n = channels.first().map_or(0, |(c, _)| c.len());
    if channels.is_empty() || channels.iter().any(|(c, _)| c.len() != n) {
        return Err(Error::Shape("channels must be non-empty and equally long".into()));
    }
    let dat = format!("{record_id}.dat");
    let mut interleaved = Vec::with_capacity(n * channels.len() + 1);
    for i in 0..n {
        interleaved.extend(channels.iter().map(|(c, _)| c[i]));
    }
    if interleaved.len() % 2 == 1 {
        interleaved.push(0);
    }
    let mut header = format!("{record_id} {} {fs} {n}\n", channels.len());
    for (samples, spec) in channels {
        header.push_str(&format!(
            "{dat} 212 {} {} {} {} {} 0 {}\n",
            spec.gain,
            spec.adc_resolution_bits,
            spec.adc_zero,
            samples.first().copied().unwrap_or(0),
            channel_checksum(samples) as i16,
            spec.description
        ));
    }
    let write = |name: String, bytes: &[u8]| {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| Error::file(&path, e))
    };
    write(format!("{record_id}.hea"), header.as_bytes())?;
    write(dat, &encode_format212(&interleaved)?)?;
    if !beats.is_empty() {
        let coded = beats
            .iter()
            .map(|&(s, c)| symbol_code(c).map(|code| (s, code)).ok_or(Error::NotABeat(c)))
            .collect::<Result<Vec<_>>>()?;
        write(format!("{record_id}.atr"), &encode_annotations(&coded)?)?;
    }
    Ok(())
}
