//! Short-time Fourier transform spectrograms and the image tensors built
//! from them.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to magnitudes before taking the logarithm.
pub const MAG_EPSILON: f64 = 1e-10;
pub const DEFAULT_FLOOR_DB: f64 = -80.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Hamming,
}

impl std::str::FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hann" | "hanning" => Ok(WindowKind::Hann),
            "hamming" => Ok(WindowKind::Hamming),
            other => Err(Error::Config(format!("unknown window '{other}'"))),
        }
    }
}

impl std::fmt::Display for WindowKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WindowKind::Hann => "hann",
            WindowKind::Hamming => "hamming",
        })
    }
}

/// Symmetric window of length `n`.
pub fn make_window(kind: WindowKind, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::Size(format!("window length {n} < 2")));
    }
    let denom = (n - 1) as f64;
    let (a0, a1) = match kind {
        WindowKind::Hann => (0.5, 0.5),
        WindowKind::Hamming => (0.54, 0.46),
    };
    Ok((0..n)
        .map(|k| a0 - a1 * (2.0 * std::f64::consts::PI * k as f64 / denom).cos())
        .collect())
}

/// Length after zero-padding a signal of `len` samples.
pub fn padded_len(len: usize, window_len: usize, hop: usize) -> usize {
    len.max(window_len + 4 * hop)
}

/// Complex STFT frames, stored frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StftFrames {
    pub frames: usize,
    pub bins: usize,
    pub data: Vec<Complex64>,
}

impl StftFrames {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }
}

/// Reusable STFT plan: a window, a hop and an FFT of the window length.
pub struct Stft {
    window: Vec<f64>,
    hop: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(window: Vec<f64>, hop: usize) -> Result<Self> {
        if hop == 0 {
            return Err(Error::Size("hop must be at least 1".into()));
        }
        if window.len() < 2 {
            return Err(Error::Size(format!("window length {} < 2", window.len())));
        }
        let fft = FftPlanner::new().plan_fft_forward(window.len());
        Ok(Stft { window, hop, fft })
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    /// One-sided frames (bins `0..=N/2`) of the zero-padded signal.
    pub fn one_sided(&self, signal: &[f64]) -> Result<StftFrames> {
        self.run(signal, self.window.len() / 2 + 1)
    }

    /// All `N` bins per frame.
    pub fn full(&self, signal: &[f64]) -> Result<StftFrames> {
        self.run(signal, self.window.len())
    }

    fn run(&self, signal: &[f64], keep: usize) -> Result<StftFrames> {
        if signal.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = self.window.len();
        let total = padded_len(signal.len(), n, self.hop);
        let frames = (total - n) / self.hop + 1;
        let mut data = Vec::with_capacity(frames * keep);
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..frames {
            let start = t * self.hop;
            for (k, slot) in buf.iter_mut().enumerate() {
                let x = signal.get(start + k).copied().unwrap_or(0.0);
                *slot = Complex64::new(x * self.window[k], 0.0);
            }
            self.fft.process(&mut buf);
            data.extend_from_slice(&buf[..keep]);
        }
        Ok(StftFrames {
            frames,
            bins: keep,
            data,
        })
    }
}

/// One-sided STFT of `signal`, zero-padded to `window.len() + 4 * hop`.
pub fn stft(signal: &[f64], window: &[f64], hop: usize) -> Result<StftFrames> {
    Stft::new(window.to_vec(), hop)?.one_sided(signal)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramMeta {
    pub window_len: usize,
    pub hop: usize,
    pub fs: f64,
    pub window_kind: WindowKind,
}

/// dB magnitudes laid out `[freq_bins x time_frames]`, bin 0 first.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub values: Vec<f64>,
    pub meta: SpectrogramMeta,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.values[bin * self.frames + frame]
    }
}

/// `20 log10(|X| + eps)`, clamped below at `floor_db`.
pub fn magnitude_db(mag: f64, floor_db: f64) -> f64 {
    (20.0 * (mag + MAG_EPSILON).log10()).max(floor_db)
}

pub fn log_magnitude(frames: &StftFrames, meta: SpectrogramMeta, floor_db: f64) -> Spectrogram {
    let mut values = vec![0.0; frames.bins * frames.frames];
    for t in 0..frames.frames {
        for (b, x) in frames.frame(t).iter().enumerate() {
            values[b * frames.frames + t] = magnitude_db(x.norm(), floor_db);
        }
    }
    Spectrogram {
        bins: frames.bins,
        frames: frames.frames,
        values,
        meta,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectrogramConfig {
    pub window_kind: WindowKind,
    pub window_len: usize,
    pub hop: usize,
    pub floor_db: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            window_kind: WindowKind::Hann,
            window_len: 512,
            hop: 32,
            floor_db: DEFAULT_FLOOR_DB,
        }
    }
}

/// Convenience wrapper holding a plan for repeated spectrogram calls.
pub struct SpectrogramMaker {
    stft: Stft,
    config: SpectrogramConfig,
    fs: f64,
}

impl SpectrogramMaker {
    pub fn new(config: SpectrogramConfig, fs: f64) -> Result<Self> {
        let window = make_window(config.window_kind, config.window_len)?;
        Ok(SpectrogramMaker {
            stft: Stft::new(window, config.hop)?,
            config,
            fs,
        })
    }

    pub fn make(&self, signal: &[f64]) -> Result<Spectrogram> {
        let frames = self.stft.one_sided(signal)?;
        let meta = SpectrogramMeta {
            window_len: self.config.window_len,
            hop: self.config.hop,
            fs: self.fs,
            window_kind: self.config.window_kind,
        };
        Ok(log_magnitude(&frames, meta, self.config.floor_db))
    }
}

/// Bilinear resize of a row-major `rows x cols` grid with corner-aligned
/// sampling: output corners land exactly on input corners.
pub fn resize_bilinear(src: &[f64], rows: usize, cols: usize, h: usize, w: usize) -> Vec<f64> {
    let coord = |i: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out <= 1 || inp <= 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let i0 = (pos.floor() as usize).min(inp - 1);
        let i1 = (i0 + 1).min(inp - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let (r0, r1, fy) = coord(y, h, rows);
        for x in 0..w {
            let (c0, c1, fx) = coord(x, w, cols);
            let top = src[r0 * cols + c0] * (1.0 - fx) + src[r0 * cols + c1] * fx;
            let bottom = src[r1 * cols + c0] * (1.0 - fx) + src[r1 * cols + c1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Image tensor `[channels x height x width]` with values in `[0, 1]`.
/// Row 0 holds the lowest frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
    /// dB range used for min-max scaling, per channel.
    pub normalization: Vec<(f64, f64)>,
}

impl ImageTensor {
    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }
}

fn normalize_plane(values: &[f64]) -> (Vec<f32>, (f64, f64)) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let data = if range > 0.0 {
        values
            .iter()
            .map(|v| (((v - min) / range) as f32).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; values.len()]
    };
    (data, (min, max))
}

fn resized_plane(spec: &Spectrogram, h: usize, w: usize) -> Result<Vec<f64>> {
    if spec.frames == 0 || spec.bins == 0 {
        return Err(Error::Shape(format!(
            "spectrogram has {} bins x {} frames",
            spec.bins, spec.frames
        )));
    }
    if h < 8 || w < 8 {
        return Err(Error::Shape(format!("image size {h}x{w} below 8x8")));
    }
    Ok(resize_bilinear(&spec.values, spec.bins, spec.frames, h, w))
}

/// Resizes, min-max normalizes and replicates one spectrogram to
/// `channels` identical planes. A constant spectrogram becomes all zeros.
pub fn to_image(spec: &Spectrogram, h: usize, w: usize, channels: usize) -> Result<ImageTensor> {
    if channels == 0 {
        return Err(Error::Shape("zero channels".into()));
    }
    let (plane, range) = normalize_plane(&resized_plane(spec, h, w)?);
    let mut data = Vec::with_capacity(channels * plane.len());
    for _ in 0..channels {
        data.extend_from_slice(&plane);
    }
    Ok(ImageTensor {
        channels,
        height: h,
        width: w,
        data,
        normalization: vec![range; channels],
    })
}

/// One channel per spectrogram (stacked leads), each normalized on its own.
pub fn to_image_stacked(specs: &[Spectrogram], h: usize, w: usize) -> Result<ImageTensor> {
    if specs.is_empty() {
        return Err(Error::Shape("no spectrograms to stack".into()));
    }
    let mut data = Vec::with_capacity(specs.len() * h * w);
    let mut normalization = Vec::with_capacity(specs.len());
    for s in specs {
        let (plane, range) = normalize_plane(&resized_plane(s, h, w)?);
        data.extend_from_slice(&plane);
        normalization.push(range);
    }
    Ok(ImageTensor {
        channels: specs.len(),
        height: h,
        width: w,
        data,
        normalization,
    })
}

fn write_gray(path: &Path, w: usize, h: usize, pixels: Vec<u8>) -> Result<()> {
    let img = image::GrayImage::from_raw(w as u32, h as u32, pixels)
        .ok_or_else(|| Error::Image("pixel buffer does not match image size".into()))?;
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::file(path, io),
            other => Error::Image(other.to_string()),
        })
}

fn to_byte(v: f64) -> u8 {
    (255.0 * v).round().clamp(0.0, 255.0) as u8
}

/// Writes one channel of an image as 8-bit grayscale. Time runs left to
/// right and frequency bin 0 is the bottom row.
pub fn export_image_png(image: &ImageTensor, channel: usize, path: &Path) -> Result<()> {
    if channel >= image.channels {
        return Err(Error::Index {
            index: channel,
            len: image.channels,
        });
    }
    let plane = image.channel(channel);
    let (h, w) = (image.height, image.width);
    let mut pixels = Vec::with_capacity(h * w);
    for row in (0..h).rev() {
        pixels.extend(plane[row * w..(row + 1) * w].iter().map(|&v| to_byte(v as f64)));
    }
    write_gray(path, w, h, pixels)
}

/// Writes a spectrogram at its native `bins x frames` resolution after
/// min-max normalization.
pub fn export_spectrogram_png(spec: &Spectrogram, path: &Path) -> Result<()> {
    if spec.frames == 0 || spec.bins == 0 {
        return Err(Error::Shape("empty spectrogram".into()));
    }
    let (plane, _) = normalize_plane(&spec.values);
    let (h, w) = (spec.bins, spec.frames);
    let mut pixels = Vec::with_capacity(h * w);
    for row in (0..h).rev() {
        pixels.extend(plane[row * w..(row + 1) * w].iter().map(|&v| to_byte(v as f64)));
    }
    write_gray(path, w, h, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn window_closed_forms() {
        let h = make_window(WindowKind::Hann, 5).unwrap();
        let expected = [0.0, 0.5, 1.0, 0.5, 0.0];
        for (a, b) in h.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let m = make_window(WindowKind::Hamming, 5).unwrap();
        assert!((m[0] - 0.08).abs() < 1e-15);
        for kind in [WindowKind::Hann, WindowKind::Hamming] {
            let w = make_window(kind, 512).unwrap();
            assert!(w.iter().all(|&v| (0.0..=1.0 + 1e-15).contains(&v)));
            for k in 0..256 {
                assert!((w[k] - w[511 - k]).abs() < 1e-12);
            }
        }
        assert!(matches!(make_window(WindowKind::Hann, 1), Err(Error::Size(_))));
    }

    #[test]
    fn frame_count_formula() {
        let w = make_window(WindowKind::Hann, 512).unwrap();
        let f = stft(&vec![1.0; 1024], &w, 32).unwrap();
        assert_eq!(f.frames, 17);
        assert_eq!(f.bins, 257);
        // short beats are padded to window + 4 hops
        let f = stft(&vec![1.0; 360], &w, 32).unwrap();
        assert_eq!(f.frames, 5);
    }

    #[test]
    fn zero_signal_zero_magnitude() {
        let w = make_window(WindowKind::Hann, 64).unwrap();
        let f = stft(&vec![0.0; 300], &w, 8).unwrap();
        assert!(f.data.iter().all(|c| c.norm() == 0.0));
        assert!(matches!(stft(&[], &w, 8), Err(Error::EmptyInput)));
        assert!(matches!(stft(&[1.0], &w, 0), Err(Error::Size(_))));
    }

    /// Direct O(N^2) DFT of one windowed frame.
    fn direct_dft(frame: &[f64]) -> Vec<Complex64> {
        let n = frame.len();
        (0..n)
            .map(|k| {
                frame
                    .iter()
                    .enumerate()
                    .map(|(t, &x)| x * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64))
                    .sum()
            })
            .collect()
    }

    #[test]
    fn tone_at_45_hz_lands_in_bin_64() {
        let fs = 360.0;
        let x: Vec<f64> = (0..1200).map(|i| (2.0 * PI * 45.0 * i as f64 / fs).cos()).collect();
        let w = make_window(WindowKind::Hann, 512).unwrap();
        let f = stft(&x, &w, 32).unwrap();
        for t in 0..f.frames {
            let frame = f.frame(t);
            let argmax = (0..f.bins).max_by(|&a, &b| frame[a].norm().total_cmp(&frame[b].norm())).unwrap();
            assert_eq!(argmax, 64);
        }
        // the oracle agrees on the first frame
        let windowed: Vec<f64> = x[..512].iter().zip(&w).map(|(a, b)| a * b).collect();
        let oracle = direct_dft(&windowed);
        let oracle_arg = (0..257).max_by(|&a, &b| oracle[a].norm().total_cmp(&oracle[b].norm())).unwrap();
        assert_eq!(oracle_arg, 64);
        for (a, b) in f.frame(0).iter().zip(&oracle) {
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn db_scaling() {
        assert_eq!(magnitude_db(1.0, -80.0).abs() < 1e-8, true);
        assert_eq!(magnitude_db(0.0, -80.0), -80.0);
        let mut prev = f64::NEG_INFINITY;
        for i in 0..100 {
            let v = magnitude_db(i as f64 * 0.01, -80.0);
            assert!(v >= prev);
            prev = v;
        }
    }

    fn toy_spectrogram(bins: usize, frames: usize, f: impl Fn(usize, usize) -> f64) -> Spectrogram {
        let mut values = Vec::new();
        for b in 0..bins {
            for t in 0..frames {
                values.push(f(b, t));
            }
        }
        Spectrogram {
            bins,
            frames,
            values,
            meta: SpectrogramMeta {
                window_len: 2 * (bins - 1),
                hop: 1,
                fs: 1.0,
                window_kind: WindowKind::Hann,
            },
        }
    }

    #[test]
    fn image_policies() {
        let flat = toy_spectrogram(10, 9, |_, _| -20.0);
        let img = to_image(&flat, 8, 8, 3).unwrap();
        assert!(img.data.iter().all(|&v| v == 0.0));
        assert_eq!(img.data.len(), 3 * 64);

        let ramp = toy_spectrogram(8, 8, |b, t| (b * 8 + t) as f64);
        let img = to_image(&ramp, 8, 8, 1).unwrap();
        for (i, v) in img.data.iter().enumerate() {
            assert!((*v as f64 - i as f64 / 63.0).abs() < 1e-6);
        }
        assert_eq!(img.normalization, vec![(0.0, 63.0)]);

        let empty = toy_spectrogram(10, 1, |_, _| 0.0);
        let empty = Spectrogram { frames: 0, values: vec![], ..empty };
        assert!(matches!(to_image(&empty, 8, 8, 1), Err(Error::Shape(_))));
        assert!(matches!(to_image(&ramp, 4, 8, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn bilinear_midpoint() {
        let out = resize_bilinear(&[0.0, 1.0], 1, 2, 1, 3);
        assert_eq!(out, vec![0.0, 0.5, 1.0]);
        let grid = [0.0, 1.0, 2.0, 3.0];
        let out = resize_bilinear(&grid, 2, 2, 3, 3);
        assert_eq!(out[4], 1.5);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ramp = toy_spectrogram(12, 10, |b, t| (b as f64).sin() + t as f64 * 0.3);
        let img = to_image(&ramp, 16, 20, 1).unwrap();
        let path = dir.path().join("s.png");
        export_image_png(&img, 0, &path).unwrap();
        let decoded = image::open(&path).unwrap().to_luma8();
        assert_eq!((decoded.width(), decoded.height()), (20, 16));
        for row in 0..16 {
            for col in 0..20 {
                let expect = (255.0 * img.data[row * 20 + col] as f64).round() as u8;
                // bin 0 is the bottom row of the file
                assert_eq!(decoded.get_pixel(col as u32, 15 - row as u32).0[0], expect);
            }
        }

        let black = ImageTensor {
            channels: 1,
            height: 8,
            width: 8,
            data: vec![0.0; 64],
            normalization: vec![(0.0, 0.0)],
        };
        let path = dir.path().join("black.png");
        export_image_png(&black, 0, &path).unwrap();
        assert!(image::open(&path).unwrap().to_luma8().pixels().all(|p| p.0[0] == 0));

        let bad = dir.path().join("missing").join("x.png");
        assert!(matches!(export_image_png(&black, 0, &bad), Err(Error::File { .. })));
        assert!(export_spectrogram_png(&ramp, &dir.path().join("native.png")).is_ok());
    }
}
