use std::f64::consts::PI;

/// Zero crossings of the sinc kernel on each side of the center.
const KERNEL_ZEROS: f64 = 24.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(t: f64) -> f64 {
    // t in [-1, 1]
    0.42 + 0.5 * (PI * t).cos() + 0.08 * (2.0 * PI * t).cos()
}

/// Blackman-windowed sinc resampling to `round(n * fs_out / fs_in)` samples.
/// When downsampling, the kernel cutoff follows the output Nyquist rate.
pub fn resample_to(signal: &[f64], fs_in: f64, fs_out: f64) -> Vec<f64> {
    if fs_in == fs_out || signal.is_empty() {
        return signal.to_vec();
    }
    let n = signal.len();
    let out_len = (n as f64 * fs_out / fs_in).round() as usize;
    let ratio = fs_in / fs_out;
    // cycles per input sample; slight guard band below Nyquist
    let cutoff = 0.5 * (fs_out / fs_in).min(1.0) * 0.95;
    let half_width = KERNEL_ZEROS / (2.0 * cutoff);

    (0..out_len)
        .map(|m| {
            let t = m as f64 * ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(n - 1);
            let (mut acc, mut wsum) = (0.0, 0.0);
            for k in lo..=hi {
                let d = t - k as f64;
                let w = 2.0 * cutoff * sinc(2.0 * cutoff * d) * blackman(d / half_width);
                acc += w * signal[k];
                wsum += w;
            }
            // normalizing keeps DC exact, including near the edges
            if wsum.abs() > 1e-12 {
                acc / wsum
            } else {
                0.0
            }
        })
        .collect()
}
