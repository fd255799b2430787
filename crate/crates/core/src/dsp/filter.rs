//! Chebyshev type I IIR design as cascaded second-order sections.
//!
//! Design path: analog low-pass prototype poles, frequency transformation
//! (high-pass or band-pass) at pre-warped corners, bilinear transform, then
//! grouping of conjugate pole pairs into biquads.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FilterBand {
    Highpass(f64),
    Bandpass(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub band: FilterBand,
    /// Order of the analog low-pass prototype. A band-pass doubles it.
    pub order: usize,
    pub passband_ripple_db: f64,
    pub fs: f64,
}

impl FilterSpec {
    /// QRS-emphasis band-pass: 4th order, 1 dB ripple, 5-15 Hz.
    pub fn qrs_bandpass(fs: f64) -> Self {
        FilterSpec {
            band: FilterBand::Bandpass(5.0, 15.0),
            order: 4,
            passband_ripple_db: 1.0,
            fs,
        }
    }

    /// Baseline-wander high-pass: 4th order at 0.5 Hz. The ripple is kept
    /// small so the forward-backward pass does not square a 1 dB passband
    /// dip into the signal band.
    pub fn baseline_highpass(fs: f64) -> Self {
        FilterSpec {
            band: FilterBand::Highpass(0.5),
            order: 4,
            passband_ripple_db: 0.01,
            fs,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) {
            return Err(Error::Design(format!("sampling rate {} must be positive", self.fs)));
        }
        if self.order == 0 {
            return Err(Error::Design("order must be at least 1".into()));
        }
        if !(self.passband_ripple_db > 0.0) {
            return Err(Error::Design("passband ripple must be positive".into()));
        }
        let nyq = self.fs / 2.0;
        let check = |f: f64| {
            if f > 0.0 && f < nyq {
                Ok(())
            } else {
                Err(Error::Design(format!(
                    "cutoff {f} Hz must lie in (0, {nyq}) Hz"
                )))
            }
        };
        match self.band {
            FilterBand::Highpass(f) => check(f),
            FilterBand::Bandpass(lo, hi) => {
                check(lo)?;
                check(hi)?;
                if lo >= hi {
                    return Err(Error::Design(format!("band edges {lo} >= {hi}")));
                }
                Ok(())
            }
        }
    }
}

/// One biquad `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b: [f64; 3],
    /// `a[0]` is always 1.
    pub a: [f64; 3],
}

impl Biquad {
    fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b[0] + z_inv * self.b[1] + z2 * self.b[2])
            / (self.a[0] + z_inv * self.a[1] + z2 * self.a[2])
    }

    /// Roots of `z^2 + a1 z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let (p, q) = (self.a[1], self.a[2]);
        let disc = Complex64::new(p * p - 4.0 * q, 0.0).sqrt();
        [(-p + disc) / 2.0, (-p - disc) / 2.0]
    }

    fn dc_gain(&self) -> f64 {
        self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>()
    }

    /// Transposed direct-form II state that a unit step settles into.
    fn step_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * y;
        let z1 = self.b[1] - self.a[1] * y + z2;
        [z1, z2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
}

impl SosFilter {
    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Complex response at `freq_hz`.
    pub fn response(&self, freq_hz: f64, fs: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / fs);
        self.sections
            .iter()
            .map(|s| s.response(z_inv))
            .product()
    }

    pub fn magnitude(&self, freq_hz: f64, fs: f64) -> f64 {
        self.response(freq_hz, fs).norm()
    }

    /// Causal filtering from a zero state.
    pub fn apply(&self, signal: &[f64]) -> Result<Vec<f64>> {
        check_finite(signal)?;
        let mut y = signal.to_vec();
        for s in &self.sections {
            run_section(s, &mut y, [0.0, 0.0]);
        }
        Ok(y)
    }

    /// Zero-phase forward-backward filtering with odd-extension padding and
    /// step-response initial conditions, so a constant input produces no
    /// start-up transient.
    pub fn apply_zero_phase(&self, signal: &[f64]) -> Result<Vec<f64>> {
        check_finite(signal)?;
        let n = signal.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (signal[0], signal[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

        let states = self.step_states();
        self.run_with_states(&mut ext, &states);
        ext.reverse();
        self.run_with_states(&mut ext, &states);
        ext.reverse();
        Ok(ext[pad..pad + n].to_vec())
    }

    fn step_states(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let [z1, z2] = s.step_state();
                let out = [scale * z1, scale * z2];
                scale *= s.dc_gain();
                out
            })
            .collect()
    }

    fn run_with_states(&self, x: &mut [f64], unit_states: &[[f64; 2]]) {
        let x0 = x[0];
        for (s, st) in self.sections.iter().zip(unit_states) {
            run_section(s, x, [st[0] * x0, st[1] * x0]);
        }
    }
}

fn check_finite(signal: &[f64]) -> Result<()> {
    match signal.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::Numeric(format!("non-finite sample at index {i}"))),
        None => Ok(()),
    }
}

fn run_section(s: &Biquad, x: &mut [f64], state: [f64; 2]) {
    let [b0, b1, b2] = s.b;
    let [_, a1, a2] = s.a;
    let [mut z1, mut z2] = state;
    for v in x.iter_mut() {
        let xi = *v;
        let y = b0 * xi + z1;
        z1 = b1 * xi - a1 * y + z2;
        z2 = b2 * xi - a2 * y;
        *v = y;
    }
}

/// Analog Chebyshev I low-pass prototype, unit passband edge.
fn prototype(order: usize, ripple_db: f64) -> (Vec<Complex64>, f64) {
    let eps = (10f64.powf(0.1 * ripple_db) - 1.0).sqrt();
    let mu = (1.0 / eps).asinh() / order as f64;
    let poles: Vec<Complex64> = (0..order)
        .map(|i| {
            let m = -(order as f64) + 1.0 + 2.0 * i as f64;
            let theta = PI * m / (2.0 * order as f64);
            -Complex64::new(mu, theta).sinh()
        })
        .collect();
    let mut k = poles.iter().map(|p| -p).product::<Complex64>().re;
    if order % 2 == 0 {
        k /= (1.0 + eps * eps).sqrt();
    }
    (poles, k)
}

/// Designs a Chebyshev type I filter as a stable biquad cascade.
pub fn design_chebyshev1(spec: &FilterSpec) -> Result<SosFilter> {
    spec.validate()?;
    let fs2 = 2.0 * spec.fs;
    let warp = |f: f64| fs2 * (PI * f / spec.fs).tan();
    let (proto, k_proto) = prototype(spec.order, spec.passband_ripple_db);

    // Analog zeros / poles / gain after the band transformation. The
    // prototype has no finite zeros, so every transformed zero sits at s = 0.
    let (analog_zeros, poles, gain) = match spec.band {
        FilterBand::Highpass(fc) => {
            let wo = warp(fc);
            let poles: Vec<Complex64> = proto.iter().map(|p| wo / p).collect();
            let gain = k_proto * (Complex64::new(1.0, 0.0) / proto.iter().map(|p| -p).product::<Complex64>()).re;
            (spec.order, poles, gain)
        }
        FilterBand::Bandpass(lo, hi) => {
            let (w1, w2) = (warp(lo), warp(hi));
            let wo = (w1 * w2).sqrt();
            let bw = w2 - w1;
            let mut poles = Vec::with_capacity(2 * spec.order);
            for p in &proto {
                let half = p * (bw / 2.0);
                let root = (half * half - wo * wo).sqrt();
                poles.push(half + root);
                poles.push(half - root);
            }
            (spec.order, poles, k_proto * bw.powi(spec.order as i32))
        }
    };

    // Bilinear transform. Zeros at s = 0 map to z = +1; the remaining
    // degree difference lands at z = -1.
    let digital_poles: Vec<Complex64> = poles.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
    let n_poles = digital_poles.len();
    let mut digital_zeros: Vec<f64> = vec![1.0; analog_zeros];
    digital_zeros.extend(std::iter::repeat_n(-1.0, n_poles - analog_zeros));
    let num_gain = fs2.powi(analog_zeros as i32);
    let den: Complex64 = poles.iter().map(|p| fs2 - p).product();
    let digital_gain = gain * (Complex64::new(num_gain, 0.0) / den).re;

    Ok(SosFilter {
        sections: group_sections(&digital_poles, &digital_zeros, digital_gain)?,
    })
}

fn group_sections(poles: &[Complex64], zeros: &[f64], gain: f64) -> Result<Vec<Biquad>> {
    const IMAG_TOL: f64 = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > IMAG_TOL).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= IMAG_TOL)
        .map(|p| p.re)
        .collect();
    if complex.len() * 2 + real.len() != poles.len() {
        return Err(Error::Design("poles are not closed under conjugation".into()));
    }
    // Poles nearest the unit circle go last.
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(|a, b| a.abs().total_cmp(&b.abs()));

    let mut den: Vec<[f64; 3]> = complex
        .iter()
        .map(|p| [1.0, -2.0 * p.re, p.norm_sqr()])
        .collect();
    for pair in real.chunks(2) {
        den.push(match pair {
            [a, b] => [1.0, -(a + b), a * b],
            [a] => [1.0, -a, 0.0],
            _ => unreachable!(),
        });
    }

    let mut sorted = zeros.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut num = Vec::new();
    let (mut lo, mut hi) = (0usize, sorted.len());
    while lo < hi {
        if hi - lo >= 2 {
            let (a, b) = (sorted[lo], sorted[hi - 1]);
            num.push([1.0, -(a + b), a * b]);
            lo += 1;
            hi -= 1;
        } else {
            num.push([1.0, -sorted[lo], 0.0]);
            lo += 1;
        }
    }
    if num.len() > den.len() {
        return Err(Error::Design("more zero pairs than pole pairs".into()));
    }
    num.resize(den.len(), [1.0, 0.0, 0.0]);

    let mut sections: Vec<Biquad> = num
        .into_iter()
        .zip(den)
        .map(|(b, a)| Biquad { b, a })
        .collect();
    if let Some(first) = sections.first_mut() {
        for v in &mut first.b {
            *v *= gain;
        }
    }
    Ok(sections)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Companion-matrix eigenvalues of the full denominator polynomial,
    /// independent of the per-section quadratic formula.
    fn denominator_roots(filter: &SosFilter) -> Vec<Complex64> {
        let mut poly = vec![1.0f64];
        for s in &filter.sections {
            let mut next = vec![0.0; poly.len() + 2];
            for (i, c) in poly.iter().enumerate() {
                for (j, a) in s.a.iter().enumerate() {
                    next[i + j] += c * a;
                }
            }
            poly = next;
        }
        let n = poly.len() - 1;
        let mut m = nalgebra::DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            m[(0, j)] = -poly[j + 1];
        }
        for i in 1..n {
            m[(i, i - 1)] = 1.0;
        }
        m.complex_eigenvalues().iter().copied().collect()
    }

    #[test]
    fn bandpass_5_15_rejects_dc_and_passes_center() {
        let f = design_chebyshev1(&FilterSpec::qrs_bandpass(360.0)).unwrap();
        assert_eq!(f.sections.len(), 4);
        assert!(f.magnitude(0.0, 360.0) < 1e-3);
        assert!(f.magnitude(180.0, 360.0) < 1e-3);
        let center = (5.0f64 * 15.0).sqrt();
        let g = f.magnitude(center, 360.0);
        let floor = 10f64.powf(-1.0 / 20.0);
        assert!(g >= floor - 1e-9 && g <= 1.0 + 1e-9, "gain {g}");
        // the whole passband stays inside the ripple band
        for i in 0..=100 {
            let fr = 5.0 + 10.0 * i as f64 / 100.0;
            let g = f.magnitude(fr, 360.0);
            assert!(g >= floor - 1e-6 && g <= 1.0 + 1e-6, "{fr} Hz: {g}");
        }
    }

    #[test]
    fn designed_poles_inside_unit_circle() {
        for spec in [
            FilterSpec::qrs_bandpass(360.0),
            FilterSpec::qrs_bandpass(500.0),
            FilterSpec::baseline_highpass(360.0),
            FilterSpec {
                band: FilterBand::Highpass(40.0),
                order: 5,
                passband_ripple_db: 0.5,
                fs: 250.0,
            },
        ] {
            let f = design_chebyshev1(&spec).unwrap();
            let roots = denominator_roots(&f);
            assert_eq!(roots.len(), 2 * f.sections.len());
            assert!(roots.iter().all(|r| r.norm() < 1.0), "{spec:?}: {roots:?}");
            assert!(f.is_stable());
        }
    }

    #[test]
    fn odd_order_highpass_has_real_pole() {
        let f = design_chebyshev1(&FilterSpec {
            band: FilterBand::Highpass(10.0),
            order: 3,
            passband_ripple_db: 1.0,
            fs: 360.0,
        })
        .unwrap();
        assert_eq!(f.sections.len(), 2);
        assert!(f.magnitude(0.0, 360.0) < 1e-9);
        // odd order: unity gain at the top of the passband
        assert!((f.magnitude(180.0, 360.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut spec = FilterSpec::qrs_bandpass(360.0);
        spec.band = FilterBand::Bandpass(5.0, 180.0);
        assert!(matches!(design_chebyshev1(&spec), Err(Error::Design(_))));
        spec.band = FilterBand::Highpass(200.0);
        assert!(matches!(design_chebyshev1(&spec), Err(Error::Design(_))));
        spec.band = FilterBand::Bandpass(15.0, 5.0);
        assert!(design_chebyshev1(&spec).is_err());
        let mut spec = FilterSpec::qrs_bandpass(360.0);
        spec.order = 0;
        assert!(design_chebyshev1(&spec).is_err());
        spec.order = 2;
        spec.passband_ripple_db = 0.0;
        assert!(design_chebyshev1(&spec).is_err());
    }

    #[test]
    fn zero_input_zero_output() {
        let f = design_chebyshev1(&FilterSpec::qrs_bandpass(360.0)).unwrap();
        assert!(f.apply(&[0.0; 100]).unwrap().iter().all(|&v| v == 0.0));
        assert!(f.apply_zero_phase(&[0.0; 100]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn impulse_matches_direct_recurrence() {
        let f = design_chebyshev1(&FilterSpec::qrs_bandpass(360.0)).unwrap();
        let n = 400;
        let mut impulse = vec![0.0; n];
        impulse[0] = 1.0;
        let got = f.apply(&impulse).unwrap();

        // Expand the cascade into one transfer function and run the
        // direct-form difference equation.
        let mut b = vec![1.0f64];
        let mut a = vec![1.0f64];
        for s in &f.sections {
            b = convolve(&b, &s.b);
            a = convolve(&a, &s.a);
        }
        let mut y = vec![0.0f64; n];
        for i in 0..n {
            let mut acc = if i < b.len() { b[i] } else { 0.0 };
            for j in 1..a.len() {
                if i >= j {
                    acc -= a[j] * y[i - j];
                }
            }
            y[i] = acc;
        }
        for (g, e) in got.iter().zip(&y) {
            // the expanded direct form is ill-conditioned at this order
            assert!((g - e).abs() < 1e-8, "{g} vs {e}");
        }
    }

    fn convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len() + h.len() - 1];
        for (i, a) in x.iter().enumerate() {
            for (j, b) in h.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out
    }

    #[test]
    fn filtering_is_linear() {
        let f = design_chebyshev1(&FilterSpec::qrs_bandpass(360.0)).unwrap();
        let x: Vec<f64> = (0..2000).map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0).collect();
        let y: Vec<f64> = (0..2000).map(|i| (i as f64 * 0.05).sin()).collect();
        for zero_phase in [false, true] {
            let run = |s: &[f64]| {
                if zero_phase {
                    f.apply_zero_phase(s).unwrap()
                } else {
                    f.apply(s).unwrap()
                }
            };
            let a = 3.7;
            let fx = run(&x);
            let fy = run(&y);
            let scaled = run(&x.iter().map(|v| a * v).collect::<Vec<_>>());
            let sum = run(&x.iter().zip(&y).map(|(p, q)| p + q).collect::<Vec<_>>());
            let tol = |r: f64| 1e-9 * r.abs().max(1e-3);
            for i in 0..x.len() {
                assert!((scaled[i] - a * fx[i]).abs() <= tol(a * fx[i]));
                assert!((sum[i] - (fx[i] + fy[i])).abs() <= 1e-9);
            }
            assert_eq!(fx.len(), x.len());
        }
    }

    #[test]
    fn non_finite_input_rejected() {
        let f = design_chebyshev1(&FilterSpec::qrs_bandpass(360.0)).unwrap();
        assert!(matches!(f.apply(&[0.0, f64::NAN]), Err(Error::Numeric(_))));
        assert!(matches!(f.apply_zero_phase(&[f64::INFINITY]), Err(Error::Numeric(_))));
    }
}
