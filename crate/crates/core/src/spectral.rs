//! Short-time Fourier analysis and overlap-add synthesis.
//!
//! Frames are taken every `hop` samples from a signal that is zero-padded
//! with `fft_size - hop` samples in front and enough samples at the tail
//! that every original sample is covered by the full set of overlapping
//! frames. Synthesis divides by the summed squared window, so any
//! analysis/synthesis pair with a nonvanishing envelope reconstructs
//! exactly on the original support.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_FFT_SIZE: usize = 1024;
pub const DEFAULT_HOP: usize = 256;

const ENVELOPE_FLOOR: f64 = 1e-10;

/// A mono time-domain signal.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio sample".into()));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Square root of the periodic Hann window, used for both analysis and synthesis.
    SqrtHann,
    Rectangular,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        match self {
            Window::SqrtHann => (0..len)
                .map(|i| (PI * i as f64 / len as f64).sin())
                .collect(),
            Window::Rectangular => vec![1.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftParams {
    pub fft_size: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            fft_size: DEFAULT_FFT_SIZE,
            hop: DEFAULT_HOP,
            window: Window::SqrtHann,
        }
    }
}

impl StftParams {
    pub fn new(fft_size: usize, hop: usize, window: Window) -> Result<Self> {
        let params = Self {
            fft_size,
            hop,
            window,
        };
        params.validate()?;
        Ok(params)
    }

    /// Parameters implied by a bin count alone: `fft_size = 2(F-1)`, with a
    /// quarter-frame hop when it divides evenly and a half-frame hop otherwise.
    pub fn for_bins(n_bins: usize) -> Result<Self> {
        if n_bins < 2 {
            return Err(Error::invalid("need at least two frequency bins"));
        }
        let fft_size = 2 * (n_bins - 1);
        let hop = if fft_size.is_multiple_of(4) {
            fft_size / 4
        } else {
            fft_size / 2
        };
        Self::new(fft_size, hop, Window::SqrtHann)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size < 2 || !self.fft_size.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "fft size must be even and at least 2, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::invalid(format!(
                "hop {} must satisfy 0 < hop <= fft size {}",
                self.hop, self.fft_size
            )));
        }
        let env = self.envelope_period();
        let min = env.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < ENVELOPE_FLOOR {
            return Err(Error::invalid(format!(
                "window overlap envelope vanishes (min {min:e}) for hop {}",
                self.hop
            )));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    fn front_pad(&self) -> usize {
        self.fft_size - self.hop
    }

    /// Number of frames needed to cover `len` samples with full overlap.
    pub fn n_frames(&self, len: usize) -> usize {
        (self.front_pad() + len.max(1) - 1) / self.hop + 1
    }

    /// Longest signal fully covered by `n_frames` frames.
    pub fn support_len(&self, n_frames: usize) -> usize {
        (n_frames * self.hop + 1).saturating_sub(self.fft_size).max(1)
    }

    // Summed squared window over one hop period in the fully overlapped region.
    fn envelope_period(&self) -> Vec<f64> {
        let w = self.window.coefficients(self.fft_size);
        let mut env = vec![0.0; self.hop];
        for (i, wi) in w.iter().enumerate() {
            env[i % self.hop] += wi * wi;
        }
        env
    }
}

/// F×N complex coefficients, rows indexed by frequency bin and columns by frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub values: Array2<Complex64>,
    pub params: StftParams,
    /// Length of the time-domain support that synthesis returns.
    pub signal_len: usize,
}

impl ComplexSpectrogram {
    /// Wraps raw coefficients; the synthesis support is the longest fully covered signal.
    pub fn from_values(values: Array2<Complex64>, params: StftParams) -> Result<Self> {
        params.validate()?;
        if values.nrows() != params.n_bins() {
            return Err(Error::dims(format!(
                "spectrogram has {} bins, fft size {} needs {}",
                values.nrows(),
                params.fft_size,
                params.n_bins()
            )));
        }
        if values.ncols() == 0 {
            return Err(Error::EmptySpectrogram);
        }
        let signal_len = params.support_len(values.ncols());
        Ok(Self {
            values,
            params,
            signal_len,
        })
    }

    pub fn n_bins(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Same shape and synthesis support, new coefficients.
    pub fn with_values(&self, values: Array2<Complex64>) -> Self {
        assert_eq!(values.dim(), self.values.dim());
        Self {
            values,
            params: self.params,
            signal_len: self.signal_len,
        }
    }

    pub fn power(&self) -> Array2<f64> {
        self.values.mapv(|c| c.norm_sqr())
    }
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        }
    }
}

/// Analysis STFT with the padding policy described at module level.
pub fn stft(signal: &AudioSignal, params: &StftParams) -> Result<ComplexSpectrogram> {
    if signal.is_empty() {
        return Err(Error::invalid("empty signal"));
    }
    params.validate()?;
    let n = params.fft_size;
    let n_bins = params.n_bins();
    let n_frames = params.n_frames(signal.len());
    let front = params.front_pad();
    let window = params.window.coefficients(n);
    let plans = Plans::new(n);

    let mut padded = vec![0.0; (n_frames - 1) * params.hop + n];
    padded[front..front + signal.len()].copy_from_slice(&signal.samples);

    let mut values = Array2::<Complex64>::zeros((n_bins, n_frames));
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for frame in 0..n_frames {
        let start = frame * params.hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex64::new(padded[start + i] * window[i], 0.0);
        }
        plans.forward.process(&mut buf);
        for (k, c) in buf.iter().take(n_bins).enumerate() {
            values[[k, frame]] = *c;
        }
    }
    Ok(ComplexSpectrogram {
        values,
        params: *params,
        signal_len: signal.len(),
    })
}

/// Inverse DFT of one one-sided spectrum frame, without any windowing.
pub fn inverse_frame(bins: &[Complex64], fft_size: usize) -> Result<Vec<f64>> {
    if bins.len() != fft_size / 2 + 1 {
        return Err(Error::dims(format!(
            "{} bins do not match fft size {fft_size}",
            bins.len()
        )));
    }
    let plans = Plans::new(fft_size);
    let mut buf = vec![Complex64::new(0.0, 0.0); fft_size];
    Ok(inverse_with(&plans, bins, &mut buf))
}

fn inverse_with(plans: &Plans, bins: &[Complex64], buf: &mut [Complex64]) -> Vec<f64> {
    let n = buf.len();
    let half = n / 2;
    buf[..=half].copy_from_slice(&bins[..=half]);
    // Hermitian symmetry; DC and Nyquist must be real for a real frame.
    buf[0].im = 0.0;
    buf[half].im = 0.0;
    for k in 1..half {
        buf[n - k] = bins[k].conj();
    }
    plans.inverse.process(buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Weighted overlap-add synthesis, trimmed to the spectrogram's signal support.
pub fn istft(spec: &ComplexSpectrogram, sample_rate: u32) -> Result<AudioSignal> {
    let params = &spec.params;
    params.validate()?;
    if spec.n_bins() != params.n_bins() {
        return Err(Error::dims(format!(
            "spectrogram has {} bins, fft size {} needs {}",
            spec.n_bins(),
            params.fft_size,
            params.n_bins()
        )));
    }
    if spec.n_frames() == 0 {
        return Err(Error::EmptySpectrogram);
    }
    let n = params.fft_size;
    let window = params.window.coefficients(n);
    let plans = Plans::new(n);
    let total = (spec.n_frames() - 1) * params.hop + n;
    let mut acc = vec![0.0; total];
    let mut env = vec![0.0; total];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    let mut bins = vec![Complex64::new(0.0, 0.0); spec.n_bins()];
    for frame in 0..spec.n_frames() {
        for (k, b) in bins.iter_mut().enumerate() {
            *b = spec.values[[k, frame]];
        }
        let time = inverse_with(&plans, &bins, &mut buf);
        let start = frame * params.hop;
        for i in 0..n {
            acc[start + i] += time[i] * window[i];
            env[start + i] += window[i] * window[i];
        }
    }
    let front = params.front_pad();
    let samples = (0..spec.signal_len)
        .map(|i| {
            let p = front + i;
            if p < total && env[p] > ENVELOPE_FLOOR {
                acc[p] / env[p]
            } else {
                0.0
            }
        })
        .collect();
    AudioSignal::new(samples, sample_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioSignal {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        AudioSignal::new((0..len).map(|_| rng.random_range(-1.0..1.0)).collect(), 16_000).unwrap()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
        let den: f64 = b.iter().map(|y| y * y).sum();
        (num / den).sqrt()
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram_and_back() {
        let x = AudioSignal::new(vec![0.0; 16_000], 16_000).unwrap();
        let s = stft(&x, &StftParams::default()).unwrap();
        assert_eq!(s.n_bins(), 513);
        assert!(s.values.iter().all(|c| c.norm() == 0.0));
        let y = istft(&s, 16_000).unwrap();
        assert_eq!(y.len(), 16_000);
        assert!(y.samples.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn bin_centered_sine_concentrates_energy() {
        // The sine window leaks 1/(4d^2 - 1) of the peak amplitude into bin offset d.
        let params = StftParams::default();
        let k = 137;
        let f = k as f64 * 16_000.0 / params.fft_size as f64;
        let x: Vec<f64> = (0..16_000)
            .map(|t| (2.0 * PI * f * t as f64 / 16_000.0).sin())
            .collect();
        let s = stft(&AudioSignal::new(x, 16_000).unwrap(), &params).unwrap();
        let frames_per_window = params.fft_size / params.hop;
        for n in frames_per_window..s.n_frames() - frames_per_window {
            let peak = s.values[[k, n]].norm();
            for b in 0..s.n_bins() {
                let d = (b as isize - k as isize).unsigned_abs();
                let leak = s.values[[b, n]].norm();
                if d >= 6 {
                    assert!(peak >= 100.0 * leak, "frame {n} bin {b}");
                } else if d >= 2 {
                    let analytic = (4 * d * d - 1) as f64;
                    assert!((peak / leak / analytic - 1.0).abs() < 0.02, "frame {n} bin {b}");
                }
            }
        }
    }

    #[test]
    fn round_trip_white_noise() {
        let x = noise(16_000, 3);
        let s = stft(&x, &StftParams::default()).unwrap();
        let y = istft(&s, 16_000).unwrap();
        assert_eq!(y.len(), x.len());
        assert!(rel_err(&y.samples, &x.samples) < 1e-10);
    }

    #[test]
    fn round_trip_short_and_odd_lengths() {
        for (len, fft, hop) in [(1, 16, 4), (7, 16, 8), (100, 30, 15), (1001, 64, 16), (513, 32, 32)] {
            let window = if hop == fft {
                Window::Rectangular
            } else {
                Window::SqrtHann
            };
            let params = StftParams::new(fft, hop, window).unwrap();
            let x = noise(len, len as u64);
            let y = istft(&stft(&x, &params).unwrap(), 16_000).unwrap();
            assert!(rel_err(&y.samples, &x.samples) < 1e-10, "len {len} fft {fft} hop {hop}");
        }
    }

    #[test]
    fn parseval_per_frame() {
        let params = StftParams::new(64, 16, Window::SqrtHann).unwrap();
        let x = noise(500, 9);
        let s = stft(&x, &params).unwrap();
        let w = params.window.coefficients(64);
        let mut padded = vec![0.0; (s.n_frames() - 1) * 16 + 64];
        padded[48..548].copy_from_slice(&x.samples);
        for n in 0..s.n_frames() {
            let time: f64 = (0..64).map(|i| (padded[n * 16 + i] * w[i]).powi(2)).sum();
            let col = s.values.column(n);
            let mut freq = col[0].norm_sqr() + col[32].norm_sqr();
            freq += 2.0 * (1..32).map(|k| col[k].norm_sqr()).sum::<f64>();
            freq /= 64.0;
            assert!((freq - time).abs() <= 1e-8 * time.max(1e-300), "frame {n}");
        }
    }

    #[test]
    fn single_frame_windowed_impulse() {
        let n = 16;
        let w = Window::SqrtHann.coefficients(n);
        let mut frame = vec![0.0; n];
        frame[5] = w[5];
        // direct DFT
        let bins: Vec<Complex64> = (0..=n / 2)
            .map(|k| Complex64::from_polar(w[5], -2.0 * PI * (k * 5) as f64 / n as f64))
            .collect();
        let back = inverse_frame(&bins, n).unwrap();
        for (a, b) in back.iter().zip(&frame) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn linearity() {
        let params = StftParams::new(64, 16, Window::SqrtHann).unwrap();
        let x = noise(400, 1);
        let y = noise(400, 2);
        let z = AudioSignal::new(
            x.samples.iter().zip(&y.samples).map(|(a, b)| 2.0 * a - 0.5 * b).collect(),
            16_000,
        )
        .unwrap();
        let (sx, sy, sz) = (
            stft(&x, &params).unwrap(),
            stft(&y, &params).unwrap(),
            stft(&z, &params).unwrap(),
        );
        for ((a, b), c) in sx.values.iter().zip(sy.values.iter()).zip(sz.values.iter()) {
            assert!((a * 2.0 - b * 0.5 - c).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(stft(&AudioSignal::new(vec![], 16_000).unwrap(), &StftParams::default()).is_err());
        assert!(StftParams::new(64, 65, Window::SqrtHann).is_err());
        assert!(StftParams::new(64, 0, Window::SqrtHann).is_err());
        assert!(AudioSignal::new(vec![1.0], 0).is_err());
        let s = ComplexSpectrogram::from_values(Array2::zeros((10, 3)), StftParams::default());
        assert!(matches!(s, Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn bins_only_params() {
        assert_eq!(StftParams::for_bins(513).unwrap(), StftParams::default());
        let p = StftParams::for_bins(16).unwrap();
        assert_eq!((p.fft_size, p.hop), (30, 15));
    }
}
