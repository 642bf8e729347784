//! Analysis and resynthesis of a chirp with the default 1024/256 sqrt-Hann STFT.

use std::f64::consts::PI;

use vaemm::spectral::{istft, stft, AudioSignal, StftParams};

fn main() -> vaemm::Result<()> {
    let rate = 16_000;
    let samples: Vec<f64> = (0..rate)
        .map(|t| {
            let s = t as f64 / rate as f64;
            0.5 * (2.0 * PI * (200.0 + 1800.0 * s) * s).sin()
        })
        .collect();
    let signal = AudioSignal::new(samples, rate as u32)?;
    let params = StftParams::default();
    let spec = stft(&signal, &params)?;
    println!(
        "{} samples -> {} bins x {} frames (fft {}, hop {})",
        signal.len(),
        spec.n_bins(),
        spec.n_frames(),
        params.fft_size,
        params.hop
    );

    let back = istft(&spec, signal.sample_rate)?;
    let err: f64 = signal.samples.iter().zip(&back.samples).map(|(a, b)| (a - b).powi(2)).sum();
    let norm: f64 = signal.samples.iter().map(|a| a * a).sum();
    println!("relative reconstruction error {:.3e}", (err / norm).sqrt());

    // Strongest bin per frame tracks the sweep.
    let power = spec.power();
    for n in (4..spec.n_frames()).step_by(12) {
        let column = power.column(n);
        let peak = (0..spec.n_bins()).max_by(|&a, &b| column[a].total_cmp(&column[b])).unwrap_or(0);
        println!("frame {n:3}: peak at {:.0} Hz", peak as f64 * rate as f64 / params.fft_size as f64);
    }
    Ok(())
}
