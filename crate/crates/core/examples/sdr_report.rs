//! Scale-invariant SDR of a noisy and a partially denoised sine.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vaemm::metrics::sdr_report;
use vaemm::spectral::AudioSignal;

fn main() -> vaemm::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clean: Vec<f64> = (0..16_000).map(|t| (2.0 * PI * 440.0 * t as f64 / 16_000.0).sin()).collect();
    let noise: Vec<f64> = (0..16_000).map(|_| rng.random_range(-1.0..1.0)).collect();
    let noisy: Vec<f64> = clean.iter().zip(&noise).map(|(s, b)| s + b).collect();
    let enhanced: Vec<f64> = clean.iter().zip(&noise).map(|(s, b)| 0.8 * (s + 0.2 * b)).collect();

    let to_signal = |x: Vec<f64>| AudioSignal::new(x, 16_000);
    let report = sdr_report(&to_signal(clean)?, &to_signal(noisy)?, &to_signal(enhanced)?)?;
    println!("{report}");
    println!("{}\n{}", vaemm::metrics::SdrReport::CSV_HEADER, report.csv_row());
    Ok(())
}
