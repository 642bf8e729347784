//! Single-source signal-to-distortion ratio.
//!
//! The estimate is projected onto the reference with a least-squares gain;
//! the projection counts as target and the remainder as distortion. The
//! value is therefore invariant to rescaling the estimate. A zero residual
//! yields `+∞`, a zero projection `−∞`.

use crate::error::{Error, Result};
use crate::spectral::AudioSignal;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdrReport {
    pub sdr_out: f64,
    pub sdr_in: f64,
    pub delta: f64,
}

impl SdrReport {
    pub fn new(sdr_out: f64, sdr_in: f64) -> Self {
        Self {
            sdr_out,
            sdr_in,
            delta: sdr_out - sdr_in,
        }
    }

    pub const CSV_HEADER: &'static str = "sdr_in_db,sdr_out_db,delta_db";

    pub fn csv_row(&self) -> String {
        format!("{},{},{}", self.sdr_in, self.sdr_out, self.delta)
    }
}

impl std::fmt::Display for SdrReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "SDR in {:.2} dB, out {:.2} dB, improvement {:.2} dB",
            self.sdr_in, self.sdr_out, self.delta
        )
    }
}

/// SDR of `estimate` against `reference` over their common length, in dB.
pub fn sdr_slices(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    let len = reference.len().min(estimate.len());
    let (s, e) = (&reference[..len], &estimate[..len]);
    let energy: f64 = s.iter().map(|x| x * x).sum();
    if !(energy > 0.0) {
        return Err(Error::invalid("reference signal is zero"));
    }
    if e.iter().all(|x| *x == 0.0) {
        return Ok(f64::NEG_INFINITY);
    }
    let gain = s.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / energy;
    let mut target = 0.0;
    let mut residual = 0.0;
    for (a, b) in s.iter().zip(e) {
        let p = gain * a;
        target += p * p;
        residual += (b - p) * (b - p);
    }
    Ok(10.0 * (target / residual).log10())
}

pub fn sdr(reference: &AudioSignal, estimate: &AudioSignal) -> Result<f64> {
    sdr_slices(&reference.samples, &estimate.samples)
}

/// SDR of the noisy input and of the enhanced output against the same reference.
pub fn sdr_report(reference: &AudioSignal, noisy: &AudioSignal, enhanced: &AudioSignal) -> Result<SdrReport> {
    Ok(SdrReport::new(sdr(reference, enhanced)?, sdr(reference, noisy)?))
}
