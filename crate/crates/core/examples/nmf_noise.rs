//! Fits a rank-2 Itakura-Saito NMF to the power of a synthetic noise
//! spectrogram and reports the divergence as the updates proceed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vaemm::nmf::{is_divergence, noise_variance, update_h, update_w, NmfParams};
use vaemm::synth::toy_noise;

fn main() -> vaemm::Result<()> {
    let truth = toy_noise(16, 200, 2, 0.5, 3)?;
    let target = noise_variance(&truth);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut model = NmfParams::random(16, 200, 2, &mut rng);
    for it in 0..=300 {
        if it % 50 == 0 {
            let d = is_divergence(&target, &noise_variance(&model))?;
            println!("update {it:3}: IS divergence {d:.6}");
        }
        model = update_w(&update_h(&model, &target)?, &target)?;
    }
    let fit = noise_variance(&model);
    let worst = fit
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a / b - 1.0).abs())
        .fold(0.0, f64::max);
    println!("largest relative deviation from the true variances {worst:.2e}");
    Ok(())
}
