//! Samples a one-dimensional latent posterior with random-walk
//! Metropolis-Hastings and compares it with grid quadrature.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vaemm::mh::{mh_sample, MhConfig};
use vaemm::synth::{grid_posterior_oracle, toy_bundle, GridSpec, ToyBundleSpec};
use vaemm::vem::log_rz;

fn main() -> vaemm::Result<()> {
    let bundle = toy_bundle(&ToyBundleSpec {
        latent: 1,
        visual: 1,
        freq: 8,
        prior_std: 0.5,
        seed: 3,
        ..ToyBundleSpec::default()
    })?;
    let m: Vec<Complex64> = (0..8).map(|f| Complex64::new(0.3 * f as f64, -0.2)).collect();
    let nu = vec![0.05; 8];
    let v = [0.5];
    let target = |z: f64| log_rz(&bundle, &m, &nu, &v, 0.5, &[z]).unwrap_or(f64::NEG_INFINITY);

    let grid = grid_posterior_oracle(target, GridSpec::default())?;
    println!("grid:    mean {:.4}, variance {:.5}", grid.mean, grid.variance);

    let config = MhConfig {
        n_iters: 51_000,
        burn_in: 1_000,
        epsilon: 5.76 * grid.variance,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let run = mh_sample(|z| target(z[0]), &[0.0], &config, &mut rng)?;
    let xs: Vec<f64> = run.samples.iter().map(|z| z[0]).collect();
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
    println!("sampler: mean {mean:.4}, variance {var:.5}, acceptance {:.2}", run.acceptance_rate());
    println!("total-variation distance (50 bins) {:.4}", grid.tv_distance(&xs, 50));
    Ok(())
}
