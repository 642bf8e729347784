//! Draws a scene from the generative model, corrupts a third of the visual
//! frames in 20-frame blocks and exports it for the command-line tool.
//!
//! `cargo run --example synthetic_scene -- /tmp/scene`

use vaemm::io::export_scene;
use vaemm::metrics::sdr;
use vaemm::spectral::istft;
use vaemm::synth::SceneSpec;

fn main() -> vaemm::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("vaemm-scene"));
    let scene = SceneSpec {
        seed: 1,
        ..SceneSpec::default()
    }
    .build()?;

    let corrupted = scene.mask.iter().filter(|m| **m).count();
    let blocks = scene.mask.windows(2).filter(|w| w[1] && !w[0]).count() + usize::from(scene.mask[0]);
    println!(
        "{} bins x {} frames, {corrupted} corrupted visual frames in {blocks} blocks",
        scene.mixture.n_bins(),
        scene.n_frames()
    );
    let clean = istft(&scene.clean, 16_000)?;
    let noisy = istft(&scene.mixture, 16_000)?;
    println!("input SDR {:.2} dB", sdr(&clean, &noisy)?);

    for path in export_scene(&scene, &dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
