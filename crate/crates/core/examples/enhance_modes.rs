//! Runs the three inference modes on one corrupted scene and reports the
//! output SDR and how well the switch posterior flags the corrupted frames.

use vaemm::metrics::sdr;
use vaemm::spectral::istft;
use vaemm::synth::SceneSpec;
use vaemm::vem::{run, Mode, VemConfig};

fn main() -> vaemm::Result<()> {
    let scene = SceneSpec {
        seed: 2,
        ..SceneSpec::default()
    }
    .build()?;
    let clean = istft(&scene.clean, 16_000)?;
    let sdr_in = sdr(&clean, &istft(&scene.mixture, 16_000)?)?;
    println!("input SDR {sdr_in:.2} dB");

    for mode in [Mode::AudioOnly, Mode::AudioVisual, Mode::Mix] {
        let config = VemConfig {
            mode,
            nmf_rank: 2,
            seed: 2,
            ..VemConfig::default()
        };
        let out = run(&scene.mixture, Some(&scene.visuals), &scene.bundle, &config)?;
        let sdr_out = sdr(&clean, &istft(&out.enhanced, 16_000)?)?;
        print!("{:>3}: output SDR {sdr_out:.2} dB (delta {:+.2})", mode.name(), sdr_out - sdr_in);
        if mode == Mode::Mix {
            let pi_n = out.pi_n();
            let mean = |flag: bool| {
                let picked: Vec<f64> = pi_n.iter().zip(&scene.mask).filter(|(_, m)| **m == flag).map(|(p, _)| *p).collect();
                picked.iter().sum::<f64>() / picked.len() as f64
            };
            print!(
                ", mean switch posterior {:.3} on corrupted frames vs {:.3} on clean, prior {:.3}",
                mean(true),
                mean(false),
                out.state.mixture.pi
            );
        }
        println!();
    }
    Ok(())
}
