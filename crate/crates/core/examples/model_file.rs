//! Builds a toy network bundle, writes it as `.vaemm.json`, loads it back and
//! evaluates each network once.

use vaemm::models::{load_model, save_model};
use vaemm::synth::{toy_bundle, ToyBundleSpec};

fn main() -> vaemm::Result<()> {
    let bundle = toy_bundle(&ToyBundleSpec {
        seed: 7,
        ..ToyBundleSpec::default()
    })?;
    let path = std::env::temp_dir().join("toy.vaemm.json");
    save_model(&bundle, &path)?;
    let loaded = load_model(&path)?;
    assert_eq!(loaded, bundle);
    println!("wrote and reloaded {}", path.display());
    println!(
        "latent {}, visual {}, bins {}, encoders: {}",
        loaded.dims.latent,
        loaded.dims.visual,
        loaded.dims.freq,
        loaded.has_encoders()
    );

    let z = [0.4, -0.8];
    let v = [1.0, 0.0];
    let prior = loaded.prior_av(&v)?;
    println!("visual prior mean {:?}, variance {:?}", prior.mean, prior.var);
    let a = loaded.decode_a(&z)?;
    let av = loaded.decode_av(&z, &v)?;
    for f in 0..4 {
        println!("bin {f}: audio-only variance {:.4}, audio-visual {:.4}", a[f], av[f]);
    }
    Ok(())
}
