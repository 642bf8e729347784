//! The command-line workflow driven from code: `synth`, then `enhance` in
//! mix mode, then `eval` against the clean reference.

use vaemm::cli::{cmd_enhance, cmd_eval, cmd_synth, EnhanceArgs, EvalArgs, SynthArgs};
use vaemm::io::scene_files;

fn main() -> vaemm::Result<()> {
    let root = std::env::temp_dir().join("vaemm-pipeline");
    let scene = root.join("scene");
    let mut synth = SynthArgs::new(&scene);
    synth.seed = 3;
    cmd_synth(&synth)?;

    let mut enhance = EnhanceArgs::new(
        scene.join(scene_files::MIXTURE),
        scene.join(scene_files::MODEL),
        root.join("enhanced.wav"),
    );
    enhance.visual = Some(scene.join(scene_files::VISUAL));
    enhance.nmf_rank = 2;
    let out = cmd_enhance(&enhance)?;
    println!("{} iterations, traces in {}", out.iterations, out.diagnostics.display());

    let report = cmd_eval(&EvalArgs {
        reference: scene.join(scene_files::CLEAN),
        noisy: scene.join(scene_files::MIXTURE),
        enhanced: out.spectrogram,
        output: Some(root.join("sdr.csv")),
        max_trim: 1024,
    })?;
    println!("{report}");
    Ok(())
}
