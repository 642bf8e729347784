//! Command-line front end: `enhance`, `synth` and `eval`.
//!
//! Exit codes: 0 success, 2 validation error, 3 I/O error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::{
    export_scene, read_embeddings, read_spectrogram, write_csv, write_frame_pi, write_spectrogram, write_trace,
};
use crate::metrics::{sdr_report, SdrReport};
use crate::mh::MhConfig;
use crate::models::load_model;
use crate::spectral::{istft, stft, AudioSignal, ComplexSpectrogram, StftParams, Window, DEFAULT_SAMPLE_RATE};
use crate::synth::{SceneSpec, ToyBundleSpec};
use crate::vem::{run, Mode, VemConfig};
use crate::wav::{read_wav, write_wav};

#[derive(Debug, Parser)]
#[command(name = "vaemm", version, about = "Audio-visual speech enhancement with a per-frame VAE mixture")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Enhance a noisy recording.
    Enhance(EnhanceArgs),
    /// Generate a synthetic scene directory.
    Synth(SynthArgs),
    /// Report SDR of noisy and enhanced signals against a reference.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeArg {
    A,
    Av,
    Mix,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::A => Mode::AudioOnly,
            ModeArg::Av => Mode::AudioVisual,
            ModeArg::Mix => Mode::Mix,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnhanceArgs {
    /// Noisy input: 16-bit mono WAV, or a `.spec` spectrogram.
    #[arg(long)]
    pub input: PathBuf,
    /// Visual embeddings (`.csv` or binary); required unless `--mode a`.
    #[arg(long)]
    pub visual: Option<PathBuf>,
    /// Model file (`.vaemm.json`).
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "mix")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 200)]
    pub iters: usize,
    #[arg(long, default_value_t = 40)]
    pub mh_iters: usize,
    #[arg(long, default_value_t = 30)]
    pub mh_burnin: usize,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 8)]
    pub nmf_rank: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Enhanced WAV path.
    #[arg(long)]
    pub output: PathBuf,
    /// Directory for traces, the enhanced spectrogram and the manifest; defaults to the output's directory.
    #[arg(long)]
    pub trace_dir: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Hold the switch posterior at this value in mix mode.
    #[arg(long)]
    pub pin_pi: Option<f64>,
    /// Relative objective change over five iterations that ends the loop early.
    #[arg(long)]
    pub stop_threshold: Option<f64>,
    /// STFT size for WAV input.
    #[arg(long, default_value_t = crate::spectral::DEFAULT_FFT_SIZE)]
    pub fft_size: usize,
    /// STFT hop for WAV input.
    #[arg(long, default_value_t = crate::spectral::DEFAULT_HOP)]
    pub hop: usize,
}

impl EnhanceArgs {
    /// Arguments with every default filled in.
    pub fn new(input: impl Into<PathBuf>, model: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            visual: None,
            model: model.into(),
            mode: ModeArg::Mix,
            iters: 200,
            mh_iters: 40,
            mh_burnin: 30,
            epsilon: 0.01,
            nmf_rank: 8,
            seed: 0,
            output: output.into(),
            trace_dir: None,
            threads: None,
            pin_pi: None,
            stop_threshold: None,
            fft_size: crate::spectral::DEFAULT_FFT_SIZE,
            hop: crate::spectral::DEFAULT_HOP,
        }
    }

    pub fn vem_config(&self) -> VemConfig {
        VemConfig {
            n_vem_iters: self.iters,
            mh: MhConfig {
                n_iters: self.mh_iters,
                burn_in: self.mh_burnin,
                epsilon: self.epsilon,
            },
            nmf_rank: self.nmf_rank,
            seed: self.seed,
            mode: self.mode.into(),
            pinned_pi: self.pin_pi,
            stop_threshold: self.stop_threshold,
        }
    }

    pub fn trace_dir(&self) -> PathBuf {
        self.trace_dir.clone().unwrap_or_else(|| {
            self.output
                .parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from("."))
        })
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SynthArgs {
    /// Scene directory to create.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = 300)]
    pub frames: usize,
    #[arg(long, default_value_t = 16)]
    pub freq: usize,
    #[arg(long, default_value_t = 2)]
    pub latent: usize,
    #[arg(long, default_value_t = 2)]
    pub visual: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    /// Probability that a frame is drawn from the audio-only model.
    #[arg(long, default_value_t = 0.0)]
    pub pi: f64,
    /// Fraction of visual frames to corrupt; 0 disables corruption.
    #[arg(long, default_value_t = 1.0 / 3.0)]
    pub corrupt: f64,
    #[arg(long, default_value_t = 20)]
    pub block_len: usize,
    #[arg(long, default_value_t = 2)]
    pub noise_rank: usize,
    /// Scale of the noise NMF factors' entries squared.
    #[arg(long, default_value_t = 0.2)]
    pub noise_level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl SynthArgs {
    pub fn new(output: impl Into<PathBuf>) -> Self {
        Self {
            output: output.into(),
            frames: 300,
            freq: 16,
            latent: 2,
            visual: 2,
            hidden: 16,
            pi: 0.0,
            corrupt: 1.0 / 3.0,
            block_len: 20,
            noise_rank: 2,
            noise_level: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalArgs {
    /// Clean reference (`.wav` or `.spec`).
    #[arg(long)]
    pub reference: PathBuf,
    /// Noisy input (`.wav` or `.spec`).
    #[arg(long)]
    pub noisy: PathBuf,
    /// Enhanced output (`.wav` or `.spec`).
    #[arg(long)]
    pub enhanced: PathBuf,
    /// CSV report path.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Largest length difference, in samples, that is trimmed rather than rejected.
    #[arg(long, default_value_t = 1024)]
    pub max_trim: usize,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a, T: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'static str,
    args: &'a T,
    outputs: Vec<PathBuf>,
    started_unix_s: u64,
    finished_unix_s: u64,
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::invalid(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn is_spec(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("spec"))
}

fn load_input(args: &EnhanceArgs) -> Result<(ComplexSpectrogram, u32)> {
    if is_spec(&args.input) {
        Ok((read_spectrogram(&args.input)?, DEFAULT_SAMPLE_RATE))
    } else {
        let signal = read_wav(&args.input)?;
        let params = StftParams::new(args.fft_size, args.hop, Window::SqrtHann)?;
        Ok((stft(&signal, &params)?, signal.sample_rate))
    }
}

/// Files written by [`cmd_enhance`].
#[derive(Debug, Clone)]
pub struct EnhanceOutputs {
    pub wav: PathBuf,
    pub spectrogram: PathBuf,
    pub frame_pi: PathBuf,
    pub diagnostics: PathBuf,
    pub manifest: PathBuf,
    pub iterations: usize,
}

pub fn cmd_enhance(args: &EnhanceArgs) -> Result<EnhanceOutputs> {
    let started = unix_now();
    let config = args.vem_config();
    config.validate()?;
    let bundle = load_model(&args.model)?;
    if bundle.latent_not_small() {
        eprintln!(
            "warning: latent dimension {} is not small compared with {} bins",
            bundle.dims.latent, bundle.dims.freq
        );
    }
    let (x, sample_rate) = load_input(args)?;
    let visuals = match (&args.visual, config.mode.needs_visuals()) {
        (Some(path), true) => Some(read_embeddings(path)?.aligned(x.n_frames())?),
        (None, true) => return Err(Error::VisualsRequired(config.mode.name())),
        (_, false) => None,
    };
    if 2 * args.nmf_rank * (x.n_bins() + x.n_frames()) > x.n_bins() * x.n_frames() {
        eprintln!("warning: NMF rank {} is not small for a {}x{} spectrogram", args.nmf_rank, x.n_bins(), x.n_frames());
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads.unwrap_or(0))
        .build()
        .map_err(|e| Error::invalid(e.to_string()))?;
    let output = pool.install(|| run(&x, visuals.as_ref(), &bundle, &config))?;

    let trace_dir = args.trace_dir();
    fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    let outputs = EnhanceOutputs {
        wav: args.output.clone(),
        spectrogram: trace_dir.join("enhanced.spec"),
        frame_pi: trace_dir.join("pi_n.csv"),
        diagnostics: trace_dir.join("diagnostics.csv"),
        manifest: trace_dir.join("manifest.json"),
        iterations: output.trace.len(),
    };
    write_wav(&outputs.wav, &istft(&output.enhanced, sample_rate)?)?;
    write_spectrogram(&outputs.spectrogram, &output.enhanced)?;
    write_frame_pi(&outputs.frame_pi, &output.pi_n())?;
    write_trace(&outputs.diagnostics, &output.trace)?;
    let manifest = RunManifest {
        tool: "vaemm",
        version: env!("CARGO_PKG_VERSION"),
        command: "enhance",
        args,
        outputs: vec![
            outputs.wav.clone(),
            outputs.spectrogram.clone(),
            outputs.frame_pi.clone(),
            outputs.diagnostics.clone(),
        ],
        started_unix_s: started,
        finished_unix_s: unix_now(),
    };
    write_json(&outputs.manifest, &manifest)?;
    Ok(outputs)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let corrupting = args.corrupt > 0.0;
    if corrupting && args.frames < args.block_len {
        return Err(Error::invalid(format!(
            "{} frames cannot hold a corruption block of {}",
            args.frames, args.block_len
        )));
    }
    if args.freq < 2 || args.latent == 0 || args.visual == 0 || args.hidden == 0 || args.noise_rank == 0 {
        return Err(Error::invalid("scene dimensions must be positive (and at least 2 bins)"));
    }
    let scene = SceneSpec {
        bundle: ToyBundleSpec {
            latent: args.latent,
            visual: args.visual,
            freq: args.freq,
            hidden: args.hidden,
            ..ToyBundleSpec::default()
        },
        n_frames: args.frames,
        noise_rank: args.noise_rank,
        noise_level: args.noise_level,
        pi_true: args.pi,
        corrupt: corrupting.then_some(args.corrupt),
        block_len: args.block_len,
        seed: args.seed,
    }
    .build()?;
    let mut files = export_scene(&scene, &args.output)?;
    let manifest = args.output.join("scene.json");
    write_json(
        &manifest,
        &serde_json::json!({
            "tool": "vaemm",
            "version": env!("CARGO_PKG_VERSION"),
            "command": "synth",
            "args": args,
        }),
    )?;
    files.push(manifest);
    Ok(files)
}

fn load_signal(path: &Path) -> Result<AudioSignal> {
    if is_spec(path) {
        istft(&read_spectrogram(path)?, DEFAULT_SAMPLE_RATE)
    } else {
        read_wav(path)
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<SdrReport> {
    let reference = load_signal(&args.reference)?;
    let noisy = load_signal(&args.noisy)?;
    let enhanced = load_signal(&args.enhanced)?;
    let lens = [reference.len(), noisy.len(), enhanced.len()];
    let (lo, hi) = (lens.iter().min().unwrap(), lens.iter().max().unwrap());
    if hi - lo > args.max_trim {
        return Err(Error::dims(format!(
            "signal lengths {lens:?} differ by more than {} samples",
            args.max_trim
        )));
    }
    let report = sdr_report(&reference, &noisy, &enhanced)?;
    if let Some(path) = &args.output {
        write_csv(path, SdrReport::CSV_HEADER, [report.csv_row()])?;
    }
    Ok(report)
}

/// Runs one parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Enhance(args) => cmd_enhance(&args).map(|out| {
            println!(
                "enhanced {} ({} iterations); traces in {}",
                out.wav.display(),
                out.iterations,
                out.manifest.parent().unwrap_or(Path::new(".")).display()
            );
        }),
        Command::Synth(args) => cmd_synth(&args).map(|files| {
            println!("wrote {} files to {}", files.len(), args.output.display());
        }),
        Command::Eval(args) => cmd_eval(&args).map(|report| {
            println!("{}", SdrReport::CSV_HEADER);
            println!("{}", report.csv_row());
            println!("{report}");
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
