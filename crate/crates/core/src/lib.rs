//! Unsupervised speech enhancement with a per-frame mixture of an audio-only
//! and an audio-visual variational-autoencoder speech model, a low-rank NMF
//! noise model, and variational EM inference with Metropolis-Hastings
//! sampling of the latent codes.
//!
//! The pipeline, end to end:
//!
//! ```no_run
//! use vaemm::{models, spectral, vem, wav, io};
//!
//! let bundle = models::load_model("model.vaemm.json")?;
//! let noisy = wav::read_wav("noisy.wav")?;
//! let x = spectral::stft(&noisy, &spectral::StftParams::default())?;
//! let visuals = io::read_embeddings("lips.csv")?.aligned(x.n_frames())?;
//! let out = vem::run(&x, Some(&visuals), &bundle, &vem::VemConfig::default())?;
//! wav::write_wav("enhanced.wav", &spectral::istft(&out.enhanced, noisy.sample_rate)?)?;
//! # Ok::<(), vaemm::Error>(())
//! ```

pub mod cli;
pub mod error;
pub mod io;
pub mod metrics;
pub mod mh;
pub mod models;
pub mod nmf;
pub mod spectral;
pub mod synth;
pub mod vem;
pub mod wav;

pub use error::{Error, Result};
