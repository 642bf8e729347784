//! Variational EM for the per-frame VAE mixture.
//!
//! Each frame `n` carries a binary switch `α_n`: `α_n = 1` draws the frame
//! from the audio-only model (standard-normal latent prior, decoder `σ^a`),
//! `α_n = 0` from the audio-visual model (visual prior `N(μ̄(v_n), σ̄(v_n))`,
//! decoder `σ^av`). The variational posterior factorizes over the clean
//! speech coefficients, the latent code and the switch. Noise is zero-mean
//! complex Gaussian with NMF variances `W H`.
//!
//! One iteration runs, in order, the latent step (Metropolis-Hastings on the
//! unnormalized latent posterior), the speech step (Wiener-style posterior
//! mean and variance), the switch step (Bernoulli posterior `π_n`) and the
//! parameter step (`W`, `H`, `π`). The per-frame steps are independent given
//! the parameters and run in parallel with one random stream per frame.

use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mh::{mh_sample, LatentSamples, MhConfig};
use crate::models::{LatentGaussian, ModelBundle, VisualEmbeddings};
use crate::nmf::{noise_variance, update_h, update_w, NmfParams, NMF_FLOOR};
use crate::spectral::ComplexSpectrogram;

/// Bounds on the prior switch probability in free mixture mode.
pub const PI_FLOOR: f64 = 1e-6;
/// Bounds on the per-frame switch posterior.
pub const PI_N_FLOOR: f64 = 1e-12;
/// Sigmoid inputs are clamped to this magnitude.
pub const LOGIT_CLAMP: f64 = 500.0;

const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Mixture component selected by the switch `α_n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// `α_n = 1`.
    Audio,
    /// `α_n = 0`.
    AudioVisual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Mix,
    AudioOnly,
    AudioVisual,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Mix => "mix",
            Mode::AudioOnly => "a",
            Mode::AudioVisual => "av",
        }
    }

    pub fn needs_visuals(self) -> bool {
        self != Mode::AudioOnly
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VemConfig {
    pub n_vem_iters: usize,
    pub mh: MhConfig,
    pub nmf_rank: usize,
    pub seed: u64,
    pub mode: Mode,
    /// In mode `Mix`, hold `π_n = π` at this value and skip the switch step.
    pub pinned_pi: Option<f64>,
    /// Stop early when the objective's relative change over five iterations falls below this.
    pub stop_threshold: Option<f64>,
}

impl Default for VemConfig {
    fn default() -> Self {
        Self {
            n_vem_iters: 200,
            mh: MhConfig::default(),
            nmf_rank: 8,
            seed: 0,
            mode: Mode::Mix,
            pinned_pi: None,
            stop_threshold: None,
        }
    }
}

impl VemConfig {
    pub fn validate(&self) -> Result<()> {
        self.mh.validate()?;
        if self.n_vem_iters == 0 {
            return Err(Error::invalid("iteration count must be positive"));
        }
        if self.nmf_rank == 0 {
            return Err(Error::invalid("NMF rank must be positive"));
        }
        if let Some(p) = self.pinned_pi {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("pinned switch probability {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Prior switch probability `π = P(α_n = 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureParams {
    pub pi: f64,
}

/// Per-frame variational state.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePosterior {
    /// Posterior mean of the clean coefficients.
    pub m: Vec<Complex64>,
    /// Posterior variance of the clean coefficients.
    pub nu: Vec<f64>,
    /// `r(α_n = 1)`.
    pub pi_n: f64,
    pub z_samples: LatentSamples,
    /// Effective speech variance, `1 / (π_n η^a + (1 − π_n) η^av)`.
    pub gamma: Vec<f64>,
    pub eta_a: Option<Vec<f64>>,
    pub eta_av: Option<Vec<f64>>,
    /// Acceptance rate of the last latent chain.
    pub acceptance: f64,
}

impl FramePosterior {
    /// `|m_f|² + ν_f`.
    pub fn posterior_power(&self) -> Vec<f64> {
        self.m
            .iter()
            .zip(&self.nu)
            .map(|(m, nu)| m.norm_sqr() + nu)
            .collect()
    }
}

/// `σ^a(z)` for the audio component, `σ^av(z, v)` otherwise.
pub fn mixture_variance(
    bundle: &ModelBundle,
    z: &[f64],
    v: Option<&[f64]>,
    component: Component,
) -> Result<Vec<f64>> {
    match component {
        Component::Audio => bundle.decode_a(z),
        Component::AudioVisual => {
            bundle.decode_av(z, v.ok_or(Error::VisualsRequired("av"))?)
        }
    }
}

fn log_var(bundle: &ModelBundle, z: &[f64], v: Option<&[f64]>, component: Component) -> Vec<f64> {
    match component {
        Component::Audio => bundle.log_var_a(z),
        Component::AudioVisual => bundle.log_var_av(z, v.expect("visual embedding checked by caller")),
    }
}

fn eta_from_log_vars(log_vars: &[Vec<f64>]) -> Vec<f64> {
    let n_bins = log_vars[0].len();
    let mut eta = vec![0.0; n_bins];
    for lv in log_vars {
        for (e, l) in eta.iter_mut().zip(lv) {
            *e += (-l).exp();
        }
    }
    let d = log_vars.len() as f64;
    eta.iter_mut().for_each(|e| *e /= d);
    eta
}

/// Monte-Carlo estimate of `E[1 / σ_f]` under the retained latent samples.
pub fn compute_eta(
    bundle: &ModelBundle,
    samples: &LatentSamples,
    v: Option<&[f64]>,
    component: Component,
) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("no latent samples"));
    }
    let mut log_vars = Vec::with_capacity(samples.len());
    for z in samples.iter() {
        let var = mixture_variance(bundle, z, v, component)?;
        log_vars.push(var.iter().map(|s| s.ln()).collect::<Vec<_>>());
    }
    check_eta(eta_from_log_vars(&log_vars))
}

fn check_eta(eta: Vec<f64>) -> Result<Vec<f64>> {
    if eta.iter().all(|e| e.is_finite() && *e > 0.0) {
        Ok(eta)
    } else {
        Err(Error::NonFinite("inverse speech variance".into()))
    }
}

/// `γ_f = 1 / (π_n η^a_f + (1 − π_n) η^av_f)`; a branch whose weight is
/// zero is skipped and may be absent.
pub fn compute_gamma(eta_a: Option<&[f64]>, eta_av: Option<&[f64]>, pi_n: f64) -> Vec<f64> {
    let weight_a = pi_n;
    let weight_av = 1.0 - pi_n;
    let n_bins = eta_a.or(eta_av).map(<[f64]>::len).unwrap_or(0);
    (0..n_bins)
        .map(|f| {
            let mut precision = 0.0;
            if weight_a != 0.0 {
                precision += weight_a * eta_a.expect("audio branch has positive weight")[f];
            }
            if weight_av != 0.0 {
                precision += weight_av * eta_av.expect("audio-visual branch has positive weight")[f];
            }
            1.0 / precision
        })
        .collect()
}

/// Posterior mean and variance of the clean coefficients of one frame.
pub fn e_step_s(x: &[Complex64], gamma: &[f64], noise_var: &[f64]) -> (Vec<Complex64>, Vec<f64>) {
    debug_assert_eq!(x.len(), gamma.len());
    debug_assert_eq!(x.len(), noise_var.len());
    let mut m = Vec::with_capacity(x.len());
    let mut nu = Vec::with_capacity(x.len());
    for ((x, g), b) in x.iter().zip(gamma).zip(noise_var) {
        let gain = g / (g + b);
        m.push(x * gain);
        nu.push(gain * b);
    }
    (m, nu)
}

/// How the two branches of the latent posterior are combined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    Audio,
    AudioVisual,
    /// Weight `π_n` on the audio branch and `1 − π_n` on the audio-visual branch.
    Mixture(f64),
}

/// Unnormalized log posterior of one frame's latent code.
pub struct LatentTarget<'a> {
    pub bundle: &'a ModelBundle,
    /// `|m_f|² + ν_f`.
    pub power: &'a [f64],
    /// Visual embedding and its latent prior, needed by the audio-visual branch.
    pub visual: Option<(&'a [f64], &'a LatentGaussian)>,
    pub weighting: Weighting,
}

impl LatentTarget<'_> {
    fn likelihood_terms(&self, log_var: &[f64]) -> f64 {
        log_var
            .iter()
            .zip(self.power)
            .map(|(l, p)| -LN_PI - l - p * (-l).exp())
            .sum()
    }

    /// Branch value `log p(z | v, α) + E_r(s)[log p(s | z, v, α)]`.
    pub fn branch(&self, z: &[f64], component: Component) -> f64 {
        match component {
            Component::Audio => {
                let prior = LatentGaussian::standard(z.len()).log_density(z);
                prior + self.likelihood_terms(&self.bundle.log_var_a(z))
            }
            Component::AudioVisual => {
                let (v, prior) = self.visual.expect("audio-visual branch needs visuals");
                prior.log_density(z) + self.likelihood_terms(&self.bundle.log_var_av(z, v))
            }
        }
    }

    pub fn log_density(&self, z: &[f64]) -> f64 {
        let value = match self.weighting {
            Weighting::Audio => self.branch(z, Component::Audio),
            Weighting::AudioVisual => self.branch(z, Component::AudioVisual),
            Weighting::Mixture(pi_n) => {
                let mut total = 0.0;
                if pi_n != 0.0 {
                    total += pi_n * self.branch(z, Component::Audio);
                }
                if pi_n != 1.0 {
                    total += (1.0 - pi_n) * self.branch(z, Component::AudioVisual);
                }
                total
            }
        };
        if value.is_nan() {
            f64::NEG_INFINITY
        } else {
            value
        }
    }
}

/// Unnormalized latent log posterior of a frame in the mixture model,
/// given the clean-speech posterior `(m, ν)` and switch posterior `π_n`.
pub fn log_rz(
    bundle: &ModelBundle,
    m: &[Complex64],
    nu: &[f64],
    v: &[f64],
    pi_n: f64,
    z: &[f64],
) -> Result<f64> {
    let prior = bundle.prior_av(v)?;
    let power: Vec<f64> = m.iter().zip(nu).map(|(m, n)| m.norm_sqr() + n).collect();
    let target = LatentTarget {
        bundle,
        power: &power,
        visual: Some((v, &prior)),
        weighting: Weighting::Mixture(pi_n),
    };
    Ok(target.log_density(z))
}

fn sigmoid_clamped(x: f64) -> f64 {
    let x = x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    (1.0 / (1.0 + (-x).exp())).clamp(PI_N_FLOOR, 1.0 - PI_N_FLOOR)
}

/// Monte-Carlo log-odds of `α_n = 1` against `α_n = 0`, without the prior term.
fn alpha_evidence(
    samples: &LatentSamples,
    log_vars_a: &[Vec<f64>],
    log_vars_av: &[Vec<f64>],
    prior: &LatentGaussian,
    power: &[f64],
) -> f64 {
    let mut total = 0.0;
    for ((z, la), lav) in samples.iter().zip(log_vars_a).zip(log_vars_av) {
        let mut speech = 0.0;
        for ((a, av), p) in la.iter().zip(lav).zip(power) {
            speech += (av - a) + ((-av).exp() - (-a).exp()) * p;
        }
        let mut latent = 0.0;
        for ((z, mu), var) in z.iter().zip(&prior.mean).zip(&prior.var) {
            latent += 0.5 * var.ln() + (z - mu) * (z - mu) / (2.0 * var) - 0.5 * z * z;
        }
        total += speech + latent;
    }
    total / samples.len() as f64
}

/// Bernoulli posterior `π_n = r(α_n = 1)` of one frame.
pub fn e_step_alpha(
    bundle: &ModelBundle,
    samples: &LatentSamples,
    v: &[f64],
    m: &[Complex64],
    nu: &[f64],
    pi: f64,
) -> Result<f64> {
    if !(pi > 0.0 && pi < 1.0) {
        return Err(Error::invalid(format!("prior switch probability {pi} must lie in (0, 1)")));
    }
    if samples.is_empty() {
        return Err(Error::invalid("no latent samples"));
    }
    let prior = bundle.prior_av(v)?;
    let power: Vec<f64> = m.iter().zip(nu).map(|(m, n)| m.norm_sqr() + n).collect();
    let mut la = Vec::with_capacity(samples.len());
    let mut lav = Vec::with_capacity(samples.len());
    for z in samples.iter() {
        la.push(bundle.decode_a(z)?.iter().map(|s| s.ln()).collect::<Vec<_>>());
        lav.push(bundle.decode_av(z, v)?.iter().map(|s| s.ln()).collect::<Vec<_>>());
    }
    let evidence = alpha_evidence(samples, &la, &lav, &prior, &power);
    Ok(sigmoid_clamped(evidence + logit(pi)))
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `x log y` with `0 log 0 = 0`.
fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// `V_fn = |x_fn − m_fn|² + ν_fn`.
pub fn assemble_power(x: &ComplexSpectrogram, frames: &[FramePosterior]) -> Array2<f64> {
    let mut v = Array2::zeros(x.values.dim());
    for (n, frame) in frames.iter().enumerate() {
        for f in 0..x.n_bins() {
            v[[f, n]] = (x.values[[f, n]] - frame.m[f]).norm_sqr() + frame.nu[f];
        }
    }
    v
}

/// Expected complete-data log-likelihood monitored across iterations:
/// `Σ_fn −V_fn / (WH)_fn − log (WH)_fn + Σ_n π_n log π + (1 − π_n) log(1 − π)`.
pub fn q_function(v: &Array2<f64>, nmf: &NmfParams, frames: &[FramePosterior], pi: f64) -> f64 {
    let r = noise_variance(nmf);
    let noise: f64 = v
        .iter()
        .zip(r.iter())
        .map(|(v, r)| {
            let r = r.max(NMF_FLOOR);
            -v / r - r.ln()
        })
        .sum();
    let switch: f64 = frames
        .iter()
        .map(|fp| xlogy(fp.pi_n, pi) + xlogy(1.0 - fp.pi_n, 1.0 - pi))
        .sum();
    noise + switch
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pipeline {
    Audio,
    AudioVisual,
    Mixture { free: bool },
}

impl Pipeline {
    fn weighting(self, pi_n: f64) -> Weighting {
        match self {
            Pipeline::Audio => Weighting::Audio,
            Pipeline::AudioVisual => Weighting::AudioVisual,
            Pipeline::Mixture { .. } => Weighting::Mixture(pi_n),
        }
    }
}

#[derive(Debug, Clone)]
struct Chain {
    z: Vec<f64>,
    rng: ChaCha8Rng,
}

/// Full inference state.
#[derive(Debug, Clone)]
pub struct VemState<'a> {
    pub bundle: &'a ModelBundle,
    pub x: &'a ComplexSpectrogram,
    pub visuals: Option<&'a VisualEmbeddings>,
    pub frames: Vec<FramePosterior>,
    pub nmf: NmfParams,
    pub mixture: MixtureParams,
    pub config: VemConfig,
    priors: Option<Vec<LatentGaussian>>,
    chains: Vec<Chain>,
    pipeline: Pipeline,
}

fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 + 1);
    rng
}

/// Sets up the posteriors and parameters before the first iteration.
pub fn init_state<'a>(
    x: &'a ComplexSpectrogram,
    visuals: Option<&'a VisualEmbeddings>,
    bundle: &'a ModelBundle,
    config: &VemConfig,
) -> Result<VemState<'a>> {
    config.validate()?;
    bundle.validate()?;
    if x.n_frames() == 0 {
        return Err(Error::EmptySpectrogram);
    }
    if x.n_bins() != bundle.n_bins() {
        return Err(Error::dims(format!(
            "spectrogram has {} bins, model expects {}",
            x.n_bins(),
            bundle.n_bins()
        )));
    }
    if x.values.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::NonFinite("observed spectrogram".into()));
    }
    let pipeline = match (config.mode, config.pinned_pi) {
        (Mode::AudioOnly, _) => Pipeline::Audio,
        (Mode::AudioVisual, _) => Pipeline::AudioVisual,
        (Mode::Mix, pinned) => Pipeline::Mixture {
            free: pinned.is_none(),
        },
    };
    let visuals = if config.mode.needs_visuals() {
        let v = visuals.ok_or(Error::VisualsRequired(config.mode.name()))?;
        if v.dim() != bundle.visual_dim() {
            return Err(Error::dims(format!(
                "visual embeddings have dimension {}, model expects {}",
                v.dim(),
                bundle.visual_dim()
            )));
        }
        if v.n_frames() != x.n_frames() {
            return Err(Error::dims(format!(
                "{} visual embedding rows for {} frames",
                v.n_frames(),
                x.n_frames()
            )));
        }
        Some(v)
    } else {
        None
    };
    let priors = visuals
        .map(|v| (0..v.n_frames()).map(|n| bundle.prior_av(v.row(n))).collect::<Result<Vec<_>>>())
        .transpose()?;

    let pi = match pipeline {
        Pipeline::Audio => 1.0,
        Pipeline::AudioVisual => 0.0,
        Pipeline::Mixture { .. } => config.pinned_pi.unwrap_or(0.5),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let nmf = NmfParams::random(x.n_bins(), x.n_frames(), config.nmf_rank, &mut init_rng);

    let latent = bundle.latent_dim();
    let mut frames = Vec::with_capacity(x.n_frames());
    let mut chains = Vec::with_capacity(x.n_frames());
    for n in 0..x.n_frames() {
        let column: Vec<Complex64> = x.values.column(n).to_vec();
        let power: Vec<f64> = column.iter().map(|c| c.norm_sqr()).collect();
        let v = visuals.map(|v| v.row(n));
        let z = initial_latent(bundle, &power, v, priors.as_ref().map(|p| &p[n]), pi, latent)?;
        let samples = LatentSamples::repeated(&z, 1);
        let (eta_a, eta_av) = frame_etas(bundle, &samples, v, pipeline, pi)?;
        let gamma = compute_gamma(eta_a.as_deref(), eta_av.as_deref(), pi);
        frames.push(FramePosterior {
            m: column,
            nu: vec![0.0; x.n_bins()],
            pi_n: pi,
            z_samples: samples,
            gamma,
            eta_a,
            eta_av,
            acceptance: 0.0,
        });
        chains.push(Chain {
            z,
            rng: frame_rng(config.seed, n),
        });
    }
    Ok(VemState {
        bundle,
        x,
        visuals,
        frames,
        nmf,
        mixture: MixtureParams { pi },
        config: *config,
        priors,
        chains,
        pipeline,
    })
}

/// `π z^a + (1 − π) z^av` from the encoder means, or from the two latent
/// prior means when the bundle has no encoders.
fn initial_latent(
    bundle: &ModelBundle,
    power: &[f64],
    v: Option<&[f64]>,
    prior: Option<&LatentGaussian>,
    pi: f64,
    latent: usize,
) -> Result<Vec<f64>> {
    let audio = || -> Result<Vec<f64>> {
        match bundle.encode_a(power) {
            Some(enc) if bundle.has_encoders() => Ok(enc?.mean),
            _ => Ok(vec![0.0; latent]),
        }
    };
    let visual = || -> Result<Vec<f64>> {
        let v = v.expect("visual branch has positive weight");
        match bundle.encode_av(power, v) {
            Some(enc) if bundle.has_encoders() => Ok(enc?.mean),
            _ => Ok(prior.expect("prior computed with visuals").mean.clone()),
        }
    };
    let mut z = vec![0.0; latent];
    if pi != 0.0 {
        for (zi, a) in z.iter_mut().zip(audio()?) {
            *zi += pi * a;
        }
    }
    if pi != 1.0 {
        for (zi, av) in z.iter_mut().zip(visual()?) {
            *zi += (1.0 - pi) * av;
        }
    }
    Ok(z)
}

type EtaPair = (Option<Vec<f64>>, Option<Vec<f64>>);

fn frame_etas(
    bundle: &ModelBundle,
    samples: &LatentSamples,
    v: Option<&[f64]>,
    pipeline: Pipeline,
    pi_n: f64,
) -> Result<EtaPair> {
    let log_vars = |component| -> Vec<Vec<f64>> {
        samples.iter().map(|z| log_var(bundle, z, v, component)).collect()
    };
    let (la, lav) = branch_log_vars(pipeline, pi_n, log_vars);
    let eta_a = la.as_deref().map(eta_from_log_vars).map(check_eta).transpose()?;
    let eta_av = lav.as_deref().map(eta_from_log_vars).map(check_eta).transpose()?;
    Ok((eta_a, eta_av))
}

type LogVarPair = (Option<Vec<Vec<f64>>>, Option<Vec<Vec<f64>>>);

// Decoder outputs for the branches the pipeline needs at this frame.
fn branch_log_vars<F>(pipeline: Pipeline, pi_n: f64, log_vars: F) -> LogVarPair
where
    F: Fn(Component) -> Vec<Vec<f64>>,
{
    match pipeline {
        Pipeline::Audio => (Some(log_vars(Component::Audio)), None),
        Pipeline::AudioVisual => (None, Some(log_vars(Component::AudioVisual))),
        Pipeline::Mixture { free } => {
            let need_a = free || pi_n != 0.0;
            let need_av = free || pi_n != 1.0;
            (
                need_a.then(|| log_vars(Component::Audio)),
                need_av.then(|| log_vars(Component::AudioVisual)),
            )
        }
    }
}

struct FrameInputs<'a> {
    bundle: &'a ModelBundle,
    x: &'a ComplexSpectrogram,
    visuals: Option<&'a VisualEmbeddings>,
    priors: Option<&'a [LatentGaussian]>,
    noise: &'a Array2<f64>,
    pi: f64,
    mh: MhConfig,
    pipeline: Pipeline,
}

impl FrameInputs<'_> {
    // Latent, speech and switch steps for frame `n`.
    fn update(&self, n: usize, frame: &mut FramePosterior, chain: &mut Chain) -> Result<()> {
        let bundle = self.bundle;
        let v = self.visuals.map(|v| v.row(n));
        let prior = self.priors.map(|p| &p[n]);

        let power = frame.posterior_power();
        let target = LatentTarget {
            bundle,
            power: &power,
            visual: v.zip(prior),
            weighting: self.pipeline.weighting(frame.pi_n),
        };
        let run = mh_sample(|z| target.log_density(z), &chain.z, &self.mh, &mut chain.rng)?;
        chain.z = run.samples.last().to_vec();
        frame.acceptance = run.acceptance_rate();
        frame.z_samples = run.samples;

        let samples = &frame.z_samples;
        let (la, lav) = branch_log_vars(self.pipeline, frame.pi_n, |component| {
            samples.iter().map(|z| log_var(bundle, z, v, component)).collect()
        });
        frame.eta_a = la.as_deref().map(eta_from_log_vars).map(check_eta).transpose()?;
        frame.eta_av = lav.as_deref().map(eta_from_log_vars).map(check_eta).transpose()?;
        frame.gamma = compute_gamma(frame.eta_a.as_deref(), frame.eta_av.as_deref(), frame.pi_n);

        let x: Vec<Complex64> = self.x.values.column(n).to_vec();
        let noise: Vec<f64> = self.noise.column(n).to_vec();
        let (m, nu) = e_step_s(&x, &frame.gamma, &noise);
        frame.m = m;
        frame.nu = nu;

        if let Pipeline::Mixture { free: true } = self.pipeline {
            let power = frame.posterior_power();
            let evidence = alpha_evidence(
                samples,
                la.as_deref().expect("free mixture evaluates both branches"),
                lav.as_deref().expect("free mixture evaluates both branches"),
                prior.expect("mixture has visuals"),
                &power,
            );
            frame.pi_n = sigmoid_clamped(evidence + logit(self.pi));
            frame.gamma = compute_gamma(frame.eta_a.as_deref(), frame.eta_av.as_deref(), frame.pi_n);
        }
        Ok(())
    }
}

impl VemState<'_> {
    /// Latent, speech and switch steps for every frame, in parallel.
    pub fn e_steps(&mut self) -> Result<()> {
        let noise = noise_variance(&self.nmf);
        let inputs = FrameInputs {
            bundle: self.bundle,
            x: self.x,
            visuals: self.visuals,
            priors: self.priors.as_deref(),
            noise: &noise,
            pi: self.mixture.pi,
            mh: self.config.mh,
            pipeline: self.pipeline,
        };
        self.frames
            .par_iter_mut()
            .zip(self.chains.par_iter_mut())
            .enumerate()
            .map(|(n, (frame, chain))| inputs.update(n, frame, chain))
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }

    /// Parameter step; returns the power matrix `V` it used.
    pub fn m_step(&mut self) -> Result<Array2<f64>> {
        let v = assemble_power(self.x, &self.frames);
        let nmf = update_h(&self.nmf, &v)?;
        self.nmf = update_w(&nmf, &v)?;
        if let Pipeline::Mixture { free: true } = self.pipeline {
            let mean = self.frames.iter().map(|f| f.pi_n).sum::<f64>() / self.frames.len() as f64;
            self.mixture.pi = mean.clamp(PI_FLOOR, 1.0 - PI_FLOOR);
        }
        Ok(v)
    }

    pub fn pi_n(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.pi_n).collect()
    }

    pub fn mean_acceptance(&self) -> f64 {
        let total: f64 = self.frames.iter().map(|f| f.acceptance).sum();
        total / self.frames.len() as f64
    }
}

/// Posterior-mean clean speech `γ / (γ + (WH)) · x`.
pub fn enhance(state: &VemState<'_>) -> ComplexSpectrogram {
    let noise = noise_variance(&state.nmf);
    let mut values = state.x.values.clone();
    for (n, frame) in state.frames.iter().enumerate() {
        for (f, g) in frame.gamma.iter().enumerate() {
            let gain = g / (g + noise[[f, n]]);
            values[[f, n]] *= gain;
        }
    }
    state.x.with_values(values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    pub q: f64,
    pub pi: f64,
    pub acceptance: f64,
}

#[derive(Debug, Clone)]
pub struct VemOutput<'a> {
    pub enhanced: ComplexSpectrogram,
    pub trace: Vec<IterationTrace>,
    pub state: VemState<'a>,
}

impl VemOutput<'_> {
    pub fn pi_n(&self) -> Vec<f64> {
        self.state.pi_n()
    }
}

const STOP_WINDOW: usize = 5;

/// Runs the full inference loop and returns the clean-speech estimate.
pub fn run<'a>(
    x: &'a ComplexSpectrogram,
    visuals: Option<&'a VisualEmbeddings>,
    bundle: &'a ModelBundle,
    config: &VemConfig,
) -> Result<VemOutput<'a>> {
    let mut state = init_state(x, visuals, bundle, config)?;
    let mut trace = Vec::with_capacity(config.n_vem_iters);
    for iteration in 0..config.n_vem_iters {
        state.e_steps()?;
        let v = state.m_step()?;
        let q = q_function(&v, &state.nmf, &state.frames, state.mixture.pi);
        if !q.is_finite() {
            return Err(Error::NonFinite(format!("objective at iteration {iteration}")));
        }
        trace.push(IterationTrace {
            iteration,
            q,
            pi: state.mixture.pi,
            acceptance: state.mean_acceptance(),
        });
        if let Some(threshold) = config.stop_threshold {
            if trace.len() > STOP_WINDOW {
                let old = trace[trace.len() - 1 - STOP_WINDOW].q;
                if (q - old).abs() <= threshold * old.abs() {
                    break;
                }
            }
        }
    }
    let enhanced = enhance(&state);
    Ok(VemOutput {
        enhanced,
        trace,
        state,
    })
}
