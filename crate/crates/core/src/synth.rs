//! Synthetic scenes drawn from the generative model itself, the visual
//! corruption protocol, toy networks, and a grid-quadrature posterior used
//! as a reference by tests.

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::models::{Activation, Layer, LatentGaussian, Mlp, ModelBundle, ModelDims, VisualEmbeddings};
use crate::nmf::{noise_variance, NmfParams};
use crate::spectral::{ComplexSpectrogram, StftParams};

/// Shape and scaling of a randomly initialized toy bundle.
///
/// Every network is a single tanh hidden layer followed by a linear head.
/// The audio-visual decoder reuses the audio-only decoder's weights for the
/// latent input and adds a visual input scaled by `visual_coupling`, so the
/// two decoders differ but stay close. The visual prior has a random mean
/// head and a constant variance `prior_std²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyBundleSpec {
    pub latent: usize,
    pub visual: usize,
    pub freq: usize,
    pub hidden: usize,
    pub weight_scale: f64,
    /// Extra gain on the decoders' output layer.
    pub output_gain: f64,
    pub visual_coupling: f64,
    pub prior_std: f64,
    /// Added to every decoded log-variance.
    pub log_var_offset: f64,
    pub seed: u64,
}

impl Default for ToyBundleSpec {
    fn default() -> Self {
        Self {
            latent: 2,
            visual: 2,
            freq: 16,
            hidden: 16,
            weight_scale: 0.5,
            output_gain: 2.0,
            visual_coupling: 0.1,
            prior_std: 0.1,
            log_var_offset: 0.0,
            seed: 0,
        }
    }
}

fn gaussian_matrix<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || scale * rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_vec<R: Rng>(len: usize, scale: f64, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Builds a seeded toy bundle without encoders.
pub fn toy_bundle(spec: &ToyBundleSpec) -> Result<ModelBundle> {
    let ToyBundleSpec {
        latent: l,
        visual: m,
        freq: f,
        hidden: h,
        weight_scale: s,
        ..
    } = *spec;
    if spec.prior_std <= 0.0 {
        return Err(Error::invalid("prior standard deviation must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let w_in = gaussian_matrix(h, l, s, &mut rng);
    let b_in = gaussian_vec(h, s, &mut rng);
    let w_out = gaussian_matrix(f, h, s * spec.output_gain, &mut rng);
    let b_out: Vec<f64> = gaussian_vec(f, s, &mut rng)
        .into_iter()
        .map(|b| b + spec.log_var_offset)
        .collect();
    let decoder_a = Mlp::new(vec![
        Layer::new(w_in.clone(), b_in.clone(), Activation::Tanh)?,
        Layer::new(w_out.clone(), b_out.clone(), Activation::Identity)?,
    ])?;

    let w_visual = gaussian_matrix(h, m, s * spec.visual_coupling, &mut rng);
    let mut w_joint = Array2::zeros((h, l + m));
    w_joint.slice_mut(ndarray::s![.., ..l]).assign(&w_in);
    w_joint.slice_mut(ndarray::s![.., l..]).assign(&w_visual);
    let decoder_av = Mlp::new(vec![
        Layer::new(w_joint, b_in, Activation::Tanh)?,
        Layer::new(w_out, b_out, Activation::Identity)?,
    ])?;

    let p_in = gaussian_matrix(h, m, s * 2.0, &mut rng);
    let p_bias = gaussian_vec(h, s, &mut rng);
    let mut p_out = Array2::zeros((2 * l, h));
    p_out
        .slice_mut(ndarray::s![..l, ..])
        .assign(&gaussian_matrix(l, h, s, &mut rng));
    let mut p_out_bias = vec![0.0; 2 * l];
    for b in &mut p_out_bias[l..] {
        *b = (spec.prior_std * spec.prior_std).ln();
    }
    let prior_av = Mlp::new(vec![
        Layer::new(p_in, p_bias, Activation::Tanh)?,
        Layer::new(p_out, p_out_bias, Activation::Identity)?,
    ])?;

    ModelBundle::new(
        ModelDims {
            latent: l,
            visual: m,
            freq: f,
        },
        decoder_a,
        decoder_av,
        prior_av,
        None,
        None,
    )
}

/// Random rank-K noise factors with entries uniform on `[0.5, 1.5)` times `level^(1/2)`,
/// so `(W H)` entries have magnitude about `K · level`.
pub fn toy_noise(n_bins: usize, n_frames: usize, rank: usize, level: f64, seed: u64) -> Result<NmfParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = level.sqrt();
    let mut draw = |r, c| Array2::from_shape_simple_fn((r, c), || scale * rng.random_range(0.5..1.5));
    let w = draw(n_bins, rank);
    let h = draw(rank, n_frames);
    NmfParams::new(w, h)
}

/// Smooth unit-variance visual trajectories, AR(1) with coefficient `rho`.
pub fn smooth_embeddings(n_frames: usize, dim: usize, rho: f64, seed: u64) -> Result<VisualEmbeddings> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!("AR coefficient {rho} outside [0, 1)")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innovation = (1.0 - rho * rho).sqrt();
    let mut rows = Array2::zeros((n_frames, dim));
    for n in 0..n_frames {
        for j in 0..dim {
            let e: f64 = rng.sample(StandardNormal);
            rows[[n, j]] = if n == 0 {
                e
            } else {
                rho * rows[[n - 1, j]] + innovation * e
            };
        }
    }
    VisualEmbeddings::new(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub clean: ComplexSpectrogram,
    pub noise: ComplexSpectrogram,
    pub mixture: ComplexSpectrogram,
    /// `α_n`; `true` means the frame was drawn from the audio-only model.
    pub alpha: Vec<bool>,
    pub z: Array2<f64>,
    pub visuals_clean: VisualEmbeddings,
    /// Embeddings handed to inference; equal to `visuals_clean` until corrupted.
    pub visuals: VisualEmbeddings,
    /// `true` for corrupted frames.
    pub mask: Vec<bool>,
    pub bundle: ModelBundle,
    pub nmf: NmfParams,
}

// Scene coefficients live on a 2^-30 grid, so sums and differences of
// clean and noise parts are exact in double precision.
const GRID: f64 = (1u64 << 30) as f64;

fn on_grid(x: f64) -> f64 {
    (x * GRID).round() / GRID
}

fn complex_gaussian<R: Rng>(var: f64, rng: &mut R) -> Complex64 {
    let sd = (0.5 * var).sqrt();
    Complex64::new(
        on_grid(sd * rng.sample::<f64, _>(StandardNormal)),
        on_grid(sd * rng.sample::<f64, _>(StandardNormal)),
    )
}

/// Draws a scene: per frame `α_n ~ Bernoulli(π)`, the latent code from the
/// selected prior, clean coefficients from the selected decoder, and noise
/// from the NMF variances.
pub fn generate_scene(
    bundle: &ModelBundle,
    nmf_true: &NmfParams,
    pi_true: f64,
    n_frames: usize,
    seed: u64,
) -> Result<SyntheticScene> {
    if !(0.0..=1.0).contains(&pi_true) {
        return Err(Error::invalid(format!("switch probability {pi_true} outside [0, 1]")));
    }
    if n_frames == 0 {
        return Err(Error::EmptySpectrogram);
    }
    let f = bundle.n_bins();
    if nmf_true.n_bins() != f || nmf_true.n_frames() != n_frames {
        return Err(Error::dims(format!(
            "noise model is {}x{}, scene is {f}x{n_frames}",
            nmf_true.n_bins(),
            nmf_true.n_frames()
        )));
    }
    let params = StftParams::for_bins(f)?;
    let visuals = smooth_embeddings(n_frames, bundle.visual_dim(), 0.9, seed ^ 0x5eed_0001)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = bundle.latent_dim();
    let noise_var = noise_variance(nmf_true);

    let mut clean = Array2::zeros((f, n_frames));
    let mut noise = Array2::zeros((f, n_frames));
    let mut z_all = Array2::zeros((n_frames, l));
    let mut alpha = Vec::with_capacity(n_frames);
    for n in 0..n_frames {
        let audio_only = rng.random::<f64>() < pi_true;
        let v = visuals.row(n);
        let prior = if audio_only {
            LatentGaussian::standard(l)
        } else {
            bundle.prior_av(v)?
        };
        let z: Vec<f64> = prior
            .mean
            .iter()
            .zip(&prior.var)
            .map(|(mu, var)| mu + var.sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let var = if audio_only {
            bundle.decode_a(&z)?
        } else {
            bundle.decode_av(&z, v)?
        };
        for fi in 0..f {
            clean[[fi, n]] = complex_gaussian(var[fi], &mut rng);
            noise[[fi, n]] = complex_gaussian(noise_var[[fi, n]], &mut rng);
        }
        z_all.row_mut(n).assign(&ndarray::ArrayView1::from(&z));
        alpha.push(audio_only);
    }
    let mixture = &clean + &noise;
    Ok(SyntheticScene {
        clean: ComplexSpectrogram::from_values(clean, params)?,
        noise: ComplexSpectrogram::from_values(noise, params)?,
        mixture: ComplexSpectrogram::from_values(mixture, params)?,
        alpha,
        z: z_all,
        visuals: visuals.clone(),
        visuals_clean: visuals,
        mask: vec![false; n_frames],
        bundle: bundle.clone(),
        nmf: nmf_true.clone(),
    })
}

impl SyntheticScene {
    pub fn n_frames(&self) -> usize {
        self.mixture.n_frames()
    }

    /// Replaces the inference embeddings with a corrupted copy of the clean ones.
    pub fn corrupt(&mut self, fraction: f64, block_len: usize, seed: u64) -> Result<()> {
        let (visuals, mask) = corrupt_visuals(&self.visuals_clean, fraction, block_len, seed)?;
        self.visuals = visuals;
        self.mask = mask;
        Ok(())
    }
}

/// Replaces randomly placed, non-overlapping blocks of `block_len` rows,
/// about `fraction` of all rows, with i.i.d. standard-normal vectors.
pub fn corrupt_visuals(
    embeddings: &VisualEmbeddings,
    fraction: f64,
    block_len: usize,
    seed: u64,
) -> Result<(VisualEmbeddings, Vec<bool>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("corruption fraction {fraction} outside (0, 1)")));
    }
    let n = embeddings.n_frames();
    if block_len == 0 || n < block_len {
        return Err(Error::invalid(format!(
            "{n} frames cannot hold a corruption block of {block_len}"
        )));
    }
    let max_blocks = n / block_len;
    let blocks = ((fraction * n as f64 / block_len as f64).round() as usize).clamp(1, max_blocks);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Uniform placement of non-overlapping blocks: choose sorted gaps in the free space.
    let free = n - blocks * block_len;
    let mut offsets: Vec<usize> = (0..blocks).map(|_| rng.random_range(0..=free)).collect();
    offsets.sort_unstable();
    let mut mask = vec![false; n];
    for (i, off) in offsets.iter().enumerate() {
        let start = off + i * block_len;
        mask[start..start + block_len].iter_mut().for_each(|m| *m = true);
    }
    let mut rows = embeddings.rows.clone();
    for (r, corrupted) in mask.iter().enumerate() {
        if *corrupted {
            for x in rows.row_mut(r) {
                *x = rng.sample(StandardNormal);
            }
        }
    }
    Ok((VisualEmbeddings::new(rows)?, mask))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: -10.0,
            hi: 10.0,
            points: 2001,
        }
    }
}

/// A one-dimensional density normalized by the trapezoid rule.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPosterior {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

fn trapezoid(step: f64, values: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut first = None;
    let mut last = 0.0;
    for v in values {
        if first.is_none() {
            first = Some(v);
        }
        total += v;
        last = v;
    }
    step * (total - 0.5 * (first.unwrap_or(0.0) + last))
}

/// Normalizes `exp(log_density)` on an even grid and returns its first two moments.
pub fn grid_posterior_oracle<F>(log_density: F, spec: GridSpec) -> Result<GridPosterior>
where
    F: Fn(f64) -> f64,
{
    if spec.points < 3 || !(spec.hi > spec.lo) {
        return Err(Error::invalid("grid needs at least 3 points on a non-empty interval"));
    }
    let step = (spec.hi - spec.lo) / (spec.points - 1) as f64;
    let grid: Vec<f64> = (0..spec.points).map(|i| spec.lo + i as f64 * step).collect();
    let logs: Vec<f64> = grid.iter().map(|&x| log_density(x)).collect();
    let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !peak.is_finite() {
        return Err(Error::NonFinite("log density on grid".into()));
    }
    let raw: Vec<f64> = logs
        .iter()
        .map(|l| if l.is_nan() { 0.0 } else { (l - peak).exp() })
        .collect();
    let mass = trapezoid(step, raw.iter().copied());
    let density: Vec<f64> = raw.iter().map(|r| r / mass).collect();
    let edge = (density[0] + density[spec.points - 1]) * step;
    if edge > 1e-6 {
        return Err(Error::invalid(format!(
            "density mass {edge:e} at the grid boundary; widen the support"
        )));
    }
    let mean = trapezoid(step, grid.iter().zip(&density).map(|(x, p)| x * p));
    let variance = trapezoid(step, grid.iter().zip(&density).map(|(x, p)| (x - mean).powi(2) * p));
    Ok(GridPosterior {
        grid,
        density,
        mean,
        variance,
    })
}

impl GridPosterior {
    fn density_at(&self, x: f64) -> f64 {
        let lo = self.grid[0];
        let step = self.grid[1] - lo;
        let pos = (x - lo) / step;
        if pos <= 0.0 || pos >= (self.grid.len() - 1) as f64 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        let t = pos - i as f64;
        self.density[i] * (1.0 - t) + self.density[i + 1] * t
    }

    /// Probability mass on `[a, b]` under the piecewise-linear density.
    pub fn mass_between(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut points = vec![a];
        points.extend(self.grid.iter().copied().filter(|g| *g > a && *g < b));
        points.push(b);
        points
            .windows(2)
            .map(|w| 0.5 * (w[1] - w[0]) * (self.density_at(w[0]) + self.density_at(w[1])))
            .sum()
    }

    /// Total-variation distance between this density and a sample histogram
    /// with `bins` equal bins spanning `mean ± 5 sd`; mass outside the span
    /// forms one extra bin on each side.
    pub fn tv_distance(&self, samples: &[f64], bins: usize) -> f64 {
        let sd = self.variance.sqrt();
        let (lo, hi) = (self.mean - 5.0 * sd, self.mean + 5.0 * sd);
        let width = (hi - lo) / bins as f64;
        let mut counts = vec![0usize; bins + 2];
        for &x in samples {
            let slot = if x < lo {
                0
            } else if x >= hi {
                bins + 1
            } else {
                1 + (((x - lo) / width) as usize).min(bins - 1)
            };
            counts[slot] += 1;
        }
        let total = samples.len() as f64;
        let inner: Vec<f64> = (0..bins)
            .map(|i| self.mass_between(lo + i as f64 * width, lo + (i + 1) as f64 * width))
            .collect();
        let below = self.mass_between(self.grid[0], lo);
        let above = self.mass_between(hi, self.grid[self.grid.len() - 1]);
        let mut expected = vec![below];
        expected.extend(inner);
        expected.push(above);
        0.5 * counts
            .iter()
            .zip(&expected)
            .map(|(c, p)| (*c as f64 / total - p).abs())
            .sum::<f64>()
    }
}

/// A complete recipe for a seeded scene: toy bundle, rank-K noise, generation
/// and optional visual corruption. The four stages draw from `seed`, `seed + 1`,
/// `seed + 2` and `seed + 3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub bundle: ToyBundleSpec,
    pub n_frames: usize,
    pub noise_rank: usize,
    pub noise_level: f64,
    pub pi_true: f64,
    /// Corrupted fraction of visual frames; `None` keeps them clean.
    pub corrupt: Option<f64>,
    pub block_len: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            bundle: ToyBundleSpec::default(),
            n_frames: 300,
            noise_rank: 2,
            noise_level: 0.2,
            pi_true: 0.0,
            corrupt: Some(1.0 / 3.0),
            block_len: 20,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn build(&self) -> Result<SyntheticScene> {
        let bundle = toy_bundle(&ToyBundleSpec {
            seed: self.seed,
            ..self.bundle
        })?;
        let f = bundle.n_bins();
        let nmf = toy_noise(f, self.n_frames, self.noise_rank, self.noise_level, self.seed.wrapping_add(1))?;
        let mut scene = generate_scene(&bundle, &nmf, self.pi_true, self.n_frames, self.seed.wrapping_add(2))?;
        if let Some(fraction) = self.corrupt {
            scene.corrupt(fraction, self.block_len, self.seed.wrapping_add(3))?;
        }
        Ok(scene)
    }
}
