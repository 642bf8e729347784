//! Generative networks: the audio-only and audio-visual variance decoders, the
//! visual prior over the latent code, and optional encoders used for
//! initialization.
//!
//! Every network head emits log-variances; this module exponentiates them,
//! so decoded variances are positive by construction.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "vaemm";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }
}

/// Dense layer `y = act(W x + b)` with `W` stored row-major as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn new(weights: Array2<f64>, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        let (outputs, inputs) = weights.dim();
        let layer = Self {
            inputs,
            outputs,
            activation,
            weights: weights.iter().copied().collect(),
            bias,
        };
        layer.validate()?;
        Ok(layer)
    }

    /// A layer that ignores its input and emits `bias` (after activation).
    pub fn constant(inputs: usize, bias: Vec<f64>) -> Self {
        Self {
            inputs,
            outputs: bias.len(),
            activation: Activation::Identity,
            weights: vec![0.0; inputs * bias.len()],
            bias,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.inputs == 0 || self.outputs == 0 {
            return Err(Error::dims("layer with zero width"));
        }
        if self.weights.len() != self.inputs * self.outputs {
            return Err(Error::dims(format!(
                "layer {}x{} carries {} weights",
                self.outputs,
                self.inputs,
                self.weights.len()
            )));
        }
        if self.bias.len() != self.outputs {
            return Err(Error::dims(format!(
                "layer with {} outputs carries {} biases",
                self.outputs,
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("layer parameter".into()));
        }
        Ok(())
    }

    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.inputs)
                .zip(&self.bias)
                .map(|(row, b)| {
                    let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
                    self.activation.apply(dot + b)
                }),
        );
    }
}

/// Multilayer perceptron as a chain of dense layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mlp = Self { layers };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::dims("network without layers"));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::dims(format!(
                    "layer {} emits {} values but layer {} expects {}",
                    i,
                    pair[0].outputs,
                    i + 1,
                    pair[1].inputs
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.input_dim());
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.forward_into(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Latent dimension `L`.
    pub latent: usize,
    /// Visual embedding dimension `M`.
    pub visual: usize,
    /// Frequency bins `F`.
    pub freq: usize,
}

/// Diagonal Gaussian over the latent code.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl LatentGaussian {
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            var: vec![1.0; dim],
        }
    }

    /// Log density at `z`, constants included.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(self.mean.iter().zip(&self.var))
            .map(|(z, (m, v))| {
                -0.5 * (2.0 * std::f64::consts::PI * v).ln() - (z - m) * (z - m) / (2.0 * v)
            })
            .sum()
    }
}

/// The loaded set of networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format: String,
    pub version: u32,
    pub dims: ModelDims,
    /// `R^L -> R^F` log-variances.
    pub decoder_a: Mlp,
    /// `R^(L+M) -> R^F` log-variances, input `[z; v]`.
    pub decoder_av: Mlp,
    /// `R^M -> R^(2L)`: latent means then log-variances.
    pub prior_av: Mlp,
    /// `R^F -> R^(2L)` from the frame power spectrum.
    #[serde(default)]
    pub encoder_a: Option<Mlp>,
    /// `R^(F+M) -> R^(2L)` from `[power; v]`.
    #[serde(default)]
    pub encoder_av: Option<Mlp>,
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn check_len(values: &[f64], expected: usize, what: &str) -> Result<()> {
    if values.len() == expected {
        Ok(())
    } else {
        Err(Error::dims(format!(
            "{what} has length {}, expected {expected}",
            values.len()
        )))
    }
}

fn exp_positive(log_var: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    let var: Vec<f64> = log_var.into_iter().map(f64::exp).collect();
    if var.iter().all(|v| v.is_finite() && *v > 0.0) {
        Ok(var)
    } else {
        Err(Error::NonFinite(format!("{what} variance")))
    }
}

impl ModelBundle {
    pub fn new(
        dims: ModelDims,
        decoder_a: Mlp,
        decoder_av: Mlp,
        prior_av: Mlp,
        encoder_a: Option<Mlp>,
        encoder_av: Option<Mlp>,
    ) -> Result<Self> {
        let bundle = Self {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            dims,
            decoder_a,
            decoder_av,
            prior_av,
            encoder_a,
            encoder_av,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::invalid(format!("unknown model format {:?}", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::invalid(format!("unsupported model version {}", self.version)));
        }
        let ModelDims {
            latent: l,
            visual: m,
            freq: f,
        } = self.dims;
        if l == 0 || m == 0 || f == 0 {
            return Err(Error::dims("model dimensions must be positive"));
        }
        let check = |name: &str, net: &Mlp, input: usize, output: usize| -> Result<()> {
            net.validate()
                .map_err(|e| Error::dims(format!("{name}: {e}")))?;
            if net.input_dim() != input || net.output_dim() != output {
                return Err(Error::dims(format!(
                    "{name} maps {} -> {}, expected {input} -> {output}",
                    net.input_dim(),
                    net.output_dim()
                )));
            }
            Ok(())
        };
        check("decoder_a", &self.decoder_a, l, f)?;
        check("decoder_av", &self.decoder_av, l + m, f)?;
        check("prior_av", &self.prior_av, m, 2 * l)?;
        if let Some(enc) = &self.encoder_a {
            check("encoder_a", enc, f, 2 * l)?;
        }
        if let Some(enc) = &self.encoder_av {
            check("encoder_av", enc, f + m, 2 * l)?;
        }
        Ok(())
    }

    /// True when the latent dimension is not small relative to the bin count.
    pub fn latent_not_small(&self) -> bool {
        4 * self.dims.latent > self.dims.freq
    }

    pub fn latent_dim(&self) -> usize {
        self.dims.latent
    }

    pub fn visual_dim(&self) -> usize {
        self.dims.visual
    }

    pub fn n_bins(&self) -> usize {
        self.dims.freq
    }

    pub fn has_encoders(&self) -> bool {
        self.encoder_a.is_some() && self.encoder_av.is_some()
    }

    /// Raw audio-only decoder head without validation; used on hot paths
    /// where inputs are already known to be finite and of the right length.
    pub fn log_var_a(&self, z: &[f64]) -> Vec<f64> {
        self.decoder_a.forward(z)
    }

    /// Raw audio-visual decoder head, see [`Self::log_var_a`].
    pub fn log_var_av(&self, z: &[f64], v: &[f64]) -> Vec<f64> {
        let mut input = Vec::with_capacity(z.len() + v.len());
        input.extend_from_slice(z);
        input.extend_from_slice(v);
        self.decoder_av.forward(&input)
    }

    /// Audio-only speech variances `σ^a(z)`.
    pub fn decode_a(&self, z: &[f64]) -> Result<Vec<f64>> {
        check_len(z, self.dims.latent, "latent code")?;
        check_finite(z, "latent code")?;
        exp_positive(self.log_var_a(z), "decoder_a")
    }

    /// Audio-visual speech variances `σ^av(z, v)`.
    pub fn decode_av(&self, z: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        check_len(z, self.dims.latent, "latent code")?;
        check_len(v, self.dims.visual, "visual embedding")?;
        check_finite(z, "latent code")?;
        check_finite(v, "visual embedding")?;
        exp_positive(self.log_var_av(z, v), "decoder_av")
    }

    /// Visual prior `N(μ̄(v), diag σ̄(v))` over the latent code.
    pub fn prior_av(&self, v: &[f64]) -> Result<LatentGaussian> {
        check_len(v, self.dims.visual, "visual embedding")?;
        check_finite(v, "visual embedding")?;
        split_gaussian(self.prior_av.forward(v), self.dims.latent, "prior_av")
    }

    /// Audio-only encoder posterior from the frame's power spectrum.
    pub fn encode_a(&self, power: &[f64]) -> Option<Result<LatentGaussian>> {
        let enc = self.encoder_a.as_ref()?;
        Some((|| {
            check_len(power, self.dims.freq, "power spectrum")?;
            check_finite(power, "power spectrum")?;
            split_gaussian(enc.forward(power), self.dims.latent, "encoder_a")
        })())
    }

    /// Audio-visual encoder posterior from `[power; v]`.
    pub fn encode_av(&self, power: &[f64], v: &[f64]) -> Option<Result<LatentGaussian>> {
        let enc = self.encoder_av.as_ref()?;
        Some((|| {
            check_len(power, self.dims.freq, "power spectrum")?;
            check_len(v, self.dims.visual, "visual embedding")?;
            let mut input = power.to_vec();
            input.extend_from_slice(v);
            check_finite(&input, "encoder input")?;
            split_gaussian(enc.forward(&input), self.dims.latent, "encoder_av")
        })())
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let bundle: Self = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        bundle.validate()?;
        Ok(bundle)
    }
}

fn split_gaussian(out: Vec<f64>, latent: usize, what: &str) -> Result<LatentGaussian> {
    check_finite(&out, what)?;
    let mean = out[..latent].to_vec();
    let var = exp_positive(out[latent..].to_vec(), what)?;
    Ok(LatentGaussian { mean, var })
}

/// Reads and validates a `.vaemm.json` model file.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_json(&text, path)
}

pub fn save_model(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bundle.to_json()?).map_err(|e| Error::io(path, e))
}

/// Per-frame visual embeddings, one row `v_n` per STFT frame.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEmbeddings {
    pub rows: Array2<f64>,
}

impl VisualEmbeddings {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        if rows.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("visual embedding".into()));
        }
        Ok(Self { rows })
    }

    pub fn n_frames(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn row(&self, n: usize) -> &[f64] {
        let row = self.rows.row(n);
        row.to_slice().expect("embeddings are stored in standard layout")
    }

    /// Equalizes the row count with `n_frames` by repeating or dropping
    /// trailing rows when the counts differ by at most two.
    pub fn aligned(self, n_frames: usize) -> Result<Self> {
        let have = self.n_frames();
        if have == n_frames {
            return Ok(self);
        }
        if have == 0 || have.abs_diff(n_frames) > 2 {
            return Err(Error::dims(format!(
                "{have} visual embedding rows cannot be aligned with {n_frames} frames"
            )));
        }
        let m = self.dim();
        let mut rows = Array2::zeros((n_frames, m));
        for n in 0..n_frames {
            rows.row_mut(n).assign(&self.rows.row(n.min(have - 1)));
        }
        Ok(Self { rows })
    }
}
