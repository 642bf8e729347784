//! Low-rank nonnegative noise variance model `W H` and its Itakura-Saito
//! multiplicative updates.

use ndarray::{Array2, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// Lower bound applied to `W`, `H`, `V` and `W H` entries inside the updates.
pub const NMF_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NmfParams {
    /// F×K spectral patterns.
    pub w: Array2<f64>,
    /// K×N temporal activations.
    pub h: Array2<f64>,
}

impl NmfParams {
    pub fn new(w: Array2<f64>, h: Array2<f64>) -> Result<Self> {
        if w.ncols() != h.nrows() {
            return Err(Error::dims(format!(
                "W has rank {}, H has rank {}",
                w.ncols(),
                h.nrows()
            )));
        }
        if w.iter().chain(h.iter()).any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::invalid("NMF factors must be finite and nonnegative"));
        }
        let mut p = Self { w, h };
        p.apply_floor();
        Ok(p)
    }

    /// i.i.d. uniform(0.1, 1.1) factors.
    pub fn random<R: Rng + ?Sized>(n_bins: usize, n_frames: usize, rank: usize, rng: &mut R) -> Self {
        let mut draw = |r, c| Array2::from_shape_simple_fn((r, c), || rng.random_range(0.1..1.1));
        let w = draw(n_bins, rank);
        let h = draw(rank, n_frames);
        Self { w, h }
    }

    pub fn n_bins(&self) -> usize {
        self.w.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.h.ncols()
    }

    pub fn rank(&self) -> usize {
        self.w.ncols()
    }

    /// True when `K(F+N)` is not small relative to `FN`.
    pub fn rank_not_small(&self) -> bool {
        2 * self.rank() * (self.n_bins() + self.n_frames()) > self.n_bins() * self.n_frames()
    }

    fn apply_floor(&mut self) {
        self.w.mapv_inplace(|x| x.max(NMF_FLOOR));
        self.h.mapv_inplace(|x| x.max(NMF_FLOOR));
    }

    fn check_shape(&self, v: &Array2<f64>) -> Result<()> {
        if v.dim() != (self.n_bins(), self.n_frames()) {
            return Err(Error::dims(format!(
                "power matrix is {:?}, model is {}x{}",
                v.dim(),
                self.n_bins(),
                self.n_frames()
            )));
        }
        Ok(())
    }
}

/// Noise variances `(W H)_fn`.
pub fn noise_variance(params: &NmfParams) -> Array2<f64> {
    params.w.dot(&params.h)
}

fn floored_model(params: &NmfParams) -> Array2<f64> {
    noise_variance(params).mapv_into(|x| x.max(NMF_FLOOR))
}

/// `V ⊙ R^-2` and `R^-1` for the current model `R = W H`.
fn update_terms(params: &NmfParams, v: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let r = floored_model(params);
    let mut num = Array2::zeros(r.dim());
    let mut den = Array2::zeros(r.dim());
    Zip::from(&mut num)
        .and(&mut den)
        .and(&r)
        .and(v)
        .for_each(|n, d, &r, &v| {
            let inv = 1.0 / r;
            *d = inv;
            *n = v.max(NMF_FLOOR) * inv * inv;
        });
    (num, den)
}

/// One multiplicative update of `H` with `W` held fixed.
pub fn update_h(params: &NmfParams, v: &Array2<f64>) -> Result<NmfParams> {
    params.check_shape(v)?;
    let (num, den) = update_terms(params, v);
    let wt = params.w.t();
    let ratio_num = wt.dot(&num);
    let ratio_den = wt.dot(&den);
    let mut h = params.h.clone();
    Zip::from(&mut h)
        .and(&ratio_num)
        .and(&ratio_den)
        .for_each(|h, &n, &d| *h = (*h * n / d).max(NMF_FLOOR));
    Ok(NmfParams {
        w: params.w.clone(),
        h,
    })
}

/// One multiplicative update of `W` with `H` held fixed.
pub fn update_w(params: &NmfParams, v: &Array2<f64>) -> Result<NmfParams> {
    params.check_shape(v)?;
    let (num, den) = update_terms(params, v);
    let ht = params.h.t();
    let ratio_num = num.dot(&ht);
    let ratio_den = den.dot(&ht);
    let mut w = params.w.clone();
    Zip::from(&mut w)
        .and(&ratio_num)
        .and(&ratio_den)
        .for_each(|w, &n, &d| *w = (*w * n / d).max(NMF_FLOOR));
    Ok(NmfParams {
        w,
        h: params.h.clone(),
    })
}

/// Itakura-Saito divergence `Σ V/R − log(V/R) − 1`, with zero `V` entries floored.
pub fn is_divergence(v: &Array2<f64>, r: &Array2<f64>) -> Result<f64> {
    if v.dim() != r.dim() {
        return Err(Error::dims(format!("{:?} vs {:?}", v.dim(), r.dim())));
    }
    let mut total = 0.0;
    for (&v, &r) in v.iter().zip(r.iter()) {
        if !(r > 0.0) || !r.is_finite() {
            return Err(Error::invalid(format!("model entry {r} is not positive")));
        }
        let q = v.max(NMF_FLOOR) / r;
        total += q - q.ln() - 1.0;
    }
    Ok(total)
}
