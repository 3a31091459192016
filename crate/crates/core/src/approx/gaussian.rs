use ndarray::{s, Array2, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::network::{sigmoid, softplus, Mlp};
use crate::error::{check_dim, Error, Result};

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 0.5;

/// Smoothly squash a raw network output into `(LOGVAR_MIN, LOGVAR_MAX)`.
///
/// Returns the clamped value and its derivative with respect to `raw`.
#[inline]
pub fn soft_clamp_log_var(raw: f64) -> (f64, f64) {
    let upper = LOGVAR_MAX - softplus(LOGVAR_MAX - raw);
    let d_upper = sigmoid(LOGVAR_MAX - raw);
    let lv = LOGVAR_MIN + softplus(upper - LOGVAR_MIN);
    let d_lv = sigmoid(upper - LOGVAR_MIN);
    // the lower softplus can lift `upper` past the ceiling by at most exp(MIN - MAX)
    (lv.min(LOGVAR_MAX), d_upper * d_lv)
}

/// Diagonal Gaussian: mean and log-variance of equal length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub log_var: Vec<f64>,
}

impl GaussianHead {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self> {
        check_dim(mean.len(), log_var.len())?;
        Ok(Self { mean, log_var })
    }

    /// Interpret a raw `2d`-wide network output as `[mean | raw log-variance]`.
    pub fn from_output(out: &[f64]) -> Self {
        let d = out.len() / 2;
        Self {
            mean: out[..d].to_vec(),
            log_var: out[d..2 * d].iter().map(|&r| soft_clamp_log_var(r).0).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<f64> {
        self.log_var.iter().map(|lv| (0.5 * lv).exp()).collect()
    }
}

/// Evaluate a network whose output parameterizes a diagonal Gaussian.
pub fn forward_head(net: &Mlp, input: &[f64]) -> Result<GaussianHead> {
    if net.output_dim() % 2 != 0 {
        return Err(Error::Config("gaussian head needs an even output width".into()));
    }
    Ok(GaussianHead::from_output(&net.forward(input)?))
}

/// Row-batched Gaussian heads with the clamp derivative kept for backprop.
#[derive(Clone, Debug)]
pub struct GaussianBatch {
    pub mean: Array2<f64>,
    pub log_var: Array2<f64>,
    d_clamp: Array2<f64>,
}

impl GaussianBatch {
    pub fn from_output(out: &Array2<f64>) -> Self {
        let d = out.ncols() / 2;
        let mean = out.slice(s![.., ..d]).to_owned();
        let raw = out.slice(s![.., d..2 * d]);
        let mut log_var = Array2::zeros(raw.raw_dim());
        let mut d_clamp = Array2::zeros(raw.raw_dim());
        Zip::from(&mut log_var)
            .and(&mut d_clamp)
            .and(&raw)
            .for_each(|lv, dc, &r| {
                let (v, g) = soft_clamp_log_var(r);
                *lv = v;
                *dc = g;
            });
        Self { mean, log_var, d_clamp }
    }

    pub fn dim(&self) -> usize {
        self.mean.ncols()
    }

    pub fn len(&self) -> usize {
        self.mean.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.nrows() == 0
    }

    pub fn head(&self, i: usize) -> GaussianHead {
        GaussianHead {
            mean: self.mean.row(i).to_vec(),
            log_var: self.log_var.row(i).to_vec(),
        }
    }

    /// Map gradients on `(mean, log_var)` back onto the raw network output.
    pub fn backprop(&self, d_mean: ArrayView2<'_, f64>, d_log_var: ArrayView2<'_, f64>) -> Array2<f64> {
        let d = self.dim();
        let mut out = Array2::zeros((self.len(), 2 * d));
        out.slice_mut(s![.., ..d]).assign(&d_mean);
        let mut raw = out.slice_mut(s![.., d..]);
        Zip::from(&mut raw)
            .and(&d_log_var)
            .and(&self.d_clamp)
            .for_each(|o, &g, &c| *o = g * c);
        out
    }
}

/// Per-sample Gaussian negative log-likelihood without the constant and the factor 1/2:
/// `(mean - target)^T diag(exp(-log_var)) (mean - target) + sum(log_var)`.
pub fn gaussian_nll(head: &GaussianHead, target: &[f64]) -> Result<f64> {
    check_dim(head.dim(), target.len())?;
    Ok(head
        .mean
        .iter()
        .zip(&head.log_var)
        .zip(target)
        .map(|((m, lv), t)| (m - t).powi(2) * (-lv).exp() + lv)
        .sum())
}

/// Batch-mean of [`gaussian_nll`] and its gradient with respect to the raw network output.
pub fn batch_nll(batch: &GaussianBatch, target: ArrayView2<'_, f64>) -> Result<(f64, Array2<f64>)> {
    check_dim(batch.dim(), target.ncols())?;
    check_dim(batch.len(), target.nrows())?;
    let n = batch.len().max(1) as f64;
    let mut loss = 0.0;
    let mut d_mean = Array2::zeros(batch.mean.raw_dim());
    let mut d_lv = Array2::zeros(batch.mean.raw_dim());
    Zip::from(&mut d_mean)
        .and(&mut d_lv)
        .and(&batch.mean)
        .and(&batch.log_var)
        .and(&target)
        .for_each(|dm, dl, &m, &lv, &t| {
            let inv = (-lv).exp();
            let e = m - t;
            loss += e * e * inv + lv;
            *dm = 2.0 * e * inv / n;
            *dl = (1.0 - e * e * inv) / n;
        });
    Ok((loss / n, batch.backprop(d_mean.view(), d_lv.view())))
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn standard_normal_matrix<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample::<f64, _>(StandardNormal))
}

/// Reparameterized draw `mean + exp(log_var / 2) * eps`, `eps ~ N(0, I)`.
pub fn sample_diag_gaussian<R: Rng + ?Sized>(head: &GaussianHead, rng: &mut R) -> Vec<f64> {
    let eps = standard_normal(rng, head.dim());
    reparameterize(head, &eps)
}

pub fn reparameterize(head: &GaussianHead, eps: &[f64]) -> Vec<f64> {
    head.mean
        .iter()
        .zip(&head.log_var)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv).exp() * e)
        .collect()
}
