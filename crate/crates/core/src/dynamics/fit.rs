use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{batch_nll, Adam, GaussianBatch, Mlp, Standardizer};
use crate::error::{Error, Result};

/// Optimization settings shared by the ensembles and the backward policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub batch_size: usize,
    /// Upper bound on gradient steps per refit.
    pub max_steps: usize,
    /// Holdout evaluation cadence in gradient steps.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            batch_size: 256,
            max_steps: 200,
            eval_every: 25,
            patience: 5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub steps: usize,
    /// Holdout NLL after each evaluation.
    pub history: Vec<f64>,
    /// Best holdout NLL, restored into the network.
    pub best: f64,
}

/// Batch-mean Gaussian NLL of `net` and its parameter gradient on standardized inputs.
pub fn nll_and_grad(
    net: &Mlp,
    norm: &Standardizer,
    inputs: ArrayView2<'_, f64>,
    targets: ArrayView2<'_, f64>,
) -> Result<(f64, crate::approx::GradientRecord)> {
    let x = norm.transform(inputs);
    let (out, cache) = net.forward_cached(x.view())?;
    let (loss, d_out) = batch_nll(&GaussianBatch::from_output(&out), targets)?;
    let (grad, _) = net.backward(&cache, d_out.view(), false);
    Ok((loss, grad))
}

pub fn nll(net: &Mlp, norm: &Standardizer, inputs: ArrayView2<'_, f64>, targets: ArrayView2<'_, f64>) -> Result<f64> {
    let out = net.forward_batch(norm.transform(inputs).view())?;
    Ok(batch_nll(&GaussianBatch::from_output(&out), targets)?.0)
}

/// Minibatch Adam on the Gaussian NLL with holdout early stopping; the best parameters
/// seen at an evaluation are restored at the end. `sample` gives the row indices of the
/// training set this network sees (a bootstrap draw for ensemble members).
#[allow(clippy::too_many_arguments)]
pub fn fit_gaussian<R: Rng + ?Sized>(
    net: &mut Mlp,
    opt: &mut Adam,
    norm: &Standardizer,
    inputs: &Array2<f64>,
    targets: &Array2<f64>,
    sample: &[usize],
    holdout: (&Array2<f64>, &Array2<f64>),
    cfg: &FitConfig,
    what: &'static str,
    rng: &mut R,
) -> Result<FitReport> {
    let mut report = FitReport {
        best: nll(net, norm, holdout.0.view(), holdout.1.view())?,
        ..Default::default()
    };
    let mut best_params = net.params().clone();
    let mut stale = 0;
    let mut order = sample.to_vec();
    let mut cursor = order.len();
    let batch = cfg.batch_size.min(order.len()).max(1);
    for step in 0..cfg.max_steps {
        if cursor + batch > order.len() {
            order.shuffle(rng);
            cursor = 0;
        }
        let idx = &order[cursor..cursor + batch];
        cursor += batch;
        let xb = inputs.select(Axis(0), idx);
        let yb = targets.select(Axis(0), idx);
        let (loss, grad) = nll_and_grad(net, norm, xb.view(), yb.view())?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { what, batch: step });
        }
        opt.step(net.params_mut(), &grad)?;
        report.steps = step + 1;
        if (step + 1) % cfg.eval_every == 0 {
            let h = nll(net, norm, holdout.0.view(), holdout.1.view())?;
            report.history.push(h);
            if h < report.best {
                report.best = h;
                best_params = net.params().clone();
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }
    *net.params_mut() = best_params;
    Ok(report)
}
