use rand::seq::index::sample;
use rand::Rng;

use super::network::ParamVector;

/// `|fd - analytic| / max(|fd|, |analytic|, floor)`; the floor keeps near-zero gradients
/// from turning round-off into large relative errors.
pub fn relative_error(fd: f64, analytic: f64, floor: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(floor)
}

/// Central-difference check of `analytic` against `loss` for the parameters returned by
/// `params`, at the given coordinates. Returns the largest relative error.
pub fn check_gradient<S, P, L>(state: &mut S, mut params: P, analytic: &[f64], coords: &[usize], h: f64, loss: L) -> f64
where
    P: FnMut(&mut S) -> &mut ParamVector,
    L: Fn(&S) -> f64,
{
    let mut worst: f64 = 0.0;
    for &i in coords {
        let orig = params(state).values[i];
        params(state).values[i] = orig + h;
        let up = loss(state);
        params(state).values[i] = orig - h;
        let down = loss(state);
        params(state).values[i] = orig;
        let fd = (up - down) / (2.0 * h);
        worst = worst.max(relative_error(fd, analytic[i], 1e-6));
    }
    worst
}

/// Up to `n` distinct coordinates out of `len`.
pub fn sample_coords<R: Rng + ?Sized>(rng: &mut R, len: usize, n: usize) -> Vec<usize> {
    sample(rng, len, n.min(len)).into_vec()
}
