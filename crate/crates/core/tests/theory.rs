use bifrl::envs::{TabularMDP, TabularPolicy, Transition};
use bifrl::theory::{
    check_instance, discrepancy_bound, exact_divergences, measure_divergences, total_variation, validate_bound,
    BoundInputs,
};
use bifrl::traits::{ActionSource, MeanModel};
use bifrl::Error;
use ndarray::{s, Array2, ArrayView2};
use proptest::prelude::*;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs(r_max: f64, gamma: f64, k_b: usize, eps_pi: f64, eps_m: f64) -> BoundInputs {
    BoundInputs { r_max, gamma, k_b, eps_pi, eps_m }
}

/// Direct evaluation of the closed form with the horizon written as a geometric sum.
fn bound_oracle(b: &BoundInputs) -> f64 {
    let horizon: f64 = (0..=b.k_b).map(|t| b.gamma.powi(t as i32)).sum();
    2.0 * b.r_max * horizon * (b.eps_pi + b.k_b as f64 * (b.eps_pi + b.eps_m))
}

#[test]
fn bound_reference_value() {
    let b = inputs(1.0, 0.99, 2, 0.1, 0.05);
    let v = discrepancy_bound(&b).unwrap();
    assert!((v - bound_oracle(&b)).abs() < 1e-12);
    assert!((v - 2.3761).abs() < 1e-4, "{v}");
}

#[test]
fn bound_zero_divergence_and_zero_horizon() {
    assert_eq!(discrepancy_bound(&inputs(3.0, 0.9, 4, 0.0, 0.0)).unwrap(), 0.0);
    for gamma in [0.0, 0.3, 0.95] {
        let v = discrepancy_bound(&inputs(1.5, gamma, 0, 0.2, 0.7)).unwrap();
        assert!((v - 2.0 * 1.5 * 0.2).abs() < 1e-12);
    }
}

#[test]
fn bound_rejects_singular_and_out_of_range() {
    assert!(matches!(discrepancy_bound(&inputs(1.0, 1.0, 1, 0.1, 0.1)), Err(Error::Input(_))));
    assert!(discrepancy_bound(&inputs(-1.0, 0.5, 1, 0.1, 0.1)).is_err());
    assert!(discrepancy_bound(&inputs(1.0, 0.5, 1, 1.1, 0.1)).is_err());
}

proptest! {
    #[test]
    fn bound_is_monotone(r in 0.0f64..5.0, gamma in 0.0f64..0.999, k in 0usize..10, ep in 0.0f64..0.9, em in 0.0f64..0.9, d in 0.0f64..0.1) {
        let base = discrepancy_bound(&inputs(r, gamma, k, ep, em)).unwrap();
        prop_assert!(discrepancy_bound(&inputs(r + d, gamma, k, ep, em)).unwrap() >= base);
        prop_assert!(discrepancy_bound(&inputs(r, gamma, k + 1, ep, em)).unwrap() >= base);
        prop_assert!(discrepancy_bound(&inputs(r, gamma, k, ep + d, em)).unwrap() >= base);
        prop_assert!(discrepancy_bound(&inputs(r, gamma, k, ep, em + d)).unwrap() >= base);
    }

    #[test]
    fn divergences_are_tv_and_symmetric_in_policies(seed in 0u64..500, horizon in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = TabularMDP::random(&mut rng, 4, 3, 0.9);
        let pe = TabularMDP::random(&mut rng, 4, 3, 0.9);
        let pi = TabularPolicy::random(&mut rng, 4, 3);
        let pie = TabularPolicy::random(&mut rng, 4, 3);
        let (a, m) = exact_divergences(&p, &pe, &pi, &pie, horizon).unwrap();
        prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&m));
        // the policy divergence is weighted by the occupancy of the first policy, so the
        // swap is symmetric only pointwise: check the per-state TV directly
        for s in 0..4 {
            prop_assert_eq!(total_variation(pi.row(s), pie.row(s)), total_variation(pie.row(s), pi.row(s)));
        }
    }
}

#[test]
fn identical_pairs_have_no_divergence() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = TabularMDP::random(&mut rng, 5, 2, 0.9);
    let pi = TabularPolicy::random(&mut rng, 5, 2);
    assert_eq!(exact_divergences(&p, &p, &pi, &pi, 3).unwrap(), (0.0, 0.0));
    let c = check_instance(&p, &p, &pi, &pi, 2).unwrap();
    assert_eq!((c.discrepancy, c.bound), (0.0, 0.0));
    assert!(c.holds());
}

#[test]
fn two_action_single_state_policy_divergence() {
    let p = TabularMDP::new(1, 2, vec![1.0, 1.0], vec![0.0, 1.0], 0.9, vec![1.0]).unwrap();
    let pi = TabularPolicy::new(1, 2, vec![1.0, 0.0]).unwrap();
    let pie = TabularPolicy::new(1, 2, vec![0.5, 0.5]).unwrap();
    let (ep, em) = exact_divergences(&p, &p, &pi, &pie, 0).unwrap();
    assert_eq!((ep, em), (0.5, 0.0));
    // single-state occupancies do not depend on the policy, so here the swap is exact
    assert_eq!(exact_divergences(&p, &p, &pie, &pi, 2).unwrap().0, 0.5);
}

#[test]
fn mismatched_shapes_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let p = TabularMDP::random(&mut rng, 3, 2, 0.9);
    let q = TabularMDP::random(&mut rng, 4, 2, 0.9);
    let pi = TabularPolicy::random(&mut rng, 3, 2);
    assert!(exact_divergences(&p, &q, &pi, &pi, 1).is_err());
}

#[test]
fn hundred_random_instances_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let report = validate_bound(&mut rng, 100).unwrap();
    assert_eq!(report.checks.len(), 100);
    assert!(report.passed(), "{:?}", report.violations.first());
    assert!(report.median_margin() > 0.0);
    let hist = report.margin_histogram(10);
    assert_eq!(hist.iter().map(|b| b.2).sum::<usize>(), 100);
}

#[test]
fn histogram_csv_written() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let report = validate_bound(&mut rng, 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.csv");
    report.write_histogram_csv(&path, 4).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().next().unwrap(), "bin_lower,bin_upper,count");
    assert_eq!(text.lines().count(), 5);
    assert!(validate_bound(&mut rng, 0).is_err());
}

/// Exact dynamics `s' = s + a` (1-D, action copied into the state delta).
struct Exact;

impl MeanModel for Exact {
    fn mean_delta(&self, s: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> bifrl::Result<Array2<f64>> {
        let mut out = Array2::zeros((s.nrows(), 2));
        out.slice_mut(s![.., ..1]).assign(&a);
        Ok(out)
    }
}

struct ExactBackward;

impl MeanModel for ExactBackward {
    fn mean_delta(&self, s: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> bifrl::Result<Array2<f64>> {
        let mut out = Array2::zeros((s.nrows(), 2));
        out.slice_mut(s![.., ..1]).assign(&(-&a));
        Ok(out)
    }
}

/// Recovers the action from the state: every transition below starts at 0.
struct FromState;

impl ActionSource for FromState {
    fn actions(&self, s: ArrayView2<'_, f64>, _: bool, _: &mut dyn RngCore) -> bifrl::Result<Array2<f64>> {
        Ok(s.to_owned())
    }
}

fn holdout(n: usize) -> Vec<Transition> {
    (0..n)
        .map(|i| {
            let a = (i as f64 * 0.37).sin();
            Transition {
                state: vec![0.0],
                action: vec![a],
                reward: 0.0,
                next_state: vec![a],
                done: false,
                terminal: false,
            }
        })
        .collect()
}

#[test]
fn perfect_models_have_zero_divergence() {
    let data = holdout(20);
    let refs: Vec<&Transition> = data.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = measure_divergences(3, &refs, &Exact, &ExactBackward, &FromState, &mut rng).unwrap().unwrap();
    assert_eq!((r.epoch, r.forward_mse, r.backward_mse, r.policy_mse), (3, 0.0, 0.0, 0.0));
    let r = measure_divergences(3, &refs, &ExactBackward, &Exact, &FromState, &mut rng).unwrap().unwrap();
    assert!(r.forward_mse > 0.0 && r.backward_mse > 0.0);
}

#[test]
fn tiny_holdout_skips() {
    let data = holdout(3);
    let refs: Vec<&Transition> = data.iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(measure_divergences(1, &refs, &Exact, &ExactBackward, &FromState, &mut rng).unwrap().is_none());
}
