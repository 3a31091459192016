use bifrl::agent::{
    actor_loss_and_grad, q_loss_and_grad, q_target, regression_loss_and_grad, soft_policy_kl, temperature_loss_and_grad,
    Agent, AgentConfig, Critics, SacBatch, StochasticPolicy,
};
use bifrl::approx::{
    check_gradient, relative_error, sample_coords, soft_clamp_log_var, standard_normal_matrix, Activation, Mlp,
};
use bifrl::envs::{make_env, EnvSpec};
use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec(name: &str) -> EnvSpec {
    make_env(name).unwrap().spec().clone()
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, sd: usize, ad: usize) -> SacBatch {
    SacBatch {
        states: standard_normal_matrix(rng, n, sd),
        actions: Array2::from_shape_fn((n, ad), |_| rng.random_range(-0.9..0.9)),
        rewards: Array1::from_shape_fn(n, |_| rng.random_range(-1.0..1.0)),
        next_states: standard_normal_matrix(rng, n, sd),
        terminal: Array1::from_shape_fn(n, |_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }),
    }
}

/// Raw output that the log-variance clamp maps to `target`.
fn raw_for_log_var(target: f64) -> f64 {
    let (mut lo, mut hi) = (-30.0, 30.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if soft_clamp_log_var(mid).0 < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn constant_policy(spec: &EnvSpec, mean: f64, log_var: f64) -> StochasticPolicy {
    let mut net = Mlp::zeroed(&[spec.state_dim, 4, 2 * spec.action_dim], Activation::Tanh).unwrap();
    let ad = spec.action_dim;
    let bias = net.output_bias_mut();
    for j in 0..ad {
        bias[j] = mean;
        bias[ad + j] = raw_for_log_var(log_var);
    }
    StochasticPolicy::from_net(net, spec)
}

#[test]
fn deterministic_actions_repeat_and_stay_in_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for name in ["pendulum", "pointmass"] {
        let sp = spec(name);
        let policy = StochasticPolicy::new(&sp, &[16, 16], Activation::Relu, &mut rng).unwrap();
        let s = vec![0.3; sp.state_dim];
        assert_eq!(policy.act(&s, true, &mut rng).unwrap(), policy.act(&s, true, &mut rng).unwrap());
        let states = standard_normal_matrix(&mut rng, 500, sp.state_dim) * 5.0;
        let sample = policy.sample(states.view(), &mut rng).unwrap();
        for row in sample.actions.rows() {
            for (j, a) in row.iter().enumerate() {
                assert!(*a >= sp.action_low[j] && *a <= sp.action_high[j]);
            }
        }
        assert!(sample.log_prob.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn small_variance_sample_mean_matches_squashed_mean() {
    let sp = spec("pendulum");
    let policy = constant_policy(&sp, 0.4, -8.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 100_000;
    let states = Array2::zeros((n, 3));
    let a = policy.sample(states.view(), &mut rng).unwrap().actions;
    let mean = a.mean().unwrap();
    let det = policy.deterministic(states.slice(ndarray::s![..1, ..])).unwrap()[[0, 0]];
    let sd = (-4.0f64).exp() * 2.0;
    assert!((mean - det).abs() < 4.0 * sd / (n as f64).sqrt() + sd * sd, "{mean} vs {det}");
}

#[test]
fn squashed_density_integrates_to_one() {
    let sp = spec("pendulum");
    for (m, lv) in [(0.0, 0.0), (0.7, -1.0), (-1.2, 0.4)] {
        let policy = constant_policy(&sp, m, lv);
        let n = 200_000;
        let width = (sp.action_high[0] - sp.action_low[0]) / n as f64;
        let actions = Array2::from_shape_fn((n, 1), |(i, _)| sp.action_low[0] + (i as f64 + 0.5) * width);
        let states = Array2::zeros((n, 3));
        let lp = policy.log_prob(states.view(), actions.view()).unwrap();
        let total: f64 = lp.iter().map(|v| v.exp() * width).sum();
        assert!((total - 1.0).abs() < 1e-3, "mean {m} log_var {lv}: {total}");
    }
}

#[test]
fn imitation_nll_closed_form() {
    let mut sp = spec("pendulum");
    sp.action_low = vec![-1.0];
    sp.action_high = vec![1.0];
    let policy = constant_policy(&sp, 0.0, 0.0);
    let a = array![[1.0f64.tanh()]];
    let (loss, _) = policy.imitation_loss_and_grad(Array2::zeros((1, 3)).view(), a.view()).unwrap();
    // pre-squash NLL of u = 1 under N(0, 1) plus the tanh change of variables
    let pre = 0.5 * (2.0 * std::f64::consts::PI).ln() + 0.5;
    assert!((pre - 1.4189).abs() < 1e-4);
    let jac = (1.0 - 1.0f64.tanh().powi(2)).ln();
    assert!((loss - (pre + jac)).abs() < 1e-9, "{loss}");
}

#[test]
fn imitation_gradient_vanishes_on_own_mean() {
    let sp = spec("pointmass");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let policy = StochasticPolicy::new(&sp, &[16], Activation::Tanh, &mut rng).unwrap();
    let states = standard_normal_matrix(&mut rng, 10, 4);
    let demos = policy.deterministic(states.view()).unwrap();
    let (_, grad) = policy.imitation_loss_and_grad(states.view(), demos.view()).unwrap();
    let (_, b) = policy.net().layout().layer_ranges(1);
    for i in b.start..b.start + 2 {
        assert!(grad.values[i].abs() < 1e-9, "{}", grad.values[i]);
    }
}

#[test]
fn imitation_gradient_matches_finite_differences() {
    let sp = spec("pointmass");
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let mut policy = StochasticPolicy::new(&sp, &[16, 16], Activation::Swish, &mut rng).unwrap();
        let states = standard_normal_matrix(&mut rng, 8, 4);
        let actions = Array2::from_shape_fn((8, 2), |_| rng.random_range(-0.95..0.95));
        let (_, grad) = policy.imitation_loss_and_grad(states.view(), actions.view()).unwrap();
        let coords = sample_coords(&mut rng, grad.values.len(), 30);
        let err = check_gradient(&mut policy, |p| p.net_mut().params_mut(), &grad.values, &coords, 1e-5, |p| {
            p.imitation_loss_and_grad(states.view(), actions.view()).unwrap().0
        });
        assert!(err <= 1e-4, "{err}");
    }
}

#[test]
fn q_target_arithmetic() {
    let y = q_target(&array![1.0, 1.0], &array![0.0, 1.0], &array![2.0, 2.0], 0.9);
    assert!((y[0] - 2.8).abs() < 1e-12);
    assert_eq!(y[1], 1.0);
}

#[test]
fn soft_optimal_discrete_policy_has_zero_kl() {
    let q = [1.3f64, -0.4];
    let alpha = 0.5f64;
    let v = alpha * q.iter().map(|x| (x / alpha).exp()).sum::<f64>().ln();
    let pi: Vec<f64> = q.iter().map(|x| ((x - v) / alpha).exp()).collect();
    assert!(soft_policy_kl(&pi, &q, v, alpha).abs() < 1e-12);
    assert!(soft_policy_kl(&[0.5, 0.5], &q, v, alpha) > 0.0);
}

#[test]
fn critic_losses_match_finite_differences() {
    let sp = spec("pointmass");
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..20 {
        let mut critics = Critics::new(&sp, &[16, 16], Activation::Swish, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 8, 4, 2);
        let v_next = critics.target_value(batch.next_states.view()).unwrap();
        let y = q_target(&batch.rewards, &batch.terminal, &v_next, 0.99);
        for which in 0..2 {
            fn net(c: &mut Critics, which: usize) -> &mut Mlp {
                if which == 0 { &mut c.q1 } else { &mut c.q2 }
            }
            let grad = q_loss_and_grad(net(&mut critics, which), &batch, &y).unwrap().1;
            let coords = sample_coords(&mut rng, grad.values.len(), 30);
            let err = check_gradient(&mut critics, |c| net(c, which).params_mut(), &grad.values, &coords, 1e-5, |c| {
                q_loss_and_grad(if which == 0 { &c.q1 } else { &c.q2 }, &batch, &y).unwrap().0
            });
            assert!(err <= 1e-4, "q{}: {err}", which + 1);
        }
        let target = Array1::from_shape_fn(8, |_| rng.random_range(-3.0..3.0));
        let grad = regression_loss_and_grad(&critics.v, batch.states.view(), &target).unwrap().1;
        let coords = sample_coords(&mut rng, grad.values.len(), 30);
        let err = check_gradient(&mut critics, |c| c.v.params_mut(), &grad.values, &coords, 1e-5, |c| {
            regression_loss_and_grad(&c.v, batch.states.view(), &target).unwrap().0
        });
        assert!(err <= 1e-4, "v: {err}");
    }
}

#[test]
fn actor_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in ["pendulum", "pointmass"] {
        let sp = spec(name);
        for _ in 0..20 {
            let mut policy = StochasticPolicy::new(&sp, &[16, 16], Activation::Swish, &mut rng).unwrap();
            let critics = Critics::new(&sp, &[16, 16], Activation::Swish, &mut rng).unwrap();
            let states = standard_normal_matrix(&mut rng, 8, sp.state_dim);
            let eps = standard_normal_matrix(&mut rng, 8, sp.action_dim);
            let alpha = rng.random_range(0.05..1.0);
            let (_, grad, _, _) = actor_loss_and_grad(&policy, &critics, states.view(), eps.clone(), alpha).unwrap();
            let coords = sample_coords(&mut rng, grad.values.len(), 30);
            let err = check_gradient(&mut policy, |p| p.net_mut().params_mut(), &grad.values, &coords, 1e-5, |p| {
                actor_loss_and_grad(p, &critics, states.view(), eps.clone(), alpha).unwrap().0
            });
            assert!(err <= 1e-4, "{name}: {err}");
        }
    }
}

#[test]
fn temperature_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..20 {
        let lp = Array1::from_shape_fn(16, |_| rng.random_range(-3.0..3.0));
        let la: f64 = rng.random_range(-3.0..1.0);
        let target = -(rng.random_range(1..4) as f64);
        let (_, g) = temperature_loss_and_grad(la, &lp, target);
        let h = 1e-5;
        let fd = (temperature_loss_and_grad(la + h, &lp, target).0 - temperature_loss_and_grad(la - h, &lp, target).0) / (2.0 * h);
        assert!(relative_error(fd, g, 1e-6) <= 1e-4);
    }
}

#[test]
fn value_converges_on_single_state_mdp() {
    let mut sp = spec("pendulum");
    sp.state_dim = 1;
    let cfg = AgentConfig {
        hidden: vec![16],
        lr_critic: 3e-3,
        gamma: 0.9,
        tau: 0.05,
        init_alpha: 0.0,
        auto_alpha: false,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut agent = Agent::new(&sp, cfg, &mut rng).unwrap();
    let n = 32;
    let mut batch = SacBatch {
        states: Array2::zeros((n, 1)),
        actions: Array2::zeros((n, 1)),
        rewards: Array1::ones(n),
        next_states: Array2::zeros((n, 1)),
        terminal: Array1::zeros(n),
    };
    for _ in 0..6000 {
        batch.actions = Array2::from_shape_fn((n, 1), |_| rng.random_range(-2.0..2.0));
        agent.sac_update(&batch, &mut rng).unwrap();
    }
    let v = agent.estimate_value(Array2::zeros((1, 1)).view()).unwrap()[0];
    assert!((v - 10.0).abs() < 0.5, "{v}");
}

#[test]
fn batched_and_single_values_agree() {
    let sp = spec("pendulum");
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let agent = Agent::new(&sp, AgentConfig::default(), &mut rng).unwrap();
    let states = standard_normal_matrix(&mut rng, 6, 3);
    let batched = agent.estimate_value(states.view()).unwrap();
    assert!(batched.iter().all(|v| v.is_finite()));
    for i in 0..6 {
        let single = agent.estimate_value(states.slice(ndarray::s![i..i + 1, ..])).unwrap()[0];
        assert!((single - batched[i]).abs() < 1e-12);
    }
}

#[test]
fn target_value_tracks_by_geometric_blend() {
    let mut a = Mlp::zeroed(&[1, 1], Activation::Relu).unwrap();
    let tau: f64 = 0.1;
    let history = [1.0, 3.0, -2.0, 0.5, 4.0];
    for h in history {
        let mut src = a.clone();
        src.params_mut().values = vec![h, h];
        a.soft_update_from(&src, tau);
    }
    let n = history.len();
    let closed: f64 = history
        .iter()
        .enumerate()
        .map(|(k, h)| tau * (1.0 - tau).powi((n - 1 - k) as i32) * h)
        .sum();
    assert!((a.params().values[0] - closed).abs() < 1e-12);
}

#[test]
fn empty_batches_are_skipped() {
    let sp = spec("pendulum");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut agent = Agent::new(&sp, AgentConfig::default(), &mut rng).unwrap();
    let none = agent.imitation_update(Array2::zeros((0, 3)).view(), Array2::zeros((0, 1)).view()).unwrap();
    assert!(none.is_none());
    let batch = SacBatch::from_transitions(&[]).unwrap();
    assert!(agent.sac_update(&batch, &mut rng).unwrap().is_none());
    assert_eq!((agent.skipped_imitation, agent.skipped_sac), (1, 1));
}

#[test]
fn sac_update_moves_target_toward_value() {
    let sp = spec("pendulum");
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut agent = Agent::new(&sp, AgentConfig::default(), &mut rng).unwrap();
    let before = agent.critics.v_target.clone();
    let batch = random_batch(&mut rng, 16, 3, 1);
    let losses = agent.sac_update(&batch, &mut rng).unwrap().unwrap();
    assert!(losses.q1.is_finite() && losses.actor.is_finite() && losses.v.is_finite());
    let tau = agent.config().tau;
    for ((t, b), v) in agent
        .critics
        .v_target
        .params()
        .values
        .iter()
        .zip(&before.params().values)
        .zip(&agent.critics.v.params().values)
    {
        assert!((t - ((1.0 - tau) * b + tau * v)).abs() < 1e-12);
    }
}
