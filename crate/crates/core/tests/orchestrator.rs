use bifrl::envs::{make_env, Env, EnvSpec};
use bifrl::orchestrator::checkpoint;
use bifrl::orchestrator::{
    evaluate_policy, header_line, read_column, steps_to_threshold, BackwardMode, MetricsRow, RunConfig, ScheduleSpec,
    Stage, Trainer, TrainingState, PRESETS,
};
use bifrl::traits::ActionSource;
use bifrl::vgan::GanMode;
use bifrl::Error;
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TINY: &str = r#"
steps_per_epoch = 50
random_steps = 50
epochs = 3
eval_episodes = 2
m1 = 20
m2 = 40
g1 = 2
g2 = 4
batch_size = 32
imitation_batch = 32
window = 500
model_members = 2
model_hidden = [8, 8]
model_max_steps = 10
model_eval_every = 5
model_batch = 32
bp_hidden = [8]
hidden = [16, 16]
gan_hidden = [8]
gan_steps = 3
gan_batch = 16
kb = "2"
kf = "3"
"#;

fn tiny(extra: &[(&str, &str)]) -> RunConfig {
    let o: Vec<(String, String)> = extra.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    RunConfig::from_text(TINY, &o).unwrap()
}

#[test]
fn schedule_endpoints() {
    let hopper: ScheduleSpec = "1->10|20->150".parse().unwrap();
    for e in 1..=20 {
        assert_eq!(hopper.length(e), 1);
    }
    assert_eq!(hopper.length(150), 10);
    assert_eq!(hopper.length(400), 10);
    // floor(1 + 65/130 * 9) = floor(5.5)
    assert_eq!(hopper.length(85), 5);
    let pend: ScheduleSpec = "1->5|1->5".parse().unwrap();
    assert_eq!(pend.length(1), 1);
    assert_eq!(pend.length(5), 5);
    let c = ScheduleSpec::constant(3.0);
    assert!((1..50).all(|e| c.value(e) == 3.0));
}

proptest! {
    #[test]
    fn schedule_stays_between_endpoints(x in -10.0f64..10.0, y in -10.0f64..10.0, a in 0usize..50, span in 1usize..100, e in 1usize..300) {
        let s = ScheduleSpec::new(x, y, a, a + span).unwrap();
        let v = s.value(e);
        prop_assert!(v >= x.min(y) && v <= x.max(y));
    }

    #[test]
    fn strict_backward_length_below_forward(kb in 0.0f64..20.0, kf in 0.0f64..20.0, e in 1usize..40) {
        let mut c = RunConfig::defaults("pendulum").unwrap();
        c.kb = ScheduleSpec::new(kb, kb + 1.0, 1, 10).unwrap();
        c.kf = ScheduleSpec::new(kf, kf + 2.0, 1, 10).unwrap();
        let (b, f) = c.rollout_lengths(e);
        prop_assert!(b < f || b == 0);
    }
}

#[test]
fn per_env_defaults() {
    let p = RunConfig::defaults("pendulum").unwrap();
    assert_eq!((p.steps_per_epoch, p.lambda, p.e_alpha), (200, 1e-3, 10));
    assert_eq!((p.top_k, p.beta), (10.0, 0.7));
    assert_eq!(p.kb.to_string(), "1->3|1->5");
    assert_eq!(p.kf.to_string(), "1->5|1->5");
    let m = RunConfig::defaults("pointmass").unwrap();
    assert_eq!((m.steps_per_epoch, m.lambda), (1000, 1e-4));
    assert!(matches!(RunConfig::defaults("hopper"), Err(Error::Config(_))));
}

#[test]
fn config_rejects_unknown_and_nested_keys() {
    let e = RunConfig::from_text("epochs = 3\nbogus_key = 1\n", &[]).unwrap_err();
    assert!(matches!(e, Error::Config(ref m) if m.contains("bogus_key")), "{e}");
    assert!(matches!(RunConfig::from_text("[agent]\nlr = 1\n", &[]), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_text("epochs = \"x\"\n", &[]), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_text("top_k = 0\n", &[]), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_text("beta = 1.0\n", &[]), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_text("kb = \"1->3|5->5\"\n", &[]), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_text("backward = \"sideways\"\n", &[]), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_text("gan = \"huge\"\n", &[]), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_text("preset = \"nope\"\n", &[]), Err(Error::Config(_))));
    assert!(matches!(RunConfig::from_text("epochs = ", &[]), Err(Error::Config(_))));
}

#[test]
fn config_layers_env_preset_file_and_overrides() {
    let c = RunConfig::from_text(
        "env = \"pointmass-nt\"\npreset = \"baseline-br\"\nepochs = 7\n",
        &[("backward".into(), "BI".into()), ("top_k".into(), "50".into())],
    )
    .unwrap();
    assert_eq!(c.env, "pointmass-nt");
    assert_eq!(c.steps_per_epoch, 1000);
    assert_eq!(c.epochs, 7);
    assert_eq!(c.backward, BackwardMode::Imitate);
    assert_eq!(c.gan, GanMode::Off);
    assert_eq!(c.top_k, 50.0);
    let back = RunConfig::from_text(&c.to_text().unwrap(), &[]).unwrap();
    assert_eq!(back, c);
}

#[test]
fn presets_select_stages() {
    let sac = tiny(&[("preset", "sac")]);
    assert!(!sac.model_based && sac.backward == BackwardMode::Off && sac.gan == GanMode::Off);
    let full = tiny(&[]);
    assert!(full.model_based && full.backward == BackwardMode::Imitate && full.gan == GanMode::Value);
    for p in PRESETS {
        assert!(tiny(&[("preset", &format!("\"{}\"", p.name))]).validate().is_ok());
    }
}

#[derive(Debug)]
struct ConstEnv {
    spec: EnvSpec,
    reward: f64,
}

impl ConstEnv {
    fn new(reward: f64, steps: usize) -> Self {
        Self {
            spec: EnvSpec {
                name: "const".into(),
                state_dim: 1,
                action_dim: 1,
                action_low: vec![-1.0],
                action_high: vec![1.0],
                max_episode_steps: steps,
                has_early_termination: false,
                r_max: reward.abs(),
            },
            reward,
        }
    }
}

impl Env for ConstEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&self, _rng: &mut dyn RngCore) -> Vec<f64> {
        vec![0.0]
    }

    fn dynamics(&self, state: &[f64], _action: &[f64], _rng: &mut dyn RngCore) -> (Vec<f64>, f64) {
        (state.to_vec(), self.reward)
    }

    fn termination_fn(&self, _state: &[f64]) -> bool {
        false
    }
}

struct Uniform;

impl ActionSource for Uniform {
    fn actions(&self, s: ArrayView2<'_, f64>, _: bool, rng: &mut dyn RngCore) -> bifrl::Result<Array2<f64>> {
        Ok(Array2::from_shape_fn((s.nrows(), 1), |_| rng.random_range(-2.0..2.0)))
    }
}

#[test]
fn evaluate_stub_envs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(evaluate_policy(&Uniform, &ConstEnv::new(0.0, 7), 10, &mut rng).unwrap(), (0.0, 0.0));
    let (m, s) = evaluate_policy(&Uniform, &ConstEnv::new(1.0, 1), 10, &mut rng).unwrap();
    assert_eq!((m, s), (1.0, 0.0));
    assert_eq!(evaluate_policy(&Uniform, &ConstEnv::new(1.0, 1), 0, &mut rng).unwrap(), (0.0, 0.0));
}

#[test]
fn pendulum_random_policy_return_band() {
    // a uniformly random torque policy never swings up; returns sit well below zero
    let env = make_env("pendulum").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, s) = evaluate_policy(&Uniform, env.as_ref(), 20, &mut rng).unwrap();
    assert!((-1900.0..-700.0).contains(&m), "{m}");
    assert!(s > 0.0);
}

fn stages(t: &Trainer) -> Vec<Stage> {
    t.last_trace().to_vec()
}

#[test]
fn full_epoch_runs_every_stage_in_order() {
    let mut t = Trainer::new(tiny(&[])).unwrap();
    t.run_epoch().unwrap();
    let row = t.run_epoch().unwrap();
    use Stage::*;
    assert_eq!(
        stages(&t),
        vec![Collect, TrainModels, Aggregate, TopK, Boltzmann, BackwardRollouts, Imitation, ForwardRollouts, Sac, Divergence, Evaluate]
    );
    assert_eq!((row.epoch, row.env_steps, row.k_b, row.k_f), (2, 100, 2, 3));
    assert!(row.n_hs_b > 0 && row.n_hs_f == 40);
    assert!(row.n_backward > 0 && row.n_forward > 0);
    assert!(row.imitation_loss.is_some() && row.actor_loss.is_some());
    assert!(row.gan_d_loss.is_some() && row.forward_mse.is_some() && row.policy_mse.is_some());
}

#[test]
fn ablations_drop_stages() {
    use Stage::*;
    let mut base = Trainer::new(tiny(&[("preset", "baseline")])).unwrap();
    base.run_epoch().unwrap();
    assert_eq!(stages(&base), vec![Collect, TrainModels, Aggregate, Boltzmann, ForwardRollouts, Sac, Evaluate]);

    let mut sac = Trainer::new(tiny(&[("preset", "sac")])).unwrap();
    let row = sac.run_epoch().unwrap();
    assert_eq!(stages(&sac), vec![Collect, Sac, Evaluate]);
    assert!(row.forward_model_loss.is_none() && row.n_forward == 0);

    let mut br = Trainer::new(tiny(&[("preset", "baseline-br")])).unwrap();
    br.run_epoch().unwrap();
    let row = br.run_epoch().unwrap();
    assert!(stages(&br).contains(&BackwardRollouts));
    assert!(row.n_backward > 0 && row.imitation_loss.is_none());
    assert!(row.gan_d_loss.is_none());
}

#[test]
fn evaluation_steps_do_not_count() {
    let mut t = Trainer::new(tiny(&[("preset", "sac"), ("eval_episodes", "3")])).unwrap();
    for _ in 0..3 {
        t.run_epoch().unwrap();
    }
    let steps: Vec<u64> = t.state.rows.iter().map(|r| r.env_steps).collect();
    assert_eq!(steps, vec![50, 100, 150]);
}

#[test]
fn same_seed_gives_identical_metrics() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    Trainer::new(tiny(&[])).unwrap().train(a.path()).unwrap();
    Trainer::new(tiny(&[])).unwrap().train(b.path()).unwrap();
    let x = std::fs::read(a.path().join("metrics.csv")).unwrap();
    let y = std::fs::read(b.path().join("metrics.csv")).unwrap();
    assert_eq!(x, y);
    let text = String::from_utf8(x).unwrap();
    assert_eq!(text.lines().next().unwrap(), header_line());
    assert_eq!(text.lines().count(), 4);
    let c = tempfile::tempdir().unwrap();
    Trainer::new(tiny(&[("seed", "1")])).unwrap().train(c.path()).unwrap();
    assert_ne!(std::fs::read(c.path().join("metrics.csv")).unwrap(), text.into_bytes());
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let full = tempfile::tempdir().unwrap();
    let cfg = tiny(&[("epochs", "4"), ("checkpoint_every", "2")]);
    let mut t = Trainer::new(cfg).unwrap();
    t.train(full.path()).unwrap();

    let ckpt = full.path().join("epoch-2.ckpt");
    let mid: TrainingState = checkpoint::load(&ckpt).unwrap();
    assert_eq!(mid.epoch, 2);
    let again = full.path().join("again.ckpt");
    checkpoint::save(&again, &mid).unwrap();
    assert_eq!(checkpoint::load::<TrainingState>(&again).unwrap(), mid);

    let resumed = tempfile::tempdir().unwrap();
    let mut r = Trainer::load_checkpoint(&ckpt).unwrap();
    r.train(resumed.path()).unwrap();
    assert_eq!(
        std::fs::read(full.path().join("metrics.csv")).unwrap(),
        std::fs::read(resumed.path().join("metrics.csv")).unwrap()
    );
    // wall-clock time is not persisted
    for s in [&mut r.state, &mut t.state] {
        s.rows.iter_mut().for_each(|row| row.wall_clock = 0.0);
    }
    assert_eq!(r.state, t.state);
}

#[test]
fn checkpoint_corruption_and_version_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    let t = Trainer::new(tiny(&[])).unwrap();
    t.save_checkpoint(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    let mut bad = bytes.clone();
    let last = bad.len() - 2;
    bad[last] ^= 0x01;
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(Trainer::load_checkpoint(&path), Err(Error::Checksum { .. })));

    let text = String::from_utf8(bytes).unwrap().replacen("bifrl-checkpoint 1 ", "bifrl-checkpoint 7 ", 1);
    std::fs::write(&path, text).unwrap();
    let e = Trainer::load_checkpoint(&path).err().unwrap();
    assert!(matches!(e, Error::VersionMismatch { .. }));
    let msg = e.to_string();
    assert!(msg.contains('7') && msg.contains('1'), "{msg}");

    std::fs::write(&path, b"garbage").unwrap();
    assert!(matches!(Trainer::load_checkpoint(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn checkpoint_without_buffers_cannot_train() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.ckpt");
    let mut t = Trainer::new(tiny(&[("checkpoint_buffers", "false")])).unwrap();
    t.run_epoch().unwrap();
    t.save_checkpoint(&path).unwrap();
    let mut r = Trainer::load_checkpoint(&path).unwrap();
    assert_eq!(r.state.agent, t.state.agent);
    assert!(r.state.d_env.is_empty() && !r.state.has_buffers);
    assert!(matches!(r.run_epoch(), Err(Error::State(_))));
}

#[test]
fn stop_at_return_ends_early() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(tiny(&[("preset", "sac"), ("epochs", "5"), ("stop_at_return", "-1e9")])).unwrap();
    t.train(dir.path()).unwrap();
    assert_eq!(t.state.epoch, 1);
    assert!(dir.path().join("final.ckpt").exists());
}

#[test]
fn threshold_and_column_helpers() {
    let rows: Vec<MetricsRow> = [(200, -900.0), (400, -320.0), (600, -250.0), (800, -400.0)]
        .iter()
        .enumerate()
        .map(|(i, &(s, r))| MetricsRow {
            epoch: i + 1,
            env_steps: s,
            eval_return_mean: r,
            ..Default::default()
        })
        .collect();
    assert_eq!(steps_to_threshold(&rows, -300.0), Some(600));
    assert_eq!(steps_to_threshold(&rows, 0.0), None);
    let text: String = std::iter::once(header_line())
        .chain(rows.iter().map(MetricsRow::csv_line))
        .map(|l| l + "\n")
        .collect();
    assert_eq!(read_column(&text, "env_steps").unwrap()[3], Some(800.0));
}
