use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bifrl::orchestrator::{evaluate_policy, steps_to_threshold, RunConfig, Trainer};
use bifrl::theory::validate_bound;
use bifrl::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "bifrl", version, about = "Backward imitation and forward reinforcement on desk-scale tasks")]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics.csv, config.toml and checkpoints to --out.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Analytic checks of the return discrepancy bound.
    Theory {
        #[command(subcommand)]
        command: TheoryCommand,
    },
    /// Train one run per value of a hyperparameter and seed.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Evaluation return that counts as solved in the summary.
        #[arg(long, default_value_t = -300.0, allow_negative_numbers = true)]
        threshold: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate the policy stored in a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum TheoryCommand {
    /// Check the bound on random tabular instances.
    Validate {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        bins: usize,
        /// Directory for margin_histogram.csv and instances.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    #[value(name = "K")]
    K,
    #[value(name = "kb")]
    Kb,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvName {
    Pendulum,
    Pointmass,
    PointmassNt,
    Chain,
}

#[derive(Clone, Copy, ValueEnum)]
enum GanModeArg {
    Off,
    Vanilla,
    Value,
}

#[derive(Clone, Copy, ValueEnum)]
enum BackwardArg {
    #[value(name = "off")]
    Off,
    #[value(name = "BR", alias = "br")]
    Br,
    #[value(name = "BI", alias = "bi")]
    Bi,
}

#[derive(Args)]
struct RunArgs {
    /// Flat key-value config file laid over the environment defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    env: Option<EnvName>,
    /// Named algorithm variant (sac, baseline, baseline-br, baseline-bi, baseline-bi-gan,
    /// baseline-bi-vgan, bifrl).
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum)]
    gan_mode: Option<GanModeArg>,
    #[arg(long, value_enum)]
    backward: Option<BackwardArg>,
    /// Extra `key=value` config entries, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl RunArgs {
    fn overrides(&self) -> Result<Vec<(String, String)>, Error> {
        let mut o = Vec::new();
        if let Some(e) = self.env {
            let name = match e {
                EnvName::Pendulum => "pendulum",
                EnvName::Pointmass => "pointmass",
                EnvName::PointmassNt => "pointmass-nt",
                EnvName::Chain => "chain",
            };
            o.push(("env".into(), format!("\"{name}\"")));
        }
        if let Some(p) = &self.preset {
            o.push(("preset".into(), format!("\"{p}\"")));
        }
        if let Some(s) = self.seed {
            o.push(("seed".into(), s.to_string()));
        }
        if let Some(g) = self.gan_mode {
            let name = match g {
                GanModeArg::Off => "off",
                GanModeArg::Vanilla => "vanilla",
                GanModeArg::Value => "value",
            };
            o.push(("gan".into(), format!("\"{name}\"")));
        }
        if let Some(b) = self.backward {
            let name = match b {
                BackwardArg::Off => "off",
                BackwardArg::Br => "br",
                BackwardArg::Bi => "bi",
            };
            o.push(("backward".into(), format!("\"{name}\"")));
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got '{kv}'")))?;
            o.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(o)
    }

    fn load(&self, extra: &[(String, String)]) -> Result<RunConfig, Error> {
        let text = match &self.config {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut o = self.overrides()?;
        o.extend_from_slice(extra);
        RunConfig::from_text(&text, &o)
    }
}

/// Failure with the process exit code it maps to.
struct Failure {
    code: u8,
    error: Error,
}

fn config_err(error: Error) -> Failure {
    Failure { code: 1, error }
}

/// Errors raised while a run is in progress are training failures whatever their kind.
fn runtime_err(error: Error) -> Failure {
    Failure { code: 2, error }
}

fn train(config: RunConfig, out: &Path) -> Result<Trainer, Failure> {
    let mut trainer = Trainer::new(config).map_err(config_err)?;
    trainer.train(out).map_err(runtime_err)?;
    Ok(trainer)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { run, out, resume } => {
            let trainer = match resume {
                Some(ckpt) => {
                    let mut t = Trainer::load_checkpoint(&ckpt).map_err(runtime_err)?;
                    t.train(&out).map_err(runtime_err)?;
                    t
                }
                None => train(run.load(&[]).map_err(config_err)?, &out)?,
            };
            if let Some(r) = trainer.state.rows.last() {
                println!(
                    "epochs {} env_steps {} eval_return {:.3} ± {:.3}",
                    r.epoch, r.env_steps, r.eval_return_mean, r.eval_return_std
                );
            }
            println!("metrics {}", out.join("metrics.csv").display());
            Ok(())
        }
        Command::Theory {
            command: TheoryCommand::Validate { instances, seed, bins, out },
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = validate_bound(&mut rng, instances).map_err(config_err)?;
            let status = if report.passed() { "PASS" } else { "FAIL" };
            println!(
                "{status} instances {} violations {} median_margin {:.6}",
                report.checks.len(),
                report.violations.len(),
                report.median_margin()
            );
            for v in &report.violations {
                println!("violation {v:?}");
            }
            println!("bin_lower,bin_upper,count");
            for (lo, hi, count) in report.margin_histogram(bins) {
                println!("{lo},{hi},{count}");
            }
            if let Some(dir) = out {
                fs::create_dir_all(&dir).map_err(|e| runtime_err(e.into()))?;
                report
                    .write_histogram_csv(&dir.join("margin_histogram.csv"), bins)
                    .map_err(runtime_err)?;
                report.write_instances_csv(&dir.join("instances.csv")).map_err(runtime_err)?;
            }
            if report.passed() {
                Ok(())
            } else {
                Err(Failure {
                    code: 3,
                    error: Error::BoundViolation(report.violations.len()),
                })
            }
        }
        Command::Sweep {
            run,
            param,
            values,
            seeds,
            threshold,
            out,
        } => {
            let key = match param {
                SweepParam::K => "top_k",
                SweepParam::Kb => "kb",
            };
            let configs = values
                .iter()
                .map(|v| {
                    let value = match param {
                        SweepParam::K => v.clone(),
                        SweepParam::Kb => format!("\"{}\"", v.trim_matches('"')),
                    };
                    seeds
                        .iter()
                        .map(|s| run.load(&[(key.to_string(), value.clone()), ("seed".into(), s.to_string())]))
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(config_err)?;
            fs::create_dir_all(&out).map_err(|e| runtime_err(e.into()))?;
            let mut summary = String::from("param,value,seed,final_return,best_return,steps_to_threshold\n");
            for (v, group) in values.iter().zip(configs) {
                for c in group {
                    let seed = c.seed;
                    let dir = out.join(format!("{key}-{v}")).join(format!("seed-{seed}"));
                    let t = train(c, &dir)?;
                    let rows = &t.state.rows;
                    let last = rows.last().map(|r| r.eval_return_mean).unwrap_or(f64::NAN);
                    let best = rows.iter().map(|r| r.eval_return_mean).fold(f64::NEG_INFINITY, f64::max);
                    let steps = steps_to_threshold(rows, threshold).map(|s| s.to_string()).unwrap_or_default();
                    let line = format!("{key},{v},{seed},{last},{best},{steps}\n");
                    print!("{line}");
                    summary.push_str(&line);
                }
            }
            fs::write(out.join("sweep.csv"), summary).map_err(|e| runtime_err(e.into()))?;
            Ok(())
        }
        Command::Eval { checkpoint, episodes, seed } => {
            let t = Trainer::load_checkpoint(&checkpoint).map_err(runtime_err)?;
            let n = episodes.unwrap_or(t.config().eval_episodes);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mean, std) = evaluate_policy(&t.state.agent.policy, t.env(), n, &mut rng).map_err(runtime_err)?;
            println!(
                "env {} epoch {} episodes {n} return {mean:.3} ± {std:.3}",
                t.config().env,
                t.state.epoch
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors are configuration errors; help and version output are not errors
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}
