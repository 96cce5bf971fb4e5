//! Command-line front end. Every subcommand prints a JSON summary on stdout;
//! errors go to stderr as one JSON object and set the exit code (2 usage,
//! 3 no certificate, 4 numerical failure).

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tubeverify_core::bounds::{self, BetaPosterior};
use tubeverify_core::retrain::{self, Checkpoint, PipelineConfig, RetrainOutcome};
use tubeverify_core::rollout::{self, batch_rollout, ConstantPolicy, ErrorPolicy, InducedPolicy, Policy, RolloutConfig};
use tubeverify_core::sampler::{self, VolumeProbe};
use tubeverify_core::value_fn::AnalyticValue;
use tubeverify_core::verifier::{self, Candidate, SweepStrategy};
use tubeverify_core::{seed, LevelSetSpec, SineMlp, System, ValueFunction};

use crate::config::{PolicyChoice, RunConfig, Settings};
use crate::error::CliError;
use crate::output;
use crate::weights::{self, CheckpointMeta};

#[derive(Debug, Parser)]
#[command(name = "tubeverify", version, about = "Statistical certification of learned reachable tubes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the sample-count bound for one of ε, k or N.
    Bounds {
        #[command(subcommand)]
        unknown: BoundsCmd,
    },
    /// Certify one level set.
    Verify(VerifyArgs),
    /// Certify a list of level sets.
    Sweep(SweepArgs),
    /// Outlier-free baseline: move the level past every outlier until none remain.
    Iterative(IterativeArgs),
    /// Refit a value network to rollout costs of its frozen policy and compare certified volumes.
    Retrain(RetrainArgs),
    /// Simulate the closed loop from given or random states.
    Rollout(RolloutArgs),
    /// Estimate level-set volume fractions.
    Volume(VolumeArgs),
}

#[derive(Debug, Subcommand)]
pub enum BoundsCmd {
    /// Smallest certified ε for N samples with k outliers.
    Eps {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        k: u64,
        #[arg(long)]
        beta: f64,
    },
    /// Largest outlier count N samples can tolerate at level ε.
    K {
        #[arg(long)]
        n: u64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        beta: f64,
    },
    /// Fewest samples certifying ε with up to k outliers.
    N {
        #[arg(long)]
        k: u64,
        #[arg(long)]
        eps: f64,
        #[arg(long)]
        beta: f64,
    },
}

fn parse_error_policy(s: &str) -> Result<ErrorPolicy, String> {
    match s {
        "conservative" => Ok(ErrorPolicy::Conservative),
        "diagnostic" => Ok(ErrorPolicy::Diagnostic),
        _ => Err(format!("expected `conservative` or `diagnostic`, got `{s}`")),
    }
}

fn parse_strategy(s: &str) -> Result<SweepStrategy, String> {
    match s {
        "shared" => Ok(SweepStrategy::Shared),
        "resample" => Ok(SweepStrategy::Resample),
        _ => Err(format!("expected `shared` or `resample`, got `{s}`")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML file with defaults for any flag.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// dubins3, rocket or rocket_nogo.
    #[arg(long)]
    pub system: Option<String>,
    /// `analytic` for Ṽ = l, or a weight file.
    #[arg(long)]
    pub value: Option<String>,
    /// Take the induced policy from this value function instead (`analytic` or a weight file).
    #[arg(long)]
    pub policy_from: Option<String>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyChoice>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Integration step; must divide the horizon.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Worker threads for batch stages.
    #[arg(long, env = "TUBEVERIFY_THREADS")]
    pub threads: Option<usize>,
}

impl CommonArgs {
    fn settings(&self) -> Settings {
        Settings {
            system: self.system.clone(),
            value: self.value.clone(),
            policy_from: self.policy_from.clone(),
            policy: self.policy,
            seed: self.seed,
            dt: self.dt,
            threads: self.threads,
            ..Settings::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CertArgs {
    /// Samples per certificate.
    #[arg(long)]
    pub n: Option<u64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// conservative or diagnostic.
    #[arg(long, value_parser = parse_error_policy)]
    pub error_policy: Option<ErrorPolicy>,
    /// Box points behind volume estimates.
    #[arg(long)]
    pub volume_samples: Option<u64>,
    #[arg(long)]
    pub max_rejections: Option<u64>,
}

impl CertArgs {
    fn apply(&self, s: Settings) -> Settings {
        Settings {
            n: self.n,
            beta: self.beta,
            error_policy: self.error_policy,
            volume_samples: self.volume_samples,
            max_rejections: self.max_rejections,
            ..s
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub cert: CertArgs,
    /// Level δ of the candidate set.
    #[arg(long, allow_negative_numbers = true)]
    pub delta: Option<f64>,
    /// Full JSON report.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// One-row CSV report.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// CSV of the sampled states.
    #[arg(long)]
    pub dump_samples: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub cert: CertArgs,
    /// Comma-separated levels.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub levels: Option<Vec<f64>>,
    /// Comma-separated box fractions, converted to levels by quantiles.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// shared or resample.
    #[arg(long, value_parser = parse_strategy)]
    pub strategy: Option<SweepStrategy>,
    /// Also report the largest level certifying this ε.
    #[arg(long)]
    pub eps_target: Option<f64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct IterativeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub cert: CertArgs,
    #[arg(long)]
    pub eps_target: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub initial_level: Option<f64>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RetrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub cert: CertArgs,
    /// Fit a first network to costs of the policy induced by Ṽ = l instead
    /// of refining `--value`.
    #[arg(long)]
    pub bootstrap: bool,
    #[arg(long)]
    pub n_train: Option<u64>,
    #[arg(long)]
    pub n_val: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Weight on conservative errors.
    #[arg(long)]
    pub w: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub checkpoint_interval: Option<usize>,
    #[arg(long)]
    pub normalize_labels: Option<bool>,
    /// Hidden layer widths for `--bootstrap`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub omega0: Option<f64>,
    #[arg(long)]
    pub eps_target: Option<f64>,
    /// Box fractions tried when comparing certified volumes.
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct RolloutArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Initial state, comma-separated. Without it, `--n` random box states are used.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    #[arg(long)]
    pub n: Option<u64>,
    /// Trajectory CSV for a single `--x0` rollout.
    #[arg(long)]
    pub dump_traj: Option<PathBuf>,
    /// Per-state costs.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VolumeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub levels: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub fractions: Option<Vec<f64>>,
    #[arg(long)]
    pub volume_samples: Option<u64>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let err = CliError::usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.to_json());
            e.exit_code()
        }
    }
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Bounds { unknown } => cmd_bounds(unknown),
        Command::Verify(a) => cmd_verify(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Iterative(a) => cmd_iterative(a),
        Command::Retrain(a) => cmd_retrain(a),
        Command::Rollout(a) => cmd_rollout(a),
        Command::Volume(a) => cmd_volume(a),
    }
}

fn print_json(doc: &serde_json::Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(doc).expect("JSON value serializes");
    // a closed pipe (e.g. `| head`) is not worth a panic
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn posterior_json(p: &BetaPosterior) -> serde_json::Value {
    json!({ "alpha": p.alpha, "beta_shape": p.beta_shape, "mean": p.mean(), "variance": p.variance() })
}

fn bound_summary(n: u64, k: u64, beta: f64) -> Result<serde_json::Value, CliError> {
    let eq = bounds::check_equivalence(n, k, beta)?;
    Ok(json!({
        "n": n,
        "k": k,
        "beta": beta,
        "epsilon": eq.epsilon,
        "one_minus_epsilon": eq.scenario_lower_bound,
        "conformal_lower_bound": eq.conformal_lower_bound,
        "equivalence_abs_diff": eq.abs_diff,
        "posterior": posterior_json(&bounds::beta_posterior(n, k)?),
    }))
}

fn bounds_doc(config: serde_json::Value, solved: &str, body: serde_json::Value) -> serde_json::Value {
    let mut doc = json!({ "build": output::build_id(), "config": config, "solved": solved });
    if let (Some(d), serde_json::Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    doc
}

fn cmd_bounds(unknown: BoundsCmd) -> Result<(), CliError> {
    match unknown {
        BoundsCmd::Eps { n, k, beta } => {
            let config = json!({ "command": "bounds eps", "n": n, "k": k, "beta": beta });
            print_json(&bounds_doc(config, "epsilon", bound_summary(n, k, beta)?));
        }
        BoundsCmd::K { n, eps, beta } => {
            let config = json!({ "command": "bounds k", "n": n, "eps": eps, "beta": beta });
            match bounds::max_outliers(n, eps, beta)? {
                Some(k) => {
                    let mut body = bound_summary(n, k, beta)?;
                    body["infeasible"] = json!(false);
                    print_json(&bounds_doc(config, "k", body));
                }
                None => {
                    let body = json!({ "n": n, "eps": eps, "beta": beta, "k": null, "infeasible": true });
                    print_json(&bounds_doc(config, "k", body));
                    return Err(CliError::Infeasible(format!(
                        "infeasible: {n} samples cannot certify ε = {eps} at β = {beta} even with no outliers"
                    )));
                }
            }
        }
        BoundsCmd::N { k, eps, beta } => {
            let config = json!({ "command": "bounds n", "k": k, "eps": eps, "beta": beta });
            let n = bounds::min_samples(k, eps, beta)?;
            print_json(&bounds_doc(config, "n", bound_summary(n, k, beta)?));
        }
    }
    Ok(())
}

fn setup_threads(run: &RunConfig) {
    if let Some(n) = run.settings.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("thread pool already configured: {e}");
        }
    }
}

fn load_value<'a>(source: &str, system: &'a dyn System) -> Result<Box<dyn ValueFunction + 'a>, CliError> {
    let vf: Box<dyn ValueFunction + 'a> = if source == "analytic" {
        Box::new(AnalyticValue::new(system))
    } else {
        Box::new(weights::load_weights(Path::new(source))?.0)
    };
    let n = system.spec().state_dim;
    if vf.input_dim() != n {
        return Err(CliError::usage(format!("{source} takes {} inputs but the system has {n} states", vf.input_dim())));
    }
    Ok(vf)
}

fn load_network(source: &str) -> Result<SineMlp, CliError> {
    if source == "analytic" {
        return Err(CliError::usage("this command needs a network; pass --value <weights.json> or --bootstrap"));
    }
    Ok(weights::load_weights(Path::new(source))?.0)
}

/// Value function, and the separate one its policy comes from, if any.
struct Models<'a> {
    value: Box<dyn ValueFunction + 'a>,
    policy_value: Option<Box<dyn ValueFunction + 'a>>,
}

impl<'a> Models<'a> {
    fn load(run: &RunConfig, system: &'a dyn System) -> Result<Self, CliError> {
        let value = load_value(run.settings.value.as_deref().unwrap_or("analytic"), system)?;
        let policy_value = run.settings.policy_from.as_deref().map(|s| load_value(s, system)).transpose()?;
        Ok(Self { value, policy_value })
    }

    fn policy(&self, run: &RunConfig, system: &'a dyn System) -> Result<Box<dyn Policy + '_>, CliError> {
        Ok(match run.settings.policy.unwrap_or(PolicyChoice::Induced) {
            PolicyChoice::Zero => Box::new(ConstantPolicy { u: vec![0.0; system.spec().control_dim] }),
            PolicyChoice::Induced => {
                let vf = self.policy_value.as_deref().unwrap_or(&*self.value);
                Box::new(InducedPolicy::new(vf, system)?)
            }
        })
    }
}

fn cmd_verify(a: VerifyArgs) -> Result<(), CliError> {
    let flags = Settings {
        delta: a.delta,
        report: a.report.clone(),
        csv: a.csv.clone(),
        dump_samples: a.dump_samples.clone(),
        ..a.cert.apply(a.common.settings())
    };
    let run = RunConfig::new("verify", flags, a.common.config.as_deref())?;
    setup_threads(&run);
    let system = run.build_system()?;
    let models = Models::load(&run, &*system)?;
    let policy = models.policy(&run, &*system)?;
    let delta = run.settings.delta.ok_or_else(|| CliError::usage("--delta is required"))?;
    let params = run.verify_params();
    let started = Instant::now();
    let mut report = verifier::verify(&*system, Candidate { value: &*models.value, policy: &*policy }, delta, &params)?;
    report.wall_time_s = Some(started.elapsed().as_secs_f64());

    if let Some(p) = &run.settings.csv {
        output::write_reports(p, &run, &[(delta, Ok(report.clone()))])?;
    }
    if let Some(p) = &run.settings.dump_samples {
        let level = LevelSetSpec::for_mode(system.spec().mode, delta);
        let batch =
            sampler::sample_safe_set(&params.plan(params.n_samples, params.seed), &*models.value, &level, system.spec())?;
        output::write_samples(p, &run, &batch.states)?;
    }
    let doc = output::json_document(&run, &json!({ "report": report }));
    if let Some(p) = &run.settings.report {
        output::write_json(p, &doc)?;
    }
    print_json(&doc);
    Ok(())
}

fn sweep_levels(run: &RunConfig, system: &dyn System, value: &dyn ValueFunction) -> Result<Vec<f64>, CliError> {
    match (&run.settings.levels, &run.settings.fractions) {
        (Some(l), _) => Ok(l.clone()),
        (None, Some(f)) => {
            let params = run.verify_params();
            let probe = VolumeProbe::new(value, system.spec(), params.volume_samples, params.seed)?;
            Ok(verifier::levels_for_fractions(&probe, system.spec().mode, f))
        }
        (None, None) => Err(CliError::usage("pass --levels or --fractions")),
    }
}

fn cmd_sweep(a: SweepArgs) -> Result<(), CliError> {
    let flags = Settings {
        levels: a.levels.clone(),
        fractions: a.fractions.clone(),
        strategy: a.strategy,
        eps_target: a.eps_target,
        report: a.report.clone(),
        csv: a.csv.clone(),
        ..a.cert.apply(a.common.settings())
    };
    let run = RunConfig::new("sweep", flags, a.common.config.as_deref())?;
    setup_threads(&run);
    let system = run.build_system()?;
    let models = Models::load(&run, &*system)?;
    let policy = models.policy(&run, &*system)?;
    let levels = sweep_levels(&run, &*system, &*models.value)?;
    let params = run.verify_params();
    let cand = Candidate { value: &*models.value, policy: &*policy };
    let results = verifier::sweep_levels(
        &*system,
        cand,
        &levels,
        &params,
        run.settings.strategy.unwrap_or_default(),
    )?;
    let rows: Vec<(f64, _)> = levels.iter().copied().zip(results).collect();
    if let Some(p) = &run.settings.csv {
        output::write_reports(p, &run, &rows)?;
    }
    let entries: Vec<serde_json::Value> = rows
        .iter()
        .map(|(level, r)| match r {
            Ok(r) => json!({ "level": level, "report": r }),
            Err(e) => {
                let ce = CliError::from(e.clone());
                json!({ "level": level, "error": { "kind": ce.kind(), "message": ce.to_string() } })
            }
        })
        .collect();
    let results: Vec<_> = rows.iter().map(|(_, r)| r.clone()).collect();
    let largest = run.settings.eps_target.and_then(|eps| verifier::largest_certified(&results, eps).cloned());
    let doc = output::json_document(&run, &json!({ "reports": entries, "largest_certified": largest }));
    if let Some(p) = &run.settings.report {
        output::write_json(p, &doc)?;
    }
    print_json(&doc);
    Ok(())
}

fn cmd_iterative(a: IterativeArgs) -> Result<(), CliError> {
    let flags = Settings {
        eps_target: a.eps_target,
        initial_level: a.initial_level,
        max_iterations: a.max_iterations,
        report: a.report.clone(),
        csv: a.csv.clone(),
        ..a.cert.apply(a.common.settings())
    };
    let run = RunConfig::new("iterative", flags, a.common.config.as_deref())?;
    setup_threads(&run);
    let system = run.build_system()?;
    let models = Models::load(&run, &*system)?;
    let policy = models.policy(&run, &*system)?;
    let eps = run.settings.eps_target.ok_or_else(|| CliError::usage("--eps-target is required"))?;
    let params = run.verify_params();
    let started = Instant::now();
    let mut outcome = verifier::iterative_verify(
        &*system,
        Candidate { value: &*models.value, policy: &*policy },
        eps,
        run.settings.initial_level.unwrap_or(0.0),
        run.settings.max_iterations.unwrap_or(100),
        &params,
    )?;
    outcome.report.wall_time_s = Some(started.elapsed().as_secs_f64());
    if let Some(p) = &run.settings.csv {
        output::write_reports(p, &run, &[(outcome.report.level, Ok(outcome.report.clone()))])?;
    }
    let doc = output::json_document(&run, &outcome);
    if let Some(p) = &run.settings.report {
        output::write_json(p, &doc)?;
    }
    print_json(&doc);
    Ok(())
}

fn checkpoint_meta(c: &Checkpoint, selected: bool) -> CheckpointMeta {
    let finite = |v: f64| v.is_finite().then_some(v);
    CheckpointMeta {
        epoch: c.epoch,
        metric: finite(c.metric.value),
        train_loss: finite(c.train_loss),
        validation_loss: finite(c.validation_loss),
        selected,
    }
}

fn write_training(out: &Path, run: &RunConfig, fit: &RetrainOutcome, name: &str) -> Result<(), CliError> {
    for (i, (c, net)) in fit.history.iter().zip(&fit.snapshots).enumerate() {
        let path = out.join("checkpoints").join(format!("epoch_{:06}.json", c.epoch));
        std::fs::create_dir_all(path.parent().expect("checkpoint path has a parent"))?;
        weights::save_weights(net, Some(&checkpoint_meta(c, i == fit.selected)), &path)?;
    }
    let chosen = &fit.history[fit.selected];
    weights::save_weights(&fit.net, Some(&checkpoint_meta(chosen, true)), &out.join(name))?;
    output::write_history(&out.join("history.csv"), run, &fit.history, fit.selected)
}

fn cmd_retrain(a: RetrainArgs) -> Result<(), CliError> {
    let flags = Settings {
        bootstrap: a.bootstrap.then_some(true),
        n_train: a.n_train,
        n_val: a.n_val,
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        w: a.w,
        batch_size: a.batch_size,
        checkpoint_interval: a.checkpoint_interval,
        normalize_labels: a.normalize_labels,
        hidden: a.hidden.clone(),
        omega0: a.omega0,
        eps_target: a.eps_target,
        fractions: a.fractions.clone(),
        out: a.out.clone(),
        ..a.cert.apply(a.common.settings())
    };
    let run = RunConfig::new("retrain", flags, a.common.config.as_deref())?;
    setup_threads(&run);
    let system = run.build_system()?;
    let s = &run.settings;
    let out = s.out.clone().ok_or_else(|| CliError::usage("--out <dir> is required"))?;
    std::fs::create_dir_all(&out)?;
    let cfg = run.retrain_config();
    let defaults = PipelineConfig::default();
    let n_train = s.n_train.unwrap_or(defaults.n_train);
    let n_val = s.n_val.unwrap_or(defaults.n_val);
    let started = Instant::now();

    if s.bootstrap.unwrap_or(false) {
        let hidden = s.hidden.clone().unwrap_or_else(|| vec![64, 64, 64]);
        let init = SineMlp::for_system(system.spec(), &hidden, s.omega0.unwrap_or(30.0), seed::derive(run.seed(), "init"))?;
        let (fit, data) = retrain::bootstrap_candidate(&*system, &init, n_train, n_val, run.dt(), &cfg)?;
        output::write_dataset(&out.join("dataset.csv"), &run, &data)?;
        write_training(&out, &run, &fit, "bootstrap.json")?;
        let body = json!({
            "network": out.join("bootstrap.json"),
            "selected_epoch": fit.history[fit.selected].epoch,
            "history": fit.history,
            "monotone": fit.monotone,
            "label_scale": fit.label_scale,
            "n_failed": data.n_failed,
            "wall_time_s": started.elapsed().as_secs_f64(),
        });
        let doc = output::json_document(&run, &body);
        output::write_json(&out.join("summary.json"), &doc)?;
        print_json(&doc);
        return Ok(());
    }

    let original = load_network(s.value.as_deref().unwrap_or("analytic"))?;
    let pipeline = PipelineConfig {
        n_train,
        n_val,
        dataset_seed: seed::derive(run.seed(), "retrain_dataset"),
        retrain: cfg,
        epsilon_target: s.eps_target.unwrap_or(defaults.epsilon_target),
        volume_grid: run.fractions(),
        verify: run.verify_params(),
    };
    if bounds::max_outliers(pipeline.verify.n_samples, pipeline.epsilon_target, pipeline.verify.beta)?.is_none() {
        log::warn!(
            "{} samples cannot certify ε = {} at β = {}; both volumes will be zero",
            pipeline.verify.n_samples,
            pipeline.epsilon_target,
            pipeline.verify.beta
        );
    }
    let result = retrain::outlier_adjusted_pipeline(&*system, &original, &pipeline)?;
    output::write_dataset(&out.join("dataset.csv"), &run, &result.dataset)?;
    write_training(&out, &run, &result.refined, "refined.json")?;
    output::write_attempts(&out.join("attempts_before.csv"), &run, &result.before.attempts)?;
    output::write_attempts(&out.join("attempts_after.csv"), &run, &result.after.attempts)?;
    let body = json!({
        "network": out.join("refined.json"),
        "selected_epoch": result.refined.history[result.refined.selected].epoch,
        "history": result.refined.history,
        "monotone": result.refined.monotone,
        "policy_fingerprint": format!("{:016x}", result.dataset.policy_fingerprint),
        "n_failed": result.dataset.n_failed,
        "before": { "certified_volume": result.before.volume(), "report": result.before.best },
        "after": { "certified_volume": result.after.volume(), "report": result.after.best },
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    let doc = output::json_document(&run, &body);
    output::write_json(&out.join("summary.json"), &doc)?;
    print_json(&doc);
    Ok(())
}

fn cmd_rollout(a: RolloutArgs) -> Result<(), CliError> {
    let flags = Settings {
        x0: a.x0.clone(),
        n: a.n,
        dump_traj: a.dump_traj.clone(),
        csv: a.csv.clone(),
        ..a.common.settings()
    };
    let run = RunConfig::new("rollout", flags, a.common.config.as_deref())?;
    setup_threads(&run);
    let system = run.build_system()?;
    let models = Models::load(&run, &*system)?;
    let policy = models.policy(&run, &*system)?;
    let cfg = RolloutConfig::new(run.dt());
    let spec = system.spec();

    if let Some(x0) = &run.settings.x0 {
        let r = rollout::rollout(&*system, &*policy, x0, &cfg, true)?;
        let traj = r.trajectory.as_ref().expect("recorded rollout has a trajectory");
        if let Some(p) = &run.settings.dump_traj {
            output::write_trajectory(p, &run, traj)?;
        }
        if let Some(p) = &run.settings.csv {
            output::write_rollouts(p, &run, std::slice::from_ref(x0), &[Ok(r.clone())])?;
        }
        let body = json!({
            "x0": x0,
            "cost": r.cost,
            "verdict": output::verdict_name(r.verdict),
            "final_state": traj.states.last(),
            "steps": traj.states.len() - 1,
        });
        print_json(&output::json_document(&run, &body));
        return Ok(());
    }
    if run.settings.dump_traj.is_some() {
        return Err(CliError::usage("--dump-traj needs a single --x0"));
    }
    let n = run.settings.n.unwrap_or(100);
    let stage = seed::derive(run.seed(), "rollout");
    let states: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut x = vec![0.0; spec.state_dim];
            sampler::draw_base(&mut seed::stream(stage, i), spec, &mut x);
            x
        })
        .collect();
    let out = batch_rollout(&*system, &*policy, &states, &cfg, ErrorPolicy::Diagnostic, false);
    if let Some(p) = &run.settings.csv {
        output::write_rollouts(p, &run, &states, &out.results)?;
    }
    let body = json!({
        "n": n,
        "n_violations": out.n_violations,
        "n_errors": out.n_errors,
        "violation_rate": out.n_violations as f64 / out.n_counted.max(1) as f64,
    });
    print_json(&output::json_document(&run, &body));
    Ok(())
}

fn cmd_volume(a: VolumeArgs) -> Result<(), CliError> {
    let flags = Settings {
        levels: a.levels.clone(),
        fractions: a.fractions.clone(),
        volume_samples: a.volume_samples,
        csv: a.csv.clone(),
        ..a.common.settings()
    };
    let run = RunConfig::new("volume", flags, a.common.config.as_deref())?;
    setup_threads(&run);
    let system = run.build_system()?;
    let value = load_value(run.settings.value.as_deref().unwrap_or("analytic"), &*system)?;
    let levels = sweep_levels(&run, &*system, &*value)?;
    let params = run.verify_params();
    let probe = VolumeProbe::new(&*value, system.spec(), params.volume_samples, params.seed)?;
    let rows: Vec<(f64, _)> = levels
        .iter()
        .map(|&l| (l, probe.estimate(&LevelSetSpec::for_mode(system.spec().mode, l))))
        .collect();
    if let Some(p) = &run.settings.csv {
        output::write_volumes(p, &run, &rows)?;
    }
    let entries: Vec<_> = rows.iter().map(|(l, v)| json!({ "level": l, "volume": v })).collect();
    print_json(&output::json_document(&run, &json!({ "volumes": entries })));
    Ok(())
}
