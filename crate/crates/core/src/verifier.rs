//! Certification of candidate safe sets: single levels, level sweeps, the
//! outlier-free iterative baseline and sample-size planning.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::bounds::{self, BetaPosterior, Tolerances};
use crate::dynamics::{ProblemMode, System};
use crate::error::{Error, Result};
use crate::rollout::{batch_rollout, BatchOutcome, ErrorPolicy, Policy, RolloutConfig};
use crate::sampler::{sample_safe_range, sample_safe_set, SamplePlan, VolumeEstimate, VolumeProbe};
use crate::seed;
use crate::value_fn::{LevelDirection, LevelSetSpec, ValueFunction};

pub const REPORT_FORMAT_VERSION: u32 = 1;

/// The level-set model and the policy whose rollouts decide safety. They
/// usually come from the same value function; after retraining the policy
/// stays frozen while the value model changes.
#[derive(Clone, Copy)]
pub struct Candidate<'a> {
    pub value: &'a dyn ValueFunction,
    pub policy: &'a dyn Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyParams {
    pub n_samples: u64,
    pub beta: f64,
    pub seed: u64,
    pub dt: f64,
    /// Uniform box points behind the volume estimate.
    pub volume_samples: u64,
    pub max_rejections_per_sample: u64,
    pub error_policy: ErrorPolicy,
    pub tolerances: Tolerances,
}

impl Default for VerifyParams {
    fn default() -> Self {
        Self {
            n_samples: 10_000,
            beta: 1e-16,
            seed: 0,
            dt: 0.01,
            volume_samples: 100_000,
            max_rejections_per_sample: 1_000_000,
            error_policy: ErrorPolicy::Conservative,
            tolerances: Tolerances::default(),
        }
    }
}

impl VerifyParams {
    /// Sampling plan the verifier uses for `n` states drawn with `sample_seed`.
    pub fn plan(&self, n: u64, sample_seed: u64) -> SamplePlan {
        SamplePlan { max_rejections_per_sample: self.max_rejections_per_sample, ..SamplePlan::new(n, sample_seed) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub format_version: u32,
    pub system: String,
    pub mode: ProblemMode,
    pub level: f64,
    pub direction: LevelDirection,
    /// `N`: sampled states entering the certificate.
    pub n_samples: u64,
    /// `k`: empirically unsafe states among them.
    pub n_outliers: u64,
    /// Rollouts that blew up; included in `N` and `k` in conservative mode.
    pub n_errors: u64,
    pub beta: f64,
    pub epsilon: f64,
    pub conformal_lower_bound: f64,
    pub posterior: BetaPosterior,
    pub volume: VolumeEstimate,
    pub acceptance_rate: f64,
    /// Root seed of the run; volume points derive from it.
    pub seed: u64,
    /// Seed the state sample was drawn with.
    pub sample_seed: u64,
    pub dt: f64,
    pub error_policy: ErrorPolicy,
    pub value_fingerprint: u64,
    pub policy_fingerprint: u64,
    /// Filled in by callers that can read a clock.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl VerificationReport {
    /// Whether the certificate meets `epsilon_target`.
    pub fn certifies(&self, epsilon_target: f64) -> bool {
        self.epsilon <= epsilon_target
    }
}

struct Certificate {
    epsilon: f64,
    conformal: f64,
    posterior: BetaPosterior,
}

fn certificate(n: u64, k: u64, beta: f64, tol: &Tolerances) -> Result<Certificate> {
    if n == 0 {
        return Err(Error::InvalidParameter("no samples in the candidate set"));
    }
    let eq = bounds::check_equivalence_with(n, k, beta, tol)?;
    Ok(Certificate {
        epsilon: eq.epsilon,
        conformal: eq.conformal_lower_bound,
        posterior: bounds::beta_posterior(n, k)?,
    })
}

struct Context<'a> {
    system: &'a dyn System,
    cand: Candidate<'a>,
    params: &'a VerifyParams,
    cfg: RolloutConfig,
}

impl Context<'_> {
    fn report(
        &self,
        level: &LevelSetSpec,
        n: u64,
        k: u64,
        n_errors: u64,
        volume: VolumeEstimate,
        acceptance_rate: f64,
        sample_seed: u64,
    ) -> Result<VerificationReport> {
        let cert = certificate(n, k, self.params.beta, &self.params.tolerances)?;
        let spec = self.system.spec();
        Ok(VerificationReport {
            format_version: REPORT_FORMAT_VERSION,
            system: spec.name.clone(),
            mode: spec.mode,
            level: level.level,
            direction: level.direction,
            n_samples: n,
            n_outliers: k,
            n_errors,
            beta: self.params.beta,
            epsilon: cert.epsilon,
            conformal_lower_bound: cert.conformal,
            posterior: cert.posterior,
            volume,
            acceptance_rate,
            seed: self.params.seed,
            sample_seed,
            dt: self.params.dt,
            error_policy: self.params.error_policy,
            value_fingerprint: self.cand.value.fingerprint(),
            policy_fingerprint: self.cand.policy.fingerprint(),
            wall_time_s: None,
        })
    }

    fn sample_and_roll(&self, level: &LevelSetSpec, n: u64, sample_seed: u64) -> Result<(Vec<Vec<f64>>, BatchOutcome, f64)> {
        let batch = sample_safe_set(&self.params.plan(n, sample_seed), self.cand.value, level, self.system.spec())?;
        let outcome = batch_rollout(self.system, self.cand.policy, &batch.states, &self.cfg, self.params.error_policy, false);
        let rate = batch.acceptance_rate();
        Ok((batch.states, outcome, rate))
    }

    fn verify_with(&self, level: &LevelSetSpec, probe: &VolumeProbe, sample_seed: u64) -> Result<VerificationReport> {
        let (_, out, rate) = self.sample_and_roll(level, self.params.n_samples, sample_seed)?;
        self.report(level, out.n_counted, out.n_violations, out.n_errors, probe.estimate(level), rate, sample_seed)
    }
}

fn context<'a>(system: &'a dyn System, cand: Candidate<'a>, params: &'a VerifyParams) -> Result<Context<'a>> {
    let n = system.spec().state_dim;
    if cand.value.input_dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: cand.value.input_dim() });
    }
    if params.n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be positive"));
    }
    if !(params.beta > 0.0 && params.beta < 1.0) {
        return Err(Error::InvalidParameter("beta must lie in (0, 1)"));
    }
    crate::rollout::step_count(system.spec().horizon, params.dt)?;
    Ok(Context { system, cand, params, cfg: RolloutConfig::new(params.dt) })
}

/// Certifies the level set `{Ṽ ≥ δ}` (avoid) or `{Ṽ ≤ δ}` (reach) from
/// `params.n_samples` rollouts.
pub fn verify(system: &dyn System, cand: Candidate<'_>, level: f64, params: &VerifyParams) -> Result<VerificationReport> {
    let ctx = context(system, cand, params)?;
    let probe = VolumeProbe::new(cand.value, system.spec(), params.volume_samples, params.seed)?;
    let spec = LevelSetSpec::for_mode(system.spec().mode, level);
    ctx.verify_with(&spec, &probe, params.seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepStrategy {
    /// Sample the outermost set once, roll out once, and re-test membership
    /// per level. Inner levels see fewer samples.
    #[default]
    Shared,
    /// Independent full-size sample per level.
    Resample,
}

/// One report per level, in input order. Errors at one level do not affect
/// the others.
pub fn sweep_levels(
    system: &dyn System,
    cand: Candidate<'_>,
    levels: &[f64],
    params: &VerifyParams,
    strategy: SweepStrategy,
) -> Result<Vec<Result<VerificationReport>>> {
    let ctx = context(system, cand, params)?;
    if levels.is_empty() {
        return Ok(Vec::new());
    }
    let mode = system.spec().mode;
    let probe = VolumeProbe::new(cand.value, system.spec(), params.volume_samples, params.seed)?;
    match strategy {
        SweepStrategy::Resample => Ok(levels
            .iter()
            .map(|&d| ctx.verify_with(&LevelSetSpec::for_mode(mode, d), &probe, params.seed))
            .collect()),
        SweepStrategy::Shared => {
            let outer_level = if mode.is_avoid() {
                levels.iter().copied().fold(f64::INFINITY, f64::min)
            } else {
                levels.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            };
            let outer = LevelSetSpec::for_mode(mode, outer_level);
            let (states, out, rate) = match ctx.sample_and_roll(&outer, params.n_samples, params.seed) {
                Ok(v) => v,
                Err(e) => return Ok(levels.iter().map(|_| Err(e.clone())).collect()),
            };
            let values: Vec<f64> = states.iter().map(|x| cand.value.eval(x)).collect();
            Ok(levels
                .iter()
                .map(|&d| {
                    let spec = LevelSetSpec::for_mode(mode, d);
                    let (mut members, mut n, mut k, mut errs) = (0u64, 0u64, 0u64, 0u64);
                    for (i, v) in values.iter().enumerate() {
                        if !spec.contains_value(*v) {
                            continue;
                        }
                        members += 1;
                        let errored = out.results[i].is_err();
                        if errored && params.error_policy == ErrorPolicy::Diagnostic {
                            errs += 1;
                            continue;
                        }
                        errs += u64::from(errored);
                        n += 1;
                        k += u64::from(out.is_violation(i));
                    }
                    // acceptance of the inner set relative to the box
                    let inner_rate = rate * members as f64 / states.len() as f64;
                    ctx.report(&spec, n, k, errs, probe.estimate(&spec), inner_rate, params.seed)
                })
                .collect())
        }
    }
}

/// Largest-volume report whose certificate meets `epsilon_target`.
pub fn largest_certified(reports: &[Result<VerificationReport>], epsilon_target: f64) -> Option<&VerificationReport> {
    reports
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .filter(|r| r.certifies(epsilon_target))
        .max_by(|a, b| a.volume.fraction.total_cmp(&b.volume.fraction))
}

/// Levels whose sets cover the given fractions of the domain box, estimated
/// from `probe`.
pub fn levels_for_fractions(probe: &VolumeProbe, mode: ProblemMode, fractions: &[f64]) -> Vec<f64> {
    let mut v = probe.values().to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len();
    fractions
        .iter()
        .map(|&f| {
            let f = f.clamp(0.0, 1.0);
            if mode.is_avoid() {
                let i = crate::math::floor((1.0 - f) * m as f64) as usize;
                v[i.min(m - 1)]
            } else {
                let i = crate::math::ceil(f * m as f64) as usize;
                v[i.saturating_sub(1).min(m - 1)]
            }
        })
        .collect()
}

/// Outcome of trying one level in [`certified_volume`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelAttempt {
    pub level: f64,
    pub volume: VolumeEstimate,
    /// Rollouts performed before finishing or stopping early.
    pub n_processed: u64,
    pub n_outliers: u64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifiedVolume {
    /// Report for the largest certified level, if any.
    pub best: Option<VerificationReport>,
    pub attempts: Vec<LevelAttempt>,
}

impl CertifiedVolume {
    pub fn volume(&self) -> f64 {
        self.best.as_ref().map_or(0.0, |r| r.volume.fraction)
    }
}

/// Rollouts between early-stopping checks.
const CERTIFY_BLOCK: u64 = 4096;

/// Largest set on the grid of box fractions that certifies `epsilon_target`
/// with `params.n_samples` fresh samples per level.
///
/// Levels are tried from the largest fraction down and the first certified
/// one is returned. A level is abandoned as soon as its outlier count
/// exceeds what `N` samples can tolerate, which cannot change the outcome.
pub fn certified_volume(
    system: &dyn System,
    cand: Candidate<'_>,
    epsilon_target: f64,
    fractions: &[f64],
    params: &VerifyParams,
) -> Result<CertifiedVolume> {
    let ctx = context(system, cand, params)?;
    let mode = system.spec().mode;
    let probe = VolumeProbe::new(cand.value, system.spec(), params.volume_samples, params.seed)?;
    let mut grid = fractions.to_vec();
    grid.sort_by(|a, b| b.total_cmp(a));
    let levels = levels_for_fractions(&probe, mode, &grid);
    let n = params.n_samples;
    let budget = bounds::max_outliers(n, epsilon_target, params.beta)?;
    let mut attempts = Vec::new();
    for level in levels {
        let spec = LevelSetSpec::for_mode(mode, level);
        let volume = probe.estimate(&spec);
        let Some(k_max) = budget else {
            attempts.push(LevelAttempt { level, volume, n_processed: 0, n_outliers: 0, certified: false });
            continue;
        };
        // sample block by block so an abandoned level costs no further draws
        let plan = params.plan(n, params.seed);
        let (mut counted, mut k, mut errs, mut processed, mut draws) = (0u64, 0u64, 0u64, 0u64, 0u64);
        let mut starved = false;
        let mut start = 0u64;
        while start < n {
            let end = (start + CERTIFY_BLOCK).min(n);
            let batch = match sample_safe_range(&plan, start..end, cand.value, &spec, system.spec()) {
                Ok(b) => b,
                Err(Error::AcceptanceStarvation { .. }) => {
                    starved = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            draws += batch.attempts;
            let out = batch_rollout(system, cand.policy, &batch.states, &ctx.cfg, params.error_policy, false);
            counted += out.n_counted;
            k += out.n_violations;
            errs += out.n_errors;
            processed += batch.states.len() as u64;
            start = end;
            if k > k_max {
                break;
            }
        }
        if starved {
            attempts.push(LevelAttempt { level, volume, n_processed: 0, n_outliers: 0, certified: false });
            continue;
        }
        if k > k_max {
            attempts.push(LevelAttempt { level, volume, n_processed: processed, n_outliers: k, certified: false });
            continue;
        }
        let rate = if draws == 0 { 1.0 } else { processed as f64 / draws as f64 };
        let report = ctx.report(&spec, counted, k, errs, volume, rate, params.seed)?;
        let certified = report.certifies(epsilon_target);
        attempts.push(LevelAttempt { level, volume, n_processed: processed, n_outliers: k, certified });
        if certified {
            return Ok(CertifiedVolume { best: Some(report), attempts });
        }
    }
    Ok(CertifiedVolume { best: None, attempts })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeOutcome {
    pub report: VerificationReport,
    /// Levels tried, in order; the last one is certified with `k = 0`.
    pub levels: Vec<f64>,
}

/// Outlier-free baseline: with `N = min_samples(0, ε, β)`, resample at the
/// current level and, while any outlier appears, move the level past the
/// worst outlier's value by `margin` and try again.
pub fn iterative_verify(
    system: &dyn System,
    cand: Candidate<'_>,
    epsilon_target: f64,
    initial_level: f64,
    max_iterations: usize,
    params: &VerifyParams,
) -> Result<IterativeOutcome> {
    const MARGIN: f64 = 1e-6;
    let n = plan_budget(epsilon_target, params.beta, 0)?;
    let params = VerifyParams { n_samples: n, ..params.clone() };
    let ctx = context(system, cand, &params)?;
    let mode = system.spec().mode;
    let probe = VolumeProbe::new(cand.value, system.spec(), params.volume_samples, params.seed)?;
    let mut level = initial_level;
    let mut levels = Vec::new();
    for round in 0..max_iterations {
        levels.push(level);
        let spec = LevelSetSpec::for_mode(mode, level);
        let sample_seed = seed::derive_indexed(params.seed, "iterative", round as u64);
        let (states, out, rate) = ctx.sample_and_roll(&spec, n, sample_seed)?;
        if out.n_violations == 0 {
            let report = ctx.report(&spec, out.n_counted, 0, out.n_errors, probe.estimate(&spec), rate, sample_seed)?;
            return Ok(IterativeOutcome { report, levels });
        }
        let unsafe_values = states.iter().enumerate().filter(|(i, _)| out.is_violation(*i)).map(|(_, x)| cand.value.eval(x));
        level = if mode.is_avoid() {
            unsafe_values.fold(f64::NEG_INFINITY, f64::max) + MARGIN
        } else {
            unsafe_values.fold(f64::INFINITY, f64::min) - MARGIN
        };
    }
    Err(Error::IterationCap { cap: max_iterations })
}

/// Samples needed to certify `epsilon_target` at confidence `1 - beta` with
/// up to `k_budget` outliers.
pub fn plan_budget(epsilon_target: f64, beta: f64, k_budget: u64) -> Result<u64> {
    Ok(bounds::min_samples(k_budget, epsilon_target, beta)?)
}
