//! Outlier-adjusted refinement: refit a value network to rollout costs of a
//! frozen policy, penalizing optimistic errors far more than conservative
//! ones, and pick the checkpoint with the lowest worst-case unsafe value.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ProblemMode, System};
use crate::error::{Error, Result};
use crate::rollout::{batch_rollout, ErrorPolicy, InducedPolicy, Policy, RolloutConfig};
use crate::sampler::draw_base;
use crate::seed;
use crate::value_fn::{AnalyticValue, SineMlp, ValueFunction};
use crate::verifier::{certified_volume, Candidate, CertifiedVolume, VerifyParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

/// States with their rollout costs under one frozen policy.
#[derive(Debug, Clone, PartialEq)]
pub struct CostDataset {
    pub inputs: Vec<Vec<f64>>,
    pub labels: Vec<f64>,
    pub splits: Vec<Split>,
    pub mode: ProblemMode,
    /// Fingerprint of the policy every label was generated with.
    pub policy_fingerprint: u64,
    /// States whose rollout left the inflated domain. They stay in the set
    /// with the most unsafe finite label so training learns to exclude them.
    pub n_failed: u64,
    pub seed: u64,
    pub dt: f64,
}

impl CostDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }
}

/// Draws `n_train + n_val` states uniformly on the domain box and labels
/// each with its rollout cost under `policy`.
pub fn build_dataset(
    system: &dyn System,
    policy: &dyn Policy,
    n_train: u64,
    n_val: u64,
    seed: u64,
    dt: f64,
) -> Result<CostDataset> {
    let spec = system.spec();
    let stage = seed::derive(seed, "dataset");
    let total = n_train + n_val;
    let states: Vec<Vec<f64>> = (0..total)
        .map(|i| {
            let mut x = vec![0.0; spec.state_dim];
            draw_base(&mut seed::stream(stage, i), spec, &mut x);
            x
        })
        .collect();
    let out = batch_rollout(system, policy, &states, &RolloutConfig::new(dt), ErrorPolicy::Diagnostic, false);
    let mut data = CostDataset {
        inputs: Vec::with_capacity(states.len()),
        labels: Vec::with_capacity(states.len()),
        splits: Vec::with_capacity(states.len()),
        mode: spec.mode,
        policy_fingerprint: policy.fingerprint(),
        n_failed: 0,
        seed,
        dt,
    };
    let finite = out.results.iter().filter_map(|r| r.as_ref().ok().map(|r| r.cost));
    let worst = if spec.mode.is_avoid() { finite.fold(f64::INFINITY, f64::min) } else { finite.fold(f64::NEG_INFINITY, f64::max) };
    for (i, (x, r)) in states.into_iter().zip(out.results).enumerate() {
        let label = match r {
            Ok(r) => r.cost,
            Err(e @ Error::NonFiniteState { .. }) if !worst.is_finite() => return Err(e),
            Err(Error::NonFiniteState { .. }) => {
                data.n_failed += 1;
                worst
            }
            Err(e) => return Err(e),
        };
        data.inputs.push(x);
        data.labels.push(label);
        data.splits.push(if (i as u64) < n_train { Split::Train } else { Split::Validation });
    }
    Ok(data)
}

/// An error is conservative when it shrinks the candidate set: predicting
/// below the cost in avoid mode, above it otherwise.
pub fn is_conservative(mode: ProblemMode, pred: f64, label: f64) -> bool {
    if mode.is_avoid() {
        pred < label
    } else {
        pred > label
    }
}

/// `(1/n) Σ wᵢ (predᵢ - labelᵢ)²` with `wᵢ = w` on conservative errors and 1
/// otherwise, in the avoid convention.
pub fn weighted_mse(pred: &[f64], labels: &[f64], w: f64) -> Result<f64> {
    weighted_mse_for(ProblemMode::Avoid, pred, labels, w)
}

pub fn weighted_mse_for(mode: ProblemMode, pred: &[f64], labels: &[f64], w: f64) -> Result<f64> {
    if pred.len() != labels.len() {
        return Err(Error::LengthMismatch { left: pred.len(), right: labels.len() });
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let s: f64 = pred
        .iter()
        .zip(labels)
        .map(|(p, y)| {
            let e = p - y;
            let wi = if is_conservative(mode, *p, *y) { w } else { 1.0 };
            wi * e * e
        })
        .sum();
    Ok(s / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetric {
    /// Worst candidate value over empirically unsafe validation states,
    /// oriented so that lower is better. `-∞` when there are none.
    pub value: f64,
    pub has_unsafe: bool,
}

/// Avoid mode: `max Ṽ(x)` over validation states with cost `≤ 0`. Reach
/// modes: `-min Ṽ(x)` over validation states with cost `> 0`.
pub fn validation_metric(vf: &dyn ValueFunction, data: &CostDataset) -> ValidationMetric {
    let avoid = data.mode.is_avoid();
    let mut worst = f64::NEG_INFINITY;
    let mut has_unsafe = false;
    for i in data.indices(Split::Validation) {
        let y = data.labels[i];
        let bad = if avoid { y <= 0.0 } else { y > 0.0 };
        if bad {
            has_unsafe = true;
            let v = vf.eval(&data.inputs[i]);
            worst = worst.max(if avoid { v } else { -v });
        }
    }
    ValidationMetric { value: worst, has_unsafe }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrainConfig {
    /// Weight on conservative errors.
    pub w: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs between checkpoints; the initial network is checkpoint 0.
    pub checkpoint_interval: usize,
    pub seed: u64,
    /// Train against labels divided by their root mean square and fold the
    /// scale back into the output layer afterwards.
    pub normalize_labels: bool,
}

impl Default for RetrainConfig {
    fn default() -> Self {
        Self {
            w: 1e-3,
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 256,
            checkpoint_interval: 1,
            seed: 0,
            normalize_labels: true,
        }
    }
}

impl RetrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w > 0.0 && self.w <= 1.0) {
            return Err(Error::InvalidParameter("w must lie in (0, 1]"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidParameter("learning_rate must be positive"));
        }
        if self.batch_size == 0 || self.checkpoint_interval == 0 {
            return Err(Error::InvalidParameter("batch_size and checkpoint_interval must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub metric: ValidationMetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainOutcome {
    /// The selected checkpoint.
    pub net: SineMlp,
    pub history: Vec<Checkpoint>,
    /// Network at each checkpoint, parallel to `history`.
    pub snapshots: Vec<SineMlp>,
    pub selected: usize,
    /// False when the training loss rose between two checkpoints.
    pub monotone: bool,
    pub label_scale: f64,
}

/// Index minimizing `(metric, validation loss)` lexicographically; the
/// earliest wins ties.
pub fn select_checkpoint(history: &[Checkpoint]) -> usize {
    let mut best = 0;
    for (i, c) in history.iter().enumerate().skip(1) {
        let b = &history[best];
        let better = c.metric.value < b.metric.value
            || (c.metric.value == b.metric.value && c.validation_loss < b.validation_loss);
        if better {
            best = i;
        }
    }
    best
}

fn split_loss(net: &SineMlp, data: &CostDataset, idx: &[usize], scale: f64, w: f64) -> f64 {
    let mut ws = net.workspace();
    let pred: Vec<f64> = idx.iter().map(|&i| net.forward(&data.inputs[i], &mut ws) * scale).collect();
    let labels: Vec<f64> = idx.iter().map(|&i| data.labels[i]).collect();
    weighted_mse_for(data.mode, &pred, &labels, w).unwrap_or(f64::NAN)
}

/// Mini-batch gradient descent on the weighted MSE over the training split.
pub fn retrain(net: &SineMlp, data: &CostDataset, cfg: &RetrainConfig) -> Result<RetrainOutcome> {
    cfg.validate()?;
    if net.input_dim() != data.inputs.first().map_or(net.input_dim(), Vec::len) {
        return Err(Error::DimensionMismatch {
            expected: net.input_dim(),
            got: data.inputs.first().map_or(0, Vec::len),
        });
    }
    let train = data.indices(Split::Train);
    if train.is_empty() {
        return Err(Error::InvalidParameter("training split is empty"));
    }
    let val = data.indices(Split::Validation);

    let scale = if cfg.normalize_labels {
        let ms = train.iter().map(|&i| data.labels[i] * data.labels[i]).sum::<f64>() / train.len() as f64;
        let rms = crate::math::sqrt(ms);
        if rms > 0.0 && rms.is_finite() {
            rms
        } else {
            1.0
        }
    } else {
        1.0
    };
    // the working network predicts labels / scale
    let mut work = net.clone();
    work.affine_output(1.0 / scale, 0.0);
    let restore = |w: &SineMlp| {
        let mut n = w.clone();
        n.affine_output(scale, 0.0);
        n
    };

    let mut history = Vec::new();
    let mut snapshots = Vec::new();
    let mut monotone = true;
    let mut checkpoint = |epoch: usize, work: &SineMlp, history: &mut Vec<Checkpoint>| -> Result<()> {
        let train_loss = split_loss(work, data, &train, scale, cfg.w);
        let validation_loss = if val.is_empty() { f64::NAN } else { split_loss(work, data, &val, scale, cfg.w) };
        if !train_loss.is_finite() || (!val.is_empty() && !validation_loss.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        if let Some(prev) = history.last() {
            if train_loss > prev.train_loss {
                monotone = false;
                log::warn!("training loss rose from {} to {} at epoch {}", prev.train_loss, train_loss, epoch);
            }
        }
        let full = restore(work);
        history.push(Checkpoint { epoch, train_loss, validation_loss, metric: validation_metric(&full, data) });
        snapshots.push(full);
        Ok(())
    };
    checkpoint(0, &work, &mut history)?;

    let mut order = train.clone();
    let mut grad = vec![0.0; work.n_params()];
    let mut ws = work.workspace();
    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(cfg.seed, "shuffle", epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let inv = 1.0 / batch.len() as f64;
            for &i in batch {
                let y = data.labels[i] / scale;
                let p = work.forward(&data.inputs[i], &mut ws);
                let wi = if is_conservative(data.mode, p, y) { cfg.w } else { 1.0 };
                work.accumulate_param_gradient(&mut ws, 2.0 * wi * (p - y) * inv, &mut grad);
            }
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch });
            }
            work.add_scaled(&grad, -cfg.learning_rate);
        }
        if epoch % cfg.checkpoint_interval == 0 || epoch == cfg.epochs {
            checkpoint(epoch, &work, &mut history)?;
        }
    }

    // the starting network is logged but never selected once training ran
    let selected = if history.len() > 1 { 1 + select_checkpoint(&history[1..]) } else { 0 };
    Ok(RetrainOutcome { net: snapshots[selected].clone(), history, snapshots, selected, monotone, label_scale: scale })
}

/// Fits a first learned candidate when no trained network is available:
/// label states with costs under the policy induced by `Ṽ = l`, then fit
/// `init` to them.
pub fn bootstrap_candidate(
    system: &dyn System,
    init: &SineMlp,
    n_train: u64,
    n_val: u64,
    dt: f64,
    cfg: &RetrainConfig,
) -> Result<(RetrainOutcome, CostDataset)> {
    let analytic = AnalyticValue::new(system);
    let policy = InducedPolicy::new(&analytic, system)?;
    let data = build_dataset(system, &policy, n_train, n_val, seed::derive(cfg.seed, "bootstrap"), dt)?;
    let out = retrain(init, &data, cfg)?;
    Ok((out, data))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub n_train: u64,
    pub n_val: u64,
    pub dataset_seed: u64,
    pub retrain: RetrainConfig,
    pub epsilon_target: f64,
    /// Box fractions whose level sets are tried for certification.
    pub volume_grid: Vec<f64>,
    pub verify: VerifyParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_train: 100_000,
            n_val: 20_000,
            dataset_seed: 0,
            retrain: RetrainConfig::default(),
            epsilon_target: 1e-4,
            volume_grid: (1..=19).map(|i| i as f64 * 0.05).collect(),
            verify: VerifyParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub refined: RetrainOutcome,
    pub dataset: CostDataset,
    pub before: CertifiedVolume,
    pub after: CertifiedVolume,
}

/// Freezes the policy induced by `original`, fits a refined value model to
/// its rollout costs, and certifies both models under that same policy at
/// `cfg.epsilon_target`.
pub fn outlier_adjusted_pipeline(system: &dyn System, original: &SineMlp, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let policy = InducedPolicy::new(original, system)?;
    let dataset = build_dataset(system, &policy, cfg.n_train, cfg.n_val, cfg.dataset_seed, cfg.verify.dt)?;
    let refined = retrain(original, &dataset, &cfg.retrain)?;
    let before = certified_volume(
        system,
        Candidate { value: original, policy: &policy },
        cfg.epsilon_target,
        &cfg.volume_grid,
        &cfg.verify,
    )?;
    let after = certified_volume(
        system,
        Candidate { value: &refined.net, policy: &policy },
        cfg.epsilon_target,
        &cfg.volume_grid,
        &cfg.verify,
    )?;
    Ok(PipelineOutcome { refined, dataset, before, after })
}
