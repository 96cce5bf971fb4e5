//! Closed-loop trajectories under the value-gradient bang-bang policy and the
//! empirical cost functionals that decide whether a start state is safe.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ProblemMode, System};
use crate::error::{Error, Result};
use crate::seed::{fnv1a, FNV_OFFSET};
use crate::value_fn::ValueFunction;

/// State feedback `u = π(x)`.
pub trait Policy: Sync {
    fn control(&self, x: &[f64], u: &mut [f64]) -> Result<()>;

    /// Identifies the policy in dataset and report metadata.
    fn fingerprint(&self) -> u64;
}

/// Bang-bang controller extremizing `⟨∇Ṽ(x), f(x, u)⟩` over the control box.
///
/// In avoid mode each control takes its upper bound when its coefficient is
/// non-negative; in reach and reach-avoid modes when it is non-positive. A
/// zero coefficient therefore always selects the upper bound.
pub struct InducedPolicy<'a> {
    vf: &'a dyn ValueFunction,
    system: &'a dyn System,
}

impl<'a> InducedPolicy<'a> {
    pub fn new(vf: &'a dyn ValueFunction, system: &'a dyn System) -> Result<Self> {
        let n = system.spec().state_dim;
        if vf.input_dim() != n {
            return Err(Error::DimensionMismatch { expected: n, got: vf.input_dim() });
        }
        Ok(Self { vf, system })
    }
}

fn scratch<'a, const N: usize>(stack: &'a mut [f64; N], heap: &'a mut Vec<f64>, n: usize) -> &'a mut [f64] {
    if n <= N {
        &mut stack[..n]
    } else {
        heap.resize(n, 0.0);
        heap
    }
}

impl Policy for InducedPolicy<'_> {
    fn control(&self, x: &[f64], u: &mut [f64]) -> Result<()> {
        let spec = self.system.spec();
        // stack buffers cover every built-in system
        let (mut gs, mut cs) = ([0.0; 16], [0.0; 8]);
        let mut gh = Vec::new();
        let mut ch = Vec::new();
        let grad = scratch(&mut gs, &mut gh, spec.state_dim);
        let c = scratch(&mut cs, &mut ch, spec.control_dim);
        self.vf.eval_gradient(x, grad);
        self.system.control_coefficients(x, grad, c)?;
        let avoid = spec.mode.is_avoid();
        for j in 0..spec.control_dim {
            let upper = if avoid { c[j] >= 0.0 } else { c[j] <= 0.0 };
            u[j] = if upper { spec.control_upper[j] } else { spec.control_lower[j] };
        }
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = FNV_OFFSET;
        fnv1a(&mut h, b"induced:");
        fnv1a(&mut h, &self.vf.fingerprint().to_le_bytes());
        fnv1a(&mut h, self.system.spec().name.as_bytes());
        h
    }
}

/// Open-loop constant control.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantPolicy {
    pub u: Vec<f64>,
}

impl Policy for ConstantPolicy {
    fn control(&self, _x: &[f64], u: &mut [f64]) -> Result<()> {
        u.copy_from_slice(&self.u);
        Ok(())
    }

    fn fingerprint(&self) -> u64 {
        let mut h = FNV_OFFSET;
        fnv1a(&mut h, b"constant:");
        for v in &self.u {
            fnv1a(&mut h, &v.to_bits().to_le_bytes());
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    EmpiricallySafe,
    Violation,
}

impl Verdict {
    pub fn from_cost(mode: ProblemMode, cost: f64) -> Self {
        let bad = if mode.is_avoid() { cost <= 0.0 } else { cost > 0.0 };
        if bad {
            Verdict::Violation
        } else {
            Verdict::EmpiricallySafe
        }
    }
}

/// `controls[i]` is held over `[times[i], times[i+1])`; the last entry is
/// the policy output at the final state and is not applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutResult {
    pub cost: f64,
    pub verdict: Verdict,
    pub trajectory: Option<Trajectory>,
}

/// How rollouts that blow up enter the outlier count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorPolicy {
    /// Errored states count as sampled violations.
    #[default]
    Conservative,
    /// Errored states are dropped from both `N` and `k` and reported.
    Diagnostic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub dt: f64,
    /// Rollouts abort once the state leaves the domain box scaled by this.
    pub blowup_factor: f64,
}

impl RolloutConfig {
    pub fn new(dt: f64) -> Self {
        Self { dt, blowup_factor: 10.0 }
    }
}

/// Number of fixed steps covering `[0, horizon]`.
pub fn step_count(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter("dt must be positive"));
    }
    let n = crate::math::round(horizon / dt);
    if n < 1.0 || (n * dt - horizon).abs() > 1e-9 * horizon.max(1.0) {
        return Err(Error::InvalidParameter("dt must divide the horizon"));
    }
    Ok(n as usize)
}

struct Rk4Scratch {
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize) -> Self {
        Self { k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]], tmp: vec![0.0; n] }
    }
}

fn rk4_step(system: &dyn System, x: &mut [f64], u: &[f64], dt: f64, s: &mut Rk4Scratch) {
    let [k1, k2, k3, k4] = &mut s.k;
    let tmp = &mut s.tmp;
    system.flow(x, u, k1);
    for i in 0..x.len() {
        tmp[i] = x[i] + 0.5 * dt * k1[i];
    }
    system.flow(tmp, u, k2);
    for i in 0..x.len() {
        tmp[i] = x[i] + 0.5 * dt * k2[i];
    }
    system.flow(tmp, u, k3);
    for i in 0..x.len() {
        tmp[i] = x[i] + dt * k3[i];
    }
    system.flow(tmp, u, k4);
    for i in 0..x.len() {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

/// Running cost accumulator for one trajectory.
struct CostTracker {
    mode: ProblemMode,
    cost: f64,
    worst_nogo: f64,
}

impl CostTracker {
    fn new(mode: ProblemMode) -> Self {
        Self { mode, cost: f64::INFINITY, worst_nogo: f64::NEG_INFINITY }
    }

    fn visit(&mut self, system: &dyn System, x: &[f64]) {
        let l = system.target(x);
        let v = match (self.mode, system.avoid(x)) {
            (ProblemMode::ReachAvoid, Some(h)) => {
                self.worst_nogo = self.worst_nogo.max(-h);
                l.max(self.worst_nogo)
            }
            _ => l,
        };
        self.cost = self.cost.min(v);
    }
}

/// Integrates from `x0` over the system horizon with classical RK4, holding
/// the policy output constant over each step, and scores the trajectory.
///
/// The cost is the minimum of `l` over the stored states; in reach-avoid mode
/// it is `min_τ max(l(ξ(τ)), max_{s≤τ} -h(ξ(s)))`.
pub fn rollout(
    system: &dyn System,
    policy: &dyn Policy,
    x0: &[f64],
    cfg: &RolloutConfig,
    record: bool,
) -> Result<RolloutResult> {
    let spec = system.spec();
    spec.check_state(x0)?;
    let steps = step_count(spec.horizon, cfg.dt)?;
    let mut x = x0.to_vec();
    let mut u = vec![0.0; spec.control_dim];
    let mut scratch = Rk4Scratch::new(spec.state_dim);
    let mut tracker = CostTracker::new(spec.mode);
    let mut traj = record.then(|| Trajectory {
        times: Vec::with_capacity(steps + 1),
        states: Vec::with_capacity(steps + 1),
        controls: Vec::with_capacity(steps + 1),
    });

    tracker.visit(system, &x);
    for i in 0..steps {
        policy.control(&x, &mut u)?;
        if let Some(t) = traj.as_mut() {
            t.times.push(i as f64 * cfg.dt);
            t.states.push(x.clone());
            t.controls.push(u.clone());
        }
        rk4_step(system, &mut x, &u, cfg.dt, &mut scratch);
        spec.wrap_angles(&mut x);
        if !spec.in_inflated_domain(&x, cfg.blowup_factor) {
            return Err(Error::NonFiniteState { step: i + 1 });
        }
        tracker.visit(system, &x);
    }
    if let Some(t) = traj.as_mut() {
        policy.control(&x, &mut u)?;
        t.times.push(spec.horizon);
        t.states.push(x.clone());
        t.controls.push(u.clone());
    }
    Ok(RolloutResult { cost: tracker.cost, verdict: Verdict::from_cost(spec.mode, tracker.cost), trajectory: traj })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutcome {
    /// Per-state outcome in input order.
    pub results: Vec<Result<RolloutResult>>,
    /// States entering the certificate, `N`.
    pub n_counted: u64,
    /// Violations among them, `k`.
    pub n_violations: u64,
    pub n_errors: u64,
}

impl BatchOutcome {
    fn tally(results: Vec<Result<RolloutResult>>, errors: ErrorPolicy) -> Self {
        let mut ok = 0u64;
        let mut bad = 0u64;
        let mut err = 0u64;
        for r in &results {
            match r {
                Ok(r) => {
                    ok += 1;
                    bad += u64::from(r.verdict == Verdict::Violation);
                }
                Err(_) => err += 1,
            }
        }
        let (n_counted, n_violations) = match errors {
            ErrorPolicy::Conservative => (ok + err, bad + err),
            ErrorPolicy::Diagnostic => (ok, bad),
        };
        Self { results, n_counted, n_violations, n_errors: err }
    }

    /// Whether state `i` counts as an outlier under `errors`.
    pub fn is_violation(&self, i: usize) -> bool {
        match &self.results[i] {
            Ok(r) => r.verdict == Verdict::Violation,
            Err(_) => true,
        }
    }
}

/// Rolls out every state; results are identical to sequential solo rollouts
/// whether or not the `parallel` feature is enabled.
pub fn batch_rollout(
    system: &dyn System,
    policy: &dyn Policy,
    states: &[Vec<f64>],
    cfg: &RolloutConfig,
    errors: ErrorPolicy,
    record: bool,
) -> BatchOutcome {
    let one = |x: &Vec<f64>| rollout(system, policy, x, cfg, record);
    #[cfg(feature = "parallel")]
    let results = {
        use rayon::prelude::*;
        states.par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results = states.iter().map(one).collect();
    BatchOutcome::tally(results, errors)
}
