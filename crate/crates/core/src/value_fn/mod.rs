//! Candidate value functions `Ṽ(x, 0)` and the level sets built from them.

mod sine_mlp;

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use sine_mlp::{Layer, SineMlp, Workspace};

use crate::dynamics::{ProblemMode, System};
use crate::error::{Error, Result};
use crate::seed::{fnv1a, FNV_OFFSET};

/// A scalar field on the state space with a spatial gradient.
pub trait ValueFunction: Sync {
    /// Length of the state vector accepted by [`ValueFunction::eval`].
    fn input_dim(&self) -> usize;

    fn eval(&self, x: &[f64]) -> f64;

    /// Writes `∇Ṽ(x)` into `grad` and returns `Ṽ(x)`.
    fn eval_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Moves `x` into the box the function was built for. Returns true when
    /// anything changed.
    fn clamp_to_domain(&self, _x: &mut [f64]) -> bool {
        false
    }

    /// Stable hash of everything that determines the function's values.
    fn fingerprint(&self) -> u64;
}

fn checked_input(vf: &dyn ValueFunction, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != vf.input_dim() {
        return Err(Error::DimensionMismatch { expected: vf.input_dim(), got: x.len() });
    }
    let mut xc = x.to_vec();
    if vf.clamp_to_domain(&mut xc) {
        log::warn!("state outside the value function's domain was clamped");
    }
    Ok(xc)
}

/// `Ṽ(x, 0)` with a dimension check; states outside the domain are clamped.
pub fn value(vf: &dyn ValueFunction, x: &[f64]) -> Result<f64> {
    let xc = checked_input(vf, x)?;
    Ok(vf.eval(&xc))
}

/// `∇Ṽ(x, 0)` with the same checks as [`value`].
pub fn value_gradient(vf: &dyn ValueFunction, x: &[f64]) -> Result<Vec<f64>> {
    let xc = checked_input(vf, x)?;
    let mut g = alloc::vec![0.0; xc.len()];
    vf.eval_gradient(&xc, &mut g);
    Ok(g)
}

/// The untrained baseline `Ṽ = l`.
pub struct AnalyticValue<'a> {
    system: &'a dyn System,
}

impl<'a> AnalyticValue<'a> {
    pub fn new(system: &'a dyn System) -> Self {
        Self { system }
    }
}

impl ValueFunction for AnalyticValue<'_> {
    fn input_dim(&self) -> usize {
        self.system.spec().state_dim
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.system.target(x)
    }

    fn eval_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.system.target_gradient(x, grad);
        self.system.target(x)
    }

    fn clamp_to_domain(&self, x: &mut [f64]) -> bool {
        let s = self.system.spec();
        let mut changed = false;
        for (v, (l, u)) in x.iter_mut().zip(s.domain_lower.iter().zip(&s.domain_upper)) {
            let c = v.clamp(*l, *u);
            changed |= c != *v;
            *v = c;
        }
        changed
    }

    fn fingerprint(&self) -> u64 {
        let mut h = FNV_OFFSET;
        fnv1a(&mut h, b"analytic:");
        fnv1a(&mut h, self.system.spec().name.as_bytes());
        h
    }
}

/// `Ṽ(x) = w·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineValue {
    pub weights: Vec<f64>,
    pub offset: f64,
}

impl ValueFunction for AffineValue {
    fn input_dim(&self) -> usize {
        self.weights.len()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.offset
    }

    fn eval_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.copy_from_slice(&self.weights);
        self.eval(x)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = FNV_OFFSET;
        fnv1a(&mut h, b"affine:");
        for w in self.weights.iter().chain(core::iter::once(&self.offset)) {
            fnv1a(&mut h, &w.to_bits().to_le_bytes());
        }
        h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelDirection {
    /// `𝒮 = {Ṽ ≥ δ}`, used for avoid problems.
    SuperLevelSafe,
    /// `𝒮 = {Ṽ ≤ δ}`, used for reach and reach-avoid problems.
    SubLevelSafe,
}

/// Candidate safe set as a level set of a value function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSetSpec {
    pub level: f64,
    pub direction: LevelDirection,
}

impl LevelSetSpec {
    pub fn for_mode(mode: ProblemMode, level: f64) -> Self {
        let direction = if mode.is_avoid() { LevelDirection::SuperLevelSafe } else { LevelDirection::SubLevelSafe };
        Self { level, direction }
    }

    pub fn contains_value(&self, v: f64) -> bool {
        match self.direction {
            LevelDirection::SuperLevelSafe => v >= self.level,
            LevelDirection::SubLevelSafe => v <= self.level,
        }
    }

    pub fn contains(&self, vf: &dyn ValueFunction, x: &[f64]) -> bool {
        self.contains_value(vf.eval(x))
    }

    /// True when this set is nested inside `other` (same direction).
    pub fn is_inside(&self, other: &LevelSetSpec) -> bool {
        self.direction == other.direction
            && match self.direction {
                LevelDirection::SuperLevelSafe => self.level >= other.level,
                LevelDirection::SubLevelSafe => self.level <= other.level,
            }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Dubins3, DubinsParams, TargetSpec};
    use alloc::vec;

    #[test]
    fn analytic_baseline_is_target() {
        let d = Dubins3::new(DubinsParams::default()).unwrap();
        let v = AnalyticValue::new(&d);
        assert_eq!(value(&v, &[0.0; 9]).unwrap(), -0.25);
        assert!(matches!(value(&v, &[0.0; 3]), Err(Error::DimensionMismatch { expected: 9, got: 3 })));
        // clamped into [-1, 1]² before evaluation
        let far = [5.0, 0.0, 0.0, -5.0, 0.0, 0.0, 0.0, 5.0, 0.0];
        let clamped = [1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        assert_eq!(value(&v, &far).unwrap(), d.target(&clamped));
    }

    #[test]
    fn level_membership_is_monotone() {
        let a = LevelSetSpec::for_mode(ProblemMode::Avoid, 0.1);
        let b = LevelSetSpec::for_mode(ProblemMode::Avoid, 0.3);
        assert!(b.is_inside(&a) && !a.is_inside(&b));
        for v in [-1.0, 0.1, 0.2, 0.3, 2.0] {
            if b.contains_value(v) {
                assert!(a.contains_value(v));
            }
        }
        let r = LevelSetSpec::for_mode(ProblemMode::Reach, 0.0);
        assert!(r.contains_value(-1.0) && !r.contains_value(1.0));
    }

    #[test]
    fn affine_gradient() {
        let f = AffineValue { weights: vec![1.0, -2.0], offset: 0.5 };
        let g = value_gradient(&f, &[3.0, 4.0]).unwrap();
        assert_eq!(g, vec![1.0, -2.0]);
        assert_eq!(value(&f, &[3.0, 4.0]).unwrap(), -4.5);
    }
}
