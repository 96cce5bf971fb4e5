use alloc::string::String;
use alloc::vec::Vec;

use super::{Dynamics, ProblemMode, SystemSpec, TargetSpec};
use crate::error::Result;

/// A system that never moves, so the rollout cost is `l(x0)`. Useful as a
/// ground truth where the unsafe set is known exactly.
pub struct StaticSystem<F> {
    spec: SystemSpec,
    target: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> StaticSystem<F> {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, mode: ProblemMode, target: F) -> Result<Self> {
        let spec = SystemSpec {
            name: String::from("static"),
            state_dim: lower.len(),
            control_dim: 0,
            control_lower: Vec::new(),
            control_upper: Vec::new(),
            domain_lower: lower,
            domain_upper: upper,
            horizon: 1.0,
            mode,
            angle_dims: Vec::new(),
        };
        spec.validate()?;
        Ok(Self { spec, target })
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Dynamics for StaticSystem<F> {
    fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    fn flow(&self, _x: &[f64], _u: &[f64], dx: &mut [f64]) {
        dx.iter_mut().for_each(|d| *d = 0.0);
    }

    fn control_coefficients(&self, _x: &[f64], _p: &[f64], _c: &mut [f64]) -> Result<()> {
        Ok(())
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> TargetSpec for StaticSystem<F> {
    fn target(&self, x: &[f64]) -> f64 {
        (self.target)(x)
    }
}
