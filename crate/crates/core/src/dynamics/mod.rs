//! System definitions: state and control boxes, vector fields and the
//! target / no-go geometry used by the cost functionals.

mod dubins;
mod rocket;
mod static_system;

use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use dubins::{Dubins3, DubinsParams};
pub use rocket::{NoGoParams, Rocket, RocketParams};
pub use static_system::StaticSystem;

use crate::error::{Error, Result};
use crate::math;

/// Which side of the target the policy is trying to be on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemMode {
    /// Stay out of the target set; sub-zero cost is a violation.
    Avoid,
    /// Reach the target set; positive cost is a violation.
    Reach,
    /// Reach the target without entering a no-go zone first.
    ReachAvoid,
}

impl ProblemMode {
    /// Candidate safe sets are super-level sets in avoid mode and sub-level
    /// sets otherwise.
    pub fn is_avoid(self) -> bool {
        matches!(self, ProblemMode::Avoid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub name: String,
    pub state_dim: usize,
    pub control_dim: usize,
    pub control_lower: Vec<f64>,
    pub control_upper: Vec<f64>,
    pub domain_lower: Vec<f64>,
    pub domain_upper: Vec<f64>,
    pub horizon: f64,
    pub mode: ProblemMode,
    /// State indices holding headings, kept in `[-π, π)`.
    #[serde(default)]
    pub angle_dims: Vec<usize>,
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.control_lower.len() != self.control_dim || self.control_upper.len() != self.control_dim {
            return Err(Error::InvalidSpec("control bounds length differs from control_dim"));
        }
        if self.domain_lower.len() != self.state_dim || self.domain_upper.len() != self.state_dim {
            return Err(Error::InvalidSpec("domain bounds length differs from state_dim"));
        }
        if self.control_lower.iter().zip(&self.control_upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidSpec("control_lower must be below control_upper"));
        }
        if self.domain_lower.iter().zip(&self.domain_upper).any(|(l, u)| !(l < u)) {
            return Err(Error::InvalidSpec("domain_lower must be below domain_upper"));
        }
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::InvalidSpec("horizon must be positive"));
        }
        if self.angle_dims.iter().any(|&i| i >= self.state_dim) {
            return Err(Error::InvalidSpec("angle dimension out of range"));
        }
        Ok(())
    }

    pub fn check_state(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.state_dim {
            return Err(Error::DimensionMismatch { expected: self.state_dim, got: x.len() });
        }
        Ok(())
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.domain_lower.iter().zip(&self.domain_upper))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    /// True when `x` lies in the domain box scaled by `factor` about its centre.
    pub fn in_inflated_domain(&self, x: &[f64], factor: f64) -> bool {
        x.iter().zip(self.domain_lower.iter().zip(&self.domain_upper)).all(|(v, (l, u))| {
            let c = 0.5 * (l + u);
            let h = 0.5 * (u - l) * factor;
            v.is_finite() && (v - c).abs() <= h
        })
    }

    pub fn wrap_angles(&self, x: &mut [f64]) {
        for &i in &self.angle_dims {
            x[i] = math::wrap_angle(x[i]);
        }
    }
}

/// Vector field `ẋ = f(x, u)` on a box-constrained control set.
pub trait Dynamics: Sync {
    fn spec(&self) -> &SystemSpec;

    fn flow(&self, x: &[f64], u: &[f64], dx: &mut [f64]);

    /// Writes `c_j` such that `⟨p, f(x, u)⟩ = drift(x, p) + Σ_j c_j u_j`.
    /// Systems whose vector field is not affine in `u` keep the default.
    fn control_coefficients(&self, _x: &[f64], _p: &[f64], _c: &mut [f64]) -> Result<()> {
        Err(Error::NotControlAffine)
    }
}

/// Target function `l(x)` (sub-zero on the target set) and optional no-go
/// function `h(x)` (sub-zero inside the zones).
pub trait TargetSpec: Sync {
    fn target(&self, x: &[f64]) -> f64;

    /// Spatial gradient of `l`. The default uses central differences scaled
    /// to each domain dimension.
    fn target_gradient(&self, x: &[f64], grad: &mut [f64]) {
        let mut xp = x.to_vec();
        for i in 0..x.len() {
            let h = 1e-6 * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let fp = self.target(&xp);
            xp[i] = x[i] - h;
            let fm = self.target(&xp);
            xp[i] = x[i];
            grad[i] = (fp - fm) / (2.0 * h);
        }
    }

    fn avoid(&self, _x: &[f64]) -> Option<f64> {
        None
    }
}

pub trait System: Dynamics + TargetSpec {}
impl<T: Dynamics + TargetSpec> System for T {}

/// Names accepted by [`by_name`].
pub const SYSTEM_NAMES: [&str; 3] = ["dubins3", "rocket", "rocket_nogo"];

/// Benchmark system with default constants.
pub fn by_name(name: &str) -> Option<Box<dyn System>> {
    match name {
        "dubins3" => Some(Box::new(Dubins3::new(DubinsParams::default()).ok()?)),
        "rocket" => Some(Box::new(Rocket::new(RocketParams::default()).ok()?)),
        "rocket_nogo" => Some(Box::new(Rocket::new(RocketParams::with_nogo()).ok()?)),
        _ => None,
    }
}
