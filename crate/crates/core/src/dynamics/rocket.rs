use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{Dynamics, ProblemMode, SystemSpec, TargetSpec};
use crate::error::{Error, Result};
use crate::math;

/// No-go zones for the reach-avoid landing: a rectangle beside the pad and
/// everything below pad height outside the pad footprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoGoParams {
    pub rect_x_min: f64,
    pub rect_x_max: f64,
    pub rect_y_min: f64,
    pub rect_y_max: f64,
    /// Altitude below which everything outside the pad footprint is no-go.
    pub floor_height: f64,
}

impl Default for NoGoParams {
    fn default() -> Self {
        Self { rect_x_min: -30.0, rect_x_max: -20.0, rect_y_min: 0.0, rect_y_max: 100.0, floor_height: 20.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RocketParams {
    pub gravity: f64,
    pub torque_bound: f64,
    /// `ω̇ = torque_gain · τ1`.
    pub torque_gain: f64,
    pub pad_half_width: f64,
    pub pad_height: f64,
    pub horizon: f64,
    pub domain_lower: [f64; 6],
    pub domain_upper: [f64; 6],
    pub nogo: Option<NoGoParams>,
}

impl Default for RocketParams {
    fn default() -> Self {
        let pi = core::f64::consts::PI;
        Self {
            gravity: 9.81,
            torque_bound: 250.0,
            torque_gain: 0.3,
            pad_half_width: 20.0,
            pad_height: 20.0,
            horizon: 3.0,
            domain_lower: [-150.0, 0.0, -pi, -10.0, -200.0, -200.0],
            domain_upper: [150.0, 150.0, pi, 10.0, 200.0, 200.0],
            nogo: None,
        }
    }
}

impl RocketParams {
    pub fn with_nogo() -> Self {
        Self { nogo: Some(NoGoParams::default()), ..Self::default() }
    }
}

/// Planar rocket landing. State layout `[px, py, θ, ω, vx, vy]`, controls
/// `[τ1, τ2]` in the body frame.
#[derive(Debug, Clone)]
pub struct Rocket {
    spec: SystemSpec,
    pub params: RocketParams,
}

impl Rocket {
    pub fn new(params: RocketParams) -> Result<Self> {
        if let Some(z) = &params.nogo {
            if !(z.rect_x_min < z.rect_x_max && z.rect_y_min < z.rect_y_max) {
                return Err(Error::InvalidSpec("no-go rectangle is empty"));
            }
        }
        let t = params.torque_bound;
        let spec = SystemSpec {
            name: String::from(if params.nogo.is_some() { "rocket_nogo" } else { "rocket" }),
            state_dim: 6,
            control_dim: 2,
            control_lower: vec![-t, -t],
            control_upper: vec![t, t],
            domain_lower: Vec::from(params.domain_lower),
            domain_upper: Vec::from(params.domain_upper),
            horizon: params.horizon,
            mode: if params.nogo.is_some() { ProblemMode::ReachAvoid } else { ProblemMode::Reach },
            angle_dims: vec![2],
        };
        spec.validate()?;
        Ok(Self { spec, params })
    }
}

impl Dynamics for Rocket {
    fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    fn flow(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let (s, c) = math::sin_cos(x[2]);
        dx[0] = x[4];
        dx[1] = x[5];
        dx[2] = x[3];
        dx[3] = self.params.torque_gain * u[0];
        dx[4] = u[0] * c - u[1] * s;
        dx[5] = u[0] * s + u[1] * c - self.params.gravity;
    }

    fn control_coefficients(&self, x: &[f64], p: &[f64], c: &mut [f64]) -> Result<()> {
        let (s, co) = math::sin_cos(x[2]);
        c[0] = self.params.torque_gain * p[3] + p[4] * co + p[5] * s;
        c[1] = -p[4] * s + p[5] * co;
        Ok(())
    }
}

impl TargetSpec for Rocket {
    fn target(&self, x: &[f64]) -> f64 {
        (x[0].abs() - self.params.pad_half_width).max(x[1] - self.params.pad_height)
    }

    fn target_gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        if x[0].abs() - self.params.pad_half_width >= x[1] - self.params.pad_height {
            grad[0] = if x[0] >= 0.0 { 1.0 } else { -1.0 };
        } else {
            grad[1] = 1.0;
        }
    }

    fn avoid(&self, x: &[f64]) -> Option<f64> {
        let z = self.params.nogo.as_ref()?;
        let (px, py) = (x[0], x[1]);
        let rect = (px - z.rect_x_max).max(z.rect_x_min - px).max(py - z.rect_y_max).max(z.rect_y_min - py);
        let floor = (py - z.floor_height).max(self.params.pad_half_width - px.abs());
        Some(rect.min(floor))
    }
}
