use alloc::string::String;
use alloc::vec;

use serde::{Deserialize, Serialize};

use super::{Dynamics, ProblemMode, SystemSpec, TargetSpec};
use crate::error::Result;
use crate::math;

/// Constants of the three-vehicle Dubins collision-avoidance problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DubinsParams {
    pub speed: f64,
    pub turn_rate_bound: f64,
    pub collision_radius: f64,
    /// Positions range over `[-position_bound, position_bound]²`.
    pub position_bound: f64,
    pub horizon: f64,
}

impl Default for DubinsParams {
    fn default() -> Self {
        Self { speed: 0.6, turn_rate_bound: 1.1, collision_radius: 0.25, position_bound: 1.0, horizon: 1.0 }
    }
}

/// Three Dubins cars at constant speed, each steering its heading rate.
///
/// State layout is `[px1, py1, θ1, px2, py2, θ2, px3, py3, θ3]`, controls
/// are the three heading rates.
#[derive(Debug, Clone)]
pub struct Dubins3 {
    spec: SystemSpec,
    pub params: DubinsParams,
}

impl Dubins3 {
    pub fn new(params: DubinsParams) -> Result<Self> {
        let p = params.position_bound;
        let pi = core::f64::consts::PI;
        let spec = SystemSpec {
            name: String::from("dubins3"),
            state_dim: 9,
            control_dim: 3,
            control_lower: vec![-params.turn_rate_bound; 3],
            control_upper: vec![params.turn_rate_bound; 3],
            domain_lower: vec![-p, -p, -pi, -p, -p, -pi, -p, -p, -pi],
            domain_upper: vec![p, p, pi, p, p, pi, p, p, pi],
            horizon: params.horizon,
            mode: ProblemMode::Avoid,
            angle_dims: vec![2, 5, 8],
        };
        spec.validate()?;
        Ok(Self { spec, params })
    }

    fn pair_distance(x: &[f64], a: usize, b: usize) -> f64 {
        math::hypot(x[3 * a] - x[3 * b], x[3 * a + 1] - x[3 * b + 1])
    }

    fn closest_pair(x: &[f64]) -> (usize, usize, f64) {
        let mut best = (0, 1, Self::pair_distance(x, 0, 1));
        for (a, b) in [(0, 2), (1, 2)] {
            let d = Self::pair_distance(x, a, b);
            if d < best.2 {
                best = (a, b, d);
            }
        }
        best
    }
}

impl Dynamics for Dubins3 {
    fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    fn flow(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let v = self.params.speed;
        for i in 0..3 {
            let (s, c) = math::sin_cos(x[3 * i + 2]);
            dx[3 * i] = v * c;
            dx[3 * i + 1] = v * s;
            dx[3 * i + 2] = u[i];
        }
    }

    fn control_coefficients(&self, _x: &[f64], p: &[f64], c: &mut [f64]) -> Result<()> {
        for i in 0..3 {
            c[i] = p[3 * i + 2];
        }
        Ok(())
    }
}

impl TargetSpec for Dubins3 {
    fn target(&self, x: &[f64]) -> f64 {
        Self::closest_pair(x).2 - self.params.collision_radius
    }

    fn target_gradient(&self, x: &[f64], grad: &mut [f64]) {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (a, b, d) = Self::closest_pair(x);
        if d > 0.0 {
            let gx = (x[3 * a] - x[3 * b]) / d;
            let gy = (x[3 * a + 1] - x[3 * b + 1]) / d;
            grad[3 * a] = gx;
            grad[3 * a + 1] = gy;
            grad[3 * b] = -gx;
            grad[3 * b + 1] = -gy;
        }
    }
}
