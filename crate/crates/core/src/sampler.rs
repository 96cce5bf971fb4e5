//! Seeded i.i.d. sampling from candidate safe sets by rejection against the
//! level-set predicate, and Monte Carlo volume fractions.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use crate::value_fn::{LevelDirection, LevelSetSpec};

use crate::dynamics::SystemSpec;
use crate::error::{Error, Result};
use crate::seed;
use crate::value_fn::ValueFunction;

/// Indices are drawn in fixed-size blocks so a starving level stops early
/// without making the reported statistics depend on the thread count.
const BLOCK: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMeasure {
    /// Uniform on the domain box.
    #[default]
    UniformBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub n_samples: u64,
    pub seed: u64,
    pub max_rejections_per_sample: u64,
    pub base_measure: BaseMeasure,
}

impl SamplePlan {
    pub fn new(n_samples: u64, seed: u64) -> Self {
        Self { n_samples, seed, max_rejections_per_sample: 1_000_000, base_measure: BaseMeasure::UniformBox }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub states: Vec<Vec<f64>>,
    /// Base-measure draws made, accepted or not.
    pub attempts: u64,
}

impl SampleBatch {
    /// Accepted fraction of draws; an estimate of the set's volume fraction.
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            return 1.0;
        }
        self.states.len() as f64 / self.attempts as f64
    }
}

/// Writes one draw from the base measure into `out`.
pub fn draw_base<R: Rng>(rng: &mut R, spec: &SystemSpec, out: &mut [f64]) {
    for (o, (l, u)) in out.iter_mut().zip(spec.domain_lower.iter().zip(&spec.domain_upper)) {
        *o = rng.random_range(*l..*u);
    }
}

fn draw_accepted(
    stage: u64,
    index: u64,
    plan: &SamplePlan,
    vf: &dyn ValueFunction,
    level: &LevelSetSpec,
    spec: &SystemSpec,
) -> (Option<Vec<f64>>, u64) {
    let mut rng = seed::stream(stage, index);
    let mut x = vec![0.0; spec.state_dim];
    let mut tries = 0u64;
    loop {
        draw_base(&mut rng, spec, &mut x);
        tries += 1;
        if level.contains(vf, &x) {
            return (Some(x), tries);
        }
        if tries > plan.max_rejections_per_sample {
            return (None, tries);
        }
    }
}

fn map_indices<T: Send>(range: core::ops::Range<u64>, f: impl Fn(u64) -> T + Sync + Send) -> Vec<T> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        range.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        range.map(f).collect()
    }
}

/// Draws `plan.n_samples` states uniformly from the level set. Sample `i`
/// depends only on `(plan.seed, i)`.
pub fn sample_safe_set(
    plan: &SamplePlan,
    vf: &dyn ValueFunction,
    level: &LevelSetSpec,
    spec: &SystemSpec,
) -> Result<SampleBatch> {
    sample_safe_range(plan, 0..plan.n_samples, vf, level, spec)
}

/// Samples `indices` of the sequence [`sample_safe_set`] draws, so a long
/// batch can be produced piecewise. Ranges starting at multiples of 64 give
/// the same states and starvation behavior as the full call.
pub fn sample_safe_range(
    plan: &SamplePlan,
    indices: core::ops::Range<u64>,
    vf: &dyn ValueFunction,
    level: &LevelSetSpec,
    spec: &SystemSpec,
) -> Result<SampleBatch> {
    if vf.input_dim() != spec.state_dim {
        return Err(Error::DimensionMismatch { expected: spec.state_dim, got: vf.input_dim() });
    }
    let stage = seed::derive(plan.seed, "sample");
    let mut states = Vec::with_capacity(indices.end.saturating_sub(indices.start) as usize);
    let mut attempts = 0u64;
    let mut start = indices.start;
    while start < indices.end {
        let end = (start + BLOCK).min(indices.end);
        let block = map_indices(start..end, |i| draw_accepted(stage, i, plan, vf, level, spec));
        let mut starved = None;
        for (off, (x, tries)) in block.into_iter().enumerate() {
            attempts += tries;
            match x {
                Some(x) => states.push(x),
                None => starved = starved.or(Some(start + off as u64)),
            }
        }
        if let Some(index) = starved {
            return Err(Error::AcceptanceStarvation {
                index,
                max_rejections: plan.max_rejections_per_sample,
                acceptance_rate: states.len() as f64 / attempts as f64,
            });
        }
        start = end;
    }
    Ok(SampleBatch { states, attempts })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VolumeEstimate {
    pub fraction: f64,
    /// 95% normal-approximation half-width.
    pub ci_halfwidth: f64,
    pub m: u64,
}

impl VolumeEstimate {
    fn from_counts(hits: u64, m: u64) -> Self {
        let p = hits as f64 / m as f64;
        Self { fraction: p, ci_halfwidth: 1.96 * crate::math::sqrt(p * (1.0 - p) / m as f64), m }
    }
}

/// Value function evaluated at `m` uniform box points, reusable across
/// levels.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeProbe {
    values: Vec<f64>,
}

impl VolumeProbe {
    pub fn new(vf: &dyn ValueFunction, spec: &SystemSpec, m: u64, seed: u64) -> Result<Self> {
        if m < 1000 {
            return Err(Error::InvalidParameter("volume estimate needs at least 1000 points"));
        }
        if vf.input_dim() != spec.state_dim {
            return Err(Error::DimensionMismatch { expected: spec.state_dim, got: vf.input_dim() });
        }
        let stage = seed::derive(seed, "volume");
        let values = map_indices(0..m, |i| {
            let mut rng = seed::stream(stage, i);
            let mut x = vec![0.0; spec.state_dim];
            draw_base(&mut rng, spec, &mut x);
            vf.eval(&x)
        });
        Ok(Self { values })
    }

    pub fn estimate(&self, level: &LevelSetSpec) -> VolumeEstimate {
        let hits = self.values.iter().filter(|v| level.contains_value(**v)).count() as u64;
        VolumeEstimate::from_counts(hits, self.values.len() as u64)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Fraction of the domain box inside the level set.
pub fn estimate_volume(
    vf: &dyn ValueFunction,
    level: &LevelSetSpec,
    spec: &SystemSpec,
    m: u64,
    seed: u64,
) -> Result<VolumeEstimate> {
    Ok(VolumeProbe::new(vf, spec, m, seed)?.estimate(level))
}
