//! Accepted samples are uniform on the level set.

use tubeverify_core::dynamics::SystemSpec;
use tubeverify_core::sampler::{estimate_volume, sample_safe_set};
use tubeverify_core::value_fn::AffineValue;
use tubeverify_core::{LevelSetSpec, ProblemMode, SamplePlan};

fn square() -> SystemSpec {
    SystemSpec {
        name: "square".into(),
        state_dim: 2,
        control_dim: 0,
        control_lower: vec![],
        control_upper: vec![],
        domain_lower: vec![-1.0, -1.0],
        domain_upper: vec![1.0, 1.0],
        horizon: 1.0,
        mode: ProblemMode::Avoid,
        angle_dims: vec![],
    }
}

/// Kolmogorov-Smirnov distance between the sample and the uniform law on `[a, b]`.
fn ks_uniform(mut xs: Vec<f64>, a: f64, b: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = ((x - a) / (b - a)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn half_space_samples_pass_ks() {
    let spec = square();
    let vf = AffineValue { weights: vec![1.0, 0.0], offset: 0.0 };
    let level = LevelSetSpec::for_mode(ProblemMode::Avoid, 0.3);
    let m = 100_000;
    let batch = sample_safe_set(&SamplePlan::new(m, 21), &vf, &level, &spec).unwrap();
    // 1% critical value, asymptotic
    let crit = 1.628 / (m as f64).sqrt();
    let d0 = ks_uniform(batch.states.iter().map(|x| x[0]).collect(), 0.3, 1.0);
    let d1 = ks_uniform(batch.states.iter().map(|x| x[1]).collect(), -1.0, 1.0);
    assert!(d0 < crit, "{d0} vs {crit}");
    assert!(d1 < crit, "{d1} vs {crit}");

    let vol = estimate_volume(&vf, &level, &spec, m, 22).unwrap();
    let p = batch.acceptance_rate();
    let ci = 1.96 * (p * (1.0 - p) / batch.attempts as f64).sqrt();
    assert!((p - vol.fraction).abs() <= ci + vol.ci_halfwidth, "{p} vs {}", vol.fraction);
    assert!((vol.fraction - 0.35).abs() <= vol.ci_halfwidth * 1.5);
}
