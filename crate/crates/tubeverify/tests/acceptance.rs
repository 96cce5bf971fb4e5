//! End-to-end acceptance checks, one line of output per criterion.
//!
//! Runs without the libtest harness so every line is visible in a plain
//! `cargo test` run. Pass criterion numbers to run a subset:
//! `cargo test --release --test acceptance -- 1 6 10`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubeverify::output::csv_body;
use tubeverify_core::bounds::{beta_posterior, binomial_tail, conformal_lower_bound, min_epsilon, min_samples};
use tubeverify_core::dynamics::{Dubins3, DubinsParams, Rocket, RocketParams, StaticSystem};
use tubeverify_core::retrain::{self, CostDataset, PipelineConfig, RetrainConfig, Split};
use tubeverify_core::rollout::{rollout, ConstantPolicy, RolloutConfig};
use tubeverify_core::sampler::{draw_base, VolumeProbe};
use tubeverify_core::value_fn::{AffineValue, AnalyticValue};
use tubeverify_core::verifier::{certified_volume, iterative_verify, levels_for_fractions, verify, Candidate, VerifyParams};
use tubeverify_core::{Dynamics, InducedPolicy, ProblemMode, SineMlp, System, TargetSpec, ValueFunction};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

type Check = fn() -> Outcome;

const CRITERIA: [(u32, &str, Duration, Check); 10] = [
    (1, "large-sample bound", Duration::from_secs(1), large_sample_bound),
    (2, "scenario and conformal bounds agree", Duration::from_secs(30), bounds_agree),
    (3, "binomial tail against exact sums", Duration::from_secs(10), tail_brute_force),
    (4, "posterior mean is exact", Duration::from_secs(10), posterior_mean),
    (5, "certificate coverage", Duration::from_secs(120), coverage),
    (6, "integrator accuracy and order", Duration::from_secs(1), integrator),
    (7, "network gradients", Duration::from_secs(30), gradients),
    (8, "sweep dominates the outlier-free baseline", Duration::from_secs(30 * 60), sweep_vs_iterative),
    (9, "retraining recovers certified volume", Duration::from_secs(60 * 60), retraining_recovers),
    (10, "reruns are byte-identical", Duration::from_secs(10 * 60), determinism),
];

fn main() {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = result.pass && in_time;
        failed += usize::from(!pass);
        let timing = format!("{:.2}s of {}s", took.as_secs_f64(), budget.as_secs());
        let verdict = if pass { "PASS" } else { "FAIL" };
        let late = if in_time { "" } else { " (over time budget)" };
        println!("acceptance {id:>2} {verdict}: {name}: {} [{timing}{late}]", result.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn tubeverify(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_tubeverify")).args(args).env_remove("TUBEVERIFY_THREADS").output().unwrap()
}

fn large_sample_bound() -> Outcome {
    let out = tubeverify(&["bounds", "eps", "--n", "3684118", "--k", "731", "--beta", "0.1"]);
    let j: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let v = j["one_minus_epsilon"].as_f64().unwrap_or(f64::NAN);
    outcome(out.status.success() && (v - 0.99979).abs() <= 1e-5, format!("1-eps = {v:.7}"))
}

fn bounds_agree() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n: u64 = rng.random_range(1..=100_000);
        let k = rng.random_range(0..=n / 10);
        let beta = 10f64.powf(rng.random_range(-16.0..=0.5f64.log10()));
        let scenario = 1.0 - min_epsilon(n, k, beta).unwrap();
        let conformal = conformal_lower_bound(n, k, beta).unwrap();
        worst = worst.max((scenario - conformal).abs());
    }
    outcome(worst <= 1e-10, format!("worst |difference| {worst:.2e} over 1000 triples"))
}

fn binom(n: u64, k: u64) -> BigInt {
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}

fn tail_brute_force() -> Outcome {
    let mut worst = 0.0f64;
    for n in 0..=30u64 {
        for j in 1..=99 {
            let eps = j as f64 / 100.0;
            // exact binary value of eps, m / d
            let r = BigRational::from_float(eps).unwrap();
            let (m, d) = (r.numer().clone(), r.denom().clone());
            let q = &d - &m;
            let den = num_traits::pow(d, n as usize);
            let mut acc = BigInt::zero();
            for k in 0..=n {
                acc += binom(n, k) * num_traits::pow(m.clone(), k as usize) * num_traits::pow(q.clone(), (n - k) as usize);
                let exact = BigRational::new(acc.clone(), den.clone()).to_f64().unwrap();
                worst = worst.max((binomial_tail(n, k, eps).unwrap() - exact).abs());
            }
        }
    }
    outcome(worst <= 1e-12, format!("worst |error| {worst:.2e}"))
}

/// True when `x` is the double nearest to `r`.
fn nearest_double(x: f64, r: &BigRational) -> bool {
    let dist = |v: f64| (BigRational::from_float(v).unwrap() - r).abs();
    let d = dist(x);
    d <= dist(x.next_up()) && d <= dist(x.next_down())
}

fn posterior_mean() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..100 {
        let n: u64 = rng.random_range(1..=1000);
        let k = rng.random_range(0..=n);
        let p = beta_posterior(n, k).unwrap();
        let exact = BigRational::new(BigInt::from(n - k), BigInt::from(n + 1));
        let shapes = p.alpha == (n - k) as f64 && p.beta_shape == (k + 1) as f64;
        bad += usize::from(!(shapes && nearest_double(p.mean(), &exact)));
    }
    outcome(bad == 0, format!("{bad} of 100 pairs off the correctly rounded (N-k)/(N+1)"))
}

fn coverage() -> Outcome {
    let p_star = 0.05;
    let beta = 0.1;
    let trials = 10_000u64;
    let sys = StaticSystem::new(vec![0.0], vec![1.0], ProblemMode::Avoid, move |x: &[f64]| x[0] - p_star).unwrap();
    let vf = AffineValue { weights: vec![1.0], offset: 0.0 };
    let policy = ConstantPolicy { u: vec![] };
    let cand = Candidate { value: &vf, policy: &policy };
    let mut failures = 0u64;
    for t in 0..trials {
        let params = VerifyParams { n_samples: 1000, beta, seed: t, dt: 1.0, volume_samples: 1000, ..VerifyParams::default() };
        let r = verify(&sys, cand, -1.0, &params).unwrap();
        failures += u64::from(r.epsilon < p_star);
    }
    let rate = failures as f64 / trials as f64;
    let limit = beta + 3.0 * (beta * (1.0 - beta) / trials as f64).sqrt();
    outcome(rate <= limit, format!("eps < p* in {rate:.4} of trials, limit {limit:.4}"))
}

fn final_state(sys: &dyn System, u: &[f64], x0: &[f64], dt: f64) -> Vec<f64> {
    let r = rollout(sys, &ConstantPolicy { u: u.to_vec() }, x0, &RolloutConfig::new(dt), true).unwrap();
    r.trajectory.unwrap().states.pop().unwrap()
}

fn integrator() -> Outcome {
    let r = Rocket::new(RocketParams::default()).unwrap();
    let t = r.spec().horizon;
    let fall = final_state(&r, &[0.0, 0.0], &[0.0, 100.0, 0.0, 0.0, 0.0, 0.0], 1e-2);
    let fall_err = (fall[1] - (100.0 - 0.5 * 9.81 * t * t)).abs();
    // free fall is quadratic in time, so RK4 is exact up to rounding; the order
    // is measured on a spinning, thrusting rocket against a fine-step solution
    let x0 = [0.0, 100.0, 0.2, 0.5, 3.0, -2.0];
    let u = [12.0, 15.0];
    let reference = final_state(&r, &u, &x0, 1e-4);
    let err = |dt: f64| {
        let x = final_state(&r, &u, &x0, dt);
        x.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let (coarse, fine) = (err(1e-2), err(5e-3));
    let ratio = coarse / fine;
    outcome(
        fall_err <= 1e-6 && ratio >= 8.0,
        format!("free-fall error {fall_err:.1e}; thrusting error {coarse:.2e} -> {fine:.2e} (x{ratio:.1}) when dt halves"),
    )
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    diff / b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8)
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst_in, mut worst_param) = (0.0f64, 0.0f64);
    let mut nets = 0;
    for depth in 1..=3 {
        for width in [8, 16, 32, 64] {
            for (omega0, time) in [(1.0, false), (3.0, true), (30.0, false)] {
                let dim = 3;
                let mut sizes = vec![dim + usize::from(time)];
                sizes.extend(std::iter::repeat_n(width, depth));
                sizes.push(1);
                let center = (0..sizes[0]).map(|i| 0.1 * i as f64).collect();
                let half = (0..sizes[0]).map(|i| 1.0 + 0.5 * i as f64).collect();
                let net = SineMlp::siren(&sizes, omega0, center, half, time, rng.random()).unwrap();
                nets += 1;
                for _ in 0..3 {
                    let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let h = 1e-4;
                    let fd: Vec<f64> = (0..dim)
                        .map(|i| {
                            let (mut p, mut m) = (x.clone(), x.clone());
                            p[i] += h;
                            m[i] -= h;
                            (net.eval(&p) - net.eval(&m)) / (2.0 * h)
                        })
                        .collect();
                    let mut g = vec![0.0; dim];
                    net.eval_gradient(&x, &mut g);
                    worst_in = worst_in.max(rel_err(&g, &fd));

                    let base = net.params();
                    let mut probe = net.clone();
                    let h = 1e-5;
                    let fd: Vec<f64> = (0..base.len())
                        .map(|i| {
                            let mut p = base.clone();
                            p[i] = base[i] + h;
                            probe.set_params(&p).unwrap();
                            let up = probe.eval(&x);
                            p[i] = base[i] - h;
                            probe.set_params(&p).unwrap();
                            (up - probe.eval(&x)) / (2.0 * h)
                        })
                        .collect();
                    let mut ws = net.workspace();
                    net.forward(&x, &mut ws);
                    let mut pg = vec![0.0; net.n_params()];
                    net.accumulate_param_gradient(&mut ws, 1.0, &mut pg);
                    worst_param = worst_param.max(rel_err(&pg, &fd));
                }
            }
        }
    }
    outcome(
        worst_in <= 1e-4 && worst_param <= 1e-3,
        format!("{nets} networks; worst relative error input {worst_in:.1e}, parameters {worst_param:.1e}"),
    )
}

/// Desk-scale learned dubins3 candidate: a network fitted once to rollout
/// costs of the policy induced by the target function.
fn dubins_candidate(d: &Dubins3) -> SineMlp {
    let init = SineMlp::for_system(d.spec(), &[32, 32], 3.0, 5).unwrap();
    let cfg = RetrainConfig { w: 1.0, learning_rate: 0.01, epochs: 50, batch_size: 32, checkpoint_interval: 50, seed: 2, normalize_labels: true };
    retrain::bootstrap_candidate(d, &init, 20_000, 5_000, 0.02, &cfg).unwrap().0.net
}

fn cert_params(n_samples: u64) -> VerifyParams {
    VerifyParams { n_samples, beta: 1e-16, seed: 6, dt: 0.02, volume_samples: 100_000, ..VerifyParams::default() }
}

fn sweep_vs_iterative() -> Outcome {
    let d = Dubins3::new(DubinsParams::default()).unwrap();
    let net = dubins_candidate(&d);
    let policy = InducedPolicy::new(&net, &d).unwrap();
    let cand = Candidate { value: &net, policy: &policy };
    let eps = 1e-3;
    let probe = VolumeProbe::new(&net, d.spec(), 100_000, 9).unwrap();
    let start = levels_for_fractions(&probe, d.spec().mode, &[0.9])[0];
    let iterative = match iterative_verify(&d, cand, eps, start, 100, &cert_params(0)) {
        Ok(o) => o.report.volume.fraction,
        Err(e) => return outcome(false, format!("iterative baseline failed: {e}")),
    };
    let grid: Vec<f64> = (1..=99).rev().map(|i| i as f64 / 100.0).collect();
    let mut volumes = Vec::new();
    for n in [10_000, 50_000, 200_000] {
        match certified_volume(&d, cand, eps, &grid, &cert_params(n)) {
            Ok(c) => volumes.push(c.volume()),
            Err(e) => return outcome(false, format!("sweep with N = {n} failed: {e}")),
        }
    }
    let best = volumes.iter().copied().fold(0.0, f64::max);
    let monotone = volumes.windows(2).all(|w| w[0] <= w[1]);
    outcome(
        best >= iterative && monotone,
        format!("iterative volume {iterative:.4}; sweep volume for N = 1e4, 5e4, 2e5: {volumes:?}"),
    )
}

/// Box fraction swept from the largest set down; the finest entries keep the
/// rejection sampler affordable.
const RECOVERY_GRID: [f64; 14] = [0.5, 0.4, 0.3, 0.2, 0.15, 0.1, 0.07, 0.05, 0.03, 0.02, 0.01, 0.005, 0.003, 0.002];

fn recovery_config(epochs: usize, interval: usize) -> PipelineConfig {
    PipelineConfig {
        n_train: 100_000,
        n_val: 20_000,
        dataset_seed: 3,
        retrain: RetrainConfig { w: 1e-3, learning_rate: 0.01, epochs, batch_size: 32, checkpoint_interval: interval, seed: 4, normalize_labels: true },
        epsilon_target: 1e-4,
        volume_grid: RECOVERY_GRID.to_vec(),
        verify: cert_params(min_samples(0, 1e-4, 1e-16).unwrap()),
    }
}

fn smoothstep(lo: f64, hi: f64, v: f64) -> f64 {
    let s = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Fits `init` to `labels(x)` on uniform box states with plain MSE.
fn fit_baseline(sys: &dyn System, init: &SineMlp, n: usize, epochs: usize, labels: impl Fn(&[f64]) -> f64) -> SineMlp {
    let spec = sys.spec();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut x = vec![0.0; spec.state_dim];
            draw_base(&mut rng, spec, &mut x);
            x
        })
        .collect();
    let data = CostDataset {
        labels: inputs.iter().map(|x| labels(x)).collect(),
        splits: (0..n).map(|i| if i < n * 4 / 5 { Split::Train } else { Split::Validation }).collect(),
        inputs,
        mode: spec.mode,
        policy_fingerprint: 0,
        n_failed: 0,
        seed: 1,
        dt: 0.02,
    };
    let cfg = RetrainConfig { w: 1.0, learning_rate: 0.01, epochs, batch_size: 32, checkpoint_interval: epochs, seed: 2, normalize_labels: true };
    retrain::retrain(init, &data, &cfg).unwrap().net
}

fn retraining_recovers() -> Outcome {
    // dubins3: costs of the target-induced policy, overrated by up to 1 where
    // car 1 sits in the upper right corner
    let d = Dubins3::new(DubinsParams::default()).unwrap();
    let init = SineMlp::for_system(d.spec(), &[32, 32], 3.0, 5).unwrap();
    let analytic = AnalyticValue::new(&d);
    let lpolicy = InducedPolicy::new(&analytic, &d).unwrap();
    let rc = RolloutConfig::new(0.02);
    let bumped = fit_baseline(&d, &init, 20_000, 50, |x| {
        let cost = rollout(&d, &lpolicy, x, &rc, false).unwrap().cost;
        cost + smoothstep(0.2, 0.6, x[0]) * smoothstep(0.2, 0.6, x[1])
    });
    let dub = retrain::outlier_adjusted_pipeline(&d, &bumped, &recovery_config(50, 5)).unwrap();
    let (d0, d1) = (dub.before.volume(), dub.after.volume());

    // rocket_nogo: a weak baseline that is optimistic everywhere and most
    // optimistic inside the no-go rectangle
    let r = nogo_rocket();
    let init = SineMlp::for_system(r.spec(), &[32, 32], 10.0, 5).unwrap();
    let weak = fit_baseline(&r, &init, 20_000, 50, |x| weak_rocket_value(&r, x));
    let rk = retrain::outlier_adjusted_pipeline(&r, &weak, &recovery_config(100, 10)).unwrap();
    let (r0, r1) = (rk.before.volume(), rk.after.volume());
    outcome(
        d1 > d0 && r0 == 0.0 && r1 > 0.0,
        format!("dubins3 certified volume {d0:.4} -> {d1:.4}; rocket_nogo {r0:.4} -> {r1:.4} (eps 1e-4, beta 1e-16)"),
    )
}

/// rocket_nogo on a box tight enough around the pad for a 32 x 32 network to
/// resolve the landing region.
fn nogo_rocket() -> Rocket {
    let pi = std::f64::consts::PI;
    let p = RocketParams {
        domain_lower: [-60.0, 0.0, -pi, -10.0, -60.0, -60.0],
        domain_upper: [60.0, 120.0, pi, 10.0, 60.0, 60.0],
        ..RocketParams::with_nogo()
    };
    Rocket::new(p).unwrap()
}

fn weak_rocket_value(r: &Rocket, x: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let spin = 40.0 * (x[3] / 10.0).powi(2);
    let speed = 40.0 * (x[4] * x[4] + x[5] * x[5]) / 3600.0;
    let bump = if (-30.0..=-20.0).contains(&x[0]) && x[1] <= 100.0 {
        60.0 * (PI * (x[0] + 30.0) / 10.0).sin().powi(2) * (PI * x[1] / 100.0).sin().powi(2)
    } else {
        0.0
    };
    r.target(x) + spin + speed - 130.0 - bump
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let s = |p: &Path| p.to_str().unwrap().to_string();
    // each run writes into its own directory; bodies are compared pairwise
    let run = |tag: &str, threads: &str| -> Vec<(String, String)> {
        let out = d.join(tag);
        std::fs::create_dir_all(&out).unwrap();
        let f = |name: &str| s(&out.join(name));
        let boot = out.join("boot");
        let common = ["--system", "dubins3", "--seed", "3", "--threads", threads];
        let cert = ["--n", "300", "--beta", "1e-3", "--volume-samples", "2000"];
        let commands: Vec<Vec<String>> = vec![
            vec!["verify".into(), "--delta".into(), "0.05".into(), "--csv".into(), f("verify.csv"), "--dump-samples".into(), f("samples.csv")],
            vec!["sweep".into(), "--fractions".into(), "0.2,0.5,0.8".into(), "--csv".into(), f("sweep.csv")],
            vec!["iterative".into(), "--eps-target".into(), "0.3".into(), "--csv".into(), f("iterative.csv")],
            vec!["rollout".into(), "--n".into(), "50".into(), "--csv".into(), f("rollouts.csv")],
            vec!["rollout".into(), "--x0".into(), "0.1,0.2,0.3,-0.4,0.5,1.0,0.0,-0.6,2.0".into(), "--dump-traj".into(), f("traj.csv")],
            vec!["volume".into(), "--levels".into(), "-0.1,0.0,0.2".into(), "--csv".into(), f("volume.csv")],
            vec![
                "retrain".into(), "--bootstrap".into(), "--hidden".into(), "8".into(), "--omega0".into(), "3".into(),
                "--n-train".into(), "150".into(), "--n-val".into(), "50".into(), "--epochs".into(), "2".into(),
                "--learning-rate".into(), "0.01".into(), "--batch-size".into(), "16".into(), "--out".into(), s(&boot),
            ],
            vec![
                "retrain".into(), "--value".into(), s(&boot.join("bootstrap.json")), "--n-train".into(), "150".into(),
                "--n-val".into(), "50".into(), "--epochs".into(), "2".into(), "--learning-rate".into(), "0.01".into(),
                "--batch-size".into(), "16".into(), "--eps-target".into(), "0.3".into(), "--fractions".into(),
                "0.3,0.6".into(), "--out".into(), f("refined"),
            ],
        ];
        for c in commands {
            let with_cert = matches!(c[0].as_str(), "verify" | "sweep" | "iterative" | "retrain");
            let mut args: Vec<&str> = c.iter().map(String::as_str).collect();
            args.extend(common);
            if with_cert {
                args.extend(cert);
            }
            let o = tubeverify(&args);
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let mut files: Vec<_> = walk(&out).into_iter().filter(|p| p.extension().is_some_and(|e| e == "csv")).collect();
        files.sort();
        files
            .iter()
            .map(|p| {
                let rel = p.strip_prefix(&out).unwrap().display().to_string();
                (rel, csv_body(&std::fs::read_to_string(p).unwrap()).to_string())
            })
            .collect()
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "2");
    let differing: Vec<&str> =
        a.iter().zip(&b).zip(&c).filter(|((x, y), z)| x != y || x != z).map(|((x, _), _)| x.0.as_str()).collect();
    let same_files = a.len() == b.len() && a.len() == c.len();
    outcome(
        same_files && differing.is_empty() && a.len() >= 12,
        format!("{} CSV files over 8 commands, 3 runs (1 and 2 threads); differing: {differing:?}", a.len()),
    )
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}
