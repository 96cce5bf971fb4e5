//! Bound calculators checked against exact rational summation, frozen
//! high-precision references and the algebraic identities tying the
//! scenario and conformal views together.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tubeverify_core::bounds::*;

fn binom(n: u64, k: u64) -> BigInt {
    let mut c = BigInt::one();
    for i in 0..k {
        c = c * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    c
}

/// Exact prefix tails `Σ_{i≤k} C(n,i) εⁱ(1-ε)^{n-i}` for every `k ≤ n`, with
/// `ε` taken at its exact binary value `m / 2^e`. All terms share the
/// denominator `2^{e n}`, so the sums stay in integers.
fn exact_tails(n: u64, eps: f64) -> Vec<f64> {
    let r = BigRational::from_float(eps).unwrap();
    let m = r.numer().clone();
    let d = r.denom().clone();
    let q = &d - &m;
    let den = num_traits::pow(d, n as usize);
    let mut out = Vec::with_capacity(n as usize + 1);
    let mut acc = BigInt::zero();
    for i in 0..=n {
        acc += binom(n, i) * num_traits::pow(m.clone(), i as usize) * num_traits::pow(q.clone(), (n - i) as usize);
        out.push(BigRational::new_raw(acc.clone(), den.clone()).to_f64().unwrap());
    }
    out
}

fn exact_tail(n: u64, k: u64, eps: f64) -> f64 {
    exact_tails(n, eps)[k as usize]
}

#[test]
fn tail_matches_exact_summation_small_n() {
    let mut worst = 0.0f64;
    for n in 0..=30u64 {
        for j in 1..=99 {
            let eps = j as f64 / 100.0;
            for (k, want) in exact_tails(n, eps).into_iter().enumerate() {
                let got = binomial_tail(n, k as u64, eps).unwrap();
                worst = worst.max((got - want).abs());
            }
        }
    }
    assert!(worst <= 1e-12, "worst abs error {worst:e}");
}

#[test]
fn frozen_tail_n20() {
    // exact rational sum of six terms, rounded once
    let want = 0.988746865835491;
    assert!((binomial_tail(20, 5, 0.1).unwrap() - want).abs() < 1e-15);
    assert!((exact_tail(20, 5, 0.1) - want).abs() < 1e-15);
}

#[test]
fn beta_cdf_is_tail_at_reflected_point() {
    let post = beta_posterior(20, 5).unwrap();
    let via_beta = beta_cdf(0.9, &post).unwrap();
    assert!((via_beta - exact_tail(20, 5, 0.1)).abs() < 1e-13);
}

#[test]
fn min_epsilon_n20_against_exact_bisection() {
    // scalar root bracketing with the exact tail
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if exact_tail(20, 5, mid) <= 0.05 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let got = min_epsilon(20, 5, 0.05).unwrap();
    assert!((got - hi).abs() < 1e-12, "{got} vs {hi}");
    // 60-digit reference root
    assert!((got - 0.455_582_404_001_748_83).abs() < 1e-12);
}

/// Lower tails summed term by term in 50-digit arithmetic.
const LARGE_REFERENCES: &[(u64, u64, f64, f64)] = &[
    (3_684_118, 731, 2.08157380229e-4, 0.100_000_000_006_217_274_09),
    (10_000_000, 3, 1e-6, 0.010_336_024_192_647_670_011),
    (10_000_000, 50, 3e-6, 0.999_701_993_644_477_679_2),
    (100_000, 9000, 0.1, 5.235_223_531_829_281_352e-27),
    (1_000_000, 29, 1e-4, 5.878_341_235_999_988_618_4e-17),
    (1_000_000, 30, 1e-4, 1.986_887_056_337_242_482_1e-16),
    (200_000, 40, 2e-4, 0.541_918_178_572_402_477_16),
];

#[test]
fn large_n_tails_against_high_precision() {
    for &(n, k, eps, want) in LARGE_REFERENCES {
        let got = binomial_tail(n, k, eps).unwrap();
        assert!((got - want).abs() <= 1e-12, "n={n} k={k}: {got:e} vs {want:e}");
        // relative accuracy holds in the deep tail too
        assert!((got - want).abs() <= 1e-11 * want, "n={n} k={k}: rel {:e}", (got - want) / want);

        let via_beta = beta_cdf(1.0 - eps, &beta_posterior(n, k).unwrap()).unwrap();
        assert!((via_beta - want).abs() <= 1e-12, "beta route n={n} k={k}");
        assert!((via_beta - want).abs() <= 1e-9 * want, "beta route rel n={n} k={k}");
    }
}

#[test]
fn max_outliers_by_monotone_scan() {
    let (n, eps, beta) = (1_000_000u64, 1e-4, 1e-16);
    let mut scanned = None;
    for k in 0..n {
        if binomial_tail(n, k, eps).unwrap() <= beta {
            scanned = Some(k);
        } else {
            break;
        }
    }
    assert_eq!(max_outliers(n, eps, beta).unwrap(), scanned);
    // tails at k = 29 and 30 straddle 1e-16 in the 50-digit reference
    assert_eq!(scanned, Some(29));
}

#[test]
fn min_samples_local_exhaustive() {
    let (k, eps, beta) = (3u64, 1e-3, 1e-9);
    let n = min_samples(k, eps, beta).unwrap();
    assert!(binomial_tail(n, k, eps).unwrap() <= beta);
    for m in (n.saturating_sub(50)).max(k + 1)..n {
        assert!(binomial_tail(m, k, eps).unwrap() > beta, "N={m} already satisfies");
    }
}

#[test]
fn min_samples_zero_outliers_closed_form() {
    for &(eps, beta) in &[(0.5, 0.5), (1e-3, 1e-16), (1e-4, 1e-16), (0.05, 0.01), (0.3, 1e-9)] {
        let closed = libm::ceil(libm::log(beta) / libm::log1p(-eps)) as u64;
        assert_eq!(min_samples(0, eps, beta).unwrap(), closed, "eps={eps} beta={beta}");
    }
}

#[test]
fn figure_three_numbers() {
    let eps = min_epsilon(3_684_118, 731, 0.1).unwrap();
    assert!((eps - 2.081_573_802_29e-4).abs() < 1e-12, "{eps}");
    assert!(((1.0 - eps) - 0.99979).abs() < 1e-5);
    let rep = check_equivalence(3_684_118, 731, 0.1).unwrap();
    assert!(rep.abs_diff <= 1e-10);
}

#[test]
fn equivalence_random_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let n: u64 = rng.random_range(1..=100_000);
        let k: u64 = rng.random_range(0..=n / 10);
        let beta = libm::pow(10.0, rng.random_range(-16.0..libm::log10(0.5)));
        let rep = check_equivalence(n, k, beta).unwrap_or_else(|e| panic!("{n} {k} {beta}: {e}"));
        assert!(rep.abs_diff <= 1e-10);
    }
}

#[test]
fn posterior_mean_is_exact_ratio() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let n: u64 = rng.random_range(1..=1000);
        let k: u64 = rng.random_range(0..n);
        let post = beta_posterior(n, k).unwrap();
        let a = BigRational::from_float(post.alpha).unwrap();
        let b = BigRational::from_float(post.beta_shape).unwrap();
        let mean = &a / (&a + &b);
        let want = BigRational::new(BigInt::from(n - k), BigInt::from(n + 1));
        assert_eq!(mean, want);
        assert_eq!(post.mean(), want.to_f64().unwrap());
    }
}

#[test]
fn scenario_certificate_coverage() {
    // ground truth: each sample unsafe with probability p*
    let (n, p_star, beta, trials) = (1000usize, 0.05, 0.1, 4000usize);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut misses = 0usize;
    for _ in 0..trials {
        let k = (0..n).filter(|_| rng.random::<f64>() < p_star).count() as u64;
        if p_star > min_epsilon(n as u64, k, beta).unwrap() {
            misses += 1;
        }
    }
    let rate = misses as f64 / trials as f64;
    let slack = 3.0 * libm::sqrt(beta * (1.0 - beta) / trials as f64);
    assert!(rate <= beta + slack, "miss rate {rate}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tail_strictly_decreasing_in_eps(n in 1u64..5000, kf in 0.0f64..1.0, e1 in 0.001f64..0.998) {
        let k = ((n as f64 - 1.0) * kf) as u64;
        let e2 = e1 + 0.001;
        let t1 = binomial_tail(n, k, e1).unwrap();
        let t2 = binomial_tail(n, k, e2).unwrap();
        prop_assert!(t2 <= t1);
        if t1 > 1e-250 && t1 < 1.0 - 1e-12 {
            prop_assert!(t2 < t1);
        }
    }

    #[test]
    fn incomplete_beta_identity(n in 1u64..200_000, kf in 0.0f64..1.0, eps in 0.0001f64..0.9999) {
        let k = ((n - 1) as f64 * kf) as u64;
        let tail = binomial_tail(n, k, eps).unwrap();
        let cdf = beta_cdf(1.0 - eps, &beta_posterior(n, k).unwrap()).unwrap();
        prop_assert!((tail - cdf).abs() <= 1e-12, "tail {} cdf {}", tail, cdf);
    }

    #[test]
    fn min_epsilon_monotone(n in 2u64..50_000, kf in 0.0f64..0.5, lb in -16.0f64..-0.5) {
        let k = (n as f64 * kf) as u64;
        let beta = libm::pow(10.0, lb);
        let e = min_epsilon(n, k, beta).unwrap();
        if k + 1 < n {
            prop_assert!(min_epsilon(n, k + 1, beta).unwrap() >= e);
        }
        prop_assert!(min_epsilon(n, k, beta * 0.5).unwrap() >= e);
    }

    #[test]
    fn min_samples_monotone_in_k(k in 0u64..40, eps in 0.001f64..0.2, lb in -16.0f64..-1.0) {
        let beta = libm::pow(10.0, lb);
        prop_assert!(min_samples(k + 1, eps, beta).unwrap() >= min_samples(k, eps, beta).unwrap());
    }
}
