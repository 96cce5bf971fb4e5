//! Mapping empirical outlier counts `(N, k)` to `(ε, β)` guarantees.
//!
//! Two readings of the same counts are provided:
//!
//! * **Scenario:** pick `ε` so that `Σ_{i≤k} C(N,i) εⁱ(1-ε)^{N-i} ≤ β`; then
//!   with confidence `1 - β` the unsafe mass of the sampled set is at most
//!   `ε` ([`min_epsilon`], [`max_outliers`], [`min_samples`]).
//! * **Conformal:** the safe fraction is distributed as `Beta(N-k, k+1)`;
//!   its `β`-quantile is a lower bound on the safe fraction holding with
//!   confidence `1 - β` ([`beta_posterior`], [`conformal_lower_bound`]).
//!
//! The binomial tail is evaluated by pmf-anchored summation and the Beta CDF
//! by a continued fraction, so [`check_equivalence`] compares two
//! independently computed numbers rather than one function with itself.

mod special;

use serde::{Deserialize, Serialize};

/// Errors from the bound calculators.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum BoundsError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    /// `k = N`: every sample was an outlier and no `ε < 1` is certified.
    #[error("no violation level below 1 is certifiable when all {n} samples are outliers")]
    Infeasible { n: u64 },
    #[error(
        "scenario bound 1-ε = {scenario} and conformal bound {conformal} differ by {diff:e}"
    )]
    EquivalenceViolation { scenario: f64, conformal: f64, diff: f64 },
    #[error("incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")]
    NoConvergence { a: f64, b: f64, x: f64 },
    #[error("required sample count exceeds 2^53")]
    SampleCountOverflow,
}

pub type Result<T> = core::result::Result<T, BoundsError>;

/// Numerical tolerances shared by the calculators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Bisection stops once the bracket is narrower than both this and
    /// `bisection_rel` times the magnitude of the unknown.
    pub bisection_abs: f64,
    pub bisection_rel: f64,
    pub max_bisection_iters: u32,
    pub max_cf_iters: u32,
    /// Allowed gap between the scenario and conformal lower bounds.
    pub equivalence: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            bisection_abs: 1e-12,
            bisection_rel: 1e-13,
            max_bisection_iters: 2000,
            max_cf_iters: 2_000_000,
            equivalence: 1e-10,
        }
    }
}

/// The distribution `Beta(N-k, k+1)` of the safe fraction of a sampled set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPosterior {
    pub alpha: f64,
    pub beta_shape: f64,
}

impl BetaPosterior {
    pub fn new(alpha: f64, beta_shape: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) || !(beta_shape > 0.0 && beta_shape.is_finite()) {
            return Err(BoundsError::InvalidParameter("Beta shapes must be positive and finite"));
        }
        Ok(BetaPosterior { alpha, beta_shape })
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta_shape)
    }

    pub fn variance(&self) -> f64 {
        let s = self.alpha + self.beta_shape;
        self.alpha * self.beta_shape / (s * s * (s + 1.0))
    }

    /// `P(X ≤ p)`.
    pub fn cdf(&self, p: f64) -> Result<f64> {
        beta_cdf(p, self)
    }

    /// The `q`-quantile, the largest `p` with `cdf(p) ≤ q` to bisection
    /// precision.
    pub fn quantile(&self, q: f64) -> Result<f64> {
        beta_quantile(self, q, &Tolerances::default())
    }
}

fn check_unit_open(x: f64, what: &'static str) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(BoundsError::InvalidParameter(what))
    }
}

fn check_counts(n: u64, k: u64) -> Result<()> {
    if k > n {
        Err(BoundsError::InvalidParameter("k must not exceed n"))
    } else {
        Ok(())
    }
}

/// `Σ_{i=0}^{k} C(n,i) εⁱ(1-ε)^{n-i}`, the probability of seeing at most `k`
/// outliers in `n` draws when the true violation rate is `ε`.
pub fn binomial_tail(n: u64, k: u64, eps: f64) -> Result<f64> {
    check_counts(n, k)?;
    check_unit_open(eps, "eps must lie in (0, 1)")?;
    Ok(tail(n, k, eps))
}

#[inline]
fn tail(n: u64, k: u64, eps: f64) -> f64 {
    special::binomial_cdf_sum(n, k, eps, 1.0 - eps)
}

fn converged(lo: f64, hi: f64, scale: f64, tol: &Tolerances) -> bool {
    let width = hi - lo;
    width <= tol.bisection_abs && width <= tol.bisection_rel * scale
}

/// Smallest `ε` with `binomial_tail(n, k, ε) ≤ β`.
pub fn min_epsilon(n: u64, k: u64, beta: f64) -> Result<f64> {
    min_epsilon_with(n, k, beta, &Tolerances::default())
}

pub fn min_epsilon_with(n: u64, k: u64, beta: f64, tol: &Tolerances) -> Result<f64> {
    if n == 0 {
        return Err(BoundsError::InvalidParameter("n must be positive"));
    }
    check_counts(n, k)?;
    check_unit_open(beta, "beta must lie in (0, 1)")?;
    if k == n {
        return Err(BoundsError::Infeasible { n });
    }

    // tail(0) = 1 > β and tail(1) = 0 ≤ β. Near ε = k/n the tail sits around
    // one half for large n, which usually brackets the root much tighter.
    let hint = if k == 0 { 1e-300 } else { k as f64 / n as f64 };
    let (mut lo, mut hi) = if tail(n, k, hint) > beta { (hint, 1.0) } else { (0.0, hint) };

    for _ in 0..tol.max_bisection_iters {
        if converged(lo, hi, hi, tol) {
            break;
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if tail(n, k, mid) <= beta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // hi always satisfies the inequality, so the reported ε is never optimistic.
    Ok(hi)
}

/// Largest `k` with `binomial_tail(n, k, ε) ≤ β`, or `None` when even `k = 0`
/// fails.
pub fn max_outliers(n: u64, eps: f64, beta: f64) -> Result<Option<u64>> {
    check_unit_open(eps, "eps must lie in (0, 1)")?;
    check_unit_open(beta, "beta must lie in (0, 1)")?;
    if n == 0 || tail(n, 0, eps) > beta {
        return Ok(None);
    }
    // tail(n, n) = 1 > β, so a failing k always exists. Gallop, then bisect.
    let mut good = 0u64;
    let mut step = 1u64;
    let mut bad = loop {
        let cand = good.saturating_add(step);
        if cand >= n {
            break n;
        }
        if tail(n, cand, eps) <= beta {
            good = cand;
            step = step.saturating_mul(2);
        } else {
            break cand;
        }
    };
    while bad - good > 1 {
        let mid = good + (bad - good) / 2;
        if tail(n, mid, eps) <= beta {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(Some(good))
}

const MAX_SAMPLES: u64 = 1 << 53;

/// Smallest `N` with `binomial_tail(N, k, ε) ≤ β`.
pub fn min_samples(k: u64, eps: f64, beta: f64) -> Result<u64> {
    check_unit_open(eps, "eps must lie in (0, 1)")?;
    check_unit_open(beta, "beta must lie in (0, 1)")?;
    let first = k.checked_add(1).ok_or(BoundsError::SampleCountOverflow)?;
    if tail(first, k, eps) <= beta {
        return Ok(first);
    }
    // tail is decreasing in N once N > k
    let mut bad = first;
    let mut step = 1u64;
    let mut good = loop {
        let cand = bad.checked_add(step).ok_or(BoundsError::SampleCountOverflow)?;
        if cand > MAX_SAMPLES {
            return Err(BoundsError::SampleCountOverflow);
        }
        if tail(cand, k, eps) <= beta {
            break cand;
        }
        bad = cand;
        step = step.saturating_mul(2);
    };
    while good - bad > 1 {
        let mid = bad + (good - bad) / 2;
        if tail(mid, k, eps) <= beta {
            good = mid;
        } else {
            bad = mid;
        }
    }
    Ok(good)
}

/// `Beta(N-k, k+1)`, the distribution of the safe fraction after observing
/// `k` outliers among `N` samples.
pub fn beta_posterior(n: u64, k: u64) -> Result<BetaPosterior> {
    check_counts(n, k)?;
    if k >= n {
        return Err(BoundsError::InvalidParameter("beta posterior needs k < n"));
    }
    Ok(BetaPosterior { alpha: (n - k) as f64, beta_shape: (k + 1) as f64 })
}

/// Regularized incomplete beta `I_p(α, β)`, the CDF of the posterior.
pub fn beta_cdf(p: f64, post: &BetaPosterior) -> Result<f64> {
    beta_cdf_with(p, post, &Tolerances::default())
}

pub fn beta_cdf_with(p: f64, post: &BetaPosterior, tol: &Tolerances) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) {
        return Err(BoundsError::InvalidParameter("p must lie in [0, 1]"));
    }
    BetaPosterior::new(post.alpha, post.beta_shape)?;
    special::inc_beta(post.alpha, post.beta_shape, p, 1.0 - p, tol.max_cf_iters).ok_or(
        BoundsError::NoConvergence { a: post.alpha, b: post.beta_shape, x: p },
    )
}

fn beta_quantile(post: &BetaPosterior, q: f64, tol: &Tolerances) -> Result<f64> {
    check_unit_open(q, "quantile level must lie in (0, 1)")?;
    let cdf = |p: f64| beta_cdf_with(p, post, tol);

    // Bracket hint at one shape-ratio below 1, mirroring k/n on the scenario side.
    let hint = 1.0 - (post.beta_shape - 1.0) / (post.alpha + post.beta_shape - 1.0);
    let (mut lo, mut hi) = if hint > 0.0 && hint < 1.0 && cdf(hint)? > q {
        (0.0, hint)
    } else {
        (0.0, 1.0)
    };
    for _ in 0..tol.max_bisection_iters {
        // precision is judged on 1 - p, the violation scale
        if converged(lo, hi, 1.0 - lo, tol) {
            break;
        }
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdf(mid)? <= q {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// The `β`-quantile of `Beta(n-k, k+1)`: a lower bound on the safe fraction
/// that holds with confidence `1 - β`.
pub fn conformal_lower_bound(n: u64, k: u64, beta: f64) -> Result<f64> {
    conformal_lower_bound_with(n, k, beta, &Tolerances::default())
}

pub fn conformal_lower_bound_with(n: u64, k: u64, beta: f64, tol: &Tolerances) -> Result<f64> {
    check_unit_open(beta, "beta must lie in (0, 1)")?;
    let post = beta_posterior(n, k)?;
    beta_quantile(&post, beta, tol)
}

/// Both lower bounds on the safe fraction and their gap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub n: u64,
    pub k: u64,
    pub beta: f64,
    /// `ε` from the binomial-tail inversion.
    pub epsilon: f64,
    /// `1 - ε`.
    pub scenario_lower_bound: f64,
    /// `β`-quantile of `Beta(n-k, k+1)`.
    pub conformal_lower_bound: f64,
    pub abs_diff: f64,
}

/// Computes the scenario and conformal lower bounds independently and
/// fails if they differ by more than the equivalence tolerance.
pub fn check_equivalence(n: u64, k: u64, beta: f64) -> Result<EquivalenceReport> {
    check_equivalence_with(n, k, beta, &Tolerances::default())
}

pub fn check_equivalence_with(
    n: u64,
    k: u64,
    beta: f64,
    tol: &Tolerances,
) -> Result<EquivalenceReport> {
    let epsilon = min_epsilon_with(n, k, beta, tol)?;
    let conformal = conformal_lower_bound_with(n, k, beta, tol)?;
    let scenario = 1.0 - epsilon;
    let abs_diff = (scenario - conformal).abs();
    if !(abs_diff <= tol.equivalence) {
        return Err(BoundsError::EquivalenceViolation { scenario, conformal, diff: abs_diff });
    }
    Ok(EquivalenceReport {
        n,
        k,
        beta,
        epsilon,
        scenario_lower_bound: scenario,
        conformal_lower_bound: conformal,
        abs_diff,
    })
}
