//! Point estimators of the Dirichlet-process diversity `α` and empirical
//! diagnostic curves.

use serde::{Deserialize, Serialize};

use crate::data::PartitionData;
use crate::error::{domain, Error, Result};
use crate::gibbs::{GibbsModel, WeightEvaluator};
use crate::specfun::{psi, psi1};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaMethod {
    /// Fisher's log-series estimator, solving `α ln(1 + n/α) = k`.
    Fisher,
    /// Maximum likelihood under the Dirichlet process, solving
    /// `Σ_{i<n} α/(α+i) = k`.
    Ml,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub value: f64,
    pub method: AlphaMethod,
    pub iterations: u32,
    /// `|f(α) - k|` at the returned value.
    pub residual: f64,
}

const LO: f64 = 1e-8;
const HI: f64 = 1e12;
const NEWTON_STEPS: u32 = 5;
/// Below this sample size the likelihood equation is summed term by term.
const DIRECT_SUM_LIMIT: u64 = 100_000;

fn fisher_eq(n: f64, a: f64) -> (f64, f64) {
    let l = (n / a).ln_1p();
    (a * l, l - n / (a + n))
}

fn ml_eq(n: u64, a: f64) -> (f64, f64) {
    if n <= DIRECT_SUM_LIMIT {
        let mut f = 0.0;
        let mut d = 0.0;
        for i in 0..n {
            let x = a + i as f64;
            f += a / x;
            d += i as f64 / (x * x);
        }
        (f, d)
    } else {
        let nf = n as f64;
        let diff = psi(a + nf) - psi(a);
        (a * diff, diff + a * (psi1(a + nf) - psi1(a)))
    }
}

fn solve(k: f64, f: impl Fn(f64) -> (f64, f64), method: AlphaMethod) -> AlphaEstimate {
    let (mut lo, mut hi) = (LO, HI);
    let mut iterations = 0;
    while hi / lo - 1.0 > 1e-6 {
        let mid = (lo * hi).sqrt();
        if f(mid).0 < k {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let mut a = (lo * hi).sqrt();
    for _ in 0..NEWTON_STEPS {
        let (v, d) = f(a);
        if d <= 0.0 || !d.is_finite() {
            break;
        }
        let next = a - (v - k) / d;
        if !(next > 0.0) {
            break;
        }
        a = next;
        iterations += 1;
    }
    AlphaEstimate {
        value: a,
        method,
        iterations,
        residual: (f(a).0 - k).abs(),
    }
}

fn check(n: u64, k: u64) -> Result<()> {
    if k == 0 || k > n {
        return domain(format!("need 1 <= k <= n, got n={n}, k={k}"));
    }
    if k == n {
        return Err(Error::NoFiniteSolution { n, k });
    }
    Ok(())
}

/// Fisher's estimate of `α` from `k` taxa in `n` observations.
///
/// ```
/// let a = sigmadiv::estimators::fisher_alpha(553_949, 4962).unwrap();
/// assert!((a.value - 751.32).abs() < 0.01);
/// ```
pub fn fisher_alpha(n: u64, k: u64) -> Result<AlphaEstimate> {
    check(n, k)?;
    let nf = n as f64;
    Ok(solve(k as f64, |a| fisher_eq(nf, a), AlphaMethod::Fisher))
}

/// Maximum likelihood estimate of `α` under the Dirichlet process.
///
/// With `k = 1` the likelihood increases as `α → 0`, so there is no positive
/// maximizer and a domain error is returned.
pub fn mle_alpha(n: u64, k: u64) -> Result<AlphaEstimate> {
    check(n, k)?;
    if k == 1 {
        return domain("k = 1: the likelihood is maximized at the boundary alpha = 0");
    }
    Ok(solve(k as f64, |a| ml_eq(n, a), AlphaMethod::Ml))
}

/// Expected number of distinct taxa in subsamples of size `i = 1..=n` drawn
/// without replacement, `k - Σ_j C(n - n_j, i) / C(n, i)`.
pub fn classical_rarefaction(data: &PartitionData) -> Vec<f64> {
    let n = data.n();
    let k = data.k() as f64;
    let fc = data.freq_counts();
    let mut missing = vec![0.0; n as usize];
    for (&r, &m) in &fc {
        // ratio C(n - r, i) / C(n, i), updated by (n - r - i) / (n - i)
        let mut ratio = 1.0;
        for i in 0..n {
            if i + r > n {
                break;
            }
            ratio *= (n - r - i) as f64 / (n - i) as f64;
            if ratio < 1e-300 {
                break;
            }
            missing[i as usize] += m as f64 * ratio;
        }
    }
    missing.into_iter().map(|s| k - s).collect()
}

/// `1 - V_{n+1,k+1} / V_{n,k}`, the estimated probability that the next
/// observation repeats a known taxon.
pub fn sample_coverage(model: &GibbsModel, n: u64, k: u64) -> Result<f64> {
    if k == 0 || k > n {
        return domain(format!("need 1 <= k <= n, got n={n}, k={k}"));
    }
    let mut ev = WeightEvaluator::new(*model, n + 1)?;
    Ok((1.0 - ev.p_new(n, k)).clamp(0.0, 1.0))
}
