//! Gibbs-type priors with discount `σ < 0`, `σ = 0` and `σ = 1/2`.
//!
//! A Gibbs-type exchangeable partition assigns to a sample of size `n` with
//! `k` distinct taxa of abundances `n_1, ..., n_k` the probability
//! `V_{n,k} Π_j (1 - σ)_{n_j - 1}`. Three weight families are supported:
//!
//! * Dirichlet-multinomial, `σ < 0` with `H` taxa;
//! * Dirichlet process, `σ = 0` with diversity `α`;
//! * Aldous-Pitman process, `σ = 1/2` with diversity `γ`, where `K_n / √n → γ`.
//!
//! For the Aldous-Pitman process the weights are
//! `V_{n,k} = 2^{n-k/2-1/2} (γ/2)^{k-1} h_{k+1-2n}(γ/√2)`
//! with `h_ν` the Hermite function (see [`crate::specfun::log_hermite`]).

use std::collections::HashMap;
use std::sync::{Arc, OnceLock, RwLock};

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ObservationStream;
use crate::error::{domain, Error, Result};
use crate::sampling::chain_rng;
use crate::specfun::{
    coefficient_row, ln_gamma, ln_rising, ln_rising0, log_binomial, log_hermite, psi,
    CoefficientKind, HermiteLadder,
};

/// One of the three supported Gibbs-type families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum GibbsModel {
    /// Symmetric Dirichlet-multinomial with `h` taxa and discount `sigma < 0`.
    DirichletMultinomial { sigma: f64, h: u64 },
    /// Dirichlet process with diversity `alpha`.
    Dirichlet { alpha: f64 },
    /// Aldous-Pitman process with diversity `gamma`.
    AldousPitman { gamma: f64 },
}

impl GibbsModel {
    pub fn dirichlet_multinomial(sigma: f64, h: u64) -> Result<Self> {
        let m = GibbsModel::DirichletMultinomial { sigma, h };
        m.validate()?;
        Ok(m)
    }

    pub fn dirichlet(alpha: f64) -> Result<Self> {
        let m = GibbsModel::Dirichlet { alpha };
        m.validate()?;
        Ok(m)
    }

    pub fn aldous_pitman(gamma: f64) -> Result<Self> {
        let m = GibbsModel::AldousPitman { gamma };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            GibbsModel::DirichletMultinomial { sigma, h } => {
                if !(sigma < 0.0) || !sigma.is_finite() || h == 0 {
                    return domain(format!(
                        "Dirichlet-multinomial needs sigma < 0 and H >= 1, got sigma={sigma}, H={h}"
                    ));
                }
            }
            GibbsModel::Dirichlet { alpha } => {
                if !(alpha > 0.0) || !alpha.is_finite() {
                    return domain(format!("Dirichlet process needs alpha > 0, got {alpha}"));
                }
            }
            GibbsModel::AldousPitman { gamma } => {
                if !(gamma > 0.0) || !gamma.is_finite() {
                    return domain(format!(
                        "Aldous-Pitman process needs gamma > 0, got {gamma}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Discount parameter `σ`.
    pub fn sigma(&self) -> f64 {
        match *self {
            GibbsModel::DirichletMultinomial { sigma, .. } => sigma,
            GibbsModel::Dirichlet { .. } => 0.0,
            GibbsModel::AldousPitman { .. } => 0.5,
        }
    }

    /// The diversity parameter: `H`, `α` or `γ`.
    pub fn diversity(&self) -> f64 {
        match *self {
            GibbsModel::DirichletMultinomial { h, .. } => h as f64,
            GibbsModel::Dirichlet { alpha } => alpha,
            GibbsModel::AldousPitman { gamma } => gamma,
        }
    }

    fn coefficient_kind(&self) -> CoefficientKind {
        match *self {
            GibbsModel::Dirichlet { .. } => CoefficientKind::Stirling1,
            _ => CoefficientKind::GenFactorial {
                sigma: self.sigma(),
            },
        }
    }
}

fn check_nk(n: u64, k: u64) -> Result<()> {
    if k == 0 || k > n {
        return domain(format!("need 1 <= k <= n, got n={n}, k={k}"));
    }
    Ok(())
}

fn ap_prefactor(gamma: f64, n: u64, k: u64) -> f64 {
    (n as f64 - 0.5 * k as f64 - 0.5) * std::f64::consts::LN_2
        + (k as f64 - 1.0) * (0.5 * gamma).ln()
}

/// `ln V_{n,k}`; `-inf` for Dirichlet-multinomial when `k > H`.
///
/// ```
/// use sigmadiv::gibbs::{log_v, GibbsModel};
/// let dp = GibbsModel::dirichlet(1.0).unwrap();
/// assert!((log_v(&dp, 3, 3).unwrap() - (1.0f64 / 6.0).ln()).abs() < 1e-12);
/// ```
pub fn log_v(model: &GibbsModel, n: u64, k: u64) -> Result<f64> {
    model.validate()?;
    check_nk(n, k)?;
    Ok(match *model {
        GibbsModel::DirichletMultinomial { sigma, h } => {
            if k > h {
                return Ok(f64::NEG_INFINITY);
            }
            let s = -sigma;
            let hf = h as f64;
            (k as f64 - 1.0) * s.ln() + ln_gamma(hf)
                - ln_gamma(hf - k as f64 + 1.0)
                - ln_rising(hf * s + 1.0, n - 1)
        }
        GibbsModel::Dirichlet { alpha } => k as f64 * alpha.ln() - ln_rising(alpha, n),
        GibbsModel::AldousPitman { gamma } => {
            if n == 1 {
                return Ok(0.0);
            }
            let t = gamma * std::f64::consts::FRAC_1_SQRT_2;
            ap_prefactor(gamma, n, k) + log_hermite(k as f64 + 1.0 - 2.0 * n as f64, t)?
        }
    })
}

fn ladder_cache() -> &'static RwLock<HashMap<u64, Arc<HermiteLadder>>> {
    static CACHE: OnceLock<RwLock<HashMap<u64, Arc<HermiteLadder>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

/// Shared Hermite ladder at `t` covering at least order `-q_max`.
pub(crate) fn ladder_for(t: f64, q_max: u64) -> Result<Arc<HermiteLadder>> {
    if let Some(l) = ladder_cache()
        .read()
        .expect("cache poisoned")
        .get(&t.to_bits())
    {
        if l.q_max() >= q_max {
            return Ok(Arc::clone(l));
        }
    }
    let q = q_max.max(64).next_power_of_two();
    let l = Arc::new(HermiteLadder::new(t, q)?);
    let mut w = ladder_cache().write().expect("cache poisoned");
    let e = w.entry(t.to_bits()).or_insert_with(|| Arc::clone(&l));
    if e.q_max() < q_max {
        *e = Arc::clone(&l);
    }
    Ok(Arc::clone(e))
}

/// Fast repeated evaluation of `ln V_{n,k}` and the predictive ratios.
#[derive(Debug, Clone)]
pub struct WeightEvaluator {
    model: GibbsModel,
    ladder: Option<Arc<HermiteLadder>>,
}

impl WeightEvaluator {
    /// Prepares evaluation for sample sizes up to `n_max`.
    pub fn new(model: GibbsModel, n_max: u64) -> Result<Self> {
        model.validate()?;
        let ladder = match model {
            GibbsModel::AldousPitman { gamma } => Some(ladder_for(
                gamma * std::f64::consts::FRAC_1_SQRT_2,
                2 * n_max.max(1),
            )?),
            _ => None,
        };
        Ok(WeightEvaluator { model, ladder })
    }

    pub fn model(&self) -> &GibbsModel {
        &self.model
    }

    fn ensure(&mut self, n: u64) {
        if let (GibbsModel::AldousPitman { .. }, Some(l)) = (&self.model, &self.ladder) {
            if 2 * n > l.q_max() {
                let t = l.t();
                self.ladder = Some(ladder_for(t, 4 * n).expect("t validated"));
            }
        }
    }

    /// `ln V_{n,k}` for `1 <= k <= n`.
    pub fn log_v(&mut self, n: u64, k: u64) -> f64 {
        match self.model {
            GibbsModel::AldousPitman { gamma } => {
                if n == 1 {
                    return 0.0;
                }
                self.ensure(n);
                let l = self.ladder.as_ref().expect("ladder present");
                ap_prefactor(gamma, n, k) + l.log_h(2 * n - k - 1)
            }
            _ => log_v(&self.model, n, k).unwrap_or(f64::NEG_INFINITY),
        }
    }

    /// `V_{n+1,k+1} / V_{n,k}`, with `p_new = 1` for an empty sample.
    pub fn p_new(&mut self, n: u64, k: u64) -> f64 {
        if n == 0 {
            return 1.0;
        }
        match self.model {
            GibbsModel::Dirichlet { alpha } => alpha / (alpha + n as f64),
            GibbsModel::DirichletMultinomial { sigma, h } => {
                let s = -sigma;
                (h.saturating_sub(k)) as f64 * s / (h as f64 * s + n as f64)
            }
            GibbsModel::AldousPitman { .. } => {
                self.ensure(n + 1);
                let l = self.ladder.as_ref().expect("ladder present");
                let q = 2 * n - k - 1;
                (l.t().ln() + l.log_h(q + 1) - l.log_h(q)).exp()
            }
        }
    }

    /// `V_{n+1,k} / V_{n,k}`, the factor multiplying `n_j - σ`.
    pub fn reuse_factor(&mut self, n: u64, k: u64) -> f64 {
        match self.model {
            GibbsModel::Dirichlet { alpha } => 1.0 / (alpha + n as f64),
            GibbsModel::DirichletMultinomial { sigma, h } => 1.0 / (h as f64 * -sigma + n as f64),
            GibbsModel::AldousPitman { .. } => {
                self.ensure(n + 1);
                let l = self.ladder.as_ref().expect("ladder present");
                let q = 2 * n - k - 1;
                (std::f64::consts::LN_2 + l.log_h(q + 2) - l.log_h(q)).exp()
            }
        }
    }
}

/// `ln` of the exchangeable partition probability of `abundances`.
pub fn log_eppf(model: &GibbsModel, abundances: &[u64]) -> Result<f64> {
    if abundances.contains(&0) {
        return domain("abundances must be positive");
    }
    let n: u64 = abundances.iter().sum();
    let k = abundances.len() as u64;
    let lv = log_v(model, n, k)?;
    let a = 1.0 - model.sigma();
    Ok(lv
        + abundances
            .iter()
            .map(|&nj| ln_rising(a, nj - 1))
            .sum::<f64>())
}

/// Predictive probabilities after `n` observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveSplit {
    /// Probability that the next observation is a new taxon.
    pub p_new: f64,
    /// Probability that the next observation repeats taxon `j`.
    pub reuse_weights: Vec<f64>,
}

impl PredictiveSplit {
    /// Estimated sample coverage `1 - p_new`.
    pub fn coverage(&self) -> f64 {
        1.0 - self.p_new
    }
}

/// Predictive distribution of the next label given the abundances so far.
pub fn predictive(model: &GibbsModel, abundances: &[u64]) -> Result<PredictiveSplit> {
    model.validate()?;
    if abundances.contains(&0) {
        return domain("abundances must be positive");
    }
    let n: u64 = abundances.iter().sum();
    let k = abundances.len() as u64;
    let mut ev = WeightEvaluator::new(*model, n + 1)?;
    let p_new = ev.p_new(n, k);
    let f = if n == 0 { 0.0 } else { ev.reuse_factor(n, k) };
    let sigma = model.sigma();
    Ok(PredictiveSplit {
        p_new,
        reuse_weights: abundances
            .iter()
            .map(|&nj| f * (nj as f64 - sigma))
            .collect(),
    })
}

/// Sequential urn for a Gibbs-type prior.
///
/// Selecting an old taxon costs `O(1)` on average: draw a past observation
/// uniformly, which picks taxon `j` with probability `n_j / n`, and correct
/// toward `n_j - σ`.
#[derive(Debug, Clone)]
pub struct Urn {
    eval: WeightEvaluator,
    counts: Vec<u64>,
    obs: Vec<u32>,
}

impl Urn {
    pub fn new(model: GibbsModel, capacity: u64) -> Result<Self> {
        Ok(Urn {
            eval: WeightEvaluator::new(model, capacity)?,
            counts: Vec::new(),
            obs: Vec::with_capacity(capacity.min(1 << 24) as usize),
        })
    }

    pub fn n(&self) -> u64 {
        self.obs.len() as u64
    }

    pub fn k(&self) -> u64 {
        self.counts.len() as u64
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn labels(&self) -> &[u32] {
        &self.obs
    }

    /// Draws the next label and returns its taxon index.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let (n, k) = (self.n(), self.k());
        let p_new = self.eval.p_new(n, k);
        let j = if rng.random::<f64>() < p_new {
            self.counts.push(0);
            self.counts.len() - 1
        } else {
            self.pick_old(rng)
        };
        self.counts[j] += 1;
        self.obs.push(j as u32);
        j
    }

    fn pick_old<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.obs.len();
        let uniform_obs = |rng: &mut R| self.obs[rng.random_range(0..n)] as usize;
        match *self.eval.model() {
            GibbsModel::Dirichlet { .. } => uniform_obs(rng),
            GibbsModel::DirichletMultinomial { sigma, .. } => {
                // n_j + |σ| = mixture of "observation" mass n and "taxon" mass k|σ|
                let s = -sigma;
                let k = self.counts.len();
                if rng.random::<f64>() * (n as f64 + k as f64 * s) < n as f64 {
                    uniform_obs(rng)
                } else {
                    rng.random_range(0..k)
                }
            }
            GibbsModel::AldousPitman { .. } => loop {
                let j = uniform_obs(rng);
                let nj = self.counts[j] as f64;
                if rng.random::<f64>() * nj < nj - 0.5 {
                    return j;
                }
            },
        }
    }
}

/// Samples `n_steps` labels from the urn scheme.
pub fn urn_sample(model: &GibbsModel, n_steps: u64, seed: u64) -> Result<ObservationStream> {
    if n_steps == 0 {
        return domain("urn_sample needs n_steps >= 1");
    }
    let mut urn = Urn::new(*model, n_steps)?;
    let mut rng = chain_rng(seed, 0);
    for _ in 0..n_steps {
        urn.step(&mut rng);
    }
    Ok(ObservationStream {
        labels: urn.labels().iter().map(|&j| j as u64).collect(),
    })
}

/// Default bound on sample sizes for exact pmfs.
pub const DEFAULT_PMF_LIMIT: u64 = 10_000;

/// Prior pmf of `K_n`, returned for `k = 1..=n` (index `k - 1`).
///
/// Values are not renormalized, so their sum checks the computation.
pub fn prior_kn_pmf(model: &GibbsModel, n: u64) -> Result<Vec<f64>> {
    model.validate()?;
    if n == 0 {
        return domain("prior_kn_pmf needs n >= 1");
    }
    if n > DEFAULT_PMF_LIMIT {
        return Err(Error::TableSizeExceeded {
            requested: n,
            limit: DEFAULT_PMF_LIMIT,
        });
    }
    let row = coefficient_row(model.coefficient_kind(), n)?;
    let mut ev = WeightEvaluator::new(*model, n)?;
    Ok((1..=n)
        .map(|k| {
            let lv = ev.log_v(n, k);
            let c = row[k as usize];
            if c.is_zero() || lv == f64::NEG_INFINITY {
                0.0
            } else {
                (lv + c.log_magnitude).exp() * f64::from(c.sign)
            }
        })
        .collect())
}

/// Posterior pmf of the number of new taxa `K_m^{(n)}` in `m` further draws,
/// returned for `j = 0..=m`.
pub fn posterior_km_pmf(model: &GibbsModel, n: u64, k: u64, m: u64) -> Result<Vec<f64>> {
    model.validate()?;
    check_nk(n, k)?;
    if m == 0 {
        return domain("posterior_km_pmf needs m >= 1");
    }
    if m > DEFAULT_PMF_LIMIT {
        return Err(Error::TableSizeExceeded {
            requested: m,
            limit: DEFAULT_PMF_LIMIT,
        });
    }
    let sigma = model.sigma();
    let kind = match model {
        GibbsModel::Dirichlet { .. } => CoefficientKind::NoncentralStirling1 { shift: n as f64 },
        _ => CoefficientKind::NoncentralGenFactorial {
            sigma,
            shift: -(n as f64) + k as f64 * sigma,
        },
    };
    let row = coefficient_row(kind, m)?;
    let mut ev = WeightEvaluator::new(*model, n + m)?;
    let base = ev.log_v(n, k);
    Ok((0..=m)
        .map(|j| {
            let lv = ev.log_v(n + m, k + j);
            let c = row[j as usize];
            if c.is_zero() || lv == f64::NEG_INFINITY {
                0.0
            } else {
                (lv - base + c.log_magnitude).exp() * f64::from(c.sign)
            }
        })
        .collect())
}

/// Monte Carlo settings for quantities without closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarlo {
    pub replicates: usize,
    pub seed: u64,
}

impl Default for MonteCarlo {
    fn default() -> Self {
        MonteCarlo {
            replicates: 1000,
            seed: 0,
        }
    }
}

/// Expected number of distinct taxa at a given sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub size: u64,
    pub expected: f64,
    /// Monte Carlo standard error, when the value is simulated.
    pub std_error: Option<f64>,
}

const CHUNK: usize = 16;

/// Runs `reps` replicates in fixed-size chunks so that floating-point sums do
/// not depend on the thread count. Each replicate fills `out` (length `width`)
/// with its values; returns per-coordinate sums and sums of squares.
fn replicate_moments<F>(reps: usize, width: usize, seed: u64, f: F) -> (Vec<f64>, Vec<f64>)
where
    F: Fn(&mut rand_chacha::ChaCha8Rng, &mut [f64]) + Sync,
{
    let chunks: Vec<usize> = (0..reps.div_ceil(CHUNK)).collect();
    let partial: Vec<(Vec<f64>, Vec<f64>)> = chunks
        .par_iter()
        .map(|&c| {
            let mut s = vec![0.0; width];
            let mut s2 = vec![0.0; width];
            let mut buf = vec![0.0; width];
            for r in c * CHUNK..((c + 1) * CHUNK).min(reps) {
                let mut rng = chain_rng(seed, r as u64);
                f(&mut rng, &mut buf);
                for i in 0..width {
                    s[i] += buf[i];
                    s2[i] += buf[i] * buf[i];
                }
            }
            (s, s2)
        })
        .collect();
    let mut s = vec![0.0; width];
    let mut s2 = vec![0.0; width];
    for (a, b) in partial {
        for i in 0..width {
            s[i] += a[i];
            s2[i] += b[i];
        }
    }
    (s, s2)
}

fn mc_points(sizes: &[u64], s: &[f64], s2: &[f64], reps: usize) -> Vec<CurvePoint> {
    let r = reps as f64;
    sizes
        .iter()
        .enumerate()
        .map(|(i, &size)| {
            let mean = s[i] / r;
            let var = if reps > 1 {
                ((s2[i] - r * mean * mean) / (r - 1.0)).max(0.0)
            } else {
                0.0
            };
            CurvePoint {
                size,
                expected: mean,
                std_error: Some((var / r).sqrt()),
            }
        })
        .collect()
}

/// Simulates the Markov chain of `K` from `(n0, k0)`, recording `K` at each
/// of the increasing `sizes`.
fn simulate_k_path<R: Rng + ?Sized>(
    ev: &mut WeightEvaluator,
    n0: u64,
    k0: u64,
    sizes: &[u64],
    rng: &mut R,
    out: &mut [f64],
) {
    let (mut n, mut k) = (n0, k0);
    for (slot, &target) in out.iter_mut().zip(sizes) {
        while n < target {
            if rng.random::<f64>() < ev.p_new(n, k) {
                k += 1;
            }
            n += 1;
        }
        *slot = k as f64;
    }
}

fn check_sizes(sizes: &[u64], min: u64) -> Result<()> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return domain("curve sizes must be strictly increasing");
    }
    if sizes.first().is_some_and(|&s| s < min) {
        return domain(format!("curve sizes must be at least {min}"));
    }
    Ok(())
}

/// Expected `K_i` under the prior at each of the increasing `sizes`.
pub fn rarefaction_at(
    model: &GibbsModel,
    sizes: &[u64],
    mc: MonteCarlo,
) -> Result<Vec<CurvePoint>> {
    model.validate()?;
    check_sizes(sizes, 1)?;
    let exact = |size: u64, expected: f64| CurvePoint {
        size,
        expected,
        std_error: None,
    };
    Ok(match *model {
        GibbsModel::Dirichlet { alpha } => sizes
            .iter()
            .map(|&i| exact(i, alpha * (psi(alpha + i as f64) - psi(alpha))))
            .collect(),
        GibbsModel::DirichletMultinomial { sigma, h } => {
            let (s, hf) = (-sigma, h as f64);
            sizes
                .iter()
                .map(|&i| {
                    let r = (ln_rising0(hf * s - s, i) - ln_rising(hf * s, i)).exp();
                    exact(i, hf - hf * r)
                })
                .collect()
        }
        GibbsModel::AldousPitman { .. } => {
            let n_max = sizes.last().copied().unwrap_or(1);
            let ev = WeightEvaluator::new(*model, n_max + 1)?;
            let (s, s2) = replicate_moments(mc.replicates, sizes.len(), mc.seed, |rng, out| {
                simulate_k_path(&mut ev.clone(), 0, 0, sizes, rng, out)
            });
            mc_points(sizes, &s, &s2, mc.replicates)
        }
    })
}

/// Expected `K_i` for `i = 1..=n`.
pub fn rarefaction(model: &GibbsModel, n: u64, mc: MonteCarlo) -> Result<Vec<CurvePoint>> {
    let sizes: Vec<u64> = (1..=n).collect();
    rarefaction_at(model, &sizes, mc)
}

/// Expected `K_{n+i}` given `k` taxa in `n` observations, at `n + i` for each
/// increasing `i` in `steps`.
pub fn extrapolation_at(
    model: &GibbsModel,
    n: u64,
    k: u64,
    steps: &[u64],
    mc: MonteCarlo,
) -> Result<Vec<CurvePoint>> {
    model.validate()?;
    check_nk(n, k)?;
    check_sizes(steps, 1)?;
    let nf = n as f64;
    let exact = |i: u64, expected: f64| CurvePoint {
        size: n + i,
        expected,
        std_error: None,
    };
    Ok(match *model {
        GibbsModel::Dirichlet { alpha } => steps
            .iter()
            .map(|&i| {
                exact(
                    i,
                    k as f64 + alpha * (psi(alpha + nf + i as f64) - psi(alpha + nf)),
                )
            })
            .collect(),
        GibbsModel::DirichletMultinomial { sigma, h } => {
            if k > h {
                return domain(format!("k = {k} exceeds H = {h}"));
            }
            let (s, hf) = (-sigma, h as f64);
            steps
                .iter()
                .map(|&i| {
                    let r = (ln_rising(nf + hf * s - s, i) - ln_rising(nf + hf * s, i)).exp();
                    exact(i, hf - (hf - k as f64) * r)
                })
                .collect()
        }
        GibbsModel::AldousPitman { .. } => {
            let sizes: Vec<u64> = steps.iter().map(|&i| n + i).collect();
            let ev = WeightEvaluator::new(*model, n + steps.last().copied().unwrap_or(1) + 1)?;
            let (s, s2) = replicate_moments(mc.replicates, sizes.len(), mc.seed, |rng, out| {
                simulate_k_path(&mut ev.clone(), n, k, &sizes, rng, out)
            });
            mc_points(&sizes, &s, &s2, mc.replicates)
        }
    })
}

/// Expected `K_{n+i}` for `i = 1..=m`.
pub fn extrapolation(
    model: &GibbsModel,
    n: u64,
    k: u64,
    m: u64,
    mc: MonteCarlo,
) -> Result<Vec<CurvePoint>> {
    let steps: Vec<u64> = (1..=m).collect();
    extrapolation_at(model, n, k, &steps, mc)
}

/// Expected frequency counts `E(M_{r,n})` for `r = 1..=r_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FreqCountExpectation {
    pub values: Vec<f64>,
    pub std_errors: Option<Vec<f64>>,
    /// `true` when the values are Monte Carlo estimates.
    pub approximate: bool,
}

/// Expected number of taxa observed exactly `r` times in a sample of size `n`.
pub fn expected_freq_counts(
    model: &GibbsModel,
    n: u64,
    r_max: u64,
    mc: MonteCarlo,
) -> Result<FreqCountExpectation> {
    model.validate()?;
    if r_max == 0 || r_max > n {
        return domain(format!("need 1 <= r_max <= n, got r_max={r_max}, n={n}"));
    }
    if let GibbsModel::Dirichlet { alpha } = *model {
        let la = alpha.ln();
        let tail = ln_rising(alpha, n);
        let values = (1..=r_max)
            .map(|r| {
                let lb = log_binomial(n, r).expect("r <= n");
                (la + ln_rising(alpha, n - r) - tail + lb + ln_gamma(r as f64)).exp()
            })
            .collect();
        return Ok(FreqCountExpectation {
            values,
            std_errors: None,
            approximate: false,
        });
    }
    let width = r_max as usize;
    let (s, s2) = replicate_moments(mc.replicates, width, mc.seed, |rng, out| {
        let mut urn = Urn::new(*model, n).expect("model validated");
        for _ in 0..n {
            urn.step(rng);
        }
        out.fill(0.0);
        for &c in urn.counts() {
            if c <= r_max {
                out[c as usize - 1] += 1.0;
            }
        }
    });
    let sizes: Vec<u64> = (1..=r_max).collect();
    let pts = mc_points(&sizes, &s, &s2, mc.replicates);
    Ok(FreqCountExpectation {
        values: pts.iter().map(|p| p.expected).collect(),
        std_errors: Some(pts.iter().map(|p| p.std_error.unwrap_or(0.0)).collect()),
        approximate: true,
    })
}

/// Prior expectations of the Simpson and Shannon indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityIndices {
    /// `E(Σ π_h²) = P(X_1 = X_2)`.
    pub simpson: f64,
    /// `E(-Σ π_h ln π_h)`.
    pub shannon: f64,
    pub shannon_std_error: Option<f64>,
    /// `true` when Shannon is a Monte Carlo estimate.
    pub shannon_approximate: bool,
}

/// Stick-breaking residuals stop once below this mass.
pub const AP_STICK_TOLERANCE: f64 = 1e-7;

/// Upper bound on the number of simulated sticks.
pub const AP_STICK_MAX: usize = 2_000_000;

fn shannon_draw<R: Rng + ?Sized>(model: &GibbsModel, rng: &mut R) -> f64 {
    match *model {
        GibbsModel::DirichletMultinomial { sigma, h } => {
            let g = Gamma::new(-sigma, 1.0).expect("sigma < 0");
            let w: Vec<f64> = (0..h).map(|_| g.sample(rng)).collect();
            let total: f64 = w.iter().sum();
            -w.iter()
                .filter(|&&x| x > 0.0)
                .map(|&x| {
                    let p = x / total;
                    p * p.ln()
                })
                .sum::<f64>()
        }
        GibbsModel::AldousPitman { gamma } => {
            let c = 0.5 * gamma * gamma;
            let (mut s, mut prev, mut acc) = (0.0, 1.0, 0.0);
            for _ in 0..AP_STICK_MAX {
                let y: f64 = StandardNormal.sample(rng);
                s += y * y;
                let r = c / (c + s);
                let p = prev - r;
                if p > 0.0 {
                    acc -= p * p.ln();
                }
                prev = r;
                if r < AP_STICK_TOLERANCE {
                    break;
                }
            }
            acc
        }
        GibbsModel::Dirichlet { .. } => unreachable!("closed form"),
    }
}

/// Expected Simpson and Shannon indices under the prior.
///
/// Simpson is exact for every family. Shannon is exact for the Dirichlet
/// process and simulated from the constructive weights otherwise.
pub fn diversity_indices(model: &GibbsModel, mc: MonteCarlo) -> Result<DiversityIndices> {
    model.validate()?;
    let simpson = log_v(model, 2, 1)?.exp() * (1.0 - model.sigma());
    if let GibbsModel::Dirichlet { alpha } = *model {
        return Ok(DiversityIndices {
            simpson,
            shannon: psi(alpha + 1.0) - psi(1.0),
            shannon_std_error: None,
            shannon_approximate: false,
        });
    }
    let (s, s2) = replicate_moments(mc.replicates, 1, mc.seed, |rng, out| {
        out[0] = shannon_draw(model, rng);
    });
    let p = mc_points(&[0], &s, &s2, mc.replicates);
    Ok(DiversityIndices {
        simpson,
        shannon: p[0].expected,
        shannon_std_error: p[0].std_error,
        shannon_approximate: true,
    })
}

/// Posterior pmf of `H` for the Dirichlet-multinomial with fixed `σ`, under a
/// uniform prior on `{1, ..., h_max}`. Index `h - 1`.
pub fn dm_posterior_h(sigma: f64, n: u64, k: u64, h_max: u64) -> Result<Vec<f64>> {
    check_nk(n, k)?;
    if h_max < k {
        return domain(format!("h_max = {h_max} is below k = {k}"));
    }
    let logs: Vec<f64> = (1..=h_max)
        .map(|h| log_v(&GibbsModel::dirichlet_multinomial(sigma, h)?, n, k))
        .collect::<Result<_>>()?;
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / z).collect())
}
