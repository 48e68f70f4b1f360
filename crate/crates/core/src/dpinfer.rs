//! Coarsened Bayesian inference for the Dirichlet-process diversity `α`.
//!
//! The Stirling-gamma prior `SG(a, b, m)` has density proportional to
//! `α^{a-1} / ((α)_m)^b`. Raising the likelihood `α^k / (α)_n` to a power
//! `ρ ∈ (0, 1]` keeps the posterior in closed form:
//! `α^{a+ρk-1} / (((α)_m)^b ((α)_n)^ρ)`, which is `SG(a+ρk, b+ρ, n)` when `m = n`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draws::PosteriorDraws;
use crate::error::{domain, Error, Result};
use crate::sampling::{
    autocorrelation, chain_rng, effective_sample_size, slice_step, ChainDiagnostics,
};
use crate::specfun::{ln_rising, psi};

/// Stirling-gamma prior `SG(a, b, n_ref)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StirlingGammaSpec {
    pub a: f64,
    pub b: f64,
    pub n_ref: u64,
}

impl StirlingGammaSpec {
    /// Requires `1 <= a/b <= n_ref`.
    pub fn new(a: f64, b: f64, n_ref: u64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) || !a.is_finite() || !b.is_finite() || n_ref == 0 {
            return domain(format!(
                "Stirling-gamma needs a, b > 0 and n_ref >= 1, got a={a}, b={b}, n_ref={n_ref}"
            ));
        }
        let loc = a / b;
        if !(1.0..=n_ref as f64).contains(&loc) {
            return domain(format!(
                "Stirling-gamma needs 1 <= a/b <= n_ref, got a/b={loc}, n_ref={n_ref}"
            ));
        }
        Ok(StirlingGammaSpec { a, b, n_ref })
    }
}

/// Coarsened posterior of `α` given `k` taxa among `n` observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarsenedPosterior {
    pub prior: StirlingGammaSpec,
    pub n: u64,
    pub k: u64,
    pub rho: f64,
}

impl CoarsenedPosterior {
    pub fn new(prior: StirlingGammaSpec, n: u64, k: u64, rho: f64) -> Result<Self> {
        if k == 0 || k > n {
            return domain(format!("need 1 <= k <= n, got n={n}, k={k}"));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return domain(format!("rho must lie in (0, 1], got {rho}"));
        }
        let p = CoarsenedPosterior { prior, n, k, rho };
        p.mode_log()?;
        Ok(p)
    }

    /// The prior itself, as a posterior with no data.
    pub fn prior_only(prior: StirlingGammaSpec) -> Self {
        CoarsenedPosterior {
            prior,
            n: 0,
            k: 0,
            rho: 0.0,
        }
    }

    /// Unnormalized log density of `α`.
    pub fn log_density(&self, alpha: f64) -> f64 {
        if !(alpha > 0.0) {
            return f64::NEG_INFINITY;
        }
        let StirlingGammaSpec { a, b, n_ref } = self.prior;
        (a + self.rho * self.k as f64 - 1.0) * alpha.ln()
            - b * ln_rising(alpha, n_ref)
            - self.rho * ln_rising(alpha, self.n)
    }

    /// Unnormalized log density of `x = ln α`.
    pub fn log_density_log(&self, x: f64) -> f64 {
        self.log_density(x.exp()) + x
    }

    fn dlog(&self, x: f64) -> f64 {
        let al = x.exp();
        let e = |m: u64| {
            if m == 0 {
                0.0
            } else {
                al * (psi(al + m as f64) - psi(al))
            }
        };
        self.prior.a + self.rho * self.k as f64
            - self.prior.b * e(self.prior.n_ref)
            - self.rho * e(self.n)
    }

    /// Mode of the density of `ln α`.
    pub fn mode_log(&self) -> Result<f64> {
        let (mut lo, mut hi) = (-30.0f64, 35.0f64);
        if self.dlog(lo) <= 0.0 || self.dlog(hi) >= 0.0 {
            return domain(
                "coarsened posterior is improper or its mode lies outside (1e-13, 1e15)",
            );
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.dlog(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-12 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    fn curvature_scale(&self, x0: f64) -> f64 {
        let h = 1e-4;
        let c = -(self.dlog(x0 + h) - self.dlog(x0 - h)) / (2.0 * h);
        if c > 0.0 && c.is_finite() {
            1.0 / c.sqrt()
        } else {
            1.0
        }
    }
}

const CHAINS: usize = 4;
const PILOT: usize = 2000;
const MAX_THIN: usize = 50;

fn run_chain<R: Rng>(
    post: &CoarsenedPosterior,
    x0: f64,
    width: f64,
    burn: usize,
    thin: usize,
    draws: usize,
    rng: &mut R,
) -> Vec<f64> {
    let f = |x: f64| post.log_density_log(x);
    let mut x = x0;
    for _ in 0..burn {
        x = slice_step(x, &f, width, rng);
    }
    let mut out = Vec::with_capacity(draws);
    for _ in 0..draws {
        for _ in 0..thin {
            x = slice_step(x, &f, width, rng);
        }
        out.push(x);
    }
    out
}

/// Samples `α` from the coarsened posterior by slice sampling `ln α`.
///
/// A pilot run sets the thinning so that lag-one autocorrelation falls below
/// 0.05; four chains then run in parallel on independent streams.
pub fn sg_posterior_sample(
    post: &CoarsenedPosterior,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    if n_draws == 0 {
        return domain("n_draws must be positive");
    }
    let x0 = post.mode_log()?;
    let width = 2.0 * post.curvature_scale(x0);
    let mut pilot_rng = chain_rng(seed, u64::MAX);
    let pilot = run_chain(post, x0, width, 200, 1, PILOT, &mut pilot_rng);
    let r1 = autocorrelation(&pilot, 1);
    let thin = if r1 <= 0.05 {
        1
    } else {
        ((0.05f64.ln() / r1.ln()).ceil() as usize).clamp(1, MAX_THIN)
    };
    let chains = CHAINS.min(n_draws);
    let per: Vec<usize> = (0..chains)
        .map(|c| n_draws / chains + usize::from(c < n_draws % chains))
        .collect();
    let runs: Vec<Vec<f64>> = per
        .par_iter()
        .enumerate()
        .map(|(c, &m)| {
            let mut rng = chain_rng(seed, c as u64);
            run_chain(post, x0, width, 100 * thin, thin, m, &mut rng)
        })
        .collect();
    let ess: f64 = runs.iter().map(|r| effective_sample_size(r)).sum();
    let lag1 = runs
        .iter()
        .map(|r| autocorrelation(r, 1) * r.len() as f64)
        .sum::<f64>()
        / n_draws as f64;
    let values: Vec<f64> = runs.into_iter().flatten().map(f64::exp).collect();
    let mut d = PosteriorDraws::new("alpha", values);
    d.diagnostics = Some(ChainDiagnostics {
        ess,
        lag1_autocorrelation: lag1,
        thin,
        chains,
        acceptance_rate: None,
        converged: ess >= n_draws as f64 / 10.0,
    });
    Ok(d)
}

/// Draws from the prior `SG(a, b, n_ref)`.
pub fn sg_prior_sample(
    prior: StirlingGammaSpec,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    sg_posterior_sample(&CoarsenedPosterior::prior_only(prior), n_draws, seed)
}

/// Total population size prior `N ~ Uniform(N̂(1-w), N̂(1+w))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PopulationPrior {
    pub n_hat: f64,
    pub half_width: f64,
}

impl PopulationPrior {
    pub fn new(n_hat: f64, half_width: f64) -> Result<Self> {
        if !(n_hat >= 1.0) || !n_hat.is_finite() || !(0.0..1.0).contains(&half_width) {
            return domain(format!(
                "population prior needs N_hat >= 1 and half-width in [0, 1), got {n_hat}, {half_width}"
            ));
        }
        Ok(PopulationPrior { n_hat, half_width })
    }
}

/// Posterior draws of the total richness `K_N` with the `α` draws behind them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichnessPrediction {
    pub k_total: PosteriorDraws,
    pub alpha: PosteriorDraws,
    pub population: PopulationPrior,
}

/// Poisson mean of the number of new taxa between `n` and `big_n` observations.
pub fn new_taxa_mean(alpha: f64, n: u64, big_n: f64) -> f64 {
    if big_n <= n as f64 {
        return 0.0;
    }
    alpha * (psi(alpha + big_n) - psi(alpha + n as f64))
}

/// `K_N = k + Poisson(α(ψ(α+N) - ψ(α+n)))` for joint draws of `α` and `N`.
pub fn richness_posterior(
    post: &CoarsenedPosterior,
    population: PopulationPrior,
    n_draws: usize,
    seed: u64,
) -> Result<RichnessPrediction> {
    if population.n_hat < post.n as f64 {
        return domain(format!(
            "N_hat = {} is below the sample size n = {}",
            population.n_hat, post.n
        ));
    }
    let alpha = sg_posterior_sample(post, n_draws, seed)?;
    Ok(richness_from_alpha(post.n, post.k, alpha, population, seed))
}

/// Richness draws for given `α` draws.
pub fn richness_from_alpha(
    n: u64,
    k: u64,
    alpha: PosteriorDraws,
    population: PopulationPrior,
    seed: u64,
) -> RichnessPrediction {
    let mut rng = chain_rng(seed, 1 << 32);
    let (lo, hi) = (
        population.n_hat * (1.0 - population.half_width),
        population.n_hat * (1.0 + population.half_width),
    );
    let values = alpha
        .values
        .iter()
        .map(|&a| {
            let u: f64 = rng.random();
            let big_n = (lo + (hi - lo) * u).round().max(n as f64);
            let lambda = new_taxa_mean(a, n, big_n);
            let extra = if lambda > 0.0 {
                Poisson::new(lambda)
                    .expect("positive finite mean")
                    .sample(&mut rng)
            } else {
                0.0
            };
            k as f64 + extra
        })
        .collect();
    RichnessPrediction {
        k_total: PosteriorDraws::new("K_N", values),
        alpha,
        population,
    }
}

/// Posterior means of the Simpson and Shannon indices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiversityTransforms {
    pub simpson_mean: f64,
    pub shannon_mean: f64,
}

/// Averages `1/(1+α)` and `ψ(α+1) - ψ(1)` over draws of `α`.
pub fn diversity_transforms(alpha_draws: &[f64]) -> Result<DiversityTransforms> {
    if alpha_draws.is_empty() {
        return Err(Error::Empty("no alpha draws".into()));
    }
    let m = alpha_draws.len() as f64;
    let psi1 = psi(1.0);
    Ok(DiversityTransforms {
        simpson_mean: alpha_draws.iter().map(|a| 1.0 / (1.0 + a)).sum::<f64>() / m,
        shannon_mean: alpha_draws
            .iter()
            .map(|&a| psi(a + 1.0) - psi1)
            .sum::<f64>()
            / m,
    })
}

/// Posterior expected log-likelihood `E(k ln α - ln (α)_n)` for each `ρ`.
pub fn calibration_curve(
    prior: StirlingGammaSpec,
    n: u64,
    k: u64,
    rho_grid: &[f64],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    rho_grid
        .iter()
        .map(|&rho| {
            let post = CoarsenedPosterior::new(prior, n, k, rho)?;
            let d = sg_posterior_sample(&post, n_draws, seed)?;
            let ll = d
                .values
                .iter()
                .map(|&a| k as f64 * a.ln() - ln_rising(a, n))
                .sum::<f64>()
                / d.len() as f64;
            Ok((rho, ll))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Quantiles of the density of `ln α` by trapezoid integration on a grid.
    fn grid_quantiles(post: &CoarsenedPosterior, ps: &[f64]) -> Vec<f64> {
        let x0 = post.mode_log().unwrap();
        let (lo, hi) = (x0 - 8.0, x0 + 8.0);
        let m = 200_000;
        let h = (hi - lo) / m as f64;
        let l0 = post.log_density_log(x0);
        let w: Vec<f64> = (0..=m)
            .map(|i| (post.log_density_log(lo + i as f64 * h) - l0).exp())
            .collect();
        let mut cdf = vec![0.0; m + 1];
        for i in 1..=m {
            cdf[i] = cdf[i - 1] + 0.5 * h * (w[i] + w[i - 1]);
        }
        let z = cdf[m];
        ps.iter()
            .map(|&p| {
                let i = cdf.partition_point(|&c| c < p * z);
                (lo + i as f64 * h).exp()
            })
            .collect()
    }

    #[test]
    fn slice_sampler_matches_grid() {
        let prior = StirlingGammaSpec::new(1.0, 0.1, 50).unwrap();
        let post = CoarsenedPosterior::new(prior, 50, 10, 1.0).unwrap();
        let d = sg_posterior_sample(&post, 40_000, 11).unwrap();
        let ps = [0.05, 0.25, 0.5, 0.75, 0.95];
        let g = grid_quantiles(&post, &ps);
        for (p, q) in ps.iter().zip(g) {
            let s = d.quantile(*p);
            assert!((s / q - 1.0).abs() < 0.01, "p={p} sampler={s} grid={q}");
        }
        let diag = d.diagnostics.unwrap();
        assert!(diag.converged);
        assert!(diag.lag1_autocorrelation < 0.1);
    }

    #[test]
    fn deterministic_given_seed() {
        let prior = StirlingGammaSpec::new(2.0, 0.5, 100).unwrap();
        let post = CoarsenedPosterior::new(prior, 100, 12, 0.5).unwrap();
        let a = sg_posterior_sample(&post, 500, 4).unwrap();
        let b = sg_posterior_sample(&post, 500, 4).unwrap();
        assert_eq!(a.values, b.values);
        let c = sg_posterior_sample(&post, 500, 5).unwrap();
        assert_ne!(a.values, c.values);
    }

    #[test]
    fn tiny_rho_tends_to_prior() {
        let prior = StirlingGammaSpec::new(2.0, 0.5, 100).unwrap();
        let post = CoarsenedPosterior::new(prior, 1000, 300, 1e-9).unwrap();
        let ps = [0.1, 0.5, 0.9];
        let a = grid_quantiles(&post, &ps);
        let b = grid_quantiles(&CoarsenedPosterior::prior_only(prior), &ps);
        for (x, y) in a.iter().zip(b) {
            assert!((x / y - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn prior_validation() {
        assert!(StirlingGammaSpec::new(1.0, 2.0, 10).is_err());
        assert!(StirlingGammaSpec::new(100.0, 1.0, 10).is_err());
        let prior = StirlingGammaSpec::new(1.0, 0.1, 20).unwrap();
        assert!(CoarsenedPosterior::new(prior, 20, 5, 0.0).is_err());
        assert!(CoarsenedPosterior::new(prior, 20, 5, 1.5).is_err());
    }

    #[test]
    fn transforms() {
        let t = diversity_transforms(&[0.0]).unwrap();
        assert_eq!((t.simpson_mean, t.shannon_mean), (1.0, 0.0));
        let t = diversity_transforms(&[751.0]).unwrap();
        assert!((t.simpson_mean - 1.0 / 752.0).abs() < 1e-15);
    }

    #[test]
    fn richness_point_mass() {
        let alpha = PosteriorDraws::new("alpha", vec![5.0; 20]);
        let pop = PopulationPrior::new(100.0, 0.0).unwrap();
        let r = richness_from_alpha(100, 17, alpha, pop, 1);
        assert!(r.k_total.values.iter().all(|&v| v == 17.0));
    }

    #[test]
    fn calibration_peaks_at_one() {
        let prior = StirlingGammaSpec::new(1.0, 0.01, 1000).unwrap();
        let c = calibration_curve(prior, 1000, 100, &[0.01, 0.1, 1.0], 4000, 2).unwrap();
        assert_eq!(c.len(), 3);
        assert!(c[2].1 > c[1].1 && c[2].1 > c[0].1);
    }
}
