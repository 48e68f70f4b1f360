//! Inference for the Aldous-Pitman process.
//!
//! With `t = γ/√2` the weights satisfy
//! `V_{n,k} = 2^{n-k/2-1/2} (γ/2)^{k-1} / Γ(2n-k-1) ∫ u^{2n-k-2} e^{-u²/2 - t u} du`,
//! so adding the latent `U` makes `γ` conditionally gamma and `U` log-concave.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::draws::PosteriorDraws;
use crate::error::{domain, Result};
use crate::gibbs::{log_v, GibbsModel};
use crate::sampling::{
    autocorrelation, chain_rng, effective_sample_size, slice_step, ChainDiagnostics, RouSampler,
};
use crate::specfun::{ln_gamma, ln_rising, log_hermite};

const SQRT2: f64 = std::f64::consts::SQRT_2;

/// Hermite argument `γ/√2`.
pub fn hermite_arg(gamma: f64) -> f64 {
    gamma / SQRT2
}

/// Stick-breaking residuals `R_0 = 1 > R_1 > ...` of the Aldous-Pitman weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApWeights {
    pub residuals: Vec<f64>,
}

impl ApWeights {
    /// `π_h = R_{h-1} - R_h` for `h = 1..=H`.
    pub fn weights(&self) -> Vec<f64> {
        self.residuals.windows(2).map(|w| w[0] - w[1]).collect()
    }

    /// Mass beyond the truncation, `R_H`.
    pub fn tail_mass(&self) -> f64 {
        *self.residuals.last().expect("R_0 always present")
    }
}

/// Simulates `H` sticks with `R_h = (γ²/2) / (γ²/2 + Σ_{j<=h} Y_j²)`.
pub fn ap_stick_sample<R: Rng + ?Sized>(
    gamma: f64,
    h_trunc: usize,
    rng: &mut R,
) -> Result<ApWeights> {
    if !(gamma > 0.0) || h_trunc == 0 {
        return domain("ap_stick_sample needs gamma > 0 and H >= 1");
    }
    let c = 0.5 * gamma * gamma;
    let mut s = 0.0;
    let mut residuals = Vec::with_capacity(h_trunc + 1);
    residuals.push(1.0);
    for _ in 0..h_trunc {
        let y: f64 = StandardNormal.sample(rng);
        s += y * y;
        residuals.push(c / (c + s));
    }
    Ok(ApWeights { residuals })
}

/// Gamma prior on `γ`, parametrized by shape and rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && rate > 0.0) || !shape.is_finite() || !rate.is_finite() {
            return domain(format!(
                "gamma prior needs shape, rate > 0, got {shape}, {rate}"
            ));
        }
        Ok(GammaPrior { shape, rate })
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

/// How coarsening enters the latent-variable conditional.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoarseningMode {
    /// The whole augmented likelihood is raised to `ρ`: `u^{ρ(2n-k-2)}`.
    #[default]
    Joint,
    /// Only the `2n` part of the power of `u` is tempered: `u^{2nρ-k-2}`.
    PartialPower,
}

/// State of the augmented Gibbs sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApAugmentedState {
    pub gamma: f64,
    pub u: f64,
    pub n: u64,
    pub k: u64,
    pub rho: f64,
}

fn check_nk(n: u64, k: u64) -> Result<()> {
    if n < 2 || k == 0 || k > n {
        return domain(format!(
            "augmented sampler needs n >= 2 and 1 <= k <= n, got n={n}, k={k}"
        ));
    }
    Ok(())
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho <= 1.0) {
        return domain(format!("rho must lie in (0, 1], got {rho}"));
    }
    Ok(())
}

/// Power of `u` in the tempered augmented likelihood.
pub(crate) fn u_power(n: u64, k: u64, rho: f64, mode: CoarseningMode) -> f64 {
    let p = 2.0 * n as f64 - k as f64 - 2.0;
    match mode {
        CoarseningMode::Joint => rho * p,
        CoarseningMode::PartialPower => 2.0 * n as f64 * rho - k as f64 - 2.0,
    }
}

fn xlny(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Tempered log of the joint density of the partition and `U`.
pub fn log_augmented_likelihood(state: &ApAugmentedState, abundances: &[u64]) -> Result<f64> {
    let ApAugmentedState {
        gamma,
        u,
        n,
        k,
        rho,
    } = *state;
    check_nk(n, k)?;
    if abundances.len() as u64 != k
        || abundances.iter().sum::<u64>() != n
        || abundances.contains(&0)
    {
        return domain("abundances do not match (n, k)");
    }
    if !(gamma > 0.0 && u > 0.0) {
        return domain("gamma and u must be positive");
    }
    let (nf, kf) = (n as f64, k as f64);
    let t = hermite_arg(gamma);
    let base = (nf - 0.5 * kf - 0.5) * std::f64::consts::LN_2 - ln_gamma(2.0 * nf - kf - 1.0)
        + (kf - 1.0) * (0.5 * gamma).ln()
        + xlny(2.0 * nf - kf - 2.0, u)
        - 0.5 * u * u
        - t * u
        + abundances
            .iter()
            .map(|&nj| ln_rising(0.5, nj - 1))
            .sum::<f64>();
    Ok(rho * base)
}

/// Draws `U` given `γ` from `u^e exp(-ρ(u²/2 + t u))`.
pub(crate) fn sample_u<R: Rng + ?Sized>(gamma: f64, e: f64, rho: f64, rng: &mut R) -> Result<f64> {
    if e <= -1.0 {
        return domain(format!("latent density not integrable: power {e} <= -1"));
    }
    let t = hermite_arg(gamma);
    let logf = move |u: f64| {
        (
            xlny(e, u) - rho * (0.5 * u * u + t * u),
            e / u - rho * (u + t),
            -e / (u * u) - rho,
        )
    };
    let guess = ((e / rho).max(0.0)).sqrt().max(1e-3);
    if e < 0.0 {
        // log-convex near 0; sample v = u^{1+e} in log space instead
        return sample_u_log(t, e, rho, rng);
    }
    let s = RouSampler::new(&logf, 0.0, guess)?;
    s.sample(rng)
}

/// Same target sampled through `x = ln u`, log-concave for every `e > -1`.
fn sample_u_log<R: Rng + ?Sized>(t: f64, e: f64, rho: f64, rng: &mut R) -> Result<f64> {
    let q = e + 1.0;
    let logf = move |x: f64| {
        let u = x.exp();
        (
            q * x - rho * (0.5 * u * u + t * u),
            q - rho * (u * u + t * u),
            -rho * (2.0 * u * u + t * u),
        )
    };
    let s = RouSampler::new(&logf, f64::NEG_INFINITY, 0.0)?;
    Ok(s.sample(rng)?.exp())
}

/// One systematic scan: `γ | u` then `u | γ`.
pub fn gibbs_sweep<R: Rng + ?Sized>(
    state: &ApAugmentedState,
    prior: GammaPrior,
    mode: CoarseningMode,
    rng: &mut R,
) -> Result<ApAugmentedState> {
    let ApAugmentedState { u, n, k, rho, .. } = *state;
    check_nk(n, k)?;
    check_rho(rho)?;
    let shape = prior.shape + rho * (k as f64 - 1.0);
    let rate = prior.rate + rho * u / SQRT2;
    let gamma = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| crate::Error::Domain(e.to_string()))?
        .sample(rng)
        .max(f64::MIN_POSITIVE);
    let u = sample_u(gamma, u_power(n, k, rho, mode), rho, rng)?;
    Ok(ApAugmentedState { gamma, u, ..*state })
}

fn diagnostics(values: &[f64], thin: usize) -> ChainDiagnostics {
    let ess = effective_sample_size(values);
    ChainDiagnostics {
        ess,
        lag1_autocorrelation: autocorrelation(values, 1),
        thin,
        chains: 1,
        acceptance_rate: None,
        converged: ess >= values.len() as f64 / 10.0,
    }
}

/// Runs the augmented Gibbs sampler and returns the post-burn-in `γ` draws.
#[allow(clippy::too_many_arguments)]
pub fn run_gibbs(
    n: u64,
    k: u64,
    prior: GammaPrior,
    rho: f64,
    mode: CoarseningMode,
    iterations: usize,
    burn_in: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    check_nk(n, k)?;
    check_rho(rho)?;
    if burn_in >= iterations {
        return domain("burn-in must be shorter than the run");
    }
    let mut rng = chain_rng(seed, 0);
    let mut state = ApAugmentedState {
        gamma: prior.shape / prior.rate,
        u: 1.0,
        n,
        k,
        rho,
    };
    state.u = sample_u(state.gamma, u_power(n, k, rho, mode), rho, &mut rng)?;
    let mut out = Vec::with_capacity(iterations - burn_in);
    for it in 0..iterations {
        state = gibbs_sweep(&state, prior, mode, &mut rng)?;
        if it >= burn_in {
            out.push(state.gamma);
        }
    }
    let mut d = PosteriorDraws::new("gamma", out);
    d.diagnostics = Some(diagnostics(&d.values, 1));
    Ok(d)
}

/// Log density of `x = ln u` under the marginal of `U` with `γ` integrated out.
fn u_marginal_log(
    n: u64,
    k: u64,
    prior: GammaPrior,
    rho: f64,
    mode: CoarseningMode,
) -> impl Fn(f64) -> (f64, f64, f64) {
    let q = u_power(n, k, rho, mode) + 1.0;
    let c = prior.shape + rho * (k as f64 - 1.0);
    let b = prior.rate;
    let r = rho / SQRT2;
    move |x: f64| {
        let u = x.exp();
        let w = b + r * u;
        (
            q * x - 0.5 * rho * u * u - c * w.ln(),
            q - rho * u * u - c * r * u / w,
            -2.0 * rho * u * u - c * b * r * u / (w * w),
        )
    }
}

const IID_CHUNK: usize = 1024;

/// Exact iid posterior draws of `γ`: `U` from its marginal, then `γ | U`.
pub fn iid_two_step_sample(
    n: u64,
    k: u64,
    prior: GammaPrior,
    rho: f64,
    mode: CoarseningMode,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    check_nk(n, k)?;
    check_rho(rho)?;
    if u_power(n, k, rho, mode) <= -1.0 {
        return domain("latent density not integrable for this coarsening");
    }
    let logf = u_marginal_log(n, k, prior, rho, mode);
    let shape = prior.shape + rho * (k as f64 - 1.0);
    let chunks: Vec<usize> = (0..n_draws.div_ceil(IID_CHUNK)).collect();
    let parts: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&c| -> Result<Vec<f64>> {
            let sampler = RouSampler::new(&logf, f64::NEG_INFINITY, 0.0)?;
            let mut rng = chain_rng(seed, c as u64);
            let m = IID_CHUNK.min(n_draws - c * IID_CHUNK);
            (0..m)
                .map(|_| {
                    let u = sampler.sample(&mut rng)?.exp();
                    let rate = prior.rate + rho * u / SQRT2;
                    let g = Gamma::new(shape, 1.0 / rate).expect("positive parameters");
                    Ok(g.sample(&mut rng))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(PosteriorDraws::new("gamma", parts.concat()))
}

/// Outcome of one predictive draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PredictiveDraw {
    New,
    /// Index into the abundance vector.
    Old(usize),
}

/// Draws whether observation `n + 1` is new, through the latent variable.
///
/// `Ũ` has density proportional to `(t u + u²) u^{2n-k-2} e^{-u²/2 - t u}` and
/// the draw is new with probability `t / (t + Ũ)`.
pub fn ap_draw_is_new<R: Rng + ?Sized>(gamma: f64, n: u64, k: u64, rng: &mut R) -> Result<bool> {
    if n == 0 {
        return Ok(true);
    }
    if k == 0 || k > n {
        return domain("need 1 <= k <= n");
    }
    let t = hermite_arg(gamma);
    if n == 1 {
        let p = t * log_hermite(-1.0, t)?.exp();
        return Ok(rng.random::<f64>() < p);
    }
    let q = 2.0 * n as f64 - k as f64 - 1.0;
    let logf = move |u: f64| {
        (
            q * u.ln() + (t + u).ln() - 0.5 * u * u - t * u,
            q / u + 1.0 / (t + u) - u - t,
            -q / (u * u) - 1.0 / ((t + u) * (t + u)),
        )
    };
    let s = RouSampler::new(&logf, 0.0, q.sqrt())?;
    let u = s.sample(rng)?;
    Ok(rng.random::<f64>() * (t + u) < t)
}

/// Algorithm-one predictive draw given the current abundances.
pub fn ap_predictive_sample<R: Rng + ?Sized>(
    gamma: f64,
    abundances: &[u64],
    rng: &mut R,
) -> Result<PredictiveDraw> {
    let n: u64 = abundances.iter().sum();
    let k = abundances.len() as u64;
    if ap_draw_is_new(gamma, n, k, rng)? {
        return Ok(PredictiveDraw::New);
    }
    let total = n as f64 - 0.5 * k as f64;
    let mut x = rng.random::<f64>() * total;
    for (j, &nj) in abundances.iter().enumerate() {
        x -= nj as f64 - 0.5;
        if x < 0.0 {
            return Ok(PredictiveDraw::Old(j));
        }
    }
    Ok(PredictiveDraw::Old(abundances.len() - 1))
}

/// `(E U, E U²)` for `U ∝ u^p e^{-u²/2 - t u}`.
pub fn latent_moments(t: f64, p: f64) -> Result<(f64, f64)> {
    if p <= -1.0 {
        return domain("latent moments need p > -1");
    }
    let h = |q: f64| log_hermite(-q, t);
    let h0 = h(p + 1.0)?;
    let m1 = (p + 1.0) * (h(p + 2.0)? - h0).exp();
    let m2 = (p + 1.0) * (p + 2.0) * (h(p + 3.0)? - h0).exp();
    Ok((m1, m2))
}

/// Priors on `γ` induced by Pitman-Yor and normalized inverse-Gaussian
/// processes at discount one half, plus the conjugate gamma prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "prior", rename_all = "snake_case")]
pub enum ApPrior {
    Gamma {
        shape: f64,
        rate: f64,
    },
    /// `θ > -1/2`; `γ²` is Gamma(θ + 1/2, rate 1/4).
    PitmanYor {
        theta: f64,
    },
    /// `β >= 0`.
    InverseGaussian {
        beta: f64,
    },
}

impl ApPrior {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ApPrior::Gamma { shape, rate } => GammaPrior::new(shape, rate).map(|_| ()),
            ApPrior::PitmanYor { theta } if theta > -0.5 && theta.is_finite() => Ok(()),
            ApPrior::InverseGaussian { beta } if beta >= 0.0 && beta.is_finite() => Ok(()),
            _ => domain("Pitman-Yor needs theta > -1/2; inverse-Gaussian needs beta >= 0"),
        }
    }

    pub fn log_density(&self, gamma: f64) -> f64 {
        if !(gamma > 0.0) {
            return f64::NEG_INFINITY;
        }
        match *self {
            ApPrior::Gamma { shape, rate } => GammaPrior { shape, rate }.log_density(gamma),
            ApPrior::PitmanYor { theta } => {
                -theta * 4f64.ln() - ln_gamma(theta + 0.5) + 2.0 * theta * gamma.ln()
                    - 0.25 * gamma * gamma
            }
            ApPrior::InverseGaussian { beta } => {
                -0.5 * std::f64::consts::PI.ln() + beta
                    - beta * beta / (gamma * gamma)
                    - 0.25 * gamma * gamma
            }
        }
    }
}

/// Density of the Pitman-Yor or inverse-Gaussian induced prior on `γ`.
pub fn py_ig_prior_density(gamma: f64, prior: ApPrior) -> Result<f64> {
    prior.validate()?;
    Ok(prior.log_density(gamma).exp())
}

/// Posterior draws of `γ` under any [`ApPrior`] by slice sampling `ln γ`
/// against the exact weights.
pub fn ap_posterior_slice(
    n: u64,
    k: u64,
    prior: ApPrior,
    rho: f64,
    n_draws: usize,
    seed: u64,
) -> Result<PosteriorDraws> {
    prior.validate()?;
    check_rho(rho)?;
    if k == 0 || k > n {
        return domain("need 1 <= k <= n");
    }
    let target = |x: f64| {
        let g = x.exp();
        match GibbsModel::aldous_pitman(g).and_then(|m| log_v(&m, n, k)) {
            Ok(lv) => prior.log_density(g) + x + rho * lv,
            Err(_) => f64::NEG_INFINITY,
        }
    };
    let mut rng = chain_rng(seed, 0);
    let mut x = (k as f64 / (n as f64).sqrt()).max(1e-3).ln();
    for _ in 0..500 {
        x = slice_step(x, &target, 1.0, &mut rng);
    }
    let pilot: Vec<f64> = (0..1000)
        .map(|_| {
            x = slice_step(x, &target, 1.0, &mut rng);
            x
        })
        .collect();
    let r1 = autocorrelation(&pilot, 1);
    let thin = if r1 <= 0.05 {
        1
    } else {
        ((0.05f64.ln() / r1.ln()).ceil() as usize).clamp(1, 50)
    };
    let mut out = Vec::with_capacity(n_draws);
    for _ in 0..n_draws {
        for _ in 0..thin {
            x = slice_step(x, &target, 1.0, &mut rng);
        }
        out.push(x);
    }
    let diag = diagnostics(&out, thin);
    let mut d = PosteriorDraws::new("gamma", out.into_iter().map(f64::exp).collect());
    d.diagnostics = Some(diag);
    Ok(d)
}
