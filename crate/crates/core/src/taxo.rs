//! Taxonomic Gibbs-type priors.
//!
//! Observations carry a path of labels through `L` nested levels. The level-1
//! labels follow one Gibbs-type urn; the children of every node follow their
//! own independent urn. The likelihood factorizes into one EPPF per observed
//! branch, so each branch can be fitted on its own except for levels that
//! share hierarchical hyperparameters.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::apinfer::{sample_u, u_power, CoarseningMode};
use crate::data::TaxonomicDataset;
use crate::dpinfer::{sg_posterior_sample, sg_prior_sample, CoarsenedPosterior, StirlingGammaSpec};
use crate::draws::PosteriorDraws;
use crate::error::{domain, Result};
use crate::gibbs::{log_eppf, GibbsModel, Urn};
use crate::sampling::{autocorrelation, chain_rng, effective_sample_size, ChainDiagnostics};
use crate::specfun::ln_gamma;

/// Key of a branch: the level and label of its parent node.
pub type BranchKey = (usize, String);

/// Diversities used to simulate nested data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestedUrnSpec {
    pub level1: GibbsModel,
    /// `levels[i]` holds the models for children of level-`i + 1` nodes; the
    /// `j`-th parent created at that level uses `levels[i][j % len]`.
    pub levels: Vec<Vec<GibbsModel>>,
}

impl NestedUrnSpec {
    pub fn depth(&self) -> usize {
        self.levels.len() + 1
    }

    fn validate(&self) -> Result<()> {
        self.level1.validate()?;
        if self.levels.is_empty() || self.levels.iter().any(Vec::is_empty) {
            return domain("every level below the first needs at least one model");
        }
        for m in self.levels.iter().flatten() {
            m.validate()?;
        }
        Ok(())
    }
}

struct UrnNode {
    level: usize,
    label: String,
    parent: Option<usize>,
    count: u64,
    urn: Option<Urn>,
    children: Vec<usize>,
}

/// Sequential sampler of label paths.
pub struct NestedUrn {
    spec: NestedUrnSpec,
    root: Urn,
    roots: Vec<usize>,
    nodes: Vec<UrnNode>,
    created: Vec<usize>,
    truth: BTreeMap<BranchKey, GibbsModel>,
}

const URN_CAPACITY: u64 = 16;

impl NestedUrn {
    pub fn new(spec: NestedUrnSpec) -> Result<Self> {
        spec.validate()?;
        let depth = spec.depth();
        Ok(NestedUrn {
            root: Urn::new(spec.level1, URN_CAPACITY)?,
            spec,
            roots: Vec::new(),
            nodes: Vec::new(),
            created: vec![0; depth + 1],
            truth: BTreeMap::new(),
        })
    }

    fn new_node(&mut self, level: usize, parent: Option<usize>) -> usize {
        self.created[level] += 1;
        let label = format!("L{level}-{}", self.created[level]);
        let urn = if level < self.spec.depth() {
            let models = &self.spec.levels[level - 1];
            let model = models[(self.created[level] - 1) % models.len()];
            self.truth.insert((level, label.clone()), model);
            Some(Urn::new(model, URN_CAPACITY).expect("validated model"))
        } else {
            None
        };
        self.nodes.push(UrnNode {
            level,
            label,
            parent,
            count: 0,
            urn,
            children: Vec::new(),
        });
        self.nodes.len() - 1
    }

    /// Draws one observation and returns the node index at every level.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<usize> {
        let depth = self.spec.depth();
        let mut path = Vec::with_capacity(depth);
        let j = self.root.step(rng);
        let mut node = if j == self.roots.len() {
            let id = self.new_node(1, None);
            self.roots.push(id);
            id
        } else {
            self.roots[j]
        };
        self.nodes[node].count += 1;
        path.push(node);
        for level in 2..=depth {
            let urn = self.nodes[node]
                .urn
                .as_mut()
                .expect("internal node has an urn");
            let j = urn.step(rng);
            let child = if j == self.nodes[node].children.len() {
                let id = self.new_node(level, Some(node));
                self.nodes[node].children.push(id);
                id
            } else {
                self.nodes[node].children[j]
            };
            self.nodes[child].count += 1;
            path.push(child);
            node = child;
        }
        path
    }

    /// The data generated so far.
    pub fn dataset(&self) -> Result<TaxonomicDataset> {
        let depth = self.spec.depth();
        let rows = self.nodes.iter().filter(|x| x.level == depth).map(|leaf| {
            let mut path = vec![leaf.label.clone()];
            let mut p = leaf.parent;
            while let Some(i) = p {
                path.push(self.nodes[i].label.clone());
                p = self.nodes[i].parent;
            }
            path.reverse();
            (path, leaf.count)
        });
        TaxonomicDataset::from_paths(depth, rows.collect::<Vec<_>>())
    }

    /// Model assigned to each branch created so far.
    pub fn truth(&self) -> &BTreeMap<BranchKey, GibbsModel> {
        &self.truth
    }
}

/// Simulated nested data with the model of every branch.
#[derive(Debug, Clone)]
pub struct NestedSample {
    pub data: TaxonomicDataset,
    pub truth: BTreeMap<BranchKey, GibbsModel>,
}

/// Simulates `n_steps` observations from the nested urn.
pub fn nested_urn_sample(spec: &NestedUrnSpec, n_steps: u64, seed: u64) -> Result<NestedSample> {
    if n_steps == 0 {
        return domain("nested_urn_sample needs n_steps >= 1");
    }
    let mut urn = NestedUrn::new(spec.clone())?;
    let mut rng = chain_rng(seed, 0);
    for _ in 0..n_steps {
        urn.step(&mut rng);
    }
    Ok(NestedSample {
        data: urn.dataset()?,
        truth: urn.truth.clone(),
    })
}

/// Concrete models for the likelihood: one for level 1 and one per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchModels {
    pub level1: GibbsModel,
    /// Model for children of a level-`i + 1` node when no override exists.
    pub by_level: Vec<GibbsModel>,
    pub overrides: BTreeMap<BranchKey, GibbsModel>,
}

impl BranchModels {
    pub fn model_for(&self, level: usize, label: &str) -> GibbsModel {
        self.overrides
            .get(&(level, label.to_string()))
            .copied()
            .unwrap_or(self.by_level[level - 1])
    }
}

/// One factor of the taxonomic likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchTerm {
    /// Parent of the branch; `None` for level 1.
    pub parent: Option<BranchKey>,
    pub n: u64,
    pub k: u64,
    pub rho: f64,
    pub log_eppf: f64,
}

fn check_rho_levels(rho: &[f64], depth: usize) -> Result<()> {
    if rho.len() != depth {
        return domain(format!(
            "need one rho per level ({depth}), got {}",
            rho.len()
        ));
    }
    if rho.iter().any(|&r| !(r > 0.0 && r <= 1.0)) {
        return domain("every rho must lie in (0, 1]");
    }
    Ok(())
}

/// Untempered log EPPF of every observed branch, level 1 first.
#[allow(clippy::needless_range_loop)]
pub fn branch_terms(
    models: &BranchModels,
    data: &TaxonomicDataset,
    rho: &[f64],
) -> Result<Vec<BranchTerm>> {
    let depth = data.levels();
    check_rho_levels(rho, depth)?;
    if models.by_level.len() + 1 != depth {
        return domain("branch models do not match the depth of the data");
    }
    let l1 = data.level1_partition();
    let mut out = vec![BranchTerm {
        parent: None,
        n: l1.n(),
        k: l1.k(),
        rho: rho[0],
        log_eppf: log_eppf(&models.level1, l1.abundances())?,
    }];
    for level in 1..depth {
        for idx in data.nodes_at(level) {
            let node = &data.nodes()[idx];
            let part = data.child_partition(idx);
            let model = models.model_for(level, &node.label);
            out.push(BranchTerm {
                parent: Some((level, node.label.clone())),
                n: part.n(),
                k: part.k(),
                rho: rho[level],
                log_eppf: log_eppf(&model, part.abundances())?,
            });
        }
    }
    Ok(out)
}

/// Tempered log likelihood, the sum of `ρ_ℓ · ln EPPF` over observed branches.
pub fn log_taxonomic_likelihood(
    models: &BranchModels,
    data: &TaxonomicDataset,
    rho: &[f64],
) -> Result<f64> {
    Ok(branch_terms(models, data, rho)?
        .iter()
        .map(|t| t.rho * t.log_eppf)
        .sum())
}

/// Prior family for the branches of one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LevelPrior {
    /// Dirichlet process with a Stirling-gamma prior on every branch. When
    /// `n_ref` is zero the branch size is used.
    Dp { a: f64, b: f64, n_ref: u64 },
    /// Aldous-Pitman branches with `γ(x) ~ Gamma(a_γ, b_γ)` and a normal prior
    /// on `(ln a_γ, ln b_γ)`.
    ApHierarchical { mu: [f64; 2], sd: f64 },
}

/// Prior and coarsening of one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub prior: LevelPrior,
    pub rho: f64,
}

/// Priors for every level; `levels[0]` is level 1 and must be a DP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomicModelSpec {
    pub levels: Vec<LevelSpec>,
}

impl TaxonomicModelSpec {
    /// Three levels: DP families, DP genera within families, and coarsened
    /// hierarchical AP species within genera.
    pub fn default_three_level() -> Self {
        let dp = LevelPrior::Dp {
            a: 0.3,
            b: 0.1,
            n_ref: 100,
        };
        TaxonomicModelSpec {
            levels: vec![
                LevelSpec {
                    prior: dp,
                    rho: 1.0,
                },
                LevelSpec {
                    prior: dp,
                    rho: 1.0,
                },
                LevelSpec {
                    prior: LevelPrior::ApHierarchical {
                        mu: [0.0, 0.0],
                        sd: 10.0,
                    },
                    rho: 0.25,
                },
            ],
        }
    }

    fn validate(&self, depth: usize) -> Result<()> {
        if self.levels.len() != depth {
            return domain(format!(
                "spec has {} levels, data has {depth}",
                self.levels.len()
            ));
        }
        check_rho_levels(
            &self.levels.iter().map(|l| l.rho).collect::<Vec<_>>(),
            depth,
        )?;
        if !matches!(self.levels[0].prior, LevelPrior::Dp { .. }) {
            return domain("level 1 must use a Dirichlet-process prior");
        }
        for l in &self.levels {
            match l.prior {
                LevelPrior::Dp { a, b, n_ref } => {
                    if n_ref > 0 {
                        StirlingGammaSpec::new(a, b, n_ref)?;
                    } else if !(a > 0.0 && b > 0.0) {
                        return domain("Stirling-gamma needs a, b > 0");
                    }
                }
                LevelPrior::ApHierarchical { sd, mu } => {
                    if !(sd > 0.0) || !mu.iter().all(|m| m.is_finite()) {
                        return domain("hyperprior needs finite mean and sd > 0");
                    }
                }
            }
        }
        Ok(())
    }
}

fn sg_for(a: f64, b: f64, n_ref: u64, n: u64) -> Result<StirlingGammaSpec> {
    StirlingGammaSpec::new(a, b, if n_ref == 0 { n.max(1) } else { n_ref })
}

/// MCMC settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
}

impl Default for McmcConfig {
    fn default() -> Self {
        McmcConfig {
            iterations: 10_000,
            burn_in: 1_000,
            seed: 0,
        }
    }
}

/// Posterior of the diversity of one branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPosterior {
    /// Level of the children whose diversity this is.
    pub level: usize,
    /// Parent label; `None` for level 1 and for the unobserved-branch prior.
    pub parent: Option<String>,
    pub n: u64,
    pub k: u64,
    /// The data carry no information on this branch.
    pub prior_only: bool,
    pub draws: PosteriorDraws,
}

/// Draws of the hierarchical hyperparameters of one AP level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperDraws {
    pub level: usize,
    pub a: PosteriorDraws,
    pub b: PosteriorDraws,
    pub acceptance_rate: f64,
    pub proposal_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomicFit {
    pub level1: BranchPosterior,
    /// Observed branches, grouped by level.
    pub branches: Vec<BranchPosterior>,
    /// Diversity of a branch not present in the data, one per level below 1.
    pub unobserved: Vec<BranchPosterior>,
    pub hyper: Vec<HyperDraws>,
}

fn fnv1a(parts: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for p in parts {
        for &b in *p {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        h ^= 0xff;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Seed of a branch, independent of the order in which branches are visited.
fn branch_seed(seed: u64, level: usize, label: &str) -> u64 {
    fnv1a(&[
        &seed.to_le_bytes(),
        &(level as u64).to_le_bytes(),
        label.as_bytes(),
    ])
}

/// Fits the taxonomic model.
///
/// DP levels are fitted branch by branch. AP levels alternate between the
/// per-branch `γ(x)`, the latent `U_x` and a random-walk Metropolis step on
/// `(ln a_γ, ln b_γ)` whose scale adapts during burn-in.
pub fn fit_taxonomic(
    spec: &TaxonomicModelSpec,
    data: &TaxonomicDataset,
    mcmc: McmcConfig,
) -> Result<TaxonomicFit> {
    let depth = data.levels();
    spec.validate(depth)?;
    if mcmc.burn_in >= mcmc.iterations {
        return domain("burn-in must be shorter than the run");
    }
    let n_draws = mcmc.iterations - mcmc.burn_in;
    let LevelPrior::Dp { a, b, n_ref } = spec.levels[0].prior else {
        unreachable!("validated");
    };
    let l1 = data.level1_partition();
    let post = CoarsenedPosterior::new(
        sg_for(a, b, n_ref, l1.n())?,
        l1.n(),
        l1.k(),
        spec.levels[0].rho,
    )?;
    let level1 = BranchPosterior {
        level: 1,
        parent: None,
        n: l1.n(),
        k: l1.k(),
        prior_only: false,
        draws: sg_posterior_sample(&post, n_draws, branch_seed(mcmc.seed, 0, ""))?,
    };
    let mut branches = Vec::new();
    let mut unobserved = Vec::new();
    let mut hyper = Vec::new();
    for level in 1..depth {
        let ls = spec.levels[level];
        let parents: Vec<(String, u64, Vec<u64>)> = data
            .nodes_at(level)
            .into_iter()
            .map(|i| {
                let p = data.child_partition(i);
                (
                    data.nodes()[i].label.clone(),
                    p.n(),
                    p.abundances().to_vec(),
                )
            })
            .collect();
        match ls.prior {
            LevelPrior::Dp { a, b, n_ref } => {
                let fitted: Vec<BranchPosterior> = parents
                    .par_iter()
                    .map(|(label, n, ab)| {
                        let k = ab.len() as u64;
                        let prior = sg_for(a, b, n_ref, *n)?;
                        let post = CoarsenedPosterior::new(prior, *n, k, ls.rho)?;
                        Ok(BranchPosterior {
                            level: level + 1,
                            parent: Some(label.clone()),
                            n: *n,
                            k,
                            prior_only: false,
                            draws: sg_posterior_sample(
                                &post,
                                n_draws,
                                branch_seed(mcmc.seed, level, label),
                            )?,
                        })
                    })
                    .collect::<Result<_>>()?;
                branches.extend(fitted);
                let prior = sg_for(a, b, n_ref, 1)?;
                unobserved.push(BranchPosterior {
                    level: level + 1,
                    parent: None,
                    n: 0,
                    k: 0,
                    prior_only: true,
                    draws: sg_prior_sample(
                        prior,
                        n_draws,
                        branch_seed(mcmc.seed, level, "\u{0}prior"),
                    )?,
                });
            }
            LevelPrior::ApHierarchical { mu, sd } => {
                let res = fit_ap_level(level, &parents, mu, sd, ls.rho, mcmc)?;
                branches.extend(res.0);
                unobserved.push(res.1);
                hyper.push(res.2);
            }
        }
    }
    Ok(TaxonomicFit {
        level1,
        branches,
        unobserved,
        hyper,
    })
}

struct GenusState {
    n: u64,
    k: u64,
    gamma: f64,
    u: f64,
    rng: ChaCha8Rng,
    draws: Vec<f64>,
}

fn gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("positive parameters")
        .sample(rng)
        .max(f64::MIN_POSITIVE)
}

const ADAPT_TARGET: f64 = 0.3;

#[allow(clippy::type_complexity)]
fn fit_ap_level(
    level: usize,
    parents: &[(String, u64, Vec<u64>)],
    mu: [f64; 2],
    sd: f64,
    rho: f64,
    mcmc: McmcConfig,
) -> Result<(Vec<BranchPosterior>, BranchPosterior, HyperDraws)> {
    let n_draws = mcmc.iterations - mcmc.burn_in;
    let mut theta = mu;
    let (mut a, mut b) = (theta[0].exp(), theta[1].exp());
    let mut states: Vec<GenusState> = parents
        .iter()
        .map(|(label, n, ab)| {
            let mut rng = chain_rng(branch_seed(mcmc.seed, level, label), 0);
            let k = ab.len() as u64;
            let gamma = gamma_draw(a, b, &mut rng);
            let u = if *n >= 2 {
                sample_u(
                    gamma,
                    u_power(*n, k, rho, CoarseningMode::Joint),
                    rho,
                    &mut rng,
                )?
            } else {
                0.0
            };
            Ok(GenusState {
                n: *n,
                k,
                gamma,
                u,
                rng,
                draws: Vec::with_capacity(n_draws),
            })
        })
        .collect::<Result<_>>()?;
    let mut hyper_rng = chain_rng(branch_seed(mcmc.seed, level, "\u{0}hyper"), 0);
    let mut step = 0.5f64;
    let mut accepted = 0usize;
    let (mut a_draws, mut b_draws, mut new_draws) = (Vec::new(), Vec::new(), Vec::new());
    let log_target = |th: [f64; 2], sum_ln: f64, sum_g: f64, m: f64| {
        let (a, b) = (th[0].exp(), th[1].exp());
        m * (a * th[1] - ln_gamma(a)) + (a - 1.0) * sum_ln
            - b * sum_g
            - ((th[0] - mu[0]).powi(2) + (th[1] - mu[1]).powi(2)) / (2.0 * sd * sd)
    };
    for it in 0..mcmc.iterations {
        states.par_iter_mut().try_for_each(|s| -> Result<()> {
            if s.n >= 2 {
                let shape = a + rho * (s.k as f64 - 1.0);
                let rate = b + rho * s.u / std::f64::consts::SQRT_2;
                s.gamma = gamma_draw(shape, rate, &mut s.rng);
                s.u = sample_u(
                    s.gamma,
                    u_power(s.n, s.k, rho, CoarseningMode::Joint),
                    rho,
                    &mut s.rng,
                )?;
            } else {
                s.gamma = gamma_draw(a, b, &mut s.rng);
            }
            if it >= mcmc.burn_in {
                s.draws.push(s.gamma);
            }
            Ok(())
        })?;
        let sum_ln: f64 = states.iter().map(|s| s.gamma.ln()).sum();
        let sum_g: f64 = states.iter().map(|s| s.gamma).sum();
        let m = states.len() as f64;
        let z0: f64 = StandardNormal.sample(&mut hyper_rng);
        let z1: f64 = StandardNormal.sample(&mut hyper_rng);
        let prop = [theta[0] + step * z0, theta[1] + step * z1];
        let log_ratio = log_target(prop, sum_ln, sum_g, m) - log_target(theta, sum_ln, sum_g, m);
        let accept = hyper_rng.random::<f64>().ln() < log_ratio;
        if accept {
            theta = prop;
            a = theta[0].exp();
            b = theta[1].exp();
        }
        if it < mcmc.burn_in {
            let acc = if accept { 1.0 } else { 0.0 };
            step *= ((acc - ADAPT_TARGET) / (it as f64 + 1.0).powf(0.6)).exp();
            step = step.clamp(1e-4, 10.0);
        } else {
            accepted += usize::from(accept);
            a_draws.push(a);
            b_draws.push(b);
            new_draws.push(gamma_draw(a, b, &mut hyper_rng));
        }
    }
    let diag = |v: &[f64], rate: Option<f64>| {
        let ess = effective_sample_size(v);
        ChainDiagnostics {
            ess,
            lag1_autocorrelation: autocorrelation(v, 1),
            thin: 1,
            chains: 1,
            acceptance_rate: rate,
            converged: ess >= v.len() as f64 / 100.0,
        }
    };
    let rate = accepted as f64 / n_draws as f64;
    let branches = parents
        .iter()
        .zip(states)
        .map(|((label, _, _), s)| {
            let mut draws = PosteriorDraws::new("gamma", s.draws);
            draws.diagnostics = Some(diag(&draws.values, None));
            BranchPosterior {
                level: level + 1,
                parent: Some(label.clone()),
                n: s.n,
                k: s.k,
                prior_only: s.n < 2,
                draws,
            }
        })
        .collect();
    let unobserved = BranchPosterior {
        level: level + 1,
        parent: None,
        n: 0,
        k: 0,
        prior_only: true,
        draws: PosteriorDraws::new("gamma", new_draws),
    };
    let mut a_d = PosteriorDraws::new("a_gamma", a_draws);
    a_d.diagnostics = Some(diag(&a_d.values, Some(rate)));
    let mut b_d = PosteriorDraws::new("b_gamma", b_draws);
    b_d.diagnostics = Some(diag(&b_d.values, Some(rate)));
    Ok((
        branches,
        unobserved,
        HyperDraws {
            level: level + 1,
            a: a_d,
            b: b_d,
            acceptance_rate: rate,
            proposal_sd: step,
        },
    ))
}

/// Posterior mean and 98% interval of one branch diversity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSummary {
    pub rank: usize,
    pub level: usize,
    pub parent: Option<String>,
    pub n: u64,
    pub k: u64,
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
    pub prior_only: bool,
}

/// Branches of `level`, ranked by decreasing posterior mean.
pub fn branch_summaries(fit: &TaxonomicFit, level: usize) -> Result<Vec<BranchSummary>> {
    let mut out: Vec<BranchSummary> = fit
        .branches
        .iter()
        .filter(|b| b.level == level)
        .map(|b| {
            let s = b.draws.summary()?;
            Ok(BranchSummary {
                rank: 0,
                level,
                parent: b.parent.clone(),
                n: b.n,
                k: b.k,
                mean: s.mean,
                lower: s.quantiles.q01,
                upper: s.quantiles.q99,
                prior_only: b.prior_only,
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|x, y| {
        y.mean
            .total_cmp(&x.mean)
            .then_with(|| x.parent.cmp(&y.parent))
    });
    for (i, s) in out.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    Ok(out)
}

/// Writes ranked summaries as CSV.
pub fn write_summaries_csv<W: std::io::Write>(rows: &[BranchSummary], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record([
        "rank",
        "level",
        "parent",
        "n",
        "k",
        "mean",
        "lower_1",
        "upper_99",
        "prior_only",
    ])?;
    for r in rows {
        wr.write_record([
            r.rank.to_string(),
            r.level.to_string(),
            r.parent.clone().unwrap_or_default(),
            r.n.to_string(),
            r.k.to_string(),
            format!("{:?}", r.mean),
            format!("{:?}", r.lower),
            format!("{:?}", r.upper),
            r.prior_only.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| crate::Error::Io {
        path: "<writer>".into(),
        source: e,
    })?;
    Ok(())
}

fn level_key(level: usize) -> String {
    match level {
        2 => "families".into(),
        3 => "genera".into(),
        l => format!("level{}", l - 1),
    }
}

/// JSON report with the level-1 summary, ranked branches per level (keyed by
/// the parent level: `families`, `genera`, ...) and hyperparameters.
pub fn fit_json(fit: &TaxonomicFit) -> Result<serde_json::Value> {
    let mut obj = serde_json::Map::new();
    obj.insert(
        "level1".into(),
        serde_json::to_value(fit.level1.draws.summary()?)?,
    );
    let max_level = fit.branches.iter().map(|b| b.level).max().unwrap_or(1);
    for level in 2..=max_level {
        let mut entry = serde_json::Map::new();
        entry.insert(
            "branches".into(),
            serde_json::to_value(branch_summaries(fit, level)?)?,
        );
        if let Some(u) = fit.unobserved.iter().find(|u| u.level == level) {
            entry.insert(
                "unobserved".into(),
                serde_json::to_value(u.draws.summary()?)?,
            );
        }
        obj.insert(level_key(level), entry.into());
    }
    let hyper: Vec<serde_json::Value> = fit
        .hyper
        .iter()
        .map(|h| {
            Ok(serde_json::json!({
                "level": h.level,
                "a_gamma": h.a.summary()?,
                "b_gamma": h.b.summary()?,
                "ratio_mean": h.a.values.iter().zip(&h.b.values).map(|(a, b)| a / b).sum::<f64>() / h.a.len() as f64,
                "acceptance_rate": h.acceptance_rate,
            }))
        })
        .collect::<Result<_>>()?;
    obj.insert("hyper".into(), hyper.into());
    Ok(obj.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn toy() -> TaxonomicDataset {
        let p = |a: &str, b: &str, c: u64| (vec![a.to_string(), b.to_string()], c);
        TaxonomicDataset::from_paths(
            2,
            vec![p("F1", "G1", 3), p("F1", "G2", 1), p("F2", "G3", 2)],
        )
        .unwrap()
    }

    #[test]
    fn additivity_is_exact() {
        let dp = GibbsModel::dirichlet(1.0).unwrap();
        let ap = GibbsModel::aldous_pitman(0.7).unwrap();
        let mut overrides = BTreeMap::new();
        overrides.insert((1, "F2".to_string()), ap);
        let models = BranchModels {
            level1: dp,
            by_level: vec![dp],
            overrides,
        };
        let rho = [1.0, 0.5];
        let total = log_taxonomic_likelihood(&models, &toy(), &rho).unwrap();
        let by_hand = log_eppf(&dp, &[4, 2]).unwrap()
            + 0.5 * log_eppf(&dp, &[3, 1]).unwrap()
            + 0.5 * log_eppf(&ap, &[2]).unwrap();
        assert_eq!(total, by_hand);
    }

    #[test]
    fn first_child_is_new_and_dm_single_genus() {
        let spec = NestedUrnSpec {
            level1: GibbsModel::dirichlet(3.0).unwrap(),
            levels: vec![vec![GibbsModel::dirichlet_multinomial(-1.0, 1).unwrap()]],
        };
        let s = nested_urn_sample(&spec, 300, 4).unwrap();
        for f in s.data.nodes_at(1) {
            assert_eq!(s.data.nodes()[f].children.len(), 1);
        }
        assert!(s.data.is_consistent());
    }

    #[test]
    fn nested_frequencies_match_likelihood() {
        let spec = NestedUrnSpec {
            level1: GibbsModel::dirichlet(1.0).unwrap(),
            levels: vec![vec![
                GibbsModel::aldous_pitman(1.5).unwrap(),
                GibbsModel::dirichlet(0.5).unwrap(),
            ]],
        };
        let reps = 1_000_000;
        let mut rng = chain_rng(9, 0);
        let mut freq: HashMap<Vec<usize>, (usize, f64)> = HashMap::new();
        for _ in 0..reps {
            let mut urn = NestedUrn::new(spec.clone()).unwrap();
            let mut pattern = Vec::new();
            for _ in 0..5 {
                pattern.extend(urn.step(&mut rng));
            }
            let e = freq.entry(pattern).or_insert((0, f64::NAN));
            e.0 += 1;
            if e.1.is_nan() {
                let models = BranchModels {
                    level1: spec.level1,
                    by_level: vec![spec.levels[0][0]],
                    overrides: urn.truth().clone(),
                };
                e.1 = log_taxonomic_likelihood(&models, &urn.dataset().unwrap(), &[1.0, 1.0])
                    .unwrap()
                    .exp();
            }
        }
        let mut tv = 0.0;
        let mut seen = 0.0;
        for (c, p) in freq.values() {
            tv += (*c as f64 / reps as f64 - p).abs();
            seen += p;
        }
        tv = 0.5 * (tv + (1.0 - seen));
        assert!(tv < 0.02, "TV {tv}");
    }

    #[test]
    fn dp_branch_posteriors_ignore_order() {
        let p = |a: &str, b: &str, c: u64| (vec![a.to_string(), b.to_string()], c);
        let rows = vec![
            p("F1", "G1", 5),
            p("F1", "G2", 2),
            p("F2", "G3", 4),
            p("F2", "G4", 1),
            p("F2", "G5", 1),
        ];
        let mut rev = rows.clone();
        rev.reverse();
        let d1 = TaxonomicDataset::from_paths(2, rows).unwrap();
        let d2 = TaxonomicDataset::from_paths(2, rev).unwrap();
        let dp = LevelPrior::Dp {
            a: 0.3,
            b: 0.1,
            n_ref: 100,
        };
        let spec = TaxonomicModelSpec {
            levels: vec![
                LevelSpec {
                    prior: dp,
                    rho: 1.0,
                },
                LevelSpec {
                    prior: dp,
                    rho: 1.0,
                },
            ],
        };
        let mcmc = McmcConfig {
            iterations: 600,
            burn_in: 100,
            seed: 3,
        };
        let f1 = fit_taxonomic(&spec, &d1, mcmc).unwrap();
        let f2 = fit_taxonomic(&spec, &d2, mcmc).unwrap();
        let get = |f: &TaxonomicFit, l: &str| {
            f.branches
                .iter()
                .find(|b| b.parent.as_deref() == Some(l))
                .unwrap()
                .draws
                .values
                .clone()
        };
        assert_eq!(get(&f1, "F1"), get(&f2, "F1"));
        assert_eq!(get(&f1, "F2"), get(&f2, "F2"));
    }

    #[test]
    fn ap_level_fit_runs_and_adapts() {
        let spec = NestedUrnSpec {
            level1: GibbsModel::dirichlet(2.0).unwrap(),
            levels: vec![vec![
                GibbsModel::aldous_pitman(0.5).unwrap(),
                GibbsModel::aldous_pitman(2.0).unwrap(),
            ]],
        };
        let s = nested_urn_sample(&spec, 400, 11).unwrap();
        let model = TaxonomicModelSpec {
            levels: vec![
                LevelSpec {
                    prior: LevelPrior::Dp {
                        a: 0.3,
                        b: 0.1,
                        n_ref: 100,
                    },
                    rho: 1.0,
                },
                LevelSpec {
                    prior: LevelPrior::ApHierarchical {
                        mu: [0.0, 0.0],
                        sd: 10.0,
                    },
                    rho: 1.0,
                },
            ],
        };
        let fit = fit_taxonomic(
            &model,
            &s.data,
            McmcConfig {
                iterations: 3000,
                burn_in: 1000,
                seed: 1,
            },
        )
        .unwrap();
        let h = &fit.hyper[0];
        assert!(
            (0.15..=0.5).contains(&h.acceptance_rate),
            "{}",
            h.acceptance_rate
        );
        let ranked = branch_summaries(&fit, 2).unwrap();
        assert_eq!(ranked.len(), s.data.k_at(1) as usize);
        assert!(ranked.windows(2).all(|w| w[0].mean >= w[1].mean));
        for r in &ranked {
            assert_eq!(r.prior_only, r.n < 2);
        }
        let j = fit_json(&fit).unwrap();
        assert!(j["families"]["branches"].is_array());
    }
}
