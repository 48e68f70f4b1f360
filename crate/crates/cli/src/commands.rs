//! Subcommand implementations.

use rayon::prelude::*;
use serde_json::{json, Value};

use sigmadiv::apinfer::{
    ap_posterior_slice, iid_two_step_sample, run_gibbs, ApPrior, CoarseningMode, GammaPrior,
};
use sigmadiv::data::{ingest_abundance_csv, ingest_taxonomy_csv, TaxonomicDataset};
use sigmadiv::dpinfer::{
    diversity_transforms, richness_posterior, sg_posterior_sample, CoarsenedPosterior,
    PopulationPrior, StirlingGammaSpec,
};
use sigmadiv::draws::PosteriorDraws;
use sigmadiv::estimators::{classical_rarefaction, fisher_alpha, mle_alpha, sample_coverage};
use sigmadiv::gibbs::{
    diversity_indices, dm_posterior_h, expected_freq_counts, extrapolation_at, log_v,
    rarefaction_at, urn_sample, GibbsModel, MonteCarlo,
};
use sigmadiv::taxo::{
    branch_summaries, fit_json, fit_taxonomic, nested_urn_sample, LevelPrior, LevelSpec,
    McmcConfig, NestedUrnSpec, TaxonomicModelSpec,
};

use crate::output::{round_json, Cell, Table, Writer};
use crate::{
    CliError, DataArgs, ExtrapolateArgs, Family, FitArgs, ModelArgs, PriorArgs, RichnessArgs,
    SimulateArgs, TaxonomicArgs, ValidateArgs,
};

type Res<T> = Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> Res<T> {
    Err(CliError::Usage(msg.into()))
}

struct Sample {
    n: u64,
    k: u64,
}

fn load(d: &DataArgs) -> Res<Sample> {
    match (&d.input, d.n, d.k) {
        (Some(p), _, _) => {
            let data = ingest_abundance_csv(p)?;
            Ok(Sample {
                n: data.n(),
                k: data.k(),
            })
        }
        (None, Some(n), Some(k)) => {
            if k == 0 || k > n {
                return usage(format!("need 1 <= k <= n, got n={n}, k={k}"));
            }
            Ok(Sample { n, k })
        }
        _ => usage("provide --input or both --n and --k"),
    }
}

/// Maximizes `ln V_{n,k}(γ)` over `ln γ` by golden-section search.
fn ap_ml(n: u64, k: u64) -> Res<f64> {
    if n < 2 || k == 1 || k == n {
        return usage("the AP maximum-likelihood estimate needs 1 < k < n; pass --gamma");
    }
    let f = |x: f64| {
        log_v(&GibbsModel::aldous_pitman(x.exp()).expect("positive"), n, k)
            .unwrap_or(f64::NEG_INFINITY)
    };
    let (mut a, mut b) = (-20.0f64, 20.0f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut c, mut d) = (b - g * (b - a), a + g * (b - a));
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    Ok((0.5 * (a + b)).exp())
}

fn model_for(m: &ModelArgs, n: u64, k: u64) -> Res<GibbsModel> {
    Ok(match m.family {
        Family::Dp => GibbsModel::dirichlet(match m.alpha {
            Some(a) => a,
            None => mle_alpha(n, k)?.value,
        })?,
        Family::Ap => GibbsModel::aldous_pitman(match m.gamma {
            Some(g) => g,
            None => ap_ml(n, k)?,
        })?,
        Family::Dm => match m.h {
            Some(h) => GibbsModel::dirichlet_multinomial(m.sigma, h)?,
            None => return usage("the Dirichlet-multinomial needs --h"),
        },
    })
}

fn model_json(m: &GibbsModel) -> Value {
    serde_json::to_value(m).unwrap_or(Value::Null)
}

fn sg_prior(p: &PriorArgs, n: u64) -> Res<StirlingGammaSpec> {
    Ok(match &p.sg {
        Some(v) => StirlingGammaSpec::new(v[0], v[1], v[2] as u64)?,
        None => StirlingGammaSpec::new(1.0, (1.0 / n as f64).max(0.0002), n)?,
    })
}

fn draws_table(d: &[&PosteriorDraws]) -> Table {
    let cols: Vec<&'static str> = std::iter::once("draw")
        .chain(d.iter().map(|x| match x.parameter.as_str() {
            "alpha" => "alpha",
            "gamma" => "gamma",
            "K_N" => "K_N",
            "a_gamma" => "a_gamma",
            "b_gamma" => "b_gamma",
            _ => "value",
        }))
        .collect();
    let mut t = Table::new(cols);
    for i in 0..d[0].len() {
        let mut row = vec![Cell::Int(i as u64 + 1)];
        row.extend(d.iter().map(|x| Cell::Float(x.values[i])));
        t.push(row);
    }
    t
}

fn summary_json(d: &PosteriorDraws) -> Res<Value> {
    let mut v =
        serde_json::to_value(d.summary()?).map_err(|e| CliError::Internal(e.to_string()))?;
    if let (Some(diag), Value::Object(o)) = (&d.diagnostics, &mut v) {
        o.insert(
            "diagnostics".into(),
            serde_json::to_value(diag).unwrap_or(Value::Null),
        );
    }
    Ok(v)
}

pub fn fit(a: &FitArgs, w: &Writer) -> Res<()> {
    let s = load(&a.data)?;
    let p = &a.prior;
    let mut out = serde_json::Map::new();
    out.insert("n".into(), s.n.into());
    out.insert("k".into(), s.k.into());
    out.insert("rho".into(), p.rho.into());
    match a.family {
        Family::Dp => {
            let fisher = fisher_alpha(s.n, s.k)?;
            let ml = mle_alpha(s.n, s.k).ok();
            out.insert(
                "estimates".into(),
                json!({ "fisher": fisher.value, "ml": ml.map(|m| m.value) }),
            );
            let prior = sg_prior(p, s.n)?;
            out.insert(
                "prior".into(),
                serde_json::to_value(prior).unwrap_or(Value::Null),
            );
            let post = CoarsenedPosterior::new(prior, s.n, s.k, p.rho)?;
            let draws = sg_posterior_sample(&post, a.draws, a.common.seed)?;
            let t = diversity_transforms(&draws.values)?;
            out.insert("parameter".into(), "alpha".into());
            out.insert("summary".into(), summary_json(&draws)?);
            out.insert(
                "diversity".into(),
                json!({ "simpson": t.simpson_mean, "shannon": t.shannon_mean }),
            );
            w.table("draws", &draws_table(&[&draws]))?;
        }
        Family::Ap => {
            out.insert("estimates".into(), json!({ "ml": ap_ml(s.n, s.k).ok() }));
            let prior = match (&p.gamma_prior, p.py, p.ig) {
                (_, Some(theta), _) => ApPrior::PitmanYor { theta },
                (_, _, Some(beta)) => ApPrior::InverseGaussian { beta },
                (Some(g), _, _) => ApPrior::Gamma {
                    shape: g[0],
                    rate: g[1],
                },
                (None, None, None) => ApPrior::Gamma {
                    shape: 1.0,
                    rate: 1.0,
                },
            };
            out.insert(
                "prior".into(),
                serde_json::to_value(prior).unwrap_or(Value::Null),
            );
            let draws = match prior {
                ApPrior::Gamma { shape, rate } => {
                    let g = GammaPrior::new(shape, rate)?;
                    if a.mcmc_iters > 0 {
                        run_gibbs(
                            s.n,
                            s.k,
                            g,
                            p.rho,
                            CoarseningMode::Joint,
                            a.mcmc_iters,
                            a.burn_in,
                            a.common.seed,
                        )?
                    } else {
                        iid_two_step_sample(
                            s.n,
                            s.k,
                            g,
                            p.rho,
                            CoarseningMode::Joint,
                            a.draws,
                            a.common.seed,
                        )?
                    }
                }
                other => ap_posterior_slice(s.n, s.k, other, p.rho, a.draws, a.common.seed)?,
            };
            out.insert("parameter".into(), "gamma".into());
            out.insert("summary".into(), summary_json(&draws)?);
            w.table("draws", &draws_table(&[&draws]))?;
        }
        Family::Dm => {
            let h_max = a.h_max.unwrap_or(10 * s.k).max(s.k);
            let pmf = dm_posterior_h(a.sigma, s.n, s.k, h_max)?;
            let mut t = Table::new(vec!["H", "probability"]);
            for (i, &q) in pmf.iter().enumerate() {
                t.push(vec![Cell::Int(i as u64 + 1), Cell::Float(q)]);
            }
            let mean: f64 = pmf
                .iter()
                .enumerate()
                .map(|(i, q)| (i + 1) as f64 * q)
                .sum();
            let mode = pmf
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .map(|(i, _)| i + 1)
                .unwrap_or(0);
            out.insert("parameter".into(), "H".into());
            out.insert(
                "summary".into(),
                json!({ "mean": mean, "mode": mode, "h_max": h_max, "sigma": a.sigma }),
            );
            w.table("h_posterior", &t)?;
        }
    }
    w.json("summary", round_json(Value::Object(out)))?;
    Ok(())
}

fn grid(lo: u64, hi: u64, points: u64) -> Vec<u64> {
    let points = points.max(2);
    let mut v: Vec<u64> = (0..points)
        .map(|i| lo + ((hi - lo) as f64 * i as f64 / (points - 1) as f64).round() as u64)
        .collect();
    v.dedup();
    v
}

pub fn validate(a: &ValidateArgs, w: &Writer) -> Res<()> {
    let data = ingest_abundance_csv(&a.input)?;
    let (n, k) = (data.n(), data.k());
    let model = model_for(&a.model, n, k)?;
    let mc = MonteCarlo {
        replicates: a.replicates,
        seed: a.common.seed,
    };

    let classical = classical_rarefaction(&data);
    let sizes = grid(1, n, a.points);
    let curve = rarefaction_at(&model, &sizes, mc)?;
    let mut t = Table::new(vec!["size", "classical", "expected", "std_error"]);
    for p in &curve {
        t.push(vec![
            Cell::Int(p.size),
            Cell::Float(classical[p.size as usize - 1]),
            Cell::Float(p.expected),
            p.std_error.into(),
        ]);
    }
    w.table("rarefaction", &t)?;

    let r_max = a.r_max.min(n);
    let fc = expected_freq_counts(&model, n, r_max, mc)?;
    let observed = data.freq_counts();
    let mut t = Table::new(vec!["r", "observed", "expected", "std_error"]);
    for r in 1..=r_max {
        let se = fc.std_errors.as_ref().map(|s| s[r as usize - 1]);
        t.push(vec![
            Cell::Int(r),
            Cell::Int(observed.get(&r).copied().unwrap_or(0)),
            Cell::Float(fc.values[r as usize - 1]),
            se.into(),
        ]);
    }
    w.table("freq_counts", &t)?;

    let ranked: Vec<Vec<u64>> = (0..a.replicates as u64)
        .into_par_iter()
        .map(|i| {
            let s = urn_sample(&model, n, a.common.seed.wrapping_add(i))?;
            Ok(s.to_partition()?.abundances().to_vec())
        })
        .collect::<Result<_, sigmadiv::Error>>()?;
    let width = ranked
        .iter()
        .map(Vec::len)
        .max()
        .unwrap_or(0)
        .max(k as usize);
    let (mut s1, mut s2) = (vec![0u128; width], vec![0u128; width]);
    for r in &ranked {
        for (j, &c) in r.iter().enumerate() {
            s1[j] += c as u128;
            s2[j] += (c as u128) * (c as u128);
        }
    }
    let reps = a.replicates as f64;
    let mut t = Table::new(vec!["rank", "observed", "expected", "std_error"]);
    for j in 0..width {
        let mean = s1[j] as f64 / reps;
        let var = (s2[j] as f64 / reps - mean * mean).max(0.0) * reps / (reps - 1.0).max(1.0);
        t.push(vec![
            Cell::Int(j as u64 + 1),
            Cell::Int(data.abundances().get(j).copied().unwrap_or(0)),
            Cell::Float(mean),
            Cell::Short((var / reps).sqrt()),
        ]);
    }
    w.table("rad", &t)?;

    let idx = diversity_indices(&model, mc)?;
    let summary = json!({
        "model": model_json(&model),
        "n": n,
        "k": k,
        "singletons": { "observed": observed.get(&1).copied().unwrap_or(0), "expected": fc.values[0] },
        "expected_k": curve.last().map(|p| p.expected),
        "coverage": sample_coverage(&model, n, k)?,
        "prior_indices": idx,
    });
    w.json("summary", round_json(summary))?;
    Ok(())
}

pub fn richness(a: &RichnessArgs, w: &Writer) -> Res<()> {
    let s = load(&a.data)?;
    let prior = sg_prior(&a.prior, s.n)?;
    let post = CoarsenedPosterior::new(prior, s.n, s.k, a.prior.rho)?;
    let pop = PopulationPrior::new(a.n_hat, a.half_width)?;
    let r = richness_posterior(&post, pop, a.draws, a.common.seed)?;
    w.table("draws", &draws_table(&[&r.alpha, &r.k_total]))?;
    let summary = json!({
        "n": s.n,
        "k": s.k,
        "rho": a.prior.rho,
        "prior": prior,
        "population": pop,
        "alpha": summary_json(&r.alpha)?,
        "K_N": summary_json(&r.k_total)?,
    });
    w.json("summary", round_json(summary))?;
    Ok(())
}

pub fn extrapolate(a: &ExtrapolateArgs, w: &Writer) -> Res<()> {
    let s = load(&a.data)?;
    if a.m == 0 {
        return usage("--m must be positive");
    }
    let model = model_for(&a.model, s.n, s.k)?;
    let steps = grid(1, a.m, a.points);
    let mc = MonteCarlo {
        replicates: a.replicates,
        seed: a.common.seed,
    };
    let curve = extrapolation_at(&model, s.n, s.k, &steps, mc)?;
    let mut t = Table::new(vec!["size", "expected", "std_error"]);
    for p in &curve {
        t.push(vec![
            Cell::Int(p.size),
            Cell::Float(p.expected),
            p.std_error.into(),
        ]);
    }
    w.table("extrapolation", &t)?;
    let summary = json!({
        "model": model_json(&model),
        "n": s.n,
        "k": s.k,
        "m": a.m,
        "expected_final": curve.last().map(|p| p.expected),
        "monte_carlo": curve.iter().any(|p| p.std_error.is_some()),
    });
    w.json("summary", round_json(summary))?;
    Ok(())
}

fn taxo_spec(a: &TaxonomicArgs, data: &TaxonomicDataset) -> Res<TaxonomicModelSpec> {
    let l = a.levels;
    let families = a.families.clone().unwrap_or_else(|| {
        (0..l)
            .map(|i| if i + 1 == l { Family::Ap } else { Family::Dp })
            .collect()
    });
    let rhos = a.rho_levels.clone().unwrap_or_else(|| {
        (0..l)
            .map(|i| if i + 1 == l && l > 2 { 0.25 } else { 1.0 })
            .collect()
    });
    if families.len() != l || rhos.len() != l {
        return usage(format!("--families and --rho-levels need {l} entries"));
    }
    let sg = |v: &[f64], n: u64| LevelPrior::Dp {
        a: v[0],
        b: v[1],
        n_ref: if v[2] == 0.0 { n } else { v[2] as u64 },
    };
    let levels = families
        .iter()
        .zip(&rhos)
        .enumerate()
        .map(|(i, (f, &rho))| {
            let prior = match (i, f) {
                (0, Family::Dp) => sg(&a.sg, data.n()),
                (0, _) => return usage("level 1 must be dp"),
                (_, Family::Dp) => sg(&a.branch_sg, 0),
                (_, Family::Ap) => LevelPrior::ApHierarchical {
                    mu: [0.0, 0.0],
                    sd: 10.0,
                },
                (_, Family::Dm) => return usage("dm is not available for taxonomic fits"),
            };
            Ok(LevelSpec { prior, rho })
        })
        .collect::<Res<_>>()?;
    Ok(TaxonomicModelSpec { levels })
}

pub fn taxonomic(a: &TaxonomicArgs, w: &Writer) -> Res<()> {
    let data = ingest_taxonomy_csv(&a.input, a.levels)?;
    let spec = taxo_spec(a, &data)?;
    let mcmc = McmcConfig {
        iterations: a.mcmc_iters,
        burn_in: a.burn_in,
        seed: a.common.seed,
    };
    let fit = fit_taxonomic(&spec, &data, mcmc)?;
    for level in 2..=a.levels {
        let rows = branch_summaries(&fit, level)?;
        let mut t = Table::new(vec![
            "rank",
            "parent",
            "n",
            "k",
            "mean",
            "lower_1",
            "upper_99",
            "prior_only",
        ]);
        for r in rows {
            t.push(vec![
                Cell::Int(r.rank as u64),
                Cell::Text(r.parent.unwrap_or_default()),
                Cell::Int(r.n),
                Cell::Int(r.k),
                Cell::Short(r.mean),
                Cell::Short(r.lower),
                Cell::Short(r.upper),
                Cell::Text(r.prior_only.to_string()),
            ]);
        }
        w.table(&format!("branches_level{level}"), &t)?;
    }
    for h in &fit.hyper {
        w.table(
            &format!("hyper_level{}", h.level),
            &draws_table(&[&h.a, &h.b]),
        )?;
    }
    let mut body = fit_json(&fit)?;
    if let Value::Object(o) = &mut body {
        o.insert(
            "spec".into(),
            serde_json::to_value(&spec).unwrap_or(Value::Null),
        );
        let flagged: Vec<Value> = fit
            .branches
            .iter()
            .filter(|b| b.draws.diagnostics.is_some_and(|d| !d.converged))
            .map(|b| json!({ "level": b.level, "parent": b.parent }))
            .collect();
        o.insert("low_ess_branches".into(), flagged.into());
    }
    w.json("taxonomic", round_json(body))?;
    Ok(())
}

pub fn simulate(a: &SimulateArgs, w: &Writer) -> Res<()> {
    if a.n == 0 {
        return usage("--n must be positive");
    }
    if let Some(path) = &a.nested {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Lib(sigmadiv::Error::Io {
                path: path.clone(),
                source: e,
            })
        })?;
        let spec: NestedUrnSpec = serde_json::from_str(&text).map_err(sigmadiv::Error::from)?;
        let s = nested_urn_sample(&spec, a.n, a.common.seed)?;
        let depth = s.data.levels();
        let cols: Vec<&'static str> = ["level1", "level2", "level3", "level4", "level5", "level6"]
            .into_iter()
            .take(depth)
            .chain(std::iter::once("count"))
            .collect();
        if depth > 6 {
            return usage("at most 6 nested levels are supported");
        }
        let mut t = Table::new(cols);
        for (path, count) in s.data.leaf_paths() {
            let mut row: Vec<Cell> = path.into_iter().map(Cell::Text).collect();
            row.push(Cell::Int(count));
            t.push(row);
        }
        w.table("taxonomy", &t)?;
        let ks: Vec<u64> = (1..=depth).map(|l| s.data.k_at(l)).collect();
        w.json("summary", json!({ "n": a.n, "k_per_level": ks }))?;
        return Ok(());
    }
    let model = match a.model.family {
        Family::Dp if a.model.alpha.is_none() => return usage("simulation needs --alpha"),
        Family::Ap if a.model.gamma.is_none() => return usage("simulation needs --gamma"),
        _ => model_for(&a.model, a.n, 1)?,
    };
    let s = urn_sample(&model, a.n, a.common.seed)?;
    let part = s.to_partition()?;
    let mut t = Table::new(vec!["taxon", "count"]);
    for (label, &c) in part.labels().iter().zip(part.abundances()) {
        t.push(vec![Cell::Text(label.clone()), Cell::Int(c)]);
    }
    w.table("sample", &t)?;
    let mut t = Table::new(vec!["size", "k"]);
    for (i, k) in s.accumulate() {
        t.push(vec![Cell::Int(i), Cell::Int(k)]);
    }
    w.table("accumulation", &t)?;
    w.json(
        "summary",
        round_json(json!({ "model": model_json(&model), "n": a.n, "k": part.k() })),
    )?;
    Ok(())
}
