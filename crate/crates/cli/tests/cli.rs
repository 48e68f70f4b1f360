use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigmadiv"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(2)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

const SMALL: &str = "taxon,count\na,5\nb,3\nc,1\nd,1\ne,2\nf,7\ng,1\n";

#[test]
fn dp_fit_from_sufficient_statistics() {
    let t = tempfile::tempdir().unwrap();
    let o = t.path().join("out");
    ok(&[
        "fit",
        "--n",
        "553949",
        "--k",
        "4962",
        "--sg",
        "1",
        "0.0002",
        "553949",
        "--seed",
        "1",
        "-o",
        o.to_str().unwrap(),
    ]);
    let s = json(&o.join("summary.json"));
    let median = s["summary"]["quantiles"]["50"].as_f64().unwrap();
    assert!((median - 751.0).abs() < 3.0, "median {median}");
    assert!((s["estimates"]["ml"].as_f64().unwrap() - 751.23).abs() < 0.01);
    assert_eq!(rows(&o.join("draws.csv")).len(), 10_000);
}

#[test]
fn header_line_carries_config() {
    let t = tempfile::tempdir().unwrap();
    let o = t.path().join("out");
    ok(&[
        "fit",
        "--n",
        "100",
        "--k",
        "20",
        "--seed",
        "9",
        "--draws",
        "50",
        "-o",
        o.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(o.join("draws.csv")).unwrap();
    let first = text.lines().next().unwrap();
    let cfg: Value = serde_json::from_str(first.strip_prefix("# config: ").unwrap()).unwrap();
    assert_eq!(cfg["subcommand"], "fit");
    assert_eq!(cfg["common"]["seed"], 9);
    assert!(cfg["common"].get("threads").is_none());
    assert_eq!(text.lines().nth(1).unwrap(), "draw,alpha");
}

#[test]
fn exit_codes() {
    let t = tempfile::tempdir().unwrap();
    let o = t.path().join("out");
    let o = o.to_str().unwrap();
    let out = run(&["fit", "--n", "10", "--k", "10", "--seed", "1", "-o", o]);
    assert_eq!(out.status.code(), Some(3));

    let bad = t.path().join("bad.csv");
    fs::write(&bad, "taxon,count\na,3\nb,x\n").unwrap();
    let out = run(&["fit", "-i", bad.to_str().unwrap(), "--seed", "1", "-o", o]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let dup = t.path().join("dup.csv");
    fs::write(&dup, "taxon,count\na,3\na,1\n").unwrap();
    let out = run(&["fit", "-i", dup.to_str().unwrap(), "--seed", "1", "-o", o]);
    assert_eq!(out.status.code(), Some(2));

    let out = run(&[
        "fit", "--n", "100", "--k", "20", "--rho", "1.5", "--seed", "1", "-o", o,
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn one_step_extrapolation_adds_new_taxon_probability() {
    let t = tempfile::tempdir().unwrap();
    let o = t.path().join("out");
    ok(&[
        "extrapolate",
        "--n",
        "1000",
        "--k",
        "50",
        "--alpha",
        "10",
        "--m",
        "1",
        "--seed",
        "1",
        "-o",
        o.to_str().unwrap(),
    ]);
    let r = rows(&o.join("extrapolation.csv"));
    assert_eq!(r.len(), 1);
    let e: f64 = r[0][1].parse().unwrap();
    assert!((e - (50.0 + 10.0 / 1010.0)).abs() < 1e-12);
}

#[test]
fn repeat_runs_are_byte_identical() {
    let t = tempfile::tempdir().unwrap();
    let input = t.path().join("s.csv");
    fs::write(&input, SMALL).unwrap();
    let i = input.to_str().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    let c = t.path().join("c");
    let base = [
        "validate",
        "-i",
        i,
        "--seed",
        "4",
        "--replicates",
        "200",
        "--family",
        "ap",
        "--gamma",
        "2",
    ];
    ok(&[&base[..], &["-o", a.to_str().unwrap()]].concat());
    ok(&[&base[..], &["-o", b.to_str().unwrap(), "--threads", "1"]].concat());
    ok(&[&base[..], &["-o", c.to_str().unwrap(), "--threads", "3"]].concat());
    assert_eq!(dir_contents(&a), dir_contents(&b));
    assert_eq!(dir_contents(&a), dir_contents(&c));

    let fit = [
        "fit", "-i", i, "--family", "ap", "--seed", "4", "--draws", "2000",
    ];
    ok(&[&fit[..], &["-o", a.to_str().unwrap()]].concat());
    ok(&[&fit[..], &["-o", b.to_str().unwrap(), "--threads", "2"]].concat());
    assert_eq!(dir_contents(&a), dir_contents(&b));
}

#[test]
fn richness_at_observed_population_is_point_mass() {
    let t = tempfile::tempdir().unwrap();
    let o = t.path().join("out");
    ok(&[
        "richness",
        "--n",
        "500",
        "--k",
        "40",
        "--n-hat",
        "500",
        "--half-width",
        "0",
        "--draws",
        "500",
        "--seed",
        "2",
        "-o",
        o.to_str().unwrap(),
    ]);
    for r in rows(&o.join("draws.csv")) {
        assert_eq!(r[2].parse::<f64>().unwrap(), 40.0);
    }
}

#[test]
fn json_format() {
    let t = tempfile::tempdir().unwrap();
    let o = t.path().join("out");
    ok(&[
        "simulate",
        "--alpha",
        "4",
        "--n",
        "200",
        "--seed",
        "3",
        "--format",
        "json",
        "-o",
        o.to_str().unwrap(),
    ]);
    let s = json(&o.join("sample.json"));
    assert_eq!(s["config"]["subcommand"], "simulate");
    let total: u64 = s["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["count"].as_u64().unwrap())
        .sum();
    assert_eq!(total, 200);
    let acc = json(&o.join("accumulation.json"));
    let last = acc["rows"].as_array().unwrap().last().unwrap();
    assert_eq!(last["size"], 200);
    assert_eq!(last["k"], s["rows"].as_array().unwrap().len());
}

#[test]
fn taxonomic_smoke() {
    let t = tempfile::tempdir().unwrap();
    let input = t.path().join("tax.csv");
    // 20 observations, 2 orders, 5 families, 8 genera
    fs::write(
        &input,
        "level1,level2,level3,count\n\
         A,Aa,g1,4\nA,Aa,g2,2\nA,Ab,g3,3\nA,Ac,g4,1\nA,Ac,g5,2\n\
         B,Ba,g6,5\nB,Bb,g7,2\nB,Bb,g8,1\n",
    )
    .unwrap();
    let o = t.path().join("out");
    ok(&[
        "taxonomic",
        "-i",
        input.to_str().unwrap(),
        "--mcmc-iters",
        "1500",
        "--burn-in",
        "200",
        "--seed",
        "8",
        "-o",
        o.to_str().unwrap(),
    ]);
    let fit = json(&o.join("taxonomic.json"));
    assert!(fit["level1"].is_object());
    assert_eq!(fit["families"]["branches"].as_array().unwrap().len(), 2);
    assert_eq!(fit["genera"]["branches"].as_array().unwrap().len(), 5);
    assert_eq!(rows(&o.join("branches_level2.csv")).len(), 2);
    assert_eq!(rows(&o.join("branches_level3.csv")).len(), 5);
}

#[test]
fn nested_simulation_roundtrips_into_taxonomic_fit() {
    let t = tempfile::tempdir().unwrap();
    let spec = t.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"level1": {"family": "dirichlet", "alpha": 2.0},
            "levels": [[{"family": "dirichlet", "alpha": 1.0}], [{"family": "aldous_pitman", "gamma": 1.0}]]}"#,
    )
    .unwrap();
    let o = t.path().join("sim");
    ok(&[
        "simulate",
        "--nested",
        spec.to_str().unwrap(),
        "--n",
        "150",
        "--seed",
        "1",
        "-o",
        o.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(o.join("taxonomy.csv")).unwrap();
    let body: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
    let total: u64 = body
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 150);
    let input = t.path().join("tax.csv");
    fs::write(&input, body).unwrap();
    let f = t.path().join("fit");
    ok(&[
        "taxonomic",
        "-i",
        input.to_str().unwrap(),
        "--mcmc-iters",
        "500",
        "--burn-in",
        "100",
        "--seed",
        "1",
        "-o",
        f.to_str().unwrap(),
    ]);
}
