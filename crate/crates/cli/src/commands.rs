use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Duration;

use evsi_core::cases::{build_case, Case};
use evsi_core::io::{
    write_bench_csv, write_json, write_points_csv, write_psa_csv, write_summary_csv,
};
use evsi_core::model::{
    compute_inb, decision_gain, decision_gain_se, evpi, net_benefit_table, run_psa, PsaSamples,
};
use evsi_core::moment_match::{estimate_evsi, MomentMatchOptions};
use evsi_core::oracle::experiments::{
    ades_crosscheck, bias_sweep, replicate_table1, variance_convergence, AdesCrosscheck, BiasSweep,
    ExperimentOutput, OracleChoice, QuadratureExperiment,
};
use evsi_core::oracle::selftest::{run_selftest, Check};
use evsi_core::oracle::{exact_evsi, nested_mc_evsi, NestedOptions};
use evsi_core::preposterior::PosteriorOptions;
use evsi_core::regression::{evppi, fit_inb_phi};
use evsi_core::stats::{summarize, SeedSpec};
use evsi_core::{Error, Result};
use serde_json::{json, Value};

use crate::config::RunConfig;

/// What a command wrote, for the manifest.
pub struct Written {
    pub seeds: BTreeMap<String, SeedSpec>,
    pub outputs: Vec<String>,
    /// Selftest disagreements; empty for other commands.
    pub failed_checks: Vec<Check>,
}

impl Written {
    fn new(seeds: &[(&str, SeedSpec)], outputs: &[&str]) -> Self {
        Self {
            seeds: seeds.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            outputs: outputs.iter().map(|s| s.to_string()).collect(),
            failed_checks: Vec::new(),
        }
    }
}

fn psa_seed(cfg: &RunConfig) -> SeedSpec {
    cfg.master_seed().derive(0)
}

fn case(cfg: &RunConfig) -> Result<Case> {
    let mut case = build_case(cfg.model()?, &cfg.params)?;
    if let Some(n) = cfg.n {
        case.set_sample_size(cfg.design.as_deref(), n)?;
    }
    Ok(case)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

/// Drops `wall_time` entries so reruns give identical files.
fn strip_times(v: &mut Value) {
    match v {
        Value::Object(map) => {
            map.remove("wall_time");
            map.values_mut().for_each(strip_times);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_times),
        _ => {}
    }
}

fn timed(cfg: &RunConfig, mut v: Value) -> Value {
    if !cfg.timings.unwrap_or(false) {
        strip_times(&mut v);
    }
    v
}

fn moments(values: &[f64]) -> Result<Value> {
    let s = summarize(values)?;
    Ok(json!({"mean": s.mean, "variance": s.variance}))
}

fn draw_psa(cfg: &RunConfig, case: &Case) -> Result<PsaSamples> {
    run_psa(&case.model, cfg.s.unwrap_or_default(), psa_seed(cfg))
}

pub fn psa(cfg: &RunConfig, out: &Path) -> Result<Written> {
    let case = case(cfg)?;
    let psa = draw_psa(cfg, &case)?;
    write_psa_csv(create(out, "psa.csv")?, &case.model, &psa)?;
    let t = case.model.n_treatments();
    let nb = net_benefit_table(&case.model, &psa)?;
    let mut params = serde_json::Map::new();
    for (i, name) in psa.names().iter().enumerate() {
        params.insert(name.clone(), moments(&psa.column(i))?);
    }
    let nbs = (0..t)
        .map(|j| moments(&nb.iter().skip(j).step_by(t).copied().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let inb = compute_inb(&case.model, &psa)?;
    let summary = json!({
        "model": case.model.name(),
        "S": psa.n_draws(),
        "parameters": params,
        "net_benefit": nbs,
        "inb": moments(&inb.inb_theta)?,
        "evpi": evpi(&inb)?,
        "evpi_standard_error": decision_gain_se(&inb.inb_theta),
    });
    write_json(&out.join("summary.json"), &summary)?;
    println!("wrote {} PSA draws; EVPI = {}", psa.n_draws(), evpi(&inb)?);
    Ok(Written::new(
        &[("psa", psa_seed(cfg))],
        &["psa.csv", "summary.json"],
    ))
}

pub fn evppi_cmd(cfg: &RunConfig, out: &Path) -> Result<Written> {
    let case = case(cfg)?;
    let focal = match &cfg.focal {
        Some(f) => f.clone(),
        None => case.design(cfg.design.as_deref())?.focal_params.clone(),
    };
    let psa = draw_psa(cfg, &case)?;
    let mut inb = compute_inb(&case.model, &psa)?;
    let fit = fit_inb_phi(&mut inb, &psa, &focal, &Default::default())?;
    let value = evppi(&fit);
    let result = json!({
        "model": case.model.name(),
        "focal": focal,
        "evppi": value,
        "evppi_standard_error": decision_gain_se(inb.phi_or_theta()),
        "evpi": decision_gain(&inb.inb_theta),
        "regression": fit.summary_json(),
    });
    write_json(&out.join("evppi.json"), &result)?;
    println!("EVPPI({}) = {value}", focal.join(", "));
    Ok(Written::new(&[("psa", psa_seed(cfg))], &["evppi.json"]))
}

pub fn evsi(cfg: &RunConfig, out: &Path) -> Result<Written> {
    let case = case(cfg)?;
    let design = case.design(cfg.design.as_deref())?;
    let psa = draw_psa(cfg, &case)?;
    let quadrature = cfg.master_seed().derive(1);
    let opts = MomentMatchOptions {
        q: cfg.q.unwrap_or_default(),
        posterior: PosteriorOptions {
            m: cfg.m.unwrap_or_default(),
            burn_in: cfg.burn_in.unwrap_or_default(),
        },
        seed: quadrature,
        ..Default::default()
    };
    let r = estimate_evsi(&case.model, design, &psa, &opts)?;
    write_json(&out.join("result.json"), &r.to_json())?;
    write_points_csv(
        create(out, "points.csv")?,
        &design.focal_params,
        &r.variance_estimate.points,
    )?;
    println!(
        "EVSI({}, N={}) = {} (SE {}); EVPPI = {}; EVPI = {}",
        design.name,
        design.sample_size(),
        r.evsi,
        r.standard_error,
        r.evppi,
        r.evpi
    );
    Ok(Written::new(
        &[("psa", psa_seed(cfg)), ("quadrature", quadrature)],
        &["result.json", "points.csv"],
    ))
}

pub fn nested(cfg: &RunConfig, out: &Path) -> Result<Written> {
    let case = case(cfg)?;
    let design = case.design(cfg.design.as_deref())?;
    let seed = cfg.master_seed().derive(2);
    let mut opts = NestedOptions::new(
        cfg.n_outer.unwrap_or_default(),
        cfg.n_inner.unwrap_or_default(),
        seed,
    );
    opts.burn_in = cfg.burn_in.unwrap_or(opts.burn_in);
    opts.budget = cfg.budget_seconds.map(Duration::from_secs_f64);
    let r = nested_mc_evsi(&case.model, design, &opts)?;
    let exact = match &case.toy {
        Some(t) => Some(exact_evsi(t)?.evsi),
        None => None,
    };
    let result = json!({
        "model": case.model.name(),
        "design": design.name,
        "sample_size": design.sample_size(),
        "oracle": serde_json::to_value(&r)?,
        "exact": exact,
    });
    write_json(&out.join("nested.json"), &timed(cfg, result))?;
    println!(
        "nested EVSI({}) = {} (SE {})",
        design.name, r.evsi, r.standard_error
    );
    Ok(Written::new(&[("nested", seed)], &["nested.json"]))
}

fn quadrature_experiment(cfg: &RunConfig, seed: SeedSpec) -> QuadratureExperiment {
    QuadratureExperiment {
        q_values: cfg.q_values.clone().unwrap_or_default(),
        replicates: cfg.replicates.unwrap_or_default(),
        s: cfg.s.unwrap_or_default(),
        m: cfg.m.unwrap_or_default(),
        oracle_outer: cfg.n_outer.unwrap_or_default(),
        seed,
    }
}

pub fn benchmark(cfg: &RunConfig, out: &Path) -> Result<Written> {
    let name = cfg.experiment.clone().unwrap_or_default();
    let seed = cfg.master_seed();
    let mut extra = Value::Null;
    let output: ExperimentOutput = match name.as_str() {
        "table1" => replicate_table1(&quadrature_experiment(cfg, seed))?,
        "variance_convergence" => variance_convergence(&quadrature_experiment(cfg, seed))?,
        "beta_binomial_bias" | "exp_gamma_bias" => {
            let mut sweep = if name == "beta_binomial_bias" {
                BiasSweep::beta_binomial(seed)
            } else {
                BiasSweep::exp_gamma(seed)
            };
            sweep.n_values = cfg.n_values.clone().unwrap_or_default();
            sweep.replicates = cfg.replicates.unwrap_or_default();
            sweep.s = cfg.s.unwrap_or_default();
            if let (OracleChoice::Nested { .. }, Some(n_outer)) = (sweep.oracle, cfg.n_outer) {
                sweep.oracle = OracleChoice::Nested { n_outer };
            }
            bias_sweep(&sweep, &name)?
        }
        "ades_crosscheck" => {
            let mut c = AdesCrosscheck::new(seed);
            c.s = cfg.s.unwrap_or(c.s);
            c.q = cfg.q.unwrap_or(c.q);
            c.posterior = PosteriorOptions {
                m: cfg.m.unwrap_or(c.posterior.m),
                burn_in: cfg.burn_in.unwrap_or(c.posterior.burn_in),
            };
            c.n_outer = cfg.n_outer.unwrap_or(c.n_outer);
            c.n_inner = cfg.n_inner.unwrap_or(c.n_inner);
            let (output, checks) = ades_crosscheck(&c)?;
            extra = serde_json::to_value(&checks)?;
            output
        }
        other => return Err(Error::Config(format!("unknown experiment `{other}`"))),
    };
    let timings = cfg.timings.unwrap_or(false);
    let table = format!("{name}.csv");
    let summary_csv = format!("{name}_summary.csv");
    write_bench_csv(create(out, &table)?, &output.rows, timings)?;
    let summary = output.summary();
    write_summary_csv(create(out, &summary_csv)?, &name, &summary)?;
    let details = json!({
        "experiment": name,
        "oracle": output.oracle,
        "summary": summary,
        "checks": extra,
    });
    write_json(&out.join("summary.json"), &timed(cfg, details))?;
    for s in &summary {
        println!(
            "{name} {}: mean {} (SD {}, {} replicates), oracle {}, relative bias {:+.4}",
            s.parameter, s.mean_estimate, s.sd_estimate, s.replicates, s.oracle, s.relative_bias
        );
    }
    Ok(Written::new(
        &[("benchmark", seed)],
        &[table.as_str(), summary_csv.as_str(), "summary.json"],
    ))
}

pub fn selftest(cfg: &RunConfig, out: &Path) -> Result<Written> {
    let seed = cfg.master_seed();
    let checks = run_selftest(seed);
    for c in &checks {
        println!(
            "{} {}: {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    write_json(&out.join("selftest.json"), &checks)?;
    let mut w = Written::new(&[("selftest", seed)], &["selftest.json"]);
    w.failed_checks = checks.into_iter().filter(|c| !c.passed).collect();
    println!("{} check(s) failed", w.failed_checks.len());
    Ok(w)
}
