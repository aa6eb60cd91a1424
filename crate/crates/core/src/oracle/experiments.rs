//! Replicated benchmark experiments. Every replicate has its own derived
//! stream, so rows are reproducible individually and independent of the
//! thread count.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    exact_evsi, nested_mc_evsi, regression_on_summaries_evsi, NestedOptions, OracleResult,
};
use crate::cases::{build_case, ConjugateToy};
use crate::error::{Error, Result};
use crate::model::{compute_inb, decision_gain_se, run_psa};
use crate::moment_match::{
    compute_constants, estimate_evsi, evsi_from_rescaled, MomentMatchOptions,
};
use crate::preposterior::PosteriorOptions;
use crate::stats::{summarize, SeedSpec};

/// Quadrature sizes of the posterior-sample table.
pub const TABLE1_Q: [usize; 12] = [1, 2, 3, 5, 8, 10, 20, 30, 40, 50, 75, 100];

pub const EXPERIMENTS: [&str; 5] = [
    "table1",
    "beta_binomial_bias",
    "exp_gamma_bias",
    "variance_convergence",
    "ades_crosscheck",
];

/// One line of a benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub experiment: String,
    pub parameter: String,
    pub replicate: usize,
    pub estimate: f64,
    pub oracle: f64,
    pub se: f64,
    pub wall_time: Option<f64>,
}

/// Replicate statistics for one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSummary {
    pub parameter: String,
    pub replicates: usize,
    pub mean_estimate: f64,
    pub sd_estimate: f64,
    pub oracle: f64,
    /// `(mean_estimate - oracle) / oracle`.
    pub relative_bias: f64,
}

/// Groups rows by parameter, in order of first appearance.
pub fn summarize_rows(rows: &[BenchRow]) -> Vec<RowSummary> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.parameter.as_str()) {
            order.push(&r.parameter);
        }
    }
    order
        .into_iter()
        .map(|p| {
            let group: Vec<&BenchRow> = rows.iter().filter(|r| r.parameter == p).collect();
            let est: Vec<f64> = group.iter().map(|r| r.estimate).collect();
            let n = est.len() as f64;
            let mean = est.iter().sum::<f64>() / n;
            let sd = if est.len() > 1 {
                (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let oracle = group[0].oracle;
            RowSummary {
                parameter: p.to_string(),
                replicates: est.len(),
                mean_estimate: mean,
                sd_estimate: sd,
                oracle,
                relative_bias: (mean - oracle) / oracle,
            }
        })
        .collect()
}

/// Rows plus the reference value they were compared against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutput {
    pub experiment: String,
    pub oracle: Option<OracleResult>,
    pub rows: Vec<BenchRow>,
}

impl ExperimentOutput {
    pub fn summary(&self) -> Vec<RowSummary> {
        summarize_rows(&self.rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureExperiment {
    pub q_values: Vec<usize>,
    pub replicates: usize,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "M")]
    pub m: usize,
    /// Outer size of the nested oracle for the reference EVSI.
    pub oracle_outer: usize,
    pub seed: SeedSpec,
}

impl QuadratureExperiment {
    pub fn table1(seed: SeedSpec) -> Self {
        Self {
            q_values: TABLE1_Q.to_vec(),
            replicates: 50,
            s: 10_000,
            m: 1_000,
            oracle_outer: 1_000_000,
            seed,
        }
    }

    pub fn variance_convergence(seed: SeedSpec) -> Self {
        Self {
            replicates: 100,
            ..Self::table1(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.q_values.is_empty() || self.replicates == 0 {
            return Err(Error::Config(
                "need at least one Q value and one replicate".into(),
            ));
        }
        Ok(())
    }
}

struct QuadratureRun {
    q: usize,
    replicate: usize,
    evsi: f64,
    evsi_se: f64,
    sigma2: f64,
    sigma2_se: f64,
    seconds: f64,
}

fn quadrature_runs(cfg: &QuadratureExperiment, toy: ConjugateToy) -> Result<Vec<QuadratureRun>> {
    cfg.validate()?;
    let model = toy.model()?;
    let design = toy.design();
    let runs: Vec<Vec<QuadratureRun>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let rep = cfg.seed.derive(r as u64);
            let psa = run_psa(&model, cfg.s, rep.derive(0))?;
            cfg.q_values
                .iter()
                .map(|&q| {
                    let start = Instant::now();
                    let opts = MomentMatchOptions {
                        q,
                        posterior: PosteriorOptions {
                            m: cfg.m,
                            burn_in: 0,
                        },
                        seed: rep.derive(1).derive(q as u64),
                        ..Default::default()
                    };
                    let res = estimate_evsi(&model, &design, &psa, &opts)?;
                    Ok(QuadratureRun {
                        q,
                        replicate: r,
                        evsi: res.evsi,
                        evsi_se: res.standard_error,
                        sigma2: res.sigma2,
                        sigma2_se: res.sigma2_standard_error,
                        seconds: start.elapsed().as_secs_f64(),
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut flat: Vec<QuadratureRun> = runs.into_iter().flatten().collect();
    // Q-major order reads better in the table.
    flat.sort_by_key(|r| {
        (
            cfg.q_values
                .iter()
                .position(|&q| q == r.q)
                .unwrap_or(usize::MAX),
            r.replicate,
        )
    });
    Ok(flat)
}

/// Moment-matching EVSI on the quadratic model for each `Q`, against a
/// nested oracle with exact inner means.
pub fn replicate_table1(cfg: &QuadratureExperiment) -> Result<ExperimentOutput> {
    let toy = ConjugateToy::quadratic_normal();
    let oracle = nested_mc_evsi(
        &toy.model()?,
        &toy.design(),
        &NestedOptions::new(cfg.oracle_outer, 100, cfg.seed.derive(u64::MAX)),
    )?;
    let rows = quadrature_runs(cfg, toy)?
        .into_iter()
        .map(|r| BenchRow {
            experiment: "table1".into(),
            parameter: format!("Q={}", r.q),
            replicate: r.replicate,
            estimate: r.evsi,
            oracle: oracle.evsi,
            se: r.evsi_se,
            wall_time: Some(r.seconds),
        })
        .collect();
    Ok(ExperimentOutput {
        experiment: "table1".into(),
        oracle: Some(oracle),
        rows,
    })
}

/// Estimated variance of the preposterior mean on the quadratic model for
/// each `Q`, against its closed form.
pub fn variance_convergence(cfg: &QuadratureExperiment) -> Result<ExperimentOutput> {
    let toy = ConjugateToy::quadratic_normal();
    let exact = toy.analytic_preposterior()?.variance;
    let rows = quadrature_runs(cfg, toy)?
        .into_iter()
        .map(|r| BenchRow {
            experiment: "variance_convergence".into(),
            parameter: format!("Q={}", r.q),
            replicate: r.replicate,
            estimate: r.sigma2,
            oracle: exact,
            se: r.sigma2_se,
            wall_time: Some(r.seconds),
        })
        .collect();
    Ok(ExperimentOutput {
        experiment: "variance_convergence".into(),
        oracle: None,
        rows,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OracleChoice {
    /// Enumeration or closed form.
    Exact,
    Nested {
        n_outer: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiasSweep {
    pub toy: ConjugateToy,
    pub n_values: Vec<u64>,
    pub replicates: usize,
    #[serde(rename = "S")]
    pub s: usize,
    pub oracle: OracleChoice,
    pub seed: SeedSpec,
}

impl BiasSweep {
    pub fn beta_binomial(seed: SeedSpec) -> Self {
        Self {
            toy: ConjugateToy::beta_binomial(1),
            n_values: vec![1, 2, 3, 5, 10, 20, 50],
            replicates: 1_000,
            s: 10_000,
            oracle: OracleChoice::Exact,
            seed,
        }
    }

    pub fn exp_gamma(seed: SeedSpec) -> Self {
        Self {
            toy: ConjugateToy::exp_gamma(5),
            n_values: vec![5, 10, 20, 50],
            replicates: 1_000,
            s: 10_000,
            oracle: OracleChoice::Nested { n_outer: 1_000_000 },
            seed,
        }
    }
}

/// Sampling distribution of the moment-matching estimator when the
/// variance of the preposterior mean is known exactly, so only the
/// moment-matching approximation and the PSA size contribute error.
pub fn bias_sweep(cfg: &BiasSweep, experiment: &str) -> Result<ExperimentOutput> {
    if cfg.n_values.is_empty() || cfg.replicates == 0 {
        return Err(Error::Config(
            "need at least one N value and one replicate".into(),
        ));
    }
    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let toy = cfg.toy.with_sample_size(n);
        let model = toy.model()?;
        let sigma2 = toy.analytic_preposterior()?.variance;
        let at = cfg.seed.derive(n);
        let oracle = match cfg.oracle {
            OracleChoice::Exact => exact_evsi(&toy)?,
            OracleChoice::Nested { n_outer } => nested_mc_evsi(
                &model,
                &toy.design(),
                &NestedOptions::new(n_outer, 100, at.derive(u64::MAX)),
            )?,
        };
        let reps: Vec<BenchRow> = (0..cfg.replicates)
            .into_par_iter()
            .map(|r| {
                let start = Instant::now();
                let psa = run_psa(&model, cfg.s, at.derive(r as u64))?;
                let inb = compute_inb(&model, &psa)?;
                let c = compute_constants(sigma2, &inb)?;
                let rescaled: Vec<f64> = inb.inb_theta.iter().map(|v| c.a * v + c.b).collect();
                Ok(BenchRow {
                    experiment: experiment.to_string(),
                    parameter: format!("N={n}"),
                    replicate: r,
                    estimate: evsi_from_rescaled(&rescaled)?,
                    oracle: oracle.evsi,
                    se: decision_gain_se(&rescaled),
                    wall_time: Some(start.elapsed().as_secs_f64()),
                })
            })
            .collect::<Result<_>>()?;
        rows.extend(reps);
    }
    Ok(ExperimentOutput {
        experiment: experiment.to_string(),
        oracle: None,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdesCrosscheck {
    pub studies: Vec<String>,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    pub posterior: PosteriorOptions,
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: SeedSpec,
}

impl AdesCrosscheck {
    pub fn new(seed: SeedSpec) -> Self {
        Self {
            studies: (1..=4).map(|i| format!("study{i}")).collect(),
            s: 100_000,
            q: 30,
            posterior: PosteriorOptions::default(),
            n_outer: 5_000,
            n_inner: 5_000,
            seed,
        }
    }
}

/// Per-study comparison of the moment-matching estimate with both
/// comparators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCheck {
    pub study: String,
    pub evsi: f64,
    pub standard_error: f64,
    pub nested: OracleResult,
    pub summaries: OracleResult,
}

impl StudyCheck {
    /// Difference from a comparator in units of the combined standard error.
    pub fn z_score(&self, other: &OracleResult) -> f64 {
        let se = self.standard_error.hypot(other.standard_error);
        (self.evsi - other.evsi).abs() / se
    }
}

pub fn ades_crosscheck(cfg: &AdesCrosscheck) -> Result<(ExperimentOutput, Vec<StudyCheck>)> {
    let case = build_case("ades", &Default::default())?;
    let psa = run_psa(&case.model, cfg.s, cfg.seed.derive(0))?;
    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (i, study) in cfg.studies.iter().enumerate() {
        let design = case.design(Some(study))?;
        let start = Instant::now();
        let opts = MomentMatchOptions {
            q: cfg.q,
            posterior: cfg.posterior,
            seed: cfg.seed.derive(1).derive(i as u64),
            ..Default::default()
        };
        let mm = estimate_evsi(&case.model, design, &psa, &opts)?;
        let mm_time = start.elapsed().as_secs_f64();
        let mut nested_opts = NestedOptions::new(
            cfg.n_outer,
            cfg.n_inner,
            cfg.seed.derive(2).derive(i as u64),
        );
        nested_opts.burn_in = cfg.posterior.burn_in.min(cfg.n_inner - 1);
        let nested = nested_mc_evsi(&case.model, design, &nested_opts)?;
        let summaries = regression_on_summaries_evsi(
            &case.model,
            design,
            &psa,
            cfg.seed.derive(3).derive(i as u64),
            &Default::default(),
        )?;
        let check = StudyCheck {
            study: study.clone(),
            evsi: mm.evsi,
            standard_error: mm.standard_error,
            nested,
            summaries,
        };
        for o in [&check.nested, &check.summaries] {
            rows.push(BenchRow {
                experiment: "ades_crosscheck".into(),
                parameter: format!(
                    "{study}:{}",
                    serde_json::to_value(o.method)?.as_str().unwrap_or("oracle")
                ),
                replicate: 0,
                estimate: mm.evsi,
                oracle: o.evsi,
                se: mm.standard_error.hypot(o.standard_error),
                wall_time: Some(mm_time + o.wall_time),
            });
        }
        checks.push(check);
    }
    Ok((
        ExperimentOutput {
            experiment: "ades_crosscheck".into(),
            oracle: None,
            rows,
        },
        checks,
    ))
}

/// Mean and sample standard deviation.
pub fn mean_sd(values: &[f64]) -> Result<(f64, f64)> {
    let s = summarize(values)?;
    Ok((s.mean, s.variance.sqrt()))
}
