//! Reference EVSI values: nested Monte Carlo, exact results for the
//! conjugate toys, and regression of INB on simulated data summaries.

pub mod experiments;
pub mod selftest;

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cases::design::{BoundDesign, PosteriorRecipe, StudyDesign};
use crate::cases::ConjugateToy;
use crate::error::{Error, Result};
use crate::model::{compute_inb, decision_gain, decision_gain_se, DecisionModel, PsaSamples};
use crate::preposterior::posterior::{conjugate_posterior, prior_samplers, run_bound};
use crate::preposterior::PosteriorOptions;
use crate::regression::{fit_conditional_mean, RegressionOptions};
use crate::stats::{mean, summarize, Sampler, SeedSpec};

const OUTER_BLOCK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    NestedMc,
    AnalyticEnumeration,
    ClosedFormNormal,
    ClosedFormGamma,
    ClosedFormQuadratic,
    RegressionOnSummaries,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub method: OracleMethod,
    pub evsi: f64,
    pub standard_error: f64,
    pub n_outer: usize,
    pub n_inner: usize,
    /// Seconds of wall-clock time.
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NestedOptions {
    pub n_outer: usize,
    pub n_inner: usize,
    /// Burn-in of each inner Metropolis chain.
    pub burn_in: usize,
    /// Abort once this much wall-clock time has passed.
    pub budget: Option<Duration>,
    pub seed: SeedSpec,
}

impl NestedOptions {
    pub fn new(n_outer: usize, n_inner: usize, seed: SeedSpec) -> Self {
        Self {
            n_outer,
            n_inner,
            burn_in: 1_000.min(n_inner / 5),
            budget: None,
            seed,
        }
    }
}

/// Exact posterior mean of INB when it is a polynomial in a single,
/// conjugately updated parameter.
fn exact_inner_mean(
    bound: &BoundDesign,
    model: &DecisionModel,
    x: &crate::cases::Dataset,
) -> Result<Option<f64>> {
    let Some([c0, c1, c2]) = model.inb_polynomial() else {
        return Ok(None);
    };
    if bound.recipe == PosteriorRecipe::MetropolisGeneric {
        return Ok(None);
    }
    let post = conjugate_posterior(bound, model, x)?;
    Ok(match (post.mean(), post.variance()) {
        (Some(m), Some(v)) => Some(c0 + c1 * m + c2 * (v + m * m)),
        _ => None,
    })
}

fn draw_theta(samplers: &[Sampler], rng: &mut crate::stats::StreamRng) -> Vec<f64> {
    samplers.iter().map(|s| s.draw(rng)).collect()
}

/// Two-level Monte Carlo EVSI: the outer loop draws parameters and a
/// dataset, the inner loop the posterior mean of INB given that dataset.
///
/// Inner means are exact for polynomial INB under a conjugate update, use
/// `n_inner` exact posterior draws for other conjugate updates, and a
/// Metropolis chain of `n_inner` retained draws otherwise.
pub fn nested_mc_evsi(
    model: &DecisionModel,
    design: &StudyDesign,
    opts: &NestedOptions,
) -> Result<OracleResult> {
    let start = Instant::now();
    if opts.n_outer < 100 || opts.n_inner < 100 {
        return Err(Error::Config(format!(
            "nested Monte Carlo needs n_outer, n_inner >= 100, got {} and {}",
            opts.n_outer, opts.n_inner
        )));
    }
    let bound = design.bind(model)?;
    let samplers = prior_samplers(model)?;
    let inner = PosteriorOptions {
        m: opts.n_inner,
        burn_in: opts.burn_in,
    };
    inner.validate()?;
    let mut means = Vec::with_capacity(opts.n_outer);
    let mut exact = true;
    for block in (0..opts.n_outer).step_by(OUTER_BLOCK) {
        if let Some(b) = opts.budget {
            if start.elapsed() > b {
                return Err(Error::BudgetExceeded {
                    completed: block,
                    requested: opts.n_outer,
                });
            }
        }
        let end = (block + OUTER_BLOCK).min(opts.n_outer);
        let chunk: Vec<(f64, bool)> = (block..end)
            .into_par_iter()
            .map(|i| {
                let seed = opts.seed.derive(i as u64);
                let mut rng = seed.rng();
                let theta = draw_theta(&samplers, &mut rng);
                let x = bound.generate(&theta, &mut rng)?;
                if let Some(m) = exact_inner_mean(&bound, model, &x)? {
                    return Ok((m, true));
                }
                let run = run_bound(&bound, model, &samplers, &x, &inner, seed.derive(1))?;
                Ok((run.inb_posterior_mean, false))
            })
            .collect::<Result<_>>()?;
        for (m, e) in chunk {
            exact &= e;
            means.push(m);
        }
    }
    let evsi = decision_gain(&means);
    Ok(OracleResult {
        method: OracleMethod::NestedMc,
        evsi,
        standard_error: decision_gain_se(&means),
        n_outer: opts.n_outer,
        n_inner: if exact { 0 } else { opts.n_inner },
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Exact EVSI of the beta-binomial toy by summing over the `N + 1` equally
/// likely outcomes.
pub fn enumeration_evsi(toy: &ConjugateToy) -> Result<OracleResult> {
    let start = Instant::now();
    match *toy {
        ConjugateToy::BetaBinomialUniform { n, .. } => {
            if n > 1_000_000 {
                return Err(Error::Config(format!(
                    "enumeration limited to N <= 10^6, got {n}"
                )));
            }
            let evsi = toy.analytic_preposterior()?.evsi;
            Ok(OracleResult {
                method: OracleMethod::AnalyticEnumeration,
                evsi,
                standard_error: 0.0,
                n_outer: n as usize + 1,
                n_inner: 0,
                wall_time: start.elapsed().as_secs_f64(),
            })
        }
        _ => Err(Error::Unsupported(
            "enumeration applies to the beta-binomial toy only".into(),
        )),
    }
}

/// Exact EVSI of any conjugate toy.
pub fn exact_evsi(toy: &ConjugateToy) -> Result<OracleResult> {
    let start = Instant::now();
    let method = match toy {
        ConjugateToy::BetaBinomialUniform { .. } => return enumeration_evsi(toy),
        ConjugateToy::ExpGamma { .. } => OracleMethod::ClosedFormGamma,
        ConjugateToy::NormalNormal { .. } => OracleMethod::ClosedFormNormal,
        ConjugateToy::QuadraticNormal { .. } => OracleMethod::ClosedFormQuadratic,
    };
    Ok(OracleResult {
        method,
        evsi: toy.analytic_preposterior()?.evsi,
        standard_error: 0.0,
        n_outer: 0,
        n_inner: 0,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Simulates one dataset per PSA row, regresses `INB^theta` on the data
/// summaries and takes the expected gain of the fitted values.
pub fn regression_on_summaries_evsi(
    model: &DecisionModel,
    design: &StudyDesign,
    psa: &PsaSamples,
    seed: SeedSpec,
    opts: &RegressionOptions,
) -> Result<OracleResult> {
    let start = Instant::now();
    let bound = design.bind(model)?;
    let inb = compute_inb(model, psa)?;
    let n = psa.n_draws();
    let summaries: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.derive(i as u64).rng();
            Ok(bound.generate(psa.row(i), &mut rng)?.summary())
        })
        .collect::<Result<_>>()?;
    let dim = summaries[0].len();
    let columns: Vec<Vec<f64>> = (0..dim)
        .map(|d| summaries.iter().map(|s| s[d]).collect::<Vec<f64>>())
        .filter(|c| summarize(c).map(|s| s.variance > 0.0).unwrap_or(false))
        .collect();
    if columns.len() > 3 {
        return Err(Error::UnsupportedDimension(columns.len()));
    }
    let fitted = if columns.is_empty() {
        vec![mean(&inb.inb_theta); n]
    } else {
        let names: Vec<String> = (1..=columns.len()).map(|d| format!("x{d}")).collect();
        fit_conditional_mean(&inb.inb_theta, &columns, &names, opts)?.fitted
    };
    Ok(OracleResult {
        method: OracleMethod::RegressionOnSummaries,
        evsi: decision_gain(&fitted),
        standard_error: decision_gain_se(&fitted),
        n_outer: n,
        n_inner: 0,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::run_psa;

    #[test]
    fn enumeration_examples() {
        let r = enumeration_evsi(&ConjugateToy::beta_binomial(1)).unwrap();
        assert!((r.evsi - 1666.666_666_666_7).abs() < 1e-6);
        assert_eq!(r.standard_error, 0.0);
        assert_eq!(
            enumeration_evsi(&ConjugateToy::beta_binomial(0))
                .unwrap()
                .evsi,
            0.0
        );
        let never = ConjugateToy::BetaBinomialUniform {
            k: 20_000.0,
            c: 20_000.0,
            n: 25,
        };
        assert_eq!(enumeration_evsi(&never).unwrap().evsi, 0.0);
        assert!(matches!(
            enumeration_evsi(&ConjugateToy::exp_gamma(3)),
            Err(Error::Unsupported(_))
        ));
        let a = enumeration_evsi(&ConjugateToy::beta_binomial(37))
            .unwrap()
            .evsi;
        let b = enumeration_evsi(&ConjugateToy::beta_binomial(37))
            .unwrap()
            .evsi;
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn enumeration_is_nondecreasing_in_n() {
        let v: Vec<f64> = (0..60)
            .map(|n| {
                enumeration_evsi(&ConjugateToy::beta_binomial(n))
                    .unwrap()
                    .evsi
            })
            .collect();
        assert!(v.windows(2).all(|w| w[1] >= w[0] - 1e-9));
    }

    #[test]
    fn nested_exact_inner_matches_enumeration() {
        let toy = ConjugateToy::beta_binomial(10);
        let r = nested_mc_evsi(
            &toy.model().unwrap(),
            &toy.design(),
            &NestedOptions::new(100_000, 100, SeedSpec::from_master(4)),
        )
        .unwrap();
        let exact = enumeration_evsi(&toy).unwrap().evsi;
        assert_eq!(r.n_inner, 0);
        assert!(
            (r.evsi - exact).abs() < 3.0 * r.standard_error,
            "{} vs {exact}",
            r.evsi
        );
    }

    #[test]
    fn nested_sampled_inner_runs() {
        // Logit-scale normal data on a logit-normal prior: no exact inner mean.
        let model = crate::cases::build_case("ades", &Default::default()).unwrap();
        let d = model.design(Some("study2")).unwrap();
        let r = nested_mc_evsi(
            &model.model,
            d,
            &NestedOptions::new(400, 400, SeedSpec::from_master(2)),
        )
        .unwrap();
        assert_eq!(r.n_inner, 400);
        assert!(r.evsi >= 0.0 && r.standard_error > 0.0);
    }

    #[test]
    fn nested_normal_normal() {
        let toy = ConjugateToy::normal_normal(4);
        let r = nested_mc_evsi(
            &toy.model().unwrap(),
            &toy.design(),
            &NestedOptions::new(200_000, 100, SeedSpec::from_master(5)),
        )
        .unwrap();
        let exact = exact_evsi(&toy).unwrap().evsi;
        assert!(
            (r.evsi - exact).abs() < 3.0 * r.standard_error,
            "{} vs {exact}",
            r.evsi
        );
    }

    #[test]
    fn uninformative_design_has_no_value() {
        let toy = ConjugateToy::exp_gamma(0);
        let r = nested_mc_evsi(
            &toy.model().unwrap(),
            &toy.design(),
            &NestedOptions::new(10_000, 100, SeedSpec::from_master(6)),
        )
        .unwrap();
        assert!(r.evsi <= 3.0 * r.standard_error + 1e-9);
        let m = toy.model().unwrap();
        let psa = run_psa(&m, 20_000, SeedSpec::from_master(7)).unwrap();
        let s = regression_on_summaries_evsi(
            &m,
            &toy.design(),
            &psa,
            SeedSpec::from_master(8),
            &Default::default(),
        )
        .unwrap();
        let evpi = toy.exact_evpi().unwrap();
        assert!(s.evsi <= 0.01 * evpi);
    }

    #[test]
    fn nested_validates_and_budgets() {
        let toy = ConjugateToy::beta_binomial(3);
        let (m, d) = (toy.model().unwrap(), toy.design());
        assert!(nested_mc_evsi(
            &m,
            &d,
            &NestedOptions::new(99, 100, SeedSpec::from_master(0))
        )
        .is_err());
        let mut o = NestedOptions::new(5_000, 100, SeedSpec::from_master(0));
        o.budget = Some(Duration::ZERO);
        std::thread::sleep(Duration::from_millis(2));
        assert!(matches!(
            nested_mc_evsi(&m, &d, &o),
            Err(Error::BudgetExceeded {
                completed: 0,
                requested: 5_000
            })
        ));
    }

    #[test]
    fn summaries_regression_for_beta_binomial() {
        let toy = ConjugateToy::beta_binomial(50);
        let m = toy.model().unwrap();
        let psa = run_psa(&m, 200_000, SeedSpec::from_master(9)).unwrap();
        let r = regression_on_summaries_evsi(
            &m,
            &toy.design(),
            &psa,
            SeedSpec::from_master(10),
            &Default::default(),
        )
        .unwrap();
        let exact = enumeration_evsi(&toy).unwrap().evsi;
        assert!(
            (r.evsi - exact).abs() < 0.02 * exact,
            "{} vs {exact}",
            r.evsi
        );
    }
}
