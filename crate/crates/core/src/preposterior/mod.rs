//! Expected posterior variance of INB by quantile quadrature over the focal
//! parameters: one simulated dataset and one posterior per quadrature point.

pub mod plan;
pub mod posterior;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cases::design::{Dataset, StudyDesign};
use crate::error::{Error, Result};
use crate::model::{DecisionModel, InbSamples};
use crate::stats::summarize;
pub use plan::{build_plan, QuadraturePlan, Ranking};
pub use posterior::{
    conjugate_posterior, metropolis, run_posterior, Chain, PosteriorOptions, PosteriorRun,
    ACCEPTANCE_RANGE,
};

/// Outcome at one quadrature point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub q: usize,
    pub row: usize,
    pub phi: Vec<f64>,
    pub dataset: Dataset,
    pub posterior_mean: f64,
    pub posterior_variance: f64,
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    /// `Var(INB^theta)` from the PSA.
    pub prior_variance: f64,
    /// Mean of the per-point posterior variances.
    pub expected_posterior_variance: f64,
    /// Estimated variance of the preposterior mean, clamped at zero.
    pub sigma2: f64,
    /// `prior_variance - expected_posterior_variance` before clamping.
    pub raw_sigma2: f64,
    pub clamped: bool,
    pub per_point: Vec<f64>,
    pub points: Vec<PointResult>,
    pub warnings: Vec<String>,
}

/// Runs one posterior per quadrature point and averages their INB
/// variances. Points run in parallel; every point has its own stream, so
/// the result does not depend on the thread count.
pub fn expected_posterior_variance(
    plan: &QuadraturePlan,
    design: &StudyDesign,
    model: &DecisionModel,
    inb: &InbSamples,
    opts: &PosteriorOptions,
) -> Result<VarianceEstimate> {
    opts.validate()?;
    let bound = design.bind(model)?;
    let samplers = posterior::prior_samplers(model)?;
    let prior_variance = summarize(&inb.inb_theta)?.variance;
    let runs: Vec<(PointResult, Vec<String>)> = (0..plan.q)
        .into_par_iter()
        .map(|k| {
            let wrap = |e: Error| Error::Posterior {
                point: k,
                source: Box::new(e),
            };
            let seed = plan.seeds[k];
            let mut rng = seed.derive(0).rng();
            let dataset = bound.generate(&plan.points[k], &mut rng).map_err(wrap)?;
            let run =
                posterior::run_bound(&bound, model, &samplers, &dataset, opts, seed.derive(1))
                    .map_err(wrap)?;
            Ok((
                PointResult {
                    q: k + 1,
                    row: plan.rows[k],
                    phi: plan.phi_points[k].clone(),
                    dataset,
                    posterior_mean: run.inb_posterior_mean,
                    posterior_variance: run.inb_posterior_variance,
                    acceptance_rate: run.acceptance_rate,
                },
                run.warnings,
            ))
        })
        .collect::<Result<_>>()?;
    let mut warnings = Vec::new();
    let mut points = Vec::with_capacity(runs.len());
    for (p, w) in runs {
        warnings.extend(w);
        points.push(p);
    }
    let per_point: Vec<f64> = points.iter().map(|p| p.posterior_variance).collect();
    let expected = per_point.iter().sum::<f64>() / per_point.len() as f64;
    let raw = prior_variance - expected;
    let clamped = raw < 0.0;
    if clamped {
        let msg = format!(
            "expected posterior variance {expected} exceeds prior INB variance {prior_variance}; \
             variance of the preposterior mean clamped to 0"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(VarianceEstimate {
        prior_variance,
        expected_posterior_variance: expected,
        sigma2: raw.max(0.0),
        raw_sigma2: raw,
        clamped,
        per_point,
        points,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::ConjugateToy;
    use crate::model::{compute_inb, run_psa};
    use crate::stats::SeedSpec;

    fn setup(
        toy: ConjugateToy,
        s: usize,
    ) -> (
        DecisionModel,
        StudyDesign,
        crate::model::PsaSamples,
        InbSamples,
    ) {
        let m = toy.model().unwrap();
        let psa = run_psa(&m, s, SeedSpec::from_master(21)).unwrap();
        let inb = compute_inb(&m, &psa).unwrap();
        (m, toy.design(), psa, inb)
    }

    #[test]
    fn normal_normal_posterior_variance_is_constant() {
        let toy = ConjugateToy::normal_normal(9);
        let (m, d, psa, inb) = setup(toy, 100_000);
        let plan = build_plan(&psa, &d.focal_params, 10, SeedSpec::from_master(3)).unwrap();
        let est =
            expected_posterior_variance(&plan, &d, &m, &inb, &PosteriorOptions::default()).unwrap();
        let exact_post = 1e8 / (1.0 + 9.0);
        for v in &est.per_point {
            assert!((v - exact_post).abs() < 0.05 * exact_post, "{v}");
        }
        let s = summarize(&est.per_point).unwrap();
        assert!(s.variance.sqrt() / s.mean <= 0.05);
        let exact = toy.analytic_preposterior().unwrap().variance;
        assert!(
            (est.sigma2 - exact).abs() < 0.02 * exact,
            "{} vs {exact}",
            est.sigma2
        );
        assert!(!est.clamped);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let toy = ConjugateToy::exp_gamma(10);
        let (m, d, psa, inb) = setup(toy, 5_000);
        let plan = build_plan(&psa, &d.focal_params, 12, SeedSpec::from_master(4)).unwrap();
        let opts = PosteriorOptions {
            m: 2_000,
            burn_in: 100,
        };
        let a = expected_posterior_variance(&plan, &d, &m, &inb, &opts).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = pool.install(|| expected_posterior_variance(&plan, &d, &m, &inb, &opts).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn clamps_negative_sigma2() {
        // Zero-information study: posterior equals prior, so the raw
        // difference is pure noise and is sometimes negative.
        let toy = ConjugateToy::normal_normal(0);
        let (m, d, psa, inb) = setup(toy, 2_000);
        let mut saw_clamp = false;
        for s in 0..20 {
            let plan = build_plan(&psa, &d.focal_params, 5, SeedSpec::from_master(s)).unwrap();
            let est = expected_posterior_variance(
                &plan,
                &d,
                &m,
                &inb,
                &PosteriorOptions { m: 500, burn_in: 0 },
            )
            .unwrap();
            assert!(est.sigma2 >= 0.0);
            assert_eq!(est.clamped, est.raw_sigma2 < 0.0);
            saw_clamp |= est.clamped;
        }
        assert!(saw_clamp);
    }

    #[test]
    fn per_point_variances_contract() {
        let toy = ConjugateToy::beta_binomial(20);
        let (m, d, psa, inb) = setup(toy, 20_000);
        let plan = build_plan(&psa, &d.focal_params, 30, SeedSpec::from_master(8)).unwrap();
        let est =
            expected_posterior_variance(&plan, &d, &m, &inb, &PosteriorOptions::default()).unwrap();
        let prior = est.prior_variance;
        for v in &est.per_point {
            // Posterior contraction, with room for MC error in each variance.
            assert!(*v <= prior * (1.0 + 4.0 * (2.0f64 / 10_000.0).sqrt()));
        }
    }
}
