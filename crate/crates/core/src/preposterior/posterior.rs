//! Posterior draws for one simulated dataset.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cases::design::{BoundData, BoundDesign, Dataset, PosteriorRecipe, Scale, StudyDesign};
use crate::error::{Error, Result};
use crate::model::DecisionModel;
use crate::stats::dist::{expit, logit};
use crate::stats::{summarize, DistSpec, Sampler, SeedSpec};

/// Acceptance rates outside this range trigger a warning.
pub const ACCEPTANCE_RANGE: (f64, f64) = (0.1, 0.6);
const TARGET_ACCEPTANCE: f64 = 0.3;
const ADAPT_BATCH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorOptions {
    /// Retained posterior draws.
    pub m: usize,
    /// Discarded adaptation iterations (Metropolis only).
    pub burn_in: usize,
}

impl Default for PosteriorOptions {
    fn default() -> Self {
        Self {
            m: 10_000,
            burn_in: 1_000,
        }
    }
}

impl PosteriorOptions {
    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::Config(format!(
                "M must be at least 2, got {}",
                self.m
            )));
        }
        if self.burn_in >= self.m {
            return Err(Error::Config(format!(
                "M ({}) must exceed burn-in ({})",
                self.m, self.burn_in
            )));
        }
        Ok(())
    }
}

/// Posterior of the updated parameters for one dataset, summarized through
/// INB.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorRun {
    pub dataset: Dataset,
    pub recipe: PosteriorRecipe,
    /// `M x n_updated` row-major draws of the updated parameters.
    #[serde(skip)]
    pub draws: Vec<f64>,
    pub n_updated: usize,
    pub burn_in: usize,
    pub inb_posterior_mean: f64,
    pub inb_posterior_variance: f64,
    /// Post-adaptation acceptance rate (Metropolis only).
    pub acceptance_rate: Option<f64>,
    pub warnings: Vec<String>,
}

/// Exact conjugate posterior of the single updated parameter.
pub fn conjugate_posterior(
    bound: &BoundDesign,
    model: &DecisionModel,
    data: &Dataset,
) -> Result<DistSpec> {
    let p = bound.updated[0];
    let prior = model.params()[p].prior;
    let mismatch = || {
        Error::Schema(format!(
            "dataset {data:?} does not fit recipe {:?}",
            bound.recipe
        ))
    };
    match (bound.recipe, bound.data, *data) {
        (
            PosteriorRecipe::ConjugateBetaBinomial,
            BoundData::Binomial { .. },
            Dataset::Count { trials, successes },
        ) => {
            let (a, b) = match prior {
                DistSpec::Beta { alpha, beta } => (alpha, beta),
                DistSpec::Uniform { .. } => (1.0, 1.0),
                _ => return Err(mismatch()),
            };
            DistSpec::beta(a + successes as f64, b + (trials - successes) as f64)
        }
        (
            PosteriorRecipe::ConjugateGammaExponential,
            BoundData::Exponential { .. },
            Dataset::ExponentialSum { n_obs, total },
        ) => match prior {
            DistSpec::Gamma { shape, rate } => DistSpec::gamma(shape + n_obs as f64, rate + total),
            _ => Err(mismatch()),
        },
        (
            PosteriorRecipe::ConjugateNormalNormal,
            BoundData::Normal {
                obs_variance,
                scale,
                ..
            },
            Dataset::NormalMean { n_obs, mean },
        ) => {
            let (m0, v0) = match (prior, scale) {
                (DistSpec::Normal { mean, variance }, Scale::Identity) => (mean, variance),
                (DistSpec::LogitNormal { mean, variance }, Scale::Logit) => (mean, variance),
                _ => return Err(mismatch()),
            };
            let precision = 1.0 / v0 + n_obs as f64 / obs_variance;
            let v = 1.0 / precision;
            let m = v * (m0 / v0 + n_obs as f64 * mean / obs_variance);
            match scale {
                Scale::Identity => DistSpec::normal(m, v),
                Scale::Logit => DistSpec::logit_normal(m, v),
            }
        }
        _ => Err(mismatch()),
    }
}

/// Map between a parameter and the real line.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Transform {
    Identity,
    Log,
    /// `x = low + (high - low) * expit(u)`.
    Interval(f64, f64),
}

impl Transform {
    fn for_prior(prior: &DistSpec) -> Result<Self> {
        Ok(match *prior {
            DistSpec::Normal { .. } => Transform::Identity,
            DistSpec::Gamma { .. } | DistSpec::Exponential { .. } | DistSpec::LogNormal { .. } => {
                Transform::Log
            }
            DistSpec::Beta { .. } | DistSpec::LogitNormal { .. } => Transform::Interval(0.0, 1.0),
            DistSpec::Uniform { low, high } => Transform::Interval(low, high),
            DistSpec::Binomial { .. } => {
                return Err(Error::Unsupported(
                    "Metropolis updates of discrete parameters".into(),
                ))
            }
        })
    }

    fn to_param(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
            Transform::Interval(lo, hi) => lo + (hi - lo) * expit(u),
        }
    }

    fn to_free(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
            Transform::Interval(lo, hi) => logit((x - lo) / (hi - lo)),
        }
    }

    /// `log |dx/du|`.
    fn log_jacobian(self, u: f64) -> f64 {
        match self {
            Transform::Identity => 0.0,
            Transform::Log => u,
            Transform::Interval(lo, hi) => {
                // log(e * (1 - e)) with e = expit(u), computed stably.
                (hi - lo).ln() - u.abs() - 2.0 * (-u.abs()).exp().ln_1p()
            }
        }
    }
}

/// Output of [`metropolis`].
#[derive(Debug, Clone, PartialEq)]
pub struct Chain {
    /// `M x d` row-major draws on the unconstrained scale.
    pub draws: Vec<f64>,
    pub dim: usize,
    pub acceptance_rate: f64,
    pub scales: Vec<f64>,
}

/// Componentwise Gaussian random-walk Metropolis on `R^d`.
///
/// Proposal scales adapt in batches during burn-in toward an acceptance
/// rate of 0.3 and are frozen afterwards. A NaN log density is an error; a
/// proposal with log density `-inf` is rejected.
pub fn metropolis<R: Rng + ?Sized>(
    log_density: impl Fn(&[f64]) -> f64,
    init: &[f64],
    opts: &PosteriorOptions,
    rng: &mut R,
) -> Result<Chain> {
    opts.validate()?;
    let d = init.len();
    let mut u = init.to_vec();
    let mut current = log_density(&u);
    if !current.is_finite() {
        return Err(Error::NonFiniteDensity(u));
    }
    let mut log_scale = vec![0.5f64.ln(); d];
    let mut batch_accept = vec![0usize; d];
    let mut accepted_after = 0usize;
    let mut draws = Vec::with_capacity(opts.m * d);
    let normal = rand_distr::StandardNormal;
    for it in 0..opts.burn_in + opts.m {
        for j in 0..d {
            let old = u[j];
            u[j] = old + log_scale[j].exp() * rng.sample::<f64, _>(normal);
            let proposed = log_density(&u);
            if proposed.is_nan() {
                return Err(Error::NonFiniteDensity(u));
            }
            let log_ratio = proposed - current;
            if log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio {
                current = proposed;
                if it < opts.burn_in {
                    batch_accept[j] += 1;
                } else {
                    accepted_after += 1;
                }
            } else {
                u[j] = old;
            }
        }
        if it < opts.burn_in && (it + 1) % ADAPT_BATCH == 0 {
            let batch = ((it + 1) / ADAPT_BATCH) as f64;
            let step = 1.0f64.min(3.0 / batch.sqrt());
            for j in 0..d {
                let rate = batch_accept[j] as f64 / ADAPT_BATCH as f64;
                log_scale[j] += 2.0 * step * (rate - TARGET_ACCEPTANCE);
                batch_accept[j] = 0;
            }
        }
        if it >= opts.burn_in {
            draws.extend_from_slice(&u);
        }
    }
    Ok(Chain {
        draws,
        dim: d,
        acceptance_rate: accepted_after as f64 / (opts.m * d) as f64,
        scales: log_scale.iter().map(|s| s.exp()).collect(),
    })
}

/// Prior samplers for every parameter, used to refresh parameters the
/// study does not inform.
pub(crate) fn prior_samplers(model: &DecisionModel) -> Result<Vec<Sampler>> {
    model.params().iter().map(|p| p.prior.sampler()).collect()
}

/// Posterior run for one dataset with a pre-bound design.
pub(crate) fn run_bound(
    bound: &BoundDesign,
    model: &DecisionModel,
    samplers: &[Sampler],
    dataset: &Dataset,
    opts: &PosteriorOptions,
    seed: SeedSpec,
) -> Result<PosteriorRun> {
    opts.validate()?;
    let mut rng = seed.rng();
    let k = bound.updated.len();
    let mut warnings = Vec::new();
    let (draws, acceptance_rate) = match bound.recipe {
        PosteriorRecipe::MetropolisGeneric => {
            let transforms = bound
                .updated
                .iter()
                .map(|&i| Transform::for_prior(&model.params()[i].prior))
                .collect::<Result<Vec<_>>>()?;
            let mut theta: Vec<f64> = model
                .params()
                .iter()
                .map(|p| p.prior.quantile(0.5))
                .collect::<Result<_>>()?;
            let init: Vec<f64> = bound
                .updated
                .iter()
                .zip(&transforms)
                .map(|(&i, t)| t.to_free(theta[i]))
                .collect();
            let priors: Vec<DistSpec> = bound
                .updated
                .iter()
                .map(|&i| model.params()[i].prior)
                .collect();
            let mut failure = None;
            let chain = {
                let theta = std::cell::RefCell::new(&mut theta);
                let failure = std::cell::RefCell::new(&mut failure);
                let log_density = |u: &[f64]| -> f64 {
                    let mut th = theta.borrow_mut();
                    let mut lp = 0.0;
                    for (j, &i) in bound.updated.iter().enumerate() {
                        let x = transforms[j].to_param(u[j]);
                        th[i] = x;
                        match priors[j].ln_pdf(x) {
                            Ok(v) => lp += v + transforms[j].log_jacobian(u[j]),
                            Err(e) => {
                                failure.borrow_mut().get_or_insert(e);
                                return f64::NAN;
                            }
                        }
                    }
                    if lp == f64::NEG_INFINITY {
                        return lp;
                    }
                    match bound.log_likelihood(&th, dataset) {
                        Ok(ll) => lp + ll,
                        Err(e) => {
                            failure.borrow_mut().get_or_insert(e);
                            f64::NAN
                        }
                    }
                };
                metropolis(log_density, &init, opts, &mut rng)
            };
            if let Some(e) = failure {
                return Err(e);
            }
            let chain = chain?;
            let draws: Vec<f64> = chain
                .draws
                .chunks_exact(k)
                .flat_map(|row| {
                    row.iter()
                        .zip(&transforms)
                        .map(|(&u, t)| t.to_param(u))
                        .collect::<Vec<_>>()
                })
                .collect();
            let (lo, hi) = ACCEPTANCE_RANGE;
            if !(lo..=hi).contains(&chain.acceptance_rate) {
                let msg = format!(
                    "Metropolis acceptance rate {:.3} outside [{lo}, {hi}] for dataset {}",
                    chain.acceptance_rate,
                    dataset.describe()
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            (draws, Some(chain.acceptance_rate))
        }
        _ => {
            let post = conjugate_posterior(bound, model, dataset)?.sampler()?;
            ((0..opts.m).map(|_| post.draw(&mut rng)).collect(), None)
        }
    };
    let mut theta = vec![0.0; samplers.len()];
    let inb: Vec<f64> = draws
        .chunks_exact(k)
        .map(|row| {
            for (i, s) in samplers.iter().enumerate() {
                theta[i] = s.draw(&mut rng);
            }
            for (j, &i) in bound.updated.iter().enumerate() {
                theta[i] = row[j];
            }
            model.inb(&theta)
        })
        .collect();
    if let Some(bad) = inb.iter().position(|v| !v.is_finite()) {
        return Err(Error::DegenerateModel(format!(
            "non-finite posterior INB at draw {bad}"
        )));
    }
    let s = summarize(&inb)?;
    Ok(PosteriorRun {
        dataset: *dataset,
        recipe: bound.recipe,
        draws,
        n_updated: k,
        burn_in: if bound.recipe == PosteriorRecipe::MetropolisGeneric {
            opts.burn_in
        } else {
            0
        },
        inb_posterior_mean: s.mean,
        inb_posterior_variance: s.variance,
        acceptance_rate,
        warnings,
    })
}

/// Posterior draws of the updated parameters given `dataset`, and the
/// mean and variance of INB over them (untouched parameters drawn afresh
/// from their priors).
pub fn run_posterior(
    design: &StudyDesign,
    dataset: &Dataset,
    model: &DecisionModel,
    opts: &PosteriorOptions,
    seed: SeedSpec,
) -> Result<PosteriorRun> {
    let bound = design.bind(model)?;
    run_bound(&bound, model, &prior_samplers(model)?, dataset, opts, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::design::DataModel;
    use crate::model::Parameter;
    use std::sync::Arc;

    fn one_param(prior: DistSpec) -> DecisionModel {
        let nb = |th: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = th[0];
        };
        DecisionModel::new(
            "one",
            vec![Parameter::new("p", prior)],
            Arc::new((2, nb)),
            (1, 0),
        )
        .unwrap()
    }

    fn binomial_design(recipe: PosteriorRecipe) -> StudyDesign {
        StudyDesign {
            name: "b".into(),
            focal_params: vec!["p".into()],
            updated_params: vec!["p".into()],
            data: DataModel::Binomial {
                param: "p".into(),
                trials: 10,
            },
            recipe,
        }
    }

    #[test]
    fn beta_binomial_update() {
        let m = one_param(DistSpec::beta(1.0, 1.0).unwrap());
        let b = binomial_design(PosteriorRecipe::ConjugateBetaBinomial)
            .bind(&m)
            .unwrap();
        let post = conjugate_posterior(
            &b,
            &m,
            &Dataset::Count {
                trials: 10,
                successes: 3,
            },
        )
        .unwrap();
        assert_eq!(post, DistSpec::beta(4.0, 8.0).unwrap());
        assert!((post.mean().unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn normal_normal_posterior_variance() {
        let m = one_param(DistSpec::normal(0.0, 1.0).unwrap());
        let d = StudyDesign {
            name: "n".into(),
            focal_params: vec!["p".into()],
            updated_params: vec!["p".into()],
            data: DataModel::Normal {
                param: "p".into(),
                n_obs: 9,
                obs_variance: 1.0,
                scale: Scale::Identity,
            },
            recipe: PosteriorRecipe::ConjugateNormalNormal,
        };
        let b = d.bind(&m).unwrap();
        let post = conjugate_posterior(
            &b,
            &m,
            &Dataset::NormalMean {
                n_obs: 9,
                mean: 0.7,
            },
        )
        .unwrap();
        let v = post.variance().unwrap();
        assert!((v - 0.1).abs() < 1e-15, "{v}");
        assert!((post.mean().unwrap() - 0.63).abs() < 1e-12);
    }

    /// Batch-means standard error of a chain mean.
    fn batch_se(xs: &[f64]) -> f64 {
        let b = 50;
        let len = xs.len() / b;
        let means: Vec<f64> = (0..b)
            .map(|i| xs[i * len..(i + 1) * len].iter().sum::<f64>() / len as f64)
            .collect();
        (summarize(&means).unwrap().variance / b as f64).sqrt()
    }

    #[test]
    fn metropolis_recovers_beta_4_8() {
        let m = one_param(DistSpec::beta(1.0, 1.0).unwrap());
        let d = binomial_design(PosteriorRecipe::MetropolisGeneric);
        let opts = PosteriorOptions {
            m: 50_000,
            burn_in: 2_000,
        };
        let run = run_posterior(
            &d,
            &Dataset::Count {
                trials: 10,
                successes: 3,
            },
            &m,
            &opts,
            SeedSpec::from_master(5),
        )
        .unwrap();
        let s = summarize(&run.draws).unwrap();
        assert!(
            (s.mean - 1.0 / 3.0).abs() < 4.0 * batch_se(&run.draws),
            "mean {}",
            s.mean
        );
        let var = 4.0 * 8.0 / (144.0 * 13.0);
        assert!((s.variance - var).abs() < 0.1 * var, "var {}", s.variance);
        let rate = run.acceptance_rate.unwrap();
        assert!((0.1..=0.6).contains(&rate), "{rate}");
        assert!(run.warnings.is_empty());
    }

    #[test]
    fn metropolis_rejects_nan_and_bad_start() {
        let opts = PosteriorOptions {
            m: 100,
            burn_in: 10,
        };
        let mut rng = SeedSpec::from_master(1).rng();
        assert!(matches!(
            metropolis(|_| f64::NEG_INFINITY, &[0.0], &opts, &mut rng),
            Err(Error::NonFiniteDensity(_))
        ));
        assert!(matches!(
            metropolis(
                |u| if u[0] > 0.5 { f64::NAN } else { -u[0] * u[0] },
                &[0.0],
                &opts,
                &mut rng
            ),
            Err(Error::NonFiniteDensity(_))
        ));
        // -inf proposals are rejected: the chain never leaves the support.
        let chain = metropolis(
            |u| if u[0] < 0.0 { f64::NEG_INFINITY } else { -u[0] },
            &[1.0],
            &opts,
            &mut rng,
        )
        .unwrap();
        assert!(chain.draws.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn options_are_validated() {
        assert!(PosteriorOptions {
            m: 100,
            burn_in: 100
        }
        .validate()
        .is_err());
        assert!(PosteriorOptions { m: 1, burn_in: 0 }.validate().is_err());
        PosteriorOptions::default().validate().unwrap();
    }

    #[test]
    fn transforms_round_trip() {
        for t in [
            Transform::Identity,
            Transform::Log,
            Transform::Interval(-2.0, 3.0),
        ] {
            for u in [-3.0, -0.1, 0.0, 2.5] {
                assert!((t.to_free(t.to_param(u)) - u).abs() < 1e-10);
                // Jacobian against a central difference.
                let h = 1e-6;
                let num = ((t.to_param(u + h) - t.to_param(u - h)) / (2.0 * h)).ln();
                assert!((t.log_jacobian(u) - num).abs() < 1e-6, "{t:?} {u}");
            }
        }
    }
}
