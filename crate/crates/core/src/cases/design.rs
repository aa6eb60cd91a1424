//! Proposed studies: what they measure, how data arise, how posteriors are
//! computed.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::DecisionModel;
use crate::stats::dist::{expit, logit};
use crate::stats::{DistSpec, Family, SeedSpec, StreamRng};

/// Link between a parameter and the mean of normally distributed data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Identity,
    Logit,
}

impl Scale {
    fn apply(self, x: f64) -> f64 {
        match self {
            Scale::Identity => x,
            Scale::Logit => logit(x),
        }
    }
}

/// Sampling distribution of a study's data given the model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataModel {
    /// `X ~ Binomial(trials, param)`.
    Binomial { param: String, trials: u64 },
    /// `n_obs` draws from `Normal(scale(param), obs_variance)`.
    Normal {
        param: String,
        n_obs: u64,
        obs_variance: f64,
        scale: Scale,
    },
    /// `n_obs` draws from `Exponential(rate = param)`.
    Exponential { param: String, n_obs: u64 },
    /// Two arms of `per_arm` patients: control events with probability
    /// `baseline`, treated events with log odds `logit(baseline) + log_odds_ratio`.
    TwoArmBinomial {
        baseline: String,
        log_odds_ratio: String,
        per_arm: u64,
    },
}

impl DataModel {
    /// Model parameters that enter the likelihood.
    pub fn params(&self) -> Vec<&str> {
        match self {
            DataModel::Binomial { param, .. }
            | DataModel::Normal { param, .. }
            | DataModel::Exponential { param, .. } => vec![param.as_str()],
            DataModel::TwoArmBinomial {
                baseline,
                log_odds_ratio,
                ..
            } => vec![baseline.as_str(), log_odds_ratio.as_str()],
        }
    }

    /// Number of subjects or observations.
    pub fn sample_size(&self) -> u64 {
        match *self {
            DataModel::Binomial { trials, .. } => trials,
            DataModel::Normal { n_obs, .. } | DataModel::Exponential { n_obs, .. } => n_obs,
            DataModel::TwoArmBinomial { per_arm, .. } => per_arm,
        }
    }

    pub fn with_sample_size(&self, n: u64) -> DataModel {
        let mut d = self.clone();
        match &mut d {
            DataModel::Binomial { trials, .. } => *trials = n,
            DataModel::Normal { n_obs, .. } | DataModel::Exponential { n_obs, .. } => *n_obs = n,
            DataModel::TwoArmBinomial { per_arm, .. } => *per_arm = n,
        }
        d
    }
}

/// How the posterior of the updated parameters is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorRecipe {
    ConjugateBetaBinomial,
    ConjugateGammaExponential,
    ConjugateNormalNormal,
    MetropolisGeneric,
}

/// One simulated study outcome, stored as sufficient statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dataset {
    Count {
        trials: u64,
        successes: u64,
    },
    /// Sample mean of `n_obs` normal observations.
    NormalMean {
        n_obs: u64,
        mean: f64,
    },
    /// Sum of `n_obs` exponential observations.
    ExponentialSum {
        n_obs: u64,
        total: f64,
    },
    TwoArm {
        per_arm: u64,
        control_events: u64,
        treated_events: u64,
    },
}

impl Dataset {
    /// Numeric summary used when regressing on simulated data.
    pub fn summary(&self) -> Vec<f64> {
        match *self {
            Dataset::Count { successes, .. } => vec![successes as f64],
            Dataset::NormalMean { mean, .. } => vec![mean],
            Dataset::ExponentialSum { total, .. } => vec![total],
            Dataset::TwoArm {
                control_events,
                treated_events,
                ..
            } => vec![control_events as f64, treated_events as f64],
        }
    }

    /// Column names matching [`Dataset::summary`].
    pub fn summary_names(&self) -> &'static [&'static str] {
        match self {
            Dataset::Count { .. } => &["successes"],
            Dataset::NormalMean { .. } => &["mean"],
            Dataset::ExponentialSum { .. } => &["total"],
            Dataset::TwoArm { .. } => &["control_events", "treated_events"],
        }
    }

    pub fn describe(&self) -> String {
        match *self {
            Dataset::Count { trials, successes } => format!("x={successes}/{trials}"),
            Dataset::NormalMean { n_obs, mean } => format!("mean={mean} (n={n_obs})"),
            Dataset::ExponentialSum { n_obs, total } => format!("sum={total} (n={n_obs})"),
            Dataset::TwoArm {
                per_arm,
                control_events,
                treated_events,
            } => format!("control={control_events}/{per_arm};treated={treated_events}/{per_arm}"),
        }
    }
}

/// A proposed study for a given decision model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyDesign {
    pub name: String,
    /// Parameters whose conditional expectation of INB is regressed on.
    pub focal_params: Vec<String>,
    /// Parameters whose posterior is computed.
    pub updated_params: Vec<String>,
    pub data: DataModel,
    pub recipe: PosteriorRecipe,
}

impl StudyDesign {
    pub fn sample_size(&self) -> u64 {
        self.data.sample_size()
    }

    pub fn with_sample_size(&self, n: u64) -> StudyDesign {
        StudyDesign {
            data: self.data.with_sample_size(n),
            ..self.clone()
        }
    }

    /// Resolves parameter names against `model` and checks consistency.
    pub fn bind(&self, model: &DecisionModel) -> Result<BoundDesign> {
        let lookup = |names: &[String]| -> Result<Vec<usize>> {
            let mut idx = Vec::with_capacity(names.len());
            for n in names {
                let i = model.param_index(n)?;
                if idx.contains(&i) {
                    return Err(Error::Config(format!("parameter `{n}` listed twice")));
                }
                idx.push(i);
            }
            Ok(idx)
        };
        if self.focal_params.is_empty() || self.updated_params.is_empty() {
            return Err(Error::Config(format!(
                "design `{}` needs at least one focal and one updated parameter",
                self.name
            )));
        }
        let focal = lookup(&self.focal_params)?;
        let updated = lookup(&self.updated_params)?;
        let data = match &self.data {
            DataModel::Binomial { param, trials } => BoundData::Binomial {
                param: model.param_index(param)?,
                trials: *trials,
            },
            DataModel::Normal {
                param,
                n_obs,
                obs_variance,
                scale,
            } => {
                if !(obs_variance.is_finite() && *obs_variance > 0.0) {
                    return Err(Error::Config(format!(
                        "observation variance must be positive, got {obs_variance}"
                    )));
                }
                BoundData::Normal {
                    param: model.param_index(param)?,
                    n_obs: *n_obs,
                    obs_variance: *obs_variance,
                    scale: *scale,
                }
            }
            DataModel::Exponential { param, n_obs } => BoundData::Exponential {
                param: model.param_index(param)?,
                n_obs: *n_obs,
            },
            DataModel::TwoArmBinomial {
                baseline,
                log_odds_ratio,
                per_arm,
            } => BoundData::TwoArm {
                baseline: model.param_index(baseline)?,
                log_odds_ratio: model.param_index(log_odds_ratio)?,
                per_arm: *per_arm,
            },
        };
        for p in data.params() {
            if !updated.contains(&p) {
                return Err(Error::Config(format!(
                    "design `{}`: data depend on `{}`, which is not updated",
                    self.name,
                    model.params()[p].name
                )));
            }
        }
        let bound = BoundDesign {
            name: self.name.clone(),
            focal,
            updated,
            data,
            recipe: self.recipe,
        };
        bound.check_recipe(model)?;
        Ok(bound)
    }
}

/// Data model with parameters resolved to column indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BoundData {
    Binomial {
        param: usize,
        trials: u64,
    },
    Normal {
        param: usize,
        n_obs: u64,
        obs_variance: f64,
        scale: Scale,
    },
    Exponential {
        param: usize,
        n_obs: u64,
    },
    TwoArm {
        baseline: usize,
        log_odds_ratio: usize,
        per_arm: u64,
    },
}

impl BoundData {
    pub fn params(&self) -> Vec<usize> {
        match *self {
            BoundData::Binomial { param, .. }
            | BoundData::Normal { param, .. }
            | BoundData::Exponential { param, .. } => vec![param],
            BoundData::TwoArm {
                baseline,
                log_odds_ratio,
                ..
            } => vec![baseline, log_odds_ratio],
        }
    }
}

/// A [`StudyDesign`] validated against a model.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundDesign {
    pub name: String,
    pub focal: Vec<usize>,
    pub updated: Vec<usize>,
    pub data: BoundData,
    pub recipe: PosteriorRecipe,
}

impl BoundDesign {
    fn check_recipe(&self, model: &DecisionModel) -> Result<()> {
        let conjugate = |want: &str| -> Result<usize> {
            if self.updated.len() != 1 {
                return Err(Error::Config(format!(
                    "design `{}`: {want} updates exactly one parameter",
                    self.name
                )));
            }
            Ok(self.updated[0])
        };
        let prior = |i: usize| &model.params()[i].prior;
        match (self.recipe, self.data) {
            (PosteriorRecipe::ConjugateBetaBinomial, BoundData::Binomial { param, .. }) => {
                conjugate("a beta-binomial update")?;
                match prior(param) {
                    DistSpec::Beta { .. } => Ok(()),
                    DistSpec::Uniform { low, high } if *low == 0.0 && *high == 1.0 => Ok(()),
                    other => Err(Error::Config(format!(
                        "beta-binomial update needs a Beta or Uniform(0, 1) prior, got {}",
                        other.family().name()
                    ))),
                }
            }
            (PosteriorRecipe::ConjugateGammaExponential, BoundData::Exponential { param, .. }) => {
                conjugate("a gamma-exponential update")?;
                match prior(param) {
                    DistSpec::Gamma { .. } => Ok(()),
                    other => Err(Error::Config(format!(
                        "gamma-exponential update needs a Gamma prior, got {}",
                        other.family().name()
                    ))),
                }
            }
            (PosteriorRecipe::ConjugateNormalNormal, BoundData::Normal { param, scale, .. }) => {
                conjugate("a normal-normal update")?;
                match (prior(param), scale) {
                    (DistSpec::Normal { .. }, Scale::Identity) => Ok(()),
                    (DistSpec::LogitNormal { .. }, Scale::Logit) => Ok(()),
                    (other, _) => Err(Error::Config(format!(
                        "normal-normal update needs a Normal prior on the identity scale or a \
                         logit-normal prior on the logit scale, got {} with {scale:?}",
                        other.family().name()
                    ))),
                }
            }
            (PosteriorRecipe::MetropolisGeneric, _) => {
                for &i in &self.updated {
                    if prior(i).family() == Family::Binomial {
                        return Err(Error::Config(format!(
                            "Metropolis update of discrete parameter `{}`",
                            model.params()[i].name
                        )));
                    }
                }
                Ok(())
            }
            (recipe, data) => Err(Error::Config(format!(
                "recipe {recipe:?} does not match data model {data:?}"
            ))),
        }
    }

    /// Draws one dataset given the full parameter vector `theta`.
    pub fn generate<R: Rng + ?Sized>(&self, theta: &[f64], rng: &mut R) -> Result<Dataset> {
        let bad = |what: &str, v: f64| Error::Domain(format!("{what} {v} outside its domain"));
        Ok(match self.data {
            BoundData::Binomial { param, trials } => {
                let p = theta[param];
                let d = rand_distr::Binomial::new(trials, p).map_err(|_| bad("probability", p))?;
                Dataset::Count {
                    trials,
                    successes: d.sample(rng),
                }
            }
            BoundData::Normal {
                param,
                n_obs,
                obs_variance,
                scale,
            } => {
                let mean = if n_obs == 0 {
                    0.0
                } else {
                    let centre = scale.apply(theta[param]);
                    if !centre.is_finite() {
                        return Err(bad("parameter", theta[param]));
                    }
                    let sd = (obs_variance / n_obs as f64).sqrt();
                    centre + sd * rng.sample::<f64, _>(rand_distr::StandardNormal)
                };
                Dataset::NormalMean { n_obs, mean }
            }
            BoundData::Exponential { param, n_obs } => {
                let rate = theta[param];
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(bad("rate", rate));
                }
                let total = if n_obs == 0 {
                    0.0
                } else {
                    rand_distr::Gamma::new(n_obs as f64, 1.0 / rate)
                        .map_err(|_| bad("rate", rate))?
                        .sample(rng)
                };
                Dataset::ExponentialSum { n_obs, total }
            }
            BoundData::TwoArm {
                baseline,
                log_odds_ratio,
                per_arm,
            } => {
                let pc = theta[baseline];
                let pt = expit(logit(pc) + theta[log_odds_ratio]);
                let dc =
                    rand_distr::Binomial::new(per_arm, pc).map_err(|_| bad("probability", pc))?;
                let dt =
                    rand_distr::Binomial::new(per_arm, pt).map_err(|_| bad("probability", pt))?;
                Dataset::TwoArm {
                    per_arm,
                    control_events: dc.sample(rng),
                    treated_events: dt.sample(rng),
                }
            }
        })
    }

    /// Log-likelihood of `data` at `theta`, up to a constant in `theta`.
    pub fn log_likelihood(&self, theta: &[f64], data: &Dataset) -> Result<f64> {
        Ok(match (self.data, *data) {
            (BoundData::Binomial { param, .. }, Dataset::Count { trials, successes }) => {
                binomial_loglik(theta[param], successes, trials)
            }
            (
                BoundData::Normal {
                    param,
                    obs_variance,
                    scale,
                    ..
                },
                Dataset::NormalMean { n_obs, mean },
            ) => {
                if n_obs == 0 {
                    0.0
                } else {
                    let d = mean - scale.apply(theta[param]);
                    if d.is_nan() {
                        f64::NEG_INFINITY
                    } else {
                        -(n_obs as f64) * d * d / (2.0 * obs_variance)
                    }
                }
            }
            (BoundData::Exponential { param, .. }, Dataset::ExponentialSum { n_obs, total }) => {
                let rate = theta[param];
                if rate <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    n_obs as f64 * rate.ln() - rate * total
                }
            }
            (
                BoundData::TwoArm {
                    baseline,
                    log_odds_ratio,
                    ..
                },
                Dataset::TwoArm {
                    per_arm,
                    control_events,
                    treated_events,
                },
            ) => {
                let pc = theta[baseline];
                let pt = expit(logit(pc) + theta[log_odds_ratio]);
                binomial_loglik(pc, control_events, per_arm)
                    + binomial_loglik(pt, treated_events, per_arm)
            }
            (d, x) => {
                return Err(Error::Schema(format!(
                    "dataset {x:?} does not match data model {d:?}"
                )));
            }
        })
    }
}

fn binomial_loglik(p: f64, x: u64, n: u64) -> f64 {
    if !(0.0..=1.0).contains(&p) {
        return f64::NEG_INFINITY;
    }
    let term = |k: u64, q: f64| if k == 0 { 0.0 } else { k as f64 * q.ln() };
    term(x, p) + term(n - x, 1.0 - p)
}

/// One simulated dataset for `design` given a full parameter draw.
pub fn generate_future_data(
    design: &StudyDesign,
    model: &DecisionModel,
    theta: &[f64],
    seed: SeedSpec,
) -> Result<Dataset> {
    if theta.len() != model.params().len() {
        return Err(Error::Schema(format!(
            "parameter vector has {} entries, model has {}",
            theta.len(),
            model.params().len()
        )));
    }
    let bound = design.bind(model)?;
    let mut rng: StreamRng = seed.rng();
    bound.generate(theta, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Parameter;
    use std::sync::Arc;

    fn model() -> DecisionModel {
        let nb = |th: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = th[0] + th[1];
        };
        DecisionModel::new(
            "m",
            vec![
                Parameter::new("p", DistSpec::beta(2.0, 3.0).unwrap()),
                Parameter::new("lor", DistSpec::normal(0.0, 1.0).unwrap()),
            ],
            Arc::new((2, nb)),
            (1, 0),
        )
        .unwrap()
    }

    fn count_design(n: u64) -> StudyDesign {
        StudyDesign {
            name: "count".into(),
            focal_params: vec!["p".into()],
            updated_params: vec!["p".into()],
            data: DataModel::Binomial {
                param: "p".into(),
                trials: n,
            },
            recipe: PosteriorRecipe::ConjugateBetaBinomial,
        }
    }

    #[test]
    fn binomial_extremes() {
        let m = model();
        for seed in 0..20 {
            let s = SeedSpec::from_master(seed);
            let x = generate_future_data(&count_design(10), &m, &[0.0, 0.0], s).unwrap();
            assert_eq!(
                x,
                Dataset::Count {
                    trials: 10,
                    successes: 0
                }
            );
            let x = generate_future_data(&count_design(10), &m, &[1.0, 0.0], s).unwrap();
            assert_eq!(
                x,
                Dataset::Count {
                    trials: 10,
                    successes: 10
                }
            );
        }
        let x = generate_future_data(&count_design(0), &m, &[0.4, 0.0], SeedSpec::from_master(1))
            .unwrap();
        assert_eq!(
            x,
            Dataset::Count {
                trials: 0,
                successes: 0
            }
        );
    }

    #[test]
    fn generation_is_reproducible() {
        let m = model();
        let s = SeedSpec::new(4, 4);
        let a = generate_future_data(&count_design(50), &m, &[0.3, 0.0], s).unwrap();
        let b = generate_future_data(&count_design(50), &m, &[0.3, 0.0], s).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_arity_is_rejected() {
        let m = model();
        let r = generate_future_data(&count_design(5), &m, &[0.3], SeedSpec::from_master(0));
        assert!(matches!(r, Err(Error::Schema(_))));
    }

    #[test]
    fn binding_checks_recipe_and_names() {
        let m = model();
        let mut d = count_design(5);
        d.focal_params = vec!["missing".into()];
        assert!(d.bind(&m).is_err());
        let mut d = count_design(5);
        d.recipe = PosteriorRecipe::ConjugateGammaExponential;
        assert!(d.bind(&m).is_err());
        let mut d = count_design(5);
        d.updated_params = vec!["lor".into()];
        assert!(d.bind(&m).is_err());
        let d = StudyDesign {
            name: "two_arm".into(),
            focal_params: vec!["lor".into()],
            updated_params: vec!["p".into(), "lor".into()],
            data: DataModel::TwoArmBinomial {
                baseline: "p".into(),
                log_odds_ratio: "lor".into(),
                per_arm: 20,
            },
            recipe: PosteriorRecipe::MetropolisGeneric,
        };
        let b = d.bind(&m).unwrap();
        assert_eq!(b.updated, vec![0, 1]);
        assert_eq!(b.focal, vec![1]);
    }

    #[test]
    fn two_arm_log_likelihood_matches_direct_formula() {
        let m = model();
        let d = StudyDesign {
            name: "two_arm".into(),
            focal_params: vec!["lor".into()],
            updated_params: vec!["p".into(), "lor".into()],
            data: DataModel::TwoArmBinomial {
                baseline: "p".into(),
                log_odds_ratio: "lor".into(),
                per_arm: 20,
            },
            recipe: PosteriorRecipe::MetropolisGeneric,
        }
        .bind(&m)
        .unwrap();
        let x = Dataset::TwoArm {
            per_arm: 20,
            control_events: 5,
            treated_events: 2,
        };
        let (pc, lor) = (0.25_f64, -0.7_f64);
        let pt = 1.0 / (1.0 + (-((pc / (1.0 - pc)).ln() + lor)).exp());
        let direct =
            5.0 * pc.ln() + 15.0 * (1.0 - pc).ln() + 2.0 * pt.ln() + 18.0 * (1.0 - pt).ln();
        let ll = d.log_likelihood(&[pc, lor], &x).unwrap();
        assert!((ll - direct).abs() < 1e-12);
    }

    #[test]
    fn normal_mean_has_expected_spread() {
        let m = model();
        let d = StudyDesign {
            name: "n".into(),
            focal_params: vec!["lor".into()],
            updated_params: vec!["lor".into()],
            data: DataModel::Normal {
                param: "lor".into(),
                n_obs: 4,
                obs_variance: 2.0,
                scale: Scale::Identity,
            },
            recipe: PosteriorRecipe::ConjugateNormalNormal,
        }
        .bind(&m)
        .unwrap();
        let mut rng = SeedSpec::from_master(2).rng();
        let xs: Vec<f64> = (0..200_000)
            .map(|_| match d.generate(&[0.5, 1.0], &mut rng).unwrap() {
                Dataset::NormalMean { mean, .. } => mean,
                _ => unreachable!(),
            })
            .collect();
        let s = crate::stats::summarize(&xs).unwrap();
        assert!((s.mean - 1.0).abs() < 4.0 * (0.5f64 / 2e5).sqrt());
        assert!((s.variance - 0.5).abs() < 0.01);
    }
}
