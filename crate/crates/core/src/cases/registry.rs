//! Built-in models by name, with numeric overrides.

use std::collections::BTreeMap;

use super::ades::{AdesStudies, AdesTree};
use super::design::StudyDesign;
use super::toys::{linear_nuisance, ConjugateToy};
use crate::error::{Error, Result};
use crate::model::DecisionModel;

pub const MODEL_NAMES: [&str; 6] = [
    "ades",
    "beta_binomial",
    "exp_gamma",
    "normal_normal",
    "quadratic_normal",
    "linear_nuisance",
];

/// A built-in model with its study designs.
#[derive(Debug, Clone)]
pub struct Case {
    pub model: DecisionModel,
    pub designs: Vec<StudyDesign>,
    /// Present for the conjugate toys, which have analytic answers.
    pub toy: Option<ConjugateToy>,
}

impl Case {
    pub fn design(&self, name: Option<&str>) -> Result<&StudyDesign> {
        match name {
            None => Ok(&self.designs[0]),
            Some(n) => {
                self.designs
                    .iter()
                    .find(|d| d.name == n)
                    .ok_or_else(|| Error::UnknownDesign {
                        name: n.to_string(),
                        model: self.model.name().to_string(),
                        available: self.designs.iter().map(|d| d.name.clone()).collect(),
                    })
            }
        }
    }

    /// Changes the sample size of one design (and of the toy, if any).
    pub fn set_sample_size(&mut self, design: Option<&str>, n: u64) -> Result<()> {
        let name = self.design(design)?.name.clone();
        for d in &mut self.designs {
            if d.name == name {
                *d = d.with_sample_size(n);
            }
        }
        if let Some(t) = &mut self.toy {
            *t = t.with_sample_size(n);
        }
        Ok(())
    }
}

fn allowed_keys(model: &str) -> &'static [&'static str] {
    match model {
        "ades" => &[
            "horizon",
            "qse",
            "cost_event",
            "cost_treatment",
            "cost_side_effect",
            "willingness_to_pay",
            "n_study1",
            "n_study2",
            "sigma2_study2",
            "n_per_arm",
        ],
        "beta_binomial" => &["k", "c", "N"],
        "exp_gamma" => &["alpha", "beta", "k", "c0", "c1", "N"],
        "normal_normal" => &["theta0", "sigma2_theta", "sigma2_x", "k", "c", "N"],
        "quadratic_normal" => &["prior_variance", "obs_variance", "offset", "N"],
        "linear_nuisance" => &["N"],
        _ => &[],
    }
}

fn count(key: &str, v: f64) -> Result<u64> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as u64)
    } else {
        Err(Error::Config(format!(
            "`{key}` must be a non-negative integer, got {v}"
        )))
    }
}

/// Builds the named model, applying `overrides` to its numeric inputs.
pub fn build_case(name: &str, overrides: &BTreeMap<String, f64>) -> Result<Case> {
    if !MODEL_NAMES.contains(&name) {
        return Err(Error::UnknownModel {
            name: name.to_string(),
            available: MODEL_NAMES.iter().map(|s| s.to_string()).collect(),
        });
    }
    let allowed = allowed_keys(name);
    for key in overrides.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "model `{name}` has no parameter `{key}` (allowed: {})",
                allowed.join(", ")
            )));
        }
    }
    let get = |key: &str, default: f64| overrides.get(key).copied().unwrap_or(default);
    let toy_case = |toy: ConjugateToy| -> Result<Case> {
        toy.validate()?;
        Ok(Case {
            model: toy.model()?,
            designs: vec![toy.design()],
            toy: Some(toy),
        })
    };
    match name {
        "ades" => {
            let d = AdesTree::default();
            let tree = AdesTree {
                horizon: get("horizon", d.horizon),
                qse: get("qse", d.qse),
                cost_event: get("cost_event", d.cost_event),
                cost_treatment: get("cost_treatment", d.cost_treatment),
                cost_side_effect: get("cost_side_effect", d.cost_side_effect),
                willingness_to_pay: get("willingness_to_pay", d.willingness_to_pay),
            };
            let s = AdesStudies::default();
            let studies = AdesStudies {
                side_effect_patients: count(
                    "n_study1",
                    get("n_study1", s.side_effect_patients as f64),
                )?,
                quality_patients: count("n_study2", get("n_study2", s.quality_patients as f64))?,
                quality_variance: get("sigma2_study2", s.quality_variance),
                per_arm: count("n_per_arm", get("n_per_arm", s.per_arm as f64))?,
            };
            if !(studies.quality_variance > 0.0 && studies.quality_variance.is_finite()) {
                return Err(Error::Config("`sigma2_study2` must be positive".into()));
            }
            Ok(Case {
                model: tree.model()?,
                designs: AdesTree::designs(&studies),
                toy: None,
            })
        }
        "beta_binomial" => {
            let n = count("N", get("N", 1.0))?;
            toy_case(ConjugateToy::BetaBinomialUniform {
                k: get("k", 20_000.0),
                c: get("c", 10_000.0),
                n,
            })
        }
        "exp_gamma" => {
            let n = count("N", get("N", 10.0))?;
            toy_case(ConjugateToy::ExpGamma {
                alpha: get("alpha", 5.0),
                beta: get("beta", 1.0),
                k: get("k", 200.0),
                c0: get("c0", 900.0),
                c1: get("c1", 100.0),
                n,
            })
        }
        "normal_normal" => {
            let n = count("N", get("N", 9.0))?;
            toy_case(ConjugateToy::NormalNormal {
                theta0: get("theta0", 0.0),
                sigma2_theta: get("sigma2_theta", 1.0),
                sigma2_x: get("sigma2_x", 1.0),
                k: get("k", 10_000.0),
                c: get("c", 0.0),
                n,
            })
        }
        "quadratic_normal" => {
            let v = get("prior_variance", 5.0);
            toy_case(ConjugateToy::QuadraticNormal {
                prior_variance: v,
                obs_variance: get("obs_variance", 10.0),
                n_obs: count("N", get("N", 10.0))?,
                offset: get("offset", v),
            })
        }
        "linear_nuisance" => {
            let (model, design) = linear_nuisance(count("N", get("N", 50.0))?)?;
            Ok(Case {
                model,
                designs: vec![design],
                toy: None,
            })
        }
        _ => unreachable!("checked against MODEL_NAMES"),
    }
}
