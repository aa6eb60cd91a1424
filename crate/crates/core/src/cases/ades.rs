//! Two-treatment decision tree for avoiding a critical event, with four
//! candidate studies.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::design::{DataModel, PosteriorRecipe, Scale, StudyDesign};
use crate::error::Result;
use crate::model::{DecisionModel, NetBenefit, Parameter};
use crate::stats::dist::{expit, logit};
use crate::stats::DistSpec;

pub const P_CONTROL: &str = "Pc";
pub const P_SIDE_EFFECT: &str = "Pse";
pub const LOG_OR: &str = "log_or";
pub const Q_EVENT: &str = "Qe";

/// Fixed inputs of the tree. Uncertain inputs are the model parameters
/// `Pc`, `Pse`, `log_or` and `Qe`; `Pt = expit(logit(Pc) + log_or)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdesTree {
    /// Remaining life years.
    pub horizon: f64,
    /// QALY loss from a side effect.
    pub qse: f64,
    pub cost_event: f64,
    pub cost_treatment: f64,
    pub cost_side_effect: f64,
    pub willingness_to_pay: f64,
}

impl Default for AdesTree {
    fn default() -> Self {
        Self {
            horizon: 30.0,
            qse: 1.0,
            cost_event: 200_000.0,
            cost_treatment: 15_000.0,
            cost_side_effect: 100_000.0,
            willingness_to_pay: 75_000.0,
        }
    }
}

/// Sample sizes and study-2 response variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdesStudies {
    /// Patients given the new treatment, side effects counted.
    pub side_effect_patients: u64,
    /// Post-event patients whose quality of life is recorded.
    pub quality_patients: u64,
    /// Variance of one logit-scale quality-of-life response.
    pub quality_variance: f64,
    /// Patients per arm in the randomised trial (studies 3 and 4).
    pub per_arm: u64,
}

impl Default for AdesStudies {
    fn default() -> Self {
        Self {
            side_effect_patients: 60,
            quality_patients: 100,
            quality_variance: 2.0,
            per_arm: 200,
        }
    }
}

impl AdesTree {
    /// Net benefit of standard care and of the new treatment.
    pub fn net_benefit(&self, pc: f64, pt: f64, pse: f64, qe: f64) -> (f64, f64) {
        let lam = self.willingness_to_pay;
        let l = self.horizon;
        let event = lam * l * (1.0 + qe) / 2.0;
        let nb1 = pc * (event - self.cost_event) + (1.0 - pc) * lam * l;
        let ct = self.cost_treatment;
        let cse = self.cost_side_effect;
        let ce = self.cost_event;
        let nb2 = pse * pt * (lam * (l * (1.0 + qe) / 2.0 - self.qse) - (ct + cse + ce))
            + pse * (1.0 - pt) * (lam * (l - self.qse) - (ct + cse))
            + (1.0 - pse) * pt * (event - (ct + ce))
            + (1.0 - pse) * (1.0 - pt) * (lam * l - ct);
        (nb1, nb2)
    }

    pub fn priors() -> Result<Vec<Parameter>> {
        Ok(vec![
            Parameter::new(P_CONTROL, DistSpec::beta(15.0, 85.0)?),
            Parameter::new(P_SIDE_EFFECT, DistSpec::beta(3.0, 9.0)?),
            Parameter::new(LOG_OR, DistSpec::normal(-1.5, 1.0 / 3.0)?),
            Parameter::new(Q_EVENT, DistSpec::logit_normal(0.6, 1.0 / 6.0)?),
        ])
    }

    pub fn model(&self) -> Result<DecisionModel> {
        DecisionModel::new("ades", Self::priors()?, Arc::new(*self), (1, 0))
    }

    /// Variance of the trial's log odds ratio estimate, evaluated at the
    /// prior mean event probabilities.
    pub fn log_or_estimate_variance(per_arm: u64) -> f64 {
        let pc: f64 = 0.15;
        let pt = expit(logit(pc) - 1.5);
        let n = per_arm as f64;
        1.0 / (n * pc * (1.0 - pc)) + 1.0 / (n * pt * (1.0 - pt))
    }

    /// Studies 1 to 4, named `study1` .. `study4`.
    pub fn designs(studies: &AdesStudies) -> Vec<StudyDesign> {
        let s = |v: &str| v.to_string();
        vec![
            StudyDesign {
                name: s("study1"),
                focal_params: vec![s(P_SIDE_EFFECT)],
                updated_params: vec![s(P_SIDE_EFFECT)],
                data: DataModel::Binomial {
                    param: s(P_SIDE_EFFECT),
                    trials: studies.side_effect_patients,
                },
                recipe: PosteriorRecipe::ConjugateBetaBinomial,
            },
            StudyDesign {
                name: s("study2"),
                focal_params: vec![s(Q_EVENT)],
                updated_params: vec![s(Q_EVENT)],
                data: DataModel::Normal {
                    param: s(Q_EVENT),
                    n_obs: studies.quality_patients,
                    obs_variance: studies.quality_variance,
                    scale: Scale::Logit,
                },
                recipe: PosteriorRecipe::ConjugateNormalNormal,
            },
            // The trial is summarised by its log odds ratio estimate, so it
            // informs the treatment effect but not the baseline risk.
            StudyDesign {
                name: s("study3"),
                focal_params: vec![s(LOG_OR)],
                updated_params: vec![s(LOG_OR)],
                data: DataModel::Normal {
                    param: s(LOG_OR),
                    n_obs: 1,
                    obs_variance: Self::log_or_estimate_variance(studies.per_arm),
                    scale: Scale::Identity,
                },
                recipe: PosteriorRecipe::MetropolisGeneric,
            },
            // Both arms' event counts inform (Pc, Pt), parametrised as (Pc, log_or).
            StudyDesign {
                name: s("study4"),
                focal_params: vec![s(P_CONTROL), s(LOG_OR)],
                updated_params: vec![s(P_CONTROL), s(LOG_OR)],
                data: DataModel::TwoArmBinomial {
                    baseline: s(P_CONTROL),
                    log_odds_ratio: s(LOG_OR),
                    per_arm: studies.per_arm,
                },
                recipe: PosteriorRecipe::MetropolisGeneric,
            },
        ]
    }
}

impl NetBenefit for AdesTree {
    fn n_treatments(&self) -> usize {
        2
    }

    fn evaluate(&self, theta: &[f64], out: &mut [f64]) {
        let (pc, pse, lor, qe) = (theta[0], theta[1], theta[2], theta[3]);
        let pt = expit(logit(pc) + lor);
        let (nb1, nb2) = self.net_benefit(pc, pt, pse, qe);
        out[0] = nb1;
        out[1] = nb2;
    }
}
