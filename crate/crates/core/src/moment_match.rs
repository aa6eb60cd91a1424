//! EVSI by moment matching: rescale `INB^phi` linearly so its mean and
//! variance match those of the preposterior mean of INB, then take the
//! expected gain of the rescaled sample.

use serde::{Deserialize, Serialize};

use crate::cases::design::{DataModel, StudyDesign};
use crate::error::{Error, Result};
use crate::model::{
    compute_inb, decision_gain, decision_gain_se, evpi, DecisionModel, InbSamples, PsaSamples,
};
use crate::preposterior::{
    build_plan, expected_posterior_variance, PosteriorOptions, Ranking, VarianceEstimate,
};
use crate::regression::{fit_inb_phi, RegressionFit, RegressionOptions};
use crate::stats::moments::variance_standard_error;
use crate::stats::{summarize, SeedSpec};

/// `sigma2` may exceed `Var(INB^phi)` by this fraction (Monte Carlo
/// slack) before the run fails.
pub const VARIANCE_SLACK: f64 = 0.05;

/// Studies smaller than this trigger a warning.
pub const SMALL_STUDY: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentMatchOptions {
    pub q: usize,
    pub posterior: PosteriorOptions,
    pub regression: RegressionOptions,
    /// Stream for the quadrature datasets and posteriors.
    pub seed: SeedSpec,
}

impl Default for MomentMatchOptions {
    fn default() -> Self {
        Self {
            q: 30,
            posterior: PosteriorOptions::default(),
            regression: RegressionOptions::default(),
            seed: SeedSpec::from_master(0),
        }
    }
}

/// Rescaling constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    pub a: f64,
    pub b: f64,
    /// `a` was capped at 1 because `sigma2` exceeded `Var(INB^phi)`.
    pub a_clamped: bool,
}

/// `a = sqrt(sigma2 / Var(INB^phi))` (capped at 1) and
/// `b = mean(INB^theta) * (1 - a)`.
pub fn compute_constants(sigma2: f64, inb: &InbSamples) -> Result<Constants> {
    if !(sigma2 >= 0.0 && sigma2.is_finite()) {
        return Err(Error::Domain(format!(
            "sigma2 must be finite and non-negative, got {sigma2}"
        )));
    }
    let phi = summarize(inb.phi_or_theta())?;
    if phi.variance <= 0.0 {
        return Err(Error::DegenerateModel("Var(INB^phi) is zero".into()));
    }
    if sigma2 > phi.variance * (1.0 + VARIANCE_SLACK) {
        return Err(Error::VarianceBound {
            sigma2,
            var_phi: phi.variance,
        });
    }
    let mean_theta = summarize(&inb.inb_theta)?.mean;
    let ratio = sigma2 / phi.variance;
    let a_clamped = ratio > 1.0;
    if a_clamped {
        log::warn!(
            "sigma2 {sigma2} exceeds Var(INB^phi) {}; a capped at 1",
            phi.variance
        );
    }
    let a = ratio.min(1.0).sqrt();
    Ok(Constants {
        a,
        b: mean_theta * (1.0 - a),
        a_clamped,
    })
}

/// `mean(max(0, r)) - max(0, mean(r))`, floored at zero.
pub fn evsi_from_rescaled(rescaled: &[f64]) -> Result<f64> {
    if rescaled.is_empty() {
        return Err(Error::Domain("EVSI of an empty sample".into()));
    }
    Ok(decision_gain(rescaled))
}

fn rescale(inb: &InbSamples, c: &Constants) -> Vec<f64> {
    inb.phi_or_theta().iter().map(|v| c.a * v + c.b).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: String,
    pub design: String,
    pub sample_size: u64,
    #[serde(rename = "S")]
    pub s: usize,
    #[serde(rename = "Q")]
    pub q: usize,
    #[serde(rename = "M")]
    pub m: usize,
    pub burn_in: usize,
    pub psa_seed: SeedSpec,
    pub quadrature_seed: SeedSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentMatchResult {
    pub evsi: f64,
    /// Value before flooring at zero.
    pub raw_evsi: f64,
    pub standard_error: f64,
    pub a: f64,
    pub b: f64,
    pub a_clamped: bool,
    pub sigma2: f64,
    pub sigma2_standard_error: f64,
    pub prior_variance: f64,
    pub expected_posterior_variance: f64,
    pub var_inb_phi: f64,
    pub mean_inb: f64,
    pub evpi: f64,
    pub evpi_standard_error: f64,
    pub evppi: f64,
    pub evppi_standard_error: f64,
    pub per_point: Vec<f64>,
    pub variance_estimate: VarianceEstimate,
    pub ranking: Ranking,
    /// `None` when the study informs every parameter and no regression is run.
    pub regression: Option<RegressionFit>,
    pub config: RunConfig,
    pub warnings: Vec<String>,
    #[serde(skip)]
    pub rescaled: Vec<f64>,
}

impl MomentMatchResult {
    /// JSON with keys in sorted order.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("result serializes")
    }
}

/// Rescaled sample and EVSI with its Monte Carlo standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Matched {
    pub constants: Constants,
    pub rescaled: Vec<f64>,
    pub evsi: f64,
    pub standard_error: f64,
    pub sigma2_standard_error: f64,
}

/// Moment-matching EVSI from `INB^theta` (and `INB^phi`, if fitted) and a
/// variance estimate.
///
/// The standard error combines the spread of the expected-gain terms with
/// the effect of the uncertainty in `sigma2`, which comes from the PSA
/// variance and the spread of the per-point posterior variances.
pub fn match_moments(inb: &InbSamples, variance: &VarianceEstimate) -> Result<Matched> {
    let constants = compute_constants(variance.sigma2, inb)?;
    let rescaled = rescale(inb, &constants);
    let evsi = evsi_from_rescaled(&rescaled)?;
    let theta = summarize(&inb.inb_theta)?;
    let q = variance.per_point.len();
    let point_var = if q >= 2 {
        summarize(&variance.per_point)?.variance / q as f64
    } else {
        0.0
    };
    let sigma2_se = (variance_standard_error(&inb.inb_theta, &theta).powi(2) + point_var).sqrt();
    let var_phi = summarize(inb.phi_or_theta())?.variance;
    let at = |s2: f64| {
        let a = (s2.max(0.0) / var_phi).min(1.0).sqrt();
        let b = theta.mean * (1.0 - a);
        decision_gain(
            &inb.phi_or_theta()
                .iter()
                .map(|v| a * v + b)
                .collect::<Vec<_>>(),
        )
    };
    let propagated =
        0.5 * (at(variance.sigma2 + sigma2_se) - at(variance.sigma2 - sigma2_se)).abs();
    let standard_error = (decision_gain_se(&rescaled).powi(2) + propagated.powi(2)).sqrt();
    Ok(Matched {
        constants,
        rescaled,
        evsi,
        standard_error,
        sigma2_standard_error: sigma2_se,
    })
}

fn small_study_warning(design: &StudyDesign) -> Option<String> {
    let n = design.sample_size();
    if n >= SMALL_STUDY {
        return None;
    }
    let discrete = matches!(
        design.data,
        DataModel::Binomial { .. } | DataModel::TwoArmBinomial { .. }
    );
    let msg = format!(
        "study `{}` has sample size {n} < {SMALL_STUDY}{}; the preposterior mean may be far from \
         the rescaled INB distribution",
        design.name,
        if discrete { " with discrete data" } else { "" }
    );
    log::warn!("{msg}");
    Some(msg)
}

/// Full pipeline: INB, regression for `INB^phi` (skipped when the study
/// informs every parameter), quadrature, posteriors and rescaling.
pub fn estimate_evsi(
    model: &DecisionModel,
    design: &StudyDesign,
    psa: &PsaSamples,
    opts: &MomentMatchOptions,
) -> Result<MomentMatchResult> {
    let bound = design.bind(model).map_err(|e| e.at_stage("design"))?;
    let mut inb = compute_inb(model, psa).map_err(|e| e.at_stage("psa"))?;
    let mut warnings: Vec<String> = small_study_warning(design).into_iter().collect();
    let covers_all = {
        let mut f = bound.focal.clone();
        f.sort_unstable();
        f == (0..model.params().len()).collect::<Vec<_>>()
    };
    let regression = if covers_all {
        None
    } else {
        Some(
            fit_inb_phi(&mut inb, psa, &design.focal_params, &opts.regression)
                .map_err(|e| e.at_stage("regression"))?,
        )
    };
    let plan = build_plan(psa, &design.focal_params, opts.q, opts.seed)
        .map_err(|e| e.at_stage("quadrature"))?;
    let variance = expected_posterior_variance(&plan, design, model, &inb, &opts.posterior)
        .map_err(|e| e.at_stage("posterior"))?;
    warnings.extend(variance.warnings.iter().cloned());
    let matched = match_moments(&inb, &variance).map_err(|e| e.at_stage("moment_match"))?;
    let c = matched.constants;
    if c.a_clamped {
        warnings.push(format!(
            "sigma2 exceeded Var(INB^phi) within the {}% slack; a capped at 1",
            VARIANCE_SLACK * 100.0
        ));
    }
    let theta = summarize(&inb.inb_theta)?;
    let phi = summarize(inb.phi_or_theta())?;
    let rescaled = matched.rescaled;
    let raw = {
        let n = rescaled.len() as f64;
        rescaled.iter().map(|v| v.max(0.0)).sum::<f64>() / n
            - (rescaled.iter().sum::<f64>() / n).max(0.0)
    };
    Ok(MomentMatchResult {
        evsi: matched.evsi,
        raw_evsi: raw,
        standard_error: matched.standard_error,
        a: c.a,
        b: c.b,
        a_clamped: c.a_clamped,
        sigma2: variance.sigma2,
        sigma2_standard_error: matched.sigma2_standard_error,
        prior_variance: variance.prior_variance,
        expected_posterior_variance: variance.expected_posterior_variance,
        var_inb_phi: phi.variance,
        mean_inb: theta.mean,
        evpi: evpi(&inb)?,
        evpi_standard_error: decision_gain_se(&inb.inb_theta),
        evppi: decision_gain(inb.phi_or_theta()),
        evppi_standard_error: decision_gain_se(inb.phi_or_theta()),
        per_point: variance.per_point.clone(),
        ranking: plan.ranking.clone(),
        regression,
        config: RunConfig {
            model: model.name().to_string(),
            design: design.name.clone(),
            sample_size: design.sample_size(),
            s: psa.n_draws(),
            q: opts.q,
            m: opts.posterior.m,
            burn_in: opts.posterior.burn_in,
            psa_seed: psa.seed(),
            quadrature_seed: opts.seed,
        },
        variance_estimate: variance,
        warnings,
        rescaled,
    })
}
