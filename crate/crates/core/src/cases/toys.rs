//! Small models with closed-form or enumerable EVSI.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Gamma};
use statrs::function::beta::beta_reg;

use super::design::{DataModel, PosteriorRecipe, Scale, StudyDesign};
use crate::error::{Error, Result};
use crate::model::{DecisionModel, Parameter};
use crate::stats::dist::{std_normal_cdf, std_normal_pdf};
use crate::stats::DistSpec;

/// Name of the single parameter in every toy model.
pub const THETA: &str = "theta";

/// Closed-form summaries of the preposterior distribution.
///
/// `mean` and `variance` describe the preposterior distribution of the
/// posterior expected net benefit of the new treatment (treatment index 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPreposterior {
    pub mean: f64,
    pub variance: f64,
    pub evsi: f64,
}

/// One-parameter models with conjugate studies and known answers.
/// Treatment 0 is the comparator; INB is treatment 1 minus treatment 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConjugateToy {
    /// `theta ~ Uniform(0, 1)`, `NB = (0, k*theta - c)`, `X ~ Binomial(n, theta)`.
    BetaBinomialUniform { k: f64, c: f64, n: u64 },
    /// `theta ~ Gamma(alpha, rate beta)`, `NB = (c0, k*theta - c1)`,
    /// `n` exponential observations with rate `theta`.
    ExpGamma {
        alpha: f64,
        beta: f64,
        k: f64,
        c0: f64,
        c1: f64,
        n: u64,
    },
    /// `theta ~ Normal(theta0, sigma2_theta)`, `NB = (0, k*theta - c)`,
    /// `n` observations from `Normal(theta, sigma2_x)`.
    NormalNormal {
        theta0: f64,
        sigma2_theta: f64,
        sigma2_x: f64,
        k: f64,
        c: f64,
        n: u64,
    },
    /// `theta ~ Normal(0, prior_variance)`, `NB = (0, theta^2 - offset)`,
    /// `n_obs` observations from `Normal(theta, obs_variance)`.
    QuadraticNormal {
        prior_variance: f64,
        obs_variance: f64,
        n_obs: u64,
        offset: f64,
    },
}

impl ConjugateToy {
    pub fn beta_binomial(n: u64) -> Self {
        ConjugateToy::BetaBinomialUniform {
            k: 20_000.0,
            c: 10_000.0,
            n,
        }
    }

    pub fn exp_gamma(n: u64) -> Self {
        ConjugateToy::ExpGamma {
            alpha: 5.0,
            beta: 1.0,
            k: 200.0,
            c0: 900.0,
            c1: 100.0,
            n,
        }
    }

    pub fn normal_normal(n: u64) -> Self {
        ConjugateToy::NormalNormal {
            theta0: 0.0,
            sigma2_theta: 1.0,
            sigma2_x: 1.0,
            k: 10_000.0,
            c: 0.0,
            n,
        }
    }

    /// Ten observations of variance 10 against a prior variance of 5; prior
    /// mean INB is zero.
    pub fn quadratic_normal() -> Self {
        ConjugateToy::QuadraticNormal {
            prior_variance: 5.0,
            obs_variance: 10.0,
            n_obs: 10,
            offset: 5.0,
        }
    }

    pub fn sample_size(&self) -> u64 {
        match *self {
            ConjugateToy::BetaBinomialUniform { n, .. }
            | ConjugateToy::ExpGamma { n, .. }
            | ConjugateToy::NormalNormal { n, .. } => n,
            ConjugateToy::QuadraticNormal { n_obs, .. } => n_obs,
        }
    }

    pub fn with_sample_size(mut self, size: u64) -> Self {
        match &mut self {
            ConjugateToy::BetaBinomialUniform { n, .. }
            | ConjugateToy::ExpGamma { n, .. }
            | ConjugateToy::NormalNormal { n, .. } => *n = size,
            ConjugateToy::QuadraticNormal { n_obs, .. } => *n_obs = size,
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite, got {v}")))
            }
        };
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive, got {v}")))
            }
        };
        match *self {
            ConjugateToy::BetaBinomialUniform { k, c, .. } => {
                finite("k", k)?;
                finite("c", c)
            }
            ConjugateToy::ExpGamma {
                alpha,
                beta,
                k,
                c0,
                c1,
                ..
            } => {
                positive("alpha", alpha)?;
                positive("beta", beta)?;
                positive("k", k)?;
                finite("c0", c0)?;
                finite("c1", c1)
            }
            ConjugateToy::NormalNormal {
                theta0,
                sigma2_theta,
                sigma2_x,
                k,
                c,
                ..
            } => {
                finite("theta0", theta0)?;
                positive("sigma2_theta", sigma2_theta)?;
                positive("sigma2_x", sigma2_x)?;
                finite("k", k)?;
                finite("c", c)
            }
            ConjugateToy::QuadraticNormal {
                prior_variance,
                obs_variance,
                offset,
                ..
            } => {
                positive("prior_variance", prior_variance)?;
                positive("obs_variance", obs_variance)?;
                finite("offset", offset)
            }
        }
    }

    fn prior(&self) -> Result<DistSpec> {
        match *self {
            ConjugateToy::BetaBinomialUniform { .. } => DistSpec::uniform(0.0, 1.0),
            ConjugateToy::ExpGamma { alpha, beta, .. } => DistSpec::gamma(alpha, beta),
            ConjugateToy::NormalNormal {
                theta0,
                sigma2_theta,
                ..
            } => DistSpec::normal(theta0, sigma2_theta),
            ConjugateToy::QuadraticNormal { prior_variance, .. } => {
                DistSpec::normal(0.0, prior_variance)
            }
        }
    }

    /// INB as `c0 + c1*theta + c2*theta^2`.
    pub fn inb_polynomial(&self) -> [f64; 3] {
        match *self {
            ConjugateToy::BetaBinomialUniform { k, c, .. } => [-c, k, 0.0],
            ConjugateToy::ExpGamma { k, c0, c1, .. } => [-c0 - c1, k, 0.0],
            ConjugateToy::NormalNormal { k, c, .. } => [-c, k, 0.0],
            ConjugateToy::QuadraticNormal { offset, .. } => [-offset, 0.0, 1.0],
        }
    }

    /// Net benefit of each treatment as `[comparator, new]` polynomials.
    fn nb_polynomials(&self) -> ([f64; 3], [f64; 3]) {
        match *self {
            ConjugateToy::ExpGamma { k, c0, c1, .. } => ([c0, 0.0, 0.0], [-c1, k, 0.0]),
            _ => ([0.0; 3], self.inb_polynomial()),
        }
    }

    pub fn model(&self) -> Result<DecisionModel> {
        self.validate()?;
        let (a, b) = self.nb_polynomials();
        let nb = move |th: &[f64], out: &mut [f64]| {
            let x = th[0];
            out[0] = a[0] + x * (a[1] + x * a[2]);
            out[1] = b[0] + x * (b[1] + x * b[2]);
        };
        let name = match self {
            ConjugateToy::BetaBinomialUniform { .. } => "beta_binomial",
            ConjugateToy::ExpGamma { .. } => "exp_gamma",
            ConjugateToy::NormalNormal { .. } => "normal_normal",
            ConjugateToy::QuadraticNormal { .. } => "quadratic_normal",
        };
        DecisionModel::new(
            name,
            vec![Parameter::new(THETA, self.prior()?)],
            Arc::new((2, nb)),
            (1, 0),
        )?
        .with_inb_polynomial(self.inb_polynomial())
    }

    pub fn design(&self) -> StudyDesign {
        let param = THETA.to_string();
        let (data, recipe) = match *self {
            ConjugateToy::BetaBinomialUniform { n, .. } => (
                DataModel::Binomial {
                    param: param.clone(),
                    trials: n,
                },
                PosteriorRecipe::ConjugateBetaBinomial,
            ),
            ConjugateToy::ExpGamma { n, .. } => (
                DataModel::Exponential {
                    param: param.clone(),
                    n_obs: n,
                },
                PosteriorRecipe::ConjugateGammaExponential,
            ),
            ConjugateToy::NormalNormal { sigma2_x, n, .. } => (
                DataModel::Normal {
                    param: param.clone(),
                    n_obs: n,
                    obs_variance: sigma2_x,
                    scale: Scale::Identity,
                },
                PosteriorRecipe::ConjugateNormalNormal,
            ),
            ConjugateToy::QuadraticNormal {
                obs_variance,
                n_obs,
                ..
            } => (
                DataModel::Normal {
                    param: param.clone(),
                    n_obs,
                    obs_variance,
                    scale: Scale::Identity,
                },
                PosteriorRecipe::ConjugateNormalNormal,
            ),
        };
        StudyDesign {
            name: "trial".into(),
            focal_params: vec![param.clone()],
            updated_params: vec![param],
            data,
            recipe,
        }
    }

    /// Prior expected INB.
    pub fn prior_mean_inb(&self) -> f64 {
        let [c0, c1, c2] = self.inb_polynomial();
        match *self {
            ConjugateToy::BetaBinomialUniform { .. } => c0 + c1 / 2.0,
            ConjugateToy::ExpGamma { alpha, beta, .. } => c0 + c1 * alpha / beta,
            ConjugateToy::NormalNormal {
                theta0,
                sigma2_theta,
                ..
            } => c0 + c1 * theta0 + c2 * (theta0 * theta0 + sigma2_theta),
            ConjugateToy::QuadraticNormal { prior_variance, .. } => c0 + c2 * prior_variance,
        }
    }

    /// Closed-form preposterior summary and exact EVSI.
    pub fn analytic_preposterior(&self) -> Result<AnalyticPreposterior> {
        self.validate()?;
        let m0 = self.prior_mean_inb();
        Ok(match *self {
            ConjugateToy::BetaBinomialUniform { k, c, n } => {
                let nf = n as f64;
                // X is uniform on 0..=n; the posterior mean of theta is (1+x)/(n+2).
                let gain = (0..=n)
                    .map(|x| (k * (1.0 + x as f64) / (nf + 2.0) - c).max(0.0))
                    .sum::<f64>()
                    / (nf + 1.0);
                AnalyticPreposterior {
                    mean: k / 2.0 - c,
                    variance: k * k * nf / (12.0 * (nf + 2.0)),
                    evsi: (gain - m0.max(0.0)).max(0.0),
                }
            }
            ConjugateToy::ExpGamma {
                alpha,
                beta,
                k,
                c0,
                c1,
                n,
            } => {
                let nf = n as f64;
                let variance = k * k * alpha * nf / (beta * beta * (alpha + nf + 1.0));
                let evsi = if n == 0 {
                    0.0
                } else {
                    // Posterior mean INB is A*U - C with U = beta/(beta + sum) ~ Beta(alpha, n).
                    let a = k * (alpha + nf) / beta;
                    let cc = c0 + c1;
                    let t = cc / a;
                    let upper = |p: f64, q: f64| {
                        if t <= 0.0 {
                            1.0
                        } else if t >= 1.0 {
                            0.0
                        } else {
                            1.0 - beta_reg(p, q, t)
                        }
                    };
                    let gain =
                        a * alpha / (alpha + nf) * upper(alpha + 1.0, nf) - cc * upper(alpha, nf);
                    (gain - m0.max(0.0)).max(0.0)
                };
                AnalyticPreposterior {
                    mean: k * alpha / beta - c1,
                    variance,
                    evsi,
                }
            }
            ConjugateToy::NormalNormal {
                sigma2_theta,
                sigma2_x,
                k,
                n,
                ..
            } => {
                let var_mean = if n == 0 {
                    0.0
                } else {
                    sigma2_theta * sigma2_theta / (sigma2_x / n as f64 + sigma2_theta)
                };
                let variance = k * k * var_mean;
                AnalyticPreposterior {
                    mean: m0,
                    variance,
                    evsi: normal_gain(m0, variance.sqrt()),
                }
            }
            ConjugateToy::QuadraticNormal {
                prior_variance,
                obs_variance,
                n_obs,
                offset,
            } => {
                let (tau2, post_var) = if n_obs == 0 {
                    (0.0, prior_variance)
                } else {
                    let eff = obs_variance / n_obs as f64;
                    (
                        prior_variance * prior_variance / (prior_variance + eff),
                        prior_variance * eff / (prior_variance + eff),
                    )
                };
                // Posterior mean INB is tau2 * Z^2 + post_var - offset.
                AnalyticPreposterior {
                    mean: m0,
                    variance: 2.0 * tau2 * tau2,
                    evsi: scaled_chi2_gain(tau2, offset - post_var, m0),
                }
            }
        })
    }

    /// Exact expected value of perfect information.
    pub fn exact_evpi(&self) -> Result<f64> {
        self.validate()?;
        let m0 = self.prior_mean_inb();
        Ok(match *self {
            ConjugateToy::BetaBinomialUniform { k, c, .. } => {
                // E[max(0, k*theta - c)] for theta ~ U(0, 1).
                let e = if k == 0.0 {
                    (-c).max(0.0)
                } else {
                    let (lo, hi) = ((c / k).clamp(0.0, 1.0), 1.0);
                    let (lo, hi) = if k > 0.0 { (lo, hi) } else { (0.0, lo) };
                    k * (hi * hi - lo * lo) / 2.0 - c * (hi - lo)
                };
                (e - m0.max(0.0)).max(0.0)
            }
            ConjugateToy::ExpGamma {
                alpha,
                beta,
                k,
                c0,
                c1,
                ..
            } => {
                let t = (c0 + c1) / k;
                let upper = |shape: f64| {
                    if t <= 0.0 {
                        1.0
                    } else {
                        1.0 - Gamma::new(shape, beta).expect("validated").cdf(t)
                    }
                };
                let e = k * alpha / beta * upper(alpha + 1.0) - (c0 + c1) * upper(alpha);
                (e - m0.max(0.0)).max(0.0)
            }
            ConjugateToy::NormalNormal {
                sigma2_theta, k, ..
            } => normal_gain(m0, k.abs() * sigma2_theta.sqrt()),
            ConjugateToy::QuadraticNormal {
                prior_variance,
                offset,
                ..
            } => scaled_chi2_gain(prior_variance, offset, m0),
        })
    }
}

/// `E[max(0, Y)] - max(0, m)` for `Y ~ Normal(m, s^2)`.
pub fn normal_gain(m: f64, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let z = m / s;
    (s * std_normal_pdf(z) + m * std_normal_cdf(z) - m.max(0.0)).max(0.0)
}

/// `E[max(0, scale*Z^2 - threshold)] - max(0, mean)` for standard normal `Z`.
fn scaled_chi2_gain(scale: f64, threshold: f64, mean: f64) -> f64 {
    let e = if scale <= 0.0 {
        (-threshold).max(0.0)
    } else if threshold <= 0.0 {
        scale - threshold
    } else {
        let u = threshold / scale;
        let r = u.sqrt();
        scale * (2.0 * r * std_normal_pdf(r) + 2.0 * (1.0 - u) * (1.0 - std_normal_cdf(r)))
    };
    (e - mean.max(0.0)).max(0.0)
}

/// Two-parameter model with a nuisance parameter: `phi ~ Beta(1, 4)`,
/// `psi ~ Normal(-0.05, 0.01)`, `NB = (10000*psi - 4000, 10000*phi - 6500)`,
/// so prior mean INB is zero. The study observes `phi` only.
pub fn linear_nuisance(trials: u64) -> Result<(DecisionModel, StudyDesign)> {
    let nb = |th: &[f64], out: &mut [f64]| {
        out[0] = 10_000.0 * th[1] - 4_000.0;
        out[1] = 10_000.0 * th[0] - 6_500.0;
    };
    let model = DecisionModel::new(
        "linear_nuisance",
        vec![
            Parameter::new("phi", DistSpec::beta(1.0, 4.0)?),
            Parameter::new("psi", DistSpec::normal(-0.05, 0.01)?),
        ],
        Arc::new((2, nb)),
        (1, 0),
    )?;
    let design = StudyDesign {
        name: "phi_trial".into(),
        focal_params: vec!["phi".into()],
        updated_params: vec!["phi".into()],
        data: DataModel::Binomial {
            param: "phi".into(),
            trials,
        },
        recipe: PosteriorRecipe::ConjugateBetaBinomial,
    };
    Ok((model, design))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::SeedSpec;

    #[test]
    fn beta_binomial_enumeration() {
        let a = ConjugateToy::beta_binomial(1)
            .analytic_preposterior()
            .unwrap();
        assert!((a.evsi - 5000.0 / 3.0).abs() < 1e-9);
        let a = ConjugateToy::beta_binomial(10)
            .analytic_preposterior()
            .unwrap();
        assert!((a.evsi - 2272.727_272_727_273).abs() < 1e-6);
        assert_eq!(a.mean, 0.0);
        assert!((a.variance - 20_000.0f64.powi(2) * 10.0 / 144.0).abs() < 1e-6);
    }

    #[test]
    fn exp_gamma_reference_values() {
        let a = ConjugateToy::exp_gamma(5).analytic_preposterior().unwrap();
        assert!((a.mean - 900.0).abs() < 1e-12);
        assert!((a.variance - 200.0 * 200.0 * 25.0 / 11.0).abs() < 1e-6);
        assert!((a.evsi - 123.046_875).abs() < 1e-6, "{}", a.evsi);
    }

    /// Direct numerical integration over the marginal of the data sum.
    #[test]
    fn exp_gamma_closed_form_matches_quadrature() {
        let (alpha, beta, k, c, n) = (5.0, 1.0, 200.0, 1000.0, 10.0);
        // U = beta / (beta + T) ~ Beta(alpha, n); integrate max(0, A*U - c) against its density.
        let a = k * (alpha + n) / beta;
        let dens = statrs::distribution::Beta::new(alpha, n).unwrap();
        use statrs::distribution::Continuous;
        let m = 200_000;
        let h = 1.0 / m as f64;
        let integral: f64 = (0..m)
            .map(|i| {
                let u = (i as f64 + 0.5) * h;
                (a * u - c).max(0.0) * dens.pdf(u) * h
            })
            .sum();
        let exact = ConjugateToy::exp_gamma(10)
            .analytic_preposterior()
            .unwrap()
            .evsi;
        assert!(
            (integral - exact).abs() < 1e-4 * exact,
            "{integral} vs {exact}"
        );
    }

    #[test]
    fn quadratic_reference_values() {
        let q = ConjugateToy::quadratic_normal();
        let a = q.analytic_preposterior().unwrap();
        assert!((a.variance - 2.0 * (25.0f64 / 6.0).powi(2)).abs() < 1e-12);
        assert!((a.evsi - 2.016_44).abs() < 1e-4, "{}", a.evsi);
    }

    #[test]
    fn normal_gain_limits() {
        assert_eq!(normal_gain(3.0, 0.0), 0.0);
        assert!((normal_gain(0.0, 1.0) - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-14);
        assert!(normal_gain(1e6, 1.0) < 1e-9);
    }

    #[test]
    fn evsi_approaches_evpi_for_large_studies() {
        for toy in [
            ConjugateToy::beta_binomial(100_000),
            ConjugateToy::exp_gamma(1_000_000),
            ConjugateToy::normal_normal(10_000_000),
            ConjugateToy::quadratic_normal().with_sample_size(10_000_000),
        ] {
            let evsi = toy.analytic_preposterior().unwrap().evsi;
            let evpi = toy.exact_evpi().unwrap();
            assert!(evsi <= evpi * (1.0 + 1e-9), "{toy:?}");
            assert!(evsi > 0.99 * evpi, "{toy:?}: {evsi} vs {evpi}");
        }
    }

    #[test]
    fn polynomial_matches_net_benefit() {
        for toy in [
            ConjugateToy::beta_binomial(3),
            ConjugateToy::exp_gamma(3),
            ConjugateToy::normal_normal(3),
            ConjugateToy::quadratic_normal(),
        ] {
            let m = toy.model().unwrap();
            let [c0, c1, c2] = toy.inb_polynomial();
            for x in [0.1, 0.5, 2.0] {
                assert!((m.inb(&[x]) - (c0 + c1 * x + c2 * x * x)).abs() < 1e-9);
            }
            toy.design().bind(&m).unwrap();
        }
    }

    #[test]
    fn exact_evpi_matches_simulation() {
        for toy in [
            ConjugateToy::beta_binomial(1),
            ConjugateToy::exp_gamma(1),
            ConjugateToy::quadratic_normal(),
        ] {
            let m = toy.model().unwrap();
            let psa = crate::model::run_psa(&m, 400_000, SeedSpec::from_master(6)).unwrap();
            let inb = crate::model::compute_inb(&m, &psa).unwrap();
            let v = crate::model::evpi(&inb).unwrap();
            let se = crate::model::decision_gain_se(&inb.inb_theta);
            let exact = toy.exact_evpi().unwrap();
            assert!(
                (v - exact).abs() < 4.0 * se,
                "{toy:?}: {v} vs {exact} (se {se})"
            );
        }
    }
}
