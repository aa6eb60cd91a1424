//! Distribution kit: validated specifications with sampling, CDF, density and
//! quantile functions for every prior and data family the models use.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use statrs::distribution::{self as sd, Continuous, ContinuousCDF, Discrete, DiscreteCDF};

use super::seed::SeedSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Uniform,
    Beta,
    Gamma,
    Normal,
    Exponential,
    Binomial,
    LogitNormal,
    LogNormal,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Uniform => "uniform",
            Family::Beta => "beta",
            Family::Gamma => "gamma",
            Family::Normal => "normal",
            Family::Exponential => "exponential",
            Family::Binomial => "binomial",
            Family::LogitNormal => "logit_normal",
            Family::LogNormal => "log_normal",
        }
    }
}

/// A univariate distribution. Variances (not standard deviations) are used
/// for the normal-based families; gamma and exponential use rates.
///
/// Every operation validates the parameters first, so an invalid spec yields
/// an error instead of NaN draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDist", into = "RawDist")]
pub enum DistSpec {
    Uniform {
        low: f64,
        high: f64,
    },
    Beta {
        alpha: f64,
        beta: f64,
    },
    Gamma {
        shape: f64,
        rate: f64,
    },
    Normal {
        mean: f64,
        variance: f64,
    },
    Exponential {
        rate: f64,
    },
    Binomial {
        trials: u64,
        p: f64,
    },
    /// `logit(X) ~ Normal(mean, variance)`.
    LogitNormal {
        mean: f64,
        variance: f64,
    },
    /// `ln(X) ~ Normal(mean, variance)`.
    LogNormal {
        mean: f64,
        variance: f64,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDist {
    family: Family,
    params: Vec<f64>,
}

impl TryFrom<RawDist> for DistSpec {
    type Error = Error;
    fn try_from(raw: RawDist) -> Result<Self> {
        DistSpec::from_params(raw.family, &raw.params)
    }
}

impl From<DistSpec> for RawDist {
    fn from(d: DistSpec) -> Self {
        RawDist {
            family: d.family(),
            params: d.params(),
        }
    }
}

fn invalid(family: Family, reason: impl Into<String>) -> Error {
    Error::InvalidDistribution {
        family: family.name(),
        reason: reason.into(),
    }
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub(crate) fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn std_normal() -> sd::Normal {
    sd::Normal::new(0.0, 1.0).expect("standard normal")
}

impl DistSpec {
    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        DistSpec::Uniform { low, high }.validated()
    }
    pub fn beta(alpha: f64, beta: f64) -> Result<Self> {
        DistSpec::Beta { alpha, beta }.validated()
    }
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        DistSpec::Gamma { shape, rate }.validated()
    }
    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        DistSpec::Normal { mean, variance }.validated()
    }
    pub fn exponential(rate: f64) -> Result<Self> {
        DistSpec::Exponential { rate }.validated()
    }
    pub fn binomial(trials: u64, p: f64) -> Result<Self> {
        DistSpec::Binomial { trials, p }.validated()
    }
    pub fn logit_normal(mean: f64, variance: f64) -> Result<Self> {
        DistSpec::LogitNormal { mean, variance }.validated()
    }
    pub fn log_normal(mean: f64, variance: f64) -> Result<Self> {
        DistSpec::LogNormal { mean, variance }.validated()
    }

    /// Builds a spec from a family tag and its positional parameters.
    pub fn from_params(family: Family, params: &[f64]) -> Result<Self> {
        let want = match family {
            Family::Exponential => 1,
            _ => 2,
        };
        if params.len() != want {
            return Err(invalid(
                family,
                format!("expected {want} parameters, got {}", params.len()),
            ));
        }
        let spec = match family {
            Family::Uniform => DistSpec::Uniform {
                low: params[0],
                high: params[1],
            },
            Family::Beta => DistSpec::Beta {
                alpha: params[0],
                beta: params[1],
            },
            Family::Gamma => DistSpec::Gamma {
                shape: params[0],
                rate: params[1],
            },
            Family::Normal => DistSpec::Normal {
                mean: params[0],
                variance: params[1],
            },
            Family::Exponential => DistSpec::Exponential { rate: params[0] },
            Family::Binomial => {
                let n = params[0];
                if !(n >= 0.0 && n.fract() == 0.0 && n <= u64::MAX as f64) {
                    return Err(invalid(
                        family,
                        format!("trials must be a nonnegative integer, got {n}"),
                    ));
                }
                DistSpec::Binomial {
                    trials: n as u64,
                    p: params[1],
                }
            }
            Family::LogitNormal => DistSpec::LogitNormal {
                mean: params[0],
                variance: params[1],
            },
            Family::LogNormal => DistSpec::LogNormal {
                mean: params[0],
                variance: params[1],
            },
        };
        spec.validated()
    }

    pub fn family(&self) -> Family {
        match self {
            DistSpec::Uniform { .. } => Family::Uniform,
            DistSpec::Beta { .. } => Family::Beta,
            DistSpec::Gamma { .. } => Family::Gamma,
            DistSpec::Normal { .. } => Family::Normal,
            DistSpec::Exponential { .. } => Family::Exponential,
            DistSpec::Binomial { .. } => Family::Binomial,
            DistSpec::LogitNormal { .. } => Family::LogitNormal,
            DistSpec::LogNormal { .. } => Family::LogNormal,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            DistSpec::Uniform { low, high } => vec![low, high],
            DistSpec::Beta { alpha, beta } => vec![alpha, beta],
            DistSpec::Gamma { shape, rate } => vec![shape, rate],
            DistSpec::Normal { mean, variance }
            | DistSpec::LogitNormal { mean, variance }
            | DistSpec::LogNormal { mean, variance } => vec![mean, variance],
            DistSpec::Exponential { rate } => vec![rate],
            DistSpec::Binomial { trials, p } => vec![trials as f64, p],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fam = self.family();
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(
                    fam,
                    format!("{name} must be positive and finite, got {v}"),
                ))
            }
        };
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(invalid(fam, format!("{name} must be finite, got {v}")))
            }
        };
        match *self {
            DistSpec::Uniform { low, high } => {
                finite("low", low)?;
                finite("high", high)?;
                if low >= high {
                    return Err(invalid(
                        fam,
                        format!("need low < high, got [{low}, {high}]"),
                    ));
                }
                Ok(())
            }
            DistSpec::Beta { alpha, beta } => {
                positive("alpha", alpha)?;
                positive("beta", beta)
            }
            DistSpec::Gamma { shape, rate } => {
                positive("shape", shape)?;
                positive("rate", rate)
            }
            DistSpec::Normal { mean, variance }
            | DistSpec::LogitNormal { mean, variance }
            | DistSpec::LogNormal { mean, variance } => {
                finite("mean", mean)?;
                positive("variance", variance)
            }
            DistSpec::Exponential { rate } => positive("rate", rate),
            DistSpec::Binomial { p, .. } => {
                if (0.0..=1.0).contains(&p) {
                    Ok(())
                } else {
                    Err(invalid(fam, format!("p must lie in [0, 1], got {p}")))
                }
            }
        }
    }

    fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, DistSpec::Binomial { .. })
    }

    /// Closed interval containing the support.
    pub fn support(&self) -> (f64, f64) {
        match *self {
            DistSpec::Uniform { low, high } => (low, high),
            DistSpec::Beta { .. } | DistSpec::LogitNormal { .. } => (0.0, 1.0),
            DistSpec::Gamma { .. } | DistSpec::Exponential { .. } | DistSpec::LogNormal { .. } => {
                (0.0, f64::INFINITY)
            }
            DistSpec::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            DistSpec::Binomial { trials, .. } => (0.0, trials as f64),
        }
    }

    /// Analytic mean, when the family has one in closed form.
    pub fn mean(&self) -> Option<f64> {
        Some(match *self {
            DistSpec::Uniform { low, high } => 0.5 * (low + high),
            DistSpec::Beta { alpha, beta } => alpha / (alpha + beta),
            DistSpec::Gamma { shape, rate } => shape / rate,
            DistSpec::Normal { mean, .. } => mean,
            DistSpec::Exponential { rate } => 1.0 / rate,
            DistSpec::Binomial { trials, p } => trials as f64 * p,
            DistSpec::LogNormal { mean, variance } => (mean + 0.5 * variance).exp(),
            DistSpec::LogitNormal { .. } => return None,
        })
    }

    /// Analytic variance, when the family has one in closed form.
    pub fn variance(&self) -> Option<f64> {
        Some(match *self {
            DistSpec::Uniform { low, high } => (high - low).powi(2) / 12.0,
            DistSpec::Beta { alpha, beta } => {
                let s = alpha + beta;
                alpha * beta / (s * s * (s + 1.0))
            }
            DistSpec::Gamma { shape, rate } => shape / (rate * rate),
            DistSpec::Normal { variance, .. } => variance,
            DistSpec::Exponential { rate } => 1.0 / (rate * rate),
            DistSpec::Binomial { trials, p } => trials as f64 * p * (1.0 - p),
            DistSpec::LogNormal { mean, variance } => {
                (variance.exp() - 1.0) * (2.0 * mean + variance).exp()
            }
            DistSpec::LogitNormal { .. } => return None,
        })
    }

    /// Prepared sampler for repeated draws.
    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        let err = |e: String| invalid(self.family(), e);
        Ok(match *self {
            DistSpec::Uniform { low, high } => Sampler::Uniform(
                rand_distr::Uniform::new(low, high).map_err(|e| err(e.to_string()))?,
            ),
            DistSpec::Beta { alpha, beta } => {
                Sampler::Beta(rand_distr::Beta::new(alpha, beta).map_err(|e| err(e.to_string()))?)
            }
            DistSpec::Gamma { shape, rate } => Sampler::Gamma(
                rand_distr::Gamma::new(shape, 1.0 / rate).map_err(|e| err(e.to_string()))?,
            ),
            DistSpec::Normal { mean, variance } => Sampler::Normal(
                rand_distr::Normal::new(mean, variance.sqrt()).map_err(|e| err(e.to_string()))?,
            ),
            DistSpec::Exponential { rate } => {
                Sampler::Exponential(rand_distr::Exp::new(rate).map_err(|e| err(e.to_string()))?)
            }
            DistSpec::Binomial { trials, p } => Sampler::Binomial(
                rand_distr::Binomial::new(trials, p).map_err(|e| err(e.to_string()))?,
            ),
            DistSpec::LogitNormal { mean, variance } => Sampler::LogitNormal(
                rand_distr::Normal::new(mean, variance.sqrt()).map_err(|e| err(e.to_string()))?,
            ),
            DistSpec::LogNormal { mean, variance } => Sampler::LogNormal(
                rand_distr::LogNormal::new(mean, variance.sqrt())
                    .map_err(|e| err(e.to_string()))?,
            ),
        })
    }

    /// `n` independent draws from the stream named by `seed`.
    pub fn sample(&self, n: usize, seed: SeedSpec) -> Result<Vec<f64>> {
        if n == 0 {
            return Err(Error::Domain("sample size must be at least 1".into()));
        }
        let sampler = self.sampler()?;
        let mut rng = seed.rng();
        Ok((0..n).map(|_| sampler.draw(&mut rng)).collect())
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        Ok(match *self {
            DistSpec::Uniform { low, high } => ((x - low) / (high - low)).clamp(0.0, 1.0),
            DistSpec::Beta { alpha, beta } => beta_dist(alpha, beta).cdf(x.clamp(0.0, 1.0)),
            DistSpec::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_dist(shape, rate).cdf(x)
                }
            }
            DistSpec::Normal { mean, variance } => std_normal().cdf((x - mean) / variance.sqrt()),
            DistSpec::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            DistSpec::Binomial { trials, p } => {
                if x < 0.0 {
                    0.0
                } else if x >= trials as f64 {
                    1.0
                } else {
                    binomial_dist(trials, p).cdf(x.floor() as u64)
                }
            }
            DistSpec::LogitNormal { mean, variance } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    std_normal().cdf((logit(x) - mean) / variance.sqrt())
                }
            }
            DistSpec::LogNormal { mean, variance } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal().cdf((x.ln() - mean) / variance.sqrt())
                }
            }
        })
    }

    /// Log density (continuous families) or log mass (binomial).
    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        self.validate()?;
        let (lo, hi) = self.support();
        if !(x >= lo && x <= hi) {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(match *self {
            DistSpec::Uniform { low, high } => -(high - low).ln(),
            DistSpec::Beta { alpha, beta } => beta_dist(alpha, beta).ln_pdf(x),
            DistSpec::Gamma { shape, rate } => gamma_dist(shape, rate).ln_pdf(x),
            DistSpec::Normal { mean, variance } => {
                let z = (x - mean) / variance.sqrt();
                -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI * variance).ln()
            }
            DistSpec::Exponential { rate } => rate.ln() - rate * x,
            DistSpec::Binomial { trials, p } => {
                if x.fract() != 0.0 {
                    f64::NEG_INFINITY
                } else {
                    binomial_dist(trials, p).ln_pmf(x as u64)
                }
            }
            DistSpec::LogitNormal { mean, variance } => {
                if x <= 0.0 || x >= 1.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let z = (logit(x) - mean) / variance.sqrt();
                -0.5 * z * z
                    - 0.5 * (2.0 * std::f64::consts::PI * variance).ln()
                    - (x * (1.0 - x)).ln()
            }
            DistSpec::LogNormal { mean, variance } => {
                if x <= 0.0 {
                    return Ok(f64::NEG_INFINITY);
                }
                let z = (x.ln() - mean) / variance.sqrt();
                -0.5 * z * z - 0.5 * (2.0 * std::f64::consts::PI * variance).ln() - x.ln()
            }
        })
    }

    /// Inverse CDF. Discrete families return the smallest `x` with
    /// `CDF(x) >= p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        self.validate()?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!(
                "quantile probability must lie in (0, 1), got {p}"
            )));
        }
        Ok(match *self {
            DistSpec::Uniform { low, high } => low + p * (high - low),
            DistSpec::Exponential { rate } => -(-p).ln_1p() / rate,
            DistSpec::Normal { mean, variance } => mean + variance.sqrt() * std_normal_quantile(p),
            DistSpec::LogitNormal { mean, variance } => {
                expit(mean + variance.sqrt() * std_normal_quantile(p))
            }
            DistSpec::LogNormal { mean, variance } => {
                (mean + variance.sqrt() * std_normal_quantile(p)).exp()
            }
            DistSpec::Beta { alpha, beta } => {
                let d = beta_dist(alpha, beta);
                invert_cdf(|x| d.cdf(x), |x| d.pdf(x), p, d.inverse_cdf(p), 0.0, 1.0)
            }
            DistSpec::Gamma { shape, rate } => {
                let d = gamma_dist(shape, rate);
                invert_cdf(
                    |x| d.cdf(x),
                    |x| d.pdf(x),
                    p,
                    d.inverse_cdf(p),
                    0.0,
                    f64::INFINITY,
                )
            }
            DistSpec::Binomial { trials, p: prob } => {
                let d = binomial_dist(trials, prob);
                let (mut lo, mut hi) = (0u64, trials);
                while lo < hi {
                    let mid = lo + (hi - lo) / 2;
                    if d.cdf(mid) >= p {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                lo as f64
            }
        })
    }
}

fn beta_dist(a: f64, b: f64) -> sd::Beta {
    sd::Beta::new(a, b).expect("validated beta parameters")
}

fn gamma_dist(shape: f64, rate: f64) -> sd::Gamma {
    sd::Gamma::new(shape, rate).expect("validated gamma parameters")
}

fn binomial_dist(n: u64, p: f64) -> sd::Binomial {
    sd::Binomial::new(p, n).expect("validated binomial parameters")
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    std_normal().cdf(z)
}

pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

fn std_normal_quantile(p: f64) -> f64 {
    let n = std_normal();
    invert_cdf(
        |z| n.cdf(z),
        std_normal_pdf,
        p,
        n.inverse_cdf(p),
        f64::NEG_INFINITY,
        f64::INFINITY,
    )
}

/// Safeguarded Newton-bisection on `cdf(x) = p`, starting at `guess` and
/// staying within the support `[lo, hi]`.
fn invert_cdf(
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
    p: f64,
    guess: f64,
    mut lo: f64,
    mut hi: f64,
) -> f64 {
    let mut x = if guess.is_finite() && guess >= lo && guess <= hi {
        guess
    } else if lo.is_finite() && hi.is_finite() {
        0.5 * (lo + hi)
    } else if lo.is_finite() {
        lo + 1.0
    } else if hi.is_finite() {
        hi - 1.0
    } else {
        0.0
    };
    // Make the bracket finite.
    let mut step = x.abs().max(1.0);
    if !lo.is_finite() {
        let mut l = x - step;
        while cdf(l) > p {
            step *= 2.0;
            l = x - step;
        }
        lo = l;
    }
    step = x.abs().max(1.0);
    if !hi.is_finite() {
        let mut h = x + step;
        while cdf(h) < p {
            step *= 2.0;
            h = x + step;
        }
        hi = h;
    }
    for _ in 0..300 {
        let f = cdf(x) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let mut next = x - f / d;
        if !(next.is_finite() && next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 4.0 * f64::EPSILON * x.abs().max(f64::MIN_POSITIVE)
            || hi - lo <= f64::EPSILON * x.abs()
        {
            return next;
        }
        x = next;
    }
    x
}

/// A validated distribution ready to draw from.
#[derive(Debug, Clone, Copy)]
pub enum Sampler {
    Uniform(rand_distr::Uniform<f64>),
    Beta(rand_distr::Beta<f64>),
    Gamma(rand_distr::Gamma<f64>),
    Normal(rand_distr::Normal<f64>),
    Exponential(rand_distr::Exp<f64>),
    Binomial(rand_distr::Binomial),
    LogitNormal(rand_distr::Normal<f64>),
    LogNormal(rand_distr::LogNormal<f64>),
}

impl Sampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Sampler::Uniform(d) => d.sample(rng),
            Sampler::Beta(d) => d.sample(rng),
            Sampler::Gamma(d) => d.sample(rng),
            Sampler::Normal(d) => d.sample(rng),
            Sampler::Exponential(d) => d.sample(rng),
            Sampler::Binomial(d) => d.sample(rng) as f64,
            Sampler::LogitNormal(d) => expit(d.sample(rng)),
            Sampler::LogNormal(d) => d.sample(rng),
        }
    }
}
