//! Decision models, PSA sampling and incremental net benefit.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{summarize, DistSpec, SeedSpec};

/// Upper bound on the number of treatments a model may compare.
pub const MAX_TREATMENTS: usize = 8;

const PSA_CHUNK: usize = 8192;

/// Deterministic map from one parameter draw to per-treatment net benefits.
pub trait NetBenefit: Send + Sync {
    fn n_treatments(&self) -> usize;

    /// Writes `NB_t(theta)` for every treatment into `out`.
    fn evaluate(&self, theta: &[f64], out: &mut [f64]);
}

impl<F> NetBenefit for (usize, F)
where
    F: Fn(&[f64], &mut [f64]) + Send + Sync,
{
    fn n_treatments(&self) -> usize {
        self.0
    }

    fn evaluate(&self, theta: &[f64], out: &mut [f64]) {
        (self.1)(theta, out)
    }
}

/// A named model input with its PSA prior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub prior: DistSpec,
}

impl Parameter {
    pub fn new(name: impl Into<String>, prior: DistSpec) -> Self {
        Self {
            name: name.into(),
            prior,
        }
    }
}

/// Independent parameter priors plus a net-benefit function.
///
/// The incremental net benefit is `NB_r - NB_s` for the ordered
/// `comparison = (r, s)`, zero-based; the built-in models orient it as new
/// treatment minus comparator.
#[derive(Clone)]
pub struct DecisionModel {
    name: String,
    params: Vec<Parameter>,
    net_benefit: Arc<dyn NetBenefit>,
    comparison: (usize, usize),
    inb_polynomial: Option<[f64; 3]>,
}

impl fmt::Debug for DecisionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecisionModel")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("n_treatments", &self.n_treatments())
            .field("comparison", &self.comparison)
            .finish()
    }
}

impl DecisionModel {
    pub fn new(
        name: impl Into<String>,
        params: Vec<Parameter>,
        net_benefit: Arc<dyn NetBenefit>,
        comparison: (usize, usize),
    ) -> Result<Self> {
        let name = name.into();
        if params.is_empty() {
            return Err(Error::Config(format!("model `{name}` has no parameters")));
        }
        for (i, p) in params.iter().enumerate() {
            p.prior.validate()?;
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Config(format!(
                    "duplicate parameter name `{}`",
                    p.name
                )));
            }
        }
        let t = net_benefit.n_treatments();
        if !(2..=MAX_TREATMENTS).contains(&t) {
            return Err(Error::Config(format!(
                "model `{name}` must compare between 2 and {MAX_TREATMENTS} treatments, got {t}"
            )));
        }
        let (r, s) = comparison;
        if r >= t || s >= t || r == s {
            return Err(Error::Config(format!(
                "comparison ({r}, {s}) must name two distinct treatments below {t}"
            )));
        }
        Ok(Self {
            name,
            params,
            net_benefit,
            comparison,
            inb_polynomial: None,
        })
    }

    /// Declares `INB = c0 + c1*x + c2*x^2` for a single-parameter model,
    /// which lets oracles compute posterior means of INB exactly.
    pub fn with_inb_polynomial(mut self, coefficients: [f64; 3]) -> Result<Self> {
        if self.params.len() != 1 {
            return Err(Error::Config(
                "an INB polynomial needs a single-parameter model".into(),
            ));
        }
        self.inb_polynomial = Some(coefficients);
        Ok(self)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn param_names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| {
                Error::Schema(format!(
                    "model `{}` has no parameter `{name}` (parameters: {})",
                    self.name,
                    self.param_names().join(", ")
                ))
            })
    }

    pub fn n_treatments(&self) -> usize {
        self.net_benefit.n_treatments()
    }

    pub fn comparison(&self) -> (usize, usize) {
        self.comparison
    }

    pub fn inb_polynomial(&self) -> Option<[f64; 3]> {
        self.inb_polynomial
    }

    pub fn net_benefits(&self, theta: &[f64], out: &mut [f64]) {
        self.net_benefit.evaluate(theta, out)
    }

    pub fn inb(&self, theta: &[f64]) -> f64 {
        let mut buf = [0.0; MAX_TREATMENTS];
        let t = self.n_treatments();
        self.net_benefit.evaluate(theta, &mut buf[..t]);
        buf[self.comparison.0] - buf[self.comparison.1]
    }
}

/// PSA draws: an `S x P` row-major matrix with named columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsaSamples {
    names: Vec<String>,
    draws: Vec<f64>,
    seed: SeedSpec,
}

impl PsaSamples {
    pub fn new(names: Vec<String>, draws: Vec<f64>, seed: SeedSpec) -> Result<Self> {
        let p = names.len();
        if p == 0 || draws.len() % p != 0 {
            return Err(Error::Schema(format!(
                "{} values do not fill rows of {p} columns",
                draws.len()
            )));
        }
        if draws.len() / p < 2 {
            return Err(Error::InsufficientData("PSA needs at least 2 draws".into()));
        }
        Ok(Self { names, draws, seed })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn seed(&self) -> SeedSpec {
        self.seed
    }

    pub fn n_draws(&self) -> usize {
        self.draws.len() / self.names.len()
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.names.len();
        &self.draws[i * p..(i + 1) * p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.names.len())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Schema(format!("PSA has no column `{name}`")))
    }

    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.rows().map(|r| r[idx]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Result<Vec<f64>> {
        Ok(self.column(self.column_index(name)?))
    }
}

/// Per-draw incremental net benefit, with the optional conditional
/// expectation `INB^phi = E[INB | phi]` once a regression has been fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InbSamples {
    pub inb_theta: Vec<f64>,
    inb_phi: Option<Vec<f64>>,
    pub source_seed: SeedSpec,
}

impl InbSamples {
    pub fn new(inb_theta: Vec<f64>, source_seed: SeedSpec) -> Self {
        Self {
            inb_theta,
            inb_phi: None,
            source_seed,
        }
    }

    pub fn inb_phi(&self) -> Option<&[f64]> {
        self.inb_phi.as_deref()
    }

    /// `INB^phi` if present, otherwise `INB^theta` (no nuisance parameters).
    pub fn phi_or_theta(&self) -> &[f64] {
        self.inb_phi.as_deref().unwrap_or(&self.inb_theta)
    }

    /// Stores fitted conditional means after checking they preserve the mean
    /// and do not inflate the variance of `INB^theta`.
    pub fn set_inb_phi(&mut self, fitted: Vec<f64>) -> Result<()> {
        if fitted.len() != self.inb_theta.len() {
            return Err(Error::Schema(format!(
                "fitted length {} differs from INB length {}",
                fitted.len(),
                self.inb_theta.len()
            )));
        }
        let theta = summarize(&self.inb_theta)?;
        let phi = summarize(&fitted)?;
        if (phi.mean - theta.mean).abs() > 1e-6 * (1.0 + theta.mean.abs()) {
            return Err(Error::DegenerateModel(format!(
                "conditional means have mean {} but INB has mean {}",
                phi.mean, theta.mean
            )));
        }
        if phi.variance > theta.variance * (1.0 + 1e-6) {
            return Err(Error::DegenerateModel(format!(
                "conditional-mean variance {} exceeds INB variance {}",
                phi.variance, theta.variance
            )));
        }
        self.inb_phi = Some(fitted);
        Ok(())
    }

    pub fn clear_inb_phi(&mut self) {
        self.inb_phi = None;
    }
}

/// `S` independent joint draws from the model's (mutually independent)
/// priors. Each column is generated in fixed-size chunks with their own
/// derived streams, so the result does not depend on the thread count.
pub fn run_psa(model: &DecisionModel, s: usize, seed: SeedSpec) -> Result<PsaSamples> {
    if s < 2 {
        return Err(Error::InsufficientData(format!(
            "PSA needs S >= 2, got {s}"
        )));
    }
    let p = model.params().len();
    let n_chunks = s.div_ceil(PSA_CHUNK);
    let samplers = model
        .params()
        .iter()
        .map(|par| par.prior.sampler())
        .collect::<Result<Vec<_>>>()?;
    let chunks: Vec<Vec<f64>> = (0..p * n_chunks)
        .into_par_iter()
        .map(|job| {
            let (j, c) = (job / n_chunks, job % n_chunks);
            let len = PSA_CHUNK.min(s - c * PSA_CHUNK);
            let mut rng = seed.derive(j as u64).derive(c as u64).rng();
            (0..len).map(|_| samplers[j].draw(&mut rng)).collect()
        })
        .collect();
    let mut draws = vec![0.0; s * p];
    for (job, chunk) in chunks.iter().enumerate() {
        let (j, c) = (job / n_chunks, job % n_chunks);
        for (k, &v) in chunk.iter().enumerate() {
            draws[(c * PSA_CHUNK + k) * p + j] = v;
        }
    }
    PsaSamples::new(model.param_names(), draws, seed)
}

fn check_schema(model: &DecisionModel, psa: &PsaSamples) -> Result<()> {
    let expected = model.param_names();
    if psa.names() != expected.as_slice() {
        return Err(Error::Schema(format!(
            "PSA columns [{}] do not match model parameters [{}]",
            psa.names().join(", "),
            expected.join(", ")
        )));
    }
    Ok(())
}

/// `INB^theta` for every PSA draw.
pub fn compute_inb(model: &DecisionModel, psa: &PsaSamples) -> Result<InbSamples> {
    check_schema(model, psa)?;
    let p = psa.n_params();
    let inb: Vec<f64> = psa
        .draws
        .par_chunks_exact(p)
        .map(|row| model.inb(row))
        .collect();
    if let Some(i) = inb.iter().position(|v| !v.is_finite()) {
        return Err(Error::DegenerateModel(format!(
            "non-finite INB at draw {i} ({:?})",
            psa.row(i)
        )));
    }
    Ok(InbSamples::new(inb, psa.seed()))
}

/// `S x T` row-major table of net benefits.
pub fn net_benefit_table(model: &DecisionModel, psa: &PsaSamples) -> Result<Vec<f64>> {
    check_schema(model, psa)?;
    let t = model.n_treatments();
    let mut out = vec![0.0; psa.n_draws() * t];
    out.par_chunks_exact_mut(t)
        .zip(psa.draws.par_chunks_exact(psa.n_params()))
        .for_each(|(o, row)| model.net_benefits(row, o));
    Ok(out)
}

/// Value of deciding after the uncertainty in `values` resolves:
/// `mean(max(0, v)) - max(0, mean(v))`, floored at zero against roundoff.
pub fn decision_gain(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let (pos, all) = values
        .iter()
        .fold((0.0, 0.0), |(p, a), &v| (p + v.max(0.0), a + v));
    (pos / n - (all / n).max(0.0)).max(0.0)
}

/// Expected value of perfect information from INB draws.
pub fn evpi(inb: &InbSamples) -> Result<f64> {
    if inb.inb_theta.is_empty() {
        return Err(Error::Domain("EVPI of an empty INB sample".into()));
    }
    Ok(decision_gain(&inb.inb_theta))
}

/// Standard error of [`decision_gain`] as a sample mean.
pub fn decision_gain_se(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let positive_mean = values.iter().sum::<f64>() / n as f64 > 0.0;
    let terms: Vec<f64> = values
        .iter()
        .map(|&v| v.max(0.0) - if positive_mean { v } else { 0.0 })
        .collect();
    summarize(&terms)
        .map(|s| (s.variance / n as f64).sqrt())
        .unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_model(k: f64, c: f64) -> DecisionModel {
        let nb = move |th: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = k * th[0] - c;
        };
        DecisionModel::new(
            "linear",
            vec![Parameter::new(
                "theta",
                DistSpec::uniform(0.0, 1.0).unwrap(),
            )],
            Arc::new((2, nb)),
            (1, 0),
        )
        .unwrap()
    }

    #[test]
    fn psa_shape_and_support() {
        let m = linear_model(1.0, 0.0);
        let psa = run_psa(&m, 3, SeedSpec::from_master(1)).unwrap();
        assert_eq!((psa.n_draws(), psa.n_params()), (3, 1));
        assert!(psa.rows().all(|r| (0.0..=1.0).contains(&r[0])));
        assert!(run_psa(&m, 1, SeedSpec::from_master(1)).is_err());
    }

    #[test]
    fn degenerate_prior_gives_zero_column() {
        let nb = |th: &[f64], out: &mut [f64]| {
            out[0] = 0.0;
            out[1] = th[0];
        };
        let m = DecisionModel::new(
            "deg",
            vec![Parameter::new("x", DistSpec::binomial(0, 0.5).unwrap())],
            Arc::new((2, nb)),
            (1, 0),
        )
        .unwrap();
        let psa = run_psa(&m, 100, SeedSpec::from_master(3)).unwrap();
        assert!(psa.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psa_is_reproducible_and_chunk_stable() {
        let m = linear_model(1.0, 0.0);
        let a = run_psa(&m, 20_000, SeedSpec::from_master(5)).unwrap();
        let b = run_psa(&m, 20_000, SeedSpec::from_master(5)).unwrap();
        assert_eq!(a, b);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let c = pool.install(|| run_psa(&m, 20_000, SeedSpec::from_master(5)).unwrap());
        assert_eq!(a, c);
        // A shorter run is a prefix of a longer one.
        let d = run_psa(&m, 9_000, SeedSpec::from_master(5)).unwrap();
        assert_eq!(d.column(0)[..], a.column(0)[..9_000]);
    }

    #[test]
    fn inb_at_break_even_is_zero() {
        let m = linear_model(20_000.0, 10_000.0);
        assert_eq!(m.inb(&[0.5]), 0.0);
    }

    #[test]
    fn compute_inb_rejects_column_mismatch() {
        let m = linear_model(1.0, 0.0);
        let psa = PsaSamples::new(
            vec!["other".into()],
            vec![0.1, 0.2],
            SeedSpec::from_master(0),
        )
        .unwrap();
        assert!(matches!(compute_inb(&m, &psa), Err(Error::Schema(_))));
    }

    #[test]
    fn compute_inb_commutes_with_row_permutation() {
        let m = linear_model(3.0, 1.0);
        let psa = run_psa(&m, 50, SeedSpec::from_master(8)).unwrap();
        let inb = compute_inb(&m, &psa).unwrap();
        let perm: Vec<usize> = (0..50).rev().collect();
        let permuted: Vec<f64> = perm.iter().map(|&i| psa.row(i)[0]).collect();
        let psa2 = PsaSamples::new(psa.names().to_vec(), permuted, psa.seed()).unwrap();
        let inb2 = compute_inb(&m, &psa2).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            assert_eq!(inb2.inb_theta[k], inb.inb_theta[i]);
        }
    }

    #[test]
    fn evpi_examples() {
        let s = SeedSpec::from_master(0);
        assert_eq!(evpi(&InbSamples::new(vec![5.0; 10], s)).unwrap(), 0.0);
        assert_eq!(evpi(&InbSamples::new(vec![-1.0, 1.0], s)).unwrap(), 0.5);
        assert!(evpi(&InbSamples::new(vec![], s)).is_err());
        assert_eq!(
            evpi(&InbSamples::new(vec![-3.0, -0.5, -1.0], s)).unwrap(),
            0.0
        );
    }

    #[test]
    fn evpi_of_uniform_linear_model() {
        // E[max(0, k*theta - c)] with k = 2c and theta ~ U(0,1) is k/8.
        let m = linear_model(20_000.0, 10_000.0);
        let psa = run_psa(&m, 1_000_000, SeedSpec::from_master(11)).unwrap();
        let inb = compute_inb(&m, &psa).unwrap();
        let v = evpi(&inb).unwrap();
        let se = decision_gain_se(&inb.inb_theta);
        assert!((v - 2500.0).abs() < 3.0 * se, "evpi {v} se {se}");
    }

    #[test]
    fn set_inb_phi_enforces_invariants() {
        let mut inb = InbSamples::new(vec![-2.0, 0.0, 2.0, 4.0], SeedSpec::from_master(0));
        assert!(inb.set_inb_phi(vec![1.0, 1.0, 1.0]).is_err());
        assert!(inb.set_inb_phi(vec![0.0, 1.0, 1.0, 1.0]).is_err());
        assert!(inb.set_inb_phi(vec![-10.0, 0.0, 2.0, 12.0]).is_err());
        inb.set_inb_phi(vec![0.0, 0.5, 1.5, 2.0]).unwrap();
        assert_eq!(inb.phi_or_theta(), &[0.0, 0.5, 1.5, 2.0]);
    }
}
