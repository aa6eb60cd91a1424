//! Fast consistency suite over every built-in model and design.

use serde::{Deserialize, Serialize};

use super::{
    enumeration_evsi, exact_evsi, nested_mc_evsi, regression_on_summaries_evsi, NestedOptions,
};
use crate::cases::{build_case, ConjugateToy, MODEL_NAMES};
use crate::error::Result;
use crate::model::run_psa;
use crate::moment_match::{estimate_evsi, MomentMatchOptions, MomentMatchResult};
use crate::stats::{summarize, SeedSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// Everything needed to rerun one selftest estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Rerun {
    model: String,
    design: String,
    #[serde(rename = "S")]
    s: usize,
    psa_seed: SeedSpec,
    options: MomentMatchOptions,
}

impl Rerun {
    fn run(&self) -> Result<MomentMatchResult> {
        let case = build_case(&self.model, &Default::default())?;
        let design = case.design(Some(&self.design))?;
        let psa = run_psa(&case.model, self.s, self.psa_seed)?;
        estimate_evsi(&case.model, design, &psa, &self.options)
    }
}

fn structural_checks(label: &str, r: &MomentMatchResult) -> Vec<Check> {
    let mut out = Vec::new();
    let ordered_low = r.evsi >= 0.0;
    out.push(Check::new(
        format!("{label}: EVSI >= 0"),
        ordered_low,
        format!("EVSI = {}", r.evsi),
    ));
    let se = r.standard_error.hypot(r.evppi_standard_error);
    out.push(Check::new(
        format!("{label}: EVSI <= EVPPI"),
        r.evsi <= r.evppi + 3.0 * se,
        format!(
            "EVSI = {}, EVPPI = {}, 3 SE = {}",
            r.evsi,
            r.evppi,
            3.0 * se
        ),
    ));
    let se = r.evppi_standard_error.hypot(r.evpi_standard_error);
    out.push(Check::new(
        format!("{label}: EVPPI <= EVPI"),
        r.evppi <= r.evpi + 3.0 * se,
        format!(
            "EVPPI = {}, EVPI = {}, 3 SE = {}",
            r.evppi,
            r.evpi,
            3.0 * se
        ),
    ));
    out.push(Check::new(
        format!("{label}: a in [0, 1]"),
        r.a_clamped || (0.0..=1.0).contains(&r.a),
        format!("a = {}, clamped = {}", r.a, r.a_clamped),
    ));
    match summarize(&r.rescaled) {
        Ok(s) => {
            let scale = r.mean_inb.abs().max(r.prior_variance.sqrt());
            let mean_ok = (s.mean - r.mean_inb).abs() <= 1e-6 * scale;
            out.push(Check::new(
                format!("{label}: rescaled mean"),
                mean_ok,
                format!("{} vs {}", s.mean, r.mean_inb),
            ));
            let target = if r.a_clamped { r.var_inb_phi } else { r.sigma2 };
            let var_ok = (s.variance - target).abs() <= 1e-6 * target.max(1e-12 * r.prior_variance);
            out.push(Check::new(
                format!("{label}: rescaled variance"),
                var_ok,
                format!("{} vs {target}", s.variance),
            ));
        }
        Err(e) => out.push(Check::new(
            format!("{label}: rescaled moments"),
            false,
            e.to_string(),
        )),
    }
    out
}

fn try_check(name: &str, f: impl FnOnce() -> Result<Vec<Check>>) -> Vec<Check> {
    f().unwrap_or_else(|e| vec![Check::new(name, false, format!("error: {e}"))])
}

/// Structural invariants on every registered model and design, bit-identical
/// reruns from a serialized configuration, and quick oracle comparisons.
pub fn run_selftest(seed: SeedSpec) -> Vec<Check> {
    let mut checks = Vec::new();
    let mut k = 0u64;
    for model in MODEL_NAMES {
        let case = match build_case(model, &Default::default()) {
            Ok(c) => c,
            Err(e) => {
                checks.push(Check::new(model, false, e.to_string()));
                continue;
            }
        };
        for design in &case.designs {
            let label = format!("{model}/{}", design.name);
            k += 1;
            let rerun = Rerun {
                model: model.to_string(),
                design: design.name.clone(),
                s: 100_000,
                psa_seed: seed.derive(k).derive(0),
                options: MomentMatchOptions {
                    seed: seed.derive(k).derive(1),
                    ..Default::default()
                },
            };
            checks.extend(try_check(&label, || {
                let first = rerun.run()?;
                let mut out = structural_checks(&label, &first);
                let text = serde_json::to_string(&rerun)?;
                let again: Rerun = serde_json::from_str(&text)?;
                let second = again.run()?;
                out.push(Check::new(
                    format!("{label}: rerun is bit-identical"),
                    serde_json::to_string(&first.to_json())?
                        == serde_json::to_string(&second.to_json())?,
                    "JSON of two runs from the same configuration",
                ));
                Ok(out)
            }));
        }
    }
    checks.extend(try_check("normal_normal closed form", || {
        let toy = ConjugateToy::normal_normal(9);
        let psa = run_psa(&toy.model()?, 100_000, seed.derive(100))?;
        let opts = MomentMatchOptions {
            q: 10,
            seed: seed.derive(101),
            ..Default::default()
        };
        let r = estimate_evsi(&toy.model()?, &toy.design(), &psa, &opts)?;
        let exact = exact_evsi(&toy)?.evsi;
        let tol = (0.01 * exact).max(3.0 * r.standard_error);
        Ok(vec![Check::new(
            "normal_normal N=9: moment matching vs closed form",
            (r.evsi - exact).abs() <= tol,
            format!("{} vs {exact} (tolerance {tol})", r.evsi),
        )])
    }));
    checks.extend(try_check("beta_binomial nested oracle", || {
        let toy = ConjugateToy::beta_binomial(10);
        let exact = enumeration_evsi(&toy)?.evsi;
        let r = nested_mc_evsi(
            &toy.model()?,
            &toy.design(),
            &NestedOptions::new(100_000, 100, seed.derive(102)),
        )?;
        Ok(vec![Check::new(
            "beta_binomial N=10: nested vs enumeration",
            (r.evsi - exact).abs() <= 3.0 * r.standard_error,
            format!("{} vs {exact} (SE {})", r.evsi, r.standard_error),
        )])
    }));
    checks.extend(try_check("beta_binomial summaries", || {
        let toy = ConjugateToy::beta_binomial(50);
        let model = toy.model()?;
        let psa = run_psa(&model, 100_000, seed.derive(103))?;
        let r = regression_on_summaries_evsi(
            &model,
            &toy.design(),
            &psa,
            seed.derive(104),
            &Default::default(),
        )?;
        let exact = enumeration_evsi(&toy)?.evsi;
        Ok(vec![Check::new(
            "beta_binomial N=50: regression on summaries vs enumeration",
            (r.evsi - exact).abs() <= 0.02 * exact,
            format!("{} vs {exact}", r.evsi),
        )])
    }));
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structural_checks_flag_violations() {
        let toy = ConjugateToy::normal_normal(9);
        let psa = run_psa(&toy.model().unwrap(), 5_000, SeedSpec::from_master(1)).unwrap();
        let mut r = estimate_evsi(
            &toy.model().unwrap(),
            &toy.design(),
            &psa,
            &MomentMatchOptions::default(),
        )
        .unwrap();
        assert!(structural_checks("nn", &r).iter().all(|c| c.passed));
        r.evsi = r.evpi * 2.0;
        r.a = 1.5;
        let failed: Vec<String> = structural_checks("nn", &r)
            .into_iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect();
        assert_eq!(failed, vec!["nn: EVSI <= EVPPI", "nn: a in [0, 1]"]);
    }
}
