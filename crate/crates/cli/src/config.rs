//! Run configuration: strict JSON file, manifest and command-line flags,
//! merged in that order of increasing priority, then completed with the
//! defaults of the command.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use evsi_core::oracle::experiments::{
    AdesCrosscheck, BiasSweep, QuadratureExperiment, EXPERIMENTS,
};
use evsi_core::stats::SeedSpec;
use evsi_core::{Error, Result};
use serde::{Deserialize, Serialize};

pub const DEFAULT_S: usize = 100_000;
pub const DEFAULT_Q: usize = 30;
pub const DEFAULT_M: usize = 10_000;
pub const DEFAULT_BURN_IN: usize = 1_000;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_N_OUTER: usize = 5_000;
pub const DEFAULT_N_INNER: usize = 5_000;

/// Everything that affects numeric output. Output directory and worker
/// count are deliberately absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub design: Option<String>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(rename = "S", skip_serializing_if = "Option::is_none")]
    pub s: Option<usize>,
    #[serde(rename = "Q", skip_serializing_if = "Option::is_none")]
    pub q: Option<usize>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub focal: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_outer: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_inner: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_values: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_values: Option<Vec<u64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings: Option<bool>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $(if $top.$f.is_some() { $base.$f = $top.$f; })*
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("config {}: {e}", path.display())))
    }

    pub fn from_value(v: serde_json::Value) -> Result<Self> {
        serde_json::from_value(v).map_err(|e| Error::Config(format!("manifest config: {e}")))
    }

    /// Values set in `top` replace those in `self`; parameter overrides
    /// are merged key by key.
    pub fn overlay(mut self, top: RunConfig) -> Self {
        overlay!(self, top; model, design, n, s, q, m, burn_in, seed, focal, n_outer, n_inner,
            budget_seconds, experiment, replicates, q_values, n_values, timings);
        self.params.extend(top.params);
        self
    }

    pub fn master_seed(&self) -> SeedSpec {
        SeedSpec::from_master(self.seed.unwrap_or(DEFAULT_SEED))
    }

    pub fn model(&self) -> Result<&str> {
        self.model
            .as_deref()
            .ok_or_else(|| Error::Config("--model is required".into()))
    }

    /// Fills unset values with the defaults of `command` and checks them.
    pub fn resolve(mut self, command: &str) -> Result<Self> {
        self.seed.get_or_insert(DEFAULT_SEED);
        self.timings.get_or_insert(false);
        match command {
            "psa" | "evppi" => {
                self.model()?;
                self.s.get_or_insert(DEFAULT_S);
            }
            "evsi" => {
                self.model()?;
                self.s.get_or_insert(DEFAULT_S);
                self.q.get_or_insert(DEFAULT_Q);
                self.m.get_or_insert(DEFAULT_M);
                self.burn_in.get_or_insert(DEFAULT_BURN_IN);
            }
            "nested" => {
                self.model()?;
                self.n_outer.get_or_insert(DEFAULT_N_OUTER);
                self.n_inner.get_or_insert(DEFAULT_N_INNER);
                let inner = self.n_inner.unwrap_or(DEFAULT_N_INNER);
                self.burn_in.get_or_insert(DEFAULT_BURN_IN.min(inner / 5));
            }
            "benchmark" => self.resolve_benchmark()?,
            "selftest" => {}
            other => return Err(Error::Config(format!("unknown command `{other}`"))),
        }
        self.validate()?;
        Ok(self)
    }

    fn resolve_benchmark(&mut self) -> Result<()> {
        let name = self.experiment.clone().ok_or_else(|| {
            Error::Config(format!(
                "benchmark needs an experiment name; available: {}",
                EXPERIMENTS.join(", ")
            ))
        })?;
        let seed = self.master_seed();
        match name.as_str() {
            "table1" | "variance_convergence" => {
                let d = if name == "table1" {
                    QuadratureExperiment::table1(seed)
                } else {
                    QuadratureExperiment::variance_convergence(seed)
                };
                self.q_values.get_or_insert(d.q_values);
                self.replicates.get_or_insert(d.replicates);
                self.s.get_or_insert(d.s);
                self.m.get_or_insert(d.m);
                self.n_outer.get_or_insert(d.oracle_outer);
            }
            "beta_binomial_bias" | "exp_gamma_bias" => {
                let d = if name == "beta_binomial_bias" {
                    BiasSweep::beta_binomial(seed)
                } else {
                    BiasSweep::exp_gamma(seed)
                };
                self.n_values.get_or_insert(d.n_values);
                self.replicates.get_or_insert(d.replicates);
                self.s.get_or_insert(d.s);
            }
            "ades_crosscheck" => {
                let d = AdesCrosscheck::new(seed);
                self.s.get_or_insert(d.s);
                self.q.get_or_insert(d.q);
                self.m.get_or_insert(d.posterior.m);
                self.burn_in.get_or_insert(d.posterior.burn_in);
                self.n_outer.get_or_insert(d.n_outer);
                self.n_inner.get_or_insert(d.n_inner);
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown experiment `{other}`; available: {}",
                    EXPERIMENTS.join(", ")
                )))
            }
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let positive = [
            ("S", self.s),
            ("Q", self.q),
            ("M", self.m),
            ("n_outer", self.n_outer),
            ("n_inner", self.n_inner),
            ("replicates", self.replicates),
        ];
        for (name, v) in positive {
            if v == Some(0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if let (Some(s), Some(q)) = (self.s, self.q) {
            if q > s {
                return Err(Error::Config(format!("Q = {q} exceeds S = {s}")));
            }
        }
        if let Some(b) = self.budget_seconds {
            if !(b > 0.0 && b.is_finite()) {
                return Err(Error::Config(format!(
                    "budget_seconds must be positive, got {b}"
                )));
            }
        }
        if self
            .q_values
            .as_ref()
            .is_some_and(|v| v.is_empty() || v.contains(&0))
        {
            return Err(Error::Config(
                "q_values must be a non-empty list of positive counts".into(),
            ));
        }
        if self.n_values.as_ref().is_some_and(|v| v.is_empty()) {
            return Err(Error::Config("n_values must not be empty".into()));
        }
        Ok(())
    }
}

/// Parses `key=value` model overrides.
pub fn parse_param(s: &str) -> std::result::Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    let v: f64 = v
        .trim()
        .parse()
        .map_err(|_| format!("`{v}` is not a number"))?;
    Ok((k.trim().to_string(), v))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::from_value(serde_json::json!({"model": "ades", "Sx": 3})).unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn flags_override_file_values() {
        let file = RunConfig::from_value(
            serde_json::json!({"model": "ades", "S": 10, "params": {"qse": 1}}),
        )
        .unwrap();
        let flags = RunConfig {
            s: Some(20),
            params: BTreeMap::from([("horizon".into(), 5.0)]),
            ..Default::default()
        };
        let c = file.overlay(flags);
        assert_eq!(c.s, Some(20));
        assert_eq!(c.model.as_deref(), Some("ades"));
        assert_eq!(c.params.len(), 2);
    }

    #[test]
    fn resolution_fills_defaults_and_validates() {
        let c = RunConfig {
            model: Some("ades".into()),
            ..Default::default()
        }
        .resolve("evsi")
        .unwrap();
        assert_eq!(
            (c.s, c.q, c.m, c.burn_in),
            (Some(DEFAULT_S), Some(30), Some(10_000), Some(1_000))
        );
        let bad = RunConfig {
            model: Some("ades".into()),
            q: Some(0),
            ..Default::default()
        };
        assert!(bad.resolve("evsi").unwrap_err().is_config());
        assert!(RunConfig::default().resolve("psa").is_err());
        let b = RunConfig {
            experiment: Some("table1".into()),
            ..Default::default()
        }
        .resolve("benchmark")
        .unwrap();
        assert_eq!(b.q_values.unwrap().len(), 12);
    }

    #[test]
    fn params_parse() {
        assert_eq!(parse_param("qse=0.5").unwrap(), ("qse".into(), 0.5));
        assert!(parse_param("qse").is_err());
        assert!(parse_param("qse=x").is_err());
    }
}
