//! File formats: CSV tables with fixed headers and `\n` line endings, JSON
//! with sorted keys, and the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{net_benefit_table, DecisionModel, PsaSamples};
use crate::oracle::experiments::{BenchRow, RowSummary};
use crate::preposterior::PointResult;
use crate::stats::SeedSpec;

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

/// Shortest representation that parses back to the same value.
fn num(v: f64) -> String {
    format!("{v}")
}

/// PSA table: one column per parameter, then `NB1..NBT` and `INB`.
pub fn write_psa_csv<W: Write>(out: W, model: &DecisionModel, psa: &PsaSamples) -> Result<()> {
    let t = model.n_treatments();
    let nb = net_benefit_table(model, psa)?;
    let (r, s) = model.comparison();
    let mut w = writer(out);
    let mut header: Vec<String> = psa.names().to_vec();
    header.extend((1..=t).map(|i| format!("NB{i}")));
    header.push("INB".into());
    w.write_record(&header)?;
    for (i, row) in psa.rows().enumerate() {
        let nbs = &nb[i * t..(i + 1) * t];
        let mut rec: Vec<String> = row.iter().map(|&v| num(v)).collect();
        rec.extend(nbs.iter().map(|&v| num(v)));
        rec.push(num(nbs[r] - nbs[s]));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-point table: `q`, focal values, dataset summary, posterior INB
/// variance and Metropolis acceptance rate (empty for conjugate updates).
pub fn write_points_csv<W: Write>(out: W, focal: &[String], points: &[PointResult]) -> Result<()> {
    let mut w = writer(out);
    let mut header = vec!["q".to_string()];
    header.extend(focal.iter().cloned());
    if let Some(p) = points.first() {
        header.extend(p.dataset.summary_names().iter().map(|s| s.to_string()));
    }
    header.push("posterior_variance".into());
    header.push("acceptance_rate".into());
    w.write_record(&header)?;
    for p in points {
        let mut rec = vec![p.q.to_string()];
        rec.extend(p.phi.iter().map(|&v| num(v)));
        rec.extend(p.dataset.summary().into_iter().map(num));
        rec.push(num(p.posterior_variance));
        rec.push(p.acceptance_rate.map(num).unwrap_or_default());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub const BENCH_HEADER: [&str; 7] = [
    "experiment",
    "parameter",
    "replicate",
    "estimate",
    "oracle",
    "se",
    "wall_time",
];

/// Benchmark table. `wall_time` is left empty unless `timings` is set, so
/// reruns produce identical bytes.
pub fn write_bench_csv<W: Write>(out: W, rows: &[BenchRow], timings: bool) -> Result<()> {
    let mut w = writer(out);
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        let time = match (timings, r.wall_time) {
            (true, Some(t)) => num(t),
            _ => String::new(),
        };
        w.write_record([
            r.experiment.clone(),
            r.parameter.clone(),
            r.replicate.to_string(),
            num(r.estimate),
            num(r.oracle),
            num(r.se),
            time,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 7] = [
    "experiment",
    "parameter",
    "replicates",
    "mean_estimate",
    "sd_estimate",
    "oracle",
    "relative_bias",
];

/// Per-parameter replicate statistics of a benchmark.
pub fn write_summary_csv<W: Write>(out: W, experiment: &str, rows: &[RowSummary]) -> Result<()> {
    let mut w = writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for r in rows {
        w.write_record([
            experiment.to_string(),
            r.parameter.clone(),
            r.replicates.to_string(),
            num(r.mean_estimate),
            num(r.sd_estimate),
            num(r.oracle),
            num(r.relative_bias),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with object keys sorted, newline-terminated.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    // `Value` objects are ordered maps, which sorts the keys.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, to_sorted_json(value)?)?;
    Ok(())
}

pub const MANIFEST_FILE: &str = "manifest.json";

/// Written to every output directory; holds what is needed to rerun.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    /// Fully resolved configuration of the command.
    pub config: serde_json::Value,
    /// Streams derived from the master seed, by use.
    pub seeds: BTreeMap<String, SeedSpec>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(
        command: &str,
        config: serde_json::Value,
        seeds: BTreeMap<String, SeedSpec>,
        outputs: Vec<String>,
    ) -> Self {
        Self {
            tool: "evsi".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seeds,
            outputs,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST_FILE), self)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let path = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
