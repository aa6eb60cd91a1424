use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PsaSamples;
use crate::stats::{nearest_rank_index, summarize, SeedSpec};

/// How PSA rows were ordered before taking quantiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Ranking {
    /// Rows ordered by the single focal parameter.
    Direct,
    /// Rows ordered by their score on the first principal component of the
    /// standardized focal columns.
    FirstPrincipalComponent { loadings: Vec<f64> },
}

/// `Q` PSA rows spread evenly over the focal parameters, each with its own
/// random stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraturePlan {
    pub q: usize,
    pub focal: Vec<String>,
    pub ranking: Ranking,
    /// PSA row index of each point.
    pub rows: Vec<usize>,
    /// Full parameter vector of each point.
    pub points: Vec<Vec<f64>>,
    /// Focal parameter values of each point.
    pub phi_points: Vec<Vec<f64>>,
    pub seeds: Vec<SeedSpec>,
}

/// Picks the PSA rows at quantiles `q/(Q+1)`, `q = 1..Q`, of the focal
/// parameter (or of the first principal component score when there are
/// several focal parameters).
pub fn build_plan(
    psa: &PsaSamples,
    focal: &[String],
    q: usize,
    seed: SeedSpec,
) -> Result<QuadraturePlan> {
    if q == 0 {
        return Err(Error::Config("Q must be at least 1".into()));
    }
    let s = psa.n_draws();
    if q > s {
        return Err(Error::Config(format!("Q = {q} exceeds the {s} PSA draws")));
    }
    if focal.is_empty() {
        return Err(Error::Config("no focal parameters".into()));
    }
    let idx = focal
        .iter()
        .map(|f| psa.column_index(f))
        .collect::<Result<Vec<_>>>()?;
    let columns: Vec<Vec<f64>> = idx.iter().map(|&i| psa.column(i)).collect();
    let (scores, ranking) = if columns.len() == 1 {
        (columns[0].clone(), Ranking::Direct)
    } else {
        let loadings = first_component(&columns)?;
        let stats = columns
            .iter()
            .map(|c| summarize(c))
            .collect::<Result<Vec<_>>>()?;
        let scores = (0..s)
            .map(|r| {
                columns
                    .iter()
                    .zip(&stats)
                    .zip(&loadings)
                    .map(|((c, st), w)| w * standardize(c[r], st.mean, st.variance))
                    .sum()
            })
            .collect();
        (scores, Ranking::FirstPrincipalComponent { loadings })
    };
    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut rows = Vec::with_capacity(q);
    for k in 1..=q {
        rows.push(order[nearest_rank_index(s, k as f64 / (q + 1) as f64)?]);
    }
    Ok(QuadraturePlan {
        q,
        focal: focal.to_vec(),
        ranking,
        points: rows.iter().map(|&r| psa.row(r).to_vec()).collect(),
        phi_points: rows
            .iter()
            .map(|&r| idx.iter().map(|&i| psa.row(r)[i]).collect())
            .collect(),
        seeds: (0..q as u64).map(|k| seed.derive(k)).collect(),
        rows,
    })
}

fn standardize(x: f64, mean: f64, variance: f64) -> f64 {
    if variance > 0.0 {
        (x - mean) / variance.sqrt()
    } else {
        0.0
    }
}

/// Leading eigenvector of the correlation matrix, with its largest
/// loading made positive.
fn first_component(columns: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = columns.len();
    let n = columns[0].len();
    let stats = columns
        .iter()
        .map(|c| summarize(c))
        .collect::<Result<Vec<_>>>()?;
    let mut corr = DMatrix::<f64>::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            let v = (0..n)
                .map(|r| {
                    standardize(columns[a][r], stats[a].mean, stats[a].variance)
                        * standardize(columns[b][r], stats[b].mean, stats[b].variance)
                })
                .sum::<f64>()
                / (n - 1) as f64;
            corr[(a, b)] = v;
            corr[(b, a)] = v;
        }
    }
    let eig = SymmetricEigen::new(corr);
    let top = eig.eigenvalues.imax();
    let mut w: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let lead = (0..d)
        .max_by(|&i, &j| w[i].abs().total_cmp(&w[j].abs()).then(j.cmp(&i)))
        .unwrap_or(0);
    if w[lead] < 0.0 {
        w.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn psa_from(cols: &[Vec<f64>], names: &[&str]) -> PsaSamples {
        let n = cols[0].len();
        let mut draws = Vec::with_capacity(n * cols.len());
        for r in 0..n {
            for c in cols {
                draws.push(c[r]);
            }
        }
        PsaSamples::new(
            names.iter().map(|s| s.to_string()).collect(),
            draws,
            SeedSpec::from_master(0),
        )
        .unwrap()
    }

    #[test]
    fn uniform_grid_quantiles() {
        let col: Vec<f64> = (1..=1000).rev().map(|i| i as f64 / 1000.0).collect();
        let psa = psa_from(&[col], &["x"]);
        let plan = build_plan(&psa, &["x".into()], 3, SeedSpec::from_master(1)).unwrap();
        let got: Vec<f64> = plan.phi_points.iter().map(|p| p[0]).collect();
        assert_eq!(got, vec![0.25, 0.5, 0.75]);
        let one = build_plan(&psa, &["x".into()], 1, SeedSpec::from_master(1)).unwrap();
        assert_eq!(one.phi_points, vec![vec![0.5]]);
    }

    #[test]
    fn invalid_requests() {
        let psa = psa_from(&[vec![1.0, 2.0, 3.0]], &["x"]);
        assert!(build_plan(&psa, &["x".into()], 0, SeedSpec::from_master(1)).is_err());
        assert!(build_plan(&psa, &["x".into()], 4, SeedSpec::from_master(1)).is_err());
        assert!(build_plan(&psa, &["y".into()], 2, SeedSpec::from_master(1)).is_err());
    }

    #[test]
    fn points_are_psa_rows_and_sorted() {
        let a: Vec<f64> = (0..500).map(|i| ((i * 37) % 500) as f64).collect();
        let b: Vec<f64> = a
            .iter()
            .map(|v| 2.0 * v + ((*v as usize % 7) as f64))
            .collect();
        let psa = psa_from(&[a, b], &["a", "b"]);
        let plan = build_plan(
            &psa,
            &["a".into(), "b".into()],
            30,
            SeedSpec::from_master(2),
        )
        .unwrap();
        for (k, &r) in plan.rows.iter().enumerate() {
            assert_eq!(plan.points[k], psa.row(r));
        }
        // Strongly correlated columns: the component score orders both.
        assert!(plan.phi_points.windows(2).all(|w| w[0][0] <= w[1][0]));
        match &plan.ranking {
            Ranking::FirstPrincipalComponent { loadings } => {
                assert!(loadings.iter().all(|&w| w > 0.0))
            }
            r => panic!("{r:?}"),
        }
        assert_eq!(plan.seeds.len(), 30);
        assert_ne!(plan.seeds[0], plan.seeds[1]);
    }
}
