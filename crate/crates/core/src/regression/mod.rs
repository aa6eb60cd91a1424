//! Conditional expectations of INB by penalized spline regression, and EVPPI.
//!
//! One focal parameter uses a cubic B-spline basis; two or three use the
//! tensor product of smaller marginal bases. Roughness is controlled by a
//! difference penalty on adjacent coefficients with a single weight chosen
//! by generalized cross-validation (GCV).

pub mod bspline;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{decision_gain, InbSamples, PsaSamples};
use crate::stats::mean;
pub use bspline::BSplineBasis;

const ROW_CHUNK: usize = 16_384;
const PIVOT_TOL: f64 = 1e-10;

/// Basis sizes for the regression.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegressionOptions {
    /// Basis functions for a single focal parameter.
    pub basis_1d: usize,
    /// Basis functions per margin of a tensor product.
    pub basis_per_margin: usize,
}

impl Default for RegressionOptions {
    fn default() -> Self {
        Self {
            basis_1d: 10,
            basis_per_margin: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    PolynomialSpline,
    TensorProductSpline,
}

/// Marginal basis of one regressor, for diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Margin {
    pub name: String,
    pub degree: usize,
    pub n_basis: usize,
    pub interior_knots: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub basis: BasisKind,
    pub margins: Vec<Margin>,
    pub penalty_weight: f64,
    pub effective_df: f64,
    pub gcv: f64,
    pub r_squared: f64,
    #[serde(skip)]
    pub fitted: Vec<f64>,
}

impl RegressionFit {
    /// Diagnostics without the fitted values.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("fit diagnostics serialize")
    }
}

struct Design {
    margins: Vec<BSplineBasis>,
    n_cols: usize,
}

impl Design {
    /// Nonzero design-matrix entries of one row, as `(column, value)`.
    fn row(&self, x: &[f64], cols: &mut Vec<usize>, vals: &mut Vec<f64>) {
        cols.clear();
        vals.clear();
        let mut bufs = [[0.0; 4]; 3];
        let mut firsts = [0usize; 3];
        let mut widths = [1usize; 3];
        for (m, basis) in self.margins.iter().enumerate() {
            firsts[m] = basis.eval(x[m], &mut bufs[m]);
            widths[m] = basis.degree + 1;
        }
        let total: usize = widths.iter().product();
        for combo in 0..total {
            let (mut rest, mut col, mut val) = (combo, 0, 1.0);
            for (m, basis) in self.margins.iter().enumerate() {
                let a = rest % widths[m];
                rest /= widths[m];
                col = col * basis.n_basis + firsts[m] + a;
                val *= bufs[m][a];
            }
            cols.push(col);
            vals.push(val);
        }
    }

    fn column_names(&self, names: &[String]) -> Vec<String> {
        (0..self.n_cols)
            .map(|mut c| {
                let mut parts = Vec::with_capacity(self.margins.len());
                for (m, b) in self.margins.iter().enumerate().rev() {
                    parts.push(format!("{}:b{}", names[m], c % b.n_basis + 1));
                    c /= b.n_basis;
                }
                parts.reverse();
                parts.join("*")
            })
            .collect()
    }

    fn penalty(&self) -> DMatrix<f64> {
        let eye = |k: usize| DMatrix::<f64>::identity(k, k);
        let mut total = DMatrix::<f64>::zeros(self.n_cols, self.n_cols);
        for m in 0..self.margins.len() {
            let mut term = DMatrix::<f64>::identity(1, 1);
            for (j, b) in self.margins.iter().enumerate() {
                let factor = if j == m {
                    b.difference_penalty()
                } else {
                    eye(b.n_basis)
                };
                term = term.kronecker(&factor);
            }
            total += term;
        }
        total
    }
}

/// Lower Cholesky factor of a symmetric positive semi-definite matrix,
/// listing every column whose pivot is negligible.
fn cholesky_checked(a: &DMatrix<f64>) -> std::result::Result<DMatrix<f64>, Vec<usize>> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut deficient = Vec::new();
    for j in 0..n {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if d <= PIVOT_TOL * scale {
            deficient.push(j);
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / ljj;
        }
    }
    if deficient.is_empty() {
        Ok(l)
    } else {
        Err(deficient)
    }
}

/// GCV criterion pieces for a given penalty weight.
struct Spectrum {
    eig: Vec<f64>,
    f: Vec<f64>,
    rss0: f64,
    n: f64,
}

impl Spectrum {
    fn shrink(&self, lambda: f64) -> impl Iterator<Item = f64> + '_ {
        self.eig.iter().map(move |&e| 1.0 / (1.0 + lambda * e))
    }

    fn gcv(&self, lambda: f64) -> (f64, f64, f64) {
        let mut rss = self.rss0;
        let mut edf = 0.0;
        for (d, &fi) in self.shrink(lambda).zip(&self.f) {
            rss += fi * fi * (1.0 - d) * (1.0 - d);
            edf += d;
        }
        let denom = (self.n - edf).max(1e-9);
        (self.n * rss / (denom * denom), rss, edf)
    }
}

fn choose_lambda(spec: &Spectrum) -> f64 {
    let emax = spec.eig.iter().copied().fold(0.0, f64::max);
    if emax <= 0.0 {
        return 0.0;
    }
    let base = -emax.log10();
    let rho: Vec<f64> = (0..=72).map(|i| base - 12.0 + 0.25 * i as f64).collect();
    let score = |r: f64| spec.gcv(10f64.powf(r)).0;
    let scores: Vec<f64> = rho.iter().map(|&r| score(r)).collect();
    let (best, best_score) =
        scores.iter().enumerate().fold(
            (0, f64::INFINITY),
            |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc },
        );
    if spec.gcv(0.0).0 <= best_score {
        return 0.0;
    }
    if best == 0 || best == rho.len() - 1 {
        return 10f64.powf(rho[best]);
    }
    // Golden-section refinement between the grid neighbours.
    let (mut a, mut b) = (rho[best - 1], rho[best + 1]);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (score(c), score(d));
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = score(d);
        }
    }
    let r = 0.5 * (a + b);
    if score(r) <= best_score {
        10f64.powf(r)
    } else {
        10f64.powf(rho[best])
    }
}

/// Penalized least-squares fit of `response` on the regressor `columns`.
///
/// The fitted values have exactly the mean of the response and no larger
/// variance.
pub fn fit_conditional_mean(
    response: &[f64],
    columns: &[Vec<f64>],
    names: &[String],
    opts: &RegressionOptions,
) -> Result<RegressionFit> {
    let dim = columns.len();
    if !(1..=3).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    if names.len() != dim {
        return Err(Error::Schema(format!(
            "{} names for {dim} regressors",
            names.len()
        )));
    }
    let n = response.len();
    if let Some(c) = columns.iter().position(|c| c.len() != n) {
        return Err(Error::Schema(format!(
            "regressor `{}` has {} values, response has {n}",
            names[c],
            columns[c].len()
        )));
    }
    if let Some(v) = response.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite response value {v}")));
    }
    let per_margin = if dim == 1 {
        opts.basis_1d
    } else {
        opts.basis_per_margin
    };
    let margins = columns
        .iter()
        .zip(names)
        .map(|(c, name)| BSplineBasis::from_data(c, per_margin, name))
        .collect::<Result<Vec<_>>>()?;
    let n_cols = margins.iter().map(|b| b.n_basis).product();
    if n < 10 * n_cols {
        return Err(Error::InsufficientData(format!(
            "{n} samples for {n_cols} basis functions; need at least {}",
            10 * n_cols
        )));
    }
    let design = Design { margins, n_cols };
    let y_mean = mean(response);

    // Cross-products from sparse rows, reduced in a fixed chunk order.
    let partials: Vec<(DMatrix<f64>, DVector<f64>, f64)> = (0..n.div_ceil(ROW_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut xtx = DMatrix::<f64>::zeros(n_cols, n_cols);
            let mut xty = DVector::<f64>::zeros(n_cols);
            let mut yy = 0.0;
            let (mut cols, mut vals) = (Vec::new(), Vec::new());
            let mut x = [0.0; 3];
            for i in chunk * ROW_CHUNK..((chunk + 1) * ROW_CHUNK).min(n) {
                for (d, c) in columns.iter().enumerate() {
                    x[d] = c[i];
                }
                design.row(&x[..dim], &mut cols, &mut vals);
                let y = response[i] - y_mean;
                yy += y * y;
                for (a, (&ca, &va)) in cols.iter().zip(&vals).enumerate() {
                    xty[ca] += va * y;
                    for (&cb, &vb) in cols[..=a].iter().zip(&vals[..=a]) {
                        xtx[(ca.max(cb), ca.min(cb))] += va * vb;
                    }
                }
            }
            (xtx, xty, yy)
        })
        .collect();
    let mut xtx = DMatrix::<f64>::zeros(n_cols, n_cols);
    let mut xty = DVector::<f64>::zeros(n_cols);
    let mut yy = 0.0;
    for (a, b, c) in partials {
        xtx += a;
        xty += b;
        yy += c;
    }
    xtx.fill_upper_triangle_with_lower_triangle();

    let l = cholesky_checked(&xtx).map_err(|cols| {
        let all = design.column_names(names);
        Error::RankDeficient {
            columns: cols.into_iter().map(|c| all[c].clone()).collect(),
        }
    })?;
    let penalty = design.penalty();
    let linv_s = l
        .solve_lower_triangular(&penalty)
        .ok_or_else(|| Error::DegenerateModel("singular Cholesky factor".into()))?;
    let mut a = l
        .solve_lower_triangular(&linv_s.transpose())
        .ok_or_else(|| Error::DegenerateModel("singular Cholesky factor".into()))?;
    a = (&a + a.transpose()) * 0.5;
    let eigen = SymmetricEigen::new(a);
    let g = l
        .solve_lower_triangular(&xty)
        .ok_or_else(|| Error::DegenerateModel("singular Cholesky factor".into()))?;
    let f = eigen.eigenvectors.transpose() * &g;
    let spec = Spectrum {
        eig: eigen.eigenvalues.iter().map(|&e| e.max(0.0)).collect(),
        f: f.iter().copied().collect(),
        rss0: (yy - g.norm_squared()).max(0.0),
        n: n as f64,
    };
    let lambda = choose_lambda(&spec);
    let (gcv, rss, edf) = spec.gcv(lambda);
    let shrunk = DVector::from_iterator(
        n_cols,
        spec.shrink(lambda).zip(&spec.f).map(|(d, fi)| d * fi),
    );
    let beta = l
        .transpose()
        .solve_upper_triangular(&(&eigen.eigenvectors * shrunk))
        .ok_or_else(|| Error::DegenerateModel("singular Cholesky factor".into()))?;

    let mut fitted: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(
            || (Vec::new(), Vec::new()),
            |(cols, vals), i| {
                let mut x = [0.0; 3];
                for (d, c) in columns.iter().enumerate() {
                    x[d] = c[i];
                }
                design.row(&x[..dim], cols, vals);
                cols.iter()
                    .zip(vals.iter())
                    .map(|(&c, &v)| v * beta[c])
                    .sum::<f64>()
            },
        )
        .collect();
    let shift = y_mean - mean(&fitted);
    fitted.iter_mut().for_each(|v| *v += shift);

    Ok(RegressionFit {
        basis: if dim == 1 {
            BasisKind::PolynomialSpline
        } else {
            BasisKind::TensorProductSpline
        },
        margins: design
            .margins
            .iter()
            .zip(names)
            .map(|(b, name)| Margin {
                name: name.clone(),
                degree: b.degree,
                n_basis: b.n_basis,
                interior_knots: b.interior_knots().to_vec(),
            })
            .collect(),
        penalty_weight: lambda,
        effective_df: edf,
        gcv,
        r_squared: if yy > 0.0 {
            (1.0 - rss / yy).clamp(0.0, 1.0)
        } else {
            0.0
        },
        fitted,
    })
}

/// Fits `INB^phi = E[INB | phi]` on the named focal PSA columns and stores
/// it in `inb`.
pub fn fit_inb_phi(
    inb: &mut InbSamples,
    psa: &PsaSamples,
    focal: &[String],
    opts: &RegressionOptions,
) -> Result<RegressionFit> {
    if psa.n_draws() != inb.inb_theta.len() {
        return Err(Error::Schema(format!(
            "PSA has {} draws but INB has {}",
            psa.n_draws(),
            inb.inb_theta.len()
        )));
    }
    if focal.is_empty() {
        return Err(Error::Config("no focal parameters".into()));
    }
    if focal.len() > 3 {
        return Err(Error::UnsupportedDimension(focal.len()));
    }
    let columns = focal
        .iter()
        .map(|f| psa.column_by_name(f))
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_conditional_mean(&inb.inb_theta, &columns, focal, opts)?;
    inb.set_inb_phi(fit.fitted.clone())?;
    Ok(fit)
}

/// Expected value of partial perfect information from a fit.
pub fn evppi(fit: &RegressionFit) -> f64 {
    decision_gain(&fit.fitted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{summarize, DistSpec, SeedSpec};

    fn draws(d: DistSpec, n: usize, stream: u64) -> Vec<f64> {
        d.sample(n, SeedSpec::new(31, stream)).unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn recovers_linear_conditional_mean_with_nuisance() {
        let n = 100_000;
        let phi = draws(DistSpec::beta(1.0, 4.0).unwrap(), n, 1);
        let psi = draws(DistSpec::normal(-0.5, 1.0).unwrap(), n, 2);
        let inb: Vec<f64> = phi
            .iter()
            .zip(&psi)
            .map(|(f, s)| 10_000.0 * (f - s) - 2_500.0)
            .collect();
        let fit = fit_conditional_mean(&inb, &[phi.clone()], &names(&["phi"]), &Default::default())
            .unwrap();
        let rms = (fit
            .fitted
            .iter()
            .zip(&phi)
            .map(|(f, p)| (f - (10_000.0 * p + 2_500.0)).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rms < 150.0, "rms {rms}");
        let s = summarize(&inb).unwrap();
        let m = mean(&fit.fitted);
        assert!((m - 4_500.0).abs() < 4.0 * (s.variance / n as f64).sqrt());
    }

    #[test]
    fn phi_measurable_response_is_reproduced() {
        let n = 20_000;
        let phi = draws(DistSpec::normal(0.0, 5.0).unwrap(), n, 3);
        let inb: Vec<f64> = phi.iter().map(|t| t * t - 5.0).collect();
        let fit =
            fit_conditional_mean(&inb, &[phi], &names(&["theta"]), &Default::default()).unwrap();
        let sd = summarize(&inb).unwrap().variance.sqrt();
        let rms = (fit
            .fitted
            .iter()
            .zip(&inb)
            .map(|(f, y)| (f - y).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rms < 0.01 * sd, "rms {rms} sd {sd}");
        // Refitting on the fitted values is (nearly) idempotent.
        let phi2 = draws(DistSpec::normal(0.0, 5.0).unwrap(), n, 3);
        let again = fit_conditional_mean(
            &fit.fitted,
            &[phi2],
            &names(&["theta"]),
            &Default::default(),
        )
        .unwrap();
        let change = (again
            .fitted
            .iter()
            .zip(&fit.fitted)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(change < 1e-6 * sd, "change {change}");
    }

    #[test]
    fn independent_response_gives_flat_fit() {
        let n = 50_000;
        let phi = draws(DistSpec::uniform(0.0, 1.0).unwrap(), n, 4);
        let psi = draws(DistSpec::normal(0.0, 1.0).unwrap(), n, 5);
        let fit =
            fit_conditional_mean(&psi, &[phi], &names(&["phi"]), &Default::default()).unwrap();
        let ratio = summarize(&fit.fitted).unwrap().variance / summarize(&psi).unwrap().variance;
        assert!(ratio <= 0.01, "{ratio}");
    }

    #[test]
    fn tensor_product_fits_interaction() {
        let n = 40_000;
        let a = draws(DistSpec::uniform(0.0, 1.0).unwrap(), n, 6);
        let b = draws(DistSpec::uniform(-1.0, 1.0).unwrap(), n, 7);
        let noise = draws(DistSpec::normal(0.0, 0.01).unwrap(), n, 8);
        let truth: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y + x * x).collect();
        let y: Vec<f64> = truth.iter().zip(&noise).map(|(t, e)| t + e).collect();
        let fit =
            fit_conditional_mean(&y, &[a, b], &names(&["a", "b"]), &Default::default()).unwrap();
        assert_eq!(fit.basis, BasisKind::TensorProductSpline);
        let rms = (fit
            .fitted
            .iter()
            .zip(&truth)
            .map(|(f, t)| (f - t).powi(2))
            .sum::<f64>()
            / n as f64)
            .sqrt();
        assert!(rms < 0.01, "rms {rms}");
    }

    #[test]
    fn errors_for_bad_inputs() {
        let x = vec![vec![0.0; 100]];
        let y = vec![1.0; 100];
        assert!(matches!(
            fit_conditional_mean(&y, &x, &names(&["c"]), &Default::default()),
            Err(Error::RankDeficient { .. })
        ));
        let four: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64; 100]).collect();
        assert!(matches!(
            fit_conditional_mean(
                &y,
                &four,
                &names(&["a", "b", "c", "d"]),
                &Default::default()
            ),
            Err(Error::UnsupportedDimension(4))
        ));
        let small = vec![(0..50).map(f64::from).collect::<Vec<_>>()];
        assert!(matches!(
            fit_conditional_mean(&y[..50], &small, &names(&["x"]), &Default::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn collinear_tensor_columns_are_named() {
        // The second regressor is a function of the first, so most tensor
        // columns are empty.
        let a: Vec<f64> = (0..2_000).map(|i| (i % 50) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v * 2.0).collect();
        let y: Vec<f64> = a.iter().map(|v| v.sin()).collect();
        match fit_conditional_mean(&y, &[a, b], &names(&["a", "b"]), &Default::default()) {
            Err(Error::RankDeficient { columns }) => {
                assert!(!columns.is_empty());
                assert!(columns
                    .iter()
                    .all(|c| c.starts_with("a:b") && c.contains("*b:b")));
            }
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    #[test]
    fn evppi_examples() {
        let mk = |fitted: Vec<f64>| RegressionFit {
            basis: BasisKind::PolynomialSpline,
            margins: vec![],
            penalty_weight: 0.0,
            effective_df: 0.0,
            gcv: 0.0,
            r_squared: 0.0,
            fitted,
        };
        assert_eq!(evppi(&mk(vec![-3.0; 5])), 0.0);
        assert_eq!(evppi(&mk(vec![-2.0, 2.0])), 1.0);
    }

    #[test]
    fn fit_invariants_hold_on_discrete_regressor() {
        let n = 5_000;
        let x: Vec<f64> = draws(DistSpec::binomial(6, 0.4).unwrap(), n, 9);
        let noise = draws(DistSpec::normal(0.0, 4.0).unwrap(), n, 10);
        let y: Vec<f64> = x
            .iter()
            .zip(&noise)
            .map(|(a, e)| (a * 1.3).exp() + e)
            .collect();
        let fit = fit_conditional_mean(&y, &[x], &names(&["x"]), &Default::default()).unwrap();
        let sy = summarize(&y).unwrap();
        let sf = summarize(&fit.fitted).unwrap();
        assert!((sf.mean - sy.mean).abs() <= 1e-6 * (1.0 + sy.mean.abs()));
        assert!(sf.variance <= sy.variance);
        assert!((0.0..=1.0).contains(&fit.r_squared));
    }
}
