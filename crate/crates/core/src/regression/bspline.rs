//! Cubic B-spline bases with knots at quantiles of the unique data values.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A B-spline basis on `[knots[degree], knots[n_basis]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BSplineBasis {
    pub degree: usize,
    pub n_basis: usize,
    /// Full knot vector, boundary knots repeated `degree + 1` times.
    pub knots: Vec<f64>,
}

impl BSplineBasis {
    /// Basis of at most `max_basis` functions for the values in `x`.
    ///
    /// The size drops to the number of unique values when there are fewer,
    /// and the degree drops below 3 when fewer than 4 functions remain.
    pub fn from_data(x: &[f64], max_basis: usize, name: &str) -> Result<Self> {
        if let Some(v) = x.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite value {v} in regressor `{name}`"
            )));
        }
        let mut unique = x.to_vec();
        unique.sort_by(f64::total_cmp);
        unique.dedup();
        let u = unique.len();
        if u < 2 {
            return Err(Error::RankDeficient {
                columns: vec![format!("{name}:b1 (constant regressor)")],
            });
        }
        let k = max_basis.max(2).min(u);
        let degree = (k - 1).min(3);
        let n_interior = k - degree - 1;
        let (lo, hi) = (unique[0], unique[u - 1]);
        let mut knots = vec![lo; degree + 1];
        for j in 1..=n_interior {
            let pos = j as f64 * (u - 1) as f64 / (n_interior + 1) as f64;
            knots.push(unique[pos.round() as usize]);
        }
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Ok(Self {
            degree,
            n_basis: k,
            knots,
        })
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.knots[self.degree + 1..self.n_basis]
    }

    /// Writes the `degree + 1` possibly nonzero basis values at `x` into
    /// `out` and returns the index of the first one. Values outside the
    /// boundary knots are clamped.
    pub fn eval(&self, x: f64, out: &mut [f64]) -> usize {
        let p = self.degree;
        let t = &self.knots;
        let x = x.clamp(t[p], t[self.n_basis]);
        // Knot span: t[i] <= x < t[i+1], with the right end in the last span.
        let mut i = match t[p..=self.n_basis].partition_point(|&k| k <= x) {
            0 => p,
            n => p + n - 1,
        };
        if i >= self.n_basis {
            i = self.n_basis - 1;
        }
        let mut left = [0.0; 4];
        let mut right = [0.0; 4];
        out[0] = 1.0;
        for j in 1..=p {
            left[j] = x - t[i + 1 - j];
            right[j] = t[i + j] - x;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = out[r] / (right[r + 1] + left[j - r]);
                out[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            out[j] = saved;
        }
        i - p
    }

    /// Penalty `D'D` for differences of order `min(2, n_basis - 1)`
    /// between adjacent coefficients.
    pub fn difference_penalty(&self) -> DMatrix<f64> {
        difference_penalty(self.n_basis)
    }
}

pub(crate) fn difference_penalty(k: usize) -> DMatrix<f64> {
    let order = 2.min(k.saturating_sub(1));
    let mut d = DMatrix::<f64>::identity(k, k);
    for _ in 0..order {
        let rows = d.nrows() - 1;
        let mut next = DMatrix::<f64>::zeros(rows, k);
        for r in 0..rows {
            for c in 0..k {
                next[(r, c)] = d[(r + 1, c)] - d[(r, c)];
            }
        }
        d = next;
    }
    if order == 0 {
        return DMatrix::zeros(k, k);
    }
    d.transpose() * d
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
    }

    #[test]
    fn partition_of_unity_and_nonnegativity() {
        let x: Vec<f64> = grid(1000).iter().map(|v| v * v * 3.0 - 1.0).collect();
        let b = BSplineBasis::from_data(&x, 10, "x").unwrap();
        assert_eq!((b.degree, b.n_basis), (3, 10));
        let mut out = [0.0; 4];
        for &v in &x {
            let first = b.eval(v, &mut out);
            assert!(first + 3 < 10);
            assert!(out.iter().all(|&w| w >= -1e-14));
            assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reproduces_cubics_exactly() {
        // A cubic lies in the spline space: least squares recovers it.
        let x = grid(200);
        let b = BSplineBasis::from_data(&x, 8, "x").unwrap();
        let f = |v: f64| 2.0 - v + 3.0 * v * v - 4.0 * v * v * v;
        let mut xtx = DMatrix::<f64>::zeros(8, 8);
        let mut xty = nalgebra::DVector::<f64>::zeros(8);
        let mut out = [0.0; 4];
        for &v in &x {
            let s = b.eval(v, &mut out);
            for a in 0..4 {
                xty[s + a] += out[a] * f(v);
                for c in 0..4 {
                    xtx[(s + a, s + c)] += out[a] * out[c];
                }
            }
        }
        let beta = xtx.cholesky().unwrap().solve(&xty);
        for &v in &x {
            let s = b.eval(v, &mut out);
            let fit: f64 = (0..4).map(|a| out[a] * beta[s + a]).sum();
            assert!((fit - f(v)).abs() < 1e-9);
        }
    }

    #[test]
    fn few_unique_values_reduce_size_and_degree() {
        let b = BSplineBasis::from_data(&[0.0, 1.0, 0.0, 1.0], 10, "x").unwrap();
        assert_eq!((b.degree, b.n_basis), (1, 2));
        let b = BSplineBasis::from_data(&[0.0, 1.0, 2.0, 2.0, 1.0], 10, "x").unwrap();
        assert_eq!((b.degree, b.n_basis), (2, 3));
        let b = BSplineBasis::from_data(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], 10, "x").unwrap();
        assert_eq!((b.degree, b.n_basis), (3, 6));
        assert!(b.interior_knots().windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(
            BSplineBasis::from_data(&[3.0; 5], 10, "x"),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn penalty_annihilates_linear_coefficients() {
        let s = difference_penalty(6);
        let lin = nalgebra::DVector::from_fn(6, |i, _| 2.0 + 0.5 * i as f64);
        assert!((&s * lin).norm() < 1e-12);
        assert_eq!(difference_penalty(1), DMatrix::zeros(1, 1));
    }
}
