//! Least-squares regression on polynomial or piecewise-linear bases, used to
//! approximate conditional expectations given the current state.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::par;

/// Condition numbers above this are treated as rank deficiency.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "SCREAMING_SNAKE_CASE", deny_unknown_fields)]
pub enum BasisFamily {
    /// Monomials of total degree ≤ `degree` in the standardized state.
    Polynomial { degree: u32 },
    /// Continuous piecewise-linear functions on `bins` quantile bins
    /// (one state dimension only), extrapolated linearly.
    LocalLinear { bins: u32 },
}

impl Default for BasisFamily {
    fn default() -> Self {
        BasisFamily::Polynomial { degree: 4 }
    }
}

/// A feature map `x ↦ (φ₁(x), …, φ_K(x))` frozen from a sample.
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    Constant,
    Polynomial {
        mean: Vec<f64>,
        scale: Vec<f64>,
        exponents: Vec<Vec<u32>>,
    },
    Hat {
        knots: Vec<f64>,
    },
}

impl FeatureMap {
    fn from_sample(family: &BasisFamily, xs: &[f64], dim: usize) -> Result<Self> {
        let n = xs.len() / dim;
        match *family {
            BasisFamily::Polynomial { degree } => {
                let mut mean = vec![0.0; dim];
                let mut scale = vec![0.0; dim];
                for c in 0..dim {
                    let mu = (0..n).map(|p| xs[p * dim + c]).sum::<f64>() / n as f64;
                    let var = (0..n).map(|p| (xs[p * dim + c] - mu).powi(2)).sum::<f64>() / n as f64;
                    mean[c] = mu;
                    scale[c] = var.sqrt();
                }
                // judged on the range, since the summed mean of identical points is not exact
                let live: Vec<usize> = (0..dim)
                    .filter(|&c| {
                        let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                            (lo.min(xs[p * dim + c]), hi.max(xs[p * dim + c]))
                        });
                        hi - lo > 1e-12 * (1.0 + lo.abs().max(hi.abs()))
                    })
                    .collect();
                if live.is_empty() || degree == 0 {
                    return Ok(FeatureMap::Constant);
                }
                let exponents = monomials(dim, &live, degree);
                Ok(FeatureMap::Polynomial { mean, scale, exponents })
            }
            BasisFamily::LocalLinear { bins } => {
                if dim != 1 {
                    return argument("local piecewise-linear basis supports one state dimension only");
                }
                if bins == 0 {
                    return argument("local piecewise-linear basis needs at least one bin");
                }
                let mut sorted = xs.to_vec();
                sorted.sort_by(f64::total_cmp);
                let span = sorted[n - 1] - sorted[0];
                let tol = 1e-12 * (1.0 + sorted[n - 1].abs().max(sorted[0].abs()));
                if span <= tol {
                    return Ok(FeatureMap::Constant);
                }
                let mut knots: Vec<f64> = Vec::with_capacity(bins as usize + 1);
                for i in 0..=bins as usize {
                    let q = sorted[i * (n - 1) / bins as usize];
                    if knots.last().is_none_or(|&k| q > k + tol) {
                        knots.push(q);
                    }
                }
                if knots.len() < 2 {
                    return Ok(FeatureMap::Constant);
                }
                Ok(FeatureMap::Hat { knots })
            }
        }
    }

    pub fn size(&self) -> usize {
        match self {
            FeatureMap::Constant => 1,
            FeatureMap::Polynomial { exponents, .. } => exponents.len(),
            FeatureMap::Hat { knots } => knots.len(),
        }
    }

    /// Non-zero features per point.
    fn nnz(&self) -> usize {
        match self {
            FeatureMap::Hat { .. } => 2,
            other => other.size(),
        }
    }

    /// Writes `nnz()` (index, value) pairs for `x`.
    fn features(&self, x: &[f64], out: &mut [(u32, f64)]) {
        match self {
            FeatureMap::Constant => out[0] = (0, 1.0),
            FeatureMap::Polynomial { mean, scale, exponents } => {
                for (j, ex) in exponents.iter().enumerate() {
                    let mut v = 1.0;
                    for (c, &e) in ex.iter().enumerate() {
                        if e > 0 {
                            v *= ((x[c] - mean[c]) / scale[c]).powi(e as i32);
                        }
                    }
                    out[j] = (j as u32, v);
                }
            }
            FeatureMap::Hat { knots } => {
                let x = x[0];
                let last = knots.len() - 1;
                let hi = knots.partition_point(|&k| k <= x).clamp(1, last);
                let lo = hi - 1;
                let w = (x - knots[lo]) / (knots[hi] - knots[lo]);
                out[0] = (lo as u32, 1.0 - w);
                out[1] = (hi as u32, w);
            }
        }
    }

    pub fn eval(&self, coef: &[f64], x: &[f64]) -> f64 {
        match self {
            FeatureMap::Constant => coef[0],
            FeatureMap::Polynomial { mean, scale, exponents } => {
                if x.len() == 1 {
                    // Horner in the standardized coordinate; exponents are 0..=D
                    let z = (x[0] - mean[0]) / scale[0];
                    return coef.iter().rev().fold(0.0, |acc, c| acc * z + c);
                }
                exponents
                    .iter()
                    .zip(coef)
                    .map(|(ex, c)| {
                        let mut v = *c;
                        for (i, &e) in ex.iter().enumerate() {
                            if e > 0 {
                                v *= ((x[i] - mean[i]) / scale[i]).powi(e as i32);
                            }
                        }
                        v
                    })
                    .sum()
            }
            FeatureMap::Hat { .. } => {
                let mut buf = [(0u32, 0.0f64); 2];
                self.features(x, &mut buf);
                buf.iter().map(|&(j, f)| coef[j as usize] * f).sum()
            }
        }
    }
}

/// Exponent vectors of total degree ≤ `degree` over the `live` coordinates,
/// ordered by total degree.
fn monomials(dim: usize, live: &[usize], degree: u32) -> Vec<Vec<u32>> {
    let mut out = vec![vec![0u32; dim]];
    let mut frontier = vec![vec![0u32; dim]];
    for _ in 0..degree {
        let mut next = Vec::new();
        for base in &frontier {
            // extend only at or after the last raised coordinate to avoid repeats
            let start = live.iter().rposition(|&c| base[c] > 0).unwrap_or(0);
            for &c in &live[start..] {
                let mut e = base.clone();
                e[c] += 1;
                next.push(e);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// A fitted function `x ↦ Σ cⱼ φⱼ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fitted {
    pub map: Arc<FeatureMap>,
    pub coef: Vec<f64>,
}

impl Fitted {
    pub fn constant(c: f64) -> Self {
        Self {
            map: Arc::new(FeatureMap::Constant),
            coef: vec![c],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.map.eval(&self.coef, x)
    }

    pub fn eval1(&self, x: f64) -> f64 {
        self.eval(std::slice::from_ref(&x))
    }
}

/// The feature matrix of a sample together with its factorized Gram matrix.
#[derive(Debug, Clone)]
pub struct Design {
    map: Arc<FeatureMap>,
    n: usize,
    nnz: usize,
    features: Vec<(u32, f64)>,
    chol: Cholesky<f64, Dyn>,
    condition: f64,
}

impl Design {
    /// Builds the design for `xs` (`n × dim`, row-major).
    pub fn new(family: &BasisFamily, xs: &[f64], dim: usize, context: &str) -> Result<Self> {
        if dim == 0 || xs.is_empty() || !xs.len().is_multiple_of(dim) {
            return argument(format!("{context}: empty or ragged regression sample"));
        }
        let n = xs.len() / dim;
        let map = FeatureMap::from_sample(family, xs, dim)?;
        let k = map.size();
        let nnz = map.nnz();
        let mut features = vec![(0u32, 0.0); n * nnz];
        par::for_each_item_mut(&mut features, nnz, |p, row| {
            map.features(&xs[p * dim..(p + 1) * dim], row)
        });

        let gram = par::reduce_chunks(
            n,
            DMatrix::<f64>::zeros(k, k),
            |r| {
                let mut g = DMatrix::<f64>::zeros(k, k);
                for p in r {
                    let row = &features[p * nnz..(p + 1) * nnz];
                    for &(a, fa) in row {
                        for &(b, fb) in row {
                            g[(a as usize, b as usize)] += fa * fb;
                        }
                    }
                }
                g
            },
            |a, b| a + b,
        );
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= MAX_CONDITION) {
            return Err(Error::RankDeficient {
                context: context.into(),
                condition,
                samples: n,
            });
        }
        let chol = Cholesky::new(gram).ok_or_else(|| Error::RankDeficient {
            context: context.into(),
            condition,
            samples: n,
        })?;
        Ok(Self {
            map: Arc::new(map),
            n,
            nnz,
            features,
            chol,
            condition,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn basis_size(&self) -> usize {
        self.map.size()
    }

    pub fn condition(&self) -> f64 {
        self.condition
    }

    pub fn map(&self) -> &Arc<FeatureMap> {
        &self.map
    }

    /// Least-squares coefficients for targets `y` (one per sample point).
    pub fn fit(&self, y: &[f64]) -> Result<Fitted> {
        if y.len() != self.n {
            return argument(format!(
                "target length {} does not match sample size {}",
                y.len(),
                self.n
            ));
        }
        // a constant target is reproduced exactly, not to round-off
        if let Some(&y0) = y.first() {
            if y.iter().all(|&v| v == y0) {
                return Ok(Fitted::constant(y0));
            }
        }
        let k = self.map.size();
        let nnz = self.nnz;
        let rhs = par::reduce_chunks(
            self.n,
            DVector::<f64>::zeros(k),
            |r| {
                let mut v = DVector::<f64>::zeros(k);
                for p in r {
                    for &(a, fa) in &self.features[p * nnz..(p + 1) * nnz] {
                        v[a as usize] += fa * y[p];
                    }
                }
                v
            },
            |a, b| a + b,
        );
        let coef = self.chol.solve(&rhs);
        if coef.iter().any(|c| !c.is_finite()) {
            return Err(Error::Evaluation("regression produced non-finite coefficients".into()));
        }
        Ok(Fitted {
            map: self.map.clone(),
            coef: coef.iter().copied().collect(),
        })
    }

    /// Fitted values at the sample points.
    pub fn predict(&self, f: &Fitted) -> Vec<f64> {
        if *f.map == FeatureMap::Constant {
            return vec![f.coef[0]; self.n];
        }
        debug_assert!(Arc::ptr_eq(&f.map, &self.map) || *f.map == *self.map);
        let nnz = self.nnz;
        par::map_range(self.n, |p| {
            self.features[p * nnz..(p + 1) * nnz]
                .iter()
                .map(|&(a, fa)| f.coef[a as usize] * fa)
                .sum()
        })
    }

    /// `Σ (y − ŷ)²` of the least-squares fit.
    pub fn residual_ss(&self, y: &[f64]) -> Result<f64> {
        let f = self.fit(y)?;
        let pred = self.predict(&f);
        Ok(par::sum(self.n, |p| (y[p] - pred[p]).powi(2)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| ((i as f64 + 0.5) / n as f64 * 7.0).sin() * 2.0 + 1.0)
            .collect()
    }

    #[test]
    fn polynomial_reproduces_polynomials() {
        let xs = sample(500);
        let y: Vec<f64> = xs.iter().map(|x| 1.0 - 2.0 * x + 0.5 * x.powi(3)).collect();
        let d = Design::new(&BasisFamily::Polynomial { degree: 4 }, &xs, 1, "t").unwrap();
        let f = d.fit(&y).unwrap();
        for x in [-1.0, 0.3, 2.5] {
            assert!((f.eval1(x) - (1.0 - 2.0 * x + 0.5 * x * x * x)).abs() < 1e-8);
        }
    }

    #[test]
    fn hat_reproduces_linears_and_extrapolates() {
        let xs = sample(400);
        let y: Vec<f64> = xs.iter().map(|x| 3.0 * x - 1.0).collect();
        let d = Design::new(&BasisFamily::LocalLinear { bins: 16 }, &xs, 1, "t").unwrap();
        let f = d.fit(&y).unwrap();
        for x in [-5.0, 0.0, 1.7, 9.0] {
            assert!((f.eval1(x) - (3.0 * x - 1.0)).abs() < 1e-8, "{x}");
        }
    }

    #[test]
    fn degenerate_sample_falls_back_to_constant() {
        let xs = vec![2.0; 100];
        let y: Vec<f64> = (0..100).map(|i| i as f64).collect();
        for fam in [
            BasisFamily::Polynomial { degree: 4 },
            BasisFamily::LocalLinear { bins: 8 },
        ] {
            let d = Design::new(&fam, &xs, 1, "t").unwrap();
            assert_eq!(d.basis_size(), 1);
            assert!((d.fit(&y).unwrap().eval1(2.0) - 49.5).abs() < 1e-12);
        }
        // the mean of many copies of 4.2 does not round to 4.2
        let xs = vec![4.2; 100_000];
        let d = Design::new(&BasisFamily::Polynomial { degree: 4 }, &xs, 1, "t").unwrap();
        assert_eq!(d.basis_size(), 1);
    }

    #[test]
    fn rank_deficiency_is_reported() {
        // two distinct points cannot support a quartic
        let xs: Vec<f64> = (0..50).map(|i| if i % 2 == 0 { 0.0 } else { 1.0 }).collect();
        let err = Design::new(&BasisFamily::Polynomial { degree: 4 }, &xs, 1, "step 3").unwrap_err();
        assert!(matches!(err, Error::RankDeficient { samples: 50, .. }), "{err}");
    }

    #[test]
    fn multi_dimensional_monomials() {
        let m = monomials(2, &[0, 1], 2);
        assert_eq!(m.len(), 6);
        let m = monomials(3, &[0, 1, 2], 3);
        assert_eq!(m.len(), 20);
    }
}
