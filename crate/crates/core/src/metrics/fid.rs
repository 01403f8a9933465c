//! Fréchet distance between Gaussian fits of two feature sets.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Mergeable sufficient statistics: count, feature sum and outer-product sum.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStats {
    count: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

/// Mixing weight toward a scaled identity when a set has too few samples for
/// a full-rank covariance.
pub const SHRINKAGE: f64 = 0.1;

impl FeatureStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            sum: DVector::zeros(dim),
            outer: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_features<'a>(dim: usize, features: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut s = Self::new(dim);
        for f in features {
            s.push(f)?;
        }
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.sum.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn push(&mut self, f: &[f64]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::shape(format!(
                "feature of length {} pushed into {}-d statistics",
                f.len(),
                self.dim()
            )));
        }
        let v = DVector::from_column_slice(f);
        self.outer.ger(1.0, &v, &v, 1.0);
        self.sum += v;
        self.count += 1;
        Ok(())
    }

    /// Combines two partial statistics. Associative and commutative.
    pub fn merge(&mut self, other: &FeatureStats) -> Result<()> {
        if other.dim() != self.dim() {
            return Err(Error::shape("merging statistics of different dimension"));
        }
        self.count += other.count;
        self.sum += &other.sum;
        self.outer += &other.outer;
        Ok(())
    }

    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.count as f64
    }

    /// Unbiased covariance, shrunk toward `trace/d * I` when `count <= dim`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let n = self.count as f64;
        let mu = self.mean();
        let mut cov = if self.count > 1 {
            (&self.outer - &mu * mu.transpose() * n) / (n - 1.0)
        } else {
            DMatrix::zeros(d, d)
        };
        cov = (&cov + cov.transpose()) * 0.5;
        if self.count < d + 1 {
            let scale = cov.trace() / d as f64;
            cov = cov * (1.0 - SHRINKAGE) + DMatrix::identity(d, d) * (SHRINKAGE * scale);
        }
        cov
    }
}

/// Symmetric positive-semidefinite square root via eigendecomposition.
fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new((m + m.transpose()) * 0.5);
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

pub fn fid_from_stats(a: &FeatureStats, b: &FeatureStats) -> Result<f64> {
    if a.count == 0 || b.count == 0 {
        return Err(Error::invalid("FID needs non-empty feature sets"));
    }
    if a.dim() != b.dim() {
        return Err(Error::shape(format!("FID feature dims {} vs {}", a.dim(), b.dim())));
    }
    let diff = a.mean() - b.mean();
    let (sa, sb) = (a.covariance(), b.covariance());
    // tr sqrt(Sa Sb) = tr sqrt(Sa^1/2 Sb Sa^1/2), the latter symmetric.
    let root_a = sqrt_psd(&sa);
    let inner = &root_a * &sb * &root_a;
    let eig = SymmetricEigen::new((&inner + inner.transpose()) * 0.5);
    let tr_cross: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let value = diff.norm_squared() + sa.trace() + sb.trace() - 2.0 * tr_cross;
    Ok(value.max(0.0))
}

pub fn fid_from_features(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    let dim = a
        .first()
        .or(b.first())
        .map(Vec::len)
        .ok_or_else(|| Error::invalid("FID needs non-empty feature sets"))?;
    let sa = FeatureStats::from_features(dim, a.iter().map(Vec::as_slice))?;
    let sb = FeatureStats::from_features(dim, b.iter().map(Vec::as_slice))?;
    fid_from_stats(&sa, &sb)
}
