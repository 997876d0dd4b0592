//! Coarray-domain processing of one subarray: vectorize the covariance onto
//! its difference coarray, spatially smooth the contiguous centre, and split
//! the result into signal and noise subspaces.

use std::collections::BTreeMap;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::ArrayGeometry;
use crate::linalg::{hermitian_eigen, CMatrix, CVector};

/// How redundant covariance entries sharing one lag are reduced to a value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DedupRule {
    /// Keep the first entry in column-major vectorization order.
    FirstOccurrence,
    /// Mean over every entry with that lag.
    #[default]
    Average,
}

impl fmt::Display for DedupRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DedupRule::FirstOccurrence => "first-occurrence",
            DedupRule::Average => "average",
        })
    }
}

impl std::str::FromStr for DedupRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first-occurrence" | "first" => Ok(DedupRule::FirstOccurrence),
            "average" | "avg" => Ok(DedupRule::Average),
            other => Err(invalid(format!("unknown dedup rule '{other}'"))),
        }
    }
}

/// Virtual received signal on a subarray's difference coarray.
#[derive(Debug, Clone, PartialEq)]
pub struct CoarraySignal {
    lags: Vec<i64>,
    values: Vec<Complex64>,
    rule: DedupRule,
}

impl CoarraySignal {
    pub fn lags(&self) -> &[i64] {
        &self.lags
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn rule(&self) -> DedupRule {
        self.rule
    }

    pub fn value(&self, lag: i64) -> Option<Complex64> {
        self.lags.binary_search(&lag).ok().map(|i| self.values[i])
    }

    /// Largest κ_c such that every lag in −κ_c..=κ_c is present.
    pub fn contiguous_half(&self) -> usize {
        let Ok(zero) = self.lags.binary_search(&0) else {
            return 0;
        };
        let mut k = 0usize;
        while zero + k + 1 < self.lags.len()
            && zero > k
            && self.lags[zero + k + 1] == k as i64 + 1
            && self.lags[zero - k - 1] == -(k as i64) - 1
        {
            k += 1;
        }
        k
    }
}

pub fn covariance_to_coarray(r: &CMatrix, geom: &ArrayGeometry, rule: DedupRule) -> Result<CoarraySignal> {
    covariance_to_coarray_at(r, geom.positions(), rule)
}

/// Like [`covariance_to_coarray`] but with sensor positions in the row order
/// of `r`, which need not be sorted.
///
/// Entry `R[m, n]` observes lag `p_m - p_n`. Entries are visited in the
/// column-major order of `vec(R)`.
pub fn covariance_to_coarray_at(r: &CMatrix, positions: &[usize], rule: DedupRule) -> Result<CoarraySignal> {
    let n = positions.len();
    if r.nrows() != n || r.ncols() != n {
        return Err(invalid(format!(
            "covariance is {}x{} but geometry has {n} sensors",
            r.nrows(),
            r.ncols()
        )));
    }
    let mut acc: BTreeMap<i64, (Complex64, usize)> = BTreeMap::new();
    for col in 0..n {
        for row in 0..n {
            let lag = positions[row] as i64 - positions[col] as i64;
            let v = r[(row, col)];
            acc.entry(lag)
                .and_modify(|(sum, count)| {
                    if rule == DedupRule::Average {
                        *sum += v;
                    }
                    *count += 1;
                })
                .or_insert((v, 1));
        }
    }
    let (lags, values) = acc
        .into_iter()
        .map(|(lag, (sum, count))| match rule {
            DedupRule::Average => (lag, sum / count as f64),
            DedupRule::FirstOccurrence => (lag, sum),
        })
        .unzip();
    Ok(CoarraySignal { lags, values, rule })
}

/// Forward spatially-smoothed coarray covariance of one subarray.
#[derive(Debug, Clone)]
pub struct SmoothedCovariance {
    pub matrix: CMatrix,
    /// Window length M, also the number of windows.
    pub window: usize,
    pub subarray_index: usize,
}

/// Averages the outer products of the `M = κ_c + 1` overlapping length-`M`
/// windows of the contiguous coarray centre.
///
/// Window `i` (1-based) starts at lag `1 - i`, so the first window holds lags
/// `0..=κ_c` and the last `-κ_c..=0`; element `k` of a window sits at virtual
/// position `k`. Lags outside the contiguous centre are ignored.
pub fn spatial_smooth(x: &CoarraySignal, subarray_index: usize) -> Result<SmoothedCovariance> {
    let half = x.contiguous_half();
    if half < 1 {
        return Err(Error::DegenerateCoarray(half));
    }
    let m = half + 1;
    let zero = x.lags.binary_search(&0).expect("contiguous centre contains lag 0");
    let mut acc = CMatrix::zeros(m, m);
    for i in 1..=m {
        let start = zero + 1 - i;
        let w = CVector::from_column_slice(&x.values[start..start + m]);
        acc += &w * w.adjoint();
    }
    Ok(SmoothedCovariance {
        matrix: acc.unscale(m as f64),
        window: m,
        subarray_index,
    })
}

/// Signal/noise split of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct SubspaceDecomposition {
    /// Top-`D` eigenvectors as columns.
    pub signal: CMatrix,
    /// Remaining eigenvectors.
    pub noise: CMatrix,
    /// All eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
}

impl SubspaceDecomposition {
    /// Splits off the `sources` dominant eigenvectors. At least one noise
    /// dimension must remain.
    pub fn from_hermitian(matrix: &CMatrix, sources: usize) -> Result<Self> {
        let dim = matrix.nrows();
        if sources == 0 {
            return Err(invalid("source count must be positive"));
        }
        if sources >= dim {
            return Err(Error::TooManySources {
                sources,
                limit: dim.saturating_sub(1),
            });
        }
        let eig = hermitian_eigen(matrix);
        Ok(Self {
            signal: eig.eigenvectors.columns(0, sources).into_owned(),
            noise: eig.eigenvectors.columns(sources, dim - sources).into_owned(),
            eigenvalues: eig.eigenvalues,
        })
    }

    pub fn dim(&self) -> usize {
        self.signal.nrows()
    }

    pub fn sources(&self) -> usize {
        self.signal.ncols()
    }

    /// `β_D - β_{D+1}`.
    pub fn eigen_gap(&self) -> f64 {
        let d = self.sources();
        self.eigenvalues[d - 1] - self.eigenvalues[d]
    }

    /// `[U V] diag(β) [U V]^H`.
    pub fn reconstruct(&self) -> CMatrix {
        let dim = self.dim();
        let mut basis = CMatrix::zeros(dim, dim);
        basis.columns_mut(0, self.sources()).copy_from(&self.signal);
        basis
            .columns_mut(self.sources(), dim - self.sources())
            .copy_from(&self.noise);
        let diag = CVector::from_iterator(dim, self.eigenvalues.iter().map(|&b| Complex64::from(b)));
        &basis * CMatrix::from_diagonal(&diag) * basis.adjoint()
    }
}

/// Signal subspace of a smoothed coarray covariance. `D` may be at most
/// `M - 1 = (sDoF - 1) / 2`.
pub fn signal_subspace(rss: &SmoothedCovariance, sources: usize) -> Result<SubspaceDecomposition> {
    SubspaceDecomposition::from_hermitian(&rss.matrix, sources)
}

/// Full per-subarray chain: covariance → coarray → smoothing → subspaces.
pub fn coarray_subspace(
    r: &CMatrix,
    geom: &ArrayGeometry,
    rule: DedupRule,
    sources: usize,
    subarray_index: usize,
) -> Result<SubspaceDecomposition> {
    let x = covariance_to_coarray(r, geom, rule)?;
    let rss = spatial_smooth(&x, subarray_index)?;
    signal_subspace(&rss, sources)
}
