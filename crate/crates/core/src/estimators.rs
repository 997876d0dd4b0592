//! Pseudo-spectrum estimators for partially-calibrated subarrays.
//!
//! All three estimators only ever combine per-subarray statistics:
//!
//! * **GCA-MUSIC** merges the coarray signal subspaces through the
//!   block-diagonal projector `P = blkdiag(U_1 U_1^H, ..., U_L U_L^H)` and
//!   searches `1 / b^H (I - P) b`, where `b` stacks one virtual steering
//!   vector per subarray.
//! * **G-MUSIC** does the same in the physical sensor domain, so it is limited
//!   to `N - 1` sources per subarray.
//! * **AVCA-MUSIC** averages the per-subarray coarray MUSIC spectra.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coarray::{coarray_subspace, DedupRule, SubspaceDecomposition};
use crate::error::{invalid, Error, Result};
use crate::geometry::TypeIILayout;
use crate::linalg::{CMatrix, CVector};
use crate::sigmodel::steering_unchecked;

/// Default number of grid points over [-1, 1] (step 1e-3).
pub const DEFAULT_GRID_SIZE: usize = 2001;

/// Lower clamp on spectrum denominators.
pub const DENOMINATOR_FLOOR: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Gca,
    #[serde(alias = "g-music")]
    Gmusic,
    Avca,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Gca => "gca",
            Algorithm::Gmusic => "gmusic",
            Algorithm::Avca => "avca",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gca" | "gca-music" => Ok(Algorithm::Gca),
            "gmusic" | "g-music" => Ok(Algorithm::Gmusic),
            "avca" | "avca-music" => Ok(Algorithm::Avca),
            other => Err(invalid(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub grid_size: usize,
    /// Three-point parabolic refinement of each peak, in dB.
    pub refine: bool,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            grid_size: DEFAULT_GRID_SIZE,
            refine: true,
        }
    }
}

/// Pseudo-spectrum sampled on a uniform direction grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumGrid {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

/// `size` equally spaced directions from -1 to 1 inclusive.
pub fn uniform_grid(size: usize) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(invalid("grid needs at least two points"));
    }
    let step = 2.0 / (size - 1) as f64;
    Ok((0..size).map(|i| -1.0 + i as f64 * step).collect())
}

impl SpectrumGrid {
    /// Samples `1 / max(denominator(θ), floor)` over a uniform grid.
    pub fn from_denominator(size: usize, denominator: impl Fn(f64) -> f64) -> Result<Self> {
        let grid = uniform_grid(size)?;
        let values = grid
            .iter()
            .map(|&t| 1.0 / denominator(t).max(DENOMINATOR_FLOOR))
            .collect();
        Ok(Self { grid, values })
    }

    pub fn step(&self) -> f64 {
        self.grid[1] - self.grid[0]
    }
}

/// Direction estimates for a known source count.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaEstimate {
    /// Ascending.
    pub thetas: Vec<f64>,
    pub algorithm: Algorithm,
    /// Spectrum value at each picked grid point, aligned with `thetas`.
    pub peak_values: Vec<f64>,
    /// Fewer than `D` local maxima were found; the shortfall was filled with
    /// the largest remaining grid values.
    pub degraded: bool,
    /// `β_D - β_{D+1}` per subarray.
    pub eigen_gaps: Vec<f64>,
}

/// Output of [`find_peaks`].
#[derive(Debug, Clone, PartialEq)]
pub struct PeakPick {
    /// Picked grid indices, ascending.
    pub indices: Vec<usize>,
    /// Directions, refined when requested, ascending.
    pub thetas: Vec<f64>,
    pub values: Vec<f64>,
    pub degraded: bool,
}

/// Picks the `count` largest local maxima.
///
/// A local maximum is strictly greater than both neighbours; a flat top is
/// reported at its leftmost point. Equal heights are ranked left to right.
/// When there are too few maxima the remaining slots take the largest
/// unpicked grid values and the result is flagged degraded.
pub fn find_peaks(spectrum: &SpectrumGrid, count: usize, refine: bool) -> Result<PeakPick> {
    let v = &spectrum.values;
    let g = v.len();
    if g < 3 || spectrum.grid.len() != g {
        return Err(invalid("peak search needs at least three grid points"));
    }
    if count == 0 || count > g {
        return Err(invalid(format!("cannot pick {count} peaks from {g} points")));
    }

    let mut maxima = Vec::new();
    let mut i = 1;
    while i + 1 < g {
        if v[i] > v[i - 1] {
            let mut j = i;
            while j + 1 < g && v[j + 1] == v[i] {
                j += 1;
            }
            if j + 1 < g && v[j + 1] < v[i] {
                maxima.push(i);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }

    let by_height = |a: &usize, b: &usize| v[*b].total_cmp(&v[*a]).then(a.cmp(b));
    maxima.sort_by(by_height);
    let degraded = maxima.len() < count;
    let mut picked: Vec<usize> = maxima.into_iter().take(count).collect();
    if degraded {
        let mut rest: Vec<usize> = (0..g).filter(|k| !picked.contains(k)).collect();
        rest.sort_by(by_height);
        picked.extend(rest.into_iter().take(count - picked.len()));
    }
    picked.sort_unstable();

    let step = spectrum.step();
    let thetas = picked
        .iter()
        .map(|&k| {
            let base = spectrum.grid[k];
            if !refine || k == 0 || k + 1 == g {
                return base;
            }
            let (l, c, r) = (db(v[k - 1]), db(v[k]), db(v[k + 1]));
            let curvature = l - 2.0 * c + r;
            if curvature >= 0.0 {
                return base;
            }
            let delta = (0.5 * (l - r) / curvature).clamp(-0.5, 0.5);
            base + delta * step
        })
        .collect();
    Ok(PeakPick {
        values: picked.iter().map(|&k| v[k]).collect(),
        indices: picked,
        thetas,
        degraded,
    })
}

fn db(x: f64) -> f64 {
    10.0 * x.max(f64::MIN_POSITIVE).log10()
}

/// Block-diagonal signal projector `P = blkdiag(U_l U_l^H)` and its
/// complement `Q = I - P`.
#[derive(Debug, Clone)]
pub struct MergedProjector {
    pub projector: CMatrix,
    pub complement: CMatrix,
}

impl MergedProjector {
    pub fn from_bases(bases: &[&CMatrix]) -> Self {
        let dim: usize = bases.iter().map(|u| u.nrows()).sum();
        let mut p = CMatrix::zeros(dim, dim);
        let mut at = 0;
        for u in bases {
            let n = u.nrows();
            p.view_mut((at, at), (n, n)).copy_from(&(*u * u.adjoint()));
            at += n;
        }
        let complement = CMatrix::identity(dim, dim) - &p;
        Self {
            projector: p,
            complement,
        }
    }

    /// `b^H Q b`.
    pub fn null_quadratic(&self, b: &CVector) -> f64 {
        (b.adjoint() * &self.complement * b)[(0, 0)].re
    }
}

/// `‖V^H a‖² = a^H (I - U U^H) a` for one subarray.
fn null_energy(noise: &CMatrix, a: &CVector) -> f64 {
    noise
        .column_iter()
        .map(|v| v.dotc(a).norm_sqr())
        .sum()
}

fn check_subspaces(subspaces: &[SubspaceDecomposition], sources: usize) -> Result<usize> {
    let first = subspaces
        .first()
        .ok_or_else(|| invalid("at least one subarray subspace is required"))?;
    let m = first.dim();
    if sources >= m {
        return Err(Error::TooManySources {
            sources,
            limit: m - 1,
        });
    }
    for s in subspaces {
        if s.dim() != m || s.sources() != sources {
            return Err(invalid("subarray subspaces differ in size or source count"));
        }
    }
    Ok(m)
}

fn package(
    algorithm: Algorithm,
    spectrum: SpectrumGrid,
    sources: usize,
    opts: &SearchOptions,
    subspaces: &[SubspaceDecomposition],
) -> Result<(SpectrumGrid, DoaEstimate)> {
    let peaks = find_peaks(&spectrum, sources, opts.refine)?;
    let est = DoaEstimate {
        thetas: peaks.thetas,
        algorithm,
        peak_values: peaks.values,
        degraded: peaks.degraded,
        eigen_gaps: subspaces.iter().map(|s| s.eigen_gap()).collect(),
    };
    Ok((spectrum, est))
}

/// GCA-MUSIC spectrum. The composite steering vector repeats the length-`M`
/// virtual steering vector in each block, so `b^H (I - P) b` reduces to the
/// sum of the per-subarray null-spectrum denominators.
pub fn gca_denominator(subspaces: &[SubspaceDecomposition], theta: f64) -> f64 {
    let m = subspaces[0].dim();
    let virt: Vec<usize> = (0..m).collect();
    let a = steering_unchecked(&virt, theta);
    subspaces.iter().map(|s| null_energy(&s.noise, &a)).sum()
}

pub fn gca_music(
    subspaces: &[SubspaceDecomposition],
    sources: usize,
    opts: &SearchOptions,
) -> Result<(SpectrumGrid, DoaEstimate)> {
    let m = check_subspaces(subspaces, sources)?;
    let virt: Vec<usize> = (0..m).collect();
    let spectrum = SpectrumGrid::from_denominator(opts.grid_size, |t| {
        let a = steering_unchecked(&virt, t);
        subspaces.iter().map(|s| null_energy(&s.noise, &a)).sum()
    })?;
    package(Algorithm::Gca, spectrum, sources, opts, subspaces)
}

pub fn avca_music(
    subspaces: &[SubspaceDecomposition],
    sources: usize,
    opts: &SearchOptions,
) -> Result<(SpectrumGrid, DoaEstimate)> {
    let m = check_subspaces(subspaces, sources)?;
    let virt: Vec<usize> = (0..m).collect();
    let l = subspaces.len() as f64;
    let grid = uniform_grid(opts.grid_size)?;
    let values = grid
        .iter()
        .map(|&t| {
            let a = steering_unchecked(&virt, t);
            subspaces
                .iter()
                .map(|s| 1.0 / null_energy(&s.noise, &a).max(DENOMINATOR_FLOOR))
                .sum::<f64>()
                / l
        })
        .collect();
    package(Algorithm::Avca, SpectrumGrid { grid, values }, sources, opts, subspaces)
}

/// Physical-domain subspaces for G-MUSIC, one per subarray covariance.
pub fn physical_subspaces(covariances: &[CMatrix], layout: &TypeIILayout, sources: usize) -> Result<Vec<SubspaceDecomposition>> {
    let n = layout.base().sensor_count();
    if covariances.len() != layout.subarray_count() {
        return Err(invalid(format!(
            "{} covariances for {} subarrays",
            covariances.len(),
            layout.subarray_count()
        )));
    }
    if sources >= n {
        return Err(Error::TooManySources {
            sources,
            limit: n - 1,
        });
    }
    covariances
        .iter()
        .map(|r| {
            if r.shape() != (n, n) {
                return Err(invalid("covariance size does not match the subarray"));
            }
            SubspaceDecomposition::from_hermitian(r, sources)
        })
        .collect()
}

pub fn g_music(
    covariances: &[CMatrix],
    layout: &TypeIILayout,
    sources: usize,
    opts: &SearchOptions,
) -> Result<(SpectrumGrid, DoaEstimate)> {
    let subspaces = physical_subspaces(covariances, layout, sources)?;
    let positions: Vec<Vec<usize>> = (0..layout.subarray_count())
        .map(|l| layout.subarray_positions(l))
        .collect();
    let spectrum = SpectrumGrid::from_denominator(opts.grid_size, |t| {
        subspaces
            .iter()
            .zip(&positions)
            .map(|(s, p)| null_energy(&s.noise, &steering_unchecked(p, t)))
            .sum()
    })?;
    package(Algorithm::Gmusic, spectrum, sources, opts, &subspaces)
}

/// Runs one estimator on per-subarray covariances.
pub fn estimate(
    algorithm: Algorithm,
    covariances: &[CMatrix],
    layout: &TypeIILayout,
    sources: usize,
    rule: DedupRule,
    opts: &SearchOptions,
) -> Result<(SpectrumGrid, DoaEstimate)> {
    match algorithm {
        Algorithm::Gmusic => g_music(covariances, layout, sources, opts),
        Algorithm::Gca | Algorithm::Avca => {
            let subspaces = coarray_subspaces(covariances, layout, sources, rule)?;
            if algorithm == Algorithm::Gca {
                gca_music(&subspaces, sources, opts)
            } else {
                avca_music(&subspaces, sources, opts)
            }
        }
    }
}

/// Coarray subspaces for every subarray.
pub fn coarray_subspaces(
    covariances: &[CMatrix],
    layout: &TypeIILayout,
    sources: usize,
    rule: DedupRule,
) -> Result<Vec<SubspaceDecomposition>> {
    if covariances.len() != layout.subarray_count() {
        return Err(invalid(format!(
            "{} covariances for {} subarrays",
            covariances.len(),
            layout.subarray_count()
        )));
    }
    covariances
        .iter()
        .enumerate()
        .map(|(l, r)| coarray_subspace(r, layout.base(), rule, sources, l))
        .collect()
}

/// Stacked composite steering vector with per-block phase factors.
pub fn stacked_steering(blocks: &[CVector], phases: &[f64]) -> CVector {
    let dim: usize = blocks.iter().map(|b| b.len()).sum();
    let mut out = CVector::zeros(dim);
    let mut at = 0;
    for (b, &phi) in blocks.iter().zip(phases) {
        out.rows_mut(at, b.len())
            .copy_from(&(b * Complex64::from_polar(1.0, -phi)));
        at += b.len();
    }
    out
}
