//! Sparse linear array geometries, difference coarrays and Type-II
//! multi-subarray compositions.
//!
//! Positions are integers in units of the minimum inter-sensor spacing and
//! are kept in canonical form: strictly increasing, first element zero.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::{Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest sensor count accepted by [`build_mra`].
pub const MRA_MAX_SENSORS: usize = 10;

/// A linear array in canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArrayGeometry {
    positions: Vec<usize>,
}

impl ArrayGeometry {
    /// Builds a geometry from arbitrary distinct positions. The result is
    /// sorted and translated so that the first sensor sits at zero.
    pub fn from_positions(positions: impl IntoIterator<Item = i64>) -> Result<Self> {
        let mut pos: Vec<i64> = positions.into_iter().collect();
        if pos.is_empty() {
            return Err(invalid("geometry needs at least one sensor"));
        }
        pos.sort_unstable();
        if pos.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate sensor positions"));
        }
        let first = pos[0];
        Ok(Self {
            positions: pos.into_iter().map(|p| (p - first) as usize).collect(),
        })
    }

    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn sensor_count(&self) -> usize {
        self.positions.len()
    }

    /// Largest position, κ.
    pub fn aperture(&self) -> usize {
        *self.positions.last().expect("non-empty by construction")
    }

    pub fn coarray(&self) -> CoarrayProfile {
        difference_coarray(self)
    }
}

impl fmt::Display for ArrayGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.positions.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

/// Difference set of a geometry together with its weight function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoarrayProfile {
    lags: Vec<i64>,
    weights: Vec<usize>,
    contiguous_half: usize,
}

impl CoarrayProfile {
    /// Sorted lags, symmetric about zero.
    pub fn lags(&self) -> &[i64] {
        &self.lags
    }

    /// Weights aligned with [`lags`](Self::lags).
    pub fn weights(&self) -> &[usize] {
        &self.weights
    }

    /// Number of sensor pairs producing `lag` (zero if absent).
    pub fn weight(&self, lag: i64) -> usize {
        self.lags
            .binary_search(&lag)
            .map(|i| self.weights[i])
            .unwrap_or(0)
    }

    pub fn contains(&self, lag: i64) -> bool {
        self.lags.binary_search(&lag).is_ok()
    }

    /// Largest κ_c with every lag in −κ_c..=κ_c present.
    pub fn contiguous_half(&self) -> usize {
        self.contiguous_half
    }

    /// Degrees of freedom, |D|.
    pub fn sdof(&self) -> usize {
        self.lags.len()
    }

    /// True when the coarray has no holes between its extremes.
    pub fn is_hole_free(&self) -> bool {
        self.lags.len() == 2 * self.contiguous_half + 1
    }

    /// Upper limit on the number of sources the smoothed coarray can resolve.
    pub fn identifiable_sources(&self) -> usize {
        self.contiguous_half
    }
}

pub fn difference_coarray(geom: &ArrayGeometry) -> CoarrayProfile {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &m in geom.positions() {
        for &n in geom.positions() {
            *counts.entry(m as i64 - n as i64).or_default() += 1;
        }
    }
    let mut contiguous_half = 0usize;
    while counts.contains_key(&(contiguous_half as i64 + 1)) {
        contiguous_half += 1;
    }
    let (lags, weights) = counts.into_iter().unzip();
    CoarrayProfile {
        lags,
        weights,
        contiguous_half,
    }
}

pub fn build_ula(n: usize) -> Result<ArrayGeometry> {
    if n == 0 {
        return Err(invalid("ULA needs at least one sensor"));
    }
    Ok(ArrayGeometry {
        positions: (0..n).collect(),
    })
}

/// Two-level nested array: a dense level `0..n1` followed by `n2` sensors at
/// spacing `n1 + 1` (the usual 1-based construction shifted down by one).
pub fn build_nested2(n1: usize, n2: usize) -> Result<ArrayGeometry> {
    if n1 == 0 || n2 == 0 {
        return Err(invalid("nested array level sizes must be positive"));
    }
    let positions = (0..n1).chain((1..=n2).map(|k| k * (n1 + 1) - 1)).collect();
    Ok(ArrayGeometry { positions })
}

/// Second-order super nested array. Rearranges the dense level of
/// [`build_nested2`] so that small-lag weights drop while the difference
/// coarray stays the same. The construction is checked against the parent
/// nested coarray and rejected if the two differ.
pub fn build_super_nested2(n1: usize, n2: usize) -> Result<ArrayGeometry> {
    if n1 < 3 || n2 < 2 {
        return Err(invalid(format!(
            "super nested array needs n1 >= 3 and n2 >= 2, got ({n1}, {n2})"
        )));
    }
    let r = (n1 / 4) as i64;
    let (a1, b1, a2, b2) = match n1 % 4 {
        0 => (r, r - 1, r - 1, r - 2),
        1 => (r, r - 1, r, r - 2),
        2 => (r + 1, r - 1, r, r - 2),
        _ => (r, r, r, r - 1),
    };
    let s = n1 as i64 + 1;
    // 1-based positions.
    let mut pos: Vec<i64> = Vec::with_capacity(n1 + n2);
    pos.extend((0..=a1).map(|l| 1 + 2 * l));
    pos.extend((0..=b1).map(|l| s - (1 + 2 * l)));
    pos.extend((0..=a2).map(|l| s + 2 + 2 * l));
    pos.extend((0..=b2).map(|l| 2 * s - (2 + 2 * l)));
    pos.extend((2..=n2 as i64).map(|l| l * s));
    pos.push(n2 as i64 * s - 1);

    let geom = ArrayGeometry::from_positions(pos)?;
    let parent = build_nested2(n1, n2)?;
    if geom.sensor_count() != n1 + n2 || geom.coarray().lags() != parent.coarray().lags() {
        return Err(invalid(format!(
            "super nested construction does not preserve the nested coarray for ({n1}, {n2})"
        )));
    }
    Ok(geom)
}

/// Minimum redundancy array: the largest-aperture `n`-sensor array whose
/// difference coarray is hole-free. Ties at the maximal aperture are broken by
/// the lexicographically smallest position sequence. Results are found by
/// exhaustive search and cached.
pub fn build_mra(n: usize) -> Result<ArrayGeometry> {
    if n == 0 {
        return Err(invalid("MRA needs at least one sensor"));
    }
    if n > MRA_MAX_SENSORS {
        return Err(Error::Unsupported(format!(
            "MRA search is limited to {MRA_MAX_SENSORS} sensors, got {n}"
        )));
    }
    static CACHE: OnceLock<Mutex<HashMap<usize, Vec<usize>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(p) = cache.lock().unwrap().get(&n) {
        return Ok(ArrayGeometry { positions: p.clone() });
    }
    let positions = search_mra(n);
    cache.lock().unwrap().insert(n, positions.clone());
    Ok(ArrayGeometry { positions })
}

fn search_mra(n: usize) -> Vec<usize> {
    if n == 1 {
        return vec![0];
    }
    let max_aperture = n * (n - 1) / 2;
    (n - 1..=max_aperture)
        .rev()
        .find_map(|aperture| hole_free_with_aperture(n, aperture))
        .expect("the ULA is always hole-free")
}

/// Lexicographically smallest `n`-sensor hole-free array spanning exactly
/// `0..=aperture`, if one exists.
pub(crate) fn hole_free_with_aperture(n: usize, aperture: usize) -> Option<Vec<usize>> {
    assert!(n >= 2 && aperture < 64);
    if aperture + 1 < n {
        return None;
    }
    let full: u64 = (u64::MAX >> (63 - aperture)) & !1;
    let mut search = HoleFreeSearch {
        aperture,
        full,
        placed: vec![0, aperture],
    };
    let occupied = 1u64 | (1u64 << aperture);
    let covered = 1u64 << aperture;
    if search.dfs(0, n - 2, occupied, covered) {
        let mut p = search.placed;
        p.sort_unstable();
        Some(p)
    } else {
        None
    }
}

struct HoleFreeSearch {
    aperture: usize,
    full: u64,
    placed: Vec<usize>,
}

impl HoleFreeSearch {
    /// `occupied` marks positions in use, `covered` marks lags already produced.
    fn dfs(&mut self, last: usize, remaining: usize, occupied: u64, covered: u64) -> bool {
        if remaining == 0 {
            return covered == self.full;
        }
        let missing = self.full & !covered;
        let count = self.placed.len();
        let max_new = remaining * count + remaining * (remaining - 1) / 2;
        if missing.count_ones() as usize > max_new {
            return false;
        }
        // Lags too long to be formed by two future sensors must pair a future
        // sensor with an existing one.
        let span = self.aperture.saturating_sub(last + 2);
        let window = window_mask(last + 1, self.aperture - 1);
        let mut long = missing & !window_mask(0, span);
        while long != 0 {
            let g = long.trailing_zeros() as usize;
            long &= long - 1;
            if ((occupied << g) | (occupied >> g)) & window == 0 {
                return false;
            }
        }
        for q in last + 1..=self.aperture - remaining {
            let mut next = covered;
            for &x in &self.placed {
                next |= 1u64 << x.abs_diff(q);
            }
            self.placed.push(q);
            if self.dfs(q, remaining - 1, occupied | (1u64 << q), next) {
                return true;
            }
            self.placed.pop();
        }
        false
    }
}

fn window_mask(lo: usize, hi: usize) -> u64 {
    if lo > hi {
        return 0;
    }
    let upper = if hi >= 63 { u64::MAX } else { (1u64 << (hi + 1)) - 1 };
    upper & !((1u64 << lo) - 1)
}

/// Named base geometry families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Ula,
    Naq2,
    Snaq2,
    Mra,
}

impl GeometryKind {
    pub fn name(self) -> &'static str {
        match self {
            GeometryKind::Ula => "ula",
            GeometryKind::Naq2 => "naq2",
            GeometryKind::Snaq2 => "snaq2",
            GeometryKind::Mra => "mra",
        }
    }

    /// Builds an `n`-sensor base array. Nested families take explicit level
    /// sizes when given, otherwise `n1 = n - n / 2`, `n2 = n / 2`.
    pub fn build(self, n: usize, levels: Option<(usize, usize)>) -> Result<ArrayGeometry> {
        let (n1, n2) = levels.unwrap_or((n - n / 2, n / 2));
        match self {
            GeometryKind::Ula => build_ula(n),
            GeometryKind::Naq2 => build_nested2(n1, n2),
            GeometryKind::Snaq2 => build_super_nested2(n1, n2),
            GeometryKind::Mra => build_mra(n),
        }
    }
}

impl fmt::Display for GeometryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for GeometryKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ula" => Ok(GeometryKind::Ula),
            "naq2" | "nested" => Ok(GeometryKind::Naq2),
            "snaq2" | "super-nested" => Ok(GeometryKind::Snaq2),
            "mra" => Ok(GeometryKind::Mra),
            other => Err(invalid(format!("unknown geometry kind '{other}'"))),
        }
    }
}

/// `L` copies of a base subarray laid side by side, separated by `μ`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypeIILayout {
    base: ArrayGeometry,
    subarrays: usize,
    mu: usize,
    offsets: Vec<usize>,
}

impl TypeIILayout {
    pub fn base(&self) -> &ArrayGeometry {
        &self.base
    }

    pub fn subarray_count(&self) -> usize {
        self.subarrays
    }

    pub fn mu(&self) -> usize {
        self.mu
    }

    /// `offset_l = (l - 1)(κ + μ)`.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Absolute positions of subarray `l` (0-based index).
    pub fn subarray_positions(&self, l: usize) -> Vec<usize> {
        let off = self.offsets[l];
        self.base.positions().iter().map(|p| p + off).collect()
    }

    /// Sorted union of all subarrays.
    pub fn whole(&self) -> ArrayGeometry {
        let positions = (0..self.subarrays)
            .flat_map(|l| self.subarray_positions(l))
            .collect();
        ArrayGeometry { positions }
    }

    /// Degrees of freedom of the whole array, from its own difference set.
    pub fn whole_dof(&self) -> usize {
        self.whole().coarray().sdof()
    }
}

pub fn compose_type2(base: &ArrayGeometry, subarrays: usize, mu: usize) -> Result<TypeIILayout> {
    if subarrays == 0 {
        return Err(invalid("need at least one subarray"));
    }
    if mu == 0 {
        return Err(invalid("inter-subarray spacing mu must be at least 1"));
    }
    let step = base.aperture() + mu;
    Ok(TypeIILayout {
        base: base.clone(),
        subarrays,
        mu,
        offsets: (0..subarrays).map(|l| l * step).collect(),
    })
}

/// Whole-array DoF predicted from the subarray DoF. For `1 <= mu <= kappa`
/// this is the upper bound `L(sDoF-1) + 2(L-1)mu + 1`, attained when the
/// subarray coarray is hole-free; for `mu > kappa` it is `(2L-1) sDoF`.
pub fn dof_bound(subarrays: usize, sdof: usize, mu: usize, kappa: usize) -> usize {
    if mu <= kappa {
        subarrays * (sdof - 1) + 2 * (subarrays - 1) * mu + 1
    } else {
        (2 * subarrays - 1) * sdof
    }
}
