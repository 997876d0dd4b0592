//! Narrowband signal model for partially-calibrated subarrays.
//!
//! Subarray `l` observes `x_l(t) = e^{-jφ_l} A_l s(t) + n_l(t)` with
//! half-wavelength element spacing, so a source at normalized direction θ
//! produces phase `π n θ` at integer position `n`.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};
use crate::geometry::TypeIILayout;
use crate::linalg::{CMatrix, CVector};

/// Uncorrelated narrowband sources.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    thetas: Vec<f64>,
    powers: Vec<f64>,
}

impl SourceSet {
    pub fn new(thetas: Vec<f64>, powers: Vec<f64>) -> Result<Self> {
        if thetas.is_empty() {
            return Err(invalid("at least one source is required"));
        }
        if thetas.len() != powers.len() {
            return Err(invalid(format!(
                "{} directions but {} powers",
                thetas.len(),
                powers.len()
            )));
        }
        for &t in &thetas {
            check_theta(t)?;
        }
        if thetas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("source directions must be strictly increasing"));
        }
        if powers.iter().any(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(invalid("source powers must be positive"));
        }
        Ok(Self { thetas, powers })
    }

    /// Unit-power sources.
    pub fn equal_power(thetas: Vec<f64>) -> Result<Self> {
        let powers = vec![1.0; thetas.len()];
        Self::new(thetas, powers)
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn powers(&self) -> &[f64] {
        &self.powers
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn total_power(&self) -> f64 {
        self.powers.iter().sum()
    }
}

/// Accepts the closed interval; θ = 1 aliases θ = -1 at half-wavelength spacing.
fn check_theta(theta: f64) -> Result<()> {
    if (-1.0..=1.0).contains(&theta) {
        Ok(())
    } else {
        Err(invalid(format!("direction {theta} outside [-1, 1]")))
    }
}

/// Array response `exp(jπnθ)` at the given integer positions.
pub fn steering_vector(positions: &[usize], theta: f64) -> Result<CVector> {
    check_theta(theta)?;
    Ok(steering_unchecked(positions, theta))
}

pub(crate) fn steering_unchecked(positions: &[usize], theta: f64) -> CVector {
    DVector::from_iterator(
        positions.len(),
        positions
            .iter()
            .map(|&n| Complex64::from_polar(1.0, PI * n as f64 * theta)),
    )
}

/// Steering vectors stacked as columns, in source order.
pub fn steering_matrix(positions: &[usize], sources: &SourceSet) -> Result<CMatrix> {
    let cols: Vec<CVector> = sources
        .thetas()
        .iter()
        .map(|&t| steering_vector(positions, t))
        .collect::<Result<_>>()?;
    Ok(CMatrix::from_columns(&cols))
}

/// `A diag(p) A^H + σ_n² I`.
pub fn exact_covariance(positions: &[usize], sources: &SourceSet, noise_power: f64) -> Result<CMatrix> {
    if !(noise_power >= 0.0 && noise_power.is_finite()) {
        return Err(invalid("noise power must be non-negative"));
    }
    let a = steering_matrix(positions, sources)?;
    let mut weighted = a.clone();
    for (mut col, &p) in weighted.column_iter_mut().zip(sources.powers()) {
        col *= Complex64::from(p);
    }
    let n = positions.len();
    Ok(weighted * a.adjoint() + CMatrix::identity(n, n) * Complex64::from(noise_power))
}

/// `(1/T) Σ_t x(t) x(t)^H` over the columns of `x`.
pub fn sample_covariance(x: &CMatrix) -> Result<CMatrix> {
    if x.ncols() == 0 || x.nrows() == 0 {
        return Err(invalid("sample covariance of an empty batch"));
    }
    let t = x.ncols() as f64;
    Ok((x * x.adjoint()).unscale(t))
}

/// Noise power giving the requested per-source SNR for unit-power sources.
pub fn noise_power_for_snr(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// One simulated acquisition.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub layout: TypeIILayout,
    pub sources: SourceSet,
    pub noise_power: f64,
    pub snapshots: usize,
    pub seed: u64,
    /// Fix φ_1 = 0 so the first subarray is the phase reference.
    pub pin_first_phase: bool,
}

/// Per-subarray snapshot matrices and the phase offsets that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBatch {
    pub data: Vec<CMatrix>,
    pub phase_shifts: Vec<f64>,
}

impl SnapshotBatch {
    pub fn sample_covariances(&self) -> Vec<CMatrix> {
        self.data
            .iter()
            .map(|x| sample_covariance(x).expect("batches hold at least one snapshot"))
            .collect()
    }
}

/// Raw Gaussian draws behind a batch, before scaling and phase rotation.
/// Keeping them lets the same realization be replayed at a different noise
/// power or with different phase offsets.
#[derive(Debug, Clone)]
pub struct Realization {
    pub phase_shifts: Vec<f64>,
    /// Unit-variance circular source waveforms, D x T.
    pub signals: CMatrix,
    /// Unit-variance circular noise, one N x T matrix per subarray.
    pub noise: Vec<CMatrix>,
}

/// Independent per-trial RNG stream: ChaCha8 keyed by the master seed, with
/// the trial index selecting the stream. Trials never share state, so results
/// do not depend on scheduling.
pub fn trial_rng(master_seed: u64, trial_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial_index);
    rng
}

fn circular_gaussian<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    // Column-major fill keeps the draw order independent of matrix layout.
    CMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        Complex64::new(re * s, im * s)
    })
}

impl Realization {
    /// Draws phases, then source waveforms, then per-subarray noise.
    pub fn draw<R: Rng + ?Sized>(
        rng: &mut R,
        subarrays: usize,
        sensors: usize,
        sources: usize,
        snapshots: usize,
        pin_first_phase: bool,
    ) -> Self {
        let phase_shifts = (0..subarrays)
            .map(|l| {
                let phi = rng.random_range(0.0..2.0 * PI);
                if l == 0 && pin_first_phase {
                    0.0
                } else {
                    phi
                }
            })
            .collect();
        let signals = circular_gaussian(rng, sources, snapshots);
        let noise = (0..subarrays)
            .map(|_| circular_gaussian(rng, sensors, snapshots))
            .collect();
        Self {
            phase_shifts,
            signals,
            noise,
        }
    }

    /// Builds the received data for the given layout, sources and noise power.
    ///
    /// The common phase multiplies the whole subarray output including its
    /// noise. Circular noise is invariant in distribution under that rotation,
    /// so this matches the per-subarray model while keeping every
    /// per-subarray statistic a function of the unrotated data only.
    pub fn synthesize(&self, layout: &TypeIILayout, sources: &SourceSet, noise_power: f64) -> SnapshotBatch {
        let mut signals = self.signals.clone();
        for (mut row, &p) in signals.row_iter_mut().zip(sources.powers()) {
            row *= Complex64::from(p.sqrt());
        }
        let noise_scale = Complex64::from(noise_power.sqrt());
        let data = (0..layout.subarray_count())
            .map(|l| {
                let a = steering_matrix(&layout.subarray_positions(l), sources)
                    .expect("sources validated at construction");
                let clean = a * &signals + &self.noise[l] * noise_scale;
                clean * Complex64::from_polar(1.0, -self.phase_shifts[l])
            })
            .collect();
        SnapshotBatch {
            data,
            phase_shifts: self.phase_shifts.clone(),
        }
    }
}

pub fn simulate_snapshots(scenario: &Scenario) -> Result<SnapshotBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    simulate_with_rng(scenario, &mut rng)
}

pub fn simulate_with_rng<R: Rng + ?Sized>(scenario: &Scenario, rng: &mut R) -> Result<SnapshotBatch> {
    if scenario.snapshots == 0 {
        return Err(invalid("at least one snapshot is required"));
    }
    if !(scenario.noise_power >= 0.0 && scenario.noise_power.is_finite()) {
        return Err(invalid("noise power must be non-negative"));
    }
    let layout = &scenario.layout;
    let real = Realization::draw(
        rng,
        layout.subarray_count(),
        layout.base().sensor_count(),
        scenario.sources.len(),
        scenario.snapshots,
        scenario.pin_first_phase,
    );
    Ok(real.synthesize(layout, &scenario.sources, scenario.noise_power))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_nested2, build_ula, compose_type2};
    use crate::linalg::fro_norm;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    #[test]
    fn steering_examples() {
        let v = steering_vector(&[0, 3, 7], 0.0).unwrap();
        assert!(v.iter().all(|z| close(*z, c(1.0, 0.0), 0.0)));

        let v = steering_vector(&[1], 1.0).unwrap();
        assert!(close(v[0], c(-1.0, 0.0), 1e-15));

        let v = steering_vector(&[0, 2], 0.5).unwrap();
        assert!(close(v[0], c(1.0, 0.0), 1e-15));
        assert!(close(v[1], c(-1.0, 0.0), 1e-15));

        assert!(steering_vector(&[0, 1], 1.5).is_err());
        assert!(steering_vector(&[0, 1], f64::NAN).is_err());
    }

    #[test]
    fn steering_matrix_examples() {
        let one = SourceSet::equal_power(vec![0.3]).unwrap();
        let m = steering_matrix(&[0, 1, 4], &one).unwrap();
        assert_eq!(m.column(0).into_owned(), steering_vector(&[0, 1, 4], 0.3).unwrap());

        let two = SourceSet::equal_power(vec![0.0, 1.0]).unwrap();
        let m = steering_matrix(&[0, 1], &two).unwrap();
        let want = [c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)];
        for (i, w) in want.iter().enumerate() {
            assert!(close(m[(i / 2, i % 2)], *w, 1e-15));
        }

        assert!(SourceSet::equal_power(vec![]).is_err());
        assert!(SourceSet::equal_power(vec![0.1, 0.1]).is_err());
        assert!(SourceSet::new(vec![0.1], vec![0.0]).is_err());
    }

    #[test]
    fn exact_covariance_examples() {
        let s = SourceSet::equal_power(vec![0.0]).unwrap();
        let r = exact_covariance(&[0, 1], &s, 1.0).unwrap();
        let want = CMatrix::from_row_slice(2, 2, &[c(2.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(2.0, 0.0)]);
        assert!(fro_norm(&(r - want)) < 1e-15);

        let s = SourceSet::equal_power(vec![0.37]).unwrap();
        let r = exact_covariance(&[0, 1, 4, 6], &s, 0.0).unwrap();
        let a = steering_vector(&[0, 1, 4, 6], 0.37).unwrap();
        assert!(fro_norm(&(r - &a * a.adjoint())) < 1e-14);

        let s = SourceSet::new(vec![0.2], vec![1e-12]).unwrap();
        let r = exact_covariance(&[0, 1, 2], &s, 1.0).unwrap();
        assert!(fro_norm(&(r - CMatrix::identity(3, 3))) < 1e-11);
    }

    #[test]
    fn exact_covariance_trace_and_hermitian() {
        let pos = [0, 1, 2, 3, 4, 9, 14];
        let s = SourceSet::new(vec![-0.5, 0.1, 0.6], vec![1.0, 2.0, 0.5]).unwrap();
        let r = exact_covariance(&pos, &s, 0.3).unwrap();
        let tr: Complex64 = r.trace();
        assert!((tr.re - 7.0 * (3.5 + 0.3)).abs() < 1e-12);
        assert!(fro_norm(&(&r - r.adjoint())) < 1e-14);
        for i in 0..7 {
            assert!((r[(i, i)].re - 3.8).abs() < 1e-12);
        }
    }

    #[test]
    fn sample_covariance_examples() {
        let x = CMatrix::from_column_slice(2, 1, &[c(1.0, 1.0), c(0.0, 2.0)]);
        let r = sample_covariance(&x).unwrap();
        assert!(fro_norm(&(&r - &x * x.adjoint())) < 1e-15);

        // Orthogonal equal-norm columns give a scaled identity.
        let x = CMatrix::from_row_slice(2, 2, &[c(1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(-1.0, 0.0)]);
        let r = sample_covariance(&x).unwrap();
        assert!(fro_norm(&(r - CMatrix::identity(2, 2))) < 1e-15);

        assert!(sample_covariance(&CMatrix::zeros(3, 0)).is_err());
    }

    #[test]
    fn global_phase_leaves_sample_covariance_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = circular_gaussian(&mut rng, 4, 20);
        let r0 = sample_covariance(&x).unwrap();
        let r1 = sample_covariance(&(&x * Complex64::from_polar(1.0, 2.1))).unwrap();
        assert!(fro_norm(&(r1 - &r0)) < 1e-14 * fro_norm(&r0));
    }

    fn scenario(noise_power: f64, snapshots: usize, seed: u64) -> Scenario {
        Scenario {
            layout: compose_type2(&build_nested2(2, 2).unwrap(), 2, 1).unwrap(),
            sources: SourceSet::equal_power(vec![0.25]).unwrap(),
            noise_power,
            snapshots,
            seed,
            pin_first_phase: false,
        }
    }

    #[test]
    fn noiseless_single_source_is_collinear_with_steering() {
        let sc = scenario(0.0, 1, 3);
        let batch = simulate_snapshots(&sc).unwrap();
        for (l, x) in batch.data.iter().enumerate() {
            let a = steering_vector(&sc.layout.subarray_positions(l), 0.25).unwrap();
            let coef = x[0] / a[0];
            let resid = x.column(0) - &a * coef;
            assert!(resid.norm() < 1e-13);
        }
    }

    #[test]
    fn simulation_is_deterministic() {
        let a = simulate_snapshots(&scenario(0.5, 8, 11)).unwrap();
        let b = simulate_snapshots(&scenario(0.5, 8, 11)).unwrap();
        assert_eq!(a, b);
        let c = simulate_snapshots(&scenario(0.5, 8, 12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn pinned_first_phase() {
        let mut sc = scenario(0.5, 4, 1);
        sc.pin_first_phase = true;
        let b = simulate_snapshots(&sc).unwrap();
        assert_eq!(b.phase_shifts[0], 0.0);
        assert!(b.phase_shifts[1] > 0.0);
        assert!(b.phase_shifts.iter().all(|&p| (0.0..2.0 * PI).contains(&p)));
    }

    #[test]
    fn trial_streams_differ() {
        let mut a = trial_rng(5, 0);
        let mut b = trial_rng(5, 1);
        let x: u64 = a.random();
        let y: u64 = b.random();
        assert_ne!(x, y);
        let mut a2 = trial_rng(5, 0);
        assert_eq!(x, a2.random::<u64>());
    }

    #[test]
    fn snr_convention() {
        assert!((noise_power_for_snr(0.0) - 1.0).abs() < 1e-15);
        assert!((noise_power_for_snr(10.0) - 0.1).abs() < 1e-15);
        assert!((noise_power_for_snr(-10.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_batches() {
        assert!(simulate_snapshots(&scenario(1.0, 0, 1)).is_err());
        let layout = compose_type2(&build_ula(3).unwrap(), 1, 1).unwrap();
        let sc = Scenario { layout, ..scenario(-1.0, 3, 1) };
        assert!(simulate_snapshots(&sc).is_err());
    }
}
