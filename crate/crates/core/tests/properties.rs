use gcamusic::coarray::{covariance_to_coarray, covariance_to_coarray_at, spatial_smooth, DedupRule};
use gcamusic::estimators::{
    coarray_subspaces, estimate, gca_denominator, uniform_grid, Algorithm, SearchOptions,
};
use gcamusic::geometry::{build_mra, build_nested2, build_ula, compose_type2, ArrayGeometry};
use gcamusic::linalg::{fro_norm, CMatrix};
use gcamusic::sigmodel::{exact_covariance, trial_rng, Realization, SourceSet};
use gcamusic::Complex64;
use proptest::prelude::*;

fn arb_geometry() -> impl Strategy<Value = ArrayGeometry> {
    prop::collection::btree_set(0i64..40, 1..9)
        .prop_map(|s| ArrayGeometry::from_positions(s).unwrap())
}

fn arb_sources(max: usize) -> impl Strategy<Value = SourceSet> {
    prop::collection::btree_set(-900i32..900, 1..=max).prop_flat_map(|set| {
        let thetas: Vec<f64> = set.into_iter().map(|t| t as f64 / 1000.0).collect();
        let n = thetas.len();
        prop::collection::vec(0.1f64..3.0, n)
            .prop_map(move |p| SourceSet::new(thetas.clone(), p).unwrap())
    })
}

proptest! {
    #[test]
    fn weights_sum_to_n_squared_and_are_symmetric(g in arb_geometry()) {
        let c = g.coarray();
        let n = g.sensor_count();
        prop_assert_eq!(c.weights().iter().sum::<usize>(), n * n);
        prop_assert_eq!(c.weight(0), n);
        prop_assert_eq!(c.sdof() % 2, 1);
        for &lag in c.lags() {
            prop_assert_eq!(c.weight(lag), c.weight(-lag));
        }
    }

    #[test]
    fn exact_covariance_is_hermitian_with_trace_identity(
        g in arb_geometry(), s in arb_sources(4), noise in 0.0f64..2.0
    ) {
        let r = exact_covariance(g.positions(), &s, noise).unwrap();
        prop_assert!(fro_norm(&(&r - r.adjoint())) < 1e-12);
        let n = g.sensor_count() as f64;
        prop_assert!((r.trace().re - n * (s.total_power() + noise)).abs() < 1e-10 * n);
    }

    #[test]
    fn coarray_of_exact_covariance_is_conjugate_symmetric(
        g in arb_geometry(), s in arb_sources(4), noise in 0.0f64..2.0
    ) {
        let r = exact_covariance(g.positions(), &s, noise).unwrap();
        let coarray = g.coarray();
        for rule in [DedupRule::Average, DedupRule::FirstOccurrence] {
            let x = covariance_to_coarray(&r, &g, rule).unwrap();
            prop_assert_eq!(x.lags(), coarray.lags());
            let zero = x.value(0).unwrap();
            prop_assert!((zero.re - s.total_power() - noise).abs() < 1e-10);
            for &lag in x.lags() {
                let d = x.value(-lag).unwrap() - x.value(lag).unwrap().conj();
                prop_assert!(d.norm() < 1e-10);
            }
        }
    }

    #[test]
    fn permuting_sensors_leaves_coarray_unchanged(
        s in arb_sources(3), seed in any::<u64>()
    ) {
        let g = build_nested2(3, 3).unwrap();
        let r = exact_covariance(g.positions(), &s, 0.5).unwrap();
        let base = covariance_to_coarray(&r, &g, DedupRule::Average).unwrap();

        let n = g.sensor_count();
        let mut perm: Vec<usize> = (0..n).collect();
        // Fisher-Yates with a tiny LCG keyed by the seed.
        let mut state = seed | 1;
        for i in (1..n).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            perm.swap(i, (state >> 33) as usize % (i + 1));
        }
        let positions: Vec<usize> = perm.iter().map(|&i| g.positions()[i]).collect();
        let rp = CMatrix::from_fn(n, n, |a, b| r[(perm[a], perm[b])]);
        let x = covariance_to_coarray_at(&rp, &positions, DedupRule::Average).unwrap();
        prop_assert_eq!(x.lags(), base.lags());
        for (u, v) in x.values().iter().zip(base.values()) {
            prop_assert!((u - v).norm() < 1e-12);
        }
    }

    #[test]
    fn smoothed_covariance_is_hermitian_psd(seed in any::<u64>(), snr in -10.0f64..20.0) {
        let layout = compose_type2(&build_mra(6).unwrap(), 2, 1).unwrap();
        let s = SourceSet::equal_power(vec![-0.5, 0.1, 0.45]).unwrap();
        let mut rng = trial_rng(seed, 0);
        let real = Realization::draw(&mut rng, 2, 6, 3, 20, false);
        let covs = real
            .synthesize(&layout, &s, gcamusic::sigmodel::noise_power_for_snr(snr))
            .sample_covariances();
        for r in &covs {
            let x = covariance_to_coarray(r, layout.base(), DedupRule::Average).unwrap();
            let rss = spatial_smooth(&x, 0).unwrap();
            prop_assert_eq!(rss.window, 14);
            prop_assert!(fro_norm(&(&rss.matrix - rss.matrix.adjoint())) < 1e-12);
            let eig = gcamusic::linalg::hermitian_eigen(&rss.matrix);
            prop_assert!(eig.eigenvalues.iter().all(|&b| b >= -1e-10 * eig.eigenvalues[0]));
        }
    }

    #[test]
    fn exact_covariance_ignores_phase(phi in 0.0f64..std::f64::consts::TAU, s in arb_sources(3)) {
        // Rotating the steering matrix by a common phase leaves A R A^H fixed.
        let g = build_ula(5).unwrap();
        let r = exact_covariance(g.positions(), &s, 0.2).unwrap();
        let a = gcamusic::sigmodel::steering_matrix(g.positions(), &s).unwrap()
            * Complex64::from_polar(1.0, -phi);
        let p = CMatrix::from_diagonal(&complex_diag(s.powers()));
        let rotated = &a * p * a.adjoint() + CMatrix::identity(5, 5) * Complex64::from(0.2);
        prop_assert!(fro_norm(&(rotated - r)) < 1e-12);
    }
}

fn complex_diag(p: &[f64]) -> gcamusic::linalg::CVector {
    gcamusic::linalg::CVector::from_iterator(p.len(), p.iter().map(|&x| Complex64::from(x)))
}

#[test]
fn null_depth_under_exact_statistics() {
    let layout = compose_type2(&build_nested2(4, 3).unwrap(), 3, 1).unwrap();
    let truth = [-0.7, -0.5, -0.3, 0.3, 0.5, 0.7];
    let s = SourceSet::equal_power(truth.to_vec()).unwrap();
    let covs: Vec<CMatrix> = (0..3)
        .map(|l| exact_covariance(&layout.subarray_positions(l), &s, 1.0).unwrap())
        .collect();
    let subs = coarray_subspaces(&covs, &layout, 6, DedupRule::Average).unwrap();
    let mut dens: Vec<f64> = uniform_grid(2001)
        .unwrap()
        .iter()
        .map(|&t| gca_denominator(&subs, t))
        .collect();
    dens.sort_by(f64::total_cmp);
    let median = dens[dens.len() / 2];
    for t in truth {
        assert!(gca_denominator(&subs, t) <= 1e-6 * median, "theta {t}");
    }
}

#[test]
fn scaling_covariances_keeps_peaks() {
    let layout = compose_type2(&build_nested2(4, 3).unwrap(), 3, 1).unwrap();
    let s = SourceSet::equal_power(vec![-0.7, -0.5, -0.3, 0.3, 0.5, 0.7]).unwrap();
    let mut rng = trial_rng(3, 0);
    let real = Realization::draw(&mut rng, 3, 7, 6, 100, false);
    let covs = real.synthesize(&layout, &s, 0.5).sample_covariances();
    let scaled: Vec<CMatrix> = covs.iter().map(|r| r * Complex64::from(3.7)).collect();
    let opts = SearchOptions::default();
    for alg in [Algorithm::Gca, Algorithm::Avca, Algorithm::Gmusic] {
        let (_, a) = estimate(alg, &covs, &layout, 6, DedupRule::Average, &opts).unwrap();
        let (_, b) = estimate(alg, &scaled, &layout, 6, DedupRule::Average, &opts).unwrap();
        for (x, y) in a.thetas.iter().zip(&b.thetas) {
            assert!((x - y).abs() < 1e-9, "{alg}: {x} vs {y}");
        }
    }
}

#[test]
fn first_occurrence_and_average_agree_on_exact_input() {
    for g in [build_mra(7).unwrap(), build_nested2(4, 3).unwrap()] {
        let s = SourceSet::equal_power(vec![-0.2, 0.6]).unwrap();
        let r = exact_covariance(g.positions(), &s, 0.3).unwrap();
        let a = covariance_to_coarray(&r, &g, DedupRule::Average).unwrap();
        let f = covariance_to_coarray(&r, &g, DedupRule::FirstOccurrence).unwrap();
        for (u, v) in a.values().iter().zip(f.values()) {
            assert!((u - v).norm() < 1e-12);
        }
    }
}
