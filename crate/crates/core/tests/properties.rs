use kct_core::assignment::linear_sum_assignment;
use kct_core::compare::{
    ks_two_sample, preserves_union, shuffled_sets, wasserstein, window_distance_matrix, EigenvalueSet,
};
use kct_core::rng::SeededRng;
use kct_core::spectral::{dmd_rrr, Complex64, DecompositionConfig};
use kct_core::synthetic::{linear_ensemble, stable_linear_system};
use kct_core::trajectory::{delay_embed, window, TrajectoryEnsemble, WindowSpec};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn ensemble(count: usize, dim: usize, length: usize, seed: u64) -> TrajectoryEnsemble {
    let mut rng = SeededRng::new(seed);
    TrajectoryEnsemble::new(
        (0..count)
            .map(|_| DMatrix::from_fn(dim, length, |_, _| rng.standard_normal()))
            .collect(),
    )
    .unwrap()
}

fn complex_set(n: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-2.0..2.0f64, -2.0..2.0f64), n)
        .prop_map(|v| v.into_iter().map(|(re, im)| Complex64::new(re, im)).collect())
}

fn omega(a: &[Complex64], b: &[Complex64]) -> f64 {
    let a = EigenvalueSet::new(a.to_vec(), "a").unwrap();
    let b = EigenvalueSet::new(b.to_vec(), "b").unwrap();
    wasserstein(&a, &b).unwrap().distance
}

fn brute_force_cost(cost: &DMatrix<f64>) -> f64 {
    fn go(cost: &DMatrix<f64>, row: usize, used: &mut Vec<bool>) -> f64 {
        if row == cost.nrows() {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for j in 0..cost.ncols() {
            if !used[j] {
                used[j] = true;
                best = best.min(cost[(row, j)] + go(cost, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(cost, 0, &mut vec![false; cost.ncols()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn embedding_shape(count in 1usize..5, dim in 1usize..4, length in 2usize..30, delays in 0usize..6) {
        let ens = ensemble(count, dim, length, 1);
        match delay_embed(&ens, delays) {
            Ok(pair) => {
                prop_assert!(length >= delays + 2);
                prop_assert_eq!(pair.z.shape(), (dim * (delays + 1), count * (length - delays - 1)));
                prop_assert_eq!(pair.z_prime.shape(), pair.z.shape());
            }
            Err(_) => prop_assert!(length < delays + 2),
        }
    }

    #[test]
    fn embedding_successor(count in 1usize..4, length in 3usize..20, delays in 0usize..3, seed in any::<u64>()) {
        prop_assume!(length >= delays + 2);
        let ens = ensemble(count, 2, length, seed);
        let pair = delay_embed(&ens, delays).unwrap();
        let per = length - delays - 1;
        for k in 0..count {
            for c in 0..per - 1 {
                prop_assert_eq!(pair.z_prime.column(k * per + c), pair.z.column(k * per + c + 1));
            }
            // newest sample sits in the last block
            let last = ens.trajectories()[k].column(delays);
            let first = pair.z.column(k * per).rows(2 * delays, 2).into_owned();
            prop_assert_eq!(first, last.into_owned());
        }
    }

    #[test]
    fn wasserstein_is_a_metric(n in 1usize..7, a in complex_set(6), b in complex_set(6), c in complex_set(6)) {
        let (a, b, c) = (&a[..n], &b[..n], &c[..n]);
        prop_assert_eq!(omega(a, a), 0.0);
        prop_assert!(omega(a, b) >= 0.0);
        prop_assert!((omega(a, b) - omega(b, a)).abs() <= 1e-12);
        prop_assert!(omega(a, c) <= omega(a, b) + omega(b, c) + 1e-12);
        let mut reversed = a.to_vec();
        reversed.reverse();
        prop_assert!(omega(a, &reversed) <= 1e-12);
    }

    #[test]
    fn assignment_matches_brute_force(n in 1usize..7, values in prop::collection::vec(0.0..10.0f64, 36)) {
        let cost = DMatrix::from_fn(n, n, |i, j| values[i * 6 + j]);
        let got = linear_sum_assignment(&cost).unwrap();
        let mut cols = got.row_to_col.clone();
        cols.sort_unstable();
        prop_assert_eq!(cols, (0..n).collect::<Vec<_>>());
        prop_assert!((got.cost - brute_force_cost(&cost)).abs() <= 1e-12 * got.cost.max(1.0));
    }

    #[test]
    fn shuffles_preserve_union(a in complex_set(5), b in complex_set(5), seed in any::<u64>(), index in 0u64..1000) {
        let sa = EigenvalueSet::new(a.clone(), "a").unwrap();
        let sb = EigenvalueSet::new(b.clone(), "b").unwrap();
        let cmp = wasserstein(&sa, &sb).unwrap();
        let (a2, b2) = shuffled_sets(&a, &b, &cmp.assignment, seed, index);
        prop_assert!(preserves_union(&a, &b, &a2, &b2));
    }

    #[test]
    fn ks_statistic_matches_scan(x in prop::collection::vec(-3i32..3, 1..20), y in prop::collection::vec(-3i32..3, 1..20)) {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let ecdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
        let scan = x
            .iter()
            .chain(&y)
            .map(|&t| (ecdf(&x, t) - ecdf(&y, t)).abs())
            .fold(0.0, f64::max);
        let got = ks_two_sample(&x, &y).unwrap();
        prop_assert!((got.statistic - scan).abs() <= 1e-15);
        prop_assert!((0.0..=1.0).contains(&got.p_value));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Data seen through an invertible change of coordinates has the same spectrum.
    #[test]
    fn spectrum_invariant_under_conjugation(seed in any::<u64>(), dim in 2usize..6) {
        let mut rng = SeededRng::new(seed);
        let sys = stable_linear_system(&mut rng, dim, 0.3, 0.99);
        let ens = linear_ensemble(&sys, dim + 1, 30, 0.0, &mut rng).unwrap();
        // diagonally dominant, hence invertible and well conditioned
        let h = DMatrix::from_fn(dim, dim, |i, j| {
            if i == j { 3.0 } else { 0.5 * rng.uniform_range(-1.0, 1.0) }
        });
        let mapped = TrajectoryEnsemble::new(ens.trajectories().iter().map(|t| &h * t).collect()).unwrap();
        let cfg = DecompositionConfig::with_rank(dim);
        let a = dmd_rrr(&delay_embed(&ens, 0).unwrap(), &cfg).unwrap();
        let b = dmd_rrr(&delay_embed(&mapped, 0).unwrap(), &cfg).unwrap();
        prop_assert!(omega(&a.eigenvalues, &b.eigenvalues) <= 1e-8);
    }

    #[test]
    fn window_matrix_symmetric(seed in any::<u64>(), windows in 2usize..5) {
        let ens = ensemble(3, 2, 20 * windows, seed);
        let specs: Vec<_> = window(&ens, WindowSpec::new(20, 20))
            .unwrap()
            .iter()
            .map(|w| dmd_rrr(&delay_embed(w, 1).unwrap(), &DecompositionConfig::with_rank(3)).unwrap())
            .collect();
        let m = window_distance_matrix(&specs).unwrap();
        prop_assert_eq!(m.distances.shape(), (windows, windows));
        for i in 0..windows {
            prop_assert_eq!(m.distances[(i, i)], 0.0);
            for j in 0..windows {
                prop_assert_eq!(m.distances[(i, j)], m.distances[(j, i)]);
            }
        }
    }
}
