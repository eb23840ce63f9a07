//! Comparing Koopman spectra: order-2 Wasserstein distance between eigenvalue
//! multisets, subset (semi-conjugacy) matching, the paired shuffle control,
//! the two-sample Kolmogorov–Smirnov test and window-by-window distance
//! matrices.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::assignment::linear_sum_assignment;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::spectral::{Complex64, SpectralDecomposition};
use crate::trajectory::Meta;

/// Default number of shuffles for [`shuffle_control`].
pub const DEFAULT_SHUFFLES: usize = 100;
/// Floor applied to distances before taking log10.
pub const LOG10_FLOOR: f64 = 1e-16;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenvalueSet {
    values: Vec<Complex64>,
    pub label: String,
    pub meta: Meta,
}

impl EigenvalueSet {
    pub fn new(values: Vec<Complex64>, label: impl Into<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("eigenvalue set"));
        }
        if values.iter().any(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::NonFinite("eigenvalue set".into()));
        }
        Ok(Self {
            values,
            label: label.into(),
            meta: Meta::new(),
        })
    }

    /// Convenience for real-valued sets.
    pub fn from_reals(values: &[f64], label: impl Into<String>) -> Result<Self> {
        Self::new(values.iter().map(|&v| Complex64::new(v, 0.0)).collect(), label)
    }

    pub fn from_decomposition(dec: &SpectralDecomposition, label: impl Into<String>) -> Result<Self> {
        let mut set = Self::new(dec.eigenvalues.clone(), label)?;
        set.meta = dec.meta.clone();
        Ok(set)
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShuffleSummary {
    pub n_shuff: usize,
    pub seed: u64,
    /// Number of shuffles with `ω' >= ω`.
    pub count_ge: usize,
    /// `count_ge / n_shuff`.
    pub frac_ge: f64,
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumComparison {
    /// `ω`, the order-2 Wasserstein distance.
    pub distance: f64,
    /// `assignment[i]` is the index in the second set matched with element `i` of the first.
    pub assignment: Vec<usize>,
    pub shuffle: Option<ShuffleSummary>,
    pub labels: (String, String),
    pub meta: Meta,
}

fn squared_cost(a: &[Complex64], b: &[Complex64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| (a[i] - b[j]).norm_sqr())
}

fn distance_and_assignment(a: &[Complex64], b: &[Complex64]) -> Result<(f64, Vec<usize>)> {
    if a.len() != b.len() {
        return Err(Error::Cardinality(format!(
            "eigenvalue sets have sizes {} and {}; use semi_conjugacy for unequal sizes",
            a.len(),
            b.len()
        )));
    }
    let sol = linear_sum_assignment(&squared_cost(a, b))?;
    Ok(((sol.cost / a.len() as f64).sqrt(), sol.row_to_col))
}

/// `ω = sqrt( (1/N) min_σ Σ_i |a_i − b_σ(i)|² )`, the order-2 Wasserstein
/// distance between two equal-size eigenvalue multisets in the complex plane.
pub fn wasserstein(a: &EigenvalueSet, b: &EigenvalueSet) -> Result<SpectrumComparison> {
    let (distance, assignment) = distance_and_assignment(a.values(), b.values())?;
    Ok(SpectrumComparison {
        distance,
        assignment,
        shuffle: None,
        labels: (a.label.clone(), b.label.clone()),
        meta: Meta::new(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemiConjugacy {
    pub subset: bool,
    /// `(index in small, index in big)` for each element of the smaller set.
    pub matched_pairs: Vec<(usize, usize)>,
    /// Distance of each matched pair, in the order of `matched_pairs`.
    pub pair_distances: Vec<f64>,
    pub max_residual: f64,
}

/// Tests whether `small` is (within `tol`) a subset of `big`.
///
/// `small` is matched into `big` by a rectangular assignment minimizing total
/// squared distance; the verdict holds when every matched pair is within `tol`.
pub fn semi_conjugacy(big: &EigenvalueSet, small: &EigenvalueSet, tol: f64) -> Result<SemiConjugacy> {
    if small.len() >= big.len() {
        return Err(Error::Cardinality(format!(
            "subset test needs the small set ({}) to be strictly smaller than the big set ({})",
            small.len(),
            big.len()
        )));
    }
    if !(tol >= 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be non-negative, got {tol}")));
    }
    let sol = linear_sum_assignment(&squared_cost(small.values(), big.values()))?;
    let matched_pairs: Vec<(usize, usize)> = sol.row_to_col.iter().copied().enumerate().collect();
    let pair_distances: Vec<f64> = matched_pairs
        .iter()
        .map(|&(i, j)| (small.values()[i] - big.values()[j]).norm())
        .collect();
    let max_residual = pair_distances.iter().copied().fold(0.0, f64::max);
    Ok(SemiConjugacy {
        subset: max_residual <= tol,
        matched_pairs,
        pair_distances,
        max_residual,
    })
}

/// One draw of the paired shuffle: each matched pair `(a_i, b_σ(i))` is kept
/// in place or swapped between the two sets with probability 1/2.
///
/// Shuffle `index` uses its own RNG stream under `seed`, so draws do not
/// depend on evaluation order.
pub fn shuffled_sets(
    a: &[Complex64],
    b: &[Complex64],
    assignment: &[usize],
    seed: u64,
    index: u64,
) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut rng = SeededRng::for_stream(seed, index);
    a.iter()
        .zip(assignment)
        .map(|(&ai, &j)| {
            let bj = b[j];
            if rng.coin() {
                (ai, bj)
            } else {
                (bj, ai)
            }
        })
        .unzip()
}

fn bits_sorted(values: impl Iterator<Item = Complex64>) -> Vec<(u64, u64)> {
    let mut v: Vec<(u64, u64)> = values.map(|c| (c.re.to_bits(), c.im.to_bits())).collect();
    v.sort_unstable();
    v
}

/// True when `a' ∪ b'` equals `a ∪ b` as multisets (bitwise).
pub fn preserves_union(
    a: &[Complex64],
    b: &[Complex64],
    a_shuf: &[Complex64],
    b_shuf: &[Complex64],
) -> bool {
    bits_sorted(a.iter().chain(b).copied()) == bits_sorted(a_shuf.iter().chain(b_shuf).copied())
}

/// Wasserstein distance plus the paired shuffle null distribution.
pub fn shuffle_control(
    a: &EigenvalueSet,
    b: &EigenvalueSet,
    n_shuff: usize,
    seed: u64,
) -> Result<SpectrumComparison> {
    if n_shuff == 0 {
        return Err(Error::InvalidConfig("n_shuff must be at least 1".into()));
    }
    let mut cmp = wasserstein(a, b)?;
    let distances: Vec<f64> = (0..n_shuff as u64)
        .into_par_iter()
        .map(|index| {
            let (a2, b2) = shuffled_sets(a.values(), b.values(), &cmp.assignment, seed, index);
            assert!(
                preserves_union(a.values(), b.values(), &a2, &b2),
                "shuffle {index} changed the eigenvalue multiset"
            );
            distance_and_assignment(&a2, &b2).map(|(d, _)| d)
        })
        .collect::<Result<_>>()?;
    let count_ge = distances.iter().filter(|&&d| d >= cmp.distance).count();
    cmp.shuffle = Some(ShuffleSummary {
        n_shuff,
        seed,
        count_ge,
        frac_ge: count_ge as f64 / n_shuff as f64,
        distances,
    });
    Ok(cmp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        // Jacobi-theta form converges fast for small arguments.
        let y = -std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let sum: f64 = (1..=6)
            .map(|k| {
                let odd = (2 * k - 1) as f64;
                (odd * odd * y).exp()
            })
            .sum();
        1.0 - (std::f64::consts::TAU).sqrt() / lambda * sum
    } else {
        let sum: f64 = (1..=100)
            .map(|k| {
                let kf = k as f64;
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign * (-2.0 * kf * kf * lambda * lambda).exp()
            })
            .sum();
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// `Q_KS(sqrt(n_e) D)`, `n_e = n m / (n + m)`.
pub fn ks_two_sample(x: &[f64], y: &[f64]) -> Result<KsResult> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("KS sample"));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("KS sample".into()));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n || j < m {
        let next = match (xs.get(i), ys.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        while i < n && xs[i] <= next {
            i += 1;
        }
        while j < m && ys[j] <= next {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_e = (n * m) as f64 / (n + m) as f64;
    Ok(KsResult {
        statistic: d,
        p_value: kolmogorov_survival(n_e.sqrt() * d),
    })
}

pub fn clamped_log10(d: f64) -> f64 {
    d.max(LOG10_FLOOR).log10()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowDistances {
    /// One label per decomposition (`t1:t2` window label, or its index).
    pub labels: Vec<String>,
    pub distances: DMatrix<f64>,
    pub log10: DMatrix<f64>,
}

/// Pairwise Wasserstein distances between the spectra of a sequence of windows.
pub fn window_distance_matrix(specs: &[SpectralDecomposition]) -> Result<WindowDistances> {
    let first = specs.first().ok_or(Error::EmptyInput("window decompositions"))?;
    let n_modes = first.len();
    let offenders: Vec<String> = specs
        .iter()
        .enumerate()
        .filter(|(_, s)| s.len() != n_modes)
        .map(|(i, s)| format!("#{i} has {}", s.len()))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::Cardinality(format!(
            "window spectra must share a mode count ({n_modes}, from #0): {}",
            offenders.join(", ")
        )));
    }
    let w = specs.len();
    let pairs: Vec<(usize, usize)> = (0..w)
        .flat_map(|i| (i + 1..w).map(move |j| (i, j)))
        .collect();
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            distance_and_assignment(&specs[i].eigenvalues, &specs[j].eigenvalues).map(|(d, _)| d)
        })
        .collect::<Result<_>>()?;
    let mut distances = DMatrix::zeros(w, w);
    for (&(i, j), &d) in pairs.iter().zip(&values) {
        distances[(i, j)] = d;
        distances[(j, i)] = d;
    }
    let log10 = distances.map(clamped_log10);
    let labels = specs
        .iter()
        .enumerate()
        .map(|(i, s)| s.window_label().unwrap_or_else(|| i.to_string()))
        .collect();
    Ok(WindowDistances {
        labels,
        distances,
        log10,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(values: &[(f64, f64)]) -> EigenvalueSet {
        EigenvalueSet::new(values.iter().map(|&(r, i)| Complex64::new(r, i)).collect(), "s").unwrap()
    }

    #[test]
    fn wasserstein_examples() {
        let a = set(&[(1.0, 0.0), (0.5, 0.0)]);
        assert_eq!(wasserstein(&a, &a).unwrap().distance, 0.0);
        assert_eq!(wasserstein(&a, &a).unwrap().assignment, vec![0, 1]);
        let b = set(&[(0.5, 0.0), (1.0, 0.0)]);
        let cmp = wasserstein(&a, &b).unwrap();
        assert_eq!(cmp.distance, 0.0);
        assert_eq!(cmp.assignment, vec![1, 0]);

        // brute force: identity pairing costs 1 + 0, swapped costs 1 + 2; min 1, ω = sqrt(1/2)
        let c = set(&[(0.0, 0.0), (1.0, 0.0)]);
        let d = set(&[(0.0, 1.0), (1.0, 0.0)]);
        let cmp = wasserstein(&c, &d).unwrap();
        assert!((cmp.distance - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn wasserstein_rejects_unequal_sizes() {
        let a = set(&[(1.0, 0.0)]);
        let b = set(&[(1.0, 0.0), (0.0, 0.0)]);
        let err = wasserstein(&a, &b).unwrap_err();
        assert!(err.to_string().contains("semi_conjugacy"));
        assert!(EigenvalueSet::new(vec![], "x").is_err());
        assert!(EigenvalueSet::from_reals(&[f64::NAN], "x").is_err());
    }

    #[test]
    fn semi_conjugacy_examples() {
        let big = EigenvalueSet::from_reals(&[0.9, 0.5, 0.2], "big").unwrap();
        let small = EigenvalueSet::from_reals(&[0.9, 0.5], "small").unwrap();
        let r = semi_conjugacy(&big, &small, 1e-9).unwrap();
        assert!(r.subset);
        assert_eq!(r.matched_pairs, vec![(0, 0), (1, 1)]);

        let off = EigenvalueSet::from_reals(&[0.9, 0.45], "off").unwrap();
        let r = semi_conjugacy(&big, &off, 1e-3).unwrap();
        assert!(!r.subset);
        assert!((r.max_residual - 0.05).abs() < 1e-12);

        let single = EigenvalueSet::from_reals(&[0.2], "one").unwrap();
        let r = semi_conjugacy(&big, &single, 0.0).unwrap();
        assert!(r.subset);
        assert_eq!(r.matched_pairs, vec![(0, 2)]);

        assert!(semi_conjugacy(&small, &big, 0.1).is_err());
        assert!(semi_conjugacy(&big, &big, 0.1).is_err());
    }

    #[test]
    fn shuffle_identical_sets() {
        let a = set(&[(0.9, 0.1), (0.9, -0.1), (0.3, 0.0)]);
        let cmp = shuffle_control(&a, &a, 50, 3).unwrap();
        let s = cmp.shuffle.unwrap();
        assert_eq!(cmp.distance, 0.0);
        assert_eq!(s.frac_ge, 1.0);
        assert_eq!(s.distances.len(), 50);
    }

    #[test]
    fn shuffle_is_reproducible_and_union_preserving() {
        let a = set(&[(0.9, 0.0), (0.5, 0.2), (0.5, -0.2), (0.1, 0.0)]);
        let b = set(&[(0.8, 0.0), (0.6, 0.0), (0.4, 0.0), (-0.2, 0.0)]);
        let first = shuffle_control(&a, &b, 64, 17).unwrap();
        let second = shuffle_control(&a, &b, 64, 17).unwrap();
        let bits = |c: &SpectrumComparison| -> Vec<u64> {
            c.shuffle.as_ref().unwrap().distances.iter().map(|d| d.to_bits()).collect()
        };
        assert_eq!(bits(&first), bits(&second));
        for index in 0..64 {
            let (a2, b2) = shuffled_sets(a.values(), b.values(), &first.assignment, 17, index);
            assert!(preserves_union(a.values(), b.values(), &a2, &b2));
        }
        // swapping a matched pair keeps its cost, so compare the coins themselves
        let differs = (0..64).any(|i| {
            shuffled_sets(a.values(), b.values(), &first.assignment, 17, i)
                != shuffled_sets(a.values(), b.values(), &first.assignment, 18, i)
        });
        assert!(differs);
        assert!(shuffle_control(&a, &b, 0, 1).is_err());
    }

    fn brute_ks(x: &[f64], y: &[f64]) -> f64 {
        let frac = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64;
        let (n, m) = (x.len() as f64, y.len() as f64);
        x.iter()
            .chain(y)
            .map(|&t| (frac(x, t) / n - frac(y, t) / m).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn ks_examples() {
        let x = [0.3, 0.1, 0.7];
        assert_eq!(ks_two_sample(&x, &x).unwrap().statistic, 0.0);
        assert_eq!(ks_two_sample(&x, &x).unwrap().p_value, 1.0);
        assert_eq!(ks_two_sample(&[0.0, 0.0], &[1.0, 1.0]).unwrap().statistic, 1.0);
        let (x, y) = ([0.1, 0.4, 0.7], [0.2, 0.5]);
        let r = ks_two_sample(&x, &y).unwrap();
        assert_eq!(r.statistic, brute_ks(&x, &y));
        assert!(ks_two_sample(&[], &[1.0]).is_err());
    }

    #[test]
    fn ks_matches_scan_with_ties() {
        let mut rng = SeededRng::new(6);
        for _ in 0..100 {
            let n = 1 + (rng.uniform() * 20.0) as usize;
            let m = 1 + (rng.uniform() * 20.0) as usize;
            let x: Vec<f64> = (0..n).map(|_| (rng.uniform() * 8.0).floor()).collect();
            let y: Vec<f64> = (0..m).map(|_| (rng.uniform() * 8.0).floor()).collect();
            assert_eq!(ks_two_sample(&x, &y).unwrap().statistic, brute_ks(&x, &y));
        }
    }

    #[test]
    fn kolmogorov_tail_values() {
        // Tabulated critical values: Q(1.3581) = 0.05, Q(1.6276) = 0.01, Q(1.2238) = 0.10
        assert!((kolmogorov_survival(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_survival(1.6276) - 0.01).abs() < 1e-4);
        assert!((kolmogorov_survival(1.2238) - 0.10).abs() < 1e-4);
        // both branches agree near the switch point
        let lo = kolmogorov_survival(1.18 - 1e-12);
        let hi = kolmogorov_survival(1.18);
        assert!((lo - hi).abs() < 1e-10);
        assert_eq!(kolmogorov_survival(0.0), 1.0);
        assert!(kolmogorov_survival(10.0) < 1e-80);
    }

    fn fake_spec(values: &[f64], window: (usize, usize)) -> SpectralDecomposition {
        SpectralDecomposition {
            eigenvalues: values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
            modes: DMatrix::zeros(1, values.len()),
            residuals: vec![0.0; values.len()],
            amplitudes: vec![],
            rank: values.len(),
            delays: 0,
            window: Some(window),
            meta: Meta::new(),
        }
    }

    #[test]
    fn window_matrix_shape_and_symmetry() {
        let single = window_distance_matrix(&[fake_spec(&[0.5], (0, 99))]).unwrap();
        assert_eq!(single.distances.shape(), (1, 1));
        assert_eq!(single.distances[(0, 0)], 0.0);
        assert_eq!(single.log10[(0, 0)], -16.0);
        assert_eq!(single.labels, vec!["0:99"]);

        let specs = vec![
            fake_spec(&[0.9, 0.1], (0, 99)),
            fake_spec(&[0.8, 0.1], (100, 199)),
            fake_spec(&[0.1, 0.5], (200, 299)),
        ];
        let m = window_distance_matrix(&specs).unwrap();
        for i in 0..3 {
            assert_eq!(m.distances[(i, i)], 0.0);
            for j in 0..3 {
                assert_eq!(m.distances[(i, j)], m.distances[(j, i)]);
            }
        }
        assert!((m.distances[(0, 1)] - (0.01f64 / 2.0).sqrt()).abs() < 1e-15);

        let bad = vec![fake_spec(&[0.9, 0.1], (0, 99)), fake_spec(&[0.9], (100, 199))];
        let err = window_distance_matrix(&bad).unwrap_err();
        assert!(err.to_string().contains("#1 has 1"));
        assert!(window_distance_matrix(&[]).is_err());
    }
}
