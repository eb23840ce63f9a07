//! Koopman mode decomposition from snapshot pairs (DMD with refined Rayleigh–Ritz
//! vectors and exact residuals).

use std::cmp::Ordering;

use nalgebra::{Complex, DMatrix, DVector, Schur};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trajectory::{Meta, SnapshotPair, WINDOW_KEY};

pub type Complex64 = Complex<f64>;

/// Convergence threshold for the iterative SVD. nalgebra can stall on a wrong
/// fixed point for rank-deficient input at exactly `f64::EPSILON`.
pub(crate) const SVD_EPS: f64 = 5.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionConfig {
    /// Upper bound on the number of retained singular directions.
    pub rank: usize,
    /// Singular values below `svd_rel_tol * sigma_1` are discarded before `rank` applies.
    pub svd_rel_tol: f64,
    /// Drop modes whose refined residual exceeds this.
    pub residual_tol: Option<f64>,
    /// Scale snapshot columns to unit norm before the SVD.
    pub scale_columns: bool,
}

impl Default for DecompositionConfig {
    fn default() -> Self {
        Self {
            rank: 10,
            svd_rel_tol: 1e-12,
            residual_tol: None,
            scale_columns: true,
        }
    }
}

impl DecompositionConfig {
    pub fn with_rank(rank: usize) -> Self {
        Self {
            rank,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.rank == 0 {
            return Err(Error::InvalidConfig("rank must be at least 1".into()));
        }
        if !(self.svd_rel_tol >= 0.0 && self.svd_rel_tol.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "svd_rel_tol must be a non-negative finite number, got {}",
                self.svd_rel_tol
            )));
        }
        if let Some(tol) = self.residual_tol {
            if !(tol >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "residual_tol must be non-negative, got {tol}"
                )));
            }
        }
        Ok(())
    }
}

/// Koopman eigenvalues with their refined modes, residuals and per-trajectory
/// amplitudes.
///
/// Eigenvalues are sorted by descending magnitude, then descending real part,
/// then descending imaginary part. `modes` has one unit-norm column per
/// eigenvalue; `amplitudes[j][i]` is the coefficient of mode `i` in the first
/// embedded snapshot of source trajectory `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition {
    pub eigenvalues: Vec<Complex64>,
    pub modes: DMatrix<Complex64>,
    pub residuals: Vec<f64>,
    pub amplitudes: Vec<Vec<Complex64>>,
    /// Number of singular directions actually kept.
    pub rank: usize,
    pub delays: usize,
    /// Inclusive absolute iteration interval, when the data came from a window.
    pub window: Option<(usize, usize)>,
    pub meta: Meta,
}

impl SpectralDecomposition {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn embed_dim(&self) -> usize {
        self.modes.nrows()
    }

    /// `t1:t2` label of the source window, if any.
    pub fn window_label(&self) -> Option<String> {
        self.window.map(|(a, b)| format!("{a}:{b}"))
    }
}

/// Rank-reduced pieces shared by the decomposition and its diagnostics.
struct Reduced {
    /// `m x k`, orthonormal columns.
    u_k: DMatrix<f64>,
    /// `z' V_k Sigma_k^{-1}` (column-scaled data), `m x k`.
    b: DMatrix<f64>,
    /// Rayleigh quotient `U_k^T b`, `k x k`.
    s: DMatrix<f64>,
}

fn reduce(pair: &SnapshotPair, cfg: &DecompositionConfig) -> Result<Reduced> {
    cfg.validate()?;
    if pair.z.shape() != pair.z_prime.shape() {
        return Err(Error::InvalidEnsemble(format!(
            "snapshot matrices differ in shape: {:?} vs {:?}",
            pair.z.shape(),
            pair.z_prime.shape()
        )));
    }
    if pair.col_count() < 2 {
        return Err(Error::DegenerateData(format!(
            "need at least 2 snapshot columns, got {}",
            pair.col_count()
        )));
    }
    if pair.z.iter().chain(pair.z_prime.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("snapshot matrix".into()));
    }
    if pair.z.iter().all(|&v| v == 0.0) {
        return Err(Error::DegenerateData("snapshot matrix is identically zero".into()));
    }

    let mut z = pair.z.clone();
    let mut zp = pair.z_prime.clone();
    if cfg.scale_columns {
        for j in 0..z.ncols() {
            let norm = z.column(j).norm();
            if norm > 0.0 {
                z.column_mut(j).unscale_mut(norm);
                zp.column_mut(j).unscale_mut(norm);
            }
        }
    }

    let svd = z
        .try_svd(true, true, SVD_EPS, 0)
        .ok_or(Error::NoConvergence("snapshot singular value decomposition"))?;
    let sigma = &svd.singular_values;
    let sigma_1 = sigma[0];
    let numerical_rank = sigma
        .iter()
        .take_while(|&&s| s > cfg.svd_rel_tol * sigma_1 && s > 0.0)
        .count();
    let k = numerical_rank.min(cfg.rank);
    if k == 0 {
        return Err(Error::RankCollapse {
            rel_tol: cfg.svd_rel_tol,
        });
    }

    let u_k = svd.u.expect("u requested").columns(0, k).into_owned();
    let v_k = svd.v_t.expect("v_t requested").rows(0, k).transpose();
    let mut b = zp * v_k;
    for (j, mut col) in b.column_iter_mut().enumerate() {
        col.unscale_mut(sigma[j]);
    }
    let s = u_k.transpose() * &b;
    Ok(Reduced { u_k, b, s })
}

fn spectrum_order(a: &Complex64, b: &Complex64) -> Ordering {
    b.norm()
        .total_cmp(&a.norm())
        .then(b.re.total_cmp(&a.re))
        .then(b.im.total_cmp(&a.im))
}

/// Smallest singular value of `g` and its right singular vector.
fn smallest_right_singular(g: DMatrix<Complex64>) -> Result<(f64, DVector<Complex64>)> {
    let svd = g
        .try_svd(false, true, SVD_EPS, 0)
        .ok_or(Error::NoConvergence("refinement singular value decomposition"))?;
    let last = svd.singular_values.len() - 1;
    let v_t = svd.v_t.expect("v_t requested");
    let w = v_t.row(last).adjoint();
    Ok((svd.singular_values[last], w))
}

/// Computes the Koopman mode decomposition of a snapshot pair.
///
/// 1. optionally scale every column of `z` (and the matching column of `z'`) to unit norm;
/// 2. thin SVD `z = U Σ V*`, keeping `k = min(rank, #{σ_i > svd_rel_tol σ_1})` directions;
/// 3. Rayleigh quotient `S = U_k* z' V_k Σ_k⁻¹`, whose eigenvalues are the Ritz values;
/// 4. for each Ritz value λ, the refined mode `U_k w` minimizes
///    `‖(z' V_k Σ_k⁻¹ − λ U_k) w‖` over unit `w`; the minimum is the residual;
/// 5. optionally prune by residual, then fit per-trajectory amplitudes by least squares.
pub fn dmd_rrr(pair: &SnapshotPair, cfg: &DecompositionConfig) -> Result<SpectralDecomposition> {
    let reduced = reduce(pair, cfg)?;
    let k = reduced.s.nrows();

    let schur = Schur::try_new(reduced.s.clone(), f64::EPSILON, 100_000)
        .ok_or(Error::NoConvergence("Schur decomposition of the Rayleigh quotient"))?;
    let mut ritz: Vec<Complex64> = schur.complex_eigenvalues().iter().copied().collect();
    ritz.sort_by(spectrum_order);

    // B - λU = Q (R2 - λR1) with [U | B] = Q [R1 | R2], so the residual problem
    // reduces to a (≤2k) x k matrix per eigenvalue.
    let m = reduced.u_k.nrows();
    let mut stacked = DMatrix::zeros(m, 2 * k);
    stacked.columns_mut(0, k).copy_from(&reduced.u_k);
    stacked.columns_mut(k, k).copy_from(&reduced.b);
    let r = stacked.qr().r();
    let r1 = r.columns(0, k).map(|v| Complex64::new(v, 0.0));
    let r2 = r.columns(k, k).map(|v| Complex64::new(v, 0.0));
    let u_c = reduced.u_k.map(|v| Complex64::new(v, 0.0));

    let refined: Vec<(f64, DVector<Complex64>)> = ritz
        .par_iter()
        .map(|&lambda| {
            let g = &r2 - &r1 * lambda;
            let (residual, w) = smallest_right_singular(g)?;
            let mut mode = &u_c * w;
            let norm = mode.norm();
            mode.unscale_mut(norm);
            Ok((residual, mode))
        })
        .collect::<Result<_>>()?;

    let keep: Vec<usize> = (0..ritz.len())
        .filter(|&i| cfg.residual_tol.is_none_or(|tol| refined[i].0 <= tol))
        .collect();
    if keep.is_empty() {
        return Err(Error::DegenerateData(
            "every mode exceeded the residual tolerance".into(),
        ));
    }

    let eigenvalues: Vec<Complex64> = keep.iter().map(|&i| ritz[i]).collect();
    let residuals: Vec<f64> = keep.iter().map(|&i| refined[i].0).collect();
    let mut modes = DMatrix::zeros(m, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        modes.set_column(c, &refined[i].1);
    }

    let amplitudes = fit_amplitudes(&modes, pair)?;
    let mut meta = pair.source_meta.clone();
    meta.insert("rank".into(), k.to_string());
    let window = meta.get(WINDOW_KEY).and_then(|label| parse_window(label));

    Ok(SpectralDecomposition {
        eigenvalues,
        modes,
        residuals,
        amplitudes,
        rank: k,
        delays: pair.delays,
        window,
        meta,
    })
}

pub(crate) fn parse_window(label: &str) -> Option<(usize, usize)> {
    let (a, b) = label.split_once(':')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn fit_amplitudes(modes: &DMatrix<Complex64>, pair: &SnapshotPair) -> Result<Vec<Vec<Complex64>>> {
    let svd = modes
        .clone()
        .try_svd(true, true, SVD_EPS, 0)
        .ok_or(Error::NoConvergence("mode matrix singular value decomposition"))?;
    let sigma_max = svd.singular_values.max();
    let cutoff = sigma_max * modes.nrows().max(modes.ncols()) as f64 * f64::EPSILON;
    pair.trajectory_starts()
        .into_iter()
        .map(|col| {
            let rhs = pair.z.column(col).map(|v| Complex64::new(v, 0.0));
            let coeffs = svd
                .solve(&rhs, cutoff)
                .map_err(|e| Error::DegenerateData(e.to_string()))?;
            Ok(coeffs.iter().copied().collect())
        })
        .collect()
}

/// Evaluates `Σ_i a_i λ_i^t v_i` for `t = 0..steps` using the amplitudes of
/// source trajectory `traj_index`; returns the real part, `embed_dim x steps`.
pub fn reconstruct(
    dec: &SpectralDecomposition,
    steps: usize,
    traj_index: usize,
) -> Result<DMatrix<f64>> {
    let amps = dec.amplitudes.get(traj_index).ok_or(Error::IndexOutOfRange {
        index: traj_index,
        len: dec.amplitudes.len(),
    })?;
    let mut out = DMatrix::zeros(dec.embed_dim(), steps);
    let mut weights: Vec<Complex64> = amps.clone();
    for t in 0..steps {
        let col = &dec.modes * DVector::from_column_slice(&weights);
        out.set_column(t, &col.map(|c| c.re));
        for (w, lambda) in weights.iter_mut().zip(&dec.eigenvalues) {
            *w *= lambda;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CirclePosition {
    Inside,
    On,
    Outside,
}

pub fn classify_eigenvalue(lambda: Complex64, tol: f64) -> CirclePosition {
    let r = lambda.norm();
    if r < 1.0 - tol {
        CirclePosition::Inside
    } else if r > 1.0 + tol {
        CirclePosition::Outside
    } else {
        CirclePosition::On
    }
}

/// Tags each eigenvalue as inside, on (within `tol`), or outside the unit circle.
pub fn unit_circle_classification(dec: &SpectralDecomposition, tol: f64) -> Vec<CirclePosition> {
    dec.eigenvalues
        .iter()
        .map(|&l| classify_eigenvalue(l, tol))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;
    use crate::trajectory::{delay_embed, TrajectoryEnsemble};

    fn linear_ensemble(a: &DMatrix<f64>, inits: &[DVector<f64>], length: usize) -> TrajectoryEnsemble {
        let trajectories = inits
            .iter()
            .map(|x0| {
                let mut traj = DMatrix::zeros(a.nrows(), length);
                let mut x = x0.clone();
                for t in 0..length {
                    traj.set_column(t, &x);
                    x = a * x;
                }
                traj
            })
            .collect();
        TrajectoryEnsemble::new(trajectories).unwrap()
    }

    #[test]
    fn scalar_decay() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let ens = linear_ensemble(&a, &[DVector::from_element(1, 1.0)], 10);
        let pair = delay_embed(&ens, 0).unwrap();
        let dec = dmd_rrr(&pair, &DecompositionConfig::default()).unwrap();
        assert_eq!(dec.len(), 1);
        assert!((dec.eigenvalues[0] - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        assert_eq!(dec.eigenvalues[0].im, 0.0);
        assert!(dec.residuals[0] <= 1e-12);
    }

    #[test]
    fn diagonal_system() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.9, -0.4]));
        let mut rng = SeededRng::new(5);
        let inits: Vec<_> = (0..20)
            .map(|_| DVector::from_fn(2, |_, _| rng.standard_normal()))
            .collect();
        let pair = delay_embed(&linear_ensemble(&a, &inits, 15), 0).unwrap();
        let dec = dmd_rrr(&pair, &DecompositionConfig::default()).unwrap();
        assert_eq!(dec.len(), 2);
        assert!((dec.eigenvalues[0] - Complex64::new(0.9, 0.0)).norm() < 1e-10);
        assert!((dec.eigenvalues[1] - Complex64::new(-0.4, 0.0)).norm() < 1e-10);
        assert!(dec.residuals.iter().all(|&r| r <= 1e-10));
        for c in dec.modes.column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fixed_point() {
        let traj = DMatrix::from_fn(2, 12, |r, _| if r == 0 { 0.3 } else { -1.2 });
        let ens = TrajectoryEnsemble::new(vec![traj]).unwrap();
        let dec = dmd_rrr(&delay_embed(&ens, 0).unwrap(), &DecompositionConfig::default()).unwrap();
        assert_eq!(dec.len(), 1);
        assert!((dec.eigenvalues[0] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!(dec.residuals[0] < 1e-14);
    }

    #[test]
    fn zero_data_and_bad_config() {
        let ens = TrajectoryEnsemble::new(vec![DMatrix::zeros(2, 6)]).unwrap();
        let pair = delay_embed(&ens, 0).unwrap();
        assert!(matches!(
            dmd_rrr(&pair, &DecompositionConfig::default()),
            Err(Error::DegenerateData(_))
        ));
        let ens = TrajectoryEnsemble::new(vec![DMatrix::from_element(1, 6, 1.0)]).unwrap();
        let pair = delay_embed(&ens, 0).unwrap();
        let cfg = DecompositionConfig {
            svd_rel_tol: 2.0,
            ..Default::default()
        };
        assert!(matches!(dmd_rrr(&pair, &cfg), Err(Error::RankCollapse { .. })));
        assert!(dmd_rrr(&pair, &DecompositionConfig::with_rank(0)).is_err());
    }

    fn rotation_ensemble() -> TrajectoryEnsemble {
        let (r, th) = (0.95f64, 0.4f64);
        let a = DMatrix::from_row_slice(
            3,
            3,
            &[
                r * th.cos(), -r * th.sin(), 0.0, //
                r * th.sin(), r * th.cos(), 0.0, //
                0.0, 0.0, 0.6,
            ],
        );
        let mut rng = SeededRng::new(8);
        let inits: Vec<_> = (0..4)
            .map(|_| DVector::from_fn(3, |_, _| rng.standard_normal()))
            .collect();
        linear_ensemble(&a, &inits, 30)
    }

    #[test]
    fn conjugate_pairs_and_ordering() {
        let dec = dmd_rrr(
            &delay_embed(&rotation_ensemble(), 0).unwrap(),
            &DecompositionConfig::default(),
        )
        .unwrap();
        assert_eq!(dec.len(), 3);
        let (l0, l1) = (dec.eigenvalues[0], dec.eigenvalues[1]);
        assert!(l0.im > 0.0);
        assert!((l0 - l1.conj()).norm() < 1e-9);
        assert!((l0 - Complex64::from_polar(0.95, 0.4)).norm() < 1e-10);
        assert!((dec.eigenvalues[2].re - 0.6).abs() < 1e-10);
    }

    #[test]
    fn refined_residual_never_exceeds_ritz_residual() {
        let mut rng = SeededRng::new(21);
        let trajectories = (0..3)
            .map(|_| DMatrix::from_fn(4, 25, |_, _| rng.standard_normal()))
            .collect();
        let ens = TrajectoryEnsemble::new(trajectories).unwrap();
        let pair = delay_embed(&ens, 1).unwrap();
        let cfg = DecompositionConfig::with_rank(6);
        let dec = dmd_rrr(&pair, &cfg).unwrap();
        let reduced = reduce(&pair, &cfg).unwrap();
        let b = reduced.b.map(|v| Complex64::new(v, 0.0));
        let u = reduced.u_k.map(|v| Complex64::new(v, 0.0));
        let s = reduced.s.map(|v| Complex64::new(v, 0.0));
        let k = s.nrows();
        for (lambda, refined) in dec.eigenvalues.iter().zip(&dec.residuals) {
            // plain Ritz vector: null vector of S - λI
            let shifted = &s - DMatrix::<Complex64>::identity(k, k) * *lambda;
            let (_, y) = smallest_right_singular(shifted).unwrap();
            let ritz_residual = ((&b - &u * *lambda) * y).norm();
            assert!(*refined <= ritz_residual + 1e-14, "{refined} > {ritz_residual}");
        }
    }

    #[test]
    fn reconstruction_matches_linear_data() {
        let ens = rotation_ensemble();
        let pair = delay_embed(&ens, 0).unwrap();
        let dec = dmd_rrr(&pair, &DecompositionConfig::default()).unwrap();
        for j in 0..ens.len() {
            let recon = reconstruct(&dec, 30, j).unwrap();
            let truth = &ens.trajectories()[j];
            let rel = (&recon - truth).norm() / truth.norm();
            assert!(rel < 1e-8, "trajectory {j}: {rel}");
        }
        assert!(matches!(
            reconstruct(&dec, 3, 99),
            Err(Error::IndexOutOfRange { index: 99, len: 4 })
        ));
    }

    #[test]
    fn reconstruction_trivial_cases() {
        let v = DVector::from_vec(vec![Complex64::new(0.6, 0.0), Complex64::new(0.8, 0.0)]);
        let mut dec = SpectralDecomposition {
            eigenvalues: vec![Complex64::new(1.0, 0.0)],
            modes: DMatrix::from_columns(&[v]),
            residuals: vec![0.0],
            amplitudes: vec![vec![Complex64::new(2.5, 0.0)]],
            rank: 1,
            delays: 0,
            window: None,
            meta: Meta::new(),
        };
        let constant = reconstruct(&dec, 4, 0).unwrap();
        for c in constant.column_iter() {
            assert!((c[0] - 1.5).abs() < 1e-15 && (c[1] - 2.0).abs() < 1e-15);
        }
        dec.eigenvalues[0] = Complex64::new(0.7, 0.0);
        let decay = reconstruct(&dec, 6, 0).unwrap();
        let norms: Vec<f64> = decay.column_iter().map(|c| c.norm()).collect();
        for w in norms.windows(2) {
            assert!((w[1] / w[0] - 0.7).abs() < 1e-12);
        }
    }

    #[test]
    fn column_scaling_keeps_eigenvalues() {
        let pair = delay_embed(&rotation_ensemble(), 1).unwrap();
        let on = dmd_rrr(&pair, &DecompositionConfig::with_rank(3)).unwrap();
        let off = dmd_rrr(
            &pair,
            &DecompositionConfig {
                rank: 3,
                scale_columns: false,
                ..Default::default()
            },
        )
        .unwrap();
        for (a, b) in on.eigenvalues.iter().zip(&off.eigenvalues) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn residual_pruning() {
        let mut rng = SeededRng::new(4);
        let trajectories = (0..2)
            .map(|_| DMatrix::from_fn(3, 20, |_, _| rng.standard_normal()))
            .collect();
        let ens = TrajectoryEnsemble::new(trajectories).unwrap();
        let pair = delay_embed(&ens, 0).unwrap();
        // rank below the embedding dimension, so residuals are nonzero
        let all = dmd_rrr(&pair, &DecompositionConfig::with_rank(2)).unwrap();
        let cutoff = all.residuals.iter().copied().fold(f64::INFINITY, f64::min);
        let pruned = dmd_rrr(
            &pair,
            &DecompositionConfig {
                residual_tol: Some(cutoff),
                ..DecompositionConfig::with_rank(2)
            },
        )
        .unwrap();
        assert!(pruned.len() < all.len(), "{:?}", all.residuals);
        assert!(!pruned.is_empty());
        assert!(pruned.residuals.iter().all(|&r| r <= cutoff));
        assert_eq!(pruned.amplitudes[0].len(), pruned.len());
    }

    #[test]
    fn unit_circle_tags() {
        use CirclePosition::*;
        assert_eq!(classify_eigenvalue(Complex64::new(1.0, 0.0), 1e-3), On);
        assert_eq!(classify_eigenvalue(Complex64::new(0.5, 0.0), 1e-3), Inside);
        assert_eq!(classify_eigenvalue(Complex64::new(1.02, 0.0), 1e-3), Outside);
        assert_eq!(classify_eigenvalue(Complex64::from_polar(1.0005, 2.0), 1e-3), On);
    }
}
