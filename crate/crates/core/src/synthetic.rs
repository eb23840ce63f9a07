//! Synthetic trajectory generators with known spectra, for tests and demos.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::rng::SeededRng;
use crate::spectral::Complex64;
use crate::trajectory::TrajectoryEnsemble;

/// A linear map `x(t+1) = A x(t)` together with its eigenvalues.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: DMatrix<f64>,
    pub eigenvalues: Vec<Complex64>,
}

/// Random normal matrix with eigenvalue radii drawn from `[r_min, r_max)`.
///
/// The matrix is an orthogonal similarity of a block diagonal made of real
/// eigenvalues (either sign) and 2x2 rotation-scaling blocks.
pub fn stable_linear_system(rng: &mut SeededRng, dim: usize, r_min: f64, r_max: f64) -> LinearSystem {
    let mut block = DMatrix::zeros(dim, dim);
    let mut eigenvalues = Vec::with_capacity(dim);
    let mut i = 0;
    while i < dim {
        let r = rng.uniform_range(r_min, r_max);
        if i + 1 < dim && rng.coin() {
            let theta = rng.uniform_range(0.1, 3.0);
            let (c, s) = (r * theta.cos(), r * theta.sin());
            block[(i, i)] = c;
            block[(i, i + 1)] = -s;
            block[(i + 1, i)] = s;
            block[(i + 1, i + 1)] = c;
            eigenvalues.push(Complex64::new(c, s));
            eigenvalues.push(Complex64::new(c, -s));
            i += 2;
        } else {
            let sign = if rng.coin() { 1.0 } else { -1.0 };
            block[(i, i)] = sign * r;
            eigenvalues.push(Complex64::new(sign * r, 0.0));
            i += 1;
        }
    }
    let q = DMatrix::from_fn(dim, dim, |_, _| rng.standard_normal()).qr().q();
    LinearSystem {
        matrix: &q * block * q.transpose(),
        eigenvalues,
    }
}

/// Iterates `matrix` from `x0` for `length` samples (including `x0`).
pub fn iterate(matrix: &DMatrix<f64>, x0: &DVector<f64>, length: usize) -> DMatrix<f64> {
    let mut traj = DMatrix::zeros(x0.len(), length);
    if length == 0 {
        return traj;
    }
    traj.set_column(0, x0);
    for t in 1..length {
        let next = matrix * traj.column(t - 1);
        traj.set_column(t, &next);
    }
    traj
}

/// `count` trajectories of `sys` from standard-normal starts, plus i.i.d.
/// Gaussian observation noise of standard deviation `noise`.
pub fn linear_ensemble(
    sys: &LinearSystem,
    count: usize,
    length: usize,
    noise: f64,
    rng: &mut SeededRng,
) -> Result<TrajectoryEnsemble> {
    let dim = sys.matrix.nrows();
    let trajectories = (0..count)
        .map(|_| {
            let x0 = DVector::from_fn(dim, |_, _| rng.standard_normal());
            let clean = iterate(&sys.matrix, &x0, length);
            if noise == 0.0 {
                clean
            } else {
                clean.map(|v| v + noise * rng.standard_normal())
            }
        })
        .collect();
    TrajectoryEnsemble::new(trajectories)
}

/// Two-dimensional dynamics that decay as `0.9 x` before `switch_at` and as a
/// damped rotation (`0.95`, angle `0.3`) afterwards.
pub fn two_regime_ensemble(
    count: usize,
    length: usize,
    switch_at: usize,
    rng: &mut SeededRng,
) -> Result<TrajectoryEnsemble> {
    let decay = DMatrix::from_diagonal_element(2, 2, 0.9);
    let (c, s) = (0.95 * 0.3f64.cos(), 0.95 * 0.3f64.sin());
    let rotation = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
    let trajectories = (0..count)
        .map(|_| {
            let mut traj = DMatrix::zeros(2, length);
            let mut x = DVector::from_fn(2, |_, _| rng.standard_normal());
            for t in 0..length {
                traj.set_column(t, &x);
                x = if t + 1 < switch_at { &decay * &x } else { &rotation * &x };
            }
            traj
        })
        .collect();
    TrajectoryEnsemble::new(trajectories)
}
