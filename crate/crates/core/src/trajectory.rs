//! Trajectory ensembles and the transformations applied before a
//! decomposition: delay embedding, windowing, PCA reduction and
//! state relabeling.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::spectral::SVD_EPS;

/// Free-form provenance carried alongside data (source, seed, window, ...).
pub type Meta = BTreeMap<String, String>;

/// Meta key holding the absolute iteration index of column 0.
pub const ITERATION_OFFSET_KEY: &str = "iteration_offset";
/// Meta key holding a `t1:t2` window label (both ends inclusive).
pub const WINDOW_KEY: &str = "window";

/// A set of equal-shape multivariate time series.
///
/// Each trajectory is a `state_dim x length` matrix whose column `t` is the
/// state at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryEnsemble {
    trajectories: Vec<DMatrix<f64>>,
    labels: Option<Vec<String>>,
    meta: Meta,
}

impl TrajectoryEnsemble {
    pub fn new(trajectories: Vec<DMatrix<f64>>) -> Result<Self> {
        Self::with_labels(trajectories, None, Meta::new())
    }

    pub fn with_labels(
        trajectories: Vec<DMatrix<f64>>,
        labels: Option<Vec<String>>,
        meta: Meta,
    ) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InvalidEnsemble("no trajectories".into()))?;
        let (state_dim, length) = first.shape();
        if state_dim == 0 || length == 0 {
            return Err(Error::InvalidEnsemble(format!(
                "trajectory 0 has shape {state_dim}x{length}"
            )));
        }
        for (i, traj) in trajectories.iter().enumerate() {
            if traj.shape() != (state_dim, length) {
                return Err(Error::InvalidEnsemble(format!(
                    "trajectory {i} has shape {}x{}, expected {state_dim}x{length}",
                    traj.nrows(),
                    traj.ncols()
                )));
            }
            if let Some(pos) = traj.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidEnsemble(format!(
                    "trajectory {i} has a non-finite value at variable {}, step {}",
                    pos % state_dim,
                    pos / state_dim
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != trajectories.len() {
                return Err(Error::InvalidEnsemble(format!(
                    "{} labels for {} trajectories",
                    labels.len(),
                    trajectories.len()
                )));
            }
        }
        Ok(Self {
            trajectories,
            labels,
            meta,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories[0].nrows()
    }

    pub fn length(&self) -> usize {
        self.trajectories[0].ncols()
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn trajectories(&self) -> &[DMatrix<f64>] {
        &self.trajectories
    }

    pub fn labels(&self) -> Option<&[String]> {
        self.labels.as_deref()
    }

    pub fn meta(&self) -> &Meta {
        &self.meta
    }

    /// Returns a copy with one meta entry set.
    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    /// Absolute iteration index of step 0 (0 when not recorded).
    pub fn iteration_offset(&self) -> usize {
        self.meta
            .get(ITERATION_OFFSET_KEY)
            .and_then(|v| v.parse().ok())
            .unwrap_or(0)
    }

    pub fn into_parts(self) -> (Vec<DMatrix<f64>>, Option<Vec<String>>, Meta) {
        (self.trajectories, self.labels, self.meta)
    }
}

/// Column-aligned snapshot matrices: `z_prime[:, j]` is the one-step
/// successor of `z[:, j]` within the same source trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotPair {
    pub z: DMatrix<f64>,
    pub z_prime: DMatrix<f64>,
    pub state_dim: usize,
    pub delays: usize,
    /// Number of columns contributed by each source trajectory, in order.
    pub columns_per_trajectory: Vec<usize>,
    pub source_meta: Meta,
}

impl SnapshotPair {
    pub fn embed_dim(&self) -> usize {
        self.z.nrows()
    }

    pub fn col_count(&self) -> usize {
        self.z.ncols()
    }

    /// Column index of the first snapshot of each source trajectory.
    pub fn trajectory_starts(&self) -> Vec<usize> {
        self.columns_per_trajectory
            .iter()
            .scan(0, |acc, &n| {
                let start = *acc;
                *acc += n;
                Some(start)
            })
            .collect()
    }
}

/// Builds delay-embedded snapshot pairs.
///
/// The embedded point at time `t` stacks `[x(t); x(t+1); ...; x(t+d)]`
/// (earliest sample on top), so a trajectory of length `L` yields `L - d`
/// points and `L - d - 1` snapshot pairs. Pairs never straddle two
/// trajectories.
pub fn delay_embed(ens: &TrajectoryEnsemble, delays: usize) -> Result<SnapshotPair> {
    let n = ens.state_dim();
    let length = ens.length();
    let required = delays + 2;
    if length < required {
        return Err(Error::EmbeddingLength {
            trajectory: 0,
            length,
            delays,
            required,
        });
    }
    let embed_dim = n * (delays + 1);
    let per_traj = length - delays - 1;
    let cols = per_traj * ens.len();
    let mut z = DMatrix::zeros(embed_dim, cols);
    let mut z_prime = DMatrix::zeros(embed_dim, cols);
    for (k, traj) in ens.trajectories().iter().enumerate() {
        for j in 0..per_traj {
            let col = k * per_traj + j;
            for lag in 0..=delays {
                z.view_mut((lag * n, col), (n, 1))
                    .copy_from(&traj.column(j + lag));
                z_prime
                    .view_mut((lag * n, col), (n, 1))
                    .copy_from(&traj.column(j + lag + 1));
            }
        }
    }
    let mut source_meta = ens.meta().clone();
    source_meta.insert("delays".into(), delays.to_string());
    Ok(SnapshotPair {
        z,
        z_prime,
        state_dim: n,
        delays,
        columns_per_trajectory: vec![per_traj; ens.len()],
        source_meta,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub window_len: usize,
    pub stride: usize,
    pub start: usize,
}

impl WindowSpec {
    pub fn new(window_len: usize, stride: usize) -> Self {
        Self {
            window_len,
            stride,
            start: 0,
        }
    }
}

/// Splits an ensemble into every window `[start + k*stride, start + k*stride + window_len)`
/// that fits entirely inside the trajectories.
///
/// Each window records its absolute iteration interval under [`WINDOW_KEY`]
/// (`"t1:t2"`, inclusive) and [`ITERATION_OFFSET_KEY`].
pub fn window(ens: &TrajectoryEnsemble, spec: WindowSpec) -> Result<Vec<TrajectoryEnsemble>> {
    if spec.window_len == 0 || spec.stride == 0 {
        return Err(Error::InvalidConfig(
            "window length and stride must be positive".into(),
        ));
    }
    let length = ens.length();
    if spec.start + spec.window_len > length {
        return Err(Error::EmptyWindow {
            window_len: spec.window_len,
            start: spec.start,
            length,
        });
    }
    let base = ens.iteration_offset();
    let mut out = Vec::new();
    let mut begin = spec.start;
    while begin + spec.window_len <= length {
        let trajectories = ens
            .trajectories()
            .iter()
            .map(|t| t.columns(begin, spec.window_len).into_owned())
            .collect();
        let mut meta = ens.meta().clone();
        let t1 = base + begin;
        let t2 = t1 + spec.window_len - 1;
        meta.insert(ITERATION_OFFSET_KEY.into(), t1.to_string());
        meta.insert(WINDOW_KEY.into(), format!("{t1}:{t2}"));
        out.push(TrajectoryEnsemble::with_labels(
            trajectories,
            ens.labels().map(<[String]>::to_vec),
            meta,
        )?);
        begin += spec.stride;
    }
    Ok(out)
}

/// Result of [`pca_reduce`].
#[derive(Debug, Clone)]
pub struct PcaReduction {
    pub ensemble: TrajectoryEnsemble,
    /// `state_dim x k`, orthonormal columns (principal directions).
    pub basis: DMatrix<f64>,
    /// Per-variable mean removed before projecting.
    pub mean: DVector<f64>,
    /// Fraction of total variance captured by each retained component.
    pub explained_variance: Vec<f64>,
    /// Singular values of the centered data, all of them.
    pub singular_values: Vec<f64>,
}

impl PcaReduction {
    /// Maps reduced coordinates back to the original state space.
    pub fn lift(&self, reduced: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = &self.basis * reduced;
        for mut col in out.column_iter_mut() {
            col += &self.mean;
        }
        out
    }
}

/// Projects every trajectory onto the top-`k` principal directions of the
/// pooled, mean-centered data.
pub fn pca_reduce(ens: &TrajectoryEnsemble, k: usize) -> Result<PcaReduction> {
    let n = ens.state_dim();
    let total = ens.length() * ens.len();
    if k == 0 {
        return Err(Error::InvalidConfig("number of components must be positive".into()));
    }
    let mut pooled = DMatrix::zeros(n, total);
    for (i, traj) in ens.trajectories().iter().enumerate() {
        pooled.columns_mut(i * ens.length(), ens.length()).copy_from(traj);
    }
    let mean = pooled.column_mean();
    for mut col in pooled.column_iter_mut() {
        col -= &mean;
    }

    let svd = pooled
        .try_svd(true, false, SVD_EPS, 0)
        .ok_or(Error::NoConvergence("PCA singular value decomposition"))?;
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let sigma_max = sv.first().copied().unwrap_or(0.0);
    let rank_tol = n.max(total) as f64 * f64::EPSILON * sigma_max;
    let attainable = sv.iter().filter(|&&s| s > rank_tol).count();
    if k > attainable {
        return Err(Error::Rank {
            requested: k,
            attainable,
        });
    }

    let u = svd.u.expect("left singular vectors requested");
    let mut basis = u.columns(0, k).into_owned();
    // Fix the sign of each direction: largest-magnitude entry positive.
    for mut col in basis.column_iter_mut() {
        let pivot = col.iter().copied().fold(0.0f64, |best, v| {
            if v.abs() > best.abs() {
                v
            } else {
                best
            }
        });
        if pivot < 0.0 {
            col.neg_mut();
        }
    }

    let energy: f64 = sv.iter().map(|s| s * s).sum();
    let explained_variance = sv[..k].iter().map(|s| s * s / energy).collect();

    let trajectories = ens
        .trajectories()
        .iter()
        .map(|t| {
            let mut centered = t.clone();
            for mut col in centered.column_iter_mut() {
                col -= &mean;
            }
            basis.transpose() * centered
        })
        .collect();
    let mut meta = ens.meta().clone();
    meta.insert("pca_components".into(), k.to_string());
    meta.insert("pca_source_dim".into(), n.to_string());
    let ensemble =
        TrajectoryEnsemble::with_labels(trajectories, ens.labels().map(<[String]>::to_vec), meta)?;

    Ok(PcaReduction {
        ensemble,
        basis,
        mean,
        explained_variance,
        singular_values: sv,
    })
}

/// Reorders state variables: row `i` of each output trajectory is row
/// `sigma[i]` of the input (0-based).
pub fn permute_state(ens: &TrajectoryEnsemble, sigma: &[usize]) -> Result<TrajectoryEnsemble> {
    let n = ens.state_dim();
    if sigma.len() != n {
        return Err(Error::InvalidPermutation(format!(
            "length {} does not match state dimension {n}",
            sigma.len()
        )));
    }
    let mut seen = vec![false; n];
    for &s in sigma {
        if s >= n || std::mem::replace(&mut seen[s], true) {
            return Err(Error::InvalidPermutation(format!(
                "{sigma:?} is not a permutation of 0..{n}"
            )));
        }
    }
    let trajectories = ens
        .trajectories()
        .iter()
        .map(|t| t.select_rows(sigma.iter()))
        .collect();
    let mut meta = ens.meta().clone();
    let rendered: Vec<String> = sigma.iter().map(usize::to_string).collect();
    meta.insert("permutation".into(), rendered.join(","));
    TrajectoryEnsemble::with_labels(trajectories, ens.labels().map(<[String]>::to_vec), meta)
}

/// Multipliers `1 + eps * g`, `g ~ N(0, 1)`, for perturbing an initialization
/// element-wise. Deterministic in `seed`.
pub fn perturb_multipliers(state_dim: usize, eps: f64, seed: u64) -> Result<Vec<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "perturbation scale must be positive and finite, got {eps}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    Ok((0..state_dim)
        .map(|_| 1.0 + eps * rng.standard_normal())
        .collect())
}
