//! Online mirror descent with the log-barrier regularizer, online gradient
//! descent in exponential coordinates, and the bisection method, together
//! with the objectives and initial-condition grids used to compare them.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::trajectory::{Meta, TrajectoryEnsemble};

type ValueFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectiveKind {
    SumTan,
    SumQuartic,
    Custom,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveKind::SumTan => "tan",
            ObjectiveKind::SumQuartic => "quartic",
            ObjectiveKind::Custom => "custom",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tan" => Ok(ObjectiveKind::SumTan),
            "quartic" => Ok(ObjectiveKind::SumQuartic),
            other => Err(Error::InvalidConfig(format!(
                "unknown objective `{other}` (expected tan or quartic)"
            ))),
        }
    }
}

/// A scalar objective on `R^dim` with its analytic gradient.
#[derive(Clone)]
pub struct Objective {
    pub kind: ObjectiveKind,
    pub dim: usize,
    value: Arc<ValueFn>,
    gradient: Arc<GradFn>,
}

impl fmt::Debug for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Objective")
            .field("kind", &self.kind)
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl Objective {
    /// `f(x) = Σ tan(x_i)`.
    pub fn sum_tan(dim: usize) -> Self {
        Self {
            kind: ObjectiveKind::SumTan,
            dim,
            value: Arc::new(|x| x.iter().map(|v| v.tan()).sum()),
            gradient: Arc::new(|x| x.iter().map(|v| 1.0 / v.cos().powi(2)).collect()),
        }
    }

    /// `f(x) = Σ x_i^4`.
    pub fn sum_quartic(dim: usize) -> Self {
        Self {
            kind: ObjectiveKind::SumQuartic,
            dim,
            value: Arc::new(|x| x.iter().map(|v| v.powi(4)).sum()),
            gradient: Arc::new(|x| x.iter().map(|v| 4.0 * v.powi(3)).collect()),
        }
    }

    pub fn of_kind(kind: ObjectiveKind, dim: usize) -> Result<Self> {
        match kind {
            ObjectiveKind::SumTan => Ok(Self::sum_tan(dim)),
            ObjectiveKind::SumQuartic => Ok(Self::sum_quartic(dim)),
            ObjectiveKind::Custom => Err(Error::InvalidConfig(
                "custom objectives are built with Objective::custom".into(),
            )),
        }
    }

    pub fn custom(
        dim: usize,
        value: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            kind: ObjectiveKind::Custom,
            dim,
            value: Arc::new(value),
            gradient: Arc::new(gradient),
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (self.gradient)(x)
    }

    /// `f̃(u) = f(exp(u))`, with gradient `exp(u) ⊙ ∇f(exp(u))`.
    pub fn exp_reparameterized(&self) -> Objective {
        let value = Arc::clone(&self.value);
        let gradient = Arc::clone(&self.gradient);
        Objective {
            kind: ObjectiveKind::Custom,
            dim: self.dim,
            value: Arc::new(move |u| {
                let x: Vec<f64> = u.iter().map(|v| v.exp()).collect();
                value(&x)
            }),
            gradient: Arc::new(move |u| {
                let x: Vec<f64> = u.iter().map(|v| v.exp()).collect();
                gradient(&x).iter().zip(&x).map(|(g, xi)| g * xi).collect()
            }),
        }
    }
}

/// Axis-aligned box `[lo_1, hi_1] x ... x [lo_d, hi_d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "box bounds have lengths {} and {}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l < h)) {
            return Err(Error::InvalidConfig(format!(
                "box bounds must satisfy lo < hi: {lo:?} / {hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    /// Mirror-descent domain `[0.01, 1]^dim`.
    pub fn mirror_default(dim: usize) -> Self {
        Self::cube(dim, 0.01, 1.0).expect("valid bounds")
    }

    /// Reparameterized gradient-descent domain `[-4.6, 0]^dim`.
    pub fn gradient_default(dim: usize) -> Self {
        Self::cube(dim, -4.6, 0.0).expect("valid bounds")
    }

    /// Bisection domain `[-4/3, 8/7]^dim`.
    pub fn bisection_default(dim: usize) -> Self {
        Self::cube(dim, -4.0 / 3.0, 8.0 / 7.0).expect("valid bounds")
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Per-coordinate clamp. This is the Euclidean projection onto the box,
    /// and also the Bregman projection for any separable strictly convex
    /// regularizer.
    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *v = v.clamp(*l, *h);
        }
    }
}

fn check_finite(x: &[f64], what: &str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what}: {x:?}")))
    }
}

/// One mirror-descent step under `R(x) = -Σ log x_i`.
///
/// `y = (∇R)⁻¹(∇R(x) − η∇f(x))` simplifies to `y_i = x_i / (1 + η x_i ∂_i f(x))`,
/// followed by projection onto `domain`.
pub fn omd_step(x: &[f64], f: &Objective, eta: f64, domain: &BoxDomain) -> Result<Vec<f64>> {
    if x.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidConfig(format!(
            "mirror step needs a strictly positive point, got {x:?}"
        )));
    }
    let grad = f.gradient(x);
    check_finite(&grad, "gradient")?;
    let mut y = Vec::with_capacity(x.len());
    for (i, (&xi, gi)) in x.iter().zip(&grad).enumerate() {
        let denominator = 1.0 + eta * xi * gi;
        // y_i <= 0 would leave the barrier's domain
        if !(denominator > 0.0) {
            return Err(Error::StepSingularity {
                coordinate: i,
                denominator,
            });
        }
        y.push(xi / denominator);
    }
    check_finite(&y, "mirror step")?;
    domain.project(&mut y);
    Ok(y)
}

/// One projected gradient step `u − η∇f̃(u)` on `f_tilde`.
pub fn ogd_step(u: &[f64], f_tilde: &Objective, eta: f64, domain: &BoxDomain) -> Result<Vec<f64>> {
    let grad = f_tilde.gradient(u);
    check_finite(&grad, "gradient")?;
    let mut v: Vec<f64> = u.iter().zip(&grad).map(|(ui, gi)| ui - eta * gi).collect();
    check_finite(&v, "gradient step")?;
    domain.project(&mut v);
    Ok(v)
}

/// Output of one bisection update.
#[derive(Debug, Clone, PartialEq)]
pub struct BisectionStep {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Midpoint evaluated at this step.
    pub z: Vec<f64>,
}

/// One bisection update on the vector bracket `[a, b]` with scalar sign test
/// `f(z) < 0`. An exact zero at the midpoint moves `b`.
pub fn bm_step(a: &[f64], b: &[f64], f: &Objective) -> Result<BisectionStep> {
    let (fa, fb) = (f.value(a), f.value(b));
    // After an exact hit f(b) may be 0; the bracket stays valid.
    if !(fa < 0.0 && fb >= 0.0) {
        return Err(Error::Bracket(format!(
            "need f(a) < 0 <= f(b), got f(a) = {fa}, f(b) = {fb}"
        )));
    }
    let z: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x + y) / 2.0).collect();
    Ok(if f.value(&z) < 0.0 {
        BisectionStep {
            a: z.clone(),
            b: b.to_vec(),
            z,
        }
    } else {
        BisectionStep {
            a: a.to_vec(),
            b: z.clone(),
            z,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Omd,
    Ogd,
    Bm,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Omd => "omd",
            Algorithm::Ogd => "ogd",
            Algorithm::Bm => "bm",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "omd" => Ok(Algorithm::Omd),
            "ogd" => Ok(Algorithm::Ogd),
            "bm" => Ok(Algorithm::Bm),
            other => Err(Error::InvalidConfig(format!(
                "unknown optimizer `{other}` (expected omd, ogd or bm)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialConditions {
    /// Starting points for mirror or gradient descent.
    Points(Vec<Vec<f64>>),
    /// `(a(0), b(0))` brackets for bisection.
    Brackets(Vec<(Vec<f64>, Vec<f64>)>),
}

impl InitialConditions {
    pub fn len(&self) -> usize {
        match self {
            InitialConditions::Points(p) => p.len(),
            InitialConditions::Brackets(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

const MIRROR_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const GRADIENT_GRID: [f64; 5] = [-2.30, -1.75, -1.20, -0.65, -0.10];
const BRACKET_LO_GRID: [f64; 5] = [-16.0 / 12.0, -13.0 / 12.0, -10.0 / 12.0, -7.0 / 12.0, -4.0 / 12.0];
const BRACKET_HI_GRID: [f64; 5] = [1.0 / 7.0, 0.393, 0.643, 0.893, 8.0 / 7.0];

fn product_grid(axis: &[f64]) -> Vec<Vec<f64>> {
    axis.iter()
        .flat_map(|&p| axis.iter().map(move |&q| vec![p, q]))
        .collect()
}

/// The 25 two-dimensional starting points for mirror descent.
pub fn default_omd_grid() -> Vec<Vec<f64>> {
    product_grid(&MIRROR_GRID)
}

/// The 25 two-dimensional starting points for reparameterized gradient descent.
pub fn default_ogd_grid() -> Vec<Vec<f64>> {
    product_grid(&GRADIENT_GRID)
}

/// The 25 bisection brackets: the two product grids paired index-wise.
pub fn default_bm_brackets() -> Vec<(Vec<f64>, Vec<f64>)> {
    product_grid(&BRACKET_LO_GRID)
        .into_iter()
        .zip(product_grid(&BRACKET_HI_GRID))
        .collect()
}

pub fn default_initial_conditions(algorithm: Algorithm) -> InitialConditions {
    match algorithm {
        Algorithm::Omd => InitialConditions::Points(default_omd_grid()),
        Algorithm::Ogd => InitialConditions::Points(default_ogd_grid()),
        Algorithm::Bm => InitialConditions::Brackets(default_bm_brackets()),
    }
}

/// Inputs of an optimizer simulation.
#[derive(Debug, Clone)]
pub struct OptimizerConfig {
    pub algorithm: Algorithm,
    /// The objective `f` in the original coordinates. Gradient descent runs on
    /// its exponential reparameterization.
    pub objective: Objective,
    /// Learning rate (ignored by bisection).
    pub eta: f64,
    /// Number of recorded iterates per trajectory.
    pub steps: usize,
    pub inits: InitialConditions,
    pub domain: BoxDomain,
}

impl OptimizerConfig {
    /// The default two-dimensional setup for `algorithm` with the built-in grids.
    pub fn with_defaults(algorithm: Algorithm, objective: Objective, eta: f64, steps: usize) -> Self {
        let dim = objective.dim;
        let domain = match algorithm {
            Algorithm::Omd => BoxDomain::mirror_default(dim),
            Algorithm::Ogd => BoxDomain::gradient_default(dim),
            Algorithm::Bm => BoxDomain::bisection_default(dim),
        };
        Self {
            algorithm,
            objective,
            eta,
            steps,
            inits: default_initial_conditions(algorithm),
            domain,
        }
    }
}

/// Recorded iterates and losses of an optimizer simulation.
#[derive(Debug, Clone)]
pub struct OptimizerRun {
    pub algorithm: Algorithm,
    pub eta: f64,
    pub steps: usize,
    pub inits: InitialConditions,
    /// Iterates `x(t)`, `u(t)` or `z(t)` for `t = 0..steps`.
    pub trajectory: TrajectoryEnsemble,
    /// `losses[k][t]`: objective at iterate `t` of trajectory `k` (for gradient
    /// descent, `f(exp(u))`; for bisection, `f(z)`).
    pub losses: Vec<Vec<f64>>,
}

fn wrap(trajectory: usize, step: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Step {
        trajectory,
        step,
        source: Box::new(e),
    }
}

fn run_points(
    cfg: &OptimizerConfig,
    k: usize,
    x0: &[f64],
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let dim = x0.len();
    let f_tilde = cfg.objective.exp_reparameterized();
    let mut traj = DMatrix::zeros(dim, cfg.steps);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut x = x0.to_vec();
    for t in 0..cfg.steps {
        traj.column_mut(t).copy_from_slice(&x);
        match cfg.algorithm {
            Algorithm::Omd => {
                losses.push(cfg.objective.value(&x));
                if t + 1 < cfg.steps {
                    x = omd_step(&x, &cfg.objective, cfg.eta, &cfg.domain).map_err(wrap(k, t))?;
                }
            }
            Algorithm::Ogd => {
                losses.push(f_tilde.value(&x));
                if t + 1 < cfg.steps {
                    x = ogd_step(&x, &f_tilde, cfg.eta, &cfg.domain).map_err(wrap(k, t))?;
                }
            }
            Algorithm::Bm => unreachable!("bisection uses brackets"),
        }
    }
    Ok((traj, losses))
}

fn run_bracket(
    cfg: &OptimizerConfig,
    k: usize,
    a0: &[f64],
    b0: &[f64],
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let (fa, fb) = (cfg.objective.value(a0), cfg.objective.value(b0));
    if !(fa < 0.0 && fb > 0.0) {
        return Err(wrap(k, 0)(Error::Bracket(format!(
            "initial bracket needs f(a) < 0 < f(b), got f(a) = {fa}, f(b) = {fb}"
        ))));
    }
    let mut traj = DMatrix::zeros(a0.len(), cfg.steps);
    let mut losses = Vec::with_capacity(cfg.steps);
    let (mut a, mut b) = (a0.to_vec(), b0.to_vec());
    for t in 0..cfg.steps {
        let step = bm_step(&a, &b, &cfg.objective).map_err(wrap(k, t))?;
        traj.column_mut(t).copy_from_slice(&step.z);
        losses.push(cfg.objective.value(&step.z));
        a = step.a;
        b = step.b;
    }
    Ok((traj, losses))
}

/// Evolves every initial condition for `steps` recorded iterates.
///
/// Mirror and gradient descent record `x(0), ..., x(steps-1)`; bisection
/// records the midpoints `z(0), ..., z(steps-1)`.
pub fn run(cfg: &OptimizerConfig) -> Result<OptimizerRun> {
    if cfg.steps == 0 {
        return Err(Error::InvalidConfig("steps must be at least 1".into()));
    }
    if cfg.algorithm != Algorithm::Bm && !(cfg.eta > 0.0 && cfg.eta.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "learning rate must be positive, got {}",
            cfg.eta
        )));
    }
    if cfg.inits.is_empty() {
        return Err(Error::InvalidConfig("no initial conditions".into()));
    }
    let dim = cfg.objective.dim;
    if cfg.domain.dim() != dim {
        return Err(Error::InvalidConfig(format!(
            "domain has dimension {} but the objective has {dim}",
            cfg.domain.dim()
        )));
    }

    let results: Vec<(DMatrix<f64>, Vec<f64>)> = match (&cfg.algorithm, &cfg.inits) {
        (Algorithm::Bm, InitialConditions::Brackets(brackets)) => {
            for (k, (a, b)) in brackets.iter().enumerate() {
                if a.len() != dim || b.len() != dim {
                    return Err(Error::InvalidConfig(format!(
                        "bracket {k} does not have dimension {dim}"
                    )));
                }
            }
            brackets
                .par_iter()
                .enumerate()
                .map(|(k, (a, b))| run_bracket(cfg, k, a, b))
                .collect::<Result<_>>()?
        }
        (Algorithm::Omd | Algorithm::Ogd, InitialConditions::Points(points)) => {
            for (k, p) in points.iter().enumerate() {
                if p.len() != dim || !cfg.domain.contains(p) {
                    return Err(Error::InvalidConfig(format!(
                        "initial condition {k} ({p:?}) is not a point of the {dim}-dimensional domain"
                    )));
                }
            }
            points
                .par_iter()
                .enumerate()
                .map(|(k, p)| run_points(cfg, k, p))
                .collect::<Result<_>>()?
        }
        (Algorithm::Bm, _) => {
            return Err(Error::InvalidConfig("bisection needs bracket initial conditions".into()))
        }
        _ => {
            return Err(Error::InvalidConfig(format!(
                "{} needs point initial conditions",
                cfg.algorithm
            )))
        }
    };

    let (trajectories, losses): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut meta = Meta::new();
    meta.insert("source".into(), format!("simulate:{}", cfg.algorithm));
    meta.insert("objective".into(), cfg.objective.kind.to_string());
    meta.insert("steps".into(), cfg.steps.to_string());
    if cfg.algorithm != Algorithm::Bm {
        meta.insert("eta".into(), cfg.eta.to_string());
    }
    let trajectory = TrajectoryEnsemble::with_labels(trajectories, None, meta)?;
    Ok(OptimizerRun {
        algorithm: cfg.algorithm,
        eta: cfg.eta,
        steps: cfg.steps,
        inits: cfg.inits.clone(),
        trajectory,
        losses,
    })
}
