//! Smoothed lower-level denoising problem for TV, TGV² and ICTV.
//!
//! The energy is
//! `½‖u − f‖² + α Σ|A₁x|_γ + β Σ|A₂x|_γ + (μ/2)·(H¹ norms of the state)`
//! with `A₁, A₂` depending on the regulariser:
//!
//! | kind  | state  | `A₁`       | `A₂`   |
//! |-------|--------|------------|--------|
//! | TV    | `u`    | `Du`       | –      |
//! | TGV²  | `v, w` | `Dv − w`   | `Ew`   |
//! | ICTV  | `u, v` | `Du − ∇v`  | `D∇v`  |
//!
//! It is minimised by a primal-dual semismooth Newton method; see [`ssn`].

pub(crate) mod model;
pub mod ssn;

use std::fmt;
use std::str::FromStr;

use crate::error::{ParamError, SolveError};
use crate::grid::{
    grad, sym_grad, vec_grad, ImageGrid, MatField2, Shape, SymTensorField2, VectorField2, SYM_WEIGHTS,
};
use crate::huber::{value_weighted, HuberParam};
use crate::sparse::PatternLu;

use model::Model;
pub use ssn::IterInfo;
use ssn::Iterate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegulariserKind {
    Tv,
    Tgv2,
    Ictv,
}

impl RegulariserKind {
    pub const ALL: [RegulariserKind; 3] = [RegulariserKind::Tv, RegulariserKind::Tgv2, RegulariserKind::Ictv];

    pub fn name(self) -> &'static str {
        match self {
            RegulariserKind::Tv => "tv",
            RegulariserKind::Tgv2 => "tgv2",
            RegulariserKind::Ictv => "ictv",
        }
    }

    /// Number of dual blocks, which is also the number of learnable weights.
    pub fn num_params(self) -> usize {
        match self {
            RegulariserKind::Tv => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for RegulariserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegulariserKind {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tv" => Ok(Self::Tv),
            "tgv2" | "tgv" => Ok(Self::Tgv2),
            "ictv" => Ok(Self::Ictv),
            other => Err(ParamError::Invalid(format!("unknown regulariser '{other}'"))),
        }
    }
}

/// Regularisation weights and smoothing parameters of one denoising problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub alpha: f64,
    /// Second-order weight; ignored for TV.
    pub beta: f64,
    pub gamma: HuberParam,
    /// Elliptic (H¹) weight.
    pub mu: f64,
}

impl Params {
    /// `γ = 100`, `μ = 1e−10`.
    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma: HuberParam::default(),
            mu: 1e-10,
        }
    }

    pub fn with_gamma(mut self, gamma: HuberParam) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu = mu;
        self
    }

    pub fn validate(&self, kind: RegulariserKind) -> Result<(), ParamError> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.alpha) {
            return Err(ParamError::Invalid(format!("alpha must be positive, got {}", self.alpha)));
        }
        if kind != RegulariserKind::Tv && !ok(self.beta) {
            return Err(ParamError::Invalid(format!("beta must be positive, got {}", self.beta)));
        }
        if !ok(self.mu) {
            return Err(ParamError::Invalid(format!("mu must be positive, got {}", self.mu)));
        }
        if !self.gamma.gamma().is_finite() {
            return Err(ParamError::Invalid("the Newton solver needs a finite Huber γ".into()));
        }
        Ok(())
    }
}

/// Primal unknowns; the first component is always the denoised image.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimalState {
    Tv { u: ImageGrid },
    Tgv2 { v: ImageGrid, w: VectorField2 },
    /// `v` is mean-free.
    Ictv { u: ImageGrid, v: ImageGrid },
}

impl PrimalState {
    pub fn kind(&self) -> RegulariserKind {
        match self {
            PrimalState::Tv { .. } => RegulariserKind::Tv,
            PrimalState::Tgv2 { .. } => RegulariserKind::Tgv2,
            PrimalState::Ictv { .. } => RegulariserKind::Ictv,
        }
    }

    pub fn image(&self) -> &ImageGrid {
        match self {
            PrimalState::Tv { u } | PrimalState::Ictv { u, .. } => u,
            PrimalState::Tgv2 { v, .. } => v,
        }
    }

    pub fn shape(&self) -> Shape {
        self.image().shape()
    }

    /// Starting point of the solver: image = `f`, auxiliaries zero.
    pub fn initial(kind: RegulariserKind, f: &ImageGrid) -> Self {
        let s = f.shape();
        match kind {
            RegulariserKind::Tv => PrimalState::Tv { u: f.clone() },
            RegulariserKind::Tgv2 => PrimalState::Tgv2 {
                v: f.clone(),
                w: VectorField2::zeros(s),
            },
            RegulariserKind::Ictv => PrimalState::Ictv {
                u: f.clone(),
                v: ImageGrid::zeros(s),
            },
        }
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        match self {
            PrimalState::Tv { u } => u.as_slice().to_vec(),
            PrimalState::Tgv2 { v, w } => [v.as_slice(), &w.x, &w.y].concat(),
            PrimalState::Ictv { u, v } => [u.as_slice(), v.as_slice()].concat(),
        }
    }

    pub(crate) fn from_flat(kind: RegulariserKind, s: Shape, x: &[f64]) -> Self {
        let n = s.len();
        let img = |k: usize| ImageGrid::from_raw(s, x[k * n..(k + 1) * n].to_vec());
        match kind {
            RegulariserKind::Tv => PrimalState::Tv { u: img(0) },
            RegulariserKind::Tgv2 => PrimalState::Tgv2 {
                v: img(0),
                w: VectorField2::from_flat(s, &x[n..3 * n]),
            },
            RegulariserKind::Ictv => PrimalState::Ictv { u: img(0), v: img(1) },
        }
    }
}

/// Dual multipliers `q_j` of the primal-dual system.
#[derive(Debug, Clone, PartialEq)]
pub enum DualState {
    Tv { q1: VectorField2 },
    Tgv2 { q1: VectorField2, q2: SymTensorField2 },
    Ictv { q1: VectorField2, q2: MatField2 },
}

impl DualState {
    pub fn zeros(kind: RegulariserKind, s: Shape) -> Self {
        match kind {
            RegulariserKind::Tv => DualState::Tv { q1: VectorField2::zeros(s) },
            RegulariserKind::Tgv2 => DualState::Tgv2 {
                q1: VectorField2::zeros(s),
                q2: SymTensorField2::zeros(s),
            },
            RegulariserKind::Ictv => DualState::Ictv {
                q1: VectorField2::zeros(s),
                q2: MatField2::zeros(s),
            },
        }
    }

    pub fn kind(&self) -> RegulariserKind {
        match self {
            DualState::Tv { .. } => RegulariserKind::Tv,
            DualState::Tgv2 { .. } => RegulariserKind::Tgv2,
            DualState::Ictv { .. } => RegulariserKind::Ictv,
        }
    }

    pub(crate) fn to_flat(&self) -> Vec<Vec<f64>> {
        match self {
            DualState::Tv { q1 } => vec![q1.to_flat()],
            DualState::Tgv2 { q1, q2 } => vec![q1.to_flat(), q2.to_flat()],
            DualState::Ictv { q1, q2 } => vec![q1.to_flat(), q2.to_flat()],
        }
    }

    pub(crate) fn from_flat(kind: RegulariserKind, s: Shape, q: &[Vec<f64>]) -> Self {
        match kind {
            RegulariserKind::Tv => DualState::Tv {
                q1: VectorField2::from_flat(s, &q[0]),
            },
            RegulariserKind::Tgv2 => DualState::Tgv2 {
                q1: VectorField2::from_flat(s, &q[0]),
                q2: SymTensorField2::from_flat(s, &q[1]),
            },
            RegulariserKind::Ictv => DualState::Ictv {
                q1: VectorField2::from_flat(s, &q[0]),
                q2: MatField2::from_flat(s, &q[1]),
            },
        }
    }
}

/// How each Newton system is solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Eliminate the diagonal dual blocks pointwise and factor the primal
    /// Schur complement.
    #[default]
    Reduced,
    /// Factor the whole primal-dual block system.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsnConfig {
    pub armijo_c: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub linear_solver: LinearSolver,
}

impl Default for SsnConfig {
    fn default() -> Self {
        Self {
            armijo_c: 1e-4,
            tol: 1e-5,
            max_iters: 200,
            linear_solver: LinearSolver::Reduced,
        }
    }
}

impl SsnConfig {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(ParamError::Invalid("armijo_c must lie in (0, 1)".into()));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(ParamError::Invalid("tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// Norm of the primal-dual residual at the returned iterate.
    pub residual: f64,
    /// `false` when `max_iters` ran out; the best iterate is returned then.
    pub converged: bool,
    pub line_search_failures: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub primal: PrimalState,
    pub dual: DualState,
    pub stats: SolveStats,
}

/// Reusable solver for one regulariser and grid size. Holds the symbolic
/// factorisation of the Newton matrix.
pub struct Denoiser {
    model: Model,
    lu: PatternLu,
}

impl Denoiser {
    pub fn new(kind: RegulariserKind, shape: Shape) -> Result<Self, SolveError> {
        let model = Model::new(kind, shape);
        let lu = PatternLu::new(model.nx, &model.reduced_pattern())?;
        Ok(Self { model, lu })
    }

    pub fn kind(&self) -> RegulariserKind {
        self.model.kind
    }

    pub fn shape(&self) -> Shape {
        self.model.shape
    }

    pub(crate) fn model(&self) -> &Model {
        &self.model
    }

    pub(crate) fn lu(&self) -> &PatternLu {
        &self.lu
    }

    /// Solves from `warm` if given, else from the default initial state.
    pub fn solve(
        &self,
        f: &ImageGrid,
        params: &Params,
        cfg: &SsnConfig,
        warm: Option<(&PrimalState, &DualState)>,
    ) -> Result<Solution, SolveError> {
        self.solve_observed(f, params, cfg, warm, None)
    }

    pub fn solve_observed(
        &self,
        f: &ImageGrid,
        params: &Params,
        cfg: &SsnConfig,
        warm: Option<(&PrimalState, &DualState)>,
        observer: Option<&mut dyn FnMut(&IterInfo)>,
    ) -> Result<Solution, SolveError> {
        let kind = self.model.kind;
        params.validate(kind)?;
        cfg.validate()?;
        if f.shape() != self.model.shape {
            return Err(crate::error::GridError::ShapeMismatch {
                left: f.shape(),
                right: self.model.shape,
            }
            .into());
        }
        let init = match warm {
            Some((p, d)) => {
                if p.kind() != kind || d.kind() != kind || p.shape() != f.shape() {
                    return Err(SolveError::StateMismatch);
                }
                Iterate {
                    x: p.to_flat(),
                    q: d.to_flat(),
                }
            }
            None => Iterate {
                x: PrimalState::initial(kind, f).to_flat(),
                q: DualState::zeros(kind, f.shape()).to_flat(),
            },
        };
        let out = ssn::run(&self.model, &self.lu, f.as_slice(), params, cfg, init, observer)?;
        let s = self.model.shape;
        Ok(Solution {
            primal: PrimalState::from_flat(kind, s, &out.iterate.x),
            dual: DualState::from_flat(kind, s, &out.iterate.q),
            stats: out.stats,
        })
    }

    /// Norm of `L x + Σ α_j A_j* h_γ(A_j x) − f̃`, the discrete weak-form
    /// optimality residual of a primal state.
    pub fn optimality_residual(&self, state: &PrimalState, f: &ImageGrid, params: &Params) -> f64 {
        let m = &self.model;
        let x = state.to_flat();
        let mut r = m.apply_l(&x, params.mu);
        for (k, fk) in f.as_slice().iter().enumerate() {
            r[k] -= fk;
        }
        let al = ssn::alphas(params);
        let mut buf = [0.0; 4];
        for (j, b) in m.blocks.iter().enumerate() {
            let mut z = m.apply(j, &x);
            for p in 0..m.n {
                m.gather(j, &z, p, &mut buf);
                let s = crate::huber::grad_factor(crate::huber::weighted_norm(&buf[..b.ncomp], b.weights), params.gamma);
                for c in 0..b.ncomp {
                    z[c * m.n + p] *= s;
                }
            }
            m.apply_adj_add(j, &z, al[j], &mut r);
        }
        crate::grid::dot(&r, &r).sqrt()
    }
}

/// One-shot solve from the default initial state.
pub fn solve_denoise(
    f: &ImageGrid,
    kind: RegulariserKind,
    params: &Params,
    cfg: &SsnConfig,
) -> Result<Solution, SolveError> {
    Denoiser::new(kind, f.shape())?.solve(f, params, cfg, None)
}

/// Radial projection `q_j ← q_j · min(1, α_j/|q_j|)` at every pixel.
pub fn project_dual(q: &DualState, params: &Params) -> DualState {
    let kind = q.kind();
    let s = match q {
        DualState::Tv { q1 } | DualState::Tgv2 { q1, .. } | DualState::Ictv { q1, .. } => q1.shape,
    };
    let model = Model::new(kind, s);
    let mut flat = q.to_flat();
    ssn::project(&model, params, &mut flat);
    DualState::from_flat(kind, s, &flat)
}

fn huber_sum(comps: &[&[f64]], weights: &[f64], gamma: HuberParam) -> f64 {
    let n = comps[0].len();
    let mut buf = [0.0; 4];
    (0..n)
        .map(|p| {
            for (c, comp) in comps.iter().enumerate() {
                buf[c] = comp[p];
            }
            value_weighted(&buf[..comps.len()], weights, gamma)
        })
        .sum()
}

fn h1_sq(u: &[f64], s: Shape) -> f64 {
    let img = ImageGrid::from_raw(s, u.to_vec());
    img.dot(&img) + grad(&img).dot(&grad(&img))
}

/// Smoothed denoising energy of `state` for data `f`.
pub fn energy(state: &PrimalState, f: &ImageGrid, params: &Params) -> Result<f64, SolveError> {
    let img = state.image();
    img.check_same_shape(f)?;
    let s = f.shape();
    let fid = 0.5 * img.sub(f).dot(&img.sub(f));
    let g = params.gamma;
    let mu = params.mu;
    let e = match state {
        PrimalState::Tv { u } => {
            let du = grad(u);
            fid + params.alpha * huber_sum(&[&du.x, &du.y], &[1.0, 1.0], g) + 0.5 * mu * h1_sq(u.as_slice(), s)
        }
        PrimalState::Tgv2 { v, w } => {
            if w.shape != s {
                return Err(SolveError::StateMismatch);
            }
            let dv = grad(v);
            let rx: Vec<f64> = dv.x.iter().zip(&w.x).map(|(a, b)| a - b).collect();
            let ry: Vec<f64> = dv.y.iter().zip(&w.y).map(|(a, b)| a - b).collect();
            let ew = sym_grad(w);
            fid + params.alpha * huber_sum(&[&rx, &ry], &[1.0, 1.0], g)
                + params.beta * huber_sum(&[&ew.xx, &ew.xy, &ew.yy], &SYM_WEIGHTS, g)
                + 0.5 * mu * (h1_sq(v.as_slice(), s) + h1_sq(&w.x, s) + h1_sq(&w.y, s))
        }
        PrimalState::Ictv { u, v } => {
            v.check_same_shape(f)?;
            let du = grad(u);
            let gv = grad(v);
            let rx: Vec<f64> = du.x.iter().zip(&gv.x).map(|(a, b)| a - b).collect();
            let ry: Vec<f64> = du.y.iter().zip(&gv.y).map(|(a, b)| a - b).collect();
            let hv = vec_grad(&gv);
            fid + params.alpha * huber_sum(&[&rx, &ry], &[1.0, 1.0], g)
                + params.beta * huber_sum(&[&hv.xx, &hv.xy, &hv.yx, &hv.yy], &[1.0; 4], g)
                + 0.5 * mu * (h1_sq(u.as_slice(), s) + gv.dot(&gv) + hv.dot(&hv))
        }
    };
    Ok(e)
}
