//! Upper-level parameter learning: box-safeguarded BFGS on the reduced cost,
//! TV-based warm initialisation for the two-parameter regularisers, and batch
//! learning of one parameter set over several images.

use std::collections::HashMap;
use std::time::Instant;

use rayon::prelude::*;

use crate::adjoint::{cost_value, reduced_gradient, solve_adjoint, CostKind, ReducedGradient};
use crate::denoise::{Denoiser, DualState, Params, PrimalState, RegulariserKind, Solution, SsnConfig};
use crate::error::{LearnError, ParamError, SolveError};
use crate::grid::{ImageGrid, Shape};
use crate::huber::HuberParam;
use crate::quality::{psnr, ssim, MetricReport};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsConfig {
    pub armijo_c: f64,
    /// Relative parameter change at which the iteration stops.
    pub rho: f64,
    /// Lower box bound θ.
    pub theta: f64,
    /// Upper box bound Θ.
    pub theta_max: f64,
    pub max_outer_iters: usize,
    /// Initial step is `min(1, boundary_fraction·σ_max)`.
    pub boundary_fraction: f64,
    pub gamma: HuberParam,
    pub mu: f64,
    pub ssn: SsnConfig,
    /// δ₀ of the TV warm start for the two-parameter regularisers.
    pub warm_factor: WarmFactor,
}

/// Heuristic factor δ₀ in `init = (α_TV·δ₀, α_TV)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarmFactor {
    /// `δ₀ = 1/ℓ`, the choice for images mapped onto the unit square.
    InverseSize,
    Fixed(f64),
}

impl WarmFactor {
    pub fn delta(self, ell: usize) -> f64 {
        match self {
            WarmFactor::InverseSize => 1.0 / ell as f64,
            WarmFactor::Fixed(d) => d,
        }
    }
}

impl Default for WarmFactor {
    // with unit pixel spacing the 1/ℓ of the unit square becomes 1
    fn default() -> Self {
        WarmFactor::Fixed(1.0)
    }
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            armijo_c: 1e-4,
            rho: 1e-5,
            theta: 1e-8,
            theta_max: 10.0,
            max_outer_iters: 100,
            boundary_fraction: 0.5,
            gamma: HuberParam::default(),
            mu: 1e-10,
            ssn: SsnConfig::default(),
            warm_factor: WarmFactor::default(),
        }
    }
}

impl BfgsConfig {
    pub fn validate(&self) -> Result<(), ParamError> {
        if !(self.theta > 0.0 && self.theta < self.theta_max && self.theta_max.is_finite()) {
            return Err(ParamError::Invalid("box bounds need 0 < theta < theta_max".into()));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(ParamError::Invalid("armijo_c must lie in (0, 1)".into()));
        }
        if self.rho.is_nan() || self.rho <= 0.0 {
            return Err(ParamError::Invalid("rho must be positive".into()));
        }
        if !(self.boundary_fraction > 0.0 && self.boundary_fraction < 1.0) {
            return Err(ParamError::Invalid("boundary_fraction must lie in (0, 1)".into()));
        }
        if self.mu.is_nan() || self.mu <= 0.0 {
            return Err(ParamError::Invalid("mu must be positive".into()));
        }
        if let WarmFactor::Fixed(d) = self.warm_factor {
            if !(d > 0.0 && d.is_finite()) {
                return Err(ParamError::Invalid("warm factor must be positive".into()));
            }
        }
        self.ssn.validate()
    }

    pub fn params(&self, x: &[f64]) -> Params {
        Params::new(x[0], x.get(1).copied().unwrap_or(0.0))
            .with_gamma(self.gamma)
            .with_mu(self.mu)
    }
}

/// One accepted iterate of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub cost: f64,
    pub grad_norm: f64,
    /// Accepted `σ`; 0 for the initial iterate.
    pub step_length: f64,
    /// SSN iterations spent reaching this iterate (all images, all trial steps).
    pub inner_iterations: usize,
    /// The BFGS update preceding this step was skipped for negative curvature.
    pub update_skipped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Relative parameter change below `rho`.
    Converged,
    /// Line search shrank below `rho` without improving the cost.
    LineSearchStalled,
    MaxOuterIters,
}

impl StopReason {
    pub fn name(self) -> &'static str {
        match self {
            StopReason::Converged => "converged",
            StopReason::LineSearchStalled => "line-search-stalled",
            StopReason::MaxOuterIters => "max-outer-iters",
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnRecord {
    pub kind: RegulariserKind,
    pub cost_kind: CostKind,
    /// Learned parameters (`[α]` for TV, `[α, β]` otherwise).
    pub params: Vec<f64>,
    /// Reduced cost (summed over images) at the learned parameters.
    pub cost: f64,
    /// Gradient and bound multipliers at the learned parameters.
    pub gradient: ReducedGradient,
    /// Final BFGS matrix, row-major.
    pub bfgs_matrix: Vec<f64>,
    pub trace: Vec<TraceEntry>,
    pub outer_iterations: usize,
    pub stop_reason: StopReason,
    pub inner_iterations: usize,
    pub inner_unconverged: usize,
    pub denoised: Vec<ImageGrid>,
    /// Per-image quality of the final denoised images.
    pub metrics: Vec<MetricReport>,
    pub wall_time_s: f64,
}

impl LearnRecord {
    pub fn alpha(&self) -> f64 {
        self.params[0]
    }

    /// `0` for TV.
    pub fn beta(&self) -> f64 {
        self.params.get(1).copied().unwrap_or(0.0)
    }
}

/// Per-image denoising problems sharing one parameter vector.
struct Batch<'a> {
    kind: RegulariserKind,
    cost: CostKind,
    cfg: &'a BfgsConfig,
    pairs: &'a [(ImageGrid, ImageGrid)],
    solvers: Vec<Denoiser>,
    solver_of: Vec<usize>,
}

type Warm = (PrimalState, DualState);

impl<'a> Batch<'a> {
    fn new(
        pairs: &'a [(ImageGrid, ImageGrid)],
        kind: RegulariserKind,
        cost: CostKind,
        cfg: &'a BfgsConfig,
    ) -> Result<Self, LearnError> {
        let mut by_shape: HashMap<Shape, usize> = HashMap::new();
        let mut solvers = Vec::new();
        let mut solver_of = Vec::with_capacity(pairs.len());
        for (f, f0) in pairs {
            f.check_same_shape(f0)?;
            let idx = match by_shape.get(&f.shape()) {
                Some(&i) => i,
                None => {
                    let d = Denoiser::new(kind, f.shape()).map_err(|e| fail(0, &[0.0, 0.0], e))?;
                    solvers.push(d);
                    by_shape.insert(f.shape(), solvers.len() - 1);
                    solvers.len() - 1
                }
            };
            solver_of.push(idx);
        }
        Ok(Self {
            kind,
            cost,
            cfg,
            pairs,
            solvers,
            solver_of,
        })
    }

    fn solve(&self, x: &[f64], warm: Option<&[Solution]>) -> Result<Vec<Solution>, SolveError> {
        let p = self.cfg.params(x);
        (0..self.pairs.len())
            .into_par_iter()
            .map(|k| {
                let w: Option<Warm> = warm.map(|s| (s[k].primal.clone(), s[k].dual.clone()));
                self.solvers[self.solver_of[k]].solve(
                    &self.pairs[k].0,
                    &p,
                    &self.cfg.ssn,
                    w.as_ref().map(|(a, b)| (a, b)),
                )
            })
            .collect()
    }

    fn cost(&self, sols: &[Solution]) -> Result<f64, SolveError> {
        let mut total = 0.0;
        for (s, (_, f0)) in sols.iter().zip(self.pairs) {
            total += cost_value(s.primal.image(), f0, self.cost)?;
        }
        Ok(total)
    }

    fn gradient(&self, x: &[f64], sols: &[Solution]) -> Result<Vec<f64>, SolveError> {
        let p = self.cfg.params(x);
        let parts: Vec<ReducedGradient> = (0..self.pairs.len())
            .into_par_iter()
            .map(|k| {
                let den = &self.solvers[self.solver_of[k]];
                let adj = solve_adjoint(den, &sols[k].primal, &self.pairs[k].1, self.cost, &p)?;
                reduced_gradient(&sols[k].primal, &adj, &p)
            })
            .collect::<Result<_, _>>()?;
        let mut g = vec![0.0; self.kind.num_params()];
        for part in parts {
            for (gi, v) in g.iter_mut().zip(part.as_vec(self.kind)) {
                *gi += v;
            }
        }
        Ok(g)
    }
}

fn fail(iteration: usize, x: &[f64], source: SolveError) -> LearnError {
    LearnError::InnerSolveFailure {
        iteration,
        alpha: x[0],
        beta: x.get(1).copied().unwrap_or(0.0),
        source,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the small dense system `B δ = rhs` by Gaussian elimination with
/// partial pivoting.
fn solve_small(b: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = rhs.len();
    let mut a = b.to_vec();
    let mut x = rhs.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))?;
        if a[piv * n + col] == 0.0 {
            return None;
        }
        for c in 0..n {
            a.swap(col * n + c, piv * n + c);
        }
        x.swap(col, piv);
        for r in col + 1..n {
            let m = a[r * n + col] / a[col * n + col];
            for c in col..n {
                a[r * n + c] -= m * a[col * n + c];
            }
            x[r] -= m * x[col];
        }
    }
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r * n + c] * x[c]).sum();
        x[r] = (x[r] - s) / a[r * n + r];
    }
    Some(x)
}

/// `B − (Bs)(Bs)ᵀ/(sᵀBs) + r rᵀ/(sᵀr)`.
fn bfgs_update(b: &mut [f64], s: &[f64], r: &[f64]) {
    let n = s.len();
    let bs: Vec<f64> = (0..n).map(|i| (0..n).map(|j| b[i * n + j] * s[j]).sum()).collect();
    let sbs = dot(s, &bs);
    let sr = dot(s, r);
    if sbs.is_nan() || sr.is_nan() || sbs <= 0.0 || sr <= 0.0 {
        return;
    }
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] += r[i] * r[j] / sr - bs[i] * bs[j] / sbs;
        }
    }
}

/// Largest `σ ≥ 0` keeping `x + σδ` inside `[lo, hi]` componentwise.
fn max_feasible_step(x: &[f64], delta: &[f64], lo: f64, hi: f64) -> f64 {
    x.iter().zip(delta).fold(f64::INFINITY, |m, (&xi, &di)| {
        let lim = if di > 0.0 {
            (hi - xi) / di
        } else if di < 0.0 {
            (lo - xi) / di
        } else {
            f64::INFINITY
        };
        m.min(lim.max(0.0))
    })
}

/// Learns a single parameter set for one image pair.
pub fn bfgs_learn(
    f: &ImageGrid,
    f0: &ImageGrid,
    kind: RegulariserKind,
    cost: CostKind,
    cfg: &BfgsConfig,
    init: &[f64],
    b1: Option<&[f64]>,
) -> Result<LearnRecord, LearnError> {
    batch_learn(&[(f.clone(), f0.clone())], kind, cost, cfg, init, b1)
}

/// Minimises `Σ_i F(u_i(α, β), f₀_i)` over a batch of `(noisy, clean)` pairs.
/// `b1` is the row-major initial BFGS matrix (identity if `None`).
pub fn batch_learn(
    pairs: &[(ImageGrid, ImageGrid)],
    kind: RegulariserKind,
    cost: CostKind,
    cfg: &BfgsConfig,
    init: &[f64],
    b1: Option<&[f64]>,
) -> Result<LearnRecord, LearnError> {
    let start = Instant::now();
    cfg.validate()?;
    let d = kind.num_params();
    if pairs.is_empty() {
        return Err(ParamError::Invalid("batch must contain at least one image pair".into()).into());
    }
    if init.len() != d {
        return Err(ParamError::Invalid(format!("{kind} takes {d} parameters, got {}", init.len())).into());
    }
    if init.iter().any(|v| !(cfg.theta..=cfg.theta_max).contains(v)) {
        return Err(ParamError::Invalid(format!("initial parameters {init:?} outside the box")).into());
    }
    let mut b: Vec<f64> = match b1 {
        Some(m) if m.len() == d * d => m.to_vec(),
        Some(m) => return Err(ParamError::Invalid(format!("initial BFGS matrix needs {} entries, got {}", d * d, m.len())).into()),
        None => (0..d * d).map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 }).collect(),
    };

    let batch = Batch::new(pairs, kind, cost, cfg)?;
    let mut x = init.to_vec();
    let mut sols = batch.solve(&x, None).map_err(|e| fail(0, &x, e))?;
    let mut inner_total: usize = sols.iter().map(|s| s.stats.iterations).sum();
    let mut unconverged = sols.iter().filter(|s| !s.stats.converged).count();
    let mut fx = batch.cost(&sols).map_err(|e| fail(0, &x, e))?;
    let mut g = batch.gradient(&x, &sols).map_err(|e| fail(0, &x, e))?;
    let mut trace = vec![TraceEntry {
        iteration: 0,
        params: x.clone(),
        cost: fx,
        grad_norm: norm(&g),
        step_length: 0.0,
        inner_iterations: inner_total,
        update_skipped: false,
    }];
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut i = 0;

    let stop = loop {
        if i >= cfg.max_outer_iters {
            break StopReason::MaxOuterIters;
        }
        let mut skipped = false;
        if i >= 2 {
            if let Some((xp, gp)) = &prev {
                let s: Vec<f64> = x.iter().zip(xp).map(|(a, b)| a - b).collect();
                let r: Vec<f64> = g.iter().zip(gp).map(|(a, b)| a - b).collect();
                if dot(&s, &r) < 0.0 {
                    skipped = true;
                } else {
                    bfgs_update(&mut b, &s, &r);
                }
            }
        }
        let neg_g: Vec<f64> = g.iter().map(|v| -v).collect();
        let delta = solve_small(&b, &neg_g).ok_or_else(|| {
            fail(i, &x, SolveError::LinearSolveFailure("singular BFGS matrix".into()))
        })?;
        let slope = dot(&g, &delta);
        let mut sigma = (cfg.boundary_fraction * max_feasible_step(&x, &delta, cfg.theta, cfg.theta_max)).min(1.0);

        let mut tried: Vec<(f64, f64, Vec<f64>, Vec<Solution>)> = Vec::new();
        let mut spent = 0;
        let accepted = loop {
            let xs: Vec<f64> = x.iter().zip(&delta).map(|(a, dd)| a + sigma * dd).collect();
            let trial = batch.solve(&xs, Some(&sols)).map_err(|e| fail(i, &xs, e))?;
            spent += trial.iter().map(|s| s.stats.iterations).sum::<usize>();
            unconverged += trial.iter().filter(|s| !s.stats.converged).count();
            let fs = batch.cost(&trial).map_err(|e| fail(i, &xs, e))?;
            let diff: Vec<f64> = xs.iter().zip(&x).map(|(a, b)| a - b).collect();
            let small = norm(&diff) / norm(&xs) < cfg.rho;
            let armijo = fs <= fx + sigma * cfg.armijo_c * slope;
            tried.push((fs, sigma, xs, trial));
            if small {
                // smallest cost over all tried steps, first one on ties
                let best = (0..tried.len()).fold(0, |bi, k| if tried[k].0 < tried[bi].0 { k } else { bi });
                break if tried[best].0 < fx { Some(tried.swap_remove(best)) } else { None };
            }
            if armijo {
                break tried.pop();
            }
            sigma *= 0.5;
        };
        inner_total += spent;
        let Some((fs, sigma, xs, trial)) = accepted else {
            break StopReason::LineSearchStalled;
        };
        let gs = batch.gradient(&xs, &trial).map_err(|e| fail(i + 1, &xs, e))?;
        let change = norm(&xs.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<_>>()) / norm(&xs);
        prev = Some((std::mem::replace(&mut x, xs), std::mem::replace(&mut g, gs)));
        sols = trial;
        fx = fs;
        i += 1;
        trace.push(TraceEntry {
            iteration: i,
            params: x.clone(),
            cost: fx,
            grad_norm: norm(&g),
            step_length: sigma,
            inner_iterations: spent,
            update_skipped: skipped,
        });
        log::debug!("outer {i}: params {x:?} cost {fx:.6e} |g| {:.3e} sigma {sigma:.3e}", norm(&g));
        if change < cfg.rho {
            break StopReason::Converged;
        }
    };

    let p = cfg.params(&x);
    let gradient = ReducedGradient {
        g_alpha: g[0],
        g_beta: g.get(1).copied().unwrap_or(0.0),
        ..Default::default()
    }
    .with_bounds(&p, kind, cfg.theta, cfg.theta_max);
    let mut metrics = Vec::with_capacity(pairs.len());
    for (s, (_, f0)) in sols.iter().zip(pairs) {
        let u = s.primal.image();
        metrics.push(MetricReport {
            psnr: psnr(u, f0)?,
            ssim: ssim(u, f0)?,
            cost: cost_value(u, f0, cost)?,
        });
    }
    Ok(LearnRecord {
        kind,
        cost_kind: cost,
        params: x,
        cost: fx,
        gradient,
        bfgs_matrix: b,
        trace,
        outer_iterations: i,
        stop_reason: stop,
        inner_iterations: inner_total,
        inner_unconverged: unconverged,
        denoised: sols.into_iter().map(|s| s.primal.image().clone()).collect(),
        metrics,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Starting point and initial BFGS matrix for a two-parameter regulariser.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub init: [f64; 2],
    /// Row-major 2×2.
    pub b1: [f64; 4],
}

/// `init = (α_TV·δ₀, α_TV)`, `B¹ = diag(B_TV·δ₀, B_TV)`.
pub fn warm_start_from_tv(alpha_tv: f64, b_tv: f64, d0: f64) -> WarmStart {
    WarmStart {
        init: [alpha_tv * d0, alpha_tv],
        b1: [b_tv * d0, 0.0, 0.0, b_tv],
    }
}

fn characteristic_size(pairs: &[(ImageGrid, ImageGrid)]) -> usize {
    pairs.iter().map(|(f, _)| f.characteristic_size()).max().unwrap_or(1)
}

/// Learns TV from `α⁰ = 0.1/ℓ` and converts the result into a warm start.
/// Returns the TV record alongside.
pub fn warm_init(
    pairs: &[(ImageGrid, ImageGrid)],
    cost: CostKind,
    cfg: &BfgsConfig,
) -> Result<(WarmStart, LearnRecord), LearnError> {
    let tv = learn_tv(pairs, cost, cfg)?;
    let ell = characteristic_size(pairs);
    Ok((warm_start_from_tv(tv.alpha(), tv.bfgs_matrix[0], cfg.warm_factor.delta(ell)), tv))
}

fn learn_tv(pairs: &[(ImageGrid, ImageGrid)], cost: CostKind, cfg: &BfgsConfig) -> Result<LearnRecord, LearnError> {
    let ell = characteristic_size(pairs);
    let a0 = (0.1 / ell as f64).clamp(cfg.theta, cfg.theta_max);
    batch_learn(pairs, RegulariserKind::Tv, cost, cfg, &[a0], None)
}

/// Full pipeline: TV from `0.1/ℓ`; TGV² and ICTV through [`warm_init`].
pub fn learn(
    pairs: &[(ImageGrid, ImageGrid)],
    kind: RegulariserKind,
    cost: CostKind,
    cfg: &BfgsConfig,
) -> Result<LearnRecord, LearnError> {
    match kind {
        RegulariserKind::Tv => learn_tv(pairs, cost, cfg),
        _ => {
            let (ws, _) = warm_init(pairs, cost, cfg)?;
            let init = ws.init.map(|v| v.clamp(cfg.theta, cfg.theta_max));
            batch_learn(pairs, kind, cost, cfg, &init, Some(&ws.b1))
        }
    }
}
