//! Upper-level costs, the adjoint system and the reduced gradient of
//! `𝓕(α, β) = F(u(α, β))`.
//!
//! With `K = L + Σ α_j A_j* h'_γ(A_j x) A_j` the Jacobian of the smooth
//! optimality system at the solution `x`, the adjoint state solves
//! `Kᵀ Π = −∇ₓF` and `∂𝓕/∂α_j = ⟨A_j Π, h_γ(A_j x)⟩`.

use std::fmt;
use std::str::FromStr;

use crate::denoise::model::Model;
use crate::denoise::{Denoiser, DualState, Params, PrimalState, RegulariserKind, Solution, SsnConfig};
use crate::error::{GridError, ParamError, SolveError};
use crate::grid::{
    dot, grad, grad_adj, sym_grad, vec_grad, ImageGrid, MatField2, SymTensorField2, VectorField2, SYM_WEIGHTS,
};
use crate::huber::{grad_factor, jacobian_weighted, value_weighted, weighted_norm, HuberParam};

/// Upper-level cost comparing a denoised image with the ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostKind {
    /// `½‖f₀ − u‖²`.
    L22,
    /// `Σ |D(f₀ − u)|_γc`.
    HuberTvGrad(HuberParam),
}

impl CostKind {
    pub fn huber_tv() -> Self {
        CostKind::HuberTvGrad(HuberParam::default())
    }

    pub fn name(&self) -> &'static str {
        match self {
            CostKind::L22 => "l22",
            CostKind::HuberTvGrad(_) => "huber-tv",
        }
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostKind {
    type Err = ParamError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l22" | "l2" => Ok(CostKind::L22),
            "huber-tv" | "htv" | "huber-tv-grad" => Ok(CostKind::huber_tv()),
            other => Err(ParamError::Invalid(format!("unknown cost '{other}'"))),
        }
    }
}

pub fn cost_value(u: &ImageGrid, f0: &ImageGrid, cost: CostKind) -> Result<f64, GridError> {
    u.check_same_shape(f0)?;
    let d = u.sub(f0);
    Ok(match cost {
        CostKind::L22 => 0.5 * d.dot(&d),
        CostKind::HuberTvGrad(g) => {
            let gd = grad(&d);
            (0..d.as_slice().len())
                .map(|k| value_weighted(&gd.at(k), &[1.0, 1.0], g))
                .sum()
        }
    })
}

/// Gradient of the cost with respect to the image.
pub fn cost_grad_u(u: &ImageGrid, f0: &ImageGrid, cost: CostKind) -> Result<ImageGrid, GridError> {
    u.check_same_shape(f0)?;
    let d = u.sub(f0);
    Ok(match cost {
        CostKind::L22 => d,
        CostKind::HuberTvGrad(g) => {
            let mut gd = grad(&d);
            for k in 0..gd.x.len() {
                let s = grad_factor(gd.x[k].hypot(gd.y[k]), g);
                gd.x[k] *= s;
                gd.y[k] *= s;
            }
            grad_adj(&gd)
        }
    })
}

/// Adjoint state `Π`; it lives in the same space as the primal state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub pi: PrimalState,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ReducedGradient {
    pub g_alpha: f64,
    /// Zero for TV.
    pub g_beta: f64,
    /// Bound multipliers; non-zero only at an active bound.
    pub lambda1: f64,
    pub lambda2: f64,
}

impl ReducedGradient {
    /// Gradient components in parameter order (`[g_α]` for TV).
    pub fn as_vec(&self, kind: RegulariserKind) -> Vec<f64> {
        match kind {
            RegulariserKind::Tv => vec![self.g_alpha],
            _ => vec![self.g_alpha, self.g_beta],
        }
    }

    /// Fills the multipliers for the box `[lo, hi]`: at an active lower bound
    /// `λ = max(g, 0)`, at an active upper bound `λ = max(−g, 0)`.
    pub fn with_bounds(mut self, params: &Params, kind: RegulariserKind, lo: f64, hi: f64) -> Self {
        let mult = |v: f64, g: f64| {
            if v <= lo * (1.0 + 1e-6) {
                g.max(0.0)
            } else if v >= hi * (1.0 - 1e-6) {
                (-g).max(0.0)
            } else {
                0.0
            }
        };
        self.lambda1 = mult(params.alpha, self.g_alpha);
        self.lambda2 = if kind == RegulariserKind::Tv { 0.0 } else { mult(params.beta, self.g_beta) };
        self
    }
}

/// Pixel blocks `α_j W_j h'_γ(A_j x)` of the adjoint operator.
fn jacobian_blocks(model: &Model, x: &[f64], params: &Params) -> Vec<Vec<f64>> {
    let al = [params.alpha, params.beta];
    let n = model.n;
    let mut buf = [0.0; 4];
    model
        .blocks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let nc = b.ncomp;
            let z = model.apply(j, x);
            let mut g = vec![0.0; n * nc * nc];
            for p in 0..n {
                model.gather(j, &z, p, &mut buf);
                let jac = jacobian_weighted(&buf[..nc], b.weights, params.gamma);
                for r in 0..nc {
                    for c in 0..nc {
                        g[p * nc * nc + r * nc + c] = al[j] * b.weights[r] * jac[r * nc + c];
                    }
                }
            }
            g
        })
        .collect()
}

#[cfg(test)]
/// `Z ↦ L Z + Σ α_j A_j* h'_γ(A_j x)[A_j Z]`, the linearised optimality operator.
pub(crate) fn linearised_apply(model: &Model, x: &[f64], params: &Params, z: &[f64]) -> Vec<f64> {
    apply_operator(model, x, params, z, false)
}

#[cfg(test)]
/// Transpose of [`linearised_apply`] in the Euclidean pairing.
pub(crate) fn adjoint_apply(model: &Model, x: &[f64], params: &Params, z: &[f64]) -> Vec<f64> {
    apply_operator(model, x, params, z, true)
}

#[cfg(test)]
fn apply_operator(model: &Model, x: &[f64], params: &Params, z: &[f64], transpose: bool) -> Vec<f64> {
    let g = jacobian_blocks(model, x, params);
    let n = model.n;
    let mut out = model.apply_l(z, params.mu);
    let mut buf = [0.0; 4];
    for (j, b) in model.blocks.iter().enumerate() {
        let nc = b.ncomp;
        let az = model.apply(j, z);
        let mut t = vec![0.0; az.len()];
        for p in 0..n {
            model.gather(j, &az, p, &mut buf);
            let blk = &g[j][p * nc * nc..(p + 1) * nc * nc];
            for r in 0..nc {
                t[r * n + p] = (0..nc)
                    .map(|c| if transpose { blk[c * nc + r] } else { blk[r * nc + c] } * buf[c])
                    .sum();
            }
        }
        b.op.matvec_t_add(&t, 1.0, &mut out);
    }
    out
}

/// Solves `Kᵀ Π = −∇ₓF` at a converged primal state.
pub fn solve_adjoint(
    den: &Denoiser,
    primal: &PrimalState,
    f0: &ImageGrid,
    cost: CostKind,
    params: &Params,
) -> Result<AdjointState, SolveError> {
    let model = den.model();
    if primal.kind() != model.kind || primal.shape() != model.shape {
        return Err(SolveError::StateMismatch);
    }
    let x = primal.to_flat();
    let fu = cost_grad_u(primal.image(), f0, cost)?;
    let mut rhs = vec![0.0; model.nx];
    for (r, v) in rhs.iter_mut().zip(fu.as_slice()) {
        *r = -v;
    }
    let g = jacobian_blocks(model, &x, params);
    let mut values = Vec::new();
    model.visit_reduced(params.mu, Some(&g), |_, _, v| values.push(v));
    if let Some(k) = model.pin {
        rhs[k] = 0.0;
    }
    let mut pi = den.lu().factor(&values)?.solve_transpose(&rhs)?;
    if model.pin.is_some() {
        // only ∇Π_v enters the gradient; fix the free constant
        let n = model.n;
        let mean = pi[n..].iter().sum::<f64>() / n as f64;
        pi[n..].iter_mut().for_each(|v| *v -= mean);
    }
    Ok(AdjointState {
        pi: PrimalState::from_flat(model.kind, model.shape, &pi),
    })
}

fn huber_pair_vec(a: &VectorField2, z: &VectorField2, gamma: HuberParam) -> f64 {
    (0..a.x.len())
        .map(|k| {
            let s = grad_factor(z.x[k].hypot(z.y[k]), gamma);
            s * (a.x[k] * z.x[k] + a.y[k] * z.y[k])
        })
        .sum()
}

fn vec_diff(a: &VectorField2, b: &VectorField2) -> VectorField2 {
    VectorField2 {
        shape: a.shape,
        x: a.x.iter().zip(&b.x).map(|(p, q)| p - q).collect(),
        y: a.y.iter().zip(&b.y).map(|(p, q)| p - q).collect(),
    }
}

fn huber_pair_sym(a: &SymTensorField2, z: &SymTensorField2, gamma: HuberParam) -> f64 {
    (0..a.xx.len())
        .map(|k| {
            let s = grad_factor(weighted_norm(&z.at(k), &SYM_WEIGHTS), gamma);
            s * (a.xx[k] * z.xx[k] + 2.0 * a.xy[k] * z.xy[k] + a.yy[k] * z.yy[k])
        })
        .sum()
}

fn huber_pair_mat(a: &MatField2, z: &MatField2, gamma: HuberParam) -> f64 {
    (0..a.xx.len())
        .map(|k| {
            let zk = [z.xx[k], z.xy[k], z.yx[k], z.yy[k]];
            let ak = [a.xx[k], a.xy[k], a.yx[k], a.yy[k]];
            grad_factor(weighted_norm(&zk, &[1.0; 4]), gamma) * dot(&ak, &zk)
        })
        .sum()
}

/// `g_α = ⟨A₁Π, h_γ(A₁x)⟩`, `g_β = ⟨A₂Π, h_γ(A₂x)⟩`.
pub fn reduced_gradient(primal: &PrimalState, adjoint: &AdjointState, params: &Params) -> Result<ReducedGradient, SolveError> {
    let g = params.gamma;
    let (ga, gb) = match (primal, &adjoint.pi) {
        (PrimalState::Tv { u }, PrimalState::Tv { u: p }) => (huber_pair_vec(&grad(p), &grad(u), g), 0.0),
        (PrimalState::Tgv2 { v, w }, PrimalState::Tgv2 { v: p1, w: p2 }) => (
            huber_pair_vec(&vec_diff(&grad(p1), p2), &vec_diff(&grad(v), w), g),
            huber_pair_sym(&sym_grad(p2), &sym_grad(w), g),
        ),
        (PrimalState::Ictv { u, v }, PrimalState::Ictv { u: p1, v: p2 }) => {
            let (gv, gp2) = (grad(v), grad(p2));
            (
                huber_pair_vec(&vec_diff(&grad(p1), &gp2), &vec_diff(&grad(u), &gv), g),
                huber_pair_mat(&vec_grad(&gp2), &vec_grad(&gv), g),
            )
        }
        _ => return Err(SolveError::StateMismatch),
    };
    Ok(ReducedGradient {
        g_alpha: ga,
        g_beta: gb,
        ..Default::default()
    })
}

/// Cost, reduced gradient and inner solution at one parameter point.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: f64,
    pub gradient: ReducedGradient,
    pub solution: Solution,
}

pub fn evaluate(
    den: &Denoiser,
    f: &ImageGrid,
    f0: &ImageGrid,
    cost: CostKind,
    params: &Params,
    cfg: &SsnConfig,
    warm: Option<(&PrimalState, &DualState)>,
) -> Result<Evaluation, SolveError> {
    let solution = den.solve(f, params, cfg, warm)?;
    let value = cost_value(solution.primal.image(), f0, cost)?;
    let adj = solve_adjoint(den, &solution.primal, f0, cost, params)?;
    let gradient = reduced_gradient(&solution.primal, &adj, params)?;
    Ok(Evaluation {
        cost: value,
        gradient,
        solution,
    })
}
