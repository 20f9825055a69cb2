//! Infeasible primal-dual semismooth Newton iteration.
//!
//! Solves `L x + Σ A_j* q_j = f̃`, `max(1/γ, |A_j x|) q_j = α_j A_j x` by
//! Newton steps on the linearised system, with duals projected onto
//! `{|q_j| ≤ α_j}` before each Jacobian assembly and an Armijo backtracking
//! on the squared residual norm.

use std::time::Instant;

use crate::error::SolveError;
use crate::grid::dot;
use crate::huber::weighted_norm;
use crate::sparse::{Csr, PatternLu};

use super::model::Model;
use super::{LinearSolver, Params, SolveStats, SsnConfig};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Iterate {
    pub x: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

impl Iterate {
    pub fn norm_sq(&self) -> f64 {
        dot(&self.x, &self.x) + self.q.iter().map(|q| dot(q, q)).sum::<f64>()
    }
}

/// Snapshot handed to iteration observers.
pub struct IterInfo<'a> {
    pub iteration: usize,
    pub step_length: f64,
    pub residual: f64,
    /// Projected dual blocks, flat component-major.
    pub duals: &'a [Vec<f64>],
    pub bounds: [f64; 2],
    pub weights: Vec<&'static [f64]>,
    pub n: usize,
}

pub(crate) struct Residual {
    pub primal: Vec<f64>,
    pub dual: Vec<Vec<f64>>,
}

impl Residual {
    pub fn norm_sq(&self) -> f64 {
        dot(&self.primal, &self.primal) + self.dual.iter().map(|r| dot(r, r)).sum::<f64>()
    }
}

#[inline]
pub(crate) fn alphas(params: &Params) -> [f64; 2] {
    [params.alpha, params.beta]
}

pub(crate) fn fidelity_rhs(model: &Model, f: &[f64]) -> Vec<f64> {
    let mut rhs = vec![0.0; model.nx];
    rhs[..model.n].copy_from_slice(f);
    rhs
}

pub(crate) fn residual(model: &Model, f: &[f64], params: &Params, it: &Iterate) -> Residual {
    let n = model.n;
    let thr = params.gamma.threshold();
    let al = alphas(params);
    let mut primal = model.apply_l(&it.x, params.mu);
    primal.iter_mut().for_each(|v| *v = -*v);
    for (k, fk) in f.iter().enumerate() {
        primal[k] += fk;
    }
    let mut dual = Vec::with_capacity(model.blocks.len());
    let mut buf = [0.0; 4];
    for (j, b) in model.blocks.iter().enumerate() {
        model.apply_adj_add(j, &it.q[j], -1.0, &mut primal);
        let z = model.apply(j, &it.x);
        let mut r = vec![0.0; z.len()];
        for p in 0..n {
            model.gather(j, &z, p, &mut buf);
            let m = weighted_norm(&buf[..b.ncomp], b.weights).max(thr);
            for c in 0..b.ncomp {
                let k = c * n + p;
                r[k] = al[j] * z[k] - m * it.q[j][k];
            }
        }
        dual.push(r);
    }
    if let Some(k) = model.pin {
        primal[k] = 0.0;
    }
    Residual { primal, dual }
}

/// Radial projection of every pixel of every dual block onto its ball.
pub(crate) fn project(model: &Model, params: &Params, q: &mut [Vec<f64>]) {
    let n = model.n;
    let al = alphas(params);
    let mut buf = [0.0; 4];
    for (j, b) in model.blocks.iter().enumerate() {
        for p in 0..n {
            model.gather(j, &q[j], p, &mut buf);
            let norm = weighted_norm(&buf[..b.ncomp], b.weights);
            // rounding slack keeps the projection idempotent
            if norm > al[j] * (1.0 + 4.0 * f64::EPSILON) {
                let s = al[j] / norm;
                for c in 0..b.ncomp {
                    q[j][c * n + p] *= s;
                }
            }
        }
    }
}

/// Per-pixel linearisation data of one dual block.
struct BlockLin {
    m: Vec<f64>,
    /// `(α I − q nᵀ W)` pixel blocks, row-major `ncomp×ncomp`.
    coupling: Vec<f64>,
}

fn linearise(model: &Model, params: &Params, it: &Iterate) -> Vec<BlockLin> {
    let n = model.n;
    let thr = params.gamma.threshold();
    let al = alphas(params);
    let mut zb = [0.0; 4];
    model
        .blocks
        .iter()
        .enumerate()
        .map(|(j, b)| {
            let nc = b.ncomp;
            let z = model.apply(j, &it.x);
            let mut m = vec![0.0; n];
            let mut coupling = vec![0.0; n * nc * nc];
            for p in 0..n {
                model.gather(j, &z, p, &mut zb);
                let norm = weighted_norm(&zb[..nc], b.weights);
                let active = norm >= thr;
                m[p] = norm.max(thr);
                let blk = &mut coupling[p * nc * nc..(p + 1) * nc * nc];
                for c1 in 0..nc {
                    blk[c1 * nc + c1] = al[j];
                    if active {
                        let qc = it.q[j][c1 * n + p];
                        for c2 in 0..nc {
                            blk[c1 * nc + c2] -= qc * zb[c2] / norm * b.weights[c2];
                        }
                    }
                }
            }
            BlockLin { m, coupling }
        })
        .collect()
}

/// Newton direction `(δx, δq)` at `it` (duals assumed already projected).
pub(crate) fn newton_step(
    model: &Model,
    params: &Params,
    it: &Iterate,
    res: &Residual,
    solver: LinearSolver,
    lu: Option<&PatternLu>,
) -> Result<Iterate, SolveError> {
    let lin = linearise(model, params, it);
    match solver {
        LinearSolver::Reduced => reduced_step(model, params, res, &lin, lu),
        LinearSolver::Full => full_step(model, params, res, &lin),
    }
}

fn reduced_step(
    model: &Model,
    params: &Params,
    res: &Residual,
    lin: &[BlockLin],
    lu: Option<&PatternLu>,
) -> Result<Iterate, SolveError> {
    let n = model.n;
    // G_j = W (αI − q nᵀW) / m, and rhs = R₀ − Σ A_jᵀ W R_j / m.
    let mut g = Vec::with_capacity(lin.len());
    let mut rhs = res.primal.clone();
    for (j, (b, l)) in model.blocks.iter().zip(lin).enumerate() {
        let nc = b.ncomp;
        let mut gj = l.coupling.clone();
        for p in 0..n {
            let inv = 1.0 / l.m[p];
            for c1 in 0..nc {
                for c2 in 0..nc {
                    gj[p * nc * nc + c1 * nc + c2] *= b.weights[c1] * inv;
                }
            }
        }
        g.push(gj);
        let mut scaled = res.dual[j].clone();
        for c in 0..nc {
            for p in 0..n {
                scaled[c * n + p] /= l.m[p];
            }
        }
        model.apply_adj_add(j, &scaled, -1.0, &mut rhs);
    }
    if let Some(k) = model.pin {
        rhs[k] = 0.0;
    }

    let owned;
    let lu = match lu {
        Some(lu) => lu,
        None => {
            owned = PatternLu::new(model.nx, &model.reduced_pattern())?;
            &owned
        }
    };
    let mut values = Vec::with_capacity(lu_capacity_hint(model));
    model.visit_reduced(params.mu, Some(&g), |_, _, v| values.push(v));
    let dx = lu.factor(&values)?.solve(&rhs)?;

    let dq = recover_duals(model, res, lin, &dx);
    Ok(Iterate { x: dx, q: dq })
}

fn lu_capacity_hint(model: &Model) -> usize {
    model.gram.nnz() + model.nx + model.blocks.iter().map(|b| b.op.nnz() * b.ncomp * 4).sum::<usize>()
}

/// `δq_j = (R_j + (αI − q nᵀW) A_j δx) / m`.
fn recover_duals(model: &Model, res: &Residual, lin: &[BlockLin], dx: &[f64]) -> Vec<Vec<f64>> {
    let n = model.n;
    let mut abuf = [0.0; 4];
    model
        .blocks
        .iter()
        .zip(lin)
        .enumerate()
        .map(|(j, (b, l))| {
            let nc = b.ncomp;
            let adx = model.apply(j, dx);
            let mut dq = vec![0.0; nc * n];
            for p in 0..n {
                model.gather(j, &adx, p, &mut abuf);
                let blk = &l.coupling[p * nc * nc..(p + 1) * nc * nc];
                for c1 in 0..nc {
                    let mut acc = res.dual[j][c1 * n + p];
                    for c2 in 0..nc {
                        acc += blk[c1 * nc + c2] * abuf[c2];
                    }
                    dq[c1 * n + p] = acc / l.m[p];
                }
            }
            dq
        })
        .collect()
}

/// Solves the unreduced block system directly.
fn full_step(model: &Model, params: &Params, res: &Residual, lin: &[BlockLin]) -> Result<Iterate, SolveError> {
    let n = model.n;
    let nx = model.nx;
    let pin = model.pin;
    let mut trips: Vec<(usize, usize, f64)> = Vec::new();
    let keep = |r: usize, c: usize| pin != Some(r) && pin != Some(c);

    for (r, c, v) in model.gram.triplets() {
        if keep(r, c) {
            trips.push((r, c, params.mu * v));
        }
    }
    for k in 0..n {
        trips.push((k, k, 1.0));
    }
    let mut offsets = Vec::new();
    let mut off = nx;
    for (b, l) in model.blocks.iter().zip(lin) {
        offsets.push(off);
        let nc = b.ncomp;
        for c in 0..nc {
            for p in 0..n {
                let row = c * n + p;
                for (col, v) in b.op.row(row) {
                    if pin != Some(col) {
                        // A_jᵀ W_j block
                        trips.push((col, off + row, v * b.weights[c]));
                    }
                }
                // (q nᵀW − αI) A_j block
                let blk = &l.coupling[p * nc * nc..(p + 1) * nc * nc];
                for c2 in 0..nc {
                    let coef = -blk[c * nc + c2];
                    if coef == 0.0 {
                        continue;
                    }
                    for (col, v) in b.op.row(c2 * n + p) {
                        if pin != Some(col) {
                            trips.push((off + row, col, coef * v));
                        }
                    }
                }
                trips.push((off + row, off + row, l.m[p]));
            }
        }
        off += nc * n;
    }
    if let Some(k) = pin {
        trips.push((k, k, 1.0));
    }
    let dim = off;
    let mat = Csr::from_triplets(dim, dim, trips);
    let pattern: Vec<(usize, usize)> = mat.triplets().map(|(r, c, _)| (r, c)).collect();
    let values: Vec<f64> = mat.triplets().map(|(_, _, v)| v).collect();
    let mut rhs = res.primal.clone();
    if let Some(k) = pin {
        rhs[k] = 0.0;
    }
    for r in &res.dual {
        rhs.extend_from_slice(r);
    }
    let sol = PatternLu::new(dim, &pattern)?.factor(&values)?.solve(&rhs)?;
    let dx = sol[..nx].to_vec();
    let dq = model
        .blocks
        .iter()
        .zip(&offsets)
        .map(|(b, &o)| sol[o..o + b.ncomp * n].to_vec())
        .collect();
    Ok(Iterate { x: dx, q: dq })
}

fn recentre_gauge(model: &Model, x: &mut [f64]) {
    if model.pin.is_some() {
        let n = model.n;
        let v = &mut x[n..2 * n];
        let mean = v.iter().sum::<f64>() / n as f64;
        v.iter_mut().for_each(|e| *e -= mean);
    }
}

pub(crate) struct Outcome {
    pub iterate: Iterate,
    pub stats: SolveStats,
}

pub(crate) fn run(
    model: &Model,
    lu: &PatternLu,
    f: &[f64],
    params: &Params,
    cfg: &SsnConfig,
    mut it: Iterate,
    mut observer: Option<&mut dyn FnMut(&IterInfo)>,
) -> Result<Outcome, SolveError> {
    let start = Instant::now();
    let fr = fidelity_rhs(model, f);
    project(model, params, &mut it.q);
    recentre_gauge(model, &mut it.x);

    let mut res = residual(model, &fr, params, &it);
    let mut phi = res.norm_sq();
    let mut best = (phi, it.clone());
    let mut converged = false;
    let mut iterations = 0;
    let mut ls_failures = 0;

    let emit = |obs: &mut Option<&mut dyn FnMut(&IterInfo)>, k: usize, tau: f64, phi: f64, q: &[Vec<f64>]| {
        if let Some(o) = obs {
            o(&IterInfo {
                iteration: k,
                step_length: tau,
                residual: phi.sqrt(),
                duals: q,
                bounds: alphas(params),
                weights: model.blocks.iter().map(|b| b.weights).collect(),
                n: model.n,
            });
        }
    };
    emit(&mut observer, 0, 0.0, phi, &it.q);

    while iterations < cfg.max_iters {
        iterations += 1;
        let step = newton_step(model, params, &it, &res, cfg.linear_solver, Some(lu))?;
        let y_norm = it.norm_sq().sqrt().max(1.0);
        let step_norm = step.norm_sq().sqrt();

        let trial_at = |tau: f64| {
            let mut t = Iterate {
                x: it.x.iter().zip(&step.x).map(|(a, d)| a + tau * d).collect(),
                q: it
                    .q
                    .iter()
                    .zip(&step.q)
                    .map(|(q, d)| q.iter().zip(d).map(|(a, b)| a + tau * b).collect())
                    .collect(),
            };
            project(model, params, &mut t.q);
            recentre_gauge(model, &mut t.x);
            let r = residual(model, &fr, params, &t);
            let p = r.norm_sq();
            (t, r, p)
        };

        let mut tau = 1.0;
        let mut accepted = None;
        let mut first = None;
        for _ in 0..40 {
            let (t, r, p) = trial_at(tau);
            if p <= (1.0 - 2.0 * cfg.armijo_c * tau) * phi {
                accepted = Some((t, r, p));
                break;
            }
            if first.is_none() {
                first = Some((t, r, p));
            }
            tau *= 0.5;
        }
        let (t, r, p) = match accepted {
            Some(a) => a,
            None => {
                // No sufficient decrease: take the full (projected) step.
                ls_failures += 1;
                tau = 1.0;
                first.expect("at least one trial")
            }
        };
        it = t;
        res = r;
        phi = p;
        if phi < best.0 {
            best = (phi, it.clone());
        }
        emit(&mut observer, iterations, tau, phi, &it.q);

        if tau * step_norm / y_norm <= cfg.tol && tau == 1.0 {
            converged = true;
            break;
        }
        if phi == 0.0 {
            converged = true;
            break;
        }
    }

    let final_it = if converged { it } else { best.1 };
    let final_res = residual(model, &fr, params, &final_it).norm_sq().sqrt();
    Ok(Outcome {
        iterate: final_it,
        stats: SolveStats {
            iterations,
            residual: final_res,
            converged,
            line_search_failures: ls_failures,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}
