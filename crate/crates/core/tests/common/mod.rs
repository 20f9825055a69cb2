//! Shared fixtures and the criterion checks used by several test targets.
#![allow(dead_code)]

use bilevel_core::adjoint::evaluate;
use bilevel_core::{CostKind, Denoiser, ImageGrid, Params, RegulariserKind, Shape, SsnConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Outcome of one acceptance check.
#[derive(Debug, Clone)]
pub struct Check {
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Blocky random image: a few constant rectangles plus a mild ramp.
pub fn blocky(shape: Shape, rng: &mut ChaCha8Rng) -> ImageGrid {
    let rects: Vec<(usize, usize, usize, usize, f64)> = (0..3)
        .map(|_| {
            let i0 = rng.random_range(0..shape.width - 1);
            let j0 = rng.random_range(0..shape.height - 1);
            let i1 = rng.random_range(i0 + 1..=shape.width);
            let j1 = rng.random_range(j0 + 1..=shape.height);
            (i0, j0, i1, j1, rng.random_range(0.1..0.9))
        })
        .collect();
    let slope = rng.random_range(-0.03..0.03);
    ImageGrid::from_fn(shape, |i, j| {
        let mut v = 0.4 + slope * (i as f64 - j as f64);
        for &(i0, j0, i1, j1, c) in &rects {
            if (i0..i1).contains(&i) && (j0..j1).contains(&j) {
                v = c;
            }
        }
        v
    })
}

pub fn add_noise(img: &ImageGrid, sd: f64, rng: &mut ChaCha8Rng) -> ImageGrid {
    let data = img.as_slice().iter().map(|v| v + rng.random_range(-sd..sd)).collect();
    ImageGrid::new(img.width(), img.height(), data).unwrap()
}

pub fn tight_ssn() -> SsnConfig {
    SsnConfig {
        tol: 1e-13,
        max_iters: 400,
        ..SsnConfig::default()
    }
}

/// One gradient-fidelity instance.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub kind: RegulariserKind,
    pub cost: CostKind,
    pub adjoint: Vec<f64>,
    pub fd: Vec<f64>,
    pub rel_err: f64,
}

/// Adjoint gradient against central differences of the reduced cost at a
/// random 8×8 instance.
pub fn gradient_instance(kind: RegulariserKind, cost: CostKind, seed: u64) -> GradInstance {
    let mut r = rng(seed);
    let shape = Shape::new(8, 8).unwrap();
    let f0 = blocky(shape, &mut r);
    let f = add_noise(&f0, 0.08, &mut r);
    let alpha = r.random_range(0.02..0.15);
    let beta = r.random_range(0.02..0.15);
    let den = Denoiser::new(kind, shape).unwrap();
    let ssn = tight_ssn();
    let params = Params::new(alpha, beta);
    let base = evaluate(&den, &f, &f0, cost, &params, &ssn, None).unwrap();
    let adjoint = base.gradient.as_vec(kind);
    let warm = Some((&base.solution.primal, &base.solution.dual));
    let fd: Vec<f64> = (0..kind.num_params())
        .map(|k| {
            let h = 1e-5 * if k == 0 { alpha } else { beta };
            let at = |d: f64| {
                let mut p = params;
                if k == 0 {
                    p.alpha += d;
                } else {
                    p.beta += d;
                }
                evaluate(&den, &f, &f0, cost, &p, &ssn, warm).unwrap().cost
            };
            (at(h) - at(-h)) / (2.0 * h)
        })
        .collect();
    let scale = adjoint.iter().chain(&fd).fold(0.0f64, |m, v| m.max(v.abs()));
    let rel_err = adjoint.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale.max(1e-300);
    GradInstance {
        kind,
        cost,
        adjoint,
        fd,
        rel_err,
    }
}

pub const KINDS: [RegulariserKind; 3] = [RegulariserKind::Tv, RegulariserKind::Tgv2, RegulariserKind::Ictv];

pub fn costs() -> [CostKind; 2] {
    [CostKind::L22, CostKind::huber_tv()]
}

/// Gradient fidelity over `per_pair` seeds for each (kind, cost).
pub fn check_gradient_fidelity(per_pair: u64) -> (Check, Vec<GradInstance>) {
    let mut all = Vec::new();
    for kind in KINDS {
        for cost in costs() {
            for s in 0..per_pair {
                all.push(gradient_instance(kind, cost, 1000 + 17 * s + kind.num_params() as u64));
            }
        }
    }
    let worst = all.iter().map(|g| g.rel_err).fold(0.0, f64::max);
    let check = Check::new(worst <= 1e-3, format!("{} instances, worst relative error {worst:.2e}", all.len()));
    (check, all)
}

// ---------------------------------------------------------------------------
// First-order oracle for the smooth denoising energy

use bilevel_core::grid::{grad, grad_adj, sym_grad, sym_grad_adj, vec_grad, vec_grad_adj};
use bilevel_core::{energy, MatField2, PrimalState, SymTensorField2, VectorField2};

fn factor(r: f64, gamma: f64) -> f64 {
    1.0 / r.max(1.0 / gamma)
}

fn scale_vec(p: &mut VectorField2, gamma: f64) {
    for k in 0..p.x.len() {
        let s = factor(p.x[k].hypot(p.y[k]), gamma);
        p.x[k] *= s;
        p.y[k] *= s;
    }
}

fn scale_sym(t: &mut SymTensorField2, gamma: f64) {
    for k in 0..t.xx.len() {
        let s = factor((t.xx[k].powi(2) + 2.0 * t.xy[k].powi(2) + t.yy[k].powi(2)).sqrt(), gamma);
        t.xx[k] *= s;
        t.xy[k] *= s;
        t.yy[k] *= s;
    }
}

fn scale_mat(m: &mut MatField2, gamma: f64) {
    for k in 0..m.xx.len() {
        let s = factor((m.xx[k].powi(2) + m.xy[k].powi(2) + m.yx[k].powi(2) + m.yy[k].powi(2)).sqrt(), gamma);
        m.xx[k] *= s;
        m.xy[k] *= s;
        m.yx[k] *= s;
        m.yy[k] *= s;
    }
}

fn img(s: Shape, v: &[f64]) -> ImageGrid {
    ImageGrid::new(s.width, s.height, v.to_vec()).unwrap()
}

fn field(s: Shape, v: &[f64]) -> VectorField2 {
    let n = s.len();
    VectorField2 {
        shape: s,
        x: v[..n].to_vec(),
        y: v[n..2 * n].to_vec(),
    }
}

fn sub(a: &VectorField2, b: &VectorField2) -> VectorField2 {
    VectorField2 {
        shape: a.shape,
        x: a.x.iter().zip(&b.x).map(|(p, q)| p - q).collect(),
        y: a.y.iter().zip(&b.y).map(|(p, q)| p - q).collect(),
    }
}

fn lap(u: &ImageGrid) -> Vec<f64> {
    grad_adj(&grad(u)).into_vec()
}

/// Unknowns of the oracle: the image followed by the auxiliary variable.
pub fn oracle_state(kind: RegulariserKind, s: Shape, x: &[f64]) -> PrimalState {
    let n = s.len();
    match kind {
        RegulariserKind::Tv => PrimalState::Tv { u: img(s, x) },
        RegulariserKind::Tgv2 => PrimalState::Tgv2 {
            v: img(s, &x[..n]),
            w: field(s, &x[n..]),
        },
        RegulariserKind::Ictv => PrimalState::Ictv {
            u: img(s, &x[..n]),
            v: img(s, &x[n..]),
        },
    }
}

/// Gradient of the smooth energy, coded from its definition.
pub fn energy_gradient(kind: RegulariserKind, s: Shape, x: &[f64], f: &ImageGrid, p: &Params) -> Vec<f64> {
    let n = s.len();
    let g = p.gamma.gamma();
    let (a, b, mu) = (p.alpha, p.beta, p.mu);
    let fid = |u: &[f64]| -> Vec<f64> {
        let l = lap(&img(s, u));
        (0..n).map(|k| u[k] - f.as_slice()[k] + mu * (u[k] + l[k])).collect()
    };
    match kind {
        RegulariserKind::Tv => {
            let mut r = grad(&img(s, x));
            scale_vec(&mut r, g);
            let d = grad_adj(&r).into_vec();
            fid(x).iter().zip(&d).map(|(v, d)| v + a * d).collect()
        }
        RegulariserKind::Tgv2 => {
            let v = img(s, &x[..n]);
            let w = field(s, &x[n..]);
            let mut r = sub(&grad(&v), &w);
            scale_vec(&mut r, g);
            let mut t = sym_grad(&w);
            scale_sym(&mut t, g);
            let ew = sym_grad_adj(&t);
            let dr = grad_adj(&r).into_vec();
            let mut out: Vec<f64> = fid(&x[..n]).iter().zip(&dr).map(|(v, d)| v + a * d).collect();
            let (lx, ly) = (lap(&img(s, &w.x)), lap(&img(s, &w.y)));
            out.extend((0..n).map(|k| -a * r.x[k] + b * ew.x[k] + mu * (w.x[k] + lx[k])));
            out.extend((0..n).map(|k| -a * r.y[k] + b * ew.y[k] + mu * (w.y[k] + ly[k])));
            out
        }
        RegulariserKind::Ictv => {
            let u = img(s, &x[..n]);
            let v = img(s, &x[n..]);
            let gv = grad(&v);
            let mut r = sub(&grad(&u), &gv);
            scale_vec(&mut r, g);
            let dgv = vec_grad(&gv);
            let mut m = dgv.clone();
            scale_mat(&mut m, g);
            let dr = grad_adj(&r).into_vec();
            let mut out: Vec<f64> = fid(&x[..n]).iter().zip(&dr).map(|(v, d)| v + a * d).collect();
            // v enters through ∇v only: -α ∇ᵀr + β ∇ᵀDᵀm + μ(∇ᵀ∇v + ∇ᵀDᵀD∇v)
            let mut inner = vec_grad_adj(&m);
            let hv = vec_grad_adj(&dgv);
            for k in 0..n {
                inner.x[k] = -a * r.x[k] + b * inner.x[k] + mu * (gv.x[k] + hv.x[k]);
                inner.y[k] = -a * r.y[k] + b * inner.y[k] + mu * (gv.y[k] + hv.y[k]);
            }
            out.extend(grad_adj(&inner).into_vec());
            out
        }
    }
}

/// Accelerated gradient descent with function-value restarts, run until the
/// gradient stagnates. Returns the image component.
pub fn first_order_oracle(kind: RegulariserKind, f: &ImageGrid, p: &Params) -> ImageGrid {
    let s = f.shape();
    let n = s.len();
    let g = p.gamma.gamma();
    let lip = match kind {
        RegulariserKind::Tv => 1.0 + 8.0 * p.alpha * g,
        RegulariserKind::Tgv2 => 1.0 + 16.0 * p.alpha * g + 8.0 * p.beta * g,
        RegulariserKind::Ictv => 1.0 + 16.0 * p.alpha * g + 64.0 * p.beta * g,
    } + 80.0 * p.mu;
    let step = 1.0 / lip;
    let extra = match kind {
        RegulariserKind::Tv => 0,
        RegulariserKind::Tgv2 => 2 * n,
        RegulariserKind::Ictv => n,
    };
    let mut x: Vec<f64> = f.as_slice().iter().copied().chain(std::iter::repeat_n(0.0, extra)).collect();
    let mut y = x.clone();
    let mut t = 1.0f64;
    let mut prev = f64::INFINITY;
    for _ in 0..600_000 {
        let gr = energy_gradient(kind, s, &y, f, p);
        if gr.iter().map(|v| v * v).sum::<f64>().sqrt() < 1e-11 {
            x = y;
            break;
        }
        let xn: Vec<f64> = y.iter().zip(&gr).map(|(a, b)| a - step * b).collect();
        let e = energy(&oracle_state(kind, s, &xn), f, p).unwrap();
        if e > prev {
            t = 1.0;
            y = x.clone();
            prev = f64::INFINITY;
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = xn.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect();
        x = xn;
        t = tn;
        prev = e;
    }
    img(s, &x[..n])
}

/// Central-difference check of [`energy_gradient`] against `energy`.
pub fn oracle_gradient_error(kind: RegulariserKind, seed: u64) -> f64 {
    let mut r = rng(seed);
    let s = Shape::new(6, 5).unwrap();
    let f = add_noise(&blocky(s, &mut r), 0.1, &mut r);
    let p = Params::new(0.07, 0.11).with_mu(1e-2);
    let dim = s.len()
        * match kind {
            RegulariserKind::Tv => 1,
            RegulariserKind::Tgv2 => 3,
            RegulariserKind::Ictv => 2,
        };
    let x: Vec<f64> = (0..dim).map(|_| r.random_range(-0.5..0.5)).collect();
    let g = energy_gradient(kind, s, &x, &f, &p);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for k in 0..dim {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        let e = |z: &[f64]| energy(&oracle_state(kind, s, z), &f, &p).unwrap();
        let fd = (e(&xp) - e(&xm)) / (2.0 * h);
        worst = worst.max((fd - g[k]).abs() / g[k].abs().max(1.0));
    }
    worst
}

// ---------------------------------------------------------------------------
// Criterion checks

use bilevel_core::denoise::IterInfo;
use bilevel_core::huber::{huber_grad, huber_jacobian, huber_value};
use bilevel_core::HuberParam;

/// Inner solver: oracle agreement, constant data, dual feasibility.
pub fn check_inner_solver() -> Check {
    let s = Shape::new(8, 8).unwrap();
    let mut worst_oracle = 0.0f64;
    let mut worst_const = 0.0f64;
    let mut worst_feas = f64::NEG_INFINITY;
    for (k, kind) in KINDS.iter().enumerate() {
        let mut r = rng(300 + k as u64);
        let f = add_noise(&blocky(s, &mut r), 0.1, &mut r);
        let p = Params::new(0.1, 0.1);
        let den = Denoiser::new(*kind, s).unwrap();
        let mut obs = |info: &IterInfo| {
            for (j, q) in info.duals.iter().enumerate() {
                for px in 0..info.n {
                    let nc = q.len() / info.n;
                    let norm = (0..nc).map(|c| info.weights[j][c] * q[c * info.n + px].powi(2)).sum::<f64>().sqrt();
                    worst_feas = worst_feas.max(norm - info.bounds[j]);
                }
            }
        };
        let sol = den.solve_observed(&f, &p, &tight_ssn(), None, Some(&mut obs)).unwrap();
        let oracle = first_order_oracle(*kind, &f, &p);
        worst_oracle = worst_oracle.max(sol.primal.image().max_abs_diff(&oracle));

        let c = 0.37;
        let fc = ImageGrid::constant(s, c);
        let sol = den.solve(&fc, &p, &SsnConfig::default(), None).unwrap();
        let exact = c / (1.0 + p.mu);
        worst_const = worst_const.max(sol.primal.image().as_slice().iter().map(|v| (v - exact).abs()).fold(0.0, f64::max));
    }
    Check::new(
        worst_oracle <= 1e-4 && worst_const <= 1e-9 && worst_feas <= 1e-12,
        format!(
            "oracle gap {worst_oracle:.1e} (≤ 1e-4), constant data {worst_const:.1e} (≤ 1e-9), max |q| − α {worst_feas:.1e} (≤ 1e-12, rounding)"
        ),
    )
}

fn rand_vec(s: Shape, r: &mut ChaCha8Rng) -> VectorField2 {
    VectorField2::from_fn(s, |_, _| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)])
}

/// Operator algebra: adjoint identities and Huber derivatives.
pub fn check_operator_algebra() -> Check {
    let mut r = rng(3);
    let mut adj = 0.0f64;
    for _ in 0..50 {
        let s = Shape::new(r.random_range(2..12), r.random_range(2..12)).unwrap();
        let u = ImageGrid::from_fn(s, |_, _| r.random_range(-1.0..1.0));
        let p = rand_vec(s, &mut r);
        let lhs = grad(&u).dot(&p);
        let rhs = u.dot(&grad_adj(&p));
        adj = adj.max((lhs - rhs).abs() / (u.norm() * p.norm()));
        let w = rand_vec(s, &mut r);
        let t = SymTensorField2::from_fn(s, |_, _| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]);
        let lhs = sym_grad(&w).dot(&t);
        let rhs = w.dot(&sym_grad_adj(&t));
        adj = adj.max((lhs - rhs).abs() / (w.norm() * t.norm()));
    }
    let mut fd_grad = 0.0f64;
    let mut fd_jac = 0.0f64;
    let mut bound = 0.0f64;
    for _ in 0..500 {
        let gam = HuberParam::new(10f64.powf(r.random_range(0.0..3.0))).unwrap();
        let dim = if r.random_bool(0.5) { 2 } else { 4 };
        let scale = if r.random_bool(0.5) { 0.5 / gam.gamma() } else { 3.0 };
        let g: Vec<f64> = (0..dim).map(|_| r.random_range(-scale..scale)).collect();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        let hg = huber_grad(&g, gam);
        bound = bound.max(hg.iter().map(|v| v * v).sum::<f64>().sqrt());
        // stay clear of the branch switch at ‖g‖ = 1/γ
        let h = 1e-7 * norm.max(1.0 / gam.gamma());
        if (norm - 1.0 / gam.gamma()).abs() < 10.0 * h * dim as f64 {
            continue;
        }
        let jac = huber_jacobian(&g, gam);
        for k in 0..dim {
            let mut gp = g.clone();
            let mut gm = g.clone();
            gp[k] += h;
            gm[k] -= h;
            let fd = (huber_value(&gp, gam) - huber_value(&gm, gam)) / (2.0 * h);
            fd_grad = fd_grad.max((fd - hg[k]).abs() / hg[k].abs().max(1.0));
            let (hp, hm) = (huber_grad(&gp, gam), huber_grad(&gm, gam));
            for i in 0..dim {
                let fd = (hp[i] - hm[i]) / (2.0 * h);
                let scale = jac.iter().fold(1.0f64, |m, v| m.max(v.abs()));
                fd_jac = fd_jac.max((fd - jac[i * dim + k]).abs() / scale);
            }
        }
    }
    Check::new(
        adj <= 1e-12 && fd_grad <= 1e-6 && fd_jac <= 1e-6 && bound <= 1.0 + 1e-15,
        format!("adjoint {adj:.1e} (≤ 1e-12), huber grad FD {fd_grad:.1e}, jacobian FD {fd_jac:.1e} (≤ 1e-6), max |h| {bound}"),
    )
}

use bilevel_core::quality::{format_psnr, t_critical, Direction};
use bilevel_core::{add_gaussian_noise, batch_learn, bfgs_learn, learn, paired_t_test, psnr, ssim, synthetic, BfgsConfig};
use bilevel_core::{cost_value, LearnRecord};

/// Reduced L22 cost of TV at `alpha`.
pub fn tv_cost(den: &Denoiser, f: &ImageGrid, f0: &ImageGrid, alpha: f64, cfg: &BfgsConfig) -> f64 {
    let p = Params::new(alpha, 0.0).with_gamma(cfg.gamma).with_mu(cfg.mu);
    let sol = den.solve(f, &p, &cfg.ssn, None).unwrap();
    cost_value(sol.primal.image(), f0, CostKind::L22).unwrap()
}

/// The noisy/clean pair used for the TV optimality check.
pub fn tv_fixture() -> (ImageGrid, ImageGrid) {
    let f0 = synthetic::piecewise_constant(32);
    let f = add_gaussian_noise(&f0, 20.0, 1).unwrap();
    (f, f0)
}

/// Outer-loop optimality of TV learning against a 50-point log-grid scan.
pub fn check_outer_optimality() -> (Check, LearnRecord) {
    let (f, f0) = tv_fixture();
    let cfg = BfgsConfig::default();
    let rec = learn(&[(f.clone(), f0.clone())], RegulariserKind::Tv, CostKind::L22, &cfg).unwrap();
    let den = Denoiser::new(RegulariserKind::Tv, f.shape()).unwrap();
    let grid: Vec<f64> = (0..50).map(|k| 1e-3 * 100f64.powf(k as f64 / 49.0)).collect();
    let (a_grid, f_grid) = grid
        .iter()
        .map(|&a| (a, tv_cost(&den, &f, &f0, a, &cfg)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .unwrap();
    let a_star = rec.alpha();
    let rel = (a_star - a_grid).abs() / a_grid;
    let f_star = tv_cost(&den, &f, &f0, a_star, &cfg);
    let monotone = rec.trace.windows(2).all(|w| w[1].cost <= w[0].cost);
    let in_box = rec.trace.iter().flat_map(|t| &t.params).all(|v| (cfg.theta..=cfg.theta_max).contains(v));
    let pass = rel <= 0.05 && monotone && in_box && f_star <= f_grid * (1.0 + 1e-9);
    let detail = format!(
        "α* = {a_star:.6}, grid argmin {a_grid:.6} ({:.2}% apart, ≤ 5%), F(α*) = {f_star:.6e} vs grid min {f_grid:.6e}, trace monotone: {monotone}, in box: {in_box}",
        100.0 * rel
    );
    (Check::new(pass, detail), rec)
}

/// The noisy/clean pair used for the ratio check (noisy PSNR ≈ 24.7 dB).
pub fn ratio_fixture() -> (ImageGrid, ImageGrid) {
    let f0 = synthetic::geometric(64);
    let f = add_gaussian_noise(&f0, 215.0, 1).unwrap();
    (f, f0)
}

/// TGV² weight ratio with the warm initialisation, plus a local 3×3 grid
/// sanity check around the learned point.
pub fn check_parameter_ratio() -> (Check, LearnRecord) {
    let (f, f0) = ratio_fixture();
    let cfg = BfgsConfig::default();
    let rec = learn(&[(f.clone(), f0.clone())], RegulariserKind::Tgv2, CostKind::L22, &cfg).unwrap();
    let (a, b) = (rec.alpha(), rec.beta());
    let ratio = b / a;
    let ell = f.characteristic_size() as f64;
    let den = Denoiser::new(RegulariserKind::Tgv2, f.shape()).unwrap();
    let at = |a: f64, b: f64| {
        let p = Params::new(a, b).with_gamma(cfg.gamma).with_mu(cfg.mu);
        let sol = den.solve(&f, &p, &cfg.ssn, None).unwrap();
        cost_value(sol.primal.image(), &f0, CostKind::L22).unwrap()
    };
    let centre = at(a, b);
    let mut worst_neighbour = f64::INFINITY;
    for sa in [0.8, 1.0, 1.25] {
        for sb in [0.8, 1.0, 1.25] {
            if (sa, sb) != (1.0, 1.0) {
                worst_neighbour = worst_neighbour.min(at(a * sa, b * sb));
            }
        }
    }
    let band = ratio > 0.5 && ratio < 2.0;
    let local_min = centre <= worst_neighbour;
    let detail = format!(
        "(α*, β*) = ({a:.5}, {b:.5}), β*/α* = {ratio:.3} on the unit-spacing grid = {:.3}/ℓ in unit-square units (ℓ = {ell}), band (0.5, 2.0)/ℓ: {band}; F = {centre:.5e}, best ±25% neighbour {worst_neighbour:.5e}, stop: {}",
        ratio,
        rec.stop_reason.name()
    );
    (Check::new(band && local_min, detail), rec)
}

/// Batch algebra: N = 1 batch equals individual learning; a duplicated pair
/// lands on the same parameters.
pub fn check_batch_algebra() -> Check {
    let mut r = rng(61);
    let s = Shape::new(16, 16).unwrap();
    let f0 = blocky(s, &mut r);
    let f = add_gaussian_noise(&f0, 100.0, 5).unwrap();
    let cfg = BfgsConfig::default();
    let mut details = Vec::new();
    let mut pass = true;
    for (kind, init) in [(RegulariserKind::Tv, vec![0.01]), (RegulariserKind::Tgv2, vec![0.02, 0.02])] {
        let single = bfgs_learn(&f, &f0, kind, CostKind::L22, &cfg, &init, None).unwrap();
        let batch1 = batch_learn(&[(f.clone(), f0.clone())], kind, CostKind::L22, &cfg, &init, None).unwrap();
        let dup = batch_learn(&[(f.clone(), f0.clone()), (f.clone(), f0.clone())], kind, CostKind::L22, &cfg, &init, None).unwrap();
        let identical = single.params == batch1.params && single.trace == batch1.trace;
        let dev = single.params.iter().zip(&dup.params).map(|(a, b)| (a - b).abs() / a.abs()).fold(0.0, f64::max);
        pass &= identical && dev <= 1e-3;
        details.push(format!("{kind}: N=1 identical {identical}, duplicate rel. deviation {dev:.1e} (≤ 1e-3)"));
    }
    Check::new(pass, details.join("; "))
}

/// Metrics: PSNR closed form, SSIM identity and symmetry, t-test oracle.
pub fn check_metrics() -> Check {
    let mut r = rng(8);
    let s = Shape::new(24, 20).unwrap();
    let a = ImageGrid::from_fn(s, |_, _| r.random_range(0.0..1.0));
    let b = add_noise(&a, 0.2, &mut r);
    let p20 = psnr(&a.map(|v| v + 0.1), &a).unwrap();
    let pinf = format_psnr(psnr(&a, &a).unwrap());
    let s_id = ssim(&a, &a).unwrap();
    let sym = (ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs();

    // independent oracle: direct formula and a tabulated critical value
    let x = [0.81, 0.77, 0.92, 0.68, 0.88, 0.73, 0.95, 0.79, 0.84, 0.71];
    let y = [0.78, 0.79, 0.85, 0.66, 0.86, 0.70, 0.90, 0.80, 0.79, 0.69];
    let d: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p - q).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let sd = (d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t_oracle = mean / (sd / n.sqrt());
    const T_95_DF9: f64 = 1.833_113;
    let t = paired_t_test(&x, &y).unwrap();
    let t_err = (t.t - t_oracle).abs();
    let crit_err = (t.critical - T_95_DF9).abs().max((t_critical(9, 0.05) - T_95_DF9).abs());
    let verdict = t.significant == (t_oracle > T_95_DF9) && t.direction == Direction::AGreater && t.df == 9;
    let pass = (p20 - 20.0).abs() < 1e-9 && pinf == "inf" && (s_id - 1.0).abs() <= 1e-12 && sym <= 1e-12 && t_err <= 1e-6 && crit_err <= 1e-6 && verdict;
    Check::new(
        pass,
        format!("psnr(+0.1) = {p20:.12} dB, psnr(identical) = {pinf}, ssim identity {s_id}, asymmetry {sym:.1e}, t = {:.6} vs oracle {t_oracle:.6}, critical {:.6}", t.t, t.critical),
    )
}

use bilevel_core::harness::{clean_path, denoised_path, read_image, run_compare, run_learn, Criterion, ExperimentConfig, InputSpec, Mode};

fn protocol_config(out: &std::path::Path, count: usize, noise: Vec<f64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse("regularisers = tv, tgv2, ictv\ncosts = l22\nseed = 7\ntimings = false\n").unwrap();
    cfg.noise_levels = noise;
    cfg.input = InputSpec::Synthetic { count, size: 64 };
    cfg.output = out.to_path_buf();
    cfg
}

/// Runs the full comparison protocol on ten synthetic 64×64 images at
/// noise variances 2 and 20, then audits the persisted outputs.
pub fn check_protocol(out: &std::path::Path) -> Check {
    let cfg = protocol_config(&out.join("full"), 10, vec![2.0, 20.0]);
    let report = match run_compare(&cfg) {
        Ok(r) => r,
        Err(e) => return Check::new(false, format!("protocol run failed: {e}")),
    };
    let mut problems = Vec::new();
    let mut lines = Vec::new();
    if report.comparisons.len() != 2 {
        problems.push(format!("{} comparison groups", report.comparisons.len()));
    }
    for c in &report.comparisons {
        let g = report.learn.group(c.noise, "l22").expect("group for every comparison");
        let tag = format!("s{}", c.noise);
        if c.degenerate || c.rows.len() != 10 || c.tests.len() != 9 {
            problems.push(format!("{tag}: {} rows, {} t-tests", c.rows.len(), c.tests.len()));
        }
        for (k, crit) in Criterion::ALL.iter().enumerate() {
            let wins: usize = c.summaries.iter().map(|s| s[k].best).sum();
            if wins != c.rows.len() {
                problems.push(format!("{tag}: {} best counts sum to {wins}", crit.name()));
            }
        }
        for f in ["summary", "ttest", "order", "matrix"] {
            let p = cfg.output.join(format!("{f}_individual_l22_{tag}.csv"));
            if !p.is_file() {
                problems.push(format!("missing {}", p.display()));
            }
        }
        let mut worst = 0.0f64;
        for r in &g.rows {
            let noisy = g.noisy.iter().find(|n| n.image == r.image).expect("noisy row per image");
            if r.psnr.is_nan() || r.psnr <= noisy.psnr {
                problems.push(format!("{tag}: {} {} psnr {:.2} not above noisy {:.2}", r.image, r.regulariser, r.psnr, noisy.psnr));
            }
            let u = read_image(denoised_path(&cfg.output, Mode::Individual, &CostKind::L22, c.noise, &r.image, &r.regulariser));
            let f0 = read_image(clean_path(&cfg.output, &r.image));
            match (u, f0) {
                (Ok(u), Ok(f0)) => {
                    let p = psnr(&u, &f0).unwrap();
                    let s = ssim(&u, &f0).unwrap();
                    let v = cost_value(&u, &f0, CostKind::L22).unwrap();
                    worst = worst.max((p - r.psnr).abs()).max((s - r.ssim).abs()).max((v - r.value).abs());
                }
                _ => problems.push(format!("{tag}: unreadable output for {} {}", r.image, r.regulariser)),
            }
        }
        if worst > 1e-9 {
            problems.push(format!("{tag}: rescoring differs by {worst:.1e}"));
        }
        lines.push(format!(
            "s{} ssim [{}] psnr [{}] cost [{}], rescore {worst:.0e}",
            c.noise, c.orderings[0], c.orderings[1], c.orderings[2]
        ));
    }

    // rerun the first two images at the lower noise and compare CSV lines
    let sub = protocol_config(&out.join("sub"), 2, vec![2.0]);
    match run_learn(&sub) {
        Ok(o) => {
            let full = std::fs::read_to_string(&report.learn.group(2.0, "l22").expect("s2 group").learn_csv).unwrap_or_default();
            let part = std::fs::read_to_string(&o.groups[0].learn_csv).unwrap_or_default();
            let missing = part.lines().skip(1).filter(|l| !full.lines().any(|f| f == *l)).count();
            if missing > 0 || part.lines().count() != 7 {
                problems.push(format!("rerun: {missing} of {} rows differ", part.lines().count().saturating_sub(1)));
            }
        }
        Err(e) => problems.push(format!("rerun failed: {e}")),
    }

    let pass = problems.is_empty();
    let mut detail = lines.join("; ");
    if !pass {
        detail = format!("{detail}; problems: {}", problems.join("; "));
    } else {
        detail.push_str("; rerun byte-identical");
    }
    Check::new(pass, detail)
}
