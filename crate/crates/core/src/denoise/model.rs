//! Sparse discretisation of one smoothed denoising problem.
//!
//! The primal unknown is a flat vector `x` of scalar blocks of length `n`
//! (`TV: u`, `TGV²: v, w₁, w₂`, `ICTV: u, v`); the image block always comes
//! first. Each dual block `j` has an operator `A_j` whose rows are ordered
//! component-major, and a diagonal pairing metric `W_j` so that
//! `A_j* = A_jᵀ W_j`.

use crate::grid::{Shape, SYM_WEIGHTS};
use crate::sparse::Csr;

use super::RegulariserKind;

pub(crate) struct DualBlock {
    pub ncomp: usize,
    pub weights: &'static [f64],
    pub op: Csr,
}

pub(crate) struct Model {
    pub kind: RegulariserKind,
    pub shape: Shape,
    pub n: usize,
    pub nx: usize,
    /// H¹ Gram operator (the elliptic term without `μ`).
    pub gram: Csr,
    pub blocks: Vec<DualBlock>,
    /// Primal index whose Newton update is pinned to zero (ICTV gauge).
    pub pin: Option<usize>,
}

const VEC_WEIGHTS: [f64; 2] = [1.0, 1.0];
const MAT_WEIGHTS: [f64; 4] = [1.0, 1.0, 1.0, 1.0];

/// Forward differences `(∂ₓ, ∂ᵧ)` as `n×n` matrices.
pub(crate) fn difference_ops(s: Shape) -> (Csr, Csr) {
    let n = s.len();
    let mut tx = Vec::with_capacity(2 * n);
    let mut ty = Vec::with_capacity(2 * n);
    for j in 0..s.height {
        for i in 0..s.width {
            let k = s.idx(i, j);
            if i + 1 < s.width {
                tx.push((k, k + 1, 1.0));
                tx.push((k, k, -1.0));
            }
            if j + 1 < s.height {
                ty.push((k, k + s.width, 1.0));
                ty.push((k, k, -1.0));
            }
        }
    }
    (Csr::from_triplets(n, n, tx), Csr::from_triplets(n, n, ty))
}

/// `D = [∂ₓ; ∂ᵧ]`, `2n×n`.
pub(crate) fn grad_op(s: Shape) -> Csr {
    let n = s.len();
    let (dx, dy) = difference_ops(s);
    Csr::block(&[n, n], &[n], &[&[Some(&dx)], &[Some(&dy)]])
}

/// Symmetrised gradient `E`, `3n×2n`, rows `(xx, xy, yy)`.
pub(crate) fn sym_grad_op(s: Shape) -> Csr {
    let n = s.len();
    let (dx, dy) = difference_ops(s);
    let hdx = dx.scaled(0.5);
    let hdy = dy.scaled(0.5);
    Csr::block(
        &[n, n, n],
        &[n, n],
        &[&[Some(&dx), None], &[Some(&hdy), Some(&hdx)], &[None, Some(&dy)]],
    )
}

/// `D∇`, `4n×n`, rows `(xx, xy, yx, yy)`.
pub(crate) fn hessian_op(s: Shape) -> Csr {
    let d = grad_op(s);
    Csr::block_diag(&[&d, &d]).mul(&d)
}

impl Model {
    pub fn new(kind: RegulariserKind, shape: Shape) -> Self {
        let n = shape.len();
        let d = grad_op(shape);
        let id = Csr::identity(n);
        let lap = d.transpose().mul(&d);
        let h1 = id.add(&lap);
        match kind {
            RegulariserKind::Tv => Self {
                kind,
                shape,
                n,
                nx: n,
                gram: h1,
                blocks: vec![DualBlock {
                    ncomp: 2,
                    weights: &VEC_WEIGHTS,
                    op: d,
                }],
                pin: None,
            },
            RegulariserKind::Tgv2 => {
                let e = sym_grad_op(shape);
                let neg = Csr::identity(2 * n).scaled(-1.0);
                let a1 = Csr::block(&[2 * n], &[n, 2 * n], &[&[Some(&d), Some(&neg)]]);
                let a2 = Csr::block(&[3 * n], &[n, 2 * n], &[&[None, Some(&e)]]);
                Self {
                    kind,
                    shape,
                    n,
                    nx: 3 * n,
                    gram: Csr::block_diag(&[&h1, &h1, &h1]),
                    blocks: vec![
                        DualBlock {
                            ncomp: 2,
                            weights: &VEC_WEIGHTS,
                            op: a1,
                        },
                        DualBlock {
                            ncomp: 3,
                            weights: &SYM_WEIGHTS,
                            op: a2,
                        },
                    ],
                    pin: None,
                }
            }
            RegulariserKind::Ictv => {
                let hess = hessian_op(shape);
                let nd = d.scaled(-1.0);
                let a1 = Csr::block(&[2 * n], &[n, n], &[&[Some(&d), Some(&nd)]]);
                let a2 = Csr::block(&[4 * n], &[n, n], &[&[None, Some(&hess)]]);
                // ‖∇v‖²_{H¹} = ‖Dv‖² + ‖D∇v‖²
                let gv = lap.add(&hess.transpose().mul(&hess));
                Self {
                    kind,
                    shape,
                    n,
                    nx: 2 * n,
                    gram: Csr::block_diag(&[&h1, &gv]),
                    blocks: vec![
                        DualBlock {
                            ncomp: 2,
                            weights: &VEC_WEIGHTS,
                            op: a1,
                        },
                        DualBlock {
                            ncomp: 4,
                            weights: &MAT_WEIGHTS,
                            op: a2,
                        },
                    ],
                    pin: Some(n),
                }
            }
        }
    }

    #[cfg(test)]
    pub fn ndual(&self, j: usize) -> usize {
        self.blocks[j].ncomp * self.n
    }

    /// `A_j x`.
    pub fn apply(&self, j: usize, x: &[f64]) -> Vec<f64> {
        self.blocks[j].op.matvec(x)
    }

    /// `out += s·A_j* q` where `A_j* = A_jᵀ W_j`.
    pub fn apply_adj_add(&self, j: usize, q: &[f64], scale: f64, out: &mut [f64]) {
        let b = &self.blocks[j];
        let wq = self.weigh(j, q);
        b.op.matvec_t_add(&wq, scale, out);
    }

    pub fn weigh(&self, j: usize, q: &[f64]) -> Vec<f64> {
        let b = &self.blocks[j];
        let n = self.n;
        let mut out = q.to_vec();
        for c in 0..b.ncomp {
            let w = b.weights[c];
            if w != 1.0 {
                out[c * n..(c + 1) * n].iter_mut().for_each(|v| *v *= w);
            }
        }
        out
    }

    /// `(P + μ·Gram) x` where `P` selects the image block.
    pub fn apply_l(&self, x: &[f64], mu: f64) -> Vec<f64> {
        let mut out = self.gram.matvec(x);
        out.iter_mut().for_each(|v| *v *= mu);
        for k in 0..self.n {
            out[k] += x[k];
        }
        out
    }

    /// Pointwise component vector of block `j` at pixel `p`.
    #[inline]
    pub fn gather(&self, j: usize, z: &[f64], p: usize, buf: &mut [f64]) {
        for (c, slot) in buf.iter_mut().enumerate().take(self.blocks[j].ncomp) {
            *slot = z[c * self.n + p];
        }
    }

    /// Visits every entry of `L + Σ_j A_jᵀ G_j A_j` in a fixed order.
    ///
    /// `g[j]` holds the `ncomp×ncomp` row-major pixel blocks of `G_j`
    /// (pixel-major); `None` visits the pattern with zero values. Pinned
    /// rows/columns are zeroed and a unit diagonal is appended.
    pub fn visit_reduced(&self, mu: f64, g: Option<&[Vec<f64>]>, mut sink: impl FnMut(usize, usize, f64)) {
        let pin = self.pin;
        let mut emit = |r: usize, c: usize, v: f64| {
            if pin == Some(r) || pin == Some(c) {
                sink(r, c, 0.0)
            } else {
                sink(r, c, v)
            }
        };
        for (r, c, v) in self.gram.triplets() {
            emit(r, c, mu * v);
        }
        for k in 0..self.nx {
            emit(k, k, if k < self.n { 1.0 } else { 0.0 });
        }
        let n = self.n;
        for (j, b) in self.blocks.iter().enumerate() {
            let m = b.ncomp;
            for p in 0..n {
                for c1 in 0..m {
                    for c2 in 0..m {
                        let gv = g.map_or(0.0, |g| g[j][p * m * m + c1 * m + c2]);
                        for (ca, va) in b.op.row(c1 * n + p) {
                            for (cb, vb) in b.op.row(c2 * n + p) {
                                emit(ca, cb, va * gv * vb);
                            }
                        }
                    }
                }
            }
        }
        if let Some(k) = pin {
            sink(k, k, 1.0);
        }
    }

    pub fn reduced_pattern(&self) -> Vec<(usize, usize)> {
        let mut pat = Vec::new();
        self.visit_reduced(0.0, None, |r, c, _| pat.push((r, c)));
        pat
    }
}
