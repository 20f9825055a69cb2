//! Discrete fields on a `W×H` pixel lattice and the first/second order
//! difference operators used by every energy in the crate.
//!
//! Storage is row-major: pixel `(i, j)` (column `i`, row `j`) lives at
//! `j * width + i`. Differences are forward differences with a replicate
//! (Neumann) boundary, so the last column (row) of an x-difference
//! (y-difference) is zero. Every operator has an exact discrete adjoint.

use crate::error::GridError;

/// Lattice dimensions shared by all fields of one problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub width: usize,
    pub height: usize,
}

impl Shape {
    pub fn new(width: usize, height: usize) -> Result<Self, GridError> {
        if width < 2 || height < 2 {
            return Err(GridError::TooSmall { width, height });
        }
        Ok(Self { width, height })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.width + i
    }

    /// `ℓ = max(W, H)`.
    pub fn characteristic_size(&self) -> usize {
        self.width.max(self.height)
    }
}

/// Scalar intensity field (images `u`, `f`, `f₀`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGrid {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self, GridError> {
        let shape = Shape::new(width, height)?;
        if data.len() != shape.len() {
            return Err(GridError::LengthMismatch {
                expected: shape.len(),
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFinite { index: pos });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::constant(shape, 0.0)
    }

    pub fn constant(shape: Shape, value: f64) -> Self {
        Self {
            shape,
            data: vec![value; shape.len()],
        }
    }

    /// Builds a grid from `f(i, j)`.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for j in 0..shape.height {
            for i in 0..shape.width {
                data.push(f(i, j));
            }
        }
        Self { shape, data }
    }

    /// Wraps raw data without the finiteness check; used for intermediates.
    pub(crate) fn from_raw(shape: Shape, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), shape.len());
        Self { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.shape.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn characteristic_size(&self) -> usize {
        self.shape.characteristic_size()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.shape.idx(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.shape.idx(i, j);
        self.data[k] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Population standard deviation.
    pub fn std(&self) -> f64 {
        let m = self.mean();
        let var = self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.data.len() as f64;
        var.sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::from_raw(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_raw(
            self.shape,
            self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        )
    }

    pub(crate) fn check_same_shape(&self, other: &Self) -> Result<(), GridError> {
        if self.shape != other.shape {
            return Err(GridError::ShapeMismatch {
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }
}

/// Per-pixel `ℝ²` field: image gradients, `w`, `∇v`, dual `q₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField2 {
    pub shape: Shape,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl VectorField2 {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            x: vec![0.0; shape.len()],
            y: vec![0.0; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize) -> [f64; 2]) -> Self {
        let mut out = Self::zeros(shape);
        for j in 0..shape.height {
            for i in 0..shape.width {
                let k = shape.idx(i, j);
                let [a, b] = f(i, j);
                out.x[k] = a;
                out.y[k] = b;
            }
        }
        out
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.x, &other.x) + dot(&self.y, &other.y)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn at(&self, k: usize) -> [f64; 2] {
        [self.x[k], self.y[k]]
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        let mut v = self.x.clone();
        v.extend_from_slice(&self.y);
        v
    }

    pub(crate) fn from_flat(shape: Shape, flat: &[f64]) -> Self {
        let n = shape.len();
        Self {
            shape,
            x: flat[..n].to_vec(),
            y: flat[n..2 * n].to_vec(),
        }
    }
}

/// Symmetric 2×2 tensor per pixel, `[[xx, xy], [xy, yy]]`.
///
/// The pairing counts the off-diagonal twice so that it agrees with the full
/// Frobenius product of the represented matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensorField2 {
    pub shape: Shape,
    pub xx: Vec<f64>,
    pub xy: Vec<f64>,
    pub yy: Vec<f64>,
}

/// Pairing weights of the stored `(xx, xy, yy)` components.
pub const SYM_WEIGHTS: [f64; 3] = [1.0, 2.0, 1.0];

impl SymTensorField2 {
    pub fn zeros(shape: Shape) -> Self {
        Self {
            shape,
            xx: vec![0.0; shape.len()],
            xy: vec![0.0; shape.len()],
            yy: vec![0.0; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut out = Self::zeros(shape);
        for j in 0..shape.height {
            for i in 0..shape.width {
                let k = shape.idx(i, j);
                let [a, b, c] = f(i, j);
                out.xx[k] = a;
                out.xy[k] = b;
                out.yy[k] = c;
            }
        }
        out
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.xx, &other.xx) + 2.0 * dot(&self.xy, &other.xy) + dot(&self.yy, &other.yy)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    #[inline]
    pub fn at(&self, k: usize) -> [f64; 3] {
        [self.xx[k], self.xy[k], self.yy[k]]
    }

    /// Frobenius norm of the tensor at pixel `k`.
    #[inline]
    pub fn pointwise_norm(&self, k: usize) -> f64 {
        let [a, b, c] = self.at(k);
        (a * a + 2.0 * b * b + c * c).sqrt()
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        [self.xx.as_slice(), &self.xy, &self.yy].concat()
    }

    pub(crate) fn from_flat(shape: Shape, flat: &[f64]) -> Self {
        let n = shape.len();
        Self {
            shape,
            xx: flat[..n].to_vec(),
            xy: flat[n..2 * n].to_vec(),
            yy: flat[2 * n..3 * n].to_vec(),
        }
    }
}

/// General (non-symmetric) 2×2 matrix per pixel; the derivative `D∇v` of a
/// vector field. Component `ab` is `∂_b` of component `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct MatField2 {
    pub shape: Shape,
    pub xx: Vec<f64>,
    pub xy: Vec<f64>,
    pub yx: Vec<f64>,
    pub yy: Vec<f64>,
}

impl MatField2 {
    pub fn zeros(shape: Shape) -> Self {
        let n = shape.len();
        Self {
            shape,
            xx: vec![0.0; n],
            xy: vec![0.0; n],
            yx: vec![0.0; n],
            yy: vec![0.0; n],
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.xx, &other.xx)
            + dot(&self.xy, &other.xy)
            + dot(&self.yx, &other.yx)
            + dot(&self.yy, &other.yy)
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        [self.xx.as_slice(), &self.xy, &self.yx, &self.yy].concat()
    }

    pub(crate) fn from_flat(shape: Shape, flat: &[f64]) -> Self {
        let n = shape.len();
        Self {
            shape,
            xx: flat[..n].to_vec(),
            xy: flat[n..2 * n].to_vec(),
            yx: flat[2 * n..3 * n].to_vec(),
            yy: flat[3 * n..4 * n].to_vec(),
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Slice-level stencils; the typed operators below and the sparse assembly
/// tests are built on these.
pub(crate) mod stencil {
    use super::Shape;

    /// `out += s·∂ₓu` (forward, zero on the last column).
    pub fn dx_add(s: Shape, u: &[f64], scale: f64, out: &mut [f64]) {
        for j in 0..s.height {
            let row = j * s.width;
            for i in 0..s.width - 1 {
                out[row + i] += scale * (u[row + i + 1] - u[row + i]);
            }
        }
    }

    /// `out += s·∂ᵧu` (forward, zero on the last row).
    pub fn dy_add(s: Shape, u: &[f64], scale: f64, out: &mut [f64]) {
        for j in 0..s.height - 1 {
            let row = j * s.width;
            for i in 0..s.width {
                out[row + i] += scale * (u[row + s.width + i] - u[row + i]);
            }
        }
    }

    /// `out += s·∂ₓᵀp`.
    pub fn dx_adj_add(s: Shape, p: &[f64], scale: f64, out: &mut [f64]) {
        for j in 0..s.height {
            let row = j * s.width;
            for i in 0..s.width - 1 {
                let v = scale * p[row + i];
                out[row + i + 1] += v;
                out[row + i] -= v;
            }
        }
    }

    /// `out += s·∂ᵧᵀp`.
    pub fn dy_adj_add(s: Shape, p: &[f64], scale: f64, out: &mut [f64]) {
        for j in 0..s.height - 1 {
            let row = j * s.width;
            for i in 0..s.width {
                let v = scale * p[row + i];
                out[row + s.width + i] += v;
                out[row + i] -= v;
            }
        }
    }
}

/// Forward-difference gradient `Du`.
pub fn grad(u: &ImageGrid) -> VectorField2 {
    let s = u.shape();
    let mut out = VectorField2::zeros(s);
    stencil::dx_add(s, u.as_slice(), 1.0, &mut out.x);
    stencil::dy_add(s, u.as_slice(), 1.0, &mut out.y);
    out
}

/// Exact adjoint of [`grad`] (equal to minus the discrete divergence).
pub fn grad_adj(p: &VectorField2) -> ImageGrid {
    let s = p.shape;
    let mut out = vec![0.0; s.len()];
    stencil::dx_adj_add(s, &p.x, 1.0, &mut out);
    stencil::dy_adj_add(s, &p.y, 1.0, &mut out);
    ImageGrid::from_raw(s, out)
}

/// Symmetrised gradient `Ew = ½(Dw + Dwᵀ)`.
pub fn sym_grad(w: &VectorField2) -> SymTensorField2 {
    let s = w.shape;
    let mut out = SymTensorField2::zeros(s);
    stencil::dx_add(s, &w.x, 1.0, &mut out.xx);
    stencil::dy_add(s, &w.x, 0.5, &mut out.xy);
    stencil::dx_add(s, &w.y, 0.5, &mut out.xy);
    stencil::dy_add(s, &w.y, 1.0, &mut out.yy);
    out
}

/// Adjoint of [`sym_grad`] under the weighted Frobenius pairing.
pub fn sym_grad_adj(t: &SymTensorField2) -> VectorField2 {
    let s = t.shape;
    let mut out = VectorField2::zeros(s);
    // ⟨Ew, T⟩ = ⟨w₁, ∂ₓᵀa + ∂ᵧᵀb⟩ + ⟨w₂, ∂ₓᵀb + ∂ᵧᵀc⟩
    stencil::dx_adj_add(s, &t.xx, 1.0, &mut out.x);
    stencil::dy_adj_add(s, &t.xy, 1.0, &mut out.x);
    stencil::dx_adj_add(s, &t.xy, 1.0, &mut out.y);
    stencil::dy_adj_add(s, &t.yy, 1.0, &mut out.y);
    out
}

/// Componentwise gradient of a vector field, `(∂ₓp₁, ∂ᵧp₁, ∂ₓp₂, ∂ᵧp₂)`.
pub fn vec_grad(p: &VectorField2) -> MatField2 {
    let s = p.shape;
    let mut out = MatField2::zeros(s);
    stencil::dx_add(s, &p.x, 1.0, &mut out.xx);
    stencil::dy_add(s, &p.x, 1.0, &mut out.xy);
    stencil::dx_add(s, &p.y, 1.0, &mut out.yx);
    stencil::dy_add(s, &p.y, 1.0, &mut out.yy);
    out
}

/// Adjoint of [`vec_grad`].
pub fn vec_grad_adj(m: &MatField2) -> VectorField2 {
    let s = m.shape;
    let mut out = VectorField2::zeros(s);
    stencil::dx_adj_add(s, &m.xx, 1.0, &mut out.x);
    stencil::dy_adj_add(s, &m.xy, 1.0, &mut out.x);
    stencil::dx_adj_add(s, &m.yx, 1.0, &mut out.y);
    stencil::dy_adj_add(s, &m.yy, 1.0, &mut out.y);
    out
}
