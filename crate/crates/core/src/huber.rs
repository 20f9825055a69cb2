//! Huber smoothing of the Euclidean norm and its first two derivatives.
//!
//! For `γ > 0` the smoothed norm is `|g| − 1/(2γ)` when `|g| ≥ 1/γ` and
//! `(γ/2)|g|²` otherwise. The `*_weighted` variants take a diagonal metric so
//! that tensor fields stored with a doubled off-diagonal use the full
//! Frobenius norm; gradients are then Riesz representers in that metric.

use crate::error::ParamError;

/// Huber parameter `γ`; the quadratic/linear switch happens at `|g| = 1/γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HuberParam(f64);

impl HuberParam {
    /// `γ = ∞` is accepted and gives the plain norm.
    pub fn new(gamma: f64) -> Result<Self, ParamError> {
        if gamma > 0.0 && !gamma.is_nan() {
            Ok(Self(gamma))
        } else {
            Err(ParamError::Invalid(format!("Huber γ must be positive, got {gamma}")))
        }
    }

    #[inline]
    pub fn gamma(self) -> f64 {
        self.0
    }

    #[inline]
    pub fn threshold(self) -> f64 {
        1.0 / self.0
    }
}

impl Default for HuberParam {
    fn default() -> Self {
        Self(100.0)
    }
}

#[inline]
pub(crate) fn weighted_norm(g: &[f64], weights: &[f64]) -> f64 {
    g.iter().zip(weights).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn value_from_norm(norm: f64, gamma: HuberParam) -> f64 {
    let g = gamma.gamma();
    if norm >= 1.0 / g {
        norm - 0.5 / g
    } else {
        0.5 * g * norm * norm
    }
}

/// Scalar factor `s` with `h_γ(g) = s·g`.
#[inline]
pub(crate) fn grad_factor(norm: f64, gamma: HuberParam) -> f64 {
    let g = gamma.gamma();
    if norm < 1.0 / g {
        g
    } else {
        1.0 / norm
    }
}

pub(crate) fn value_weighted(g: &[f64], weights: &[f64], gamma: HuberParam) -> f64 {
    value_from_norm(weighted_norm(g, weights), gamma)
}

pub(crate) fn grad_weighted(g: &[f64], weights: &[f64], gamma: HuberParam) -> Vec<f64> {
    let s = grad_factor(weighted_norm(g, weights), gamma);
    g.iter().map(|v| s * v).collect()
}

/// Row-major `m×m` derivative of [`grad_weighted`]:
/// `γI` on the quadratic branch, `(I − n nᵀW)/|g|` with `n = g/|g|` otherwise.
pub(crate) fn jacobian_weighted(g: &[f64], weights: &[f64], gamma: HuberParam) -> Vec<f64> {
    let m = g.len();
    let norm = weighted_norm(g, weights);
    let mut jac = vec![0.0; m * m];
    if norm < gamma.threshold() {
        for i in 0..m {
            jac[i * m + i] = gamma.gamma();
        }
    } else {
        let inv = 1.0 / norm;
        for r in 0..m {
            for c in 0..m {
                let id = if r == c { 1.0 } else { 0.0 };
                jac[r * m + c] = inv * (id - g[r] * inv * g[c] * inv * weights[c]);
            }
        }
    }
    jac
}

const UNIT: [f64; 16] = [1.0; 16];

/// Huber-smoothed Euclidean norm of `g`.
pub fn huber_value(g: &[f64], gamma: HuberParam) -> f64 {
    value_weighted(g, &UNIT[..g.len()], gamma)
}

/// Gradient `h_γ(g)`; its norm never exceeds one.
pub fn huber_grad(g: &[f64], gamma: HuberParam) -> Vec<f64> {
    grad_weighted(g, &UNIT[..g.len()], gamma)
}

/// Jacobian `h'_γ(g)`, row-major. Symmetric positive semidefinite.
pub fn huber_jacobian(g: &[f64], gamma: HuberParam) -> Vec<f64> {
    jacobian_weighted(g, &UNIT[..g.len()], gamma)
}
