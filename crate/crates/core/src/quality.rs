//! Image-quality metrics, seeded noise and the paired t-test.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{GridError, ParamError};
use crate::grid::ImageGrid;

/// Token written for the PSNR of identical images.
pub const PSNR_INF_TOKEN: &str = "inf";

/// Peak signal-to-noise ratio in dB with peak 1. Identical images give `+∞`.
pub fn psnr(u: &ImageGrid, reference: &ImageGrid) -> Result<f64, GridError> {
    u.check_same_shape(reference)?;
    let n = u.as_slice().len() as f64;
    let mse = u
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// Formats a PSNR value, using [`PSNR_INF_TOKEN`] for identical images.
pub fn format_psnr(v: f64) -> String {
    if v.is_infinite() {
        PSNR_INF_TOKEN.to_string()
    } else {
        format!("{v}")
    }
}

fn gaussian_kernel() -> [f64; 11] {
    let mut k = [0.0; 11];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - 5.0;
        *v = (-x * x / (2.0 * 1.5 * 1.5)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filtering with replicate padding.
fn blur(data: &[f64], w: usize, h: usize, k: &[f64; 11]) -> Vec<f64> {
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;
    let mut tmp = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            tmp[j * w + i] = (0..11).map(|t| k[t] * data[j * w + clamp(i as isize + t as isize - 5, w)]).sum();
        }
    }
    let mut out = vec![0.0; w * h];
    for j in 0..h {
        for i in 0..w {
            out[j * w + i] = (0..11).map(|t| k[t] * tmp[clamp(j as isize + t as isize - 5, h) * w + i]).sum();
        }
    }
    out
}

/// Mean structural similarity: 11×11 Gaussian window (σ = 1.5),
/// `K₁ = 0.01`, `K₂ = 0.03`, dynamic range 1.
pub fn ssim(u: &ImageGrid, reference: &ImageGrid) -> Result<f64, GridError> {
    u.check_same_shape(reference)?;
    let (w, h) = (u.width(), u.height());
    let k = gaussian_kernel();
    let (x, y) = (u.as_slice(), reference.as_slice());
    let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mx = blur(x, w, h, &k);
    let my = blur(y, w, h, &k);
    let sxx = blur(&prod(x, x), w, h, &k);
    let syy = blur(&prod(y, y), w, h, &k);
    let sxy = blur(&prod(x, y), w, h, &k);
    let c1 = (0.01f64).powi(2);
    let c2 = (0.03f64).powi(2);
    let total: f64 = (0..w * h)
        .map(|p| {
            let vx = sxx[p] - mx[p] * mx[p];
            let vy = syy[p] - my[p] * my[p];
            let cxy = sxy[p] - mx[p] * my[p];
            ((2.0 * mx[p] * my[p] + c1) * (2.0 * cxy + c2))
                / ((mx[p] * mx[p] + my[p] * my[p] + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / (w * h) as f64)
}

/// Adds i.i.d. Gaussian noise of variance `variance` given on the 0–255
/// scale, i.e. standard deviation `√variance / 255` in normalised units.
/// No clipping.
pub fn add_gaussian_noise(img: &ImageGrid, variance: f64, seed: u64) -> Result<ImageGrid, ParamError> {
    if !(variance >= 0.0 && variance.is_finite()) {
        return Err(ParamError::Invalid(format!("noise variance must be non-negative, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, variance.sqrt() / 255.0).map_err(|e| ParamError::Invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img.as_slice().iter().map(|v| v + normal.sample(&mut rng)).collect();
    Ok(ImageGrid::from_raw(img.shape(), data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    AGreater,
    BGreater,
    Equal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    /// `±∞` when the differences are constant and non-zero.
    pub t: f64,
    pub df: usize,
    pub critical: f64,
    pub significant: bool,
    pub direction: Direction,
    /// Differences have zero variance.
    pub degenerate: bool,
}

/// One-tailed Student-t critical value at level `1 − p` for `df` degrees of freedom.
pub fn t_critical(df: usize, p: f64) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("df ≥ 1 is a valid Student-t")
        .inverse_cdf(1.0 - p)
}

/// Paired one-tailed t-test at the 95% level on `d = a − b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTestResult, ParamError> {
    if a.len() != b.len() {
        return Err(ParamError::Invalid(format!("paired samples differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(ParamError::Invalid("paired t-test needs at least two pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    let critical = t_critical(df, 0.05);
    // spread at rounding level counts as zero variance
    let scale = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let degenerate = var.sqrt() <= 16.0 * f64::EPSILON * scale;
    let t = if degenerate {
        if mean == 0.0 {
            0.0
        } else {
            mean.signum() * f64::INFINITY
        }
    } else {
        mean / (var.sqrt() / (n as f64).sqrt())
    };
    let direction = if t > 0.0 {
        Direction::AGreater
    } else if t < 0.0 {
        Direction::BGreater
    } else {
        Direction::Equal
    };
    Ok(TTestResult {
        t,
        df,
        critical,
        significant: t.abs() > critical,
        direction,
        degenerate,
    })
}

/// Quality of one denoised image against its ground truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub cost: f64,
}
