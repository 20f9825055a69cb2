//! Bilevel learning of regularisation weights for TV, TGV² and ICTV
//! denoising.
//!
//! The lower level ([`denoise`]) solves a Huber-smoothed, elliptically
//! regularised denoising problem with a semismooth Newton method. The upper
//! level ([`learn`]) minimises a cost of the denoised image with a
//! box-safeguarded BFGS method whose gradients come from an adjoint solve
//! ([`adjoint`]).

pub mod adjoint;
pub mod denoise;
pub mod error;
pub mod grid;
pub mod harness;
pub mod huber;
pub mod learn;
pub mod pgm;
pub mod quality;
pub(crate) mod sparse;
pub mod synthetic;

pub use adjoint::{cost_grad_u, cost_value, reduced_gradient, solve_adjoint, AdjointState, CostKind, ReducedGradient};
pub use denoise::{
    energy, project_dual, solve_denoise, Denoiser, DualState, LinearSolver, Params, PrimalState, RegulariserKind,
    Solution, SolveStats, SsnConfig,
};
pub use error::{GridError, HarnessError, LearnError, ParamError, PgmError, SolveError};
pub use grid::{ImageGrid, MatField2, Shape, SymTensorField2, VectorField2};
pub use huber::HuberParam;
pub use learn::{
    batch_learn, bfgs_learn, learn, warm_init, warm_start_from_tv, BfgsConfig, LearnRecord, StopReason, TraceEntry, WarmFactor,
    WarmStart,
};
pub use quality::{add_gaussian_noise, paired_t_test, psnr, ssim, MetricReport, TTestResult};
