//! Experiment configuration and its `key = value` file grammar.
//!
//! One assignment per line; `#` starts a comment; blank lines are ignored;
//! list values are comma separated. Unknown keys are errors.
//!
//! ```text
//! regularisers = tv, tgv2, ictv   # kind, or label:kind for aliases
//! costs = l22, huber-tv
//! noise = 2, 20                   # variances on the 0-255 scale
//! mode = individual               # or batch
//! seed = 1
//! input = synthetic:10x64         # bundled:piecewise | bundled:geometric | dir:PATH | file:PATH
//! output = runs/mini
//! ```
//!
//! Learner keys: `armijo_c`, `rho`, `theta`, `theta_max`, `max_outer_iters`,
//! `boundary_fraction`, `gamma`, `mu`, `cost_gamma`, `warm_factor`
//! (`inverse-size` or a number). Inner solver keys: `ssn_tol`,
//! `ssn_max_iters`, `ssn_armijo_c`, `linear_solver` (`reduced` or `full`).
//! Harness keys: `workers` (thread count), `timings` (`true`/`false`; when
//! false the wall-time column is written as 0 so reruns are byte-identical).

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::adjoint::CostKind;
use crate::denoise::{LinearSolver, RegulariserKind};
use crate::error::HarnessError;
use crate::huber::HuberParam;
use crate::learn::{BfgsConfig, WarmFactor};

/// A regulariser under a display label; two labels may share a kind.
#[derive(Debug, Clone, PartialEq)]
pub struct RegEntry {
    pub label: String,
    pub kind: RegulariserKind,
}

impl RegEntry {
    pub fn new(kind: RegulariserKind) -> Self {
        Self {
            label: kind.name().to_string(),
            kind,
        }
    }
}

impl FromStr for RegEntry {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (label, kind) = match s.split_once(':') {
            Some((l, k)) => (l.trim(), k),
            None => (s, s),
        };
        let kind = kind.parse::<RegulariserKind>().map_err(|e| HarnessError::Config(e.to_string()))?;
        if label.is_empty() || label.contains(|c: char| c == ',' || c.is_whitespace() || c == '/') {
            return Err(HarnessError::Config(format!("invalid regulariser label '{label}'")));
        }
        Ok(Self {
            label: label.to_ascii_lowercase(),
            kind,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One parameter set per image.
    Individual,
    /// One parameter set for the whole corpus.
    Batch,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Individual => "individual",
            Mode::Batch => "batch",
        }
    }
}

impl FromStr for Mode {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "individual" => Ok(Mode::Individual),
            "batch" => Ok(Mode::Batch),
            other => Err(HarnessError::Config(format!("unknown mode '{other}'"))),
        }
    }
}

/// Where the clean images come from.
#[derive(Debug, Clone, PartialEq)]
pub enum InputSpec {
    /// 32×32 piecewise-constant image.
    Piecewise,
    /// 64×64 geometric image.
    Geometric,
    /// Procedural corpus of `count` images of `size × size`.
    Synthetic { count: usize, size: usize },
    /// Every `*.pgm` in a directory, ids from the file stems.
    Directory(PathBuf),
    File(PathBuf),
}

impl FromStr for InputSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || HarnessError::Config(format!("invalid input '{s}'"));
        match s.split_once(':') {
            Some(("bundled", "piecewise")) => Ok(InputSpec::Piecewise),
            Some(("bundled", "geometric")) => Ok(InputSpec::Geometric),
            Some(("synthetic", rest)) => {
                let (c, n) = rest.split_once('x').ok_or_else(bad)?;
                let count: usize = c.trim().parse().map_err(|_| bad())?;
                let size: usize = n.trim().parse().map_err(|_| bad())?;
                if count == 0 || size < 2 {
                    return Err(bad());
                }
                Ok(InputSpec::Synthetic { count, size })
            }
            Some(("dir", p)) => Ok(InputSpec::Directory(PathBuf::from(p))),
            Some(("file", p)) => Ok(InputSpec::File(PathBuf::from(p))),
            _ => {
                let p = Path::new(s);
                if p.is_dir() {
                    Ok(InputSpec::Directory(p.to_path_buf()))
                } else if s.ends_with(".pgm") {
                    Ok(InputSpec::File(p.to_path_buf()))
                } else {
                    Err(bad())
                }
            }
        }
    }
}

impl fmt::Display for InputSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InputSpec::Piecewise => write!(f, "bundled:piecewise"),
            InputSpec::Geometric => write!(f, "bundled:geometric"),
            InputSpec::Synthetic { count, size } => write!(f, "synthetic:{count}x{size}"),
            InputSpec::Directory(p) => write!(f, "dir:{}", p.display()),
            InputSpec::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub regularisers: Vec<RegEntry>,
    pub costs: Vec<CostKind>,
    /// Noise variances on the 0–255 scale.
    pub noise_levels: Vec<f64>,
    pub mode: Mode,
    pub seed: u64,
    pub input: InputSpec,
    pub output: PathBuf,
    pub learner: BfgsConfig,
    pub workers: Option<usize>,
    pub timings: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            regularisers: vec![RegEntry::new(RegulariserKind::Tv)],
            costs: vec![CostKind::L22],
            noise_levels: vec![10.0],
            mode: Mode::Individual,
            seed: 0,
            input: InputSpec::Piecewise,
            output: PathBuf::from("out"),
            learner: BfgsConfig::default(),
            workers: None,
            timings: true,
        }
    }
}

fn list<T>(v: &str, f: impl Fn(&str) -> Result<T, HarnessError>) -> Result<Vec<T>, HarnessError> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(f).collect()
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, HarnessError> {
    v.trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("invalid value '{v}' for {key}")))
}

/// Parses a cost name, giving Huber costs the parameter `gamma`.
pub fn parse_cost(s: &str, gamma: HuberParam) -> Result<CostKind, HarnessError> {
    match s.parse::<CostKind>().map_err(|e| HarnessError::Config(e.to_string()))? {
        CostKind::HuberTvGrad(_) => Ok(CostKind::HuberTvGrad(gamma)),
        c => Ok(c),
    }
}

impl ExperimentConfig {
    /// Parses the `key = value` grammar on top of the defaults.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = Self::default();
        let mut cost_names: Option<Vec<String>> = None;
        let mut cost_gamma: Option<f64> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            cfg.set(key, value, &mut cost_names, &mut cost_gamma)
                .map_err(|e| HarnessError::Config(format!("line {}: {}", n + 1, strip(e))))?;
        }
        cfg.resolve_costs(cost_names, cost_gamma)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn set(
        &mut self,
        key: &str,
        v: &str,
        cost_names: &mut Option<Vec<String>>,
        cost_gamma: &mut Option<f64>,
    ) -> Result<(), HarnessError> {
        let l = &mut self.learner;
        match key {
            "regularisers" | "regularizers" | "regulariser" => self.regularisers = list(v, |s| s.parse())?,
            "costs" | "cost" => *cost_names = Some(list(v, |s| Ok(s.to_string()))?),
            "noise" | "noise_levels" | "noise_var" => self.noise_levels = list(v, |s| num(key, s))?,
            "mode" => self.mode = v.parse()?,
            "seed" => self.seed = num(key, v)?,
            "input" => self.input = v.parse()?,
            "output" => self.output = PathBuf::from(v),
            "workers" => self.workers = Some(num(key, v)?),
            "timings" => self.timings = num(key, v)?,
            "armijo_c" => l.armijo_c = num(key, v)?,
            "rho" => l.rho = num(key, v)?,
            "theta" => l.theta = num(key, v)?,
            "theta_max" => l.theta_max = num(key, v)?,
            "max_outer_iters" => l.max_outer_iters = num(key, v)?,
            "boundary_fraction" => l.boundary_fraction = num(key, v)?,
            "gamma" => l.gamma = HuberParam::new(num(key, v)?).map_err(|e| HarnessError::Config(e.to_string()))?,
            "mu" => l.mu = num(key, v)?,
            "cost_gamma" => *cost_gamma = Some(num(key, v)?),
            "warm_factor" => {
                l.warm_factor = match v {
                    "inverse-size" | "1/ell" => WarmFactor::InverseSize,
                    _ => WarmFactor::Fixed(num(key, v)?),
                }
            }
            "ssn_tol" => l.ssn.tol = num(key, v)?,
            "ssn_max_iters" => l.ssn.max_iters = num(key, v)?,
            "ssn_armijo_c" => l.ssn.armijo_c = num(key, v)?,
            "linear_solver" => {
                l.ssn.linear_solver = match v {
                    "reduced" => LinearSolver::Reduced,
                    "full" => LinearSolver::Full,
                    _ => return Err(HarnessError::Config(format!("unknown linear solver '{v}'"))),
                }
            }
            _ => return Err(HarnessError::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    fn resolve_costs(&mut self, names: Option<Vec<String>>, gamma: Option<f64>) -> Result<(), HarnessError> {
        let g = match gamma {
            Some(g) => HuberParam::new(g).map_err(|e| HarnessError::Config(e.to_string()))?,
            None => self.learner.gamma,
        };
        if let Some(names) = names {
            self.costs = names.iter().map(|s| parse_cost(s, g)).collect::<Result<_, _>>()?;
        } else if gamma.is_some() {
            self.costs = self.costs.iter().map(|c| c.name()).map(|s| parse_cost(s, g)).collect::<Result<_, _>>()?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let err = |m: &str| Err(HarnessError::Config(m.to_string()));
        if self.regularisers.is_empty() {
            return err("no regularisers selected");
        }
        if self.costs.is_empty() {
            return err("no costs selected");
        }
        if self.noise_levels.is_empty() {
            return err("no noise levels selected");
        }
        if self.noise_levels.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return err("noise variances must be finite and non-negative");
        }
        for (i, a) in self.regularisers.iter().enumerate() {
            if self.regularisers[..i].iter().any(|b| b.label == a.label) {
                return Err(HarnessError::Config(format!("duplicate regulariser label '{}'", a.label)));
            }
        }
        for (i, a) in self.costs.iter().enumerate() {
            if self.costs[..i].iter().any(|b| b.name() == a.name()) {
                return Err(HarnessError::Config(format!("duplicate cost '{a}'")));
            }
        }
        if self.workers == Some(0) {
            return err("workers must be positive");
        }
        self.learner.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }
}

fn strip(e: HarnessError) -> String {
    match e {
        HarnessError::Config(m) => m,
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_full_example() {
        let text = "
            # mini protocol
            regularisers = tv, tgv2, ictv
            costs = l22, huber-tv
            noise = 2, 20
            mode = batch
            seed = 7
            input = synthetic:10x64
            output = /tmp/x   # trailing comment
            cost_gamma = 50
            warm_factor = inverse-size
            linear_solver = full
            timings = false
        ";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.regularisers.len(), 3);
        assert_eq!(c.regularisers[1].kind, RegulariserKind::Tgv2);
        assert_eq!(c.costs, vec![CostKind::L22, CostKind::HuberTvGrad(HuberParam::new(50.0).unwrap())]);
        assert_eq!(c.noise_levels, vec![2.0, 20.0]);
        assert_eq!(c.mode, Mode::Batch);
        assert_eq!(c.seed, 7);
        assert_eq!(c.input, InputSpec::Synthetic { count: 10, size: 64 });
        assert_eq!(c.output, PathBuf::from("/tmp/x"));
        assert_eq!(c.learner.warm_factor, WarmFactor::InverseSize);
        assert_eq!(c.learner.ssn.linear_solver, LinearSolver::Full);
        assert!(!c.timings);
    }

    #[test]
    fn aliases_get_their_own_label() {
        let c = ExperimentConfig::parse("regularisers = tv, tv-copy:tv").unwrap();
        assert_eq!(c.regularisers[1], RegEntry { label: "tv-copy".into(), kind: RegulariserKind::Tv });
    }

    #[test]
    fn rejects_bad_input() {
        for text in [
            "regularisers =",
            "regularisers = tv, tv",
            "costs = l1",
            "noise = -1",
            "bogus = 1",
            "seed = x",
            "just a line",
            "theta = 20",
            "input = synthetic:0x64",
        ] {
            let e = ExperimentConfig::parse(text).unwrap_err();
            assert!(matches!(e, HarnessError::Config(_)), "{text}");
            assert_eq!(e.exit_code(), 2);
        }
    }

    #[test]
    fn error_messages_carry_line_numbers() {
        let e = ExperimentConfig::parse("seed = 1\n\nmode = sideways").unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }
}
