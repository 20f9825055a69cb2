//! `bilevel`: denoise with fixed weights, learn weights from clean/noisy
//! pairs, and compare regularisers over a corpus.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bilevel_core::harness::{self, read_image, write_raw, ExperimentConfig, InputSpec, Mode, RegEntry};
use bilevel_core::pgm::write_pgm;
use bilevel_core::quality::format_psnr;
use bilevel_core::{
    add_gaussian_noise, cost_value, psnr, solve_denoise, ssim, CostKind, HarnessError, HuberParam, ImageGrid, Params,
    RegulariserKind, SsnConfig,
};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bilevel", version, about = "Bilevel learning of TV, TGV2 and ICTV denoising weights")]
struct Cli {
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Denoise one image with fixed weights.
    Denoise(DenoiseArgs),
    /// Learn weights per image.
    Learn(RunArgs),
    /// Learn one set of weights for the whole corpus.
    BatchLearn(RunArgs),
    /// Resize a directory of PGM images to square training images.
    PrepareCorpus(PrepareArgs),
    /// Learn every regulariser and print the comparison tables.
    Compare(CompareArgs),
    /// Score an image against a reference.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct DenoiseArgs {
    /// Noisy image (.pgm or .f64).
    #[arg(long)]
    input: PathBuf,
    /// Output image; `.f64` keeps full precision, anything else is PGM.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "tv")]
    regulariser: RegulariserKind,
    #[arg(long)]
    alpha: f64,
    /// Second-order weight (TGV2 and ICTV).
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Add noise of this variance (0-255 scale) before denoising.
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Clean image to score the result against.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value_t = 100.0)]
    gamma: f64,
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` experiment file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Regulariser kind or `label:kind`; repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    regulariser: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    cost: Vec<String>,
    /// Noise variance on the 0-255 scale; repeatable or comma separated.
    #[arg(long, value_delimiter = ',')]
    noise_var: Vec<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// bundled:piecewise, bundled:geometric, synthetic:COUNTxSIZE, a directory or a .pgm file.
    #[arg(long)]
    input: Option<String>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads for per-image learning.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// individual or batch; defaults to the config file's mode.
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Args)]
struct PrepareArgs {
    /// Directory of source PGM images.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Edge length of the square output.
    #[arg(long, default_value_t = 128)]
    size: usize,
}

#[derive(Args)]
struct MetricsArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value = "l22")]
    cost: String,
    #[arg(long, default_value_t = 100.0)]
    gamma: f64,
}

fn config_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(e.to_string())
}

fn build_config(args: &RunArgs, mode: Option<Mode>) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if !args.regulariser.is_empty() {
        cfg.regularisers = args.regulariser.iter().map(|s| s.parse::<RegEntry>()).collect::<Result<_, _>>()?;
    }
    if !args.cost.is_empty() {
        let g = cfg
            .costs
            .iter()
            .find_map(|c| match c {
                CostKind::HuberTvGrad(g) => Some(*g),
                CostKind::L22 => None,
            })
            .unwrap_or(cfg.learner.gamma);
        cfg.costs = args.cost.iter().map(|s| harness::parse_cost(s, g)).collect::<Result<_, _>>()?;
    }
    if !args.noise_var.is_empty() {
        cfg.noise_levels = args.noise_var.clone();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(i) = &args.input {
        cfg.input = i.parse::<InputSpec>()?;
    }
    if let Some(o) = &args.output {
        cfg.output = o.clone();
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save(img: &ImageGrid, path: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("f64") => write_raw(img, path),
        _ => Ok(write_pgm(img, path)?),
    }
}

fn print_scores(u: &ImageGrid, reference: &ImageGrid, cost: CostKind) -> Result<(), HarnessError> {
    let grid = |e: bilevel_core::GridError| HarnessError::Solve(e.into());
    println!("psnr\t{}", format_psnr(psnr(u, reference).map_err(grid)?));
    println!("ssim\t{}", ssim(u, reference).map_err(grid)?);
    println!("cost\t{}", cost_value(u, reference, cost).map_err(grid)?);
    Ok(())
}

fn denoise(a: &DenoiseArgs) -> Result<(), HarnessError> {
    let mut f = read_image(&a.input)?;
    if let Some(v) = a.noise_var {
        f = add_gaussian_noise(&f, v, a.seed).map_err(config_err)?;
    }
    let gamma = HuberParam::new(a.gamma).map_err(config_err)?;
    let params = Params::new(a.alpha, a.beta).with_gamma(gamma);
    let sol = solve_denoise(&f, a.regulariser, &params, &SsnConfig::default())?;
    if !sol.stats.converged {
        log::warn!("inner solver stopped after {} iterations without converging", sol.stats.iterations);
    }
    let u = sol.primal.image();
    save(u, &a.output)?;
    if let Some(r) = &a.reference {
        print_scores(u, &read_image(r)?, CostKind::L22)?;
    }
    Ok(())
}

fn learn(args: &RunArgs, mode: Mode) -> Result<(), HarnessError> {
    let cfg = build_config(args, Some(mode))?;
    let out = harness::run_learn(&cfg)?;
    for g in &out.groups {
        println!("# noise {} cost {} -> {}", g.noise, g.cost, g.learn_csv.display());
        for r in &g.rows {
            println!(
                "{}\t{}\talpha={:.6e}\tbeta={:.6e}\tssim={:.4}\tpsnr={}\titers={}\t{}",
                r.image,
                r.regulariser,
                r.alpha,
                r.beta,
                r.ssim,
                format_psnr(r.psnr),
                r.outer_iters,
                r.stop_reason.name()
            );
        }
    }
    Ok(())
}

fn compare(a: &CompareArgs) -> Result<(), HarnessError> {
    let mode = a.mode.as_deref().map(str::parse::<Mode>).transpose()?;
    let cfg = build_config(&a.run, mode)?;
    let report = harness::run_compare(&cfg)?;
    for c in &report.comparisons {
        println!("{}", c.render());
    }
    Ok(())
}

fn metrics(a: &MetricsArgs) -> Result<(), HarnessError> {
    let gamma = HuberParam::new(a.gamma).map_err(config_err)?;
    let cost = harness::parse_cost(&a.cost, gamma)?;
    print_scores(&read_image(&a.input)?, &read_image(&a.reference)?, cost)
}

fn run(cli: &Cli) -> Result<(), HarnessError> {
    match &cli.command {
        Command::Denoise(a) => denoise(a),
        Command::Learn(a) => learn(a, Mode::Individual),
        Command::BatchLearn(a) => learn(a, Mode::Batch),
        Command::PrepareCorpus(a) => harness::prepare_corpus(&a.input, &a.output, a.size).map(|files| {
            println!("{} image(s) written to {}", files.len(), a.output.display());
        }),
        Command::Compare(a) => compare(a),
        Command::Metrics(a) => metrics(a),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
