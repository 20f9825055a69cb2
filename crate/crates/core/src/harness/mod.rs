//! Experiment orchestration: noise synthesis, individual and batch learning
//! over a corpus, comparison tables, and the files they leave behind.
//!
//! Output layout under `config.output`:
//!
//! ```text
//! clean/<id>.f64 + .pgm
//! noisy/s<σ²>/<id>.f64 + .pgm
//! denoised/<mode>/<cost>/s<σ²>/<id>__<label>.f64 + .pgm
//! noisy_s<σ²>.csv                      image, ssim, psnr
//! learn_<mode>_<cost>_s<σ²>.csv        one row per (image, regulariser)
//! trace_<mode>_<cost>_s<σ²>.csv        one row per outer iteration
//! ```
//!
//! `.f64` files are lossless (see [`write_raw`]); `.pgm` files are quantised
//! previews. Comparison runs add the files described in [`compare`].

pub mod compare;
pub mod config;
pub mod io;

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::adjoint::CostKind;
use crate::denoise::RegulariserKind;
use crate::error::{HarnessError, LearnError};
use crate::grid::ImageGrid;
use crate::learn::{batch_learn, warm_init, BfgsConfig, LearnRecord, StopReason, TraceEntry};
use crate::pgm::write_pgm;
use crate::quality::{add_gaussian_noise, format_psnr, psnr, ssim};

pub use compare::{run_compare, Comparison, ComparisonRow, CompareReport, Criterion, PairTest, Summary};
pub use config::{parse_cost, ExperimentConfig, InputSpec, Mode, RegEntry};
pub use io::{load_input, prepare_corpus, read_image, read_raw, resize_and_crop, resize_bilinear, write_raw};

pub const LEARN_COLUMNS: [&str; 10] = [
    "image",
    "regulariser",
    "cost",
    "alpha",
    "beta",
    "value",
    "ssim",
    "psnr",
    "outer_iters",
    "wall_time_s",
];

/// One learned parameter set applied to one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnRow {
    pub image: String,
    pub regulariser: String,
    pub kind: RegulariserKind,
    pub cost: CostKind,
    pub alpha: f64,
    /// Zero for TV.
    pub beta: f64,
    pub value: f64,
    pub ssim: f64,
    pub psnr: f64,
    pub outer_iters: usize,
    pub stop_reason: StopReason,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyRow {
    pub image: String,
    pub ssim: f64,
    pub psnr: f64,
}

#[derive(Debug, Clone)]
pub struct TraceRow {
    /// Image id, or `*` for a batch run.
    pub image: String,
    pub regulariser: String,
    pub entry: TraceEntry,
}

/// Results for one (noise level, cost) pair.
#[derive(Debug, Clone)]
pub struct LearnGroup {
    pub noise: f64,
    pub cost: CostKind,
    pub mode: Mode,
    /// Sorted by image id, then in configuration order of regularisers.
    pub rows: Vec<LearnRow>,
    pub noisy: Vec<NoisyRow>,
    pub traces: Vec<TraceRow>,
    pub learn_csv: PathBuf,
}

#[derive(Debug, Clone)]
pub struct LearnOutput {
    pub images: Vec<String>,
    pub groups: Vec<LearnGroup>,
}

impl LearnOutput {
    pub fn group(&self, noise: f64, cost: &str) -> Option<&LearnGroup> {
        self.groups.iter().find(|g| g.noise == noise && g.cost.name() == cost)
    }
}

/// Noise-level tag used in file names: `s2`, `s20`, `s2.5`.
pub fn noise_tag(noise: f64) -> String {
    format!("s{noise}")
}

pub fn clean_path(out: &Path, id: &str) -> PathBuf {
    out.join("clean").join(format!("{id}.f64"))
}

pub fn noisy_path(out: &Path, noise: f64, id: &str) -> PathBuf {
    out.join("noisy").join(noise_tag(noise)).join(format!("{id}.f64"))
}

pub fn denoised_path(out: &Path, mode: Mode, cost: &CostKind, noise: f64, id: &str, label: &str) -> PathBuf {
    out.join("denoised")
        .join(mode.name())
        .join(cost.name())
        .join(noise_tag(noise))
        .join(format!("{id}__{label}.f64"))
}

fn group_file(out: &Path, prefix: &str, mode: Mode, cost: &CostKind, noise: f64) -> PathBuf {
    out.join(format!("{prefix}_{}_{}_{}.csv", mode.name(), cost.name(), noise_tag(noise)))
}

/// Seed for the noise of image `id` at variance `noise`; independent of the
/// image's position in the corpus.
pub fn noise_seed(seed: u64, id: &str, noise: f64) -> u64 {
    // FNV-1a, then a splitmix64 finaliser
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = h ^ seed.rotate_left(17) ^ noise.to_bits().rotate_left(41);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn save_image(img: &ImageGrid, raw: &Path) -> Result<(), HarnessError> {
    if let Some(dir) = raw.parent() {
        fs::create_dir_all(dir)?;
    }
    write_raw(img, raw)?;
    write_pgm(img, raw.with_extension("pgm"))?;
    Ok(())
}

fn csv_err(e: csv::Error) -> HarnessError {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => HarnessError::Io(e),
        other => HarnessError::Io(std::io::Error::other(format!("{other:?}"))),
    }
}

/// A learned record together with the time spent on it, warm start included.
struct KindResult {
    kind: RegulariserKind,
    record: LearnRecord,
    wall_time_s: f64,
}

/// Learns every distinct kind in `entries` on `pairs`; the TV run doubles as
/// the warm start for the two-parameter kinds.
fn learn_kinds(
    pairs: &[(ImageGrid, ImageGrid)],
    entries: &[RegEntry],
    cost: CostKind,
    cfg: &BfgsConfig,
) -> Result<Vec<KindResult>, LearnError> {
    let (ws, tv) = warm_init(pairs, cost, cfg)?;
    let tv_time = tv.wall_time_s;
    let mut out = vec![KindResult {
        kind: RegulariserKind::Tv,
        record: tv,
        wall_time_s: tv_time,
    }];
    for e in entries {
        if out.iter().any(|r| r.kind == e.kind) {
            continue;
        }
        let init = ws.init.map(|v| v.clamp(cfg.theta, cfg.theta_max));
        let record = batch_learn(pairs, e.kind, cost, cfg, &init, Some(&ws.b1))?;
        let wall_time_s = tv_time + record.wall_time_s;
        out.push(KindResult {
            kind: e.kind,
            record,
            wall_time_s,
        });
    }
    Ok(out)
}

/// Rows, traces and denoised images of one learning unit (an image, or the
/// whole batch).
struct Unit {
    rows: Vec<LearnRow>,
    traces: Vec<TraceRow>,
    denoised: Vec<(PathBuf, ImageGrid)>,
}

fn build_unit(
    ids: &[&str],
    trace_id: &str,
    results: &[KindResult],
    entries: &[RegEntry],
    cost: CostKind,
    ctx: (&Path, Mode, f64, bool),
) -> Unit {
    let (out, mode, noise, timings) = ctx;
    let mut unit = Unit {
        rows: Vec::new(),
        traces: Vec::new(),
        denoised: Vec::new(),
    };
    for e in entries {
        let r = results.iter().find(|r| r.kind == e.kind).expect("every kind was learned");
        let rec = &r.record;
        for (k, id) in ids.iter().enumerate() {
            let m = rec.metrics[k];
            unit.rows.push(LearnRow {
                image: id.to_string(),
                regulariser: e.label.clone(),
                kind: e.kind,
                cost,
                alpha: rec.alpha(),
                beta: if e.kind == RegulariserKind::Tv { 0.0 } else { rec.beta() },
                value: m.cost,
                ssim: m.ssim,
                psnr: m.psnr,
                outer_iters: rec.outer_iterations,
                stop_reason: rec.stop_reason,
                wall_time_s: if timings { r.wall_time_s } else { 0.0 },
            });
            unit.denoised.push((denoised_path(out, mode, &cost, noise, id, &e.label), rec.denoised[k].clone()));
        }
        unit.traces.extend(rec.trace.iter().map(|t| TraceRow {
            image: trace_id.to_string(),
            regulariser: e.label.clone(),
            entry: t.clone(),
        }));
    }
    unit
}

fn write_learn_csv(path: &Path, rows: &[LearnRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(LEARN_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record([
            r.image.clone(),
            r.regulariser.clone(),
            r.cost.name().to_string(),
            r.alpha.to_string(),
            r.beta.to_string(),
            r.value.to_string(),
            r.ssim.to_string(),
            format_psnr(r.psnr),
            r.outer_iters.to_string(),
            r.wall_time_s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_trace_csv(path: &Path, rows: &[TraceRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record([
        "image",
        "regulariser",
        "iteration",
        "alpha",
        "beta",
        "cost",
        "grad_norm",
        "step_length",
        "inner_iterations",
        "update_skipped",
    ])
    .map_err(csv_err)?;
    for r in rows {
        let t = &r.entry;
        w.write_record([
            r.image.clone(),
            r.regulariser.clone(),
            t.iteration.to_string(),
            t.params[0].to_string(),
            t.params.get(1).copied().unwrap_or(0.0).to_string(),
            t.cost.to_string(),
            t.grad_norm.to_string(),
            t.step_length.to_string(),
            t.inner_iterations.to_string(),
            t.update_skipped.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_noisy_csv(path: &Path, rows: &[NoisyRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["image", "ssim", "psnr"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.image.clone(), r.ssim.to_string(), format_psnr(r.psnr)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn with_pool<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, HarnessError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

/// Runs the configured learning experiment and writes its artifacts.
pub fn run_learn(config: &ExperimentConfig) -> Result<LearnOutput, HarnessError> {
    config.validate()?;
    let out = config.output.as_path();
    fs::create_dir_all(out)?;
    let images = load_input(&config.input, config.seed)?;
    log::info!("{} image(s) from {}", images.len(), config.input);
    for (id, img) in &images {
        save_image(img, &clean_path(out, id))?;
    }
    let ids: Vec<&str> = images.iter().map(|(id, _)| id.as_str()).collect();

    let mut groups = Vec::new();
    for &noise in &config.noise_levels {
        let mut noisy_rows = Vec::with_capacity(images.len());
        let mut pairs = Vec::with_capacity(images.len());
        for (id, clean) in &images {
            let f = add_gaussian_noise(clean, noise, noise_seed(config.seed, id, noise)).map_err(LearnError::from)?;
            save_image(&f, &noisy_path(out, noise, id))?;
            noisy_rows.push(NoisyRow {
                image: id.clone(),
                ssim: ssim(&f, clean).map_err(LearnError::from)?,
                psnr: psnr(&f, clean).map_err(LearnError::from)?,
            });
            pairs.push((f, clean.clone()));
        }
        write_noisy_csv(&out.join(format!("noisy_{}.csv", noise_tag(noise))), &noisy_rows)?;

        for &cost in &config.costs {
            log::info!("learning at noise {noise}, cost {cost}, {} mode", config.mode.name());
            let ctx = (out, config.mode, noise, config.timings);
            let units: Vec<Unit> = match config.mode {
                Mode::Individual => with_pool(config.workers, || {
                    pairs
                        .par_iter()
                        .zip(ids.par_iter())
                        .map(|(pair, id)| {
                            let res = learn_kinds(std::slice::from_ref(pair), &config.regularisers, cost, &config.learner)
                                .inspect_err(|e| log::error!("{id}: {e}"))?;
                            Ok(build_unit(&[id], id, &res, &config.regularisers, cost, ctx))
                        })
                        .collect::<Result<Vec<_>, LearnError>>()
                })??,
                Mode::Batch => {
                    let res = learn_kinds(&pairs, &config.regularisers, cost, &config.learner)?;
                    vec![build_unit(&ids, "*", &res, &config.regularisers, cost, ctx)]
                }
            };

            let mut rows = Vec::new();
            let mut traces = Vec::new();
            for u in units {
                for (path, img) in &u.denoised {
                    save_image(img, path)?;
                }
                rows.extend(u.rows);
                traces.extend(u.traces);
            }
            let order: HashMap<&str, usize> =
                config.regularisers.iter().enumerate().map(|(k, e)| (e.label.as_str(), k)).collect();
            rows.sort_by(|a, b| a.image.cmp(&b.image).then(order[a.regulariser.as_str()].cmp(&order[b.regulariser.as_str()])));
            let learn_csv = group_file(out, "learn", config.mode, &cost, noise);
            write_learn_csv(&learn_csv, &rows)?;
            write_trace_csv(&group_file(out, "trace", config.mode, &cost, noise), &traces)?;
            groups.push(LearnGroup {
                noise,
                cost,
                mode: config.mode,
                rows,
                noisy: noisy_rows.clone(),
                traces,
                learn_csv,
            });
        }
    }
    Ok(LearnOutput {
        images: images.into_iter().map(|(id, _)| id).collect(),
        groups,
    })
}
