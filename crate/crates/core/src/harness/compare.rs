//! Regulariser comparison: summary statistics, per-image best flags, paired
//! t-tests and the ordering string.
//!
//! Per (noise level, cost) a comparison run writes, next to the learning
//! artifacts:
//!
//! ```text
//! summary_<mode>_<cost>_s<σ²>.csv   criterion, statistic, <label>...
//! ttest_<mode>_<cost>_s<σ²>.csv     criterion, a, b, t, df, critical, significant, better, degenerate
//! order_<mode>_<cost>_s<σ²>.csv     criterion, ordering
//! matrix_<mode>_<cost>_s<σ²>.csv    image, criterion, <label>... (0/1 flags), tie
//! mosaic_<mode>_<cost>_s<σ²>.pgm    per image: clean | noisy | one tile per regulariser
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::adjoint::CostKind;
use crate::error::HarnessError;
use crate::grid::{ImageGrid, Shape};
use crate::pgm::write_pgm;
use crate::quality::{format_psnr, paired_t_test, Direction, MetricReport, TTestResult};

use super::config::{ExperimentConfig, Mode};
use super::{csv_err, denoised_path, group_file, noisy_path, read_raw, run_learn, LearnOutput, LearnRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Ssim,
    Psnr,
    Cost,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::Ssim, Criterion::Psnr, Criterion::Cost];

    pub fn name(self) -> &'static str {
        match self {
            Criterion::Ssim => "ssim",
            Criterion::Psnr => "psnr",
            Criterion::Cost => "cost",
        }
    }

    pub fn value(self, m: &MetricReport) -> f64 {
        match self {
            Criterion::Ssim => m.ssim,
            Criterion::Psnr => m.psnr,
            Criterion::Cost => m.cost,
        }
    }

    /// Value oriented so that larger is better.
    pub fn score(self, m: &MetricReport) -> f64 {
        match self {
            Criterion::Cost => -m.cost,
            _ => self.value(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; zero for a single image.
    pub std: f64,
    pub median: f64,
    /// Number of images on which this regulariser is best.
    pub best: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub image: String,
    /// One report per regulariser, in label order.
    pub metrics: Vec<MetricReport>,
    /// Index of the best regulariser per criterion (in [`Criterion::ALL`] order).
    pub best: [usize; 3],
    /// Whether the best value was shared, the lexicographically first label winning.
    pub tie: [bool; 3],
}

/// A paired test on scores oriented so that [`Direction::AGreater`] means
/// `a` is better (for cost: lower).
#[derive(Debug, Clone, PartialEq)]
pub struct PairTest {
    pub criterion: Criterion,
    pub a: String,
    pub b: String,
    pub result: TTestResult,
}

impl PairTest {
    pub fn better(&self) -> Option<&str> {
        match self.result.direction {
            Direction::AGreater => Some(&self.a),
            Direction::BGreater => Some(&self.b),
            Direction::Equal => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Comparison {
    pub noise: f64,
    pub cost: CostKind,
    pub mode: Mode,
    pub labels: Vec<String>,
    pub rows: Vec<ComparisonRow>,
    /// `summaries[label][criterion]`.
    pub summaries: Vec<[Summary; 3]>,
    pub tests: Vec<PairTest>,
    /// Ordering string per criterion, e.g. `ictv, tgv2 > tv`.
    pub orderings: [String; 3],
    /// Fewer than two regularisers or images: no t-tests.
    pub degenerate: bool,
}

fn summary(values: &mut [f64], best: usize) -> Summary {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    let median = if values.len() % 2 == 1 { values[m] } else { 0.5 * (values[m - 1] + values[m]) };
    Summary { mean, std, median, best }
}

/// Groups labels into an ordering string from pairwise significant results.
fn ordering(labels: &[String], tests: &[PairTest]) -> String {
    let sig = |a: &str, b: &str| -> Option<bool> {
        tests.iter().find_map(|t| {
            let hit = (t.a == a && t.b == b) || (t.a == b && t.b == a);
            (hit && t.result.significant).then(|| t.better() == Some(a))
        })
    };
    let mut ranked: Vec<(&str, i64)> = labels
        .iter()
        .map(|l| {
            let s = labels.iter().filter(|o| *o != l).map(|o| match sig(l, o) {
                Some(true) => 1,
                Some(false) => -1,
                None => 0,
            });
            (l.as_str(), s.sum())
        })
        .collect();
    ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(y.0)));
    let mut groups: Vec<Vec<&str>> = Vec::new();
    for (k, &(l, _)) in ranked.iter().enumerate() {
        match groups.last_mut() {
            Some(g) if sig(ranked[k - 1].0, l).is_none() => g.push(l),
            _ => groups.push(vec![l]),
        }
    }
    groups
        .into_iter()
        .map(|mut g| {
            g.sort_unstable();
            g.join(", ")
        })
        .collect::<Vec<_>>()
        .join(" > ")
}

impl Comparison {
    /// Builds the comparison from learning rows (any order) for `labels`.
    pub fn from_rows(
        noise: f64,
        cost: CostKind,
        mode: Mode,
        labels: &[String],
        rows: &[LearnRow],
    ) -> Result<Self, HarnessError> {
        if labels.is_empty() {
            return Err(HarnessError::Config("no regularisers to compare".into()));
        }
        let mut images: Vec<&str> = rows.iter().map(|r| r.image.as_str()).collect();
        images.sort_unstable();
        images.dedup();
        let mut by_name: Vec<usize> = (0..labels.len()).collect();
        by_name.sort_by(|&i, &j| labels[i].cmp(&labels[j]));

        let mut out_rows = Vec::with_capacity(images.len());
        for id in &images {
            let metrics = labels
                .iter()
                .map(|l| {
                    rows.iter()
                        .find(|r| r.image == *id && &r.regulariser == l)
                        .map(|r| MetricReport { psnr: r.psnr, ssim: r.ssim, cost: r.value })
                        .ok_or_else(|| HarnessError::Config(format!("no result for {id} with {l}")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut best = [0; 3];
            let mut tie = [false; 3];
            for (c, crit) in Criterion::ALL.iter().enumerate() {
                let top = metrics.iter().map(|m| crit.score(m)).fold(f64::NEG_INFINITY, f64::max);
                let winners: Vec<usize> = by_name.iter().copied().filter(|&k| crit.score(&metrics[k]) == top).collect();
                best[c] = winners.first().copied().unwrap_or(by_name[0]);
                tie[c] = winners.len() > 1;
            }
            out_rows.push(ComparisonRow {
                image: id.to_string(),
                metrics,
                best,
                tie,
            });
        }

        let summaries = (0..labels.len())
            .map(|k| {
                Criterion::ALL.map(|crit| {
                    let c = Criterion::ALL.iter().position(|x| *x == crit).expect("listed");
                    let mut v: Vec<f64> = out_rows.iter().map(|r| crit.value(&r.metrics[k])).collect();
                    summary(&mut v, out_rows.iter().filter(|r| r.best[c] == k).count())
                })
            })
            .collect();

        let degenerate = labels.len() < 2 || out_rows.len() < 2;
        let mut tests = Vec::new();
        if !degenerate {
            for crit in Criterion::ALL {
                for i in 0..labels.len() {
                    for j in i + 1..labels.len() {
                        let a: Vec<f64> = out_rows.iter().map(|r| crit.score(&r.metrics[i])).collect();
                        let b: Vec<f64> = out_rows.iter().map(|r| crit.score(&r.metrics[j])).collect();
                        let result = paired_t_test(&a, &b).map_err(|e| HarnessError::Config(e.to_string()))?;
                        tests.push(PairTest {
                            criterion: crit,
                            a: labels[i].clone(),
                            b: labels[j].clone(),
                            result,
                        });
                    }
                }
            }
        }
        let orderings = Criterion::ALL.map(|crit| {
            let t: Vec<PairTest> = tests.iter().filter(|t| t.criterion == crit).cloned().collect();
            ordering(labels, &t)
        });
        Ok(Self {
            noise,
            cost,
            mode,
            labels: labels.to_vec(),
            rows: out_rows,
            summaries,
            tests,
            orderings,
            degenerate,
        })
    }

    pub fn ordering(&self, crit: Criterion) -> &str {
        &self.orderings[Criterion::ALL.iter().position(|c| *c == crit).expect("listed")]
    }

    /// Plain-text table in the layout of a mean/std/med/best report.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "noise {} | cost {} | {} mode | {} image(s)", self.noise, self.cost, self.mode.name(), self.rows.len());
        let _ = write!(s, "{:<6} {:<6}", "", "");
        for l in &self.labels {
            let _ = write!(s, " {l:>12}");
        }
        s.push('\n');
        for (c, crit) in Criterion::ALL.iter().enumerate() {
            for stat in ["mean", "std", "median", "best"] {
                let _ = write!(s, "{:<6} {:<6}", crit.name(), stat);
                for sm in &self.summaries {
                    let v = &sm[c];
                    let cell = match stat {
                        "mean" => fmt_num(*crit, v.mean),
                        "std" => fmt_num(*crit, v.std),
                        "median" => fmt_num(*crit, v.median),
                        _ => v.best.to_string(),
                    };
                    let _ = write!(s, " {cell:>12}");
                }
                s.push('\n');
            }
            let order = if self.degenerate { "(no t-tests)" } else { &self.orderings[c] };
            let _ = writeln!(s, "{:<6} 95% t-test: {order}", crit.name());
        }
        s
    }

    pub fn write_files(&self, out: &Path) -> Result<(), HarnessError> {
        let (mode, cost, noise) = (self.mode, &self.cost, self.noise);

        let mut w = csv::Writer::from_path(group_file(out, "summary", mode, cost, noise)).map_err(csv_err)?;
        let mut header = vec!["criterion".to_string(), "statistic".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header).map_err(csv_err)?;
        for (c, crit) in Criterion::ALL.iter().enumerate() {
            for stat in ["mean", "std", "median", "best"] {
                let mut rec = vec![crit.name().to_string(), stat.to_string()];
                rec.extend(self.summaries.iter().map(|sm| match stat {
                    "mean" => fmt_csv(*crit, sm[c].mean),
                    "std" => fmt_csv(*crit, sm[c].std),
                    "median" => fmt_csv(*crit, sm[c].median),
                    _ => sm[c].best.to_string(),
                }));
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(group_file(out, "ttest", mode, cost, noise)).map_err(csv_err)?;
        w.write_record(["criterion", "a", "b", "t", "df", "critical", "significant", "better", "degenerate"]).map_err(csv_err)?;
        for t in &self.tests {
            let r = &t.result;
            w.write_record([
                t.criterion.name().to_string(),
                t.a.clone(),
                t.b.clone(),
                r.t.to_string(),
                r.df.to_string(),
                r.critical.to_string(),
                r.significant.to_string(),
                t.better().unwrap_or("none").to_string(),
                r.degenerate.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(group_file(out, "order", mode, cost, noise)).map_err(csv_err)?;
        w.write_record(["criterion", "ordering"]).map_err(csv_err)?;
        for (c, crit) in Criterion::ALL.iter().enumerate() {
            w.write_record([crit.name(), &self.orderings[c]]).map_err(csv_err)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(group_file(out, "matrix", mode, cost, noise)).map_err(csv_err)?;
        let mut header = vec!["image".to_string(), "criterion".to_string()];
        header.extend(self.labels.iter().cloned());
        header.push("tie".into());
        w.write_record(&header).map_err(csv_err)?;
        for r in &self.rows {
            for (c, crit) in Criterion::ALL.iter().enumerate() {
                let mut rec = vec![r.image.clone(), crit.name().to_string()];
                rec.extend((0..self.labels.len()).map(|k| u8::from(r.best[c] == k).to_string()));
                rec.push(r.tie[c].to_string());
                w.write_record(&rec).map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// One mosaic row per image: clean, noisy, then each regulariser.
    pub fn write_mosaic(&self, out: &Path) -> Result<(), HarnessError> {
        let mut tiles: Vec<Vec<ImageGrid>> = Vec::with_capacity(self.rows.len());
        for r in &self.rows {
            let mut row = vec![read_raw(super::clean_path(out, &r.image))?, read_raw(noisy_path(out, self.noise, &r.image))?];
            for l in &self.labels {
                row.push(read_raw(denoised_path(out, self.mode, &self.cost, self.noise, &r.image, l))?);
            }
            tiles.push(row);
        }
        let Some(first) = tiles.first().and_then(|r| r.first()) else {
            return Ok(());
        };
        let (tw, th) = (first.width(), first.height());
        if tiles.iter().flatten().any(|t| (t.width(), t.height()) != (tw, th)) {
            log::warn!("images differ in size; skipping mosaic");
            return Ok(());
        }
        let gap = 2;
        let cols = self.labels.len() + 2;
        let shape = Shape::new(cols * (tw + gap) - gap, tiles.len() * (th + gap) - gap)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        let mosaic = ImageGrid::from_fn(shape, |i, j| {
            let (ci, ii) = (i / (tw + gap), i % (tw + gap));
            let (rj, jj) = (j / (th + gap), j % (th + gap));
            if ii >= tw || jj >= th {
                1.0
            } else {
                tiles[rj][ci].get(ii, jj)
            }
        });
        write_pgm(&mosaic, group_file(out, "mosaic", self.mode, &self.cost, self.noise).with_extension("pgm"))?;
        Ok(())
    }
}

fn fmt_num(crit: Criterion, v: f64) -> String {
    match crit {
        Criterion::Psnr if v.is_infinite() => format_psnr(v),
        Criterion::Psnr => format!("{v:.2}"),
        Criterion::Ssim => format!("{v:.4}"),
        Criterion::Cost => format!("{v:.4e}"),
    }
}

fn fmt_csv(crit: Criterion, v: f64) -> String {
    match crit {
        Criterion::Psnr => format_psnr(v),
        _ => v.to_string(),
    }
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub learn: LearnOutput,
    pub comparisons: Vec<Comparison>,
}

/// Learns every configured regulariser, then compares them per
/// (noise level, cost).
pub fn run_compare(config: &ExperimentConfig) -> Result<CompareReport, HarnessError> {
    let learn = run_learn(config)?;
    let labels: Vec<String> = config.regularisers.iter().map(|e| e.label.clone()).collect();
    let mut comparisons = Vec::with_capacity(learn.groups.len());
    for g in &learn.groups {
        let c = Comparison::from_rows(g.noise, g.cost, g.mode, &labels, &g.rows)?;
        c.write_files(&config.output)?;
        c.write_mosaic(&config.output)?;
        comparisons.push(c);
    }
    Ok(CompareReport { learn, comparisons })
}
