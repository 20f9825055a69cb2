use std::path::Path;
use std::process::{Command, Output};

use bilevel_core::harness::{read_image, write_raw};
use bilevel_core::pgm::write_pgm;
use bilevel_core::{psnr, synthetic, ImageGrid, Shape};

fn bilevel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bilevel")).arg("--quiet").args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn help_and_usage_errors() {
    assert!(bilevel(&["--help"]).status.success());
    assert_eq!(bilevel(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(bilevel(&["learn", "--regulariser", "fancy"]).status.code(), Some(2));
    assert_eq!(bilevel(&["compare", "--mode", "sideways"]).status.code(), Some(2));
}

#[test]
fn bad_config_file_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "regularisers = tv\nnonsense = 1\n").unwrap();
    let o = bilevel(&["learn", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
}

#[test]
fn denoise_then_score() {
    let dir = tempfile::tempdir().unwrap();
    let clean = dir.path().join("clean.f64");
    let out = dir.path().join("u.f64");
    write_raw(&synthetic::piecewise_constant(32), &clean).unwrap();
    let o = bilevel(&[
        "denoise", "--input", s(&clean), "--output", s(&out), "--regulariser", "tgv2", "--alpha", "0.02", "--beta", "0.04",
        "--noise-var", "20", "--seed", "3", "--reference", s(&clean),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let p: f64 = text.lines().find_map(|l| l.strip_prefix("psnr\t")).unwrap().parse().unwrap();
    let u = read_image(&out).unwrap();
    assert!((psnr(&u, &read_image(&clean).unwrap()).unwrap() - p).abs() < 1e-12);

    let m = bilevel(&["metrics", "--input", s(&out), "--reference", s(&clean)]);
    assert!(m.status.success());
    assert_eq!(stdout(&m), text);
    let m = bilevel(&["metrics", "--input", s(&clean), "--reference", s(&clean), "--cost", "huber-tv"]);
    assert_eq!(stdout(&m), "psnr\tinf\nssim\t1\ncost\t0\n");
}

#[test]
fn mismatched_shapes_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.pgm"), dir.path().join("b.pgm"));
    write_pgm(&ImageGrid::constant(Shape::new(4, 4).unwrap(), 0.5), &a).unwrap();
    write_pgm(&ImageGrid::constant(Shape::new(5, 4).unwrap(), 0.5), &b).unwrap();
    let o = bilevel(&["metrics", "--input", s(&a), "--reference", s(&b)]);
    assert!(!o.status.success());
    assert!(!o.stderr.is_empty());
}

#[test]
fn learn_with_config_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "regularisers = ictv\nnoise = 5\nseed = 1\ninput = bundled:piecewise\nmax_outer_iters = 30\n").unwrap();
    let out = dir.path().join("out");
    let o = bilevel(&["learn", "--config", s(&cfg), "--regulariser", "tv", "--noise-var", "20", "--output", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("piecewise\ttv\talpha="), "{text}");
    assert!(out.join("learn_individual_l22_s20.csv").is_file());
}

#[test]
fn compare_prints_orderings() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bilevel(&[
        "compare", "--regulariser", "tv,tgv2", "--noise-var", "10", "--input", "synthetic:2x16", "--output", s(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("95% t-test"), "{text}");
    assert!(out.join("order_individual_l22_s10.csv").is_file());
}

#[test]
fn prepare_corpus_resizes() {
    let dir = tempfile::tempdir().unwrap();
    let (src, dst) = (dir.path().join("src"), dir.path().join("dst"));
    std::fs::create_dir(&src).unwrap();
    write_pgm(&synthetic::geometric(64), src.join("g.pgm")).unwrap();
    let o = bilevel(&["prepare-corpus", "--input", s(&src), "--output", s(&dst), "--size", "20"]);
    assert!(o.status.success());
    let img = read_image(dst.join("g.pgm")).unwrap();
    assert_eq!((img.width(), img.height()), (20, 20));
    assert_eq!(bilevel(&["prepare-corpus", "--input", s(&dst.join("none")), "--output", s(&dst)]).status.code(), Some(2));
}
