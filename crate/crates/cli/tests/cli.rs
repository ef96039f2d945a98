//! End-to-end runs of the `sgen` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgen::data::{load_image, save_image};
use sgen::ensemble::MergeMode;
use sgen::model::{save_checkpoint, Generator, SgenConfig};
use sgen::{Shape, Tensor};
use tempfile::TempDir;

const SMALL: &str = "n_levels = 2\nbase_channels = 2\nbottleneck_channels = 2\ndisc_channels = 2\nbatch_size = 2\nsynthetic_count = 2\nscales = 16x16\n";

fn sgen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgen"))
        .args(args)
        .env("SGEN_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn zero_checkpoint(dir: &Path, n: usize) -> PathBuf {
    let gen = Generator::new(&SgenConfig::tiny(n, 2, MergeMode::Sgu)).unwrap();
    let mut params = gen.init_params::<f32, _>(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    params.map_values(|_| 0.0);
    let p = dir.join(format!("zero{n}.ckpt"));
    save_checkpoint(&params, &p).unwrap();
    p
}

#[test]
fn train_zero_steps_writes_initial_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.conf", &format!("{SMALL}steps = 0\n"));
    let ckpt = dir.path().join("g.ckpt");
    let log = dir.path().join("log.csv");
    let o = sgen(&["train", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&log)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(ckpt.exists());
    assert_eq!(fs::read_to_string(&log).unwrap(), "step,loss_g,loss_d,loss_mse\n");
}

#[test]
fn train_logs_are_identical_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.conf", &format!("{SMALL}steps = 3\n"));
    let run = |tag: &str, seed: &str| {
        let ckpt = dir.path().join(format!("{tag}.ckpt"));
        let log = dir.path().join(format!("{tag}.csv"));
        let o = sgen(&["train", "--config", s(&cfg), "--seed", seed, "--checkpoint", s(&ckpt), "--out", s(&log)]);
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read(&log).unwrap(), fs::read(&ckpt).unwrap())
    };
    let a = run("a", "7");
    let b = run("b", "7");
    assert_eq!(a, b);
    let text = String::from_utf8(a.0.clone()).unwrap();
    assert_eq!(text.lines().count(), 4);
    assert!(text.lines().skip(1).all(|l| l.split(',').count() == 4 && !l.contains(",,")));
    assert_ne!(run("c", "8").0, a.0);
}

#[test]
fn train_mse_only_leaves_loss_d_empty() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.conf", &format!("{SMALL}steps = 2\ngan_loss = none\n"));
    let ckpt = dir.path().join("g.ckpt");
    let o = sgen(&["train", "--config", s(&cfg), "--checkpoint", s(&ckpt)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.split(',').nth(2) == Some("")));
}

#[test]
fn train_rejects_bad_config_and_unwritable_checkpoint() {
    let dir = TempDir::new().unwrap();
    let bad = write_config(dir.path(), "bad.conf", "steps = 1\nwidth = 3\n");
    let o = sgen(&["train", "--config", s(&bad), "--checkpoint", s(&dir.path().join("x.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 2") && stderr(&o).contains("width"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "run.conf", &format!("{SMALL}steps = 0\n"));
    let blocker = dir.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = sgen(&["train", "--config", s(&cfg), "--checkpoint", s(&blocker.join("g.ckpt"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("cannot create"), "{}", stderr(&o));
}

#[test]
fn restore_with_zero_parameters_is_mid_gray() {
    let dir = TempDir::new().unwrap();
    let ckpt = zero_checkpoint(dir.path(), 2);
    let cfg = write_config(dir.path(), "run.conf", SMALL);
    let input = dir.path().join("in.ppm");
    save_image(&Tensor::full(Shape::new(1, 3, 16, 24), 30.0), &input).unwrap();
    let out = dir.path().join("out.ppm");
    let o = sgen(&["restore", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--in", s(&input), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let img = load_image(&out).unwrap();
    assert_eq!(img.shape(), Shape::new(1, 3, 16, 24));
    assert!(img.data().iter().all(|&v| v == 128.0));
}

#[test]
fn restore_handles_paper_scales_and_rejects_indivisible_sizes() {
    let dir = TempDir::new().unwrap();
    let ckpt = zero_checkpoint(dir.path(), 3);
    let cfg = write_config(
        dir.path(),
        "run.conf",
        "n_levels = 3\nbase_channels = 2\nbottleneck_channels = 2\ndisc_channels = 2\n",
    );
    for (h, w) in [(128, 96), (208, 176)] {
        let input = dir.path().join(format!("in{h}.ppm"));
        save_image(&Tensor::full(Shape::new(1, 3, h, w), 90.0), &input).unwrap();
        let out = dir.path().join(format!("out{h}.ppm"));
        let o = sgen(&["restore", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--in", s(&input), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(load_image(&out).unwrap().shape(), Shape::new(1, 3, h, w));
    }
    let input = dir.path().join("odd.ppm");
    save_image(&Tensor::full(Shape::new(1, 3, 100, 100), 90.0), &input).unwrap();
    let o = sgen(&["restore", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--in", s(&input), "--out", s(&dir.path().join("o.ppm"))]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("not divisible") && err.contains("96x96") && err.contains("112x112"), "{err}");
}

#[test]
fn restore_rejects_mismatched_checkpoint() {
    let dir = TempDir::new().unwrap();
    let ckpt = zero_checkpoint(dir.path(), 2);
    let cfg = write_config(dir.path(), "run.conf", "n_levels = 3\nbase_channels = 2\nbottleneck_channels = 2\n");
    let input = dir.path().join("in.ppm");
    save_image(&Tensor::full(Shape::new(1, 3, 16, 16), 1.0), &input).unwrap();
    let o = sgen(&["restore", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--in", s(&input), "--out", s(&dir.path().join("o.ppm"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not match"), "{}", stderr(&o));
}

#[test]
fn evaluate_reports_six_scales_reproducibly() {
    let dir = TempDir::new().unwrap();
    let ckpt = zero_checkpoint(dir.path(), 2);
    let cfg = write_config(
        dir.path(),
        "run.conf",
        "n_levels = 2\nbase_channels = 2\nbottleneck_channels = 2\nsynthetic_count = 1\n",
    );
    let run = |tag: &str| {
        let out = dir.path().join(format!("{tag}.txt"));
        let o = sgen(&["evaluate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        (fs::read_to_string(&out).unwrap(), fs::read_to_string(out.with_extension("csv")).unwrap())
    };
    let (table, csv) = run("a");
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "scale,psnr,ssim,count");
    assert_eq!(lines.len(), 7);
    for (line, scale) in lines[1..].iter().zip(["128x96", "144x112", "160x128", "176x144", "192x160", "208x176"]) {
        assert!(line.starts_with(scale), "{line}");
    }
    assert!(table.contains("208x176"));
    assert_eq!(run("b"), (table, csv));
}

#[test]
fn evaluate_with_missing_data_root_fails() {
    let dir = TempDir::new().unwrap();
    let ckpt = zero_checkpoint(dir.path(), 2);
    let cfg = write_config(dir.path(), "run.conf", "n_levels = 2\nbase_channels = 2\nbottleneck_channels = 2\n");
    let o = sgen(&["evaluate", "--config", s(&cfg), "--checkpoint", s(&ckpt), "--in", "/nonexistent/data"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does not exist"), "{}", stderr(&o));
}

#[test]
fn degrade_writes_every_pair() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    save_image(&Tensor::full(Shape::new(1, 3, 64, 48), 128.0), input.join("flat.ppm")).unwrap();
    let ramp: Vec<f32> = (0..3 * 40 * 40).map(|i| (i % 251) as f32).collect();
    save_image(&Tensor::from_vec(Shape::new(1, 3, 40, 40), ramp).unwrap(), input.join("ramp.ppm")).unwrap();

    let run = |out: &Path, cfg: Option<&Path>| {
        let mut args = vec!["degrade", "--in", s(&input), "--out", s(out)];
        if let Some(c) = cfg {
            args.extend(["--config", s(c)]);
        }
        let o = sgen(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    let out = dir.path().join("out");
    run(&out, None);
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names.len(), 2 * 6 * 2);
    assert!(names.contains(&"flat_scale128x96_clean.ppm".to_string()));
    assert!(names.contains(&"ramp_scale208x176_noisy.ppm".to_string()));

    let again = dir.path().join("again");
    run(&again, None);
    for n in &names {
        assert_eq!(fs::read(out.join(n)).unwrap(), fs::read(again.join(n)).unwrap(), "{n}");
    }

    let quiet = write_config(dir.path(), "quiet.conf", "noise_sigma = 0\n");
    let q = dir.path().join("quiet");
    run(&q, Some(&quiet));
    for (h, w) in [(128, 96), (208, 176)] {
        let clean = fs::read(q.join(format!("flat_scale{h}x{w}_clean.ppm"))).unwrap();
        let noisy = fs::read(q.join(format!("flat_scale{h}x{w}_noisy.ppm"))).unwrap();
        assert_eq!(clean, noisy);
    }
}

#[test]
fn degrade_rejects_unreadable_input() {
    let dir = TempDir::new().unwrap();
    let o = sgen(&["degrade", "--in", "/nonexistent/images", "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(2));
    let input = dir.path().join("in");
    fs::create_dir(&input).unwrap();
    fs::write(input.join("broken.ppm"), b"P6\n4 4\n255\nabc").unwrap();
    let o = sgen(&["degrade", "--in", s(&input), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("broken.ppm"), "{}", stderr(&o));
}

#[test]
fn gradcheck_passes_and_detects_a_broken_backward() {
    let o = sgen(&["gradcheck"]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains(" 0 failed"));
    assert!(!stdout(&o).contains("FAIL"));

    let o = sgen(&["gradcheck", "--include-faulty-fixture"]);
    assert!(!o.status.success());
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL fixture")), "{}", stdout(&o));
}

#[test]
fn shipped_config_template_parses() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/sgen.conf");
    let cfg = sgen::config::RunConfig::load(path).unwrap();
    assert_eq!(cfg.model.n_levels, 3);
    assert_eq!(cfg.model.base_channels, 64);
    assert_eq!(cfg.degrade.scales.len(), 6);
}
