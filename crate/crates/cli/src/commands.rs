use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};

use sgen::config::RunConfig;
use sgen::data::{build_pairs, list_images, load_image, load_split, make_synthetic_corpus, save_image};
use sgen::gradcheck::{faulty_fixture, run_battery};
use sgen::metrics::evaluate as evaluate_report;
use sgen::model::{load_checkpoint, save_checkpoint, Generator};
use sgen::restore::restore_image;
use sgen::train::{StepRecord, Trainer};
use sgen::Tensor;

use crate::Common;

/// Offset between the synthetic training and test corpora seeds.
const SYNTHETIC_TEST_SEED_OFFSET: u64 = 0x5EED_7E57;

fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.degrade.seed = seed;
    }
    Ok(cfg)
}

/// Creates the parent directory of an output file.
fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
        }
        _ => Ok(()),
    }
}

fn check_scales(cfg: &RunConfig) -> Result<()> {
    let d = cfg.model.divisor();
    for &(h, w) in &cfg.degrade.scales {
        if h % d != 0 || w % d != 0 {
            bail!(
                "training scale {h}x{w} is not divisible by 2^(N+1) = {d} for N = {}",
                cfg.model.n_levels
            );
        }
    }
    Ok(())
}

fn clean_images(cfg: &RunConfig, root: Option<&Path>, split: &str, synthetic_seed: u64) -> Result<Vec<Tensor<f32>>> {
    match root {
        Some(root) => Ok(load_split(root, split)?),
        None => Ok(make_synthetic_corpus(cfg.synthetic_count, synthetic_seed)),
    }
}

pub fn train(common: &Common, checkpoint: Option<PathBuf>, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    check_scales(&cfg)?;
    let ckpt = checkpoint
        .or_else(|| cfg.checkpoint_out.clone())
        .context("no checkpoint path: set checkpoint_out or pass --checkpoint")?;
    let clean = clean_images(&cfg, cfg.data_root.as_deref(), "train", cfg.seed)?;
    let pairs = build_pairs(&clean, &cfg.degrade)?;
    let mut trainer = Trainer::new(&cfg.model, cfg.seed)?;
    ensure_parent(&ckpt)?;
    save_checkpoint(trainer.g_params(), &ckpt)
        .with_context(|| format!("cannot write checkpoint {}", ckpt.display()))?;

    let log_path = out.or_else(|| cfg.log_out.clone());
    let mut log: Box<dyn Write> = match &log_path {
        Some(p) => Box::new(BufWriter::new({
            ensure_parent(p)?;
            File::create(p).with_context(|| format!("cannot create log {}", p.display()))?
        })),
        None => Box::new(io::stdout().lock()),
    };
    writeln!(log, "{}", StepRecord::HEADER)?;
    let started = Instant::now();
    trainer.fit(&pairs, cfg.steps, cfg.seed, |tr, record| {
        writeln!(log, "{record}")?;
        if cfg.eval_every > 0 && record.step % cfg.eval_every == 0 {
            save_checkpoint(tr.g_params(), &ckpt)?;
        }
        Ok(())
    })?;
    log.flush()?;
    save_checkpoint(trainer.g_params(), &ckpt)?;
    eprintln!(
        "trained {} steps on {} pairs in {:.1}s; checkpoint {}",
        trainer.steps_done(),
        pairs.len(),
        started.elapsed().as_secs_f64(),
        ckpt.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn load_generator(cfg: &RunConfig, checkpoint: &Path) -> Result<(Generator, sgen::model::ParamStore<f32>)> {
    let gen = Generator::new(&cfg.model)?;
    let params = load_checkpoint(checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    gen.check_params(&params).with_context(|| {
        format!(
            "checkpoint {} does not match the configured architecture",
            checkpoint.display()
        )
    })?;
    Ok((gen, params))
}

/// The closest multiples of `d` below and above `v` (just `v` if it is one).
fn nearest_multiples(v: usize, d: usize) -> Vec<usize> {
    let lo = v / d * d;
    if lo == v {
        return vec![v];
    }
    let mut out = vec![lo + d];
    if lo > 0 {
        out.insert(0, lo);
    }
    out
}

pub fn restore(common: &Common, checkpoint: &Path, input: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let (gen, params) = load_generator(&cfg, checkpoint)?;
    let image = load_image(input)?;
    let (h, w) = (image.shape().h(), image.shape().w());
    let d = gen.divisor();
    if h % d != 0 || w % d != 0 {
        let sizes: Vec<String> = nearest_multiples(h, d)
            .iter()
            .flat_map(|&nh| nearest_multiples(w, d).into_iter().map(move |nw| format!("{nh}x{nw}")))
            .collect();
        bail!(
            "input {h}x{w} is not divisible by 2^(N+1) = {d}; nearest valid sizes: {}",
            sizes.join(", ")
        );
    }
    let restored = restore_image(&gen, &params, &image)?;
    save_image(&restored, out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn evaluate(common: &Common, checkpoint: &Path, input: Option<PathBuf>, out: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let (gen, params) = load_generator(&cfg, checkpoint)?;
    let root = input.or_else(|| cfg.data_root.clone());
    let clean = clean_images(&cfg, root.as_deref(), "test", cfg.seed ^ SYNTHETIC_TEST_SEED_OFFSET)?;
    let pairs = build_pairs(&clean, &cfg.degrade)?;
    let model_id = format!(
        "{} N={} {}",
        checkpoint.display(),
        cfg.model.n_levels,
        cfg.model.merge_mode
    );
    let report = evaluate_report(&gen, &params, &pairs, &model_id, &cfg.degrade.summary())?;
    let table = report.to_table();
    print!("{table}");
    if let Some(path) = out.or_else(|| cfg.report_out.clone()) {
        let (table_path, csv_path) = if path.extension().is_some_and(|e| e == "csv") {
            (path.with_extension("txt"), path)
        } else {
            (path.clone(), path.with_extension("csv"))
        };
        ensure_parent(&table_path)?;
        fs::write(&table_path, &table).with_context(|| format!("cannot write {}", table_path.display()))?;
        fs::write(&csv_path, report.to_csv()).with_context(|| format!("cannot write {}", csv_path.display()))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn degrade(common: &Common, input: &Path, out: &Path) -> Result<ExitCode> {
    let cfg = load_config(common)?;
    let paths = list_images(input)?;
    if paths.is_empty() {
        bail!("no .ppm images in {}", input.display());
    }
    let clean = paths.iter().map(load_image).collect::<sgen::Result<Vec<_>>>()?;
    let pairs = build_pairs(&clean, &cfg.degrade)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    let per_image = cfg.degrade.scales.len();
    for (i, path) in paths.iter().enumerate() {
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("image{i}"));
        for pair in &pairs[i * per_image..(i + 1) * per_image] {
            let (h, w) = (pair.clean.shape().h(), pair.clean.shape().w());
            let base = format!("{stem}_scale{h}x{w}");
            save_image(&pair.clean, out.join(format!("{base}_clean.ppm")))?;
            save_image(&pair.corrupted, out.join(format!("{base}_noisy.ppm")))?;
        }
    }
    eprintln!("wrote {} pairs to {}", pairs.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(include_faulty_fixture: bool) -> Result<ExitCode> {
    let started = Instant::now();
    let mut outcomes = run_battery()?;
    if include_faulty_fixture {
        outcomes.push(faulty_fixture()?);
    }
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed()).count();
    println!(
        "{} checks, {} failed, {:.1}s",
        outcomes.len(),
        failed,
        started.elapsed().as_secs_f64()
    );
    Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_sizes() {
        assert_eq!(nearest_multiples(100, 8), vec![96, 104]);
        assert_eq!(nearest_multiples(96, 8), vec![96]);
        assert_eq!(nearest_multiples(5, 8), vec![8]);
    }
}
