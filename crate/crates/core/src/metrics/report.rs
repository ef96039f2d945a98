use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::SamplePair;
use crate::error::{Error, Result};
use crate::metrics::{psnr, ssim};
use crate::model::{Generator, ParamStore};
use crate::restore::restore_padded;
use crate::tensor::Tensor;

/// Aggregates for one evaluation scale.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub scale_index: usize,
    pub height: usize,
    pub width: usize,
    /// Mean over images with finite PSNR; `inf` when every image was exact.
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub count: usize,
    /// Images restored exactly, excluded from `mean_psnr`.
    pub exact: usize,
}

/// Per-scale PSNR/SSIM of one model on one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    pub model_id: String,
    pub spec: String,
    pub rows: Vec<ReportRow>,
}

fn fmt_psnr(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl QualityReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "model: {}", self.model_id);
        let _ = writeln!(out, "degradation: {}", self.spec);
        let _ = writeln!(out, "{:<10} {:>10} {:>8} {:>6}", "scale", "PSNR(dB)", "SSIM", "count");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<10} {:>10} {:>8.4} {:>6}",
                format!("{}x{}", r.height, r.width),
                fmt_psnr(r.mean_psnr),
                r.mean_ssim,
                r.count
            );
        }
        out
    }

    /// Comma-separated with header `scale,psnr,ssim,count`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scale,psnr,ssim,count\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}x{},{},{:.6},{}",
                r.height,
                r.width,
                fmt_psnr(r.mean_psnr),
                r.mean_ssim,
                r.count
            );
        }
        out
    }
}

/// Scores `restorer(corrupted)` against the clean image for every pair and
/// aggregates per scale. Images are processed in parallel; the result does
/// not depend on the thread count.
pub fn evaluate_with<F>(restorer: F, dataset: &[SamplePair], model_id: &str, spec: &str) -> Result<QualityReport>
where
    F: Fn(&Tensor<f32>) -> Result<Tensor<f32>> + Sync,
{
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty dataset".into()));
    }
    let score = |pair: &SamplePair| -> Result<(f64, f64)> {
        let restored = restorer(&pair.corrupted)?;
        Ok((psnr(&pair.clean, &restored, 255.0)?, ssim(&pair.clean, &restored)?))
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(crate::worker_threads())
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let scores: Vec<(f64, f64)> =
        pool.install(|| dataset.par_iter().map(score).collect::<Result<Vec<_>>>())?;

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, p) in dataset.iter().enumerate() {
        groups.entry(p.scale_index).or_default().push(i);
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (scale_index, members) in groups {
        let shape = dataset[members[0]].clean.shape();
        if let Some(&odd) = members.iter().find(|&&i| dataset[i].clean.shape() != shape) {
            return Err(Error::ShapeMismatch {
                op: "evaluate",
                left: shape,
                right: dataset[odd].clean.shape(),
            });
        }
        let finite: Vec<f64> = members.iter().map(|&i| scores[i].0).filter(|v| v.is_finite()).collect();
        let mean_psnr = if finite.is_empty() {
            f64::INFINITY
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let mean_ssim = members.iter().map(|&i| scores[i].1).sum::<f64>() / members.len() as f64;
        rows.push(ReportRow {
            scale_index,
            height: shape.h(),
            width: shape.w(),
            mean_psnr,
            mean_ssim,
            count: members.len(),
            exact: members.len() - finite.len(),
        });
    }
    Ok(QualityReport {
        model_id: model_id.to_string(),
        spec: spec.to_string(),
        rows,
    })
}

/// Evaluates a generator. Inputs whose size is not a multiple of the
/// generator's divisor are edge-padded for the forward pass and cropped back.
pub fn evaluate(
    gen: &Generator,
    params: &ParamStore<f32>,
    dataset: &[SamplePair],
    model_id: &str,
    spec: &str,
) -> Result<QualityReport> {
    gen.check_params(params)?;
    evaluate_with(|s| restore_padded(gen, params, s), dataset, model_id, spec)
}
