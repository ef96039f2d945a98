//! PSNR and SSIM in the `[0, 255]` pixel domain, and per-scale reports.

mod report;

pub use report::{evaluate, evaluate_with, QualityReport, ReportRow};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn same_shape(op: &'static str, a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all elements jointly. Identical
/// inputs give `f64::INFINITY`.
pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>, peak: f64) -> Result<f64> {
    same_shape("psnr", a, b)?;
    if !(peak > 0.0) {
        return Err(Error::InvalidArgument(format!("psnr peak must be > 0, got {peak}")));
    }
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
        .sum();
    let mse = se / a.numel() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of one `h × w` plane.
fn filter_plane(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0f64; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0f64; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11x11 Gaussian windows, averaged over every
/// `(sample, channel)` plane.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let [n, c, h, w] = a.shape().0;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let plane = h * w;
    let mut total = 0.0;
    for p in 0..n * c {
        let xa: Vec<f64> = a.data()[p * plane..(p + 1) * plane].iter().map(|&v| v as f64).collect();
        let xb: Vec<f64> = b.data()[p * plane..(p + 1) * plane].iter().map(|&v| v as f64).collect();
        let prod = |u: &[f64], v: &[f64]| -> Vec<f64> { u.iter().zip(v).map(|(x, y)| x * y).collect() };
        let mu_a = filter_plane(&xa, h, w, &taps);
        let mu_b = filter_plane(&xb, h, w, &taps);
        let e_aa = filter_plane(&prod(&xa, &xa), h, w, &taps);
        let e_bb = filter_plane(&prod(&xb, &xb), h, w, &taps);
        let e_ab = filter_plane(&prod(&xa, &xb), h, w, &taps);
        let mut acc = 0.0;
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            acc += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
        }
        total += acc / mu_a.len() as f64;
    }
    Ok(total / (n * c) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn psnr_closed_form() {
        let a = Tensor::full(Shape::new(1, 3, 4, 4), 100.0);
        let b = Tensor::full(Shape::new(1, 3, 4, 4), 130.0);
        let expect = 10.0 * (255f64.powi(2) / 900.0).log10();
        assert!((psnr(&a, &b, 255.0).unwrap() - expect).abs() < 1e-9);
        assert!((psnr(&b, &a, 255.0).unwrap() - expect).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        let small = Tensor::full(Shape::new(1, 3, 2, 2), 0.0);
        assert!(psnr(&a, &small, 255.0).is_err());
    }

    #[test]
    fn ssim_identity_and_shift() {
        let mut rng = rand::rng();
        let a = Tensor::<f32>::rand_uniform(Shape::new(1, 3, 16, 16), 0.0, 255.0, &mut rng);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let b = a.map(|v| v + 20.0);
        let s = ssim(&a, &b).unwrap();
        assert!(s < 1.0 && s > -1.0);
        assert!(ssim(&Tensor::zeros(Shape::new(1, 1, 8, 8)), &Tensor::zeros(Shape::new(1, 1, 8, 8))).is_err());
    }

    #[test]
    fn taps_normalized_and_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(t[i], t[10 - i]);
        }
    }
}
