//! The multi-scale corruption protocol: resize to a target scale, box-average
//! downsample, add Gaussian noise, nearest-neighbour upsample back.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// The six evaluation scales `(h, w)` between 128x96 and 208x176.
pub const PAPER_SCALES: [(usize, usize); 6] = [
    (128, 96),
    (144, 112),
    (160, 128),
    (176, 144),
    (192, 160),
    (208, 176),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum UpMethod {
    #[default]
    Nearest,
}

impl fmt::Display for UpMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("nearest")
    }
}

impl FromStr for UpMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(UpMethod::Nearest),
            other => Err(Error::InvalidArgument(format!(
                "unknown upsampling method `{other}` (only nearest is supported)"
            ))),
        }
    }
}

/// Corruption recipe.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradeSpec {
    pub scales: Vec<(usize, usize)>,
    pub down_factor: usize,
    /// Noise standard deviation in 0–255 pixel units.
    pub noise_sigma: f64,
    pub up_method: UpMethod,
    pub seed: u64,
}

impl Default for DegradeSpec {
    fn default() -> Self {
        DegradeSpec {
            scales: PAPER_SCALES.to_vec(),
            down_factor: 4,
            noise_sigma: 30.0,
            up_method: UpMethod::Nearest,
            seed: 0,
        }
    }
}

impl DegradeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.down_factor == 0 {
            return Err(Error::Config("down_factor must be >= 1".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::Config(format!(
                "noise_sigma must be finite and >= 0, got {}",
                self.noise_sigma
            )));
        }
        if self.scales.is_empty() {
            return Err(Error::Config("at least one scale is required".into()));
        }
        for &(h, w) in &self.scales {
            if h == 0 || w == 0 || h % self.down_factor != 0 || w % self.down_factor != 0 {
                return Err(Error::Config(format!(
                    "scale {h}x{w} is not divisible by down_factor {}",
                    self.down_factor
                )));
            }
        }
        Ok(())
    }

    /// Short human-readable description, used in report headers.
    pub fn summary(&self) -> String {
        format!(
            "scales={} down={} sigma={} up={} seed={}",
            format_scales(&self.scales),
            self.down_factor,
            self.noise_sigma,
            self.up_method,
            self.seed
        )
    }
}

pub fn format_scales(scales: &[(usize, usize)]) -> String {
    scales
        .iter()
        .map(|(h, w)| format!("{h}x{w}"))
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_scales(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (h, w) = p
                .split_once(['x', 'X'])
                .ok_or_else(|| Error::Config(format!("scale `{p}` is not of the form HxW")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("scale `{p}` has a bad dimension")))
            };
            Ok((parse(h)?, parse(w)?))
        })
        .collect()
}

/// A clean image and its corrupted counterpart, both `(1, 3, h, w)` in `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub clean: Tensor<f32>,
    pub corrupted: Tensor<f32>,
    pub scale_index: usize,
}

/// Averages non-overlapping `factor × factor` blocks.
pub fn box_downsample(x: &Tensor<f32>, factor: usize) -> Result<Tensor<f32>> {
    let [n, c, h, w] = x.shape().0;
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidShape {
            op: "box_downsample",
            msg: format!("{h}x{w} is not divisible by factor {factor}"),
        });
    }
    let (oh, ow) = (h / factor, w / factor);
    let mut out = Tensor::zeros(Shape::new(n, c, oh, ow));
    let norm = 1.0 / (factor * factor) as f64;
    for b in 0..n {
        for ch in 0..c {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = 0f64;
                    for dy in 0..factor {
                        for dx in 0..factor {
                            acc += x.at(b, ch, y * factor + dy, xo * factor + dx) as f64;
                        }
                    }
                    out.set(b, ch, y, xo, (acc * norm) as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Replicates every pixel into a `factor × factor` block.
pub fn nearest_upsample(x: &Tensor<f32>, factor: usize) -> Tensor<f32> {
    let [n, c, h, w] = x.shape().0;
    let mut out = Tensor::zeros(Shape::new(n, c, h * factor, w * factor));
    for b in 0..n {
        for ch in 0..c {
            for y in 0..h * factor {
                for xo in 0..w * factor {
                    out.set(b, ch, y, xo, x.at(b, ch, y / factor, xo / factor));
                }
            }
        }
    }
    out
}

/// Corrupts a clean image at one of the spec's scales.
pub fn degrade<R: Rng + ?Sized>(clean: &Tensor<f32>, spec: &DegradeSpec, rng: &mut R) -> Result<SamplePair> {
    let shape = clean.shape();
    let (h, w) = (shape.h(), shape.w());
    let scale_index = spec
        .scales
        .iter()
        .position(|&s| s == (h, w))
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "image size {h}x{w} is not one of the scales {}",
                format_scales(&spec.scales)
            ))
        })?;
    let f = spec.down_factor;
    if f == 0 || h % f != 0 || w % f != 0 {
        return Err(Error::InvalidShape {
            op: "degrade",
            msg: format!("{h}x{w} is not divisible by down_factor {f}"),
        });
    }
    let mut low = box_downsample(clean, f)?;
    if spec.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, spec.noise_sigma)
            .map_err(|e| Error::InvalidArgument(format!("noise_sigma: {e}")))?;
        for v in low.data_mut() {
            let noisy = *v as f64 + normal.sample(rng);
            *v = noisy.clamp(0.0, 255.0) as f32;
        }
    }
    let corrupted = match spec.up_method {
        UpMethod::Nearest => nearest_upsample(&low, f),
    };
    Ok(SamplePair {
        clean: clean.clone(),
        corrupted,
        scale_index,
    })
}

/// Bilinear resize with half-pixel centres and edge clamping.
pub fn resize_bilinear(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let [n, c, h, w] = x.shape().0;
    if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot resize {h}x{w} to {out_h}x{out_w}"
        )));
    }
    let taps = |out_len: usize, in_len: usize| -> Vec<(usize, usize, f64)> {
        let scale = in_len as f64 / out_len as f64;
        (0..out_len)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (in_len - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(in_len - 1);
                (i0, i1, src - i0 as f64)
            })
            .collect()
    };
    let (ty, tx) = (taps(out_h, h), taps(out_w, w));
    let mut out = Tensor::zeros(Shape::new(n, c, out_h, out_w));
    for b in 0..n {
        for ch in 0..c {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let p = |y, xx| x.at(b, ch, y, xx) as f64;
                    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                    out.set(b, ch, oy, ox, (top * (1.0 - fy) + bottom * fy) as f32);
                }
            }
        }
    }
    Ok(out)
}

/// Resizes a clean image to every target scale, in order.
pub fn resize_to_scales(clean: &Tensor<f32>, scales: &[(usize, usize)]) -> Result<Vec<Tensor<f32>>> {
    scales
        .iter()
        .map(|&(h, w)| resize_bilinear(clean, h, w))
        .collect()
}
