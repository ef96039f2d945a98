//! Helpers shared by the integration tests: independent nested-loop oracles
//! and a small synthetic training set.

#![allow(dead_code)]

use sgen::data::{build_pairs, make_synthetic_corpus, resize_bilinear, DegradeSpec, SamplePair};
use sgen::nn::{conv2d, deconv2d, ConvGeometry, ConvVars};
use sgen::{Shape, Tape, Tensor};

/// `count` synthetic faces resized to `size × size` and corrupted at that scale.
pub fn toy_pairs(count: usize, size: usize, seed: u64) -> Vec<SamplePair> {
    let clean: Vec<_> = make_synthetic_corpus(count, seed)
        .iter()
        .map(|c| resize_bilinear(c, size, size).unwrap())
        .collect();
    let spec = DegradeSpec {
        scales: vec![(size, size)],
        seed,
        ..DegradeSpec::default()
    };
    build_pairs(&clean, &spec).unwrap()
}

/// Direct quadruple loop: `out[b,o,y,x] = bias[o] + Σ w[o,i,ky,kx]·in[b,i,y·s+ky-p, x·s+kx-p]`.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize, oh: usize, ow: usize) -> Tensor<f64> {
    let [n, ci, h, wd] = x.shape().0;
    let [co, _, k, _] = w.shape().0;
    let mut out = Tensor::zeros(Shape::new(n, co, oh, ow));
    for bi in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = b.at(0, o, 0, 0);
                    for i in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < wd {
                                    acc += w.at(o, i, ky, kx) * x.at(bi, i, iy as usize, ix as usize);
                                }
                            }
                        }
                    }
                    out.set(bi, o, y, xo, acc);
                }
            }
        }
    }
    out
}

/// Scatter-accumulate: every input pixel adds its kernel footprint into the output.
pub fn deconv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize, oh: usize, ow: usize) -> Tensor<f64> {
    let [n, ci, h, wd] = x.shape().0;
    let [_, co, k, _] = w.shape().0;
    let mut out = Tensor::zeros(Shape::new(n, co, oh, ow));
    for bi in 0..n {
        for o in 0..co {
            for y in 0..oh {
                for xo in 0..ow {
                    out.set(bi, o, y, xo, b.at(0, o, 0, 0));
                }
            }
        }
        for i in 0..ci {
            for y in 0..h {
                for xi in 0..wd {
                    let v = x.at(bi, i, y, xi);
                    for o in 0..co {
                        for ky in 0..k {
                            for kx in 0..k {
                                let oy = (y * stride + ky) as isize - pad as isize;
                                let ox = (xi * stride + kx) as isize - pad as isize;
                                if oy >= 0 && ox >= 0 && (oy as usize) < oh && (ox as usize) < ow {
                                    let (oy, ox) = (oy as usize, ox as usize);
                                    let cur = out.at(bi, o, oy, ox);
                                    out.set(bi, o, oy, ox, cur + w.at(i, o, ky, kx) * v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Runs the library convolution (`transpose = false`) or transposed
/// convolution on constants.
pub fn run_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, g: ConvGeometry, transpose: bool) -> Tensor<f64> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let p = ConvVars {
        weight: tape.constant(w.clone()),
        bias: tape.constant(b.clone()),
        geometry: g,
    };
    let y = if transpose {
        deconv2d(&mut tape, xv, &p).unwrap()
    } else {
        conv2d(&mut tape, xv, &p).unwrap()
    };
    tape.value(y).clone()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// SSIM straight from the definition: an explicit 11x11 Gaussian window
/// (σ = 1.5) at every valid position, averaged over positions and planes.
pub fn naive_ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let [n, c, h, w] = a.shape().0;
    let mut win = [[0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            total += *v;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let mut sum = 0.0;
    for bi in 0..n {
        for ch in 0..c {
            let mut plane = 0.0;
            let mut count = 0;
            for y in 0..=h - 11 {
                for x in 0..=w - 11 {
                    let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wt = win[i][j] / total;
                            let va = a.at(bi, ch, y + i, x + j) as f64;
                            let vb = b.at(bi, ch, y + i, x + j) as f64;
                            ma += wt * va;
                            mb += wt * vb;
                            saa += wt * va * va;
                            sbb += wt * vb * vb;
                            sab += wt * va * vb;
                        }
                    }
                    let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                    plane += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                        / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1;
                }
            }
            sum += plane / count as f64;
        }
    }
    sum / (n * c) as f64
}
