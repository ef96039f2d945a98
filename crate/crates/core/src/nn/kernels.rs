// Direct-loop cross-correlation kernels shared by conv2d and deconv2d.
//
// "in" is always the high-resolution side of a strided correlation and "out"
// the low-resolution side. A transposed convolution runs the same kernels with
// the roles of forward and input-gradient swapped.

use crate::tensor::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub batch: usize,
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

/// Output positions `o` in `[lo, hi)` with `0 <= o*stride + tap - padding < in_len`.
#[inline]
fn valid_range(tap: usize, d: &ConvDims, in_len: usize, out_len: usize) -> (usize, usize) {
    let (s, p) = (d.stride, d.padding);
    let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
    if in_len + p < tap + 1 {
        return (0, 0);
    }
    let hi = ((in_len - 1 + p - tap) / s + 1).min(out_len);
    (lo.min(hi), hi)
}

/// `out[b,o,y,x] += sum_{i,ky,kx} w[o,i,ky,kx] * in[b,i,y*s+ky-p,x*s+kx-p]`
pub(crate) fn correlate<T: Real>(input: &[T], weight: &[T], out: &mut [T], d: &ConvDims) {
    let (in_plane, out_plane) = (d.in_h * d.in_w, d.out_h * d.out_w);
    let k = d.kernel;
    for b in 0..d.batch {
        for o in 0..d.out_c {
            let dst = &mut out[(b * d.out_c + o) * out_plane..][..out_plane];
            for i in 0..d.in_c {
                let src = &input[(b * d.in_c + i) * in_plane..][..in_plane];
                let wk = &weight[(o * d.in_c + i) * k * k..][..k * k];
                for ky in 0..k {
                    let (y0, y1) = valid_range(ky, d, d.in_h, d.out_h);
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let (x0, x1) = valid_range(kx, d, d.in_w, d.out_w);
                        for y in y0..y1 {
                            let iy = y * d.stride + ky - d.padding;
                            let row = &src[iy * d.in_w..][..d.in_w];
                            let drow = &mut dst[y * d.out_w..][..d.out_w];
                            for x in x0..x1 {
                                drow[x] += wv * row[x * d.stride + kx - d.padding];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`correlate`] with respect to its input: scatters `out`-side
/// values back onto the `in` side.
pub(crate) fn correlate_adjoint<T: Real>(
    out_side: &[T],
    weight: &[T],
    in_side: &mut [T],
    d: &ConvDims,
) {
    let (in_plane, out_plane) = (d.in_h * d.in_w, d.out_h * d.out_w);
    let k = d.kernel;
    for b in 0..d.batch {
        for o in 0..d.out_c {
            let src = &out_side[(b * d.out_c + o) * out_plane..][..out_plane];
            for i in 0..d.in_c {
                let dst = &mut in_side[(b * d.in_c + i) * in_plane..][..in_plane];
                let wk = &weight[(o * d.in_c + i) * k * k..][..k * k];
                for ky in 0..k {
                    let (y0, y1) = valid_range(ky, d, d.in_h, d.out_h);
                    for kx in 0..k {
                        let wv = wk[ky * k + kx];
                        let (x0, x1) = valid_range(kx, d, d.in_w, d.out_w);
                        for y in y0..y1 {
                            let iy = y * d.stride + ky - d.padding;
                            let srow = &src[y * d.out_w..][..d.out_w];
                            let drow = &mut dst[iy * d.in_w..][..d.in_w];
                            for x in x0..x1 {
                                drow[x * d.stride + kx - d.padding] += wv * srow[x];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient of [`correlate`] with respect to the weight:
/// `gw[o,i,ky,kx] += sum_{b,y,x} out_side[b,o,y,x] * in_side[b,i,y*s+ky-p,x*s+kx-p]`.
pub(crate) fn correlate_weight_grad<T: Real>(
    in_side: &[T],
    out_side: &[T],
    grad_weight: &mut [T],
    d: &ConvDims,
) {
    let (in_plane, out_plane) = (d.in_h * d.in_w, d.out_h * d.out_w);
    let k = d.kernel;
    for b in 0..d.batch {
        for o in 0..d.out_c {
            let g = &out_side[(b * d.out_c + o) * out_plane..][..out_plane];
            for i in 0..d.in_c {
                let src = &in_side[(b * d.in_c + i) * in_plane..][..in_plane];
                let gk = &mut grad_weight[(o * d.in_c + i) * k * k..][..k * k];
                for ky in 0..k {
                    let (y0, y1) = valid_range(ky, d, d.in_h, d.out_h);
                    for kx in 0..k {
                        let (x0, x1) = valid_range(kx, d, d.in_w, d.out_w);
                        let mut acc = T::zero();
                        for y in y0..y1 {
                            let iy = y * d.stride + ky - d.padding;
                            let row = &src[iy * d.in_w..][..d.in_w];
                            let grow = &g[y * d.out_w..][..d.out_w];
                            for x in x0..x1 {
                                acc += grow[x] * row[x * d.stride + kx - d.padding];
                            }
                        }
                        gk[ky * k + kx] += acc;
                    }
                }
            }
        }
    }
}

pub(crate) fn add_bias<T: Real>(out: &mut [T], bias: &[T], batch: usize, plane: usize) {
    let channels = bias.len();
    for b in 0..batch {
        for (c, &bv) in bias.iter().enumerate() {
            out[(b * channels + c) * plane..][..plane]
                .iter_mut()
                .for_each(|v| *v += bv);
        }
    }
}

pub(crate) fn bias_grad<T: Real>(grad_out: &[T], grad_bias: &mut [T], batch: usize, plane: usize) {
    let channels = grad_bias.len();
    for b in 0..batch {
        for (c, gb) in grad_bias.iter_mut().enumerate() {
            *gb += grad_out[(b * channels + c) * plane..][..plane]
                .iter()
                .copied()
                .sum::<T>();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dims(len: usize, out: usize, k: usize, s: usize, p: usize) -> ConvDims {
        ConvDims {
            batch: 1,
            in_c: 1,
            in_h: len,
            in_w: len,
            out_c: 1,
            out_h: out,
            out_w: out,
            kernel: k,
            stride: s,
            padding: p,
        }
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for &(len, k, s, p) in &[(8, 4, 2, 1), (8, 3, 1, 1), (16, 16, 8, 4), (3, 4, 2, 1), (1, 3, 1, 1)] {
            let out = (len + 2 * p - k) / s + 1;
            let d = dims(len, out, k, s, p);
            for tap in 0..k {
                let expect: Vec<usize> = (0..out)
                    .filter(|&o| {
                        let i = (o * s + tap) as isize - p as isize;
                        i >= 0 && (i as usize) < len
                    })
                    .collect();
                let (lo, hi) = valid_range(tap, &d, len, out);
                assert_eq!((lo..hi).collect::<Vec<_>>(), expect, "len={len} k={k} s={s} tap={tap}");
            }
        }
    }
}
