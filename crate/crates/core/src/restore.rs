//! Inference: running a trained generator on `[0, 255]` images.

use crate::autodiff::Tape;
use crate::data::{denormalize, normalize};
use crate::error::Result;
use crate::model::{Generator, ParamStore};
use crate::tensor::{Shape, Tensor};

/// Restores `(n, 3, h, w)` pixels in `[0, 255]`. The spatial size must be a
/// multiple of the generator's divisor.
pub fn restore_image(gen: &Generator, params: &ParamStore<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let s = tape.constant(normalize::<f32>(image));
    let trace = gen.forward(&mut tape, s, &bound)?;
    Ok(denormalize(tape.value(trace.output)))
}

/// Like [`restore_image`], but accepts any size: the input is extended by
/// edge replication to the next valid size and the output cropped back.
pub fn restore_padded(gen: &Generator, params: &ParamStore<f32>, image: &Tensor<f32>) -> Result<Tensor<f32>> {
    let [_, _, h, w] = image.shape().0;
    let d = gen.divisor();
    let (ph, pw) = (h.div_ceil(d) * d, w.div_ceil(d) * d);
    if (ph, pw) == (h, w) {
        return restore_image(gen, params, image);
    }
    let padded = pad_edge(image, ph, pw);
    let out = restore_image(gen, params, &padded)?;
    Ok(crop(&out, h, w))
}

/// Extends the bottom and right borders by repeating the last row/column.
pub fn pad_edge(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let [n, c, h, w] = x.shape().0;
    let mut out = Tensor::zeros(Shape::new(n, c, out_h, out_w));
    for b in 0..n {
        for ch in 0..c {
            for y in 0..out_h {
                for xo in 0..out_w {
                    out.set(b, ch, y, xo, x.at(b, ch, y.min(h - 1), xo.min(w - 1)));
                }
            }
        }
    }
    out
}

/// Top-left `out_h × out_w` window.
pub fn crop(x: &Tensor<f32>, out_h: usize, out_w: usize) -> Tensor<f32> {
    let [n, c, _, _] = x.shape().0;
    let mut out = Tensor::zeros(Shape::new(n, c, out_h, out_w));
    for b in 0..n {
        for ch in 0..c {
            for y in 0..out_h {
                for xo in 0..out_w {
                    out.set(b, ch, y, xo, x.at(b, ch, y, xo));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::MergeMode;
    use crate::model::SgenConfig;

    #[test]
    fn zero_params_give_mid_gray() {
        let gen = Generator::new(&SgenConfig::tiny(2, 4, MergeMode::Sgu)).unwrap();
        let mut params = gen.init_params::<f32, _>(&mut rand::rng()).unwrap();
        params.map_values(|_| 0.0);
        let img = Tensor::full(Shape::new(1, 3, 16, 8), 200.0);
        let out = restore_image(&gen, &params, &img).unwrap();
        assert!(out.data().iter().all(|&v| v == 127.5));
        let odd = Tensor::full(Shape::new(1, 3, 20, 12), 200.0);
        assert!(restore_image(&gen, &params, &odd).is_err());
        assert_eq!(restore_padded(&gen, &params, &odd).unwrap().shape(), odd.shape());
    }

    #[test]
    fn pad_then_crop_is_identity() {
        let x = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = pad_edge(&x, 3, 4);
        assert_eq!(p.data(), &[1.0, 2.0, 2.0, 2.0, 3.0, 4.0, 4.0, 4.0, 3.0, 4.0, 4.0, 4.0]);
        assert_eq!(crop(&p, 2, 2), x);
    }
}
