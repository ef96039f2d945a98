//! Image I/O, the degradation protocol, batching and the synthetic corpus.

mod batch;
mod degrade;
mod ppm;
mod synthetic;

pub use batch::{batch_iter, Batch, BatchIter};
pub use degrade::{
    box_downsample, degrade, format_scales, nearest_upsample, parse_scales, resize_bilinear,
    resize_to_scales, DegradeSpec, SamplePair, UpMethod, PAPER_SCALES,
};
pub use ppm::{decode_ppm, encode_ppm, load_image, save_image};
pub use synthetic::{make_synthetic_corpus, SYNTHETIC_HEIGHT, SYNTHETIC_WIDTH};

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Maps pixels from `[0, 255]` to `[-1, 1]`.
pub fn normalize<T: Real>(t: &Tensor<f32>) -> Tensor<T> {
    t.cast::<T>().map(|v| v / T::of(127.5) - T::one())
}

/// Maps `[-1, 1]` back to `[0, 255]`.
pub fn denormalize<T: Real>(t: &Tensor<T>) -> Tensor<f32> {
    t.map(|v| (v + T::one()) * T::of(127.5)).cast::<f32>()
}

/// Sorted `.ppm` paths directly inside `dir`.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "image directory {} does not exist",
            dir.display()
        )));
    }
    let mut paths = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let is_ppm = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
        if path.is_file() && is_ppm {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

/// Loads every image of one split (`train`, `val` or `test`) under `root`.
pub fn load_split(root: impl AsRef<Path>, split: &str) -> Result<Vec<Tensor<f32>>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::InvalidArgument(format!(
            "data root {} does not exist",
            root.display()
        )));
    }
    let images = list_images(root.join(split))?
        .iter()
        .map(load_image)
        .collect::<Result<Vec<_>>>()?;
    if images.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no .ppm images in {}",
            root.join(split).display()
        )));
    }
    Ok(images)
}

/// Resizes every clean image to every scale and corrupts it. Each image draws
/// its noise from its own stream derived from `spec.seed`, so the result does
/// not depend on how the work is scheduled.
pub fn build_pairs(clean: &[Tensor<f32>], spec: &DegradeSpec) -> Result<Vec<SamplePair>> {
    spec.validate()?;
    let mut pairs = Vec::with_capacity(clean.len() * spec.scales.len());
    for (i, img) in clean.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(i as u64);
        for resized in resize_to_scales(img, &spec.scales)? {
            pairs.push(degrade(&resized, spec, &mut rng)?);
        }
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn normalization_round_trip() {
        let t = Tensor::from_vec(Shape::new(1, 1, 1, 3), vec![0.0, 127.5, 255.0]).unwrap();
        let n: Tensor<f64> = normalize(&t);
        assert_eq!(n.data(), &[-1.0, 0.0, 1.0]);
        assert_eq!(denormalize(&n).data(), t.data());
    }

    #[test]
    fn pairs_cover_images_and_scales() {
        let clean = make_synthetic_corpus(2, 1);
        let spec = DegradeSpec {
            scales: vec![(32, 32), (48, 32)],
            ..DegradeSpec::default()
        };
        let pairs = build_pairs(&clean, &spec).unwrap();
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[1].scale_index, 1);
        assert_eq!(pairs[1].clean.shape(), pairs[1].corrupted.shape());
        assert_eq!(pairs, build_pairs(&clean, &spec).unwrap());
    }

    #[test]
    fn missing_root_rejected() {
        let err = load_split("/nonexistent/sgen", "test").unwrap_err();
        assert!(err.to_string().contains("does not exist"));
    }
}
