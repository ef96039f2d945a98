//! Round-trip and metric properties over random inputs.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use sgen::config::RunConfig;
use sgen::data::{batch_iter, decode_ppm, encode_ppm, SamplePair};
use sgen::ensemble::MergeMode;
use sgen::metrics::{psnr, ssim};
use sgen::model::{read_checkpoint, write_checkpoint, ParamStore};
use sgen::{Shape, Tensor};

fn image(h: usize, w: usize, bytes: &[u8]) -> Tensor<f32> {
    let data = bytes.iter().cycle().take(3 * h * w).map(|&b| b as f32).collect();
    Tensor::from_vec(Shape::new(1, 3, h, w), data).unwrap()
}

fn noisy(base: &Tensor<f32>, amp: f32, seed: u64) -> Tensor<f32> {
    let noise = Tensor::<f32>::rand_uniform(base.shape(), -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = base.clone();
    for (v, n) in out.data_mut().iter_mut().zip(noise.data()) {
        *v = (*v + amp * n).clamp(0.0, 255.0);
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ppm_round_trip(h in 1usize..20, w in 1usize..20, bytes in prop::collection::vec(any::<u8>(), 1..64)) {
        let img = image(h, w, &bytes);
        let encoded = encode_ppm(&img).unwrap();
        let decoded = decode_ppm(&encoded).unwrap();
        prop_assert_eq!(&decoded, &img);
        prop_assert_eq!(encode_ppm(&decoded).unwrap(), encoded);
    }

    #[test]
    fn checkpoint_round_trip(
        dims in prop::collection::vec((1usize..4, 1usize..4, 1usize..5, 1usize..5), 1..6),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::<f32>::new();
        for (i, &(n, c, h, w)) in dims.iter().enumerate() {
            store.insert(format!("layer.{i}.weight"), Tensor::randn(Shape::new(n, c, h, w), 3.0, &mut rng)).unwrap();
        }
        let mut bytes = Vec::new();
        write_checkpoint(&store, &mut bytes).unwrap();
        let back = read_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.fingerprint(), store.fingerprint());
        for ((na, a), (nb, b)) in store.iter().zip(back.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(a, b);
        }
        let cut = bytes.len() - 1 - (seed as usize % bytes.len().min(12));
        prop_assert!(read_checkpoint(&bytes[..cut]).is_err());
    }

    #[test]
    fn config_round_trip(
        n in 2usize..5,
        width in 1usize..64,
        mode in 0usize..4,
        lr in 1e-6f64..1e-1,
        steps in 0usize..100_000,
        seed in any::<u64>(),
        gan in 0usize..3,
    ) {
        let mut cfg = RunConfig::default();
        cfg.model.n_levels = n;
        cfg.model.base_channels = width;
        cfg.model.merge_mode = MergeMode::ALL[mode];
        cfg.model.learning_rate = lr;
        cfg.model.gan_loss = [None, Some("minimax".parse().unwrap()), Some("nonsaturating".parse().unwrap())][gan];
        cfg.steps = steps;
        cfg.seed = seed;
        let text = cfg.serialize();
        let back = RunConfig::parse(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.serialize(), text);
    }

    #[test]
    fn psnr_ssim_symmetric_and_bounded(h in 11usize..24, w in 11usize..24, bytes in prop::collection::vec(any::<u8>(), 8..64), amp in 1.0f32..80.0, seed in any::<u64>()) {
        let a = image(h, w, &bytes);
        let b = noisy(&a, amp, seed);
        prop_assume!(a != b);
        let p_ab = psnr(&a, &b, 255.0).unwrap();
        let p_ba = psnr(&b, &a, 255.0).unwrap();
        prop_assert_eq!(p_ab, p_ba);
        prop_assert!(p_ab.is_finite() && p_ab >= 0.0);
        let s_ab = ssim(&a, &b).unwrap();
        let s_ba = ssim(&b, &a).unwrap();
        prop_assert!((s_ab - s_ba).abs() < 1e-12);
        prop_assert!(s_ab <= 1.0 + 1e-12 && s_ab >= -1.0);
    }

    #[test]
    fn psnr_falls_as_noise_grows(scale in 1.5f32..4.0, seed in any::<u64>()) {
        let a = Tensor::full(Shape::new(1, 3, 16, 16), 128.0f32);
        let small = noisy(&a, 5.0, seed);
        let large = noisy(&a, 5.0 * scale, seed);
        prop_assert!(psnr(&a, &small, 255.0).unwrap() > psnr(&a, &large, 255.0).unwrap());
    }

    #[test]
    fn batches_cover_every_pair_once(
        sizes in prop::collection::vec(prop::sample::select(vec![(16usize, 16usize), (16, 24), (24, 16)]), 1..20),
        batch_size in 1usize..6,
        seed in any::<u64>(),
    ) {
        let pairs: Vec<SamplePair> = sizes
            .iter()
            .enumerate()
            .map(|(i, &(h, w))| {
                let t = Tensor::full(Shape::new(1, 3, h, w), i as f32);
                SamplePair { clean: t.clone(), corrupted: t, scale_index: 0 }
            })
            .collect();
        let mut seen = vec![0usize; pairs.len()];
        for batch in batch_iter::<f32>(&pairs, batch_size, seed).unwrap() {
            let batch = batch.unwrap();
            prop_assert!(!batch.indices.is_empty() && batch.indices.len() <= batch_size);
            let (h, w) = (batch.s.shape().h(), batch.s.shape().w());
            for &i in &batch.indices {
                prop_assert_eq!(sizes[i], (h, w));
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }
}

#[test]
fn ssim_below_one_after_shift() {
    let mut a = Tensor::zeros(Shape::new(1, 3, 24, 24));
    for c in 0..3 {
        for y in 0..24 {
            for x in 0..24 {
                a.set(0, c, y, x, ((x * 37 + y * 11 + c * 5) % 256) as f32);
            }
        }
    }
    let mut shifted = a.clone();
    for c in 0..3 {
        for y in 0..24 {
            for x in 0..24 {
                shifted.set(0, c, y, x, a.at(0, c, y, (x + 1) % 24));
            }
        }
    }
    assert!(ssim(&a, &shifted).unwrap() < 1.0);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);
}
