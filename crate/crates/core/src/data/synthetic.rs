//! Procedural face-like test images: a background gradient, a skin-tone
//! ellipse, two eyes and a mouth arc, with per-image random jitter.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::{Shape, Tensor};

pub const SYNTHETIC_HEIGHT: usize = 128;
pub const SYNTHETIC_WIDTH: usize = 96;

struct Face {
    top: [f64; 3],
    bottom: [f64; 3],
    skin: [f64; 3],
    centre: (f64, f64),
    radii: (f64, f64),
    eye_dy: f64,
    eye_dx: f64,
    eye_r: f64,
    mouth_dy: f64,
    mouth_r: f64,
}

impl Face {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let mut colour = |lo: f64, hi: f64| -> [f64; 3] {
            [
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
                rng.random_range(lo..hi),
            ]
        };
        let top = colour(20.0, 235.0);
        let bottom = colour(20.0, 235.0);
        let tone = rng.random_range(0.0..1.0);
        let skin = [
            150.0 + 90.0 * tone,
            110.0 + 80.0 * tone,
            80.0 + 70.0 * tone,
        ];
        let h = SYNTHETIC_HEIGHT as f64;
        let w = SYNTHETIC_WIDTH as f64;
        Face {
            top,
            bottom,
            skin,
            centre: (
                h * rng.random_range(0.45..0.55),
                w * rng.random_range(0.45..0.55),
            ),
            radii: (h * rng.random_range(0.30..0.38), w * rng.random_range(0.30..0.40)),
            eye_dy: h * rng.random_range(0.08..0.12),
            eye_dx: w * rng.random_range(0.12..0.17),
            eye_r: rng.random_range(3.0..5.0),
            mouth_dy: h * rng.random_range(0.12..0.17),
            mouth_r: w * rng.random_range(0.10..0.16),
        }
    }

    fn pixel(&self, y: f64, x: f64) -> [f64; 3] {
        let t = y / (SYNTHETIC_HEIGHT - 1) as f64;
        let mut px = [0.0; 3];
        for c in 0..3 {
            px[c] = self.top[c] * (1.0 - t) + self.bottom[c] * t;
        }
        let (cy, cx) = self.centre;
        let (ry, rx) = self.radii;
        let e = ((y - cy) / ry).powi(2) + ((x - cx) / rx).powi(2);
        if e <= 1.0 {
            // Slight shading towards the rim.
            let shade = 1.0 - 0.15 * e;
            for c in 0..3 {
                px[c] = self.skin[c] * shade;
            }
            let eye_y = cy - self.eye_dy;
            for side in [-1.0, 1.0] {
                let d = ((y - eye_y).powi(2) + (x - cx - side * self.eye_dx).powi(2)).sqrt();
                if d <= self.eye_r {
                    px = [30.0, 25.0, 20.0];
                }
            }
            // Lower half of a circle centred above the mouth line.
            let my = cy + self.mouth_dy - self.mouth_r * 0.5;
            let d = ((y - my).powi(2) + (x - cx).powi(2)).sqrt();
            if y > my && (d - self.mouth_r).abs() <= 1.5 {
                px = [170.0, 40.0, 50.0];
            }
        }
        px.map(|v| v.clamp(0.0, 255.0))
    }

    fn render(&self) -> Tensor<f32> {
        let (h, w) = (SYNTHETIC_HEIGHT, SYNTHETIC_WIDTH);
        let mut t = Tensor::zeros(Shape::new(1, 3, h, w));
        for y in 0..h {
            for x in 0..w {
                let px = self.pixel(y as f64, x as f64);
                for (c, v) in px.iter().enumerate() {
                    t.set(0, c, y, x, *v as f32);
                }
            }
        }
        t
    }
}

/// `count` deterministic 128x96 images with values in `[0, 255]`.
pub fn make_synthetic_corpus(count: usize, seed: u64) -> Vec<Tensor<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| Face::random(&mut rng).render()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = make_synthetic_corpus(3, 7);
        assert_eq!(a, make_synthetic_corpus(3, 7));
        assert_ne!(a, make_synthetic_corpus(3, 8));
        for img in &a {
            assert_eq!(img.shape(), Shape::new(1, 3, 128, 96));
            assert!(img.data().iter().all(|&v| (0.0..=255.0).contains(&v)));
        }
    }

    #[test]
    fn images_are_not_flat() {
        for img in make_synthetic_corpus(64, 3) {
            let n = img.numel() as f64;
            let mean = img.data().iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = img.data().iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            assert!(var > 10.0, "variance {var}");
        }
    }
}
