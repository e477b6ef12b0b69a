//! Procedural datasets for desk-scale experiments and tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::LabeledImageDataset;
use crate::tensor::Tensor;

const RED: [f32; 3] = [0.85, 0.2, 0.2];
const GREEN: [f32; 3] = [0.2, 0.8, 0.25];
const BLUE: [f32; 3] = [0.2, 0.3, 0.9];
const YELLOW: [f32; 3] = [0.9, 0.85, 0.2];
const CYAN: [f32; 3] = [0.2, 0.85, 0.85];

/// Object colours of each class of [`structured_dataset`]. Every colour is
/// shared by two classes, so a class is only identified by the pair.
pub const CLASS_PALETTES: [[[f32; 3]; 2]; 3] = [[RED, GREEN], [GREEN, BLUE], [BLUE, RED]];
const DISTRACTORS: [[f32; 3]; 2] = [YELLOW, CYAN];

fn paint(img: &mut [f32], size: usize, color: [f32; 3], jitter: f32, inside: impl Fn(f32, f32) -> bool) {
    for y in 0..size {
        for x in 0..size {
            if inside(x as f32 + 0.5, y as f32 + 0.5) {
                for (c, &v) in color.iter().enumerate() {
                    img[(c * size + y) * size + x] = (v + jitter).clamp(0.0, 1.0);
                }
            }
        }
    }
}

fn object<R: Rng + ?Sized>(img: &mut [f32], size: usize, color: [f32; 3], rng: &mut R) {
    let s = size as f32;
    let r = rng.random_range(s / 7.0..s / 4.5);
    let cx = rng.random_range(r..s - r);
    let cy = rng.random_range(r..s - r);
    let jitter = rng.random_range(-0.08f32..0.08);
    if rng.random_bool(0.5) {
        paint(img, size, color, jitter, |x, y| (x - cx).powi(2) + (y - cy).powi(2) <= r * r);
    } else {
        paint(img, size, color, jitter, |x, y| (x - cx).abs() <= r * 0.85 && (y - cy).abs() <= r * 0.85);
    }
}

fn background<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Vec<f32> {
    let base = rng.random_range(0.3f32..0.6);
    let gx = rng.random_range(-0.15f32..0.15);
    let gy = rng.random_range(-0.15f32..0.15);
    let mut img = vec![0.0; 3 * size * size];
    for c in 0..3 {
        let tint = rng.random_range(-0.05f32..0.05);
        for y in 0..size {
            for x in 0..size {
                let u = x as f32 / size as f32 - 0.5;
                let v = y as f32 / size as f32 - 0.5;
                img[(c * size + y) * size + x] = base + tint + gx * u + gy * v;
            }
        }
    }
    img
}

fn add_noise<R: Rng + ?Sized>(img: &mut [f32], std: f32, rng: &mut R) {
    let n = Normal::new(0.0f32, std).expect("valid std");
    for v in img.iter_mut() {
        *v = (*v + n.sample(rng)).clamp(0.0, 1.0);
    }
}

/// Three classes of RGB `size x size` images. Each image shows the two
/// objects of its class palette and one distractor object at random,
/// non-grid-aligned positions on a noisy gradient background.
pub fn structured_dataset(per_class: usize, size: usize, seed: u64) -> LabeledImageDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(3 * per_class * 3 * size * size);
    let mut labels = Vec::with_capacity(3 * per_class);
    for i in 0..3 * per_class {
        let label = i % 3;
        let mut img = background(size, &mut rng);
        let distractor = DISTRACTORS[rng.random_range(0..DISTRACTORS.len())];
        let mut colors = vec![CLASS_PALETTES[label][0], CLASS_PALETTES[label][1], distractor];
        // Paint order decides occlusion.
        for k in (1..colors.len()).rev() {
            colors.swap(k, rng.random_range(0..=k));
        }
        for c in colors {
            object(&mut img, size, c, &mut rng);
        }
        add_noise(&mut img, 0.04, &mut rng);
        data.extend(img);
        labels.push(label);
    }
    LabeledImageDataset::new(
        "structured",
        Tensor::from_vec(&[3 * per_class, 3, size, size], data).expect("consistent shape"),
        labels,
        3,
    )
    .expect("valid labels")
}

/// `classes` flat colours plus Gaussian noise.
pub fn flat_color_dataset(classes: usize, per_class: usize, size: usize, seed: u64) -> LabeledImageDataset {
    let palette = [RED, BLUE, GREEN, YELLOW, CYAN];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for i in 0..classes * per_class {
        let label = i % classes;
        let color = palette[label % palette.len()];
        let mut img: Vec<f32> = color.iter().flat_map(|&v| std::iter::repeat_n(v, size * size)).collect();
        add_noise(&mut img, 0.05, &mut rng);
        data.extend(img);
        labels.push(label);
    }
    LabeledImageDataset::new(
        "flat-color",
        Tensor::from_vec(&[classes * per_class, 3, size, size], data).expect("consistent shape"),
        labels,
        classes,
    )
    .expect("valid labels")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn structured_dataset_is_balanced_and_deterministic() {
        let a = structured_dataset(4, 32, 9);
        assert_eq!(a.len(), 12);
        assert!(a.class_indices().iter().all(|c| c.len() == 4));
        assert_eq!(a, structured_dataset(4, 32, 9));
        assert_ne!(a, structured_dataset(4, 32, 10));
        assert!(a.images().data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn flat_colour_classes_differ() {
        let d = flat_color_dataset(2, 3, 8, 0);
        let m0: f32 = d.image(0)[..64].iter().sum::<f32>() / 64.0;
        let m1: f32 = d.image(1)[..64].iter().sum::<f32>() / 64.0;
        assert!(m0 > 0.7 && m1 < 0.35, "{m0} {m1}");
    }
}
