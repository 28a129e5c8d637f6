use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::{Attribute, AttributeSchema, ImageDataset, TabularDataset};
use crate::seed;

/// P(sensitive == y) in the synthetic tabular generator.
pub const SENSITIVE_AGREEMENT: f64 = 0.85;
/// P(corr_k == y) for the two correlated attributes.
pub const CORRELATED_AGREEMENT: f64 = 0.7;
const NOISE_ATTRIBUTES: usize = 6;

/// Binary tabular data with planted signal.
///
/// Per record, in this draw order: `y ~ Bernoulli(0.5)`; `sensitive = y` with
/// probability 0.85, else `1 - y`; `corr_1`, `corr_2` each equal `y` with
/// probability 0.7; `noise_1..noise_6` uniform. Column order in the schema is
/// `noise_1..noise_6, corr_1, corr_2, sensitive`.
pub fn synth_tabular(n: usize, seed: u64) -> TabularDataset {
    let mut attributes: Vec<Attribute> =
        (1..=NOISE_ATTRIBUTES).map(|i| Attribute::categorical(&format!("noise_{i}"), &["0", "1"], false)).collect();
    attributes.push(Attribute::categorical("corr_1", &["0", "1"], false));
    attributes.push(Attribute::categorical("corr_2", &["0", "1"], false));
    attributes.push(Attribute::categorical("sensitive", &["0", "1"], true));
    let schema = Arc::new(AttributeSchema::new(attributes, "y", 2).expect("static schema is valid"));

    let mut rng = seed::rng_from_seed(seed);
    let mut records = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    let agree = |rng: &mut seed::Rng, y: usize, p: f64| if rng.random_bool(p) { y } else { 1 - y };
    for _ in 0..n {
        let y = rng.random_range(0..2usize);
        let s = agree(&mut rng, y, SENSITIVE_AGREEMENT);
        let c1 = agree(&mut rng, y, CORRELATED_AGREEMENT);
        let c2 = agree(&mut rng, y, CORRELATED_AGREEMENT);
        let mut record: Vec<usize> = (0..NOISE_ATTRIBUTES).map(|_| rng.random_range(0..2usize)).collect();
        record.extend([c1, c2, s]);
        records.push(record);
        labels.push(y);
    }
    TabularDataset::new(schema, records, labels).expect("generated indices are in range")
}

/// Per-pixel Gaussian noise standard deviation in the synthetic images.
const PIXEL_NOISE: f64 = 0.004;

/// Grayscale images; label `i % 2` for image `i`.
///
/// Every image gets a smooth background (offset plus two low-frequency
/// cosines with random phase and direction) and mild Gaussian pixel noise.
/// Class-1 images add one soft-edged bright ellipse with random center, axes,
/// rotation and intensity. Values are clipped to `[0, 1]`.
pub fn synth_images(n: usize, side: usize, seed: u64) -> ImageDataset {
    assert!(side % 8 == 0 && side > 0, "image side must be a positive multiple of 8");
    let mut rng = seed::rng_from_seed(seed);
    let s = side as f64;
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let offset = rng.random_range(0.25..0.45);
        let waves: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                let theta = rng.random_range(0.0..PI);
                let freq = rng.random_range(0.5..1.5);
                let phase = rng.random_range(0.0..2.0 * PI);
                let amp = rng.random_range(0.05..0.12);
                (theta, freq, phase, amp)
            })
            .collect();
        let ellipse = (label == 1).then(|| {
            let cx = rng.random_range(0.25 * s..0.75 * s);
            let cy = rng.random_range(0.25 * s..0.75 * s);
            let a = rng.random_range(s / 10.0..s / 4.0);
            let b = rng.random_range(s / 10.0..s / 4.0);
            let rot = rng.random_range(0.0..PI);
            let intensity = rng.random_range(0.3..0.5);
            (cx, cy, a, b, rot, intensity)
        });
        let mut img = Vec::with_capacity(side * side);
        for y in 0..side {
            for x in 0..side {
                let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
                let mut v = offset;
                for &(theta, freq, phase, amp) in &waves {
                    let t = (fx * theta.cos() + fy * theta.sin()) / s;
                    v += amp * (2.0 * PI * freq * t + phase).cos();
                }
                if let Some((cx, cy, a, b, rot, intensity)) = ellipse {
                    let (dx, dy) = (fx - cx, fy - cy);
                    let u = (dx * rot.cos() + dy * rot.sin()) / a;
                    let w = (-dx * rot.sin() + dy * rot.cos()) / b;
                    let r = (u * u + w * w).sqrt();
                    // linear falloff over roughly one pixel at the rim
                    let edge = ((1.0 - r) * a.min(b) + 0.5).clamp(0.0, 1.0);
                    v += intensity * edge;
                }
                let noise: f64 = rng.sample(StandardNormal);
                img.push((v + PIXEL_NOISE * noise).clamp(0.0, 1.0));
            }
        }
        images.push(img);
        labels.push(label);
    }
    ImageDataset::new(side, images, labels).expect("generated pixels are clipped")
}
