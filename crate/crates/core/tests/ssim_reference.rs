//! SSIM against an independent direct-summation reference.
//!
//! The reference recomputes every window statistic with explicit nested
//! loops over a 2D Gaussian kernel, with no separable passes and no shared
//! code paths, and the two must agree to 1e-6 on all pairs of
//! a fixed 20-image 16x16 set.

use chatvis_core::metrics::{ssim, ImageBuffer};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

fn kernel_2d() -> Vec<f64> {
    let mut k = vec![0.0; WINDOW * WINDOW];
    let c = (WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let v = (-(dx * dx + dy * dy) / (2.0 * SIGMA * SIGMA)).exp();
            k[y * WINDOW + x] = v;
            sum += v;
        }
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Direct-summation single-scale SSIM on grayscale bytes.
fn ssim_reference(a: &[u8], b: &[u8], w: usize, h: usize) -> f64 {
    let kernel = kernel_2d();
    let c1 = (0.01_f64 * 255.0).powi(2);
    let c2 = (0.03_f64 * 255.0).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(h - WINDOW) {
        for wx in 0..=(w - WINDOW) {
            let (mut mx, mut my) = (0.0, 0.0);
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for ky in 0..WINDOW {
                for kx in 0..WINDOW {
                    let weight = kernel[ky * WINDOW + kx];
                    let pa = a[(wy + ky) * w + wx + kx] as f64;
                    let pb = b[(wy + ky) * w + wx + kx] as f64;
                    mx += weight * pa;
                    my += weight * pb;
                    sxx += weight * pa * pa;
                    syy += weight * pb * pb;
                    sxy += weight * pa * pb;
                }
            }
            let var_x = sxx - mx * mx;
            let var_y = syy - my * my;
            let cov = sxy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
            count += 1;
        }
    }
    total / count as f64
}

fn fixture_images() -> Vec<Vec<u8>> {
    let mut rng = ChaCha8Rng::seed_from_u64(201_616);
    let mut images = Vec::new();
    // A few structured planes plus random noise, 16x16 each.
    for i in 0..20u32 {
        let mut data = vec![0u8; 256];
        match i % 4 {
            0 => {
                for (p, v) in data.iter_mut().enumerate() {
                    *v = ((p % 16) * 16) as u8;
                }
            }
            1 => {
                for (p, v) in data.iter_mut().enumerate() {
                    *v = if (p / 16 + p % 16) % 2 == 0 { 40 } else { 200 };
                }
            }
            2 => {
                for v in data.iter_mut() {
                    *v = rng.gen();
                }
            }
            _ => {
                let base: u8 = rng.gen();
                for (p, v) in data.iter_mut().enumerate() {
                    *v = base.wrapping_add((p / 16) as u8 * 3);
                }
            }
        }
        images.push(data);
    }
    images
}

#[test]
fn ssim_matches_direct_summation_reference_on_all_pairs() {
    let images = fixture_images();
    let buffers: Vec<ImageBuffer> = images
        .iter()
        .map(|d| ImageBuffer::new(16, 16, 1, d.clone()).unwrap())
        .collect();

    let mut checked = 0usize;
    for i in 0..images.len() {
        for j in i..images.len() {
            let fast = ssim(&buffers[i], &buffers[j]).unwrap();
            let reference = ssim_reference(&images[i], &images[j], 16, 16);
            assert!(
                (fast - reference).abs() < 1e-6,
                "pair ({i},{j}): {fast} vs reference {reference}"
            );
            checked += 1;
        }
    }
    assert_eq!(checked, 20 * 21 / 2);
}
