use editbench_core::metrics::{gmsd, mse, psnr, ssim, GrayImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{ensure, Verdict};

fn px(img: &GrayImage, x: usize, y: usize) -> f64 {
    img.data()[y * img.width() + x]
}

fn mse_loop(a: &GrayImage, b: &GrayImage) -> f64 {
    let mut sum = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            sum += (px(a, x, y) - px(b, x, y)).powi(2);
        }
    }
    sum / (a.width() * a.height()) as f64
}

/// 11x11 Gaussian window (sigma 1.5), statistics recomputed at every offset.
fn ssim_loop(a: &GrayImage, b: &GrayImage) -> f64 {
    const SIZE: usize = 11;
    let mut w = [[0.0f64; SIZE]; SIZE];
    let mut total = 0.0;
    for v in 0..SIZE {
        for u in 0..SIZE {
            let r2 = (u as f64 - 5.0).powi(2) + (v as f64 - 5.0).powi(2);
            w[v][u] = (-r2 / (2.0 * 1.5 * 1.5)).exp();
            total += w[v][u];
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (mut acc, mut count) = (0.0, 0);
    for oy in 0..=a.height() - SIZE {
        for ox in 0..=a.width() - SIZE {
            let (mut ma, mut mb) = (0.0, 0.0);
            for v in 0..SIZE {
                for u in 0..SIZE {
                    ma += w[v][u] / total * px(a, ox + u, oy + v);
                    mb += w[v][u] / total * px(b, ox + u, oy + v);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for v in 0..SIZE {
                for u in 0..SIZE {
                    let k = w[v][u] / total;
                    let da = px(a, ox + u, oy + v) - ma;
                    let db = px(b, ox + u, oy + v) - mb;
                    va += k * da * da;
                    vb += k * db * db;
                    cov += k * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    acc / count as f64
}

/// Prewitt magnitudes on the interior, similarity map, population std.
fn gmsd_loop(a: &GrayImage, b: &GrayImage) -> f64 {
    let magnitude = |img: &GrayImage, x: usize, y: usize| {
        let (mut gx, mut gy) = (0.0, 0.0);
        for k in 0..3 {
            gx += px(img, x + 1, y + k - 1) - px(img, x - 1, y + k - 1);
            gy += px(img, x + k - 1, y + 1) - px(img, x + k - 1, y - 1);
        }
        ((gx / 3.0).powi(2) + (gy / 3.0).powi(2)).sqrt()
    };
    let c = 170.0;
    let mut map = Vec::new();
    for y in 1..a.height() - 1 {
        for x in 1..a.width() - 1 {
            let (ma, mb) = (magnitude(a, x, y), magnitude(b, x, y));
            map.push((2.0 * ma * mb + c) / (ma * ma + mb * mb + c));
        }
    }
    let mean = map.iter().sum::<f64>() / map.len() as f64;
    (map.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / map.len() as f64).sqrt()
}

/// Noise, smooth texture, flat fields and ramps at assorted sizes.
fn corpus(rng: &mut ChaCha8Rng, n: usize) -> Vec<GrayImage> {
    (0..n)
        .map(|k| {
            let (w, h) = (rng.random_range(11..48), rng.random_range(11..48));
            let (fx, fy): (f64, f64) = (rng.random_range(0.1..0.9), rng.random_range(0.1..0.9));
            let level = rng.random_range(0.0..=255.0f64).round();
            let data = (0..w * h)
                .map(|i| {
                    let (x, y) = ((i % w) as f64, (i / w) as f64);
                    match k % 4 {
                        0 => rng.random_range(0..=255u8) as f64,
                        1 => (128.0 + 90.0 * (fx * x).sin() * (fy * y).cos()).round(),
                        2 => level,
                        _ => (255.0 * (x + y) / (w + h) as f64).round(),
                    }
                })
                .collect();
            GrayImage::new(w, h, data).unwrap()
        })
        .collect()
}

fn random16(rng: &mut ChaCha8Rng) -> GrayImage {
    GrayImage::new(16, 16, (0..256).map(|_| rng.random_range(0..=255u8) as f64).collect()).unwrap()
}

pub fn identities() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1234);
    let images = corpus(&mut rng, 50);
    for (k, a) in images.iter().enumerate() {
        let s = ssim(a, a).map_err(|e| e.to_string())?.value;
        ensure!((s - 1.0).abs() <= 1e-12, "image {k}: ssim(a,a) = {s}");
        let g = gmsd(a, a).map_err(|e| e.to_string())?.value;
        ensure!(g.abs() <= 1e-12, "image {k}: gmsd(a,a) = {g}");
        let p = psnr(a, a).map_err(|e| e.to_string())?;
        ensure!(p.is_infinite_sentinel(), "image {k}: psnr(a,a) = {}", p.value);
    }
    let pairs = 50;
    let mut worst: f64 = 0.0;
    for k in 0..pairs {
        let (a, b) = (random16(&mut rng), random16(&mut rng));
        for (name, got, want) in [
            ("mse", mse(&a, &b).unwrap().value, mse_loop(&a, &b)),
            ("ssim", ssim(&a, &b).unwrap().value, ssim_loop(&a, &b)),
            ("gmsd", gmsd(&a, &b).unwrap().value, gmsd_loop(&a, &b)),
        ] {
            let err = (got - want).abs();
            ensure!(err <= 1e-6, "pair {k}: {name} {got} vs pixel loop {want}");
            worst = worst.max(err);
        }
    }
    Ok(format!(
        "identities hold on {} images; mse/ssim/gmsd match pixel loops on {pairs} random 16x16 pairs (max error {worst:.1e})",
        images.len()
    ))
}
