//! Synthetic paired degradations: multiplicative polygon shadows with a soft
//! penumbra, additive rain streaks, and Gaussian blur. All generators are
//! pure functions of their inputs and seed.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};
use crate::image::{Image, SamplePair};
use crate::pnm;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    Shadow,
    Rain,
    Blur,
}

impl std::str::FromStr for Kind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Kind> {
        match s {
            "shadow" => Ok(Kind::Shadow),
            "rain" => Ok(Kind::Rain),
            "blur" => Ok(Kind::Blur),
            other => Err(CliError::Usage(format!(
                "unknown degradation kind {other:?} (expected shadow, rain or blur)"
            ))),
        }
    }
}

/// Smooth bright color field: a per-channel base tone plus a few soft
/// radial bumps and a gentle gradient. Values stay well above zero so that
/// multiplicative shadows remain visible everywhere.
pub fn clean_image(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; 3 * height * width];
    let base: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..0.85)).collect();
    let (gx, gy): (f64, f64) = (
        rng.random_range(-0.1..0.1),
        rng.random_range(-0.1..0.1),
    );
    struct Bump {
        cx: f64,
        cy: f64,
        r: f64,
        amp: [f64; 3],
    }
    let bumps: Vec<Bump> = (0..rng.random_range(2..=4))
        .map(|_| Bump {
            cx: rng.random_range(0.0..width as f64),
            cy: rng.random_range(0.0..height as f64),
            r: rng.random_range(0.15..0.45) * width.max(height) as f64,
            amp: [
                rng.random_range(-0.18..0.18),
                rng.random_range(-0.18..0.18),
                rng.random_range(-0.18..0.18),
            ],
        })
        .collect();
    let plane = height * width;
    for y in 0..height {
        for x in 0..width {
            let fx = x as f64 / width.max(1) as f64;
            let fy = y as f64 / height.max(1) as f64;
            for c in 0..3 {
                let mut v = base[c] + gx * fx + gy * fy;
                for b in &bumps {
                    let dx = x as f64 - b.cx;
                    let dy = y as f64 - b.cy;
                    v += b.amp[c] * (-(dx * dx + dy * dy) / (b.r * b.r)).exp();
                }
                data[c * plane + y * width + x] = v.clamp(0.3, 1.0);
            }
        }
    }
    Image::new(3, height, width, data).unwrap()
}

fn shoelace_area(polygon: &[(f64, f64)]) -> f64 {
    let n = polygon.len();
    let mut twice = 0.0;
    for i in 0..n {
        let (x0, y0) = polygon[i];
        let (x1, y1) = polygon[(i + 1) % n];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}

/// Even-odd crossing test.
fn point_in_polygon(px: f64, py: f64, polygon: &[(f64, f64)]) -> bool {
    let n = polygon.len();
    let mut inside = false;
    for i in 0..n {
        let (x0, y0) = polygon[i];
        let (x1, y1) = polygon[(i + 1) % n];
        if (y0 > py) != (y1 > py) {
            let cross_x = x0 + (py - y0) / (y1 - y0) * (x1 - x0);
            if px < cross_x {
                inside = !inside;
            }
        }
    }
    inside
}

fn distance_to_boundary(px: f64, py: f64, polygon: &[(f64, f64)]) -> f64 {
    let n = polygon.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        let (x0, y0) = polygon[i];
        let (x1, y1) = polygon[(i + 1) % n];
        let (ex, ey) = (x1 - x0, y1 - y0);
        let len2 = ex * ex + ey * ey;
        let t = if len2 == 0.0 {
            0.0
        } else {
            (((px - x0) * ex + (py - y0) * ey) / len2).clamp(0.0, 1.0)
        };
        let (dx, dy) = (px - (x0 + t * ex), py - (y0 + t * ey));
        best = best.min((dx * dx + dy * dy).sqrt());
    }
    best
}

/// Multiplicative polygon shadow. Interior pixels more than 2 px from the
/// boundary are multiplied by exactly `attenuation`; a linear penumbra ramps
/// the factor up to ~1 at the boundary. The mask is the hard rasterization.
pub fn synth_shadow(
    clean: &Image,
    polygon: &[(f64, f64)],
    attenuation: f64,
) -> Result<SamplePair> {
    if polygon.len() < 3 {
        return Err(CliError::Generation(format!(
            "polygon needs at least 3 vertices, got {}",
            polygon.len()
        )));
    }
    if !(attenuation > 0.0 && attenuation <= 1.0) {
        return Err(CliError::Generation(format!(
            "attenuation must lie in (0, 1], got {attenuation}"
        )));
    }
    if shoelace_area(polygon) < 1e-9 {
        return Err(CliError::Generation("degenerate polygon: zero area".into()));
    }
    let (h, w) = (clean.height, clean.width);
    let mut degraded = clean.clone();
    let mut mask = Image::filled(1, h, w, 0.0);
    for y in 0..h {
        for x in 0..w {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if point_in_polygon(px, py, polygon) {
                mask.set(0, y, x, 1.0);
                let d = distance_to_boundary(px, py, polygon);
                // linear ramp over the first 2 px inside the boundary
                let factor = 1.0 - (1.0 - attenuation) * (d / 2.0).min(1.0);
                for c in 0..clean.channels {
                    degraded.set(c, y, x, clean.get(c, y, x) * factor);
                }
            }
        }
    }
    Ok(SamplePair {
        degraded,
        clean: clean.clone(),
        mask: Some(mask),
    })
}

/// Additive bright streaks at a shared angle; clipped at 1. Deterministic
/// per seed; the mask marks every touched pixel.
pub fn synth_rain(
    clean: &Image,
    streak_count: usize,
    angle_deg: f64,
    intensity: f64,
    seed: u64,
) -> Result<SamplePair> {
    if !(intensity > 0.0 && intensity <= 1.0) {
        return Err(CliError::Generation(format!(
            "intensity must lie in (0, 1], got {intensity}"
        )));
    }
    let (h, w) = (clean.height, clean.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut degraded = clean.clone();
    let mut mask = Image::filled(1, h, w, 0.0);
    let (dy, dx) = {
        let a = angle_deg * PI / 180.0;
        (a.cos(), a.sin())
    };
    for _ in 0..streak_count {
        let x0 = rng.random_range(0.0..w as f64);
        let y0 = rng.random_range(0.0..h as f64);
        let len = rng.random_range(0.15..0.4) * h.max(4) as f64;
        let amp = intensity * rng.random_range(0.5..1.0);
        let steps = (len * 2.0).ceil() as usize;
        for s in 0..=steps {
            let t = s as f64 / 2.0;
            let (px, py) = (x0 + t * dx, y0 + t * dy);
            let (xi, yi) = (px.floor() as isize, py.floor() as isize);
            if xi < 0 || yi < 0 || xi >= w as isize || yi >= h as isize {
                continue;
            }
            let (xi, yi) = (xi as usize, yi as usize);
            // fade toward the streak tail
            let a = amp * (1.0 - t / len.max(1.0)).max(0.2);
            mask.set(0, yi, xi, 1.0);
            for c in 0..clean.channels {
                degraded.set(c, yi, xi, degraded.get(c, yi, xi) + a);
            }
        }
    }
    Ok(SamplePair {
        degraded,
        clean: clean.clone(),
        mask: Some(mask),
    })
}

/// Normalized Gaussian kernel, unit sum.
fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let mut k = vec![0.0; size * size];
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - half, y as f64 - half);
            k[y * size + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Gaussian blur with replicate padding; the mask is all-ones (the whole
/// image is degraded).
pub fn synth_blur(clean: &Image, kernel_size: usize, sigma: f64) -> Result<SamplePair> {
    if kernel_size % 2 == 0 || kernel_size == 0 {
        return Err(CliError::Config(format!(
            "blur kernel size must be odd, got {kernel_size}"
        )));
    }
    if sigma <= 0.0 {
        return Err(CliError::Config(format!("sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(kernel_size, sigma);
    let half = (kernel_size / 2) as isize;
    let (h, w) = (clean.height as isize, clean.width as isize);
    let mut degraded = clean.clone();
    for c in 0..clean.channels {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for u in -half..=half {
                    for v in -half..=half {
                        let sy = (y + u).clamp(0, h - 1) as usize;
                        let sx = (x + v).clamp(0, w - 1) as usize;
                        let kw = kernel[((u + half) * kernel_size as isize + v + half) as usize];
                        acc += kw * clean.get(c, sy, sx);
                    }
                }
                degraded.set(c, y as usize, x as usize, acc);
            }
        }
    }
    Ok(SamplePair {
        degraded,
        clean: clean.clone(),
        mask: Some(Image::filled(1, clean.height, clean.width, 1.0)),
    })
}

/// Irregular star-convex polygon covering a substantial image region.
pub fn random_polygon(rng: &mut ChaCha8Rng, height: usize, width: usize) -> Vec<(f64, f64)> {
    let cx = rng.random_range(0.25..0.75) * width as f64;
    let cy = rng.random_range(0.25..0.75) * height as f64;
    let r = rng.random_range(0.2..0.4) * width.min(height) as f64;
    let k = rng.random_range(3..=7usize);
    (0..k)
        .map(|i| {
            let angle = 2.0 * PI * (i as f64 + rng.random_range(0.0..0.6)) / k as f64;
            let ri = r * rng.random_range(0.6..1.0);
            (cx + ri * angle.cos(), cy + ri * angle.sin())
        })
        .collect()
}

/// One seeded pair of the given kind.
pub fn make_pair(kind: Kind, height: usize, width: usize, seed: u64) -> Result<SamplePair> {
    let clean = clean_image(height, width, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7061_6972);
    match kind {
        Kind::Shadow => {
            let polygon = random_polygon(&mut rng, height, width);
            let attenuation = rng.random_range(0.35..0.6);
            synth_shadow(&clean, &polygon, attenuation)
        }
        Kind::Rain => {
            let count = rng.random_range(8..=16usize);
            let angle = rng.random_range(-20.0..20.0);
            synth_rain(&clean, count, angle, 0.6, seed ^ 0x7261_696e)
        }
        Kind::Blur => synth_blur(&clean, 5, rng.random_range(1.0..2.0)),
    }
}

/// Write `count` pairs as `<id>_in.ppm` / `<id>_gt.ppm` / `<id>_mask.pgm`.
pub fn generate_dataset(
    kind: Kind,
    count: usize,
    height: usize,
    width: usize,
    seed: u64,
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    for i in 0..count {
        let pair = make_pair(kind, height, width, seed.wrapping_add(i as u64))?;
        pnm::save_pnm(&pair.degraded, out_dir.join(format!("{i:04}_in.ppm")))?;
        pnm::save_pnm(&pair.clean, out_dir.join(format!("{i:04}_gt.ppm")))?;
        if let Some(mask) = &pair.mask {
            pnm::save_pnm(mask, out_dir.join(format!("{i:04}_mask.pgm")))?;
        }
    }
    Ok(())
}
