//! Image quality metrics on plain f64 planes: PSNR, windowed SSIM, and RMSE
//! in CIELAB. Pixel values are expected in `[0, 1]` (peak 1) unless a peak is
//! passed explicitly.

use alloc::vec::Vec;

use crate::error::{Error, Result};

#[allow(unused_imports)]
use crate::float::FloatExt;

/// PSNR cap reported when the images are identical (zero MSE).
pub const PSNR_CAP_DB: f64 = 99.0;

/// SSIM sliding-window side length.
pub const SSIM_WINDOW: usize = 8;

fn check_len(op: &'static str, x: &[f64], y: &[f64]) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch {
            op,
            lhs: alloc::vec![x.len()],
            rhs: alloc::vec![y.len()],
        });
    }
    Ok(())
}

/// `10 * log10(peak^2 / MSE)`, capped at [`PSNR_CAP_DB`] for zero MSE.
pub fn psnr(x: &[f64], y: &[f64], peak: f64) -> Result<f64> {
    check_len("psnr", x, y)?;
    let mse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean local SSIM over all 8x8 windows (stride 1, uniform weighting),
/// with `C1 = (0.01*peak)^2`, `C2 = (0.03*peak)^2`.
///
/// Multi-channel input is averaged to a single plane first.
pub fn ssim(x: &[f64], y: &[f64], channels: usize, height: usize, width: usize) -> Result<f64> {
    check_len("ssim", x, y)?;
    if channels == 0 || x.len() != channels * height * width {
        return Err(Error::Usage(alloc::format!(
            "ssim: {} values do not match {channels}x{height}x{width}",
            x.len()
        )));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::Usage(alloc::format!(
            "ssim requires extents >= {SSIM_WINDOW}, got {height}x{width}"
        )));
    }
    let plane = height * width;
    let collapse = |img: &[f64]| -> Vec<f64> {
        let mut out = alloc::vec![0.0; plane];
        for c in 0..channels {
            for p in 0..plane {
                out[p] += img[c * plane + p] / channels as f64;
            }
        }
        out
    };
    let xp = collapse(x);
    let yp = collapse(y);

    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(height - SSIM_WINDOW) {
        for wx in 0..=(width - SSIM_WINDOW) {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let row = (wy + dy) * width + wx;
                for dx in 0..SSIM_WINDOW {
                    let a = xp[row + dx];
                    let b = yp[row + dx];
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let mx = sx / n;
            let my = sy / n;
            let vx = sxx / n - mx * mx;
            let vy = syy / n - my * my;
            let cov = sxy / n - mx * my;
            let s = ((2.0 * mx * my + C1) * (2.0 * cov + C2))
                / ((mx * mx + my * my + C1) * (vx + vy + C2));
            total += s;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// sRGB `[0,1]` to CIELAB (D65 reference white), one pixel.
pub fn srgb_to_lab(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    fn linearize(v: f64) -> f64 {
        if v <= 0.04045 {
            v / 12.92
        } else {
            ((v + 0.055) / 1.055).powf(2.4)
        }
    }
    let rl = linearize(r);
    let gl = linearize(g);
    let bl = linearize(b);
    // sRGB D65 matrix
    let x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
    let y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
    let z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
    const XN: f64 = 0.95047;
    const YN: f64 = 1.0;
    const ZN: f64 = 1.08883;
    fn f(t: f64) -> f64 {
        const DELTA: f64 = 6.0 / 29.0;
        if t > DELTA * DELTA * DELTA {
            t.cbrt()
        } else {
            t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
        }
    }
    let fx = f(x / XN);
    let fy = f(y / YN);
    let fz = f(z / ZN);
    (116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz))
}

/// Convert a 3-channel planar image to per-pixel LAB triples.
pub fn rgb_to_lab(img: &[f64], height: usize, width: usize) -> Result<Vec<(f64, f64, f64)>> {
    let plane = height * width;
    if img.len() != 3 * plane {
        return Err(Error::Usage(alloc::format!(
            "rgb_to_lab requires a 3-channel image, got {} values for {height}x{width}",
            img.len()
        )));
    }
    Ok((0..plane)
        .map(|p| srgb_to_lab(img[p], img[plane + p], img[2 * plane + p]))
        .collect())
}

/// RMSE over LAB triples. With a mask, also returns the split over masked
/// (mask = 1) and unmasked pixels as `(masked, unmasked)`.
pub fn rmse_lab(
    x: &[f64],
    y: &[f64],
    height: usize,
    width: usize,
    mask: Option<&[f64]>,
) -> Result<(f64, Option<(f64, f64)>)> {
    check_len("rmse_lab", x, y)?;
    let lx = rgb_to_lab(x, height, width)?;
    let ly = rgb_to_lab(y, height, width)?;
    let sq = |a: (f64, f64, f64), b: (f64, f64, f64)| -> f64 {
        let d0 = a.0 - b.0;
        let d1 = a.1 - b.1;
        let d2 = a.2 - b.2;
        d0 * d0 + d1 * d1 + d2 * d2
    };
    let rms = |sum: f64, n: usize| -> f64 {
        if n == 0 {
            0.0
        } else {
            (sum / (3 * n) as f64).sqrt()
        }
    };
    let total: f64 = lx.iter().zip(&ly).map(|(&a, &b)| sq(a, b)).sum();
    let overall = rms(total, lx.len());
    let split = match mask {
        None => None,
        Some(m) => {
            if m.len() != lx.len() {
                return Err(Error::DimMismatch {
                    op: "rmse_lab",
                    lhs: alloc::vec![lx.len()],
                    rhs: alloc::vec![m.len()],
                });
            }
            let (mut s_in, mut n_in, mut s_out, mut n_out) = (0.0, 0usize, 0.0, 0usize);
            for ((&a, &b), &mv) in lx.iter().zip(&ly).zip(m) {
                if mv >= 0.5 {
                    s_in += sq(a, b);
                    n_in += 1;
                } else {
                    s_out += sq(a, b);
                    n_out += 1;
                }
            }
            Some((rms(s_in, n_in), rms(s_out, n_out)))
        }
    };
    Ok((overall, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_identity_hits_cap() {
        let x = alloc::vec![0.5; 16];
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), PSNR_CAP_DB);
    }

    #[test]
    fn psnr_full_scale_error_is_zero_db() {
        let x = alloc::vec![1.0; 8];
        let y = alloc::vec![0.0; 8];
        assert!((psnr(&x, &y, 1.0).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn psnr_uniform_tenth_is_twenty_db() {
        let x = alloc::vec![0.5; 32];
        let y = alloc::vec![0.6; 32];
        assert!((psnr(&x, &y, 1.0).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let x = alloc::vec![0.5; 64];
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.05, 0.1, 0.2] {
            let y: Vec<f64> = x.iter().map(|v| v + amp).collect();
            let p = psnr(&x, &y, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_is_one() {
        let x: Vec<f64> = (0..100).map(|i| (i % 13) as f64 / 13.0).collect();
        let s = ssim(&x, &x, 1, 10, 10).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ssim_constants_closed_form() {
        let x = alloc::vec![0.0; 64];
        let y = alloc::vec![1.0; 64];
        let s = ssim(&x, &y, 1, 8, 8).unwrap();
        let c1 = 0.01 * 0.01;
        assert!((s - c1 / (1.0 + c1)).abs() < 1e-12);
        assert!((s - 9.999e-5).abs() < 1e-7);
    }

    #[test]
    fn ssim_is_symmetric() {
        let x: Vec<f64> = (0..81).map(|i| (i as f64 * 0.71).sin().abs()).collect();
        let y: Vec<f64> = (0..81).map(|i| (i as f64 * 0.37).cos().abs()).collect();
        let a = ssim(&x, &y, 1, 9, 9).unwrap();
        let b = ssim(&y, &x, 1, 9, 9).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let x = alloc::vec![0.0; 16];
        assert!(matches!(ssim(&x, &x, 1, 4, 4), Err(Error::Usage(_))));
    }

    #[test]
    fn lab_anchor_colors() {
        let (l, a, b) = srgb_to_lab(1.0, 1.0, 1.0);
        assert!((l - 100.0).abs() < 0.01 && a.abs() < 0.01 && b.abs() < 0.01);
        let (l, a, b) = srgb_to_lab(0.0, 0.0, 0.0);
        assert!(l.abs() < 1e-9 && a.abs() < 1e-9 && b.abs() < 1e-9);
        let (l, a, b) = srgb_to_lab(1.0, 0.0, 0.0);
        assert!((l - 53.24).abs() < 0.05, "L {l}");
        assert!((a - 80.09).abs() < 0.05, "a {a}");
        assert!((b - 67.20).abs() < 0.05, "b {b}");
    }

    #[test]
    fn rmse_lab_all_ones_mask_equals_overall() {
        let x: Vec<f64> = (0..12).map(|i| i as f64 / 12.0).collect();
        let y: Vec<f64> = (0..12).map(|i| (11 - i) as f64 / 12.0).collect();
        let mask = alloc::vec![1.0; 4];
        let (overall, split) = rmse_lab(&x, &y, 2, 2, Some(&mask)).unwrap();
        let (masked, unmasked) = split.unwrap();
        assert!((overall - masked).abs() < 1e-12);
        assert_eq!(unmasked, 0.0);
    }

    #[test]
    fn rmse_lab_rejects_single_channel() {
        let x = alloc::vec![0.0; 4];
        assert!(rgb_to_lab(&x, 2, 2).is_err());
    }
}
