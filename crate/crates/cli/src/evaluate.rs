//! Metrics reporting over a dataset, the four-way ablation runner, and
//! feature-map dumps around the memory read.

use std::fmt::Write as _;
use std::path::Path;

use memnet_core::network::StageNetwork;
use memnet_core::{metrics, Tensor};

use crate::config::FullConfig;
use crate::error::{CliError, Result};
use crate::image::{Image, SamplePair};
use crate::pnm;
use crate::trainer::{self, bind_frozen};

#[derive(Clone, Debug)]
pub struct SampleMetrics {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub rmse_lab: f64,
    /// Degraded-region / rest split, present when the sample has a mask.
    pub rmse_split: Option<(f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub rows: Vec<SampleMetrics>,
    pub mean: SampleMetrics,
}

fn mean_of(rows: &[SampleMetrics]) -> SampleMetrics {
    let n = rows.len() as f64;
    let masked: Vec<&(f64, f64)> = rows.iter().filter_map(|r| r.rmse_split.as_ref()).collect();
    let split = if masked.len() == rows.len() && !masked.is_empty() {
        let m = masked.len() as f64;
        Some((
            masked.iter().map(|s| s.0).sum::<f64>() / m,
            masked.iter().map(|s| s.1).sum::<f64>() / m,
        ))
    } else {
        None
    };
    SampleMetrics {
        id: "mean".into(),
        psnr: rows.iter().map(|r| r.psnr).sum::<f64>() / n,
        ssim: rows.iter().map(|r| r.ssim).sum::<f64>() / n,
        rmse_lab: rows.iter().map(|r| r.rmse_lab).sum::<f64>() / n,
        rmse_split: split,
    }
}

/// Run the network over every pair and aggregate PSNR, SSIM and LAB RMSE
/// (with degraded-region splits where masks exist).
pub fn evaluate(net: &StageNetwork, pairs: &[(String, SamplePair)]) -> Result<MetricsReport> {
    if pairs.is_empty() {
        return Err(CliError::Usage("nothing to evaluate".into()));
    }
    let bound = bind_frozen(net);
    let mut rows = Vec::with_capacity(pairs.len());
    for (id, pair) in pairs {
        let out = net.forward(&bound, &pair.degraded.to_tensor())?;
        let restored = Image::from_tensor(&out.estimates[2])?;
        rows.push(compare(id, &restored, pair)?);
    }
    let mean = mean_of(&rows);
    Ok(MetricsReport { rows, mean })
}

/// Metrics of an arbitrary restoration against the pair's clean image.
pub fn compare(id: &str, restored: &Image, pair: &SamplePair) -> Result<SampleMetrics> {
    let clean = &pair.clean;
    let psnr = metrics::psnr(restored.values(), clean.values(), 1.0)?;
    let ssim = metrics::ssim(
        restored.values(),
        clean.values(),
        clean.channels,
        clean.height,
        clean.width,
    )?;
    let mask_plane: Option<Vec<f64>> = pair.mask.as_ref().map(|m| m.values().to_vec());
    let (rmse, split) = metrics::rmse_lab(
        restored.values(),
        clean.values(),
        clean.height,
        clean.width,
        mask_plane.as_deref(),
    )?;
    Ok(SampleMetrics {
        id: id.to_string(),
        psnr,
        ssim,
        rmse_lab: rmse,
        rmse_split: split,
    })
}

pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut out = String::from("id,psnr,ssim,rmse_lab,rmse_shadow,rmse_nonshadow\n");
    let mut line = |r: &SampleMetrics| {
        let (s, n) = match r.rmse_split {
            Some((s, n)) => (format!("{s:.6}"), format!("{n:.6}")),
            None => (String::new(), String::new()),
        };
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{s},{n}",
            r.id, r.psnr, r.ssim, r.rmse_lab
        )
        .unwrap();
    };
    for row in &report.rows {
        line(row);
    }
    line(&report.mean);
    out
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub label: &'static str,
    pub memory: bool,
    pub contrast: bool,
    pub psnr: f64,
    pub ssim: f64,
    pub rmse_lab: f64,
}

/// Train the four switch combinations with a shared seed and evaluate each
/// on the same held-out pairs.
pub fn ablate(
    base: &FullConfig,
    train_pairs: &[SamplePair],
    test_pairs: &[(String, SamplePair)],
) -> Result<Vec<AblationRow>> {
    let combos = [
        ("baseline", false, false),
        ("memory", true, false),
        ("contrast", false, true),
        ("memory+contrast", true, true),
    ];
    let mut rows = Vec::with_capacity(combos.len());
    for (label, memory, contrast) in combos {
        let mut cfg = base.clone();
        cfg.net.memory_enabled = memory;
        cfg.loss.enable_memory = memory;
        cfg.loss.enable_contrast = contrast;
        let outcome = trainer::train(&cfg, train_pairs, &[], None)?;
        let report = evaluate(&outcome.state.net, test_pairs)?;
        rows.push(AblationRow {
            label,
            memory,
            contrast,
            psnr: report.mean.psnr,
            ssim: report.mean.ssim,
            rmse_lab: report.mean.rmse_lab,
        });
    }
    Ok(rows)
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = String::from("label,memory,contrast,psnr,ssim,rmse_lab\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6}",
            r.label, r.memory, r.contrast, r.psnr, r.ssim, r.rmse_lab
        )
        .unwrap();
    }
    out
}

/// Tile a `[c, h, w]` feature tensor into one horizontal grayscale strip,
/// normalizing each tile's min to 0 and max to 255 (flat tiles become 0).
fn mosaic(features: &Tensor) -> Result<Image> {
    let &[c, h, w] = features.shape() else {
        return Err(CliError::Usage(format!(
            "expected [c, h, w] features, got {:?}",
            features.shape()
        )));
    };
    let sep = 1usize;
    let out_w = c * w + (c - 1) * sep;
    let mut data = vec![0.0; h * out_w];
    for tile in 0..c {
        let plane = &features.values()[tile * h * w..(tile + 1) * h * w];
        let lo = plane.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = plane.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = hi - lo;
        for y in 0..h {
            for x in 0..w {
                let v = if range > 0.0 {
                    (plane[y * w + x] - lo) / range
                } else {
                    0.0
                };
                data[y * out_w + tile * (w + sep) + x] = v;
            }
        }
    }
    Image::new(1, h, out_w, data)
}

/// Write `features_pre.pgm` / `features_post.pgm`: the stage-1 shallow
/// features before and after the residual memory read.
pub fn dump_features(net: &StageNetwork, img: &Image, out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    let bound = bind_frozen(net);
    let out = net.forward(&bound, &img.to_tensor())?;
    pnm::save_pnm(&mosaic(&out.pre_memory)?, out_dir.join("features_pre.pgm"))?;
    pnm::save_pnm(&mosaic(&out.post_memory)?, out_dir.join("features_post.pgm"))?;
    Ok(())
}
