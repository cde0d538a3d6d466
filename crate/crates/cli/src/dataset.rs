//! Loading paired datasets from a directory of netpbm files and iterating
//! them in seeded, reproducible batches.
//!
//! Directory convention: `<id>_in.ppm` (degraded), `<id>_gt.ppm` (clean),
//! optional `<id>_mask.pgm`.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};
use crate::image::SamplePair;
use crate::pnm;

pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<SamplePair>> {
    Ok(load_dir_named(dir)?.into_iter().map(|(_, p)| p).collect())
}

/// Like [`load_dir`], keeping each sample's `<id>` prefix. `mask_dir`
/// overrides where `<id>_mask.pgm` files are looked up.
pub fn load_dir_named(dir: impl AsRef<Path>) -> Result<Vec<(String, SamplePair)>> {
    load_dir_with_masks(dir.as_ref(), None)
}

pub fn load_dir_with_masks(
    dir: &Path,
    mask_dir: Option<&Path>,
) -> Result<Vec<(String, SamplePair)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut ids: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix("_in.ppm") {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    let mut pairs = Vec::with_capacity(ids.len());
    for id in &ids {
        let degraded = pnm::load_pnm(dir.join(format!("{id}_in.ppm")))?;
        let clean = pnm::load_pnm(dir.join(format!("{id}_gt.ppm")))?;
        let mask_path = mask_dir.unwrap_or(dir).join(format!("{id}_mask.pgm"));
        let mask = if mask_path.exists() {
            let mut m = pnm::load_pnm(&mask_path)?;
            // binarize: stored masks are 8-bit 0/255
            for v in m.values_mut() {
                *v = if *v >= 0.5 { 1.0 } else { 0.0 };
            }
            Some(m)
        } else {
            None
        };
        let pair = SamplePair {
            degraded,
            clean,
            mask,
        };
        pair.validate()?;
        pairs.push((id.clone(), pair));
    }
    if pairs.is_empty() {
        return Err(CliError::Usage(format!(
            "no samples found in {} (expected <id>_in.ppm / <id>_gt.ppm files)",
            dir.display()
        )));
    }
    Ok(pairs)
}

/// Index batches for one epoch: a seeded permutation (or the identity when
/// `shuffle` is off) chunked by `batch`; the final short batch is kept.
pub fn epoch_batches(
    len: usize,
    batch: usize,
    seed: u64,
    epoch: u64,
    shuffle: bool,
) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(CliError::Usage("empty dataset".into()));
    }
    if batch == 0 {
        return Err(CliError::Usage("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if shuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        // Fisher-Yates
        for i in (1..len).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
    }
    Ok(order.chunks(batch).map(|c| c.to_vec()).collect())
}
