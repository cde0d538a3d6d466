//! Loss stack: Charbonnier, edge (Laplacian Charbonnier), memory
//! reconstruction, a triplet-style contrastive ratio, and the total
//! multi-stage objective.

use crate::error::{Error, Result};
use crate::network::{Bound, ForwardPass, StageNetwork};
use crate::ops;
use crate::tensor::Tensor;

#[allow(unused_imports)]
use crate::float::FloatExt;

#[derive(Debug, Clone, PartialEq)]
pub struct LossConfig {
    /// Charbonnier constant.
    pub epsilon: f64,
    /// Weight of the edge term in the total loss.
    pub lambda_edge: f64,
    /// Weight of the contrastive term in the total loss.
    pub lambda_contrast: f64,
    /// Denominator guard of the contrastive ratio.
    pub contrast_eps: f64,
    pub enable_contrast: bool,
    pub enable_memory: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            epsilon: 1e-3,
            lambda_edge: 0.05,
            lambda_contrast: 0.1,
            contrast_eps: 1e-6,
            enable_contrast: true,
            enable_memory: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if self.lambda_edge < 0.0 || self.lambda_contrast < 0.0 {
            return Err(Error::Config("lambda weights must be >= 0".into()));
        }
        Ok(())
    }
}

/// `sqrt(||x - y||^2 + eps^2)` with the global L2 norm over all elements.
/// Smooth everywhere, including `x == y` where it equals `eps`.
pub fn charbonnier(x: &Tensor, y: &Tensor, eps: f64) -> Result<Tensor> {
    let d = ops::sub(x, y)?;
    let sumsq = ops::sum(&ops::mul(&d, &d)?);
    Ok(ops::sqrt(&ops::add_scalar(&sumsq, eps * eps)))
}

/// Charbonnier penalty on the Laplacian-filtered difference; invariant to
/// adding the same constant to both images.
pub fn edge_loss(x: &Tensor, y: &Tensor, eps: f64) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(Error::DimMismatch {
            op: "edge_loss",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    charbonnier(&ops::laplacian(x)?, &ops::laplacian(y)?, eps)
}

/// `||R - clean||_2` where `R` is the stage-1 memory-augmented
/// autoencoding of the clean image.
pub fn recon_loss(net: &StageNetwork, bound: &Bound, clean: &Tensor) -> Result<Tensor> {
    let r = net.reconstruct(bound, clean)?;
    Ok(ops::l2_norm(&ops::sub(&r, clean)?))
}

/// Parameter-free pyramid embedding: channel planes pooled at three
/// successive 2x scales, compared by mean absolute difference.
fn pyramid_distance(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut pa = a.clone();
    let mut pb = b.clone();
    let mut terms = alloc::vec::Vec::with_capacity(3);
    let mut total = 0usize;
    for _ in 0..3 {
        pa = ops::avg_pool2(&pa)?;
        pb = ops::avg_pool2(&pb)?;
        terms.push(ops::sum(&ops::abs(&ops::sub(&pa, &pb)?)));
        total += pa.numel();
    }
    let mut s = Tensor::scalar(0.0);
    for t in &terms {
        s = ops::add(&s, t)?;
    }
    Ok(ops::scale(&s, 1.0 / total as f64))
}

/// Ratio loss `d(phi(anchor), phi(positive)) / (d(phi(anchor),
/// phi(negative)) + guard)`: decreases as the anchor approaches the positive
/// and departs the negative.
pub fn contrastive_loss(
    anchor: &Tensor,
    positive: &Tensor,
    negative: &Tensor,
    cfg: &LossConfig,
) -> Result<Tensor> {
    if anchor.shape() != positive.shape() || anchor.shape() != negative.shape() {
        return Err(Error::DimMismatch {
            op: "contrastive_loss",
            lhs: anchor.shape().to_vec(),
            rhs: positive.shape().to_vec(),
        });
    }
    let dp = pyramid_distance(anchor, positive)?;
    let dn = pyramid_distance(anchor, negative)?;
    ops::div(&dp, &ops::add_scalar(&dn, cfg.contrast_eps))
}

/// Per-term breakdown of the total objective.
pub struct LossTerms {
    pub total: Tensor,
    pub charbonnier: f64,
    pub edge: f64,
    pub recon: f64,
    pub contrast: f64,
}

/// Sum over stages of Charbonnier + weighted edge loss, plus the memory
/// reconstruction term and the weighted contrastive term when enabled.
pub fn total_loss(
    net: &StageNetwork,
    bound: &Bound,
    outputs: &ForwardPass,
    clean: &Tensor,
    degraded: &Tensor,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    cfg.validate()?;
    let mut total = Tensor::scalar(0.0);
    let mut char_sum = 0.0;
    let mut edge_sum = 0.0;
    for est in &outputs.estimates {
        let c = charbonnier(est, clean, cfg.epsilon)?;
        let e = edge_loss(est, clean, cfg.epsilon)?;
        char_sum += c.item();
        edge_sum += e.item();
        total = ops::add(&total, &c)?;
        total = ops::add(&total, &ops::scale(&e, cfg.lambda_edge))?;
    }
    let mut recon = 0.0;
    if cfg.enable_memory {
        let r = recon_loss(net, bound, clean)?;
        recon = r.item();
        total = ops::add(&total, &r)?;
    }
    let mut contrast = 0.0;
    if cfg.enable_contrast {
        let c = contrastive_loss(&outputs.estimates[2], clean, degraded, cfg)?;
        contrast = c.item();
        total = ops::add(&total, &ops::scale(&c, cfg.lambda_contrast))?;
    }
    Ok(LossTerms {
        total,
        charbonnier: char_sum,
        edge: edge_sum,
        recon,
        contrast,
    })
}
