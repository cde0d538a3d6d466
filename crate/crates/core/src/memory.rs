//! Hierarchical prototype memory.
//!
//! A bank stores only part-level prototypes; instance and semantic levels are
//! derived on the fly as scaled block means. Queries address a level with
//! softmax over cosine similarities and read back a convex combination of
//! its rows. Rows are ordered by nesting (class, semantic, instance, part),
//! bank-major, so a contiguous block of `P` part rows forms one instance and
//! a block of `I` instance rows forms one semantic prototype.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Graph, Tensor};

#[allow(unused_imports)]
use crate::float::FloatExt;

/// Hierarchy configuration: prototype counts per level, channel width and
/// modality bank count.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryConfig {
    /// Part prototypes per instance (P).
    pub parts: usize,
    /// Instances per semantic prototype (I).
    pub instances: usize,
    /// Semantic prototypes per class (S).
    pub semantics: usize,
    /// Class count (N_c).
    pub classes: usize,
    /// Channel dimension (C).
    pub channels: usize,
    /// Modality bank count (B).
    pub banks: usize,
    /// Summarization weight applied by block means.
    pub alpha: f64,
}

impl Default for MemoryConfig {
    fn default() -> Self {
        MemoryConfig {
            parts: 2,
            instances: 2,
            semantics: 1,
            classes: 1,
            channels: 8,
            banks: 2,
            alpha: 1.0,
        }
    }
}

impl MemoryConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("parts", self.parts),
            ("instances", self.instances),
            ("semantics", self.semantics),
            ("classes", self.classes),
            ("channels", self.channels),
            ("banks", self.banks),
        ] {
            if v == 0 {
                return Err(Error::Config(alloc::format!("memory {name} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Part rows per bank.
    pub fn n_part(&self) -> usize {
        self.parts * self.instances * self.semantics * self.classes
    }

    /// Instance rows per bank.
    pub fn n_instance(&self) -> usize {
        self.instances * self.semantics * self.classes
    }

    /// Semantic rows per bank.
    pub fn n_semantic(&self) -> usize {
        self.semantics * self.classes
    }

    /// Total stored part rows across all banks.
    pub fn part_rows(&self) -> usize {
        self.banks * self.n_part()
    }
}

/// Learnable prototype storage: the part-level metric for all banks,
/// `(B * N_part) x C`, bank-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    pub config: MemoryConfig,
    pub part_metric: Vec<f64>,
}

/// Seeded bank: rows drawn uniformly from `[-1, 1]` then unit-normalized, so
/// cosine addressing is well defined from the first step.
pub fn init_bank(config: &MemoryConfig, seed: u64) -> Result<PrototypeBank> {
    config.validate()?;
    let rows = config.part_rows();
    let c = config.channels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut part_metric = alloc::vec![0.0; rows * c];
    for r in 0..rows {
        let row = &mut part_metric[r * c..(r + 1) * c];
        loop {
            for v in row.iter_mut() {
                *v = rng.random::<f64>() * 2.0 - 1.0;
            }
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for v in row.iter_mut() {
                    *v /= norm;
                }
                break;
            }
        }
    }
    Ok(PrototypeBank {
        config: config.clone(),
        part_metric,
    })
}

fn check_rows_nonzero(t: &Tensor) -> Result<()> {
    let c = t.shape()[t.shape().len() - 1];
    for (r, row) in t.values().chunks(c).enumerate() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-12 {
            return Err(Error::DegenerateInput { row: r });
        }
    }
    Ok(())
}

/// Addressing weights: softmax over cosine similarities of each query row
/// against every prototype row. Rejects zero-norm rows on either side.
pub fn address(queries: &Tensor, metric: &Tensor) -> Result<Tensor> {
    check_rows_nonzero(queries)?;
    check_rows_nonzero(metric)?;
    address_lenient(queries, metric)
}

/// Addressing without the zero-norm precondition: a zero row produces zero
/// similarities, i.e. uniform weights. Used inside the network, where ReLU
/// features can legitimately vanish at a pixel.
pub fn address_lenient(queries: &Tensor, metric: &Tensor) -> Result<Tensor> {
    let cos = ops::cosine_matrix(queries, metric)?;
    ops::softmax(&cos, 1)
}

/// Weighted read: each output row is the convex combination of prototype
/// rows under its addressing weights.
pub fn read(weights: &Tensor, metric: &Tensor) -> Result<Tensor> {
    ops::matmul(weights, metric)
}

/// Derive one hierarchy level from the one below it as scaled block means.
pub fn summarize(lower_metric: &Tensor, block: usize, alpha: f64) -> Result<Tensor> {
    ops::block_mean_rows(lower_metric, block, alpha)
}

/// Outputs of the three-level read chain, one row per query.
pub struct HierarchicalRead {
    pub part: Tensor,
    pub instance: Tensor,
    pub semantic: Tensor,
}

/// Chain reads through part, instance and semantic levels. All banks are
/// addressed as one concatenated pool per level; instance queries are the
/// part-level read outputs, semantic queries the instance-level outputs.
pub fn hierarchical_read(
    queries: &Tensor,
    part_metric: &Tensor,
    config: &MemoryConfig,
) -> Result<HierarchicalRead> {
    hierarchical_read_impl(queries, part_metric, config, true)
}

/// [`hierarchical_read`] without the zero-norm query precondition.
pub fn hierarchical_read_lenient(
    queries: &Tensor,
    part_metric: &Tensor,
    config: &MemoryConfig,
) -> Result<HierarchicalRead> {
    hierarchical_read_impl(queries, part_metric, config, false)
}

fn hierarchical_read_impl(
    queries: &Tensor,
    part_metric: &Tensor,
    config: &MemoryConfig,
    strict: bool,
) -> Result<HierarchicalRead> {
    config.validate()?;
    let expect_rows = config.part_rows();
    let ok = matches!(
        (queries.shape(), part_metric.shape()),
        (&[_, qc], &[rows, mc]) if qc == config.channels && mc == config.channels && rows == expect_rows
    );
    if !ok {
        return Err(Error::DimMismatch {
            op: "hierarchical_read",
            lhs: queries.shape().to_vec(),
            rhs: part_metric.shape().to_vec(),
        });
    }

    let instance_metric = summarize(part_metric, config.parts, config.alpha)?;
    let semantic_metric = summarize(&instance_metric, config.instances, config.alpha)?;

    let addr = |q: &Tensor, m: &Tensor| -> Result<Tensor> {
        if strict {
            address(q, m)
        } else {
            address_lenient(q, m)
        }
    };

    let part = read(&addr(queries, part_metric)?, part_metric)?;
    let instance = read(&addr(&part, &instance_metric)?, &instance_metric)?;
    let semantic = read(&addr(&instance, &semantic_metric)?, &semantic_metric)?;
    Ok(HierarchicalRead {
        part,
        instance,
        semantic,
    })
}

/// Bind a bank's stored metric as a differentiable leaf on `graph`.
pub fn bind_metric(graph: &Graph, bank: &PrototypeBank) -> Tensor {
    graph.leaf(
        &[bank.config.part_rows(), bank.config.channels],
        bank.part_metric.clone(),
    )
}
