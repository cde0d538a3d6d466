//! The finite-difference verification suite behind `memnet gradcheck`:
//! every differentiable operation, every loss, and the full network
//! objective per parameter group.

use std::collections::BTreeMap;

use memnet_core::gradcheck::{grad_check, DEFAULT_STEP};
use memnet_core::memory::{self, MemoryConfig};
use memnet_core::network::{NetConfig, StageNetwork};
use memnet_core::objective::{self, LossConfig};
use memnet_core::ops::{self, Padding};
use memnet_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-4;

pub struct CheckResult {
    pub name: String,
    pub error: f64,
    pub pass: bool,
}

fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// Runs the whole suite, pushing one result per check. Returns true when
/// everything passed.
pub fn run(results: &mut Vec<CheckResult>) -> bool {
    let mut check = |name: &str,
                     shape: &[usize],
                     x: &[f64],
                     f: &dyn Fn(&Graph, &Tensor) -> memnet_core::Result<Tensor>| {
        let error = grad_check(f, shape, x, DEFAULT_STEP).expect("grad_check setup");
        results.push(CheckResult {
            name: name.to_string(),
            error,
            pass: error <= TOLERANCE,
        });
    };

    let x12 = rand_vec(12, 1);
    let c12 = Tensor::from_vec(&[12], rand_vec(12, 2));
    check("add", &[12], &x12, &|_, t| Ok(ops::sum(&ops::add(t, &c12)?)));
    check("mul", &[12], &x12, &|_, t| Ok(ops::sum(&ops::mul(t, &c12)?)));
    check("sigmoid", &[12], &x12, &|_, t| Ok(ops::sum(&ops::sigmoid(t))));
    let shifted: Vec<f64> = x12.iter().map(|v| v + 2.0 * v.signum()).collect();
    check("relu", &[12], &shifted, &|_, t| Ok(ops::sum(&ops::relu(t))));
    check("l2_norm", &[12], &x12, &|_, t| Ok(ops::l2_norm(t)));

    let w34 = Tensor::from_vec(&[3, 4], rand_vec(12, 3));
    check("softmax", &[3, 4], &rand_vec(12, 4), &|_, t| {
        Ok(ops::sum(&ops::mul(&ops::softmax(t, 1)?, &w34)?))
    });
    let b34 = Tensor::from_vec(&[3, 4], rand_vec(12, 5));
    check("matmul", &[2, 3], &rand_vec(6, 6), &|_, t| {
        let y = ops::matmul(t, &b34)?;
        Ok(ops::sum(&ops::mul(&y, &y)?))
    });

    let k = Tensor::from_vec(&[3, 2, 3, 3], rand_vec(54, 7));
    for (label, padding) in [("conv2d zero", Padding::Zero), ("conv2d replicate", Padding::Replicate)] {
        check(label, &[2, 6, 6], &rand_vec(72, 8), &|_, t| {
            let y = ops::conv2d(t, &k, padding)?;
            Ok(ops::sum(&ops::mul(&y, &y)?))
        });
    }
    check("avg_pool2", &[2, 6, 6], &rand_vec(72, 9), &|_, t| {
        let y = ops::avg_pool2(t)?;
        Ok(ops::sum(&ops::mul(&y, &y)?))
    });
    check("upsample2", &[2, 3, 3], &rand_vec(18, 10), &|_, t| {
        let y = ops::upsample2(t)?;
        Ok(ops::sum(&ops::mul(&y, &y)?))
    });
    check("laplacian", &[2, 6, 6], &rand_vec(72, 11), &|_, t| {
        let y = ops::laplacian(t)?;
        Ok(ops::sum(&ops::mul(&y, &y)?))
    });

    let mem_cfg = MemoryConfig {
        parts: 2,
        instances: 2,
        semantics: 1,
        classes: 1,
        channels: 4,
        banks: 2,
        alpha: 1.0,
    };
    let bank = memory::init_bank(&mem_cfg, 17).expect("bank init");
    let metric = Tensor::from_vec(&[mem_cfg.part_rows(), 4], bank.part_metric.clone());
    check("memory read", &[3, 4], &rand_vec(12, 18), &|_, t| {
        let r = memory::hierarchical_read(t, &metric, &mem_cfg)?;
        Ok(ops::sum(&ops::mul(&r.semantic, &r.semantic)?))
    });

    let lcfg = LossConfig::default();
    let y_img = Tensor::from_vec(&[3, 8, 8], rand_vec(192, 20));
    check("charbonnier", &[3, 8, 8], &rand_vec(192, 21), &|_, t| {
        objective::charbonnier(t, &y_img, lcfg.epsilon)
    });
    check("edge_loss", &[3, 8, 8], &rand_vec(192, 22), &|_, t| {
        objective::edge_loss(t, &y_img, lcfg.epsilon)
    });
    let pos = Tensor::from_vec(&[3, 8, 8], rand_vec(192, 23));
    let neg = Tensor::from_vec(&[3, 8, 8], rand_vec(192, 24));
    check("contrastive_loss", &[3, 8, 8], &rand_vec(192, 25), &|_, t| {
        objective::contrastive_loss(t, &pos, &neg, &lcfg)
    });

    // full network objective, per parameter group
    let mut net = StageNetwork::new(
        NetConfig {
            base_channels: 4,
            depth: 2,
            memory: mem_cfg,
            memory_enabled: true,
        },
        30,
    )
    .expect("network init");
    // nudge zero-initialized heads off the contrastive kink (at exact init
    // the estimate equals the input)
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for param in net.params.values_mut() {
        if param.values.iter().all(|&v| v == 0.0) {
            for v in &mut param.values {
                *v = (rng.random::<f64>() * 2.0 - 1.0) * 0.05;
            }
        }
    }
    let clean = Tensor::from_vec(&[3, 8, 8], rand_vec(192, 31).iter().map(|v| v.abs()).collect());
    let degraded =
        Tensor::from_vec(&[3, 8, 8], rand_vec(192, 32).iter().map(|v| v.abs()).collect());
    let param_groups: Vec<(String, Vec<usize>, Vec<f64>)> = net
        .params
        .iter()
        .map(|(n, p)| (n.clone(), p.shape.clone(), p.values.clone()))
        .collect();
    for (name, shape, values) in param_groups {
        check(&format!("network {name}"), &shape, &values, &|g, t| {
            let mut overrides = BTreeMap::new();
            overrides.insert(name.clone(), t.clone());
            let bound = net.bind_with(g, &overrides);
            let outputs = net.forward(&bound, &degraded)?;
            let terms = objective::total_loss(&net, &bound, &outputs, &clean, &degraded, &lcfg)?;
            Ok(terms.total)
        });
    }

    results.iter().all(|r| r.pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        let mut results = Vec::new();
        assert!(run(&mut results));
        assert!(results.len() > 20);
    }
}
