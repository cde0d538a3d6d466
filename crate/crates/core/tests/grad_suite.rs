//! Finite-difference verification of every differentiable operation and
//! every loss, ending with the full network objective per parameter group.

use std::collections::BTreeMap;

use memnet_core::gradcheck::{grad_check, DEFAULT_STEP};
use memnet_core::memory::{self, MemoryConfig};
use memnet_core::network::{NetConfig, StageNetwork};
use memnet_core::objective::{self, LossConfig};
use memnet_core::ops::{self, Padding};
use memnet_core::Tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

fn check(
    name: &str,
    shape: &[usize],
    x: &[f64],
    f: impl Fn(&memnet_core::Graph, &Tensor) -> memnet_core::Result<Tensor>,
) {
    let err = grad_check(f, shape, x, DEFAULT_STEP).unwrap();
    assert!(err <= TOL, "{name}: grad_check error {err} > {TOL}");
}

#[test]
fn elementwise_suite() {
    let x = rand_vec(12, 1);
    let c = Tensor::from_vec(&[12], rand_vec(12, 2));
    check("add", &[12], &x, |_, t| Ok(ops::sum(&ops::add(t, &c)?)));
    check("sub", &[12], &x, |_, t| Ok(ops::sum(&ops::sub(t, &c)?)));
    check("mul", &[12], &x, |_, t| Ok(ops::sum(&ops::mul(t, &c)?)));
    check("scale", &[12], &x, |_, t| Ok(ops::sum(&ops::scale(t, -2.5))));
    check("mean", &[12], &x, |_, t| Ok(ops::mean(&ops::mul(t, t)?)));
    check("sigmoid", &[12], &x, |_, t| Ok(ops::sum(&ops::sigmoid(t))));
    // keep relu/abs probes away from the kink at zero
    let shifted: Vec<f64> = x.iter().map(|v| v + 2.0 * v.signum()).collect();
    check("relu", &[12], &shifted, |_, t| Ok(ops::sum(&ops::relu(t))));
    check("abs", &[12], &shifted, |_, t| Ok(ops::sum(&ops::abs(t))));
    let positive: Vec<f64> = x.iter().map(|v| v.abs() + 0.5).collect();
    check("sqrt", &[12], &positive, |_, t| Ok(ops::sum(&ops::sqrt(t))));
    check("l2_norm", &[12], &x, |_, t| Ok(ops::l2_norm(t)));
    let denom = Tensor::from_vec(&[12], x.iter().map(|v| v.abs() + 1.0).collect());
    check("div", &[12], &x, |_, t| Ok(ops::sum(&ops::div(t, &denom)?)));
}

#[test]
fn matmul_both_sides() {
    let a = rand_vec(6, 3);
    let bc = Tensor::from_vec(&[3, 4], rand_vec(12, 4));
    check("matmul lhs", &[2, 3], &a, |_, t| {
        Ok(ops::sum(&ops::mul(&ops::matmul(t, &bc)?, &ops::matmul(t, &bc)?)?))
    });
    let ac = Tensor::from_vec(&[2, 3], a);
    check("matmul rhs", &[3, 4], &rand_vec(12, 5), |_, t| {
        Ok(ops::sum(&ops::mul(&ops::matmul(&ac, t)?, &ops::matmul(&ac, t)?)?))
    });
}

#[test]
fn softmax_all_axes() {
    let x = rand_vec(12, 6);
    let w = Tensor::from_vec(&[3, 4], rand_vec(12, 7));
    for axis in [0usize, 1] {
        check("softmax", &[3, 4], &x, |_, t| {
            Ok(ops::sum(&ops::mul(&ops::softmax(t, axis)?, &w)?))
        });
    }
}

#[test]
fn conv_suite() {
    let x = rand_vec(2 * 6 * 6, 8);
    let k = rand_vec(3 * 2 * 3 * 3, 9);
    for padding in [Padding::Zero, Padding::Replicate] {
        let kc = Tensor::from_vec(&[3, 2, 3, 3], k.clone());
        check("conv2d input", &[2, 6, 6], &x, |_, t| {
            let y = ops::conv2d(t, &kc, padding)?;
            Ok(ops::sum(&ops::mul(&y, &y)?))
        });
        let xc = Tensor::from_vec(&[2, 6, 6], x.clone());
        check("conv2d kernel", &[3, 2, 3, 3], &k, |_, t| {
            let y = ops::conv2d(&xc, t, padding)?;
            Ok(ops::sum(&ops::mul(&y, &y)?))
        });
    }
}

#[test]
fn spatial_suite() {
    let x = rand_vec(2 * 6 * 6, 10);
    check("laplacian", &[2, 6, 6], &x, |_, t| {
        let y = ops::laplacian(t)?;
        Ok(ops::sum(&ops::mul(&y, &y)?))
    });
    check("avg_pool2", &[2, 6, 6], &x, |_, t| {
        let y = ops::avg_pool2(t)?;
        Ok(ops::sum(&ops::mul(&y, &y)?))
    });
    check("upsample2", &[2, 3, 3], &rand_vec(18, 11), |_, t| {
        let y = ops::upsample2(t)?;
        Ok(ops::sum(&ops::mul(&y, &y)?))
    });
    let other = Tensor::from_vec(&[1, 6, 6], rand_vec(36, 12));
    check("concat_channels", &[2, 6, 6], &x, |_, t| {
        let y = ops::concat_channels(t, &other)?;
        Ok(ops::sum(&ops::mul(&y, &y)?))
    });
    check("add_channel_bias", &[2], &rand_vec(2, 13), |_, t| {
        let xc = Tensor::from_vec(&[2, 6, 6], rand_vec(72, 14));
        let y = ops::add_channel_bias(&xc, t)?;
        Ok(ops::sum(&ops::mul(&y, &y)?))
    });
}

#[test]
fn memory_suite() {
    let cfg = MemoryConfig {
        parts: 2,
        instances: 2,
        semantics: 1,
        classes: 1,
        channels: 4,
        banks: 2,
        alpha: 1.0,
    };
    let bank = memory::init_bank(&cfg, 17).unwrap();
    let queries = rand_vec(3 * 4, 18);

    // gradient w.r.t. queries
    let metric = Tensor::from_vec(&[cfg.part_rows(), 4], bank.part_metric.clone());
    let cfg2 = cfg.clone();
    check("hierarchical_read queries", &[3, 4], &queries, |_, t| {
        let r = memory::hierarchical_read(t, &metric, &cfg2)?;
        Ok(ops::sum(&ops::mul(&r.semantic, &r.semantic)?))
    });

    // gradient w.r.t. the stored part metric through the whole chain
    let qc = Tensor::from_vec(&[3, 4], queries);
    check(
        "hierarchical_read metric",
        &[cfg.part_rows(), 4],
        &bank.part_metric,
        |_, t| {
            let r = memory::hierarchical_read(&qc, t, &cfg)?;
            let s = ops::add(
                &ops::sum(&ops::mul(&r.part, &r.part)?),
                &ops::sum(&ops::mul(&r.semantic, &r.semantic)?),
            )?;
            Ok(s)
        },
    );
}

#[test]
fn loss_suite() {
    let cfg = LossConfig::default();
    let y = Tensor::from_vec(&[3, 8, 8], rand_vec(192, 20));
    let x0 = rand_vec(192, 21);
    check("charbonnier", &[3, 8, 8], &x0, |_, t| {
        objective::charbonnier(t, &y, cfg.epsilon)
    });
    check("charbonnier at x=y", &[3, 8, 8], y.values(), |_, t| {
        objective::charbonnier(t, &y, cfg.epsilon)
    });
    check("edge_loss", &[3, 8, 8], &x0, |_, t| {
        objective::edge_loss(t, &y, cfg.epsilon)
    });
    let pos = Tensor::from_vec(&[3, 8, 8], rand_vec(192, 22));
    let neg = Tensor::from_vec(&[3, 8, 8], rand_vec(192, 23));
    check("contrastive_loss", &[3, 8, 8], &x0, |_, t| {
        objective::contrastive_loss(t, &pos, &neg, &cfg)
    });
}

fn tiny_net(seed: u64) -> StageNetwork {
    StageNetwork::new(
        NetConfig {
            base_channels: 4,
            depth: 2,
            memory: MemoryConfig {
                parts: 2,
                instances: 2,
                semantics: 1,
                classes: 1,
                channels: 4,
                banks: 2,
                alpha: 1.0,
            },
            memory_enabled: true,
        },
        seed,
    )
    .unwrap()
}

/// Full-network objective gradient, checked per parameter group on a 3x8x8
/// input. Covers the differentiability of the whole pipeline including the
/// stored prototype metric.
#[test]
fn full_network_gradient() {
    let mut net = tiny_net(30);
    // move the zero-initialized heads to a generic point: at exact init the
    // final estimate equals the input, which parks the contrastive term's
    // absolute differences on their kink
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
    let lcfg = LossConfig::default();

    for (name, param) in &net.params {
        let shape = param.shape.clone();
        let err = grad_check(
            |g, t| {
                let mut overrides = BTreeMap::new();
                overrides.insert(name.clone(), t.clone());
                let bound = net.bind_with(g, &overrides);
                let outputs = net.forward(&bound, &degraded)?;
                let terms =
                    objective::total_loss(&net, &bound, &outputs, &clean, &degraded, &lcfg)?;
                Ok(terms.total)
            },
            &shape,
            &param.values,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(err <= TOL, "parameter group {name}: grad error {err}");
    }
}

/// The same objective differentiated w.r.t. the degraded input image.
#[test]
fn full_network_gradient_wrt_input() {
    let net = tiny_net(33);
    let clean = Tensor::from_vec(&[3, 8, 8], rand_vec(192, 34).iter().map(|v| v.abs()).collect());
    let x0: Vec<f64> = rand_vec(192, 35).iter().map(|v| v.abs()).collect();
    let lcfg = LossConfig {
        // the contrastive term treats the input as the negative; keep it on
        enable_contrast: true,
        ..LossConfig::default()
    };
    let err = grad_check(
        |g, t| {
            let bound = net.bind(g);
            let outputs = net.forward(&bound, t)?;
            objective::total_loss(&net, &bound, &outputs, &clean, t, &lcfg).map(|l| l.total)
        },
        &[3, 8, 8],
        &x0,
        DEFAULT_STEP,
    )
    .unwrap();
    assert!(err <= TOL, "input grad error {err}");
}
