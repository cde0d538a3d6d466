//! Differentiable operations. Each op computes its forward value and, when
//! any input is recorded, registers an adjoint rule on the shared graph.

mod conv;
mod linalg;

pub use conv::{avg_pool2, conv2d, laplacian, upsample2, Padding};
pub use linalg::{block_mean_rows, cosine_matrix, matmul, softmax};

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{op_result, Tensor};

#[allow(unused_imports)]
use crate::float::FloatExt;

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::DimMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Unary elementwise op; `dfdx(x, y)` is the local derivative given input and
/// output values.
fn unary_elem(
    x: &Tensor,
    f: impl Fn(f64) -> f64,
    dfdx: impl Fn(f64, f64) -> f64 + 'static,
) -> Tensor {
    let out: Vec<f64> = x.values().iter().map(|&v| f(v)).collect();
    let xd = x.data_rc();
    let yd = alloc::rc::Rc::new(out.clone());
    let pid = x.node_id();
    op_result(x.shape().to_vec(), out, &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => {
                let grad = g
                    .iter()
                    .zip(xd.iter().zip(yd.iter()))
                    .map(|(gi, (&xi, &yi))| gi * dfdx(xi, yi))
                    .collect();
                vec![(pid, grad)]
            }
            None => vec![],
        })
    })
}

/// Binary elementwise op over equal shapes.
fn binary_elem(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
    dfda: impl Fn(f64, f64) -> f64 + 'static,
    dfdb: impl Fn(f64, f64) -> f64 + 'static,
) -> Result<Tensor> {
    check_same_shape(op, a, b)?;
    let out: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| f(x, y))
        .collect();
    let ad = a.data_rc();
    let bd = b.data_rc();
    let (pa, pb) = (a.node_id(), b.node_id());
    Ok(op_result(a.shape().to_vec(), out, &[a, b], move || {
        Box::new(move |g| {
            let mut grads = Vec::with_capacity(2);
            if let Some(pa) = pa {
                let ga = g
                    .iter()
                    .zip(ad.iter().zip(bd.iter()))
                    .map(|(gi, (&x, &y))| gi * dfda(x, y))
                    .collect();
                grads.push((pa, ga));
            }
            if let Some(pb) = pb {
                let gb = g
                    .iter()
                    .zip(ad.iter().zip(bd.iter()))
                    .map(|(gi, (&x, &y))| gi * dfdb(x, y))
                    .collect();
                grads.push((pb, gb));
            }
            grads
        })
    }))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_elem("add", a, b, |x, y| x + y, |_, _| 1.0, |_, _| 1.0)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_elem("sub", a, b, |x, y| x - y, |_, _| 1.0, |_, _| -1.0)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_elem("mul", a, b, |x, y| x * y, |_, y| y, |x, _| x)
}

pub fn div(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    binary_elem(
        "div",
        a,
        b,
        |x, y| x / y,
        |_, y| 1.0 / y,
        |x, y| -x / (y * y),
    )
}

pub fn scale(x: &Tensor, c: f64) -> Tensor {
    unary_elem(x, |v| c * v, move |_, _| c)
}

pub fn add_scalar(x: &Tensor, c: f64) -> Tensor {
    unary_elem(x, |v| v + c, |_, _| 1.0)
}

pub fn relu(x: &Tensor) -> Tensor {
    unary_elem(x, |v| v.max(0.0), |xi, _| if xi > 0.0 { 1.0 } else { 0.0 })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    unary_elem(
        x,
        |v| 1.0 / (1.0 + (-v).exp()),
        |_, yi| yi * (1.0 - yi),
    )
}

pub fn abs(x: &Tensor) -> Tensor {
    unary_elem(
        x,
        |v| v.abs(),
        |xi, _| {
            if xi > 0.0 {
                1.0
            } else if xi < 0.0 {
                -1.0
            } else {
                0.0
            }
        },
    )
}

/// Elementwise square root; inputs must be non-negative.
pub fn sqrt(x: &Tensor) -> Tensor {
    unary_elem(x, |v| v.sqrt(), |_, yi| 0.5 / yi.max(1e-300))
}

/// Sum of all elements, as a scalar tensor.
pub fn sum(x: &Tensor) -> Tensor {
    let total: f64 = x.values().iter().sum();
    let n = x.numel();
    let pid = x.node_id();
    op_result(vec![1], vec![total], &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => vec![(pid, vec![g[0]; n])],
            None => vec![],
        })
    })
}

/// Mean of all elements, as a scalar tensor.
pub fn mean(x: &Tensor) -> Tensor {
    let n = x.numel() as f64;
    let total: f64 = x.values().iter().sum();
    let count = x.numel();
    let pid = x.node_id();
    op_result(vec![1], vec![total / n], &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => vec![(pid, vec![g[0] / n; count])],
            None => vec![],
        })
    })
}

/// Global Euclidean norm over all elements, as a scalar tensor.
pub fn l2_norm(x: &Tensor) -> Tensor {
    let sumsq: f64 = x.values().iter().map(|v| v * v).sum();
    let norm = sumsq.sqrt();
    let xd = x.data_rc();
    let pid = x.node_id();
    op_result(vec![1], vec![norm], &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => {
                let denom = norm.max(1e-300);
                let grad = xd.iter().map(|&v| g[0] * v / denom).collect();
                vec![(pid, grad)]
            }
            None => vec![],
        })
    })
}

/// `x[c,h,w] + b[c]` with the bias broadcast over the spatial plane.
pub fn add_channel_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (shape_ok, c, plane) = match (x.shape(), b.shape()) {
        ([c, h, w], [bc]) if c == bc => (true, *c, h * w),
        _ => (false, 0, 0),
    };
    if !shape_ok {
        return Err(Error::DimMismatch {
            op: "add_channel_bias",
            lhs: x.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out = x.values().to_vec();
    for ch in 0..c {
        let bv = b.values()[ch];
        for v in &mut out[ch * plane..(ch + 1) * plane] {
            *v += bv;
        }
    }
    let (px, pb) = (x.node_id(), b.node_id());
    Ok(op_result(x.shape().to_vec(), out, &[x, b], move || {
        Box::new(move |g| {
            let mut grads = Vec::with_capacity(2);
            if let Some(px) = px {
                grads.push((px, g.to_vec()));
            }
            if let Some(pb) = pb {
                let gb = (0..c)
                    .map(|ch| g[ch * plane..(ch + 1) * plane].iter().sum())
                    .collect();
                grads.push((pb, gb));
            }
            grads
        })
    }))
}

/// Stack two `[c,h,w]` maps along the channel axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ok = matches!(
        (a.shape(), b.shape()),
        ([_, ha, wa], [_, hb, wb]) if ha == hb && wa == wb
    );
    if !ok {
        return Err(Error::DimMismatch {
            op: "concat_channels",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let (ca, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let cb = b.shape()[0];
    let mut out = Vec::with_capacity((ca + cb) * h * w);
    out.extend_from_slice(a.values());
    out.extend_from_slice(b.values());
    let na = a.numel();
    let nb = b.numel();
    let (pa, pb) = (a.node_id(), b.node_id());
    Ok(op_result(vec![ca + cb, h, w], out, &[a, b], move || {
        Box::new(move |g| {
            let mut grads = Vec::with_capacity(2);
            if let Some(pa) = pa {
                grads.push((pa, g[..na].to_vec()));
            }
            if let Some(pb) = pb {
                grads.push((pb, g[na..na + nb].to_vec()));
            }
            grads
        })
    }))
}

/// `[c,h,w]` feature map to `[h*w, c]` query matrix (one row per pixel).
pub fn chw_to_qc(x: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::DimMismatch {
            op: "chw_to_qc",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    };
    let q = h * w;
    let xv = x.values();
    let mut out = vec![0.0; q * c];
    for ch in 0..c {
        for p in 0..q {
            out[p * c + ch] = xv[ch * q + p];
        }
    }
    let pid = x.node_id();
    Ok(op_result(vec![q, c], out, &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => {
                let mut grad = vec![0.0; q * c];
                for ch in 0..c {
                    for p in 0..q {
                        grad[ch * q + p] = g[p * c + ch];
                    }
                }
                vec![(pid, grad)]
            }
            None => vec![],
        })
    }))
}

/// Inverse of [`chw_to_qc`]: `[h*w, c]` back to `[c,h,w]`.
pub fn qc_to_chw(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let ok = matches!(*x.shape(), [q, _] if q == h * w);
    if !ok {
        return Err(Error::DimMismatch {
            op: "qc_to_chw",
            lhs: x.shape().to_vec(),
            rhs: vec![h * w],
        });
    }
    let c = x.shape()[1];
    let q = h * w;
    let xv = x.values();
    let mut out = vec![0.0; c * q];
    for ch in 0..c {
        for p in 0..q {
            out[ch * q + p] = xv[p * c + ch];
        }
    }
    let pid = x.node_id();
    Ok(op_result(vec![c, h, w], out, &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => {
                let mut grad = vec![0.0; q * c];
                for ch in 0..c {
                    for p in 0..q {
                        grad[p * c + ch] = g[ch * q + p];
                    }
                }
                vec![(pid, grad)]
            }
            None => vec![],
        })
    }))
}
