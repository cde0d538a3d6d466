//! Spatial operations: same-padding 2-D convolution, fixed Laplacian filter,
//! 2x2 average pooling and nearest-neighbor upsampling.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{op_result, Tensor};

/// Border handling for same-padding spatial ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Zero,
    Replicate,
}

/// Pad every channel plane by `(ph, pw)` on each side.
fn pad_planes(
    x: &[f64],
    c: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    mode: Padding,
) -> Vec<f64> {
    let hp = h + 2 * ph;
    let wp = w + 2 * pw;
    let mut out = vec![0.0; c * hp * wp];
    for ch in 0..c {
        let src = &x[ch * h * w..(ch + 1) * h * w];
        let dst = &mut out[ch * hp * wp..(ch + 1) * hp * wp];
        for yy in 0..hp {
            let sy = match mode {
                Padding::Zero => {
                    if yy < ph || yy >= ph + h {
                        continue;
                    }
                    yy - ph
                }
                Padding::Replicate => yy.saturating_sub(ph).min(h - 1),
            };
            for xx in 0..wp {
                let sx = match mode {
                    Padding::Zero => {
                        if xx < pw || xx >= pw + w {
                            continue;
                        }
                        xx - pw
                    }
                    Padding::Replicate => xx.saturating_sub(pw).min(w - 1),
                };
                dst[yy * wp + xx] = src[sy * w + sx];
            }
        }
    }
    out
}

/// Adjoint of [`pad_planes`]: scatter padded-plane gradients back onto the
/// original extents.
fn unpad_adjoint(
    gpad: &[f64],
    c: usize,
    h: usize,
    w: usize,
    ph: usize,
    pw: usize,
    mode: Padding,
) -> Vec<f64> {
    let hp = h + 2 * ph;
    let wp = w + 2 * pw;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = &gpad[ch * hp * wp..(ch + 1) * hp * wp];
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for yy in 0..hp {
            let sy = match mode {
                Padding::Zero => {
                    if yy < ph || yy >= ph + h {
                        continue;
                    }
                    yy - ph
                }
                Padding::Replicate => yy.saturating_sub(ph).min(h - 1),
            };
            for xx in 0..wp {
                let sx = match mode {
                    Padding::Zero => {
                        if xx < pw || xx >= pw + w {
                            continue;
                        }
                        xx - pw
                    }
                    Padding::Replicate => xx.saturating_sub(pw).min(w - 1),
                };
                dst[sy * w + sx] += src[yy * wp + xx];
            }
        }
    }
    out
}

/// Raw same-padding correlation of padded input with `k[cout,cin,kh,kw]`.
fn conv_forward(
    pad: &[f64],
    k: &[f64],
    cin: usize,
    cout: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
) -> Vec<f64> {
    let wp = w + kw - 1;
    let plane = (h + kh - 1) * wp;
    let mut out = vec![0.0; cout * h * w];
    for co in 0..cout {
        let orow_base = co * h * w;
        for ci in 0..cin {
            let pbase = ci * plane;
            for u in 0..kh {
                for v in 0..kw {
                    let wgt = k[((co * cin + ci) * kh + u) * kw + v];
                    if wgt == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let prow = pbase + (y + u) * wp + v;
                        let orow = orow_base + y * w;
                        for x in 0..w {
                            out[orow + x] += wgt * pad[prow + x];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Same-padding 2-D convolution: `x[cin,h,w] * k[cout,cin,kh,kw] ->
/// [cout,h,w]`. Kernel extents must be odd.
pub fn conv2d(x: &Tensor, k: &Tensor, padding: Padding) -> Result<Tensor> {
    let (&[cin, h, w], &[cout, kcin, kh, kw]) = (x.shape(), k.shape()) else {
        return Err(Error::DimMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    };
    if kcin != cin {
        return Err(Error::DimMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: k.shape().to_vec(),
        });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(Error::Config(alloc::format!(
            "conv2d kernel extents must be odd, got {kh}x{kw}"
        )));
    }
    let (ph, pw) = (kh / 2, kw / 2);
    let pad = pad_planes(x.values(), cin, h, w, ph, pw, padding);
    let out = conv_forward(&pad, k.values(), cin, cout, h, w, kh, kw);

    let pad_rc = alloc::rc::Rc::new(pad);
    let kd = k.data_rc();
    let (px, pk) = (x.node_id(), k.node_id());
    Ok(op_result(vec![cout, h, w], out, &[x, k], move || {
        let pad_rc = pad_rc.clone();
        Box::new(move |g| {
            let wp = w + kw - 1;
            let hp = h + kh - 1;
            let plane = hp * wp;
            let mut grads = Vec::with_capacity(2);
            if let Some(px) = px {
                // gradient w.r.t. padded input, then scatter through the pad
                let mut gpad = vec![0.0; cin * plane];
                for co in 0..cout {
                    let gbase = co * h * w;
                    for ci in 0..cin {
                        let pbase = ci * plane;
                        for u in 0..kh {
                            for v in 0..kw {
                                let wgt = kd[((co * cin + ci) * kh + u) * kw + v];
                                if wgt == 0.0 {
                                    continue;
                                }
                                for y in 0..h {
                                    let prow = pbase + (y + u) * wp + v;
                                    let grow = gbase + y * w;
                                    for xx in 0..w {
                                        gpad[prow + xx] += wgt * g[grow + xx];
                                    }
                                }
                            }
                        }
                    }
                }
                grads.push((px, unpad_adjoint(&gpad, cin, h, w, ph, pw, padding)));
            }
            if let Some(pk) = pk {
                let mut gk = vec![0.0; cout * cin * kh * kw];
                for co in 0..cout {
                    let gbase = co * h * w;
                    for ci in 0..cin {
                        let pbase = ci * plane;
                        for u in 0..kh {
                            for v in 0..kw {
                                let mut s = 0.0;
                                for y in 0..h {
                                    let prow = pbase + (y + u) * wp + v;
                                    let grow = gbase + y * w;
                                    for xx in 0..w {
                                        s += g[grow + xx] * pad_rc[prow + xx];
                                    }
                                }
                                gk[((co * cin + ci) * kh + u) * kw + v] = s;
                            }
                        }
                    }
                }
                grads.push((pk, gk));
            }
            grads
        })
    }))
}

const LAPLACIAN_KERNEL: [f64; 9] = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];

/// Per-channel Laplacian filter `[[0,1,0],[1,-4,1],[0,1,0]]` with replicate
/// padding, so constant images map to zero exactly.
pub fn laplacian(x: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::DimMismatch {
            op: "laplacian",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    };
    let kern = LAPLACIAN_KERNEL;
    let pad = pad_planes(x.values(), c, h, w, 1, 1, Padding::Replicate);
    let wp = w + 2;
    let plane = (h + 2) * wp;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let pbase = ch * plane;
        let obase = ch * h * w;
        for u in 0..3 {
            for v in 0..3 {
                let wgt = kern[u * 3 + v];
                if wgt == 0.0 {
                    continue;
                }
                for y in 0..h {
                    let prow = pbase + (y + u) * wp + v;
                    let orow = obase + y * w;
                    for xx in 0..w {
                        out[orow + xx] += wgt * pad[prow + xx];
                    }
                }
            }
        }
    }
    let pid = x.node_id();
    Ok(op_result(vec![c, h, w], out, &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => {
                let kern = LAPLACIAN_KERNEL;
                let wp = w + 2;
                let plane = (h + 2) * wp;
                let mut gpad = vec![0.0; c * plane];
                for ch in 0..c {
                    let pbase = ch * plane;
                    let gbase = ch * h * w;
                    for u in 0..3 {
                        for v in 0..3 {
                            let wgt = kern[u * 3 + v];
                            if wgt == 0.0 {
                                continue;
                            }
                            for y in 0..h {
                                let prow = pbase + (y + u) * wp + v;
                                let grow = gbase + y * w;
                                for xx in 0..w {
                                    gpad[prow + xx] += wgt * g[grow + xx];
                                }
                            }
                        }
                    }
                }
                vec![(pid, unpad_adjoint(&gpad, c, h, w, 1, 1, Padding::Replicate))]
            }
            None => vec![],
        })
    }))
}

/// 2x2 mean pooling; spatial extents must be even.
pub fn avg_pool2(x: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::DimMismatch {
            op: "avg_pool2",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(alloc::format!(
            "avg_pool2 requires even extents, got {h}x{w}"
        )));
    }
    let (ho, wo) = (h / 2, w / 2);
    let xv = x.values();
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let base = ch * h * w + 2 * y * w + 2 * xx;
                out[ch * ho * wo + y * wo + xx] =
                    0.25 * (xv[base] + xv[base + 1] + xv[base + w] + xv[base + w + 1]);
            }
        }
    }
    let pid = x.node_id();
    Ok(op_result(vec![c, ho, wo], out, &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => {
                let mut grad = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let gv = 0.25 * g[ch * ho * wo + y * wo + xx];
                            let base = ch * h * w + 2 * y * w + 2 * xx;
                            grad[base] += gv;
                            grad[base + 1] += gv;
                            grad[base + w] += gv;
                            grad[base + w + 1] += gv;
                        }
                    }
                }
                vec![(pid, grad)]
            }
            None => vec![],
        })
    }))
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2(x: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::DimMismatch {
            op: "upsample2",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    };
    let (ho, wo) = (2 * h, 2 * w);
    let xv = x.values();
    let mut out = vec![0.0; c * ho * wo];
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                out[ch * ho * wo + y * wo + xx] = xv[ch * h * w + (y / 2) * w + xx / 2];
            }
        }
    }
    let pid = x.node_id();
    Ok(op_result(vec![c, ho, wo], out, &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => {
                let mut grad = vec![0.0; c * h * w];
                for ch in 0..c {
                    for y in 0..ho {
                        for xx in 0..wo {
                            grad[ch * h * w + (y / 2) * w + xx / 2] +=
                                g[ch * ho * wo + y * wo + xx];
                        }
                    }
                }
                vec![(pid, grad)]
            }
            None => vec![],
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;
    use crate::tensor::{backward, Graph};
    use rand::{Rng, SeedableRng};

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    /// Direct nested-loop convolution used as an independent oracle.
    fn conv_oracle(
        x: &[f64],
        k: &[f64],
        cin: usize,
        cout: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        mode: Padding,
    ) -> Vec<f64> {
        let mut out = vec![0.0; cout * h * w];
        let fetch = |ci: usize, y: i64, x_: i64| -> f64 {
            match mode {
                Padding::Zero => {
                    if y < 0 || x_ < 0 || y >= h as i64 || x_ >= w as i64 {
                        0.0
                    } else {
                        x[ci * h * w + y as usize * w + x_ as usize]
                    }
                }
                Padding::Replicate => {
                    let yc = y.clamp(0, h as i64 - 1) as usize;
                    let xc = x_.clamp(0, w as i64 - 1) as usize;
                    x[ci * h * w + yc * w + xc]
                }
            }
        };
        for co in 0..cout {
            for y in 0..h {
                for xx in 0..w {
                    let mut s = 0.0;
                    for ci in 0..cin {
                        for u in 0..kh {
                            for v in 0..kw {
                                let sy = y as i64 + u as i64 - (kh / 2) as i64;
                                let sx = xx as i64 + v as i64 - (kw / 2) as i64;
                                s += k[((co * cin + ci) * kh + u) * kw + v] * fetch(ci, sy, sx);
                            }
                        }
                    }
                    out[co * h * w + y * w + xx] = s;
                }
            }
        }
        out
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::from_vec(&[1, 3, 3], rand_vec(9, 1));
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let y = conv2d(&x, &Tensor::from_vec(&[1, 1, 3, 3], k), Padding::Zero).unwrap();
        assert_eq!(y.values(), x.values());
    }

    #[test]
    fn ones_kernel_on_constant_replicate_is_9c() {
        let c = 0.37;
        let x = Tensor::filled(&[1, 4, 5], c);
        let k = Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]);
        let y = conv2d(&x, &k, Padding::Replicate).unwrap();
        for v in y.values() {
            assert!((v - 9.0 * c).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_matches_nested_loop_oracle() {
        for (seed, mode) in [(3, Padding::Zero), (4, Padding::Replicate)] {
            let xv = rand_vec(25, seed);
            let kv = rand_vec(2 * 1 * 3 * 3, seed + 100);
            let x = Tensor::from_vec(&[1, 5, 5], xv.clone());
            let k = Tensor::from_vec(&[2, 1, 3, 3], kv.clone());
            let y = conv2d(&x, &k, mode).unwrap();
            let expect = conv_oracle(&xv, &kv, 1, 2, 5, 5, 3, 3, mode);
            for (a, b) in y.values().iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn even_kernel_is_rejected() {
        let x = Tensor::zeros(&[1, 4, 4]);
        let k = Tensor::zeros(&[1, 1, 2, 2]);
        assert!(matches!(
            conv2d(&x, &k, Padding::Zero),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn laplacian_annihilates_constants() {
        let x = Tensor::filled(&[2, 4, 4], 0.81);
        let y = laplacian(&x).unwrap();
        for v in y.values() {
            assert_eq!(*v, 0.0);
        }
    }

    #[test]
    fn laplacian_of_center_impulse() {
        let mut v = vec![0.0; 9];
        v[4] = 1.0;
        let y = laplacian(&Tensor::from_vec(&[1, 3, 3], v)).unwrap();
        let expect = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
        assert_eq!(y.values(), &expect);
    }

    #[test]
    fn pool_then_upsample_of_constant_is_identity() {
        let g = Graph::new();
        let x = g.leaf(&[1, 4, 4], vec![0.5; 16]);
        let y = upsample2(&avg_pool2(&x).unwrap()).unwrap();
        assert_eq!(y.values(), x.values());
        // adjoint consistency: sum(y) == sum(x), so grads are all ones
        let grads = backward(&ops::sum(&y)).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &[1.0; 16]);
    }

    #[test]
    fn pool_rejects_odd_extent() {
        let x = Tensor::zeros(&[1, 3, 4]);
        assert!(matches!(avg_pool2(&x), Err(Error::Config(_))));
    }
}
