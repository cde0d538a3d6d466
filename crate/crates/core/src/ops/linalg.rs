//! Matrix product, softmax, cosine-similarity matrix and block row means.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{op_result, Tensor};

#[allow(unused_imports)]
use crate::float::FloatExt;

/// `a[m,k] x b[k,n] -> [m,n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || Error::DimMismatch {
        op: "matmul",
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    };
    let (&[m, ka], &[kb, n]) = (a.shape(), b.shape()) else {
        return Err(mismatch());
    };
    if ka != kb {
        return Err(mismatch());
    }
    let k = ka;
    let av = a.values();
    let bv = b.values();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let aik = av[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &bv[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    let ad = a.data_rc();
    let bd = b.data_rc();
    let (pa, pb) = (a.node_id(), b.node_id());
    Ok(op_result(vec![m, n], out, &[a, b], move || {
        Box::new(move |g| {
            let mut grads = Vec::with_capacity(2);
            if let Some(pa) = pa {
                // dA = G * B^T
                let mut ga = vec![0.0; m * k];
                for i in 0..m {
                    for kk in 0..k {
                        let mut s = 0.0;
                        for j in 0..n {
                            s += g[i * n + j] * bd[kk * n + j];
                        }
                        ga[i * k + kk] = s;
                    }
                }
                grads.push((pa, ga));
            }
            if let Some(pb) = pb {
                // dB = A^T * G
                let mut gb = vec![0.0; k * n];
                for kk in 0..k {
                    for i in 0..m {
                        let aik = ad[i * k + kk];
                        if aik == 0.0 {
                            continue;
                        }
                        for j in 0..n {
                            gb[kk * n + j] += aik * g[i * n + j];
                        }
                    }
                }
                grads.push((pb, gb));
            }
            grads
        })
    }))
}

/// Numerically stabilized softmax along `axis`. Each slice along the axis
/// sums to 1.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape().to_vec();
    if axis >= shape.len() {
        return Err(Error::InvalidAxis {
            axis,
            rank: shape.len(),
        });
    }
    let len = shape[axis];
    if len == 0 {
        return Err(Error::InvalidAxis {
            axis,
            rank: shape.len(),
        });
    }
    // iterate over slices: outer block * inner stride layout
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let xv = x.values();
    let mut out = vec![0.0; xv.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut mx = f64::NEG_INFINITY;
            for s in 0..len {
                mx = mx.max(xv[base + s * inner]);
            }
            let mut z = 0.0;
            for s in 0..len {
                let e = (xv[base + s * inner] - mx).exp();
                out[base + s * inner] = e;
                z += e;
            }
            for s in 0..len {
                out[base + s * inner] /= z;
            }
        }
    }
    let yd = alloc::rc::Rc::new(out.clone());
    let pid = x.node_id();
    Ok(op_result(shape, out, &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => {
                // dx_s = y_s * (g_s - sum_t g_t y_t) per slice
                let mut grad = vec![0.0; yd.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * len * inner + i;
                        let mut dot = 0.0;
                        for s in 0..len {
                            let idx = base + s * inner;
                            dot += g[idx] * yd[idx];
                        }
                        for s in 0..len {
                            let idx = base + s * inner;
                            grad[idx] = yd[idx] * (g[idx] - dot);
                        }
                    }
                }
                vec![(pid, grad)]
            }
            None => vec![],
        })
    }))
}

/// Pairwise cosine similarities: `q[Q,C] x m[N,C] -> [Q,N]`.
///
/// Row norms are clamped at 1e-12 so zero rows yield zero similarity instead
/// of NaN; callers that must reject zero rows check before calling.
pub fn cosine_matrix(q: &Tensor, m: &Tensor) -> Result<Tensor> {
    let ok = matches!(
        (q.shape(), m.shape()),
        (&[_, cq], &[_, cm]) if cq == cm
    );
    if !ok {
        return Err(Error::DimMismatch {
            op: "cosine_matrix",
            lhs: q.shape().to_vec(),
            rhs: m.shape().to_vec(),
        });
    }
    let (nq, c) = (q.shape()[0], q.shape()[1]);
    let nm = m.shape()[0];
    let qv = q.values();
    let mv = m.values();

    const NORM_FLOOR: f64 = 1e-12;
    let qnorm: Vec<f64> = (0..nq)
        .map(|i| {
            let s: f64 = qv[i * c..(i + 1) * c].iter().map(|v| v * v).sum();
            s.sqrt().max(NORM_FLOOR)
        })
        .collect();
    let mnorm: Vec<f64> = (0..nm)
        .map(|j| {
            let s: f64 = mv[j * c..(j + 1) * c].iter().map(|v| v * v).sum();
            s.sqrt().max(NORM_FLOOR)
        })
        .collect();

    let mut out = vec![0.0; nq * nm];
    for i in 0..nq {
        let qi = &qv[i * c..(i + 1) * c];
        for j in 0..nm {
            let mj = &mv[j * c..(j + 1) * c];
            let dot: f64 = qi.iter().zip(mj).map(|(a, b)| a * b).sum();
            out[i * nm + j] = dot / (qnorm[i] * mnorm[j]);
        }
    }

    let qd = q.data_rc();
    let md = m.data_rc();
    let cos = alloc::rc::Rc::new(out.clone());
    let (pq, pm) = (q.node_id(), m.node_id());
    Ok(op_result(vec![nq, nm], out, &[q, m], move || {
        Box::new(move |g| {
            // d cos / d q_i = m_j / (|q||m|) - cos * q_i / |q|^2  (and symmetric)
            let qnorm: Vec<f64> = (0..nq)
                .map(|i| {
                    let s: f64 = qd[i * c..(i + 1) * c].iter().map(|v| v * v).sum();
                    s.sqrt().max(NORM_FLOOR)
                })
                .collect();
            let mnorm: Vec<f64> = (0..nm)
                .map(|j| {
                    let s: f64 = md[j * c..(j + 1) * c].iter().map(|v| v * v).sum();
                    s.sqrt().max(NORM_FLOOR)
                })
                .collect();
            let mut grads = Vec::with_capacity(2);
            if let Some(pq) = pq {
                let mut gq = vec![0.0; nq * c];
                for i in 0..nq {
                    let qi = &qd[i * c..(i + 1) * c];
                    for j in 0..nm {
                        let go = g[i * nm + j];
                        if go == 0.0 {
                            continue;
                        }
                        let mj = &md[j * c..(j + 1) * c];
                        let cij = cos[i * nm + j];
                        let inv = 1.0 / (qnorm[i] * mnorm[j]);
                        let qq = 1.0 / (qnorm[i] * qnorm[i]);
                        for k in 0..c {
                            gq[i * c + k] += go * (mj[k] * inv - cij * qi[k] * qq);
                        }
                    }
                }
                grads.push((pq, gq));
            }
            if let Some(pm) = pm {
                let mut gm = vec![0.0; nm * c];
                for i in 0..nq {
                    let qi = &qd[i * c..(i + 1) * c];
                    for j in 0..nm {
                        let go = g[i * nm + j];
                        if go == 0.0 {
                            continue;
                        }
                        let mj = &md[j * c..(j + 1) * c];
                        let cij = cos[i * nm + j];
                        let inv = 1.0 / (qnorm[i] * mnorm[j]);
                        let mm = 1.0 / (mnorm[j] * mnorm[j]);
                        for k in 0..c {
                            gm[j * c + k] += go * (qi[k] * inv - cij * mj[k] * mm);
                        }
                    }
                }
                grads.push((pm, gm));
            }
            grads
        })
    }))
}

/// Mean of contiguous row blocks, scaled by `alpha`:
/// `out[i] = alpha / block * sum(rows[i*block .. (i+1)*block])`.
pub fn block_mean_rows(x: &Tensor, block: usize, alpha: f64) -> Result<Tensor> {
    let &[n, c] = x.shape() else {
        return Err(Error::DimMismatch {
            op: "block_mean_rows",
            lhs: x.shape().to_vec(),
            rhs: vec![],
        });
    };
    if block == 0 || n % block != 0 {
        return Err(Error::Config(alloc::format!(
            "block size {block} does not divide row count {n}"
        )));
    }
    let nout = n / block;
    let w = alpha / block as f64;
    let xv = x.values();
    let mut out = vec![0.0; nout * c];
    for i in 0..nout {
        for b in 0..block {
            let row = &xv[(i * block + b) * c..(i * block + b + 1) * c];
            for k in 0..c {
                out[i * c + k] += w * row[k];
            }
        }
    }
    let pid = x.node_id();
    Ok(op_result(vec![nout, c], out, &[x], move || {
        Box::new(move |g| match pid {
            Some(pid) => {
                let mut grad = vec![0.0; n * c];
                for i in 0..nout {
                    for b in 0..block {
                        for k in 0..c {
                            grad[(i * block + b) * c + k] = w * g[i * c + k];
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

    #[test]
    fn matmul_identity_preserves() {
        let id = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let a = Tensor::from_vec(&[2, 2], vec![3.0, 1.0, -2.0, 5.0]);
        let y = matmul(&id, &a).unwrap();
        assert_eq!(y.values(), a.values());
    }

    #[test]
    fn matmul_scalar_product() {
        let a = Tensor::from_vec(&[1, 1], vec![2.0]);
        let b = Tensor::from_vec(&[1, 1], vec![3.0]);
        assert_eq!(matmul(&a, &b).unwrap().values(), &[6.0]);
    }

    #[test]
    fn matmul_matches_nested_loop_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let av: alloc::vec::Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let bv: alloc::vec::Vec<f64> = (0..9).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let a = Tensor::from_vec(&[3, 3], av.clone());
        let b = Tensor::from_vec(&[3, 3], bv.clone());
        let y = matmul(&a, &b).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut expect = 0.0;
                for k in 0..3 {
                    expect += av[i * 3 + k] * bv[k * 3 + j];
                }
                let got = y.values()[i * 3 + j];
                assert!((got - expect).abs() <= 1e-12 * expect.abs().max(1.0));
            }
        }
    }

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let x = Tensor::from_vec(&[3], vec![0.0, 0.0, 0.0]);
        let y = softmax(&x, 0).unwrap();
        for v in y.values() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_closed_form_ln3() {
        let x = Tensor::from_vec(&[2], vec![0.0, 3.0_f64.ln()]);
        let y = softmax(&x, 0).unwrap();
        assert!((y.values()[0] - 0.25).abs() < 1e-12);
        assert!((y.values()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_stable_for_huge_logits() {
        let x = Tensor::from_vec(&[2], vec![1000.0, 1000.0]);
        let y = softmax(&x, 0).unwrap();
        assert_eq!(y.values(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let x = Tensor::zeros(&[2, 2]);
        assert!(matches!(
            softmax(&x, 2),
            Err(Error::InvalidAxis { axis: 2, rank: 2 })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let x = Tensor::from_vec(&[2, 3], vec![1.0, -5.0, 2.5, 0.0, 0.1, -0.1]);
        let y = softmax(&x, 1).unwrap();
        for r in 0..2 {
            let s: f64 = y.values()[r * 3..(r + 1) * 3].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(y.values()[r * 3..(r + 1) * 3].iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn cosine_matrix_orthonormal_rows() {
        let q = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]);
        let m = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]);
        let cosv = cosine_matrix(&q, &m).unwrap();
        assert!((cosv.values()[0] - 1.0).abs() < 1e-15);
        assert!(cosv.values()[1].abs() < 1e-15);
    }

    #[test]
    fn cosine_is_scale_invariant_in_query() {
        let q1 = Tensor::from_vec(&[1, 3], vec![0.2, -0.5, 1.0]);
        let q2 = Tensor::from_vec(&[1, 3], vec![0.2 * 7.5, -0.5 * 7.5, 7.5]);
        let m = Tensor::from_vec(&[2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let c1 = cosine_matrix(&q1, &m).unwrap();
        let c2 = cosine_matrix(&q2, &m).unwrap();
        for (a, b) in c1.values().iter().zip(c2.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn block_mean_rows_hand_case() {
        let x = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 3.0, 2.0]);
        let y = block_mean_rows(&x, 2, 1.0).unwrap();
        assert_eq!(y.values(), &[2.0, 1.0]);
    }

    #[test]
    fn block_mean_rejects_non_divisor() {
        let x = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            block_mean_rows(&x, 2, 1.0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn block_mean_gradient_distributes() {
        let g = Graph::new();
        let x = g.leaf(&[4, 1], vec![1.0, 2.0, 3.0, 4.0]);
        let y = block_mean_rows(&x, 2, 1.0).unwrap();
        let s = ops::sum(&ops::mul(&y, &y).unwrap());
        let grads = backward(&s).unwrap();
        // y = [1.5, 3.5]; ds/dy = [3, 7]; dx = 0.5 * each
        assert_eq!(grads.get(&x).unwrap(), &[1.5, 1.5, 3.5, 3.5]);
    }
}
