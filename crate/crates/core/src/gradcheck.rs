//! Central-difference verification of recorded adjoints.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{backward, Graph, Tensor};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Max relative error between the analytic gradient of `f` at `x` and a
/// central-difference estimate:
/// `max_i |analytic_i - fd_i| / max(1, |analytic_i|)`.
///
/// `f` must be a deterministic scalar function; it is evaluated twice at `x`
/// and a mismatch is reported as [`Error::NonDeterministic`].
pub fn grad_check<F>(f: F, shape: &[usize], x: &[f64], h: f64) -> Result<f64>
where
    F: Fn(&Graph, &Tensor) -> Result<Tensor>,
{
    let eval = |vals: &[f64]| -> Result<f64> {
        let g = Graph::new();
        let t = g.leaf(shape, vals.to_vec());
        let y = f(&g, &t)?;
        if y.numel() != 1 {
            return Err(Error::Usage(alloc::format!(
                "grad_check function must be scalar, got shape {:?}",
                y.shape()
            )));
        }
        Ok(y.item())
    };

    let first = eval(x)?;
    let second = eval(x)?;
    if first != second {
        return Err(Error::NonDeterministic { first, second });
    }

    // analytic gradient
    let g = Graph::new();
    let t = g.leaf(shape, x.to_vec());
    let y = f(&g, &t)?;
    if y.numel() != 1 {
        return Err(Error::Usage(alloc::format!(
            "grad_check function must be scalar, got shape {:?}",
            y.shape()
        )));
    }
    let grads = backward(&y)?;
    let analytic: Vec<f64> = match grads.get(&t) {
        Some(g) => g.to_vec(),
        None => alloc::vec![0.0; x.len()],
    };

    let mut worst = 0.0_f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + h;
        let fp = eval(&probe)?;
        probe[i] = x[i] - h;
        let fm = eval(&probe)?;
        probe[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}
