//! Expectile value regression.

use ndarray::{Array2, ArrayView2};

use crate::base::critics::VNetwork;
use crate::error::{Error, Result};
use crate::numkit::mlp::MlpGrads;

pub const DEFAULT_EXPECTILE: f64 = 0.7;

/// `|τ - 1{u < 0}| u²`.
pub fn expectile_loss(u: f64, tau: f64) -> f64 {
    let w = if u < 0.0 { 1.0 - tau } else { tau };
    w * u * u
}

/// Mean expectile loss of `u = q_target - V(s)` and its gradient for V.
pub fn expectile_loss_grad(v: &VNetwork, obs: ArrayView2<f64>, q_target: &[f64], tau: f64) -> Result<(f64, MlpGrads)> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::contract(format!("expectile {tau} outside (0, 1)")));
    }
    let n = q_target.len();
    let tape = v.net.forward_tape(obs.to_owned())?;
    let mut up = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let u = q_target[i] - tape.output[[i, 0]];
        let w = if u < 0.0 { 1.0 - tau } else { tau };
        loss += w * u * u / n as f64;
        up[[i, 0]] = -2.0 * w * u / n as f64;
    }
    Ok((loss, v.net.backward(&tape, up.view())?.0))
}
