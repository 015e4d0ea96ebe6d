//! Gradient steps for the universal policy and the balance model.
//!
//! Every `*_loss_grad` function is pure: it returns a loss to minimise and its
//! gradient for one network, given all randomness as explicit arguments.

use ndarray::{s, Array2, ArrayView2};

use crate::base::critics::{BatchActions, QNetwork};
use crate::error::{Error, Result};
use crate::family::models::{BalanceModel, PolicyHead, UniversalModel};
use crate::numkit::adam::AdamState;
use crate::numkit::heads::softmax;
use crate::numkit::mlp::MlpGrads;

pub const DEFAULT_W_MAX: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightStats {
    pub weights: Vec<f64>,
    pub capped: usize,
    pub skipped: usize,
}

/// `min(exp(β (Q - V)), w_max)` per sample. Non-finite advantages get weight
/// zero and are counted as skipped.
pub fn imitation_weights(q: &[f64], v: &[f64], betas: &[f64], w_max: f64) -> WeightStats {
    let mut st = WeightStats::default();
    for ((&qi, &vi), &b) in q.iter().zip(v).zip(betas) {
        let adv = qi - vi;
        if !adv.is_finite() || !b.is_finite() {
            st.skipped += 1;
            st.weights.push(0.0);
            continue;
        }
        let w = (b * adv).exp();
        if w >= w_max {
            st.capped += 1;
            st.weights.push(w_max);
        } else {
            st.weights.push(w);
        }
    }
    st
}

/// `-mean_i w_i log π_u(a_i | s_i, enc(β_i))` and its gradient.
pub fn universal_loss_grad(
    u: &UniversalModel,
    obs: ArrayView2<f64>,
    actions: &BatchActions,
    betas: &[f64],
    weights: &[f64],
) -> Result<(f64, MlpGrads)> {
    let n = betas.len();
    if actions.len() != n || weights.len() != n {
        return Err(Error::contract("batch sizes differ"));
    }
    let tape = u.net.forward_tape(u.inputs(obs, betas)?)?;
    let mut up = Array2::zeros(tape.output.dim());
    let mut loss = 0.0;
    for i in 0..n {
        let raw = tape.output.row(i);
        let raw = raw.as_slice().unwrap();
        let (lp, g) = match (&u.head, actions) {
            (PolicyHead::Softmax(h), BatchActions::Discrete(a)) => h.log_prob_grad(raw, a[i]),
            (PolicyHead::Gaussian(h), BatchActions::Continuous(a)) => h.log_prob_grad(raw, a.row(i).as_slice().unwrap())?,
            _ => return Err(Error::contract("action kind does not match policy head")),
        };
        if weights[i] == 0.0 {
            continue;
        }
        loss -= weights[i] * lp / n as f64;
        for (k, gk) in g.into_iter().enumerate() {
            up[[i, k]] = -weights[i] * gk / n as f64;
        }
    }
    Ok((loss, u.net.backward(&tape, up.view())?.0))
}

/// One step of the weighted log-likelihood ascent. Returns the mean loss.
pub fn universal_update(
    u: &mut UniversalModel,
    opt: &mut AdamState,
    obs: ArrayView2<f64>,
    actions: &BatchActions,
    betas: &[f64],
    weights: &[f64],
) -> Result<f64> {
    let (loss, grads) = universal_loss_grad(u, obs, actions, betas, weights)?;
    opt.step_mlp(&mut u.net, &grads)?;
    Ok(loss)
}

/// Expected value of the policy's action under `q`, and its gradient with
/// respect to the raw policy outputs, one row per sample.
///
/// Discrete heads use the exact expectation over the softmax. Gaussian heads
/// use a reparameterised sample with the given noise (zero noise gives the
/// squashed mean).
pub fn policy_value_grad(
    q: &QNetwork,
    q_target: bool,
    obs: ArrayView2<f64>,
    head: &PolicyHead,
    raw: ArrayView2<f64>,
    action_noise: Option<ArrayView2<f64>>,
) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = obs.nrows();
    let mut grad = Array2::zeros(raw.dim());
    match head {
        PolicyHead::Softmax(_) => {
            let qa = q.q_all(obs, q_target)?;
            let mut values = Vec::with_capacity(n);
            for i in 0..n {
                let p = softmax(raw.row(i).as_slice().unwrap());
                let j: f64 = p.iter().zip(qa.row(i)).map(|(pk, qk)| pk * qk).sum();
                for k in 0..p.len() {
                    grad[[i, k]] = p[k] * (qa[[i, k]] - j);
                }
                values.push(j);
            }
            Ok((values, grad))
        }
        PolicyHead::Gaussian(g) => {
            let d = g.dim();
            let mut acts = Array2::zeros((n, d));
            let mut jacs = Vec::with_capacity(n);
            let zero = vec![0.0; d];
            for i in 0..n {
                let r = raw.row(i);
                let r = r.as_slice().unwrap();
                let noise = match &action_noise {
                    Some(e) => e.row(i).to_vec(),
                    None => zero.clone(),
                };
                let smp = g.sample(r, &noise)?;
                for k in 0..d {
                    acts[[i, k]] = smp.action[k];
                }
                jacs.push(g.sample_jacobian(r, &noise)?);
            }
            let (values, dq_da) = q.q_and_action_grad(obs, acts.view(), q_target)?;
            for (i, jac) in jacs.iter().enumerate() {
                for k in 0..d {
                    grad[[i, k]] = dq_da[[i, k]] * jac.d_action_d_mean[k];
                    grad[[i, d + k]] = dq_da[[i, k]] * jac.d_action_d_log_std[k];
                }
            }
            Ok((values, grad))
        }
    }
}

/// Randomness consumed by one balance step.
#[derive(Debug, Clone, PartialEq)]
pub struct BalanceNoise {
    /// Standard normal per sample for the reparameterised β. `None` uses the mean.
    pub beta: Option<Vec<f64>>,
    /// Standard normal per sample and action dimension for continuous heads.
    /// `None` evaluates Q at the policy mean.
    pub action: Option<Array2<f64>>,
}

/// `-mean_i Q(s_i, π_u(s_i, enc(β_i)))` with `β_i` drawn from the balance
/// model, and its gradient for the balance model only.
pub fn balance_loss_grad(
    b: &BalanceModel,
    u: &UniversalModel,
    q: &QNetwork,
    q_target: bool,
    obs: ArrayView2<f64>,
    noise: &BalanceNoise,
) -> Result<(f64, MlpGrads)> {
    let n = obs.nrows();
    let btape = b.net.forward_tape(obs.to_owned())?;
    let mut betas = Vec::with_capacity(n);
    let mut dbeta = Vec::with_capacity(n);
    for i in 0..n {
        let r = btape.output.row(i);
        let r = r.as_slice().unwrap();
        let e = noise.beta.as_ref().map_or(0.0, |v| v[i]);
        betas.push(b.head.sample(r, &[e])?.action[0]);
        let jac = b.head.sample_jacobian(r, &[e])?;
        dbeta.push((jac.d_action_d_mean[0], jac.d_action_d_log_std[0]));
    }
    let utape = u.net.forward_tape(u.inputs(obs, &betas)?)?;
    let (values, dj_draw) = policy_value_grad(q, q_target, obs, &u.head, utape.output.view(), noise.action.as_ref().map(|a| a.view()))?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Q in balance update".into()));
    }
    let dx = u.net.input_grad(&utape, dj_draw.view())?;
    let enc_grad = dx.slice(s![.., u.state_dim..]);
    let mut up = Array2::zeros((n, 2));
    for i in 0..n {
        let de = u.encoder().derivative(betas[i]);
        let dj_dbeta: f64 = enc_grad.row(i).iter().zip(&de).map(|(a, b)| a * b).sum();
        up[[i, 0]] = -dj_dbeta * dbeta[i].0 / n as f64;
        up[[i, 1]] = -dj_dbeta * dbeta[i].1 / n as f64;
    }
    let objective = values.iter().sum::<f64>() / n as f64;
    Ok((-objective, b.net.backward(&btape, up.view())?.0))
}

/// One ascent step on the balance objective. Returns the mean objective.
pub fn balance_update(
    b: &mut BalanceModel,
    opt: &mut AdamState,
    u: &UniversalModel,
    q: &QNetwork,
    q_target: bool,
    obs: ArrayView2<f64>,
    noise: &BalanceNoise,
) -> Result<f64> {
    let (loss, grads) = balance_loss_grad(b, u, q, q_target, obs, noise)?;
    opt.step_mlp(&mut b.net, &grads)?;
    Ok(-loss)
}
