//! Conservative Q-learning: penalised critic loss and the entropy-regularised
//! policy objective with a per-state coefficient.

use ndarray::{Array2, ArrayView2};

use crate::base::critics::{concat_cols, BatchActions, QNetwork};
use crate::error::{Error, Result};
use crate::family::models::{PolicyHead, UniversalModel};
use crate::numkit::heads::{log_softmax, softmax};
use crate::numkit::mlp::MlpGrads;

pub const DEFAULT_ALPHA_CQL: f64 = 1.0;
pub const N_UNIFORM: usize = 8;
pub const N_POLICY: usize = 8;

/// Actions entering the log-sum-exp term.
#[derive(Debug, Clone, PartialEq)]
pub enum CqlPenalty {
    /// Exact enumeration of a discrete action set.
    Enumerate,
    /// `per_state` sampled actions per state, row `i * per_state + j`, with the
    /// log-density of the proposal that produced each one.
    Sampled {
        actions: Array2<f64>,
        log_density: Vec<f64>,
        per_state: usize,
    },
}

fn logsumexp(xs: &[f64]) -> (f64, Vec<f64>) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (m + s.ln(), e.into_iter().map(|v| v / s).collect())
}

/// `mean (Q(s,a) - y)² + α mean [lse_a' Q(s,a') - Q(s,a)]` and its gradient.
///
/// For sampled penalties the log-sum-exp is the importance-weighted estimate
/// `log (1/N) Σ_j exp(Q(s,a_j) - log q(a_j))`.
pub fn cql_loss_grad(
    q: &QNetwork,
    obs: ArrayView2<f64>,
    actions: &BatchActions,
    targets: &[f64],
    penalty: &CqlPenalty,
    alpha: f64,
) -> Result<(f64, MlpGrads)> {
    let n = targets.len();
    let nf = n as f64;
    let tape = q.tape(obs, actions)?;
    let mut loss = 0.0;
    match (actions, penalty) {
        (BatchActions::Discrete(a), CqlPenalty::Enumerate) => {
            let mut up = Array2::zeros(tape.output.dim());
            for i in 0..n {
                let row = tape.output.row(i).to_vec();
                let e = row[a[i]] - targets[i];
                let (lse, w) = logsumexp(&row);
                loss += e * e / nf + alpha * (lse - row[a[i]]) / nf;
                for k in 0..row.len() {
                    up[[i, k]] = alpha * w[k] / nf;
                }
                up[[i, a[i]]] += 2.0 * e / nf - alpha / nf;
            }
            Ok((loss, q.net.backward(&tape, up.view())?.0))
        }
        (BatchActions::Continuous(_), CqlPenalty::Sampled { actions: pa, log_density, per_state }) => {
            let m = *per_state;
            if pa.nrows() != n * m || log_density.len() != n * m {
                return Err(Error::contract("penalty sample count does not match batch"));
            }
            let mut up = Array2::zeros((n, 1));
            // Repeat each state per sampled action.
            let mut rep = Array2::zeros((n * m, obs.ncols()));
            for i in 0..n {
                for j in 0..m {
                    rep.row_mut(i * m + j).assign(&obs.row(i));
                }
            }
            let ptape = q.net.forward_tape(concat_cols(rep.view(), pa.view()))?;
            let mut pup = Array2::zeros((n * m, 1));
            let ln_m = (m as f64).ln();
            for i in 0..n {
                let qd = tape.output[[i, 0]];
                let e = qd - targets[i];
                let xs: Vec<f64> = (0..m).map(|j| ptape.output[[i * m + j, 0]] - log_density[i * m + j]).collect();
                let (lse, w) = logsumexp(&xs);
                loss += e * e / nf + alpha * (lse - ln_m - qd) / nf;
                up[[i, 0]] = 2.0 * e / nf - alpha / nf;
                for j in 0..m {
                    pup[[i * m + j, 0]] = alpha * w[j] / nf;
                }
            }
            let (mut g, _) = q.net.backward(&tape, up.view())?;
            let (gp, _) = q.net.backward(&ptape, pup.view())?;
            g.add_assign(&gp);
            Ok((loss, g))
        }
        _ => Err(Error::contract("penalty kind does not match action space")),
    }
}

/// `-mean_i [α_i Q(s_i, a_i) - log π_u(a_i | s_i, enc(α_i))]` with `a_i`
/// reparameterised from `noise` (exact expectation for discrete heads), and
/// its gradient for the universal model.
pub fn cql_policy_loss_grad(
    u: &UniversalModel,
    q: &QNetwork,
    obs: ArrayView2<f64>,
    alphas: &[f64],
    noise: Option<ArrayView2<f64>>,
) -> Result<(f64, MlpGrads)> {
    let n = alphas.len();
    let nf = n as f64;
    let tape = u.net.forward_tape(u.inputs(obs, alphas)?)?;
    let mut up = Array2::zeros(tape.output.dim());
    let mut objective = 0.0;
    match &u.head {
        PolicyHead::Softmax(_) => {
            let qa = q.q_all(obs, false)?;
            for i in 0..n {
                let raw = tape.output.row(i).to_vec();
                let p = softmax(&raw);
                let lp = log_softmax(&raw);
                let g: Vec<f64> = (0..p.len()).map(|k| alphas[i] * qa[[i, k]] - lp[k]).collect();
                let j: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
                if !j.is_finite() {
                    return Err(Error::NonFinite("Q in policy objective".into()));
                }
                objective += j / nf;
                for k in 0..p.len() {
                    up[[i, k]] = -p[k] * (g[k] - j) / nf;
                }
            }
        }
        PolicyHead::Gaussian(h) => {
            let d = h.dim();
            let noise = noise.ok_or_else(|| Error::contract("gaussian policy objective needs noise"))?;
            let mut acts = Array2::zeros((n, d));
            let mut samples = Vec::with_capacity(n);
            for i in 0..n {
                let raw = tape.output.row(i).to_vec();
                let eps = noise.row(i).to_vec();
                let smp = h.sample(&raw, &eps)?;
                acts.row_mut(i).assign(&ndarray::ArrayView1::from(&smp.action));
                samples.push((smp.log_prob, h.sample_jacobian(&raw, &eps)?));
            }
            let (qv, dq) = q.q_and_action_grad(obs, acts.view(), false)?;
            for i in 0..n {
                let (lp, jac) = &samples[i];
                let j = alphas[i] * qv[i] - lp;
                if !j.is_finite() {
                    return Err(Error::NonFinite("Q in policy objective".into()));
                }
                objective += j / nf;
                for k in 0..d {
                    let dj_mean = alphas[i] * dq[[i, k]] * jac.d_action_d_mean[k] - jac.d_logp_d_mean[k];
                    let dj_ls = alphas[i] * dq[[i, k]] * jac.d_action_d_log_std[k] - jac.d_logp_d_log_std[k];
                    up[[i, k]] = -dj_mean / nf;
                    up[[i, d + k]] = -dj_ls / nf;
                }
            }
        }
    }
    Ok((-objective, u.net.backward(&tape, up.view())?.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logsumexp_stable() {
        let (l, w) = logsumexp(&[1000.0, 1000.0]);
        assert!((l - (1000.0 + 2f64.ln())).abs() < 1e-9);
        assert_eq!(w, vec![0.5, 0.5]);
    }
}
