//! Exact solutions of the KL-constrained policy improvement problems on
//! tabular MDPs, and checks of the relations between them.
//!
//! Policies and advantages are flat `[s * A + a]` vectors, like [`FiniteMdp`].

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::Serialize;

use crate::envs::finite_mdp::{random_finite_mdp_with, FiniteMdp, StateWeighting};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const BETA_BRACKET: f64 = 1e6;
pub const KL_TOLERANCE: f64 = 1e-10;
pub const MAX_BISECTIONS: usize = 200;

/// Exact `Q`, `V` and `A = Q - V` of a reference policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Advantages {
    pub n_states: usize,
    pub n_actions: usize,
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub a: Vec<f64>,
}

impl Advantages {
    /// Advantages given directly, for hand-built instances.
    pub fn from_table(n_states: usize, n_actions: usize, a: Vec<f64>) -> Result<Self> {
        if a.len() != n_states * n_actions {
            return Err(Error::contract("advantage table size"));
        }
        Ok(Self { n_states, n_actions, q: a.clone(), v: vec![0.0; n_states], a })
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.a[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// `max_a A(s, a) - min_a A(s, a)`.
    pub fn spread(&self, s: usize) -> f64 {
        let r = self.row(s);
        r.iter().copied().fold(f64::NEG_INFINITY, f64::max) - r.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Policy evaluation by a linear solve: `V = (I - γ P_π)^{-1} r_π`,
/// `Q = r + γ P V`.
pub fn advantages(mdp: &FiniteMdp, pi_ref: &[f64]) -> Result<Advantages> {
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    if pi_ref.len() != ns * na {
        return Err(Error::contract("reference policy size"));
    }
    if pi_ref.iter().any(|&p| p <= 0.0) {
        return Err(Error::contract("reference policy must be fully supported"));
    }
    let m = DMatrix::identity(ns, ns) - mdp.policy_transition(pi_ref) * mdp.gamma;
    let r_pi = DVector::from_fn(ns, |s, _| (0..na).map(|a| pi_ref[s * na + a] * mdp.r(s, a)).sum());
    let v = m.lu().solve(&r_pi).ok_or_else(|| Error::Singular("policy evaluation".into()))?;
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = mdp.r(s, a) + mdp.gamma * (0..ns).map(|s2| mdp.p(s, a, s2) * v[s2]).sum::<f64>();
        }
    }
    // V as the policy average of Q, so the advantage identity holds to rounding.
    let v: Vec<f64> = (0..ns).map(|s| (0..na).map(|a| pi_ref[s * na + a] * q[s * na + a]).sum()).collect();
    let a = (0..ns * na).map(|i| q[i] - v[i / na]).collect();
    Ok(Advantages { n_states: ns, n_actions: na, q, v, a })
}

/// `π_β(a) exp(β A(a)) / Z` and `ln Z`, computed in the log domain.
pub fn tilt(pi_b: &[f64], adv: &[f64], beta: f64) -> (Vec<f64>, f64) {
    let logits: Vec<f64> = pi_b.iter().zip(adv).map(|(p, a)| p.ln() + beta * a).collect();
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
    let pi = logits.iter().map(|l| (l - m).exp() / z).collect();
    (pi, m + z.ln())
}

/// The β → ∞ limit of the tilt: `π_β` restricted to the maximising actions.
pub fn greedy_limit(pi_b: &[f64], adv: &[f64]) -> Vec<f64> {
    let max = adv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = 1e-12 * (1.0 + max.abs());
    let mass: f64 = pi_b.iter().zip(adv).filter(|(_, &a)| a >= max - tol).map(|(p, _)| p).sum();
    pi_b.iter()
        .zip(adv)
        .map(|(p, &a)| if a >= max - tol { p / mass } else { 0.0 })
        .collect()
}

/// `KL(π ‖ π_β)` with `0 ln 0 = 0`.
pub fn kl(pi: &[f64], pi_b: &[f64]) -> f64 {
    pi.iter().zip(pi_b).filter(|(p, _)| **p > 0.0).map(|(p, q)| p * (p / q).ln()).sum::<f64>().max(0.0)
}

fn expected(pi: &[f64], adv: &[f64]) -> f64 {
    pi.iter().zip(adv).map(|(p, a)| p * a).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstrainedSolution {
    pub policy: Vec<f64>,
    pub per_state_kl: Vec<f64>,
    /// `Σ_s d(s) Σ_a π(a|s) A(s, a)` under the behaviour state distribution.
    pub objective: f64,
    /// `β_s`; infinite where the greedy limit was returned.
    pub per_state_temperature: Vec<f64>,
    /// `ln Z_s` of the tilt at `β_s` (unused where the temperature is infinite).
    pub log_partition: Vec<f64>,
}

fn check_dims(mdp: &FiniteMdp, adv: &Advantages) -> Result<()> {
    if adv.n_states != mdp.n_states || adv.n_actions != mdp.n_actions {
        return Err(Error::contract("advantages do not match the MDP"));
    }
    Ok(())
}

/// Per-state tilt at temperature `beta`, or the greedy limit when infinite.
fn state_policy(pi_b: &[f64], adv: &[f64], beta: f64) -> (Vec<f64>, f64) {
    if beta.is_infinite() {
        (greedy_limit(pi_b, adv), f64::NAN)
    } else {
        tilt(pi_b, adv, beta)
    }
}

fn assemble(mdp: &FiniteMdp, adv: &Advantages, betas: Vec<f64>) -> ConstrainedSolution {
    let na = mdp.n_actions;
    let mut policy = Vec::with_capacity(mdp.n_states * na);
    let mut per_state_kl = Vec::with_capacity(mdp.n_states);
    let mut log_partition = Vec::with_capacity(mdp.n_states);
    let mut objective = 0.0;
    for (s, &b) in betas.iter().enumerate() {
        let (pi, lz) = state_policy(mdp.pi_b(s), adv.row(s), b);
        per_state_kl.push(kl(&pi, mdp.pi_b(s)));
        objective += mdp.d_behavior[s] * expected(&pi, adv.row(s));
        log_partition.push(lz);
        policy.extend(pi);
    }
    ConstrainedSolution {
        policy,
        per_state_kl,
        objective,
        per_state_temperature: betas,
        log_partition,
    }
}

/// Bisection for the smallest temperature whose KL reaches `eps`, given a
/// nondecreasing `kl_at`. Returns infinity when even the greedy limit stays
/// within budget.
fn temperature_for(eps: f64, kl_greedy: f64, kl_at: impl Fn(f64) -> f64) -> f64 {
    if eps == 0.0 {
        return 0.0;
    }
    if eps >= kl_greedy {
        return f64::INFINITY;
    }
    let (mut lo, mut hi) = (0.0, BETA_BRACKET);
    if kl_at(hi) <= eps {
        return hi;
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let k = kl_at(mid);
        if (k - eps).abs() < KL_TOLERANCE {
            return mid;
        }
        if k < eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Maximises `Σ_a π(a|s) A(s,a)` per state subject to `KL(π(·|s) ‖ π_β(·|s)) ≤ ε_s`.
pub fn solve_pointwise(mdp: &FiniteMdp, adv: &Advantages, eps: &[f64]) -> Result<ConstrainedSolution> {
    check_dims(mdp, adv)?;
    if eps.len() != mdp.n_states {
        return Err(Error::contract("one budget per state"));
    }
    if let Some(e) = eps.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::contract(format!("budget {e} must be non-negative")));
    }
    let betas = (0..mdp.n_states)
        .map(|s| {
            let (pb, a) = (mdp.pi_b(s), adv.row(s));
            let kg = kl(&greedy_limit(pb, a), pb);
            temperature_for(eps[s], kg, |b| kl(&tilt(pb, a, b).0, pb))
        })
        .collect();
    Ok(assemble(mdp, adv, betas))
}

/// Maximises the objective subject to `Σ_s d(s) KL_s ≤ ε` with one shared temperature.
pub fn solve_distributional(mdp: &FiniteMdp, adv: &Advantages, eps: f64) -> Result<ConstrainedSolution> {
    check_dims(mdp, adv)?;
    if !(eps >= 0.0) {
        return Err(Error::contract(format!("budget {eps} must be non-negative")));
    }
    let ns = mdp.n_states;
    let agg = |b: f64| -> f64 {
        (0..ns)
            .map(|s| mdp.d_behavior[s] * kl(&state_policy(mdp.pi_b(s), adv.row(s), b).0, mdp.pi_b(s)))
            .sum()
    };
    let beta = temperature_for(eps, agg(f64::INFINITY), agg);
    Ok(assemble(mdp, adv, vec![beta; ns]))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop1Report {
    pub epsilon: f64,
    pub j_dist: f64,
    pub j_point_matched: f64,
    pub j_point_improved: f64,
    /// `J_point_matched ≥ J_dist - 1e-9`.
    pub holds: bool,
    /// A re-allocation beat the distributional optimum by at least 1e-6.
    pub strict_improvement: bool,
    pub budgets: Vec<f64>,
}

pub const PROP1_SLACK: f64 = 1e-9;
pub const STRICT_MARGIN: f64 = 1e-6;

/// Budgets with the same `d`-weighted sum that move a fraction `t` of every
/// other state's budget onto state `to`.
pub fn shift_budget(d: &[f64], eps: &[f64], to: usize, t: f64) -> Vec<f64> {
    let moved: f64 = (0..eps.len()).filter(|&s| s != to).map(|s| d[s] * eps[s] * t).sum();
    (0..eps.len())
        .map(|s| if s == to { eps[s] + moved / d[to] } else { eps[s] * (1.0 - t) })
        .collect()
}

/// Lemma-1 budgets from the distributional solution, the matched point-wise
/// solution, and a search over budget shifts toward the widest-spread state.
pub fn verify_prop1(mdp: &FiniteMdp, adv: &Advantages, eps: f64) -> Result<Prop1Report> {
    let dist = solve_distributional(mdp, adv, eps)?;
    let budgets = dist.per_state_kl.clone();
    let matched = solve_pointwise(mdp, adv, &budgets)?;
    let to = (0..mdp.n_states)
        .max_by(|&a, &b| adv.spread(a).total_cmp(&adv.spread(b)))
        .ok_or(Error::Empty("state set"))?;
    let mut best = matched.objective;
    if mdp.d_behavior[to] > 0.0 {
        for k in 1..=20 {
            let shifted = shift_budget(&mdp.d_behavior, &budgets, to, k as f64 / 20.0);
            best = best.max(solve_pointwise(mdp, adv, &shifted)?.objective);
        }
    }
    Ok(Prop1Report {
        epsilon: eps,
        j_dist: dist.objective,
        j_point_matched: matched.objective,
        j_point_improved: best,
        holds: matched.objective >= dist.objective - PROP1_SLACK,
        strict_improvement: best >= dist.objective + STRICT_MARGIN,
        budgets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prop2Report {
    pub max_l1_gap: f64,
    pub normalization_residuals: Vec<f64>,
}

pub const PROP2_GAP: f64 = 1e-6;

/// Compares the point-wise solution with `π_β exp(β_s A) / Z_s` rebuilt from
/// the recorded temperatures and partition functions.
pub fn verify_prop2(mdp: &FiniteMdp, adv: &Advantages, eps: &[f64]) -> Result<Prop2Report> {
    let sol = solve_pointwise(mdp, adv, eps)?;
    let na = mdp.n_actions;
    let mut gap: f64 = 0.0;
    let mut residuals = Vec::with_capacity(mdp.n_states);
    for s in 0..mdp.n_states {
        let pb = mdp.pi_b(s);
        let b = sol.per_state_temperature[s];
        let closed: Vec<f64> = if b.is_infinite() {
            greedy_limit(pb, adv.row(s))
        } else {
            let lz = sol.log_partition[s];
            pb.iter().zip(adv.row(s)).map(|(p, a)| p * (b * a - lz).exp()).collect()
        };
        let got = &sol.policy[s * na..(s + 1) * na];
        gap = gap.max(got.iter().zip(&closed).map(|(x, y)| (x - y).abs()).sum());
        residuals.push((got.iter().sum::<f64>() - 1.0).abs());
    }
    Ok(Prop2Report {
        max_l1_gap: gap,
        normalization_residuals: residuals,
    })
}

/// Uniform behaviour over two actions, uniform transitions, zero rewards:
/// a chassis for hand-written advantage tables.
pub fn two_action_chassis(n_states: usize) -> Result<FiniteMdp> {
    let p = vec![1.0 / n_states as f64; n_states * 2 * n_states];
    FiniteMdp::new(n_states, 2, p, vec![0.0; n_states * 2], 0.9, vec![0.5; n_states * 2], StateWeighting::Discounted)
}

/// Two states with advantage spreads (+1, -1) and (+0.01, -0.01).
pub fn asymmetric_instance() -> Result<(FiniteMdp, Advantages)> {
    Ok((two_action_chassis(2)?, Advantages::from_table(2, 2, vec![1.0, -1.0, 0.01, -0.01])?))
}

/// Three states sharing the advantage profile (+0.5, -0.5).
pub fn symmetric_instance() -> Result<(FiniteMdp, Advantages)> {
    Ok((two_action_chassis(3)?, Advantages::from_table(3, 2, vec![0.5, -0.5, 0.5, -0.5, 0.5, -0.5])?))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSettings {
    pub instances: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub gamma: f64,
    pub epsilons: Vec<f64>,
    pub weighting: StateWeighting,
}

/// One random instance with its behaviour advantages.
pub fn random_instance(settings: &OracleSettings, rng: &mut Rng) -> Result<(FiniteMdp, Advantages)> {
    let ns = rng.random_range(2..=settings.max_states);
    let na = rng.random_range(2..=settings.max_actions);
    let mdp = random_finite_mdp_with(ns, na, settings.gamma, settings.weighting, rng)?;
    let adv = advantages(&mdp, &mdp.behavior)?;
    Ok((mdp, adv))
}

/// Random point-wise budgets in `[0, 0.5)`; a quarter are exactly zero.
pub fn random_budgets(n_states: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n_states)
        .map(|_| if rng.random_range(0..4) == 0 { 0.0 } else { rng.random_range(0.0..0.5) })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub index: usize,
    pub n_states: usize,
    pub n_actions: usize,
    pub prop1: Vec<Prop1Report>,
    pub prop2: Prop2Report,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationReport {
    pub instances: Vec<InstanceReport>,
    pub prop1_passes: usize,
    pub prop1_cases: usize,
    pub prop2_passes: usize,
    pub symmetric: Prop1Report,
    pub asymmetric: Prop1Report,
    pub all_pass: bool,
}

pub fn certify(settings: &OracleSettings, rng: &mut Rng) -> Result<CertificationReport> {
    if settings.max_states < 2 || settings.max_actions < 2 {
        return Err(Error::contract("random instances need at least 2 states and 2 actions"));
    }
    let mut instances = Vec::with_capacity(settings.instances);
    let (mut p1, mut p1n, mut p2) = (0, 0, 0);
    for index in 0..settings.instances {
        let (mdp, adv) = random_instance(settings, rng)?;
        let prop1 = settings
            .epsilons
            .iter()
            .map(|&e| verify_prop1(&mdp, &adv, e))
            .collect::<Result<Vec<_>>>()?;
        let budgets = random_budgets(mdp.n_states, rng);
        let prop2 = verify_prop2(&mdp, &adv, &budgets)?;
        let ok1 = prop1.iter().filter(|r| r.holds).count();
        let ok2 = prop2.max_l1_gap < PROP2_GAP && prop2.normalization_residuals.iter().all(|r| *r < 1e-9);
        p1 += ok1;
        p1n += prop1.len();
        p2 += ok2 as usize;
        instances.push(InstanceReport {
            index,
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            pass: ok1 == prop1.len() && ok2,
            prop1,
            prop2,
        });
    }
    let (m, a) = symmetric_instance()?;
    let symmetric = verify_prop1(&m, &a, 0.05)?;
    let (m, a) = asymmetric_instance()?;
    let asymmetric = verify_prop1(&m, &a, 0.05)?;
    Ok(CertificationReport {
        all_pass: instances.iter().all(|i| i.pass),
        instances,
        prop1_passes: p1,
        prop1_cases: p1n,
        prop2_passes: p2,
        symmetric,
        asymmetric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::finite_mdp::random_finite_mdp;
    use crate::rng::seeded;

    #[test]
    fn myopic_advantages() {
        let mut rng = seeded(5);
        let mut mdp = random_finite_mdp(3, 2, 0.9, &mut rng).unwrap();
        mdp.gamma = 0.0;
        let adv = advantages(&mdp, &mdp.behavior.clone()).unwrap();
        for s in 0..3 {
            let mean: f64 = (0..2).map(|a| mdp.pi_b(s)[a] * mdp.r(s, a)).sum();
            for a in 0..2 {
                assert!((adv.a[s * 2 + a] - (mdp.r(s, a) - mean)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn advantage_identity() {
        let mut rng = seeded(6);
        let mdp = random_finite_mdp(4, 3, 0.9, &mut rng).unwrap();
        let adv = advantages(&mdp, &mdp.behavior).unwrap();
        for s in 0..4 {
            assert!(expected(mdp.pi_b(s), adv.row(s)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_budget_returns_behaviour() {
        let mut rng = seeded(7);
        let mdp = random_finite_mdp(3, 3, 0.9, &mut rng).unwrap();
        let adv = advantages(&mdp, &mdp.behavior).unwrap();
        let sol = solve_pointwise(&mdp, &adv, &[0.0; 3]).unwrap();
        for (p, b) in sol.policy.iter().zip(&mdp.behavior) {
            assert!((p - b).abs() < 1e-12);
        }
        assert!(sol.objective.abs() < 1e-12);
        let d = solve_distributional(&mdp, &adv, 0.0).unwrap();
        assert!(d.objective.abs() < 1e-12);
    }

    #[test]
    fn flat_advantages_tilt_nothing() {
        let mdp = two_action_chassis(2).unwrap();
        let adv = Advantages::from_table(2, 2, vec![0.3, 0.3, -1.0, -1.0]).unwrap();
        let sol = solve_pointwise(&mdp, &adv, &[0.2, 0.4]).unwrap();
        for (p, b) in sol.policy.iter().zip(&mdp.behavior) {
            assert!((p - b).abs() < 1e-12);
        }
    }

    #[test]
    fn budget_is_exhausted_when_active() {
        let mdp = two_action_chassis(1).unwrap();
        let adv = Advantages::from_table(1, 2, vec![1.0, -1.0]).unwrap();
        let sol = solve_pointwise(&mdp, &adv, &[0.1]).unwrap();
        assert!((sol.per_state_kl[0] - 0.1).abs() < 1e-7);
        // Greedy limit has KL ln 2 here.
        let slack = solve_pointwise(&mdp, &adv, &[1.0]).unwrap();
        assert!(slack.per_state_temperature[0].is_infinite());
        assert_eq!(&slack.policy, &[1.0, 0.0]);
    }

    #[test]
    fn greedy_ties_split_by_behaviour() {
        let g = greedy_limit(&[0.2, 0.6, 0.2], &[1.0, 1.0, 0.0]);
        for (x, y) in g.iter().zip([0.25, 0.75, 0.0]) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_budget_rejected() {
        let mdp = two_action_chassis(1).unwrap();
        let adv = Advantages::from_table(1, 2, vec![1.0, -1.0]).unwrap();
        assert!(solve_pointwise(&mdp, &adv, &[-0.1]).is_err());
        assert!(solve_distributional(&mdp, &adv, -0.1).is_err());
    }

    #[test]
    fn shift_keeps_weighted_sum() {
        let d = [0.2, 0.5, 0.3];
        let e = [0.1, 0.04, 0.2];
        let moved = shift_budget(&d, &e, 1, 0.4);
        let sum = |x: &[f64]| x.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
        assert!((sum(&moved) - sum(&e)).abs() < 1e-15);
    }
}
