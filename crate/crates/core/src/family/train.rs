//! Offline pre-training followed by online fine-tuning.

use std::fmt::Write as _;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::base::critics::{ActionSpace, BatchActions, QNetwork, VNetwork};
use crate::base::cql::{cql_loss_grad, cql_policy_loss_grad, CqlPenalty};
use crate::base::iql::expectile_loss_grad;
use crate::base::critics::td_loss_grad;
use crate::base::{anneal_beta, Algo, BalanceMode};
use crate::cli::config::{Draw, EnvKind, RunConfig};
use crate::datastore::buffer::ReplayBuffer;
use crate::datastore::transition::{Action, Transition};
use crate::envs::maze::{Cell, MazeSpec, N_ACTIONS};
use crate::envs::pointmass::{PointMassSpec, ACTION_BOUND, POS_BOUND};
use crate::error::{Error, Result};
use crate::family::models::{ActMode, BalanceModel, PolicyHead, UniversalModel};
use crate::family::space::{sample_offline_beta, BalanceSpace};
use crate::family::updates::{balance_update, imitation_weights, policy_value_grad, universal_update, BalanceNoise};
use crate::numkit::adam::{AdamConfig, AdamState};
use crate::numkit::heads::{softmax, GaussianHead, SoftmaxHead};
use crate::numkit::mlp::Mlp;
use crate::rng::{Rng, RngStreams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Offline,
    Online,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Offline => "offline",
            Phase::Online => "online",
        }
    }
}

/// A transition with the state already turned into network features.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// Environment bound to a run, with the episode in progress.
#[derive(Debug, Clone)]
pub enum EnvRuntime {
    Maze {
        spec: MazeSpec,
        features: crate::envs::maze::MazeFeatures,
        cell: Cell,
        t: usize,
        ret: f64,
    },
    Pointmass {
        spec: PointMassSpec,
        pos: [f64; 2],
        t: usize,
        ret: f64,
    },
}

impl EnvRuntime {
    pub fn from_config(cfg: &RunConfig) -> Self {
        match cfg.run.env {
            EnvKind::Maze => EnvRuntime::Maze {
                spec: MazeSpec::default(),
                features: cfg.maze.features,
                cell: (0, 0),
                t: 0,
                ret: 0.0,
            },
            EnvKind::Pointmass => EnvRuntime::Pointmass {
                spec: PointMassSpec::default(),
                pos: [0.0, 0.0],
                t: 0,
                ret: 0.0,
            },
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            EnvRuntime::Maze { spec, features, .. } => spec.feature_dim(*features),
            EnvRuntime::Pointmass { .. } => 2,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            EnvRuntime::Maze { .. } => ActionSpace::Discrete(N_ACTIONS),
            EnvRuntime::Pointmass { .. } => ActionSpace::Continuous {
                low: vec![-ACTION_BOUND; 2],
                high: vec![ACTION_BOUND; 2],
            },
        }
    }

    /// Network features of a raw stored state (`[row, col]` for the maze).
    pub fn featurize(&self, raw: &[f64]) -> Vec<f64> {
        match self {
            EnvRuntime::Maze { spec, features, .. } => spec.features((raw[0] as usize, raw[1] as usize), *features),
            EnvRuntime::Pointmass { .. } => raw.to_vec(),
        }
    }

    fn raw_state(&self) -> Vec<f64> {
        match self {
            EnvRuntime::Maze { cell, .. } => vec![cell.0 as f64, cell.1 as f64],
            EnvRuntime::Pointmass { pos, .. } => pos.to_vec(),
        }
    }

    fn reset(&mut self, rng: &mut Rng) {
        match self {
            EnvRuntime::Maze { spec, cell, t, ret, .. } => {
                let starts = spec.start_cells();
                *cell = starts[rng.random_range(0..starts.len())];
                *t = 0;
                *ret = 0.0;
            }
            EnvRuntime::Pointmass { pos, t, ret, .. } => {
                *pos = [rng.random_range(-POS_BOUND..POS_BOUND), rng.random_range(-POS_BOUND..POS_BOUND)];
                *t = 0;
                *ret = 0.0;
            }
        }
    }

    /// Advances the live episode. Returns `(reward, terminal, episode_over)`.
    fn step(&mut self, action: &Action) -> Result<(f64, bool, bool)> {
        match (self, action) {
            (EnvRuntime::Maze { spec, cell, t, ret, .. }, Action::Discrete(a)) => {
                let st = spec.step(*cell, *a)?;
                *cell = st.next;
                *t += 1;
                *ret += st.reward;
                Ok((st.reward, st.terminal, st.terminal || *t >= spec.max_episode_steps))
            }
            (EnvRuntime::Pointmass { spec, pos, t, ret }, Action::Continuous(a)) => {
                let st = spec.step(*pos, [a[0], a[1]]);
                *pos = st.next;
                *t += 1;
                *ret += st.reward;
                Ok((st.reward, st.terminal, st.terminal || *t >= spec.max_episode_steps))
            }
            _ => Err(Error::contract("action kind does not match environment")),
        }
    }

    fn episode_return(&self) -> f64 {
        match self {
            EnvRuntime::Maze { ret, .. } | EnvRuntime::Pointmass { ret, .. } => *ret,
        }
    }
}

/// Everything a run logs about the coefficients it used.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    /// Offline minibatch coefficients (first `beta_log_limit` draws).
    pub offline_betas: Vec<f64>,
    /// Coefficient used to act at every online environment step.
    pub online_betas: Vec<f64>,
    pub online_batch_beta_min: f64,
    pub online_batch_beta_max: f64,
    pub online_batch_betas: u64,
    pub weights_capped: u64,
    pub weights_skipped: u64,
    pub online_episode_returns: Vec<f64>,
    /// `(phase, global step, mean deterministic return)`.
    pub evals: Vec<(Phase, usize, f64)>,
}

#[derive(Debug, Default, Clone)]
struct Window {
    n: usize,
    beta_sum: f64,
    beta_sq: f64,
    beta_n: usize,
    weight_sum: f64,
    weight_n: usize,
    capped: usize,
    policy_loss: f64,
    balance_obj: f64,
    balance_n: usize,
    q_loss: f64,
    v_loss: f64,
}

pub const METRICS_HEADER: &str =
    "phase,step,mean_beta,std_beta,mean_weight,capped_frac,policy_loss,balance_objective,q_loss,v_loss,eval_return";

pub struct TrainRun {
    pub config: RunConfig,
    pub seed: u64,
    pub space: BalanceSpace,
    pub universal: UniversalModel,
    pub balance: Option<BalanceModel>,
    pub q: QNetwork,
    pub v: Option<VNetwork>,
    pub opt_u: AdamState,
    pub opt_b: Option<AdamState>,
    pub opt_q: AdamState,
    pub opt_v: Option<AdamState>,
    pub buffer: ReplayBuffer<Sample>,
    pub env: EnvRuntime,
    pub offline_steps: usize,
    pub online_steps: usize,
    pub log: RunLog,
    rngs: RngStreams,
    window: Window,
    metrics: String,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

impl TrainRun {
    pub fn new(config: RunConfig, seed: u64, dataset: &[Transition]) -> Result<Self> {
        let space = config.balance_space;
        Self::with_space(config, space, seed, dataset)
    }

    /// Like [`TrainRun::new`] but with an explicit (possibly degenerate) space.
    pub fn with_space(config: RunConfig, space: BalanceSpace, seed: u64, dataset: &[Transition]) -> Result<Self> {
        space.validate()?;
        let mut rngs = RngStreams::new(seed);
        let mut env = EnvRuntime::from_config(&config);
        let ds = env.state_dim();
        let aspace = env.action_space();
        let t = &config.train;
        let head = match &aspace {
            ActionSpace::Discrete(n) => PolicyHead::Softmax(SoftmaxHead { n_actions: *n }),
            ActionSpace::Continuous { low, high } => PolicyHead::Gaussian(GaussianHead::new(low.clone(), high.clone())?),
        };
        let universal = UniversalModel::new(ds, head, space, &t.hidden, &mut rngs.init)?;
        let balance = match config.run.balance {
            BalanceMode::Famo2o => Some(BalanceModel::new(ds, space, &t.balance_hidden, t.balance_beta_init, t.balance_log_std_init, &mut rngs.balance)?),
            _ => None,
        };
        let q = QNetwork::new(ds, aspace, &t.hidden, &mut rngs.critic)?;
        let v = match config.run.algo {
            Algo::Iql => Some(VNetwork::new(ds, &t.hidden, &mut rngs.critic)?),
            _ => None,
        };
        let opt_u = AdamState::for_mlp(AdamConfig::with_lr(t.lr_actor), &universal.net);
        let opt_b = balance.as_ref().map(|b| AdamState::for_mlp(AdamConfig::with_lr(t.lr_balance), &b.net));
        let opt_q = AdamState::for_mlp(AdamConfig::with_lr(t.lr_critic), &q.net);
        let opt_v = v.as_ref().map(|v| AdamState::for_mlp(AdamConfig::with_lr(t.lr_critic), &v.net));
        let mut samples = Vec::with_capacity(dataset.len());
        for tr in dataset {
            tr.validate()?;
            samples.push(Sample {
                obs: env.featurize(&tr.s),
                action: tr.a.clone(),
                reward: tr.r,
                next_obs: env.featurize(&tr.s_next),
                done: tr.done,
            });
        }
        let buffer = ReplayBuffer::from_offline(t.buffer_capacity, samples)?;
        env.reset(&mut rngs.env);
        Ok(Self {
            config,
            seed,
            space,
            universal,
            balance,
            q,
            v,
            opt_u,
            opt_b,
            opt_q,
            opt_v,
            buffer,
            env,
            offline_steps: 0,
            online_steps: 0,
            log: RunLog {
                online_batch_beta_min: f64::INFINITY,
                online_batch_beta_max: f64::NEG_INFINITY,
                ..RunLog::default()
            },
            rngs,
            window: Window::default(),
            metrics: format!("{METRICS_HEADER}\n"),
        })
    }

    pub fn total_steps(&self) -> usize {
        self.offline_steps + self.online_steps
    }

    pub fn metrics_csv(&self) -> &str {
        &self.metrics
    }

    fn standard_normals(rng: &mut Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    /// Coefficients for the sampled minibatch.
    fn batch_betas(&mut self, phase: Phase, obs: &Array2<f64>) -> Result<Vec<f64>> {
        let n = obs.nrows();
        Ok(match (phase, self.config.run.balance) {
            (_, BalanceMode::Fixed(c)) => vec![c; n],
            (Phase::Offline, BalanceMode::Anneal) => vec![self.space.beta_min; n],
            (Phase::Online, BalanceMode::Anneal) => vec![anneal_beta(&self.space, self.online_steps, self.config.train.n_online); n],
            (Phase::Offline, _) | (Phase::Online, BalanceMode::Random) => sample_offline_beta(&self.space, n, &mut self.rngs.beta),
            (Phase::Online, BalanceMode::Famo2o) => {
                let b = self.balance.as_ref().unwrap();
                match self.config.train.online_beta {
                    Draw::Mean => b.beta_mode(obs.view())?,
                    Draw::Sample => {
                        let noise = Self::standard_normals(&mut self.rngs.balance, n);
                        b.beta_sample(obs.view(), &noise)?
                    }
                }
            }
        })
    }

    /// Coefficients used when the value targets need the composite policy.
    fn target_betas(&mut self, next_obs: &Array2<f64>) -> Result<Vec<f64>> {
        let n = next_obs.nrows();
        Ok(match self.config.run.balance {
            BalanceMode::Fixed(c) => vec![c; n],
            BalanceMode::Anneal if self.online_steps == 0 => vec![self.space.beta_min; n],
            BalanceMode::Anneal => vec![anneal_beta(&self.space, self.online_steps, self.config.train.n_online); n],
            BalanceMode::Random => sample_offline_beta(&self.space, n, &mut self.rngs.critic),
            BalanceMode::Famo2o => self.balance.as_ref().unwrap().beta_mode(next_obs.view())?,
        })
    }

    /// Expected target-network value of the composite policy at `next_obs`.
    fn policy_next_value(&mut self, next_obs: &Array2<f64>) -> Result<Vec<f64>> {
        let betas = self.target_betas(next_obs)?;
        let raw = self.universal.raw_batch(next_obs.view(), &betas)?;
        let noise = match &self.universal.head {
            PolicyHead::Gaussian(g) => {
                let n = next_obs.nrows() * g.dim();
                Some(Array2::from_shape_vec((next_obs.nrows(), g.dim()), Self::standard_normals(&mut self.rngs.critic, n)).unwrap())
            }
            PolicyHead::Softmax(_) => None,
        };
        Ok(policy_value_grad(&self.q, true, next_obs.view(), &self.universal.head, raw.view(), noise.as_ref().map(|a| a.view()))?.0)
    }

    fn build_batch(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>, BatchActions, Vec<f64>, Vec<bool>) {
        let ds = self.env.state_dim();
        let n = idx.len();
        let mut obs = Array2::zeros((n, ds));
        let mut next = Array2::zeros((n, ds));
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        let discrete = matches!(self.universal.head, PolicyHead::Softmax(_));
        let mut da = Vec::new();
        let adim = match &self.universal.head {
            PolicyHead::Gaussian(g) => g.dim(),
            _ => 0,
        };
        let mut ca = Array2::zeros((if discrete { 0 } else { n }, adim));
        for (i, &k) in idx.iter().enumerate() {
            let s = self.buffer.get(k);
            obs.row_mut(i).assign(&ndarray::ArrayView1::from(&s.obs));
            next.row_mut(i).assign(&ndarray::ArrayView1::from(&s.next_obs));
            rewards.push(s.reward);
            dones.push(s.done);
            match &s.action {
                Action::Discrete(a) => da.push(*a),
                Action::Continuous(v) => ca.row_mut(i).assign(&ndarray::ArrayView1::from(v)),
            }
        }
        let actions = if discrete { BatchActions::Discrete(da) } else { BatchActions::Continuous(ca) };
        (obs, next, actions, rewards, dones)
    }

    fn gradient_step(&mut self, phase: Phase) -> Result<()> {
        let bs = self.config.train.batch_size;
        let idx = self.buffer.sample_indices(bs, &mut self.rngs.buffer)?;
        let (obs, next_obs, actions, rewards, dones) = self.build_batch(&idx);
        let betas = self.batch_betas(phase, &obs)?;
        match phase {
            Phase::Offline => {
                let room = self.config.train.beta_log_limit.saturating_sub(self.log.offline_betas.len());
                self.log.offline_betas.extend(betas.iter().take(room));
            }
            Phase::Online => {
                for &b in &betas {
                    self.log.online_batch_beta_min = self.log.online_batch_beta_min.min(b);
                    self.log.online_batch_beta_max = self.log.online_batch_beta_max.max(b);
                }
                self.log.online_batch_betas += betas.len() as u64;
            }
        }
        for &b in &betas {
            self.window.beta_sum += b;
            self.window.beta_sq += b * b;
        }
        self.window.beta_n += betas.len();

        let algo = self.config.run.algo;
        let w_max = self.config.train.w_max;
        // Policy step against the current critics.
        let mut q_data_target = None;
        match algo {
            Algo::Iql => {
                let qt = self.q.q_sa(obs.view(), &actions, true)?;
                let v = self.v.as_ref().unwrap().values(obs.view(), false)?;
                let ws = imitation_weights(&qt, &v, &betas, w_max);
                self.record_weights(&ws.weights, ws.capped, ws.skipped);
                let loss = universal_update(&mut self.universal, &mut self.opt_u, obs.view(), &actions, &betas, &ws.weights)?;
                self.window.policy_loss += loss;
                q_data_target = Some(qt);
            }
            Algo::Awac => {
                let q = self.q.q_sa(obs.view(), &actions, false)?;
                let baseline = self.awac_baseline(&obs, &betas)?;
                let ws = imitation_weights(&q, &baseline, &betas, w_max);
                self.record_weights(&ws.weights, ws.capped, ws.skipped);
                let loss = universal_update(&mut self.universal, &mut self.opt_u, obs.view(), &actions, &betas, &ws.weights)?;
                self.window.policy_loss += loss;
            }
            Algo::Cql => {
                let noise = self.policy_noise(obs.nrows());
                let (loss, grads) = cql_policy_loss_grad(&self.universal, &self.q, obs.view(), &betas, noise.as_ref().map(|a| a.view()))?;
                self.opt_u.step_mlp(&mut self.universal.net, &grads)?;
                self.window.policy_loss += loss;
            }
        }

        // Balance step.
        let step_no = self.total_steps() + 1;
        if let Some(b) = self.balance.as_mut() {
            if step_no % self.config.train.balance_update_freq == 0 {
                let n = obs.nrows();
                let beta_noise = Some(Self::standard_normals(&mut self.rngs.balance, n));
                let action_noise = match (&self.universal.head, self.config.train.balance_action) {
                    (PolicyHead::Gaussian(g), Draw::Sample) => {
                        Some(Array2::from_shape_vec((n, g.dim()), Self::standard_normals(&mut self.rngs.balance, n * g.dim())).unwrap())
                    }
                    _ => None,
                };
                let noise = BalanceNoise { beta: beta_noise, action: action_noise };
                let obj = balance_update(b, self.opt_b.as_mut().unwrap(), &self.universal, &self.q, algo == Algo::Iql, obs.view(), &noise)?;
                self.window.balance_obj += obj;
                self.window.balance_n += 1;
            }
        }

        // Value step.
        let gamma = self.config.train.gamma;
        match algo {
            Algo::Iql => {
                let v = self.v.as_mut().unwrap();
                let (vl, vg) = expectile_loss_grad(v, obs.view(), q_data_target.as_ref().unwrap(), self.config.expectile())?;
                self.opt_v.as_mut().unwrap().step_mlp(&mut v.net, &vg)?;
                let vn = v.values(next_obs.view(), false)?;
                let y = td_targets(&rewards, &dones, &vn, gamma);
                let (ql, qg) = td_loss_grad(&self.q, obs.view(), &actions, &y)?;
                self.opt_q.step_mlp(&mut self.q.net, &qg)?;
                self.window.v_loss += vl;
                self.window.q_loss += ql;
            }
            Algo::Awac => {
                let vn = self.policy_next_value(&next_obs)?;
                let y = td_targets(&rewards, &dones, &vn, gamma);
                let (ql, qg) = td_loss_grad(&self.q, obs.view(), &actions, &y)?;
                self.opt_q.step_mlp(&mut self.q.net, &qg)?;
                self.window.q_loss += ql;
            }
            Algo::Cql => {
                let vn = self.policy_next_value(&next_obs)?;
                let y = td_targets(&rewards, &dones, &vn, gamma);
                let penalty = self.cql_penalty(&obs, &betas)?;
                let (ql, qg) = cql_loss_grad(&self.q, obs.view(), &actions, &y, &penalty, self.config.cql.alpha)?;
                self.opt_q.step_mlp(&mut self.q.net, &qg)?;
                self.window.q_loss += ql;
            }
        }
        let rho = self.config.train.target_rho;
        self.q.soft_update(rho);
        if let Some(v) = self.v.as_mut() {
            v.soft_update(rho);
        }
        self.window.n += 1;
        Ok(())
    }

    fn record_weights(&mut self, w: &[f64], capped: usize, skipped: usize) {
        self.window.weight_sum += w.iter().sum::<f64>();
        self.window.weight_n += w.len();
        self.window.capped += capped;
        self.log.weights_capped += capped as u64;
        self.log.weights_skipped += skipped as u64;
        if capped > 0 {
            log::debug!("imitation weight cap active on {capped} samples");
        }
    }

    fn policy_noise(&mut self, n: usize) -> Option<Array2<f64>> {
        match &self.universal.head {
            PolicyHead::Gaussian(g) => {
                let d = g.dim();
                Some(Array2::from_shape_vec((n, d), Self::standard_normals(&mut self.rngs.policy, n * d)).unwrap())
            }
            PolicyHead::Softmax(_) => None,
        }
    }

    /// `E_{a ~ π_u(s, β)} Q(s, a)`: exact for discrete heads, a sample mean otherwise.
    fn awac_baseline(&mut self, obs: &Array2<f64>, betas: &[f64]) -> Result<Vec<f64>> {
        let raw = self.universal.raw_batch(obs.view(), betas)?;
        match &self.universal.head {
            PolicyHead::Softmax(_) => Ok(policy_value_grad(&self.q, false, obs.view(), &self.universal.head, raw.view(), None)?.0),
            PolicyHead::Gaussian(_) => {
                let k = self.config.awac.policy_samples;
                let mut acc = vec![0.0; obs.nrows()];
                for _ in 0..k {
                    let noise = self.policy_noise(obs.nrows());
                    let (v, _) = policy_value_grad(&self.q, false, obs.view(), &self.universal.head, raw.view(), noise.as_ref().map(|a| a.view()))?;
                    for (a, b) in acc.iter_mut().zip(v) {
                        *a += b / k as f64;
                    }
                }
                Ok(acc)
            }
        }
    }

    /// Penalty actions: uniform draws from the action box plus draws from the
    /// universal policy at each sample's own coefficient.
    fn cql_penalty(&mut self, obs: &Array2<f64>, betas: &[f64]) -> Result<CqlPenalty> {
        let g = match &self.universal.head {
            PolicyHead::Softmax(_) => return Ok(CqlPenalty::Enumerate),
            PolicyHead::Gaussian(g) => g.clone(),
        };
        let (nu, np) = (self.config.cql.n_uniform, self.config.cql.n_policy);
        let m = nu + np;
        let n = obs.nrows();
        let d = g.dim();
        let raw = self.universal.raw_batch(obs.view(), betas)?;
        let log_vol: f64 = g.low().iter().zip(g.high()).map(|(l, h)| (h - l).ln()).sum();
        let mut actions = Array2::zeros((n * m, d));
        let mut logq = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..nu {
                for k in 0..d {
                    actions[[i * m + j, k]] = self.rngs.critic.random_range(g.low()[k]..g.high()[k]);
                }
                logq.push(-log_vol);
            }
            let r = raw.row(i).to_vec();
            for j in 0..np {
                let eps = Self::standard_normals(&mut self.rngs.critic, d);
                let smp = g.sample(&r, &eps)?;
                for k in 0..d {
                    actions[[i * m + nu + j, k]] = smp.action[k];
                }
                logq.push(smp.log_prob);
            }
        }
        Ok(CqlPenalty::Sampled { actions, log_density: logq, per_state: m })
    }

    fn flush_metrics(&mut self, phase: Phase, eval: Option<f64>) {
        let w = std::mem::take(&mut self.window);
        if w.n == 0 && eval.is_none() {
            return;
        }
        let nf = w.n.max(1) as f64;
        let (mean_b, std_b) = if w.beta_n > 0 {
            let m = w.beta_sum / w.beta_n as f64;
            (Some(m), Some((w.beta_sq / w.beta_n as f64 - m * m).max(0.0).sqrt()))
        } else {
            (None, None)
        };
        let (mw, cf) = if w.weight_n > 0 {
            (Some(w.weight_sum / w.weight_n as f64), Some(w.capped as f64 / w.weight_n as f64))
        } else {
            (None, None)
        };
        let bo = (w.balance_n > 0).then(|| w.balance_obj / w.balance_n as f64);
        let vl = self.v.is_some().then(|| w.v_loss / nf);
        let _ = writeln!(
            self.metrics,
            "{},{},{},{},{},{},{},{},{},{},{}",
            phase.as_str(),
            self.total_steps(),
            fmt_opt(mean_b),
            fmt_opt(std_b),
            fmt_opt(mw),
            fmt_opt(cf),
            fmt_opt((w.n > 0).then(|| w.policy_loss / nf)),
            fmt_opt(bo),
            fmt_opt((w.n > 0).then(|| w.q_loss / nf)),
            fmt_opt(vl),
            fmt_opt(eval)
        );
    }

    fn after_step(&mut self, phase: Phase) -> Result<()> {
        let step = self.total_steps();
        let t = &self.config.train;
        let phase_end = match phase {
            Phase::Offline => self.offline_steps == t.n_offline,
            Phase::Online => self.online_steps == t.n_online,
        };
        let eval_now = step % t.eval_every == 0 || phase_end;
        if eval_now {
            let r = self.evaluate()?;
            self.log.evals.push((phase, step, r));
            self.flush_metrics(phase, Some(r));
        } else if step % t.log_every == 0 {
            self.flush_metrics(phase, None);
        }
        Ok(())
    }

    pub fn offline_step(&mut self) -> Result<()> {
        self.gradient_step(Phase::Offline)?;
        self.offline_steps += 1;
        self.after_step(Phase::Offline)
    }

    /// Acting coefficient for the live state.
    fn acting_beta(&mut self, s: &[f64], mode: ActMode) -> Result<f64> {
        Ok(match self.config.run.balance {
            BalanceMode::Fixed(c) => c,
            BalanceMode::Anneal => anneal_beta(&self.space, self.online_steps, self.config.train.n_online),
            BalanceMode::Random => sample_offline_beta(&self.space, 1, &mut self.rngs.beta)[0],
            BalanceMode::Famo2o => self.balance.as_ref().unwrap().beta(s, mode, &mut self.rngs.balance)?,
        })
    }

    pub fn online_step(&mut self) -> Result<()> {
        for _ in 0..self.config.train.env_steps_per_update {
            let raw = self.env.raw_state();
            let s = self.env.featurize(&raw);
            let beta = self.acting_beta(&s, ActMode::Stochastic)?;
            self.log.online_betas.push(beta);
            let action = self.universal.act_with_beta(&s, beta, ActMode::Stochastic, &mut self.rngs.policy)?;
            let (reward, terminal, over) = self.env.step(&action)?;
            let next = self.env.featurize(&self.env.raw_state());
            self.buffer.push(Sample {
                obs: s,
                action,
                reward,
                next_obs: next,
                done: terminal,
            });
            if over {
                self.log.online_episode_returns.push(self.env.episode_return());
                self.env.reset(&mut self.rngs.env);
            }
        }
        self.gradient_step(Phase::Online)?;
        self.online_steps += 1;
        self.after_step(Phase::Online)
    }

    /// Runs whatever remains of both phases.
    pub fn run_to_end(&mut self) -> Result<()> {
        while self.offline_steps < self.config.train.n_offline {
            self.offline_step()?;
        }
        while self.online_steps < self.config.train.n_online {
            self.online_step()?;
        }
        Ok(())
    }

    /// Coefficient used by deterministic evaluation at feature vector `s`.
    pub fn eval_beta(&self, s: &[f64], rng: &mut Rng) -> Result<f64> {
        Ok(match self.config.run.balance {
            BalanceMode::Fixed(c) => c,
            BalanceMode::Anneal if self.online_steps == 0 => self.space.beta_min,
            BalanceMode::Anneal => anneal_beta(&self.space, self.online_steps - 1, self.config.train.n_online),
            BalanceMode::Random => sample_offline_beta(&self.space, 1, rng)[0],
            BalanceMode::Famo2o => self.balance.as_ref().unwrap().beta(s, ActMode::Deterministic, rng)?,
        })
    }

    /// Deterministic action at raw state `raw` and its coefficient.
    pub fn eval_action(&self, raw: &[f64], rng: &mut Rng) -> Result<(Action, f64)> {
        let s = self.env.featurize(raw);
        let beta = self.eval_beta(&s, rng)?;
        Ok((self.universal.act_with_beta(&s, beta, ActMode::Deterministic, rng)?, beta))
    }

    /// Mean return of deterministic rollouts from the evaluation starts.
    pub fn evaluate(&mut self) -> Result<f64> {
        let episodes = self.config.train.eval_episodes;
        let mut rng = self.rngs.eval.clone();
        let mut total = 0.0;
        match &self.env {
            EnvRuntime::Maze { spec, .. } => {
                let starts = spec.start_cells();
                for e in 0..episodes {
                    let (ret, _) = self.maze_rollout(spec, starts[e % starts.len()], &mut rng)?;
                    total += ret;
                }
            }
            EnvRuntime::Pointmass { spec, .. } => {
                let starts = spec.eval_starts();
                for e in 0..episodes {
                    let (ret, _) = spec.rollout(starts[e % starts.len()], |p| match self.eval_action(&p, &mut rng)?.0 {
                        Action::Continuous(a) => Ok([a[0], a[1]]),
                        Action::Discrete(_) => Err(Error::contract("discrete action in point-mass")),
                    })?;
                    total += ret;
                }
            }
        }
        self.rngs.eval = rng;
        Ok(total / episodes as f64)
    }

    /// Deterministic maze rollout: return and the visited `(cell, β)` pairs.
    pub fn maze_rollout(&self, spec: &MazeSpec, start: Cell, rng: &mut Rng) -> Result<(f64, Vec<(Cell, f64)>)> {
        let mut c = start;
        let mut ret = 0.0;
        let mut visits = Vec::new();
        for _ in 0..spec.max_episode_steps {
            let (a, beta) = self.eval_action(&[c.0 as f64, c.1 as f64], rng)?;
            visits.push((c, beta));
            let st = spec.step(c, a.index().ok_or_else(|| Error::contract("continuous action in maze"))?)?;
            ret += st.reward;
            c = st.next;
            if st.terminal {
                break;
            }
        }
        Ok((ret, visits))
    }

    /// Final networks in checkpoint order: universal, balance (if any), Q,
    /// Q target, V and V target (IQL only).
    pub fn networks(&self) -> Vec<&Mlp> {
        let mut nets = vec![&self.universal.net];
        if let Some(b) = &self.balance {
            nets.push(&b.net);
        }
        nets.push(&self.q.net);
        nets.push(&self.q.target);
        if let Some(v) = &self.v {
            nets.push(&v.net);
            nets.push(&v.target);
        }
        nets
    }

    pub fn restore_networks(&mut self, nets: Vec<Mlp>) -> Result<()> {
        let expected = self.networks().len();
        if nets.len() != expected {
            return Err(Error::Checkpoint(format!("expected {expected} networks, found {}", nets.len())));
        }
        let mut it = nets.into_iter();
        let mut take = |cur: &Mlp| -> Result<Mlp> {
            let n = it.next().unwrap();
            if n.dims() != cur.dims() {
                return Err(Error::Checkpoint(format!("network shape {:?} != {:?}", n.dims(), cur.dims())));
            }
            Ok(n)
        };
        self.universal.net = take(&self.universal.net)?;
        if let Some(b) = self.balance.as_mut() {
            b.net = take(&b.net)?;
        }
        self.q.net = take(&self.q.net)?;
        self.q.target = take(&self.q.target)?;
        if let Some(v) = self.v.as_mut() {
            v.net = take(&v.net)?;
            v.target = take(&v.target)?;
        }
        Ok(())
    }

    /// Feature rows for raw stored states.
    pub fn feature_matrix(&self, raw_states: &[Vec<f64>]) -> Array2<f64> {
        let ds = self.env.state_dim();
        let mut obs = Array2::zeros((raw_states.len(), ds));
        for (i, r) in raw_states.iter().enumerate() {
            obs.row_mut(i).assign(&ndarray::ArrayView1::from(&self.env.featurize(r)));
        }
        obs
    }

    /// `(Q(s, a), V(s))` from the online critics. V is the value network for
    /// IQL and the expected Q of the mean-mode policy at `betas` otherwise.
    pub fn value_terms(&self, raw_states: &[Vec<f64>], actions: &[Action], betas: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let obs = self.feature_matrix(raw_states);
        let batch = match &self.universal.head {
            PolicyHead::Softmax(_) => BatchActions::Discrete(
                actions.iter().map(|a| a.index().ok_or_else(|| Error::contract("expected discrete action"))).collect::<Result<_>>()?,
            ),
            PolicyHead::Gaussian(g) => {
                let mut m = Array2::zeros((actions.len(), g.dim()));
                for (i, a) in actions.iter().enumerate() {
                    let v = a.vector().ok_or_else(|| Error::contract("expected continuous action"))?;
                    m.row_mut(i).assign(&ndarray::ArrayView1::from(v));
                }
                BatchActions::Continuous(m)
            }
        };
        let q = self.q.q_sa(obs.view(), &batch, false)?;
        let v = match &self.v {
            Some(v) => v.values(obs.view(), false)?,
            None => {
                let raw = self.universal.raw_batch(obs.view(), betas)?;
                policy_value_grad(&self.q, false, obs.view(), &self.universal.head, raw.view(), None)?.0
            }
        };
        Ok((q, v))
    }

    /// Softmax probabilities of the universal policy (discrete heads).
    pub fn action_probs(&self, s: &[f64], beta: f64) -> Result<Vec<f64>> {
        Ok(softmax(&self.universal.raw(s, beta)?))
    }
}

fn td_targets(rewards: &[f64], dones: &[bool], next_values: &[f64], gamma: f64) -> Vec<f64> {
    crate::base::critics::td_targets(rewards, dones, next_values, gamma).to_vec()
}
