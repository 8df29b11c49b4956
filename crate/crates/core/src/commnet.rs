//! CommNet policy and its centralized REINFORCE trainer.
//!
//! Every agent runs the same network on its own observation. Between
//! layers each agent receives the mean of the other agents' hidden states:
//!
//! ```text
//! h0_i      = act(E o_i + e)
//! c^l_i     = mean_{j != i} h^l_j
//! h^{l+1}_i = act(H^l h^l_i + C^l c^l_i)
//! pi_i      = softmax(D h^L_i + d)
//! ```
//!
//! Training sees every agent's trajectory and updates the single shared
//! parameter set; execution needs only local observations plus the
//! communication channel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auction::Moments;
use crate::envs::{EnvError, Environment};
use crate::numcore::{
    argmax_first, matvec_raw, matvec_t_acc, outer_acc, softmax_unchecked, Activation, NumError,
    ParamStore,
};

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training diverged at episode {episode}: {reason}")]
    Diverged { episode: usize, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Per-agent local observations, plus the ground-truth state for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct JointObservation {
    pub agents: Vec<Vec<f64>>,
    /// Never fed to the policy.
    pub state: Option<Vec<f64>>,
}

impl JointObservation {
    pub fn new(agents: Vec<Vec<f64>>) -> Self {
        Self { agents, state: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommNetConfig {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub actions: usize,
    pub activation: Activation,
}

impl CommNetConfig {
    pub const DEFAULT_HIDDEN: usize = 32;
    pub const DEFAULT_LAYERS: usize = 2;

    pub fn new(n_agents: usize, obs_dim: usize, actions: usize) -> Self {
        Self {
            n_agents,
            obs_dim,
            hidden: Self::DEFAULT_HIDDEN,
            layers: Self::DEFAULT_LAYERS,
            actions,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<(), MarlError> {
        if self.n_agents == 0 || self.obs_dim == 0 || self.hidden == 0 || self.layers == 0 || self.actions == 0 {
            return Err(MarlError::InvalidConfig(format!(
                "all CommNet dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Mean of the other agents' hidden vectors; the zero vector for a lone agent.
///
/// Each coordinate is summed in sorted order, so the result depends only on
/// the multiset of other agents' values and permuting agents permutes the
/// outputs bit-exactly.
pub fn comm_mean(hidden: &[Vec<f64>], i: usize) -> Vec<f64> {
    let n = hidden.len();
    let d = hidden[i].len();
    if n < 2 {
        return vec![0.0; d];
    }
    let mut column = Vec::with_capacity(n - 1);
    (0..d)
        .map(|k| {
            column.clear();
            column.extend(hidden.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, h)| h[k]));
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / (n - 1) as f64
        })
        .collect()
}

// Parameter slot layout.
const ENC_W: usize = 0;
const ENC_B: usize = 1;
fn self_slot(l: usize) -> usize {
    2 + 2 * l
}
fn comm_slot(l: usize) -> usize {
    3 + 2 * l
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommNetPolicy {
    config: CommNetConfig,
    params: ParamStore,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
struct ForwardCache {
    // hidden[l][i], l = 0..=L
    hidden: Vec<Vec<Vec<f64>>>,
    // comm[l][i], l = 0..L
    comm: Vec<Vec<Vec<f64>>>,
    probs: Vec<Vec<f64>>,
}

impl CommNetPolicy {
    /// Every parameter zero: uniform action distributions.
    pub fn zeros(config: CommNetConfig) -> Result<Self, MarlError> {
        config.validate()?;
        let (o, d, a) = (config.obs_dim, config.hidden, config.actions);
        let mut params = ParamStore::new();
        params.insert("encoder.weight", vec![d, o], vec![0.0; d * o])?;
        params.insert("encoder.bias", vec![d], vec![0.0; d])?;
        for l in 0..config.layers {
            params.insert(&format!("layer{l}.self"), vec![d, d], vec![0.0; d * d])?;
            params.insert(&format!("layer{l}.comm"), vec![d, d], vec![0.0; d * d])?;
        }
        params.insert("decoder.weight", vec![a, d], vec![0.0; a * d])?;
        params.insert("decoder.bias", vec![a], vec![0.0; a])?;
        Ok(Self { config, params })
    }

    /// Uniform fan-in scaled weights; the decoder starts at zero so the
    /// initial policy is uniformly random.
    pub fn init<R: Rng + ?Sized>(config: CommNetConfig, rng: &mut R) -> Result<Self, MarlError> {
        let mut policy = Self::zeros(config)?;
        let enc_scale = 1.0 / (config.obs_dim as f64).sqrt();
        let hid_scale = 1.0 / (2.0 * config.hidden as f64).sqrt();
        let fill = |p: &mut Vec<f64>, scale: f64, rng: &mut R| {
            p.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        };
        fill(&mut policy.params.slot_mut(ENC_W).values, enc_scale, rng);
        for l in 0..config.layers {
            fill(&mut policy.params.slot_mut(self_slot(l)).values, hid_scale, rng);
            fill(&mut policy.params.slot_mut(comm_slot(l)).values, hid_scale, rng);
        }
        Ok(policy)
    }

    /// Random values in every slot, decoder included (for tests and audits).
    pub fn randomized<R: Rng + ?Sized>(config: CommNetConfig, scale: f64, rng: &mut R) -> Result<Self, MarlError> {
        let mut policy = Self::zeros(config)?;
        for idx in 0..policy.params.len() {
            policy
                .params
                .slot_mut(idx)
                .values
                .iter_mut()
                .for_each(|v| *v = rng.random_range(-scale..scale));
        }
        Ok(policy)
    }

    pub fn config(&self) -> &CommNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Swaps in a parameter store with the same names and shapes.
    pub fn set_params(&mut self, store: ParamStore) -> Result<(), MarlError> {
        let same = store.len() == self.params.len()
            && store
                .iter()
                .zip(self.params.iter())
                .all(|(a, b)| a.name == b.name && a.shape == b.shape);
        if !same {
            return Err(MarlError::InvalidConfig(
                "parameter store layout does not match the policy".into(),
            ));
        }
        self.params = store;
        Ok(())
    }

    fn dec_w(&self) -> usize {
        2 + 2 * self.config.layers
    }

    fn check(&self, obs: &JointObservation) -> Result<(), MarlError> {
        if obs.agents.len() != self.config.n_agents {
            return Err(MarlError::Dimension(format!(
                "{} agent observations for a {}-agent policy",
                obs.agents.len(),
                self.config.n_agents
            )));
        }
        if let Some((i, o)) = obs.agents.iter().enumerate().find(|(_, o)| o.len() != self.config.obs_dim) {
            return Err(MarlError::Dimension(format!(
                "agent {i} observation has {} entries, expected {}",
                o.len(),
                self.config.obs_dim
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, obs: &JointObservation) -> ForwardCache {
        let CommNetConfig {
            obs_dim: o,
            hidden: d,
            actions: a,
            activation: act,
            layers,
            ..
        } = self.config;
        let p = &self.params;
        let h0: Vec<Vec<f64>> = obs
            .agents
            .iter()
            .map(|x| {
                let mut z = matvec_raw(&p.slot(ENC_W).values, d, o, x, Some(&p.slot(ENC_B).values));
                z.iter_mut().for_each(|v| *v = act.apply_scalar(*v));
                z
            })
            .collect();
        let mut hidden = vec![h0];
        let mut comm = Vec::with_capacity(layers);
        for l in 0..layers {
            let prev = &hidden[l];
            let c: Vec<Vec<f64>> = (0..prev.len()).map(|i| comm_mean(prev, i)).collect();
            let next: Vec<Vec<f64>> = prev
                .iter()
                .zip(&c)
                .map(|(h, ci)| {
                    let mut z = matvec_raw(&p.slot(self_slot(l)).values, d, d, h, None);
                    let zc = matvec_raw(&p.slot(comm_slot(l)).values, d, d, ci, None);
                    z.iter_mut()
                        .zip(zc)
                        .for_each(|(v, w)| *v = act.apply_scalar(*v + w));
                    z
                })
                .collect();
            comm.push(c);
            hidden.push(next);
        }
        let dw = self.dec_w();
        let probs = hidden[layers]
            .iter()
            .map(|h| {
                let logits = matvec_raw(&p.slot(dw).values, a, d, h, Some(&p.slot(dw + 1).values));
                softmax_unchecked(&logits, 1.0)
            })
            .collect();
        ForwardCache { hidden, comm, probs }
    }

    /// Action distribution for every agent.
    pub fn forward(&self, obs: &JointObservation) -> Result<Vec<Vec<f64>>, MarlError> {
        self.check(obs)?;
        Ok(self.forward_cached(obs).probs)
    }

    /// Adds `d(objective)/d(params)` into the gradient slots, given
    /// `d(objective)/d(logits)` per agent.
    #[allow(clippy::needless_range_loop)]
    fn backward(&mut self, cache: &ForwardCache, obs: &JointObservation, d_logits: &[Vec<f64>]) {
        let CommNetConfig {
            obs_dim: o,
            hidden: d,
            actions: a,
            activation: act,
            layers,
            n_agents: n,
        } = self.config;
        let dw = self.dec_w();
        let mut d_h: Vec<Vec<f64>> = vec![vec![0.0; d]; n];
        for i in 0..n {
            let h = &cache.hidden[layers][i];
            outer_acc(&mut self.params.slot_mut(dw).grad, &d_logits[i], h);
            self.params
                .slot_mut(dw + 1)
                .grad
                .iter_mut()
                .zip(&d_logits[i])
                .for_each(|(g, v)| *g += v);
            matvec_t_acc(&self.params.slot(dw).values, a, d, &d_logits[i], &mut d_h[i]);
        }
        for l in (0..layers).rev() {
            let out = &cache.hidden[l + 1];
            let d_z: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    d_h[i]
                        .iter()
                        .zip(&out[i])
                        .map(|(g, y)| g * act.derivative_from_output(*y))
                        .collect()
                })
                .collect();
            let mut d_prev = vec![vec![0.0; d]; n];
            let mut d_comm = vec![vec![0.0; d]; n];
            for i in 0..n {
                outer_acc(&mut self.params.slot_mut(self_slot(l)).grad, &d_z[i], &cache.hidden[l][i]);
                outer_acc(&mut self.params.slot_mut(comm_slot(l)).grad, &d_z[i], &cache.comm[l][i]);
                matvec_t_acc(&self.params.slot(self_slot(l)).values, d, d, &d_z[i], &mut d_prev[i]);
                matvec_t_acc(&self.params.slot(comm_slot(l)).values, d, d, &d_z[i], &mut d_comm[i]);
            }
            if n > 1 {
                let share = 1.0 / (n - 1) as f64;
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        for k in 0..d {
                            d_prev[j][k] += share * d_comm[i][k];
                        }
                    }
                }
            }
            d_h = d_prev;
        }
        for i in 0..n {
            let d_z: Vec<f64> = d_h[i]
                .iter()
                .zip(&cache.hidden[0][i])
                .map(|(g, y)| g * act.derivative_from_output(*y))
                .collect();
            outer_acc(&mut self.params.slot_mut(ENC_W).grad, &d_z, &obs.agents[i]);
            self.params
                .slot_mut(ENC_B)
                .grad
                .iter_mut()
                .zip(&d_z)
                .for_each(|(g, v)| *g += v);
        }
        debug_assert_eq!(self.params.slot(ENC_W).values.len(), d * o);
    }
}

/// Independent categorical draw per agent, with the log-probability of each
/// chosen action.
pub fn sample_joint_action<R: Rng + ?Sized>(dists: &[Vec<f64>], rng: &mut R) -> (Vec<usize>, Vec<f64>) {
    dists
        .iter()
        .map(|p| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut choice = p.len() - 1;
            for (a, &pa) in p.iter().enumerate() {
                acc += pa;
                if u < acc {
                    choice = a;
                    break;
                }
            }
            // never land on a zero-probability tail action through round-off
            while p[choice] == 0.0 && choice > 0 {
                choice -= 1;
            }
            (choice, p[choice].ln())
        })
        .unzip()
}

/// Per-agent argmax actions (lowest index on ties).
pub fn greedy_joint_action(dists: &[Vec<f64>]) -> Vec<usize> {
    dists.iter().map(|p| argmax_first(p).unwrap_or(0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub observation: JointObservation,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub log_probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    /// Discounted reward-to-go `G_t` for every step.
    pub fn returns(&self, gamma: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.steps.len()];
        let mut acc = 0.0;
        for (t, s) in self.steps.iter().enumerate().rev() {
            acc = s.reward + gamma * acc;
            out[t] = acc;
        }
        out
    }
}

/// `G_t - b_t`, where `b_t` is the batch mean of `G_t` over episodes that
/// reach step `t`.
pub fn advantages(trajectories: &[Trajectory], gamma: f64) -> Vec<Vec<f64>> {
    let returns: Vec<Vec<f64>> = trajectories.iter().map(|t| t.returns(gamma)).collect();
    let horizon = returns.iter().map(Vec::len).max().unwrap_or(0);
    let baseline: Vec<f64> = (0..horizon)
        .map(|t| {
            let (sum, count) = returns
                .iter()
                .filter_map(|r| r.get(t))
                .fold((0.0, 0usize), |(s, c), g| (s + g, c + 1));
            sum / count as f64
        })
        .collect();
    returns
        .into_iter()
        .map(|r| r.iter().enumerate().map(|(t, g)| g - baseline[t]).collect())
        .collect()
}

/// [`advantages`] divided by their batch standard deviation. A batch
/// whose advantages all vanish is returned unchanged.
pub fn normalized_advantages(trajectories: &[Trajectory], gamma: f64) -> Vec<Vec<f64>> {
    let mut adv = advantages(trajectories, gamma);
    let mut m = Moments::default();
    adv.iter().flatten().for_each(|&a| m.push(a));
    let var = m.m2 / m.count.max(1) as f64;
    if var > 0.0 {
        let inv = 1.0 / (var.sqrt() + 1e-8);
        adv.iter_mut().flatten().for_each(|a| *a *= inv);
    }
    adv
}

fn batch_advantages(trajectories: &[Trajectory], gamma: f64, normalize: bool) -> Vec<Vec<f64>> {
    if normalize {
        normalized_advantages(trajectories, gamma)
    } else {
        advantages(trajectories, gamma)
    }
}

/// REINFORCE surrogate loss `-(1/B) sum_e sum_t A_et sum_i log pi(a_i | o_t)`,
/// recomputing log-probabilities with the current parameters.
pub fn surrogate_loss(
    policy: &CommNetPolicy,
    trajectories: &[Trajectory],
    gamma: f64,
    normalize: bool,
) -> f64 {
    let adv = batch_advantages(trajectories, gamma, normalize);
    let mut total = 0.0;
    for (traj, a) in trajectories.iter().zip(&adv) {
        for (step, &at) in traj.steps.iter().zip(a) {
            let probs = policy.forward_cached(&step.observation).probs;
            let logp: f64 = step.actions.iter().zip(&probs).map(|(&act, p)| p[act].ln()).sum();
            total += at * logp;
        }
    }
    -total / trajectories.len() as f64
}

/// Accumulates the analytic gradient of [`surrogate_loss`] into the
/// policy's gradient slots and returns the loss.
pub fn policy_gradient(
    policy: &mut CommNetPolicy,
    trajectories: &[Trajectory],
    gamma: f64,
    normalize: bool,
) -> Result<f64, MarlError> {
    if trajectories.is_empty() {
        return Err(MarlError::InvalidConfig("no trajectories".into()));
    }
    let adv = batch_advantages(trajectories, gamma, normalize);
    let scale = -1.0 / trajectories.len() as f64;
    let mut total = 0.0;
    for (traj, a) in trajectories.iter().zip(&adv) {
        for (step, &at) in traj.steps.iter().zip(a) {
            policy.check(&step.observation)?;
            let cache = policy.forward_cached(&step.observation);
            let mut logp = 0.0;
            let d_logits: Vec<Vec<f64>> = step
                .actions
                .iter()
                .zip(&cache.probs)
                .map(|(&act, p)| {
                    logp += p[act].ln();
                    // d log softmax_a / d logits = onehot(a) - p
                    p.iter()
                        .enumerate()
                        .map(|(k, &pk)| scale * at * (if k == act { 1.0 } else { 0.0 } - pk))
                        .collect()
                })
                .collect();
            total += at * logp;
            if at != 0.0 {
                policy.backward(&cache, &step.observation, &d_logits);
            }
        }
    }
    Ok(scale * total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateStats {
    pub loss: f64,
    pub mean_return: f64,
    pub grad_norm: f64,
}

/// One REINFORCE step with a per-step batch-mean baseline, optionally
/// scaling advantages to unit batch standard deviation.
pub fn reinforce_update(
    policy: &mut CommNetPolicy,
    trajectories: &[Trajectory],
    lr: f64,
    gamma: f64,
    normalize: bool,
) -> Result<UpdateStats, MarlError> {
    policy.params.zero_grad();
    let loss = policy_gradient(policy, trajectories, gamma, normalize)?;
    let grad_norm = crate::numcore::norm(&policy.params.flat_grad());
    crate::numcore::sgd_step(&mut policy.params, lr)?;
    let mean_return =
        trajectories.iter().map(Trajectory::total_reward).sum::<f64>() / trajectories.len() as f64;
    Ok(UpdateStats {
        loss,
        mean_return,
        grad_norm,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionMode {
    Greedy,
    Sample,
}

// Seeds for episode resets and action sampling are derived per episode so
// rollouts can run in any order.
fn episode_seed(seed: u64, episode: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ episode.wrapping_add(0xD1B5_4A32_D192_ED03)
}

fn action_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode);
    rng
}

/// Runs one episode. With `frames`, every state (including the initial one)
/// is rendered and pushed.
pub fn rollout<E: Environment>(
    policy: &CommNetPolicy,
    env: &E,
    seed: u64,
    episode: u64,
    mode: ActionMode,
    mut frames: Option<&mut Vec<String>>,
) -> Result<Trajectory, MarlError> {
    let (mut state, mut obs) = env.reset(episode_seed(seed, episode));
    let mut rng = action_rng(seed, episode);
    let mut traj = Trajectory::default();
    if let Some(f) = frames.as_deref_mut() {
        f.push(env.render(&state));
    }
    for _ in 0..env.horizon() {
        let dists = policy.forward(&obs)?;
        let (actions, log_probs) = match mode {
            ActionMode::Sample => sample_joint_action(&dists, &mut rng),
            ActionMode::Greedy => {
                let a = greedy_joint_action(&dists);
                let lp = a.iter().zip(&dists).map(|(&k, p)| p[k].ln()).collect();
                (a, lp)
            }
        };
        let result = env.step(&state, &actions)?;
        if let Some(f) = frames.as_deref_mut() {
            f.push(env.render(&result.state));
        }
        traj.steps.push(TrajectoryStep {
            observation: obs,
            actions,
            reward: result.reward,
            log_probs,
        });
        state = result.state;
        obs = result.observations;
        if result.done {
            break;
        }
    }
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarlTrainConfig {
    pub episodes: usize,
    pub batch_episodes: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub hidden: usize,
    pub layers: usize,
    pub activation: Activation,
    pub normalize_advantages: bool,
    pub seed: u64,
}

impl Default for MarlTrainConfig {
    fn default() -> Self {
        Self {
            episodes: 5000,
            batch_episodes: 16,
            learning_rate: 0.03,
            gamma: 0.99,
            hidden: CommNetConfig::DEFAULT_HIDDEN,
            layers: CommNetConfig::DEFAULT_LAYERS,
            activation: Activation::Tanh,
            normalize_advantages: true,
            seed: 0,
        }
    }
}

impl MarlTrainConfig {
    pub fn validate(&self) -> Result<(), MarlError> {
        if self.batch_episodes == 0 {
            return Err(MarlError::InvalidConfig("batch_episodes must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(MarlError::InvalidConfig("learning_rate must be finite and non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(MarlError::InvalidConfig("gamma must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn policy_config<E: Environment>(&self, env: &E) -> CommNetConfig {
        CommNetConfig {
            n_agents: env.n_agents(),
            obs_dim: env.obs_dim(),
            hidden: self.hidden,
            layers: self.layers,
            actions: env.n_actions(),
            activation: self.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    #[serde(rename = "return")]
    pub ret: f64,
    /// Surrogate loss of the update batch this episode belonged to.
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedPolicy {
    pub policy: CommNetPolicy,
    pub metrics: Vec<EpisodeMetrics>,
}

/// Centralized training: sampled rollouts in batches of `batch_episodes`,
/// one [`reinforce_update`] per batch.
pub fn train_marl<E: Environment>(
    env: &E,
    config: &MarlTrainConfig,
    mut observer: Option<&mut dyn FnMut(&EpisodeMetrics)>,
) -> Result<TrainedPolicy, MarlError> {
    config.validate()?;
    let pc = config.policy_config(env);
    let mut policy = CommNetPolicy::init(pc, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
    let mut metrics = Vec::with_capacity(config.episodes);
    let mut start = 0;
    while start < config.episodes {
        let end = (start + config.batch_episodes).min(config.episodes);
        let batch: Vec<Trajectory> = (start..end)
            .into_par_iter()
            .map(|e| rollout(&policy, env, config.seed, e as u64, ActionMode::Sample, None))
            .collect::<Result<_, _>>()?;
        let stats = reinforce_update(
            &mut policy,
            &batch,
            config.learning_rate,
            config.gamma,
            config.normalize_advantages,
        ).map_err(|e| {
            MarlError::Diverged {
                episode: start,
                reason: e.to_string(),
            }
        })?;
        if !stats.loss.is_finite() {
            return Err(MarlError::Diverged {
                episode: start,
                reason: format!("loss {}", stats.loss),
            });
        }
        for (k, traj) in batch.iter().enumerate() {
            let row = EpisodeMetrics {
                episode: start + k,
                ret: traj.total_reward(),
                loss: stats.loss,
            };
            if let Some(obs) = observer.as_deref_mut() {
                obs(&row);
            }
            metrics.push(row);
        }
        start = end;
    }
    Ok(TrainedPolicy { policy, metrics })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalReport {
    pub mean_return: f64,
    pub stderr: f64,
    /// Mean reward on the last step of each episode.
    pub final_reward: f64,
    pub episodes: u64,
}

/// Decentralized execution over `episodes` seeded episodes.
pub fn evaluate<E: Environment>(
    policy: &CommNetPolicy,
    env: &E,
    episodes: usize,
    mode: ActionMode,
    seed: u64,
) -> Result<EvalReport, MarlError> {
    let trajs: Vec<Trajectory> = (0..episodes)
        .into_par_iter()
        .map(|e| rollout(policy, env, seed, e as u64, mode, None))
        .collect::<Result<_, _>>()?;
    let mut returns = Moments::default();
    let mut last = 0.0;
    for t in &trajs {
        returns.push(t.total_reward());
        last += t.steps.last().map_or(0.0, |s| s.reward);
    }
    Ok(EvalReport {
        mean_return: returns.mean,
        stderr: returns.stderr(),
        final_reward: last / episodes.max(1) as f64,
        episodes: returns.count,
    })
}
