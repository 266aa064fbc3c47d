//! Minimal deterministic-policy-gradient trainer with perturbed-actor
//! exploration: replay buffer, online observation normalization, soft
//! target updates, and per-episode parameter perturbations drawn from
//! the adaptive noise distribution.

use serde::Deserialize;

use crate::envs::Environment;
use crate::mvn::RngState;
use crate::nets::{Adam, CriticNet, PolicyNet};
use crate::noise::{
    end_of_window_update, isotropic_window_update, policy_distance, sample_noise, EpisodeRecord,
    ExplorationLog, NoiseDistribution, NoiseHyper,
};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

/// Fixed-capacity ring buffer of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        ReplayBuffer {
            capacity,
            data: Vec::new(),
            next: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, t: Transition) {
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.data[i]
    }

    /// Uniform sample of `n` indices (with replacement).
    pub fn sample_indices(&self, n: usize, rng: &mut RngState) -> Vec<usize> {
        (0..n).map(|_| rng.below(self.data.len())).collect()
    }
}

/// Per-dimension running mean/variance (Welford's algorithm).
#[derive(Debug, Clone)]
pub struct RunningNormalizer {
    pub mean: Vec<f64>,
    m2: Vec<f64>,
    pub count: u64,
}

impl RunningNormalizer {
    pub fn new(dim: usize) -> Self {
        RunningNormalizer {
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn observe(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "normalizer dim");
        self.count += 1;
        let n = self.count as f64;
        for i in 0..x.len() {
            let delta = x[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (x[i] - self.mean[i]);
        }
    }

    /// Population variance; zero until two samples are seen.
    pub fn variance(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.count as f64;
        self.m2.iter().map(|&m| (m / n).max(0.0)).collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let var = self.variance();
        x.iter()
            .zip(self.mean.iter().zip(&var))
            .map(|(&v, (&m, &s2))| (v - m) / (s2 + 1e-8).sqrt())
            .collect()
    }

    pub fn raw_m2(&self) -> &[f64] {
        &self.m2
    }

    pub fn from_parts(mean: Vec<f64>, m2: Vec<f64>, count: u64) -> Self {
        RunningNormalizer { mean, m2, count }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplorationStrategy {
    /// Full mixed noise: return-weighted covariance plus alpha switching.
    Pro,
    /// Isotropic sigma^2 I with distance-based sigma adaptation only.
    Plappert,
}

impl std::str::FromStr for ExplorationStrategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pro" => Ok(ExplorationStrategy::Pro),
            "plappert" | "plappert-baseline" => Ok(ExplorationStrategy::Plappert),
            other => Err(Error::ConfigInvalid(format!(
                "unknown rl strategy '{other}' (expected pro or plappert)"
            ))),
        }
    }
}

impl ExplorationStrategy {
    pub fn name(&self) -> &'static str {
        match self {
            ExplorationStrategy::Pro => "pro",
            ExplorationStrategy::Plappert => "plappert",
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch: usize,
    pub critic_l2: f64,
    pub hidden1: usize,
    pub hidden2: usize,
    pub layer_norm: bool,
    pub buffer_capacity: usize,
    /// Environment steps before gradient updates begin.
    pub warmup_steps: usize,
    /// One gradient update runs per environment step after warmup.
    pub steps_per_epoch: usize,
    pub epochs: usize,
    /// Replay states used for the action-distance estimate.
    pub distance_batch: usize,
    pub noise: NoiseHyper,
    pub strategy: ExplorationStrategy,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            gamma: 0.99,
            tau: 0.01,
            batch: 64,
            critic_l2: 1e-2,
            hidden1: 64,
            hidden2: 64,
            layer_norm: true,
            buffer_capacity: 100_000,
            warmup_steps: 1000,
            steps_per_epoch: 5000,
            epochs: 10,
            distance_batch: 64,
            noise: NoiseHyper::default(),
            strategy: ExplorationStrategy::Pro,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "gamma must be in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::ConfigInvalid(format!(
                "tau must be in (0, 1], got {}",
                self.tau
            )));
        }
        if self.batch == 0 || self.steps_per_epoch == 0 || self.buffer_capacity < self.batch {
            return Err(Error::ConfigInvalid(
                "batch, steps_per_epoch must be positive and capacity >= batch".into(),
            ));
        }
        self.noise.validate()
    }
}

/// Actor/critic pair with their target copies and optimizers.
#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: PolicyNet,
    pub critic: CriticNet,
    pub actor_target: PolicyNet,
    pub critic_target: CriticNet,
    pub opt_actor: Adam,
    pub opt_critic: Adam,
}

impl Agent {
    pub fn new(state_dim: usize, limits: Vec<f64>, config: &TrainConfig, rng: &mut RngState) -> Self {
        let action_dim = limits.len();
        let mut actor = PolicyNet::new(
            state_dim,
            config.hidden1,
            config.hidden2,
            limits,
            config.layer_norm,
        );
        let mut critic = CriticNet::new(
            state_dim,
            action_dim,
            config.hidden1,
            config.hidden2,
            config.layer_norm,
        );
        actor.init_weights(rng);
        critic.init_weights(rng);
        let actor_target = actor.clone();
        let critic_target = critic.clone();
        let opt_actor = Adam::new(config.lr_actor, actor.n_params());
        let opt_critic = Adam::new(config.lr_critic, critic.n_params());
        Agent {
            actor,
            critic,
            actor_target,
            critic_target,
            opt_actor,
            opt_critic,
        }
    }
}

pub fn soft_update(target: &mut [f64], main: &[f64], tau: f64) {
    for (t, &m) in target.iter_mut().zip(main) {
        *t = tau * m + (1.0 - tau) * *t;
    }
}

/// Mean squared Bellman error plus L2 penalty over critic weights;
/// accumulates the analytic gradient into `grads`.
pub fn critic_loss_and_grads(
    critic: &CriticNet,
    actor_target: &PolicyNet,
    critic_target: &CriticNet,
    batch: &[(&Transition, Vec<f64>, Vec<f64>)],
    gamma: f64,
    l2: f64,
    grads: &mut [f64],
) -> f64 {
    let n = batch.len() as f64;
    let mut loss = 0.0;
    for (t, s, s_next) in batch {
        let a_next = actor_target.mlp().forward(s_next, None);
        let q_next = critic_target.q(s_next, &a_next);
        let not_done = if t.done { 0.0 } else { 1.0 };
        let y = t.reward + gamma * not_done * q_next;
        let (out, cache) = critic.mlp().forward_cached(s, Some(&t.action));
        let err = out[0] - y;
        loss += err * err / n;
        critic.mlp().backward(&cache, &[2.0 * err / n], grads);
    }
    let params = critic.mlp().params();
    for (off, len) in critic.mlp().weight_indices() {
        for i in off..off + len {
            loss += l2 * params[i] * params[i];
            grads[i] += 2.0 * l2 * params[i];
        }
    }
    loss
}

/// Mean Q(s, pi(s)) over the batch; accumulates the gradient of its
/// NEGATIVE (the descent direction for ascending Q) into `grads`.
pub fn actor_objective_and_grads(
    actor: &PolicyNet,
    critic: &CriticNet,
    states: &[Vec<f64>],
    grads: &mut [f64],
    critic_scratch: &mut [f64],
) -> f64 {
    let n = states.len() as f64;
    let mut mean_q = 0.0;
    for s in states {
        let (action, a_cache) = actor.mlp().forward_cached(s, None);
        let (q, c_cache) = critic.mlp().forward_cached(s, Some(&action));
        mean_q += q[0] / n;
        let dq_da = critic.mlp().backward(&c_cache, &[-1.0 / n], critic_scratch);
        actor.mlp().backward(&a_cache, &dq_da, grads);
    }
    mean_q
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    pub mean_q: f64,
}

/// One gradient update of critic and actor plus the soft target update.
pub fn train_step(
    agent: &mut Agent,
    buffer: &ReplayBuffer,
    normalizer: &RunningNormalizer,
    config: &TrainConfig,
    rng: &mut RngState,
) -> Result<TrainStats> {
    if buffer.len() < config.batch {
        return Err(Error::BufferTooSmall {
            have: buffer.len(),
            need: config.batch,
        });
    }
    let idx = buffer.sample_indices(config.batch, rng);
    let batch: Vec<(&Transition, Vec<f64>, Vec<f64>)> = idx
        .iter()
        .map(|&i| {
            let t = buffer.get(i);
            (
                t,
                normalizer.normalize(&t.state),
                normalizer.normalize(&t.next_state),
            )
        })
        .collect();

    let mut critic_grads = vec![0.0; agent.critic.n_params()];
    let critic_loss = critic_loss_and_grads(
        &agent.critic,
        &agent.actor_target,
        &agent.critic_target,
        &batch,
        config.gamma,
        config.critic_l2,
        &mut critic_grads,
    );
    agent
        .opt_critic
        .step(agent.critic.mlp_mut().params_mut(), &critic_grads);

    let states: Vec<Vec<f64>> = batch.iter().map(|(_, s, _)| s.clone()).collect();
    let mut actor_grads = vec![0.0; agent.actor.n_params()];
    let mut scratch = vec![0.0; agent.critic.n_params()];
    let mean_q = actor_objective_and_grads(
        &agent.actor,
        &agent.critic,
        &states,
        &mut actor_grads,
        &mut scratch,
    );
    agent
        .opt_actor
        .step(agent.actor.mlp_mut().params_mut(), &actor_grads);

    let tau = config.tau;
    let actor_flat = agent.actor.flat().to_vec();
    soft_update(agent.actor_target.mlp_mut().params_mut(), &actor_flat, tau);
    let critic_flat = agent.critic.mlp().params().to_vec();
    soft_update(agent.critic_target.mlp_mut().params_mut(), &critic_flat, tau);

    Ok(TrainStats {
        critic_loss,
        mean_q,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningCurvePoint {
    pub epoch: usize,
    pub mean_return_perturbed: f64,
    pub mean_return_clean: f64,
}

pub const LEARNING_CURVE_HEADER: &str = "epoch,mean_return_perturbed,mean_return_clean";

pub fn learning_curve_csv_row(p: &LearningCurvePoint) -> String {
    format!(
        "{},{},{}",
        p.epoch,
        crate::fmt_float(p.mean_return_perturbed),
        crate::fmt_float(p.mean_return_clean)
    )
}

#[derive(Debug)]
pub struct TrainResult {
    pub curve: Vec<LearningCurvePoint>,
    pub exploration: Vec<ExplorationLog>,
    pub agent: Agent,
    pub normalizer: RunningNormalizer,
    pub episodes: usize,
    /// Episode index (0-based) of the first nonzero return, if any.
    pub first_nonzero_episode: Option<usize>,
    /// Noise update index of the first window containing a nonzero
    /// return (1-based, matching ExplorationLog.update_index).
    pub first_nonzero_window: Option<u64>,
    /// Mean perturbed return over the final epoch.
    pub final_return: f64,
}

/// Runs the full training loop: per-episode parameter perturbations,
/// one gradient update per environment step after warmup, and a noise
/// distribution update every K episodes with the action distance
/// estimated over replay states (normalized with the stats snapshot
/// frozen at the start of the window's last episode).
pub fn run_training(env: &mut dyn Environment, config: &TrainConfig) -> Result<TrainResult> {
    config.validate()?;
    let spec = env.spec().clone();
    let root = RngState::from_seed(config.seed);
    let mut init_rng = root.split(0);
    let mut noise_rng = root.split(1);
    let mut batch_rng = root.split(2);
    let mut env_rng = root.split(3);
    let mut eval_rng = root.split(4);

    let mut agent = Agent::new(spec.state_dim, spec.action_limits.clone(), config, &mut init_rng);
    let mut buffer = ReplayBuffer::new(config.buffer_capacity);
    let mut normalizer = RunningNormalizer::new(spec.state_dim);
    let mut dist = NoiseDistribution::new(agent.actor.n_params(), &config.noise)?;

    let mut curve = Vec::new();
    let mut exploration = Vec::new();
    let mut records: Vec<EpisodeRecord> = Vec::new();
    let mut episodes = 0usize;
    let mut total_steps = 0usize;
    let mut first_nonzero_episode = None;
    let mut first_nonzero_window = None;
    let mut window_saw_reward = false;
    let mut eval_env = env.clone_box();

    for epoch in 0..config.epochs {
        let mut epoch_steps = 0usize;
        let mut epoch_returns = Vec::new();
        while epoch_steps < config.steps_per_epoch {
            // one perturbed episode
            let frozen = normalizer.clone();
            let eps = sample_noise(&dist, &mut noise_rng)?;
            let perturbed = agent.actor.perturb(&eps)?;
            let mut obs = env.reset(&mut env_rng);
            normalizer.observe(&obs);
            let mut ret = 0.0;
            loop {
                let action = perturbed.mlp().forward(&frozen.normalize(&obs), None);
                let (next, out) = env.step(&action)?;
                buffer.push(Transition {
                    state: obs,
                    action,
                    reward: out.reward,
                    next_state: next.clone(),
                    done: out.done,
                });
                normalizer.observe(&next);
                obs = next;
                ret += out.reward;
                total_steps += 1;
                epoch_steps += 1;
                if total_steps > config.warmup_steps && buffer.len() >= config.batch {
                    train_step(&mut agent, &buffer, &normalizer, config, &mut batch_rng)?;
                }
                if out.done {
                    break;
                }
            }
            if ret != 0.0 {
                window_saw_reward = true;
                if first_nonzero_episode.is_none() {
                    first_nonzero_episode = Some(episodes);
                }
            }
            episodes += 1;
            epoch_returns.push(ret);
            records.push(EpisodeRecord { noise: eps, ret });

            if records.len() == config.noise.k {
                let d = if buffer.len() >= config.distance_batch {
                    let idx = buffer.sample_indices(config.distance_batch, &mut batch_rng);
                    let states: Vec<Vec<f64>> = idx
                        .iter()
                        .map(|&i| frozen.normalize(&buffer.get(i).state))
                        .collect();
                    Some(policy_distance(&agent.actor, &perturbed, &states)?)
                } else {
                    None
                };
                let (next_dist, log) = match config.strategy {
                    ExplorationStrategy::Pro => {
                        end_of_window_update(&dist, &records, d, &config.noise)?
                    }
                    ExplorationStrategy::Plappert => {
                        isotropic_window_update(&dist, d, &config.noise)
                    }
                };
                if window_saw_reward && first_nonzero_window.is_none() {
                    first_nonzero_window = Some(log.update_index);
                }
                dist = next_dist;
                exploration.push(log);
                records.clear();
            }
        }

        // clean-policy evaluation rollout
        let mut obs = eval_env.reset(&mut eval_rng);
        let mut clean_ret = 0.0;
        loop {
            let action = agent.actor.mlp().forward(&normalizer.normalize(&obs), None);
            let (next, out) = eval_env.step(&action)?;
            clean_ret += out.reward;
            obs = next;
            if out.done {
                break;
            }
        }
        let mean_perturbed = epoch_returns.iter().sum::<f64>() / epoch_returns.len() as f64;
        curve.push(LearningCurvePoint {
            epoch,
            mean_return_perturbed: mean_perturbed,
            mean_return_clean: clean_ret,
        });
    }

    let final_return = curve.last().map(|p| p.mean_return_perturbed).unwrap_or(0.0);
    Ok(TrainResult {
        curve,
        exploration,
        agent,
        normalizer,
        episodes,
        first_nonzero_episode,
        first_nonzero_window,
        final_return,
    })
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Bit-exact textual checkpoint of everything needed to reproduce the
/// trained agent: parameter vectors, normalizer stats, and RNG state.
/// Floats are stored as hex-encoded IEEE-754 bits.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub actor: Vec<f64>,
    pub critic: Vec<f64>,
    pub actor_target: Vec<f64>,
    pub critic_target: Vec<f64>,
    pub norm_mean: Vec<f64>,
    pub norm_m2: Vec<f64>,
    pub norm_count: u64,
    /// (seed, stream, word_pos) triples for each RNG stream.
    pub rngs: Vec<(u64, u64, u128)>,
}

pub const CHECKPOINT_VERSION: &str = "paramnoise-checkpoint-v1";

impl Checkpoint {
    pub fn capture(agent: &Agent, normalizer: &RunningNormalizer, rngs: &[&RngState]) -> Self {
        Checkpoint {
            actor: agent.actor.flat().to_vec(),
            critic: agent.critic.mlp().params().to_vec(),
            actor_target: agent.actor_target.flat().to_vec(),
            critic_target: agent.critic_target.mlp().params().to_vec(),
            norm_mean: normalizer.mean.clone(),
            norm_m2: normalizer.raw_m2().to_vec(),
            norm_count: normalizer.count,
            rngs: rngs
                .iter()
                .map(|r| (r.seed(), r.stream(), r.word_pos()))
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let vec_line = |name: &str, v: &[f64]| {
            let body: Vec<String> = v.iter().map(|x| format!("{:016x}", x.to_bits())).collect();
            format!("{name} {}\n", body.join(" "))
        };
        let mut s = String::new();
        s.push_str(CHECKPOINT_VERSION);
        s.push('\n');
        s.push_str(&vec_line("actor", &self.actor));
        s.push_str(&vec_line("critic", &self.critic));
        s.push_str(&vec_line("actor_target", &self.actor_target));
        s.push_str(&vec_line("critic_target", &self.critic_target));
        s.push_str(&vec_line("norm_mean", &self.norm_mean));
        s.push_str(&vec_line("norm_m2", &self.norm_m2));
        s.push_str(&format!("norm_count {}\n", self.norm_count));
        for (seed, stream, pos) in &self.rngs {
            s.push_str(&format!("rng {seed} {stream} {pos}\n"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Checkpoint> {
        let bad = |msg: &str| Error::ConfigInvalid(format!("checkpoint: {msg}"));
        let mut lines = text.lines();
        if lines.next() != Some(CHECKPOINT_VERSION) {
            return Err(bad("unknown version line"));
        }
        let mut fields: std::collections::HashMap<String, Vec<f64>> =
            std::collections::HashMap::new();
        let mut norm_count = None;
        let mut rngs = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let name = parts.next().ok_or_else(|| bad("empty line"))?;
            match name {
                "norm_count" => {
                    let v = parts
                        .next()
                        .and_then(|t| t.parse::<u64>().ok())
                        .ok_or_else(|| bad("bad norm_count"))?;
                    norm_count = Some(v);
                }
                "rng" => {
                    let mut next_num = |what: &str| -> Result<u128> {
                        parts
                            .next()
                            .and_then(|t| t.parse::<u128>().ok())
                            .ok_or_else(|| bad(&format!("bad rng {what}")))
                    };
                    let seed = next_num("seed")? as u64;
                    let stream = next_num("stream")? as u64;
                    let pos = next_num("word_pos")?;
                    rngs.push((seed, stream, pos));
                }
                _ => {
                    let vals: Result<Vec<f64>> = parts
                        .map(|t| {
                            u64::from_str_radix(t, 16)
                                .map(f64::from_bits)
                                .map_err(|_| bad(&format!("bad float bits in {name}")))
                        })
                        .collect();
                    fields.insert(name.to_string(), vals?);
                }
            }
        }
        let mut take = |name: &str| -> Result<Vec<f64>> {
            fields
                .remove(name)
                .ok_or_else(|| bad(&format!("missing field {name}")))
        };
        Ok(Checkpoint {
            actor: take("actor")?,
            critic: take("critic")?,
            actor_target: take("actor_target")?,
            critic_target: take("critic_target")?,
            norm_mean: take("norm_mean")?,
            norm_m2: take("norm_m2")?,
            norm_count: norm_count.ok_or_else(|| bad("missing norm_count"))?,
            rngs,
        })
    }
}
