//! Twin Delayed DDPG: one actor, twin critics, target copies of all three,
//! a uniform replay buffer, target-policy smoothing and delayed actor
//! updates. Optimization is plain SGD on the mean squared TD error, with
//! Adam available as an option.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, AdamState, Gradients, Mlp};
use crate::rng::{seeded_rng, SimRng};
use crate::{Error, Result};

pub const OBS_DIM: usize = 5;
pub const CHECKPOINT_FORMAT: &str = "akhcfs-td3";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain stochastic gradient descent.
    #[default]
    Sgd,
    /// Bias-corrected Adam with beta1 0.9, beta2 0.999, epsilon 1e-8.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Hyper {
    pub learning_rate: f64,
    /// Update rule for all three networks.
    pub optimizer: Optimizer,
    /// Critic updates between actor/target updates. Defaults to 500; the
    /// canonical TD3 setting is 2.
    pub policy_delay: u64,
    /// Exploration noise std, as a fraction of `a_bound`.
    pub act_noise: f64,
    /// Target-policy smoothing noise std, as a fraction of `a_bound`.
    pub target_noise: f64,
    /// Clip for the smoothing noise, as a fraction of `a_bound`.
    pub noise_clip: f64,
    pub gamma: f64,
    pub soft_update_rate: f64,
    pub batch_size: usize,
    pub memory_size: usize,
    pub hidden: Vec<usize>,
}

impl Default for Td3Hyper {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            optimizer: Optimizer::Sgd,
            policy_delay: 500,
            act_noise: 0.1,
            target_noise: 0.2,
            noise_clip: 0.5,
            gamma: 0.99,
            soft_update_rate: 0.005,
            batch_size: 64,
            memory_size: 20_000,
            hidden: vec![32, 16],
        }
    }
}

impl Td3Hyper {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("act_noise", self.act_noise),
            ("target_noise", self.target_noise),
            ("noise_clip", self.noise_clip),
            ("soft_update_rate", self.soft_update_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("td3.{name} must be positive, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("td3.gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.policy_delay == 0 || self.batch_size == 0 || self.memory_size < self.batch_size {
            return Err(Error::InvalidParameter(
                "td3.policy_delay and td3.batch_size must be positive and memory_size >= batch_size".into(),
            ));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::InvalidParameter("td3.hidden needs positive layer widths".into()));
        }
        Ok(())
    }
}

/// Deterministic map from a normalized observation to an acceleration.
pub trait Policy {
    fn act(&self, obs: &[f64; OBS_DIM]) -> f64;
}

impl Policy for Mlp {
    fn act(&self, obs: &[f64; OBS_DIM]) -> f64 {
        self.forward1(obs)
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn act(&self, obs: &[f64; OBS_DIM]) -> f64 {
        (**self).act(obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: [f64; OBS_DIM],
    pub action: f64,
    pub reward: f64,
    pub next_obs: [f64; OBS_DIM],
    /// True terminal (no bootstrapping past it).
    pub done: bool,
}

/// Fixed-capacity ring buffer of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay buffer capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Uniform sample of `batch` distinct transitions.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        if self.items.len() < batch {
            return Err(Error::BufferUnderfull {
                len: self.items.len(),
                batch,
            });
        }
        Ok(index::sample(rng, self.items.len(), batch)
            .into_iter()
            .map(|i| &self.items[i])
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateDiagnostics {
    pub critic_loss: f64,
    pub mean_q: f64,
    pub actor_updated: bool,
}

/// Critic input: the observation followed by the action divided by `a_bound`.
pub fn critic_input(obs: &[f64; OBS_DIM], action: f64, a_bound: f64) -> [f64; OBS_DIM + 1] {
    let mut x = [0.0; OBS_DIM + 1];
    x[..OBS_DIM].copy_from_slice(obs);
    x[OBS_DIM] = action / a_bound;
    x
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticLoss {
    /// `mean (Q(x) - y)^2`.
    pub loss: f64,
    pub mean_q: f64,
    /// Gradient of `loss` w.r.t. the critic parameters.
    pub grads: Gradients,
}

/// Mean squared error of `critic` against `targets` with its gradients.
pub fn critic_loss(critic: &Mlp, inputs: &[[f64; OBS_DIM + 1]], targets: &[f64]) -> CriticLoss {
    let scale = 1.0 / inputs.len() as f64;
    let mut grads = Gradients::zeros_like(critic);
    let mut loss = 0.0;
    let mut q_sum = 0.0;
    for (x, &y) in inputs.iter().zip(targets) {
        let tape = critic.forward_cached(x);
        let q = tape.output(critic.output_scale)[0];
        loss += (q - y) * (q - y) * scale;
        q_sum += q;
        let (g, _) = critic.backward(&tape, &[2.0 * (q - y) * scale]);
        grads.add_assign(&g);
    }
    CriticLoss {
        loss,
        mean_q: q_sum * scale,
        grads,
    }
}

/// Actor loss `-mean Q(s, pi(s))` over `states` and its gradients w.r.t. the
/// actor parameters. The actor's output scale is the action bound.
pub fn actor_loss(actor: &Mlp, critic: &Mlp, states: &[[f64; OBS_DIM]]) -> (f64, Gradients) {
    let scale = 1.0 / states.len() as f64;
    let a_bound = actor.output_scale;
    let mut grads = Gradients::zeros_like(actor);
    let mut loss = 0.0;
    for obs in states {
        let actor_tape = actor.forward_cached(obs);
        let a = actor_tape.output(a_bound)[0];
        let x = critic_input(obs, a, a_bound);
        let critic_tape = critic.forward_cached(&x);
        loss -= critic_tape.output(critic.output_scale)[0] * scale;
        let (_, dx) = critic.backward(&critic_tape, &[-scale]);
        let (g, _) = actor.backward(&actor_tape, &[dx[OBS_DIM] / a_bound]);
        grads.add_assign(&g);
    }
    (loss, grads)
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub hyper: Td3Hyper,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic1_target: Mlp,
    pub critic2: Mlp,
    pub critic2_target: Mlp,
    rng: SimRng,
    critic_updates: u64,
    adam: Option<AdamMoments>,
}

/// Adam state of the three trained networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamMoments {
    pub actor: AdamState,
    pub critic1: AdamState,
    pub critic2: AdamState,
}

impl AdamMoments {
    fn new(actor: &Mlp, critic1: &Mlp, critic2: &Mlp) -> Self {
        Self {
            actor: AdamState::new(actor),
            critic1: AdamState::new(critic1),
            critic2: AdamState::new(critic2),
        }
    }
}

fn optimizer_step(net: &mut Mlp, state: Option<&mut AdamState>, grads: &Gradients, lr: f64) {
    match state {
        Some(adam) => adam.step(net, grads, lr),
        None => net.apply_sgd(grads, lr),
    }
}

impl Td3Agent {
    pub fn new(hyper: Td3Hyper, a_bound: f64, seed: u64) -> Self {
        let mut rng = seeded_rng(seed);
        let mut actor_sizes = vec![OBS_DIM];
        actor_sizes.extend(&hyper.hidden);
        actor_sizes.push(1);
        let mut critic_sizes = actor_sizes.clone();
        critic_sizes[0] = OBS_DIM + 1;
        let actor = Mlp::new(&actor_sizes, Activation::Tanh, Activation::Tanh, a_bound, &mut rng);
        let critic1 = Mlp::new(&critic_sizes, Activation::Tanh, Activation::Identity, 1.0, &mut rng);
        let critic2 = Mlp::new(&critic_sizes, Activation::Tanh, Activation::Identity, 1.0, &mut rng);
        Self::from_networks(hyper, actor, critic1, critic2, rng)
    }

    /// Agent around given networks; targets start as copies.
    pub fn from_networks(hyper: Td3Hyper, actor: Mlp, critic1: Mlp, critic2: Mlp, rng: SimRng) -> Self {
        let adam = (hyper.optimizer == Optimizer::Adam).then(|| AdamMoments::new(&actor, &critic1, &critic2));
        Self {
            adam,
            hyper,
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            rng,
            critic_updates: 0,
        }
    }

    pub fn a_bound(&self) -> f64 {
        self.actor.output_scale
    }

    pub fn critic_updates(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_forward(&self, obs: &[f64; OBS_DIM]) -> f64 {
        self.actor.forward1(obs)
    }

    pub fn critic_input(&self, obs: &[f64; OBS_DIM], action: f64) -> [f64; OBS_DIM + 1] {
        critic_input(obs, action, self.a_bound())
    }

    pub fn critic1_forward(&self, obs: &[f64; OBS_DIM], action: f64) -> f64 {
        self.critic1.forward1(&self.critic_input(obs, action))
    }

    pub fn critic2_forward(&self, obs: &[f64; OBS_DIM], action: f64) -> f64 {
        self.critic2.forward1(&self.critic_input(obs, action))
    }

    /// Actor output plus, when exploring, Gaussian noise with std
    /// `act_noise * a_bound`; clamped to the action range.
    pub fn select_action<R: Rng + ?Sized>(&self, obs: &[f64; OBS_DIM], explore: bool, rng: &mut R) -> f64 {
        let a_bound = self.a_bound();
        let mut a = self.actor_forward(obs);
        if explore {
            let z: f64 = rng.sample(StandardNormal);
            a += z * self.hyper.act_noise * a_bound;
        }
        a.clamp(-a_bound, a_bound)
    }

    /// Bootstrapped target `r + gamma (1 - done) min(Q1', Q2')` with clipped
    /// smoothing noise on the target action.
    pub fn target_value<R: Rng + ?Sized>(&self, t: &Transition, rng: &mut R) -> f64 {
        if t.done {
            return t.reward;
        }
        let a_bound = self.a_bound();
        let clip = self.hyper.noise_clip * a_bound;
        let z: f64 = rng.sample(StandardNormal);
        let noise = (z * self.hyper.target_noise * a_bound).clamp(-clip, clip);
        let a_next = (self.actor_target.forward1(&t.next_obs) + noise).clamp(-a_bound, a_bound);
        let x = self.critic_input(&t.next_obs, a_next);
        let q1 = self.critic1_target.forward1(&x);
        let q2 = self.critic2_target.forward1(&x);
        t.reward + self.hyper.gamma * q1.min(q2)
    }

    /// One critic step on a sampled mini-batch; every `policy_delay` critic
    /// steps also one actor step and a soft update of all targets.
    pub fn update(&mut self, buffer: &ReplayBuffer) -> Result<UpdateDiagnostics> {
        let batch_size = self.hyper.batch_size;
        let mut rng = self.rng.clone();
        let batch = buffer.sample(batch_size, &mut rng)?;
        let targets: Vec<f64> = batch.iter().map(|t| self.target_value(t, &mut rng)).collect();
        self.rng = rng;

        let inputs: Vec<[f64; OBS_DIM + 1]> = batch.iter().map(|t| self.critic_input(&t.obs, t.action)).collect();
        let c1 = critic_loss(&self.critic1, &inputs, &targets);
        let c2 = critic_loss(&self.critic2, &inputs, &targets);
        let lr = self.hyper.learning_rate;
        let (m1, m2) = match &mut self.adam {
            Some(adam) => (Some(&mut adam.critic1), Some(&mut adam.critic2)),
            None => (None, None),
        };
        optimizer_step(&mut self.critic1, m1, &c1.grads, lr);
        optimizer_step(&mut self.critic2, m2, &c2.grads, lr);
        self.critic_updates += 1;

        let actor_updated = self.critic_updates % self.hyper.policy_delay == 0;
        if actor_updated {
            self.update_actor(&batch)?;
        }
        Ok(UpdateDiagnostics {
            critic_loss: (c1.loss + c2.loss) / 2.0,
            mean_q: (c1.mean_q + c2.mean_q) / 2.0,
            actor_updated,
        })
    }

    /// Gradient ascent on `mean Q1(s, pi(s))`, then soft target updates.
    fn update_actor(&mut self, batch: &[&Transition]) -> Result<()> {
        let states: Vec<[f64; OBS_DIM]> = batch.iter().map(|t| t.obs).collect();
        let (_, grads) = actor_loss(&self.actor, &self.critic1, &states);
        let moments = self.adam.as_mut().map(|adam| &mut adam.actor);
        optimizer_step(&mut self.actor, moments, &grads, self.hyper.learning_rate);
        let rate = self.hyper.soft_update_rate;
        self.actor_target.soft_update(&self.actor, rate)?;
        self.critic1_target.soft_update(&self.critic1, rate)?;
        self.critic2_target.soft_update(&self.critic2, rate)?;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.actor,
            &self.actor_target,
            &self.critic1,
            &self.critic1_target,
            &self.critic2,
            &self.critic2_target,
        ]
        .iter()
        .all(|n| n.is_finite())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            hyper: self.hyper.clone(),
            actor: self.actor.clone(),
            actor_target: self.actor_target.clone(),
            critic1: self.critic1.clone(),
            critic1_target: self.critic1_target.clone(),
            critic2: self.critic2.clone(),
            critic2_target: self.critic2_target.clone(),
            rng: RngState::capture(&self.rng),
            critic_updates: self.critic_updates,
            adam: self.adam.clone(),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let actor_in = ck.actor.input_dim();
        let critic_in = ck.critic1.input_dim();
        if actor_in != OBS_DIM || critic_in != OBS_DIM + 1 || ck.critic2.sizes() != ck.critic1.sizes() {
            return Err(Error::Shape(format!(
                "checkpoint networks take {actor_in}/{critic_in} inputs, expected {OBS_DIM}/{}",
                OBS_DIM + 1
            )));
        }
        let pairs = [
            (&ck.actor, &ck.actor_target),
            (&ck.critic1, &ck.critic1_target),
            (&ck.critic2, &ck.critic2_target),
        ];
        if pairs.iter().any(|(a, b)| a.sizes() != b.sizes()) {
            return Err(Error::Shape("target network shape differs from online network".into()));
        }
        let adam = match (ck.hyper.optimizer, ck.adam) {
            (Optimizer::Sgd, _) => None,
            (Optimizer::Adam, Some(adam)) => {
                if !(adam.actor.matches(&ck.actor) && adam.critic1.matches(&ck.critic1) && adam.critic2.matches(&ck.critic2)) {
                    return Err(Error::Shape("Adam moments do not match the network sizes".into()));
                }
                Some(adam)
            }
            (Optimizer::Adam, None) => return Err(Error::Checkpoint("Adam checkpoint without moment estimates".into())),
        };
        Ok(Self {
            adam,
            rng: ck.rng.restore()?,
            hyper: ck.hyper,
            actor: ck.actor,
            actor_target: ck.actor_target,
            critic1: ck.critic1,
            critic1_target: ck.critic1_target,
            critic2: ck.critic2,
            critic2_target: ck.critic2_target,
            critic_updates: ck.critic_updates,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }
}

impl Policy for Td3Agent {
    fn act(&self, obs: &[f64; OBS_DIM]) -> f64 {
        self.actor_forward(obs)
    }
}

/// Exact position of a ChaCha stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &SimRng) -> Self {
        Self {
            seed: rng.get_seed().iter().map(|b| format!("{b:02x}")).collect(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<SimRng> {
        let bad = || Error::Checkpoint("malformed RNG state".into());
        if self.seed.len() != 64 {
            return Err(bad());
        }
        let mut seed = [0u8; 32];
        for (i, byte) in seed.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&self.seed[2 * i..2 * i + 2], 16).map_err(|_| bad())?;
        }
        let mut rng = SimRng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

/// Serialized agent. Floats are written in shortest round-trip form, so a
/// save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub hyper: Td3Hyper,
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic1: Mlp,
    pub critic1_target: Mlp,
    pub critic2: Mlp,
    pub critic2_target: Mlp,
    pub rng: RngState,
    pub critic_updates: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamMoments>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}
