//! The A2C controller at the aggregator: actor and critic networks over the
//! stacked sensor summaries, factored-Bernoulli action sampling, the two
//! reward functions, advantage computation, and the training loop.
//!
//! Episodes are single-step: each sample is an independent decision with no
//! successor state, so V(s') is fixed at 0 during training. The general
//! advantage path with gamma and V(s') stays implemented and tested.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::data::Scene;
use crate::env::{assemble_state, classify, fuse, sense, ActionMask, ArchConfig, CloudModel, SensorModel};
use crate::error::{Error, Result};
use crate::layers::Layer;
use crate::network::{ForwardCache, Network};
use crate::optim::{OptimKind, Optimizer};
use crate::tensor::Tensor;

/// Transmit probabilities are clamped away from {0, 1} for log stability.
pub const PROB_EPS: f64 = 1e-6;

/// Actor: two ConvP blocks then a dense head with one sigmoid output per
/// sensor. Critic: same trunk, a single linear output.
pub fn actor_net(n_sensors: usize, image_size: usize, arch: &ArchConfig, rng: &mut impl Rng) -> Network {
    let mut layers = agent_trunk(n_sensors, image_size, arch, rng, n_sensors);
    layers.push(Layer::Sigmoid);
    Network::new(layers)
}

pub fn critic_net(n_sensors: usize, image_size: usize, arch: &ArchConfig, rng: &mut impl Rng) -> Network {
    Network::new(agent_trunk(n_sensors, image_size, arch, rng, 1))
}

fn agent_trunk(
    n_sensors: usize,
    image_size: usize,
    arch: &ArchConfig,
    rng: &mut impl Rng,
    outputs: usize,
) -> Vec<Layer> {
    let side = image_size / 2; // summaries come out of the sensor ConvP
    let [c1, c2] = arch.agent_channels;
    vec![
        Layer::conv2d(n_sensors, c1, 3, rng),
        Layer::max_pool(2, 2),
        Layer::Relu,
        Layer::conv2d(c1, c2, 3, rng),
        Layer::max_pool(2, 2),
        Layer::Relu,
        Layer::dense(c2 * (side / 4) * (side / 4), outputs, rng),
    ]
}

#[derive(Debug, Clone)]
pub struct Agent {
    pub actor: Network,
    pub critic: Network,
}

impl Agent {
    pub fn new(n_sensors: usize, image_size: usize, arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        Agent {
            actor: actor_net(n_sensors, image_size, arch, rng),
            critic: critic_net(n_sensors, image_size, arch, rng),
        }
    }
}

// ---------------------------------------------------------------------------
// Policy
// ---------------------------------------------------------------------------

pub fn clamp_probs(p: &mut [f64]) {
    for v in p {
        *v = v.clamp(PROB_EPS, 1.0 - PROB_EPS);
    }
}

/// Per-sensor transmit probabilities for a state.
pub fn policy_forward(actor: &Network, state: &Tensor) -> Result<Vec<f64>> {
    let out = actor.forward(state)?;
    let mut p = out.data().to_vec();
    clamp_probs(&mut p);
    Ok(p)
}

/// Independent Bernoulli draw per sensor.
pub fn sample_action(p: &[f64], rng: &mut impl Rng) -> ActionMask {
    ActionMask::new(p.iter().map(|&pi| rng.gen::<f64>() < pi).collect())
}

/// Deterministic evaluation mode: transmit where p > 0.5.
pub fn greedy_action(p: &[f64]) -> ActionMask {
    ActionMask::new(p.iter().map(|&pi| pi > 0.5).collect())
}

/// Joint log-probability of a factored-Bernoulli action.
pub fn log_prob(p: &[f64], mask: &ActionMask) -> f64 {
    p.iter()
        .zip(mask.bits())
        .map(|(&pi, &b)| {
            let pi = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if b {
                pi.ln()
            } else {
                (1.0 - pi).ln()
            }
        })
        .sum()
}

/// d log pi / d p_i for the taken action.
pub fn log_prob_grad(p: &[f64], mask: &ActionMask) -> Vec<f64> {
    p.iter()
        .zip(mask.bits())
        .map(|(&pi, &b)| {
            let pi = pi.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if b {
                1.0 / pi
            } else {
                -1.0 / (1.0 - pi)
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Rewards
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    /// correct: k1 - k2 * (d_active / N)^2; incorrect: -zeta
    Quadratic,
    /// correct: K + (1 - K) / d_active; incorrect: -zeta_prime
    Harmonic,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct RewardConfig {
    pub kind: RewardKind,
    pub k1: f64,
    pub k2: f64,
    /// Incorrect-branch penalty of the quadratic reward. Not pinned anywhere
    /// authoritative; kept on the order of the correct-branch values.
    pub zeta: f64,
    /// Accuracy/overhead trade-off knob of the harmonic reward, in [0, 1].
    pub k: f64,
    pub zeta_prime: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            kind: RewardKind::Quadratic,
            k1: 200.0,
            k2: 100.0,
            zeta: 100.0,
            k: 0.4,
            zeta_prime: 0.75,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.k) {
            return Err(Error::Config(format!("K must be in [0,1], got {}", self.k)));
        }
        if self.zeta < 0.0 || self.zeta_prime < 0.0 || self.k1 < 0.0 || self.k2 < 0.0 {
            return Err(Error::Config("reward constants must be nonnegative".into()));
        }
        Ok(())
    }

    /// Raw reward. The harmonic correct branch requires d_active >= 1; a
    /// correct prediction with no data is a contract violation upstream.
    pub fn reward(&self, correct: bool, d_active: usize, n: usize) -> f64 {
        match (self.kind, correct) {
            (RewardKind::Quadratic, true) => {
                let frac = d_active as f64 / n as f64;
                self.k1 - self.k2 * frac * frac
            }
            (RewardKind::Quadratic, false) => -self.zeta,
            (RewardKind::Harmonic, true) => {
                assert!(d_active >= 1, "correct prediction requires data at the CN");
                self.k + (1.0 - self.k) / d_active as f64
            }
            (RewardKind::Harmonic, false) => -self.zeta_prime,
        }
    }

    /// Raw reward range, used only for the reporting scale.
    pub fn raw_range(&self, n: usize) -> (f64, f64) {
        match self.kind {
            RewardKind::Quadratic => {
                let frac = 1.0 / n as f64;
                (-self.zeta, self.k1 - self.k2 * frac * frac)
            }
            RewardKind::Harmonic => (-self.zeta_prime, 1.0),
        }
    }

    /// Affine map of a raw reward onto [-1, 1] for logs and plots; learning
    /// always uses raw values.
    pub fn normalized(&self, raw: f64, n: usize) -> f64 {
        let (lo, hi) = self.raw_range(n);
        2.0 * (raw - lo) / (hi - lo) - 1.0
    }
}

// ---------------------------------------------------------------------------
// Advantage
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageRecord {
    pub reward: f64,
    pub v_s: f64,
    pub v_s_next: f64,
    pub gamma: f64,
    pub advantage: f64,
}

pub fn advantage(reward: f64, v_s: f64, v_s_next: f64, gamma: f64) -> AdvantageRecord {
    AdvantageRecord {
        reward,
        v_s,
        v_s_next,
        gamma,
        advantage: reward + gamma * v_s_next - v_s,
    }
}

impl AdvantageRecord {
    /// The stored identity, exactly as computed.
    pub fn identity_holds(&self) -> bool {
        self.advantage == self.reward + self.gamma * self.v_s_next - self.v_s
    }
}

// ---------------------------------------------------------------------------
// Updates
// ---------------------------------------------------------------------------

/// One A2C update on cached forward passes of both networks.
///
/// Critic: descent on 0.5 * (R + gamma V(s') - V(s))^2, i.e. output gradient
/// -A. Actor: ascent on A * log pi, realized as descent on -A * log pi.
#[allow(clippy::too_many_arguments)]
pub fn update(
    agent: &mut Agent,
    actor_cache: &ForwardCache,
    critic_cache: &ForwardCache,
    p: &[f64],
    mask: &ActionMask,
    adv: &AdvantageRecord,
    actor_opt: &mut Optimizer,
    critic_opt: &mut Optimizer,
) -> Result<()> {
    let critic_gout = Tensor::scalar(-adv.advantage);
    let critic_grads = agent.critic.backward(critic_cache, &critic_gout)?;
    critic_opt.step(&mut agent.critic, &critic_grads)?;

    let lg = log_prob_grad(p, mask);
    let actor_gout = Tensor::from_vec(
        &[p.len()],
        lg.iter().map(|g| -adv.advantage * g).collect(),
    )?;
    let actor_grads = agent.actor.backward(actor_cache, &actor_gout)?;
    actor_opt.step(&mut agent.actor, &actor_grads)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub reward: RewardConfig,
    /// Actor learning rate (alpha).
    pub actor_lr: f64,
    /// Critic learning rate (beta).
    pub critic_lr: f64,
    pub gamma: f64,
    pub epochs: usize,
    /// Advantages averaged over this many samples per update; 1 reproduces
    /// the per-sample inner loop literally.
    pub batch_size: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            reward: RewardConfig::default(),
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            gamma: 0.99,
            epochs: 60,
            batch_size: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_reward_raw: f64,
    pub mean_reward_normalized: f64,
    pub accuracy: f64,
    pub comm_overhead: f64,
}

/// Precomputed environment view of one scene: features and state are frozen
/// during agent training.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub features: Vec<Tensor>,
    pub state: Tensor,
    pub label: usize,
}

pub fn prepare_scenes(sensors: &SensorModel, scenes: &[Scene]) -> Result<Vec<PreparedScene>> {
    scenes
        .iter()
        .map(|scene| {
            let outputs = sense(scene, sensors)?;
            let state = assemble_state(&outputs);
            Ok(PreparedScene {
                features: outputs.into_iter().map(|o| o.feature).collect(),
                state,
                label: scene.label as usize,
            })
        })
        .collect()
}

/// Act on one prepared scene with a given mask: classify if any sensor
/// transmits, otherwise count the prediction as incorrect (no data at the CN
/// cannot yield a correct classification).
pub fn act(cloud: &CloudModel, scene: &PreparedScene, mask: &ActionMask) -> Result<bool> {
    if mask.d_active() == 0 {
        return Ok(false);
    }
    let fused = fuse(&scene.features, mask)?;
    let (label, _) = classify(cloud, &fused)?;
    Ok(label == scene.label)
}

/// Algorithm: per epoch, iterate the training scenes; per scene assemble the
/// state, sample an action, fuse, classify, reward, advantage, update.
pub fn train(
    agent: &mut Agent,
    sensors: &SensorModel,
    cloud: &CloudModel,
    scenes: &[Scene],
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochRecord>> {
    config.reward.validate()?;
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let n = sensors.n_sensors();
    let prepared = prepare_scenes(sensors, scenes)?;
    let mut actor_opt = Optimizer::new(OptimKind::rmsprop(), config.actor_lr, &agent.actor);
    let mut critic_opt = Optimizer::new(OptimKind::rmsprop(), config.critic_lr, &agent.critic);
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x61326321);
    let mut order: Vec<usize> = (0..prepared.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        for i in (1..order.len()).rev() {
            let j = rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut reward_sum = 0.0;
        let mut correct_count = 0usize;
        let mut active_sum = 0usize;

        for chunk in order.chunks(config.batch_size) {
            let mut steps = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let scene = &prepared[idx];
                let actor_cache = agent.actor.forward_cached(&scene.state)?;
                let mut p = actor_cache.output().data().to_vec();
                clamp_probs(&mut p);
                let mask = sample_action(&p, &mut rng);
                let correct = act(cloud, scene, &mask)?;
                let reward = config.reward.reward(correct, mask.d_active(), n);
                let critic_cache = agent.critic.forward_cached(&scene.state)?;
                let v_s = critic_cache.output().data()[0];
                let adv = advantage(reward, v_s, 0.0, config.gamma);
                debug_assert!(adv.identity_holds());
                if !adv.advantage.is_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite advantage (epoch {epoch}, sample {idx})"
                    )));
                }
                reward_sum += reward;
                if correct {
                    correct_count += 1;
                }
                active_sum += mask.d_active();
                steps.push((actor_cache, critic_cache, p, mask, adv));
            }
            // advantages averaged over the chunk via gradient scaling
            let scale = 1.0 / chunk.len() as f64;
            let mut actor_acc = agent.actor.zero_grads();
            let mut critic_acc = agent.critic.zero_grads();
            for (actor_cache, critic_cache, p, mask, adv) in &steps {
                let critic_gout = Tensor::scalar(-adv.advantage);
                critic_acc.add_scaled(&agent.critic.backward(critic_cache, &critic_gout)?, scale);
                let lg = log_prob_grad(p, mask);
                let actor_gout = Tensor::from_vec(
                    &[p.len()],
                    lg.iter().map(|g| -adv.advantage * g).collect(),
                )?;
                actor_acc.add_scaled(&agent.actor.backward(actor_cache, &actor_gout)?, scale);
            }
            critic_opt.step(&mut agent.critic, &critic_acc)?;
            actor_opt.step(&mut agent.actor, &actor_acc)?;
        }

        let count = prepared.len() as f64;
        let mean_raw = reward_sum / count;
        history.push(EpochRecord {
            epoch,
            mean_reward_raw: mean_raw,
            mean_reward_normalized: config.reward.normalized(mean_raw, n),
            accuracy: correct_count as f64 / count,
            comm_overhead: active_sum as f64 / (count * n as f64),
        });
    }
    Ok(history)
}

/// Greedy-policy evaluation over a scene list; returns per-scene masks for
/// contribution reporting.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub accuracy: f64,
    pub comm_overhead: f64,
    pub masks: Vec<ActionMask>,
}

pub fn evaluate_greedy(
    agent: &Agent,
    sensors: &SensorModel,
    cloud: &CloudModel,
    scenes: &[Scene],
) -> Result<Evaluation> {
    let n = sensors.n_sensors();
    let prepared = prepare_scenes(sensors, scenes)?;
    let mut correct = 0usize;
    let mut active = 0usize;
    let mut masks = Vec::with_capacity(prepared.len());
    for scene in &prepared {
        let p = policy_forward(&agent.actor, &scene.state)?;
        let mask = greedy_action(&p);
        if act(cloud, scene, &mask)? {
            correct += 1;
        }
        active += mask.d_active();
        masks.push(mask);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / prepared.len() as f64,
        comm_overhead: active as f64 / (prepared.len() * n) as f64,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_split, DataConfig};
    use crate::env::{ArchConfig, SensorModel};

    fn tiny_state() -> Tensor {
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let mut t = Tensor::zeros(&[6, 16, 16]);
        t.fill_with(|| rng.gen_range(-1.0..1.0));
        t
    }

    fn default_agent(seed: u64) -> Agent {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Agent::new(6, 32, &ArchConfig::default(), &mut rng)
    }

    #[test]
    fn zero_weight_actor_outputs_half() {
        let mut agent = default_agent(0);
        for layer in agent.actor.layers_mut() {
            if let Some((w, b)) = layer.parameters_mut() {
                w.fill_with(|| 0.0);
                b.fill_with(|| 0.0);
            }
        }
        let p = policy_forward(&agent.actor, &tiny_state()).unwrap();
        assert_eq!(p.len(), 6);
        for &pi in &p {
            assert!((pi - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn policy_forward_is_deterministic_and_in_range() {
        let agent = default_agent(1);
        let s = tiny_state();
        let a = policy_forward(&agent.actor, &s).unwrap();
        let b = policy_forward(&agent.actor, &s).unwrap();
        assert_eq!(a, b);
        for &pi in &a {
            assert!(pi > 0.0 && pi < 1.0);
        }
    }

    #[test]
    fn greedy_action_threshold() {
        let mask = greedy_action(&[0.2, 0.8]);
        assert_eq!(mask.bits(), &[false, true]);
    }

    #[test]
    fn sampling_matches_probabilities() {
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let p = [0.5; 6];
        let draws = 100_000;
        let mut counts = [0usize; 6];
        for _ in 0..draws {
            let m = sample_action(&p, &mut rng);
            for (c, &b) in counts.iter_mut().zip(m.bits()) {
                if b {
                    *c += 1;
                }
            }
        }
        for &c in &counts {
            let mean = c as f64 / draws as f64;
            assert!((0.49..=0.51).contains(&mean), "mean {mean}");
        }
    }

    #[test]
    fn log_prob_values() {
        assert!((log_prob(&[0.5, 0.5], &ActionMask::new(vec![true, false])) - 0.25f64.ln()).abs() < 1e-12);
        assert!((log_prob(&[0.9], &ActionMask::new(vec![true])) - 0.9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_prob_normalizes_over_action_space() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..20 {
            let p: Vec<f64> = (0..6).map(|_| rng.gen_range(0.01..0.99)).collect();
            let mut total = 0.0;
            for bits in 0..(1u32 << 6) {
                let mask = ActionMask::new((0..6).map(|i| bits & (1 << i) != 0).collect());
                total += log_prob(&p, &mask).exp();
            }
            assert!((total - 1.0).abs() < 1e-9, "total {total}");
        }
    }

    #[test]
    fn reward_anchor_values() {
        let cfg = RewardConfig::default();
        let r = cfg.reward(true, 2, 6);
        assert!((r - (200.0 - 100.0 / 9.0)).abs() < 1e-12);
        assert_eq!(cfg.reward(false, 3, 6), -100.0);
        let h = RewardConfig {
            kind: RewardKind::Harmonic,
            ..RewardConfig::default()
        };
        assert_eq!(h.reward(true, 1, 6), 1.0);
        assert_eq!(h.reward(false, 0, 6), -0.75);
    }

    #[test]
    fn reward_monotone_decreasing_in_d_active() {
        for kind in [RewardKind::Quadratic, RewardKind::Harmonic] {
            let cfg = RewardConfig {
                kind,
                ..RewardConfig::default()
            };
            let mut prev = f64::INFINITY;
            for d in 1..=6 {
                let r = cfg.reward(true, d, 6);
                assert!(r < prev, "{kind:?} d={d}");
                prev = r;
            }
        }
    }

    #[test]
    fn advantage_arithmetic() {
        let a = advantage(1.0, 0.2, 0.0, 0.99);
        assert!((a.advantage - 0.8).abs() < 1e-15);
        assert!(a.identity_holds());
        let fixed = advantage(2.0, 2.0 + 0.99 * 0.5, 0.5, 0.99);
        assert_eq!(fixed.advantage, 0.0);
        let g0 = advantage(3.0, 1.0, 9.0, 0.0);
        assert_eq!(g0.advantage, 2.0);
    }

    #[test]
    fn zero_advantage_changes_nothing() {
        let mut agent = default_agent(4);
        let before_actor = agent.actor.clone();
        let before_critic = agent.critic.clone();
        let s = tiny_state();
        let actor_cache = agent.actor.forward_cached(&s).unwrap();
        let critic_cache = agent.critic.forward_cached(&s).unwrap();
        let p = policy_forward(&agent.actor, &s).unwrap();
        let mask = greedy_action(&p);
        let adv = advantage(1.0, 1.0, 0.0, 0.0);
        let mut ao = Optimizer::new(OptimKind::rmsprop(), 1e-4, &agent.actor);
        let mut co = Optimizer::new(OptimKind::rmsprop(), 1e-4, &agent.critic);
        update(&mut agent, &actor_cache, &critic_cache, &p, &mask, &adv, &mut ao, &mut co).unwrap();
        assert_eq!(agent.actor, before_actor);
        assert_eq!(agent.critic, before_critic);
    }

    #[test]
    fn zero_actor_lr_decouples_updates() {
        let mut agent = default_agent(5);
        let before_actor = agent.actor.clone();
        let before_critic = agent.critic.clone();
        let s = tiny_state();
        let actor_cache = agent.actor.forward_cached(&s).unwrap();
        let critic_cache = agent.critic.forward_cached(&s).unwrap();
        let p = policy_forward(&agent.actor, &s).unwrap();
        let mask = greedy_action(&p);
        let adv = advantage(5.0, 0.0, 0.0, 0.99);
        let mut ao = Optimizer::new(OptimKind::rmsprop(), 0.0, &agent.actor);
        let mut co = Optimizer::new(OptimKind::rmsprop(), 1e-4, &agent.critic);
        update(&mut agent, &actor_cache, &critic_cache, &p, &mask, &adv, &mut ao, &mut co).unwrap();
        assert_eq!(agent.actor, before_actor);
        assert_ne!(agent.critic, before_critic);
    }

    #[test]
    fn positive_advantage_increases_taken_action_log_prob() {
        let mut agent = default_agent(6);
        let s = tiny_state();
        let p0 = policy_forward(&agent.actor, &s).unwrap();
        let mask = ActionMask::new(vec![true, false, true, true, false, true]);
        let lp0 = log_prob(&p0, &mask);
        let actor_cache = agent.actor.forward_cached(&s).unwrap();
        let critic_cache = agent.critic.forward_cached(&s).unwrap();
        let adv = advantage(10.0, 0.0, 0.0, 0.99);
        let mut ao = Optimizer::new(OptimKind::Sgd, 1e-4, &agent.actor);
        let mut co = Optimizer::new(OptimKind::Sgd, 1e-4, &agent.critic);
        update(&mut agent, &actor_cache, &critic_cache, &p0, &mask, &adv, &mut ao, &mut co).unwrap();
        let p1 = policy_forward(&agent.actor, &s).unwrap();
        assert!(log_prob(&p1, &mask) > lp0);
    }

    #[test]
    fn critic_regresses_to_fixed_reward() {
        let mut agent = default_agent(7);
        let s = tiny_state();
        let reward = 1.0;
        let mut co = Optimizer::new(OptimKind::rmsprop(), 1e-3, &agent.critic);
        let mut v = 0.0;
        for _ in 0..2000 {
            let cache = agent.critic.forward_cached(&s).unwrap();
            v = cache.output().data()[0];
            let adv = advantage(reward, v, 0.0, 0.99);
            let gout = Tensor::scalar(-adv.advantage);
            let grads = agent.critic.backward(&cache, &gout).unwrap();
            co.step(&mut agent.critic, &grads).unwrap();
        }
        assert!((v - reward).abs() < 1e-2, "v = {v}");
    }

    #[test]
    fn zero_epochs_is_vacuous() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let arch = ArchConfig::default();
        let sensors = SensorModel::new(6, &arch, &mut rng);
        let cloud = crate::env::CloudModel::new(6, 32, &arch, &mut rng);
        let split = build_split(0, 8, 4, &DataConfig::default()).unwrap();
        let mut agent = default_agent(9);
        let before = agent.actor.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let history = train(&mut agent, &sensors, &cloud, &split.train, &cfg, 0).unwrap();
        assert!(history.is_empty());
        assert_eq!(agent.actor, before);
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let arch = ArchConfig::default();
        let sensors = SensorModel::new(6, &arch, &mut rng);
        let cloud = crate::env::CloudModel::new(6, 32, &arch, &mut rng);
        let split = build_split(1, 16, 4, &DataConfig::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let mut a1 = default_agent(11);
        let h1 = train(&mut a1, &sensors, &cloud, &split.train, &cfg, 5).unwrap();
        let mut a2 = default_agent(11);
        let h2 = train(&mut a2, &sensors, &cloud, &split.train, &cfg, 5).unwrap();
        assert_eq!(h1, h2);
        assert_eq!(a1.actor, a2.actor);
        assert_eq!(a1.critic, a2.critic);
    }
}
