//! Training loops: online generation-replay training, offline training
//! against synthetic Gaussian references, greedy evaluation and dataset
//! generation.

use std::path::PathBuf;

use rand::{Rng, RngCore, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::advantage::{gae, value_loss_grad, value_targets, GaeConfig, TrajectorySegment};
use crate::buffer::{GenerationBuffer, Transition};
use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::diffcore::{Activation, Mlp, MlpSpec, OptimState, OutputTransform};
use crate::envs::{ActionSpace, Env, EnvId, EnvPool, EnvSpec};
use crate::error::{Error, Result};
use crate::objective::{policy_objective, ratio_diagnostic, ObjectiveReport, SurrogateConfig};
use crate::policy::{Action, DistParams, PolicyKind, PolicyModel};

/// Optimizer settings shared by the policy and value networks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub policy_lr: f64,
    pub value_lr: f64,
    /// Multiplicative learning-rate decay applied every `decay_interval`
    /// optimizer steps.
    pub decay_factor: f64,
    pub decay_interval: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub max_grad_norm: f64,
}

impl OptimConfig {
    pub fn for_space(discrete: bool) -> Self {
        if discrete {
            Self {
                policy_lr: 2.5e-4,
                value_lr: 2.5e-4,
                decay_factor: 0.99,
                decay_interval: 5_000,
                max_grad_norm: 0.5,
            }
        } else {
            Self {
                policy_lr: 1.5e-4,
                value_lr: 1.5e-4,
                decay_factor: 0.98,
                decay_interval: 1_000_000,
                max_grad_norm: 0.5,
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return Err(Error::Config("optim learning rates must be positive".into()));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) || self.decay_interval == 0 {
            return Err(Error::Config("optim.decay_factor must lie in (0, 1] and decay_interval be >= 1".into()));
        }
        if !(self.max_grad_norm >= 0.0) {
            return Err(Error::Config("optim.max_grad_norm must be >= 0".into()));
        }
        Ok(())
    }
}

/// Online training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub n_envs: usize,
    /// Number of stored generations `M`.
    pub generations: usize,
    pub steps_per_env: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    /// Initial Gaussian std as a multiple of half the action range.
    pub init_std_scale: f64,
    pub surrogate: SurrogateConfig,
    pub gae: GaeConfig,
    pub optim: OptimConfig,
    pub total_steps: u64,
    /// Env steps between greedy evaluations; 0 disables them.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Defaults for the given environment: ExO with `M = 4` on 2 envs.
    pub fn defaults(id: EnvId) -> Self {
        let discrete = id.action_space().is_discrete();
        Self {
            env: EnvSpec::new(id),
            n_envs: 2,
            generations: 4,
            steps_per_env: 256,
            epochs: 4,
            batch_size: 256,
            hidden: vec![64, 64],
            init_std_scale: 1.0,
            surrogate: SurrogateConfig::exo(discrete),
            gae: GaeConfig::default(),
            optim: OptimConfig::for_space(discrete),
            total_steps: 200_000,
            eval_interval: 10_000,
            eval_episodes: 5,
            seed: 0,
        }
    }

    pub fn steps_per_round(&self) -> u64 {
        (self.n_envs * self.steps_per_env) as u64
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.surrogate.validate()?;
        self.gae.validate()?;
        self.optim.validate()?;
        if self.n_envs == 0 || self.steps_per_env == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("n_envs, steps_per_env, epochs and batch_size must be >= 1".into()));
        }
        if self.generations == 0 {
            return Err(Error::Config("train.generations (M) must be >= 1".into()));
        }
        if (self.n_envs * self.steps_per_env) % self.batch_size != 0 {
            return Err(Error::Config(format!(
                "n_envs x steps_per_env = {} is not divisible by batch_size {}",
                self.n_envs * self.steps_per_env,
                self.batch_size
            )));
        }
        if self.hidden.iter().any(|h| *h == 0) {
            return Err(Error::Config("hidden layer widths must be >= 1".into()));
        }
        if !(self.init_std_scale > 0.0) {
            return Err(Error::Config("train.init_std_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Work counters for a training run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub env_steps: u64,
    pub generations: u64,
    pub gae_calls: u64,
    pub advantages_computed: u64,
    pub update_rounds: u64,
    pub optimizer_steps: u64,
    /// Env steps collected for the most recent update round.
    pub fresh_per_round: u64,
}

/// One line of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsEvent {
    pub step: u64,
    pub event: String,
    pub return_mean: Option<f64>,
    pub return_std: Option<f64>,
    pub y: Option<f64>,
    pub kl_mean: Option<f64>,
    pub outside_frac: Option<f64>,
    pub lr: Option<f64>,
    pub generation: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_round_start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fresh_samples: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl MetricsEvent {
    fn new(step: u64, event: &str, generation: u64) -> Self {
        Self {
            step,
            event: event.to_string(),
            return_mean: None,
            return_std: None,
            y: None,
            kl_mean: None,
            outside_frac: None,
            lr: None,
            generation,
            y_round_start: None,
            fresh_samples: None,
            value_loss: None,
            sigma: None,
        }
    }
}

/// Callback receiving each metrics event as it is produced.
pub type Sink<'a> = &'a mut dyn FnMut(&MetricsEvent) -> Result<()>;

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Independent seed for a named stream of a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const POOL_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;

pub fn value_net<R: Rng + ?Sized>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Mlp> {
    let spec = MlpSpec::new(obs_dim, hidden.to_vec(), 1, Activation::Tanh, OutputTransform::Identity)?;
    Mlp::orthogonal(spec, std::f64::consts::SQRT_2, 1.0, rng)
}

/// Fresh policy for an environment. Gaussian stds start at
/// `init_std_scale` times half the action range.
pub fn init_policy<R: Rng + ?Sized>(id: EnvId, hidden: &[usize], init_std_scale: f64, rng: &mut R) -> Result<PolicyModel> {
    match id.action_space() {
        ActionSpace::Discrete(n) => PolicyModel::categorical(id.obs_dim(), n, hidden, rng),
        ActionSpace::Continuous { low, high } => {
            let std: Vec<f64> = low.iter().zip(&high).map(|(l, h)| init_std_scale * 0.5 * (h - l)).collect();
            PolicyModel::gaussian(id.obs_dim(), std.len(), hidden, &std, rng)
        }
    }
}

fn check_variant(policy: &PolicyModel, id: EnvId) -> Result<()> {
    let matches = match (policy.kind, id.action_space()) {
        (PolicyKind::Categorical, ActionSpace::Discrete(n)) => policy.action_dim() == n,
        (PolicyKind::Gaussian, ActionSpace::Continuous { low, .. }) => policy.action_dim() == low.len(),
        _ => false,
    };
    if !matches || policy.obs_dim() != id.obs_dim() {
        return Err(Error::Config(format!(
            "{:?} policy with {} inputs and {} outputs does not fit env {}",
            policy.kind,
            policy.obs_dim(),
            policy.action_dim(),
            id.name()
        )));
    }
    Ok(())
}

fn clip_grad_norm(grad: &mut [f64], max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Rolls the pool forward `steps_per_env` ticks under a frozen policy and
/// returns the generation with advantages attached.
///
/// The segment is laid out env by env. The last step of each env's run is
/// marked truncated so that advantage estimation cuts there and bootstraps
/// from the value of the true successor. Advantages for the whole
/// generation come from a single estimation pass.
#[allow(clippy::too_many_arguments)]
pub fn collect_generation<R: Rng + ?Sized>(
    policy: &PolicyModel,
    value: &Mlp,
    pool: &mut EnvPool,
    steps_per_env: usize,
    gae_cfg: &GaeConfig,
    generation_id: u64,
    counters: &mut Counters,
    rng: &mut R,
) -> Result<(TrajectorySegment, Vec<Transition>)> {
    let n = pool.n_envs();
    let mut per_env: Vec<TrajectorySegment> = (0..n)
        .map(|_| TrajectorySegment {
            obs: Vec::with_capacity(steps_per_env),
            actions: Vec::with_capacity(steps_per_env),
            rewards: Vec::with_capacity(steps_per_env),
            values: Vec::with_capacity(steps_per_env),
            next_values: Vec::with_capacity(steps_per_env),
            terminated: Vec::with_capacity(steps_per_env),
            truncated: Vec::with_capacity(steps_per_env),
            dists: Vec::with_capacity(steps_per_env),
        })
        .collect();
    for _ in 0..steps_per_env {
        let obs: Vec<Vec<f64>> = pool.observations().to_vec();
        let mut actions = Vec::with_capacity(n);
        for (i, o) in obs.iter().enumerate() {
            let dist = policy.dist_at(o)?;
            let a = dist.sample(rng);
            let seg = &mut per_env[i];
            seg.values.push(value.forward(o)?[0]);
            seg.dists.push(dist);
            seg.actions.push(a.clone());
            actions.push(a);
        }
        let results = pool.step(&actions)?;
        for (i, (o, res)) in obs.into_iter().zip(results).enumerate() {
            let seg = &mut per_env[i];
            let next_v = if res.terminated { 0.0 } else { value.forward(&res.next_obs)?[0] };
            if !res.reward.is_finite() || !next_v.is_finite() {
                return Err(Error::Numerical(format!(
                    "env {i} produced reward {} and successor value {next_v}",
                    res.reward
                )));
            }
            seg.obs.push(o);
            seg.rewards.push(res.reward);
            seg.next_values.push(next_v);
            seg.terminated.push(res.terminated);
            seg.truncated.push(res.truncated);
        }
    }
    let mut segment = TrajectorySegment {
        obs: Vec::new(),
        actions: Vec::new(),
        rewards: Vec::new(),
        values: Vec::new(),
        next_values: Vec::new(),
        terminated: Vec::new(),
        truncated: Vec::new(),
        dists: Vec::new(),
    };
    for mut seg in per_env {
        if let Some(last) = seg.truncated.last_mut() {
            *last = true;
        }
        segment.obs.append(&mut seg.obs);
        segment.actions.append(&mut seg.actions);
        segment.rewards.append(&mut seg.rewards);
        segment.values.append(&mut seg.values);
        segment.next_values.append(&mut seg.next_values);
        segment.terminated.append(&mut seg.terminated);
        segment.truncated.append(&mut seg.truncated);
        segment.dists.append(&mut seg.dists);
    }
    segment.validate()?;
    let advantages = gae(&segment, gae_cfg);
    counters.gae_calls += 1;
    counters.advantages_computed += advantages.len() as u64;
    let targets = value_targets(&segment, &advantages);
    let transitions = (0..segment.len())
        .map(|t| Transition {
            obs: segment.obs[t].clone(),
            action: segment.actions[t].clone(),
            reward: segment.rewards[t],
            ref_dist: segment.dists[t].clone(),
            advantage: advantages[t],
            value_target: targets[t],
            generation_id,
        })
        .collect();
    counters.env_steps += (n * steps_per_env) as u64;
    counters.fresh_per_round = (n * steps_per_env) as u64;
    counters.generations += 1;
    Ok((segment, transitions))
}

/// Mean `|ln r|` of the current policy over a set of stored transitions.
pub fn ratio_drift<'a>(policy: &PolicyModel, transitions: impl IntoIterator<Item = &'a Transition>) -> Result<f64> {
    let mut ratios = Vec::new();
    for t in transitions {
        ratios.push(policy.ratio(&t.ref_dist, &t.obs, &t.action)?.value);
    }
    Ok(ratio_diagnostic(&ratios))
}

/// Diagnostics of one update round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundReport {
    /// Ratio drift over the newest generation before any step.
    pub y_round_start: f64,
    /// Ratio drift over the whole buffer after the round.
    pub y_round_end: f64,
    /// Post-round drift per generation, newest first.
    pub y_by_age: Vec<f64>,
    pub kl_mean: f64,
    pub outside_frac: f64,
    pub objective: f64,
    pub value_loss: f64,
    pub excluded: usize,
    pub minibatches: usize,
}

/// Network and optimizer state advanced by an update round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Learner {
    pub policy: PolicyModel,
    pub value: Mlp,
    pub policy_opt: OptimState,
    pub value_opt: OptimState,
}

impl Learner {
    pub fn new<R: Rng + ?Sized>(cfg: &TrainConfig, rng: &mut R) -> Result<Self> {
        let policy = init_policy(cfg.env.id, &cfg.hidden, cfg.init_std_scale, rng)?;
        let value = value_net(cfg.env.id.obs_dim(), &cfg.hidden, rng)?;
        let o = &cfg.optim;
        Ok(Self {
            policy_opt: OptimState::new(policy.param_count(), o.policy_lr, o.decay_factor, o.decay_interval)?,
            value_opt: OptimState::new(value.param_count(), o.value_lr, o.decay_factor, o.decay_interval)?,
            policy,
            value,
        })
    }

    /// One policy ascent step and one value descent step on a minibatch.
    pub fn minibatch_step(
        &mut self,
        batch: &[&Transition],
        surrogate: &SurrogateConfig,
        max_grad_norm: f64,
    ) -> Result<(ObjectiveReport, f64)> {
        let mut rep = policy_objective(&self.policy, batch, surrogate)?;
        if !rep.value.is_finite() {
            return Err(Error::Training {
                step: self.policy_opt.step,
                max_abs_grad: rep.grad.iter().fold(0.0_f64, |m, g| m.max(g.abs())),
                message: format!("non-finite policy objective {}", rep.value),
            });
        }
        clip_grad_norm(&mut rep.grad, max_grad_norm);
        let mut flat = self.policy.flat_params();
        self.policy_opt.step(&mut flat, &rep.grad)?;
        self.policy.set_flat_params(&flat)?;

        let pairs: Vec<(&[f64], f64)> = batch.iter().map(|t| (t.obs.as_slice(), t.value_target)).collect();
        let (loss, mut vgrad) = value_loss_grad(&self.value, &pairs)?;
        clip_grad_norm(&mut vgrad, max_grad_norm);
        self.value_opt.descend(&mut self.value.params.values, &vgrad)?;
        Ok((rep, loss))
    }
}

/// `epochs` passes of shuffled minibatch updates over the buffer. On any
/// error the learner is restored to its state at the start of the round.
pub fn update_round<R: Rng + ?Sized>(
    learner: &mut Learner,
    buffer: &GenerationBuffer,
    cfg: &TrainConfig,
    counters: &mut Counters,
    rng: &mut R,
) -> Result<RoundReport> {
    let newest = buffer
        .newest()
        .ok_or_else(|| Error::Input("update round on an empty buffer".into()))?;
    let y_round_start = ratio_drift(&learner.policy, &newest.transitions)?;
    let snapshot = learner.clone();
    let result = (|| -> Result<RoundReport> {
        let batches = buffer.sample_minibatches(cfg.batch_size, cfg.epochs, rng)?;
        let mut rep = RoundReport {
            y_round_start,
            y_round_end: 0.0,
            y_by_age: Vec::new(),
            kl_mean: 0.0,
            outside_frac: 0.0,
            objective: 0.0,
            value_loss: 0.0,
            excluded: 0,
            minibatches: batches.len(),
        };
        let nb = batches.len() as f64;
        for batch in &batches {
            let (o, loss) = learner.minibatch_step(batch, &cfg.surrogate, cfg.optim.max_grad_norm)?;
            counters.optimizer_steps += 1;
            rep.kl_mean += o.kl_mean / nb;
            rep.outside_frac += o.outside_frac / nb;
            rep.objective += o.value / nb;
            rep.value_loss += loss / nb;
            rep.excluded += o.excluded;
        }
        let gens: Vec<_> = buffer.generations().collect();
        for g in gens.iter().rev() {
            rep.y_by_age.push(ratio_drift(&learner.policy, &g.transitions)?);
        }
        // generations have equal sizes, so the buffer-wide mean is the mean over ages
        rep.y_round_end = rep.y_by_age.iter().sum::<f64>() / rep.y_by_age.len() as f64;
        Ok(rep)
    })();
    match result {
        Ok(rep) => {
            counters.update_rounds += 1;
            Ok(rep)
        }
        Err(e) => {
            *learner = snapshot;
            Err(e)
        }
    }
}

/// Greedy (mode or mean action) evaluation on unscaled rewards.
pub fn evaluate_policy(policy: &PolicyModel, spec: &EnvSpec, episodes: usize, seed: u64) -> Result<Vec<f64>> {
    check_variant(policy, spec.id)?;
    let mut env = Env::new(
        EnvSpec {
            reward_scale: 1.0,
            ..spec.clone()
        },
        seed,
    )?;
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut total = 0.0;
        loop {
            let res = env.step(&policy.dist_at(&obs)?.mode())?;
            total += res.reward;
            if res.done() {
                break;
            }
            obs = res.next_obs;
        }
        returns.push(total);
    }
    Ok(returns)
}

/// Online trainer state.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub learner: Learner,
    pub buffer: GenerationBuffer,
    pub counters: Counters,
    pool: EnvPool,
    rng: ChaCha8Rng,
    eval_seed: u64,
    next_eval: u64,
    pub last_round: Option<RoundReport>,
}

/// Result of a completed run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub learner: Learner,
    pub counters: Counters,
    pub events: Vec<MetricsEvent>,
    pub checkpoint: Checkpoint,
}

impl Trainer {
    pub fn new(cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let learner = Learner::new(&cfg, &mut rng)?;
        let pool = EnvPool::new(&cfg.env, cfg.n_envs, derive_seed(cfg.seed, POOL_STREAM))?;
        Ok(Self {
            buffer: GenerationBuffer::new(cfg.generations)?,
            eval_seed: derive_seed(cfg.seed, EVAL_STREAM),
            next_eval: 0,
            counters: Counters::default(),
            pool,
            rng,
            learner,
            cfg,
            last_round: None,
        })
    }

    pub fn lr(&self) -> f64 {
        self.learner.policy_opt.effective_lr()
    }

    /// Collect one generation, push it, run one update round.
    pub fn round(&mut self) -> Result<RoundReport> {
        let id = self.counters.generations;
        let (_, transitions) = collect_generation(
            &self.learner.policy,
            &self.learner.value,
            &mut self.pool,
            self.cfg.steps_per_env,
            &self.cfg.gae,
            id,
            &mut self.counters,
            &mut self.rng,
        )?;
        self.buffer.push_generation(transitions, id)?;
        let rep = update_round(&mut self.learner, &self.buffer, &self.cfg, &mut self.counters, &mut self.rng)?;
        self.last_round = Some(rep.clone());
        Ok(rep)
    }

    pub fn evaluate(&self) -> Result<Vec<f64>> {
        evaluate_policy(&self.learner.policy, &self.cfg.env, self.cfg.eval_episodes, self.eval_seed)
    }

    fn eval_event(&self) -> Result<MetricsEvent> {
        let returns = self.evaluate()?;
        let (m, s) = mean_std(&returns);
        let mut ev = MetricsEvent::new(self.counters.env_steps, "eval", self.counters.generations);
        ev.return_mean = Some(m);
        ev.return_std = Some(s);
        ev.lr = Some(self.lr());
        Ok(ev)
    }

    fn maybe_eval(&mut self, events: &mut Vec<MetricsEvent>, sink: Sink) -> Result<()> {
        if self.cfg.eval_interval == 0 || self.cfg.eval_episodes == 0 || self.counters.env_steps < self.next_eval {
            return Ok(());
        }
        let ev = self.eval_event()?;
        sink(&ev)?;
        events.push(ev);
        while self.next_eval <= self.counters.env_steps {
            self.next_eval += self.cfg.eval_interval;
        }
        Ok(())
    }

    /// Runs rounds until the interaction budget is spent.
    pub fn run(mut self, sink: Sink) -> Result<TrainOutcome> {
        let mut events = Vec::new();
        self.maybe_eval(&mut events, sink)?;
        while self.counters.env_steps < self.cfg.total_steps {
            let rep = self.round()?;
            let mut ev = MetricsEvent::new(self.counters.env_steps, "update", self.counters.generations);
            let finished = self.pool.drain_finished_returns();
            if !finished.is_empty() {
                let (m, s) = mean_std(&finished);
                ev.return_mean = Some(m);
                ev.return_std = Some(s);
            }
            ev.y = Some(rep.y_round_end);
            ev.kl_mean = Some(rep.kl_mean);
            ev.outside_frac = Some(rep.outside_frac);
            ev.lr = Some(self.lr());
            ev.y_round_start = Some(rep.y_round_start);
            ev.fresh_samples = Some(self.counters.fresh_per_round);
            ev.value_loss = Some(rep.value_loss);
            sink(&ev)?;
            events.push(ev);
            self.maybe_eval(&mut events, sink)?;
        }
        let checkpoint = self.checkpoint();
        Ok(TrainOutcome {
            learner: self.learner,
            counters: self.counters,
            events,
            checkpoint,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            env: self.cfg.env.clone(),
            policy: self.learner.policy.clone(),
            value: Some(self.learner.value.clone()),
            policy_opt: Some(self.learner.policy_opt.clone()),
            value_opt: Some(self.learner.value_opt.clone()),
            rng: Some(self.rng.clone()),
            counters: self.counters.clone(),
        }
    }
}

/// Trains with `cfg`, passing every metrics event to `sink`.
pub fn train(cfg: TrainConfig, sink: Sink) -> Result<TrainOutcome> {
    Trainer::new(cfg)?.run(sink)
}

/// Offline training configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineConfig {
    pub dataset: PathBuf,
    pub iterations: usize,
    /// Reference std at iteration 0.
    pub sigma0: f64,
    /// Multiplicative reference-std decay per iteration.
    pub sigma_decay: f64,
    pub sigma_min: f64,
    pub batch_size: usize,
    pub hidden: Vec<usize>,
    pub init_std_scale: f64,
    pub surrogate: SurrogateConfig,
    pub optim: OptimConfig,
    /// Iterations between greedy evaluations; 0 evaluates only at the end.
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl OfflineConfig {
    pub fn defaults(dataset: PathBuf) -> Self {
        Self {
            dataset,
            iterations: 200,
            sigma0: 1.0 / (2.0 * std::f64::consts::PI).sqrt(),
            sigma_decay: 0.995,
            sigma_min: 0.05,
            batch_size: 256,
            hidden: vec![64, 64],
            init_std_scale: 1.0,
            surrogate: SurrogateConfig::exo(false),
            optim: OptimConfig {
                policy_lr: 1e-3,
                value_lr: 1e-3,
                decay_factor: 0.98,
                decay_interval: 1_000_000,
                max_grad_norm: 0.5,
            },
            eval_interval: 0,
            eval_episodes: 5,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.surrogate.validate()?;
        self.optim.validate()?;
        if !(self.sigma0 > 0.0 && self.sigma_min > 0.0 && self.sigma_min <= self.sigma0) {
            return Err(Error::Config("need 0 < offline.sigma_min <= offline.sigma0".into()));
        }
        if !(self.sigma_decay > 0.0 && self.sigma_decay <= 1.0) {
            return Err(Error::Config("offline.sigma_decay must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("offline.batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Reference std used during iteration `k`.
    pub fn sigma_at(&self, k: usize) -> f64 {
        (self.sigma0 * self.sigma_decay.powi(k as i32)).max(self.sigma_min)
    }
}

#[derive(Debug, Clone)]
pub struct OfflineOutcome {
    pub policy: PolicyModel,
    pub events: Vec<MetricsEvent>,
    pub final_returns: Vec<f64>,
    pub checkpoint: Checkpoint,
}

/// Transitions re-referenced to `N(dataset action, sigma^2)`.
pub fn synthetic_references(dataset: &Dataset, sigma: f64) -> Result<Vec<Transition>> {
    dataset
        .records
        .iter()
        .map(|t| match &t.action {
            Action::Continuous(a) => Ok(Transition {
                ref_dist: DistParams::gaussian(a.clone(), vec![sigma; a.len()])?,
                ..t.clone()
            }),
            Action::Discrete(_) => Err(Error::Config("offline training needs a continuous-action dataset".into())),
        })
        .collect()
}

/// Offline training on a loaded dataset. One iteration is one shuffled pass
/// over the records.
pub fn train_offline_on(dataset: &Dataset, cfg: &OfflineConfig, sink: Sink) -> Result<OfflineOutcome> {
    cfg.validate()?;
    if dataset.kind != PolicyKind::Gaussian {
        return Err(Error::Config(format!(
            "offline training needs a continuous-action dataset, got a {:?} dataset for {}",
            dataset.kind,
            dataset.env.id.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut policy = init_policy(dataset.env.id, &cfg.hidden, cfg.init_std_scale, &mut rng)?;
    let mut opt = OptimState::new(
        policy.param_count(),
        cfg.optim.policy_lr,
        cfg.optim.decay_factor,
        cfg.optim.decay_interval,
    )?;
    let eval_seed = derive_seed(cfg.seed, EVAL_STREAM);
    let mut events = Vec::new();
    let mut order: Vec<usize> = (0..dataset.records.len()).collect();
    let batch = cfg.batch_size.min(order.len());
    for k in 0..cfg.iterations {
        let sigma = cfg.sigma_at(k);
        let records = synthetic_references(dataset, sigma)?;
        order.shuffle(&mut rng);
        let (mut kl, mut y, mut outside, mut nb) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(batch) {
            let mb: Vec<&Transition> = chunk.iter().map(|&i| &records[i]).collect();
            let mut rep = policy_objective(&policy, &mb, &cfg.surrogate)?;
            clip_grad_norm(&mut rep.grad, cfg.optim.max_grad_norm);
            let mut flat = policy.flat_params();
            opt.step(&mut flat, &rep.grad)?;
            policy.set_flat_params(&flat)?;
            kl += rep.kl_mean;
            y += rep.y;
            outside += rep.outside_frac;
            nb += 1.0;
        }
        let mut ev = MetricsEvent::new(k as u64 + 1, "offline", 0);
        ev.kl_mean = Some(kl / nb);
        ev.y = Some(y / nb);
        ev.outside_frac = Some(outside / nb);
        ev.lr = Some(opt.effective_lr());
        ev.sigma = Some(sigma);
        let last = k + 1 == cfg.iterations;
        if cfg.eval_episodes > 0 && cfg.eval_interval > 0 && (k + 1) % cfg.eval_interval == 0 && !last {
            let (m, s) = mean_std(&evaluate_policy(&policy, &dataset.env, cfg.eval_episodes, eval_seed)?);
            ev.return_mean = Some(m);
            ev.return_std = Some(s);
        }
        sink(&ev)?;
        events.push(ev);
    }
    let final_returns = if cfg.eval_episodes > 0 {
        evaluate_policy(&policy, &dataset.env, cfg.eval_episodes, eval_seed)?
    } else {
        Vec::new()
    };
    if !final_returns.is_empty() {
        let (m, s) = mean_std(&final_returns);
        let mut ev = MetricsEvent::new(cfg.iterations as u64, "eval", 0);
        ev.return_mean = Some(m);
        ev.return_std = Some(s);
        ev.lr = Some(opt.effective_lr());
        ev.sigma = Some(cfg.sigma_at(cfg.iterations.saturating_sub(1)));
        sink(&ev)?;
        events.push(ev);
    }
    let checkpoint = Checkpoint {
        env: dataset.env.clone(),
        policy: policy.clone(),
        value: None,
        policy_opt: Some(opt),
        value_opt: None,
        rng: Some(rng),
        counters: Counters::default(),
    };
    Ok(OfflineOutcome {
        policy,
        events,
        final_returns,
        checkpoint,
    })
}

/// Loads `cfg.dataset` and trains on it.
pub fn train_offline(cfg: &OfflineConfig, sink: Sink) -> Result<OfflineOutcome> {
    let dataset = Dataset::load(&cfg.dataset)?;
    train_offline_on(&dataset, cfg, sink)
}

/// Rolls out the checkpoint's greedy policy for `episodes` episodes.
///
/// Each record's advantage is its discounted Monte-Carlo return-to-go minus
/// the checkpoint's value estimate (the bare return when the checkpoint has
/// no value net); `value_target` holds the return-to-go. The logged return
/// is the mean undiscounted episode return.
pub fn generate_dataset(ckpt: &Checkpoint, episodes: usize, gamma: f64, seed: u64) -> Result<Dataset> {
    check_variant(&ckpt.policy, ckpt.env.id)?;
    let spec = EnvSpec {
        reward_scale: 1.0,
        ..ckpt.env.clone()
    };
    let mut env = Env::new(spec.clone(), seed)?;
    let mut records = Vec::new();
    let mut returns = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut obs = env.reset();
        let mut episode: Vec<Transition> = Vec::new();
        loop {
            let dist = ckpt.policy.dist_at(&obs)?;
            let action = dist.mode();
            let res = env.step(&action)?;
            episode.push(Transition {
                obs: obs.clone(),
                action,
                reward: res.reward,
                ref_dist: dist,
                advantage: 0.0,
                value_target: 0.0,
                generation_id: 0,
            });
            if res.done() {
                break;
            }
            obs = res.next_obs;
        }
        returns.push(episode.iter().map(|t| t.reward).sum());
        let mut g = 0.0;
        for t in episode.iter_mut().rev() {
            g = t.reward + gamma * g;
            let baseline = match &ckpt.value {
                Some(v) => v.forward(&t.obs)?[0],
                None => 0.0,
            };
            t.value_target = g;
            t.advantage = g - baseline;
        }
        records.extend(episode);
    }
    let logged_return = if returns.is_empty() { 0.0 } else { mean_std(&returns).0 };
    Ok(Dataset {
        env: spec,
        kind: ckpt.policy.kind,
        obs_dim: ckpt.policy.obs_dim(),
        action_dim: ckpt.policy.action_dim(),
        gamma,
        logged_return,
        episodes: episodes as u64,
        records,
    })
}
