//! Built-in toy environments and a vectorized pool with auto-reset.
//!
//! Dynamics constants:
//!
//! * `cartbalance`: gravity 9.8, cart mass 1.0, pole mass 0.1, half pole
//!   length 0.5, force 10.0, dt 0.02, explicit Euler. Terminates when
//!   `|x| > 2.4` or `|theta| > 12 deg`. Reward +1 per step. Initial state
//!   uniform in `[-0.05, 0.05]^4`.
//! * `pendulum`: g 10.0, m 1.0, l 1.0, dt 0.05, max speed 8, torque bounds
//!   `[-2, 2]`. Cost `theta^2 + 0.1 theta_dot^2 + 0.001 u^2` with theta
//!   normalized to `[-pi, pi)`; reward is the negated cost. Never terminates.
//!   Initial `theta ~ U[-pi, pi]`, `theta_dot ~ U[-1, 1]`.
//! * `gridworld`: 5x5 grid, start at cell 0 (top-left), goal at cell 24
//!   (bottom-right); actions up/right/down/left, walls block movement.
//!   Reward -0.01 per step and +1 on reaching the goal, which terminates.
//!
//! Every reward is multiplied by `reward_scale`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::Action;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    Cartbalance,
    Pendulum,
    Gridworld,
}

impl EnvId {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Cartbalance => "cartbalance",
            Self::Pendulum => "pendulum",
            Self::Gridworld => "gridworld",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cartbalance" => Ok(Self::Cartbalance),
            "pendulum" => Ok(Self::Pendulum),
            "gridworld" => Ok(Self::Gridworld),
            other => Err(Error::Config(format!(
                "unknown env id `{other}` (valid: cartbalance, pendulum, gridworld)"
            ))),
        }
    }

    pub fn default_max_steps(&self) -> usize {
        match self {
            Self::Cartbalance => 200,
            Self::Pendulum => 200,
            Self::Gridworld => 50,
        }
    }

    pub fn obs_dim(&self) -> usize {
        match self {
            Self::Cartbalance => 4,
            Self::Pendulum => 3,
            Self::Gridworld => GRID_SIZE * GRID_SIZE,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        match self {
            Self::Cartbalance => ActionSpace::Discrete(2),
            Self::Pendulum => ActionSpace::Continuous {
                low: vec![-MAX_TORQUE],
                high: vec![MAX_TORQUE],
            },
            Self::Gridworld => ActionSpace::Discrete(4),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { low: Vec<f64>, high: Vec<f64> },
}

impl ActionSpace {
    pub fn is_discrete(&self) -> bool {
        matches!(self, Self::Discrete(_))
    }

    /// Number of actions (discrete) or action dimension (continuous).
    pub fn dim(&self) -> usize {
        match self {
            Self::Discrete(n) => *n,
            Self::Continuous { low, .. } => low.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub id: EnvId,
    pub max_episode_steps: usize,
    pub reward_scale: f64,
}

impl EnvSpec {
    pub fn new(id: EnvId) -> Self {
        Self {
            id,
            max_episode_steps: id.default_max_steps(),
            reward_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_episode_steps == 0 {
            return Err(Error::Config("env.max_episode_steps must be >= 1".into()));
        }
        if !self.reward_scale.is_finite() {
            return Err(Error::Config("env.reward_scale must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_obs: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const HALF_POLE: f64 = 0.5;
const FORCE: f64 = 10.0;
const TAU: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * 2.0 * PI / 360.0;

const PEND_G: f64 = 10.0;
const PEND_M: f64 = 1.0;
const PEND_L: f64 = 1.0;
const PEND_DT: f64 = 0.05;
const MAX_SPEED: f64 = 8.0;
const MAX_TORQUE: f64 = 2.0;

const GRID_SIZE: usize = 5;
const GRID_GOAL: usize = GRID_SIZE * GRID_SIZE - 1;

#[derive(Debug, Clone, PartialEq)]
enum State {
    Cart([f64; 4]),
    Pendulum { theta: f64, theta_dot: f64 },
    Grid(usize),
}

/// A single environment instance with its own RNG stream.
#[derive(Debug, Clone)]
pub struct Env {
    pub spec: EnvSpec,
    state: State,
    rng: ChaCha8Rng,
    steps: usize,
}

/// One explicit-Euler tick of the cart-pole dynamics.
pub fn cartbalance_dynamics(state: [f64; 4], push_right: bool) -> [f64; 4] {
    let [x, x_dot, theta, theta_dot] = state;
    let force = if push_right { FORCE } else { -FORCE };
    let (sin, cos) = theta.sin_cos();
    let total_mass = MASS_CART + MASS_POLE;
    let pole_ml = MASS_POLE * HALF_POLE;
    let temp = (force + pole_ml * theta_dot * theta_dot * sin) / total_mass;
    let theta_acc = (GRAVITY * sin - cos * temp) / (HALF_POLE * (4.0 / 3.0 - MASS_POLE * cos * cos / total_mass));
    let x_acc = temp - pole_ml * theta_acc * cos / total_mass;
    [
        x + TAU * x_dot,
        x_dot + TAU * x_acc,
        theta + TAU * theta_dot,
        theta_dot + TAU * theta_acc,
    ]
}

fn angle_normalize(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Env {
    pub fn new(spec: EnvSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut env = Self {
            state: State::Grid(0),
            rng: ChaCha8Rng::seed_from_u64(seed),
            steps: 0,
            spec,
        };
        env.reset();
        Ok(env)
    }

    pub fn obs_dim(&self) -> usize {
        self.spec.id.obs_dim()
    }

    pub fn action_space(&self) -> ActionSpace {
        self.spec.id.action_space()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Reseeds the stream and starts a new episode.
    pub fn reset_with_seed(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.reset()
    }

    /// Starts a new episode drawing from the env's RNG stream.
    pub fn reset(&mut self) -> Vec<f64> {
        self.steps = 0;
        self.state = match self.spec.id {
            EnvId::Cartbalance => {
                let mut s = [0.0; 4];
                for v in s.iter_mut() {
                    *v = self.rng.random_range(-0.05..0.05);
                }
                State::Cart(s)
            }
            EnvId::Pendulum => State::Pendulum {
                theta: self.rng.random_range(-PI..PI),
                theta_dot: self.rng.random_range(-1.0..1.0),
            },
            EnvId::Gridworld => State::Grid(0),
        };
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        match &self.state {
            State::Cart(s) => s.to_vec(),
            State::Pendulum { theta, theta_dot } => vec![theta.cos(), theta.sin(), *theta_dot],
            State::Grid(cell) => {
                let mut o = vec![0.0; GRID_SIZE * GRID_SIZE];
                o[*cell] = 1.0;
                o
            }
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        let (reward, terminated) = match (&mut self.state, action) {
            (State::Cart(s), Action::Discrete(a)) => {
                if *a >= 2 {
                    return Err(Error::Input(format!("cartbalance action {a} out of range [0, 2)")));
                }
                *s = cartbalance_dynamics(*s, *a == 1);
                let failed = s[0].abs() > X_LIMIT || s[2].abs() > THETA_LIMIT;
                (1.0, failed)
            }
            (State::Pendulum { theta, theta_dot }, Action::Continuous(u)) => {
                if u.len() != 1 {
                    return Err(Error::Input(format!("pendulum expects a 1-dim action, got {}", u.len())));
                }
                let u = if u[0].is_nan() { 0.0 } else { u[0].clamp(-MAX_TORQUE, MAX_TORQUE) };
                let th = angle_normalize(*theta);
                let cost = th * th + 0.1 * *theta_dot * *theta_dot + 0.001 * u * u;
                let acc = 3.0 * PEND_G / (2.0 * PEND_L) * theta.sin() + 3.0 / (PEND_M * PEND_L * PEND_L) * u;
                let new_dot = (*theta_dot + acc * PEND_DT).clamp(-MAX_SPEED, MAX_SPEED);
                *theta += new_dot * PEND_DT;
                *theta_dot = new_dot;
                (-cost, false)
            }
            (State::Grid(cell), Action::Discrete(a)) => {
                let (r, c) = (*cell / GRID_SIZE, *cell % GRID_SIZE);
                let (r, c) = match a {
                    0 => (r.saturating_sub(1), c),
                    1 => (r, (c + 1).min(GRID_SIZE - 1)),
                    2 => ((r + 1).min(GRID_SIZE - 1), c),
                    3 => (r, c.saturating_sub(1)),
                    _ => return Err(Error::Input(format!("gridworld action {a} out of range [0, 4)"))),
                };
                *cell = r * GRID_SIZE + c;
                if *cell == GRID_GOAL {
                    (1.0, true)
                } else {
                    (-0.01, false)
                }
            }
            _ => return Err(Error::Input("action kind does not match the environment".into())),
        };
        self.steps += 1;
        Ok(StepResult {
            next_obs: self.observation(),
            reward: reward * self.spec.reward_scale,
            terminated,
            truncated: !terminated && self.steps >= self.spec.max_episode_steps,
        })
    }
}

/// `n_envs` environments stepped together. Env `i` draws from the stream
/// seeded `seed + i`; finished episodes are reset automatically.
#[derive(Debug, Clone)]
pub struct EnvPool {
    envs: Vec<Env>,
    obs: Vec<Vec<f64>>,
    running_returns: Vec<f64>,
    finished_returns: Vec<f64>,
    total_steps: u64,
}

impl EnvPool {
    pub fn new(spec: &EnvSpec, n_envs: usize, seed: u64) -> Result<Self> {
        if n_envs == 0 {
            return Err(Error::Config("env.n_envs must be >= 1".into()));
        }
        let envs = (0..n_envs)
            .map(|i| Env::new(spec.clone(), seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let obs = envs.iter().map(Env::observation).collect();
        Ok(Self {
            envs,
            obs,
            running_returns: vec![0.0; n_envs],
            finished_returns: Vec::new(),
            total_steps: 0,
        })
    }

    pub fn n_envs(&self) -> usize {
        self.envs.len()
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.envs[0].spec
    }

    /// Current observation of every env (a fresh episode's first observation
    /// right after an auto-reset).
    pub fn observations(&self) -> &[Vec<f64>] {
        &self.obs
    }

    pub fn total_steps(&self) -> u64 {
        self.total_steps
    }

    /// Returns of episodes completed since the last call.
    pub fn drain_finished_returns(&mut self) -> Vec<f64> {
        std::mem::take(&mut self.finished_returns)
    }

    /// Steps every env with its action. `next_obs` in each result is the true
    /// successor state; envs whose episode ended are then reset, and the reset
    /// observation is visible through [`EnvPool::observations`].
    pub fn step(&mut self, actions: &[Action]) -> Result<Vec<StepResult>> {
        if actions.len() != self.envs.len() {
            return Err(Error::Input(format!(
                "got {} actions for {} environments",
                actions.len(),
                self.envs.len()
            )));
        }
        let mut results = Vec::with_capacity(actions.len());
        for (i, (env, action)) in self.envs.iter_mut().zip(actions).enumerate() {
            let res = env.step(action)?;
            self.running_returns[i] += res.reward;
            if res.done() {
                self.finished_returns.push(std::mem::take(&mut self.running_returns[i]));
                self.obs[i] = env.reset();
            } else {
                self.obs[i] = res.next_obs.clone();
            }
            results.push(res);
        }
        self.total_steps += actions.len() as u64;
        Ok(results)
    }
}
