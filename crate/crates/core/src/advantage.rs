//! Generalized advantage estimation, value targets and the value regression
//! loss.

use serde::{Deserialize, Serialize};

use crate::diffcore::Mlp;
use crate::error::{Error, Result};
use crate::policy::{Action, DistParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaeConfig {
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for GaeConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            lambda: 0.95,
        }
    }
}

impl GaeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gae.gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("gae.lambda must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

/// One environment's slice of a generation, in time order.
///
/// `next_values[t]` is `V(s_{t+1})` for the true successor of step `t`: at a
/// truncation it is the value of the final observation of that episode, and
/// on the last step it is the bootstrap value. It is ignored where
/// `terminated[t]` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySegment {
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub next_values: Vec<f64>,
    pub terminated: Vec<bool>,
    pub truncated: Vec<bool>,
    pub dists: Vec<DistParams>,
}

impl TrajectorySegment {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.rewards.len();
        if n == 0 {
            return Err(Error::Input("trajectory segment is empty".into()));
        }
        let lens = [
            self.obs.len(),
            self.actions.len(),
            self.values.len(),
            self.next_values.len(),
            self.terminated.len(),
            self.truncated.len(),
            self.dists.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(Error::Input(format!("segment arrays have unequal lengths: {n} rewards vs {lens:?}")));
        }
        Ok(())
    }

    /// Builds a segment covering one contiguous stretch of a single episode:
    /// `next_values` are the shifted `values` followed by `bootstrap`. Only
    /// the last step may be terminal.
    pub fn from_chain(rewards: Vec<f64>, values: Vec<f64>, bootstrap: f64, terminal: bool) -> Self {
        let n = rewards.len();
        let mut next_values: Vec<f64> = values.iter().skip(1).cloned().collect();
        next_values.push(bootstrap);
        let mut terminated = vec![false; n];
        if terminal && n > 0 {
            terminated[n - 1] = true;
        }
        Self {
            obs: vec![Vec::new(); n],
            actions: vec![Action::Discrete(0); n],
            rewards,
            values,
            next_values,
            terminated,
            truncated: vec![false; n],
            dists: vec![DistParams::Categorical { probs: vec![1.0] }; n],
        }
    }

    fn boundary(&self, t: usize) -> bool {
        self.terminated[t] || self.truncated[t]
    }
}

/// One-step TD residuals `r_t + gamma V(s_{t+1}) (1 - terminated_t) - V(s_t)`.
pub fn td_residuals(seg: &TrajectorySegment, cfg: &GaeConfig) -> Vec<f64> {
    (0..seg.len())
        .map(|t| {
            let next = if seg.terminated[t] { 0.0 } else { seg.next_values[t] };
            seg.rewards[t] + cfg.gamma * next - seg.values[t]
        })
        .collect()
}

/// Advantages by the backward recursion
/// `A_t = delta_t + gamma lambda (1 - done_t) A_{t+1}`, where `done_t` marks an
/// episode boundary (termination or truncation).
pub fn gae(seg: &TrajectorySegment, cfg: &GaeConfig) -> Vec<f64> {
    let deltas = td_residuals(seg, cfg);
    let decay = cfg.gamma * cfg.lambda;
    let mut adv = vec![0.0; seg.len()];
    let mut running = 0.0;
    for t in (0..seg.len()).rev() {
        if seg.boundary(t) {
            running = 0.0;
        }
        running = deltas[t] + decay * running;
        adv[t] = running;
    }
    adv
}

pub fn value_targets(seg: &TrajectorySegment, advantages: &[f64]) -> Vec<f64> {
    advantages.iter().zip(&seg.values).map(|(a, v)| a + v).collect()
}

/// Loss `0.5 * mean (V(obs) - target)^2` and its parameter gradient.
pub fn value_loss_grad(value_net: &Mlp, batch: &[(&[f64], f64)]) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty value minibatch".into()));
    }
    if let Some((_, t)) = batch.iter().find(|(_, t)| !t.is_finite()) {
        return Err(Error::Training {
            step: 0,
            max_abs_grad: f64::NAN,
            message: format!("non-finite value target {t}"),
        });
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0; value_net.param_count()];
    let mut loss = 0.0;
    for (obs, target) in batch {
        let cache = value_net.forward_cached(obs)?;
        let err = cache.output[0] - target;
        loss += 0.5 * err * err / n;
        value_net.backward(&cache, &[err / n], &mut grad)?;
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Activation, MlpSpec, OutputTransform};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct double sum over the episode remainder.
    fn double_sum(seg: &TrajectorySegment, cfg: &GaeConfig) -> Vec<f64> {
        let n = seg.len();
        let delta = |t: usize| {
            let next = if seg.terminated[t] { 0.0 } else { seg.next_values[t] };
            seg.rewards[t] + cfg.gamma * next - seg.values[t]
        };
        (0..n)
            .map(|t| {
                let mut total = 0.0;
                for l in 0..(n - t) {
                    total += (cfg.gamma * cfg.lambda).powi(l as i32) * delta(t + l);
                    if seg.terminated[t + l] || seg.truncated[t + l] {
                        break;
                    }
                }
                total
            })
            .collect()
    }

    fn random_segment(rng: &mut ChaCha8Rng, n: usize) -> TrajectorySegment {
        let rewards = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut seg = TrajectorySegment::from_chain(rewards, values, rng.random_range(-2.0..2.0), false);
        for t in 0..n {
            seg.next_values[t] = rng.random_range(-2.0..2.0);
            let u: f64 = rng.random();
            seg.terminated[t] = u < 0.1;
            seg.truncated[t] = (0.1..0.2).contains(&u);
        }
        seg
    }

    #[test]
    fn residuals_with_zero_values_are_rewards() {
        let seg = TrajectorySegment::from_chain(vec![1.0, -0.5, 2.0], vec![0.0; 3], 0.0, false);
        assert_eq!(td_residuals(&seg, &GaeConfig { gamma: 0.7, lambda: 0.9 }), vec![1.0, -0.5, 2.0]);
    }

    #[test]
    fn residuals_vanish_for_exact_values() {
        // rewards 1, 2, 3 then termination; gamma 0.5
        let g = 0.5;
        let v2 = 3.0;
        let v1 = 2.0 + g * v2;
        let v0 = 1.0 + g * v1;
        let seg = TrajectorySegment::from_chain(vec![1.0, 2.0, 3.0], vec![v0, v1, v2], 0.0, true);
        let d = td_residuals(&seg, &GaeConfig { gamma: g, lambda: 0.9 });
        assert!(d.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn residuals_by_hand() {
        // r = [1, 0, 2], V = [0.5, 1.0, -1.0], bootstrap 4, gamma 0.9, not terminal
        let seg = TrajectorySegment::from_chain(vec![1.0, 0.0, 2.0], vec![0.5, 1.0, -1.0], 4.0, false);
        let d = td_residuals(&seg, &GaeConfig { gamma: 0.9, lambda: 0.5 });
        let expected = [1.0 + 0.9 * 1.0 - 0.5, 0.0 + 0.9 * -1.0 - 1.0, 2.0 + 0.9 * 4.0 + 1.0];
        for (a, b) in d.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((d[0] - 1.4).abs() < 1e-15 && (d[1] + 1.9).abs() < 1e-15 && (d[2] - 6.6).abs() < 1e-14);
    }

    #[test]
    fn lambda_zero_gives_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let seg = random_segment(&mut rng, 12);
        let cfg = GaeConfig { gamma: 0.95, lambda: 0.0 };
        assert_eq!(gae(&seg, &cfg), td_residuals(&seg, &cfg));
    }

    #[test]
    fn lambda_one_zero_values_gives_discounted_returns() {
        let rewards = vec![1.0, 2.0, -1.0, 0.5];
        let seg = TrajectorySegment::from_chain(rewards.clone(), vec![0.0; 4], 0.0, true);
        let cfg = GaeConfig { gamma: 0.9, lambda: 1.0 };
        let adv = gae(&seg, &cfg);
        for t in 0..4 {
            let ret: f64 = (t..4).map(|k| 0.9_f64.powi((k - t) as i32) * rewards[k]).sum();
            assert!((adv[t] - ret).abs() < 1e-12);
        }
        let targets = value_targets(&seg, &adv);
        assert_eq!(targets, adv);
    }

    #[test]
    fn truncation_bootstraps_and_cuts_the_chain() {
        let mut seg = TrajectorySegment::from_chain(vec![1.0, 1.0, 1.0], vec![0.0; 3], 0.0, false);
        seg.truncated[0] = true;
        seg.next_values[0] = 10.0;
        let cfg = GaeConfig { gamma: 0.5, lambda: 1.0 };
        let adv = gae(&seg, &cfg);
        assert_eq!(adv[0], 1.0 + 0.5 * 10.0);
        assert_eq!(adv[1], 1.0 + 0.5 * 1.0);
    }

    #[test]
    fn zero_advantages_give_stored_values() {
        let seg = TrajectorySegment::from_chain(vec![0.0; 3], vec![0.3, -0.2, 1.5], 0.0, false);
        assert_eq!(value_targets(&seg, &[0.0; 3]), vec![0.3, -0.2, 1.5]);
    }

    #[test]
    fn targets_minus_values_are_advantages() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let seg = random_segment(&mut rng, 9);
        let adv = gae(&seg, &GaeConfig::default());
        let targets = value_targets(&seg, &adv);
        for t in 0..9 {
            assert!((targets[t] - seg.values[t] - adv[t]).abs() < 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(GaeConfig { gamma: 1.0, lambda: 0.9 }.validate().is_err());
        assert!(GaeConfig { gamma: 0.9, lambda: 1.1 }.validate().is_err());
        assert!(GaeConfig::default().validate().is_ok());
    }

    fn value_net(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = MlpSpec::new(2, vec![4], 1, Activation::Tanh, OutputTransform::Identity).unwrap();
        let mut net = Mlp::zeros(spec).unwrap();
        net.params.values.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        net
    }

    #[test]
    fn value_loss_zero_at_targets() {
        let net = value_net(1);
        let obs = [0.3, -0.7];
        let v = net.forward(&obs).unwrap()[0];
        let (loss, g) = value_loss_grad(&net, &[(&obs[..], v)]).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn value_loss_gradient_matches_finite_differences() {
        let net = value_net(2);
        let obs = [0.5, 0.1];
        let target = 1.7;
        let (_, g) = value_loss_grad(&net, &[(&obs[..], target)]).unwrap();
        let h = 1e-5;
        for i in 0..net.param_count() {
            let mut a = net.clone();
            a.params.values[i] += h;
            let mut b = net.clone();
            b.params.values[i] -= h;
            let fa = value_loss_grad(&a, &[(&obs[..], target)]).unwrap().0;
            let fb = value_loss_grad(&b, &[(&obs[..], target)]).unwrap().0;
            let fd = (fa - fb) / (2.0 * h);
            assert!((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-3) <= 1e-5);
        }
        let (_, g2) = value_loss_grad(&net, &[(&obs[..], target), (&obs[..], target)]).unwrap();
        for (a, b) in g.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(matches!(
            value_loss_grad(&net, &[(&obs[..], f64::NAN)]),
            Err(Error::Training { .. })
        ));
    }

    proptest! {
        #[test]
        fn recursion_equals_double_sum(seed in 0u64..10_000, n in 1usize..=16, gamma in 0.01f64..0.999, lambda in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let seg = random_segment(&mut rng, n);
            let cfg = GaeConfig { gamma, lambda };
            let a = gae(&seg, &cfg);
            let b = double_sum(&seg, &cfg);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12, "{} vs {}", x, y);
            }
        }

        #[test]
        fn lambda_one_is_return_minus_value(seed in 0u64..10_000, n in 1usize..=16, gamma in 0.01f64..0.999) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let seg = TrajectorySegment::from_chain(rewards.clone(), values.clone(), 0.0, true);
            let adv = gae(&seg, &GaeConfig { gamma, lambda: 1.0 });
            for t in 0..n {
                let ret: f64 = (t..n).map(|k| gamma.powi((k - t) as i32) * rewards[k]).sum();
                prop_assert!((adv[t] - (ret - values[t])).abs() <= 1e-10);
            }
        }
    }
}
