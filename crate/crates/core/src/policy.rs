//! Stochastic policies: categorical (softmax head) and diagonal Gaussian
//! (state-independent log-std), with the probability ratio against frozen
//! reference distributions and closed-form KL divergence.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, ForwardCache, Mlp, MlpSpec, OutputTransform};
use crate::error::{Error, Result};

/// Lower bound applied to every categorical probability.
pub const PROB_FLOOR: f64 = 1e-12;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// An action: a discrete index or a real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

/// Frozen snapshot of an action distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DistParams {
    Categorical { probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, std: Vec<f64> },
}

impl DistParams {
    /// Builds a categorical distribution, flooring every entry at [`PROB_FLOOR`].
    pub fn categorical(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Input(format!("invalid categorical probabilities {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Input(format!("categorical probabilities sum to {sum}")));
        }
        Ok(Self::Categorical {
            probs: probs.into_iter().map(|p| p.max(PROB_FLOOR)).collect(),
        })
    }

    pub fn gaussian(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.is_empty() || mean.len() != std.len() {
            return Err(Error::Input("gaussian mean/std length mismatch".into()));
        }
        if std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) || mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Input(format!("invalid gaussian parameters mean {mean:?} std {std:?}")));
        }
        Ok(Self::Gaussian { mean, std })
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self, Self::Categorical { .. })
    }

    /// Number of categories, or action dimension.
    pub fn dim(&self) -> usize {
        match self {
            Self::Categorical { probs } => probs.len(),
            Self::Gaussian { mean, .. } => mean.len(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Action {
        match self {
            Self::Categorical { probs } => {
                let u: f64 = rng.random::<f64>() * probs.iter().sum::<f64>();
                let mut acc = 0.0;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return Action::Discrete(i);
                    }
                }
                Action::Discrete(probs.len() - 1)
            }
            Self::Gaussian { mean, std } => Action::Continuous(
                mean.iter()
                    .zip(std)
                    .map(|(m, s)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + s * z
                    })
                    .collect(),
            ),
        }
    }

    /// Greedy action: arg-max category or the Gaussian mean.
    pub fn mode(&self) -> Action {
        match self {
            Self::Categorical { probs } => {
                let mut best = 0;
                for (i, p) in probs.iter().enumerate() {
                    if *p > probs[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            Self::Gaussian { mean, .. } => Action::Continuous(mean.clone()),
        }
    }

    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (Self::Categorical { probs }, Action::Discrete(a)) => probs
                .get(*a)
                .map(|p| p.ln())
                .ok_or_else(|| Error::Input(format!("action {a} out of range for {} categories", probs.len()))),
            (Self::Gaussian { mean, std }, Action::Continuous(x)) => {
                if x.len() != mean.len() {
                    return Err(Error::Input(format!(
                        "action has {} dims, distribution has {}",
                        x.len(),
                        mean.len()
                    )));
                }
                Ok(mean
                    .iter()
                    .zip(std)
                    .zip(x)
                    .map(|((m, s), a)| {
                        let z = (a - m) / s;
                        -0.5 * z * z - s.ln() - 0.5 * LN_2PI
                    })
                    .sum())
            }
            _ => Err(Error::Input("action kind does not match distribution".into())),
        }
    }

    pub fn entropy(&self) -> f64 {
        match self {
            Self::Categorical { probs } => -probs.iter().map(|p| p * p.ln()).sum::<f64>(),
            Self::Gaussian { std, .. } => std.iter().map(|s| s.ln() + 0.5 * (LN_2PI + 1.0)).sum(),
        }
    }

    /// `KL(self || other)`.
    pub fn kl(&self, other: &DistParams) -> Result<f64> {
        match (self, other) {
            (Self::Categorical { probs: p }, Self::Categorical { probs: q }) if p.len() == q.len() => {
                Ok(p.iter().zip(q).map(|(pi, qi)| pi * (pi / qi).ln()).sum::<f64>().max(0.0))
            }
            (Self::Gaussian { mean: m1, std: s1 }, Self::Gaussian { mean: m2, std: s2 }) if m1.len() == m2.len() => {
                let mut kl = 0.0;
                for i in 0..m1.len() {
                    let d = m1[i] - m2[i];
                    kl += (s2[i] / s1[i]).ln() + (s1[i] * s1[i] + d * d) / (2.0 * s2[i] * s2[i]) - 0.5;
                }
                Ok(kl.max(0.0))
            }
            _ => Err(Error::Input("KL between mismatched distribution variants".into())),
        }
    }
}

/// Free-function form of [`DistParams::kl`]: `KL(current || reference)`.
pub fn kl(current: &DistParams, reference: &DistParams) -> Result<f64> {
    current.kl(reference)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Categorical,
    Gaussian,
}

/// A parameterized policy. The trainable parameter vector is the network
/// parameters followed by the log-std vector (empty for categorical).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyModel {
    pub kind: PolicyKind,
    pub net: Mlp,
    pub log_std: Vec<f64>,
}

/// Forward-pass result kept for gradient computation.
#[derive(Debug, Clone)]
pub struct PolicyEval {
    cache: ForwardCache,
    pub dist: DistParams,
}

/// Gradient with respect to the policy head: logits (categorical) or mean
/// (gaussian), plus log-std.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub head: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl HeadGrad {
    fn zeros(head: usize, log_std: usize) -> Self {
        Self {
            head: vec![0.0; head],
            log_std: vec![0.0; log_std],
        }
    }

    pub fn add_scaled(&mut self, other: &HeadGrad, scale: f64) {
        self.head.iter_mut().zip(&other.head).for_each(|(a, b)| *a += scale * b);
        self.log_std.iter_mut().zip(&other.log_std).for_each(|(a, b)| *a += scale * b);
    }
}

impl PolicyModel {
    pub fn from_parts(kind: PolicyKind, net: Mlp, log_std: Vec<f64>) -> Result<Self> {
        match (kind, net.spec.output_transform) {
            (PolicyKind::Categorical, OutputTransform::Softmax) if log_std.is_empty() => {}
            (PolicyKind::Gaussian, OutputTransform::Identity) if log_std.len() == net.spec.output_dim => {}
            _ => {
                return Err(Error::Config(format!(
                    "{kind:?} policy is inconsistent with a {:?} output head and {} log-std entries",
                    net.spec.output_transform,
                    log_std.len()
                )))
            }
        }
        Ok(Self { kind, net, log_std })
    }

    /// Softmax policy with orthogonal init (gain sqrt(2) hidden, 0.01 output).
    pub fn categorical<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let spec = MlpSpec::new(obs_dim, hidden.to_vec(), n_actions, Activation::Tanh, OutputTransform::Softmax)?;
        let net = Mlp::orthogonal(spec, std::f64::consts::SQRT_2, 0.01, rng)?;
        Self::from_parts(PolicyKind::Categorical, net, Vec::new())
    }

    /// Gaussian policy with a state-independent std initialized to `init_std`.
    pub fn gaussian<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        init_std: &[f64],
        rng: &mut R,
    ) -> Result<Self> {
        if init_std.len() != action_dim || init_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config(format!("invalid initial std {init_std:?}")));
        }
        let spec = MlpSpec::new(obs_dim, hidden.to_vec(), action_dim, Activation::Tanh, OutputTransform::Identity)?;
        let net = Mlp::orthogonal(spec, std::f64::consts::SQRT_2, 0.01, rng)?;
        Self::from_parts(PolicyKind::Gaussian, net, init_std.iter().map(|s| s.ln()).collect())
    }

    pub fn obs_dim(&self) -> usize {
        self.net.spec.input_dim
    }

    pub fn action_dim(&self) -> usize {
        self.net.spec.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.net.param_count() + self.log_std.len()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.net.params.values.clone();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Config(format!(
                "flat parameter vector has length {}, policy has {}",
                flat.len(),
                self.param_count()
            )));
        }
        let n = self.net.param_count();
        self.net.params.values.copy_from_slice(&flat[..n]);
        self.log_std.copy_from_slice(&flat[n..]);
        Ok(())
    }

    pub fn evaluate(&self, obs: &[f64]) -> Result<PolicyEval> {
        let cache = self.net.forward_cached(obs)?;
        let dist = match self.kind {
            PolicyKind::Categorical => DistParams::Categorical {
                probs: cache.output.iter().map(|p| p.max(PROB_FLOOR)).collect(),
            },
            PolicyKind::Gaussian => DistParams::Gaussian {
                mean: cache.output.clone(),
                std: self.log_std.iter().map(|l| l.exp()).collect(),
            },
        };
        Ok(PolicyEval { cache, dist })
    }

    pub fn dist_at(&self, obs: &[f64]) -> Result<DistParams> {
        Ok(self.evaluate(obs)?.dist)
    }

    /// Gradient of `log pi(action|s)` with respect to the head.
    pub fn log_prob_head_grad(&self, eval: &PolicyEval, action: &Action) -> Result<HeadGrad> {
        match (&eval.dist, action) {
            (DistParams::Categorical { probs }, Action::Discrete(a)) => {
                if *a >= probs.len() {
                    return Err(Error::Input(format!("action {a} out of range for {} categories", probs.len())));
                }
                let mut head: Vec<f64> = eval.cache.output.iter().map(|p| -p).collect();
                head[*a] += 1.0;
                Ok(HeadGrad { head, log_std: Vec::new() })
            }
            (DistParams::Gaussian { mean, std }, Action::Continuous(x)) => {
                if x.len() != mean.len() {
                    return Err(Error::Input("action dimension mismatch".into()));
                }
                let mut g = HeadGrad::zeros(mean.len(), mean.len());
                for i in 0..mean.len() {
                    let z = (x[i] - mean[i]) / std[i];
                    g.head[i] = z / std[i];
                    g.log_std[i] = z * z - 1.0;
                }
                Ok(g)
            }
            _ => Err(Error::Input("action kind does not match policy".into())),
        }
    }

    /// Gradient of `KL(pi(.|s) || reference)` with respect to the head.
    pub fn kl_head_grad(&self, eval: &PolicyEval, reference: &DistParams) -> Result<HeadGrad> {
        match (&eval.dist, reference) {
            (DistParams::Categorical { .. }, DistParams::Categorical { probs: q }) if q.len() == self.action_dim() => {
                let p = &eval.cache.output;
                let logs: Vec<f64> = p.iter().zip(q).map(|(pi, qi)| (pi.max(PROB_FLOOR) / qi).ln()).collect();
                let kl: f64 = p.iter().zip(&logs).map(|(pi, l)| pi * l).sum();
                Ok(HeadGrad {
                    head: p.iter().zip(&logs).map(|(pi, l)| pi * (l - kl)).collect(),
                    log_std: Vec::new(),
                })
            }
            (DistParams::Gaussian { mean, std }, DistParams::Gaussian { mean: m2, std: s2 }) if m2.len() == mean.len() => {
                let mut g = HeadGrad::zeros(mean.len(), mean.len());
                for i in 0..mean.len() {
                    let v2 = s2[i] * s2[i];
                    g.head[i] = (mean[i] - m2[i]) / v2;
                    g.log_std[i] = std[i] * std[i] / v2 - 1.0;
                }
                Ok(g)
            }
            _ => Err(Error::Input("KL reference does not match policy variant".into())),
        }
    }

    /// Accumulates the parameter gradient implied by a head gradient into `grad`
    /// (laid out like [`PolicyModel::flat_params`]).
    pub fn backprop_head(&self, eval: &PolicyEval, head: &HeadGrad, grad: &mut [f64]) -> Result<()> {
        if grad.len() != self.param_count() {
            return Err(Error::Config(format!(
                "gradient buffer has length {}, policy has {}",
                grad.len(),
                self.param_count()
            )));
        }
        let n = self.net.param_count();
        let (net_grad, std_grad) = grad.split_at_mut(n);
        self.net.backward_logits(&eval.cache, &head.head, net_grad)?;
        for (g, h) in std_grad.iter_mut().zip(&head.log_std) {
            *g += h;
        }
        Ok(())
    }

    /// Full parameter gradient of `log pi(action|obs)`.
    pub fn log_prob_grad(&self, obs: &[f64], action: &Action) -> Result<Vec<f64>> {
        let eval = self.evaluate(obs)?;
        let head = self.log_prob_head_grad(&eval, action)?;
        let mut g = vec![0.0; self.param_count()];
        self.backprop_head(&eval, &head, &mut g)?;
        Ok(g)
    }

    /// Probability ratio `pi(a|s) / ref(a|s)`; see [`Ratio`].
    pub fn ratio(&self, reference: &DistParams, obs: &[f64], action: &Action) -> Result<Ratio> {
        let eval = self.evaluate(obs)?;
        ratio_from_eval(eval, reference, action)
    }
}

/// A probability ratio with the forward state needed for its gradient.
#[derive(Debug, Clone)]
pub struct Ratio {
    pub value: f64,
    pub log_value: f64,
    /// The reference probability was below [`PROB_FLOOR`] and got clamped.
    pub ref_floored: bool,
    pub eval: PolicyEval,
}

impl Ratio {
    /// `d r / d params = r * d log pi / d params`; the reference is constant.
    pub fn grad(&self, policy: &PolicyModel, action: &Action) -> Result<Vec<f64>> {
        let mut head = policy.log_prob_head_grad(&self.eval, action)?;
        head.head.iter_mut().for_each(|h| *h *= self.value);
        head.log_std.iter_mut().for_each(|h| *h *= self.value);
        let mut g = vec![0.0; policy.param_count()];
        policy.backprop_head(&self.eval, &head, &mut g)?;
        Ok(g)
    }
}

pub(crate) fn ratio_from_eval(eval: PolicyEval, reference: &DistParams, action: &Action) -> Result<Ratio> {
    if eval.dist.is_categorical() != reference.is_categorical() || eval.dist.dim() != reference.dim() {
        return Err(Error::Input("reference distribution does not match policy".into()));
    }
    let mut ref_floored = false;
    let ref_logp = match (reference, action) {
        (DistParams::Categorical { probs }, Action::Discrete(a)) => {
            let p = *probs
                .get(*a)
                .ok_or_else(|| Error::Input(format!("action {a} out of range for {} categories", probs.len())))?;
            if p < PROB_FLOOR {
                ref_floored = true;
            }
            p.max(PROB_FLOOR).ln()
        }
        _ => reference.log_prob(action)?,
    };
    let log_value = eval.dist.log_prob(action)? - ref_logp;
    Ok(Ratio {
        value: log_value.exp(),
        log_value,
        ref_floored,
        eval,
    })
}
