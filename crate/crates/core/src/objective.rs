//! Surrogate objectives over probability ratios.
//!
//! The extended ratio `xi` is the identity on `[1 - eps, 1 + eps)` and bends
//! into exponentially flattening edges outside it:
//!
//! ```text
//! r <  1 - eps:  xi = (1 - eps) - (1 - phi_plus) / alpha,   phi_plus  = exp(alpha (eps + (r - 1)))
//! r >= 1 + eps:  xi = (1 + eps) + (1 - phi_minus) / alpha,  phi_minus = exp(alpha (eps - (r - 1)))
//! ```
//!
//! Its slope is `phi_plus`, `1` and `phi_minus` on the three pieces, so it is
//! C1 at both knots and stays within `1 / alpha` of the clipped ratio.

use serde::{Deserialize, Serialize};

use crate::buffer::Transition;
use crate::error::{Error, Result};
use crate::policy::{ratio_from_eval, HeadGrad, PolicyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveKind {
    Exo,
    Clip,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub beta: f64,
    pub objective: ObjectiveKind,
    /// Standardize advantages within each minibatch before weighting.
    pub normalize_advantages: bool,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self::exo(true)
    }
}

impl SurrogateConfig {
    /// Extended-ratio objective; KL weight 1 for discrete actions, 0.1 for continuous.
    pub fn exo(discrete: bool) -> Self {
        Self {
            epsilon: 0.2,
            alpha: 5.0,
            beta: if discrete { 1.0 } else { 0.1 },
            objective: ObjectiveKind::Exo,
            normalize_advantages: true,
        }
    }

    /// Clipped-ratio baseline (no KL penalty).
    pub fn clip() -> Self {
        Self {
            epsilon: 0.2,
            alpha: 5.0,
            beta: 0.0,
            objective: ObjectiveKind::Clip,
            normalize_advantages: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("surrogate.epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("surrogate.alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("surrogate.beta must be >= 0, got {}", self.beta)));
        }
        Ok(())
    }

    /// KL weight actually applied: the clip baseline never uses one.
    pub fn effective_beta(&self) -> f64 {
        match self.objective {
            ObjectiveKind::Exo => self.beta,
            ObjectiveKind::Clip => 0.0,
        }
    }
}

fn check_ratio(r: f64) -> Result<()> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Input(format!("probability ratio must be positive and finite, got {r}")))
    }
}

fn xi_unchecked(r: f64, eps: f64, alpha: f64) -> f64 {
    if r < 1.0 - eps {
        let phi_plus = (alpha * (eps + (r - 1.0))).exp();
        (1.0 - eps) - (1.0 - phi_plus) / alpha
    } else if r >= 1.0 + eps {
        let phi_minus = (alpha * (eps - (r - 1.0))).exp();
        (1.0 + eps) + (1.0 - phi_minus) / alpha
    } else {
        r
    }
}

fn xi_grad_unchecked(r: f64, eps: f64, alpha: f64) -> f64 {
    if r < 1.0 - eps {
        (alpha * (eps + (r - 1.0))).exp()
    } else if r >= 1.0 + eps {
        (alpha * (eps - (r - 1.0))).exp()
    } else {
        1.0
    }
}

/// Extended ratio `xi(r)`.
pub fn xi(r: f64, cfg: &SurrogateConfig) -> Result<f64> {
    check_ratio(r)?;
    Ok(xi_unchecked(r, cfg.epsilon, cfg.alpha))
}

/// `d xi / d r`.
pub fn xi_grad(r: f64, cfg: &SurrogateConfig) -> Result<f64> {
    check_ratio(r)?;
    Ok(xi_grad_unchecked(r, cfg.epsilon, cfg.alpha))
}

pub fn clip_ratio(r: f64, eps: f64) -> f64 {
    r.clamp(1.0 - eps, 1.0 + eps)
}

/// `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clip_surrogate(r: f64, advantage: f64, cfg: &SurrogateConfig) -> f64 {
    (r * advantage).min(clip_ratio(r, cfg.epsilon) * advantage)
}

/// `d/dr` of [`clip_surrogate`]: `A` where the unclipped term is active, else 0.
pub fn clip_surrogate_grad(r: f64, advantage: f64, cfg: &SurrogateConfig) -> f64 {
    let eps = cfg.epsilon;
    if (advantage > 0.0 && r > 1.0 + eps) || (advantage < 0.0 && r < 1.0 - eps) {
        0.0
    } else {
        advantage
    }
}

/// Mean absolute log-ratio.
pub fn ratio_diagnostic(ratios: &[f64]) -> f64 {
    if ratios.is_empty() {
        return 0.0;
    }
    ratios.iter().map(|r| r.ln().abs()).sum::<f64>() / ratios.len() as f64
}

/// Objective value, ascent gradient and diagnostics for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveReport {
    pub value: f64,
    /// Gradient of `value` laid out like [`PolicyModel::flat_params`].
    pub grad: Vec<f64>,
    pub kl_mean: f64,
    pub y: f64,
    pub outside_frac: f64,
    /// Samples dropped because their ratio was not finite.
    pub excluded: usize,
    /// Samples whose reference probability hit the floor.
    pub floored: usize,
}

/// Mean and population std with a small epsilon in the denominator.
pub fn standardize(values: &[f64]) -> Vec<f64> {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    values.iter().map(|v| (v - mean) / (std + 1e-8)).collect()
}

/// Evaluates the configured surrogate (extended-ratio or clipped) on a
/// minibatch. Advantages are constants; the gradient flows through the
/// ratio numerator and the KL term.
pub fn policy_objective(policy: &PolicyModel, batch: &[&Transition], cfg: &SurrogateConfig) -> Result<ObjectiveReport> {
    if batch.is_empty() {
        return Err(Error::Input("empty policy minibatch".into()));
    }
    let mut ratios = Vec::with_capacity(batch.len());
    let mut floored = 0;
    for t in batch {
        let eval = policy.evaluate(&t.obs)?;
        let r = ratio_from_eval(eval, &t.ref_dist, &t.action)?;
        if r.ref_floored {
            floored += 1;
        }
        if r.value.is_finite() && r.value > 0.0 {
            ratios.push((t, r));
        }
    }
    let excluded = batch.len() - ratios.len();
    let mut report = ObjectiveReport {
        value: 0.0,
        grad: vec![0.0; policy.param_count()],
        kl_mean: 0.0,
        y: 0.0,
        outside_frac: 0.0,
        excluded,
        floored,
    };
    if ratios.is_empty() {
        return Ok(report);
    }
    let raw: Vec<f64> = ratios.iter().map(|(t, _)| t.advantage).collect();
    let advantages = if cfg.normalize_advantages {
        standardize(&raw)
    } else {
        raw
    };
    let n = ratios.len() as f64;
    let beta = cfg.effective_beta();
    let eps = cfg.epsilon;
    for ((t, r), adv) in ratios.iter().zip(&advantages) {
        let rv = r.value;
        let (surrogate, d_dr) = match cfg.objective {
            ObjectiveKind::Exo => (
                xi_unchecked(rv, eps, cfg.alpha) * adv,
                xi_grad_unchecked(rv, eps, cfg.alpha) * adv,
            ),
            ObjectiveKind::Clip => (clip_surrogate(rv, *adv, cfg), clip_surrogate_grad(rv, *adv, cfg)),
        };
        let kl = if beta > 0.0 || cfg.objective == ObjectiveKind::Exo {
            r.eval.dist.kl(&t.ref_dist)?
        } else {
            0.0
        };
        report.value += (surrogate - beta * kl) / n;
        report.kl_mean += kl / n;
        report.y += r.log_value.abs() / n;
        if rv < 1.0 - eps || rv > 1.0 + eps {
            report.outside_frac += 1.0 / n;
        }

        // d r / d theta = r * d log pi / d theta
        let mut head = policy.log_prob_head_grad(&r.eval, &t.action)?;
        let scale = d_dr * rv / n;
        head.head.iter_mut().for_each(|h| *h *= scale);
        head.log_std.iter_mut().for_each(|h| *h *= scale);
        if beta > 0.0 {
            let kl_head: HeadGrad = policy.kl_head_grad(&r.eval, &t.ref_dist)?;
            head.add_scaled(&kl_head, -beta / n);
        }
        policy.backprop_head(&r.eval, &head, &mut report.grad)?;
    }
    Ok(report)
}

/// The extended-ratio objective regardless of `cfg.objective`.
pub fn exo_objective(policy: &PolicyModel, batch: &[&Transition], cfg: &SurrogateConfig) -> Result<ObjectiveReport> {
    let cfg = SurrogateConfig {
        objective: ObjectiveKind::Exo,
        ..*cfg
    };
    policy_objective(policy, batch, &cfg)
}
