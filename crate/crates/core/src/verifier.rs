//! Exact tabular evaluation and numerical certificates for the policy
//! improvement lower bounds.
//!
//! Expectations written as `(s, a) ~ pi` are taken under the normalized
//! discounted visitation measure `d_pi(s) * pi(a|s)`, with
//! `d_pi = (1 - gamma) mu^T (I - gamma P_pi)^{-1}`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{Error, Result};

/// Finite discounted MDP with rewards `r(s, a, s')`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `P(s'|s,a)` at index `(s * n_actions + a) * n_states + s'`.
    pub transitions: Vec<f64>,
    /// `r(s, a, s')`, same layout as `transitions`.
    pub rewards: Vec<f64>,
    pub gamma: f64,
    pub start: Vec<f64>,
}

/// `pi(a|s)` at index `s * n_actions + a`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub n_states: usize,
    pub n_actions: usize,
    pub probs: Vec<f64>,
}

pub const MAX_STATES: usize = 12;
pub const MAX_ACTIONS: usize = 4;

fn is_distribution(p: &[f64]) -> bool {
    p.iter().all(|x| *x >= 0.0 && x.is_finite()) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 || s > MAX_STATES || a > MAX_ACTIONS {
            return Err(Error::Config(format!(
                "tabular MDP needs 1..={MAX_STATES} states and 1..={MAX_ACTIONS} actions, got {s}x{a}"
            )));
        }
        if self.transitions.len() != s * a * s || self.rewards.len() != s * a * s || self.start.len() != s {
            return Err(Error::Config("tabular MDP arrays have the wrong size".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !self.transitions.chunks(s).all(is_distribution) {
            return Err(Error::Config("transition rows must be probability vectors".into()));
        }
        if !is_distribution(&self.start) {
            return Err(Error::Config("start distribution must be a probability vector".into()));
        }
        Ok(())
    }

    fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + s2]
    }

    fn r(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.rewards[(s * self.n_actions + a) * self.n_states + s2]
    }
}

impl TabularPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        let p = Self {
            n_states,
            n_actions,
            probs,
        };
        if p.probs.len() != n_states * n_actions || !p.probs.chunks(n_actions).all(is_distribution) {
            return Err(Error::Config("policy rows must be probability vectors".into()));
        }
        Ok(p)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Total variation distance between the action distributions at `s`.
    pub fn tv(&self, other: &TabularPolicy, s: usize) -> f64 {
        0.5 * self.row(s).iter().zip(other.row(s)).map(|(a, b)| (a - b).abs()).sum::<f64>()
    }

    fn check_against(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::Config("policy shape does not match the MDP".into()));
        }
        Ok(())
    }
}

/// Exact quantities for one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub v: Vec<f64>,
    /// `Q(s, a)` at `s * n_actions + a`.
    pub q: Vec<f64>,
    pub advantage: Vec<f64>,
    pub j: f64,
    /// Normalized discounted state visitation.
    pub visitation: Vec<f64>,
}

/// Solves the Bellman system and the visitation system directly.
pub fn exact_eval(mdp: &TabularMdp, policy: &TabularPolicy) -> Result<Evaluation> {
    mdp.validate()?;
    policy.check_against(mdp)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut system = DMatrix::<f64>::identity(ns, ns);
    let mut r_pi = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        for a in 0..na {
            let pa = policy.prob(s, a);
            for s2 in 0..ns {
                let p = mdp.p(s, a, s2);
                system[(s, s2)] -= mdp.gamma * pa * p;
                r_pi[s] += pa * p * mdp.r(s, a, s2);
            }
        }
    }
    let lu = system.clone().lu();
    let v = lu
        .solve(&r_pi)
        .ok_or_else(|| Error::Numerical("singular Bellman system".into()))?;
    let mu = DVector::from_column_slice(&mdp.start);
    let occupancy = system
        .transpose()
        .lu()
        .solve(&mu)
        .ok_or_else(|| Error::Numerical("singular visitation system".into()))?;
    let visitation: Vec<f64> = occupancy.iter().map(|x| (1.0 - mdp.gamma) * x).collect();

    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            q[s * na + a] = (0..ns)
                .map(|s2| mdp.p(s, a, s2) * (mdp.r(s, a, s2) + mdp.gamma * v[s2]))
                .sum();
        }
    }
    let advantage = (0..ns * na).map(|i| q[i] - v[i / na]).collect();
    let j = mdp.start.iter().zip(v.iter()).map(|(m, x)| m * x).sum();
    Ok(Evaluation {
        v: v.iter().cloned().collect(),
        q,
        advantage,
        j,
        visitation,
    })
}

/// `|J(pi) - J(ref) - E_{s~d_pi, a~pi}[A_ref(s, a)] / (1 - gamma)|`.
pub fn check_lemma_pdl(mdp: &TabularMdp, policy: &TabularPolicy, reference: &TabularPolicy) -> Result<f64> {
    let ev = exact_eval(mdp, policy)?;
    let er = exact_eval(mdp, reference)?;
    let na = mdp.n_actions;
    let mut expected = 0.0;
    for s in 0..mdp.n_states {
        for a in 0..na {
            expected += ev.visitation[s] * policy.prob(s, a) * er.advantage[s * na + a];
        }
    }
    Ok((ev.j - er.j - expected / (1.0 - mdp.gamma)).abs())
}

/// `(||d_pi - d_ref||_1, 2 gamma / (1 - gamma) * E_{s~d_ref}[TV(pi, ref)(s)])`.
pub fn check_visitation_bound(mdp: &TabularMdp, policy: &TabularPolicy, reference: &TabularPolicy) -> Result<(f64, f64)> {
    let ev = exact_eval(mdp, policy)?;
    let er = exact_eval(mdp, reference)?;
    let lhs = ev.visitation.iter().zip(&er.visitation).map(|(a, b)| (a - b).abs()).sum();
    let expected_tv: f64 = (0..mdp.n_states).map(|s| er.visitation[s] * policy.tv(reference, s)).sum();
    Ok((lhs, 2.0 * mdp.gamma / (1.0 - mdp.gamma) * expected_tv))
}

/// Terms of the single-reference improvement bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaBound {
    /// `J(pi) - J(ref)`.
    pub lhs: f64,
    /// `E_{s~d_ref}[E_{a~pi}[A_ref]] / (1 - gamma)`.
    pub surrogate: f64,
    /// `2 gamma C / (1 - gamma)^2 * E_{s~d_ref}[TV]`.
    pub penalty: f64,
    /// `max_s |E_{a~pi}[A_ref(s, a)]|`.
    pub c: f64,
    pub expected_tv: f64,
}

impl LemmaBound {
    pub fn rhs(&self) -> f64 {
        self.surrogate - self.penalty
    }
}

/// Improvement bound of `pi` against a single reference policy. With the
/// reference equal to the current policy this is the on-policy bound.
pub fn lemma_bound(mdp: &TabularMdp, policy: &TabularPolicy, reference: &TabularPolicy) -> Result<LemmaBound> {
    let ev = exact_eval(mdp, policy)?;
    let er = exact_eval(mdp, reference)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let g = mdp.gamma;
    let mut surrogate = 0.0;
    let mut c: f64 = 0.0;
    let mut expected_tv = 0.0;
    for s in 0..ns {
        let adv_under_pi: f64 = (0..na).map(|a| policy.prob(s, a) * er.advantage[s * na + a]).sum();
        surrogate += er.visitation[s] * adv_under_pi;
        c = c.max(adv_under_pi.abs());
        expected_tv += er.visitation[s] * policy.tv(reference, s);
    }
    Ok(LemmaBound {
        lhs: ev.j - er.j,
        surrogate: surrogate / (1.0 - g),
        penalty: 2.0 * g * c / ((1.0 - g) * (1.0 - g)) * expected_tv,
        c,
        expected_tv,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorTerms {
    pub weight: f64,
    pub j: f64,
    pub c: f64,
    pub expected_tv: f64,
    pub surrogate: f64,
    pub penalty: f64,
}

/// Terms of the multi-reference improvement bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    /// `J(pi) - E_nu[J(pi_i)]`.
    pub lhs: f64,
    pub surrogate: f64,
    pub penalty: f64,
    pub rhs: f64,
    pub slack: f64,
    pub priors: Vec<PriorTerms>,
}

/// Multi-reference bound with the default penalty constant.
pub fn check_theorem1(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    priors: &[TabularPolicy],
    nu: &[f64],
) -> Result<BoundReport> {
    check_theorem1_scaled(mdp, policy, priors, nu, 1.0)
}

/// As [`check_theorem1`] with the penalty multiplied by `penalty_scale`
/// (1.0 for the true bound; other values serve as negative controls).
///
/// The surrogate is evaluated in importance-weighted form,
/// `E_{s~d_i, a~pi_i}[pi(a|s) / pi_i(a|s) * A_i(s, a)]`.
pub fn check_theorem1_scaled(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    priors: &[TabularPolicy],
    nu: &[f64],
    penalty_scale: f64,
) -> Result<BoundReport> {
    if priors.is_empty() || priors.len() != nu.len() || !is_distribution(nu) {
        return Err(Error::Input(format!(
            "need a probability vector over {} priors, got {nu:?}",
            priors.len()
        )));
    }
    let ev = exact_eval(mdp, policy)?;
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let g = mdp.gamma;
    let mut report = BoundReport {
        lhs: ev.j,
        surrogate: 0.0,
        penalty: 0.0,
        rhs: 0.0,
        slack: 0.0,
        priors: Vec::with_capacity(priors.len()),
    };
    for (prior, &w) in priors.iter().zip(nu) {
        let ei = exact_eval(mdp, prior)?;
        let mut weighted = 0.0;
        let mut expected_tv = 0.0;
        let mut c: f64 = 0.0;
        for s in 0..ns {
            let mut adv_under_pi = 0.0;
            for a in 0..na {
                let pi_i = prior.prob(s, a);
                let adv = ei.advantage[s * na + a];
                if pi_i > 0.0 {
                    weighted += ei.visitation[s] * pi_i * (policy.prob(s, a) / pi_i) * adv;
                }
                adv_under_pi += policy.prob(s, a) * adv;
            }
            c = c.max(adv_under_pi.abs());
            expected_tv += ei.visitation[s] * policy.tv(prior, s);
        }
        let surrogate = weighted / (1.0 - g);
        let penalty = penalty_scale * 2.0 * g * c / ((1.0 - g) * (1.0 - g)) * expected_tv;
        report.lhs -= w * ei.j;
        report.surrogate += w * surrogate;
        report.penalty += w * penalty;
        report.priors.push(PriorTerms {
            weight: w,
            j: ei.j,
            c,
            expected_tv,
            surrogate,
            penalty,
        });
    }
    report.rhs = report.surrogate - report.penalty;
    report.slack = report.lhs - report.rhs;
    Ok(report)
}

fn dirichlet_ones<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / s).collect()
}

/// Random MDP: Dirichlet(1) transition rows and start distribution, rewards
/// uniform in `[-1, 1]`, gamma drawn from {0.8, 0.9, 0.95}.
pub fn random_mdp<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> TabularMdp {
    let transitions = (0..n_states * n_actions)
        .flat_map(|_| dirichlet_ones(rng, n_states))
        .collect();
    let rewards = (0..n_states * n_actions * n_states)
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let gamma = [0.8, 0.9, 0.95][rng.random_range(0..3)];
    TabularMdp {
        n_states,
        n_actions,
        transitions,
        rewards,
        gamma,
        start: dirichlet_ones(rng, n_states),
    }
}

/// Random policy with Dirichlet(1) rows.
pub fn random_policy<R: Rng + ?Sized>(rng: &mut R, n_states: usize, n_actions: usize) -> TabularPolicy {
    TabularPolicy {
        n_states,
        n_actions,
        probs: (0..n_states).flat_map(|_| dirichlet_ones(rng, n_actions)).collect(),
    }
}

/// Convex combination `(1 - w) a + w b`.
pub fn mix_policies(a: &TabularPolicy, b: &TabularPolicy, w: f64) -> TabularPolicy {
    TabularPolicy {
        n_states: a.n_states,
        n_actions: a.n_actions,
        probs: a.probs.iter().zip(&b.probs).map(|(x, y)| (1.0 - w) * x + w * y).collect(),
    }
}

/// One randomized instance: an MDP, `m` priors, weights and a training policy.
#[derive(Debug, Clone)]
pub struct BoundInstance {
    pub mdp: TabularMdp,
    pub priors: Vec<TabularPolicy>,
    pub nu: Vec<f64>,
    pub policy: TabularPolicy,
}

/// Draws an instance with 2..=12 states and 2..=4 actions. Priors form a
/// drifting chain; the training policy moves a random distance from the
/// newest prior toward a fresh random policy.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, m: usize) -> BoundInstance {
    let ns = rng.random_range(2..=MAX_STATES);
    let na = rng.random_range(2..=MAX_ACTIONS);
    let mdp = random_mdp(rng, ns, na);
    let mut priors = vec![random_policy(rng, ns, na)];
    while priors.len() < m {
        let step = random_policy(rng, ns, na);
        let w = rng.random_range(0.0..0.5);
        let next = mix_policies(priors.last().unwrap(), &step, w);
        priors.push(next);
    }
    let target = random_policy(rng, ns, na);
    let w = rng.random_range(0.0..1.0);
    let policy = mix_policies(priors.last().unwrap(), &target, w);
    let nu = dirichlet_ones(rng, m);
    BoundInstance { mdp, priors, nu, policy }
}

/// Aggregate result of a randomized sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub instances: usize,
    pub min_slack: f64,
    pub theorem_violations: usize,
    pub max_pdl_residual: f64,
    pub visitation_violations: usize,
    pub max_convexity_gap: f64,
    pub reports: Vec<BoundReport>,
}

impl SweepReport {
    pub fn all_hold(&self, tol: f64) -> bool {
        self.theorem_violations == 0 && self.visitation_violations == 0 && self.max_pdl_residual <= tol
    }
}

/// Sweeps `instances` random problems with `m` priors each. A bound counts
/// as violated when its slack falls below `-tol`.
pub fn sweep<R: Rng + ?Sized>(rng: &mut R, instances: usize, m: usize, penalty_scale: f64, tol: f64) -> Result<SweepReport> {
    let mut out = SweepReport {
        instances,
        min_slack: f64::INFINITY,
        theorem_violations: 0,
        max_pdl_residual: 0.0,
        visitation_violations: 0,
        max_convexity_gap: 0.0,
        reports: Vec::with_capacity(instances),
    };
    for _ in 0..instances {
        let inst = random_instance(rng, m);
        let rep = check_theorem1_scaled(&inst.mdp, &inst.policy, &inst.priors, &inst.nu, penalty_scale)?;
        out.min_slack = out.min_slack.min(rep.slack);
        if rep.slack < -tol {
            out.theorem_violations += 1;
        }
        for (i, prior) in inst.priors.iter().enumerate() {
            let residual = check_lemma_pdl(&inst.mdp, &inst.policy, prior)?;
            out.max_pdl_residual = out.max_pdl_residual.max(residual);
            let (lhs, rhs) = check_visitation_bound(&inst.mdp, &inst.policy, prior)?;
            if lhs > rhs + tol {
                out.visitation_violations += 1;
            }
            let lemma = lemma_bound(&inst.mdp, &inst.policy, prior)?;
            let mut onehot = vec![0.0; m];
            onehot[i] = 1.0;
            let single = check_theorem1_scaled(&inst.mdp, &inst.policy, &inst.priors, &onehot, penalty_scale)?;
            let gap = (single.rhs - (lemma.surrogate - penalty_scale * lemma.penalty)).abs();
            out.max_convexity_gap = out.max_convexity_gap.max(gap);
        }
        out.reports.push(rep);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_state(reward: f64, gamma: f64) -> TabularMdp {
        TabularMdp {
            n_states: 1,
            n_actions: 1,
            transitions: vec![1.0],
            rewards: vec![reward],
            gamma,
            start: vec![1.0],
        }
    }

    #[test]
    fn single_state_geometric_series() {
        let mdp = single_state(1.0, 0.9);
        let pi = TabularPolicy::new(1, 1, vec![1.0]).unwrap();
        let ev = exact_eval(&mdp, &pi).unwrap();
        assert!((ev.v[0] - 10.0).abs() < 1e-12);
        assert!((ev.j - 10.0).abs() < 1e-12);
        assert!((ev.visitation[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_give_zero_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut mdp = random_mdp(&mut rng, 4, 3);
        mdp.rewards.iter_mut().for_each(|r| *r = 0.0);
        let pi = random_policy(&mut rng, 4, 3);
        let ev = exact_eval(&mdp, &pi).unwrap();
        assert!(ev.v.iter().all(|v| *v == 0.0));
        assert!(ev.advantage.iter().all(|a| *a == 0.0));
    }

    #[test]
    fn two_state_chain_by_hand() {
        // one action; s0 -> s1 w.p. 0.5 else stay; s1 -> s0 w.p. 0.2 else stay
        // reward 1 for leaving s0 for s1, 0 otherwise; gamma 0.9
        let mdp = TabularMdp {
            n_states: 2,
            n_actions: 1,
            transitions: vec![0.5, 0.5, 0.2, 0.8],
            rewards: vec![0.0, 1.0, 0.0, 0.0],
            gamma: 0.9,
            start: vec![1.0, 0.0],
        };
        let pi = TabularPolicy::new(2, 1, vec![1.0, 1.0]).unwrap();
        let ev = exact_eval(&mdp, &pi).unwrap();
        // V0 = 0.5 + 0.9 (0.5 V0 + 0.5 V1); V1 = 0.9 (0.2 V0 + 0.8 V1)
        // => V1 = 0.18 V0 / 0.28, V0 (0.55 - 0.45 * 0.18 / 0.28) = 0.5
        let v0 = 0.5 / (0.55 - 0.45 * 0.18 / 0.28);
        let v1 = 0.18 * v0 / 0.28;
        assert!((ev.v[0] - v0).abs() < 1e-12);
        assert!((ev.v[1] - v1).abs() < 1e-12);
        assert!((v0 - 1.917_808_219_178_081_6).abs() < 1e-12);
    }

    #[test]
    fn visitation_is_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mdp = random_mdp(&mut rng, 7, 3);
            let pi = random_policy(&mut rng, 7, 3);
            let ev = exact_eval(&mdp, &pi).unwrap();
            assert!((ev.visitation.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            assert!(ev.visitation.iter().all(|d| *d >= -1e-15));
        }
    }

    #[test]
    fn pdl_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(&mut rng, 3, 2);
        let pi = random_policy(&mut rng, 3, 2);
        assert!(check_lemma_pdl(&mdp, &pi, &pi).unwrap() < 1e-12);
        let other = random_policy(&mut rng, 3, 2);
        assert!(check_lemma_pdl(&mdp, &pi, &other).unwrap() <= 1e-9);

        let mdp2 = random_mdp(&mut rng, 2, 2);
        let det_a = TabularPolicy::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let det_b = TabularPolicy::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        assert!(check_lemma_pdl(&mdp2, &det_a, &det_b).unwrap() <= 1e-9);
    }

    #[test]
    fn visitation_bound_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = random_mdp(&mut rng, 5, 3);
        let pi = random_policy(&mut rng, 5, 3);
        assert_eq!(check_visitation_bound(&mdp, &pi, &pi).unwrap(), (0.0, 0.0));
        for _ in 0..200 {
            let ns = rng.random_range(2..=8);
            let mdp = random_mdp(&mut rng, ns, 3);
            let a = random_policy(&mut rng, ns, 3);
            let b = random_policy(&mut rng, ns, 3);
            let (lhs, rhs) = check_visitation_bound(&mdp, &a, &b).unwrap();
            assert!(lhs <= rhs + 1e-9);
        }

        // policies differ only in state 2, by TV = 0.3
        let reference = TabularPolicy::new(5, 3, [0.5, 0.3, 0.2].repeat(5)).unwrap();
        let mut changed = reference.clone();
        changed.probs[6..9].copy_from_slice(&[0.8, 0.0, 0.2]);
        assert!((changed.tv(&reference, 2) - 0.3).abs() < 1e-15);
        let (lhs, rhs) = check_visitation_bound(&mdp, &changed, &reference).unwrap();
        let d_ref = exact_eval(&mdp, &reference).unwrap().visitation;
        let expected_rhs = 2.0 * mdp.gamma / (1.0 - mdp.gamma) * d_ref[2] * 0.3;
        assert!((rhs - expected_rhs).abs() < 1e-12);
        assert!(lhs <= rhs + 1e-9);
    }

    #[test]
    fn on_policy_point_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = random_mdp(&mut rng, 6, 3);
        let pi = random_policy(&mut rng, 6, 3);
        let rep = check_theorem1(&mdp, &pi, std::slice::from_ref(&pi), &[1.0]).unwrap();
        assert!(rep.lhs.abs() < 1e-12);
        assert!(rep.surrogate.abs() < 1e-10);
        assert_eq!(rep.penalty, 0.0);
        assert!(rep.slack.abs() < 1e-10);
    }

    #[test]
    fn single_prior_equals_on_policy_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let mdp = random_mdp(&mut rng, 5, 2);
            let current = random_policy(&mut rng, 5, 2);
            let pi = random_policy(&mut rng, 5, 2);
            let rep = check_theorem1(&mdp, &pi, std::slice::from_ref(&current), &[1.0]).unwrap();
            let lemma = lemma_bound(&mdp, &pi, &current).unwrap();
            assert!((rep.lhs - lemma.lhs).abs() < 1e-12);
            assert!((rep.surrogate - lemma.surrogate).abs() < 1e-10);
            assert!((rep.penalty - lemma.penalty).abs() < 1e-12);
            assert!((rep.priors[0].c - lemma.c).abs() < 1e-15);
            assert!((rep.priors[0].expected_tv - lemma.expected_tv).abs() < 1e-15);
        }
    }

    #[test]
    fn random_sweep_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rep = sweep(&mut rng, 100, 3, 1.0, 1e-9).unwrap();
        assert!(rep.all_hold(1e-9), "{:?}", (rep.min_slack, rep.max_pdl_residual));
        assert!(rep.max_convexity_gap < 1e-9);
    }

    #[test]
    fn dropping_the_penalty_breaks_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rep = sweep(&mut rng, 100, 3, 0.0, 1e-9).unwrap();
        assert!(rep.theorem_violations > 0);
    }

    #[test]
    fn rejects_bad_nu() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mdp = random_mdp(&mut rng, 3, 2);
        let pi = random_policy(&mut rng, 3, 2);
        assert!(check_theorem1(&mdp, &pi, &[pi.clone(), pi.clone()], &[0.5, 0.6]).is_err());
        assert!(check_theorem1(&mdp, &pi, &[pi.clone()], &[0.5, 0.5]).is_err());
    }
}
