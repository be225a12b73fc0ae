//! Replay buffer holding the last `M` policy generations.
//!
//! A generation is every transition collected under one frozen policy. It
//! enters and leaves the buffer as a unit: pushing generation `M + 1` evicts
//! the oldest one whole.

use std::collections::VecDeque;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Action, DistParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    /// Distribution of the collecting policy at `obs`, frozen at collection time.
    pub ref_dist: DistParams,
    pub advantage: f64,
    pub value_target: f64,
    pub generation_id: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub id: u64,
    pub transitions: Vec<Transition>,
}

/// How minibatches weight the stored generations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GenerationWeights {
    /// Pool every stored transition; each epoch is an exact shuffled partition.
    #[default]
    Uniform,
    /// Per-generation weights, oldest first, newest last. When fewer than
    /// `weights.len()` generations are stored, the trailing entries are used.
    Weighted(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct GenerationBuffer {
    capacity: usize,
    generations: VecDeque<Generation>,
    weights: GenerationWeights,
}

impl GenerationBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("buffer capacity M must be >= 1".into()));
        }
        Ok(Self {
            capacity,
            generations: VecDeque::with_capacity(capacity + 1),
            weights: GenerationWeights::Uniform,
        })
    }

    pub fn with_weights(capacity: usize, weights: GenerationWeights) -> Result<Self> {
        let mut buf = Self::new(capacity)?;
        buf.set_weights(weights)?;
        Ok(buf)
    }

    pub fn set_weights(&mut self, weights: GenerationWeights) -> Result<()> {
        if let GenerationWeights::Weighted(w) = &weights {
            if w.len() != self.capacity || w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!(
                    "generation weights must be {} non-negative numbers, got {w:?}",
                    self.capacity
                )));
            }
        }
        self.weights = weights;
        Ok(())
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn generation_count(&self) -> usize {
        self.generations.len()
    }

    pub fn len(&self) -> usize {
        self.generations.iter().map(|g| g.transitions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.generations.is_empty()
    }

    /// Generations oldest first.
    pub fn generations(&self) -> impl Iterator<Item = &Generation> {
        self.generations.iter()
    }

    pub fn newest(&self) -> Option<&Generation> {
        self.generations.back()
    }

    pub fn generation_ids(&self) -> Vec<u64> {
        self.generations.iter().map(|g| g.id).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.generations.iter().flat_map(|g| g.transitions.iter())
    }

    /// Sampling distribution over the stored generations, oldest first.
    pub fn nu(&self) -> Vec<f64> {
        let n = self.generations.len();
        match &self.weights {
            GenerationWeights::Uniform => vec![1.0 / n as f64; n],
            GenerationWeights::Weighted(w) => {
                let tail = &w[w.len() - n..];
                let s: f64 = tail.iter().sum();
                tail.iter().map(|x| if s > 0.0 { x / s } else { 0.0 }).collect()
            }
        }
    }

    /// Appends a generation, evicting the oldest when more than `M` are held.
    /// Returns the id of the evicted generation, if any.
    pub fn push_generation(&mut self, transitions: Vec<Transition>, generation_id: u64) -> Result<Option<u64>> {
        if transitions.is_empty() {
            return Err(Error::Input("cannot push an empty generation".into()));
        }
        if let Some(t) = transitions.iter().find(|t| t.generation_id != generation_id) {
            return Err(Error::Input(format!(
                "generation {generation_id} contains a transition tagged {}",
                t.generation_id
            )));
        }
        if let Some(g) = self.generations.back() {
            if g.transitions.len() != transitions.len() {
                return Err(Error::Input(format!(
                    "generations must have equal size: stored {} vs pushed {}",
                    g.transitions.len(),
                    transitions.len()
                )));
            }
            if self.generations.iter().any(|g| g.id == generation_id) {
                return Err(Error::Input(format!("generation {generation_id} is already stored")));
            }
        }
        self.generations.push_back(Generation {
            id: generation_id,
            transitions,
        });
        if self.generations.len() > self.capacity {
            Ok(self.generations.pop_front().map(|g| g.id))
        } else {
            Ok(None)
        }
    }

    /// Minibatches for `epochs` passes. Under uniform weights every epoch is a
    /// shuffled partition of all stored transitions (the last batch may be
    /// short), so each transition appears exactly `epochs` times. Under
    /// explicit weights each epoch draws `len()` transitions with replacement:
    /// generation by weight, then uniformly within it.
    pub fn sample_minibatches<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        epochs: usize,
        rng: &mut R,
    ) -> Result<Vec<Vec<&Transition>>> {
        if self.is_empty() {
            return Err(Error::Input("cannot sample from an empty buffer".into()));
        }
        let total = self.len();
        if batch_size == 0 || batch_size > total {
            return Err(Error::Input(format!(
                "batch size {batch_size} is invalid for a buffer of {total} transitions"
            )));
        }
        let pooled: Vec<&Transition> = self.iter().collect();
        let mut batches = Vec::with_capacity(epochs * total.div_ceil(batch_size));
        match &self.weights {
            GenerationWeights::Uniform => {
                let mut order: Vec<usize> = (0..total).collect();
                for _ in 0..epochs {
                    order.shuffle(rng);
                    for chunk in order.chunks(batch_size) {
                        batches.push(chunk.iter().map(|&i| pooled[i]).collect());
                    }
                }
            }
            GenerationWeights::Weighted(_) => {
                let nu = self.nu();
                let pick = WeightedIndex::new(&nu)
                    .map_err(|e| Error::Config(format!("invalid generation weights {nu:?}: {e}")))?;
                for _ in 0..epochs {
                    let draws: Vec<&Transition> = (0..total)
                        .map(|_| {
                            let g = &self.generations[pick.sample(rng)];
                            &g.transitions[rng.random_range(0..g.transitions.len())]
                        })
                        .collect();
                    for chunk in draws.chunks(batch_size) {
                        batches.push(chunk.to_vec());
                    }
                }
            }
        }
        Ok(batches)
    }
}

/// Parallel-environment count that keeps per-sample reuse equal to an
/// on-policy run with `n_on` environments when `m` generations are stored.
pub fn effective_env_count(n_on: usize, m: usize) -> Result<usize> {
    if m == 0 || n_on == 0 {
        return Err(Error::Config(format!("n_on ({n_on}) and M ({m}) must be positive")));
    }
    if n_on % m != 0 {
        let nearest = (1..=n_on)
            .filter(|d| n_on % d == 0)
            .min_by_key(|d| (d.abs_diff(m), *d))
            .unwrap_or(1);
        return Err(Error::Config(format!(
            "M = {m} does not divide {n_on} environments; nearest valid M is {nearest}"
        )));
    }
    Ok(n_on / m)
}
