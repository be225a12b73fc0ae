//! Binary transition datasets.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "EXOPPO-DATA-v1\n"
//! u16 env-name length, env-name bytes
//! u8  variant (0 categorical, 1 gaussian)
//! u32 obs_dim, u32 action_dim
//! u64 max_episode_steps, u64 episodes, u64 record count
//! f64 gamma, f64 logged return
//! records:
//!   f64 obs[obs_dim]
//!   action: u64 index | f64[action_dim]
//!   f64 reward, f64 advantage, f64 value_target
//!   dist: f64 probs[action_dim] | f64 mean[action_dim], f64 std[action_dim]
//!   u64 generation_id
//! ```

use std::fs;
use std::path::Path;

use crate::buffer::Transition;
use crate::checkpoint::write_atomic;
use crate::envs::{EnvId, EnvSpec};
use crate::error::{Error, Result};
use crate::policy::{Action, DistParams, PolicyKind};

pub const DATASET_MAGIC: &str = "EXOPPO-DATA-v1";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub env: EnvSpec,
    pub kind: PolicyKind,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub gamma: f64,
    /// Mean episode return of the generating policy.
    pub logged_return: f64,
    pub episodes: u64,
    pub records: Vec<Transition>,
}

impl Dataset {
    fn record_len(&self) -> usize {
        let action = match self.kind {
            PolicyKind::Categorical => 1,
            PolicyKind::Gaussian => self.action_dim,
        };
        let dist = match self.kind {
            PolicyKind::Categorical => self.action_dim,
            PolicyKind::Gaussian => 2 * self.action_dim,
        };
        8 * (self.obs_dim + action + 3 + dist + 1)
    }

    fn check_record(&self, i: usize, t: &Transition) -> Result<()> {
        let ok = t.obs.len() == self.obs_dim
            && match (&t.action, &t.ref_dist, self.kind) {
                (Action::Discrete(a), DistParams::Categorical { probs }, PolicyKind::Categorical) => {
                    *a < self.action_dim && probs.len() == self.action_dim
                }
                (Action::Continuous(a), DistParams::Gaussian { mean, std }, PolicyKind::Gaussian) => {
                    a.len() == self.action_dim && mean.len() == self.action_dim && std.len() == self.action_dim
                }
                _ => false,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::Format(format!("record {i} does not match the dataset header")))
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let name = self.env.id.name().as_bytes();
        let mut out = Vec::with_capacity(64 + self.records.len() * self.record_len());
        out.extend_from_slice(DATASET_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.push(match self.kind {
            PolicyKind::Categorical => 0,
            PolicyKind::Gaussian => 1,
        });
        out.extend_from_slice(&(self.obs_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.action_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.env.max_episode_steps as u64).to_le_bytes());
        out.extend_from_slice(&self.episodes.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        out.extend_from_slice(&self.gamma.to_le_bytes());
        out.extend_from_slice(&self.logged_return.to_le_bytes());
        let put = |out: &mut Vec<u8>, xs: &[f64]| xs.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        for (i, t) in self.records.iter().enumerate() {
            self.check_record(i, t)?;
            put(&mut out, &t.obs);
            match &t.action {
                Action::Discrete(a) => out.extend_from_slice(&(*a as u64).to_le_bytes()),
                Action::Continuous(a) => put(&mut out, a),
            }
            put(&mut out, &[t.reward, t.advantage, t.value_target]);
            match &t.ref_dist {
                DistParams::Categorical { probs } => put(&mut out, probs),
                DistParams::Gaussian { mean, std } => {
                    put(&mut out, mean);
                    put(&mut out, std);
                }
            }
            out.extend_from_slice(&t.generation_id.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(DATASET_MAGIC.len() + 1)?;
        if &magic[..DATASET_MAGIC.len()] != DATASET_MAGIC.as_bytes() || magic[DATASET_MAGIC.len()] != b'\n' {
            return Err(Error::Format(format!("not a dataset: missing {DATASET_MAGIC} header")));
        }
        let name_len = u16::from_le_bytes(r.array()?) as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format("env name is not UTF-8".into()))?
            .to_string();
        let id = EnvId::parse(&name).map_err(|_| Error::Format(format!("unknown env {name:?} in dataset")))?;
        let kind = match r.take(1)?[0] {
            0 => PolicyKind::Categorical,
            1 => PolicyKind::Gaussian,
            v => return Err(Error::Format(format!("unknown variant tag {v}"))),
        };
        let obs_dim = u32::from_le_bytes(r.array()?) as usize;
        let action_dim = u32::from_le_bytes(r.array()?) as usize;
        let max_steps = r.u64()? as usize;
        let episodes = r.u64()?;
        let count = r.u64()? as usize;
        let gamma = r.f64()?;
        let logged_return = r.f64()?;
        if count == 0 {
            return Err(Error::Format("dataset holds no records".into()));
        }
        if obs_dim != id.obs_dim() || action_dim != id.action_space().dim() {
            return Err(Error::Format(format!(
                "dataset dims {obs_dim}x{action_dim} do not match env {name}"
            )));
        }
        let mut ds = Dataset {
            env: EnvSpec {
                id,
                max_episode_steps: max_steps,
                reward_scale: 1.0,
            },
            kind,
            obs_dim,
            action_dim,
            gamma,
            logged_return,
            episodes,
            records: Vec::new(),
        };
        let expected = ds.record_len().checked_mul(count);
        if expected != Some(bytes.len() - r.pos) {
            return Err(Error::Format(format!(
                "dataset body has {} bytes, header promises {count} records",
                bytes.len() - r.pos
            )));
        }
        ds.records.reserve(count);
        for _ in 0..count {
            let obs = r.reals(obs_dim)?;
            let action = match kind {
                PolicyKind::Categorical => Action::Discrete(r.u64()? as usize),
                PolicyKind::Gaussian => Action::Continuous(r.reals(action_dim)?),
            };
            let [reward, advantage, value_target] = [r.f64()?, r.f64()?, r.f64()?];
            let ref_dist = match kind {
                PolicyKind::Categorical => DistParams::Categorical {
                    probs: r.reals(action_dim)?,
                },
                PolicyKind::Gaussian => DistParams::Gaussian {
                    mean: r.reals(action_dim)?,
                    std: r.reals(action_dim)?,
                },
            };
            let generation_id = r.u64()?;
            let t = Transition {
                obs,
                action,
                reward,
                ref_dist,
                advantage,
                value_target,
                generation_id,
            };
            ds.check_record(ds.records.len(), &t)?;
            ds.records.push(t);
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("dataset file is truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("slice of length N"))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn reals(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}
