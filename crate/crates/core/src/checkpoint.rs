//! Versioned checkpoint files: a magic line followed by a JSON body.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Mlp, OptimState};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::policy::PolicyModel;
use crate::trainer::Counters;

pub const CHECKPOINT_MAGIC: &str = "EXOPPO-CKPT-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub env: EnvSpec,
    pub policy: PolicyModel,
    pub value: Option<Mlp>,
    pub policy_opt: Option<OptimState>,
    pub value_opt: Option<OptimState>,
    pub rng: Option<ChaCha8Rng>,
    pub counters: Counters,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!("{CHECKPOINT_MAGIC}\n").into_bytes();
        serde_json::to_writer(&mut out, self).map_err(|e| Error::Format(format!("checkpoint encoding: {e}")))?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let body = bytes
            .strip_prefix(CHECKPOINT_MAGIC.as_bytes())
            .and_then(|b| b.strip_prefix(b"\n"))
            .ok_or_else(|| Error::Format(format!("not a checkpoint: missing {CHECKPOINT_MAGIC} header")))?;
        let ckpt: Checkpoint =
            serde_json::from_slice(body).map_err(|e| Error::Format(format!("corrupt checkpoint body: {e}")))?;
        ckpt.policy.net.spec.validate()?;
        if !ckpt.policy.net.params.is_finite() {
            return Err(Error::Format("checkpoint holds non-finite policy parameters".into()));
        }
        Ok(ckpt)
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Replaces `path` with `bytes` via write-to-temp then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
