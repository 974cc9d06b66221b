use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Motion,
    Coarse,
    Fine,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Motion => "motion",
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
        })
    }
}

/// JSON sidecar written next to every checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub stage: Stage,
    pub iteration: usize,
    /// File name of the checkpoint this stage started from.
    pub parent: Option<String>,
    pub seed: u64,
    pub last_loss: Option<f64>,
    pub arrays: usize,
    /// Weight hash of the perceptual extractor used by the fine stage.
    pub perceptual_hash: Option<String>,
}

/// Layout of a training run:
/// `run.json`, `checkpoints/{stage}-iter{n}.tfp` (+ `.json` sidecar) and
/// `curves/{stage}.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        for sub in ["checkpoints", "curves"] {
            let p = root.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn checkpoint_path(&self, stage: Stage, iteration: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("{stage}-iter{iteration:06}.tfp"))
    }

    pub fn curve_path(&self, stage: Stage) -> PathBuf {
        self.root.join("curves").join(format!("{stage}.csv"))
    }

    pub fn save_checkpoint(&self, store: &ParamStore<f32>, meta: &CheckpointMeta) -> Result<PathBuf> {
        let path = self.checkpoint_path(meta.stage, meta.iteration);
        store.save(&path)?;
        let side = path.with_extension("json");
        let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
        Ok(path)
    }

    pub fn read_meta(path: &Path) -> Result<CheckpointMeta> {
        let side = path.with_extension("json");
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", side.display())))
    }

    /// Highest-iteration checkpoint of a stage.
    pub fn latest(&self, stage: Stage) -> Result<Option<(PathBuf, CheckpointMeta)>> {
        let dir = self.root.join("checkpoints");
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(_) => return Ok(None),
        };
        let prefix = format!("{stage}-iter");
        let mut best: Option<(usize, PathBuf)> = None;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let iter = name
                .strip_prefix(&prefix)
                .and_then(|rest| rest.strip_suffix(".tfp"))
                .and_then(|n| n.parse::<usize>().ok());
            if let Some(i) = iter {
                if best.as_ref().is_none_or(|(b, _)| i > *b) {
                    best = Some((i, path));
                }
            }
        }
        best.map(|(_, p)| Ok((p.clone(), Self::read_meta(&p)?))).transpose()
    }

    /// Writes a loss curve: a header line, then one row per iteration.
    pub fn write_curve(&self, stage: Stage, header: &[&str], rows: &[Vec<f64>]) -> Result<PathBuf> {
        let path = self.curve_path(stage);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        w.write_record(header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        for row in rows {
            let mut rec = vec![format!("{}", row[0] as usize)];
            rec.extend(row[1..].iter().map(|v| format!("{v:.9e}")));
            w.write_record(&rec).map_err(|e| Error::Checkpoint(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
