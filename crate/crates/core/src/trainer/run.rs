//! Training run directory: `config.json`, `candidates.iterN.jsonl`,
//! `checkpoint.iterN.udr` and `report.json`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::encoder::BiEncoderParams;
use crate::error::{Error, Result};
use crate::feedback::CandidateStore;

use super::{TrainConfig, TrainObserver, TrainReport};

pub struct RunWriter {
    dir: PathBuf,
}

impl RunWriter {
    /// Creates `dir` and writes the resolved config into it.
    pub fn create(dir: &Path, config: &TrainConfig) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let writer = Self {
            dir: dir.to_path_buf(),
        };
        writer.write_json("config.json", config)?;
        Ok(writer)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
        dir.join(format!("checkpoint.iter{iteration}.udr"))
    }

    pub fn candidates_path(dir: &Path, iteration: usize) -> PathBuf {
        dir.join(format!("candidates.iter{iteration}.jsonl"))
    }

    /// The highest-numbered checkpoint in `dir`.
    pub fn latest_checkpoint(dir: &Path) -> Result<PathBuf> {
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut best: Option<(usize, PathBuf)> = None;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let iter = name
                .strip_prefix("checkpoint.iter")
                .and_then(|r| r.strip_suffix(".udr"))
                .and_then(|n| n.parse::<usize>().ok());
            if let Some(i) = iter {
                if best.as_ref().is_none_or(|(b, _)| i > *b) {
                    best = Some((i, path));
                }
            }
        }
        best.map(|(_, p)| p)
            .ok_or_else(|| Error::MissingArtifact(dir.join("checkpoint.iterN.udr")))
    }

    pub fn write_report(&self, report: &TrainReport) -> Result<()> {
        self.write_json("report.json", report)
    }

    fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let path = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| Error::io(&path, e))
    }
}

impl TrainObserver for RunWriter {
    fn on_candidates(&mut self, store: &CandidateStore) -> Result<()> {
        store.save(&Self::candidates_path(&self.dir, store.iteration))
    }

    fn on_checkpoint(&mut self, iteration: usize, params: &BiEncoderParams) -> Result<()> {
        params.save(&Self::checkpoint_path(&self.dir, iteration))
    }
}
