use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use csm_core::stages::{Stage, StageManifest, StageStatus};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const SNAPSHOT: &str = "config.snapshot.json";
pub const CORPUS: &str = "corpus.jsonl";
pub const MANIFEST: &str = "manifest.json";
pub const LOCK: &str = ".lock";
pub const INGESTED: &str = "ingested_summaries.jsonl";
pub const HUMAN_RATINGS: &str = "human_ratings.csv";
pub const REVIEW_REPORT: &str = "review/report.txt";
pub const MERGE_OVERRIDE: &str = "review/merge_override.json";

/// Files and directories each stage writes, relative to the run directory.
pub fn stage_outputs(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Summarize => &["summaries.jsonl"],
        Stage::Qgen => &["questions.jsonl"],
        Stage::Cluster => &["clusters.jsonl", REVIEW_REPORT],
        Stage::ReviewApply => &["topics.jsonl"],
        Stage::Answer => &["answers.jsonl"],
        Stage::Claims => &["claims.jsonl", "answers.final.jsonl"],
        Stage::Entail => &["verdicts.jsonl"],
        Stage::Build => &["csm/documents.jsonl", "csm/replicates.jsonl", "csm/mean.jsonl"],
        Stage::Introspect => &["ratings.jsonl"],
        Stage::Metrics => &["metrics/metrics.jsonl", "metrics/agreement.jsonl", "metrics/alignment.jsonl"],
        Stage::Report => &["report"],
    }
}

/// Run-level inputs a stage reads besides upstream outputs. Missing files
/// digest as absent.
pub fn stage_extra_inputs(stage: Stage) -> &'static [&'static str] {
    match stage {
        Stage::Summarize => &[INGESTED],
        Stage::ReviewApply => &[MERGE_OVERRIDE],
        Stage::Metrics => &[HUMAN_RATINGS],
        _ => &[],
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub stages: Vec<StageManifest>,
}

impl Manifest {
    pub fn new(run_id: &str) -> Self {
        Self {
            run_id: run_id.to_string(),
            stages: Stage::ALL
                .into_iter()
                .map(|stage| StageManifest {
                    run_id: run_id.to_string(),
                    stage,
                    status: StageStatus::Pending,
                    input_digest: String::new(),
                    output_digest: String::new(),
                })
                .collect(),
        }
    }

    pub fn get(&self, stage: Stage) -> &StageManifest {
        self.stages.iter().find(|m| m.stage == stage).expect("every stage has an entry")
    }

    pub fn get_mut(&mut self, stage: Stage) -> &mut StageManifest {
        self.stages.iter_mut().find(|m| m.stage == stage).expect("every stage has an entry")
    }
}

#[derive(Clone, Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    pub fn new(root: &Path, run_id: &str) -> Self {
        Self {
            path: root.join("runs").join(run_id),
        }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, rel: &str) -> PathBuf {
        self.path.join(rel)
    }

    pub fn exists(&self) -> bool {
        self.file(SNAPSHOT).is_file()
    }

    pub fn manifest(&self) -> Result<Manifest> {
        read_json(&self.file(MANIFEST))
    }

    pub fn save_manifest(&self, m: &Manifest) -> Result<()> {
        write_json(&self.file(MANIFEST), m)
    }

    /// Digest over `rels` (files or directories) in name order.
    pub fn digest(&self, rels: &[&str]) -> Result<String> {
        let mut h = Sha256::new();
        for rel in rels {
            let mut files = Vec::new();
            collect_files(&self.file(rel), &mut files)?;
            h.update(format!("{rel}\0{}\0", files.len()));
            for f in files {
                let name = f.strip_prefix(&self.path).unwrap_or(&f);
                let bytes = fs::read(&f).map_err(|e| CliError::io(&f, e))?;
                h.update(name.to_string_lossy().as_bytes());
                h.update(b"\0");
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
        }
        Ok(hex::encode(h.finalize()))
    }

    /// Hold the run's advisory lock until the guard drops.
    pub fn lock(&self) -> Result<LockGuard> {
        let path = self.file(LOCK);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockGuard { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Validation(format!(
                "run {} is locked by another process ({}); remove the file if no csm process is running",
                self.path.display(),
                path.display()
            ))),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

pub struct LockGuard {
    path: PathBuf,
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_file() {
        out.push(path.to_path_buf());
    } else if path.is_dir() {
        let mut entries = fs::read_dir(path)
            .map_err(|e| CliError::io(path, e))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(|e| CliError::io(path, e))?;
        entries.sort();
        for e in entries {
            collect_files(&e, out)?;
        }
    }
    Ok(())
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

/// Write through a temporary sibling and rename into place.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    ensure_parent(path)?;
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::json(path, e))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| CliError::json(path, e))
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r).map_err(|e| CliError::json(path, e))?);
        s.push('\n');
    }
    write_bytes(path, s.as_bytes())
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| {
            CliError::Validation(format!("{} line {}: {e}", path.display(), i + 1))
        })?);
    }
    Ok(out)
}
