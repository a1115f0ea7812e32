use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use csm_core::analysis::{ingest_human_ratings, sweep_row, SweepRow};
use csm_core::domain::{AtomicClaim, DocumentRecord, TopicCluster};
use csm_core::gateway::mock::{planted_corpus, PlantedCorpusSpec};
use csm_core::stages::{ingest_summaries, score_entailments, IngestRow, Stage};
use serde::Deserialize;

use crate::config::{RunConfig, Snapshot};
use crate::error::{CliError, Result};
use crate::pipeline::{Run, StageRun};
use crate::rundir::{
    read_jsonl, write_bytes, write_json, write_jsonl, Manifest, RunDir, CORPUS, HUMAN_RATINGS, INGESTED, LOCK,
    MERGE_OVERRIDE, SNAPSHOT,
};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusLine {
    #[serde(default)]
    doc_id: Option<String>,
    text: String,
}

/// Read a JSON-lines corpus. Documents without an id get their zero-padded
/// line index.
pub fn load_corpus(path: &Path) -> Result<Vec<DocumentRecord>> {
    let f = fs::File::open(path)
        .map_err(|e| CliError::Validation(format!("cannot read corpus file {}: {e}", path.display())))?;
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| CliError::Validation(format!("{} line {}: {e}", path.display(), i + 1)))?;
        if row.text.trim().is_empty() {
            return Err(CliError::Validation(format!("{} line {}: empty text", path.display(), i + 1)));
        }
        lines.push(row);
    }
    if lines.is_empty() {
        return Err(CliError::Validation(format!("corpus {} holds no documents", path.display())));
    }
    let width = (lines.len() - 1).to_string().len().max(4);
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    let docs: Vec<DocumentRecord> = lines
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let id = row.doc_id.unwrap_or_else(|| format!("{i:0width$}"));
            *seen.entry(id.clone()).or_default() += 1;
            DocumentRecord::new(id, row.text)
        })
        .collect();
    let dupes: Vec<&str> = seen.iter().filter(|(_, &n)| n > 1).map(|(id, _)| id.as_str()).collect();
    if !dupes.is_empty() {
        return Err(CliError::Validation(format!("duplicate doc_id values: {}", dupes.join(", "))));
    }
    let mut docs = docs;
    docs.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
    Ok(docs)
}

/// Create `runs/<run_id>/` from a config file.
pub fn init(root: &Path, config_path: &Path, force: bool) -> Result<RunDir> {
    let config = RunConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let prompts = config.resolve_prompts(base)?;
    let corpus = load_corpus(&base.join(&config.corpus_path))?;
    let human = match &config.human_ratings {
        Some(p) => {
            let full = base.join(p);
            Some(fs::read(&full).map_err(|e| CliError::Validation(format!("cannot read {}: {e}", full.display())))?)
        }
        None => None,
    };

    let dir = RunDir::new(root, &config.run_id);
    if dir.path().exists() {
        if !force {
            return Err(CliError::Validation(format!(
                "run {} already exists at {}; pick a new run_id or pass --force",
                config.run_id,
                dir.path().display()
            )));
        }
        if dir.file(LOCK).exists() {
            return Err(CliError::Validation(format!("run {} is locked; not replacing it", config.run_id)));
        }
        fs::remove_dir_all(dir.path()).map_err(|e| CliError::io(dir.path(), e))?;
    }
    fs::create_dir_all(dir.path()).map_err(|e| CliError::io(dir.path(), e))?;
    let _lock = dir.lock()?;
    write_json(&dir.file(SNAPSHOT), &Snapshot { config: config.clone(), prompts })?;
    write_jsonl(&dir.file(CORPUS), &corpus)?;
    if let Some(bytes) = human {
        write_bytes(&dir.file(HUMAN_RATINGS), &bytes)?;
    }
    dir.save_manifest(&Manifest::new(&config.run_id))?;
    Ok(dir)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunTarget {
    Stage(Stage),
    All,
}

impl std::str::FromStr for RunTarget {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "all" {
            return Ok(Self::All);
        }
        s.parse::<Stage>().map(Self::Stage).map_err(|e| e.to_string())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RunOutcome {
    pub messages: Vec<String>,
    /// `all` stopped at the review gate.
    pub halted: bool,
}

pub fn run(root: &Path, run_id: &str, target: RunTarget) -> Result<RunOutcome> {
    let run = Run::open(root, run_id)?;
    let _lock = run.dir.lock()?;
    let mut out = RunOutcome::default();
    let stages: Vec<Stage> = match target {
        RunTarget::Stage(s) => vec![s],
        RunTarget::All => Stage::ALL.to_vec(),
    };
    for stage in stages {
        if target == RunTarget::All && stage == Stage::ReviewApply && !run.dir.file(MERGE_OVERRIDE).is_file() {
            out.messages.push(run.gate_message());
            out.halted = true;
            return Ok(out);
        }
        let status = run.run_stage(stage)?;
        out.messages.push(match status {
            StageRun::UpToDate => format!("{stage}: up to date"),
            StageRun::Ran => format!("{stage}: done"),
        });
    }
    Ok(out)
}

/// Bucket a JSON-lines file of `{"doc_id", "text"}` onto the budget grid and
/// complete the summarize stage with it.
pub fn ingest(root: &Path, run_id: &str, file: &Path, tolerance: f64) -> Result<Vec<String>> {
    let run = Run::open(root, run_id)?;
    let _lock = run.dir.lock()?;
    let rows: Vec<IngestRow> = read_jsonl(file)?;
    let known: BTreeSet<String> = run.corpus()?.into_iter().map(|d| d.doc_id).collect();
    let outcome = ingest_summaries(&rows, &run.config().budgets, tolerance, &known)?;
    write_jsonl(&run.dir.file(INGESTED), &outcome.records)?;
    let mut messages = vec![format!(
        "{} summaries accepted; skipped {} out of tolerance, {} for unknown documents, {} duplicate buckets",
        outcome.records.len(),
        outcome.out_of_tolerance,
        outcome.unknown_doc,
        outcome.duplicate
    )];
    let missing = known.len() * run.config().budgets.len() - outcome.records.len();
    if missing > 0 {
        messages.push(format!("{missing} (document, budget) cells have no summary"));
    }
    run.run_stage(Stage::Summarize)?;
    messages.push("summarize: done".into());
    Ok(messages)
}

/// Copy a human ratings CSV into the run, checking it against the reviewed
/// topics when they exist.
pub fn ingest_ratings(root: &Path, run_id: &str, file: &Path) -> Result<usize> {
    let run = Run::open(root, run_id)?;
    let _lock = run.dir.lock()?;
    let bytes = fs::read(file).map_err(|e| CliError::io(file, e))?;
    let topics_path = run.dir.file("topics.jsonl");
    let count = if topics_path.is_file() {
        let topics: BTreeSet<String> = read_jsonl::<TopicCluster>(&topics_path)?
            .into_iter()
            .map(|t| t.topic_id)
            .collect();
        ingest_human_ratings(bytes.as_slice(), &topics)?.len()
    } else {
        0
    };
    write_bytes(&run.dir.file(HUMAN_RATINGS), &bytes)?;
    Ok(count)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepLine {
    pub backend: String,
    pub row: SweepRow,
}

/// Re-probe every summarizer at each temperature and score the new
/// summaries against the run's claims.
pub fn sweep_temperature(root: &Path, run_id: &str, temperatures: &[f64]) -> Result<Vec<SweepLine>> {
    if temperatures.is_empty() {
        return Err(CliError::Validation("no temperatures given".into()));
    }
    if let Some(t) = temperatures.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return Err(CliError::Validation(format!("temperature {t} must be a finite value >= 0")));
    }
    let run = Run::open(root, run_id)?;
    let _lock = run.dir.lock()?;
    let manifest = run.dir.manifest()?;
    run.require(Stage::Claims, "sweep-temp", &manifest)?;
    let c = run.config();
    if c.roles.summarizers.is_empty() {
        return Err(CliError::Validation("sweep-temp needs at least one configured summarizer".into()));
    }
    let corpus = run.corpus()?;
    let claims: Vec<AtomicClaim> = run.load("claims.jsonl")?;
    let nli = run.profile(&c.roles.entailment)?;

    let mut lines = Vec::new();
    for &t in temperatures {
        let summaries = run.probe(&corpus, Some(t))?;
        let verdicts = score_entailments(&claims, &summaries, &nli, run.gateway())?;
        for backend in &c.roles.summarizers {
            let s: Vec<_> = summaries.iter().filter(|s| &s.backend_id == backend).cloned().collect();
            let v: Vec<_> = verdicts.iter().filter(|v| &v.backend_id == backend).cloned().collect();
            lines.push(SweepLine {
                backend: backend.clone(),
                row: sweep_row(t, &s, &v, &c.budgets)?,
            });
        }
    }
    let mut csv = String::from("backend,temperature,mean_tlr,length_mad,ic,summaries\n");
    for l in &lines {
        csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{}\n",
            l.backend, l.row.temperature, l.row.mean_tlr, l.row.length_mad, l.row.ic, l.row.summaries
        ));
    }
    write_bytes(&run.dir.file("sweep/temperature_sweep.csv"), csv.as_bytes())?;
    Ok(lines)
}

/// Render the report bundle; returns its directory.
pub fn report(root: &Path, run_id: &str) -> Result<(StageRun, PathBuf)> {
    let run = Run::open(root, run_id)?;
    let _lock = run.dir.lock()?;
    let status = run.run_stage(Stage::Report)?;
    Ok((status, run.dir.file("report")))
}

/// One line per stage: name, status, and whether its outputs are current.
pub fn status(root: &Path, run_id: &str) -> Result<Vec<String>> {
    let run = Run::open(root, run_id)?;
    let manifest = run.dir.manifest()?;
    Stage::ALL
        .into_iter()
        .map(|s| {
            let m = manifest.get(s);
            let state = if run.is_up_to_date(s, &manifest)? {
                "up to date"
            } else if m.output_digest.is_empty() {
                "pending"
            } else {
                "stale"
            };
            Ok(format!("{:<13} {state}", s.name()))
        })
        .collect()
}

/// Write a planted mock corpus and a matching all-mock config into `out`.
pub fn plant(out: &Path, spec: &PlantedCorpusSpec, replicates: u32) -> Result<PathBuf> {
    let docs = planted_corpus(spec);
    let rows: Vec<serde_json::Value> = docs
        .iter()
        .map(|d| serde_json::json!({"doc_id": d.doc_id, "text": d.text}))
        .collect();
    write_jsonl(&out.join("corpus.jsonl"), &rows)?;
    let config = serde_json::json!({
        "run_id": "planted",
        "corpus_path": "corpus.jsonl",
        "replicates": replicates,
        "backends": [{"backend_id": "mock", "kind": "mock"}],
        "roles": {
            "summarizers": ["mock"],
            "question_gen": "mock",
            "embedding": "mock",
            "answer": "mock",
            "claim_split": "mock",
            "entailment": "mock",
            "raters": ["mock"]
        },
        "clustering": {"min_cluster_size": (spec.documents / 2).max(2), "link_threshold": 0.35},
        "base_seed": spec.seed,
        "observed_source": "agg:uniform"
    });
    let path = out.join("config.json");
    write_json(&path, &config)?;
    Ok(path)
}
