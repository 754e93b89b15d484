//! On-disk run directory: `manifest.json` plus `records.jsonl`, one trace
//! per line in query order.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{CohConfig, PipelineError, QueryTrace};
use crate::kg::{TemporalKg, Vocabulary};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORDS_FILE: &str = "records.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub dataset: String,
    pub variant: String,
    /// The config exactly as parsed, in `key = value` form.
    pub config_kv: String,
    pub config: CohConfig,
    /// SHA-256 over the store and vocabulary the run read.
    pub input_hash: String,
    pub num_entities: usize,
    pub queries: usize,
    pub tool_version: String,
}

/// Hex SHA-256 of every fact and every entity and relation name.
pub fn content_hash(kg: &TemporalKg, vocab: &Vocabulary) -> String {
    let mut h = Sha256::new();
    for f in kg.facts() {
        let q = f.quad;
        for x in [q.subject, q.relation, q.object, q.time] {
            h.update(x.to_le_bytes());
        }
        h.update([f.split as u8]);
    }
    for name in vocab.entity_names().iter().chain(vocab.relation_names()) {
        h.update((name.len() as u64).to_le_bytes());
        h.update(name.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_run(dir: &Path, manifest: &RunManifest, traces: &[QueryTrace]) -> Result<(), PipelineError> {
    fs::create_dir_all(dir).map_err(io(dir))?;
    let mpath = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest).expect("manifests serialize");
    fs::write(&mpath, json + "\n").map_err(io(&mpath))?;
    let rpath = dir.join(RECORDS_FILE);
    let mut w = BufWriter::new(fs::File::create(&rpath).map_err(io(&rpath))?);
    for t in traces {
        let line = serde_json::to_string(t).expect("traces serialize");
        writeln!(w, "{line}").map_err(io(&rpath))?;
    }
    w.flush().map_err(io(&rpath))
}

pub fn read_run(dir: &Path) -> Result<(RunManifest, Vec<QueryTrace>), PipelineError> {
    let store_err = |path: PathBuf, message: String| PipelineError::Store { path, message };
    let mpath = dir.join(MANIFEST_FILE);
    if !mpath.exists() {
        return Err(PipelineError::NoTraces);
    }
    let text = fs::read_to_string(&mpath).map_err(io(&mpath))?;
    let manifest: RunManifest =
        serde_json::from_str(&text).map_err(|e| store_err(mpath.clone(), e.to_string()))?;
    let rpath = dir.join(RECORDS_FILE);
    let file = fs::File::open(&rpath).map_err(|_| PipelineError::NoTraces)?;
    let mut traces = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io(&rpath))?;
        if line.trim().is_empty() {
            continue;
        }
        let t = serde_json::from_str(&line)
            .map_err(|e| store_err(rpath.clone(), format!("line {}: {e}", i + 1)))?;
        traces.push(t);
    }
    Ok((manifest, traces))
}
