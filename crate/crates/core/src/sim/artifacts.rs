use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use super::metrics::{RunMetrics, FORMAT_VERSION};
use super::run::RunArtifact;
use crate::error::SimError;

/// Files written per policy subdirectory (`attack.json` only with an attack).
pub const ARTIFACT_FILES: [&str; 4] = ["metrics.json", "requests.csv", "events.log", "attack.json"];

/// Name of the per-run manifest; it carries the wall-clock timestamp and is
/// excluded from artifact hashes.
const MANIFEST: &str = "manifest.json";

fn encode<T: serde::Serialize>(v: &T) -> Result<String, SimError> {
    serde_json::to_string_pretty(v).map_err(|e| SimError::Encode(e.to_string()))
}

/// Write `<dir>/<policy>/{metrics.json, requests.csv, events.log,
/// attack.json}`, `<dir>/summary.csv`, `<dir>/config.json` and the manifest.
pub fn write_artifacts(art: &RunArtifact, dir: &Path) -> Result<(), SimError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.json"), encode(&art.config)?)?;
    let mut summary = csv::Writer::from_path(dir.join("summary.csv"))
        .map_err(|e| SimError::Encode(e.to_string()))?;
    summary
        .write_record([
            "policy",
            "requests",
            "hit_rate",
            "intra_reuse",
            "inter_reuse",
            "ttft_mean",
            "ttft_p50",
            "ttft_p95",
            "ttft_p99",
            "defense_rate",
            "leak_events",
            "anomalies",
            "dropped",
        ])
        .map_err(|e| SimError::Encode(e.to_string()))?;
    for run in &art.runs {
        let sub = dir.join(run.policy.name());
        fs::create_dir_all(&sub)?;
        fs::write(sub.join("metrics.json"), encode(&run.metrics)?)?;
        let mut w = csv::Writer::from_path(sub.join("requests.csv"))
            .map_err(|e| SimError::Encode(e.to_string()))?;
        for r in &run.records {
            w.serialize(r).map_err(|e| SimError::Encode(e.to_string()))?;
        }
        w.flush()?;
        let mut log = fs::File::create(sub.join("events.log"))?;
        for e in &run.events {
            let line = serde_json::to_string(e).map_err(|e| SimError::Encode(e.to_string()))?;
            writeln!(log, "{line}")?;
        }
        if let Some(a) = &run.attack {
            fs::write(sub.join("attack.json"), encode(a)?)?;
        }
        let m = &run.metrics;
        summary
            .write_record([
                run.policy.name().to_string(),
                m.requests.to_string(),
                format!("{:.6}", m.hit_rate),
                format!("{:.6}", m.intra_reuse),
                format!("{:.6}", m.inter_reuse),
                format!("{:.3}", m.ttft.mean),
                format!("{:.3}", m.ttft.p50),
                format!("{:.3}", m.ttft.p95),
                format!("{:.3}", m.ttft.p99),
                run.attack
                    .as_ref()
                    .map_or(String::new(), |a| format!("{:.4}", a.defense_rate)),
                m.leak_events.to_string(),
                m.anomalies.to_string(),
                m.dropped.to_string(),
            ])
            .map_err(|e| SimError::Encode(e.to_string()))?;
    }
    summary.flush()?;
    drop(summary);
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "format_version": FORMAT_VERSION,
        "created_unix": created,
        "artifact_hash": artifact_hash(dir)?,
    });
    fs::write(dir.join(MANIFEST), encode(&manifest)?)?;
    Ok(())
}

/// SHA-256 over every artifact file (sorted relative path, length, bytes),
/// excluding the manifest.
pub fn artifact_hash(dir: &Path) -> Result<String, SimError> {
    let mut files = Vec::new();
    collect(dir, dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for rel in files {
        let bytes = fs::read(dir.join(&rel))?;
        h.update((rel.len() as u64).to_le_bytes());
        h.update(rel.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

fn collect(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), SimError> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect(root, &p, out)?;
        } else {
            let rel = p
                .strip_prefix(root)
                .expect("under root")
                .to_string_lossy()
                .replace('\\', "/");
            if rel != MANIFEST {
                out.push(rel);
            }
        }
    }
    Ok(())
}

/// Load a `metrics.json`, rejecting other format versions.
pub fn read_metrics(path: &Path) -> Result<RunMetrics, SimError> {
    let text = fs::read_to_string(path)?;
    let v: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| SimError::Encode(format!("{}: {e}", path.display())))?;
    match v.get("format_version").and_then(|f| f.as_u64()) {
        Some(f) if f == FORMAT_VERSION as u64 => {}
        other => {
            return Err(SimError::Encode(format!(
                "{}: unsupported format_version {other:?}",
                path.display()
            )))
        }
    }
    serde_json::from_value(v).map_err(|e| SimError::Encode(format!("{}: {e}", path.display())))
}
