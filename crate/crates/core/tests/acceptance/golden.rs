use std::collections::BTreeMap;
use std::path::PathBuf;

use safekv_core::sim::{artifact_hash, run_scenario, write_artifacts, ScenarioConfig};

use crate::{check, Outcome};

fn repo() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn golden_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/goldens.json")
}

fn hash_of(cfg: &ScenarioConfig) -> Result<String, String> {
    let art = run_scenario(cfg).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_artifacts(&art, dir.path()).map_err(|e| e.to_string())?;
    artifact_hash(dir.path()).map_err(|e| e.to_string())
}

pub fn goldens() -> Outcome {
    let mut presets: Vec<PathBuf> = std::fs::read_dir(repo().join("presets"))
        .map_err(|e| format!("presets/: {e}"))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    presets.sort();
    let bless = std::env::var_os("SAFEKV_BLESS").is_some();
    let mut goldens: BTreeMap<String, String> = match std::fs::read_to_string(golden_path()) {
        Ok(t) => serde_json::from_str(&t).map_err(|e| e.to_string())?,
        Err(_) if bless => BTreeMap::new(),
        Err(e) => return Err(format!("{}: {e}", golden_path().display())),
    };
    let mut mismatched = Vec::new();
    for path in &presets {
        let name = path.file_stem().unwrap().to_string_lossy().to_string();
        let cfg = ScenarioConfig::from_file(path).map_err(|e| e.to_string())?;
        let (a, b) = (hash_of(&cfg)?, hash_of(&cfg)?);
        if a != b {
            mismatched.push(format!("{name}: re-run differs"));
            continue;
        }
        if bless {
            goldens.insert(name, a);
        } else if goldens.get(&name) != Some(&a) {
            mismatched.push(format!("{name}: {a} vs golden {:?}", goldens.get(&name)));
        }
    }
    if bless {
        let text = serde_json::to_string_pretty(&goldens).map_err(|e| e.to_string())? + "\n";
        std::fs::write(golden_path(), text).map_err(|e| e.to_string())?;
    }
    check(
        !presets.is_empty() && mismatched.is_empty(),
        if mismatched.is_empty() {
            format!("{} presets re-run twice, hashes match goldens{}", presets.len(), if bless { " (blessed)" } else { "" })
        } else {
            mismatched.join("; ")
        },
    )
}
