use std::path::{Path, PathBuf};
use std::sync::Arc;

use safekv_core::ConfigError;
use safekv_core::sim::{run_scenario_with_rules, write_artifacts, RunArtifact, ScenarioConfig};
use tracing::info;

use crate::error::CliError;
use crate::rules::load_engine;
use crate::Cli;

#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
    pub quiet: bool,
}

impl Overrides {
    pub fn from_cli(cli: &Cli) -> Self {
        Self {
            seed: cli.seed,
            output: cli.output.clone(),
            quiet: cli.quiet,
        }
    }
}

/// Parse and fully validate a scenario before anything runs.
pub fn load_scenario(path: &Path, o: &Overrides) -> Result<ScenarioConfig, CliError> {
    let mut cfg = ScenarioConfig::from_file(path).map_err(|e| match e {
        ConfigError::Read { .. } => CliError::Config(e.to_string()),
        _ => CliError::Config(format!("{}: {e}", path.display())),
    })?;
    if let Some(seed) = o.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &o.output {
        cfg.output_dir = out.clone();
    }
    cfg.validate()
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

pub fn cmd_run(path: &Path, o: &Overrides) -> Result<(), CliError> {
    let cfg = load_scenario(path, o)?;
    let rules = Arc::new(load_engine(None)?);
    info!(scenario = %cfg.name, seed = cfg.seed, policies = cfg.policies.len(), "running");
    let art = run_scenario_with_rules(&cfg, rules)?;
    write_artifacts(&art, &cfg.output_dir).map_err(|e| CliError::Runtime(e.to_string()))?;
    info!(dir = %cfg.output_dir.display(), "artifacts written");
    if !o.quiet {
        print!("{}", summary_table(&art));
    }
    Ok(())
}

/// Hit rate, TTFT, defense rate and leak events per policy.
pub fn summary_table(art: &RunArtifact) -> String {
    let mut s = format!(
        "{:<20} {:>8} {:>8} {:>10} {:>10} {:>10} {:>8} {:>6}\n",
        "policy", "requests", "hit", "ttft_mean", "ttft_p95", "ttft_p99", "defense", "leaks"
    );
    for run in &art.runs {
        let m = &run.metrics;
        let defense = run
            .attack
            .as_ref()
            .map_or("-".to_string(), |a| format!("{:.4}", a.defense_rate));
        s += &format!(
            "{:<20} {:>8} {:>8.4} {:>10.2} {:>10.2} {:>10.2} {:>8} {:>6}\n",
            run.policy.name(),
            m.requests,
            m.hit_rate,
            m.ttft.mean,
            m.ttft.p95,
            m.ttft.p99,
            defense,
            m.leak_events
        );
    }
    s
}
