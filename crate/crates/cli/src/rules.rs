use std::path::{Path, PathBuf};

use clap::Subcommand;
use safekv_core::detection::{PatternConfig, PatternSet, RuleEngine};

use crate::error::CliError;

/// Pattern file picked up from the working directory when no path is given.
pub const DEFAULT_PATTERNS: &str = "privacy_pattern_config.json";
pub const PATTERNS_ENV: &str = "SAFEKV_SIM_PATTERNS";

#[derive(Debug, Subcommand)]
pub enum RulesAction {
    /// Compile-check a pattern config.
    Validate {
        /// Defaults to the active pattern file.
        path: Option<PathBuf>,
    },
    /// Print the active rules with their categories.
    List,
    /// Run the Tier-1 scan on sample text.
    Test { text: String },
    /// Print the built-in rule set as a pattern config.
    Defaults,
}

/// Compile the pattern file at `path`; a missing or broken file is a config
/// error naming the path.
pub fn load_set(path: &Path) -> Result<PatternSet, CliError> {
    if !path.is_file() {
        return Err(CliError::Config(format!("pattern config {} not found", path.display())));
    }
    PatternSet::from_file(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Explicit path, else `privacy_pattern_config.json` if present, else the
/// built-in rules.
pub fn active_set(path: Option<&Path>) -> Result<PatternSet, CliError> {
    match path {
        Some(p) => load_set(p),
        None if Path::new(DEFAULT_PATTERNS).is_file() => load_set(Path::new(DEFAULT_PATTERNS)),
        None => Ok(PatternSet::defaults()),
    }
}

/// Rule engine for a simulation run, honoring `SAFEKV_SIM_PATTERNS`.
pub fn load_engine(path: Option<&Path>) -> Result<RuleEngine, CliError> {
    let env = std::env::var_os(PATTERNS_ENV).map(PathBuf::from);
    Ok(RuleEngine::new(active_set(path.or(env.as_deref()))?))
}

pub fn cmd_rules(patterns: Option<&Path>, action: &RulesAction) -> Result<(), CliError> {
    match action {
        RulesAction::Validate { path } => {
            let set = active_set(path.as_deref().or(patterns))?;
            println!("ok: {} rules, version {}", set.len(), set.version());
        }
        RulesAction::List => {
            let set = active_set(patterns)?;
            println!("version {}", set.version());
            println!("{:<20} {:<32} {:<10} enabled", "rule_id", "category", "kind");
            for r in set.rules() {
                let kind = format!("{:?}", r.kind).to_lowercase();
                println!("{:<20} {:<32} {:<10} {}", r.rule_id, r.category, kind, r.enabled);
            }
        }
        RulesAction::Test { text } => {
            let set = active_set(patterns)?;
            let verdict = set.scan(text);
            if verdict.sensitive {
                println!("sensitive: {}", verdict.categories.join(", "));
                for m in set.find_matches(text) {
                    println!("  {} ({}) at {}..{}", m.rule_id, m.category, m.span.start, m.span.end);
                }
            } else {
                println!("clean");
            }
        }
        RulesAction::Defaults => println!("{}", PatternConfig::defaults().to_json()),
    }
    Ok(())
}
