use std::collections::HashSet;
use std::ops::Range;
use std::path::Path;
use std::sync::{Arc, RwLock};

use regex::{Regex, RegexSet};
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::trie::BlacklistTrie;
use super::DetectionVerdict;
use crate::error::DetectionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Regex,
    Blacklist,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternRule {
    pub rule_id: String,
    pub category: String,
    pub kind: RuleKind,
    pub pattern: String,
    #[serde(default = "enabled_default")]
    pub enabled: bool,
}

fn enabled_default() -> bool {
    true
}

/// On-disk form of `privacy_pattern_config.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternConfig {
    pub version: u64,
    pub rules: Vec<PatternRule>,
}

const RULE_FIELDS: &[&str] = &["rule_id", "category", "kind", "pattern", "enabled"];

impl PatternConfig {
    pub fn from_json(text: &str) -> Result<Self, DetectionError> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| DetectionError::Parse(e.to_string()))?;
        if let Some(obj) = raw.as_object() {
            for k in obj.keys().filter(|k| *k != "version" && *k != "rules") {
                warn!(field = %k, "ignoring unknown pattern config field");
            }
            if let Some(rules) = obj.get("rules").and_then(|r| r.as_array()) {
                for r in rules.iter().filter_map(|r| r.as_object()) {
                    for k in r.keys().filter(|k| !RULE_FIELDS.contains(&k.as_str())) {
                        warn!(field = %k, "ignoring unknown rule field");
                    }
                }
            }
        }
        serde_json::from_value(raw).map_err(|e| DetectionError::Parse(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, DetectionError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pattern config serializes")
    }

    /// Built-in rules covering the shipped category taxonomy.
    pub fn defaults() -> Self {
        let r = |id: &str, cat: &str, kind, pat: &str| PatternRule {
            rule_id: id.into(),
            category: cat.into(),
            kind,
            pattern: pat.into(),
            enabled: true,
        };
        use RuleKind::*;
        PatternConfig {
            version: 1,
            rules: vec![
                r("ssn", "Identity Information", Regex, r"\b\d{3}-\d{2}-\d{4}\b"),
                r(
                    "passport",
                    "Identity Information",
                    Regex,
                    r"(?i)\bpassport(?:\s+(?:number|no\.?))?[\s:#]*[A-Z0-9]{6,9}\b",
                ),
                r(
                    "phone",
                    "Basic Information",
                    Regex,
                    r"(?:\(\d{3}\)\s?|\b\d{3}[-. ])\d{3}[-. ]\d{4}\b",
                ),
                r(
                    "email",
                    "Basic Information",
                    Regex,
                    r"\b[A-Za-z0-9._%+-]+@[A-Za-z0-9.-]+\.[A-Za-z]{2,}\b",
                ),
                r(
                    "ipv4",
                    "System/Network Identification",
                    Regex,
                    r"\b(?:(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)\.){3}(?:25[0-5]|2[0-4]\d|1\d\d|[1-9]?\d)\b",
                ),
                r(
                    "credit_card",
                    "Financial Info",
                    Regex,
                    r"\b(?:\d{4}[- ]){3}\d{4}\b|\b\d{16}\b",
                ),
                r(
                    "bank_account",
                    "Financial Info",
                    Regex,
                    r"(?i)\b(?:account|acct)(?:\s+(?:number|no\.?|#))?[\s:#]*\d{8,17}\b",
                ),
                r(
                    "mac",
                    "Hardware Device Information",
                    Regex,
                    r"\b[0-9A-Fa-f]{2}(?:[:-][0-9A-Fa-f]{2}){5}\b",
                ),
                r(
                    "imei",
                    "Hardware Device Information",
                    Regex,
                    r"(?i)\bIMEI[\s:#]*\d{15}\b",
                ),
                r("internal_code", "Blacklisted Term", Blacklist, "PROJECT-ORION"),
            ],
        }
    }
}

/// A single rule hit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleMatch {
    pub rule_id: String,
    pub category: String,
    pub span: Range<usize>,
}

/// A compiled, immutable rule set.
#[derive(Debug)]
pub struct PatternSet {
    version: u64,
    rules: Vec<PatternRule>,
    set: RegexSet,
    /// (rule index, compiled regex) for enabled regex rules, in set order.
    regexes: Vec<(usize, Regex)>,
    trie: BlacklistTrie,
}

impl PatternSet {
    /// Compile every rule. Any failure rejects the whole set.
    pub fn compile(config: PatternConfig) -> Result<Self, DetectionError> {
        let mut seen = HashSet::new();
        let mut regexes = Vec::new();
        let mut trie = BlacklistTrie::new();
        for (i, rule) in config.rules.iter().enumerate() {
            if !seen.insert(rule.rule_id.as_str()) {
                return Err(DetectionError::DuplicateRule(rule.rule_id.clone()));
            }
            match rule.kind {
                RuleKind::Regex => {
                    let re = Regex::new(&rule.pattern).map_err(|e| DetectionError::Compile {
                        rule_id: rule.rule_id.clone(),
                        message: e.to_string(),
                    })?;
                    if rule.enabled {
                        regexes.push((i, re));
                    }
                }
                RuleKind::Blacklist => {
                    if rule.pattern.trim().is_empty() {
                        return Err(DetectionError::Compile {
                            rule_id: rule.rule_id.clone(),
                            message: "empty blacklist term".into(),
                        });
                    }
                    if rule.enabled && !trie.insert(&rule.pattern, i) {
                        return Err(DetectionError::Compile {
                            rule_id: rule.rule_id.clone(),
                            message: "blacklist term has no word characters".into(),
                        });
                    }
                }
            }
        }
        let set = RegexSet::new(regexes.iter().map(|(_, r)| r.as_str())).map_err(|e| {
            DetectionError::Compile {
                rule_id: "<set>".into(),
                message: e.to_string(),
            }
        })?;
        Ok(Self {
            version: config.version,
            rules: config.rules,
            set,
            regexes,
            trie,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, DetectionError> {
        Self::compile(PatternConfig::from_file(path)?)
    }

    pub fn defaults() -> Self {
        Self::compile(PatternConfig::defaults()).expect("default rules compile")
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn rules(&self) -> &[PatternRule] {
        &self.rules
    }

    /// Every match of every enabled rule with its byte span.
    pub fn find_matches(&self, text: &str) -> Vec<RuleMatch> {
        let mut out = Vec::new();
        for k in self.set.matches(text).iter() {
            let (i, re) = &self.regexes[k];
            let rule = &self.rules[*i];
            for m in re.find_iter(text) {
                out.push(RuleMatch {
                    rule_id: rule.rule_id.clone(),
                    category: rule.category.clone(),
                    span: m.range(),
                });
            }
        }
        for (i, span) in self.trie.find_all(text) {
            let rule = &self.rules[i];
            out.push(RuleMatch {
                rule_id: rule.rule_id.clone(),
                category: rule.category.clone(),
                span,
            });
        }
        out
    }

    /// Tier-1 verdict over the whole text.
    pub fn scan(&self, text: &str) -> DetectionVerdict {
        let mut cats: Vec<String> = Vec::new();
        let mut push = |c: &str| {
            if !cats.iter().any(|x| x == c) {
                cats.push(c.to_string());
            }
        };
        for k in self.set.matches(text).iter() {
            push(&self.rules[self.regexes[k].0].category);
        }
        for (i, _) in self.trie.find_all(text) {
            push(&self.rules[i].category);
        }
        DetectionVerdict::tier1(cats)
    }

    /// Tier-1 verdict for the block occupying `text[block_start..]`: only
    /// matches that overlap the block count.
    pub fn scan_block(&self, text: &str, block_start: usize) -> DetectionVerdict {
        if block_start == 0 {
            return self.scan(text);
        }
        let mut cats: Vec<String> = Vec::new();
        for m in self.find_matches(text) {
            if m.span.end > block_start && !cats.contains(&m.category) {
                cats.push(m.category);
            }
        }
        DetectionVerdict::tier1(cats)
    }
}

/// Hot-reloadable holder of the active pattern set. Each scan takes one
/// snapshot, so it never observes a mix of two versions.
#[derive(Debug)]
pub struct RuleEngine {
    active: RwLock<Arc<PatternSet>>,
}

impl Default for RuleEngine {
    fn default() -> Self {
        Self::new(PatternSet::defaults())
    }
}

impl RuleEngine {
    pub fn new(set: PatternSet) -> Self {
        Self {
            active: RwLock::new(Arc::new(set)),
        }
    }

    pub fn load(path: &Path) -> Result<Self, DetectionError> {
        Ok(Self::new(PatternSet::from_file(path)?))
    }

    /// Replace the active set from `path`. On error the old set stays.
    pub fn reload(&self, path: &Path) -> Result<Arc<PatternSet>, DetectionError> {
        let set = Arc::new(PatternSet::from_file(path)?);
        self.install(set.clone());
        Ok(set)
    }

    pub fn install(&self, set: Arc<PatternSet>) {
        *self.active.write().unwrap() = set;
    }

    pub fn snapshot(&self) -> Arc<PatternSet> {
        self.active.read().unwrap().clone()
    }

    pub fn scan(&self, text: &str) -> DetectionVerdict {
        self.snapshot().scan(text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cats(text: &str) -> Vec<String> {
        PatternSet::defaults().scan(text).categories
    }

    #[test]
    fn ssn_example() {
        let v = PatternSet::defaults().scan("my ssn is 123-45-6789");
        assert!(v.sensitive);
        assert!(!v.escalate);
        assert_eq!(v.tier, 1);
        assert_eq!(v.score, 1.0);
        assert_eq!(v.categories, vec!["Identity Information"]);
    }

    #[test]
    fn benign_escalates() {
        let v = PatternSet::defaults().scan("the weather is nice");
        assert!(!v.sensitive);
        assert!(v.escalate);
        assert!(v.categories.is_empty());
    }

    #[test]
    fn default_categories() {
        assert_eq!(cats("call 415-555-0134 today"), vec!["Basic Information"]);
        assert_eq!(cats("mail a.b@example.org"), vec!["Basic Information"]);
        assert_eq!(cats("host 10.0.0.12 is up"), vec!["System/Network Identification"]);
        assert_eq!(cats("card 4111 1111 1111 1111"), vec!["Financial Info"]);
        assert_eq!(cats("account number 0012345678"), vec!["Financial Info"]);
        assert_eq!(cats("mac 00:1A:2b:3C:4d:5E"), vec!["Hardware Device Information"]);
        assert_eq!(cats("IMEI 490154203237518"), vec!["Hardware Device Information"]);
        assert_eq!(cats("passport no. X1234567"), vec!["Identity Information"]);
        assert_eq!(cats("see project-orion notes"), vec!["Blacklisted Term"]);
        assert!(cats("version 1.2.3 shipped in 2024").is_empty());
        assert!(cats("I have 12 cats").is_empty());
    }

    #[test]
    fn block_scan_ignores_matches_before_the_block() {
        let s = PatternSet::defaults();
        let text = "ssn 123-45-6789 and then the weather";
        assert!(!s.scan_block(text, 20).sensitive);
        assert!(s.scan_block(text, 10).sensitive);
    }

    #[test]
    fn bad_rule_rejects_whole_config() {
        let mut c = PatternConfig::defaults();
        c.rules.push(PatternRule {
            rule_id: "broken".into(),
            category: "x".into(),
            kind: RuleKind::Regex,
            pattern: "(unclosed".into(),
            enabled: true,
        });
        match PatternSet::compile(c) {
            Err(DetectionError::Compile { rule_id, .. }) => assert_eq!(rule_id, "broken"),
            other => panic!("{other:?}"),
        }
        let mut c = PatternConfig::defaults();
        c.rules.push(c.rules[0].clone());
        assert!(matches!(
            PatternSet::compile(c),
            Err(DetectionError::DuplicateRule(_))
        ));
    }

    #[test]
    fn disabled_rules_do_not_fire() {
        let mut c = PatternConfig::defaults();
        c.rules[0].enabled = false;
        let s = PatternSet::compile(c).unwrap();
        assert!(!s.scan("123-45-6789").sensitive);
    }

    #[test]
    fn config_roundtrip_and_unknown_fields() {
        let json = r#"{"version": 7, "owner": "x", "rules": [
            {"rule_id": "a", "category": "c", "kind": "regex", "pattern": "foo", "enabled": true, "note": 1},
            {"rule_id": "b", "category": "c", "kind": "blacklist", "pattern": "bar baz"},
            {"rule_id": "d", "category": "c", "kind": "regex", "pattern": "q+", "enabled": false}
        ]}"#;
        let c = PatternConfig::from_json(json).unwrap();
        let s = PatternSet::compile(c.clone()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.version(), 7);
        assert_eq!(PatternConfig::from_json(&c.to_json()).unwrap(), c);
        assert!(matches!(
            PatternConfig::from_json("{not json"),
            Err(DetectionError::Parse(_))
        ));
    }

    #[test]
    fn reload_keeps_old_set_on_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("privacy_pattern_config.json");
        let engine = RuleEngine::default();
        std::fs::write(&p, "{\"version\": 2, \"rules\": [{\"rule_id\": \"x\", \"category\": \"c\", \"kind\": \"regex\", \"pattern\": \"(\"}]}").unwrap();
        assert!(engine.reload(&p).is_err());
        assert_eq!(engine.snapshot().version(), 1);
        std::fs::write(
            &p,
            serde_json::json!({"version": 3, "rules": [
                {"rule_id": "x", "category": "c", "kind": "regex", "pattern": "zzz"}
            ]})
            .to_string(),
        )
        .unwrap();
        engine.reload(&p).unwrap();
        assert_eq!(engine.snapshot().version(), 3);
        assert!(engine.scan("zzz").sensitive);
    }
}
