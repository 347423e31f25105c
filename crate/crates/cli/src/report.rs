use std::fs;
use std::path::{Path, PathBuf};

use safekv_core::adversary::CampaignReport;
use safekv_core::sim::{percentile, read_metrics, RequestRecord, RunMetrics, UserKind};
use tracing::info;

use crate::error::CliError;
use crate::plot;

/// One policy's artifacts.
struct Entry {
    label: String,
    metrics: RunMetrics,
    ttft: Vec<f64>,
    attack: Option<CampaignReport>,
}

const PERCENTILES: [f64; 7] = [10.0, 25.0, 50.0, 75.0, 90.0, 95.0, 99.0];

fn config_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{}: {e}", path.display()))
}

fn load_entry(dir: &Path, label: String) -> Result<Entry, CliError> {
    let metrics = read_metrics(&dir.join("metrics.json")).map_err(|e| CliError::Config(e.to_string()))?;
    let req_path = dir.join("requests.csv");
    let mut reader = csv::Reader::from_path(&req_path).map_err(|e| config_err(&req_path, e))?;
    let mut ttft = Vec::new();
    for row in reader.deserialize::<RequestRecord>() {
        let r = row.map_err(|e| config_err(&req_path, e))?;
        if r.user_kind == UserKind::Benign && !r.dropped {
            ttft.push(r.ttft_ms);
        }
    }
    let attack_path = dir.join("attack.json");
    let attack = if attack_path.is_file() {
        let text = fs::read_to_string(&attack_path).map_err(|e| config_err(&attack_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| config_err(&attack_path, e))?)
    } else {
        None
    };
    Ok(Entry {
        label,
        metrics,
        ttft,
        attack,
    })
}

/// A directory holding `metrics.json` is one artifact; otherwise every
/// subdirectory holding one is.
fn load_dir(dir: &Path, multi: bool) -> Result<Vec<Entry>, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Config(format!("artifact directory {} not found", dir.display())));
    }
    let name = |p: &Path| p.file_name().map_or(String::new(), |n| n.to_string_lossy().into_owned());
    if dir.join("metrics.json").is_file() {
        return Ok(vec![load_entry(dir, name(dir))?]);
    }
    let mut subs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| config_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.json").is_file())
        .collect();
    subs.sort();
    if subs.is_empty() {
        return Err(CliError::Config(format!("{}: no run artifacts found", dir.display())));
    }
    subs.iter()
        .map(|p| {
            let label = if multi { format!("{}/{}", name(dir), name(p)) } else { name(p) };
            load_entry(p, label)
        })
        .collect()
}

fn tier_shares(m: &RunMetrics) -> Option<[f64; 3]> {
    let d = m.detection.as_ref()?;
    let n: u64 = d.resolved_at.iter().sum();
    (n > 0).then(|| d.resolved_at.map(|r| r as f64 / n as f64))
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let err = |e: csv::Error| CliError::Runtime(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(r).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

pub fn cmd_report(dirs: &[PathBuf], out: &Path, quiet: bool) -> Result<(), CliError> {
    let mut entries = Vec::new();
    for d in dirs {
        entries.extend(load_dir(d, dirs.len() > 1)?);
    }
    fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;

    let summary: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            let m = &e.metrics;
            vec![
                e.label.clone(),
                m.policy.name().to_string(),
                m.requests.to_string(),
                format!("{:.6}", m.hit_rate),
                format!("{:.3}", m.ttft.mean),
                format!("{:.3}", m.ttft.p50),
                format!("{:.3}", m.ttft.p95),
                format!("{:.3}", m.ttft.p99),
                format!("{:.1}", m.throughput_tokens_per_s),
                e.attack.as_ref().map_or(String::new(), |a| format!("{:.4}", a.defense_rate)),
                m.leak_events.to_string(),
                m.anomalies.to_string(),
                m.downgrades.to_string(),
            ]
        })
        .collect();
    write_csv(
        &out.join("summary.csv"),
        &[
            "run",
            "policy",
            "requests",
            "hit_rate",
            "ttft_mean",
            "ttft_p50",
            "ttft_p95",
            "ttft_p99",
            "throughput_tokens_per_s",
            "defense_rate",
            "leak_events",
            "anomalies",
            "downgrades",
        ],
        &summary,
    )?;

    let mut quantiles = Vec::new();
    for e in &entries {
        let mut sorted = e.ttft.clone();
        sorted.sort_by(f64::total_cmp);
        for p in PERCENTILES {
            quantiles.push(vec![e.label.clone(), format!("{p:.0}"), format!("{:.3}", percentile(&sorted, p))]);
        }
    }
    write_csv(&out.join("ttft_quantiles.csv"), &["run", "percentile", "ttft_ms"], &quantiles)?;

    let tiers: Vec<(&Entry, [f64; 3])> = entries
        .iter()
        .filter_map(|e| tier_shares(&e.metrics).map(|s| (e, s)))
        .collect();
    let tier_rows: Vec<Vec<String>> = tiers
        .iter()
        .map(|(e, s)| {
            let d = e.metrics.detection.as_ref().expect("has detection");
            vec![
                e.label.clone(),
                d.resolved_at[0].to_string(),
                d.resolved_at[1].to_string(),
                d.resolved_at[2].to_string(),
                format!("{:.4}", s[0]),
                format!("{:.4}", s[1]),
                format!("{:.4}", s[2]),
                format!("{:.4}", s[0] + s[1]),
            ]
        })
        .collect();
    write_csv(
        &out.join("tier_split.csv"),
        &["run", "tier1", "tier2", "tier3", "tier1_share", "tier2_share", "tier3_share", "tier1_2_share"],
        &tier_rows,
    )?;

    let labels: Vec<String> = entries.iter().map(|e| e.label.clone()).collect();
    let attacked: Vec<&Entry> = entries.iter().filter(|e| e.attack.is_some()).collect();
    if !attacked.is_empty() {
        plot::bars(
            &out.join("defense_rate.svg"),
            "Defense rate by policy",
            "defense rate",
            &attacked.iter().map(|e| e.label.clone()).collect::<Vec<_>>(),
            &attacked
                .iter()
                .map(|e| e.attack.as_ref().map_or(0.0, |a| a.defense_rate))
                .collect::<Vec<_>>(),
        )?;
    }
    plot::cdf(
        &out.join("ttft_distribution.svg"),
        "TTFT distribution",
        "TTFT (ms)",
        &entries.iter().map(|e| (e.label.clone(), e.ttft.clone())).collect::<Vec<_>>(),
    )?;
    if !tiers.is_empty() {
        plot::tier_stack(
            &out.join("tier_split.svg"),
            &tiers.iter().map(|(e, _)| e.label.clone()).collect::<Vec<_>>(),
            &tiers.iter().map(|(_, s)| *s).collect::<Vec<_>>(),
        )?;
    }
    plot::bars(
        &out.join("throughput.svg"),
        "Throughput proxy",
        "input tokens / simulated s",
        &labels,
        &entries.iter().map(|e| e.metrics.throughput_tokens_per_s).collect::<Vec<_>>(),
    )?;
    info!(dir = %out.display(), runs = entries.len(), "report written");

    if !quiet {
        println!(
            "{:<28} {:>10} {:>10} {:>10} {:>10} {:>8} {:>8}",
            "run", "ttft_mean", "ttft_p50", "ttft_p95", "ttft_p99", "hit", "defense"
        );
        for (e, row) in entries.iter().zip(&summary) {
            let m = &e.metrics;
            let defense = if row[9].is_empty() { "-" } else { row[9].as_str() };
            println!(
                "{:<28} {:>10.2} {:>10.2} {:>10.2} {:>10.2} {:>8.4} {:>8}",
                e.label, m.ttft.mean, m.ttft.p50, m.ttft.p95, m.ttft.p99, m.hit_rate, defense
            );
        }
        for row in &tier_rows {
            println!("{}: tier split {} / {} / {}, Tier-1+2 {}", row[0], row[4], row[5], row[6], row[7]);
        }
    }
    Ok(())
}
