//! `metrics.csv` (one row per round, fixed header) and `summary.json`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::manipulator::pairwise_similarities;

use super::config::ExperimentConfig;
use super::run::{RoundRecord, RunOutcome};

pub const CSV_COLUMNS: &[&str] = &[
    "round",
    "global_accuracy",
    "local_accuracy",
    "benign_loss",
    "distance_threshold",
    "similarity_threshold",
    "global_update_norm",
    "benign_distance_min",
    "benign_distance_mean",
    "benign_distance_max",
    "malicious_distance_mean",
    "pair_similarity_min",
    "pair_similarity_mean",
    "pair_similarity_max",
    "benign_score_max",
    "malicious_score_mean",
    "kept_count",
    "malicious_distance_flagged",
    "malicious_similarity_flagged",
    "stealth_pass",
    "agent_ids",
    "agent_roles",
    "agent_distances",
    "agent_scores",
    "agent_distance_flagged",
    "agent_similarity_flagged",
    "attacker_distances",
    "attacker_similarities",
    "lambdas",
    "thetas",
    "alarm",
    "failures",
];

/// Nine significant digits, locale independent.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.8e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_num).unwrap_or_default()
}

fn join<T>(items: impl IntoIterator<Item = T>, f: impl Fn(T) -> String) -> String {
    items.into_iter().map(f).collect::<Vec<_>>().join(";")
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn min(v: &[f64]) -> Option<f64> {
    v.iter().copied().reduce(f64::min)
}

fn max(v: &[f64]) -> Option<f64> {
    v.iter().copied().reduce(f64::max)
}

fn csv_text(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Whether every malicious update passes both screens at the broadcast
/// thresholds, as the server measures them. `None` without adversaries.
pub fn stealth_pass(r: &RoundRecord) -> Option<bool> {
    let ids: Vec<usize> = r.malicious().map(|u| u.agent_id).collect();
    if ids.is_empty() {
        return None;
    }
    Some(ids.iter().all(|&id| {
        r.distance_verdict.flagged(id) == Some(false)
            && r.similarity_verdict.flagged(id) != Some(true)
    }))
}

fn role_metrics(r: &RoundRecord, malicious: bool, similarity: bool) -> Vec<f64> {
    let v = if similarity {
        &r.similarity_verdict
    } else {
        &r.distance_verdict
    };
    r.submissions
        .iter()
        .zip(&v.agents)
        .filter(|(u, _)| u.is_malicious == malicious)
        .map(|(_, a)| a.metric)
        .collect()
}

fn any_flagged(r: &RoundRecord, similarity: bool) -> Option<bool> {
    let v = if similarity {
        &r.similarity_verdict
    } else {
        &r.distance_verdict
    };
    let flags: Vec<bool> = r
        .submissions
        .iter()
        .zip(&v.agents)
        .filter(|(u, _)| u.is_malicious)
        .map(|(_, a)| a.flagged)
        .collect();
    (!flags.is_empty()).then(|| flags.iter().any(|&f| f))
}

pub fn csv_row(r: &RoundRecord) -> Result<String> {
    let bd = role_metrics(r, false, false);
    let md = role_metrics(r, true, false);
    let bs = role_metrics(r, false, true);
    let ms = role_metrics(r, true, true);
    let all: Vec<&[f64]> = r.submissions.iter().map(|u| u.values.as_slice()).collect();
    let pairs = pairwise_similarities(&all)?;
    let bool_s = |b: Option<bool>| {
        b.map(|b| if b { "1" } else { "0" }.to_string())
            .unwrap_or_default()
    };

    let fields = vec![
        r.round.to_string(),
        fmt_num(r.global_accuracy),
        fmt_num(r.local_accuracy),
        fmt_num(r.benign_loss),
        fmt_num(r.thresholds.distance),
        fmt_num(r.thresholds.similarity),
        fmt_num(r.global_update_norm),
        opt(min(&bd)),
        opt(mean(&bd)),
        opt(max(&bd)),
        opt(mean(&md)),
        opt(min(&pairs)),
        opt(mean(&pairs)),
        opt(max(&pairs)),
        opt(max(&bs)),
        opt(mean(&ms)),
        r.kept.len().to_string(),
        bool_s(any_flagged(r, false)),
        bool_s(any_flagged(r, true)),
        bool_s(stealth_pass(r)),
        join(&r.submissions, |u| u.agent_id.to_string()),
        join(&r.submissions, |u| {
            if u.is_malicious { "m" } else { "b" }.to_string()
        }),
        join(&r.distance_verdict.agents, |a| fmt_num(a.metric)),
        join(&r.similarity_verdict.agents, |a| fmt_num(a.metric)),
        join(&r.distance_verdict.agents, |a| {
            if a.flagged { "1" } else { "0" }.to_string()
        }),
        join(&r.similarity_verdict.agents, |a| {
            if a.flagged { "1" } else { "0" }.to_string()
        }),
        join(&r.stealth, |s| fmt_num(s.distance)),
        join(&r.stealth, |s| fmt_num(s.similarity)),
        join(&r.duals, |d| fmt_num(d.1)),
        join(&r.duals, |d| fmt_num(d.2)),
        csv_text(r.alarm.as_deref().unwrap_or("")),
        csv_text(&r.failures.join(" | ")),
    ];
    debug_assert_eq!(fields.len(), CSV_COLUMNS.len());
    Ok(fields.join(","))
}

pub fn metrics_csv(outcome: &RunOutcome) -> Result<String> {
    let mut out = String::new();
    out.push_str(&CSV_COLUMNS.join(","));
    out.push('\n');
    for r in &outcome.rounds {
        let _ = writeln!(out, "{}", csv_row(r)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagRates {
    /// Share of benign (round, agent) verdicts that flagged.
    pub benign: f64,
    /// Share of malicious (round, agent) verdicts that flagged; null
    /// without adversaries.
    pub malicious: Option<f64>,
    /// Share of rounds in which at least one malicious update was flagged.
    pub malicious_rounds: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub rounds: usize,
    pub initial_accuracy: f64,
    pub final_accuracy: f64,
    pub best_accuracy: f64,
    pub final_local_accuracy: f64,
    pub distance_flags: FlagRates,
    pub similarity_flags: FlagRates,
    /// Share of rounds in which every malicious update passed both screens
    /// at the broadcast thresholds.
    pub stealth_pass_rate: Option<f64>,
    /// The same, as reported by the attackers against their own thresholds.
    pub attacker_reported_pass_rate: Option<f64>,
    pub alarms: usize,
    pub failures: usize,
    pub config: ExperimentConfig,
    pub wall_time_seconds: f64,
}

fn flag_rates(outcome: &RunOutcome, similarity: bool) -> FlagRates {
    let mut b = (0usize, 0usize);
    let mut m = (0usize, 0usize);
    let mut rounds = (0usize, 0usize);
    for r in &outcome.rounds {
        let v = if similarity {
            &r.similarity_verdict
        } else {
            &r.distance_verdict
        };
        for (u, a) in r.submissions.iter().zip(&v.agents) {
            let slot = if u.is_malicious { &mut m } else { &mut b };
            slot.0 += a.flagged as usize;
            slot.1 += 1;
        }
        if let Some(f) = any_flagged(r, similarity) {
            rounds.0 += f as usize;
            rounds.1 += 1;
        }
    }
    let rate = |p: (usize, usize)| (p.1 > 0).then(|| p.0 as f64 / p.1 as f64);
    FlagRates {
        benign: rate(b).unwrap_or(0.0),
        malicious: rate(m),
        malicious_rounds: rate(rounds),
    }
}

pub fn summarize(outcome: &RunOutcome) -> Summary {
    let acc: Vec<f64> = outcome.rounds.iter().map(|r| r.global_accuracy).collect();
    let passes: Vec<bool> = outcome.rounds.iter().filter_map(stealth_pass).collect();
    let reported: Vec<bool> = outcome
        .rounds
        .iter()
        .filter(|r| !r.stealth.is_empty())
        .map(|r| r.stealth.iter().all(|s| s.satisfied()))
        .collect();
    let share = |v: &[bool]| {
        (!v.is_empty()).then(|| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64)
    };
    Summary {
        rounds: outcome.rounds.len(),
        initial_accuracy: acc.first().copied().unwrap_or(f64::NAN),
        final_accuracy: outcome.final_accuracy(),
        best_accuracy: acc.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        final_local_accuracy: outcome.final_local_accuracy(),
        distance_flags: flag_rates(outcome, false),
        similarity_flags: flag_rates(outcome, true),
        stealth_pass_rate: share(&passes),
        attacker_reported_pass_rate: share(&reported),
        alarms: outcome.rounds.iter().filter(|r| r.alarm.is_some()).count(),
        failures: outcome.rounds.iter().map(|r| r.failures.len()).sum(),
        config: outcome.config.clone(),
        wall_time_seconds: outcome.wall_time_seconds,
    }
}

/// Writes `metrics.csv`, `summary.json` and, when enabled, `debug/`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<Summary> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("metrics.csv"), metrics_csv(outcome)?)?;
    let summary = summarize(outcome);
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| crate::error::Error::Io(e.to_string()))?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    if outcome.config.debug {
        let dbg = dir.join("debug");
        fs::create_dir_all(&dbg)?;
        for r in &outcome.rounds {
            let record = serde_json::json!({
                "round": r.round,
                "thresholds": r.thresholds,
                "stealth": r.stealth,
                "adversaries": r.debug,
            });
            let text = serde_json::to_string_pretty(&record)
                .map_err(|e| crate::error::Error::Io(e.to_string()))?;
            fs::write(dbg.join(format!("round_{:03}.json", r.round)), text + "\n")?;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(fmt_num(0.5), "5.00000000e-1");
        assert_eq!(fmt_num(-1234.5678912345), "-1.23456789e3");
        assert_eq!(fmt_num(f64::INFINITY), "inf");
        assert_eq!(fmt_num(f64::NAN), "nan");
    }

    #[test]
    fn quoting() {
        assert_eq!(csv_text("plain"), "plain");
        assert_eq!(csv_text("a,b"), "\"a,b\"");
        assert_eq!(csv_text("say \"x\""), "\"say \"\"x\"\"\"");
    }
}
