//! Server-side screening of submitted updates before aggregation.
//!
//! The distance filter drops updates farther than `d_T` from a reference
//! global update; the similarity filter drops updates whose aggregate cosine
//! similarity to the other submissions exceeds `δ_T`. Both metrics are
//! computed on the full submission, so the two filters commute.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fedsim::UpdateVector;
use crate::mathcore::{cosine, euclid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Distance,
    Similarity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorePolicy {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentVerdict {
    pub agent_id: usize,
    pub metric: f64,
    pub threshold: f64,
    /// `metric > threshold`.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefenseVerdict {
    pub kind: FilterKind,
    pub round: usize,
    /// One entry per submitted update, in submission order.
    pub agents: Vec<AgentVerdict>,
    /// Set when the filter would have rejected everything and kept all instead.
    pub alarm: Option<String>,
}

impl DefenseVerdict {
    pub fn flagged(&self, agent_id: usize) -> Option<bool> {
        self.agents
            .iter()
            .find(|v| v.agent_id == agent_id)
            .map(|v| v.flagged)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<UpdateVector>,
    pub verdict: DefenseVerdict,
}

fn round_of(updates: &[UpdateVector]) -> usize {
    updates.first().map_or(0, |u| u.round)
}

fn finish(
    kind: FilterKind,
    updates: &[UpdateVector],
    agents: Vec<AgentVerdict>,
    alarm: Option<String>,
) -> FilterOutcome {
    let all_flagged = !agents.is_empty() && agents.iter().all(|v| v.flagged);
    let alarm = alarm.or_else(|| {
        all_flagged.then(|| format!("{kind:?} filter rejected every update; keeping all"))
    });
    let kept = if all_flagged {
        updates.to_vec()
    } else {
        updates
            .iter()
            .zip(&agents)
            .filter(|(_, v)| !v.flagged)
            .map(|(u, _)| u.clone())
            .collect()
    };
    FilterOutcome {
        kept,
        verdict: DefenseVerdict {
            kind,
            round: round_of(updates),
            agents,
            alarm,
        },
    }
}

/// Euclidean distance of every update to `reference`.
pub fn distance_scores(updates: &[UpdateVector], reference: &[f64]) -> Result<Vec<f64>> {
    updates
        .iter()
        .map(|u| euclid(&u.values, reference))
        .collect()
}

pub fn distance_filter(
    updates: &[UpdateVector],
    reference: &[f64],
    d_t: f64,
) -> Result<FilterOutcome> {
    if d_t.is_nan() {
        return Err(Error::invalid("distance threshold is NaN"));
    }
    let scores = distance_scores(updates, reference)?;
    let agents = updates
        .iter()
        .zip(scores)
        .map(|(u, d)| AgentVerdict {
            agent_id: u.agent_id,
            metric: d,
            threshold: d_t,
            flagged: d > d_t,
        })
        .collect();
    Ok(finish(FilterKind::Distance, updates, agents, None))
}

/// Aggregate similarity of each update to all the others. `None` when fewer
/// than two updates were submitted.
pub fn similarity_scores(
    updates: &[UpdateVector],
    policy: ScorePolicy,
) -> Result<Option<Vec<f64>>> {
    let n = updates.len();
    if n < 2 {
        return Ok(None);
    }
    let mut sim = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let s = cosine(&updates[i].values, &updates[j].values)?;
            sim[i][j] = s;
            sim[j][i] = s;
        }
    }
    Ok(Some(
        (0..n)
            .map(|i| {
                let others = (0..n).filter(|&j| j != i).map(|j| sim[i][j]);
                match policy {
                    ScorePolicy::Mean => others.sum::<f64>() / (n - 1) as f64,
                    ScorePolicy::Max => others.fold(f64::NEG_INFINITY, f64::max),
                }
            })
            .collect(),
    ))
}

pub fn similarity_filter(
    updates: &[UpdateVector],
    delta_t: f64,
    policy: ScorePolicy,
) -> Result<FilterOutcome> {
    if delta_t.is_nan() {
        return Err(Error::invalid("similarity threshold is NaN"));
    }
    let Some(scores) = similarity_scores(updates, policy)? else {
        let agents = updates
            .iter()
            .map(|u| AgentVerdict {
                agent_id: u.agent_id,
                metric: f64::NAN,
                threshold: delta_t,
                flagged: false,
            })
            .collect();
        return Ok(finish(
            FilterKind::Similarity,
            updates,
            agents,
            Some("similarity score undefined for a single update; kept".into()),
        ));
    };
    let agents = updates
        .iter()
        .zip(scores)
        .map(|(u, s)| AgentVerdict {
            agent_id: u.agent_id,
            metric: s,
            threshold: delta_t,
            flagged: s > delta_t,
        })
        .collect();
    Ok(finish(FilterKind::Similarity, updates, agents, None))
}

/// Updates kept by every verdict; all of them if that leaves nothing.
pub fn intersect(
    updates: &[UpdateVector],
    verdicts: &[&DefenseVerdict],
) -> (Vec<UpdateVector>, Option<String>) {
    let kept: Vec<UpdateVector> = updates
        .iter()
        .filter(|u| verdicts.iter().all(|v| v.flagged(u.agent_id) != Some(true)))
        .cloned()
        .collect();
    if kept.is_empty() && !updates.is_empty() {
        (
            updates.to_vec(),
            Some("combined filters rejected every update; keeping all".into()),
        )
    } else {
        (kept, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(values: Vec<f64>, id: usize) -> UpdateVector {
        UpdateVector::benign(values, id, 3, 1)
    }

    #[test]
    fn infinite_threshold_keeps_all() {
        let us = vec![upd(vec![1e9], 0), upd(vec![-1e9], 1)];
        let out = distance_filter(&us, &[0.0], f64::INFINITY).unwrap();
        assert_eq!(out.kept.len(), 2);
        assert!(out.verdict.alarm.is_none());
        assert_eq!(out.verdict.round, 3);
    }

    #[test]
    fn boundary_is_kept() {
        let out = distance_filter(&[upd(vec![0.0], 0)], &[0.0], 0.0).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert!(!out.verdict.agents[0].flagged);
    }

    #[test]
    fn known_distances() {
        let us = vec![
            upd(vec![0.5, 0.0], 0),
            upd(vec![0.0, 1.5], 1),
            upd(vec![-2.5, 0.0], 2),
        ];
        let out = distance_filter(&us, &[0.0, 0.0], 2.0).unwrap();
        let ids: Vec<usize> = out.kept.iter().map(|u| u.agent_id).collect();
        assert_eq!(ids, vec![0, 1]);
        let metrics: Vec<f64> = out.verdict.agents.iter().map(|v| v.metric).collect();
        assert_eq!(metrics, vec![0.5, 1.5, 2.5]);
    }

    #[test]
    fn identical_updates_trigger_fallback() {
        let us = vec![
            upd(vec![1.0, 2.0], 0),
            upd(vec![1.0, 2.0], 1),
            upd(vec![1.0, 2.0], 2),
        ];
        let out = similarity_filter(&us, 0.99, ScorePolicy::Mean).unwrap();
        assert!(out
            .verdict
            .agents
            .iter()
            .all(|v| v.flagged && (v.metric - 1.0).abs() < 1e-12));
        assert_eq!(out.kept.len(), 3);
        assert!(out.verdict.alarm.is_some());
    }

    #[test]
    fn orthogonal_updates_are_kept() {
        let us = vec![
            upd(vec![1.0, 0.0, 0.0], 0),
            upd(vec![0.0, 2.0, 0.0], 1),
            upd(vec![0.0, 0.0, 3.0], 2),
        ];
        let out = similarity_filter(&us, 0.0, ScorePolicy::Mean).unwrap();
        assert_eq!(out.kept.len(), 3);
        assert!(out.verdict.alarm.is_none());
    }

    #[test]
    fn scores_match_brute_force() {
        let vs = [
            vec![1.0, 2.0, -1.0],
            vec![0.5, -0.3, 2.0],
            vec![-1.0, 1.0, 1.0],
        ];
        let us: Vec<UpdateVector> = vs
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, v)| upd(v, i))
            .collect();
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt()
                * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let mean = similarity_scores(&us, ScorePolicy::Mean).unwrap().unwrap();
        let max = similarity_scores(&us, ScorePolicy::Max).unwrap().unwrap();
        for i in 0..3 {
            let others: Vec<f64> = (0..3)
                .filter(|&j| j != i)
                .map(|j| cos(&vs[i], &vs[j]))
                .collect();
            assert!((mean[i] - others.iter().sum::<f64>() / 2.0).abs() < 1e-12);
            assert!((max[i] - others.iter().copied().fold(f64::MIN, f64::max)).abs() < 1e-12);
        }
    }

    #[test]
    fn single_update_is_kept_with_alarm() {
        let out = similarity_filter(&[upd(vec![1.0], 4)], 0.0, ScorePolicy::Mean).unwrap();
        assert_eq!(out.kept.len(), 1);
        assert!(out.verdict.alarm.is_some());
    }

    #[test]
    fn intersection_and_fallback() {
        let us = vec![
            upd(vec![1.0, 0.0], 0),
            upd(vec![0.0, 1.0], 1),
            upd(vec![5.0, 5.0], 2),
        ];
        let d = distance_filter(&us, &[0.0, 0.0], 2.0).unwrap();
        let s = similarity_filter(&us, 0.6, ScorePolicy::Mean).unwrap();
        let (kept, alarm) = intersect(&us, &[&d.verdict, &s.verdict]);
        assert_eq!(
            kept.iter().map(|u| u.agent_id).collect::<Vec<_>>(),
            vec![0, 1]
        );
        assert!(alarm.is_none());
        let all = distance_filter(&us, &[0.0, 0.0], -1.0).unwrap();
        let (kept, alarm) = intersect(&us, &[&all.verdict]);
        assert_eq!(kept.len(), 3);
        assert!(alarm.is_some());
    }
}
