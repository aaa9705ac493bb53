//! Update vectors, weighted aggregation and the global step.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, Error, Result};

use super::data::Dataset;
use super::model::SurrogateModel;

/// One agent's flattened adapter delta for a round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateVector {
    pub values: Vec<f64>,
    pub agent_id: usize,
    pub round: usize,
    /// Dataset size the agent reports to the server.
    pub claimed_size: usize,
    /// Known to the simulation harness only; server-side code never reads it.
    pub is_malicious: bool,
}

impl UpdateVector {
    pub fn benign(values: Vec<f64>, agent_id: usize, round: usize, claimed_size: usize) -> Self {
        Self {
            values,
            agent_id,
            round,
            claimed_size,
            is_malicious: false,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Global adapter parameters after round `round`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub params: Vec<f64>,
    pub server_lr: f64,
    pub round: usize,
}

impl GlobalState {
    pub fn zeros(len: usize, server_lr: f64) -> Self {
        Self {
            params: vec![0.0; len],
            server_lr,
            round: 0,
        }
    }
}

/// Size-weighted mean `Σ D_i / ΣD_k · Δw_i`. Reduction runs in ascending
/// `agent_id` order regardless of the input order.
pub fn aggregate(updates: &[UpdateVector]) -> Result<Vec<f64>> {
    Ok(aggregate_with_weights(updates)?.0)
}

/// Like [`aggregate`], also returning `(agent_id, weight)` in reduction order.
pub fn aggregate_with_weights(updates: &[UpdateVector]) -> Result<(Vec<f64>, Vec<(usize, f64)>)> {
    let first = updates.first().ok_or(Error::Empty {
        context: "aggregate",
    })?;
    let len = first.len();
    for u in updates {
        ensure_len("aggregate", len, u.len())?;
        if u.claimed_size == 0 {
            return Err(Error::invalid(format!(
                "agent {} claimed a dataset size of zero",
                u.agent_id
            )));
        }
    }
    let mut order: Vec<&UpdateVector> = updates.iter().collect();
    order.sort_by_key(|u| u.agent_id);
    let total: f64 = order.iter().map(|u| u.claimed_size as f64).sum();
    let mut out = vec![0.0; len];
    let mut weights = Vec::with_capacity(order.len());
    for u in order {
        let w = u.claimed_size as f64 / total;
        for (o, v) in out.iter_mut().zip(&u.values) {
            *o += w * v;
        }
        weights.push((u.agent_id, w));
    }
    Ok((out, weights))
}

/// `w_g(t) = w_g(t−1) + η·Δw_g(t)`; the round counter advances by one.
pub fn apply_global(g: &GlobalState, delta: &[f64], server_lr: f64) -> Result<GlobalState> {
    ensure_len("apply_global", g.params.len(), delta.len())?;
    Ok(GlobalState {
        params: g
            .params
            .iter()
            .zip(delta)
            .map(|(w, d)| w + server_lr * d)
            .collect(),
        server_lr,
        round: g.round + 1,
    })
}

/// Top-1 accuracy of the global model on `ds`.
pub fn evaluate(model: &SurrogateModel, g: &GlobalState, ds: &Dataset) -> Result<f64> {
    model.accuracy_at(&g.params, ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn upd(values: Vec<f64>, id: usize, size: usize) -> UpdateVector {
        UpdateVector::benign(values, id, 1, size)
    }

    #[test]
    fn identical_updates_are_a_fixed_point() {
        let v = vec![0.5, -1.25, 3.0];
        let out = aggregate(&[
            upd(v.clone(), 0, 3),
            upd(v.clone(), 1, 10),
            upd(v.clone(), 2, 1),
        ])
        .unwrap();
        for (a, b) in out.iter().zip(&v) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_sum_matches_brute_force() {
        let us = [
            upd(vec![1.0, 2.0], 0, 1),
            upd(vec![-3.0, 0.5], 1, 2),
            upd(vec![4.0, -1.0], 2, 1),
        ];
        let out = aggregate(&us).unwrap();
        let expect = [
            0.25 * 1.0 + 0.5 * -3.0 + 0.25 * 4.0,
            0.25 * 2.0 + 0.5 * 0.5 + 0.25 * -1.0,
        ];
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
        let (_, w) = aggregate_with_weights(&us).unwrap();
        assert!((w.iter().map(|x| x.1).sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[upd(vec![1.0], 0, 1), upd(vec![1.0], 1, 0)]).is_err());
        assert!(aggregate(&[upd(vec![1.0], 0, 1), upd(vec![1.0, 2.0], 1, 1)]).is_err());
    }

    #[test]
    fn global_step() {
        let g = GlobalState {
            params: vec![1.0, 2.0],
            server_lr: 1.0,
            round: 3,
        };
        let n = apply_global(&g, &[0.5, -0.5], 1.0).unwrap();
        assert_eq!(n.params, vec![1.5, 1.5]);
        assert_eq!(n.round, 4);
        assert_eq!(
            apply_global(&g, &[0.5, -0.5], 0.0).unwrap().params,
            g.params
        );
        assert_eq!(apply_global(&g, &[0.0, 0.0], 1.0).unwrap().params, g.params);
        assert!(apply_global(&g, &[0.0], 1.0).is_err());
    }
}
