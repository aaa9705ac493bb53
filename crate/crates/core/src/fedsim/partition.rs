//! Non-IID label-skew partitioning.

use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};
use crate::mathcore::SeededRng;

use super::data::Dataset;

const MAX_ATTEMPTS: usize = 100;

/// Splits `ds` across `agents` with per-class agent proportions drawn from
/// `Dirichlet(β)`. Every agent ends up with at least one sample: the draw is
/// repeated (up to 100 times) until no part is empty, and if that still fails
/// the largest part donates samples to the empty ones.
pub fn dirichlet_partition(
    ds: &Dataset,
    agents: usize,
    beta: f64,
    rng: &mut SeededRng,
) -> Result<Vec<Dataset>> {
    let parts = dirichlet_partition_indices(&ds.labels, ds.classes, agents, beta, rng)?;
    Ok(parts
        .iter()
        .enumerate()
        .map(|(i, idx)| ds.subset(idx, format!("{}/agent-{i}", ds.name)))
        .collect())
}

pub fn dirichlet_partition_indices(
    labels: &[usize],
    classes: usize,
    agents: usize,
    beta: f64,
    rng: &mut SeededRng,
) -> Result<Vec<Vec<usize>>> {
    if labels.is_empty() {
        return Err(Error::Empty {
            context: "dirichlet_partition",
        });
    }
    if agents == 0 {
        return Err(Error::invalid("partition needs at least one agent"));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!(
            "Dirichlet concentration {beta} must be positive"
        )));
    }
    if labels.len() < agents {
        return Err(Error::invalid(format!(
            "{} samples cannot give each of {agents} agents a sample",
            labels.len()
        )));
    }
    let gamma = Gamma::new(beta, 1.0).map_err(|e| Error::invalid(e.to_string()))?;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }

    let mut parts = Vec::new();
    for attempt in 0..MAX_ATTEMPTS {
        let mut r = rng.split(&format!("attempt-{attempt}"));
        parts = vec![Vec::new(); agents];
        for members in &by_class {
            if members.is_empty() {
                continue;
            }
            let mut idx = members.clone();
            r.shuffle(&mut idx);
            let mut props: Vec<f64> = (0..agents).map(|_| gamma.sample(&mut r)).collect();
            let total: f64 = props.iter().sum();
            if total > 0.0 && total.is_finite() {
                props.iter_mut().for_each(|p| *p /= total);
            } else {
                props = vec![1.0 / agents as f64; agents];
            }
            let n = idx.len();
            let mut cum = 0.0;
            let mut start = 0;
            for (a, p) in props.iter().enumerate() {
                cum += p;
                let end = if a + 1 == agents {
                    n
                } else {
                    ((cum * n as f64).round() as usize).clamp(start, n)
                };
                parts[a].extend_from_slice(&idx[start..end]);
                start = end;
            }
        }
        if parts.iter().all(|p| !p.is_empty()) {
            break;
        }
    }
    while let Some(empty) = parts.iter().position(Vec::is_empty) {
        let donor = (0..agents)
            .max_by(|&a, &b| parts[a].len().cmp(&parts[b].len()).then(b.cmp(&a)))
            .expect("agents > 0");
        let moved = parts[donor].pop().expect("donor has samples");
        parts[empty].push(moved);
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}
