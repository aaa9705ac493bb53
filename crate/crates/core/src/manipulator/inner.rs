//! Gradient ascent on the augmented Lagrangian with best-iterate selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mathcore::norm2;

use super::dual::DualState;
use super::lagrangian::{AttackProblem, LagrangianEval};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InnerConfig {
    /// `K`
    pub steps: usize,
    /// `γ`
    pub step_size: f64,
    /// Gradient-norm clip; `∞` disables it.
    pub clip: f64,
}

impl Default for InnerConfig {
    fn default() -> Self {
        Self {
            steps: 200,
            step_size: 0.1,
            clip: 10.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnerOutcome {
    /// Best iterate on the selected coordinates.
    pub x: Vec<f64>,
    pub best: LagrangianEval,
    pub initial_value: f64,
    /// `𝓛` at every evaluated iterate, starting with the initialization.
    pub trace: Vec<f64>,
    /// Set when a non-finite value stopped the ascent early.
    pub rollback: Option<String>,
}

pub fn inner_maximize(
    problem: &AttackProblem<'_>,
    init: &[f64],
    dual: &DualState,
    cfg: &InnerConfig,
) -> Result<InnerOutcome> {
    if cfg.steps == 0 {
        return Err(Error::invalid("inner maximization needs at least one step"));
    }
    if !(cfg.step_size >= 0.0 && cfg.step_size.is_finite()) {
        return Err(Error::invalid(format!(
            "inner step size {} is invalid",
            cfg.step_size
        )));
    }
    if !(cfg.clip > 0.0) {
        return Err(Error::invalid("gradient clip must be positive"));
    }
    let first = problem.evaluate(init, dual)?;
    if !first.value.is_finite() || first.grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            context: format!(
                "augmented Lagrangian at the initialization ({})",
                first.value
            ),
        });
    }
    let initial_value = first.value;
    let mut trace = vec![first.value];
    let mut x = init.to_vec();
    let mut best_x = x.clone();
    let mut best = first.clone();
    let mut current = first;
    let mut rollback = None;

    for step in 0..cfg.steps {
        let gnorm = norm2(&current.grad);
        let scale = if gnorm > cfg.clip {
            cfg.clip / gnorm
        } else {
            1.0
        };
        let next: Vec<f64> = x
            .iter()
            .zip(&current.grad)
            .map(|(xi, g)| xi + cfg.step_size * scale * g)
            .collect();
        let eval = match problem.evaluate(&next, dual) {
            Ok(e) if e.value.is_finite() && e.grad.iter().all(|g| g.is_finite()) => e,
            Ok(e) => {
                rollback = Some(format!(
                    "step {}: non-finite Lagrangian {}",
                    step + 1,
                    e.value
                ));
                break;
            }
            Err(e) => {
                rollback = Some(format!("step {}: {e}", step + 1));
                break;
            }
        };
        trace.push(eval.value);
        if eval.value > best.value {
            best = eval.clone();
            best_x = next.clone();
        }
        x = next;
        current = eval;
    }
    Ok(InnerOutcome {
        x: best_x,
        best,
        initial_value,
        trace,
        rollback,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manipulator::lagrangian::{
        DistanceReference, PenaltyForm, QuadraticSurrogate, SimilarityAggregate,
    };
    use crate::manipulator::thresholds::Thresholds;
    use crate::mathcore::SeededRng;

    fn quadratic_problem<'a>(
        global: &'a [f64],
        other: &'a [f64],
        sel: &'a [usize],
        fill: &'a [f64],
        quad: &'a QuadraticSurrogate,
    ) -> AttackProblem<'a> {
        AttackProblem {
            global,
            server_lr: 1.0,
            observed: vec![(other, 1e-9)],
            own_size: 1.0,
            selected: sel,
            fill,
            reference: DistanceReference::PredictedGlobal,
            similarity: SimilarityAggregate::Mean,
            penalty: PenaltyForm::Hinge,
            surrogate: quad,
        }
    }

    #[test]
    fn zero_step_returns_init() {
        let g = [0.0, 0.0];
        let o = [1.0, 0.0];
        let sel = [0, 1];
        let quad = QuadraticSurrogate {
            center: vec![1.0, 2.0],
        };
        let p = quadratic_problem(&g, &o, &sel, &g, &quad);
        let cfg = InnerConfig {
            steps: 5,
            step_size: 0.0,
            clip: 10.0,
        };
        let out = inner_maximize(
            &p,
            &[0.3, -0.2],
            &DualState::penalty_free(0.1).unwrap(),
            &cfg,
        )
        .unwrap();
        assert_eq!(out.x, vec![0.3, -0.2]);
        assert!(out.best.value >= out.initial_value);
    }

    #[test]
    fn converges_to_known_maximizer() {
        let g = [0.5, -1.0];
        let o = [0.0, 0.0];
        let sel = [0, 1];
        let quad = QuadraticSurrogate {
            center: vec![2.0, 1.0],
        };
        let p = quadratic_problem(&g, &o, &sel, &g, &quad);
        let out = inner_maximize(
            &p,
            &[0.0, 0.0],
            &DualState::penalty_free(0.1).unwrap(),
            &InnerConfig {
                steps: 200,
                step_size: 0.1,
                clip: 10.0,
            },
        )
        .unwrap();
        // g + a·x = c with a = 1/(1 + 1e-9)
        let a = 1.0 / (1.0 + 1e-9);
        let expect = [(2.0 - 0.5) / a, (1.0 + 1.0) / a];
        for (x, e) in out.x.iter().zip(expect) {
            assert!((x - e).abs() < 1e-3, "{:?}", out.x);
        }
    }

    #[test]
    fn best_iterate_never_below_init() {
        let mut rng = SeededRng::new(3);
        let g: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let o: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        let sel = [0, 1, 2, 3];
        let quad = QuadraticSurrogate {
            center: (0..4).map(|_| rng.normal()).collect(),
        };
        let p = quadratic_problem(&g, &o, &sel, &g, &quad);
        let mut d = DualState::new(5.0, 5.0, 0.1).unwrap();
        d.thresholds = Thresholds {
            distance: 0.1,
            similarity: 0.0,
        };
        // a huge step overshoots, so later iterates are worse than the start
        let out = inner_maximize(
            &p,
            &o,
            &d,
            &InnerConfig {
                steps: 10,
                step_size: 50.0,
                clip: 10.0,
            },
        )
        .unwrap();
        assert!(out.best.value >= out.initial_value);
        assert_eq!(
            out.best.value,
            out.trace.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        );
    }

    #[test]
    fn dual_value_dominates_probes() {
        // concave case: quadratic loss minus a positive multiple of a distance
        let g = [0.2, -0.4, 0.1];
        let o = [0.0, 0.0, 0.0];
        let sel = [0, 1, 2];
        let quad = QuadraticSurrogate {
            center: vec![1.0, 0.5, -2.0],
        };
        let p = quadratic_problem(&g, &o, &sel, &g, &quad);
        let mut d = DualState::new(0.0, 0.0, 0.1).unwrap();
        d.lambda = 0.3;
        d.thresholds = Thresholds {
            distance: 0.5,
            similarity: f64::INFINITY,
        };
        let out = inner_maximize(
            &p,
            &[0.0; 3],
            &d,
            &InnerConfig {
                steps: 3000,
                step_size: 0.05,
                clip: 10.0,
            },
        )
        .unwrap();
        let mut rng = SeededRng::new(11);
        for _ in 0..10 {
            let probe: Vec<f64> = out.x.iter().map(|x| x + rng.normal()).collect();
            let v = p.evaluate(&probe, &d).unwrap().value;
            assert!(
                out.best.value >= v - 1e-9,
                "dual {} probe {v}",
                out.best.value
            );
        }
    }

    #[test]
    fn rejects_bad_config() {
        let g = [0.0, 0.0];
        let sel = [0, 1];
        let quad = QuadraticSurrogate {
            center: vec![0.0, 0.0],
        };
        let p = quadratic_problem(&g, &g, &sel, &g, &quad);
        let d = DualState::penalty_free(0.1).unwrap();
        let bad = InnerConfig {
            steps: 0,
            ..InnerConfig::default()
        };
        assert!(inner_maximize(&p, &[0.0, 0.0], &d, &bad).is_err());
    }
}
