//! Self-checks behind `fedmanip verify`: spectral numerics, analytic
//! gradients against finite differences, the spectral round trip, dual
//! projection and run determinism.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::fedsim::{
    aggregate, lora_loss_grad, synth_dataset, LoraFactors, LoraScaling, LoraSpec, SurrogateModel,
    UpdateVector,
};
use crate::gst::{gft_basis, laplacian, transform};
use crate::manipulator::{
    dual_update, AttackProblem, DistanceReference, DualState, ModelSurrogate, PenaltyForm,
    SimilarityAggregate, Thresholds,
};
use crate::mathcore::{sym_eig, Matrix, SeededRng};
use crate::vgae::{elbo_and_grad, normalize_adjacency, soft_targets, VgaeParams};

use super::config::{AttackKind, ExperimentConfig};
use super::metrics::{metrics_csv, summarize};
use super::run::run_experiment;

pub const SUITES: &[&str] = &["numerics", "gradients", "gst", "duals", "determinism"];

pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;
pub const ORTHONORMALITY_TOL: f64 = 1e-10;
pub const AGGREGATION_TOL: f64 = 1e-12;
pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;
pub const ROUND_TRIP_TOL: f64 = 1e-10;
pub const DUAL_SEQUENCES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub module: &'static str,
    pub operation: String,
    /// Worst observed error (or count of violations).
    pub value: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<Check>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }

    /// One aligned line per check.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:<12} {:<12} {:<56} {:>12} {:>10}",
            "status", "suite", "module", "operation", "value", "tolerance"
        );
        for c in &self.checks {
            let _ = writeln!(
                out,
                "{:<6} {:<12} {:<12} {:<56} {:>12.3e} {:>10.1e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.suite,
                c.module,
                c.operation,
                c.value,
                c.tolerance
            );
        }
        out
    }

    fn push(
        &mut self,
        suite: &'static str,
        module: &'static str,
        operation: impl Into<String>,
        value: f64,
        tolerance: f64,
    ) {
        self.checks.push(Check {
            suite,
            module,
            operation: operation.into(),
            value,
            tolerance,
            passed: value <= tolerance,
        });
    }
}

/// Runs one suite by name, or every suite for `"all"`.
pub fn verify(suite: &str) -> Result<VerifyReport> {
    let mut report = VerifyReport::default();
    let names: Vec<&str> = match suite {
        "all" => SUITES.to_vec(),
        s if SUITES.contains(&s) => vec![s],
        s => {
            return Err(Error::invalid(format!(
                "unknown verify suite `{s}` (expected all, {})",
                SUITES.join(", ")
            )))
        }
    };
    for name in names {
        match name {
            "numerics" => numerics(&mut report)?,
            "gradients" => gradients(&mut report)?,
            "gst" => spectral(&mut report)?,
            "duals" => duals(&mut report)?,
            "determinism" => determinism(&mut report)?,
            _ => unreachable!(),
        }
    }
    Ok(report)
}

fn random_symmetric(n: usize, rng: &mut SeededRng) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.normal();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn random_adjacency(n: usize, rng: &mut SeededRng) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let v = rng.uniform();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn numerics(report: &mut VerifyReport) -> Result<()> {
    let mut rng = SeededRng::new(11);
    let mut residual: f64 = 0.0;
    let mut ortho: f64 = 0.0;
    for n in [1, 2, 5, 16, 40] {
        for _ in 0..3 {
            let s = random_symmetric(n, &mut rng);
            let eig = sym_eig(&s)?;
            residual = residual
                .max(eig.reconstruction_residual(&s) / s.frobenius_norm().max(f64::MIN_POSITIVE));
            ortho = ortho.max(eig.orthonormality_error());
        }
    }
    report.push(
        "numerics",
        "mathcore",
        "sym_eig relative residual ‖S−BΛBᵀ‖/‖S‖",
        residual,
        EIGEN_RESIDUAL_TOL,
    );
    report.push(
        "numerics",
        "mathcore",
        "sym_eig orthonormality max|BᵀB−I|",
        ortho,
        ORTHONORMALITY_TOL,
    );

    let mut worst: f64 = 0.0;
    for trial in 0..50 {
        let k = 1 + rng.below(8);
        let len = 1 + rng.below(30);
        let ups: Vec<UpdateVector> = (0..k)
            .map(|i| {
                UpdateVector::benign(
                    (0..len).map(|_| rng.normal()).collect(),
                    i,
                    trial,
                    1 + rng.below(500),
                )
            })
            .collect();
        let got = aggregate(&ups)?;
        let total: f64 = ups.iter().map(|u| u.claimed_size as f64).sum();
        for (c, g) in got.iter().enumerate() {
            let brute: f64 = ups
                .iter()
                .map(|u| u.claimed_size as f64 * u.values[c])
                .sum::<f64>()
                / total;
            worst = worst.max((g - brute).abs() / brute.abs().max(1.0));
        }
    }
    report.push(
        "numerics",
        "fedsim",
        "aggregate vs size-weighted brute force",
        worst,
        AGGREGATION_TOL,
    );
    Ok(())
}

/// `‖g − g_fd‖ / max(‖g‖, ‖g_fd‖, 1e-8)` with central differences.
fn fd_error(x: &[f64], grad: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
    let mut num = 0.0;
    let mut na = 0.0;
    let mut nf = 0.0;
    let mut probe = x.to_vec();
    for k in 0..x.len() {
        probe[k] = x[k] + FD_STEP;
        let up = f(&probe)?;
        probe[k] = x[k] - FD_STEP;
        let dn = f(&probe)?;
        probe[k] = x[k];
        let fd = (up - dn) / (2.0 * FD_STEP);
        num += (fd - grad[k]).powi(2);
        na += grad[k].powi(2);
        nf += fd * fd;
    }
    Ok(num.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-8))
}

fn small_model(rng: &mut SeededRng) -> Result<SurrogateModel> {
    let lora = LoraSpec {
        rank: 2,
        alpha: 4.0,
        dropout: 0.0,
        scaling: LoraScaling::AlphaOverR,
        a_init_std: None,
    };
    SurrogateModel::new(&[6, 8, 4], lora, rng)
}

fn flatten_factors(f: &LoraFactors) -> Vec<f64> {
    f.a.iter()
        .chain(&f.b)
        .flat_map(|m| m.as_slice().to_vec())
        .collect()
}

fn unflatten_factors(template: &LoraFactors, x: &[f64]) -> LoraFactors {
    let mut out = template.clone();
    let mut at = 0;
    for m in out.a.iter_mut().chain(out.b.iter_mut()) {
        let n = m.as_slice().len();
        m.as_mut_slice().copy_from_slice(&x[at..at + n]);
        at += n;
    }
    out
}

fn gradients(report: &mut VerifyReport) -> Result<()> {
    let mut rng = SeededRng::new(23);
    let model = small_model(&mut rng)?;
    let ds = synth_dataset(4, 6, 10, 2.0, &mut rng)?;
    let len = model.layout().total_len();

    let params: Vec<f64> = (0..len).map(|_| 0.3 * rng.normal()).collect();
    let (_, g) = model.loss_grad_params(&params, &ds)?;
    let err = fd_error(&params, &g, |p| Ok(model.loss_grad_params(p, &ds)?.0))?;
    report.push(
        "gradients",
        "fedsim",
        "local loss wrt adapter delta (FD h=1e-5)",
        err,
        FD_TOL,
    );

    let mut factors = LoraFactors::init(&model, &mut rng);
    for b in &mut factors.b {
        b.as_mut_slice()
            .iter_mut()
            .for_each(|v| *v = 0.2 * rng.normal());
    }
    let masks: Vec<Vec<f64>> = model
        .layout()
        .layers
        .iter()
        .map(|s| {
            (0..s.out)
                .map(|i| if i % 3 == 2 { 0.0 } else { 1.25 })
                .collect()
        })
        .collect();
    let base = model.frozen().to_vec();
    let (_, gf) = lora_loss_grad(&model, &base, &factors, Some(&masks), &ds)?;
    let x = flatten_factors(&factors);
    let err = fd_error(&x, &flatten_factors(&gf), |p| {
        Ok(lora_loss_grad(
            &model,
            &base,
            &unflatten_factors(&factors, p),
            Some(&masks),
            &ds,
        )?
        .0)
    })?;
    report.push(
        "gradients",
        "fedsim",
        "local loss wrt LoRA factors A, B (FD h=1e-5)",
        err,
        FD_TOL,
    );

    let m = 7;
    let a = random_adjacency(m, &mut rng);
    let target = soft_targets(&a);
    let p = normalize_adjacency(&a)?;
    let feats = Matrix::from_fn(m, 4, |_, _| rng.normal());
    let params = VgaeParams::init(4, 5, 3, &mut rng);
    let eps = Matrix::from_fn(m, 3, |_, _| rng.normal());
    let pack = |v: &VgaeParams| -> Vec<f64> {
        [&v.w1, &v.w_mu, &v.w_sigma]
            .iter()
            .flat_map(|m| m.as_slice().to_vec())
            .collect()
    };
    let unpack = |x: &[f64]| -> VgaeParams {
        let mut out = params.clone();
        let mut at = 0;
        for m in [&mut out.w1, &mut out.w_mu, &mut out.w_sigma] {
            let n = m.as_slice().len();
            m.as_mut_slice().copy_from_slice(&x[at..at + n]);
            at += n;
        }
        out
    };
    let mut worst: f64 = 0.0;
    for noise in [None, Some(&eps)] {
        let (_, g) = elbo_and_grad(&feats, &p, &target, &params, noise)?;
        let e = fd_error(&pack(&params), &pack(&g), |x| {
            Ok(elbo_and_grad(&feats, &p, &target, &unpack(x), noise)?.0)
        })?;
        worst = worst.max(e);
    }
    report.push(
        "gradients",
        "vgae",
        "ELBO wrt encoder weights (FD h=1e-5)",
        worst,
        FD_TOL,
    );

    let holdout = synth_dataset(4, 6, 8, 2.0, &mut rng)?;
    let surrogate = ModelSurrogate {
        model: &model,
        data: &holdout,
    };
    let global: Vec<f64> = (0..len).map(|_| 0.2 * rng.normal()).collect();
    let observed: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..len).map(|_| 0.1 * rng.normal()).collect())
        .collect();
    let fill: Vec<f64> = (0..len).map(|_| 0.05 * rng.normal()).collect();
    let selected: Vec<usize> = (0..len).filter(|i| i % 4 != 1).collect();
    let mut dual = DualState::new(3.0, 2.0, 0.05)?;
    dual.lambda = 0.6;
    dual.theta = 0.3;
    dual.thresholds = Thresholds {
        distance: 0.2,
        similarity: 0.05,
    };
    let mut worst: f64 = 0.0;
    for (reference, similarity, penalty) in [
        (
            DistanceReference::PredictedGlobal,
            SimilarityAggregate::default(),
            PenaltyForm::Squared,
        ),
        (
            DistanceReference::Fixed(observed[0].clone()),
            SimilarityAggregate::Mean,
            PenaltyForm::Hinge,
        ),
    ] {
        let problem = AttackProblem {
            global: &global,
            server_lr: 1.0,
            observed: observed.iter().map(|u| (u.as_slice(), 20.0)).collect(),
            own_size: 20.0,
            selected: &selected,
            fill: &fill,
            reference,
            similarity,
            penalty,
            surrogate: &surrogate,
        };
        problem.validate()?;
        let x: Vec<f64> = (0..problem.dim()).map(|_| 0.1 * rng.normal()).collect();
        let e = problem.evaluate(&x, &dual)?;
        worst = worst.max(fd_error(&x, &e.grad, |p| {
            Ok(problem.evaluate(p, &dual)?.value)
        })?);
    }
    report.push(
        "gradients",
        "manipulator",
        "augmented Lagrangian wrt selected coords (FD h=1e-5)",
        worst,
        FD_TOL,
    );
    Ok(())
}

fn spectral(report: &mut VerifyReport) -> Result<()> {
    let mut rng = SeededRng::new(37);
    let mut trip: f64 = 0.0;
    let mut sym: f64 = 0.0;
    let mut rows: f64 = 0.0;
    let mut psd: f64 = 0.0;
    for m in [3, 8, 20] {
        let a = random_adjacency(m, &mut rng);
        let f = Matrix::from_fn(5, m, |_, _| rng.normal());
        let back = transform(&f, &a, &a)?;
        trip = trip.max(back.sub(&f)?.frobenius_norm());
        let l = laplacian(&a)?;
        sym = sym.max(l.max_asymmetry());
        rows = rows.max(
            l.row_sums()
                .iter()
                .fold(0.0, |acc: f64, v| acc.max(v.abs())),
        );
        let basis = gft_basis(&l)?;
        let lowest = basis
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        psd = psd.max((-lowest).max(0.0)).max(lowest.abs());
    }
    report.push(
        "gst",
        "gst",
        "round trip ‖F̂−F‖_F when Â = A",
        trip,
        ROUND_TRIP_TOL,
    );
    report.push("gst", "gst", "Laplacian symmetry max|L−Lᵀ|", sym, 1e-12);
    report.push("gst", "gst", "Laplacian row sums max|L·1|", rows, 1e-12);
    report.push(
        "gst",
        "gst",
        "Laplacian smallest eigenvalue |λ_min|",
        psd,
        1e-10,
    );
    Ok(())
}

fn duals(report: &mut VerifyReport) -> Result<()> {
    let mut rng = SeededRng::new(41);
    let mut violations = 0usize;
    for _ in 0..DUAL_SEQUENCES {
        let mut d = DualState::new(
            10.0 * rng.uniform(),
            10.0 * rng.uniform(),
            0.01 + rng.uniform(),
        )?;
        d.lambda = 2.0 * rng.uniform();
        d.theta = 2.0 * rng.uniform();
        for _ in 0..20 {
            d.thresholds = Thresholds {
                distance: 3.0 * rng.uniform(),
                similarity: 2.0 * rng.uniform() - 1.0,
            };
            d = dual_update(&d, 3.0 * rng.uniform(), 2.0 * rng.uniform() - 1.0);
            if !(d.lambda >= 0.0 && d.theta >= 0.0) {
                violations += 1;
            }
        }
    }
    report.push(
        "duals",
        "manipulator",
        format!("λ, θ ≥ 0 over {DUAL_SEQUENCES} random sequences (violations)"),
        violations as f64,
        0.0,
    );
    Ok(())
}

/// A short attacked run small enough for a self-check.
pub fn determinism_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed: 7,
        rounds: 3,
        attack: AttackKind::Augmp,
        ..ExperimentConfig::default()
    };
    cfg.data.per_class = 60;
    cfg.data.test_per_class = 40;
    cfg.augmp.nodes = 32;
    cfg.augmp.steps = 20;
    cfg.vgae.epochs = 5;
    cfg
}

fn determinism(report: &mut VerifyReport) -> Result<()> {
    let cfg = determinism_config();
    let a = run_experiment(&cfg)?;
    let b = run_experiment(&cfg)?;
    let csv_equal = metrics_csv(&a)? == metrics_csv(&b)?;
    let mut sa = summarize(&a);
    let mut sb = summarize(&b);
    sa.wall_time_seconds = 0.0;
    sb.wall_time_seconds = 0.0;
    let ja = serde_json::to_string(&sa).map_err(|e| Error::Io(e.to_string()))?;
    let jb = serde_json::to_string(&sb).map_err(|e| Error::Io(e.to_string()))?;
    report.push(
        "determinism",
        "harness",
        "metrics.csv identical across two runs (mismatch)",
        (!csv_equal) as u8 as f64,
        0.0,
    );
    report.push(
        "determinism",
        "harness",
        "summary.json identical except wall time (mismatch)",
        (ja != jb) as u8 as f64,
        0.0,
    );
    Ok(())
}
