//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned
//! below. Runs without the libtest harness so the lines are always printed.
//!
//! Criterion 6 is reported but not gating (see `GATING`); set
//! `FEDMANIP_STRICT_ACCEPTANCE=1` to gate on every criterion.

use std::process::ExitCode;
use std::time::Instant;

use fedmanip::baselines::{ShiftDirection, ZPolicy};
use fedmanip::harness::metrics::{metrics_csv, stealth_pass};
use fedmanip::harness::{
    run_experiment, verify, write_outputs, AttackKind, ExperimentConfig, RoundRecord, RunOutcome,
};
use fedmanip::mathcore::percentile_nearest_rank;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const MIN_SEEDS: usize = 4;

const BENIGN_MIN_ACCURACY: f64 = 0.90;
const BENIGN_MAX_SECONDS: f64 = 60.0;
const GLOBAL_DROP: f64 = 0.10;
const LOCAL_DROP: f64 = 0.05;
const STEALTH_RATE: f64 = 0.95;
const RMP_SCALE: f64 = 3.0;
const RMP_MIN_FLAGGED: f64 = 0.80;
const ALIE_Z: f64 = 1.5;
const ALIE_MIN_FLAGGED: f64 = 0.50;
const AUGMP_MAX_FLAGGED: f64 = 0.10;
const SIMILARITY_PERCENTILE: f64 = 95.0;
const VERIFY_MAX_SECONDS: f64 = 300.0;
const ATYPICAL_RATE: f64 = 0.50;

/// Criteria whose failure fails the target.
const GATING: [usize; 6] = [1, 2, 3, 4, 5, 7];

struct Line {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn config(seed: u64, attack: AttackKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        seed,
        attack,
        ..ExperimentConfig::default()
    };
    cfg.rmp.scale = RMP_SCALE;
    cfg.alie.z_policy = ZPolicy::Fixed { z: ALIE_Z };
    // The shift that raises similarity: the contrast the screen is meant to catch.
    cfg.alie.direction = ShiftDirection::WithMean;
    cfg
}

fn run(cfg: &ExperimentConfig) -> RunOutcome {
    run_experiment(cfg).unwrap_or_else(|e| panic!("run failed for seed {}: {e}", cfg.seed))
}

fn share(flags: impl Iterator<Item = bool>) -> f64 {
    let v: Vec<bool> = flags.collect();
    v.iter().filter(|&&b| b).count() as f64 / v.len().max(1) as f64
}

/// A malicious update lies beyond the largest same-round benign distance to
/// the filter's reference.
fn distance_oracle(r: &RoundRecord) -> bool {
    let dist = |i: usize| r.distance_verdict.agents[i].metric;
    let benign_max = (0..r.submissions.len())
        .filter(|&i| !r.submissions[i].is_malicious)
        .map(dist)
        .fold(f64::NEG_INFINITY, f64::max);
    (0..r.submissions.len()).any(|i| r.submissions[i].is_malicious && dist(i) > benign_max)
}

/// A malicious similarity score lies above the 95th percentile of the
/// same-round benign scores.
fn similarity_oracle(r: &RoundRecord) -> bool {
    let score = |i: usize| r.similarity_verdict.agents[i].metric;
    let benign: Vec<f64> = (0..r.submissions.len())
        .filter(|&i| !r.submissions[i].is_malicious)
        .map(score)
        .collect();
    let th = percentile_nearest_rank(&benign, SIMILARITY_PERCENTILE).expect("benign scores");
    (0..r.submissions.len()).any(|i| r.submissions[i].is_malicious && score(i) > th)
}

/// Mean malicious distance below the benign minimum, or mean malicious score
/// above the benign maximum.
fn atypical(r: &RoundRecord) -> bool {
    let split = |metric: &dyn Fn(usize) -> f64| {
        let (mut b, mut m) = (Vec::new(), Vec::new());
        for (i, u) in r.submissions.iter().enumerate() {
            if u.is_malicious { &mut m } else { &mut b }.push(metric(i));
        }
        (b, m)
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (bd, md) = split(&|i| r.distance_verdict.agents[i].metric);
    let (bs, ms) = split(&|i| r.similarity_verdict.agents[i].metric);
    mean(&md) < bd.iter().copied().fold(f64::INFINITY, f64::min)
        || mean(&ms) > bs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn stealth_rate(o: &RunOutcome) -> f64 {
    share(o.rounds.iter().filter_map(stealth_pass))
}

fn identical_outputs(cfg: &ExperimentConfig) -> (bool, bool) {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        write_outputs(&run(cfg), d.path()).unwrap();
    }
    let read = |d: &tempfile::TempDir, f: &str| std::fs::read_to_string(d.path().join(f)).unwrap();
    let without_wall = |s: String| -> String {
        s.lines()
            .filter(|l| !l.contains("\"wall_time_seconds\""))
            .collect()
    };
    (
        read(&dirs[0], "metrics.csv") == read(&dirs[1], "metrics.csv"),
        without_wall(read(&dirs[0], "summary.json"))
            == without_wall(read(&dirs[1], "summary.json")),
    )
}

fn main() -> ExitCode {
    let strict = std::env::var("FEDMANIP_STRICT_ACCEPTANCE").is_ok_and(|v| v == "1");
    let mut lines = Vec::new();

    let benign: Vec<RunOutcome> = SEEDS
        .iter()
        .map(|&s| run(&config(s, AttackKind::None)))
        .collect();
    let augmp: Vec<RunOutcome> = SEEDS
        .iter()
        .map(|&s| run(&config(s, AttackKind::Augmp)))
        .collect();

    let b1 = &benign[0];
    lines.push(Line {
        id: 1,
        name: "benign convergence",
        passed: b1.final_accuracy() >= BENIGN_MIN_ACCURACY && b1.wall_time_seconds <= BENIGN_MAX_SECONDS,
        detail: format!(
            "final accuracy {:.4} (>= {BENIGN_MIN_ACCURACY}), wall {:.2}s (<= {BENIGN_MAX_SECONDS}s)",
            b1.final_accuracy(),
            b1.wall_time_seconds
        ),
    });

    let mut held = 0;
    let mut per_seed = Vec::new();
    for (b, a) in benign.iter().zip(&augmp) {
        let g = b.final_accuracy() - a.final_accuracy();
        let l = b.final_local_accuracy() - a.final_local_accuracy();
        held += (g >= GLOBAL_DROP && l >= LOCAL_DROP) as usize;
        per_seed.push(format!("s{} -{:.3}/-{:.3}", b.config.seed, g, l));
    }
    lines.push(Line {
        id: 2,
        name: "augmp degradation",
        passed: held >= MIN_SEEDS,
        detail: format!(
            "{held}/5 seeds with global drop >= {GLOBAL_DROP} and local drop >= {LOCAL_DROP} [{}]",
            per_seed.join(", ")
        ),
    });

    let rates: Vec<f64> = augmp.iter().map(stealth_rate).collect();
    lines.push(Line {
        id: 3,
        name: "stealth constraints",
        passed: rates[0] >= STEALTH_RATE,
        detail: format!(
            "seed 1 pass rate {:.3} (>= {STEALTH_RATE}); all seeds [{}]",
            rates[0],
            rates
                .iter()
                .map(|r| format!("{r:.2}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    });

    let mut held = 0;
    let mut per_seed = Vec::new();
    for (&seed, a) in SEEDS.iter().zip(&augmp) {
        let rmp = run(&config(seed, AttackKind::Rmp));
        let alie = run(&config(seed, AttackKind::Alie));
        let rmp_d = share(rmp.rounds.iter().map(distance_oracle));
        let aug_d = share(a.rounds.iter().map(distance_oracle));
        let alie_s = share(alie.rounds.iter().map(similarity_oracle));
        let aug_s = share(a.rounds.iter().map(similarity_oracle));
        let ok = rmp_d >= RMP_MIN_FLAGGED
            && aug_d <= AUGMP_MAX_FLAGGED
            && alie_s >= ALIE_MIN_FLAGGED
            && aug_s <= AUGMP_MAX_FLAGGED;
        held += ok as usize;
        per_seed.push(format!(
            "s{seed} rmp {rmp_d:.2} aug {aug_d:.2} | alie {alie_s:.2} aug {aug_s:.2}"
        ));
    }
    lines.push(Line {
        id: 4,
        name: "defense contrast",
        passed: held >= MIN_SEEDS,
        detail: format!(
            "{held}/5 seeds (distance: rmp >= {RMP_MIN_FLAGGED}, augmp <= {AUGMP_MAX_FLAGGED}; similarity: alie >= {ALIE_MIN_FLAGGED}, augmp <= {AUGMP_MAX_FLAGGED}) [{}]",
            per_seed.join("; ")
        ),
    });

    let start = Instant::now();
    let report = verify("all").expect("verify runs");
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<String> = report
        .failures()
        .map(|c| format!("{}/{}", c.module, c.operation))
        .collect();
    lines.push(Line {
        id: 5,
        name: "numerical invariants",
        passed: report.passed() && secs <= VERIFY_MAX_SECONDS,
        detail: format!(
            "{} checks, {} failed {:?}, {secs:.2}s (<= {VERIFY_MAX_SECONDS}s)",
            report.checks.len(),
            failed.len(),
            failed
        ),
    });

    let full = &augmp[0];
    let mut grl = config(1, AttackKind::Augmp);
    grl.augmp.grl_off = true;
    let mut al = config(1, AttackKind::Augmp);
    al.augmp.al_penalty_off = true;
    let grl = run(&grl);
    let al = run(&al);
    let complete = [full, &grl, &al]
        .iter()
        .all(|o| o.rounds.len() == o.config.rounds);
    let atyp = share(grl.rounds.iter().map(atypical));
    let (sf, sg) = (stealth_rate(full), stealth_rate(&grl));
    lines.push(Line {
        id: 6,
        name: "ablation structure",
        passed: complete && atyp >= ATYPICAL_RATE && sf > sg,
        detail: format!(
            "complete {complete}; grl_off atypical rounds {atyp:.2} (>= {ATYPICAL_RATE}); stealth full {sf:.2} vs grl_off {sg:.2} (strictly greater); al_penalty_off stealth {:.2}; final accuracy full {:.3} grl_off {:.3} al_penalty_off {:.3}",
            stealth_rate(&al),
            full.final_accuracy(),
            grl.final_accuracy(),
            al.final_accuracy()
        ),
    });

    let mut short = config(3, AttackKind::Augmp);
    short.rounds = 10;
    let checks = [
        identical_outputs(&config(1, AttackKind::None)),
        identical_outputs(&short),
    ];
    let csv_in_memory = metrics_csv(&augmp[0]).unwrap()
        == metrics_csv(&run(&config(1, AttackKind::Augmp))).unwrap();
    lines.push(Line {
        id: 7,
        name: "determinism",
        passed: checks.iter().all(|&(c, j)| c && j) && csv_in_memory,
        detail: format!(
            "benign csv/json {:?}, 10-round augmp csv/json {:?}, 50-round augmp csv {csv_in_memory}",
            checks[0], checks[1]
        ),
    });

    let mut ok = true;
    for l in &lines {
        let gating = strict || GATING.contains(&l.id);
        println!(
            "criterion {} {:<22} {}{}  {}",
            l.id,
            l.name,
            if l.passed { "PASS" } else { "FAIL" },
            if gating {
                ""
            } else {
                " (reported, not gating)"
            },
            l.detail
        );
        ok &= l.passed || !gating;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
