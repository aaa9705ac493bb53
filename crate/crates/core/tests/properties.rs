//! Property tests for the structural invariants of each module.

use fedmanip::fedsim::{
    aggregate, apply_global, dirichlet_partition, synth_dataset, GlobalState, UpdateVector,
};
use fedmanip::graphcraft::build_graph;
use fedmanip::gst::{gft_basis, laplacian, spectral_coeffs};
use fedmanip::manipulator::{dual_update, estimate_thresholds, DualState, Thresholds};
use fedmanip::mathcore::{cosine, percentile_nearest_rank, sym_eig, Matrix, SeededRng};
use fedmanip::sentinel::{distance_filter, similarity_filter, ScorePolicy};
use fedmanip::vgae::normalize_adjacency;
use proptest::prelude::*;

fn symmetric(n: usize, seed: u64) -> Matrix {
    let mut rng = SeededRng::new(seed);
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

fn updates(k: usize, len: usize, seed: u64) -> Vec<UpdateVector> {
    let mut rng = SeededRng::new(seed);
    (0..k)
        .map(|i| {
            UpdateVector::benign(
                (0..len).map(|_| rng.normal()).collect(),
                i,
                1,
                1 + rng.below(100),
            )
        })
        .collect()
}

fn frob(m: &Matrix) -> f64 {
    m.frobenius_norm()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eigen_reconstructs_with_orthonormal_gauge_fixed_basis(n in 1usize..24, seed in any::<u64>()) {
        let s = symmetric(n, seed);
        let e = sym_eig(&s).unwrap();
        prop_assert!(e.reconstruction_residual(&s) <= 1e-8 * frob(&s).max(1e-300));
        prop_assert!(e.orthonormality_error() <= 1e-10);
        prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        for k in 0..n {
            let col = e.eigenvectors.column(k);
            let big = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            prop_assert!(big >= 0.0);
        }
        prop_assert_eq!(sym_eig(&s).unwrap(), e);
    }

    #[test]
    fn rng_children_ignore_sibling_order(seed in any::<u64>(), burn in 0usize..50) {
        let root = SeededRng::new(seed);
        let mut a = root.split("a");
        let direct: Vec<f64> = (0..5).map(|_| a.normal()).collect();
        let mut b = root.split("b");
        for _ in 0..burn {
            b.normal();
        }
        let mut again = root.split("a");
        let later: Vec<f64> = (0..5).map(|_| again.normal()).collect();
        prop_assert_eq!(direct, later);
    }

    #[test]
    fn aggregation_is_a_permutation_invariant_weighted_mean(k in 1usize..9, len in 1usize..20, seed in any::<u64>()) {
        let ups = updates(k, len, seed);
        let agg = aggregate(&ups).unwrap();
        let mut rev = ups.clone();
        rev.reverse();
        prop_assert_eq!(&aggregate(&rev).unwrap(), &agg);
        let total: f64 = ups.iter().map(|u| u.claimed_size as f64).sum();
        for (c, g) in agg.iter().enumerate() {
            let brute = ups.iter().map(|u| u.claimed_size as f64 * u.values[c]).sum::<f64>() / total;
            prop_assert!((g - brute).abs() <= 1e-12 * brute.abs().max(1.0));
        }
    }

    #[test]
    fn global_step_is_exact(len in 1usize..30, eta in 0.1f64..2.0, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let mut g = GlobalState::zeros(len, eta);
        g.params = (0..len).map(|_| rng.normal()).collect();
        let delta: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        let next = apply_global(&g, &delta, eta).unwrap();
        for i in 0..len {
            prop_assert_eq!(next.params[i], g.params[i] + eta * delta[i]);
        }
    }

    #[test]
    fn partition_covers_every_sample_once(agents in 2usize..8, beta in 0.05f64..5.0, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let ds = synth_dataset(4, 6, 30, 3.0, &mut rng).unwrap();
        let parts = dirichlet_partition(&ds, agents, beta, &mut rng).unwrap();
        prop_assert_eq!(parts.len(), agents);
        prop_assert_eq!(parts.iter().map(|p| p.len()).sum::<usize>(), ds.len());
        let mut hist = vec![0usize; 4];
        for p in &parts {
            prop_assert!(!p.is_empty());
            for (c, n) in p.class_histogram().into_iter().enumerate() {
                hist[c] += n;
            }
        }
        prop_assert_eq!(hist, ds.class_histogram());
    }

    #[test]
    fn correlation_graph_is_a_signed_similarity(b in 2usize..7, m in 2usize..12, seed in any::<u64>()) {
        let ups = updates(b, m + 3, seed);
        let selected: Vec<usize> = (0..m).collect();
        let g = build_graph(&ups, &selected).unwrap();
        let a = &g.adjacency;
        prop_assert_eq!(a.shape(), (m, m));
        prop_assert!(a.max_asymmetry() == 0.0);
        for i in 0..m {
            prop_assert_eq!(a[(i, i)], 0.0);
            for j in 0..m {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&a[(i, j)]));
            }
        }
    }

    #[test]
    fn laplacian_spectrum_and_transform_norm(m in 2usize..16, seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        let mut a = Matrix::zeros(m, m);
        for i in 0..m {
            for j in (i + 1)..m {
                let v = rng.uniform();
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        let l = laplacian(&a).unwrap();
        prop_assert!(l.row_sums().iter().all(|r| r.abs() <= 1e-9));
        let basis = gft_basis(&l).unwrap();
        prop_assert!(basis.eigenvalues[0] >= -1e-9);
        let f = Matrix::from_vec(3, m, (0..3 * m).map(|_| rng.normal()).collect()).unwrap();
        let s = spectral_coeffs(&f, &basis).unwrap();
        prop_assert!((frob(&s) - frob(&f)).abs() <= 1e-9 * frob(&f).max(1.0));

        let p = normalize_adjacency(&a).unwrap();
        prop_assert!(p.0.max_asymmetry() <= 1e-15);
        prop_assert!(p.0.all_finite());
    }

    #[test]
    fn duals_stay_nonnegative(steps in proptest::collection::vec((0.0f64..5.0, -1.0f64..1.0, 0.0f64..5.0, -1.0f64..1.0), 1..40), eps in 0.001f64..2.0) {
        let mut d = DualState::new(10.0, 10.0, eps).unwrap();
        for (dt, st, dj, sim) in steps {
            d.thresholds = Thresholds { distance: dt, similarity: st };
            d = dual_update(&d, dj, sim);
            prop_assert!(d.lambda >= 0.0 && d.theta >= 0.0);
            prop_assert!(d.rho_lambda > 0.0 && d.rho_theta > 0.0);
        }
    }

    #[test]
    fn cosine_and_percentile_are_bounded(len in 1usize..20, q in 0.0f64..100.0, seed in any::<u64>()) {
        let ups = updates(6, len, seed);
        let c = cosine(&ups[0].values, &ups[1].values).unwrap();
        prop_assert!((-1.0..=1.0).contains(&c));
        let vals: Vec<f64> = ups.iter().map(|u| u.values[0]).collect();
        let p = percentile_nearest_rank(&vals, q).unwrap();
        prop_assert!(vals.contains(&p));
    }

    #[test]
    fn filters_flag_strictly_above_and_commute_with_order(k in 2usize..8, len in 2usize..12, seed in any::<u64>()) {
        let ups = updates(k, len, seed);
        let refs: Vec<&[f64]> = ups.iter().map(|u| u.values.as_slice()).collect();
        let reference = vec![0.0; len];
        let th = estimate_thresholds(&refs, &reference, 0.0, 50.0).unwrap();
        let d = distance_filter(&ups, &reference, th.distance).unwrap();
        prop_assert_eq!(d.verdict.agents.len(), k);
        for a in &d.verdict.agents {
            prop_assert_eq!(a.flagged, a.metric > a.threshold);
            prop_assert!(a.metric >= 0.0);
        }
        // κ = 0 places the threshold at the largest benign distance
        prop_assert!(d.verdict.agents.iter().all(|a| !a.flagged));

        let s = similarity_filter(&ups, th.similarity, ScorePolicy::Mean).unwrap();
        let mut rev = ups.clone();
        rev.reverse();
        let sr = similarity_filter(&rev, th.similarity, ScorePolicy::Mean).unwrap();
        for a in &s.verdict.agents {
            prop_assert!((-1.0..=1.0).contains(&a.metric));
            prop_assert_eq!(a.flagged, a.metric > a.threshold);
            let twin = sr.verdict.agents.iter().find(|b| b.agent_id == a.agent_id).unwrap();
            prop_assert!((twin.metric - a.metric).abs() <= 1e-12);
            prop_assert_eq!(twin.flagged, a.flagged);
        }
    }
}
