//! Property tests for the structural invariants that must hold on every
//! input, not just the worked examples.

use proptest::prelude::*;
use udll::graph::{project_to_simplex, solve_column, DistanceColumn};
use udll::metrics::{clustering_accuracy, LabelVector};
use udll::spectral::{normalized_laplacian, postprocess_affinity, ClusterOptions};
use udll::tensor::Tensor;

fn distance_column(max_n: usize) -> impl Strategy<Value = (DistanceColumn, usize)> {
    (4..=max_n).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.001f64..100.0, n),
            0..n,
            1..=(n - 2).min(6),
        )
            .prop_map(move |(mut values, source, k)| {
                values[source] = 0.0;
                (
                    DistanceColumn {
                        values,
                        source_index: source,
                    },
                    k,
                )
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn solved_columns_live_on_the_simplex((col, k) in distance_column(40)) {
        let sol = solve_column(&col, k).unwrap();
        let sum: f64 = sol.entries.iter().map(|&(_, w)| w).sum();
        prop_assert!((sum - 1.0).abs() < 1e-12, "column sum {sum}");
        prop_assert!(sol.entries.iter().all(|&(_, w)| w >= 0.0));
        prop_assert!(sol.entries.iter().all(|&(i, _)| i != col.source_index));
        prop_assert!(sol.entries.len() <= k);
        if !sol.degenerate {
            // nearer neighbors never receive smaller weight
            let mut by_dist: Vec<(f64, f64)> = sol
                .entries
                .iter()
                .map(|&(i, w)| (col.values[i], w))
                .collect();
            by_dist.sort_by(|a, b| a.0.total_cmp(&b.0));
            for pair in by_dist.windows(2) {
                prop_assert!(pair[0].1 >= pair[1].1);
            }
        }
    }

    #[test]
    fn simplex_projection_outputs_lie_on_the_simplex(
        v in proptest::collection::vec(-10.0f64..10.0, 1..30)
    ) {
        let p = project_to_simplex(&v);
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        // projecting a point already on the simplex is the identity
        let again = project_to_simplex(&p);
        for (a, b) in p.iter().zip(&again) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn postprocessed_affinities_are_symmetric_nonnegative_zero_diagonal(
        entries in proptest::collection::vec(-5.0f64..5.0, 16),
        q in 0usize..5
    ) {
        let w = Tensor::from_vec(&[4, 4], entries).unwrap();
        // all off-diagonal mass can cancel to zero; rejecting is the contract
        if let Ok(aff) =
            postprocess_affinity(&w, ClusterOptions { top_q: q, ..ClusterOptions::default() })
        {
            let m = &aff.matrix;
            for i in 0..4 {
                prop_assert_eq!(m.get2(i, i), 0.0);
                for j in 0..4 {
                    prop_assert!(m.get2(i, j) >= 0.0);
                    prop_assert_eq!(m.get2(i, j), m.get2(j, i));
                }
            }
            prop_assert!((m.max_abs() - 1.0).abs() < 1e-12);
            // the Laplacian built from it stays in spectral range
            let (l, _) = normalized_laplacian(m).unwrap();
            for i in 0..4 {
                for j in 0..4 {
                    prop_assert!((l.get2(i, j) - l.get2(j, i)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn accuracy_is_invariant_under_label_renaming(
        labels in proptest::collection::vec(0usize..4, 4..40),
        perm_seed in 0usize..24
    ) {
        let truth: Vec<usize> = labels.iter().map(|&l| (l + 1) % 4).collect();
        let t = LabelVector::new(truth, 4).unwrap();
        let p = LabelVector::new(labels.clone(), 4).unwrap();
        let base = clustering_accuracy(&t, &p).unwrap().acc;
        prop_assert!((0.0..=1.0).contains(&base));

        // apply one of the 24 permutations of 4 names
        let perms = [
            [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
            [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
            [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
            [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
        ];
        let perm = perms[perm_seed];
        let renamed: Vec<usize> = labels.iter().map(|&l| perm[l]).collect();
        let renamed = LabelVector::new(renamed, 4).unwrap();
        let acc = clustering_accuracy(&t, &renamed).unwrap().acc;
        prop_assert!((acc - base).abs() < 1e-12);
    }

    #[test]
    fn self_accuracy_is_always_one(labels in proptest::collection::vec(0usize..5, 1..30)) {
        let t = LabelVector::from_labels(labels);
        let rep = clustering_accuracy(&t, &t).unwrap();
        prop_assert_eq!(rep.acc, 1.0);
    }
}
