//! Property tests for the numeric primitives: SVD contracts on random
//! matrices, cosine bounds, spectrum-entropy bounds, and rank-correlation
//! invariances.

use proptest::prelude::*;

use intruder_core::checkpoint::Checkpoint;
use intruder_core::tensor::{effective_rank, max_abs_cosine, spearman, svd, Matrix, SeededRng};

fn orthonormality_defect(m: &Matrix) -> f64 {
    // columns: M^T M - I
    let gram = m.matmul_tn(m);
    let mut defect = 0.0f64;
    for i in 0..gram.rows() {
        for j in 0..gram.cols() {
            let expect = if i == j { 1.0 } else { 0.0 };
            defect = defect.max((gram.get(i, j) - expect).abs());
        }
    }
    defect
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_contract_holds_on_random_matrices(
        seed in 0u64..10_000,
        rows in 1usize..24,
        cols in 1usize..24,
        scale in 0.01f64..100.0,
    ) {
        let mut rng = SeededRng::new(seed);
        let m = rng.normal_matrix(rows, cols, scale);
        let s = svd(&m).unwrap();

        // ordering, non-negativity
        prop_assert!(s.values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(s.values.iter().all(|v| *v >= 0.0));

        // orthonormality of left columns and right rows
        prop_assert!(orthonormality_defect(&s.left) <= 1e-8);
        prop_assert!(orthonormality_defect(&s.right_t.transpose()) <= 1e-8);

        // reconstruction
        let err = s.reconstruct().sub(&m).frobenius_norm() / m.frobenius_norm().max(1e-300);
        prop_assert!(err <= 1e-10, "reconstruction error {}", err);

        // determinism
        let s2 = svd(&m).unwrap();
        prop_assert_eq!(s.left, s2.left);
        prop_assert_eq!(s.values, s2.values);
    }

    #[test]
    fn max_cosine_of_unit_vectors_against_full_bases_is_bounded_below(
        seed in 0u64..10_000,
        n in 2usize..32,
    ) {
        let mut rng = SeededRng::new(seed);
        // an orthonormal basis spanning R^n, from the SVD of a random matrix
        let basis = svd(&rng.normal_matrix(n, n, 1.0)).unwrap().left;
        let v = rng.unit_vector(n);
        let (value, _) = max_abs_cosine(&v, &basis).unwrap();
        prop_assert!(value >= 1.0 / (n as f64).sqrt() - 1e-12);
        prop_assert!(value <= 1.0);
    }

    #[test]
    fn effective_rank_counts_equal_values_and_never_exceeds_support(
        positives in proptest::collection::vec(0.01f64..100.0, 1..12),
        zeros in 0usize..4,
    ) {
        let mut values = positives.clone();
        values.extend(std::iter::repeat(0.0).take(zeros));
        let er = effective_rank(&values).unwrap();
        prop_assert!(er >= 1.0 - 1e-12);
        prop_assert!(er <= positives.len() as f64 + 1e-9);

        let uniform = vec![positives[0]; positives.len()];
        let er_uniform = effective_rank(&uniform).unwrap();
        prop_assert!((er_uniform - positives.len() as f64).abs() <= 1e-9);
    }

    #[test]
    fn spearman_is_invariant_under_strictly_increasing_transforms(
        xs in proptest::collection::vec(-50.0f64..50.0, 4..12),
        ys in proptest::collection::vec(-50.0f64..50.0, 4..12),
    ) {
        let n = xs.len().min(ys.len());
        let xs = &xs[..n];
        let ys = &ys[..n];
        if let Ok(rho) = spearman(xs, ys) {
            let warped_x: Vec<f64> = xs.iter().map(|x| x.exp().mul_add(2.0, x * 3.0)).collect();
            let warped_y: Vec<f64> = ys.iter().map(|y| y * 5.0 + 1.0).collect();
            let rho_warped = spearman(&warped_x, &warped_y).unwrap();
            prop_assert!((rho - rho_warped).abs() <= 1e-12);
            prop_assert!((-1.0..=1.0).contains(&rho));
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_identity(
        seed in 0u64..10_000,
        rows in 1usize..8,
        cols in 1usize..8,
        tensors in 1usize..4,
    ) {
        let mut rng = SeededRng::new(seed);
        let mut ckpt = Checkpoint::new();
        for t in 0..tensors {
            ckpt.insert(format!("t{t}"), rng.normal_matrix(rows, cols, 3.0)).unwrap();
        }
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("ckpt");
        ckpt.save(&stem).unwrap();
        let loaded = Checkpoint::load(&stem).unwrap();
        prop_assert_eq!(loaded, ckpt);
    }
}
