mod common;

use blocksparse::bcsc::grid_dim;
use blocksparse::footprint::{gpu_calc, FootprintQuery, MlpShare};
use blocksparse::{bspmm, generate_masks, BlockSparseMatrix, Matrix, SparsitySchedule};
use common::*;
use proptest::prelude::*;

fn matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = Matrix> {
    (0..=max_rows, 0..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-100.0f32..100.0, r * c).prop_map(move |v| Matrix::from_vec(r, c, v).unwrap())
    })
}

fn sparse_matrix() -> impl Strategy<Value = (Matrix, usize)> {
    (matrix(24, 24), 1usize..=6, prop::collection::vec(any::<bool>(), 576)).prop_map(|(m, b, keep)| {
        let gc = grid_dim(m.cols(), b);
        let w = Matrix::from_fn(m.rows(), m.cols(), |r, c| if keep[(r / b) * gc + c / b] { m.get(r, c) } else { 0.0 });
        (w, b)
    })
}

proptest! {
    #[test]
    fn bytes_roundtrip_is_lossless((w, b) in sparse_matrix()) {
        let packed = BlockSparseMatrix::from_dense(&w, b, None).unwrap();
        let bytes = packed.to_bytes();
        prop_assert_eq!(bytes.len(), packed.serialized_len());
        let back = BlockSparseMatrix::from_bytes(&bytes).unwrap();
        prop_assert!(back.to_dense().bit_eq(&w));
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_bytes_are_rejected((w, b) in sparse_matrix(), cut in 1usize..64) {
        let bytes = BlockSparseMatrix::from_dense(&w, b, None).unwrap().to_bytes();
        let cut = cut.min(bytes.len());
        prop_assert!(BlockSparseMatrix::from_bytes(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn transpose_twice_is_identity((w, b) in sparse_matrix()) {
        let p = BlockSparseMatrix::from_dense(&w, b, None).unwrap();
        prop_assert!(p.transpose().to_dense().bit_eq(&w.transpose()));
        prop_assert_eq!(p.transpose().transpose(), p);
    }

    #[test]
    fn bspmm_matches_dense_product((w, b) in sparse_matrix(), m in 0usize..12, seed in any::<u64>()) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let x = random_matrix(m, w.rows(), 4.0, &mut rng);
        let y = bspmm(&x, &BlockSparseMatrix::from_dense(&w, b, None).unwrap()).unwrap();
        let (x64, w64) = (M64::from_f32(&x), M64::from_f32(&w));
        let err = max_scaled_err(&y, &matmul(&x64, &w64), &matmul(&x64.abs(), &w64.abs()));
        prop_assert!(err <= 1e-5, "error {}", err);
    }

    #[test]
    fn masks_are_disjoint_and_sized(
        w in matrix(20, 20),
        g_seed in any::<u64>(),
        b in 1usize..=5,
        s in 0.0f64..=1.0,
    ) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(g_seed);
        let g = random_matrix(w.rows(), w.cols(), 1.0, &mut rng);
        let (mask, report) = generate_masks(&w, &g, b, s).unwrap();
        let total = grid_dim(w.rows(), b) * grid_dim(w.cols(), b);
        let k = ((1.0 - s) * total as f64).round() as usize;
        prop_assert_eq!(mask.kept().count(), k);
        prop_assert!(mask.regrown().count() <= k);
        for (a, r) in mask.kept().cells().iter().zip(mask.regrown().cells()) {
            prop_assert!(!(a & r));
        }
        prop_assert_eq!(report.kept, k);
        // Achieved sparsity lies between the pruned target and the target minus regrowth.
        if total > 0 {
            let achieved = mask.block_sparsity();
            prop_assert!(achieved <= 1.0 - k as f64 / total as f64 + 1e-12);
            prop_assert!(achieved >= 1.0 - 2.0 * k as f64 / total as f64 - 1e-12);
        }
    }

    #[test]
    fn identical_weight_and_gradient_never_regrow(w in matrix(16, 16), b in 1usize..=4, s in 0.0f64..=1.0) {
        let (mask, report) = generate_masks(&w, &w, b, s).unwrap();
        prop_assert_eq!(report.regrown, 0);
        prop_assert_eq!(mask.regrown().count(), 0);
    }

    #[test]
    fn schedule_is_monotone_and_bounded(
        s_max in 0.0f64..=1.0,
        frac in 0.0f64..=1.0,
        m in 1usize..5000,
        dfrac in 0.0f64..1.0,
    ) {
        let s_init = s_max * frac;
        let d = ((m as f64) * dfrac) as usize;
        let sched = SparsitySchedule::new(s_init, s_max, m, d.min(m - 1), 1).unwrap();
        let mut last = sched.target_sparsity(0).unwrap();
        prop_assert_eq!(last, s_init);
        for i in 1..=m {
            let s = sched.target_sparsity(i).unwrap();
            prop_assert!(s >= last && s <= s_max, "s({}) = {}", i, s);
            last = s;
        }
        prop_assert_eq!(last, s_max);
    }

    #[test]
    fn footprint_is_monotone(params in 1e6f64..1e13, frac in 0.0f64..=1.0, s1 in 0.0f64..=1.0, s2 in 0.0f64..=1.0) {
        let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
        let a = gpu_calc(&FootprintQuery::new(params, MlpShare::Fraction(frac), lo)).unwrap();
        let b = gpu_calc(&FootprintQuery::new(params, MlpShare::Fraction(frac), hi)).unwrap();
        prop_assert!(b.sparse_bytes <= a.sparse_bytes);
        prop_assert!(b.sparse_gpus <= a.sparse_gpus);
        prop_assert!(b.reduction >= a.reduction);
        prop_assert!(a.reduction >= 1.0);
    }
}
