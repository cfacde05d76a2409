//! Dense re-factorization oracles for the factored-form operations.
//!
//! Every factored update is checked against assembling the modified
//! covariance densely and re-factorizing (or against the Gram matrix
//! for QR). The oracle path never reuses the incremental update code.

use gpssm::linalg::{
    chol_delete_block, chol_downdate_cols, chol_insert_block, chol_update_cols, cholesky, thin_qr,
    LowerTriangular,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn random_spd(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let mut s = &a * a.transpose();
    for i in 0..n {
        s[(i, i)] += 0.5 + rng.random_range(0.0..1.0);
    }
    s
}

fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn assert_lower_with_positive_diag(l: &LowerTriangular) {
    let m = l.matrix();
    for j in 0..m.ncols() {
        assert!(m[(j, j)] > 0.0, "nonpositive diagonal at {j}");
        for i in 0..j {
            assert_eq!(m[(i, j)], 0.0, "upper triangle leak at ({i},{j})");
        }
    }
}

#[test]
fn cholesky_reconstructs_random_spd_8x8() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for _ in 0..20 {
        let s = random_spd(&mut rng, 8);
        let l = cholesky(&s).unwrap();
        assert!(rel_frob(&l.reconstruct(), &s) <= 1e-12);
    }
}

#[test]
fn update_matches_dense_refactorization() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for _ in 0..50 {
        let s = random_spd(&mut rng, 6);
        let l = cholesky(&s).unwrap();
        let v = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let up = chol_update_cols(&l, &v);
        let dense = &s + &v * v.transpose();
        let oracle = cholesky(&dense).unwrap();
        assert!(rel_frob(up.matrix(), oracle.matrix()) <= 1e-10);
        assert_lower_with_positive_diag(&up);
    }
}

#[test]
fn downdate_matches_dense_refactorization() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for _ in 0..50 {
        let s = random_spd(&mut rng, 6);
        // Build a valid downdate by first adding the same columns densely.
        let v = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
        let bigger = &s + &v * v.transpose();
        let l = cholesky(&bigger).unwrap();
        let down = chol_downdate_cols(&l, &v).unwrap();
        let oracle = cholesky(&s).unwrap();
        assert!(rel_frob(down.matrix(), oracle.matrix()) <= 1e-10);
        assert_lower_with_positive_diag(&down);
    }
}

#[test]
fn insert_block_matches_dense_assembly() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    for _ in 0..50 {
        // Draw the augmented 9x9 covariance first, then carve out the
        // 7x7 minor, factor it, and re-insert the missing 2-wide block.
        let full = random_spd(&mut rng, 9);
        let at = rng.random_range(0..=7usize);
        let keep: Vec<usize> = (0..9).filter(|&i| i < at || i >= at + 2).collect();
        let minor = full.select_rows(keep.iter()).select_columns(keep.iter());
        let l = cholesky(&minor).unwrap();

        let block_idx = [at, at + 1];
        let sigma1 = DMatrix::from_fn(at, 2, |i, j| full[(keep[i], block_idx[j])]);
        let sigma = DMatrix::from_fn(2, 2, |i, j| full[(block_idx[i], block_idx[j])]);
        let sigma2 = DMatrix::from_fn(7 - at, 2, |i, j| full[(keep[at + i], block_idx[j])]);

        let inserted = chol_insert_block(&l, at, &sigma1, &sigma, &sigma2).unwrap();
        let oracle = cholesky(&full).unwrap();
        assert!(rel_frob(inserted.matrix(), oracle.matrix()) <= 1e-10);
        assert_lower_with_positive_diag(&inserted);
    }
}

#[test]
fn delete_block_matches_dense_minor() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    for _ in 0..50 {
        let s = random_spd(&mut rng, 8);
        let l = cholesky(&s).unwrap();
        // Scattered, non-contiguous deletion set.
        let rows = [1usize, 4, 6];
        let keep: Vec<usize> = (0..8).filter(|i| !rows.contains(i)).collect();
        let deleted = chol_delete_block(&l, &rows);
        let minor = s.select_rows(keep.iter()).select_columns(keep.iter());
        let oracle = cholesky(&minor).unwrap();
        assert!(rel_frob(deleted.matrix(), oracle.matrix()) <= 1e-10);
        assert_lower_with_positive_diag(&deleted);
    }
}

#[test]
fn insert_then_delete_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(46);
    for _ in 0..50 {
        let s = random_spd(&mut rng, 7);
        let l = cholesky(&s).unwrap();
        let at = rng.random_range(0..=7usize);
        let sigma1 = DMatrix::from_fn(at, 1, |_, _| rng.random_range(-0.3..0.3));
        let sigma2 = DMatrix::from_fn(7 - at, 1, |_, _| rng.random_range(-0.3..0.3));
        let sigma = DMatrix::from_element(1, 1, 2.0);
        let inserted = chol_insert_block(&l, at, &sigma1, &sigma, &sigma2).unwrap();
        let back = chol_delete_block(&inserted, &[at]);
        assert!(rel_frob(back.matrix(), l.matrix()) <= 1e-10);
    }
}

#[test]
fn thin_qr_gram_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    for _ in 0..50 {
        let m = DMatrix::from_fn(12, 4, |_, _| rng.random_range(-2.0..2.0));
        let r = thin_qr(&m);
        assert!(rel_frob(&(r.transpose() * &r), &(m.transpose() * &m)) <= 1e-12);
        for i in 0..4 {
            assert!(r[(i, i)] >= 0.0);
            for j in 0..i {
                assert_eq!(r[(i, j)], 0.0);
            }
        }
    }
}

/// 200 random SPD matrices, random op sequences, dense shadow compare.
#[test]
fn two_hundred_random_spd_mixed_ops_match_dense_shadow() {
    let mut rng = ChaCha8Rng::seed_from_u64(48);
    for case in 0..200 {
        let n0 = rng.random_range(1..=20usize);
        let mut dense = random_spd(&mut rng, n0);
        let mut factored = cholesky(&dense).unwrap();

        for _ in 0..6 {
            let n = dense.nrows();
            match rng.random_range(0..4u8) {
                0 => {
                    let v = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
                    factored = chol_update_cols(&factored, &v);
                    dense = &dense + &v * v.transpose();
                }
                1 => {
                    // Downdate by a safely small multiple of a random direction.
                    let v = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-0.1..0.1));
                    if let Ok(f) = chol_downdate_cols(&factored, &v) {
                        factored = f;
                        dense = &dense - &v * v.transpose();
                    }
                }
                2 => {
                    let at = rng.random_range(0..=n);
                    let sigma1 = DMatrix::from_fn(at, 1, |_, _| rng.random_range(-0.2..0.2));
                    let sigma2 =
                        DMatrix::from_fn(n - at, 1, |_, _| rng.random_range(-0.2..0.2));
                    let sigma = DMatrix::from_element(1, 1, 1.0 + rng.random_range(0.0..1.0));
                    factored = chol_insert_block(&factored, at, &sigma1, &sigma, &sigma2).unwrap();
                    let mut grown = DMatrix::zeros(n + 1, n + 1);
                    for i in 0..n {
                        let gi = if i < at { i } else { i + 1 };
                        for j in 0..n {
                            let gj = if j < at { j } else { j + 1 };
                            grown[(gi, gj)] = dense[(i, j)];
                        }
                        grown[(gi, at)] = if i < at { sigma1[(i, 0)] } else { sigma2[(i - at, 0)] };
                        grown[(at, gi)] = grown[(gi, at)];
                    }
                    grown[(at, at)] = sigma[(0, 0)];
                    dense = grown;
                }
                _ => {
                    if n > 1 {
                        let d = rng.random_range(0..n);
                        factored = chol_delete_block(&factored, &[d]);
                        let keep: Vec<usize> = (0..n).filter(|&i| i != d).collect();
                        dense = dense.select_rows(keep.iter()).select_columns(keep.iter());
                    }
                }
            }
        }
        let rel = rel_frob(&factored.reconstruct(), &dense);
        assert!(rel <= 1e-10, "case {case}: relative error {rel:.3e}");
        assert_lower_with_positive_diag(&factored);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_cholesky_reconstructs(seed in 0u64..10_000, n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_spd(&mut rng, n);
        let l = cholesky(&s).unwrap();
        prop_assert!(rel_frob(&l.reconstruct(), &s) <= 1e-12);
    }

    #[test]
    fn prop_update_downdate_round_trip(seed in 0u64..10_000, n in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_spd(&mut rng, n);
        let l = cholesky(&s).unwrap();
        let v = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let up = gpssm::linalg::chol_update(&l, &v);
        let back = gpssm::linalg::chol_downdate(&up, &v).unwrap();
        prop_assert!(rel_frob(back.matrix(), l.matrix()) <= 1e-10);
    }

    #[test]
    fn prop_qr_gram(seed in 0u64..10_000, rows in 4usize..16, cols in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-2.0..2.0));
        let r = thin_qr(&m);
        prop_assert!(rel_frob(&(r.transpose() * &r), &(m.transpose() * &m)) <= 1e-11);
    }
}
