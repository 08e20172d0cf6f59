//! Basis changes and permutation folding.
//!
//! An accepted permutation never runs as a separate operator at inference
//! time. The weight side is materialized offline as `P^T W`; the activation
//! side is absorbed into whatever produces the layer input: the columns of a
//! preceding linear, or the per-channel parameters of a preceding norm.

mod hadamard;
mod norm;

pub use hadamard::{
    fwht, hadamard_cols, hadamard_layer, hadamard_rows, hadamard_then_reorder,
    select_permutation_hadamard, HadamardConfig,
};
pub use norm::{
    fold_perm_into_norm, layernorm_apply, rmsnorm_apply, Modulation, NormKind, NormSpec,
    DEFAULT_EPS,
};

use crate::error::Result;
use crate::matrix::Matrix;
use crate::perm::{apply_perm_cols, apply_perm_rows, Permutation};

/// Permutes the output columns of the preceding linear so that it emits
/// channels already in permuted order: `W_prev P`.
pub fn fold_perm_into_prev_linear(w_prev: &Matrix, perm: &Permutation) -> Result<Matrix> {
    apply_perm_cols(w_prev, perm)
}

/// Offline weight-side permutation `P^T W`.
pub fn fold_perm_into_weight(w: &Matrix, perm: &Permutation) -> Result<Matrix> {
    apply_perm_rows(w, perm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::matmul;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn prev_linear_identity_and_swap() {
        let w = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(fold_perm_into_prev_linear(&w, &Permutation::identity(2)).unwrap(), w);
        let swap = Permutation::new(vec![1, 0]).unwrap();
        assert_eq!(
            fold_perm_into_prev_linear(&w, &swap).unwrap().data(),
            &[2.0, 1.0, 4.0, 3.0]
        );
        assert!(fold_perm_into_prev_linear(&w, &Permutation::identity(3)).is_err());
    }

    #[test]
    fn two_layer_function_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Matrix::from_fn(7, 5, |_, _| rng.random_range(-1.0..1.0));
        let w_prev = Matrix::from_fn(5, 12, |_, _| rng.random_range(-1.0..1.0));
        let w = Matrix::from_fn(12, 4, |_, _| rng.random_range(-1.0..1.0));
        let perm = Permutation::random(12, &mut rng);
        let original = matmul(&matmul(&x, &w_prev).unwrap(), &w).unwrap();
        let folded = matmul(
            &matmul(&x, &fold_perm_into_prev_linear(&w_prev, &perm).unwrap()).unwrap(),
            &fold_perm_into_weight(&w, &perm).unwrap(),
        )
        .unwrap();
        assert!(folded.max_abs_diff(&original) <= 1e-10);
    }

    #[test]
    fn norm_then_linear_is_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let d = 16;
        let gamma: Vec<f64> = (0..d).map(|_| rng.random_range(0.5..2.0)).collect();
        let spec = NormSpec::rmsnorm(gamma, DEFAULT_EPS).unwrap();
        let w = Matrix::from_fn(d, 3, |_, _| rng.random_range(-1.0..1.0));
        let perm = Permutation::random(d, &mut rng);
        let folded_norm = fold_perm_into_norm(&spec, &perm).unwrap();
        let folded_w = fold_perm_into_weight(&w, &perm).unwrap();
        for _ in 0..10 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-4.0..4.0)).collect();
            let y = Matrix::new(1, d, spec.apply(&x).unwrap()).unwrap();
            let y_folded =
                Matrix::new(1, d, folded_norm.apply(&perm.apply(&x).unwrap()).unwrap()).unwrap();
            let a = matmul(&y, &w).unwrap();
            let b = matmul(&y_folded, &folded_w).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-10);
        }
    }
}
