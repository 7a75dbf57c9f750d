//! Dense symmetric eigen-solvers shared by both decomposition stages.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenvalues below this fraction of the largest are treated as zero.
pub const ZERO_EIGENVALUE_TOLERANCE: f64 = 1e-12;

/// Eigenpairs sorted by descending eigenvalue. Column `i` of `vectors`
/// belongs to `values[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

/// Largest absolute asymmetry `max |A - A^T|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Flips `v` so that its entry of largest magnitude is positive.
/// Ties go to the lowest index.
pub fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v.get(best).is_some_and(|&x| x < 0.0) {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

/// Full eigen-decomposition of a symmetric matrix, descending, with the
/// sign convention applied to every eigenvector. Eigenvalues are returned
/// as computed; callers decide how to clamp.
pub fn symmetric_eigen(a: &DMatrix<f64>) -> EigenPairs {
    let n = a.nrows();
    if n == 0 {
        return EigenPairs {
            values: Vec::new(),
            vectors: DMatrix::zeros(0, 0),
        };
    }
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    let mut values = Vec::with_capacity(n);
    for (col, &i) in order.iter().enumerate() {
        values.push(eig.eigenvalues[i]);
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        fix_sign(&mut v);
        vectors.set_column(col, &DVector::from_vec(v));
    }
    EigenPairs { values, vectors }
}

/// Zeroes eigenvalues that are negative or below the relative zero threshold.
pub fn clamp_spectrum(values: &mut [f64]) {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    for v in values.iter_mut() {
        if *v <= ZERO_EIGENVALUE_TOLERANCE * top {
            *v = 0.0;
        }
    }
}

/// Number of leading eigenvalues that are strictly positive after clamping.
pub fn nonzero_count(values: &[f64]) -> usize {
    values.iter().take_while(|&&v| v > 0.0).count()
}

/// Smallest `M` whose leading eigenvalues hold at least `threshold` of the
/// total. Only eigenvalues above the zero threshold are counted, so a
/// threshold of 1 returns the number of nonzero eigenvalues.
pub fn energy_truncation(values: &[f64], threshold: f64) -> usize {
    let top = values.first().copied().unwrap_or(0.0);
    let positive: Vec<f64> = values
        .iter()
        .copied()
        .take_while(|&v| v > ZERO_EIGENVALUE_TOLERANCE * top && v > 0.0)
        .collect();
    let total: f64 = positive.iter().sum();
    if total <= 0.0 {
        return 0;
    }
    let mut cum = 0.0;
    for (i, v) in positive.iter().enumerate() {
        cum += v;
        if cum / total >= threshold - 1e-12 {
            return i + 1;
        }
    }
    positive.len()
}

/// Cumulative energy fractions of a spectrum.
pub fn cumulative_fractions(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    let mut cum = 0.0;
    values
        .iter()
        .map(|v| {
            cum += v.max(0.0);
            if total > 0.0 {
                cum / total
            } else {
                0.0
            }
        })
        .collect()
}

/// Solves the symmetric-definite generalized problem `A d = B d lambda`
/// through a Cholesky factor of `B`. Eigenvectors are `B`-orthonormal.
/// Returns `None` when `B` is not numerically positive definite.
pub fn generalized_symmetric_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<EigenPairs> {
    let chol = b.clone().cholesky()?;
    let l = chol.l();
    let scale = b.diagonal().max();
    let pivot = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(pivot > 1e-12 * scale) {
        return None;
    }
    let l_inv = l.clone().try_inverse()?;
    let reduced = &l_inv * a * l_inv.transpose();
    let eig = symmetric_eigen(&reduced);
    let mut vectors = l_inv.transpose() * eig.vectors;
    for mut col in vectors.column_iter_mut() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        fix_sign(&mut v);
        col.copy_from_slice(&v);
    }
    Some(EigenPairs {
        values: eig.values,
        vectors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_convention() {
        let mut v = vec![0.1, -0.9, 0.3];
        fix_sign(&mut v);
        assert_eq!(v, vec![-0.1, 0.9, -0.3]);
        let mut tie = vec![-0.5, 0.5];
        fix_sign(&mut tie);
        assert_eq!(tie, vec![0.5, -0.5]);
    }

    #[test]
    fn descending_order() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0, 0.0, 2.0]);
        let e = symmetric_eigen(&a);
        assert_eq!(e.values.len(), 3);
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[2] - 1.0).abs() < 1e-14);
        assert!((e.vectors[(1, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn truncation_cases() {
        assert_eq!(energy_truncation(&[9.0, 1.0], 0.9), 1);
        assert_eq!(energy_truncation(&[9.0, 1.0, 0.0], 1.0), 2);
        assert_eq!(energy_truncation(&[94.0, 6.0], 0.94), 1);
        for len in 1..12 {
            let flat = vec![1.0; len];
            for f in [0.1, 0.25, 0.3, 0.5, 0.75, 0.9, 1.0] {
                let expected = ((f * len as f64) - 1e-9).ceil().max(1.0) as usize;
                assert_eq!(energy_truncation(&flat, f), expected, "len {len} f {f}");
            }
        }
        assert_eq!(energy_truncation(&[0.0, 0.0], 0.9), 0);
    }

    #[test]
    fn generalized_reduces_to_standard_with_identity() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let b = DMatrix::identity(2, 2);
        let g = generalized_symmetric_eigen(&a, &b).unwrap();
        let s = symmetric_eigen(&a);
        for i in 0..2 {
            assert!((g.values[i] - s.values[i]).abs() < 1e-12);
        }
        assert!((g.vectors.clone() - s.vectors).abs().max() < 1e-12);
        let singular = DMatrix::zeros(2, 2);
        assert!(generalized_symmetric_eigen(&a, &singular).is_none());
    }
}
