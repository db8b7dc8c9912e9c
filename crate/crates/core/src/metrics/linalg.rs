//! Symmetric eigen-based matrix square root.

use nalgebra::{DMatrix, RealField, SymmetricEigen};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scalars usable with the symmetric eigensolver.
pub trait LinalgScalar: Scalar + RealField {}

impl<T: Scalar + RealField> LinalgScalar for T {}

const SYMMETRY_TOL: f64 = 1e-8;
const MAX_SWEEPS: usize = 10_000;

fn square_dim<T: Scalar>(a: &Tensor<T>) -> Result<usize> {
    match *a.shape() {
        [n, m] if n == m => Ok(n),
        _ => Err(Error::Shape(format!("expected a square matrix, got {:?}", a.shape()))),
    }
}

pub(crate) fn to_matrix<T: LinalgScalar>(a: &Tensor<T>) -> Result<DMatrix<T>> {
    let n = square_dim(a)?;
    Ok(DMatrix::from_row_slice(n, n, a.data()))
}

pub(crate) fn from_matrix<T: LinalgScalar>(m: &DMatrix<T>) -> Tensor<T> {
    let (r, c) = m.shape();
    Tensor::from_fn(&[r, c], |i| m[(i / c, i % c)])
}

fn check_symmetric<T: LinalgScalar>(a: &Tensor<T>, n: usize) -> Result<()> {
    let d = a.data();
    let scale = d
        .iter()
        .map(|&v| Float::abs(v).as_f64())
        .fold(1.0f64, f64::max);
    for i in 0..n {
        for j in i + 1..n {
            let gap = Float::abs(d[i * n + j] - d[j * n + i]).as_f64();
            if gap > SYMMETRY_TOL * scale {
                return Err(Error::Contract(format!(
                    "matrix not symmetric: |a[{i},{j}] - a[{j},{i}]| = {gap:e}"
                )));
            }
        }
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, negative ones clamped to zero.
pub fn spd_eigenvalues<T: LinalgScalar>(a: &Tensor<T>) -> Result<Vec<T>> {
    let n = square_dim(a)?;
    check_symmetric(a, n)?;
    let eig = SymmetricEigen::try_new(to_matrix(a)?, T::default_epsilon(), MAX_SWEEPS)
        .ok_or_else(non_convergence)?;
    Ok(eig
        .eigenvalues
        .iter()
        .map(|&l| Float::max(l, T::zero()))
        .collect())
}

fn non_convergence() -> Error {
    Error::Numeric(
        "symmetric eigensolver did not converge; retry with 1e-6 * I added to the covariances".into(),
    )
}

/// Principal square root of a symmetric positive semidefinite matrix.
///
/// Computed as `V·diag(sqrt(λ))·Vᵀ` with eigenvalues below `n·ε·λ_max`
/// treated as zero, so rank-deficient inputs do not pick up `sqrt(ε)` noise
/// along their null space. The result is exactly symmetric.
pub fn sqrtm_spd<T: LinalgScalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let n = square_dim(a)?;
    check_symmetric(a, n)?;
    let eig = SymmetricEigen::try_new(to_matrix(a)?, T::default_epsilon(), MAX_SWEEPS)
        .ok_or_else(non_convergence)?;
    let v = &eig.eigenvectors;
    let top = eig.eigenvalues.iter().fold(T::zero(), |m, &l| Float::max(m, l));
    let cutoff = top * T::default_epsilon() * <T as Scalar>::lit(n as f64);
    let roots: Vec<T> = eig
        .eigenvalues
        .iter()
        .map(|&l| if l > cutoff { Float::sqrt(l) } else { T::zero() })
        .collect();
    let mut scaled = v.clone();
    for (j, &r) in roots.iter().enumerate() {
        scaled.column_mut(j).scale_mut(r);
    }
    let s = &scaled * v.transpose();
    let half = <T as Scalar>::lit(0.5);
    let sym = (&s + s.transpose()) * half;
    Ok(from_matrix(&sym))
}

/// `(a + aᵀ) / 2`.
pub fn symmetrize<T: LinalgScalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let m = to_matrix(a)?;
    let half = <T as Scalar>::lit(0.5);
    Ok(from_matrix(&((&m + m.transpose()) * half)))
}

pub fn trace<T: Scalar>(a: &Tensor<T>) -> Result<T> {
    let n = square_dim(a)?;
    Ok((0..n).map(|i| a.data()[i * n + i]).sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_diagonal() {
        let i = Tensor::<f64>::eye(5);
        assert!(sqrtm_spd(&i).unwrap().max_abs_diff(&i) < 1e-15);
        let d = Tensor::new(vec![2, 2], vec![4.0, 0.0, 0.0, 9.0]).unwrap();
        let s = sqrtm_spd(&d).unwrap();
        let want = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 3.0]).unwrap();
        assert!(s.max_abs_diff(&want) < 1e-12, "{s:?}");
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(sqrtm_spd(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn clamps_negative_eigenvalues() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, -1e-12]).unwrap();
        let s = sqrtm_spd(&a).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-15 && s.data()[3] == 0.0);
    }

    #[test]
    fn works_in_f32() {
        let d = Tensor::new(vec![2, 2], vec![4.0f32, 0.0, 0.0, 9.0]).unwrap();
        let s = sqrtm_spd(&d).unwrap();
        assert!((s.data()[0] - 2.0).abs() < 1e-6 && (s.data()[3] - 3.0).abs() < 1e-6);
    }
}
