//! Small dense helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::scalar::{lit, Real};

pub fn inf_norm<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

/// Max absolute row sum.
pub fn mat_inf_norm<T: Real>(m: &DMatrix<T>) -> T {
    (0..m.nrows()).fold(T::zero(), |acc, i| {
        acc.max(m.row(i).iter().fold(T::zero(), |s, x| s + x.abs()))
    })
}

pub fn block_diag<T: Real>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut(a.shape(), b.shape()).copy_from(b);
    out
}

pub fn vstack<T: Real>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    let mut out = DVector::zeros(a.len() + b.len());
    out.rows_mut(0, a.len()).copy_from(a);
    out.rows_mut(a.len(), b.len()).copy_from(b);
    out
}

/// Positive definiteness via Cholesky, rejecting pivots below `min_pivot`.
pub fn is_positive_definite<T: Real>(m: &DMatrix<T>, min_pivot: T) -> bool {
    if !m.is_square() || m.nrows() == 0 {
        return false;
    }
    let sym = (m + m.transpose()) * lit::<T>(0.5);
    if (&sym - m).amax() > lit::<T>(1e-9) * (T::one() + m.amax()) {
        return false;
    }
    match Cholesky::new(sym) {
        Some(ch) => {
            let l = ch.l_dirty();
            (0..l.nrows()).all(|i| l[(i, i)] * l[(i, i)] > min_pivot)
        }
        None => false,
    }
}

/// Inverse of a symmetric positive definite matrix.
pub fn spd_inverse<T: Real>(m: &DMatrix<T>) -> Option<DMatrix<T>> {
    Cholesky::new(m.clone()).map(|c| c.inverse())
}

/// Symmetric factorization used for the indefinite pivot blocks of the KKT sweep.
///
/// The block is first equilibrated as `D M D` (symmetric Ruiz scaling), which
/// leaves the inertia unchanged, and then eigendecomposed.
#[derive(Debug, Clone)]
pub struct SymFactor<T: Real> {
    scale: DVector<T>,
    vectors: DMatrix<T>,
    inv_values: DVector<T>,
    pub positive: usize,
    pub negative: usize,
}

fn ruiz_scaling<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    let n = m.nrows();
    let mut d = DVector::from_element(n, T::one());
    for _ in 0..8 {
        let mut done = true;
        for i in 0..n {
            let mut row_max = T::zero();
            for j in 0..n {
                row_max = row_max.max((d[i] * m[(i, j)] * d[j]).abs());
            }
            if row_max > T::zero() {
                let f = T::one() / row_max.sqrt();
                if (f - T::one()).abs() > lit(0.1) {
                    done = false;
                }
                d[i] *= f;
            }
        }
        if done {
            break;
        }
    }
    d
}

impl<T: Real> SymFactor<T> {
    /// Returns `None` when a scaled eigenvalue is below `rel_tol` relative to the largest.
    pub fn new(m: &DMatrix<T>, rel_tol: T) -> Option<Self> {
        let n = m.nrows();
        if n == 0 {
            return Some(Self {
                scale: DVector::zeros(0),
                vectors: DMatrix::zeros(0, 0),
                inv_values: DVector::zeros(0),
                positive: 0,
                negative: 0,
            });
        }
        if m.iter().any(|x| !x.is_finite()) {
            return None;
        }
        let sym = (m + m.transpose()) * lit::<T>(0.5);
        let scale = ruiz_scaling(&sym);
        let scaled = DMatrix::from_fn(n, n, |i, j| scale[i] * sym[(i, j)] * scale[j]);
        let eig = SymmetricEigen::new(scaled);
        let largest = eig.eigenvalues.amax();
        if !largest.is_finite() || largest == T::zero() {
            return None;
        }
        let mut positive = 0;
        let mut negative = 0;
        let mut inv_values = DVector::zeros(n);
        for (i, &ev) in eig.eigenvalues.iter().enumerate() {
            if ev.abs() <= rel_tol * largest {
                return None;
            }
            if ev > T::zero() {
                positive += 1;
            } else {
                negative += 1;
            }
            inv_values[i] = T::one() / ev;
        }
        Some(Self {
            scale,
            vectors: eig.eigenvectors,
            inv_values,
            positive,
            negative,
        })
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn solve_vec(&self, b: &DVector<T>) -> DVector<T> {
        let mut t = self.vectors.tr_mul(&b.component_mul(&self.scale));
        t.component_mul_assign(&self.inv_values);
        (&self.vectors * t).component_mul(&self.scale)
    }

    pub fn solve_mat(&self, b: &DMatrix<T>) -> DMatrix<T> {
        let mut sb = b.clone();
        for (i, mut row) in sb.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        let mut t = self.vectors.tr_mul(&sb);
        for (i, mut row) in t.row_iter_mut().enumerate() {
            row *= self.inv_values[i];
        }
        let mut out = &self.vectors * t;
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row *= self.scale[i];
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    #[test]
    fn kkt_block_inertia_and_solve() {
        let m = dmatrix![2.0, 0.0, 1.0; 0.0, 1e-6, -1.0; 1.0, -1.0, 0.0];
        let f = SymFactor::new(&m, 1e-14).unwrap();
        assert_eq!((f.positive, f.negative), (2, 1));
        let b = dvector![1.0, 2.0, 3.0];
        let x = f.solve_vec(&b);
        assert!((&m * &x - &b).amax() < 1e-10);
        let xm = f.solve_mat(&DMatrix::from_column_slice(3, 1, b.as_slice()));
        assert!((xm.column(0) - x).amax() < 1e-12);
    }

    #[test]
    fn badly_scaled_block_is_not_flagged_singular() {
        let m = dmatrix![1e12, 1.0; 1.0, -1e-12];
        let f = SymFactor::new(&m, 1e-14).unwrap();
        assert_eq!((f.positive, f.negative), (1, 1));
        let x = f.solve_vec(&dvector![1.0, 0.0]);
        assert!((&m * x - dvector![1.0, 0.0]).amax() < 1e-9);
    }

    #[test]
    fn singular_block_is_rejected() {
        assert!(SymFactor::new(&dmatrix![1.0, 1.0; 1.0, 1.0], 1e-12).is_none());
    }

    #[test]
    fn positive_definite_checks() {
        assert!(is_positive_definite(&dmatrix![2.0, 1.0; 1.0, 2.0], 1e-10));
        assert!(!is_positive_definite(&dmatrix![1.0, 2.0; 2.0, 1.0], 1e-10));
        assert!(!is_positive_definite(&dmatrix![1.0, 1.0; 0.0, 1.0], 1e-10));
        assert_eq!(mat_inf_norm(&dmatrix![1.0, -2.0; 0.5, 0.5]), 3.0);
    }
}
