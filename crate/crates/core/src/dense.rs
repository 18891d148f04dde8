//! Thin helpers over nalgebra's dense factorizations.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub(crate) type CMatrix = DMatrix<Complex64>;
pub(crate) type CVector = DVector<Complex64>;

/// LU factorization of a complex matrix that refuses singular or
/// non-finite systems.
#[derive(Clone, Debug)]
pub(crate) struct ComplexLu {
    lu: nalgebra::linalg::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl ComplexLu {
    pub(crate) fn new(m: CMatrix) -> Option<Self> {
        let lu = m.lu();
        if !lu.is_invertible() {
            return None;
        }
        // a zero pivot is caught above; tiny pivots show up as non-finite solves
        Some(Self { lu })
    }

    pub(crate) fn solve(&self, b: &CVector) -> Option<CVector> {
        let x = self.lu.solve(b)?;
        if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            Some(x)
        } else {
            None
        }
    }
}

pub(crate) fn solve_real(a: DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let x = a.lu().solve(b)?;
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}
