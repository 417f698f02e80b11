//! Dense complex products through a blocked kernel; nalgebra's generic
//! complex path is several times slower at the block sizes used here.

use matrixmultiply::{zgemm, CGemmOption};

use crate::hermitian::CMatrix;

/// `a * b`
pub(crate) fn mul(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (m, k) = a.shape();
    assert_eq!(k, b.nrows(), "inner dimensions differ");
    let n = b.ncols();
    let mut c = CMatrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // SAFETY: Complex<f64> is repr(C) with layout [f64; 2], nalgebra storage
    // is contiguous column-major, and `c` does not alias `a` or `b`.
    unsafe {
        zgemm(
            CGemmOption::Standard,
            CGemmOption::Standard,
            m,
            k,
            n,
            [1.0, 0.0],
            a.as_ptr() as *const [f64; 2],
            1,
            m as isize,
            b.as_ptr() as *const [f64; 2],
            1,
            k as isize,
            [0.0, 0.0],
            c.as_mut_ptr() as *mut [f64; 2],
            1,
            m as isize,
        );
    }
    c
}

/// `a^H * b`
pub(crate) fn mul_adj(a: &CMatrix, b: &CMatrix) -> CMatrix {
    mul(&a.adjoint(), b)
}

/// `a * b^H`
pub(crate) fn mul_by_adj(a: &CMatrix, b: &CMatrix) -> CMatrix {
    mul(a, &b.adjoint())
}

/// `u^H y u`
pub(crate) fn congruence_adj(u: &CMatrix, y: &CMatrix) -> CMatrix {
    mul_adj(u, &mul(y, u))
}

/// `u y u^H`
pub(crate) fn congruence(u: &CMatrix, y: &CMatrix) -> CMatrix {
    mul_by_adj(&mul(u, y), u)
}
