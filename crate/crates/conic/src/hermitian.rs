//! Dense and sparse Hermitian matrix helpers shared by the modeling layer and
//! the solver.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::ConicError;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_residual(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for c in 0..m.ncols() {
        for r in 0..n.min(c + 1) {
            worst = worst.max((m[(r, c)] - m[(c, r)].conj()).norm());
        }
    }
    worst
}

/// Replaces `m` by `(m + m^H) / 2`.
pub fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for c in 0..n {
        m[(c, c)] = C64::new(m[(c, c)].re, 0.0);
        for r in 0..c {
            let avg = (m[(r, c)] + m[(c, r)].conj()) * 0.5;
            m[(r, c)] = avg;
            m[(c, r)] = avg.conj();
        }
    }
}

pub fn hermitized(m: &CMatrix) -> CMatrix {
    let mut out = m.clone();
    hermitize(&mut out);
    out
}

/// Real part of `tr(a b)`.
pub fn re_trace_product(a: &CMatrix, b: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut acc = 0.0;
    for r in 0..n {
        for c in 0..a.ncols() {
            let x = a[(r, c)];
            let y = b[(c, r)];
            acc += x.re * y.re - x.im * y.im;
        }
    }
    acc
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut ev: Vec<f64> = hermitized(m).symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    eigenvalues(m)[0]
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted in
/// descending order. Returned eigenvectors are unit-norm columns.
pub fn eigh_desc(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = hermitized(m).symmetric_eigen();
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Real symmetric embedding `[[Re H, -Im H], [Im H, Re H]]` of a Hermitian
/// matrix, returned with zero imaginary parts.
pub fn embed_hermitian(h: &CMatrix) -> Result<CMatrix, ConicError> {
    let n = h.nrows();
    if h.ncols() != n {
        return Err(ConicError::Dimension(format!("embed_hermitian: {}x{} is not square", n, h.ncols())));
    }
    let scale = 1.0 + h.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if hermitian_residual(h) > 1e-9 * scale {
        return Err(ConicError::NotHermitian(hermitian_residual(h)));
    }
    Ok(embed_unchecked(h))
}

pub(crate) fn embed_unchecked(h: &CMatrix) -> CMatrix {
    let n = h.nrows();
    let mut out = CMatrix::zeros(2 * n, 2 * n);
    for r in 0..n {
        for c in 0..n {
            let z = h[(r, c)];
            out[(r, c)] = C64::new(z.re, 0.0);
            out[(r + n, c + n)] = C64::new(z.re, 0.0);
            out[(r, c + n)] = C64::new(-z.im, 0.0);
            out[(r + n, c)] = C64::new(z.im, 0.0);
        }
    }
    out
}

/// Recovers the Hermitian matrix from a (possibly perturbed) real embedding by
/// averaging the redundant copies.
pub fn extract_embedded(real: &CMatrix) -> CMatrix {
    let n = real.nrows() / 2;
    let mut out = CMatrix::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            let re = 0.5 * (real[(r, c)].re + real[(r + n, c + n)].re);
            let im = 0.5 * (real[(r + n, c)].re - real[(r, c + n)].re);
            out[(r, c)] = C64::new(re, im);
        }
    }
    hermitize(&mut out);
    out
}

/// Hermitian matrix stored as a list of entries covering both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseHermitian {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseHermitian {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, entries: Vec::new() }
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, entries: (0..dim).map(|k| (k, k, ONE)).collect() }
    }

    /// Sparse view of a dense Hermitian matrix; entries with modulus at most
    /// `drop_tol` are discarded.
    pub fn from_dense(m: &CMatrix, drop_tol: f64) -> Self {
        let mut entries = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let z = m[(r, c)];
                if z.norm() > drop_tol {
                    entries.push((r, c, z));
                }
            }
        }
        Self { dim: m.nrows(), entries }
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self { dim: self.dim, entries: self.entries.iter().map(|&(r, c, v)| (r, c, v * s)).collect() }
    }

    /// `Re tr(self * y)`.
    pub fn re_trace_with(&self, y: &CMatrix) -> f64 {
        let mut acc = 0.0;
        for &(r, c, v) in &self.entries {
            let w = y[(c, r)];
            acc += v.re * w.re - v.im * w.im;
        }
        acc
    }

    /// `out += s * self`.
    pub fn add_to(&self, out: &mut CMatrix, s: f64) {
        for &(r, c, v) in &self.entries {
            out[(r, c)] += v * s;
        }
    }

    /// Sum of `coef * term`, merging duplicate positions and dropping exact
    /// cancellations.
    pub fn linear_combination(dim: usize, parts: &[(f64, &SparseHermitian)]) -> Self {
        let mut acc: std::collections::BTreeMap<(usize, usize), C64> = std::collections::BTreeMap::new();
        for &(coef, part) in parts {
            debug_assert_eq!(part.dim, dim);
            for &(r, c, v) in &part.entries {
                *acc.entry((c, r)).or_insert(ZERO) += v * coef;
            }
        }
        let entries = acc
            .into_iter()
            .filter(|(_, v)| *v != ZERO)
            .map(|((c, r), v)| (r, c, v))
            .collect();
        Self { dim, entries }
    }
}

/// Number of real coordinates of a `dim x dim` Hermitian matrix.
pub fn hermitian_coordinate_count(dim: usize) -> usize {
    dim * dim
}

/// Part of an entry a real coordinate controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Re,
    Im,
}

/// Enumerates the real coordinates of a Hermitian matrix: diagonal entries
/// first, then the real and imaginary parts of each strictly upper entry in
/// column-major order.
pub fn hermitian_coordinates(dim: usize) -> Vec<(usize, usize, Part)> {
    let mut coords = Vec::with_capacity(dim * dim);
    for k in 0..dim {
        coords.push((k, k, Part::Re));
    }
    for c in 0..dim {
        for r in 0..c {
            coords.push((r, c, Part::Re));
            coords.push((r, c, Part::Im));
        }
    }
    coords
}

/// Basis matrix of a Hermitian coordinate. The matrix variable equals the sum
/// of its coordinates times these matrices.
pub fn coordinate_basis(dim: usize, coord: (usize, usize, Part)) -> SparseHermitian {
    let (r, c, part) = coord;
    let entries = if r == c {
        vec![(r, r, ONE)]
    } else {
        match part {
            Part::Re => vec![(r, c, ONE), (c, r, ONE)],
            Part::Im => vec![(r, c, I), (c, r, -I)],
        }
    };
    SparseHermitian { dim, entries }
}

/// Coordinates of a Hermitian matrix in the basis of [`hermitian_coordinates`].
pub fn matrix_to_coordinates(m: &CMatrix) -> Vec<f64> {
    hermitian_coordinates(m.nrows())
        .into_iter()
        .map(|(r, c, part)| {
            let z = if r == c { m[(r, r)] } else { (m[(r, c)] + m[(c, r)].conj()) * 0.5 };
            match part {
                Part::Re => z.re,
                Part::Im => z.im,
            }
        })
        .collect()
}

pub fn coordinates_to_matrix(dim: usize, values: &[f64]) -> CMatrix {
    let mut m = CMatrix::zeros(dim, dim);
    for (coord, &v) in hermitian_coordinates(dim).into_iter().zip(values) {
        coordinate_basis(dim, coord).add_to(&mut m, v);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedding_of_identity_is_identity() {
        let e = embed_hermitian(&CMatrix::identity(2, 2)).unwrap();
        assert_eq!(e, CMatrix::identity(4, 4));
    }

    #[test]
    fn pauli_y_embedding_spectrum() {
        let h = CMatrix::from_row_slice(2, 2, &[ZERO, I, -I, ZERO]);
        let ev = eigenvalues(&embed_hermitian(&h).unwrap());
        let expected = [-1.0, -1.0, 1.0, 1.0];
        for (a, b) in ev.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn embedding_rejects_non_hermitian() {
        let h = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE]);
        assert!(matches!(embed_hermitian(&h), Err(ConicError::NotHermitian(_))));
    }

    #[test]
    fn coordinates_round_trip() {
        let m = CMatrix::from_row_slice(
            3,
            3,
            &[
                C64::new(2.0, 0.0),
                C64::new(0.5, 1.0),
                C64::new(-1.0, 0.25),
                C64::new(0.5, -1.0),
                C64::new(1.0, 0.0),
                C64::new(0.0, 3.0),
                C64::new(-1.0, -0.25),
                C64::new(0.0, -3.0),
                C64::new(4.0, 0.0),
            ],
        );
        let coords = matrix_to_coordinates(&m);
        assert_eq!(coords.len(), hermitian_coordinate_count(3));
        assert!((coordinates_to_matrix(3, &coords) - &m).norm() < 1e-15);
    }

    #[test]
    fn linear_combination_cancels() {
        let a = SparseHermitian::identity(2);
        let s = SparseHermitian::linear_combination(2, &[(1.0, &a), (-1.0, &a)]);
        assert!(s.is_empty());
    }

    #[test]
    fn extract_inverts_embedding() {
        let h = CMatrix::from_row_slice(2, 2, &[C64::new(1.0, 0.0), C64::new(0.3, -0.7), C64::new(0.3, 0.7), C64::new(-2.0, 0.0)]);
        let back = extract_embedded(&embed_unchecked(&h));
        assert!((back - h).norm() < 1e-15);
    }
}
