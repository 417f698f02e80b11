//! Solver-agnostic description of a semidefinite program over Hermitian
//! matrix variables and real scalars.
//!
//! Every variable is flattened into real coordinates. A Hermitian `d x d`
//! matrix variable owns `d^2` coordinates (see
//! [`hermitian_coordinates`](crate::hermitian::hermitian_coordinates)). LMI
//! blocks are affine in the coordinates and are stored in congruence form
//! `F(x) = F0 + sum_g U_g (sum_i x_i L_gi) U_g^H` so that Kronecker- and
//! low-rank-structured data never has to be expanded densely per coordinate.

use std::collections::BTreeMap;

use crate::hermitian::{
    coordinate_basis, coordinates_to_matrix, hermitian_coordinates, hermitize, min_eigenvalue, CMatrix,
    Part, SparseHermitian,
};
use crate::ConicError;

/// Index of one real coordinate of the program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Coord(pub usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatrixVar {
    pub name: String,
    pub dim: usize,
    pub psd: bool,
    pub(crate) offset: usize,
}

impl MatrixVar {
    pub fn coord_count(&self) -> usize {
        self.dim * self.dim
    }

    /// Coordinates paired with the Hermitian basis matrix each one scales.
    pub fn basis(&self) -> Vec<(Coord, SparseHermitian)> {
        hermitian_coordinates(self.dim)
            .into_iter()
            .enumerate()
            .map(|(k, c)| (Coord(self.offset + k), coordinate_basis(self.dim, c)))
            .collect()
    }

    pub fn coord(&self, row: usize, col: usize, part: Part) -> Coord {
        let (r, c) = if row <= col { (row, col) } else { (col, row) };
        let idx = hermitian_coordinates(self.dim)
            .iter()
            .position(|&(rr, cc, pp)| rr == r && cc == c && (r == c || pp == part))
            .expect("entry inside the matrix");
        Coord(self.offset + idx)
    }

    /// Coordinates of the diagonal entries, in order.
    pub fn diagonal(&self) -> Vec<Coord> {
        (0..self.dim).map(|k| Coord(self.offset + k)).collect()
    }

    pub fn value(&self, x: &[f64]) -> CMatrix {
        coordinates_to_matrix(self.dim, &x[self.offset..self.offset + self.coord_count()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Free,
    NonNeg,
    NonPos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalarVar {
    pub name: String,
    pub sign: Sign,
    pub coord: Coord,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinearExpr {
    pub terms: Vec<(Coord, f64)>,
    pub constant: f64,
}

impl LinearExpr {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), constant: c }
    }

    pub fn term(coord: Coord, coef: f64) -> Self {
        Self { terms: vec![(coord, coef)], constant: 0.0 }
    }

    pub fn add(mut self, coord: Coord, coef: f64) -> Self {
        self.terms.push((coord, coef));
        self
    }

    pub fn add_constant(mut self, c: f64) -> Self {
        self.constant += c;
        self
    }

    pub fn push(&mut self, coord: Coord, coef: f64) {
        self.terms.push((coord, coef));
    }

    /// `sum_k coef * tr(basis_k * m)` written over the coordinates of `var`,
    /// i.e. the linear functional `X -> Re tr(m X)`.
    pub fn trace_with(var: &MatrixVar, m: &CMatrix, coef: f64) -> Self {
        let terms = var
            .basis()
            .into_iter()
            .map(|(c, b)| (c, coef * b.re_trace_with(m)))
            .filter(|&(_, v)| v != 0.0)
            .collect();
        Self { terms, constant: 0.0 }
    }

    pub fn extend(&mut self, other: LinearExpr) {
        self.terms.extend(other.terms);
        self.constant += other.constant;
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(c, v)| v * x[c.0]).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// `expr == 0`
    Eq,
    /// `expr <= 0`
    Le,
    /// `expr >= 0`
    Ge,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearConstraint {
    pub name: String,
    pub expr: LinearExpr,
    pub relation: Relation,
}

/// One congruence group `U (sum_i x_i L_i) U^H` of an LMI. `basis == None`
/// stands for the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct CongruenceGroup {
    pub basis: Option<CMatrix>,
    pub terms: Vec<(Coord, SparseHermitian)>,
}

impl CongruenceGroup {
    pub fn inner_dim(&self, block_dim: usize) -> usize {
        self.basis.as_ref().map_or(block_dim, |u| u.ncols())
    }

    fn expand(&self, inner: &CMatrix) -> CMatrix {
        match &self.basis {
            None => inner.clone(),
            Some(u) => u * inner * u.adjoint(),
        }
    }
}

/// Affine Hermitian matrix expression required to be positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Lmi {
    pub name: String,
    pub dim: usize,
    pub constant: CMatrix,
    pub groups: Vec<CongruenceGroup>,
}

impl Lmi {
    pub fn new(name: impl Into<String>, dim: usize) -> Self {
        Self { name: name.into(), dim, constant: CMatrix::zeros(dim, dim), groups: Vec::new() }
    }

    pub fn set_constant(&mut self, c: CMatrix) -> &mut Self {
        assert_eq!(c.nrows(), self.dim);
        self.constant = c;
        self
    }

    /// Adds `U (sum_i x_i L_i) U^H`.
    pub fn add_congruence(&mut self, basis: CMatrix, terms: Vec<(Coord, SparseHermitian)>) -> &mut Self {
        assert_eq!(basis.nrows(), self.dim);
        for (_, l) in &terms {
            assert_eq!(l.dim, basis.ncols());
        }
        self.groups.push(CongruenceGroup { basis: Some(basis), terms });
        self
    }

    /// Adds `sum_i x_i L_i` with full-size coefficient matrices.
    pub fn add_terms(&mut self, terms: Vec<(Coord, SparseHermitian)>) -> &mut Self {
        for (_, l) in &terms {
            assert_eq!(l.dim, self.dim);
        }
        self.groups.push(CongruenceGroup { basis: None, terms });
        self
    }

    pub fn evaluate(&self, x: &[f64]) -> CMatrix {
        let mut out = self.constant.clone();
        for g in &self.groups {
            let p = g.inner_dim(self.dim);
            let mut inner = CMatrix::zeros(p, p);
            for (c, l) in &g.terms {
                l.add_to(&mut inner, x[c.0]);
            }
            out += g.expand(&inner);
        }
        hermitize(&mut out);
        out
    }

    /// Dense coefficient matrix of one coordinate.
    pub fn coefficient(&self, coord: Coord) -> CMatrix {
        let mut out = CMatrix::zeros(self.dim, self.dim);
        for g in &self.groups {
            for (c, l) in &g.terms {
                if *c == coord {
                    out += g.expand(&l.to_dense());
                }
            }
        }
        out
    }

    pub fn coords(&self) -> Vec<Coord> {
        let mut v: Vec<Coord> = self.groups.iter().flat_map(|g| g.terms.iter().map(|(c, _)| *c)).collect();
        v.sort();
        v.dedup();
        v
    }
}

/// A maximization problem over the program's coordinates.
#[derive(Debug, Clone, Default)]
pub struct ConicProgram {
    matrix_vars: Vec<MatrixVar>,
    scalar_vars: Vec<ScalarVar>,
    lmis: Vec<Lmi>,
    linear: Vec<LinearConstraint>,
    objective: LinearExpr,
    coord_count: usize,
}

impl ConicProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_matrix_var(&mut self, name: impl Into<String>, dim: usize, psd: bool) -> MatrixVar {
        let v = MatrixVar { name: name.into(), dim, psd, offset: self.coord_count };
        self.coord_count += v.coord_count();
        self.matrix_vars.push(v.clone());
        v
    }

    pub fn add_scalar_var(&mut self, name: impl Into<String>, sign: Sign) -> ScalarVar {
        let v = ScalarVar { name: name.into(), sign, coord: Coord(self.coord_count) };
        self.coord_count += 1;
        self.scalar_vars.push(v.clone());
        v
    }

    pub fn add_lmi(&mut self, lmi: Lmi) {
        self.lmis.push(lmi);
    }

    pub fn add_linear(&mut self, name: impl Into<String>, expr: LinearExpr, relation: Relation) {
        self.linear.push(LinearConstraint { name: name.into(), expr, relation });
    }

    pub fn set_objective(&mut self, objective: LinearExpr) {
        self.objective = objective;
    }

    pub fn coord_count(&self) -> usize {
        self.coord_count
    }

    pub fn matrix_vars(&self) -> &[MatrixVar] {
        &self.matrix_vars
    }

    pub fn scalar_vars(&self) -> &[ScalarVar] {
        &self.scalar_vars
    }

    pub fn lmis(&self) -> &[Lmi] {
        &self.lmis
    }

    pub fn linear_constraints(&self) -> &[LinearConstraint] {
        &self.linear
    }

    pub fn objective(&self) -> &LinearExpr {
        &self.objective
    }

    pub fn matrix_var(&self, name: &str) -> Option<&MatrixVar> {
        self.matrix_vars.iter().find(|v| v.name == name)
    }

    pub fn scalar_var(&self, name: &str) -> Option<&ScalarVar> {
        self.scalar_vars.iter().find(|v| v.name == name)
    }

    /// Checks that every referenced coordinate exists and every block is
    /// dimensionally consistent.
    pub fn validate(&self) -> Result<(), ConicError> {
        let n = self.coord_count;
        let check = |c: Coord, ctx: &str| {
            if c.0 >= n {
                Err(ConicError::Malformed(format!("{ctx}: coordinate {} out of range ({n} declared)", c.0)))
            } else {
                Ok(())
            }
        };
        for lmi in &self.lmis {
            if lmi.constant.nrows() != lmi.dim || lmi.constant.ncols() != lmi.dim {
                return Err(ConicError::Malformed(format!("lmi {}: constant has wrong shape", lmi.name)));
            }
            for g in &lmi.groups {
                let p = g.inner_dim(lmi.dim);
                if let Some(u) = &g.basis {
                    if u.nrows() != lmi.dim {
                        return Err(ConicError::Malformed(format!("lmi {}: basis has wrong row count", lmi.name)));
                    }
                }
                for (c, l) in &g.terms {
                    check(*c, &lmi.name)?;
                    if l.dim != p || l.entries.iter().any(|&(r, cc, _)| r >= p || cc >= p) {
                        return Err(ConicError::Malformed(format!("lmi {}: coefficient exceeds inner dimension", lmi.name)));
                    }
                }
            }
        }
        for lc in &self.linear {
            for &(c, _) in &lc.expr.terms {
                check(c, &lc.name)?;
            }
        }
        for &(c, _) in &self.objective.terms {
            check(c, "objective")?;
        }
        Ok(())
    }

    /// Re-evaluates every constraint at `x` independently of any solver.
    pub fn audit(&self, x: &[f64]) -> Audit {
        let mut entries = Vec::new();
        for lmi in &self.lmis {
            let f = lmi.evaluate(x);
            let scale = 1.0 + f.norm();
            entries.push(AuditEntry { name: lmi.name.clone(), margin: min_eigenvalue(&f), scale });
        }
        for v in &self.matrix_vars {
            if v.psd {
                let m = v.value(x);
                entries.push(AuditEntry { name: v.name.clone(), margin: min_eigenvalue(&m), scale: 1.0 + m.norm() });
            }
        }
        for v in &self.scalar_vars {
            let val = x[v.coord.0];
            let margin = match v.sign {
                Sign::Free => continue,
                Sign::NonNeg => val,
                Sign::NonPos => -val,
            };
            entries.push(AuditEntry { name: v.name.clone(), margin, scale: 1.0 + val.abs() });
        }
        for lc in &self.linear {
            let val = lc.expr.evaluate(x);
            let scale = 1.0 + lc.expr.constant.abs() + lc.expr.terms.iter().map(|&(c, v)| (v * x[c.0]).abs()).sum::<f64>();
            let margin = match lc.relation {
                Relation::Eq => -val.abs(),
                Relation::Le => -val,
                Relation::Ge => val,
            };
            entries.push(AuditEntry { name: lc.name.clone(), margin, scale });
        }
        Audit { entries }
    }

    /// Per-variable view of a coordinate vector.
    pub fn assignment(&self, x: &[f64]) -> Assignment {
        let matrices = self.matrix_vars.iter().map(|v| (v.name.clone(), v.value(x))).collect();
        let scalars = self.scalar_vars.iter().map(|v| (v.name.clone(), x[v.coord.0])).collect();
        Assignment { coords: x.to_vec(), matrices, scalars }
    }
}

#[derive(Debug, Clone)]
pub struct AuditEntry {
    pub name: String,
    /// Minimum eigenvalue for LMIs and PSD variables, signed slack for
    /// linear constraints (negative when violated).
    pub margin: f64,
    pub scale: f64,
}

#[derive(Debug, Clone)]
pub struct Audit {
    pub entries: Vec<AuditEntry>,
}

impl Audit {
    /// Worst margin relative to each constraint's scale.
    pub fn worst_relative(&self) -> f64 {
        self.entries.iter().map(|e| e.margin / e.scale).fold(f64::INFINITY, f64::min)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.entries.iter().all(|e| e.margin >= -tol * e.scale)
    }

    pub fn violations(&self, tol: f64) -> Vec<&AuditEntry> {
        self.entries.iter().filter(|e| e.margin < -tol * e.scale).collect()
    }
}

/// Numeric values of all variables.
#[derive(Debug, Clone)]
pub struct Assignment {
    pub coords: Vec<f64>,
    pub matrices: BTreeMap<String, CMatrix>,
    pub scalars: BTreeMap<String, f64>,
}

impl Assignment {
    pub fn matrix(&self, v: &MatrixVar) -> CMatrix {
        v.value(&self.coords)
    }

    pub fn scalar(&self, v: &ScalarVar) -> f64 {
        self.coords[v.coord.0]
    }

    pub fn coord(&self, c: Coord) -> f64 {
        self.coords[c.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermitian::{C64, ONE};

    #[test]
    fn congruence_matches_dense_expansion() {
        let mut prog = ConicProgram::new();
        let w = prog.add_matrix_var("W", 2, true);
        let u = CMatrix::from_row_slice(3, 2, &[ONE, C64::new(0.0, 1.0), C64::new(2.0, 0.0), ONE, C64::new(0.5, -0.5), ONE]);
        let mut lmi = Lmi::new("blk", 3);
        lmi.add_congruence(u.clone(), w.basis());
        let x: Vec<f64> = vec![1.0, 2.0, 0.3, -0.4];
        let dense = &u * w.value(&x) * u.adjoint();
        assert!((lmi.evaluate(&x) - dense).norm() < 1e-12);
    }

    #[test]
    fn validate_catches_bad_coordinate() {
        let mut prog = ConicProgram::new();
        let _ = prog.add_scalar_var("t", Sign::Free);
        prog.add_linear("bad", LinearExpr::term(Coord(4), 1.0), Relation::Ge);
        assert!(prog.validate().is_err());
    }

    #[test]
    fn coord_lookup_is_symmetric() {
        let mut prog = ConicProgram::new();
        let w = prog.add_matrix_var("W", 3, true);
        assert_eq!(w.coord(0, 2, Part::Im), w.coord(2, 0, Part::Im));
        assert_eq!(w.coord(1, 1, Part::Im), w.coord(1, 1, Part::Re));
    }

    #[test]
    fn trace_functional_matches_direct_trace() {
        let mut prog = ConicProgram::new();
        let w = prog.add_matrix_var("W", 2, true);
        let m = CMatrix::from_row_slice(2, 2, &[ONE, C64::new(0.2, 0.7), C64::new(0.2, -0.7), C64::new(3.0, 0.0)]);
        let x = vec![0.5, 1.5, -0.25, 0.125];
        let expr = LinearExpr::trace_with(&w, &m, 1.0);
        let direct = (m * w.value(&x)).trace().re;
        assert!((expr.evaluate(&x) - direct).abs() < 1e-12);
    }
}
