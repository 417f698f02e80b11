//! Lowering of a [`ConicProgram`] into the block data the interior-point
//! solver works on.
//!
//! Equality constraints are eliminated by reduced row echelon form, so the
//! solver only ever sees free variables `z` with `x = x0 + N z`. LMIs and PSD
//! variables become Hermitian blocks `Z = C - sum_k z_k A_k`, inequalities and
//! sign constraints become scalar rows.

use std::collections::BTreeMap;

use crate::hermitian::{embed_unchecked, CMatrix, SparseHermitian, C64};
use crate::ipm::{Block, Group, LpRows, Problem};
use crate::program::{ConicProgram, Relation, Sign};
use crate::ConicError;

/// Which arithmetic the lowered blocks use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Field {
    /// Hermitian blocks solved directly.
    #[default]
    Complex,
    /// Every Hermitian block replaced by its real symmetric embedding.
    RealEmbedding,
}

pub(crate) struct Lowered {
    pub problem: Problem,
    pub x0: Vec<f64>,
    /// For each reduced variable, the original coordinates it drives.
    pub columns: Vec<Vec<(usize, f64)>>,
    pub objective_offset: f64,
}

pub(crate) enum LowerOutcome {
    Ready(Lowered),
    /// The equalities are inconsistent.
    Infeasible(String),
    /// A variable with nonzero objective weight is unconstrained.
    Unbounded(String),
}

struct Elimination {
    x0: Vec<f64>,
    /// x_i = x0_i + sum (k, coef) z_k
    rows: Vec<Vec<(usize, f64)>>,
    free_count: usize,
}

fn eliminate(prog: &ConicProgram) -> Result<Elimination, String> {
    let n = prog.coord_count();
    let eqs: Vec<_> = prog.linear_constraints().iter().filter(|c| c.relation == Relation::Eq).collect();
    let mut mat: Vec<Vec<f64>> = Vec::with_capacity(eqs.len());
    let mut rhs: Vec<f64> = Vec::with_capacity(eqs.len());
    for eq in &eqs {
        let mut row = vec![0.0; n];
        for &(c, v) in &eq.expr.terms {
            row[c.0] += v;
        }
        mat.push(row);
        rhs.push(-eq.expr.constant);
    }

    let mut pivots: Vec<(usize, usize)> = Vec::new(); // (row index in mat, column)
    for r in 0..mat.len() {
        for &(pr, pc) in &pivots {
            let f = mat[r][pc];
            if f != 0.0 {
                let (pivot_row, pivot_rhs) = (mat[pr].clone(), rhs[pr]);
                for (a, b) in mat[r].iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
                rhs[r] -= f * pivot_rhs;
            }
        }
        let scale = mat[r].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let (col, best) = mat[r]
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bc, bv), (c, v)| if v.abs() > bv { (c, v.abs()) } else { (bc, bv) });
        if best <= 1e-12 * scale.max(1.0) || best == 0.0 {
            if rhs[r].abs() > 1e-9 * (1.0 + eqs[r].expr.constant.abs()) {
                return Err(format!("equality '{}' is inconsistent with the others", eqs[r].name));
            }
            continue;
        }
        let p = mat[r][col];
        for v in mat[r].iter_mut() {
            *v /= p;
        }
        rhs[r] /= p;
        let pivot_row = mat[r].clone();
        for &(pr, _) in &pivots {
            let f = mat[pr][col];
            if f != 0.0 {
                for (a, b) in mat[pr].iter_mut().zip(&pivot_row) {
                    *a -= f * b;
                }
                rhs[pr] -= f * rhs[r];
            }
        }
        pivots.push((r, col));
    }

    let pivot_cols: BTreeMap<usize, usize> = pivots.iter().map(|&(r, c)| (c, r)).collect();
    let mut free_index = vec![usize::MAX; n];
    let mut free_count = 0;
    for (c, slot) in free_index.iter_mut().enumerate() {
        if !pivot_cols.contains_key(&c) {
            *slot = free_count;
            free_count += 1;
        }
    }
    let mut x0 = vec![0.0; n];
    let mut rows = vec![Vec::new(); n];
    for c in 0..n {
        match pivot_cols.get(&c) {
            None => rows[c].push((free_index[c], 1.0)),
            Some(&r) => {
                x0[c] = rhs[r];
                for (cc, &v) in mat[r].iter().enumerate() {
                    if cc != c && v.abs() > 1e-15 {
                        rows[c].push((free_index[cc], -v));
                    }
                }
            }
        }
    }
    Ok(Elimination { x0, rows, free_count })
}

fn embed_rect(u: &CMatrix) -> CMatrix {
    let (n, p) = u.shape();
    let mut out = CMatrix::zeros(2 * n, 2 * p);
    for r in 0..n {
        for c in 0..p {
            let z = u[(r, c)];
            out[(r, c)] = C64::new(z.re, 0.0);
            out[(r + n, c + p)] = C64::new(z.re, 0.0);
            out[(r, c + p)] = C64::new(-z.im, 0.0);
            out[(r + n, c)] = C64::new(z.im, 0.0);
        }
    }
    out
}

fn embed_sparse(l: &SparseHermitian) -> SparseHermitian {
    let p = l.dim;
    let mut entries = Vec::with_capacity(4 * l.nnz());
    for &(r, c, v) in &l.entries {
        if v.re != 0.0 {
            entries.push((r, c, C64::new(v.re, 0.0)));
            entries.push((r + p, c + p, C64::new(v.re, 0.0)));
        }
        if v.im != 0.0 {
            entries.push((r, c + p, C64::new(-v.im, 0.0)));
            entries.push((r + p, c, C64::new(v.im, 0.0)));
        }
    }
    SparseHermitian { dim: 2 * p, entries }
}

/// Collects `sum_i x_i L_i` over original coordinates into reduced-variable
/// coefficients (negated, since the solver uses `C - sum z_k A_k`) and the
/// contribution of `x0` to the constant.
fn reduce_terms(
    terms: &[(crate::program::Coord, SparseHermitian)],
    elim: &Elimination,
    dim: usize,
) -> (Vec<(usize, SparseHermitian)>, SparseHermitian) {
    let mut by_var: BTreeMap<usize, Vec<(f64, &SparseHermitian)>> = BTreeMap::new();
    let mut constant_parts: Vec<(f64, &SparseHermitian)> = Vec::new();
    for (c, l) in terms {
        let x0 = elim.x0[c.0];
        if x0 != 0.0 {
            constant_parts.push((x0, l));
        }
        for &(k, coef) in &elim.rows[c.0] {
            by_var.entry(k).or_default().push((-coef, l));
        }
    }
    let reduced = by_var
        .into_iter()
        .map(|(k, parts)| (k, SparseHermitian::linear_combination(dim, &parts)))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    (reduced, SparseHermitian::linear_combination(dim, &constant_parts))
}

pub(crate) fn lower(prog: &ConicProgram, field: Field) -> Result<LowerOutcome, ConicError> {
    prog.validate()?;
    let elim = match eliminate(prog) {
        Ok(e) => e,
        Err(msg) => return Ok(LowerOutcome::Infeasible(msg)),
    };
    let m = elim.free_count;

    let mut blocks = Vec::new();
    for lmi in prog.lmis() {
        let mut constant = lmi.constant.clone();
        let mut groups = Vec::new();
        for g in &lmi.groups {
            let p = g.inner_dim(lmi.dim);
            let (terms, const_inner) = reduce_terms(&g.terms, &elim, p);
            if !const_inner.is_empty() {
                let inner = const_inner.to_dense();
                constant += match &g.basis {
                    None => inner,
                    Some(u) => u * inner * u.adjoint(),
                };
            }
            if !terms.is_empty() {
                groups.push(Group::new(g.basis.clone(), terms, lmi.dim));
            }
        }
        blocks.push(Block { n: lmi.dim, c: constant, groups });
    }
    for v in prog.matrix_vars().iter().filter(|v| v.psd) {
        let (terms, const_inner) = reduce_terms(&v.basis(), &elim, v.dim);
        let groups = if terms.is_empty() { Vec::new() } else { vec![Group::new(None, terms, v.dim)] };
        blocks.push(Block { n: v.dim, c: const_inner.to_dense(), groups });
    }

    // Scalar rows z_l = c_l - a_l . y >= 0.
    let mut lp = LpRows::default();
    let mut push_row = |constant: f64, terms: &[(usize, f64)], sign: f64| {
        // sign * (constant + sum coef x_i) >= 0
        let mut c = sign * constant;
        let mut row: BTreeMap<usize, f64> = BTreeMap::new();
        for &(i, coef) in terms {
            c += sign * coef * elim.x0[i];
            for &(k, n) in &elim.rows[i] {
                *row.entry(k).or_insert(0.0) -= sign * coef * n;
            }
        }
        let row: Vec<(usize, f64)> = row.into_iter().filter(|&(_, v)| v != 0.0).collect();
        lp.c.push(c);
        lp.rows.push(row);
    };
    for v in prog.scalar_vars() {
        match v.sign {
            Sign::Free => {}
            Sign::NonNeg => push_row(0.0, &[(v.coord.0, 1.0)], 1.0),
            Sign::NonPos => push_row(0.0, &[(v.coord.0, 1.0)], -1.0),
        }
    }
    for lc in prog.linear_constraints() {
        let terms: Vec<(usize, f64)> = lc.expr.terms.iter().map(|&(c, v)| (c.0, v)).collect();
        match lc.relation {
            Relation::Eq => {}
            Relation::Ge => push_row(lc.expr.constant, &terms, 1.0),
            Relation::Le => push_row(lc.expr.constant, &terms, -1.0),
        }
    }

    let mut b = vec![0.0; m];
    let mut objective_offset = prog.objective().constant;
    for &(c, coef) in &prog.objective().terms {
        objective_offset += coef * elim.x0[c.0];
        for &(k, n) in &elim.rows[c.0] {
            b[k] += coef * n;
        }
    }

    let mut columns = vec![Vec::new(); m];
    for (i, row) in elim.rows.iter().enumerate() {
        for &(k, coef) in row {
            columns[k].push((i, coef));
        }
    }

    // Drop reduced variables that no constraint touches.
    let mut used = vec![false; m];
    for blk in &blocks {
        for g in &blk.groups {
            for (k, _) in &g.terms {
                used[*k] = true;
            }
        }
    }
    for row in &lp.rows {
        for &(k, _) in row {
            used[k] = true;
        }
    }
    for k in 0..m {
        if !used[k] && b[k].abs() > 0.0 {
            return Ok(LowerOutcome::Unbounded(format!("reduced variable {k} has objective weight but no constraints")));
        }
    }
    let remap: Vec<Option<usize>> = {
        let mut next = 0;
        used.iter()
            .map(|&u| {
                if u {
                    next += 1;
                    Some(next - 1)
                } else {
                    None
                }
            })
            .collect()
    };
    let m_used = used.iter().filter(|&&u| u).count();
    for blk in &mut blocks {
        for g in &mut blk.groups {
            for (k, _) in g.terms.iter_mut() {
                *k = remap[*k].unwrap();
            }
        }
    }
    for row in &mut lp.rows {
        for (k, _) in row.iter_mut() {
            *k = remap[*k].unwrap();
        }
    }
    let b: Vec<f64> = (0..m).filter(|&k| used[k]).map(|k| b[k]).collect();
    let columns: Vec<Vec<(usize, f64)>> = (0..m).filter(|&k| used[k]).map(|k| columns[k].clone()).collect();

    if field == Field::RealEmbedding {
        for blk in &mut blocks {
            blk.c = embed_unchecked(&blk.c);
            blk.n *= 2;
            for g in &mut blk.groups {
                let basis = g.basis.as_ref().map(embed_rect);
                let terms = g.terms.iter().map(|(k, l)| (*k, embed_sparse(l))).collect();
                *g = Group::new(basis, terms, blk.n);
            }
        }
    }

    Ok(LowerOutcome::Ready(Lowered {
        problem: Problem { m: m_used, b, blocks, lp },
        x0: elim.x0,
        columns,
        objective_offset,
    }))
}

impl Lowered {
    pub fn recover(&self, z: &[f64]) -> Vec<f64> {
        let mut x = self.x0.clone();
        for (k, col) in self.columns.iter().enumerate() {
            for &(i, coef) in col {
                x[i] += coef * z[k];
            }
        }
        x
    }
}
