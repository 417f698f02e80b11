//! Infeasible-start primal-dual path-following method (HKM direction with
//! Mehrotra predictor-corrector) for
//!
//! ```text
//! maximize    b^T y
//! subject to  Z_j = C_j - sum_k y_k A_jk  is PSD   (Hermitian blocks)
//!             z_l = c_l - a_l^T y        >= 0      (scalar rows)
//! ```
//!
//! The block coefficients are stored in congruence form `U (sum L_k) U^H`,
//! which turns each Schur-complement entry into a contraction of small
//! projected matrices instead of dense `n^3` products per variable.

use nalgebra::{DMatrix, DVector};

use crate::gemm::{congruence, congruence_adj, mul, mul_adj};
use crate::hermitian::{hermitize, re_trace_product, CMatrix, SparseHermitian, C64, ZERO};

#[derive(Debug, Clone)]
pub(crate) struct Group {
    pub basis: Option<CMatrix>,
    pub p: usize,
    pub terms: Vec<(usize, SparseHermitian)>,
    /// Distinct `(row, col)` positions of `L^T` over all terms.
    support: Vec<(usize, usize)>,
    /// Per term: `(support index, value)` for every entry.
    slots: Vec<Vec<(usize, C64)>>,
}

impl Group {
    pub fn new(basis: Option<CMatrix>, terms: Vec<(usize, SparseHermitian)>, n: usize) -> Self {
        let p = basis.as_ref().map_or(n, |u| u.ncols());
        let mut g = Self { basis, p, terms, support: Vec::new(), slots: Vec::new() };
        g.index_support();
        g
    }

    fn index_support(&mut self) {
        let mut pos = std::collections::HashMap::new();
        let mut support = Vec::new();
        self.slots = self
            .terms
            .iter()
            .map(|(_, l)| {
                l.entries
                    .iter()
                    .map(|&(c, d, w)| {
                        let s = *pos.entry((d, c)).or_insert_with(|| {
                            support.push((d, c));
                            support.len() - 1
                        });
                        (s, w)
                    })
                    .collect()
            })
            .collect();
        self.support = support;
    }

    fn inner(&self, y: &[f64]) -> CMatrix {
        let mut m = CMatrix::zeros(self.p, self.p);
        for (k, l) in &self.terms {
            l.add_to(&mut m, y[*k]);
        }
        m
    }

    fn project(&self, y: &CMatrix) -> CMatrix {
        match &self.basis {
            None => y.clone(),
            Some(u) => congruence_adj(u, y),
        }
    }

    fn expand(&self, inner: &CMatrix) -> CMatrix {
        match &self.basis {
            None => inner.clone(),
            Some(u) => congruence(u, inner),
        }
    }

    /// Squared Frobenius norm of each term's full-size coefficient.
    fn term_norms_sq(&self) -> Vec<f64> {
        let gram = self.basis.as_ref().map(|u| mul_adj(u, u));
        self.terms
            .iter()
            .map(|(_, l)| match &gram {
                None => l.entries.iter().map(|&(_, _, v)| v.norm_sqr()).sum(),
                Some(g) => {
                    let lg = sparse_times_dense(l, g);
                    re_trace_product(&lg, &lg)
                }
            })
            .collect()
    }

    fn scale_terms(&mut self, f: impl Fn(usize) -> f64) {
        for (k, l) in self.terms.iter_mut() {
            *l = l.scaled(f(*k));
        }
        self.index_support();
    }
}

fn sparse_times_dense(l: &SparseHermitian, g: &CMatrix) -> CMatrix {
    let mut out = CMatrix::zeros(l.dim, g.ncols());
    for &(r, c, v) in &l.entries {
        for col in 0..g.ncols() {
            out[(r, col)] += v * g[(c, col)];
        }
    }
    out
}

#[derive(Debug, Clone)]
pub(crate) struct Block {
    pub n: usize,
    pub c: CMatrix,
    pub groups: Vec<Group>,
}

impl Block {
    /// `sum_k y_k A_k`
    fn adjoint(&self, y: &[f64]) -> CMatrix {
        let mut out = CMatrix::zeros(self.n, self.n);
        for g in &self.groups {
            out += g.expand(&g.inner(y));
        }
        hermitize(&mut out);
        out
    }

    /// `out_k += Re tr(A_k Y)`
    fn forward_add(&self, y: &CMatrix, out: &mut [f64]) {
        for g in &self.groups {
            let proj = g.project(y);
            for (k, l) in &g.terms {
                out[*k] += l.re_trace_with(&proj);
            }
        }
    }

    fn scale(&mut self, block_scale: f64, var_scale: &[f64]) {
        self.c /= C64::new(block_scale, 0.0);
        for g in &mut self.groups {
            g.scale_terms(|k| var_scale[k] / block_scale);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct LpRows {
    pub c: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl LpRows {
    fn len(&self) -> usize {
        self.c.len()
    }

    fn adjoint(&self, y: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.rows.iter().map(|row| row.iter().map(|&(k, a)| a * y[k]).sum::<f64>()))
    }

    fn forward_add(&self, x: &DVector<f64>, out: &mut [f64]) {
        for (row, &xv) in self.rows.iter().zip(x.iter()) {
            for &(k, a) in row {
                out[k] += a * xv;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub m: usize,
    pub b: Vec<f64>,
    pub blocks: Vec<Block>,
    pub lp: LpRows,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmSettings {
    pub tol: f64,
    /// Accuracy still reported as optimal when the iteration stops early.
    pub tol_inaccurate: f64,
    pub max_iter: usize,
    /// Dual residual above which a stalled run is classified infeasible.
    pub infeasible_residual: f64,
}

impl Default for IpmSettings {
    fn default() -> Self {
        Self { tol: 1e-8, tol_inaccurate: 1e-6, max_iter: 100, infeasible_residual: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum IpmStatus {
    Converged,
    Inaccurate,
    Infeasible,
    Unbounded,
    MaxIterations,
    Breakdown,
}

#[derive(Debug, Clone)]
pub(crate) struct IpmOutput {
    pub status: IpmStatus,
    pub y: Vec<f64>,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub gap: f64,
    pub detail: String,
    /// Dual iterate of every block.
    pub x: Vec<CMatrix>,
    pub xl: Vec<f64>,
}

struct Factored {
    /// Inverse Cholesky factors of `X` and `Z`.
    linv_x: CMatrix,
    linv_z: CMatrix,
    zinv: CMatrix,
}

fn lower_cholesky(m: &CMatrix) -> Option<CMatrix> {
    m.clone().cholesky().map(|c| c.unpack())
}

/// Largest `a` with `X + a dX` PSD, given `L^{-1}` for `X = L L^H`.
fn max_step(linv: &CMatrix, d: &CMatrix) -> f64 {
    if linv.nrows() == 0 {
        return f64::INFINITY;
    }
    let mut b = mul(&mul(linv, d), &linv.adjoint());
    hermitize(&mut b);
    let lmin = b.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

fn lower_inverse(l: &CMatrix) -> Option<CMatrix> {
    l.solve_lower_triangular(&CMatrix::identity(l.nrows(), l.ncols()))
}

fn max_step_lp(x: &DVector<f64>, d: &DVector<f64>) -> f64 {
    x.iter().zip(d.iter()).filter(|(_, &dv)| dv < 0.0).map(|(&xv, &dv)| -xv / dv).fold(f64::INFINITY, f64::min)
}

fn sym_product(x: &CMatrix, d: &CMatrix, zinv: &CMatrix) -> CMatrix {
    let mut p = mul(&mul(x, d), zinv);
    hermitize(&mut p);
    p
}

struct Direction {
    dy: DVector<f64>,
    dx: Vec<CMatrix>,
    dz: Vec<CMatrix>,
    dxl: DVector<f64>,
    dzl: DVector<f64>,
}

/// Schur complement `M_ij = Re tr(A_i X A_j Z^{-1})` summed over blocks.
fn schur_block(blk: &Block, x: &CMatrix, zinv: &CMatrix, m: &mut DMatrix<f64>) {
    let groups = &blk.groups;
    let xu: Vec<Option<CMatrix>> = groups.iter().map(|g| g.basis.as_ref().map(|u| mul(x, u))).collect();
    let zu: Vec<Option<CMatrix>> = groups.iter().map(|g| g.basis.as_ref().map(|u| mul(zinv, u))).collect();
    for gi in 0..groups.len() {
        for hi in gi..groups.len() {
            let (g, h) = (&groups[gi], &groups[hi]);
            // Xt = U_g^H X U_h, Zt = U_h^H Z^{-1} U_g
            let xt = match (&g.basis, &h.basis) {
                (None, None) => x.clone(),
                (None, Some(_)) => xu[hi].clone().unwrap(),
                (Some(_), None) => xu[gi].as_ref().unwrap().adjoint(),
                (Some(ug), Some(_)) => mul_adj(ug, xu[hi].as_ref().unwrap()),
            };
            let zt = match (&h.basis, &g.basis) {
                (None, None) => zinv.clone(),
                (None, Some(_)) => zu[gi].clone().unwrap(),
                (Some(_), None) => zu[hi].as_ref().unwrap().adjoint(),
                (Some(uh), Some(_)) => mul_adj(uh, zu[gi].as_ref().unwrap()),
            };
            let same = gi == hi;
            let mut kvals = vec![ZERO; h.support.len()];
            for (i, li) in &g.terms {
                // K = sum_{(a,b,v) in L_i} v Zt[:, a] Xt[b, :], needed only
                // where the terms of the second group are nonzero.
                kvals.fill(ZERO);
                let (xs, zs) = (xt.as_slice(), zt.as_slice());
                let (xr, zr) = (xt.nrows(), zt.nrows());
                for &(a, b, v) in &li.entries {
                    let zcol = &zs[a * zr..(a + 1) * zr];
                    for (k, &(d, c)) in kvals.iter_mut().zip(&h.support) {
                        *k += v * (zcol[d] * xs[b + c * xr]);
                    }
                }
                for ((j, _), slots) in h.terms.iter().zip(&h.slots) {
                    let mut acc = 0.0;
                    for &(s, w) in slots {
                        let k = kvals[s];
                        acc += w.re * k.re - w.im * k.im;
                    }
                    m[(*i, *j)] += acc;
                    if !same {
                        m[(*j, *i)] += acc;
                    }
                }
            }
        }
    }
}

pub(crate) fn solve(problem: &Problem, settings: &IpmSettings) -> IpmOutput {
    // Scaling: every block normalized to unit data norm, then every variable
    // column normalized.
    let mut prob = problem.clone();
    let m = prob.m;
    let mut col_norm_sq = vec![0.0; m];
    let mut block_scale = Vec::with_capacity(prob.blocks.len());
    for blk in &prob.blocks {
        let norms: Vec<Vec<f64>> = blk.groups.iter().map(|g| g.term_norms_sq()).collect();
        let max_a = norms.iter().flatten().fold(0.0f64, |a, &b| a.max(b)).sqrt();
        let s = blk.c.norm().max(max_a).max(1e-300);
        for (g, ns) in blk.groups.iter().zip(&norms) {
            for ((k, _), nsq) in g.terms.iter().zip(ns) {
                col_norm_sq[*k] += nsq / (s * s);
            }
        }
        block_scale.push(s);
    }
    let mut lp_scale = Vec::with_capacity(prob.lp.len());
    for (row, &c) in prob.lp.rows.iter().zip(&prob.lp.c) {
        let s = row.iter().fold(c.abs(), |a, &(_, v)| a.max(v.abs())).max(1e-300);
        for &(k, v) in row {
            col_norm_sq[k] += (v / s) * (v / s);
        }
        lp_scale.push(s);
    }
    let var_scale: Vec<f64> = col_norm_sq.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
    for (blk, &s) in prob.blocks.iter_mut().zip(&block_scale) {
        blk.scale(s, &var_scale);
    }
    for ((row, c), &s) in prob.lp.rows.iter_mut().zip(prob.lp.c.iter_mut()).zip(&lp_scale) {
        *c /= s;
        for (k, v) in row.iter_mut() {
            *v *= var_scale[*k] / s;
        }
    }
    for (bk, &s) in prob.b.iter_mut().zip(&var_scale) {
        *bk *= s;
    }
    let b_scale = prob.b.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    for bk in prob.b.iter_mut() {
        *bk /= b_scale;
    }

    let mut out = run(&prob, settings);
    for (yk, s) in out.y.iter_mut().zip(&var_scale) {
        *yk *= s;
    }
    for (x, s) in out.x.iter_mut().zip(&block_scale) {
        *x *= C64::new(b_scale / s, 0.0);
    }
    for (x, s) in out.xl.iter_mut().zip(&lp_scale) {
        *x *= b_scale / s;
    }
    out
}

fn run(prob: &Problem, settings: &IpmSettings) -> IpmOutput {
    let m = prob.m;
    let nblk = prob.blocks.len();
    let nlp = prob.lp.len();
    let b = DVector::from_column_slice(&prob.b);
    let nu: f64 = prob.blocks.iter().map(|b| b.n as f64).sum::<f64>() + nlp as f64;

    let norm_b = b.norm();
    let norm_c = (prob.blocks.iter().map(|b| b.c.norm_squared()).sum::<f64>()
        + prob.lp.c.iter().map(|v| v * v).sum::<f64>())
    .sqrt();

    // Initial point.
    let mut y = DVector::<f64>::zeros(m);
    let mut xs: Vec<CMatrix> = Vec::with_capacity(nblk);
    let mut zs: Vec<CMatrix> = Vec::with_capacity(nblk);
    for blk in &prob.blocks {
        let n = blk.n as f64;
        let x0 = 10f64.max(n.sqrt());
        let z0 = 10f64.max(n.sqrt()).max(blk.c.norm());
        xs.push(CMatrix::identity(blk.n, blk.n) * C64::new(x0, 0.0));
        zs.push(CMatrix::identity(blk.n, blk.n) * C64::new(z0, 0.0));
    }
    let mut xl = DVector::from_element(nlp, 10.0);
    let mut zl = DVector::from_iterator(nlp, prob.lp.c.iter().map(|c| 10f64.max(c.abs())));

    let mut last = IpmOutput {
        status: IpmStatus::MaxIterations,
        y: y.as_slice().to_vec(),
        iterations: 0,
        primal_infeasibility: f64::INFINITY,
        dual_infeasibility: f64::INFINITY,
        gap: f64::INFINITY,
        detail: String::new(),
        x: Vec::new(),
        xl: Vec::new(),
    };
    let mut stalls = 0;

    for iter in 0..=settings.max_iter {
        last.iterations = iter;
        // Factorizations.
        let mut fact = Vec::with_capacity(nblk);
        for (x, z) in xs.iter().zip(&zs) {
            let (Some(lx), Some(lz)) = (lower_cholesky(x), lower_cholesky(z)) else {
                last.status = IpmStatus::Breakdown;
                last.detail = "lost positive definiteness".into();
                return finish(last, settings);
            };
            let (Some(linv_x), Some(linv_z)) = (lower_inverse(&lx), lower_inverse(&lz)) else {
                last.status = IpmStatus::Breakdown;
                last.detail = "singular Cholesky factor".into();
                return finish(last, settings);
            };
            let mut zinv = mul_adj(&linv_z, &linv_z);
            hermitize(&mut zinv);
            fact.push(Factored { linv_x, linv_z, zinv });
        }

        // Residuals and measures.
        let mut ax = vec![0.0; m];
        for (blk, x) in prob.blocks.iter().zip(&xs) {
            blk.forward_add(x, &mut ax);
        }
        prob.lp.forward_add(&xl, &mut ax);
        let rp = &b - DVector::from_vec(ax);
        let ys = y.as_slice();
        let rd: Vec<CMatrix> = prob
            .blocks
            .iter()
            .zip(&zs)
            .map(|(blk, z)| {
                let mut r = &blk.c - z - blk.adjoint(ys);
                hermitize(&mut r);
                r
            })
            .collect();
        let rdl = DVector::from_column_slice(&prob.lp.c) - &zl - prob.lp.adjoint(ys);

        let xz: f64 = xs.iter().zip(&zs).map(|(x, z)| re_trace_product(x, z)).sum::<f64>() + xl.dot(&zl);
        let mu = xz / nu.max(1.0);
        let pobj: f64 = prob.blocks.iter().zip(&xs).map(|(blk, x)| re_trace_product(&blk.c, x)).sum::<f64>()
            + DVector::from_column_slice(&prob.lp.c).dot(&xl);
        let dobj = b.dot(&y);
        let pinf = rp.norm() / (1.0 + norm_b);
        let dinf = (rd.iter().map(|r| r.norm_squared()).sum::<f64>() + rdl.norm_squared()).sqrt() / (1.0 + norm_c);
        let gap = ((pobj - dobj).abs()).max(xz.abs()) / (1.0 + pobj.abs() + dobj.abs());
        last.y = ys.to_vec();
        last.x = xs.clone();
        last.xl = xl.as_slice().to_vec();
        last.primal_infeasibility = pinf;
        last.dual_infeasibility = dinf;
        last.gap = gap;
        log::trace!("ipm {iter:3} pobj {pobj:+.6e} dobj {dobj:+.6e} pinf {pinf:.1e} dinf {dinf:.1e} gap {gap:.1e}");

        if pinf <= settings.tol && dinf <= settings.tol && gap <= settings.tol {
            last.status = IpmStatus::Converged;
            return last;
        }
        // Farkas ray: A(X) ~ 0 with <C, X> < 0 certifies an empty feasible set.
        if pobj < 0.0 {
            let ratio = (&b - &rp).norm() / (-pobj);
            if ratio < 1e-8 && dinf > settings.tol {
                last.status = IpmStatus::Infeasible;
                last.detail = format!("infeasibility certificate (ratio {ratio:.1e})");
                return last;
            }
        }
        // A diverging iterate is only an unbounded ray when the objective
        // grows with it; otherwise the optimal face is merely unbounded.
        let yn = y.norm();
        if yn > 1e12 * (1.0 + norm_c) && dobj > 1e-8 * norm_b * yn {
            last.status = IpmStatus::Unbounded;
            last.detail = "dual iterate diverged".into();
            return last;
        }
        if iter == settings.max_iter {
            break;
        }

        // Schur complement.
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for ((blk, x), f) in prob.blocks.iter().zip(&xs).zip(&fact) {
            schur_block(blk, x, &f.zinv, &mut schur);
        }
        for (l, row) in prob.lp.rows.iter().enumerate() {
            let w = xl[l] / zl[l];
            for &(i, ai) in row {
                for &(j, aj) in row {
                    schur[(i, j)] += w * ai * aj;
                }
            }
        }
        let schur = (&schur + schur.transpose()) * 0.5;
        let chol = {
            let diag_max = schur.diagonal().iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
            let mut reg = 0.0;
            let mut found = None;
            for _ in 0..8 {
                let mut s = schur.clone();
                for k in 0..m {
                    s[(k, k)] += reg;
                }
                if let Some(c) = s.cholesky() {
                    found = Some(c);
                    break;
                }
                reg = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
            }
            match found {
                Some(c) => c,
                None => {
                    last.status = IpmStatus::Breakdown;
                    last.detail = "Schur complement not positive definite".into();
                    return finish(last, settings);
                }
            }
        };

        // Constant part of the right-hand side: A(X Rd Z^{-1}) + LP terms.
        let mut h = vec![0.0; m];
        for (((blk, x), r), f) in prob.blocks.iter().zip(&xs).zip(&rd).zip(&fact) {
            if r.norm() > 0.0 {
                let p = sym_product(x, r, &f.zinv);
                blk.forward_add(&p, &mut h);
            }
        }
        let h = DVector::from_vec(h);

        let solve_direction = |g: &[CMatrix], gl: &DVector<f64>| -> Direction {
            let mut ag = vec![0.0; m];
            for (blk, gj) in prob.blocks.iter().zip(g) {
                blk.forward_add(gj, &mut ag);
            }
            // LP: sum_l a_l (g_l - x_l rd_l / z_l)
            let lp_term = DVector::from_iterator(nlp, (0..nlp).map(|l| gl[l] - xl[l] * rdl[l] / zl[l]));
            prob.lp.forward_add(&lp_term, &mut ag);
            let rhs = &rp - DVector::from_vec(ag) + &h;
            let dy = chol.solve(&rhs);
            let dys = dy.as_slice();
            let mut dxs = Vec::with_capacity(nblk);
            let mut dzs = Vec::with_capacity(nblk);
            for (j, blk) in prob.blocks.iter().enumerate() {
                let mut dz = &rd[j] - blk.adjoint(dys);
                hermitize(&mut dz);
                let dx = &g[j] - sym_product(&xs[j], &dz, &fact[j].zinv);
                dxs.push(dx);
                dzs.push(dz);
            }
            let dzl = &rdl - prob.lp.adjoint(dys);
            let dxl = DVector::from_iterator(nlp, (0..nlp).map(|l| gl[l] - xl[l] * dzl[l] / zl[l]));
            Direction { dy, dx: dxs, dz: dzs, dxl, dzl }
        };

        let step_lengths = |d: &Direction| -> (f64, f64) {
            let mut ap = max_step_lp(&xl, &d.dxl);
            let mut ad = max_step_lp(&zl, &d.dzl);
            for j in 0..nblk {
                ap = ap.min(max_step(&fact[j].linv_x, &d.dx[j]));
                ad = ad.min(max_step(&fact[j].linv_z, &d.dz[j]));
            }
            (ap, ad)
        };

        // Predictor.
        let g_aff: Vec<CMatrix> = xs.iter().map(|x| -x).collect();
        let gl_aff = -&xl;
        let aff = solve_direction(&g_aff, &gl_aff);
        let (ap_max, ad_max) = step_lengths(&aff);
        let ap_aff = ap_max.min(1.0);
        let ad_aff = ad_max.min(1.0);
        let mut xz_aff = 0.0;
        for j in 0..nblk {
            let xa = &xs[j] + &aff.dx[j] * C64::new(ap_aff, 0.0);
            let za = &zs[j] + &aff.dz[j] * C64::new(ad_aff, 0.0);
            xz_aff += re_trace_product(&xa, &za);
        }
        xz_aff += (&xl + &aff.dxl * ap_aff).dot(&(&zl + &aff.dzl * ad_aff));
        let mu_aff = xz_aff / nu.max(1.0);
        let expon = 1f64.max(3.0 * ap_aff.min(ad_aff).powi(2));
        let sigma = if mu > 0.0 { (mu_aff / mu).max(0.0).powf(expon).min(1.0) } else { 0.0 };

        // Corrector.
        let g_cor: Vec<CMatrix> = (0..nblk)
            .map(|j| {
                let mut g = &fact[j].zinv * C64::new(sigma * mu, 0.0) - &xs[j];
                g -= sym_product(&aff.dx[j], &aff.dz[j], &fact[j].zinv);
                g
            })
            .collect();
        let gl_cor = DVector::from_iterator(
            nlp,
            (0..nlp).map(|l| -xl[l] + sigma * mu / zl[l] - aff.dxl[l] * aff.dzl[l] / zl[l]),
        );
        let dir = solve_direction(&g_cor, &gl_cor);
        let (ap_max, ad_max) = step_lengths(&dir);
        let gamma = 0.9 + 0.09 * ap_aff.min(ad_aff);
        let ap = (gamma * ap_max).min(1.0);
        let ad = (gamma * ad_max).min(1.0);

        for j in 0..nblk {
            xs[j] += &dir.dx[j] * C64::new(ap, 0.0);
            zs[j] += &dir.dz[j] * C64::new(ad, 0.0);
            hermitize(&mut xs[j]);
            hermitize(&mut zs[j]);
        }
        xl += &dir.dxl * ap;
        zl += &dir.dzl * ad;
        y += &dir.dy * ad;

        if ap.max(ad) < 1e-8 {
            stalls += 1;
            if stalls >= 3 {
                last.status = IpmStatus::Breakdown;
                last.detail = "step lengths collapsed".into();
                return finish(last, settings);
            }
        } else {
            stalls = 0;
        }
    }
    last.status = IpmStatus::MaxIterations;
    last.detail = "iteration limit".into();
    finish(last, settings)
}

/// Classifies a run that stopped before reaching full accuracy.
fn finish(mut out: IpmOutput, settings: &IpmSettings) -> IpmOutput {
    let t = settings.tol_inaccurate;
    if out.primal_infeasibility <= t && out.dual_infeasibility <= t && out.gap <= t {
        out.status = IpmStatus::Inaccurate;
    } else if out.dual_infeasibility > settings.infeasible_residual {
        out.detail = format!(
            "{}; residual {:.1e} above {:.0e}, treated as infeasible",
            out.detail, out.dual_infeasibility, settings.infeasible_residual
        );
        out.status = IpmStatus::Infeasible;
    }
    out
}
