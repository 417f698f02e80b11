//! Worst-case constraints over Frobenius error balls, their S-procedure LMIs
//! and the assembly of the active and passive subproblems.
//!
//! Every quadratic constraint has the form `vec(H)^H (S (x) Q) vec(H) >= c`
//! for all `H` in the ball of radius `delta` around the estimate. The
//! assembled LMIs are the S-procedure blocks after a congruence that
//! normalizes the estimate to unit norm and the powers by `P_max`, so that
//! all data handed to the solver is of order one.

use rand::Rng;
use serde::Serialize;

use nfstar_conic::{Assignment, ConicProgram, Coord, LinearExpr, Lmi, MatrixVar, Relation, ScalarVar, Sign, SparseHermitian};

use crate::config::Side;
use crate::geometry::{sample_uncertainty, ChannelSet};
use crate::metrics::{StarCoefficients, Thresholds, TransmitDesign};
use crate::{CMatrix, CVector, C64};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RobustError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("SINR threshold must be positive, got {0}")]
    Threshold(f64),
    #[error("exactly one of the surface and the transmit design must be fixed")]
    FixedVariables,
}

/// `vec(A)^H (D^T (x) B) vec(C)`, which equals `tr(A^H B C D)`.
pub fn kron_quadratic_form(a: &CMatrix, b: &CMatrix, c: &CMatrix, d: &CMatrix) -> Result<C64, RobustError> {
    let ok = a.nrows() == b.nrows() && b.ncols() == c.nrows() && a.ncols() == d.ncols() && c.ncols() == d.nrows() && b.is_square() && d.is_square();
    if !ok {
        return Err(RobustError::Dimension(format!(
            "A {}x{}, B {}x{}, C {}x{}, D {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            c.nrows(),
            c.ncols(),
            d.nrows(),
            d.ncols()
        )));
    }
    let k = d.transpose().kronecker(b);
    let va = CVector::from_column_slice(a.as_slice());
    let vc = CVector::from_column_slice(c.as_slice());
    Ok(va.dotc(&(k * vc)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SMatrices {
    pub s1: Vec<CMatrix>,
    pub s2: CMatrix,
    pub s3: Vec<CMatrix>,
    pub s4: CMatrix,
}

pub fn build_s_matrices(w: &[CMatrix], v: &CMatrix, gamma: f64, eta: f64) -> Result<SMatrices, RobustError> {
    if !(gamma > 0.0) {
        return Err(RobustError::Threshold(gamma));
    }
    if !(eta > 0.0) {
        return Err(RobustError::Threshold(eta));
    }
    if w.is_empty() {
        return Err(RobustError::Dimension("at least one beamformer is required".into()));
    }
    let mut total = v.clone();
    for wk in w {
        total += wk;
    }
    let s1 = w
        .iter()
        .map(|wk| {
            let others = &total - wk;
            (wk * C64::new(1.0 / gamma, 0.0) - others).transpose()
        })
        .collect();
    let s3 = w
        .iter()
        .map(|wk| {
            let others = &total - wk;
            (others - wk * C64::new(1.0 / eta, 0.0)).transpose()
        })
        .collect();
    let s2 = total.transpose();
    Ok(SMatrices { s1, s4: s2.clone(), s2, s3 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LmiKind {
    Ir,
    Energy,
    Eve,
    Sensing,
}

/// One worst-case constraint: which node, which side, which radius.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LmiFamily {
    pub kind: LmiKind,
    pub k: Option<usize>,
    pub e: Option<usize>,
    pub t: Option<usize>,
    pub side: Side,
    pub radius: f64,
}

impl LmiFamily {
    pub fn name(&self) -> String {
        match self.kind {
            LmiKind::Ir => format!("ir[{}]", self.k.unwrap()),
            LmiKind::Energy => format!("energy[{}]", self.e.unwrap()),
            LmiKind::Eve => format!("eve[{},{}]", self.e.unwrap(), self.k.unwrap()),
            LmiKind::Sensing => format!("sensing[{}]", self.t.unwrap()),
        }
    }

    pub fn estimate<'a>(&self, ch: &'a ChannelSet) -> &'a CMatrix {
        match self.kind {
            LmiKind::Ir => &ch.h_hat[self.k.unwrap()],
            LmiKind::Energy | LmiKind::Eve => &ch.f_hat[self.e.unwrap()],
            LmiKind::Sensing => &ch.ht_hat[self.t.unwrap()],
        }
    }

    pub fn s_matrix<'a>(&self, s: &'a SMatrices) -> &'a CMatrix {
        match self.kind {
            LmiKind::Ir => &s.s1[self.k.unwrap()],
            LmiKind::Energy => &s.s2,
            LmiKind::Eve => &s.s3[self.k.unwrap()],
            LmiKind::Sensing => &s.s4,
        }
    }

    /// Right-hand side `c` of `quadratic >= c`; `xi` only enters the
    /// energy family.
    pub fn offset(&self, thr: &Thresholds, xi: f64) -> f64 {
        match self.kind {
            LmiKind::Ir => thr.noise_ir,
            LmiKind::Energy => xi / thr.eh_efficiency[self.e.unwrap()],
            LmiKind::Eve => -thr.noise_er,
            LmiKind::Sensing => thr.lambda_gain,
        }
    }

    /// Coefficient of `W_j` (or of `V` when `j` is `None`) in this family's
    /// S matrix, before transposition.
    fn weight(&self, j: Option<usize>, gamma: f64, eta: f64) -> f64 {
        match (self.kind, j) {
            (LmiKind::Energy | LmiKind::Sensing, _) => 1.0,
            (LmiKind::Ir, None) => -1.0,
            (LmiKind::Ir, Some(j)) => {
                if Some(j) == self.k {
                    1.0 / gamma
                } else {
                    -1.0
                }
            }
            (LmiKind::Eve, None) => 1.0,
            (LmiKind::Eve, Some(j)) => {
                if Some(j) == self.k {
                    -1.0 / eta
                } else {
                    1.0
                }
            }
        }
    }
}

/// Energy, IR, Eve and sensing families, one per node on its own side.
pub fn families(ch: &ChannelSet) -> Vec<LmiFamily> {
    let mut out = Vec::new();
    for e in 0..ch.e() {
        out.push(LmiFamily { kind: LmiKind::Energy, k: None, e: Some(e), t: None, side: ch.er_side[e], radius: ch.delta_er[e] });
    }
    for k in 0..ch.k() {
        out.push(LmiFamily { kind: LmiKind::Ir, k: Some(k), e: None, t: None, side: ch.ir_side[k], radius: ch.delta_ir[k] });
    }
    for e in 0..ch.e() {
        for k in 0..ch.k() {
            out.push(LmiFamily { kind: LmiKind::Eve, k: Some(k), e: Some(e), t: None, side: ch.er_side[e], radius: ch.delta_er[e] });
        }
    }
    for t in 0..ch.t() {
        out.push(LmiFamily { kind: LmiKind::Sensing, k: None, e: None, t: Some(t), side: ch.tar_side[t], radius: ch.delta_tar[t] });
    }
    out
}

fn vec_of(h: &CMatrix) -> CVector {
    CVector::from_column_slice(h.as_slice())
}

fn kron_sq(s: &CMatrix, q: &CMatrix) -> CMatrix {
    let mut a = s.kronecker(q);
    nfstar_conic::hermitize(&mut a);
    a
}

/// `Re vec(H)^H (S (x) Q) vec(H)`
pub fn quadratic_value(h: &CMatrix, q: &CMatrix, s: &CMatrix) -> f64 {
    // tr(H^H Q H S^T)
    let b = h.adjoint() * q * h;
    nfstar_conic::re_trace_product(&b, &s.transpose())
}

/// The S-procedure block with its raw (unnormalized) data.
pub fn build_lmi(h_hat: &CMatrix, q: &CMatrix, s: &CMatrix, delta: f64, offset: f64, tau: f64) -> Result<CMatrix, RobustError> {
    let (n, m) = (h_hat.nrows(), h_hat.ncols());
    if q.nrows() != n || q.ncols() != n || s.nrows() != m || s.ncols() != m {
        return Err(RobustError::Dimension(format!("H {n}x{m}, Q {}x{}, S {}x{}", q.nrows(), q.ncols(), s.nrows(), s.ncols())));
    }
    let a = kron_sq(s, q);
    let h = vec_of(h_hat);
    let ah = &a * &h;
    let mn = m * n;
    let mut out = CMatrix::zeros(mn + 1, mn + 1);
    out.view_mut((0, 0), (mn, mn)).copy_from(&a);
    for i in 0..mn {
        out[(i, i)] += C64::new(tau, 0.0);
        out[(i, mn)] = ah[i];
        out[(mn, i)] = ah[i].conj();
    }
    out[(mn, mn)] = C64::new(h.dotc(&ah).re - offset - tau * delta * delta, 0.0);
    Ok(out)
}

/// Minimizer of `d^H A d + 2 Re(g^H d)` over `|d| <= delta`.
pub fn trust_region_min(a: &CMatrix, g: &CVector, delta: f64) -> CVector {
    let n = g.len();
    if delta <= 0.0 || n == 0 {
        return CVector::zeros(n);
    }
    let eig = a.clone().symmetric_eigen();
    let lam: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let beta: Vec<C64> = (0..n).map(|i| eig.eigenvectors.column(i).dotc(g)).collect();
    let lmin = lam.iter().copied().fold(f64::INFINITY, f64::min);
    let scale = lam.iter().fold(0.0f64, |a, &l| a.max(l.abs())).max(1e-300);
    let build = |x: &[C64]| -> CVector {
        let mut d = CVector::zeros(n);
        for (i, xi) in x.iter().enumerate() {
            d += eig.eigenvectors.column(i) * *xi;
        }
        d
    };
    let norm_at = |mu: f64| -> f64 {
        lam.iter().zip(&beta).map(|(l, b)| b.norm_sqr() / (l + mu).powi(2)).sum::<f64>().sqrt()
    };
    if lmin > 1e-12 * scale {
        let x: Vec<C64> = lam.iter().zip(&beta).map(|(l, b)| -b / *l).collect();
        if x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt() <= delta {
            return build(&x);
        }
    }
    let mu_lo = (-lmin).max(0.0);
    let tol = 1e-12 * scale;
    // Hard case: the gradient has no weight on the lowest eigenspace.
    let hard_norm: f64 = lam
        .iter()
        .zip(&beta)
        .filter(|(l, _)| **l > lmin + tol)
        .map(|(l, b)| b.norm_sqr() / (l + mu_lo).powi(2))
        .sum::<f64>()
        .sqrt();
    let weight_low: f64 = lam.iter().zip(&beta).filter(|(l, _)| **l <= lmin + tol).map(|(_, b)| b.norm_sqr()).sum();
    if weight_low <= (1e-14 * scale * delta).powi(2) && hard_norm <= delta {
        let mut x: Vec<C64> =
            lam.iter().zip(&beta).map(|(l, b)| if *l > lmin + tol { -b / (l + mu_lo) } else { C64::new(0.0, 0.0) }).collect();
        let i_low = lam.iter().position(|&l| l <= lmin + tol).unwrap();
        x[i_low] = C64::new((delta * delta - hard_norm * hard_norm).max(0.0).sqrt(), 0.0);
        return build(&x);
    }
    let gnorm = beta.iter().map(|b| b.norm_sqr()).sum::<f64>().sqrt();
    let mut lo = mu_lo;
    let mut hi = mu_lo + gnorm / delta + scale;
    while norm_at(hi) > delta {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if norm_at(mid) > delta {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let x: Vec<C64> = lam.iter().zip(&beta).map(|(l, b)| -b / (l + hi)).collect();
    let mut d = build(&x);
    let dn = d.norm();
    if dn > delta {
        d *= C64::new(delta / dn, 0.0);
    }
    d
}

#[derive(Debug, Clone)]
pub struct WorstCase {
    /// `min quadratic - offset` over the ball.
    pub margin: f64,
    pub perturbation: CMatrix,
}

/// Exact worst case of one constraint over its error ball.
pub fn worst_case_margin(h_hat: &CMatrix, q: &CMatrix, s: &CMatrix, delta: f64, offset: f64) -> WorstCase {
    let a = kron_sq(s, q);
    let h = vec_of(h_hat);
    let g = &a * &h;
    let d = trust_region_min(&a, &g, delta);
    let x = &h + &d;
    let margin = x.dotc(&(&a * &x)).re - offset;
    WorstCase { margin, perturbation: CMatrix::from_column_slice(h_hat.nrows(), h_hat.ncols(), d.as_slice()) }
}

/// Size against which margins of one constraint are judged.
pub fn constraint_scale(h_hat: &CMatrix, q: &CMatrix, s: &CMatrix, delta: f64, offset: f64) -> f64 {
    let sn = s.norm();
    let qn = q.norm();
    offset.abs() + sn * qn * (h_hat.norm() + delta).powi(2)
}

#[derive(Debug, Clone, Serialize)]
pub struct SProcedureReport {
    pub family: String,
    pub samples: usize,
    pub violations: usize,
    /// Smallest `quadratic - offset` seen.
    pub worst_margin: f64,
    pub worst_relative: f64,
    pub scale: f64,
}

/// Evaluates the underlying quadratic constraint at the estimate, at the
/// exact worst case, at the first-order worst direction and at random
/// interior/boundary perturbations; counts margins below `-tol * scale`.
#[allow(clippy::too_many_arguments)]
pub fn verify_s_procedure<R: Rng + ?Sized>(
    name: &str,
    h_hat: &CMatrix,
    q: &CMatrix,
    s: &CMatrix,
    delta: f64,
    offset: f64,
    n_samples: usize,
    tol: f64,
    rng: &mut R,
) -> SProcedureReport {
    let (n, m) = (h_hat.nrows(), h_hat.ncols());
    let scale = constraint_scale(h_hat, q, s, delta, offset).max(1e-300);
    let a = kron_sq(s, q);
    let h = vec_of(h_hat);
    let eval = |d: &CVector| {
        let x = &h + d;
        x.dotc(&(&a * &x)).re - offset
    };
    let mut margins = vec![eval(&CVector::zeros(n * m))];
    if delta > 0.0 {
        let g = &a * &h;
        margins.push(eval(&trust_region_min(&a, &g, delta)));
        let gn = g.norm();
        if gn > 0.0 {
            margins.push(eval(&(&g * C64::new(-delta / gn, 0.0))));
        }
        while margins.len() < n_samples.max(1) {
            let d = sample_uncertainty(delta, n, m, 0.5, rng);
            margins.push(eval(&vec_of(&d)));
        }
    }
    let worst = margins.iter().copied().fold(f64::INFINITY, f64::min);
    SProcedureReport {
        family: name.to_string(),
        samples: margins.len(),
        violations: margins.iter().filter(|&&v| v < -tol * scale).count(),
        worst_margin: worst,
        worst_relative: worst / scale,
        scale,
    }
}

/// Runs [`verify_s_procedure`] on every family of a lifted design.
#[allow(clippy::too_many_arguments)]
pub fn verify_design<R: Rng + ?Sized>(
    w: &[CMatrix],
    v: &CMatrix,
    q: [&CMatrix; 2],
    xi: f64,
    channels: &ChannelSet,
    thr: &Thresholds,
    n_samples: usize,
    tol: f64,
    rng: &mut R,
) -> Result<Vec<(LmiFamily, SProcedureReport)>, RobustError> {
    let s = build_s_matrices(w, v, thr.gamma(), thr.eta())?;
    Ok(families(channels)
        .into_iter()
        .map(|f| {
            let rep = verify_s_procedure(
                &f.name(),
                f.estimate(channels),
                q[f.side.index()],
                f.s_matrix(&s),
                f.radius,
                f.offset(thr, xi),
                n_samples,
                tol,
                rng,
            );
            (f, rep)
        })
        .collect())
}

/// Exact worst-case margin of every family, relative to its scale.
pub fn worst_case_margins(
    w: &[CMatrix],
    v: &CMatrix,
    q: [&CMatrix; 2],
    xi: f64,
    channels: &ChannelSet,
    thr: &Thresholds,
) -> Result<Vec<(LmiFamily, f64)>, RobustError> {
    let s = build_s_matrices(w, v, thr.gamma(), thr.eta())?;
    Ok(families(channels)
        .into_iter()
        .map(|f| {
            let (h, qq, ss) = (f.estimate(channels), q[f.side.index()], f.s_matrix(&s));
            let off = f.offset(thr, xi);
            let wc = worst_case_margin(h, qq, ss, f.radius, off);
            let rel = wc.margin / constraint_scale(h, qq, ss, f.radius, off).max(1e-300);
            (f, rel)
        })
        .collect())
}

/// Largest `xi` for which the energy constraints hold in the worst case.
pub fn worst_case_xi(w: &[CMatrix], v: &CMatrix, q: [&CMatrix; 2], channels: &ChannelSet, thr: &Thresholds) -> Result<f64, RobustError> {
    let s = build_s_matrices(w, v, thr.gamma(), thr.eta())?;
    Ok(families(channels)
        .into_iter()
        .filter(|f| f.kind == LmiKind::Energy)
        .map(|f| {
            let wc = worst_case_margin(f.estimate(channels), q[f.side.index()], &s.s2, f.radius, 0.0);
            wc.margin * thr.eh_efficiency[f.e.unwrap()]
        })
        .fold(f64::INFINITY, f64::min))
}

/// How a zero-radius family is written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ZeroRadius {
    /// The nominal scalar inequality (the limit of the LMI as its
    /// multiplier grows without bound).
    #[default]
    Scalar,
    /// Keep the S-procedure block with radius zero.
    Lmi,
}

/// Deliberate corruption used as a negative control for the oracles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mutation {
    /// `+tau delta^2` instead of `-tau delta^2` in every Eve corner.
    EveCornerSignFlip,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AssemblyOptions {
    pub zero_radius: ZeroRadius,
    pub mutation: Option<Mutation>,
}

/// Units of the normalized program variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    /// Power unit of `W` and `V`.
    pub p_max: f64,
    /// Power unit of `xi`.
    pub xi_unit: f64,
}

impl Normalization {
    pub fn new(channels: &ChannelSet, thr: &Thresholds) -> Self {
        let xi_unit = channels
            .f_hat
            .iter()
            .zip(&thr.eh_efficiency)
            .map(|(f, eta)| eta * f.norm_squared())
            .fold(0.0, f64::max)
            * thr.p_max;
        Self { p_max: thr.p_max, xi_unit: if xi_unit > 0.0 { xi_unit } else { 1.0 } }
    }
}

struct FamilyRow {
    name: String,
    h_unit: CVector,
    rho2: f64,
    /// Normalized constant of the corner entry.
    corner: f64,
    /// Normalized coefficient of `xi` in the corner entry.
    xi_coef: f64,
    tau_corner_sign: f64,
}

fn family_row(f: &LmiFamily, ch: &ChannelSet, thr: &Thresholds, norm: &Normalization, opts: &AssemblyOptions) -> FamilyRow {
    let h = f.estimate(ch);
    let hn = h.norm();
    let hn = if hn > 0.0 { hn } else { 1.0 };
    let unit = norm.p_max * hn * hn;
    let (corner, xi_coef) = match f.kind {
        LmiKind::Energy => (0.0, -norm.xi_unit / (thr.eh_efficiency[f.e.unwrap()] * unit)),
        _ => (-f.offset(thr, 0.0) / unit, 0.0),
    };
    let tau_corner_sign = match (f.kind, opts.mutation) {
        (LmiKind::Eve, Some(Mutation::EveCornerSignFlip)) => 1.0,
        _ => -1.0,
    };
    FamilyRow {
        name: f.name(),
        h_unit: vec_of(h) / C64::new(hn, 0.0),
        rho2: (f.radius / hn).powi(2),
        corner,
        xi_coef,
        tau_corner_sign,
    }
}

/// Adds one family: `U (sum_i x_i L_i) U^H + tau diag(I, -rho^2) + corner`
/// with `U = [B; h^H B]`, or its scalar limit when the radius is zero.
fn add_family(
    prog: &mut ConicProgram,
    row: &FamilyRow,
    basis_top: &CMatrix,
    inner: Vec<(Coord, SparseHermitian)>,
    xi: &ScalarVar,
    opts: &AssemblyOptions,
) {
    let mn = basis_top.nrows();
    if row.rho2 == 0.0 && opts.zero_radius == ZeroRadius::Scalar {
        let v = basis_top.adjoint() * &row.h_unit;
        let mut expr = LinearExpr::constant(row.corner);
        for (c, l) in &inner {
            let mut val = 0.0;
            for &(a, b, w) in &l.entries {
                val += (v[a].conj() * w * v[b]).re;
            }
            expr.push(*c, val);
        }
        if row.xi_coef != 0.0 {
            expr.push(xi.coord, row.xi_coef);
        }
        prog.add_linear(row.name.clone(), expr, Relation::Ge);
        return;
    }
    let tau = prog.add_scalar_var(format!("tau_{}", row.name), Sign::NonNeg);
    // Off the range of the basis the top block is tau * I and decouples from
    // the corner, so the LMI is compressed onto that range (tau >= 0 holds).
    let range = orthonormal_range(basis_top);
    let top = if range.ncols() < mn { range.adjoint() * basis_top } else { basis_top.clone() };
    let mn = top.nrows();
    let n = mn + 1;
    let p = top.ncols();
    let mut u = CMatrix::zeros(n, p);
    u.view_mut((0, 0), (mn, p)).copy_from(&top);
    let last = row.h_unit.adjoint() * basis_top;
    u.row_mut(mn).copy_from(&last);
    let mut lmi = Lmi::new(row.name.clone(), n);
    let mut constant = CMatrix::zeros(n, n);
    constant[(mn, mn)] = C64::new(row.corner, 0.0);
    lmi.set_constant(constant);
    if p > 0 && !inner.is_empty() {
        lmi.add_congruence(u, inner);
    }
    let mut tau_entries: Vec<(usize, usize, C64)> = (0..mn).map(|i| (i, i, C64::new(1.0, 0.0))).collect();
    tau_entries.push((mn, mn, C64::new(row.tau_corner_sign * row.rho2, 0.0)));
    let mut plain = vec![(tau.coord, SparseHermitian { dim: n, entries: tau_entries })];
    if row.xi_coef != 0.0 {
        plain.push((xi.coord, SparseHermitian { dim: n, entries: vec![(mn, mn, C64::new(row.xi_coef, 0.0))] }));
    }
    lmi.add_terms(plain);
    prog.add_lmi(lmi);
}

/// Orthonormal basis of the column space (the identity at full row rank).
fn orthonormal_range(b: &CMatrix) -> CMatrix {
    let (rows, cols) = b.shape();
    if cols == 0 {
        return CMatrix::zeros(rows, 0);
    }
    let g = nfstar_conic::hermitized(&(b * b.adjoint()));
    let (vals, vecs) = nfstar_conic::eigh_desc(&g);
    let top = vals[0].max(0.0);
    let keep = vals.iter().take_while(|&&v| v > 1e-12 * top && v > 0.0).count();
    if keep == rows {
        return CMatrix::identity(rows, rows);
    }
    vecs.columns(0, keep).into_owned()
}

/// `A (x) I_r` as sparse data.
fn kron_identity(a: &CMatrix, r: usize) -> SparseHermitian {
    let m = a.nrows();
    let mut entries = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let v = a[(i, j)];
            if v != C64::new(0.0, 0.0) {
                for t in 0..r {
                    entries.push((i * r + t, j * r + t, v));
                }
            }
        }
    }
    SparseHermitian { dim: m * r, entries }
}

/// Factor `R` with `Q = R R^H`, dropping negligible eigenvalues.
pub fn psd_factor(q: &CMatrix) -> CMatrix {
    let (vals, vecs) = nfstar_conic::eigh_desc(q);
    let top = vals.first().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > 1e-12 * top && vals[i] > 0.0).collect();
    let mut r = CMatrix::zeros(q.nrows(), keep.len());
    for (j, &i) in keep.iter().enumerate() {
        r.set_column(j, &(vecs.column(i) * C64::new(vals[i].sqrt(), 0.0)));
    }
    r
}

/// Parameterization of one beamformer in the active program.
#[derive(Debug, Clone, PartialEq)]
pub enum WParam {
    /// General PSD matrix.
    Full,
    /// `W = c q q^H` with `c >= 0`.
    Ray(CVector),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActiveOptions {
    pub w_param: Vec<WParam>,
    /// Whether the dedicated sensing covariance is a variable (otherwise 0).
    pub sensing: bool,
    /// Per-user cut `q^H W q >= u tr W`.
    pub cuts: Vec<Option<(CVector, f64)>>,
}

impl ActiveOptions {
    pub fn relaxed(k: usize) -> Self {
        Self { w_param: vec![WParam::Full; k], sensing: true, cuts: vec![None; k] }
    }
}

#[derive(Debug, Clone)]
enum WHandle {
    Full(MatrixVar),
    Ray(ScalarVar, CVector),
}

impl WHandle {
    /// `W = sum coord * B`
    fn terms(&self) -> Vec<(Coord, CMatrix)> {
        match self {
            WHandle::Full(v) => v.basis().into_iter().map(|(c, e)| (c, e.to_dense())).collect(),
            WHandle::Ray(c, q) => vec![(c.coord, q * q.adjoint())],
        }
    }
}

pub struct ActiveProgram {
    pub program: ConicProgram,
    pub norm: Normalization,
    w: Vec<WHandle>,
    v: Option<MatrixVar>,
    xi: ScalarVar,
}

#[derive(Debug, Clone)]
pub struct ActiveSolution {
    pub w: Vec<CMatrix>,
    pub v: CMatrix,
    pub xi: f64,
}

impl ActiveProgram {
    pub fn decode(&self, a: &Assignment) -> ActiveSolution {
        let p = C64::new(self.norm.p_max, 0.0);
        let w = self
            .w
            .iter()
            .map(|h| {
                let mut m = match h {
                    WHandle::Full(v) => a.matrix(v),
                    WHandle::Ray(c, q) => q * q.adjoint() * C64::new(a.scalar(c).max(0.0), 0.0),
                };
                nfstar_conic::hermitize(&mut m);
                m * p
            })
            .collect();
        let m = self.w_dim();
        let v = self.v.as_ref().map_or_else(|| CMatrix::zeros(m, m), |v| a.matrix(v) * p);
        ActiveSolution { w, v, xi: a.scalar(&self.xi) * self.norm.xi_unit }
    }

    fn w_dim(&self) -> usize {
        match &self.w[0] {
            WHandle::Full(v) => v.dim,
            WHandle::Ray(_, q) => q.len(),
        }
    }
}

/// Active subproblem for fixed surface matrices `q = [Q_t, Q_r]`.
pub fn assemble_active(
    channels: &ChannelSet,
    thr: &Thresholds,
    q: [&CMatrix; 2],
    opts: &ActiveOptions,
    aopts: &AssemblyOptions,
) -> Result<ActiveProgram, RobustError> {
    let (m, n, k) = (channels.m(), channels.n(), channels.k());
    if opts.w_param.len() != k || opts.cuts.len() != k {
        return Err(RobustError::Dimension("one parameterization and cut slot per IR required".into()));
    }
    for qs in q {
        if qs.nrows() != n || qs.ncols() != n {
            return Err(RobustError::Dimension(format!("surface matrix must be {n}x{n}")));
        }
    }
    let (gamma, eta) = (thr.gamma(), thr.eta());
    if !(gamma > 0.0) || !(eta > 0.0) {
        return Err(RobustError::Threshold(gamma.min(eta)));
    }
    let norm = Normalization::new(channels, thr);
    let mut prog = ConicProgram::new();
    let w: Vec<WHandle> = opts
        .w_param
        .iter()
        .enumerate()
        .map(|(j, p)| match p {
            WParam::Full => WHandle::Full(prog.add_matrix_var(format!("W{j}"), m, true)),
            WParam::Ray(q) => WHandle::Ray(prog.add_scalar_var(format!("c{j}"), Sign::NonNeg), q.clone()),
        })
        .collect();
    let v = opts.sensing.then(|| prog.add_matrix_var("V", m, true));
    let xi = prog.add_scalar_var("xi", Sign::Free);

    let w_terms: Vec<Vec<(Coord, CMatrix)>> = w.iter().map(|h| h.terms()).collect();
    let v_terms: Vec<(Coord, CMatrix)> = v.as_ref().map_or_else(Vec::new, |v| WHandle::Full(v.clone()).terms());

    // Power budget.
    let mut power = LinearExpr::constant(1.0);
    for (c, b) in w_terms.iter().flatten().chain(v_terms.iter()) {
        power.push(*c, -b.trace().re);
    }
    prog.add_linear("power", power, Relation::Ge);

    // Eigenvector cuts.
    for (j, cut) in opts.cuts.iter().enumerate() {
        if let Some((qv, u)) = cut {
            if *u > 0.0 && matches!(w[j], WHandle::Full(_)) {
                let mut expr = LinearExpr::new();
                for (c, b) in &w_terms[j] {
                    expr.push(*c, qv.dotc(&(b * qv)).re - u * b.trace().re);
                }
                prog.add_linear(format!("cut{j}"), expr, Relation::Ge);
            }
        }
    }

    let factors: Vec<CMatrix> = q.iter().map(|qs| psd_factor(qs)).collect();
    let bases: Vec<CMatrix> = factors.iter().map(|r| CMatrix::identity(m, m).kronecker(r)).collect();
    for f in families(channels) {
        let row = family_row(&f, channels, thr, &norm, aopts);
        let r = factors[f.side.index()].ncols();
        let mut inner = Vec::new();
        for (j, terms) in w_terms.iter().enumerate() {
            let wt = f.weight(Some(j), gamma, eta);
            for (c, b) in terms {
                inner.push((*c, kron_identity(&(b.transpose() * C64::new(wt, 0.0)), r)));
            }
        }
        let wt = f.weight(None, gamma, eta);
        for (c, b) in &v_terms {
            inner.push((*c, kron_identity(&(b.transpose() * C64::new(wt, 0.0)), r)));
        }
        inner.retain(|(_, l)| !l.is_empty());
        add_family(&mut prog, &row, &bases[f.side.index()], inner, &xi, aopts);
    }
    prog.set_objective(LinearExpr::term(xi.coord, 1.0));
    Ok(ActiveProgram { program: prog, norm, w, v, xi })
}

/// Elements each side may use.
#[derive(Debug, Clone, PartialEq)]
pub struct SideSelection {
    pub n: usize,
    pub t: Vec<usize>,
    pub r: Vec<usize>,
}

impl SideSelection {
    /// Energy splitting: every element serves both sides.
    pub fn all(n: usize) -> Self {
        Self { n, t: (0..n).collect(), r: (0..n).collect() }
    }

    /// Even elements transmit, odd elements reflect.
    pub fn alternating(n: usize) -> Self {
        Self { n, t: (0..n).step_by(2).collect(), r: (1..n).step_by(2).collect() }
    }

    pub fn get(&self, side: Side) -> &[usize] {
        match side {
            Side::T => &self.t,
            Side::R => &self.r,
        }
    }

    pub fn is_split(&self) -> bool {
        self.t.len() + self.r.len() == self.n
    }

    /// Selection matrix `J` with `Q_full = J Q J^H`.
    pub fn matrix(&self, side: Side) -> CMatrix {
        let sel = self.get(side);
        let mut j = CMatrix::zeros(self.n, sel.len());
        for (c, &r) in sel.iter().enumerate() {
            j[(r, c)] = C64::new(1.0, 0.0);
        }
        j
    }

    pub fn restrict(&self, side: Side, q_full: &CMatrix) -> CMatrix {
        let j = self.matrix(side);
        j.adjoint() * q_full * j
    }

    pub fn expand(&self, side: Side, q: &CMatrix) -> CMatrix {
        let j = self.matrix(side);
        &j * q * j.adjoint()
    }
}

/// Penalty on `tr Q - kappa^H Q kappa` per side (the linearized rank gap).
#[derive(Debug, Clone, PartialEq)]
pub struct PenaltyTerm {
    pub gamma: f64,
    /// Dominant eigenvector of the expansion point, per side, in the
    /// coordinates of the selected elements.
    pub kappa: [CVector; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PassiveOptions {
    pub selection: SideSelection,
    pub penalty: Option<PenaltyTerm>,
}

pub struct PassiveProgram {
    pub program: ConicProgram,
    pub norm: Normalization,
    pub selection: SideSelection,
    q: [MatrixVar; 2],
    xi: ScalarVar,
}

#[derive(Debug, Clone)]
pub struct PassiveSolution {
    /// Full `N x N` matrices `[Q_t, Q_r]`.
    pub q: [CMatrix; 2],
    /// Matrices over the selected elements.
    pub q_sel: [CMatrix; 2],
    pub xi: f64,
}

impl PassiveProgram {
    pub fn decode(&self, a: &Assignment) -> PassiveSolution {
        let q_sel = [a.matrix(&self.q[0]), a.matrix(&self.q[1])];
        let q = [self.selection.expand(Side::T, &q_sel[0]), self.selection.expand(Side::R, &q_sel[1])];
        PassiveSolution { q, q_sel, xi: a.scalar(&self.xi) * self.norm.xi_unit }
    }
}

/// Passive subproblem for a fixed lifted transmit design.
pub fn assemble_passive(
    channels: &ChannelSet,
    thr: &Thresholds,
    w: &[CMatrix],
    v: &CMatrix,
    opts: &PassiveOptions,
    aopts: &AssemblyOptions,
) -> Result<PassiveProgram, RobustError> {
    let (m, n) = (channels.m(), channels.n());
    if w.len() != channels.k() || v.nrows() != m || w.iter().any(|x| x.nrows() != m) {
        return Err(RobustError::Dimension("design does not match channels".into()));
    }
    if opts.selection.n != n {
        return Err(RobustError::Dimension("selection size differs from surface size".into()));
    }
    let norm = Normalization::new(channels, thr);
    let s = build_s_matrices(w, v, thr.gamma(), thr.eta())?;
    let mut prog = ConicProgram::new();
    let sel = &opts.selection;
    let qv = [
        prog.add_matrix_var("Qt", sel.t.len(), true),
        prog.add_matrix_var("Qr", sel.r.len(), true),
    ];
    let xi = prog.add_scalar_var("xi", Sign::Free);

    // Amplitude constraints on the diagonal.
    for e in 0..n {
        let mut expr = LinearExpr::constant(-1.0);
        for side in Side::BOTH {
            if let Some(pos) = sel.get(side).iter().position(|&x| x == e) {
                expr.push(qv[side.index()].coord(pos, pos, nfstar_conic::Part::Re), 1.0);
            }
        }
        if !expr.terms.is_empty() {
            prog.add_linear(format!("beta{e}"), expr, Relation::Eq);
        }
    }

    let q_basis: [Vec<(Coord, SparseHermitian)>; 2] = [qv[0].basis(), qv[1].basis()];
    let js = [sel.matrix(Side::T), sel.matrix(Side::R)];
    for f in families(channels) {
        let row = family_row(&f, channels, thr, &norm, aopts);
        let si = f.s_matrix(&s) / C64::new(norm.p_max, 0.0);
        let (vals, vecs) = nfstar_conic::eigh_desc(&nfstar_conic::hermitized(&si));
        let top = vals.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        let keep: Vec<usize> = (0..m).filter(|&i| vals[i].abs() > 1e-12 * top && top > 0.0).collect();
        let pk = CMatrix::from_fn(m, keep.len(), |r, c| vecs[(r, keep[c])]);
        let j = &js[f.side.index()];
        let nl = j.ncols();
        let basis_top = pk.kronecker(j);
        debug_assert_eq!(basis_top.nrows(), m * n);
        let inner: Vec<(Coord, SparseHermitian)> = q_basis[f.side.index()]
            .iter()
            .map(|(c, e)| {
                let mut entries = Vec::with_capacity(keep.len() * e.entries.len());
                for (i, &ki) in keep.iter().enumerate() {
                    let d = vals[ki];
                    for &(a, b, val) in &e.entries {
                        entries.push((i * nl + a, i * nl + b, val * d));
                    }
                }
                (*c, SparseHermitian { dim: keep.len() * nl, entries })
            })
            .collect();
        add_family(&mut prog, &row, &basis_top, inner, &xi, aopts);
    }

    let mut obj = LinearExpr::term(xi.coord, 1.0);
    if let Some(pen) = &opts.penalty {
        for side in Side::BOTH {
            let var = &qv[side.index()];
            let kappa = &pen.kappa[side.index()];
            let gap_matrix = CMatrix::identity(var.dim, var.dim) - kappa * kappa.adjoint();
            obj.extend(LinearExpr::trace_with(var, &gap_matrix, -pen.gamma));
        }
    }
    prog.set_objective(obj);
    Ok(PassiveProgram { program: prog, norm, selection: opts.selection.clone(), q: qv, xi })
}

pub enum Assembled {
    Active(ActiveProgram),
    Passive(PassiveProgram),
}

impl Assembled {
    pub fn program(&self) -> &ConicProgram {
        match self {
            Assembled::Active(a) => &a.program,
            Assembled::Passive(p) => &p.program,
        }
    }
}

/// Robust program with exactly one variable group fixed: the surface
/// (giving the relaxed active problem) or the transmit design (giving the
/// energy-splitting passive problem).
pub fn assemble_robust_program(
    channels: &ChannelSet,
    thr: &Thresholds,
    star: Option<&StarCoefficients>,
    design: Option<&TransmitDesign>,
    aopts: &AssemblyOptions,
) -> Result<Assembled, RobustError> {
    match (star, design) {
        (Some(star), None) => Ok(Assembled::Active(assemble_active(
            channels,
            thr,
            [&star.t.q, &star.r.q],
            &ActiveOptions::relaxed(channels.k()),
            aopts,
        )?)),
        (None, Some(d)) => Ok(Assembled::Passive(assemble_passive(
            channels,
            thr,
            &d.lifted(),
            &d.v,
            &PassiveOptions { selection: SideSelection::all(channels.n()), penalty: None },
            aopts,
        )?)),
        _ => Err(RobustError::FixedVariables),
    }
}
