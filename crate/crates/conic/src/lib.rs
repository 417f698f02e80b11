//! Hermitian semidefinite programs: description, lowering and a built-in
//! primal-dual interior-point solver.
//!
//! Programs are written against complex Hermitian matrix variables and LMIs
//! (see [`ConicProgram`]); [`solve`] lowers them, runs the solver and audits
//! the answer independently before reporting it as optimal.

mod gemm;
mod hermitian;
mod ipm;
mod lower;
mod program;
pub mod sdpa;

pub use hermitian::{
    coordinate_basis, coordinates_to_matrix, eigenvalues, eigh_desc, embed_hermitian, extract_embedded,
    hermitian_coordinate_count, hermitian_coordinates, hermitian_residual, hermitize, hermitized,
    matrix_to_coordinates, min_eigenvalue, re_trace_product, CMatrix, CVector, Part, SparseHermitian, C64,
};
pub use ipm::IpmSettings;
pub use lower::Field;
pub use program::{
    Assignment, Audit, AuditEntry, ConicProgram, Coord, CongruenceGroup, LinearConstraint, LinearExpr, Lmi,
    MatrixVar, Relation, ScalarVar, Sign,
};

use ipm::IpmStatus;
use lower::LowerOutcome;

#[derive(Debug, thiserror::Error)]
pub enum ConicError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix is not Hermitian (residual {0:.3e})")]
    NotHermitian(f64),
    #[error("malformed program: {0}")]
    Malformed(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
    MaxIterations,
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    pub ipm: IpmSettings,
    pub field: Field,
    /// Relative tolerance of the post-solve feasibility audit.
    pub audit_tol: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self { ipm: IpmSettings::default(), field: Field::Complex, audit_tol: 1e-6 }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    /// Present exactly when `status` is [`SolveStatus::Optimal`].
    pub values: Option<Assignment>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub gap: f64,
    pub detail: String,
    /// Dual matrix of each LMI in declaration order, with the pairing
    /// `Re tr(F X)`. Present together with `values`.
    pub lmi_duals: Option<Vec<CMatrix>>,
}

impl SolveResult {
    fn without_values(status: SolveStatus, detail: String) -> Self {
        Self {
            status,
            values: None,
            objective: f64::NAN,
            iterations: 0,
            primal_infeasibility: f64::NAN,
            dual_infeasibility: f64::NAN,
            gap: f64::NAN,
            detail,
            lmi_duals: None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Solves `prog` (a maximization).
///
/// Malformed programs are reported as errors; every solver outcome,
/// including breakdown, is reported through [`SolveResult::status`].
pub fn solve(prog: &ConicProgram, settings: &Settings) -> Result<SolveResult, ConicError> {
    let lowered = match lower::lower(prog, settings.field)? {
        LowerOutcome::Ready(l) => l,
        LowerOutcome::Infeasible(msg) => return Ok(SolveResult::without_values(SolveStatus::Infeasible, msg)),
        LowerOutcome::Unbounded(msg) => {
            return Ok(SolveResult::without_values(SolveStatus::NumericalFailure, format!("unbounded: {msg}")))
        }
    };
    let out = ipm::solve(&lowered.problem, &settings.ipm);
    let mut result = SolveResult {
        status: SolveStatus::NumericalFailure,
        values: None,
        objective: f64::NAN,
        iterations: out.iterations,
        primal_infeasibility: out.primal_infeasibility,
        dual_infeasibility: out.dual_infeasibility,
        gap: out.gap,
        detail: out.detail.clone(),
        lmi_duals: None,
    };
    result.status = match out.status {
        IpmStatus::Converged | IpmStatus::Inaccurate => SolveStatus::Optimal,
        IpmStatus::Infeasible => SolveStatus::Infeasible,
        IpmStatus::Unbounded => {
            result.detail = format!("unbounded: {}", out.detail);
            SolveStatus::NumericalFailure
        }
        IpmStatus::MaxIterations => SolveStatus::MaxIterations,
        IpmStatus::Breakdown => SolveStatus::NumericalFailure,
    };
    if out.status == IpmStatus::Inaccurate {
        result.detail = "stopped at reduced accuracy".into();
    }
    if result.status != SolveStatus::Optimal {
        return Ok(result);
    }

    let x = project_psd_vars(prog, lowered.recover(&out.y), settings.audit_tol);
    let audit = prog.audit(&x);
    if !audit.passes(settings.audit_tol) {
        let worst = audit.violations(settings.audit_tol).first().map(|e| e.name.clone()).unwrap_or_default();
        result.status = SolveStatus::NumericalFailure;
        result.detail = format!("audit failed: {worst} (relative margin {:.2e})", audit.worst_relative());
        return Ok(result);
    }
    result.objective = prog.objective().evaluate(&x);
    result.values = Some(prog.assignment(&x));
    result.lmi_duals = Some(
        out.x
            .iter()
            .take(prog.lmis().len())
            .map(|d| match settings.field {
                Field::Complex => d.clone(),
                Field::RealEmbedding => extract_embedded(d) * C64::new(2.0, 0.0),
            })
            .collect(),
    );
    Ok(result)
}

/// Clips slightly negative eigenvalues of PSD matrix variables, keeping the
/// clipped point only if it still passes the audit.
fn project_psd_vars(prog: &ConicProgram, x: Vec<f64>, tol: f64) -> Vec<f64> {
    let mut clipped = x.clone();
    let mut changed = false;
    for v in prog.matrix_vars().iter().filter(|v| v.psd) {
        let m = v.value(&x);
        let (vals, vecs) = eigh_desc(&m);
        if vals.last().is_some_and(|&l| l < 0.0) {
            let d = CMatrix::from_diagonal(&CVector::from_iterator(vals.len(), vals.iter().map(|&l| C64::new(l.max(0.0), 0.0))));
            let p = &vecs * d * vecs.adjoint();
            for (k, value) in matrix_to_coordinates(&p).into_iter().enumerate() {
                clipped[v.offset + k] = value;
            }
            changed = true;
        }
    }
    if changed && prog.audit(&clipped).passes(tol) {
        clipped
    } else {
        x
    }
}
