//! Export to the sparse SDPA text format (`.dat-s`) for debugging with
//! external solvers.
//!
//! The program is lowered first (equalities eliminated, Hermitian blocks
//! replaced by their real embeddings), so the file describes
//!
//! ```text
//! minimize  -b^T y   subject to   sum_k y_k F_k - F_0 is PSD
//! ```
//!
//! with `F_k = -A_k` and `F_0 = -C`. Scalar rows are collected into a single
//! diagonal block written with a negative size, as the format requires.
//! The header comments list how many original coordinates were eliminated.

use std::io::Write;

use crate::lower::{lower, Field, LowerOutcome};
use crate::{ConicError, ConicProgram};

/// Writes `prog` in sparse SDPA format.
pub fn write_sdpa<W: Write>(prog: &ConicProgram, out: &mut W) -> Result<(), ConicError> {
    let lowered = match lower(prog, Field::RealEmbedding)? {
        LowerOutcome::Ready(l) => l,
        LowerOutcome::Infeasible(msg) | LowerOutcome::Unbounded(msg) => {
            return Err(ConicError::Malformed(format!("program cannot be exported: {msg}")))
        }
    };
    let p = &lowered.problem;
    let has_lp = !p.lp.c.is_empty();
    writeln!(out, "* exported Hermitian SDP, {} coordinates, {} after elimination", prog.coord_count(), p.m)?;
    writeln!(out, "* objective offset {:e}", lowered.objective_offset)?;
    writeln!(out, "{}", p.m)?;
    writeln!(out, "{}", p.blocks.len() + usize::from(has_lp))?;
    let mut sizes: Vec<String> = p.blocks.iter().map(|b| b.n.to_string()).collect();
    if has_lp {
        sizes.push(format!("-{}", p.lp.c.len()));
    }
    writeln!(out, "{}", sizes.join(" "))?;
    let costs: Vec<String> = p.b.iter().map(|v| format!("{:e}", -v)).collect();
    writeln!(out, "{}", costs.join(" "))?;

    for (j, blk) in p.blocks.iter().enumerate() {
        write_upper(out, 0, j + 1, &blk.c, -1.0)?;
        let mut per_var: std::collections::BTreeMap<usize, crate::CMatrix> = Default::default();
        for g in &blk.groups {
            for (k, l) in &g.terms {
                let inner = l.to_dense();
                let full = match &g.basis {
                    None => inner,
                    Some(u) => u * inner * u.adjoint(),
                };
                *per_var.entry(*k).or_insert_with(|| crate::CMatrix::zeros(blk.n, blk.n)) += full;
            }
        }
        for (k, a) in per_var {
            write_upper(out, k + 1, j + 1, &a, -1.0)?;
        }
    }
    if has_lp {
        let blk = p.blocks.len() + 1;
        for (l, (&c, row)) in p.lp.c.iter().zip(&p.lp.rows).enumerate() {
            if c != 0.0 {
                writeln!(out, "0 {blk} {} {} {:e}", l + 1, l + 1, -c)?;
            }
            for &(k, a) in row {
                writeln!(out, "{} {blk} {} {} {:e}", k + 1, l + 1, l + 1, -a)?;
            }
        }
    }
    Ok(())
}

fn write_upper<W: Write>(out: &mut W, mat: usize, blk: usize, m: &crate::CMatrix, sign: f64) -> std::io::Result<()> {
    for r in 0..m.nrows() {
        for c in r..m.ncols() {
            let v = m[(r, c)].re;
            if v.abs() > 1e-300 {
                writeln!(out, "{mat} {blk} {} {} {:e}", r + 1, c + 1, sign * v)?;
            }
        }
    }
    Ok(())
}
