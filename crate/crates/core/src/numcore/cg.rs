use super::linear_map::LinearMap;
use super::vec::{axpy, dot, norm};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final relative residual `|op(x) - rhs| / |rhs|`.
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Preconditioned conjugate gradients from a zero initial guess.
///
/// No restarts: a non-positive curvature `p^T op p` aborts with
/// [`Error::Breakdown`].
pub fn cg_solve(
    op: &dyn LinearMap,
    rhs: &[f64],
    tol: f64,
    max_iter: usize,
    precond: Option<&dyn LinearMap>,
) -> Result<CgSolution> {
    cg_solve_from(op, rhs, None, tol, max_iter, precond)
}

/// Preconditioned conjugate gradients from an optional initial guess.
pub fn cg_solve_from(
    op: &dyn LinearMap,
    rhs: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    precond: Option<&dyn LinearMap>,
) -> Result<CgSolution> {
    let n = rhs.len();
    check_len("cg operator rows", op.nrows(), n)?;
    check_len("cg operator cols", op.ncols(), n)?;
    if let Some(p) = precond {
        check_len("cg preconditioner", p.nrows(), n)?;
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("cg tolerance must be positive, got {tol}")));
    }
    let rhs_norm = norm(rhs);
    if rhs_norm == 0.0 {
        return Ok(CgSolution {
            x: vec![0.0; n],
            iterations: 0,
            residual: 0.0,
            history: vec![],
        });
    }

    let mut x = match x0 {
        Some(g) => {
            check_len("cg initial guess", n, g.len())?;
            g.to_vec()
        }
        None => vec![0.0; n],
    };
    let mut r = rhs.to_vec();
    if x0.is_some() {
        let ax = op.apply(&x);
        axpy(-1.0, &ax, &mut r);
    }
    let mut history = Vec::new();
    let mut rel = norm(&r) / rhs_norm;
    if rel <= tol {
        return Ok(CgSolution {
            x,
            iterations: 0,
            residual: rel,
            history,
        });
    }
    let apply_precond = |r: &[f64]| match precond {
        Some(p) => p.apply(r),
        None => r.to_vec(),
    };
    let mut z = apply_precond(&r);
    let mut rz = dot(&r, &z);
    let mut p = z.clone();

    for it in 1..=max_iter {
        let ap = op.apply(&p);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::Breakdown {
                iteration: it,
                curvature,
            });
        }
        let alpha = rz / curvature;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rel = norm(&r) / rhs_norm;
        history.push(rel);
        if rel <= tol {
            return Ok(CgSolution {
                x,
                iterations: it,
                residual: rel,
                history,
            });
        }
        z = apply_precond(&r);
        let rz_new = dot(&r, &z);
        if !(rz_new > 0.0) {
            return Err(Error::Breakdown {
                iteration: it,
                curvature: rz_new,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: rel,
        history,
    })
}
