use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::tangent::TangentMatrix;

const REFINE_STEPS: usize = 3;

/// Solves the equality-constrained least-squares step by assembling the
/// full `(n+1) x (n+1)` KKT system
///
/// ```text
/// [ 2 dX dX^T   -dx_i ] [ D^T      ]   [ 2 dX dF^T ]
/// [ dx_i^T        0   ] [ Lambda^T ] = [ df_i^T    ]
/// ```
///
/// and factoring it densely. Independent of the cached fast path in
/// [`WaspCache::solve`](super::WaspCache::solve); used to verify it.
///
/// Returns `(D, Lambda)` with `D` of shape `m x n`.
pub fn kkt_oracle(
    delta_x: &TangentMatrix,
    web: &DMatrix<f64>,
    i: usize,
    delta_f_i: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let dx = delta_x.matrix();
    let n = dx.nrows();
    let m = web.nrows();
    check_dim("kkt web columns", n, web.ncols())?;
    check_dim("kkt jvp length", m, delta_f_i.len())?;
    if i >= n {
        return Err(Error::InvalidParameter(format!(
            "constraint index {i} out of range for n = {n}"
        )));
    }

    let mut k = DMatrix::zeros(n + 1, n + 1);
    k.view_mut((0, 0), (n, n))
        .copy_from(&(dx * dx.transpose() * 2.0));
    for r in 0..n {
        k[(r, n)] = -dx[(r, i)];
        k[(n, r)] = dx[(r, i)];
    }

    let mut rhs = DMatrix::zeros(n + 1, m);
    rhs.view_mut((0, 0), (n, m))
        .copy_from(&(dx * web.transpose() * 2.0));
    rhs.row_mut(n).copy_from(&delta_f_i.transpose());

    let lu = k.full_piv_lu();
    let mut sol = lu.solve(&rhs).ok_or(Error::Singular("KKT matrix"))?;
    // Refinement against the unassembled system: the residual goes through
    // dX twice instead of through the rounded product dX dX^T.
    for _ in 0..REFINE_STEPS {
        let d_t = sol.rows(0, n).into_owned();
        let lambda_t = sol.row(n).into_owned();
        let mut res = DMatrix::zeros(n + 1, m);
        let inner = web.transpose() - dx.transpose() * &d_t;
        res.rows_mut(0, n)
            .copy_from(&(dx * inner * 2.0 + dx.column(i) * &lambda_t));
        res.row_mut(n)
            .copy_from(&(delta_f_i.transpose() - dx.column(i).transpose() * &d_t));
        match lu.solve(&res) {
            Some(step) => sol += step,
            None => break,
        }
    }
    let d = sol.view((0, 0), (n, m)).transpose();
    let lambda = sol.row(n).transpose();
    Ok((d, lambda))
}
