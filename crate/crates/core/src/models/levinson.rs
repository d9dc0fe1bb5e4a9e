//! Partial autocorrelations to AR coefficients, with first and second
//! derivatives propagated through the order recursion
//!
//! ```text
//! a_m^{(m)} = β_m
//! a_j^{(m)} = a_j^{(m-1)} − β_m a_{m-j}^{(m-1)},   j = 1, …, m−1
//! ```
//!
//! All indices below are zero-based: `a[j]` holds `a_{j+1}`.

use alloc::vec;
use alloc::vec::Vec;

/// AR coefficients `a^{(M)}` for PARCORs `β_1 … β_M`.
pub fn levinson_expand(beta: &[f64]) -> Vec<f64> {
    let mut a: Vec<f64> = Vec::with_capacity(beta.len());
    for (m, &bm) in beta.iter().enumerate() {
        let prev = a.clone();
        for j in 0..m {
            a[j] = prev[j] - bm * prev[m - 1 - j];
        }
        a.push(bm);
    }
    a
}

/// `J[k][i] = ∂a_k/∂β_i` for the full order.
pub fn levinson_jacobian(beta: &[f64]) -> Vec<Vec<f64>> {
    levinson_with_derivatives(beta).1
}

/// `T[k][i][j] = ∂²a_k/∂β_i∂β_j`, symmetric in `(i, j)`.
pub fn levinson_hessian(beta: &[f64]) -> Vec<Vec<Vec<f64>>> {
    levinson_with_derivatives(beta).2
}

/// Coefficients, Jacobian and second-derivative tensor in one pass.
#[allow(clippy::type_complexity)]
pub fn levinson_with_derivatives(beta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let order = beta.len();
    // Tables are sized for the final order; entries for β_i with i ≥ m stay
    // zero while building order m.
    let mut a = vec![0.0; order];
    let mut jac = vec![vec![0.0; order]; order];
    let mut hess = vec![vec![vec![0.0; order]; order]; order];

    for m in 0..order {
        let bm = beta[m];
        let a_prev = a.clone();
        let jac_prev = jac.clone();
        let hess_prev = hess.clone();
        for k in 0..m {
            let mirror = m - 1 - k;
            a[k] = a_prev[k] - bm * a_prev[mirror];
            for i in 0..m {
                jac[k][i] = jac_prev[k][i] - bm * jac_prev[mirror][i];
                for j in 0..m {
                    hess[k][i][j] = hess_prev[k][i][j] - bm * hess_prev[mirror][i][j];
                }
                // pairs with β_m: ∂/∂β_m of −β_m a_{m-k}^{(m-1)}
                hess[k][i][m] = -jac_prev[mirror][i];
                hess[k][m][i] = -jac_prev[mirror][i];
            }
            jac[k][m] = -a_prev[mirror];
            hess[k][m][m] = 0.0;
        }
        a[m] = bm;
        jac[m][m] = 1.0;
    }
    (a, jac, hess)
}
