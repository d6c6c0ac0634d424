//! Sensitivity of the emptiness-LP optimum `v*` to the equality data `(A, b)`.
//!
//! At an optimum `(x*, m*, n*)` of `min qᵀx s.t. A x = b, G x ≤ 0` the
//! differentiated KKT conditions read
//!
//! ```text
//! ⎡ 0         Gᵀ             Aᵀ ⎤ ⎡ dx ⎤   ⎡ −dAᵀ n*        ⎤
//! ⎢ diag(m*)G  diag(G x*)     0  ⎥ ⎢ dm ⎥ = ⎢ 0              ⎥
//! ⎣ A         0              0  ⎦ ⎣ dn ⎦   ⎣ −dA x* + db    ⎦
//! ```
//!
//! (`q` and `G` are constant, `h = 0`). With `v* = e_vᵀ x*`, one adjoint solve
//! `Kᵀ ξ = (e_v, 0, 0)` gives every partial at once:
//!
//! ```text
//! ∂v*/∂A = −(n* ξ_xᵀ + ξ_n x*ᵀ),    ∂v*/∂b = ξ_n.
//! ```
//!
//! When `K` is singular (non-unique primal or dual, or a weakly active bound)
//! the adjoint is taken from a Tikhonov-regularized least-squares solve and
//! the result is flagged; it is then one element of the subdifferential.

use nalgebra::{DMatrix, DVector};

use crate::conzono::{intersect, ConstrainedZonotope};
use crate::error::{Error, Result};
use crate::lpsolve::{solve_lp, EmptinessResult, EmptinessStatus, StandardFormLP};

/// Regularization added to the adjoint normal equations on singular systems.
pub const KKT_REGULARIZATION: f64 = 1e-10;

/// Reciprocal condition number below which the KKT matrix counts as singular.
const SINGULAR_RCOND: f64 = 1e-11;

/// Default loss for intersections whose equality constraints are inconsistent.
pub const DEFAULT_LOSS_FLOOR: f64 = -10.0;

#[derive(Debug, Clone)]
pub struct LpGradient {
    /// Same shape as `A_eq` (the last column belongs to `v` and is structural).
    pub dv_da: DMatrix<f64>,
    pub dv_db: DVector<f64>,
    pub degenerate: bool,
}

impl LpGradient {
    fn zeros(n_con: usize, n_var: usize) -> Self {
        LpGradient {
            dv_da: DMatrix::zeros(n_con, n_var),
            dv_db: DVector::zeros(n_con),
            degenerate: false,
        }
    }

    /// Gradient with respect to the zonotope constraint matrix `A` (drops the `v` column).
    pub fn dv_d_constraints(&self) -> DMatrix<f64> {
        let n_gen = self.dv_da.ncols().saturating_sub(1);
        self.dv_da.columns(0, n_gen).into_owned()
    }
}

/// Cleans round-off so that exact zeros in the multipliers and slacks are exact.
fn snap(v: f64, scale: f64) -> f64 {
    if v.abs() <= 1e-12 * scale {
        0.0
    } else {
        v
    }
}

/// Implicit gradient of `v*` with respect to `(A_eq, b_eq)`.
pub fn differentiate(lp: &StandardFormLP, sol: &EmptinessResult) -> Result<LpGradient> {
    if sol.status != EmptinessStatus::Optimal {
        return Err(Error::InvalidInput(
            "cannot differentiate an infeasible emptiness program".into(),
        ));
    }
    let n_gen = lp.n_gen();
    let nv = n_gen + 1;
    let p = lp.n_con();
    if sol.z_star.len() != n_gen || sol.n_star.len() != p || sol.m_star.len() != 2 * n_gen {
        return Err(Error::dims("solution does not match the program"));
    }
    if n_gen == 0 {
        // v* ≡ 0 whatever the data.
        return Ok(LpGradient::zeros(p, nv));
    }

    let x = StandardFormLP::stacked(sol);
    let r = 2 * n_gen;
    let scale = 1.0 + x.amax().max(sol.m_star.amax());
    let slack = (&lp.g_ineq * &x - &lp.g_rhs).map(|s| snap(s, scale));
    let m = sol.m_star.map(|v| snap(v, scale));

    let size = nv + r + p;
    let mut k = DMatrix::zeros(size, size);
    k.view_mut((0, nv), (nv, r))
        .copy_from(&lp.g_ineq.transpose());
    k.view_mut((0, nv + r), (nv, p))
        .copy_from(&lp.a_eq.transpose());
    k.view_mut((nv, 0), (r, nv))
        .copy_from(&(DMatrix::from_diagonal(&m) * &lp.g_ineq));
    k.view_mut((nv, nv), (r, r))
        .copy_from(&DMatrix::from_diagonal(&slack));
    k.view_mut((nv + r, 0), (p, nv)).copy_from(&lp.a_eq);

    let mut seed = DVector::zeros(size);
    seed[n_gen] = 1.0;

    let sv = k.singular_values();
    let smax = sv.max();
    let smin = sv.min();
    let degenerate = smin.is_nan() || smax.is_nan() || smin <= SINGULAR_RCOND * smax.max(1.0);

    let xi = if degenerate {
        let normal = &k * k.transpose() + DMatrix::identity(size, size) * KKT_REGULARIZATION;
        normal
            .cholesky()
            .map(|c| c.solve(&(&k * &seed)))
            .or_else(|| {
                (&k * k.transpose())
                    .pseudo_inverse(1e-14)
                    .ok()
                    .map(|pi| pi * &k * &seed)
            })
            .ok_or_else(|| Error::InvalidInput("KKT system could not be solved".into()))?
    } else {
        k.transpose()
            .lu()
            .solve(&seed)
            .ok_or_else(|| Error::InvalidInput("KKT system is singular".into()))?
    };

    let xi_x = xi.rows(0, nv).into_owned();
    let xi_n = xi.rows(nv + r, p).into_owned();
    let dv_da = -(&sol.n_star * xi_x.transpose() + &xi_n * x.transpose());
    Ok(LpGradient {
        dv_da,
        dv_db: xi_n,
        degenerate,
    })
}

/// Collision-check loss `1 − v*` of `Z_out ∩ Z_unsafe` and its gradient with
/// respect to `Z_out`'s parameters. Negative loss means the sets are disjoint.
#[derive(Debug, Clone)]
pub struct ConstraintLoss {
    pub loss: f64,
    pub v_star: f64,
    pub status: EmptinessStatus,
    pub grad_center: DVector<f64>,
    pub grad_generators: DMatrix<f64>,
    pub grad_constraints: DMatrix<f64>,
    pub grad_offset: DVector<f64>,
    pub degenerate: bool,
}

pub fn constraint_loss_and_grad(
    zout: &ConstrainedZonotope,
    zunsafe: &ConstrainedZonotope,
) -> Result<ConstraintLoss> {
    constraint_loss_and_grad_with_floor(zout, zunsafe, DEFAULT_LOSS_FLOOR)
}

pub fn constraint_loss_and_grad_with_floor(
    zout: &ConstrainedZonotope,
    zunsafe: &ConstrainedZonotope,
    floor: f64,
) -> Result<ConstraintLoss> {
    let inter = intersect(zout, zunsafe)?;
    let lp = StandardFormLP::for_zonotope(&inter);
    let sol = solve_lp(&lp)?;
    let (n, g1, c1, c2) = (zout.dim(), zout.n_gen(), zout.n_con(), zunsafe.n_con());

    if sol.status == EmptinessStatus::EqInfeasible {
        return Ok(ConstraintLoss {
            loss: floor,
            v_star: sol.v_star,
            status: sol.status,
            grad_center: DVector::zeros(n),
            grad_generators: DMatrix::zeros(n, g1),
            grad_constraints: DMatrix::zeros(c1, g1),
            grad_offset: DVector::zeros(c1),
            degenerate: false,
        });
    }

    let grad = differentiate(&lp, &sol)?;
    // dL = −dv*; the intersection stacks rows [A1 0; 0 A2; G1 −G2] and
    // offsets [b1; b2; c2 − c1].
    let dl_da = -&grad.dv_da;
    let dl_db = -&grad.dv_db;
    Ok(ConstraintLoss {
        loss: 1.0 - sol.v_star,
        v_star: sol.v_star,
        status: sol.status,
        grad_center: -dl_db.rows(c1 + c2, n).into_owned(),
        grad_generators: dl_da.view((c1 + c2, 0), (n, g1)).into_owned(),
        grad_constraints: dl_da.view((0, 0), (c1, g1)).into_owned(),
        grad_offset: dl_db.rows(0, c1).into_owned(),
        degenerate: grad.degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};

    fn grad_1d(b: f64) -> LpGradient {
        let lp = StandardFormLP::emptiness(&dmatrix![1.0], &dvector![b]).unwrap();
        let sol = solve_lp(&lp).unwrap();
        differentiate(&lp, &sol).unwrap()
    }

    #[test]
    fn absolute_value_slopes() {
        // v*(b) = |b| for A = [1]
        let g = grad_1d(0.5);
        assert!(!g.degenerate);
        assert!((g.dv_db[0] - 1.0).abs() < 1e-9);
        // v*(a) = |b/a| → ∂/∂a = −|b|/a² at a = 1
        assert!((g.dv_da[(0, 0)] + 0.5).abs() < 1e-9);
        let g = grad_1d(-0.5);
        assert!((g.dv_db[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn kink_is_flagged() {
        assert!(grad_1d(0.0).degenerate);
    }

    #[test]
    fn requires_optimal_solution() {
        let lp = StandardFormLP::emptiness(&dmatrix![1.0; 1.0], &dvector![1.0, 2.0]).unwrap();
        let sol = solve_lp(&lp).unwrap();
        assert!(differentiate(&lp, &sol).is_err());
    }

    #[test]
    fn loss_signs() {
        let unit = ConstrainedZonotope::unit_box(2);
        let deep = constraint_loss_and_grad(&unit, &unit).unwrap();
        assert!((deep.loss - 1.0).abs() < 1e-12);

        let far = ConstrainedZonotope::axis_box(dvector![3.0, 3.0], &dvector![1.0, 1.0]).unwrap();
        let safe = constraint_loss_and_grad(&unit, &far).unwrap();
        assert!(safe.loss < 0.0);

        let touch = ConstrainedZonotope::axis_box(dvector![2.0, 0.0], &dvector![1.0, 1.0]).unwrap();
        let edge = constraint_loss_and_grad(&unit, &touch).unwrap();
        assert!(edge.loss.abs() < 1e-12);
    }

    #[test]
    fn translation_covariance() {
        let a = ConstrainedZonotope::new(
            dvector![0.2, -0.1],
            dmatrix![1.0, 0.3, 0.0; -0.2, 0.8, 0.4],
            dmatrix![0.5, 1.0, -1.0],
            dvector![0.1],
        )
        .unwrap();
        let u = ConstrainedZonotope::axis_box(dvector![1.5, 1.0], &dvector![0.5, 0.5]).unwrap();
        let shift = dvector![-4.0, 2.5];
        let a2 = ConstrainedZonotope::new(
            a.center() + &shift,
            a.generators().clone(),
            a.constraints().clone(),
            a.offset().clone(),
        )
        .unwrap();
        let u2 = ConstrainedZonotope::axis_box(u.center() + &shift, &dvector![0.5, 0.5]).unwrap();
        let l1 = constraint_loss_and_grad(&a, &u).unwrap().loss;
        let l2 = constraint_loss_and_grad(&a2, &u2).unwrap().loss;
        assert!((l1 - l2).abs() < 1e-9);
    }

    #[test]
    fn infeasible_intersection_gets_floor() {
        // A point set at x = 0 with an unsafe point elsewhere: G1 z1 − G2 z2 = c2 − c1 has no solution.
        let p = ConstrainedZonotope::singleton(dvector![0.0]);
        let q = ConstrainedZonotope::singleton(dvector![1.0]);
        let l = constraint_loss_and_grad(&p, &q).unwrap();
        assert_eq!(l.status, EmptinessStatus::EqInfeasible);
        assert_eq!(l.loss, DEFAULT_LOSS_FLOOR);
        assert_eq!(l.grad_center.amax(), 0.0);
    }
}
