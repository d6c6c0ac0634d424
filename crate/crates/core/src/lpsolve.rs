//! Small dense LP solver.
//!
//! Problems are stated over free variables,
//!
//! ```text
//! min  qᵀx   s.t.  A_eq x = b_eq,  G x ≤ h
//! ```
//!
//! and solved by a two-phase primal simplex on the standard form
//! `x = x⁺ − x⁻`, `G x + s = h`, with Bland's rule for anti-cycling. The final
//! basis is refactored once so that the returned primal point and multipliers
//! are accurate to working precision rather than to the accumulated tableau
//! error. Multipliers follow the Lagrangian `qᵀx + nᵀ(A_eq x − b_eq) + mᵀ(Gx − h)`,
//! so at an optimum `q + A_eqᵀ n + Gᵀ m = 0` and `m ≥ 0`.
//!
//! [`StandardFormLP`] is the emptiness program of a constrained zonotope,
//! `min { v : A z = b, ‖z‖∞ ≤ v }`, which is what the rest of the crate needs.

use nalgebra::{DMatrix, DVector};

use crate::conzono::ConstrainedZonotope;
use crate::error::{Error, Result};

/// Emptiness verdict threshold: a set is empty iff `v* > 1 + EMPTY_TOL`.
pub const EMPTY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub pivot_tol: f64,
    /// Iteration cap is `iteration_factor · (columns + rows)` of the standard form.
    pub iteration_factor: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-9,
            pivot_tol: 1e-11,
            iteration_factor: 50,
        }
    }
}

/// `min qᵀx s.t. eq_matrix·x = eq_rhs, ineq_matrix·x ≤ ineq_rhs`, `x` free.
#[derive(Debug, Clone)]
pub struct LinearProgram {
    pub objective: DVector<f64>,
    pub eq_matrix: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub ineq_matrix: DMatrix<f64>,
    pub ineq_rhs: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: DVector<f64>,
    pub objective_value: f64,
    /// Multipliers `n` of the equality rows.
    pub eq_duals: DVector<f64>,
    /// Multipliers `m ≥ 0` of the inequality rows.
    pub ineq_duals: DVector<f64>,
    pub iterations: usize,
}

impl LinearProgram {
    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        if self.eq_matrix.ncols() != n && self.eq_matrix.nrows() > 0 {
            return Err(Error::dims(format!(
                "equality matrix has {} columns, objective has {n} entries",
                self.eq_matrix.ncols()
            )));
        }
        if self.ineq_matrix.ncols() != n && self.ineq_matrix.nrows() > 0 {
            return Err(Error::dims(format!(
                "inequality matrix has {} columns, objective has {n} entries",
                self.ineq_matrix.ncols()
            )));
        }
        if self.eq_matrix.nrows() != self.eq_rhs.len() {
            return Err(Error::dims("equality matrix rows != rhs length"));
        }
        if self.ineq_matrix.nrows() != self.ineq_rhs.len() {
            return Err(Error::dims("inequality matrix rows != rhs length"));
        }
        Ok(())
    }

    /// Primal infeasibility of `x` (max violation over all rows).
    pub fn primal_residual(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if self.eq_matrix.nrows() > 0 {
            let r = &self.eq_matrix * x - &self.eq_rhs;
            worst = worst.max(r.amax());
        }
        if self.ineq_matrix.nrows() > 0 {
            let r = &self.ineq_matrix * x - &self.ineq_rhs;
            worst = worst.max(r.max().max(0.0));
        }
        worst
    }

    pub fn solve(&self) -> Result<LpSolution> {
        self.solve_with(&SolverOptions::default())
    }

    pub fn solve_with(&self, opts: &SolverOptions) -> Result<LpSolution> {
        self.validate()?;
        Simplex::new(self, opts).run()
    }
}

/// Row-major dense tableau with the right-hand side stored in the last column.
struct Simplex<'a> {
    lp: &'a LinearProgram,
    opts: &'a SolverOptions,
    rows: usize,
    /// Columns of the standard form without artificials.
    n_std: usize,
    /// All columns including artificials.
    n_total: usize,
    width: usize,
    tab: Vec<f64>,
    obj: Vec<f64>,
    basis: Vec<usize>,
    /// ±1 applied to each original row to make its right-hand side nonnegative.
    row_sign: Vec<f64>,
    /// Row served by each artificial column.
    art_rows: Vec<usize>,
    iterations: usize,
    cap: usize,
}

enum PivotOutcome {
    Optimal,
    Unbounded,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram, opts: &'a SolverOptions) -> Self {
        let nvar = lp.num_vars();
        let p = lp.eq_rhs.len();
        let r = lp.ineq_rhs.len();
        let rows = p + r;
        let n_std = 2 * nvar + r;

        let mut row_sign = vec![1.0; rows];
        for (sign, &rhs) in row_sign.iter_mut().zip(lp.eq_rhs.iter()) {
            if rhs < 0.0 {
                *sign = -1.0;
            }
        }
        for k in 0..r {
            if lp.ineq_rhs[k] < 0.0 {
                row_sign[p + k] = -1.0;
            }
        }

        // Inequality rows with a nonnegative rhs start with their slack basic.
        let mut basis = vec![usize::MAX; rows];
        let mut art_rows = Vec::new();
        for (i, slot) in basis.iter_mut().enumerate() {
            if i >= p && row_sign[i] > 0.0 {
                *slot = 2 * nvar + (i - p);
            } else {
                *slot = n_std + art_rows.len();
                art_rows.push(i);
            }
        }
        let n_total = n_std + art_rows.len();
        let width = n_total + 1;

        let mut tab = vec![0.0; rows * width];
        for i in 0..rows {
            let s = row_sign[i];
            let row = &mut tab[i * width..(i + 1) * width];
            if i < p {
                for j in 0..nvar {
                    let a = lp.eq_matrix[(i, j)] * s;
                    row[j] = a;
                    row[nvar + j] = -a;
                }
                row[n_total] = lp.eq_rhs[i] * s;
            } else {
                let k = i - p;
                for j in 0..nvar {
                    let a = lp.ineq_matrix[(k, j)] * s;
                    row[j] = a;
                    row[nvar + j] = -a;
                }
                row[2 * nvar + k] = s;
                row[n_total] = lp.ineq_rhs[k] * s;
            }
        }
        for (t, &i) in art_rows.iter().enumerate() {
            tab[i * width + n_std + t] = 1.0;
        }

        let cap = opts.iteration_factor * (n_total + rows).max(1);
        Simplex {
            lp,
            opts,
            rows,
            n_std,
            n_total,
            width,
            tab,
            obj: vec![0.0; width],
            basis,
            row_sign,
            art_rows,
            iterations: 0,
            cap,
        }
    }

    fn nvar(&self) -> usize {
        self.lp.num_vars()
    }

    fn std_cost(&self, j: usize) -> f64 {
        let nvar = self.nvar();
        if j < nvar {
            self.lp.objective[j]
        } else if j < 2 * nvar {
            -self.lp.objective[j - nvar]
        } else {
            0.0
        }
    }

    /// Loads reduced costs for the given column costs into the objective row.
    fn load_objective(&mut self, cost: impl Fn(&Self, usize) -> f64) {
        let w = self.width;
        let mut obj = vec![0.0; w];
        for (j, o) in obj.iter_mut().enumerate().take(self.n_total) {
            *o = cost(self, j);
        }
        for i in 0..self.rows {
            let cb = cost(self, self.basis[i]);
            if cb != 0.0 {
                let row = &self.tab[i * w..(i + 1) * w];
                for (o, &t) in obj.iter_mut().zip(row) {
                    *o -= cb * t;
                }
            }
        }
        self.obj = obj;
    }

    fn pivot(&mut self, r: usize, c: usize) {
        let w = self.width;
        let piv = self.tab[r * w + c];
        for t in &mut self.tab[r * w..(r + 1) * w] {
            *t /= piv;
        }
        let (before, rest) = self.tab.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let eliminate = |row: &mut [f64]| {
            let f = row[c];
            if f != 0.0 {
                for (x, &p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
                row[c] = 0.0;
            }
        };
        before.chunks_mut(w).for_each(eliminate);
        after.chunks_mut(w).for_each(eliminate);
        let f = self.obj[c];
        if f != 0.0 {
            for (x, &p) in self.obj.iter_mut().zip(prow.iter()) {
                *x -= f * p;
            }
            self.obj[c] = 0.0;
        }
        self.basis[r] = c;
        self.iterations += 1;
    }

    /// Bland-rule pivoting over columns `0..allowed`. With `bounded` set, an
    /// improving column without a pivot row can only be round-off and is
    /// skipped for the rest of the phase instead of reporting a ray.
    fn iterate(&mut self, allowed: usize, bounded: bool) -> Result<PivotOutcome> {
        let w = self.width;
        let rhs = self.n_total;
        let mut blocked = vec![false; allowed];
        loop {
            // Bland: lowest-index improving column.
            let Some(enter) =
                (0..allowed).find(|&j| !blocked[j] && self.obj[j] < -self.opts.optimality_tol)
            else {
                return Ok(PivotOutcome::Optimal);
            };
            if self.iterations >= self.cap {
                return Err(Error::SolverBreakdown {
                    iterations: self.iterations,
                    residual: self.current_residual(),
                });
            }
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.tab[i * w + enter];
                if a > self.opts.pivot_tol {
                    let ratio = self.tab[i * w + rhs].max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            let tie = (ratio - br).abs() <= 1e-12 * (1.0 + br.abs());
                            if ratio < br && !tie || tie && self.basis[i] < self.basis[bi] {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, enter),
                None if bounded => blocked[enter] = true,
                None => return Ok(PivotOutcome::Unbounded),
            }
        }
    }

    fn basic_solution(&self) -> Vec<f64> {
        let mut y = vec![0.0; self.n_total];
        for i in 0..self.rows {
            y[self.basis[i]] = self.tab[i * self.width + self.n_total];
        }
        y
    }

    fn std_to_x(&self, y: &[f64]) -> DVector<f64> {
        let nvar = self.nvar();
        DVector::from_fn(nvar, |j, _| y[j] - y[nvar + j])
    }

    fn current_residual(&self) -> f64 {
        let x = self.std_to_x(&self.basic_solution());
        self.lp.primal_residual(&x)
    }

    /// Column `j` of the sign-normalized standard-form matrix.
    fn column(&self, j: usize) -> DVector<f64> {
        let nvar = self.nvar();
        let p = self.lp.eq_rhs.len();
        let mut col = DVector::zeros(self.rows);
        if j < 2 * nvar {
            let (src, s) = if j < nvar { (j, 1.0) } else { (j - nvar, -1.0) };
            for i in 0..p {
                col[i] = self.lp.eq_matrix[(i, src)] * s * self.row_sign[i];
            }
            for k in 0..self.lp.ineq_rhs.len() {
                col[p + k] = self.lp.ineq_matrix[(k, src)] * s * self.row_sign[p + k];
            }
        } else if j < self.n_std {
            let k = j - 2 * nvar;
            col[p + k] = self.row_sign[p + k];
        } else {
            col[self.art_rows[j - self.n_std]] = 1.0;
        }
        col
    }

    fn rhs_vector(&self) -> DVector<f64> {
        let p = self.lp.eq_rhs.len();
        DVector::from_fn(self.rows, |i, _| {
            let v = if i < p {
                self.lp.eq_rhs[i]
            } else {
                self.lp.ineq_rhs[i - p]
            };
            v * self.row_sign[i]
        })
    }

    /// Recomputes the basic solution and simplex multipliers from the final
    /// basis, falling back to the tableau values if the basis is singular.
    fn refine(&self) -> (Vec<f64>, DVector<f64>) {
        let m = self.rows;
        let mut y = self.basic_solution();
        if m == 0 {
            return (y, DVector::zeros(0));
        }
        let mut bmat = DMatrix::zeros(m, m);
        for (i, &j) in self.basis.iter().enumerate() {
            bmat.set_column(i, &self.column(j));
        }
        let cb = DVector::from_fn(m, |i, _| {
            let j = self.basis[i];
            if j < self.n_std {
                self.std_cost(j)
            } else {
                0.0
            }
        });
        let lu = bmat.clone().lu();
        let solved = lu
            .solve(&self.rhs_vector())
            .zip(bmat.transpose().lu().solve(&cb));
        match solved {
            Some((yb, pi)) if yb.iter().chain(pi.iter()).all(|v| v.is_finite()) => {
                for (i, &j) in self.basis.iter().enumerate() {
                    y[j] = yb[i];
                }
                (y, pi)
            }
            _ => {
                let pinv = bmat
                    .transpose()
                    .pseudo_inverse(1e-12)
                    .unwrap_or_else(|_| DMatrix::zeros(m, m));
                (y, pinv * cb)
            }
        }
    }

    fn run(mut self) -> Result<LpSolution> {
        let nvar = self.nvar();
        let p = self.lp.eq_rhs.len();

        if !self.art_rows.is_empty() {
            let n_std = self.n_std;
            self.load_objective(|_, j| if j >= n_std { 1.0 } else { 0.0 });
            let n_total = self.n_total;
            // Phase one is bounded below by zero.
            self.iterate(n_total, true)?;
            let infeas = -self.obj[self.n_total];
            let scale = 1.0 + self.rhs_vector().amax();
            if infeas > self.opts.feasibility_tol * scale {
                return Ok(LpSolution {
                    status: LpStatus::Infeasible,
                    x: DVector::zeros(nvar),
                    objective_value: f64::INFINITY,
                    eq_duals: DVector::zeros(p),
                    ineq_duals: DVector::zeros(self.lp.ineq_rhs.len()),
                    iterations: self.iterations,
                });
            }
            self.drive_out_artificials();
        }

        self.load_objective(|s, j| s.std_cost(j));
        let n_std = self.n_std;
        if let PivotOutcome::Unbounded = self.iterate(n_std, false)? {
            return Err(Error::Unbounded);
        }

        let (y, pi) = self.refine();
        let x = self.std_to_x(&y);
        let eq_duals = DVector::from_fn(p, |i, _| -pi[i] * self.row_sign[i]);
        let ineq_duals = DVector::from_fn(self.lp.ineq_rhs.len(), |k, _| {
            -pi[p + k] * self.row_sign[p + k]
        });
        let objective_value = self.lp.objective.dot(&x);
        Ok(LpSolution {
            status: LpStatus::Optimal,
            x,
            objective_value,
            eq_duals,
            ineq_duals,
            iterations: self.iterations,
        })
    }

    /// Pivots zero-valued artificials out of the basis. Rows with no usable
    /// pivot are linearly dependent on the others and keep their artificial.
    fn drive_out_artificials(&mut self) {
        let w = self.width;
        for i in 0..self.rows {
            if self.basis[i] < self.n_std {
                continue;
            }
            let row = &self.tab[i * w..i * w + self.n_std];
            let best = row
                .iter()
                .enumerate()
                .filter(|(_, a)| a.abs() > 1e-9)
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(j, _)| j);
            if let Some(j) = best {
                self.pivot(i, j);
            }
        }
    }
}

/// Emptiness program of a constrained zonotope over stacked variables `(z, v)`:
///
/// ```text
/// min v   s.t.  [A | 0](z, v) = b,   z_i − v ≤ 0,   −z_i − v ≤ 0
/// ```
///
/// The first `n_gen` inequality rows are `z_i − v ≤ 0`, the next `n_gen` are
/// `−z_i − v ≤ 0`.
#[derive(Debug, Clone)]
pub struct StandardFormLP {
    pub q: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub g_ineq: DMatrix<f64>,
    pub g_rhs: DVector<f64>,
}

impl StandardFormLP {
    pub fn emptiness(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        if a.nrows() != b.len() {
            return Err(Error::dims(format!(
                "constraint matrix has {} rows but offset has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        let n_gen = a.ncols();
        let nv = n_gen + 1;
        let mut q = DVector::zeros(nv);
        q[n_gen] = 1.0;
        let mut a_eq = DMatrix::zeros(a.nrows(), nv);
        a_eq.columns_mut(0, n_gen).copy_from(a);
        let mut g_ineq = DMatrix::zeros(2 * n_gen, nv);
        for i in 0..n_gen {
            g_ineq[(i, i)] = 1.0;
            g_ineq[(i, n_gen)] = -1.0;
            g_ineq[(n_gen + i, i)] = -1.0;
            g_ineq[(n_gen + i, n_gen)] = -1.0;
        }
        Ok(StandardFormLP {
            q,
            a_eq,
            b_eq: b.clone(),
            g_ineq,
            g_rhs: DVector::zeros(2 * n_gen),
        })
    }

    pub fn for_zonotope(z: &ConstrainedZonotope) -> Self {
        // Shapes are guaranteed by the zonotope invariants.
        Self::emptiness(z.constraints(), z.offset()).expect("zonotope invariants hold")
    }

    pub fn n_gen(&self) -> usize {
        self.q.len() - 1
    }

    pub fn n_con(&self) -> usize {
        self.b_eq.len()
    }

    pub fn to_program(&self) -> LinearProgram {
        LinearProgram {
            objective: self.q.clone(),
            eq_matrix: self.a_eq.clone(),
            eq_rhs: self.b_eq.clone(),
            ineq_matrix: self.g_ineq.clone(),
            ineq_rhs: self.g_rhs.clone(),
        }
    }

    /// Stacked primal point `(z, v)`.
    pub fn stacked(result: &EmptinessResult) -> DVector<f64> {
        let n = result.z_star.len();
        DVector::from_fn(n + 1, |i, _| {
            if i < n {
                result.z_star[i]
            } else {
                result.v_star
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptinessStatus {
    Optimal,
    /// `A z = b` has no solution at all; the set has no points.
    EqInfeasible,
}

#[derive(Debug, Clone)]
pub struct EmptinessResult {
    pub v_star: f64,
    pub z_star: DVector<f64>,
    pub m_star: DVector<f64>,
    pub n_star: DVector<f64>,
    pub status: EmptinessStatus,
}

impl EmptinessResult {
    pub fn is_empty(&self) -> bool {
        self.is_empty_with(EMPTY_TOL)
    }

    pub fn is_empty_with(&self, tol: f64) -> bool {
        match self.status {
            EmptinessStatus::EqInfeasible => true,
            EmptinessStatus::Optimal => self.v_star > 1.0 + tol,
        }
    }

    fn infeasible(n_gen: usize, n_con: usize) -> Self {
        EmptinessResult {
            v_star: f64::INFINITY,
            z_star: DVector::zeros(n_gen),
            m_star: DVector::zeros(2 * n_gen),
            n_star: DVector::zeros(n_con),
            status: EmptinessStatus::EqInfeasible,
        }
    }
}

/// Solves an emptiness program.
pub fn solve_lp(lp: &StandardFormLP) -> Result<EmptinessResult> {
    let n_gen = lp.n_gen();
    let n_con = lp.n_con();
    if n_gen == 0 {
        // No coefficients: the set is {c} if b vanishes, otherwise nothing.
        let opts = SolverOptions::default();
        return Ok(if lp.b_eq.iter().all(|v| v.abs() <= opts.feasibility_tol) {
            EmptinessResult {
                v_star: 0.0,
                z_star: DVector::zeros(0),
                m_star: DVector::zeros(0),
                n_star: DVector::zeros(n_con),
                status: EmptinessStatus::Optimal,
            }
        } else {
            EmptinessResult::infeasible(0, n_con)
        });
    }
    let sol = lp.to_program().solve()?;
    Ok(match sol.status {
        LpStatus::Infeasible => EmptinessResult::infeasible(n_gen, n_con),
        LpStatus::Optimal => EmptinessResult {
            v_star: sol.x[n_gen],
            z_star: sol.x.rows(0, n_gen).into_owned(),
            m_star: sol.ineq_duals,
            n_star: sol.eq_duals,
            status: EmptinessStatus::Optimal,
        },
    })
}

/// Minimum `‖z‖∞` over `A z = b`; the set is empty iff that exceeds one.
pub fn check_empty(z: &ConstrainedZonotope) -> Result<EmptinessResult> {
    solve_lp(&StandardFormLP::for_zonotope(z))
}
