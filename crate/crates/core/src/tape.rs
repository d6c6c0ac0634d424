//! Matrix-level reverse-mode tape.
//!
//! Every node holds a dense matrix value (column vectors are `n × 1`).
//! Nodes only refer to earlier nodes, so the tape is acyclic by construction
//! and the backward sweep is a single reverse pass. The LP-optimum node
//! stores the implicit gradient from [`crate::lpgrad`] at record time.
//!
//! [`TapeZonotope`] replays the constrained-zonotope constructions (affine
//! image, one ReLU branch, intersection with constant data) on the tape so
//! that a reach-set piece and its collision loss become functions of the
//! network weights.

use nalgebra::{DMatrix, DVector};

use crate::conzono::{ActivationPattern, ConstrainedZonotope};
use crate::error::Result;
use crate::lpgrad::{differentiate, LpGradient};
use crate::lpsolve::{solve_lp, EmptinessStatus, StandardFormLP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Param,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    /// `diag(s) · a` for constant `s`.
    ScaleRows(DVector<f64>, Var),
    /// Column vector to square diagonal matrix.
    Diag(Var),
    Abs(Var),
    Relu(Var),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    LpOptimum {
        a: Var,
        b: Var,
        grad: Option<LpGradient>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    value: DMatrix<f64>,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints from one backward sweep, indexed by [`Var`].
#[derive(Debug, Clone)]
pub struct Adjoints {
    grads: Vec<Option<DMatrix<f64>>>,
}

impl Adjoints {
    /// Adjoint of `v`, or zeros of the right shape if the output does not depend on it.
    pub fn get(&self, tape: &Tape, v: Var) -> DMatrix<f64> {
        self.grads.get(v.0).cloned().flatten().unwrap_or_else(|| {
            let val = tape.value(v);
            DMatrix::zeros(val.nrows(), val.ncols())
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: DMatrix<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &DMatrix<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn param(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Param)
    }

    pub fn constant(&mut self, value: DMatrix<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn vector(&mut self, value: &DVector<f64>) -> Var {
        self.constant(DMatrix::from_column_slice(value.len(), 1, value.as_slice()))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.constant(DMatrix::zeros(rows, cols))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        self.push(value, Op::Scale(a, s))
    }

    pub fn scale_rows(&mut self, s: &DVector<f64>, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for (i, mut row) in value.row_iter_mut().enumerate() {
            row *= s[i];
        }
        self.push(value, Op::ScaleRows(s.clone(), a))
    }

    pub fn diag(&mut self, v: Var) -> Var {
        let col = self.value(v).column(0).into_owned();
        self.push(DMatrix::from_diagonal(&col), Op::Diag(v))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).abs();
        self.push(value, Op::Abs(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push(value, Op::Relu(a))
    }

    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).nrows();
        let cols: usize = parts.iter().map(|p| self.value(*p).ncols()).sum();
        let mut value = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.nrows(), rows, "hcat row mismatch");
            value.columns_mut(at, v.ncols()).copy_from(v);
            at += v.ncols();
        }
        self.push(value, Op::HCat(parts.to_vec()))
    }

    pub fn vcat(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).ncols();
        let rows: usize = parts.iter().map(|p| self.value(*p).nrows()).sum();
        let mut value = DMatrix::zeros(rows, cols);
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            assert_eq!(v.ncols(), cols, "vcat column mismatch");
            value.rows_mut(at, v.nrows()).copy_from(v);
            at += v.nrows();
        }
        self.push(value, Op::VCat(parts.to_vec()))
    }

    /// Optimum `v*` of `min { v : a z = b, ‖z‖∞ ≤ v }` as a `1 × 1` node.
    ///
    /// If `a z = b` is inconsistent the node takes `infeasible_value` and
    /// passes no gradient.
    pub fn lp_optimum(&mut self, a: Var, b: Var, infeasible_value: f64) -> Result<Var> {
        let am = self.value(a).clone();
        let bv = self.value(b).column(0).into_owned();
        let lp = StandardFormLP::emptiness(&am, &bv)?;
        let sol = solve_lp(&lp)?;
        let (value, grad) = match sol.status {
            EmptinessStatus::EqInfeasible => (infeasible_value, None),
            EmptinessStatus::Optimal => (sol.v_star, Some(differentiate(&lp, &sol)?)),
        };
        Ok(self.push(
            DMatrix::from_element(1, 1, value),
            Op::LpOptimum { a, b, grad },
        ))
    }

    /// Whether an LP node needed the regularized (subgradient) solve.
    pub fn lp_degenerate(&self, v: Var) -> bool {
        matches!(&self.nodes[v.0].op, Op::LpOptimum { grad: Some(g), .. } if g.degenerate)
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var) -> Adjoints {
        assert_eq!(
            self.value(output).shape(),
            (1, 1),
            "backward needs a scalar output"
        );
        let mut grads: Vec<Option<DMatrix<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(DMatrix::from_element(1, 1, 1.0));

        fn acc(grads: &mut [Option<DMatrix<f64>>], v: Var, g: DMatrix<f64>) {
            match &mut grads[v.0] {
                Some(existing) => *existing += g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Param | Op::Constant => {}
                Op::MatMul(a, b) => {
                    acc(&mut grads, *a, &g * self.value(*b).transpose());
                    acc(&mut grads, *b, self.value(*a).transpose() * &g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, -&g);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, &g * *s),
                Op::ScaleRows(s, a) => {
                    let mut ga = g.clone();
                    for (i, mut row) in ga.row_iter_mut().enumerate() {
                        row *= s[i];
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Diag(v) => {
                    let d = g.diagonal();
                    acc(
                        &mut grads,
                        *v,
                        DMatrix::from_column_slice(d.len(), 1, d.as_slice()),
                    );
                }
                Op::Abs(a) => {
                    let sign = self.value(*a).map(|x| {
                        if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    acc(&mut grads, *a, g.component_mul(&sign));
                }
                Op::Relu(a) => {
                    let on = self.value(*a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    acc(&mut grads, *a, g.component_mul(&on));
                }
                Op::HCat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.columns(at, w).into_owned());
                        at += w;
                    }
                }
                Op::VCat(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, g.rows(at, h).into_owned());
                        at += h;
                    }
                }
                Op::LpOptimum { a, b, grad } => {
                    if let Some(lg) = grad {
                        let s = g[(0, 0)];
                        acc(&mut grads, *a, lg.dv_d_constraints() * s);
                        acc(
                            &mut grads,
                            *b,
                            DMatrix::from_column_slice(lg.dv_db.len(), 1, lg.dv_db.as_slice()) * s,
                        );
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Adjoints { grads }
    }
}

/// A constrained zonotope whose parameters live on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeZonotope {
    pub center: Var,
    pub generators: Var,
    pub constraints: Var,
    pub offset: Var,
}

impl TapeZonotope {
    pub fn constant(tape: &mut Tape, z: &ConstrainedZonotope) -> Self {
        TapeZonotope {
            center: tape.vector(z.center()),
            generators: tape.constant(z.generators().clone()),
            constraints: tape.constant(z.constraints().clone()),
            offset: tape.vector(z.offset()),
        }
    }

    pub fn dim(&self, tape: &Tape) -> usize {
        tape.value(self.center).nrows()
    }

    pub fn n_gen(&self, tape: &Tape) -> usize {
        tape.value(self.generators).ncols()
    }

    pub fn n_con(&self, tape: &Tape) -> usize {
        tape.value(self.constraints).nrows()
    }

    /// Current value as a plain constrained zonotope.
    pub fn value(&self, tape: &Tape) -> ConstrainedZonotope {
        ConstrainedZonotope::new(
            tape.value(self.center).column(0).into_owned(),
            tape.value(self.generators).clone(),
            tape.value(self.constraints).clone(),
            tape.value(self.offset).column(0).into_owned(),
        )
        .expect("tape preserves zonotope shapes")
    }

    /// `W Z + w` with `weights` (`m × n`) and `bias` (`m × 1`) on the tape.
    pub fn affine(&self, tape: &mut Tape, weights: Var, bias: Var) -> Self {
        let wc = tape.matmul(weights, self.center);
        TapeZonotope {
            center: tape.add(wc, bias),
            generators: tape.matmul(weights, self.generators),
            constraints: self.constraints,
            offset: self.offset,
        }
    }

    /// The ReLU branch for one activation pattern (see [`crate::conzono::relu_branch`]).
    pub fn relu_branch(&self, tape: &mut Tape, pattern: &ActivationPattern) -> Self {
        let n = self.dim(tape);
        let ng = self.n_gen(tape);
        let nc = self.n_con(tape);
        let mask = pattern.mask();
        let signs = pattern.signs();

        let abs_g = tape.abs(self.generators);
        let ones = tape.constant(DMatrix::from_element(ng, 1, 1.0));
        let row_abs = tape.matmul(abs_g, ones);
        let signed_c = tape.scale_rows(&signs, self.center);
        let gap = tape.sub(row_abs, signed_c);
        let half = tape.scale(gap, 0.5);
        let d = tape.relu(half);

        let masked_g = tape.scale_rows(&mask, self.generators);
        let zero_nn = tape.zeros(n, n);
        let generators = tape.hcat(&[masked_g, zero_nn]);

        let zero_top = tape.zeros(nc, n);
        let top = tape.hcat(&[self.constraints, zero_top]);
        let signed_g = tape.scale_rows(&signs, self.generators);
        let diag_d = tape.diag(d);
        let bottom = tape.hcat(&[signed_g, diag_d]);
        let constraints = tape.vcat(&[top, bottom]);

        let neg_signed_c = tape.scale(signed_c, -1.0);
        let new_rows = tape.sub(neg_signed_c, d);
        let offset = tape.vcat(&[self.offset, new_rows]);

        TapeZonotope {
            center: tape.scale_rows(&mask, self.center),
            generators,
            constraints,
            offset,
        }
    }

    /// Equality data `(A, b)` of `self ∩ other` with `other` constant.
    pub fn intersect_constant(&self, tape: &mut Tape, other: &ConstrainedZonotope) -> (Var, Var) {
        let g1 = self.n_gen(tape);
        let g2 = other.n_gen();
        let c2 = other.n_con();

        let z12 = tape.zeros(self.n_con(tape), g2);
        let row1 = tape.hcat(&[self.constraints, z12]);
        let z21 = tape.zeros(c2, g1);
        let a2 = tape.constant(other.constraints().clone());
        let row2 = tape.hcat(&[z21, a2]);
        let neg_g2 = tape.constant(-other.generators());
        let row3 = tape.hcat(&[self.generators, neg_g2]);
        let a = tape.vcat(&[row1, row2, row3]);

        let b2 = tape.vector(other.offset());
        let c_other = tape.vector(other.center());
        let gap = tape.sub(c_other, self.center);
        let b = tape.vcat(&[self.offset, b2, gap]);
        debug_assert_eq!(tape.value(b).nrows(), tape.value(a).nrows());
        (a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conzono::{intersect, relu_branch};
    use nalgebra::{dmatrix, dvector};

    fn fd_check(build: impl Fn(&mut Tape, Var) -> Var, x0: DMatrix<f64>) {
        let mut tape = Tape::new();
        let x = tape.param(x0.clone());
        let y = build(&mut tape, x);
        let g = tape.backward(y).get(&tape, x);
        let eps = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let mut t = Tape::new();
                let mut xv = x0.clone();
                xv[i] += delta;
                let x = t.param(xv);
                let y = build(&mut t, x);
                t.scalar(y)
            };
            let fd = (eval(eps) - eval(-eps)) / (2.0 * eps);
            assert!(
                (fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "entry {i}: {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn elementwise_and_structural_ops() {
        fd_check(
            |t, x| {
                let a = t.abs(x);
                let r = t.relu(x);
                let s = t.add(a, r);
                let c = t.hcat(&[s, x]);
                let v = t.vcat(&[c, c]);
                let w = t.constant(DMatrix::from_fn(4, 1, |i, _| i as f64 - 1.5));
                let rows = t.scale_rows(&dvector![1.0, -2.0, 0.5, 3.0], v);
                let m = t.matmul(rows, w);
                let ones = t.constant(DMatrix::from_element(1, 4, 1.0));
                let out = t.matmul(ones, m);
                t.scale(out, 0.7)
            },
            dmatrix![0.3, -1.2; 2.0, -0.4],
        );
    }

    #[test]
    fn diag_backward() {
        fd_check(
            |t, x| {
                let d = t.diag(x);
                let w = t.constant(dmatrix![1.0, 2.0; -3.0, 0.5]);
                let p = t.matmul(d, w);
                let r = t.constant(dmatrix![1.0, 1.0]);
                let q = t.matmul(r, p);
                let c = t.constant(dmatrix![2.0; -1.0]);
                t.matmul(q, c)
            },
            dmatrix![0.7; -1.3],
        );
    }

    #[test]
    fn lp_node_matches_finite_differences() {
        // b enters an emptiness program with a nondegenerate optimum.
        fd_check(
            |t, x| {
                let a = t.constant(dmatrix![1.0, 2.0, -1.0; 0.5, -1.0, 3.0]);
                t.lp_optimum(a, x, 11.0).unwrap()
            },
            dmatrix![0.7; -0.4],
        );
    }

    #[test]
    fn replayed_branch_matches_direct_construction() {
        let z = ConstrainedZonotope::new(
            dvector![0.3, -0.2],
            dmatrix![1.0, 0.5, 0.2; -0.4, 0.3, 1.0],
            dmatrix![1.0, -1.0, 0.5],
            dvector![0.1],
        )
        .unwrap();
        let unsafe_set =
            ConstrainedZonotope::axis_box(dvector![0.5, 0.5], &dvector![0.5, 0.5]).unwrap();
        for idx in 0..4 {
            let pattern = ActivationPattern::from_index(idx, 2);
            let mut tape = Tape::new();
            let tz = TapeZonotope::constant(&mut tape, &z);
            let br = tz.relu_branch(&mut tape, &pattern);
            let direct = relu_branch(&z, &pattern).zonotope;
            assert_eq!(br.value(&tape), direct);
            let (a, b) = br.intersect_constant(&mut tape, &unsafe_set);
            let inter = intersect(&direct, &unsafe_set).unwrap();
            assert_eq!(tape.value(a), inter.constraints());
            assert_eq!(tape.value(b).column(0).into_owned(), *inter.offset());
        }
    }
}
