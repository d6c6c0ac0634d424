//! Constrained zonotopes and their exact set operations.
//!
//! A constrained zonotope is the polytope
//!
//! ```text
//! CZ(c, G, A, b) = { c + G z : ‖z‖∞ ≤ 1, A z = b }
//! ```
//!
//! It is closed under affine images and intersections, and the image of one
//! under an elementwise ReLU is a finite union of them (one per orthant
//! activation pattern). Emptiness is decided by the LP in [`crate::lpsolve`].

use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lpsolve::{self, LinearProgram, LpStatus, EMPTY_TOL};

/// Default cap on the dimension handed to [`relu_split`].
pub const DEFAULT_SPLIT_CAP: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedZonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
    constraints: DMatrix<f64>,
    offset: DVector<f64>,
}

impl ConstrainedZonotope {
    pub fn new(
        center: DVector<f64>,
        generators: DMatrix<f64>,
        constraints: DMatrix<f64>,
        offset: DVector<f64>,
    ) -> Result<Self> {
        if generators.nrows() != center.len() {
            return Err(Error::dims(format!(
                "generator matrix has {} rows, center has {} entries",
                generators.nrows(),
                center.len()
            )));
        }
        if constraints.ncols() != generators.ncols() {
            return Err(Error::dims(format!(
                "constraint matrix has {} columns, generator matrix has {}",
                constraints.ncols(),
                generators.ncols()
            )));
        }
        if constraints.nrows() != offset.len() {
            return Err(Error::dims(format!(
                "constraint matrix has {} rows, offset has {} entries",
                constraints.nrows(),
                offset.len()
            )));
        }
        let finite = center
            .iter()
            .chain(generators.iter())
            .chain(constraints.iter())
            .chain(offset.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidInput(
                "non-finite entry in constrained zonotope".into(),
            ));
        }
        Ok(ConstrainedZonotope {
            center,
            generators,
            constraints,
            offset,
        })
    }

    /// Ordinary zonotope (no equality constraints).
    pub fn zonotope(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        let n_gen = generators.ncols();
        Self::new(
            center,
            generators,
            DMatrix::zeros(0, n_gen),
            DVector::zeros(0),
        )
    }

    /// Axis-aligned box `center ± half_widths`.
    pub fn axis_box(center: DVector<f64>, half_widths: &DVector<f64>) -> Result<Self> {
        if center.len() != half_widths.len() {
            return Err(Error::dims("box center and half-widths differ in length"));
        }
        Self::zonotope(center, DMatrix::from_diagonal(half_widths))
    }

    /// `[-1, 1]^n`.
    pub fn unit_box(n: usize) -> Self {
        Self::zonotope(DVector::zeros(n), DMatrix::identity(n, n)).expect("valid shapes")
    }

    pub fn singleton(point: DVector<f64>) -> Self {
        let n = point.len();
        Self::zonotope(point, DMatrix::zeros(n, 0)).expect("valid shapes")
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn n_gen(&self) -> usize {
        self.generators.ncols()
    }

    pub fn n_con(&self) -> usize {
        self.constraints.nrows()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    pub fn constraints(&self) -> &DMatrix<f64> {
        &self.constraints
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    /// `c + G z` for a coefficient vector.
    pub fn point(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.center + &self.generators * z
    }

    pub fn check_empty(&self) -> Result<lpsolve::EmptinessResult> {
        lpsolve::check_empty(self)
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.check_empty()?.is_empty_with(EMPTY_TOL))
    }

    /// Maximizer of `directionᵀx` over the set.
    pub fn support_point(&self, direction: &DVector<f64>) -> Result<DVector<f64>> {
        if direction.len() != self.dim() {
            return Err(Error::dims("support direction has the wrong length"));
        }
        let n_gen = self.n_gen();
        let objective = -(self.generators.transpose() * direction);
        let sol = box_program(objective, &self.constraints, &self.offset, 1.0).solve()?;
        if sol.status == LpStatus::Infeasible {
            return Err(Error::EmptySet);
        }
        debug_assert_eq!(sol.x.len(), n_gen);
        Ok(self.point(&sol.x))
    }
}

/// `min objectiveᵀz s.t. A z = b, |z_i| ≤ bound`.
fn box_program(
    objective: DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    bound: f64,
) -> LinearProgram {
    let n = objective.len();
    let mut ineq = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        ineq[(i, i)] = 1.0;
        ineq[(n + i, i)] = -1.0;
    }
    LinearProgram {
        objective,
        eq_matrix: a.clone(),
        eq_rhs: b.clone(),
        ineq_matrix: ineq,
        ineq_rhs: DVector::from_element(2 * n, bound),
    }
}

/// `Z ↦ W Z + w`; the constraint block is unchanged.
pub fn affine_map(
    z: &ConstrainedZonotope,
    weights: &DMatrix<f64>,
    bias: &DVector<f64>,
) -> Result<ConstrainedZonotope> {
    if weights.ncols() != z.dim() {
        return Err(Error::dims(format!(
            "weight matrix has {} columns, set has dimension {}",
            weights.ncols(),
            z.dim()
        )));
    }
    if weights.nrows() != bias.len() {
        return Err(Error::dims(format!(
            "weight matrix has {} rows, bias has {} entries",
            weights.nrows(),
            bias.len()
        )));
    }
    ConstrainedZonotope::new(
        weights * z.center() + bias,
        weights * z.generators(),
        z.constraints().clone(),
        z.offset().clone(),
    )
}

/// Exact intersection. The result keeps `Z1`'s center and appends `Z2`'s
/// coefficients as extra (zero-weight) generators tied by `G1 z1 − G2 z2 = c2 − c1`.
pub fn intersect(
    z1: &ConstrainedZonotope,
    z2: &ConstrainedZonotope,
) -> Result<ConstrainedZonotope> {
    if z1.dim() != z2.dim() {
        return Err(Error::dims(format!(
            "cannot intersect sets of dimension {} and {}",
            z1.dim(),
            z2.dim()
        )));
    }
    let (n, g1, g2) = (z1.dim(), z1.n_gen(), z2.n_gen());
    let (c1, c2) = (z1.n_con(), z2.n_con());

    let mut gens = DMatrix::zeros(n, g1 + g2);
    gens.columns_mut(0, g1).copy_from(z1.generators());

    let mut a = DMatrix::zeros(c1 + c2 + n, g1 + g2);
    a.view_mut((0, 0), (c1, g1)).copy_from(z1.constraints());
    a.view_mut((c1, g1), (c2, g2)).copy_from(z2.constraints());
    a.view_mut((c1 + c2, 0), (n, g1)).copy_from(z1.generators());
    a.view_mut((c1 + c2, g1), (n, g2))
        .copy_from(&(-z2.generators()));

    let mut b = DVector::zeros(c1 + c2 + n);
    b.rows_mut(0, c1).copy_from(z1.offset());
    b.rows_mut(c1, c2).copy_from(z2.offset());
    b.rows_mut(c1 + c2, n)
        .copy_from(&(z2.center() - z1.center()));

    ConstrainedZonotope::new(z1.center().clone(), gens, a, b)
}

/// Orthant activation tuple: `true` where the coordinate passes through the
/// ReLU, `false` where it is clamped to zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActivationPattern(pub Vec<bool>);

impl ActivationPattern {
    /// Bit `j` of `index` is the activation of coordinate `j`.
    pub fn from_index(index: usize, n: usize) -> Self {
        ActivationPattern((0..n).map(|j| (index >> j) & 1 == 1).collect())
    }

    pub fn index(&self) -> usize {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, on)| **on)
            .map(|(j, _)| 1usize << j)
            .sum()
    }

    /// Pattern of `max(0, x)` at a point (zero counts as clamped).
    pub fn of_point(x: &DVector<f64>) -> Self {
        ActivationPattern(x.iter().map(|v| *v > 0.0).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `1 − 2u` as reals.
    pub fn signs(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.0.iter().map(|&on| if on { -1.0 } else { 1.0 }),
        )
    }

    pub fn mask(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.0.iter().map(|&on| if on { 1.0 } else { 0.0 }),
        )
    }
}

impl Serialize for ActivationPattern {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let bits: Vec<u8> = self.0.iter().map(|&b| b as u8).collect();
        bits.serialize(s)
    }
}

impl<'de> Deserialize<'de> for ActivationPattern {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let bits = Vec::<u8>::deserialize(d)?;
        Ok(ActivationPattern(
            bits.into_iter().map(|b| b != 0).collect(),
        ))
    }
}

#[derive(Debug, Clone)]
pub struct ReluBranch {
    pub pattern: ActivationPattern,
    /// Slack offsets `d`, one per coordinate.
    pub slack_offset: DVector<f64>,
    pub zonotope: ConstrainedZonotope,
}

/// Slack offsets `d = max(0, ½(|G|·1 − diag(1 − 2u) c))`.
///
/// The clamp only bites on coordinates whose sign is fixed opposite to the
/// pattern; there `d = 0` turns the row into an infeasible equality instead of
/// admitting the vertex `σ x_j = |d_j|`.
pub fn slack_offsets(z: &ConstrainedZonotope, pattern: &ActivationPattern) -> DVector<f64> {
    let row_abs = z.generators().abs() * DVector::from_element(z.n_gen(), 1.0);
    let signs = pattern.signs();
    DVector::from_fn(z.dim(), |j, _| {
        (0.5 * (row_abs[j] - signs[j] * z.center()[j])).max(0.0)
    })
}

/// One branch of the exact ReLU image: the points of `Z` in the orthant
/// selected by `pattern`, with clamped coordinates zeroed.
pub fn relu_branch(z: &ConstrainedZonotope, pattern: &ActivationPattern) -> ReluBranch {
    let (n, ng, nc) = (z.dim(), z.n_gen(), z.n_con());
    assert_eq!(
        pattern.len(),
        n,
        "pattern length must match the set dimension"
    );
    let mask = pattern.mask();
    let signs = pattern.signs();
    let d = slack_offsets(z, pattern);

    let mut gens = DMatrix::zeros(n, ng + n);
    gens.columns_mut(0, ng)
        .copy_from(&(DMatrix::from_diagonal(&mask) * z.generators()));

    let mut a = DMatrix::zeros(nc + n, ng + n);
    a.view_mut((0, 0), (nc, ng)).copy_from(z.constraints());
    a.view_mut((nc, 0), (n, ng))
        .copy_from(&(DMatrix::from_diagonal(&signs) * z.generators()));
    a.view_mut((nc, ng), (n, n))
        .copy_from(&DMatrix::from_diagonal(&d));

    let mut b = DVector::zeros(nc + n);
    b.rows_mut(0, nc).copy_from(z.offset());
    b.rows_mut(nc, n)
        .copy_from(&(-signs.component_mul(z.center()) - &d));

    let center = mask.component_mul(z.center());
    ReluBranch {
        pattern: pattern.clone(),
        slack_offset: d,
        zonotope: ConstrainedZonotope::new(center, gens, a, b).expect("shapes are consistent"),
    }
}

/// All `2^n` branches of `relu(Z)`, ordered by pattern index.
pub fn relu_split(z: &ConstrainedZonotope) -> Result<Vec<ReluBranch>> {
    relu_split_with_cap(z, DEFAULT_SPLIT_CAP)
}

pub fn relu_split_with_cap(z: &ConstrainedZonotope, cap: usize) -> Result<Vec<ReluBranch>> {
    let n = z.dim();
    if n == 0 {
        return Err(Error::InvalidInput("relu split needs dimension ≥ 1".into()));
    }
    if n > cap {
        return Err(Error::SplitTooLarge { dim: n, cap });
    }
    Ok((0..1usize << n)
        .into_par_iter()
        .map(|i| relu_branch(z, &ActivationPattern::from_index(i, n)))
        .collect())
}

/// Branches of `relu(Z)` that survive the emptiness check, ordered by pattern index.
pub fn relu_split_pruned(
    z: &ConstrainedZonotope,
    cap: usize,
    empty_tol: f64,
) -> Result<Vec<ReluBranch>> {
    let n = z.dim();
    if n > cap {
        return Err(Error::SplitTooLarge { dim: n, cap });
    }
    let kept: Vec<Option<ReluBranch>> = (0..1usize << n)
        .into_par_iter()
        .map(|i| {
            let branch = relu_branch(z, &ActivationPattern::from_index(i, n));
            let empty = branch.zonotope.check_empty()?.is_empty_with(empty_tol);
            Ok((!empty).then_some(branch))
        })
        .collect::<Result<_>>()?;
    Ok(kept.into_iter().flatten().collect())
}

/// Membership test: is there `z` with `‖z‖∞ ≤ 1 + tol`, `Az = b` and
/// `‖c + Gz − p‖∞ ≤ tol`?
///
/// Solved as `min s` over `(z, s)` with `|c + Gz − p| ≤ s` elementwise.
pub fn contains_point(z: &ConstrainedZonotope, p: &DVector<f64>, tol: f64) -> Result<bool> {
    if p.len() != z.dim() {
        return Err(Error::dims(format!(
            "point has {} entries, set has dimension {}",
            p.len(),
            z.dim()
        )));
    }
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidInput(
            "membership tolerance must be positive".into(),
        ));
    }
    let (n, ng) = (z.dim(), z.n_gen());
    let nv = ng + 1;
    let mut objective = DVector::zeros(nv);
    objective[ng] = 1.0;

    let mut eq = DMatrix::zeros(z.n_con(), nv);
    eq.columns_mut(0, ng).copy_from(z.constraints());

    let mut ineq = DMatrix::zeros(2 * ng + 2 * n, nv);
    let mut rhs = DVector::zeros(2 * ng + 2 * n);
    for i in 0..ng {
        ineq[(i, i)] = 1.0;
        ineq[(ng + i, i)] = -1.0;
        rhs[i] = 1.0 + tol;
        rhs[ng + i] = 1.0 + tol;
    }
    let gap = p - z.center();
    for j in 0..n {
        let r = 2 * ng + j;
        let r2 = 2 * ng + n + j;
        for i in 0..ng {
            ineq[(r, i)] = z.generators()[(j, i)];
            ineq[(r2, i)] = -z.generators()[(j, i)];
        }
        ineq[(r, ng)] = -1.0;
        ineq[(r2, ng)] = -1.0;
        rhs[r] = gap[j];
        rhs[r2] = -gap[j];
    }
    let sol = LinearProgram {
        objective,
        eq_matrix: eq,
        eq_rhs: z.offset().clone(),
        ineq_matrix: ineq,
        ineq_rhs: rhs,
    }
    .solve()?;
    Ok(sol.status == LpStatus::Optimal && sol.x[ng] <= tol)
}

/// Hit-and-run sampler over the coefficient polytope `{z : Az = b, ‖z‖∞ ≤ 1}`.
///
/// The walk starts from a relative-interior point: the center of the largest
/// box-shrink `‖z‖∞ ≤ 1 − δ` that stays feasible. Coordinates that cannot move
/// at all (pinned by the constraints against the box) are fixed first so the
/// walk runs inside the affine hull of the set. Unconstrained sets are sampled
/// directly with uniform coefficients.
#[derive(Debug, Clone)]
pub struct CoefficientSampler {
    start: DVector<f64>,
    /// Orthonormal basis of directions that keep `Az = b` and the pinned coordinates.
    directions: DMatrix<f64>,
    direct: bool,
}

impl CoefficientSampler {
    pub fn new(z: &ConstrainedZonotope) -> Result<Self> {
        let ng = z.n_gen();
        if z.n_con() == 0 {
            return Ok(CoefficientSampler {
                start: DVector::zeros(ng),
                directions: DMatrix::identity(ng, ng),
                direct: true,
            });
        }
        let a = z.constraints();
        let b = z.offset();
        let (mut start, mut delta) = interior_point(a, b, &[])?;
        let mut pinned: Vec<(usize, f64)> = Vec::new();
        if delta <= 1e-9 {
            let bound = 1.0 + (-delta).max(0.0) + 1e-12;
            for i in 0..ng {
                let mut e = DVector::zeros(ng);
                e[i] = 1.0;
                let lo = box_program(e.clone(), a, b, bound).solve()?;
                let hi = box_program(-e, a, b, bound).solve()?;
                if lo.status != LpStatus::Optimal || hi.status != LpStatus::Optimal {
                    return Err(Error::EmptySet);
                }
                let (lo, hi) = (lo.x[i], hi.x[i]);
                if hi - lo < 1e-9 {
                    pinned.push((i, 0.5 * (lo + hi)));
                }
            }
            (start, delta) = interior_point(a, b, &pinned)?;
            if delta < -EMPTY_TOL {
                return Err(Error::EmptySet);
            }
        }

        let mut hull_rows = DMatrix::zeros(a.nrows() + pinned.len(), ng);
        hull_rows.view_mut((0, 0), (a.nrows(), ng)).copy_from(a);
        for (k, (i, _)) in pinned.iter().enumerate() {
            hull_rows[(a.nrows() + k, *i)] = 1.0;
        }
        Ok(CoefficientSampler {
            start,
            directions: null_space(&hull_rows),
            direct: false,
        })
    }

    pub fn dimension(&self) -> usize {
        self.directions.ncols()
    }

    pub fn draw(&self, k: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ng = self.start.len();
        if self.direct {
            return (0..k)
                .map(|_| DVector::from_fn(ng, |_, _| rng.random_range(-1.0..=1.0)))
                .collect();
        }
        let dim = self.dimension();
        let mut cur = self.start.clone();
        if dim == 0 {
            return vec![cur; k];
        }
        let thin = 2 + dim;
        let step = |cur: &mut DVector<f64>, rng: &mut ChaCha8Rng| {
            let r = DVector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0));
            let d = &self.directions * r;
            let (mut lo, mut hi) = (0.0f64, 0.0f64);
            let mut first = true;
            for i in 0..ng {
                if d[i].abs() < 1e-13 {
                    continue;
                }
                let a = (-1.0 - cur[i]) / d[i];
                let b = (1.0 - cur[i]) / d[i];
                let (a, b) = if a < b { (a, b) } else { (b, a) };
                if first {
                    (lo, hi) = (a, b);
                    first = false;
                } else {
                    lo = lo.max(a);
                    hi = hi.min(b);
                }
            }
            let (lo, hi) = (lo.min(0.0), hi.max(0.0));
            if hi > lo {
                let t = rng.random_range(lo..=hi);
                *cur += d * t;
                cur.apply(|v| *v = v.clamp(-1.0, 1.0));
            }
        };
        for _ in 0..10 * dim {
            step(&mut cur, &mut rng);
        }
        let mut out = Vec::with_capacity(k);
        for _ in 0..k {
            for _ in 0..thin {
                step(&mut cur, &mut rng);
            }
            out.push(cur.clone());
        }
        out
    }
}

/// `max δ s.t. Az = b, z_i = v_i (pinned), |z_i| ≤ 1 − δ (free), δ ≤ 1`.
fn interior_point(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    pinned: &[(usize, f64)],
) -> Result<(DVector<f64>, f64)> {
    let ng = a.ncols();
    let nv = ng + 1;
    let free: Vec<usize> = (0..ng)
        .filter(|i| !pinned.iter().any(|(p, _)| p == i))
        .collect();

    let mut objective = DVector::zeros(nv);
    objective[ng] = -1.0;
    let mut eq = DMatrix::zeros(a.nrows() + pinned.len(), nv);
    eq.view_mut((0, 0), (a.nrows(), ng)).copy_from(a);
    let mut eq_rhs = DVector::zeros(a.nrows() + pinned.len());
    eq_rhs.rows_mut(0, a.nrows()).copy_from(b);
    for (k, (i, v)) in pinned.iter().enumerate() {
        eq[(a.nrows() + k, *i)] = 1.0;
        eq_rhs[a.nrows() + k] = *v;
    }
    let rows = 2 * free.len() + 1;
    let mut ineq = DMatrix::zeros(rows, nv);
    let mut rhs = DVector::from_element(rows, 1.0);
    for (k, &i) in free.iter().enumerate() {
        ineq[(2 * k, i)] = 1.0;
        ineq[(2 * k, ng)] = 1.0;
        ineq[(2 * k + 1, i)] = -1.0;
        ineq[(2 * k + 1, ng)] = 1.0;
    }
    ineq[(rows - 1, ng)] = 1.0;
    rhs[rows - 1] = 1.0;

    let sol = LinearProgram {
        objective,
        eq_matrix: eq,
        eq_rhs,
        ineq_matrix: ineq,
        ineq_rhs: rhs,
    }
    .solve()?;
    if sol.status == LpStatus::Infeasible {
        return Err(Error::EmptySet);
    }
    let delta = sol.x[ng];
    if delta < -EMPTY_TOL {
        return Err(Error::EmptySet);
    }
    Ok((sol.x.rows(0, ng).into_owned(), delta))
}

/// Orthonormal basis (as columns) of `{x : M x = 0}`.
pub(crate) fn null_space(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.ncols();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let rows = m.nrows().max(n);
    let mut padded = DMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let smax = svd.singular_values.max().max(1.0);
    let keep: Vec<usize> = (0..n)
        .filter(|&k| svd.singular_values[k] <= 1e-10 * smax)
        .collect();
    let mut basis = DMatrix::zeros(n, keep.len());
    for (c, &k) in keep.iter().enumerate() {
        basis.set_column(c, &vt.row(k).transpose());
    }
    basis
}

/// Coefficient vectors of `k` points of `Z`; deterministic for a fixed seed.
pub fn sample_coefficients(
    z: &ConstrainedZonotope,
    k: usize,
    seed: u64,
) -> Result<Vec<DVector<f64>>> {
    Ok(CoefficientSampler::new(z)?.draw(k, seed))
}

/// `k` points of `Z`; deterministic for a fixed seed.
pub fn sample(z: &ConstrainedZonotope, k: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    Ok(sample_coefficients(z, k, seed)?
        .iter()
        .map(|c| z.point(c))
        .collect())
}

#[derive(Serialize, Deserialize)]
struct CzJson {
    c: Vec<f64>,
    #[serde(rename = "G")]
    g: Vec<Vec<f64>>,
    #[serde(rename = "A", default)]
    a: Vec<Vec<f64>>,
    #[serde(default)]
    b: Vec<f64>,
}

pub(crate) fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn matrix_from_rows(
    rows: &[Vec<f64>],
    ncols: usize,
    what: &str,
) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::Parse(format!(
            "{what}: row of length {} where {ncols} columns were expected",
            bad.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

impl Serialize for ConstrainedZonotope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        CzJson {
            c: self.center.iter().copied().collect(),
            g: matrix_rows(&self.generators),
            a: matrix_rows(&self.constraints),
            b: self.offset.iter().copied().collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConstrainedZonotope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = CzJson::deserialize(d)?;
        let n_gen = raw
            .g
            .first()
            .map(Vec::len)
            .or_else(|| raw.a.first().map(Vec::len))
            .unwrap_or(0);
        let build = || -> Result<ConstrainedZonotope> {
            let g = matrix_from_rows(&raw.g, n_gen, "G")?;
            let a = matrix_from_rows(&raw.a, n_gen, "A")?;
            ConstrainedZonotope::new(
                DVector::from_vec(raw.c.clone()),
                g,
                a,
                DVector::from_vec(raw.b.clone()),
            )
        };
        build().map_err(D::Error::custom)
    }
}
