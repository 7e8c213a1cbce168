//! Dense convex quadratic programming with box bounds and equality rows.
//!
//! Solves `minimize (1/2) z' H z + c' z` subject to per-coordinate bounds
//! `lower <= z <= upper` and up to a few dense equality rows `a . z = b`
//! whose supports do not overlap. This covers every dual in this crate: a
//! single sum constraint over all variables for the baseline models, and two
//! sum constraints over the two variable blocks for the privileged models.
//!
//! The algorithm is a monotone projected-gradient / active-set hybrid:
//! projected-gradient steps (with exact projection onto the box-plus-sum
//! set) identify and release active bounds in bulk, while reduced Newton
//! steps on the free variables (Cholesky plus a tiny Schur system for the
//! equality multipliers) give fast exact convergence. Every accepted iterate
//! strictly decreases the (ridge-augmented) objective, and the iterate path
//! is deterministic.
//!
//! A small ridge is added to the diagonal during the solve so that the
//! Hessian is strictly positive definite even when the assembled dual is
//! singular; the reported objective and KKT residual always refer to the
//! problem as given.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::float::Float;

/// Quadratic term of a QP, `q(z) = (1/2) z' H z`.
///
/// `Dense` stores H explicitly. `CoupledBlocks` represents the structured
/// Hessian of the privileged duals over `z = [head; tail]` with blocks of
/// equal size:
///
/// ```text
/// q(z) = (1/2) head' B head + (weight/2) (head - tail)' C (head - tail)
/// ```
///
/// Keeping `weight` symbolic avoids materializing `weight * C`, which at
/// extreme regularization would destroy the precision of gradient
/// evaluations through cancellation.
#[derive(Debug, Clone)]
pub enum Quadratic<F> {
    Dense(Array2<F>),
    CoupledBlocks {
        base: Array2<F>,
        coupling: Array2<F>,
        weight: F,
    },
}

impl<F: Float> Quadratic<F> {
    pub fn dim(&self) -> usize {
        match self {
            Quadratic::Dense(h) => h.nrows(),
            Quadratic::CoupledBlocks { base, .. } => 2 * base.nrows(),
        }
    }

    /// H z.
    pub fn matvec(&self, z: ArrayView1<'_, F>) -> Array1<F> {
        match self {
            Quadratic::Dense(h) => h.dot(&z),
            Quadratic::CoupledBlocks {
                base,
                coupling,
                weight,
            } => {
                let l = base.nrows();
                let head = z.slice(ndarray::s![..l]);
                let tail = z.slice(ndarray::s![l..]);
                let diff = Array1::from_shape_fn(l, |i| head[i] - tail[i]);
                let coupled = coupling.dot(&diff);
                let mut out = Array1::zeros(2 * l);
                let top = base.dot(&head);
                for i in 0..l {
                    out[i] = top[i] + *weight * coupled[i];
                    out[l + i] = -*weight * coupled[i];
                }
                out
            }
        }
    }

    /// (1/2) z' H z.
    pub fn value(&self, z: ArrayView1<'_, F>) -> F {
        let half = F::cast(0.5);
        match self {
            Quadratic::Dense(h) => half * z.dot(&h.dot(&z)),
            Quadratic::CoupledBlocks {
                base,
                coupling,
                weight,
            } => {
                let l = base.nrows();
                let head = z.slice(ndarray::s![..l]);
                let tail = z.slice(ndarray::s![l..]);
                let diff = Array1::from_shape_fn(l, |i| head[i] - tail[i]);
                half * head.dot(&base.dot(&head)) + half * *weight * diff.dot(&coupling.dot(&diff))
            }
        }
    }

    /// Single entry H[i][j].
    fn entry(&self, i: usize, j: usize) -> F {
        match self {
            Quadratic::Dense(h) => h[[i, j]],
            Quadratic::CoupledBlocks {
                base,
                coupling,
                weight,
            } => {
                let l = base.nrows();
                match (i < l, j < l) {
                    (true, true) => base[[i, j]] + *weight * coupling[[i, j]],
                    (true, false) => -*weight * coupling[[i, j - l]],
                    (false, true) => -*weight * coupling[[i - l, j]],
                    (false, false) => *weight * coupling[[i - l, j - l]],
                }
            }
        }
    }

    fn trace(&self) -> F {
        match self {
            Quadratic::Dense(h) => (0..h.nrows()).map(|i| h[[i, i]]).sum(),
            Quadratic::CoupledBlocks {
                base,
                coupling,
                weight,
            } => {
                let l = base.nrows();
                let two = F::cast(2.0);
                (0..l)
                    .map(|i| base[[i, i]] + two * *weight * coupling[[i, i]])
                    .sum()
            }
        }
    }

    fn check_symmetric(&self) -> Result<()> {
        let tol = F::cast(1e-10);
        let check = |m: &Array2<F>| -> Result<()> {
            if m.nrows() != m.ncols() {
                return Err(Error::DimensionMismatch(m.nrows(), m.ncols()));
            }
            let mut scale = F::one();
            for v in m.iter() {
                scale = scale.max(v.abs());
            }
            for i in 0..m.nrows() {
                for j in (i + 1)..m.ncols() {
                    if (m[[i, j]] - m[[j, i]]).abs() > tol * scale {
                        return Err(Error::Infeasible(format!(
                            "quadratic term is not symmetric at ({i}, {j})"
                        )));
                    }
                }
            }
            Ok(())
        };
        match self {
            Quadratic::Dense(h) => check(h),
            Quadratic::CoupledBlocks { base, coupling, .. } => {
                check(base)?;
                check(coupling)
            }
        }
    }
}

/// One dense equality constraint `coeffs . z = rhs`.
#[derive(Debug, Clone)]
pub struct EqRow<F> {
    pub coeffs: Array1<F>,
    pub rhs: F,
}

impl<F: Float> EqRow<F> {
    /// Sum constraint over a contiguous index range.
    pub fn sum_over(dim: usize, range: std::ops::Range<usize>, rhs: F) -> Self {
        let mut coeffs = Array1::zeros(dim);
        for i in range {
            coeffs[i] = F::one();
        }
        EqRow { coeffs, rhs }
    }

    fn support(&self) -> Vec<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, &a)| a != F::zero())
            .map(|(i, _)| i)
            .collect()
    }
}

/// A box-and-equality constrained convex QP.
#[derive(Debug, Clone)]
pub struct QpProblem<F> {
    pub quad: Quadratic<F>,
    pub linear: Array1<F>,
    pub eq_rows: Vec<EqRow<F>>,
    pub lower: Array1<F>,
    pub upper: Array1<F>,
}

impl<F: Float> QpProblem<F> {
    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    /// Objective `(1/2) z' H z + c' z` of the problem as given (no ridge).
    pub fn objective(&self, z: ArrayView1<'_, F>) -> F {
        self.quad.value(z) + self.linear.dot(&z)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(Error::EmptyInput("zero-dimensional QP"));
        }
        if self.quad.dim() != d {
            return Err(Error::DimensionMismatch(self.quad.dim(), d));
        }
        if self.lower.len() != d || self.upper.len() != d {
            return Err(Error::DimensionMismatch(self.lower.len(), d));
        }
        self.quad.check_symmetric()?;
        for i in 0..d {
            if self.lower[i] > self.upper[i] {
                return Err(Error::Infeasible(format!(
                    "lower[{i}] > upper[{i}]"
                )));
            }
        }
        let mut seen = vec![false; d];
        for row in &self.eq_rows {
            if row.coeffs.len() != d {
                return Err(Error::DimensionMismatch(row.coeffs.len(), d));
            }
            for i in row.support() {
                if seen[i] {
                    return Err(Error::Infeasible(format!(
                        "equality rows overlap on coordinate {i}"
                    )));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }

    /// Bracketed feasibility test for one row: the attainable range of
    /// `coeffs . z` over the box must contain `rhs`.
    fn check_row_feasible(&self, row: &EqRow<F>) -> Result<()> {
        let mut min = F::zero();
        let mut max = F::zero();
        for i in row.support() {
            let a = row.coeffs[i];
            if a > F::zero() {
                min += a * self.lower[i];
                max += a * self.upper[i];
            } else {
                min += a * self.upper[i];
                max += a * self.lower[i];
            }
        }
        let slack = F::cast(1e-12) * (F::one() + max.abs() + min.abs() + row.rhs.abs());
        if row.rhs < min - slack || row.rhs > max + slack {
            return Err(Error::Infeasible(format!(
                "equality rhs {} outside attainable range [{}, {}]",
                row.rhs, min, max
            )));
        }
        Ok(())
    }

    /// Exact projection of `v` onto the feasible set.
    ///
    /// Coordinates outside every row are clipped to the box; each row's
    /// block is projected onto `{ coeffs . z = rhs } ∩ box` by bisection on
    /// the shift multiplier.
    pub fn project(&self, v: ArrayView1<'_, F>) -> Array1<F> {
        let d = self.dim();
        let mut z = Array1::zeros(d);
        let mut in_row = vec![false; d];
        for row in &self.eq_rows {
            for i in row.support() {
                in_row[i] = true;
            }
        }
        for i in 0..d {
            if !in_row[i] {
                z[i] = clamp(v[i], self.lower[i], self.upper[i]);
            }
        }
        for row in &self.eq_rows {
            self.project_row(row, v, &mut z);
        }
        z
    }

    fn project_row(&self, row: &EqRow<F>, v: ArrayView1<'_, F>, z: &mut Array1<F>) {
        let support = row.support();
        let shifted = |theta: F, z: &mut Array1<F>| {
            for &i in &support {
                let a = row.coeffs[i];
                z[i] = clamp(v[i] - theta * a, self.lower[i], self.upper[i]);
            }
        };
        let value = |theta: F, z: &mut Array1<F>| -> F {
            shifted(theta, z);
            let mut s = F::zero();
            for &i in &support {
                s += row.coeffs[i] * z[i];
            }
            s - row.rhs
        };
        // h(theta) is non-increasing; bracket a sign change then bisect.
        let mut lo = -F::one();
        let mut hi = F::one();
        for _ in 0..200 {
            if value(lo, z) >= F::zero() {
                break;
            }
            lo = lo * F::cast(2.0);
        }
        for _ in 0..200 {
            if value(hi, z) <= F::zero() {
                break;
            }
            hi = hi * F::cast(2.0);
        }
        for _ in 0..200 {
            let mid = (lo + hi) * F::cast(0.5);
            if mid <= lo || mid >= hi {
                break;
            }
            if value(mid, z) >= F::zero() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        shifted(lo, z);
        // distribute the residual over strictly interior support coordinates
        let mut interior: Vec<usize> = Vec::new();
        let mut denom = F::zero();
        let mut s = F::zero();
        for &i in &support {
            s += row.coeffs[i] * z[i];
            if z[i] > self.lower[i] && z[i] < self.upper[i] {
                interior.push(i);
                denom += row.coeffs[i] * row.coeffs[i];
            }
        }
        let resid = s - row.rhs;
        if resid != F::zero() && denom > F::zero() {
            for &i in &interior {
                z[i] = clamp(
                    z[i] - row.coeffs[i] * resid / denom,
                    self.lower[i],
                    self.upper[i],
                );
            }
        }
    }

    /// Deterministic feasible starting point: uniform within each row's
    /// block, projected onto the box-plus-sum set; coordinates outside any
    /// row start at 0 clipped to the box. Errors if a row is infeasible.
    pub fn feasible_start(&self) -> Result<Array1<F>> {
        for row in &self.eq_rows {
            self.check_row_feasible(row)?;
        }
        let d = self.dim();
        let mut v = Array1::zeros(d);
        for row in &self.eq_rows {
            let support = row.support();
            let sum_a: F = support.iter().map(|&i| row.coeffs[i]).sum();
            if sum_a != F::zero() {
                let u = row.rhs / sum_a;
                for &i in &support {
                    v[i] = u;
                }
            }
        }
        Ok(self.project(v.view()))
    }
}

#[inline]
fn clamp<F: Float>(v: F, lo: F, hi: F) -> F {
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

/// Solver settings.
///
/// `max_iter = 0` means the default `100 * dim`. `ridge = None` means the
/// default `1e-10 * trace(H) / dim`; trainers with structured Hessians pass
/// an explicit value scaled to their data block.
#[derive(Debug, Clone, Copy)]
pub struct QpSettings<F> {
    pub tol: F,
    pub max_iter: usize,
    pub ridge: Option<F>,
}

impl<F: Float> Default for QpSettings<F> {
    fn default() -> Self {
        QpSettings {
            tol: F::cast(1e-8),
            max_iter: 0,
            ridge: None,
        }
    }
}

/// Solved state of a QP.
#[derive(Debug, Clone)]
pub struct QpSolution<F> {
    pub z: Array1<F>,
    pub objective: F,
    pub kkt_residual: F,
    pub iterations: usize,
    pub converged: bool,
}

/// Solve the QP to the requested stationarity tolerance.
///
/// Returns `converged = false` with the best iterate if the tolerance is
/// not reached within the iteration budget; infeasible constraints are an
/// error.
pub fn solve_qp<F: Float>(problem: &QpProblem<F>, settings: &QpSettings<F>) -> Result<QpSolution<F>> {
    let (solution, _) = solve_qp_traced(problem, settings)?;
    Ok(solution)
}

/// As [`solve_qp`], additionally returning the ridge-augmented objective of
/// every accepted iterate (the quantity the line searches are monotone in).
pub fn solve_qp_traced<F: Float>(
    problem: &QpProblem<F>,
    settings: &QpSettings<F>,
) -> Result<(QpSolution<F>, Vec<F>)> {
    problem.validate()?;
    let d = problem.dim();
    let max_iter = if settings.max_iter == 0 {
        100 * d
    } else {
        settings.max_iter
    };
    let ridge = settings
        .ridge
        .unwrap_or_else(|| F::cast(1e-10) * problem.quad.trace() / F::cast_usize(d));

    let obj_r = |z: &Array1<F>| -> F {
        problem.objective(z.view()) + ridge * F::cast(0.5) * z.dot(z)
    };
    let grad_r = |z: &Array1<F>| -> Array1<F> {
        let mut g = problem.quad.matvec(z.view());
        for i in 0..d {
            g[i] += problem.linear[i] + ridge * z[i];
        }
        g
    };

    let mut z = problem.feasible_start()?;
    let mut f = obj_r(&z);
    let mut trace = vec![f];
    let mut best_z = z.clone();
    let mut best_res = F::infinity();
    let mut iterations = 0;
    let mut converged = false;
    const NEWTON_CAP: usize = 800;

    while iterations < max_iter {
        let gr = grad_r(&z);
        // convergence is measured on the problem as given
        let mut g_raw = gr.clone();
        for i in 0..d {
            g_raw[i] -= ridge * z[i];
        }
        let res = residual_from_gradient(problem, z.view(), g_raw.view());
        if res < best_res {
            best_res = res;
            best_z.assign(&z);
        }
        if res <= settings.tol {
            converged = true;
            break;
        }
        iterations += 1;

        let mut moved = false;

        // Newton phase: exact minimization over the free variables.
        let free = free_set(problem, &z);
        let newton_p = if !free.is_empty() && free.len() <= NEWTON_CAP {
            newton_direction(problem, ridge, &free, &gr)
        } else {
            None
        };
        if let Some(p) = &newton_p {
            if let Some((zn, fn_)) = accept_newton(problem, &z, f, p) {
                z = zn;
                f = fn_;
                trace.push(f);
                moved = true;
            }
        }

        // Projected-gradient phase: bulk identification / release of bounds.
        if !moved {
            let gr2 = grad_r(&z);
            if let Some((zp, fp)) = projected_gradient_step(problem, &z, f, &gr2) {
                z = zp;
                f = fp;
                trace.push(f);
                moved = true;
            }
        }

        // Endgame polish: near the optimum the objective is flat at f64
        // granularity and the projection's redistribution would smear the
        // fine structure of the iterate. Take the raw Newton step (clipped
        // to the box, tangent to the rows by construction) whenever it
        // shrinks the stationarity residual without ascending.
        if !moved {
            if let Some(p) = &newton_p {
                let cand = Array1::from_shape_fn(d, |i| {
                    clamp(z[i] + p[i], problem.lower[i], problem.upper[i])
                });
                let fc = obj_r(&cand);
                let mut g_raw_c = problem.quad.matvec(cand.view());
                for i in 0..d {
                    g_raw_c[i] += problem.linear[i];
                }
                let res_c = residual_from_gradient(problem, cand.view(), g_raw_c.view());
                if fc <= f + F::cast(1e-14) * (F::one() + f.abs())
                    && res_c < res * F::cast(0.99)
                {
                    z = cand;
                    f = fc;
                    trace.push(f);
                    moved = true;
                }
            }
        }

        if !moved {
            // no productive step exists numerically; stop here
            break;
        }
    }

    if !converged {
        // the loop may have exited by budget or stall; re-check the final point
        let g = {
            let mut g = problem.quad.matvec(z.view());
            for i in 0..d {
                g[i] += problem.linear[i];
            }
            g
        };
        let res = residual_from_gradient(problem, z.view(), g.view());
        if res < best_res {
            best_res = res;
            best_z.assign(&z);
        }
        converged = best_res <= settings.tol;
    }

    let z = best_z;
    let objective = problem.objective(z.view());
    let solution = QpSolution {
        kkt_residual: best_res,
        z,
        objective,
        iterations,
        converged,
    };
    Ok((solution, trace))
}

const ACTIVITY_TOL: f64 = 1e-9;

fn free_set<F: Float>(problem: &QpProblem<F>, z: &Array1<F>) -> Vec<usize> {
    let tol = F::cast(ACTIVITY_TOL);
    (0..problem.dim())
        .filter(|&i| {
            z[i] > problem.lower[i] + tol && z[i] < problem.upper[i] - tol
        })
        .collect()
}

/// Basis vector of the reduced Newton system.
///
/// For the coupled two-block Hessian the free (head, tail) pairs are
/// re-expressed in sum/difference coordinates; this decouples the
/// coupling-weight scale from the base scale, so the reduced system stays
/// well conditioned no matter how extreme the weight is. Transformed
/// Hessian entries are computed analytically to avoid cancellation.
#[derive(Debug, Clone, Copy)]
enum BasisCol {
    /// Plain coordinate `e_i`.
    Plain(usize),
    /// Difference of a free pair: `(e_i - e_{i+l}) / 2`.
    Diff(usize),
    /// Sum of a free pair: `(e_i + e_{i+l}) / 2`.
    Sum(usize),
    /// Lone free head coordinate (its tail mate is at a bound).
    Head(usize),
    /// Lone free tail coordinate (index into the tail block).
    Tail(usize),
}

impl BasisCol {
    /// (original index, coefficient) pairs of the column, given `l`.
    fn entries<F: Float>(&self, l: usize) -> [(usize, F); 2] {
        let half = F::cast(0.5);
        match *self {
            BasisCol::Plain(i) => [(i, F::one()), (i, F::zero())],
            BasisCol::Diff(i) => [(i, half), (i + l, -half)],
            BasisCol::Sum(i) => [(i, half), (i + l, half)],
            BasisCol::Head(i) => [(i, F::one()), (i, F::zero())],
            BasisCol::Tail(i) => [(i + l, F::one()), (i + l, F::zero())],
        }
    }
}

/// Transformed Hessian entry for the coupled form, computed analytically:
/// with `B` the base block, `C` the coupling block and `w` the weight,
/// the pair basis gives `Diff/Diff = B/4 + wC`, `Diff/Sum = Sum/Sum = B/4`,
/// and the weight cancels exactly out of every entry it should.
fn coupled_entry<F: Float>(
    base: &Array2<F>,
    coupling: &Array2<F>,
    w: F,
    a: BasisCol,
    b: BasisCol,
) -> F {
    use BasisCol::*;
    let quarter = F::cast(0.25);
    let half = F::cast(0.5);
    match (a, b) {
        (Diff(i), Diff(j)) => quarter * base[[i, j]] + w * coupling[[i, j]],
        (Diff(i), Sum(j)) | (Sum(j), Diff(i)) => quarter * base[[i, j]],
        (Sum(i), Sum(j)) => quarter * base[[i, j]],
        (Diff(i), Head(j)) | (Head(j), Diff(i)) => half * base[[i, j]] + w * coupling[[i, j]],
        (Diff(i), Tail(j)) | (Tail(j), Diff(i)) => -w * coupling[[i, j]],
        (Sum(i), Head(j)) | (Head(j), Sum(i)) => half * base[[i, j]],
        (Sum(_), Tail(_)) | (Tail(_), Sum(_)) => F::zero(),
        (Head(i), Head(j)) => base[[i, j]] + w * coupling[[i, j]],
        (Head(i), Tail(j)) | (Tail(j), Head(i)) => -w * coupling[[i, j]],
        (Tail(i), Tail(j)) => w * coupling[[i, j]],
        (Plain(_), _) | (_, Plain(_)) => unreachable!("plain columns only for dense quadratics"),
    }
}

/// Reduced Newton direction on the free set: solves
/// `min (1/2) p' H_ff p + g_f' p  s.t.  a_f' p = 0` for each equality row,
/// via Cholesky of the (transformed, Jacobi-scaled) reduced Hessian and a
/// small Schur system for the equality multipliers. Returns the
/// full-dimensional direction (zero outside the free set).
fn newton_direction<F: Float>(
    problem: &QpProblem<F>,
    ridge: F,
    free: &[usize],
    grad: &Array1<F>,
) -> Option<Array1<F>> {
    let d = problem.dim();
    let nf = free.len();

    // choose the basis
    let mut cols: Vec<BasisCol> = Vec::with_capacity(nf);
    let (dense_like, block_l) = match &problem.quad {
        Quadratic::Dense(_) => (true, 0),
        Quadratic::CoupledBlocks { base, .. } => (false, base.nrows()),
    };
    if dense_like {
        cols.extend(free.iter().map(|&i| BasisCol::Plain(i)));
    } else {
        let l = block_l;
        let mut is_free = vec![false; d];
        for &i in free {
            is_free[i] = true;
        }
        for &i in free {
            if i < l {
                if is_free[i + l] {
                    cols.push(BasisCol::Diff(i));
                    cols.push(BasisCol::Sum(i));
                } else {
                    cols.push(BasisCol::Head(i));
                }
            } else if !is_free[i - l] {
                cols.push(BasisCol::Tail(i - l));
            }
        }
    }
    let nb = cols.len();
    debug_assert_eq!(nb, nf);

    // transformed Hessian (+ ridge * T'T, which is diagonal for this basis)
    let mut h = Array2::zeros((nb, nb));
    match &problem.quad {
        Quadratic::Dense(hd) => {
            for a in 0..nb {
                let BasisCol::Plain(i) = cols[a] else { unreachable!() };
                for b in a..nb {
                    let BasisCol::Plain(j) = cols[b] else { unreachable!() };
                    h[[a, b]] = hd[[i, j]];
                    h[[b, a]] = h[[a, b]];
                }
                h[[a, a]] += ridge;
            }
        }
        Quadratic::CoupledBlocks {
            base,
            coupling,
            weight,
        } => {
            for a in 0..nb {
                for b in a..nb {
                    let v = coupled_entry(base, coupling, *weight, cols[a], cols[b]);
                    h[[a, b]] = v;
                    h[[b, a]] = v;
                }
                let tt = match cols[a] {
                    BasisCol::Diff(_) | BasisCol::Sum(_) => F::cast(0.5),
                    _ => F::one(),
                };
                h[[a, a]] += ridge * tt;
            }
        }
    }

    // transformed gradient and row coefficients
    let l = block_l;
    let tdot = |col: BasisCol, v: &Array1<F>| -> F {
        let [(i0, c0), (i1, c1)] = col.entries::<F>(l);
        c0 * v[i0] + c1 * v[i1]
    };
    let g_t = Array1::from_shape_fn(nb, |a| tdot(cols[a], grad));
    let rows_t: Vec<Array1<F>> = problem
        .eq_rows
        .iter()
        .map(|r| Array1::from_shape_fn(nb, |a| tdot(cols[a], &r.coeffs)))
        .filter(|a| a.iter().any(|&v| v != F::zero()))
        .collect();

    // Jacobi scaling on top of the transform
    let scale = Array1::from_shape_fn(nb, |a| {
        let dv: F = h[[a, a]].abs();
        if dv > F::cast(1e-300) {
            F::one() / dv.sqrt()
        } else {
            F::one()
        }
    });
    let mut hs = Array2::zeros((nb, nb));
    for a in 0..nb {
        for b in 0..nb {
            hs[[a, b]] = h[[a, b]] * scale[a] * scale[b];
        }
    }
    let mut chol = hs.clone();
    let mut bump = F::cast(1e-14);
    let mut tries = 0;
    while cholesky_in_place(&mut chol).is_err() {
        tries += 1;
        if tries > 6 {
            return None;
        }
        chol.assign(&hs);
        for a in 0..nb {
            chol[[a, a]] += bump;
        }
        bump = bump * F::cast(100.0);
    }

    let solve = |rhs: &Array1<F>| -> Array1<F> {
        let mut x = Array1::from_shape_fn(nb, |a| rhs[a] * scale[a]);
        cholesky_solve(&chol, &mut x);
        for a in 0..nb {
            x[a] *= scale[a];
        }
        x
    };

    let xg = solve(&g_t);
    let xa: Vec<Array1<F>> = rows_t.iter().map(solve).collect();
    let k = rows_t.len();
    let mut p_t = xg.mapv(|v| -v);
    if k > 0 {
        // Schur system S mu = A' H^-1 g with S = A' H^-1 A
        let mut s = Array2::zeros((k, k));
        let mut w = Array1::zeros(k);
        for r in 0..k {
            w[r] = rows_t[r].dot(&xg);
            for c in 0..k {
                s[[r, c]] = rows_t[r].dot(&xa[c]);
            }
        }
        let mu = solve_small(&mut s, &mut w)?;
        for r in 0..k {
            for (pi, &xi) in p_t.iter_mut().zip(xa[r].iter()) {
                *pi += xi * mu[r];
            }
        }
    }

    // one round of iterative refinement on the transformed KKT system
    {
        let mut resid = g_t.clone();
        for a in 0..nb {
            let mut hp = F::zero();
            for b in 0..nb {
                hp += h[[a, b]] * p_t[b];
            }
            resid[a] += hp;
        }
        let xr = solve(&resid);
        if k > 0 {
            let mut s = Array2::zeros((k, k));
            let mut w = Array1::zeros(k);
            for r in 0..k {
                w[r] = rows_t[r].dot(&xr);
                for c in 0..k {
                    s[[r, c]] = rows_t[r].dot(&xa[c]);
                }
            }
            if let Some(dmu) = solve_small(&mut s, &mut w) {
                for (i, (pi, &xi)) in p_t.iter_mut().zip(xr.iter()).enumerate() {
                    let mut corr = -xi;
                    for r in 0..k {
                        corr += xa[r][i] * dmu[r];
                    }
                    *pi += corr;
                }
            }
        } else {
            for (pi, &xi) in p_t.iter_mut().zip(xr.iter()) {
                *pi -= xi;
            }
        }
    }

    // map back to original coordinates
    let mut full = Array1::zeros(d);
    for (a, col) in cols.iter().enumerate() {
        let [(i0, c0), (i1, c1)] = col.entries::<F>(l);
        full[i0] += c0 * p_t[a];
        if c1 != F::zero() {
            full[i1] += c1 * p_t[a];
        }
    }

    // kill any drift off the row tangent space, moving free coords only
    let mut is_free = vec![false; d];
    for &i in free {
        is_free[i] = true;
    }
    for row in &problem.eq_rows {
        let support = row.support();
        let mut aa = F::zero();
        let mut az = F::zero();
        for &i in &support {
            az += row.coeffs[i] * full[i];
            if is_free[i] {
                aa += row.coeffs[i] * row.coeffs[i];
            }
        }
        if aa > F::zero() {
            let drift = az / aa;
            for &i in &support {
                if is_free[i] {
                    full[i] -= row.coeffs[i] * drift;
                }
            }
        }
    }
    let mut norm = F::zero();
    for i in 0..d {
        if !is_free[i] {
            full[i] = F::zero();
        } else {
            norm = norm.max(full[i].abs());
        }
    }
    if norm.is_finite() && norm > F::cast(1e-300) {
        Some(full)
    } else {
        None
    }
}

/// Accept a Newton direction: first try the projection of the full step
/// (pins many bounds at once), then the ray clipped at the first blocking
/// bound. Only strictly decreasing candidates are accepted.
fn accept_newton<F: Float>(
    problem: &QpProblem<F>,
    z: &Array1<F>,
    f: F,
    p: &Array1<F>,
) -> Option<(Array1<F>, F)> {
    let d = problem.dim();
    let descent = F::cast(1e-15) * (F::one() + f.abs());
    let obj = |z: &Array1<F>| problem.objective(z.view());

    let target = Array1::from_shape_fn(d, |i| z[i] + p[i]);
    let full = problem.project(target.view());
    let f_full = obj(&full);
    if f_full < f - descent {
        return Some((full, f_full));
    }

    // step to the first blocking bound along p
    let mut t_max = F::one();
    for i in 0..d {
        if p[i] > F::zero() {
            t_max = t_max.min((problem.upper[i] - z[i]) / p[i]);
        } else if p[i] < F::zero() {
            t_max = t_max.min((problem.lower[i] - z[i]) / p[i]);
        }
    }
    if !(t_max > F::zero()) {
        return None;
    }
    let mut t = t_max.min(F::one());
    for _ in 0..8 {
        let mut zc = z.clone();
        for i in 0..d {
            zc[i] = clamp(z[i] + t * p[i], problem.lower[i], problem.upper[i]);
        }
        let fc = obj(&zc);
        if fc < f - descent {
            return Some((zc, fc));
        }
        t = t * F::cast(0.5);
    }
    None
}

/// Monotone projected-gradient step with a spectral initial step size and
/// halving backtracking along the projection arc.
fn projected_gradient_step<F: Float>(
    problem: &QpProblem<F>,
    z: &Array1<F>,
    f: F,
    g: &Array1<F>,
) -> Option<(Array1<F>, F)> {
    let gg = g.dot(g);
    if gg == F::zero() {
        return None;
    }
    let hg = problem.quad.matvec(g.view());
    let ghg = g.dot(&hg);
    let mut t = if ghg > F::zero() { gg / ghg } else { F::one() };
    if !t.is_finite() || t <= F::zero() {
        t = F::one();
    }
    let descent = F::cast(1e-15) * (F::one() + f.abs());
    for _ in 0..50 {
        let target = Array1::from_shape_fn(z.len(), |i| z[i] - t * g[i]);
        let cand = problem.project(target.view());
        let fc = problem.objective(cand.view());
        if fc < f - descent {
            return Some((cand, fc));
        }
        t = t * F::cast(0.5);
    }
    None
}

/// Stationarity residual of `z` for the problem as given.
///
/// The gradient `H z + c` is reduced by the best multipliers of the active
/// equality rows; free coordinates contribute `|g_i - lambda a_i|`, while
/// coordinates at a bound contribute only sign violations. The result is the
/// max-norm over all coordinates.
pub fn kkt_residual<F: Float>(problem: &QpProblem<F>, z: ArrayView1<'_, F>) -> Result<F> {
    problem.validate()?;
    if z.len() != problem.dim() {
        return Err(Error::DimensionMismatch(z.len(), problem.dim()));
    }
    let mut g = problem.quad.matvec(z);
    for i in 0..problem.dim() {
        g[i] += problem.linear[i];
    }
    Ok(residual_from_gradient(problem, z, g.view()))
}

fn residual_from_gradient<F: Float>(
    problem: &QpProblem<F>,
    z: ArrayView1<'_, F>,
    g: ArrayView1<'_, F>,
) -> F {
    let d = problem.dim();
    let act = F::cast(ACTIVITY_TOL);
    let mut in_row = vec![false; d];
    let mut total = F::zero();

    let coord_residual = |i: usize, lambda_a: F| -> F {
        let lo = problem.lower[i];
        let hi = problem.upper[i];
        let at_lo = z[i] <= lo + act;
        let at_hi = z[i] >= hi - act;
        let r = g[i] - lambda_a;
        match (at_lo, at_hi) {
            (true, true) => F::zero(),
            (true, false) => (-r).max(F::zero()),
            (false, true) => r.max(F::zero()),
            (false, false) => r.abs(),
        }
    };

    for row in &problem.eq_rows {
        let support = row.support();
        for &i in &support {
            in_row[i] = true;
        }
        // best multiplier for this row by ternary search on the convex
        // minimax residual
        let row_res = |lambda: F| -> F {
            let mut m = F::zero();
            for &i in &support {
                m = m.max(coord_residual(i, lambda * row.coeffs[i]));
            }
            m
        };
        let mut lo = F::infinity();
        let mut hi = F::neg_infinity();
        for &i in &support {
            let ratio = g[i] / row.coeffs[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        let pad = F::one() + F::cast(1e-6) * (lo.abs() + hi.abs());
        lo = lo - pad;
        hi = hi + pad;
        for _ in 0..300 {
            let third = (hi - lo) / F::cast(3.0);
            let m1 = lo + third;
            let m2 = hi - third;
            if row_res(m1) <= row_res(m2) {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        total = total.max(row_res((lo + hi) * F::cast(0.5)));
    }

    for i in 0..d {
        if !in_row[i] {
            total = total.max(coord_residual(i, F::zero()));
        }
    }
    total
}

/// Brute-force oracle for small problems (`dim <= 6`): exhaustive scan of a
/// lattice on the feasible set (coarsened if the requested resolution would
/// produce too many nodes), followed by exact pairwise coordinate
/// refinement, which for a convex objective converges to the optimum.
///
/// Equality rows must be sum constraints (0/1 coefficients). Intended for
/// tests only.
pub fn brute_force_qp<F: Float>(problem: &QpProblem<F>, resolution: F) -> Result<QpSolution<F>> {
    problem.validate()?;
    let d = problem.dim();
    if d > 6 {
        return Err(Error::InvalidParam {
            name: "dim",
            value: d as f64,
            reason: "brute force supports at most 6 variables",
        });
    }
    for row in &problem.eq_rows {
        problem.check_row_feasible(row)?;
        if row.support().iter().any(|&i| row.coeffs[i] != F::one()) {
            return Err(Error::InvalidParam {
                name: "eq_rows",
                value: 0.0,
                reason: "brute force supports sum constraints only",
            });
        }
    }

    let mut in_row = vec![false; d];
    for row in &problem.eq_rows {
        for i in row.support() {
            in_row[i] = true;
        }
    }
    let singles: Vec<usize> = (0..d).filter(|&i| !in_row[i]).collect();

    // split a global node budget across the independent groups so the scan
    // never explodes multiplicatively; refinement recovers the accuracy
    let groups = problem.eq_rows.len() + singles.len();
    let group_budget = (200_000f64.powf(1.0 / groups.max(1) as f64).floor() as usize).max(8);

    let mut assignments: Vec<Array1<F>> = vec![Array1::zeros(d)];
    for i in &singles {
        let i = *i;
        let lo = problem.lower[i];
        let hi = problem.upper[i];
        let span = hi - lo;
        let mut step = resolution;
        let cap = F::cast_usize(group_budget.min(64));
        if span.is_finite() && span / step > cap {
            step = span / cap;
        }
        let mut values = vec![lo];
        if span > F::zero() && span.is_finite() {
            let mut v = lo + step;
            while v < hi {
                values.push(v);
                v += step;
            }
            values.push(hi);
        }
        let mut next = Vec::with_capacity(assignments.len() * values.len());
        for base in &assignments {
            for &v in &values {
                let mut z = base.clone();
                z[i] = v;
                next.push(z);
            }
        }
        assignments = next;
    }
    for row in &problem.eq_rows {
        let support = row.support();
        let mut step = resolution;
        // coarsen the lattice until the composition count fits the budget
        loop {
            let n = (row.rhs / step).abs().to_f64().unwrap_or(f64::INFINITY);
            let count_est = combinations_estimate(n as usize + 1, support.len());
            if count_est <= group_budget as f64 {
                break;
            }
            step = step * F::cast(2.0);
        }
        let mut block_nodes: Vec<Vec<F>> = Vec::new();
        let mut current = vec![F::zero(); support.len()];
        enumerate_block(
            problem,
            &support,
            0,
            row.rhs,
            step,
            &mut current,
            &mut block_nodes,
        );
        if block_nodes.is_empty() {
            // boxes clip the lattice away entirely; fall back to the
            // projection of the uniform point
            let mut v = Array1::zeros(d);
            let sum_a: F = F::cast_usize(support.len());
            for &i in &support {
                v[i] = row.rhs / sum_a;
            }
            let proj = problem.project(v.view());
            block_nodes.push(support.iter().map(|&i| proj[i]).collect());
        }
        let mut next = Vec::with_capacity(assignments.len() * block_nodes.len());
        for base in &assignments {
            for node in &block_nodes {
                let mut z = base.clone();
                for (k, &i) in support.iter().enumerate() {
                    z[i] = node[k];
                }
                next.push(z);
            }
        }
        assignments = next;
    }

    let mut best: Option<(F, Array1<F>)> = None;
    for z in assignments {
        let f = problem.objective(z.view());
        if best.as_ref().is_none_or(|(bf, _)| f < *bf) {
            best = Some((f, z));
        }
    }
    let (_, mut z) = best.ok_or(Error::Infeasible("no feasible lattice node".into()))?;

    // exact pairwise refinement within blocks plus coordinate refinement of
    // the singles; convexity makes this globally convergent
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let f_before = problem.objective(z.view());
        let mut g = problem.quad.matvec(z.view());
        for i in 0..d {
            g[i] += problem.linear[i];
        }
        for row in &problem.eq_rows {
            let support = row.support();
            for a in 0..support.len() {
                for b in (a + 1)..support.len() {
                    let (i, j) = (support[a], support[b]);
                    let curv = problem.quad.entry(i, i) - F::cast(2.0) * problem.quad.entry(i, j)
                        + problem.quad.entry(j, j);
                    let slope = g[i] - g[j];
                    let t_lo = (problem.lower[i] - z[i]).max(z[j] - problem.upper[j]);
                    let t_hi = (problem.upper[i] - z[i]).min(z[j] - problem.lower[j]);
                    let mut t = if curv > F::zero() { -slope / curv } else if slope > F::zero() { t_lo } else { t_hi };
                    t = clamp(t, t_lo, t_hi);
                    if t != F::zero() {
                        z[i] += t;
                        z[j] -= t;
                        let dg_i = problem.quad.entry(i, i) * t - problem.quad.entry(i, j) * t;
                        let _ = dg_i;
                        // recompute the gradient lazily per sweep; d <= 6
                        g = problem.quad.matvec(z.view());
                        for q in 0..d {
                            g[q] += problem.linear[q];
                        }
                    }
                }
            }
        }
        for &i in &singles {
            let curv = problem.quad.entry(i, i);
            let mut t = if curv > F::zero() { -g[i] / curv } else if g[i] > F::zero() { problem.lower[i] - z[i] } else { problem.upper[i] - z[i] };
            t = clamp(t, problem.lower[i] - z[i], problem.upper[i] - z[i]);
            if t != F::zero() {
                z[i] += t;
                g = problem.quad.matvec(z.view());
                for q in 0..d {
                    g[q] += problem.linear[q];
                }
            }
        }
        let f_after = problem.objective(z.view());
        if f_before - f_after <= F::cast(1e-15) * (F::one() + f_before.abs()) || sweeps >= 500 {
            break;
        }
    }

    let objective = problem.objective(z.view());
    let kkt = kkt_residual(problem, z.view())?;
    Ok(QpSolution {
        z,
        objective,
        kkt_residual: kkt,
        iterations: sweeps,
        converged: true,
    })
}

fn combinations_estimate(n: usize, k: usize) -> f64 {
    // C(n + k - 1, k - 1), loosely
    if k <= 1 {
        return 1.0;
    }
    let mut acc = 1.0f64;
    for i in 0..(k - 1) {
        acc *= (n + i) as f64 / (i + 1) as f64;
    }
    acc
}

fn enumerate_block<F: Float>(
    problem: &QpProblem<F>,
    support: &[usize],
    pos: usize,
    remaining: F,
    step: F,
    current: &mut Vec<F>,
    out: &mut Vec<Vec<F>>,
) {
    if out.len() >= 400_000 {
        return;
    }
    let i = support[pos];
    let lo = problem.lower[i];
    let hi = problem.upper[i];
    if pos + 1 == support.len() {
        // last coordinate takes the exact remainder
        let slack = F::cast(1e-9) * (F::one() + remaining.abs());
        if remaining >= lo - slack && remaining <= hi + slack {
            current[pos] = clamp(remaining, lo, hi);
            out.push(current.clone());
        }
        return;
    }
    let rest_max: F = support[pos + 1..]
        .iter()
        .map(|&j| problem.upper[j])
        .fold(F::zero(), |a, b| a + b);
    let rest_min: F = support[pos + 1..]
        .iter()
        .map(|&j| problem.lower[j])
        .fold(F::zero(), |a, b| a + b);
    let v_min = lo.max(remaining - rest_max);
    let v_max = hi.min(remaining - rest_min);
    let mut v = lo + ((v_min - lo) / step).ceil().max(F::zero()) * step;
    while v <= v_max + F::cast(1e-12) {
        current[pos] = clamp(v, lo, hi);
        enumerate_block(problem, support, pos + 1, remaining - current[pos], step, current, out);
        v += step;
    }
}

/// In-place lower Cholesky factorization; fails on a non-positive pivot.
pub(crate) fn cholesky_in_place<F: Float>(m: &mut Array2<F>) -> std::result::Result<(), usize> {
    let n = m.nrows();
    for j in 0..n {
        let mut diag = m[[j, j]];
        for k in 0..j {
            diag -= m[[j, k]] * m[[j, k]];
        }
        if !(diag > F::zero()) || !diag.is_finite() {
            return Err(j);
        }
        let diag = diag.sqrt();
        m[[j, j]] = diag;
        for i in (j + 1)..n {
            let mut v = m[[i, j]];
            for k in 0..j {
                v -= m[[i, k]] * m[[j, k]];
            }
            m[[i, j]] = v / diag;
        }
    }
    // zero the strict upper triangle for cleanliness
    for i in 0..n {
        for j in (i + 1)..n {
            m[[i, j]] = F::zero();
        }
    }
    Ok(())
}

/// Solve `L L' x = b` in place given the Cholesky factor from
/// [`cholesky_in_place`].
pub(crate) fn cholesky_solve<F: Float>(l: &Array2<F>, b: &mut Array1<F>) {
    let n = l.nrows();
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l[[i, k]] * b[k];
        }
        b[i] = v / l[[i, i]];
    }
    for i in (0..n).rev() {
        let mut v = b[i];
        for k in (i + 1)..n {
            v -= l[[k, i]] * b[k];
        }
        b[i] = v / l[[i, i]];
    }
}

/// Gaussian elimination with partial pivoting for the tiny Schur systems.
fn solve_small<F: Float>(a: &mut Array2<F>, b: &mut Array1<F>) -> Option<Array1<F>> {
    let n = a.nrows();
    for col in 0..n {
        let mut piv = col;
        for r in (col + 1)..n {
            if a[[r, col]].abs() > a[[piv, col]].abs() {
                piv = r;
            }
        }
        if a[[piv, col]].abs() <= F::cast(1e-300) {
            return None;
        }
        if piv != col {
            for c in 0..n {
                let tmp = a[[col, c]];
                a[[col, c]] = a[[piv, c]];
                a[[piv, c]] = tmp;
            }
            let tmp = b[col];
            b[col] = b[piv];
            b[piv] = tmp;
        }
        for r in (col + 1)..n {
            let factor = a[[r, col]] / a[[col, col]];
            for c in col..n {
                let v = a[[col, c]];
                a[[r, c]] = a[[r, c]] - factor * v;
            }
            b[r] = b[r] - factor * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for r in (0..n).rev() {
        let mut v = b[r];
        for c in (r + 1)..n {
            v -= a[[r, c]] * x[c];
        }
        x[r] = v / a[[r, r]];
    }
    Some(x)
}
