//! Baseline one-class models: One-Class SVM and SVDD.
//!
//! The One-Class SVM separates the sample from the origin of the kernel
//! feature space with a hyperplane `(w . phi(x)) = rho`; SVDD encloses it in
//! a sphere of center `a` and squared radius `R`. Both are trained by
//! solving the dual
//!
//! ```text
//! OC-SVM: minimize (1/2) a' K a            s.t.  sum a = 1, 0 <= a_i <= 1/(nu l)
//! SVDD:   minimize a' K a - sum_i a_i K_ii s.t.  same constraints
//! ```
//!
//! over the coefficients `a` (written `alpha` below), then recovering the
//! offset from the margin support vectors: training points whose coefficient
//! is strictly between its bounds lie exactly on the decision boundary.
//!
//! Sign conventions differ between the two decision functions (OC-SVM is
//! positive inside the normal region, SVDD is positive outside), so every
//! model also exposes [`AnomalyScorer::score`], which is positive exactly
//! when a point is flagged anomalous.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::kernel::{GramMatrix, KernelSpec};
use crate::qp::{solve_qp, EqRow, QpProblem, QpSettings, Quadratic};

/// Dual coefficients below this threshold are dropped from the support set.
pub const SUPPORT_EPS: f64 = 1e-8;

/// Unified anomaly scoring: `score(x) > 0` means `x` is flagged anomalous.
pub trait AnomalyScorer<F: Float> {
    /// Anomaly score of one point (positive = anomalous).
    fn score(&self, x: ArrayView1<'_, F>) -> Result<F>;

    /// Expected feature dimension.
    fn feature_dim(&self) -> usize;

    /// Scores for every row of a matrix.
    fn score_rows(&self, x: ArrayView2<'_, F>) -> Result<Array1<F>> {
        let mut out = Array1::zeros(x.nrows());
        for (i, row) in x.rows().into_iter().enumerate() {
            out[i] = self.score(row)?;
        }
        Ok(out)
    }
}

/// Solver facts recorded at training time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainDiagnostics<F> {
    pub kkt_residual: F,
    pub iterations: usize,
    pub converged: bool,
    /// No margin support vector existed; the offset fell back to averaging
    /// over all support vectors.
    pub offset_fallback: bool,
}

/// Trained One-Class SVM.
///
/// `alphas` are the dual coefficients of the retained support vectors
/// (summing to 1 over the full training set); the decision function is
/// `f(x) = sum_i alpha_i K(x_i, x) - rho`, positive on the normal class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcSvmModel<F> {
    pub support_vectors: Array2<F>,
    pub alphas: Array1<F>,
    pub rho: F,
    pub nu: F,
    pub kernel: KernelSpec<F>,
    pub diagnostics: TrainDiagnostics<F>,
}

/// Trained SVDD model.
///
/// The center `a = sum_i alpha_i phi(x_i)` is implicit; `center_norm_sq`
/// stores `||a||^2` and `radius_sq` the squared radius `R`. The decision
/// function `f(x) = K(x,x) - 2 sum_i alpha_i K(x, x_i) + ||a||^2 - R` is
/// positive *outside* the sphere.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvddModel<F> {
    pub support_vectors: Array2<F>,
    pub alphas: Array1<F>,
    pub radius_sq: F,
    pub center_norm_sq: F,
    pub nu: F,
    pub kernel: KernelSpec<F>,
    pub diagnostics: TrainDiagnostics<F>,
}

pub(crate) fn check_nu<F: Float>(nu: F) -> Result<()> {
    if !(nu > F::zero() && nu < F::one()) || !nu.is_finite() {
        return Err(Error::InvalidParam {
            name: "nu",
            value: nu.to_f64().unwrap_or(f64::NAN),
            reason: "must lie strictly inside (0, 1)",
        });
    }
    Ok(())
}

fn check_sample<F: Float>(x: ArrayView2<'_, F>) -> Result<()> {
    if x.nrows() < 2 {
        return Err(Error::EmptyInput("training needs at least two rows"));
    }
    Ok(())
}

/// Solve the shared baseline dual and return the full coefficient vector.
fn solve_baseline_dual<F: Float>(
    gram: &GramMatrix<F>,
    nu: F,
    svdd_linear: bool,
) -> Result<(Array1<F>, TrainDiagnostics<F>)> {
    let l = gram.len();
    let box_hi = F::one() / (nu * F::cast_usize(l));
    let entries = gram.entries();
    let (quad, linear) = if svdd_linear {
        let h = entries.mapv(|v| v * F::cast(2.0));
        let c = Array1::from_shape_fn(l, |i| -entries[[i, i]]);
        (Quadratic::Dense(h), c)
    } else {
        (Quadratic::Dense(entries.to_owned()), Array1::zeros(l))
    };
    let problem = QpProblem {
        quad,
        linear,
        eq_rows: vec![EqRow::sum_over(l, 0..l, F::one())],
        lower: Array1::zeros(l),
        upper: Array1::from_elem(l, box_hi),
    };
    let solution = solve_qp(&problem, &QpSettings::default())?;
    if !solution.converged {
        return Err(Error::NoConvergence {
            residual: solution.kkt_residual.to_f64().unwrap_or(f64::NAN),
            iterations: solution.iterations,
        });
    }
    let diagnostics = TrainDiagnostics {
        kkt_residual: solution.kkt_residual,
        iterations: solution.iterations,
        converged: solution.converged,
        offset_fallback: false,
    };
    Ok((solution.z, diagnostics))
}

/// Indices of margin support vectors: coefficients strictly between the
/// bounds by [`SUPPORT_EPS`]. Falls back to all support vectors when no
/// margin vector exists.
fn margin_indices<F: Float>(alphas: &Array1<F>, box_hi: F) -> (Vec<usize>, bool) {
    let eps = F::cast(SUPPORT_EPS);
    let margin: Vec<usize> = alphas
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > eps && a < box_hi - eps)
        .map(|(i, _)| i)
        .collect();
    if margin.is_empty() {
        let all: Vec<usize> = alphas
            .iter()
            .enumerate()
            .filter(|(_, &a)| a > eps)
            .map(|(i, _)| i)
            .collect();
        (all, true)
    } else {
        (margin, false)
    }
}

/// Offset recovery: `rho` is the mean over margin support vectors `i` of
/// `sum_j alpha_j K(x_j, x_i)`. Returns the fallback flag alongside.
pub fn recover_rho<F: Float>(alphas: &Array1<F>, gram: &GramMatrix<F>, nu: F) -> Result<(F, bool)> {
    let l = gram.len();
    if alphas.len() != l {
        return Err(Error::DimensionMismatch(alphas.len(), l));
    }
    let box_hi = F::one() / (nu * F::cast_usize(l));
    let (idx, fallback) = margin_indices(alphas, box_hi);
    if idx.is_empty() {
        return Err(Error::EmptyInput("no support vectors for offset recovery"));
    }
    let entries = gram.entries();
    let mut acc = F::zero();
    for &i in &idx {
        let mut v = F::zero();
        for j in 0..l {
            v += alphas[j] * entries[[j, i]];
        }
        acc += v;
    }
    Ok((acc / F::cast_usize(idx.len()), fallback))
}

fn retain_support<F: Float>(x: ArrayView2<'_, F>, alphas: &Array1<F>) -> (Array2<F>, Array1<F>) {
    let eps = F::cast(SUPPORT_EPS);
    let keep: Vec<usize> = alphas
        .iter()
        .enumerate()
        .filter(|(_, &a)| a > eps)
        .map(|(i, _)| i)
        .collect();
    let sv = Array2::from_shape_fn((keep.len(), x.ncols()), |(r, c)| x[[keep[r], c]]);
    let al = Array1::from_shape_fn(keep.len(), |r| alphas[keep[r]]);
    (sv, al)
}

/// Train a One-Class SVM on the rows of `x`.
pub fn train_ocsvm<F: Float>(
    x: ArrayView2<'_, F>,
    nu: F,
    kernel: KernelSpec<F>,
) -> Result<OcSvmModel<F>> {
    check_nu(nu)?;
    check_sample(x)?;
    let gram = kernel.gram(x)?;
    let (alphas, mut diagnostics) = solve_baseline_dual(&gram, nu, false)?;
    let (rho, fallback) = recover_rho(&alphas, &gram, nu)?;
    diagnostics.offset_fallback = fallback;
    let (support_vectors, alphas) = retain_support(x, &alphas);
    Ok(OcSvmModel {
        support_vectors,
        alphas,
        rho,
        nu,
        kernel,
        diagnostics,
    })
}

/// Train an SVDD model on the rows of `x`.
pub fn train_svdd<F: Float>(
    x: ArrayView2<'_, F>,
    nu: F,
    kernel: KernelSpec<F>,
) -> Result<SvddModel<F>> {
    check_nu(nu)?;
    check_sample(x)?;
    let gram = kernel.gram(x)?;
    let (alphas, mut diagnostics) = solve_baseline_dual(&gram, nu, true)?;
    let l = gram.len();
    let entries = gram.entries();
    // ||a||^2 = a' K a over the full coefficient vector
    let mut center_norm_sq = F::zero();
    for i in 0..l {
        let mut row = F::zero();
        for j in 0..l {
            row += alphas[j] * entries[[i, j]];
        }
        center_norm_sq += alphas[i] * row;
    }
    // R from margin support vectors: R = K_jj - 2 sum_i alpha_i K_ij + ||a||^2
    let box_hi = F::one() / (nu * F::cast_usize(l));
    let (idx, fallback) = margin_indices(&alphas, box_hi);
    diagnostics.offset_fallback = fallback;
    if idx.is_empty() {
        return Err(Error::EmptyInput("no support vectors for radius recovery"));
    }
    let mut radius_sq = F::zero();
    for &j in &idx {
        let mut cross = F::zero();
        for i in 0..l {
            cross += alphas[i] * entries[[i, j]];
        }
        radius_sq += entries[[j, j]] - F::cast(2.0) * cross + center_norm_sq;
    }
    radius_sq = radius_sq / F::cast_usize(idx.len());
    let (support_vectors, alphas) = retain_support(x, &alphas);
    Ok(SvddModel {
        support_vectors,
        alphas,
        radius_sq,
        center_norm_sq,
        nu,
        kernel,
        diagnostics,
    })
}

impl<F: Float> OcSvmModel<F> {
    /// Decision value `f(x) = sum_i alpha_i K(x_i, x) - rho`; positive means
    /// normal.
    pub fn decision(&self, x: ArrayView1<'_, F>) -> Result<F> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch(x.len(), self.feature_dim()));
        }
        let mut acc = F::zero();
        for (i, row) in self.support_vectors.rows().into_iter().enumerate() {
            acc += self.alphas[i] * self.kernel.eval(row, x)?;
        }
        Ok(acc - self.rho)
    }
}

impl<F: Float> AnomalyScorer<F> for OcSvmModel<F> {
    fn score(&self, x: ArrayView1<'_, F>) -> Result<F> {
        self.decision(x).map(|f| -f)
    }

    fn feature_dim(&self) -> usize {
        self.support_vectors.ncols()
    }
}

impl<F: Float> SvddModel<F> {
    /// Decision value `f(x) = K(x,x) - 2 sum_i alpha_i K(x, x_i) + ||a||^2 - R`;
    /// positive means outside the sphere, i.e. anomalous.
    pub fn decision(&self, x: ArrayView1<'_, F>) -> Result<F> {
        if x.len() != self.feature_dim() {
            return Err(Error::DimensionMismatch(x.len(), self.feature_dim()));
        }
        let self_k = self.kernel.eval(x, x)?;
        let mut cross = F::zero();
        for (i, row) in self.support_vectors.rows().into_iter().enumerate() {
            cross += self.alphas[i] * self.kernel.eval(row, x)?;
        }
        Ok(self_k - F::cast(2.0) * cross + self.center_norm_sq - self.radius_sq)
    }
}

impl<F: Float> AnomalyScorer<F> for SvddModel<F> {
    fn score(&self, x: ArrayView1<'_, F>) -> Result<F> {
        self.decision(x)
    }

    fn feature_dim(&self) -> usize {
        self.support_vectors.ncols()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn gauss2() -> KernelSpec<f64> {
        KernelSpec::gaussian(2.0).unwrap()
    }

    #[test]
    fn rejects_bad_nu() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        for nu in [0.0, 1.0, -0.5, 1.5] {
            assert!(train_ocsvm(x.view(), nu, gauss2()).is_err());
            assert!(train_svdd(x.view(), nu, gauss2()).is_err());
        }
    }

    #[test]
    fn two_identical_points() {
        let x = array![[1.0, -2.0], [1.0, -2.0]];
        let m = train_ocsvm(x.view(), 0.5, gauss2()).unwrap();
        // box bound 1/(0.5*2) = 1; symmetry forces (0.5, 0.5)
        assert_eq!(m.alphas.len(), 2);
        assert_abs_diff_eq!(m.alphas[0], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(m.alphas[1], 0.5, epsilon = 1e-7);
        assert_abs_diff_eq!(m.rho, 1.0, epsilon = 1e-8);
        let f = m.decision(array![1.0, -2.0].view()).unwrap();
        assert_abs_diff_eq!(f, 0.0, epsilon = 1e-8);
    }

    #[test]
    fn nu_near_one_forces_uniform() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 2.0]];
        let nu = 1.0 - 1e-9;
        let m = train_ocsvm(x.view(), nu, gauss2()).unwrap();
        assert_eq!(m.alphas.len(), 4);
        for &a in m.alphas.iter() {
            assert_abs_diff_eq!(a, 0.25, epsilon = 1e-6);
        }
    }

    #[test]
    fn svdd_four_points_linear() {
        let x = array![[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]];
        let m = train_svdd(x.view(), 0.9, KernelSpec::linear()).unwrap();
        assert_abs_diff_eq!(m.center_norm_sq, 0.0, epsilon = 1e-6);
        assert_abs_diff_eq!(m.radius_sq, 1.0, epsilon = 1e-6);
        // center is inside: f((0,0)) = 0 - 0 + 0 - 1 = -1
        let f = m.decision(array![0.0, 0.0].view()).unwrap();
        assert_abs_diff_eq!(f, -1.0, epsilon = 1e-6);
    }

    #[test]
    fn svdd_two_identical_points_degenerate_sphere() {
        let x = array![[3.0, 4.0], [3.0, 4.0]];
        let m = train_svdd(x.view(), 0.5, gauss2()).unwrap();
        assert_abs_diff_eq!(m.radius_sq, 0.0, epsilon = 1e-7);
        // any distinct point is outside
        let f = m.decision(array![3.5, 4.0].view()).unwrap();
        assert!(f > 0.0);
    }

    #[test]
    fn svdd_alphas_match_ocsvm_under_gaussian() {
        let ds = synth::gen_gauss_mixture(40, 9).unwrap();
        let x = ds.features.view();
        let a = train_ocsvm(x, 0.3, gauss2()).unwrap();
        let b = train_svdd(x, 0.3, gauss2()).unwrap();
        assert_eq!(a.alphas.len(), b.alphas.len());
        for (u, v) in a.alphas.iter().zip(b.alphas.iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-6);
        }
    }

    #[test]
    fn rho_consistency_under_uniform_alphas() {
        // nu -> 1 forces uniform alphas; rho must equal the mean row sum / l
        let ds = synth::gen_gauss_mixture(25, 11).unwrap();
        let x = ds.features.view();
        let nu = 1.0 - 1e-9;
        let m = train_ocsvm(x, nu, gauss2()).unwrap();
        let gram = gauss2().gram(x).unwrap();
        let l = 25usize;
        let mut expect = 0.0;
        for i in 0..l {
            for j in 0..l {
                expect += gram.entries()[[i, j]] / (l * l) as f64;
            }
        }
        assert_abs_diff_eq!(m.rho, expect, epsilon = 1e-5);
    }

    #[test]
    fn margin_sv_rho_spread_is_tight() {
        let ds = synth::gen_gauss_mixture(60, 13).unwrap();
        let x = ds.features.view();
        let nu = 0.25;
        let gram = gauss2().gram(x).unwrap();
        let (alphas, _) = solve_baseline_dual(&gram, nu, false).unwrap();
        let box_hi = 1.0 / (nu * 60.0);
        let (idx, fallback) = margin_indices(&alphas, box_hi);
        assert!(!fallback);
        let entries = gram.entries();
        let per_sv: Vec<f64> = idx
            .iter()
            .map(|&i| (0..60).map(|j| alphas[j] * entries[[j, i]]).sum())
            .collect();
        let lo = per_sv.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = per_sv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(hi - lo <= 1e-6, "rho spread {}", hi - lo);
    }

    #[test]
    fn decision_at_margin_sv_is_zero() {
        let ds = synth::gen_gauss_mixture(50, 17).unwrap();
        let x = ds.features.view();
        let m = train_ocsvm(x, 0.2, gauss2()).unwrap();
        // any margin SV: alpha strictly inside (eps, box - eps)
        let box_hi = 1.0 / (0.2 * 50.0);
        let mut found = false;
        for (i, &a) in m.alphas.iter().enumerate() {
            if a > 1e-6 && a < box_hi - 1e-6 {
                let f = m.decision(m.support_vectors.row(i)).unwrap();
                assert_abs_diff_eq!(f, 0.0, epsilon = 1e-6);
                found = true;
            }
        }
        assert!(found);
    }

    #[test]
    fn far_point_is_anomalous() {
        let ds = synth::gen_gauss_mixture(30, 19).unwrap();
        let x = ds.features.view();
        let oc = train_ocsvm(x, 0.1, gauss2()).unwrap();
        let far = array![500.0, -500.0];
        let f = oc.decision(far.view()).unwrap();
        assert_abs_diff_eq!(f, -oc.rho, epsilon = 1e-12);
        assert!(oc.score(far.view()).unwrap() > 0.0);
        let sv = train_svdd(x, 0.1, gauss2()).unwrap();
        let fs = sv.decision(far.view()).unwrap();
        assert_abs_diff_eq!(fs, 1.0 + sv.center_norm_sq - sv.radius_sq, epsilon = 1e-12);
        assert!(fs > 0.0);
    }

    #[test]
    fn complementary_slackness() {
        let ds = synth::gen_gauss_mixture(60, 23).unwrap();
        let x = ds.features.view();
        let m = train_ocsvm(x, 0.3, gauss2()).unwrap();
        // every retained support vector sits on or outside the boundary
        for (i, _) in m.alphas.iter().enumerate() {
            let f = m.decision(m.support_vectors.row(i)).unwrap();
            assert!(f <= 1e-6, "support vector {i} has f = {f}");
        }
    }

    #[test]
    fn dimension_mismatch_on_decision() {
        let x = array![[0.0, 0.0], [1.0, 1.0]];
        let m = train_ocsvm(x.view(), 0.5, gauss2()).unwrap();
        assert!(m.decision(array![1.0, 2.0, 3.0].view()).is_err());
    }

    #[test]
    fn permutation_invariance() {
        let ds = synth::gen_gauss_mixture(40, 29).unwrap();
        let x = ds.features.view();
        let m1 = train_ocsvm(x, 0.2, gauss2()).unwrap();
        // reversed row order
        let l = x.nrows();
        let xr = Array2::from_shape_fn((l, 2), |(i, j)| x[[l - 1 - i, j]]);
        let m2 = train_ocsvm(xr.view(), 0.2, gauss2()).unwrap();
        assert_abs_diff_eq!(m1.rho, m2.rho, epsilon = 1e-8);
        let probe = array![0.7, -0.3];
        assert_abs_diff_eq!(
            m1.decision(probe.view()).unwrap(),
            m2.decision(probe.view()).unwrap(),
            epsilon = 1e-8
        );
    }

    #[test]
    fn trained_models_certify_kkt() {
        for seed in [31, 37] {
            let ds = synth::gen_gauss_mixture(50, seed).unwrap();
            let m = train_ocsvm(ds.features.view(), 0.15, gauss2()).unwrap();
            assert!(m.diagnostics.kkt_residual <= 1e-6);
            let s = train_svdd(ds.features.view(), 0.15, gauss2()).unwrap();
            assert!(s.diagnostics.kkt_residual <= 1e-6);
        }
    }

    #[test]
    fn works_in_f32() {
        let x = ndarray::Array2::<f32>::from_shape_vec(
            (4, 2),
            vec![0.0, 0.0, 0.1, 0.0, 0.0, 0.1, 0.1, 0.1],
        )
        .unwrap();
        let spec = KernelSpec::<f32>::gaussian(2.0).unwrap();
        let m = train_ocsvm(x.view(), 0.5, spec).unwrap();
        assert!(m.rho > 0.0);
    }
}
