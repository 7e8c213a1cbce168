//! Kernel evaluation and Gram-matrix construction.
//!
//! Two kernels are supported: the Gaussian kernel
//! `K(x, y) = exp(-||x - y||^2 / sigma_sq)` — the workhorse for every model
//! in this crate — and the linear kernel `K(x, y) = <x, y>`, which is handy
//! for sanity checks where the feature map is the identity.

use ndarray::{Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;

/// Kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Gaussian,
    Linear,
}

/// A kernel function: the family plus its width parameter.
///
/// `sigma_sq` is the Gaussian width σ² as it appears in
/// `exp(-||x - y||^2 / sigma_sq)`; it is ignored by the linear kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec<F> {
    pub kind: KernelKind,
    pub sigma_sq: F,
}

impl<F: Float> KernelSpec<F> {
    /// Gaussian kernel with width σ² > 0.
    pub fn gaussian(sigma_sq: F) -> Result<Self> {
        if !(sigma_sq > F::zero()) || !sigma_sq.is_finite() {
            return Err(Error::InvalidParam {
                name: "sigma_sq",
                value: sigma_sq.to_f64().unwrap_or(f64::NAN),
                reason: "must be positive and finite",
            });
        }
        Ok(KernelSpec {
            kind: KernelKind::Gaussian,
            sigma_sq,
        })
    }

    /// Linear kernel (plain dot product).
    pub fn linear() -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            sigma_sq: F::one(),
        }
    }

    /// Evaluate the kernel on a pair of points.
    pub fn eval(&self, x: ArrayView1<'_, F>, y: ArrayView1<'_, F>) -> Result<F> {
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(x.len(), y.len()));
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    fn eval_unchecked(&self, x: ArrayView1<'_, F>, y: ArrayView1<'_, F>) -> F {
        match self.kind {
            KernelKind::Gaussian => {
                let mut d2 = F::zero();
                for (&a, &b) in x.iter().zip(y.iter()) {
                    let d = a - b;
                    d2 += d * d;
                }
                (-d2 / self.sigma_sq).exp()
            }
            KernelKind::Linear => {
                let mut s = F::zero();
                for (&a, &b) in x.iter().zip(y.iter()) {
                    s += a * b;
                }
                s
            }
        }
    }

    /// Gram matrix of a sample: `entries[i][j] = K(row_i, row_j)`.
    ///
    /// Each unordered pair is evaluated once and mirrored, so the result is
    /// exactly symmetric. Rows are filled in parallel; every entry depends
    /// only on its own pair of rows, so the result does not depend on the
    /// degree of parallelism.
    pub fn gram(&self, x: ArrayView2<'_, F>) -> Result<GramMatrix<F>> {
        let l = x.nrows();
        if l == 0 {
            return Err(Error::EmptyInput("gram of an empty sample"));
        }
        let mut rows: Vec<Vec<F>> = Vec::with_capacity(l);
        (0..l)
            .into_par_iter()
            .map(|i| {
                let xi = x.row(i);
                let mut row = vec![F::zero(); l - i];
                for j in i..l {
                    row[j - i] = if i == j {
                        match self.kind {
                            KernelKind::Gaussian => F::one(),
                            KernelKind::Linear => self.eval_unchecked(xi, xi),
                        }
                    } else {
                        self.eval_unchecked(xi, x.row(j))
                    };
                }
                row
            })
            .collect_into_vec(&mut rows);
        let mut entries = Array2::zeros((l, l));
        for (i, row) in rows.iter().enumerate() {
            for (dj, &v) in row.iter().enumerate() {
                let j = i + dj;
                entries[[i, j]] = v;
                entries[[j, i]] = v;
            }
        }
        Ok(GramMatrix {
            entries,
            spec: *self,
        })
    }

    /// Rectangular kernel matrix between two samples with matching feature
    /// dimension: `out[i][j] = K(x_i, z_j)`.
    pub fn cross_gram(&self, x: ArrayView2<'_, F>, z: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if x.ncols() != z.ncols() {
            return Err(Error::DimensionMismatch(x.ncols(), z.ncols()));
        }
        let (l, m) = (x.nrows(), z.nrows());
        let mut rows: Vec<Vec<F>> = Vec::with_capacity(l);
        (0..l)
            .into_par_iter()
            .map(|i| {
                let xi = x.row(i);
                (0..m).map(|j| self.eval_unchecked(xi, z.row(j))).collect()
            })
            .collect_into_vec(&mut rows);
        let mut out = Array2::zeros((l, m));
        for (i, row) in rows.into_iter().enumerate() {
            for (j, v) in row.into_iter().enumerate() {
                out[[i, j]] = v;
            }
        }
        Ok(out)
    }
}

/// A symmetric kernel matrix together with the kernel that produced it.
#[derive(Debug, Clone)]
pub struct GramMatrix<F> {
    entries: Array2<F>,
    spec: KernelSpec<F>,
}

impl<F: Float> GramMatrix<F> {
    pub fn entries(&self) -> ArrayView2<'_, F> {
        self.entries.view()
    }

    pub fn spec(&self) -> &KernelSpec<F> {
        &self.spec
    }

    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.nrows() == 0
    }

    pub fn into_entries(self) -> Array2<F> {
        self.entries
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn gauss2() -> KernelSpec<f64> {
        KernelSpec::gaussian(2.0).unwrap()
    }

    #[test]
    fn zero_distance_is_one() {
        let x = array![3.0, -7.0];
        assert_eq!(gauss2().eval(x.view(), x.view()).unwrap(), 1.0);
    }

    #[test]
    fn gaussian_closed_form() {
        // exp(-||(0,0)-(2,0)||^2 / 2) = exp(-2)
        let x = array![0.0, 0.0];
        let y = array![2.0, 0.0];
        let k = gauss2().eval(x.view(), y.view()).unwrap();
        assert_abs_diff_eq!(k, (-2.0f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k, 0.135335, epsilon = 1e-6);
    }

    #[test]
    fn linear_dot_product() {
        let x = array![1.0, 2.0];
        let y = array![3.0, 4.0];
        assert_eq!(KernelSpec::linear().eval(x.view(), y.view()).unwrap(), 11.0);
    }

    #[test]
    fn dimension_mismatch_errors() {
        let x = array![1.0, 2.0];
        let y = array![1.0, 2.0, 3.0];
        assert!(gauss2().eval(x.view(), y.view()).is_err());
        let xm = Array2::<f64>::zeros((2, 2));
        let zm = Array2::<f64>::zeros((2, 3));
        assert!(gauss2().cross_gram(xm.view(), zm.view()).is_err());
    }

    #[test]
    fn invalid_sigma_rejected() {
        assert!(KernelSpec::gaussian(0.0).is_err());
        assert!(KernelSpec::gaussian(-1.0).is_err());
        assert!(KernelSpec::gaussian(f64::NAN).is_err());
    }

    #[test]
    fn empty_gram_errors() {
        let x = Array2::<f64>::zeros((0, 2));
        assert!(gauss2().gram(x.view()).is_err());
    }

    #[test]
    fn single_row_gram() {
        let x = array![[1.5, -0.5]];
        let g = gauss2().gram(x.view()).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.entries()[[0, 0]], 1.0);
    }

    #[test]
    fn identical_rows_gram_all_ones() {
        let x = array![[1.0, 2.0], [1.0, 2.0]];
        let g = gauss2().gram(x.view()).unwrap();
        for v in g.entries().iter() {
            assert_eq!(*v, 1.0);
        }
    }

    #[test]
    fn gram_matches_pairwise_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_fn((5, 2), |_| rng.random::<f64>() * 4.0 - 2.0);
        let g = gauss2().gram(x.view()).unwrap();
        for i in 0..5 {
            assert_eq!(g.entries()[[i, i]], 1.0);
            for j in 0..5 {
                let want = gauss2().eval(x.row(i), x.row(j)).unwrap();
                assert_abs_diff_eq!(g.entries()[[i, j]], want, epsilon = 1e-15);
                assert_eq!(g.entries()[[i, j]], g.entries()[[j, i]]);
            }
        }
    }

    #[test]
    fn cross_gram_matches_pairwise_eval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Array2::from_shape_fn((4, 2), |_| rng.random::<f64>() * 4.0 - 2.0);
        let z = Array2::from_shape_fn((3, 2), |_| rng.random::<f64>() * 4.0 - 2.0);
        let c = gauss2().cross_gram(x.view(), z.view()).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let want = gauss2().eval(x.row(i), z.row(j)).unwrap();
                assert_abs_diff_eq!(c[[i, j]], want, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn cross_gram_of_self_equals_gram() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((6, 3), |_| rng.random::<f64>() * 2.0 - 1.0);
        let g = gauss2().gram(x.view()).unwrap();
        let c = gauss2().cross_gram(x.view(), x.view()).unwrap();
        // identical up to the exact unit diagonal of gram
        for i in 0..6 {
            for j in 0..6 {
                if i == j {
                    assert!((c[[i, j]] - 1.0).abs() < 1e-15);
                } else {
                    assert_eq!(g.entries()[[i, j]], c[[i, j]]);
                }
            }
        }
    }

    #[test]
    fn cross_gram_single_matching_row() {
        let x = array![[0.0, 1.0], [5.0, 5.0]];
        let z = array![[0.0, 1.0]];
        let c = gauss2().cross_gram(x.view(), z.view()).unwrap();
        assert_eq!(c[[0, 0]], 1.0);
        assert!(c[[1, 0]] < 1.0);
    }

    #[test]
    fn gram_psd_via_shifted_cholesky() {
        // PSD up to tolerance: Cholesky of K + 1e-8*l*I must succeed.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let l = 40;
        let x = Array2::from_shape_fn((l, 2), |_| rng.random::<f64>() * 6.0 - 3.0);
        let g = gauss2().gram(x.view()).unwrap();
        let mut m = g.into_entries();
        let shift = 1e-8 * l as f64;
        for i in 0..l {
            m[[i, i]] += shift;
        }
        assert!(crate::qp::cholesky_in_place(&mut m).is_ok());
    }

    proptest! {
        #[test]
        fn gaussian_range_and_identity(ax in -5.0f64..5.0, ay in -5.0f64..5.0,
                                       bx in -5.0f64..5.0, by in -5.0f64..5.0) {
            let x = array![ax, ay];
            let y = array![bx, by];
            let k = gauss2().eval(x.view(), y.view()).unwrap();
            prop_assert!(k > 0.0 && k <= 1.0);
            prop_assert_eq!(k == 1.0, x == y);
        }

        #[test]
        fn gram_permutation_invariance(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Array2::from_shape_fn((6, 2), |_| rng.random::<f64>() * 4.0 - 2.0);
            let mut perm: Vec<usize> = (0..6).collect();
            perm.shuffle(&mut rng);
            let xp = ndarray::Array2::from_shape_fn((6, 2), |(i, j)| x[[perm[i], j]]);
            let g = gauss2().gram(x.view()).unwrap();
            let gp = gauss2().gram(xp.view()).unwrap();
            for i in 0..6 {
                for j in 0..6 {
                    prop_assert_eq!(gp.entries()[[i, j]], g.entries()[[perm[i], perm[j]]]);
                }
            }
        }
    }
}
