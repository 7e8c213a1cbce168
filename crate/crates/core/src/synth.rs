//! Synthetic 2-D benchmark generators with privileged coordinates.
//!
//! Three generators, each emitting original features plus the privileged
//! representation used by the `+` models at training time:
//!
//! - Mixture of Gaussians: two unit-covariance blobs at `(2, 2)` and
//!   `(-2, -2)`; privileged = the point minus its nearest blob center.
//! - Circles: two concentric circles of radii 5 and 0.5 with radial noise;
//!   privileged = the polar pair `(r, phi)`.
//! - Arc: a thin arc of radius about 10; privileged = `(radius, angle)`.
//!
//! Plus [`add_uniform_noise`], which injects uniform-box outliers over an
//! expanded bounding box of the sample (the noise region covers all normal
//! patterns) and labels them `-1`.
//!
//! Reproducibility: every generator derives its own RNG stream from
//! `(seed, operation tag)` via [`stream_seed`]; rows are drawn in a fixed
//! order so the same `(l, seed)` always produces bitwise identical data on
//! every platform.

use ndarray::{Array1, Array2, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// A sample: features, optional privileged features, optional ±1 labels.
///
/// `labels` uses `+1` for normal and `-1` for anomalous rows. `seed` is the
/// RNG seed that produced the dataset (`0` for ingested data).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Array2<f64>,
    pub privileged: Option<Array2<f64>>,
    pub labels: Option<Vec<i8>>,
    pub seed: u64,
}

impl Dataset {
    /// Validating constructor; checks row counts and label values.
    pub fn new(
        features: Array2<f64>,
        privileged: Option<Array2<f64>>,
        labels: Option<Vec<i8>>,
        seed: u64,
    ) -> Result<Self> {
        if let Some(p) = &privileged {
            if p.nrows() != features.nrows() {
                return Err(Error::DimensionMismatch(p.nrows(), features.nrows()));
            }
        }
        if let Some(lab) = &labels {
            if lab.len() != features.nrows() {
                return Err(Error::DimensionMismatch(lab.len(), features.nrows()));
            }
            if lab.iter().any(|&v| v != 1 && v != -1) {
                return Err(Error::InvalidParam {
                    name: "labels",
                    value: f64::NAN,
                    reason: "labels must be +1 or -1",
                });
            }
        }
        Ok(Dataset {
            features,
            privileged,
            labels,
            seed,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of original feature columns.
    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }

    /// Row subset in the given index order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let features = Array2::from_shape_fn((indices.len(), self.features.ncols()), |(r, c)| {
            self.features[[indices[r], c]]
        });
        let privileged = self.privileged.as_ref().map(|p| {
            Array2::from_shape_fn((indices.len(), p.ncols()), |(r, c)| p[[indices[r], c]])
        });
        let labels = self
            .labels
            .as_ref()
            .map(|l| indices.iter().map(|&i| l[i]).collect());
        Dataset {
            features,
            privileged,
            labels,
            seed: self.seed,
        }
    }
}

/// Derive a per-operation RNG stream: FNV-1a over the little-endian seed
/// bytes followed by the operation tag. This is the documented splitting
/// rule used by every generator and by the CLI's step-seed derivation.
pub fn stream_seed(seed: u64, tag: &str) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut h = OFFSET;
    for b in seed.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(PRIME);
    }
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(PRIME);
    }
    h
}

fn rng_for(seed: u64, tag: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, tag))
}

/// Mixture of two Gaussians at `(2, 2)` and `(-2, -2)` with identity
/// covariance, component chosen by a fair coin per row. Privileged vector:
/// the point minus its nearest center. Per row the draws are
/// (component, x-noise, y-noise).
pub fn gen_gauss_mixture(l: usize, seed: u64) -> Result<Dataset> {
    if l == 0 {
        return Err(Error::EmptyInput("requested zero rows"));
    }
    let mut rng = rng_for(seed, "gauss-mixture");
    let normal = Normal::new(0.0, 1.0).unwrap();
    let centers = [[2.0, 2.0], [-2.0, -2.0]];
    let mut features = Array2::zeros((l, 2));
    let mut privileged = Array2::zeros((l, 2));
    for i in 0..l {
        let pick = usize::from(!rng.random_bool(0.5));
        let c = centers[pick];
        let x = c[0] + normal.sample(&mut rng);
        let y = c[1] + normal.sample(&mut rng);
        let d0 = (x - centers[0][0]).powi(2) + (y - centers[0][1]).powi(2);
        let d1 = (x - centers[1][0]).powi(2) + (y - centers[1][1]).powi(2);
        let near = if d0 <= d1 { centers[0] } else { centers[1] };
        features[[i, 0]] = x;
        features[[i, 1]] = y;
        privileged[[i, 0]] = x - near[0];
        privileged[[i, 1]] = y - near[1];
    }
    Dataset::new(features, Some(privileged), Some(vec![1; l]), seed)
}

/// Two concentric circles of base radii 5 (external) and 0.5 (internal),
/// picked by a fair coin per row. The radius is a truncated normal
/// `max(0, N(r0, 0.5))` (variance 0.5) and the angle is uniform on
/// `[0, 2*pi)`. Features are the Cartesian coordinates; privileged is the
/// polar pair `(r, phi)`. Per row the draws are (circle, radius, angle).
pub fn gen_circles(l: usize, seed: u64) -> Result<Dataset> {
    if l < 2 {
        return Err(Error::EmptyInput("circles needs at least two rows"));
    }
    let mut rng = rng_for(seed, "circles");
    let noise = Normal::new(0.0, 0.5f64.sqrt()).unwrap();
    let mut features = Array2::zeros((l, 2));
    let mut privileged = Array2::zeros((l, 2));
    for i in 0..l {
        let r0 = if rng.random_bool(0.5) { 5.0 } else { 0.5 };
        let eta: f64 = r0 + noise.sample(&mut rng);
        let r = if eta > 0.0 { eta } else { 0.0 };
        let phi = rng.random::<f64>() * std::f64::consts::TAU;
        features[[i, 0]] = r * phi.cos();
        features[[i, 1]] = r * phi.sin();
        privileged[[i, 0]] = r;
        privileged[[i, 1]] = phi;
    }
    Dataset::new(features, Some(privileged), Some(vec![1; l]), seed)
}

/// Arc of radius about 10: the angle is `N(0, 0.04)` (variance 0.04), the
/// radial offset is `eta * (0.1 - |phi|)` with `eta ~ N(-1/2, 1)`, and the
/// point is `((10 - tau) cos phi, (10 - tau) sin phi)`. Privileged is the
/// actual polar pair `(10 - tau, phi)`. Per row the draws are (angle, eta).
pub fn gen_arc(l: usize, seed: u64) -> Result<Dataset> {
    if l == 0 {
        return Err(Error::EmptyInput("requested zero rows"));
    }
    let mut rng = rng_for(seed, "arc");
    let angle = Normal::new(0.0, 0.04f64.sqrt()).unwrap();
    let eta_dist = Normal::new(-0.5, 1.0).unwrap();
    let mut features = Array2::zeros((l, 2));
    let mut privileged = Array2::zeros((l, 2));
    for i in 0..l {
        let phi: f64 = angle.sample(&mut rng);
        let eta: f64 = eta_dist.sample(&mut rng);
        let tau = eta * (0.1 - phi.abs());
        let r = 10.0 - tau;
        features[[i, 0]] = r * phi.cos();
        features[[i, 1]] = r * phi.sin();
        privileged[[i, 0]] = r;
        privileged[[i, 1]] = phi;
    }
    Dataset::new(features, Some(privileged), Some(vec![1; l]), seed)
}

/// Per-column `[min - 0.5 range, max + 0.5 range]` bounds of a matrix.
fn expanded_bounds(m: ArrayView2<'_, f64>) -> Vec<(f64, f64)> {
    (0..m.ncols())
        .map(|c| {
            let col = m.column(c);
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &v in col.iter() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
            let half = 0.5 * (hi - lo);
            (lo - half, hi + half)
        })
        .collect()
}

/// Inject uniform-box outliers into an all-normal dataset.
///
/// Adds `ceil(fraction * l / (1 - fraction))` rows sampled uniformly from
/// the expanded bounding box of the normal features (and likewise in the
/// privileged bounding box when privileged data is present), labelled `-1`,
/// then shuffles rows deterministically. Original rows are never modified.
/// Per noise row the draws are its feature coordinates then its privileged
/// coordinates, all row-major; the shuffle consumes the stream last.
pub fn add_uniform_noise(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidParam {
            name: "fraction",
            value: fraction,
            reason: "must lie strictly inside (0, 1)",
        });
    }
    match &ds.labels {
        Some(lab) if lab.iter().all(|&v| v == 1) => {}
        _ => {
            return Err(Error::InvalidParam {
                name: "labels",
                value: f64::NAN,
                reason: "noise injection expects an all-normal labelled dataset",
            })
        }
    }
    let l = ds.len();
    let count = (fraction * l as f64 / (1.0 - fraction)).ceil() as usize;
    let mut rng = rng_for(seed, "uniform-noise");

    let fb = expanded_bounds(ds.features.view());
    let pb = ds.privileged.as_ref().map(|p| expanded_bounds(p.view()));

    let n_total = l + count;
    let nf = ds.features.ncols();
    let mut features = Array2::zeros((n_total, nf));
    let mut privileged = ds
        .privileged
        .as_ref()
        .map(|p| Array2::zeros((n_total, p.ncols())));
    let mut labels = vec![1i8; n_total];

    for i in 0..l {
        for c in 0..nf {
            features[[i, c]] = ds.features[[i, c]];
        }
        if let (Some(dst), Some(src)) = (privileged.as_mut(), ds.privileged.as_ref()) {
            for c in 0..src.ncols() {
                dst[[i, c]] = src[[i, c]];
            }
        }
    }
    for i in 0..count {
        let row = l + i;
        for (c, &(lo, hi)) in fb.iter().enumerate() {
            features[[row, c]] = lo + rng.random::<f64>() * (hi - lo);
        }
        if let (Some(dst), Some(bounds)) = (privileged.as_mut(), pb.as_ref()) {
            for (c, &(lo, hi)) in bounds.iter().enumerate() {
                dst[[row, c]] = lo + rng.random::<f64>() * (hi - lo);
            }
        }
        labels[row] = -1;
    }

    let mut order: Vec<usize> = (0..n_total).collect();
    order.shuffle(&mut rng);
    let shuffled = Dataset {
        features,
        privileged,
        labels: Some(labels),
        seed,
    };
    Ok(shuffled.select(&order))
}

/// Convenience: per-column means of a matrix (used by tests and checks).
pub fn column_means(m: ArrayView2<'_, f64>) -> Array1<f64> {
    let mut out = Array1::zeros(m.ncols());
    for c in 0..m.ncols() {
        let mut acc = 0.0;
        for &v in m.column(c).iter() {
            acc += v;
        }
        out[c] = acc / m.nrows() as f64;
    }
    out
}
