//! PCA, ZCA, group and shuffled-group whitening.
//!
//! All transforms use the rows-as-samples convention `H = (Z − μ) Wᵀ`.

use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{covariance, sym_eig, Matrix};

/// Smallest admissible eigenvalue of `Σ + ridge·I`.
pub const EIGENVALUE_FLOOR: f64 = 1e-10;
/// Negative eigenvalues down to this magnitude are treated as rounding noise and clamped to zero.
pub const NEGATIVE_EIGENVALUE_CLAMP: f64 = 1e-9;
pub const DEFAULT_MOMENTUM: f64 = 0.95;
/// Default relative ridge; the absolute ridge is `eps · tr(Σ) / g`.
pub const DEFAULT_RIDGE_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WhiteningKind {
    Pca,
    Zca,
}

/// Momentum-averaged mean and covariance of a stream of batches.
#[derive(Clone, Debug, PartialEq)]
pub struct WhiteningStats {
    mean: Vec<f64>,
    cov: Matrix,
    momentum: f64,
    update_count: usize,
}

impl WhiteningStats {
    pub fn new(dim: usize, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {momentum}"
            )));
        }
        Ok(Self {
            mean: vec![0.0; dim],
            cov: Matrix::zeros(dim, dim),
            momentum,
            update_count: 0,
        })
    }

    /// Stats holding exactly the statistics of `batch`.
    pub fn from_batch(batch: &Matrix, momentum: f64) -> Result<Self> {
        let mut stats = Self::new(batch.cols(), momentum)?;
        stats.update(batch)?;
        Ok(stats)
    }

    /// Rebuilds stats from stored parts (checkpoint loading).
    pub fn from_parts(
        mean: Vec<f64>,
        cov: Matrix,
        momentum: f64,
        update_count: usize,
    ) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::Shape(format!(
                "covariance {:?} does not match mean of length {}",
                cov.shape(),
                mean.len()
            )));
        }
        let mut stats = Self::new(mean.len(), momentum)?;
        stats.mean = mean;
        stats.cov = cov;
        stats.update_count = update_count;
        Ok(stats)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    pub fn update_count(&self) -> usize {
        self.update_count
    }

    /// `μ ← βμ + (1−β)x̄`, `Σ ← βΣ + (1−β)σ`; the first update adopts the batch statistics.
    pub fn update(&mut self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.dim() {
            return Err(Error::Shape(format!(
                "batch has {} channels, stats track {}",
                batch.cols(),
                self.dim()
            )));
        }
        let batch_mean = batch.column_means();
        let batch_cov = covariance(batch, &batch_mean)?;
        if self.update_count == 0 {
            self.mean = batch_mean;
            self.cov = batch_cov;
        } else {
            let beta = self.momentum;
            for (m, x) in self.mean.iter_mut().zip(&batch_mean) {
                *m = beta * *m + (1.0 - beta) * x;
            }
            for (c, s) in self
                .cov
                .as_mut_slice()
                .iter_mut()
                .zip(batch_cov.as_slice())
            {
                *c = beta * *c + (1.0 - beta) * s;
            }
        }
        self.update_count += 1;
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct WhiteningMatrix {
    pub kind: WhiteningKind,
    pub w: Matrix,
    pub ridge: f64,
    /// Eigenvectors `U` of `Σ + ridge·I` used in the derivation, one per column.
    pub eigenvectors: Matrix,
    /// Eigenvalues of `Σ + ridge·I`, descending, after clamping.
    pub eigenvalues: Vec<f64>,
}

/// Absolute ridge `eps · tr(Σ) / dim` for a covariance.
pub fn relative_ridge(cov: &Matrix, eps: f64) -> f64 {
    if cov.rows() == 0 {
        return 0.0;
    }
    eps * cov.trace() / cov.rows() as f64
}

/// PCA: `W = Λ^{-1/2} Uᵀ`. ZCA: `W = U Λ^{-1/2} Uᵀ`, where `Σ + ridge·I = U Λ Uᵀ`.
pub fn derive_whitening(
    stats: &WhiteningStats,
    kind: WhiteningKind,
    ridge: f64,
) -> Result<WhiteningMatrix> {
    if stats.update_count == 0 {
        return Err(Error::InsufficientData(
            "whitening stats have never been updated".into(),
        ));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge must be non-negative, got {ridge}")));
    }
    let d = stats.dim();
    let mut regularized = stats.cov.clone();
    for i in 0..d {
        regularized[(i, i)] += ridge;
    }
    let eig = sym_eig(&regularized)?;
    let mut eigenvalues = eig.eigenvalues;
    for (index, lambda) in eigenvalues.iter_mut().enumerate() {
        if *lambda < 0.0 && *lambda >= -NEGATIVE_EIGENVALUE_CLAMP {
            *lambda = 0.0;
        }
        if *lambda < EIGENVALUE_FLOOR {
            return Err(Error::SingularCovariance {
                index,
                eigenvalue: *lambda,
                floor: EIGENVALUE_FLOOR,
            });
        }
    }
    let u = eig.eigenvectors;
    let inv_sqrt: Vec<f64> = eigenvalues.iter().map(|l| 1.0 / l.sqrt()).collect();
    // Λ^{-1/2} Uᵀ
    let pca = Matrix::from_fn(d, d, |i, j| inv_sqrt[i] * u[(j, i)]);
    let w = match kind {
        WhiteningKind::Pca => pca,
        WhiteningKind::Zca => {
            let zca = u.matmul(&pca)?;
            zca.symmetrized()?
        }
    };
    Ok(WhiteningMatrix {
        kind,
        w,
        ridge,
        eigenvectors: u,
        eigenvalues,
    })
}

/// `H = (Z − μ) Wᵀ`
pub fn apply_whitening(
    batch: &Matrix,
    stats: &WhiteningStats,
    w: &WhiteningMatrix,
) -> Result<Matrix> {
    if batch.cols() != stats.dim() || w.w.shape() != (stats.dim(), stats.dim()) {
        return Err(Error::Shape(format!(
            "batch with {} channels, stats of dim {}, whitening matrix {:?}",
            batch.cols(),
            stats.dim(),
            w.w.shape()
        )));
    }
    batch.center(&stats.mean)?.matmul_t(&w.w)
}

/// A channel permutation plus a group size.
///
/// Shuffled channel `j` is original channel `permutation[j]`; group `k` covers
/// shuffled channels `k·g .. (k+1)·g`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroupPlan {
    dim: usize,
    group_size: usize,
    permutation: Vec<usize>,
    inverse: Vec<usize>,
    seed: u64,
}

pub fn make_group_plan(dim: usize, group_size: usize, shuffled: bool, seed: u64) -> Result<GroupPlan> {
    if group_size == 0 || dim == 0 || !dim.is_multiple_of(group_size) {
        return Err(Error::Config(format!(
            "group size {group_size} does not divide dimension {dim}"
        )));
    }
    let mut permutation: Vec<usize> = (0..dim).collect();
    if shuffled && group_size < dim {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        permutation.shuffle(&mut rng);
    }
    GroupPlan::from_permutation(permutation, group_size, seed)
}

impl GroupPlan {
    pub fn from_permutation(permutation: Vec<usize>, group_size: usize, seed: u64) -> Result<Self> {
        let dim = permutation.len();
        if group_size == 0 || dim == 0 || !dim.is_multiple_of(group_size) {
            return Err(Error::Config(format!(
                "group size {group_size} does not divide dimension {dim}"
            )));
        }
        let mut inverse = vec![usize::MAX; dim];
        for (j, &p) in permutation.iter().enumerate() {
            if p >= dim || inverse[p] != usize::MAX {
                return Err(Error::Config("channel order is not a permutation".into()));
            }
            inverse[p] = j;
        }
        Ok(Self {
            dim,
            group_size,
            permutation,
            inverse,
            seed,
        })
    }

    pub fn identity(dim: usize, group_size: usize) -> Result<Self> {
        make_group_plan(dim, group_size, false, 0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn group_size(&self) -> usize {
        self.group_size
    }

    pub fn num_groups(&self) -> usize {
        self.dim / self.group_size
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(j, &p)| j == p)
    }

    /// Original channel indices belonging to group `k`.
    pub fn group(&self, k: usize) -> &[usize] {
        &self.permutation[k * self.group_size..(k + 1) * self.group_size]
    }

    pub fn groups(&self) -> impl Iterator<Item = &[usize]> {
        self.permutation.chunks_exact(self.group_size)
    }

    /// Reorders columns into shuffled order.
    pub fn permute(&self, batch: &Matrix) -> Matrix {
        batch.select_columns(&self.permutation)
    }

    /// Restores the original column order.
    pub fn unpermute(&self, batch: &Matrix) -> Matrix {
        batch.select_columns(&self.inverse)
    }
}

/// Per-group statistics of `batch` under `plan`.
pub fn group_batch_stats(batch: &Matrix, plan: &GroupPlan, momentum: f64) -> Result<Vec<WhiteningStats>> {
    check_plan(batch, plan)?;
    plan.groups()
        .map(|channels| WhiteningStats::from_batch(&batch.select_columns(channels), momentum))
        .collect()
}

fn check_plan(batch: &Matrix, plan: &GroupPlan) -> Result<()> {
    if batch.cols() != plan.dim() {
        return Err(Error::Shape(format!(
            "batch has {} channels, plan covers {}",
            batch.cols(),
            plan.dim()
        )));
    }
    Ok(())
}

/// A group whitening transform with frozen per-group means and matrices.
///
/// Gradients treat the means and whitening matrices as constants, so the
/// backward pass is linear in the incoming gradient.
#[derive(Clone, Debug)]
pub struct GroupWhitening {
    plan: GroupPlan,
    means: Vec<Vec<f64>>,
    matrices: Vec<WhiteningMatrix>,
}

impl GroupWhitening {
    /// Derives one whitening matrix per group; `ridge_eps` is relative to each group's mean variance.
    pub fn from_stats(
        plan: GroupPlan,
        group_stats: &[WhiteningStats],
        kind: WhiteningKind,
        ridge_eps: f64,
    ) -> Result<Self> {
        if group_stats.len() != plan.num_groups() {
            return Err(Error::Shape(format!(
                "{} group stats for a plan with {} groups",
                group_stats.len(),
                plan.num_groups()
            )));
        }
        let mut means = Vec::with_capacity(group_stats.len());
        let mut matrices = Vec::with_capacity(group_stats.len());
        for stats in group_stats {
            if stats.dim() != plan.group_size() {
                return Err(Error::Shape(format!(
                    "group stats of dim {} for group size {}",
                    stats.dim(),
                    plan.group_size()
                )));
            }
            let ridge = relative_ridge(stats.cov(), ridge_eps);
            matrices.push(derive_whitening(stats, kind, ridge)?);
            means.push(stats.mean().to_vec());
        }
        Ok(Self {
            plan,
            means,
            matrices,
        })
    }

    /// Fits on the batch's own per-group statistics.
    pub fn fit(batch: &Matrix, plan: GroupPlan, kind: WhiteningKind, ridge_eps: f64) -> Result<Self> {
        let stats = group_batch_stats(batch, &plan, 0.0)?;
        Self::from_stats(plan, &stats, kind, ridge_eps)
    }

    pub fn plan(&self) -> &GroupPlan {
        &self.plan
    }

    pub fn matrices(&self) -> &[WhiteningMatrix] {
        &self.matrices
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    /// Shuffle, whiten each group, concatenate, un-shuffle.
    pub fn apply(&self, batch: &Matrix) -> Result<Matrix> {
        check_plan(batch, &self.plan)?;
        let mut out = Matrix::zeros(batch.rows(), batch.cols());
        for (k, channels) in self.plan.groups().enumerate() {
            let block = batch.select_columns(channels).center(&self.means[k])?;
            let whitened = block.matmul_t(&self.matrices[k].w)?;
            for i in 0..batch.rows() {
                for (local, &c) in channels.iter().enumerate() {
                    out[(i, c)] = whitened[(i, local)];
                }
            }
        }
        Ok(out)
    }

    /// Gradient with respect to the input given the gradient of the output.
    pub fn backward(&self, grad_out: &Matrix) -> Result<Matrix> {
        check_plan(grad_out, &self.plan)?;
        let mut grad_in = Matrix::zeros(grad_out.rows(), grad_out.cols());
        for (k, channels) in self.plan.groups().enumerate() {
            let block = grad_out.select_columns(channels).matmul(&self.matrices[k].w)?;
            for i in 0..grad_out.rows() {
                for (local, &c) in channels.iter().enumerate() {
                    grad_in[(i, c)] = block[(i, local)];
                }
            }
        }
        Ok(grad_in)
    }

    /// The block-diagonal `d×d` matrix `W_plan` and mean `μ` in original channel
    /// coordinates, so that `apply(Z) = (Z − μ) W_planᵀ`.
    pub fn effective_transform(&self) -> (Matrix, Vec<f64>) {
        let d = self.plan.dim();
        let mut w = Matrix::zeros(d, d);
        let mut mean = vec![0.0; d];
        for (k, channels) in self.plan.groups().enumerate() {
            let wk = &self.matrices[k].w;
            for (a, &ca) in channels.iter().enumerate() {
                mean[ca] = self.means[k][a];
                for (b, &cb) in channels.iter().enumerate() {
                    w[(ca, cb)] = wk[(a, b)];
                }
            }
        }
        (w, mean)
    }
}

/// Group whitening of `batch` under `plan` with the given per-group stats.
pub fn group_whiten(
    batch: &Matrix,
    plan: &GroupPlan,
    group_stats: &[WhiteningStats],
    kind: WhiteningKind,
    ridge_eps: f64,
) -> Result<Matrix> {
    GroupWhitening::from_stats(plan.clone(), group_stats, kind, ridge_eps)?.apply(batch)
}

/// Seed of the `view`-th shuffle drawn from `base_seed`.
pub fn view_plan_seed(base_seed: u64, view: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
    rng.set_stream(view);
    rng.next_u64()
}

/// Shuffled plan for the `view`-th SGW draw.
pub fn view_plan(dim: usize, group_size: usize, base_seed: u64, view: u64) -> Result<GroupPlan> {
    make_group_plan(dim, group_size, true, view_plan_seed(base_seed, view))
}

/// `num_views` shuffled-group ZCA whitenings of one batch, each under its own
/// random plan and the batch's own statistics.
pub fn sgw_augment(
    batch: &Matrix,
    group_size: usize,
    num_views: usize,
    base_seed: u64,
    ridge_eps: f64,
) -> Result<Vec<Matrix>> {
    if num_views == 0 {
        return Err(Error::Config("at least one view is required".into()));
    }
    (0..num_views as u64)
        .map(|j| {
            let plan = view_plan(batch.cols(), group_size, base_seed, j)?;
            GroupWhitening::fit(batch, plan, WhiteningKind::Zca, ridge_eps)?.apply(batch)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn gaussian(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
    }

    fn random_psd_stats(d: usize, samples: usize, seed: u64) -> WhiteningStats {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix = gaussian(d, d, &mut rng);
        let z = gaussian(samples, d, &mut rng).matmul(&mix).unwrap();
        WhiteningStats::from_batch(&z, 0.0).unwrap()
    }

    fn max_off_identity(m: &Matrix) -> f64 {
        m.max_abs_diff(&Matrix::identity(m.rows()))
    }

    #[test]
    fn momentum_zero_tracks_latest_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = gaussian(10, 3, &mut rng);
        let b = gaussian(10, 3, &mut rng);
        let mut stats = WhiteningStats::new(3, 0.0).unwrap();
        stats.update(&a).unwrap();
        stats.update(&b).unwrap();
        let mean = b.column_means();
        assert_eq!(stats.mean(), mean.as_slice());
        assert_eq!(stats.cov(), &covariance(&b, &mean).unwrap());
        assert_eq!(stats.update_count(), 2);
    }

    #[test]
    fn identical_batch_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = gaussian(12, 4, &mut rng);
        let mut stats = WhiteningStats::new(4, 0.5).unwrap();
        stats.update(&a).unwrap();
        stats.update(&a).unwrap();
        let mean = a.column_means();
        let cov = covariance(&a, &mean).unwrap();
        for (x, y) in stats.mean().iter().zip(&mean) {
            assert!((x - y).abs() <= 1e-15);
        }
        assert!(stats.cov().max_abs_diff(&cov) <= 1e-15);
    }

    #[test]
    fn momentum_matches_unrolled_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batches: Vec<Matrix> = (0..3).map(|_| gaussian(16, 3, &mut rng)).collect();
        let beta: f64 = 0.9;
        let mut stats = WhiteningStats::new(3, beta).unwrap();
        for b in &batches {
            stats.update(b).unwrap();
        }
        // μ₃ = β²x̄₀ + β(1−β)x̄₁ + (1−β)x̄₂, entry by entry
        let weights = [beta * beta, beta * (1.0 - beta), 1.0 - beta];
        for c in 0..3 {
            let mut mean = 0.0;
            for (b, w) in batches.iter().zip(weights) {
                let m: f64 = (0..16).map(|i| b[(i, c)]).sum::<f64>() / 16.0;
                mean += w * m;
            }
            assert!((stats.mean()[c] - mean).abs() <= 1e-12);
        }
        for r in 0..3 {
            for c in 0..3 {
                let mut cov = 0.0;
                for (b, w) in batches.iter().zip(weights) {
                    let mr: f64 = (0..16).map(|i| b[(i, r)]).sum::<f64>() / 16.0;
                    let mc: f64 = (0..16).map(|i| b[(i, c)]).sum::<f64>() / 16.0;
                    let s: f64 = (0..16).map(|i| (b[(i, r)] - mr) * (b[(i, c)] - mc)).sum::<f64>() / 16.0;
                    cov += w * s;
                }
                assert!((stats.cov()[(r, c)] - cov).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn update_rejects_wrong_dimension() {
        let mut stats = WhiteningStats::new(3, 0.9).unwrap();
        assert!(matches!(stats.update(&Matrix::zeros(4, 2)), Err(Error::Shape(_))));
        assert!(WhiteningStats::new(3, 1.0).is_err());
    }

    #[test]
    fn derive_requires_an_update() {
        let stats = WhiteningStats::new(2, 0.9).unwrap();
        assert!(matches!(
            derive_whitening(&stats, WhiteningKind::Zca, 0.0),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn zca_closed_forms() {
        let white = WhiteningStats::from_parts(vec![0.0; 3], Matrix::identity(3), 0.9, 1).unwrap();
        let w = derive_whitening(&white, WhiteningKind::Zca, 0.0).unwrap();
        assert!(max_off_identity(&w.w) <= 1e-15);

        let diag = WhiteningStats::from_parts(vec![0.0; 2], Matrix::from_diag(&[4.0, 1.0]), 0.9, 1).unwrap();
        let w = derive_whitening(&diag, WhiteningKind::Zca, 0.0).unwrap();
        assert!(w.w.max_abs_diff(&Matrix::from_diag(&[0.5, 1.0])) <= 1e-15);
    }

    #[test]
    fn singular_covariance_is_reported() {
        let stats = WhiteningStats::from_parts(vec![0.0; 2], Matrix::from_diag(&[1.0, 0.0]), 0.9, 1).unwrap();
        let err = derive_whitening(&stats, WhiteningKind::Zca, 0.0).unwrap_err();
        match err {
            Error::SingularCovariance { index, eigenvalue, .. } => {
                assert_eq!(index, 1);
                assert_eq!(eigenvalue, 0.0);
            }
            other => panic!("unexpected {other:?}"),
        }
        // a ridge repairs it
        assert!(derive_whitening(&stats, WhiteningKind::Zca, 1e-3).is_ok());
    }

    #[test]
    fn random_psd_whitens_to_identity() {
        let stats = random_psd_stats(6, 200, 4);
        for kind in [WhiteningKind::Pca, WhiteningKind::Zca] {
            let w = derive_whitening(&stats, kind, 0.0).unwrap();
            let product = w.w.matmul(stats.cov()).unwrap().matmul_t(&w.w).unwrap();
            assert!(max_off_identity(&product) <= 1e-6);
        }
    }

    #[test]
    fn apply_identity_and_constant_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = gaussian(5, 3, &mut rng);
        let stats = WhiteningStats::from_parts(vec![0.0; 3], Matrix::identity(3), 0.9, 1).unwrap();
        let w = derive_whitening(&stats, WhiteningKind::Zca, 0.0).unwrap();
        assert_eq!(apply_whitening(&z, &stats, &w).unwrap(), z);

        let row = [1.5, -2.0, 0.25];
        let constant = Matrix::from_rows(&[row]).unwrap();
        let stats = WhiteningStats::from_parts(row.to_vec(), Matrix::identity(3), 0.9, 1).unwrap();
        let out = apply_whitening(&constant, &stats, &w).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_whitens_anisotropic_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = Matrix::from_fn(500, 2, |_, j| {
            let s: f64 = rng.sample(StandardNormal);
            if j == 0 { 2.0 * s } else { s }
        });
        let stats = WhiteningStats::from_batch(&z, 0.0).unwrap();
        let w = derive_whitening(&stats, WhiteningKind::Zca, 0.0).unwrap();
        let h = apply_whitening(&z, &stats, &w).unwrap();
        let cov = covariance(&h, &h.column_means()).unwrap();
        assert!(max_off_identity(&cov) <= 1e-6);
    }

    #[test]
    fn group_plan_shapes() {
        let plan = make_group_plan(8, 8, true, 99).unwrap();
        assert!(plan.is_identity());
        assert_eq!(plan.num_groups(), 1);

        let plan = make_group_plan(6, 2, false, 0).unwrap();
        let groups: Vec<&[usize]> = plan.groups().collect();
        assert_eq!(groups, vec![&[0, 1][..], &[2, 3][..], &[4, 5][..]]);

        let a = make_group_plan(768, 384, true, 7).unwrap();
        let b = make_group_plan(768, 384, true, 7).unwrap();
        assert_eq!(a, b);
        assert!(!a.is_identity());

        assert!(matches!(make_group_plan(6, 4, true, 0), Err(Error::Config(_))));
        assert!(make_group_plan(6, 0, true, 0).is_err());
    }

    #[test]
    fn single_group_equals_full_whitening() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let z = gaussian(40, 5, &mut rng);
        let plan = GroupPlan::identity(5, 5).unwrap();
        let grouped = GroupWhitening::fit(&z, plan, WhiteningKind::Zca, 0.0).unwrap().apply(&z).unwrap();
        let stats = WhiteningStats::from_batch(&z, 0.0).unwrap();
        let w = derive_whitening(&stats, WhiteningKind::Zca, 0.0).unwrap();
        let full = apply_whitening(&z, &stats, &w).unwrap();
        assert!(grouped.max_abs_diff(&full) <= 1e-12);
    }

    #[test]
    fn shuffled_and_plain_groups_are_white() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = gaussian(256, 8, &mut rng);
        for shuffled in [false, true] {
            let plan = make_group_plan(8, 4, shuffled, 21).unwrap();
            let stats = group_batch_stats(&z, &plan, 0.0).unwrap();
            let h = group_whiten(&z, &plan, &stats, WhiteningKind::Zca, 0.0).unwrap();
            for channels in plan.groups() {
                let block = h.select_columns(channels);
                let cov = covariance(&block, &block.column_means()).unwrap();
                assert!(max_off_identity(&cov) <= 1e-6);
            }
        }
    }

    #[test]
    fn backward_is_transpose_of_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let z = gaussian(20, 6, &mut rng);
        let plan = make_group_plan(6, 3, true, 4).unwrap();
        let gw = GroupWhitening::fit(&z, plan, WhiteningKind::Zca, 1e-5).unwrap();
        let g = gaussian(20, 6, &mut rng);
        let v = gaussian(20, 6, &mut rng);
        // <g, A(z + v) − A(z)> = <Aᵀg, v> for the affine map A
        let lhs: f64 = gw.apply(&z.add(&v).unwrap()).unwrap().sub(&gw.apply(&z).unwrap()).unwrap()
            .as_slice().iter().zip(g.as_slice()).map(|(a, b)| a * b).sum();
        let back = gw.backward(&g).unwrap();
        let rhs: f64 = back.as_slice().iter().zip(v.as_slice()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));

        let (w, mean) = gw.effective_transform();
        let direct = z.center(&mean).unwrap().matmul_t(&w).unwrap();
        assert!(direct.max_abs_diff(&gw.apply(&z).unwrap()) <= 1e-12);
    }

    #[test]
    fn sgw_reduces_to_full_zca_with_one_group() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = gaussian(32, 4, &mut rng);
        let views = sgw_augment(&z, 4, 1, 3, 0.0).unwrap();
        assert_eq!(views.len(), 1);
        let stats = WhiteningStats::from_batch(&z, 0.0).unwrap();
        let w = derive_whitening(&stats, WhiteningKind::Zca, 0.0).unwrap();
        assert!(views[0].max_abs_diff(&apply_whitening(&z, &stats, &w).unwrap()) <= 1e-12);
    }

    #[test]
    fn sgw_views_differ_and_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let z = gaussian(64, 16, &mut rng).matmul(&gaussian(16, 16, &mut rng)).unwrap();
        let views = sgw_augment(&z, 4, 3, 77, 0.0).unwrap();
        for a in 0..3 {
            for b in (a + 1)..3 {
                assert!(views[a].max_abs_diff(&views[b]) > 0.0);
            }
        }
        for (j, view) in views.iter().enumerate() {
            let plan = view_plan(16, 4, 77, j as u64).unwrap();
            for channels in plan.groups() {
                let block = view.select_columns(channels);
                let cov = covariance(&block, &block.column_means()).unwrap();
                assert!(max_off_identity(&cov) <= 1e-6);
            }
        }
        assert_eq!(views, sgw_augment(&z, 4, 3, 77, 0.0).unwrap());
        assert!(sgw_augment(&z, 4, 0, 77, 0.0).is_err());
    }

    #[test]
    fn rank_deficient_batch_needs_the_ridge() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let z = gaussian(4, 8, &mut rng);
        let plan = GroupPlan::identity(8, 8).unwrap();
        assert!(matches!(
            GroupWhitening::fit(&z, plan.clone(), WhiteningKind::Zca, 0.0),
            Err(Error::SingularCovariance { .. })
        ));
        let gw = GroupWhitening::fit(&z, plan, WhiteningKind::Zca, DEFAULT_RIDGE_EPS).unwrap();
        assert!(gw.apply(&z).unwrap().is_finite());
    }

    #[test]
    fn perturbation_form_of_whitening() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let raw = gaussian(50, 6, &mut rng);
        let z = raw.center(&raw.column_means()).unwrap();
        let stats = WhiteningStats::from_parts(vec![0.0; 6], covariance(&z, &[0.0; 6]).unwrap(), 0.0, 1).unwrap();
        let w = derive_whitening(&stats, WhiteningKind::Zca, 0.0).unwrap();
        let h = apply_whitening(&z, &stats, &w).unwrap();
        let delta = w.w.sub(&Matrix::identity(6)).unwrap();
        let perturbed = z.add(&z.matmul_t(&delta).unwrap()).unwrap();
        assert!(h.max_abs_diff(&perturbed) <= 1e-12);
    }

    proptest! {
        #[test]
        fn prop_shuffle_round_trip(seed in any::<u64>(), groups in 1usize..6, g in 1usize..6) {
            let d = groups * g;
            let plan = make_group_plan(d, g, true, seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let z = gaussian(3, d, &mut rng);
            prop_assert_eq!(plan.unpermute(&plan.permute(&z)), z);
            for (j, &p) in plan.permutation().iter().enumerate() {
                prop_assert_eq!(plan.inverse()[p], j);
            }
        }

        #[test]
        fn prop_pca_rotation_gives_zca(seed in any::<u64>(), d in 2usize..10) {
            let stats = random_psd_stats(d, 4 * d, seed);
            let zca = derive_whitening(&stats, WhiteningKind::Zca, 0.0).unwrap();
            let pca = derive_whitening(&stats, WhiteningKind::Pca, 0.0).unwrap();
            let rotated = pca.eigenvectors.matmul(&pca.w).unwrap();
            let scale = zca.w.max_abs().max(1.0);
            prop_assert!(rotated.max_abs_diff(&zca.w) <= 1e-9 * scale);
            prop_assert!(zca.w.max_abs_diff(&zca.w.transpose()) <= 1e-9);
        }
    }
}
